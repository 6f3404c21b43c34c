//! On-disk dataset layout produced by `simulate` and consumed by the
//! training commands:
//!
//! ```text
//! out/
//!   manifest.txt
//!   events.txt                          canonical event text format
//!   frames/sample_000000.intensity.pgm  16-bit, [-1, 1] mapped linearly
//!   frames/sample_000000.labels.pgm     8-bit class ids
//!   frames/sample_000000.depth.pgm      16-bit millimeters
//! ```
//!
//! Frames are rendered at each window's end time; the manifest records the
//! window length and sample count, and notes the label-frame alignment.

use std::path::Path;

use dtl_core::event::{parse_events, window_events, write_events, EventStream};
use dtl_core::sim::{DatasetSample, FrameTriple};

use crate::error::{CliError, Result};
use crate::manifest::{manifest_value, read_manifest};
use crate::pgm;

pub fn write_dataset(dir: &Path, stream: &EventStream, samples: &[DatasetSample]) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", frames_dir.display())))?;

    let mut events_file = std::io::BufWriter::new(
        std::fs::File::create(dir.join("events.txt"))
            .map_err(|e| CliError::io(e.to_string()))?,
    );
    write_events(stream, &mut events_file)?;
    drop(events_file);

    let (w, h) = (stream.sensor_width, stream.sensor_height);
    for (idx, sample) in samples.iter().enumerate() {
        let base = frames_dir.join(format!("sample_{idx:06}"));
        let intensity: Vec<u16> = sample
            .frame
            .intensity
            .iter()
            .map(|&v| pgm::intensity_to_u16(v))
            .collect();
        pgm::write_pgm16(&base.with_extension("intensity.pgm"), w, h, &intensity)?;
        pgm::write_pgm8(&base.with_extension("labels.pgm"), w, h, &sample.frame.labels)?;
        let depth: Vec<u16> = sample.frame.depth.iter().map(|&v| pgm::depth_to_u16(v)).collect();
        pgm::write_pgm16(&base.with_extension("depth.pgm"), w, h, &depth)?;
    }
    Ok(())
}

pub struct LoadedDataset {
    pub samples: Vec<DatasetSample>,
    pub window: f64,
    pub width: usize,
    pub height: usize,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = read_manifest(dir)?;
    let width: usize = manifest_value(&manifest, "width")?;
    let height: usize = manifest_value(&manifest, "height")?;
    let window: f64 = manifest_value(&manifest, "window")?;
    let count: usize = manifest_value(&manifest, "samples")?;

    let events_path = dir.join("events.txt");
    let file = std::fs::File::open(&events_path)
        .map_err(|e| CliError::io(format!("{}: {e}", events_path.display())))?;
    let stream = parse_events(std::io::BufReader::new(file), width, height)?;

    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let base = dir.join("frames").join(format!("sample_{idx:06}"));
        let intensity = match pgm::read_pgm(&base.with_extension("intensity.pgm"))? {
            pgm::Pgm::Sixteen { width: w, height: h, data } if (w, h) == (width, height) => {
                data.into_iter().map(pgm::u16_to_intensity).collect()
            }
            _ => return Err(CliError::config("intensity frames must be 16-bit at dataset geometry")),
        };
        let labels = match pgm::read_pgm(&base.with_extension("labels.pgm"))? {
            pgm::Pgm::Eight { width: w, height: h, data } if (w, h) == (width, height) => data,
            _ => return Err(CliError::config("label frames must be 8-bit at dataset geometry")),
        };
        let depth = match pgm::read_pgm(&base.with_extension("depth.pgm"))? {
            pgm::Pgm::Sixteen { width: w, height: h, data } if (w, h) == (width, height) => {
                data.into_iter().map(pgm::u16_to_depth).collect()
            }
            _ => return Err(CliError::config("depth frames must be 16-bit at dataset geometry")),
        };
        let t_start = idx as f64 * window;
        samples.push(DatasetSample {
            window: window_events(&stream, t_start, window),
            frame: FrameTriple {
                intensity,
                labels,
                depth,
                timestamp: t_start + window,
            },
        });
    }
    Ok(LoadedDataset {
        samples,
        window,
        width,
        height,
    })
}
