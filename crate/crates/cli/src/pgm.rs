//! Minimal binary PGM (P5) reader/writer, 8- and 16-bit. 16-bit samples
//! are big-endian per the Netpbm convention. Output bytes are a pure
//! function of the pixel data, which the reproducibility contract relies
//! on.

use std::io::Read;
use std::path::Path;

use crate::error::{CliError, Result};

pub fn write_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let mut out = Vec::with_capacity(data.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(data);
    std::fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let mut out = Vec::with_capacity(data.len() * 2 + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n65535\n").as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub enum Pgm {
    Eight { width: usize, height: usize, data: Vec<u8> },
    Sixteen { width: usize, height: usize, data: Vec<u16> },
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut cursor = std::io::Cursor::new(&bytes);
    let mut header = Vec::new();
    let mut fields = Vec::new();
    // header: magic, width, height, maxval separated by whitespace, then a
    // single whitespace byte before the raster
    let mut byte = [0u8; 1];
    let mut current = String::new();
    while fields.len() < 4 {
        cursor
            .read_exact(&mut byte)
            .map_err(|_| CliError::config(format!("{}: truncated header", path.display())))?;
        header.push(byte[0]);
        if byte[0].is_ascii_whitespace() {
            if !current.is_empty() {
                fields.push(std::mem::take(&mut current));
            }
        } else if byte[0] == b'#' {
            // comment until end of line
            loop {
                cursor.read_exact(&mut byte).map_err(|_| {
                    CliError::config(format!("{}: truncated comment", path.display()))
                })?;
                if byte[0] == b'\n' {
                    break;
                }
            }
        } else {
            current.push(byte[0] as char);
        }
    }
    if fields[0] != "P5" {
        return Err(CliError::config(format!(
            "{}: expected binary PGM (P5)",
            path.display()
        )));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| CliError::config(format!("{}: bad header field {s:?}", path.display())))
    };
    let width = parse(&fields[1])?;
    let height = parse(&fields[2])?;
    let maxval = parse(&fields[3])?;
    let raster = &bytes[cursor.position() as usize..];
    let n = width * height;
    if maxval <= 255 {
        if raster.len() != n {
            return Err(CliError::config(format!(
                "{}: raster length {} != {}",
                path.display(),
                raster.len(),
                n
            )));
        }
        Ok(Pgm::Eight {
            width,
            height,
            data: raster.to_vec(),
        })
    } else {
        if raster.len() != 2 * n {
            return Err(CliError::config(format!(
                "{}: raster length {} != {}",
                path.display(),
                raster.len(),
                2 * n
            )));
        }
        let data = raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Ok(Pgm::Sixteen {
            width,
            height,
            data,
        })
    }
}

/// Map [-1, 1] intensity to the full 16-bit range.
pub fn intensity_to_u16(v: f64) -> u16 {
    (((v + 1.0) / 2.0).clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn u16_to_intensity(v: u16) -> f64 {
    2.0 * (f64::from(v) / 65535.0) - 1.0
}

/// Depth in meters to millimeters (16-bit ceiling at ~65.5 m).
pub fn depth_to_u16(v: f64) -> u16 {
    (v * 1000.0).round().clamp(0.0, 65535.0) as u16
}

pub fn u16_to_depth(v: u16) -> f64 {
    f64::from(v) / 1000.0
}

/// Min-max scale arbitrary values into 16 bits, returning the recorded
/// (min, max) so the mapping can be inverted.
pub fn scale_to_u16(values: &[f64]) -> (Vec<u16>, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 0.0;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    (data, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm16_round_trip() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("dtl-pgm-{}.pgm", std::process::id()));
        let data: Vec<u16> = (0..12).map(|i| i * 5000).collect();
        write_pgm16(&path, 4, 3, &data).unwrap();
        match read_pgm(&path).unwrap() {
            Pgm::Sixteen {
                width,
                height,
                data: back,
            } => {
                assert_eq!((width, height), (4, 3));
                assert_eq!(back, data);
            }
            _ => panic!("expected 16-bit"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn intensity_mapping_is_monotone_and_bounded() {
        assert_eq!(intensity_to_u16(-1.0), 0);
        assert_eq!(intensity_to_u16(1.0), 65535);
        let v = u16_to_intensity(intensity_to_u16(0.25));
        assert!((v - 0.25).abs() < 1e-4);
    }
}
