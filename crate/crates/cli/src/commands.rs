//! Implementations of the CLI subcommands.

use std::io::BufRead;
use std::path::Path;
use std::time::Instant;

use dtl_core::autodiff::{no_grad, Tensor};
use dtl_core::event::parse_events;
use dtl_core::model::{
    eel_decoder_forward, encoder_forward, eit_decoder_forward, student_manifest,
    teacher_manifest, Task,
};
use dtl_core::repr::embed;
use dtl_core::sim::{make_dataset, simulate_events, DatasetSample, SceneSpec, NUM_CLASSES};
use dtl_core::train::{
    evaluate, load_checkpoint, run_ablation, save_checkpoint, subsample, train_dtl,
    train_teacher, AblationOptions, EvalReport, TrainConfig,
};

use crate::config::{
    load_scene_file, load_train_file, scene_config_lines, train_config_lines, TrainFile,
};
use crate::data::{load_dataset, write_dataset};
use crate::error::{CliError, Result};
use crate::gradcheck;
use crate::manifest::Manifest;
use crate::pgm;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn head_channels(task: Task) -> usize {
    match task {
        Task::Segmentation => NUM_CLASSES,
        Task::Depth => 1,
    }
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let file = load_scene_file(config, seed)?;
    ensure_dir(out)?;
    let spec = SceneSpec::generate(file.scene.clone());
    let stream = simulate_events(&spec);
    let samples = make_dataset(&spec, file.window);
    write_dataset(out, &stream, &samples)?;

    let mut manifest = Manifest::new("simulate", file.scene.seed);
    manifest.extend(scene_config_lines(&file));
    manifest.push("samples", samples.len());
    manifest.push("events", stream.events.len());
    manifest.push("label_frame", "window_end");
    manifest.push("events_file", "events.txt");
    manifest.write(out, start.elapsed().as_secs_f64())?;
    println!(
        "simulated {} events over {} windows into {}",
        stream.events.len(),
        samples.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_embed(events: &Path, config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, seed)?;
    ensure_dir(out)?;

    // the events header carries the sensor geometry
    let reader = std::io::BufReader::new(
        std::fs::File::open(events).map_err(|e| CliError::io(format!("{}: {e}", events.display())))?,
    );
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config("events file is empty"))??;
    let dims: Vec<usize> = header
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(CliError::config(format!("bad events header {header:?}")));
    }
    let (w, h) = (dims[0], dims[1]);
    let reader = std::io::BufReader::new(
        std::fs::File::open(events).map_err(|e| CliError::io(format!("{}: {e}", events.display())))?,
    );
    let stream = parse_events(reader, w, h)?;

    let t_end = stream.events.last().map(|e| e.t).unwrap_or(0.0);
    let count = (t_end / file.train.window).floor() as usize + 1;
    let mut payload: Vec<u8> = Vec::new();
    payload.extend_from_slice(b"DTLTENS1");
    payload.extend_from_slice(&(count as u64).to_le_bytes());
    for k in 0..count {
        let window =
            dtl_core::event::window_events(&stream, k as f64 * file.train.window, file.train.window);
        let tensor = embed(file.train.representation, &window, file.train.bins, h, w)
            .map_err(|e| CliError::config(e.to_string()))?;
        for dim in [tensor.channels, tensor.height, tensor.width] {
            payload.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in &tensor.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(out.join("tensors.bin"), payload)?;

    let mut manifest = Manifest::new("embed", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push("input_events", events.display());
    manifest.push("windows", count);
    manifest.push("tensor_file", "tensors.bin");
    manifest.write(out, start.elapsed().as_secs_f64())?;
    println!("embedded {count} windows into {}", out.join("tensors.bin").display());
    Ok(())
}

fn split_train_eval(
    samples: &[DatasetSample],
    file: &TrainFile,
) -> (Vec<DatasetSample>, Vec<DatasetSample>) {
    // hold out every fifth window for evaluation
    let train: Vec<DatasetSample> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 != 0)
        .map(|(_, s)| s.clone())
        .collect();
    let test: Vec<DatasetSample> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 == 0)
        .map(|(_, s)| s.clone())
        .collect();
    (
        subsample(&train, file.train_samples),
        subsample(&test, file.test_samples),
    )
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    let mut table = String::new();
    let mut machine = String::new();
    match report.task {
        Task::Segmentation => {
            table.push_str(&format!(
                "miou {:.4}\naccuracy {:.4}\n",
                report.outcome.miou.unwrap_or(0.0),
                report.outcome.accuracy.unwrap_or(0.0)
            ));
            machine.push_str("metric,value\n");
            machine.push_str(&format!("miou,{:.6}\n", report.outcome.miou.unwrap_or(0.0)));
            machine.push_str(&format!(
                "accuracy,{:.6}\n",
                report.outcome.accuracy.unwrap_or(0.0)
            ));
            for (k, iou) in report.outcome.per_class_iou.iter().enumerate() {
                if let Some(v) = iou {
                    table.push_str(&format!("iou class {k}: {v:.4}\n"));
                    machine.push_str(&format!("iou_class_{k},{v:.6}\n"));
                }
            }
        }
        Task::Depth => {
            let d = report.outcome.depth.as_ref().expect("depth metrics");
            table.push_str(&format!(
                "abs_rel {:.4}\nrmse_log {:.4}\nsilog {:.4}\ndelta1 {:.4}\ndelta2 {:.4}\ndelta3 {:.4}\n",
                d.abs_rel, d.rmse_log, d.silog, d.delta1, d.delta2, d.delta3
            ));
            machine.push_str("metric,value\n");
            for (name, v) in [
                ("abs_rel", d.abs_rel),
                ("rmse_log", d.rmse_log),
                ("silog", d.silog),
                ("delta1", d.delta1),
                ("delta2", d.delta2),
                ("delta3", d.delta3),
            ] {
                machine.push_str(&format!("{name},{v:.6}\n"));
            }
        }
    }
    table.push_str("epoch,ce,eit,sc,fl,pl,total\n");
    for (i, b) in report.loss_curve.iter().enumerate() {
        table.push_str(&format!(
            "{i},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            b.ce, b.eit, b.sc, b.fl, b.pl, b.total
        ));
    }
    std::fs::write(out.join("report.txt"), table)?;
    std::fs::write(out.join("metrics.csv"), machine)?;
    Ok(())
}

pub fn cmd_train_teacher(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, seed)?;
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let frames = subsample(&dataset.samples, file.teacher_samples);
    let teacher_config = TrainConfig {
        epochs: file.teacher_epochs,
        learning_rate: file.teacher_learning_rate,
        batch_size: file.teacher_batch_size,
        ..file.train.clone()
    };
    let (teacher, score) = train_teacher(&teacher_config, &frames)?;
    save_checkpoint(&teacher, &out.join("teacher.ckpt"))?;

    let mut manifest = Manifest::new("train-teacher", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push("data_dir", data.display());
    manifest.push("checkpoint", "teacher.ckpt");
    manifest.push("heldout_score", format!("{score:.6}"));
    manifest.write(out, start.elapsed().as_secs_f64())?;
    println!("teacher held-out score {score:.4}; checkpoint at {}", out.join("teacher.ckpt").display());
    Ok(())
}

pub fn cmd_train(
    config: &Path,
    data: &Path,
    teacher_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, seed)?;
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    if (dataset.window - file.train.window).abs() > 1e-9 {
        return Err(CliError::config(format!(
            "config window {} does not match dataset window {}",
            file.train.window, dataset.window
        )));
    }
    let (train_data, test_data) = split_train_eval(&dataset.samples, &file);

    let teacher = match teacher_path {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::missing(format!(
                    "teacher checkpoint {} does not exist",
                    path.display()
                )));
            }
            Some(load_checkpoint(
                path,
                &teacher_manifest(head_channels(file.train.task)),
                false,
            )?)
        }
        None => None,
    };
    if file.train.arm.needs_teacher() && teacher.is_none() {
        return Err(CliError::missing(format!(
            "arm {} requires --teacher",
            file.train.arm.name()
        )));
    }

    let (params, report) = train_dtl(&file.train, &train_data, &test_data, teacher.as_ref())?;
    save_checkpoint(&params, &out.join("student.ckpt"))?;
    write_report(out, &report)?;

    let c_in = file.train.representation.channels(file.train.bins);
    std::fs::write(
        out.join("architecture.txt"),
        student_manifest(c_in, head_channels(file.train.task)).lines(),
    )?;

    let mut manifest = Manifest::new("train", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push("data_dir", data.display());
    if let Some(t) = teacher_path {
        manifest.push("teacher", t.display());
    }
    manifest.push("checkpoint", "student.ckpt");
    if let Some(m) = report.outcome.miou {
        manifest.push("miou", format!("{m:.6}"));
    }
    if let Some(d) = &report.outcome.depth {
        manifest.push("abs_rel", format!("{:.6}", d.abs_rel));
    }
    manifest.write(out, start.elapsed().as_secs_f64())?;
    println!("trained {} arm; outputs in {}", file.train.arm.name(), out.display());
    Ok(())
}

pub fn cmd_eval(
    config: &Path,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, seed)?;
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let samples = subsample(&dataset.samples, file.test_samples);
    let c_in = file.train.representation.channels(file.train.bins);
    let params = load_checkpoint(
        checkpoint,
        &student_manifest(c_in, head_channels(file.train.task)),
        false,
    )?;
    let outcome = evaluate(&params, &file.train, &samples)?;
    let report = EvalReport {
        task: file.train.task,
        outcome,
        loss_curve: Vec::new(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: file.train.seed,
    };
    write_report(out, &report)?;

    let mut manifest = Manifest::new("eval", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push("data_dir", data.display());
    manifest.push("checkpoint", checkpoint.display());
    if let Some(m) = report.outcome.miou {
        manifest.push("miou", format!("{m:.6}"));
    }
    manifest.write(out, start.elapsed().as_secs_f64())?;
    match (report.outcome.miou, &report.outcome.depth) {
        (Some(m), _) => println!("miou {m:.4}"),
        (None, Some(d)) => println!("abs_rel {:.4}", d.abs_rel),
        _ => {}
    }
    Ok(())
}

pub fn cmd_ablate(config: &Path, seeds: &[u64], out: &Path) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, None)?;
    ensure_dir(out)?;
    if seeds.len() < 3 {
        return Err(CliError::config("ablation requires at least 3 seeds"));
    }
    let options = AblationOptions {
        train_samples: file.train_samples,
        test_samples: file.test_samples,
        teacher_epochs: file.teacher_epochs,
        teacher_lr: file.teacher_learning_rate,
        teacher_batch: file.teacher_batch_size,
    };
    let table = run_ablation(&file.train, seeds, &options)?;
    std::fs::write(out.join("ablation.csv"), table.to_csv())?;
    std::fs::write(out.join("ablation_means.csv"), table.means_csv())?;

    let mut manifest = Manifest::new("ablate", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push(
        "seeds",
        seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
    );
    manifest.push("table", "ablation.csv");
    manifest.push("means", "ablation_means.csv");
    manifest.write(out, start.elapsed().as_secs_f64())?;
    print!("{}", table.means_csv());
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, inject_fault: Option<&str>) -> Result<()> {
    if let Some(op) = inject_fault {
        if op != "tanh" {
            return Err(CliError::config(format!(
                "only the tanh fault fixture is available, got {op:?}"
            )));
        }
        dtl_core::autodiff::fault::set_broken_tanh(true);
    }
    let results = gradcheck::run_suite(seed)
        .map_err(|e| CliError::config(format!("gradient suite could not run: {e}")))?;
    dtl_core::autodiff::fault::set_broken_tanh(false);
    let mut failed = Vec::new();
    for item in &results {
        let ok = item.max_rel_err <= gradcheck::TOLERANCE;
        println!(
            "{:<36} max relative error {:.3e}  {}",
            item.name,
            item.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(item.name);
        }
    }
    if failed.is_empty() {
        println!("gradient suite passed ({} items)", results.len());
        Ok(())
    } else {
        Err(CliError::check(format!(
            "gradient suite failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn cmd_dump(
    config: &Path,
    checkpoint: &Path,
    data: &Path,
    sample_index: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let start = Instant::now();
    let file = load_train_file(config, seed)?;
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let sample = dataset.samples.get(sample_index).ok_or_else(|| {
        CliError::config(format!(
            "sample {sample_index} out of range ({} available)",
            dataset.samples.len()
        ))
    })?;
    let c_in = file.train.representation.channels(file.train.bins);
    let params = load_checkpoint(
        checkpoint,
        &student_manifest(c_in, head_channels(file.train.task)),
        false,
    )?;

    let (h, w) = (dataset.height, dataset.width);
    let tensor = embed(file.train.representation, &sample.window, file.train.bins, h, w)
        .map_err(|e| CliError::config(e.to_string()))?;

    let (eel_pen, eit_pen, image, prediction) = no_grad(|| -> Result<_> {
        let input = Tensor::constant(&[c_in, h, w], tensor.data.clone());
        let latent = encoder_forward(&params, &input)
            .map_err(|e| CliError::config(e.to_string()))?;
        let eel = eel_decoder_forward(&params, &latent, file.train.task)
            .map_err(|e| CliError::config(e.to_string()))?;
        let eit = eit_decoder_forward(&params, &eel.penultimate)
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok((
            eel.penultimate.values(),
            eit.penultimate.values(),
            eit.image.values(),
            eel.prediction.values(),
        ))
    })?;

    let mut manifest = Manifest::new("dump", file.train.seed);
    manifest.extend(train_config_lines(&file));
    manifest.push("checkpoint", checkpoint.display());
    manifest.push("data_dir", data.display());
    manifest.push("sample", sample_index);

    // channel-mean feature maps at quarter resolution, min-max scaled
    let (hq, wq) = (h / 4, w / 4);
    for (name, values) in [("eel_penultimate", &eel_pen), ("eit_penultimate", &eit_pen)] {
        let channels = values.len() / (hq * wq);
        let mut mean = vec![0.0f64; hq * wq];
        for c in 0..channels {
            for (m, v) in mean.iter_mut().zip(&values[c * hq * wq..(c + 1) * hq * wq]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= channels as f64;
        }
        let (data, lo, hi) = pgm::scale_to_u16(&mean);
        pgm::write_pgm16(&out.join(format!("{name}.pgm")), wq, hq, &data)?;
        manifest.push(format!("{name}_min"), format!("{lo:.9e}"));
        manifest.push(format!("{name}_max"), format!("{hi:.9e}"));
    }

    let (img_data, lo, hi) = pgm::scale_to_u16(&image);
    pgm::write_pgm16(&out.join("translated.pgm"), w, h, &img_data)?;
    manifest.push("translated_min", format!("{lo:.9e}"));
    manifest.push("translated_max", format!("{hi:.9e}"));

    match file.train.task {
        Task::Segmentation => {
            let pixels = h * w;
            let labels: Vec<u8> = (0..pixels)
                .map(|pix| {
                    let mut best = 0u8;
                    let mut best_v = prediction[pix];
                    for k in 1..NUM_CLASSES {
                        let v = prediction[k * pixels + pix];
                        if v > best_v {
                            best_v = v;
                            best = k as u8;
                        }
                    }
                    best
                })
                .collect();
            pgm::write_pgm8(&out.join("prediction.pgm"), w, h, &labels)?;
        }
        Task::Depth => {
            let depth: Vec<u16> = prediction.iter().map(|&v| pgm::depth_to_u16(v)).collect();
            pgm::write_pgm16(&out.join("prediction.pgm"), w, h, &depth)?;
        }
    }
    manifest.write(out, start.elapsed().as_secs_f64())?;
    println!("dumped features, translation and prediction for sample {sample_index} into {}", out.display());
    Ok(())
}

pub fn exit_code(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code as i32
        }
    }
}
