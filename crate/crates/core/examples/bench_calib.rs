// temporary calibration probe; removed before release
use std::time::Instant;

use dtl_core::sim::make_dataset;
use dtl_core::train::{
    default_scene_pair, subsample, train_dtl, train_teacher, Arm, TrainConfig,
};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("ce");
    let lr: f64 = arg(&args, 2, 0.1);
    let epochs: usize = arg(&args, 3, 2);
    let batch: usize = arg(&args, 4, 4);
    let train_n: usize = arg(&args, 5, 128);
    let teacher_epochs: usize = arg(&args, 6, 4);
    let teacher_lr: f64 = arg(&args, 7, 0.15);
    let teacher_n: usize = arg(&args, 8, 128);
    let seed: u64 = arg(&args, 9, 0);

    let (train_scene, test_scene) = default_scene_pair(seed);
    let train_full = make_dataset(&train_scene, 0.05);
    let test_full = make_dataset(&test_scene, 0.05);
    let train = subsample(&train_full, Some(train_n));
    let test = subsample(&test_full, Some(48));
    let teacher_train = subsample(&train_full, Some(teacher_n));

    match mode {
        "ce" => {
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                arm: Arm::Ce,
                seed,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            match train_dtl(&cfg, &train, &test, None) {
                Ok((_, report)) => {
                    println!(
                        "ce lr={lr} epochs={epochs} batch={batch} n={train_n}: miou {:.3} acc {:.3} per-class {:?} ({:.0} s)",
                        report.outcome.miou.unwrap(),
                        report.outcome.accuracy.unwrap(),
                        report
                            .outcome
                            .per_class_iou
                            .iter()
                            .map(|o| o.map(|v| (v * 1e3).round() / 1e3))
                            .collect::<Vec<_>>(),
                        t.elapsed().as_secs_f64()
                    )
                }
                Err(e) => println!("ce lr={lr}: FAILED {e}"),
            }
        }
        "teacher" => {
            let cfg = TrainConfig {
                epochs: teacher_epochs,
                learning_rate: teacher_lr,
                batch_size: batch,
                seed,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let (_, score) = train_teacher(&cfg, &teacher_train).unwrap();
            println!(
                "teacher lr={teacher_lr} epochs={teacher_epochs} batch={batch} n={teacher_n}: heldout miou {score:.3} ({:.0} s)",
                t.elapsed().as_secs_f64()
            );
        }
        "arms" => {
            let teacher_cfg = TrainConfig {
                epochs: teacher_epochs,
                learning_rate: teacher_lr,
                batch_size: 8,
                seed,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let (teacher, score) = train_teacher(&teacher_cfg, &teacher_train).unwrap();
            println!(
                "teacher heldout miou {score:.3} ({:.0} s)",
                t.elapsed().as_secs_f64()
            );
            for arm in Arm::ALL {
                let cfg = TrainConfig {
                    epochs,
                    batch_size: batch,
                    learning_rate: lr,
                    arm,
                    seed,
                    ..TrainConfig::default()
                };
                let t = Instant::now();
                let teacher_ref = arm.needs_teacher().then_some(&teacher);
                match train_dtl(&cfg, &train, &test, teacher_ref) {
                    Ok((_, report)) => println!(
                        "{:<10}: miou {:.3} acc {:.3} ({:.0} s)",
                        arm.name(),
                        report.outcome.miou.unwrap(),
                        report.outcome.accuracy.unwrap(),
                        t.elapsed().as_secs_f64()
                    ),
                    Err(e) => println!("{:<10}: FAILED {e}", arm.name()),
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
