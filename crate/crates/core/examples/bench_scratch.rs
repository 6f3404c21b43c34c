// temporary throughput probe; removed before release
use std::time::Instant;

use dtl_core::sim::{make_dataset, SceneConfig, SceneSpec};
use dtl_core::train::{train_dtl, train_teacher, Arm, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let scene = SceneSpec::generate(SceneConfig {
        seed: 11,
        duration: 2.0,
        ..SceneConfig::default()
    });
    let data = make_dataset(&scene, 0.05);
    println!(
        "scene+dataset (2 s, 40 windows): {:.2} s, events/window ~ {}",
        t0.elapsed().as_secs_f64(),
        data.iter().map(|s| s.window.events.len()).sum::<usize>() / data.len()
    );

    let teacher_cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let (teacher, score) = train_teacher(&teacher_cfg, &data).unwrap();
    println!(
        "teacher 1 epoch x {} samples: {:.2} s (heldout {score:.3})",
        data.len() * 4 / 5,
        t1.elapsed().as_secs_f64()
    );

    for arm in [Arm::Ce, Arm::CeEit, Arm::Full] {
        let cfg = TrainConfig {
            epochs: 1,
            arm,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let t2 = Instant::now();
        let teacher_ref = arm.needs_teacher().then_some(&teacher);
        let (_, report) = train_dtl(&cfg, &data, &data[..8], teacher_ref).unwrap();
        let dt = t2.elapsed().as_secs_f64();
        println!(
            "{}: 1 epoch x {} samples = {:.2} s ({:.1} ms/sample), eval miou {:.3}",
            arm.name(),
            data.len(),
            dt,
            1e3 * dt / data.len() as f64,
            report.outcome.miou.unwrap()
        );
    }
}
