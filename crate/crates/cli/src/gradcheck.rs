//! The randomized gradient suite: every differentiable layer, every loss,
//! and the end-to-end combined objective through encoder and both
//! decoders, each verified against central differences at randomized
//! small shapes.

use dtl_core::autodiff::{grad_check, Result as AdResult, Tensor, TensorError, UpsampleMode};
use dtl_core::loss;
use dtl_core::model::{
    eel_decoder_forward, encoder_forward, eit_decoder_forward, init_params, student_manifest,
    teacher_forward, teacher_manifest, ModelParams, Task,
};
use dtl_core::rng;
use rand::Rng;

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random_values(shape: &[usize], seed: u64, name: &str, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, name);
    let n: usize = shape.iter().product();
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn param(shape: &[usize], seed: u64, name: &str) -> Tensor {
    Tensor::param(shape, random_values(shape, seed, name, -1.5, 1.5))
}

fn loss_err(e: loss::LossError) -> TensorError {
    match e {
        loss::LossError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "loss",
            msg: other.to_string(),
        },
    }
}

fn model_err(e: dtl_core::model::ModelError) -> TensorError {
    match e {
        dtl_core::model::ModelError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "model",
            msg: other.to_string(),
        },
    }
}

/// Run `grad_check` at a sampled point, resampling (by advancing the
/// sub-seed) while the graph evaluates within 10·eps of a relu/abs kink.
fn checked<F>(seed: u64, mut build: impl FnMut(u64) -> AdResult<(Vec<Tensor>, F)>) -> AdResult<f64>
where
    F: Fn(&[Tensor]) -> AdResult<Tensor>,
{
    for attempt in 0..200 {
        let (inputs, f) = build(seed.wrapping_add(1_000_003 * attempt))?;
        let probe = f(&inputs)?;
        if probe.kink_margin() <= 10.0 * EPS {
            continue;
        }
        return grad_check(f, &inputs, EPS);
    }
    Err(TensorError::Invalid {
        op: "gradcheck",
        msg: "could not sample a point away from kinks".into(),
    })
}

type Item = (&'static str, fn(u64) -> AdResult<f64>);

fn elementwise_binary(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[2, 3], s, "a");
        let b = param(&[2, 3], s, "b");
        Ok((vec![a, b], |inp: &[Tensor]| {
            let mix = inp[0].mul(&inp[1])?.add(&inp[0].sub(&inp[1])?)?;
            Ok(mix.mul_scalar(0.7).add_scalar(0.1).mean())
        }))
    })
}

fn reductions(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[3, 4], s, "a");
        Ok((vec![a], |inp: &[Tensor]| {
            inp[0].sum().add(&inp[0].mean())
        }))
    })
}

fn relu_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[3, 3], s, "relu");
        Ok((vec![a], |inp: &[Tensor]| Ok(inp[0].relu().sum())))
    })
}

fn abs_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[3, 3], s, "abs");
        Ok((vec![a], |inp: &[Tensor]| Ok(inp[0].abs().mean())))
    })
}

fn tanh_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[7], s, "tanh");
        Ok((vec![a], |inp: &[Tensor]| Ok(inp[0].tanh().sum())))
    })
}

fn softplus_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[7], s, "softplus");
        Ok((vec![a], |inp: &[Tensor]| Ok(inp[0].softplus().sum())))
    })
}

fn log_eps_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = Tensor::param(&[6], random_values(&[6], s, "logeps", 0.05, 2.0));
        Ok((vec![a], |inp: &[Tensor]| {
            Ok(inp[0].log_eps(loss::LOG_EPS).mean())
        }))
    })
}

fn softmax_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[3, 2, 2], s, "softmax");
        let w = param(&[3, 2, 2], s.wrapping_add(1), "softmax-w");
        Ok((vec![a, w], |inp: &[Tensor]| {
            Ok(inp[0].softmax(0)?.mul(&inp[1])?.sum())
        }))
    })
}

fn log_softmax_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = param(&[4, 3], s, "logsoftmax");
        let w = param(&[4, 3], s.wrapping_add(1), "logsoftmax-w");
        Ok((vec![a, w], |inp: &[Tensor]| {
            Ok(inp[0].log_softmax(0)?.mul(&inp[1])?.mean())
        }))
    })
}

fn conv_s1(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[2, 5, 4], s, "conv-x");
        let k = param(&[3, 2, 3, 3], s, "conv-k");
        let b = param(&[3], s, "conv-b");
        Ok((vec![x, k, b], |inp: &[Tensor]| {
            Ok(inp[0].conv2d(&inp[1], &inp[2], 1, 1)?.sum())
        }))
    })
}

fn conv_s2(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[2, 6, 6], s, "conv2-x");
        let k = param(&[2, 2, 3, 3], s, "conv2-k");
        let b = param(&[2], s, "conv2-b");
        Ok((vec![x, k, b], |inp: &[Tensor]| {
            let y = inp[0].conv2d(&inp[1], &inp[2], 2, 1)?;
            Ok(y.mul(&y)?.mean())
        }))
    })
}

fn conv_1x1(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[3, 4, 4], s, "conv1x1-x");
        let k = param(&[2, 3, 1, 1], s, "conv1x1-k");
        let b = param(&[2], s, "conv1x1-b");
        Ok((vec![x, k, b], |inp: &[Tensor]| {
            Ok(inp[0].conv2d(&inp[1], &inp[2], 1, 0)?.sum())
        }))
    })
}

fn upsample_nearest(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[2, 3, 3], s, "up-n");
        let w = param(&[2, 6, 6], s.wrapping_add(1), "up-n-w");
        Ok((vec![x, w], |inp: &[Tensor]| {
            Ok(inp[0].upsample2x(UpsampleMode::Nearest)?.mul(&inp[1])?.sum())
        }))
    })
}

fn upsample_bilinear(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[2, 3, 3], s, "up-b");
        let w = param(&[2, 6, 6], s.wrapping_add(1), "up-b-w");
        Ok((vec![x, w], |inp: &[Tensor]| {
            Ok(inp[0].upsample2x(UpsampleMode::Bilinear)?.mul(&inp[1])?.sum())
        }))
    })
}

fn affinity_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[3, 2, 3], s, "affinity");
        let w = param(&[6, 9], s.wrapping_add(1), "affinity-w");
        Ok((vec![x, w], |inp: &[Tensor]| {
            Ok(inp[0].affinity9()?.mul(&inp[1])?.sum())
        }))
    })
}

fn nll_op(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let x = param(&[3, 2, 2], s, "nll");
        Ok((vec![x], |inp: &[Tensor]| {
            inp[0].log_softmax(0)?.nll_masked(&[0, 2, 255, 1], 255)
        }))
    })
}

fn loss_cross_entropy(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let logits = param(&[4, 2, 2], s, "ce");
        Ok((vec![logits], |inp: &[Tensor]| {
            loss::cross_entropy(&inp[0], &[0, 3, 1, 2], 255).map_err(loss_err)
        }))
    })
}

fn loss_reconstruction(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let img = Tensor::param(&[1, 3, 3], random_values(&[1, 3, 3], s, "rec-a", -0.9, 0.9));
        let tgt = Tensor::param(&[1, 3, 3], random_values(&[1, 3, 3], s, "rec-b", -0.9, 0.9));
        Ok((vec![img, tgt], |inp: &[Tensor]| {
            loss::eit_reconstruction(&inp[0], &inp[1]).map_err(loss_err)
        }))
    })
}

fn loss_kl(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let lp = param(&[3, 2, 2], s, "kl-p");
        let lq = param(&[3, 2, 2], s.wrapping_add(1), "kl-q");
        Ok((vec![lp, lq], |inp: &[Tensor]| {
            let p = inp[0].softmax(0)?;
            let q = inp[1].softmax(0)?;
            loss::kl_per_pixel(&p, &q).map_err(loss_err)
        }))
    })
}

fn loss_semantic_consistency(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let lp = param(&[3, 2, 2], s, "sc-p");
        let lq = param(&[3, 2, 2], s.wrapping_add(1), "sc-q");
        Ok((vec![lp, lq], |inp: &[Tensor]| {
            let p = inp[0].softmax(0)?;
            let q = inp[1].softmax(0)?;
            loss::semantic_consistency(&p, &q).map_err(loss_err)
        }))
    })
}

fn loss_feature_transfer(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let fa = param(&[2, 2, 3], s, "fl-a");
        let fb = param(&[2, 2, 3], s.wrapping_add(1), "fl-b");
        Ok((vec![fa, fb], |inp: &[Tensor]| {
            let ga = loss::affinity_graph(&inp[0], loss::SIGMA).map_err(loss_err)?;
            let gb = loss::affinity_graph(&inp[1], loss::SIGMA).map_err(loss_err)?;
            loss::feature_transfer(&ga, &gb).map_err(loss_err)
        }))
    })
}

fn loss_prediction_transfer(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let logits = param(&[3, 2, 2], s, "pl");
        let teacher = param(&[3, 2, 2], s.wrapping_add(1), "pl-t")
            .softmax(0)?
            .detach();
        Ok((vec![logits], move |inp: &[Tensor]| {
            loss::prediction_transfer(&inp[0], &teacher).map_err(loss_err)
        }))
    })
}

fn loss_depth_transfers(seed: u64) -> AdResult<f64> {
    checked(seed, |s| {
        let a = Tensor::param(&[1, 2, 2], random_values(&[1, 2, 2], s, "dl-a", 0.5, 3.0));
        let b = Tensor::param(&[1, 2, 2], random_values(&[1, 2, 2], s, "dl-b", 0.5, 3.0));
        Ok((vec![a, b], |inp: &[Tensor]| {
            let pl = loss::prediction_transfer_depth(&inp[0], &inp[1]).map_err(loss_err)?;
            let sc = loss::semantic_consistency_depth(&inp[0], &inp[1]).map_err(loss_err)?;
            pl.add(&sc)
        }))
    })
}

/// The combined objective through encoder, both decoders and the frozen
/// teacher on an 8×8 input, probed at the input tensor and the first conv
/// bias so every backward path is exercised.
fn end_to_end(seed: u64, task: Task) -> AdResult<f64> {
    let classes = match task {
        Task::Segmentation => 3,
        Task::Depth => 1,
    };
    checked(seed, move |s| {
        let student = init_params(&student_manifest(2, classes), s);
        let teacher = init_params(&teacher_manifest(classes), s.wrapping_add(7)).frozen_clone();
        let input = Tensor::param(&[2, 8, 8], random_values(&[2, 8, 8], s, "e2e-x", 0.0, 1.0));
        let bias = student.get("encoder.conv1.bias").map_err(model_err)?.clone();
        let aps = Tensor::constant(&[1, 8, 8], random_values(&[1, 8, 8], s, "e2e-aps", -0.9, 0.9));
        let labels: Vec<u8> = {
            let mut r = rng::stream(s, "e2e-labels");
            (0..64).map(|_| r.gen_range(0..classes as u8)).collect()
        };
        let log_depth =
            Tensor::constant(&[1, 8, 8], random_values(&[1, 8, 8], s, "e2e-d", 0.2, 1.2));

        let f = move |inp: &[Tensor]| -> AdResult<Tensor> {
            let mut params = ModelParams::new();
            for (path, t) in student.iter() {
                if path == "encoder.conv1.bias" {
                    params.insert(path.clone(), inp[1].clone());
                } else {
                    params.insert(path.clone(), t.clone());
                }
            }
            let latent = encoder_forward(&params, &inp[0]).map_err(model_err)?;
            let eel = eel_decoder_forward(&params, &latent, task).map_err(model_err)?;
            let eit = eit_decoder_forward(&params, &eel.penultimate).map_err(model_err)?;

            let ce = match task {
                Task::Segmentation => {
                    loss::cross_entropy(&eel.prediction, &labels, 255).map_err(loss_err)?
                }
                Task::Depth => eel
                    .prediction
                    .log_eps(loss::LOG_EPS)
                    .sub(&log_depth)?
                    .abs()
                    .mean(),
            };
            let eit_loss = loss::eit_reconstruction(&eit.image, &aps).map_err(loss_err)?;
            let on_generated = teacher_forward(&teacher, &eit.image, task).map_err(model_err)?;
            let on_frame = teacher_forward(&teacher, &aps, task).map_err(model_err)?.detach();
            let sc = match task {
                Task::Segmentation => {
                    loss::semantic_consistency(&on_generated, &on_frame).map_err(loss_err)?
                }
                Task::Depth => loss::semantic_consistency_depth(&on_generated, &on_frame)
                    .map_err(loss_err)?,
            };
            let ga = loss::affinity_graph(&eit.penultimate, loss::SIGMA).map_err(loss_err)?;
            let gb = loss::affinity_graph(&eel.penultimate, loss::SIGMA).map_err(loss_err)?;
            let fl = loss::feature_transfer(&ga, &gb).map_err(loss_err)?;
            let pl = match task {
                Task::Segmentation => {
                    loss::prediction_transfer(&eel.prediction, &on_frame).map_err(loss_err)?
                }
                Task::Depth => loss::prediction_transfer_depth(&eel.prediction, &on_frame)
                    .map_err(loss_err)?,
            };
            let (total, _) = loss::total_loss(&ce, &eit_loss, &sc, &fl, &pl, [1.0, 1.0, 0.1, 1.0])
                .map_err(loss_err)?;
            Ok(total)
        };
        Ok((vec![input, bias], f))
    })
}

fn e2e_segmentation(seed: u64) -> AdResult<f64> {
    end_to_end(seed, Task::Segmentation)
}

fn e2e_depth(seed: u64) -> AdResult<f64> {
    end_to_end(seed, Task::Depth)
}

const LAYER_SEEDS: u64 = 20;
const E2E_SEEDS: u64 = 3;

pub struct ItemResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Run the whole suite. Returns per-item worst errors over the seed set.
pub fn run_suite(seed: u64) -> Result<Vec<ItemResult>, TensorError> {
    let layer_items: &[Item] = &[
        ("add/sub/mul/scalar", elementwise_binary),
        ("sum/mean", reductions),
        ("relu", relu_op),
        ("abs", abs_op),
        ("tanh", tanh_op),
        ("softplus", softplus_op),
        ("log_eps", log_eps_op),
        ("softmax", softmax_op),
        ("log_softmax", log_softmax_op),
        ("conv2d stride 1", conv_s1),
        ("conv2d stride 2", conv_s2),
        ("conv2d 1x1", conv_1x1),
        ("upsample2x nearest", upsample_nearest),
        ("upsample2x bilinear", upsample_bilinear),
        ("affinity graph", affinity_op),
        ("nll gather", nll_op),
        ("loss cross_entropy", loss_cross_entropy),
        ("loss eit_reconstruction", loss_reconstruction),
        ("loss kl_per_pixel", loss_kl),
        ("loss semantic_consistency", loss_semantic_consistency),
        ("loss feature_transfer", loss_feature_transfer),
        ("loss prediction_transfer", loss_prediction_transfer),
        ("loss depth transfers", loss_depth_transfers),
    ];
    let e2e_items: &[Item] = &[
        ("end-to-end segmentation objective", e2e_segmentation),
        ("end-to-end depth objective", e2e_depth),
    ];

    let mut results = Vec::new();
    for (name, f) in layer_items {
        let mut worst: f64 = 0.0;
        for k in 0..LAYER_SEEDS {
            worst = worst.max(f(rng::sub_seed(seed, name).wrapping_add(k))?);
        }
        results.push(ItemResult {
            name,
            max_rel_err: worst,
        });
    }
    for (name, f) in e2e_items {
        let mut worst: f64 = 0.0;
        for k in 0..E2E_SEEDS {
            worst = worst.max(f(rng::sub_seed(seed, name).wrapping_add(k))?);
        }
        results.push(ItemResult {
            name,
            max_rel_err: worst,
        });
    }
    Ok(results)
}
