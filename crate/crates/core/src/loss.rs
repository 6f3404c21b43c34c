//! Training objectives: pixel-wise supervision, image reconstruction,
//! semantic consistency, affinity-graph feature transfer, prediction
//! transfer, and their weighted combination.
//!
//! All losses are scalar tensors on the autodiff tape, so gradients flow
//! into every differentiable input. The affinity graph is the per-node
//! cosine similarity to the 3×3 spatial neighborhood (σ = 9, replicate
//! padding at borders).

use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};

/// Epsilon added inside logarithms; keeps KL finite on sparse inputs.
pub const LOG_EPS: f64 = 1e-8;
/// Per-pixel probability sums must match 1 within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-6;
/// Neighborhood size of the affinity graph (3×3 including self).
pub const SIGMA: usize = 9;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("all pixels carry the ignore label; nothing to supervise")]
    EmptySupervision,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("probabilities at pixel {pixel} sum to {sum}, beyond tolerance")]
    NotNormalized { pixel: usize, sum: f64 },
    #[error("affinity graphs disagree: {lhs:?} vs {rhs:?} (grid h, w, sigma)")]
    GridMismatch {
        lhs: (usize, usize, usize),
        rhs: (usize, usize, usize),
    },
    #[error("neighborhood size must be {SIGMA}, got {0}")]
    UnsupportedSigma(usize),
    #[error("loss term {name} is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("lambda weights must be non-negative, got {0:?}")]
    NegativeLambda([f64; 4]),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

fn expect_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LossError::Tensor(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }));
    }
    Ok(())
}

/// Mean over non-ignored pixels of the negative log-probability of the
/// true class. `logits` is K×H×W, `labels` has one entry per pixel.
pub fn cross_entropy(logits: &Tensor, labels: &[u8], ignore_label: u8) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(LossError::Tensor(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("expected K x H x W logits, got {shape:?}"),
        }));
    }
    let classes = shape[0];
    let pixels = shape[1] * shape[2];
    if labels.len() != pixels {
        return Err(LossError::Tensor(TensorError::Invalid {
            op: "cross_entropy",
            msg: format!("{} labels for {} pixels", labels.len(), pixels),
        }));
    }
    let mut supervised = 0usize;
    for &lab in labels {
        if lab == ignore_label {
            continue;
        }
        if lab as usize >= classes {
            return Err(LossError::LabelOutOfRange { label: lab, classes });
        }
        supervised += 1;
    }
    if supervised == 0 {
        return Err(LossError::EmptySupervision);
    }
    let log_probs = logits.log_softmax(0)?;
    Ok(log_probs.nll_masked(labels, ignore_label)?)
}

/// Mean absolute difference between the translated image and its target,
/// both 1×H×W in [-1, 1].
pub fn eit_reconstruction(image: &Tensor, target: &Tensor) -> Result<Tensor> {
    expect_same_shape("eit_reconstruction", image, target)?;
    Ok(image.sub(target)?.abs().mean())
}

/// Mean over pixels of `sum_k p_k (log(p_k + eps) - log(q_k + eps))` for
/// per-pixel distributions p, q of shape K×H×W.
pub fn kl_per_pixel(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    expect_same_shape("kl_per_pixel", p, q)?;
    let shape = p.shape();
    if shape.len() != 3 {
        return Err(LossError::Tensor(TensorError::Invalid {
            op: "kl_per_pixel",
            msg: format!("expected K x H x W probabilities, got {shape:?}"),
        }));
    }
    let classes = shape[0];
    let pixels = shape[1] * shape[2];
    for t in [p, q] {
        t.with_values(|v| {
            for pix in 0..pixels {
                let sum: f64 = (0..classes).map(|k| v[k * pixels + pix]).sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(LossError::NotNormalized { pixel: pix, sum });
                }
            }
            Ok(())
        })?;
    }
    let diff = p.log_eps(LOG_EPS).sub(&q.log_eps(LOG_EPS))?;
    Ok(p.mul(&diff)?.sum().mul_scalar(1.0 / pixels as f64))
}

/// Semantic consistency for segmentation: KL between the teacher's
/// distribution on the generated image and on the real frame, in exactly
/// that argument order.
pub fn semantic_consistency(
    teacher_on_generated: &Tensor,
    teacher_on_frame: &Tensor,
) -> Result<Tensor> {
    kl_per_pixel(teacher_on_generated, teacher_on_frame)
}

/// Depth-task replacement for the consistency loss: mean absolute
/// difference of the two teacher depth maps.
pub fn semantic_consistency_depth(
    teacher_on_generated: &Tensor,
    teacher_on_frame: &Tensor,
) -> Result<Tensor> {
    expect_same_shape("semantic_consistency_depth", teacher_on_generated, teacher_on_frame)?;
    Ok(teacher_on_generated.sub(teacher_on_frame)?.abs().mean())
}

/// Per-node cosine similarities of a C'×H'×W' feature map to its σ = 9
/// spatial neighbors.
pub struct AffinityGraph {
    pub height: usize,
    pub width: usize,
    pub sigma: usize,
    /// (H'·W')×σ similarity values, on the autodiff tape.
    pub values: Tensor,
}

/// Build the affinity graph of a feature map. Only the 3×3 neighborhood
/// (σ = 9) is supported; out-of-range neighbors replicate the border node.
pub fn affinity_graph(features: &Tensor, sigma: usize) -> Result<AffinityGraph> {
    if sigma != SIGMA {
        return Err(LossError::UnsupportedSigma(sigma));
    }
    let shape = features.shape();
    if shape.len() != 3 {
        return Err(LossError::Tensor(TensorError::Invalid {
            op: "affinity_graph",
            msg: format!("expected C x H x W features, got {shape:?}"),
        }));
    }
    let (h, w) = (shape[1], shape[2]);
    Ok(AffinityGraph {
        height: h,
        width: w,
        sigma: SIGMA,
        values: features.affinity9()?,
    })
}

/// Mean squared difference between two affinity graphs over all
/// H·W·σ entries. Gradients flow into both graphs' source features unless
/// a side was detached by the caller.
pub fn feature_transfer(a: &AffinityGraph, b: &AffinityGraph) -> Result<Tensor> {
    let lhs = (a.height, a.width, a.sigma);
    let rhs = (b.height, b.width, b.sigma);
    if lhs != rhs {
        return Err(LossError::GridMismatch { lhs, rhs });
    }
    let d = a.values.sub(&b.values)?;
    Ok(d.mul(&d)?.mean())
}

/// Prediction transfer for segmentation: KL between the student's softmax
/// distribution and the teacher's distribution on the real frame.
pub fn prediction_transfer(student_logits: &Tensor, teacher_probs: &Tensor) -> Result<Tensor> {
    expect_same_shape("prediction_transfer", student_logits, teacher_probs)?;
    let student = student_logits.softmax(0)?;
    kl_per_pixel(&student, teacher_probs)
}

/// Depth-task replacement for prediction transfer: mean absolute
/// difference between student and teacher depth maps.
pub fn prediction_transfer_depth(student_depth: &Tensor, teacher_depth: &Tensor) -> Result<Tensor> {
    expect_same_shape("prediction_transfer_depth", student_depth, teacher_depth)?;
    Ok(student_depth.sub(teacher_depth)?.abs().mean())
}

/// The five loss terms of one training step, plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub eit: f64,
    pub sc: f64,
    pub fl: f64,
    pub pl: f64,
    pub total: f64,
    pub lambdas: [f64; 4],
}

impl LossBreakdown {
    pub fn zero(lambdas: [f64; 4]) -> Self {
        LossBreakdown {
            ce: 0.0,
            eit: 0.0,
            sc: 0.0,
            fl: 0.0,
            pl: 0.0,
            total: 0.0,
            lambdas,
        }
    }

    pub fn add_assign(&mut self, other: &LossBreakdown) {
        self.ce += other.ce;
        self.eit += other.eit;
        self.sc += other.sc;
        self.fl += other.fl;
        self.pl += other.pl;
        self.total += other.total;
    }

    pub fn scale(&mut self, factor: f64) {
        self.ce *= factor;
        self.eit *= factor;
        self.sc *= factor;
        self.fl *= factor;
        self.pl *= factor;
        self.total *= factor;
    }
}

/// Combine the five scalar loss terms:
/// `total = ce + l1*eit + l2*sc + l3*fl + l4*pl`.
/// Non-finite parts abort (the signal that training diverged).
pub fn total_loss(
    ce: &Tensor,
    eit: &Tensor,
    sc: &Tensor,
    fl: &Tensor,
    pl: &Tensor,
    lambdas: [f64; 4],
) -> Result<(Tensor, LossBreakdown)> {
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(LossError::NegativeLambda(lambdas));
    }
    let parts = [
        ("ce", ce.item()),
        ("eit", eit.item()),
        ("sc", sc.item()),
        ("fl", fl.item()),
        ("pl", pl.item()),
    ];
    for (name, value) in parts {
        if !value.is_finite() {
            return Err(LossError::NonFinite { name, value });
        }
    }
    let total = ce
        .add(&eit.mul_scalar(lambdas[0]))?
        .add(&sc.mul_scalar(lambdas[1]))?
        .add(&fl.mul_scalar(lambdas[2]))?
        .add(&pl.mul_scalar(lambdas[3]))?;
    let breakdown = LossBreakdown {
        ce: parts[0].1,
        eit: parts[1].1,
        sc: parts[2].1,
        fl: parts[3].1,
        pl: parts[4].1,
        total: total.item(),
        lambdas,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor, GRAD_CHECK_EPS};
    use crate::rng;
    use rand::Rng;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, "loss-test");
        let n: usize = shape.iter().product();
        (0..n).map(|_| r.gen_range(lo..hi)).collect()
    }

    #[test]
    fn cross_entropy_of_perfect_prediction_is_zero() {
        // one pixel, heavily confident correct logits
        let logits = Tensor::param(&[2, 1, 1], vec![50.0, -50.0]);
        let loss = cross_entropy(&logits, &[0], 255).unwrap();
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_two() {
        let logits = Tensor::param(&[2, 1, 1], vec![0.3, 0.3]);
        let loss = cross_entropy(&logits, &[1], 255).unwrap();
        assert!((loss.item() - LN_2).abs() < 1e-6, "got {}", loss.item());
    }

    #[test]
    fn cross_entropy_rejects_fully_ignored_maps() {
        let logits = Tensor::param(&[2, 1, 2], vec![0.0; 4]);
        assert!(matches!(
            cross_entropy(&logits, &[255, 255], 255),
            Err(LossError::EmptySupervision)
        ));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_labels() {
        let logits = Tensor::param(&[2, 1, 1], vec![0.0, 0.0]);
        assert!(matches!(
            cross_entropy(&logits, &[7], 255),
            Err(LossError::LabelOutOfRange { label: 7, classes: 2 })
        ));
    }

    #[test]
    fn reconstruction_loss_matches_hand_values() {
        let a = Tensor::param(&[1, 1, 1], vec![0.5]);
        let b = Tensor::constant(&[1, 1, 1], vec![1.0]);
        assert!((eit_reconstruction(&a, &b).unwrap().item() - 0.5).abs() < 1e-15);
        assert_eq!(eit_reconstruction(&a, &a).unwrap().item(), 0.0);
        let c = Tensor::constant(&[1, 2, 1], vec![0.0, 0.0]);
        assert!(eit_reconstruction(&a, &c).is_err());
    }

    #[test]
    fn kl_identity_is_zero_and_pinned_value_matches() {
        let p = Tensor::param(&[2, 1, 1], vec![0.3, 0.7]);
        assert!(kl_per_pixel(&p, &p).unwrap().item().abs() < 1e-10);

        let one_hot = Tensor::param(&[2, 1, 1], vec![1.0, 0.0]);
        let uniform = Tensor::constant(&[2, 1, 1], vec![0.5, 0.5]);
        let kl = kl_per_pixel(&one_hot, &uniform).unwrap().item();
        assert!((kl - LN_2).abs() < 1e-6, "got {kl}");
        // q zero where p > 0 stays finite through the epsilon
        let rev = kl_per_pixel(&uniform, &one_hot).unwrap().item();
        assert!(rev.is_finite());
        // KL is not symmetric
        assert!((kl - rev).abs() > 1e-3);
    }

    #[test]
    fn kl_rejects_unnormalized_inputs() {
        let p = Tensor::param(&[2, 1, 1], vec![0.9, 0.3]);
        let q = Tensor::constant(&[2, 1, 1], vec![0.5, 0.5]);
        assert!(matches!(
            kl_per_pixel(&p, &q),
            Err(LossError::NotNormalized { .. })
        ));
    }

    #[test]
    fn feature_transfer_pinned_value_and_symmetry() {
        // 1x1 grid: a constant single-node feature has similarity 1 to all
        // nine (clamped) neighbors
        let fa = Tensor::param(&[2, 1, 1], vec![1.0, 1.0]);
        let ga = affinity_graph(&fa, 9).unwrap();
        let gb = AffinityGraph {
            height: 1,
            width: 1,
            sigma: 9,
            values: Tensor::constant(&[1, 9], vec![0.5; 9]),
        };
        let fl = feature_transfer(&ga, &gb).unwrap().item();
        assert!((fl - 0.25).abs() < 1e-12, "got {fl}");
        let fl_rev = feature_transfer(&gb, &ga).unwrap().item();
        assert!((fl - fl_rev).abs() < 1e-15);
        assert_eq!(feature_transfer(&ga, &ga).unwrap().item(), 0.0);
    }

    #[test]
    fn feature_transfer_rejects_mismatched_grids() {
        let a = affinity_graph(&Tensor::param(&[2, 2, 2], vec![1.0; 8]), 9).unwrap();
        let b = affinity_graph(&Tensor::param(&[2, 3, 3], vec![1.0; 18]), 9).unwrap();
        assert!(matches!(
            feature_transfer(&a, &b),
            Err(LossError::GridMismatch { .. })
        ));
    }

    #[test]
    fn affinity_graph_requires_sigma_nine() {
        let f = Tensor::param(&[2, 2, 2], vec![1.0; 8]);
        assert!(matches!(
            affinity_graph(&f, 25),
            Err(LossError::UnsupportedSigma(25))
        ));
    }

    #[test]
    fn affinity_is_scale_invariant() {
        let values = random_tensor(&[3, 4, 4], 31, -1.0, 1.0);
        let f = Tensor::constant(&[3, 4, 4], values.clone());
        let scaled = Tensor::constant(&[3, 4, 4], values.iter().map(|v| v * 7.3).collect());
        let a = affinity_graph(&f, 9).unwrap().values.values();
        let b = affinity_graph(&scaled, 9).unwrap().values.values();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(x));
        }
    }

    /// Brute-force oracle: direct double loop over nodes and offsets with
    /// plain cosine arithmetic, independent of the autodiff path.
    fn affinity_oracle(features: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let node = |y: usize, x: usize| -> Vec<f64> {
            (0..c).map(|ch| features[ch * hw + y * w + x]).collect()
        };
        let mut out = vec![0.0; hw * 9];
        for y in 0..h {
            for x in 0..w {
                let fa = node(y, x);
                let na = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (j, (dy, dx)) in crate::autodiff::OFFSETS.iter().enumerate() {
                    let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let fb = node(ny, nx);
                    let nb = fb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if na < 1e-12 || nb < 1e-12 {
                        continue;
                    }
                    let dot: f64 = fa.iter().zip(&fb).map(|(a, b)| a * b).sum();
                    out[(y * w + x) * 9 + j] = dot / (na * nb);
                }
            }
        }
        out
    }

    #[test]
    fn affinity_and_transfer_match_brute_force_oracle() {
        for seed in 0..120 {
            let fa_vals = random_tensor(&[3, 4, 4], 1000 + seed, -1.5, 1.5);
            let fb_vals = random_tensor(&[3, 4, 4], 2000 + seed, -1.5, 1.5);
            let fa = Tensor::constant(&[3, 4, 4], fa_vals.clone());
            let fb = Tensor::constant(&[3, 4, 4], fb_vals.clone());
            let ga = affinity_graph(&fa, 9).unwrap();
            let gb = affinity_graph(&fb, 9).unwrap();

            let oracle_a = affinity_oracle(&fa_vals, 3, 4, 4);
            let got_a = ga.values.values();
            for (x, y) in got_a.iter().zip(&oracle_a) {
                assert!((x - y).abs() < 1e-9, "seed {seed}: {x} vs {y}");
            }

            let oracle_fl: f64 = oracle_a
                .iter()
                .zip(&affinity_oracle(&fb_vals, 3, 4, 4))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (16.0 * 9.0);
            let got_fl = feature_transfer(&ga, &gb).unwrap().item();
            assert!((got_fl - oracle_fl).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn prediction_transfer_identity_and_pinned_value() {
        let logits = Tensor::param(&[2, 1, 1], vec![3.0, -1.0]);
        let teacher = logits.softmax(0).unwrap().detach();
        assert!(prediction_transfer(&logits, &teacher).unwrap().item() < 1e-10);

        let hard = Tensor::param(&[2, 1, 1], vec![60.0, -60.0]);
        let uniform = Tensor::constant(&[2, 1, 1], vec![0.5, 0.5]);
        let pl = prediction_transfer(&hard, &uniform).unwrap().item();
        assert!((pl - LN_2).abs() < 1e-6, "got {pl}");

        let wrong_k = Tensor::constant(&[3, 1, 1], vec![0.4, 0.3, 0.3]);
        assert!(prediction_transfer(&hard, &wrong_k).is_err());
    }

    #[test]
    fn depth_variants_are_absolute_differences() {
        let a = Tensor::param(&[1, 1, 2], vec![1.0, 3.0]);
        let b = Tensor::constant(&[1, 1, 2], vec![2.0, 1.0]);
        assert!((prediction_transfer_depth(&a, &b).unwrap().item() - 1.5).abs() < 1e-15);
        assert_eq!(semantic_consistency_depth(&a, &a).unwrap().item(), 0.0);
    }

    #[test]
    fn total_loss_weighted_sum_and_invariant() {
        let one = Tensor::scalar(1.0);
        let (total, b) =
            total_loss(&one, &one, &one, &one, &one, [1.0, 1.0, 0.1, 1.0]).unwrap();
        assert!((total.item() - 4.1).abs() < 1e-12);
        let recomputed = b.ce + b.lambdas[0] * b.eit + b.lambdas[1] * b.sc
            + b.lambdas[2] * b.fl
            + b.lambdas[3] * b.pl;
        assert!((b.total - recomputed).abs() < 1e-12);

        let zero = Tensor::scalar(0.0);
        let (t0, _) = total_loss(&zero, &zero, &zero, &zero, &zero, [1.0, 1.0, 0.1, 1.0]).unwrap();
        assert_eq!(t0.item(), 0.0);

        let ce = Tensor::scalar(0.7);
        let (t_ce, _) = total_loss(&ce, &one, &one, &one, &one, [0.0; 4]).unwrap();
        assert!((t_ce.item() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn total_loss_rejects_non_finite_parts() {
        let one = Tensor::scalar(1.0);
        let bad = Tensor::scalar(f64::NAN);
        assert!(matches!(
            total_loss(&one, &bad, &one, &one, &one, [1.0; 4]),
            Err(LossError::NonFinite { name: "eit", .. })
        ));
    }

    #[test]
    fn losses_are_non_negative_on_random_inputs() {
        for seed in 0..30 {
            let logits = Tensor::param(&[3, 2, 2], random_tensor(&[3, 2, 2], 400 + seed, -2.0, 2.0));
            let labels = [0u8, 1, 2, 1];
            assert!(cross_entropy(&logits, &labels, 255).unwrap().item() >= 0.0);

            let img = Tensor::param(&[1, 2, 2], random_tensor(&[1, 2, 2], 500 + seed, -1.0, 1.0));
            let tgt =
                Tensor::constant(&[1, 2, 2], random_tensor(&[1, 2, 2], 600 + seed, -1.0, 1.0));
            assert!(eit_reconstruction(&img, &tgt).unwrap().item() >= 0.0);

            let p = logits.softmax(0).unwrap();
            let q = Tensor::param(&[3, 2, 2], random_tensor(&[3, 2, 2], 700 + seed, -2.0, 2.0))
                .softmax(0)
                .unwrap();
            assert!(kl_per_pixel(&p, &q).unwrap().item() >= 0.0);

            let fa = Tensor::param(&[2, 2, 2], random_tensor(&[2, 2, 2], 800 + seed, -1.0, 1.0));
            let fb = Tensor::param(&[2, 2, 2], random_tensor(&[2, 2, 2], 900 + seed, -1.0, 1.0));
            let ga = affinity_graph(&fa, 9).unwrap();
            let gb = affinity_graph(&fb, 9).unwrap();
            assert!(feature_transfer(&ga, &gb).unwrap().item() >= 0.0);
        }
    }

    #[test]
    fn every_loss_passes_grad_check() {
        for seed in 0..20 {
            // cross entropy on logits
            let logits =
                Tensor::param(&[3, 2, 2], random_tensor(&[3, 2, 2], 50 + seed, -1.5, 1.5));
            let err = grad_check(
                |inp| {
                    cross_entropy(&inp[0], &[0, 2, 1, 0], 255).map_err(|e| match e {
                        LossError::Tensor(t) => t,
                        other => TensorError::Invalid {
                            op: "loss",
                            msg: other.to_string(),
                        },
                    })
                },
                &[logits],
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(err < 1e-4, "ce seed {seed}: {err}");

            // reconstruction (resample away from abs kinks)
            let mut attempt = 0;
            loop {
                let img = Tensor::param(
                    &[1, 2, 2],
                    random_tensor(&[1, 2, 2], 150 + seed + 1000 * attempt, -0.9, 0.9),
                );
                let tgt = Tensor::constant(
                    &[1, 2, 2],
                    random_tensor(&[1, 2, 2], 250 + seed, -0.9, 0.9),
                );
                let probe = eit_reconstruction(&img, &tgt).unwrap();
                if probe.kink_margin() <= 10.0 * GRAD_CHECK_EPS {
                    attempt += 1;
                    continue;
                }
                let err = grad_check(
                    |inp| {
                        eit_reconstruction(&inp[0], &tgt).map_err(|e| TensorError::Invalid {
                            op: "loss",
                            msg: e.to_string(),
                        })
                    },
                    &[img],
                    GRAD_CHECK_EPS,
                )
                .unwrap();
                assert!(err < 1e-4, "eit seed {seed}: {err}");
                break;
            }

            // kl through both softmaxed arguments
            let lp = Tensor::param(&[2, 2, 2], random_tensor(&[2, 2, 2], 350 + seed, -1.0, 1.0));
            let lq = Tensor::param(&[2, 2, 2], random_tensor(&[2, 2, 2], 450 + seed, -1.0, 1.0));
            let err = grad_check(
                |inp| {
                    let p = inp[0].softmax(0)?;
                    let q = inp[1].softmax(0)?;
                    kl_per_pixel(&p, &q).map_err(|e| TensorError::Invalid {
                        op: "loss",
                        msg: e.to_string(),
                    })
                },
                &[lp, lq],
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(err < 1e-4, "kl seed {seed}: {err}");

            // feature transfer through both feature maps
            let fa = Tensor::param(&[2, 2, 3], random_tensor(&[2, 2, 3], 550 + seed, -1.5, 1.5));
            let fb = Tensor::param(&[2, 2, 3], random_tensor(&[2, 2, 3], 650 + seed, -1.5, 1.5));
            let err = grad_check(
                |inp| {
                    let ga = affinity_graph(&inp[0], 9).map_err(loss_to_tensor)?;
                    let gb = affinity_graph(&inp[1], 9).map_err(loss_to_tensor)?;
                    feature_transfer(&ga, &gb).map_err(loss_to_tensor)
                },
                &[fa, fb],
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(err < 1e-4, "fl seed {seed}: {err}");

            // prediction transfer through the student logits
            let sl = Tensor::param(&[3, 2, 2], random_tensor(&[3, 2, 2], 750 + seed, -1.0, 1.0));
            let tq = Tensor::constant(&[3, 2, 2], random_tensor(&[3, 2, 2], 850 + seed, -1.0, 1.0));
            let tq_probs = tq.softmax(0).unwrap().detach();
            let err = grad_check(
                |inp| prediction_transfer(&inp[0], &tq_probs).map_err(loss_to_tensor),
                &[sl],
                GRAD_CHECK_EPS,
            )
            .unwrap();
            assert!(err < 1e-4, "pl seed {seed}: {err}");
        }
    }

    fn loss_to_tensor(e: LossError) -> TensorError {
        match e {
            LossError::Tensor(t) => t,
            other => TensorError::Invalid {
                op: "loss",
                msg: other.to_string(),
            },
        }
    }
}
