//! Elementwise, reduction and structured differentiable operations.

use super::{Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                pa.accumulate_grad(g);
                pb.accumulate_grad(g);
            }),
            f64::INFINITY,
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                pa.accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                pb.accumulate_grad(&neg);
            }),
            f64::INFINITY,
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let values = self.with_values(|a| {
            other.with_values(|b| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
        });
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let ga: Vec<f64> =
                    pb.with_values(|b| g.iter().zip(b).map(|(gi, bi)| gi * bi).collect());
                let gb: Vec<f64> =
                    pa.with_values(|a| g.iter().zip(a).map(|(gi, ai)| gi * ai).collect());
                pa.accumulate_grad(&ga);
                pb.accumulate_grad(&gb);
            }),
            f64::INFINITY,
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| x + c).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| p.accumulate_grad(g)),
            f64::INFINITY,
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| x * c).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| {
                let gp: Vec<f64> = g.iter().map(|v| v * c).collect();
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        )
    }

    pub fn sum(&self) -> Tensor {
        let total = self.with_values(|a| a.iter().sum());
        let p = self.clone();
        let n = self.len();
        Tensor::new_op(
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |_, g| p.accumulate_grad(&vec![g[0]; n])),
            f64::INFINITY,
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len();
        assert!(n > 0, "mean of an empty tensor");
        let total: f64 = self.with_values(|a| a.iter().sum());
        let p = self.clone();
        Tensor::new_op(
            Vec::new(),
            vec![total / n as f64],
            vec![self.clone()],
            Box::new(move |_, g| p.accumulate_grad(&vec![g[0] / n as f64; n])),
            f64::INFINITY,
        )
    }

    /// Rectifier with subgradient 0 at the kink.
    pub fn relu(&self) -> Tensor {
        let mut margin = f64::INFINITY;
        let values = self.with_values(|a| {
            a.iter()
                .map(|&x| {
                    margin = margin.min(x.abs());
                    if x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<_>>()
        });
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| {
                let gp: Vec<f64> = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect()
                });
                p.accumulate_grad(&gp);
            }),
            margin,
        )
    }

    pub fn tanh(&self) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| x.tanh()).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |inner, g| {
                // test fixture: a deliberately wrong derivative scale
                let scale = if super::fault::tanh_broken() { 1.05 } else { 1.0 };
                let out = inner.values.borrow();
                let gp: Vec<f64> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(gi, y)| gi * (1.0 - y * y) * scale)
                    .collect();
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        )
    }

    /// `ln(1 + e^x)`, numerically stable; strictly positive.
    pub fn softplus(&self) -> Tensor {
        let values = self.with_values(|a| {
            a.iter()
                .map(|&x| {
                    if x > 30.0 {
                        x
                    } else if x < -30.0 {
                        x.exp()
                    } else {
                        x.exp().ln_1p()
                    }
                })
                .collect::<Vec<_>>()
        });
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| {
                let gp: Vec<f64> = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, &x)| gi / (1.0 + (-x).exp()))
                        .collect()
                });
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        )
    }

    /// |x| with subgradient 0 at the kink.
    pub fn abs(&self) -> Tensor {
        let mut margin = f64::INFINITY;
        let values = self.with_values(|a| {
            a.iter()
                .map(|&x| {
                    margin = margin.min(x.abs());
                    x.abs()
                })
                .collect::<Vec<_>>()
        });
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| {
                let gp: Vec<f64> = p.with_values(|a| {
                    g.iter()
                        .zip(a)
                        .map(|(gi, &x)| {
                            if x > 0.0 {
                                *gi
                            } else if x < 0.0 {
                                -*gi
                            } else {
                                0.0
                            }
                        })
                        .collect()
                });
                p.accumulate_grad(&gp);
            }),
            margin,
        )
    }

    /// `ln(x + eps)`; keeps logs finite on sparse inputs.
    pub fn log_eps(&self, eps: f64) -> Tensor {
        let values = self.with_values(|a| a.iter().map(|x| (x + eps).ln()).collect::<Vec<_>>());
        let p = self.clone();
        Tensor::new_op(
            self.shape().to_vec(),
            values,
            vec![self.clone()],
            Box::new(move |_, g| {
                let gp: Vec<f64> = p.with_values(|a| {
                    g.iter().zip(a).map(|(gi, &x)| gi / (x + eps)).collect()
                });
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        )
    }

    /// Softmax along `axis` with max-subtraction; every slice sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        softmax_impl(self, axis, false)
    }

    /// Log-softmax along `axis`, numerically stable.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        softmax_impl(self, axis, true)
    }

    /// Mean of `-log_probs[label, pixel]` over non-ignored pixels.
    ///
    /// `log_probs` has shape `[K, N...]` flattened to `K x P`; `labels` has
    /// one entry per pixel. Callers validate labels; entries equal to
    /// `ignore` are skipped (the caller guarantees at least one remains).
    pub fn nll_masked(&self, labels: &[u8], ignore: u8) -> Result<Tensor> {
        if self.shape().is_empty() {
            return Err(TensorError::Invalid {
                op: "nll_masked",
                msg: "log-probability tensor must have a class axis".into(),
            });
        }
        let k = self.shape()[0];
        let pixels = self.len() / k;
        if labels.len() != pixels {
            return Err(TensorError::Invalid {
                op: "nll_masked",
                msg: format!("{} labels for {} pixels", labels.len(), pixels),
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        self.with_values(|v| {
            for (pix, &lab) in labels.iter().enumerate() {
                if lab == ignore {
                    continue;
                }
                total -= v[lab as usize * pixels + pix];
                count += 1;
            }
        });
        if count == 0 {
            return Err(TensorError::Invalid {
                op: "nll_masked",
                msg: "no supervised pixels".into(),
            });
        }
        let p = self.clone();
        let labels = labels.to_vec();
        Ok(Tensor::new_op(
            Vec::new(),
            vec![total / count as f64],
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gp = vec![0.0; p.len()];
                let scale = -g[0] / count as f64;
                for (pix, &lab) in labels.iter().enumerate() {
                    if lab != ignore {
                        gp[lab as usize * pixels + pix] = scale;
                    }
                }
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        ))
    }

    /// Same data under a different shape; gradients pass through.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let p = self.clone();
        Ok(Tensor::new_op(
            shape.to_vec(),
            self.values(),
            vec![self.clone()],
            Box::new(move |_, g| p.accumulate_grad(g)),
            f64::INFINITY,
        ))
    }

    /// Cosine similarity of every spatial node of a C×H×W feature map to
    /// its 9 neighbors (3×3 offsets, row-major, replicate padding at the
    /// borders). Output shape `[H*W, 9]`. Nodes with norm below `1e-12`
    /// produce zero similarity and zero gradient.
    pub fn affinity9(&self) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Invalid {
                op: "affinity9",
                msg: format!("expected C x H x W features, got {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let hw = h * w;
        const NORM_EPS: f64 = 1e-12;

        let mut norms = vec![0.0f64; hw];
        self.with_values(|v| {
            for ch in 0..c {
                let plane = &v[ch * hw..(ch + 1) * hw];
                for (n, &x) in norms.iter_mut().zip(plane) {
                    *n += x * x;
                }
            }
        });
        for n in &mut norms {
            *n = n.sqrt();
        }

        let neighbor = move |y: usize, x: usize, dy: isize, dx: isize| -> usize {
            let ny = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let nx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            ny * w + nx
        };

        let mut values = vec![0.0f64; hw * 9];
        self.with_values(|v| {
            for y in 0..h {
                for x in 0..w {
                    let a = y * w + x;
                    if norms[a] < NORM_EPS {
                        continue;
                    }
                    for (j, (dy, dx)) in OFFSETS.iter().enumerate() {
                        let b = neighbor(y, x, *dy, *dx);
                        if norms[b] < NORM_EPS {
                            continue;
                        }
                        let mut dot = 0.0;
                        for ch in 0..c {
                            dot += v[ch * hw + a] * v[ch * hw + b];
                        }
                        values[a * 9 + j] = dot / (norms[a] * norms[b]);
                    }
                }
            }
        });

        let p = self.clone();
        Ok(Tensor::new_op(
            vec![hw, 9],
            values,
            vec![self.clone()],
            Box::new(move |inner, g| {
                let sims = inner.values.borrow();
                let mut gp = vec![0.0; c * hw];
                p.with_values(|v| {
                    for y in 0..h {
                        for x in 0..w {
                            let a = y * w + x;
                            if norms[a] < NORM_EPS {
                                continue;
                            }
                            for (j, (dy, dx)) in OFFSETS.iter().enumerate() {
                                let gi = g[a * 9 + j];
                                if gi == 0.0 {
                                    continue;
                                }
                                let b = neighbor(y, x, *dy, *dx);
                                if norms[b] < NORM_EPS {
                                    continue;
                                }
                                let s = sims[a * 9 + j];
                                let inv_ab = 1.0 / (norms[a] * norms[b]);
                                let inv_a2 = 1.0 / (norms[a] * norms[a]);
                                let inv_b2 = 1.0 / (norms[b] * norms[b]);
                                for ch in 0..c {
                                    let fa = v[ch * hw + a];
                                    let fb = v[ch * hw + b];
                                    gp[ch * hw + a] += gi * (fb * inv_ab - s * fa * inv_a2);
                                    gp[ch * hw + b] += gi * (fa * inv_ab - s * fb * inv_b2);
                                }
                            }
                        }
                    }
                });
                p.accumulate_grad(&gp);
            }),
            f64::INFINITY,
        ))
    }
}

/// 3×3 neighbor offsets in row-major order; index 4 is the node itself.
pub const OFFSETS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn softmax_impl(t: &Tensor, axis: usize, log: bool) -> Result<Tensor> {
    let shape = t.shape().to_vec();
    if axis >= shape.len() {
        return Err(TensorError::Invalid {
            op: "softmax",
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();

    let mut values = vec![0.0f64; t.len()];
    t.with_values(|v| {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..axis_len {
                    max = max.max(v[base + k * inner]);
                }
                let mut denom = 0.0;
                for k in 0..axis_len {
                    denom += (v[base + k * inner] - max).exp();
                }
                let log_denom = denom.ln();
                for k in 0..axis_len {
                    let shifted = v[base + k * inner] - max;
                    values[base + k * inner] = if log {
                        shifted - log_denom
                    } else {
                        (shifted - log_denom).exp()
                    };
                }
            }
        }
    });

    let p = t.clone();
    let bw: super::BackwardFn = if log {
        Box::new(move |inner_node: &super::Inner, g: &[f64]| {
            let out = inner_node.values.borrow();
            let mut gp = vec![0.0; out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let mut gsum = 0.0;
                    for k in 0..axis_len {
                        gsum += g[base + k * inner];
                    }
                    for k in 0..axis_len {
                        let idx = base + k * inner;
                        gp[idx] = g[idx] - out[idx].exp() * gsum;
                    }
                }
            }
            p.accumulate_grad(&gp);
        })
    } else {
        Box::new(move |inner_node: &super::Inner, g: &[f64]| {
            let out = inner_node.values.borrow();
            let mut gp = vec![0.0; out.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let mut dot = 0.0;
                    for k in 0..axis_len {
                        let idx = base + k * inner;
                        dot += g[idx] * out[idx];
                    }
                    for k in 0..axis_len {
                        let idx = base + k * inner;
                        gp[idx] = out[idx] * (g[idx] - dot);
                    }
                }
            }
            p.accumulate_grad(&gp);
        })
    };

    Ok(Tensor::new_op(shape, values, vec![t.clone()], bw, f64::INFINITY))
}
