//! Evaluation metrics: per-class intersection-over-union with pixel
//! accuracy, and the standard monocular depth error suite.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("class count must be positive")]
    NoClasses,
    #[error("label maps disagree in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("depth metrics require strictly positive depths")]
    NonPositiveDepth,
}

/// Running confusion counts over `k` classes; rows are ground truth,
/// columns are predictions. Accumulates across label maps.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self, MetricError> {
        if k == 0 {
            return Err(MetricError::NoClasses);
        }
        Ok(ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        })
    }

    pub fn record(&mut self, pred: &[u8], gt: &[u8], ignore_label: u8) -> Result<(), MetricError> {
        if pred.len() != gt.len() {
            return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_label {
                continue;
            }
            debug_assert!((g as usize) < self.k && (p as usize) < self.k);
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    /// IoU per class (`None` where the union is empty), their mean over
    /// classes with nonzero union, and pixel accuracy.
    pub fn summarize(&self) -> (Vec<Option<f64>>, f64, f64) {
        let k = self.k;
        let mut per_class = Vec::with_capacity(k);
        let mut iou_sum = 0.0;
        let mut iou_n = 0usize;
        let mut correct = 0u64;
        let mut total = 0u64;
        for c in 0..k {
            let tp = self.counts[c * k + c];
            let fp: u64 = (0..k).filter(|&g| g != c).map(|g| self.counts[g * k + c]).sum();
            let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.counts[c * k + p]).sum();
            let union = tp + fp + fn_;
            if union == 0 {
                per_class.push(None);
            } else {
                let iou = tp as f64 / union as f64;
                per_class.push(Some(iou));
                iou_sum += iou;
                iou_n += 1;
            }
            correct += tp;
            total += tp + fn_;
        }
        let miou = if iou_n > 0 { iou_sum / iou_n as f64 } else { 0.0 };
        let accuracy = if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        };
        (per_class, miou, accuracy)
    }
}

/// Per-class IoU, mean IoU and accuracy of a single predicted label map
/// against ground truth. Classes with empty union are excluded from the
/// mean; pixels carrying `ignore_label` in the ground truth are skipped.
pub fn miou(
    pred: &[u8],
    gt: &[u8],
    k: usize,
    ignore_label: u8,
) -> Result<(Vec<Option<f64>>, f64, f64), MetricError> {
    let mut cm = ConfusionMatrix::new(k)?;
    cm.record(pred, gt, ignore_label)?;
    Ok(cm.summarize())
}

/// The depth error suite over paired strictly positive depth maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse_log: f64,
    pub silog: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// AbsRel, RMSELog, the scale-invariant log error
/// `mean(r^2) - mean(r)^2` with `r = log(pred) - log(gt)`, and the three
/// strict ratio accuracies `max(pred/gt, gt/pred) < 1.25^n`.
pub fn depth_metrics(pred: &[f64], gt: &[f64]) -> Result<DepthMetrics, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::LengthMismatch(0, 0));
    }
    let n = pred.len() as f64;
    let mut abs_rel = 0.0;
    let mut r_sum = 0.0;
    let mut r2_sum = 0.0;
    let mut within = [0usize; 3];
    for (&p, &g) in pred.iter().zip(gt) {
        if p <= 0.0 || g <= 0.0 {
            return Err(MetricError::NonPositiveDepth);
        }
        abs_rel += (p - g).abs() / g;
        let r = p.ln() - g.ln();
        r_sum += r;
        r2_sum += r * r;
        let ratio = (p / g).max(g / p);
        for (i, thr) in [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25].iter().enumerate() {
            if ratio < *thr {
                within[i] += 1;
            }
        }
    }
    let mean_r = r_sum / n;
    let mean_r2 = r2_sum / n;
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        rmse_log: mean_r2.sqrt(),
        silog: mean_r2 - mean_r * mean_r,
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
    })
}
