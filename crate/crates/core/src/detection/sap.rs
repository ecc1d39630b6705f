//! Structural average precision over confidence-ranked segment predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Segment2D, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SapConfig {
    /// Squared endpoint-distance thresholds, ascending.
    pub thresholds: Vec<f64>,
    /// Resolution `(height, width)` both segment sets are rescaled to.
    pub eval_resolution: (usize, usize),
}

impl Default for SapConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![5.0, 10.0, 15.0],
            eval_resolution: (128, 128),
        }
    }
}

impl SapConfig {
    fn validate(&self) -> Result<()> {
        let ascending = self.thresholds.windows(2).all(|w| w[0] < w[1]);
        if self.thresholds.is_empty() || !ascending || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "sAP thresholds must be positive and ascending: {:?}",
                self.thresholds
            )));
        }
        if self.eval_resolution.0 == 0 || self.eval_resolution.1 == 0 {
            return Err(Error::InvalidInput("empty sAP evaluation resolution".into()));
        }
        Ok(())
    }
}

fn structural_distance(a: &[Vec2; 2], b: &[Vec2; 2]) -> f64 {
    let direct = (a[0] - b[0]).norm_squared() + (a[1] - b[1]).norm_squared();
    let swapped = (a[0] - b[1]).norm_squared() + (a[1] - b[0]).norm_squared();
    direct.min(swapped)
}

/// All-points interpolated AP from cumulative true-positive flags.
fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (i, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// sAP in `[0, 100]` at each configured threshold, in threshold order.
///
/// `image_size` is the `(height, width)` both lists are expressed in.
/// Predictions are ranked by confidence; ties keep input order. Each
/// prediction claims the nearest still-unmatched ground-truth segment when
/// its structural distance is below the threshold.
pub fn sap_score(
    predicted: &[Segment2D],
    ground_truth: &[Segment2D],
    image_size: (usize, usize),
    cfg: &SapConfig,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if ground_truth.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let sx = cfg.eval_resolution.1 as f64 / image_size.1 as f64;
    let sy = cfg.eval_resolution.0 as f64 / image_size.0 as f64;
    let scale = |s: &Segment2D| {
        [
            Vec2::new(s.p_left().x * sx, s.p_left().y * sy),
            Vec2::new(s.p_right().x * sx, s.p_right().y * sy),
        ]
    };
    let gt: Vec<[Vec2; 2]> = ground_truth.iter().map(scale).collect();
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].confidence.total_cmp(&predicted[a].confidence));
    let preds: Vec<[Vec2; 2]> = order.iter().map(|&i| scale(&predicted[i])).collect();

    let scores = cfg
        .thresholds
        .iter()
        .map(|&threshold| {
            let mut taken = vec![false; gt.len()];
            let hits: Vec<bool> = preds
                .iter()
                .map(|p| {
                    let nearest = gt
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| !taken[*j])
                        .map(|(j, g)| (j, structural_distance(p, g)))
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    match nearest {
                        Some((j, d)) if d < threshold => {
                            taken[j] = true;
                            true
                        }
                        _ => false,
                    }
                })
                .collect();
            (threshold, 100.0 * average_precision(&hits, gt.len()))
        })
        .collect();
    Ok(scores)
}
