//! Localization scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_error, Pose};

/// `(meters, degrees)` thresholds, loosest last.
pub const THRESHOLDS: [(f64, f64); 3] = [(0.25, 10.0), (0.5, 10.0), (1.0, 10.0)];

/// Percentage of queries within each of [`THRESHOLDS`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScore {
    pub within: [f64; 3],
}

/// A query counts at a threshold when both its translation and rotation
/// errors are within it.
pub fn evaluate_localization(estimates: &[Pose], ground_truth: &[Pose]) -> Result<LocalizationScore> {
    if estimates.len() != ground_truth.len() || estimates.is_empty() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: ground_truth.len(),
        });
    }
    let errors: Vec<_> = estimates
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| pose_error(e, g))
        .collect();
    let within = THRESHOLDS.map(|(t, r)| {
        let hits = errors
            .iter()
            .filter(|e| e.translation <= t && e.rotation_deg <= r)
            .count();
        100.0 * hits as f64 / errors.len() as f64
    });
    Ok(LocalizationScore { within })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use nalgebra::Rotation3;

    fn offset(gt: &Pose, meters: f64, degrees: f64) -> Pose {
        let r = Rotation3::from_axis_angle(&Vec3::z_axis(), degrees.to_radians()) * gt.rotation();
        Pose::from_center(r, gt.center() + Vec3::new(meters, 0.0, 0.0))
    }

    #[test]
    fn counts_with_and_semantics() {
        let gt = vec![Pose::identity(); 3];
        let est = vec![
            offset(&gt[0], 0.1, 1.0),
            offset(&gt[1], 0.4, 2.0),
            offset(&gt[2], 2.0, 1.0),
        ];
        let s = evaluate_localization(&est, &gt).unwrap();
        let expected = [100.0 / 3.0, 200.0 / 3.0, 200.0 / 3.0];
        for (a, b) in s.within.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let s = evaluate_localization(&gt, &gt).unwrap();
        assert_eq!(s.within, [100.0; 3]);
        let s = evaluate_localization(&[offset(&gt[0], 0.1, 11.0)], &gt[..1]).unwrap();
        assert_eq!(s.within, [0.0; 3]);
    }

    #[test]
    fn length_mismatch() {
        let p = vec![Pose::identity(); 2];
        assert!(matches!(
            evaluate_localization(&p, &p[..1]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            evaluate_localization(&[], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
