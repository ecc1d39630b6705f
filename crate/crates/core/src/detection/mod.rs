//! Midpoint/displacement line representation and decoding of the three
//! detection-head maps into segments.
//!
//! A segment is encoded as its midpoint `m` plus the displacement `v` to its
//! right endpoint, so the endpoints are `m - v` and `m + v`. The detector
//! emits, per `stride × stride` patch, a midpoint likelihood, the sub-patch
//! offset of the midpoint in `[0, 1)²` and the displacement in full-resolution
//! pixels.

mod sap;

pub use sap::{sap_score, SapConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Segment2D, Vec2, MIN_SEGMENT_LENGTH};

pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MidpointRep {
    pub p_mid: Vec2,
    /// Displacement from the midpoint to the right endpoint.
    pub v_r: Vec2,
}

impl MidpointRep {
    pub fn new(p_mid: Vec2, v_r: Vec2) -> Result<Self> {
        let length = 2.0 * v_r.norm();
        if !(length >= MIN_SEGMENT_LENGTH) || !p_mid.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateSegment { length });
        }
        Ok(Self { p_mid, v_r })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarRep {
    pub p_mid: Vec2,
    pub length: f64,
    /// Angle to the image x axis, in `(-π/2, π/2]`.
    pub theta: f64,
}

pub fn endpoints_to_midrep(s: &Segment2D) -> Result<MidpointRep> {
    s.check_length()?;
    let p_mid = s.midpoint();
    Ok(MidpointRep {
        p_mid,
        v_r: s.p_right() - p_mid,
    })
}

pub fn midrep_to_endpoints(m: &MidpointRep, confidence: f64) -> Result<Segment2D> {
    let s = Segment2D::new(m.p_mid - m.v_r, m.p_mid + m.v_r, confidence);
    s.check_length()?;
    Ok(s)
}

pub fn polar_to_midrep(p: &PolarRep) -> MidpointRep {
    let half = 0.5 * p.length;
    MidpointRep {
        p_mid: p.p_mid,
        v_r: Vec2::new(half * p.theta.cos(), half * p.theta.sin()),
    }
}

pub fn midrep_to_polar(m: &MidpointRep) -> PolarRep {
    let mut theta = m.v_r.y.atan2(m.v_r.x);
    let half_pi = std::f64::consts::FRAC_PI_2;
    if theta > half_pi {
        theta -= std::f64::consts::PI;
    } else if theta <= -half_pi {
        theta += std::f64::consts::PI;
    }
    PolarRep {
        p_mid: m.p_mid,
        length: 2.0 * m.v_r.norm(),
        theta,
    }
}

/// Detection-head outputs on a `rows × cols` grid, row-major with
/// `row = y / stride`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionMaps {
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    /// Midpoint confidence per cell.
    pub m_loc: Vec<f64>,
    /// Sub-cell midpoint offset `(x, y)` per cell, in `[0, 1)`.
    pub m_off: Vec<Vec2>,
    /// Midpoint to right-endpoint displacement in full-resolution pixels.
    pub m_dis: Vec<Vec2>,
}

impl DetectionMaps {
    pub fn zeros(rows: usize, cols: usize, stride: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            stride,
            m_loc: vec![0.0; n],
            m_off: vec![Vec2::zeros(); n],
            m_dis: vec![Vec2::zeros(); n],
        }
    }

    /// Full-resolution image size `(height, width)`.
    pub fn image_size(&self) -> (usize, usize) {
        (self.rows * self.stride, self.cols * self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows * self.cols;
        if self.stride == 0 {
            return Err(Error::InvalidMaps("stride must be positive".into()));
        }
        if self.m_loc.len() != n || self.m_off.len() != n || self.m_dis.len() != n {
            return Err(Error::InvalidMaps(format!(
                "grid {}x{} needs {n} cells, got loc {} off {} dis {}",
                self.rows,
                self.cols,
                self.m_loc.len(),
                self.m_off.len(),
                self.m_dis.len()
            )));
        }
        if let Some(o) = self
            .m_off
            .iter()
            .find(|o| !(0.0..1.0).contains(&o.x) || !(0.0..1.0).contains(&o.y))
        {
            return Err(Error::InvalidMaps(format!("offset {o:?} outside [0,1)")));
        }
        Ok(())
    }
}

/// Turns head outputs into segments, highest confidence first.
///
/// Cells below `conf_threshold` are ignored; at most `top_k` cells are kept.
/// Segments shorter than [`MIN_SEGMENT_LENGTH`] are dropped.
pub fn decode_detection_maps(maps: &DetectionMaps, conf_threshold: f64, top_k: usize) -> Result<Vec<Segment2D>> {
    maps.validate()?;
    let mut cells: Vec<usize> = (0..maps.m_loc.len())
        .filter(|&i| maps.m_loc[i] >= conf_threshold && maps.m_loc[i] > 0.0)
        .collect();
    // stable: ties keep row-major order
    cells.sort_by(|&a, &b| maps.m_loc[b].total_cmp(&maps.m_loc[a]));
    cells.truncate(top_k);

    let stride = maps.stride as f64;
    let segments = cells
        .into_iter()
        .filter_map(|i| {
            let (r, c) = (i / maps.cols, i % maps.cols);
            let off = maps.m_off[i];
            let mid = Vec2::new(stride * (c as f64 + off.x), stride * (r as f64 + off.y));
            let rep = MidpointRep {
                p_mid: mid,
                v_r: maps.m_dis[i],
            };
            midrep_to_endpoints(&rep, maps.m_loc[i]).ok()
        })
        .collect();
    Ok(segments)
}

/// Inverse of [`decode_detection_maps`], used to build fixtures.
///
/// Each segment writes the cell containing its midpoint; when two midpoints
/// share a cell the later segment wins. Midpoints outside the grid are
/// skipped.
pub fn encode_to_maps(segments: &[Segment2D], image_size: (usize, usize), stride: usize) -> DetectionMaps {
    let (h, w) = image_size;
    let mut maps = DetectionMaps::zeros(h / stride, w / stride, stride);
    let sf = stride as f64;
    for s in segments {
        let mid = s.midpoint();
        let (gx, gy) = (mid.x / sf, mid.y / sf);
        let (c, r) = (gx.floor(), gy.floor());
        if c < 0.0 || r < 0.0 || c as usize >= maps.cols || r as usize >= maps.rows {
            continue;
        }
        let i = r as usize * maps.cols + c as usize;
        maps.m_loc[i] = s.confidence;
        maps.m_off[i] = Vec2::new(gx - c, gy - r);
        maps.m_dis[i] = s.p_right() - mid;
    }
    maps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(a: (f64, f64), b: (f64, f64)) -> Segment2D {
        Segment2D::new(Vec2::new(a.0, a.1), Vec2::new(b.0, b.1), 1.0)
    }

    #[test]
    fn endpoints_to_midrep_examples() {
        let m = endpoints_to_midrep(&seg((0.0, 0.0), (4.0, 2.0))).unwrap();
        assert_eq!(m.p_mid, Vec2::new(2.0, 1.0));
        assert_eq!(m.v_r, Vec2::new(2.0, 1.0));

        let m = endpoints_to_midrep(&seg((0.0, 6.0), (0.0, 0.0))).unwrap();
        assert_eq!(m.p_mid, Vec2::new(0.0, 3.0));
        assert_eq!(m.v_r, Vec2::new(0.0, 3.0));

        assert!(matches!(
            endpoints_to_midrep(&seg((1.0, 1.0), (1.0, 1.0))),
            Err(Error::DegenerateSegment { .. })
        ));
    }

    #[test]
    fn midrep_to_endpoints_examples() {
        let rep = MidpointRep {
            p_mid: Vec2::new(2.0, 1.0),
            v_r: Vec2::new(2.0, 1.0),
        };
        let s = midrep_to_endpoints(&rep, 1.0).unwrap();
        assert_eq!(s, seg((0.0, 0.0), (4.0, 2.0)));

        let tiny = MidpointRep {
            p_mid: Vec2::new(10.0, 10.0),
            v_r: Vec2::new(0.0, 0.0001),
        };
        assert!(matches!(
            midrep_to_endpoints(&tiny, 1.0),
            Err(Error::DegenerateSegment { .. })
        ));
        assert!(MidpointRep::new(tiny.p_mid, tiny.v_r).is_err());
    }

    #[test]
    fn polar_examples() {
        let p = PolarRep {
            p_mid: Vec2::zeros(),
            length: 2.0 * 5f64.sqrt(),
            theta: 0.5f64.atan(),
        };
        let m = polar_to_midrep(&p);
        assert!((m.v_r - Vec2::new(2.0, 1.0)).norm() < 1e-14);

        let p = PolarRep {
            p_mid: Vec2::zeros(),
            length: 10.0,
            theta: 0.0,
        };
        assert_eq!(polar_to_midrep(&p).v_r, Vec2::new(5.0, 0.0));
    }

    #[test]
    fn decode_single_cell() {
        let mut maps = DetectionMaps::zeros(8, 8, 4);
        let i = 3 * 8 + 5;
        maps.m_loc[i] = 0.9;
        maps.m_off[i] = Vec2::new(0.5, 0.25);
        maps.m_dis[i] = Vec2::new(6.0, 2.0);
        let out = decode_detection_maps(&maps, 0.5, 1000).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].midpoint(), Vec2::new(22.0, 13.0));
        assert_eq!(*out[0].p_left(), Vec2::new(16.0, 11.0));
        assert_eq!(*out[0].p_right(), Vec2::new(28.0, 15.0));
        assert_eq!(out[0].confidence, 0.9);
    }

    #[test]
    fn decode_empty_and_invalid() {
        let maps = DetectionMaps::zeros(8, 8, 4);
        assert!(decode_detection_maps(&maps, 0.5, 1000).unwrap().is_empty());

        let mut bad = DetectionMaps::zeros(8, 8, 4);
        bad.m_dis.pop();
        assert!(matches!(
            decode_detection_maps(&bad, 0.5, 10),
            Err(Error::InvalidMaps(_))
        ));
    }

    #[test]
    fn decode_orders_by_confidence_and_caps() {
        let segs = vec![
            Segment2D::new(Vec2::new(2.0, 2.0), Vec2::new(12.0, 2.0), 0.6),
            Segment2D::new(Vec2::new(20.0, 20.0), Vec2::new(30.0, 24.0), 0.95),
            Segment2D::new(Vec2::new(40.0, 5.0), Vec2::new(44.0, 15.0), 0.7),
        ];
        let maps = encode_to_maps(&segs, (64, 64), 4);
        let out = decode_detection_maps(&maps, 0.5, 2).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].confidence, 0.95);
        assert_eq!(out[1].confidence, 0.7);
    }

    #[test]
    fn encode_examples() {
        let maps = encode_to_maps(&[seg((10.0, 10.0), (20.0, 14.0))], (64, 64), 4);
        assert_eq!(maps.m_loc.iter().filter(|v| **v != 0.0).count(), 1);
        let empty = encode_to_maps(&[], (64, 64), 4);
        assert_eq!(empty, DetectionMaps::zeros(16, 16, 4));
    }

    #[test]
    fn encode_collision_last_wins() {
        let a = Segment2D::new(Vec2::new(0.0, 1.0), Vec2::new(2.0, 11.0), 0.9);
        let b = Segment2D::new(Vec2::new(-3.0, 6.0), Vec2::new(5.0, 6.0), 0.8);
        let maps = encode_to_maps(&[a, b], (32, 32), 4);
        let out = decode_detection_maps(&maps, 0.5, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].midpoint() - b.midpoint()).norm() < 1e-12);
    }

    fn arb_segment() -> impl Strategy<Value = Segment2D> {
        (0.0..512.0f64, 0.0..512.0f64, 2.5..80.0f64, -3.2..3.2f64).prop_map(|(x, y, half, ang)| {
            let v = Vec2::new(half * ang.cos(), half * ang.sin());
            let m = Vec2::new(x, y);
            Segment2D::new(m - v, m + v, 1.0)
        })
    }

    proptest! {
        #[test]
        fn midrep_round_trip(s in arb_segment()) {
            let back = midrep_to_endpoints(&endpoints_to_midrep(&s).unwrap(), 1.0).unwrap();
            prop_assert!((back.p_left() - s.p_left()).norm() < 1e-12);
            prop_assert!((back.p_right() - s.p_right()).norm() < 1e-12);
        }

        #[test]
        fn polar_round_trip(x in -500.0..500.0f64, y in -500.0..500.0f64,
                            length in 4.0..400.0f64, theta in -1.57..1.57f64) {
            let p = PolarRep { p_mid: Vec2::new(x, y), length, theta };
            let q = midrep_to_polar(&polar_to_midrep(&p));
            prop_assert!((q.length - length).abs() < 1e-12);
            prop_assert!((q.theta - theta).abs() < 1e-12);
            prop_assert_eq!(q.p_mid, p.p_mid);
        }
    }
}
