use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

/// Highway-grade curvature bound, 1/m.
pub const MAX_CURVATURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSegment {
    pub start: f64,
    pub length: f64,
    /// Signed curvature, 1/m. Positive bends to the right.
    pub curvature: f64,
}

/// Multi-lane road described by piecewise-constant curvature over arclength.
/// Lanes are numbered from the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub lane_count: usize,
    pub lane_width: f64,
    pub length: f64,
    pub segments: Vec<CurvatureSegment>,
}

/// Parameters for procedurally generated roads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadConfig {
    pub lane_count: usize,
    pub lane_width: f64,
    pub length: f64,
    pub segment_min: f64,
    pub segment_max: f64,
    /// Curvature magnitude range of curved segments, 1/m.
    pub curvature_min: f64,
    pub curvature_max: f64,
    /// Probability that a segment is straight.
    pub straight_fraction: f64,
    pub seed: u64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 3.7,
            length: 46_000.0,
            segment_min: 150.0,
            segment_max: 600.0,
            curvature_min: 0.001,
            curvature_max: 0.003,
            straight_fraction: 0.0,
            seed: 2024,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidRoad(m.to_string()));
        if self.lane_count == 0 || self.lane_width <= 0.0 || self.length <= 0.0 {
            return bad("lane count, lane width and length must be positive");
        }
        if !(self.segment_min > 0.0 && self.segment_min <= self.segment_max) {
            return bad("segment length range must be positive and ordered");
        }
        if !(0.0 <= self.curvature_min && self.curvature_min <= self.curvature_max && self.curvature_max <= MAX_CURVATURE) {
            return bad("curvature range must be ordered within [0, 0.01]");
        }
        if !(0.0..=1.0).contains(&self.straight_fraction) {
            return bad("straight_fraction must be in [0, 1]");
        }
        Ok(())
    }
}

impl RoadSpec {
    pub fn straight(lane_count: usize, lane_width: f64, length: f64) -> Self {
        Self {
            lane_count,
            lane_width,
            length,
            segments: vec![CurvatureSegment {
                start: 0.0,
                length,
                curvature: 0.0,
            }],
        }
    }

    pub fn constant_curvature(lane_count: usize, lane_width: f64, length: f64, curvature: f64) -> Self {
        Self {
            segments: vec![CurvatureSegment {
                start: 0.0,
                length,
                curvature,
            }],
            ..Self::straight(lane_count, lane_width, length)
        }
    }

    pub fn generate(config: &RoadConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut segments = Vec::new();
        let mut start = 0.0;
        while start < config.length {
            let len = rng.gen_range(config.segment_min..=config.segment_max).min(config.length - start);
            let curvature = if rng.gen::<f64>() < config.straight_fraction {
                0.0
            } else {
                let mag = rng.gen_range(config.curvature_min..=config.curvature_max);
                if rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            };
            segments.push(CurvatureSegment {
                start,
                length: len,
                curvature,
            });
            start += len;
        }
        let road = Self {
            lane_count: config.lane_count,
            lane_width: config.lane_width,
            length: config.length,
            segments,
        };
        road.validate()?;
        Ok(road)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.segments.is_empty() {
            return Err(SimError::InvalidRoad("no segments".into()));
        }
        let mut expect = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.curvature.abs() > MAX_CURVATURE || !seg.curvature.is_finite() {
                return Err(SimError::InvalidRoad(format!("segment {i} curvature {} exceeds 0.01", seg.curvature)));
            }
            if (seg.start - expect).abs() > 1e-6 || seg.length <= 0.0 {
                return Err(SimError::InvalidRoad(format!("segment {i} does not continue the profile")));
            }
            expect = seg.start + seg.length;
        }
        if (expect - self.length).abs() > 1e-6 {
            return Err(SimError::InvalidRoad("segments do not tile the road length".into()));
        }
        Ok(())
    }

    /// Curvature at arclength `s`; zero off either end of the road.
    pub fn curvature_at(&self, s: f64) -> f64 {
        if !(0.0..self.length).contains(&s) {
            return 0.0;
        }
        let i = self.segments.partition_point(|seg| seg.start <= s);
        self.segments[i.saturating_sub(1)].curvature
    }

    /// Lateral position of a lane center, meters right of the road center.
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 - (self.lane_count as f64 - 1.0) / 2.0) * self.lane_width
    }

    pub fn half_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width / 2.0
    }
}
