//! Scripted demonstrators, the neural driver, and closed-loop evaluation.

mod collect;
mod eval;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::pilotnet::{normalize_input, ModelError, PilotNet};
use crate::sim::{Control, EgoState, Lead, SimError, WorldState};
use crate::vision::{preprocess, CropRegion, RawFrame, VisionError};

pub use collect::{collect, mix_counts, CollectConfig, CollectionMix};
pub use eval::{
    evaluate, format_results, parse_results, run_episode, run_episode_with, EpisodeConfig, EvalConfig, EvalReport, EvalSummary,
};

/// Multiplier applied to the network's steering output before clamping.
pub const STEERING_GAIN: f32 = 1.5;
/// Upper bound on the network's throttle command.
pub const THROTTLE_CAP: f32 = 0.6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = PolicyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertGains {
    /// Steering per meter of lateral offset.
    pub k_d: f64,
    /// Steering per radian of heading error.
    pub k_psi: f64,
    pub v_target: f64,
    /// Time-to-collision below which the expert brakes, seconds.
    pub ttc_brake: f64,
    /// Throttle per m/s of speed error.
    pub k_speed: f64,
    pub brake_throttle: f64,
    /// Bumper gap below which a closing lead always triggers braking.
    pub min_gap: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            k_d: 0.35,
            k_psi: 1.2,
            v_target: 25.0,
            ttc_brake: 2.5,
            k_speed: 0.5,
            brake_throttle: -0.5,
            min_gap: 10.0,
        }
    }
}

impl ExpertGains {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_d", self.k_d),
            ("k_psi", self.k_psi),
            ("v_target", self.v_target),
            ("ttc_brake", self.ttc_brake),
            ("k_speed", self.k_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PolicyError::InvalidConfig(format!("expert.{name} must be positive, got {v}")));
            }
        }
        if !(-1.0..0.0).contains(&self.brake_throttle) {
            return Err(PolicyError::InvalidConfig("expert.brake_throttle must be in [-1, 0)".into()));
        }
        if !(self.min_gap.is_finite() && self.min_gap >= 0.0) {
            return Err(PolicyError::InvalidConfig("expert.min_gap must be non-negative".into()));
        }
        Ok(())
    }
}

/// Lane-centering, speed-tracking demonstrator with a time-to-collision
/// brake override.
pub fn expert_control(state: &EgoState, lead: Option<&Lead>, gains: &ExpertGains) -> Control {
    let steering = (-gains.k_d * state.d - gains.k_psi * state.psi).clamp(-1.0, 1.0);
    let mut throttle = (gains.k_speed * (gains.v_target - state.v)).clamp(-1.0, 1.0);
    if let Some(lead) = lead {
        let closing = state.v - lead.speed;
        if closing > 0.0 && (lead.gap / closing < gains.ttc_brake || lead.gap < gains.min_gap) {
            throttle = gains.brake_throttle;
        }
    }
    Control::new(steering as f32, throttle as f32)
}

/// Applies the steering gain and throttle cap to raw network outputs.
pub fn postprocess(raw_steering: f32, raw_throttle: f32) -> Control {
    Control::new(
        (STEERING_GAIN * raw_steering).clamp(-1.0, 1.0),
        raw_throttle.clamp(-1.0, THROTTLE_CAP),
    )
}

/// Raw network prediction for one camera frame.
pub fn predict(model: &PilotNet, frame: &RawFrame, region: &CropRegion) -> Result<(f32, f32)> {
    let x = normalize_input(&preprocess(frame, region)?)?;
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let x = x.reshape(&[1, 3, h, w]).map_err(ModelError::from)?;
    let y = model.forward(&x)?;
    Ok((y.data()[0], y.data()[1]))
}

pub fn neural_control(model: &PilotNet, frame: &RawFrame, region: &CropRegion) -> Result<Control> {
    let (s, t) = predict(model, frame, region)?;
    Ok(postprocess(s, t))
}

/// A closed-loop driver. Policies that return `true` from `needs_frame` get
/// the rendered camera view each control tick.
pub trait Policy {
    fn needs_frame(&self) -> bool;
    fn act(&mut self, world: &WorldState, frame: Option<&RawFrame>) -> Result<Control>;
}

#[derive(Debug, Clone, Default)]
pub struct ExpertPolicy {
    pub gains: ExpertGains,
}

impl Policy for ExpertPolicy {
    fn needs_frame(&self) -> bool {
        false
    }

    fn act(&mut self, world: &WorldState, _: Option<&RawFrame>) -> Result<Control> {
        Ok(expert_control(&world.ego, world.lead_vehicle().as_ref(), &self.gains))
    }
}

/// Never steers; keeps the expert's speed control. The evaluation baseline.
#[derive(Debug, Clone, Default)]
pub struct ZeroSteerPolicy {
    pub gains: ExpertGains,
}

impl Policy for ZeroSteerPolicy {
    fn needs_frame(&self) -> bool {
        false
    }

    fn act(&mut self, world: &WorldState, _: Option<&RawFrame>) -> Result<Control> {
        let c = expert_control(&world.ego, world.lead_vehicle().as_ref(), &self.gains);
        Ok(Control::new(0.0, c.throttle))
    }
}

/// Outputs a fixed command regardless of input.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantPolicy(pub Control);

impl Policy for ConstantPolicy {
    fn needs_frame(&self) -> bool {
        false
    }

    fn act(&mut self, _: &WorldState, _: Option<&RawFrame>) -> Result<Control> {
        Ok(self.0)
    }
}

pub struct NeuralPolicy {
    pub model: PilotNet,
    pub region: CropRegion,
}

impl Policy for NeuralPolicy {
    fn needs_frame(&self) -> bool {
        true
    }

    fn act(&mut self, _: &WorldState, frame: Option<&RawFrame>) -> Result<Control> {
        let frame = frame.ok_or_else(|| PolicyError::InvalidConfig("neural policy needs a camera frame".into()))?;
        neural_control(&self.model, frame, &self.region)
    }
}
