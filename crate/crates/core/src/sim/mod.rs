//! Deterministic multi-lane highway in road (Frenet) coordinates.
//!
//! Lateral quantities are measured positive to the right, headings positive
//! when turning right, and positive curvature bends the road to the right.

mod render;
mod road;
mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{render, CameraConfig};
pub use road::{CurvatureSegment, RoadConfig, RoadSpec, MAX_CURVATURE};
pub use scenario::{spawn_scenario, ScenarioConfig, ScenarioKind, TrafficConfig};

/// Physics integration step, seconds.
pub const PHYSICS_DT: f64 = 0.05;
/// Default control period (10 Hz), seconds.
pub const CONTROL_DT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("control ({steering}, {throttle}) is not finite")]
    NonFiniteControl { steering: f32, throttle: f32 },
    #[error("dt {0} outside (0, 0.1]")]
    InvalidDt(f64),
    #[error("invalid road: {0}")]
    InvalidRoad(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

/// Normalized driver command, both components in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub steering: f32,
    pub throttle: f32,
}

impl Control {
    pub const ZERO: Control = Control { steering: 0.0, throttle: 0.0 };

    pub fn new(steering: f32, throttle: f32) -> Self {
        Self { steering, throttle }
    }

    pub fn is_finite(&self) -> bool {
        self.steering.is_finite() && self.throttle.is_finite()
    }

    /// Clamps both axes into [-1, 1]; returns the clamped command and whether
    /// anything changed.
    pub fn clamped(self) -> (Control, bool) {
        let c = Control {
            steering: self.steering.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(-1.0, 1.0),
        };
        (c, c != self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Steering angle at full lock, rad.
    pub delta_max: f64,
    pub a_max: f64,
    pub b_max: f64,
    /// Quadratic drag coefficient, 1/m.
    pub drag: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            delta_max: 0.35,
            a_max: 3.0,
            b_max: 6.0,
            drag: 0.002,
            wheelbase: 2.8,
            v_max: 33.0,
            length: 4.5,
            width: 1.8,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("delta_max", self.delta_max),
            ("a_max", self.a_max),
            ("b_max", self.b_max),
            ("wheelbase", self.wheelbase),
            ("v_max", self.v_max),
            ("length", self.length),
            ("width", self.width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("vehicle.{name} must be positive, got {v}")));
            }
        }
        if self.delta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(SimError::InvalidConfig("vehicle.delta_max must be below pi/2".into()));
        }
        if !(self.drag.is_finite() && self.drag >= 0.0) {
            return Err(SimError::InvalidConfig("vehicle.drag must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub s: f64,
    pub d: f64,
    pub psi: f64,
    pub v: f64,
    pub lane_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficVehicle {
    /// Arclength of the vehicle's center.
    pub s: f64,
    pub lane_index: usize,
    pub v: f64,
    pub length: f64,
    pub width: f64,
}

/// Closest vehicle ahead in the ego lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lead {
    /// Bumper-to-bumper distance, meters.
    pub gap: f64,
    pub speed: f64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    LaneDeparture,
    Collision,
    Timeout,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::LaneDeparture => "lane_departure",
            TerminationCause::Collision => "collision",
            TerminationCause::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub survival_time: f64,
    pub cause: TerminationCause,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub road: Arc<RoadSpec>,
    pub vehicle: VehicleParams,
    pub ego: EgoState,
    pub traffic: Vec<TrafficVehicle>,
    /// Simulated time, seconds.
    pub time: f64,
    /// Arclength covered by the ego since spawn.
    pub distance: f64,
}

impl WorldState {
    pub fn new(road: Arc<RoadSpec>, vehicle: VehicleParams, ego: EgoState) -> Self {
        Self {
            road,
            vehicle,
            ego,
            traffic: Vec::new(),
            time: 0.0,
            distance: 0.0,
        }
    }

    /// Ego lateral position relative to the road center.
    pub fn ego_lateral(&self) -> f64 {
        self.road.lane_center(self.ego.lane_index) + self.ego.d
    }

    /// Integrates one explicit-Euler step in place. Out-of-range commands are
    /// clamped to [-1, 1].
    pub fn advance(&mut self, control: Control, dt: f64) -> Result<(), SimError> {
        if !control.is_finite() {
            return Err(SimError::NonFiniteControl {
                steering: control.steering,
                throttle: control.throttle,
            });
        }
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(SimError::InvalidDt(dt));
        }
        let (c, _) = control.clamped();
        let p = &self.vehicle;
        let ego = self.ego;
        let delta = c.steering as f64 * p.delta_max;
        let throttle = c.throttle as f64;
        let accel = if throttle >= 0.0 { throttle * p.a_max } else { throttle * p.b_max } - p.drag * ego.v * ego.v;
        let kappa = self.road.curvature_at(ego.s);

        let ds = ego.v * ego.psi.cos() * dt;
        self.ego = EgoState {
            s: ego.s + ds,
            d: ego.d + ego.v * ego.psi.sin() * dt,
            psi: ego.psi + (ego.v / p.wheelbase) * delta.tan() * dt - kappa * ego.v * dt,
            v: (ego.v + accel * dt).clamp(0.0, p.v_max),
            lane_index: ego.lane_index,
        };
        for t in &mut self.traffic {
            t.s += t.v * dt;
        }
        self.time += dt;
        self.distance += ds;
        Ok(())
    }

    /// Nearest traffic vehicle ahead of the ego in its own lane.
    pub fn lead_vehicle(&self) -> Option<Lead> {
        let front = self.ego.s + self.vehicle.length / 2.0;
        self.traffic
            .iter()
            .enumerate()
            .filter(|(_, t)| t.lane_index == self.ego.lane_index && t.s > self.ego.s)
            .map(|(i, t)| Lead {
                gap: t.s - t.length / 2.0 - front,
                speed: t.v,
                index: i,
            })
            .min_by(|a, b| a.gap.total_cmp(&b.gap))
    }
}

/// Everything needed to spawn and view worlds.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub road: Arc<RoadSpec>,
    pub vehicle: VehicleParams,
    pub scenario: ScenarioConfig,
    pub camera: CameraConfig,
}

impl SimSetup {
    pub fn new(road: RoadSpec, vehicle: VehicleParams, scenario: ScenarioConfig, camera: CameraConfig) -> Result<Self, SimError> {
        road.validate()?;
        vehicle.validate()?;
        scenario.validate()?;
        camera.validate()?;
        Ok(Self {
            road: Arc::new(road),
            vehicle,
            scenario,
            camera,
        })
    }

    /// Generated default road with default vehicle, scenarios and camera.
    pub fn standard() -> Self {
        let road = RoadSpec::generate(&RoadConfig::default()).expect("default road config is valid");
        Self::new(road, VehicleParams::default(), ScenarioConfig::default(), CameraConfig::default())
            .expect("defaults are valid")
    }

    pub fn spawn(&self, kind: ScenarioKind, seed: u64) -> WorldState {
        spawn_scenario(kind, seed, &self.road, &self.vehicle, &self.scenario)
    }

    pub fn render(&self, world: &WorldState) -> crate::vision::RawFrame {
        render(world, &self.camera)
    }
}

/// Pure form of [`WorldState::advance`].
pub fn step(world: &WorldState, control: Control, dt: f64) -> Result<WorldState, SimError> {
    let mut next = world.clone();
    next.advance(control, dt)?;
    Ok(next)
}

/// Lateral offset beyond which the whole ego footprint has left its lane.
pub fn departure_threshold(lane_width: f64, ego_width: f64) -> f64 {
    (lane_width + ego_width) / 2.0
}

pub fn check_termination(world: &WorldState) -> Option<TerminationCause> {
    if world.ego.d.abs() > departure_threshold(world.road.lane_width, world.vehicle.width) {
        return Some(TerminationCause::LaneDeparture);
    }
    let ego_lat = world.ego_lateral();
    let (el, ew) = (world.vehicle.length, world.vehicle.width);
    let hit = world.traffic.iter().any(|t| {
        let lat = world.road.lane_center(t.lane_index);
        (world.ego.s - t.s).abs() < (el + t.length) / 2.0 && (ego_lat - lat).abs() < (ew + t.width) / 2.0
    });
    hit.then_some(TerminationCause::Collision)
}
