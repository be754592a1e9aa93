use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EgoState, RoadSpec, SimError, TrafficVehicle, VehicleParams, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Ego centered in its lane at cruise speed.
    Center,
    /// Ego displaced and mis-headed, to be steered back.
    Recovery,
    /// Slower lead vehicle close ahead in the ego lane.
    Braking,
    /// Centered and at rest; no traffic ever enters the ego lane.
    Standstill,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Center => "center",
            ScenarioKind::Recovery => "recovery",
            ScenarioKind::Braking => "braking",
            ScenarioKind::Standstill => "standstill",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center" => Ok(ScenarioKind::Center),
            "recovery" => Ok(ScenarioKind::Recovery),
            "braking" => Ok(ScenarioKind::Braking),
            "standstill" => Ok(ScenarioKind::Standstill),
            other => Err(SimError::UnknownScenario(other.to_string())),
        }
    }
}

/// Background traffic. Every lane gets one speed so vehicles in a lane never
/// overlap each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Mean vehicles per kilometer per lane.
    pub density_per_km: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Smallest spawn gap to the first vehicle ahead in the ego lane.
    pub ego_lane_min_gap: f64,
    /// Extent of populated road ahead of and behind the ego.
    pub span_ahead: f64,
    pub span_behind: f64,
    pub min_spacing: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            density_per_km: 4.0,
            speed_min: 20.0,
            speed_max: 24.0,
            ego_lane_min_gap: 80.0,
            span_ahead: 1500.0,
            span_behind: 300.0,
            min_spacing: 40.0,
        }
    }
}

impl TrafficConfig {
    pub fn none() -> Self {
        Self {
            density_per_km: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.density_per_km >= 0.0
            && self.density_per_km <= 50.0
            && 0.0 <= self.speed_min
            && self.speed_min <= self.speed_max
            && self.ego_lane_min_gap >= 0.0
            && self.span_ahead >= 0.0
            && self.span_behind >= 0.0
            && self.min_spacing >= 10.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("traffic parameters out of range".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub initial_speed: f64,
    /// Magnitude range of the recovery lateral offset, meters.
    pub recovery_offset: [f64; 2],
    /// Largest recovery heading error magnitude, rad.
    pub recovery_heading: f64,
    /// Bumper gap range to the braking lead, meters.
    pub braking_gap: [f64; 2],
    /// How much slower than the ego the braking lead drives, m/s.
    pub braking_slowdown: [f64; 2],
    /// Spawns keep this much road ahead of the ego.
    pub road_margin: f64,
    pub traffic: TrafficConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            initial_speed: 25.0,
            recovery_offset: [0.6, 1.3],
            recovery_heading: 0.1,
            braking_gap: [20.0, 60.0],
            braking_slowdown: [4.0, 10.0],
            road_margin: 5000.0,
            traffic: TrafficConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if !(self.initial_speed.is_finite() && self.initial_speed >= 0.0) {
            return Err(SimError::InvalidConfig("scenario.initial_speed must be non-negative".into()));
        }
        if !ordered(self.recovery_offset) || !ordered(self.braking_gap) || !ordered(self.braking_slowdown) {
            return Err(SimError::InvalidConfig("scenario ranges must be ordered and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.recovery_heading) {
            return Err(SimError::InvalidConfig("scenario.recovery_heading must be in [0, 1)".into()));
        }
        if self.braking_slowdown[1] > self.initial_speed {
            return Err(SimError::InvalidConfig("braking lead would have negative speed".into()));
        }
        if self.road_margin < 0.0 {
            return Err(SimError::InvalidConfig("scenario.road_margin must be non-negative".into()));
        }
        self.traffic.validate()
    }
}

fn range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn signed(rng: &mut ChaCha8Rng, magnitude: f64) -> f64 {
    if rng.gen::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Fills `lane` between `from` and `to` (arclength of vehicle centers) with
/// vehicles at the lane speed.
fn populate_lane(
    rng: &mut ChaCha8Rng,
    cfg: &TrafficConfig,
    vehicle: &VehicleParams,
    lane: usize,
    speed: f64,
    from: f64,
    to: f64,
    out: &mut Vec<TrafficVehicle>,
) {
    if cfg.density_per_km <= 0.0 {
        return;
    }
    let mean = 1000.0 / cfg.density_per_km;
    let mut s = from + rng.gen::<f64>() * mean;
    while s < to {
        out.push(TrafficVehicle {
            s,
            lane_index: lane,
            v: speed,
            length: vehicle.length,
            width: vehicle.width,
        });
        let gap = -mean * (1.0 - rng.gen::<f64>()).ln();
        s += gap.max(cfg.min_spacing);
    }
}

/// Builds a seeded initial world. Same inputs give the same world.
pub fn spawn_scenario(
    kind: ScenarioKind,
    seed: u64,
    road: &Arc<RoadSpec>,
    vehicle: &VehicleParams,
    cfg: &ScenarioConfig,
) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5ce7a210);
    let lane = rng.gen_range(0..road.lane_count);
    let hi = (road.length - cfg.road_margin).max(1.0);
    let lo = (cfg.traffic.span_behind + vehicle.length).min(hi);
    let s = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let v = if kind == ScenarioKind::Standstill { 0.0 } else { cfg.initial_speed };

    let (d, psi) = match kind {
        ScenarioKind::Recovery => {
            let d_mag = range(&mut rng, cfg.recovery_offset);
            let d = signed(&mut rng, d_mag);
            let psi_mag = range(&mut rng, [0.0, cfg.recovery_heading]);
            let psi = signed(&mut rng, psi_mag);
            (d, psi)
        }
        _ => (0.0, 0.0),
    };
    let mut world = WorldState::new(road.clone(), vehicle.clone(), EgoState { s, d, psi, v, lane_index: lane });

    let tcfg = &cfg.traffic;
    let lane_speeds: Vec<f64> = (0..road.lane_count)
        .map(|_| range(&mut rng, [tcfg.speed_min, tcfg.speed_max]))
        .collect();
    let mut traffic = Vec::new();
    let clearance = vehicle.length + 10.0;
    for (l, &speed) in lane_speeds.iter().enumerate() {
        if l == lane {
            continue;
        }
        let mut lane_cars = Vec::new();
        populate_lane(&mut rng, tcfg, vehicle, l, speed, s - tcfg.span_behind, s + tcfg.span_ahead, &mut lane_cars);
        traffic.extend(lane_cars.into_iter().filter(|t| (t.s - s).abs() > clearance));
    }

    let front = s + vehicle.length / 2.0;
    match kind {
        ScenarioKind::Braking => {
            let gap = range(&mut rng, cfg.braking_gap);
            let lead_speed = (v - range(&mut rng, cfg.braking_slowdown)).max(0.0);
            let lead_s = front + gap + vehicle.length / 2.0;
            traffic.push(TrafficVehicle {
                s: lead_s,
                lane_index: lane,
                v: lead_speed,
                length: vehicle.length,
                width: vehicle.width,
            });
            let start = lead_s + 60.0 + tcfg.min_spacing;
            populate_lane(&mut rng, tcfg, vehicle, lane, lead_speed, start, s + tcfg.span_ahead, &mut traffic);
        }
        ScenarioKind::Standstill => {}
        _ => {
            let start = front + tcfg.ego_lane_min_gap + vehicle.length / 2.0;
            populate_lane(&mut rng, tcfg, vehicle, lane, lane_speeds[lane], start, s + tcfg.span_ahead, &mut traffic);
        }
    }
    traffic.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.lane_index.cmp(&b.lane_index)));
    world.traffic = traffic;
    world
}
