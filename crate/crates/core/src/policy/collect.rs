use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{expert_control, ExpertGains, PolicyError, Result};
use crate::dataset::{Manifest, Sample, SampleStore, Source};
use crate::sim::{check_termination, ScenarioKind, SimSetup, PHYSICS_DT};

/// Share of collected frames per demonstration strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionMix {
    pub center_frac: f64,
    pub recovery_frac: f64,
    pub braking_frac: f64,
}

impl Default for CollectionMix {
    fn default() -> Self {
        Self {
            center_frac: 0.45,
            recovery_frac: 0.20,
            braking_frac: 0.35,
        }
    }
}

impl CollectionMix {
    pub fn new(center: f64, recovery: f64, braking: f64) -> Result<Self> {
        let mix = Self {
            center_frac: center,
            recovery_frac: recovery,
            braking_frac: braking,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.center_frac, self.recovery_frac, self.braking_frac]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PolicyError::InvalidConfig(format!("mix fractions must be non-negative, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(PolicyError::InvalidConfig(format!("mix fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

const STRATEGIES: [(ScenarioKind, Source); 3] = [
    (ScenarioKind::Center, Source::ExpertCenter),
    (ScenarioKind::Recovery, Source::ExpertRecovery),
    (ScenarioKind::Braking, Source::ExpertBraking),
];

/// Largest-remainder apportionment of `total` frames; ties go to the earlier
/// strategy.
pub fn mix_counts(mix: &CollectionMix, total: usize) -> [usize; 3] {
    let f = mix.fractions();
    let exact: Vec<f64> = f.iter().map(|v| v * total as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub gains: ExpertGains,
    pub control_dt: f64,
    /// Control ticks per center episode.
    pub center_ticks: usize,
    pub braking_ticks: usize,
    pub recovery_max_ticks: usize,
    /// Recovery recording starts once |d| exceeds this, meters.
    pub recovery_gate: f64,
    /// Recovery recording ends once |d| falls below this, meters.
    pub recovery_done: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            gains: ExpertGains::default(),
            control_dt: crate::sim::CONTROL_DT,
            center_ticks: 100,
            braking_ticks: 60,
            recovery_max_ticks: 100,
            recovery_gate: 0.3,
            recovery_done: 0.15,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        super::EpisodeConfig {
            control_dt: self.control_dt,
            ..Default::default()
        }
        .substeps()?;
        if self.center_ticks == 0 || self.braking_ticks == 0 || self.recovery_max_ticks == 0 {
            return Err(PolicyError::InvalidConfig("episode tick counts must be positive".into()));
        }
        if !(0.0 < self.recovery_done && self.recovery_done <= self.recovery_gate) {
            return Err(PolicyError::InvalidConfig("need 0 < recovery_done <= recovery_gate".into()));
        }
        Ok(())
    }
}

/// Runs seeded expert episodes per strategy and appends the recorded frames
/// to `store`.
pub fn collect(
    mix: &CollectionMix,
    total_frames: usize,
    seed: u64,
    store: &mut SampleStore,
    setup: &SimSetup,
    cfg: &CollectConfig,
) -> Result<Manifest> {
    if total_frames == 0 {
        return Err(PolicyError::InvalidConfig("total_frames must be positive".into()));
    }
    mix.validate()?;
    cfg.validate()?;
    store.record_seed(seed)?;
    let outcome = run_collection(mix, total_frames, seed, store, setup, cfg);
    store.flush()?;
    outcome?;
    Ok(store.manifest().clone())
}

fn run_collection(
    mix: &CollectionMix,
    total_frames: usize,
    seed: u64,
    store: &mut SampleStore,
    setup: &SimSetup,
    cfg: &CollectConfig,
) -> Result<()> {
    let substeps = (cfg.control_dt / PHYSICS_DT).round() as usize;
    let counts = mix_counts(mix, total_frames);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    for (&(kind, source), &target) in STRATEGIES.iter().zip(&counts) {
        let mut recorded = 0;
        let mut idle_episodes = 0;
        while recorded < target {
            let mut world = setup.spawn(kind, seeds.gen());
            let max_ticks = match kind {
                ScenarioKind::Recovery => cfg.recovery_max_ticks,
                ScenarioKind::Braking => cfg.braking_ticks,
                _ => cfg.center_ticks,
            };
            let mut recording = kind != ScenarioKind::Recovery;
            let before = recorded;
            'episode: for _ in 0..max_ticks {
                if kind == ScenarioKind::Recovery {
                    let off = world.ego.d.abs();
                    if !recording && off > cfg.recovery_gate {
                        recording = true;
                    } else if recording && off < cfg.recovery_done {
                        break;
                    }
                }
                let control = expert_control(&world.ego, world.lead_vehicle().as_ref(), &cfg.gains);
                if recording {
                    store.append(&Sample {
                        frame: setup.render(&world),
                        steering: control.steering,
                        throttle: control.throttle,
                        source,
                        timestamp: world.time,
                    })?;
                    recorded += 1;
                    if recorded == target {
                        break;
                    }
                }
                for _ in 0..substeps {
                    world.advance(control, PHYSICS_DT)?;
                    if check_termination(&world).is_some() {
                        break 'episode;
                    }
                }
            }
            idle_episodes = if recorded == before { idle_episodes + 1 } else { 0 };
            if idle_episodes > 100 {
                return Err(PolicyError::InvalidConfig(format!("{} episodes record no frames", kind.as_str())));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mix_counts() {
        assert_eq!(mix_counts(&CollectionMix::default(), 1000), [450, 200, 350]);
        assert_eq!(mix_counts(&CollectionMix::default(), 8000), [3600, 1600, 2800]);
        assert_eq!(mix_counts(&CollectionMix::default(), 7), [3, 1, 3]);
        assert_eq!(mix_counts(&CollectionMix::new(1.0, 0.0, 0.0).unwrap(), 5), [5, 0, 0]);
    }

    #[test]
    fn mix_must_sum_to_one() {
        assert!(CollectionMix::new(0.5, 0.2, 0.2).is_err());
        assert!(CollectionMix::new(1.2, -0.2, 0.0).is_err());
        assert!(CollectionMix::new(0.45, 0.2, 0.35).is_ok());
    }
}
