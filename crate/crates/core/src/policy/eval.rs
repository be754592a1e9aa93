use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyError, Result};
use crate::sim::{check_termination, EpisodeResult, ScenarioKind, SimSetup, TerminationCause, WorldState, PHYSICS_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_time: f64,
    /// Control period; must be a whole number of physics steps.
    pub control_dt: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_time: 120.0,
            control_dt: crate::sim::CONTROL_DT,
        }
    }
}

impl EpisodeConfig {
    /// Physics steps per control tick.
    pub fn substeps(&self) -> Result<usize> {
        let n = (self.control_dt / PHYSICS_DT).round();
        if !(n >= 1.0 && (n * PHYSICS_DT - self.control_dt).abs() < 1e-9) {
            return Err(PolicyError::InvalidConfig(format!(
                "control_dt {} is not a positive multiple of {PHYSICS_DT}",
                self.control_dt
            )));
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(PolicyError::InvalidConfig("max_time must be positive".into()));
        }
        Ok(n as usize)
    }
}

/// Runs render → act → step (zero-order hold) until termination or timeout.
/// `observe` sees the world after every physics step.
pub fn run_episode_with(
    mut world: WorldState,
    setup: &SimSetup,
    policy: &mut dyn Policy,
    cfg: &EpisodeConfig,
    mut observe: impl FnMut(&WorldState),
) -> Result<EpisodeResult> {
    let substeps = cfg.substeps()?;
    let max_steps = (cfg.max_time / PHYSICS_DT).round() as u64;
    let start = world.time;
    let mut steps = 0u64;
    let result = |world: &WorldState, steps: u64, cause| EpisodeResult {
        survival_time: steps as f64 * PHYSICS_DT,
        cause,
        distance: world.distance,
    };
    if let Some(cause) = check_termination(&world) {
        return Ok(result(&world, 0, cause));
    }
    while steps < max_steps {
        let frame = policy.needs_frame().then(|| setup.render(&world));
        let control = policy.act(&world, frame.as_ref())?;
        for _ in 0..substeps {
            world.advance(control, PHYSICS_DT)?;
            steps += 1;
            observe(&world);
            if let Some(cause) = check_termination(&world) {
                return Ok(result(&world, steps, cause));
            }
            if steps >= max_steps {
                break;
            }
        }
    }
    debug_assert!(world.time - start <= cfg.max_time + 1e-6);
    Ok(result(&world, steps, TerminationCause::Timeout))
}

pub fn run_episode(world: WorldState, setup: &SimSetup, policy: &mut dyn Policy, cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    run_episode_with(world, setup, policy, cfg, |_| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub episode: EpisodeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            seed: 1000,
            scenario: ScenarioKind::Center,
            episode: EpisodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub median_survival: f64,
    pub mean_survival: f64,
    pub mean_distance: f64,
    pub timeouts: usize,
    pub lane_departures: usize,
    pub collisions: usize,
}

impl EvalSummary {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let n = results.len();
        let mut times: Vec<f64> = results.iter().map(|r| r.survival_time).collect();
        times.sort_by(f64::total_cmp);
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => times[n / 2],
            _ => (times[n / 2 - 1] + times[n / 2]) / 2.0,
        };
        let mean = |f: fn(&EpisodeResult) -> f64| if n == 0 { 0.0 } else { results.iter().map(f).sum::<f64>() / n as f64 };
        let count = |c| results.iter().filter(|r| r.cause == c).count();
        Self {
            episodes: n,
            median_survival: median,
            mean_survival: mean(|r| r.survival_time),
            mean_distance: mean(|r| r.distance),
            timeouts: count(TerminationCause::Timeout),
            lane_departures: count(TerminationCause::LaneDeparture),
            collisions: count(TerminationCause::Collision),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub results: Vec<EpisodeResult>,
    pub summary: EvalSummary,
}

/// Drives one seeded episode per seed in `seed..seed + episodes`.
pub fn evaluate(policy: &mut dyn Policy, setup: &SimSetup, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.episodes == 0 {
        return Err(PolicyError::InvalidConfig("episodes must be at least 1".into()));
    }
    cfg.episode.substeps()?;
    let seeds: Vec<u64> = (0..cfg.episodes as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let world = setup.spawn(cfg.scenario, seed);
        results.push(run_episode(world, setup, policy, &cfg.episode)?);
    }
    let summary = EvalSummary::from_results(&results);
    Ok(EvalReport { seeds, results, summary })
}

/// One whitespace-separated row per episode, then an aggregate line.
pub fn format_results(report: &EvalReport) -> String {
    let mut out = String::from("episode seed survival_s cause distance_m\n");
    for (i, (seed, r)) in report.seeds.iter().zip(&report.results).enumerate() {
        let _ = writeln!(out, "{i} {seed} {:.2} {} {:.1}", r.survival_time, r.cause, r.distance);
    }
    let s = &report.summary;
    let _ = writeln!(
        out,
        "summary episodes={} median_survival_s={:.2} mean_survival_s={:.2} mean_distance_m={:.1} timeouts={} lane_departures={} collisions={}",
        s.episodes, s.median_survival, s.mean_survival, s.mean_distance, s.timeouts, s.lane_departures, s.collisions
    );
    out
}

/// Parses the per-episode rows of [`format_results`] output.
pub fn parse_results(text: &str) -> Option<Vec<(u64, EpisodeResult)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.starts_with("summary"))
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return None;
            }
            let cause = match f[3] {
                "timeout" => TerminationCause::Timeout,
                "lane_departure" => TerminationCause::LaneDeparture,
                "collision" => TerminationCause::Collision,
                _ => return None,
            };
            Some((
                f[1].parse().ok()?,
                EpisodeResult {
                    survival_time: f[2].parse().ok()?,
                    cause,
                    distance: f[4].parse().ok()?,
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ConstantPolicy, ExpertPolicy, ZeroSteerPolicy};
    use crate::sim::Control;

    #[test]
    fn median_of_even_and_odd() {
        let r = |t| EpisodeResult { survival_time: t, cause: TerminationCause::Timeout, distance: 1.0 };
        assert_eq!(EvalSummary::from_results(&[r(3.0), r(1.0), r(2.0)]).median_survival, 2.0);
        assert_eq!(EvalSummary::from_results(&[r(4.0), r(1.0), r(2.0), r(3.0)]).median_survival, 2.5);
    }

    #[test]
    fn standstill_zero_policy_times_out_in_place() {
        let setup = SimSetup::standard();
        let cfg = EvalConfig {
            episodes: 2,
            scenario: ScenarioKind::Standstill,
            episode: EpisodeConfig { max_time: 30.0, ..Default::default() },
            ..Default::default()
        };
        let report = evaluate(&mut ConstantPolicy(Control::ZERO), &setup, &cfg).unwrap();
        for r in &report.results {
            assert_eq!(r.cause, TerminationCause::Timeout);
            assert!((r.survival_time - 30.0).abs() < 1e-9);
            assert_eq!(r.distance, 0.0);
        }
    }

    #[test]
    fn zero_steering_leaves_curved_lane() {
        let setup = SimSetup::standard();
        let cfg = EvalConfig { episodes: 3, ..Default::default() };
        let report = evaluate(&mut ZeroSteerPolicy::default(), &setup, &cfg).unwrap();
        assert!(report.results.iter().all(|r| r.cause == TerminationCause::LaneDeparture));
    }

    #[test]
    fn zero_episodes_rejected() {
        let cfg = EvalConfig { episodes: 0, ..Default::default() };
        assert!(evaluate(&mut ExpertPolicy::default(), &SimSetup::standard(), &cfg).is_err());
    }

    #[test]
    fn table_round_trips() {
        let setup = SimSetup::standard();
        let cfg = EvalConfig { episodes: 3, ..Default::default() };
        let report = evaluate(&mut ZeroSteerPolicy::default(), &setup, &cfg).unwrap();
        let text = format_results(&report);
        let rows = parse_results(&text).unwrap();
        assert_eq!(rows.len(), 3);
        for ((seed, r), (s0, r0)) in rows.iter().zip(report.seeds.iter().zip(&report.results)) {
            assert_eq!(seed, s0);
            assert!((r.survival_time - r0.survival_time).abs() <= 0.005);
            assert_eq!(r.cause, r0.cause);
        }
    }

    #[test]
    fn control_period_must_divide() {
        assert!(EpisodeConfig { control_dt: 0.07, ..Default::default() }.substeps().is_err());
        assert_eq!(EpisodeConfig { control_dt: 0.2, ..Default::default() }.substeps().unwrap(), 4);
    }
}
