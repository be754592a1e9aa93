use e2edrive::dataset::{SampleStore, Source};
use e2edrive::pilotnet::{PilotNet, PilotNetConfig};
use e2edrive::policy::*;
use e2edrive::sim::*;
use e2edrive::vision::{CropRegion, RawFrame};
use proptest::prelude::*;

/// Longest time to re-centre allowed from a recovery spawn.
const SETTLE_LIMIT: f64 = 6.0;

/// Drives the expert from `world` for `horizon` seconds and returns
/// (first time |d| < 0.2 and stays), termination if any, worst |d|.
fn expert_run(setup: &SimSetup, world: WorldState, horizon: f64) -> (Option<f64>, Option<TerminationCause>, f64) {
    let mut settled_at = None;
    let mut worst = world.ego.d.abs();
    let cfg = EpisodeConfig {
        max_time: horizon,
        ..EpisodeConfig::default()
    };
    let res = run_episode_with(world, setup, &mut ExpertPolicy::default(), &cfg, |w| {
        worst = worst.max(w.ego.d.abs());
        if w.ego.d.abs() < 0.2 {
            settled_at.get_or_insert(w.time);
        } else {
            settled_at = None;
        }
    })
    .unwrap();
    (settled_at, (res.cause != TerminationCause::Timeout).then_some(res.cause), worst)
}

#[test]
fn expert_recovers_from_every_recovery_spawn() {
    let setup = SimSetup::standard();
    for seed in 0..100 {
        let w = setup.spawn(ScenarioKind::Recovery, seed);
        let t0 = w.time;
        let (settled, ended, _) = expert_run(&setup, w, 12.0);
        assert_eq!(ended, None, "seed {seed}");
        let t = settled.unwrap_or(f64::INFINITY) - t0;
        assert!(t <= SETTLE_LIMIT, "seed {seed}: settled after {t} s");
    }
}

#[test]
fn expert_never_collides_from_braking_spawns() {
    let setup = SimSetup::standard();
    for seed in 0..100 {
        let (_, ended, _) = expert_run(&setup, setup.spawn(ScenarioKind::Braking, seed), 30.0);
        assert_eq!(ended, None, "seed {seed}");
    }
}

#[test]
fn expert_holds_the_centre_from_centre_spawns() {
    let setup = SimSetup::standard();
    for seed in 0..50 {
        let (_, ended, worst) = expert_run(&setup, setup.spawn(ScenarioKind::Center, seed), 10.0);
        assert_eq!(ended, None);
        assert!(worst < 0.2, "seed {seed}: |d| reached {worst}");
    }
}

#[test]
fn zero_steering_departure_matches_direct_simulation() {
    let setup = SimSetup::standard();
    let world = setup.spawn(ScenarioKind::Center, 4);
    assert_eq!(world.ego.v, 25.0);
    let res = run_episode(world.clone(), &setup, &mut ZeroSteerPolicy::default(), &EpisodeConfig::default()).unwrap();
    assert_eq!(res.cause, TerminationCause::LaneDeparture);

    // Reference loop: expert throttle held for two physics steps, no steering.
    let (mut w, mut steps) = (world, 0u64);
    let gains = ExpertGains::default();
    'outer: loop {
        let c = expert_control(&w.ego, w.lead_vehicle().as_ref(), &gains);
        for _ in 0..2 {
            w = step(&w, Control::new(0.0, c.throttle), PHYSICS_DT).unwrap();
            steps += 1;
            if check_termination(&w) == Some(TerminationCause::LaneDeparture) {
                break 'outer;
            }
        }
    }
    assert_eq!(res.survival_time, steps as f64 * PHYSICS_DT);
    assert_eq!(res.distance, w.distance);
}

#[test]
fn zero_weight_network_from_standstill_times_out_in_place() {
    let mut model = PilotNet::<f32>::build(PilotNetConfig::default(), 0).unwrap();
    for p in model.params_mut() {
        p.data_mut().fill(0.0);
    }
    let setup = SimSetup::standard();
    let mut policy = NeuralPolicy {
        model,
        region: CropRegion::default_for(320, 240),
    };
    let cfg = EvalConfig {
        episodes: 2,
        scenario: ScenarioKind::Standstill,
        episode: EpisodeConfig {
            max_time: 5.0,
            ..EpisodeConfig::default()
        },
        ..EvalConfig::default()
    };
    let report = evaluate(&mut policy, &setup, &cfg).unwrap();
    for r in &report.results {
        assert_eq!(r.cause, TerminationCause::Timeout);
        assert_eq!(r.survival_time, 5.0);
        assert_eq!(r.distance, 0.0);
    }
}

#[test]
fn evaluation_is_deterministic_per_seed() {
    let setup = SimSetup::standard();
    let cfg = EvalConfig {
        episodes: 4,
        seed: 77,
        scenario: ScenarioKind::Recovery,
        episode: EpisodeConfig {
            max_time: 20.0,
            ..EpisodeConfig::default()
        },
    };
    let a = evaluate(&mut ZeroSteerPolicy::default(), &setup, &cfg).unwrap();
    let b = evaluate(&mut ZeroSteerPolicy::default(), &setup, &cfg).unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.seeds, vec![77, 78, 79, 80]);
}

#[test]
fn collection_is_reproducible_and_respects_the_mix() {
    let setup = SimSetup::standard();
    let run = |seed: u64, mix: CollectionMix| {
        let dir = tempfile::tempdir().unwrap();
        let mut store = SampleStore::create(dir.path(), 320, 240).unwrap();
        let m = collect(&mix, 50, seed, &mut store, &setup, &CollectConfig::default()).unwrap();
        (m, store.checksum().unwrap(), store.read_all().unwrap(), dir)
    };
    let (m, sum, samples, _d) = run(3, CollectionMix::default());
    let (_, again, _, _d2) = run(3, CollectionMix::default());
    assert_eq!(sum, again);
    let tags = m.tag_counts();
    assert_eq!(tags[&Source::ExpertCenter], 23);
    assert_eq!(tags[&Source::ExpertRecovery], 10);
    assert_eq!(tags[&Source::ExpertBraking], 17);
    assert_eq!(m.seeds, vec![3]);
    assert!(samples.iter().all(|s| (-1.0..=1.0).contains(&s.steering) && (-1.0..=1.0).contains(&s.throttle)));
    // Recovery frames start beyond the gate, so their steering is large.
    assert!(samples
        .iter()
        .filter(|s| s.source == Source::ExpertRecovery)
        .any(|s| s.steering.abs() > 0.1));

    let (m, _, samples, _d3) = run(5, CollectionMix::new(1.0, 0.0, 0.0).unwrap());
    assert_eq!(m.total, 50);
    assert!(samples.iter().all(|s| s.source == Source::ExpertCenter));
    // Centre driving never steers hard: |steer| = |0.35 d + 1.2 psi| stays small.
    assert!(samples.iter().all(|s| s.steering.abs() < 0.35 * 0.2));
}

#[test]
fn paper_gain_and_cap() {
    assert_eq!(STEERING_GAIN, 1.5);
    assert_eq!(THROTTLE_CAP, 0.6);
    assert_eq!(postprocess(0.5, 0.9), Control::new(0.75, 0.6));
    assert_eq!(postprocess(0.9, 0.2), Control::new(1.0, 0.2));
    assert_eq!(postprocess(0.0, 0.0), Control::new(0.0, 0.0));
}

fn ego(d: f64, psi: f64, v: f64) -> EgoState {
    EgoState {
        s: 500.0,
        d,
        psi,
        v,
        lane_index: 1,
    }
}

proptest! {
    #[test]
    fn expert_steering_is_odd(d in -3.0f64..3.0, psi in -0.5f64..0.5, v in 0.0f64..33.0) {
        let g = ExpertGains::default();
        let a = expert_control(&ego(d, psi, v), None, &g);
        let b = expert_control(&ego(-d, -psi, v), None, &g);
        prop_assert_eq!(a.steering, -b.steering);
        prop_assert_eq!(a.throttle, b.throttle);
        prop_assert!((-1.0..=1.0).contains(&a.steering));
    }

    #[test]
    fn postprocess_range(s in prop::num::f32::NORMAL | prop::num::f32::ZERO, t in prop::num::f32::NORMAL | prop::num::f32::ZERO) {
        let c = postprocess(s, t);
        prop_assert!((-1.0..=1.0).contains(&c.steering));
        prop_assert!((-1.0..=THROTTLE_CAP).contains(&c.throttle));
    }

    #[test]
    fn mix_counts_within_one(a in 0.0f64..1.0, b in 0.0f64..1.0, total in 1usize..5000) {
        let (x, y) = (a.min(b), a.max(b));
        let mix = CollectionMix::new(x, y - x, 1.0 - y).unwrap();
        let counts = mix_counts(&mix, total);
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        for (c, f) in counts.iter().zip(mix.fractions()) {
            prop_assert!((*c as f64 - f * total as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn expert_episode_is_deterministic(seed in any::<u64>(), kind in prop::sample::select(vec![ScenarioKind::Center, ScenarioKind::Recovery, ScenarioKind::Braking])) {
        let setup = SimSetup::standard();
        let cfg = EpisodeConfig { max_time: 8.0, ..EpisodeConfig::default() };
        let a = run_episode(setup.spawn(kind, seed), &setup, &mut ExpertPolicy::default(), &cfg).unwrap();
        let b = run_episode(setup.spawn(kind, seed), &setup, &mut ExpertPolicy::default(), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn neural_control_lands_in_range(seed in any::<u64>(), fill in any::<u8>(), scale in 0.5f32..40.0) {
        let mut model = PilotNet::<f32>::build(PilotNetConfig::default(), seed).unwrap();
        let out = model.output_layer_mut();
        out.weight.data_mut().iter_mut().for_each(|w| *w *= scale);
        out.bias.data_mut().copy_from_slice(&[scale, -scale]);
        let frame = RawFrame::filled(320, 240, [fill, fill / 2, 255 - fill]);
        let c = neural_control(&model, &frame, &CropRegion::default_for(320, 240)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c.steering));
        prop_assert!((-1.0..=THROTTLE_CAP).contains(&c.throttle));
    }
}
