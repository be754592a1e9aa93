use std::sync::{Arc, Mutex};

use base64::Engine as _;
use e2edrive::dataset::{SampleStore, Source};
use e2edrive::sim::{Control, ScenarioKind, SimSetup, PHYSICS_DT};
use e2edrive_app::protocol::{parse_client, ClientMessage, ServerMessage};
use e2edrive_app::session::{decode_png, Session, SharedStore};

fn setup() -> Arc<SimSetup> {
    Arc::new(SimSetup::standard())
}

fn session(store: Option<SharedStore>) -> Session {
    Session::new(1, setup(), ScenarioKind::Center, 5, 0.1, store)
}

fn control(tick: u64, steer: f64, throttle: f64) -> ClientMessage {
    ClientMessage::Control { tick, steer, throttle }
}

fn hud_of(msg: &ServerMessage) -> e2edrive_app::protocol::Hud {
    match msg {
        ServerMessage::Frame { hud, .. } => *hud,
        other => panic!("expected frame, got {other:?}"),
    }
}

#[test]
fn coasts_without_input() {
    let mut s = session(None);
    let v0 = s.world().ego.v;
    let mut oracle = s.world().clone();
    for expected in 1..=8 {
        match s.step().unwrap() {
            ServerMessage::Frame { tick, png_b64, .. } => {
                assert_eq!(tick, expected);
                let png = base64::engine::general_purpose::STANDARD.decode(png_b64).unwrap();
                assert_eq!(decode_png(&png).unwrap(), *s.shown_frame());
            }
            other => panic!("{other:?}"),
        }
    }
    for _ in 0..8 * 2 {
        oracle.advance(Control::ZERO, PHYSICS_DT).unwrap();
    }
    assert!(s.world().ego.v < v0);
    assert_eq!(s.world().ego, oracle.ego);
}

#[test]
fn next_tick_applies_exactly_the_sent_control() {
    let mut s = session(None);
    let mut oracle = s.world().clone();
    s.handle(control(0, 0.5, 0.3)).unwrap();
    s.step().unwrap();
    for _ in 0..2 {
        oracle.advance(Control::new(0.5, 0.3), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
    // Held until replaced.
    s.step().unwrap();
    for _ in 0..2 {
        oracle.advance(Control::new(0.5, 0.3), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
}

#[test]
fn latest_wins_and_stale_controls_dropped() {
    let mut s = session(None);
    let mut oracle = s.world().clone();
    s.handle(control(5, 0.2, 0.0)).unwrap();
    s.handle(control(3, -0.9, 0.0)).unwrap();
    s.step().unwrap();
    for _ in 0..2 {
        oracle.advance(Control::new(0.2, 0.0), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
    // Older than the applied tick 5: dropped, previous control held.
    s.handle(control(4, -0.9, 0.0)).unwrap();
    s.step().unwrap();
    for _ in 0..2 {
        oracle.advance(Control::new(0.2, 0.0), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
    // Several arrivals within one tick: the most recent wins.
    s.handle(control(6, 0.1, 0.1)).unwrap();
    s.handle(control(6, -0.1, 0.2)).unwrap();
    s.step().unwrap();
    for _ in 0..2 {
        oracle.advance(Control::new(-0.1, 0.2), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
}

#[test]
fn out_of_range_is_clamped_and_flagged_once() {
    let mut s = session(None);
    let mut oracle = s.world().clone();
    s.handle(control(0, 1.7, -3.0)).unwrap();
    let hud = hud_of(&s.step().unwrap());
    assert!(hud.clamped);
    for _ in 0..2 {
        oracle.advance(Control::new(1.0, -1.0), PHYSICS_DT).unwrap();
    }
    assert_eq!(s.world(), &oracle);
    assert!(!hud_of(&s.step().unwrap()).clamped);
}

#[test]
fn invalid_messages_leave_session_running() {
    let mut s = session(None);
    assert!(s.handle(control(0, f64::NAN, 0.0)).is_err());
    assert!(s.handle(control(0, 0.0, f64::INFINITY)).is_err());
    assert!(s.handle(ClientMessage::Reset { scenario: "offroad".into(), seed: 1 }).is_err());
    assert!(parse_client("{\"type\":\"control\"}").is_err());
    assert!(s.step().is_ok());
    assert_eq!(s.tick(), 1);
}

#[test]
fn recording_without_store_is_refused() {
    let mut s = session(None);
    assert!(s.handle(ClientMessage::Record { on: true }).is_err());
    assert!(!s.recording());
}

#[test]
fn hundred_recorded_ticks_give_hundred_samples() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Mutex::new(SampleStore::create(dir.path(), 320, 240).unwrap()));
    let mut s = session(Some(store.clone()));
    s.step().unwrap();
    s.handle(ClientMessage::Record { on: true }).unwrap();
    let mut expected = Vec::new();
    for tick in 1..=100u64 {
        let steer = ((tick as f64) * 0.37).sin() * 0.3;
        s.handle(control(tick, steer, 0.4)).unwrap();
        let shown = s.shown_frame().clone();
        let hud = hud_of(&s.step().unwrap());
        assert!(hud.recording);
        expected.push((shown, steer as f32));
    }
    s.handle(ClientMessage::Record { on: false }).unwrap();
    for _ in 0..10 {
        s.step().unwrap();
    }
    assert_eq!(s.recorded(), 100);
    let store = store.lock().unwrap();
    assert_eq!(store.len(), 100);
    let samples = store.read_all().unwrap();
    for (sample, (frame, steer)) in samples.iter().zip(&expected) {
        assert_eq!(sample.source, Source::Human);
        assert_eq!(&sample.frame, frame);
        assert_eq!(sample.steering, *steer);
        assert_eq!(sample.throttle, 0.4);
    }
}

#[test]
fn reset_respawns_requested_scenario() {
    let mut s = session(None);
    s.handle(ClientMessage::Reset { scenario: "recovery".into(), seed: 9 }).unwrap();
    let expect = setup().spawn(ScenarioKind::Recovery, 9);
    assert_eq!(s.world().ego, expect.ego);
}

#[test]
fn sessions_do_not_share_worlds() {
    let shared = setup();
    let mut a = Session::new(1, shared.clone(), ScenarioKind::Center, 5, 0.1, None);
    let b = Session::new(2, shared, ScenarioKind::Center, 5, 0.1, None);
    a.handle(control(0, 1.0, 1.0)).unwrap();
    a.step().unwrap();
    assert_ne!(a.world().ego, b.world().ego);
    assert_eq!(b.tick(), 0);
}
