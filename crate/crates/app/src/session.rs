//! Deterministic per-client driving session, independent of transport.

use std::sync::{Arc, Mutex};

use base64::Engine as _;
use e2edrive::dataset::{Sample, SampleStore, Source};
use e2edrive::sim::{check_termination, Control, ScenarioKind, SimSetup, TerminationCause, WorldState, PHYSICS_DT};
use e2edrive::vision::RawFrame;

use crate::protocol::{ClientMessage, Hud, ServerMessage};

/// Append-only sample store shared by every session; the mutex serializes
/// writes.
pub type SharedStore = Arc<Mutex<SampleStore>>;

pub struct Session {
    pub id: u64,
    setup: Arc<SimSetup>,
    world: WorldState,
    scenario: ScenarioKind,
    seed: u64,
    substeps: usize,
    tick: u64,
    held: Control,
    pending: Option<(u64, Control, bool)>,
    last_applied: Option<u64>,
    clamped: bool,
    recording: bool,
    recorded: usize,
    shown: RawFrame,
    ended: Option<TerminationCause>,
    store: Option<SharedStore>,
}

impl Session {
    pub fn new(
        id: u64,
        setup: Arc<SimSetup>,
        scenario: ScenarioKind,
        seed: u64,
        control_dt: f64,
        store: Option<SharedStore>,
    ) -> Self {
        let substeps = ((control_dt / PHYSICS_DT).round() as usize).max(1);
        let world = setup.spawn(scenario, seed);
        let shown = setup.render(&world);
        Self {
            id,
            setup,
            world,
            scenario,
            seed,
            substeps,
            tick: 0,
            held: Control::ZERO,
            pending: None,
            last_applied: None,
            clamped: false,
            recording: false,
            recorded: 0,
            shown,
            ended: None,
            store,
        }
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    /// Samples this session has appended to the store.
    pub fn recorded(&self) -> usize {
        self.recorded
    }

    /// Frame currently on the client's screen.
    pub fn shown_frame(&self) -> &RawFrame {
        &self.shown
    }

    /// Applies one client message. Stale controls are dropped silently;
    /// invalid ones return an error for the client and change nothing.
    pub fn handle(&mut self, msg: ClientMessage) -> Result<(), String> {
        match msg {
            ClientMessage::Control { tick, steer, throttle } => {
                if !steer.is_finite() || !throttle.is_finite() {
                    return Err(format!("control ({steer}, {throttle}) is not finite"));
                }
                let newest = self.pending.map(|p| p.0).into_iter().chain(self.last_applied).max();
                if newest.is_some_and(|n| tick < n) {
                    return Ok(());
                }
                let raw = Control::new(steer as f32, throttle as f32);
                let (c, clamped) = raw.clamped();
                let clamped = clamped || steer.abs() > 1.0 || throttle.abs() > 1.0;
                self.pending = Some((tick, c, clamped));
                Ok(())
            }
            ClientMessage::Record { on } => {
                if on && self.store.is_none() {
                    return Err("recording is disabled on this server".into());
                }
                self.recording = on;
                if !on {
                    self.flush_store()?;
                }
                Ok(())
            }
            ClientMessage::Reset { scenario, seed } => {
                let kind = scenario
                    .parse::<ScenarioKind>()
                    .ok()
                    .filter(|k| *k != ScenarioKind::Standstill)
                    .ok_or_else(|| format!("unknown scenario `{scenario}`; expected center, recovery or braking"))?;
                self.scenario = kind;
                self.seed = seed;
                self.respawn();
                Ok(())
            }
        }
    }

    fn respawn(&mut self) {
        self.world = self.setup.spawn(self.scenario, self.seed);
        self.held = Control::ZERO;
        self.pending = None;
        self.shown = self.setup.render(&self.world);
    }

    fn flush_store(&self) -> Result<(), String> {
        if let Some(store) = &self.store {
            store.lock().map_err(|_| "sample store poisoned".to_string())?.flush().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Advances one control tick with the latest control, records the pair
    /// (shown frame, applied control) when recording, and renders the next
    /// frame.
    pub fn step(&mut self) -> Result<ServerMessage, String> {
        self.clamped = false;
        if let Some((tick, c, clamped)) = self.pending.take() {
            self.held = c;
            self.last_applied = Some(tick);
            self.clamped = clamped;
        }
        if self.recording {
            let sample = Sample {
                frame: self.shown.clone(),
                steering: self.held.steering,
                throttle: self.held.throttle,
                source: Source::Human,
                timestamp: self.world.time,
            };
            let store = self.store.as_ref().expect("recording requires a store");
            let appended = store.lock().map_err(|_| "sample store poisoned".to_string())?.append(&sample);
            if let Err(e) = appended {
                self.recording = false;
                return Err(format!("recording stopped: {e}"));
            }
            self.recorded += 1;
        }
        self.ended = None;
        for _ in 0..self.substeps {
            self.world.advance(self.held, PHYSICS_DT).map_err(|e| e.to_string())?;
            if let Some(cause) = check_termination(&self.world) {
                self.ended = Some(cause);
                self.seed = self.seed.wrapping_add(1);
                self.respawn();
                break;
            }
        }
        self.tick += 1;
        self.shown = self.setup.render(&self.world);
        Ok(self.frame_message())
    }

    pub fn hud(&self) -> Hud {
        Hud {
            v: self.world.ego.v,
            d: self.world.ego.d,
            recording: self.recording,
            clamped: self.clamped,
            ended: self.ended.map(|c| c.as_str()),
        }
    }

    pub fn frame_message(&self) -> ServerMessage {
        ServerMessage::Frame {
            tick: self.tick,
            png_b64: base64::engine::general_purpose::STANDARD.encode(encode_png(&self.shown)),
            hud: self.hud(),
        }
    }
}

pub fn encode_png(frame: &RawFrame) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width() as u32, frame.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(frame.pixels()).expect("in-memory png body");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RawFrame, String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err("expected 8-bit RGB png".into());
    }
    buf.truncate(info.buffer_size());
    RawFrame::new(info.width as usize, info.height as usize, buf).map_err(|e| e.to_string())
}
