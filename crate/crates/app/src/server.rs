//! Websocket front end: one task per connection, sessions kept in a registry
//! so a dropped client can resume at `/session/<id>`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use e2edrive::sim::{ScenarioKind, SimSetup};
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::handshake::server::{Request, Response};
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{parse_client, ServerMessage};
use crate::session::{Session, SharedStore};

enum Slot {
    /// Paused; world frozen until a client resumes it.
    Idle(Box<Session>),
    Connected,
}

pub struct ServerState {
    setup: Arc<SimSetup>,
    control_dt: f64,
    scenario: ScenarioKind,
    seed: u64,
    store: Option<SharedStore>,
    sessions: Mutex<HashMap<u64, Slot>>,
    next_id: AtomicU64,
}

impl ServerState {
    pub fn new(setup: SimSetup, control_dt: f64, scenario: ScenarioKind, seed: u64, store: Option<SharedStore>) -> Self {
        Self {
            setup: Arc::new(setup),
            control_dt,
            scenario,
            seed,
            store,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn store(&self) -> Option<&SharedStore> {
        self.store.as_ref()
    }

    /// Ids of sessions not currently driven by a client.
    pub fn paused_sessions(&self) -> Vec<u64> {
        let map = self.sessions.lock().expect("session registry");
        let mut ids: Vec<u64> = map.iter().filter(|(_, s)| matches!(s, Slot::Idle(_))).map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids
    }

    fn checkout(&self, resume: Option<u64>) -> Result<Session, String> {
        let mut map = self.sessions.lock().expect("session registry");
        if let Some(id) = resume {
            return match map.insert(id, Slot::Connected) {
                Some(Slot::Idle(s)) => Ok(*s),
                Some(Slot::Connected) => Err(format!("session {id} already has a driver")),
                None => {
                    map.remove(&id);
                    Err(format!("no session {id}"))
                }
            };
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        map.insert(id, Slot::Connected);
        let seed = self.seed.wrapping_add(id - 1);
        Ok(Session::new(id, self.setup.clone(), self.scenario, seed, self.control_dt, self.store.clone()))
    }

    fn checkin(&self, session: Session) {
        let mut map = self.sessions.lock().expect("session registry");
        map.insert(session.id, Slot::Idle(Box::new(session)));
    }
}

fn requested_session(path: &str) -> Result<Option<u64>, String> {
    match path.trim_end_matches('/') {
        "" => Ok(None),
        p => match p.strip_prefix("/session/") {
            Some(id) => id.parse().map(Some).map_err(|_| format!("bad session id `{id}`")),
            None if p == "/session" => Ok(None),
            None => Err(format!("unknown path `{p}`")),
        },
    }
}

/// Accepts connections until the listener fails.
pub async fn run(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let state = state.clone();
        tokio::spawn(async move {
            let _ = handle_connection(stream, state).await;
        });
    }
}

async fn handle_connection(stream: TcpStream, state: Arc<ServerState>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut path = String::new();
    let ws = tokio_tungstenite::accept_hdr_async(stream, |req: &Request, resp: Response| {
        path = req.uri().path().to_string();
        Ok(resp)
    })
    .await?;
    let (mut tx, mut rx) = ws.split();

    let mut session = match requested_session(&path).and_then(|id| state.checkout(id)) {
        Ok(s) => s,
        Err(msg) => {
            tx.send(Message::text(ServerMessage::error(msg).to_json())).await?;
            tx.send(Message::Close(None)).await?;
            return Ok(());
        }
    };
    let outcome = drive(&mut session, &state, &mut tx, &mut rx).await;
    state.checkin(session);
    outcome
}

async fn drive<S, R>(
    session: &mut Session,
    state: &ServerState,
    tx: &mut S,
    rx: &mut R,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>>
where
    S: futures_util::Sink<Message, Error = tokio_tungstenite::tungstenite::Error> + Unpin,
    R: futures_util::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    tx.send(Message::text(ServerMessage::Session { id: session.id }.to_json())).await?;
    tx.send(Message::text(session.frame_message().to_json())).await?;
    let mut clock = tokio::time::interval(Duration::from_secs_f64(state.control_dt));
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    clock.tick().await;
    loop {
        tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Err(msg) = parse_client(text.as_str()).and_then(|m| session.handle(m)) {
                        tx.send(Message::text(ServerMessage::error(msg).to_json())).await?;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    tx.send(Message::text(ServerMessage::error("binary messages are not supported").to_json())).await?;
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return Ok(()),
                Some(Ok(_)) => {}
            },
            _ = clock.tick() => {
                let msg = session.step().unwrap_or_else(ServerMessage::error);
                tx.send(Message::text(msg.to_json())).await?;
            }
        }
    }
}
