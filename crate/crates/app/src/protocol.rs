//! JSON messages exchanged with live-driving clients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Control { tick: u64, steer: f64, throttle: f64 },
    Record { on: bool },
    Reset { scenario: String, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hud {
    pub v: f64,
    pub d: f64,
    pub recording: bool,
    /// The last applied control had to be clamped into [-1, 1].
    pub clamped: bool,
    /// Set on the frame after an episode ended and the world was respawned.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ended: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once on connect so a client can resume via `/session/<id>`.
    Session { id: u64 },
    Frame { tick: u64, png_b64: String, hud: Hud },
    Error { msg: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }
}

pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_client_message() {
        assert_eq!(
            parse_client(r#"{"type":"control","tick":3,"steer":0.5,"throttle":-0.25}"#).unwrap(),
            ClientMessage::Control { tick: 3, steer: 0.5, throttle: -0.25 }
        );
        assert_eq!(parse_client(r#"{"type":"record","on":true}"#).unwrap(), ClientMessage::Record { on: true });
        assert_eq!(
            parse_client(r#"{"type":"reset","scenario":"braking","seed":9}"#).unwrap(),
            ClientMessage::Reset { scenario: "braking".into(), seed: 9 }
        );
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "{", r#"{"type":"warp"}"#, r#"{"type":"control","tick":1}"#, r#"{"type":"record","on":1}"#] {
            assert!(parse_client(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn frame_wire_shape() {
        let msg = ServerMessage::Frame {
            tick: 7,
            png_b64: "AAAA".into(),
            hud: Hud { v: 1.5, d: -0.25, recording: true, clamped: false, ended: None },
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["tick"], 7);
        assert_eq!(v["hud"]["v"], 1.5);
        assert_eq!(v["hud"]["recording"], true);
        assert!(v["hud"].get("ended").is_none());
        assert_eq!(ServerMessage::error("x").to_json(), r#"{"type":"error","msg":"x"}"#);
    }
}
