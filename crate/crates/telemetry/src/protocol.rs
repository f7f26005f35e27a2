//! JSON frames exchanged over the WebSocket. Every frame carries `type`,
//! `tick` and the protocol version `v`.

use crossway_core::sim::snapshot::Snapshot;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Human driving input as submitted by a client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Assigned by the server per connection; any client-supplied value is overwritten.
    #[serde(default)]
    pub client_id: u64,
    pub throttle: f64,
    pub brake: f64,
    /// Client clock, ms.
    #[serde(default)]
    pub timestamp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum SessionCommand {
    Start,
    Pause,
    Reset,
    /// Replaces the running scenario; `scenario` is the scenario file contents.
    Load { scenario: serde_json::Value },
}

impl SessionCommand {
    pub fn name(&self) -> &'static str {
        match self {
            SessionCommand::Start => "start",
            SessionCommand::Pause => "pause",
            SessionCommand::Reset => "reset",
            SessionCommand::Load { .. } => "load",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Control {
        v: u32,
        /// Last tick the client saw.
        tick: u64,
        #[serde(flatten)]
        input: ControlInput,
    },
    Session {
        v: u32,
        tick: u64,
        #[serde(flatten)]
        command: SessionCommand,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NoEgo,
    BadScenario,
    BadFrame,
    UnsupportedVersion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Snapshot {
        v: u32,
        #[serde(flatten)]
        snapshot: Snapshot,
    },
    Ack {
        v: u32,
        tick: u64,
        command: String,
    },
    Error {
        v: u32,
        tick: u64,
        code: ErrorCode,
        message: String,
    },
}

impl ServerFrame {
    pub fn snapshot(snapshot: Snapshot) -> Self {
        ServerFrame::Snapshot {
            v: PROTOCOL_VERSION,
            snapshot,
        }
    }

    pub fn ack(tick: u64, command: &str) -> Self {
        ServerFrame::Ack {
            v: PROTOCOL_VERSION,
            tick,
            command: command.to_owned(),
        }
    }

    pub fn error(tick: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        ServerFrame::Error {
            v: PROTOCOL_VERSION,
            tick,
            code,
            message: message.into(),
        }
    }

    pub fn tick(&self) -> u64 {
        match self {
            ServerFrame::Snapshot { snapshot, .. } => snapshot.tick,
            ServerFrame::Ack { tick, .. } | ServerFrame::Error { tick, .. } => *tick,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}

/// Parses a client frame, rejecting other protocol versions.
pub fn parse_client_frame(text: &str) -> Result<ClientFrame, (ErrorCode, String)> {
    let frame: ClientFrame = serde_json::from_str(text).map_err(|e| (ErrorCode::BadFrame, e.to_string()))?;
    let v = match &frame {
        ClientFrame::Control { v, .. } | ClientFrame::Session { v, .. } => *v,
    };
    if v != PROTOCOL_VERSION {
        return Err((ErrorCode::UnsupportedVersion, format!("protocol v{v}, server speaks v{PROTOCOL_VERSION}")));
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crossway_core::sim::{ScenarioConfig, Simulation};

    #[test]
    fn control_frame_parses() {
        let f = parse_client_frame(r#"{"type":"control","v":1,"tick":7,"throttle":0.5,"brake":0,"timestamp":12.5}"#).unwrap();
        let ClientFrame::Control { tick, input, .. } = f else { panic!() };
        assert_eq!(tick, 7);
        assert_eq!(input.throttle, 0.5);
        assert_eq!(input.client_id, 0);
    }

    #[test]
    fn session_frames_parse() {
        let f = parse_client_frame(r#"{"type":"session","v":1,"tick":0,"cmd":"pause"}"#).unwrap();
        assert!(matches!(f, ClientFrame::Session { command: SessionCommand::Pause, .. }));
        let f = parse_client_frame(r#"{"type":"session","v":1,"tick":0,"cmd":"load","scenario":{"seed":3}}"#).unwrap();
        let ClientFrame::Session { command: SessionCommand::Load { scenario }, .. } = f else { panic!() };
        assert_eq!(scenario["seed"], 3);
    }

    #[test]
    fn wrong_version_or_shape_rejected() {
        let e = parse_client_frame(r#"{"type":"session","v":2,"tick":0,"cmd":"start"}"#).unwrap_err();
        assert_eq!(e.0, ErrorCode::UnsupportedVersion);
        let e = parse_client_frame(r#"{"type":"dance","v":1,"tick":0}"#).unwrap_err();
        assert_eq!(e.0, ErrorCode::BadFrame);
    }

    #[test]
    fn snapshot_frame_round_trips() {
        let mut cfg = ScenarioConfig { duration: 10.0, ..Default::default() };
        cfg.spawn.rate_per_leg = 0.3;
        let mut sim = Simulation::new(cfg).unwrap();
        for _ in 0..200 {
            sim.step();
        }
        let frame = ServerFrame::snapshot(sim.snapshot(false));
        let text = frame.to_json();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["type"], "snapshot");
        assert_eq!(json["v"], PROTOCOL_VERSION);
        assert_eq!(json["tick"], 200);
        assert_eq!(serde_json::from_str::<ServerFrame>(&text).unwrap(), frame);
    }

    #[test]
    fn ack_and_error_carry_tick() {
        let a: serde_json::Value = serde_json::from_str(&ServerFrame::ack(5, "start").to_json()).unwrap();
        assert_eq!((a["type"].as_str(), a["tick"].as_u64()), (Some("ack"), Some(5)));
        let e: serde_json::Value =
            serde_json::from_str(&ServerFrame::error(9, ErrorCode::NoEgo, "x").to_json()).unwrap();
        assert_eq!(e["code"], "no_ego");
        assert_eq!(e["tick"], 9);
    }
}
