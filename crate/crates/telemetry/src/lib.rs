//! WebSocket telemetry and driving-session server for the crossway simulator.
//!
//! The simulation runs on one task and talks to clients only through two
//! bounded queues: a broadcast of serialized snapshots, where slow clients
//! skip to the newest frame, and an inbound queue of control and session
//! messages that the loop drains between ticks.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientFrame, ControlInput, ErrorCode, ServerFrame, SessionCommand, PROTOCOL_VERSION};
pub use server::{recv_latest, Server, ServerConfig, SessionOutcome};
pub use session::Session;

pub const DEFAULT_PORT: u16 = 8765;
pub const DEFAULT_DECIMATION: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("scenario has no driven vehicle")]
    NoEgo,
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Sim(#[from] crossway_core::sim::SimError),
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TelemetryError {
    pub fn code(&self) -> ErrorCode {
        match self {
            TelemetryError::NoEgo => ErrorCode::NoEgo,
            TelemetryError::BadScenario(_) | TelemetryError::Sim(_) => ErrorCode::BadScenario,
            TelemetryError::Bind { .. } | TelemetryError::Io(_) => ErrorCode::BadFrame,
        }
    }
}
