//! Simulation session driven by the server loop: lifecycle commands, HITL
//! input and decimated snapshots. Purely synchronous.

use crate::protocol::{ControlInput, SessionCommand};
use crate::TelemetryError;
use crossway_core::sim::snapshot::Snapshot;
use crossway_core::sim::{PedalInput, ScenarioConfig, SimError, Simulation};

pub struct Session {
    cfg: ScenarioConfig,
    sim: Simulation,
    paused: bool,
    decimation: u32,
    iterations: u64,
}

fn build(cfg: &ScenarioConfig) -> Result<Simulation, TelemetryError> {
    Ok(Simulation::new(cfg.clone())?.with_trace())
}

impl Session {
    /// Scenarios with a driven vehicle start paused and wait for a `start`.
    pub fn new(cfg: ScenarioConfig, decimation: u32) -> Result<Self, TelemetryError> {
        let sim = build(&cfg)?;
        Ok(Self {
            paused: cfg.hitl.is_some(),
            cfg,
            sim,
            decimation: decimation.max(1),
            iterations: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn finished(&self) -> bool {
        self.sim.finished()
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick()
    }

    pub fn command(&mut self, cmd: SessionCommand) -> Result<(), TelemetryError> {
        match cmd {
            SessionCommand::Start => self.paused = false,
            SessionCommand::Pause => self.paused = true,
            SessionCommand::Reset => {
                self.sim = build(&self.cfg)?;
                self.paused = true;
            }
            SessionCommand::Load { scenario } => {
                let cfg: ScenarioConfig =
                    serde_json::from_value(scenario).map_err(|e| TelemetryError::BadScenario(e.to_string()))?;
                cfg.validate().map_err(|e| TelemetryError::BadScenario(e.to_string()))?;
                self.sim = build(&cfg)?;
                self.cfg = cfg;
                self.paused = true;
            }
        }
        Ok(())
    }

    /// Queues pedal input for the next tick; later inputs in the same tick replace earlier ones.
    pub fn ingest_control(&mut self, input: ControlInput) -> Result<PedalInput, TelemetryError> {
        let (pedal, changed) = PedalInput {
            throttle: input.throttle,
            brake: input.brake,
        }
        .clamped();
        self.sim.set_input(pedal).map_err(|e| match e {
            SimError::NoEgo => TelemetryError::NoEgo,
            other => TelemetryError::Sim(other),
        })?;
        if changed {
            log::warn!(
                "client {} input out of range (throttle {}, brake {}), clamped",
                input.client_id,
                input.throttle,
                input.brake
            );
        }
        Ok(pedal)
    }

    /// One loop iteration: steps unless paused or finished, and returns a
    /// snapshot every `decimation` iterations.
    pub fn advance(&mut self) -> Option<Snapshot> {
        if !self.paused && !self.sim.finished() {
            self.sim.step();
        }
        self.iterations += 1;
        (self.iterations % self.decimation as u64 == 0).then(|| self.sim.snapshot(self.paused))
    }

    pub fn trace_csv(&self) -> Option<&str> {
        self.sim.trace_csv()
    }
}
