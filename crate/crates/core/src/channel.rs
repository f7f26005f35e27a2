//! Lossy, delayed vehicle-to-vehicle message channel with per-link blackout tracking.

use crate::VehicleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Inverse Mills ratio φ(a) / (1 − Φ(a)).
fn mills(a: f64) -> f64 {
    let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    pdf / (0.5 * libm::erfc(a / std::f64::consts::SQRT_2))
}

/// Normal (mu, sigma) whose restriction to [0, ∞) has the given mean and std.
fn truncated_normal_params(mean: f64, std: f64) -> Option<(f64, f64)> {
    if !(mean > 0.0 && std > 0.0 && std < mean) {
        return None;
    }
    // With a = −mu/sigma the truncated moments are mean = sigma·(λ − a) and
    // std = sigma·sqrt(1 + aλ − λ²); their ratio depends on a alone and rises with it.
    let ratio = |a: f64| {
        let l = mills(a);
        (1.0 + a * l - l * l).max(0.0).sqrt() / (l - a)
    };
    let target = std / mean;
    let (mut lo, mut hi) = (-60.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let sigma = mean / (mills(a) - a);
    Some((-a * sigma, sigma))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// s
    pub delay_mean: f64,
    /// s
    pub delay_std: f64,
    pub p_random_loss: f64,
    /// Total-loss intervals `[start, end]`, s, sorted and disjoint.
    pub burst_windows: Vec<[f64; 2]>,
    /// s
    pub fail_safe_threshold: f64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            delay_mean: 0.040,
            delay_std: 0.0259,
            p_random_loss: 0.05,
            burst_windows: Vec::new(),
            fail_safe_threshold: 2.0,
            rng_seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Delay only: no random loss and no bursts.
    pub fn delay_only() -> Self {
        Self {
            p_random_loss: 0.0,
            ..Self::default()
        }
    }

    /// Zero delay and no loss.
    pub fn perfect() -> Self {
        Self {
            delay_mean: 0.0,
            delay_std: 0.0,
            p_random_loss: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.delay_mean >= 0.0 && self.delay_std >= 0.0) {
            return Err(ChannelError::InvalidConfig(
                "delay mean and std must be nonnegative",
            ));
        }
        if !(0.0..=1.0).contains(&self.p_random_loss) {
            return Err(ChannelError::InvalidConfig(
                "loss probability outside [0, 1]",
            ));
        }
        if !(self.fail_safe_threshold > 0.0) {
            return Err(ChannelError::InvalidConfig(
                "fail-safe threshold must be positive",
            ));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for w in &self.burst_windows {
            if !(w[0] < w[1]) || w[0] < prev_end {
                return Err(ChannelError::InvalidConfig(
                    "burst windows must be sorted and disjoint",
                ));
            }
            prev_end = w[1];
        }
        self.sampling_normal()?;
        Ok(())
    }

    /// Parameters of the normal whose nonnegative part has `delay_mean` and
    /// `delay_std` as its moments; `None` for a fixed delay.
    pub fn sampling_normal(&self) -> Result<Option<(f64, f64)>, ChannelError> {
        if self.delay_std == 0.0 {
            return Ok(None);
        }
        truncated_normal_params(self.delay_mean, self.delay_std)
            .map(Some)
            .ok_or(ChannelError::InvalidConfig("delay std must be below the delay mean"))
    }

    pub fn in_burst(&self, t: f64) -> bool {
        self.burst_windows.iter().any(|w| t >= w[0] && t <= w[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMessage<P> {
    pub sender: VehicleId,
    pub receiver: VehicleId,
    pub sent_at: f64,
    pub payload: P,
    /// `None` when dropped.
    pub deliver_at: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStatus {
    pub sender: VehicleId,
    pub receiver: VehicleId,
    pub last_delivery_at: f64,
    pub blackout: f64,
    pub failsafe_active: bool,
}

impl LinkStatus {
    pub fn new(sender: VehicleId, receiver: VehicleId, now: f64) -> Self {
        Self {
            sender,
            receiver,
            last_delivery_at: now,
            blackout: 0.0,
            failsafe_active: false,
        }
    }
}

/// Recomputes the blackout; activation above the threshold, release below half of it.
pub fn update_link_status(link: &LinkStatus, now: f64, cfg: &ChannelConfig) -> LinkStatus {
    let blackout = (now - link.last_delivery_at).max(0.0);
    let failsafe_active = if link.failsafe_active {
        blackout >= cfg.fail_safe_threshold / 2.0
    } else {
        blackout > cfg.fail_safe_threshold
    };
    LinkStatus {
        blackout,
        failsafe_active,
        ..*link
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeliveryRecord {
    pub sender: VehicleId,
    pub receiver: VehicleId,
    pub sent_at: f64,
    pub deliver_at: Option<f64>,
}

pub struct Channel<P> {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    in_flight: BTreeMap<VehicleId, Vec<ChannelMessage<P>>>,
    last_sent_seen: BTreeMap<(VehicleId, VehicleId), f64>,
    links: BTreeMap<(VehicleId, VehicleId), LinkStatus>,
    log: Option<Vec<DeliveryRecord>>,
    sent: u64,
    dropped: u64,
}

impl<P: Clone> Channel<P> {
    pub fn new(cfg: ChannelConfig) -> Result<Self, ChannelError> {
        cfg.validate()?;
        let normal = match cfg.sampling_normal()? {
            Some((mu, sigma)) => {
                Some(Normal::new(mu, sigma).map_err(|_| ChannelError::InvalidConfig("delay"))?)
            }
            None => None,
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            normal,
            in_flight: BTreeMap::new(),
            last_sent_seen: BTreeMap::new(),
            links: BTreeMap::new(),
            log: None,
            sent: 0,
            dropped: 0,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.sent, self.dropped)
    }

    /// One nonnegative delay draw, resampling negative values.
    pub fn sample_delay(&mut self) -> f64 {
        match &self.normal {
            None => self.cfg.delay_mean,
            Some(n) => loop {
                let d = n.sample(&mut self.rng);
                if d >= 0.0 {
                    break d;
                }
            },
        }
    }

    /// Queues a message, returning its delivery time or `None` when dropped.
    pub fn send(
        &mut self,
        sender: VehicleId,
        receiver: VehicleId,
        now: f64,
        payload: P,
    ) -> Option<f64> {
        self.sent += 1;
        let mut deliver_at = None;
        if !self.cfg.in_burst(now) {
            let lost =
                self.cfg.p_random_loss > 0.0 && self.rng.random::<f64>() < self.cfg.p_random_loss;
            if !lost {
                let at = now + self.sample_delay();
                if !self.cfg.in_burst(at) {
                    deliver_at = Some(at);
                }
            }
        }
        if let Some(log) = &mut self.log {
            log.push(DeliveryRecord {
                sender,
                receiver,
                sent_at: now,
                deliver_at,
            });
        }
        match deliver_at {
            Some(_) => self
                .in_flight
                .entry(receiver)
                .or_default()
                .push(ChannelMessage {
                    sender,
                    receiver,
                    sent_at: now,
                    payload,
                    deliver_at,
                }),
            None => self.dropped += 1,
        }
        deliver_at
    }

    /// Messages for `receiver` due by `now`, in sent order, with stale ones discarded.
    pub fn poll(&mut self, receiver: VehicleId, now: f64) -> Vec<ChannelMessage<P>> {
        let Some(queue) = self.in_flight.get_mut(&receiver) else {
            return Vec::new();
        };
        let mut due = Vec::new();
        let mut i = 0;
        while i < queue.len() {
            if queue[i].deliver_at.is_some_and(|d| d <= now) {
                due.push(queue.swap_remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by(|a, b| {
            a.sent_at
                .total_cmp(&b.sent_at)
                .then(a.sender.cmp(&b.sender))
        });
        let mut out = Vec::with_capacity(due.len());
        for m in due {
            let key = (m.sender, m.receiver);
            if self
                .last_sent_seen
                .get(&key)
                .is_some_and(|&seen| m.sent_at <= seen)
            {
                continue;
            }
            self.last_sent_seen.insert(key, m.sent_at);
            if let Some(link) = self.links.get_mut(&key) {
                link.last_delivery_at = link.last_delivery_at.max(m.deliver_at.unwrap_or(now));
            }
            out.push(m);
        }
        out
    }

    pub fn open_link(&mut self, sender: VehicleId, receiver: VehicleId, now: f64) {
        self.links
            .entry((sender, receiver))
            .or_insert_with(|| LinkStatus::new(sender, receiver, now));
    }

    pub fn close_link(&mut self, sender: VehicleId, receiver: VehicleId) {
        self.links.remove(&(sender, receiver));
    }

    /// Forgets everything about a vehicle that left the simulation.
    pub fn remove_vehicle(&mut self, id: VehicleId) {
        self.in_flight.remove(&id);
        self.links.retain(|(s, r), _| *s != id && *r != id);
        self.last_sent_seen.retain(|(s, r), _| *s != id && *r != id);
    }

    pub fn link(&self, sender: VehicleId, receiver: VehicleId) -> Option<&LinkStatus> {
        self.links.get(&(sender, receiver))
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkStatus> {
        self.links.values()
    }

    pub fn update_links(&mut self, now: f64) {
        for link in self.links.values_mut() {
            *link = update_link_status(link, now, &self.cfg);
        }
    }

    pub fn delivery_log_csv(&self) -> String {
        let mut out = String::from("sent_at,deliver_at,sender,receiver\n");
        for r in self.log() {
            let at = r
                .deliver_at
                .map_or("DROPPED".to_string(), |d| format!("{d:.6}"));
            let _ = writeln!(out, "{:.6},{},{},{}", r.sent_at, at, r.sender, r.receiver);
        }
        out
    }
}
