//! Renderer-side frame-pair synchronization and a seeded network simulator.
//!
//! Depth and color halves of a pair travel on separate channels. The
//! renderer shows the lowest outstanding frame once both halves are in,
//! gives up on it `out_of_order_wait_ms` after its first half arrived, and
//! jumps to the newest complete frame once that frame is `max_lag_ms` or
//! more of capture time ahead of the frame on screen.
//!
//! All times are integer microseconds of virtual time.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::FramePair;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("invalid sync policy: {0}")]
    Policy(String),
    #[error("invalid channel model: {0}")]
    Channel(String),
    #[error("packets out of arrival order: {next_us} µs after {previous_us} µs")]
    Ordering { previous_us: u64, next_us: u64 },
    #[error("packet for frame {frame_number} arrives before it was sent")]
    Causality { frame_number: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Depth,
    Color,
}

impl Channel {
    fn index(self) -> u64 {
        match self {
            Channel::Depth => 0,
            Channel::Color => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamPacket {
    pub channel: Channel,
    pub frame_number: u32,
    pub send_time_us: u64,
    pub arrival_time_us: u64,
    /// Index of the originating pair in the simulated sequence.
    pub payload: usize,
}

impl StreamPacket {
    pub fn new(channel: Channel, frame_number: u32, send_time_us: u64, arrival_time_us: u64) -> Result<Self, SyncError> {
        if arrival_time_us < send_time_us {
            return Err(SyncError::Causality { frame_number });
        }
        Ok(Self {
            channel,
            frame_number,
            send_time_us,
            arrival_time_us,
            payload: frame_number as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncPolicy {
    pub out_of_order_wait_ms: u64,
    pub max_lag_ms: u64,
    pub delivery_fps: u32,
    pub capture_fps: u32,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        Self {
            out_of_order_wait_ms: 100,
            max_lag_ms: 200,
            delivery_fps: 15,
            capture_fps: 30,
        }
    }
}

impl SyncPolicy {
    pub fn validate(&self) -> Result<(), SyncError> {
        let fail = |m: &str| Err(SyncError::Policy(m.to_string()));
        if self.out_of_order_wait_ms == 0 || self.max_lag_ms == 0 {
            return fail("wait and lag must be positive");
        }
        if self.delivery_fps == 0 || self.capture_fps == 0 {
            return fail("frame rates must be positive");
        }
        if self.delivery_fps > self.capture_fps {
            return fail("delivery rate exceeds capture rate");
        }
        Ok(())
    }

    /// True when `frames` of capture time amount to at least `max_lag_ms`.
    fn lag_exceeded(&self, frames: u32) -> bool {
        u64::from(frames) * 1000 >= self.max_lag_ms * u64::from(self.capture_fps)
    }

    /// Every `decimation()`-th captured pair is delivered.
    pub fn decimation(&self) -> usize {
        ((self.capture_fps as f64 / self.delivery_fps as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Render(u32),
    Skip(u32),
    JumpTo(u32),
    Wait,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Render(_) => "render",
            Action::Skip(_) => "skip",
            Action::JumpTo(_) => "jump_to",
            Action::Wait => "wait",
        }
    }

    pub fn frame_number(&self) -> Option<u32> {
        match *self {
            Action::Render(n) | Action::Skip(n) | Action::JumpTo(n) => Some(n),
            Action::Wait => None,
        }
    }

    /// Render and jump both put a frame on screen.
    pub fn shows_frame(&self) -> Option<u32> {
        match *self {
            Action::Render(n) | Action::JumpTo(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RenderDecision {
    pub time_us: u64,
    pub action: Action,
}

impl RenderDecision {
    pub fn time_ms(&self) -> f64 {
        self.time_us as f64 / 1000.0
    }
}

impl fmt::Display for RenderDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03},{},", self.time_us / 1000, self.time_us % 1000, self.action.name())?;
        if let Some(n) = self.action.frame_number() {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// Decision log as `time_ms,action,frame_number` rows with a header.
pub fn decisions_csv(decisions: &[RenderDecision]) -> String {
    let mut out = String::from("time_ms,action,frame_number\n");
    for d in decisions {
        writeln!(out, "{d}").expect("writing to a string");
    }
    out
}

/// Every distinct frame number seen ends up in exactly one of `rendered`,
/// `jumps`, `skipped` or `superseded`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SyncStats {
    pub frames: u64,
    pub rendered: u64,
    pub jumps: u64,
    pub skipped: u64,
    pub superseded: u64,
    /// Mean of (display time − send time) over rendered and jumped-to frames.
    pub mean_render_latency_ms: f64,
}

impl SyncStats {
    pub fn is_conserved(&self) -> bool {
        self.rendered + self.jumps + self.skipped + self.superseded == self.frames
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    first_arrival_us: u64,
    send_us: u64,
    depth: bool,
    color: bool,
}

impl Pending {
    fn complete(&self) -> bool {
        self.depth && self.color
    }
}

/// Incremental synchronizer. Feed packets in arrival order with
/// [`push`](Self::push), advance idle time with [`poll`](Self::poll) and
/// drain outstanding frames with [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct Synchronizer {
    policy: SyncPolicy,
    wait_us: u64,
    pending: BTreeMap<u32, Pending>,
    seen: HashSet<u32>,
    /// Frames below the cursor are settled.
    cursor: u32,
    /// Frame last rendered, skipped or jumped to.
    position: Option<u32>,
    /// First frame seen; stands in for `position` until something is shown.
    origin: Option<u32>,
    /// Time the cursor last moved; a head frame cannot time out earlier.
    head_since_us: u64,
    last_arrival_us: u64,
    stats: SyncStats,
    latency_sum_us: u64,
}

impl Synchronizer {
    pub fn new(policy: SyncPolicy) -> Result<Self, SyncError> {
        policy.validate()?;
        Ok(Self {
            policy,
            wait_us: policy.out_of_order_wait_ms * 1000,
            pending: BTreeMap::new(),
            seen: HashSet::new(),
            cursor: 0,
            position: None,
            origin: None,
            head_since_us: 0,
            last_arrival_us: 0,
            stats: SyncStats::default(),
            latency_sum_us: 0,
        })
    }

    pub fn policy(&self) -> &SyncPolicy {
        &self.policy
    }

    pub fn stats(&self) -> SyncStats {
        let mut s = self.stats;
        let shown = s.rendered + s.jumps;
        if shown > 0 {
            s.mean_render_latency_ms = self.latency_sum_us as f64 / shown as f64 / 1000.0;
        }
        s
    }

    /// Frame currently on screen or last given up on.
    pub fn position(&self) -> Option<u32> {
        self.position
    }

    pub fn push(&mut self, packet: StreamPacket) -> Result<Vec<RenderDecision>, SyncError> {
        let t = packet.arrival_time_us;
        if t < self.last_arrival_us {
            return Err(SyncError::Ordering {
                previous_us: self.last_arrival_us,
                next_us: t,
            });
        }
        if t < packet.send_time_us {
            return Err(SyncError::Causality {
                frame_number: packet.frame_number,
            });
        }
        self.last_arrival_us = t;
        let mut out = Vec::new();
        // a half arriving exactly at the deadline still counts
        self.expire(|d| d < t, &mut out);
        self.accept(&packet);
        self.settle(t, &mut out);
        Ok(out)
    }

    /// Applies every timeout up to and including `now`. Returns a single
    /// `Wait` when nothing happened but a frame is outstanding.
    pub fn poll(&mut self, now_us: u64) -> Vec<RenderDecision> {
        let mut out = Vec::new();
        self.expire(|d| d <= now_us, &mut out);
        if out.is_empty() && !self.pending.is_empty() {
            out.push(RenderDecision {
                time_us: now_us,
                action: Action::Wait,
            });
        }
        out
    }

    /// Times out every outstanding frame.
    pub fn finish(&mut self) -> Vec<RenderDecision> {
        let mut out = Vec::new();
        self.expire(|_| true, &mut out);
        out
    }

    fn accept(&mut self, p: &StreamPacket) {
        let n = p.frame_number;
        let first = self.seen.insert(n);
        if first {
            self.stats.frames += 1;
            self.origin.get_or_insert(n);
        }
        if n < self.cursor {
            // late half of a frame that is already settled, or one jumped over
            if first {
                self.stats.superseded += 1;
            }
            return;
        }
        let entry = self.pending.entry(n).or_insert(Pending {
            first_arrival_us: p.arrival_time_us,
            send_us: p.send_time_us,
            depth: false,
            color: false,
        });
        match p.channel {
            Channel::Depth => entry.depth = true,
            Channel::Color => entry.color = true,
        }
    }

    fn advance(&mut self, n: u32, t: u64) {
        self.position = Some(n);
        self.cursor = n + 1;
        self.head_since_us = t;
    }

    fn expire(&mut self, due: impl Fn(u64) -> bool, out: &mut Vec<RenderDecision>) {
        while let Some((&n, head)) = self.pending.first_key_value() {
            let deadline = (head.first_arrival_us + self.wait_us).max(self.head_since_us);
            if !due(deadline) {
                break;
            }
            self.pending.remove(&n);
            self.stats.skipped += 1;
            self.advance(n, deadline);
            out.push(RenderDecision {
                time_us: deadline,
                action: Action::Skip(n),
            });
            self.settle(deadline, out);
        }
    }

    fn settle(&mut self, t: u64, out: &mut Vec<RenderDecision>) {
        loop {
            if let Some((&n, head)) = self.pending.first_key_value() {
                if head.complete() {
                    self.latency_sum_us += t - head.send_us;
                    self.pending.remove(&n);
                    self.stats.rendered += 1;
                    self.advance(n, t);
                    out.push(RenderDecision {
                        time_us: t,
                        action: Action::Render(n),
                    });
                    continue;
                }
            }
            let Some(reference) = self.position.or(self.origin) else {
                return;
            };
            let Some(target) = self.pending.iter().rev().find(|(_, p)| p.complete()).map(|(&n, _)| n) else {
                return;
            };
            if target <= reference || !self.policy.lag_exceeded(target - reference) {
                return;
            }
            let send_us = self.pending[&target].send_us;
            let behind: Vec<u32> = self.pending.range(..target).map(|(&n, _)| n).collect();
            for n in behind {
                self.pending.remove(&n);
                self.stats.superseded += 1;
            }
            self.pending.remove(&target);
            self.latency_sum_us += t - send_us;
            self.stats.jumps += 1;
            self.advance(target, t);
            out.push(RenderDecision {
                time_us: t,
                action: Action::JumpTo(target),
            });
        }
    }
}

/// Runs the synchronizer over a complete arrival-ordered trace.
pub fn synchronize(packets: &[StreamPacket], policy: &SyncPolicy) -> Result<Vec<RenderDecision>, SyncError> {
    synchronize_with_stats(packets, policy).map(|(d, _)| d)
}

pub fn synchronize_with_stats(
    packets: &[StreamPacket],
    policy: &SyncPolicy,
) -> Result<(Vec<RenderDecision>, SyncStats), SyncError> {
    let mut sync = Synchronizer::new(*policy)?;
    let mut out = Vec::new();
    for p in packets {
        out.extend(sync.push(*p)?);
    }
    out.extend(sync.finish());
    Ok((out, sync.stats()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub latency_ms: f64,
    /// Half-width of the uniform jitter added to `latency_ms`.
    pub jitter_ms: f64,
    pub loss_rate: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            latency_ms: 40.0,
            jitter_ms: 30.0,
            loss_rate: 0.0,
        }
    }
}

impl ChannelModel {
    pub fn ideal() -> Self {
        Self {
            latency_ms: 0.0,
            jitter_ms: 0.0,
            loss_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        let ok = self.latency_ms.is_finite()
            && self.latency_ms >= 0.0
            && self.jitter_ms.is_finite()
            && self.jitter_ms >= 0.0
            && (0.0..=1.0).contains(&self.loss_rate);
        if ok {
            Ok(())
        } else {
            Err(SyncError::Channel(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    pub depth: ChannelModel,
    pub color: ChannelModel,
    pub seed: u64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            depth: ChannelModel::default(),
            color: ChannelModel::default(),
            seed: 42,
        }
    }
}

impl NetworkModel {
    pub fn ideal() -> Self {
        Self {
            depth: ChannelModel::ideal(),
            color: ChannelModel::ideal(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        self.depth.validate()?;
        self.color.validate()
    }
}

/// Frame number and capture time of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStamp {
    pub frame_number: u32,
    pub timestamp_us: u64,
}

impl From<&FramePair> for FrameStamp {
    fn from(p: &FramePair) -> Self {
        Self {
            frame_number: p.frame_number(),
            timestamp_us: p.timestamp_us(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRun {
    pub packets: Vec<StreamPacket>,
    pub decisions: Vec<RenderDecision>,
    pub stats: SyncStats,
}

/// Delivered packets for `frames` under `model`, sorted by arrival time.
///
/// Every `policy.decimation()`-th pair is sent at its capture time relative
/// to the first pair. Each channel draws its loss and delay from its own
/// ChaCha8 stream seeded with `model.seed`, two uniforms per packet.
pub fn simulate_packets(
    frames: &[FrameStamp],
    model: &NetworkModel,
    policy: &SyncPolicy,
) -> Result<Vec<StreamPacket>, SyncError> {
    model.validate()?;
    policy.validate()?;
    let Some(start) = frames.first().map(|f| f.timestamp_us) else {
        return Ok(Vec::new());
    };
    let mut packets = Vec::new();
    for (channel, cm) in [(Channel::Depth, model.depth), (Channel::Color, model.color)] {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(channel.index());
        for (idx, f) in frames.iter().enumerate().step_by(policy.decimation()) {
            let lost = rng.random::<f64>() < cm.loss_rate;
            let u = rng.random::<f64>();
            if lost {
                continue;
            }
            let delay_ms = (cm.latency_ms + cm.jitter_ms * (2.0 * u - 1.0)).max(0.0);
            let send = f.timestamp_us.saturating_sub(start);
            packets.push(StreamPacket {
                channel,
                frame_number: f.frame_number,
                send_time_us: send,
                arrival_time_us: send + (delay_ms * 1000.0).round() as u64,
                payload: idx,
            });
        }
    }
    packets.sort_by_key(|p| (p.arrival_time_us, p.channel, p.frame_number));
    Ok(packets)
}

pub fn simulate_network_frames(
    frames: &[FrameStamp],
    model: &NetworkModel,
    policy: &SyncPolicy,
) -> Result<NetworkRun, SyncError> {
    let packets = simulate_packets(frames, model, policy)?;
    let (decisions, stats) = synchronize_with_stats(&packets, policy)?;
    Ok(NetworkRun {
        packets,
        decisions,
        stats,
    })
}

pub fn simulate_network(pairs: &[FramePair], model: &NetworkModel, policy: &SyncPolicy) -> Result<NetworkRun, SyncError> {
    let frames: Vec<FrameStamp> = pairs.iter().map(FrameStamp::from).collect();
    simulate_network_frames(&frames, model, policy)
}

/// Stamps for `count` frames captured at `capture_fps` from frame 0.
pub fn capture_stamps(count: usize, capture_fps: u32) -> Vec<FrameStamp> {
    (0..count)
        .map(|k| FrameStamp {
            frame_number: k as u32,
            timestamp_us: k as u64 * 1_000_000 / u64::from(capture_fps),
        })
        .collect()
}
