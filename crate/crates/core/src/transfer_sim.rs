//! Discrete-event model of the result upload path: a producer streams
//! results into a FIFO, full blocks move to a single-ported DDR ring, whole
//! frames move from DDR into PCIE RAM, and the host alternates between a
//! hardware configuration window and a read of that RAM.
//!
//! Byte quantities use binary prefixes throughout (1 kByte = 1024 bytes,
//! 1 MByte = 2^20, 1 GByte = 2^30), and so do rates (88 MByte/s is
//! 88 * 2^20 bytes per second). The FIFO sizing figure is the exception
//! that keeps its customary name: 88 MByte/s for 5 ms is 0.44 MByte, quoted
//! as "440 kByte".
//!
//! Data moves as a fluid between events. Each DDR operation is one event,
//! and so is each phase change of the host reader.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * KIB;
pub const GIB: f64 = 1024.0 * MIB;

/// Absolute slack, in bytes, for comparing fluid levels. Large enough
/// that any wait it can cause is well above the clock's resolution over
/// hours of simulated time.
const EPS_BYTES: f64 = 1e-3;
/// FIFO residue below this is rounding noise, not worth a flush.
const MIN_FLUSH_BYTES: f64 = 1.0;
const CONSERVATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadLatencyModel {
    /// Centre of the common-case body, in seconds.
    pub typical: f64,
    /// Half-width of the uniform body around `typical`.
    pub body_halfwidth: f64,
    pub knee: f64,
    pub p_over_knee: f64,
    pub far: f64,
    pub p_over_far: f64,
}

impl Default for ReadLatencyModel {
    fn default() -> Self {
        ReadLatencyModel {
            typical: 5e-3,
            body_halfwidth: 2.5e-3,
            knee: 12e-3,
            p_over_knee: 3e-3,
            far: 100e-3,
            p_over_far: 3e-5,
        }
    }
}

impl ReadLatencyModel {
    /// No tail: every read lands in the body.
    pub fn without_tail() -> Self {
        ReadLatencyModel { p_over_knee: 0.0, p_over_far: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.body_halfwidth >= 0.0
            && self.typical - self.body_halfwidth >= 0.0
            && self.typical + self.body_halfwidth <= self.knee
            && self.knee < self.far
            && (0.0..=1.0).contains(&self.p_over_knee)
            && (0.0..=self.p_over_knee).contains(&self.p_over_far);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("inconsistent read latency model {self:?}")))
        }
    }

    /// Decay constant of the exponential tail beyond the knee, chosen so
    /// that the tail passes through both quantiles.
    pub fn tail_scale(&self) -> Option<f64> {
        (self.p_over_far > 0.0 && self.p_over_knee > 0.0)
            .then(|| (self.far - self.knee) / (self.p_over_knee / self.p_over_far).ln())
    }
}

/// Draws one host read duration: a uniform body around the typical value,
/// and beyond the knee an exponential tail through both quantiles. A tail
/// with no mass past `far` becomes uniform between `knee` and `far`.
pub fn sample_read_latency<R: Rng + ?Sized>(model: &ReadLatencyModel, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if u >= model.p_over_knee {
        let v: f64 = rng.random();
        return model.typical + model.body_halfwidth * (2.0 * v - 1.0);
    }
    let v: f64 = rng.random();
    match model.tail_scale() {
        Some(tau) => model.knee - tau * (1.0 - v).ln(),
        None => model.knee + (model.far - model.knee) * v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatapathConfig {
    pub ingest_rate: f64,
    pub fifo_capacity: f64,
    pub block_bytes: f64,
    pub frame_blocks: usize,
    pub ddr_capacity: f64,
    /// Effective DDR transfer rate used for every move.
    pub ddr_bandwidth: f64,
    /// Interface ceiling; `ddr_bandwidth` may not exceed it.
    pub ddr_peak_bandwidth: f64,
    pub pcie_ram: f64,
    pub config_time: f64,
    /// Catch-up starts when the DDR backlog exceeds this many frames.
    pub catch_up_threshold_frames: f64,
    pub read_latency: ReadLatencyModel,
    pub seed: u64,
}

impl Default for DatapathConfig {
    fn default() -> Self {
        DatapathConfig {
            ingest_rate: 88.0 * MIB,
            fifo_capacity: 512.0 * KIB,
            block_bytes: 160.0 * KIB,
            frame_blocks: 16,
            ddr_capacity: 2.0 * GIB,
            ddr_bandwidth: 500.0 * MIB,
            ddr_peak_bandwidth: 34.0 * GIB,
            pcie_ram: 2.5 * MIB,
            config_time: 16e-3,
            catch_up_threshold_frames: 2.0,
            read_latency: ReadLatencyModel::default(),
            seed: 0,
        }
    }
}

impl DatapathConfig {
    /// The board-level configuration with 4 GByte of DDR.
    pub fn with_4gb_ddr() -> Self {
        DatapathConfig { ddr_capacity: 4.0 * GIB, ..Default::default() }
    }

    pub fn frame_bytes(&self) -> f64 {
        self.frame_blocks as f64 * self.block_bytes
    }

    /// Time for one DDR-to-PCIE frame move.
    pub fn frame_transfer_time(&self) -> f64 {
        self.frame_bytes() / self.ddr_bandwidth
    }

    pub fn block_transfer_time(&self) -> f64 {
        self.block_bytes / self.ddr_bandwidth
    }

    /// Bytes the FIFO must absorb while the DDR is busy reading one frame.
    pub fn fifo_accrual_per_read(&self) -> f64 {
        self.ingest_rate * self.frame_transfer_time()
    }

    /// Time the producer takes to fill one frame.
    pub fn cycle_time(&self) -> f64 {
        self.frame_bytes() / self.ingest_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("fifo_capacity", self.fifo_capacity),
            ("block_bytes", self.block_bytes),
            ("ddr_capacity", self.ddr_capacity),
            ("ddr_bandwidth", self.ddr_bandwidth),
            ("pcie_ram", self.pcie_ram),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.ingest_rate >= 0.0 && self.ingest_rate.is_finite()) {
            return bad(format!("ingest rate {} is invalid", self.ingest_rate));
        }
        if !(self.config_time >= 0.0) {
            return bad("config time must be non-negative".into());
        }
        if self.frame_blocks == 0 {
            return bad("a frame needs at least one block".into());
        }
        if self.frame_bytes() > self.pcie_ram {
            return bad(format!("frame of {} bytes exceeds PCIE RAM of {} bytes", self.frame_bytes(), self.pcie_ram));
        }
        if self.ddr_bandwidth > self.ddr_peak_bandwidth {
            return bad("DDR transfer rate exceeds the interface ceiling".into());
        }
        if self.ddr_bandwidth <= self.ingest_rate {
            return bad("DDR transfer rate must exceed the ingest rate".into());
        }
        if self.block_bytes > self.fifo_capacity {
            return bad("a block does not fit the FIFO".into());
        }
        if self.fifo_capacity + EPS_BYTES < self.fifo_accrual_per_read() {
            return bad(format!(
                "FIFO of {} bytes cannot absorb {} bytes arriving during a frame read",
                self.fifo_capacity,
                self.fifo_accrual_per_read()
            ));
        }
        if self.ddr_capacity < self.frame_bytes() + self.block_bytes {
            return bad("DDR must hold at least a frame and a block".into());
        }
        if self.catch_up_threshold_frames < 1.0 {
            return bad("catch-up threshold must be at least one frame".into());
        }
        self.read_latency.validate()
    }
}

/// Longest host stall the buffers can bridge before data is lost: the time
/// the producer needs to fill the DDR and the FIFO.
pub fn max_survivable_stall(cfg: &DatapathConfig) -> f64 {
    if cfg.ingest_rate == 0.0 {
        f64::INFINITY
    } else {
        (cfg.ddr_capacity + cfg.fifo_capacity) / cfg.ingest_rate
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferState {
    pub clock: f64,
    pub fifo_fill: f64,
    pub ddr_write_addr: f64,
    pub ddr_read_addr: f64,
    pub ddr_backlog: f64,
    /// Bytes that have left the FIFO for the DDR but whose write has not
    /// completed.
    pub write_in_flight: f64,
    /// Bytes read from DDR and not yet delivered to the host.
    pub pcie_in_flight: f64,
    pub pcie_busy: bool,
    pub produced: f64,
    pub delivered_bytes: f64,
    pub delivered_frames: u64,
    pub lost_bytes: f64,
    pub max_fifo_fill: f64,
    pub max_ddr_backlog: f64,
}

impl TransferState {
    /// Difference between produced bytes and all accounted bytes.
    pub fn conservation_error(&self) -> f64 {
        self.produced
            - (self.delivered_bytes
                + self.fifo_fill
                + self.write_in_flight
                + self.ddr_backlog
                + self.pcie_in_flight
                + self.lost_bytes)
    }

    pub fn conserves(&self) -> bool {
        self.conservation_error().abs() <= CONSERVATION_TOL * self.produced.max(1.0)
    }

    /// Lets `dt` seconds pass with the producer filling the FIFO and the DDR
    /// not draining it. Overflow is lost.
    fn fill(&mut self, cfg: &DatapathConfig, dt: f64) {
        let incoming = cfg.ingest_rate * dt;
        self.produced += incoming;
        let level = self.fifo_fill + incoming;
        if level > cfg.fifo_capacity {
            self.lost_bytes += level - cfg.fifo_capacity;
            self.fifo_fill = cfg.fifo_capacity;
        } else {
            self.fifo_fill = level;
        }
        self.clock += dt;
        self.max_fifo_fill = self.max_fifo_fill.max(self.fifo_fill);
    }

    /// Lets `dt` seconds pass while the DDR drains the FIFO at full rate.
    fn drain(&mut self, cfg: &DatapathConfig, dt: f64) {
        let incoming = cfg.ingest_rate * dt;
        let outgoing = cfg.ddr_bandwidth * dt;
        self.produced += incoming;
        self.fifo_fill = (self.fifo_fill + incoming - outgoing).max(0.0);
        self.write_in_flight += outgoing;
        self.clock += dt;
        self.max_fifo_fill = self.max_fifo_fill.max(self.fifo_fill);
    }

    fn commit_write(&mut self, cfg: &DatapathConfig) {
        let bytes = self.write_in_flight;
        self.write_in_flight = 0.0;
        self.ddr_backlog += bytes;
        self.ddr_write_addr = (self.ddr_write_addr + bytes) % cfg.ddr_capacity;
        self.max_ddr_backlog = self.max_ddr_backlog.max(self.ddr_backlog);
    }

    fn begin_read(&mut self, cfg: &DatapathConfig) {
        let frame = cfg.frame_bytes();
        self.ddr_backlog -= frame;
        if self.ddr_backlog.abs() < EPS_BYTES {
            self.ddr_backlog = 0.0;
        }
        self.ddr_read_addr = (self.ddr_read_addr + frame) % cfg.ddr_capacity;
        self.pcie_in_flight += frame;
        self.pcie_busy = true;
    }

    fn deliver(&mut self, cfg: &DatapathConfig) {
        let frame = cfg.frame_bytes();
        self.pcie_in_flight -= frame;
        if self.pcie_in_flight.abs() < EPS_BYTES {
            self.pcie_in_flight = 0.0;
        }
        self.delivered_bytes += frame;
        self.delivered_frames += 1;
        self.pcie_busy = false;
    }

    fn ddr_has_room(&self, cfg: &DatapathConfig, bytes: f64) -> bool {
        self.ddr_backlog + bytes <= cfg.ddr_capacity + EPS_BYTES
    }
}

/// Moves one block from the FIFO into the DDR. The move takes
/// `block_bytes / ddr_bandwidth`, during which the producer keeps filling
/// the FIFO. Does nothing when less than a block is waiting or the DDR is
/// full.
pub fn step_write_block(state: &TransferState, cfg: &DatapathConfig) -> TransferState {
    let mut s = *state;
    if s.fifo_fill + EPS_BYTES < cfg.block_bytes || !s.ddr_has_room(cfg, cfg.block_bytes) {
        return s;
    }
    s.drain(cfg, cfg.block_transfer_time());
    s.commit_write(cfg);
    s
}

/// Moves one frame from the DDR into PCIE RAM. Writes are blocked for the
/// duration, so the FIFO accrues `ingest_rate * frame_transfer_time`. Does
/// nothing when less than a frame is stored or PCIE RAM is occupied.
pub fn step_read_frame(state: &TransferState, cfg: &DatapathConfig) -> TransferState {
    let mut s = *state;
    if s.ddr_backlog + EPS_BYTES < cfg.frame_bytes() || s.pcie_busy {
        return s;
    }
    s.begin_read(cfg);
    s.fill(cfg, cfg.frame_transfer_time());
    s
}

/// Host read of the frame held in PCIE RAM, lasting `latency`. The
/// producer keeps running and full blocks keep moving into the DDR.
pub fn step_host_read(state: &TransferState, cfg: &DatapathConfig, latency: f64) -> TransferState {
    let mut s = *state;
    if !s.pcie_busy {
        return s;
    }
    let end = s.clock + latency;
    loop {
        let wait = ((cfg.block_bytes - s.fifo_fill) / cfg.ingest_rate).max(0.0);
        if cfg.ingest_rate == 0.0
            || s.clock + wait + cfg.block_transfer_time() > end
            || !s.ddr_has_room(cfg, cfg.block_bytes)
        {
            break;
        }
        s.fill(cfg, wait);
        s = step_write_block(&s, cfg);
    }
    s.fill(cfg, (end - s.clock).max(0.0));
    s.deliver(cfg);
    s
}

/// Back-to-back frame reads once the backlog exceeds the catch-up
/// threshold, until at most one frame remains. Each read is followed by
/// an immediate host read of `latency`. Returns the state and the number
/// of reads issued.
pub fn step_catch_up(state: &TransferState, cfg: &DatapathConfig, latency: f64) -> (TransferState, usize) {
    let frame = cfg.frame_bytes();
    let mut s = *state;
    if s.ddr_backlog <= cfg.catch_up_threshold_frames * frame + EPS_BYTES {
        return (s, 0);
    }
    let mut reads = 0;
    while s.ddr_backlog > frame + EPS_BYTES && !s.pcie_busy {
        s = step_read_frame(&s, cfg);
        s = step_host_read(&s, cfg, latency);
        reads += 1;
    }
    (s, reads)
}

/// A host stall: the first read starting at or after `start` lasts
/// `duration` instead of a sampled latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedStall {
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub stall: Option<InjectedStall>,
    /// Record a snapshot at every event.
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub event: String,
    pub fifo_fill: f64,
    pub ddr_backlog: f64,
    pub pcie_in_flight: f64,
    pub lost_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub duration: f64,
    pub seed: u64,
    pub produced_bytes: f64,
    pub delivered_bytes: f64,
    pub delivered_frames: u64,
    pub lost_bytes: f64,
    pub max_fifo_fill: f64,
    pub max_ddr_backlog: f64,
    pub block_writes: u64,
    pub flush_writes: u64,
    pub frame_reads: u64,
    pub catch_up_reads: u64,
    pub longest_read_latency: f64,
    pub events: u64,
    /// True when byte conservation held after every event.
    pub conservation_ok: bool,
    /// Largest conservation error seen, relative to bytes produced.
    pub max_conservation_error: f64,
    pub final_state: TransferState,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DdrOp {
    Idle,
    WriteBlock,
    Flush,
    Read,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HostPhase {
    Configuring,
    Waiting,
    Reading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    DdrDone,
    DdrWake(u64),
    ConfigDone,
    HostReadDone,
    End,
}

impl Event {
    fn name(&self) -> &'static str {
        match self {
            Event::DdrDone => "ddr_done",
            Event::DdrWake(_) => "ddr_wake",
            Event::ConfigDone => "config_done",
            Event::HostReadDone => "host_read_done",
            Event::End => "end",
        }
    }
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Sim<'a> {
    cfg: &'a DatapathConfig,
    opts: &'a SimOptions,
    rng: ChaCha8Rng,
    state: TransferState,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    ddr: DdrOp,
    wake_gen: u64,
    host: HostPhase,
    /// PCIE RAM holds a complete frame the host has not started reading.
    frame_ready: bool,
    catching_up: bool,
    stall_used: bool,
    report: SimReport,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, delay: f64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { time: self.state.clock + delay, seq: self.seq, event });
    }

    fn advance_to(&mut self, time: f64) {
        let dt = (time - self.state.clock).max(0.0);
        if self.ddr == DdrOp::WriteBlock || self.ddr == DdrOp::Flush {
            self.state.drain(self.cfg, dt);
        } else {
            self.state.fill(self.cfg, dt);
        }
        self.state.clock = time;
    }

    fn kick_ddr(&mut self) {
        if self.ddr != DdrOp::Idle {
            return;
        }
        let cfg = self.cfg;
        let s = &self.state;
        let read_possible = s.ddr_backlog + EPS_BYTES >= cfg.frame_bytes() && !s.pcie_busy;
        if read_possible {
            // Empty the FIFO first so the whole read window is available
            // for incoming data.
            let flush = s.fifo_fill / (1.0 - cfg.ingest_rate / cfg.ddr_bandwidth);
            if s.fifo_fill >= MIN_FLUSH_BYTES && s.ddr_has_room(cfg, flush) {
                self.ddr = DdrOp::Flush;
                self.schedule(flush / cfg.ddr_bandwidth, Event::DdrDone);
            } else {
                self.state.begin_read(cfg);
                self.ddr = DdrOp::Read;
                self.schedule(cfg.frame_transfer_time(), Event::DdrDone);
            }
            return;
        }
        if !s.ddr_has_room(cfg, cfg.block_bytes) {
            // Full; the next host read frees space.
            return;
        }
        if s.fifo_fill + EPS_BYTES >= cfg.block_bytes {
            self.ddr = DdrOp::WriteBlock;
            self.schedule(cfg.block_transfer_time(), Event::DdrDone);
        } else if cfg.ingest_rate > 0.0 {
            self.wake_gen += 1;
            let wait = (cfg.block_bytes - s.fifo_fill) / cfg.ingest_rate;
            self.schedule(wait, Event::DdrWake(self.wake_gen));
        }
    }

    fn ddr_done(&mut self) {
        match self.ddr {
            DdrOp::WriteBlock | DdrOp::Flush => {
                if self.ddr == DdrOp::WriteBlock {
                    self.report.block_writes += 1;
                } else {
                    self.report.flush_writes += 1;
                }
                self.state.commit_write(self.cfg);
            }
            DdrOp::Read => {
                self.report.frame_reads += 1;
                if self.catching_up {
                    self.report.catch_up_reads += 1;
                }
                self.frame_ready = true;
            }
            DdrOp::Idle => {}
        }
        self.ddr = DdrOp::Idle;
        self.update_catch_up();
        self.try_start_host_read();
        self.kick_ddr();
    }

    fn update_catch_up(&mut self) {
        let frame = self.cfg.frame_bytes();
        if self.state.ddr_backlog > self.cfg.catch_up_threshold_frames * frame + EPS_BYTES {
            self.catching_up = true;
        } else if self.state.ddr_backlog <= frame + EPS_BYTES {
            self.catching_up = false;
        }
    }

    fn try_start_host_read(&mut self) {
        if self.host != HostPhase::Waiting || !self.frame_ready {
            return;
        }
        self.frame_ready = false;
        self.host = HostPhase::Reading;
        let latency = match self.opts.stall {
            Some(st) if !self.stall_used && self.state.clock >= st.start => {
                self.stall_used = true;
                st.duration
            }
            _ => sample_read_latency(&self.cfg.read_latency, &mut self.rng),
        };
        self.report.longest_read_latency = self.report.longest_read_latency.max(latency);
        self.schedule(latency, Event::HostReadDone);
    }

    fn host_read_done(&mut self) {
        self.state.deliver(self.cfg);
        self.update_catch_up();
        if self.catching_up || self.cfg.config_time == 0.0 {
            self.host = HostPhase::Waiting;
        } else {
            self.host = HostPhase::Configuring;
            self.schedule(self.cfg.config_time, Event::ConfigDone);
        }
        self.kick_ddr();
        self.try_start_host_read();
    }

    fn record(&mut self, event: Event) {
        self.report.events += 1;
        let err = self.state.conservation_error().abs() / self.state.produced.max(1.0);
        self.report.max_conservation_error = self.report.max_conservation_error.max(err);
        if err > CONSERVATION_TOL {
            self.report.conservation_ok = false;
        }
        if self.opts.trace {
            self.report.trace.push(TraceRecord {
                time: self.state.clock,
                event: event.name().to_string(),
                fifo_fill: self.state.fifo_fill,
                ddr_backlog: self.state.ddr_backlog,
                pcie_in_flight: self.state.pcie_in_flight,
                lost_bytes: self.state.lost_bytes,
            });
        }
    }
}

/// Runs the datapath for `duration` simulated seconds.
pub fn run_simulation(cfg: &DatapathConfig, duration: f64, opts: &SimOptions) -> Result<SimReport> {
    cfg.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::InvalidConfig(format!("duration {duration} is invalid")));
    }
    if let Some(st) = opts.stall {
        if !(st.start >= 0.0 && st.duration >= 0.0) {
            return Err(Error::InvalidConfig("stall start and duration must be non-negative".into()));
        }
    }
    let mut sim = Sim {
        cfg,
        opts,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        state: TransferState::default(),
        queue: BinaryHeap::new(),
        seq: 0,
        ddr: DdrOp::Idle,
        wake_gen: 0,
        host: HostPhase::Configuring,
        frame_ready: false,
        catching_up: false,
        stall_used: false,
        report: SimReport {
            duration,
            seed: cfg.seed,
            produced_bytes: 0.0,
            delivered_bytes: 0.0,
            delivered_frames: 0,
            lost_bytes: 0.0,
            max_fifo_fill: 0.0,
            max_ddr_backlog: 0.0,
            block_writes: 0,
            flush_writes: 0,
            frame_reads: 0,
            catch_up_reads: 0,
            longest_read_latency: 0.0,
            events: 0,
            conservation_ok: true,
            max_conservation_error: 0.0,
            final_state: TransferState::default(),
            trace: Vec::new(),
        },
    };
    sim.schedule(duration, Event::End);
    sim.schedule(cfg.config_time, Event::ConfigDone);
    sim.kick_ddr();

    while let Some(Scheduled { time, event, .. }) = sim.queue.pop() {
        sim.advance_to(time);
        match event {
            Event::End => {
                sim.record(event);
                break;
            }
            Event::DdrDone => sim.ddr_done(),
            Event::DdrWake(gen) => {
                if gen == sim.wake_gen {
                    sim.kick_ddr();
                }
            }
            Event::ConfigDone => {
                sim.host = HostPhase::Waiting;
                sim.try_start_host_read();
            }
            Event::HostReadDone => sim.host_read_done(),
        }
        sim.record(event);
    }

    let s = sim.state;
    let mut report = sim.report;
    report.produced_bytes = s.produced;
    report.delivered_bytes = s.delivered_bytes;
    report.delivered_frames = s.delivered_frames;
    report.lost_bytes = s.lost_bytes;
    report.max_fifo_fill = s.max_fifo_fill;
    report.max_ddr_backlog = s.max_ddr_backlog;
    report.final_state = s;
    Ok(report)
}

/// Longest single stall that `run_simulation` survives without loss,
/// found by bisection to within `tolerance` seconds. The stall starts
/// after `warmup` seconds of normal operation.
pub fn simulated_max_stall(cfg: &DatapathConfig, warmup: f64, tolerance: f64) -> Result<f64> {
    let bound = max_survivable_stall(cfg);
    if !bound.is_finite() {
        return Ok(bound);
    }
    let loses = |stall: f64| -> Result<bool> {
        let opts = SimOptions { stall: Some(InjectedStall { start: warmup, duration: stall }), trace: false };
        let r = run_simulation(cfg, warmup + stall + 1.0, &opts)?;
        Ok(r.lost_bytes > 0.0)
    };
    let (mut lo, mut hi) = (0.0, bound * 1.1 + 1.0);
    if !loses(hi)? {
        return Ok(hi);
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if loses(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "time,event,fifo_fill,ddr_backlog,pcie_in_flight,lost_bytes").map_err(io_err(path))?;
    for t in trace {
        writeln!(out, "{},{},{},{},{},{}", t.time, t.event, t.fifo_fill, t.ddr_backlog, t.pcie_in_flight, t.lost_bytes)
            .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}
