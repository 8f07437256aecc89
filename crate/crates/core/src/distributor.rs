//! Parallel-to-serial distribution of frames onto FFT lanes, plus the
//! demux fan-out and FIFO sizing arithmetic for the single-stage and
//! two-stage P2S structures.
//!
//! Byte figures use binary prefixes (1 kByte = 1024 bytes).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KBYTE: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct P2SConfig {
    /// Parallel sample lanes arriving from the ADC interface.
    pub input_lanes: usize,
    pub sample_bits: usize,
    /// First-stage fan-out.
    pub groups: usize,
    /// Second-stage fan-out per group.
    pub subgroups: usize,
    /// Lanes entering the second stage from each first-stage group.
    pub stage2_input_lanes: usize,
    /// Samples per frame on the parallel bus.
    pub frame_len: usize,
}

impl Default for P2SConfig {
    fn default() -> Self {
        P2SConfig { input_lanes: 40, sample_bits: 12, groups: 3, subgroups: 8, stage2_input_lanes: 8, frame_len: 440 }
    }
}

impl P2SConfig {
    pub fn total_lanes(&self) -> usize {
        self.groups * self.subgroups
    }

    /// Bus cycles one frame occupies at the first stage.
    pub fn frame_cycles_stage1(&self) -> usize {
        self.frame_len.div_ceil(self.input_lanes)
    }

    pub fn frame_cycles_stage2(&self) -> usize {
        self.frame_len.div_ceil(self.stage2_input_lanes)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_lanes", self.input_lanes),
            ("sample_bits", self.sample_bits),
            ("groups", self.groups),
            ("subgroups", self.subgroups),
            ("stage2_input_lanes", self.stage2_input_lanes),
            ("frame_len", self.frame_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Lane for `frame_index` when frames are dealt to all lanes in sequence.
pub fn route_single_stage(cfg: &P2SConfig, frame_index: usize) -> usize {
    frame_index % cfg.total_lanes()
}

/// Lane for `frame_index` under nested round-robin: the first stage deals
/// frames across groups, and each group deals its own frames across its
/// subgroups.
pub fn route_two_stage(cfg: &P2SConfig, frame_index: usize) -> usize {
    let group = frame_index % cfg.groups;
    let subgroup = (frame_index / cfg.groups) % cfg.subgroups;
    group * cfg.subgroups + subgroup
}

/// Deals items onto lanes with [`route_two_stage`], using each item's
/// position in `items` as its frame index.
pub fn distribute<T>(cfg: &P2SConfig, items: Vec<T>) -> Vec<Vec<T>> {
    let mut lanes: Vec<Vec<T>> = (0..cfg.total_lanes()).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        lanes[route_two_stage(cfg, i)].push(item);
    }
    lanes
}

/// Reverses [`distribute`].
pub fn reassemble<T>(cfg: &P2SConfig, lanes: Vec<Vec<T>>) -> Vec<T> {
    let total: usize = lanes.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = lanes.into_iter().map(Vec::into_iter).collect();
    (0..total)
        .map(|i| iters[route_two_stage(cfg, i)].next().expect("lane queue shorter than routing implies"))
        .collect()
}

/// FIFO depths must be powers of two.
pub fn fifo_depth(required: usize) -> usize {
    required.max(1).next_power_of_two()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    /// Output bits of the stage's parallel demuxer.
    pub demux_nodes: usize,
    pub fifo_count: usize,
    pub fifo_width_bits: usize,
    pub required_depth: usize,
    pub fifo_depth: usize,
    pub fifo_utilization: f64,
    pub fifo_bytes: f64,
}

impl StageReport {
    fn new(name: &str, demux_nodes: usize, fifo_count: usize, fifo_width_bits: usize, required: usize) -> Self {
        let depth = fifo_depth(required);
        StageReport {
            name: name.to_string(),
            demux_nodes,
            fifo_count,
            fifo_width_bits,
            required_depth: required,
            fifo_depth: depth,
            fifo_utilization: required as f64 / depth as f64,
            fifo_bytes: (fifo_count * fifo_width_bits * depth) as f64 / 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub structure: String,
    /// Fan-out of the widest demuxer, the timing-critical one.
    pub demux_nodes: usize,
    pub fifo_bytes_total: f64,
    pub stages: Vec<StageReport>,
}

impl ResourceReport {
    pub fn fifo_kbytes(&self) -> f64 {
        self.fifo_bytes_total / KBYTE
    }
}

pub fn resource_report_single_stage(cfg: &P2SConfig) -> Result<ResourceReport> {
    cfg.validate()?;
    let width = cfg.input_lanes * cfg.sample_bits;
    let stage =
        StageReport::new("single", width * cfg.total_lanes(), cfg.total_lanes(), width, cfg.frame_cycles_stage1());
    Ok(ResourceReport {
        structure: "single-stage".into(),
        demux_nodes: stage.demux_nodes,
        fifo_bytes_total: stage.fifo_bytes,
        stages: vec![stage],
    })
}

pub fn resource_report_two_stage(cfg: &P2SConfig) -> Result<ResourceReport> {
    cfg.validate()?;
    let width1 = cfg.input_lanes * cfg.sample_bits;
    let width2 = cfg.stage2_input_lanes * cfg.sample_bits;
    let first = StageReport::new("stage1", width1 * cfg.groups, cfg.groups, width1, cfg.frame_cycles_stage1());
    let second = StageReport::new(
        "stage2",
        width2 * cfg.subgroups * cfg.groups,
        cfg.total_lanes(),
        width2,
        cfg.frame_cycles_stage2(),
    );
    Ok(ResourceReport {
        structure: "two-stage".into(),
        demux_nodes: first.demux_nodes,
        fifo_bytes_total: first.fifo_bytes + second.fifo_bytes,
        stages: vec![first, second],
    })
}

/// Side-by-side comparison of the two structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2SComparison {
    pub single_stage: ResourceReport,
    pub two_stage: ResourceReport,
    /// `1 - two_stage / single_stage` demux fan-out.
    pub node_reduction: f64,
    /// Reduction figure quoted alongside the structure, kept for contrast.
    pub quoted_node_reduction: f64,
    pub node_reduction_matches_quote: bool,
    pub fifo_savings: f64,
}

pub fn compare_structures(cfg: &P2SConfig) -> Result<P2SComparison> {
    let single = resource_report_single_stage(cfg)?;
    let two = resource_report_two_stage(cfg)?;
    let node_reduction = 1.0 - two.demux_nodes as f64 / single.demux_nodes as f64;
    let quoted = 0.785;
    Ok(P2SComparison {
        node_reduction,
        quoted_node_reduction: quoted,
        node_reduction_matches_quote: (node_reduction - quoted).abs() < 1e-3,
        fifo_savings: (single.fifo_bytes_total - two.fifo_bytes_total) / single.fifo_bytes_total,
        single_stage: single,
        two_stage: two,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stage_routing() {
        let cfg = P2SConfig::default();
        assert_eq!(route_single_stage(&cfg, 0), 0);
        assert_eq!(route_single_stage(&cfg, 23), 23);
        assert_eq!(route_single_stage(&cfg, 24), 0);
    }

    #[test]
    fn two_stage_routing() {
        let cfg = P2SConfig::default();
        let lanes: Vec<usize> = (0..4).map(|i| route_two_stage(&cfg, i)).collect();
        assert_eq!(lanes, vec![0, 8, 16, 1]);
        for i in 0..100 {
            assert_eq!(route_two_stage(&cfg, i), route_two_stage(&cfg, i + 24));
        }
    }

    #[test]
    fn single_stage_resources() {
        let r = resource_report_single_stage(&P2SConfig::default()).unwrap();
        assert_eq!(r.demux_nodes, 11520);
        assert_eq!(r.stages[0].required_depth, 11);
        assert_eq!(r.stages[0].fifo_depth, 16);
        assert_eq!(r.stages[0].fifo_utilization, 0.6875);
        assert_eq!(r.fifo_kbytes(), 22.5);
    }

    #[test]
    fn power_of_two_frame_fills_fifo() {
        let cfg = P2SConfig { input_lanes: 1, groups: 1, subgroups: 1, frame_len: 16, ..Default::default() };
        let r = resource_report_single_stage(&cfg).unwrap();
        assert_eq!(r.stages[0].fifo_utilization, 1.0);
    }

    #[test]
    fn two_stage_resources() {
        let cmp = compare_structures(&P2SConfig::default()).unwrap();
        let two = &cmp.two_stage;
        assert_eq!(two.demux_nodes, 1440);
        assert_eq!(two.stages[0].fifo_bytes / KBYTE, 2.8125);
        assert_eq!(two.stages[0].fifo_utilization, 0.6875);
        assert_eq!(two.stages[1].required_depth, 55);
        assert_eq!(two.stages[1].fifo_depth, 64);
        assert_eq!(two.stages[1].fifo_bytes / KBYTE, 18.0);
        assert!((two.stages[1].fifo_utilization - 0.8594).abs() < 5e-5);
        assert_eq!(two.fifo_kbytes(), 20.8125);
        assert_eq!(cmp.fifo_savings, 0.075);
        assert_eq!(cmp.node_reduction, 0.875);
        assert!(!cmp.node_reduction_matches_quote);
    }

    #[test]
    fn degenerate_two_stage_matches_single_stage_nodes() {
        let cfg = P2SConfig { groups: 24, subgroups: 1, ..Default::default() };
        let single = resource_report_single_stage(&cfg).unwrap();
        let two = resource_report_two_stage(&cfg).unwrap();
        assert_eq!(two.demux_nodes, single.demux_nodes);
    }

    #[test]
    fn distribute_edge_cases() {
        let cfg = P2SConfig::default();
        let lanes = distribute(&cfg, (0..24).collect::<Vec<_>>());
        assert!(lanes.iter().all(|l| l.len() == 1));
        let empty = distribute(&cfg, Vec::<u8>::new());
        assert_eq!(empty.len(), 24);
        assert!(empty.iter().all(Vec::is_empty));
    }

    #[test]
    fn invalid_config() {
        let cfg = P2SConfig { groups: 0, ..Default::default() };
        assert!(resource_report_two_stage(&cfg).is_err());
    }
}
