//! End-to-end runs: stimulus through framing, lane distribution, spectral
//! analysis and fitting, plus the frequency sweep and the SNR and amplitude
//! campaigns built on it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributor::{distribute, reassemble, P2SConfig};
use crate::error::{io_err, Error, Result};
use crate::fitting::{estimate_with, FrequencyEstimate, VertexFormula};
use crate::framing::{
    default_gap_window, estimate_period_fractional, split_frames, PeriodSearch, SampleFrame, NOMINAL_FRAME_LEN,
};
use crate::signal_gen::{acquire, StimulusConfig};
use crate::spectral::{analyze_frame, FftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stimulus: StimulusConfig,
    pub fft: FftConfig,
    pub p2s: P2SConfig,
    /// Frames shorter than this are partial and dropped.
    pub min_frame_len: usize,
    pub formula: VertexFormula,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stimulus: StimulusConfig::single_tone(2e9),
            fft: FftConfig::default(),
            p2s: P2SConfig::default(),
            min_frame_len: NOMINAL_FRAME_LEN,
            formula: VertexFormula::Standard,
        }
    }
}

impl PipelineConfig {
    pub fn bin_spacing(&self) -> f64 {
        self.stimulus.sample_rate / self.fft.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    /// Estimates in frame order.
    pub estimates: Vec<FrequencyEstimate>,
    /// Estimated pulse period in samples.
    pub period: Option<f64>,
    pub frames_total: usize,
    pub frames_dropped: usize,
    pub clipped_samples: usize,
}

/// Splits a digitized record into full frames.
pub fn frame_record(codes: &[i32], min_frame_len: usize) -> Result<(Vec<SampleFrame>, usize, f64)> {
    let period = estimate_period_fractional(codes, &PeriodSearch::default())?;
    let split = split_frames(codes, period, default_gap_window(period));
    let (frames, dropped) = split.retain_full(min_frame_len);
    Ok((frames, dropped, period))
}

/// Deals frames onto the lanes, analyzes every lane in parallel, and
/// returns the estimates in frame order.
pub fn analyze_frames(cfg: &PipelineConfig, frames: Vec<SampleFrame>) -> Result<Vec<FrequencyEstimate>> {
    cfg.fft.validate()?;
    cfg.p2s.validate()?;
    let fs = cfg.stimulus.sample_rate;
    let lanes = distribute(&cfg.p2s, frames);
    let results: Vec<Vec<Result<FrequencyEstimate>>> = lanes
        .into_par_iter()
        .map(|lane| {
            lane.iter()
                .map(|frame| {
                    analyze_frame(frame, &cfg.fft)
                        .map(|peak| estimate_with(&peak, fs, cfg.fft.n, cfg.formula))
                        .map_err(|e| Error::Frame { frame_index: frame.frame_index, source: Box::new(e) })
                })
                .collect()
        })
        .collect();
    reassemble(&cfg.p2s, results).into_iter().collect()
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.stimulus.validate()?;
    let acq = acquire(&cfg.stimulus)?;
    if cfg.stimulus.n_pulses == 0 || acq.codes.is_empty() {
        return Ok(PipelineRun {
            estimates: Vec::new(),
            period: None,
            frames_total: 0,
            frames_dropped: 0,
            clipped_samples: acq.clipped,
        });
    }
    let (frames, dropped, period) = frame_record(&acq.codes, cfg.min_frame_len)?;
    let total = frames.len() + dropped;
    let estimates = analyze_frames(cfg, frames)?;
    Ok(PipelineRun {
        estimates,
        period: Some(period),
        frames_total: total,
        frames_dropped: dropped,
        clipped_samples: acq.clipped,
    })
}

/// Max minus min.
pub fn range(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Mixes a campaign seed with a point index so every point draws from an
/// independent stream regardless of execution order.
pub fn point_seed(campaign_seed: u64, index: u64) -> u64 {
    let mut z = campaign_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C908);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub f_start: f64,
    pub f_stop: f64,
    pub f_step: f64,
    pub frames_per_point: usize,
    pub snr_db: Option<f64>,
    /// Stimulus peak relative to the ADC's largest unclipped input.
    pub amplitude_fraction: f64,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            f_start: 100e6,
            f_stop: 4e9,
            f_step: 10e6,
            frames_per_point: 50,
            snr_db: None,
            amplitude_fraction: 0.9,
            seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn frequencies(&self) -> Vec<f64> {
        let count = ((self.f_stop - self.f_start) / self.f_step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.f_start + i as f64 * self.f_step).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bin = self.pipeline.bin_spacing();
        let nyquist = self.pipeline.stimulus.sample_rate / 2.0;
        if !(self.f_step > 0.0 && self.f_step.is_finite()) {
            return Err(Error::InvalidConfig(format!("sweep step {} must be positive", self.f_step)));
        }
        if self.f_start < 2.0 * bin || self.f_stop > nyquist - 2.0 * bin || self.f_start > self.f_stop {
            return Err(Error::InvalidConfig(format!(
                "sweep {}..{} Hz must lie within {}..{} Hz",
                self.f_start,
                self.f_stop,
                2.0 * bin,
                nyquist - 2.0 * bin
            )));
        }
        if self.frames_per_point == 0 {
            return Err(Error::InvalidConfig("frames_per_point must be positive".into()));
        }
        self.point_config(self.f_start, 0).stimulus.validate()
    }

    fn point_config(&self, freq: f64, index: usize) -> PipelineConfig {
        let mut cfg = self.pipeline.clone();
        cfg.stimulus.carrier_freq = freq;
        cfg.stimulus.snr_db = self.snr_db;
        cfg.stimulus.amplitude_fullscale_fraction = self.amplitude_fraction;
        cfg.stimulus.seed = point_seed(self.seed, index as u64);
        // One spare pulse covers the partial frame at the end of the record.
        cfg.stimulus.n_pulses = self.frames_per_point + 1;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub true_freq: f64,
    pub mean_est: f64,
    pub max_deviation: f64,
    pub range: f64,
    pub n_frames: usize,
    /// Frames whose fit carried any warning flag.
    pub flagged_frames: usize,
    pub clipped_samples: usize,
}

impl PointResult {
    pub fn from_estimates(true_freq: f64, estimates: &[FrequencyEstimate], clipped_samples: usize) -> Self {
        let freqs: Vec<f64> = estimates.iter().map(|e| e.freq_hz).collect();
        let n = freqs.len();
        PointResult {
            true_freq,
            mean_est: if n == 0 { f64::NAN } else { freqs.iter().sum::<f64>() / n as f64 },
            max_deviation: freqs.iter().map(|f| (f - true_freq).abs()).fold(0.0, f64::max),
            range: range(&freqs),
            n_frames: n,
            flagged_frames: estimates.iter().filter(|e| e.flags.any()).count(),
            clipped_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub points: usize,
    pub max_deviation: f64,
    pub max_range: f64,
    pub mean_range: f64,
    pub flagged_frames: usize,
    pub clipped_samples: usize,
}

impl Summary {
    pub fn of(points: &[PointResult]) -> Self {
        Summary {
            points: points.len(),
            max_deviation: points.iter().map(|p| p.max_deviation).fold(0.0, f64::max),
            max_range: points.iter().map(|p| p.range).fold(0.0, f64::max),
            mean_range: if points.is_empty() {
                0.0
            } else {
                points.iter().map(|p| p.range).sum::<f64>() / points.len() as f64
            },
            flagged_frames: points.iter().map(|p| p.flagged_frames).sum(),
            clipped_samples: points.iter().map(|p| p.clipped_samples).sum(),
        }
    }

    /// Fraction of points whose range is at most `limit`.
    pub fn fraction_with_range_within(points: &[PointResult], limit: f64) -> f64 {
        if points.is_empty() {
            return 1.0;
        }
        points.iter().filter(|p| p.range <= limit).count() as f64 / points.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// SHA-256 of the JSON-serialized campaign configuration.
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch when the run finished.
    pub timestamp: u64,
    pub version: String,
}

impl Metadata {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Metadata {
            config_hash: config_hash(config)?,
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub points: Vec<PointResult>,
    pub summary: Summary,
    pub metadata: Metadata,
}

pub fn sweep(cfg: &SweepConfig) -> Result<ExperimentResult> {
    sweep_named(cfg, "sweep")
}

fn sweep_named(cfg: &SweepConfig, name: &str) -> Result<ExperimentResult> {
    cfg.validate()?;
    let points = cfg
        .frequencies()
        .into_par_iter()
        .enumerate()
        .map(|(i, f)| {
            let run = run_pipeline(&cfg.point_config(f, i))?;
            if run.estimates.len() < cfg.frames_per_point {
                return Err(Error::Domain(format!(
                    "{} Hz produced {} full frames, need {}",
                    f,
                    run.estimates.len(),
                    cfg.frames_per_point
                )));
            }
            Ok(PointResult::from_estimates(f, &run.estimates[..cfg.frames_per_point], run.clipped_samples))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        name: name.to_string(),
        summary: Summary::of(&points),
        points,
        metadata: Metadata::new(cfg, cfg.seed)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub label: String,
    /// SNR in dB or amplitude in volts peak-to-peak.
    pub level: f64,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub name: String,
    pub levels: Vec<LevelResult>,
    /// Largest per-point range allowed at every level.
    pub range_limit: f64,
    pub within_limit: bool,
    /// Mean range grows (weakly) as the level gets worse.
    pub trend_ok: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CampaignResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}

/// Sweeps at each SNR level, best first. Levels are in dB.
pub fn snr_campaign(base: &SweepConfig, levels: &[f64], range_limit: f64) -> Result<CampaignResult> {
    if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig("SNR levels must be finite and non-empty".into()));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let results = sorted
        .iter()
        .map(|&snr| {
            let cfg = SweepConfig { snr_db: Some(snr), ..base.clone() };
            Ok(LevelResult { label: format!("{snr} dB"), level: snr, result: sweep_named(&cfg, "snr")? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(campaign("snr", results, range_limit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmplitudeCampaign {
    /// Source amplitudes in volts peak-to-peak.
    pub levels_vpp: Vec<f64>,
    pub attenuation_db: f64,
    /// Front-end noise as an SNR at the largest level; it stays fixed in
    /// volts, so smaller levels see proportionally lower SNR. `None` leaves
    /// ADC quantization as the only noise.
    pub front_end_snr_db: Option<f64>,
    pub range_limit: f64,
    /// Range bound at the smallest level.
    pub lowest_level_limit: f64,
}

impl Default for AmplitudeCampaign {
    fn default() -> Self {
        AmplitudeCampaign {
            levels_vpp: vec![1.0, 0.75, 0.5],
            attenuation_db: 6.0,
            front_end_snr_db: None,
            range_limit: 5e6,
            lowest_level_limit: 4e6,
        }
    }
}

impl AmplitudeCampaign {
    /// Peak at the ADC as a fraction of its largest unclipped input, and
    /// whether the level saturates.
    pub fn adc_fraction(&self, vpp: f64, base: &SweepConfig) -> (f64, bool) {
        let peak = vpp / 2.0 * 10f64.powf(-self.attenuation_db / 20.0);
        let fraction = peak / base.pipeline.stimulus.adc.max_input();
        (fraction.min(1.0), fraction > 1.0)
    }
}

pub fn amplitude_campaign(base: &SweepConfig, campaign_cfg: &AmplitudeCampaign) -> Result<CampaignResult> {
    let levels = &campaign_cfg.levels_vpp;
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidConfig("amplitude levels must be positive and non-empty".into()));
    }
    let mut sorted = levels.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted[0];
    let mut saturated = Vec::new();
    let results = sorted
        .iter()
        .map(|&vpp| {
            let (fraction, sat) = campaign_cfg.adc_fraction(vpp, base);
            if sat {
                saturated.push(vpp);
            }
            let snr = campaign_cfg.front_end_snr_db.map(|s| s + 20.0 * (vpp / top).log10());
            let cfg = SweepConfig { amplitude_fraction: fraction, snr_db: snr, ..base.clone() };
            Ok(LevelResult { label: format!("{vpp} Vpp"), level: vpp, result: sweep_named(&cfg, "amplitude")? })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = campaign("amplitude", results, campaign_cfg.range_limit);
    let lowest = out.levels.last().map(|l| l.result.summary.max_range).unwrap_or(0.0);
    out.checks.push(Check {
        name: "lowest level range".into(),
        passed: lowest <= campaign_cfg.lowest_level_limit,
        detail: format!("{:.3} MHz (limit {:.3} MHz)", lowest / 1e6, campaign_cfg.lowest_level_limit / 1e6),
    });
    out.checks.push(Check {
        name: "no ADC saturation".into(),
        passed: saturated.is_empty(),
        detail: if saturated.is_empty() { "none".into() } else { format!("saturating levels: {saturated:?} Vpp") },
    });
    Ok(out)
}

fn campaign(name: &str, levels: Vec<LevelResult>, range_limit: f64) -> CampaignResult {
    let max_ranges: Vec<f64> = levels.iter().map(|l| l.result.summary.max_range).collect();
    let mean_ranges: Vec<f64> = levels.iter().map(|l| l.result.summary.mean_range).collect();
    let within_limit = max_ranges.iter().all(|&r| r <= range_limit);
    let trend_ok = non_decreasing(&mean_ranges);
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{:.3}", r / 1e6)).collect::<Vec<_>>().join(", ");
    let checks = vec![
        Check {
            name: "max range within limit".into(),
            passed: within_limit,
            detail: format!("[{}] MHz (limit {:.3} MHz)", fmt(&max_ranges), range_limit / 1e6),
        },
        Check {
            name: "mean range grows as level worsens".into(),
            passed: trend_ok,
            detail: format!("[{}] MHz", fmt(&mean_ranges)),
        },
    ];
    CampaignResult { name: name.to_string(), levels, range_limit, within_limit, trend_ok, checks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes `<dir>/<name>.csv` or `<dir>/<name>.json` and returns the path.
pub fn emit_report(result: &ExperimentResult, dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join(format!("{}.json", result.name));
            let file = std::fs::File::create(&path).map_err(io_err(&path))?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), result)?;
            Ok(path)
        }
        ReportFormat::Csv => {
            let path = dir.join(format!("{}.csv", result.name));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([
                "true_freq_hz",
                "mean_est_hz",
                "max_deviation_hz",
                "range_hz",
                "n_frames",
                "flagged_frames",
                "clipped_samples",
                "config_hash",
            ])?;
            for p in &result.points {
                w.write_record([
                    p.true_freq.to_string(),
                    p.mean_est.to_string(),
                    p.max_deviation.to_string(),
                    p.range.to_string(),
                    p.n_frames.to_string(),
                    p.flagged_frames.to_string(),
                    p.clipped_samples.to_string(),
                    result.metadata.config_hash.clone(),
                ])?;
            }
            w.flush().map_err(io_err(&path))?;
            Ok(path)
        }
    }
}
