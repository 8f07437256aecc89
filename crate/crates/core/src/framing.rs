//! Splitting a continuous acquisition into one-pulse frames and padding
//! them to the FFT length.
//!
//! The pulse period comes from the autocorrelation of the signal energy.
//! The gap position is found once by folding the signal at that period,
//! which averages out noise over all pulses. Cuts are then placed at the
//! quiet sample nearest each nominal boundary so that no pulse is split
//! between two frames.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const FFT_LEN: usize = 512;
/// Nominal samples per frame delivered by the acquisition.
pub const NOMINAL_FRAME_LEN: usize = 440;
/// Samples averaged when looking for the quietest cut point.
pub const CUT_SMOOTHING: usize = 8;
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFrame {
    pub samples: Vec<i32>,
    /// Samples taken from the acquisition; anything past this is padding.
    pub active_len: usize,
    pub frame_index: usize,
    pub padded: bool,
}

impl SampleFrame {
    pub fn new(frame_index: usize, samples: Vec<i32>) -> Self {
        SampleFrame { active_len: samples.len(), samples, frame_index, padded: false }
    }

    pub fn active(&self) -> &[i32] {
        &self.samples[..self.active_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSearch {
    /// Lags at or below this are never reported.
    pub min_lag: usize,
    /// Largest lag examined; defaults to half the signal length.
    pub max_lag: Option<usize>,
    pub threshold: f64,
    /// The first local maximum within this fraction of the best peak wins,
    /// which keeps multiples of the period from being reported.
    pub key_fraction: f64,
    /// Energy components above this frequency (cycles per sample) are
    /// removed before correlating. The energy of a modulated pulse ripples
    /// at twice the carrier, and that ripple otherwise puts false maxima on
    /// the broad envelope lobe. `None` keeps the full band.
    pub lowpass: Option<f64>,
}

/// Default energy low-pass: 80 MHz at 10 GSPS, below the ripple of any
/// carrier from 100 MHz up and above the first few repetition harmonics.
pub const DEFAULT_ENERGY_LOWPASS: f64 = 0.008;

impl Default for PeriodSearch {
    fn default() -> Self {
        PeriodSearch {
            min_lag: 2,
            max_lag: None,
            threshold: DEFAULT_CORRELATION_THRESHOLD,
            key_fraction: 0.9,
            lowpass: Some(DEFAULT_ENERGY_LOWPASS),
        }
    }
}

/// Estimates the pulse period in samples with default search settings.
pub fn estimate_period<T: Copy + Into<f64>>(signal: &[T]) -> Result<usize> {
    estimate_period_with(signal, &PeriodSearch::default())
}

pub fn estimate_period_with<T: Copy + Into<f64>>(signal: &[T], search: &PeriodSearch) -> Result<usize> {
    let scores = normalized_energy_autocorrelation(signal, search.lowpass);
    pick_period(&scores, signal.len(), search)
}

/// Period in fractional samples. The integer estimate is refined at the
/// largest multiple of the period inside the search range, where a
/// parabolic fit through the correlation peak resolves a fraction of a
/// sample that is then divided by the multiple.
pub fn estimate_period_fractional<T: Copy + Into<f64>>(signal: &[T], search: &PeriodSearch) -> Result<f64> {
    let scores = normalized_energy_autocorrelation(signal, search.lowpass);
    let lag = pick_period(&scores, signal.len(), search)?;
    let max_lag = search.max_lag.unwrap_or(signal.len() / 2).min(scores.len().saturating_sub(2));
    let mut best = lag as f64;
    for m in (1..=max_lag / lag).rev() {
        let centre = m * lag;
        let lo = centre.saturating_sub(m).max(1);
        let hi = (centre + m).min(max_lag);
        let Some(k) = (lo..=hi).max_by(|&a, &b| scores[a].total_cmp(&scores[b])) else {
            continue;
        };
        if k == lo || k == hi || scores[k] < search.threshold {
            continue;
        }
        let (a, b, c) = (scores[k - 1], scores[k], scores[k + 1]);
        let curvature = a - 2.0 * b + c;
        let delta = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
        best = (k as f64 + delta) / m as f64;
        break;
    }
    Ok(best)
}

fn pick_period(scores: &[f64], len: usize, search: &PeriodSearch) -> Result<usize> {
    let not_found = |best_lag, best_score| Error::PeriodNotFound { best_lag, best_score };
    let max_lag = search.max_lag.unwrap_or(len / 2).min(scores.len().saturating_sub(2));

    // Skip the zero-lag lobe: start after the correlation first turns negative.
    let Some(lobe_end) = (1..=max_lag).find(|&k| scores[k] < 0.0) else {
        return Err(not_found(0, 0.0));
    };
    let start = lobe_end.max(search.min_lag + 1);
    if start + 1 > max_lag {
        return Err(not_found(0, 0.0));
    }
    let (best_lag, best_score) =
        (start..=max_lag)
            .map(|k| (k, scores[k]))
            .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    if best_score < search.threshold {
        return Err(not_found(best_lag, best_score));
    }
    let key = search.key_fraction * best_score;
    let lag = (start..=max_lag)
        .find(|&k| scores[k] >= key && scores[k] >= scores[k - 1] && scores[k] >= scores[k + 1])
        .unwrap_or(best_lag);
    Ok(lag)
}

/// Normalized autocorrelation of the mean-removed (optionally low-passed)
/// energy sequence, indexed by lag. Each lag is normalized by the energy of
/// the two overlapping segments, so partial overlap does not bias long lags
/// downward.
fn normalized_energy_autocorrelation<T: Copy + Into<f64>>(signal: &[T], lowpass: Option<f64>) -> Vec<f64> {
    let len = signal.len();
    if len < 4 {
        return vec![0.0; len];
    }
    let energy: Vec<f64> = signal.iter().map(|&x| x.into() * x.into()).collect();
    let mean = energy.iter().sum::<f64>() / len as f64;
    let mut centred: Vec<f64> = energy.iter().map(|e| e - mean).collect();

    let n_fft = (2 * len).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n_fft);
    let inverse = planner.plan_fft_inverse(n_fft);
    let spectrum = |v: &[f64]| {
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(n_fft, Complex64::new(0.0, 0.0));
        forward.process(&mut buf);
        buf
    };

    let mut buf = spectrum(&centred);
    if let Some(cutoff) = lowpass {
        for (k, c) in buf.iter_mut().enumerate() {
            if k.min(n_fft - k) as f64 / n_fft as f64 > cutoff {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        inverse.process(&mut buf);
        for (dst, src) in centred.iter_mut().zip(&buf) {
            *dst = src.re / n_fft as f64;
        }
        buf = spectrum(&centred);
    }
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    inverse.process(&mut buf);

    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0.0);
    for v in &centred {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let total = prefix[len];
    (0..len)
        .map(|lag| {
            let head = prefix[len - lag];
            let tail = total - prefix[lag];
            let norm = (head * tail).sqrt();
            if norm > 0.0 {
                buf[lag].re / n_fft as f64 / norm
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStatus {
    Ok,
    /// The period is longer than the signal; nothing was split.
    PeriodExceedsSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSplit {
    pub frames: Vec<SampleFrame>,
    pub status: SplitStatus,
}

impl FrameSplit {
    /// Drops frames with fewer than `min_len` samples, returning the kept
    /// frames and the number dropped. Indices of kept frames are preserved.
    pub fn retain_full(self, min_len: usize) -> (Vec<SampleFrame>, usize) {
        let total = self.frames.len();
        let kept: Vec<_> = self.frames.into_iter().filter(|f| f.active_len >= min_len).collect();
        let dropped = total - kept.len();
        (kept, dropped)
    }
}

/// Default cut search half-width: 5% of the period.
pub fn default_gap_window(period: f64) -> usize {
    (period * 0.05).round() as usize
}

/// Cuts `signal` into consecutive frames, one pulse each. Every input
/// sample ends up in exactly one frame.
///
/// Nominal boundaries sit one `period` apart, starting from the quietest
/// phase of the signal folded at that period. Boundaries closer than half
/// a period to either end are skipped, so a record of one period stays
/// whole. Each cut lands on the quiet sample nearest its nominal position
/// within `gap_search_window`.
pub fn split_frames(signal: &[i32], period: f64, gap_search_window: usize) -> FrameSplit {
    let len = signal.len();
    if !(period >= 1.0) || period > len as f64 {
        return FrameSplit { frames: Vec::new(), status: SplitStatus::PeriodExceedsSignal };
    }
    let activity = smoothed_activity(signal);
    let phase = quiet_phase(&activity, period);
    let peak_activity = activity.iter().copied().max().unwrap_or(0);
    let mut cuts = vec![0usize];
    let mut k = 0.0;
    loop {
        let nominal = phase + k * period;
        k += 1.0;
        if nominal < period / 2.0 {
            continue;
        }
        if nominal > len as f64 - period / 2.0 {
            break;
        }
        let prev = *cuts.last().unwrap();
        let nominal = (nominal.round() as usize).max(prev + 1);
        let lo = nominal.saturating_sub(gap_search_window).max(prev + 1);
        let hi = (nominal + gap_search_window).min(len - 1);
        cuts.push(quiet_cut(&activity, nominal, lo, hi, peak_activity));
    }
    cuts.push(len);
    let frames = cuts.windows(2).enumerate().map(|(i, w)| SampleFrame::new(i, signal[w[0]..w[1]].to_vec())).collect();
    FrameSplit { frames, status: SplitStatus::Ok }
}

/// Centre, in samples from the start, of the quiet stretch of the activity
/// folded at `period`. The stretch is the circular run around the folded
/// minimum that stays below a tenth of the way up to the maximum.
fn quiet_phase(activity: &[i64], period: f64) -> f64 {
    let bins = (period.round() as usize).max(1);
    let mut profile = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for (i, &a) in activity.iter().enumerate() {
        let b = (((i as f64) % period) / period * bins as f64) as usize % bins;
        profile[b] += a as f64;
        counts[b] += 1;
    }
    for (p, &c) in profile.iter_mut().zip(&counts) {
        if c > 0 {
            *p /= c as f64;
        }
    }
    let (min_bin, min) =
        profile.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let limit = min + 0.1 * (max - min);
    let quiet = |k: usize| profile[k % bins] <= limit;
    let mut left = 0;
    while left + 1 < bins && quiet(min_bin + bins - left - 1) {
        left += 1;
    }
    let mut right = 0;
    while left + right + 1 < bins && quiet(min_bin + right + 1) {
        right += 1;
    }
    let centre_bin = min_bin as f64 + (right as f64 - left as f64) / 2.0;
    (centre_bin.rem_euclid(bins as f64) + 0.5) * period / bins as f64
}

/// Picks the cut inside `[lo, hi]`: the quiet sample nearest `nominal`.
/// Quiet means within twice the window minimum, or within a tenth of the
/// record's peak activity above it, whichever is looser. The second term
/// keeps noise in the gap from counting as signal.
fn quiet_cut(activity: &[i64], nominal: usize, lo: usize, hi: usize, peak_activity: i64) -> usize {
    let min = (lo..=hi).map(|i| activity[i]).min().unwrap_or(0);
    let limit = (2 * min + CUT_SMOOTHING as i64).max(min + peak_activity / 10);
    (lo..=hi)
        .filter(|&i| activity[i] <= limit)
        .min_by_key(|&i| (i.abs_diff(nominal), i))
        .unwrap_or_else(|| nominal.clamp(lo, hi))
}

/// Sum of |x| over a window of [`CUT_SMOOTHING`] samples centred on each
/// index (integer sums keep tie detection exact).
fn smoothed_activity(signal: &[i32]) -> Vec<i64> {
    let mut prefix = Vec::with_capacity(signal.len() + 1);
    prefix.push(0i64);
    for &x in signal {
        prefix.push(prefix.last().unwrap() + (x as i64).abs());
    }
    let half = CUT_SMOOTHING / 2;
    (0..signal.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(signal.len());
            prefix[hi] - prefix[lo]
        })
        .collect()
}

/// Zero-pads a frame to `target_len` samples.
pub fn pad_frame(frame: &SampleFrame, target_len: usize) -> Result<SampleFrame> {
    if frame.active_len > target_len {
        return Err(Error::FrameTooLong { len: frame.active_len, target: target_len });
    }
    let mut samples = frame.active().to_vec();
    samples.resize(target_len, 0);
    Ok(SampleFrame { samples, active_len: frame.active_len, frame_index: frame.frame_index, padded: true })
}

/// Writes `frame_index,sample_index,value` rows for every frame.
pub fn write_frames_csv(path: &Path, frames: &[SampleFrame]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "frame_index,sample_index,value").map_err(io_err(path))?;
    for f in frames {
        for (i, v) in f.samples.iter().enumerate() {
            writeln!(out, "{},{i},{v}", f.frame_index).map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}
