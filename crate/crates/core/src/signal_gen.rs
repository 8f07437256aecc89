//! Pulsed modulated microwave stimulus.
//!
//! Each repetition period carries one pulse whose active region is
//!
//! ```text
//! envelope(t) * (dc + dc * V * cos(2π f_c t))
//! ```
//!
//! with `t` measured from the start of the pulse, followed by a silent gap.
//! An AC-coupled variant drops the baseline term and keeps only the
//! modulated carrier, which is what the measurement campaigns feed to the
//! acquisition chain.
//!
//! Samples come out in volts at the ADC input. The peak of the noiseless
//! waveform is `amplitude_fullscale_fraction` times the largest input the
//! ADC represents without clipping.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::fixed::{FixedPointFormat, S12_0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Gaussian,
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Photodetector output including the unmodulated baseline.
    Dc,
    /// Baseline removed; only the modulated carrier remains.
    Ac,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig {
    pub format: FixedPointFormat,
    /// Peak-to-peak input span in volts.
    pub fullscale: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        // ±400 mV input range.
        AdcConfig { format: S12_0, fullscale: 0.8 }
    }
}

impl AdcConfig {
    /// Largest input voltage that quantizes without clipping.
    pub fn max_input(&self) -> f64 {
        let top = self.format.max_code() as f64;
        if self.format.signed {
            top / (1u64 << (self.format.wordlength - 1)) as f64 * self.fullscale / 2.0
        } else {
            top / (1u64 << self.format.wordlength) as f64 * self.fullscale
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusConfig {
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
    /// Pulse repetition rate in Hz.
    pub repetition_rate: f64,
    /// Sample rate in samples per second.
    pub sample_rate: f64,
    pub envelope_kind: EnvelopeKind,
    /// Base width in seconds for triangular envelopes, standard deviation
    /// in seconds for gaussian ones (truncated at ±3σ).
    pub envelope_param: f64,
    pub visibility: f64,
    pub dc_level: f64,
    pub coupling: Coupling,
    pub amplitude_fullscale_fraction: f64,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub n_pulses: usize,
    pub seed: u64,
    pub adc: AdcConfig,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        StimulusConfig {
            carrier_freq: 2e9,
            repetition_rate: 22e6,
            sample_rate: 10e9,
            envelope_kind: EnvelopeKind::Triangular,
            envelope_param: 30e-9,
            visibility: 1.0,
            dc_level: 1.0,
            coupling: Coupling::Dc,
            amplitude_fullscale_fraction: 0.9,
            snr_db: None,
            n_pulses: 100,
            seed: 0,
            adc: AdcConfig::default(),
        }
    }
}

impl StimulusConfig {
    /// Pulsed single-tone carrier used by the measurement campaigns.
    pub fn single_tone(carrier_freq: f64) -> Self {
        StimulusConfig { carrier_freq, coupling: Coupling::Ac, ..Default::default() }
    }

    /// Pulse period in (fractional) samples.
    pub fn period_samples(&self) -> f64 {
        self.sample_rate / self.repetition_rate
    }

    /// Duration of the non-zero part of one pulse, in seconds.
    pub fn active_duration(&self) -> f64 {
        match self.envelope_kind {
            EnvelopeKind::Triangular => self.envelope_param,
            EnvelopeKind::Gaussian => 6.0 * self.envelope_param,
        }
    }

    pub fn active_samples(&self) -> f64 {
        self.active_duration() * self.sample_rate
    }

    pub fn total_samples(&self) -> usize {
        (self.n_pulses as f64 * self.period_samples()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate {} must be positive", self.sample_rate));
        }
        if !(self.carrier_freq >= 0.0 && self.carrier_freq < self.sample_rate / 2.0) {
            return bad(format!("carrier {} Hz violates Nyquist for {} S/s", self.carrier_freq, self.sample_rate));
        }
        if !(self.repetition_rate > 0.0 && self.repetition_rate < self.sample_rate) {
            return bad(format!("repetition rate {} Hz out of range", self.repetition_rate));
        }
        if !(self.envelope_param > 0.0) {
            return bad("envelope parameter must be positive".into());
        }
        if self.active_samples() > self.period_samples() {
            return bad(format!(
                "pulse of {:.1} samples does not fit a {:.1}-sample period",
                self.active_samples(),
                self.period_samples()
            ));
        }
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return bad(format!("visibility {} outside (0, 1]", self.visibility));
        }
        if !(self.dc_level > 0.0) {
            return bad("dc level must be positive".into());
        }
        if !(self.amplitude_fullscale_fraction > 0.0 && self.amplitude_fullscale_fraction <= 1.0) {
            return bad(format!("amplitude fraction {} outside (0, 1]", self.amplitude_fullscale_fraction));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad("snr_db must be finite (omit it for a noiseless stimulus)".into());
            }
        }
        if !(self.adc.fullscale > 0.0) {
            return bad("ADC full scale must be positive".into());
        }
        self.adc.format.validate()
    }

    fn envelope(&self, t: f64) -> f64 {
        let width = self.active_duration();
        if !(0.0..width).contains(&t) {
            return 0.0;
        }
        match self.envelope_kind {
            EnvelopeKind::Triangular => 1.0 - (2.0 * t / width - 1.0).abs(),
            EnvelopeKind::Gaussian => {
                let sigma = self.envelope_param;
                let x = t - width / 2.0;
                (-x * x / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Peak of the un-normalized noiseless waveform.
    fn raw_peak(&self) -> f64 {
        match self.coupling {
            Coupling::Dc => self.dc_level * (1.0 + self.visibility),
            Coupling::Ac => self.dc_level * self.visibility,
        }
    }
}

/// Unit-area gaussian `exp(-t²/2σ²) / (√(2π) σ)`.
pub fn gaussian_curve(t: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok((-t * t / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma))
}

/// Fourier transform of [`gaussian_curve`] at angular frequency `w`.
pub fn gaussian_spectrum(w: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok((-(sigma * w).powi(2) / 2.0).exp())
}

/// Noiseless pulse train in volts.
pub fn generate_stimulus(cfg: &StimulusConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let period = 1.0 / cfg.repetition_rate;
    let width = cfg.active_duration();
    let lead = (period - width) / 2.0;
    let scale = cfg.amplitude_fullscale_fraction * cfg.adc.max_input() / cfg.raw_peak();
    let (dc, mod_depth) = match cfg.coupling {
        Coupling::Dc => (cfg.dc_level, cfg.dc_level * cfg.visibility),
        Coupling::Ac => (0.0, cfg.dc_level * cfg.visibility),
    };
    let omega = 2.0 * PI * cfg.carrier_freq;

    let samples = (0..cfg.total_samples())
        .map(|n| {
            let t = n as f64 / cfg.sample_rate;
            let k = (t / period).floor();
            let local = t - (k * period + lead);
            let env = cfg.envelope(local);
            if env == 0.0 {
                0.0
            } else {
                scale * env * (dc + mod_depth * (omega * local).cos())
            }
        })
        .collect();
    Ok(samples)
}

/// Adds white gaussian noise at `snr_db`, with signal power measured over
/// the non-zero (active) samples only. `None` returns the input unchanged.
pub fn add_awgn(signal: &[f64], snr_db: Option<f64>, seed: u64) -> Result<Vec<f64>> {
    let Some(snr_db) = snr_db else {
        return Ok(signal.to_vec());
    };
    if signal.is_empty() {
        return Err(Error::Domain("cannot add noise to an empty signal".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("snr_db must be finite, got {snr_db}")));
    }
    let (energy, active) = signal.iter().filter(|x| **x != 0.0).fold((0.0, 0usize), |(e, n), x| (e + x * x, n + 1));
    if active == 0 {
        return Err(Error::SilentSignal);
    }
    let signal_power = energy / active as f64;
    let noise_std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(signal.iter().map(|x| x + normal.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<i32>,
    pub format: FixedPointFormat,
    /// Samples that saturated at the format bounds.
    pub clipped: usize,
}

/// Maps volts to ADC codes. A signed format spans `±fullscale/2` over its
/// full code range; an unsigned one spans `[0, fullscale]`.
pub fn quantize(signal: &[f64], fmt: FixedPointFormat, fullscale: f64) -> Result<Quantized> {
    fmt.validate()?;
    if !(fullscale > 0.0) {
        return Err(Error::Domain(format!("full scale must be positive, got {fullscale}")));
    }
    let gain = code_gain(fmt, fullscale);
    let mut clipped = 0;
    let codes = signal
        .iter()
        .map(|x| {
            let (code, sat) = fmt.saturate(round_to_code(x * gain));
            clipped += sat as usize;
            code as i32
        })
        .collect();
    Ok(Quantized { codes, format: fmt, clipped })
}

pub fn dequantize(codes: &[i32], fmt: FixedPointFormat, fullscale: f64) -> Vec<f64> {
    let gain = code_gain(fmt, fullscale);
    codes.iter().map(|&c| c as f64 / gain).collect()
}

fn code_gain(fmt: FixedPointFormat, fullscale: f64) -> f64 {
    if fmt.signed {
        (1u64 << (fmt.wordlength - 1)) as f64 / (fullscale / 2.0)
    } else {
        (1u64 << fmt.wordlength) as f64 / fullscale
    }
}

fn round_to_code(x: f64) -> i64 {
    let r = x.round();
    if r.is_nan() {
        0
    } else {
        r as i64
    }
}

/// Result of running a stimulus through noise and the ADC.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub codes: Vec<i32>,
    pub clipped: usize,
}

/// Generates, adds noise (if configured) and digitizes a stimulus.
pub fn acquire(cfg: &StimulusConfig) -> Result<Acquisition> {
    let clean = generate_stimulus(cfg)?;
    if clean.is_empty() {
        return Ok(Acquisition { codes: Vec::new(), clipped: 0 });
    }
    let noisy = add_awgn(&clean, cfg.snr_db, cfg.seed)?;
    let q = quantize(&noisy, cfg.adc.format, cfg.adc.fullscale)?;
    Ok(Acquisition { codes: q.codes, clipped: q.clipped })
}

/// Writes `index,value` rows.
pub fn write_csv<T: std::fmt::Display>(path: &Path, samples: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "index,value").map_err(io_err(path))?;
    for (i, v) in samples.iter().enumerate() {
        writeln!(out, "{i},{v}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes codes as little-endian 16-bit signed integers.
pub fn write_raw_i16(path: &Path, codes: &[i32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(codes.len() * 2);
    for &c in codes {
        let v = i16::try_from(c).map_err(|_| Error::Domain(format!("code {c} does not fit in 16 bits")))?;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = -2.0 * PI * (i * k) as f64 / n;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        re.hypot(im)
    }

    #[test]
    fn gaussian_curve_values() {
        let peak = gaussian_curve(0.0, 1.0).unwrap();
        assert!((peak - 0.398_942_280_401_432_7).abs() < 1e-15);
        let p2 = gaussian_curve(0.0, 2.0).unwrap();
        let at_sigma = gaussian_curve(2.0, 2.0).unwrap();
        assert!((at_sigma - (-0.5f64).exp() * p2).abs() < 1e-15);
        assert!(gaussian_curve(1.0, 0.0).is_err());
        assert!(gaussian_curve(1.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_curve_integrates_to_one() {
        // trapezoid rule over ±10σ
        let sigma = 1.3;
        let h = 1e-3;
        let steps = (20.0 * sigma / h) as usize;
        let mut sum = 0.0;
        for i in 0..=steps {
            let t = -10.0 * sigma + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            sum += w * gaussian_curve(t, sigma).unwrap();
        }
        assert!((sum * h - 1.0).abs() < 1e-6, "integral {}", sum * h);
    }

    #[test]
    fn gaussian_spectrum_values() {
        assert_eq!(gaussian_spectrum(0.0, 3.0).unwrap(), 1.0);
        let s = 0.25;
        assert!((gaussian_spectrum(1.0 / s, s).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert_eq!(gaussian_spectrum(2.0, s).unwrap(), gaussian_spectrum(-2.0, s).unwrap());
        assert!(gaussian_spectrum(1.0, 0.0).is_err());
    }

    #[test]
    fn gaussian_spectrum_matches_sampled_transform() {
        // Riemann-sum Fourier transform of the sampled curve on a fine grid.
        let sigma = 0.7;
        let dt = 1e-3;
        let half = (8.0 * sigma / dt) as i64;
        for &w in &[0.0, 0.5, 1.0 / sigma, 2.0, 4.0] {
            let (mut re, mut im) = (0.0, 0.0);
            for i in -half..=half {
                let t = i as f64 * dt;
                let f = gaussian_curve(t, sigma).unwrap();
                re += f * (w * t).cos() * dt;
                im -= f * (w * t).sin() * dt;
            }
            let mag = re.hypot(im);
            assert!((mag - gaussian_spectrum(w, sigma).unwrap()).abs() < 1e-3, "w={w}");
        }
    }

    #[test]
    fn zero_visibility_has_no_carrier() {
        // V=0 is outside the configured domain, so build the waveform at a
        // tiny visibility and compare against V=1.
        let mut cfg = StimulusConfig { n_pulses: 1, ..Default::default() };
        cfg.visibility = 1e-9;
        let x = generate_stimulus(&cfg).unwrap();
        let bin = (cfg.carrier_freq * x.len() as f64 / cfg.sample_rate).round() as usize;
        let dc = dft_mag(&x, 0);
        assert!(dft_mag(&x, bin) < 1e-6 * dc);
    }

    #[test]
    fn carrier_lands_in_expected_bin() {
        let cfg = StimulusConfig { n_pulses: 1, ..StimulusConfig::single_tone(2e9) };
        let x = generate_stimulus(&cfg).unwrap();
        let mut frame = x.clone();
        frame.resize(512, 0.0);
        let best = (1..256).max_by(|&a, &b| dft_mag(&frame, a).total_cmp(&dft_mag(&frame, b)));
        assert_eq!(best, Some(102));
    }

    #[test]
    fn dc_coupled_spectrum_peaks_at_carrier_away_from_dc() {
        let cfg = StimulusConfig { n_pulses: 1, ..Default::default() };
        let mut frame = generate_stimulus(&cfg).unwrap();
        frame.resize(512, 0.0);
        let best = (5..256).max_by(|&a, &b| dft_mag(&frame, a).total_cmp(&dft_mag(&frame, b)));
        assert_eq!(best, Some(102));
    }

    #[test]
    fn pulse_train_lines_follow_repetition_rate() {
        // 11 periods of 5000/11 samples span exactly 5000 samples, so the
        // 5000-point DFT has a 2 MHz grid and the lines sit on multiples of 11.
        // Harmonics of the triangle's kinks alias back off-grid, but far
        // below the carrier.
        let cfg = StimulusConfig { n_pulses: 11, ..StimulusConfig::single_tone(2e9) };
        let x = generate_stimulus(&cfg).unwrap();
        assert_eq!(x.len(), 5000);
        let centre = 1000; // 2 GHz
        let mags: Vec<(usize, f64)> = (centre - 40..centre + 40).map(|k| (k, dft_mag(&x, k))).collect();
        let top = mags.iter().map(|m| m.1).fold(0.0, f64::max);
        for (k, m) in mags {
            if k % 11 != 0 {
                assert!(m < 1e-4 * top, "bin {k} has {m} of {top}");
            }
        }
    }

    #[test]
    fn stimulus_is_deterministic_and_pulsed() {
        let cfg = StimulusConfig { n_pulses: 4, snr_db: Some(30.0), seed: 7, ..Default::default() };
        let a = acquire(&cfg).unwrap();
        let b = acquire(&cfg).unwrap();
        assert_eq!(a.codes, b.codes);
        let clean = generate_stimulus(&cfg).unwrap();
        assert_eq!(clean.len(), 1818);
        // gap at the start of the first period
        assert!(clean[..70].iter().all(|&v| v == 0.0));
        assert!(clean[200..250].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = StimulusConfig::default();
        let cases = [
            StimulusConfig { carrier_freq: 6e9, ..base.clone() },
            StimulusConfig { visibility: 0.0, ..base.clone() },
            StimulusConfig { visibility: 1.5, ..base.clone() },
            StimulusConfig { envelope_param: 50e-9, ..base.clone() },
            StimulusConfig { repetition_rate: 20e9, ..base.clone() },
            StimulusConfig { snr_db: Some(f64::NAN), ..base.clone() },
            StimulusConfig { amplitude_fullscale_fraction: 1.2, ..base.clone() },
        ];
        for cfg in cases {
            assert!(generate_stimulus(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn awgn_hits_requested_power() {
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let signal: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
        let p_sig = signal.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let signal: Vec<f64> = signal.iter().map(|x| x / p_sig.sqrt()).collect();
        let noisy = add_awgn(&signal, Some(20.0), 11).unwrap();
        let p_noise = noisy.iter().zip(&signal).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        assert!((p_noise - 0.01).abs() < 0.05 * 0.01, "noise power {p_noise}");
    }

    #[test]
    fn awgn_edge_cases() {
        let x = vec![0.5, -0.25, 0.0, 1.0];
        assert_eq!(add_awgn(&x, None, 1).unwrap(), x);
        assert_eq!(add_awgn(&x, Some(10.0), 5).unwrap(), add_awgn(&x, Some(10.0), 5).unwrap());
        assert_ne!(add_awgn(&x, Some(10.0), 5).unwrap(), add_awgn(&x, Some(10.0), 6).unwrap());
        assert!(matches!(add_awgn(&[0.0; 8], Some(10.0), 1), Err(Error::SilentSignal)));
        assert!(add_awgn(&x, Some(f64::INFINITY), 1).is_err());
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&[0.0, 0.4, -0.4, 0.3999, 1.0], S12_0, 0.8).unwrap();
        assert_eq!(q.codes, vec![0, 2047, -2048, 2047, 2047]);
        assert_eq!(q.clipped, 2);
        assert!(quantize(&[0.0], S12_0, 0.0).is_err());
    }

    #[test]
    fn full_scale_stimulus_does_not_clip() {
        let cfg =
            StimulusConfig { amplitude_fullscale_fraction: 1.0, n_pulses: 20, ..StimulusConfig::single_tone(1.234e9) };
        let acq = acquire(&cfg).unwrap();
        assert_eq!(acq.clipped, 0);
        assert!(acq.codes.iter().any(|&c| c.abs() > 1900));
    }
}
