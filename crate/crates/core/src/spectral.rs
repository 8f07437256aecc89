//! Per-lane frequency detection: fixed-point radix-2 FFT, complex
//! magnitude, and a sequential peak scan that captures the two bins beside
//! the maximum.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::framing::{pad_frame, SampleFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Drop the shifted-out bits (floor).
    Truncate,
    /// Add half an LSB, then floor.
    RoundHalfUp,
    /// Round to nearest, ties to even. Unbiased.
    RoundHalfEven,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FftConfig {
    pub n: usize,
    /// Width of the datapath word, including sign.
    pub data_bits: u32,
    /// Width of twiddle factors, including sign (Q1.(bits-1)).
    pub twiddle_bits: u32,
    /// Right shift applied after each butterfly stage.
    pub scaling_schedule: Vec<u32>,
    pub rounding: Rounding,
    /// Fraction bits kept when magnitudes are converted to fixed point for
    /// the peak comparison.
    pub compare_frac_bits: u32,
}

impl Default for FftConfig {
    fn default() -> Self {
        FftConfig::with_headroom_schedule(512)
    }
}

impl FftConfig {
    /// Shift by one at every stage, i.e. an overall 1/N scaling.
    pub fn unit_shift(n: usize) -> Self {
        let stages = n.trailing_zeros() as usize;
        FftConfig { n, scaling_schedule: vec![1; stages], ..FftConfig::base(n) }
    }

    /// Uses the spare bits between a 12-bit sample and the 16-bit datapath
    /// as growth headroom: the first three stages run unscaled and every
    /// later stage shifts by one. Peak growth of a full-scale real input
    /// is then 2^3, which still fits the word, and rounding noise enters
    /// at 1/8 the relative level of [`FftConfig::unit_shift`].
    pub fn with_headroom_schedule(n: usize) -> Self {
        let stages = n.trailing_zeros() as usize;
        let schedule = (0..stages).map(|s| u32::from(s >= 3)).collect();
        FftConfig { n, scaling_schedule: schedule, ..FftConfig::base(n) }
    }

    fn base(n: usize) -> Self {
        FftConfig {
            n,
            data_bits: 16,
            twiddle_bits: 16,
            scaling_schedule: Vec::new(),
            rounding: Rounding::RoundHalfEven,
            compare_frac_bits: 8,
        }
    }

    pub fn stages(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    /// Sum of all stage shifts; outputs equal the DFT divided by 2^this.
    pub fn total_shift(&self) -> u32 {
        self.scaling_schedule.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("FFT length {} is not a power of two >= 4", self.n)));
        }
        if self.scaling_schedule.len() != self.stages() {
            return Err(Error::InvalidConfig(format!(
                "scaling schedule has {} entries, expected {}",
                self.scaling_schedule.len(),
                self.stages()
            )));
        }
        if !(2..=32).contains(&self.data_bits) || !(2..=30).contains(&self.twiddle_bits) {
            return Err(Error::InvalidConfig("data or twiddle width out of range".into()));
        }
        if self.scaling_schedule.iter().any(|&s| s > 16) || self.compare_frac_bits > 24 {
            return Err(Error::InvalidConfig("shift or comparison precision out of range".into()));
        }
        Ok(())
    }

    fn word_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.data_bits - 1);
        (-half, half - 1)
    }
}

fn shift_round(v: i64, shift: u32, rounding: Rounding) -> i64 {
    if shift == 0 {
        return v;
    }
    match rounding {
        Rounding::Truncate => v >> shift,
        Rounding::RoundHalfUp => (v + (1i64 << (shift - 1))) >> shift,
        Rounding::RoundHalfEven => {
            let floor = v >> shift;
            let rem = v - (floor << shift);
            let half = 1i64 << (shift - 1);
            if rem > half || (rem == half && floor & 1 == 1) {
                floor + 1
            } else {
                floor
            }
        }
    }
}

enum Twiddle {
    One,
    MinusJ,
    General(i64, i64),
}

fn twiddle_table(cfg: &FftConfig) -> Vec<Twiddle> {
    let n = cfg.n;
    let frac = cfg.twiddle_bits - 1;
    let max = (1i64 << frac) - 1;
    let q = |v: f64| ((v * (1i64 << frac) as f64).round() as i64).clamp(-max - 1, max);
    (0..n / 2)
        .map(|k| {
            if k == 0 {
                Twiddle::One
            } else if 4 * k == n {
                Twiddle::MinusJ
            } else {
                let ang = -2.0 * PI * k as f64 / n as f64;
                Twiddle::General(q(ang.cos()), q(ang.sin()))
            }
        })
        .collect()
}

/// Fixed-point FFT of a real frame, decimation in frequency with a
/// per-stage shift. Output is in natural order and equals the DFT scaled
/// by 2^-[`FftConfig::total_shift`], up to rounding.
pub fn fft_fixed(frame: &[i32], cfg: &FftConfig) -> Result<Vec<Complex<i32>>> {
    cfg.validate()?;
    let n = cfg.n;
    if frame.len() != n {
        return Err(Error::InvalidConfig(format!("frame has {} samples, FFT expects {n}", frame.len())));
    }
    let (lo, hi) = cfg.word_range();
    if let Some((i, &v)) = frame.iter().enumerate().find(|(_, &v)| (v as i64) < lo || (v as i64) > hi) {
        return Err(Error::Domain(format!("sample {i} = {v} does not fit a {}-bit word", cfg.data_bits)));
    }
    let twiddles = twiddle_table(cfg);
    let frac = cfg.twiddle_bits - 1;
    let mut re: Vec<i64> = frame.iter().map(|&v| v as i64).collect();
    let mut im = vec![0i64; n];

    for (stage, &shift) in cfg.scaling_schedule.iter().enumerate() {
        let half = n >> (stage + 1);
        for block in (0..n).step_by(2 * half) {
            for j in 0..half {
                let (a, b) = (block + j, block + j + half);
                let (sr, si) = (re[a] + re[b], im[a] + im[b]);
                let (dr, di) = (re[a] - re[b], im[a] - im[b]);
                re[a] = shift_round(sr, shift, cfg.rounding);
                im[a] = shift_round(si, shift, cfg.rounding);
                let (pr, pi) = match twiddles[j << stage] {
                    Twiddle::One => (dr, di),
                    Twiddle::MinusJ => (di, -dr),
                    Twiddle::General(wr, wi) => {
                        let pr = dr * wr - di * wi;
                        let pi = dr * wi + di * wr;
                        re[b] = shift_round(pr, frac + shift, cfg.rounding);
                        im[b] = shift_round(pi, frac + shift, cfg.rounding);
                        continue;
                    }
                };
                re[b] = shift_round(pr, shift, cfg.rounding);
                im[b] = shift_round(pi, shift, cfg.rounding);
            }
        }
        for (i, v) in re.iter().chain(im.iter()).enumerate() {
            if *v < lo || *v > hi {
                return Err(Error::FftOverflow { stage, index: i % n, value: *v });
            }
        }
    }

    let bits = n.trailing_zeros();
    let mut out = vec![Complex::new(0i32, 0i32); n];
    for (i, (r, m)) in re.iter().zip(&im).enumerate() {
        let k = i.reverse_bits() >> (usize::BITS - bits);
        out[k] = Complex::new(*r as i32, *m as i32);
    }
    Ok(out)
}

/// Direct-summation DFT in double precision.
pub fn dft_oracle(frame: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    let table: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
    (0..n).map(|k| frame.iter().enumerate().map(|(t, &x)| table[(t * k) % n] * x).sum()).collect()
}

/// Complex magnitude in single precision.
pub fn magnitude(c: Complex<i32>) -> f32 {
    let (re, im) = (c.re as f32, c.im as f32);
    (re * re + im * im).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakFlags {
    /// Every magnitude in the search range compared equal.
    pub flat: bool,
    /// The winner is not a local maximum (it sits against the search edge).
    pub edge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub x0: usize,
    pub y_m1: f32,
    pub y0: f32,
    pub y_p1: f32,
    pub frame_index: usize,
    pub flags: PeakFlags,
}

/// Scans `magnitudes` (the first half of a spectrum) for the main bin.
///
/// Bins 1 through len-2 are compared in order as fixed-point values with
/// `compare_frac_bits` fraction bits; only a strictly greater value takes
/// over, so ties keep the earliest bin. When the maximum updates, the left
/// neighbour is latched together with it and the right neighbour one step
/// later, as the register pairs after a streaming FFT would.
pub fn peak_detect(magnitudes: &[f32], compare_frac_bits: u32) -> Result<SpectralPeak> {
    if magnitudes.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 magnitudes, got {}", magnitudes.len())));
    }
    let scale = (1u64 << compare_frac_bits) as f64;
    let fixed = |m: f32| (m as f64 * scale).round() as u64;
    let last = magnitudes.len() - 2;

    let mut best = fixed(magnitudes[1]);
    let (mut x0, mut y_m1, mut y0) = (1, magnitudes[0], magnitudes[1]);
    let mut y_p1 = magnitudes[2];
    let mut lowest = best;
    let mut pending_right = false;
    for (k, &m) in magnitudes.iter().enumerate().take(last + 1).skip(2) {
        if pending_right {
            y_p1 = m;
            pending_right = false;
        }
        let q = fixed(m);
        lowest = lowest.min(q);
        if q > best {
            best = q;
            x0 = k;
            y_m1 = magnitudes[k - 1];
            y0 = m;
            pending_right = true;
        }
    }
    if pending_right {
        y_p1 = magnitudes[last + 1];
    }
    let flags = PeakFlags { flat: lowest == best, edge: fixed(y_m1) > best || fixed(y_p1) > best };
    Ok(SpectralPeak { x0, y_m1, y0, y_p1, frame_index: 0, flags })
}

/// Magnitudes of bins 0..n/2 of the fixed-point spectrum of a frame.
pub fn frame_spectrum(frame: &SampleFrame, cfg: &FftConfig) -> Result<Vec<f32>> {
    let padded = if frame.samples.len() == cfg.n { frame.clone() } else { pad_frame(frame, cfg.n)? };
    let bins = fft_fixed(&padded.samples, cfg)?;
    Ok(bins[..cfg.n / 2].iter().map(|&c| magnitude(c)).collect())
}

/// Pad, transform, take magnitudes, and locate the main bin.
pub fn analyze_frame(frame: &SampleFrame, cfg: &FftConfig) -> Result<SpectralPeak> {
    let mags = frame_spectrum(frame, cfg)?;
    let mut peak = peak_detect(&mags, cfg.compare_frac_bits)?;
    peak.frame_index = frame.frame_index;
    Ok(peak)
}

pub fn write_spectrum_csv(path: &Path, magnitudes: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "bin,magnitude").map_err(io_err(path))?;
    for (k, m) in magnitudes.iter().enumerate() {
        writeln!(out, "{k},{m}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn write_peaks_csv(path: &Path, peaks: &[SpectralPeak]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "frame_index,x0,y_m1,y0,y_p1").map_err(io_err(path))?;
    for p in peaks {
        writeln!(out, "{},{},{},{},{}", p.frame_index, p.x0, p.y_m1, p.y0, p.y_p1).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}
