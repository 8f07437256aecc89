//! Sub-bin refinement of a spectral peak by a three-point parabolic fit,
//! then conversion of the fitted index to a frequency.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::fixed::S16_4;
use crate::spectral::SpectralPeak;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexFormula {
    /// `x0 + (y_m1 - y_p1) / (2 (y_m1 - 2 y0 + y_p1))`.
    #[default]
    Standard,
    /// `x0 - (y_p1 - y_m1 - 2 y0) / (y_p1 + y_m1 - 2 y0)`, as printed in the
    /// source design notes. Biased; kept only for comparison runs.
    Literal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    /// The correction exceeded half a bin and was clamped.
    pub edge_clamped: bool,
    pub flat_spectrum: bool,
    /// The three points were collinear; the vertex is undefined.
    pub denominator_degenerate: bool,
    /// The fitted index did not fit S16,4 and was saturated.
    pub saturated: bool,
    /// Peak detection reported a winner that is not a local maximum.
    pub peak_at_edge: bool,
}

impl FitFlags {
    pub fn any(&self) -> bool {
        self.edge_clamped || self.flat_spectrum || self.denominator_degenerate || self.saturated || self.peak_at_edge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub x_c: f64,
    pub edge_clamped: bool,
    pub denominator_degenerate: bool,
}

pub fn fit_vertex(peak: &SpectralPeak) -> Vertex {
    fit_vertex_with(peak, VertexFormula::Standard)
}

pub fn fit_vertex_with(peak: &SpectralPeak, formula: VertexFormula) -> Vertex {
    vertex_from_triple(peak.x0 as f64, peak.y_m1 as f64, peak.y0 as f64, peak.y_p1 as f64, formula)
}

/// Vertex of the parabola through `(x0-1, y_m1)`, `(x0, y0)`, `(x0+1, y_p1)`.
pub fn vertex_from_triple(x0: f64, y_m1: f64, y0: f64, y_p1: f64, formula: VertexFormula) -> Vertex {
    let curvature = y_m1 - 2.0 * y0 + y_p1;
    if curvature == 0.0 || !curvature.is_finite() {
        return Vertex { x_c: x0, edge_clamped: false, denominator_degenerate: true };
    }
    match formula {
        VertexFormula::Standard => {
            let delta = (y_m1 - y_p1) / (2.0 * curvature);
            let clamped = delta.abs() > 0.5;
            Vertex { x_c: x0 + delta.clamp(-0.5, 0.5), edge_clamped: clamped, denominator_degenerate: false }
        }
        VertexFormula::Literal => Vertex {
            x_c: x0 - (y_p1 - y_m1 - 2.0 * y0) / curvature,
            edge_clamped: false,
            denominator_degenerate: false,
        },
    }
}

/// Rounds a bin index to the nearest 1/16 and returns the raw S16,4 code,
/// saturating out-of-range values.
pub fn quantize_index(x_c: f64) -> (i32, bool) {
    let (raw, saturated) = S16_4.encode(x_c);
    (raw as i32, saturated)
}

pub fn index_to_freq(x_c: f64, sample_rate: f64, n: usize) -> f64 {
    x_c * sample_rate / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub frame_index: usize,
    pub x0: usize,
    /// Fitted index before quantization.
    pub x_c: f64,
    /// Fitted index in S16,4, i.e. sixteenths of a bin.
    pub x_c_raw: i32,
    /// Frequency from the quantized index.
    pub freq_hz: f64,
    pub flags: FitFlags,
}

impl FrequencyEstimate {
    pub fn quantized_index(&self) -> f64 {
        S16_4.decode(self.x_c_raw as i64)
    }
}

pub fn estimate(peak: &SpectralPeak, sample_rate: f64, n: usize) -> FrequencyEstimate {
    estimate_with(peak, sample_rate, n, VertexFormula::Standard)
}

pub fn estimate_with(peak: &SpectralPeak, sample_rate: f64, n: usize, formula: VertexFormula) -> FrequencyEstimate {
    let vertex = fit_vertex_with(peak, formula);
    let (raw, saturated) = quantize_index(vertex.x_c);
    FrequencyEstimate {
        frame_index: peak.frame_index,
        x0: peak.x0,
        x_c: vertex.x_c,
        x_c_raw: raw,
        freq_hz: index_to_freq(S16_4.decode(raw as i64), sample_rate, n),
        flags: FitFlags {
            edge_clamped: vertex.edge_clamped,
            flat_spectrum: peak.flags.flat,
            denominator_degenerate: vertex.denominator_degenerate,
            saturated,
            peak_at_edge: peak.flags.edge,
        },
    }
}

pub fn write_estimates_csv(path: &Path, estimates: &[FrequencyEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "frame_index",
        "x0",
        "x_c",
        "x_c_raw",
        "freq_hz",
        "edge_clamped",
        "flat_spectrum",
        "denominator_degenerate",
        "saturated",
        "peak_at_edge",
    ])?;
    for e in estimates {
        let f = e.flags;
        w.write_record([
            e.frame_index.to_string(),
            e.x0.to_string(),
            e.x_c.to_string(),
            e.x_c_raw.to_string(),
            e.freq_hz.to_string(),
            f.edge_clamped.to_string(),
            f.flat_spectrum.to_string(),
            f.denominator_degenerate.to_string(),
            f.saturated.to_string(),
            f.peak_at_edge.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_estimates_json(path: &Path, estimates: &[FrequencyEstimate]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), estimates)?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Serialize(format!("{other:?}")),
    }
}
