//! Two's-complement fixed-point formats, written `S<w>,<f>` for signed
//! values with `w` total bits and `f` fraction bits.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub signed: bool,
    pub wordlength: u32,
    pub fraction_bits: u32,
}

/// ADC sample format.
pub const S12_0: FixedPointFormat = FixedPointFormat { signed: true, wordlength: 12, fraction_bits: 0 };
/// FFT datapath word.
pub const S16_0: FixedPointFormat = FixedPointFormat { signed: true, wordlength: 16, fraction_bits: 0 };
/// Fitted peak index, in bins with 1/16-bin resolution.
pub const S16_4: FixedPointFormat = FixedPointFormat { signed: true, wordlength: 16, fraction_bits: 4 };

impl FixedPointFormat {
    pub fn new(signed: bool, wordlength: u32, fraction_bits: u32) -> Result<Self> {
        let fmt = FixedPointFormat { signed, wordlength, fraction_bits };
        fmt.validate()?;
        Ok(fmt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.wordlength) {
            return Err(Error::InvalidConfig(format!("wordlength {} outside 1..=32", self.wordlength)));
        }
        if self.fraction_bits >= self.wordlength {
            return Err(Error::InvalidConfig(format!(
                "fraction bits {} must be below wordlength {}",
                self.fraction_bits, self.wordlength
            )));
        }
        if self.signed && self.wordlength < 2 {
            return Err(Error::InvalidConfig("signed format needs at least 2 bits".into()));
        }
        Ok(())
    }

    pub fn min_code(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.wordlength - 1))
        } else {
            0
        }
    }

    pub fn max_code(&self) -> i64 {
        if self.signed {
            (1i64 << (self.wordlength - 1)) - 1
        } else {
            (1i64 << self.wordlength) - 1
        }
    }

    /// Weight of one code step.
    pub fn lsb(&self) -> f64 {
        (-(self.fraction_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_code() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 * self.lsb()
    }

    pub fn contains_code(&self, code: i64) -> bool {
        (self.min_code()..=self.max_code()).contains(&code)
    }

    /// Clamps `code` into range. The flag is true when clamping happened.
    pub fn saturate(&self, code: i64) -> (i64, bool) {
        if code > self.max_code() {
            (self.max_code(), true)
        } else if code < self.min_code() {
            (self.min_code(), true)
        } else {
            (code, false)
        }
    }

    /// Rounds `value` to the nearest representable multiple of the LSB and
    /// saturates. Returns the integer code and whether it saturated.
    pub fn encode(&self, value: f64) -> (i64, bool) {
        let scaled = (value / self.lsb()).round();
        if !scaled.is_finite() {
            return if scaled > 0.0 { (self.max_code(), true) } else { (self.min_code(), true) };
        }
        // f64 -> i64 casts saturate, which is what we want for huge inputs.
        self.saturate(scaled as i64)
    }

    pub fn decode(&self, code: i64) -> f64 {
        code as f64 * self.lsb()
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { 'S' } else { 'U' };
        write!(f, "{s}{},{}", self.wordlength, self.fraction_bits)
    }
}
