//! Indicator vectors to hallucination rate, binary label and expected class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::check_indicators;

/// Exact hallucination rate `count / total`, stored unreduced so the
/// denominator always equals the number of agents (`n + 1`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HallucinationRate {
    num: u32,
    den: u32,
}

impl HallucinationRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::validation("hallucination rate with zero denominator"));
        }
        if num > den {
            return Err(Error::validation(format!("hallucination rate {num}/{den} exceeds 1")));
        }
        Ok(HallucinationRate { num, den })
    }

    pub fn numerator(self) -> u32 {
        self.num
    }

    pub fn denominator(self) -> u32 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    /// Percentage with one decimal, rounded half-up: `2/6` renders as `33.3`.
    pub fn percent_label(self) -> String {
        let den = self.den as u64;
        // tenths of a percent, rounded half-up
        let tenths = (2000 * self.num as u64 + den) / (2 * den);
        format!("{}.{}", tenths / 10, tenths % 10)
    }
}

/// Value equality: `2/6 == 1/3`.
impl PartialEq for HallucinationRate {
    fn eq(&self, other: &Self) -> bool {
        self.num as u64 * other.den as u64 == other.num as u64 * self.den as u64
    }
}

impl fmt::Display for HallucinationRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

pub fn hallucination_rate(indicators: &[u8]) -> Result<HallucinationRate> {
    if indicators.is_empty() {
        return Err(Error::validation("hallucination rate of an empty indicator vector"));
    }
    check_indicators(indicators)?;
    let count = indicators.iter().map(|&i| i as u32).sum();
    HallucinationRate::new(count, indicators.len() as u32)
}

/// 1 when the query produced any hallucination.
pub fn binary_label(p_h: HallucinationRate) -> Result<u8> {
    // HallucinationRate::new already bounds the value to [0, 1]
    Ok(u8::from(!p_h.is_zero()))
}

/// `floor((n + 1) * p_h)`; requires `p_h` to carry denominator `n + 1`.
pub fn expected_class(p_h: HallucinationRate, n: usize) -> Result<usize> {
    let raters = n as u64 + 1;
    if p_h.den as u64 != raters {
        return Err(Error::validation(format!(
            "rate {p_h} does not have denominator n + 1 = {raters}"
        )));
    }
    Ok((raters * p_h.num as u64 / p_h.den as u64) as usize)
}

/// Row label used in split tables, e.g. `33.3% (y=2)`.
pub fn class_label_text(class: usize, n: usize) -> String {
    let rate = HallucinationRate {
        num: class as u32,
        den: n as u32 + 1,
    };
    format!("{}% (y={class})", rate.percent_label())
}
