use serde::{Deserialize, Serialize};

use crate::agents::encode_with_scenario;
use crate::error::{Error, Result};
use crate::record::Scenario;

pub const MIN_DIM: usize = 16;
pub const SCENARIO_SLOTS: usize = 3;

/// Hashed bag-of-words block of width `D` followed by a 3-slot scenario
/// one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How text was turned into features; stored with every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    pub scenario_encoding: bool,
}

impl FeatureSpec {
    pub fn new(dim: usize, scenario_encoding: bool) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::validation(format!("feature dimension {dim} below {MIN_DIM}")));
        }
        Ok(FeatureSpec { dim, scenario_encoding })
    }

    pub fn width(&self) -> usize {
        self.dim + SCENARIO_SLOTS
    }

    /// Features for a query; with scenario encoding the tagged form of the
    /// query is hashed and the one-hot is set.
    pub fn featurize_query(&self, text: &str, scenario: Scenario) -> FeatureVector {
        if self.scenario_encoding {
            featurize(&encode_with_scenario(text, scenario), Some(scenario), self.dim)
        } else {
            featurize(text, None, self.dim)
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed, L2-normalized token counts plus the scenario one-hot.
/// `dim` is clamped up to [`MIN_DIM`].
pub fn featurize(text: &str, scenario: Option<Scenario>, dim: usize) -> FeatureVector {
    let dim = dim.max(MIN_DIM);
    let mut v = vec![0.0; dim + SCENARIO_SLOTS];
    for tok in tokenize(text) {
        v[(fnv1a(tok.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v[..dim].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v[..dim].iter_mut().for_each(|x| *x /= norm);
    }
    if let Some(s) = scenario {
        v[dim + s.index()] = 1.0;
    }
    FeatureVector(v)
}
