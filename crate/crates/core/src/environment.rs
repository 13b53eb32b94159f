//! Seeded i.i.d. conductances on unordered edges of `Z^d`.
//!
//! Nothing is stored: each value is a keyed hash of `(seed, canonical edge)`
//! pushed through the inverse CDF of the chosen law.

use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result, MAX_D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub enum Distribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    /// `low` with probability `prob_low`, otherwise `high`.
    TwoPoint { low: f64, high: f64, prob_low: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionRepr {
    kind: String,
    #[serde(default)]
    params: DistributionParams,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob_low: Option<f64>,
}

impl TryFrom<DistributionRepr> for Distribution {
    type Error = String;

    fn try_from(r: DistributionRepr) -> core::result::Result<Self, String> {
        let p = r.params;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| alloc::format!("distribution '{}' needs params.{}", r.kind, name))
        };
        match r.kind.as_str() {
            "constant" => Ok(Distribution::Constant { value: need(p.value, "value")? }),
            "uniform" => Ok(Distribution::Uniform {
                low: need(p.low, "low")?,
                high: need(p.high, "high")?,
            }),
            "two_point" => Ok(Distribution::TwoPoint {
                low: need(p.low, "low")?,
                high: need(p.high, "high")?,
                prob_low: need(p.prob_low, "prob_low")?,
            }),
            other => Err(alloc::format!(
                "unknown distribution kind '{other}' (expected constant, uniform or two_point)"
            )),
        }
    }
}

impl From<Distribution> for DistributionRepr {
    fn from(d: Distribution) -> Self {
        let mut params = DistributionParams::default();
        let kind = match d {
            Distribution::Constant { value } => {
                params.value = Some(value);
                "constant"
            }
            Distribution::Uniform { low, high } => {
                params.low = Some(low);
                params.high = Some(high);
                "uniform"
            }
            Distribution::TwoPoint { low, high, prob_low } => {
                params.low = Some(low);
                params.high = Some(high);
                params.prob_low = Some(prob_low);
                "two_point"
            }
        };
        DistributionRepr { kind: kind.into(), params }
    }
}

impl Distribution {
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { low, high } => 0.5 * (low + high),
            Distribution::TwoPoint { low, high, prob_low } => prob_low * low + (1.0 - prob_low) * high,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Constant { .. } => 0.0,
            Distribution::Uniform { low, high } => (high - low) * (high - low) / 12.0,
            Distribution::TwoPoint { low, high, prob_low } => {
                prob_low * (1.0 - prob_low) * (high - low) * (high - low)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Distribution::Constant { .. })
    }

    /// Inverse CDF at `u` in the open interval `(0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { low, high } => low + (high - low) * u,
            Distribution::TwoPoint { low, high, prob_low } => {
                if u < prob_low {
                    low
                } else {
                    high
                }
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Constant { value } => (value, value),
            Distribution::Uniform { low, high } | Distribution::TwoPoint { low, high, .. } => (low, high),
        }
    }
}

/// Canonical unordered edge: `u` precedes `v` lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub u: Point,
    pub v: Point,
}

impl Edge {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        if x == y {
            return Err(Error::DegenerateEdge);
        }
        Ok(if x < y { Edge { u: x, v: y } } else { Edge { u: y, v: x } })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub seed: u64,
    pub d: usize,
    pub lambda: f64,
    pub distribution: Distribution,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl EnvironmentSpec {
    pub fn new(seed: u64, d: usize, lambda: f64, distribution: Distribution) -> Result<Self> {
        let env = Self { seed, d, lambda, distribution };
        env.validate()?;
        Ok(env)
    }

    /// `a = 1` everywhere, with ellipticity 1.
    pub fn unit(d: usize) -> Result<Self> {
        Self::new(0, d, 1.0, Distribution::Constant { value: 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_D {
            return Err(Error::InvalidDimension(self.d));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParameter("lambda must lie in (0, 1]"));
        }
        let (lo, hi) = self.distribution.support();
        let tol = 1e-12;
        if !(lo >= self.lambda * (1.0 - tol) && hi <= (1.0 + tol) / self.lambda && lo <= hi) {
            return Err(Error::InvalidParameter("distribution support must lie in [lambda, 1/lambda]"));
        }
        if let Distribution::TwoPoint { prob_low, .. } = self.distribution {
            if !(0.0..=1.0).contains(&prob_low) {
                return Err(Error::InvalidParameter("prob_low must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.distribution.mean()
    }

    /// 64 uniform bits for the edge `{x, y}`; symmetric by canonicalization.
    #[inline]
    pub fn edge_bits(&self, x: &Point, y: &Point) -> u64 {
        let (u, v) = if x < y { (x, y) } else { (y, x) };
        let mut h = splitmix64(self.seed ^ 0x5851_f42d_4c95_7f2d);
        for k in 0..self.d {
            // 32-bit coordinate words, paired per round
            let word = ((u[k] as u32 as u64) << 32) | (v[k] as u32 as u64);
            h = splitmix64(h ^ word);
        }
        h
    }

    /// Conductance without the degenerate-edge check. Caller guarantees `x != y`.
    #[inline]
    pub fn value(&self, x: &Point, y: &Point) -> f64 {
        if let Distribution::Constant { value } = self.distribution {
            return value;
        }
        let bits = self.edge_bits(x, y);
        let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        self.distribution.quantile(u)
    }

    pub fn conductance(&self, x: &Point, y: &Point) -> Result<f64> {
        if x == y {
            return Err(Error::DegenerateEdge);
        }
        Ok(self.value(x, y))
    }
}
