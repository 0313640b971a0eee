//! One-bit gradient codec: sign quantization, the stochastic sign
//! pre-processing used under heterogeneous data, majority-vote aggregation
//! and the sign-descent model update.
//!
//! Exact zeros quantize to `+1`, and an even split in the vote also resolves
//! to `+1`, so every run is reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Dense real vector of model or gradient entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GradientVector {
    values: Vec<f64>,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("gradient vector must have dimension > 0"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry {} at index {i}",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl TryFrom<Vec<f64>> for GradientVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<GradientVector> for Vec<f64> {
    fn from(g: GradientVector) -> Self {
        g.values
    }
}

/// Vector over `{-1, +1}`; the unit of uplink transmission (one bit per entry).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector {
    signs: Vec<i8>,
}

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::invalid("sign vector must have dimension > 0"));
        }
        if let Some(i) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!(
                "sign entry {} at index {i} is not -1 or +1",
                signs[i]
            )));
        }
        Ok(Self { signs })
    }

    /// All-`+1` vector of dimension `dim`.
    pub fn ones(dim: usize) -> Result<Self> {
        Self::new(vec![1; dim])
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.signs
    }

    pub fn negated(&self) -> SignVector {
        SignVector {
            signs: self.signs.iter().map(|&s| -s).collect(),
        }
    }

    /// Number of coordinates where `self` and `other` disagree.
    pub fn hamming(&self, other: &SignVector) -> usize {
        self.signs
            .iter()
            .zip(&other.signs)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Packed little-endian bitfield: bit `i % 8` of byte `i / 8` is set iff
    /// entry `i` is `+1`. Always `ceil(d / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.signs.len().div_ceil(8)];
        for (i, &s) in self.signs.iter().enumerate() {
            if s > 0 {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sign vector must have dimension > 0"));
        }
        let need = dim.div_ceil(8);
        if bytes.len() != need {
            return Err(Error::Format(format!(
                "packed sign vector of dimension {dim} needs {need} bytes, got {}",
                bytes.len()
            )));
        }
        let signs = (0..dim)
            .map(|i| {
                if bytes[i / 8] >> (i % 8) & 1 == 1 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        Ok(Self { signs })
    }
}

/// Slack beyond `[0, 1/2]` that is still not counted as clamping.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// Parameters of the stochastic sign pre-processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticSignConfig {
    b: f64,
    p_out: f64,
}

impl StochasticSignConfig {
    pub fn new(b: f64, p_out: f64) -> Result<Self> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::invalid(format!(
                "b must be finite and >= 0, got {b}"
            )));
        }
        if !(0.0..0.5).contains(&p_out) {
            return Err(Error::OutOfRange {
                what: "p_out",
                value: p_out,
                lo: 0.0,
                hi: 0.5,
            });
        }
        Ok(Self { b, p_out })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn p_out(&self) -> f64 {
        self.p_out
    }

    /// Unclamped flip probability for a coordinate of magnitude `abs_g`.
    pub fn raw_flip_probability(&self, abs_g: f64) -> f64 {
        (0.5 - self.p_out - self.b * abs_g) / (1.0 - 2.0 * self.p_out)
    }

    /// Flip probability clamped to `[0, 1/2]`, and whether clamping occurred.
    /// Excursions within [`CLAMP_TOLERANCE`] are rounding noise (for example a
    /// target built from this very coordinate) and are not reported.
    pub fn flip_probability(&self, abs_g: f64) -> (f64, bool) {
        let raw = self.raw_flip_probability(abs_g);
        if raw < 0.0 {
            (0.0, raw < -CLAMP_TOLERANCE)
        } else if raw > 0.5 {
            (0.5, raw > 0.5 + CLAMP_TOLERANCE)
        } else {
            (raw, false)
        }
    }
}

/// Output of [`stochastic_sign_encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSigns {
    pub signs: SignVector,
    /// Coordinates whose raw flip probability fell outside `[0, 1/2]`.
    pub clamped: usize,
}

#[inline]
fn sign_of(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

pub fn sign_quantize(g: &GradientVector) -> SignVector {
    SignVector {
        signs: g.values.iter().map(|&v| sign_of(v)).collect(),
    }
}

/// Sends `-sign(g_i)` with probability `p_i = clamp((1/2 - p_out - b|g_i|) / (1 - 2 p_out), 0, 1/2)`
/// and `sign(g_i)` otherwise, independently per coordinate.
///
/// Composed with a channel that flips the whole packet with probability
/// `p_out`, the received sign is wrong with probability exactly
/// `1/2 - b|g_i|` whenever no clamping occurred.
pub fn stochastic_sign_encode(
    g: &GradientVector,
    cfg: &StochasticSignConfig,
    rng: &mut RandomStream,
) -> EncodedSigns {
    let mut clamped = 0;
    let signs = g
        .values
        .iter()
        .map(|&v| {
            let (p, was_clamped) = cfg.flip_probability(v.abs());
            clamped += usize::from(was_clamped);
            // One draw per coordinate keeps the stream position independent of p.
            let flip = rng.bernoulli(p);
            let s = sign_of(v);
            if flip {
                -s
            } else {
                s
            }
        })
        .collect();
    EncodedSigns {
        signs: SignVector { signs },
        clamped,
    }
}

/// Coordinate-wise sign of the packet sum; an even split resolves to `+1`.
pub fn majority_vote(packets: &[SignVector]) -> Result<SignVector> {
    let first = packets
        .first()
        .ok_or_else(|| Error::invalid("majority vote over an empty packet list"))?;
    let d = first.dim();
    let mut tally = vec![0i32; d];
    for p in packets {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.dim(),
            });
        }
        for (t, &s) in tally.iter_mut().zip(&p.signs) {
            *t += i32::from(s);
        }
    }
    Ok(SignVector {
        signs: tally
            .into_iter()
            .map(|t| if t < 0 { -1 } else { 1 })
            .collect(),
    })
}

/// `w - eta * vote`, elementwise.
pub fn apply_sign_update(
    w: &GradientVector,
    vote: &SignVector,
    eta: f64,
) -> Result<GradientVector> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be > 0, got {eta}"
        )));
    }
    if w.dim() != vote.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: vote.dim(),
        });
    }
    let values = w
        .values
        .iter()
        .zip(&vote.signs)
        .map(|(&x, &s)| x - eta * f64::from(s))
        .collect();
    GradientVector::new(values)
}
