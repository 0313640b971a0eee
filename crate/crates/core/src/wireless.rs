//! Per-worker physics: CPU time and energy, uplink time and energy, and the
//! Rayleigh block-fading outage channel.
//!
//! Rates are spectral efficiencies in bits/s/Hz, so a payload of `s` bits
//! occupies the uplink for `s / (r B)` seconds. The channel power gain is
//! exponential with unit mean. An outage delivers the whole sign packet
//! negated.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sign_codec::SignVector;

/// One worker's physical constants, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Twice the effective switched capacitance; CPU energy is `alpha/2 * c * D * f^2`.
    pub alpha: f64,
    /// CPU cycles per bit of training data.
    pub cycles_per_bit: f64,
    /// Training data processed per local iteration, bits.
    pub data_bits: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Uplink bandwidth, Hz.
    pub bandwidth: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    /// Uplink payload per round, bits.
    pub payload_bits: f64,
}

impl Default for DeviceProfile {
    /// The homogeneous MNIST setup: 2 GHz phones on a 15 kHz, 1 W uplink.
    fn default() -> Self {
        Self {
            alpha: 2e-28,
            cycles_per_bit: 20.0,
            data_bits: 5e6,
            f_min: 0.3e9,
            f_max: 2e9,
            p_min: 0.0,
            p_max: 1.0,
            bandwidth: 15e3,
            noise_psd: 1e-8,
            payload_bits: 7850.0,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("cycles_per_bit", self.cycles_per_bit),
            ("data_bits", self.data_bits),
            ("f_min", self.f_min),
            ("bandwidth", self.bandwidth),
            ("noise_psd", self.noise_psd),
            ("payload_bits", self.payload_bits),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "device.{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.f_max.is_finite() && self.f_max >= self.f_min) {
            return Err(Error::invalid(format!(
                "device.f_max ({}) must be >= f_min ({})",
                self.f_max, self.f_min
            )));
        }
        if !(self.p_min.is_finite() && self.p_min >= 0.0) {
            return Err(Error::invalid(format!(
                "device.p_min must be >= 0, got {}",
                self.p_min
            )));
        }
        if !(self.p_max.is_finite() && self.p_max > self.p_min) {
            return Err(Error::invalid(format!(
                "device.p_max ({}) must be > p_min ({})",
                self.p_max, self.p_min
            )));
        }
        Ok(())
    }

    /// `c * D`, cycles per local iteration.
    pub fn cycles(&self) -> f64 {
        self.cycles_per_bit * self.data_bits
    }

    /// `N0 * B`, noise power in watts.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }

    /// Fastest possible local computation, `c D / f_max`.
    pub fn min_compute_time(&self) -> f64 {
        self.cycles() / self.f_max
    }
}

fn require_positive(what: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be > 0, got {v}")))
    }
}

/// CPU energy of one local iteration, `alpha/2 * c * D * f^2`.
pub fn compute_energy(p: &DeviceProfile, f: f64) -> Result<f64> {
    require_positive("CPU frequency", f)?;
    Ok(0.5 * p.alpha * p.cycles() * f * f)
}

/// CPU time of one local iteration, `c * D / f`.
pub fn compute_time(p: &DeviceProfile, f: f64) -> Result<f64> {
    require_positive("CPU frequency", f)?;
    Ok(p.cycles() / f)
}

/// Uplink airtime `s / (r B)`.
pub fn comm_time(p: &DeviceProfile, r: f64) -> Result<f64> {
    require_positive("rate", r)?;
    Ok(p.payload_bits / (r * p.bandwidth))
}

/// Uplink energy `P s / (r B)`.
pub fn comm_energy(p: &DeviceProfile, r: f64, power: f64) -> Result<f64> {
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::invalid(format!(
            "transmit power must be >= 0, got {power}"
        )));
    }
    Ok(power * comm_time(p, r)?)
}

/// `(2^r - 1) N0 B`, the received power needed to support rate `r`.
fn snr_threshold_power(p: &DeviceProfile, r: f64) -> f64 {
    (r * std::f64::consts::LN_2).exp_m1() * p.noise_power()
}

/// Rayleigh outage probability `1 - exp(-(2^r - 1) N0 B / P)`.
///
/// `P = 0` gives certain outage for any positive rate, and no outage at `r = 0`.
pub fn outage_probability(p: &DeviceProfile, r: f64, power: f64) -> f64 {
    debug_assert!(r >= 0.0 && power >= 0.0);
    if r <= 0.0 {
        return 0.0;
    }
    if power <= 0.0 {
        return 1.0;
    }
    -(-snr_threshold_power(p, r) / power).exp_m1()
}

/// First-order (high-SNR) outage `(2^r - 1) N0 B / P`; not capped at 1.
pub fn high_snr_outage(p: &DeviceProfile, r: f64, power: f64) -> f64 {
    snr_threshold_power(p, r) / power
}

/// Result of pushing one sign packet through the block-fading uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionOutcome {
    pub delivered: SignVector,
    pub outage_occurred: bool,
}

/// Flips the whole packet with probability `p_out`.
pub fn transmit_packet(
    signs: &SignVector,
    p_out: f64,
    rng: &mut RandomStream,
) -> TransmissionOutcome {
    let outage = rng.bernoulli(p_out);
    TransmissionOutcome {
        delivered: if outage {
            signs.negated()
        } else {
            signs.clone()
        },
        outage_occurred: outage,
    }
}

/// Draws an exponential unit-mean power gain and reports whether the received
/// SNR falls short of `2^r - 1`. Cross-check for [`outage_probability`].
pub fn sample_rayleigh_outage(
    p: &DeviceProfile,
    r: f64,
    power: f64,
    rng: &mut RandomStream,
) -> bool {
    let h: f64 = Exp1.sample(rng);
    let snr = power * h / p.noise_power();
    snr < (r * std::f64::consts::LN_2).exp_m1()
}

/// Operating point `(f, r, P)` of one worker and the costs it implies.
///
/// Fields are private: the cost fields are always recomputed from the
/// decision triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioPlan {
    frequency: f64,
    rate: f64,
    power: f64,
    outage: f64,
    round_time: f64,
    round_energy: f64,
    compute_energy: f64,
    comm_energy: f64,
}

impl RadioPlan {
    /// Builds a plan, checking the frequency and power bounds of `profile`.
    ///
    /// Bounds are checked with a relative slack of `1e-12`, since optimal
    /// operating points sit on them and are reached by floating-point formulas.
    pub fn new(profile: &DeviceProfile, frequency: f64, rate: f64, power: f64) -> Result<Self> {
        const SLACK: f64 = 1e-12;
        if !(frequency >= profile.f_min * (1.0 - SLACK)
            && frequency <= profile.f_max * (1.0 + SLACK))
        {
            return Err(Error::OutOfRange {
                what: "frequency",
                value: frequency,
                lo: profile.f_min,
                hi: profile.f_max,
            });
        }
        if !(power >= profile.p_min * (1.0 - SLACK) - f64::MIN_POSITIVE
            && power <= profile.p_max * (1.0 + SLACK))
        {
            return Err(Error::OutOfRange {
                what: "power",
                value: power,
                lo: profile.p_min,
                hi: profile.p_max,
            });
        }
        let e_cmp = compute_energy(profile, frequency)?;
        let e_com = comm_energy(profile, rate, power)?;
        Ok(Self {
            frequency,
            rate,
            power,
            outage: outage_probability(profile, rate, power),
            round_time: compute_time(profile, frequency)? + comm_time(profile, rate)?,
            round_energy: e_cmp + e_com,
            compute_energy: e_cmp,
            comm_energy: e_com,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// Exact Rayleigh outage probability at this operating point.
    pub fn outage(&self) -> f64 {
        self.outage
    }

    /// Compute plus uplink time of one round, seconds.
    pub fn round_time(&self) -> f64 {
        self.round_time
    }

    /// Compute plus uplink energy of one round, joules.
    pub fn round_energy(&self) -> f64 {
        self.round_energy
    }

    pub fn compute_energy(&self) -> f64 {
        self.compute_energy
    }

    pub fn comm_energy(&self) -> f64 {
        self.comm_energy
    }
}
