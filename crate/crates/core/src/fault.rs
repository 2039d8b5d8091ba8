//! Seedable silent-data-corruption injector for gemv outputs.
//!
//! Each injectable gemv call is one Bernoulli trial with probability
//! `rate`. When it fires, one output entry is picked uniformly and
//! `flips_per_event` distinct bits inside the selected domain are XOR-ed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseVector;

/// Identifier of the generator behind every injector, recorded in reports
/// so a run can be replayed.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.3/seed_from_u64";

/// Redraws allowed before falling back to the sign/mantissa domain.
pub const MAX_REDRAWS: usize = 32;

const SIGN_BIT: u8 = 63;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("fault rate must lie in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error("flips per event must be >= 1")]
    ZeroFlips,
    #[error("{flips} flips per event exceed the {width} bits of the {domain} domain")]
    TooManyFlips {
        flips: u32,
        width: usize,
        domain: BitDomain,
    },
    #[error("unknown bit domain '{0}' (expected sign, mantissa, sign-mantissa, exponent or any)")]
    UnknownDomain(String),
}

/// Region of the IEEE-754 binary64 pattern that faults may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitDomain {
    /// Bit 63.
    Sign,
    /// Bits 0..=51.
    Mantissa,
    /// Bits 0..=51 and 63.
    SignMantissa,
    /// Bits 52..=62.
    Exponent,
    /// Bits 0..=63.
    Any,
}

impl BitDomain {
    pub fn positions(self) -> Vec<u8> {
        match self {
            BitDomain::Sign => vec![SIGN_BIT],
            BitDomain::Mantissa => (0..52).collect(),
            BitDomain::SignMantissa => (0..52).chain(std::iter::once(SIGN_BIT)).collect(),
            BitDomain::Exponent => (52..63).collect(),
            BitDomain::Any => (0..64).collect(),
        }
    }

    pub fn width(self) -> usize {
        match self {
            BitDomain::Sign => 1,
            BitDomain::Mantissa => 52,
            BitDomain::SignMantissa => 53,
            BitDomain::Exponent => 11,
            BitDomain::Any => 64,
        }
    }

    pub fn contains(self, bit: u8) -> bool {
        match self {
            BitDomain::Sign => bit == SIGN_BIT,
            BitDomain::Mantissa => bit < 52,
            BitDomain::SignMantissa => bit < 52 || bit == SIGN_BIT,
            BitDomain::Exponent => (52..63).contains(&bit),
            BitDomain::Any => bit < 64,
        }
    }

    /// Whether flipping only bits of this domain can turn a finite value
    /// into NaN or ±Inf.
    fn can_produce_non_finite(self) -> bool {
        matches!(self, BitDomain::Exponent | BitDomain::Any)
    }
}

impl fmt::Display for BitDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BitDomain::Sign => "sign",
            BitDomain::Mantissa => "mantissa",
            BitDomain::SignMantissa => "sign-mantissa",
            BitDomain::Exponent => "exponent",
            BitDomain::Any => "any",
        })
    }
}

impl FromStr for BitDomain {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sign" => Ok(BitDomain::Sign),
            "mantissa" => Ok(BitDomain::Mantissa),
            "sign-mantissa" | "sign_mantissa" => Ok(BitDomain::SignMantissa),
            "exponent" => Ok(BitDomain::Exponent),
            "any" => Ok(BitDomain::Any),
            other => Err(FaultError::UnknownDomain(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPolicy {
    pub rate: f64,
    pub flips_per_event: u32,
    pub bit_domain: BitDomain,
    pub seed: u64,
    /// Accept NaN/±Inf results instead of redrawing. Off by default.
    #[serde(default)]
    pub allow_non_finite: bool,
    /// Stop injecting after this many events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

impl FaultPolicy {
    pub fn new(rate: f64, flips_per_event: u32, bit_domain: BitDomain, seed: u64) -> Result<Self, FaultError> {
        let policy = Self {
            rate,
            flips_per_event,
            bit_domain,
            seed,
            allow_non_finite: false,
            max_events: None,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// A policy that never fires.
    pub fn disabled() -> Self {
        Self {
            rate: 0.0,
            flips_per_event: 1,
            bit_domain: BitDomain::SignMantissa,
            seed: 0,
            allow_non_finite: false,
            max_events: None,
        }
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(FaultError::InvalidRate(self.rate));
        }
        if self.flips_per_event == 0 {
            return Err(FaultError::ZeroFlips);
        }
        if self.flips_per_event as usize > self.bit_domain.width() {
            return Err(FaultError::TooManyFlips {
                flips: self.flips_per_event,
                width: self.bit_domain.width(),
                domain: self.bit_domain,
            });
        }
        Ok(())
    }
}

/// One corrupted gemv output entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    /// Zero-based index of the injectable gemv call.
    pub call_index: u64,
    /// Solver iteration (1-based) the call belonged to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    pub element_index: usize,
    /// Sorted, distinct bit indices in 0..=63.
    pub bit_positions: Vec<u8>,
    pub before: u64,
    pub after: u64,
}

impl FaultEvent {
    pub fn before_value(&self) -> f64 {
        f64::from_bits(self.before)
    }

    pub fn after_value(&self) -> f64 {
        f64::from_bits(self.after)
    }
}

/// XOR the IEEE-754 pattern of `value` at `positions`.
///
/// # Panics
/// Panics if a position is 64 or larger.
pub fn flip_bits(value: f64, positions: &[u8]) -> f64 {
    let mut mask = 0u64;
    for &p in positions {
        assert!(p < 64, "bit position {p} out of range");
        mask ^= 1u64 << p;
    }
    f64::from_bits(value.to_bits() ^ mask)
}

/// Stateful injector; one per solve.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    policy: FaultPolicy,
    rng: ChaCha8Rng,
    calls: u64,
    events: u64,
    domain_bits: Vec<u8>,
    fallback_bits: Vec<u8>,
}

impl FaultInjector {
    pub fn new(policy: FaultPolicy) -> Result<Self, FaultError> {
        policy.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(policy.seed),
            domain_bits: policy.bit_domain.positions(),
            fallback_bits: BitDomain::SignMantissa.positions(),
            calls: 0,
            events: 0,
            policy,
        })
    }

    pub fn disabled() -> Self {
        Self::new(FaultPolicy::disabled()).expect("disabled policy is valid")
    }

    pub fn policy(&self) -> &FaultPolicy {
        &self.policy
    }

    /// Number of events injected so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Number of injectable calls seen so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn rng_algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Returns a possibly corrupted copy of `v` and the events applied.
    pub fn inject(&mut self, v: &DenseVector) -> (DenseVector, Vec<FaultEvent>) {
        let mut out = v.clone();
        let events = self.inject_in_place(&mut out).into_iter().collect();
        (out, events)
    }

    /// Corrupts `v` in place. The Bernoulli draw happens on every call, so
    /// the stream position depends only on the number of calls and the
    /// events that fired.
    pub fn inject_in_place(&mut self, v: &mut DenseVector) -> Option<FaultEvent> {
        let call_index = self.calls;
        self.calls += 1;

        let u: f64 = self.rng.gen();
        if u >= self.policy.rate || self.policy.max_events.is_some_and(|m| self.events >= m) {
            return None;
        }
        self.events += 1;

        let element_index = self.rng.gen_range(0..v.len());
        let before = v[element_index];
        let flips = self.policy.flips_per_event as usize;

        let screen =
            !self.policy.allow_non_finite && self.policy.bit_domain.can_produce_non_finite() && before.is_finite();

        let mut bits = draw_bits(&mut self.rng, &self.domain_bits, flips);
        if screen {
            let mut attempts = 1;
            while !flip_bits(before, &bits).is_finite() && attempts <= MAX_REDRAWS {
                bits = draw_bits(&mut self.rng, &self.domain_bits, flips);
                attempts += 1;
            }
            if !flip_bits(before, &bits).is_finite() {
                bits = draw_bits(&mut self.rng, &self.fallback_bits, flips.min(self.fallback_bits.len()));
            }
        }

        let after = flip_bits(before, &bits);
        v.as_mut_slice()[element_index] = after;
        Some(FaultEvent {
            call_index,
            iteration: None,
            element_index,
            bit_positions: bits,
            before: before.to_bits(),
            after: after.to_bits(),
        })
    }
}

fn draw_bits(rng: &mut ChaCha8Rng, domain: &[u8], count: usize) -> Vec<u8> {
    let mut bits: Vec<u8> = index::sample(rng, domain.len(), count)
        .into_iter()
        .map(|i| domain[i])
        .collect();
    bits.sort_unstable();
    bits
}

/// Writes one JSON object per line.
pub fn write_events_jsonl<W: Write>(events: &[FaultEvent], mut out: W) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events_jsonl(text: &str) -> serde_json::Result<Vec<FaultEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
