//! FM configurations: a fixed oscillator routing with fixed frequency ratios.
//!
//! Configurations are stored as TOML documents:
//!
//! ```toml
//! name = "violin"
//! source_patch = "STRINGS 1"
//!
//! [[oscillator]]      # oscillator 1
//! ratio = "1.0"       # decimal string with exactly one fractional digit
//! carrier = true      # contributes to the audible output
//! modulates = []      # 1-based indices of oscillators whose phase it drives
//!
//! [[oscillator]]      # oscillator 2
//! ratio = "1.0"
//! carrier = false
//! modulates = [1]
//! ```
//!
//! At most six oscillators, at least one carrier, every oscillator either a
//! carrier or a modulator, and no cycles in the modulation graph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};

pub const MAX_OSCILLATORS: usize = 6;

/// Positive frequency ratio with one decimal place, stored in tenths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ratio(u32);

impl Ratio {
    pub fn from_tenths(tenths: u32) -> Option<Self> {
        (tenths > 0).then_some(Ratio(tenths))
    }

    pub fn tenths(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (int, frac) = s.split_once('.').ok_or_else(|| format!("ratio {s:?} must have one fractional digit"))?;
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || frac.len() != 1 || !digits(frac) {
            return Err(format!("ratio {s:?} must look like \"1.0\" or \"14.5\""));
        }
        let whole: u32 = int.parse().map_err(|_| format!("ratio {s:?} out of range"))?;
        let tenths = whole
            .checked_mul(10)
            .and_then(|v| v.checked_add(u32::from(frac.as_bytes()[0] - b'0')))
            .ok_or_else(|| format!("ratio {s:?} out of range"))?;
        Ratio::from_tenths(tenths).ok_or_else(|| format!("ratio {s:?} must be positive"))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Oscillator {
    pub ratio: Ratio,
    /// 0-based indices of the oscillators this one modulates.
    pub modulates: Vec<usize>,
    pub carrier: bool,
}

/// A validated FM configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FmConfig {
    name: String,
    source_patch: String,
    oscillators: Vec<Oscillator>,
    order: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOscillator {
    ratio: Ratio,
    #[serde(default)]
    modulates: Vec<usize>,
    #[serde(default)]
    carrier: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    #[serde(default)]
    source_patch: String,
    #[serde(rename = "oscillator", default)]
    oscillators: Vec<RawOscillator>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl FmConfig {
    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            msg: e.message().to_string(),
        })?;
        let mut oscillators = Vec::with_capacity(raw.oscillators.len());
        for (i, osc) in raw.oscillators.into_iter().enumerate() {
            let mut modulates = Vec::with_capacity(osc.modulates.len());
            for target in osc.modulates {
                if target == 0 {
                    return Err(Error::Config(format!("oscillator {} modulates index 0; indices are 1-based", i + 1)));
                }
                modulates.push(target - 1);
            }
            oscillators.push(Oscillator { ratio: osc.ratio, modulates, carrier: osc.carrier });
        }
        FmConfig::new(raw.name, raw.source_patch, oscillators)
    }

    pub fn new(name: impl Into<String>, source_patch: impl Into<String>, oscillators: Vec<Oscillator>) -> Result<Self> {
        let n = oscillators.len();
        if n == 0 || n > MAX_OSCILLATORS {
            return Err(Error::Config(format!("oscillator count {n} outside 1..={MAX_OSCILLATORS}")));
        }
        if !oscillators.iter().any(|o| o.carrier) {
            return Err(Error::Config("no carrier oscillator".into()));
        }
        for (i, osc) in oscillators.iter().enumerate() {
            if let Some(&bad) = osc.modulates.iter().find(|&&t| t >= n) {
                return Err(Error::Config(format!("oscillator {} modulates unknown oscillator {}", i + 1, bad + 1)));
            }
            let mut seen = osc.modulates.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != osc.modulates.len() {
                return Err(Error::Config(format!("oscillator {} lists a target twice", i + 1)));
            }
            if !osc.carrier && osc.modulates.is_empty() {
                return Err(Error::Config(format!("oscillator {} is neither a carrier nor a modulator", i + 1)));
            }
        }
        let order = topological_order(&oscillators)?;
        Ok(FmConfig { name: name.into(), source_patch: source_patch.into(), oscillators, order })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_patch(&self) -> &str {
        &self.source_patch
    }

    pub fn oscillators(&self) -> &[Oscillator] {
        &self.oscillators
    }

    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    /// 0-based evaluation order: every modulator precedes the oscillators it drives.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_carrier(&self, osc: usize) -> bool {
        self.oscillators[osc].carrier
    }

    pub fn carrier_count(&self) -> usize {
        self.oscillators.iter().filter(|o| o.carrier).count()
    }

    /// 0-based indices of the oscillators that modulate `osc`.
    pub fn modulators_of(&self, osc: usize) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.oscillators[m].modulates.contains(&osc)).collect()
    }

    /// Per-channel envelope ceiling: 1 for carriers, `i_max` for modulators.
    pub fn amplitude_limits(&self, i_max: f64) -> Vec<f64> {
        self.oscillators.iter().map(|o| if o.carrier { 1.0 } else { i_max }).collect()
    }

    /// Canonical document text; `parse(to_toml())` reproduces `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", quote(&self.name)));
        out.push_str(&format!("source_patch = {}\n", quote(&self.source_patch)));
        for osc in &self.oscillators {
            let targets: Vec<String> = osc.modulates.iter().map(|t| (t + 1).to_string()).collect();
            out.push_str("\n[[oscillator]]\n");
            out.push_str(&format!("ratio = \"{}\"\n", osc.ratio));
            out.push_str(&format!("carrier = {}\n", osc.carrier));
            out.push_str(&format!("modulates = [{}]\n", targets.join(", ")));
        }
        out
    }
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Kahn's algorithm over the "modulates" edges, taking the highest ready
/// index first. A leftover oscillator means a cycle.
fn topological_order(oscillators: &[Oscillator]) -> Result<Vec<usize>> {
    let n = oscillators.len();
    let mut pending = vec![0usize; n];
    for osc in oscillators {
        for &t in &osc.modulates {
            pending[t] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.iter().copied().max() {
        ready.retain(|&r| r != i);
        order.push(i);
        for &t in &oscillators[i].modulates {
            pending[t] -= 1;
            if pending[t] == 0 {
                ready.push(t);
            }
        }
    }
    if order.len() < n {
        let culprit = (0..n).find(|i| !order.contains(i)).unwrap();
        return Err(Error::Feedback(culprit + 1));
    }
    Ok(order)
}
