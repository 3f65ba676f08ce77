//! Built-in configurations for the three instruments and their ablations.
//!
//! Routings follow the DX7 algorithms of the named factory voices with
//! operator feedback removed; ratios are rounded to one decimal place.

use super::FmConfig;
use crate::error::{Error, Result};

const BUILTIN: &[(&str, &str)] = &[
    ("violin", include_str!("../../patches/violin.toml")),
    ("violin-4x1", include_str!("../../patches/violin-4x1.toml")),
    ("violin-2x2", include_str!("../../patches/violin-2x2.toml")),
    ("violin-2", include_str!("../../patches/violin-2.toml")),
    ("flute", include_str!("../../patches/flute.toml")),
    ("flute-4y", include_str!("../../patches/flute-4y.toml")),
    ("flute-2", include_str!("../../patches/flute-2.toml")),
    ("trumpet", include_str!("../../patches/trumpet.toml")),
    ("trumpet-4y", include_str!("../../patches/trumpet-4y.toml")),
    ("trumpet-2", include_str!("../../patches/trumpet-2.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<FmConfig> {
    let text = source(name).ok_or_else(|| Error::Config(format!("no built-in patch named {name:?}")))?;
    FmConfig::parse(text)
}

/// Ablation variants evaluated per instrument, as `(column label, patch name)`.
pub fn ablation_variants(instrument: &str) -> Result<Vec<(&'static str, &'static str)>> {
    Ok(match instrument {
        "flute" => vec![("6", "flute"), ("4 Y", "flute-4y"), ("2", "flute-2")],
        "violin" => vec![("6", "violin"), ("4x1", "violin-4x1"), ("2x2", "violin-2x2"), ("2", "violin-2")],
        "trumpet" => vec![("6", "trumpet"), ("4 Y", "trumpet-4y"), ("2", "trumpet-2")],
        other => return Err(Error::Config(format!("no ablation grid for instrument {other:?}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates_and_round_trips() {
        for name in names() {
            let cfg = builtin(name).unwrap();
            assert_eq!(FmConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn instrument_patches_have_six_oscillators() {
        for (name, patch) in [("violin", "STRINGS 1"), ("flute", "FLUTE 1"), ("trumpet", "BRASS 3")] {
            let cfg = builtin(name).unwrap();
            assert_eq!(cfg.len(), 6);
            assert_eq!(cfg.source_patch(), patch);
        }
    }

    #[test]
    fn ablation_shapes() {
        let cfg = builtin("violin-2x2").unwrap();
        assert_eq!(cfg.len(), 4);
        assert_eq!(cfg.carrier_count(), 2);
        let cfg = builtin("violin-4x1").unwrap();
        assert_eq!(cfg.carrier_count(), 1);
        assert_eq!(cfg.order().iter().map(|i| i + 1).collect::<Vec<_>>(), vec![4, 3, 2, 1]);
        assert_eq!(ablation_variants("violin").unwrap().len(), 4);
        assert!(ablation_variants("cello").is_err());
    }
}
