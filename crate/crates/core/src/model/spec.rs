//! Model spec strings such as `ECD3VG`, `ECVT-768` or `OECVG`.
//!
//! ```text
//! spec   := ["O"] "E" layers "V" layers ["-768"]
//! layers := (("C" | "D" | "G" | "L" | "T") [count])+
//! ```
//!
//! `C` is a convolution, `D<n>` a stack of `n` dilated convolutions (must
//! directly follow a `C`, which then acts point-wise), `G`/`L` recurrent
//! layers and `T<n>` an `n`-layer transformer encoder. The `O` prefix selects
//! the one-way model; `O-baseline` is shorthand for `OECVG`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 256;
pub const WIDE_FEATURE_DIM: usize = 768;
pub const DEFAULT_DILATED_LAYERS: usize = 3;
pub const DEFAULT_TRANSFORMER_LAYERS: usize = 3;
const BASELINE_ALIAS: &str = "O-baseline";
const BASELINE_SPEC: &str = "OECVG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Dilated,
    Gru,
    Lstm,
    Transformer,
}

impl LayerKind {
    fn letter(self) -> char {
        match self {
            Self::Conv => 'C',
            Self::Dilated => 'D',
            Self::Gru => 'G',
            Self::Lstm => 'L',
            Self::Transformer => 'T',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        Some(match c {
            'C' => Self::Conv,
            'D' => Self::Dilated,
            'G' => Self::Gru,
            'L' => Self::Lstm,
            'T' => Self::Transformer,
            _ => return None,
        })
    }

    fn default_count(self) -> usize {
        match self {
            Self::Dilated => DEFAULT_DILATED_LAYERS,
            Self::Transformer => DEFAULT_TRANSFORMER_LAYERS,
            _ => 1,
        }
    }
}

/// One token: a layer kind and how many layers it expands to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    TwoWay,
    OneWay,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub eeg_branch: Vec<LayerSpec>,
    pub video_branch: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub mode: MatchMode,
}

impl ModelSpec {
    pub fn parse(s: &str) -> Result<Self> {
        s.parse()
    }

    pub fn is_two_way(&self) -> bool {
        self.mode == MatchMode::TwoWay
    }

    fn validate(&self, spec: &str) -> Result<()> {
        for (name, branch) in [("EEG", &self.eeg_branch), ("video", &self.video_branch)] {
            if branch.is_empty() {
                return Err(spec_error(spec, format!("{name} branch has no layers")));
            }
            for (i, l) in branch.iter().enumerate() {
                if l.count == 0 {
                    return Err(spec_error(spec, format!("{name} layer {} has count 0", l.kind.letter())));
                }
                if l.kind == LayerKind::Conv && l.count != 1 {
                    return Err(spec_error(spec, "C takes no count".into()));
                }
                if l.kind == LayerKind::Dilated && (i == 0 || branch[i - 1].kind != LayerKind::Conv) {
                    return Err(spec_error(spec, format!("D in the {name} branch must directly follow C")));
                }
            }
        }
        Ok(())
    }
}

fn spec_error(spec: &str, reason: String) -> Error {
    Error::Spec {
        spec: spec.to_string(),
        reason,
    }
}

fn parse_layers(spec: &str, s: &str) -> Result<Vec<LayerSpec>> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        let kind = LayerKind::from_letter(c).ok_or_else(|| spec_error(spec, format!("unknown layer token `{c}`")))?;
        let mut digits = String::new();
        while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
            digits.push(*d);
            chars.next();
        }
        let count = if digits.is_empty() {
            kind.default_count()
        } else {
            digits
                .parse()
                .map_err(|_| spec_error(spec, format!("bad layer count `{digits}`")))?
        };
        out.push(LayerSpec { kind, count });
    }
    Ok(out)
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let original = s;
        let s = if s == BASELINE_ALIAS { BASELINE_SPEC } else { s };
        let (body, feature_dim) = match s.strip_suffix("-768") {
            Some(b) => (b, WIDE_FEATURE_DIM),
            None => (s, DEFAULT_FEATURE_DIM),
        };
        let (body, mode) = match body.strip_prefix('O') {
            Some(b) => (b, MatchMode::OneWay),
            None => (body, MatchMode::TwoWay),
        };
        let body = body
            .strip_prefix('E')
            .ok_or_else(|| spec_error(original, "expected `E` to open the EEG branch".into()))?;
        let v = body
            .find('V')
            .ok_or_else(|| spec_error(original, "expected `V` to open the video branch".into()))?;
        let spec = ModelSpec {
            eeg_branch: parse_layers(original, &body[..v])?,
            video_branch: parse_layers(original, &body[v + 1..])?,
            feature_dim,
            mode,
        };
        spec.validate(original)?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    /// Canonical form: counts are written only when they differ from the
    /// default, except for `D`, which always carries its count.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mode == MatchMode::OneWay {
            f.write_str("O")?;
        }
        let write = |f: &mut fmt::Formatter<'_>, layers: &[LayerSpec]| -> fmt::Result {
            for l in layers {
                write!(f, "{}", l.kind.letter())?;
                if l.kind == LayerKind::Dilated || l.count != l.kind.default_count() {
                    write!(f, "{}", l.count)?;
                }
            }
            Ok(())
        };
        f.write_str("E")?;
        write(f, &self.eeg_branch)?;
        f.write_str("V")?;
        write(f, &self.video_branch)?;
        if self.feature_dim == WIDE_FEATURE_DIM {
            f.write_str("-768")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(kind: LayerKind, count: usize) -> LayerSpec {
        LayerSpec { kind, count }
    }

    #[test]
    fn named_models() {
        let s = ModelSpec::parse("ECD3VG").unwrap();
        assert_eq!(s.eeg_branch, vec![l(LayerKind::Conv, 1), l(LayerKind::Dilated, 3)]);
        assert_eq!(s.video_branch, vec![l(LayerKind::Gru, 1)]);
        assert_eq!((s.feature_dim, s.mode), (256, MatchMode::TwoWay));

        let s = ModelSpec::parse("ECVG-768").unwrap();
        assert_eq!(s.eeg_branch, vec![l(LayerKind::Conv, 1)]);
        assert_eq!(s.feature_dim, 768);

        let s = ModelSpec::parse("ECVT").unwrap();
        assert_eq!(s.video_branch, vec![l(LayerKind::Transformer, 3)]);

        let s = ModelSpec::parse("O-baseline").unwrap();
        assert_eq!(s, ModelSpec::parse("OECVG").unwrap());
        assert_eq!(s.mode, MatchMode::OneWay);
    }

    #[test]
    fn malformed() {
        for bad in ["EXVQ", "ECVG-512", "CVG", "ECG", "EVG", "ECV", "ED3VG", "ECVD", "ECGDVG", "EC0VG", "EC2VG", ""] {
            assert!(matches!(ModelSpec::parse(bad), Err(Error::Spec { .. })), "{bad}");
        }
    }

    #[test]
    fn canonical_rendering() {
        for s in ["ECVG", "ECVL", "ECVT", "ECD3VG", "ECVG-768", "OECVG", "ECT2VCG2", "ECD2VCD1"] {
            assert_eq!(ModelSpec::parse(s).unwrap().to_string(), s);
        }
        assert_eq!(ModelSpec::parse("ECDVG").unwrap().to_string(), "ECD3VG");
        assert_eq!(ModelSpec::parse("ECG1VT3").unwrap().to_string(), "ECGVT");
    }

    fn arb_branch() -> impl Strategy<Value = Vec<LayerSpec>> {
        let token = prop_oneof![
            Just(vec![l(LayerKind::Conv, 1)]),
            (1usize..5).prop_map(|n| vec![l(LayerKind::Conv, 1), l(LayerKind::Dilated, n)]),
            (1usize..4).prop_map(|n| vec![l(LayerKind::Gru, n)]),
            (1usize..4).prop_map(|n| vec![l(LayerKind::Lstm, n)]),
            (1usize..5).prop_map(|n| vec![l(LayerKind::Transformer, n)]),
        ];
        prop::collection::vec(token, 1..4).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn round_trip(eeg in arb_branch(), video in arb_branch(), wide in any::<bool>(), one_way in any::<bool>()) {
            let spec = ModelSpec {
                eeg_branch: eeg,
                video_branch: video,
                feature_dim: if wide { 768 } else { 256 },
                mode: if one_way { MatchMode::OneWay } else { MatchMode::TwoWay },
            };
            let text = spec.to_string();
            let parsed = ModelSpec::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &spec);
            prop_assert_eq!(parsed.to_string(), text);
        }
    }
}
