//! JSON channel files.
//!
//! ```json
//! {"bins": [{"observed": 0,
//!            "eff_lumi_prior": {"mean": 1, "cv": 0.2},
//!            "background_prior": {"shape_offset": 24.5, "rate": 25}}]}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use refprior::{Bin, CountingChannel, GammaPriorSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed channel file at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: bin {bin}, field `{field}`: {message}")]
    Invalid {
        path: PathBuf,
        bin: usize,
        field: &'static str,
        message: String,
    },
    #[error("{path}: channel has no bins")]
    Empty { path: PathBuf },
}

/// A gamma prior in either accepted spelling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PriorForm {
    MeanCv { mean: f64, cv: f64 },
    Shape { shape_offset: f64, rate: f64 },
}

impl PriorForm {
    pub fn to_spec(self) -> refprior::Result<GammaPriorSpec> {
        match self {
            PriorForm::MeanCv { mean, cv } => GammaPriorSpec::from_mean_cv(mean, cv),
            PriorForm::Shape { shape_offset, rate } => GammaPriorSpec::new(shape_offset, rate),
        }
    }
}

impl From<GammaPriorSpec> for PriorForm {
    fn from(p: GammaPriorSpec) -> Self {
        PriorForm::Shape {
            shape_offset: p.shape_offset(),
            rate: p.rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinRecord {
    pub observed: i64,
    pub eff_lumi_prior: PriorForm,
    pub background_prior: PriorForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRecord {
    pub bins: Vec<BinRecord>,
}

impl ChannelRecord {
    pub fn from_channel(channel: &CountingChannel) -> Self {
        Self {
            bins: channel
                .bins()
                .iter()
                .map(|b| BinRecord {
                    observed: b.observed as i64,
                    eff_lumi_prior: b.eff_lumi_prior.into(),
                    background_prior: b.background_prior.into(),
                })
                .collect(),
        }
    }

    pub fn into_channel(self, path: &Path) -> Result<CountingChannel, ChannelError> {
        if self.bins.is_empty() {
            return Err(ChannelError::Empty { path: path.into() });
        }
        let invalid = |bin, field, message: String| ChannelError::Invalid {
            path: path.into(),
            bin,
            field,
            message,
        };
        let mut bins = Vec::with_capacity(self.bins.len());
        for (i, b) in self.bins.into_iter().enumerate() {
            if b.observed < 0 {
                return Err(invalid(i, "observed", format!("count {} is negative", b.observed)));
            }
            let eff = b
                .eff_lumi_prior
                .to_spec()
                .map_err(|e| invalid(i, "eff_lumi_prior", e.to_string()))?;
            let bg = b
                .background_prior
                .to_spec()
                .map_err(|e| invalid(i, "background_prior", e.to_string()))?;
            bins.push(Bin::new(b.observed as u64, eff, bg));
        }
        CountingChannel::new(bins).map_err(|e| invalid(0, "bins", e.to_string()))
    }
}

pub fn parse_channel_str(text: &str, path: &Path) -> Result<CountingChannel, ChannelError> {
    let record: ChannelRecord = serde_json::from_str(text).map_err(|e| ChannelError::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    record.into_channel(path)
}

pub fn parse_channel_file(path: &Path) -> Result<CountingChannel, ChannelError> {
    let text = fs::read_to_string(path).map_err(|source| ChannelError::Read {
        path: path.into(),
        source,
    })?;
    parse_channel_str(&text, path)
}

/// Canonical form: shape/rate priors, pretty-printed.
pub fn channel_to_string(channel: &CountingChannel) -> String {
    let mut s = serde_json::to_string_pretty(&ChannelRecord::from_channel(channel)).expect("channel serializes");
    s.push('\n');
    s
}

pub fn write_channel_file(channel: &CountingChannel, path: &Path) -> Result<(), ChannelError> {
    fs::write(path, channel_to_string(channel)).map_err(|source| ChannelError::Write {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"bins":[{"observed":0,
        "eff_lumi_prior":{"mean":1,"cv":0.2},
        "background_prior":{"mean":1,"cv":0.2}}]}"#;

    #[test]
    fn minimal_file() {
        let ch = parse_channel_str(MINIMAL, Path::new("min.json")).unwrap();
        let b = &ch.bins()[0];
        assert_eq!(b.observed, 0);
        assert_eq!((b.eff_lumi_prior.shape_offset(), b.eff_lumi_prior.rate()), (24.5, 25.0));
        assert_eq!(
            (b.background_prior.shape_offset(), b.background_prior.rate()),
            (24.5, 25.0)
        );
    }

    #[test]
    fn large_cv_is_rejected() {
        let text = MINIMAL.replacen("0.2", "2.0", 1);
        let err = parse_channel_str(&text, Path::new("bad.json")).unwrap_err();
        assert!(
            matches!(
                err,
                ChannelError::Invalid {
                    field: "eff_lumi_prior",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn negative_count_is_rejected() {
        let text = MINIMAL.replace("\"observed\":0", "\"observed\":-3");
        let err = parse_channel_str(&text, Path::new("neg.json")).unwrap_err();
        assert!(matches!(err, ChannelError::Invalid { field: "observed", .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_channel_str("{\"bins\": [\n{\"observed\": }]}", Path::new("x.json")).unwrap_err();
        assert!(matches!(err, ChannelError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_prior_field_is_rejected() {
        let text = MINIMAL.replacen("\"cv\":0.2", "\"sd\":0.2", 1);
        assert!(parse_channel_str(&text, Path::new("x.json")).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let ch = parse_channel_str(MINIMAL, Path::new("min.json")).unwrap();
        let text = channel_to_string(&ch);
        assert_eq!(parse_channel_str(&text, Path::new("rt.json")).unwrap(), ch);
    }
}
