//! JSON run configuration with `synth`, `noise` and `train` sections.
//!
//! Every section and field is optional and falls back to its default. Unknown
//! keys and invalid values are collected and reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::synthgen::{NoiseConfig, SynthConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.synth.problems();
        p.extend(self.noise.problems());
        p.extend(self.train.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Keys present in `doc` but absent from `schema`, as dotted paths.
fn unknown_keys(doc: &Value, schema: &Value, path: &str, out: &mut Vec<String>) {
    match (doc, schema) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in d {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match s.get(k) {
                    Some(sv) => unknown_keys(v, sv, &p, out),
                    None => out.push(format!("unknown key `{p}`")),
                }
            }
        }
        (Value::Array(d), Value::Array(s)) => {
            if let Some(proto) = s.first() {
                for (i, v) in d.iter().enumerate() {
                    unknown_keys(v, proto, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("malformed JSON: {e}")]))?;
    if !doc.is_object() {
        return Err(Error::Config(vec!["the configuration must be a JSON object".into()]));
    }
    let schema = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut problems = Vec::new();
    unknown_keys(&doc, &schema, "", &mut problems);
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let bytes = read_file(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Config(vec!["configuration is not UTF-8".into()]))?;
    parse_run_config(&text)
}

pub fn save_run_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), cfg.to_json().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Mode;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(parse_run_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(parse_run_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_override_defaults() {
        let cfg = parse_run_config(r#"{"train": {"mode": "baseline", "tau": 0.7}}"#).unwrap();
        assert_eq!(cfg.train.mode, Mode::Baseline);
        assert_eq!(cfg.train.tau, 0.7);
        assert_eq!(cfg.train.r, TrainConfig::default().r);
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let text = r#"{"extra": 1, "train": {"tua": 0.8, "optim": {"learning_rate": 1}},
                       "synth": {"classes": [{"name": "a", "shape": "ring", "size_range": [1, 2],
                                              "frequency": 1, "intensity": [1, 0, 0], "colour": 3}]}}"#;
        match parse_run_config(text) {
            Err(Error::Config(p)) => {
                assert_eq!(p.len(), 4, "{p:?}");
                assert!(p.iter().any(|s| s.contains("train.optim.learning_rate")));
                assert!(p.iter().any(|s| s.contains("synth.classes[0].colour")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn every_invalid_value_is_listed() {
        let text = r#"{"noise": {"p_dilate": 2}, "train": {"rho": -1, "tau": 0}, "synth": {"channels": 0}}"#;
        match parse_run_config(text) {
            Err(Error::Config(p)) => assert!(p.len() >= 4, "{p:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_enum_value_is_a_config_error() {
        assert!(matches!(parse_run_config(r#"{"train": {"mode": "fancy"}}"#), Err(Error::Config(_))));
        assert!(matches!(parse_run_config("[1]"), Err(Error::Config(_))));
        assert!(matches!(parse_run_config("{"), Err(Error::Config(_))));
    }
}
