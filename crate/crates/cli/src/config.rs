//! Flat dotted-key run configuration: preset defaults, then the config
//! file, then command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PRESETS: [&str; 2] = ["desk", "full"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub task: String,
    pub out_dir: String,
    /// Worker threads; `0` means the `PRLSTM_WORKERS` default.
    pub workers: usize,

    #[serde(rename = "model.variant")]
    pub model_variant: String,
    #[serde(rename = "model.hidden")]
    pub model_hidden: usize,
    #[serde(rename = "model.refine_stages")]
    pub model_refine_stages: usize,

    #[serde(rename = "train.steps")]
    pub train_steps: usize,
    #[serde(rename = "train.batch")]
    pub train_batch: usize,
    #[serde(rename = "train.learning_rate")]
    pub train_learning_rate: f32,
    #[serde(rename = "train.clip_norm")]
    pub train_clip_norm: f32,
    #[serde(rename = "train.seed")]
    pub train_seed: u64,
    #[serde(rename = "train.seeds")]
    pub train_seeds: usize,
    #[serde(rename = "train.train_min_len")]
    pub train_min_len: usize,
    #[serde(rename = "train.train_max_len")]
    pub train_max_len: usize,
    #[serde(rename = "train.eval_min_len")]
    pub eval_min_len: usize,
    #[serde(rename = "train.eval_max_len")]
    pub eval_max_len: usize,
    #[serde(rename = "train.eval_samples")]
    pub eval_samples: usize,
    #[serde(rename = "train.eval_seed")]
    pub eval_seed: u64,

    #[serde(rename = "eval.checkpoint")]
    pub eval_checkpoint: Option<String>,

    #[serde(rename = "bench.variants")]
    pub bench_variants: Vec<String>,
    #[serde(rename = "bench.lengths")]
    pub bench_lengths: Vec<usize>,
    #[serde(rename = "bench.batch")]
    pub bench_batch: usize,
    #[serde(rename = "bench.repeats")]
    pub bench_repeats: usize,
    #[serde(rename = "bench.threshold_ms")]
    pub bench_threshold_ms: f64,
    #[serde(rename = "bench.hidden")]
    pub bench_hidden: usize,
    #[serde(rename = "bench.seed")]
    pub bench_seed: u64,
    /// `null` derives a limit from available memory.
    #[serde(rename = "bench.memory_limit_bytes")]
    pub bench_memory_limit_bytes: Option<u64>,

    #[serde(rename = "data.min_len")]
    pub data_min_len: usize,
    #[serde(rename = "data.max_len")]
    pub data_max_len: usize,
    #[serde(rename = "data.count")]
    pub data_count: usize,
    #[serde(rename = "data.seed")]
    pub data_seed: u64,

    #[serde(rename = "plan.len")]
    pub plan_len: usize,
}

/// Every key with its default value under `preset`.
pub fn preset_defaults(preset: &str) -> Result<Map<String, Value>, CliError> {
    let (hidden, steps, eval_max, eval_samples, seeds) = match preset {
        "desk" => (64, 20_000, 200, 256, 3),
        "full" => (256, 40_000, 500, 1024, 10),
        other => return Err(CliError::Config(format!("unknown preset {other:?} (expected one of {PRESETS:?})"))),
    };
    let v = json!({
        "preset": preset,
        "task": "parity",
        "out_dir": "runs",
        "workers": 0,
        "model.variant": "pr-lstm",
        "model.hidden": hidden,
        "model.refine_stages": 1,
        "train.steps": steps,
        "train.batch": 128,
        "train.learning_rate": 1e-3,
        "train.clip_norm": 1.0,
        "train.seed": 0,
        "train.seeds": seeds,
        "train.train_min_len": 1,
        "train.train_max_len": 40,
        "train.eval_min_len": 41,
        "train.eval_max_len": eval_max,
        "train.eval_samples": eval_samples,
        "train.eval_seed": 1_000_003,
        "eval.checkpoint": null,
        "bench.variants": ["pr-lstm", "seq-lstm"],
        "bench.lengths": [256, 512, 1024, 2048, 4096],
        "bench.batch": 1024,
        "bench.repeats": 100,
        "bench.threshold_ms": 500.0,
        "bench.hidden": hidden,
        "bench.seed": 0,
        "bench.memory_limit_bytes": null,
        "data.min_len": 1,
        "data.max_len": 40,
        "data.count": 10,
        "data.seed": 0,
        "plan.len": 8,
    });
    match v {
        Value::Object(m) => Ok(m),
        _ => unreachable!(),
    }
}

/// Reads a flat JSON object; nested objects are rejected.
pub fn read_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => {
            if let Some((k, _)) = m.iter().find(|(_, v)| v.is_object()) {
                return Err(CliError::Config(format!("key {k:?} is nested; use dotted keys")));
            }
            Ok(m)
        }
        Ok(_) => Err(CliError::Config("config file must hold a JSON object".into())),
        Err(e) => Err(CliError::Config(format!("invalid JSON in {}: {e}", path.display()))),
    }
}

/// Parses `KEY=VALUE`; the value is JSON when it parses as JSON, else a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Layers preset defaults, file values and overrides into a checked config.
pub fn resolve(file: Option<Map<String, Value>>, overrides: Map<String, Value>) -> Result<Resolved, CliError> {
    let file = file.unwrap_or_default();
    let preset = overrides
        .get("preset")
        .or_else(|| file.get("preset"))
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| CliError::Config("preset must be a string".into())))
        .transpose()?
        .unwrap_or_else(|| "desk".to_string());
    let mut map = preset_defaults(&preset)?;
    for (source, layer) in [("config file", file), ("override", overrides)] {
        for (k, v) in layer {
            if !map.contains_key(&k) {
                return Err(CliError::Config(format!("unknown key {k:?} in {source}")));
            }
            map.insert(k, v);
        }
    }
    let config: RunConfig = serde_json::from_value(Value::Object(map.clone()))
        .map_err(|e| CliError::Config(format!("invalid value: {e}")))?;
    let canonical = serde_json::to_vec(&map).expect("maps serialise");
    let hash = hex::encode(Sha256::digest(&canonical));
    Ok(Resolved { config, map, hash })
}

pub struct Resolved {
    pub config: RunConfig,
    pub map: Map<String, Value>,
    pub hash: String,
}

impl Resolved {
    /// Writes `config.json` and `config.sha256` into `dir`.
    pub fn write_beside(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(&self.map).expect("maps serialise");
        text.push('\n');
        std::fs::write(dir.join("config.json"), text)?;
        std::fs::write(dir.join("config.sha256"), format!("{}\n", self.hash))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn presets_cover_every_field() {
        for p in PRESETS {
            let r = resolve(None, obj(json!({"preset": p}))).unwrap();
            assert_eq!(r.config.preset, p);
        }
        assert!(resolve(None, obj(json!({"preset": "huge"}))).is_err());
    }

    #[test]
    fn overrides_beat_file_values() {
        let file = obj(json!({"train.steps": 10, "task": "bucket-sort"}));
        let r = resolve(Some(file), obj(json!({"train.steps": 20}))).unwrap();
        assert_eq!(r.config.train_steps, 20);
        assert_eq!(r.config.task, "bucket-sort");
        assert_eq!(r.map["train.steps"], json!(20));
    }

    #[test]
    fn file_preset_selects_defaults() {
        let r = resolve(Some(obj(json!({"preset": "full"}))), Map::new()).unwrap();
        assert_eq!((r.config.model_hidden, r.config.eval_max_len, r.config.train_seeds), (256, 500, 10));
        let d = resolve(None, Map::new()).unwrap();
        assert_eq!((d.config.model_hidden, d.config.eval_max_len, d.config.train_seeds), (64, 200, 3));
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        assert!(resolve(Some(obj(json!({"train.stepz": 1}))), Map::new()).is_err());
        assert!(resolve(None, obj(json!({"train.steps": "many"}))).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = resolve(None, Map::new()).unwrap();
        let b = resolve(None, Map::new()).unwrap();
        let c = resolve(None, obj(json!({"train.seed": 1}))).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn assignments_parse_json_or_strings() {
        assert_eq!(parse_assignment("train.steps=5").unwrap(), ("train.steps".into(), json!(5)));
        assert_eq!(parse_assignment("task=parity").unwrap(), ("task".into(), json!("parity")));
        assert_eq!(parse_assignment("bench.lengths=[1,2]").unwrap().1, json!([1, 2]));
        assert!(parse_assignment("novalue").is_err());
    }
}
