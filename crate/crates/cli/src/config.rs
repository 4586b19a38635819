//! Run configuration: a JSON file plus `--section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use triplet_tagger::{ModelSpec, TagScheme, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "TRIPLET_TAGGER_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines catalog, or a `.conll` file of tagged titles.
    pub catalog: PathBuf,
    /// Catalog whose descriptions are joined by id onto a `.conll` input.
    #[serde(default)]
    pub descriptions: Option<PathBuf>,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default = "default_entity_types")]
    pub entity_types: Vec<String>,
}

fn default_holdout() -> f64 {
    0.3
}

fn default_entity_types() -> Vec<String> {
    TagScheme::default().entity_types().to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn scheme(&self) -> Result<TagScheme, CliError> {
        TagScheme::new(self.data.entity_types.clone()).map_err(|e| CliError::Usage(format!("config: {e}")))
    }
}

/// Splits `--a.b.c=value` into its key path and value. Values that parse as
/// JSON are used as such; anything else is taken as a string.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, Value), CliError> {
    let body = arg.strip_prefix("--").ok_or_else(|| {
        CliError::Usage(format!(
            "unexpected argument {arg:?}; overrides look like --train.lr=0.001"
        ))
    })?;
    let (key, raw) = body
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {arg:?} needs a value: --key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("malformed override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut node = root;
    for (i, key) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override {}: {key:?} is not inside an object", path.join("."))))?;
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        node = obj
            .entry(key.clone())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Reads and validates a run config. Relative paths are taken relative to
/// the config file. The seed comes from `seed_flag`, else the file or an
/// override, else [`SEED_ENV`], else 0.
pub fn load_run_config(path: &Path, overrides: &[String], seed_flag: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Usage(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    }
    for o in overrides {
        let (keys, v) = parse_override(o)?;
        set_path(&mut value, &keys, v)?;
    }
    let has_seed = value.get("train").and_then(|t| t.get("seed")).is_some();
    let mut config: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if let Some(s) = seed_flag {
        config.train.seed = s;
    } else if !has_seed {
        config.train.seed = env_seed()?.unwrap_or(0);
    }
    config
        .train
        .validate()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if !(config.data.holdout > 0.0 && config.data.holdout < 1.0) {
        return Err(CliError::Usage(format!(
            "config: data.holdout must lie in (0, 1), got {}",
            config.data.holdout
        )));
    }
    config.scheme()?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(base, &mut config.data.catalog);
    if let Some(d) = config.data.descriptions.as_mut() {
        resolve(base, d);
    }
    if let Some(w) = config.train.warm_start.as_mut() {
        resolve(base, w);
    }
    resolve(base, &mut config.output_dir);
    Ok(config)
}

pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn overrides_apply_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            r#"{"data": {"catalog": "c.jsonl"}, "output_dir": "out", "train": {"seed": 4}}"#,
        );
        let c = load_run_config(&p, &["--train.lr=0.01".into(), "--train.mode=baseline".into()], None).unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.mode, triplet_tagger::Mode::Baseline);
        assert_eq!(c.train.seed, 4);
        assert_eq!(c.data.catalog, dir.path().join("c.jsonl"));
        assert_eq!(load_run_config(&p, &[], Some(9)).unwrap().train.seed, 9);
    }

    #[test]
    fn typos_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"data": {"catalog": "c"}, "output_dir": "o"}"#);
        let err = load_run_config(&p, &["--train.learning_rate=0.1".into()], None).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(load_run_config(&p, &["--train.lr".into()], None).is_err());
        assert!(load_run_config(&p, &["train.lr=1".into()], None).is_err());
        assert!(load_run_config(&dir.path().join("missing.json"), &[], None).is_err());
    }
}
