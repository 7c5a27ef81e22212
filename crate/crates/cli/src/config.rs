//! Run configuration files (TOML or JSON) with key-path error reporting.

use std::path::Path;

use depthgaze::train::TrainConfig;
use depthgaze::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Every problem found in a configuration file, one key path per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn check_section<D: Default + Serialize + DeserializeOwned>(
    section: &str,
    user: Option<&Value>,
    errors: &mut Vec<String>,
) -> Option<D> {
    let Some(user) = user else {
        return Some(D::default());
    };
    let Value::Object(user) = user else {
        errors.push(format!("{section}: expected a table"));
        return None;
    };
    let Value::Object(defaults) = serde_json::to_value(D::default()).expect("defaults serialize")
    else {
        unreachable!("config sections are structs")
    };
    let before = errors.len();
    for (key, v) in user {
        if !defaults.contains_key(key) {
            errors.push(format!("{section}.{key}: unknown key"));
            continue;
        }
        let mut probe = defaults.clone();
        probe.insert(key.clone(), v.clone());
        if let Err(e) = serde_json::from_value::<D>(Value::Object(probe)) {
            errors.push(format!("{section}.{key}: {e}"));
        }
    }
    if errors.len() > before {
        return None;
    }
    match serde_json::from_value(Value::Object(user.clone())) {
        Ok(d) => Some(d),
        Err(e) => {
            errors.push(format!("{section}: {e}"));
            None
        }
    }
}

/// Validates a parsed document against the schema and the value constraints.
pub fn config_from_value(doc: &Value) -> Result<RunConfig, ConfigErrors> {
    let empty = Map::new();
    let Some(top) = doc.as_object().or(doc.is_null().then_some(&empty)) else {
        return Err(ConfigErrors(vec!["<root>: expected a table".into()]));
    };
    let mut errors = Vec::new();
    for key in top.keys().filter(|k| *k != "model" && *k != "train") {
        errors.push(format!("{key}: unknown key"));
    }
    let model: Option<ModelConfig> = check_section("model", top.get("model"), &mut errors);
    let train: Option<TrainConfig> = check_section("train", top.get("train"), &mut errors);
    if let Some(m) = &model {
        errors.extend(m.violations().into_iter().map(|v| format!("model.{v}")));
    }
    if let Some(t) = &train {
        errors.extend(t.violations().into_iter().map(|v| format!("train.{v}")));
    }
    match (model, train) {
        (Some(model), Some(train)) if errors.is_empty() => Ok(RunConfig { model, train }),
        _ => Err(ConfigErrors(errors)),
    }
}

/// Reads `.toml` or `.json` (by extension; anything else is tried as TOML).
pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let doc: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
    } else {
        let t: toml::Value =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::to_value(t)?
    };
    Ok(config_from_value(&doc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(config_from_value(&json!({})).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_bad_key_is_reported() {
        let doc = json!({
            "model": {"input_size": "big", "colour": 1, "grl_lambda": -1.0},
            "train": {"epochs": 0, "batch_size": -4},
            "extra": true
        });
        let err = config_from_value(&doc).unwrap_err().0;
        let joined = err.join("\n");
        for path in [
            "extra:",
            "model.input_size:",
            "model.colour: unknown key",
            "train.batch_size:",
        ] {
            assert!(joined.contains(path), "missing {path} in\n{joined}");
        }
    }

    #[test]
    fn shipped_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.model.backbone_channels, 48);
        assert_eq!(cfg.train.epochs, 15);
    }

    #[test]
    fn value_constraints_are_reported_with_section() {
        let doc = json!({"model": {"grl_lambda": -1.0}, "train": {"epochs": 0}});
        let err = config_from_value(&doc).unwrap_err().0;
        assert!(
            err.iter().any(|e| e.starts_with("model.grl_lambda")),
            "{err:?}"
        );
        assert!(err.iter().any(|e| e.starts_with("train.epochs")), "{err:?}");
    }
}
