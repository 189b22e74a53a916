//! Layered configuration: built-in defaults, then a JSON or TOML file, then
//! command-line flags. The merged object is what a run actually used and is
//! written next to its outputs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage("config", format!("cannot read {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let value: Value = if is_toml {
        let t: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| CliError::usage("config", e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::usage("config", "config file must hold a table of keys".into()));
    }
    Ok(value)
}

/// Rejects keys the defaults do not know, recursing into nested tables.
fn check_keys(base: &Value, over: &Value, path: &str) -> Result<(), CliError> {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        for (k, v) in o {
            let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match b.get(k) {
                None => return Err(CliError::usage("config", format!("unknown config key {here:?}"))),
                Some(bv) => check_keys(bv, v, &here)?,
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k.as_str()) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Flag overrides collected as a JSON object.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let mut target = &mut self.0;
            let parts: Vec<&str> = key.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                target = target
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("nested flag table");
            }
            target.insert(parts[parts.len() - 1].to_string(), serde_json::to_value(v).expect("flag value"));
        }
        self
    }
}

/// Defaults ⊕ file ⊕ flags, deserialized into `T`. Returns the merged
/// object too, for the snapshot.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Value>,
    flags: Flags,
) -> Result<(T, Value), CliError> {
    let mut merged = serde_json::to_value(defaults).map_err(|e| CliError::usage("config", e.to_string()))?;
    let base = merged.clone();
    if let Some(v) = file {
        check_keys(&base, &v, "")?;
        merge(&mut merged, v);
    }
    let flags = Value::Object(flags.0);
    check_keys(&base, &flags, "")?;
    merge(&mut merged, flags);
    let resolved: T =
        serde_json::from_value(merged.clone()).map_err(|e| CliError::usage("config", e.to_string()))?;
    let canonical = serde_json::to_value(&resolved).map_err(|e| CliError::usage("config", e.to_string()))?;
    Ok((resolved, canonical))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Demo {
        a: u32,
        inner: Inner,
        opt: Option<String>,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Inner {
        x: f64,
        y: f64,
    }

    fn demo() -> Demo {
        Demo {
            a: 1,
            inner: Inner { x: 1.0, y: 2.0 },
            opt: None,
        }
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "a = 5\n[inner]\ny = 7.0\n").unwrap();
        let mut flags = Flags::default();
        flags.set("inner.x", Some(3.0)).set("opt", Some("z"));
        let (d, _) = resolve(&demo(), Some(read_file(&path).unwrap()), flags).unwrap();
        assert_eq!(
            d,
            Demo {
                a: 5,
                inner: Inner { x: 3.0, y: 7.0 },
                opt: Some("z".into())
            }
        );
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"inner": {"w": 1}}"#).unwrap();
        let err = resolve(&demo(), Some(read_file(&path).unwrap()), Flags::default()).unwrap_err();
        assert_eq!(err.code, 2);
    }
}
