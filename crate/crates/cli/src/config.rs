//! Resolution of flags over a JSON config file over defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// The non-null fields of a flag struct as a JSON object.
pub fn flags_object<T: Serialize>(flags: &T) -> Map<String, Value> {
    match serde_json::to_value(flags).expect("flags serialize") {
        Value::Object(map) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Parses a `--sigma` flag value into the JSON object it stands for.
pub fn sigma_flag(raw: &str) -> Result<Value, CliError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("--sigma is not valid JSON: {e}")))?;
    coagfrag_core::SigmaSpec::from_json(raw).map_err(|e| CliError::Usage(format!("invalid sigma: {e}")))?;
    Ok(value)
}

/// `flags` over the object in `config` over the serde defaults of `T`.
pub fn resolve<T: DeserializeOwned>(config: Option<&Path>, flags: Map<String, Value>) -> Result<T, CliError> {
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Usage("config file must hold a JSON object".into())),
                Err(e) => return Err(CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    merged.extend(flags);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Demo {
        #[serde(default = "three")]
        a: u32,
        b: u32,
    }

    fn three() -> u32 {
        3
    }

    #[derive(Serialize)]
    struct Flags {
        a: Option<u32>,
        b: Option<u32>,
    }

    #[test]
    fn flags_win_over_config_over_defaults() {
        let dir = std::env::temp_dir().join(format!("coagfrag-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"a": 5, "b": 6}"#).unwrap();
        let d: Demo = resolve(Some(&path), flags_object(&Flags { a: None, b: Some(9) })).unwrap();
        assert_eq!(d, Demo { a: 5, b: 9 });
        let d: Demo = resolve(None, flags_object(&Flags { a: None, b: Some(1) })).unwrap();
        assert_eq!(d, Demo { a: 3, b: 1 });
        std::fs::write(&path, r#"{"c": 1, "b": 6}"#).unwrap();
        assert!(resolve::<Demo>(Some(&path), Map::new()).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_required_field_is_usage_error() {
        let err = resolve::<Demo>(None, Map::new()).unwrap_err();
        assert!(err.to_string().contains("missing field `b`"));
    }
}
