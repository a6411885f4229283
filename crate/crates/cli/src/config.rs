use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Overlay the flags given on the command line onto the values of a JSON
/// configuration file. Unknown keys in the file are rejected.
pub fn merge<T: Serialize + DeserializeOwned + Default>(flags: &T, file: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = file else {
        return Ok(flags_only(flags));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config `{}`: {e}", path.display())))?;
    let loaded: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("config `{}` is not valid JSON: {e}", path.display())))?;
    let Value::Object(mut base) = loaded else {
        return Err(CliError::usage(format!("config `{}` must be a JSON object", path.display())));
    };
    let known = object(serde_json::to_value(T::default()).expect("serializable"));
    if let Some(bad) = base.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::usage(format!("unknown key `{bad}` in config `{}`", path.display())));
    }
    for (k, v) in object(serde_json::to_value(flags).expect("serializable")) {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(base))
        .map_err(|e| CliError::usage(format!("config `{}`: {e}", path.display())))
}

fn flags_only<T: Serialize + DeserializeOwned>(flags: &T) -> T {
    serde_json::from_value(serde_json::to_value(flags).expect("serializable")).expect("round trip")
}
