//! Merging flags over a JSON config file over built-in defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sfa_core::{Result, SfaError};

/// Reads `path` as a JSON object. A key named `section` selects a nested
/// object; otherwise the whole file applies.
pub fn load_section(path: &Path, section: &str) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| SfaError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| SfaError::Parse {
        path: path.to_path_buf(),
        offset: offset_of(&text, e.line(), e.column()),
        line: Some(e.line()),
        msg: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(SfaError::Config(format!("{} must hold a JSON object", path.display())));
    };
    match obj.remove(section) {
        Some(Value::Object(inner)) => Ok(inner),
        Some(_) => Err(SfaError::Config(format!("section {section:?} in {} must be an object", path.display()))),
        None => Ok(obj),
    }
}

fn offset_of(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)) as u64
}

/// Flag values win; file values fill whatever the flags left unset.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<Map<String, Value>>) -> Result<T> {
    let Some(mut merged) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags).expect("flags serialize")).expect("flags round-trip"));
    };
    let Value::Object(set) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in set {
        if !v.is_null() && v != Value::Bool(false) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| SfaError::Config(format!("config file: {e}")))
}
