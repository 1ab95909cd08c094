use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the JSON file at `path` onto `base`. Objects merge key by key;
/// any other value in the file replaces the base value. Unknown keys are
/// rejected by the target type.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let file: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let mut merged = serde_json::to_value(base)?;
    merge(&mut merged, file);
    serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if v.is_object() && !is_tagged(&v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Tagged objects (such as the loss selector) replace rather than merge, so
/// switching `kind` never leaves fields of the previous variant behind.
fn is_tagged(v: &Value) -> bool {
    v.get("kind").is_some()
}
