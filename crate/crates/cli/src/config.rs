use std::fs;
use std::path::Path;

use serde_json::Value;
use smt_core::training::RunConfig;

use crate::CliError;

/// Reads the JSON config (defaults when absent) and applies `key=value`
/// overrides. Keys are dotted paths into the config; every segment must
/// already exist. Values parse as JSON, falling back to a plain string.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::user(format!("cannot read {}: {e}", p.display())))?;
            let cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::user(format!("invalid config {}: {e}", p.display())))?;
            serde_json::to_value(cfg).expect("config serializes")
        }
        None => serde_json::to_value(RunConfig::default()).expect("config serializes"),
    };
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::user(format!("invalid configuration after overrides: {e}")))?;
    cfg.validate().map_err(CliError::Core)?;
    Ok(cfg)
}

pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::user(format!("override '{spec}' is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::user(format!("override key '{key}': '{}' is not a section", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::user(format!("unknown configuration key '{key}'")))?;
        if i + 1 == parts.len() {
            *slot = parsed;
            return Ok(());
        }
        node = slot;
    }
    Err(CliError::user(format!("empty override key in '{spec}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = resolve(None, &["train.epochs=3".into(), "selection.fraction=0.25".into()]).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.selection.fraction, 0.25);
        assert!(resolve(None, &["train.epoch=3".into()]).is_err());
        assert!(resolve(None, &["train.epochs.x=3".into()]).is_err());
        assert!(resolve(None, &["train.epochs".into()]).is_err());
        assert!(resolve(None, &["train.epochs=abc".into()]).is_err());
    }

    #[test]
    fn null_options_and_strings() {
        let cfg = resolve(None, &["selection.m=16".into(), "data.train=some/dir".into(), "selection.order=raster".into()]).unwrap();
        assert_eq!(cfg.selection.m, Some(16));
        assert_eq!(cfg.data.train.as_deref(), Some(Path::new("some/dir")));
    }
}
