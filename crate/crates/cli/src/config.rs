use std::path::{Path, PathBuf};

use playrecon::pipeline::PipelineConfig;
use serde::Deserialize;
use toml::Value;

use crate::CliError;

/// Merges `over` into `base`: tables merge key by key, anything else is
/// replaced.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Relative paths inside a config file are taken relative to that file.
fn resolve_paths(value: &mut Value, dir: &Path) {
    if let Some(Value::String(model)) = value.get_mut("classifier").and_then(|c| c.get_mut("model")) {
        let p = PathBuf::from(&*model);
        if p.is_relative() {
            *model = dir.join(p).to_string_lossy().into_owned();
        }
    }
}

/// Layers the files in order over the defaults; later files win. Unknown
/// keys anywhere are an error.
pub fn load_layered(files: &[PathBuf]) -> Result<PipelineConfig, CliError> {
    let mut merged = Value::Table(Default::default());
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        let mut v: Value = toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
        resolve_paths(&mut v, f.parent().unwrap_or(Path::new(".")));
        merge(&mut merged, v);
    }
    let cfg = PipelineConfig::deserialize(merged).map_err(|e| CliError::Input(format!("configuration: {e}")))?;
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}
