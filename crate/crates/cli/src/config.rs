//! Run configuration assembly: file, then environment, then `--set` flags.
//!
//! Every layer edits one TOML tree that is deserialised once at the end, so
//! an unknown key in any layer is rejected the same way.

use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};
use usts::{Error, Result, RunConfig};

/// Prefix of environment overrides, e.g. `USTS_TRAIN_LR=1e-3`.
pub const ENV_PREFIX: &str = "USTS_";

const SECTIONS: [&str; 3] = ["data", "model", "train"];

/// Reads `path` (if any), applies overrides and validates the result.
pub fn load(
    path: Option<&Path>,
    sets: &[String],
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<RunConfig> {
    let mut tree = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => Table::new(),
    };
    let mut env: Vec<_> = env
        .into_iter()
        .filter_map(|(k, v)| env_key(&k).map(|k| (k, v)))
        .collect();
    env.sort();
    for (key, value) in env {
        assign(&mut tree, &key, &value)?;
    }
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{set}` is not of the form section.key=value")))?;
        assign(&mut tree, key.trim(), value.trim())?;
    }
    let cfg: RunConfig = Value::Table(tree)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Maps `USTS_TRAIN_TOTAL_STEPS` to `train.total_steps`. Variables outside
/// the three config sections are not ours and are ignored.
fn env_key(name: &str) -> Option<String> {
    let rest = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    let (section, key) = rest.split_once('_')?;
    SECTIONS.contains(&section).then(|| format!("{section}.{key}"))
}

/// Sets `section.key` to `raw`, read as a TOML literal or else a bare string.
pub fn assign(tree: &mut Table, key: &str, raw: &str) -> Result<()> {
    let (section, field) = key
        .split_once('.')
        .filter(|(s, f)| !f.is_empty() && !f.contains('.') && SECTIONS.contains(s))
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown config key `{key}` (expected data.*, model.* or train.*)"
            ))
        })?;
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let entry = tree
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(t) = entry else {
        return Err(Error::Config(format!("`{section}` must be a table")));
    };
    t.insert(field.to_string(), value);
    Ok(())
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config always serialises")
}

/// Hex SHA-256 of the canonical serialisation.
pub fn hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(to_toml(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the effective config, headed by its hash as a comment so the
/// file still loads as a config.
pub fn save(path: &Path, cfg: &RunConfig) -> Result<()> {
    let text = format!("# config_hash = {}\n{}", hash(cfg), to_toml(cfg));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
