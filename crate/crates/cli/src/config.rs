//! Config loading: TOML file, `--override key=value` patches, `--seed`.

use std::path::Path;

use relite_core::pipeline::PipelineConfig;

use crate::CliError;

fn parse_scalar(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {path}: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn json_has_path(v: &serde_json::Value, path: &str) -> bool {
    path.split('.').try_fold(v, |cur, key| cur.get(key)).is_some()
}

/// Builds the effective config. Unknown override keys are rejected.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<PipelineConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut keys = Vec::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Config(format!("override `{o}` has an empty key")));
        }
        set_path(&mut table, k, parse_scalar(v.trim()))?;
        keys.push(k.to_string());
    }
    let mut cfg: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let json = serde_json::to_value(&cfg).expect("config serializes");
    if let Some(k) = keys.iter().find(|k| !json_has_path(&json, k)) {
        return Err(CliError::Config(format!("unknown config key `{k}`")));
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.dataset.intrinsics.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_typos_fail() {
        let c = load(None, &["train.steps=7".into(), "train.ablation=no_disparity".into()], Some(4)).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.ablation, relite_core::training::Ablation::NoDisparity);
        assert_eq!(c.seed, 4);
        assert!(matches!(load(None, &["train.stepz=7".into()], None), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["train.steps=0".into()], None), Err(CliError::Config(_))));
        assert!(matches!(load(None, &["nonsense".into()], None), Err(CliError::Config(_))));
    }

    #[test]
    fn file_sections_merge_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n[objects]\ncount = 2\nshapes = [\"sphere\"]\n").unwrap();
        let c = load(Some(&p), &[], None).unwrap();
        assert_eq!((c.seed, c.objects.count), (3, 2));
        assert_eq!(c.objects.n_points, PipelineConfig::default().objects.n_points);
    }
}
