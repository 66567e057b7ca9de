//! Merges a flat TOML config file into the argument list. Keys name long
//! flags (`grid_points` or `grid-points`); flags already on the command line
//! take precedence.

use std::path::Path;

use crate::UsageError;

/// Value of `--config` if present, without a full parse.
pub fn find_config(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn has_flag(args: &[String], flag: &str) -> bool {
    args.iter()
        .any(|a| a == flag || a.strip_prefix(flag).is_some_and(|rest| rest.starts_with('=')))
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, UsageError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(UsageError(format!(
            "config field '{key}' must be a scalar or an array of scalars"
        ))),
    }
}

/// Appends `--key value` for every config entry not already given as a flag.
pub fn merge(args: &[String], path: &Path) -> Result<Vec<String>, UsageError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| UsageError(format!("malformed config {}: {e}", path.display())))?;
    let mut out = args.to_vec();
    for (key, value) in &table {
        if key == "config" {
            return Err(UsageError("config field 'config' cannot nest another config".into()));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(args, &flag) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(|v| scalar(key, v)).collect::<Result<_, _>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar(key, other)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "steps = 5\nlr = 0.25\nsnapshot_steps = [1, 2]\nplot = true\n").unwrap();
        let a = args(&["biaspot", "train", "--steps", "9"]);
        let merged = merge(&a, &path).unwrap();
        assert!(merged.windows(2).any(|w| w[0] == "--lr" && w[1] == "0.25"));
        assert!(merged.windows(2).any(|w| w[0] == "--snapshot-steps" && w[1] == "1,2"));
        assert!(merged.contains(&"--plot".to_string()));
        assert_eq!(merged.iter().filter(|x| *x == "--steps").count(), 1);
    }

    #[test]
    fn nested_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[section]\nx = 1\n").unwrap();
        let err = merge(&args(&["biaspot"]), &path).unwrap_err();
        assert!(err.0.contains("section"));
    }

    #[test]
    fn finds_config_flag() {
        assert_eq!(find_config(&args(&["b", "--config", "x.toml"])), Some("x.toml".into()));
        assert_eq!(find_config(&args(&["b", "--config=y.toml"])), Some("y.toml".into()));
        assert_eq!(find_config(&args(&["b"])), None);
    }
}
