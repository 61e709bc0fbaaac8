//! Plain key-value run configuration files (TOML) and resolved snapshots.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses a config file. Unknown keys, wrong types and malformed syntax are
/// reported as [`Error::Config`] naming the offending key.
pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))
}

/// Reads and parses a config file.
pub fn load_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Reads a config file when given, otherwise starts from defaults.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config types serialise to TOML")
}

/// Path of the resolved-config snapshot for an output file:
/// `<dir>/<file name>.resolved.toml`.
pub fn snapshot_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "run".into());
    name.push(".resolved.toml");
    output.with_file_name(name)
}

/// Writes the fully resolved config next to `output` and returns its path.
pub fn write_snapshot<T: Serialize>(value: &T, output: &Path) -> Result<PathBuf> {
    let path = snapshot_path(output);
    std::fs::write(&path, to_toml(value)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::AdaptConfig;
    use crate::data::ShiftSpec;
    use crate::vendor::VendorConfig;

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config::<ShiftSpec>("dimz = 3\n", Path::new("spec.toml")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("dimz"), "{err}");
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg: AdaptConfig = parse_config("epochs = 3\n", Path::new("a.toml")).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, AdaptConfig::default().batch_size);
    }

    #[test]
    fn snapshots_round_trip_exactly() {
        let spec = ShiftSpec {
            mean_scale: 0.1 + 0.2,
            ..ShiftSpec::default()
        };
        let back: ShiftSpec = parse_config(&to_toml(&spec), Path::new("s")).unwrap();
        assert_eq!(back, spec);
        let v = VendorConfig {
            k: Some(7),
            learning_rate: 1.0 / 3.0,
            ..VendorConfig::default()
        };
        let back: VendorConfig = parse_config(&to_toml(&v), Path::new("v")).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn snapshot_sits_next_to_output() {
        assert_eq!(snapshot_path(Path::new("out/model.inhm")), Path::new("out/model.inhm.resolved.toml"));
    }
}
