//! Named configurations compiled into the binary.

use std::path::Path;

use crate::error::{CliError, Result};

macro_rules! preset {
    ($name:literal) => {
        ($name, include_str!(concat!("../../../presets/", $name, ".cfg")))
    };
}

pub const PRESETS: &[(&str, &str)] = &[
    preset!("hrm_toy"),
    preset!("equalparam_nt4"),
    preset!("equalparam_nt8"),
    preset!("equalparam_nt12"),
    preset!("unitf_flat"),
    preset!("tl4"),
    preset!("ablation_K1"),
    preset!("ablation_K2"),
    preset!("ablation_K4"),
    preset!("ablation_K8"),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Config text for `arg`: a file path, the same path with `.cfg` appended,
/// or a preset name (optionally written as `presets/<name>`).
pub fn load_config_text(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    for candidate in [path.to_path_buf(), path.with_extension("cfg")] {
        if candidate.is_file() {
            return std::fs::read_to_string(&candidate).map_err(|source| CliError::ConfigFile {
                path: candidate,
                source,
            });
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
    preset(stem).map(str::to_string).ok_or_else(|| CliError::ConfigFile {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or preset"),
    })
}
