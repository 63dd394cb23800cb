//! Experiment configuration: a TOML file, `CHAOS_*` environment overrides,
//! and command-line overrides, resolved in that order of increasing
//! precedence (flags win over env, env wins over the file, the file wins
//! over defaults).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::SpecPreset;
use crate::telemetry::{ComparatorId, DEFAULT_METRICS_THRESHOLD};

pub const DEFAULT_WINDOW_SECONDS: u64 = 60;
pub const DEFAULT_STALL_TIMEOUT_SECONDS: u64 = 300;
pub const DEFAULT_MAX_CONCURRENT_ACTIVE: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How the workload harness drives the target during a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Workload {
    /// Bounded task: the target runs to completion and leaves an artifact.
    Task { artifact: PathBuf },
    /// Request/response service: replay a recorded trace against the target.
    Replay { trace: PathBuf, addr: String },
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_dir: PathBuf,
    /// Command line used to launch the target; first element is the program.
    pub target_command: Vec<String>,
    /// Address the target's agent listens on.
    pub agent_addr: String,
    pub workload: Workload,
    pub window_seconds: u64,
    pub stall_timeout_seconds: u64,
    pub max_concurrent_active: u32,
    pub spec_preset: SpecPreset,
    pub comparator: ComparatorId,
    pub metrics_threshold: f64,
    pub cooldown_seconds: f64,
    pub app_version: String,
}

impl ExperimentConfig {
    pub fn window(&self) -> Duration {
        Duration::from_secs(self.window_seconds)
    }

    pub fn stall_timeout(&self) -> Duration {
        Duration::from_secs(self.stall_timeout_seconds)
    }
}

/// The on-disk shape: everything optional, defaults applied at resolution.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment_dir: Option<PathBuf>,
    target_command: Option<Vec<String>>,
    agent_addr: Option<String>,
    workload: Option<Workload>,
    window_seconds: Option<u64>,
    stall_timeout_seconds: Option<u64>,
    max_concurrent_active: Option<u32>,
    spec_preset: Option<String>,
    comparator: Option<String>,
    metrics_threshold: Option<f64>,
    cooldown_seconds: Option<f64>,
    app_version: Option<String>,
}

/// Command-line overrides; `None` means "not given on the command line".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub window_seconds: Option<u64>,
    pub stall_timeout_seconds: Option<u64>,
    pub max_concurrent_active: Option<u32>,
    pub spec_preset: Option<String>,
    pub experiment_dir: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<SpecPreset, ConfigError> {
    match s {
        "cli-task" => Ok(SpecPreset::CliTask),
        "http" => Ok(SpecPreset::Http),
        other => Err(ConfigError::Invalid(format!(
            "unknown spec preset {other:?}; expected \"cli-task\" or \"http\""
        ))),
    }
}

/// Resolve a configuration from the file at `path` (if any), the given
/// environment map, and command-line overrides.
pub fn resolve(
    path: Option<&Path>,
    env: &HashMap<String, String>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let file: ConfigFile = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?
        }
        None => ConfigFile::default(),
    };

    let env_u64 = |key: &str| -> Result<Option<u64>, ConfigError> {
        env.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| ConfigError::Invalid(format!("{key} is not an integer: {v:?}")))
            })
            .transpose()
    };
    let env_f64 = |key: &str| -> Result<Option<f64>, ConfigError> {
        env.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| ConfigError::Invalid(format!("{key} is not a number: {v:?}")))
            })
            .transpose()
    };

    let window_seconds = overrides
        .window_seconds
        .or(env_u64("CHAOS_WINDOW_SECONDS")?)
        .or(file.window_seconds)
        .unwrap_or(DEFAULT_WINDOW_SECONDS);
    let stall_timeout_seconds = overrides
        .stall_timeout_seconds
        .or(env_u64("CHAOS_STALL_TIMEOUT_SECONDS")?)
        .or(file.stall_timeout_seconds)
        .unwrap_or(DEFAULT_STALL_TIMEOUT_SECONDS);
    let max_concurrent_active = overrides
        .max_concurrent_active
        .or(env_u64("CHAOS_MAX_ACTIVE")?.map(|v| v as u32))
        .or(file.max_concurrent_active)
        .unwrap_or(DEFAULT_MAX_CONCURRENT_ACTIVE);
    let spec_preset = match overrides
        .spec_preset
        .clone()
        .or_else(|| env.get("CHAOS_SPEC").cloned())
        .or(file.spec_preset)
    {
        Some(s) => parse_preset(&s)?,
        None => SpecPreset::CliTask,
    };
    let comparator = match env
        .get("CHAOS_COMPARATOR")
        .cloned()
        .or(file.comparator)
        .as_deref()
    {
        Some(s) => s
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("{e}")))?,
        None => ComparatorId::Verbatim,
    };
    let metrics_threshold = env_f64("CHAOS_METRICS_THRESHOLD")?
        .or(file.metrics_threshold)
        .unwrap_or(DEFAULT_METRICS_THRESHOLD);
    let cooldown_seconds = env_f64("CHAOS_COOLDOWN_SECONDS")?
        .or(file.cooldown_seconds)
        .unwrap_or(1.0);
    let experiment_dir = overrides
        .experiment_dir
        .clone()
        .or_else(|| env.get("CHAOS_EXPERIMENT_DIR").map(PathBuf::from))
        .or(file.experiment_dir)
        .ok_or_else(|| ConfigError::Invalid("experiment_dir is required".into()))?;
    let target_command = file
        .target_command
        .ok_or_else(|| ConfigError::Invalid("target_command is required".into()))?;
    let agent_addr = env
        .get("CHAOS_AGENT_ADDR")
        .cloned()
        .or(file.agent_addr)
        .ok_or_else(|| ConfigError::Invalid("agent_addr is required".into()))?;
    let workload = file
        .workload
        .ok_or_else(|| ConfigError::Invalid("workload is required".into()))?;
    let app_version = file.app_version.unwrap_or_else(|| "unversioned".into());

    if target_command.is_empty() {
        return Err(ConfigError::Invalid("target_command must not be empty".into()));
    }
    if window_seconds == 0 {
        return Err(ConfigError::Invalid("window_seconds must be positive".into()));
    }
    if stall_timeout_seconds == 0 {
        return Err(ConfigError::Invalid(
            "stall_timeout_seconds must be positive".into(),
        ));
    }
    if max_concurrent_active == 0 {
        return Err(ConfigError::Invalid(
            "max_concurrent_active must be at least 1".into(),
        ));
    }
    if !(metrics_threshold >= 0.0) {
        return Err(ConfigError::Invalid(
            "metrics_threshold must be non-negative".into(),
        ));
    }
    if !(cooldown_seconds >= 0.0) {
        return Err(ConfigError::Invalid(
            "cooldown_seconds must be non-negative".into(),
        ));
    }

    Ok(ExperimentConfig {
        experiment_dir,
        target_command,
        agent_addr,
        workload,
        window_seconds,
        stall_timeout_seconds,
        max_concurrent_active,
        spec_preset,
        comparator,
        metrics_threshold,
        cooldown_seconds,
        app_version,
    })
}

/// Resolve against the real process environment.
pub fn resolve_from_process_env(
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let env: HashMap<String, String> = std::env::vars()
        .filter(|(k, _)| k.starts_with("CHAOS_"))
        .collect();
    resolve(path, &env, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
experiment_dir = "/tmp/exp"
target_command = ["demo-task", "--chunks", "8"]
agent_addr = "127.0.0.1:4999"

[workload]
kind = "task"
artifact = "/tmp/exp/out.bin"
"#
        .to_string()
    }

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experiment.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let (_d, path) = write_config(&minimal_toml());
        let cfg = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap();
        assert_eq!(cfg.window_seconds, 60);
        assert_eq!(cfg.stall_timeout_seconds, 300);
        assert_eq!(cfg.max_concurrent_active, 1);
        assert_eq!(cfg.spec_preset, SpecPreset::CliTask);
        assert_eq!(cfg.comparator, ComparatorId::Verbatim);
        assert_eq!(cfg.metrics_threshold, DEFAULT_METRICS_THRESHOLD);
    }

    #[test]
    fn env_overrides_file_and_flags_override_env() {
        let (_d, path) = write_config(&format!("window_seconds = 10\n{}", minimal_toml()));
        let mut env = HashMap::new();
        env.insert("CHAOS_WINDOW_SECONDS".to_string(), "20".to_string());
        let cfg = resolve(Some(&path), &env, &Overrides::default()).unwrap();
        assert_eq!(cfg.window_seconds, 20);
        let cfg = resolve(
            Some(&path),
            &env,
            &Overrides {
                window_seconds: Some(30),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.window_seconds, 30);
    }

    #[test]
    fn replay_workload_parses() {
        let toml = r#"
experiment_dir = "/tmp/exp"
target_command = ["demo-service"]
agent_addr = "127.0.0.1:4999"
spec_preset = "http"
comparator = "structured"

[workload]
kind = "replay"
trace = "/tmp/exp/trace.jsonl"
addr = "127.0.0.1:7070"
"#;
        let (_d, path) = write_config(toml);
        let cfg = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap();
        assert_eq!(cfg.spec_preset, SpecPreset::Http);
        assert_eq!(cfg.comparator, ComparatorId::Structured);
        assert!(matches!(cfg.workload, Workload::Replay { .. }));
    }

    #[test]
    fn zero_window_is_invalid() {
        let (_d, path) = write_config(&format!("window_seconds = 0\n{}", minimal_toml()));
        let err = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let (_d, path) = write_config(&format!("blast_radius = 3\n{}", minimal_toml()));
        let err = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }), "{err}");
    }

    #[test]
    fn missing_required_field_is_invalid() {
        let (_d, path) = write_config("window_seconds = 5\n");
        let err = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = resolve(
            Some(Path::new("/nonexistent/experiment.toml")),
            &HashMap::new(),
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }

    #[test]
    fn bad_preset_is_invalid() {
        let (_d, path) = write_config(&format!("spec_preset = \"batch\"\n{}", minimal_toml()));
        let err = resolve(Some(&path), &HashMap::new(), &Overrides::default()).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }
}
