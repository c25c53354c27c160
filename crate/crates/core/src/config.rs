//! `suggestion-bot.toml` loading.
//!
//! ```toml
//! [forge]
//! base_url = "https://api.github.com"
//! token_env = "GITHUB_TOKEN"
//!
//! [limits]
//! policy = "diff_visible"     # or "added_only"
//! merge_gap = 3
//! max_comments = 30
//! parallelism = 8
//!
//! [[tool]]
//! name = "black"
//! matchers = ["**/*.py"]
//! command = ["black", "--quiet", "-"]
//! mode = "stdout"             # or "in_place", with "{file}" in command
//! timeout = 30
//!
//! [webhook]
//! listen_addr = "127.0.0.1:8080"
//! secret_env = "SUGGESTION_BOT_WEBHOOK_SECRET"
//! ```
//!
//! Environment variable names are stored as given and only resolved when
//! a command needs them.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::forge_client::{DEFAULT_BASE_URL, DEFAULT_TOKEN_ENV};
use crate::suggestion_mapper::{MappingPolicy, Visibility};
use crate::tool_runner::{ToolMode, ToolSpec, DEFAULT_TIMEOUT};

pub const CONFIG_FILE_NAME: &str = "suggestion-bot.toml";
pub const DEFAULT_SECRET_ENV: &str = "SUGGESTION_BOT_WEBHOOK_SECRET";
pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";
const MAX_DEFAULT_PARALLELISM: usize = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    ConfigParseError { path: PathBuf, message: String },
    #[error("{path}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, key: String },
    #[error("{path}: invalid value for `{key}`: {reason}")]
    InvalidValue {
        path: PathBuf,
        key: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgeSettings {
    pub base_url: String,
    pub token_env: String,
}

impl ForgeSettings {
    pub fn token(&self) -> Option<String> {
        std::env::var(&self.token_env)
            .ok()
            .filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Limits {
    pub policy: MappingPolicy,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebhookSettings {
    pub listen_addr: String,
    pub secret_env: String,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub forge: ForgeSettings,
    pub limits: Limits,
    pub tools: Vec<ToolSpec>,
    pub webhook: WebhookSettings,
    /// File the configuration came from; `None` for built-in defaults.
    pub source: Option<PathBuf>,
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
        .min(MAX_DEFAULT_PARALLELISM)
}

impl Default for Config {
    fn default() -> Self {
        Config {
            forge: ForgeSettings {
                base_url: DEFAULT_BASE_URL.into(),
                token_env: DEFAULT_TOKEN_ENV.into(),
            },
            limits: Limits {
                policy: MappingPolicy::default(),
                parallelism: default_parallelism(),
            },
            tools: Vec::new(),
            webhook: WebhookSettings {
                listen_addr: DEFAULT_LISTEN_ADDR.into(),
                secret_env: DEFAULT_SECRET_ENV.into(),
            },
            source: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    forge: Option<RawForge>,
    limits: Option<RawLimits>,
    #[serde(default)]
    tool: Vec<RawTool>,
    webhook: Option<RawWebhook>,
}

#[derive(Debug, Deserialize)]
struct RawForge {
    base_url: Option<String>,
    token_env: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawLimits {
    policy: Option<String>,
    merge_gap: Option<i64>,
    max_comments: Option<i64>,
    parallelism: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct RawTool {
    name: String,
    matchers: Vec<String>,
    command: Vec<String>,
    mode: Option<String>,
    timeout: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawWebhook {
    listen_addr: Option<String>,
    secret_env: Option<String>,
}

/// Loads `path`, or `./suggestion-bot.toml` when it exists, or the defaults.
pub fn load_config(path: Option<&Path>) -> Result<Config, ConfigError> {
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
    load_config_in(path, &cwd)
}

/// [`load_config`] with an explicit directory for the implicit lookup.
pub fn load_config_in(path: Option<&Path>, dir: &Path) -> Result<Config, ConfigError> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => {
            let candidate = dir.join(CONFIG_FILE_NAME);
            if !candidate.is_file() {
                return Ok(Config::default());
            }
            candidate
        }
    };
    let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
        path: path.clone(),
        source,
    })?;
    parse_config(&text, &path)
}

/// Parses configuration text; `origin` is only used in error messages.
pub fn parse_config(text: &str, origin: &Path) -> Result<Config, ConfigError> {
    let path = origin.to_path_buf();
    let mut unknown = Vec::new();
    let deserializer = toml::Deserializer::new(text);
    let raw: RawConfig = serde_ignored::deserialize(deserializer, |key| {
        unknown.push(key.to_string().replace(".?", "").replace("?.", ""))
    })
    .map_err(|e| ConfigError::ConfigParseError {
        path: path.clone(),
        message: e.to_string().trim_end().to_owned(),
    })?;
    if let Some(key) = unknown.into_iter().next() {
        return Err(ConfigError::UnknownKey { path, key });
    }

    let invalid = |key: &str, reason: String| ConfigError::InvalidValue {
        path: path.clone(),
        key: key.to_owned(),
        reason,
    };
    let mut config = Config {
        source: Some(path.clone()),
        ..Config::default()
    };

    if let Some(forge) = raw.forge {
        if let Some(url) = forge.base_url {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(invalid(
                    "forge.base_url",
                    format!("{url:?} is not an http(s) URL"),
                ));
            }
            config.forge.base_url = url;
        }
        if let Some(env) = forge.token_env {
            if env.is_empty() {
                return Err(invalid("forge.token_env", "must not be empty".into()));
            }
            config.forge.token_env = env;
        }
    }

    if let Some(limits) = raw.limits {
        if let Some(policy) = limits.policy {
            config.limits.policy.visibility = policy
                .parse::<Visibility>()
                .map_err(|reason| invalid("limits.policy", reason))?;
        }
        if let Some(gap) = limits.merge_gap {
            config.limits.policy.merge_gap = usize::try_from(gap)
                .map_err(|_| invalid("limits.merge_gap", format!("{gap} is negative")))?;
        }
        if let Some(max) = limits.max_comments {
            if max < 1 {
                return Err(invalid(
                    "limits.max_comments",
                    format!("{max} is not positive"),
                ));
            }
            config.limits.policy.max_comments = max as usize;
        }
        if let Some(par) = limits.parallelism {
            if par < 1 {
                return Err(invalid(
                    "limits.parallelism",
                    format!("{par} is not positive"),
                ));
            }
            config.limits.parallelism = par as usize;
        }
    }

    for (i, tool) in raw.tool.into_iter().enumerate() {
        let key = format!("tool[{i}]");
        let mode = match tool.mode.as_deref() {
            None | Some("stdout") => ToolMode::Stdout,
            Some("in_place") => ToolMode::InPlace,
            Some(other) => {
                return Err(invalid(
                    &format!("{key}.mode"),
                    format!("{other:?} (expected \"stdout\" or \"in_place\")"),
                ))
            }
        };
        let timeout = match tool.timeout {
            None => DEFAULT_TIMEOUT,
            Some(secs) if secs.is_finite() && secs > 0.0 => Duration::from_secs_f64(secs),
            Some(secs) => {
                return Err(invalid(
                    &format!("{key}.timeout"),
                    format!("{secs} is not positive"),
                ))
            }
        };
        if config.tools.iter().any(|t: &ToolSpec| t.name == tool.name) {
            return Err(invalid(
                &format!("{key}.name"),
                format!("duplicate tool {:?}", tool.name),
            ));
        }
        let spec = ToolSpec::new(tool.name, tool.matchers, tool.command, mode, timeout)
            .map_err(|e| invalid(&key, e.to_string()))?;
        config.tools.push(spec);
    }

    if let Some(webhook) = raw.webhook {
        if let Some(addr) = webhook.listen_addr {
            if addr.parse::<std::net::SocketAddr>().is_err() {
                return Err(invalid(
                    "webhook.listen_addr",
                    format!("{addr:?} is not host:port"),
                ));
            }
            config.webhook.listen_addr = addr;
        }
        if let Some(env) = webhook.secret_env {
            if env.is_empty() {
                return Err(invalid("webhook.secret_env", "must not be empty".into()));
            }
            config.webhook.secret_env = env;
        }
    }

    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        parse_config(text, Path::new("test.toml"))
    }

    #[test]
    fn defaults_without_file() {
        let dir = tempfile::tempdir().unwrap();
        let config = load_config_in(None, dir.path()).unwrap();
        assert_eq!(config.limits.policy.visibility, Visibility::DiffVisible);
        assert_eq!(config.limits.policy.merge_gap, 3);
        assert_eq!(config.limits.policy.max_comments, 30);
        assert!(config.tools.is_empty());
        assert!(config.source.is_none());
        assert_eq!(config.forge.token_env, "GITHUB_TOKEN");
        assert_eq!(config.webhook.secret_env, "SUGGESTION_BOT_WEBHOOK_SECRET");
        assert!((1..=8).contains(&config.limits.parallelism));
    }

    #[test]
    fn finds_file_in_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(CONFIG_FILE_NAME),
            "[limits]\nmerge_gap = 0\n",
        )
        .unwrap();
        let config = load_config_in(None, dir.path()).unwrap();
        assert_eq!(config.limits.policy.merge_gap, 0);
        assert!(config.source.is_some());
    }

    #[test]
    fn one_tool() {
        let config = parse(
            r#"
[[tool]]
name = "black"
matchers = ["**/*.py"]
command = ["black", "-q", "-"]
"#,
        )
        .unwrap();
        assert_eq!(config.tools.len(), 1);
        let tool = &config.tools[0];
        assert_eq!(tool.name, "black");
        assert_eq!(tool.command, ["black", "-q", "-"]);
        assert_eq!(tool.mode, ToolMode::Stdout);
        assert_eq!(tool.timeout, Duration::from_secs(30));
    }

    #[test]
    fn invalid_policy() {
        let err = parse("[limits]\npolicy = \"everything\"\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::InvalidValue { ref key, .. } if key == "limits.policy"),
            "{err}"
        );
    }

    #[test]
    fn unknown_keys() {
        let err = parse("[limits]\nmerge_gapp = 1\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "limits.merge_gapp"),
            "{err}"
        );
        let err = parse("[extras]\nx = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse("[limits\n"),
            Err(ConfigError::ConfigParseError { .. })
        ));
        assert!(matches!(
            parse("[limits]\nmerge_gap = \"three\"\n"),
            Err(ConfigError::ConfigParseError { .. })
        ));
    }

    #[test]
    fn value_checks() {
        for text in [
            "[limits]\nmerge_gap = -1\n",
            "[limits]\nmax_comments = 0\n",
            "[limits]\nparallelism = 0\n",
            "[forge]\nbase_url = \"ftp://x\"\n",
            "[webhook]\nlisten_addr = \"nowhere\"\n",
            "[[tool]]\nname = \"t\"\nmatchers = []\ncommand = [\"cat\"]\n",
            "[[tool]]\nname = \"t\"\nmatchers = [\"*\"]\ncommand = []\n",
            "[[tool]]\nname = \"t\"\nmatchers = [\"*\"]\ncommand = [\"cat\"]\ntimeout = 0\n",
            "[[tool]]\nname = \"t\"\nmatchers = [\"*\"]\ncommand = [\"cat\"]\nmode = \"pipe\"\n",
            "[[tool]]\nname = \"t\"\nmatchers = [\"*\"]\ncommand = [\"cat\"]\n[[tool]]\nname = \"t\"\nmatchers = [\"*\"]\ncommand = [\"cat\"]\n",
        ] {
            assert!(matches!(parse(text), Err(ConfigError::InvalidValue { .. })), "{text}");
        }
    }

    #[test]
    fn missing_explicit_file() {
        let err = load_config(Some(Path::new("/nonexistent/suggestion-bot.toml"))).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }
}
