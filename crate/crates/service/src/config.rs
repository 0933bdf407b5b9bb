use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use floodstream_core::AlgorithmVariant;

pub const ENV_DATA_DIR: &str = "FLOODSTREAM_DATA_DIR";
pub const ENV_BIND: &str = "FLOODSTREAM_BIND";
pub const ENV_PROFILE: &str = "FLOODSTREAM_PROFILE";
pub const ENV_VARIANT: &str = "FLOODSTREAM_VARIANT";
pub const ENV_POLL_TIMEOUT_MS: &str = "FLOODSTREAM_POLL_TIMEOUT_MS";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    /// Profile used for snapshot timings and for jobs that name none.
    pub default_profile: String,
    /// Streaming variant used for snapshot recomputes and for jobs that name none.
    pub variant: AlgorithmVariant,
    /// Longest a waiting snapshot request blocks.
    pub poll_timeout: Duration,
    pub max_upload_bytes: usize,
}

impl Config {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Config {
            data_dir: data_dir.into(),
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            default_profile: "paper-hd7950".into(),
            variant: AlgorithmVariant::TwoBufferFinal,
            poll_timeout: Duration::from_secs(30),
            max_upload_bytes: 300 * 1024 * 1024,
        }
    }

    pub fn from_env() -> anyhow::Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let mut c = Config::new(get(ENV_DATA_DIR).unwrap_or_else(|| "floodstream-data".into()));
        if let Some(bind) = get(ENV_BIND) {
            c.bind = bind.parse().with_context(|| format!("{ENV_BIND}={bind}"))?;
        }
        if let Some(p) = get(ENV_PROFILE) {
            c.default_profile = p;
        }
        if let Some(v) = get(ENV_VARIANT) {
            c.variant = v.parse().with_context(|| format!("{ENV_VARIANT}={v}"))?;
        }
        if let Some(ms) = get(ENV_POLL_TIMEOUT_MS) {
            c.poll_timeout = Duration::from_millis(ms.parse().with_context(|| format!("{ENV_POLL_TIMEOUT_MS}={ms}"))?);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> = [
            (ENV_DATA_DIR, "/tmp/fs"),
            (ENV_BIND, "0.0.0.0:9000"),
            (ENV_PROFILE, "synthetic"),
            (ENV_VARIANT, "1b-final"),
            (ENV_POLL_TIMEOUT_MS, "250"),
        ]
        .into();
        let c = Config::from_lookup(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.data_dir, PathBuf::from("/tmp/fs"));
        assert_eq!(c.bind.port(), 9000);
        assert_eq!(c.default_profile, "synthetic");
        assert_eq!(c.variant, AlgorithmVariant::OneBufferFinal);
        assert_eq!(c.poll_timeout, Duration::from_millis(250));

        let d = Config::from_lookup(|_| None).unwrap();
        assert_eq!(d.variant, AlgorithmVariant::TwoBufferFinal);
        assert!(Config::from_lookup(|k| (k == ENV_BIND).then(|| "nope".to_string())).is_err());
    }
}
