//! Deployment-style environment variables. When set they take precedence
//! over command-line flags.

use commitgap_core::faultproc::{KillSchedule, UnknownPhase};
use commitgap_core::safewriter::{
    parse_bool, ConfigError, SafeWriterConfig, WatchdogConfig, ENV_AUDIT_LOG, ENV_BUCKET,
    ENV_TIMEOUT, ENV_WARN_BEFORE,
};
use commitgap_core::time::Millis;
use thiserror::Error;

pub const ENV_KILL_AFTER_PHASE: &str = "KILL_AFTER_PHASE";
pub const ENV_USE_SAFE_WRITER: &str = "USE_SAFE_WRITER";

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("{name}={value:?} is not valid")]
    Invalid { name: &'static str, value: String },
    #[error(transparent)]
    Phase(#[from] UnknownPhase),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Values read from the environment; unset variables are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvOverrides {
    pub timeout_ms: Option<Millis>,
    pub warn_before_ms: Option<Millis>,
    pub checkpoint_bucket: Option<String>,
    pub audit_log: Option<bool>,
    pub kill: Option<KillSchedule>,
    pub use_safe_writer: Option<bool>,
}

fn millis(name: &'static str, v: String) -> Result<Millis, EnvError> {
    v.trim()
        .parse()
        .map_err(|_| EnvError::Invalid { name, value: v })
}

fn flag(name: &'static str, v: String) -> Result<bool, EnvError> {
    parse_bool(&v).ok_or(EnvError::Invalid { name, value: v })
}

impl EnvOverrides {
    pub fn from_lookup<F: Fn(&str) -> Option<String>>(get: F) -> Result<Self, EnvError> {
        Ok(Self {
            timeout_ms: get(ENV_TIMEOUT).map(|v| millis(ENV_TIMEOUT, v)).transpose()?,
            warn_before_ms: get(ENV_WARN_BEFORE)
                .map(|v| millis(ENV_WARN_BEFORE, v))
                .transpose()?,
            checkpoint_bucket: get(ENV_BUCKET).filter(|b| !b.is_empty()),
            audit_log: get(ENV_AUDIT_LOG).map(|v| flag(ENV_AUDIT_LOG, v)).transpose()?,
            kill: get(ENV_KILL_AFTER_PHASE)
                .map(|v| KillSchedule::from_env_value(&v))
                .transpose()?,
            use_safe_writer: get(ENV_USE_SAFE_WRITER)
                .map(|v| flag(ENV_USE_SAFE_WRITER, v))
                .transpose()?,
        })
    }

    pub fn from_process() -> Result<Self, EnvError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Folds the SafeWriter and platform-timeout settings into `cfg` and
    /// `timeout_ms`, then validates the result.
    pub fn apply(&self, cfg: &mut SafeWriterConfig, timeout_ms: &mut Millis) -> Result<(), EnvError> {
        if let Some(b) = &self.checkpoint_bucket {
            cfg.checkpoint_bucket = b.clone();
        }
        if let Some(a) = self.audit_log {
            cfg.audit_log = a;
        }
        let timeout = self.timeout_ms.unwrap_or(cfg.watchdog.timeout_ms);
        let warn = self.warn_before_ms.unwrap_or(cfg.watchdog.warn_before_ms);
        cfg.watchdog = WatchdogConfig::new(timeout, warn)?;
        if let Some(t) = self.timeout_ms {
            *timeout_ms = t;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use commitgap_core::faultproc::Phase;

    fn lookup<'a>(pairs: &'a [(&'a str, &'a str)]) -> impl Fn(&str) -> Option<String> + 'a {
        move |k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn unset_means_no_override() {
        let e = EnvOverrides::from_lookup(lookup(&[])).unwrap();
        assert_eq!(e, EnvOverrides::default());
        let mut cfg = SafeWriterConfig::new("b");
        let before = cfg.clone();
        let mut t = 5;
        e.apply(&mut cfg, &mut t).unwrap();
        assert_eq!((cfg, t), (before, 5));
    }

    #[test]
    fn values_override() {
        let e = EnvOverrides::from_lookup(lookup(&[
            ("LAMBDA_TIMEOUT_MS", "60000"),
            ("SW_WARN_BEFORE_MS", "5000"),
            ("SW_CHECKPOINT_BUCKET", "audit"),
            ("SW_AUDIT_LOG", "0"),
            ("KILL_AFTER_PHASE", "commit"),
            ("USE_SAFE_WRITER", "true"),
        ]))
        .unwrap();
        assert_eq!(e.kill, Some(KillSchedule::AfterPhase { phase: Phase::Commit }));
        assert_eq!(e.use_safe_writer, Some(true));
        let mut cfg = SafeWriterConfig::new("flag-bucket");
        let mut t = 900_000;
        e.apply(&mut cfg, &mut t).unwrap();
        assert_eq!(cfg.checkpoint_bucket, "audit");
        assert!(!cfg.audit_log);
        assert_eq!(cfg.watchdog.fire_offset(), 55_000);
        assert_eq!(t, 60_000);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(EnvOverrides::from_lookup(lookup(&[("LAMBDA_TIMEOUT_MS", "1s")])).is_err());
        assert!(EnvOverrides::from_lookup(lookup(&[("KILL_AFTER_PHASE", "later")])).is_err());
        assert!(EnvOverrides::from_lookup(lookup(&[("USE_SAFE_WRITER", "maybe")])).is_err());
        let e = EnvOverrides::from_lookup(lookup(&[("SW_WARN_BEFORE_MS", "900000")])).unwrap();
        let mut cfg = SafeWriterConfig::new("b");
        assert!(e.apply(&mut cfg, &mut 0).is_err());
    }
}
