//! Run configuration: built-in defaults, `key=value` files, and explicit
//! overrides, applied in that order (later wins).

use std::io::BufRead;

use crate::error::{Error, Result};

/// Every knob the pipeline exposes. Field defaults follow the reference
/// setup: learning rate 0.001, batch size 50, mixing factor γ = 0.3,
/// 512-wide hidden state over 300-wide embeddings, two graph layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    /// Cross-entropy-only epochs before the hybrid objective kicks in;
    /// `None` derives 80% of `epochs` (rounded).
    pub ce_pretrain_epochs: Option<usize>,
    pub hidden: usize,
    pub embed_dim: usize,
    pub gcn_layers: usize,
    pub max_len: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub min_freq: usize,
    pub mask: bool,
    pub bootstrap_k: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            lr: 0.001,
            batch_size: 50,
            gamma: 0.3,
            epochs: 100,
            ce_pretrain_epochs: None,
            hidden: 512,
            embed_dim: 300,
            gcn_layers: 2,
            max_len: 60,
            seed: 42,
            clip_norm: 5.0,
            min_freq: 1,
            mask: true,
            bootstrap_k: 5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
}

impl Config {
    /// Effective number of cross-entropy-only epochs.
    pub fn ce_pretrain(&self) -> usize {
        self.ce_pretrain_epochs
            .unwrap_or_else(|| (0.8 * self.epochs as f64).round() as usize)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "ce_pretrain_epochs" => self.ce_pretrain_epochs = Some(parse_num(key, value)?),
            "hidden" => self.hidden = parse_num(key, value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "gcn_layers" => self.gcn_layers = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "min_freq" => self.min_freq = parse_num(key, value)?,
            "mask" => {
                self.mask = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "mask must be true or false, got `{other}`"
                        )));
                    }
                }
            }
            "bootstrap_k" => self.bootstrap_k = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Reads a `key = value` file over the current values. Blank lines and
    /// `#` comments are ignored; unknown keys are errors.
    pub fn apply_file<R: BufRead>(&mut self, reader: R) -> Result<()> {
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::parse(idx + 1, format!("expected key=value, got `{trimmed}`")));
            };
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `key=value` override strings (e.g. from command-line flags)
    /// over the current values.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                return Err(Error::Config(format!("override `{o}` is not key=value")));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Rejects impossible combinations before any work starts.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0,1], got {}", self.gamma)));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0
            || self.epochs == 0
            || self.hidden == 0
            || self.embed_dim == 0
            || self.gcn_layers == 0
            || self.max_len == 0
            || self.min_freq == 0
            || self.bootstrap_k == 0
        {
            return Err(Error::Config("all sizes must be at least 1".into()));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden must be even, got {}",
                self.hidden
            )));
        }
        if let Some(ce) = self.ce_pretrain_epochs {
            if ce > self.epochs {
                return Err(Error::Config(format!(
                    "ce_pretrain_epochs {ce} exceeds epochs {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// One-line echo of the effective configuration, fixed key order.
    pub fn echo(&self) -> String {
        format!(
            "lr={} batch_size={} gamma={} epochs={} ce_pretrain_epochs={} hidden={} \
             embed_dim={} gcn_layers={} max_len={} seed={} clip_norm={} min_freq={} \
             mask={} bootstrap_k={}",
            self.lr,
            self.batch_size,
            self.gamma,
            self.epochs,
            self.ce_pretrain(),
            self.hidden,
            self.embed_dim,
            self.gcn_layers,
            self.max_len,
            self.seed,
            self.clip_norm,
            self.min_freq,
            self.mask,
            self.bootstrap_k
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = Config::default();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.batch_size, 50);
        assert_eq!(c.gamma, 0.3);
        assert_eq!(c.hidden, 512);
        assert_eq!(c.embed_dim, 300);
        assert_eq!(c.gcn_layers, 2);
        assert_eq!(c.max_len, 60);
        assert_eq!(c.clip_norm, 5.0);
        assert_eq!(c.bootstrap_k, 5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn ce_pretrain_derives_eighty_percent() {
        let mut c = Config::default();
        c.epochs = 10;
        assert_eq!(c.ce_pretrain(), 8);
        c.epochs = 7;
        assert_eq!(c.ce_pretrain(), 6, "5.6 rounds up");
        c.ce_pretrain_epochs = Some(2);
        assert_eq!(c.ce_pretrain(), 2, "explicit value wins");
    }

    #[test]
    fn file_parsing_with_comments_and_spacing() {
        let text = "# a comment\n\nlr = 0.01\nbatch_size=4\nmask = false\nseed= 7\n";
        let mut c = Config::default();
        c.apply_file(text.as_bytes()).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.batch_size, 4);
        assert!(!c.mask);
        assert_eq!(c.seed, 7);
        assert_eq!(c.hidden, 512, "untouched keys keep defaults");
    }

    #[test]
    fn unknown_keys_and_bad_values_error_with_lines() {
        let mut c = Config::default();
        let err = c.apply_file("lr = 0.1\nnot_a_key = 3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("not_a_key"), "{err}");

        let err = c.apply_file("lr = fast\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");

        let err = c.apply_file("just words\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");

        assert!(c.set("mask", "maybe").is_err());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut c = Config::default();
        c.apply_file("lr = 0.01\nepochs = 20\n".as_bytes()).unwrap();
        c.apply_overrides(&["lr=0.5".to_string()]).unwrap();
        assert_eq!(c.lr, 0.5);
        assert_eq!(c.epochs, 20);
        assert!(c.apply_overrides(&["nonsense".to_string()]).is_err());
    }

    #[test]
    fn validation_catches_bad_combinations() {
        let mut c = Config::default();
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        c.gamma = 0.3;
        c.hidden = 7;
        assert!(c.validate().is_err());
        c.hidden = 8;
        c.ce_pretrain_epochs = Some(c.epochs + 1);
        assert!(c.validate().is_err());
        c.ce_pretrain_epochs = None;
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c.lr = 0.001;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn echo_lists_every_key_once() {
        let echo = Config::default().echo();
        let fields: Vec<&str> = echo.split_whitespace().collect();
        assert_eq!(fields.len(), 14);
        for key in [
            "lr", "batch_size", "gamma", "epochs", "ce_pretrain_epochs", "hidden",
            "embed_dim", "gcn_layers", "max_len", "seed", "clip_norm", "min_freq",
            "mask", "bootstrap_k",
        ] {
            let hits = fields
                .iter()
                .filter(|f| f.split_once('=').map(|(k, _)| k) == Some(key))
                .count();
            assert_eq!(hits, 1, "{key} in `{echo}`");
        }
        assert!(echo.contains("ce_pretrain_epochs=80"), "derived value echoed");
    }
}
