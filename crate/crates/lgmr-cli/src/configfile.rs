//! Dotted key-value config files: one `section.key=value` per line, `#`
//! comments. Values from `--set KEY=VALUE` flags override file values.

use std::collections::BTreeMap;
use std::path::Path;

use lgmr_core::config::ModelConfig;
use lgmr_core::error::{Error, Result};
use lgmr_core::synthetic::SyntheticSpec;

#[derive(Debug, Default, Clone)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::schema(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = KvConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::schema(format!("config line {} is not KEY=VALUE", lineno + 1))
            })?;
            cfg.values
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn set_all(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::schema(format!("--set {item} is not KEY=VALUE")))?;
            self.values
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::schema(format!("config {key}={v} has the wrong type"))),
        }
    }

    /// Applies `model.*` keys, then errors on any unrecognized key outside the
    /// known sections.
    pub fn apply_model(&self, cfg: &mut ModelConfig) -> Result<()> {
        macro_rules! field {
            ($key:literal, $field:ident) => {
                if let Some(v) = self.parse($key)? {
                    cfg.$field = v;
                }
            };
        }
        field!("model.hidden_dim", hidden_dim);
        field!("model.heads", heads);
        field!("model.ffn_dim", ffn_dim);
        field!("model.window_len", window_len);
        field!("model.subparagraph_count", subparagraph_count);
        field!("model.encoder_layers", encoder_layers);
        field!("model.decoder_layers", decoder_layers);
        field!("model.lambda1", lambda1);
        field!("model.lambda2", lambda2);
        field!("model.t_max", t_max);
        field!("model.learning_rate", learning_rate);
        field!("model.batch_size", batch_size);
        field!("model.epochs", epochs);
        Ok(())
    }

    pub fn apply_synth(&self, spec: &mut SyntheticSpec) -> Result<()> {
        macro_rules! field {
            ($key:literal, $field:ident) => {
                if let Some(v) = self.parse($key)? {
                    spec.$field = v;
                }
            };
        }
        field!("synth.seed", seed);
        field!("synth.t", t);
        field!("synth.n", n);
        field!("synth.video_dim", video_dim);
        field!("synth.text_dim", text_dim);
        field!("synth.tokens_per_paragraph", tokens_per_paragraph);
        field!("synth.noise_sigma", noise_sigma);
        field!("synth.min_gap", min_gap);
        // length bounds default to ~5-15% of the (possibly overridden) T
        let rescaled = SyntheticSpec::new(spec.seed, spec.t, spec.n, spec.video_dim, spec.text_dim);
        spec.min_len = rescaled.min_len;
        spec.max_len = rescaled.max_len;
        field!("synth.min_len", min_len);
        field!("synth.max_len", max_len);
        Ok(())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse(key)
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse(key)
    }

    /// Rejects keys outside the documented namespaces.
    pub fn check_known_keys(&self) -> Result<()> {
        const KNOWN: &[&str] = &[
            "model.hidden_dim",
            "model.heads",
            "model.ffn_dim",
            "model.window_len",
            "model.subparagraph_count",
            "model.encoder_layers",
            "model.decoder_layers",
            "model.lambda1",
            "model.lambda2",
            "model.t_max",
            "model.learning_rate",
            "model.batch_size",
            "model.epochs",
            "train.seed",
            "train.eval_every",
            "train.grad_clip",
            "synth.seed",
            "synth.t",
            "synth.n",
            "synth.video_dim",
            "synth.text_dim",
            "synth.tokens_per_paragraph",
            "synth.noise_sigma",
            "synth.min_gap",
            "synth.min_len",
            "synth.max_len",
        ];
        for key in self.values.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(Error::schema(format!("unknown config key {key}")));
            }
        }
        Ok(())
    }
}
