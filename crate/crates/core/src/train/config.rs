use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spline::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadKind {
    Tkan,
    Lstm,
    Transformer,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Lstm, HeadKind::Transformer, HeadKind::Tkan];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Tkan => "tkan",
            HeadKind::Lstm => "lstm",
            HeadKind::Transformer => "transformer",
        }
    }

    /// Row label used in comparison tables.
    pub fn method(self) -> &'static str {
        match self {
            HeadKind::Tkan => "CNN+TKAN",
            HeadKind::Lstm => "CNN+LSTM",
            HeadKind::Transformer => "CNN+Transformer",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tkan" => Ok(HeadKind::Tkan),
            "lstm" => Ok(HeadKind::Lstm),
            "transformer" => Ok(HeadKind::Transformer),
            _ => Err(Error::Config(format!("unknown head '{s}' (tkan, lstm, transformer)"))),
        }
    }
}

/// Every knob of a training run. Defaults are the full-scale recipe;
/// [`TrainConfig::desk`] is the reduced laptop preset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub head: HeadKind,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub frames: usize,
    pub d: usize,
    pub d_sub: usize,
    pub sublayers: usize,
    pub grid_intervals: usize,
    pub spline_degree: usize,
    pub kan_activation: Activation,
    pub forget_bias: f64,
    pub lstm_hidden1: usize,
    pub lstm_hidden2: usize,
    pub transformer_heads: usize,
    pub transformer_layers: usize,
    pub transformer_ff: usize,
    pub transformer_pre_norm: bool,
    pub channels: [usize; 4],
    pub input_side: usize,
    /// Train on precomputed `T × d` features instead of frames.
    pub features: bool,
    pub seed: u64,
    pub max_epochs: usize,
    pub stop_patience: usize,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub improvement_threshold: f64,
    pub val_fraction: f64,
    /// Batches per epoch; 0 means one pass worth of clips.
    pub steps_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            head: HeadKind::Tkan,
            lr: 1e-4,
            batch_size: 8,
            dropout: 0.3,
            frames: 50,
            d: 256,
            d_sub: 128,
            sublayers: 2,
            grid_intervals: 5,
            spline_degree: 3,
            kan_activation: Activation::Identity,
            forget_bias: 1.0,
            lstm_hidden1: 256,
            lstm_hidden2: 128,
            transformer_heads: 4,
            transformer_layers: 2,
            transformer_ff: 1024,
            transformer_pre_norm: true,
            channels: [32, 64, 128, 256],
            input_side: 64,
            features: false,
            seed: 0,
            max_epochs: 100,
            stop_patience: 10,
            plateau_patience: 5,
            lr_factor: 0.5,
            min_lr: 1e-7,
            improvement_threshold: 1e-4,
            val_fraction: 0.1,
            steps_per_epoch: 0,
        }
    }
}

const ARCH_KEYS: &[&str] = &[
    "head",
    "frames",
    "d",
    "d_sub",
    "sublayers",
    "grid_intervals",
    "spline_degree",
    "kan_activation",
    "lstm_hidden1",
    "lstm_hidden2",
    "transformer_heads",
    "transformer_layers",
    "transformer_ff",
    "transformer_pre_norm",
    "channels",
    "input_side",
    "features",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

impl TrainConfig {
    /// Reduced widths, 32-pixel frames and a fixed 15 steps per epoch for
    /// desk-scale runs (`d = 64`, `d_sub = 32`).
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            d: 64,
            d_sub: 32,
            lstm_hidden1: 64,
            lstm_hidden2: 32,
            transformer_ff: 256,
            channels: [8, 16, 32, 64],
            input_side: 32,
            max_epochs: 40,
            steps_per_epoch: 15,
            ..TrainConfig::default()
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = self.channels;
        vec![
            ("head", self.head.to_string()),
            ("lr", format!("{:e}", self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("frames", self.frames.to_string()),
            ("d", self.d.to_string()),
            ("d_sub", self.d_sub.to_string()),
            ("sublayers", self.sublayers.to_string()),
            ("grid_intervals", self.grid_intervals.to_string()),
            ("spline_degree", self.spline_degree.to_string()),
            ("kan_activation", self.kan_activation.name().to_string()),
            ("forget_bias", self.forget_bias.to_string()),
            ("lstm_hidden1", self.lstm_hidden1.to_string()),
            ("lstm_hidden2", self.lstm_hidden2.to_string()),
            ("transformer_heads", self.transformer_heads.to_string()),
            ("transformer_layers", self.transformer_layers.to_string()),
            ("transformer_ff", self.transformer_ff.to_string()),
            ("transformer_pre_norm", self.transformer_pre_norm.to_string()),
            ("channels", format!("{},{},{},{}", c[0], c[1], c[2], c[3])),
            ("input_side", self.input_side.to_string()),
            ("features", self.features.to_string()),
            ("seed", self.seed.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("stop_patience", self.stop_patience.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("min_lr", format!("{:e}", self.min_lr)),
            ("improvement_threshold", format!("{:e}", self.improvement_threshold)),
            ("val_fraction", self.val_fraction.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "head" => self.head = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "d_sub" => self.d_sub = parse(key, v)?,
            "sublayers" => self.sublayers = parse(key, v)?,
            "grid_intervals" => self.grid_intervals = parse(key, v)?,
            "spline_degree" => self.spline_degree = parse(key, v)?,
            "kan_activation" => self.kan_activation = Activation::parse(v)?,
            "forget_bias" => self.forget_bias = parse(key, v)?,
            "lstm_hidden1" => self.lstm_hidden1 = parse(key, v)?,
            "lstm_hidden2" => self.lstm_hidden2 = parse(key, v)?,
            "transformer_heads" => self.transformer_heads = parse(key, v)?,
            "transformer_layers" => self.transformer_layers = parse(key, v)?,
            "transformer_ff" => self.transformer_ff = parse(key, v)?,
            "transformer_pre_norm" => self.transformer_pre_norm = parse(key, v)?,
            "channels" => {
                let parts: Vec<usize> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                self.channels = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("channels needs four values, got '{v}'")))?;
            }
            "input_side" => self.input_side = parse(key, v)?,
            "features" => self.features = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "stop_patience" => self.stop_patience = parse(key, v)?,
            "plateau_patience" => self.plateau_patience = parse(key, v)?,
            "lr_factor" => self.lr_factor = parse(key, v)?,
            "min_lr" => self.min_lr = parse(key, v)?,
            "improvement_threshold" => self.improvement_threshold = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. With `ignore_unknown`,
    /// keys that are not training fields are skipped and returned.
    pub fn apply_text(&mut self, text: &str, ignore_unknown: bool) -> Result<Vec<(String, String)>> {
        let mut extra = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            match self.set(k, v) {
                Err(Error::Config(msg)) if ignore_unknown && msg.starts_with("unknown config key") => {
                    extra.push((k.trim().to_string(), v.trim().to_string()));
                }
                Err(Error::Config(msg)) => return Err(Error::Config(format!("config line {}: {msg}", i + 1))),
                r => r?,
            }
        }
        Ok(extra)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(&std::fs::read_to_string(path)?, false)?;
        Ok(c)
    }

    /// Canonical `key = value` text, one line per field.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn architecture(&self) -> Vec<(&'static str, String)> {
        self.entries().into_iter().filter(|(k, _)| ARCH_KEYS.contains(k)).collect()
    }

    /// SHA-256 over the canonical architecture fields.
    pub fn architecture_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.architecture() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.frames == 0 || self.d == 0 || self.d_sub == 0 || self.sublayers == 0 {
            return bad("batch_size, frames, d, d_sub and sublayers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.head == HeadKind::Transformer && self.d % self.transformer_heads.max(1) != 0 {
            return bad(format!("d = {} is not divisible by {} attention heads", self.d, self.transformer_heads));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must be in (0, 1), got {}", self.lr_factor));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.dropout, c.frames, c.d, c.sublayers), (1e-4, 8, 0.3, 50, 256, 2));
        assert_eq!((c.stop_patience, c.plateau_patience, c.lr_factor), (10, 5, 0.5));
        assert_eq!(c.channels, [32, 64, 128, 256]);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk();
        c.head = HeadKind::Lstm;
        c.seed = 42;
        let mut d = TrainConfig::default();
        d.apply_text(&c.to_text(), false).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut c = TrainConfig::default();
        assert!(c.apply_text("nope = 3", false).is_err());
        assert_eq!(c.apply_text("nope = 3\nlr = 0.5 # note", true).unwrap(), vec![("nope".into(), "3".into())]);
        assert_eq!(c.lr, 0.5);
        assert!(c.apply_text("lr", false).is_err());
        assert!(c.apply_text("channels = 1,2", false).is_err());
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.lr = 0.1;
        b.seed = 9;
        assert_eq!(a.architecture_hash(), b.architecture_hash());
        b.d = 128;
        assert_ne!(a.architecture_hash(), b.architecture_hash());
    }
}
