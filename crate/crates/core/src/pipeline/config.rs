//! Flat key=value run configuration shared by the library entry points
//! and the command line. One fingerprint covers every knob so reports can
//! state exactly what produced them.

use sha2::{Digest, Sha256};

use crate::cvgg::Profile;
use crate::error::{Error, Result};
use crate::ml::{ForestConfig, Objective, Weighting, XgbConfig};
use crate::tensor::AdamHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// Dense-layer activations only (length 256).
    Deep,
    /// Deep + histogram descriptors (length 2816).
    Fused,
}

impl FeatureSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Deep => "deep",
            FeatureSet::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deep" => Ok(FeatureSet::Deep),
            "fused" => Ok(FeatureSet::Fused),
            other => Err(Error::Argument(format!(
                "feature set must be deep or fused, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Knn,
    Rf,
    Xgb,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::Rf => "rf",
            ClassifierKind::Xgb => "xgb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "rf" => Ok(ClassifierKind::Rf),
            "xgb" => Ok(ClassifierKind::Xgb),
            other => Err(Error::Argument(format!(
                "classifier must be knn, rf or xgb, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub feature_set: FeatureSet,
    pub classifier: ClassifierKind,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,

    pub knn_k: usize,
    pub knn_weighting: Weighting,

    pub rf_trees: usize,
    /// 0 grows to purity.
    pub rf_max_depth: u32,
    pub rf_bootstrap: bool,

    pub xgb_rounds: usize,
    pub xgb_eta: f64,
    pub xgb_lambda: f64,
    pub xgb_gamma: f64,
    pub xgb_max_depth: u32,

    pub split_seed: u64,
    pub train_fraction: f64,
    pub group_split: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            profile: Profile::Reduced,
            feature_set: FeatureSet::Fused,
            classifier: ClassifierKind::Xgb,
            epochs: 6,
            batch_size: 16,
            learning_rate: 1e-3,
            knn_k: 5,
            knn_weighting: Weighting::InverseDistance,
            rf_trees: 100,
            rf_max_depth: 0,
            rf_bootstrap: true,
            xgb_rounds: 60,
            xgb_eta: 0.1,
            xgb_lambda: 1.0,
            xgb_gamma: 0.0,
            xgb_max_depth: 4,
            split_seed: 0,
            train_fraction: 0.8,
            group_split: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Argument(format!("config key {key}: cannot parse {value:?} as {kind}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Argument(format!(
            "config key {key}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    /// Apply one key=value setting. Unknown keys are rejected so typos
    /// cannot silently fall back to defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value, "integer")?,
            "profile" => self.profile = Profile::parse(value)?,
            "feature_set" => self.feature_set = FeatureSet::parse(value)?,
            "classifier" => self.classifier = ClassifierKind::parse(value)?,
            "epochs" => self.epochs = parse_num(key, value, "integer")?,
            "batch_size" => self.batch_size = parse_num(key, value, "integer")?,
            "learning_rate" => self.learning_rate = parse_num(key, value, "number")?,
            "knn_k" => self.knn_k = parse_num(key, value, "integer")?,
            "knn_weighting" => self.knn_weighting = Weighting::parse(value)?,
            "rf_trees" => self.rf_trees = parse_num(key, value, "integer")?,
            "rf_max_depth" => self.rf_max_depth = parse_num(key, value, "integer")?,
            "rf_bootstrap" => self.rf_bootstrap = parse_bool(key, value)?,
            "xgb_rounds" => self.xgb_rounds = parse_num(key, value, "integer")?,
            "xgb_eta" => self.xgb_eta = parse_num(key, value, "number")?,
            "xgb_lambda" => self.xgb_lambda = parse_num(key, value, "number")?,
            "xgb_gamma" => self.xgb_gamma = parse_num(key, value, "number")?,
            "xgb_max_depth" => self.xgb_max_depth = parse_num(key, value, "integer")?,
            "split_seed" => self.split_seed = parse_num(key, value, "integer")?,
            "train_fraction" => self.train_fraction = parse_num(key, value, "number")?,
            "group_split" => self.group_split = parse_bool(key, value)?,
            _ => return Err(Error::Argument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a config file body: one key=value per line, `#` comments and
    /// blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("config line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Deterministic rendering of every setting, one key per line, sorted.
    pub fn canonical_string(&self) -> String {
        let mut pairs = vec![
            ("batch_size", self.batch_size.to_string()),
            ("classifier", self.classifier.as_str().to_string()),
            ("epochs", self.epochs.to_string()),
            ("feature_set", self.feature_set.as_str().to_string()),
            ("group_split", self.group_split.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("knn_weighting", self.knn_weighting.as_str().to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("profile", self.profile.as_str().to_string()),
            ("rf_bootstrap", self.rf_bootstrap.to_string()),
            ("rf_max_depth", self.rf_max_depth.to_string()),
            ("rf_trees", self.rf_trees.to_string()),
            ("seed", self.seed.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("xgb_eta", self.xgb_eta.to_string()),
            ("xgb_gamma", self.xgb_gamma.to_string()),
            ("xgb_lambda", self.xgb_lambda.to_string()),
            ("xgb_max_depth", self.xgb_max_depth.to_string()),
            ("xgb_rounds", self.xgb_rounds.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// 64-bit hex digest of the canonical rendering.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn train_config(&self) -> crate::cvgg::TrainConfig {
        crate::cvgg::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamHyper {
                lr: self.learning_rate as f32,
                ..AdamHyper::default()
            },
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            trees: self.rf_trees,
            max_depth: (self.rf_max_depth > 0).then_some(self.rf_max_depth),
            seed: self.seed,
            bootstrap: self.rf_bootstrap,
        }
    }

    pub fn xgb_config(&self) -> XgbConfig {
        XgbConfig {
            rounds: self.xgb_rounds,
            eta: self.xgb_eta,
            lambda: self.xgb_lambda,
            gamma: self.xgb_gamma,
            max_depth: self.xgb_max_depth,
            base_score: 0.5,
            objective: Objective::Logistic,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_parse() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::parse(&cfg.canonical_string()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("sedd=3\n").unwrap_err();
        assert!(err.to_string().contains("sedd"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\nseed = 11 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::parse("epochs=three\n").unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        assert!(RunConfig::parse("group_split=yes\n").is_err());
        assert!(RunConfig::parse("classifier=svm\n").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 8;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn missing_equals_sign_reports_line() {
        let err = RunConfig::parse("seed\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
