//! Run configuration: a flat, sectioned TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown sections and keys are rejected. `--set key=value` overrides are
//! applied after the file; a bare `key` resolves to the one section that
//! declares it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slime_core::seed::{derive_seed, Stream};
use slime_core::{
    AdamWConfig, BaselineHyperParams, Objective, PolicyDims, SlimeHyperParams, SyntheticSpec,
    TrainConfig,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Parse(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}` is ambiguous; qualify it as one of: {candidates}")]
    AmbiguousKey { key: String, candidates: String },

    #[error("override `{0}` must have the form key=value")]
    MalformedOverride(String),

    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSONL corpus. When absent a synthetic corpus is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub synthetic_pairs: usize,
    pub max_len: usize,
    pub style_permille: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            synthetic_pairs: 2000,
            max_len: 12,
            style_permille: SyntheticSpec::DEFAULT_STYLE_PERMILLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = PolicyDims::default();
        Self {
            vocab_size: d.vocab_size,
            context_window: d.context_window,
            embed_dim: d.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: u64,
    pub seed: u64,
    pub sft_fraction: f64,
    pub eval_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            objective: t.objective.name().to_owned(),
            lr: t.lr_init,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            seed: t.seed,
            sft_fraction: t.sft_fraction,
            eval_fraction: t.eval_fraction,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            weight_decay: t.adam.weight_decay,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlimeSection {
    pub lambda_w: f64,
    pub lambda_l: f64,
    pub lambda_d: f64,
    pub delta: f64,
    pub m_h: f64,
    pub m_s: f64,
    pub kappa: f64,
    pub p: f64,
    pub enable_chosen: bool,
    pub enable_rejected: bool,
    pub enable_soft: bool,
    pub enable_hard: bool,
    pub length_normalize: bool,
}

impl Default for SlimeSection {
    fn default() -> Self {
        let h = SlimeHyperParams::default();
        Self {
            lambda_w: h.lambda_w,
            lambda_l: h.lambda_l,
            lambda_d: h.lambda_d,
            delta: h.delta,
            m_h: h.hard_margin,
            m_s: h.soft_margin,
            kappa: h.kappa,
            p: h.p,
            enable_chosen: h.enable_chosen,
            enable_rejected: h.enable_rejected,
            enable_soft: h.enable_soft,
            enable_hard: h.enable_hard,
            length_normalize: h.length_normalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub dpo_beta: f64,
    pub simpo_beta: f64,
    pub simpo_gamma: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let b = BaselineHyperParams::default();
        Self {
            dpo_beta: b.dpo_beta,
            simpo_beta: b.simpo_beta,
            simpo_gamma: b.simpo_gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub n_points: usize,
    pub n_probes: usize,
    pub probe_pairs: usize,
    pub component_tolerance: f64,
    pub probe_tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            n_points: 1000,
            n_probes: 20,
            probe_pairs: 8,
            component_tolerance: 1e-5,
            probe_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Root under which timestamped run directories are created.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub slime: SlimeSection,
    pub baseline: BaselineSection,
    pub gradcheck: GradcheckSection,
    pub output: OutputSection,
}

/// Every accepted key, by section.
pub const KEYS: &[(&str, &[&str])] = &[
    ("data", &["path", "synthetic_pairs", "max_len", "style_permille"]),
    ("model", &["vocab_size", "context_window", "embed_dim"]),
    (
        "train",
        &[
            "objective",
            "lr",
            "epochs",
            "batch_size",
            "eval_every",
            "seed",
            "sft_fraction",
            "eval_fraction",
            "beta1",
            "beta2",
            "eps",
            "weight_decay",
            "checkpoint_every",
        ],
    ),
    (
        "slime",
        &[
            "lambda_w",
            "lambda_l",
            "lambda_d",
            "delta",
            "m_h",
            "m_s",
            "kappa",
            "p",
            "enable_chosen",
            "enable_rejected",
            "enable_soft",
            "enable_hard",
            "length_normalize",
        ],
    ),
    ("baseline", &["dpo_beta", "simpo_beta", "simpo_gamma"]),
    (
        "gradcheck",
        &[
            "n_points",
            "n_probes",
            "probe_pairs",
            "component_tolerance",
            "probe_tolerance",
        ],
    ),
    ("output", &["dir"]),
];

/// Maps `key` or `section.key` to its `(section, key)` location.
pub fn resolve_key(key: &str) -> Result<(&'static str, &'static str), ConfigError> {
    let unknown = || ConfigError::UnknownKey(key.to_owned());
    if let Some((section, name)) = key.split_once('.') {
        let (s, keys) = KEYS.iter().find(|(s, _)| *s == section).ok_or_else(unknown)?;
        let k = keys.iter().find(|k| **k == name).ok_or_else(unknown)?;
        return Ok((s, k));
    }
    let hits: Vec<(&'static str, &'static str)> = KEYS
        .iter()
        .filter_map(|(s, keys)| keys.iter().find(|k| **k == key).map(|k| (*s, *k)))
        .collect();
    match hits.as_slice() {
        [] => Err(unknown()),
        [one] => Ok(*one),
        many => Err(ConfigError::AmbiguousKey {
            key: key.to_owned(),
            candidates: many
                .iter()
                .map(|(s, k)| format!("{s}.{k}"))
                .collect::<Vec<_>>()
                .join(", "),
        }),
    }
}

/// Interprets the right-hand side of an override as a TOML value, falling
/// back to a plain string so `objective=dpo` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_owned()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Applies `(key, value)` overrides in order.
    pub fn apply_overrides<'a, I>(&mut self, overrides: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut table = match toml::Value::try_from(&*self).expect("config serializes to TOML") {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        for (key, raw) in overrides {
            let (section, name) = resolve_key(key.trim())?;
            let entry = table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                t.insert(name.to_owned(), parse_value(raw));
            }
        }
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_owned()))?;
        Ok(())
    }

    /// Parses `key=value` strings and applies them.
    pub fn apply_set_args(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut pairs = Vec::with_capacity(args.len());
        for arg in args {
            let (k, v) = arg
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedOverride(arg.clone()))?;
            pairs.push((k, v));
        }
        self.apply_overrides(pairs)
    }

    pub fn objective(&self) -> Result<Objective, ConfigError> {
        Objective::parse(&self.train.objective).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "train.objective `{}` is not one of slime, simpo, dpo",
                self.train.objective
            ))
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.train;
        let config = TrainConfig {
            objective: self.objective()?,
            lr_init: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            seed: t.seed,
            adam: AdamWConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            sft_fraction: t.sft_fraction,
            eval_fraction: t.eval_fraction,
        };
        config.validate().map_err(invalid)?;
        Ok(config)
    }

    pub fn slime_hp(&self) -> Result<SlimeHyperParams, ConfigError> {
        let s = &self.slime;
        let hp = SlimeHyperParams {
            lambda_w: s.lambda_w,
            lambda_l: s.lambda_l,
            lambda_d: s.lambda_d,
            delta: s.delta,
            hard_margin: s.m_h,
            soft_margin: s.m_s,
            kappa: s.kappa,
            p: s.p,
            enable_chosen: s.enable_chosen,
            enable_rejected: s.enable_rejected,
            enable_soft: s.enable_soft,
            enable_hard: s.enable_hard,
            length_normalize: s.length_normalize,
        };
        hp.validate().map_err(invalid)?;
        Ok(hp)
    }

    pub fn baseline_hp(&self) -> Result<BaselineHyperParams, ConfigError> {
        let b = &self.baseline;
        let bhp = BaselineHyperParams {
            dpo_beta: b.dpo_beta,
            simpo_beta: b.simpo_beta,
            simpo_gamma: b.simpo_gamma,
        };
        bhp.validate().map_err(invalid)?;
        Ok(bhp)
    }

    pub fn dims(&self) -> Result<PolicyDims, ConfigError> {
        let m = &self.model;
        let dims = PolicyDims {
            vocab_size: m.vocab_size,
            context_window: m.context_window,
            embed_dim: m.embed_dim,
        };
        dims.validate().map_err(invalid)?;
        Ok(dims)
    }

    /// Generator settings; the corpus seed is derived from `train.seed`.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, ConfigError> {
        let spec = SyntheticSpec {
            n_pairs: self.data.synthetic_pairs,
            vocab_size: self.model.vocab_size,
            max_len: self.data.max_len,
            seed: derive_seed(self.train.seed, Stream::Data),
            style_permille: self.data.style_permille,
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }

    /// Checks every section that a command may use.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train_config()?;
        self.slime_hp()?;
        self.baseline_hp()?;
        self.dims()?;
        if self.data.path.is_none() {
            self.synthetic_spec()?;
        }
        let g = &self.gradcheck;
        if g.n_points == 0 || g.n_probes == 0 || g.probe_pairs == 0 {
            return Err(ConfigError::Invalid(
                "gradcheck.n_points, n_probes and probe_pairs must be at least 1".into(),
            ));
        }
        if !(g.component_tolerance > 0.0 && g.probe_tolerance > 0.0) {
            return Err(ConfigError::Invalid("gradcheck tolerances must be positive".into()));
        }
        Ok(())
    }
}

fn invalid(e: slime_core::Error) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.slime_hp().unwrap(), SlimeHyperParams::default());
        assert_eq!(c.baseline_hp().unwrap(), BaselineHyperParams::default());
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.data.path = Some("pairs.jsonl".into());
        c.slime.p = 3.0;
        let text = c.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn key_table_matches_the_structs() {
        let mut c = RunConfig::default();
        c.data.path = Some(String::new());
        c.output.dir = Some(String::new());
        let table = toml::Value::try_from(&c).unwrap();
        let table = table.as_table().unwrap();
        let mut from_struct: Vec<String> = table
            .iter()
            .flat_map(|(s, v)| {
                v.as_table()
                    .unwrap()
                    .keys()
                    .map(move |k| format!("{s}.{k}"))
            })
            .collect();
        let mut listed: Vec<String> = KEYS
            .iter()
            .flat_map(|(s, keys)| keys.iter().map(move |k| format!("{s}.{k}")))
            .collect();
        from_struct.sort();
        listed.sort();
        assert_eq!(from_struct, listed);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml_str("[slime]\nlambda_x = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("lambda_x"), "{err}");
        let err = RunConfig::from_toml_str("[nope]\n").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
        let err = RunConfig::default()
            .apply_set_args(&["frobnicate=1".into()])
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "frobnicate"));
        assert!(matches!(
            RunConfig::default().apply_set_args(&["slime.seed=1".into()]),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_set_args(&[
            "p=3.0".into(),
            "train.objective=dpo".into(),
            "enable_hard=false".into(),
            "data.path=corpus.jsonl".into(),
            "seed=7".into(),
        ])
        .unwrap();
        assert_eq!(c.slime.p, 3.0);
        assert_eq!(c.train.objective, "dpo");
        assert!(!c.slime.enable_hard);
        assert_eq!(c.data.path.as_deref(), Some("corpus.jsonl"));
        assert_eq!(c.train.seed, 7);
        assert!(c.to_toml_string().contains("p = 3.0"));
        // integer literal for a float key
        c.apply_set_args(&["kappa=3".into()]).unwrap();
        assert_eq!(c.slime.kappa, 3.0);
    }

    #[test]
    fn bad_overrides() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.apply_set_args(&["p".into()]),
            Err(ConfigError::MalformedOverride(_))
        ));
        assert!(matches!(
            c.apply_set_args(&["batch_size=big".into()]),
            Err(ConfigError::Parse(_))
        ));
        c.apply_set_args(&["objective=ppo".into()]).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.model.embed_dim = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.slime.kappa = -1.0;
        assert!(c.validate().is_err());
    }
}
