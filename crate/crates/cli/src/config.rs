//! Flat TOML run configuration. Every key mirrors a command-line flag
//! (dashes become underscores); flags win over the file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use revprobe_core::classifier::GbdtParams;
use revprobe_core::dump::{effect_strength, DType, LogitEncoding, LogitSpec, SynthConfig};
use revprobe_core::FeatureConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dump: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub feature_config: Option<String>,
    pub wordlist: Option<PathBuf>,
    pub folds: Option<usize>,
    pub train_ratio: Option<f64>,
    pub formats: Option<Vec<String>>,
    pub baselines: Option<Vec<String>>,

    pub docs: Option<usize>,
    pub tokens: Option<usize>,
    pub planted_rate: Option<f64>,
    pub effect: Option<String>,
    pub vocab_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub bhc_fraction: Option<f64>,
    pub logits: Option<String>,
    pub top_k: Option<usize>,
    pub logit_dtype: Option<String>,
    pub prior: Option<bool>,
    pub ner: Option<bool>,
    pub hidden_raw: Option<bool>,
    pub schedule: Option<String>,

    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub min_child_weight: Option<f64>,
    pub lambda: Option<f64>,
    pub positive_class_weight: Option<f64>,
    pub subsample: Option<f64>,
    pub colsample: Option<f64>,
    pub max_bins: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn parse_dtype(s: &str) -> anyhow::Result<DType> {
    match s.to_ascii_lowercase().as_str() {
        "f16" => Ok(DType::F16),
        "f32" => Ok(DType::F32),
        _ => anyhow::bail!("unknown logit dtype `{s}` (expected f16 or f32)"),
    }
}

fn parse_encoding(s: &str) -> anyhow::Result<LogitEncoding> {
    match s.to_ascii_lowercase().as_str() {
        "full" => Ok(LogitEncoding::Full),
        "topk" => Ok(LogitEncoding::Topk),
        _ => anyhow::bail!("unknown logit encoding `{s}` (expected full or topk)"),
    }
}

pub fn feature_config(flag: Option<&str>, file: &FileConfig) -> anyhow::Result<FeatureConfig> {
    let name = flag.or(file.feature_config.as_deref()).unwrap_or("f93");
    Ok(name.parse()?)
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Number of documents
    #[arg(long)]
    pub docs: Option<usize>,
    /// Context tokens per document (source record plus summary)
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Target fraction of positive summary tokens
    #[arg(long)]
    pub planted_rate: Option<f64>,
    /// none, weak, moderate, strong or a non-negative number
    #[arg(long)]
    pub effect: Option<String>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub bhc_fraction: Option<f64>,
    /// full or topk
    #[arg(long)]
    pub logits: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// f16 or f32
    #[arg(long)]
    pub logit_dtype: Option<String>,
    /// Omit the prior pass
    #[arg(long)]
    pub no_prior: bool,
    /// Omit ner.json
    #[arg(long)]
    pub no_ner: bool,
    /// Store hidden summaries only
    #[arg(long)]
    pub no_hidden_raw: bool,
    /// Store the layers and heads of this configuration only
    #[arg(long)]
    pub schedule: Option<String>,
}

impl SynthArgs {
    pub fn resolve(&self, file: &FileConfig, seed: u64) -> anyhow::Result<SynthConfig> {
        let d = SynthConfig::default();
        let flag_off = |set: bool| if set { Some(false) } else { None };
        let encoding = match self.logits.as_deref().or(file.logits.as_deref()) {
            Some(s) => parse_encoding(s)?,
            None => LogitEncoding::Full,
        };
        let dtype = match self.logit_dtype.as_deref().or(file.logit_dtype.as_deref()) {
            Some(s) => parse_dtype(s)?,
            None => d.logits.dtype,
        };
        let top_k = self.top_k.or(file.top_k);
        let top_k = match encoding {
            LogitEncoding::Topk => Some(top_k.unwrap_or(20)),
            LogitEncoding::Full => top_k,
        };
        let effect = match self.effect.as_deref().or(file.effect.as_deref()) {
            Some(s) => effect_strength(s)?,
            None => d.effect_strength,
        };
        let schedule = match self.schedule.as_deref().or(file.schedule.as_deref()) {
            Some(s) => Some(s.parse::<FeatureConfig>()?),
            None => None,
        };
        let cfg = SynthConfig {
            n_docs: self.docs.or(file.docs).unwrap_or(d.n_docs),
            tokens_per_doc: self.tokens.or(file.tokens).unwrap_or(d.tokens_per_doc),
            vocab_size: self.vocab_size.or(file.vocab_size).unwrap_or(d.vocab_size),
            hidden_dim: self.hidden_dim.or(file.hidden_dim).unwrap_or(d.hidden_dim),
            n_layers: self.layers.or(file.layers).unwrap_or(d.n_layers),
            n_heads: self.heads.or(file.heads).unwrap_or(d.n_heads),
            planted_rate: self.planted_rate.or(file.planted_rate).unwrap_or(d.planted_rate),
            effect_strength: effect,
            seed,
            bhc_fraction: self.bhc_fraction.or(file.bhc_fraction).unwrap_or(d.bhc_fraction),
            logits: LogitSpec { encoding, dtype, top_k },
            prior: flag_off(self.no_prior).or(file.prior).unwrap_or(d.prior),
            schedule,
            hidden_raw: flag_off(self.no_hidden_raw).or(file.hidden_raw).unwrap_or(d.hidden_raw),
            ner: flag_off(self.no_ner).or(file.ner).unwrap_or(d.ner),
            ..d
        };
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClassifierArgs {
    /// Boosting rounds
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_child_weight: Option<f64>,
    /// L2 penalty on leaf values
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of positive rows; defaults to #negative / #positive
    #[arg(long)]
    pub positive_class_weight: Option<f64>,
    #[arg(long)]
    pub subsample: Option<f64>,
    #[arg(long)]
    pub colsample: Option<f64>,
    #[arg(long)]
    pub max_bins: Option<usize>,
}

impl ClassifierArgs {
    pub fn resolve(&self, file: &FileConfig, seed: u64) -> anyhow::Result<GbdtParams> {
        let d = GbdtParams::default();
        let p = GbdtParams {
            n_trees: self.trees.or(file.trees).unwrap_or(d.n_trees),
            max_depth: self.max_depth.or(file.max_depth).unwrap_or(d.max_depth),
            learning_rate: self.learning_rate.or(file.learning_rate).unwrap_or(d.learning_rate),
            min_child_weight: self.min_child_weight.or(file.min_child_weight).unwrap_or(d.min_child_weight),
            lambda: self.lambda.or(file.lambda).unwrap_or(d.lambda),
            positive_class_weight: self.positive_class_weight.or(file.positive_class_weight),
            subsample: self.subsample.or(file.subsample).unwrap_or(d.subsample),
            colsample: self.colsample.or(file.colsample).unwrap_or(d.colsample),
            max_bins: self.max_bins.or(file.max_bins).unwrap_or(d.max_bins),
            seed,
        };
        p.check()?;
        Ok(p)
    }
}
