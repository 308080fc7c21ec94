//! Run configuration: defaults, then a TOML file, then `--section.key value`
//! overrides. Unknown keys and invalid values are collected and reported
//! together.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use relex_core::corpus::SynthConfig;
use relex_core::embeddings::TransEConfig;
use relex_core::pipeline::BenchmarkConfig;
use relex_core::selector::SelectMode;
use relex_core::trainer::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub mode: SelectMode,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { mode: SelectMode::Greedy }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Checkpoint whose classifier is evaluated, e.g. `cnn.ckpt.json` for the noisy baseline.
    pub checkpoint: PathBuf,
    /// Leave NA out of the macro-F1 average.
    pub exclude_na: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { checkpoint: PathBuf::from("model.ckpt.json"), exclude_na: false }
    }
}

/// Artifact locations. Relative paths resolve against `out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub triples: PathBuf,
    /// Pretrained word vectors in `name v1 ... vd` text format; empty for seeded random vectors.
    pub word_vectors: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out: PathBuf::from("run"),
            train: PathBuf::from("train.jsonl"),
            valid: PathBuf::from("valid.jsonl"),
            test: PathBuf::from("test.jsonl"),
            triples: PathBuf::from("triples.tsv"),
            word_vectors: PathBuf::new(),
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    /// `out/<name>`.
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Train/validation/test bag ratios for `gen-synth`.
    pub split: [f64; 3],
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub transe: TransEConfig,
    pub select: SelectConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    /// The desk-scale benchmark settings.
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        RunConfig {
            split: b.split,
            synth: b.synth,
            model: b.model,
            train: b.train,
            transe: b.transe,
            select: SelectConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Copy of `given` without keys absent from `known`; those are appended to
/// `unknown` as dotted paths.
fn prune(given: &Table, known: &Table, prefix: &str, unknown: &mut Vec<String>) -> Table {
    let mut kept = Table::new();
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => unknown.push(path),
            (Value::Table(g), Some(Value::Table(kn))) => {
                kept.insert(k.clone(), Value::Table(prune(g, kn, &path, unknown)));
            }
            (v, Some(_)) => {
                kept.insert(k.clone(), v.clone());
            }
        }
    }
    kept
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).with_context(|| format!("empty override key `{key}`"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a section"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Command-line values layered over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub pairs: Vec<(String, String)>,
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for (k, v) in &overrides.pairs {
            set_dotted(&mut table, k, parse_value(v))?;
        }
        if let Some(seed) = overrides.seed {
            let seed = Value::Integer(i64::try_from(seed).context("--seed must fit in a signed 64-bit integer")?);
            for key in ["synth.rng_seed", "train.seed", "transe.seed"] {
                set_dotted(&mut table, key, seed.clone())?;
            }
        }
        if let Some(out) = &overrides.out {
            let out = out.to_str().context("--out must be valid UTF-8")?;
            set_dotted(&mut table, "paths.out", Value::String(out.into()))?;
        }
        Self::from_table(table)
    }

    /// Deserializes section by section so that every bad section is reported.
    pub fn from_table(table: Table) -> Result<Self> {
        let known = Table::try_from(RunConfig::default()).context("serializing defaults")?;
        let mut problems = Vec::new();
        let mut unknown = Vec::new();
        let table = prune(&table, &known, "", &mut unknown);
        problems.extend(unknown.into_iter().map(|k| format!("unknown key `{k}`")));

        let mut merged = known;
        for (k, v) in table {
            let mut single = Table::new();
            single.insert(k.clone(), v.clone());
            if let Err(e) = single.try_into::<RunConfig>() {
                problems.push(format!("`{k}`: {}", e.message().trim()));
            }
            merge(&mut merged, &k, v);
        }
        if !problems.is_empty() {
            bail!("invalid configuration:\n  {}", problems.join("\n  "));
        }
        let cfg: RunConfig = merged.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if let Err(e) = self.synth.validate() {
            p.push(format!("synth: {e}"));
        }
        p.extend(self.model.problems());
        p.extend(self.train.problems());
        if self.split.iter().any(|r| !r.is_finite() || *r < 0.0) || self.split.iter().sum::<f64>() <= 0.0 {
            p.push("split ratios must be non-negative with a positive sum".into());
        }
        if self.transe.dim != self.model.entity_dim {
            p.push(format!(
                "transe.dim ({}) must equal model.entity_dim ({})",
                self.transe.dim, self.model.entity_dim
            ));
        }
        if self.transe.dim == 0 {
            p.push("transe.dim must be positive".into());
        }
        if self.transe.margin.is_nan() || self.transe.margin <= 0.0 {
            p.push("transe.margin must be positive".into());
        }
        if self.transe.neg_per_pos == 0 {
            p.push("transe.neg_per_pos must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", p.join("\n  "))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing configuration")
    }
}

/// Recursive merge of `value` into `base[key]`; tables merge, leaves replace.
fn merge(base: &mut Table, key: &str, value: Value) {
    match (base.get_mut(key), value) {
        (Some(Value::Table(b)), Value::Table(v)) => {
            for (k, x) in v {
                merge(b, &k, x);
            }
        }
        (_, v) => {
            base.insert(key.to_string(), v);
        }
    }
}
