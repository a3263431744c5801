//! Flat `key = value` experiment configuration with dotted sub-keys,
//! defaults, env-var overrides and an exact serialize/parse round trip.
//!
//! Unknown keys, missing required keys and range violations are reported
//! with the offending key's name. Any key can be overridden through the
//! environment as `PFEDSOP_<KEY>` with dots replaced by underscores and
//! letters uppercased (e.g. `PFEDSOP_PARTITION_ALPHA=0.5`).

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::fedcore::{EvalPoint, HyperParams, Method};
use crate::models::{ModelKind, ModelSpec};

pub const ENV_PREFIX: &str = "PFEDSOP_";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        input_dim: usize,
        samples_per_class: usize,
        class_separation: f64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionConfig {
    Dirichlet { alpha: f64 },
    Pathological { shard_size: usize, shards_per_client: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.kind {
            ModelKind::LogisticRegression => ModelSpec::logistic_regression(input_dim, num_classes),
            ModelKind::Mlp => ModelSpec::mlp(input_dim, self.hidden_dim, num_classes),
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub clients: usize,
    pub participation_fraction: f64,
    pub rounds: u64,
    pub model: ModelConfig,
    pub eta1: f64,
    pub eta2: f64,
    pub rho: f64,
    pub lambda: f64,
    pub mu: f64,
    pub ft_epochs: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub eval_point: EvalPoint,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            method: self.method,
            eta1: self.eta1,
            eta2: self.eta2,
            rho: self.rho,
            lambda: self.lambda,
            mu: self.mu,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            participation_fraction: self.participation_fraction,
            rounds: self.rounds,
            ft_epochs: self.ft_epochs,
            eval_point: self.eval_point,
            seed: self.seed,
        }
    }

    /// Non-fatal advisories (e.g. rho far from eta1).
    pub fn warnings(&self) -> Vec<String> {
        self.hyper_params().validate().unwrap_or_default()
    }
}

const KNOWN_KEYS: &[&str] = &[
    "method",
    "dataset.kind",
    "dataset.path",
    "dataset.classes",
    "dataset.input_dim",
    "dataset.samples_per_class",
    "dataset.class_separation",
    "partition.kind",
    "partition.alpha",
    "partition.shard_size",
    "partition.shards_per_client",
    "clients",
    "participation_fraction",
    "rounds",
    "model.kind",
    "model.hidden_dim",
    "eta1",
    "eta2",
    "rho",
    "lambda",
    "mu",
    "ft_epochs",
    "batch_size",
    "local_epochs",
    "eval_point",
    "seed",
    "output_dir",
];

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

struct Raw {
    pairs: BTreeMap<String, String>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(key, "required key is missing"))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::config(key, format!("unparsable value `{raw}`"))),
        }
    }

    fn parse_req<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|_| Error::config(key, format!("unparsable value `{raw}`")))
    }
}

fn split_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Format {
            line: idx + 1,
            reason: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(key, "unknown key"));
        }
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::config(key, "duplicate key"));
        }
    }
    Ok(pairs)
}

/// Overlay `PFEDSOP_*` environment variables onto parsed pairs.
pub fn apply_env_overrides(
    pairs: &mut BTreeMap<String, String>,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let by_env: BTreeMap<String, &str> = KNOWN_KEYS
        .iter()
        .map(|k| (env_name(k), *k))
        .collect();
    for (name, value) in vars {
        if let Some(stripped) = name.strip_prefix(ENV_PREFIX) {
            let full = format!("{ENV_PREFIX}{stripped}");
            match by_env.get(&full) {
                Some(key) => {
                    pairs.insert((*key).to_string(), value);
                }
                None => {
                    return Err(Error::config(
                        name,
                        "environment override does not match any config key",
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Parse config text (after any env overlay) into a fully defaulted,
/// range-checked [`ExperimentConfig`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_env(text, std::iter::empty())
}

pub fn parse_config_with_env(
    text: &str,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<ExperimentConfig> {
    let mut pairs = split_pairs(text)?;
    apply_env_overrides(&mut pairs, vars)?;
    build(&Raw { pairs })
}

fn build(raw: &Raw) -> Result<ExperimentConfig> {
    let method_raw = raw.required("method")?;
    let method = Method::parse(method_raw)
        .ok_or_else(|| Error::config("method", format!("unknown method `{method_raw}`")))?;

    let dataset = match raw.required("dataset.kind")? {
        "synthetic" => DatasetConfig::Synthetic {
            classes: raw.parse_or("dataset.classes", 10)?,
            input_dim: raw.parse_or("dataset.input_dim", 20)?,
            samples_per_class: raw.parse_or("dataset.samples_per_class", 200)?,
            class_separation: raw.parse_or("dataset.class_separation", 3.0)?,
        },
        "csv" => DatasetConfig::Csv {
            path: PathBuf::from(raw.required("dataset.path")?),
        },
        other => {
            return Err(Error::config(
                "dataset.kind",
                format!("expected `synthetic` or `csv`, got `{other}`"),
            ))
        }
    };

    let partition = match raw.get("partition.kind").unwrap_or("dirichlet") {
        "dirichlet" => PartitionConfig::Dirichlet {
            alpha: raw.parse_or("partition.alpha", 0.07)?,
        },
        "pathological" => PartitionConfig::Pathological {
            shard_size: raw.parse_req("partition.shard_size")?,
            shards_per_client: raw.parse_or("partition.shards_per_client", 2)?,
        },
        other => {
            return Err(Error::config(
                "partition.kind",
                format!("expected `dirichlet` or `pathological`, got `{other}`"),
            ))
        }
    };

    let model = {
        let kind = match raw.get("model.kind").unwrap_or("logistic_regression") {
            "logistic_regression" => ModelKind::LogisticRegression,
            "mlp" => ModelKind::Mlp,
            other => {
                return Err(Error::config(
                    "model.kind",
                    format!("expected `logistic_regression` or `mlp`, got `{other}`"),
                ))
            }
        };
        let hidden_dim = raw.parse_or("model.hidden_dim", 32)?;
        if kind == ModelKind::Mlp && hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be >= 1 for mlp"));
        }
        ModelConfig { kind, hidden_dim }
    };

    let eval_point_raw: String = raw.parse_or("eval_point", "personalized".to_string())?;
    let eval_point = EvalPoint::parse(&eval_point_raw).ok_or_else(|| {
        Error::config(
            "eval_point",
            format!("expected `personalized` or `post_sgd`, got `{eval_point_raw}`"),
        )
    })?;

    let config = ExperimentConfig {
        method,
        dataset,
        partition,
        clients: raw.parse_req("clients")?,
        participation_fraction: raw.parse_or("participation_fraction", 0.2)?,
        rounds: raw.parse_req("rounds")?,
        model,
        eta1: raw.parse_or("eta1", 1.0)?,
        eta2: raw.parse_or("eta2", 0.1)?,
        rho: raw.parse_or("rho", 1.0)?,
        lambda: raw.parse_or("lambda", 1.0)?,
        mu: raw.parse_or("mu", 0.1)?,
        ft_epochs: raw.parse_or("ft_epochs", 1)?,
        batch_size: raw.parse_or("batch_size", 50)?,
        local_epochs: raw.parse_or("local_epochs", 1)?,
        eval_point,
        seed: raw.parse_or("seed", 0)?,
        output_dir: PathBuf::from(raw.get("output_dir").unwrap_or("out")),
    };
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    // HyperParams carries most range constraints; rename its parameter
    // errors to config-key errors so the CLI reports the offending key.
    if let Err(Error::Parameter { name, reason }) = config.hyper_params().validate() {
        return Err(Error::config(name, reason));
    }
    if config.clients == 0 {
        return Err(Error::config("clients", "must be >= 1"));
    }
    match &config.dataset {
        DatasetConfig::Synthetic {
            classes,
            input_dim,
            samples_per_class,
            class_separation,
        } => {
            if *classes < 2 {
                return Err(Error::config("dataset.classes", "must be >= 2"));
            }
            if *input_dim == 0 {
                return Err(Error::config("dataset.input_dim", "must be >= 1"));
            }
            if *samples_per_class == 0 {
                return Err(Error::config("dataset.samples_per_class", "must be >= 1"));
            }
            if !(class_separation.is_finite() && *class_separation >= 0.0) {
                return Err(Error::config("dataset.class_separation", "must be >= 0"));
            }
        }
        DatasetConfig::Csv { path } => {
            if path.as_os_str().is_empty() {
                return Err(Error::config("dataset.path", "must not be empty"));
            }
        }
    }
    match &config.partition {
        PartitionConfig::Dirichlet { alpha } => {
            if !(alpha.is_finite() && *alpha > 0.0) {
                return Err(Error::config("partition.alpha", "must be > 0"));
            }
        }
        PartitionConfig::Pathological {
            shard_size,
            shards_per_client,
        } => {
            if *shard_size == 0 {
                return Err(Error::config("partition.shard_size", "must be >= 1"));
            }
            if *shards_per_client == 0 {
                return Err(Error::config("partition.shards_per_client", "must be >= 1"));
            }
        }
    }
    Ok(())
}

/// Canonical text form: every key explicit, in a fixed order; parses back
/// to an equal config.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    push("method", config.method.as_str().to_string());
    match &config.dataset {
        DatasetConfig::Synthetic {
            classes,
            input_dim,
            samples_per_class,
            class_separation,
        } => {
            push("dataset.kind", "synthetic".into());
            push("dataset.classes", classes.to_string());
            push("dataset.input_dim", input_dim.to_string());
            push("dataset.samples_per_class", samples_per_class.to_string());
            push("dataset.class_separation", class_separation.to_string());
        }
        DatasetConfig::Csv { path } => {
            push("dataset.kind", "csv".into());
            push("dataset.path", path.display().to_string());
        }
    }
    match &config.partition {
        PartitionConfig::Dirichlet { alpha } => {
            push("partition.kind", "dirichlet".into());
            push("partition.alpha", alpha.to_string());
        }
        PartitionConfig::Pathological {
            shard_size,
            shards_per_client,
        } => {
            push("partition.kind", "pathological".into());
            push("partition.shard_size", shard_size.to_string());
            push("partition.shards_per_client", shards_per_client.to_string());
        }
    }
    push("clients", config.clients.to_string());
    push(
        "participation_fraction",
        config.participation_fraction.to_string(),
    );
    push("rounds", config.rounds.to_string());
    push(
        "model.kind",
        match config.model.kind {
            ModelKind::LogisticRegression => "logistic_regression".into(),
            ModelKind::Mlp => "mlp".to_string(),
        },
    );
    push("model.hidden_dim", config.model.hidden_dim.to_string());
    push("eta1", config.eta1.to_string());
    push("eta2", config.eta2.to_string());
    push("rho", config.rho.to_string());
    push("lambda", config.lambda.to_string());
    push("mu", config.mu.to_string());
    push("ft_epochs", config.ft_epochs.to_string());
    push("batch_size", config.batch_size.to_string());
    push("local_epochs", config.local_epochs.to_string());
    push("eval_point", config.eval_point.as_str().to_string());
    push("seed", config.seed.to_string());
    push("output_dir", config.output_dir.display().to_string());
    out
}
