//! Experiment orchestration: build the dataset/partition/split/model from a
//! config, run the rounds on a bounded thread pool, and write the metrics,
//! summary, best-accuracy and resolved-config files atomically.

use std::path::PathBuf;
use std::sync::Arc;

use crate::config::{serialize_config, DatasetConfig, ExperimentConfig, PartitionConfig};
use crate::data::{
    dirichlet_partition, load_csv, pathological_partition, split_train_test,
    synthesize_classification, SplitPlan,
};
use crate::error::{Error, Result};
use crate::fedcore::{run_experiment, ClassifierObjective, ExperimentOutput};
use crate::metrics::{best_csv, metrics_csv, summary_csv};
use crate::numkit::{ParamVector, RngStream};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BEST_FILE: &str = "best_accuracy.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.cfg";

pub const TRAIN_RATIO: f64 = 0.8;

/// Outputs of a completed run, with the paths that were written.
pub struct RunArtifacts {
    pub output: ExperimentOutput,
    pub files: Vec<PathBuf>,
}

/// Materialize the training problem a config describes.
pub fn build_problem(
    config: &ExperimentConfig,
) -> Result<(ClassifierObjective, SplitPlan, ParamVector)> {
    let dataset = match &config.dataset {
        DatasetConfig::Synthetic {
            classes,
            input_dim,
            samples_per_class,
            class_separation,
        } => {
            let mut rng = RngStream::new(config.seed, "data-synth", 0, 0);
            synthesize_classification(
                *classes,
                *input_dim,
                *samples_per_class,
                *class_separation,
                &mut rng,
            )?
        }
        DatasetConfig::Csv { path } => {
            let ds = load_csv(path)?;
            if ds.class_count() < 2 {
                return Err(Error::Data(format!(
                    "{}: need at least 2 classes, found {}",
                    path.display(),
                    ds.class_count()
                )));
            }
            ds
        }
    };

    let mut partition_rng = RngStream::new(config.seed, "partition", 0, 0);
    let plan = match &config.partition {
        PartitionConfig::Dirichlet { alpha } => {
            dirichlet_partition(&dataset, config.clients, *alpha, &mut partition_rng)?
        }
        PartitionConfig::Pathological {
            shard_size,
            shards_per_client,
        } => pathological_partition(
            &dataset,
            config.clients,
            *shard_size,
            *shards_per_client,
            &mut partition_rng,
        )?,
    };

    let mut split_rng = RngStream::new(config.seed, "split", 0, 0);
    let split = split_train_test(&plan, TRAIN_RATIO, &mut split_rng)?;

    let spec = config.model.spec(dataset.input_dim(), dataset.class_count());
    let mut init_rng = RngStream::new(config.seed, "model-init", 0, 0);
    let init = spec.init_params(&mut init_rng);

    let objective = ClassifierObjective {
        spec,
        data: Arc::new(dataset),
    };
    Ok((objective, split, init))
}

/// Run the configured experiment on `threads` worker threads (0 = one per
/// core) without touching the filesystem. Thread count never changes
/// results.
pub fn run_in_memory(config: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    let (objective, split, init) = build_problem(config)?;
    let h = config.hyper_params();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Protocol(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(&objective, init, &split, &h))
}

fn write_atomic(path: &std::path::Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run and persist: `metrics.csv`, `summary.csv`, `best_accuracy.csv` and
/// the resolved-config echo (every default explicit). Files appear whole or
/// not at all.
pub fn execute(config: &ExperimentConfig, threads: usize) -> Result<RunArtifacts> {
    let output = run_in_memory(config, threads)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let pairs = [
        (METRICS_FILE, metrics_csv(&output.rounds)),
        (SUMMARY_FILE, summary_csv(&output.rounds)),
        (BEST_FILE, best_csv(&output.best)),
        (RESOLVED_CONFIG_FILE, serialize_config(config)),
    ];
    let mut files = Vec::with_capacity(pairs.len());
    for (name, contents) in pairs {
        let path = config.output_dir.join(name);
        write_atomic(&path, &contents)?;
        files.push(path);
    }
    Ok(RunArtifacts { output, files })
}
