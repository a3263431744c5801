//! Dataset synthesis and ingestion, heterogeneous partitioning across
//! clients, and per-client train/test splitting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::numkit::{dirichlet_draw, RngStream};

/// In-memory labeled dataset: `len x input_dim` features (row-major) plus
/// class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("dataset must contain at least one sample".into()));
        }
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Data(format!(
                "dataset shape mismatch: {} values, {} labels, input_dim {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            input_dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Dense batch assembled from the given sample indices.
    pub fn batch(&self, rows: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(rows.len() * self.input_dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Batch::new(inputs, labels, self.input_dim).expect("indices within dataset")
    }
}

/// Per-client lists of sample indices; disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
}

/// Per-client train/test index split of a [`PartitionPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub clients: Vec<TrainTestSplit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Gaussian blobs: one class mean per class drawn uniformly on a sphere of
/// radius `class_separation`, unit covariance around each mean. Samples are
/// laid out class-major (all of class 0 first).
pub fn synthesize_classification(
    num_classes: usize,
    input_dim: usize,
    samples_per_class: usize,
    class_separation: f64,
    rng: &mut RngStream,
) -> Result<LabeledDataset> {
    if num_classes == 0 || input_dim == 0 || samples_per_class == 0 {
        return Err(Error::parameter(
            "synthesize_classification",
            "num_classes, input_dim and samples_per_class must all be >= 1",
        ));
    }
    if !(class_separation.is_finite() && class_separation >= 0.0) {
        return Err(Error::parameter(
            "class_separation",
            format!("must be finite and >= 0, got {class_separation}"),
        ));
    }
    let n = num_classes * samples_per_class;
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let mut mean: Vec<f64> = (0..input_dim).map(|_| rng.normal()).collect();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for m in &mut mean {
                *m *= class_separation / norm;
            }
        } else {
            mean.iter_mut().for_each(|m| *m = 0.0);
            mean[0] = class_separation;
        }
        for _ in 0..samples_per_class {
            for m in &mean {
                inputs.push(m + rng.normal());
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(inputs, labels, input_dim, num_classes)
}

/// Load `label,f1,...,fD` rows. A header line is detected by a non-numeric
/// first cell and skipped; field count must be constant across rows.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<LabeledDataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let first_parses = cells[0].parse::<f64>().is_ok();
        if !first_parses {
            if labels.is_empty() && width.is_none() {
                // Header row.
                continue;
            }
            return Err(Error::Format {
                line: line_no,
                reason: format!("unparsable label cell `{}`", cells[0]),
            });
        }
        if cells.len() < 2 {
            return Err(Error::Format {
                line: line_no,
                reason: "row needs a label and at least one feature".into(),
            });
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Format {
                    line: line_no,
                    reason: format!("expected {w} fields, found {}", cells.len()),
                });
            }
            _ => {}
        }
        let label_value: f64 = cells[0].parse().expect("checked above");
        if label_value < 0.0 || label_value.fract() != 0.0 {
            return Err(Error::Format {
                line: line_no,
                reason: format!("label must be a nonnegative integer, got `{}`", cells[0]),
            });
        }
        labels.push(label_value as usize);
        for cell in &cells[1..] {
            let value: f64 = cell.parse().map_err(|_| Error::Format {
                line: line_no,
                reason: format!("unparsable feature cell `{cell}`"),
            })?;
            inputs.push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::Format {
            line: 1,
            reason: "file contains no data rows".into(),
        });
    }
    let input_dim = width.unwrap() - 1;
    let class_count = labels.iter().max().unwrap() + 1;
    LabeledDataset::new(inputs, labels, input_dim, class_count)
}

/// Split `total` into integer counts proportional to `weights` using
/// largest-remainder rounding (ties toward the lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(weights.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let quota = w * total as f64;
        let base = quota.floor() as usize;
        counts.push(base);
        assigned += base;
        fracs.push((quota - base as f64, i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut remaining = total.saturating_sub(assigned);
    for (_, i) in fracs {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Class-wise Dirichlet partition: for each class, client shares are drawn
/// from Dir(alpha * 1_K) and that class's shuffled samples are dealt out in
/// proportion. Clients left empty receive one sample moved from the
/// currently largest client.
pub fn dirichlet_partition(
    ds: &LabeledDataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::parameter("clients", "must be >= 1"));
    }
    if alpha <= 0.0 {
        return Err(Error::parameter("alpha", format!("must be > 0, got {alpha}")));
    }
    if ds.len() < num_clients {
        return Err(Error::Data(format!(
            "{} samples cannot cover {} clients",
            ds.len(),
            num_clients
        )));
    }
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..ds.class_count() {
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        if rows.is_empty() {
            continue;
        }
        rng.shuffle(&mut rows);
        let shares = dirichlet_draw(alpha, num_clients, rng)?;
        let counts = largest_remainder(&shares, rows.len());
        let mut cursor = 0;
        for (client, count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&rows[cursor..cursor + count]);
            cursor += count;
        }
    }
    // Repair clients that ended up empty (common at small N with tiny alpha).
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let donor = assignments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if assignments[donor].len() <= 1 {
            return Err(Error::Data(
                "cannot repair empty client: no donor with more than one sample".into(),
            ));
        }
        let moved = assignments[donor].pop().unwrap();
        assignments[empty].push(moved);
    }
    Ok(PartitionPlan { assignments })
}

/// Label-sorted shard partition: cut the label-sorted index order into
/// `floor(N / shard_size)` shards (remainder dropped), shuffle the shards
/// and deal `shards_per_client` to each client.
pub fn pathological_partition(
    ds: &LabeledDataset,
    num_clients: usize,
    shard_size: usize,
    shards_per_client: usize,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::parameter("clients", "must be >= 1"));
    }
    if shard_size == 0 {
        return Err(Error::parameter("shard_size", "must be >= 1"));
    }
    if shards_per_client == 0 {
        return Err(Error::parameter("shards_per_client", "must be >= 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.labels()[i], i));
    let shard_count = ds.len() / shard_size;
    let needed = num_clients * shards_per_client;
    if shard_count < needed {
        return Err(Error::Data(format!(
            "infeasible partition: {shard_count} shards of size {shard_size} \
             cannot serve {num_clients} clients x {shards_per_client} shards"
        )));
    }
    let mut shard_ids: Vec<usize> = (0..shard_count).collect();
    rng.shuffle(&mut shard_ids);
    let mut assignments = Vec::with_capacity(num_clients);
    for client in 0..num_clients {
        let mut rows = Vec::with_capacity(shards_per_client * shard_size);
        for s in 0..shards_per_client {
            let shard = shard_ids[client * shards_per_client + s];
            rows.extend_from_slice(&order[shard * shard_size..(shard + 1) * shard_size]);
        }
        assignments.push(rows);
    }
    Ok(PartitionPlan { assignments })
}

/// Uniform per-client shuffle followed by a `ratio` train split
/// (`round(ratio * n)` train samples, always leaving at least one test
/// sample). Index lists are returned sorted.
pub fn split_train_test(
    plan: &PartitionPlan,
    ratio: f64,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::parameter(
            "ratio",
            format!("must lie in (0, 1), got {ratio}"),
        ));
    }
    let mut clients = Vec::with_capacity(plan.assignments.len());
    for (client, assignment) in plan.assignments.iter().enumerate() {
        let n = assignment.len();
        if n < 2 {
            return Err(Error::Data(format!(
                "client {client} has {n} samples; need at least 2 to split"
            )));
        }
        let mut rows = assignment.clone();
        rng.shuffle(&mut rows);
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        let mut train = rows[..n_train].to_vec();
        let mut test = rows[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        clients.push(TrainTestSplit { train, test });
    }
    Ok(SplitPlan { clients })
}
