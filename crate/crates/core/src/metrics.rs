//! Round-wise metrics over participating clients, the best-accuracy table,
//! and their CSV forms.
//!
//! CSV values are serialized with 6 decimal places; full precision is kept
//! in memory. Optional diagnostics serialize as empty fields.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One participating client's results for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub client_id: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Angle between local and global updates; present iff the
    /// personalization step ran for this client this round.
    pub theta: Option<f64>,
    /// Aggregation weight; present iff personalization ran.
    pub beta: Option<f64>,
}

/// Per-round aggregate over the sampled clients.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub records: Vec<ClientRecord>,
    pub avg_train_loss: f64,
    pub avg_test_accuracy: f64,
}

impl RoundMetrics {
    pub fn sampled_ids(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.client_id).collect()
    }
}

/// Validate per-client results and compute their round averages.
pub fn record_round(round: u64, records: Vec<ClientRecord>) -> Result<RoundMetrics> {
    if records.is_empty() {
        return Err(Error::Protocol(format!("round {round} sampled no clients")));
    }
    for r in &records {
        let diag_ok = r.theta.is_none_or(f64::is_finite) && r.beta.is_none_or(f64::is_finite);
        if !r.train_loss.is_finite() || !r.test_accuracy.is_finite() || !diag_ok {
            return Err(Error::Numerical(format!(
                "non-finite metric at round {round}, client {}",
                r.client_id
            )));
        }
    }
    let n = records.len() as f64;
    let avg_train_loss = records.iter().map(|r| r.train_loss).sum::<f64>() / n;
    let avg_test_accuracy = records.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
    Ok(RoundMetrics {
        round,
        records,
        avg_train_loss,
        avg_test_accuracy,
    })
}

/// Per-client best test accuracy over the rounds in which the client was
/// sampled; clients never sampled are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BestAccuracyTable {
    best: BTreeMap<usize, f64>,
}

impl BestAccuracyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, metrics: &RoundMetrics) {
        for r in &metrics.records {
            let entry = self.best.entry(r.client_id).or_insert(f64::NEG_INFINITY);
            if r.test_accuracy > *entry {
                *entry = r.test_accuracy;
            }
        }
    }

    pub fn get(&self, client_id: usize) -> Option<f64> {
        self.best.get(&client_id).copied()
    }

    pub fn per_client(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.best.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    /// Mean of per-client bests over the clients ever sampled.
    pub fn overall(&self) -> Option<f64> {
        if self.best.is_empty() {
            None
        } else {
            Some(self.best.values().sum::<f64>() / self.best.len() as f64)
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Per-client rows: `round,client_id,train_loss,test_accuracy,theta,beta`.
pub fn metrics_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from("round,client_id,train_loss,test_accuracy,theta,beta\n");
    for m in rounds {
        for r in &m.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.round,
                r.client_id,
                fmt(r.train_loss),
                fmt(r.test_accuracy),
                fmt_opt(r.theta),
                fmt_opt(r.beta),
            ));
        }
    }
    out
}

/// Round rows: `round,avg_train_loss,avg_test_accuracy`.
pub fn summary_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from("round,avg_train_loss,avg_test_accuracy\n");
    for m in rounds {
        out.push_str(&format!(
            "{},{},{}\n",
            m.round,
            fmt(m.avg_train_loss),
            fmt(m.avg_test_accuracy)
        ));
    }
    out
}

/// `client_id,best_accuracy` rows plus a final `__overall__` row.
pub fn best_csv(table: &BestAccuracyTable) -> String {
    let mut out = String::from("client_id,best_accuracy\n");
    for (id, best) in table.per_client() {
        out.push_str(&format!("{id},{}\n", fmt(best)));
    }
    if let Some(overall) = table.overall() {
        out.push_str(&format!("__overall__,{}\n", fmt(overall)));
    }
    out
}

fn parse_f64(cell: &str, line: usize) -> Result<f64> {
    cell.parse().map_err(|_| Error::Format {
        line,
        reason: format!("unparsable number `{cell}`"),
    })
}

fn parse_opt_f64(cell: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, line).map(Some)
    }
}

fn expect_header(text: &str, want: &str) -> Result<()> {
    match text.lines().next() {
        Some(h) if h == want => Ok(()),
        other => Err(Error::Format {
            line: 1,
            reason: format!("expected header `{want}`, found {other:?}"),
        }),
    }
}

/// Re-ingest [`metrics_csv`] output.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    expect_header(text, "round,client_id,train_loss,test_accuracy,theta,beta")?;
    let mut grouped: Vec<(u64, Vec<ClientRecord>)> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::Format {
                line: line_no,
                reason: format!("expected 6 fields, found {}", cells.len()),
            });
        }
        let round: u64 = cells[0].parse().map_err(|_| Error::Format {
            line: line_no,
            reason: format!("unparsable round `{}`", cells[0]),
        })?;
        let record = ClientRecord {
            client_id: cells[1].parse().map_err(|_| Error::Format {
                line: line_no,
                reason: format!("unparsable client id `{}`", cells[1]),
            })?,
            train_loss: parse_f64(cells[2], line_no)?,
            test_accuracy: parse_f64(cells[3], line_no)?,
            theta: parse_opt_f64(cells[4], line_no)?,
            beta: parse_opt_f64(cells[5], line_no)?,
        };
        match grouped.last_mut() {
            Some((r, records)) if *r == round => records.push(record),
            _ => grouped.push((round, vec![record])),
        }
    }
    grouped
        .into_iter()
        .map(|(round, records)| record_round(round, records))
        .collect()
}

/// Re-ingest [`best_csv`] output; the `__overall__` row is recomputed, not
/// stored.
pub fn parse_best_csv(text: &str) -> Result<BestAccuracyTable> {
    expect_header(text, "client_id,best_accuracy")?;
    let mut table = BestAccuracyTable::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 {
            return Err(Error::Format {
                line: line_no,
                reason: format!("expected 2 fields, found {}", cells.len()),
            });
        }
        if cells[0] == "__overall__" {
            continue;
        }
        let id: usize = cells[0].parse().map_err(|_| Error::Format {
            line: line_no,
            reason: format!("unparsable client id `{}`", cells[0]),
        })?;
        table.best.insert(id, parse_f64(cells[1], line_no)?);
    }
    Ok(table)
}
