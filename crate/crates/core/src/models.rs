//! Small differentiable classifiers over a flat parameter vector:
//! logistic regression and a one-hidden-layer relu MLP, both with
//! softmax cross-entropy loss and hand-derived gradients.
//!
//! Flat parameter layout, in order: `W1` row-major, `b1`, then for the
//! MLP `W2` row-major and `b2`. Logistic regression stores only `W1`
//! (num_classes x input_dim) and `b1` (num_classes).

use crate::error::{Error, Result};
use crate::numkit::{ParamVector, RngStream};

/// Floor applied to predicted probabilities before taking the log, so a
/// saturated wrong prediction yields a large finite loss instead of Inf.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

/// Architecture description; `hidden_dim` is 0 for logistic regression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dim: 0,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self.kind {
            ModelKind::LogisticRegression => self.num_classes * (self.input_dim + 1),
            ModelKind::Mlp => {
                self.hidden_dim * (self.input_dim + 1)
                    + self.num_classes * (self.hidden_dim + 1)
            }
        }
    }

    /// Fresh parameters with every entry of a layer drawn from
    /// uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)) for that layer.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut values = Vec::with_capacity(self.parameter_count());
        let mut fill = |count: usize, fan_in: usize, fan_out: usize, rng: &mut RngStream| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..count {
                values.push(rng.uniform_in(-a, a));
            }
        };
        match self.kind {
            ModelKind::LogisticRegression => {
                let (d, c) = (self.input_dim, self.num_classes);
                fill(c * d, d, c, rng);
                fill(c, d, c, rng);
            }
            ModelKind::Mlp => {
                let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                fill(h * d, d, h, rng);
                fill(h, d, h, rng);
                fill(c * h, h, c, rng);
                fill(c, h, c, rng);
            }
        }
        ParamVector::new(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let want = self.parameter_count();
        if params.len() != want {
            return Err(Error::Dimension {
                left: params.len(),
                right: want,
            });
        }
        Ok(())
    }
}

/// A dense mini-batch: `rows x input_dim` features plus class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::Data(format!(
                "batch shape mismatch: {} values, {} labels, input_dim {}",
                inputs.len(),
                labels.len(),
                input_dim
            )));
        }
        Ok(Self {
            inputs,
            labels,
            input_dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.input_dim..(r + 1) * self.input_dim]
    }
}

struct ForwardPass {
    loss: f64,
    /// rows x num_classes, row-major softmax outputs.
    probs: Vec<f64>,
    /// rows x hidden_dim pre-activations (MLP only).
    pre_act: Vec<f64>,
    /// rows x hidden_dim relu outputs (MLP only).
    hidden: Vec<f64>,
}

fn validate_batch(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    if batch.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if batch.input_dim() != spec.input_dim {
        return Err(Error::Dimension {
            left: batch.input_dim(),
            right: spec.input_dim,
        });
    }
    if batch.inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in batch inputs".into()));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= spec.num_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch, cache: bool) -> Result<ForwardPass> {
    spec.check_params(params)?;
    validate_batch(spec, batch)?;

    let p = params.as_slice();
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let rows = batch.rows();
    let mut probs = vec![0.0; rows * c];
    let mut pre_act = Vec::new();
    let mut hidden = Vec::new();
    if cache && spec.kind == ModelKind::Mlp {
        pre_act = vec![0.0; rows * h];
        hidden = vec![0.0; rows * h];
    }

    let mut loss_sum = 0.0;
    let mut logits = vec![0.0; c];
    let mut act = vec![0.0; h];
    for r in 0..rows {
        let x = batch.row(r);
        match spec.kind {
            ModelKind::LogisticRegression => {
                for (cls, logit) in logits.iter_mut().enumerate() {
                    let w = &p[cls * d..(cls + 1) * d];
                    let mut acc = p[c * d + cls];
                    for (wj, xj) in w.iter().zip(x) {
                        acc += wj * xj;
                    }
                    *logit = acc;
                }
            }
            ModelKind::Mlp => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for k in 0..h {
                    let w = &w1[k * d..(k + 1) * d];
                    let mut acc = b1[k];
                    for (wj, xj) in w.iter().zip(x) {
                        acc += wj * xj;
                    }
                    act[k] = acc;
                }
                if cache {
                    pre_act[r * h..(r + 1) * h].copy_from_slice(&act);
                }
                for v in act.iter_mut() {
                    *v = v.max(0.0);
                }
                if cache {
                    hidden[r * h..(r + 1) * h].copy_from_slice(&act);
                }
                for (cls, logit) in logits.iter_mut().enumerate() {
                    let w = &w2[cls * h..(cls + 1) * h];
                    let mut acc = b2[cls];
                    for (wk, hk) in w.iter().zip(&act) {
                        acc += wk * hk;
                    }
                    *logit = acc;
                }
            }
        }

        // Stabilized softmax: subtract the row max before exponentiating.
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z_sum = 0.0;
        for (cls, logit) in logits.iter().enumerate() {
            let e = (logit - max).exp();
            probs[r * c + cls] = e;
            z_sum += e;
        }
        for cls in 0..c {
            probs[r * c + cls] /= z_sum;
        }
        let py = probs[r * c + batch.labels[r]];
        loss_sum += -(py.max(LOG_PROB_FLOOR)).ln();
    }

    Ok(ForwardPass {
        loss: loss_sum / rows as f64,
        probs,
        pre_act,
        hidden,
    })
}

/// Mean softmax cross-entropy loss over the batch, plus the row-major
/// `rows x num_classes` matrix of class probabilities.
pub fn forward_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let pass = forward(spec, params, batch, false)?;
    Ok((pass.loss, pass.probs))
}

/// Mean loss together with its exact analytic gradient (same flat layout
/// as `params`).
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    let pass = forward(spec, params, batch, true)?;
    let p = params.as_slice();
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let rows = batch.rows();
    let inv_rows = 1.0 / rows as f64;
    let mut grad = vec![0.0; params.len()];

    match spec.kind {
        ModelKind::LogisticRegression => {
            let (gw, gb) = grad.split_at_mut(c * d);
            for r in 0..rows {
                let x = batch.row(r);
                for cls in 0..c {
                    let mut dl = pass.probs[r * c + cls] * inv_rows;
                    if cls == batch.labels[r] {
                        dl -= inv_rows;
                    }
                    let gw_row = &mut gw[cls * d..(cls + 1) * d];
                    for (g, xj) in gw_row.iter_mut().zip(x) {
                        *g += dl * xj;
                    }
                    gb[cls] += dl;
                }
            }
        }
        ModelKind::Mlp => {
            let w2 = &p[h * d + h..h * d + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            let mut d_hidden = vec![0.0; h];
            for r in 0..rows {
                let x = batch.row(r);
                let hid = &pass.hidden[r * h..(r + 1) * h];
                let pre = &pass.pre_act[r * h..(r + 1) * h];
                d_hidden.iter_mut().for_each(|v| *v = 0.0);
                for cls in 0..c {
                    let mut dl = pass.probs[r * c + cls] * inv_rows;
                    if cls == batch.labels[r] {
                        dl -= inv_rows;
                    }
                    let w2_row = &w2[cls * h..(cls + 1) * h];
                    let gw2_row = &mut gw2[cls * h..(cls + 1) * h];
                    for k in 0..h {
                        gw2_row[k] += dl * hid[k];
                        d_hidden[k] += dl * w2_row[k];
                    }
                    gb2[cls] += dl;
                }
                for k in 0..h {
                    if pre[k] > 0.0 {
                        let da = d_hidden[k];
                        let gw1_row = &mut gw1[k * d..(k + 1) * d];
                        for (g, xj) in gw1_row.iter_mut().zip(x) {
                            *g += da * xj;
                        }
                        gb1[k] += da;
                    }
                }
            }
        }
    }

    Ok((pass.loss, ParamVector::new(grad)))
}

/// Exact analytic gradient of [`forward_loss`] with respect to `params`.
pub fn gradient(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    loss_and_gradient(spec, params, batch).map(|(_, g)| g)
}

/// Argmax accuracy (ties broken toward the lowest class index) and mean
/// loss over a nonempty set of rows.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, f64)> {
    if batch.rows() == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let (loss, probs) = forward_loss(spec, params, batch)?;
    let c = spec.num_classes;
    let mut correct = 0usize;
    for r in 0..batch.rows() {
        let row = &probs[r * c..(r + 1) * c];
        let mut best = 0usize;
        for (cls, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = cls;
            }
        }
        if best == batch.labels()[r] {
            correct += 1;
        }
    }
    Ok((correct as f64 / batch.rows() as f64, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> RngStream {
        RngStream::new(123, "models-test", 0, 0)
    }

    fn random_batch(spec: &ModelSpec, rows: usize, rng: &mut RngStream) -> Batch {
        let inputs: Vec<f64> = (0..rows * spec.input_dim).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(spec.num_classes)).collect();
        Batch::new(inputs, labels, spec.input_dim).unwrap()
    }

    /// Independent naive-loop cross entropy, structured differently from
    /// the production forward pass.
    fn naive_cross_entropy(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> f64 {
        let p = params.as_slice();
        let mut total = 0.0;
        for r in 0..batch.rows() {
            let x = batch.row(r);
            let logits: Vec<f64> = match spec.kind {
                ModelKind::LogisticRegression => (0..spec.num_classes)
                    .map(|cls| {
                        let w: f64 = (0..spec.input_dim)
                            .map(|j| p[cls * spec.input_dim + j] * x[j])
                            .sum();
                        w + p[spec.num_classes * spec.input_dim + cls]
                    })
                    .collect(),
                ModelKind::Mlp => {
                    let (d, h) = (spec.input_dim, spec.hidden_dim);
                    let hid: Vec<f64> = (0..h)
                        .map(|k| {
                            let a: f64 =
                                (0..d).map(|j| p[k * d + j] * x[j]).sum::<f64>() + p[h * d + k];
                            a.max(0.0)
                        })
                        .collect();
                    (0..spec.num_classes)
                        .map(|cls| {
                            let base = h * d + h;
                            let w: f64 =
                                (0..h).map(|k| p[base + cls * h + k] * hid[k]).sum();
                            w + p[base + spec.num_classes * h + cls]
                        })
                        .collect()
                }
            };
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let py = (logits[batch.labels()[r]] - m).exp() / z;
            total += -(py.max(LOG_PROB_FLOOR)).ln();
        }
        total / batch.rows() as f64
    }

    /// Central finite differences of the loss along sampled coordinates.
    fn finite_difference_check(spec: &ModelSpec, params: &ParamVector, batch: &Batch, coords: usize) {
        let h = 1e-5;
        let grad = gradient(spec, params, batch).unwrap();
        let mut rng = RngStream::new(99, "fd-coords", 0, 0);
        for _ in 0..coords {
            let i = rng.below(params.len());
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let (lp, _) = forward_loss(spec, &plus, batch).unwrap();
            let (lm, _) = forward_loss(spec, &minus, batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            let rel = (grad[i] - fd).abs() / denom;
            assert!(rel <= 1e-4, "coord {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_params_give_uniform_probs_and_log_k_loss() {
        let spec = ModelSpec::logistic_regression(4, 3);
        let params = ParamVector::zeros(spec.parameter_count());
        let batch = random_batch(&spec, 5, &mut stream());
        let (loss, probs) = forward_loss(&spec, &params, &batch).unwrap();
        for p in &probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_loss() {
        // One input feature equal to 1 forces logits [20, -20].
        let spec = ModelSpec::logistic_regression(1, 2);
        let params = ParamVector::new(vec![20.0, -20.0, 0.0, 0.0]);
        let batch = Batch::new(vec![1.0], vec![0], 1).unwrap();
        let (loss, _) = forward_loss(&spec, &params, &batch).unwrap();
        assert!(loss <= 1e-8, "loss = {loss}");
    }

    #[test]
    fn loss_matches_naive_loop_oracle() {
        let mut rng = stream();
        for spec in [
            ModelSpec::logistic_regression(6, 4),
            ModelSpec::mlp(5, 7, 3),
        ] {
            for _ in 0..5 {
                let params = spec.init_params(&mut rng);
                let batch = random_batch(&spec, 9, &mut rng);
                let (loss, _) = forward_loss(&spec, &params, &batch).unwrap();
                let naive = naive_cross_entropy(&spec, &params, &batch);
                assert!((loss - naive).abs() < 1e-10, "{loss} vs {naive}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = stream();
        let spec = ModelSpec::mlp(4, 6, 5);
        let params = spec.init_params(&mut rng).scale(30.0);
        let batch = random_batch(&spec, 8, &mut rng);
        let (_, probs) = forward_loss(&spec, &params, &batch).unwrap();
        for r in 0..batch.rows() {
            let sum: f64 = probs[r * 5..(r + 1) * 5].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_inputs_annihilate_weight_gradient() {
        let spec = ModelSpec::logistic_regression(3, 4);
        let params = ParamVector::zeros(spec.parameter_count());
        let batch = Batch::new(vec![0.0; 6], vec![1, 3], 3).unwrap();
        let grad = gradient(&spec, &params, &batch).unwrap();
        let (gw, gb) = grad.as_slice().split_at(4 * 3);
        assert!(gw.iter().all(|v| *v == 0.0));
        // softmax(0) - mean onehot: 1/4 - [0, 1/2, 0, 1/2].
        let expect = [0.25, -0.25, 0.25, -0.25];
        for (g, e) in gb.iter().zip(expect) {
            assert!((g - e).abs() < 1e-15, "{g} vs {e}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream();
        for spec in [
            ModelSpec::logistic_regression(5, 3),
            ModelSpec::mlp(4, 8, 3),
        ] {
            let params = spec.init_params(&mut rng);
            let batch = random_batch(&spec, 6, &mut rng);
            finite_difference_check(&spec, &params, &batch, 50);
        }
    }

    #[test]
    fn duplicated_batch_keeps_gradient() {
        let mut rng = stream();
        let spec = ModelSpec::mlp(3, 5, 4);
        let params = spec.init_params(&mut rng);
        let batch = random_batch(&spec, 4, &mut rng);
        let mut doubled_inputs = Vec::new();
        let mut doubled_labels = Vec::new();
        for r in 0..batch.rows() {
            for _ in 0..2 {
                doubled_inputs.extend_from_slice(batch.row(r));
                doubled_labels.push(batch.labels()[r]);
            }
        }
        let doubled = Batch::new(doubled_inputs, doubled_labels, 3).unwrap();
        let g1 = gradient(&spec, &params, &batch).unwrap();
        let g2 = gradient(&spec, &params, &doubled).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = stream();
        let spec = ModelSpec::mlp(4, 5, 3);
        let params = spec.init_params(&mut rng);
        let batch = random_batch(&spec, 7, &mut rng);
        let mut order: Vec<usize> = (0..7).collect();
        rng.shuffle(&mut order);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for &r in &order {
            inputs.extend_from_slice(batch.row(r));
            labels.push(batch.labels()[r]);
        }
        let shuffled = Batch::new(inputs, labels, 4).unwrap();
        let (l1, _) = forward_loss(&spec, &params, &batch).unwrap();
        let (l2, _) = forward_loss(&spec, &params, &shuffled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn small_gradient_step_does_not_increase_loss() {
        let mut rng = stream();
        for i in 0..20 {
            let spec = if i % 2 == 0 {
                ModelSpec::logistic_regression(4, 3)
            } else {
                ModelSpec::mlp(4, 6, 3)
            };
            let params = spec.init_params(&mut rng);
            let batch = random_batch(&spec, 10, &mut rng);
            let (loss, grad) = loss_and_gradient(&spec, &params, &batch).unwrap();
            let mut stepped = params.clone();
            stepped.add_scaled(&grad, -1e-4).unwrap();
            let (after, _) = forward_loss(&spec, &stepped, &batch).unwrap();
            assert!(after <= loss + 1e-12, "{after} > {loss}");
        }
    }

    #[test]
    fn evaluate_counts_and_breaks_ties_low() {
        // Saturated correct parameters: accuracy 1.
        let spec = ModelSpec::logistic_regression(1, 2);
        let params = ParamVector::new(vec![20.0, -20.0, 0.0, 0.0]);
        let inputs = vec![1.0; 10];
        let labels = vec![0; 10];
        let batch = Batch::new(inputs, labels, 1).unwrap();
        let (acc, _) = evaluate(&spec, &params, &batch).unwrap();
        assert_eq!(acc, 1.0);

        // Zero parameters tie every class; prediction falls to class 0.
        let params = ParamVector::zeros(spec.parameter_count());
        let labels = vec![0, 1, 0, 1, 1, 0];
        let batch = Batch::new(vec![1.0; 6], labels.clone(), 1).unwrap();
        let (acc, _) = evaluate(&spec, &params, &batch).unwrap();
        let frac0 = labels.iter().filter(|&&l| l == 0).count() as f64 / labels.len() as f64;
        assert_eq!(acc, frac0);
    }

    #[test]
    fn evaluate_matches_naive_counting() {
        let mut rng = stream();
        let spec = ModelSpec::mlp(6, 8, 10);
        let params = spec.init_params(&mut rng);
        let batch = random_batch(&spec, 100, &mut rng);
        let (acc, _) = evaluate(&spec, &params, &batch).unwrap();
        let (_, probs) = forward_loss(&spec, &params, &batch).unwrap();
        let mut correct = 0;
        for r in 0..100 {
            let row = &probs[r * 10..(r + 1) * 10];
            let mut best = 0;
            let mut best_v = row[0];
            for (i, v) in row.iter().enumerate() {
                if *v > best_v {
                    best = i;
                    best_v = *v;
                }
            }
            if best == batch.labels()[r] {
                correct += 1;
            }
        }
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(acc, correct as f64 / 100.0);
    }

    #[test]
    fn nan_inputs_are_rejected() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let params = ParamVector::zeros(spec.parameter_count());
        let batch = Batch::new(vec![1.0, f64::NAN], vec![0], 2).unwrap();
        assert!(matches!(
            forward_loss(&spec, &params, &batch),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn wrong_param_length_is_rejected() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let params = ParamVector::zeros(spec.parameter_count() + 1);
        let batch = Batch::new(vec![0.0; 3], vec![0], 3).unwrap();
        assert!(gradient(&spec, &params, &batch).is_err());
    }

    #[test]
    fn empty_evaluation_set_is_rejected() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let params = ParamVector::zeros(spec.parameter_count());
        let empty = Batch::new(vec![], vec![], 2).unwrap();
        assert!(matches!(
            evaluate(&spec, &params, &empty),
            Err(Error::Data(_))
        ));
    }
}
