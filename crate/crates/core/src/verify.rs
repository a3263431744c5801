//! Self-contained numerical oracle suites, runnable from the CLI.
//!
//! Each suite checks an implementation against an independent route:
//! dense rank-one-plus-identity solves vs the closed-form step, central
//! finite differences vs analytic gradients, accumulated gradient sums vs
//! the probe's difference quotient, and grid monotonicity of the angle
//! normalization. Suites take the function under test as an argument so
//! fault injection is testable.

use crate::error::{Error, Result};
use crate::fedcore::{local_gradient_update, ClassifierObjective, HyperParams, LocalObjective};
use crate::models::{forward_loss, gradient, Batch, ModelSpec};
use crate::numkit::{ParamVector, RngStream};

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub max_err: f64,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &'static str, tol: f64, cases: usize, max_err: f64) -> Self {
        Self {
            name,
            passed: max_err <= tol,
            cases,
            max_err,
            detail: format!("{cases} cases, max err {max_err:.3e}, tolerance {tol:.0e}"),
        }
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} ({})", self.name, self.detail)
    }
}

pub type FimStepFn<'a> = &'a (dyn Fn(&ParamVector, f64) -> Result<ParamVector> + Sync);
pub type GradientFn<'a> =
    &'a (dyn Fn(&ModelSpec, &ParamVector, &Batch) -> Result<ParamVector> + Sync);
pub type WeightFn<'a> = &'a (dyn Fn(f64, f64) -> Result<f64> + Sync);

/// Solve `A x = b` by Gaussian elimination with partial pivoting;
/// `a` is `n x n` row-major and is consumed.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Dimension {
            left: a.len(),
            right: n * n,
        });
    }
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular matrix in dense solve".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

fn random_delta(rng: &mut RngStream, dim: usize, norm_lo: f64, norm_hi: f64) -> ParamVector {
    let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let v = ParamVector::new(raw);
    let target = 10f64.powf(rng.uniform_in(norm_lo.log10(), norm_hi.log10()));
    let norm = v.l2_norm();
    if norm > 0.0 {
        v.scale(target / norm)
    } else {
        v
    }
}

/// 200 random updates at d <= 50: the closed-form step must match the
/// dense `(delta delta^T + rho I) \ delta` solve within 1e-8 per coordinate.
pub fn sherman_morrison_suite(fim: FimStepFn, seed: u64) -> SuiteReport {
    let mut rng = RngStream::new(seed, "verify-sm", 0, 0);
    let mut max_err: f64 = 0.0;
    let cases = 200;
    for _ in 0..cases {
        let dim = 1 + rng.below(50);
        let delta = random_delta(&mut rng, dim, 1e-2, 5.0);
        let rho = [1.0, 0.1, 0.01][rng.below(3)];
        let step = match fim(&delta, rho) {
            Ok(s) => s,
            Err(_) => {
                return SuiteReport {
                    name: "sherman_morrison_vs_dense",
                    passed: false,
                    cases,
                    max_err: f64::INFINITY,
                    detail: "step function returned an error".into(),
                }
            }
        };
        let d = delta.as_slice();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = d[i] * d[j];
            }
            a[i * dim + i] += rho;
        }
        let oracle = solve_dense(a, d.to_vec()).expect("regularized matrix is nonsingular");
        for (got, want) in step.as_slice().iter().zip(&oracle) {
            max_err = max_err.max((got - want).abs());
        }
    }
    SuiteReport::new("sherman_morrison_vs_dense", 1e-8, cases, max_err)
}

/// Central finite differences (h = 1e-5) on 20 random classifier
/// instances, 50 sampled coordinates each; relative error <= 1e-4.
pub fn gradient_check_suite(grad_fn: GradientFn, seed: u64) -> SuiteReport {
    let h = 1e-5;
    let mut max_err: f64 = 0.0;
    let cases = 20;
    for case in 0..cases as u64 {
        let mut rng = RngStream::new(seed, "verify-grad", case, 0);
        let spec = if case % 2 == 0 {
            ModelSpec::logistic_regression(2 + rng.below(6), 2 + rng.below(4))
        } else {
            ModelSpec::mlp(2 + rng.below(5), 2 + rng.below(8), 2 + rng.below(4))
        };
        let params = spec.init_params(&mut rng);
        let rows = 3 + rng.below(6);
        let inputs: Vec<f64> = (0..rows * spec.input_dim).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(spec.num_classes)).collect();
        let batch = Batch::new(inputs, labels, spec.input_dim).expect("consistent batch");
        let analytic = match grad_fn(&spec, &params, &batch) {
            Ok(g) => g,
            Err(_) => {
                return SuiteReport {
                    name: "gradient_vs_finite_differences",
                    passed: false,
                    cases,
                    max_err: f64::INFINITY,
                    detail: "gradient function returned an error".into(),
                }
            }
        };
        for _ in 0..50 {
            let i = rng.below(params.len());
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let (lp, _) = forward_loss(&spec, &plus, &batch).expect("forward");
            let (lm, _) = forward_loss(&spec, &minus, &batch).expect("forward");
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            max_err = max_err.max((analytic[i] - fd).abs() / denom);
        }
    }
    SuiteReport::new("gradient_vs_finite_differences", 1e-4, cases, max_err)
}

/// The probe's `(x0 - xT) / eta2` must equal an independently accumulated
/// per-step gradient sum within 5e-7 relative, across 20 random instances
/// with up to 20 steps.
pub fn delta_sum_suite(seed: u64) -> SuiteReport {
    let mut max_err: f64 = 0.0;
    let cases = 20;
    for case in 0..cases as u64 {
        let mut rng = RngStream::new(seed, "verify-delta-data", case, 0);
        let spec = ModelSpec::mlp(3 + rng.below(4), 3 + rng.below(6), 2 + rng.below(3));
        let data = crate::data::synthesize_classification(
            spec.num_classes,
            spec.input_dim,
            8,
            2.0,
            &mut rng,
        )
        .expect("synthesis");
        let n = data.len();
        let obj = ClassifierObjective {
            spec: spec.clone(),
            data: std::sync::Arc::new(data),
        };
        let x0 = {
            let mut init_rng = RngStream::new(seed, "verify-delta-init", case, 0);
            spec.init_params(&mut init_rng)
        };
        let rows: Vec<usize> = (0..n).collect();
        // Up to 20 steps: epochs x ceil(n / batch) stays under the cap.
        let h = HyperParams {
            eta2: 0.05,
            batch_size: 6,
            local_epochs: 1 + (case as usize % 4),
            ..HyperParams::default()
        };
        let mut probe_rng = RngStream::new(seed, "verify-delta-sgd", case, 1);
        let update = local_gradient_update(&obj, &x0, &rows, &h, None, &mut probe_rng)
            .expect("probe");

        let mut x = x0.clone();
        let mut sum = ParamVector::zeros(x0.len());
        let mut oracle_rng = RngStream::new(seed, "verify-delta-sgd", case, 1);
        let mut order = rows.clone();
        for _ in 0..h.local_epochs {
            oracle_rng.shuffle(&mut order);
            for chunk in order.chunks(h.batch_size) {
                let (_, g) = obj.loss_and_grad(&x, chunk).expect("grad");
                sum.add_scaled(&g, 1.0).expect("dims");
                x.add_scaled(&g, -h.eta2).expect("dims");
            }
        }
        let gap = update.delta.sub(&sum).expect("dims").l2_norm();
        let denom = sum.l2_norm().max(1e-12);
        max_err = max_err.max(gap / denom);
    }
    SuiteReport::new("delta_equals_gradient_sum", 5e-7, cases, max_err)
}

/// Gompertz weight: lambda-independent fixed point at theta = 1, frozen
/// endpoint values, and strict grid decrease below the double-precision
/// saturation plateau (non-increase everywhere).
pub fn gompertz_monotonicity_suite(weight: WeightFn) -> SuiteReport {
    let name = "gompertz_grid_monotonicity";
    let mut max_err: f64 = 0.0;
    let mut monotone = true;
    for lambda in [0.5, 1.0, 2.5, 5.0] {
        match weight(1.0, lambda) {
            Ok(beta) => max_err = max_err.max((beta - (1.0 - (-1.0f64).exp())).abs() / 1e-12),
            Err(_) => monotone = false,
        }
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let theta = std::f64::consts::PI * i as f64 / 999.0;
            let beta = match weight(theta, lambda) {
                Ok(b) => b,
                Err(_) => {
                    monotone = false;
                    break;
                }
            };
            if beta > prev || (prev < 1.0 - 1e-15 && beta >= prev) {
                monotone = false;
            }
            prev = beta;
        }
    }
    for (theta, expect) in [(0.0, 0.934012), (std::f64::consts::PI, 0.110831)] {
        if let Ok(beta) = weight(theta, 1.0) {
            max_err = max_err.max((beta - expect).abs() / 1e-6);
        } else {
            monotone = false;
        }
    }
    // max_err is normalized per check; anything above 1 is out of tolerance.
    SuiteReport {
        name,
        passed: monotone && max_err <= 1.0,
        cases: 4 * 1000 + 6,
        max_err,
        detail: format!(
            "4 lambdas x 1000-point grid, monotone: {monotone}, worst normalized err {max_err:.3e}"
        ),
    }
}

/// Run every suite against the production implementations.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        sherman_morrison_suite(&crate::pfedsop::fim_step, seed),
        gradient_check_suite(&gradient, seed),
        delta_sum_suite(seed),
        gompertz_monotonicity_suite(&crate::pfedsop::gompertz_weight),
    ]
}
