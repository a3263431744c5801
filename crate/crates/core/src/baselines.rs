//! Reference methods sharing the round loop: FedAvg, FedProx, their
//! locally fine-tuned variants, and the no-personalization ablation.
//!
//! FedAvg is run in gradient-update form — the server applies
//! `x <- x - eta2 * mean(delta)` — which is algebraically the same as
//! averaging locally updated models and lets every method share one
//! transport path.

use crate::error::{Error, Result};
use crate::fedcore::{LocalObjective, Method};
use crate::models::{self, Batch, ModelSpec};
use crate::numkit::{ParamVector, RngStream};

/// What a method does inside a round, derived from its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodPolicy {
    /// Local probe gradients get a proximal pull toward the broadcast model.
    pub proximal: bool,
    /// Test accuracy comes from a throwaway fine-tuned copy of the
    /// broadcast model.
    pub fine_tune: bool,
    /// The server maintains the shared global model trajectory.
    pub global_model: bool,
    /// Clients keep their own models across rounds.
    pub personalized: bool,
}

pub fn policy_for(method: Method) -> MethodPolicy {
    match method {
        Method::PFedSop | Method::PFedSopNoPc => MethodPolicy {
            proximal: false,
            fine_tune: false,
            global_model: false,
            personalized: true,
        },
        Method::FedAvg => MethodPolicy {
            proximal: false,
            fine_tune: false,
            global_model: true,
            personalized: false,
        },
        Method::FedProx => MethodPolicy {
            proximal: true,
            fine_tune: false,
            global_model: true,
            personalized: false,
        },
        Method::FedAvgFt => MethodPolicy {
            proximal: false,
            fine_tune: true,
            global_model: true,
            personalized: false,
        },
        Method::FedProxFt => MethodPolicy {
            proximal: true,
            fine_tune: true,
            global_model: true,
            personalized: false,
        },
    }
}

/// Batch gradient plus the proximal term `mu * (params - anchor)`.
///
/// `mu = 0` returns the plain gradient bitwise.
pub fn fedprox_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    anchor: &ParamVector,
    mu: f64,
) -> Result<ParamVector> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::parameter("mu", format!("must be >= 0, got {mu}")));
    }
    let mut grad = models::gradient(spec, params, batch)?;
    if mu != 0.0 {
        grad.add_scaled(&params.sub(anchor)?, mu)?;
    }
    Ok(grad)
}

/// Copy the broadcast model, run `ft_epochs` plain SGD epochs on the
/// client's train rows, and evaluate the copy on its test rows. The copy is
/// discarded; the broadcast model is never touched.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune_then_eval<O: LocalObjective + ?Sized>(
    obj: &O,
    x_global: &ParamVector,
    train_rows: &[usize],
    test_rows: &[usize],
    ft_epochs: usize,
    batch_size: usize,
    eta2: f64,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if train_rows.is_empty() {
        return Err(Error::Data("client has no training samples".into()));
    }
    let mut x = x_global.clone();
    let mut rows = train_rows.to_vec();
    for _ in 0..ft_epochs {
        rng.shuffle(&mut rows);
        for batch_rows in rows.chunks(batch_size) {
            let (_, grad) = obj.loss_and_grad(&x, batch_rows)?;
            x.add_scaled(&grad, -eta2)?;
        }
    }
    obj.evaluate(&x, test_rows)
}
