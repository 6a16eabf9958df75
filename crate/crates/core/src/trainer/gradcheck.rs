use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, Batch, TrainMode};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub max_rel_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

/// `|a - n| / max(|n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Central-difference derivative of the batch loss with respect to one scalar.
pub fn numeric_gradient(
    params: &mut ModelParams,
    batch: &Batch,
    mode: TrainMode,
    tensor: usize,
    index: usize,
    epsilon: f64,
) -> Result<f64> {
    let orig = params.tensors[tensor].data[index];
    params.tensors[tensor].data[index] = orig + epsilon;
    let plus = batch_loss(params, batch, mode, false, false).map(|r| r.0.l_total);
    params.tensors[tensor].data[index] = orig - epsilon;
    let minus = batch_loss(params, batch, mode, false, false).map(|r| r.0.l_total);
    params.tensors[tensor].data[index] = orig;
    let (plus, minus) = (plus?, minus?);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!(
            "perturbed loss for {}[{index}]",
            params.names()[tensor]
        )));
    }
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Compares analytic gradients with central differences on `sample` scalar
/// parameters drawn uniformly (by scalar) under `seed`. Always single-threaded.
pub fn grad_check(
    params: &ModelParams,
    batch: &Batch,
    mode: TrainMode,
    epsilon: f64,
    sample: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, grads) = batch_loss(params, batch, mode, false, true)?;
    let grads = grads.expect("gradients requested").0;
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", params.names()[i])));
    }
    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut entries = Vec::with_capacity(sample);
    for _ in 0..sample {
        let mut flat = rng.gen_range(0..total);
        let mut tensor = 0;
        while flat >= params.tensors[tensor].len() {
            flat -= params.tensors[tensor].len();
            tensor += 1;
        }
        entries.push(check_one(&mut work, batch, mode, &grads, tensor, flat, epsilon)?);
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        epsilon,
        max_rel_error,
        entries,
    })
}

fn check_one(
    work: &mut ModelParams,
    batch: &Batch,
    mode: TrainMode,
    grads: &[crate::encoder::Tensor],
    tensor: usize,
    index: usize,
    epsilon: f64,
) -> Result<GradCheckEntry> {
    let numeric = numeric_gradient(work, batch, mode, tensor, index, epsilon)?;
    let analytic = grads[tensor].data[index];
    Ok(GradCheckEntry {
        param: work.names()[tensor].clone(),
        index,
        analytic,
        numeric,
        rel_error: relative_error(analytic, numeric),
    })
}

/// Analytic gradient and finite-difference check for one named scalar.
pub fn check_scalar(
    params: &ModelParams,
    batch: &Batch,
    mode: TrainMode,
    name: &str,
    index: usize,
    epsilon: f64,
) -> Result<GradCheckEntry> {
    let tensor = params
        .names()
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
    if index >= params.tensors[tensor].len() {
        return Err(Error::InvalidArgument(format!("{name} has no element {index}")));
    }
    let (_, grads) = batch_loss(params, batch, mode, false, true)?;
    let grads = grads.expect("gradients requested").0;
    check_one(&mut params.clone(), batch, mode, &grads, tensor, index, epsilon)
}
