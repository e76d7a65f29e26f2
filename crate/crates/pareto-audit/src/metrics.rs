//! The two axes of the Pareto plane: expected BCE loss (natural log) and the
//! demographic parity gap, computed over a dataset split.

use crate::dgp::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::MlpModel;

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub bce: f64,
    pub dp_gap: f64,
    /// (mean score | a = 0, mean score | a = 1).
    pub group_means: (f64, f64),
    pub n_evaluated: usize,
}

/// Mean BCE of `model` over `split`, natural log, scores clamped by the
/// forward pass.
pub fn bce_loss(model: &MlpModel, data: &Dataset, split: Split) -> Result<f64> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Eval(format!("split {} is empty", split.as_str())));
    }
    let mut total = 0.0;
    for &i in &idx {
        let f = model.forward(&data.features[i], data.groups[i])?;
        let y = f64::from(data.labels[i]);
        total += -(y * f.ln() + (1.0 - y) * (1.0 - f).ln());
    }
    Ok(total / idx.len() as f64)
}

/// |mean score of group 1 - mean score of group 0| over `split`.
pub fn dp_gap(model: &MlpModel, data: &Dataset, split: Split) -> Result<f64> {
    let (m0, m1) = group_means(model, data, split)?;
    Ok((m1 - m0).abs())
}

fn group_means(model: &MlpModel, data: &Dataset, split: Split) -> Result<(f64, f64)> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Eval(format!("split {} is empty", split.as_str())));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for &i in &idx {
        let f = model.forward(&data.features[i], data.groups[i])?;
        let a = data.groups[i] as usize;
        sums[a] += f;
        counts[a] += 1;
    }
    for (a, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Eval(format!(
                "group {a} absent from split {}",
                split.as_str()
            )));
        }
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}

/// Both metrics in one pass.
pub fn evaluate(model: &MlpModel, data: &Dataset, split: Split) -> Result<EvalResult> {
    let idx = data.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Eval(format!("split {} is empty", split.as_str())));
    }
    let mut total = 0.0;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for &i in &idx {
        let f = model.forward(&data.features[i], data.groups[i])?;
        let y = f64::from(data.labels[i]);
        total += -(y * f.ln() + (1.0 - y) * (1.0 - f).ln());
        let a = data.groups[i] as usize;
        sums[a] += f;
        counts[a] += 1;
    }
    for (a, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Eval(format!(
                "group {a} absent from split {}",
                split.as_str()
            )));
        }
    }
    let means = (sums[0] / counts[0] as f64, sums[1] / counts[1] as f64);
    Ok(EvalResult {
        bce: total / idx.len() as f64,
        dp_gap: (means.1 - means.0).abs(),
        group_means: means,
        n_evaluated: idx.len(),
    })
}
