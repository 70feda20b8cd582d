//! Per-step errors, parameter errors and permutation tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::Eager;
use crate::data::PanelDataset;
use crate::model::{stack_rows, MeNodeModel};
use crate::ode::{Method, TimeGrid};
use crate::rng;
use crate::{math, Error, Result, Tensor};

/// Mean and (population) standard deviation of MSE across subjects, per
/// time index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMse {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StepMse {
    /// Mean over steps of the per-step mean.
    pub fn overall(&self) -> f64 {
        math::mean(&self.mean)
    }
}

/// `observed[i]` and `predicted[i]` are `[T, d]` for subject `i`.
pub fn per_step_mse(observed: &[Tensor], predicted: &[Tensor]) -> Result<StepMse> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(Error::contract(format!(
            "per_step_mse: {} observed vs {} predicted subjects",
            observed.len(),
            predicted.len()
        )));
    }
    let shape = observed[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::contract("per_step_mse expects [T, d] sequences"));
    }
    for (o, p) in observed.iter().zip(predicted) {
        if o.shape() != shape.as_slice() || p.shape() != shape.as_slice() {
            return Err(Error::contract(format!(
                "per_step_mse: shapes {:?} and {:?} differ from {:?}",
                o.shape(),
                p.shape(),
                shape
            )));
        }
    }
    let (t_len, d) = (shape[0], shape[1]);
    let mut mean = Vec::with_capacity(t_len);
    let mut std = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let per_subject: Vec<f64> = observed
            .iter()
            .zip(predicted)
            .map(|(o, p)| {
                o.row(t)
                    .iter()
                    .zip(p.row(t))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / d as f64
            })
            .collect();
        mean.push(math::mean(&per_subject));
        std.push(math::sqrt(math::variance(&per_subject)));
    }
    Ok(StepMse { mean, std })
}

/// Per-step MSE split at `ds.split` into (interpolation, extrapolation).
pub fn per_step_mse_split(ds: &PanelDataset, predicted: &[Tensor]) -> Result<(StepMse, StepMse)> {
    let obs: Vec<Tensor> = ds.subjects.iter().map(|s| s.obs.clone()).collect();
    let all = per_step_mse(&obs, predicted)?;
    let k = ds.split;
    Ok((
        StepMse {
            mean: all.mean[..k].to_vec(),
            std: all.std[..k].to_vec(),
        },
        StepMse {
            mean: all.mean[k..].to_vec(),
            std: all.std[k..].to_vec(),
        },
    ))
}

/// Mean squared difference between estimated and true parameter vectors.
pub fn param_mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::contract("param_mse: vectors must be non-empty and equal length"));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate.len() as f64)
}

/// Decodes each subject's mean trajectory (`z0 = μ`, `w = β`) over `times`.
pub fn mean_trajectories(
    model: &MeNodeModel,
    ds: &PanelDataset,
    times: &[f64],
    method: Method,
    substeps: usize,
) -> Result<Vec<Tensor>> {
    let grid = TimeGrid::new(times.to_vec(), substeps)?;
    let m = model.config().effect_dim;
    let w = Tensor::matrix(1, m, model.beta().to_vec());
    ds.subjects
        .iter()
        .map(|s| {
            let (mu, _) = model.encode(&ds.observed_window(s))?;
            let z0 = mu.reshape(&[1, mu.numel()])?;
            let traj = model.rollout_with(&Eager, model.params(), &z0, &w, &grid, method, true)?;
            stack_rows(&model.decode_traj_with(&Eager, model.params(), &traj)?)
        })
        .collect()
}

/// Reconstruction MSE of the mean trajectory over the interpolation window,
/// averaged over subjects, steps and coordinates.
pub fn recon_mse(model: &MeNodeModel, ds: &PanelDataset, method: Method, substeps: usize) -> Result<f64> {
    let preds = mean_trajectories(model, ds, ds.interp_times(), method, substeps)?;
    let obs: Vec<Tensor> = ds.subjects.iter().map(|s| ds.observed_window(s)).collect();
    Ok(per_step_mse(&obs, &preds)?.overall())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PermStatistic {
    /// Distance between group means at every step, one p-value per step.
    #[default]
    PerStep,
    /// Sum of the per-step distances, a single p-value.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PermutationResult {
    pub observed: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `null[r][k]`: statistic `k` under resample `r`.
    pub null: Vec<Vec<f64>>,
}

/// Label-permutation test on latent trajectories (`[T, p]` per subject).
/// `p = (1 + #{permuted ≥ observed}) / (1 + n_perms)`; every resample uses one
/// relabelling for all steps.
pub fn permutation_test(
    group_a: &[Tensor],
    group_b: &[Tensor],
    n_perms: usize,
    seed: u64,
    statistic: PermStatistic,
) -> Result<PermutationResult> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::contract("each group needs at least 2 subjects"));
    }
    if n_perms < 100 {
        return Err(Error::contract("n_perms must be >= 100"));
    }
    let pooled: Vec<&Tensor> = group_a.iter().chain(group_b).collect();
    let shape = pooled[0].shape().to_vec();
    if shape.len() != 2 || pooled.iter().any(|t| t.shape() != shape.as_slice()) {
        return Err(Error::contract("all trajectories must share one [T, p] shape"));
    }
    let (t_len, p) = (shape[0], shape[1]);
    let n_a = group_a.len();

    let stat = |labels: &[usize]| -> Vec<f64> {
        let mut mean_a = vec![0.0; t_len * p];
        let mut mean_b = vec![0.0; t_len * p];
        for (pos, &i) in labels.iter().enumerate() {
            let target = if pos < n_a { &mut mean_a } else { &mut mean_b };
            for (acc, v) in target.iter_mut().zip(pooled[i].data()) {
                *acc += v;
            }
        }
        let (ka, kb) = (n_a as f64, (labels.len() - n_a) as f64);
        let per_step: Vec<f64> = (0..t_len)
            .map(|t| {
                let sq: f64 = (0..p)
                    .map(|j| {
                        let diff = mean_a[t * p + j] / ka - mean_b[t * p + j] / kb;
                        diff * diff
                    })
                    .sum();
                math::sqrt(sq)
            })
            .collect();
        match statistic {
            PermStatistic::PerStep => per_step,
            PermStatistic::Aggregate => vec![per_step.iter().sum()],
        }
    };

    let mut labels: Vec<usize> = (0..pooled.len()).collect();
    let observed = stat(&labels);
    let mut r = rng::stream(seed, 0);
    let mut exceed = vec![0usize; observed.len()];
    let mut null = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        labels.shuffle(&mut r);
        let s = stat(&labels);
        for (k, (&perm, &obs)) in s.iter().zip(&observed).enumerate() {
            // Relative slack so exact ties survive rounding in the sums.
            if perm >= obs - 1e-12 * obs.abs().max(1.0) {
                exceed[k] += 1;
            }
        }
        null.push(s);
    }
    let p_values = exceed
        .iter()
        .map(|&e| (1 + e) as f64 / (1 + n_perms) as f64)
        .collect();
    Ok(PermutationResult {
        observed,
        p_values,
        null,
    })
}

/// Kolmogorov–Smirnov distance between a sample and `U(0, 1)`.
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}
