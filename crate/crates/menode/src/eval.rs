//! Calibrate-and-score over a dataset split.

use rayon::prelude::*;

use menode_core::calibrate::{calibrate, predict, CalibrateConfig, CalibrationResult, Prediction};
use menode_core::data::PanelDataset;
use menode_core::metrics::{per_step_mse_split, permutation_test, recon_mse, param_mse, PermStatistic};
use menode_core::model::MeNodeModel;
use menode_core::ode::{Method, TimeGrid};
use menode_core::rng;
use menode_core::train::RecoveredParams;
use menode_core::Tensor;

use crate::error::{AppError, Result};
use crate::report::{EvalReport, PermutationSummary};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub n_candidates: usize,
    pub seed: u64,
    pub method: Method,
    pub substeps: usize,
    pub n_perms: usize,
    pub statistic: PermStatistic,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_candidates: 256,
            seed: 0,
            method: Method::Rk4,
            substeps: 3,
            n_perms: 1000,
            statistic: PermStatistic::PerStep,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubjectFit {
    pub calibration: CalibrationResult,
    pub prediction: Prediction,
}

/// Calibrates every subject on its observed window and predicts the full
/// grid. Subject `s` draws candidates from `derive_seed(seed, s.id)`.
pub fn calibrate_all(model: &MeNodeModel, ds: &PanelDataset, opts: &EvalOptions) -> Result<Vec<SubjectFit>> {
    let grid_obs = TimeGrid::new(ds.interp_times().to_vec(), opts.substeps)?;
    let grid_full = TimeGrid::new(ds.times.clone(), opts.substeps)?;
    ds.subjects
        .par_iter()
        .map(|s| {
            let cfg = CalibrateConfig {
                n_candidates: opts.n_candidates,
                seed: rng::derive_seed(opts.seed, s.id),
                method: opts.method,
                joint_z0: false,
            };
            let calibration = calibrate(model, &ds.observed_window(s), &grid_obs, &cfg)?;
            let prediction = predict(model, &calibration, &grid_full, opts.method)?;
            Ok(SubjectFit {
                calibration,
                prediction,
            })
        })
        .collect()
}

/// Mean and population std of the ground-truth columns, shaped like the
/// model's recovered parameters.
pub fn truth_moments(ds: &PanelDataset) -> Option<RecoveredParams> {
    let z0: Vec<&Vec<f64>> = ds.subjects.iter().filter_map(|s| s.true_z0.as_ref()).collect();
    let w: Vec<&Vec<f64>> = ds.subjects.iter().filter_map(|s| s.true_w.as_ref()).collect();
    if z0.len() != ds.len() || w.len() != ds.len() || ds.is_empty() {
        return None;
    }
    let moments = |rows: &[&Vec<f64>]| {
        let k = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..k)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        (mean, std)
    };
    let (mu, sigma) = moments(&z0);
    let (beta, sigma_b) = moments(&w);
    Some(RecoveredParams { mu, sigma, beta, sigma_b })
}

/// Two group ids with their latent trajectories.
pub type GroupPair = (u32, Vec<Tensor>, u32, Vec<Tensor>);

/// Latent paths `[T, p]` of the first two groups (by id) that have at least
/// two subjects each.
pub fn group_latents(ds: &PanelDataset, fits: &[SubjectFit]) -> Result<Option<GroupPair>> {
    let mut groups: std::collections::BTreeMap<u32, Vec<Tensor>> = Default::default();
    for (s, fit) in ds.subjects.iter().zip(fits) {
        groups.entry(s.group).or_default().push(fit.prediction.latent_matrix()?);
    }
    let mut eligible = groups.into_iter().filter(|(_, v)| v.len() >= 2);
    Ok(match (eligible.next(), eligible.next()) {
        (Some((ga, a)), Some((gb, b))) => Some((ga, a, gb, b)),
        _ => None,
    })
}

pub fn evaluate(
    model: &MeNodeModel,
    train: &PanelDataset,
    test: &PanelDataset,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<SubjectFit>)> {
    if test.is_empty() {
        return Err(AppError::Data("no test subjects to evaluate".into()));
    }
    let fits = calibrate_all(model, test, opts)?;
    let preds: Vec<Tensor> = fits.iter().map(|f| f.prediction.decoded.clone()).collect();
    let (interp, extrap) = per_step_mse_split(test, &preds)?;
    let mean_calibration_mse = fits.iter().map(|f| f.calibration.mse).sum::<f64>() / fits.len() as f64;

    let recovered = if model.config().identity_mode && !train.is_empty() {
        Some(RecoveredParams::estimate(model, train)?)
    } else {
        None
    };
    let truth = truth_moments(train);
    let param_mse = match (&recovered, &truth) {
        (Some(r), Some(t)) if r.flatten().len() == t.flatten().len() => Some(param_mse(&r.flatten(), &t.flatten())?),
        _ => None,
    };
    let recon = if train.is_empty() {
        f64::NAN
    } else {
        recon_mse(model, train, opts.method, opts.substeps)?
    };
    let permutation = match group_latents(test, &fits)? {
        Some((ga, a, gb, b)) => {
            let r = permutation_test(&a, &b, opts.n_perms, opts.seed, opts.statistic)?;
            Some(PermutationSummary {
                group_a: ga,
                group_b: gb,
                n_a: a.len(),
                n_b: b.len(),
                n_perms: opts.n_perms,
                statistic: opts.statistic,
                observed: r.observed,
                p_values: r.p_values,
            })
        }
        None => None,
    };
    let report = EvalReport {
        n_train: train.len(),
        n_test: test.len(),
        interp_times: test.interp_times().to_vec(),
        extrap_times: test.extrap_times().to_vec(),
        interp,
        extrap,
        mean_calibration_mse,
        recovered,
        truth,
        param_mse,
        recon_mse: recon,
        permutation,
    };
    Ok((report, fits))
}
