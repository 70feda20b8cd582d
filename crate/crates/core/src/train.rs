//! Best-of-M rejection ELBO and the optimisation loop.
//!
//! For each subject `n_z0` initial-state draws are paired with `n_w` effect
//! draws each. All `M = n_z0·n_w` candidates are rolled out without a tape,
//! scored by decoded MSE against the observed window, and only the
//! `accept_k` closest are replayed on a tape:
//!
//! ```text
//! loss = −(1/|S|) Σ_{s∈S} [ log p(x | z^s, w^s)
//!                          − κ·((log q(z0^s) − log p(z0^s)) + (log q(w^s) − log p(w^s))) ]
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{gaussian_log_density, Backend, Eager, Tape};
use crate::data::PanelDataset;
use crate::model::MeNodeModel;
use crate::ode::{Method, TimeGrid};
use crate::rng::{self, Rng};
use crate::{math, par, Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub n_z0: usize,
    pub n_w: usize,
    pub accept_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `κ` in the loss.
    pub kl_weight: f64,
    pub method: Method,
    pub substeps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_z0: 10,
            n_w: 10,
            accept_k: 1,
            learning_rate: 3e-3,
            epochs: 50,
            batch_size: 50,
            seed: 0,
            kl_weight: 1.0,
            method: Method::Rk4,
            substeps: 3,
        }
    }
}

impl TrainConfig {
    pub fn n_candidates(&self) -> usize {
        self.n_z0 * self.n_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z0 == 0 || self.n_w == 0 || self.accept_k == 0 {
            return Err(Error::contract("n_z0, n_w and accept_k must be >= 1"));
        }
        if self.accept_k > self.n_candidates() {
            return Err(Error::contract(format!(
                "accept_k {} exceeds n_z0·n_w = {}",
                self.accept_k,
                self.n_candidates()
            )));
        }
        if self.batch_size == 0 || self.substeps == 0 {
            return Err(Error::contract("batch_size and substeps must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.kl_weight >= 0.0) {
            return Err(Error::contract("learning_rate must be > 0 and kl_weight >= 0"));
        }
        Ok(())
    }
}

/// Standard-normal draws for one subject. Candidate `c` pairs row `c / n_w`
/// of `z0` with row `c` of `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub n_w: usize,
    /// `[n_z0, p]`
    pub z0: Tensor,
    /// `[n_z0·n_w, m]`
    pub w: Tensor,
}

impl NoiseBank {
    pub fn draw(rng: &mut Rng, n_z0: usize, n_w: usize, p: usize, m: usize) -> Self {
        let z0 = rng::normal_matrix(rng, n_z0, p);
        let w = rng::normal_matrix(rng, n_z0 * n_w, m);
        NoiseBank { n_w, z0, w }
    }

    pub fn n_candidates(&self) -> usize {
        self.w.dims2().0
    }

    /// `(z0 noise, w noise)` rows for the listed candidates.
    pub fn select(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let z_rows: Vec<usize> = idx.iter().map(|c| c / self.n_w).collect();
        Ok((self.z0.select_rows(&z_rows)?, self.w.select_rows(idx)?))
    }

    fn all(&self) -> Result<(Tensor, Tensor)> {
        let idx: Vec<usize> = (0..self.n_candidates()).collect();
        self.select(&idx)
    }
}

/// Outcome of the selection step for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceRecord {
    pub subject: u64,
    /// Decoded MSE of every candidate (`+∞` for diverged ones).
    pub distances: Vec<f64>,
    /// Accepted candidate indices, closest first.
    pub accepted: Vec<usize>,
    /// Largest accepted distance.
    pub epsilon: f64,
}

/// Integration grid over the observed window.
pub fn observed_grid(ds: &PanelDataset, substeps: usize) -> Result<TimeGrid> {
    TimeGrid::new(ds.interp_times().to_vec(), substeps)
}

/// Decoded MSE of every candidate against `x_obs`, skipping the first time
/// point. Diverged candidates score `+∞`.
pub fn candidate_distances(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid: &TimeGrid,
    method: Method,
    bank: &NoiseBank,
) -> Result<Vec<f64>> {
    let params = model.params();
    let (mu, sigma) = model.encode_with(&Eager, params, x_obs)?;
    let (nz, nw) = bank.all()?;
    let (z0, w) = model.sample_with(&Eager, params, &mu, &sigma, &nz, &nw)?;
    let traj = model.rollout_with(&Eager, params, &z0, &w, grid, method, false)?;
    let preds = model.decode_traj_with(&Eager, params, &traj)?;
    Ok(row_mse(x_obs, &preds[1..], 1))
}

/// Per-row MSE of stacked predictions (`preds[k]` is `[M, d]`, compared with
/// row `offset + k` of `x`). Non-finite rows map to `+∞`.
pub(crate) fn row_mse(x: &Tensor, preds: &[Tensor], offset: usize) -> Vec<f64> {
    let (rows, d) = preds[0].dims2();
    let mut acc = vec![0.0; rows];
    for (k, p) in preds.iter().enumerate() {
        let target = x.row(offset + k);
        for (r, a) in acc.iter_mut().enumerate() {
            for (j, &t) in target.iter().enumerate() {
                let e = p.data()[r * d + j] - t;
                *a += e * e;
            }
        }
    }
    let n = (preds.len() * d) as f64;
    acc.into_iter()
        .map(|a| if a.is_finite() { a / n } else { f64::INFINITY })
        .collect()
}

/// Indices of the `k` smallest finite distances (ties keep index order).
pub fn select_closest(distances: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i].is_finite())
        .collect();
    idx.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Loss value and gradients (one per parameter tensor) for a fixed set of
/// accepted candidates.
pub fn loss_and_grad_selected(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid: &TimeGrid,
    config: &TrainConfig,
    bank: &NoiseBank,
    accepted: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let params = model.bind(&tape);
    let loss = selected_loss(&tape, model, &params, x_obs, grid, config, bank, accepted)?;
    let value = tape.with_value(&loss, |t| t.item())?;
    let grads = tape.backward(loss)?;
    let out = params
        .iter()
        .zip(model.params())
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, out))
}

/// Loss value alone, for a fixed set of accepted candidates.
pub fn loss_selected(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid: &TimeGrid,
    config: &TrainConfig,
    bank: &NoiseBank,
    accepted: &[usize],
) -> Result<f64> {
    let loss = selected_loss(&Eager, model, model.params(), x_obs, grid, config, bank, accepted)?;
    loss.item()
}

#[allow(clippy::too_many_arguments)]
fn selected_loss<B: Backend>(
    b: &B,
    model: &MeNodeModel,
    params: &[B::Value],
    x_obs: &Tensor,
    grid: &TimeGrid,
    config: &TrainConfig,
    bank: &NoiseBank,
    accepted: &[usize],
) -> Result<B::Value> {
    if accepted.is_empty() {
        return Err(Error::contract("acceptance set is empty"));
    }
    let cfg = model.config();
    let (nz, nw) = bank.select(accepted)?;
    let (mu, sigma) = model.encode_with(b, params, x_obs)?;
    let (beta, sigma_b) = model.effect_with(b, params)?;
    let (z0, w) = model.sample_with(b, params, &mu, &sigma, &nz, &nw)?;
    let traj = model.rollout_with(b, params, &z0, &w, grid, config.method, false)?;
    let preds = model.decode_traj_with(b, params, &traj)?;
    let ll = model.log_likelihood_with(b, x_obs, &preds)?;

    let prior = |dim: usize, s: f64| {
        (
            b.constant(Tensor::zeros(&[dim])),
            b.constant(Tensor::full(&[dim], s)),
        )
    };
    let (pz_mu, pz_sigma) = prior(cfg.latent_dim, cfg.prior_z0_sigma);
    let (pw_mu, pw_sigma) = prior(cfg.effect_dim, cfg.prior_w_sigma);
    let log_q_z = gaussian_log_density(b, &z0, &mu, &sigma)?;
    let log_p_z = gaussian_log_density(b, &z0, &pz_mu, &pz_sigma)?;
    let log_q_w = gaussian_log_density(b, &w, &beta, &sigma_b)?;
    let log_p_w = gaussian_log_density(b, &w, &pw_mu, &pw_sigma)?;
    let ratio = b.add(&b.sub(&log_q_z, &log_p_z)?, &b.sub(&log_q_w, &log_p_w)?)?;
    let objective = b.sub(&ll, &b.scale(&ratio, config.kl_weight)?)?;
    b.scale(&objective, -1.0 / accepted.len() as f64)
}

/// Scores candidates, forms the acceptance set and evaluates the loss and
/// its gradients for one subject.
pub fn loss_subject(
    model: &MeNodeModel,
    subject_id: u64,
    x_obs: &Tensor,
    grid: &TimeGrid,
    config: &TrainConfig,
    bank: &NoiseBank,
) -> Result<(f64, Vec<Tensor>, AcceptanceRecord)> {
    let distances = candidate_distances(model, x_obs, grid, config.method, bank)?;
    let accepted = select_closest(&distances, config.accept_k);
    if accepted.is_empty() {
        return Err(Error::AllCandidatesDiverged {
            subject: subject_id,
            candidates: distances.len(),
        });
    }
    let epsilon = distances[*accepted.last().unwrap()];
    let (loss, grads) = loss_and_grad_selected(model, x_obs, grid, config, bank, &accepted)?;
    Ok((
        loss,
        grads,
        AcceptanceRecord {
            subject: subject_id,
            distances,
            accepted,
            epsilon,
        },
    ))
}

/// Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adam {
    pub lr: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(Self::BETA1, t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (math::sqrt(v_hat) + Self::EPS);
            }
        }
    }
}

/// `(μ̂, σ̂, β̂, σ̂_b)`; `μ̂` and `σ̂` are averages of the encoder output over
/// the training subjects.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecoveredParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma_b: Vec<f64>,
}

impl RecoveredParams {
    pub fn estimate(model: &MeNodeModel, ds: &PanelDataset) -> Result<Self> {
        let p = model.config().latent_dim;
        let mut mu = vec![0.0; p];
        let mut sigma = vec![0.0; p];
        for s in &ds.subjects {
            let (m, sd) = model.encode(&ds.observed_window(s))?;
            for j in 0..p {
                mu[j] += m.data()[j];
                sigma[j] += sd.data()[j];
            }
        }
        let n = ds.len().max(1) as f64;
        mu.iter_mut().for_each(|v| *v /= n);
        sigma.iter_mut().for_each(|v| *v /= n);
        Ok(RecoveredParams {
            mu,
            sigma,
            beta: model.beta().to_vec(),
            sigma_b: model.sigma_b(),
        })
    }

    /// `(μ̂, σ̂, β̂, σ̂_b)` as a flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend(&self.sigma);
        v.extend(&self.beta);
        v.extend(&self.sigma_b);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean realised `ε` over subjects.
    pub mean_epsilon: f64,
    pub steps: usize,
    pub recovered: Option<RecoveredParams>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Optimiser state plus progress counters; together with the model
/// parameters this is everything needed to resume bit-exactly.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainState {
    pub config: TrainConfig,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig, model: &MeNodeModel) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.learning_rate, model.params());
        Ok(TrainState {
            config,
            adam,
            epoch: 0,
            step: 0,
        })
    }

    /// One pass over `ds` in a seeded shuffled order. Randomness depends only
    /// on `(seed, epoch, subject id)`. On a non-finite loss or gradient the
    /// offending step is not applied and the error is returned.
    pub fn run_epoch(&mut self, model: &mut MeNodeModel, ds: &PanelDataset) -> Result<EpochStats> {
        if ds.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let cfg = self.config.clone();
        let grid = observed_grid(ds, cfg.substeps)?;
        let (p, m) = (model.config().latent_dim, model.config().effect_dim);
        let epoch_seed = rng::derive_seed(cfg.seed, self.epoch as u64);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng::stream(epoch_seed, 0));

        let (mut loss_sum, mut eps_sum, mut steps) = (0.0, 0.0, 0usize);
        for (step_in_epoch, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            let results = par::map(batch, |&i| {
                let s = &ds.subjects[i];
                let mut r = rng::stream(epoch_seed, 1 + s.id);
                let bank = NoiseBank::draw(&mut r, cfg.n_z0, cfg.n_w, p, m);
                let x_obs = ds.observed_window(s);
                loss_subject(model_ref, s.id, &x_obs, &grid, &cfg, &bank)
            });
            let mut grads: Vec<Tensor> = model.params().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut batch_loss = 0.0;
            for res in results {
                let (loss, g, rec) = res?;
                batch_loss += loss;
                eps_sum += rec.epsilon;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= scale));
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: step_in_epoch,
                });
            }
            self.adam.step(model.params_mut(), &grads);
            self.step += 1;
            steps += 1;
            loss_sum += batch_loss;
        }
        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: loss_sum / ds.len() as f64,
            mean_epsilon: eps_sum / ds.len() as f64,
            steps,
            recovered: if model.config().identity_mode {
                Some(RecoveredParams::estimate(model, ds)?)
            } else {
                None
            },
        };
        self.epoch += 1;
        Ok(stats)
    }
}

/// Runs `config.epochs` epochs from a fresh optimiser.
pub fn train(model: &mut MeNodeModel, ds: &PanelDataset, config: &TrainConfig) -> Result<TrainReport> {
    let mut state = TrainState::new(config.clone(), model)?;
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        report.epochs.push(state.run_epoch(model, ds)?);
    }
    Ok(report)
}

/// Finite-difference comparison for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    /// `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
    pub accepted: Vec<usize>,
}

/// Compares tape gradients of the subject loss with central differences
/// (step `h`) for every parameter tensor, holding the acceptance set fixed
/// at the one chosen by the unperturbed model.
pub fn elbo_gradient_check(
    model: &MeNodeModel,
    x_obs: &Tensor,
    grid: &TimeGrid,
    config: &TrainConfig,
    bank: &NoiseBank,
    h: f64,
) -> Result<GradCheckReport> {
    let distances = candidate_distances(model, x_obs, grid, config.method, bank)?;
    let accepted = select_closest(&distances, config.accept_k);
    if accepted.is_empty() {
        return Err(Error::AllCandidatesDiverged {
            subject: 0,
            candidates: distances.len(),
        });
    }
    let (_, tape_grads) = loss_and_grad_selected(model, x_obs, grid, config, bank, &accepted)?;
    let names = model.param_names();
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let n = probe.params()[pi].numel();
        let mut fd = vec![0.0; n];
        for (j, slot) in fd.iter_mut().enumerate() {
            let orig = probe.params()[pi].data()[j];
            probe.params_mut()[pi].data_mut()[j] = orig + h;
            let up = loss_selected(&probe, x_obs, grid, config, bank, &accepted)?;
            probe.params_mut()[pi].data_mut()[j] = orig - h;
            let down = loss_selected(&probe, x_obs, grid, config, bank, &accepted)?;
            probe.params_mut()[pi].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let g = tape_grads[pi].data();
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum();
        let na: f64 = g.iter().map(|a| a * a).sum();
        let nb: f64 = fd.iter().map(|b| b * b).sum();
        let denom = math::sqrt(na.max(nb));
        let rel_error = if denom == 0.0 { 0.0 } else { math::sqrt(diff) / denom };
        groups.push(GroupCheck { name, rel_error });
    }
    let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_error,
        accepted,
    })
}
