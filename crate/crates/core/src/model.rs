//! The mixed-effects neural ODE:
//!
//! ```text
//! (μ, σ) = E(x)            z0 ~ N(μ, σ)
//! w = β + b ~ N(β, Σ_b)    Σ_b diagonal, σ_b = exp(log_sigma_b)
//! ż = Γ(z)·w               Γ(z) ∈ R^{p×m}
//! x_t = D(z_t) + ε_t       ε_t ~ N(0, σ_x²)
//! ```
//!
//! Everything is evaluated on rows: a state tensor `[M, p]` holds `M`
//! candidate trajectories of the same subject at once.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{reparam_sample, Backend, Eager};
use crate::nn::{Activation, Mlp};
use crate::ode::{self, Drift, LatentTrajectory, Method, TimeGrid};
use crate::rng;
use crate::{math, Error, Result, Tensor};

/// How `Γ(z)` is realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DriftKind {
    /// A network mapping `z ∈ R^p` to a `p×m` matrix.
    #[default]
    Mlp,
    /// `Γ(z) = z` (requires `m = 1`), giving `ż = z·w`.
    Linear,
}

impl core::str::FromStr for DriftKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(DriftKind::Mlp),
            "linear" => Ok(DriftKind::Linear),
            other => Err(Error::contract(format!("unknown drift kind {other:?}"))),
        }
    }
}

impl core::fmt::Display for DriftKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            DriftKind::Mlp => "mlp",
            DriftKind::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// `p`
    pub latent_dim: usize,
    /// `m`
    pub effect_dim: usize,
    /// `d`
    pub obs_dim: usize,
    /// Observed time points the encoder sees.
    pub n_obs: usize,
    pub encoder_hidden: Vec<usize>,
    pub gamma_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub drift: DriftKind,
    /// Identity encoder/decoder (`p = d`): `μ` is the first observation and
    /// `σ = exp(log_sigma0)` is a single learnable vector.
    pub identity_mode: bool,
    /// Fixed `σ_x` of the Gaussian likelihood.
    pub obs_sigma: f64,
    pub init_sigma0: f64,
    pub init_beta: f64,
    pub init_sigma_b: f64,
    pub prior_z0_sigma: f64,
    pub prior_w_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            effect_dim: 2,
            obs_dim: 2,
            n_obs: 10,
            encoder_hidden: vec![32],
            gamma_hidden: vec![32],
            decoder_hidden: vec![16],
            activation: Activation::Tanh,
            drift: DriftKind::Mlp,
            identity_mode: false,
            obs_sigma: 0.1,
            init_sigma0: 0.1,
            init_beta: 0.0,
            init_sigma_b: 0.1,
            prior_z0_sigma: 1.0,
            prior_w_sigma: 1.0,
        }
    }
}

impl ModelConfig {
    /// One-dimensional identity-mode model with `Γ(z) = z`, scales
    /// initialised at 0.01.
    pub fn toy() -> Self {
        ModelConfig {
            init_sigma0: 0.01,
            init_sigma_b: 0.01,
            latent_dim: 1,
            effect_dim: 1,
            obs_dim: 1,
            n_obs: 10,
            encoder_hidden: Vec::new(),
            gamma_hidden: Vec::new(),
            decoder_hidden: Vec::new(),
            drift: DriftKind::Linear,
            identity_mode: true,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.effect_dim == 0 || self.obs_dim == 0 {
            return Err(Error::contract("latent, effect and observation dims must be >= 1"));
        }
        if self.n_obs < 2 {
            return Err(Error::contract("encoder needs at least 2 observed points"));
        }
        if self.identity_mode && self.latent_dim != self.obs_dim {
            return Err(Error::contract("identity mode needs latent_dim == obs_dim"));
        }
        if self.drift == DriftKind::Linear && self.effect_dim != 1 {
            return Err(Error::contract("linear drift needs effect_dim == 1"));
        }
        for (name, v) in [
            ("obs_sigma", self.obs_sigma),
            ("init_sigma0", self.init_sigma0),
            ("init_sigma_b", self.init_sigma_b),
            ("prior_z0_sigma", self.prior_z0_sigma),
            ("prior_w_sigma", self.prior_w_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: Option<Mlp>,
    gamma: Option<Mlp>,
    decoder: Option<Mlp>,
    beta: usize,
    log_sigma_b: usize,
    log_sigma0: Option<usize>,
    n_params: usize,
}

impl Layout {
    fn build(c: &ModelConfig) -> Result<Self> {
        let mut next = 0;
        let mut mlp = |input: usize, hidden: &[usize], output: usize| -> Result<Mlp> {
            let mut widths = vec![input];
            widths.extend_from_slice(hidden);
            widths.push(output);
            let m = Mlp::new(next, widths, c.activation)?;
            next += m.n_params();
            Ok(m)
        };
        let encoder = if c.identity_mode {
            None
        } else {
            Some(mlp(c.n_obs * c.obs_dim, &c.encoder_hidden, 2 * c.latent_dim)?)
        };
        let gamma = match c.drift {
            DriftKind::Mlp => Some(mlp(c.latent_dim, &c.gamma_hidden, c.latent_dim * c.effect_dim)?),
            DriftKind::Linear => None,
        };
        let decoder = if c.identity_mode {
            None
        } else {
            Some(mlp(c.latent_dim, &c.decoder_hidden, c.obs_dim)?)
        };
        let beta = next;
        let log_sigma_b = next + 1;
        let mut n_params = next + 2;
        let log_sigma0 = if c.identity_mode {
            n_params += 1;
            Some(next + 2)
        } else {
            None
        };
        Ok(Layout {
            encoder,
            gamma,
            decoder,
            beta,
            log_sigma_b,
            log_sigma0,
            n_params,
        })
    }
}

/// Model hyper-parameters plus a flat, ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct MeNodeModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Tensor>,
}

impl MeNodeModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config)?;
        let mut rng = rng::stream(seed, 0);
        let mut params = Vec::with_capacity(layout.n_params);
        for mlp in [&layout.encoder, &layout.gamma, &layout.decoder].into_iter().flatten() {
            params.extend(mlp.init(&mut rng));
        }
        if let Some(enc) = &layout.encoder {
            // Start the log-σ head at log(init_sigma0) with a damped weight.
            let last = enc.first + 2 * (enc.n_layers() - 1);
            let p = config.latent_dim;
            let (rows, cols) = params[last].dims2();
            let w = params[last].data_mut();
            for r in 0..rows {
                for c in p..cols {
                    w[r * cols + c] *= 0.1;
                }
            }
            let b = params[last + 1].data_mut();
            for v in b[p..].iter_mut() {
                *v = math::ln(config.init_sigma0);
            }
        }
        let m = config.effect_dim;
        params.push(Tensor::full(&[m], config.init_beta));
        params.push(Tensor::full(&[m], math::ln(config.init_sigma_b)));
        if layout.log_sigma0.is_some() {
            params.push(Tensor::full(&[config.latent_dim], math::ln(config.init_sigma0)));
        }
        debug_assert_eq!(params.len(), layout.n_params);
        Ok(MeNodeModel {
            config,
            layout,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config)?;
        if params.len() != layout.n_params {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                layout.n_params,
                params.len()
            )));
        }
        for mlp in [&layout.encoder, &layout.gamma, &layout.decoder].into_iter().flatten() {
            mlp.check_shapes(&params)?;
        }
        let m = config.effect_dim;
        for idx in [layout.beta, layout.log_sigma_b] {
            if params[idx].shape() != [m] {
                return Err(Error::Dimension {
                    op: "mixed effect",
                    lhs: vec![m],
                    rhs: params[idx].shape().to_vec(),
                });
            }
        }
        if let Some(i) = layout.log_sigma0 {
            if params[i].shape() != [config.latent_dim] {
                return Err(Error::Dimension {
                    op: "log_sigma0",
                    lhs: vec![config.latent_dim],
                    rhs: params[i].shape().to_vec(),
                });
            }
        }
        Ok(MeNodeModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.layout.n_params);
        if let Some(m) = &self.layout.encoder {
            names.extend(m.param_names("encoder"));
        }
        if let Some(m) = &self.layout.gamma {
            names.extend(m.param_names("gamma"));
        }
        if let Some(m) = &self.layout.decoder {
            names.extend(m.param_names("decoder"));
        }
        names.push("beta".into());
        names.push("log_sigma_b".into());
        if self.layout.log_sigma0.is_some() {
            names.push("log_sigma0".into());
        }
        names
    }

    /// Fixed effect `β`.
    pub fn beta(&self) -> &[f64] {
        self.params[self.layout.beta].data()
    }

    /// Random-effect scales `σ_b = exp(log_sigma_b)`.
    pub fn sigma_b(&self) -> Vec<f64> {
        self.params[self.layout.log_sigma_b]
            .data()
            .iter()
            .map(|&v| math::exp(v))
            .collect()
    }

    /// Lifts every parameter onto `b` (tracked on a tape).
    pub fn bind<B: Backend>(&self, b: &B) -> Vec<B::Value> {
        self.params.iter().map(|t| b.param(t)).collect()
    }

    /// Identity mode only reads the first row, so any non-empty window works.
    fn check_window(&self, x_obs: &Tensor) -> Result<()> {
        let want = [self.config.n_obs, self.config.obs_dim];
        let ok = if self.config.identity_mode {
            x_obs.shape().len() == 2 && x_obs.shape()[0] >= 1 && x_obs.shape()[1] == want[1]
        } else {
            x_obs.shape() == want
        };
        if !ok {
            return Err(Error::contract(format!(
                "observed window has shape {:?}, expected {:?}",
                x_obs.shape(),
                want
            )));
        }
        Ok(())
    }

    /// `(μ, σ)` of `q(z0)` as `[p]` vectors.
    pub fn encode_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        x_obs: &Tensor,
    ) -> Result<(B::Value, B::Value)> {
        self.check_window(x_obs)?;
        let p = self.config.latent_dim;
        match (&self.layout.encoder, self.layout.log_sigma0) {
            (Some(enc), _) => {
                let flat = x_obs.reshape(&[1, x_obs.numel()])?;
                let input = b.constant(flat);
                let out = enc.forward(b, params, &input)?;
                let mu = b.reshape(&b.slice_cols(&out, 0, p)?, &[p])?;
                let log_sigma = b.reshape(&b.slice_cols(&out, p, p)?, &[p])?;
                Ok((mu, b.exp(&log_sigma)?))
            }
            (None, Some(ls)) => {
                let mu = b.constant(Tensor::vector(x_obs.row(0).to_vec()));
                Ok((mu, b.exp(&params[ls])?))
            }
            (None, None) => unreachable!("identity mode always carries log_sigma0"),
        }
    }

    /// `(β, σ_b)` as `[m]` vectors.
    pub fn effect_with<B: Backend>(&self, b: &B, params: &[B::Value]) -> Result<(B::Value, B::Value)> {
        let beta = params[self.layout.beta].clone();
        let sigma_b = b.exp(&params[self.layout.log_sigma_b])?;
        Ok((beta, sigma_b))
    }

    /// `Γ(z)·w` for `z: [M, p]`, `w: [M, m]`.
    pub fn drift_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        z: &B::Value,
        w: &B::Value,
    ) -> Result<B::Value> {
        match &self.layout.gamma {
            Some(g) => {
                let gamma = g.forward(b, params, z)?;
                b.rowwise_matvec(&gamma, w)
            }
            None => b.rowwise_matvec(z, w),
        }
    }

    /// `D(z)` for `z: [M, p]`, giving `[M, d]`.
    pub fn decode_state_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        z: &B::Value,
    ) -> Result<B::Value> {
        match &self.layout.decoder {
            Some(d) => d.forward(b, params, z),
            None => Ok(z.clone()),
        }
    }

    /// Reparameterised `(z0, w)` rows for the given standard-normal noise.
    pub fn sample_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        mu: &B::Value,
        sigma: &B::Value,
        noise_z0: &Tensor,
        noise_w: &Tensor,
    ) -> Result<(B::Value, B::Value)> {
        let (p, m) = (self.config.latent_dim, self.config.effect_dim);
        if noise_z0.dims2().1 != p || noise_w.dims2().1 != m || noise_z0.dims2().0 != noise_w.dims2().0 {
            return Err(Error::Dimension {
                op: "sample",
                lhs: noise_z0.shape().to_vec(),
                rhs: noise_w.shape().to_vec(),
            });
        }
        let (beta, sigma_b) = self.effect_with(b, params)?;
        let rows = noise_z0.dims2().0;
        let z0 = reparam_sample(b, mu, sigma, &noise_z0.reshape(&[rows, p])?)?;
        let w = reparam_sample(b, &beta, &sigma_b, &noise_w.reshape(&[rows, m])?)?;
        Ok((z0, w))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rollout_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        z0: &B::Value,
        w: &B::Value,
        grid: &TimeGrid,
        method: Method,
        strict: bool,
    ) -> Result<LatentTrajectory<B::Value>> {
        let drift = ModelDrift { model: self, params };
        if strict {
            ode::integrate(b, &drift, z0, w, grid, method)
        } else {
            ode::integrate_lenient(b, &drift, z0, w, grid, method)
        }
    }

    pub(crate) fn decode_traj_with<B: Backend>(
        &self,
        b: &B,
        params: &[B::Value],
        traj: &LatentTrajectory<B::Value>,
    ) -> Result<Vec<B::Value>> {
        traj.states
            .iter()
            .map(|z| self.decode_state_with(b, params, z))
            .collect()
    }

    /// Gaussian `log p(x | z, w)` summed over all rows and times. Each
    /// `preds[t]` is `[M, d]` and is compared with row `t` of `x_obs`.
    pub fn log_likelihood_with<B: Backend>(
        &self,
        b: &B,
        x_obs: &Tensor,
        preds: &[B::Value],
    ) -> Result<B::Value> {
        let d = self.config.obs_dim;
        let s = self.config.obs_sigma;
        let mut total: Option<B::Value> = None;
        let mut n = 0usize;
        for (t, pred) in preds.iter().enumerate() {
            let neg_x = b.constant(Tensor::vector(x_obs.row(t).iter().map(|v| -v).collect()));
            let resid = b.add_row(pred, &neg_x)?;
            n += b.with_value(&resid, Tensor::numel);
            let sq = b.sum(&b.square(&resid)?)?;
            total = Some(match total {
                None => sq,
                Some(acc) => b.add(&acc, &sq)?,
            });
        }
        let total = total.ok_or_else(|| Error::contract("empty prediction sequence"))?;
        debug_assert_eq!(n % d, 0);
        let scaled = b.scale(&total, -1.0 / (2.0 * s * s))?;
        b.add_scalar(&scaled, -(n as f64) * math::ln(s * math::sqrt(2.0 * core::f64::consts::PI)))
    }

    // ---- eager conveniences ----

    pub fn encode(&self, x_obs: &Tensor) -> Result<(Tensor, Tensor)> {
        self.encode_with(&Eager, &self.params, x_obs)
    }

    /// One subject draw: `z0 = μ + σ⊙noise_z0`, `w = β + σ_b⊙noise_w`, and
    /// the latent trajectory over `grid` (states are `[1, p]`).
    pub fn sample_subject(
        &self,
        x_obs: &Tensor,
        grid: &TimeGrid,
        method: Method,
        noise_z0: &[f64],
        noise_w: &[f64],
    ) -> Result<(Tensor, Tensor, LatentTrajectory<Tensor>)> {
        let (mu, sigma) = self.encode(x_obs)?;
        let nz = Tensor::matrix(1, noise_z0.len(), noise_z0.to_vec());
        let nw = Tensor::matrix(1, noise_w.len(), noise_w.to_vec());
        let (z0, w) = self.sample_with(&Eager, &self.params, &mu, &sigma, &nz, &nw)?;
        let traj = self.rollout_with(&Eager, &self.params, &z0, &w, grid, method, true)?;
        Ok((z0, w, traj))
    }

    /// Decodes every state of a trajectory; returns `[T, d]` for single-row
    /// trajectories (rows are stacked in time order otherwise).
    pub fn decode(&self, traj: &LatentTrajectory<Tensor>) -> Result<Tensor> {
        let decoded = self.decode_traj_with(&Eager, &self.params, traj)?;
        stack_rows(&decoded)
    }

    /// `−Σ(x_obs − x_pred)²/(2σ_x²) − N·log(σ_x√(2π))`.
    pub fn log_likelihood(&self, x_obs: &Tensor, x_pred: &Tensor) -> Result<f64> {
        log_likelihood(x_obs, x_pred, self.config.obs_sigma)
    }
}

/// Gaussian log-likelihood with fixed `σ_x` for same-shaped sequences.
pub fn log_likelihood(x_obs: &Tensor, x_pred: &Tensor, obs_sigma: f64) -> Result<f64> {
    if x_obs.shape() != x_pred.shape() {
        return Err(Error::contract(format!(
            "log_likelihood: shapes {:?} and {:?} differ",
            x_obs.shape(),
            x_pred.shape()
        )));
    }
    let sq: f64 = x_obs
        .data()
        .iter()
        .zip(x_pred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let n = x_obs.numel() as f64;
    Ok(-sq / (2.0 * obs_sigma * obs_sigma)
        - n * math::ln(obs_sigma * math::sqrt(2.0 * core::f64::consts::PI)))
}

/// Concatenates `[r_i, c]` tensors along rows.
pub(crate) fn stack_rows(parts: &[Tensor]) -> Result<Tensor> {
    let cols = parts.first().map(|t| t.dims2().1).unwrap_or(0);
    let mut data = Vec::new();
    let mut rows = 0;
    for t in parts {
        let (r, c) = t.dims2();
        if c != cols {
            return Err(Error::Dimension {
                op: "stack_rows",
                lhs: vec![cols],
                rhs: t.shape().to_vec(),
            });
        }
        rows += r;
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![rows, cols], data)
}

struct ModelDrift<'a, V> {
    model: &'a MeNodeModel,
    params: &'a [V],
}

impl<B: Backend> Drift<B> for ModelDrift<'_, B::Value> {
    fn eval(&self, b: &B, z: &B::Value, w: &B::Value, _t: f64) -> Result<B::Value> {
        self.model.drift_with(b, self.params, z, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_window(x0: f64) -> Tensor {
        Tensor::matrix(10, 1, (0..10).map(|k| x0 * (0.3 * k as f64 / 6.0).exp()).collect())
    }

    #[test]
    fn identity_encoder_uses_first_point() {
        let model = MeNodeModel::new(ModelConfig::toy(), 0).unwrap();
        let (mu, sigma) = model.encode(&toy_window(1.3)).unwrap();
        assert_eq!(mu.data(), &[1.3]);
        assert!((sigma.data()[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn wrong_window_length_is_contract_error() {
        let model = MeNodeModel::new(ModelConfig::toy(), 0).unwrap();
        let short = Tensor::matrix(1, 3, vec![1.0, 1.1, 1.2]);
        assert!(matches!(model.encode(&short), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_weight_encoder_returns_bias() {
        let cfg = ModelConfig {
            latent_dim: 2,
            obs_dim: 1,
            ..ModelConfig::default()
        };
        let mut model = MeNodeModel::new(cfg, 3).unwrap();
        let names = model.param_names();
        for (t, name) in model.params_mut().iter_mut().zip(&names) {
            if name.starts_with("encoder") {
                let is_last_bias = name == "encoder.1.bias";
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = if is_last_bias { 0.1 * (i as f64 + 1.0) } else { 0.0 };
                }
            }
        }
        let (mu, sigma) = model.encode(&Tensor::full(&[10, 1], 2.0)).unwrap();
        assert_eq!(mu.data(), &[0.1, 0.2]);
        assert!((sigma.data()[0] - 0.3f64.exp()).abs() < 1e-15);
        assert!((sigma.data()[1] - 0.4f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_gives_mean_trajectory() {
        let mut model = MeNodeModel::new(ModelConfig::toy(), 0).unwrap();
        model.params_mut()[0] = Tensor::vector(vec![0.3]);
        let grid = TimeGrid::uniform(0.0, 3.0, 20, 60).unwrap();
        let (z0, w, traj) = model
            .sample_subject(&toy_window(1.3), &grid, Method::Rk4, &[0.0], &[0.0])
            .unwrap();
        assert_eq!(z0.data(), &[1.3]);
        assert_eq!(w.data(), &[0.3]);
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = 1.3 * (0.3 * t).exp();
            assert!((s.data()[0] - exact).abs() < 1e-6, "t = {t}");
        }
        let decoded = model.decode(&traj).unwrap();
        assert_eq!(decoded.shape(), &[20, 1]);
        assert_eq!(decoded.data()[5], traj.states[5].data()[0]);
    }

    #[test]
    fn different_effects_from_same_start_differ() {
        let model = MeNodeModel::new(ModelConfig::toy(), 0).unwrap();
        let grid = TimeGrid::uniform(0.0, 3.0, 20, 3).unwrap();
        let x = toy_window(1.3);
        let (_, _, a) = model.sample_subject(&x, &grid, Method::Rk4, &[0.0], &[0.5]).unwrap();
        let (_, _, b) = model.sample_subject(&x, &grid, Method::Rk4, &[0.0], &[-0.5]).unwrap();
        assert_eq!(a.states[0], b.states[0]);
        assert_ne!(a.last(), b.last());
    }

    #[test]
    fn zero_weight_decoder_is_constant() {
        let mut model = MeNodeModel::new(ModelConfig::default(), 5).unwrap();
        let names = model.param_names();
        for (t, name) in model.params_mut().iter_mut().zip(&names) {
            if name.starts_with("decoder") {
                let bias = name.ends_with("bias") && name.starts_with("decoder.1");
                for v in t.data_mut() {
                    *v = if bias { 0.7 } else { 0.0 };
                }
            }
        }
        let grid = TimeGrid::uniform(0.0, 1.0, 10, 2).unwrap();
        let x = Tensor::full(&[10, 2], 0.5);
        let (_, _, traj) = model.sample_subject(&x, &grid, Method::Rk4, &[0.1, 0.2], &[0.3, -0.1]).unwrap();
        let out = model.decode(&traj).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn likelihood_values() {
        let x = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]);
        let norm = -(0.1 * (2.0 * core::f64::consts::PI).sqrt()).ln();
        assert!((log_likelihood(&x, &x, 0.1).unwrap() - 3.0 * norm).abs() < 1e-12);

        let a = Tensor::scalar(0.1);
        let z = Tensor::scalar(0.0);
        let v = log_likelihood(&a, &z, 0.1).unwrap();
        assert!((v - (-0.5 + norm)).abs() < 1e-12);
        assert!((v - 0.883_646_9).abs() < 1e-6);

        let pred = Tensor::matrix(3, 1, vec![1.1, 1.8, 3.3]);
        let pred2 = Tensor::matrix(3, 1, vec![1.2, 1.6, 3.6]);
        let q1 = log_likelihood(&x, &pred, 0.1).unwrap() - 3.0 * norm;
        let q2 = log_likelihood(&x, &pred2, 0.1).unwrap() - 3.0 * norm;
        assert!((q2 - 4.0 * q1).abs() < 1e-9);
        assert!(((q2 - q1) - 3.0 * q1).abs() < 1e-9);

        assert!(matches!(
            log_likelihood(&x, &Tensor::zeros(&[2, 1]), 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn from_params_round_trip_and_shape_check() {
        let model = MeNodeModel::new(ModelConfig::default(), 9).unwrap();
        let again = MeNodeModel::from_params(model.config().clone(), model.params().to_vec()).unwrap();
        assert_eq!(again, model);
        let mut bad = model.params().to_vec();
        bad.pop();
        assert!(MeNodeModel::from_params(model.config().clone(), bad).is_err());
    }
}
