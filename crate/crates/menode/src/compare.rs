//! Stratonovich SDE versus mixed-effects ODE moment curves for scalar
//! coefficients `f(z) = c + a·z`, `g(z) = k + s·z`.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use menode_core::ode::{Method, TimeGrid};
use menode_core::rng;
use menode_core::sde::{stratonovich_ensemble, wong_zakai_ensemble, EnsembleMoments};

use crate::csv_io::fmt_f64;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coef {
    Zero,
    Const(f64),
    Linear(f64),
}

impl Coef {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Coef::Zero => 0.0,
            Coef::Const(c) => c,
            Coef::Linear(a) => a * z,
        }
    }

    /// `(constant, slope)`
    fn affine(self) -> (f64, f64) {
        match self {
            Coef::Zero => (0.0, 0.0),
            Coef::Const(c) => (c, 0.0),
            Coef::Linear(a) => (0.0, a),
        }
    }
}

impl FromStr for Coef {
    type Err = AppError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || AppError::Usage(format!("coefficient must be zero, const:<a> or linear:<a>, got {s:?}"));
        if s == "zero" {
            return Ok(Coef::Zero);
        }
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = v.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        match kind {
            "const" => Ok(Coef::Const(v)),
            "linear" => Ok(Coef::Linear(v)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exact {
    pub me_mean: f64,
    pub me_var: f64,
    pub sde_mean: f64,
    pub sde_var: f64,
}

/// Closed-form moments at time `t`, when known: `f` and `g` both linear, or
/// `g` constant with `f` linear or constant.
pub fn exact_moments(f: Coef, g: Coef, z0: f64, t: f64) -> Option<Exact> {
    let (c, a) = f.affine();
    let (k, s) = g.affine();
    if c == 0.0 && k == 0.0 {
        let e = (a * t).exp();
        let (me2, sde2) = (s * s * t * t, s * s * t);
        return Some(Exact {
            me_mean: z0 * e * (0.5 * me2).exp(),
            me_var: z0 * z0 * e * e * ((2.0 * me2).exp() - me2.exp()),
            sde_mean: z0 * e * (0.5 * sde2).exp(),
            sde_var: z0 * z0 * e * e * ((2.0 * sde2).exp() - sde2.exp()),
        });
    }
    if s == 0.0 && a == 0.0 {
        return Some(Exact {
            me_mean: z0 + c * t,
            me_var: k * k * t * t,
            sde_mean: z0 + c * t,
            sde_var: k * k * t,
        });
    }
    if s == 0.0 && c == 0.0 {
        let e = (a * t).exp();
        return Some(Exact {
            me_mean: z0 * e,
            me_var: k * k * (e - 1.0) * (e - 1.0) / (a * a),
            sde_mean: z0 * e,
            sde_var: k * k * (e * e - 1.0) / (2.0 * a),
        });
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub f: Coef,
    pub g: Coef,
    pub z0: f64,
    pub sde: EnsembleMoments,
    pub me: EnsembleMoments,
    pub exact: Vec<Option<Exact>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareSettings {
    pub z0: f64,
    pub t_max: f64,
    pub n_times: usize,
    pub n_paths: usize,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            z0: 1.3,
            t_max: 3.0,
            n_times: 4,
            n_paths: 10_000,
            substeps: 100,
            seed: 0,
        }
    }
}

pub fn compare(f: Coef, g: Coef, s: &CompareSettings) -> Result<Comparison> {
    if s.n_paths < 2 {
        return Err(AppError::Usage("n_paths must be >= 2".into()));
    }
    let grid = TimeGrid::uniform(0.0, s.t_max, s.n_times, s.substeps)?;
    let me = wong_zakai_ensemble(
        |z, _| f.eval(z),
        |z, _| g.eval(z),
        s.z0,
        &grid,
        s.n_paths,
        s.seed,
        Method::Rk4,
    )?;
    let sde = stratonovich_ensemble(
        |z, _| f.eval(z),
        |z, _| g.eval(z),
        s.z0,
        &grid,
        s.n_paths,
        rng::derive_seed(s.seed, u64::MAX),
    )?;
    let exact = grid.times().iter().map(|&t| exact_moments(f, g, s.z0, t)).collect();
    Ok(Comparison {
        f,
        g,
        z0: s.z0,
        sde,
        me,
        exact,
    })
}

const HEADER: [&str; 11] = [
    "time",
    "sde_mean",
    "sde_var",
    "sde_se",
    "me_mean",
    "me_var",
    "me_se",
    "exact_sde_mean",
    "exact_sde_var",
    "exact_me_mean",
    "exact_me_var",
];

impl Comparison {
    fn rows(&self) -> Vec<Vec<String>> {
        let (sse, mse) = (self.sde.std_err(), self.me.std_err());
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_f64);
        (0..self.me.times.len())
            .map(|k| {
                let e = self.exact[k];
                vec![
                    fmt_f64(self.me.times[k]),
                    fmt_f64(self.sde.mean[k]),
                    fmt_f64(self.sde.var[k]),
                    fmt_f64(sse[k]),
                    fmt_f64(self.me.mean[k]),
                    fmt_f64(self.me.var[k]),
                    fmt_f64(mse[k]),
                    opt(e.map(|e| e.sde_mean)),
                    opt(e.map(|e| e.sde_var)),
                    opt(e.map(|e| e.me_mean)),
                    opt(e.map(|e| e.me_var)),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", HEADER.join(","))?;
        for r in self.rows() {
            writeln!(f, "{}", r.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Whitespace-aligned table; missing closed forms print as `n/a`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# diverged paths: sde {}/{}, me {}/{}\n",
            self.sde.n_diverged, self.sde.n_paths, self.me.n_diverged, self.me.n_paths
        ));
        out.push_str(&HEADER.iter().map(|h| format!("{h:>24}")).collect::<String>());
        out.push('\n');
        for r in self.rows() {
            for v in r {
                let v = if v.is_empty() { "n/a".to_string() } else { v };
                out.push_str(&format!("{v:>24}"));
            }
            out.push('\n');
        }
        out
    }
}
