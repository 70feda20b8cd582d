//! Evaluation summaries and their text/CSV renderings.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use menode_core::metrics::{PermStatistic, StepMse};
use menode_core::train::RecoveredParams;

use crate::csv_io::fmt_f64;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSummary {
    pub group_a: u32,
    pub group_b: u32,
    pub n_a: usize,
    pub n_b: usize,
    pub n_perms: usize,
    pub statistic: PermStatistic,
    pub observed: Vec<f64>,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_train: usize,
    pub n_test: usize,
    pub interp_times: Vec<f64>,
    pub extrap_times: Vec<f64>,
    /// Calibrated predictions on the test subjects.
    pub interp: StepMse,
    pub extrap: StepMse,
    pub mean_calibration_mse: f64,
    pub recovered: Option<RecoveredParams>,
    /// Sample moments of the ground-truth columns.
    pub truth: Option<RecoveredParams>,
    pub param_mse: Option<f64>,
    /// Mean-trajectory reconstruction over the training subjects' observed window.
    pub recon_mse: f64,
    pub permutation: Option<PermutationSummary>,
}

fn vec_str(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "\n[per_step_mse]");
        let _ = writeln!(s, "interp_overall = {}", fmt_f64(self.interp.overall()));
        let _ = writeln!(s, "extrap_overall = {}", fmt_f64(self.extrap.overall()));
        let _ = writeln!(s, "mean_calibration_mse = {}", fmt_f64(self.mean_calibration_mse));
        for (name, times, st) in [
            ("interp", &self.interp_times, &self.interp),
            ("extrap", &self.extrap_times, &self.extrap),
        ] {
            for (k, t) in times.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{name}[{k}] t={} mean={} std={}",
                    fmt_f64(*t),
                    fmt_f64(st.mean[k]),
                    fmt_f64(st.std[k])
                );
            }
        }
        let _ = writeln!(s, "\n[parameters]");
        match &self.recovered {
            Some(r) => {
                for (name, v) in [("mu", &r.mu), ("sigma", &r.sigma), ("beta", &r.beta), ("sigma_b", &r.sigma_b)] {
                    let _ = writeln!(s, "{name} = {}", vec_str(v));
                }
            }
            None => {
                let _ = writeln!(s, "recovered = n/a");
            }
        }
        if let Some(t) = &self.truth {
            for (name, v) in [("mu", &t.mu), ("sigma", &t.sigma), ("beta", &t.beta), ("sigma_b", &t.sigma_b)] {
                let _ = writeln!(s, "true_{name} = {}", vec_str(v));
            }
        }
        let _ = writeln!(
            s,
            "param_mse = {}",
            self.param_mse.map_or_else(|| "n/a".to_string(), fmt_f64)
        );
        let _ = writeln!(s, "recon_mse = {}", fmt_f64(self.recon_mse));
        let _ = writeln!(s, "\n[permutation]");
        match &self.permutation {
            Some(p) => {
                let _ = writeln!(s, "groups = {} {}", p.group_a, p.group_b);
                let _ = writeln!(s, "sizes = {} {}", p.n_a, p.n_b);
                let _ = writeln!(s, "n_perms = {}", p.n_perms);
                let stat = match p.statistic {
                    PermStatistic::PerStep => "per_step",
                    PermStatistic::Aggregate => "aggregate",
                };
                let _ = writeln!(s, "statistic = {stat}");
                let _ = writeln!(s, "observed = {}", vec_str(&p.observed));
                let _ = writeln!(s, "p_values = {}", vec_str(&p.p_values));
            }
            None => {
                let _ = writeln!(s, "p_values = n/a (needs two groups with at least 2 test subjects)");
            }
        }
        s
    }

    pub fn write_per_step_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "split,step,time,mean,std")?;
        let mut step = 0;
        for (name, times, st) in [
            ("interp", &self.interp_times, &self.interp),
            ("extrap", &self.extrap_times, &self.extrap),
        ] {
            for (k, t) in times.iter().enumerate() {
                writeln!(f, "{name},{step},{},{},{}", fmt_f64(*t), fmt_f64(st.mean[k]), fmt_f64(st.std[k]))?;
                step += 1;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Empty apart from the header when no test was run.
    pub fn write_pvalues_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,time,split,observed,p_value")?;
        if let Some(p) = &self.permutation {
            let times: Vec<f64> = self.interp_times.iter().chain(&self.extrap_times).copied().collect();
            match p.statistic {
                PermStatistic::PerStep => {
                    for (k, (o, pv)) in p.observed.iter().zip(&p.p_values).enumerate() {
                        let split = if k < self.interp_times.len() { "interp" } else { "extrap" };
                        writeln!(f, "{k},{},{split},{},{}", fmt_f64(times[k]), fmt_f64(*o), fmt_f64(*pv))?;
                    }
                }
                PermStatistic::Aggregate => {
                    writeln!(f, "all,,all,{},{}", fmt_f64(p.observed[0]), fmt_f64(p.p_values[0]))?;
                }
            }
        }
        f.flush()?;
        Ok(())
    }
}
