//! Command-line surface.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use menode_core::data::{
    generate_grouped_2d_with, generate_toy, Grouped2dSpec, PanelDataset, ToySpec,
};
use menode_core::metrics::PermStatistic;
use menode_core::model::{DriftKind, MeNodeModel, ModelConfig};
use menode_core::ode::{Method, TimeGrid};
use menode_core::rng;
use menode_core::train::{elbo_gradient_check, EpochStats, NoiseBank, TrainConfig, TrainState};
use menode_core::Error as CoreError;

use crate::checkpoint;
use crate::compare::{compare, Coef, CompareSettings};
use crate::config::{field_names, ConfigFile};
use crate::csv_io::{fmt_f64, read_csv_path, write_csv_path};
use crate::error::{AppError, Result};
use crate::eval::{calibrate_all, evaluate, EvalOptions};

#[derive(Debug, Parser)]
#[command(name = "menode", version, about = "Mixed-effects neural ODEs for panel data")]
pub struct Cli {
    /// Master seed; required by `generate` and `train`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic panel dataset as CSV.
    Generate(GenerateArgs),
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Personalise a trained model to each subject and write predictions.
    Calibrate(CalibrateArgs),
    /// Score calibrated predictions and write a report plus tidy CSVs.
    Evaluate(EvaluateArgs),
    /// Compare Stratonovich SDE and random-effect ODE moments.
    SdeCompare(SdeCompareArgs),
    /// Check loss gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Toy,
    Grouped2d,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    /// Grouped preset only: 1, 2, 4 or 8.
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    /// Identity encoder and decoder with `Γ(z) = z`.
    #[arg(long)]
    pub identity_mode: bool,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub effect_dim: Option<usize>,
    /// Width of the single hidden layer of every network.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub drift: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the epoch log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub n_z0: Option<usize>,
    #[arg(long)]
    pub n_w: Option<usize>,
    #[arg(long)]
    pub accept_k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub substeps: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Calibrate every subject instead of the held-out ones.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub substeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub n_perms: Option<usize>,
    /// One p-value for the summed per-step distances.
    #[arg(long)]
    pub aggregate: bool,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Paths per ensemble for the moment curves of a scalar identity-mode model.
    #[arg(long)]
    pub sde_paths: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub substeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SdeCompareArgs {
    /// `zero`, `const:<a>` or `linear:<a>`
    #[arg(long, default_value = "linear:0.3")]
    pub f: String,
    #[arg(long, default_value = "linear:0.1")]
    pub g: String,
    #[arg(long, default_value_t = 1.3)]
    pub z0: f64,
    #[arg(long, default_value_t = 3.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 4)]
    pub n_times: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 100)]
    pub substeps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Check a trained model instead of a fresh one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub model_flags: ModelFlags,
    /// Index of the subject in the file.
    #[arg(long, default_value_t = 0)]
    pub subject: usize,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub n_z0: usize,
    #[arg(long, default_value_t = 2)]
    pub n_w: usize,
    #[arg(long, default_value_t = 1)]
    pub accept_k: usize,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MENODE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| AppError::Usage(format!("MENODE_THREADS must be a positive integer, got {v:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn known_keys() -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    keys.extend(field_names(&TrainConfig::default()));
    keys.extend(field_names(&ModelConfig::default()));
    keys.extend(field_names(&ToySpec::default()));
    keys.extend(field_names(&Grouped2dSpec::separated_pair(1)));
    keys
}

struct Ctx {
    seed: Option<u64>,
    cfg: ConfigFile,
}

impl Ctx {
    fn require_seed(&self, cmd: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| AppError::Usage(format!("{cmd} requires --seed")))
    }

    fn train_frac(&self, flag: Option<f64>) -> Result<f64> {
        let f = match flag {
            Some(f) => f,
            None => self.cfg.get_parsed("train_frac")?.unwrap_or(0.8),
        };
        if !(0.0..=1.0).contains(&f) {
            return Err(AppError::Usage(format!("train_frac must lie in [0, 1], got {f}")));
        }
        Ok(f)
    }

    fn method(&self, flag: Option<&str>) -> Result<Method> {
        match flag.or(self.cfg.get("method")) {
            None => Ok(Method::Rk4),
            Some(s) => s.parse().map_err(|e: CoreError| AppError::Usage(e.to_string())),
        }
    }

    fn substeps(&self, flag: Option<usize>) -> Result<usize> {
        let s = match flag {
            Some(s) => s,
            None => self.cfg.get_parsed("substeps")?.unwrap_or(3),
        };
        if s == 0 {
            return Err(AppError::Usage("substeps must be >= 1".into()));
        }
        Ok(s)
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    cfg.check_keys(&known_keys())?;
    let ctx = Ctx { seed: cli.seed, cfg };
    match cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a, out),
        Command::Train(a) => cmd_train(&ctx, a, out),
        Command::Calibrate(a) => cmd_calibrate(&ctx, a, out),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a, out),
        Command::SdeCompare(a) => cmd_sde_compare(&ctx, a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&ctx, a, out),
    }
}

fn usage(e: CoreError) -> AppError {
    AppError::Usage(e.to_string())
}

fn cmd_generate(ctx: &Ctx, a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let seed = ctx.require_seed("generate")?;
    let ds = match a.preset {
        Preset::Toy => {
            if a.groups.is_some() {
                return Err(AppError::Usage("--groups applies to the grouped2d preset".into()));
            }
            let mut spec: ToySpec = ctx.cfg.overlay(&ToySpec::default())?;
            if let Some(n) = a.n_subjects {
                spec.n_subjects = n;
            }
            spec.validate().map_err(usage)?;
            generate_toy(&spec, seed)?
        }
        Preset::Grouped2d => {
            let n_groups = match a.groups {
                Some(g) => g,
                None => ctx.cfg.get_parsed("n_groups")?.unwrap_or(2),
            };
            let base = if n_groups == 2 {
                Grouped2dSpec::separated_pair(250)
            } else {
                Grouped2dSpec::with_groups(n_groups, 250).map_err(usage)?
            };
            let mut spec: Grouped2dSpec = ctx.cfg.overlay(&base)?;
            if let Some(n) = a.n_subjects {
                spec.n_subjects = n;
            }
            spec.validate().map_err(usage)?;
            generate_grouped_2d_with(&spec, seed)?
        }
    };
    write_csv_path(&ds, &a.out)?;
    writeln!(out, "wrote {} subjects x {} times to {}", ds.len(), ds.n_times(), a.out.display())?;
    Ok(())
}

fn build_model_config(ctx: &Ctx, ds: &PanelDataset, flags: &ModelFlags) -> Result<ModelConfig> {
    let identity = flags.identity_mode || ctx.cfg.get_parsed::<bool>("identity_mode")?.unwrap_or(false);
    let base = if identity { ModelConfig::toy() } else { ModelConfig::default() };
    let mut mc: ModelConfig = ctx.cfg.overlay(&base)?;
    mc.identity_mode = identity;
    mc.obs_dim = ds.obs_dim;
    mc.n_obs = ds.split;
    if identity {
        mc.latent_dim = ds.obs_dim;
    }
    if let Some(p) = flags.latent_dim {
        mc.latent_dim = p;
    }
    if let Some(m) = flags.effect_dim {
        mc.effect_dim = m;
    }
    if let Some(h) = flags.hidden {
        mc.encoder_hidden = vec![h];
        mc.gamma_hidden = vec![h];
        mc.decoder_hidden = vec![h];
    }
    if let Some(d) = &flags.drift {
        mc.drift = d.parse::<DriftKind>().map_err(usage)?;
    }
    mc.validate().map_err(usage)?;
    Ok(mc)
}

fn train_split(ds: &PanelDataset, frac: f64) -> Result<(PanelDataset, PanelDataset)> {
    ds.train_test_split(frac).map_err(usage)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

/// One deterministic log line per epoch.
pub fn epoch_line(s: &EpochStats, total: usize) -> String {
    let mut line = format!(
        "epoch {}/{} loss {:.6e} eps {:.6e} steps {}",
        s.epoch + 1,
        total,
        s.mean_loss,
        s.mean_epsilon,
        s.steps
    );
    if let Some(r) = &s.recovered {
        line.push_str(&format!(
            " mu {} sigma {} beta {} sigma_b {}",
            fmt_vec(&r.mu),
            fmt_vec(&r.sigma),
            fmt_vec(&r.beta),
            fmt_vec(&r.sigma_b)
        ));
    }
    line
}

fn cmd_train(ctx: &Ctx, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let seed = ctx.require_seed("train")?;
    let ds = read_csv_path(&a.data)?;
    let frac = ctx.train_frac(a.train_frac)?;
    let (train, _) = train_split(&ds, frac)?;
    if train.is_empty() {
        return Err(AppError::Data("no training subjects".into()));
    }

    let (mut model, mut state) = match &a.resume {
        Some(path) => {
            let fixed = a.n_z0.is_some()
                || a.n_w.is_some()
                || a.accept_k.is_some()
                || a.lr.is_some()
                || a.batch_size.is_some()
                || a.kl_weight.is_some()
                || a.method.is_some()
                || a.substeps.is_some();
            if fixed {
                return Err(AppError::Usage("only --epochs may change when resuming".into()));
            }
            let ck = checkpoint::load(path)?;
            let state = ck
                .train
                .ok_or_else(|| AppError::Data(format!("{} holds no training state", path.display())))?;
            if state.config.seed != seed {
                return Err(AppError::Usage(format!(
                    "--seed {seed} differs from the checkpoint's seed {}",
                    state.config.seed
                )));
            }
            if ck.model.config().obs_dim != ds.obs_dim || ck.model.config().n_obs != ds.split {
                return Err(AppError::Data("checkpoint does not match the dataset's shape".into()));
            }
            (ck.model, state)
        }
        None => {
            let mc = build_model_config(ctx, &ds, &a.model)?;
            let mut tc: TrainConfig = ctx.cfg.overlay(&TrainConfig::default())?;
            tc.seed = seed;
            tc.n_z0 = a.n_z0.unwrap_or(tc.n_z0);
            tc.n_w = a.n_w.unwrap_or(tc.n_w);
            tc.accept_k = a.accept_k.unwrap_or(tc.accept_k);
            tc.learning_rate = a.lr.unwrap_or(tc.learning_rate);
            tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
            tc.kl_weight = a.kl_weight.unwrap_or(tc.kl_weight);
            if let Some(m) = &a.method {
                tc.method = m.parse().map_err(usage)?;
            }
            tc.substeps = a.substeps.unwrap_or(tc.substeps);
            tc.validate().map_err(usage)?;
            let model = MeNodeModel::new(mc, seed).map_err(usage)?;
            let state = TrainState::new(tc, &model).map_err(usage)?;
            (model, state)
        }
    };
    if let Some(e) = a.epochs {
        state.config.epochs = e;
    }

    let mut log = match &a.log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(a.resume.is_some())
                .truncate(a.resume.is_none())
                .open(p)?,
        ),
        None => None,
    };
    let total = state.config.epochs;
    while state.epoch < total {
        let started = Instant::now();
        match state.run_epoch(&mut model, &train) {
            Ok(stats) => {
                let line = epoch_line(&stats, total);
                writeln!(out, "{line}")?;
                if let Some(f) = log.as_mut() {
                    writeln!(f, "{line}")?;
                }
                eprintln!("epoch {} took {:.3}s", stats.epoch + 1, started.elapsed().as_secs_f64());
            }
            Err(e) if e.is_divergence() => {
                checkpoint::save(&a.out, &model, Some(&state))?;
                return Err(AppError::Divergence(format!(
                    "{e}; last good parameters saved to {}",
                    a.out.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
    }
    checkpoint::save(&a.out, &model, Some(&state))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<MeNodeModel> {
    Ok(checkpoint::load(path)?.model)
}

fn check_shape(model: &MeNodeModel, ds: &PanelDataset) -> Result<()> {
    let c = model.config();
    if c.obs_dim != ds.obs_dim {
        return Err(AppError::Data(format!(
            "model expects {} observed dimensions, data has {}",
            c.obs_dim, ds.obs_dim
        )));
    }
    if !c.identity_mode && c.n_obs != ds.split {
        return Err(AppError::Data(format!(
            "model expects {} observed times, data has {}",
            c.n_obs, ds.split
        )));
    }
    Ok(())
}

fn eval_options(ctx: &Ctx, n_candidates: Option<usize>, method: Option<&str>, substeps: Option<usize>) -> Result<EvalOptions> {
    let n_candidates = match n_candidates {
        Some(n) => n,
        None => ctx.cfg.get_parsed("n_candidates")?.unwrap_or(256),
    };
    if n_candidates == 0 {
        return Err(AppError::Usage("n_candidates must be >= 1".into()));
    }
    Ok(EvalOptions {
        n_candidates,
        seed: ctx.seed.unwrap_or(0),
        method: ctx.method(method)?,
        substeps: ctx.substeps(substeps)?,
        ..EvalOptions::default()
    })
}

fn cmd_calibrate(ctx: &Ctx, a: CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = read_csv_path(&a.data)?;
    check_shape(&model, &ds)?;
    let subset = if a.all {
        ds.clone()
    } else {
        train_split(&ds, ctx.train_frac(a.train_frac)?)?.1
    };
    if subset.is_empty() {
        return Err(AppError::Data("no subjects to calibrate".into()));
    }
    let opts = eval_options(ctx, a.n_candidates, a.method.as_deref(), a.substeps)?;
    let fits = calibrate_all(&model, &subset, &opts)?;

    let (m, d) = (model.config().effect_dim, model.config().obs_dim);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    let mut header = vec!["subject_id".to_string(), "group_id".into(), "time".into(), "split".into(), "calib_mse".into()];
    header.extend((0..m).map(|j| format!("w_{j}")));
    header.extend((0..d).map(|j| format!("pred_x_{j}")));
    writeln!(f, "{}", header.join(","))?;
    for (s, fit) in subset.subjects.iter().zip(&fits) {
        for (k, &t) in subset.times.iter().enumerate() {
            let mut row = vec![
                s.id.to_string(),
                s.group.to_string(),
                fmt_f64(t),
                if k < subset.split { "interp" } else { "extrap" }.to_string(),
                fmt_f64(fit.calibration.mse),
            ];
            row.extend(fit.calibration.w.iter().map(|&v| fmt_f64(v)));
            row.extend(fit.prediction.decoded.row(k).iter().map(|&v| fmt_f64(v)));
            writeln!(f, "{}", row.join(","))?;
        }
    }
    f.flush()?;
    let mean = fits.iter().map(|f| f.calibration.mse).sum::<f64>() / fits.len() as f64;
    writeln!(
        out,
        "calibrated {} subjects, mean observed-window mse {}",
        fits.len(),
        fmt_f64(mean)
    )?;
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = read_csv_path(&a.data)?;
    check_shape(&model, &ds)?;
    let (train, test) = train_split(&ds, ctx.train_frac(a.train_frac)?)?;
    let mut opts = eval_options(ctx, a.n_candidates, a.method.as_deref(), a.substeps)?;
    opts.n_perms = match a.n_perms {
        Some(n) => n,
        None => ctx.cfg.get_parsed("n_perms")?.unwrap_or(1000),
    };
    if opts.n_perms < 100 {
        return Err(AppError::Usage("n_perms must be >= 100".into()));
    }
    if a.aggregate {
        opts.statistic = PermStatistic::Aggregate;
    }
    let (report, _) = evaluate(&model, &train, &test, &opts)?;

    std::fs::create_dir_all(&a.out_dir)?;
    let text = report.render();
    std::fs::write(a.out_dir.join("report.txt"), &text)?;
    report.write_per_step_csv(&a.out_dir.join("per_step_mse.csv"))?;
    report.write_pvalues_csv(&a.out_dir.join("pvalues.csv"))?;

    let c = model.config();
    if c.identity_mode && c.latent_dim == 1 && c.effect_dim == 1 && c.drift == DriftKind::Linear {
        if let Some(r) = &report.recovered {
            let n_paths = match a.sde_paths {
                Some(n) => n,
                None => ctx.cfg.get_parsed("sde_paths")?.unwrap_or(2000),
            };
            let settings = CompareSettings {
                z0: r.mu[0],
                t_max: *ds.times.last().unwrap(),
                n_times: ds.n_times(),
                n_paths,
                substeps: 20,
                seed: opts.seed,
            };
            let cmp = compare(Coef::Linear(r.beta[0]), Coef::Linear(r.sigma_b[0]), &settings)?;
            cmp.write_csv(&a.out_dir.join("sde_moments.csv"))?;
        }
    }
    write!(out, "{text}")?;
    Ok(())
}

fn cmd_sde_compare(ctx: &Ctx, a: SdeCompareArgs, out: &mut dyn Write) -> Result<()> {
    let f: Coef = a.f.parse()?;
    let g: Coef = a.g.parse()?;
    if a.n_times < 2 || !(a.t_max > 0.0) || a.substeps == 0 {
        return Err(AppError::Usage("need n_times >= 2, t_max > 0 and substeps >= 1".into()));
    }
    let settings = CompareSettings {
        z0: a.z0,
        t_max: a.t_max,
        n_times: a.n_times,
        n_paths: a.n_paths,
        substeps: a.substeps,
        seed: ctx.seed.unwrap_or(0),
    };
    let cmp = compare(f, g, &settings)?;
    write!(out, "{}", cmp.render_table())?;
    if let Some(p) = &a.out {
        cmp.write_csv(p)?;
    }
    Ok(())
}

fn cmd_gradcheck(ctx: &Ctx, a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let ds = read_csv_path(&a.data)?;
    let model = match &a.model {
        Some(p) => {
            let m = load_model(p)?;
            check_shape(&m, &ds)?;
            m
        }
        None => MeNodeModel::new(build_model_config(ctx, &ds, &a.model_flags)?, seed).map_err(usage)?,
    };
    let subject = ds
        .subjects
        .get(a.subject)
        .ok_or_else(|| AppError::Usage(format!("subject index {} out of range (n = {})", a.subject, ds.len())))?;
    let h = match a.h {
        Some(h) => h,
        None => ctx.cfg.get_parsed("h")?.unwrap_or(1e-5),
    };
    let tc = TrainConfig {
        n_z0: a.n_z0,
        n_w: a.n_w,
        accept_k: a.accept_k,
        seed,
        method: ctx.method(None)?,
        substeps: ctx.substeps(None)?,
        ..TrainConfig::default()
    };
    tc.validate().map_err(usage)?;
    let grid = TimeGrid::new(ds.interp_times().to_vec(), tc.substeps)?;
    let (p, m) = (model.config().latent_dim, model.config().effect_dim);
    let bank = NoiseBank::draw(&mut rng::stream(seed, 1 + subject.id), tc.n_z0, tc.n_w, p, m);
    let r = elbo_gradient_check(&model, &ds.observed_window(subject), &grid, &tc, &bank, h)?;
    writeln!(out, "accepted {:?}", r.accepted)?;
    for g in &r.groups {
        writeln!(out, "{:<24} {:.3e}", g.name, g.rel_error)?;
    }
    writeln!(out, "max_rel_error {:.3e}", r.max_rel_error)?;
    Ok(())
}
