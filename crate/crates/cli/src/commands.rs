use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hcpanel::eb::{eb_estimates, mle_estimates, predict_one_step, UnitEstimates};
use hcpanel::identification::{
    diff_covariance, first_difference_t3, first_difference_t4, intercept_design, invert_ar1_firstdiff,
    invert_ar1_levelshift, invert_ar1_seconddiff, invert_arma11, level_shift_design, level_shift_t5,
    second_difference_t4, trend_design, verify_nonidentification_t4,
};
use hcpanel::montecarlo::{run_mc, simulate_panel, Design, DgpSpec};
use hcpanel::solvers::wfr_fit;
use hcpanel::{CovarianceFamily, CovariateMode, MixingDistribution, PanelDataset, SolverConfig, ThetaBox};
use serde::Serialize;

use crate::config::{FileConfig, SolverFlags};
use crate::error::{solver_error, CliError, CliResult};
use crate::model_file::{ModelFile, SolverRecord};
use crate::panel_io::{csv_bytes, num, panel_bytes, read_panel, read_x2_next, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Ar1,
    Arma11,
}

impl From<FamilyArg> for CovarianceFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Ar1 => CovarianceFamily::Ar1,
            FamilyArg::Arma11 => CovarianceFamily::Arma11,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::numeric(format!("cannot serialize: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

const ESTIMATE_HEADER: [&str; 9] = [
    "unit_id",
    "eb_a",
    "eb_b",
    "eb_sigma2",
    "eb_rho",
    "mle_a",
    "mle_b",
    "mle_sigma2",
    "mle_rho",
];

/// One row per unit; the MLE columns are empty for skipped units.
fn estimates_bytes(eb: &[UnitEstimates], mle: &[UnitEstimates]) -> CliResult<Vec<u8>> {
    let rows = eb.iter().zip(mle).map(|(e, m)| {
        let mut r = vec![e.unit_id.clone()];
        for est in [e, m] {
            let p = est.estimate;
            r.extend([
                opt_num(p.map(|p| p.a)),
                opt_num(p.map(|p| p.b)),
                opt_num(p.map(|p| p.sigma2)),
                opt_num(p.map(|p| p.rho)),
            ]);
        }
        r
    });
    csv_bytes(&ESTIMATE_HEADER, rows)
}

fn check_mode(data: &PanelDataset, model: &ModelFile) -> CliResult<()> {
    if data.covariate_mode != model.covariate_mode {
        let has = |m: CovariateMode| if m == CovariateMode::InterceptPlusX2 { "with" } else { "without" };
        return Err(CliError::usage(format!(
            "panel is {} x2 but the model was fitted {} x2",
            has(data.covariate_mode),
            has(model.covariate_mode)
        )));
    }
    Ok(())
}

fn default_solver(mode: CovariateMode, family: CovarianceFamily) -> SolverConfig {
    let mut c = match mode {
        CovariateMode::InterceptPlusX2 => SolverConfig::hivdx(),
        CovariateMode::InterceptOnly => SolverConfig::hivd(),
    };
    c.bounds = ThetaBox::default_for(family);
    c
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Panel CSV (`unit_id,t,y[,x2]`)
    #[arg(long)]
    pub panel: PathBuf,
    /// Error covariance family
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FitManifest {
    panel: String,
    n_units: usize,
    family: CovarianceFamily,
    covariate_mode: CovariateMode,
    seed: u64,
    solver: SolverRecord,
    converged: bool,
    n_stop: usize,
    objective: f64,
    foc_gap: f64,
    n_atoms: usize,
    mle_skipped_units: usize,
}

pub fn fit(args: FitArgs) -> CliResult<()> {
    let data = read_panel(&args.panel)?;
    let file = FileConfig::load(args.solver.config.as_deref())?;
    let family: CovarianceFamily = args.family.map(Into::into).or(file.family).unwrap_or(CovarianceFamily::Ar1);
    let cfg = args.solver.resolve(&file, default_solver(data.covariate_mode, family))?;
    if family == CovarianceFamily::Arma11 && cfg.bounds.phi_abs_max.is_none() {
        return Err(CliError::usage("arma11 fits need box.phi_abs_max"));
    }
    let fit = wfr_fit(&data, &cfg, family, None).map_err(solver_error)?;
    let model = ModelFile::new(&fit.g_hat, family, data.covariate_mode, &cfg);
    let eb = eb_estimates(&fit.g_hat, &data, family);
    let mle = mle_estimates(&data, &cfg.bounds, family);
    let trace = csv_bytes(
        &["iteration", "objective", "foc_gap"],
        fit.trace
            .iter()
            .map(|p| vec![p.iteration.to_string(), num(p.objective), num(p.foc_gap)]),
    )?;
    model.write(&args.out.join("g_hat.json"))?;
    write_atomic(&args.out.join("estimates.csv"), &estimates_bytes(&eb, &mle)?)?;
    write_atomic(&args.out.join("trace.csv"), &trace)?;
    let skipped = mle.iter().filter(|e| e.estimate.is_none()).count();
    write_json(
        &args.out.join("fit_manifest.json"),
        &FitManifest {
            panel: args.panel.display().to_string(),
            n_units: data.len(),
            family,
            covariate_mode: data.covariate_mode,
            seed: cfg.seed,
            solver: model.solver.clone(),
            converged: fit.converged,
            n_stop: fit.n_stop,
            objective: fit.objective,
            foc_gap: fit.foc_gap,
            n_atoms: fit.g_hat.len(),
            mle_skipped_units: skipped,
        },
    )?;
    if cfg.early_stopping() && !fit.converged {
        log::warn!("FOC gap {:.3e} above tol {:.1e} after {} iterations", fit.foc_gap, cfg.tol, fit.n_stop);
    }
    println!(
        "fitted {} units: {} atoms, objective {:.6}, foc_gap {:.3e}, iterations {}, converged {}",
        data.len(),
        fit.g_hat.len(),
        fit.objective,
        fit.foc_gap,
        fit.n_stop,
        fit.converged
    );
    if skipped > 0 {
        println!("{skipped} units have no MLE");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Model file written by `fit`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Posterior means and MLEs under a saved model, without refitting.
pub fn estimate(args: EstimateArgs) -> CliResult<()> {
    let data = read_panel(&args.panel)?;
    let model = ModelFile::read(&args.model)?;
    check_mode(&data, &model)?;
    let g = model.mixing()?;
    let eb = eb_estimates(&g, &data, model.family);
    let mle = mle_estimates(&data, &model.bounds, model.family);
    write_atomic(&args.out.join("estimates.csv"), &estimates_bytes(&eb, &mle)?)?;
    println!("wrote estimates for {} units", data.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Hold out every unit's last period, refit on the rest and score the
    /// predictions of the held-out values
    #[arg(long = "holdout-last")]
    pub holdout_last: bool,
    /// With --holdout-last, reuse the given model instead of refitting
    #[arg(long = "no-refit", requires = "holdout_last")]
    pub no_refit: bool,
    /// CSV with columns unit_id,x2_next (needed for x2 models without --holdout-last)
    #[arg(long = "x2-next")]
    pub x2_next: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn predict(args: PredictArgs) -> CliResult<()> {
    let mut data = read_panel(&args.panel)?;
    let model = ModelFile::read(&args.model)?;
    check_mode(&data, &model)?;
    let family = model.family;
    let with_x2 = data.covariate_mode == CovariateMode::InterceptPlusX2;
    let mut held: Option<Vec<f64>> = None;
    if args.holdout_last {
        let mut heads = Vec::with_capacity(data.len());
        let mut ys = Vec::with_capacity(data.len());
        for u in &data.units {
            if u.len() < 2 {
                return Err(CliError::usage(format!(
                    "unit {} has T = {}; --holdout-last needs T >= 2",
                    u.id,
                    u.len()
                )));
            }
            let (h, y) = u.split_last()?;
            heads.push(h);
            ys.push(y);
        }
        data = PanelDataset::new(heads, data.covariate_mode)?;
        held = Some(ys);
    } else if with_x2 {
        let path = args.x2_next.as_ref().ok_or_else(|| {
            CliError::usage("model uses x2: pass --x2-next FILE with columns unit_id,x2_next, or use --holdout-last")
        })?;
        let next: HashMap<String, f64> = read_x2_next(path)?;
        for u in &mut data.units {
            u.x2_next = Some(
                *next
                    .get(&u.id)
                    .ok_or_else(|| CliError::usage(format!("{}: no x2_next for unit {}", path.display(), u.id)))?,
            );
        }
    }
    let g: MixingDistribution = if args.holdout_last && !args.no_refit {
        let cfg = model.solver_config();
        let fit = wfr_fit(&data, &cfg, family, None).map_err(solver_error)?;
        ModelFile::new(&fit.g_hat, family, data.covariate_mode, &cfg).write(&args.out.join("g_hat_holdout.json"))?;
        fit.g_hat
    } else {
        model.mixing()?
    };
    let eb = eb_estimates(&g, &data, family);
    let mle = mle_estimates(&data, &model.bounds, family);
    let mut rows = Vec::new();
    let mut sse: HashMap<&'static str, (f64, usize)> = HashMap::new();
    for i in 0..data.len() {
        for est in [&eb[i], &mle[i]] {
            if est.estimate.is_none() {
                continue;
            }
            let p = predict_one_step(est, &data.units[i])?;
            let mut r = vec![p.unit_id, p.method.name().to_string(), num(p.y_hat)];
            if let Some(ys) = &held {
                let e2 = (p.y_hat - ys[i]).powi(2);
                let acc = sse.entry(p.method.name()).or_insert((0.0, 0));
                acc.0 += e2;
                acc.1 += 1;
                r.extend([num(ys[i]), num(e2)]);
            }
            rows.push(r);
        }
    }
    let header: &[&str] = if held.is_some() {
        &["unit_id", "method", "y_hat", "y_actual", "sq_err"]
    } else {
        &["unit_id", "method", "y_hat"]
    };
    write_atomic(&args.out.join("predictions.csv"), &csv_bytes(header, rows)?)?;
    for m in ["EB", "MLE"] {
        if let Some((s, n)) = sse.get(m) {
            println!("{m}: mean squared prediction error {:.6} over {n} units", s / *n as f64);
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DesignFlags {
    /// hivd, hivdr or hivdx
    #[arg(long)]
    pub design: Design,
    /// Units (default 1000)
    #[arg(long)]
    pub n: Option<usize>,
    /// Periods (default 5, or 13 for hivdx)
    #[arg(long)]
    pub t: Option<usize>,
    /// Master seed
    #[arg(long = "dgp-seed", default_value_t = 0)]
    pub dgp_seed: u64,
    /// Model file whose prior replaces the bundled hivdx prior
    #[arg(long)]
    pub prior: Option<PathBuf>,
}

impl DesignFlags {
    fn spec(&self, reps: usize) -> CliResult<DgpSpec> {
        let mut spec = DgpSpec::new(self.design, reps, self.dgp_seed);
        spec.n = self.n.unwrap_or(spec.n);
        spec.t = self.t.unwrap_or(spec.t);
        if let Some(p) = &self.prior {
            let m = ModelFile::read(p)?;
            spec.prior_override = Some(m.mixing()?);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dgp: DesignFlags,
    /// Replication stream to draw
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> CliResult<()> {
    let spec = args.dgp.spec(1)?;
    let prior = spec.prior();
    let panel = simulate_panel(&spec, &prior, &mut spec.rng(args.rep))?;
    let with_x2 = spec.design.covariate_mode() == CovariateMode::InterceptPlusX2;
    let mut header = vec!["unit_id", "a", "b", "sigma2", "rho", "y_next"];
    if with_x2 {
        header.push("x2_next");
    }
    let truth = panel.data.units.iter().enumerate().map(|(i, u)| {
        let t = &panel.truth[i];
        let mut r = vec![u.id.clone(), num(t.a), num(t.b), num(t.sigma2), num(t.rho), num(panel.y_next[i])];
        if with_x2 {
            r.push(opt_num(u.x2_next));
        }
        r
    });
    let truth = csv_bytes(&header, truth)?;
    write_atomic(&args.out.join("panel.csv"), &panel_bytes(&panel.data)?)?;
    write_atomic(&args.out.join("truth.csv"), &truth)?;
    println!(
        "simulated {} units x {} periods from {} (seed {}, stream {})",
        spec.n,
        spec.t,
        spec.design.name(),
        spec.seed,
        args.rep
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub dgp: DesignFlags,
    /// Replications
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn mc(args: McArgs) -> CliResult<()> {
    let spec = args.dgp.spec(args.reps)?;
    let file = FileConfig::load(args.solver.config.as_deref())?;
    let solver = args.solver.resolve(&file, spec.design.default_solver())?;
    let report = run_mc(&spec, &solver).map_err(solver_error)?;
    if report.outcomes.is_empty() {
        return Err(CliError::numeric(format!("all {} replications failed", spec.reps)));
    }
    let table = csv_bytes(
        &["target", "method", "bias", "sd", "rmse", "r2"],
        report.table.iter().map(|r| {
            vec![
                r.target.name().to_string(),
                r.method.name().to_string(),
                num(r.bias),
                num(r.sd),
                num(r.rmse),
                opt_num(r.r2),
            ]
        }),
    )?;
    let moments = csv_bytes(
        &["moment", "truth", "bias", "sd", "rmse"],
        report
            .moments
            .iter()
            .map(|r| vec![r.moment.clone(), num(r.truth), num(r.bias), num(r.sd), num(r.rmse)]),
    )?;
    write_atomic(&args.out.join("table.csv"), &table)?;
    write_atomic(&args.out.join("moments.csv"), &moments)?;
    write_json(&args.out.join("manifest.json"), &report.manifest)?;
    println!(
        "{}: {} replications ({} failed)",
        spec.design.name(),
        report.outcomes.len(),
        report.failures.len()
    );
    println!("{:<8} {:<7} {:>9} {:>9} {:>9} {:>7}", "target", "method", "bias", "sd", "rmse", "r2");
    for r in &report.table {
        println!(
            "{:<8} {:<7} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            r.target.name(),
            r.method.name(),
            r.bias,
            r.sd,
            r.rmse,
            r.r2.map(|v| format!("{v:.3}")).unwrap_or_default()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IdentDesign {
    /// AR(1), T = 3, first differences
    #[value(name = "ar1-t3")]
    Ar1T3,
    /// AR(1) with a linear trend, T = 4, second differences
    #[value(name = "ar1-trend-t4")]
    Ar1TrendT4,
    /// AR(1) with a level shift at t = 3, T = 5
    #[value(name = "levelshift-t5")]
    LevelShiftT5,
    /// ARMA(1,1), T = 4, first differences
    #[value(name = "arma11-t4")]
    Arma11T4,
    /// Two AR(1) pairs seen through (dy2, dy4), T = 4
    #[value(name = "nonid-t4")]
    NonidT4,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(value_enum)]
    pub design: IdentDesign,
    /// `sigma2,rho` (or `sigma2,rho,phi` for arma11-t4)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// First `sigma2,rho` pair for nonid-t4
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta1: Option<Vec<f64>>,
    /// Second `sigma2,rho` pair for nonid-t4
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta2: Option<Vec<f64>>,
}

fn take(v: &Option<Vec<f64>>, flag: &str, k: usize) -> CliResult<Vec<f64>> {
    match v {
        Some(x) if x.len() == k => Ok(x.clone()),
        Some(x) => Err(CliError::usage(format!("--{flag} needs {k} values, got {}", x.len()))),
        None => Err(CliError::usage(format!("--{flag} is required for this design"))),
    }
}

fn print_matrix(name: &str, v: &hcpanel::identification::DiffCovariance) {
    println!("{name}:");
    for i in 0..v.v.nrows() {
        let row: Vec<String> = (0..v.v.ncols()).map(|j| format!("{:>14.10}", v.v[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
}

pub fn identify(args: IdentifyArgs) -> CliResult<()> {
    let ar1 = CovarianceFamily::Ar1;
    if args.design == IdentDesign::NonidT4 {
        let t1 = take(&args.theta1, "theta1", 2)?;
        let t2 = take(&args.theta2, "theta2", 2)?;
        let rep = verify_nonidentification_t4((t1[0], t1[1]), (t2[0], t2[1]))?;
        println!("design: nonid-t4");
        println!("theta1: sigma2 = {}, rho = {}", t1[0], t1[1]);
        println!("theta2: sigma2 = {}, rho = {}", t2[0], t2[1]);
        println!("max |V1 - V2|: {:.3e}", rep.max_discrepancy);
        println!("observationally equivalent: {}", rep.equivalent);
        return Ok(());
    }
    let k = if args.design == IdentDesign::Arma11T4 { 3 } else { 2 };
    let th = take(&args.theta, "theta", k)?;
    let (name, m, x) = match args.design {
        IdentDesign::Ar1T3 => ("ar1-t3", first_difference_t3(), intercept_design(3)),
        IdentDesign::Ar1TrendT4 => ("ar1-trend-t4", second_difference_t4(), trend_design(4)),
        IdentDesign::LevelShiftT5 => ("levelshift-t5", level_shift_t5(), level_shift_design()),
        IdentDesign::Arma11T4 => ("arma11-t4", first_difference_t4(), intercept_design(4)),
        IdentDesign::NonidT4 => unreachable!(),
    };
    let (family, phi) = if k == 3 {
        (CovarianceFamily::Arma11, Some(th[2]))
    } else {
        (ar1, None)
    };
    let v = diff_covariance(&m, th[0], th[1], phi, family)?;
    let recovered: Vec<f64> = match args.design {
        IdentDesign::Ar1T3 => {
            let (s, r) = invert_ar1_firstdiff(&v)?;
            vec![s, r]
        }
        IdentDesign::Ar1TrendT4 => {
            let (s, r) = invert_ar1_seconddiff(&v)?;
            vec![s, r]
        }
        IdentDesign::LevelShiftT5 => {
            let (s, r) = invert_ar1_levelshift(v.v[(0, 0)], v.v[(1, 2)])?;
            vec![s, r]
        }
        _ => {
            let (s, r, p) = invert_arma11(&v)?;
            vec![s, r, p]
        }
    };
    let names = ["sigma2", "rho", "phi"];
    let fmt = |v: &[f64]| {
        v.iter()
            .zip(names)
            .map(|(x, n)| format!("{n} = {x}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("design: {name}");
    println!("theta: {}", fmt(&th));
    println!("|M'X| max: {:.3e}", (m.transpose() * &x).abs().max());
    print_matrix("V = M' Sigma M", &v);
    println!("recovered: {}", fmt(&recovered));
    for ((a, b), n) in th.iter().zip(&recovered).zip(names) {
        println!("residual {n}: {:.3e}", (a - b).abs());
    }
    let worst = th.iter().zip(&recovered).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round-trip residual: {worst:.3e}");
    Ok(())
}
