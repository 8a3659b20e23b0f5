//! The six subcommands. Each one validates its configuration, computes all
//! results in memory, and only then writes its output files, so a failing
//! run leaves nothing half-written behind. Written paths and diagnostics go
//! to standard error; standard output stays quiet for scripting.

use std::path::{Path, PathBuf};

use fosr_core::kernels::{Domain, KernelSpec};
use fosr_core::simulate::{run_grid, rate_report, EpsilonLaw, ErrorRow, PenaltyRule, SimSetting};
use fosr_core::solver::{fit_from_system, predict, Dataset, FittedModel, PenalizedSystem};
use fosr_core::spectra::{
    analytic_laplacian_spectrum, build_quadrature, nystrom_decompose,
    sobolev_kernel_from_spectrum, MercerBasis,
};
use fosr_core::tuning::{
    default_range_candidates, default_smoothness_candidates, tune_kernel, tune_lambda_cyclic,
    TuneGrid, DEFAULT_CYCLES,
};
use fosr_core::{Error, Result};

use crate::config::Config;
use crate::model_io::{load_model, model_to_string};
use crate::tables;

fn emit(out_dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = out_dir.join(name);
    tables::write_atomic(&path, bytes)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn report_warnings(model: &FittedModel) {
    for w in model.warnings() {
        eprintln!("warning: {w}");
    }
}

fn default_quadrature(domain: Domain) -> usize {
    match domain {
        Domain::Interval => 256,
        Domain::Square | Domain::Sphere | Domain::Torus => 24,
    }
}

/// Build the basis named by `kernel = matern | sobolev` (default matern).
fn build_basis(config: &Config, domain: Domain) -> Result<MercerBasis> {
    let k0 = config.usize_or("k0", 50)?;
    match config.get("kernel").unwrap_or("matern") {
        "matern" => {
            let nu = config.require_parsed::<f64>("nu")?;
            let rho = config.f64_or("rho", 1.0)?;
            let quad_size = config.usize_or("quadrature", default_quadrature(domain))?;
            let spec = KernelSpec::matern(domain, nu, rho)?;
            let quadrature = build_quadrature(domain, quad_size)?;
            nystrom_decompose(&spec, &quadrature, k0)
        }
        "sobolev" => {
            let order = config.require_parsed::<u32>("order")?;
            let spectrum = analytic_laplacian_spectrum(domain, k0)?;
            sobolev_kernel_from_spectrum(&spectrum, order, k0)
        }
        other => Err(Error::invalid(format!(
            "config key 'kernel': unknown kernel '{other}' (expected matern or sobolev)"
        ))),
    }
}

fn load_dataset(config: &Config, domain: Domain) -> Result<(Dataset, Vec<String>)> {
    let obs = tables::load_observations(&config.path("observations")?, domain)?;
    let covs = tables::load_covariates(&config.path("covariates")?)?;
    tables::join_covariates(domain, &obs, &covs)
}

/// Penalty vector from `lambda = v` (broadcast) or `lambda = v1,...,vP`.
fn lambda_from_config(config: &Config, p: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = config.require_list("lambda")?;
    if values.len() == 1 {
        return Ok(vec![values[0]; p]);
    }
    if values.len() != p {
        return Err(Error::invalid(format!(
            "config key 'lambda': expected 1 or {p} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

fn lambda_grid_from_config(config: &Config) -> Result<TuneGrid> {
    match config.list::<f64>("lambda_grid")? {
        Some(values) => TuneGrid::new(values),
        None => Ok(TuneGrid::default_lambda()),
    }
}

/// Coefficient functions sampled at the quadrature nodes, one series per
/// (output, predictor) pair, x = the node's first coordinate.
fn coefficient_plot(model: &FittedModel) -> Result<Vec<(f64, f64, String)>> {
    let mut rows = Vec::new();
    for out in 0..model.outputs() {
        for p in 0..model.lambda().len() {
            for node in model.basis().quadrature().nodes() {
                let betas = model.coefficient_functions(node)?;
                rows.push((
                    node.coords()[0],
                    betas[(out, p)],
                    format!("beta_{}_{}", out + 1, p + 1),
                ));
            }
        }
    }
    Ok(rows)
}

fn coefficient_blocks(model: &FittedModel) -> Vec<nalgebra::DMatrix<f64>> {
    (0..model.outputs()).map(|out| model.coefficients(out).clone()).collect()
}

/// fit: ingest data, build the configured basis, solve at the configured
/// penalty, and write model.txt, coefficients.csv, and plot.csv.
pub fn run_fit(config: &Config, out_dir: &Path) -> Result<()> {
    let domain = config.domain()?;
    let (data, _ids) = load_dataset(config, domain)?;
    let basis = build_basis(config, domain)?;
    let lambda = lambda_from_config(config, data.p())?;
    let system = PenalizedSystem::assemble(&data, &basis)?;
    let model = fit_from_system(&system, &basis, &lambda)?;
    report_warnings(&model);
    eprintln!(
        "fit: n={} N={} P={} L={} k0={} objective={} gcv={} edf={}",
        data.n(),
        data.total_obs(),
        data.p(),
        data.l(),
        basis.k0(),
        model.objective(),
        model.gcv(),
        model.edf()
    );

    let model_text = model_to_string(&model)?;
    let coef = tables::coefficients_csv(&coefficient_blocks(&model))?;
    let plot = tables::plot_csv(&coefficient_plot(&model)?)?;
    emit(out_dir, "model.txt", model_text.as_bytes())?;
    emit(out_dir, "coefficients.csv", &coef)?;
    emit(out_dir, "plot.csv", &plot)?;
    Ok(())
}

/// tune: cyclic penalty search, optionally nested in a kernel grid search
/// when `nu_grid` or `rho_grid` is present. Writes trace.csv, the tuned
/// model, plot.csv, and candidates.csv for kernel searches.
pub fn run_tune(config: &Config, out_dir: &Path) -> Result<()> {
    let domain = config.domain()?;
    let (data, _ids) = load_dataset(config, domain)?;
    let grid = lambda_grid_from_config(config)?;
    let cycles = config.usize_or("cycles", DEFAULT_CYCLES)?;
    let kernel_search = config.get("nu_grid").is_some() || config.get("rho_grid").is_some();

    let (basis, lambda, candidates) = if kernel_search {
        let nu_grid = config
            .list::<f64>("nu_grid")?
            .unwrap_or_else(default_smoothness_candidates);
        let rho_grid = config
            .list::<f64>("rho_grid")?
            .unwrap_or_else(default_range_candidates);
        let quad_size = config.usize_or("quadrature", default_quadrature(domain))?;
        let k0 = config.usize_or("k0", 50)?;
        let result = tune_kernel(&data, &grid, &nu_grid, &rho_grid, quad_size, k0, cycles)?;
        eprintln!(
            "tune: selected nu={} rho={} score={}",
            result.spec.smoothness, result.spec.range, result.score
        );
        (result.basis, result.lambda, Some(result.candidates))
    } else {
        let basis = build_basis(config, domain)?;
        (basis, Vec::new(), None)
    };

    // rerun the cyclic search on the chosen basis for the full trace
    let system = PenalizedSystem::assemble(&data, &basis)?;
    let summary = tune_lambda_cyclic(&system, &grid, cycles)?;
    if !lambda.is_empty() && lambda != summary.lambda {
        return Err(Error::numerical(
            "kernel search and trace rerun disagree on the tuned penalty".to_string(),
        ));
    }
    let model = fit_from_system(&system, &basis, &summary.lambda)?;
    report_warnings(&model);
    eprintln!(
        "tune: lambda=[{}] score={} (started at {}) after {} cycles",
        summary
            .lambda
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        summary.score,
        summary.initial_score,
        summary.cycles_run
    );

    let trace = tables::trace_csv(&summary.trace)?;
    let model_text = model_to_string(&model)?;
    let plot_rows: Vec<(f64, f64, String)> = summary
        .trace
        .iter()
        .enumerate()
        .map(|(i, row)| ((i + 1) as f64, row.gcv, format!("gcv_predictor_{}", row.predictor)))
        .collect();
    let plot = tables::plot_csv(&plot_rows)?;
    let cand = candidates.as_deref().map(tables::candidates_csv).transpose()?;

    emit(out_dir, "trace.csv", &trace)?;
    emit(out_dir, "model.txt", model_text.as_bytes())?;
    emit(out_dir, "plot.csv", &plot)?;
    if let Some(cand) = cand {
        emit(out_dir, "candidates.csv", &cand)?;
    }
    Ok(())
}

fn setting_from_config(config: &Config) -> Result<SimSetting> {
    let id = config.require_parsed::<u8>("setting")?;
    let mut setting = SimSetting::standard(id)?;
    if let Some(n_grid) = config.list::<usize>("n_grid")? {
        setting.n_grid = n_grid;
    }
    if let Some(m_grid) = config.list::<usize>("m_grid")? {
        setting.m_grid = m_grid;
    }
    if let Some(reps) = config.get_parsed::<usize>("reps")? {
        setting.reps = reps;
    }
    if let Some(delta_var) = config.get_parsed::<f64>("delta_var")? {
        setting.delta_var = delta_var;
    }
    if let Some(seed) = config.get_parsed::<u64>("seed")? {
        setting.seed = seed;
    }
    match config.get("epsilon_law") {
        None | Some("tau_squared") => {}
        Some("tau") => setting.epsilon_law = EpsilonLaw::VarianceTau,
        Some(other) => {
            return Err(Error::invalid(format!(
                "config key 'epsilon_law': expected tau_squared or tau, got '{other}'"
            )))
        }
    }
    Ok(setting)
}

fn penalty_rule_from_config(config: &Config) -> Result<PenaltyRule> {
    match config.get("penalty").unwrap_or("rate") {
        "constant" => Ok(PenaltyRule::Constant(config.require_parsed::<f64>("penalty_value")?)),
        "rate" => Ok(PenaltyRule::RateScaled { scale: config.f64_or("penalty_scale", 1.0)? }),
        "gcv" => Ok(PenaltyRule::Gcv {
            grid: lambda_grid_from_config(config)?,
            cycles: config.usize_or("cycles", DEFAULT_CYCLES)?,
        }),
        other => Err(Error::invalid(format!(
            "config key 'penalty': expected constant, rate, or gcv, got '{other}'"
        ))),
    }
}

/// Mean squared error per (n, m) cell over successful replicates, sorted by
/// (m, n); cells with no successes are skipped.
fn cell_means(rows: &[ErrorRow]) -> Vec<(usize, usize, f64, usize)> {
    let mut cells: Vec<(usize, usize, f64, usize)> = Vec::new();
    for row in rows {
        let Some(err) = row.sq_error else { continue };
        match cells.iter_mut().find(|(n, m, _, _)| *n == row.n && *m == row.m) {
            Some(cell) => {
                cell.2 += err;
                cell.3 += 1;
            }
            None => cells.push((row.n, row.m, err, 1)),
        }
    }
    for cell in &mut cells {
        cell.2 /= cell.3 as f64;
    }
    cells.sort_by_key(|&(n, m, _, _)| (m, n));
    cells
}

fn error_plot(rows: &[ErrorRow]) -> Vec<(f64, f64, String)> {
    cell_means(rows)
        .into_iter()
        .map(|(n, m, mean, _)| (n as f64, mean, format!("m={m}")))
        .collect()
}

/// simulate: run the replicate grid for one setting and write errors.csv
/// plus a mean-error plot.
pub fn run_simulate(config: &Config, out_dir: &Path) -> Result<()> {
    let setting = setting_from_config(config)?;
    let k0 = config.usize_or("k0", setting.default_k0())?;
    let rule = penalty_rule_from_config(config)?;
    let rows = run_grid(&setting, k0, &rule)?;
    let failures = rows.iter().filter(|r| r.sq_error.is_none()).count();
    if failures > 0 {
        eprintln!("simulate: {failures} of {} replicates failed", rows.len());
    }

    let table = tables::error_table_csv(&rows)?;
    let plot = tables::plot_csv(&error_plot(&rows))?;
    emit(out_dir, "errors.csv", &table)?;
    emit(out_dir, "plot.csv", &plot)?;
    Ok(())
}

/// rates: read an error table and write the slope/collapse/phase report.
pub fn run_rates(config: &Config, out_dir: &Path) -> Result<()> {
    let rows = tables::read_error_table(&config.path("error_table")?)?;
    let h = match config.get_parsed::<f64>("h")? {
        Some(h) => h,
        None => {
            let id = config.get_parsed::<u8>("setting")?.ok_or_else(|| {
                Error::invalid("config needs 'h' or 'setting' to fix the smoothness".to_string())
            })?;
            SimSetting::standard(id)?.h()
        }
    };
    let report = rate_report(&rows, h)?;
    for slope in &report.slopes {
        match slope.m {
            Some(m) => eprintln!(
                "rates: setting {} m={m}: slope {} (se {}, {} points)",
                slope.setting, slope.slope, slope.std_error, slope.points
            ),
            None => eprintln!(
                "rates: setting {} pooled: slope {} (se {}, {} points)",
                slope.setting, slope.slope, slope.std_error, slope.points
            ),
        }
    }
    if let Some(gamma) = report.phase_exponent {
        eprintln!(
            "rates: phase exponent {gamma} (theory {})",
            report.theoretical_phase_exponent
        );
    }

    let slopes = tables::slopes_csv(&report.slopes)?;
    let collapse = tables::collapse_csv(&report.collapse)?;
    let summary = tables::rate_summary_csv(&report)?;
    let plot = tables::plot_csv(&error_plot(&rows))?;
    emit(out_dir, "slopes.csv", &slopes)?;
    emit(out_dir, "collapse.csv", &collapse)?;
    emit(out_dir, "rate_summary.csv", &summary)?;
    emit(out_dir, "plot.csv", &plot)?;
    Ok(())
}

/// spectra: eigenvalue table for a Laplacian, a Matérn kernel, or a
/// spectral Sobolev kernel.
pub fn run_spectra(config: &Config, out_dir: &Path) -> Result<()> {
    let domain = config.domain()?;
    let count = config.usize_or("count", 50)?;
    let kind = config.require("spectrum")?;
    let values: Vec<f64> = match kind {
        "laplacian" => analytic_laplacian_spectrum(domain, count)?.eigenvalues().to_vec(),
        "matern" => {
            let nu = config.require_parsed::<f64>("nu")?;
            let rho = config.f64_or("rho", 1.0)?;
            let quad_size = config.usize_or("quadrature", default_quadrature(domain))?;
            let spec = KernelSpec::matern(domain, nu, rho)?;
            let quadrature = build_quadrature(domain, quad_size)?;
            let basis = nystrom_decompose(&spec, &quadrature, count)?;
            if basis.truncated() {
                eprintln!(
                    "spectra: only {} of {count} eigenvalues clear the positivity floor",
                    basis.k0()
                );
            }
            basis.eigenvalues().to_vec()
        }
        "sobolev" => {
            let order = config.require_parsed::<u32>("order")?;
            let spectrum = analytic_laplacian_spectrum(domain, count)?;
            sobolev_kernel_from_spectrum(&spectrum, order, count)?.eigenvalues().to_vec()
        }
        other => {
            return Err(Error::invalid(format!(
                "config key 'spectrum': expected laplacian, matern, or sobolev, got '{other}'"
            )))
        }
    };

    let table = tables::spectrum_csv(&values)?;
    let plot_rows: Vec<(f64, f64, String)> = values
        .iter()
        .enumerate()
        .map(|(k, &v)| ((k + 1) as f64, v, kind.to_string()))
        .collect();
    let plot = tables::plot_csv(&plot_rows)?;
    emit(out_dir, "spectra.csv", &table)?;
    emit(out_dir, "plot.csv", &plot)?;
    Ok(())
}

/// predict: evaluate a saved model's mean response for each subject in a
/// covariate file, probing at the model's quadrature nodes.
pub fn run_predict(config: &Config, out_dir: &Path) -> Result<()> {
    let model = load_model(&config.path("model")?)?;
    let covs = tables::load_covariates(&config.path("covariates")?)?;
    let p = model.lambda().len();
    let domain = model.basis().quadrature().domain();

    let mut rows = Vec::new();
    let mut plot_rows = Vec::new();
    for (id, xs) in &covs {
        if xs.len() != p {
            return Err(Error::invalid(format!(
                "subject '{id}' has {} covariates, model expects {p}",
                xs.len()
            )));
        }
        for node in model.basis().quadrature().nodes() {
            let ys = predict(&model, xs, node)?;
            for (l, &y) in ys.iter().enumerate() {
                plot_rows.push((node.coords()[0], y, format!("{id}:y_{}", l + 1)));
            }
            rows.push((id.clone(), node.clone(), ys));
        }
    }

    let table = tables::predictions_csv(domain, &rows)?;
    let plot = tables::plot_csv(&plot_rows)?;
    emit(out_dir, "predictions.csv", &table)?;
    emit(out_dir, "plot.csv", &plot)?;
    Ok(())
}
