//! Monte-Carlo verification harness: setting-specific coefficient functions,
//! synthetic data generation, (n, m) sweeps, and log-log rate summaries.
//!
//! The six stock settings pair a Matérn smoothness with a leading-eigenvalue
//! count on the interval (1–3) or the unit square (4–6). Each replicate gets
//! its own counter-keyed RNG stream, so tables are bitwise reproducible
//! regardless of how replicates are scheduled.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{Domain, KernelSpec};
use crate::solver::{Dataset, PenalizedSystem, Subject};
use crate::spectra::{build_quadrature, nystrom_decompose, MercerBasis};
use crate::tuning::{tune_lambda_cyclic, TuneGrid};

/// How the per-eigenfunction noise scores are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonLaw {
    /// ε_ik has variance τ_k² (standard deviation τ_k). The default.
    VarianceTauSquared,
    /// ε_ik has variance τ_k — a sensitivity variant.
    VarianceTau,
}

/// One experimental configuration: domain dimension, kernel smoothness,
/// leading-coefficient count, sweep grids, and noise levels.
#[derive(Debug, Clone)]
pub struct SimSetting {
    pub id: u8,
    /// Domain dimension: 1 (interval) or 2 (unit square).
    pub dim: u8,
    /// Matérn smoothness of both the truth and the fitting kernel.
    pub nu: f64,
    /// Number of leading coefficients set to 1 in the true function.
    pub k_s: usize,
    /// Matérn range; 1 in every stock setting.
    pub range: f64,
    pub n_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub reps: usize,
    /// Variance of the per-observation measurement error δ.
    pub delta_var: f64,
    pub seed: u64,
    pub epsilon_law: EpsilonLaw,
}

impl SimSetting {
    /// The six stock settings with desk-scale sweep defaults.
    pub fn standard(id: u8) -> Result<Self> {
        let (dim, nu, k_s) = match id {
            1 => (1, 1.5, 7),
            2 => (1, 3.5, 5),
            3 => (1, 5.5, 3),
            4 => (2, 5.5, 7),
            5 => (2, 7.5, 5),
            6 => (2, 9.5, 3),
            _ => return Err(Error::invalid(format!("setting id {id} not in 1..=6"))),
        };
        Ok(SimSetting {
            id,
            dim,
            nu,
            k_s,
            range: 1.0,
            n_grid: vec![10, 25, 50, 75, 100],
            m_grid: vec![5, 50],
            reps: 100,
            delta_var: 0.1,
            seed: 1,
            epsilon_law: EpsilonLaw::VarianceTauSquared,
        })
    }

    pub fn domain(&self) -> Domain {
        if self.dim == 1 {
            Domain::Interval
        } else {
            Domain::Square
        }
    }

    /// Effective smoothness h = ν/d + 1/2 governing the error rate.
    pub fn h(&self) -> f64 {
        self.nu / self.dim as f64 + 0.5
    }

    /// The predicted log-log slope −2h/(1 + 2h) of error versus n·m.
    pub fn rate_exponent(&self) -> f64 {
        let h = self.h();
        -2.0 * h / (1.0 + 2.0 * h)
    }

    /// Basis size holding the leading block plus a 60-term tail.
    pub fn default_k0(&self) -> usize {
        self.k_s + 60
    }

    /// Stock quadrature size (per axis on the square).
    pub fn default_quadrature_size(&self) -> usize {
        if self.dim == 1 {
            256
        } else {
            24
        }
    }
}

/// How each replicate picks its penalty.
#[derive(Debug, Clone)]
pub enum PenaltyRule {
    /// One fixed λ for every (n, m).
    Constant(f64),
    /// λ = scale · (n·m)^(−2h/(1+2h)), tracking the predicted optimum.
    RateScaled { scale: f64 },
    /// Generalized cross-validation over a grid, per replicate.
    Gcv { grid: TuneGrid, cycles: usize },
}

/// True coefficient vector over the basis: 1 for the k_s leading
/// eigenfunctions, then τ_k along the tail.
pub fn gen_beta(setting: &SimSetting, basis: &MercerBasis) -> Result<Vec<f64>> {
    if basis.k0() <= setting.k_s {
        return Err(Error::invalid(format!(
            "basis holds {} eigenfunctions but the setting needs more than {}",
            basis.k0(),
            setting.k_s
        )));
    }
    Ok(basis
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, &tau)| if k < setting.k_s { 1.0 } else { tau })
        .collect())
}

/// A generated dataset together with the eigenfunction values at its
/// stacked observation locations, so the fit can reuse the extension.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub values: DMatrix<f64>,
}

/// Draw one dataset: u_ij i.i.d. uniform, X_i ~ Normal(1,1), smooth noise
/// ε_i = Σ_k ε_ik v_k with ε_ik scaled by the setting's law, and white
/// measurement error δ_ij with variance `delta_var`.
pub fn gen_dataset(
    setting: &SimSetting,
    basis: &MercerBasis,
    beta: &[f64],
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GeneratedData> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("need n ≥ 1 and m ≥ 1".to_string()));
    }
    let k0 = basis.k0();
    if beta.len() != k0 {
        return Err(Error::invalid(format!(
            "coefficient vector has {} entries for a {k0}-eigenfunction basis",
            beta.len()
        )));
    }
    let domain = setting.domain();
    let gauss = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let delta_sd = setting.delta_var.sqrt();
    let eps_sd: Vec<f64> = basis
        .eigenvalues()
        .iter()
        .map(|&tau| match setting.epsilon_law {
            EpsilonLaw::VarianceTauSquared => tau,
            EpsilonLaw::VarianceTau => tau.sqrt(),
        })
        .collect();

    let mut draws = Vec::with_capacity(n);
    let mut all_locations = Vec::with_capacity(n * m);
    for _ in 0..n {
        let x = 1.0 + gauss.sample(rng);
        let locations: Vec<_> = (0..m).map(|_| domain.sample_uniform(rng)).collect();
        let scores: Vec<f64> = eps_sd.iter().map(|sd| sd * gauss.sample(rng)).collect();
        let deltas: Vec<f64> = (0..m).map(|_| delta_sd * gauss.sample(rng)).collect();
        all_locations.extend(locations.iter().cloned());
        draws.push((x, locations, scores, deltas));
    }
    let values = basis.extend_batch(&all_locations)?;

    let mut subjects = Vec::with_capacity(n);
    let mut row = 0;
    for (x, locations, scores, deltas) in draws {
        let mut responses = DMatrix::zeros(m, 1);
        for (j, &delta) in deltas.iter().enumerate() {
            let mut y = delta;
            for k in 0..k0 {
                y += (x * beta[k] + scores[k]) * values[(row, k)];
            }
            responses[(j, 0)] = y;
            row += 1;
        }
        subjects.push(Subject { covariates: vec![x], locations, responses });
    }
    let dataset = Dataset::new(domain, subjects)?;
    Ok(GeneratedData { dataset, values })
}

/// The RNG stream for replicate `rep` of cell (setting, n, m): the key mixes
/// (seed, setting id, n, m) and the stream counter carries the replicate.
pub fn replicate_rng(seed: u64, setting_id: u8, n: usize, m: usize, rep: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(setting_id as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(n as u64).to_le_bytes());
    key[24..32].copy_from_slice(&(m as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep as u64);
    rng
}

/// Quadrature L² distance ‖Σ_k (a_k − b_k) v_k‖² between two coefficient
/// vectors over the same basis.
pub fn coefficient_l2_error(basis: &MercerBasis, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != basis.k0() || b.len() != basis.k0() {
        return Err(Error::invalid("coefficient length must match the basis".to_string()));
    }
    let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
    let at_nodes = basis.node_values() * diff;
    Ok(at_nodes
        .iter()
        .zip(basis.quadrature().weights())
        .map(|(v, w)| w * v * v)
        .sum())
}

/// One replicate's outcome. `sq_error` is empty when the fit failed, with
/// the cause in `note`.
#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub setting: u8,
    pub n: usize,
    pub m: usize,
    /// 1-based replicate index.
    pub rep: usize,
    pub sq_error: Option<f64>,
    pub note: String,
}

/// Sweep the setting's (n, m) grid: build the basis and truth once, then for
/// every cell run `reps` independent replicates (generate → fit → quadrature
/// L² error against the truth). Failed replicates become rows with a cause
/// note; the sweep never aborts. The table is a pure function of
/// (setting, seed) regardless of thread count.
pub fn run_grid(setting: &SimSetting, k0: usize, rule: &PenaltyRule) -> Result<Vec<ErrorRow>> {
    if setting.n_grid.is_empty() || setting.m_grid.is_empty() {
        return Err(Error::invalid("n and m grids must be non-empty".to_string()));
    }
    if setting.n_grid.iter().chain(&setting.m_grid).any(|&v| v == 0) {
        return Err(Error::invalid("grid entries must be ≥ 1".to_string()));
    }
    if setting.reps == 0 {
        return Err(Error::invalid("need at least one replicate".to_string()));
    }
    if !(setting.delta_var >= 0.0) || !setting.delta_var.is_finite() {
        return Err(Error::invalid("delta_var must be finite and ≥ 0".to_string()));
    }
    let spec = KernelSpec::matern(setting.domain(), setting.nu, setting.range)?;
    let quadrature = build_quadrature(setting.domain(), setting.default_quadrature_size())?;
    let basis = nystrom_decompose(&spec, &quadrature, k0)?;
    let beta = gen_beta(setting, &basis)?;

    let mut table = Vec::with_capacity(setting.n_grid.len() * setting.m_grid.len() * setting.reps);
    for &n in &setting.n_grid {
        for &m in &setting.m_grid {
            let rows: Vec<ErrorRow> = (0..setting.reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replicate_rng(setting.seed, setting.id, n, m, r);
                    match one_replicate(setting, &basis, &beta, n, m, rule, &mut rng) {
                        Ok(err) => ErrorRow {
                            setting: setting.id,
                            n,
                            m,
                            rep: r + 1,
                            sq_error: Some(err),
                            note: String::new(),
                        },
                        Err(e) => ErrorRow {
                            setting: setting.id,
                            n,
                            m,
                            rep: r + 1,
                            sq_error: None,
                            note: e.to_string(),
                        },
                    }
                })
                .collect();
            let ok: Vec<f64> = rows.iter().filter_map(|r| r.sq_error).collect();
            let mean = ok.iter().sum::<f64>() / ok.len().max(1) as f64;
            eprintln!(
                "setting {} n={n} m={m}: mean sq_error {mean:.4e} over {}/{} replicates",
                setting.id,
                ok.len(),
                setting.reps
            );
            table.extend(rows);
        }
    }
    Ok(table)
}

fn one_replicate(
    setting: &SimSetting,
    basis: &MercerBasis,
    beta: &[f64],
    n: usize,
    m: usize,
    rule: &PenaltyRule,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let generated = gen_dataset(setting, basis, beta, n, m, rng)?;
    let system = PenalizedSystem::assemble_from_values(&generated.dataset, basis, &generated.values)?;
    let lambda = match rule {
        PenaltyRule::Constant(c) => *c,
        PenaltyRule::RateScaled { scale } => {
            scale * ((n * m) as f64).powf(setting.rate_exponent())
        }
        PenaltyRule::Gcv { grid, cycles } => {
            tune_lambda_cyclic(&system, grid, *cycles)?.lambda[0]
        }
    };
    let sol = system.solve(&[lambda])?;
    let estimate: Vec<f64> = sol.coefficients.column(0).iter().cloned().collect();
    coefficient_l2_error(basis, &estimate, beta)
}

/// A fitted log-log slope of mean error against n. `m` is the fixed panel
/// size, or empty for the pooled per-setting fit used when no single m has
/// enough distinct n (for example an m = n diagonal sweep).
#[derive(Debug, Clone)]
pub struct SlopeRow {
    pub setting: u8,
    pub m: Option<usize>,
    pub slope: f64,
    pub std_error: f64,
    pub points: usize,
}

/// Spread of mean errors across the large-m panels at one n.
#[derive(Debug, Clone)]
pub struct CollapseRow {
    pub setting: u8,
    pub n: usize,
    pub m_used: Vec<usize>,
    /// max/min − 1 over the panel means.
    pub spread: f64,
    pub collapsed: bool,
}

/// Rate summary of an error table: empirical slopes with standard errors,
/// the theoretical envelope exponents for the supplied h, large-m collapse
/// checks, and an estimated phase-transition exponent.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub slopes: Vec<SlopeRow>,
    pub collapse: Vec<CollapseRow>,
    /// Fitted exponent γ in m*(n) ≈ n^γ, where m* is the smallest panel
    /// size whose mean error is within 15% of the largest panel's.
    pub phase_exponent: Option<f64>,
    /// −2h/(1 + 2h): the envelope slope when m is held small.
    pub theoretical_rate_exponent: f64,
    /// −1: the parametric slope reached once m is large enough.
    pub parametric_exponent: f64,
    /// 1/(2h): the predicted phase-transition exponent.
    pub theoretical_phase_exponent: f64,
    pub h: f64,
}

fn log_log_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid("need at least 3 points for a slope".to_string()));
    }
    if points.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(Error::invalid("mean errors must be positive to take logs".to_string()));
    }
    let xs: Vec<f64> = points.iter().map(|&(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("slope needs at least two distinct n".to_string()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - ym - slope * (x - xm)).powi(2))
        .sum();
    let sigma2 = rss / (n - 2) as f64;
    Ok((slope, (sigma2 / sxx).sqrt()))
}

/// Summarize an error table against the rate predictions for effective
/// smoothness h. Cell means use successful replicates only. Slopes are per
/// (setting, m) when that panel has ≥ 3 distinct n, otherwise pooled per
/// setting across all cells.
pub fn rate_report(table: &[ErrorRow], h: f64) -> Result<RateReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("h must be positive and finite".to_string()));
    }
    if table.is_empty() {
        return Err(Error::invalid("error table is empty".to_string()));
    }
    if table
        .iter()
        .filter_map(|r| r.sq_error)
        .any(|e| !(e >= 0.0) || !e.is_finite())
    {
        return Err(Error::invalid("sq_error entries must be finite and ≥ 0".to_string()));
    }

    // cell means: (setting, m, n) → mean over successful replicates
    let mut cells: BTreeMap<(u8, usize, usize), (f64, usize)> = BTreeMap::new();
    for row in table {
        if let Some(e) = row.sq_error {
            let slot = cells.entry((row.setting, row.m, row.n)).or_insert((0.0, 0));
            slot.0 += e;
            slot.1 += 1;
        }
    }
    if cells.is_empty() {
        return Err(Error::invalid("no successful replicates in the table".to_string()));
    }
    let means: BTreeMap<(u8, usize, usize), f64> = cells
        .into_iter()
        .map(|(key, (sum, count))| (key, sum / count as f64))
        .collect();

    let settings: Vec<u8> = {
        let mut s: Vec<u8> = means.keys().map(|&(id, _, _)| id).collect();
        s.dedup();
        s
    };

    let mut slopes = Vec::new();
    for &id in &settings {
        let mut per_m: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (&(sid, m, n), &mean) in &means {
            if sid == id {
                per_m.entry(m).or_default().push((n as f64, mean));
            }
        }
        let mut any = false;
        for (&m, points) in &per_m {
            if points.len() >= 3 {
                let (slope, std_error) = log_log_fit(points)?;
                slopes.push(SlopeRow { setting: id, m: Some(m), slope, std_error, points: points.len() });
                any = true;
            }
        }
        if !any {
            // pooled fallback: average the cell means at each n
            let mut per_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for points in per_m.values() {
                for &(n, mean) in points {
                    let slot = per_n.entry(n as usize).or_insert((0.0, 0));
                    slot.0 += mean;
                    slot.1 += 1;
                }
            }
            let pooled: Vec<(f64, f64)> = per_n
                .into_iter()
                .map(|(n, (sum, count))| (n as f64, sum / count as f64))
                .collect();
            if pooled.len() < 3 {
                return Err(Error::invalid(format!(
                    "setting {id}: need ≥ 3 distinct n in some panel or pooled"
                )));
            }
            let (slope, std_error) = log_log_fit(&pooled)?;
            slopes.push(SlopeRow { setting: id, m: None, slope, std_error, points: pooled.len() });
        }
    }

    // collapse: at each (setting, n), compare the panels with m ≥ max_m/2
    let mut collapse = Vec::new();
    let mut phase_points: Vec<(f64, f64)> = Vec::new();
    for &id in &settings {
        let mut per_n: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (&(sid, m, n), &mean) in &means {
            if sid == id {
                per_n.entry(n).or_default().push((m, mean));
            }
        }
        for (&n, panels) in &per_n {
            if panels.len() < 2 {
                continue;
            }
            let max_m = panels.iter().map(|&(m, _)| m).max().unwrap();
            let large: Vec<(usize, f64)> =
                panels.iter().cloned().filter(|&(m, _)| 2 * m >= max_m).collect();
            if large.len() >= 2 && large.iter().all(|&(_, e)| e > 0.0) {
                let lo = large.iter().map(|&(_, e)| e).fold(f64::INFINITY, f64::min);
                let hi = large.iter().map(|&(_, e)| e).fold(0.0_f64, f64::max);
                let spread = hi / lo - 1.0;
                collapse.push(CollapseRow {
                    setting: id,
                    n,
                    m_used: large.iter().map(|&(m, _)| m).collect(),
                    spread,
                    collapsed: spread < 0.15,
                });
            }
            // smallest m already within 15% of the largest panel's error
            let reference = panels.iter().find(|&&(m, _)| m == max_m).unwrap().1;
            if reference > 0.0 {
                if let Some(&(m_star, _)) = panels
                    .iter()
                    .filter(|&&(_, e)| e <= 1.15 * reference)
                    .min_by_key(|&&(m, _)| m)
                {
                    phase_points.push((n as f64, m_star as f64));
                }
            }
        }
    }
    let phase_exponent = if phase_points.len() >= 2 {
        let xs: Vec<f64> = phase_points.iter().map(|&(n, _)| n.ln()).collect();
        let ys: Vec<f64> = phase_points.iter().map(|&(_, m)| m.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        if sxx > 0.0 {
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
            Some(sxy / sxx)
        } else {
            None
        }
    } else {
        None
    };

    Ok(RateReport {
        slopes,
        collapse,
        phase_exponent,
        theoretical_rate_exponent: -2.0 * h / (1.0 + 2.0 * h),
        parametric_exponent: -1.0,
        theoretical_phase_exponent: 1.0 / (2.0 * h),
        h,
    })
}
