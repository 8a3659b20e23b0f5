//! Penalty and kernel selection by generalized cross-validation.
//!
//! The score for a penalty vector Λ is
//!
//!   GCV(Λ) = mean_ℓ [N⁻¹ ‖√W)(y_ℓ − A b̂_ℓ)‖²] / [N⁻¹ tr(I − H(Λ))]²,
//!
//! with the hat-matrix trace computed from the (P·k₀)-sized whitened normal
//! matrix, never from an N×N object. Per-predictor penalties are tuned by
//! cyclic coordinate descent over a fixed grid; kernel hyperparameters by
//! scoring each (smoothness, range) candidate with its own tuned Λ.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::solver::{gcv_from_solution, Dataset, PenalizedSystem};
use crate::spectra::{build_quadrature, nystrom_decompose, MercerBasis};

/// A validated candidate grid: positive, finite, strictly increasing.
#[derive(Debug, Clone)]
pub struct TuneGrid {
    values: Vec<f64>,
}

impl TuneGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("tuning grid is empty".to_string()));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("tuning grid entries must be positive and finite".to_string()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("tuning grid must be strictly increasing".to_string()));
        }
        Ok(TuneGrid { values })
    }

    /// `count` points log-spaced from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(Error::invalid(format!(
                "log grid needs 0 < lo < hi and count ≥ 2, got lo={lo}, hi={hi}, count={count}"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let values = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        TuneGrid::new(values)
    }

    /// The stock penalty grid: 25 points from 1e-8 to 1e2.
    pub fn default_lambda() -> Self {
        TuneGrid::log_spaced(1e-8, 1e2, 25).expect("stock grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lower median (the middle entry, or the lower of the two middles).
    pub fn median(&self) -> f64 {
        self.values[(self.values.len() - 1) / 2]
    }
}

/// The stock Matérn smoothness candidates.
pub fn default_smoothness_candidates() -> Vec<f64> {
    vec![1.5, 2.5, 3.5, 5.5]
}

/// The stock Matérn range candidates.
pub fn default_range_candidates() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}

/// The stock number of coordinate-descent sweeps.
pub const DEFAULT_CYCLES: usize = 3;

/// GCV at one penalty vector. Errors if the residual degrees of freedom
/// N − tr H are not positive.
pub fn gcv_score(system: &PenalizedSystem, lambda: &[f64]) -> Result<f64> {
    let sol = system.solve(lambda)?;
    gcv_from_solution(system, &sol)
        .ok_or_else(|| Error::numerical("GCV denominator tr(I − H) is not positive".to_string()))
}

/// One scored candidate during the cyclic search.
#[derive(Debug, Clone)]
pub struct TraceRow {
    /// 1-based sweep number.
    pub cycle: usize,
    /// 1-based predictor whose penalty was being scanned.
    pub predictor: usize,
    /// The grid value tried for that predictor.
    pub lambda: f64,
    pub gcv: f64,
    pub edf: f64,
}

/// Outcome of the cyclic penalty search.
#[derive(Debug, Clone)]
pub struct LambdaTuneSummary {
    /// The selected penalty; every entry is a grid point.
    pub lambda: Vec<f64>,
    pub score: f64,
    /// Score at the all-median starting point; `score` never exceeds it.
    pub initial_score: f64,
    pub cycles_run: usize,
    pub trace: Vec<TraceRow>,
}

/// Cyclic coordinate descent for per-predictor penalties: start every λ_p
/// at the grid median, then repeatedly scan the grid one predictor at a
/// time, keeping a move only when it strictly lowers the score. Stops
/// after `max_cycles` sweeps or the first sweep with no change.
pub fn tune_lambda_cyclic(
    system: &PenalizedSystem,
    grid: &TuneGrid,
    max_cycles: usize,
) -> Result<LambdaTuneSummary> {
    if max_cycles == 0 {
        return Err(Error::invalid("need at least one tuning cycle".to_string()));
    }
    let p = system.p();
    let mut lambda = vec![grid.median(); p];
    let initial_score = gcv_score(system, &lambda)?;
    let mut best = initial_score;
    let mut trace = Vec::with_capacity(max_cycles * p * grid.values().len());
    let mut cycles_run = 0;
    for cycle in 1..=max_cycles {
        cycles_run = cycle;
        let mut changed = false;
        for q in 0..p {
            let mut arg = lambda[q];
            let mut local_best = best;
            for &g in grid.values() {
                let mut candidate = lambda.clone();
                candidate[q] = g;
                let sol = system.solve(&candidate)?;
                let score = gcv_from_solution(system, &sol).ok_or_else(|| {
                    Error::numerical("GCV denominator tr(I − H) is not positive".to_string())
                })?;
                trace.push(TraceRow {
                    cycle,
                    predictor: q + 1,
                    lambda: g,
                    gcv: score,
                    edf: sol.edf,
                });
                if score < local_best {
                    local_best = score;
                    arg = g;
                }
            }
            if arg != lambda[q] {
                lambda[q] = arg;
                best = local_best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(LambdaTuneSummary { lambda, score: best, initial_score, cycles_run, trace })
}

/// One (smoothness, range) kernel candidate with either its tuned penalty
/// and score or the reason it could not be scored.
#[derive(Debug, Clone)]
pub struct CandidateReport {
    pub smoothness: f64,
    pub range: f64,
    pub lambda: Option<Vec<f64>>,
    pub score: Option<f64>,
    pub failure: Option<String>,
}

/// Outcome of the kernel search: the winning kernel with its basis and
/// tuned penalty, plus the full candidate table.
#[derive(Debug, Clone)]
pub struct KernelTuneResult {
    pub spec: KernelSpec,
    pub basis: MercerBasis,
    pub lambda: Vec<f64>,
    pub score: f64,
    pub candidates: Vec<CandidateReport>,
}

/// Score every (smoothness, range) pair on the dataset's domain: build a
/// basis for each, tune its penalty cyclically, and keep the best GCV.
/// Ties break toward smaller smoothness, then smaller range, then smaller
/// total penalty. Candidates that fail (for example a non-positive-definite
/// geodesic Gram matrix) are recorded and skipped; if all fail, the error
/// lists every cause.
#[allow(clippy::too_many_arguments)]
pub fn tune_kernel(
    data: &Dataset,
    grid: &TuneGrid,
    smoothness_candidates: &[f64],
    range_candidates: &[f64],
    quad_size: usize,
    k0: usize,
    max_cycles: usize,
) -> Result<KernelTuneResult> {
    if smoothness_candidates.is_empty() || range_candidates.is_empty() {
        return Err(Error::invalid("kernel candidate lists must be non-empty".to_string()));
    }
    let quadrature = build_quadrature(data.domain(), quad_size)?;
    let mut candidates = Vec::with_capacity(smoothness_candidates.len() * range_candidates.len());
    let mut best: Option<(KernelSpec, MercerBasis, LambdaTuneSummary)> = None;
    for &nu in smoothness_candidates {
        for &rho in range_candidates {
            let attempt = KernelSpec::matern(data.domain(), nu, rho)
                .and_then(|spec| {
                    let basis = nystrom_decompose(&spec, &quadrature, k0)?;
                    Ok((spec, basis))
                })
                .and_then(|(spec, basis)| {
                    let system = PenalizedSystem::assemble(data, &basis)?;
                    let summary = tune_lambda_cyclic(&system, grid, max_cycles)?;
                    Ok((spec, basis, summary))
                });
            match attempt {
                Ok((spec, basis, summary)) => {
                    candidates.push(CandidateReport {
                        smoothness: nu,
                        range: rho,
                        lambda: Some(summary.lambda.clone()),
                        score: Some(summary.score),
                        failure: None,
                    });
                    let replace = match &best {
                        None => true,
                        Some((bspec, _, bsum)) => {
                            let new_key = (
                                summary.score,
                                nu,
                                rho,
                                summary.lambda.iter().sum::<f64>(),
                            );
                            let old_key = (
                                bsum.score,
                                bspec.smoothness,
                                bspec.range,
                                bsum.lambda.iter().sum::<f64>(),
                            );
                            new_key < old_key
                        }
                    };
                    if replace {
                        best = Some((spec, basis, summary));
                    }
                }
                Err(err) => {
                    candidates.push(CandidateReport {
                        smoothness: nu,
                        range: rho,
                        lambda: None,
                        score: None,
                        failure: Some(err.to_string()),
                    });
                }
            }
        }
    }
    match best {
        Some((spec, basis, summary)) => Ok(KernelTuneResult {
            spec,
            basis,
            lambda: summary.lambda,
            score: summary.score,
            candidates,
        }),
        None => {
            let causes: Vec<String> = candidates
                .iter()
                .map(|c| {
                    format!(
                        "nu={}, rho={}: {}",
                        c.smoothness,
                        c.range,
                        c.failure.as_deref().unwrap_or("unknown")
                    )
                })
                .collect();
            Err(Error::numerical(format!(
                "no kernel candidate could be tuned: {}",
                causes.join("; ")
            )))
        }
    }
}
