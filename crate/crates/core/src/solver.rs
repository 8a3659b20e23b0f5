//! Penalized least squares in the truncated Mercer basis.
//!
//! With observations stacked as rows, the design row for observation (i, j)
//! is V_ijᵀ ⊗ X_iᵀ where V_ij holds the eigenfunction values at u_ij, and
//! the per-output coefficient vector solves
//!
//!   (AᵀWA + T⁻¹ ⊗ Λ) b = AᵀW y,   W = diag(1/(n·m_i)), T = diag(τ_k),
//!
//! so each predictor p is shrunk by λ_p/τ_k along eigenfunction k. One
//! symmetric positive-definite factorization is shared by all outputs.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, Domain, DomainPoint, KernelFamily, KernelSpec};
use crate::spectra::MercerBasis;

/// One subject: covariate vector, observation locations, and an
/// (m_i × L) response matrix aligned with the locations.
#[derive(Debug, Clone)]
pub struct Subject {
    pub covariates: Vec<f64>,
    pub locations: Vec<DomainPoint>,
    pub responses: DMatrix<f64>,
}

/// A validated regression dataset over one domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    domain: Domain,
    subjects: Vec<Subject>,
    p: usize,
    l: usize,
}

impl Dataset {
    pub fn new(domain: Domain, subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::invalid("dataset needs at least one subject".to_string()));
        }
        let p = subjects[0].covariates.len();
        let l = subjects[0].responses.ncols();
        if p == 0 || l == 0 {
            return Err(Error::invalid("dataset needs P ≥ 1 covariates and L ≥ 1 outputs".to_string()));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.covariates.len() != p {
                return Err(Error::invalid(format!(
                    "subject {i} has {} covariates, expected {p}",
                    s.covariates.len()
                )));
            }
            if s.locations.is_empty() {
                return Err(Error::invalid(format!("subject {i} has no observations")));
            }
            if s.responses.nrows() != s.locations.len() || s.responses.ncols() != l {
                return Err(Error::invalid(format!(
                    "subject {i}: {} locations but a {}×{} response block",
                    s.locations.len(),
                    s.responses.nrows(),
                    s.responses.ncols()
                )));
            }
            if s.covariates.iter().any(|x| !x.is_finite())
                || s.responses.iter().any(|y| !y.is_finite())
            {
                return Err(Error::invalid(format!(
                    "subject {i} has non-finite covariates or responses"
                )));
            }
            if let Some(bad) = s.locations.iter().find(|u| u.coords().len() != domain.coord_count())
            {
                return Err(Error::invalid(format!(
                    "subject {i}: location arity {} does not match domain '{domain}'",
                    bad.coords().len()
                )));
            }
        }
        Ok(Dataset { domain, subjects, p, l })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// N = Σ m_i.
    pub fn total_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.locations.len()).sum()
    }

    /// All locations in row order (subject-major).
    pub fn stacked_locations(&self) -> Vec<DomainPoint> {
        self.subjects.iter().flat_map(|s| s.locations.iter().cloned()).collect()
    }

    /// Observation weights w_ij = 1/(n·m_i) in row order; always sums to 1.
    pub fn observation_weights(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let mut w = Vec::with_capacity(self.total_obs());
        for s in &self.subjects {
            let wi = 1.0 / (n * s.locations.len() as f64);
            w.extend(std::iter::repeat_n(wi, s.locations.len()));
        }
        w
    }

    /// Responses stacked into an N×L matrix in row order.
    pub fn stacked_responses(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.total_obs(), self.l);
        let mut row = 0;
        for s in &self.subjects {
            for j in 0..s.responses.nrows() {
                for out in 0..self.l {
                    y[(row, out)] = s.responses[(j, out)];
                }
                row += 1;
            }
        }
        y
    }
}

/// Moment summary of the covariate design and the observation counts.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// Σ_X = n⁻¹ Σ X_i X_iᵀ.
    pub sigma_x: DMatrix<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub harmonic_mean_m: f64,
    pub arithmetic_mean_m: f64,
    /// ζ̂ = max |X_ip|.
    pub max_abs_covariate: f64,
    pub warnings: Vec<String>,
}

/// Covariate moment matrix, its extreme eigenvalues, and the two means of
/// the per-subject observation counts, with warnings when the design is
/// near-singular or the counts are badly unbalanced.
pub fn diagnostics(data: &Dataset) -> DiagnosticsReport {
    let n = data.n();
    let p = data.p();
    let mut sigma_x = DMatrix::zeros(p, p);
    let mut zeta = 0.0_f64;
    for s in data.subjects() {
        for a in 0..p {
            zeta = zeta.max(s.covariates[a].abs());
            for b in 0..p {
                sigma_x[(a, b)] += s.covariates[a] * s.covariates[b] / n as f64;
            }
        }
    }
    let eig = sigma_x.clone().symmetric_eigenvalues();
    let sigma_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma_max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let arithmetic_mean_m =
        data.subjects().iter().map(|s| s.locations.len() as f64).sum::<f64>() / n as f64;
    let harmonic_mean_m =
        n as f64 / data.subjects().iter().map(|s| 1.0 / s.locations.len() as f64).sum::<f64>();
    let mut warnings = Vec::new();
    if sigma_min < 1e-8 {
        warnings.push(format!(
            "covariate moment matrix is numerically singular (min eigenvalue {sigma_min:.3e})"
        ));
    }
    if arithmetic_mean_m / harmonic_mean_m > 10.0 {
        warnings.push(format!(
            "observation counts are highly unbalanced (arithmetic mean {arithmetic_mean_m:.2} \
             vs harmonic mean {harmonic_mean_m:.2})"
        ));
    }
    DiagnosticsReport {
        sigma_x,
        sigma_min,
        sigma_max,
        harmonic_mean_m,
        arithmetic_mean_m,
        max_abs_covariate: zeta,
        warnings,
    }
}

/// Design matrix (N × P·k₀) and weight vector for a dataset under a basis.
#[derive(Debug, Clone)]
pub struct Design {
    /// Row (i,j) is V_ijᵀ ⊗ X_iᵀ; column k·P + p carries v_{k+1}·X_{p+1}.
    pub matrix: DMatrix<f64>,
    pub weights: DVector<f64>,
}

/// Assemble the Kronecker design from eigenfunction values at the
/// observation locations.
pub fn build_design(data: &Dataset, basis: &MercerBasis) -> Result<Design> {
    let values = basis.extend_batch(&data.stacked_locations())?;
    Ok(design_from_values(data, &values))
}

fn design_from_values(data: &Dataset, values: &DMatrix<f64>) -> Design {
    let k0 = values.ncols();
    let p = data.p();
    let n_obs = data.total_obs();
    let mut a = DMatrix::zeros(n_obs, p * k0);
    let mut row = 0;
    for s in data.subjects() {
        for _ in 0..s.locations.len() {
            for k in 0..k0 {
                let v = values[(row, k)];
                for (q, &x) in s.covariates.iter().enumerate() {
                    a[(row, k * p + q)] = v * x;
                }
            }
            row += 1;
        }
    }
    Design { matrix: a, weights: DVector::from_vec(data.observation_weights()) }
}

/// The sufficient statistics of the penalized least-squares problem:
/// M = AᵀWA, moment vectors AᵀWy per output, and the response energies.
/// Assembled once per (dataset, basis); solving for any Λ is then cheap.
#[derive(Debug, Clone)]
pub struct PenalizedSystem {
    normal: DMatrix<f64>,
    moments: DMatrix<f64>,
    weighted_y_sq: Vec<f64>,
    tau: Vec<f64>,
    n_obs: usize,
    p: usize,
    k0: usize,
}

/// Solution of the penalized system at one Λ, with the fit summaries the
/// GCV score and the fit diagnostics are made of.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    /// (P·k₀) × L stacked coefficients, column-stacked vec layout per output.
    pub coefficients: DMatrix<f64>,
    /// Per-output ‖√W(y − Ab)‖².
    pub weighted_rss: Vec<f64>,
    /// Per-output, per-predictor squared kernel norm Σ_k b_pk²/τ_k.
    pub rkhs_norms: Vec<Vec<f64>>,
    /// tr H(Λ), shared by all outputs.
    pub edf: f64,
    /// Σ_ℓ [rss_ℓ + Σ_p λ_p·‖β̂_ℓp‖²_K].
    pub objective: f64,
}

impl PenalizedSystem {
    pub fn assemble(data: &Dataset, basis: &MercerBasis) -> Result<Self> {
        let values = basis.extend_batch(&data.stacked_locations())?;
        Self::assemble_from_values(data, basis, &values)
    }

    /// Assemble from precomputed eigenfunction values (N × k₀ in row order),
    /// letting callers that already extended the basis skip the second pass.
    pub fn assemble_from_values(
        data: &Dataset,
        basis: &MercerBasis,
        values: &DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != data.total_obs() || values.ncols() != basis.k0() {
            return Err(Error::invalid(format!(
                "eigenfunction value block is {}×{}, expected {}×{}",
                values.nrows(),
                values.ncols(),
                data.total_obs(),
                basis.k0()
            )));
        }
        let design = design_from_values(data, values);
        let n_obs = data.total_obs();
        let y = data.stacked_responses();
        let mut a_tilde = design.matrix;
        let mut y_tilde = y;
        for row in 0..n_obs {
            let sw = design.weights[row].sqrt();
            a_tilde.row_mut(row).scale_mut(sw);
            y_tilde.row_mut(row).scale_mut(sw);
        }
        let normal = a_tilde.tr_mul(&a_tilde);
        let moments = a_tilde.tr_mul(&y_tilde);
        let weighted_y_sq = (0..data.l())
            .map(|out| y_tilde.column(out).norm_squared())
            .collect();
        Ok(PenalizedSystem {
            normal,
            moments,
            weighted_y_sq,
            tau: basis.eigenvalues().to_vec(),
            n_obs,
            p: data.p(),
            k0: basis.k0(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    /// Per-output ‖√W y‖² (the null-model residual energy).
    pub fn weighted_response_energy(&self) -> &[f64] {
        &self.weighted_y_sq
    }

    fn penalty_diagonal(&self, lambda: &[f64]) -> Result<DVector<f64>> {
        if lambda.len() != self.p {
            return Err(Error::invalid(format!(
                "Λ has {} entries, expected {}",
                lambda.len(),
                self.p
            )));
        }
        if lambda.iter().any(|&l| !l.is_finite() || l <= 0.0) {
            return Err(Error::invalid("Λ entries must be positive and finite".to_string()));
        }
        let mut d = DVector::zeros(self.p * self.k0);
        for k in 0..self.k0 {
            for q in 0..self.p {
                d[k * self.p + q] = lambda[q] / self.tau[k];
            }
        }
        Ok(d)
    }

    /// Solve at one Λ via a shared Cholesky factorization, with the
    /// effective degrees of freedom tr H = Σ ψ/(1+ψ) computed from the
    /// eigenvalues ψ of D^{-1/2} M D^{-1/2} (never an N×N matrix).
    pub fn solve(&self, lambda: &[f64]) -> Result<PenalizedSolution> {
        let d = self.penalty_diagonal(lambda)?;
        let dim = self.p * self.k0;
        let mut system = self.normal.clone();
        for i in 0..dim {
            system[(i, i)] += d[i];
        }
        let chol = match Cholesky::new(system) {
            Some(c) => c,
            None => {
                let eig = {
                    let mut s = self.normal.clone();
                    for i in 0..dim {
                        s[(i, i)] += d[i];
                    }
                    s.symmetric_eigenvalues()
                };
                let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                return Err(Error::numerical(format!(
                    "penalized normal matrix failed to factorize \
                     (condition estimate {:.3e})",
                    max / min.abs().max(f64::MIN_POSITIVE)
                )));
            }
        };
        let coefficients = chol.solve(&self.moments);

        // tr H from the whitened normal matrix
        let mut whitened = self.normal.clone();
        for a in 0..dim {
            for b in 0..dim {
                whitened[(a, b)] /= (d[a] * d[b]).sqrt();
            }
        }
        let psi = SymmetricEigen::new(whitened).eigenvalues;
        let edf: f64 = psi.iter().map(|&e| {
            let e = e.max(0.0);
            e / (1.0 + e)
        }).sum();

        let l = self.moments.ncols();
        let mut weighted_rss = Vec::with_capacity(l);
        let mut rkhs_norms = Vec::with_capacity(l);
        let mut objective = 0.0;
        for out in 0..l {
            let b = coefficients.column(out);
            let mb = &self.normal * b;
            let rss = (self.weighted_y_sq[out] - 2.0 * b.dot(&self.moments.column(out))
                + b.dot(&mb))
                .max(0.0);
            let mut norms = vec![0.0; self.p];
            for k in 0..self.k0 {
                for q in 0..self.p {
                    let c = b[k * self.p + q];
                    norms[q] += c * c / self.tau[k];
                }
            }
            objective += rss + lambda.iter().zip(&norms).map(|(lam, nm)| lam * nm).sum::<f64>();
            weighted_rss.push(rss);
            rkhs_norms.push(norms);
        }
        Ok(PenalizedSolution { coefficients, weighted_rss, rkhs_norms, edf, objective })
    }
}

/// A fitted regression: basis, per-output coefficients, penalty, and fit
/// diagnostics.
#[derive(Debug, Clone)]
pub struct FittedModel {
    basis: MercerBasis,
    /// Per output ℓ: a P × k₀ coefficient matrix (β̂_ℓp = Σ_k b[p,k] v_k).
    coefficients: Vec<DMatrix<f64>>,
    lambda: Vec<f64>,
    objective: f64,
    gcv: f64,
    edf: f64,
    /// Per-output, per-predictor ‖β̂_ℓp‖²_K.
    rkhs_norms: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

impl FittedModel {
    pub fn basis(&self) -> &MercerBasis {
        &self.basis
    }

    pub fn coefficients(&self, output: usize) -> &DMatrix<f64> {
        &self.coefficients[output]
    }

    pub fn outputs(&self) -> usize {
        self.coefficients.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn gcv(&self) -> f64 {
        self.gcv
    }

    pub fn edf(&self) -> f64 {
        self.edf
    }

    pub fn rkhs_norms(&self) -> &[Vec<f64>] {
        &self.rkhs_norms
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Rebuild a model from stored parts (deserialization); diagnostics are
    /// carried through as saved.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        basis: MercerBasis,
        coefficients: Vec<DMatrix<f64>>,
        lambda: Vec<f64>,
        objective: f64,
        gcv: f64,
        edf: f64,
        rkhs_norms: Vec<Vec<f64>>,
        warnings: Vec<String>,
    ) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("model needs at least one output".to_string()));
        }
        let p = lambda.len();
        if lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("penalty must be positive".to_string()));
        }
        for c in &coefficients {
            if c.nrows() != p || c.ncols() != basis.k0() {
                return Err(Error::invalid(format!(
                    "coefficient block is {}×{}, expected {}×{}",
                    c.nrows(),
                    c.ncols(),
                    p,
                    basis.k0()
                )));
            }
        }
        Ok(FittedModel {
            basis,
            coefficients,
            lambda,
            objective,
            gcv,
            edf,
            rkhs_norms,
            warnings,
        })
    }

    /// β̂_ℓp(u) for every (ℓ, p) at one point: returns an L × P matrix.
    pub fn coefficient_functions(&self, u: &DomainPoint) -> Result<DMatrix<f64>> {
        let v = self.basis.extend(u)?;
        let l = self.coefficients.len();
        let p = self.lambda.len();
        let mut out = DMatrix::zeros(l, p);
        for (li, b) in self.coefficients.iter().enumerate() {
            for q in 0..p {
                out[(li, q)] = (0..self.basis.k0()).map(|k| b[(q, k)] * v[k]).sum();
            }
        }
        Ok(out)
    }
}

/// Fit the penalized regression at a fixed Λ (per-predictor penalties).
pub fn fit(data: &Dataset, basis: &MercerBasis, lambda: &[f64]) -> Result<FittedModel> {
    let system = PenalizedSystem::assemble(data, basis)?;
    fit_from_system(&system, basis, lambda)
}

/// Fit from a pre-assembled system (shared with tuning and simulation).
pub fn fit_from_system(
    system: &PenalizedSystem,
    basis: &MercerBasis,
    lambda: &[f64],
) -> Result<FittedModel> {
    let sol = system.solve(lambda)?;
    let mut warnings = Vec::new();
    if basis.k0() * system.p() > system.n_obs() {
        warnings.push(format!(
            "coefficient count {} exceeds observation count {}; the fit is \
             regularization-determined in the deficient directions",
            basis.k0() * system.p(),
            system.n_obs()
        ));
    }
    if basis.truncated() {
        warnings.push(format!(
            "basis truncated to {} of {} requested eigenfunctions",
            basis.k0(),
            basis.requested_k0()
        ));
    }
    let gcv = match gcv_from_solution(system, &sol) {
        Some(g) => g,
        None => {
            warnings.push(
                "GCV is undefined here: no residual degrees of freedom".to_string(),
            );
            f64::NAN
        }
    };
    let l = sol.coefficients.ncols();
    let p = system.p();
    let k0 = system.k0();
    let mut per_output = Vec::with_capacity(l);
    for out in 0..l {
        let mut b = DMatrix::zeros(p, k0);
        for k in 0..k0 {
            for q in 0..p {
                b[(q, k)] = sol.coefficients[(k * p + q, out)];
            }
        }
        per_output.push(b);
    }
    Ok(FittedModel {
        basis: basis.clone(),
        coefficients: per_output,
        lambda: lambda.to_vec(),
        objective: sol.objective,
        gcv,
        edf: sol.edf,
        rkhs_norms: sol.rkhs_norms,
        warnings,
    })
}

/// Generalized cross-validation score assembled from a solved system:
/// mean_ℓ[N⁻¹·rss_ℓ] / [N⁻¹·(N − tr H)]², or None when tr(I − H) ≤ 0.
pub(crate) fn gcv_from_solution(system: &PenalizedSystem, sol: &PenalizedSolution) -> Option<f64> {
    let n = system.n_obs() as f64;
    let denom = (n - sol.edf) / n;
    if denom <= 0.0 {
        return None;
    }
    let mean_rss =
        sol.weighted_rss.iter().sum::<f64>() / sol.weighted_rss.len() as f64 / n;
    Some(mean_rss / (denom * denom))
}

/// The quadratic objective the fit minimizes, recomputed from scratch:
/// Σ_ℓ [Σ_ij w_ij (Y_ijℓ − Σ_pk X_ip b_pk v_k(u_ij))² + Σ_p λ_p Σ_k b_pk²/τ_k].
///
/// Independent of the solver path, so it can probe minimality and gradients.
pub fn objective(
    data: &Dataset,
    basis: &MercerBasis,
    lambda: &[f64],
    coefficients: &[DMatrix<f64>],
) -> Result<f64> {
    if coefficients.len() != data.l() {
        return Err(Error::invalid(format!(
            "{} coefficient blocks for {} outputs",
            coefficients.len(),
            data.l()
        )));
    }
    if lambda.len() != data.p() {
        return Err(Error::invalid("Λ length must equal P".to_string()));
    }
    let k0 = basis.k0();
    for c in coefficients {
        if c.nrows() != data.p() || c.ncols() != k0 {
            return Err(Error::invalid("coefficient block shape mismatch".to_string()));
        }
    }
    let values = basis.extend_batch(&data.stacked_locations())?;
    let weights = data.observation_weights();
    let tau = basis.eigenvalues();
    let mut total = 0.0;
    for (out, b) in coefficients.iter().enumerate() {
        let mut row = 0;
        let mut rss = 0.0;
        for s in data.subjects() {
            for j in 0..s.locations.len() {
                let mut mean = 0.0;
                for (q, &x) in s.covariates.iter().enumerate() {
                    let mut beta = 0.0;
                    for k in 0..k0 {
                        beta += b[(q, k)] * values[(row, k)];
                    }
                    mean += x * beta;
                }
                let r = s.responses[(j, out)] - mean;
                rss += weights[row] * r * r;
                row += 1;
            }
        }
        let mut penalty = 0.0;
        for q in 0..data.p() {
            let norm: f64 = (0..k0).map(|k| b[(q, k)].powi(2) / tau[k]).sum();
            penalty += lambda[q] * norm;
        }
        total += rss + penalty;
    }
    Ok(total)
}

/// Model-mean prediction Σ_p X_new[p]·β̂_ℓp(u) for each output ℓ.
pub fn predict(model: &FittedModel, x_new: &[f64], u: &DomainPoint) -> Result<Vec<f64>> {
    if x_new.len() != model.lambda.len() {
        return Err(Error::invalid(format!(
            "covariate vector has {} entries, model expects {}",
            x_new.len(),
            model.lambda.len()
        )));
    }
    let betas = model.coefficient_functions(u)?;
    Ok((0..model.outputs())
        .map(|li| (0..x_new.len()).map(|q| x_new[q] * betas[(li, q)]).sum())
        .collect())
}

/// Dense representer-theorem solution β̂(·) = Σ_ij c_ij K(·, u_ij) for small
/// single-predictor, single-output problems; the untruncated ground truth
/// that basis-truncated fits must approach.
#[derive(Debug, Clone)]
pub struct RepresenterOracle {
    spec: KernelSpec,
    locations: Vec<DomainPoint>,
    coefficients: DVector<f64>,
}

impl RepresenterOracle {
    pub fn eval(&self, u: &DomainPoint) -> Result<f64> {
        let mut acc = 0.0;
        for (c, loc) in self.coefficients.iter().zip(&self.locations) {
            acc += c * self.spec.eval(u, loc)?;
        }
        Ok(acc)
    }

    pub fn coefficients(&self) -> &[f64] {
        self.coefficients.as_slice()
    }
}

/// Solve the exact kernel-space normal equations
/// (D_X W D_X G + λI) c = D_X W y on the stacked observations.
pub fn representer_oracle_fit(
    data: &Dataset,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<RepresenterOracle> {
    if data.p() != 1 || data.l() != 1 {
        return Err(Error::invalid(
            "the representer oracle handles P = 1, L = 1 only".to_string(),
        ));
    }
    let n_obs = data.total_obs();
    if n_obs > 200 {
        return Err(Error::invalid(format!(
            "oracle is capped at 200 observations, got {n_obs}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("λ must be positive".to_string()));
    }
    if spec.family != KernelFamily::Matern {
        return Err(Error::invalid("oracle needs a pointwise-evaluable kernel".to_string()));
    }
    let locations = data.stacked_locations();
    let gram = gram_matrix(spec, &locations)?;
    let weights = data.observation_weights();
    let mut x = Vec::with_capacity(n_obs);
    let mut y = DVector::zeros(n_obs);
    let mut row = 0;
    for s in data.subjects() {
        for j in 0..s.locations.len() {
            x.push(s.covariates[0]);
            y[row] = s.responses[(j, 0)];
            row += 1;
        }
    }
    // (D_X W D_X G + λ I) c = D_X W y
    let mut system = gram;
    for a in 0..n_obs {
        let scale = x[a] * weights[a] * x[a];
        for b in 0..n_obs {
            system[(a, b)] *= scale;
        }
        system[(a, a)] += lambda;
    }
    let mut rhs = DVector::zeros(n_obs);
    for a in 0..n_obs {
        rhs[a] = x[a] * weights[a] * y[a];
    }
    let coefficients = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("representer system is singular".to_string()))?;
    Ok(RepresenterOracle { spec: spec.clone(), locations, coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{build_quadrature, nystrom_decompose};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn interval_basis(nodes: usize, k0: usize) -> MercerBasis {
        let spec = KernelSpec::matern(Domain::Interval, 1.5, 1.0).unwrap();
        let quad = build_quadrature(Domain::Interval, nodes).unwrap();
        nystrom_decompose(&spec, &quad, k0).unwrap()
    }

    /// Random dataset whose responses follow Y = Xβ(u) + noise·ε with β
    /// drawn in the span of the basis; returns the truth coefficients too.
    fn synthetic(
        basis: &MercerBasis,
        n: usize,
        m: usize,
        p: usize,
        l: usize,
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Dataset, Vec<DMatrix<f64>>) {
        let k0 = basis.k0();
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let truth: Vec<DMatrix<f64>> = (0..l)
            .map(|_| DMatrix::from_fn(p, k0, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let mut subjects = Vec::with_capacity(n);
        for _ in 0..n {
            let covariates: Vec<f64> =
                (0..p).map(|_| 1.0 + gauss.sample(rng)).collect();
            let locations: Vec<DomainPoint> =
                (0..m).map(|_| Domain::Interval.sample_uniform(rng)).collect();
            let values = basis.extend_batch(&locations).unwrap();
            let mut responses = DMatrix::zeros(m, l);
            for j in 0..m {
                for (out, b) in truth.iter().enumerate() {
                    let mut mean = 0.0;
                    for (q, &x) in covariates.iter().enumerate() {
                        for k in 0..k0 {
                            mean += x * b[(q, k)] * values[(j, k)];
                        }
                    }
                    responses[(j, out)] = mean + noise * gauss.sample(rng);
                }
            }
            subjects.push(Subject { covariates, locations, responses });
        }
        (Dataset::new(Domain::Interval, subjects).unwrap(), truth)
    }

    #[test]
    fn diagnostics_examples() {
        let mk = |m: usize| Subject {
            covariates: vec![1.0],
            locations: (0..m)
                .map(|j| DomainPoint::new(Domain::Interval, vec![j as f64 / m as f64]).unwrap())
                .collect(),
            responses: DMatrix::zeros(m, 1),
        };
        let data = Dataset::new(Domain::Interval, vec![mk(4), mk(4)]).unwrap();
        let d = diagnostics(&data);
        assert_relative_eq!(d.sigma_x[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.sigma_min, 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.sigma_max, 1.0, epsilon = 1e-14);
        assert_relative_eq!(d.harmonic_mean_m, d.arithmetic_mean_m, epsilon = 1e-14);
        assert!(d.warnings.is_empty());

        let data = Dataset::new(Domain::Interval, vec![mk(1), mk(100)]).unwrap();
        let d = diagnostics(&data);
        assert_relative_eq!(d.arithmetic_mean_m, 50.5, epsilon = 1e-12);
        assert_relative_eq!(d.harmonic_mean_m, 200.0 / 101.0, epsilon = 1e-12);
        assert_eq!(d.warnings.len(), 1, "unbalance warning expected: {:?}", d.warnings);

        // duplicated covariate column → singular Σ_X
        let s = Subject {
            covariates: vec![2.0, 2.0],
            locations: vec![DomainPoint::new(Domain::Interval, vec![0.5]).unwrap()],
            responses: DMatrix::zeros(1, 1),
        };
        let d = diagnostics(&Dataset::new(Domain::Interval, vec![s]).unwrap());
        assert!(d.sigma_min.abs() < 1e-12);
        assert!(!d.warnings.is_empty());
        assert_relative_eq!(d.max_abs_covariate, 2.0);
    }

    #[test]
    fn design_layout_matches_vec_convention() {
        let basis = interval_basis(64, 2);
        let s1 = Subject {
            covariates: vec![3.0, 5.0],
            locations: vec![DomainPoint::new(Domain::Interval, vec![0.3]).unwrap()],
            responses: DMatrix::zeros(1, 1),
        };
        let s2 = Subject {
            covariates: vec![1.0, -2.0],
            locations: vec![
                DomainPoint::new(Domain::Interval, vec![0.6]).unwrap(),
                DomainPoint::new(Domain::Interval, vec![0.9]).unwrap(),
            ],
            responses: DMatrix::zeros(2, 1),
        };
        let data = Dataset::new(Domain::Interval, vec![s1, s2]).unwrap();
        let design = build_design(&data, &basis).unwrap();
        assert_eq!(design.matrix.nrows(), 3);
        assert_eq!(design.matrix.ncols(), 4);
        let v = basis.extend(&data.subjects()[0].locations[0]).unwrap();
        // row layout (v₁X₁, v₁X₂, v₂X₁, v₂X₂)
        assert_relative_eq!(design.matrix[(0, 0)], v[0] * 3.0, epsilon = 1e-12);
        assert_relative_eq!(design.matrix[(0, 1)], v[0] * 5.0, epsilon = 1e-12);
        assert_relative_eq!(design.matrix[(0, 2)], v[1] * 3.0, epsilon = 1e-12);
        assert_relative_eq!(design.matrix[(0, 3)], v[1] * 5.0, epsilon = 1e-12);
        // weights 1/(n·m_i) sum to 1 even with unequal m_i
        assert_relative_eq!(design.weights.sum(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(design.weights[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(design.weights[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn single_predictor_design_is_plain_eigenfunctions() {
        let basis = interval_basis(64, 3);
        let s = Subject {
            covariates: vec![1.0],
            locations: vec![
                DomainPoint::new(Domain::Interval, vec![0.2]).unwrap(),
                DomainPoint::new(Domain::Interval, vec![0.7]).unwrap(),
            ],
            responses: DMatrix::zeros(2, 1),
        };
        let data = Dataset::new(Domain::Interval, vec![s]).unwrap();
        let design = build_design(&data, &basis).unwrap();
        let values = basis.extend_batch(&data.stacked_locations()).unwrap();
        for r in 0..2 {
            for k in 0..3 {
                assert_relative_eq!(design.matrix[(r, k)], values[(r, k)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn noiseless_recovery_and_ridge_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let basis = interval_basis(256, 12);
        let (data, truth) = synthetic(&basis, 30, 10, 2, 1, 0.0, &mut rng);
        let model = fit(&data, &basis, &[1e-12, 1e-12]).unwrap();
        let got = model.coefficients(0);
        let scale = truth[0].amax();
        for q in 0..2 {
            for k in 0..12 {
                assert!(
                    (got[(q, k)] - truth[0][(q, k)]).abs() <= 1e-6 * scale.max(1.0),
                    "coefficient ({q},{k}) off: {} vs {}",
                    got[(q, k)],
                    truth[0][(q, k)]
                );
            }
        }
        // heavy ridge crushes the coefficients
        let heavy = fit(&data, &basis, &[1e6, 1e6]).unwrap();
        assert!(heavy.coefficients(0).amax() < 1e-4 * scale.max(1.0));
    }

    #[test]
    fn fitted_coefficients_minimize_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = interval_basis(128, 6);
        let (data, _) = synthetic(&basis, 8, 4, 2, 1, 0.3, &mut rng);
        let lambda = [0.05, 0.2];
        let model = fit(&data, &basis, &lambda).unwrap();
        let at_fit = objective(&data, &basis, &lambda, &[model.coefficients(0).clone()]).unwrap();
        assert_relative_eq!(at_fit, model.objective(), max_relative = 1e-8);
        for _ in 0..100 {
            let perturbed = model.coefficients(0).map(|c| c + 0.01 * (rng.random::<f64>() - 0.5));
            let other = objective(&data, &basis, &lambda, &[perturbed]).unwrap();
            assert!(other >= at_fit - 1e-12, "perturbation beat the fit: {other} < {at_fit}");
        }
    }

    #[test]
    fn objective_examples_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let basis = interval_basis(96, 5);
        // b = 0, Y = 0 → 0; b = 0 → weighted response energy
        let (data, _) = synthetic(&basis, 4, 3, 2, 1, 0.5, &mut rng);
        let zero = vec![DMatrix::zeros(2, 5)];
        let weights = data.observation_weights();
        let y_energy: f64 = data
            .stacked_responses()
            .column(0)
            .iter()
            .zip(&weights)
            .map(|(y, w)| w * y * y)
            .sum();
        let at_zero = objective(&data, &basis, &[0.1, 0.1], &zero).unwrap();
        assert_relative_eq!(at_zero, y_energy, max_relative = 1e-12);
        let blank = Dataset::new(
            Domain::Interval,
            data.subjects()
                .iter()
                .map(|s| Subject {
                    covariates: s.covariates.clone(),
                    locations: s.locations.clone(),
                    responses: DMatrix::zeros(s.responses.nrows(), 1),
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(objective(&blank, &basis, &[0.1, 0.1], &zero).unwrap(), 0.0);

        // central finite differences vanish at the fitted coefficients
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (data, _) = synthetic(&basis, 4, 3, 2, 1, 0.4, &mut rng);
            let lambda = [0.02, 0.08];
            let model = fit(&data, &basis, &lambda).unwrap();
            let b0 = model.coefficients(0).clone();
            let at_fit = objective(&data, &basis, &lambda, &[b0.clone()]).unwrap();
            let tol = 1e-5 * (1.0 + at_fit.abs());
            let step = 1e-6;
            for q in 0..2 {
                for k in 0..5 {
                    let mut up = b0.clone();
                    up[(q, k)] += step;
                    let mut dn = b0.clone();
                    dn[(q, k)] -= step;
                    let g = (objective(&data, &basis, &lambda, &[up]).unwrap()
                        - objective(&data, &basis, &lambda, &[dn]).unwrap())
                        / (2.0 * step);
                    assert!(
                        g.abs() <= tol,
                        "seed {seed}: gradient component ({q},{k}) = {g:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn outputs_fit_separately() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let basis = interval_basis(128, 6);
        let (data, _) = synthetic(&basis, 10, 5, 2, 3, 0.3, &mut rng);
        let lambda = [0.03, 0.3];
        let joint = fit(&data, &basis, &lambda).unwrap();
        for out in 0..3 {
            let single = Dataset::new(
                Domain::Interval,
                data.subjects()
                    .iter()
                    .map(|s| Subject {
                        covariates: s.covariates.clone(),
                        locations: s.locations.clone(),
                        responses: DMatrix::from_fn(s.responses.nrows(), 1, |j, _| {
                            s.responses[(j, out)]
                        }),
                    })
                    .collect(),
            )
            .unwrap();
            let alone = fit(&single, &basis, &lambda).unwrap();
            let diff = (joint.coefficients(out) - alone.coefficients(0)).amax();
            assert!(diff < 1e-12, "output {out} differs by {diff}");
        }
    }

    #[test]
    fn order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let basis = interval_basis(128, 6);
        let (data, _) = synthetic(&basis, 6, 5, 2, 1, 0.3, &mut rng);
        let lambda = [0.05, 0.02];
        let base = fit(&data, &basis, &lambda).unwrap();

        let mut subjects = data.subjects().to_vec();
        subjects.reverse();
        // also reverse the rows inside each subject
        for s in &mut subjects {
            let m = s.locations.len();
            s.locations.reverse();
            let flipped = DMatrix::from_fn(m, 1, |j, c| s.responses[(m - 1 - j, c)]);
            s.responses = flipped;
        }
        let permuted = fit(&Dataset::new(Domain::Interval, subjects).unwrap(), &basis, &lambda)
            .unwrap();
        assert!((base.coefficients(0) - permuted.coefficients(0)).amax() < 1e-12);
        assert_relative_eq!(base.gcv(), permuted.gcv(), max_relative = 1e-12);
    }

    #[test]
    fn shrinkage_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let basis = interval_basis(128, 8);
        let (data, _) = synthetic(&basis, 8, 6, 2, 1, 0.5, &mut rng);
        let system = PenalizedSystem::assemble(&data, &basis).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..12 {
            let t = 10f64.powf(-6.0 + i as f64);
            let sol = system.solve(&[t, t]).unwrap();
            let norm = sol.coefficients.column(0).norm();
            assert!(norm <= prev + 1e-12, "‖b‖ grew at t={t}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn predict_is_linear_and_reproduces_basis() {
        let basis = interval_basis(128, 4);
        let mut coeff = DMatrix::zeros(1, 4);
        coeff[(0, 0)] = 1.0; // β̂ = v₁
        let model = FittedModel::from_parts(
            basis.clone(),
            vec![coeff],
            vec![1.0],
            0.0,
            0.0,
            0.0,
            vec![vec![0.0]],
            vec![],
        )
        .unwrap();
        let u = DomainPoint::new(Domain::Interval, vec![0.42]).unwrap();
        let v = basis.extend(&u).unwrap();
        assert_relative_eq!(predict(&model, &[1.0], &u).unwrap()[0], v[0], epsilon = 1e-12);
        assert_eq!(predict(&model, &[0.0], &u).unwrap()[0], 0.0);
        let a = predict(&model, &[2.0], &u).unwrap()[0];
        assert_relative_eq!(a, 2.0 * v[0], epsilon = 1e-12);
    }

    #[test]
    fn representer_oracle_hand_case_and_limits() {
        let spec = KernelSpec::matern(Domain::Interval, 1.5, 1.0).unwrap();
        let s = Subject {
            covariates: vec![1.0],
            locations: vec![DomainPoint::new(Domain::Interval, vec![0.5]).unwrap()],
            responses: DMatrix::from_element(1, 1, 1.0),
        };
        let data = Dataset::new(Domain::Interval, vec![s]).unwrap();
        // (x·w·x·K(u,u) + λ)c = x·w·y → (1 + 1)c = 1
        let oracle = representer_oracle_fit(&data, &spec, 1.0).unwrap();
        assert_relative_eq!(oracle.coefficients()[0], 0.5, epsilon = 1e-12);
        let at_obs = oracle.eval(&data.subjects()[0].locations[0]).unwrap();
        assert_relative_eq!(at_obs, 0.5, epsilon = 1e-12);

        // λ → ∞ sends β̂ to zero everywhere
        let heavy = representer_oracle_fit(&data, &spec, 1e9).unwrap();
        let probe = DomainPoint::new(Domain::Interval, vec![0.31]).unwrap();
        assert!(heavy.eval(&probe).unwrap().abs() < 1e-8);
    }

    #[test]
    fn truncated_fit_approaches_representer_oracle() {
        let spec = KernelSpec::matern(Domain::Interval, 1.5, 1.0).unwrap();
        let quad = build_quadrature(Domain::Interval, 512).unwrap();
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let lambda = 0.1;

        let make_instance = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(2..=5);
            let subjects: Vec<Subject> = (0..n)
                .map(|_| {
                    let m = rng.random_range(2..=5);
                    let locations: Vec<DomainPoint> =
                        (0..m).map(|_| Domain::Interval.sample_uniform(rng)).collect();
                    let responses =
                        DMatrix::from_fn(m, 1, |_, _| gauss.sample(rng));
                    Subject { covariates: vec![1.0 + gauss.sample(rng)], locations, responses }
                })
                .collect();
            Dataset::new(Domain::Interval, subjects).unwrap()
        };

        let rel_l2 = |data: &Dataset, k0: usize| -> f64 {
            let basis = nystrom_decompose(&spec, &quad, k0).unwrap();
            let model = fit(data, &basis, &[lambda]).unwrap();
            let oracle = representer_oracle_fit(data, &spec, lambda).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (node, w) in quad.nodes().iter().zip(quad.weights()) {
                let truth = oracle.eval(node).unwrap();
                let fitted = predict(&model, &[1.0], node).unwrap()[0];
                num += w * (fitted - truth).powi(2);
                den += w * truth * truth;
            }
            (num / den.max(1e-300)).sqrt()
        };

        // ten random small instances agree at k₀ = 50 within 0.1% relative L²
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let data = make_instance(&mut rng);
            let err = rel_l2(&data, 50);
            assert!(err <= 1e-3, "seed {seed}: relative L² error {err}");
        }

        // truncation error decreases with k₀ (10% slack for noise floors)
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let data = make_instance(&mut rng);
        let errs: Vec<f64> = [5, 10, 25, 50].iter().map(|&k| rel_l2(&data, k)).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * 1.1, "truncation error rose: {errs:?}");
        }
    }

    #[test]
    fn oracle_rejects_oversize_and_multioutput() {
        let spec = KernelSpec::matern(Domain::Interval, 1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big: Vec<Subject> = (0..50)
            .map(|_| Subject {
                covariates: vec![1.0],
                locations: (0..5).map(|_| Domain::Interval.sample_uniform(&mut rng)).collect(),
                responses: DMatrix::zeros(5, 1),
            })
            .collect();
        let data = Dataset::new(Domain::Interval, big).unwrap();
        assert!(representer_oracle_fit(&data, &spec, 0.1).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Domain::Interval, vec![]).is_err());
        let good = Subject {
            covariates: vec![1.0],
            locations: vec![DomainPoint::new(Domain::Interval, vec![0.5]).unwrap()],
            responses: DMatrix::zeros(1, 1),
        };
        let empty_locs = Subject { locations: vec![], responses: DMatrix::zeros(0, 1), ..good.clone() };
        assert!(Dataset::new(Domain::Interval, vec![empty_locs]).is_err());
        let bad_y = Subject { responses: DMatrix::from_element(1, 1, f64::NAN), ..good.clone() };
        assert!(Dataset::new(Domain::Interval, vec![bad_y]).is_err());
        let ragged = Subject { covariates: vec![1.0, 2.0], ..good.clone() };
        assert!(Dataset::new(Domain::Interval, vec![good.clone(), ragged]).is_err());
        assert!(Dataset::new(Domain::Interval, vec![good]).is_ok());
    }

    #[test]
    fn overparameterized_fit_warns() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let basis = interval_basis(96, 10);
        let (data, _) = synthetic(&basis, 2, 3, 1, 1, 0.1, &mut rng);
        // P·k₀ = 10 > N = 6
        let model = fit(&data, &basis, &[0.01]).unwrap();
        assert!(model.warnings().iter().any(|w| w.contains("exceeds observation count")));
    }
}
