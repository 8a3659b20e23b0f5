//! Mercer eigensystems: weighted Nyström decomposition of kernels, analytic
//! Laplacian spectra, Sobolev kernels assembled from those spectra, and
//! eigenvalue-decay diagnostics.

pub mod modes;
pub mod quadrature;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::{DomainPoint, KernelFamily, KernelSpec};

pub use modes::{analytic_laplacian_spectrum, ManifoldSpectrum, SpectralMode};
pub use quadrature::{build_quadrature, gauss_legendre_01, Quadrature};

/// Callable kernel used by the Nyström route.
pub type KernelFn = dyn Fn(&DomainPoint, &DomainPoint) -> Result<f64> + Send + Sync;

/// How a basis evaluates off-node: through the kernel (Nyström extension) or
/// through closed-form eigenfunctions.
#[derive(Clone)]
pub enum BasisSource {
    Kernel(Arc<KernelFn>),
    Spectral(Vec<SpectralMode>),
}

impl std::fmt::Debug for BasisSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisSource::Kernel(_) => f.write_str("Kernel(<fn>)"),
            BasisSource::Spectral(m) => write!(f, "Spectral({} modes)", m.len()),
        }
    }
}

/// A truncated Mercer eigensystem: K(u,s) ≈ Σ_k τ_k v_k(u) v_k(s) with
/// τ_1 ≥ … ≥ τ_{k_0} > 0 and v_k orthonormal under the quadrature weights.
#[derive(Debug, Clone)]
pub struct MercerBasis {
    quadrature: Quadrature,
    eigenvalues: Vec<f64>,
    /// nodes × k_0; row q holds (v_1(s_q), …, v_{k_0}(s_q)).
    node_values: DMatrix<f64>,
    kernel: Option<KernelSpec>,
    requested_k0: usize,
    source: BasisSource,
    /// nodes × k_0 extension operator w_q·V[q,k]/τ_k (kernel sources only).
    ext_weights: Option<DMatrix<f64>>,
}

impl MercerBasis {
    fn from_parts(
        quadrature: Quadrature,
        eigenvalues: Vec<f64>,
        node_values: DMatrix<f64>,
        kernel: Option<KernelSpec>,
        requested_k0: usize,
        source: BasisSource,
    ) -> Result<Self> {
        let k0 = eigenvalues.len();
        if k0 == 0 {
            return Err(Error::numerical("no positive eigenvalues retained".to_string()));
        }
        if quadrature.len() < k0 {
            return Err(Error::invalid(format!(
                "{} quadrature nodes cannot carry {k0} eigenfunctions",
                quadrature.len()
            )));
        }
        if node_values.nrows() != quadrature.len() || node_values.ncols() != k0 {
            return Err(Error::invalid("node eigenvector shape mismatch".to_string()));
        }
        for w in eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::invalid("eigenvalues must be non-increasing".to_string()));
            }
        }
        if eigenvalues.last().is_some_and(|&t| t <= 0.0)
            || eigenvalues.iter().any(|t| !t.is_finite())
        {
            return Err(Error::invalid("eigenvalues must be positive and finite".to_string()));
        }
        // discrete orthonormality Vᵀ W V = I within 1e-8 entrywise
        let weights = quadrature.weights();
        let mut wv = node_values.clone();
        for (q, mut row) in wv.row_iter_mut().enumerate() {
            row *= weights[q];
        }
        let gram = node_values.transpose() * &wv;
        for a in 0..k0 {
            for b in 0..k0 {
                let want = if a == b { 1.0 } else { 0.0 };
                if (gram[(a, b)] - want).abs() > 1e-8 {
                    return Err(Error::numerical(format!(
                        "basis not orthonormal under quadrature: ⟨v{}, v{}⟩ = {}",
                        a + 1,
                        b + 1,
                        gram[(a, b)]
                    )));
                }
            }
        }
        let ext_weights = match &source {
            BasisSource::Kernel(_) => {
                let mut e = wv;
                for (k, mut col) in e.column_iter_mut().enumerate() {
                    col /= eigenvalues[k];
                }
                Some(e)
            }
            BasisSource::Spectral(modes) => {
                if modes.len() != k0 {
                    return Err(Error::invalid("mode count mismatch".to_string()));
                }
                None
            }
        };
        Ok(MercerBasis {
            quadrature,
            eigenvalues,
            node_values,
            kernel,
            requested_k0,
            source,
            ext_weights,
        })
    }

    /// Rebuild a kernel-backed basis from stored parts (model deserialization),
    /// re-running the structural validation.
    pub fn from_saved_kernel(
        spec: KernelSpec,
        quadrature: Quadrature,
        eigenvalues: Vec<f64>,
        node_values: DMatrix<f64>,
        requested_k0: usize,
    ) -> Result<Self> {
        let closure = kernel_closure(&spec)?;
        Self::from_parts(
            quadrature,
            eigenvalues,
            node_values,
            Some(spec),
            requested_k0,
            BasisSource::Kernel(closure),
        )
    }

    /// Effective truncation level (may be below the requested one).
    pub fn k0(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn requested_k0(&self) -> usize {
        self.requested_k0
    }

    /// True when the eigenvalue floor reduced the truncation level.
    pub fn truncated(&self) -> bool {
        self.eigenvalues.len() < self.requested_k0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn node_values(&self) -> &DMatrix<f64> {
        &self.node_values
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn source(&self) -> &BasisSource {
        &self.source
    }

    /// Evaluate all eigenfunctions at one point.
    pub fn extend(&self, u: &DomainPoint) -> Result<Vec<f64>> {
        let m = self.extend_batch(std::slice::from_ref(u))?;
        Ok(m.row(0).iter().copied().collect())
    }

    /// Evaluate all eigenfunctions at many points; returns points × k_0.
    ///
    /// Kernel-backed bases use the Nyström extension
    /// v_k(u) = (1/τ_k) Σ_q w_q K(u, s_q) V[q,k], batched as a
    /// matrix-matrix product; spectral bases evaluate their closed forms.
    pub fn extend_batch(&self, us: &[DomainPoint]) -> Result<DMatrix<f64>> {
        let expect = self.quadrature.domain().coord_count();
        if let Some(p) = us.iter().find(|p| p.coords().len() != expect) {
            return Err(Error::invalid(format!(
                "evaluation point arity {} does not match basis domain",
                p.coords().len()
            )));
        }
        match &self.source {
            BasisSource::Kernel(kernel) => {
                let nodes = self.quadrature.nodes();
                let mut kmat = DMatrix::zeros(us.len(), nodes.len());
                for (i, u) in us.iter().enumerate() {
                    for (q, s) in nodes.iter().enumerate() {
                        kmat[(i, q)] = kernel(u, s)?;
                    }
                }
                let ext = self.ext_weights.as_ref().expect("kernel basis has extension weights");
                Ok(kmat * ext)
            }
            BasisSource::Spectral(modes) => {
                let mut out = DMatrix::zeros(us.len(), modes.len());
                for (i, u) in us.iter().enumerate() {
                    for (k, mode) in modes.iter().enumerate() {
                        out[(i, k)] = mode.eval(u);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Truncated kernel value Σ_k τ_k v_k(u) v_k(s).
    pub fn reconstruct(&self, u: &DomainPoint, s: &DomainPoint) -> Result<f64> {
        let vu = self.extend(u)?;
        let vs = self.extend(s)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(vu.iter().zip(&vs))
            .map(|(t, (a, b))| t * a * b)
            .sum())
    }

    /// The source kernel's exact value where one exists; spectral bases fall
    /// back to the truncated reconstruction (their defining value).
    pub fn source_kernel_value(&self, u: &DomainPoint, s: &DomainPoint) -> Result<f64> {
        match &self.source {
            BasisSource::Kernel(kernel) => kernel(u, s),
            BasisSource::Spectral(_) => self.reconstruct(u, s),
        }
    }
}

fn kernel_closure(spec: &KernelSpec) -> Result<Arc<KernelFn>> {
    if spec.family != KernelFamily::Matern {
        return Err(Error::invalid(
            "only Matérn kernels support pointwise Nyström evaluation; spectral Sobolev \
             bases come from sobolev_kernel_from_spectrum"
                .to_string(),
        ));
    }
    let spec = spec.clone();
    Ok(Arc::new(move |p: &DomainPoint, q: &DomainPoint| spec.eval(p, q)))
}

/// Weighted Nyström decomposition of a kernel given by a closure.
///
/// Eigendecomposes B = W^{1/2} G W^{1/2} over the quadrature nodes, keeps the
/// top `k0` eigenvalues above the floor 1e-12·τ_1, and rescales eigenvectors
/// to quadrature orthonormality. Columns are sign-fixed so the first
/// non-negligible node value is positive. Fails if the Gram matrix is not
/// positive semidefinite beyond tolerance (min eigenvalue < −1e-8·max).
pub fn nystrom_decompose_fn<F>(
    kernel: F,
    record: Option<KernelSpec>,
    quad: &Quadrature,
    k0: usize,
) -> Result<MercerBasis>
where
    F: Fn(&DomainPoint, &DomainPoint) -> Result<f64> + Send + Sync + 'static,
{
    let n = quad.len();
    if k0 == 0 || k0 > n {
        return Err(Error::invalid(format!(
            "truncation level {k0} must be in 1..={n} (node count)"
        )));
    }
    let nodes = quad.nodes();
    let weights = quad.weights();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&nodes[i], &nodes[j])?;
            if !v.is_finite() {
                return Err(Error::numerical(format!(
                    "kernel evaluated to a non-finite value at node pair ({i}, {j})"
                )));
            }
            let scaled = (weights[i] * weights[j]).sqrt() * v;
            b[(i, j)] = scaled;
            b[(j, i)] = scaled;
        }
    }
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[c]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let max_eig = eig.eigenvalues[order[0]];
    let min_eig = eig.eigenvalues[*order.last().expect("nonempty")];
    if max_eig <= 0.0 {
        return Err(Error::numerical("kernel operator has no positive spectrum".to_string()));
    }
    if min_eig < -1e-8 * max_eig {
        return Err(Error::numerical(format!(
            "kernel Gram matrix is not positive semidefinite on this domain: \
             min eigenvalue {min_eig:.3e} vs max {max_eig:.3e}"
        )));
    }
    let floor = 1e-12 * max_eig;
    let kept: Vec<usize> = order.into_iter().take(k0).filter(|&i| eig.eigenvalues[i] > floor).collect();
    if kept.is_empty() {
        return Err(Error::numerical("no eigenvalues above the truncation floor".to_string()));
    }
    let eigenvalues: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut node_values = DMatrix::zeros(n, kept.len());
    for (col, &idx) in kept.iter().enumerate() {
        for q in 0..n {
            node_values[(q, col)] = eig.eigenvectors[(q, idx)] / weights[q].sqrt();
        }
        // deterministic sign: first non-negligible entry positive
        let col_max = node_values.column(col).amax();
        let lead = (0..n).find(|&q| node_values[(q, col)].abs() > 1e-12 * col_max);
        if let Some(q) = lead {
            if node_values[(q, col)] < 0.0 {
                for r in 0..n {
                    node_values[(r, col)] = -node_values[(r, col)];
                }
            }
        }
    }
    MercerBasis::from_parts(
        quad.clone(),
        eigenvalues,
        node_values,
        record,
        k0,
        BasisSource::Kernel(Arc::new(kernel)),
    )
}

/// Nyström decomposition of a named kernel (Matérn family).
pub fn nystrom_decompose(spec: &KernelSpec, quad: &Quadrature, k0: usize) -> Result<MercerBasis> {
    if quad.domain() != spec.domain {
        return Err(Error::invalid(format!(
            "quadrature domain '{}' does not match kernel domain '{}'",
            quad.domain(),
            spec.domain
        )));
    }
    let closure = kernel_closure(spec)?;
    let record = spec.clone();
    nystrom_decompose_fn(move |p, q| closure(p, q), Some(record), quad, k0)
}

/// Evaluate all basis eigenfunctions at a point (Nyström extension for
/// kernel-backed bases, closed forms for spectral ones).
pub fn nystrom_extend(basis: &MercerBasis, u: &DomainPoint) -> Result<Vec<f64>> {
    basis.extend(u)
}

/// Build the Sobolev-r reproducing kernel basis from a Laplacian spectrum:
/// τ_k = 1 for the zero modes and ξ_k^{−r} beyond, eigenfunctions carried
/// over, with a quadrature sized so the closed-form modes are orthonormal to
/// machine precision.
pub fn sobolev_kernel_from_spectrum(
    spectrum: &ManifoldSpectrum,
    r: u32,
    count: usize,
) -> Result<MercerBasis> {
    let domain = spectrum.domain();
    // validates r ≥ 1 and the embedding condition 2r > dim
    let spec = KernelSpec::sobolev(domain, r as f64)?;
    if count == 0 || count > spectrum.len() {
        return Err(Error::invalid(format!(
            "count {count} exceeds the {} available eigenpairs",
            spectrum.len()
        )));
    }
    let modes = spectrum.modes()[..count].to_vec();
    let eigenvalues: Vec<f64> = spectrum.eigenvalues()[..count]
        .iter()
        .enumerate()
        .map(|(k, &xi)| if k < spectrum.zero_count() { 1.0 } else { xi.powi(-(r as i32)) })
        .collect();
    let quad = match domain {
        crate::kernels::Domain::Interval => {
            build_quadrature(domain, (2 * count).max(64))?
        }
        crate::kernels::Domain::Torus => {
            let max_k = modes
                .iter()
                .map(|m| match *m {
                    SpectralMode::TorusCos { k1, k2 } | SpectralMode::TorusSin { k1, k2 } => {
                        k1.unsigned_abs().max(k2.unsigned_abs())
                    }
                    _ => 0,
                })
                .max()
                .unwrap_or(0) as usize;
            // the N-point periodic midpoint rule is exact for |freq| < N
            build_quadrature(domain, (2 * max_k + 1).max(3))?
        }
        crate::kernels::Domain::Sphere => {
            let max_l = modes
                .iter()
                .map(|m| match *m {
                    SpectralMode::SphereHarmonic { l, .. } => l,
                    _ => 0,
                })
                .max()
                .unwrap_or(0) as usize;
            // Gauss bands integrate degree ≤ 2·bands−1 exactly
            build_quadrature(domain, (max_l + 1).max(2))?
        }
        crate::kernels::Domain::Square => unreachable!("no square spectrum exists"),
    };
    let mut node_values = DMatrix::zeros(quad.len(), count);
    for (q, node) in quad.nodes().iter().enumerate() {
        for (k, mode) in modes.iter().enumerate() {
            node_values[(q, k)] = mode.eval(node);
        }
    }
    MercerBasis::from_parts(
        quad,
        eigenvalues,
        node_values,
        Some(spec),
        count,
        BasisSource::Spectral(modes),
    )
}

/// Slope (with standard error) of log(value) against log(position) over a
/// window; positions are 1-based sequence indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySlope {
    pub slope: f64,
    pub std_error: f64,
}

/// Least-squares fit of log(value_k) on log(k) over `fit_range` (0-based
/// half-open index range; the regressor uses the 1-based position). Values
/// inside the window must be positive; for eigenvalue sequences the leading
/// zero modes are simply excluded from the window.
pub fn decay_slope(values: &[f64], fit_range: Range<usize>) -> Result<DecaySlope> {
    if fit_range.end > values.len() || fit_range.start >= fit_range.end {
        return Err(Error::invalid(format!(
            "fit range {fit_range:?} out of bounds for {} values",
            values.len()
        )));
    }
    let n = fit_range.end - fit_range.start;
    if n < 3 {
        return Err(Error::invalid(format!("fit range too short ({n} < 3 points)")));
    }
    let window = &values[fit_range.clone()];
    if window.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(
            "values inside the fit range must be positive and finite".to_string(),
        ));
    }
    let xs: Vec<f64> = fit_range.clone().map(|i| ((i + 1) as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|v| v.ln()).collect();
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("degenerate fit range (constant abscissa)".to_string()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let sigma2 = rss / (nf - 2.0);
    Ok(DecaySlope { slope, std_error: (sigma2 / sxx).sqrt() })
}

/// Per-eigenvalue uniform-convergence diagnostic for the Mercer expansion.
#[derive(Debug, Clone)]
pub struct TailDiagnostic {
    /// c_k = τ_k · (max over the probe grid of |v_k|)².
    pub coefficients: Vec<f64>,
    /// Whether the last quartile's max is below the first quartile's max.
    pub tail_below_head: bool,
}

/// Evaluate c_k = max over probe-grid pairs of τ_k·|v_k(u)·v_k(s)| for each
/// k; a decaying sequence supports uniform convergence of the expansion.
pub fn mercer_tail_diagnostic(
    basis: &MercerBasis,
    probe_grid: &[DomainPoint],
) -> Result<TailDiagnostic> {
    if probe_grid.is_empty() {
        return Err(Error::invalid("probe grid must be nonempty".to_string()));
    }
    let values = basis.extend_batch(probe_grid)?;
    let k0 = basis.k0();
    let mut coefficients = Vec::with_capacity(k0);
    for k in 0..k0 {
        let max_abs = values.column(k).amax();
        coefficients.push(basis.eigenvalues()[k] * max_abs * max_abs);
    }
    let quart = k0.div_ceil(4);
    let head = coefficients[..quart].iter().cloned().fold(f64::MIN, f64::max);
    let tail = coefficients[k0 - quart..].iter().cloned().fold(f64::MIN, f64::max);
    Ok(TailDiagnostic { coefficients, tail_below_head: tail < head })
}
