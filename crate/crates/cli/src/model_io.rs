//! Line-oriented model files. The format is versioned and explicit enough
//! to rebuild the basis exactly: Matérn models store their quadrature and
//! eigensystem verbatim, spectral Sobolev models store the recipe (order and
//! mode count) and are rebuilt deterministically.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use fosr_core::kernels::{Domain, DomainPoint, KernelFamily, KernelSpec};
use fosr_core::solver::FittedModel;
use fosr_core::spectra::{
    analytic_laplacian_spectrum, sobolev_kernel_from_spectrum, MercerBasis, Quadrature,
};
use fosr_core::{Error, Result};

use crate::tables::write_atomic;

const FORMAT_NAME: &str = "fosr-model";
const FORMAT_VERSION: u32 = 1;

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt).collect::<Vec<_>>().join(" ")
}

/// Serialize a fitted model. Fails for bases built from anonymous kernel
/// closures, which carry no written description.
pub fn model_to_string(model: &FittedModel) -> Result<String> {
    let basis = model.basis();
    let spec = basis.kernel().ok_or_else(|| {
        Error::invalid("cannot save a model whose basis has no kernel description".to_string())
    })?;
    let mut s = String::new();
    let _ = writeln!(s, "{FORMAT_NAME} {FORMAT_VERSION}");
    let _ = writeln!(s, "domain {}", spec.domain);
    match spec.family {
        KernelFamily::Matern => {
            let _ = writeln!(s, "kernel matern");
            let _ = writeln!(s, "nu {}", fmt(spec.smoothness));
            let _ = writeln!(s, "rho {}", fmt(spec.range));
            let _ = writeln!(s, "requested_k0 {}", basis.requested_k0());
            let quad = basis.quadrature();
            let _ = writeln!(s, "quadrature {}", quad.len());
            for (node, &w) in quad.nodes().iter().zip(quad.weights()) {
                let _ = writeln!(s, "{} {}", join(node.coords().iter().copied()), fmt(w));
            }
            let _ = writeln!(s, "eigenvalues {}", basis.k0());
            let _ = writeln!(s, "{}", join(basis.eigenvalues().iter().copied()));
            let v = basis.node_values();
            let _ = writeln!(s, "eigenvectors {} {}", v.nrows(), v.ncols());
            for q in 0..v.nrows() {
                let _ = writeln!(s, "{}", join((0..v.ncols()).map(|k| v[(q, k)])));
            }
        }
        KernelFamily::SobolevSpectral => {
            let _ = writeln!(s, "kernel sobolev");
            let _ = writeln!(s, "order {}", spec.smoothness as u32);
            let _ = writeln!(s, "count {}", basis.k0());
        }
    }
    let (l, p, k0) = (model.outputs(), model.lambda().len(), basis.k0());
    let _ = writeln!(s, "outputs {l}");
    let _ = writeln!(s, "predictors {p}");
    let _ = writeln!(s, "lambda {}", join(model.lambda().iter().copied()));
    let _ = writeln!(s, "coefficients {l} {p} {k0}");
    for out in 0..l {
        let block = model.coefficients(out);
        for q in 0..p {
            let _ = writeln!(s, "{}", join((0..k0).map(|k| block[(q, k)])));
        }
    }
    let _ = writeln!(
        s,
        "diagnostics {} {} {}",
        fmt(model.objective()),
        fmt(model.gcv()),
        fmt(model.edf())
    );
    let _ = writeln!(s, "norms {l} {p}");
    for row in model.rkhs_norms() {
        let _ = writeln!(s, "{}", join(row.iter().copied()));
    }
    let _ = writeln!(s, "warnings {}", model.warnings().len());
    for w in model.warnings() {
        let _ = writeln!(s, "{w}");
    }
    let _ = writeln!(s, "end");
    Ok(s)
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    write_atomic(path, model_to_string(model)?.as_bytes())
}

struct Cursor<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { lines: text.lines(), line_no: 0 }
    }

    fn next(&mut self, section: &str) -> Result<&'a str> {
        self.line_no += 1;
        self.lines.next().ok_or_else(|| {
            Error::invalid(format!("model file ends inside section '{section}'"))
        })
    }

    fn bad(&self, section: &str, why: &str) -> Error {
        Error::invalid(format!(
            "model file line {}: section '{section}': {why}",
            self.line_no
        ))
    }

    /// Next line must start with `key`; returns the remainder after it.
    fn keyed(&mut self, section: &str, key: &str) -> Result<&'a str> {
        let line = self.next(section)?;
        line.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| self.bad(section, &format!("expected '{key} …', found '{line}'")))
    }

    fn keyed_f64(&mut self, section: &str, key: &str) -> Result<f64> {
        let raw = self.keyed(section, key)?;
        raw.parse::<f64>()
            .map_err(|_| self.bad(section, &format!("cannot parse '{raw}' as a number")))
    }

    fn keyed_usize(&mut self, section: &str, key: &str) -> Result<usize> {
        let raw = self.keyed(section, key)?;
        raw.parse::<usize>()
            .map_err(|_| self.bad(section, &format!("cannot parse '{raw}' as a count")))
    }

    fn numbers(&mut self, section: &str, want: usize) -> Result<Vec<f64>> {
        let line = self.next(section)?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.bad(section, &format!("cannot parse '{t}' as a number")))
            })
            .collect::<Result<_>>()?;
        if values.len() != want {
            return Err(self.bad(
                section,
                &format!("expected {want} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }
}

/// Parse a model from its text form.
pub fn model_from_string(text: &str) -> Result<FittedModel> {
    let mut c = Cursor::new(text);

    let header = c.next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(FORMAT_NAME) {
        return Err(c.bad("header", &format!("expected '{FORMAT_NAME} <version>'")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| c.bad("header", "missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model format version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }

    let domain: Domain = c.keyed("domain", "domain")?.parse()?;
    let kind = c.keyed("kernel", "kernel")?;
    let basis = match kind {
        "matern" => {
            let nu = c.keyed_f64("kernel", "nu")?;
            let rho = c.keyed_f64("kernel", "rho")?;
            let requested_k0 = c.keyed_usize("kernel", "requested_k0")?;
            let n_nodes = c.keyed_usize("quadrature", "quadrature")?;
            let mut nodes = Vec::with_capacity(n_nodes);
            let mut weights = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let row = c.numbers("quadrature", domain.coord_count() + 1)?;
                let (coords, w) = row.split_at(domain.coord_count());
                nodes.push(DomainPoint::new(domain, coords.to_vec())?);
                weights.push(w[0]);
            }
            let quad = Quadrature::new(domain, nodes, weights)?;
            let k0 = c.keyed_usize("eigenvalues", "eigenvalues")?;
            let eigenvalues = c.numbers("eigenvalues", k0)?;
            let shape = c.keyed("eigenvectors", "eigenvectors")?;
            let dims: Vec<usize> =
                shape.split_whitespace().map(|t| t.parse().unwrap_or(0)).collect();
            if dims.len() != 2 || dims[0] != n_nodes || dims[1] != k0 {
                return Err(c.bad(
                    "eigenvectors",
                    &format!("shape must be '{n_nodes} {k0}', found '{shape}'"),
                ));
            }
            let mut node_values = DMatrix::zeros(n_nodes, k0);
            for q in 0..n_nodes {
                let row = c.numbers("eigenvectors", k0)?;
                for (k, &v) in row.iter().enumerate() {
                    node_values[(q, k)] = v;
                }
            }
            let spec = KernelSpec::matern(domain, nu, rho)?;
            MercerBasis::from_saved_kernel(spec, quad, eigenvalues, node_values, requested_k0)?
        }
        "sobolev" => {
            let order = c.keyed_usize("kernel", "order")?;
            let count = c.keyed_usize("kernel", "count")?;
            let spectrum = analytic_laplacian_spectrum(domain, count)?;
            sobolev_kernel_from_spectrum(&spectrum, order as u32, count)?
        }
        other => return Err(c.bad("kernel", &format!("unknown kernel kind '{other}'"))),
    };

    let l = c.keyed_usize("outputs", "outputs")?;
    let p = c.keyed_usize("predictors", "predictors")?;
    let lambda_raw = c.keyed("lambda", "lambda")?;
    let lambda: Vec<f64> = lambda_raw
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| c.bad("lambda", &format!("cannot parse '{t}' as a number")))
        })
        .collect::<Result<_>>()?;
    if lambda.len() != p {
        return Err(c.bad("lambda", &format!("expected {p} values, found {}", lambda.len())));
    }

    let shape = c.keyed("coefficients", "coefficients")?;
    let dims: Vec<usize> = shape.split_whitespace().map(|t| t.parse().unwrap_or(0)).collect();
    if dims != vec![l, p, basis.k0()] {
        return Err(c.bad(
            "coefficients",
            &format!("shape must be '{l} {p} {}', found '{shape}'", basis.k0()),
        ));
    }
    let mut coefficients = Vec::with_capacity(l);
    for _ in 0..l {
        let mut block = DMatrix::zeros(p, basis.k0());
        for q in 0..p {
            let row = c.numbers("coefficients", basis.k0())?;
            for (k, &v) in row.iter().enumerate() {
                block[(q, k)] = v;
            }
        }
        coefficients.push(block);
    }

    let diag = c.keyed("diagnostics", "diagnostics")?;
    let diag: Vec<f64> = diag
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| c.bad("diagnostics", &format!("cannot parse '{t}' as a number")))
        })
        .collect::<Result<_>>()?;
    if diag.len() != 3 {
        return Err(c.bad("diagnostics", "expected 'objective gcv edf'"));
    }

    let shape = c.keyed("norms", "norms")?;
    let dims: Vec<usize> = shape.split_whitespace().map(|t| t.parse().unwrap_or(0)).collect();
    if dims != vec![l, p] {
        return Err(c.bad("norms", &format!("shape must be '{l} {p}', found '{shape}'")));
    }
    let mut norms = Vec::with_capacity(l);
    for _ in 0..l {
        norms.push(c.numbers("norms", p)?);
    }

    let n_warn = c.keyed_usize("warnings", "warnings")?;
    let mut warnings = Vec::with_capacity(n_warn);
    for _ in 0..n_warn {
        warnings.push(c.next("warnings")?.to_string());
    }

    let terminator = c.next("end")?;
    if terminator.trim() != "end" {
        return Err(c.bad("end", &format!("expected 'end', found '{terminator}'")));
    }

    FittedModel::from_parts(basis, coefficients, lambda, diag[0], diag[1], diag[2], norms, warnings)
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    model_from_string(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}
