//! CSV ingestion and emission. Every table written here has a matching
//! reader, and all output goes through an atomic write-temp-then-rename so
//! failed runs leave no partial artifacts.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use fosr_core::kernels::{Domain, DomainPoint};
use fosr_core::simulate::{CollapseRow, ErrorRow, RateReport, SlopeRow};
use fosr_core::solver::{Dataset, Subject};
use fosr_core::tuning::{CandidateReport, TraceRow};
use fosr_core::{Error, Result};

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::invalid(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| Error::invalid(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

fn parse_cell<T: std::str::FromStr>(line: u64, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| {
        Error::invalid(format!("row {line}: cannot parse '{raw}' in column {column}"))
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Observation rows grouped by subject in order of first appearance.
#[derive(Debug, Clone)]
pub struct Observations {
    pub ids: Vec<String>,
    pub locations: Vec<Vec<DomainPoint>>,
    pub responses: Vec<Vec<Vec<f64>>>,
    pub outputs: usize,
}

impl Observations {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn total_obs(&self) -> usize {
        self.locations.iter().map(|l| l.len()).sum()
    }
}

/// Load `subject_id,coord_1[,coord_2[,coord_3]],y_1[,...,y_L]` rows,
/// validating the coordinate count against the domain and every point
/// against the domain's geometry. Errors name the file row.
pub fn load_observations(path: &Path, domain: Domain) -> Result<Observations> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"subject_id") {
        return Err(Error::invalid(format!(
            "{}: first column must be subject_id",
            path.display()
        )));
    }
    let c = domain.coord_count();
    for (i, name) in (1..=c).map(|i| (i, format!("coord_{i}"))) {
        if cols.get(i).copied() != Some(name.as_str()) {
            return Err(Error::invalid(format!(
                "{}: domain '{domain}' needs columns coord_1..coord_{c}, found '{}'",
                path.display(),
                cols.get(i).copied().unwrap_or("<missing>")
            )));
        }
    }
    let outputs = cols.len().saturating_sub(1 + c);
    if outputs == 0 {
        return Err(Error::invalid(format!(
            "{}: need at least one response column y_1",
            path.display()
        )));
    }
    for (i, name) in (1..=outputs).map(|i| (i, format!("y_{i}"))) {
        if cols.get(c + i).copied() != Some(name.as_str()) {
            return Err(Error::invalid(format!(
                "{}: response columns must be y_1..y_{outputs}, found '{}'",
                path.display(),
                cols.get(c + i).copied().unwrap_or("<missing>")
            )));
        }
    }

    let mut obs = Observations {
        ids: Vec::new(),
        locations: Vec::new(),
        responses: Vec::new(),
        outputs,
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        if record.len() != cols.len() {
            return Err(Error::invalid(format!(
                "row {line}: expected {} fields, found {}",
                cols.len(),
                record.len()
            )));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::invalid(format!("row {line}: empty subject_id")));
        }
        let coords: Vec<f64> = (0..c)
            .map(|i| parse_cell(line, &format!("coord_{}", i + 1), &record[1 + i]))
            .collect::<Result<_>>()?;
        let point = DomainPoint::new(domain, coords)
            .map_err(|e| Error::invalid(format!("row {line}: {e}")))?;
        let ys: Vec<f64> = (0..outputs)
            .map(|i| parse_cell(line, &format!("y_{}", i + 1), &record[1 + c + i]))
            .collect::<Result<_>>()?;
        let slot = match obs.ids.iter().position(|s| s == &id) {
            Some(pos) => pos,
            None => {
                obs.ids.push(id);
                obs.locations.push(Vec::new());
                obs.responses.push(Vec::new());
                obs.ids.len() - 1
            }
        };
        obs.locations[slot].push(point);
        obs.responses[slot].push(ys);
    }
    if obs.ids.is_empty() {
        return Err(Error::invalid(format!("{}: no observation rows", path.display())));
    }
    Ok(obs)
}

/// Load `subject_id,x_1,...,x_P`, one row per subject, duplicates rejected.
pub fn load_covariates(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"subject_id") || cols.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: header must be subject_id,x_1,...,x_P",
            path.display()
        )));
    }
    for (i, name) in (1..cols.len()).map(|i| (i, format!("x_{i}"))) {
        if cols[i] != name {
            return Err(Error::invalid(format!(
                "{}: covariate columns must be x_1..x_{}, found '{}'",
                path.display(),
                cols.len() - 1,
                cols[i]
            )));
        }
    }
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let id = record[0].trim().to_string();
        if rows.iter().any(|(other, _)| other == &id) {
            return Err(Error::invalid(format!("row {line}: duplicate subject_id '{id}'")));
        }
        let xs: Vec<f64> = (1..cols.len())
            .map(|i| parse_cell(line, cols[i], &record[i]))
            .collect::<Result<_>>()?;
        rows.push((id, xs));
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: no covariate rows", path.display())));
    }
    Ok(rows)
}

/// Join covariates onto observations by subject id; both directions must
/// match exactly. Returns the dataset and the subject ids in dataset order.
pub fn join_covariates(
    domain: Domain,
    obs: &Observations,
    covariates: &[(String, Vec<f64>)],
) -> Result<(Dataset, Vec<String>)> {
    let missing: Vec<&str> = obs
        .ids
        .iter()
        .filter(|id| !covariates.iter().any(|(c, _)| c == *id))
        .map(|s| s.as_str())
        .collect();
    let extra: Vec<&str> = covariates
        .iter()
        .filter(|(c, _)| !obs.ids.contains(c))
        .map(|(c, _)| c.as_str())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::invalid(format!(
            "subject ids do not match: missing covariates for [{}], covariates without observations [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let subjects: Vec<Subject> = obs
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let xs = &covariates.iter().find(|(c, _)| c == id).expect("join checked").1;
            let m = obs.locations[i].len();
            let responses = DMatrix::from_fn(m, obs.outputs, |j, l| obs.responses[i][j][l]);
            Subject {
                covariates: xs.clone(),
                locations: obs.locations[i].clone(),
                responses,
            }
        })
        .collect();
    let data = Dataset::new(domain, subjects)?;
    Ok((data, obs.ids.clone()))
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer error: {e}")))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// `setting,n,m,rep,sq_error,note` with an empty sq_error on failed rows.
pub fn error_table_csv(rows: &[ErrorRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "n", "m", "rep", "sq_error", "note"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.rep.to_string(),
            r.sq_error.map(fmt).unwrap_or_default(),
            r.note.clone(),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_error_table(path: &Path) -> Result<Vec<ErrorRow>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expect = ["setting", "n", "m", "rep", "sq_error", "note"];
    if headers.iter().ne(expect) {
        return Err(Error::invalid(format!(
            "{}: expected header {}",
            path.display(),
            expect.join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let sq_error = if record[4].trim().is_empty() {
            None
        } else {
            Some(parse_cell(line, "sq_error", &record[4])?)
        };
        rows.push(ErrorRow {
            setting: parse_cell(line, "setting", &record[0])?,
            n: parse_cell(line, "n", &record[1])?,
            m: parse_cell(line, "m", &record[2])?,
            rep: parse_cell(line, "rep", &record[3])?,
            sq_error,
            note: record[5].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: empty error table", path.display())));
    }
    Ok(rows)
}

/// `cycle,predictor,lambda,gcv,dof` — the search path of the cyclic tuner.
pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cycle", "predictor", "lambda", "gcv", "dof"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            r.predictor.to_string(),
            fmt(r.lambda),
            fmt(r.gcv),
            fmt(r.edf),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        rows.push(TraceRow {
            cycle: parse_cell(line, "cycle", &record[0])?,
            predictor: parse_cell(line, "predictor", &record[1])?,
            lambda: parse_cell(line, "lambda", &record[2])?,
            gcv: parse_cell(line, "gcv", &record[3])?,
            edf: parse_cell(line, "dof", &record[4])?,
        });
    }
    Ok(rows)
}

/// `k,value,cumulative_trace` — eigenvalue table, k is 1-based.
pub fn spectrum_csv(values: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "value", "cumulative_trace"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut total = 0.0;
    for (k, &v) in values.iter().enumerate() {
        total += v;
        w.write_record([(k + 1).to_string(), fmt(v), fmt(total)])
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_spectrum(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        rows.push((
            parse_cell(line, "k", &record[0])?,
            parse_cell(line, "value", &record[1])?,
            parse_cell(line, "cumulative_trace", &record[2])?,
        ));
    }
    Ok(rows)
}

/// `output,predictor,k,value` — basis coefficients of a fitted model.
pub fn coefficients_csv(blocks: &[DMatrix<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["output", "predictor", "k", "value"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for (out, block) in blocks.iter().enumerate() {
        for p in 0..block.nrows() {
            for k in 0..block.ncols() {
                w.write_record([
                    (out + 1).to_string(),
                    (p + 1).to_string(),
                    (k + 1).to_string(),
                    fmt(block[(p, k)]),
                ])
                .map_err(|e| Error::invalid(e.to_string()))?;
            }
        }
    }
    finish(w)
}

pub fn read_coefficients(path: &Path) -> Result<Vec<(usize, usize, usize, f64)>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        rows.push((
            parse_cell(line, "output", &record[0])?,
            parse_cell(line, "predictor", &record[1])?,
            parse_cell(line, "k", &record[2])?,
            parse_cell(line, "value", &record[3])?,
        ));
    }
    Ok(rows)
}

/// Generic plot data: `x,y,series`.
pub fn plot_csv(rows: &[(f64, f64, String)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "series"]).map_err(|e| Error::invalid(e.to_string()))?;
    for (x, y, series) in rows {
        w.write_record([fmt(*x), fmt(*y), series.clone()])
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_plot(path: &Path) -> Result<Vec<(f64, f64, String)>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        rows.push((
            parse_cell(line, "x", &record[0])?,
            parse_cell(line, "y", &record[1])?,
            record[2].to_string(),
        ));
    }
    Ok(rows)
}

/// Model-mean predictions in the observation-file schema, so they can be
/// read back with `load_observations`.
pub fn predictions_csv(
    domain: Domain,
    rows: &[(String, DomainPoint, Vec<f64>)],
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let c = domain.coord_count();
    let outputs = rows.first().map(|(_, _, y)| y.len()).unwrap_or(1);
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=c).map(|i| format!("coord_{i}")));
    header.extend((1..=outputs).map(|i| format!("y_{i}")));
    w.write_record(&header).map_err(|e| Error::invalid(e.to_string()))?;
    for (id, point, ys) in rows {
        let mut record = vec![id.clone()];
        record.extend(point.coords().iter().map(|&v| fmt(v)));
        record.extend(ys.iter().map(|&v| fmt(v)));
        w.write_record(&record).map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

/// `setting,m,slope,std_error,points` with empty m for pooled fits.
pub fn slopes_csv(rows: &[SlopeRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "m", "slope", "std_error", "points"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.m.map(|m| m.to_string()).unwrap_or_default(),
            fmt(r.slope),
            fmt(r.std_error),
            r.points.to_string(),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_slopes(path: &Path) -> Result<Vec<SlopeRow>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let m = if record[1].trim().is_empty() {
            None
        } else {
            Some(parse_cell(line, "m", &record[1])?)
        };
        rows.push(SlopeRow {
            setting: parse_cell(line, "setting", &record[0])?,
            m,
            slope: parse_cell(line, "slope", &record[2])?,
            std_error: parse_cell(line, "std_error", &record[3])?,
            points: parse_cell(line, "points", &record[4])?,
        });
    }
    Ok(rows)
}

/// `setting,n,m_used,spread,collapsed` with m_used joined by ';'.
pub fn collapse_csv(rows: &[CollapseRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "n", "m_used", "spread", "collapsed"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        let m_used: Vec<String> = r.m_used.iter().map(|m| m.to_string()).collect();
        w.write_record([
            r.setting.to_string(),
            r.n.to_string(),
            m_used.join(";"),
            fmt(r.spread),
            r.collapsed.to_string(),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_collapse(path: &Path) -> Result<Vec<CollapseRow>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let m_used = record[2]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| parse_cell(line, "m_used", s))
            .collect::<Result<Vec<usize>>>()?;
        rows.push(CollapseRow {
            setting: parse_cell(line, "setting", &record[0])?,
            n: parse_cell(line, "n", &record[1])?,
            m_used,
            spread: parse_cell(line, "spread", &record[3])?,
            collapsed: parse_cell(line, "collapsed", &record[4])?,
        });
    }
    Ok(rows)
}

/// One-row summary of a rate report's scalar fields.
pub fn rate_summary_csv(report: &RateReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "h",
        "theoretical_rate_exponent",
        "parametric_exponent",
        "theoretical_phase_exponent",
        "phase_exponent",
    ])
    .map_err(|e| Error::invalid(e.to_string()))?;
    w.write_record([
        fmt(report.h),
        fmt(report.theoretical_rate_exponent),
        fmt(report.parametric_exponent),
        fmt(report.theoretical_phase_exponent),
        report.phase_exponent.map(fmt).unwrap_or_default(),
    ])
    .map_err(|e| Error::invalid(e.to_string()))?;
    finish(w)
}

pub fn read_rate_summary(path: &Path) -> Result<(f64, f64, f64, f64, Option<f64>)> {
    let mut reader = open_csv(path)?;
    let record = reader
        .records()
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: empty summary", path.display())))?
        .map_err(|e| csv_error(path, e))?;
    let line = record_line(&record);
    let phase = if record[4].trim().is_empty() {
        None
    } else {
        Some(parse_cell(line, "phase_exponent", &record[4])?)
    };
    Ok((
        parse_cell(line, "h", &record[0])?,
        parse_cell(line, "theoretical_rate_exponent", &record[1])?,
        parse_cell(line, "parametric_exponent", &record[2])?,
        parse_cell(line, "theoretical_phase_exponent", &record[3])?,
        phase,
    ))
}

/// `nu,rho,score,lambda,failure` — kernel-search candidate table, lambda
/// joined by ';'.
pub fn candidates_csv(rows: &[CandidateReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["nu", "rho", "score", "lambda", "failure"])
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        let lambda = r
            .lambda
            .as_ref()
            .map(|l| l.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.write_record([
            fmt(r.smoothness),
            fmt(r.range),
            r.score.map(fmt).unwrap_or_default(),
            lambda,
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
    }
    finish(w)
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateReport>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record_line(&record);
        let score = if record[2].trim().is_empty() {
            None
        } else {
            Some(parse_cell(line, "score", &record[2])?)
        };
        let lambda = if record[3].trim().is_empty() {
            None
        } else {
            Some(
                record[3]
                    .split(';')
                    .map(|s| parse_cell(line, "lambda", s))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
        let failure = if record[4].is_empty() { None } else { Some(record[4].to_string()) };
        rows.push(CandidateReport {
            smoothness: parse_cell(line, "nu", &record[0])?,
            range: parse_cell(line, "rho", &record[1])?,
            lambda,
            score,
            failure,
        });
    }
    Ok(rows)
}
