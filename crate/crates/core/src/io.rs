//! File formats: long panel CSV, edge-list CSV, dense matrix CSV, JSON
//! parameter/result documents and the MSE comparison table.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::eval::{AlignedError, ForecastReport};
use crate::graph::AdjacencyMatrix;
use crate::linalg::Mat;
use crate::model::{LagParams, PanelSeries, ParamSet};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path, what: &str) -> Result<File> {
    File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {what} file {}: {e}", path.display())))
}

/// 17 significant digits: enough for an exact round trip of any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_panel_csv_to<W: Write>(panel: &PanelSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "node", "variable", "value"])?;
    for (t, y) in panel.slices().iter().enumerate() {
        for i in 0..panel.n() {
            for j in 0..panel.d() {
                w.write_record([t.to_string(), i.to_string(), j.to_string(), num(y[(i, j)])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv(panel: &PanelSeries, path: &Path) -> Result<()> {
    write_panel_csv_to(panel, create(path)?)
}

#[derive(Deserialize)]
struct PanelRow {
    t: usize,
    node: usize,
    variable: usize,
    value: f64,
}

/// Reads the long format. Indices are 0-based and every `(t, node, variable)`
/// cell of the implied `T×N×D` box must appear exactly once.
pub fn read_panel_csv_from<R: Read>(input: R) -> Result<PanelSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    for need in ["t", "node", "variable", "value"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::InvalidInput(format!("panel CSV is missing the `{need}` column")));
        }
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<PanelRow>().enumerate() {
        let row = rec.map_err(|e| Error::InvalidInput(format!("panel CSV row {}: {e}", k + 2)))?;
        if !row.value.is_finite() {
            return Err(Error::InvalidInput(format!("panel CSV row {}: non-finite value", k + 2)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("panel CSV has no rows".into()));
    }
    let t = rows.iter().map(|r| r.t).max().unwrap_or(0) + 1;
    let n = rows.iter().map(|r| r.node).max().unwrap_or(0) + 1;
    let d = rows.iter().map(|r| r.variable).max().unwrap_or(0) + 1;
    if rows.len() != t * n * d {
        return Err(Error::Shape(format!(
            "panel CSV has {} rows but indices imply T={t}, N={n}, D={d} ({} cells)",
            rows.len(),
            t * n * d
        )));
    }
    let mut data = vec![Mat::zeros(n, d); t];
    let mut seen = vec![false; t * n * d];
    for r in rows {
        let k = (r.t * n + r.node) * d + r.variable;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidInput(format!(
                "panel CSV repeats (t={}, node={}, variable={})",
                r.t, r.node, r.variable
            )));
        }
        data[r.t][(r.node, r.variable)] = r.value;
    }
    PanelSeries::new(data)
}

pub fn read_panel_csv(path: &Path) -> Result<PanelSeries> {
    read_panel_csv_from(open(path, "panel")?)
}

pub fn write_edges_csv(adj: &AdjacencyMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["src", "dst"])?;
    for (i, j) in adj.edges() {
        w.write_record([i.to_string(), j.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Edge list with `src,dst` header. `n` fixes the node count (isolated
/// high-index nodes are otherwise invisible); without it, `max id + 1`.
pub fn read_edges_csv(path: &Path, n: Option<usize>) -> Result<AdjacencyMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path, "adjacency")?);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["src", "dst"] {
        return Err(Error::InvalidInput(format!("adjacency CSV header must be `src,dst`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut edges = BTreeSet::new();
    for (k, rec) in rdr.deserialize::<(usize, usize)>().enumerate() {
        edges.insert(rec.map_err(|e| Error::InvalidInput(format!("adjacency CSV row {}: {e}", k + 2)))?);
    }
    let max_id = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(max_id);
    if max_id > n {
        return Err(Error::Shape(format!("adjacency mentions node {} but N={n}", max_id - 1)));
    }
    let edges: Vec<_> = edges.into_iter().collect();
    AdjacencyMatrix::from_edges(n, &edges)
}

/// Plain comma-separated rows, no header.
pub fn read_dense_csv(path: &Path) -> Result<Mat> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path, "matrix")?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidInput(format!("matrix CSV row {}: `{s}`: {e}", k + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows)
}

pub fn write_dense_csv(m: &Mat, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&x| num(x)))?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("matrix rows have different lengths".into()));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// One lag with factors stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagDoc {
    pub beta_a: f64,
    pub beta_n: f64,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub n: usize,
    pub d: usize,
    pub lags: Vec<LagDoc>,
}

impl ParamsDoc {
    pub fn from_params(p: &ParamSet) -> Self {
        Self {
            n: p.n,
            d: p.d,
            lags: p
                .lags
                .iter()
                .map(|l| LagDoc { beta_a: l.beta_a, beta_n: l.beta_n, u: matrix_rows(&l.u), v: matrix_rows(&l.v) })
                .collect(),
        }
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let lags = self
            .lags
            .iter()
            .map(|l| LagParams::new(l.beta_a, l.beta_n, matrix_from_rows(&l.u)?, matrix_from_rows(&l.v)?))
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(self.n, self.d, lags)
    }
}

/// Shared schema for truth, fit, rank and forecast outputs; sections that
/// do not apply are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_frob_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular_values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_params: Option<ParamsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<AlignedError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<ForecastReport>>,
    /// Settings that produced the document, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Document {
    pub fn truth(params: &ParamSet, rho: f64, weight_frob_sq: f64, seed: u64) -> Self {
        Self {
            kind: "truth".into(),
            ranks: Some(params.ranks()),
            params: Some(ParamsDoc::from_params(params)),
            rho: Some(rho),
            weight_frob_sq: Some(weight_frob_sq),
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn fit(res: &FitResult, seed: u64) -> Self {
        Self {
            kind: "fit".into(),
            params: Some(ParamsDoc::from_params(&res.params)),
            ranks: Some(res.selected_ranks.clone()),
            seed: Some(seed),
            loss_trace: Some(res.loss_trace.clone()),
            iters: Some(res.iters),
            converged: Some(res.converged),
            init_params: Some(ParamsDoc::from_params(&res.init_params)),
            ..Self::default()
        }
    }

    pub fn param_set(&self) -> Result<ParamSet> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("{} document has no `params` section", self.kind)))?
            .to_params()
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut s = String::new();
    open(path, "JSON")?.read_to_string(&mut s)?;
    serde_json::from_str(&s).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// One row per (model, variable) plus `global` (standardized) and
/// `median_se` rows per model.
pub fn write_mse_table(reports: &[ForecastReport], var_labels: Option<&[String]>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["model", "variable", "mse", "n_forecasts"])?;
    for r in reports {
        let nf = r.n_forecasts.to_string();
        for (j, m) in r.per_variable_mse.iter().enumerate() {
            let label = var_labels.and_then(|l| l.get(j)).cloned().unwrap_or_else(|| j.to_string());
            w.write_record([r.model.clone(), label, num(*m), nf.clone()])?;
        }
        w.write_record([r.model.clone(), "global".into(), num(r.global_mse), nf.clone()])?;
        w.write_record([r.model.clone(), "median_se".into(), num(r.median_se), nf])?;
    }
    w.flush()?;
    Ok(())
}

/// Row-at-a-time CSV writer for result tables; every row is flushed so a
/// long Monte Carlo run leaves usable partial output behind.
pub struct CsvSink {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: csv::Writer::from_writer(create(path)?) })
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_records_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut sink = CsvSink::create(path)?;
    for r in rows {
        sink.push(r)?;
    }
    Ok(())
}

pub fn read_records_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(open(path, "CSV")?);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display()))))
        .collect()
}
