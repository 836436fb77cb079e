//! Trial data model: covariates, strata, assignments and outcomes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Dense row-major covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::data(format!(
                "covariate buffer has {} values, expected {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::data(format!("row {i} has {} covariates, expected {cols}", r.len())));
            }
            values.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Rows picked by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, values }
    }
}

/// Potential outcomes carried by synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// Labels and provenance kept alongside the numeric data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub covariate_names: Vec<String>,
    /// Original stratum label for each dense stratum index.
    pub stratum_labels: Vec<String>,
    pub notes: Vec<String>,
}

/// A randomized two-arm trial.
///
/// Strata are stored as dense indices `0..n_strata`; `meta.stratum_labels`
/// keeps the original labels. The dataset is not mutated by any estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub x: Covariates,
    pub strata: Vec<usize>,
    pub n_strata: usize,
    pub arms: Vec<u8>,
    pub y: Vec<f64>,
    pub potential: Option<PotentialOutcomes>,
    /// Target treated proportion of the design.
    pub pi_target: f64,
    pub meta: DatasetMeta,
}

/// One broken dataset invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} (index {i}): {}", self.invariant, self.message),
            None => write!(f, "{}: {}", self.invariant, self.message),
        }
    }
}

/// Counts for one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StratumCell {
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// Share of the sample in this stratum.
    pub p: f64,
    /// Realized treated proportion within the stratum.
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumStats {
    pub n: usize,
    pub cells: Vec<StratumCell>,
}

impl StratumStats {
    pub fn compute(strata: &[usize], arms: &[u8], n_strata: usize) -> Self {
        let mut n_k = vec![0usize; n_strata];
        let mut n_k1 = vec![0usize; n_strata];
        for (&k, &a) in strata.iter().zip(arms) {
            n_k[k] += 1;
            n_k1[k] += a as usize;
        }
        let n = strata.len();
        let cells = (0..n_strata)
            .map(|k| StratumCell {
                n: n_k[k],
                n1: n_k1[k],
                n0: n_k[k] - n_k1[k],
                p: n_k[k] as f64 / n as f64,
                pi: if n_k[k] > 0 { n_k1[k] as f64 / n_k[k] as f64 } else { f64::NAN },
            })
            .collect();
        Self { n, cells }
    }

    pub fn n_strata(&self) -> usize {
        self.cells.len()
    }

    /// First stratum lacking a treated or a control unit, if any.
    pub fn first_empty_arm_cell(&self) -> Option<(usize, u8)> {
        self.cells.iter().enumerate().find_map(|(k, c)| {
            if c.n1 == 0 {
                Some((k, 1))
            } else if c.n0 == 0 {
                Some((k, 0))
            } else {
                None
            }
        })
    }
}

impl TrialDataset {
    /// Builds a dataset after checking shapes and value domains.
    ///
    /// Semantic invariants (outcome consistency, nonempty strata) are
    /// reported by [`TrialDataset::validate`]; use [`TrialDataset::checked`]
    /// to reject on any violation.
    pub fn new(
        x: Covariates,
        strata: Vec<usize>,
        n_strata: usize,
        arms: Vec<u8>,
        y: Vec<f64>,
        pi_target: f64,
    ) -> Result<Self> {
        let n = y.len();
        if x.rows() != n || strata.len() != n || arms.len() != n {
            return Err(Error::data(format!(
                "length mismatch: y={n}, x rows={}, strata={}, arms={}",
                x.rows(),
                strata.len(),
                arms.len()
            )));
        }
        if let Some(i) = strata.iter().position(|&k| k >= n_strata) {
            return Err(Error::data(format!("stratum index {} at row {i} exceeds K={n_strata}", strata[i])));
        }
        let meta = DatasetMeta {
            covariate_names: (1..=x.cols()).map(|j| format!("x{j}")).collect(),
            stratum_labels: (1..=n_strata).map(|k| k.to_string()).collect(),
            notes: Vec::new(),
        };
        Ok(Self { x, strata, n_strata, arms, y, potential: None, pi_target, meta })
    }

    pub fn with_potential(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        if y0.len() != self.n() || y1.len() != self.n() {
            return Err(Error::data("potential outcome vectors must have length n"));
        }
        self.potential = Some(PotentialOutcomes { y0, y1 });
        Ok(self)
    }

    /// Rejects the dataset if any invariant is violated.
    pub fn checked(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            let msgs: Vec<String> = v.iter().take(5).map(ToString::to_string).collect();
            Err(Error::data(format!("{} violation(s): {}", v.len(), msgs.join("; "))))
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn stats(&self) -> StratumStats {
        StratumStats::compute(&self.strata, &self.arms, self.n_strata)
    }

    /// Lists every violated invariant; empty iff the dataset is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.pi_target > 0.0 && self.pi_target < 1.0) {
            out.push(Violation {
                invariant: "pi_target in (0,1)",
                index: None,
                message: format!("pi_target = {}", self.pi_target),
            });
        }
        for (i, &a) in self.arms.iter().enumerate() {
            if a > 1 {
                out.push(Violation {
                    invariant: "binary assignment",
                    index: Some(i),
                    message: format!("non-binary assignment {a}"),
                });
            }
        }
        let mut seen = vec![false; self.n_strata];
        for (i, &k) in self.strata.iter().enumerate() {
            if k < self.n_strata {
                seen[k] = true;
            } else {
                out.push(Violation {
                    invariant: "stratum label in 1..K",
                    index: Some(i),
                    message: format!("stratum {} outside 1..{}", k + 1, self.n_strata),
                });
            }
        }
        for (k, s) in seen.iter().enumerate() {
            if !s {
                out.push(Violation {
                    invariant: "nonempty strata",
                    index: None,
                    message: format!("empty stratum {}", k + 1),
                });
            }
        }
        if let Some(po) = &self.potential {
            for i in 0..self.n() {
                let a = f64::from(self.arms[i].min(1));
                let expected = a * po.y1[i] + (1.0 - a) * po.y0[i];
                if self.y[i] != expected {
                    out.push(Violation {
                        invariant: "observed outcome consistency",
                        index: Some(i),
                        message: format!("Y = {} but A*Y1 + (1-A)*Y0 = {expected}", self.y[i]),
                    });
                }
            }
        }
        for (i, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation { invariant: "finite outcome", index: Some(i), message: format!("Y = {v}") });
            }
        }
        out
    }

    /// Units `idx` as a new dataset over the same strata.
    pub fn subset(&self, idx: &[usize]) -> TrialDataset {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        TrialDataset {
            x: self.x.select(idx),
            strata: idx.iter().map(|&i| self.strata[i]).collect(),
            n_strata: self.n_strata,
            arms: idx.iter().map(|&i| self.arms[i]).collect(),
            y: pick(&self.y),
            potential: self.potential.as_ref().map(|p| PotentialOutcomes { y0: pick(&p.y0), y1: pick(&p.y1) }),
            pi_target: self.pi_target,
            meta: self.meta.clone(),
        }
    }

    /// Indices of units with `arms == a`, optionally restricted to stratum `k`.
    pub fn arm_indices(&self, a: u8, k: Option<usize>) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.arms[i] == a && k.is_none_or(|k| self.strata[i] == k))
            .collect()
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub outcome: String,
    pub arm: String,
    pub stratum: String,
    /// Target treated proportion; defaults to the realized `n1 / n`.
    pub pi_target: Option<f64>,
    /// Columns holding potential outcomes `(Y0, Y1)`, if the file carries them.
    pub potential: Option<(String, String)>,
    /// Columns that are neither roles nor covariates.
    pub exclude: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            arm: "a".into(),
            stratum: "stratum".into(),
            pi_target: None,
            potential: None,
            exclude: Vec::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.as_ref().display())))?;
    read_csv(file, schema)
}

fn parse_num(cell: &str, col: &str, row: usize) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::data(format!("non-numeric value '{cell}' in column '{col}' at row {row}")))
}

/// Reads a header-bearing CSV. Every column not named by the schema is a covariate.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column '{name}'")))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.arm)?;
    let s_col = find(&schema.stratum)?;
    let po_cols = match &schema.potential {
        Some((c0, c1)) => Some((find(c0)?, find(c1)?)),
        None => None,
    };
    for ex in &schema.exclude {
        find(ex)?;
    }
    let mut reserved: HashSet<usize> = [y_col, a_col, s_col].into_iter().collect();
    if let Some((c0, c1)) = po_cols {
        reserved.insert(c0);
        reserved.insert(c1);
    }
    for ex in &schema.exclude {
        reserved.insert(find(ex)?);
    }
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|c| !reserved.contains(c)).collect();

    let mut y = Vec::new();
    let mut arms = Vec::new();
    let mut labels = Vec::new();
    let mut xs = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        y.push(parse_num(&rec[y_col], &schema.outcome, row)?);
        let a = parse_num(&rec[a_col], &schema.arm, row)
            .map_err(|_| Error::data(format!("non-binary assignment '{}' at row {row}", &rec[a_col])))?;
        if a != 0.0 && a != 1.0 {
            return Err(Error::data(format!("non-binary assignment '{}' at row {row}", &rec[a_col])));
        }
        arms.push(a as u8);
        labels.push(rec[s_col].to_owned());
        for &c in &cov_cols {
            xs.push(parse_num(&rec[c], &headers[c], row)?);
        }
        if let Some((c0, c1)) = po_cols {
            y0.push(parse_num(&rec[c0], &headers[c0], row)?);
            y1.push(parse_num(&rec[c1], &headers[c1], row)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::data("no data rows"));
    }

    let (strata, stratum_labels) = normalize_labels(&labels);
    let n_strata = stratum_labels.len();
    let x = Covariates::new(n, cov_cols.len(), xs)?;
    let n1 = arms.iter().filter(|&&a| a == 1).count();
    let pi_target = schema.pi_target.unwrap_or(n1 as f64 / n as f64);
    let mut ds = TrialDataset::new(x, strata, n_strata, arms, y, pi_target)?;
    ds.meta.covariate_names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    ds.meta.stratum_labels = stratum_labels;
    if po_cols.is_some() {
        ds = ds.with_potential(y0, y1)?;
    }
    ds.checked()
}

/// Maps raw labels to dense indices. Numeric labels sort numerically, others lexically.
fn normalize_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    let mut distinct: Vec<&String> = labels.iter().collect::<HashSet<_>>().into_iter().collect();
    match &numeric {
        Some(_) => distinct.sort_by(|a, b| {
            let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => distinct.sort(),
    }
    let index: BTreeMap<&String, usize> = distinct.iter().enumerate().map(|(k, l)| (*l, k)).collect();
    let strata = labels.iter().map(|l| index[l]).collect();
    (strata, distinct.into_iter().cloned().collect())
}

/// Writes the dataset with columns `y, a, stratum, <covariates>[, y0, y1]`.
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(ds: &TrialDataset, writer: W, include_potential: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "a".to_string(), "stratum".to_string()];
    header.extend(ds.meta.covariate_names.iter().cloned());
    let with_po = include_potential && ds.potential.is_some();
    if with_po {
        header.push("y0".into());
        header.push("y1".into());
    }
    wtr.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.y[i].to_string(), ds.arms[i].to_string(), ds.meta.stratum_labels[ds.strata[i]].clone()];
        rec.extend(ds.x.row(i).iter().map(f64::to_string));
        if with_po {
            let po = ds.potential.as_ref().unwrap();
            rec.push(po.y0[i].to_string());
            rec.push(po.y1[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(ds: &TrialDataset, path: impl AsRef<Path>, include_potential: bool) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(ds, f, include_potential)
}
