//! Balanced panel data, CSV ingestion and fixed-effect removing transforms.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A balanced `N x T` panel with one dependent variable, `d` regressors and
/// `m` instruments. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: Array2<f64>,
    x: Array3<f64>,
    z: Array3<f64>,
    unit_ids: Vec<String>,
    period_ids: Vec<String>,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

impl PanelData {
    /// Build a panel from arrays shaped `(N, T)`, `(N, T, d)` and `(N, T, m)`.
    /// Unit and period labels default to `1..=N` and `1..=T`.
    pub fn from_arrays(y: Array2<f64>, x: Array3<f64>, z: Array3<f64>) -> Result<Self> {
        let (n, t) = y.dim();
        let unit_ids = (1..=n).map(|i| i.to_string()).collect();
        let period_ids = (1..=t).map(|s| s.to_string()).collect();
        let x_names = (1..=x.dim().2).map(|k| format!("x{k}")).collect();
        let z_names = (1..=z.dim().2).map(|k| format!("z{k}")).collect();
        Self::new(y, x, z, unit_ids, period_ids, x_names, z_names)
    }

    pub fn new(
        y: Array2<f64>,
        x: Array3<f64>,
        z: Array3<f64>,
        unit_ids: Vec<String>,
        period_ids: Vec<String>,
        x_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.dim();
        if n == 0 || t == 0 {
            return Err(Error::InvalidInput("panel needs N >= 1 and T >= 1".into()));
        }
        let (xn, xt, d) = x.dim();
        let (zn, zt, m) = z.dim();
        if (xn, xt) != (n, t) || (zn, zt) != (n, t) {
            return Err(Error::DimensionMismatch(format!(
                "y is {n}x{t}, x is {xn}x{xt}, z is {zn}x{zt}"
            )));
        }
        if d == 0 || m == 0 {
            return Err(Error::InvalidInput(
                "panel needs at least one regressor and one instrument".into(),
            ));
        }
        if unit_ids.len() != n || period_ids.len() != t {
            return Err(Error::DimensionMismatch("id label counts".into()));
        }
        if x_names.len() != d || z_names.len() != m {
            return Err(Error::DimensionMismatch("variable name counts".into()));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("y".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("x".into()));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("z".into()));
        }
        Ok(PanelData {
            y,
            x,
            z,
            unit_ids,
            period_ids,
            x_names,
            z_names,
        })
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.dim().2
    }

    pub fn n_instruments(&self) -> usize {
        self.z.dim().2
    }

    /// `(N, T, d, m)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.n_units(),
            self.n_periods(),
            self.n_regressors(),
            self.n_instruments(),
        )
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn x(&self) -> &Array3<f64> {
        &self.x
    }

    pub fn z(&self) -> &Array3<f64> {
        &self.z
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    /// Same panel with the instruments replaced.
    pub fn with_instruments(&self, z: Array3<f64>, z_names: Vec<String>) -> Result<Self> {
        Self::new(
            self.y.clone(),
            self.x.clone(),
            z,
            self.unit_ids.clone(),
            self.period_ids.clone(),
            self.x_names.clone(),
            z_names,
        )
    }

    /// The dependent variable as an `(N, T, 1)` array.
    pub fn y3(&self) -> Array3<f64> {
        self.y.clone().insert_axis(Axis(2))
    }

    /// Instruments of unit `i` as a `T x m` matrix.
    pub fn z_unit(&self, i: usize) -> DMatrix<f64> {
        unit_matrix(&self.z, i)
    }

    /// Regressors of unit `i` as a `T x d` matrix.
    pub fn x_unit(&self, i: usize) -> DMatrix<f64> {
        unit_matrix(&self.x, i)
    }

    pub fn y_unit(&self, i: usize) -> DMatrix<f64> {
        let t = self.n_periods();
        DMatrix::from_fn(t, 1, |s, _| self.y[[i, s]])
    }
}

pub(crate) fn unit_matrix(a: &Array3<f64>, i: usize) -> DMatrix<f64> {
    let (_, t, k) = a.dim();
    DMatrix::from_fn(t, k, |s, j| a[[i, s, j]])
}

/// Assignment of `N` units to groups. Labels are zero-based in memory; files
/// and printed tables use `label + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    labels: Vec<usize>,
    n_groups: usize,
}

impl Grouping {
    pub fn new(labels: Vec<usize>, n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::InvalidInput("number of groups must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_groups) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_groups} groups"
            )));
        }
        Ok(Grouping { labels, n_groups })
    }

    /// Everyone in group 0.
    pub fn single(n: usize) -> Self {
        Grouping {
            labels: vec![0; n],
            n_groups: 1,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_units(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_groups];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Groups declared but without members.
    pub fn empty_groups(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0)
            .map(|(g, _)| g)
            .collect()
    }

    pub fn members(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == g)
            .map(|(i, _)| i)
    }

    /// Relabel with `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Grouping {
            labels: self.labels.iter().map(|&l| perm[l]).collect(),
            n_groups: self.n_groups,
        }
    }
}

/// Simulation ground truth accompanying a generated panel.
#[derive(Debug, Clone)]
pub struct GroupTruth {
    pub grouping: Grouping,
    /// `G` coefficient vectors of length `d`.
    pub beta: Vec<Vec<f64>>,
    /// Per-unit first-stage coefficient matrices (`m x d`).
    pub first_stage_pi: Vec<DMatrix<f64>>,
    /// Per-unit correlation between first-stage and structural errors.
    pub rho: Vec<f64>,
}

/// Column names used when reading or writing a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub y: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

impl PanelSchema {
    /// `unit, period, y, x1..xd, z1..zm`.
    pub fn standard(d: usize, m: usize) -> Self {
        PanelSchema {
            unit: "unit".into(),
            period: "period".into(),
            y: "y".into(),
            x: (1..=d).map(|k| format!("x{k}")).collect(),
            z: (1..=m).map(|k| format!("z{k}")).collect(),
        }
    }

    /// Standard names with `d` and `m` taken from the `x<k>` / `z<k>` columns
    /// present in a header.
    pub fn infer(header: &[String]) -> Self {
        let count = |prefix: char| {
            (1..)
                .take_while(|k| header.iter().any(|h| *h == format!("{prefix}{k}")))
                .count()
        };
        Self::standard(count('x'), count('z'))
    }
}

/// Read a long-format CSV panel: one row per (unit, period).
///
/// Units keep their order of first appearance; periods are sorted ascending
/// (numerically when every label parses as a number, lexically otherwise).
pub fn load_panel(path: impl AsRef<Path>, schema: Option<&PanelSchema>) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_panel(file, schema)
}

pub fn read_panel<R: std::io::Read>(reader: R, schema: Option<&PanelSchema>) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => PanelSchema::infer(&header),
    };
    if schema.x.is_empty() {
        return Err(Error::MissingColumn("x1".into()));
    }
    if schema.z.is_empty() {
        return Err(Error::MissingColumn("z1".into()));
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let period_col = col(&schema.period)?;
    let y_col = col(&schema.y)?;
    let x_cols = schema.x.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.z.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let (d, m) = (x_cols.len(), z_cols.len());

    struct Row {
        unit: usize,
        period: String,
        values: Vec<f64>,
    }
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut unit_ids = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let parse = |c: usize, name: &str| -> Result<f64> {
            let raw = field(c);
            let v: f64 = raw.parse().map_err(|_| Error::ParseValue {
                column: name.to_string(),
                row: r + 1,
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(format!("column `{name}`, row {}", r + 1)));
            }
            Ok(v)
        };
        let mut values = Vec::with_capacity(1 + d + m);
        values.push(parse(y_col, &schema.y)?);
        for (c, name) in x_cols.iter().zip(&schema.x) {
            values.push(parse(*c, name)?);
        }
        for (c, name) in z_cols.iter().zip(&schema.z) {
            values.push(parse(*c, name)?);
        }
        let unit_label = field(unit_col).to_string();
        let next = unit_ids.len();
        let unit = *unit_index.entry(unit_label.clone()).or_insert_with(|| {
            unit_ids.push(unit_label);
            next
        });
        rows.push(Row {
            unit,
            period: field(period_col).to_string(),
            values,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("panel file has no data rows".into()));
    }

    let mut period_ids: Vec<String> = rows.iter().map(|r| r.period.clone()).collect();
    sort_periods(&mut period_ids);
    period_ids.dedup();
    let period_index: HashMap<&str, usize> = period_ids
        .iter()
        .enumerate()
        .map(|(k, p)| (p.as_str(), k))
        .collect();

    let (n, t) = (unit_ids.len(), period_ids.len());
    let mut seen = vec![false; n * t];
    let mut y = Array2::zeros((n, t));
    let mut x = Array3::zeros((n, t, d));
    let mut z = Array3::zeros((n, t, m));
    for row in &rows {
        let s = period_index[row.period.as_str()];
        let cell = row.unit * t + s;
        if seen[cell] {
            return Err(Error::DuplicateObservation {
                unit: unit_ids[row.unit].clone(),
                period: row.period.clone(),
            });
        }
        seen[cell] = true;
        y[[row.unit, s]] = row.values[0];
        for k in 0..d {
            x[[row.unit, s, k]] = row.values[1 + k];
        }
        for k in 0..m {
            z[[row.unit, s, k]] = row.values[1 + d + k];
        }
    }
    if let Some(cell) = seen.iter().position(|&v| !v) {
        return Err(Error::UnbalancedPanel {
            unit: unit_ids[cell / t].clone(),
            period: period_ids[cell % t].clone(),
        });
    }
    PanelData::new(y, x, z, unit_ids, period_ids, schema.x.clone(), schema.z.clone())
}

fn sort_periods(periods: &mut [String]) {
    let numeric: Option<Vec<f64>> = periods.iter().map(|p| p.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => periods.sort_by(|a, b| {
            let (a, b) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            a.total_cmp(&b)
        }),
        None => periods.sort(),
    }
}

/// Write the panel in the long format read by [`load_panel`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn save_panel(p: &PanelData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_panel(p, file)
}

pub fn write_panel<W: std::io::Write>(p: &PanelData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "period".to_string(), "y".to_string()];
    header.extend(p.x_names.iter().cloned());
    header.extend(p.z_names.iter().cloned());
    w.write_record(&header)?;
    let (n, t, d, m) = p.dims();
    for i in 0..n {
        for s in 0..t {
            let mut rec = vec![
                p.unit_ids[i].clone(),
                p.period_ids[s].clone(),
                p.y[[i, s]].to_string(),
            ];
            rec.extend((0..d).map(|k| p.x[[i, s, k]].to_string()));
            rec.extend((0..m).map(|k| p.z[[i, s, k]].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<panel writer>".into(),
        source,
    })?;
    Ok(())
}

/// Fixed-effect removing transform applied before estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Within,
    FirstDifference,
}

impl Transform {
    pub fn apply(self, p: &PanelData) -> Result<PanelData> {
        match self {
            Transform::None => Ok(p.clone()),
            Transform::Within => within_transform(p),
            Transform::FirstDifference => first_difference(p),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "within" => Ok(Transform::Within),
            "fd" | "first_difference" => Ok(Transform::FirstDifference),
            other => Err(Error::InvalidInput(format!("unknown transform `{other}`"))),
        }
    }
}

fn demean3(a: &Array3<f64>) -> Array3<f64> {
    let mean = a.mean_axis(Axis(1)).expect("T >= 1");
    let mut out = a.clone();
    for mut row in out.axis_iter_mut(Axis(1)) {
        row -= &mean;
    }
    out
}

/// Subtract each unit's time mean from `y`, `x` and `z`.
pub fn within_transform(p: &PanelData) -> Result<PanelData> {
    if p.n_periods() < 2 {
        return Err(Error::TooFewPeriods(p.n_periods()));
    }
    let y = demean3(&p.y3()).remove_axis(Axis(2));
    PanelData::new(
        y,
        demean3(&p.x),
        demean3(&p.z),
        p.unit_ids.clone(),
        p.period_ids.clone(),
        p.x_names.clone(),
        p.z_names.clone(),
    )
}

fn diff3(a: &Array3<f64>) -> Array3<f64> {
    let t = a.dim().1;
    let later = a.slice(ndarray::s![.., 1..t, ..]);
    let earlier = a.slice(ndarray::s![.., 0..t - 1, ..]);
    &later - &earlier
}

/// `w_t - w_{t-1}` for every series; the first period is dropped.
pub fn first_difference(p: &PanelData) -> Result<PanelData> {
    if p.n_periods() < 2 {
        return Err(Error::TooFewPeriods(p.n_periods()));
    }
    let y = diff3(&p.y3()).remove_axis(Axis(2));
    PanelData::new(
        y,
        diff3(&p.x),
        diff3(&p.z),
        p.unit_ids.clone(),
        p.period_ids[1..].to_vec(),
        p.x_names.clone(),
        p.z_names.clone(),
    )
}
