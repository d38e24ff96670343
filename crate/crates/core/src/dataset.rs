//! Data model, CSV ingestion, Gaussian-mixture generators and seeded splitting.
//!
//! All randomness flows through [`seeded_rng`], a ChaCha8 stream keyed by a
//! caller-supplied `u64`, so every generator is bit-reproducible across
//! platforms.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The deterministic generator used everywhere in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Nominal,
    Anomaly,
}

impl Label {
    /// Accepts `0`/`nominal`/`normal` and `1`/`anomaly`/`anomalous`/`outlier`.
    pub fn parse(cell: &str) -> Option<Label> {
        match cell.trim().to_ascii_lowercase().as_str() {
            "0" | "0.0" | "nominal" | "normal" => Some(Label::Nominal),
            "1" | "1.0" | "anomaly" | "anomalous" | "outlier" => Some(Label::Anomaly),
            _ => None,
        }
    }

    /// Numeric code written to CSV files: 0 nominal, 1 anomaly.
    pub fn code(self) -> u8 {
        match self {
            Label::Nominal => 0,
            Label::Anomaly => 1,
        }
    }
}

/// Which generator and seed produced a synthetic matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
}

/// `n` points in `R^d`, optionally labelled.
///
/// Rows are stored contiguously; every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T> {
    points: Array2<T>,
    labels: Option<Vec<Label>>,
    provenance: Option<Provenance>,
}

impl<T: Scalar> DataMatrix<T> {
    pub fn new(points: Array2<T>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::InsufficientData(format!(
                "data matrix must have at least one row and one column, got {n}x{d}"
            )));
        }
        if let Some((idx, _)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        let points = if points.is_standard_layout() {
            points
        } else {
            points.as_standard_layout().into_owned()
        };
        Ok(DataMatrix {
            points,
            labels: None,
            provenance: None,
        })
    }

    pub fn from_flat(n: usize, d: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Format(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                values.len()
            )));
        }
        let points = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(points)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Format(format!(
                "row {bad} has {} values, expected {d}",
                rows[bad].len()
            )));
        }
        Self::from_flat(rows.len(), d, rows.concat())
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Format(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let d = self.d();
        &self.flat()[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.flat().chunks_exact(self.d())
    }

    pub fn flat(&self) -> &[T] {
        self.points
            .as_slice()
            .expect("points are kept in standard layout")
    }

    pub fn points(&self) -> &Array2<T> {
        &self.points
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Rows at `indices`, in that order. Labels follow their rows.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InsufficientData("empty row selection".into()));
        }
        let points = self.points.select(Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(DataMatrix {
            points,
            labels,
            provenance: self.provenance.clone(),
        })
    }

    /// Rows whose label matches. Errors when the matrix is unlabelled or no row matches.
    pub fn filter_label(&self, label: Label) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Format("data has no labels".into()))?;
        let idx: Vec<usize> = (0..self.n()).filter(|&i| labels[i] == label).collect();
        self.select(&idx)
    }

    /// Stacks matrices of equal dimension. Labels survive only if every part has them.
    pub fn concat(parts: &[DataMatrix<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let d = first.d();
        let mut values = Vec::new();
        for p in parts {
            if p.d() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.d(),
                });
            }
            values.extend_from_slice(p.flat());
        }
        let n = values.len() / d;
        let mut out = Self::from_flat(n, d, values)?;
        if parts.iter().all(|p| p.labels.is_some()) {
            let labels = parts
                .iter()
                .flat_map(|p| p.labels.as_ref().unwrap().iter().copied())
                .collect();
            out.labels = Some(labels);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> DataMatrix<U> {
        DataMatrix {
            points: self.points.mapv(|v| U::of(v.as_f64())),
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the matrix as CSV with header `x0..x{d-1}[,label]`.
    /// Each entry of `comments` becomes a leading `# ` line.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}").map_err(|e| Error::io("<csv output>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.rows().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].code().to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), comments)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Where the label column of a CSV file is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    None,
    Index(usize),
    /// A header column named `label`, if there is one.
    Auto,
}

/// Reads a comma-separated file.
///
/// Lines starting with `#` are skipped. The first record is taken as a header
/// when none of its feature cells parses as a number.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, label: LabelColumn) -> Result<DataMatrix<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label)
}

pub fn read_csv<T: Scalar, R: Read>(input: R, label: LabelColumn) -> Result<DataMatrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("CSV input has no rows".into()));
    }

    let width = records[0].len();
    let first_is_header = {
        let r = &records[0];
        let feature_cells: Vec<&str> = (0..r.len())
            .filter(|&c| match label {
                LabelColumn::Index(l) => c != l,
                _ => true,
            })
            .map(|c| &r[c])
            .collect();
        !feature_cells.is_empty() && feature_cells.iter().all(|c| c.parse::<f64>().is_err())
    };

    let label_col = match label {
        LabelColumn::None => None,
        LabelColumn::Index(c) => {
            if c >= width {
                return Err(Error::InvalidParameter(format!(
                    "label column {c} out of range for {width} columns"
                )));
            }
            Some(c)
        }
        LabelColumn::Auto => {
            if first_is_header {
                records[0]
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case("label"))
            } else {
                None
            }
        }
    };

    let body = if first_is_header {
        &records[1..]
    } else {
        &records[..]
    };
    if body.is_empty() {
        return Err(Error::InsufficientData("CSV input has a header but no data rows".into()));
    }
    let d = width - usize::from(label_col.is_some());
    if d == 0 {
        return Err(Error::InsufficientData("CSV input has no feature columns".into()));
    }

    let row_offset = usize::from(first_is_header);
    let mut values = Vec::with_capacity(body.len() * d);
    let mut labels = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        let row = r + row_offset;
        if rec.len() != width {
            return Err(Error::Format(format!(
                "row {row} has {} cells, expected {width}",
                rec.len()
            )));
        }
        for (col, cell) in rec.iter().enumerate() {
            if Some(col) == label_col {
                let l = Label::parse(cell).ok_or_else(|| Error::Parse {
                    row,
                    col,
                    msg: format!("unrecognised label {cell:?}"),
                })?;
                labels.push(l);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col,
                msg: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col,
                    msg: format!("{cell:?} is not finite"),
                });
            }
            values.push(T::of(v));
        }
    }
    let data = DataMatrix::from_flat(body.len(), d, values)?;
    if label_col.is_some() {
        data.with_labels(labels)
    } else {
        Ok(data)
    }
}

/// One axis-aligned Gaussian of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub variance: Vec<f64>,
}

/// Axis-aligned box `lower[j] <= x[j] <= upper[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AnomalyBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = AnomalyBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// The square `[-half, half]^d`.
    pub fn centered(d: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; d], vec![half; d])
    }

    fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidParameter(
                "box bounds must be nonempty and of equal length".into(),
            ));
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "box bounds for dimension {j} must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Uniform density on the box, zero outside.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0 / self.volume()
        } else {
            0.0
        }
    }
}

/// Finite mixture of axis-aligned Gaussians, optionally paired with a uniform anomaly box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    components: Vec<GaussianComponent>,
    anomaly_box: Option<AnomalyBox>,
}

#[derive(Deserialize)]
struct DensityFile {
    component: Vec<GaussianComponent>,
    anomaly_box: Option<AnomalyBox>,
}

impl MixtureDensity {
    pub fn new(components: Vec<GaussianComponent>, anomaly_box: Option<AnomalyBox>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let d = first.mean.len();
        if d == 0 {
            return Err(Error::InvalidParameter("mixture dimension must be >= 1".into()));
        }
        let mut total = 0.0;
        for (c, comp) in components.iter().enumerate() {
            if !(comp.weight > 0.0 && comp.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "component {c} weight must be positive, got {}",
                    comp.weight
                )));
            }
            if comp.mean.len() != d || comp.variance.len() != d {
                return Err(Error::InvalidParameter(format!(
                    "component {c} has mismatched dimension"
                )));
            }
            if comp.mean.iter().any(|m| !m.is_finite())
                || comp.variance.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            {
                return Err(Error::InvalidParameter(format!(
                    "component {c} needs finite mean and strictly positive variances"
                )));
            }
            total += comp.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if let Some(b) = &anomaly_box {
            b.validate()?;
            if b.dim() != d {
                return Err(Error::InvalidParameter(
                    "anomaly box dimension differs from mixture dimension".into(),
                ));
            }
        }
        Ok(MixtureDensity {
            components,
            anomaly_box,
        })
    }

    /// Reads a TOML generator config:
    ///
    /// ```toml
    /// [[component]]
    /// weight = 1.0
    /// mean = [0.0, 0.0]
    /// variance = [1.0, 1.0]
    ///
    /// [anomaly_box]
    /// lower = [-5.0, -5.0]
    /// upper = [5.0, 5.0]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: DensityFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("density config: {e}")))?;
        Self::new(file.component, file.anomaly_box)
    }

    pub fn load_toml(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// A single Gaussian `N(mean, diag(variance))`.
    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(
            vec![GaussianComponent {
                weight: 1.0,
                mean,
                variance,
            }],
            None,
        )
    }

    /// `0.5 N([4, 1], 0.5 I) + 0.5 N([4, -1], 0.5 I)`: two overlapping blobs
    /// for level-curve pictures.
    pub fn twin_gaussians() -> Self {
        Self::new(
            vec![
                GaussianComponent {
                    weight: 0.5,
                    mean: vec![4.0, 1.0],
                    variance: vec![0.5, 0.5],
                },
                GaussianComponent {
                    weight: 0.5,
                    mean: vec![4.0, -1.0],
                    variance: vec![0.5, 0.5],
                },
            ],
            None,
        )
        .expect("valid preset")
    }

    /// `0.2 N([5, 0], diag(1, 9)) + 0.8 N([-5, 0], diag(9, 1))` with anomalies
    /// uniform on `[-18, 18]^2`.
    pub fn crossed_gaussians() -> Self {
        Self::new(
            vec![
                GaussianComponent {
                    weight: 0.2,
                    mean: vec![5.0, 0.0],
                    variance: vec![1.0, 9.0],
                },
                GaussianComponent {
                    weight: 0.8,
                    mean: vec![-5.0, 0.0],
                    variance: vec![9.0, 1.0],
                },
            ],
            Some(AnomalyBox::centered(2, 18.0).expect("valid box")),
        )
        .expect("valid preset")
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn anomaly_box(&self) -> Option<&AnomalyBox> {
        self.anomaly_box.as_ref()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let two_pi = std::f64::consts::TAU;
        self.components
            .iter()
            .map(|c| {
                let mut quad = 0.0;
                let mut det = 1.0;
                for ((&xi, &m), &v) in x.iter().zip(&c.mean).zip(&c.variance) {
                    let z = xi - m;
                    quad += z * z / v;
                    det *= two_pi * v;
                }
                c.weight * (-0.5 * quad).exp() / det.sqrt()
            })
            .sum()
    }
}

/// Draws `n` i.i.d. points and returns the component index of each draw alongside.
pub fn sample_mixture_with_components<T: Scalar>(
    density: &MixtureDensity,
    n: usize,
    seed: u64,
) -> Result<(DataMatrix<T>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let d = density.dim();
    let comps = density.components();
    let mut values = Vec::with_capacity(n * d);
    let mut assignment = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (c, comp) in comps.iter().enumerate() {
            acc += comp.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let comp = &comps[chosen];
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            values.push(T::of(comp.mean[j] + comp.variance[j].sqrt() * z));
        }
        assignment.push(chosen);
    }
    let data = DataMatrix::from_flat(n, d, values)?
        .with_labels(vec![Label::Nominal; n])?
        .with_provenance(Provenance {
            generator: "mixture".into(),
            seed,
        });
    Ok((data, assignment))
}

/// Draws `n` i.i.d. nominal points from the mixture.
pub fn sample_mixture<T: Scalar>(
    density: &MixtureDensity,
    n: usize,
    seed: u64,
) -> Result<DataMatrix<T>> {
    sample_mixture_with_components(density, n, seed).map(|(data, _)| data)
}

/// Draws `n` points uniformly from the box, labelled as anomalies.
pub fn sample_anomaly_box<T: Scalar>(bounds: &AnomalyBox, n: usize, seed: u64) -> Result<DataMatrix<T>> {
    bounds.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let d = bounds.dim();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            let u: f64 = rng.random();
            let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
            values.push(T::of(lo + (hi - lo) * u));
        }
    }
    Ok(DataMatrix::from_flat(n, d, values)?
        .with_labels(vec![Label::Anomaly; n])?
        .with_provenance(Provenance {
            generator: "uniform-box".into(),
            seed,
        }))
}

/// Part sizes for `n` items under `fractions`, by largest remainder.
/// Remainder ties go to the earlier part.
pub fn largest_remainder_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::InvalidParameter(
            "split fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &p in order.iter().take(n.saturating_sub(assigned)) {
        sizes[p] += 1;
    }
    Ok(sizes)
}

/// Seeded shuffle of `0..n` cut into consecutive parts of the given sizes.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = largest_remainder_sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(idx[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

/// Disjoint seeded partition of the rows. Every part must end up nonempty.
pub fn split<T: Scalar>(
    data: &DataMatrix<T>,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<DataMatrix<T>>> {
    let parts = split_indices(data.n(), fractions, seed)?;
    parts
        .iter()
        .map(|p| {
            if p.is_empty() {
                Err(Error::InsufficientData(format!(
                    "{} rows cannot fill {} nonempty parts",
                    data.n(),
                    fractions.len()
                )))
            } else {
                data.select(p)
            }
        })
        .collect()
}
