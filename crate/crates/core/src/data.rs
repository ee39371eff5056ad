//! Paired parameter/simulation datasets, CSV ingestion and min-max
//! normalization.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Observed `(min, max)` of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ColumnRange<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> ColumnRange<T> {
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    /// Maps `v` into `[0, 1]`; constant columns map to one half.
    #[inline]
    pub fn normalize(&self, v: T) -> T {
        if self.is_constant() {
            T::lit(0.5)
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    #[inline]
    pub fn denormalize(&self, u: T) -> T {
        if self.is_constant() {
            self.min
        } else {
            self.min + u * (self.max - self.min)
        }
    }

    fn of<'a>(values: impl Iterator<Item = &'a T>) -> Self {
        let mut min = T::infinity();
        let mut max = T::neg_infinity();
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        Self { min, max }
    }
}

/// `n` parameter vectors paired row-by-row with `n` simulator outputs, plus
/// the observation the parameters are to be inferred for.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset<T> {
    params: Matrix<T>,
    sims: Matrix<T>,
    observation: Vec<T>,
    param_ranges: Vec<ColumnRange<T>>,
    sim_ranges: Vec<ColumnRange<T>>,
    normalized: bool,
}

impl<T: Scalar> PairedDataset<T> {
    pub fn new(params: Matrix<T>, sims: Matrix<T>, observation: Vec<T>) -> Result<Self> {
        if params.rows() != sims.rows() {
            return Err(Error::RowCountMismatch {
                params: params.rows(),
                sims: sims.rows(),
            });
        }
        if params.rows() == 0 {
            return Err(Error::EmptyInput("dataset has no rows"));
        }
        check_dim(sims.cols(), observation.len())?;
        if !params.is_finite() {
            return Err(Error::NonFinite("params"));
        }
        if !sims.is_finite() {
            return Err(Error::NonFinite("sims"));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        let param_ranges = (0..params.cols())
            .map(|j| ColumnRange::of(params.iter_rows().map(|r| &r[j])))
            .collect();
        let sim_ranges = (0..sims.cols())
            .map(|j| {
                ColumnRange::of(
                    sims.iter_rows()
                        .map(|r| &r[j])
                        .chain(std::iter::once(&observation[j])),
                )
            })
            .collect();
        Ok(Self {
            params,
            sims,
            observation,
            param_ranges,
            sim_ranges,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.params.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.params.cols()
    }

    pub fn sim_dim(&self) -> usize {
        self.sims.cols()
    }

    pub fn params(&self) -> &Matrix<T> {
        &self.params
    }

    pub fn sims(&self) -> &Matrix<T> {
        &self.sims
    }

    pub fn observation(&self) -> &[T] {
        &self.observation
    }

    /// Ranges of the original (pre-normalization) parameter columns.
    pub fn param_ranges(&self) -> &[ColumnRange<T>] {
        &self.param_ranges
    }

    /// Ranges of the original simulation columns, observation included.
    pub fn sim_ranges(&self) -> &[ColumnRange<T>] {
        &self.sim_ranges
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Min-max maps every column onto `[0, 1]`, keeping the original ranges
    /// for [`denormalize_point`]. Idempotent.
    pub fn normalize_columns(&self) -> Self {
        if self.normalized {
            return self.clone();
        }
        let params = map_columns(&self.params, &self.param_ranges);
        let sims = map_columns(&self.sims, &self.sim_ranges);
        let observation = self
            .observation
            .iter()
            .zip(&self.sim_ranges)
            .map(|(&v, r)| r.normalize(v))
            .collect();
        Self {
            params,
            sims,
            observation,
            param_ranges: self.param_ranges.clone(),
            sim_ranges: self.sim_ranges.clone(),
            normalized: true,
        }
    }

    /// Row-permuted copy; used to check permutation invariance.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_dim(self.len(), order.len())?;
        let mut out = Self::new(
            self.params.select_rows(order),
            self.sims.select_rows(order),
            self.observation.clone(),
        )?;
        if self.normalized {
            out.param_ranges = self.param_ranges.clone();
            out.sim_ranges = self.sim_ranges.clone();
            out.normalized = true;
        }
        Ok(out)
    }
}

fn map_columns<T: Scalar>(m: &Matrix<T>, ranges: &[ColumnRange<T>]) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for (v, r) in out.row_mut(i).iter_mut().zip(ranges) {
            *v = r.normalize(*v);
        }
    }
    out
}

/// Normalizes a single point with the given column ranges.
pub fn normalize_point<T: Scalar>(x: &[T], ranges: &[ColumnRange<T>]) -> Result<Vec<T>> {
    check_dim(ranges.len(), x.len())?;
    Ok(x.iter().zip(ranges).map(|(&v, r)| r.normalize(v)).collect())
}

/// Inverse of column normalization; constant columns return their constant.
pub fn denormalize_point<T: Scalar>(x: &[T], ranges: &[ColumnRange<T>]) -> Result<Vec<T>> {
    check_dim(ranges.len(), x.len())?;
    Ok(x.iter().zip(ranges).map(|(&u, r)| r.denormalize(u)).collect())
}

/// Reads a headed numeric CSV into a matrix.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<(Vec<String>, Matrix<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "missing header row".into(),
        });
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        check_dim(headers.len(), record.len()).map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            message: format!("row {} has {} fields, header has {}", r + 1, record.len(), headers.len()),
        })?;
        for (c, cell) in record.iter().enumerate() {
            let bad = || Error::NonNumericCell {
                path: path.to_path_buf(),
                row: r + 1,
                column: headers[c].clone(),
                value: cell.to_owned(),
            };
            let v: f64 = cell.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            data.push(T::lit(v));
        }
        rows += 1;
    }
    Ok((headers.clone(), Matrix::from_vec(rows, headers.len(), data)?))
}

/// Writes a matrix as CSV with columns `{prefix}1..{prefix}d`.
pub fn write_matrix_csv<T: Scalar>(path: &Path, prefix: &str, m: &Matrix<T>) -> Result<()> {
    let header: Vec<String> = (1..=m.cols()).map(|j| format!("{prefix}{j}")).collect();
    let mut out = String::with_capacity(m.rows() * m.cols() * 20);
    out.push_str(&header.join(","));
    out.push('\n');
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads `(params, sims, observation)` CSV files into a dataset.
pub fn load_paired_dataset<T: Scalar>(
    params_path: &Path,
    sims_path: &Path,
    obs_path: &Path,
) -> Result<PairedDataset<T>> {
    let (_, params) = read_matrix_csv(params_path)?;
    let (_, sims) = read_matrix_csv(sims_path)?;
    let (_, obs) = read_matrix_csv::<T>(obs_path)?;
    if obs.rows() != 1 {
        return Err(Error::ObservationRows(obs.rows()));
    }
    PairedDataset::new(params, sims, obs.row(0).to_vec())
}

/// Writes `params.csv`, `sims.csv` and `obs.csv` into `dir`.
pub fn save_paired_dataset<T: Scalar>(dir: &Path, ds: &PairedDataset<T>) -> Result<()> {
    write_matrix_csv(&dir.join("params.csv"), "p", ds.params())?;
    write_matrix_csv(&dir.join("sims.csv"), "s", ds.sims())?;
    let obs = Matrix::from_vec(1, ds.sim_dim(), ds.observation().to_vec())?;
    write_matrix_csv(&dir.join("obs.csv"), "s", &obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn col(values: &[f64]) -> Matrix<f64> {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn normalizes_endpoints_and_constants() {
        let params = Matrix::from_rows(&[[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]).unwrap();
        let ds = PairedDataset::new(params, col(&[0.0, 0.5, 1.0]), vec![0.25]).unwrap();
        let n = ds.normalize_columns();
        assert_eq!(n.params().column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.params().column(1), vec![0.5, 0.5, 0.5]);
        // already in [0,1]
        assert_eq!(n.sims().column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.observation(), &[0.25]);
        assert!(n.is_normalized());
        assert_eq!(n.normalize_columns(), n);
    }

    #[test]
    fn observation_widens_sim_range() {
        let ds = PairedDataset::new(col(&[1.0, 2.0]), col(&[0.0, 1.0]), vec![3.0]).unwrap();
        assert_eq!(ds.sim_ranges()[0], ColumnRange { min: 0.0, max: 3.0 });
    }

    #[test]
    fn denormalize_examples() {
        let r = [ColumnRange { min: 0.0, max: 10.0 }];
        assert_eq!(denormalize_point(&[0.5], &r).unwrap(), vec![5.0]);
        let c = [ColumnRange { min: 7.0, max: 7.0 }];
        assert_eq!(denormalize_point(&[0.5], &c).unwrap(), vec![7.0]);
        assert!(matches!(
            denormalize_point(&[0.5, 0.1], &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_mismatched_rows_and_non_finite() {
        let e = PairedDataset::new(col(&[1.0, 2.0, 3.0]), col(&[1.0, 2.0]), vec![0.0]);
        assert!(matches!(e, Err(Error::RowCountMismatch { params: 3, sims: 2 })));
        let e = PairedDataset::new(col(&[1.0]), col(&[f64::NAN]), vec![0.0]);
        assert!(matches!(e, Err(Error::NonFinite("sims"))));
        let e = PairedDataset::new(col(&[1.0]), col(&[1.0]), vec![0.0, 1.0]);
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loads_minimal_csv_triple() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("params.csv"), "p1,p2\n1,2\n3,4\n").unwrap();
        fs::write(p.join("sims.csv"), "s1\n0.5\n1.5\n").unwrap();
        fs::write(p.join("obs.csv"), "s1\n1.0\n").unwrap();
        let ds: PairedDataset<f64> =
            load_paired_dataset(&p.join("params.csv"), &p.join("sims.csv"), &p.join("obs.csv")).unwrap();
        assert_eq!((ds.len(), ds.param_dim(), ds.sim_dim()), (2, 2, 1));
        assert_eq!(ds.params().row(1), &[3.0, 4.0]);
        assert_eq!(ds.observation(), &[1.0]);
    }

    #[test]
    fn load_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("params.csv"), "p1\n1\n2\n3\n").unwrap();
        fs::write(p.join("sims.csv"), "s1\n1\n2\n").unwrap();
        fs::write(p.join("obs.csv"), "s1\n1\n").unwrap();
        let r = load_paired_dataset::<f64>(&p.join("params.csv"), &p.join("sims.csv"), &p.join("obs.csv"));
        assert!(r.unwrap_err().to_string().contains("row-count mismatch"));

        fs::write(p.join("sims.csv"), "s1\n1\nNaN\n3\n").unwrap();
        let err = load_paired_dataset::<f64>(&p.join("params.csv"), &p.join("sims.csv"), &p.join("obs.csv"))
            .unwrap_err();
        match err {
            Error::NonNumericCell { row, column, value, .. } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "s1", "NaN"));
            }
            other => panic!("unexpected {other}"),
        }

        let r = load_paired_dataset::<f64>(&p.join("params.csv"), &p.join("nope.csv"), &p.join("obs.csv"));
        assert!(r.unwrap_err().to_string().contains("missing file"));
    }

    #[test]
    fn csv_write_read_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [-2.5e-7, 12345.678]]).unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, "p", &m).unwrap();
        let (h, back) = read_matrix_csv::<f64>(&path).unwrap();
        assert_eq!(h, vec!["p1", "p2"]);
        assert_eq!(back, m);
    }
}
