//! Cleaning and feature engineering: missing-value policy, KNN imputation,
//! z-score outlier flags with rolling-mean replacement, min-max scaling,
//! lagged moving averages, cyclical hour encoding, bus-stop density.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

/// Row-major table of numeric cells with a per-cell missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    columns: Vec<String>,
    rows: usize,
    cells: Vec<f64>,
    missing: Vec<bool>,
}

impl FeatureTable {
    /// `cells[r][c] = None` marks a missing value.
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let width = columns.len();
        let mut cells = Vec::with_capacity(rows.len() * width);
        let mut missing = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Shape {
                    op: "feature_table",
                    left: (r, row.len()),
                    right: (r, width),
                });
            }
            for (c, v) in row.iter().enumerate() {
                match v {
                    Some(x) if !x.is_finite() => bail!(NonFinite, "cell ({}, {})", r, c),
                    Some(x) => {
                        cells.push(*x);
                        missing.push(false);
                    }
                    None => {
                        cells.push(0.0);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(Self {
            columns,
            rows: rows.len(),
            cells,
            missing,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn col_count(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let i = r * self.col_count() + c;
        (!self.missing[i]).then_some(self.cells[i])
    }

    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[r * self.col_count() + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let i = r * self.col_count() + c;
        self.cells[i] = v;
        self.missing[i] = false;
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn row_missing_fraction(&self, r: usize) -> f64 {
        if self.col_count() == 0 {
            return 0.0;
        }
        (0..self.col_count()).filter(|&c| self.is_missing(r, c)).count() as f64 / self.col_count() as f64
    }

    pub fn column_missing_fraction(&self, c: usize) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        (0..self.rows).filter(|&r| self.is_missing(r, c)).count() as f64 / self.rows as f64
    }

    /// Column values, or `None` if any cell in it is missing.
    pub fn column(&self, c: usize) -> Option<Vec<f64>> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn row(&self, r: usize) -> Vec<Option<f64>> {
        (0..self.col_count()).map(|c| self.get(r, c)).collect()
    }

    fn is_complete_row(&self, r: usize) -> bool {
        (0..self.col_count()).all(|c| !self.is_missing(r, c))
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let w = self.col_count();
        let mut cells = Vec::with_capacity(keep.len() * w);
        let mut missing = Vec::with_capacity(keep.len() * w);
        for &r in keep {
            cells.extend_from_slice(&self.cells[r * w..(r + 1) * w]);
            missing.extend_from_slice(&self.missing[r * w..(r + 1) * w]);
        }
        Self {
            columns: self.columns.clone(),
            rows: keep.len(),
            cells,
            missing,
        }
    }
}

/// Fills missing cells from the `k` nearest complete rows.
pub fn knn_impute(table: &FeatureTable, k: usize) -> Result<FeatureTable> {
    let all: Vec<usize> = (0..table.col_count()).collect();
    knn_impute_columns(table, k, &all)
}

/// KNN imputation restricted to `targets` columns. Distance is Euclidean
/// over the columns observed in the row being filled; donors are complete
/// rows, ties broken by row index.
pub fn knn_impute_columns(table: &FeatureTable, k: usize, targets: &[usize]) -> Result<FeatureTable> {
    if k == 0 {
        bail!(Parameter, "k must be at least 1");
    }
    let donors: Vec<usize> = (0..table.row_count()).filter(|&r| table.is_complete_row(r)).collect();
    let needs = (0..table.row_count()).any(|r| targets.iter().any(|&c| table.is_missing(r, c)));
    if !needs {
        return Ok(table.clone());
    }
    if k > donors.len() {
        bail!(Parameter, "k = {} exceeds the {} complete rows available", k, donors.len());
    }
    let mut out = table.clone();
    for r in 0..table.row_count() {
        let holes: Vec<usize> = targets.iter().copied().filter(|&c| table.is_missing(r, c)).collect();
        if holes.is_empty() {
            continue;
        }
        let observed: Vec<usize> = (0..table.col_count()).filter(|&c| !table.is_missing(r, c)).collect();
        let mut ranked: Vec<(f64, usize)> = donors
            .iter()
            .map(|&d| {
                let dist2: f64 = observed
                    .iter()
                    .map(|&c| {
                        let diff = table.cells[r * table.col_count() + c] - table.cells[d * table.col_count() + c];
                        diff * diff
                    })
                    .sum();
                (dist2, d)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for c in holes {
            let mean = ranked[..k]
                .iter()
                .map(|&(_, d)| table.cells[d * table.col_count() + c])
                .sum::<f64>()
                / k as f64;
            out.set(r, c, mean);
        }
    }
    Ok(out)
}

pub const DROP_ROW_FRACTION: f64 = 0.30;
pub const IMPUTE_COLUMN_FRACTION: f64 = 0.05;
pub const DEFAULT_IMPUTE_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MissingReport {
    /// Indices into the input table.
    pub dropped_rows: Vec<usize>,
    pub imputed_cells: usize,
    /// Columns left with missing values, with their missing fraction.
    pub flagged_columns: Vec<(usize, f64)>,
}

/// Drops rows more than 30% missing, KNN-imputes columns under 5% missing,
/// and flags the rest.
pub fn apply_missing_policy(table: &FeatureTable) -> (FeatureTable, MissingReport) {
    let keep: Vec<usize> = (0..table.row_count())
        .filter(|&r| table.row_missing_fraction(r) <= DROP_ROW_FRACTION)
        .collect();
    let dropped_rows: Vec<usize> = (0..table.row_count()).filter(|r| !keep.contains(r)).collect();
    let kept = table.select_rows(&keep);

    let mut impute = Vec::new();
    let mut flagged_columns = Vec::new();
    for c in 0..kept.col_count() {
        let f = kept.column_missing_fraction(c);
        if f == 0.0 {
            continue;
        }
        if f < IMPUTE_COLUMN_FRACTION {
            impute.push(c);
        } else {
            flagged_columns.push((c, f));
        }
    }
    let complete = (0..kept.row_count()).filter(|&r| kept.is_complete_row(r)).count();
    let k = DEFAULT_IMPUTE_K.min(complete);
    let before = kept.missing_count();
    let result = if impute.is_empty() || k == 0 {
        for &c in &impute {
            flagged_columns.push((c, kept.column_missing_fraction(c)));
        }
        flagged_columns.sort_by_key(|&(c, _)| c);
        kept
    } else {
        knn_impute_columns(&kept, k, &impute).expect("k bounded by complete rows")
    };
    let imputed_cells = before - result.missing_count();
    (
        result,
        MissingReport {
            dropped_rows,
            imputed_cells,
            flagged_columns,
        },
    )
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
}

impl SeriesStats {
    pub fn of(series: &[f64]) -> Result<Self> {
        if series.is_empty() {
            bail!(Parameter, "statistics of an empty series");
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: libm::sqrt(var),
        })
    }
}

pub const ZSCORE_THRESHOLD: f64 = 3.0;

/// Marks entries with `|x - mean| / std > threshold` (strict).
pub fn zscore_flags(series: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if series.len() < 2 {
        bail!(Parameter, "z-scores need at least two values");
    }
    zscore_flags_with(series, SeriesStats::of(series)?, threshold)
}

pub fn zscore_flags_with(series: &[f64], stats: SeriesStats, threshold: f64) -> Result<Vec<bool>> {
    if !(stats.std > 0.0) {
        bail!(Domain, "standard deviation is zero; outliers are undefined");
    }
    Ok(series
        .iter()
        .map(|x| (x - stats.mean).abs() / stats.std > threshold)
        .collect())
}

pub const DEFAULT_SMOOTHING_WINDOW: usize = 2;

/// Replaces flagged entries with the mean of up to `window` unflagged values
/// on each side. Unflagged entries are copied through untouched.
pub fn rolling_mean_replace(series: &[f64], flags: &[bool], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        bail!(Parameter, "window must be at least 1");
    }
    if flags.len() != series.len() {
        return Err(Error::Shape {
            op: "rolling_mean_replace",
            left: (series.len(), 1),
            right: (flags.len(), 1),
        });
    }
    if !series.is_empty() && flags.iter().all(|&f| f) {
        bail!(Domain, "every entry is flagged");
    }
    let mut out = series.to_vec();
    for i in (0..series.len()).filter(|&i| flags[i]) {
        let left = (0..i).rev().filter(|&j| !flags[j]).take(window);
        let right = (i + 1..series.len()).filter(|&j| !flags[j]).take(window);
        let (sum, n) = left.chain(right).fold((0.0, 0usize), |(s, n), j| (s + series[j], n + 1));
        out[i] = sum / n as f64;
    }
    Ok(out)
}

/// Range recorded by [`minmax_scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

impl ScalerParams {
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    pub fn transform(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn inverse(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            s * (self.max - self.min) + self.min
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub values: Vec<f64>,
    pub params: ScalerParams,
    /// Set when the input range is zero; every output is then 0.
    pub degenerate: bool,
}

pub fn minmax_scale(series: &[f64]) -> Result<Scaled> {
    if series.is_empty() {
        bail!(Parameter, "cannot scale an empty series");
    }
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = ScalerParams { min, max };
    Ok(Scaled {
        values: series.iter().map(|&x| params.transform(x)).collect(),
        params,
        degenerate: params.is_degenerate(),
    })
}

/// Maps `[0, 1]` onto the `[-1, 1]` spline domain.
pub fn to_spline_domain(unit: f64) -> f64 {
    2.0 * unit - 1.0
}

/// Mean of the `t` preceding values; the first `t` outputs are unavailable.
pub fn moving_average(series: &[f64], t: usize) -> Result<Vec<Option<f64>>> {
    if t == 0 {
        bail!(Parameter, "window must be at least 1");
    }
    if t >= series.len() {
        bail!(Parameter, "window {} must be shorter than the series ({})", t, series.len());
    }
    Ok((0..series.len())
        .map(|i| (i >= t).then(|| series[i - t..i].iter().sum::<f64>() / t as f64))
        .collect())
}

/// `(sin(2 pi T / period), cos(2 pi T / period))`.
pub fn cyclical_encode(hour: f64, period: f64) -> Result<(f64, f64)> {
    if !(period >= 1.0) {
        bail!(Parameter, "period must be at least 1");
    }
    if !(0.0..period).contains(&hour) {
        bail!(Parameter, "hour {} outside [0, {})", hour, period);
    }
    let angle = core::f64::consts::TAU * hour / period;
    Ok((libm::sin(angle), libm::cos(angle)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RoadClass {
    Interstate,
    Arterial,
    Collector,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadAttributes {
    pub bus_stop_count: u32,
    pub road_length_km: f64,
    pub lane_count: u32,
    pub road_class: RoadClass,
}

/// Bus stops per kilometre.
pub fn bus_stop_density(attrs: &RoadAttributes) -> Result<f64> {
    if !(attrs.road_length_km > 0.0) {
        bail!(Domain, "road length must be positive, got {}", attrs.road_length_km);
    }
    Ok(attrs.bus_stop_count as f64 / attrs.road_length_km)
}

/// Column-wise min-max scaling of a complete table, returning scaled
/// columns and per-column parameters.
pub fn scale_columns(columns: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<ScalerParams>)> {
    let mut scaled = Vec::with_capacity(columns.len());
    let mut params = Vec::with_capacity(columns.len());
    for col in columns {
        let s = minmax_scale(col)?;
        scaled.push(s.values);
        params.push(s.params);
    }
    Ok((scaled, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn table(rows: Vec<Vec<Option<f64>>>) -> FeatureTable {
        let cols = rows[0].len();
        FeatureTable::new((0..cols).map(|c| format!("f{c}")).collect(), rows).unwrap()
    }

    #[test]
    fn impute_constant_column() {
        let t = table(vec![
            vec![Some(7.0), Some(1.0)],
            vec![Some(7.0), Some(2.0)],
            vec![None, Some(3.0)],
            vec![Some(7.0), Some(4.0)],
        ]);
        for k in 1..=3 {
            assert_eq!(knn_impute(&t, k).unwrap().get(2, 0), Some(7.0));
        }
    }

    #[test]
    fn impute_copies_duplicate_row() {
        let t = table(vec![
            vec![Some(1.0), Some(10.0), Some(5.0)],
            vec![Some(4.0), Some(-3.0), Some(9.0)],
            vec![Some(4.0), Some(-3.0), None],
            vec![Some(0.0), Some(0.0), Some(1.0)],
        ]);
        assert_eq!(knn_impute(&t, 1).unwrap().get(2, 2), Some(9.0));
    }

    #[test]
    fn impute_no_missing_is_identity() {
        let t = table(vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(4.0)]]);
        assert_eq!(knn_impute(&t, 5).unwrap(), t);
    }

    #[test]
    fn impute_k_too_large() {
        let t = table(vec![vec![Some(1.0)], vec![None]]);
        assert!(matches!(knn_impute(&t, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn missing_policy_bands() {
        // 50 rows x 5 cols; row 0 mostly missing; col 1 has 1 gap (2%);
        // col 2 has 7 gaps (~14-15%).
        let mut rows: Vec<Vec<Option<f64>>> = (0..50)
            .map(|r| (0..5).map(|c| Some((r * 5 + c) as f64 * 0.1)).collect())
            .collect();
        rows[0] = vec![Some(1.0), None, None, None, None];
        rows[10][1] = None;
        for r in [3, 8, 15, 22, 30, 37, 44] {
            rows[r][2] = None;
        }
        let t = table(rows);
        let before = t.missing_count();
        let (out, report) = apply_missing_policy(&t);
        assert_eq!(report.dropped_rows, vec![0]);
        assert_eq!(out.row_count(), 49);
        assert_eq!(report.imputed_cells, 1);
        assert!(!out.is_missing(9, 1));
        assert_eq!(report.flagged_columns.len(), 1);
        assert_eq!(report.flagged_columns[0].0, 2);
        assert!(out.missing_count() <= before);
        assert_eq!(out.missing_count(), 7);
    }

    #[test]
    fn zscore_boundaries() {
        let s = SeriesStats { mean: 10.0, std: 2.0 };
        let flags = zscore_flags_with(&[10.0, 16.0, 16.2, 3.0], s, ZSCORE_THRESHOLD).unwrap();
        assert_eq!(flags, vec![false, false, true, true]);
        assert!(matches!(zscore_flags(&[1.0, 1.0, 1.0], 3.0), Err(Error::Domain(_))));
        assert!(zscore_flags(&[1.0], 3.0).is_err());
    }

    #[test]
    fn zscore_detects_spike() {
        let mut s: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        s[12] = 100.0;
        let flags = zscore_flags(&s, 3.0).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 1);
        assert!(flags[12]);
    }

    #[test]
    fn rolling_mean_cases() {
        assert_eq!(
            rolling_mean_replace(&[1.0, 100.0, 3.0], &[false, true, false], 1).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let s = [4.0, 5.0, 6.0];
        assert_eq!(rolling_mean_replace(&s, &[false; 3], 2).unwrap(), s.to_vec());
        assert_eq!(
            rolling_mean_replace(&[50.0, 2.0, 8.0], &[true, false, false], 1).unwrap(),
            vec![2.0, 2.0, 8.0]
        );
        assert!(rolling_mean_replace(&[1.0, 2.0], &[true, true], 1).is_err());
        assert!(rolling_mean_replace(&[1.0], &[false], 0).is_err());
    }

    #[test]
    fn rolling_mean_skips_flagged_neighbors() {
        let s = [1.0, 2.0, 90.0, 95.0, 4.0, 5.0];
        let f = [false, false, true, true, false, false];
        let out = rolling_mean_replace(&s, &f, 2).unwrap();
        assert_eq!(out[2], (1.0 + 2.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(out[3], (1.0 + 2.0 + 4.0 + 5.0) / 4.0);
    }

    #[test]
    fn minmax_cases() {
        let s = minmax_scale(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(s.values, vec![0.0, 0.5, 1.0]);
        assert!(!s.degenerate);
        let c = minmax_scale(&[5.0, 5.0]).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0]);
        assert!(c.degenerate);
        assert_eq!(c.params.inverse(0.0), 5.0);
        let one = minmax_scale(&[3.0]).unwrap();
        assert_eq!(one.values, vec![0.0]);
        assert!(one.degenerate);
        assert!(minmax_scale(&[]).is_err());
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0], 2).unwrap(), vec![None, None, Some(3.0)]);
        assert_eq!(
            moving_average(&[1.0, 5.0, 9.0], 1).unwrap(),
            vec![None, Some(1.0), Some(5.0)]
        );
        let c = moving_average(&[4.0; 6], 3).unwrap();
        assert!(c[3..].iter().all(|v| *v == Some(4.0)));
        assert!(moving_average(&[1.0, 2.0], 2).is_err());
        assert!(moving_average(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn cyclical_cases() {
        assert_eq!(cyclical_encode(0.0, 24.0).unwrap(), (0.0, 1.0));
        let (s, c) = cyclical_encode(6.0, 24.0).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = cyclical_encode(12.0, 24.0).unwrap();
        assert!(s.abs() < 1e-15 && (c + 1.0).abs() < 1e-15);
        assert!(cyclical_encode(24.0, 24.0).is_err());
        assert!(cyclical_encode(-1.0, 24.0).is_err());
    }

    #[test]
    fn bus_stop_density_cases() {
        let mut a = RoadAttributes {
            bus_stop_count: 6,
            road_length_km: 3.0,
            lane_count: 2,
            road_class: RoadClass::Arterial,
        };
        assert_eq!(bus_stop_density(&a).unwrap(), 2.0);
        a.bus_stop_count = 0;
        assert_eq!(bus_stop_density(&a).unwrap(), 0.0);
        a.bus_stop_count = 1;
        a.road_length_km = 0.0;
        assert!(matches!(bus_stop_density(&a), Err(Error::Domain(_))));
    }
}
