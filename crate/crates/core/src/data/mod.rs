//! Data pipeline: raw series ingestion, the four model input matrices
//! (values, mask, time lags, timestamps), min-max normalization, windowing,
//! and held-out ground truth for evaluation.
//!
//! Missing cells in a [`RawSeries`] are NaN. Everything downstream works on
//! [`TimeSeriesWindow`]s, where missing cells are zeroed and the mask carries
//! the observedness.

mod csv_io;

pub use csv_io::{dump_window_csv, load_csv, write_matrix_csv};

use crate::error::{Error, Result};
use crate::par;
use crate::seed::{self, Stream};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;

/// A raw multivariate series. `values[[t, d]]` is NaN when feature `d` was
/// not observed at step `t`.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub timestamps: Vec<f64>,
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
}

impl RawSeries {
    pub fn new(timestamps: Vec<f64>, values: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        if timestamps.len() != values.nrows() {
            return Err(Error::shape(
                "RawSeries",
                format!("{} timestamp rows", values.nrows()),
                format!("{}", timestamps.len()),
            ));
        }
        if values.ncols() != feature_names.len() {
            return Err(Error::shape(
                "RawSeries",
                format!("{} feature names", values.ncols()),
                format!("{}", feature_names.len()),
            ));
        }
        if let Some(i) = first_unsorted(&timestamps) {
            return Err(Error::Config(format!(
                "timestamps must be sorted ascending; row {} decreases",
                i + 1
            )));
        }
        Ok(RawSeries {
            timestamps,
            values,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.values.ncols()
    }
}

fn first_unsorted(ts: &[f64]) -> Option<usize> {
    ts.windows(2).position(|w| w[1] < w[0])
}

/// Binary observedness indicator, stored as 0.0 / 1.0 for direct use in
/// arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    pub entries: Array2<f64>,
}

impl MaskMatrix {
    pub fn dim(&self) -> (usize, usize) {
        self.entries.dim()
    }

    pub fn is_observed(&self, t: usize, d: usize) -> bool {
        self.entries[[t, d]] == 1.0
    }

    pub fn observed_count(&self) -> usize {
        self.entries.iter().filter(|&&m| m == 1.0).count()
    }

    /// `1 − m`, the missingness indicator.
    pub fn complement(&self) -> Array2<f64> {
        self.entries.mapv(|m| 1.0 - m)
    }

    pub fn flipped(&self) -> MaskMatrix {
        MaskMatrix {
            entries: self.entries.slice(s![..;-1, ..]).to_owned(),
        }
    }
}

/// Per-cell elapsed time since the feature was last observed.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub entries: Array2<f64>,
}

/// 1 iff the value cell is present.
pub fn build_mask(raw: &RawSeries) -> MaskMatrix {
    MaskMatrix {
        entries: raw.values.mapv(|v| if v.is_nan() { 0.0 } else { 1.0 }),
    }
}

/// Consecutive timestamp gaps; `gaps[0]` is 0 by convention.
fn timestamp_gaps(timestamps: &[f64]) -> Vec<f64> {
    let mut gaps = vec![0.0; timestamps.len()];
    for t in 1..timestamps.len() {
        gaps[t] = timestamps[t] - timestamps[t - 1];
    }
    gaps
}

fn delta_from_gaps(gaps: &[f64], mask: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = mask.dim();
    let mut delta = Array2::zeros((rows, cols));
    for d in 0..cols {
        for t in 1..rows {
            delta[[t, d]] = if mask[[t - 1, d]] == 1.0 {
                gaps[t]
            } else {
                gaps[t] + delta[[t - 1, d]]
            };
        }
    }
    delta
}

/// Time-lag matrix from the three-branch recurrence: the lag resets to the
/// step gap after an observation and accumulates across missing steps.
pub fn build_delta(timestamps: &[f64], mask: &MaskMatrix) -> Result<DeltaMatrix> {
    if timestamps.len() != mask.dim().0 {
        return Err(Error::shape(
            "build_delta",
            format!("{} timestamps", mask.dim().0),
            format!("{}", timestamps.len()),
        ));
    }
    if let Some(i) = first_unsorted(timestamps) {
        return Err(Error::Config(format!(
            "timestamps must be sorted ascending; row {} decreases",
            i + 1
        )));
    }
    let gaps = timestamp_gaps(timestamps);
    Ok(DeltaMatrix {
        entries: delta_from_gaps(&gaps, &mask.entries),
    })
}

/// Time-lag matrix for the reversed sequence: gaps reversed, mask flipped,
/// same recurrence. Row 0 of the result corresponds to the last original step.
pub fn build_delta_reversed(timestamps: &[f64], mask: &MaskMatrix) -> Result<DeltaMatrix> {
    if let Some(i) = first_unsorted(timestamps) {
        return Err(Error::Config(format!(
            "timestamps must be sorted ascending; row {} decreases",
            i + 1
        )));
    }
    let n = timestamps.len();
    let gaps = timestamp_gaps(timestamps);
    let mut rev_gaps = vec![0.0; n];
    for k in 1..n {
        rev_gaps[k] = gaps[n - k];
    }
    let flipped = mask.flipped();
    Ok(DeltaMatrix {
        entries: delta_from_gaps(&rev_gaps, &flipped.entries),
    })
}

/// Original values and positions of held-out cells, kept on the training
/// window so evaluation can find its ground truth later.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Original values at held-out positions (zero elsewhere).
    pub values: Array2<f64>,
    /// 1 at held-out positions.
    pub holdout_mask: Array2<f64>,
}

/// One fixed-length training / inference unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    /// Values with 0 at missing cells.
    pub x_bar: Array2<f64>,
    pub mask: MaskMatrix,
    pub delta: DeltaMatrix,
    pub timestamps: Vec<f64>,
    pub ground_truth: Option<GroundTruth>,
    /// True when the window is a short remainder padded with missing rows.
    pub padded: bool,
}

impl TimeSeriesWindow {
    /// Builds a window from raw rows (NaN = missing), zeroing missing cells
    /// and deriving mask and delta.
    pub fn from_raw(timestamps: Vec<f64>, raw_values: &Array2<f64>) -> Result<Self> {
        let mask = MaskMatrix {
            entries: raw_values.mapv(|v| if v.is_nan() { 0.0 } else { 1.0 }),
        };
        let x_bar = raw_values.mapv(|v| if v.is_nan() { 0.0 } else { v });
        let delta = build_delta(&timestamps, &mask)?;
        Ok(TimeSeriesWindow {
            x_bar,
            mask,
            delta,
            timestamps,
            ground_truth: None,
            padded: false,
        })
    }

    pub fn len(&self) -> usize {
        self.x_bar.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_bar.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.x_bar.ncols()
    }

    /// Time-lag matrix for the reversed direction.
    pub fn delta_reversed(&self) -> DeltaMatrix {
        build_delta_reversed(&self.timestamps, &self.mask)
            .expect("window timestamps are sorted by construction")
    }
}

/// One held-out cell: position plus the original value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutCell {
    pub t: usize,
    pub d: usize,
    pub value: f64,
}

/// Ground truth removed from a window (or a whole dataset) for evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HoldoutTargets {
    pub cells: Vec<HeldOutCell>,
}

impl HoldoutTargets {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Per-feature min-max statistics over observed cells only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub eps: f64,
}

pub const NORMALIZATION_EPS: f64 = 1e-8;

impl NormalizationStats {
    fn from_min_max(mins: Vec<f64>, maxs: Vec<f64>, names: Option<&[String]>) -> Result<Self> {
        for (d, (&lo, &hi)) in mins.iter().zip(&maxs).enumerate() {
            if lo.is_infinite() || hi.is_infinite() {
                let label = names
                    .and_then(|n| n.get(d).cloned())
                    .unwrap_or_else(|| format!("#{d}"));
                return Err(Error::Config(format!(
                    "feature {label} has no observed cells; cannot fit normalization"
                )));
            }
        }
        let degenerate = mins.iter().zip(&maxs).map(|(a, b)| a == b).collect();
        Ok(NormalizationStats {
            mins,
            maxs,
            degenerate,
            eps: NORMALIZATION_EPS,
        })
    }

    /// Fit over the observed cells of a set of windows.
    pub fn fit_windows(windows: &[TimeSeriesWindow]) -> Result<Self> {
        let d = windows
            .first()
            .map(|w| w.num_features())
            .ok_or_else(|| Error::Config("cannot fit normalization on an empty window set".into()))?;
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for w in windows {
            for ((t, j), &v) in w.x_bar.indexed_iter() {
                if w.mask.entries[[t, j]] == 1.0 {
                    mins[j] = mins[j].min(v);
                    maxs[j] = maxs[j].max(v);
                }
            }
        }
        Self::from_min_max(mins, maxs, None)
    }

    pub fn num_features(&self) -> usize {
        self.mins.len()
    }

    pub fn normalize_value(&self, d: usize, x: f64) -> f64 {
        if self.degenerate[d] {
            0.0
        } else {
            (x - self.mins[d]) / (self.maxs[d] - self.mins[d] + self.eps)
        }
    }

    pub fn denormalize_value(&self, d: usize, x: f64) -> f64 {
        if self.degenerate[d] {
            self.mins[d]
        } else {
            x * (self.maxs[d] - self.mins[d] + self.eps) + self.mins[d]
        }
    }
}

/// Fit min-max statistics over each feature's observed cells.
pub fn fit_normalization(raw: &RawSeries) -> Result<NormalizationStats> {
    let d = raw.num_features();
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for ((_, j), &v) in raw.values.indexed_iter() {
        if !v.is_nan() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    NormalizationStats::from_min_max(mins, maxs, Some(&raw.feature_names))
}

/// Maps observed cells to [0, 1]; missing cells stay zero; degenerate
/// features map to zero. Delta and timestamps are untouched.
pub fn normalize(window: &TimeSeriesWindow, stats: &NormalizationStats) -> Result<TimeSeriesWindow> {
    if window.num_features() != stats.num_features() {
        return Err(Error::shape(
            "normalize",
            format!("{} features", stats.num_features()),
            format!("{}", window.num_features()),
        ));
    }
    let mut out = window.clone();
    for ((t, d), v) in out.x_bar.indexed_iter_mut() {
        if window.mask.is_observed(t, d) {
            *v = stats.normalize_value(d, *v);
        }
    }
    if let Some(gt) = out.ground_truth.as_mut() {
        for ((t, d), v) in gt.values.indexed_iter_mut() {
            if gt.holdout_mask[[t, d]] == 1.0 {
                *v = stats.normalize_value(d, *v);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`] on observed cells.
pub fn denormalize(window: &TimeSeriesWindow, stats: &NormalizationStats) -> Result<TimeSeriesWindow> {
    if window.num_features() != stats.num_features() {
        return Err(Error::shape(
            "denormalize",
            format!("{} features", stats.num_features()),
            format!("{}", window.num_features()),
        ));
    }
    let mut out = window.clone();
    for ((t, d), v) in out.x_bar.indexed_iter_mut() {
        if window.mask.is_observed(t, d) {
            *v = stats.denormalize_value(d, *v);
        }
    }
    if let Some(gt) = out.ground_truth.as_mut() {
        for ((t, d), v) in gt.values.indexed_iter_mut() {
            if gt.holdout_mask[[t, d]] == 1.0 {
                *v = stats.denormalize_value(d, *v);
            }
        }
    }
    Ok(out)
}

/// Denormalize a complete matrix (e.g. an imputation result) feature-wise.
pub fn denormalize_matrix(values: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    let mut out = values.clone();
    for ((_, d), v) in out.indexed_iter_mut() {
        *v = stats.denormalize_value(d, *v);
    }
    out
}

/// Slices a series into fixed-length windows. A final short remainder is
/// padded with missing rows (mask 0) and flagged. Delta is rebuilt per
/// window, so the lag always restarts at zero on the first row.
pub fn make_windows(raw: &RawSeries, length: usize, stride: usize) -> Result<Vec<TimeSeriesWindow>> {
    if length < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2, got {length}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be positive".into()));
    }
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let t_total = raw.len();
    let d = raw.num_features();
    let mut starts = Vec::new();
    let mut s0 = 0;
    while s0 < t_total {
        starts.push(s0);
        if s0 + length >= t_total {
            break;
        }
        s0 += stride;
    }
    par::map_ordered(&starts, |&start| {
        let end = (start + length).min(t_total);
        let real = end - start;
        let mut values = Array2::from_elem((length, d), f64::NAN);
        values
            .slice_mut(s![..real, ..])
            .assign(&raw.values.slice(s![start..end, ..]));
        let mut timestamps: Vec<f64> = raw.timestamps[start..end].to_vec();
        if real < length {
            // Extend padded timestamps by the window's last real gap.
            let gap = if real >= 2 {
                timestamps[real - 1] - timestamps[real - 2]
            } else {
                1.0
            };
            let mut last = timestamps[real - 1];
            for _ in real..length {
                last += gap;
                timestamps.push(last);
            }
        }
        let mut w = TimeSeriesWindow::from_raw(timestamps, &values)?;
        w.padded = real < length;
        Ok(w)
    })
    .into_iter()
    .collect()
}

/// Moves `⌊ratio × observed⌋` observed cells of one window into evaluation
/// targets: the cells become missing in the returned training window and the
/// lag matrix is rebuilt from the reduced mask. Originally-missing cells are
/// never selected.
pub fn holdout_mask(
    window: &TimeSeriesWindow,
    ratio: f64,
    rng_seed: u64,
) -> Result<(TimeSeriesWindow, HoldoutTargets)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "holdout ratio must be in [0, 1), got {ratio}"
        )));
    }
    let mut observed: Vec<(usize, usize)> = window
        .mask
        .entries
        .indexed_iter()
        .filter(|(_, &m)| m == 1.0)
        .map(|((t, d), _)| (t, d))
        .collect();
    let k = (ratio * observed.len() as f64).floor() as usize;
    let mut rng = seed::rng_for(rng_seed, Stream::Holdout, &[]);
    observed.shuffle(&mut rng);
    let selected = &observed[..k];
    apply_holdout(window, selected)
}

/// Removes the selected observed cells from a window, recording them as
/// ground truth.
fn apply_holdout(
    window: &TimeSeriesWindow,
    cells: &[(usize, usize)],
) -> Result<(TimeSeriesWindow, HoldoutTargets)> {
    let mut train = window.clone();
    let mut gt_values = Array2::zeros(window.x_bar.dim());
    let mut gt_mask = Array2::zeros(window.x_bar.dim());
    let mut targets = Vec::with_capacity(cells.len());
    for &(t, d) in cells {
        debug_assert!(window.mask.is_observed(t, d));
        let value = window.x_bar[[t, d]];
        targets.push(HeldOutCell { t, d, value });
        gt_values[[t, d]] = value;
        gt_mask[[t, d]] = 1.0;
        train.mask.entries[[t, d]] = 0.0;
        train.x_bar[[t, d]] = 0.0;
    }
    let mut targets = HoldoutTargets { cells: targets };
    targets.cells.sort_by_key(|c| (c.t, c.d));
    train.delta = build_delta(&train.timestamps, &train.mask)?;
    train.ground_truth = Some(GroundTruth {
        values: gt_values,
        holdout_mask: gt_mask,
    });
    Ok((train, targets))
}

/// Dataset-level holdout: samples uniformly over the observed cells of all
/// windows at once, so the global held-out fraction is exact.
pub fn holdout_dataset(
    windows: &[TimeSeriesWindow],
    ratio: f64,
    rng_seed: u64,
) -> Result<(Vec<TimeSeriesWindow>, Vec<HoldoutTargets>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "holdout ratio must be in [0, 1), got {ratio}"
        )));
    }
    let mut observed: Vec<(usize, usize, usize)> = Vec::new();
    for (w, window) in windows.iter().enumerate() {
        for ((t, d), &m) in window.mask.entries.indexed_iter() {
            if m == 1.0 {
                observed.push((w, t, d));
            }
        }
    }
    let k = (ratio * observed.len() as f64).floor() as usize;
    let mut rng = seed::rng_for(rng_seed, Stream::Holdout, &[]);
    observed.shuffle(&mut rng);
    let mut per_window: Vec<Vec<(usize, usize)>> = vec![Vec::new(); windows.len()];
    for &(w, t, d) in &observed[..k] {
        per_window[w].push((t, d));
    }
    let results = par::map_indices(windows.len(), |w| apply_holdout(&windows[w], &per_window[w]));
    let mut out_windows = Vec::with_capacity(windows.len());
    let mut out_targets = Vec::with_capacity(windows.len());
    for r in results {
        let (w, t) = r?;
        out_windows.push(w);
        out_targets.push(t);
    }
    Ok((out_windows, out_targets))
}

/// Puts held-out values back, restoring the pre-holdout window bit-exactly.
pub fn restore_holdout(window: &TimeSeriesWindow, targets: &HoldoutTargets) -> Result<TimeSeriesWindow> {
    let mut out = window.clone();
    for cell in &targets.cells {
        out.mask.entries[[cell.t, cell.d]] = 1.0;
        out.x_bar[[cell.t, cell.d]] = cell.value;
    }
    out.delta = build_delta(&out.timestamps, &out.mask)?;
    out.ground_truth = None;
    Ok(out)
}

#[cfg(test)]
mod tests;
