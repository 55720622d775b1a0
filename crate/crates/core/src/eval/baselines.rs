//! Simple imputers used as references: global feature means, previous-value
//! carry-forward, and k-nearest-windows averaging, plus the adapter that
//! exposes the trained model through the same interface.

use crate::data::TimeSeriesWindow;
use crate::error::Result;
use crate::inference::{impute_window, InferenceOptions};
use crate::model::ModelParams;
use ndarray::Array2;

/// Anything that can fill a window's missing cells.
pub trait Imputer: Sync {
    fn name(&self) -> &str;
    /// Returns a complete matrix; `window_id` keys any per-window
    /// randomness.
    fn impute_window(&self, window: &TimeSeriesWindow, window_id: u64) -> Result<Array2<f64>>;
}

/// Per-feature means over the observed cells of a window set.
pub fn feature_means(windows: &[TimeSeriesWindow]) -> Vec<f64> {
    let d = windows.first().map_or(0, |w| w.num_features());
    let mut sums = vec![0.0; d];
    let mut counts = vec![0usize; d];
    for w in windows {
        for ((t, j), &v) in w.x_bar.indexed_iter() {
            if w.mask.entries[[t, j]] == 1.0 {
                sums[j] += v;
                counts[j] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Fills every missing cell with the feature's observed training mean.
pub struct MeanImputer {
    pub means: Vec<f64>,
}

impl MeanImputer {
    pub fn fit(windows: &[TimeSeriesWindow]) -> Self {
        MeanImputer {
            means: feature_means(windows),
        }
    }
}

impl Imputer for MeanImputer {
    fn name(&self) -> &str {
        "mean"
    }

    fn impute_window(&self, window: &TimeSeriesWindow, _id: u64) -> Result<Array2<f64>> {
        let mut out = window.x_bar.clone();
        for ((t, d), v) in out.indexed_iter_mut() {
            if !window.mask.is_observed(t, d) {
                *v = self.means[d];
            }
        }
        Ok(out)
    }
}

/// Carries the last observation forward per feature; a gap before the first
/// observation falls back to the feature mean.
pub struct PrevImputer {
    pub means: Vec<f64>,
}

impl PrevImputer {
    pub fn fit(windows: &[TimeSeriesWindow]) -> Self {
        PrevImputer {
            means: feature_means(windows),
        }
    }
}

impl Imputer for PrevImputer {
    fn name(&self) -> &str {
        "prev"
    }

    fn impute_window(&self, window: &TimeSeriesWindow, _id: u64) -> Result<Array2<f64>> {
        let mut out = window.x_bar.clone();
        for d in 0..window.num_features() {
            let mut last: Option<f64> = None;
            for t in 0..window.len() {
                if window.mask.is_observed(t, d) {
                    last = Some(window.x_bar[[t, d]]);
                } else {
                    out[[t, d]] = last.unwrap_or(self.means[d]);
                }
            }
        }
        Ok(out)
    }
}

/// Averages the values of the k nearest windows (masked Euclidean distance
/// over co-observed cells, normalized by the overlap count) at each missing
/// cell. Cells with no donor among the neighbors fall back to the mean.
pub struct KnnImputer {
    pub train: Vec<TimeSeriesWindow>,
    pub k: usize,
    pub means: Vec<f64>,
}

impl KnnImputer {
    pub fn fit(windows: &[TimeSeriesWindow], k: usize) -> Self {
        KnnImputer {
            train: windows.to_vec(),
            k,
            means: feature_means(windows),
        }
    }

    fn distance(a: &TimeSeriesWindow, b: &TimeSeriesWindow) -> Option<f64> {
        let mut overlap = 0usize;
        let mut acc = 0.0;
        for ((idx, &va), &vb) in a.x_bar.indexed_iter().zip(b.x_bar.iter()) {
            if a.mask.entries[idx] == 1.0 && b.mask.entries[idx] == 1.0 {
                overlap += 1;
                let diff = va - vb;
                acc += diff * diff;
            }
        }
        (overlap > 0).then(|| acc / overlap as f64)
    }
}

impl Imputer for KnnImputer {
    fn name(&self) -> &str {
        "knn"
    }

    fn impute_window(&self, window: &TimeSeriesWindow, _id: u64) -> Result<Array2<f64>> {
        // Rank candidates by overlap-normalized distance; skip the window
        // itself when it is part of the training set.
        let mut ranked: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                !(c.x_bar == window.x_bar && c.mask == window.mask)
            })
            .filter_map(|(i, c)| Self::distance(window, c).map(|d| (d, i)))
            .collect();
        ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        ranked.truncate(self.k);

        let mut out = window.x_bar.clone();
        for ((t, d), v) in out.indexed_iter_mut() {
            if window.mask.is_observed(t, d) {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for &(_, i) in &ranked {
                let donor = &self.train[i];
                if donor.mask.is_observed(t, d) {
                    sum += donor.x_bar[[t, d]];
                    count += 1;
                }
            }
            *v = if count > 0 {
                sum / count as f64
            } else {
                self.means[d]
            };
        }
        Ok(out)
    }
}

/// The trained adversarial model behind the [`Imputer`] interface.
pub struct ModelImputer<'a> {
    pub model: &'a ModelParams,
    pub opts: InferenceOptions,
    pub root_seed: u64,
}

impl Imputer for ModelImputer<'_> {
    fn name(&self) -> &str {
        "gan"
    }

    fn impute_window(&self, window: &TimeSeriesWindow, window_id: u64) -> Result<Array2<f64>> {
        let result = impute_window(window, self.model, &self.opts, self.root_seed, window_id)?;
        Ok(result.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn window_from(values: Array2<f64>) -> TimeSeriesWindow {
        let t = values.nrows();
        TimeSeriesWindow::from_raw((0..t).map(|x| x as f64).collect(), &values).unwrap()
    }

    #[test]
    fn prev_carries_forward_and_falls_back_to_mean() {
        let window = window_from(array![[1.0], [f64::NAN], [f64::NAN], [4.0]]);
        let imputer = PrevImputer::fit(std::slice::from_ref(&window));
        let out = imputer.impute_window(&window, 0).unwrap();
        assert_eq!(out, array![[1.0], [1.0], [1.0], [4.0]]);

        // Leading gap: no previous observation, use the feature mean.
        let leading = window_from(array![[f64::NAN], [2.0], [4.0]]);
        let imputer = PrevImputer::fit(std::slice::from_ref(&leading));
        let out = imputer.impute_window(&leading, 0).unwrap();
        assert_eq!(out[[0, 0]], 3.0);
    }

    #[test]
    fn prev_is_idempotent() {
        let window = window_from(array![[1.0, f64::NAN], [f64::NAN, 2.0], [3.0, f64::NAN]]);
        let imputer = PrevImputer::fit(std::slice::from_ref(&window));
        let once = imputer.impute_window(&window, 0).unwrap();
        // Re-wrap the complete output as a fully observed window.
        let complete = window_from(once.clone());
        let twice = imputer.impute_window(&complete, 0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mean_fills_with_training_mean() {
        let a = window_from(array![[2.0], [f64::NAN]]);
        let b = window_from(array![[4.0], [f64::NAN]]);
        let imputer = MeanImputer::fit(&[a.clone(), b]);
        let out = imputer.impute_window(&a, 0).unwrap();
        assert_eq!(out[[1, 0]], 3.0);
    }

    #[test]
    fn knn_uses_the_exact_duplicate() {
        // Query has gaps; the training set contains a complete duplicate of
        // its observed pattern and one distant window.
        let query = window_from(array![[1.0, f64::NAN], [2.0, f64::NAN]]);
        let duplicate = window_from(array![[1.0, 5.0], [2.0, 6.0]]);
        let far = window_from(array![[9.0, 0.0], [9.0, 0.0]]);
        let imputer = KnnImputer::fit(&[query.clone(), duplicate, far], 1);
        let out = imputer.impute_window(&query, 0).unwrap();
        assert_eq!(out[[0, 1]], 5.0);
        assert_eq!(out[[1, 1]], 6.0);
    }

    #[test]
    fn knn_falls_back_to_mean_without_donors() {
        let query = window_from(array![[1.0, f64::NAN], [2.0, f64::NAN]]);
        // The only neighbor also misses the second feature.
        let neighbor = window_from(array![[1.0, f64::NAN], [2.0, f64::NAN]]);
        let other = window_from(array![[1.5, 7.0], [1.5, f64::NAN]]);
        let imputer = KnnImputer::fit(&[neighbor, other], 5);
        let out = imputer.impute_window(&query, 0).unwrap();
        // Donor exists at (0,1) via `other`, none at (1,1) → mean of observed
        // second-feature values (only 7.0).
        assert_eq!(out[[0, 1]], 7.0);
        assert_eq!(out[[1, 1]], 7.0);
    }

    #[test]
    fn knn_distance_normalizes_by_overlap() {
        // One candidate overlaps on 2 cells with total squared diff 2,
        // another overlaps on 1 cell with squared diff 0.5: the second is
        // nearer per-overlap (0.5 < 1.0).
        let query = window_from(array![[1.0, 1.0], [f64::NAN, f64::NAN]]);
        let wide = window_from(array![[2.0, 0.0], [3.0, 3.0]]);
        let narrow = window_from(array![[1.707107, f64::NAN], [8.0, 8.0]]);
        let d_wide = KnnImputer::distance(&query, &wide).unwrap();
        let d_narrow = KnnImputer::distance(&query, &narrow).unwrap();
        assert!((d_wide - 1.0).abs() < 1e-9);
        assert!(d_narrow < d_wide);
    }
}
