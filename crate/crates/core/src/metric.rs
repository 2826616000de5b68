//! Finite labeled metric spaces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used in boolean distance comparisons.
pub const DIST_TOL: f64 = 1e-12;

/// How pairwise distances are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
    /// 0 on the diagonal, 1 elsewhere.
    Discrete,
    /// Explicit table.
    Table,
}

/// A finite set of labeled points with a pairwise distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMetricSpace {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
    dist: Vec<f64>,
    coords: Option<Vec<Vec<i64>>>,
    metric: Metric,
}

impl LabeledMetricSpace {
    /// Discrete metric over the given labels.
    pub fn discrete<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        let mut dist = vec![1.0; n * n];
        for i in 0..n {
            dist[i * n + i] = 0.0;
        }
        // Always a metric, so skip the cubic triangle check.
        let mut space = Self::from_trusted_table(labels, dist)?;
        space.metric = Metric::Discrete;
        Ok(space)
    }

    /// Distances derived from integer coordinates under `L1` or `L2`.
    pub fn from_coords<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        coords: Vec<Vec<i64>>,
        metric: Metric,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if coords.len() != labels.len() {
            return Err(Error::InvalidMetric(format!(
                "{} labels but {} coordinate vectors",
                labels.len(),
                coords.len()
            )));
        }
        if let Some(first) = coords.first() {
            if coords.iter().any(|c| c.len() != first.len()) {
                return Err(Error::InvalidMetric("coordinate dimensions differ".into()));
            }
        }
        let n = labels.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = coord_distance(&coords[i], &coords[j], metric)?;
            }
        }
        Self::build(labels, dist, Some(coords), metric)
    }

    /// Explicit row-major distance table; validated as a metric.
    pub fn from_table<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        if table.len() != n || table.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMetric(format!("distance table must be {n}x{n}")));
        }
        let dist = table.into_iter().flatten().collect();
        Self::build(labels, dist, None, Metric::Table)
    }

    /// Points on the real line at the given positions (labels are the values).
    pub fn real_line(values: &[f64]) -> Result<Self> {
        let labels: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
        let n = values.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = (values[i] - values[j]).abs();
            }
        }
        Self::build(labels, dist, None, Metric::Table)
    }

    /// Distance table computed by construction from a known metric
    /// (Hausdorff, sums, sup-norms); skips the cubic triangle check.
    pub(crate) fn from_trusted_table(labels: Vec<String>, dist: Vec<f64>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidMetric(format!("duplicate label `{l}`")));
            }
        }
        debug_assert_eq!(dist.len(), labels.len() * labels.len());
        Ok(LabeledMetricSpace {
            labels,
            index,
            dist,
            coords: None,
            metric: Metric::Table,
        })
    }

    fn build(
        labels: Vec<String>,
        dist: Vec<f64>,
        coords: Option<Vec<Vec<i64>>>,
        metric: Metric,
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidMetric(format!("duplicate label `{l}`")));
            }
        }
        let space = LabeledMetricSpace {
            labels,
            index,
            dist,
            coords,
            metric,
        };
        space.validate()?;
        Ok(space)
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.d(i, i) != 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "distance({0},{0}) is not zero",
                    self.labels[i]
                )));
            }
            for j in 0..n {
                let dij = self.d(i, j);
                if !dij.is_finite() || dij < 0.0 {
                    return Err(Error::InvalidMetric(format!(
                        "distance({},{}) must be finite and nonnegative",
                        self.labels[i], self.labels[j]
                    )));
                }
                if (dij - self.d(j, i)).abs() > DIST_TOL {
                    return Err(Error::InvalidMetric(format!(
                        "distance({},{}) is not symmetric",
                        self.labels[i], self.labels[j]
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.d(i, k) > self.d(i, j) + self.d(j, k) + DIST_TOL {
                        return Err(Error::InvalidMetric(format!(
                            "triangle inequality fails for ({},{},{})",
                            self.labels[i], self.labels[j], self.labels[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn coords(&self) -> Option<&[Vec<i64>]> {
        self.coords.as_deref()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Distance between points `i` and `j`.
    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.labels.len() + j]
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    pub fn distance_rows(&self) -> Vec<Vec<f64>> {
        self.dist.chunks(self.len().max(1)).map(<[f64]>::to_vec).collect()
    }
}

fn coord_distance(a: &[i64], b: &[i64], metric: Metric) -> Result<f64> {
    match metric {
        Metric::L1 => Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum()),
        Metric::L2 => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()),
        Metric::Discrete => Ok(if a == b { 0.0 } else { 1.0 }),
        Metric::Table => Err(Error::InvalidMetric(
            "table metric cannot be derived from coordinates".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_coordinates() {
        let s = LabeledMetricSpace::from_coords(["o", "p"], vec![vec![0, 0], vec![3, 4]], Metric::L2)
            .unwrap();
        assert_eq!(s.d(0, 1), 5.0);
        assert_eq!(s.d(1, 0), 5.0);
    }

    #[test]
    fn rejects_asymmetric_table() {
        let err = LabeledMetricSpace::from_table(["a", "b"], vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(err, Err(Error::InvalidMetric(_))));
    }

    #[test]
    fn rejects_triangle_violation() {
        let t = vec![
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ];
        assert!(LabeledMetricSpace::from_table(["a", "b", "c"], t).is_err());
    }

    #[test]
    fn rejects_duplicate_labels() {
        assert!(LabeledMetricSpace::discrete(["a", "a"]).is_err());
    }
}
