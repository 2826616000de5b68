//! Ranges of uncertain variables, cost distributions and the Hausdorff
//! pseudo-metric over finite sets.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::extreal::ExtReal;
use crate::metric::{LabeledMetricSpace, DIST_TOL};

/// Hausdorff distance between two finite nonempty sets under `dist`.
pub fn hausdorff_by<A, B>(a: &[A], b: &[B], dist: impl Fn(&A, &B) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRange);
    }
    let forward = a
        .iter()
        .map(|x| b.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let backward = b
        .iter()
        .map(|y| a.iter().map(|x| dist(x, y)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    Ok(forward.max(backward))
}

fn same_space(a: &Arc<LabeledMetricSpace>, b: &Arc<LabeledMetricSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Set of feasible realizations of an uncertain variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Range {
    space: Arc<LabeledMetricSpace>,
    members: BTreeSet<usize>,
}

impl Range {
    pub fn new(space: Arc<LabeledMetricSpace>, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let members: BTreeSet<usize> = members.into_iter().collect();
        if let Some(&m) = members.iter().find(|&&m| m >= space.len()) {
            return Err(Error::UnknownLabel {
                label: format!("#{m}"),
                context: "range".into(),
            });
        }
        Ok(Range { space, members })
    }

    pub fn from_labels(space: Arc<LabeledMetricSpace>, labels: &[&str]) -> Result<Self> {
        let members = labels
            .iter()
            .map(|l| {
                space.index_of(l).ok_or_else(|| Error::UnknownLabel {
                    label: l.to_string(),
                    context: "range".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Range::new(space, members)
    }

    /// The empty range, representing infeasibility.
    pub fn empty(space: Arc<LabeledMetricSpace>) -> Self {
        Range {
            space,
            members: BTreeSet::new(),
        }
    }

    pub fn space(&self) -> &Arc<LabeledMetricSpace> {
        &self.space
    }

    pub fn members(&self) -> &BTreeSet<usize> {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.contains(&x)
    }

    pub fn hausdorff(&self, other: &Range) -> Result<f64> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch("ranges over different spaces".into()));
        }
        let a: Vec<usize> = self.members.iter().copied().collect();
        let b: Vec<usize> = other.members.iter().copied().collect();
        hausdorff_by(&a, &b, |&x, &y| self.space.d(x, y))
    }

    /// `0` if `x` is feasible, `-inf` otherwise.
    pub fn indicator(&self, x: usize) -> ExtReal {
        if self.contains(x) {
            ExtReal::ZERO
        } else {
            ExtReal::NegInf
        }
    }
}

/// Set of feasible joint realizations; tuple distance is the sum of
/// component distances.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRange {
    spaces: Vec<Arc<LabeledMetricSpace>>,
    members: BTreeSet<Vec<usize>>,
}

impl JointRange {
    pub fn new(
        spaces: Vec<Arc<LabeledMetricSpace>>,
        members: impl IntoIterator<Item = Vec<usize>>,
    ) -> Result<Self> {
        let members: BTreeSet<Vec<usize>> = members.into_iter().collect();
        for tuple in &members {
            if tuple.len() != spaces.len() {
                return Err(Error::SpaceMismatch(format!(
                    "tuple of arity {} in a {}-component range",
                    tuple.len(),
                    spaces.len()
                )));
            }
            for (c, &x) in tuple.iter().enumerate() {
                if x >= spaces[c].len() {
                    return Err(Error::UnknownLabel {
                        label: format!("#{x}"),
                        context: format!("component {c} of joint range"),
                    });
                }
            }
        }
        Ok(JointRange { spaces, members })
    }

    pub fn spaces(&self) -> &[Arc<LabeledMetricSpace>] {
        &self.spaces
    }

    pub fn members(&self) -> &BTreeSet<Vec<usize>> {
        &self.members
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, tuple: &[usize]) -> bool {
        self.members.contains(tuple)
    }

    pub fn indicator(&self, tuple: &[usize]) -> ExtReal {
        if self.contains(tuple) {
            ExtReal::ZERO
        } else {
            ExtReal::NegInf
        }
    }

    pub fn tuple_distance(&self, a: &[usize], b: &[usize]) -> f64 {
        self.spaces
            .iter()
            .zip(a.iter().zip(b))
            .map(|(s, (&x, &y))| s.d(x, y))
            .sum()
    }

    pub fn hausdorff(&self, other: &JointRange) -> Result<f64> {
        if self.spaces.len() != other.spaces.len()
            || !self
                .spaces
                .iter()
                .zip(&other.spaces)
                .all(|(a, b)| same_space(a, b))
        {
            return Err(Error::SpaceMismatch("joint ranges over different spaces".into()));
        }
        let a: Vec<&Vec<usize>> = self.members.iter().collect();
        let b: Vec<&Vec<usize>> = other.members.iter().collect();
        hausdorff_by(&a, &b, |x, y| self.tuple_distance(x, y))
    }

    /// Projection onto a single component.
    pub fn project(&self, component: usize) -> Range {
        Range {
            space: self.spaces[component].clone(),
            members: self.members.iter().map(|t| t[component]).collect(),
        }
    }

    /// Conditional range given fixed values for some components: the
    /// projection of matching tuples onto the free components. An empty
    /// result signals infeasible conditioning.
    pub fn conditional(&self, given: &[Option<usize>]) -> Result<JointRange> {
        if given.len() != self.spaces.len() {
            return Err(Error::SpaceMismatch("conditioning pattern has wrong arity".into()));
        }
        let free: Vec<usize> = (0..given.len()).filter(|&i| given[i].is_none()).collect();
        let members = self
            .members
            .iter()
            .filter(|t| given.iter().zip(t.iter()).all(|(g, x)| g.is_none_or(|g| g == *x)))
            .map(|t| free.iter().map(|&i| t[i]).collect())
            .collect();
        Ok(JointRange {
            spaces: free.iter().map(|&i| self.spaces[i].clone()).collect(),
            members,
        })
    }

    /// `[[X,Y]] = [[X]] x [[Y]]` for two components.
    pub fn is_independent(&self) -> bool {
        let projections: Vec<Range> = (0..self.spaces.len()).map(|c| self.project(c)).collect();
        let product: usize = projections.iter().map(|r| r.members.len()).product();
        product == self.members.len()
    }

    /// Single-component joint range viewed as a plain range.
    pub fn into_range(self) -> Result<Range> {
        if self.spaces.len() != 1 {
            return Err(Error::SpaceMismatch(format!(
                "expected one free component, found {}",
                self.spaces.len()
            )));
        }
        Ok(self.project(0))
    }
}

/// Sup-normalized cost distribution over a finite support; keys outside the
/// support carry `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDistribution<K: Ord> {
    values: BTreeMap<K, f64>,
    a_max: f64,
}

impl<K: Ord + Clone> CostDistribution<K> {
    /// Validates `max = 0` and values in `[-a_max, 0]`.
    pub fn new(values: BTreeMap<K, f64>, a_max: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InfeasibleConditioning);
        }
        let sup = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
        if sup.abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("cost distribution has sup {sup}, expected 0")));
        }
        if values.values().any(|&v| v < -a_max - 1e-9 || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cost distribution values must lie in [-{a_max}, 0]"
            )));
        }
        Ok(CostDistribution { values, a_max })
    }

    /// Normalizes arbitrary finite weights by subtracting their supremum.
    pub fn normalized(values: BTreeMap<K, f64>, a_max: f64) -> Result<Self> {
        let sup = values.values().copied().fold(f64::NEG_INFINITY, f64::max);
        if !sup.is_finite() {
            return Err(Error::InfeasibleConditioning);
        }
        let values = values.into_iter().map(|(k, v)| (k, v - sup)).collect();
        CostDistribution::new(values, a_max)
    }

    pub fn value(&self, key: &K) -> ExtReal {
        self.values.get(key).map_or(ExtReal::NegInf, |&v| ExtReal::Finite(v))
    }

    pub fn support(&self) -> impl Iterator<Item = &K> {
        self.values.keys()
    }

    pub fn entries(&self) -> &BTreeMap<K, f64> {
        &self.values
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn sup(&self) -> f64 {
        self.values.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl<X: Ord + Clone, Y: Ord + Clone> CostDistribution<(X, Y)> {
    /// `q(x|y) = q(x,y) - q(y)` with `q(y) = max_x q(x,y)`.
    pub fn condition_on_second(&self, y: &Y) -> Result<CostDistribution<X>> {
        let slice: BTreeMap<X, f64> = self
            .values
            .iter()
            .filter(|((_, yy), _)| yy == y)
            .map(|((x, _), &v)| (x.clone(), v))
            .collect();
        if slice.is_empty() {
            return Err(Error::InfeasibleConditioning);
        }
        CostDistribution::normalized(slice, self.a_max)
    }
}

/// Outcome of checking `|sup_a f - sup_b f| <= L_f * H(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzGap {
    pub gap: f64,
    pub bound: f64,
    pub lipschitz: f64,
    pub holds: bool,
}

/// Largest difference quotient of `f`; infinite when `f` separates two
/// points at distance zero.
pub fn lipschitz_constant(space: &LabeledMetricSpace, f: &[f64]) -> f64 {
    let n = space.len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = space.d(i, j);
            let df = (f[i] - f[j]).abs();
            if d > 0.0 {
                best = best.max(df / d);
            } else if df > DIST_TOL {
                return f64::INFINITY;
            }
        }
    }
    best
}

pub fn verify_lipschitz_sup_gap(
    f: &[f64],
    lipschitz: Option<f64>,
    a: &Range,
    b: &Range,
) -> Result<LipschitzGap> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRange);
    }
    if f.len() != a.space().len() {
        return Err(Error::SpaceMismatch("function length differs from space size".into()));
    }
    let lipschitz = lipschitz.unwrap_or_else(|| lipschitz_constant(a.space(), f));
    let sup = |r: &Range| r.members().iter().map(|&i| f[i]).fold(f64::NEG_INFINITY, f64::max);
    let gap = (sup(a) - sup(b)).abs();
    let h = a.hausdorff(b)?;
    let bound = if h == 0.0 && lipschitz.is_infinite() { f64::INFINITY } else { lipschitz * h };
    Ok(LipschitzGap {
        gap,
        bound,
        lipschitz,
        holds: gap <= bound + DIST_TOL,
    })
}
