//! Interval arithmetic on scalars, vectors and matrices, plus Hausdorff
//! distances under the infinity norm.
//!
//! Endpoints are plain `f64` with round-to-nearest; no outward rounding is
//! performed. Degenerate intervals (`lo == hi`) stand for singletons.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::param("interval", format!("[{lo}, {hi}] has a non-finite endpoint")));
        }
        if lo > hi {
            return Err(Error::IntervalInversion { location: "interval".into(), lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `alpha [a, b] = [alpha a, alpha b]`, defined for `alpha >= 0` only.
    pub fn scale(self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::param("alpha", format!("scaling factor {alpha} must be finite and >= 0")));
        }
        Ok(Self { lo: alpha * self.lo, hi: alpha * self.hi })
    }

    pub fn add(self, other: Self) -> Self {
        Self { lo: self.lo + other.lo, hi: self.hi + other.hi }
    }

    /// Smallest interval containing `{min(x, y) : x in self, y in other}`.
    pub fn min(self, other: Self) -> Self {
        Self { lo: self.lo.min(other.lo), hi: self.hi.min(other.hi) }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

pub fn interval_scale(alpha: f64, x: Interval) -> Result<Interval> {
    x.scale(alpha)
}

pub fn interval_add(x: Interval, y: Interval) -> Interval {
    x.add(y)
}

pub fn interval_min(x: Interval, y: Interval) -> Interval {
    x.min(y)
}

/// Axis-aligned box `[lo, hi]` in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVector {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl IntervalVector {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dims("interval vector upper endpoint", lo.len(), hi.len()));
        }
        for i in 0..lo.len() {
            if !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(Error::param("interval vector", format!("entry {i} is not finite")));
            }
            if lo[i] > hi[i] {
                return Err(Error::IntervalInversion { location: format!("entry {i}"), lo: lo[i], hi: hi[i] });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lo), DVector::from_column_slice(hi))
    }

    /// Degenerate box `{v}`.
    pub fn point(v: DVector<f64>) -> Self {
        Self { lo: v.clone(), hi: v }
    }

    pub(crate) fn from_endpoints_unchecked(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        debug_assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a <= b));
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn get(&self, i: usize) -> Interval {
        Interval { lo: self.lo[i], hi: self.hi[i] }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// `v` lies in the box enlarged by `tol` on every side.
    pub fn contains_point(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.len() && (0..self.len()).all(|i| self.lo[i] - tol <= v[i] && v[i] <= self.hi[i] + tol)
    }

    /// Componentwise interval containment `self ⊆ other`.
    pub fn is_subset_of(&self, other: &IntervalVector, tol: f64) -> bool {
        self.len() == other.len()
            && (0..self.len()).all(|i| other.lo[i] - tol <= self.lo[i] && self.hi[i] <= other.hi[i] + tol)
    }
}

/// Box of `m x n` matrices, e.g. a cost set `[C_lo, C_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    lo: DMatrix<f64>,
    hi: DMatrix<f64>,
}

impl IntervalMatrix {
    pub fn new(lo: DMatrix<f64>, hi: DMatrix<f64>) -> Result<Self> {
        if lo.shape() != hi.shape() {
            return Err(Error::dims(
                "interval matrix upper endpoint",
                format!("{}x{}", lo.nrows(), lo.ncols()),
                format!("{}x{}", hi.nrows(), hi.ncols()),
            ));
        }
        for r in 0..lo.nrows() {
            for c in 0..lo.ncols() {
                let (a, b) = (lo[(r, c)], hi[(r, c)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::param("interval matrix", format!("entry ({r}, {c}) is not finite")));
                }
                if a > b {
                    return Err(Error::IntervalInversion { location: format!("entry ({r}, {c})"), lo: a, hi: b });
                }
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn point(m: DMatrix<f64>) -> Self {
        Self { lo: m.clone(), hi: m }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.lo.shape()
    }

    pub fn lo(&self) -> &DMatrix<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DMatrix<f64> {
        &self.hi
    }

    pub fn get(&self, r: usize, c: usize) -> Interval {
        Interval { lo: self.lo[(r, c)], hi: self.hi[(r, c)] }
    }

    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        m.shape() == self.shape()
            && m.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (a, b))| a - tol <= *x && *x <= b + tol)
    }
}

/// Non-empty finite set of points in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<DVector<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySet)?;
        let n = first.len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::dims("point set member", n, p.len()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Drops points within `tol` (infinity norm) of an earlier point.
    pub fn deduplicated(&self, tol: f64) -> PointSet {
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for p in &self.points {
            if !kept.iter().any(|q| crate::mdp::sup_distance(p, q) <= tol) {
                kept.push(p.clone());
            }
        }
        PointSet { points: kept }
    }
}

fn check_same_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dims(what, a, b));
    }
    Ok(())
}

/// Hausdorff distance between two boxes:
/// `max(||x.lo - y.lo||_inf, ||x.hi - y.hi||_inf)`.
pub fn hausdorff_interval(x: &IntervalVector, y: &IntervalVector) -> Result<f64> {
    check_same_len("hausdorff_interval", x.len(), y.len())?;
    Ok(crate::mdp::sup_distance(&x.lo, &y.lo).max(crate::mdp::sup_distance(&x.hi, &y.hi)))
}

/// Exact Hausdorff distance between finite point sets under the infinity norm.
pub fn hausdorff_point_set(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    check_same_len("hausdorff_point_set", a.dim(), b.dim())?;
    let directed = |from: &PointSet, to: &PointSet| {
        from.points
            .par_iter()
            .map(|p| {
                let p = p.as_slice();
                let mut best = f64::INFINITY;
                for q in &to.points {
                    let mut d: f64 = 0.0;
                    for (x, y) in p.iter().zip(q.as_slice()) {
                        d = d.max((x - y).abs());
                        if d >= best {
                            break;
                        }
                    }
                    best = best.min(d);
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// `inf_{w in x} ||v - w||_inf`; zero when `v` is inside the box.
pub fn point_to_box_distance(v: &DVector<f64>, x: &IntervalVector) -> Result<f64> {
    check_same_len("point_to_box_distance", x.len(), v.len())?;
    Ok((0..v.len())
        .map(|i| (x.lo[i] - v[i]).max(v[i] - x.hi[i]).max(0.0))
        .fold(0.0, f64::max))
}
