//! Limit-shape estimation.
//!
//! Activation balls are embedded in `R^D` through the torsion quotient and
//! rescaled by `1/n`. Convergence is measured by Hausdorff distances between
//! rescaled balls at different times, and against a homogeneous model of
//! the time constant `φ` fitted on independent realizations.

use std::fmt;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frog::{activation_times, run, ActivationRecord, FrogLattice};
use crate::group::{CayleyGraph, GroupElement, MAX_COORDS};
use crate::rng::replicate_seed;
use crate::stats::{linear_fit, mean_estimate};
use crate::walk::Time;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    #[default]
    L2,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
        })
    }
}

/// A finite set of points in `R^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 && !coords.is_empty() || dim > 0 && !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!("{} coordinates do not form points of dimension {dim}", coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch(dim, p.len()));
        }
        Self::new(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn map(&self, f: impl Fn(&[f64], &mut [f64])) -> PointCloud {
        let mut coords = vec![0.0; self.coords.len()];
        for (p, q) in self.points().zip(coords.chunks_exact_mut(self.dim.max(1))) {
            f(p, q);
        }
        PointCloud { dim: self.dim, coords }
    }
}

/// Embeds `points` in `R^D` through the torsion quotient and scales by `t`.
/// Elements with the same free part collapse to one point.
pub fn rescale(points: &[GroupElement], t: f64) -> PointCloud {
    let Some(first) = points.first() else {
        return PointCloud { dim: 0, coords: Vec::new() };
    };
    let dim = first.rank();
    let mut coords = Vec::with_capacity(points.len() * dim);
    if first.num_coords() > dim {
        let mut free: Vec<&[i32]> = points.iter().map(GroupElement::free_part).collect();
        free.sort_unstable();
        free.dedup();
        for p in free {
            coords.extend(p.iter().map(|&c| c as f64 * t));
        }
    } else {
        for x in points {
            coords.extend(x.free_part().iter().map(|&c| c as f64 * t));
        }
    }
    PointCloud { dim, coords }
}

type CellKey = [i32; MAX_COORDS];

/// Uniform bucket grid over a cloud for exact nearest-neighbour queries.
struct Grid<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    inv_cell: f64,
    order: Vec<u32>,
    cells: FxHashMap<CellKey, (u32, u32)>,
}

impl<'a> Grid<'a> {
    fn new(cloud: &'a PointCloud) -> Self {
        let dim = cloud.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in cloud.points() {
            for k in 0..dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let n = cloud.len() as f64;
        let mut cell = extent / n.powf(1.0 / dim as f64).max(1.0);
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let inv_cell = 1.0 / cell;
        let mut keyed: Vec<(CellKey, u32)> = cloud
            .points()
            .enumerate()
            .map(|(i, p)| (Self::key(p, inv_cell), i as u32))
            .collect();
        keyed.sort_unstable();
        let mut cells = FxHashMap::default();
        let mut start = 0;
        for i in 1..=keyed.len() {
            if i == keyed.len() || keyed[i].0 != keyed[start].0 {
                cells.insert(keyed[start].0, (start as u32, i as u32));
                start = i;
            }
        }
        Self { cloud, cell, inv_cell, order: keyed.into_iter().map(|(_, i)| i).collect(), cells }
    }

    #[inline]
    fn key(p: &[f64], inv_cell: f64) -> CellKey {
        let mut k = [0i32; MAX_COORDS];
        for (i, &c) in p.iter().enumerate() {
            k[i] = (c * inv_cell).floor() as i32;
        }
        k
    }

    #[inline]
    fn scan(&self, key: &CellKey, q: &[f64], metric: Metric, best: &mut f64) {
        if let Some(&(a, b)) = self.cells.get(key) {
            for &i in &self.order[a as usize..b as usize] {
                let d = metric.distance(q, self.cloud.point(i as usize));
                if d < *best {
                    *best = d;
                }
            }
        }
    }

    /// Distance from `q` to the cloud. Returns early with some value
    /// `<= good_enough` as soon as one is found.
    fn nearest(&self, q: &[f64], metric: Metric, good_enough: f64) -> f64 {
        let dim = self.cloud.dim;
        let center = Self::key(q, self.inv_cell);
        let mut best = f64::INFINITY;
        let mut offset = [0i32; MAX_COORDS];
        for ring in 0i32.. {
            let shell_cells = (2.0 * ring as f64 + 1.0).powi(dim as i32) - (2.0 * ring as f64 - 1.0).max(0.0).powi(dim as i32);
            if shell_cells > 4.0 * self.cells.len() as f64 + 16.0 {
                for p in self.cloud.points() {
                    best = best.min(metric.distance(q, p));
                }
                return best;
            }
            // Odometer over the first dim-1 offsets; the last offset is free only
            // when an earlier one already sits on the ring.
            offset[..dim].fill(-ring);
            loop {
                let on_ring = offset[..dim - 1].iter().any(|o| o.abs() == ring);
                let mut key = center;
                for k in 0..dim - 1 {
                    key[k] = center[k].saturating_add(offset[k]);
                }
                if on_ring {
                    for last in -ring..=ring {
                        key[dim - 1] = center[dim - 1].saturating_add(last);
                        self.scan(&key, q, metric, &mut best);
                    }
                } else {
                    key[dim - 1] = center[dim - 1].saturating_add(-ring);
                    self.scan(&key, q, metric, &mut best);
                    if ring > 0 {
                        key[dim - 1] = center[dim - 1].saturating_add(ring);
                        self.scan(&key, q, metric, &mut best);
                    }
                }
                let mut k = 0;
                while k + 1 < dim {
                    offset[k] += 1;
                    if offset[k] <= ring {
                        break;
                    }
                    offset[k] = -ring;
                    k += 1;
                }
                if k + 1 >= dim {
                    break;
                }
            }
            if best <= good_enough {
                return best;
            }
            // Every point beyond this ring is at least `ring` cells away in some coordinate.
            if best <= ring as f64 * self.cell * (1.0 - 1e-9) {
                return best;
            }
        }
        unreachable!()
    }
}

fn directed(from: &PointCloud, to: &Grid<'_>, metric: Metric) -> f64 {
    from.coords
        .par_chunks(from.dim * 4096)
        .map(|chunk| {
            let mut worst = 0.0f64;
            for p in chunk.chunks_exact(from.dim) {
                let d = to.nearest(p, metric, worst);
                if d > worst {
                    worst = d;
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

fn check_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(a.dim, b.dim));
    }
    Ok(())
}

/// Directed Hausdorff distance `sup_{a∈A} inf_{b∈B} |a - b|`.
pub fn directed_hausdorff(a: &PointCloud, b: &PointCloud, metric: Metric) -> Result<f64> {
    check_pair(a, b)?;
    Ok(directed(a, &Grid::new(b), metric))
}

/// Exact Hausdorff distance under the chosen norm.
pub fn hausdorff_distance(a: &PointCloud, b: &PointCloud, metric: Metric) -> Result<f64> {
    check_pair(a, b)?;
    Ok(directed(a, &Grid::new(b), metric).max(directed(b, &Grid::new(a), metric)))
}

/// `d_H` between consecutive rescaled activation balls of one realization, for every pair `n < m` of the grid.
pub fn hausdorff_series(record: &ActivationRecord, n_grid: &[u32], metric: Metric) -> Result<Vec<(u32, u32, f64)>> {
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidParameter(format!("cannot rescale the ball at time {n}")));
    }
    let clouds: Vec<PointCloud> = n_grid
        .iter()
        .map(|&n| Ok(rescale(&record.activation_ball(n)?, 1.0 / n as f64)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..n_grid.len() {
        for j in i + 1..n_grid.len() {
            out.push((n_grid[i], n_grid[j], hausdorff_distance(&clouds[i], &clouds[j], metric)?));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffPoint {
    pub n: u32,
    pub m: u32,
    pub mean: f64,
    pub stderr: f64,
    pub samples: Vec<f64>,
}

fn aggregate_series(series: Vec<Vec<(u32, u32, f64)>>) -> Vec<HausdorffPoint> {
    let Some(first) = series.first() else { return Vec::new() };
    (0..first.len())
        .map(|i| {
            let samples: Vec<f64> = series.iter().map(|s| s[i].2).collect();
            let m = mean_estimate(&samples);
            HausdorffPoint { n: first[i].0, m: first[i].1, mean: m.mean, stderr: m.stderr, samples }
        })
        .collect()
}

/// Pairwise `d_H(δ_{1/n} B_ω(e,n), δ_{1/m} B_ω(e,m))` averaged over records.
pub fn shape_convergence_report(records: &[ActivationRecord], n_grid: &[u32], metric: Metric) -> Result<Vec<HausdorffPoint>> {
    let series = records.iter().map(|r| hausdorff_series(r, n_grid, metric)).collect::<Result<_>>()?;
    Ok(aggregate_series(series))
}

/// Same as [`shape_convergence_report`] for freshly simulated seeds, one realization in memory at a time.
pub fn shape_convergence_experiment(lattice: &FrogLattice, n_grid: &[u32], seeds: &[u64], metric: Metric) -> Result<Vec<HausdorffPoint>> {
    let series = seeds
        .iter()
        .map(|&s| hausdorff_series(&run(lattice, s), n_grid, metric))
        .collect::<Result<_>>()?;
    Ok(aggregate_series(series))
}

/// Request for `φ̂` along one direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhiRequest {
    pub direction: GroupElement,
    pub k_values: Vec<u32>,
}

/// Estimate of the time constant `φ(v) = lim T(e, k·v) / k`.
///
/// `T(e, x)` and `T(e, -x)` have the same law (inversion is an automorphism
/// preserving a symmetric generating set), so each replicate averages the
/// two. The ratio `T(e, k·v) / k` approaches `φ(v)` from above with a
/// correction close to `c·k^(-γ)`; the estimate is the intercept of the
/// least-squares line of the ratio against `k^(-γ)` over the k-series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub direction: Vec<i64>,
    pub k_values: Vec<u32>,
    /// Mean of `T(e, k·v) / k` for each `k`.
    pub ratio_means: Vec<f64>,
    pub ratio_stderr: Vec<f64>,
    pub estimate: f64,
    pub stderr: f64,
    /// Ratio at the largest `k`.
    pub largest_k_ratio: f64,
    /// `min_k E[T(e, k·v)] / k`, an upper bound on `φ(v)` up to noise.
    pub inf_ratio: f64,
    pub replicas: usize,
    pub master_seed: u64,
    /// Exponent `γ` of the finite-size correction.
    pub correction_exponent: f64,
    /// Per-replicate estimates, for paired comparisons between directions.
    pub replicate_estimates: Vec<f64>,
}

/// Estimates `φ̂` for several directions from shared realizations.
pub fn phi_fan_experiment(lattice: &FrogLattice, requests: &[PhiRequest], replicas: usize, master_seed: u64, correction_exponent: f64) -> Result<Vec<PhiEstimate>> {
    if replicas < 2 {
        return Err(Error::InvalidParameter("phi estimation needs at least two replicas".into()));
    }
    if !(correction_exponent > 0.0 && correction_exponent.is_finite()) {
        return Err(Error::InvalidParameter(format!("correction exponent {correction_exponent} must be positive")));
    }
    let spec = &lattice.graph().spec;
    let mut targets: Vec<GroupElement> = Vec::new();
    let mut slot: FxHashMap<GroupElement, usize> = FxHashMap::default();
    let mut layout: Vec<Vec<(usize, usize)>> = Vec::new();
    for req in requests {
        if req.k_values.is_empty() || req.k_values.contains(&0) || req.direction.is_identity() {
            return Err(Error::InvalidParameter("phi request needs a non-trivial direction and positive k values".into()));
        }
        let mut idx = Vec::new();
        for &k in &req.k_values {
            let pair = [spec.scale(&req.direction, k as i64), spec.scale(&req.direction, -(k as i64))].map(|x| {
                *slot.entry(x).or_insert_with(|| {
                    targets.push(x);
                    targets.len() - 1
                })
            });
            idx.push((pair[0], pair[1]));
        }
        layout.push(idx);
    }
    for x in &targets {
        if lattice.norm(x).is_none() {
            return Err(Error::BudgetExceeded { needed: x.free_l1() as usize, budget: lattice.horizon() as usize });
        }
    }
    let times: Vec<Vec<Time>> = (0..replicas)
        .into_par_iter()
        .map(|r| activation_times(lattice, replicate_seed(master_seed, r as u64), &targets))
        .collect::<Result<_>>()?;
    if times.iter().flatten().any(|t| *t == Time::Infinity) {
        return Err(Error::OutOfHorizon { query: lattice.horizon() + 1, horizon: lattice.horizon() });
    }
    let value = |r: usize, (a, b): (usize, usize)| (times[r][a].finite().unwrap() + times[r][b].finite().unwrap()) as f64 / 2.0;
    Ok(requests
        .iter()
        .zip(&layout)
        .map(|(req, idx)| {
            let ks: Vec<f64> = req.k_values.iter().map(|&k| k as f64).collect();
            let per_k: Vec<_> = idx
                .iter()
                .zip(&ks)
                .map(|(&p, &k)| mean_estimate(&(0..replicas).map(|r| value(r, p) / k).collect::<Vec<_>>()))
                .collect();
            let replicate_estimates: Vec<f64> = (0..replicas)
                .map(|r| {
                    if ks.len() == 1 {
                        value(r, idx[0]) / ks[0]
                    } else {
                        let pts: Vec<(f64, f64)> = idx.iter().zip(&ks).map(|(&p, &k)| (k.powf(-correction_exponent), value(r, p) / k)).collect();
                        linear_fit(&pts).intercept
                    }
                })
                .collect();
            let est = mean_estimate(&replicate_estimates);
            let largest = ks.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
            PhiEstimate {
                direction: req.direction.coords().iter().map(|&c| c as i64).collect(),
                k_values: req.k_values.clone(),
                ratio_means: per_k.iter().map(|m| m.mean).collect(),
                ratio_stderr: per_k.iter().map(|m| m.stderr).collect(),
                estimate: est.mean,
                stderr: est.stderr,
                largest_k_ratio: per_k[largest].mean,
                inf_ratio: per_k.iter().map(|m| m.mean).fold(f64::INFINITY, f64::min),
                replicas,
                master_seed,
                correction_exponent,
                replicate_estimates,
            }
        })
        .collect())
}

pub fn phi_hat(lattice: &FrogLattice, direction: &GroupElement, k_values: &[u32], replicas: usize, master_seed: u64, correction_exponent: f64) -> Result<PhiEstimate> {
    let req = PhiRequest { direction: *direction, k_values: k_values.to_vec() };
    Ok(phi_fan_experiment(lattice, &[req], replicas, master_seed, correction_exponent)?.remove(0))
}

/// Outcome of one inequality between `φ̂` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub label: String,
    /// Signed quantity that the check bounds.
    pub difference: f64,
    pub sigma: f64,
    pub n_sigma: f64,
    pub passed: bool,
}

/// Standard error of `Σ c_i φ̂_i`. Estimates from the same realizations are
/// combined replicate by replicate, which accounts for their correlation.
fn combined_sigma(terms: &[(f64, &PhiEstimate)]) -> f64 {
    let paired = terms
        .windows(2)
        .all(|w| w[0].1.master_seed == w[1].1.master_seed && w[0].1.replicate_estimates.len() == w[1].1.replicate_estimates.len());
    if paired {
        let n = terms[0].1.replicate_estimates.len();
        let combo: Vec<f64> = (0..n).map(|r| terms.iter().map(|(c, e)| c * e.replicate_estimates[r]).sum()).collect();
        mean_estimate(&combo).stderr
    } else {
        terms.iter().map(|(c, e)| (c * e.stderr).powi(2)).sum::<f64>().sqrt()
    }
}

/// `|φ̂(2v)/2 - φ̂(v)| <= n_sigma·σ`.
pub fn homogeneity_check(v: &PhiEstimate, two_v: &PhiEstimate, n_sigma: f64) -> PairCheck {
    let difference = two_v.estimate / 2.0 - v.estimate;
    let sigma = combined_sigma(&[(0.5, two_v), (-1.0, v)]);
    PairCheck {
        label: format!("{:?} vs {:?}", v.direction, two_v.direction),
        difference,
        sigma,
        n_sigma,
        passed: difference.abs() <= n_sigma * sigma,
    }
}

/// `φ̂(u+v) <= φ̂(u) + φ̂(v) + n_sigma·σ`.
pub fn subadditivity_check(u: &PhiEstimate, v: &PhiEstimate, sum: &PhiEstimate, n_sigma: f64) -> PairCheck {
    let difference = sum.estimate - u.estimate - v.estimate;
    let sigma = combined_sigma(&[(1.0, sum), (-1.0, u), (-1.0, v)]);
    PairCheck {
        label: format!("{:?} + {:?}", u.direction, v.direction),
        difference,
        sigma,
        n_sigma,
        passed: difference <= n_sigma * sigma,
    }
}

/// Positively homogeneous model of `φ` on `R^D`.
///
/// Values are given on the fan `{-1,0,1}^D \ {0}`, the grid points of the
/// cube surface. Each face is split into Kuhn simplices; inside a simplex
/// the direction profile `φ(u)` on the Euclidean unit sphere is interpolated
/// linearly, and `φ(x) = |x|·φ(x/|x|)`. Multiples of the Euclidean norm are
/// reproduced exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiModel {
    dim: usize,
    /// Indexed by the base-3 code of the fan vector (digit `c + 1`).
    values: Vec<f64>,
    /// `φ(v) / |v|` for each fan vector.
    unit_values: Vec<f64>,
}

fn fan_code(v: &[i64]) -> usize {
    v.iter().rev().fold(0, |acc, &c| acc * 3 + (c + 1) as usize)
}

impl PhiModel {
    /// All `3^D - 1` fan vectors.
    pub fn fan(dim: usize) -> Vec<Vec<i64>> {
        (0..3usize.pow(dim as u32))
            .map(|mut code| {
                (0..dim)
                    .map(|_| {
                        let c = (code % 3) as i64 - 1;
                        code /= 3;
                        c
                    })
                    .collect::<Vec<i64>>()
            })
            .filter(|v| v.iter().any(|&c| c != 0))
            .collect()
    }

    /// One fan vector per `±` pair: the one whose first non-zero entry is positive.
    pub fn representatives(dim: usize) -> Vec<Vec<i64>> {
        Self::fan(dim)
            .into_iter()
            .filter(|v| v.iter().find(|&&c| c != 0) == Some(&1))
            .collect()
    }

    pub fn from_fan_values(dim: usize, mut value: impl FnMut(&[i64]) -> f64) -> Result<Self> {
        if dim == 0 || dim > MAX_COORDS {
            return Err(Error::InvalidParameter(format!("model dimension {dim} out of range")));
        }
        let mut values = vec![f64::NAN; 3usize.pow(dim as u32)];
        for v in Self::fan(dim) {
            let x = value(&v);
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!("phi value {x} at {v:?} is not positive")));
            }
            values[fan_code(&v)] = x;
        }
        let unit_values = values
            .iter()
            .enumerate()
            .map(|(code, &x)| {
                let mut c = code;
                let len = (0..dim).map(|_| { let d = c % 3; c /= 3; (d != 1) as usize as f64 }).sum::<f64>().sqrt();
                x / len
            })
            .collect();
        Ok(Self { dim, values, unit_values })
    }

    /// Model from symmetric estimates on the representatives.
    pub fn from_estimates(dim: usize, estimates: &[PhiEstimate]) -> Result<Self> {
        let lookup: FxHashMap<Vec<i64>, f64> = estimates.iter().map(|e| (e.direction[..dim].to_vec(), e.estimate)).collect();
        let get = |v: &[i64]| {
            let neg: Vec<i64> = v.iter().map(|c| -c).collect();
            lookup.get(v).or_else(|| lookup.get(&neg)).copied().unwrap_or(f64::NAN)
        };
        Self::from_fan_values(dim, get)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fan_value(&self, v: &[i64]) -> f64 {
        self.values[fan_code(v)]
    }

    /// Smallest value on the unit sphere; `φ(x) >= min_unit_value · |x|`.
    pub fn min_unit_value(&self) -> f64 {
        self.unit_values.iter().copied().filter(|x| !x.is_nan()).fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let (axis, m) = x
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bm), (i, &c)| if c.abs() > bm { (i, c.abs()) } else { (bi, bm) });
        if m == 0.0 {
            return 0.0;
        }
        let mut vertex = [0i64; MAX_COORDS];
        vertex[axis] = if x[axis] > 0.0 { 1 } else { -1 };
        let mut frac = [(0.0f64, 0usize); MAX_COORDS];
        let mut free = 0;
        for (j, &c) in x.iter().enumerate() {
            if j == axis {
                continue;
            }
            let z = (c / m).clamp(-1.0, 1.0);
            let corner = if z < 0.0 { -1 } else { 0 };
            vertex[j] = corner;
            frac[free] = (z - corner as f64, j);
            free += 1;
        }
        let frac = &mut frac[..free];
        frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let unit = |v: &[i64]| self.unit_values[fan_code(v)];
        let mut value = 0.0;
        let mut prev = 1.0;
        for &(f, j) in frac.iter() {
            value += (prev - f) * unit(&vertex[..self.dim]);
            vertex[j] += 1;
            prev = f;
        }
        value += prev * unit(&vertex[..self.dim]);
        x.iter().map(|c| c * c).sum::<f64>().sqrt() * value
    }
}

/// Fits a [`PhiModel`] to the radial extent of activation balls at time `n`:
/// along each fan vector `v`, the number of activated points `k·v`, `k >= 1`,
/// averaged over realizations and over `±v`, estimates the radius `ρ(v)` of
/// the ball, and `φ(v) = n / (ρ(v) + 1/2)`.
#[derive(Clone, Debug)]
pub struct RadialFit {
    dim: usize,
    n: u32,
    reps: Vec<Vec<i64>>,
    sums: Vec<f64>,
    count: usize,
}

impl RadialFit {
    pub fn new(dim: usize, n: u32) -> Self {
        let reps = PhiModel::representatives(dim);
        Self { dim, n, sums: vec![0.0; reps.len()], reps, count: 0 }
    }

    pub fn add(&mut self, record: &ActivationRecord) -> Result<()> {
        let ball = projected_ball(record, self.n)?;
        check_dim(self.dim, record)?;
        for (rep, sum) in self.reps.iter().zip(self.sums.iter_mut()) {
            let reach = self.n as i64 / rep.iter().map(|c| c.abs()).sum::<i64>();
            let mut key = [0i32; MAX_COORDS];
            for sign in [1i64, -1] {
                for k in 1..=reach {
                    for (i, &c) in rep.iter().enumerate() {
                        key[i] = (sign * k * c) as i32;
                    }
                    if ball.contains(&key) {
                        *sum += 0.5;
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<PhiModel> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("radial fit needs at least one record".into()));
        }
        let rho: FxHashMap<&[i64], f64> = self.reps.iter().map(Vec::as_slice).zip(self.sums.iter().map(|s| s / self.count as f64)).collect();
        PhiModel::from_fan_values(self.dim, |v| {
            let neg: Vec<i64> = v.iter().map(|c| -c).collect();
            let r = rho.get(v).or_else(|| rho.get(neg.as_slice())).copied().unwrap_or(f64::NAN);
            self.n as f64 / (r + 0.5)
        })
    }
}

fn check_dim(dim: usize, record: &ActivationRecord) -> Result<()> {
    let rank = record.graph.spec.rank();
    if rank != dim {
        return Err(Error::DimensionMismatch(dim, rank));
    }
    Ok(())
}

/// Free parts of `B_ω(e, n)`.
fn projected_ball(record: &ActivationRecord, n: u32) -> Result<FxHashSet<CellKey>> {
    let ball = record.activation_ball(n)?;
    Ok(ball
        .iter()
        .map(|x| {
            let mut k = [0i32; MAX_COORDS];
            k[..x.rank()].copy_from_slice(x.free_part());
            k
        })
        .collect())
}

/// Lattice points violating `B_φ(0, n(1-ε)) ∩ Z^D ⊆ B_ω(e, n) ⊆ B_φ(0, n(1+ε))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub n: u32,
    pub epsilon: f64,
    /// Lattice points with `φ(x) <= n(1-ε)`.
    pub inner_total: usize,
    /// Of those, points not activated by time `n`.
    pub inner_violations: usize,
    /// Activated points (after projection).
    pub outer_total: usize,
    /// Of those, points with `φ(x) > n(1+ε)`.
    pub outer_violations: usize,
}

impl SandwichReport {
    pub fn inner_fraction(&self) -> f64 {
        self.inner_violations as f64 / self.inner_total.max(1) as f64
    }

    pub fn outer_fraction(&self) -> f64 {
        self.outer_violations as f64 / self.outer_total.max(1) as f64
    }

    pub fn violation_fraction(&self) -> f64 {
        self.inner_fraction().max(self.outer_fraction())
    }
}

pub fn sandwich_check(record: &ActivationRecord, model: &PhiModel, n: u32, epsilon: f64) -> Result<SandwichReport> {
    check_dim(model.dim, record)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be non-negative")));
    }
    let ball = projected_ball(record, n)?;
    let dim = model.dim;
    let inner_level = n as f64 * (1.0 - epsilon);
    let outer_level = n as f64 * (1.0 + epsilon);
    let mut report = SandwichReport { n, epsilon, inner_total: 0, inner_violations: 0, outer_total: ball.len(), outer_violations: 0 };
    let mut x = [0.0f64; MAX_COORDS];
    for key in &ball {
        for i in 0..dim {
            x[i] = key[i] as f64;
        }
        if model.eval(&x[..dim]) > outer_level {
            report.outer_violations += 1;
        }
    }
    if inner_level >= 0.0 {
        let reach = (inner_level / model.min_unit_value()).floor() as i32;
        let mut key = [0i32; MAX_COORDS];
        key[..dim].fill(-reach);
        loop {
            for i in 0..dim {
                x[i] = key[i] as f64;
            }
            if model.eval(&x[..dim]) <= inner_level {
                report.inner_total += 1;
                if !ball.contains(&key) {
                    report.inner_violations += 1;
                }
            }
            let mut i = 0;
            while i < dim {
                key[i] += 1;
                if key[i] <= reach {
                    break;
                }
                key[i] = -reach;
                i += 1;
            }
            if i == dim {
                break;
            }
        }
    }
    Ok(report)
}

/// `x ↦ (s_i x_{π^{-1}(i)})`: coordinate `i` is sent to `perm[i]` with sign `signs[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedPermutation {
    pub perm: Vec<usize>,
    pub signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn identity(dim: usize) -> Self {
        Self { perm: (0..dim).collect(), signs: vec![1; dim] }
    }

    /// All `2^D · D!` signed permutations.
    pub fn all(dim: usize) -> Vec<Self> {
        let mut perms: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..dim {
            let mut longer = Vec::new();
            for p in &perms {
                for i in (0..dim).filter(|i| !p.contains(i)) {
                    let mut q = p.clone();
                    q.push(i);
                    longer.push(q);
                }
            }
            perms = longer;
        }
        perms
            .into_iter()
            .flat_map(|perm| {
                (0..1u32 << dim).map(move |mask| Self {
                    perm: perm.clone(),
                    signs: (0..dim).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect(),
                })
            })
            .collect()
    }

    pub fn inverse(&self) -> Self {
        let mut perm = vec![0; self.perm.len()];
        let mut signs = vec![1; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            perm[p] = i;
            signs[p] = self.signs[i];
        }
        Self { perm, signs }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = self.signs[i] as f64 * x[i];
        }
    }

    /// Acts on the free part, leaves torsion alone.
    pub fn apply_element(&self, x: &GroupElement) -> GroupElement {
        let free = x.free_part();
        let mut image = free.to_vec();
        for (i, &p) in self.perm.iter().enumerate() {
            image[p] = self.signs[i] as i32 * free[i];
        }
        x.with_free_part(&image)
    }
}

impl fmt::Display for SignedPermutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut images = vec![String::new(); self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            images[p] = format!("{}x{}", if self.signs[i] < 0 { "-" } else { "" }, i + 1);
        }
        write!(f, "({})", images.join(","))
    }
}

/// Checks that `g` maps the generator set onto itself.
pub fn check_invariant(graph: &CayleyGraph, g: &SignedPermutation) -> Result<()> {
    if g.perm.len() != graph.spec.rank() {
        return Err(Error::DimensionMismatch(g.perm.len(), graph.spec.rank()));
    }
    let gens: FxHashSet<GroupElement> = graph.generators.elements().iter().copied().collect();
    if graph.generators.elements().iter().all(|s| gens.contains(&g.apply_element(s))) {
        Ok(())
    } else {
        Err(Error::NotInvariant(g.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub n: u32,
    /// `max_g d_H(δ_{1/n}B_ω, g·δ_{1/n}B_ω)`.
    pub max_asymmetry: f64,
    pub worst: String,
}

pub fn symmetry_check(record: &ActivationRecord, n: u32, symmetries: &[SignedPermutation], metric: Metric) -> Result<SymmetryReport> {
    for g in symmetries {
        check_invariant(&record.graph, g)?;
    }
    if n == 0 {
        return Err(Error::InvalidParameter("cannot rescale the ball at time 0".into()));
    }
    let cloud = rescale(&record.activation_ball(n)?, 1.0 / n as f64);
    let grid = Grid::new(&cloud);
    let mut report = SymmetryReport { n, max_asymmetry: 0.0, worst: SignedPermutation::identity(cloud.dim()).to_string() };
    for g in symmetries {
        // g is an isometry, so d(a, gA) = d(g⁻¹a, A) and one grid serves both directions.
        let inv = g.inverse();
        let image = cloud.map(|p, q| g.apply(p, q));
        let preimage = cloud.map(|p, q| inv.apply(p, q));
        let d = directed(&image, &grid, metric).max(directed(&preimage, &grid, metric));
        if d > report.max_asymmetry {
            report.max_asymmetry = d;
            report.worst = g.to_string();
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionReport {
    pub group: String,
    pub quotient: String,
    pub horizon: u32,
    pub seeds: Vec<u64>,
    /// Per-seed `d_H` between the projected rescaled balls.
    pub distances: Vec<f64>,
    /// Mean of `distances`, i.e. the unrescaled distance divided by the horizon.
    pub mean_ratio: f64,
    pub stderr: f64,
}

/// Compares `B_ω(e, n)` on `graph` (projected by the torsion quotient) with
/// `B_ω(e, n)` on the quotient graph, both rescaled by `1/n`.
pub fn torsion_invariance_check(graph: &CayleyGraph, quotient: &CayleyGraph, horizon: u32, seeds: &[u64], metric: Metric, budget: usize) -> Result<TorsionReport> {
    let expected = graph.torsion_quotient()?;
    if *quotient != expected {
        return Err(Error::SpecMismatch(format!("{} with {} generators is not the torsion quotient of {}", quotient.spec, quotient.degree(), graph.spec)));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let lat_t = FrogLattice::build(graph.clone(), horizon, budget)?;
    let lat_q = FrogLattice::build(quotient.clone(), horizon, budget)?;
    let t = 1.0 / horizon as f64;
    let distances = seeds
        .iter()
        .map(|&s| {
            let a = rescale(&run(&lat_t, s).activation_ball(horizon)?, t);
            let b = rescale(&run(&lat_q, s).activation_ball(horizon)?, t);
            hausdorff_distance(&a, &b, metric)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = mean_estimate(&distances);
    Ok(TorsionReport {
        group: graph.spec.to_string(),
        quotient: quotient.spec.to_string(),
        horizon,
        seeds: seeds.to_vec(),
        distances,
        mean_ratio: m.mean,
        stderr: m.stderr,
    })
}

/// Serializable summary of a shape experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub group: String,
    pub metric: Metric,
    pub phi: Vec<PhiEstimate>,
    pub hausdorff_series: Vec<HausdorffPoint>,
    pub sandwich: Vec<SandwichReport>,
}

impl ShapeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("shape report serializes")
    }

    /// `direction,phi_hat,stderr` rows.
    pub fn phi_csv(&self) -> String {
        let mut out = String::from("direction,phi_hat,stderr\n");
        for e in &self.phi {
            let dir: Vec<String> = e.direction.iter().map(i64::to_string).collect();
            out.push_str(&format!("{},{},{}\n", dir.join(" "), e.estimate, e.stderr));
        }
        out
    }

    /// `n,m,d_h,stderr` rows.
    pub fn hausdorff_csv(&self) -> String {
        let mut out = String::from("n,m,d_h,stderr\n");
        for p in &self.hausdorff_series {
            out.push_str(&format!("{},{},{},{}\n", p.n, p.m, p.mean, p.stderr));
        }
        out
    }
}
