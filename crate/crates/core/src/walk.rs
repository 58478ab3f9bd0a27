//! Simple random walks driven by per-site streams, exact heat-kernel
//! dynamic programming, and Monte Carlo estimators for hitting, exit and
//! range statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{CayleyGraph, GroupElement, WordMetricOracle};
use crate::rng::{replicate_seed, SiteRandomness};
use crate::stats::{linear_fit, mean_estimate, proportion, LinearFit};

/// A first-passage time that may be censored. `Infinity` means the event did
/// not happen within the horizon; it is never represented by a large number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Time {
    At(u32),
    Infinity,
}

impl Time {
    pub fn finite(self) -> Option<u32> {
        match self {
            Time::At(t) => Some(t),
            Time::Infinity => None,
        }
    }

    /// Whether the event happened at or before `n`.
    pub fn by(self, n: u32) -> bool {
        matches!(self, Time::At(t) if t <= n)
    }
}

/// Positions `origin = S_0, S_1, …, S_n` of one walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkTrajectory {
    pub origin: GroupElement,
    pub positions: Vec<GroupElement>,
}

impl WalkTrajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `position + ξ_{local_time}` where `ξ` is drawn uniformly from the
/// generators by the site's stream.
#[inline]
pub fn walk_step(graph: &CayleyGraph, position: &GroupElement, site: &SiteRandomness, local_time: u64) -> GroupElement {
    debug_assert!(local_time >= 1);
    graph.neighbor(position, site.step_choice(local_time, graph.degree()))
}

pub fn simulate_walk(graph: &CayleyGraph, origin: &GroupElement, n_steps: usize, site: &SiteRandomness) -> WalkTrajectory {
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut x = *origin;
    positions.push(x);
    for t in 1..=n_steps as u64 {
        x = walk_step(graph, &x, site, t);
        positions.push(x);
    }
    WalkTrajectory { origin: *origin, positions }
}

/// Number of distinct sites visited, `|R_n|`.
pub fn range_size(trajectory: &WalkTrajectory) -> usize {
    trajectory.positions.iter().collect::<FxHashSet<_>>().len()
}

/// First `n <= horizon` with `S^x_n = y`.
pub fn hitting_time(graph: &CayleyGraph, x: &GroupElement, y: &GroupElement, horizon: u32, site: &SiteRandomness) -> Time {
    let mut pos = *x;
    if pos == *y {
        return Time::At(0);
    }
    for t in 1..=horizon {
        pos = walk_step(graph, &pos, site, t as u64);
        if pos == *y {
            return Time::At(t);
        }
    }
    Time::Infinity
}

/// First `n <= horizon` with `d(x, S^x_n) > r`. The oracle cache must
/// cover radius `r`.
pub fn exit_time(oracle: &mut WordMetricOracle, x: &GroupElement, r: u32, horizon: u32, site: &SiteRandomness) -> Result<Time> {
    oracle.ensure_radius(r)?;
    let graph = oracle.graph().clone();
    let mut pos = *x;
    for t in 1..=horizon {
        pos = walk_step(&graph, &pos, site, t as u64);
        let rel = graph.spec.compose(&graph.spec.inverse(x), &pos)?;
        if oracle.distance(&rel).is_none_or(|d| d > r) {
            return Ok(Time::At(t));
        }
    }
    Ok(Time::Infinity)
}

// ---------------------------------------------------------------------------
// Exact dynamic programming
// ---------------------------------------------------------------------------

/// One DP step: distribution over `B(e, m)` to distribution over `B(e, m + 1)`.
fn propagate(current: &[f64], table: &crate::group::NeighborTable, next_len: usize) -> Vec<f64> {
    let mut next = vec![0.0; next_len];
    let w = 1.0 / table.degree as f64;
    for (i, &p) in current.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mass = p * w;
        let row = &table.table[i * table.degree..(i + 1) * table.degree];
        for &j in row {
            next[j as usize] += mass;
        }
    }
    next
}

/// `p_n(e, ·)` over `B(e, n)` in BFS order.
pub fn distribution(oracle: &mut WordMetricOracle, n: u32) -> Result<Vec<f64>> {
    let mut dist = vec![1.0];
    if n == 0 {
        return Ok(dist);
    }
    let table = oracle.neighbor_table(n - 1)?;
    for m in 0..n {
        let len = oracle.ball_elements(m + 1).len();
        dist = propagate(&dist, &table, len);
    }
    Ok(dist)
}

/// `p_i(e, z)` for `i = 0..=n_max`.
///
/// Only `B(e, ⌈n_max/2⌉)` is ever stored: `p_{a+b}(e, z)` is assembled as
/// `Σ_w p_a(e, w) p_b(e, z - w)` from the two half-length distributions.
pub fn point_series(oracle: &mut WordMetricOracle, z: &GroupElement, n_max: u32) -> Result<Vec<f64>> {
    let half = n_max.div_ceil(2);
    let table = oracle.neighbor_table(half)?;
    let spec = oracle.spec().clone();
    // shift[w] = index of z - w, or u32::MAX outside the cache.
    let shift: Vec<u32> = oracle
        .ball_elements(half)
        .iter()
        .map(|w| oracle.index_of(&spec.sub(z, w)).map_or(u32::MAX, |i| i as u32))
        .collect();
    let mut series = Vec::with_capacity(n_max as usize + 1);
    let mut cur = vec![1.0];
    let mut m = 0;
    loop {
        let next = propagate(&cur, &table, oracle.ball_elements(m + 1).len());
        let even: f64 = cur
            .iter()
            .zip(&shift)
            .filter(|(_, &s)| (s as usize) < cur.len())
            .map(|(p, &s)| p * cur[s as usize])
            .sum();
        series.push(even);
        if series.len() > n_max as usize {
            break;
        }
        let odd: f64 = cur
            .iter()
            .zip(&shift)
            .filter(|(_, &s)| (s as usize) < next.len())
            .map(|(p, &s)| p * next[s as usize])
            .sum();
        series.push(odd);
        if series.len() > n_max as usize {
            break;
        }
        cur = next;
        m += 1;
    }
    Ok(series)
}

/// Exact `p_n(x, y) = P(S^x_n = y)`.
pub fn heat_kernel_exact(oracle: &mut WordMetricOracle, x: &GroupElement, y: &GroupElement, n: u32) -> Result<f64> {
    let z = oracle.spec().compose(&oracle.spec().inverse(x), y)?;
    Ok(point_series(oracle, &z, n)?[n as usize])
}

/// `p_n(e, e)` for `n = 0..=n_max`.
pub fn return_probabilities(oracle: &mut WordMetricOracle, n_max: u32) -> Result<Vec<f64>> {
    let e = oracle.spec().identity();
    point_series(oracle, &e, n_max)
}

/// Log-log fit of `p_n(e, e)` against `n` over the given times. Times with
/// zero return probability (the wrong parity on bipartite graphs) must be
/// excluded by the caller.
pub fn heat_kernel_scaling_check(oracle: &mut WordMetricOracle, ns: &[u32]) -> Result<LinearFit> {
    let n_max = *ns.iter().max().ok_or_else(|| Error::InvalidParameter("empty n range".into()))?;
    let p = return_probabilities(oracle, n_max)?;
    let mut pts = Vec::with_capacity(ns.len());
    for &n in ns {
        if p[n as usize] <= 0.0 {
            return Err(Error::InvalidParameter(format!("p_{n}(e,e) = 0; use parity-consistent times")));
        }
        pts.push(((n as f64).ln(), p[n as usize].ln()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidParameter("need at least two times for a fit".into()));
    }
    Ok(linear_fit(&pts))
}

/// Truncated Green function `G_n(x, y) = Σ_{i=0}^n p_i(x, y)`.
pub fn green_function(oracle: &mut WordMetricOracle, x: &GroupElement, y: &GroupElement, n: u32) -> Result<f64> {
    let z = oracle.spec().compose(&oracle.spec().inverse(x), y)?;
    Ok(point_series(oracle, &z, n)?.iter().sum())
}

/// Truncated Green function together with an estimate of the neglected tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub horizon: u32,
    pub partial_sum: f64,
    /// `c · Σ_{i>n} i^{-D/2}` over the parity class that carries mass, with
    /// `c` fitted from the last computed terms.
    pub tail: f64,
    pub limit: f64,
}

pub fn green_limit(oracle: &mut WordMetricOracle, x: &GroupElement, y: &GroupElement, n: u32) -> Result<GreenEstimate> {
    let z = oracle.spec().compose(&oracle.spec().inverse(x), y)?;
    let series = point_series(oracle, &z, n)?;
    let partial_sum: f64 = series.iter().sum();
    let d = oracle.spec().rank() as f64;
    let tail = green_tail(&series, d);
    Ok(GreenEstimate { horizon: n, partial_sum, tail, limit: partial_sum + tail })
}

fn green_tail(series: &[f64], d: f64) -> f64 {
    let n = series.len() - 1;
    if d <= 2.0 {
        return f64::INFINITY;
    }
    let window = n.saturating_sub(20).max(1);
    let odd_mass: f64 = series[window..].iter().skip(window.is_multiple_of(2) as usize).step_by(2).sum();
    let even_mass: f64 = series[window..].iter().skip((window % 2 == 1) as usize).step_by(2).sum();
    let bipartite = odd_mass == 0.0 || even_mass == 0.0;
    let last: Vec<usize> = (1..=n).rev().filter(|&i| series[i] > 0.0).take(5).collect();
    if last.is_empty() {
        return 0.0;
    }
    let amp = last.iter().map(|&i| series[i] * (i as f64).powf(d / 2.0)).sum::<f64>() / last.len() as f64;
    let step = if bipartite { 2 } else { 1 };
    let first = if bipartite { last[0] + 2 } else { n + 1 };
    let explicit_end = first + 200_000;
    let mut sum = 0.0;
    let mut i = first;
    while i < explicit_end {
        sum += (i as f64).powf(-d / 2.0);
        i += step;
    }
    let rest = (i as f64).powf(1.0 - d / 2.0) / ((d / 2.0 - 1.0) * step as f64);
    amp * (sum + rest)
}

/// Exact `q_x(n, y) = P(t(x, y) <= n)` by DP with absorption at `y`.
pub fn hit_prob_exact(oracle: &mut WordMetricOracle, x: &GroupElement, y: &GroupElement, n: u32) -> Result<f64> {
    let z = oracle.spec().compose(&oracle.spec().inverse(x), y)?;
    if z.is_identity() {
        return Ok(1.0);
    }
    if n == 0 {
        return Ok(0.0);
    }
    let table = oracle.neighbor_table(n - 1)?;
    let target = oracle.index_of(&z);
    let mut dist = vec![1.0];
    let mut hit = 0.0;
    for m in 0..n {
        dist = propagate(&dist, &table, oracle.ball_elements(m + 1).len());
        if let Some(t) = target {
            if t < dist.len() {
                hit += dist[t];
                dist[t] = 0.0;
            }
        }
    }
    Ok(hit)
}

// ---------------------------------------------------------------------------
// Monte Carlo estimators
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    HeatKernel,
    Green,
    HitProb,
    ExitTail,
    Range,
}

/// One estimated value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatPoint {
    pub params: BTreeMap<String, f64>,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    pub quantity: Quantity,
    pub master_seed: u64,
    pub points: Vec<StatPoint>,
}

/// A JSONL line per estimate.
#[derive(Serialize)]
struct StatLine<'a> {
    quantity: Quantity,
    params: &'a BTreeMap<String, f64>,
    estimate: f64,
    stderr: f64,
    replicas: usize,
    master_seed: u64,
}

impl WalkStats {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let line = StatLine {
                quantity: self.quantity,
                params: &p.params,
                estimate: p.estimate,
                stderr: p.stderr,
                replicas: p.replicas,
                master_seed: self.master_seed,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Monte Carlo `p̂_n(x, x)` for every `n` in `ns`, all read off the same walks.
pub fn heat_kernel_estimate(graph: &CayleyGraph, x: &GroupElement, ns: &[u32], replicas: usize, master_seed: u64) -> WalkStats {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let returns: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let site = SiteRandomness::new(replicate_seed(master_seed, r as u64), x);
            let traj = simulate_walk(graph, x, n_max as usize, &site);
            ns.iter().map(|&n| traj.positions[n as usize] == *x).collect()
        })
        .collect();
    let points = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let hits = returns.iter().filter(|r| r[k]).count();
            let p = proportion(hits, replicas);
            StatPoint { params: params(&[("n", n as f64)]), estimate: p.mean, stderr: p.stderr, replicas }
        })
        .collect();
    WalkStats { quantity: Quantity::HeatKernel, master_seed, points }
}

/// Monte Carlo `q̂_x(n, y)` with binomial standard error.
pub fn hit_prob_estimate(graph: &CayleyGraph, x: &GroupElement, y: &GroupElement, n: u32, replicas: usize, master_seed: u64) -> WalkStats {
    let hits = (0..replicas)
        .into_par_iter()
        .filter(|&r| {
            let site = SiteRandomness::new(replicate_seed(master_seed, r as u64), x);
            hitting_time(graph, x, y, n, &site).by(n)
        })
        .count();
    let p = proportion(hits, replicas);
    WalkStats {
        quantity: Quantity::HitProb,
        master_seed,
        points: vec![StatPoint { params: params(&[("n", n as f64)]), estimate: p.mean, stderr: p.stderr, replicas }],
    }
}

/// Exit times from `B(e, r)` for every radius in `radii`, read off one walk
/// per replicate (site `e` under the replicate seed), censored at `horizon`.
pub fn exit_times(oracle: &mut WordMetricOracle, radii: &[u32], horizon: u32, replicas: usize, master_seed: u64) -> Result<Vec<Vec<Time>>> {
    let r_max = *radii.iter().max().ok_or_else(|| Error::InvalidParameter("no radii".into()))?;
    let table = oracle.neighbor_table(r_max)?;
    let shell: Vec<u32> = (0..oracle.ball_elements(r_max + 1).len()).map(|i| oracle.shell_of(i)).collect();
    let e = oracle.spec().identity();
    let degree = table.degree;
    Ok((0..replicas)
        .into_par_iter()
        .map(|rep| {
            let site = SiteRandomness::new(replicate_seed(master_seed, rep as u64), &e);
            let mut times = vec![Time::Infinity; radii.len()];
            let mut pos = 0usize;
            let mut reached = 0u32;
            for t in 1..=horizon {
                pos = table.get(pos, site.step_choice(t as u64, degree));
                let d = shell[pos];
                if d > reached {
                    reached = d;
                    for (k, &r) in radii.iter().enumerate() {
                        if d > r && times[k] == Time::Infinity {
                            times[k] = Time::At(t);
                        }
                    }
                    if d > r_max {
                        break;
                    }
                }
            }
            times
        })
        .collect())
}

/// `P̂(τ_r <= n)` for each radius.
pub fn exit_tail_estimate(oracle: &mut WordMetricOracle, radii: &[u32], n: u32, replicas: usize, master_seed: u64) -> Result<WalkStats> {
    let times = exit_times(oracle, radii, n, replicas, master_seed)?;
    let points = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let exits = times.iter().filter(|t| t[k].by(n)).count();
            let p = proportion(exits, replicas);
            StatPoint { params: params(&[("n", n as f64), ("r", r as f64)]), estimate: p.mean, stderr: p.stderr, replicas }
        })
        .collect();
    Ok(WalkStats { quantity: Quantity::ExitTail, master_seed, points })
}

/// `E|R_n| / n` over independent walks from `e`.
pub fn range_estimate(graph: &CayleyGraph, n: usize, replicas: usize, master_seed: u64) -> WalkStats {
    let e = graph.spec.identity();
    let ratios: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let site = SiteRandomness::new(replicate_seed(master_seed, r as u64), &e);
            let mut seen = FxHashSet::default();
            seen.reserve(n + 1);
            let mut x = e;
            seen.insert(x);
            for t in 1..=n as u64 {
                x = walk_step(graph, &x, &site, t);
                seen.insert(x);
            }
            seen.len() as f64 / n as f64
        })
        .collect();
    let m = mean_estimate(&ratios);
    WalkStats {
        quantity: Quantity::Range,
        master_seed,
        points: vec![StatPoint { params: params(&[("n", n as f64)]), estimate: m.mean, stderr: m.stderr, replicas }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{GeneratorSet, GroupSpec};

    fn z3() -> CayleyGraph {
        CayleyGraph::standard(GroupSpec::free(3))
    }

    #[test]
    fn step_frequencies_are_uniform() {
        let g = z3();
        let site = SiteRandomness::new(5, &g.spec.identity());
        let n = 1_000_000u64;
        let mut counts = [0u64; 6];
        for t in 1..=n {
            counts[site.step_choice(t, 6)] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma + 1.0, "{counts:?}");
        }
    }

    #[test]
    fn distinct_sites_are_independent() {
        // Chi-square test of independence on the 6x6 table of paired steps.
        let g = z3();
        let a = SiteRandomness::new(11, &g.spec.identity());
        let b = SiteRandomness::new(11, &g.spec.unit(0));
        let n = 360_000u64;
        let mut table = [[0f64; 6]; 6];
        for t in 1..=n {
            table[a.step_choice(t, 6)][b.step_choice(t, 6)] += 1.0;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..6).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut chi2 = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let exp = rows[i] * cols[j] / n as f64;
                chi2 += (table[i][j] - exp).powi(2) / exp;
            }
        }
        // 25 degrees of freedom: the 0.999 quantile is 52.62.
        assert!(chi2 < 52.62, "chi2 = {chi2}");
    }

    #[test]
    fn walk_basics() {
        let g = z3();
        let e = g.spec.identity();
        let site = SiteRandomness::new(1, &e);
        assert_eq!(simulate_walk(&g, &e, 0, &site).positions, vec![e]);
        let mut o = WordMetricOracle::new(g.clone());
        for k in 0..1000u64 {
            let site = SiteRandomness::new(k, &e);
            let traj = simulate_walk(&g, &e, 30, &site);
            for (n, w) in traj.positions.windows(2).enumerate() {
                let d = g.spec.sub(&w[1], &w[0]);
                assert!(g.generators.elements().contains(&d));
                assert!(o.word_norm(&w[1]).unwrap() as usize <= n + 1);
            }
        }
        let t0 = simulate_walk(&g, &e, 0, &site);
        assert_eq!(range_size(&t0), 1);
        let t1 = simulate_walk(&g, &e, 1, &site);
        assert_eq!(range_size(&t1), 2);
    }

    #[test]
    fn exact_kernel_small_values() {
        let g = z3();
        let e = g.spec.identity();
        let mut o = WordMetricOracle::new(g);
        assert_eq!(heat_kernel_exact(&mut o, &e, &e, 0).unwrap(), 1.0);
        assert_eq!(heat_kernel_exact(&mut o, &e, &e, 1).unwrap(), 0.0);
        assert!((heat_kernel_exact(&mut o, &e, &e, 2).unwrap() - 1.0 / 6.0).abs() < 1e-15);

        // Non-standard generating set: p_2(e, e) = 1/|S| still.
        let spec = GroupSpec::new(2, vec![2]).unwrap();
        let mut gens = GeneratorSet::standard(&spec).elements().to_vec();
        gens.push(spec.element_from_flat(&[1, 1, 1]).unwrap());
        gens.push(spec.element_from_flat(&[-1, -1, 1]).unwrap());
        let gs = GeneratorSet::new(&spec, gens).unwrap();
        let mut o2 = WordMetricOracle::new(CayleyGraph::new(spec.clone(), gs));
        let e2 = spec.identity();
        assert!((heat_kernel_exact(&mut o2, &e2, &e2, 2).unwrap() - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn dp_mass_conservation_and_symmetries() {
        let g = z3();
        let spec = g.spec.clone();
        let mut o = WordMetricOracle::new(g);
        for n in 0..12 {
            let d = distribution(&mut o, n).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let x = spec.element_from_flat(&[1, -2, 0]).unwrap();
        let y = spec.element_from_flat(&[2, 1, 1]).unwrap();
        let z = spec.sub(&y, &x);
        for n in [5, 7, 9] {
            let pxy = heat_kernel_exact(&mut o, &x, &y, n).unwrap();
            let pyx = heat_kernel_exact(&mut o, &y, &x, n).unwrap();
            let pez = heat_kernel_exact(&mut o, &spec.identity(), &z, n).unwrap();
            assert!((pxy - pyx).abs() < 1e-15);
            assert!((pxy - pez).abs() < 1e-15);
            // The split convolution agrees with the direct DP.
            let direct = distribution(&mut o, n).unwrap()[o.index_of(&z).unwrap()];
            assert!((direct - pez).abs() < 1e-15);
        }
    }

    #[test]
    fn green_function_examples() {
        let g = z3();
        let e = g.spec.identity();
        let mut o = WordMetricOracle::new(g);
        assert_eq!(green_function(&mut o, &e, &e, 0).unwrap(), 1.0);
        let series = return_probabilities(&mut o, 60).unwrap();
        let mut acc = 0.0;
        for p in series {
            let next = acc + p;
            assert!(next >= acc);
            acc = next;
        }
        let g200 = green_limit(&mut o, &e, &e, 200).unwrap();
        assert!((g200.partial_sum - 1.516386).abs() < 0.05, "{g200:?}");
        assert!((g200.limit - 1.516386).abs() < 2e-3, "{g200:?}");
    }

    #[test]
    fn hitting_and_exit_times() {
        let g = z3();
        let e = g.spec.identity();
        let site = SiteRandomness::new(3, &e);
        assert_eq!(hitting_time(&g, &e, &e, 10, &site), Time::At(0));
        let y = g.spec.unit(0);
        let traj = simulate_walk(&g, &e, 500, &site);
        if let Time::At(t) = hitting_time(&g, &e, &y, 500, &site) {
            assert_eq!(traj.positions[t as usize], y);
        }
        let mut o = WordMetricOracle::new(g.clone());
        for seed in 0..200 {
            let site = SiteRandomness::new(seed, &e);
            assert_eq!(exit_time(&mut o, &e, 0, 10, &site).unwrap(), Time::At(1));
            for r in 1..6 {
                match exit_time(&mut o, &e, r, 10_000, &site).unwrap() {
                    Time::At(t) => assert!(t > r),
                    Time::Infinity => panic!("exit from a small ball must happen"),
                }
            }
        }
    }

    #[test]
    fn index_walk_matches_element_walk() {
        let g = z3();
        let e = g.spec.identity();
        let mut o = WordMetricOracle::new(g);
        let radii = [2, 4, 7];
        let by_index = exit_times(&mut o, &radii, 200, 50, 9).unwrap();
        for (rep, times) in by_index.iter().enumerate() {
            let site = SiteRandomness::new(replicate_seed(9, rep as u64), &e);
            for (k, &r) in radii.iter().enumerate() {
                assert_eq!(exit_time(&mut o, &e, r, 200, &site).unwrap(), times[k]);
            }
        }
    }

    #[test]
    fn hit_probability_monotone_under_common_randomness() {
        let g = z3();
        let e = g.spec.identity();
        let y = g.spec.element_from_flat(&[1, 1, 0]).unwrap();
        for seed in 0..300 {
            let site = SiteRandomness::new(seed, &e);
            let mut prev = false;
            for n in [1, 2, 5, 10, 50, 200] {
                let hit = hitting_time(&g, &e, &y, n, &site).by(n);
                assert!(hit || !prev);
                prev = hit;
            }
        }
        let q = hit_prob_estimate(&g, &e, &e, 0, 10, 1);
        assert_eq!(q.points[0].estimate, 1.0);
    }

    #[test]
    fn hit_probability_dp_vs_monte_carlo() {
        let g = z3();
        let e = g.spec.identity();
        let y = g.spec.element_from_flat(&[2, 0, 0]).unwrap();
        let mut o = WordMetricOracle::new(g.clone());
        let exact = hit_prob_exact(&mut o, &e, &y, 16).unwrap();
        let mc = hit_prob_estimate(&g, &e, &y, 16, 100_000, 77);
        let p = &mc.points[0];
        assert!((p.estimate - exact).abs() < 4.0 * p.stderr, "{exact} vs {p:?}");
    }

    #[test]
    fn hit_probability_decay_in_distance() {
        // q_e(d^2, d e_1) decays no faster than 1/d: d * q stays bounded below.
        let g = z3();
        let e = g.spec.identity();
        let mut o = WordMetricOracle::new(g.clone());
        let scaled: Vec<f64> = [4u32, 6, 8]
            .iter()
            .map(|&d| {
                let y = g.spec.scale(&g.spec.unit(0), d as i64);
                d as f64 * hit_prob_exact(&mut o, &e, &y, d * d).unwrap()
            })
            .collect();
        // Frozen from the DP: 0.04440, 0.03537, 0.03219. The successive
        // ratios approach 1, i.e. d * q levels off at a positive constant.
        assert!(scaled.iter().all(|&s| s > 0.03), "{scaled:?}");
        assert!(scaled[2] / scaled[1] > scaled[1] / scaled[0], "{scaled:?}");
    }

    #[test]
    fn stats_serialize_to_jsonl() {
        let g = z3();
        let stats = heat_kernel_estimate(&g, &g.spec.identity(), &[2, 4], 100, 5);
        let text = stats.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["quantity"], "heat_kernel");
        assert_eq!(v["replicas"], 100);
        assert_eq!(v["master_seed"], 5);
        assert_eq!(v["params"]["n"], 2.0);
    }

    #[test]
    fn estimators_are_deterministic() {
        let g = z3();
        let a = range_estimate(&g, 500, 20, 4);
        let b = range_estimate(&g, 500, 20, 4);
        assert_eq!(a, b);
    }
}
