//! Exact discrete-time frog dynamics.
//!
//! One frog sleeps on every site. At time 0 only the frog at `e` is awake.
//! At each step every awake frog moves one step of its own site stream;
//! afterwards every sleeping site that holds an awake frog wakes up, with
//! its frog placed at its origin. A frog woken at time `n` makes its first
//! move at time `n + 1`.
//!
//! Sleeping frogs are only placed on `B(e, horizon)`. Since
//! `T(e, x) >= ‖x‖₁`, nothing outside that ball can wake by the horizon and
//! the truncation loses nothing: runs at different horizons agree exactly
//! on every activation they both cover. For the same reason an awake frog
//! at time `t` sits in `B(e, t)`, which is what lets the simulator address
//! sites through a dense box instead of a hash map.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{CayleyGraph, GeneratorSet, GroupElement, GroupSpec, WordMetricOracle, MAX_COORDS};
use crate::rng::{bounded, replicate_seed, stream_word, SiteRandomness};
use crate::stats::{bootstrap_quantile_stderr, linear_fit, mean_estimate, quantile};
use crate::walk::Time;

/// Largest dense box the simulator will allocate.
pub const MAX_BOX_CELLS: usize = 1 << 27;

const NOT_A_SITE: u32 = u32::MAX;

/// Precomputed environment shared by every realization up to a horizon:
/// the ball `B(e, horizon)` and a dense box addressing scheme for it.
#[derive(Clone, Debug)]
pub struct FrogLattice {
    graph: CayleyGraph,
    horizon: u32,
    sites: Vec<GroupElement>,
    norms: Vec<u32>,
    offsets: [i32; MAX_COORDS],
    strides: [usize; MAX_COORDS],
    box_site: Vec<u32>,
    sleeping_template: Vec<u64>,
}

impl FrogLattice {
    /// Number of cells of the dense box covering `B(e, horizon)`.
    pub fn box_cells(graph: &CayleyGraph, horizon: u32) -> Result<usize> {
        Ok(Self::box_layout(graph, horizon)?.2)
    }

    fn box_layout(graph: &CayleyGraph, horizon: u32) -> Result<([i32; MAX_COORDS], [usize; MAX_COORDS], usize)> {
        let spec = &graph.spec;
        let reach = horizon as u64 * graph.generators.max_free_coord() as u64;
        let mut offsets = [0i32; MAX_COORDS];
        let mut strides = [0usize; MAX_COORDS];
        let mut cells: u128 = 1;
        for k in (0..spec.num_coords()).rev() {
            let extent = if k < spec.rank() {
                offsets[k] = reach.min(i32::MAX as u64) as i32;
                2 * reach as u128 + 1
            } else {
                spec.torsion_orders()[k - spec.rank()] as u128
            };
            strides[k] = cells.min(usize::MAX as u128) as usize;
            cells = cells.saturating_mul(extent);
        }
        if cells > MAX_BOX_CELLS as u128 {
            return Err(Error::BudgetExceeded { needed: cells.min(usize::MAX as u128) as usize, budget: MAX_BOX_CELLS });
        }
        Ok((offsets, strides, cells as usize))
    }

    /// Enumerates `B(e, horizon)` with the oracle (extending its cache).
    pub fn new(oracle: &mut WordMetricOracle, horizon: u32) -> Result<Self> {
        let (offsets, strides, cells) = Self::box_layout(oracle.graph(), horizon)?;
        oracle.ensure_radius(horizon)?;
        let graph = oracle.graph().clone();
        let sites = oracle.ball_elements(horizon).to_vec();
        let norms = (0..sites.len()).map(|i| oracle.shell_of(i)).collect();
        let mut lattice = Self {
            graph,
            horizon,
            sites,
            norms,
            offsets,
            strides,
            box_site: vec![NOT_A_SITE; cells],
            sleeping_template: vec![0; cells.div_ceil(64)],
        };
        for (i, x) in lattice.sites.iter().enumerate() {
            let b = lattice.box_index(x);
            lattice.box_site[b] = i as u32;
            lattice.sleeping_template[b / 64] |= 1 << (b % 64);
        }
        Ok(lattice)
    }

    /// Builds the lattice with a temporary oracle under `budget`.
    pub fn build(graph: CayleyGraph, horizon: u32, budget: usize) -> Result<Self> {
        let mut oracle = WordMetricOracle::with_budget(graph, budget);
        Self::new(&mut oracle, horizon)
    }

    pub fn graph(&self) -> &CayleyGraph {
        &self.graph
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Sites of `B(e, horizon)` in BFS order.
    pub fn sites(&self) -> &[GroupElement] {
        &self.sites
    }

    #[inline(always)]
    fn box_index(&self, x: &GroupElement) -> usize {
        let mut idx = 0usize;
        for (k, &c) in x.coords().iter().enumerate() {
            idx += (c + self.offsets[k]) as usize * self.strides[k];
        }
        idx
    }

    /// BFS index of `x` if it lies in `B(e, horizon)`.
    pub fn site_index(&self, x: &GroupElement) -> Option<usize> {
        if !self.graph.spec.contains(x) {
            return None;
        }
        for (k, &c) in x.free_part().iter().enumerate() {
            if c.unsigned_abs() > self.offsets[k] as u32 {
                return None;
            }
        }
        match self.box_site[self.box_index(x)] {
            NOT_A_SITE => None,
            i => Some(i as usize),
        }
    }

    /// `‖x‖₁` for sites of the ball.
    pub fn norm(&self, x: &GroupElement) -> Option<u32> {
        self.site_index(x).map(|i| self.norms[i])
    }
}

/// Public view of one awake frog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrogState {
    pub origin: GroupElement,
    pub position: GroupElement,
    pub local_clock: u32,
    pub activation_time: u32,
}

/// One realization in progress.
pub struct SimulationState<'a> {
    lattice: &'a FrogLattice,
    master_seed: u64,
    time: u32,
    /// The run may not advance past this time (positions must stay inside the box).
    limit: u32,
    sleeping: Vec<u64>,
    positions: Vec<GroupElement>,
    keys: Vec<u64>,
    activated_at: Vec<u32>,
    origins: Vec<u32>,
}

impl<'a> SimulationState<'a> {
    /// The frog at `e` awake at time 0, every other site of the ball asleep.
    pub fn init(lattice: &'a FrogLattice, master_seed: u64) -> Self {
        let e = lattice.graph.spec.identity();
        Self::init_at(lattice, master_seed, &e).expect("identity is always a site")
    }

    /// Same dynamics started from a single awake frog at `start`. The run
    /// can advance `horizon - ‖start‖₁` steps.
    pub fn init_at(lattice: &'a FrogLattice, master_seed: u64, start: &GroupElement) -> Result<Self> {
        let site = lattice
            .site_index(start)
            .ok_or_else(|| Error::InvalidParameter(format!("start {start} is outside the lattice")))?;
        let mut sleeping = lattice.sleeping_template.clone();
        let b = lattice.box_index(start);
        sleeping[b / 64] &= !(1 << (b % 64));
        Ok(Self {
            lattice,
            master_seed,
            time: 0,
            limit: lattice.horizon - lattice.norms[site],
            sleeping,
            positions: vec![*start],
            keys: vec![SiteRandomness::new(master_seed, start).key()],
            activated_at: vec![0],
            origins: vec![site as u32],
        })
    }

    pub fn global_time(&self) -> u32 {
        self.time
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn active_count(&self) -> usize {
        self.positions.len()
    }

    pub fn sleeping_count(&self) -> usize {
        self.sleeping.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn active_frogs(&self) -> impl Iterator<Item = FrogState> + '_ {
        (0..self.positions.len()).map(move |i| FrogState {
            origin: self.lattice.sites[self.origins[i] as usize],
            position: self.positions[i],
            local_clock: self.time - self.activated_at[i],
            activation_time: self.activated_at[i],
        })
    }

    /// Activation time of the frog originally at `x`, if it is awake.
    pub fn activation_time(&self, x: &GroupElement) -> Option<u32> {
        let b = self.lattice.site_index(x).map(|_| self.lattice.box_index(x))?;
        if self.sleeping[b / 64] >> (b % 64) & 1 == 1 {
            return None;
        }
        self.origins
            .iter()
            .position(|&o| self.lattice.sites[o as usize] == *x)
            .map(|i| self.activated_at[i])
    }

    fn is_sleeping_site(&self, site: usize) -> bool {
        let b = self.lattice.box_index(&self.lattice.sites[site]);
        self.sleeping[b / 64] >> (b % 64) & 1 == 1
    }

    /// Advances the system by one time unit.
    pub fn step(&mut self) -> Result<()> {
        if self.time >= self.limit {
            return Err(Error::OutOfHorizon { query: self.time + 1, horizon: self.limit });
        }
        let next = self.time + 1;
        let lattice = self.lattice;
        let spec = &lattice.graph.spec;
        let gens = lattice.graph.generators.elements();
        let degree = gens.len();
        let mut woken: Vec<u32> = Vec::new();
        for i in 0..self.positions.len() {
            let local = (next - self.activated_at[i]) as u64;
            let g = bounded(stream_word(self.keys[i], local), degree);
            let p = spec.add(&self.positions[i], &gens[g]);
            self.positions[i] = p;
            let b = lattice.box_index(&p);
            let word = &mut self.sleeping[b / 64];
            let bit = 1u64 << (b % 64);
            if *word & bit != 0 {
                *word &= !bit;
                woken.push(lattice.box_site[b]);
            }
        }
        for site in woken {
            let origin = lattice.sites[site as usize];
            self.positions.push(origin);
            self.keys.push(SiteRandomness::new(self.master_seed, &origin).key());
            self.activated_at.push(next);
            self.origins.push(site);
        }
        self.time = next;
        Ok(())
    }

    pub fn run_to(&mut self, time: u32) -> Result<()> {
        while self.time < time {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until every site in `targets` is awake or the horizon is
    /// reached. Returns the activation time of each target.
    pub fn run_until_active(&mut self, targets: &[GroupElement]) -> Result<Vec<Time>> {
        let sites: Vec<usize> = targets
            .iter()
            .map(|x| self.lattice.site_index(x).ok_or_else(|| Error::InvalidParameter(format!("target {x} is outside the lattice"))))
            .collect::<Result<_>>()?;
        let mut times = vec![Time::Infinity; targets.len()];
        let mut pending = targets.len();
        loop {
            for (k, &s) in sites.iter().enumerate() {
                if times[k] == Time::Infinity && !self.is_sleeping_site(s) {
                    times[k] = Time::At(self.activation_time_of_site(s));
                    pending -= 1;
                }
            }
            if pending == 0 || self.time >= self.limit {
                return Ok(times);
            }
            self.step()?;
        }
    }

    fn activation_time_of_site(&self, site: usize) -> u32 {
        // Sites woken at the current step sit at the end; scan backwards.
        let i = self.origins.iter().rposition(|&o| o as usize == site).expect("awake site has a frog");
        self.activated_at[i]
    }

    pub fn into_record(self) -> ActivationRecord {
        let activations = self
            .origins
            .iter()
            .zip(&self.activated_at)
            .map(|(&o, &t)| (self.lattice.sites[o as usize], t))
            .collect();
        ActivationRecord {
            graph: self.lattice.graph.clone(),
            horizon: self.time,
            master_seed: self.master_seed,
            activations,
        }
    }
}

/// Activation times `T(e, x)` of one realization, up to `horizon`.
///
/// Entries are in order of activation (non-decreasing time), so the
/// activation ball at time `n` is a prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationRecord {
    pub graph: CayleyGraph,
    pub horizon: u32,
    pub master_seed: u64,
    pub activations: Vec<(GroupElement, u32)>,
}

/// `init_state`: a fresh realization on `lattice`.
pub fn init_state(lattice: &FrogLattice, master_seed: u64) -> SimulationState<'_> {
    SimulationState::init(lattice, master_seed)
}

/// Runs one realization to the lattice horizon.
pub fn run(lattice: &FrogLattice, master_seed: u64) -> ActivationRecord {
    let mut state = SimulationState::init(lattice, master_seed);
    state.run_to(lattice.horizon).expect("horizon is reachable from e");
    state.into_record()
}

/// Activation times of `targets` in one realization, stopping as soon as all are awake.
pub fn activation_times(lattice: &FrogLattice, master_seed: u64, targets: &[GroupElement]) -> Result<Vec<Time>> {
    SimulationState::init(lattice, master_seed).run_until_active(targets)
}

impl ActivationRecord {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    /// Number of sites with `T(e, x) <= n`.
    pub fn count_up_to(&self, n: u32) -> usize {
        self.activations.partition_point(|&(_, t)| t <= n)
    }

    /// `B_ω(e, n) = { x : T(e, x) <= n }`.
    pub fn activation_ball(&self, n: u32) -> Result<Vec<GroupElement>> {
        if n > self.horizon {
            return Err(Error::OutOfHorizon { query: n, horizon: self.horizon });
        }
        Ok(self.activations[..self.count_up_to(n)].iter().map(|&(x, _)| x).collect())
    }

    pub fn get(&self, x: &GroupElement) -> Option<u32> {
        self.activations.iter().find(|(y, _)| y == x).map(|&(_, t)| t)
    }

    /// Writes a header line followed by one `{site, time}` line per activation.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = RecordHeader {
            kind: "activation_record".into(),
            rank: self.graph.spec.rank(),
            torsion_orders: self.graph.spec.torsion_orders().to_vec(),
            generators: self.graph.generators.elements().iter().map(flat).collect(),
            horizon: self.horizon,
            master_seed: self.master_seed,
            count: self.activations.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (x, t) in &self.activations {
            serde_json::to_writer(&mut out, &RecordLine { site: flat(x), time: *t })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let fmt = |e: &dyn std::fmt::Display| Error::Format(e.to_string());
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::Format("missing header".into()))?.map_err(|e| fmt(&e))?;
        let header: RecordHeader = serde_json::from_str(&first).map_err(|e| fmt(&e))?;
        if header.kind != "activation_record" {
            return Err(Error::Format(format!("unexpected record kind {}", header.kind)));
        }
        let spec = GroupSpec::new(header.rank, header.torsion_orders)?;
        let gens = header.generators.iter().map(|c| spec.element_from_flat(c)).collect::<Result<Vec<_>>>()?;
        let graph = CayleyGraph::new(spec.clone(), GeneratorSet::new(&spec, gens)?);
        let mut activations = Vec::with_capacity(header.count);
        for line in lines {
            let line = line.map_err(|e| fmt(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line).map_err(|e| fmt(&e))?;
            activations.push((spec.element_from_flat(&rec.site)?, rec.time));
        }
        if activations.len() != header.count {
            return Err(Error::Format(format!("header announces {} activations, found {}", header.count, activations.len())));
        }
        Ok(Self { graph, horizon: header.horizon, master_seed: header.master_seed, activations })
    }
}

fn flat(x: &GroupElement) -> Vec<i64> {
    x.coords().iter().map(|&c| c as i64).collect()
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    kind: String,
    rank: usize,
    torsion_orders: Vec<u32>,
    generators: Vec<Vec<i64>>,
    horizon: u32,
    master_seed: u64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    site: Vec<i64>,
    time: u32,
}

/// Empirical survival function `P(T(e, target) >= n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub target: Vec<i64>,
    pub target_norm: u32,
    pub n_values: Vec<u32>,
    pub survival: Vec<f64>,
    pub replicas: usize,
    /// Replicates in which the target was still asleep at the horizon.
    pub censored: usize,
    /// Smallest observed activation time.
    pub min_time: Option<u32>,
    pub master_seed: u64,
}

/// Shape diagnostics of a survival curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailShape {
    /// `P(T >= n)` never increases along `n_values`.
    pub non_increasing: bool,
    /// Points `(n, S(n))` used for the fits: the parity class of the target
    /// (the only one carrying jumps on bipartite graphs, a harmless thinning
    /// otherwise), `n >= ‖target‖`, and enough survivors to be meaningful.
    pub points: Vec<(u32, f64)>,
    /// Least-squares slope of the discrete hazard `ln S(n) - ln S(n')`
    /// between consecutive points against `n`; positive means `ln S` bends
    /// downward (log-concave trend).
    pub hazard_slope: f64,
    /// Exponent `β` of a fit `-ln S(n) ≈ c·n^β`.
    pub stretched_exponent: f64,
    pub stretched_r_squared: f64,
}

impl TailCurve {
    /// Fits the tail shape; `None` when fewer than four points qualify.
    pub fn shape(&self, min_survivors: usize) -> Option<TailShape> {
        let non_increasing = self.survival.windows(2).all(|w| w[1] <= w[0]);
        let points: Vec<(u32, f64)> = self
            .n_values
            .iter()
            .zip(&self.survival)
            .filter(|(&n, &s)| {
                n >= self.target_norm && (n - self.target_norm).is_multiple_of(2) && s * self.replicas as f64 >= min_survivors as f64
            })
            .map(|(&n, &s)| (n, s))
            .collect();
        let decaying: Vec<(f64, f64)> = points.iter().filter(|p| p.1 < 1.0).map(|&(n, s)| ((n as f64).ln(), (-s.ln()).ln())).collect();
        if points.len() < 4 || decaying.len() < 2 {
            return None;
        }
        let hazards: Vec<(f64, f64)> = points.windows(2).map(|w| (w[0].0 as f64, w[0].1.ln() - w[1].1.ln())).collect();
        let hazard = linear_fit(&hazards);
        let stretched = linear_fit(&decaying);
        Some(TailShape {
            non_increasing,
            points,
            hazard_slope: hazard.slope,
            stretched_exponent: stretched.slope,
            stretched_r_squared: stretched.r_squared,
        })
    }
}

pub fn t_tail_experiment(lattice: &FrogLattice, target: &GroupElement, n_values: &[u32], replicas: usize, master_seed: u64) -> Result<TailCurve> {
    if let Some(&n) = n_values.iter().find(|&&n| n > lattice.horizon + 1) {
        return Err(Error::OutOfHorizon { query: n, horizon: lattice.horizon + 1 });
    }
    let target_norm = lattice
        .norm(target)
        .ok_or_else(|| Error::InvalidParameter(format!("target {target} lies outside B(e, {})", lattice.horizon)))?;
    let times: Vec<Time> = (0..replicas)
        .into_par_iter()
        .map(|r| activation_times(lattice, replicate_seed(master_seed, r as u64), std::slice::from_ref(target)).map(|t| t[0]))
        .collect::<Result<_>>()?;
    let survival = n_values
        .iter()
        .map(|&n| times.iter().filter(|t| !t.by(n.saturating_sub(1)) || n == 0).count() as f64 / replicas as f64)
        .collect();
    Ok(TailCurve {
        target: flat(target),
        target_norm,
        n_values: n_values.to_vec(),
        survival,
        replicas,
        censored: times.iter().filter(|t| **t == Time::Infinity).count(),
        min_time: times.iter().filter_map(|t| t.finite()).min(),
        master_seed,
    })
}

/// Distribution of `T(e, k·v) / ‖k·v‖₁` for one `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub k: u32,
    pub norm: u32,
    pub mean: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    /// Bootstrap standard error of `q99`.
    pub q99_stderr: f64,
    pub censored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    pub direction: Vec<i64>,
    pub replicas: usize,
    pub master_seed: u64,
    pub rows: Vec<GrowthRow>,
}

/// Ratios `T(e, k·direction) / ‖k·direction‖₁`; all `k` share each replicate's realization.
/// Censored activations count as `horizon + 1`, a lower bound.
pub fn linear_growth_experiment(lattice: &FrogLattice, direction: &GroupElement, ks: &[u32], replicas: usize, master_seed: u64) -> Result<GrowthTable> {
    let spec = &lattice.graph.spec;
    let targets: Vec<GroupElement> = ks.iter().map(|&k| spec.scale(direction, k as i64)).collect();
    let norms: Vec<u32> = targets
        .iter()
        .map(|x| lattice.norm(x).ok_or_else(|| Error::InvalidParameter(format!("target {x} lies outside B(e, {})", lattice.horizon))))
        .collect::<Result<_>>()?;
    let times: Vec<Vec<Time>> = (0..replicas)
        .into_par_iter()
        .map(|r| activation_times(lattice, replicate_seed(master_seed, r as u64), &targets))
        .collect::<Result<_>>()?;
    let rows = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mut ratios: Vec<f64> = times
                .iter()
                .map(|t| t[j].finite().unwrap_or(lattice.horizon + 1) as f64 / norms[j] as f64)
                .collect();
            ratios.sort_by(f64::total_cmp);
            let m = mean_estimate(&ratios);
            GrowthRow {
                k,
                norm: norms[j],
                mean: m.mean,
                stderr: m.stderr,
                min: *ratios.first().unwrap_or(&f64::NAN),
                max: *ratios.last().unwrap_or(&f64::NAN),
                q50: quantile(&ratios, 0.5),
                q90: quantile(&ratios, 0.9),
                q99: quantile(&ratios, 0.99),
                q99_stderr: bootstrap_quantile_stderr(&ratios, 0.99, 1000, master_seed ^ k as u64),
                censored: times.iter().filter(|t| t[j] == Time::Infinity).count(),
            }
        })
        .collect();
    Ok(GrowthTable { direction: flat(direction), replicas, master_seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z3_lattice(h: u32) -> FrogLattice {
        FrogLattice::build(CayleyGraph::standard(GroupSpec::free(3)), h, 10_000_000).unwrap()
    }

    #[test]
    fn initial_state() {
        let lat = z3_lattice(0);
        let s = init_state(&lat, 1);
        assert_eq!(s.active_count(), 1);
        assert_eq!(s.sleeping_count(), 0);

        let lat5 = z3_lattice(5);
        let s = init_state(&lat5, 1);
        let mut o = WordMetricOracle::new(CayleyGraph::standard(GroupSpec::free(3)));
        assert_eq!(s.sleeping_count(), o.ball_size(5).unwrap() - 1);
        assert_eq!(s.sleeping_count(), 230);
        let f: Vec<FrogState> = s.active_frogs().collect();
        assert_eq!(f.len(), 1);
        assert!(f[0].origin.is_identity() && f[0].local_clock == 0 && f[0].activation_time == 0);
    }

    #[test]
    fn first_step_wakes_one_neighbor() {
        let lat = z3_lattice(4);
        for seed in 0..50 {
            let mut s = init_state(&lat, seed);
            s.step().unwrap();
            let frogs: Vec<FrogState> = s.active_frogs().collect();
            assert_eq!(frogs.len(), 2);
            let moved = frogs[0].position;
            assert!(lat.graph().generators.elements().contains(&moved));
            assert_eq!(frogs[1].origin, moved);
            assert_eq!(frogs[1].position, moved);
            assert_eq!(frogs[1].local_clock, 0);
            assert_eq!(s.activation_time(&moved), Some(1));
        }
    }

    #[test]
    fn first_activation_is_uniform_over_generators() {
        let lat = z3_lattice(1);
        let n = 100_000;
        let s = lat.graph().spec.unit(0);
        let hits = (0..n)
            .filter(|&seed| activation_times(&lat, replicate_seed(3, seed), &[s]).unwrap()[0] == Time::At(1))
            .count();
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn stepping_past_the_horizon_fails() {
        let lat = z3_lattice(2);
        let mut s = init_state(&lat, 0);
        s.run_to(2).unwrap();
        assert!(matches!(s.step(), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn record_invariants() {
        let lat = z3_lattice(25);
        for seed in 0..5 {
            let rec = run(&lat, seed);
            assert_eq!(rec.activations[0], (lat.graph().spec.identity(), 0));
            assert_eq!(rec.get(&lat.graph().spec.identity()), Some(0));
            let mut seen = std::collections::HashSet::new();
            let mut last = 0;
            for &(x, t) in &rec.activations {
                assert!(seen.insert(x), "{x} activated twice");
                assert!(t >= last);
                last = t;
                assert!(t >= lat.norm(&x).unwrap());
                assert!(t <= rec.horizon);
            }
            assert_eq!(rec.activation_ball(0).unwrap(), vec![lat.graph().spec.identity()]);
            for n in 0..25 {
                let a = rec.activation_ball(n).unwrap();
                let b = rec.activation_ball(n + 1).unwrap();
                assert!(a.len() <= b.len() && a[..] == b[..a.len()]);
                assert!(a.iter().all(|x| lat.norm(x).unwrap() <= n));
            }
            assert!(matches!(rec.activation_ball(26), Err(Error::OutOfHorizon { .. })));
        }
    }

    #[test]
    fn active_set_matches_record_at_every_time() {
        let lat = z3_lattice(15);
        let mut s = init_state(&lat, 8);
        for _ in 0..15 {
            s.step().unwrap();
            let now = s.global_time();
            for f in s.active_frogs() {
                assert!(f.activation_time <= now);
                assert_eq!(f.activation_time + f.local_clock, now);
            }
        }
        let rec = s.into_record();
        assert_eq!(rec.horizon, 15);
    }

    #[test]
    fn frogs_follow_their_own_streams() {
        let lat = z3_lattice(12);
        let mut s = init_state(&lat, 21);
        s.run_to(12).unwrap();
        let graph = lat.graph().clone();
        for f in s.active_frogs() {
            let site = SiteRandomness::new(21, &f.origin);
            let traj = crate::walk::simulate_walk(&graph, &f.origin, f.local_clock as usize, &site);
            assert_eq!(*traj.positions.last().unwrap(), f.position);
        }
    }

    #[test]
    fn truncation_is_exact() {
        let short = z3_lattice(12);
        let long = z3_lattice(22);
        for seed in 0..4 {
            let a = run(&short, seed);
            let b = run(&long, seed);
            assert_eq!(a.activation_ball(12).unwrap(), b.activation_ball(12).unwrap());
            assert_eq!(a.activations[..], b.activations[..b.count_up_to(12)]);
        }
    }

    #[test]
    fn subadditivity_witness() {
        // T(e, x) <= T(e, y) + T~(y, x), where T~ comes from a y-started run on the same streams.
        let lat = z3_lattice(30);
        for seed in 0..6 {
            let rec = run(&lat, seed);
            let ys: Vec<(GroupElement, u32)> = rec.activations.iter().copied().filter(|&(_, t)| t <= 8).step_by(7).take(4).collect();
            for (y, ty) in ys {
                let mut sub = SimulationState::init_at(&lat, seed, &y).unwrap();
                let steps = 30 - lat.norm(&y).unwrap();
                sub.run_to(steps).unwrap();
                let sub_rec = sub.into_record();
                for &(x, tyx) in &sub_rec.activations {
                    if let Some(tx) = rec.get(&x) {
                        assert!(tx <= ty + tyx, "T(e,{x})={tx} > T(e,{y})={ty} + {tyx}");
                    } else {
                        // Not awake by 30 in the e-run: the bound must exceed the horizon.
                        assert!(ty + tyx > 30 || lat.norm(&x).is_none(), "{x} {ty} {tyx}");
                    }
                }
            }
        }
    }

    #[test]
    fn record_jsonl_round_trip() {
        let spec = GroupSpec::new(2, vec![2]).unwrap();
        let lat = FrogLattice::build(CayleyGraph::standard(spec), 10, 1_000_000).unwrap();
        let rec = run(&lat, 4);
        let mut buf = Vec::new();
        rec.write_jsonl(&mut buf).unwrap();
        let back = ActivationRecord::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, rec);
        let bad = ActivationRecord::read_jsonl(std::io::Cursor::new(b"{\"kind\":\"x\"}\n".to_vec()));
        assert!(bad.is_err());
    }

    #[test]
    fn tail_curve_basics() {
        let lat = z3_lattice(20);
        let target = lat.graph().spec.element_from_flat(&[2, 0, 0]).unwrap();
        let ns: Vec<u32> = (0..=21).collect();
        let curve = t_tail_experiment(&lat, &target, &ns, 300, 2).unwrap();
        assert_eq!(curve.survival[1], 1.0);
        assert_eq!(curve.survival[2], 1.0);
        for w in curve.survival.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn growth_ratios() {
        let lat = z3_lattice(30);
        let e1 = lat.graph().spec.unit(0);
        let table = linear_growth_experiment(&lat, &e1, &[1, 3, 6], 50, 5).unwrap();
        for row in &table.rows {
            assert!(row.q50 >= 1.0 && row.max >= row.q99 && row.q99 >= row.q90);
        }
        // k = 1: the ratio is T(e, e_1) itself.
        let direct: Vec<f64> = (0..50)
            .map(|r| activation_times(&lat, replicate_seed(5, r), &[e1]).unwrap()[0].finite().unwrap() as f64)
            .collect();
        let m = mean_estimate(&direct);
        assert!((table.rows[0].mean - m.mean).abs() < 1e-12);
    }
}
