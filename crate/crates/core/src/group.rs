//! Finitely generated abelian groups `Z^D ⊕ Z_{m_1} ⊕ … ⊕ Z_{m_ℓ}`, symmetric
//! generating sets and the word metric of their Cayley graphs.
//!
//! The group is written additively. Elements are kept in reduced form at all
//! times (torsion residues in `[0, m_i)`), so equality and hashing are
//! field-wise.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of coordinates (free rank plus torsion factors).
pub const MAX_COORDS: usize = 8;

/// Default cap on the number of cached ball elements.
pub const DEFAULT_BUDGET: usize = 20_000_000;

/// The group `Z^rank ⊕ Z_{m_1} ⊕ … ⊕ Z_{m_ℓ}` in invariant-factor form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    rank: usize,
    torsion_orders: Vec<u32>,
}

/// An element of some [`GroupSpec`]: a free part in `Z^D` followed by torsion residues.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement {
    rank: u8,
    len: u8,
    coords: [i32; MAX_COORDS],
}

impl GroupElement {
    pub fn free_part(&self) -> &[i32] {
        &self.coords[..self.rank as usize]
    }

    pub fn torsion_part(&self) -> &[i32] {
        &self.coords[self.rank as usize..self.len as usize]
    }

    /// Free part followed by torsion part.
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.len as usize]
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn num_coords(&self) -> usize {
        self.len as usize
    }

    pub fn is_identity(&self) -> bool {
        self.coords().iter().all(|&c| c == 0)
    }

    /// Sum of absolute values of the free coordinates.
    pub fn free_l1(&self) -> u64 {
        self.free_part().iter().map(|c| c.unsigned_abs() as u64).sum()
    }

    /// Same torsion residues, free part replaced.
    pub(crate) fn with_free_part(&self, free: &[i32]) -> GroupElement {
        let mut out = *self;
        out.coords[..free.len()].copy_from_slice(free);
        out
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.free_part().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        if self.len > self.rank {
            write!(f, "|")?;
            for (i, c) in self.torsion_part().iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{c}")?;
            }
        }
        write!(f, ")")
    }
}

impl GroupSpec {
    pub fn new(rank: usize, torsion_orders: Vec<u32>) -> Result<Self> {
        if rank + torsion_orders.len() == 0 {
            return Err(Error::TrivialGroup);
        }
        if rank + torsion_orders.len() > MAX_COORDS {
            return Err(Error::TooManyCoordinates(rank + torsion_orders.len()));
        }
        if let Some(&m) = torsion_orders.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidTorsionOrder(m));
        }
        for (j, w) in torsion_orders.windows(2).enumerate() {
            if w[1] % w[0] != 0 {
                return Err(Error::DivisibilityViolation { index: j + 1, current: w[0], next: w[1] });
            }
        }
        Ok(Self { rank, torsion_orders })
    }

    /// `Z^rank`.
    pub fn free(rank: usize) -> Self {
        Self::new(rank, Vec::new()).expect("free group of positive rank")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn torsion_orders(&self) -> &[u32] {
        &self.torsion_orders
    }

    pub fn num_coords(&self) -> usize {
        self.rank + self.torsion_orders.len()
    }

    pub fn is_finite(&self) -> bool {
        self.rank == 0
    }

    /// Order of the torsion subgroup.
    pub fn torsion_size(&self) -> u64 {
        self.torsion_orders.iter().map(|&m| m as u64).product()
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement { rank: self.rank as u8, len: self.num_coords() as u8, coords: [0; MAX_COORDS] }
    }

    /// Builds an element, reducing torsion entries modulo their orders.
    pub fn element(&self, free: &[i64], torsion: &[i64]) -> Result<GroupElement> {
        if free.len() != self.rank || torsion.len() != self.torsion_orders.len() {
            return Err(Error::SpecMismatch(format!(
                "expected {} free and {} torsion coordinates, got {} and {}",
                self.rank,
                self.torsion_orders.len(),
                free.len(),
                torsion.len()
            )));
        }
        let mut e = self.identity();
        for (i, &c) in free.iter().enumerate() {
            e.coords[i] = i32::try_from(c)
                .map_err(|_| Error::InvalidParameter(format!("coordinate {c} out of range")))?;
        }
        for (j, (&c, &m)) in torsion.iter().zip(&self.torsion_orders).enumerate() {
            e.coords[self.rank + j] = c.rem_euclid(m as i64) as i32;
        }
        Ok(e)
    }

    /// Builds an element from the flat layout used by configs and records:
    /// free coordinates followed by torsion coordinates.
    pub fn element_from_flat(&self, coords: &[i64]) -> Result<GroupElement> {
        if coords.len() != self.num_coords() {
            return Err(Error::SpecMismatch(format!(
                "expected {} coordinates, got {}",
                self.num_coords(),
                coords.len()
            )));
        }
        self.element(&coords[..self.rank], &coords[self.rank..])
    }

    /// The `i`-th free unit vector.
    pub fn unit(&self, i: usize) -> GroupElement {
        assert!(i < self.rank, "unit index {i} out of range");
        let mut e = self.identity();
        e.coords[i] = 1;
        e
    }

    /// Whether `x` has this spec's layout and reduced torsion residues.
    pub fn contains(&self, x: &GroupElement) -> bool {
        x.rank as usize == self.rank
            && x.len as usize == self.num_coords()
            && x.torsion_part().iter().zip(&self.torsion_orders).all(|(&c, &m)| c >= 0 && (c as u32) < m)
    }

    fn check(&self, x: &GroupElement) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{x} is not an element of {self}")))
        }
    }

    /// The group law, `a + b`.
    pub fn compose(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.add(a, b))
    }

    #[inline]
    pub(crate) fn add(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        let mut out = *a;
        for i in 0..self.rank {
            out.coords[i] += b.coords[i];
        }
        for (j, &m) in self.torsion_orders.iter().enumerate() {
            let k = self.rank + j;
            let s = out.coords[k] + b.coords[k];
            out.coords[k] = if s >= m as i32 { s - m as i32 } else { s };
        }
        out
    }

    pub(crate) fn sub(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.add(a, &self.inverse(b))
    }

    pub fn inverse(&self, a: &GroupElement) -> GroupElement {
        let mut out = *a;
        for i in 0..self.rank {
            out.coords[i] = -a.coords[i];
        }
        for (j, &m) in self.torsion_orders.iter().enumerate() {
            let k = self.rank + j;
            out.coords[k] = if a.coords[k] == 0 { 0 } else { m as i32 - a.coords[k] };
        }
        out
    }

    /// `k·a`.
    pub fn scale(&self, a: &GroupElement, k: i64) -> GroupElement {
        let mut out = *a;
        for i in 0..self.rank {
            out.coords[i] = (a.coords[i] as i64 * k) as i32;
        }
        for (j, &m) in self.torsion_orders.iter().enumerate() {
            let idx = self.rank + j;
            out.coords[idx] = (a.coords[idx] as i64 * k).rem_euclid(m as i64) as i32;
        }
        out
    }

    /// The torsion-free quotient `Γ / tor Γ ≅ Z^D`.
    pub fn quotient_spec(&self) -> Result<GroupSpec> {
        if self.rank == 0 {
            return Err(Error::DegenerateQuotient("finite group has trivial free quotient".into()));
        }
        Ok(GroupSpec::free(self.rank))
    }

    /// Projection onto `Z^D`: drops the torsion residues.
    pub fn torsion_quotient(&self, x: &GroupElement) -> GroupElement {
        let mut out = GroupElement { rank: self.rank as u8, len: self.rank as u8, coords: [0; MAX_COORDS] };
        out.coords[..self.rank].copy_from_slice(&x.coords[..self.rank]);
        out
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z^{}", self.rank)?;
        for m in &self.torsion_orders {
            write!(f, " + Z_{m}")?;
        }
        Ok(())
    }
}

/// A finite symmetric generating set not containing the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorSet {
    elements: Vec<GroupElement>,
    inverse_index: Vec<usize>,
}

impl GeneratorSet {
    /// Validates symmetry, identity exclusion, distinctness and generation.
    /// Symmetrization is never implicit.
    pub fn new(spec: &GroupSpec, elements: Vec<GroupElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::EmptyGenerators);
        }
        let mut position = FxHashMap::default();
        for (i, s) in elements.iter().enumerate() {
            spec.check(s)?;
            if s.is_identity() {
                return Err(Error::IdentityInGenerators);
            }
            if position.insert(*s, i).is_some() {
                return Err(Error::DuplicateGenerator(*s));
            }
        }
        let mut inverse_index = Vec::with_capacity(elements.len());
        for s in &elements {
            match position.get(&spec.inverse(s)) {
                Some(&j) => inverse_index.push(j),
                None => return Err(Error::AsymmetricGenerators(*s)),
            }
        }
        let index = generated_index(spec, &elements);
        if index != Some(1) {
            return Err(Error::NonGenerating {
                index: index.map_or_else(|| "infinite".to_string(), |i| i.to_string()),
            });
        }
        Ok(Self { elements, inverse_index })
    }

    /// `{±e_i}` on the free part together with `±1` on every torsion factor.
    pub fn standard(spec: &GroupSpec) -> Self {
        let mut elements = Vec::new();
        for i in 0..spec.rank() {
            let u = spec.unit(i);
            elements.push(u);
            elements.push(spec.inverse(&u));
        }
        for (j, &m) in spec.torsion_orders().iter().enumerate() {
            let mut t = spec.identity();
            t.coords[spec.rank() + j] = 1;
            elements.push(t);
            if m > 2 {
                elements.push(spec.inverse(&t));
            }
        }
        Self::new(spec, elements).expect("standard generators are valid")
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Position of `-s_i` in the set.
    pub fn inverse_of(&self, i: usize) -> usize {
        self.inverse_index[i]
    }

    /// Largest absolute free coordinate over all generators.
    pub fn max_free_coord(&self) -> u32 {
        self.elements.iter().flat_map(|s| s.free_part().iter().map(|c| c.unsigned_abs())).max().unwrap_or(0)
    }
}

/// Index of the subgroup generated by `elements` in `spec`, or `None` when
/// it has infinite index.
///
/// Works on the presentation `Z^{D+ℓ} / ⟨m_j e_{D+j}⟩`: the generators
/// together with the torsion relations span a sublattice of `Z^{D+ℓ}` whose
/// determinant is the index.
pub fn generated_index(spec: &GroupSpec, elements: &[GroupElement]) -> Option<u128> {
    let n = spec.num_coords();
    let mut rows: Vec<Vec<i128>> =
        elements.iter().map(|s| s.coords().iter().map(|&c| c as i128).collect()).collect();
    for (j, &m) in spec.torsion_orders().iter().enumerate() {
        let mut r = vec![0i128; n];
        r[spec.rank() + j] = m as i128;
        rows.push(r);
    }
    lattice_determinant(rows, n)
}

fn lattice_determinant(mut rows: Vec<Vec<i128>>, dim: usize) -> Option<u128> {
    let mut det: u128 = 1;
    let mut pivot = 0;
    for col in 0..dim {
        loop {
            let best = (pivot..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].unsigned_abs())?;
            rows.swap(pivot, best);
            let mut done = true;
            for r in pivot + 1..rows.len() {
                let q = rows[r][col] / rows[pivot][col];
                if q != 0 {
                    for c in col..dim {
                        rows[r][c] -= q * rows[pivot][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        det *= rows[pivot][col].unsigned_abs();
        pivot += 1;
    }
    Some(det)
}

/// A Cayley graph: a group together with a generating set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CayleyGraph {
    pub spec: GroupSpec,
    pub generators: GeneratorSet,
}

impl CayleyGraph {
    pub fn new(spec: GroupSpec, generators: GeneratorSet) -> Self {
        Self { spec, generators }
    }

    pub fn standard(spec: GroupSpec) -> Self {
        let generators = GeneratorSet::standard(&spec);
        Self { spec, generators }
    }

    pub fn degree(&self) -> usize {
        self.generators.len()
    }

    #[inline]
    pub fn neighbor(&self, x: &GroupElement, generator: usize) -> GroupElement {
        self.spec.add(x, &self.generators.elements[generator])
    }

    /// The induced Cayley graph on `Γ / tor Γ` with generators
    /// `{ s + tor Γ : s ∈ S }`, identity images removed and duplicates collapsed.
    pub fn torsion_quotient(&self) -> Result<CayleyGraph> {
        let spec = self.spec.quotient_spec()?;
        let mut seen = FxHashMap::default();
        let mut images = Vec::new();
        for s in self.generators.elements() {
            let q = self.spec.torsion_quotient(s);
            if !q.is_identity() && seen.insert(q, ()).is_none() {
                images.push(q);
            }
        }
        let generators = GeneratorSet::new(&spec, images).map_err(|e| Error::DegenerateQuotient(e.to_string()))?;
        Ok(CayleyGraph { spec, generators })
    }
}

/// Adjacency restricted to a ball: `table[i * degree + s]` is the index of
/// `elements[i] + s_s` for every site `i` of `B(e, inner_radius)`.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub degree: usize,
    pub inner_radius: u32,
    pub table: Vec<u32>,
}

impl NeighborTable {
    #[inline(always)]
    pub fn get(&self, site: usize, generator: usize) -> usize {
        self.table[site * self.degree + generator] as usize
    }
}

/// Word metric `d(e, x) = ‖x‖₁`, realized by breadth-first search from `e`
/// and cached as a shell-indexed ball.
#[derive(Clone, Debug)]
pub struct WordMetricOracle {
    graph: CayleyGraph,
    budget: usize,
    elements: Vec<GroupElement>,
    /// `shells[r]..shells[r + 1]` indexes the sphere of radius `r`.
    shells: Vec<usize>,
    index: FxHashMap<GroupElement, u32>,
    complete: bool,
}

impl WordMetricOracle {
    pub fn new(graph: CayleyGraph) -> Self {
        Self::with_budget(graph, DEFAULT_BUDGET)
    }

    pub fn with_budget(graph: CayleyGraph, budget: usize) -> Self {
        let e = graph.spec.identity();
        let mut index = FxHashMap::default();
        index.insert(e, 0);
        Self { graph, budget, elements: vec![e], shells: vec![0, 1], index, complete: false }
    }

    pub fn graph(&self) -> &CayleyGraph {
        &self.graph
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.graph.spec
    }

    pub fn generators(&self) -> &GeneratorSet {
        &self.graph.generators
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Radius up to which distances are cached.
    pub fn radius(&self) -> u32 {
        (self.shells.len() - 2) as u32
    }

    /// Extends the cache by BFS until it covers `B(e, r)`.
    pub fn ensure_radius(&mut self, r: u32) -> Result<()> {
        while self.radius() < r {
            if self.complete {
                let n = self.elements.len();
                self.shells.push(n);
                continue;
            }
            let start = self.shells[self.shells.len() - 2];
            let end = self.shells[self.shells.len() - 1];
            for i in start..end {
                let x = self.elements[i];
                for g in 0..self.graph.degree() {
                    let y = self.graph.neighbor(&x, g);
                    if let std::collections::hash_map::Entry::Vacant(slot) = self.index.entry(y) {
                        if self.elements.len() >= self.budget {
                            let needed = self.elements.len() + 1;
                            for z in self.elements.drain(end..) {
                                self.index.remove(&z);
                            }
                            return Err(Error::BudgetExceeded { needed, budget: self.budget });
                        }
                        slot.insert(self.elements.len() as u32);
                        self.elements.push(y);
                    }
                }
            }
            if self.elements.len() == end {
                self.complete = true;
            }
            self.shells.push(self.elements.len());
        }
        Ok(())
    }

    /// Cached distance `d(e, x)`, if `x` lies within the cached radius.
    #[inline]
    pub fn distance(&self, x: &GroupElement) -> Option<u32> {
        self.index.get(x).map(|&i| self.shell_of(i as usize))
    }

    /// Position of `x` in BFS order, if cached.
    #[inline]
    pub fn index_of(&self, x: &GroupElement) -> Option<usize> {
        self.index.get(x).map(|&i| i as usize)
    }

    /// Radius of the sphere containing the element at BFS position `i`.
    pub fn shell_of(&self, i: usize) -> u32 {
        (self.shells.partition_point(|&s| s <= i) - 1) as u32
    }

    /// Cached elements of `B(e, r)` in BFS order. Requires `r <= radius()`.
    pub fn ball_elements(&self, r: u32) -> &[GroupElement] {
        &self.elements[..self.shells[r as usize + 1]]
    }

    /// Cached elements of the sphere of radius `r`.
    pub fn sphere_elements(&self, r: u32) -> &[GroupElement] {
        &self.elements[self.shells[r as usize]..self.shells[r as usize + 1]]
    }

    /// `|B(e, r)|`.
    pub fn ball_size(&mut self, r: u32) -> Result<usize> {
        self.ensure_radius(r)?;
        Ok(self.shells[r as usize + 1])
    }

    /// `‖x‖₁`, extending the cache as needed.
    pub fn word_norm(&mut self, x: &GroupElement) -> Result<u32> {
        self.graph.spec.check(x)?;
        loop {
            if let Some(d) = self.distance(x) {
                return Ok(d);
            }
            if self.complete {
                return Err(Error::SpecMismatch(format!("{x} unreachable from the identity")));
            }
            self.ensure_radius(self.radius() + 1)?;
        }
    }

    /// `d(x, y) = ‖y - x‖₁`.
    pub fn distance_between(&mut self, x: &GroupElement, y: &GroupElement) -> Result<u32> {
        let d = self.graph.spec.compose(&self.graph.spec.inverse(x), y)?;
        self.word_norm(&d)
    }

    /// `B(center, r) = center + B(e, r)`.
    pub fn ball(&mut self, center: &GroupElement, r: u32) -> Result<Vec<GroupElement>> {
        self.graph.spec.check(center)?;
        self.ensure_radius(r)?;
        let spec = &self.graph.spec;
        Ok(self.ball_elements(r).iter().map(|y| spec.add(center, y)).collect())
    }

    /// Least-squares slope of `log |B(e, r)|` against `log r` over `r ∈ [r_max/2, r_max]`.
    pub fn growth_exponent_estimate(&mut self, r_max: u32) -> Result<f64> {
        if r_max < 4 {
            return Err(Error::InvalidParameter(format!("r_max = {r_max} must be at least 4")));
        }
        self.ensure_radius(r_max)?;
        let pts: Vec<(f64, f64)> = (r_max / 2..=r_max)
            .map(|r| ((r as f64).ln(), (self.shells[r as usize + 1] as f64).ln()))
            .collect();
        Ok(crate::stats::linear_fit(&pts).slope)
    }

    /// A geodesic `e = x_0, …, x_n = x` with `n = ‖x‖₁`. At every step the
    /// lexicographically least admissible successor is taken.
    pub fn geodesic(&mut self, x: &GroupElement) -> Result<Vec<GroupElement>> {
        let n = self.word_norm(x)?;
        let spec = self.graph.spec.clone();
        let mut path = vec![spec.identity()];
        let mut u = spec.identity();
        for i in 0..n {
            let remaining = n - i - 1;
            let next = (0..self.graph.degree())
                .map(|g| self.graph.neighbor(&u, g))
                .filter(|v| self.distance(&spec.sub(x, v)) == Some(remaining))
                .min()
                .expect("BFS distances admit a geodesic successor");
            path.push(next);
            u = next;
        }
        Ok(path)
    }

    /// Adjacency for all sites of `B(e, inner_radius)`; targets lie in
    /// `B(e, inner_radius + 1)`, which is cached first.
    pub fn neighbor_table(&mut self, inner_radius: u32) -> Result<NeighborTable> {
        self.ensure_radius(inner_radius + 1)?;
        let n = self.shells[inner_radius as usize + 1];
        let degree = self.graph.degree();
        let mut table = Vec::with_capacity(n * degree);
        for x in &self.elements[..n] {
            for g in 0..degree {
                let y = self.graph.neighbor(x, g);
                table.push(self.index[&y]);
            }
        }
        Ok(NeighborTable { degree, inner_radius, table })
    }

    /// `neg[i]` is the BFS index of `-elements[i]`, for all of `B(e, r)`.
    pub fn negation_table(&mut self, r: u32) -> Result<Vec<u32>> {
        self.ensure_radius(r)?;
        let spec = &self.graph.spec;
        Ok(self.ball_elements(r).iter().map(|x| self.index[&spec.inverse(x)]).collect())
    }
}
