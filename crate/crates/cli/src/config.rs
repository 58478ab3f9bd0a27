//! Experiment configuration: a TOML document with typed fields.
//!
//! ```toml
//! master_seed = 42              # mandatory
//! parallelism = 4               # worker threads, default 1
//! memory_budget = 20000000      # max ball elements, default 20_000_000
//! output_dir = "runs/example"   # default "froglab-out"
//!
//! [group]
//! rank = 3
//! torsion_orders = []           # m_1 | m_2 | ...
//! generators = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
//!
//! [[experiments]]
//! kind = "linear_growth"
//! direction = [1, 0, 0]
//! ks = [5, 10, 20, 40]
//! replicas = 200
//! horizon = 120
//! q99_compare = [10, 40]
//! ```
//!
//! Generators are integer tuples, the free part followed by the torsion
//! part. They are never symmetrized: every `s` must be listed together with
//! `-s`. Leaving `generators` out selects the standard set `{±e_i}`.
//!
//! Seeds are taken modulo `2^63` (TOML integers are signed 64-bit).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use froglab_core::frog::FrogLattice;
use froglab_core::group::{DEFAULT_BUDGET, GeneratorSet};
use froglab_core::shape::Metric;
use froglab_core::{CayleyGraph, GroupSpec};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_budget")]
    pub memory_budget: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub group: GroupConfig,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub rank: usize,
    #[serde(default)]
    pub torsion_orders: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<Vec<i64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    WalkDiagnostics(WalkDiagnostics),
    FrogTails(FrogTails),
    LinearGrowth(LinearGrowth),
    Shape(Shape),
    TorsionCompare(TorsionCompare),
    Symmetry(Symmetry),
}

/// Heat kernel, range and exit-time diagnostics of the simple random walk.
/// Each part runs only when its main parameter is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkDiagnostics {
    /// Inclusive range of times for the exact log-log fit of `p_n(e,e)`;
    /// times with `p_n(e,e) = 0` are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_kernel_n: Option<[u32; 2]>,
    /// Expected slope of the fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_kernel_slope: Option<f64>,
    /// Allowed `|slope - heat_kernel_slope|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_kernel_slope_tolerance: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_n: Option<usize>,
    #[serde(default = "default_replicas")]
    pub range_replicas: usize,
    /// DP horizon of the Green function `G(e,e)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green_horizon: Option<u32>,
    /// Allowed `|E|R_n|/n - 1/G(e,e)|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_tolerance: Option<f64>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_n: Option<u32>,
    /// Radii are `round(t·sqrt(exit_n))`.
    #[serde(default)]
    pub exit_t_values: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub exit_replicas: usize,
    /// Minimum `R^2` of `ln P(τ <= n)` against `t^2`, which must also have negative slope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_min_r_squared: Option<f64>,
}

/// Survival curve of `T(e, target)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrogTails {
    pub target: Vec<i64>,
    pub horizon: u32,
    pub replicas: usize,
    /// Survival points with fewer survivors are left out of the shape fits.
    #[serde(default = "default_min_survivors")]
    pub min_survivors: usize,
    /// Require an increasing hazard, a positive stretched-exponential exponent and no censoring.
    #[serde(default)]
    pub require_log_concave: bool,
}

/// Distribution of `T(e, k·direction) / ‖k·direction‖₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGrowth {
    pub direction: Vec<i64>,
    pub ks: Vec<u32>,
    pub replicas: usize,
    pub horizon: u32,
    /// `[a, b]`: require `q99(b) <= q99(a) + q99_n_sigma·σ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q99_compare: Option<[u32; 2]>,
    #[serde(default = "default_n_sigma")]
    pub q99_n_sigma: f64,
}

/// Shape convergence, sandwich and `φ̂` estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    /// Increasing times whose rescaled activation balls are compared pairwise.
    pub horizons: Vec<u32>,
    pub seeds: usize,
    #[serde(default)]
    pub metric: Metric,
    /// Held-out realizations for the radial `φ` model of the sandwich check.
    #[serde(default)]
    pub fit_seeds: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Require the mean `d_H` between consecutive horizons to decrease.
    #[serde(default)]
    pub require_decreasing: bool,
    /// Maximum mean sandwich violation fraction; needs `fit_seeds > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_violation_fraction: Option<f64>,
    /// k-series for `φ̂` along the fan representatives; omitted means no `φ̂`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_k_values: Option<Vec<u32>>,
    #[serde(default = "default_phi_replicas")]
    pub phi_replicas: usize,
    #[serde(default = "default_correction_exponent")]
    pub phi_correction_exponent: f64,
    /// Write every activation record as JSONL.
    #[serde(default)]
    pub write_records: bool,
}

/// Projected activation balls versus the torsion-free quotient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsionCompare {
    pub horizon: u32,
    pub seeds: usize,
    #[serde(default)]
    pub metric: Metric,
    /// Maximum mean `d_H / horizon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

/// Asymmetry of the rescaled activation ball under the signed coordinate
/// permutations that preserve the generating set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Symmetry {
    pub horizon: u32,
    pub seeds: usize,
    #[serde(default)]
    pub metric: Metric,
    /// Maximum mean over seeds of `max_g d_H(B, g·B)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_asymmetry: Option<f64>,
}

fn default_parallelism() -> usize {
    1
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("froglab-out")
}

fn default_replicas() -> usize {
    1000
}

fn default_min_survivors() -> usize {
    100
}

fn default_n_sigma() -> f64 {
    2.0
}

fn default_epsilon() -> f64 {
    0.15
}

fn default_phi_replicas() -> usize {
    100
}

fn default_correction_exponent() -> f64 {
    0.85
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::WalkDiagnostics(_) => "walk_diagnostics",
            Experiment::FrogTails(_) => "frog_tails",
            Experiment::LinearGrowth(_) => "linear_growth",
            Experiment::Shape(_) => "shape",
            Experiment::TorsionCompare(_) => "torsion_compare",
            Experiment::Symmetry(_) => "symmetry",
        }
    }
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form with execution settings
    /// (`parallelism`, `memory_budget`, `output_dir`) left out. Keys are
    /// sorted, so the hash ignores the order of fields in the source text.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is a table");
        for key in ["parallelism", "memory_budget", "output_dir"] {
            map.remove(key);
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    /// The Cayley graph, with the generator checks of the group layer.
    pub fn graph(&self) -> Result<CayleyGraph> {
        let g = &self.group;
        let spec = GroupSpec::new(g.rank, g.torsion_orders.clone()).map_err(|e| CliError::field("group.torsion_orders", e))?;
        let Some(tuples) = &g.generators else {
            return Ok(CayleyGraph::standard(spec));
        };
        let elements = tuples
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.len() != spec.num_coords() {
                    return Err(CliError::field(
                        format!("group.generators[{i}]"),
                        format!("has {} coordinates, the group has {}", t.len(), spec.num_coords()),
                    ));
                }
                spec.element_from_flat(t).map_err(|e| CliError::field(format!("group.generators[{i}]"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        let generators = GeneratorSet::new(&spec, elements).map_err(|e| CliError::field("group.generators", e))?;
        Ok(CayleyGraph::new(spec, generators))
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(CliError::field("parallelism", "must be at least 1"));
        }
        if self.memory_budget == 0 {
            return Err(CliError::field("memory_budget", "must be positive"));
        }
        let graph = self.graph()?;
        for (i, exp) in self.experiments.iter().enumerate() {
            let check = Checker { graph: &graph, prefix: format!("experiments[{i}]") };
            check.experiment(exp)?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    graph: &'a CayleyGraph,
    prefix: String,
}

impl Checker<'_> {
    fn err(&self, field: &str, message: impl ToString) -> CliError {
        CliError::field(format!("{}.{field}", self.prefix), message)
    }

    fn positive(&self, field: &str, value: usize) -> Result<()> {
        if value == 0 {
            return Err(self.err(field, "must be positive"));
        }
        Ok(())
    }

    fn finite_nonnegative(&self, field: &str, value: Option<f64>) -> Result<()> {
        match value {
            Some(v) if !(v.is_finite() && v >= 0.0) => Err(self.err(field, format!("{v} must be finite and non-negative"))),
            _ => Ok(()),
        }
    }

    fn horizon(&self, field: &str, horizon: u32) -> Result<()> {
        if horizon == 0 {
            return Err(self.err(field, "must be positive"));
        }
        FrogLattice::box_cells(self.graph, horizon).map_err(|e| self.err(field, e))?;
        Ok(())
    }

    fn free_vector(&self, field: &str, v: &[i64]) -> Result<u64> {
        let spec = &self.graph.spec;
        if v.len() != spec.num_coords() {
            return Err(self.err(field, format!("has {} coordinates, the group has {}", v.len(), spec.num_coords())));
        }
        let x = spec.element_from_flat(v).map_err(|e| self.err(field, e))?;
        if x.is_identity() {
            return Err(self.err(field, "must not be the identity"));
        }
        Ok(x.free_l1())
    }

    fn requires(&self, field: &str, present: bool, other: &str) -> Result<()> {
        if !present {
            return Err(self.err(field, format!("needs `{other}`")));
        }
        Ok(())
    }

    fn experiment(&self, exp: &Experiment) -> Result<()> {
        let rank = self.graph.spec.rank();
        match exp {
            Experiment::WalkDiagnostics(w) => {
                if let Some([lo, hi]) = w.heat_kernel_n {
                    if lo == 0 || lo >= hi {
                        return Err(self.err("heat_kernel_n", "needs 0 < lo < hi"));
                    }
                }
                self.requires("heat_kernel_slope", w.heat_kernel_slope.is_none() || w.heat_kernel_n.is_some(), "heat_kernel_n")?;
                self.requires(
                    "heat_kernel_slope_tolerance",
                    w.heat_kernel_slope_tolerance.is_none() || w.heat_kernel_slope.is_some(),
                    "heat_kernel_slope",
                )?;
                self.finite_nonnegative("heat_kernel_slope_tolerance", w.heat_kernel_slope_tolerance)?;
                if let Some(n) = w.range_n {
                    self.positive("range_n", n)?;
                    self.positive("range_replicas", w.range_replicas)?;
                }
                self.requires("range_tolerance", w.range_tolerance.is_none() || w.range_n.is_some(), "range_n")?;
                self.requires("range_tolerance", w.range_tolerance.is_none() || w.green_horizon.is_some(), "green_horizon")?;
                self.finite_nonnegative("range_tolerance", w.range_tolerance)?;
                if w.green_horizon.is_some() && rank < 3 {
                    return Err(self.err("green_horizon", "the Green function is infinite for rank below 3"));
                }
                if let Some(n) = w.exit_n {
                    self.positive("exit_n", n as usize)?;
                    self.positive("exit_replicas", w.exit_replicas)?;
                    if w.exit_t_values.len() < 2 {
                        return Err(self.err("exit_t_values", "needs at least two values"));
                    }
                    if w.exit_t_values.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                        return Err(self.err("exit_t_values", "values must be positive"));
                    }
                }
                self.requires("exit_min_r_squared", w.exit_min_r_squared.is_none() || w.exit_n.is_some(), "exit_n")?;
                Ok(())
            }
            Experiment::FrogTails(f) => {
                self.horizon("horizon", f.horizon)?;
                self.positive("replicas", f.replicas)?;
                let norm = self.free_vector("target", &f.target)?;
                if norm > f.horizon as u64 {
                    return Err(self.err("target", format!("free norm {norm} exceeds the horizon {}", f.horizon)));
                }
                Ok(())
            }
            Experiment::LinearGrowth(g) => {
                self.horizon("horizon", g.horizon)?;
                self.positive("replicas", g.replicas)?;
                if g.ks.is_empty() || g.ks.contains(&0) {
                    return Err(self.err("ks", "needs positive values"));
                }
                self.free_vector("direction", &g.direction)?;
                if let Some(pair) = g.q99_compare {
                    if pair.iter().any(|k| !g.ks.contains(k)) {
                        return Err(self.err("q99_compare", "both values must be listed in `ks`"));
                    }
                }
                self.finite_nonnegative("q99_n_sigma", Some(g.q99_n_sigma))
            }
            Experiment::Shape(s) => {
                if s.horizons.len() < 2 || s.horizons.windows(2).any(|w| w[0] >= w[1]) || s.horizons[0] == 0 {
                    return Err(self.err("horizons", "needs at least two strictly increasing positive times"));
                }
                self.horizon("horizons", *s.horizons.last().unwrap())?;
                self.positive("seeds", s.seeds)?;
                if !(s.epsilon.is_finite() && s.epsilon > 0.0 && s.epsilon < 1.0) {
                    return Err(self.err("epsilon", "must lie in (0, 1)"));
                }
                self.requires("max_violation_fraction", s.max_violation_fraction.is_none() || s.fit_seeds > 0, "fit_seeds")?;
                self.finite_nonnegative("max_violation_fraction", s.max_violation_fraction)?;
                if rank == 0 {
                    return Err(self.err("kind", "needs a group of positive rank"));
                }
                if let Some(ks) = &s.phi_k_values {
                    if ks.is_empty() || ks.contains(&0) {
                        return Err(self.err("phi_k_values", "needs positive values"));
                    }
                    if s.phi_replicas < 2 {
                        return Err(self.err("phi_replicas", "needs at least two replicas"));
                    }
                    if !(s.phi_correction_exponent.is_finite() && s.phi_correction_exponent > 0.0) {
                        return Err(self.err("phi_correction_exponent", "must be positive"));
                    }
                }
                Ok(())
            }
            Experiment::TorsionCompare(t) => {
                self.horizon("horizon", t.horizon)?;
                self.positive("seeds", t.seeds)?;
                if self.graph.spec.torsion_orders().is_empty() {
                    return Err(self.err("kind", "needs a group with torsion"));
                }
                self.graph.torsion_quotient().map_err(|e| self.err("kind", e))?;
                self.finite_nonnegative("max_ratio", t.max_ratio)
            }
            Experiment::Symmetry(s) => {
                self.horizon("horizon", s.horizon)?;
                self.positive("seeds", s.seeds)?;
                if rank == 0 {
                    return Err(self.err("kind", "needs a group of positive rank"));
                }
                self.finite_nonnegative("max_asymmetry", s.max_asymmetry)
            }
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
