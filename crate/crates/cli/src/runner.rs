//! Dispatch of configured experiments to the core estimators.
//!
//! Experiment `i` gets the seed `replicate_seed(master_seed, i)`. Inside an
//! experiment every family of replicates is a [`SeedStream`] whose master is
//! `replicate_seed(experiment_seed, stream_index)`. Replicates are mapped on
//! the worker pool and merged in replicate order, so results do not depend
//! on the number of threads.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use froglab_core::frog::{self, FrogLattice};
use froglab_core::group::WordMetricOracle;
use froglab_core::rng::replicate_seed;
use froglab_core::shape::{self, HausdorffPoint, PhiModel, PhiRequest, RadialFit, SandwichReport, ShapeReport, SignedPermutation};
use froglab_core::stats::{linear_fit, mean_estimate};
use froglab_core::{walk, CayleyGraph, Error as CoreError};

use crate::config::{Experiment, ExperimentConfig, FrogTails, LinearGrowth, Shape, Symmetry, TorsionCompare, WalkDiagnostics};
use crate::error::{CliError, Result};
use crate::manifest::{ExperimentEntry, OutputDir, RunManifest, SeedStream, Status, Timing};
use crate::summary::ExperimentSummary;

pub const CONFIG_COPY: &str = "config.toml";

/// Runs every experiment of `config` into `out`, writing results and the manifest.
///
/// On failure the manifest is still written, flagged incomplete, and the
/// error names the failing experiment.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    let graph = config.graph()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    let mut files = OutputDir::create(out)?;
    files.write(CONFIG_COPY, config.to_toml())?;
    let mut manifest = RunManifest::new(config.hash(), config.master_seed);
    let total = Instant::now();
    for (index, exp) in config.experiments.iter().enumerate() {
        let seed = replicate_seed(config.master_seed, index as u64);
        let directory = format!("{index:02}_{}", exp.kind());
        let start = Instant::now();
        let mut ctx = Context { graph: &graph, budget: config.memory_budget, files: &mut files, dir: &directory, seed, streams: Vec::new() };
        let result = pool.install(|| ctx.dispatch(index, exp));
        let streams = std::mem::take(&mut ctx.streams);
        manifest.timings.push(Timing { stage: directory.clone(), seconds: start.elapsed().as_secs_f64() });
        let mut entry = ExperimentEntry {
            index,
            kind: exp.kind().to_string(),
            directory: directory.clone(),
            seed,
            status: Status::Complete,
            error: None,
            streams,
            summary: None,
        };
        let outcome = result.and_then(|summary| {
            let path = format!("{directory}/summary.json");
            files.write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
            Ok(path)
        });
        match outcome {
            Ok(path) => {
                entry.summary = Some(path);
                manifest.experiments.push(entry);
            }
            Err(e) => {
                entry.status = Status::Failed;
                entry.error = Some(e.to_string());
                manifest.experiments.push(entry);
                manifest.files = files.files;
                manifest.timings.push(Timing { stage: "total".into(), seconds: total.elapsed().as_secs_f64() });
                manifest.save(out)?;
                return Err(CliError::Experiment {
                    index,
                    kind: exp.kind().to_string(),
                    manifest: out.join(crate::manifest::MANIFEST_FILE),
                    source: Box::new(e),
                });
            }
        }
    }
    manifest.incomplete = false;
    manifest.files = files.files;
    manifest.timings.push(Timing { stage: "total".into(), seconds: total.elapsed().as_secs_f64() });
    manifest.save(out)?;
    Ok(manifest)
}

struct Context<'a> {
    graph: &'a CayleyGraph,
    budget: usize,
    files: &'a mut OutputDir,
    dir: &'a str,
    seed: u64,
    streams: Vec<SeedStream>,
}

impl Context<'_> {
    fn dispatch(&mut self, index: usize, exp: &Experiment) -> Result<ExperimentSummary> {
        let mut summary = ExperimentSummary::new(index, exp.kind());
        match exp {
            Experiment::WalkDiagnostics(p) => self.walk_diagnostics(p, &mut summary)?,
            Experiment::FrogTails(p) => self.frog_tails(p, &mut summary)?,
            Experiment::LinearGrowth(p) => self.linear_growth(p, &mut summary)?,
            Experiment::Shape(p) => self.shape(p, &mut summary)?,
            Experiment::TorsionCompare(p) => self.torsion_compare(p, &mut summary)?,
            Experiment::Symmetry(p) => self.symmetry(p, &mut summary)?,
        }
        Ok(summary)
    }

    /// Registers the replicate family `stream` and returns its master seed.
    fn stream(&mut self, stream: u64, name: &str, replicas: usize) -> u64 {
        let master = replicate_seed(self.seed, stream);
        let replicate_seeds = (0..replicas as u64).map(|r| replicate_seed(master, r)).collect();
        self.streams.push(SeedStream { name: name.to_string(), master, replicate_seeds });
        master
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        self.files.write(&format!("{}/{name}", self.dir), contents)
    }

    fn lattice(&self, horizon: u32) -> Result<FrogLattice> {
        Ok(FrogLattice::build(self.graph.clone(), horizon, self.budget)?)
    }

    fn element(&self, coords: &[i64]) -> Result<froglab_core::GroupElement> {
        Ok(self.graph.spec.element_from_flat(coords)?)
    }

    fn walk_diagnostics(&mut self, p: &WalkDiagnostics, s: &mut ExperimentSummary) -> Result<()> {
        let e = self.graph.spec.identity();
        if let Some([lo, hi]) = p.heat_kernel_n {
            let mut oracle = WordMetricOracle::with_budget(self.graph.clone(), self.budget);
            let probs = walk::return_probabilities(&mut oracle, hi)?;
            let mut csv = String::from("n,p_n\n");
            let mut pts = Vec::new();
            for n in lo..=hi {
                let pn = probs[n as usize];
                csv.push_str(&format!("{n},{pn:e}\n"));
                if pn > 0.0 {
                    pts.push(((n as f64).ln(), pn.ln()));
                }
            }
            self.write("heat_kernel.csv", csv)?;
            if pts.len() < 2 {
                return Err(CoreError::InvalidParameter("fewer than two times with positive return probability".into()).into());
            }
            let fit = linear_fit(&pts);
            s.with_stderr("heat_kernel_exponent", fit.slope, fit.slope_stderr);
            s.value("heat_kernel_r_squared", fit.r_squared);
            if let (Some(target), Some(tol)) = (p.heat_kernel_slope, p.heat_kernel_slope_tolerance) {
                s.check(
                    "heat_kernel_slope",
                    (fit.slope - target).abs() <= tol,
                    format!("slope {:.4} vs {target} ± {tol}", fit.slope),
                );
            }
        }
        let mut inverse_green = None;
        if let Some(h) = p.green_horizon {
            let mut oracle = WordMetricOracle::with_budget(self.graph.clone(), self.budget);
            let g = walk::green_limit(&mut oracle, &e, &e, h)?;
            self.write("green.json", serde_json::to_string_pretty(&g).expect("serializes") + "\n")?;
            s.value("green_partial_sum", g.partial_sum);
            s.value("green_tail", g.tail);
            s.value("green_limit", g.limit);
            s.value("inverse_green", 1.0 / g.limit);
            inverse_green = Some(1.0 / g.limit);
        }
        if let Some(n) = p.range_n {
            let master = self.stream(0, "range", p.range_replicas);
            let stats = walk::range_estimate(self.graph, n, p.range_replicas, master);
            self.write("range.jsonl", stats.to_jsonl())?;
            let point = &stats.points[0];
            s.with_stderr("range_ratio", point.estimate, point.stderr);
            if let (Some(tol), Some(target)) = (p.range_tolerance, inverse_green) {
                let gap = (point.estimate - target).abs();
                s.check("range_constant", gap <= tol, format!("|E|R_n|/n - 1/G| = {gap:.4} vs {tol}"));
            }
        }
        if let Some(n) = p.exit_n {
            let radii: Vec<u32> = p.exit_t_values.iter().map(|t| (t * (n as f64).sqrt()).round() as u32).collect();
            let master = self.stream(1, "exit", p.exit_replicas);
            let mut oracle = WordMetricOracle::with_budget(self.graph.clone(), self.budget);
            let stats = walk::exit_tail_estimate(&mut oracle, &radii, n, p.exit_replicas, master)?;
            self.write("exit_tail.jsonl", stats.to_jsonl())?;
            let mut csv = String::from("t,r,p,stderr\n");
            for ((t, r), pt) in p.exit_t_values.iter().zip(&radii).zip(&stats.points) {
                csv.push_str(&format!("{t},{r},{:e},{:e}\n", pt.estimate, pt.stderr));
                s.with_stderr(format!("exit_prob_t{t}"), pt.estimate, pt.stderr);
            }
            self.write("exit_tail.csv", csv)?;
            let pts: Vec<(f64, f64)> = p
                .exit_t_values
                .iter()
                .zip(&stats.points)
                .filter(|(_, pt)| pt.estimate > 0.0)
                .map(|(t, pt)| (t * t, pt.estimate.ln()))
                .collect();
            let fit = (pts.len() == stats.points.len()).then(|| linear_fit(&pts));
            if let Some(fit) = fit {
                s.with_stderr("exit_log_slope", fit.slope, fit.slope_stderr);
                s.value("exit_r_squared", fit.r_squared);
            }
            if let Some(min) = p.exit_min_r_squared {
                let (passed, detail) = match fit {
                    Some(f) => (f.r_squared >= min && f.slope < 0.0, format!("slope {:.4}, R^2 {:.4} vs {min}", f.slope, f.r_squared)),
                    None => (false, "an exit probability is zero".to_string()),
                };
                s.check("exit_gaussian_tail", passed, detail);
            }
        }
        Ok(())
    }

    fn frog_tails(&mut self, p: &FrogTails, s: &mut ExperimentSummary) -> Result<()> {
        let lattice = self.lattice(p.horizon)?;
        let target = self.element(&p.target)?;
        let ns: Vec<u32> = (0..=p.horizon + 1).collect();
        let master = self.stream(0, "realizations", p.replicas);
        let curve = frog::t_tail_experiment(&lattice, &target, &ns, p.replicas, master)?;
        let mut csv = String::from("n,survival,stderr\n");
        for (n, sv) in curve.n_values.iter().zip(&curve.survival) {
            csv.push_str(&format!("{n},{sv},{:e}\n", (sv * (1.0 - sv) / p.replicas as f64).sqrt()));
        }
        self.write("tail_curve.csv", csv)?;
        self.write("tail_curve.json", serde_json::to_string(&curve).expect("serializes") + "\n")?;
        let shape = curve.shape(p.min_survivors);
        self.write("tail_shape.json", serde_json::to_string_pretty(&shape).expect("serializes") + "\n")?;
        s.value("target_norm", curve.target_norm as f64);
        s.value("min_activation_time", curve.min_time.map_or(f64::NAN, f64::from));
        s.value("censored_fraction", curve.censored as f64 / p.replicas as f64);
        let min_ok = curve.min_time.is_none_or(|t| t >= curve.target_norm);
        s.check("lower_bound", min_ok, format!("min T = {:?} vs ‖x‖ = {}", curve.min_time, curve.target_norm));
        let monotone = curve.survival.windows(2).all(|w| w[1] <= w[0]);
        s.check("non_increasing", monotone, "survival along n");
        if let Some(sh) = &shape {
            s.value("hazard_slope", sh.hazard_slope);
            s.value("stretched_exponent", sh.stretched_exponent);
            s.value("stretched_r_squared", sh.stretched_r_squared);
        }
        if p.require_log_concave {
            let (passed, detail) = match &shape {
                Some(sh) => (
                    sh.hazard_slope > 0.0 && sh.stretched_exponent > 0.0 && curve.censored == 0,
                    format!("hazard trend {:+.4}, beta {:.3}, censored {}", sh.hazard_slope, sh.stretched_exponent, curve.censored),
                ),
                None => (false, "too few reliable survival points".to_string()),
            };
            s.check("log_concave_trend", passed, detail);
        }
        Ok(())
    }

    fn linear_growth(&mut self, p: &LinearGrowth, s: &mut ExperimentSummary) -> Result<()> {
        let lattice = self.lattice(p.horizon)?;
        let direction = self.element(&p.direction)?;
        let master = self.stream(0, "realizations", p.replicas);
        let table = frog::linear_growth_experiment(&lattice, &direction, &p.ks, p.replicas, master)?;
        let mut csv = String::from("k,norm,mean,stderr,min,max,q50,q90,q99,q99_stderr,censored\n");
        for r in &table.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.k, r.norm, r.mean, r.stderr, r.min, r.max, r.q50, r.q90, r.q99, r.q99_stderr, r.censored
            ));
            s.with_stderr(format!("mean_ratio_k{}", r.k), r.mean, r.stderr);
            s.with_stderr(format!("q99_ratio_k{}", r.k), r.q99, r.q99_stderr);
        }
        self.write("growth.csv", csv)?;
        self.write("growth.json", serde_json::to_string_pretty(&table).expect("serializes") + "\n")?;
        let min = table.rows.iter().map(|r| r.min).fold(f64::INFINITY, f64::min);
        s.check("lower_bound", min >= 1.0, format!("min T/‖x‖ = {min:.4}"));
        if let Some([a, b]) = p.q99_compare {
            let row = |k: u32| table.rows.iter().find(|r| r.k == k).expect("validated");
            let (ra, rb) = (row(a), row(b));
            let sigma = (ra.q99_stderr.powi(2) + rb.q99_stderr.powi(2)).sqrt();
            s.check(
                "q99_not_increasing",
                rb.q99 <= ra.q99 + p.q99_n_sigma * sigma,
                format!("q99(k={b}) = {:.3} vs q99(k={a}) = {:.3} + {}·{sigma:.3}", rb.q99, ra.q99, p.q99_n_sigma),
            );
        }
        Ok(())
    }

    fn shape(&mut self, p: &Shape, s: &mut ExperimentSummary) -> Result<()> {
        let horizon = *p.horizons.last().expect("validated");
        let lattice = self.lattice(horizon)?;
        let rank = self.graph.spec.rank();
        let master = self.stream(0, "realizations", p.seeds);
        let fit_master = self.stream(1, "fit", p.fit_seeds);

        let model = if p.fit_seeds > 0 {
            let mut fit = RadialFit::new(rank, horizon);
            for r in 0..p.fit_seeds {
                fit.add(&frog::run(&lattice, replicate_seed(fit_master, r as u64)))?;
            }
            let model = fit.finish()?;
            self.write("phi_model.json", serde_json::to_string_pretty(&model).expect("serializes") + "\n")?;
            Some(model)
        } else {
            None
        };

        type Outcome = (Vec<(u32, u32, f64)>, Option<SandwichReport>, Option<Vec<u8>>);
        let per_seed: Vec<Outcome> = (0..p.seeds)
            .into_par_iter()
            .map(|r| -> Result<Outcome> {
                let record = frog::run(&lattice, replicate_seed(master, r as u64));
                let series = shape::hausdorff_series(&record, &p.horizons, p.metric)?;
                let sandwich = model.as_ref().map(|m| shape::sandwich_check(&record, m, horizon, p.epsilon)).transpose()?;
                let jsonl = if p.write_records {
                    let mut buf = Vec::new();
                    record.write_jsonl(&mut buf).expect("writing to memory");
                    Some(buf)
                } else {
                    None
                };
                Ok((series, sandwich, jsonl))
            })
            .collect::<Result<_>>()?;

        let mut report = ShapeReport { group: self.graph.spec.to_string(), metric: p.metric, ..ShapeReport::default() };
        for (i, &(n, m, _)) in per_seed[0].0.iter().enumerate() {
            let samples: Vec<f64> = per_seed.iter().map(|o| o.0[i].2).collect();
            let est = mean_estimate(&samples);
            s.with_stderr(format!("d_h_{n}_{m}"), est.mean, est.stderr);
            report.hausdorff_series.push(HausdorffPoint { n, m, mean: est.mean, stderr: est.stderr, samples });
        }
        report.sandwich = per_seed.iter().filter_map(|o| o.1.clone()).collect();
        for (r, o) in per_seed.iter().enumerate() {
            if let Some(bytes) = &o.2 {
                self.write(&format!("records/seed_{r:04}.jsonl"), bytes)?;
            }
        }
        drop(per_seed);

        if let Some(ks) = &p.phi_k_values {
            let requests = PhiModel::representatives(rank)
                .iter()
                .map(|v| {
                    let mut flat = v.clone();
                    flat.resize(self.graph.spec.num_coords(), 0);
                    Ok(PhiRequest { direction: self.element(&flat)?, k_values: ks.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            let phi_master = self.stream(2, "phi", p.phi_replicas);
            report.phi = shape::phi_fan_experiment(&lattice, &requests, p.phi_replicas, phi_master, p.phi_correction_exponent).map_err(|e| match e {
                CoreError::OutOfHorizon { horizon, .. } => CliError::field(
                    format!("experiments[{}].phi_k_values", s.index),
                    format!("a fan activation was still censored at time {horizon}; lower the k values or raise the last horizon"),
                ),
                other => other.into(),
            })?;
            for e in &report.phi {
                let dir: Vec<String> = e.direction.iter().map(i64::to_string).collect();
                s.with_stderr(format!("phi_{}", dir.join("_")), e.estimate, e.stderr);
            }
        }

        self.write("shape_report.json", report.to_json() + "\n")?;
        self.write("hausdorff.csv", report.hausdorff_csv())?;
        if !report.phi.is_empty() {
            self.write("phi.csv", report.phi_csv())?;
        }
        if model.is_some() {
            let mut csv = String::from("seed,inner_total,inner_violations,outer_total,outer_violations,violation_fraction\n");
            for (r, w) in report.sandwich.iter().enumerate() {
                csv.push_str(&format!(
                    "{r},{},{},{},{},{}\n",
                    w.inner_total,
                    w.inner_violations,
                    w.outer_total,
                    w.outer_violations,
                    w.violation_fraction()
                ));
            }
            self.write("sandwich.csv", csv)?;
            let fractions: Vec<f64> = report.sandwich.iter().map(SandwichReport::violation_fraction).collect();
            let est = mean_estimate(&fractions);
            s.with_stderr("sandwich_violation_fraction", est.mean, est.stderr);
            if let Some(max) = p.max_violation_fraction {
                s.check("sandwich", est.mean < max, format!("mean violation fraction {:.2e} vs {max} at epsilon {}", est.mean, p.epsilon));
            }
        }
        if p.require_decreasing {
            let consecutive: Vec<&HausdorffPoint> = p
                .horizons
                .windows(2)
                .map(|w| report.hausdorff_series.iter().find(|h| h.n == w[0] && h.m == w[1]).expect("pair computed"))
                .collect();
            let decreasing = consecutive.windows(2).all(|w| w[1].mean < w[0].mean);
            let detail: Vec<String> = consecutive.iter().map(|h| format!("d_H({},{}) = {:.4}", h.n, h.m, h.mean)).collect();
            s.check("hausdorff_decreasing", decreasing, detail.join(", "));
        }
        Ok(())
    }

    fn torsion_compare(&mut self, p: &TorsionCompare, s: &mut ExperimentSummary) -> Result<()> {
        let quotient = self.graph.torsion_quotient()?;
        let master = self.stream(0, "realizations", p.seeds);
        let seeds: Vec<u64> = (0..p.seeds as u64).map(|r| replicate_seed(master, r)).collect();
        let report = shape::torsion_invariance_check(self.graph, &quotient, p.horizon, &seeds, p.metric, self.budget)?;
        let mut csv = String::from("seed,d_h_over_horizon\n");
        for (r, d) in report.distances.iter().enumerate() {
            csv.push_str(&format!("{r},{d}\n"));
        }
        self.write("torsion.csv", csv)?;
        self.write("torsion.json", serde_json::to_string_pretty(&report).expect("serializes") + "\n")?;
        s.with_stderr("torsion_ratio", report.mean_ratio, report.stderr);
        if let Some(max) = p.max_ratio {
            s.check("torsion_invariance", report.mean_ratio < max, format!("mean d_H/horizon {:.4} vs {max}", report.mean_ratio));
        }
        Ok(())
    }

    fn symmetry(&mut self, p: &Symmetry, s: &mut ExperimentSummary) -> Result<()> {
        let rank = self.graph.spec.rank();
        let identity = SignedPermutation::identity(rank);
        let symmetries: Vec<SignedPermutation> = SignedPermutation::all(rank)
            .into_iter()
            .filter(|g| *g != identity && shape::check_invariant(self.graph, g).is_ok())
            .collect();
        let lattice = self.lattice(p.horizon)?;
        let master = self.stream(0, "realizations", p.seeds);
        let reports = (0..p.seeds)
            .into_par_iter()
            .map(|r| Ok(shape::symmetry_check(&frog::run(&lattice, replicate_seed(master, r as u64)), p.horizon, &symmetries, p.metric)?))
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("seed,max_asymmetry,worst\n");
        for (r, rep) in reports.iter().enumerate() {
            csv.push_str(&format!("{r},{},\"{}\"\n", rep.max_asymmetry, rep.worst));
        }
        self.write("symmetry.csv", csv)?;
        let values: Vec<f64> = reports.iter().map(|r| r.max_asymmetry).collect();
        let est = mean_estimate(&values);
        s.value("symmetries", symmetries.len() as f64);
        s.with_stderr("max_asymmetry", est.mean, est.stderr);
        if let Some(max) = p.max_asymmetry {
            s.check("symmetry", est.mean <= max, format!("mean max_g d_H {:.4} over {} symmetries vs {max}", est.mean, symmetries.len()));
        }
        Ok(())
    }
}
