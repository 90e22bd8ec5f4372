//! Subcommand implementations. Each returns the `result` block of its report and a pass flag.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use lielevy::estimate::{estimate, estimate_group, EmpiricalTriple, EstimateConfig};
use lielevy::experiment::{lift_check, lift_check_bank, round_trip, EtaProbe};
use lielevy::homogeneous::{
    lift_triple, martingale_test_x, sphere_bank, MtfXPlan, ProjectedPaths, Sphere, XPath, XPathSource, XSimulator,
    XTriple,
};
use lielevy::io::{read_paths_csv, save_triple, write_paths_csv, write_sphere_paths_csv, PathFile, TripleFile};
use lielevy::simulate::{PathSet, PathSource, SimConfig, Simulator};
use lielevy::stats::mean_stderr;
use lielevy::testfn::{default_bank, TestFunction};
use lielevy::verify::{default_conditioners, fixed_jump_law, martingale_test, Conditioner, MartingaleReport};
use lielevy::{ExtendedLevyTriple, GroupDescriptor, GroupElement};

use crate::config::{BankName, ConditionerSet, ExperimentConfig, Format};

/// Entries beyond this `|z|` fail a verification outright.
pub const Z_REJECT: f64 = 6.0;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub triple_file: TripleFile,
    pub out_dir: PathBuf,
    pub format: Format,
    pub input: Option<PathBuf>,
    pub hash: String,
    pub artifacts: Vec<String>,
}

pub type Outcome = Result<(Value, bool), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

impl Context {
    fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out_dir.join(name)
    }

    fn group_triple(&self, command: &str) -> Result<ExtendedLevyTriple, String> {
        if self.triple_file.is_sphere() {
            return Err(format!("`{command}` needs a group triple; the triple file describes the sphere"));
        }
        self.triple_file.to_triple().map_err(err)
    }

    fn sphere_triple(&self, command: &str) -> Result<XTriple, String> {
        if !self.triple_file.is_sphere() {
            return Err(format!("`{command}` needs a sphere triple (a [space] section)"));
        }
        self.triple_file.to_sphere_triple().map_err(err)
    }

    fn sim_config(&self) -> SimConfig {
        self.cfg.sim_config()
    }

    /// Simulated ensemble, or the one read from `--input`.
    fn group_source(&self, triple: &ExtendedLevyTriple) -> Result<Box<dyn PathSource>, String> {
        match &self.input {
            Some(path) => Ok(Box::new(read_group_paths(path, &triple.group)?)),
            None => Ok(Box::new(Simulator::new(triple, &self.sim_config()).map_err(err)?)),
        }
    }

    fn write_group_paths(&mut self, source: &dyn PathSource) -> Result<(), String> {
        let desc = source.group().clone();
        match self.format {
            Format::Csv => {
                let f = File::create(self.artifact("paths.csv")).map_err(err)?;
                write_paths_csv(BufWriter::new(f), &desc, (0..source.len()).map(|i| source.path(i).into_owned()))
                    .map_err(err)
            }
            Format::Json => {
                let paths: Vec<_> = (0..source.len()).map(|i| source.path(i).into_owned()).collect();
                let f = File::create(self.artifact("paths.json")).map_err(err)?;
                serde_json::to_writer(BufWriter::new(f), &PathFile::from_paths(&desc, &paths)).map_err(err)
            }
        }
    }

    fn write_sphere_paths(&mut self, source: &dyn XPathSource) -> Result<(), String> {
        let paths = (0..source.len()).map(|i| source.x_path(i));
        match self.format {
            Format::Csv => {
                let f = File::create(self.artifact("sphere_paths.csv")).map_err(err)?;
                write_sphere_paths_csv(BufWriter::new(f), paths).map_err(err)
            }
            Format::Json => {
                let records: Vec<SpherePathRecord> = paths.map(|p| SpherePathRecord::from(&p)).collect();
                let f = File::create(self.artifact("sphere_paths.json")).map_err(err)?;
                serde_json::to_writer(BufWriter::new(f), &records).map_err(err)
            }
        }
    }
}

#[derive(Serialize)]
struct SphereEventRecord {
    t: f64,
    kind: &'static str,
    value: [f64; 3],
}

#[derive(Serialize)]
struct SpherePathRecord {
    origin: [f64; 3],
    events: Vec<SphereEventRecord>,
}

impl From<&XPath> for SpherePathRecord {
    fn from(p: &XPath) -> Self {
        SpherePathRecord {
            origin: p.origin.into(),
            events: p
                .events
                .iter()
                .map(|e| SphereEventRecord { t: e.time, kind: e.kind.as_str(), value: e.value.into() })
                .collect(),
        }
    }
}

fn read_group_paths(path: &Path, desc: &GroupDescriptor) -> Result<PathSet, String> {
    let ctx = |e: lielevy::Error| format!("{}: {e}", path.display());
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let paths = if is_json {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file: PathFile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let (g, paths) = file.to_paths().map_err(ctx)?;
        if g.kind() != desc.kind() {
            return Err(format!("{}: paths live on {} but the triple on {}", path.display(), g.name(), desc.name()));
        }
        paths
    } else {
        let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        read_paths_csv(f, desc).map_err(ctx)?
    };
    if paths.is_empty() {
        return Err(format!("{}: no paths", path.display()));
    }
    Ok(PathSet { group: desc.clone(), paths })
}

fn bank(desc: &GroupDescriptor, name: BankName) -> Vec<TestFunction> {
    let all = default_bank(desc);
    match name {
        BankName::Default => all,
        BankName::Bumps => all.into_iter().filter(|f| !f.id.starts_with("product")).collect(),
        BankName::Products => all.into_iter().filter(|f| f.id.starts_with("product")).collect(),
    }
}

fn conditioners(desc: &GroupDescriptor, set: ConditionerSet) -> Vec<Conditioner> {
    match set {
        ConditionerSet::Default => default_conditioners(desc),
        ConditionerSet::Constant => vec![Conditioner::Constant],
    }
}

fn row_major(m: &lielevy::Mat, d: usize) -> Vec<f64> {
    (0..d).flat_map(|r| (0..d).map(move |c| m[(r, c)])).collect()
}

fn scaled_sphere(xt: &XTriple, c: f64) -> XTriple {
    let mut out = xt.clone();
    for p in &mut out.levy_c {
        p.rate *= c;
    }
    out
}

pub fn simulate(ctx: &mut Context) -> Outcome {
    let cfg = ctx.sim_config();
    if ctx.triple_file.is_sphere() {
        let sim = XSimulator::new(&Sphere::new(), &ctx.sphere_triple("simulate")?, &cfg).map_err(err)?;
        ctx.write_sphere_paths(&sim)?;
        let events: usize = (0..sim.len()).map(|i| sim.path(i).events.len()).sum();
        let result = json!({ "space": "S2", "grid_points": sim.grid().len(), "events": events });
        return Ok((result, true));
    }
    let triple = ctx.group_triple("simulate")?;
    let sim = Simulator::new(&triple, &cfg).map_err(err)?;
    ctx.write_group_paths(&sim)?;
    let desc = &triple.group;
    let mut fixed = 0usize;
    let mut poisson = 0usize;
    let mut ends = Vec::with_capacity(sim.len());
    for i in 0..sim.len() {
        let p = sim.path(i);
        fixed += p.fixed_jump_times().len();
        poisson += p.events.iter().filter(|e| e.kind == lielevy::simulate::EventKind::PoissonJump).count();
        ends.push(desc.coordinates(&p.value_at(desc, cfg.horizon)));
    }
    let end_mean: Vec<f64> = (0..desc.dim())
        .map(|j| ends.iter().map(|v| v[j]).sum::<f64>() / ends.len() as f64)
        .collect();
    let result = json!({
        "group": desc.name(),
        "grid_points": sim.grid().len(),
        "poisson_jumps": poisson,
        "fixed_jumps": fixed,
        "endpoint_mean_coordinates": end_mean,
    });
    Ok((result, true))
}

fn group_estimate_summary(
    est: &EmpiricalTriple<GroupDescriptor>,
    eta_times: &[f64],
) -> Result<Value, String> {
    let desc = &est.space;
    let d = desc.dim();
    let atoms: Vec<Value> = est
        .atoms
        .iter()
        .map(|a| {
            json!({
                "time": a.time,
                "probabilities": a.probabilities,
                "mean_coordinates": a.mean_coords.as_slice()[..d],
                "support_points": a.law.len(),
                "identity_mass": a.law.iter().filter(|(g, _)| g.is_identity()).map(|(_, w)| w).sum::<f64>(),
            })
        })
        .collect();
    let mut eta = Vec::new();
    for &t in eta_times {
        for p in EtaProbe::ALL {
            let (v, se) = est.eta(t, &|g: &GroupElement| p.eval(desc, g)).map_err(err)?;
            eta.push(json!({ "id": p.id(), "t": t, "value": v, "stderr": se }));
        }
    }
    let horizon = *est.finest().grid.last().expect("nonempty grid");
    let end = est.drift_components.eval(horizon);
    Ok(json!({
        "group": desc.name(),
        "n_paths": est.n_paths,
        "level_cells": est.levels.iter().map(|l| l.grid.len() - 1).collect::<Vec<_>>(),
        "detection_radius": est.detection_radius,
        "atoms": atoms,
        "cov_trace_at_horizon": est.a_est(horizon).trace(),
        "cov_by_radius": est.cov_by_radius,
        "cov_nonlinear": est.cov_nonlinear,
        "drift_endpoint_coordinates": end.as_slice()[..d],
        "drift_endpoint_stderr": est.drift_endpoint_stderr.as_slice()[..d],
        "eta": eta,
        "moduli": est.moduli,
        "warnings": est.warnings,
    }))
}

fn write_estimate_artifacts(ctx: &mut Context, est: &EmpiricalTriple<GroupDescriptor>) -> Result<(), String> {
    let d = est.space.dim();
    let triple = est.to_triple().map_err(err)?;
    save_triple(&ctx.artifact("estimated_triple.toml"), &triple).map_err(err)?;

    let cov = est.cov_function();
    let mut w = csv::Writer::from_path(ctx.artifact("cov.csv")).map_err(err)?;
    let mut header = vec!["t".to_string(), "trace".to_string()];
    header.extend((1..=d).flat_map(|r| (1..=d).map(move |c| format!("a{r}{c}"))));
    w.write_record(&header).map_err(err)?;
    for (t, m) in cov.grid().iter().zip(cov.values()) {
        let mut row = vec![t.to_string(), m.trace().to_string()];
        row.extend(row_major(m, d).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(err)?;

    let mut w = csv::Writer::from_path(ctx.artifact("drift.csv")).map_err(err)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("b{j}")));
    w.write_record(&header).map_err(err)?;
    let comps = &est.drift_components;
    for (t, v) in comps.grid().iter().zip(comps.values()) {
        let mut row = vec![t.to_string()];
        row.extend(v.as_slice()[..d].iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn estimate_cmd(ctx: &mut Context) -> Outcome {
    let ecfg = ctx.cfg.estimate.estimator();
    if ctx.triple_file.is_sphere() {
        if ctx.input.is_some() {
            return Err("--input is only supported for group-valued paths".into());
        }
        let s = Sphere::new();
        let sim = XSimulator::new(&s, &ctx.sphere_triple("estimate")?, &ctx.sim_config()).map_err(err)?;
        return Ok((sphere_estimate_summary(&s, &sim, &ecfg, ctx.cfg.sim.horizon)?, true));
    }
    let triple = ctx.group_triple("estimate")?;
    let source = ctx.group_source(&triple)?;
    if ctx.cfg.output.write_paths && ctx.input.is_none() {
        ctx.write_group_paths(source.as_ref())?;
    }
    let est = estimate_group(source.as_ref(), &ecfg).map_err(err)?;
    write_estimate_artifacts(ctx, &est)?;
    Ok((group_estimate_summary(&est, &ctx.cfg.eta_times())?, true))
}

fn sphere_estimate_summary(s: &Sphere, sim: &XSimulator, ecfg: &EstimateConfig, horizon: f64) -> Result<Value, String> {
    let est = estimate(s, sim, ecfg).map_err(err)?;
    let a = est.a_est(horizon);
    let tr = a[(0, 0)] + a[(1, 1)];
    let dev = ((a[(0, 0)] - 0.5 * tr).powi(2) + (a[(1, 1)] - 0.5 * tr).powi(2) + 2.0 * a[(0, 1)].powi(2)).sqrt();
    let end = est.drift_components.eval(horizon);
    Ok(json!({
        "space": "S2",
        "n_paths": est.n_paths,
        "cov_at_horizon": row_major(&a, 2),
        "anisotropy": if tr > 0.0 { dev / tr } else { 0.0 },
        "atoms": est.atoms.iter().map(|a| json!({ "time": a.time, "probabilities": a.probabilities })).collect::<Vec<_>>(),
        "drift_endpoint_coordinates": end.as_slice()[..2],
        "drift_endpoint_stderr": est.drift_endpoint_stderr.as_slice()[..2],
        "warnings": est.warnings,
    }))
}

fn martingale_pass(r: &MartingaleReport) -> bool {
    r.pass && r.count_above(Z_REJECT) == 0
}

fn group_verification(
    ctx: &Context,
    source: &dyn PathSource,
    tested: &ExtendedLevyTriple,
) -> Result<(Value, bool), String> {
    let desc = &tested.group;
    let mart = martingale_test(
        source,
        tested,
        &bank(desc, ctx.cfg.verify.bank),
        &ctx.cfg.pairs(),
        &conditioners(desc, ctx.cfg.verify.conditioners),
    )
    .map_err(err)?;
    let mut jumps = Vec::new();
    let mut jumps_pass = true;
    for a in &tested.atoms {
        let r = fixed_jump_law(source, a.time, &a.law).map_err(err)?;
        let ok = r.tv <= ctx.cfg.verify.jump_law_tolerance;
        jumps_pass &= ok;
        jumps.push(json!({ "report": r, "pass": ok }));
    }
    let pass = martingale_pass(&mart) && jumps_pass;
    Ok((json!({ "martingale": mart, "rejected_entries": mart.count_above(Z_REJECT), "fixed_jump_laws": jumps }), pass))
}

pub fn verify(ctx: &mut Context) -> Outcome {
    let c = ctx.cfg.verify.corrupt_rate;
    if ctx.triple_file.is_sphere() {
        if ctx.input.is_some() {
            return Err("--input is only supported for group-valued paths".into());
        }
        let s = Sphere::new();
        let xt = ctx.sphere_triple("verify")?;
        let sim = XSimulator::new(&s, &xt, &ctx.sim_config()).map_err(err)?;
        let plan = MtfXPlan::new(&s, &scaled_sphere(&xt, c), sim.grid()).map_err(err)?;
        let mart = martingale_test_x(&sim, &plan, &sphere_bank(), &ctx.cfg.pairs()).map_err(err)?;
        let pass = martingale_pass(&mart);
        return Ok((
            json!({ "corrupt_rate": c, "martingale": mart, "rejected_entries": mart.count_above(Z_REJECT) }),
            pass,
        ));
    }
    let triple = ctx.group_triple("verify")?;
    let source = ctx.group_source(&triple)?;
    if ctx.cfg.output.write_paths && ctx.input.is_none() {
        ctx.write_group_paths(source.as_ref())?;
    }
    let tested = triple.with_scaled_rates(c);
    let (mut v, pass) = group_verification(ctx, source.as_ref(), &tested)?;
    v["corrupt_rate"] = json!(c);
    Ok((v, pass))
}

pub fn roundtrip(ctx: &mut Context) -> Outcome {
    let triple = ctx.group_triple("roundtrip")?;
    let source = ctx.group_source(&triple)?;
    if ctx.cfg.output.write_paths && ctx.input.is_none() {
        ctx.write_group_paths(source.as_ref())?;
    }
    let (verification, v_pass) = group_verification(ctx, source.as_ref(), &triple)?;
    let est = estimate_group(source.as_ref(), &ctx.cfg.estimate.estimator()).map_err(err)?;
    write_estimate_artifacts(ctx, &est)?;
    let horizon = ctx.cfg.sim.horizon;
    let rt = round_trip(
        &triple,
        &est,
        &ctx.cfg.eta_times(),
        ctx.cfg.estimate.cov_time.unwrap_or(horizon),
        ctx.cfg.estimate.drift_time.unwrap_or(horizon),
    )
    .map_err(err)?;
    let pass = v_pass && rt.pass;
    Ok((json!({ "verification": verification, "round_trip": rt, "warnings": est.warnings }), pass))
}

pub fn project(ctx: &mut Context) -> Outcome {
    let s = Sphere::new();
    let xt = ctx.sphere_triple("project")?;
    let lifted = lift_triple(&s, &xt).map_err(err)?;
    let violations = lifted.validate();
    save_triple(&ctx.artifact("lifted_triple.toml"), &lifted).map_err(err)?;
    let sim = Simulator::new(&lifted, &ctx.sim_config()).map_err(err)?;
    let projected = ProjectedPaths(&sim);
    ctx.write_sphere_paths(&projected)?;
    let horizon = ctx.cfg.sim.horizon;
    let ends: Vec<_> = (0..projected.len()).map(|i| projected.x_path(i).value_at(horizon)).collect();
    let means: Vec<Value> = lift_check_bank()
        .iter()
        .map(|f| {
            let vals: Vec<f64> = ends.iter().map(|x| f.value(x)).collect();
            let (m, se) = mean_stderr(&vals);
            json!({ "id": f.id, "mean": m, "stderr": se })
        })
        .collect();
    let pass = violations.is_empty();
    Ok((
        json!({
            "lifted_group": lifted.group.name(),
            "lifted_violations": violations.to_string(),
            "grid_points": sim.grid().len(),
            "bank_means_at_horizon": means,
        }),
        pass,
    ))
}

pub fn lift_check_cmd(ctx: &mut Context) -> Outcome {
    let xt = ctx.sphere_triple("lift-check")?;
    let r = lift_check(&Sphere::new(), &xt, &ctx.sim_config(), &ctx.cfg.lift_times(), &lift_check_bank()).map_err(err)?;
    let pass = r.pass;
    Ok((serde_json::to_value(&r).map_err(err)?, pass))
}
