//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lielevy::estimate::{estimate, estimate_group, EstimateConfig};
use lielevy::experiment::{lift_check, lift_check_bank, round_trip};
use lielevy::homogeneous::{colatitude, sphere_bank, MtfXPlan, Section, Sphere, XSimulator};
use lielevy::reference::{self, SO3_ATOM, SO3_HORIZON};
use lielevy::simulate::{split_shifted, SimConfig, Simulator};
use lielevy::stats::ks_distance;
use lielevy::testfn::default_bank;
use lielevy::triple::{components_to_drift_path, drift_path_to_components, Quadruple};
use lielevy::verify::{default_conditioners, fixed_jump_law, martingale_test, MtfPlan};
use lielevy::{GroupDescriptor, LieAlgebraVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, started: Instant, out: Result<Outcome, String>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            println!("{id} {name}: {} ({}; {secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            o.pass
        }
        Err(e) => {
            println!("{id} {name}: FAIL (error: {e}; {secs:.1}s)");
            false
        }
    }
}

fn so3_simulator() -> lielevy::Result<Simulator> {
    Simulator::new(&reference::so3_reference(), &SimConfig::new(1000, SO3_HORIZON, 20_000, 20_240_601))
}

fn a1(sim: &Simulator) -> lielevy::Result<Outcome> {
    let truth = reference::so3_reference();
    let g = &truth.group;
    let bank = default_bank(g);
    let hs = default_conditioners(g);
    let pairs = [(0.0, 0.5), (0.5, 0.95), (0.95, 1.05), (1.05, 1.5)];
    let good = martingale_test(sim, &truth, &bank, &pairs, &hs)?;
    let rate = martingale_test(sim, &truth.with_scaled_rates(2.0), &bank, &pairs, &hs)?;
    let atom = martingale_test(sim, &truth.with_atom_law(SO3_ATOM, reference::so3_wrong_atom_law())?, &bank, &pairs, &hs)?;
    let n_entries = good.entries.len();
    let pass = n_entries == 160 && good.pass_fraction >= 0.95 && rate.count_above(6.0) >= 1 && atom.count_above(6.0) >= 1;
    Ok(Outcome {
        pass,
        detail: format!(
            "{n_entries} entries, {:.1}% with |z|<=4, max|z| {:.2}; rate x2 max|z| {:.1}; wrong atom law max|z| {:.1}",
            100.0 * good.pass_fraction,
            good.max_abs_z,
            rate.max_abs_z,
            atom.max_abs_z
        ),
    })
}

fn a2(sim: &Simulator) -> lielevy::Result<Outcome> {
    let truth = reference::so3_reference();
    let est = estimate_group(sim, &EstimateConfig::default())?;
    let r = round_trip(&truth, &est, &[SO3_ATOM, SO3_HORIZON], 1.0, 1.0)?;
    let worst_eta = r.eta.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let atom_tv = r.atoms.first().map(|a| a.tv).unwrap_or(1.0);
    Ok(Outcome {
        pass: r.pass,
        detail: format!(
            "worst eta rel err {:.3}; tr A_est(1) {:.4} (rel err {:.3}); atoms {:?}, TV {:.4}, spurious {:?}; drift distance {:.4}",
            worst_eta,
            r.cov_trace.estimate,
            r.cov_trace.error,
            r.atoms.iter().map(|a| a.detected_time).collect::<Vec<_>>(),
            atom_tv,
            r.spurious_atoms,
            r.drift_distance.error
        ),
    })
}

fn a3(sim: &Simulator) -> lielevy::Result<Outcome> {
    let r = fixed_jump_law(sim, SO3_ATOM, &reference::so3_atom_law())?;
    Ok(Outcome { pass: r.tv <= 0.05, detail: format!("TV {:.4} over {} paths", r.tv, r.n) })
}

fn a4() -> lielevy::Result<Outcome> {
    let t = reference::rd2_reference();
    let g = &t.group;
    let m = 50_000;
    let sim = Simulator::new(&t, &SimConfig::new(100, 1.0, m, 77))?;
    let ends: Vec<Vector2<f64>> = (0..m)
        .map(|i| {
            let v = g.log(&sim.path(i).value_at(g, 1.0)).expect("RD log is global");
            Vector2::new(v[0], v[1])
        })
        .collect();
    // drift b^c_1, compensator ∫y ρ(dy), Gaussian covariance I, jump law ρ, fixed-jump law ν
    let bc = Vector2::new(0.2, -0.1);
    let comp = 0.5 * Vector2::new(0.5, 0.0) + 0.5 * Vector2::new(-0.3, 0.6);
    let rho = [(Vector2::new(0.5, 0.0), 0.5), (Vector2::new(-0.3, 0.6), 0.5)];
    let nu = [(Vector2::new(0.0, 0.0), 0.6), (Vector2::new(0.8, -0.4), 0.4)];
    let cf = |law: &[(Vector2<f64>, f64)], th: &Vector2<f64>| {
        law.iter().fold((0.0, 0.0), |(re, im), (y, w)| (re + w * th.dot(y).cos(), im + w * th.dot(y).sin()))
    };
    let freqs = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut worst: f64 = 0.0;
    for &a in &freqs {
        for &b in &freqs {
            let th = Vector2::new(a, b);
            let (rr, ri) = cf(&rho, &th);
            let (nr, ni) = cf(&nu, &th);
            let modulus = (-0.5 * th.norm_squared() + (rr - 1.0)).exp();
            let phase = th.dot(&(bc - comp)) + ri;
            let (er, ei) = (modulus * phase.cos(), modulus * phase.sin());
            let (xr, xi) = (er * nr - ei * ni, er * ni + ei * nr);
            let (mut sr, mut si) = (0.0, 0.0);
            for x in &ends {
                let p = th.dot(x);
                sr += p.cos();
                si += p.sin();
            }
            let (sr, si) = (sr / m as f64, si / m as f64);
            worst = worst.max(((sr - xr).powi(2) + (si - xi).powi(2)).sqrt());
        }
    }
    Ok(Outcome { pass: worst <= 0.02, detail: format!("max |cf error| {worst:.4} on 5x5 grid, M = {m}") })
}

fn legendre_all(c: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0, c];
    for l in 1..n {
        let next = ((2 * l + 1) as f64 * c * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
        p.push(next);
    }
    p
}

/// CDF of the colatitude of Brownian motion with generator `½Δ` run for time `2τ`.
fn heat_colatitude_cdf(theta: f64, tau: f64) -> f64 {
    let c = theta.cos();
    let n = 80;
    let p = legendre_all(c, n + 1);
    let mut f = 0.5 * (1.0 - c);
    for l in 1..=n {
        let lf = l as f64;
        f += 0.5 * (-lf * (lf + 1.0) * tau).exp() * (p[l - 1] - p[l + 1]);
    }
    f
}

fn a5() -> lielevy::Result<Outcome> {
    let s = Sphere::new();
    let xt = reference::sphere_brownian();
    let sim = XSimulator::new(&s, &xt, &SimConfig::new(400, 1.0, 20_000, 515))?;
    let est = estimate(&s, &sim, &EstimateConfig::default())?;
    let a = est.a_est(1.0);
    let tr = a[(0, 0)] + a[(1, 1)];
    let dev = ((a[(0, 0)] - 0.5 * tr).powi(2) + (a[(1, 1)] - 0.5 * tr).powi(2) + 2.0 * a[(0, 1)].powi(2)).sqrt();
    let aniso = dev / tr;
    let mu = est.drift_components.eval(1.0);
    let se = est.drift_endpoint_stderr;
    let drift_ok = (0..2).all(|j| mu[j].abs() <= 3.0 * se[j]);
    let colats: Vec<f64> = (0..20_000).map(|i| colatitude(&sim.path(i).value_at(1.0))).collect();
    let ks = ks_distance(&colats, |th| heat_colatitude_cdf(th, 0.5));
    Ok(Outcome {
        pass: aniso <= 0.1 && drift_ok && ks <= 0.02,
        detail: format!(
            "anisotropy {aniso:.4} (tr {tr:.3}); drift ({:.4}, {:.4}) vs 3σ ({:.4}, {:.4}); KS {ks:.4}",
            mu[0],
            mu[1],
            3.0 * se[0],
            3.0 * se[1]
        ),
    })
}

fn a6() -> lielevy::Result<Outcome> {
    let r = lift_check(
        &Sphere::new(),
        &reference::sphere_mixed(),
        &SimConfig::new(200, 1.0, 20_000, 606),
        &[0.5, 1.0],
        &lift_check_bank(),
    )?;
    Ok(Outcome { pass: r.pass, detail: format!("{} comparisons, max |z| {:.2}", r.entries.len(), r.max_abs_z) })
}

fn a7() -> lielevy::Result<Outcome> {
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    // bar transform: M_t f on x equals the quadruple functional on z = x b^{-1}
    let t = reference::so3_reference();
    let sim = Simulator::new(&t, &SimConfig::new(200, SO3_HORIZON, 50, 71))?;
    let grid = sim.grid().as_ref().clone();
    let bank = default_bank(&t.group);
    let direct = MtfPlan::conjugated(&t, &grid)?;
    let quad = MtfPlan::quadruple(&Quadruple::bar_transform(&t, &grid)?)?;
    let mut bar: f64 = 0.0;
    let mut exact = true;
    for i in 0..50 {
        let x = sim.path(i);
        let z = split_shifted(&t.group, &x, &t.drift)?;
        let a = direct.evaluate(&x, &bank)?;
        let b = quad.evaluate(&z, &bank)?;
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (u, v) in ra.iter().zip(rb) {
                bar = bar.max((u - v).abs());
            }
        }
        let (removed, ev) = x.take_fixed_jump(SO3_ATOM);
        let ev = ev.ok_or_else(|| lielevy::Error::InvalidArgument("missing fixed jump".into()))?;
        exact &= removed.insert_fixed_jump(SO3_ATOM, ev.increment) == x;
    }
    checks.push(("bar", bar, 1e-9));

    // section independence of the sphere functional
    let xt = reference::sphere_mixed();
    let s = Sphere::new();
    let tw = Sphere::new().with_section(Section::Twisted);
    let xsim = XSimulator::new(&s, &xt, &SimConfig::new(200, 1.0, 50, 72))?;
    let pa = MtfXPlan::new(&s, &xt, xsim.grid())?;
    let pb = MtfXPlan::new(&tw, &xt, xsim.grid())?;
    let xbank = sphere_bank();
    let mut sec: f64 = 0.0;
    for i in 0..50 {
        let p = xsim.path(i);
        let (a, b) = (pa.evaluate(&p, &xbank)?, pb.evaluate(&p, &xbank)?);
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                sec = sec.max((u - v).abs());
            }
        }
    }
    checks.push(("section", sec, 1e-9));

    // Ad homomorphism and exp/log round trip
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let groups = [GroupDescriptor::so3(), GroupDescriptor::se2(), GroupDescriptor::rd(2)?, GroupDescriptor::circle()];
    let (mut ad, mut el): (f64, f64) = (0.0, 0.0);
    for g in &groups {
        for _ in 0..500 {
            let x = g.random_element(&mut rng, 2.0);
            let y = g.random_element(&mut rng, 2.0);
            ad = ad.max((g.adjoint(&(x * y)) - g.adjoint(&x) * g.adjoint(&y)).amax());
            let mut v = LieAlgebraVector::zeros();
            for j in 0..g.dim() {
                v[j] = rng.random_range(-1.0..1.0);
            }
            let v = v * (2.5 * rng.random::<f64>() / v.norm().max(1e-12));
            el = el.max((g.log(&g.exp(&v))? - v).amax());
        }
    }
    checks.push(("Ad", ad, 1e-9));
    checks.push(("exp/log", el, 1e-8));

    // drift components → path → components
    let fine: Vec<f64> = (0..=150).map(|k| k as f64 * SO3_HORIZON / 150.0).collect();
    let comps = &t.drift.continuous;
    let path = components_to_drift_path(&t.group, comps, &fine);
    let back = drift_path_to_components(&t.group, &fine, &path)?;
    let dc = fine.iter().map(|&s| (back.eval(s) - comps.eval(s)).amax()).fold(0.0, f64::max);
    checks.push(("drift components", dc, 1e-6));

    let pass = exact && checks.iter().all(|(_, v, tol)| v <= tol);
    let mut lines: Vec<String> = checks.iter().map(|(n, v, _)| format!("{n} {v:.1e}")).collect();
    lines.push(format!("remove/insert {}", if exact { "exact" } else { "differs" }));
    Ok(Outcome { pass, detail: lines.join("; ") })
}

fn main() -> ExitCode {
    let mut all = true;
    let t0 = Instant::now();
    match so3_simulator() {
        Ok(sim) => {
            all &= report("A1", "martingale suite", t0, a1(&sim).map_err(|e| e.to_string()));
            let t = Instant::now();
            all &= report("A2", "round trip", t, a2(&sim).map_err(|e| e.to_string()));
            let t = Instant::now();
            all &= report("A3", "fixed-jump law", t, a3(&sim).map_err(|e| e.to_string()));
        }
        Err(e) => {
            for (id, name) in [("A1", "martingale suite"), ("A2", "round trip"), ("A3", "fixed-jump law")] {
                all &= report(id, name, t0, Err(e.to_string()));
            }
        }
    }
    let t = Instant::now();
    all &= report("A4", "classical cross-check", t, a4().map_err(|e| e.to_string()));
    let t = Instant::now();
    all &= report("A5", "irreducible sphere", t, a5().map_err(|e| e.to_string()));
    let t = Instant::now();
    all &= report("A6", "projection/lift", t, a6().map_err(|e| e.to_string()));
    let t = Instant::now();
    all &= report("A7", "exact identities", t, a7().map_err(|e| e.to_string()));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
