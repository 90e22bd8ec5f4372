//! Comparisons between a known triple and what the estimator, or a second
//! simulator, recovers from sampled paths.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::EmpiricalTriple;
use crate::group::{smooth_cutoff, GroupDescriptor, GroupElement};
use crate::homogeneous::{
    lift_triple, sphere_bank, spherical, ProjectedPaths, Sphere, SpherePoint, XPathSource, XSimulator, XTestFunction,
    XTriple,
};
use crate::measure::DiscreteMeasure;
use crate::simulate::{SimConfig, Simulator};
use crate::stats::{mean_stderr, total_variation, two_sample_z};
use crate::triple::ExtendedLevyTriple;

pub const ETA_REL_TOL: f64 = 0.10;
pub const TRACE_REL_TOL: f64 = 0.15;
pub const ATOM_TV_TOL: f64 = 0.05;
pub const DRIFT_TOL: f64 = 0.05;
pub const LIFT_Z_TOL: f64 = 4.0;
/// Atoms closer than this in time are matched.
pub const ATOM_TIME_TOL: f64 = 5e-3;

/// Test functions for `η` that vanish on the ball of radius `r_in` and whose
/// radial factor is 1 outside radius `1.05 r_in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaProbe {
    Tail,
    TailTilted,
    TailDiagonal,
}

impl EtaProbe {
    pub const ALL: [EtaProbe; 3] = [EtaProbe::Tail, EtaProbe::TailTilted, EtaProbe::TailDiagonal];

    pub fn id(&self) -> &'static str {
        match self {
            EtaProbe::Tail => "tail",
            EtaProbe::TailTilted => "tail_tilted",
            EtaProbe::TailDiagonal => "tail_diagonal",
        }
    }

    pub fn eval(&self, desc: &GroupDescriptor, g: &GroupElement) -> f64 {
        let r_in = desc.r_in();
        let w = 1.0 - smooth_cutoff(desc.chart_radius(g), r_in, 1.05 * r_in);
        match self {
            EtaProbe::Tail => w,
            EtaProbe::TailTilted => w * (1.0 + 0.5 * g.0[(2, 1)]),
            EtaProbe::TailDiagonal => w * g.0[(0, 0)] * g.0[(0, 0)],
        }
    }
}

/// Bins `sample` to the nearest support point of `law` (with `e` added) and returns the TV distance.
pub fn binned_tv(desc: &GroupDescriptor, sample: &[(GroupElement, f64)], law: &DiscreteMeasure) -> f64 {
    let mut support: Vec<GroupElement> = law.atoms().iter().map(|(g, _)| *g).collect();
    let mut expected: Vec<f64> = law.atoms().iter().map(|(_, w)| *w).collect();
    if !support.iter().any(|g| g.is_identity()) {
        support.push(GroupElement::identity());
        expected.push(0.0);
    }
    let mut got = vec![0.0; support.len()];
    for (x, w) in sample {
        let k = nearest(desc, &support, x);
        got[k] += w;
    }
    total_variation(&got, &expected)
}

fn nearest(desc: &GroupDescriptor, support: &[GroupElement], x: &GroupElement) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, s) in support.iter().enumerate() {
        let d = desc.distance(s, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaCheck {
    pub id: String,
    pub t: f64,
    pub truth: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalarCheck {
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ScalarCheck {
    fn new(truth: f64, estimate: f64, error: f64, tolerance: f64) -> Self {
        ScalarCheck { truth, estimate, error, tolerance, pass: error <= tolerance }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomCheck {
    pub time: f64,
    pub detected_time: Option<f64>,
    pub tv: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundTripReport {
    pub eta: Vec<EtaCheck>,
    pub cov_trace: ScalarCheck,
    pub atoms: Vec<AtomCheck>,
    pub spurious_atoms: Vec<f64>,
    pub drift_distance: ScalarCheck,
    pub pass: bool,
}

/// Compares an estimate against the triple that generated the paths.
///
/// `eta_times` are the times at which `η̂(t, f)` is checked, `a_time` the time of the
/// covariance trace and `drift_time` the time of the drift endpoint.
pub fn round_trip(
    truth: &ExtendedLevyTriple,
    est: &EmpiricalTriple<GroupDescriptor>,
    eta_times: &[f64],
    a_time: f64,
    drift_time: f64,
) -> Result<RoundTripReport> {
    let desc = &truth.group;
    let mut eta = Vec::new();
    for &t in eta_times {
        for probe in EtaProbe::ALL {
            let f = |g: &GroupElement| probe.eval(desc, g);
            let exact = truth.eta(t, f);
            let (e, se) = est.eta(t, &f)?;
            let rel_err = (e - exact).abs() / exact.abs().max(1e-12);
            eta.push(EtaCheck {
                id: probe.id().into(),
                t,
                truth: exact,
                estimate: e,
                stderr: se,
                rel_err,
                pass: rel_err <= ETA_REL_TOL,
            });
        }
    }

    let tr_true = truth.cov.eval(a_time).trace();
    let tr_est = est.a_est(a_time).trace();
    let cov_trace = ScalarCheck::new(tr_true, tr_est, (tr_est - tr_true).abs() / tr_true.abs().max(1e-12), TRACE_REL_TOL);

    let mut matched = vec![false; est.atoms.len()];
    let mut atoms = Vec::new();
    for a in &truth.atoms {
        let hit = est.atoms.iter().position(|d| (d.time - a.time).abs() <= ATOM_TIME_TOL);
        let (detected_time, tv) = match hit {
            Some(k) => {
                matched[k] = true;
                (Some(est.atoms[k].time), binned_tv(desc, &est.atoms[k].law, &a.law))
            }
            None => (None, 1.0),
        };
        atoms.push(AtomCheck { time: a.time, detected_time, tv, pass: detected_time.is_some() && tv <= ATOM_TV_TOL });
    }
    let spurious_atoms: Vec<f64> =
        est.atoms.iter().zip(&matched).filter(|(_, m)| !**m).map(|(d, _)| d.time).collect();

    let b_true = truth.drift.value_at(desc, drift_time);
    let b_est = est.drift_path().value_at(desc, drift_time);
    let dist = desc.distance(&b_true, &b_est);
    let drift_distance = ScalarCheck::new(0.0, dist, dist, DRIFT_TOL);

    let pass = eta.iter().all(|c| c.pass)
        && cov_trace.pass
        && atoms.iter().all(|a| a.pass)
        && spurious_atoms.is_empty()
        && drift_distance.pass;
    Ok(RoundTripReport { eta, cov_trace, atoms, spurious_atoms, drift_distance, pass })
}

/// The four bank functions plus two wide bumps off the pole.
pub fn lift_check_bank() -> Vec<XTestFunction> {
    let mut bank = sphere_bank();
    bank.push(XTestFunction::new("lateral", spherical(1.2, 2.0), 0.8));
    bank.push(XTestFunction::new("wide", Sphere::o(), 2.0));
    bank
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftEntry {
    pub f_id: String,
    pub t: f64,
    pub mean_lifted: f64,
    pub mean_direct: f64,
    pub stderr_lifted: f64,
    pub stderr_direct: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftCheckReport {
    pub entries: Vec<LiftEntry>,
    pub n_paths: usize,
    pub max_abs_z: f64,
    pub pass: bool,
}

fn evaluate_x(source: &dyn XPathSource, bank: &[XTestFunction], times: &[f64]) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let p = source.x_path(i);
            let xs: Vec<SpherePoint> = times.iter().map(|&t| p.value_at(t)).collect();
            bank.iter().flat_map(|f| xs.iter().map(move |x| f.value(x))).collect()
        })
        .collect();
    let width = bank.len() * times.len();
    (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
}

/// Lifts `xt` to SO(3), simulates and projects, then compares with direct simulation on
/// the sphere. The direct ensemble uses seed `cfg.seed + 1`.
pub fn lift_check(
    sphere: &Sphere,
    xt: &XTriple,
    cfg: &SimConfig,
    times: &[f64],
    bank: &[XTestFunction],
) -> Result<LiftCheckReport> {
    if times.iter().any(|&t| t < 0.0 || t > cfg.horizon) {
        return Err(Error::InvalidArgument(format!("comparison times must lie in [0, {}]", cfg.horizon)));
    }
    let lifted = lift_triple(sphere, xt)?;
    let sim = Simulator::new(&lifted, cfg)?;
    let projected = ProjectedPaths(&sim);
    let direct_cfg = SimConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() };
    let direct = XSimulator::new(sphere, xt, &direct_cfg)?;
    let a = evaluate_x(&projected, bank, times);
    let b = evaluate_x(&direct, bank, times);
    let mut entries = Vec::new();
    let mut c = 0;
    for f in bank {
        for &t in times {
            let (ma, sa) = mean_stderr(&a[c]);
            let (mb, sb) = mean_stderr(&b[c]);
            let z = two_sample_z(&a[c], &b[c]);
            entries.push(LiftEntry {
                f_id: f.id.clone(),
                t,
                mean_lifted: ma,
                mean_direct: mb,
                stderr_lifted: sa,
                stderr_direct: sb,
                z,
                pass: z.abs() <= LIFT_Z_TOL,
            });
            c += 1;
        }
    }
    let max_abs_z = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
    let pass = entries.iter().all(|e| e.pass);
    Ok(LiftCheckReport { entries, n_paths: cfg.paths, max_abs_z, pass })
}
