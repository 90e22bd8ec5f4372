//! The sphere `S² = SO(3)/SO(2)` as a homogeneous space: section maps, Haar
//! averages over `K`, triples on `X`, the lift to `K`-conjugate invariant triples
//! on `G` and the martingale functionals on `X`.
//!
//! `K` is the group of rotations about the z-axis, `o = e_z` and
//! `𝔭 = span(ξ_1, ξ_2)`. Points are unit vectors.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{Ensemble, Space};
use crate::group::{smooth_cutoff, GroupDescriptor, GroupElement, LieAlgebraVector, Mat};
use crate::linalg::psd_sqrt;
use crate::measure::{DiscreteMeasure, SpatialLaw};
use crate::simulate::{path_rng, poisson_small, EventKind, PathSource, SamplePath, SimConfig};
use crate::stats::{mean_stderr, mean_stderr_by, z_score};
use crate::triple::{
    grid_index, CovMatrixFunction, ExtendedLevyTriple, FixedJump, LevyMeasureC, LevyPiece, PiecewiseLinear, TIME_TOL,
};
use crate::verify::{entry, MartingaleReport};

pub type SpherePoint = Vector3<f64>;

/// Nodes of the trapezoid rule on `K`.
pub const K_NODES: usize = 256;

/// Off-chart completion of the section map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Section {
    /// Rotation about `o × x`; the antipode uses a half turn about `e_x`.
    Axis,
    /// The axis section followed by a point-dependent rotation about `o` away from `o`.
    Twisted,
}

#[derive(Clone, Debug)]
pub struct Sphere {
    group: GroupDescriptor,
    k_grid: Arc<Vec<GroupElement>>,
    section: Section,
}

impl Default for Sphere {
    fn default() -> Self {
        Self::new()
    }
}

pub fn rot_z(angle: f64) -> GroupElement {
    let (s, c) = angle.sin_cos();
    GroupElement(Mat::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

/// Angle from the north pole.
pub fn colatitude(x: &SpherePoint) -> f64 {
    (x[0].hypot(x[1])).atan2(x[2])
}

/// Unit vector at the given colatitude and longitude.
pub fn spherical(colat: f64, lon: f64) -> SpherePoint {
    let (s, c) = colat.sin_cos();
    Vector3::new(s * lon.cos(), s * lon.sin(), c)
}

pub fn canonical(x: &SpherePoint) -> SpherePoint {
    x / x.norm()
}

impl Sphere {
    pub fn new() -> Self {
        let k_grid = (0..K_NODES).map(|i| rot_z(2.0 * PI * i as f64 / K_NODES as f64)).collect();
        Sphere { group: GroupDescriptor::so3(), k_grid: Arc::new(k_grid), section: Section::Axis }
    }

    pub fn with_section(mut self, section: Section) -> Self {
        self.section = section;
        self
    }

    pub fn section_kind(&self) -> Section {
        self.section
    }

    pub fn o() -> SpherePoint {
        Vector3::z()
    }

    pub fn k_grid(&self) -> &[GroupElement] {
        &self.k_grid
    }

    pub fn act(g: &GroupElement, x: &SpherePoint) -> SpherePoint {
        canonical(&(g.0 * x))
    }

    /// `π(g) = g o`.
    pub fn project(g: &GroupElement) -> SpherePoint {
        Self::act(g, &Self::o())
    }

    fn axis_section(&self, x: &SpherePoint) -> GroupElement {
        let rho = x[0].hypot(x[1]);
        if rho == 0.0 {
            return if x[2] > 0.0 { GroupElement::identity() } else { self.group.exp(&Vector3::new(PI, 0.0, 0.0)) };
        }
        let th = rho.atan2(x[2]);
        self.group.exp(&(Vector3::new(-x[1], x[0], 0.0) * (th / rho)))
    }

    /// Rotation about `o` applied after the axis section by the twisted section.
    pub fn twist_angle(&self, x: &SpherePoint) -> f64 {
        (1.0 - smooth_cutoff(colatitude(x), self.group.r_in(), self.group.r_out())) * (1.3 + 0.7 * x[0])
    }

    /// `S(x)` with `π(S(x)) = x`.
    pub fn section(&self, x: &SpherePoint) -> GroupElement {
        let s = self.axis_section(x);
        match self.section {
            Section::Axis => s,
            Section::Twisted => s * rot_z(self.twist_angle(x)),
        }
    }

    /// `S(x) y`.
    pub fn product(&self, x: &SpherePoint, y: &SpherePoint) -> SpherePoint {
        Self::act(&self.section(x), y)
    }

    /// Quadrature average of `f(kx)` over `K`.
    pub fn haar_average(&self, f: &dyn Fn(&SpherePoint) -> f64, x: &SpherePoint) -> f64 {
        self.k_grid.iter().map(|k| f(&Self::act(k, x))).sum::<f64>() / K_NODES as f64
    }

    /// Mean `exp(Σ μ(φ_j) ξ_j) o` of a probability law.
    pub fn mean_point(&self, law: &[(SpherePoint, f64)]) -> SpherePoint {
        let v = law.iter().fold(LieAlgebraVector::zeros(), |a, (x, w)| a + self.coordinates(x) * *w);
        self.exp_point(&v)
    }

    /// Residuals of `K o = o`, `Ad(k)𝔭 = 𝔭` and `Σφ_i(x)Ad(k)ξ_i = Σφ_i(kx)ξ_i` on sampled points.
    pub fn structure_residuals(&self) -> [f64; 3] {
        let mut ko: f64 = 0.0;
        let mut adp: f64 = 0.0;
        let mut equi: f64 = 0.0;
        let probes: Vec<SpherePoint> =
            (0..40).map(|i| spherical(0.07 * i as f64 + 0.01, 0.77 * i as f64)).collect();
        for (i, k) in self.k_grid.iter().enumerate().step_by(7) {
            ko = ko.max((Self::act(k, &Self::o()) - Self::o()).norm());
            let ad = self.group.adjoint(k);
            for j in 0..2 {
                adp = adp.max(ad[(2, j)].abs());
            }
            for x in probes.iter().skip(i % 3) {
                let lhs = ad * self.coordinates(x);
                let rhs = self.coordinates(&Self::act(k, x));
                equi = equi.max((lhs - rhs).amax());
            }
        }
        [ko, adp, equi]
    }
}

impl Space for Sphere {
    type Point = SpherePoint;

    fn group(&self) -> &GroupDescriptor {
        &self.group
    }
    fn dim(&self) -> usize {
        2
    }
    fn r_in(&self) -> f64 {
        self.group.r_in()
    }
    fn origin(&self) -> SpherePoint {
        Self::o()
    }
    fn increment(&self, from: &SpherePoint, to: &SpherePoint) -> SpherePoint {
        canonical(&(self.section(from).0.transpose() * to))
    }
    fn coordinates(&self, x: &SpherePoint) -> LieAlgebraVector {
        let rho = x[0].hypot(x[1]);
        let th = rho.atan2(x[2]);
        if rho == 0.0 || th >= self.group.r_out() {
            return LieAlgebraVector::zeros();
        }
        Vector3::new(-x[1], x[0], 0.0) * (smooth_cutoff(th, self.group.r_in(), self.group.r_out()) * th / rho)
    }
    fn radius(&self, x: &SpherePoint) -> f64 {
        colatitude(x)
    }
    fn chart(&self, x: &SpherePoint) -> Option<LieAlgebraVector> {
        let rho = x[0].hypot(x[1]);
        let th = rho.atan2(x[2]);
        if th >= self.group.r_cut() {
            return None;
        }
        if rho == 0.0 {
            return Some(LieAlgebraVector::zeros());
        }
        Some(Vector3::new(-x[1], x[0], 0.0) * (th / rho))
    }
    fn exp_point(&self, v: &LieAlgebraVector) -> SpherePoint {
        Self::project(&self.exp_group(v))
    }
    fn exp_group(&self, v: &LieAlgebraVector) -> GroupElement {
        self.group.exp(&Vector3::new(v[0], v[1], 0.0))
    }
}

/// Uniform law on the `K`-orbit at colatitude `colat`, one atom per quadrature node.
pub fn orbit_law(colat: f64) -> Vec<(SpherePoint, f64)> {
    (0..K_NODES).map(|i| (spherical(colat, 2.0 * PI * i as f64 / K_NODES as f64), 1.0 / K_NODES as f64)).collect()
}

/// Mixture `Σ w_i · orbit(θ_i)`.
pub fn orbit_mixture(parts: &[(f64, f64)]) -> Vec<(SpherePoint, f64)> {
    parts.iter().flat_map(|(th, w)| orbit_law(*th).into_iter().map(move |(x, v)| (x, v * w))).collect()
}

/// Smooth test function `g(‖y − c‖² / s²)` on the sphere, evaluated through the ambient space.
#[derive(Clone, Debug)]
pub struct XTestFunction {
    pub id: String,
    pub center: SpherePoint,
    pub scale: f64,
}

/// Value, first and second derivatives of `t ↦ f(S(x) e^{t·ξ} o)` at `t = 0`.
#[derive(Clone, Copy, Debug)]
pub struct XJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl XTestFunction {
    pub fn new(id: impl Into<String>, center: SpherePoint, scale: f64) -> Self {
        XTestFunction { id: id.into(), center: canonical(&center), scale }
    }

    pub fn value(&self, y: &SpherePoint) -> f64 {
        (-(y - self.center).norm_squared() / (self.scale * self.scale)).exp()
    }

    fn ambient(&self, y: &SpherePoint) -> (f64, Vector3<f64>, nalgebra::Matrix3<f64>) {
        let s2 = self.scale * self.scale;
        let d = y - self.center;
        let v = (-d.norm_squared() / s2).exp();
        let grad = d * (-2.0 * v / s2);
        let hess = d * d.transpose() * (4.0 * v / (s2 * s2)) - nalgebra::Matrix3::identity() * (2.0 * v / s2);
        (v, grad, hess)
    }

    pub fn jet(&self, sphere: &Sphere, x: &SpherePoint) -> XJet {
        let s = sphere.section(x).0;
        let o = Sphere::o();
        let basis = sphere.group.basis();
        let sym = sphere.group.sym_products();
        let d1 = [s * basis[0] * o, s * basis[1] * o];
        let y = s * o;
        let (value, g, h) = self.ambient(&y);
        let mut out = XJet { value, grad: [0.0; 2], hess: [[0.0; 2]; 2] };
        for j in 0..2 {
            out.grad[j] = g.dot(&d1[j]);
            for k in 0..2 {
                let d2 = s * sym[j][k] * o;
                out.hess[j][k] = d1[j].dot(&(h * d1[k])) + g.dot(&d2);
            }
        }
        out
    }
}

/// Four Gaussian bumps, two of them `K`-invariant.
pub fn sphere_bank() -> Vec<XTestFunction> {
    vec![
        XTestFunction::new("pole", Sphere::o(), 0.8),
        XTestFunction::new("tilted", spherical(1.0, 0.0), 0.7),
        XTestFunction::new("equator", spherical(PI / 2.0, 2.0), 1.0),
        XTestFunction::new("south", -Sphere::o(), 1.2),
    ]
}

/// Constant-rate piece of `η^c` on the sphere; `law` is a probability law off `o`.
#[derive(Clone, Debug)]
pub struct XLevyPiece {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
    pub law: Arc<Vec<(SpherePoint, f64)>>,
}

impl XLevyPiece {
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.start);
        let hi = b.min(self.end);
        if hi > lo {
            self.rate * (hi - lo)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct XAtom {
    pub time: f64,
    /// `ν_u`, a probability law possibly charging `o`.
    pub law: Vec<(SpherePoint, f64)>,
}

/// Extended Lévy triple on the sphere. The drift is `o`; `cov` uses the padded `𝔭`-first basis.
#[derive(Clone, Debug)]
pub struct XTriple {
    pub cov: CovMatrixFunction,
    pub levy_c: Vec<XLevyPiece>,
    pub atoms: Vec<XAtom>,
}

impl XTriple {
    pub fn zero() -> Self {
        XTriple { cov: PiecewiseLinear::constant(Mat::zeros()), levy_c: Vec::new(), atoms: Vec::new() }
    }

    /// Triple `(a, η)` of an irreducible space: `A(t) = a(t) I`.
    pub fn irreducible(a: PiecewiseLinear<f64>, levy_c: Vec<XLevyPiece>, atoms: Vec<XAtom>) -> Result<Self> {
        let cov = a.map(|v| Mat::from_diagonal(&Vector3::new(*v, *v, 0.0)));
        Ok(XTriple { cov, levy_c, atoms })
    }

    /// Checks `K`-invariance of every component and the basic triple conditions.
    pub fn validate(&self, sphere: &Sphere) -> Result<()> {
        let bank = sphere_bank();
        let fail = |m: String| Err(Error::NotKInvariant(m));
        for (t, a) in self.cov.grid().iter().zip(self.cov.values()) {
            let r = check_matrix(sphere, a);
            if !r.pass {
                return fail(format!("A({t}) is not Ad(K)-invariant (residual {:.2e})", r.residual));
            }
            if a[(2, 2)].abs() > 1e-12 || a[(0, 2)].abs() > 1e-12 || a[(1, 2)].abs() > 1e-12 {
                return fail(format!("A({t}) charges the K directions"));
            }
        }
        if self.cov.values()[0].amax() > 1e-12 {
            return Err(Error::InvalidTriple("A(0) must vanish".into()));
        }
        for w in self.cov.values().windows(2) {
            if crate::linalg::min_eigenvalue(&(w[1] - w[0])) < -1e-10 {
                return Err(Error::InvalidTriple("A has a non-PSD increment".into()));
            }
        }
        for p in &self.levy_c {
            if !(p.rate >= 0.0 && p.end > p.start) {
                return Err(Error::InvalidTriple("bad Lévy piece".into()));
            }
            let total: f64 = p.law.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidTriple(format!("Lévy piece law has mass {total}")));
            }
            let r = check_measure(sphere, &p.law, &bank);
            if !r.pass {
                return fail(format!("jump law on [{}, {}] (residual {:.2e})", p.start, p.end, r.residual));
            }
        }
        let mut last = 0.0;
        for a in &self.atoms {
            if a.time <= last {
                return Err(Error::InvalidTriple("atom times must be positive and increasing".into()));
            }
            last = a.time;
            let total: f64 = a.law.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidTriple(format!("fixed-jump law at {} has mass {total}", a.time)));
            }
            let r = check_measure(sphere, &a.law, &bank);
            if !r.pass {
                return fail(format!("fixed-jump law at {} (residual {:.2e})", a.time, r.residual));
            }
        }
        Ok(())
    }
}

/// `η̄(f) = Σ_x w_x ∫_K f(k S(x) k⁻¹) dk` for a discrete law on the sphere.
pub fn conjugate_average_lift(sphere: &Sphere, law: &[(SpherePoint, f64)]) -> DiscreteMeasure {
    let mut atoms = Vec::with_capacity(law.len() * K_NODES);
    let kw = 1.0 / K_NODES as f64;
    for (x, w) in law {
        let s = sphere.section(x);
        if s.is_identity() {
            atoms.push((s, *w));
            continue;
        }
        for k in sphere.k_grid.iter() {
            atoms.push((GroupElement(k.0 * s.0 * k.0.transpose()), w * kw));
        }
    }
    DiscreteMeasure::new(atoms)
}

/// `K`-conjugate invariant triple on `SO(3)` whose projection has the law of the sphere triple.
pub fn lift_triple(sphere: &Sphere, xt: &XTriple) -> Result<ExtendedLevyTriple> {
    xt.validate(sphere)?;
    let g = sphere.group.clone();
    let mut pieces = Vec::with_capacity(xt.levy_c.len());
    for p in &xt.levy_c {
        let off: Vec<(SpherePoint, f64)> = p.law.iter().filter(|(x, _)| colatitude(x) > 0.0).cloned().collect();
        let kept: f64 = off.iter().map(|(_, w)| w).sum();
        if kept == 0.0 {
            continue;
        }
        let lifted = conjugate_average_lift(sphere, &off).scaled(1.0 / kept);
        pieces.push(LevyPiece {
            start: p.start,
            end: p.end,
            rate: p.rate * kept,
            law: Arc::new(SpatialLaw::discrete(&g, lifted)?),
        });
    }
    let atoms = xt.atoms.iter().map(|a| FixedJump { time: a.time, law: conjugate_average_lift(sphere, &a.law) }).collect();
    Ok(ExtendedLevyTriple::with_consistent_drift(
        g,
        PiecewiseLinear::constant(LieAlgebraVector::zeros()),
        xt.cov.clone(),
        LevyMeasureC { pieces },
        atoms,
    ))
}

#[derive(Clone, Debug)]
pub struct XEvent {
    pub time: f64,
    pub kind: EventKind,
    /// Position after the event.
    pub value: SpherePoint,
}

/// Sphere-valued path: piecewise constant between events.
#[derive(Clone, Debug)]
pub struct XPath {
    pub origin: SpherePoint,
    pub events: Vec<XEvent>,
    pub grid: Arc<Vec<f64>>,
}

impl XPath {
    pub fn value_at(&self, t: f64) -> SpherePoint {
        self.events.iter().take_while(|e| e.time <= t + TIME_TOL).last().map(|e| e.value).unwrap_or(self.origin)
    }

    /// `x_{t−}` in the same sense as for group paths: without a fixed jump at `t`.
    pub fn left_value_at(&self, t: f64) -> SpherePoint {
        self.events
            .iter()
            .take_while(|e| e.time <= t + TIME_TOL)
            .filter(|e| !(e.kind == EventKind::FixedJump && (e.time - t).abs() <= TIME_TOL))
            .last()
            .map(|e| e.value)
            .unwrap_or(self.origin)
    }

    pub fn values_on(&self, times: &[f64]) -> Vec<SpherePoint> {
        let mut out = Vec::with_capacity(times.len());
        let mut cur = self.origin;
        let mut i = 0;
        for &t in times {
            while i < self.events.len() && self.events[i].time <= t + TIME_TOL {
                cur = self.events[i].value;
                i += 1;
            }
            out.push(cur);
        }
        out
    }
}

/// `x_t = g_t o`, event by event.
pub fn project_path(desc: &GroupDescriptor, path: &SamplePath) -> XPath {
    let values = path.running_values(desc);
    XPath {
        origin: Sphere::project(&path.origin),
        events: path
            .events
            .iter()
            .zip(values)
            .map(|(e, g)| XEvent { time: e.time, kind: e.kind, value: Sphere::project(&g) })
            .collect(),
        grid: path.grid.clone(),
    }
}

/// Indexed ensemble of sphere paths.
pub trait XPathSource: Sync {
    fn len(&self) -> usize;
    fn x_path(&self, index: usize) -> XPath;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: XPathSource> Ensemble<SpherePoint> for T {
    fn len(&self) -> usize {
        XPathSource::len(self)
    }
    fn grid(&self) -> Vec<f64> {
        self.x_path(0).grid.as_ref().clone()
    }
    fn values_on(&self, index: usize, times: &[f64]) -> Vec<SpherePoint> {
        self.x_path(index).values_on(times)
    }
}

/// Projection `g_t o` of a group-valued ensemble, computed lazily.
pub struct ProjectedPaths<'a>(pub &'a dyn PathSource);

impl XPathSource for ProjectedPaths<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn x_path(&self, index: usize) -> XPath {
        project_path(self.0.group(), &self.0.path(index))
    }
}

#[derive(Clone, Debug)]
pub struct XPathSet {
    pub paths: Vec<XPath>,
}

impl XPathSource for XPathSet {
    fn len(&self) -> usize {
        self.paths.len()
    }
    fn x_path(&self, index: usize) -> XPath {
        self.paths[index].clone()
    }
}

#[derive(Clone, Debug)]
struct XCell {
    factor: Option<Mat>,
    mass: f64,
    p0: f64,
    parts: Vec<(f64, Arc<Vec<(SpherePoint, f64)>>)>,
}

/// Direct simulation on the sphere: Gaussian step `exp(L N · ξ) o`, then Poisson
/// jumps, then fixed jumps, each applied through the section map.
#[derive(Clone, Debug)]
pub struct XSimulator {
    sphere: Sphere,
    grid: Arc<Vec<f64>>,
    cells: Vec<XCell>,
    fixed: Vec<Option<Vec<(SpherePoint, f64)>>>,
    seed: u64,
    paths: usize,
}

fn draw<R: Rng + ?Sized>(law: &[(SpherePoint, f64)], rng: &mut R) -> SpherePoint {
    let total: f64 = law.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (x, w) in law {
        if u < *w {
            return *x;
        }
        u -= w;
    }
    law.last().unwrap().0
}

impl XSimulator {
    /// Uses the grid the lifted triple would be simulated on.
    pub fn new(sphere: &Sphere, xt: &XTriple, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let lifted = lift_triple(sphere, xt)?;
        let grid = lifted.canonical_grid(cfg.steps_per_unit, cfg.horizon);
        let mut cells = Vec::with_capacity(grid.len() - 1);
        for k in 0..grid.len() - 1 {
            let (a, b) = (grid[k], grid[k + 1]);
            let da = xt.cov.eval(b) - xt.cov.eval(a);
            let factor = (da.amax() > 0.0).then(|| psd_sqrt(&da));
            let mut cum = 0.0;
            let mut parts = Vec::new();
            for p in &xt.levy_c {
                let m = p.mass_between(a, b);
                if m > 0.0 {
                    cum += m;
                    parts.push((cum, p.law.clone()));
                }
            }
            cells.push(XCell { factor, mass: cum, p0: (-cum).exp(), parts });
        }
        let mut fixed = vec![None; grid.len()];
        for at in &xt.atoms {
            if let Some(i) = grid_index(&grid, at.time) {
                fixed[i] = Some(at.law.clone());
            }
        }
        Ok(XSimulator { sphere: sphere.clone(), grid: Arc::new(grid), cells, fixed, seed: cfg.seed, paths: cfg.paths })
    }

    pub fn grid(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    pub fn path(&self, index: usize) -> XPath {
        let mut rng = path_rng(self.seed, index);
        let mut x = Sphere::o();
        let mut events = Vec::with_capacity(self.cells.len() + 8);
        for (k, cell) in self.cells.iter().enumerate() {
            let t = self.grid[k + 1];
            if let Some(l) = &cell.factor {
                let z = Vector3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), 0.0);
                let y = self.sphere.exp_point(&(l * z));
                x = self.sphere.product(&x, &y);
            }
            events.push(XEvent { time: t, kind: EventKind::Step, value: x });
            if cell.mass > 0.0 {
                for _ in 0..poisson_small(&mut rng, cell.mass, cell.p0) {
                    let u = rng.random::<f64>() * cell.mass;
                    let part = cell.parts.iter().find(|p| u < p.0).unwrap_or_else(|| cell.parts.last().unwrap());
                    let y = draw(&part.1, &mut rng);
                    x = self.sphere.product(&x, &y);
                    events.push(XEvent { time: t, kind: EventKind::PoissonJump, value: x });
                }
            }
            if let Some(law) = &self.fixed[k + 1] {
                let y = draw(law, &mut rng);
                if colatitude(&y) > 0.0 {
                    x = self.sphere.product(&x, &y);
                    events.push(XEvent { time: t, kind: EventKind::FixedJump, value: x });
                }
            }
        }
        XPath { origin: Sphere::o(), events, grid: self.grid.clone() }
    }
}

impl XPathSource for XSimulator {
    fn len(&self) -> usize {
        self.paths
    }
    fn x_path(&self, index: usize) -> XPath {
        self.path(index)
    }
}

/// Precomputed terms of the sphere martingale functional on a fixed grid.
#[derive(Clone, Debug)]
pub struct MtfXPlan {
    sphere: Sphere,
    grid: Vec<f64>,
    cov: Vec<Mat>,
    jumps: Vec<Vec<(f64, Arc<Vec<(SpherePoint, f64)>>)>>,
    atoms: Vec<Option<Vec<(SpherePoint, f64)>>>,
}

impl MtfXPlan {
    pub fn new(sphere: &Sphere, xt: &XTriple, grid: &[f64]) -> Result<Self> {
        xt.validate(sphere)?;
        let mut cov = Vec::with_capacity(grid.len() - 1);
        let mut jumps = Vec::with_capacity(grid.len() - 1);
        for w in grid.windows(2) {
            cov.push(xt.cov.eval(w[1]) - xt.cov.eval(w[0]));
            jumps.push(
                xt.levy_c
                    .iter()
                    .filter_map(|p| {
                        let m = p.mass_between(w[0], w[1]);
                        (m > 0.0).then(|| (m, p.law.clone()))
                    })
                    .collect(),
            );
        }
        let mut atoms = vec![None; grid.len()];
        for a in &xt.atoms {
            let i = grid_index(grid, a.time)
                .ok_or_else(|| Error::GridMismatch(format!("fixed-jump time {} is not a grid point", a.time)))?;
            atoms[i] = Some(a.law.clone());
        }
        Ok(MtfXPlan { sphere: sphere.clone(), grid: grid.to_vec(), cov, jumps, atoms })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn check_grid(&self, path: &XPath) -> Result<()> {
        let g = &path.grid;
        if g.len() != self.grid.len() || g.iter().zip(&self.grid).any(|(a, b)| (a - b).abs() > TIME_TOL) {
            return Err(Error::GridMismatch("sphere path grid differs from the plan grid".into()));
        }
        Ok(())
    }

    /// `M_t f` at every grid point for each test function.
    ///
    /// With `irreducible = Some(ε)` the form `f(x_t) − ∫½Σξ_jξ_jf da − ∫∫[f(x_sτ) − f(x_s)]η` is used,
    /// dropping jumps within `ε` of `o`.
    fn run(&self, path: &XPath, bank: &[XTestFunction], irreducible: Option<f64>) -> Result<Vec<Vec<f64>>> {
        self.check_grid(path)?;
        let sp = &self.sphere;
        let xs = path.values_on(&self.grid);
        let mut out = vec![Vec::with_capacity(xs.len()); bank.len()];
        for (fi, f) in bank.iter().enumerate() {
            let mut comp = 0.0;
            out[fi].push(f.value(&xs[0]) - comp);
            for k in 0..self.cov.len() {
                let x = &xs[k];
                let jet = f.jet(sp, x);
                let a = &self.cov[k];
                let mut second = 0.0;
                match irreducible {
                    Some(_) => {
                        let da = 0.5 * (a[(0, 0)] + a[(1, 1)]);
                        second = da * (jet.hess[0][0] + jet.hess[1][1]);
                    }
                    None => {
                        for j in 0..2 {
                            for l in 0..2 {
                                second += a[(j, l)] * jet.hess[j][l];
                            }
                        }
                    }
                }
                comp += 0.5 * second;
                let s = sp.section(x);
                for (mass, law) in &self.jumps[k] {
                    let mut acc = 0.0;
                    for (y, w) in law.iter() {
                        let fy = f.value(&Sphere::act(&s, y));
                        acc += w * match irreducible {
                            Some(eps) if colatitude(y) <= eps => 0.0,
                            Some(_) => fy - jet.value,
                            None => {
                                let phi = sp.coordinates(y);
                                fy - jet.value - phi[0] * jet.grad[0] - phi[1] * jet.grad[1]
                            }
                        };
                    }
                    comp += mass * acc;
                }
                if let Some(law) = &self.atoms[k + 1] {
                    let xm = path.left_value_at(self.grid[k + 1]);
                    let sm = sp.section(&xm);
                    let fm = f.value(&xm);
                    for (y, w) in law {
                        if matches!(irreducible, Some(eps) if colatitude(y) <= eps) {
                            continue;
                        }
                        comp += w * (f.value(&Sphere::act(&sm, y)) - fm);
                    }
                }
                out[fi].push(f.value(&xs[k + 1]) - comp);
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, path: &XPath, bank: &[XTestFunction]) -> Result<Vec<Vec<f64>>> {
        self.run(path, bank, None)
    }

    pub fn evaluate_irreducible(&self, path: &XPath, bank: &[XTestFunction], eps: f64) -> Result<Vec<Vec<f64>>> {
        if !is_isotropic(&self.cov) {
            return Err(Error::NotKInvariant("covariance increments are not multiples of the identity".into()));
        }
        self.run(path, bank, Some(eps))
    }
}

fn is_isotropic(cov: &[Mat]) -> bool {
    cov.iter().all(|a| (a[(0, 0)] - a[(1, 1)]).abs() <= 1e-12 && a[(0, 1)].abs() <= 1e-12)
}

pub fn compute_mtf_x(path: &XPath, sphere: &Sphere, xt: &XTriple, f: &XTestFunction) -> Result<Vec<f64>> {
    let plan = MtfXPlan::new(sphere, xt, &path.grid)?;
    Ok(plan.evaluate(path, std::slice::from_ref(f))?.remove(0))
}

/// Irreducible form; jumps within `eps` of `o` are left out of the principal value.
pub fn compute_mtf_irreducible(
    path: &XPath,
    sphere: &Sphere,
    xt: &XTriple,
    f: &XTestFunction,
    eps: f64,
) -> Result<Vec<f64>> {
    let plan = MtfXPlan::new(sphere, xt, &path.grid)?;
    Ok(plan.evaluate_irreducible(path, std::slice::from_ref(f), eps)?.remove(0))
}

/// Martingale test on the sphere with conditioners `1`, `φ_1(x_s)` and `min(‖φ(x_s)‖², 1)`.
pub fn martingale_test_x(
    source: &dyn XPathSource,
    plan: &MtfXPlan,
    bank: &[XTestFunction],
    pairs: &[(f64, f64)],
) -> Result<MartingaleReport> {
    let n = source.len();
    let grid = plan.grid();
    let idx = |t: f64| grid.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
    const H_IDS: [&str; 3] = ["one", "phi1_s", "normsq_s"];
    let width = bank.len() * pairs.len() * H_IDS.len();
    let sp = &plan.sphere;
    let (mean, se) = mean_stderr_by(n, width, |i| {
        let path = source.x_path(i);
        let series = plan.evaluate(&path, bank)?;
        let xs = path.values_on(grid);
        let mut out = Vec::with_capacity(width);
        for row in &series {
            for &(s, t) in pairs {
                let dm = row[idx(t)] - row[idx(s)];
                let phi = sp.coordinates(&xs[idx(s)]);
                out.push(dm);
                out.push(dm * phi[0]);
                out.push(dm * phi.norm_squared().min(1.0));
            }
        }
        Ok(out)
    })?;
    let mut entries = Vec::with_capacity(width);
    let mut c = 0;
    for f in bank {
        for &(s, t) in pairs {
            for h in H_IDS {
                entries.push(entry(&f.id, s, t, h, mean[c], se[c], n));
                c += 1;
            }
        }
    }
    Ok(MartingaleReport::from_entries(entries, n))
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub object: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl InvarianceReport {
    fn new(object: &str, residual: f64, tolerance: f64) -> Self {
        InvarianceReport { object: object.into(), residual, tolerance, pass: residual <= tolerance }
    }
}

/// Rotations used by the invariance checks; most are off the quadrature grid.
pub fn probe_rotations() -> Vec<GroupElement> {
    [0.3, 1.1, PI / 2.0, 2.0, 4.4].iter().map(|a| rot_z(*a)).collect()
}

pub fn check_point(p: &SpherePoint) -> InvarianceReport {
    let r = probe_rotations().iter().map(|k| (Sphere::act(k, p) - p).norm()).fold(0.0, f64::max);
    InvarianceReport::new("point", r, 1e-8)
}

pub fn check_measure(sphere: &Sphere, law: &[(SpherePoint, f64)], bank: &[XTestFunction]) -> InvarianceReport {
    let _ = sphere;
    let mut r: f64 = 0.0;
    for f in bank {
        let base: f64 = law.iter().map(|(y, w)| w * f.value(y)).sum();
        for k in probe_rotations() {
            let moved: f64 = law.iter().map(|(y, w)| w * f.value(&Sphere::act(&k, y))).sum();
            r = r.max((moved - base).abs());
        }
    }
    InvarianceReport::new("measure", r, 1e-8)
}

pub fn check_matrix(sphere: &Sphere, a: &Mat) -> InvarianceReport {
    let r = probe_rotations()
        .iter()
        .map(|k| {
            let ad = sphere.group.adjoint(k);
            (ad * a * ad.transpose() - a).amax()
        })
        .fold(0.0, f64::max);
    InvarianceReport::new("matrix", r, 1e-8)
}

/// Sampled law against its rotations: largest `|z|` of `f(ky) − f(y)` over the bank.
pub fn check_empirical(samples: &[SpherePoint], bank: &[XTestFunction]) -> InvarianceReport {
    let mut worst: f64 = 0.0;
    for f in bank {
        for k in probe_rotations() {
            let d: Vec<f64> = samples.iter().map(|y| f.value(&Sphere::act(&k, y)) - f.value(y)).collect();
            let (m, s) = mean_stderr(&d);
            worst = worst.max(z_score(m, s).abs());
        }
    }
    InvarianceReport::new("empirical measure", worst, 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Simulator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<SpherePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = Vector3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                canonical(&v)
            })
            .collect()
    }

    fn a6_like() -> XTriple {
        let a = PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0, 0.3]).unwrap();
        let piece = XLevyPiece {
            start: 0.0,
            end: 1.0,
            rate: 1.0,
            law: Arc::new(orbit_mixture(&[(0.7, 0.6), (1.4, 0.4)])),
        };
        let mut nu = vec![(Sphere::o(), 0.5)];
        nu.extend(orbit_mixture(&[(1.0, 0.5)]));
        XTriple::irreducible(a, vec![piece], vec![XAtom { time: 0.5, law: nu }]).unwrap()
    }

    #[test]
    fn structure_identities() {
        let s = Sphere::new();
        let [ko, adp, equi] = s.structure_residuals();
        assert!(ko <= 1e-10, "{ko}");
        assert!(adp <= 1e-9, "{adp}");
        assert!(equi <= 1e-8, "{equi}");
    }

    #[test]
    fn section_projects_back() {
        for sec in [Section::Axis, Section::Twisted] {
            let s = Sphere::new().with_section(sec);
            assert!(s.section(&Sphere::o()).is_identity());
            for x in random_points(200, 4).into_iter().chain([-Sphere::o(), spherical(PI / 6.0, 0.4)]) {
                assert!((Sphere::project(&s.section(&x)) - x).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn section_equivariant_near_origin() {
        let s = Sphere::new();
        for x in random_points(200, 5).into_iter().filter(|x| colatitude(x) < 0.8) {
            for k in s.k_grid().iter().step_by(17) {
                let lhs = s.section(&Sphere::act(k, &x));
                let rhs = GroupElement(k.0 * s.section(&x).0 * k.0.transpose());
                assert!((lhs.0 - rhs.0).amax() <= 1e-9);
            }
        }
    }

    #[test]
    fn coordinates_invert_exp_inside_chart() {
        let s = Sphere::new();
        let v = Vector3::new(0.3, -0.4, 0.0);
        assert!((s.coordinates(&s.exp_point(&v)) - v).amax() < 1e-12);
        assert!((colatitude(&s.exp_point(&v)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn haar_average_is_k_invariant() {
        let s = Sphere::new();
        let inv = |x: &SpherePoint| x[2] * x[2];
        let lon = |x: &SpherePoint| (-((x - spherical(1.0, 0.3)).norm_squared()) / 0.5).exp();
        for x in random_points(30, 6) {
            assert!((s.haar_average(&inv, &x) - inv(&x)).abs() <= 1e-12);
            let fx = s.haar_average(&lon, &x);
            for k in probe_rotations() {
                assert!((s.haar_average(&lon, &Sphere::act(&k, &x)) - fx).abs() <= 1e-9);
            }
        }
        assert!((s.haar_average(&lon, &Sphere::o()) - lon(&Sphere::o())).abs() <= 1e-15);
    }

    #[test]
    fn invariance_checks() {
        let s = Sphere::new();
        let bank = sphere_bank();
        assert!(check_measure(&s, &orbit_law(0.9), &bank).pass);
        assert!(!check_measure(&s, &[(spherical(0.9, 0.2), 1.0)], &bank).pass);
        assert!(check_point(&Sphere::o()).pass && check_point(&-Sphere::o()).pass);
        assert!(!check_point(&spherical(0.4, 0.0)).pass);
        assert!(check_matrix(&s, &Mat::from_diagonal(&Vector3::new(2.0, 2.0, 0.0))).pass);
        assert!(!check_matrix(&s, &Mat::from_diagonal(&Vector3::new(2.0, 1.0, 0.0))).pass);
        let mut bad = a6_like();
        bad.atoms[0].law = vec![(spherical(1.0, 0.0), 1.0)];
        assert!(matches!(bad.validate(&s), Err(Error::NotKInvariant(_))));
    }

    #[test]
    fn lift_of_single_atom() {
        let s = Sphere::new();
        let x = spherical(0.5, 0.2);
        let lifted = conjugate_average_lift(&s, &[(x, 1.0)]);
        assert_eq!(lifted.atoms().len(), K_NODES);
        for (g, _) in lifted.atoms() {
            assert!((s.group.rotation_angle(g) - 0.5).abs() < 1e-12);
            assert!(s.group.log(g).unwrap()[2].abs() < 1e-12);
        }
        // ν̄ has the mean of the K-averaged law
        let h = s.mean_point(&orbit_law(0.5));
        let hbar = s.group.mean_of_measure(&lifted);
        assert!((Sphere::project(&hbar) - h).norm() <= 1e-8);
        assert!(s.group.distance(&hbar, &GroupElement::identity()) <= 1e-8);
        let at_o = conjugate_average_lift(&s, &[(Sphere::o(), 1.0)]);
        assert!(at_o.atoms().len() == 1 && at_o.atoms()[0].0.is_identity());
    }

    #[test]
    fn lift_triple_shape() {
        let s = Sphere::new();
        let lifted = lift_triple(&s, &a6_like()).unwrap();
        assert!(lifted.validate().is_empty(), "{}", lifted.validate());
        let a = lifted.cov.eval(1.0);
        assert!((a - Mat::from_diagonal(&Vector3::new(0.3, 0.3, 0.0))).amax() < 1e-15);
        assert!(s.group.distance(&lifted.drift.value_at(&s.group, 1.0), &GroupElement::identity()) < 1e-9);
        let trivial = lift_triple(&s, &XTriple::zero()).unwrap();
        assert!(trivial.levy_c.pieces.is_empty() && trivial.atoms.is_empty());
    }

    #[test]
    fn projection_of_trivial_paths() {
        let g = GroupDescriptor::so3();
        let grid = Arc::new(vec![0.0, 0.5, 1.0]);
        let p = SamplePath::constant(GroupElement::identity(), grid.clone());
        assert!(project_path(&g, &p).values_on(&grid).iter().all(|x| (x - Sphere::o()).norm() == 0.0));
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::from_diagonal(&Vector3::new(0.0, 0.0, 1.0))])
            .unwrap();
        let sim = Simulator::new(&t, &SimConfig::new(50, 1.0, 3, 1)).unwrap();
        for x in ProjectedPaths(&sim).x_path(2).values_on(&grid) {
            assert!((x - Sphere::o()).norm() < 1e-12);
        }
    }

    #[test]
    fn mtf_forms_agree_and_are_section_free() {
        let xt = a6_like();
        let s = Sphere::new();
        let tw = Sphere::new().with_section(Section::Twisted);
        let sim = XSimulator::new(&s, &xt, &SimConfig::new(200, 1.0, 20, 3)).unwrap();
        let plan = MtfXPlan::new(&s, &xt, sim.grid()).unwrap();
        let plan_tw = MtfXPlan::new(&tw, &xt, sim.grid()).unwrap();
        let bank = sphere_bank();
        let mut dev: f64 = 0.0;
        for i in 0..20 {
            let p = sim.path(i);
            let a = plan.evaluate(&p, &bank).unwrap();
            let b = plan_tw.evaluate(&p, &bank).unwrap();
            let c = plan.evaluate_irreducible(&p, &bank, 0.0).unwrap();
            let d = plan.evaluate_irreducible(&p, &bank, 0.3).unwrap();
            for f in 0..bank.len() {
                for k in 0..a[f].len() {
                    dev = dev.max((a[f][k] - b[f][k]).abs()).max((a[f][k] - c[f][k]).abs()).max((c[f][k] - d[f][k]).abs());
                }
            }
        }
        assert!(dev <= 1e-9, "{dev}");
    }

    #[test]
    fn zero_triple_mtf_is_constant() {
        let s = Sphere::new();
        let grid = Arc::new(vec![0.0, 0.5, 1.0]);
        let p = XPath { origin: Sphere::o(), events: Vec::new(), grid };
        let f = &sphere_bank()[1];
        let m = compute_mtf_x(&p, &s, &XTriple::zero(), f).unwrap();
        assert!(m.iter().all(|v| (v - f.value(&Sphere::o())).abs() < 1e-15));
    }

    #[test]
    fn x_jets_match_finite_differences() {
        let s = Sphere::new().with_section(Section::Twisted);
        let h = 1e-4;
        for f in sphere_bank() {
            for x in random_points(20, 9) {
                let jet = f.jet(&s, &x);
                let sx = s.section(&x);
                let fe = |a: f64, b: f64| f.value(&Sphere::act(&(sx * s.exp_group(&Vector3::new(a, b, 0.0))), &Sphere::o()));
                let gx = (fe(h, 0.0) - fe(-h, 0.0)) / (2.0 * h);
                let hxy = (fe(h, h) - fe(h, -h) - fe(-h, h) + fe(-h, -h)) / (4.0 * h * h);
                let hxx = (fe(h, 0.0) - 2.0 * fe(0.0, 0.0) + fe(-h, 0.0)) / (h * h);
                assert!((gx - jet.grad[0]).abs() < 1e-6);
                assert!((hxy - jet.hess[0][1]).abs() < 1e-4);
                assert!((hxx - jet.hess[0][0]).abs() < 1e-4);
            }
        }
    }
}
