//! Sample paths by left-increment multiplication, and fixed-jump surgery.
//!
//! A path is stored as its list of increments; the value at time t is the
//! ordered product of all increments stamped at or before t. Every path has
//! its own random stream keyed by `(seed, path index)`, so results do not
//! depend on how many paths are drawn or on thread scheduling.

use std::borrow::Cow;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat, RenormalizingProduct};
use crate::linalg::psd_sqrt;
use crate::measure::{DiscreteMeasure, SpatialLaw};
use crate::triple::{grid_index, DriftPath, DriftTrack, ExtendedLevyTriple, Quadruple, TIME_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Step,
    PoissonJump,
    FixedJump,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Step => "step",
            EventKind::PoissonJump => "poisson_jump",
            EventKind::FixedJump => "fixed_jump",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "step" => Some(EventKind::Step),
            "poisson_jump" => Some(EventKind::PoissonJump),
            "fixed_jump" => Some(EventKind::FixedJump),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub increment: GroupElement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub origin: GroupElement,
    pub events: Vec<Event>,
    pub grid: Arc<Vec<f64>>,
}

impl SamplePath {
    pub fn constant(origin: GroupElement, grid: Arc<Vec<f64>>) -> Self {
        SamplePath { origin, events: Vec::new(), grid }
    }

    /// `x_t`, including every event stamped at `t`.
    pub fn value_at(&self, desc: &GroupDescriptor, t: f64) -> GroupElement {
        let mut p = RenormalizingProduct::new(desc, self.origin);
        for e in self.events.iter().take_while(|e| e.time <= t + TIME_TOL) {
            p.push(&e.increment);
        }
        p.value()
    }

    /// `x_{t−}`: everything before `t` plus the within-step evolution stamped at `t`,
    /// excluding a fixed jump at `t`.
    pub fn left_value_at(&self, desc: &GroupDescriptor, t: f64) -> GroupElement {
        let mut p = RenormalizingProduct::new(desc, self.origin);
        for e in self.events.iter().take_while(|e| e.time <= t + TIME_TOL) {
            if e.kind == EventKind::FixedJump && (e.time - t).abs() <= TIME_TOL {
                continue;
            }
            p.push(&e.increment);
        }
        p.value()
    }

    /// Values at increasing `times` in one sweep.
    pub fn values_on(&self, desc: &GroupDescriptor, times: &[f64]) -> Vec<GroupElement> {
        let mut out = Vec::with_capacity(times.len());
        let mut p = RenormalizingProduct::new(desc, self.origin);
        let mut i = 0;
        for &t in times {
            while i < self.events.len() && self.events[i].time <= t + TIME_TOL {
                p.push(&self.events[i].increment);
                i += 1;
            }
            out.push(p.value());
        }
        out
    }

    /// Running values after every event, paired with the event.
    pub fn running_values(&self, desc: &GroupDescriptor) -> Vec<GroupElement> {
        let mut p = RenormalizingProduct::new(desc, self.origin);
        self.events.iter().map(|e| p.push(&e.increment)).collect()
    }

    pub fn fixed_jump_times(&self) -> Vec<f64> {
        self.events.iter().filter(|e| e.kind == EventKind::FixedJump).map(|e| e.time).collect()
    }

    /// Deletes the fixed jump at `u`, returning the new path and the removed event.
    pub fn take_fixed_jump(&self, u: f64) -> (SamplePath, Option<Event>) {
        let mut out = self.clone();
        let pos = out.events.iter().position(|e| e.kind == EventKind::FixedJump && (e.time - u).abs() <= TIME_TOL);
        let removed = pos.map(|i| out.events.remove(i));
        (out, removed)
    }

    pub fn remove_fixed_jump(&self, u: f64) -> SamplePath {
        self.take_fixed_jump(u).0
    }

    /// Inserts a fixed jump with the given increment at `u`, after everything else stamped at `u`.
    pub fn insert_fixed_jump(&self, u: f64, increment: GroupElement) -> SamplePath {
        let mut out = self.clone();
        let pos = out.events.partition_point(|e| e.time <= u + TIME_TOL);
        let time = if pos > 0 && (out.events[pos - 1].time - u).abs() <= TIME_TOL { out.events[pos - 1].time } else { u };
        out.events.insert(pos, Event { time, kind: EventKind::FixedJump, increment });
        if u >= 0.0 && grid_index(&out.grid, u).is_none() {
            let mut g = (*out.grid).clone();
            let k = g.partition_point(|&x| x < u);
            g.insert(k, u);
            out.grid = Arc::new(g);
        }
        out
    }

    /// Inserts a fixed jump drawn from `law` at `u`.
    pub fn insert_fixed_jump_sampled<R: Rng + ?Sized>(&self, u: f64, law: &DiscreteMeasure, rng: &mut R) -> SamplePath {
        self.insert_fixed_jump(u, law.sample(rng))
    }
}

/// Drift values seen by each event: `b` right after the event's time stamp.
fn drift_at_events(path: &SamplePath, track: &DriftTrack) -> Result<Vec<GroupElement>> {
    path.events
        .iter()
        .map(|e| {
            let k = grid_index(&path.grid, e.time)
                .ok_or_else(|| Error::GridMismatch(format!("event time {} is not on the path grid", e.time)))?;
            Ok(match e.kind {
                EventKind::FixedJump => track.right[k],
                _ => track.left[k],
            })
        })
        .collect()
}

/// The shifted path `z_t = x_t b_t^{-1}`.
pub fn split_shifted(desc: &GroupDescriptor, path: &SamplePath, drift: &DriftPath) -> Result<SamplePath> {
    let track = drift.track(desc, &path.grid)?;
    let bs = drift_at_events(path, &track)?;
    let xs = path.running_values(desc);
    let z0 = path.origin * desc.inverse(&track.right[0]);
    let mut prev = z0;
    let mut events = Vec::with_capacity(path.events.len());
    for ((e, x), b) in path.events.iter().zip(&xs).zip(&bs) {
        let z = *x * desc.inverse(b);
        events.push(Event { time: e.time, kind: e.kind, increment: desc.inverse(&prev) * z });
        prev = z;
    }
    Ok(SamplePath { origin: z0, events, grid: path.grid.clone() })
}

/// Inverse of [`split_shifted`]: `x_t = z_t b_t`.
pub fn recombine_shifted(desc: &GroupDescriptor, zpath: &SamplePath, drift: &DriftPath) -> Result<SamplePath> {
    let track = drift.track(desc, &zpath.grid)?;
    let bs = drift_at_events(zpath, &track)?;
    let zs = zpath.running_values(desc);
    let x0 = zpath.origin * track.right[0];
    let mut prev = x0;
    let mut events = Vec::with_capacity(zpath.events.len());
    for ((e, z), b) in zpath.events.iter().zip(&zs).zip(&bs) {
        let x = *z * *b;
        events.push(Event { time: e.time, kind: e.kind, increment: desc.inverse(&prev) * x });
        prev = x;
    }
    Ok(SamplePath { origin: x0, events, grid: zpath.grid.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Simulates `x` from `(b^c, A, η^c, ν)` directly.
    FiniteVariation,
    /// Simulates `z_t = x_t b_t^{-1}` from the barred quadruple and sets `x = z b`.
    ShiftedZ,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub steps_per_unit: usize,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(steps_per_unit: usize, horizon: f64, paths: usize, seed: u64) -> Self {
        SimConfig { steps_per_unit, horizon, paths, seed, scheme: Scheme::FiniteVariation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_unit < 1 || !(self.horizon > 0.0 && self.horizon.is_finite()) || self.paths < 1 {
            return Err(Error::InvalidArgument(format!(
                "simulation needs steps >= 1, horizon > 0 and paths >= 1 (got {}, {}, {})",
                self.steps_per_unit, self.horizon, self.paths
            )));
        }
        Ok(())
    }
}

/// Deterministic random stream of one path.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Poisson draw by inversion for small means.
pub fn poisson_small<R: Rng + ?Sized>(rng: &mut R, mean: f64, p0: f64) -> usize {
    let u: f64 = rng.random();
    let mut k = 0usize;
    let mut p = p0;
    let mut cdf = p0;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

#[derive(Clone, Debug)]
struct PartPlan {
    cum_mass: f64,
    law: Arc<SpatialLaw>,
    conj: Mat,
    conj_inv: Mat,
    identity_conj: bool,
}

#[derive(Clone, Debug)]
struct CellPlan {
    drift: LieAlgebraVector,
    factor: Option<Mat>,
    mass: f64,
    p0: f64,
    parts: Vec<PartPlan>,
}

#[derive(Clone, Debug)]
struct FixedPlan {
    law: DiscreteMeasure,
    trivial: Vec<bool>,
}

/// Precomputed per-cell simulation plan for one triple on one grid.
#[derive(Clone, Debug)]
pub struct Simulator {
    desc: GroupDescriptor,
    grid: Arc<Vec<f64>>,
    cells: Vec<CellPlan>,
    fixed: Vec<Option<FixedPlan>>,
    shift: Option<DriftTrack>,
    seed: u64,
    paths: usize,
}

impl Simulator {
    pub fn new(triple: &ExtendedLevyTriple, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        triple.validate().into_result()?;
        let grid = triple.canonical_grid(cfg.steps_per_unit, cfg.horizon);
        Self::on_grid(triple, cfg, grid)
    }

    pub fn on_grid(triple: &ExtendedLevyTriple, cfg: &SimConfig, grid: Vec<f64>) -> Result<Self> {
        let desc = triple.group.clone();
        let (quad, shift) = match cfg.scheme {
            Scheme::FiniteVariation => (Quadruple::finite_variation(triple, &grid)?, None),
            Scheme::ShiftedZ => {
                let track = triple.drift.track(&desc, &grid)?;
                (Quadruple::bar_transform(triple, &grid)?, Some(track))
            }
        };
        let mut cells = Vec::with_capacity(grid.len() - 1);
        for k in 0..grid.len() - 1 {
            let comp = quad.cell_coordinate_integral(k);
            let cov = quad.cov[k];
            let factor = (cov.amax() > 0.0).then(|| psd_sqrt(&cov));
            let mut cum = 0.0;
            let parts = quad.jumps[k]
                .iter()
                .map(|p| {
                    cum += p.mass;
                    PartPlan {
                        cum_mass: cum,
                        law: p.law.clone(),
                        conj: p.conj.0,
                        conj_inv: desc.inverse(&p.conj).0,
                        identity_conj: p.conj.is_identity(),
                    }
                })
                .collect();
            cells.push(CellPlan { drift: quad.drift[k] - comp, factor, mass: cum, p0: (-cum).exp(), parts });
        }
        let mut fixed = vec![None; grid.len()];
        for a in &quad.fixed {
            let original = triple
                .atoms
                .iter()
                .find(|x| (x.time - a.time).abs() <= TIME_TOL)
                .expect("quadruple atoms come from the triple");
            let trivial = original.law.atoms().iter().map(|(g, _)| g.is_identity()).collect();
            fixed[a.index] = Some(FixedPlan { law: a.law.clone(), trivial });
        }
        Ok(Simulator { desc, grid: Arc::new(grid), cells, fixed, shift, seed: cfg.seed, paths: cfg.paths })
    }

    pub fn group(&self) -> &GroupDescriptor {
        &self.desc
    }

    pub fn grid(&self) -> &Arc<Vec<f64>> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.paths
    }

    pub fn is_empty(&self) -> bool {
        self.paths == 0
    }

    /// Path number `index` (independent of how many others are drawn).
    pub fn path(&self, index: usize) -> SamplePath {
        let desc = &self.desc;
        let d = desc.dim();
        let mut rng = path_rng(self.seed, index);
        let mut events = Vec::with_capacity(self.cells.len() + 8);
        let inv = |g: &GroupElement| desc.inverse(g);
        for (k, cell) in self.cells.iter().enumerate() {
            let t = self.grid[k + 1];
            let mut v = cell.drift;
            if let Some(l) = &cell.factor {
                let mut z = LieAlgebraVector::zeros();
                for j in 0..d {
                    z[j] = StandardNormal.sample(&mut rng);
                }
                v += l * z;
            }
            let mut inc = desc.exp(&v);
            if let Some(tr) = &self.shift {
                inc = inv(&tr.right[k]) * inc * tr.left[k + 1];
            }
            events.push(Event { time: t, kind: EventKind::Step, increment: inc });
            if cell.mass > 0.0 {
                let n = poisson_small(&mut rng, cell.mass, cell.p0);
                for _ in 0..n {
                    let u: f64 = rng.random::<f64>() * cell.mass;
                    let part = cell.parts.iter().find(|p| u < p.cum_mass).unwrap_or_else(|| cell.parts.last().unwrap());
                    let x = part.law.sample(desc, &mut rng);
                    let mut y = if part.identity_conj { x } else { GroupElement(part.conj * x.0 * part.conj_inv) };
                    if let Some(tr) = &self.shift {
                        let b = tr.left[k + 1];
                        y = inv(&b) * y * b;
                    }
                    events.push(Event { time: t, kind: EventKind::PoissonJump, increment: y });
                }
            }
            if let Some(fp) = &self.fixed[k + 1] {
                let i = sample_index(&fp.law, &mut rng);
                if !fp.trivial[i] {
                    let mut y = fp.law.atoms()[i].0;
                    if let Some(tr) = &self.shift {
                        y = inv(&tr.left[k + 1]) * y * tr.right[k + 1];
                    }
                    events.push(Event { time: t, kind: EventKind::FixedJump, increment: y });
                }
            }
        }
        SamplePath { origin: GroupElement::identity(), events, grid: self.grid.clone() }
    }

    pub fn paths(&self) -> Vec<SamplePath> {
        (0..self.paths).into_par_iter().map(|i| self.path(i)).collect()
    }
}

fn sample_index<R: Rng + ?Sized>(law: &DiscreteMeasure, rng: &mut R) -> usize {
    let atoms = law.atoms();
    let total = law.total_mass();
    let mut u = rng.random::<f64>() * total;
    for (i, (_, w)) in atoms.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    atoms.len() - 1
}

/// Simulates `cfg.paths` paths of the triple.
pub fn simulate_paths(triple: &ExtendedLevyTriple, cfg: &SimConfig) -> Result<Vec<SamplePath>> {
    Ok(Simulator::new(triple, cfg)?.paths())
}

/// Indexed access to an ensemble of group-valued paths.
pub trait PathSource: Sync {
    fn group(&self) -> &GroupDescriptor;
    fn len(&self) -> usize;
    fn path(&self, index: usize) -> Cow<'_, SamplePath>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PathSource for Simulator {
    fn group(&self) -> &GroupDescriptor {
        &self.desc
    }
    fn len(&self) -> usize {
        self.paths
    }
    fn path(&self, index: usize) -> Cow<'_, SamplePath> {
        Cow::Owned(Simulator::path(self, index))
    }
}

/// Materialized ensemble.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub group: GroupDescriptor,
    pub paths: Vec<SamplePath>,
}

impl PathSource for PathSet {
    fn group(&self) -> &GroupDescriptor {
        &self.group
    }
    fn len(&self) -> usize {
        self.paths.len()
    }
    fn path(&self, index: usize) -> Cow<'_, SamplePath> {
        Cow::Borrowed(&self.paths[index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::{FixedJump, LevyMeasureC, PiecewiseLinear};

    fn brownian_rd1() -> ExtendedLevyTriple {
        let g = GroupDescriptor::rd(1).unwrap();
        let mut t = ExtendedLevyTriple::zero(g);
        let mut a = Mat::zeros();
        a[(0, 0)] = 1.0;
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), a]).unwrap();
        t
    }

    #[test]
    fn zero_triple_gives_constant_paths() {
        let t = ExtendedLevyTriple::zero(GroupDescriptor::so3());
        let paths = simulate_paths(&t, &SimConfig::new(10, 1.0, 5, 1)).unwrap();
        for p in &paths {
            assert!(p.events.iter().all(|e| e.increment.is_identity()));
            assert!(p.value_at(&t.group, 1.0).is_identity());
        }
    }

    #[test]
    fn single_deterministic_atom() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(0.2, 1.1, -0.4));
        let t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            PiecewiseLinear::constant(LieAlgebraVector::zeros()),
            PiecewiseLinear::constant(Mat::zeros()),
            LevyMeasureC::zero(),
            vec![FixedJump { time: 1.0, law: DiscreteMeasure::dirac(x) }],
        );
        for scheme in [Scheme::FiniteVariation, Scheme::ShiftedZ] {
            let cfg = SimConfig { scheme, ..SimConfig::new(8, 2.0, 3, 4) };
            for p in simulate_paths(&t, &cfg).unwrap() {
                assert!(p.value_at(&g, 0.999).is_identity() || g.distance(&p.value_at(&g, 0.999), &GroupElement::identity()) < 1e-14);
                assert!(g.distance(&p.value_at(&g, 1.0), &x) < 1e-14);
                assert!(g.distance(&p.value_at(&g, 2.0), &x) < 1e-14);
                assert_eq!(p.fixed_jump_times(), vec![1.0]);
            }
        }
    }

    #[test]
    fn rd1_brownian_variance() {
        let t = brownian_rd1();
        let sim = Simulator::new(&t, &SimConfig::new(100, 1.0, 50_000, 11)).unwrap();
        let xs: Vec<f64> = (0..sim.len()).map(|i| sim.path(i).value_at(&t.group, 1.0).0[(0, 1)]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((0.97..=1.03).contains(&v), "variance {v}");
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size() {
        let t = brownian_rd1();
        let a = Simulator::new(&t, &SimConfig::new(20, 1.0, 10, 3)).unwrap();
        let b = Simulator::new(&t, &SimConfig::new(20, 1.0, 1000, 3)).unwrap();
        assert_eq!(a.path(7), b.path(7));
        assert_ne!(a.path(7), a.path(8));
        let par = b.paths();
        assert_eq!(par[500], b.path(500));
    }

    #[test]
    fn surgery_round_trip_is_exact() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(0.0, 0.9, 0.0));
        let y = g.exp(&LieAlgebraVector::new(0.4, 0.0, 0.0));
        let t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            PiecewiseLinear::new(vec![0.0, 2.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.3, 0.0, 0.2)]).unwrap(),
            PiecewiseLinear::new(vec![0.0, 2.0], vec![Mat::zeros(), Mat::identity() * 0.2]).unwrap(),
            LevyMeasureC::zero(),
            vec![FixedJump { time: 1.0, law: DiscreteMeasure::new(vec![(x, 0.5), (y, 0.5)]) }],
        );
        t.validate().into_result().unwrap();
        let sim = Simulator::new(&t, &SimConfig::new(50, 2.0, 4, 8)).unwrap();
        for i in 0..4 {
            let p = sim.path(i);
            let (removed, ev) = p.take_fixed_jump(1.0);
            let ev = ev.expect("both support points are non-identity");
            assert_eq!(removed.fixed_jump_times().len(), 0);
            let back = removed.insert_fixed_jump(1.0, ev.increment);
            assert_eq!(back, p);
            let untouched = removed.remove_fixed_jump(0.5);
            assert_eq!(untouched, removed);
        }
    }

    #[test]
    fn insertion_examples() {
        let g = GroupDescriptor::so3();
        let grid = Arc::new(vec![0.0, 0.25, 0.75, 1.0]);
        let p = SamplePath::constant(GroupElement::identity(), grid);
        let x = g.exp(&LieAlgebraVector::new(0.0, 0.0, 0.7));
        let q = p.insert_fixed_jump(0.5, x);
        assert!(q.value_at(&g, 0.4).is_identity());
        assert_eq!(q.value_at(&g, 0.5), x);
        assert_eq!(q.value_at(&g, 1.0), x);
        assert!(grid_index(&q.grid, 0.5).is_some());
        let e = p.insert_fixed_jump(0.5, GroupElement::identity());
        assert!(e.value_at(&g, 1.0).is_identity());
        let late = p.insert_fixed_jump(3.0, x);
        assert!(late.value_at(&g, 1.0).is_identity());
        // removing the only jump leaves a constant path
        assert!(q.remove_fixed_jump(0.5).value_at(&g, 1.0).is_identity());
    }

    #[test]
    fn shifted_split_and_recombine() {
        let g = GroupDescriptor::so3();
        let law = Arc::new(SpatialLaw::wrapped_gaussian_so3(&g, 0.5).unwrap());
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.drift.continuous =
            PiecewiseLinear::new(vec![0.0, 1.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.5, -0.3, 0.8)]).unwrap();
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::identity() * 0.3]).unwrap();
        t.levy_c.pieces.push(crate::triple::LevyPiece { start: 0.0, end: 1.0, rate: 2.0, law });
        let sim = Simulator::new(&t, &SimConfig::new(100, 1.0, 3, 2)).unwrap();
        for i in 0..3 {
            let x = sim.path(i);
            let z = split_shifted(&g, &x, &t.drift).unwrap();
            let back = recombine_shifted(&g, &z, &t.drift).unwrap();
            let xs = x.running_values(&g);
            let bs = back.running_values(&g);
            for (a, b) in xs.iter().zip(&bs) {
                assert!((a.0 - b.0).amax() < 1e-10);
                assert!(g.membership_residual(b) < 1e-9);
            }
            let same = split_shifted(&g, &x, &DriftPath::zero()).unwrap();
            for (a, b) in same.running_values(&g).iter().zip(&xs) {
                assert!((a.0 - b.0).amax() < 1e-10);
            }
        }
        // x ≡ b gives z ≡ e
        let det = Simulator::new(&ExtendedLevyTriple { cov: PiecewiseLinear::constant(Mat::zeros()), levy_c: LevyMeasureC::zero(), ..t.clone() }, &SimConfig::new(100, 1.0, 1, 2)).unwrap();
        let z = split_shifted(&g, &det.path(0), &t.drift).unwrap();
        assert!(z.running_values(&g).iter().all(|v| (v.0 - Mat::identity()).amax() < 1e-12));
    }
}
