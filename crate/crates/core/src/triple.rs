//! Extended Lévy triples `(b, A, η)`: data model, validation, decomposition of
//! measure functions, drift components and the quadruple transformations.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat};
use crate::linalg::min_eigenvalue;
use crate::measure::{DiscreteMeasure, SpatialLaw};

/// Tolerance used when matching times against grid points.
pub const TIME_TOL: f64 = 1e-9;

/// Continuous piecewise-linear function on an increasing grid, constant after the last knot.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear<T> {
    grid: Vec<f64>,
    values: Vec<T>,
}

impl<T> PiecewiseLinear<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    pub fn new(grid: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::InvalidTriple(format!(
                "piecewise-linear function needs matching non-empty grid and values (got {} and {})",
                grid.len(),
                values.len()
            )));
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidTriple("grid contains a non-finite time".into()));
        }
        Ok(PiecewiseLinear { grid, values })
    }

    /// Constant function on `[0, ∞)`.
    pub fn constant(value: T) -> Self {
        PiecewiseLinear { grid: vec![0.0], values: vec![value] }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_increasing(&self) -> bool {
        self.grid.windows(2).all(|w| w[0] < w[1])
    }

    pub fn eval(&self, t: f64) -> T {
        let g = &self.grid;
        if t <= g[0] {
            return self.values[0];
        }
        let last = g.len() - 1;
        if t >= g[last] {
            return self.values[last];
        }
        let k = g.partition_point(|&x| x <= t) - 1;
        let w = (t - g[k]) / (g[k + 1] - g[k]);
        self.values[k] + (self.values[k + 1] - self.values[k]) * w
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> PiecewiseLinear<U> {
        PiecewiseLinear { grid: self.grid.clone(), values: self.values.iter().map(f).collect() }
    }

    /// Builds the function with knots `grid` whose increments over each cell are `incs`.
    pub fn from_increments(grid: Vec<f64>, start: T, incs: &[T]) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        let mut acc = start;
        values.push(acc);
        for inc in incs {
            acc = acc + *inc;
            values.push(acc);
        }
        Self::new(grid, values)
    }
}

/// Drift: continuous components plus jump atoms `h_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftPath {
    pub continuous: PiecewiseLinear<LieAlgebraVector>,
    pub jumps: Vec<(f64, GroupElement)>,
}

impl DriftPath {
    pub fn zero() -> Self {
        DriftPath { continuous: PiecewiseLinear::constant(LieAlgebraVector::zeros()), jumps: Vec::new() }
    }

    /// Drift values on `grid`: right limits, left limits and continuous increments per cell.
    pub fn track(&self, desc: &GroupDescriptor, grid: &[f64]) -> Result<DriftTrack> {
        let n = grid.len();
        let mut right = Vec::with_capacity(n);
        let mut left = Vec::with_capacity(n);
        let mut incs = Vec::with_capacity(n.saturating_sub(1));
        for (u, _) in &self.jumps {
            if *u <= grid[n - 1] + TIME_TOL && grid_index(grid, *u).is_none() {
                return Err(Error::GridMismatch(format!("drift jump time {u} is not a grid point")));
            }
        }
        let jump_at = |t: f64| self.jumps.iter().find(|(u, _)| (u - t).abs() <= TIME_TOL).map(|(_, h)| *h);
        let mut b = GroupElement::identity();
        let mut prev = self.continuous.eval(grid[0]);
        let mut count = 0usize;
        left.push(b);
        if let Some(h) = jump_at(grid[0]).filter(|_| grid[0] > 0.0) {
            b = b * h;
        }
        right.push(b);
        for k in 1..n {
            let cur = self.continuous.eval(grid[k]);
            let d = cur - prev;
            prev = cur;
            incs.push(d);
            b = b * desc.exp(&d);
            count += 1;
            if count.is_multiple_of(crate::group::RENORMALIZE_EVERY) {
                b = desc.renormalize(&b);
            }
            left.push(b);
            if let Some(h) = jump_at(grid[k]) {
                b = b * h;
            }
            right.push(b);
        }
        Ok(DriftTrack { right, left, increments: incs })
    }

    /// Value `b_t`, including a jump at `t` itself.
    pub fn value_at(&self, desc: &GroupDescriptor, t: f64) -> GroupElement {
        let mut pts: Vec<f64> = self.continuous.grid().iter().copied().filter(|&s| s > 0.0 && s < t).collect();
        pts.extend(self.jumps.iter().map(|(u, _)| *u).filter(|&u| u < t));
        pts.push(0.0);
        pts.push(t.max(0.0));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        self.track(desc, &pts).map(|tr| *tr.right.last().unwrap()).unwrap_or_else(|_| GroupElement::identity())
    }
}

/// Drift sampled on a grid.
#[derive(Clone, Debug)]
pub struct DriftTrack {
    /// `b_{t_k}` (after any jump at `t_k`).
    pub right: Vec<GroupElement>,
    /// `b_{t_k−}`.
    pub left: Vec<GroupElement>,
    /// Continuous component increments over `(t_k, t_{k+1}]`.
    pub increments: Vec<LieAlgebraVector>,
}

/// Covariance matrix function `A(t)`, piecewise linear.
pub type CovMatrixFunction = PiecewiseLinear<Mat>;

/// Constant-rate piece of the continuous Lévy measure function.
#[derive(Clone, Debug)]
pub struct LevyPiece {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
    pub law: Arc<SpatialLaw>,
}

impl LevyPiece {
    /// Expected number of jumps from this piece in `(a, b]`.
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

/// Continuous part `η^c` of the Lévy measure function (finite activity).
#[derive(Clone, Debug, Default)]
pub struct LevyMeasureC {
    pub pieces: Vec<LevyPiece>,
}

impl LevyMeasureC {
    pub fn zero() -> Self {
        LevyMeasureC { pieces: Vec::new() }
    }

    /// `η^c(t, f)`.
    pub fn integrate<F: FnMut(&GroupElement) -> f64>(&self, t: f64, mut f: F) -> f64 {
        self.pieces.iter().map(|p| p.mass_between(0.0, t) * p.law.integrate(&mut f)).sum()
    }

    pub fn total_mass(&self, t: f64) -> f64 {
        self.pieces.iter().map(|p| p.mass_between(0.0, t)).sum()
    }

    pub fn scaled_rates(&self, c: f64) -> Self {
        LevyMeasureC {
            pieces: self.pieces.iter().map(|p| LevyPiece { rate: p.rate * c, ..p.clone() }).collect(),
        }
    }
}

/// A fixed jump time `u` with its law `ν_u` (a probability measure).
#[derive(Clone, Debug, PartialEq)]
pub struct FixedJump {
    pub time: f64,
    pub law: DiscreteMeasure,
}

#[derive(Clone, Debug)]
pub struct ExtendedLevyTriple {
    pub group: GroupDescriptor,
    pub drift: DriftPath,
    pub cov: CovMatrixFunction,
    pub levy_c: LevyMeasureC,
    pub atoms: Vec<FixedJump>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    Dimension,
    DriftStart,
    DriftGrid,
    DriftJumpMismatch,
    AtomTimes,
    AtomLaw,
    CovStart,
    CovGrid,
    CovAsymmetric,
    NonPsdIncrement,
    LevyPiece,
    LevyLaw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub time: Option<f64>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.time {
            Some(t) => write!(f, "{} at t={}", self.message, t),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, time: Option<f64>, message: impl Into<String>) {
        self.violations.push(Violation { kind, time, message: message.into() });
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidTriple(msgs.join("; ")))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Index of the grid point equal to `t` within [`TIME_TOL`].
pub fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    let k = grid.partition_point(|&x| x < t - TIME_TOL);
    (k < grid.len() && (grid[k] - t).abs() <= TIME_TOL).then_some(k)
}

impl ExtendedLevyTriple {
    pub fn zero(group: GroupDescriptor) -> Self {
        ExtendedLevyTriple {
            group,
            drift: DriftPath::zero(),
            cov: PiecewiseLinear::constant(Mat::zeros()),
            levy_c: LevyMeasureC::zero(),
            atoms: Vec::new(),
        }
    }

    /// Builds a triple whose drift jumps are the means of the fixed-jump laws.
    pub fn with_consistent_drift(
        group: GroupDescriptor,
        continuous: PiecewiseLinear<LieAlgebraVector>,
        cov: CovMatrixFunction,
        levy_c: LevyMeasureC,
        atoms: Vec<FixedJump>,
    ) -> Self {
        let jumps = atoms.iter().map(|a| (a.time, group.mean_of_measure(&a.law))).collect();
        ExtendedLevyTriple { drift: DriftPath { continuous, jumps }, group, cov, levy_c, atoms }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let d = self.group.dim();
        let desc = &self.group;

        let dg = self.drift.continuous.grid();
        if !self.drift.continuous.is_increasing() {
            rep.push(ViolationKind::DriftGrid, None, "drift grid not strictly increasing");
        }
        if dg[0] != 0.0 {
            rep.push(ViolationKind::DriftStart, None, "drift grid must start at 0");
        }
        if self.drift.continuous.values()[0].amax() != 0.0 {
            rep.push(ViolationKind::DriftStart, Some(0.0), "drift components must vanish at 0");
        }
        for (t, v) in dg.iter().zip(self.drift.continuous.values()) {
            if v.iter().any(|x| !x.is_finite()) {
                rep.push(ViolationKind::NonFinite, Some(*t), "non-finite drift component");
            }
            if v.iter().skip(d).any(|x| *x != 0.0) {
                rep.push(ViolationKind::Dimension, Some(*t), "drift component beyond group dimension");
            }
        }

        let cg = self.cov.grid();
        if !self.cov.is_increasing() {
            rep.push(ViolationKind::CovGrid, None, "covariance grid not strictly increasing");
        }
        if cg[0] != 0.0 || self.cov.values()[0].amax() != 0.0 {
            rep.push(ViolationKind::CovStart, Some(0.0), "covariance must start at A(0) = 0");
        }
        for (k, (t, a)) in cg.iter().zip(self.cov.values()).enumerate() {
            if a.iter().any(|x| !x.is_finite()) {
                rep.push(ViolationKind::NonFinite, Some(*t), "non-finite covariance entry");
                continue;
            }
            if (a - a.transpose()).amax() > 1e-12 {
                rep.push(ViolationKind::CovAsymmetric, Some(*t), "covariance matrix not symmetric");
            }
            for i in 0..3 {
                for j in 0..3 {
                    if (i >= d || j >= d) && a[(i, j)] != 0.0 {
                        rep.push(ViolationKind::Dimension, Some(*t), "covariance entry beyond group dimension");
                    }
                }
            }
            if k > 0 {
                let inc = a - self.cov.values()[k - 1];
                if min_eigenvalue(&inc) < -1e-12 {
                    rep.push(ViolationKind::NonPsdIncrement, Some(*t), "non-PSD increment");
                }
            }
        }

        for p in &self.levy_c.pieces {
            if !(p.start >= 0.0 && p.start < p.end && p.rate >= 0.0 && p.rate.is_finite() && !p.start.is_nan()) {
                rep.push(
                    ViolationKind::LevyPiece,
                    Some(p.start),
                    format!("invalid Lévy piece [{}, {}) with rate {}", p.start, p.end, p.rate),
                );
            }
            let q = p.law.quadrature();
            if (q.total_mass() - 1.0).abs() > 1e-12 {
                rep.push(ViolationKind::LevyLaw, Some(p.start), "jump law is not a probability measure");
            }
            if q.atoms().iter().any(|(g, w)| *w > 0.0 && g.is_identity()) {
                rep.push(ViolationKind::LevyLaw, Some(p.start), "jump law charges the identity");
            }
            let second = p.law.integrate(|g| desc.coordinates(g).norm_squared());
            if !second.is_finite() {
                rep.push(ViolationKind::LevyLaw, Some(p.start), "coordinate second moment not finite");
            }
            if q.atoms().iter().any(|(g, _)| !desc.is_member(g, 1e-9)) {
                rep.push(ViolationKind::LevyLaw, Some(p.start), "jump law atom is not a group element");
            }
        }

        for w in self.atoms.windows(2) {
            if w[0].time >= w[1].time {
                rep.push(ViolationKind::AtomTimes, Some(w[1].time), "atom times not strictly increasing");
            }
        }
        for a in &self.atoms {
            if !(a.time > 0.0 && a.time.is_finite()) {
                rep.push(ViolationKind::AtomTimes, Some(a.time), "atom time must be positive");
            }
            let mass = a.law.total_mass();
            if (mass - 1.0).abs() > 1e-12 || a.law.atoms().iter().any(|(_, w)| *w < 0.0) {
                rep.push(ViolationKind::AtomLaw, Some(a.time), format!("fixed-jump law has mass {mass}"));
            }
            if a.law.atoms().iter().any(|(g, _)| !desc.is_member(g, 1e-9)) {
                rep.push(ViolationKind::AtomLaw, Some(a.time), "fixed-jump atom is not a group element");
            }
            match self.drift.jumps.iter().find(|(u, _)| (u - a.time).abs() <= TIME_TOL) {
                None => rep.push(ViolationKind::AtomTimes, Some(a.time), "fixed jump without drift jump"),
                Some((_, h)) => {
                    let mean = desc.mean_of_measure(&a.law);
                    if desc.distance(h, &mean) > 1e-9 {
                        rep.push(ViolationKind::DriftJumpMismatch, Some(a.time), "drift-jump/mean mismatch");
                    }
                }
            }
        }
        for (u, h) in &self.drift.jumps {
            if !self.atoms.iter().any(|a| (a.time - u).abs() <= TIME_TOL) {
                rep.push(ViolationKind::AtomTimes, Some(*u), "drift jump without fixed-jump law");
            }
            if !desc.is_member(h, 1e-9) {
                rep.push(ViolationKind::DriftJumpMismatch, Some(*u), "drift jump is not a group element");
            }
        }
        rep
    }

    /// Time points every function of the triple changes slope or jumps at, within `(0, horizon]`.
    pub fn knot_times(&self, horizon: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        out.extend(self.drift.continuous.grid());
        out.extend(self.cov.grid());
        for p in &self.levy_c.pieces {
            out.push(p.start);
            out.push(p.end);
        }
        out.extend(self.atoms.iter().map(|a| a.time));
        out.retain(|t| *t > 0.0 && *t <= horizon + TIME_TOL && t.is_finite());
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        out
    }

    /// Uniform grid of mesh `1/steps_per_unit` on `[0, horizon]` refined by all knots and atom times.
    pub fn canonical_grid(&self, steps_per_unit: usize, horizon: f64) -> Vec<f64> {
        let special = self.knot_times(horizon);
        let n = (horizon * steps_per_unit as f64 + 1e-9).floor() as usize;
        let mut pts: Vec<f64> = (0..=n).map(|k| k as f64 / steps_per_unit as f64).collect();
        pts.retain(|t| special.iter().all(|s| (s - t).abs() > TIME_TOL));
        pts.extend(special);
        if pts.iter().all(|t| (t - horizon).abs() > TIME_TOL) {
            pts.push(horizon);
        }
        pts.sort_by(f64::total_cmp);
        pts.retain(|t| *t <= horizon + TIME_TOL);
        pts
    }

    pub fn with_scaled_rates(&self, c: f64) -> Self {
        ExtendedLevyTriple { levy_c: self.levy_c.scaled_rates(c), ..self.clone() }
    }

    /// Replaces the law of the fixed jump at `u` and the matching drift jump.
    pub fn with_atom_law(&self, u: f64, law: DiscreteMeasure) -> Result<Self> {
        let mut out = self.clone();
        let a = out
            .atoms
            .iter_mut()
            .find(|a| (a.time - u).abs() <= TIME_TOL)
            .ok_or_else(|| Error::InvalidArgument(format!("no fixed jump at {u}")))?;
        a.law = law;
        let mean = self.group.mean_of_measure(&a.law);
        for j in out.drift.jumps.iter_mut().filter(|(t, _)| (t - u).abs() <= TIME_TOL) {
            j.1 = mean;
        }
        Ok(out)
    }

    /// `η(t, f)` of the full extended measure function, atoms restricted to `G − {e}`.
    pub fn eta(&self, t: f64, mut f: impl FnMut(&GroupElement) -> f64) -> f64 {
        let c = self.levy_c.integrate(t, &mut f);
        let a: f64 = self
            .atoms
            .iter()
            .filter(|a| a.time <= t)
            .map(|a| a.law.without_identity().integrate(&mut f))
            .sum();
        c + a
    }
}

/// Piece of a measure function: the measure of `(start, end]`, or an instantaneous mass if `start == end`.
#[derive(Clone, Debug)]
pub struct MeasureCell {
    pub start: f64,
    pub end: f64,
    pub measure: DiscreteMeasure,
}

/// Time-indexed measure function assembled from cells.
#[derive(Clone, Debug, Default)]
pub struct MeasureFunction {
    pub cells: Vec<MeasureCell>,
}

impl MeasureFunction {
    pub fn from_triple(triple: &ExtendedLevyTriple) -> Self {
        let mut cells = Vec::new();
        for p in &triple.levy_c.pieces {
            cells.push(MeasureCell {
                start: p.start,
                end: p.end,
                measure: p.law.quadrature().scaled(p.rate * (p.end - p.start)),
            });
        }
        for a in &triple.atoms {
            cells.push(MeasureCell { start: a.time, end: a.time, measure: a.law.without_identity() });
        }
        MeasureFunction { cells }
    }

    /// `η(t, f)`, spreading each cell's mass uniformly over its interval.
    pub fn eval<F: FnMut(&GroupElement) -> f64>(&self, t: f64, mut f: F) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            if c.end <= c.start {
                if c.start <= t {
                    total += c.measure.integrate(&mut f);
                }
            } else {
                let frac = ((t.min(c.end) - c.start) / (c.end - c.start)).clamp(0.0, 1.0);
                if frac > 0.0 {
                    total += frac * c.measure.integrate(&mut f);
                }
            }
        }
        total
    }
}

/// Splits a measure function into its continuous part and its atoms `η({s} × ·)`.
pub fn decompose_measure_function(
    desc: &GroupDescriptor,
    eta: &MeasureFunction,
) -> Result<(LevyMeasureC, Vec<(f64, DiscreteMeasure)>)> {
    let mut pieces = Vec::new();
    let mut atoms: Vec<(f64, DiscreteMeasure)> = Vec::new();
    for c in &eta.cells {
        let mass = c.measure.total_mass();
        if c.end <= c.start {
            match atoms.iter_mut().find(|(u, _)| (u - c.start).abs() <= TIME_TOL) {
                Some((_, m)) => *m = m.concat(&c.measure),
                None => atoms.push((c.start, c.measure.clone())),
            }
        } else if mass > 0.0 {
            let law = SpatialLaw::discrete(desc, c.measure.scaled(1.0 / mass).without_identity())
                .or_else(|_| SpatialLaw::discrete(desc, normalized(&c.measure.without_identity())))?;
            pieces.push(LevyPiece { start: c.start, end: c.end, rate: mass / (c.end - c.start), law: Arc::new(law) });
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((LevyMeasureC { pieces }, atoms))
}

fn normalized(m: &DiscreteMeasure) -> DiscreteMeasure {
    let s = m.total_mass();
    m.scaled(1.0 / s)
}

/// Inverse of [`decompose_measure_function`].
pub fn recompose_measure_function(levy_c: &LevyMeasureC, atoms: &[(f64, DiscreteMeasure)]) -> MeasureFunction {
    let mut cells: Vec<MeasureCell> = levy_c
        .pieces
        .iter()
        .map(|p| MeasureCell {
            start: p.start,
            end: p.end,
            measure: p.law.quadrature().scaled(p.rate * (p.end - p.start)),
        })
        .collect();
    cells.extend(atoms.iter().map(|(u, m)| MeasureCell { start: *u, end: *u, measure: m.clone() }));
    MeasureFunction { cells }
}

/// Components `b_j` of a continuous path sampled on `grid`.
pub fn drift_path_to_components(
    desc: &GroupDescriptor,
    grid: &[f64],
    values: &[GroupElement],
) -> Result<PiecewiseLinear<LieAlgebraVector>> {
    if grid.len() != values.len() || grid.is_empty() {
        return Err(Error::GridMismatch("path values and grid differ in length".into()));
    }
    let mut incs = Vec::with_capacity(grid.len() - 1);
    for w in values.windows(2) {
        incs.push(desc.log(&(desc.inverse(&w[0]) * w[1]))?);
    }
    PiecewiseLinear::from_increments(grid.to_vec(), LieAlgebraVector::zeros(), &incs)
}

/// Continuous path with the given components, sampled on `grid` (starting at `e`).
pub fn components_to_drift_path(
    desc: &GroupDescriptor,
    components: &PiecewiseLinear<LieAlgebraVector>,
    grid: &[f64],
) -> Vec<GroupElement> {
    DriftPath { continuous: components.clone(), jumps: Vec::new() }
        .track(desc, grid)
        .expect("no jumps to align")
        .right
}

/// Components `β_j` of the inverse path `b_t^{-1}`: `dβ = −Ad(b_t) db`.
pub fn inverse_path_components(
    desc: &GroupDescriptor,
    components: &PiecewiseLinear<LieAlgebraVector>,
    grid: &[f64],
) -> Result<PiecewiseLinear<LieAlgebraVector>> {
    let track = DriftPath { continuous: components.clone(), jumps: Vec::new() }.track(desc, grid)?;
    let incs: Vec<LieAlgebraVector> =
        track.increments.iter().zip(&track.right).map(|(db, b)| -(desc.adjoint(b) * db)).collect();
    PiecewiseLinear::from_increments(grid.to_vec(), LieAlgebraVector::zeros(), &incs)
}

/// Part of a cell's jump intensity: `f ↦ mass · ∫ f(c x c^{-1}) law(dx)`.
#[derive(Clone, Debug)]
pub struct JumpPart {
    pub mass: f64,
    pub law: Arc<SpatialLaw>,
    pub conj: GroupElement,
}

#[derive(Clone, Debug)]
pub struct QuadrupleAtom {
    /// Grid index of the jump time.
    pub index: usize,
    pub time: f64,
    pub law: DiscreteMeasure,
}

/// Gridded quadruple `(b, A, η, ν)` with a continuous drift: per-cell increments
/// of the drift components and of `A`, per-cell jump intensities, fixed-jump laws.
#[derive(Clone, Debug)]
pub struct Quadruple {
    pub group: GroupDescriptor,
    pub grid: Vec<f64>,
    pub drift: Vec<LieAlgebraVector>,
    pub cov: Vec<Mat>,
    pub jumps: Vec<Vec<JumpPart>>,
    pub fixed: Vec<QuadrupleAtom>,
}

impl Quadruple {
    /// `∫ f dη` over cell `k`.
    pub fn cell_integral<F: FnMut(&GroupElement) -> f64>(&self, k: usize, mut f: F) -> f64 {
        let desc = &self.group;
        let mut total = 0.0;
        for part in &self.jumps[k] {
            let ci = desc.inverse(&part.conj);
            let s: f64 = part.law.integrate(|x| f(&GroupElement(part.conj.0 * x.0 * ci.0)));
            total += part.mass * s;
        }
        total
    }

    /// `∫ φ dη` over cell `k`.
    pub fn cell_coordinate_integral(&self, k: usize) -> LieAlgebraVector {
        let desc = &self.group;
        let mut total = LieAlgebraVector::zeros();
        for part in &self.jumps[k] {
            let ci = desc.inverse(&part.conj);
            let mut s = LieAlgebraVector::zeros();
            for (x, w) in part.law.quadrature().atoms() {
                s += desc.coordinates(&GroupElement(part.conj.0 * x.0 * ci.0)) * *w;
            }
            total += s * part.mass;
        }
        total
    }

    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let n = self.grid.len();
        if n < 2 || !self.grid.windows(2).all(|w| w[0] < w[1]) {
            rep.push(ViolationKind::DriftGrid, None, "quadruple grid not strictly increasing");
        }
        if self.drift.len() + 1 != n || self.cov.len() + 1 != n || self.jumps.len() + 1 != n {
            rep.push(ViolationKind::Dimension, None, "per-cell data does not match the grid");
            return rep;
        }
        for (k, a) in self.cov.iter().enumerate() {
            if min_eigenvalue(a) < -1e-12 || (a - a.transpose()).amax() > 1e-12 {
                rep.push(ViolationKind::NonPsdIncrement, Some(self.grid[k + 1]), "non-PSD increment");
            }
        }
        for (k, parts) in self.jumps.iter().enumerate() {
            for p in parts {
                if !(p.mass >= 0.0 && p.mass.is_finite()) {
                    rep.push(ViolationKind::LevyPiece, Some(self.grid[k]), "negative jump mass");
                }
            }
        }
        for a in &self.fixed {
            if a.index >= n || (self.grid[a.index] - a.time).abs() > TIME_TOL {
                rep.push(ViolationKind::AtomTimes, Some(a.time), "fixed jump not on the grid");
            }
            if (a.law.total_mass() - 1.0).abs() > 1e-12 {
                rep.push(ViolationKind::AtomLaw, Some(a.time), "fixed-jump law is not a probability");
            }
        }
        rep
    }

    fn check_grid(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<()> {
        for a in &triple.atoms {
            if a.time <= grid[grid.len() - 1] + TIME_TOL && grid_index(grid, a.time).is_none() {
                return Err(Error::GridMismatch(format!("atom time {} is not a grid point", a.time)));
            }
        }
        Ok(())
    }

    fn cell_pieces(triple: &ExtendedLevyTriple, a: f64, b: f64, conj: GroupElement) -> Vec<JumpPart> {
        triple
            .levy_c
            .pieces
            .iter()
            .filter_map(|p| {
                let m = p.mass_between(a, b);
                (m > 0.0).then(|| JumpPart { mass: m, law: p.law.clone(), conj })
            })
            .collect()
    }

    fn atoms_on<'a>(triple: &'a ExtendedLevyTriple, grid: &[f64]) -> Vec<(usize, &'a FixedJump)> {
        triple.atoms.iter().filter_map(|a| grid_index(grid, a.time).map(|i| (i, a))).collect()
    }

    /// Quadruple `(b^c, A, η^c, ν)` acting directly on the process `x`.
    pub fn finite_variation(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<Self> {
        Self::check_grid(triple, grid)?;
        let n = grid.len();
        let mut drift = Vec::with_capacity(n - 1);
        let mut cov = Vec::with_capacity(n - 1);
        let mut jumps = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            drift.push(triple.drift.continuous.eval(grid[k + 1]) - triple.drift.continuous.eval(grid[k]));
            cov.push(triple.cov.eval(grid[k + 1]) - triple.cov.eval(grid[k]));
            jumps.push(Self::cell_pieces(triple, grid[k], grid[k + 1], GroupElement::identity()));
        }
        let fixed = Self::atoms_on(triple, grid)
            .into_iter()
            .map(|(index, a)| QuadrupleAtom { index, time: a.time, law: a.law.clone() })
            .collect();
        Ok(Quadruple { group: triple.group.clone(), grid: grid.to_vec(), drift, cov, jumps, fixed })
    }

    /// Quadruple `(b̄, Ā, η̄, ν̄)` of the shifted process `z_t = x_t b_t^{-1}`.
    pub fn bar_transform(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<Self> {
        Self::check_grid(triple, grid)?;
        let desc = &triple.group;
        let track = triple.drift.track(desc, grid)?;
        let n = grid.len();
        let mut drift = Vec::with_capacity(n - 1);
        let mut cov = Vec::with_capacity(n - 1);
        let mut jumps = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let b = track.right[k];
            let ad = desc.adjoint(&b);
            let bi = desc.inverse(&b);
            let da = triple.cov.eval(grid[k + 1]) - triple.cov.eval(grid[k]);
            cov.push(ad * da * ad.transpose());
            let parts = Self::cell_pieces(triple, grid[k], grid[k + 1], b);
            let mut db = LieAlgebraVector::zeros();
            for p in &parts {
                let mut s = LieAlgebraVector::zeros();
                for (x, w) in p.law.quadrature().atoms() {
                    let conj = GroupElement(b.0 * x.0 * bi.0);
                    s += (desc.coordinates(&conj) - ad * desc.coordinates(x)) * *w;
                }
                db += s * p.mass;
            }
            drift.push(db);
            jumps.push(parts);
        }
        let fixed = Self::atoms_on(triple, grid)
            .into_iter()
            .map(|(index, a)| {
                let bl = track.left[index];
                let h = triple
                    .drift
                    .jumps
                    .iter()
                    .find(|(u, _)| (u - a.time).abs() <= TIME_TOL)
                    .map(|(_, h)| *h)
                    .unwrap_or_else(|| desc.mean_of_measure(&a.law));
                let right = desc.inverse(&h) * desc.inverse(&bl);
                QuadrupleAtom {
                    index,
                    time: a.time,
                    law: a.law.push_forward(|x| GroupElement(bl.0 * x.0 * right.0)),
                }
            })
            .collect();
        Ok(Quadruple { group: desc.clone(), grid: grid.to_vec(), drift, cov, jumps, fixed })
    }

    /// Quadruple of `z_t u_t` for a continuous drift `u` with the given components.
    pub fn transform_by_drift(&self, u: &PiecewiseLinear<LieAlgebraVector>) -> Result<Self> {
        let desc = &self.group;
        let track = DriftPath { continuous: u.clone(), jumps: Vec::new() }.track(desc, &self.grid)?;
        let n = self.grid.len();
        let mut drift = Vec::with_capacity(n - 1);
        let mut cov = Vec::with_capacity(n - 1);
        let mut jumps = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            let ui = desc.inverse(&track.right[k]);
            let u_k = track.right[k];
            let ad = desc.adjoint(&ui);
            cov.push(ad * self.cov[k] * ad.transpose());
            let mut db = ad * self.drift[k] + track.increments[k];
            let mut parts = Vec::with_capacity(self.jumps[k].len());
            for p in &self.jumps[k] {
                let ci = desc.inverse(&p.conj);
                let mut s = LieAlgebraVector::zeros();
                for (x, w) in p.law.quadrature().atoms() {
                    let y = GroupElement(p.conj.0 * x.0 * ci.0);
                    let yu = GroupElement(ui.0 * y.0 * u_k.0);
                    s += (desc.coordinates(&yu) - ad * desc.coordinates(&y)) * *w;
                }
                db += s * p.mass;
                parts.push(JumpPart { mass: p.mass, law: p.law.clone(), conj: ui * p.conj });
            }
            drift.push(db);
            jumps.push(parts);
        }
        let fixed = self
            .fixed
            .iter()
            .map(|a| {
                let uu = track.right[a.index];
                let ui = desc.inverse(&uu);
                QuadrupleAtom { index: a.index, time: a.time, law: a.law.push_forward(|x| GroupElement(ui.0 * x.0 * uu.0)) }
            })
            .collect();
        Ok(Quadruple { group: desc.clone(), grid: self.grid.clone(), drift, cov, jumps, fixed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupKind;

    fn so3_atom_triple(h_mismatch: bool) -> ExtendedLevyTriple {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(0.5, 0.0, 0.0));
        let law = DiscreteMeasure::dirac(x);
        let mut t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            PiecewiseLinear::constant(LieAlgebraVector::zeros()),
            PiecewiseLinear::constant(Mat::zeros()),
            LevyMeasureC::zero(),
            vec![FixedJump { time: 1.0, law }],
        );
        if h_mismatch {
            t.drift.jumps[0].1 = g.exp(&LieAlgebraVector::new(0.3, 0.0, 0.0));
        }
        t
    }

    #[test]
    fn zero_triple_is_valid() {
        for g in [GroupDescriptor::so3(), GroupDescriptor::se2(), GroupDescriptor::rd(2).unwrap()] {
            assert!(ExtendedLevyTriple::zero(g).validate().is_empty());
        }
    }

    #[test]
    fn drift_jump_mismatch_is_reported() {
        assert!(so3_atom_triple(false).validate().is_empty());
        let rep = so3_atom_triple(true).validate();
        assert!(rep.has(ViolationKind::DriftJumpMismatch));
        assert!(rep.to_string().contains("drift-jump/mean mismatch at t=1"));
    }

    #[test]
    fn non_psd_increment_is_reported() {
        let g = GroupDescriptor::so3();
        let mut t = ExtendedLevyTriple::zero(g);
        let a1 = Mat::from_diagonal(&nalgebra::Vector3::new(0.5, 0.5, 0.5));
        let a2 = a1 - Mat::from_diagonal(&nalgebra::Vector3::new(0.01, 0.0, 0.0));
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0, 2.0], vec![Mat::zeros(), a1, a2]).unwrap();
        let rep = t.validate();
        assert!(rep.has(ViolationKind::NonPsdIncrement));
        assert!(rep.to_string().contains("non-PSD increment"));
    }

    #[test]
    fn mixed_measure_function_decomposition() {
        let g = GroupDescriptor::rd(1).unwrap();
        let j = g.exp(&LieAlgebraVector::new(1.5, 0.0, 0.0));
        let law = Arc::new(SpatialLaw::discrete(&g, DiscreteMeasure::dirac(j)).unwrap());
        let nu = DiscreteMeasure::new(vec![(j, 0.3), (GroupElement::identity(), 0.7)]);
        let t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            PiecewiseLinear::constant(LieAlgebraVector::zeros()),
            PiecewiseLinear::constant(Mat::zeros()),
            LevyMeasureC { pieces: vec![LevyPiece { start: 0.0, end: 2.0, rate: 2.0, law }] },
            vec![FixedJump { time: 1.0, law: nu }],
        );
        let eta = MeasureFunction::from_triple(&t);
        assert!((eta.eval(2.0, |_| 1.0) - 4.3).abs() < 1e-12);
        let (c, atoms) = decompose_measure_function(&g, &eta).unwrap();
        assert_eq!(atoms.len(), 1);
        assert!((c.total_mass(2.0) - 4.0).abs() < 1e-12);
        let back = recompose_measure_function(&c, &atoms);
        for &s in &[0.3, 0.99, 1.0, 1.7, 2.0] {
            let f = |x: &GroupElement| (x.0[(0, 1)]).cos();
            assert!((back.eval(s, f) - eta.eval(s, f)).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_and_pure_atom_decompositions() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(1.0, 0.0, 0.0));
        let law = Arc::new(SpatialLaw::discrete(&g, DiscreteMeasure::dirac(x)).unwrap());
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.levy_c.pieces.push(LevyPiece { start: 0.0, end: 1.0, rate: 1.0, law });
        let (_, atoms) = decompose_measure_function(&g, &MeasureFunction::from_triple(&t)).unwrap();
        assert!(atoms.is_empty());
        let a = so3_atom_triple(false);
        let (c, atoms) = decompose_measure_function(&g, &MeasureFunction::from_triple(&a)).unwrap();
        assert!(c.pieces.is_empty());
        assert_eq!(atoms.len(), 1);
    }

    fn grid(n: usize, t: f64) -> Vec<f64> {
        (0..=n).map(|k| t * k as f64 / n as f64).collect()
    }

    #[test]
    fn subgroup_components_round_trip() {
        let g = GroupDescriptor::so3();
        let v = LieAlgebraVector::new(0.7, -0.3, 0.2);
        let gr = grid(1000, 1.0);
        let path: Vec<GroupElement> = gr.iter().map(|t| g.exp(&(v * *t))).collect();
        let comps = drift_path_to_components(&g, &gr, &path).unwrap();
        for (t, c) in gr.iter().zip(comps.values()) {
            assert!((c - v * *t).amax() < 1e-9);
        }
        let back = components_to_drift_path(&g, &comps, &gr);
        for (a, b) in back.iter().zip(&path) {
            assert!(g.distance(a, b) < 1e-6);
        }
        let zero = components_to_drift_path(&g, &PiecewiseLinear::constant(LieAlgebraVector::zeros()), &gr);
        assert!(zero.iter().all(|x| x.is_identity()));
    }

    #[test]
    fn se2_components_match_runge_kutta() {
        let g = GroupDescriptor::se2();
        // components (t, t) plus a rotation rate switching on at t = 0.5
        let comps = PiecewiseLinear::new(
            vec![0.0, 0.5, 1.0],
            vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.5, 0.5, 0.0), LieAlgebraVector::new(1.0, 1.0, 0.8)],
        )
        .unwrap();
        let gr = grid(1000, 1.0);
        let path = components_to_drift_path(&g, &comps, &gr);
        let n = 20000;
        let h = 1.0 / n as f64;
        let mut b = Mat::identity();
        for i in 0..n {
            let rate = if i < n / 2 { LieAlgebraVector::new(1.0, 1.0, 0.0) } else { LieAlgebraVector::new(1.0, 1.0, 1.6) };
            let x = g.hat(&rate);
            let k1 = b * x;
            let k2 = (b + k1 * (h / 2.0)) * x;
            let k3 = (b + k2 * (h / 2.0)) * x;
            let k4 = (b + k3 * h) * x;
            b += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        assert!((path.last().unwrap().0 - b).abs().max() < 1e-6);
    }

    #[test]
    fn inverse_components() {
        let g = GroupDescriptor::so3();
        let gr = grid(1000, 1.0);
        let comps = PiecewiseLinear::new(vec![0.0, 1.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(1.0, 0.0, 0.0)]).unwrap();
        let inv = inverse_path_components(&g, &comps, &gr).unwrap();
        let path = components_to_drift_path(&g, &inv, &gr);
        for (t, p) in gr.iter().zip(&path) {
            assert!(g.distance(p, &g.exp(&LieAlgebraVector::new(-t, 0.0, 0.0))) < 1e-6);
        }
        let r = GroupDescriptor::rd(2).unwrap();
        let c2 = PiecewiseLinear::new(vec![0.0, 0.5, 1.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.3, -0.1, 0.0), LieAlgebraVector::new(-0.2, 0.4, 0.0)]).unwrap();
        let inv2 = inverse_path_components(&r, &c2, &gr).unwrap();
        for t in [0.25, 0.5, 0.9, 1.0] {
            assert!((inv2.eval(t) + c2.eval(t)).amax() < 1e-12);
        }
    }

    #[test]
    fn abelian_bar_transform_is_trivial() {
        let g = GroupDescriptor::rd(2).unwrap();
        let j = g.exp(&LieAlgebraVector::new(1.2, -0.3, 0.0));
        let law = Arc::new(SpatialLaw::discrete(&g, DiscreteMeasure::dirac(j)).unwrap());
        let t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            PiecewiseLinear::new(vec![0.0, 1.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.5, 0.2, 0.0)]).unwrap(),
            PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 0.0))]).unwrap(),
            LevyMeasureC { pieces: vec![LevyPiece { start: 0.0, end: 1.0, rate: 1.0, law }] },
            vec![],
        );
        let gr = grid(10, 1.0);
        let q = Quadruple::bar_transform(&t, &gr).unwrap();
        let fv = Quadruple::finite_variation(&t, &gr).unwrap();
        for k in 0..10 {
            assert!(q.drift[k].amax() < 1e-15);
            assert!((q.cov[k] - fv.cov[k]).amax() < 1e-15);
            let f = |x: &GroupElement| x.0[(0, 2)] + 2.0 * x.0[(1, 2)];
            assert!((q.cell_integral(k, f) - fv.cell_integral(k, f)).abs() < 1e-15);
        }
        assert!(q.validate().is_empty());
    }

    #[test]
    fn bar_transform_of_deterministic_atom() {
        let t = so3_atom_triple(false);
        let gr = grid(4, 2.0);
        let q = Quadruple::bar_transform(&t, &gr).unwrap();
        assert_eq!(q.fixed.len(), 1);
        let (x, w) = q.fixed[0].law.atoms()[0];
        assert_eq!(w, 1.0);
        assert!((x.0 - Mat::identity()).amax() < 1e-14);
    }

    #[test]
    fn drift_transform_rotates_covariance() {
        let g = GroupDescriptor::so3();
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::from_diagonal(&nalgebra::Vector3::new(1.0, 0.0, 0.0))]).unwrap();
        let gr = grid(100, 1.0);
        let q = Quadruple::finite_variation(&t, &gr).unwrap();
        let u = PiecewiseLinear::new(vec![0.0, 1.0], vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.0, 0.0, 1.0)]).unwrap();
        let qu = q.transform_by_drift(&u).unwrap();
        for k in [0usize, 37, 99] {
            let s = gr[k];
            let r = g.exp(&LieAlgebraVector::new(0.0, 0.0, -s)).0;
            let e1 = nalgebra::Vector3::new(1.0, 0.0, 0.0);
            let expect = r * e1 * e1.transpose() * r.transpose() * 0.01;
            assert!((qu.cov[k] - expect).amax() < 1e-14);
            assert!((qu.drift[k] - LieAlgebraVector::new(0.0, 0.0, 0.01)).amax() < 1e-14);
        }
        let same = q.transform_by_drift(&PiecewiseLinear::constant(LieAlgebraVector::zeros())).unwrap();
        assert_eq!(same.cov, q.cov);
        assert!(qu.validate().is_empty());
        assert_eq!(g.kind(), GroupKind::So3);
    }

    #[test]
    fn canonical_grid_contains_atoms_and_knots() {
        let mut t = so3_atom_triple(false);
        t.atoms[0].time = 0.3333;
        t.drift.jumps[0].0 = 0.3333;
        let gr = t.canonical_grid(10, 1.0);
        assert!(grid_index(&gr, 0.3333).is_some());
        assert!(grid_index(&gr, 0.3).is_some());
        assert!(grid_index(&gr, 1.0).is_some());
        assert_eq!(gr[0], 0.0);
        assert!(gr.windows(2).all(|w| w[0] < w[1]));
    }
}
