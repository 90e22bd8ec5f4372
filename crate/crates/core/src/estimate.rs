//! Recovery of an extended Lévy triple from an ensemble of sampled paths.
//!
//! The paths are observed on nested partitions. For every cell the empirical
//! law `μ̂_ni` of the increment is summarized by moments of the coordinate
//! functions over a family of shrinking balls, plus the raw increments lying
//! outside a small detection ball.

use std::fmt::Debug;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat};
use crate::linalg::psd_clip;
use crate::measure::{DiscreteMeasure, SpatialLaw};
use crate::simulate::PathSource;
use crate::stats::CHUNK;
use crate::triple::{
    CovMatrixFunction, DriftPath, ExtendedLevyTriple, FixedJump, LevyMeasureC, LevyPiece, PiecewiseLinear, TIME_TOL,
};

/// State space of the observed process with its coordinate functions.
pub trait Space: Sync + Clone {
    type Point: Clone + Send + Sync + Debug;

    fn group(&self) -> &GroupDescriptor;
    fn dim(&self) -> usize;
    fn r_in(&self) -> f64;
    fn origin(&self) -> Self::Point;
    /// `from^{-1} to`, through a section map on a homogeneous space.
    fn increment(&self, from: &Self::Point, to: &Self::Point) -> Self::Point;
    fn coordinates(&self, p: &Self::Point) -> LieAlgebraVector;
    /// Distance from the origin.
    fn radius(&self, p: &Self::Point) -> f64;
    /// Uncut log coordinates, if the point is in the chart.
    fn chart(&self, p: &Self::Point) -> Option<LieAlgebraVector>;
    /// `exp(Σ v_j ξ_j)` applied to the origin.
    fn exp_point(&self, v: &LieAlgebraVector) -> Self::Point;
    /// `exp(Σ v_j ξ_j)` in the group.
    fn exp_group(&self, v: &LieAlgebraVector) -> GroupElement;

    /// Sample points of the closed ball of radius `r` around the origin.
    fn probe_ball(&self, r: f64) -> Vec<Self::Point> {
        let d = self.dim();
        let mut dirs = Vec::new();
        for j in 0..d {
            for s in [-1.0, 1.0] {
                dirs.push(LieAlgebraVector::ith(j, s));
            }
        }
        for mask in 1..(1 << d) {
            let mut v = LieAlgebraVector::zeros();
            for j in 0..d {
                v[j] = if mask & (1 << j) != 0 { 1.0 } else { -0.5 };
            }
            dirs.push(v / v.norm());
        }
        let mut out = vec![self.origin()];
        for f in [0.1, 0.3, 0.5, 0.7, 0.9, 0.999] {
            for v in &dirs {
                out.push(self.exp_point(&(v * (f * r))));
            }
        }
        out
    }
}

impl Space for GroupDescriptor {
    type Point = GroupElement;

    fn group(&self) -> &GroupDescriptor {
        self
    }
    fn dim(&self) -> usize {
        GroupDescriptor::dim(self)
    }
    fn r_in(&self) -> f64 {
        GroupDescriptor::r_in(self)
    }
    fn origin(&self) -> GroupElement {
        GroupElement::identity()
    }
    fn increment(&self, from: &GroupElement, to: &GroupElement) -> GroupElement {
        self.inverse(from) * *to
    }
    fn coordinates(&self, p: &GroupElement) -> LieAlgebraVector {
        GroupDescriptor::coordinates(self, p)
    }
    fn radius(&self, p: &GroupElement) -> f64 {
        self.distance(&GroupElement::identity(), p)
    }
    fn chart(&self, p: &GroupElement) -> Option<LieAlgebraVector> {
        self.log(p).ok()
    }
    fn exp_point(&self, v: &LieAlgebraVector) -> GroupElement {
        self.exp(v)
    }
    fn exp_group(&self, v: &LieAlgebraVector) -> GroupElement {
        self.exp(v)
    }
}

/// Indexed ensemble of paths that can be sampled at arbitrary grid times.
pub trait Ensemble<P>: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Observation grid shared by all paths.
    fn grid(&self) -> Vec<f64>;
    /// Values at increasing `times`.
    fn values_on(&self, index: usize, times: &[f64]) -> Vec<P>;
}

/// Group-valued paths from a [`PathSource`].
pub struct GroupPaths<'a>(pub &'a dyn PathSource);

impl Ensemble<GroupElement> for GroupPaths<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn grid(&self) -> Vec<f64> {
        self.0.path(0).grid.as_ref().clone()
    }
    fn values_on(&self, index: usize, times: &[f64]) -> Vec<GroupElement> {
        self.0.path(index).values_on(self.0.group(), times)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateConfig {
    pub level_meshes: Vec<f64>,
    /// Minimum cell probability of a non-small increment for a fixed-jump time.
    pub threshold: f64,
    /// Ball radii for the covariance extraction, as fractions of `r_in`.
    pub ball_fractions: Vec<f64>,
    /// Radius of the detection ball as a fraction of `r_in`.
    pub detection_fraction: f64,
    /// Declared fixed-jump candidates added to every level grid.
    pub candidates: Vec<f64>,
    /// Merging radius for empirical jump laws, as a fraction of `r_in`.
    pub cluster_fraction: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            level_meshes: vec![1e-2, 5e-3, 2.5e-3],
            threshold: 0.05,
            ball_fractions: vec![0.5, 0.35, 0.25],
            detection_fraction: 0.25,
            candidates: Vec::new(),
            cluster_fraction: 0.1,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level_meshes.is_empty() || self.level_meshes.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument("level meshes must be positive".into()));
        }
        if !self.level_meshes.windows(2).all(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("level meshes must be non-increasing".into()));
        }
        if self.ball_fractions.len() < 2 || self.ball_fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidArgument("need at least two positive ball radii".into()));
        }
        let smallest = self.ball_fractions.iter().copied().fold(f64::INFINITY, f64::min);
        if self.detection_fraction > smallest + 1e-12 {
            return Err(Error::InvalidArgument("detection ball must lie inside every covariance ball".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Grid of mesh `mesh` snapped to the observation grid, with the candidates folded in.
pub fn level_grid(path_grid: &[f64], mesh: f64, candidates: &[f64]) -> Vec<f64> {
    let t_end = *path_grid.last().unwrap();
    let n = (t_end / mesh + 1e-9).floor() as usize;
    let mut targets: Vec<f64> = (0..=n).map(|k| k as f64 * mesh).collect();
    targets.push(t_end);
    targets.extend(candidates.iter().copied().filter(|u| *u > 0.0 && *u <= t_end + TIME_TOL));
    let snap = |t: f64| {
        let k = path_grid.partition_point(|&x| x < t);
        if k == 0 {
            path_grid[0]
        } else if k == path_grid.len() || (t - path_grid[k - 1]) <= (path_grid[k] - t) {
            path_grid[k - 1]
        } else {
            path_grid[k]
        }
    };
    let mut out: Vec<f64> = targets.into_iter().map(snap).collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
    out
}

/// Empirical laws of the increments over the cells of `grid`, each with one atom per path.
pub fn empirical_increment_laws<S: Space, E: Ensemble<S::Point>>(
    space: &S,
    ens: &E,
    grid: &[f64],
) -> Vec<Vec<(S::Point, f64)>> {
    let n = ens.len();
    let w = 1.0 / n as f64;
    let mut out: Vec<Vec<(S::Point, f64)>> = vec![Vec::with_capacity(n); grid.len().saturating_sub(1)];
    let rows: Vec<Vec<S::Point>> = (0..n).into_par_iter().map(|i| ens.values_on(i, grid)).collect();
    for vals in rows {
        for (k, pair) in vals.windows(2).enumerate() {
            out[k].push((space.increment(&pair[0], &pair[1]), w));
        }
    }
    out
}

pub fn empirical_increment_measures(source: &dyn PathSource, grid: &[f64]) -> Vec<DiscreteMeasure> {
    empirical_increment_laws(source.group(), &GroupPaths(source), grid).into_iter().map(DiscreteMeasure::new).collect()
}

#[derive(Clone, Debug, Default)]
struct BallStats {
    count: f64,
    s1: LieAlgebraVector,
    s2: Mat,
}

impl BallStats {
    fn add(&mut self, o: &BallStats) {
        self.count += o.count;
        self.s1 += o.s1;
        self.s2 += o.s2;
    }
}

#[derive(Clone, Debug)]
struct CellStats {
    outside: usize,
    /// One entry per covariance ball, then the whole space.
    balls: Vec<BallStats>,
}

#[derive(Clone, Debug)]
struct Outlier<P> {
    cell: usize,
    path: usize,
    radius: f64,
    coords: LieAlgebraVector,
    point: P,
}

#[derive(Clone, Debug)]
struct LevelAcc<P> {
    cells: Vec<CellStats>,
    outliers: Vec<Outlier<P>>,
}

/// Statistics of one partition level.
#[derive(Clone, Debug)]
pub struct Level<P> {
    pub grid: Vec<f64>,
    cells: Vec<CellStats>,
    outliers: Vec<Outlier<P>>,
    /// `μ̂_ni(φ_·)`.
    pub means: Vec<LieAlgebraVector>,
    /// `φ_·(b_ni)`.
    pub mean_coords: Vec<LieAlgebraVector>,
    /// `b^n` at the grid points.
    pub b_path: Vec<GroupElement>,
    /// Fraction of paths whose increment leaves the detection ball.
    pub jump_probability: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DetectedAtom<P> {
    pub time: f64,
    /// Cell probability of a non-small increment at each level, coarsest first.
    pub probabilities: Vec<f64>,
    /// `ν̂_u`, including its mass at the origin.
    pub law: Vec<(P, f64)>,
    /// `ν̂_u(φ_·)`.
    pub mean_coords: LieAlgebraVector,
    /// `h_u`.
    pub mean: GroupElement,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModulusRow {
    pub delta: f64,
    pub q: f64,
    pub b: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusTrace {
    pub radius: f64,
    pub trace: f64,
}

/// Estimated triple together with the per-level statistics it was built from.
#[derive(Clone, Debug)]
pub struct EmpiricalTriple<S: Space> {
    pub space: S,
    pub config: EstimateConfig,
    pub n_paths: usize,
    pub radii: Vec<f64>,
    pub detection_radius: f64,
    pub levels: Vec<Level<S::Point>>,
    pub atoms: Vec<DetectedAtom<S::Point>>,
    /// Unclipped increments of `A_est` over the finest cells.
    pub cov_increments: Vec<Mat>,
    /// `trace A'(T, 1_U)` for each ball before extrapolation.
    pub cov_by_radius: Vec<RadiusTrace>,
    pub cov_nonlinear: bool,
    /// Continuous drift components on the finest grid.
    pub drift_components: PiecewiseLinear<LieAlgebraVector>,
    /// Standard error of the drift component endpoint.
    pub drift_endpoint_stderr: LieAlgebraVector,
    pub moduli: Vec<ModulusRow>,
    pub warnings: Vec<String>,
}

/// Runs the full estimator.
pub fn estimate<S: Space, E: Ensemble<S::Point>>(space: &S, ens: &E, cfg: &EstimateConfig) -> Result<EmpiricalTriple<S>> {
    cfg.validate()?;
    let m = ens.len();
    if m == 0 {
        return Err(Error::InvalidArgument("cannot estimate from zero paths".into()));
    }
    let path_grid = ens.grid();
    if path_grid.len() < 2 {
        return Err(Error::GridMismatch("observation grid needs two points".into()));
    }
    let d = space.dim();
    let r_in = space.r_in();
    let radii: Vec<f64> = cfg.ball_fractions.iter().map(|f| f * r_in).collect();
    let r_det = cfg.detection_fraction * r_in;
    let grids: Vec<Vec<f64>> = cfg.level_meshes.iter().map(|h| level_grid(&path_grid, *h, &cfg.candidates)).collect();
    let mut union: Vec<f64> = grids.iter().flatten().copied().collect();
    union.sort_by(f64::total_cmp);
    union.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
    let maps: Vec<Vec<usize>> = grids
        .iter()
        .map(|g| g.iter().map(|t| union.partition_point(|x| *x < t - TIME_TOL)).collect())
        .collect();
    let nb = radii.len() + 1;
    let empty_level = |g: &Vec<f64>| LevelAcc::<S::Point> {
        cells: vec![CellStats { outside: 0, balls: vec![BallStats::default(); nb] }; g.len() - 1],
        outliers: Vec::new(),
    };
    let finest = grids.len() - 1;

    let chunks: Vec<usize> = (0..m.div_ceil(CHUNK)).collect();
    let partial: Vec<(Vec<LevelAcc<S::Point>>, LieAlgebraVector, Mat)> = chunks
        .par_iter()
        .map(|&c| {
            let mut acc: Vec<LevelAcc<S::Point>> = grids.iter().map(empty_level).collect();
            let mut ds1 = LieAlgebraVector::zeros();
            let mut ds2 = Mat::zeros();
            for p in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let vals = ens.values_on(p, &union);
                for (l, map) in maps.iter().enumerate() {
                    let mut total = LieAlgebraVector::zeros();
                    for k in 0..map.len() - 1 {
                        let inc = space.increment(&vals[map[k]], &vals[map[k + 1]]);
                        let phi = space.coordinates(&inc);
                        let r = space.radius(&inc);
                        let cell = &mut acc[l].cells[k];
                        let outer = phi * phi.transpose();
                        for (b, rad) in radii.iter().enumerate() {
                            if r <= *rad {
                                let s = &mut cell.balls[b];
                                s.count += 1.0;
                                s.s1 += phi;
                                s.s2 += outer;
                            }
                        }
                        let s = &mut cell.balls[nb - 1];
                        s.count += 1.0;
                        s.s1 += phi;
                        s.s2 += outer;
                        total += phi;
                        if r > r_det {
                            cell.outside += 1;
                            acc[l].outliers.push(Outlier { cell: k, path: p, radius: r, coords: phi, point: inc });
                        }
                    }
                    if l == finest {
                        ds1 += total;
                        ds2 += total * total.transpose();
                    }
                }
            }
            (acc, ds1, ds2)
        })
        .collect();

    let mut accs: Vec<LevelAcc<S::Point>> = grids.iter().map(empty_level).collect();
    let mut ds1 = LieAlgebraVector::zeros();
    let mut ds2 = Mat::zeros();
    for (part, p1, p2) in partial {
        for (a, b) in accs.iter_mut().zip(part) {
            for (ca, cb) in a.cells.iter_mut().zip(&b.cells) {
                ca.outside += cb.outside;
                for (x, y) in ca.balls.iter_mut().zip(&cb.balls) {
                    x.add(y);
                }
            }
            a.outliers.extend(b.outliers);
        }
        ds1 += p1;
        ds2 += p2;
    }

    let mf = m as f64;
    let mut warnings = Vec::new();
    let mut levels = Vec::with_capacity(grids.len());
    for (g, acc) in grids.into_iter().zip(accs) {
        let means: Vec<LieAlgebraVector> = acc.cells.iter().map(|c| c.balls[nb - 1].s1 / mf).collect();
        let mean_coords: Vec<LieAlgebraVector> = means.iter().map(|v| space.coordinates(&space.exp_point(v))).collect();
        let mut b = GroupElement::identity();
        let mut b_path = vec![b];
        for (k, v) in means.iter().enumerate() {
            if v.norm() >= r_in {
                warnings.push(format!("mean of cell ({}, {}] is outside the chart", g[k], g[k + 1]));
            }
            b = b * space.exp_group(v);
            b_path.push(space.group().renormalize(&b));
        }
        let jump_probability = acc.cells.iter().map(|c| c.outside as f64 / mf).collect();
        levels.push(Level { grid: g, cells: acc.cells, outliers: acc.outliers, means, mean_coords, b_path, jump_probability });
    }

    let atoms = detect(space, ens, &levels, cfg, r_det)?;
    let mut est = EmpiricalTriple {
        space: space.clone(),
        config: cfg.clone(),
        n_paths: m,
        radii,
        detection_radius: r_det,
        levels,
        atoms,
        cov_increments: Vec::new(),
        cov_by_radius: Vec::new(),
        cov_nonlinear: false,
        drift_components: PiecewiseLinear::constant(LieAlgebraVector::zeros()),
        drift_endpoint_stderr: LieAlgebraVector::zeros(),
        moduli: Vec::new(),
        warnings,
    };
    est.extract_covariance();
    est.extract_drift()?;
    let mean = ds1 / mf;
    for j in 0..d {
        let var = ((ds2[(j, j)] - mf * mean[j] * mean[j]) / (mf - 1.0).max(1.0)).max(0.0);
        est.drift_endpoint_stderr[j] = (var / mf).sqrt();
    }
    est.moduli = est.conditions_ab_diagnostics(&[0.1, 0.05, 0.02, 0.01]);
    Ok(est)
}

/// Index of the cell `(g[k-1], g[k]]` containing `t`, as `k - 1`.
fn cell_of(grid: &[f64], t: f64) -> Option<usize> {
    let k = grid.partition_point(|&x| x < t - TIME_TOL);
    (k >= 1 && k < grid.len()).then(|| k - 1)
}

fn detect<S: Space, E: Ensemble<S::Point>>(
    space: &S,
    ens: &E,
    levels: &[Level<S::Point>],
    cfg: &EstimateConfig,
    r_det: f64,
) -> Result<Vec<DetectedAtom<S::Point>>> {
    let fine = levels.last().unwrap();
    let mut intervals: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for (k, p) in fine.jump_probability.iter().enumerate() {
        if *p < cfg.threshold {
            continue;
        }
        let t = fine.grid[k + 1];
        let mut probs = Vec::with_capacity(levels.len());
        let persistent = levels.iter().all(|l| {
            let c = cell_of(&l.grid, t);
            let q = c.map(|c| l.jump_probability[c]).unwrap_or(0.0);
            probs.push(q);
            q >= cfg.threshold
        });
        if !persistent {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if (last.1 - fine.grid[k]).abs() <= TIME_TOL => last.1 = t,
            _ => intervals.push((fine.grid[k], t, probs)),
        }
    }
    if intervals.is_empty() {
        return Ok(Vec::new());
    }
    let path_grid = ens.grid();
    let m = ens.len();
    let mut out = Vec::new();
    for (a, b, probs) in intervals {
        let lo = path_grid.partition_point(|&x| x < a - TIME_TOL);
        let hi = path_grid.partition_point(|&x| x <= b + TIME_TOL);
        let pts: Vec<f64> = path_grid[lo..hi].to_vec();
        let rows: Vec<Vec<S::Point>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let v = ens.values_on(i, &pts);
                v.windows(2).map(|w| space.increment(&w[0], &w[1])).collect()
            })
            .collect();
        let nsub = pts.len() - 1;
        let mut best = 0;
        let mut best_count = 0;
        for s in 0..nsub {
            let c = rows.iter().filter(|r| space.radius(&r[s]) > r_det).count();
            if c > best_count {
                best = s;
                best_count = c;
            }
        }
        let incs: Vec<S::Point> = rows.into_iter().map(|mut r| r.swap_remove(best)).collect();
        let mut coords = LieAlgebraVector::zeros();
        for x in &incs {
            coords += space.coordinates(x);
        }
        let law = cluster_law(space, &incs, r_det, cfg.cluster_fraction * space.r_in());
        let mean_coords = law.iter().fold(LieAlgebraVector::zeros(), |acc, (p, w)| acc + space.coordinates(p) * *w);
        out.push(DetectedAtom { time: pts[best + 1], probabilities: probs, mean: space.exp_group(&mean_coords), law, mean_coords });
    }
    Ok(out)
}

/// Compresses an empirical law: mass within `r_small` of the origin goes to the
/// origin, the rest is merged greedily into clusters of radius `r_cluster`.
fn cluster_law<S: Space>(space: &S, points: &[S::Point], r_small: f64, r_cluster: f64) -> Vec<(S::Point, f64)> {
    let w = 1.0 / points.len() as f64;
    let mut origin_mass = 0.0;
    let mut reps: Vec<(S::Point, Vec<usize>)> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if space.radius(p) <= r_small {
            origin_mass += w;
            continue;
        }
        match reps.iter_mut().find(|(r, _)| space.radius(&space.increment(r, p)) <= r_cluster) {
            Some((_, members)) => members.push(i),
            None => reps.push((p.clone(), vec![i])),
        }
    }
    let mut out = Vec::with_capacity(reps.len() + 1);
    if origin_mass > 0.0 {
        out.push((space.origin(), origin_mass));
    }
    for (rep, members) in reps {
        let charts: Option<Vec<LieAlgebraVector>> = members.iter().map(|i| space.chart(&points[*i])).collect();
        let centre = match charts {
            Some(c) => space.exp_point(&(c.iter().sum::<LieAlgebraVector>() / c.len() as f64)),
            None => rep,
        };
        out.push((centre, members.len() as f64 * w));
    }
    out
}

impl<S: Space> EmpiricalTriple<S> {
    pub fn finest(&self) -> &Level<S::Point> {
        self.levels.last().unwrap()
    }

    fn atom_cells(&self, level: &Level<S::Point>) -> Vec<usize> {
        self.atoms.iter().filter_map(|a| cell_of(&level.grid, a.time)).collect()
    }

    /// `η_n(t, f)` on level `level` with its Monte-Carlo standard error.
    ///
    /// `f` must vanish on the ball of radius `r_in`; otherwise [`Error::FRejected`].
    pub fn eta_n_with_stderr(&self, level: usize, t: f64, f: &dyn Fn(&S::Point) -> f64) -> Result<(f64, f64)> {
        let r_in = self.space.r_in();
        for p in self.space.probe_ball(r_in) {
            let v = f(&p);
            if v.abs() > 1e-12 {
                return Err(Error::FRejected(format!(
                    "f = {v} at radius {:.3}, inside the ball of radius {r_in}",
                    self.space.radius(&p)
                )));
            }
        }
        let l = &self.levels[level];
        let last = l.grid.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
        let mut per_path = vec![0.0; self.n_paths];
        for o in l.outliers.iter().filter(|o| o.cell < last) {
            per_path[o.path] += f(&o.point);
        }
        Ok(crate::stats::mean_stderr(&per_path))
    }

    pub fn eta_n(&self, level: usize, t: f64, f: &dyn Fn(&S::Point) -> f64) -> Result<f64> {
        self.eta_n_with_stderr(level, t, f).map(|(m, _)| m)
    }

    /// Finest-level `η_n(t, f)`.
    pub fn eta(&self, t: f64, f: &dyn Fn(&S::Point) -> f64) -> Result<(f64, f64)> {
        self.eta_n_with_stderr(self.levels.len() - 1, t, f)
    }

    fn cell_cov(&self, l: &Level<S::Point>, k: usize, ball: usize) -> Mat {
        let s = &l.cells[k].balls[ball];
        let m = l.mean_coords[k];
        (s.s2 - m * s.s1.transpose() - s.s1 * m.transpose() + m * m.transpose() * s.count) / self.n_paths as f64
    }

    /// `A^n(t, B)` for `B` the ball of index `ball` (`None` for the whole space).
    pub fn a_n(&self, level: usize, t: f64, ball: Option<usize>) -> Mat {
        let l = &self.levels[level];
        let b = ball.unwrap_or(self.radii.len());
        let last = l.grid.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
        (0..last).map(|k| self.cell_cov(l, k, b)).fold(Mat::zeros(), |a, c| a + c)
    }

    pub fn q_n(&self, level: usize, t: f64, ball: Option<usize>) -> f64 {
        self.a_n(level, t, ball).trace()
    }

    /// Cell covariance over a ball, centred on the mean of the increments in that ball.
    fn cell_cov_local(&self, l: &Level<S::Point>, k: usize, ball: usize) -> Mat {
        let s = &l.cells[k].balls[ball];
        if s.count == 0.0 {
            return Mat::zeros();
        }
        let m = s.s1 / s.count;
        (s.s2 - m * s.s1.transpose()) / self.n_paths as f64
    }

    fn extract_covariance(&mut self) {
        let l = self.finest();
        let atom_cells = self.atom_cells(l);
        let nr = self.radii.len();
        let mf = self.n_paths as f64;
        let mut small_jumps = vec![vec![Mat::zeros(); nr]; l.cells.len()];
        for o in &l.outliers {
            for (b, r) in self.radii.iter().enumerate() {
                if o.radius <= *r {
                    small_jumps[o.cell][b] += o.coords * o.coords.transpose() / mf;
                }
            }
        }
        let xs = &self.radii;
        let xm = xs.iter().sum::<f64>() / nr as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let mut incs = Vec::with_capacity(l.cells.len());
        let mut totals = vec![0.0; nr];
        for k in 0..l.cells.len() {
            if atom_cells.contains(&k) {
                incs.push(Mat::zeros());
                continue;
            }
            let ys: Vec<Mat> = (0..nr).map(|b| self.cell_cov_local(l, k, b) - small_jumps[k][b]).collect();
            for (t, y) in totals.iter_mut().zip(&ys) {
                *t += y.trace();
            }
            let ym = ys.iter().fold(Mat::zeros(), |a, y| a + y) / nr as f64;
            let slope = xs.iter().zip(&ys).fold(Mat::zeros(), |a, (x, y)| a + (y - ym) * (x - xm)) / sxx;
            let inc = ym - slope * xm;
            incs.push((inc + inc.transpose()) * 0.5);
        }
        let ym = totals.iter().sum::<f64>() / nr as f64;
        let slope = xs.iter().zip(&totals).map(|(x, y)| (y - ym) * (x - xm)).sum::<f64>() / sxx;
        let resid = xs.iter().zip(&totals).map(|(x, y)| (y - ym - slope * (x - xm)).abs()).fold(0.0, f64::max);
        self.cov_nonlinear = resid > 0.05 * ym.abs().max(1e-12);
        if self.cov_nonlinear {
            self.warnings.push("trace of A(T, U) is not linear in the ball radius".into());
        }
        self.cov_by_radius = xs.iter().zip(&totals).map(|(r, t)| RadiusTrace { radius: *r, trace: *t }).collect();
        self.cov_increments = incs;
    }

    /// `A_est(t)`, no clipping.
    pub fn a_est(&self, t: f64) -> Mat {
        let g = &self.finest().grid;
        let last = g.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
        self.cov_increments[..last.min(self.cov_increments.len())].iter().fold(Mat::zeros(), |a, c| a + c)
    }

    /// `A_est` on the coarsest grid with every increment clipped to the PSD cone.
    pub fn cov_function(&self) -> CovMatrixFunction {
        let coarse = &self.levels[0].grid;
        let fine = &self.finest().grid;
        let mut vals = vec![Mat::zeros()];
        let mut acc = Mat::zeros();
        let mut k = 0;
        for t in &coarse[1..] {
            let mut inc = Mat::zeros();
            while k < self.cov_increments.len() && fine[k + 1] <= t + TIME_TOL {
                inc += self.cov_increments[k];
                k += 1;
            }
            acc += psd_clip(&inc);
            vals.push(acc);
        }
        PiecewiseLinear::new(coarse.clone(), vals).expect("level grid is increasing")
    }

    fn extract_drift(&mut self) -> Result<()> {
        let l = self.finest();
        let atom_cells = self.atom_cells(l);
        let n = l.means.len();
        let mut incs = l.means.clone();
        for &k in &atom_cells {
            let neighbours: Vec<usize> =
                [k.wrapping_sub(1), k + 1].into_iter().filter(|j| *j < n && !atom_cells.contains(j)).collect();
            let dt = l.grid[k + 1] - l.grid[k];
            incs[k] = if neighbours.is_empty() {
                LieAlgebraVector::zeros()
            } else {
                neighbours.iter().fold(LieAlgebraVector::zeros(), |a, j| a + l.means[*j] / (l.grid[j + 1] - l.grid[*j]))
                    * (dt / neighbours.len() as f64)
            };
        }
        self.drift_components = PiecewiseLinear::from_increments(l.grid.clone(), LieAlgebraVector::zeros(), &incs)?;
        Ok(())
    }

    /// Drift path: the continuous components with the detected jumps `h_u`.
    pub fn drift_path(&self) -> DriftPath {
        DriftPath { continuous: self.drift_components.clone(), jumps: self.atoms.iter().map(|a| (a.time, a.mean)).collect() }
    }

    /// Moduli of continuity of `q^n(·, G)` and `b^n` over windows avoiding detected atoms.
    pub fn conditions_ab_diagnostics(&self, deltas: &[f64]) -> Vec<ModulusRow> {
        let l = self.finest();
        let desc = self.space.group();
        let mut q = vec![0.0];
        for k in 0..l.cells.len() {
            q.push(q[k] + self.cell_cov(l, k, self.radii.len()).trace());
        }
        let atom_times: Vec<f64> = self.atoms.iter().map(|a| a.time).collect();
        let g = &l.grid;
        deltas
            .iter()
            .map(|&delta| {
                let mut mq: f64 = 0.0;
                let mut mb: f64 = 0.0;
                for i in 0..g.len() {
                    for j in i + 1..g.len() {
                        if g[j] - g[i] > delta + TIME_TOL {
                            break;
                        }
                        if atom_times.iter().any(|u| *u > g[i] + TIME_TOL && *u <= g[j] + TIME_TOL) {
                            break;
                        }
                        mq = mq.max(q[j] - q[i]);
                        mb = mb.max(desc.distance(&l.b_path[i], &l.b_path[j]));
                    }
                }
                ModulusRow { delta, q: mq, b: mb }
            })
            .collect()
    }

    /// Continuous Lévy measure function as one piece per coarsest cell, atoms excluded.
    pub fn continuous_jump_cells(&self) -> Vec<(f64, f64, Vec<(S::Point, f64)>)> {
        let l = &self.levels[0];
        let atom_cells = self.atom_cells(l);
        let mut buckets: Vec<Vec<S::Point>> = vec![Vec::new(); l.cells.len()];
        for o in &l.outliers {
            if !atom_cells.contains(&o.cell) {
                buckets[o.cell].push(o.point.clone());
            }
        }
        let rc = self.config.cluster_fraction * self.space.r_in();
        let mf = self.n_paths as f64;
        buckets
            .into_iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(k, pts)| {
                let mass = pts.len() as f64 / mf;
                let law = cluster_law(&self.space, &pts, 0.0, rc);
                (l.grid[k], l.grid[k + 1], law.into_iter().map(|(p, w)| (p, w * mass)).collect())
            })
            .collect()
    }
}

impl EmpiricalTriple<GroupDescriptor> {
    pub fn atom_measure(&self, index: usize) -> DiscreteMeasure {
        DiscreteMeasure::new(self.atoms[index].law.clone())
    }

    /// The estimate as an extended Lévy triple.
    pub fn to_triple(&self) -> Result<ExtendedLevyTriple> {
        let desc = &self.space;
        let mut pieces = Vec::new();
        for (a, b, measure) in self.continuous_jump_cells() {
            let mass: f64 = measure.iter().map(|(_, w)| w).sum();
            let law = DiscreteMeasure::new(measure.into_iter().map(|(g, w)| (g, w / mass)).collect());
            let law = SpatialLaw::discrete(desc, normalized(law))?;
            pieces.push(LevyPiece { start: a, end: b, rate: mass / (b - a), law: std::sync::Arc::new(law) });
        }
        let atoms = (0..self.atoms.len()).map(|i| FixedJump { time: self.atoms[i].time, law: self.atom_measure(i) }).collect();
        Ok(ExtendedLevyTriple::with_consistent_drift(
            desc.clone(),
            self.drift_components.clone(),
            self.cov_function(),
            LevyMeasureC { pieces },
            atoms,
        ))
    }
}

fn normalized(m: DiscreteMeasure) -> DiscreteMeasure {
    let t = m.total_mass();
    DiscreteMeasure::new(m.atoms().iter().map(|(g, w)| (*g, w / t)).collect())
}

/// Estimator entry point for group-valued paths.
pub fn estimate_group(source: &dyn PathSource, cfg: &EstimateConfig) -> Result<EmpiricalTriple<GroupDescriptor>> {
    estimate(source.group(), &GroupPaths(source), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{PathSet, SamplePath, SimConfig, Simulator};
    use crate::triple::FixedJump;
    use std::sync::Arc;

    fn rd1() -> GroupDescriptor {
        GroupDescriptor::rd(1).unwrap()
    }

    fn translation(g: &GroupDescriptor, x: f64) -> GroupElement {
        g.exp(&LieAlgebraVector::new(x, 0.0, 0.0))
    }

    #[test]
    fn level_grids_are_snapped_and_contain_candidates() {
        let pg: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
        let g = level_grid(&pg, 2.5e-3, &[0.5005]);
        assert!(g.iter().all(|t| pg.iter().any(|x| (x - t).abs() < 1e-12)));
        assert!(g.iter().any(|t| (t - 0.5005).abs() < 1e-9) || g.iter().any(|t| (t - 0.5).abs() < 1e-9));
        assert!(g.windows(2).all(|w| w[1] - w[0] <= 3e-3 + 1e-12));
    }

    #[test]
    fn constant_paths_give_dirac_laws() {
        let g = GroupDescriptor::so3();
        let grid = Arc::new(vec![0.0, 0.5, 1.0]);
        let set = PathSet { group: g.clone(), paths: vec![SamplePath::constant(GroupElement::identity(), grid); 5] };
        let laws = empirical_increment_measures(&set, &[0.0, 0.5, 1.0]);
        assert_eq!(laws.len(), 2);
        for l in laws {
            assert!((l.identity_mass() - 1.0).abs() < 1e-12);
        }
        let est = estimate_group(&set, &EstimateConfig { level_meshes: vec![0.5], ..Default::default() }).unwrap();
        assert!(est.a_n(0, 1.0, None).amax() == 0.0);
        assert!(est.atoms.is_empty());
    }

    #[test]
    fn compound_poisson_cell_probability() {
        let g = rd1();
        let law = SpatialLaw::discrete(&g, DiscreteMeasure::dirac(translation(&g, 1.0))).unwrap();
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.levy_c = LevyMeasureC { pieces: vec![LevyPiece { start: 0.0, end: 1.0, rate: 1.0, law: Arc::new(law) }] };
        let sim = Simulator::new(&t, &SimConfig::new(100, 1.0, 100_000, 3)).unwrap();
        let laws = empirical_increment_measures(&sim, &[0.0, 0.01]);
        let p: f64 = laws[0].atoms().iter().filter(|(x, _)| g.chart_radius(x) > 0.5).map(|(_, w)| w).sum();
        let oracle = 1.0 - (-0.01f64).exp();
        let se = (oracle * (1.0 - oracle) / 1e5).sqrt();
        assert!((p - oracle).abs() <= 3.0 * se, "{p} vs {oracle}");
    }

    #[test]
    fn brownian_rd1_covariance() {
        let g = rd1();
        let mut t = ExtendedLevyTriple::zero(g.clone());
        let mut a = Mat::zeros();
        a[(0, 0)] = 1.0;
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), a]).unwrap();
        let sim = Simulator::new(&t, &SimConfig::new(1000, 1.0, 50_000, 8)).unwrap();
        let est = estimate_group(&sim, &EstimateConfig { level_meshes: vec![1e-2, 5e-3, 1e-3], ..Default::default() }).unwrap();
        let q = est.a_n(2, 1.0, None)[(0, 0)];
        // sum of 1000 per-cell variances, each with relative error sqrt(2/M)
        let se = (2.0f64 / 50_000.0).sqrt();
        assert!((q - 1.0).abs() <= 3.0 * se, "{q}");
        assert!(est.atoms.is_empty());
        assert!((est.q_n(2, 1.0, None) - est.a_n(2, 1.0, None).trace()).abs() == 0.0);
        let ae = est.a_est(1.0)[(0, 0)];
        assert!((ae - 1.0).abs() < 0.02, "{ae}");
        assert!(est.moduli.windows(2).all(|w| w[1].q <= w[0].q));
    }

    #[test]
    fn eta_counts_jumps_and_rejects_near_identity() {
        let g = rd1();
        let law = SpatialLaw::discrete(&g, DiscreteMeasure::dirac(translation(&g, 1.5))).unwrap();
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.levy_c = LevyMeasureC { pieces: vec![LevyPiece { start: 0.0, end: 1.0, rate: 2.0, law: Arc::new(law) }] };
        let sim = Simulator::new(&t, &SimConfig::new(400, 1.0, 20_000, 1)).unwrap();
        let est = estimate_group(&sim, &EstimateConfig::default()).unwrap();
        let outside = |x: &GroupElement| if g.chart_radius(x) > 1.2 { 1.0 } else { 0.0 };
        let (e, se) = est.eta(1.0, &outside).unwrap();
        // cell increments with two jumps land at 3.0, still outside
        assert!((e - 2.0).abs() <= 3.0 * se + 0.02, "{e} ± {se}");
        let bad = |_: &GroupElement| 1.0;
        assert!(matches!(est.eta(1.0, &bad), Err(Error::FRejected(_))));
        // additivity in time
        let a = est.eta(0.4, &outside).unwrap().0;
        let b = est.eta(1.0, &outside).unwrap().0;
        assert!(a <= b);
        assert!(est.atoms.is_empty());
        // pure jumps: no Gaussian part
        let ae = est.a_est(1.0)[(0, 0)];
        assert!(ae.abs() < 1e-3, "{ae}");
    }

    #[test]
    fn atom_detection_and_drift_jump() {
        let g = rd1();
        let y = translation(&g, 1.0);
        let z = translation(&g, -0.6);
        let nu = DiscreteMeasure::new(vec![(GroupElement::identity(), 0.5), (y, 0.3), (z, 0.2)]);
        let drift = PiecewiseLinear::new(
            vec![0.0, 2.0],
            vec![LieAlgebraVector::zeros(), LieAlgebraVector::new(0.4, 0.0, 0.0)],
        )
        .unwrap();
        let mut a = Mat::zeros();
        a[(0, 0)] = 0.05;
        let cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), a]).unwrap();
        let t = ExtendedLevyTriple::with_consistent_drift(
            g.clone(),
            drift,
            cov,
            LevyMeasureC::zero(),
            vec![FixedJump { time: 0.5, law: nu.clone() }, FixedJump { time: 1.5, law: nu.clone() }],
        );
        let sim = Simulator::new(&t, &SimConfig::new(1000, 2.0, 20_000, 6)).unwrap();
        let est = estimate_group(&sim, &EstimateConfig::default()).unwrap();
        assert_eq!(est.atoms.len(), 2);
        for (a, u) in est.atoms.iter().zip([0.5, 1.5]) {
            assert!((a.time - u).abs() < 1e-9);
            let mut mass = [0.0; 3];
            for (x, w) in &a.law {
                let v = x.0[(0, 1)];
                let i = if v.abs() < 0.3 { 0 } else if v > 0.0 { 1 } else { 2 };
                mass[i] += w;
            }
            let tv = 0.5 * ((mass[0] - 0.5).abs() + (mass[1] - 0.3).abs() + (mass[2] - 0.2).abs());
            assert!(tv <= 0.05, "tv {tv}");
        }
        let b_true = t.drift.value_at(&g, 2.0);
        let b_est = est.drift_path().value_at(&g, 2.0);
        assert!(g.distance(&b_true, &b_est) < 0.05);
        let tr = est.to_triple().unwrap();
        assert!(tr.validate().is_empty(), "{}", tr.validate());
    }

    #[test]
    fn stochastically_continuous_has_no_atoms() {
        let g = GroupDescriptor::so3();
        let mut t = ExtendedLevyTriple::zero(g.clone());
        t.cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::identity() * 0.2]).unwrap();
        let law = SpatialLaw::wrapped_gaussian_so3(&g, 0.6).unwrap();
        t.levy_c = LevyMeasureC { pieces: vec![LevyPiece { start: 0.0, end: 1.0, rate: 3.0, law: Arc::new(law) }] };
        let sim = Simulator::new(&t, &SimConfig::new(400, 1.0, 20_000, 21)).unwrap();
        let est = estimate_group(&sim, &EstimateConfig::default()).unwrap();
        assert!(est.atoms.is_empty());
        let q = est.q_n(2, 1.0, Some(0));
        assert!(q > 0.5, "{q}");
    }
}
