//! Monte-Carlo checks of the representing martingale property.
//!
//! Three discretized functionals are provided: the form on `x` with `z = x b^{-1}`
//! and derivatives conjugated by `Ad(b)` ([`compute_mtf`]), the finite-variation
//! form acting on `x` directly ([`compute_mtf_finite_variation`]) and the
//! quadruple form on an arbitrary path ([`compute_quadruple_m`]). All integrals
//! are left-endpoint sums on the path grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat};
use crate::measure::DiscreteMeasure;
use crate::simulate::{EventKind, PathSource, SamplePath};
use crate::stats::{mean_stderr_by, total_variation, z_score};
use crate::testfn::{Frame, TestFunction};
use crate::triple::{grid_index, ExtendedLevyTriple, Quadruple, TIME_TOL};

#[derive(Clone, Debug)]
struct CellTerms {
    drift: LieAlgebraVector,
    cov: Mat,
    /// `Ad(b_k)` for the conjugated-derivative form.
    ad: Option<Mat>,
    /// `(weight, y, coordinate)`: contributes `w [f(z y) − f(z) − coordinate · ∇f(z)]`.
    jumps: Vec<(f64, Mat, LieAlgebraVector)>,
}

#[derive(Clone, Debug)]
struct AtomTerms {
    index: usize,
    /// `(weight, y)`: contributes `w [f(z_{u−} y) − f(z_{u−})]`.
    atoms: Vec<(f64, Mat)>,
}

/// A discretized martingale functional on a fixed grid.
#[derive(Clone, Debug)]
pub struct MtfPlan {
    desc: GroupDescriptor,
    grid: Vec<f64>,
    cells: Vec<CellTerms>,
    atoms: Vec<AtomTerms>,
    /// Right multipliers `b_{t_k}^{-1}` and `b_{t_k−}^{-1}` turning `x` into `z`.
    shift: Option<(Vec<Mat>, Vec<Mat>)>,
    max_ad: f64,
}

/// Values of the functionals on the grid, one row per test function.
#[derive(Clone, Debug)]
pub struct MtfSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl MtfPlan {
    /// Form on `x` with `z_t = x_t b_t^{-1}` and `Ad(b)`-conjugated derivatives.
    pub fn conjugated(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<Self> {
        check_triple(triple, grid)?;
        let desc = &triple.group;
        let track = triple.drift.track(desc, grid)?;
        let n = grid.len();
        let mut cells = Vec::with_capacity(n - 1);
        let mut max_ad: f64 = 0.0;
        for k in 0..n - 1 {
            let b = track.right[k];
            let bi = desc.inverse(&b);
            let ad = desc.adjoint(&b);
            max_ad = max_ad.max(ad.norm());
            let mut jumps = Vec::new();
            for p in &triple.levy_c.pieces {
                let m = p.mass_between(grid[k], grid[k + 1]);
                if m <= 0.0 {
                    continue;
                }
                for (x, w) in p.law.quadrature().atoms() {
                    jumps.push((m * w, b.0 * x.0 * bi.0, desc.coordinates(x)));
                }
            }
            let cov = triple.cov.eval(grid[k + 1]) - triple.cov.eval(grid[k]);
            cells.push(CellTerms { drift: LieAlgebraVector::zeros(), cov, ad: Some(ad), jumps });
        }
        let mut atoms = Vec::new();
        for a in &triple.atoms {
            let Some(index) = grid_index(grid, a.time) else { continue };
            let bl = track.left[index];
            let h = triple
                .drift
                .jumps
                .iter()
                .find(|(u, _)| (u - a.time).abs() <= TIME_TOL)
                .map(|(_, h)| *h)
                .unwrap_or_else(GroupElement::identity);
            let right = desc.inverse(&h).0 * desc.inverse(&bl).0;
            atoms.push(AtomTerms { index, atoms: a.law.atoms().iter().map(|(x, w)| (*w, bl.0 * x.0 * right)).collect() });
        }
        atoms.sort_by_key(|a| a.index);
        let shift = (
            track.right.iter().map(|b| desc.inverse(b).0).collect(),
            track.left.iter().map(|b| desc.inverse(b).0).collect(),
        );
        Ok(MtfPlan { desc: desc.clone(), grid: grid.to_vec(), cells, atoms, shift: Some(shift), max_ad })
    }

    /// Quadruple form `(b, A, η, ν)` on the path itself.
    pub fn quadruple(quad: &Quadruple) -> Result<Self> {
        if !quad.validate().is_empty() {
            return Err(Error::InvalidTriple(quad.validate().to_string()));
        }
        let desc = &quad.group;
        let mut cells = Vec::with_capacity(quad.drift.len());
        for k in 0..quad.drift.len() {
            let mut jumps = Vec::new();
            for part in &quad.jumps[k] {
                let ci = desc.inverse(&part.conj);
                for (x, w) in part.law.quadrature().atoms() {
                    let y = GroupElement(part.conj.0 * x.0 * ci.0);
                    jumps.push((part.mass * w, y.0, desc.coordinates(&y)));
                }
            }
            cells.push(CellTerms { drift: quad.drift[k], cov: quad.cov[k], ad: None, jumps });
        }
        let mut atoms: Vec<AtomTerms> = quad
            .fixed
            .iter()
            .map(|a| AtomTerms { index: a.index, atoms: a.law.atoms().iter().map(|(x, w)| (*w, x.0)).collect() })
            .collect();
        atoms.sort_by_key(|a| a.index);
        Ok(MtfPlan { desc: desc.clone(), grid: quad.grid.clone(), cells, atoms, shift: None, max_ad: 1.0 })
    }

    /// Finite-variation form `(b^c, A, η^c, ν)` acting on `x`.
    pub fn finite_variation(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<Self> {
        check_triple(triple, grid)?;
        Self::quadruple(&Quadruple::finite_variation(triple, grid)?)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn group(&self) -> &GroupDescriptor {
        &self.desc
    }

    /// Path values on the grid: after all events at `t_k`, and before a fixed jump at `t_k`.
    fn grid_values(&self, path: &SamplePath) -> Result<(Vec<GroupElement>, Vec<GroupElement>)> {
        let g = &self.grid;
        if path.grid.len() != g.len() || path.grid.iter().zip(g).any(|(a, b)| (a - b).abs() > TIME_TOL) {
            return Err(Error::GridMismatch(format!(
                "path grid ({} points) differs from the functional's grid ({} points)",
                path.grid.len(),
                g.len()
            )));
        }
        let desc = &self.desc;
        let n = g.len();
        let mut right = Vec::with_capacity(n);
        let mut left = Vec::with_capacity(n);
        let mut p = crate::group::RenormalizingProduct::new(desc, path.origin);
        let mut i = 0;
        let ev = &path.events;
        for (k, t) in g.iter().enumerate() {
            let mut l = None;
            while i < ev.len() && ev[i].time <= t + TIME_TOL {
                if ev[i].kind == EventKind::FixedJump {
                    if (ev[i].time - t).abs() > TIME_TOL || !self.atoms.iter().any(|a| a.index == k) {
                        return Err(Error::GridMismatch(format!("fixed jump at {} is not a declared atom", ev[i].time)));
                    }
                    l = Some(p.value());
                }
                p.push(&ev[i].increment);
                i += 1;
            }
            let r = p.value();
            left.push(l.unwrap_or(r));
            right.push(r);
        }
        Ok((right, left))
    }

    /// Evaluates every test function's functional on every grid point.
    pub fn evaluate(&self, path: &SamplePath, bank: &[TestFunction]) -> Result<MtfSeries> {
        let (right, left) = self.grid_values(path)?;
        let (zr, zl): (Vec<Mat>, Vec<Mat>) = match &self.shift {
            Some((ri, li)) => (
                right.iter().zip(ri).map(|(x, b)| x.0 * b).collect(),
                left.iter().zip(li).map(|(x, b)| x.0 * b).collect(),
            ),
            None => (right.iter().map(|x| x.0).collect(), left.iter().map(|x| x.0).collect()),
        };
        let n = self.grid.len();
        let nf = bank.len();
        let mut values = vec![vec![0.0; n]; nf];
        let mut acc = vec![0.0; nf];
        let mut atom_iter = self.atoms.iter().peekable();
        for k in 0..n {
            if let Some(a) = atom_iter.next_if(|a| a.index == k) {
                let z = zl[k];
                for (i, f) in bank.iter().enumerate() {
                    let f0 = f.value(&z);
                    let s: f64 = a.atoms.iter().map(|(w, y)| w * (f.value(&(z * y)) - f0)).sum();
                    acc[i] += s;
                }
            }
            for (i, f) in bank.iter().enumerate() {
                values[i][k] = f.value(&zr[k]) - acc[i];
            }
            if k + 1 == n {
                break;
            }
            let cell = &self.cells[k];
            let z = zr[k];
            let frame = Frame::group(&self.desc, &GroupElement(z));
            let ys: Vec<Mat> = cell.jumps.iter().map(|(_, y, _)| z * y).collect();
            for (i, f) in bank.iter().enumerate() {
                let jet = f.jet(&frame);
                let (grad, hess) = match &cell.ad {
                    Some(ad) => (ad.transpose() * jet.grad, ad.transpose() * jet.hess * ad),
                    None => (jet.grad, jet.hess),
                };
                let mut s = grad.dot(&cell.drift) + 0.5 * hess.component_mul(&cell.cov).sum();
                for ((w, _, c), y) in cell.jumps.iter().zip(&ys) {
                    s += w * (f.value(y) - jet.value - c.dot(&grad));
                }
                acc[i] += s;
            }
        }
        Ok(MtfSeries { times: self.grid.clone(), values })
    }

    /// Upper bound on `sup_t≤grid[k] |M_tf|` from sup-norms of `f` and its derivatives.
    pub fn analytic_bound(&self, f: &TestFunction, k: usize) -> f64 {
        let desc = &self.desc;
        let p_norm = match desc.kind() {
            crate::group::GroupKind::So3 | crate::group::GroupKind::Circle => 1.0,
            _ => f.center.norm() + f.scale,
        };
        let [b0, b1, b2] = f.sup_bounds(desc, p_norm, 1.0, f64::INFINITY);
        let d = desc.dim() as f64;
        let ad = self.max_ad.max(1.0);
        let mut total = b0;
        for cell in &self.cells[..k.min(self.cells.len())] {
            let jump_mass: f64 = cell.jumps.iter().map(|(w, _, _)| w).sum();
            let coord = cell.jumps.iter().map(|(_, _, c)| c.norm()).fold(0.0, f64::max);
            total += b1 * ad * cell.drift.norm() * d.sqrt()
                + 0.5 * d * b2 * ad * ad * cell.cov.trace().abs()
                + jump_mass * (2.0 * b0 + coord * ad * d.sqrt() * b1);
        }
        let atoms = self.atoms.iter().filter(|a| a.index <= k).count() as f64;
        total + 2.0 * b0 * atoms
    }
}

fn check_triple(triple: &ExtendedLevyTriple, grid: &[f64]) -> Result<()> {
    triple.validate().into_result()?;
    if grid.len() < 2 {
        return Err(Error::GridMismatch("grid needs at least two points".into()));
    }
    Ok(())
}

/// `M_tf` on the path grid for the triple.
pub fn compute_mtf(path: &SamplePath, triple: &ExtendedLevyTriple, f: &TestFunction) -> Result<Vec<f64>> {
    let plan = MtfPlan::conjugated(triple, &path.grid)?;
    Ok(plan.evaluate(path, std::slice::from_ref(f))?.values.remove(0))
}

/// Finite-variation functional on `x`.
pub fn compute_mtf_finite_variation(path: &SamplePath, triple: &ExtendedLevyTriple, f: &TestFunction) -> Result<Vec<f64>> {
    let plan = MtfPlan::finite_variation(triple, &path.grid)?;
    Ok(plan.evaluate(path, std::slice::from_ref(f))?.values.remove(0))
}

/// Quadruple functional on the path `z`.
pub fn compute_quadruple_m(path: &SamplePath, quad: &Quadruple, f: &TestFunction) -> Result<Vec<f64>> {
    let plan = MtfPlan::quadruple(quad)?;
    Ok(plan.evaluate(path, std::slice::from_ref(f))?.values.remove(0))
}

/// Bounded functional of the path up to time `s`.
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioner {
    Constant,
    /// `φ_j(x_{λ s})`.
    Coordinate { j: usize, fraction: f64 },
    /// `min(‖φ(x_s)‖², 1)`.
    BoundedNorm,
}

impl Conditioner {
    pub fn id(&self) -> String {
        match self {
            Conditioner::Constant => "one".into(),
            Conditioner::Coordinate { j, fraction } if *fraction == 1.0 => format!("phi{}_s", j + 1),
            Conditioner::Coordinate { j, fraction } => format!("phi{}_{}s", j + 1, fraction),
            Conditioner::BoundedNorm => "normsq_s".into(),
        }
    }

    fn eval(&self, desc: &GroupDescriptor, grid: &[f64], values: &[GroupElement], s: f64) -> f64 {
        let at = |t: f64| {
            let k = grid.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
            values[k]
        };
        match self {
            Conditioner::Constant => 1.0,
            Conditioner::Coordinate { j, fraction } => desc.coordinates(&at(fraction * s))[*j],
            Conditioner::BoundedNorm => desc.coordinates(&at(s)).norm_squared().min(1.0),
        }
    }
}

/// Constant, two coordinates at `s`, a bounded norm and a coordinate at `s/2`.
pub fn default_conditioners(desc: &GroupDescriptor) -> Vec<Conditioner> {
    let last = desc.dim() - 1;
    vec![
        Conditioner::Constant,
        Conditioner::Coordinate { j: 0, fraction: 1.0 },
        Conditioner::Coordinate { j: last, fraction: 1.0 },
        Conditioner::BoundedNorm,
        Conditioner::Coordinate { j: 0, fraction: 0.5 },
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleEntry {
    pub f_id: String,
    pub s: f64,
    pub t: f64,
    pub h_id: String,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
    pub n: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleReport {
    pub entries: Vec<MartingaleEntry>,
    pub n_paths: usize,
    pub z_threshold: f64,
    pub required_pass_fraction: f64,
    pub pass_fraction: f64,
    pub max_abs_z: f64,
    pub pass: bool,
}

pub const Z_THRESHOLD: f64 = 4.0;
pub const REQUIRED_PASS_FRACTION: f64 = 0.95;

impl MartingaleReport {
    pub fn from_entries(entries: Vec<MartingaleEntry>, n_paths: usize) -> Self {
        let passed = entries.iter().filter(|e| e.pass).count();
        let pass_fraction = if entries.is_empty() { 1.0 } else { passed as f64 / entries.len() as f64 };
        let max_abs_z = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
        MartingaleReport {
            entries,
            n_paths,
            z_threshold: Z_THRESHOLD,
            required_pass_fraction: REQUIRED_PASS_FRACTION,
            pass_fraction,
            max_abs_z,
            pass: pass_fraction >= REQUIRED_PASS_FRACTION,
        }
    }

    /// Entries with `|z|` above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.entries.iter().filter(|e| e.z.abs() > threshold).count()
    }
}

pub(crate) fn entry(f_id: &str, s: f64, t: f64, h_id: &str, mean: f64, stderr: f64, n: usize) -> MartingaleEntry {
    let z = z_score(mean, stderr);
    MartingaleEntry {
        f_id: f_id.to_string(),
        s,
        t,
        h_id: h_id.to_string(),
        mean,
        stderr,
        z,
        n,
        pass: z.abs() <= Z_THRESHOLD,
    }
}

/// Tests `E[(M_tf − M_sf) h] = 0` for every test function, time pair and conditioner.
pub fn martingale_test(
    source: &dyn PathSource,
    triple: &ExtendedLevyTriple,
    bank: &[TestFunction],
    pairs: &[(f64, f64)],
    conditioners: &[Conditioner],
) -> Result<MartingaleReport> {
    let n = source.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no paths".into()));
    }
    let grid = source.path(0).grid.as_ref().clone();
    let plan = MtfPlan::conjugated(triple, &grid)?;
    let idx = |t: f64| grid.partition_point(|&x| x <= t + TIME_TOL).saturating_sub(1);
    let width = bank.len() * pairs.len() * conditioners.len();
    let desc = &triple.group;
    let (mean, se) = mean_stderr_by(n, width, |i| {
        let path = source.path(i);
        let series = plan.evaluate(&path, bank)?;
        let values = path.values_on(desc, &grid);
        let mut out = Vec::with_capacity(width);
        for row in &series.values {
            for &(s, t) in pairs {
                let dm = row[idx(t)] - row[idx(s)];
                for h in conditioners {
                    out.push(dm * h.eval(desc, &grid, &values, s));
                }
            }
        }
        Ok(out)
    })?;
    let mut entries = Vec::with_capacity(width);
    let mut c = 0;
    for f in bank {
        for &(s, t) in pairs {
            for h in conditioners {
                entries.push(entry(&f.id, s, t, &h.id(), mean[c], se[c], n));
                c += 1;
            }
        }
    }
    Ok(MartingaleReport::from_entries(entries, n))
}

/// Largest `|M_tf|` over paths and grid points, with the analytic bound at the last grid point.
pub fn max_abs_mtf(source: &dyn PathSource, triple: &ExtendedLevyTriple, f: &TestFunction) -> Result<(f64, f64)> {
    let grid = source.path(0).grid.as_ref().clone();
    let plan = MtfPlan::conjugated(triple, &grid)?;
    let mut worst: f64 = 0.0;
    for i in 0..source.len() {
        let s = plan.evaluate(&source.path(i), std::slice::from_ref(f))?;
        worst = s.values[0].iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok((worst, plan.analytic_bound(f, grid.len() - 1)))
}

#[derive(Clone, Debug, Serialize)]
pub struct JumpLawReport {
    pub time: f64,
    pub tv: f64,
    pub empirical: Vec<f64>,
    pub expected: Vec<f64>,
    pub n: usize,
}

/// Empirical law of `x_{u−}^{-1} x_u` binned to the nearest support point of `law` (or `e`).
pub fn fixed_jump_law(source: &dyn PathSource, u: f64, law: &DiscreteMeasure) -> Result<JumpLawReport> {
    let desc = source.group();
    let mut support: Vec<GroupElement> = law.atoms().iter().map(|(g, _)| *g).collect();
    let mut expected: Vec<f64> = law.atoms().iter().map(|(_, w)| *w).collect();
    if !support.iter().any(|g| g.is_identity()) {
        support.push(GroupElement::identity());
        expected.push(0.0);
    }
    let mut counts = vec![0usize; support.len()];
    let n = source.len();
    for i in 0..n {
        let p = source.path(i);
        let inc = desc.inverse(&p.left_value_at(desc, u)) * p.value_at(desc, u);
        let best = support
            .iter()
            .enumerate()
            .map(|(j, g)| (j, desc.distance(g, &inc)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap();
        counts[best] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
    Ok(JumpLawReport { time: u, tv: total_variation(&empirical, &expected), empirical, expected, n })
}
