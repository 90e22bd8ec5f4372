//! File formats: the TOML triple schema, path files (CSV and lossless JSON)
//! and JSON reports.
//!
//! A triple file looks like
//!
//! ```toml
//! [group]
//! name = "SO3"
//!
//! [drift]
//! grid = [0.0, 1.0]
//! components = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
//!
//! [cov]
//! grid = [0.0, 1.0]
//! matrices = [[[0,0,0],[0,0,0],[0,0,0]], [[0.2,0,0],[0,0.2,0],[0,0,0.1]]]
//!
//! [[levy.pieces]]
//! start = 0.0
//! end = 1.0
//! rate = 1.5
//! law = { kind = "discrete", support = [[1.0, 0.0, 0.0]], weights = [1.0] }
//!
//! [[atoms]]
//! time = 0.5
//! support = [[0.0, 0.0, 0.9]]
//! weights = [1.0]
//! ```
//!
//! Discrete supports are log coordinates; `matrices` (row-major 3×3) may be
//! given instead. Drift jumps are always the means of the fixed-jump laws.
//! A sphere triple adds a `[space]` section with `a`, orbit-based jump laws
//! and atoms.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, GroupKind, LieAlgebraVector, Mat};
use crate::homogeneous::{orbit_mixture, Sphere, XAtom, XLevyPiece, XPath, XTriple};
use crate::measure::{DiscreteMeasure, LawKind, SpatialLaw};
use crate::simulate::{Event, EventKind, SamplePath};
use crate::triple::{ExtendedLevyTriple, FixedJump, LevyMeasureC, LevyPiece, PiecewiseLinear};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TripleFile {
    pub group: GroupSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<CovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy: Option<LevySection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_cut: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub grid: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CovSection {
    pub grid: Vec<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevySection {
    pub pieces: Vec<PieceSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PieceSection {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
    pub law: LawSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSection {
    Discrete {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrices: Option<Vec<Vec<f64>>>,
        weights: Vec<f64>,
    },
    WrappedGaussianSo3 {
        sigma: f64,
    },
    GaussianRd {
        sigma: f64,
    },
    LaplaceRd {
        scale: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

/// Sphere `S² = SO(3)/SO(2)` with origin `e_z`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub name: String,
    #[serde(default = "default_k")]
    pub k: String,
    #[serde(default = "default_origin")]
    pub origin: Vec<f64>,
    /// `A(t) = a(t) I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<ScalarFnSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levy: Vec<OrbitPieceSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<OrbitAtomSection>,
}

fn default_k() -> String {
    "SO2".into()
}

fn default_origin() -> Vec<f64> {
    vec![0.0, 0.0, 1.0]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScalarFnSection {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// `orbits` lists `[colatitude, weight]` pairs of uniform orbit laws.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OrbitPieceSection {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
    pub orbits: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OrbitAtomSection {
    pub time: f64,
    #[serde(default)]
    pub origin_weight: f64,
    pub orbits: Vec<[f64; 2]>,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

pub fn parse_triple_file(text: &str) -> Result<TripleFile> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

fn vector(desc: &GroupDescriptor, v: &[f64], field: &str) -> Result<LieAlgebraVector> {
    if v.len() != desc.dim() {
        return Err(config_err(field, format!("expected {} entries, got {}", desc.dim(), v.len())));
    }
    let mut out = LieAlgebraVector::zeros();
    for (j, x) in v.iter().enumerate() {
        out[j] = *x;
    }
    Ok(out)
}

fn matrix9(v: &[f64], field: &str) -> Result<Mat> {
    if v.len() != 9 {
        return Err(config_err(field, format!("expected 9 row-major entries, got {}", v.len())));
    }
    Ok(Mat::from_row_slice(v))
}

fn support_measure(
    desc: &GroupDescriptor,
    support: &Option<Vec<Vec<f64>>>,
    matrices: &Option<Vec<Vec<f64>>>,
    weights: &[f64],
    field: &str,
) -> Result<DiscreteMeasure> {
    let points: Vec<GroupElement> = match (support, matrices) {
        (Some(s), None) => s
            .iter()
            .enumerate()
            .map(|(i, v)| vector(desc, v, &format!("{field}.support[{i}]")).map(|v| desc.exp(&v)))
            .collect::<Result<_>>()?,
        (None, Some(m)) => m
            .iter()
            .enumerate()
            .map(|(i, v)| matrix9(v, &format!("{field}.matrices[{i}]")).map(GroupElement))
            .collect::<Result<_>>()?,
        _ => return Err(config_err(field, "give exactly one of `support` or `matrices`")),
    };
    if points.len() != weights.len() {
        return Err(config_err(field, format!("{} support points but {} weights", points.len(), weights.len())));
    }
    Ok(DiscreteMeasure::new(points.into_iter().zip(weights.iter().copied()).collect()))
}

impl TripleFile {
    pub fn descriptor(&self) -> Result<GroupDescriptor> {
        let kind: GroupKind = self.group.name.parse()?;
        let mut d = GroupDescriptor::from_kind(kind)?;
        if self.group.r_in.is_some() || self.group.r_out.is_some() || self.group.r_cut.is_some() {
            let r_in = self.group.r_in.unwrap_or(d.r_in());
            let r_out = self.group.r_out.unwrap_or(d.r_out());
            let r_cut = self.group.r_cut.unwrap_or(d.r_cut());
            d = d.with_radii(r_in, r_out, r_cut)?;
        }
        Ok(d)
    }

    pub fn is_sphere(&self) -> bool {
        self.space.is_some()
    }

    /// The triple on the group; for a sphere file, the lift of the sphere triple.
    pub fn to_triple(&self) -> Result<ExtendedLevyTriple> {
        if self.space.is_some() {
            return crate::homogeneous::lift_triple(&Sphere::new(), &self.to_sphere_triple()?);
        }
        let desc = self.descriptor()?;
        let continuous = match &self.drift {
            None => PiecewiseLinear::constant(LieAlgebraVector::zeros()),
            Some(d) => {
                let vals = d
                    .components
                    .iter()
                    .enumerate()
                    .map(|(i, v)| vector(&desc, v, &format!("drift.components[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                PiecewiseLinear::new(d.grid.clone(), vals).map_err(|e| config_err("drift", e))?
            }
        };
        let cov = match &self.cov {
            None => PiecewiseLinear::constant(Mat::zeros()),
            Some(c) => {
                let mut vals = Vec::with_capacity(c.matrices.len());
                for (i, m) in c.matrices.iter().enumerate() {
                    let field = format!("cov.matrices[{i}]");
                    if m.len() != desc.dim() || m.iter().any(|r| r.len() != desc.dim()) {
                        return Err(config_err(&field, format!("expected a {0}×{0} matrix", desc.dim())));
                    }
                    let mut a = Mat::zeros();
                    for (r, row) in m.iter().enumerate() {
                        for (s, x) in row.iter().enumerate() {
                            a[(r, s)] = *x;
                        }
                    }
                    vals.push(a);
                }
                PiecewiseLinear::new(c.grid.clone(), vals).map_err(|e| config_err("cov", e))?
            }
        };
        let mut pieces = Vec::new();
        for (i, p) in self.levy.iter().flat_map(|l| &l.pieces).enumerate() {
            let field = format!("levy.pieces[{i}]");
            let law = match &p.law {
                LawSection::Discrete { support, matrices, weights } => SpatialLaw::discrete(
                    &desc,
                    support_measure(&desc, support, matrices, weights, &format!("{field}.law"))?,
                ),
                LawSection::WrappedGaussianSo3 { sigma } => SpatialLaw::wrapped_gaussian_so3(&desc, *sigma),
                LawSection::GaussianRd { sigma } => SpatialLaw::gaussian_rd(&desc, *sigma),
                LawSection::LaplaceRd { scale } => SpatialLaw::laplace_rd(&desc, *scale),
            }
            .map_err(|e| config_err(&field, e))?;
            pieces.push(LevyPiece { start: p.start, end: p.end, rate: p.rate, law: Arc::new(law) });
        }
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                support_measure(&desc, &a.support, &a.matrices, &a.weights, &format!("atoms[{i}]"))
                    .map(|law| FixedJump { time: a.time, law })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = ExtendedLevyTriple::with_consistent_drift(desc, continuous, cov, LevyMeasureC { pieces }, atoms);
        t.validate().into_result()?;
        Ok(t)
    }

    pub fn to_sphere_triple(&self) -> Result<XTriple> {
        let sp = self.space.as_ref().ok_or_else(|| config_err("space", "missing section"))?;
        if sp.name != "S2" || sp.k != "SO2" || self.group.name.to_uppercase() != "SO3" {
            return Err(config_err("space", "only S2 = SO3/SO2 is supported"));
        }
        if sp.origin.len() != 3 || (sp.origin[0], sp.origin[1], sp.origin[2]) != (0.0, 0.0, 1.0) {
            return Err(config_err("space.origin", "the origin must be [0, 0, 1]"));
        }
        let a = match &sp.a {
            None => PiecewiseLinear::constant(0.0),
            Some(f) => PiecewiseLinear::new(f.grid.clone(), f.values.clone()).map_err(|e| config_err("space.a", e))?,
        };
        let levy = sp
            .levy
            .iter()
            .map(|p| {
                let parts: Vec<(f64, f64)> = p.orbits.iter().map(|o| (o[0], o[1])).collect();
                XLevyPiece { start: p.start, end: p.end, rate: p.rate, law: Arc::new(orbit_mixture(&parts)) }
            })
            .collect();
        let atoms = sp
            .atoms
            .iter()
            .map(|a| {
                let mut law = Vec::new();
                if a.origin_weight > 0.0 {
                    law.push((Sphere::o(), a.origin_weight));
                }
                let parts: Vec<(f64, f64)> = a.orbits.iter().map(|o| (o[0], o[1])).collect();
                law.extend(orbit_mixture(&parts));
                XAtom { time: a.time, law }
            })
            .collect();
        let xt = XTriple::irreducible(a, levy, atoms)?;
        xt.validate(&Sphere::new())?;
        Ok(xt)
    }

    /// Schema form of a group triple. Drift jumps are implied by the atoms.
    pub fn from_triple(t: &ExtendedLevyTriple) -> Self {
        let desc = &t.group;
        let d = desc.dim();
        let comps = t.drift.continuous.values().iter().map(|v| v.as_slice()[..d].to_vec()).collect();
        let mats = t
            .cov
            .values()
            .iter()
            .map(|a| (0..d).map(|r| (0..d).map(|s| a[(r, s)]).collect()).collect())
            .collect();
        let pieces = t
            .levy_c
            .pieces
            .iter()
            .map(|p| {
                let law = match p.law.kind() {
                    LawKind::Discrete => {
                        let (support, matrices, weights) = encode_measure(desc, p.law.quadrature());
                        LawSection::Discrete { support, matrices, weights }
                    }
                    LawKind::WrappedGaussianSo3 { sigma } => LawSection::WrappedGaussianSo3 { sigma: *sigma },
                    LawKind::GaussianRd { sigma } => LawSection::GaussianRd { sigma: *sigma },
                    LawKind::LaplaceRd { scale } => LawSection::LaplaceRd { scale: *scale },
                };
                PieceSection { start: p.start, end: p.end, rate: p.rate, law }
            })
            .collect::<Vec<_>>();
        let atoms = t
            .atoms
            .iter()
            .map(|a| {
                let (support, matrices, weights) = encode_measure(desc, &a.law);
                AtomSection { time: a.time, support, matrices, weights }
            })
            .collect();
        TripleFile {
            group: GroupSection {
                name: desc.name(),
                r_in: Some(desc.r_in()),
                r_out: Some(desc.r_out()),
                r_cut: desc.r_cut().is_finite().then(|| desc.r_cut()),
            },
            drift: Some(DriftSection { grid: t.drift.continuous.grid().to_vec(), components: comps }),
            cov: Some(CovSection { grid: t.cov.grid().to_vec(), matrices: mats }),
            levy: (!pieces.is_empty()).then_some(LevySection { pieces }),
            atoms,
            space: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

type Encoded = (Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>, Vec<f64>);

/// Log coordinates when every atom round-trips through the chart, matrices otherwise.
fn encode_measure(desc: &GroupDescriptor, m: &DiscreteMeasure) -> Encoded {
    let d = desc.dim();
    let weights = m.atoms().iter().map(|(_, w)| *w).collect();
    let logs: Option<Vec<Vec<f64>>> = m
        .atoms()
        .iter()
        .map(|(g, _)| {
            let v = desc.log(g).ok()?;
            ((desc.exp(&v).0 - g.0).amax() <= 1e-12).then(|| v.as_slice()[..d].to_vec())
        })
        .collect();
    match logs {
        Some(l) => (Some(l), None, weights),
        None => (None, Some(m.atoms().iter().map(|(g, _)| g.0.transpose().as_slice().to_vec()).collect()), weights),
    }
}

pub fn load_triple_file(path: &Path) -> Result<TripleFile> {
    let text = std::fs::read_to_string(path)?;
    parse_triple_file(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn save_triple(path: &Path, t: &ExtendedLevyTriple) -> Result<()> {
    std::fs::write(path, TripleFile::from_triple(t).to_toml()?)?;
    Ok(())
}

fn row_major(m: &Mat) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

/// CSV rows `path_id, t, kind, m11 … mnn` of the running value, starting with an `origin` row.
pub fn write_paths_csv<W: Write>(w: W, desc: &GroupDescriptor, paths: impl Iterator<Item = SamplePath>) -> Result<()> {
    let n = desc.matrix_size();
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["path_id".to_string(), "t".into(), "kind".into()];
    for r in 1..=n {
        for c in 1..=n {
            header.push(format!("m{r}{c}"));
        }
    }
    wr.write_record(&header)?;
    let mut row = |id: usize, t: f64, kind: &str, g: &GroupElement| -> Result<()> {
        let mut rec = vec![id.to_string(), t.to_string(), kind.to_string()];
        for r in 0..n {
            for c in 0..n {
                rec.push(g.0[(r, c)].to_string());
            }
        }
        wr.write_record(&rec)?;
        Ok(())
    };
    for (id, p) in paths.enumerate() {
        row(id, p.grid[0], "origin", &p.origin)?;
        for (e, v) in p.events.iter().zip(p.running_values(desc)) {
            row(id, e.time, e.kind.as_str(), &v)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads the CSV form; the grid is the origin time plus the step times.
pub fn read_paths_csv<R: Read>(r: R, desc: &GroupDescriptor) -> Result<Vec<SamplePath>> {
    let n = desc.matrix_size();
    let mut rd = csv::Reader::from_reader(r);
    let mut raw: Vec<(GroupElement, Vec<(f64, EventKind, GroupElement)>)> = Vec::new();
    let mut grid: Vec<f64> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Config(format!("path CSV line {}: {m}", line + 2));
        if rec.len() != 3 + n * n {
            return Err(bad(&format!("expected {} columns", 3 + n * n)));
        }
        let id: usize = rec[0].parse().map_err(|_| bad("bad path_id"))?;
        let t: f64 = rec[1].parse().map_err(|_| bad("bad t"))?;
        let mut m = Mat::identity();
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = rec[3 + r * n + c].parse().map_err(|_| bad("bad matrix entry"))?;
            }
        }
        if &rec[2] == "origin" {
            if id != raw.len() {
                return Err(bad("paths must be listed in order"));
            }
            raw.push((GroupElement(m), Vec::new()));
            if id == 0 {
                grid.push(t);
            }
            continue;
        }
        let kind = EventKind::parse(&rec[2]).ok_or_else(|| bad("unknown event kind"))?;
        if id + 1 != raw.len() {
            return Err(bad("event before its origin row"));
        }
        let cur = raw.last_mut().expect("checked above");
        if id == 0 && kind == EventKind::Step {
            grid.push(t);
        }
        cur.1.push((t, kind, GroupElement(m)));
    }
    let grid = Arc::new(grid);
    Ok(raw
        .into_iter()
        .map(|(origin, evs)| {
            let mut prev = origin;
            let events = evs
                .into_iter()
                .map(|(time, kind, v)| {
                    let inc = desc.inverse(&prev) * v;
                    prev = v;
                    Event { time, kind, increment: inc }
                })
                .collect();
            SamplePath { origin, events, grid: grid.clone() }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: String,
    pub increment: [f64; 9],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRecord {
    pub origin: [f64; 9],
    pub events: Vec<EventRecord>,
}

/// Lossless event-list form of an ensemble.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathFile {
    pub group: String,
    pub grid: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

impl PathFile {
    pub fn from_paths(desc: &GroupDescriptor, paths: &[SamplePath]) -> Self {
        PathFile {
            group: desc.name(),
            grid: paths.first().map(|p| p.grid.as_ref().clone()).unwrap_or_default(),
            paths: paths
                .iter()
                .map(|p| PathRecord {
                    origin: row_major(&p.origin.0),
                    events: p
                        .events
                        .iter()
                        .map(|e| EventRecord { t: e.time, kind: e.kind.as_str().into(), increment: row_major(&e.increment.0) })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_paths(&self) -> Result<(GroupDescriptor, Vec<SamplePath>)> {
        let desc = GroupDescriptor::from_kind(self.group.parse()?)?;
        let grid = Arc::new(self.grid.clone());
        let paths = self
            .paths
            .iter()
            .map(|p| {
                let events = p
                    .events
                    .iter()
                    .map(|e| {
                        let kind = EventKind::parse(&e.kind)
                            .ok_or_else(|| Error::Config(format!("unknown event kind `{}`", e.kind)))?;
                        Ok(Event { time: e.t, kind, increment: GroupElement(Mat::from_row_slice(&e.increment)) })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SamplePath { origin: GroupElement(Mat::from_row_slice(&p.origin)), events, grid: grid.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((desc, paths))
    }
}

/// CSV rows `path_id, t, kind, x, y, z`.
pub fn write_sphere_paths_csv<W: Write>(w: W, paths: impl Iterator<Item = XPath>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["path_id", "t", "kind", "x", "y", "z"])?;
    for (id, p) in paths.enumerate() {
        let o = p.origin;
        wr.write_record([id.to_string(), p.grid[0].to_string(), "origin".into(), o[0].to_string(), o[1].to_string(), o[2].to_string()])?;
        for e in &p.events {
            let v = e.value;
            wr.write_record([
                id.to_string(),
                e.time.to_string(),
                e.kind.as_str().into(),
                v[0].to_string(),
                v[1].to_string(),
                v[2].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
