//! Parameter sweeps, bifurcation curves and their asymptotic fits.
//!
//! Sweeps are addressed in measured unfolding coordinates `β` (see
//! [`crate::coeffs::measured_unfolding`]); a chord-Newton iteration with the
//! linear part of the unfolding map turns a target `β` into parameters `α`.
//! Bifurcation curves are zero sets of exact event functions, located by
//! Brent iteration along lines in `α`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{cusp_roots, fold_root, measured_unfolding, raw_report, t2_critical, CoefficientReport};
use crate::cycles::{Analyzer, RegionLabel, SlidingLabel, Stability};
use crate::error::{Error, Result};
use crate::maps::Maps;
use crate::model::{Case, FilippovModel, Side};
use crate::roots::brent_with;

/// Version of the JSON layout written by [`Diagram::to_json`].
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug)]
pub struct InversionOptions {
    pub max_iter: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions { max_iter: 40, abs_tol: 1e-15, rel_tol: 1e-10 }
    }
}

/// Measured unfolding map `α -> β` with a chord-Newton inverse.
///
/// For the codim1 case the second coordinate is `α2` itself.
pub struct Unfolding<'a> {
    pub maps: Maps<'a>,
    pub case: Case,
    pub report: CoefficientReport,
    /// Right inverse of the linear part, `m x 2`.
    pinv: Vec<[f64; 2]>,
    pub opts: InversionOptions,
}

fn pseudo_inverse(rows: &[Vec<f64>; 2]) -> Result<Vec<[f64; 2]>> {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let (a, b, d) = (dot(&rows[0], &rows[0]), dot(&rows[0], &rows[1]), dot(&rows[1], &rows[1]));
    let det = a * d - b * b;
    if det.abs() <= 1e-14 * (a * d).max(1e-300) {
        return Err(Error::Degenerate("unfolding map has a singular linear part".into()));
    }
    let inv = [[d / det, -b / det], [-b / det, a / det]];
    Ok((0..rows[0].len())
        .map(|k| {
            let (r0, r1) = (rows[0][k], rows[1][k]);
            [r0 * inv[0][0] + r1 * inv[1][0], r0 * inv[0][1] + r1 * inv[1][1]]
        })
        .collect())
}

impl<'a> Unfolding<'a> {
    pub fn new(model: &'a FilippovModel, case: Case) -> Result<Unfolding<'a>> {
        if model.m < 2 {
            return Err(Error::Domain("two-parameter sweeps need at least two parameters".into()));
        }
        let maps = Maps::new(model)?;
        let report = raw_report(model, case, &maps)?;
        let jac = report.unfolding_jacobian().ok_or_else(|| Error::Degenerate("no unfolding coefficients".into()))?;
        let rows = match case {
            Case::Codim1 => {
                let mut e2 = vec![0.0; model.m];
                e2[1] = 1.0;
                [jac[0].clone(), e2]
            }
            _ => [jac[0].clone(), jac[1].clone()],
        };
        let pinv = pseudo_inverse(&rows)?;
        Ok(Unfolding { maps, case, report, pinv, opts: InversionOptions::default() })
    }

    pub fn model(&self) -> &'a FilippovModel {
        self.maps.model
    }

    /// `α` of the linearised inverse applied to `b`.
    pub fn linear_alpha(&self, b: [f64; 2]) -> Vec<f64> {
        self.pinv.iter().map(|r| r[0] * b[0] + r[1] * b[1]).collect()
    }

    /// Measured coordinates `β(α)`.
    pub fn beta(&self, alpha: &[f64]) -> Result<[f64; 2]> {
        let b = measured_unfolding(&self.maps, self.case, alpha)?.beta();
        Ok(match self.case {
            Case::Codim1 => [b[0], alpha[1]],
            _ => [b[0], b[1]],
        })
    }

    /// `α` with `β(α) = target`.
    pub fn invert(&self, target: [f64; 2]) -> Result<Vec<f64>> {
        let mut alpha = self.linear_alpha(target);
        for _ in 0..self.opts.max_iter {
            let b = self.beta(&alpha)?;
            let r = [b[0] - target[0], b[1] - target[1]];
            let done = (0..2).all(|i| r[i].abs() <= self.opts.abs_tol + self.opts.rel_tol * target[i].abs());
            if done {
                return Ok(alpha);
            }
            let step = self.linear_alpha(r);
            for (a, s) in alpha.iter_mut().zip(step) {
                *a -= s;
            }
        }
        Err(Error::NoConvergence(format!("inverting the unfolding map at beta = {target:?}")))
    }

    fn visible_fold(&self, alpha: &[f64]) -> Result<Option<(f64, f64)>> {
        let model = self.model();
        let c = cusp_roots(model, alpha)?;
        match c.roots {
            Some((lo, hi)) => {
                let tv = if model.upper_lie(hi, alpha)?.z2h > 0.0 { hi } else { lo };
                Ok(Some((tv, c.phi1)))
            }
            None => Ok(None),
        }
    }

    /// Names of the event functions of this case on the given side of
    /// `φ1 = 0`.
    pub fn event_names(&self, phi1_positive: bool) -> &'static [&'static str] {
        match (self.case, phi1_positive) {
            (Case::Codim1, _) => &["CC"],
            (Case::Cusp, true) => &["AX", "CS", "SS", "GS"],
            (Case::Cusp, false) => &["AX"],
            (Case::FoldFold, true) => &["AX", "CS+", "SH+", "TC+", "F0"],
            (Case::FoldFold, false) => &["AX", "CS-", "SH-", "TC-"],
        }
    }

    /// One event function at `α`. Each vanishes exactly on the curve of the
    /// same name and increases across it with `β2`.
    pub fn event(&self, name: &str, alpha: &[f64]) -> Result<f64> {
        let model = self.model();
        let m = &self.maps;
        let a = model.a;
        match (self.case, name) {
            (Case::Codim1, "CC") => m.t1(fold_root(model, -a, alpha)?, alpha),
            (Case::Cusp, "AX") => Ok(cusp_roots(model, alpha)?.phi1),
            (Case::Cusp, "CS" | "SS" | "GS") => {
                let (tv, phi1) =
                    self.visible_fold(alpha)?.ok_or_else(|| Error::Domain("no folds near (-a, 0)".into()))?;
                match name {
                    "CS" => m.t1(tv, alpha),
                    "SS" => Ok(m.t1(tv, alpha)? - 2.0 * phi1.sqrt()),
                    _ => m.t1(m.backward_fold_map(tv, alpha)?, alpha),
                }
            }
            (Case::FoldFold, "AX") => Ok(fold_root(model, -a, alpha)? + fold_root(model, a, alpha)?),
            (Case::FoldFold, "F0") => Ok(t2_critical(m, alpha)?.1),
            (Case::FoldFold, _) => {
                let an = self.analyzer()?;
                let g = an.gap_functions(alpha)?;
                let need = |v: Option<f64>| v.ok_or_else(|| Error::Domain("no pseudo-equilibrium".into()));
                match name {
                    "CS+" => Ok(g.t2_minus),
                    "CS-" => Ok(g.t2_plus),
                    "TC+" | "TC-" => Ok(g.g5),
                    "SH+" => need(g.g6),
                    "SH-" => need(g.g7),
                    _ => Err(Error::Domain(format!("unknown event `{name}`"))),
                }
            }
            _ => Err(Error::Domain(format!("unknown event `{name}` for case {}", self.case))),
        }
    }

    /// All event functions defined at `α`.
    pub fn event_values(&self, alpha: &[f64]) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        let model = self.model();
        let a = model.a;
        match self.case {
            Case::Codim1 => {
                out.insert("CC".into(), self.event("CC", alpha)?);
            }
            Case::Cusp => {
                out.insert("AX".into(), cusp_roots(model, alpha)?.phi1);
                if let Some((tv, phi1)) = self.visible_fold(alpha)? {
                    let cs = self.maps.t1(tv, alpha)?;
                    out.insert("CS".into(), cs);
                    out.insert("SS".into(), cs - 2.0 * phi1.sqrt());
                    if let Ok(gs) = self.maps.backward_fold_map(tv, alpha).and_then(|x| self.maps.t1(x, alpha)) {
                        out.insert("GS".into(), gs);
                    }
                }
            }
            Case::FoldFold => {
                let g = self.analyzer()?.gap_functions(alpha)?;
                out.insert("AX".into(), g.phi1);
                let side = if g.phi1 > 0.0 { "+" } else { "-" };
                out.insert(format!("TC{side}"), g.g5);
                if g.phi1 > 0.0 {
                    out.insert("CS+".into(), g.t2_minus);
                    if let Some(v) = g.g6 {
                        out.insert("SH+".into(), v);
                    }
                    out.insert("F0".into(), t2_critical(&self.maps, alpha)?.1);
                } else {
                    out.insert("CS-".into(), g.t2_plus);
                    if let Some(v) = g.g7 {
                        out.insert("SH-".into(), v);
                    }
                }
                let _ = a;
            }
        }
        Ok(out)
    }

    fn analyzer(&self) -> Result<Analyzer<'a>> {
        Ok(Analyzer {
            maps: self.maps.clone(),
            case: self.case,
            opts: Default::default(),
            tau0: self.report.tau0,
        })
    }

    /// Predicted cycle inventory from the signs of the event functions, per
    /// the case tables; `None` where the tables say nothing (for instance a
    /// model whose upper field runs right to left at `(-a, 0)`).
    pub fn predict(&self, ev: &BTreeMap<String, f64>, tol: &PredictTolerances) -> Option<RegionLabel> {
        let model = self.model();
        let z = model.zero_alpha();
        let f_left = model.eval_field(Side::Upper, -model.a, 0.0, &z).ok()?.0;
        if f_left <= 0.0 {
            return None;
        }
        predict_from_events(self.case, ev, tol)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PredictTolerances {
    /// Event values below this count as zero.
    pub event: f64,
    /// `|φ1|` below this counts as zero.
    pub phi1: f64,
    /// Landing distance below which a sliding cycle arrives at a tangency.
    pub closure: f64,
}

impl Default for PredictTolerances {
    fn default() -> Self {
        PredictTolerances { event: 1e-9, phi1: 1e-12, closure: 1e-7 }
    }
}

fn crossing(label: &mut RegionLabel, cycles: &[(Stability, usize)]) {
    label.n_crossing = cycles.len();
    label.stabilities = cycles.iter().map(|c| c.0).collect();
    label.encloses = cycles.iter().map(|c| c.1).collect();
}

/// Case tables as a function of the event signs (upper field running left
/// to right at `(-a, 0)`).
pub fn predict_from_events(case: Case, ev: &BTreeMap<String, f64>, tol: &PredictTolerances) -> Option<RegionLabel> {
    use Stability::*;
    let get = |k: &str| ev.get(k).copied();
    let zero = |v: f64| v.abs() <= tol.event;
    let mut l = RegionLabel::default();
    match case {
        Case::Codim1 => {
            let cc = get("CC")?;
            if zero(cc) {
                l.critical = "through-fold".into();
            } else if cc < 0.0 {
                crossing(&mut l, &[(Stable, 0)]);
            } else {
                l.sliding = SlidingLabel::Stable;
                l.sliding_arrival = Some("from-upper interior".into());
            }
        }
        Case::Cusp => {
            let phi1 = get("AX")?;
            if phi1.abs() <= tol.phi1 {
                return None;
            }
            if phi1 < 0.0 {
                crossing(&mut l, &[(Stable, 0)]);
                return Some(l);
            }
            let (cs, ss, gs) = (get("CS")?, get("SS")?, get("GS"));
            if zero(cs) {
                l.critical = "through-fold".into();
            } else if cs < 0.0 {
                crossing(&mut l, &[(Stable, 0)]);
            } else if ss.abs() <= tol.closure {
                l.sliding = SlidingLabel::Stable;
                l.sliding_arrival = Some("from-upper at-T_iv+".into());
            } else if ss < 0.0 {
                l.sliding = SlidingLabel::Stable;
                l.sliding_arrival = Some("from-upper interior".into());
            } else {
                let gs = gs?;
                if zero(gs) {
                    l.critical = "through-backward-fold-image".into();
                } else if gs < 0.0 {
                    l.sliding = SlidingLabel::Stable;
                    l.sliding_arrival = Some("from-lower interior".into());
                } else {
                    crossing(&mut l, &[(Stable, 4)]);
                }
            }
        }
        Case::FoldFold => {
            let phi1 = get("AX")?;
            if phi1.abs() <= tol.phi1 {
                return None;
            }
            if phi1 > 0.0 {
                let (t2m, g6, f0) = (get("CS+")?, get("SH+")?, get("F0")?);
                if zero(f0) {
                    crossing(&mut l, &[(Double, 0)]);
                } else if f0 > 0.0 {
                    if zero(t2m) {
                        crossing(&mut l, &[(Unstable, 0)]);
                        l.critical = "through-folds T_u-,T_l+".into();
                    } else if t2m < 0.0 {
                        crossing(&mut l, &[(Unstable, 0), (Stable, 0)]);
                    } else {
                        crossing(&mut l, &[(Unstable, 0)]);
                    }
                }
                if t2m > tol.event && g6 < -tol.event {
                    l.sliding = SlidingLabel::Stable;
                    l.sliding_arrival = Some("from-upper interior".into());
                }
            } else {
                let (t2p, g7) = (get("CS-")?, get("SH-")?);
                if zero(t2p) {
                    l.critical = "through-folds T_l-,T_u+".into();
                } else if t2p > 0.0 {
                    crossing(&mut l, &[(Unstable, 0)]);
                }
                if g7 > tol.event && t2p < -tol.event {
                    l.sliding = SlidingLabel::Unstable;
                    l.sliding_arrival = Some("from-lower interior".into());
                }
            }
        }
    }
    Some(l)
}

/// One grid axis `lo:hi:n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.n <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Axis> {
        let bad = || Error::Domain(format!("axis `{s}` is not of the form lo:hi:n"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        Ok(Axis { lo, hi, n })
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.n)
    }
}

/// How grid coordinates map to parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coords {
    /// `(α1, α2)` directly.
    Alpha,
    /// Measured `(β1, β2)`.
    Beta,
    /// `(β1, β2 / s(β1))` with `s = √|β1|` (cusp) or `β1²` (fold-fold).
    Scaled,
}

impl FromStr for Coords {
    type Err = Error;
    fn from_str(s: &str) -> Result<Coords> {
        match s {
            "alpha" => Ok(Coords::Alpha),
            "beta" => Ok(Coords::Beta),
            "scaled" => Ok(Coords::Scaled),
            _ => Err(Error::Domain(format!("unknown coordinates `{s}` (alpha, beta or scaled)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub coords: Coords,
    pub b1: Axis,
    pub b2: Axis,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.b1.n * self.b2.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell `k` in row-major order (`b1` fastest).
    pub fn index(&self, k: usize) -> (usize, usize) {
        (k % self.b1.n, k / self.b1.n)
    }
}

fn scale(case: Case, b1: f64) -> f64 {
    match case {
        Case::Cusp => b1.abs().sqrt(),
        Case::FoldFold => b1 * b1,
        Case::Codim1 => 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Resolved,
    /// Classified, but some part of the classification failed.
    Partial,
    /// Parameter inversion or classification impossible.
    Unresolved,
}

#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    /// Grid coordinates.
    pub at: [f64; 2],
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<[f64; 2]>,
    pub status: CellStatus,
    pub label: Option<RegionLabel>,
    pub events: BTreeMap<String, f64>,
    /// Cycle content predicted from the event signs.
    pub predicted: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Cell {
    pub fn core_key(&self) -> Option<String> {
        self.label.as_ref().map(|l| l.core_key())
    }

    /// Resolved and disagreeing with the prediction.
    pub fn misclassified(&self) -> bool {
        match (self.status, &self.predicted, self.core_key()) {
            (CellStatus::Resolved, Some(p), Some(k)) => *p != k,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    /// Index of the search line.
    pub line: usize,
    pub alpha: Vec<f64>,
    pub beta: [f64; 2],
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Curves {
    pub points: BTreeMap<String, Vec<CurvePoint>>,
    /// Search lines on which an event had no sign change, as `name: line`.
    pub misses: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub model: String,
    pub model_hash: String,
    pub seed: u64,
    pub inversion_abs_tol: f64,
    pub inversion_rel_tol: f64,
    pub event_tol: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagram {
    pub schema_version: u32,
    pub case: Case,
    pub grid: Option<GridSpec>,
    pub provenance: Provenance,
    pub cells: Vec<Cell>,
    pub curves: Curves,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<CurveFit>,
}

impl Diagram {
    pub fn empty(model: &FilippovModel, case: Case) -> Diagram {
        Diagram {
            schema_version: SCHEMA_VERSION,
            case,
            grid: None,
            provenance: provenance(model, &InversionOptions::default()),
            cells: Vec::new(),
            curves: Curves::default(),
            fits: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagram serializes")
    }

    /// One row per cell, sorted by grid index.
    pub fn cells_csv(&self) -> String {
        let mut s = String::from("i,j,at1,at2,alpha1,alpha2,beta1,beta2,status,label,predicted\n");
        for c in &self.cells {
            let a = c.alpha.as_deref().unwrap_or(&[]);
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
            let status = match c.status {
                CellStatus::Resolved => "resolved",
                CellStatus::Partial => "partial",
                CellStatus::Unresolved => "unresolved",
            };
            s.push_str(&format!(
                "{},{},{:e},{:e},{},{},{},{},{},\"{}\",\"{}\"\n",
                c.i,
                c.j,
                c.at[0],
                c.at[1],
                opt(a.first().copied()),
                opt(a.get(1).copied()),
                opt(c.beta.map(|b| b[0])),
                opt(c.beta.map(|b| b[1])),
                status,
                c.label.as_ref().map_or(String::new(), |l| l.key()),
                c.predicted.as_deref().unwrap_or("")
            ));
        }
        s
    }

    pub fn resolved(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.status == CellStatus::Resolved)
    }

    /// Distinct cycle contents among resolved cells, with counts.
    pub fn inventory(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for c in self.resolved() {
            if let Some(k) = c.core_key() {
                *m.entry(k).or_insert(0) += 1;
            }
        }
        m
    }
}

impl Curves {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curve,line,alpha1,alpha2,beta1,beta2\n");
        for (name, pts) in &self.points {
            for p in pts {
                s.push_str(&format!(
                    "{name},{},{:e},{:e},{:e},{:e}\n",
                    p.line,
                    p.alpha[0],
                    p.alpha.get(1).copied().unwrap_or(0.0),
                    p.beta[0],
                    p.beta[1]
                ));
            }
        }
        s
    }
}

fn provenance(model: &FilippovModel, inv: &InversionOptions) -> Provenance {
    Provenance {
        model: model.label.clone(),
        model_hash: model.hash(),
        seed: 0,
        inversion_abs_tol: inv.abs_tol,
        inversion_rel_tol: inv.rel_tol,
        event_tol: PredictTolerances::default().event,
    }
}

fn classify_cell(unf: &Unfolding<'_>, an: &Analyzer<'_>, grid: &GridSpec, k: usize) -> Cell {
    let (i, j) = grid.index(k);
    let at = [grid.b1.value(i), grid.b2.value(j)];
    let mut cell = Cell {
        i,
        j,
        at,
        alpha: None,
        beta: None,
        status: CellStatus::Unresolved,
        label: None,
        events: BTreeMap::new(),
        predicted: None,
        note: None,
    };
    let model = unf.model();
    let alpha = match grid.coords {
        Coords::Alpha => {
            let mut a = model.zero_alpha();
            a[0] = at[0];
            a[1] = at[1];
            Ok(a)
        }
        Coords::Beta => unf.invert(at),
        Coords::Scaled => unf.invert([at[0], at[1] * scale(unf.case, at[0])]),
    };
    let alpha = match alpha {
        Ok(a) => a,
        Err(e) => {
            cell.note = Some(format!("inversion: {e}"));
            return cell;
        }
    };
    cell.beta = unf.beta(&alpha).ok();
    match unf.event_values(&alpha) {
        Ok(ev) => cell.events = ev,
        Err(e) => cell.note = Some(format!("events: {e}")),
    }
    cell.predicted = unf.predict(&cell.events, &PredictTolerances::default()).map(|l| l.core_key());
    let label = an.classify(&alpha);
    cell.status = if label.partial { CellStatus::Partial } else { CellStatus::Resolved };
    cell.label = Some(label);
    cell.alpha = Some(alpha);
    cell
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))
}

/// Classifies every grid cell. Cells are independent; the result does not
/// depend on `threads`.
pub fn run_sweep(model: &FilippovModel, case: Case, grid: &GridSpec, threads: usize) -> Result<Diagram> {
    let unf = Unfolding::new(model, case)?;
    run_sweep_with(&unf, grid, threads)
}

pub fn run_sweep_with(unf: &Unfolding<'_>, grid: &GridSpec, threads: usize) -> Result<Diagram> {
    let an = unf.analyzer()?;
    let cells = pool(threads)?.install(|| {
        (0..grid.len()).into_par_iter().map(|k| classify_cell(unf, &an, grid, k)).collect::<Vec<_>>()
    });
    Ok(Diagram {
        schema_version: SCHEMA_VERSION,
        case: unf.case,
        grid: Some(*grid),
        provenance: provenance(unf.model(), &unf.opts),
        cells,
        curves: Curves::default(),
        fits: Vec::new(),
    })
}

/// Search lines for [`extract_curves`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurveSpec {
    /// Lines per sign of `β1`.
    pub lines: usize,
    pub b1_max: f64,
    pub b1_min: f64,
    /// Samples per line before root refinement.
    pub samples: usize,
    /// Accuracy of the root along a line (in `α`).
    pub xtol: f64,
}

impl CurveSpec {
    /// Defaults for the case: `β1` ranges where all curves stay inside the
    /// validated neighbourhood.
    pub fn for_case(case: Case, lines: usize) -> CurveSpec {
        let (b1_max, b1_min) = match case {
            Case::Codim1 => (1e-2, 1e-2),
            Case::Cusp => (1e-4, 1e-8),
            Case::FoldFold => (1e-2, 1e-4),
        };
        CurveSpec { lines, b1_max, b1_min, samples: 48, xtol: 1e-13 }
    }

    fn b1_values(&self) -> Vec<f64> {
        let n = self.lines.max(1);
        if n == 1 {
            return vec![self.b1_max];
        }
        let r = (self.b1_min / self.b1_max).ln() / (n - 1) as f64;
        (0..n).map(|k| self.b1_max * (r * k as f64).exp()).collect()
    }
}

/// Range of the line parameter `s ≈ β2` searched at `b1`.
fn s_range(case: Case, b1: f64) -> (f64, f64) {
    match case {
        Case::Codim1 => (-b1, b1),
        Case::Cusp => (-5.0 * b1.abs().sqrt(), 5.0 * b1.abs().sqrt()),
        Case::FoldFold => (-1.0 * b1 * b1, 2.5 * b1 * b1),
    }
}

/// Zeros of `f` on `[lo, hi]` from `n` samples; failed samples split brackets.
fn line_roots<F>(f: F, lo: f64, hi: f64, n: usize, xtol: f64) -> Vec<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let xs: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let vs: Vec<Option<f64>> = xs.iter().map(|&x| f(x).ok()).collect();
    let mut out = Vec::new();
    for k in 0..n {
        if let (Some(a), Some(b)) = (vs[k], vs[k + 1]) {
            if a == 0.0 {
                out.push(xs[k]);
            } else if a * b < 0.0 {
                if let Ok(r) = brent_with(&f, xs[k], a, xs[k + 1], b, xtol, 0.0) {
                    out.push(r);
                }
            }
        }
    }
    out
}

/// Points of every bifurcation curve of the case, located as zeros of the
/// event functions along lines crossing the curves.
pub fn extract_curves(unf: &Unfolding<'_>, spec: &CurveSpec, threads: usize) -> Result<Curves> {
    let case = unf.case;
    // (name, line index, b1 or b2 of the line, vertical?)
    let mut jobs: Vec<(&'static str, usize, f64, bool)> = Vec::new();
    let b1s = spec.b1_values();
    match case {
        Case::Codim1 => {
            let n = spec.lines.max(1);
            for k in 0..n {
                let a2 = if n == 1 { 0.0 } else { spec.b1_max * (2.0 * k as f64 / (n - 1) as f64 - 1.0) };
                jobs.push(("CC", k, a2, false));
            }
        }
        _ => {
            let signs: &[f64] = if case == Case::Cusp { &[1.0] } else { &[1.0, -1.0] };
            let mut line = 0;
            for &sg in signs {
                for &b in &b1s {
                    for &name in unf.event_names(sg > 0.0).iter().filter(|n| **n != "AX") {
                        jobs.push((name, line, sg * b, true));
                    }
                    line += 1;
                }
            }
            // The φ1 = 0 axis, crossed horizontally.
            let top = match case {
                Case::Cusp => 5.0 * spec.b1_max.sqrt(),
                _ => 2.0 * spec.b1_max * spec.b1_max,
            };
            for (k, &b) in b1s.iter().enumerate() {
                let b2 = top * b / spec.b1_max;
                jobs.push(("AX", line + 2 * k, b2, false));
                jobs.push(("AX", line + 2 * k + 1, -b2, false));
            }
        }
    }
    let found = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(name, line, c, vertical)| {
                let point = |s: f64| -> Result<Vec<f64>> {
                    if vertical {
                        unf.invert([c, s])
                    } else {
                        unf.invert([s, c])
                    }
                };
                let (lo, hi) = if case == Case::Codim1 {
                    (-spec.b1_max, spec.b1_max)
                } else if vertical {
                    s_range(case, c)
                } else {
                    let w = spec.b1_max.max(c.abs());
                    (-w, w)
                };
                let roots = line_roots(|s| unf.event(name, &point(s)?), lo, hi, spec.samples, spec.xtol);
                let pts: Vec<CurvePoint> = roots
                    .into_iter()
                    .filter_map(|s| {
                        let alpha = point(s).ok()?;
                        unf.beta(&alpha).ok().map(|beta| CurvePoint { line, alpha, beta })
                    })
                    .collect();
                (name, line, pts)
            })
            .collect::<Vec<_>>()
    });
    let mut curves = Curves::default();
    for (name, line, pts) in found {
        if pts.is_empty() {
            curves.misses.push(format!("{name}: {line}"));
        }
        curves.points.entry(name.to_string()).or_default().extend(pts);
    }
    for pts in curves.points.values_mut() {
        pts.sort_by(|a, b| a.line.cmp(&b.line).then(a.beta[1].total_cmp(&b.beta[1])));
    }
    Ok(curves)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitForm {
    /// `β2 = C √|β1|`.
    Sqrt,
    /// `β2 = C β1²`.
    Quadratic,
}

impl FitForm {
    fn basis(self, b1: f64) -> f64 {
        match self {
            FitForm::Sqrt => b1.abs().sqrt(),
            FitForm::Quadratic => b1 * b1,
        }
    }

    pub fn exponent(self) -> f64 {
        match self {
            FitForm::Sqrt => 0.5,
            FitForm::Quadratic => 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveFit {
    pub curve: String,
    pub form: FitForm,
    /// Points used: `|β1| < cutoff`.
    pub cutoff: f64,
    pub n_points: usize,
    pub c: f64,
    pub c_stderr: f64,
    /// 95% band for `C`.
    pub c_band: (f64, f64),
    pub predicted: Option<f64>,
    /// Slope of `log|β2|` against `log|β1|`.
    pub exponent: f64,
    pub residual_rms: f64,
    pub max_relative_residual: f64,
    pub ill_conditioned: bool,
}

impl CurveFit {
    pub fn relative_error(&self) -> Option<f64> {
        self.predicted.map(|p| ((self.c - p) / p).abs())
    }
}

/// Weighted least-squares `C` of `β2 = C s(β1)` and the local exponent from
/// points with `|β1|` below `cutoff`.
pub fn fit_asymptotics(
    curve: &str,
    points: &[[f64; 2]],
    form: FitForm,
    cutoff: f64,
    predicted: Option<f64>,
) -> Result<CurveFit> {
    let pts: Vec<[f64; 2]> =
        points.iter().copied().filter(|b| b[0].abs() < cutoff && b[0] != 0.0).collect();
    let n = pts.len();
    if n < 8 {
        return Err(Error::Degenerate(format!("{curve}: {n} points below cutoff {cutoff:e}, need 8")));
    }
    // Weighted by 1/s(β1)², so every point counts by its relative residual;
    // the points span decades and the largest would dominate otherwise.
    let ratios: Vec<f64> = pts.iter().map(|b| b[1] / form.basis(b[0])).collect();
    let c = ratios.iter().sum::<f64>() / n as f64;
    let res: Vec<f64> = pts.iter().map(|b| b[1] - c * form.basis(b[0])).collect();
    let ss: f64 = res.iter().map(|r| r * r).sum();
    let var = ratios.iter().map(|r| (r - c).powi(2)).sum::<f64>() / (n - 1) as f64;
    let c_stderr = (var / n as f64).sqrt();
    let max_rel = ratios.iter().map(|r| ((r - c) / c).abs()).fold(0.0, f64::max);
    // Log-log slope.
    let lx: Vec<f64> = pts.iter().map(|b| b[0].abs().ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|b| b[1].abs().max(f64::MIN_POSITIVE).ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n as f64, ly.iter().sum::<f64>() / n as f64);
    let vxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let vxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = if vxx > 0.0 { vxy / vxx } else { f64::NAN };
    let ill = !c.is_finite() || c == 0.0 || c_stderr > 0.1 * c.abs() || vxx < 1e-6;
    Ok(CurveFit {
        curve: curve.into(),
        form,
        cutoff,
        n_points: n,
        c,
        c_stderr,
        c_band: (c - 1.96 * c_stderr, c + 1.96 * c_stderr),
        predicted,
        exponent,
        residual_rms: (ss / n as f64).sqrt(),
        max_relative_residual: max_rel,
        ill_conditioned: ill,
    })
}

/// Fit form and predicted constant of each curve of the case.
pub fn curve_models(unf: &Unfolding<'_>) -> Vec<(&'static str, FitForm, Option<f64>)> {
    match unf.case {
        Case::Codim1 => Vec::new(),
        Case::Cusp => vec![
            ("CS", FitForm::Sqrt, Some(-1.0)),
            ("SS", FitForm::Sqrt, Some(1.0)),
            ("GS", FitForm::Sqrt, Some(3.0)),
        ],
        Case::FoldFold => {
            let v = unf.report.vartheta_leading;
            let p = |f: fn(&crate::coeffs::Varthetas) -> f64| v.as_ref().map(f);
            vec![
                ("CS+", FitForm::Quadratic, p(|v| v.vartheta4)),
                ("SH+", FitForm::Quadratic, p(|v| v.vartheta6)),
                ("TC+", FitForm::Quadratic, p(|v| v.vartheta5)),
                ("TC-", FitForm::Quadratic, p(|v| v.vartheta5)),
                ("SH-", FitForm::Quadratic, p(|v| v.vartheta7)),
                ("CS-", FitForm::Quadratic, p(|v| v.vartheta3)),
            ]
        }
    }
}

/// Refinement sequence of `|β1|` cutoffs. The cusp curves leave the validated
/// neighbourhood at `β1 ≈ 1e-4` (they grow like `√β1`), so its sequence is
/// scaled down by `1e-2`.
pub fn default_cutoffs(case: Case) -> [f64; 3] {
    match case {
        Case::Cusp => [1e-4, 5e-5, 2.5e-5],
        _ => [1e-2, 5e-3, 2.5e-3],
    }
}

/// Fits of every curve at each cutoff. Curves with too few points are skipped.
pub fn fit_all(unf: &Unfolding<'_>, curves: &Curves, cutoffs: &[f64]) -> Vec<CurveFit> {
    let mut out = Vec::new();
    for (name, form, predicted) in curve_models(unf) {
        let pts: Vec<[f64; 2]> =
            curves.points.get(name).map(|v| v.iter().map(|p| p.beta).collect()).unwrap_or_default();
        for &cut in cutoffs {
            if let Ok(f) = fit_asymptotics(name, &pts, form, cut, predicted) {
                out.push(f);
            }
        }
    }
    out
}

/// Curve point sets and their fits at the case's default cutoffs.
pub fn run_curves(unf: &Unfolding<'_>, spec: &CurveSpec, threads: usize) -> Result<Diagram> {
    let curves = extract_curves(unf, spec, threads)?;
    let fits = fit_all(unf, &curves, &default_cutoffs(unf.case));
    Ok(Diagram {
        schema_version: SCHEMA_VERSION,
        case: unf.case,
        grid: None,
        provenance: provenance(unf.model(), &unf.opts),
        cells: Vec::new(),
        curves,
        fits,
    })
}

/// Label changes between neighbouring resolved cells and whether each is
/// bracketed by a sign change of some event function.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Coverage {
    pub transitions: usize,
    pub covered: usize,
    pub orphans: Vec<[(usize, usize); 2]>,
}

fn sign_change(a: &Cell, b: &Cell, tol: f64) -> bool {
    a.events.iter().any(|(k, &va)| {
        b.events.get(k).is_some_and(|&vb| va.abs() <= tol || vb.abs() <= tol || (va > 0.0) != (vb > 0.0))
    }) || a.events.keys().any(|k| !b.events.contains_key(k))
}

/// Every label change along a row or column must lie within two cells of
/// an event sign change.
pub fn coverage(d: &Diagram) -> Coverage {
    let mut cov = Coverage::default();
    let Some(grid) = d.grid else { return cov };
    let (n1, n2) = (grid.b1.n, grid.b2.n);
    let at = |i: usize, j: usize| &d.cells[j * n1 + i];
    let tol = d.provenance.event_tol;
    let mut check = |cells: Vec<&Cell>| {
        for k in 0..cells.len().saturating_sub(1) {
            let (a, b) = (cells[k], cells[k + 1]);
            if a.status != CellStatus::Resolved || b.status != CellStatus::Resolved || a.core_key() == b.core_key() {
                continue;
            }
            cov.transitions += 1;
            let lo = k.saturating_sub(1);
            let hi = (k + 2).min(cells.len() - 1);
            if (lo..hi).any(|m| sign_change(cells[m], cells[m + 1], tol)) {
                cov.covered += 1;
            } else {
                cov.orphans.push([(a.i, a.j), (b.i, b.j)]);
            }
        }
    };
    for j in 0..n2 {
        check((0..n1).map(|i| at(i, j)).collect());
    }
    for i in 0..n1 {
        check((0..n2).map(|j| at(i, j)).collect());
    }
    cov
}
