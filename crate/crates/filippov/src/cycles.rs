//! Invariant objects near the critical orbit: crossing cycles, sliding
//! cycles, critical crossing cycles, connections between tangent points,
//! and the region label summarising them at one parameter value.
//!
//! Crossing cycles are zeros of `T1` (codim1, cusp) or `T2` (fold-fold) on
//! the crossing part of the switching line near `(-a, 0)`. Sliding cycles are
//! built from one half-orbit: the Filippov solution leaving a visible fold
//! near `(-a, 0)` closes exactly when it reaches the mirror point as a
//! sliding exit.

use serde::Serialize;

use crate::boundary::{
    boundary_portrait, classify_lie, lie_data, sliding_numerator, BoundaryClass, BoundaryPortrait, BoundaryTolerances,
    Tangency,
};
use crate::coeffs::{cusp_roots, fold_root, t2_critical};
use crate::error::{Error, Result};
use crate::flow::{flow_filippov_with, Direction, EventKind, FilippovOptions, Mode, Regime};
use crate::maps::{critical_orbit, MapKind, MapOptions, Maps, Method, Partial};
use crate::model::{Case, FilippovModel};
use crate::roots::{brent_with, scan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleKind {
    Crossing,
    Sliding,
    CriticalCrossing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    InternallyStable,
    InternallyUnstable,
    Double,
}

impl Stability {
    pub fn name(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::InternallyStable => "internally-stable",
            Stability::InternallyUnstable => "internally-unstable",
            Stability::Double => "double",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CycleRecord {
    pub kind: CycleKind,
    /// Tangencies passed, or arrival of a sliding cycle
    /// (`from-upper`/`from-lower`, `interior`/`at-<point>`).
    pub sub_kind: String,
    /// Pairs `(x_left, x_right)` where the cycle meets the switching line.
    pub sigma: Vec<(f64, f64)>,
    /// Landing point of a sliding cycle's half-orbit near `(a, 0)`.
    pub landing: Option<f64>,
    pub return_map_derivative: Option<f64>,
    pub stability: Stability,
    /// Tangent points inside the cycle.
    pub encloses: Vec<String>,
}

impl CycleRecord {
    /// Largest `|x_left + x_right|` over the recorded pairs.
    pub fn symmetry_defect(&self) -> f64 {
        self.sigma.iter().map(|(l, r)| (l + r).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionKind {
    TangentTangent,
    TangentTangentWithSliding,
    TangentEquilibrium,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Connection {
    pub kind: ConnectionKind,
    pub from: String,
    pub to: String,
}

impl Connection {
    pub fn new(kind: ConnectionKind, from: &str, to: &str) -> Connection {
        Connection { kind, from: from.into(), to: to.into() }
    }

    pub fn key(&self) -> String {
        let k = match self.kind {
            ConnectionKind::TangentTangent => "TT",
            ConnectionKind::TangentTangentWithSliding => "TTS",
            ConnectionKind::TangentEquilibrium => "TE",
        };
        format!("{k}({}>{})", self.from, self.to)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SlidingLabel {
    None,
    Stable,
    Unstable,
}

/// Inventory of invariant objects at one parameter value.
#[derive(Clone, Debug, Serialize)]
pub struct RegionLabel {
    pub n_crossing: usize,
    /// Crossing-cycle stabilities, innermost first.
    pub stabilities: Vec<Stability>,
    /// Number of tangent points enclosed by each crossing cycle.
    pub encloses: Vec<usize>,
    pub sliding: SlidingLabel,
    pub sliding_arrival: Option<String>,
    /// `none` or `through-...`.
    pub critical: String,
    pub connections: Vec<Connection>,
    pub pseudo_eq: usize,
    /// Some part of the classification failed; see `notes`.
    pub partial: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Default for RegionLabel {
    fn default() -> Self {
        RegionLabel {
            n_crossing: 0,
            stabilities: Vec::new(),
            encloses: Vec::new(),
            sliding: SlidingLabel::None,
            sliding_arrival: None,
            critical: "none".into(),
            connections: Vec::new(),
            pseudo_eq: 0,
            partial: false,
            notes: Vec::new(),
        }
    }
}

impl RegionLabel {
    /// Cycle content only: crossing cycles, sliding cycle, critical cycle.
    pub fn core_key(&self) -> String {
        let cyc: Vec<String> =
            self.stabilities.iter().zip(&self.encloses).map(|(s, e)| format!("{}/{}", s.name(), e)).collect();
        let sl = match self.sliding {
            SlidingLabel::None => "none".to_string(),
            SlidingLabel::Stable => format!("stable/{}", self.sliding_arrival.as_deref().unwrap_or("?")),
            SlidingLabel::Unstable => format!("unstable/{}", self.sliding_arrival.as_deref().unwrap_or("?")),
        };
        format!("crossing={}[{}] sliding={} critical={}", self.n_crossing, cyc.join(","), sl, self.critical)
    }

    /// Compact identifier; two cells are in the same region iff keys agree.
    pub fn key(&self) -> String {
        let conn: Vec<String> = self.connections.iter().map(|c| c.key()).collect();
        format!(
            "{} connections=[{}] pe={}{}",
            self.core_key(),
            conn.join(","),
            self.pseudo_eq,
            if self.partial { " partial" } else { "" }
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label serializes")
    }
}

/// Signed gap functions of the fold-fold case.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Gaps {
    pub phi1: f64,
    /// `ϑ1⁻`: the upper fold near `-a` is `-ϑ1⁻`.
    pub theta_minus: f64,
    /// `ϑ1⁺`: the upper fold near `a`.
    pub theta_plus: f64,
    /// Pseudo-equilibrium between the folds near `a`.
    pub varpi: Option<f64>,
    /// `σ⁺(-ϑ1⁻) - σ⁻(ϑ1⁺)`.
    pub g5: f64,
    /// `σ⁺(-ϑ1⁻) - σ⁻(ϖ)`.
    pub g6: Option<f64>,
    /// `σ⁺(-ϖ) - σ⁻(ϑ1⁺)`.
    pub g7: Option<f64>,
    /// `T2(-ϑ1⁻)`.
    pub t2_minus: f64,
    /// `T2(-ϑ1⁺)`.
    pub t2_plus: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CycleOptions {
    /// Half-width of the search windows around `∓a`, relative to `a`.
    pub window: f64,
    /// Scan intervals per crossing segment.
    pub scan: usize,
    /// `|T'|` below this at a root makes the cycle double.
    pub derivative_tol: f64,
    /// `|T|` below this at a tangency makes a critical crossing cycle.
    pub critical_tol: f64,
    /// Gap values below this count as zero.
    pub connection_tol: f64,
    /// Symmetric-closure tolerance of the sliding-cycle construction.
    pub closure_tol: f64,
    /// `|φ1|` below this counts as zero.
    pub phi1_tol: f64,
    pub fd_h: f64,
    pub boundary: BoundaryTolerances,
    pub flow: FilippovOptions,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            window: 0.135,
            scan: 8,
            derivative_tol: 1e-4,
            critical_tol: 1e-9,
            connection_tol: 1e-9,
            closure_tol: 1e-7,
            phi1_tol: 1e-12,
            fd_h: 1e-5,
            boundary: BoundaryTolerances::default(),
            flow: FilippovOptions::default(),
        }
    }
}

/// A tangent point near `(-a, 0)` and the name of its mirror near `(a, 0)`.
#[derive(Clone, Debug, Serialize)]
pub struct NamedTangency {
    pub x: f64,
    pub name: String,
    pub mirror: String,
    pub class: BoundaryClass,
}

impl NamedTangency {
    fn upper(&self) -> bool {
        matches!(self.class, BoundaryClass::TangentUpper(_))
    }
    fn visible_fold(&self) -> bool {
        matches!(
            self.class,
            BoundaryClass::TangentUpper(Tangency::Fold { visible: true })
                | BoundaryClass::TangentLower(Tangency::Fold { visible: true })
        )
    }
}

fn tangency_names(case: Case, class: BoundaryClass) -> (&'static str, &'static str) {
    use BoundaryClass::*;
    match (case, class) {
        (Case::FoldFold, TangentUpper(_)) => ("T_u-", "T_l+"),
        (Case::FoldFold, TangentLower(_)) => ("T_l-", "T_u+"),
        (_, TangentUpper(Tangency::Fold { visible: true })) => ("T_v-", "T_v+"),
        (_, TangentUpper(Tangency::Fold { visible: false })) => ("T_iv-", "T_iv+"),
        (_, TangentUpper(Tangency::Cusp)) => ("T_c-", "T_c+"),
        (_, TangentLower(_)) => ("T_l-", "T_u+"),
        (_, FoldFold { .. }) => ("T_ff-", "T_ff+"),
        _ => ("T?-", "T?+"),
    }
}

/// Cycle and connection detection for one model and case.
#[derive(Clone, Debug)]
pub struct Analyzer<'a> {
    pub maps: Maps<'a>,
    pub case: Case,
    pub opts: CycleOptions,
    /// Transit time of the critical orbit at `alpha = 0`.
    pub tau0: f64,
}

/// A critical cycle together with the tangent points near `-a` it uses.
struct Critical {
    record: CycleRecord,
    passes: Vec<f64>,
}

impl<'a> Analyzer<'a> {
    pub fn new(model: &'a FilippovModel, case: Case) -> Result<Analyzer<'a>> {
        Analyzer::with_options(model, case, MapOptions::default(), CycleOptions::default())
    }

    pub fn with_options(
        model: &'a FilippovModel,
        case: Case,
        map_opts: MapOptions,
        opts: CycleOptions,
    ) -> Result<Analyzer<'a>> {
        let maps = Maps::with_options(model, map_opts)?;
        let tau0 = critical_orbit(model, Mode::Plain, &map_opts.arc)?.tau();
        Ok(Analyzer { maps, case, opts, tau0 })
    }

    pub fn model(&self) -> &'a FilippovModel {
        self.maps.model
    }

    fn window(&self, centre: f64) -> (f64, f64) {
        let w = self.opts.window * self.model().a;
        (centre - w, centre + w)
    }

    /// Boundary portrait on the window around `centre`.
    pub fn portrait(&self, centre: f64, alpha: &[f64]) -> Result<BoundaryPortrait> {
        boundary_portrait(self.model(), self.window(centre), alpha, &self.opts.boundary)
    }

    /// Tangent points near `(-a, 0)`, left to right.
    pub fn tangencies(&self, portrait: &BoundaryPortrait) -> Vec<NamedTangency> {
        portrait
            .tangent_points
            .iter()
            .map(|t| {
                let (name, mirror) = tangency_names(self.case, t.class);
                NamedTangency { x: t.x, name: name.into(), mirror: mirror.into(), class: t.class }
            })
            .collect()
    }

    fn encloses(&self, x0: f64, tangencies: &[NamedTangency]) -> Vec<String> {
        let mut out = Vec::new();
        for t in tangencies.iter().filter(|t| t.x > x0) {
            out.push(t.name.clone());
            out.push(t.mirror.clone());
        }
        out
    }

    fn fd<F: Fn(f64) -> Result<f64>>(&self, f: F, x: f64) -> Result<f64> {
        let h = self.opts.fd_h;
        Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
    }

    /// Derivative of the full map at `x` near `-a`, composed from the half
    /// maps in the fold-fold case (the landing there is nearly tangential).
    fn sigma_x(&self, x: f64, alpha: &[f64], x_right: f64, method: Method) -> Result<f64> {
        let m = &self.maps;
        match self.case {
            Case::FoldFold => {
                let (p, q) = match method {
                    Method::Fd => (
                        self.fd(|u| m.sigma_half(MapKind::Plus, u, alpha), x)?,
                        self.fd(|u| m.sigma_half(MapKind::Minus, u, alpha), x_right)?,
                    ),
                    Method::Analytic => (
                        m.derivative(MapKind::Plus, Partial::X, x, alpha, Method::Analytic)?,
                        m.derivative(MapKind::Minus, Partial::X, x_right, alpha, Method::Analytic)?,
                    ),
                };
                Ok(p / q)
            }
            _ => match method {
                Method::Fd => self.fd(|u| m.sigma_full(u, alpha), x),
                Method::Analytic => m.derivative(MapKind::Full, Partial::X, x, alpha, Method::Analytic),
            },
        }
    }

    /// `R'(x0)` of the Z2 return map `R(x) = -σ(-σ(x))` at a symmetric
    /// cycle through `(x0, 0)` and `(x1, 0)`, by centered differences.
    fn r_prime(&self, x0: f64, x1: f64, alpha: &[f64]) -> Result<f64> {
        let s0 = self.sigma_x(x0, alpha, x1, Method::Fd)?;
        let s1 = self.sigma_x(-x1, alpha, -x0, Method::Fd)?;
        Ok(s0 * s1)
    }

    pub fn return_map_derivative(&self, alpha: &[f64], cycle: &CycleRecord) -> Result<f64> {
        match cycle.kind {
            CycleKind::Sliding => Err(Error::Domain("sliding cycles have no smooth return map".into())),
            _ => {
                let (x0, x1) =
                    *cycle.sigma.first().ok_or_else(|| Error::Domain("cycle without intersections".into()))?;
                self.r_prime(x0, x1, alpha)
            }
        }
    }

    /// Gap functions of the fold-fold case.
    pub fn gap_functions(&self, alpha: &[f64]) -> Result<Gaps> {
        let model = self.model();
        let a = model.a;
        let m = &self.maps;
        let theta_minus = -fold_root(model, -a, alpha)?;
        let theta_plus = fold_root(model, a, alpha)?;
        let phi1 = theta_plus - theta_minus;
        let varpi = if phi1.abs() > self.opts.phi1_tol {
            let (lo, hi) = (theta_minus.min(theta_plus), theta_minus.max(theta_plus));
            let pad = 1e-9 * (hi - lo);
            let f = |x: f64| sliding_numerator(model, x, alpha);
            let (fl, fh) = (f(lo + pad)?, f(hi - pad)?);
            brent_with(f, lo + pad, fl, hi - pad, fh, 1e-16, 0.0).ok()
        } else {
            None
        };
        let plus = |x: f64| m.sigma_half(MapKind::Plus, x, alpha);
        let minus = |x: f64| m.sigma_half(MapKind::Minus, x, alpha);
        let p_tm = plus(-theta_minus)?;
        let m_tp = minus(theta_plus)?;
        let g5 = p_tm - m_tp;
        let (g6, g7) = match varpi {
            Some(w) => (Some(p_tm - minus(w)?), Some(plus(-w)? - m_tp)),
            None => (None, None),
        };
        let t2_minus = p_tm - minus(theta_minus)?;
        let t2_plus = plus(-theta_plus)? - m_tp;
        Ok(Gaps { phi1, theta_minus, theta_plus, varpi, g5, g6, g7, t2_minus, t2_plus })
    }

    /// Connection inventory of the fold-fold case from the gap signs.
    pub fn connections_from_gaps(&self, g: &Gaps) -> Vec<Connection> {
        use ConnectionKind::*;
        let tol = self.opts.connection_tol;
        let zero = |v: f64| v.abs() <= tol;
        let mut out = Vec::new();
        if g.phi1.abs() <= self.opts.phi1_tol || g.varpi.is_none() {
            if zero(g.g5) {
                out.push(Connection::new(TangentTangent, "T_u-", "T_u+"));
            }
            return out;
        }
        let (g6, g7) = (g.g6.unwrap_or(f64::NAN), g.g7.unwrap_or(f64::NAN));
        if g.phi1 > 0.0 {
            // Forward orbit from T_u-.
            if zero(g.g5) {
                out.push(Connection::new(TangentTangent, "T_u-", "T_u+"));
            } else if g.g5 < 0.0 {
                if zero(g6) {
                    out.push(Connection::new(TangentEquilibrium, "T_u-", "E_p+"));
                } else if g6 > 0.0 {
                    out.push(Connection::new(TangentTangentWithSliding, "T_u-", "T_u+"));
                } else if zero(g.t2_minus) {
                    out.push(Connection::new(TangentTangent, "T_u-", "T_l+"));
                } else if g.t2_minus > 0.0 {
                    out.push(Connection::new(TangentTangentWithSliding, "T_u-", "T_l+"));
                }
            }
        } else {
            // Backward orbit from T_u+.
            if zero(g.g5) {
                out.push(Connection::new(TangentTangent, "T_u-", "T_u+"));
            } else if g.g5 > 0.0 {
                if zero(g7) {
                    out.push(Connection::new(TangentEquilibrium, "E_p-", "T_u+"));
                } else if g7 < 0.0 {
                    out.push(Connection::new(TangentTangentWithSliding, "T_u-", "T_u+"));
                } else if zero(g.t2_plus) {
                    out.push(Connection::new(TangentTangent, "T_l-", "T_u+"));
                } else if g.t2_plus < 0.0 {
                    out.push(Connection::new(TangentTangentWithSliding, "T_l-", "T_u+"));
                }
            }
        }
        out
    }

    pub fn find_connections(&self, alpha: &[f64]) -> Result<Vec<Connection>> {
        if self.case != Case::FoldFold {
            return Ok(Vec::new());
        }
        Ok(self.connections_from_gaps(&self.gap_functions(alpha)?))
    }

    fn critical_record(&self, x0: f64, x1: f64, sub_kind: &str, alpha: &[f64], passes: Vec<f64>) -> Result<Critical> {
        let s0 = self.sigma_x(x0, alpha, x1, Method::Analytic)?;
        let s1 = self.sigma_x(-x1, alpha, -x0, Method::Analytic)?;
        let r = s0 * s1;
        let stability = if r.abs() < 1.0 { Stability::InternallyStable } else { Stability::InternallyUnstable };
        Ok(Critical {
            record: CycleRecord {
                kind: CycleKind::CriticalCrossing,
                sub_kind: sub_kind.into(),
                sigma: vec![(x0, x1)],
                landing: None,
                return_map_derivative: Some(r),
                stability,
                encloses: Vec::new(),
            },
            passes,
        })
    }

    fn critical_cycles(&self, alpha: &[f64], tangencies: &[NamedTangency], gaps: Option<&Gaps>) -> Result<Vec<Critical>> {
        let model = self.model();
        let m = &self.maps;
        let tol = self.opts.critical_tol;
        let mut out = Vec::new();
        match self.case {
            Case::Codim1 => {
                for t in tangencies.iter().filter(|t| t.upper() && t.visible_fold()) {
                    let x1 = m.sigma_full(t.x, alpha)?;
                    if (x1 + t.x).abs() <= tol {
                        out.push(self.critical_record(t.x, x1, "through-fold", alpha, vec![t.x])?);
                    }
                }
            }
            Case::Cusp => {
                let c = cusp_roots(model, alpha)?;
                match c.roots {
                    Some(_) => {
                        if let Some(tv) = tangencies.iter().find(|t| t.upper() && t.visible_fold()) {
                            let x1 = m.sigma_full(tv.x, alpha)?;
                            if (x1 + tv.x).abs() <= tol {
                                out.push(self.critical_record(tv.x, x1, "through-fold", alpha, vec![tv.x])?);
                            }
                            // The backward image may leave the window; then no
                            // cycle can pass through it.
                            let image = match m.backward_fold_map(tv.x, alpha) {
                                Ok(xg) => m.sigma_full(xg, alpha).ok().map(|x1| (xg, x1)),
                                Err(Error::Domain(_)) => None,
                                Err(e) => return Err(e),
                            };
                            if let Some((xg, x1)) = image.filter(|(xg, x1)| (x1 + xg).abs() <= tol) {
                                out.push(self.critical_record(
                                    xg,
                                    x1,
                                    "through-backward-fold-image",
                                    alpha,
                                    vec![tv.x],
                                )?);
                            }
                        }
                    }
                    None if c.phi1.abs() <= self.opts.phi1_tol => {
                        let xc = -c.xi1;
                        let x1 = m.sigma_full(xc, alpha)?;
                        if (x1 + xc).abs() <= tol {
                            out.push(self.critical_record(xc, x1, "through-cusp", alpha, vec![xc])?);
                        }
                    }
                    None => {}
                }
            }
            Case::FoldFold => {
                let owned;
                let g = match gaps {
                    Some(g) => g,
                    None => {
                        owned = self.gap_functions(alpha)?;
                        &owned
                    }
                };
                let zero = |v: f64| v.abs() <= tol;
                if g.phi1.abs() <= self.opts.phi1_tol {
                    if zero(g.g5) {
                        let x0 = -g.theta_minus;
                        out.push(self.critical_record(x0, -x0, "through-fold-fold", alpha, vec![x0])?);
                    }
                } else if g.phi1 > 0.0 && zero(g.t2_minus) {
                    let x0 = -g.theta_minus;
                    out.push(self.critical_record(x0, -x0, "through-folds T_u-,T_l+", alpha, vec![x0])?);
                } else if g.phi1 < 0.0 && zero(g.t2_plus) {
                    let x0 = -g.theta_plus;
                    out.push(self.critical_record(x0, -x0, "through-folds T_l-,T_u+", alpha, vec![x0])?);
                }
            }
        }
        Ok(out)
    }

    fn crossing_record(&self, x0: f64, x1: f64, t_prime: f64, alpha: &[f64], tangencies: &[NamedTangency]) -> Result<CycleRecord> {
        let r = self.r_prime(x0, x1, alpha)?;
        let stability = if t_prime.abs() < self.opts.derivative_tol {
            Stability::Double
        } else if r.abs() < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        };
        Ok(CycleRecord {
            kind: CycleKind::Crossing,
            sub_kind: if stability == Stability::Double { "fold-of-cycles".into() } else { "hyperbolic".into() },
            sigma: vec![(x0, x1)],
            landing: None,
            return_map_derivative: Some(r),
            stability,
            encloses: self.encloses(x0, tangencies),
        })
    }

    /// Crossing cycles as zeros of `T1` on the crossing-up segments.
    fn crossing_t1(&self, alpha: &[f64], portrait: &BoundaryPortrait, tangencies: &[NamedTangency]) -> Result<Vec<CycleRecord>> {
        let m = &self.maps;
        let mut out = Vec::new();
        let segs = portrait.segments.iter().filter(|s| s.class == BoundaryClass::CrossingUp);
        for seg in segs {
            let (lo, hi) = (seg.x_lo, seg.x_hi);
            let t1 = |x: f64| m.t1(x, alpha);
            let (_, brackets) = scan(t1, lo, hi, self.opts.scan)?;
            for br in brackets {
                let x0 = brent_with(t1, br.a, br.fa, br.b, br.fb, 1e-14, 0.0)?;
                // Orbits through the sliding shadow dip through the line
                // before reaching (a, 0); those zeros are not cycles.
                let landing = m.full_landing(x0, alpha)?;
                if !landing.passes.is_empty() {
                    continue;
                }
                let tp = self.fd(t1, x0)?;
                out.push(self.crossing_record(x0, landing.x, tp, alpha, tangencies)?);
            }
        }
        Ok(out)
    }

    /// Crossing cycles as zeros of `T2` around its maximum.
    fn crossing_t2(&self, alpha: &[f64], tangencies: &[NamedTangency]) -> Result<Vec<CycleRecord>> {
        let model = self.model();
        let m = &self.maps;
        let (xs, t2s, t2xx) = t2_critical(m, alpha)?;
        if t2xx >= 0.0 {
            return Err(Error::Degenerate(format!("T2 has no maximum near -a (T2_xx = {t2xx})")));
        }
        // T2 is unimodal on its domain, which starts at the rightmost of the
        // two fold images; the maximum may lie beyond that edge.
        let a = model.a;
        let edge = fold_root(model, -a, alpha)?.max(-fold_root(model, a, alpha)?);
        let floor = edge + 1e-9 * a;
        let (_, whi) = self.window(-a);
        let t2 = |x: f64| m.t2(x, alpha);
        let mut roots: Vec<(f64, bool)> = Vec::new();
        let (xm, tm) = if xs > floor { (xs, t2s) } else { (floor, t2(floor)?) };
        if xs > floor && t2s.abs() <= self.opts.critical_tol {
            roots.push((xs, true));
        } else if tm > 0.0 {
            let mut found = Vec::new();
            if xs > floor {
                let tf = t2(floor)?;
                if tf < 0.0 {
                    found.push(brent_with(t2, floor, tf, xm, tm, 1e-15, 0.0)?);
                }
            }
            let mut w = if xs > floor { 2.0 * (-2.0 * t2s / t2xx).sqrt() } else { 1e-3 * a };
            loop {
                let b = (xm + w).min(whi);
                let fb = t2(b)?;
                if fb < 0.0 {
                    found.push(brent_with(t2, xm, tm, b, fb, 1e-15, 0.0)?);
                    break;
                }
                if b >= whi {
                    break;
                }
                w *= 2.0;
            }
            let slopes: Vec<f64> = found.iter().map(|&r| m.t2_x(r, alpha)).collect::<Result<_>>()?;
            if found.len() == 2 && slopes.iter().all(|s| s.abs() < self.opts.derivative_tol) {
                roots.push((xs, true));
            } else {
                roots.extend(found.into_iter().map(|r| (r, false)));
            }
        }
        let mut out = Vec::new();
        for (x0, double) in roots {
            let l = lie_data(model, x0, alpha)?;
            if !(l.zph > 0.0 && l.zmh > 0.0) {
                continue;
            }
            let tp = if double { 0.0 } else { m.t2_x(x0, alpha)? };
            let x1 = m.full_landing(x0, alpha)?.x;
            out.push(self.crossing_record(x0, x1, tp, alpha, tangencies)?);
        }
        Ok(out)
    }

    /// Filippov half-orbit from the tangency at `p`; a sliding cycle when
    /// the first sliding exit is the mirror point `-p`.
    fn shoot(&self, p: f64, direction: Direction, alpha: &[f64], tangencies: &[NamedTangency]) -> Result<Option<CycleRecord>> {
        let fo = FilippovOptions { max_exits: 1, ..self.opts.flow };
        let t_max = 1.5 * self.tau0 + 1.0;
        let tr = match flow_filippov_with(self.model(), (p, 0.0), alpha, t_max, direction, &fo) {
            Ok(t) => t,
            Err(Error::Ambiguous(_)) | Err(Error::Degenerate(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let closes = |t: &crate::flow::Trajectory| {
            t.events
                .iter()
                .find(|e| e.kind == EventKind::SlidingExit)
                .is_some_and(|e| (e.x + p).abs() <= self.opts.closure_tol)
        };
        // A graze passes within the touch tolerance of the line. Landing there
        // instead of touching must give the same verdict, otherwise the
        // answer is not decided at this accuracy.
        if let Some(g) = tr.events.iter().take_while(|e| e.kind != EventKind::SlidingExit).find(|e| e.kind == EventKind::Graze) {
            let landed = match flow_filippov_with(self.model(), (g.x, 0.0), alpha, t_max, direction, &fo) {
                Ok(t) => closes(&t),
                Err(Error::Ambiguous(_)) | Err(Error::Degenerate(_)) => false,
                Err(e) => return Err(e),
            };
            // Touching the mirror point is reaching the sliding exit itself.
            let at_mirror = (g.x + p).abs() <= self.opts.closure_tol;
            if at_mirror || landed != closes(&tr) {
                return Err(Error::Ambiguous(format!("half-orbit from {p} grazes the line at x = {}", g.x)));
            }
        }
        let exit = match tr.events.iter().find(|e| e.kind == EventKind::SlidingExit) {
            Some(e) => e.x,
            None => return Ok(None),
        };
        if (exit + p).abs() > self.opts.closure_tol {
            return Ok(None);
        }
        let k = match tr.arcs.iter().position(|a| a.regime == Regime::Sliding) {
            Some(k) => k,
            None => return Ok(None),
        };
        let landing = tr.arcs[k].start().0;
        let from = match k.checked_sub(1).map(|i| tr.arcs[i].regime) {
            Some(Regime::Lower) => "from-lower",
            _ => "from-upper",
        };
        let at = tangencies
            .iter()
            .find(|t| (t.x + landing).abs() <= self.opts.closure_tol)
            .map_or_else(|| "interior".to_string(), |t| format!("at-{}", t.mirror));
        let stability = if direction == Direction::Forward { Stability::Stable } else { Stability::Unstable };
        Ok(Some(CycleRecord {
            kind: CycleKind::Sliding,
            sub_kind: format!("{from} {at}"),
            sigma: vec![(p, exit)],
            landing: Some(landing),
            return_map_derivative: None,
            stability,
            encloses: Vec::new(),
        }))
    }

    fn sliding_cycles(&self, alpha: &[f64], tangencies: &[NamedTangency], skip: &[f64]) -> Result<Vec<CycleRecord>> {
        let model = self.model();
        let mut out = Vec::new();
        for (i, t) in tangencies.iter().enumerate() {
            if !t.visible_fold() || skip.iter().any(|&s| (s - t.x).abs() <= self.opts.closure_tol) {
                continue;
            }
            // Probe the neighbours closer than any other tangency.
            let gap = tangencies
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| (o.x - t.x).abs())
                .fold(f64::INFINITY, f64::min);
            let d = (0.25 * gap).min(1e-7 * model.a);
            let zero_tol = BoundaryTolerances { tangency: 0.0, ..self.opts.boundary };
            let mut sliding = None;
            for x in [t.x - d, t.x + d] {
                match classify_lie(&lie_data(model, x, alpha)?, &zero_tol) {
                    BoundaryClass::SlidingStable => sliding = Some(true),
                    BoundaryClass::SlidingUnstable => sliding = Some(false),
                    _ => {}
                }
            }
            // Upper orbits near -a follow the critical orbit forward in
            // time, lower ones follow its mirror backward.
            let direction = match (t.upper(), sliding) {
                (true, Some(true)) => Direction::Forward,
                (false, Some(false)) => Direction::Backward,
                _ => continue,
            };
            if let Some(c) = self.shoot(t.x, direction, alpha, tangencies)? {
                out.push(c);
            }
        }
        Ok(out)
    }

    fn cycles_with(
        &self,
        alpha: &[f64],
        portrait: &BoundaryPortrait,
        gaps: Option<&Gaps>,
    ) -> Result<(Vec<CycleRecord>, Vec<CycleRecord>)> {
        let tangencies = self.tangencies(portrait);
        let critical = self.critical_cycles(alpha, &tangencies, gaps)?;
        let crossing = match self.case {
            Case::FoldFold => self.crossing_t2(alpha, &tangencies)?,
            _ => self.crossing_t1(alpha, portrait, &tangencies)?,
        };
        let near_critical = |x: f64| {
            critical.iter().any(|c| (c.record.sigma[0].0 - x).abs() <= self.opts.closure_tol)
        };
        let mut cycles: Vec<CycleRecord> = crossing.into_iter().filter(|c| !near_critical(c.sigma[0].0)).collect();
        // Innermost (closest to the origin) first.
        cycles.sort_by(|a, b| b.sigma[0].0.total_cmp(&a.sigma[0].0));
        let skip: Vec<f64> = critical.iter().flat_map(|c| c.passes.iter().copied()).collect();
        cycles.extend(self.sliding_cycles(alpha, &tangencies, &skip)?);
        Ok((cycles, critical.into_iter().map(|c| c.record).collect()))
    }

    /// Crossing, sliding and critical crossing cycles at `alpha`.
    pub fn find_cycles(&self, alpha: &[f64]) -> Result<Vec<CycleRecord>> {
        self.model().check_alpha(alpha)?;
        let portrait = self.portrait(-self.model().a, alpha)?;
        let (mut cycles, critical) = self.cycles_with(alpha, &portrait, None)?;
        cycles.extend(critical);
        Ok(cycles)
    }

    /// Full inventory; failures of a part are noted and mark the label partial.
    pub fn classify(&self, alpha: &[f64]) -> RegionLabel {
        let mut label = RegionLabel::default();
        let note = |label: &mut RegionLabel, what: &str, e: Error| {
            label.partial = true;
            label.notes.push(format!("{what}: {e}"));
        };
        if let Err(e) = self.model().check_alpha(alpha) {
            note(&mut label, "parameters", e);
            return label;
        }
        let a = self.model().a;
        let left = match self.portrait(-a, alpha) {
            Ok(p) => p,
            Err(e) => {
                note(&mut label, "boundary portrait", e);
                return label;
            }
        };
        match self.portrait(a, alpha) {
            Ok(right) => label.pseudo_eq = left.pseudo_equilibria.len() + right.pseudo_equilibria.len(),
            Err(e) => note(&mut label, "boundary portrait", e),
        }
        let gaps = if self.case == Case::FoldFold {
            match self.gap_functions(alpha) {
                Ok(g) => Some(g),
                Err(e) => {
                    note(&mut label, "gap functions", e);
                    None
                }
            }
        } else {
            None
        };
        if let Some(g) = &gaps {
            label.connections = self.connections_from_gaps(g);
        }
        match self.cycles_with(alpha, &left, gaps.as_ref()) {
            Ok((cycles, critical)) => {
                for c in &cycles {
                    match c.kind {
                        CycleKind::Crossing => {
                            label.n_crossing += 1;
                            label.stabilities.push(c.stability);
                            label.encloses.push(c.encloses.len());
                        }
                        CycleKind::Sliding => {
                            label.sliding = if c.stability == Stability::Unstable {
                                SlidingLabel::Unstable
                            } else {
                                SlidingLabel::Stable
                            };
                            label.sliding_arrival = Some(c.sub_kind.clone());
                        }
                        CycleKind::CriticalCrossing => {}
                    }
                }
                if let Some(c) = critical.first() {
                    label.critical = c.sub_kind.clone();
                }
            }
            Err(e) => note(&mut label, "cycles", e),
        }
        label
    }
}

/// Cycles of `model` at `alpha`; `window` is the search half-width around
/// `∓a` relative to `a`.
pub fn find_cycles(model: &FilippovModel, case: Case, alpha: &[f64], window: f64) -> Result<Vec<CycleRecord>> {
    let opts = CycleOptions { window, ..CycleOptions::default() };
    let map_opts = MapOptions { window: window.max(MapOptions::default().window), ..MapOptions::default() };
    Analyzer::with_options(model, case, map_opts, opts)?.find_cycles(alpha)
}

pub fn find_connections(model: &FilippovModel, alpha: &[f64]) -> Result<Vec<Connection>> {
    Analyzer::new(model, Case::FoldFold)?.find_connections(alpha)
}

pub fn classify_dynamics(model: &FilippovModel, case: Case, alpha: &[f64]) -> RegionLabel {
    match Analyzer::new(model, case) {
        Ok(an) => an.classify(alpha),
        Err(e) => RegionLabel { partial: true, notes: vec![format!("setup: {e}")], ..RegionLabel::default() },
    }
}

pub fn return_map_derivative(model: &FilippovModel, case: Case, alpha: &[f64], cycle: &CycleRecord) -> Result<f64> {
    Analyzer::new(model, case)?.return_map_derivative(alpha, cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    #[test]
    fn s1_crossing_cycle_below_threshold() {
        let m = load_scenario("s1").unwrap();
        let an = Analyzer::new(&m, Case::Codim1).unwrap();
        let cycles = an.find_cycles(&[-1e-3, 0.0]).unwrap();
        assert_eq!(cycles.len(), 1, "{cycles:?}");
        let c = &cycles[0];
        assert_eq!(c.kind, CycleKind::Crossing);
        assert_eq!(c.stability, Stability::Stable);
        assert!(c.encloses.is_empty());
        let r = c.return_map_derivative.unwrap();
        assert!((0.0..1.0).contains(&r));
        // R' = σ_x^2 from the Liouville formula.
        let s = an.maps.derivative(MapKind::Full, Partial::X, c.sigma[0].0, &[-1e-3, 0.0], Method::Analytic).unwrap();
        assert!((r - s * s).abs() < 1e-6, "{r} {}", s * s);
        assert!(c.symmetry_defect() < 1e-7);
    }

    #[test]
    fn s1_sliding_cycle_above_threshold() {
        let m = load_scenario("s1").unwrap();
        let an = Analyzer::new(&m, Case::Codim1).unwrap();
        let cycles = an.find_cycles(&[1e-3, 0.0]).unwrap();
        assert_eq!(cycles.len(), 1, "{cycles:?}");
        let c = &cycles[0];
        assert_eq!(c.kind, CycleKind::Sliding);
        assert_eq!(c.stability, Stability::Stable);
        assert!(c.sub_kind.starts_with("from-upper"));
        assert!(c.symmetry_defect() < 1e-7);
    }

    #[test]
    fn s1_critical_cycle_at_origin() {
        let m = load_scenario("s1").unwrap();
        let an = Analyzer::new(&m, Case::Codim1).unwrap();
        let label = an.classify(&[0.0, 0.0]);
        assert_eq!(label.critical, "through-fold", "{}", label.key());
        assert_eq!(label.n_crossing, 0);
        assert_eq!(label.sliding, SlidingLabel::None);
    }

    #[test]
    fn s3_gaps_vanish_at_origin() {
        let m = load_scenario("s3").unwrap();
        let an = Analyzer::new(&m, Case::FoldFold).unwrap();
        let g = an.gap_functions(&[0.0, 0.0]).unwrap();
        assert!(g.phi1.abs() < 1e-12);
        assert!(g.g5.abs() < 1e-9 && g.t2_minus.abs() < 1e-9 && g.t2_plus.abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn stability_names_are_kebab_case() {
        let json = serde_json::to_string(&Stability::InternallyStable).unwrap();
        assert_eq!(json, "\"internally-stable\"");
        assert_eq!(Stability::InternallyStable.name(), "internally-stable");
    }
}
