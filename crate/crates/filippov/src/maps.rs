//! Transition maps along the critical orbit: the half maps to an interior
//! section, the full map back to the switching line, `T1`, `T2`, the local
//! backward fold map, and their derivatives.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate_arc, replay_to_level, Arc, ArcOptions, Crossing, Direction, Mode, Stop, Terminal};
use crate::model::{FilippovModel, Side};

/// The interior section `{(x, c) : |x - b| < delta}` crossed by the critical
/// orbit on its descending branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectionSpec {
    pub b: f64,
    pub c: f64,
    pub delta: f64,
}

/// Which transit a map describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Forward from near `(-a, 0)` to the section.
    Plus,
    /// Backward from near `(a, 0)` to the section.
    Minus,
    /// Forward from near `(-a, 0)` back to the switching line near `(a, 0)`.
    Full,
}

/// A partial derivative of a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partial {
    X,
    XX,
    Alpha(usize),
    XAlpha(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Analytic,
    Fd,
}

#[derive(Clone, Copy, Debug)]
pub struct MapOptions {
    pub arc: ArcOptions,
    /// Half-width of the map domains around `-a` and `a`, relative to `a`.
    pub window: f64,
    /// Section half-width relative to `a`.
    pub section_width: f64,
    /// Finite-difference steps for first and second order.
    pub fd_h1: f64,
    pub fd_h2: f64,
    /// Evaluate second derivatives from the closed variational formulas
    /// instead of differencing the analytic first derivative.
    pub analytic_second: bool,
    /// `|g|` at a landing below this makes the full map non-transversal.
    pub transversality_tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            arc: ArcOptions::default(),
            window: 0.15,
            section_width: 0.1,
            fd_h1: 1e-5,
            fd_h2: 1e-4,
            analytic_second: false,
            transversality_tol: 1e-9,
        }
    }
}

/// Upper-field orbit from `(-a, 0)` at `alpha = 0` until it returns to the
/// switching line near `(a, 0)`, transversally or by a touch.
pub fn critical_orbit(model: &FilippovModel, mode: Mode, opts: &ArcOptions) -> Result<Arc> {
    let a = model.a;
    let alpha = model.zero_alpha();
    let o = ArcOptions { mode, keep_dense: true, ..*opts };
    integrate_arc(
        model,
        Side::Upper,
        (-a, 0.0),
        &alpha,
        Direction::Forward,
        Stop::Boundary { window: Some((0.5 * a, 1.5 * a)), touch: true },
        &o,
    )
}

/// Maximum of `y` along a dense arc, as `(t, x, y)`.
pub fn arc_peak(arc: &Arc) -> (f64, f64, f64) {
    let mut best = (arc.t_start, f64::NEG_INFINITY);
    for d in &arc.dense {
        for k in 0..=16 {
            let s = d.s0 + d.h * k as f64 / 16.0;
            let y = d.eval(1, s);
            if y > best.1 {
                best = (s, y);
            }
        }
    }
    // Golden-section refinement around the best sample.
    let sgn = arc.direction.sign();
    let s_end = arc.tau().abs();
    let h = arc.dense.iter().map(|d| d.h).fold(0.0, f64::max) / 16.0;
    let (mut lo, mut hi) = ((best.0 - h).max(0.0), (best.0 + h).min(s_end));
    let yat = |s: f64| arc.interpolate(arc.t_start + sgn * s).map_or(f64::NEG_INFINITY, |p| p[1]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - r * (hi - lo);
        let m2 = lo + r * (hi - lo);
        if yat(m1) < yat(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let s = 0.5 * (lo + hi);
    let p = arc.interpolate(arc.t_start + sgn * s).unwrap_or([0.0, best.1, 0.0]);
    (arc.t_start + sgn * s, p[0], p[1])
}

/// Picks the section point on the descending branch of the critical orbit at
/// half its maximal height.
pub fn reference_section(model: &FilippovModel, opts: &MapOptions) -> Result<SectionSpec> {
    let a = model.a;
    let alpha = model.zero_alpha();
    let orbit = critical_orbit(model, Mode::Plain, &opts.arc)
        .map_err(|e| Error::Hypothesis(format!("critical orbit from (-a, 0) does not return: {e}")))?;
    let (_, _, y_max) = arc_peak(&orbit);
    if y_max <= 0.0 {
        return Err(Error::Hypothesis("critical orbit does not enter y > 0".into()));
    }
    let c = 0.5 * y_max;
    let shoot = |sense| {
        integrate_arc(
            model,
            Side::Upper,
            (-a, 0.0),
            &alpha,
            Direction::Forward,
            Stop::Section { level: c, sense, window: None },
            &opts.arc,
        )
    };
    let down = shoot(Crossing::Down)?;
    let up = shoot(Crossing::Up)?;
    let b = down.end().0;
    let (_, g) = model.eval_field(Side::Upper, b, c, &alpha)?;
    if g >= 0.0 {
        return Err(Error::Hypothesis(format!("no descending branch at height {c}")));
    }
    let delta = opts.section_width * a;
    if (up.end().0 - b).abs() <= delta {
        return Err(Error::Degenerate("section meets the critical orbit twice".into()));
    }
    Ok(SectionSpec { b, c, delta })
}

/// Landing data of a single transit.
#[derive(Clone, Debug)]
pub struct Landing {
    pub x: f64,
    /// Signed physical transit time.
    pub t: f64,
    /// Crossings of the target line outside the landing window.
    pub passes: Vec<[f64; 3]>,
    pub arc: Arc,
}

/// Map evaluator bound to one model and one section.
#[derive(Clone, Debug)]
pub struct Maps<'a> {
    pub model: &'a FilippovModel,
    pub section: SectionSpec,
    pub opts: MapOptions,
}

impl<'a> Maps<'a> {
    pub fn new(model: &'a FilippovModel) -> Result<Maps<'a>> {
        Maps::with_options(model, MapOptions::default())
    }

    pub fn with_options(model: &'a FilippovModel, opts: MapOptions) -> Result<Maps<'a>> {
        let section = reference_section(model, &opts)?;
        Ok(Maps { model, section, opts })
    }

    fn g(&self, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.model.eval_field(Side::Upper, x, y, alpha)?.1)
    }

    fn start_window(&self, centre: f64) -> (f64, f64) {
        let w = self.opts.window * self.model.a;
        (centre - w, centre + w)
    }

    fn check_domain(&self, kind: MapKind, x: f64) -> Result<()> {
        let a = self.model.a;
        let centre = if kind == MapKind::Minus { a } else { -a };
        let (lo, hi) = self.start_window(centre);
        if x < lo || x > hi {
            return Err(Error::Domain(format!("x = {x} outside the map window [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn transit(&self, kind: MapKind, x: f64, alpha: &[f64], mode: Mode) -> Result<Landing> {
        self.check_domain(kind, x)?;
        let a = self.model.a;
        let s = self.section;
        let (dir, stop) = match kind {
            MapKind::Plus => (
                Direction::Forward,
                Stop::Section { level: s.c, sense: Crossing::Down, window: Some((s.b - s.delta, s.b + s.delta)) },
            ),
            MapKind::Minus => (
                Direction::Backward,
                Stop::Section { level: s.c, sense: Crossing::Up, window: Some((s.b - s.delta, s.b + s.delta)) },
            ),
            MapKind::Full => (Direction::Forward, Stop::Boundary { window: Some((0.5 * a, 1.5 * a)), touch: false }),
        };
        let opts = ArcOptions { mode, ..self.opts.arc };
        let arc = integrate_arc(self.model, Side::Upper, (x, 0.0), alpha, dir, stop, &opts).map_err(|e| match e {
            Error::TimeOut(m) => Error::Domain(format!("orbit misses its target: {m}")),
            e => e,
        })?;
        Ok(Landing { x: arc.end().0, t: arc.tau(), passes: arc.passes.clone(), arc })
    }

    /// `σ⁺` (forward to the section) or `σ⁻` (backward to the section).
    pub fn sigma_half(&self, kind: MapKind, x: f64, alpha: &[f64]) -> Result<f64> {
        debug_assert!(kind != MapKind::Full);
        Ok(self.transit(kind, x, alpha, Mode::Plain)?.x)
    }

    /// Full transit with landing data; used for admissibility checks.
    pub fn full_landing(&self, x: f64, alpha: &[f64]) -> Result<Landing> {
        self.transit(MapKind::Full, x, alpha, Mode::Plain)
    }

    /// `σ`: forward from `(x, 0)` back to the switching line near `(a, 0)`.
    pub fn sigma_full(&self, x: f64, alpha: &[f64]) -> Result<f64> {
        let l = self.full_landing(x, alpha)?;
        let g = self.g(l.x, 0.0, alpha)?;
        if g.abs() < self.opts.transversality_tol {
            return Err(Error::Domain(format!("non-transversal landing at x = {} (g = {g:e})", l.x)));
        }
        Ok(l.x)
    }

    pub fn map(&self, kind: MapKind, x: f64, alpha: &[f64]) -> Result<f64> {
        match kind {
            MapKind::Full => self.sigma_full(x, alpha),
            k => self.sigma_half(k, x, alpha),
        }
    }

    /// `T1(x) = σ(x) + x`.
    pub fn t1(&self, x: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.sigma_full(x, alpha)? + x)
    }

    /// `T2(x) = σ⁺(x) - σ⁻(-x)`.
    pub fn t2(&self, x: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.sigma_half(MapKind::Plus, x, alpha)? - self.sigma_half(MapKind::Minus, -x, alpha)?)
    }

    /// `dT2/dx = σ⁺_x(x) + σ⁻_x(-x)` from the Liouville expression.
    pub fn t2_x(&self, x: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.sigma_x_liouville(MapKind::Plus, x, alpha)? + self.sigma_x_liouville(MapKind::Minus, -x, alpha)?)
    }

    /// `T2` and its derivative together.
    pub fn t2_with_x(&self, x: f64, alpha: &[f64]) -> Result<(f64, f64)> {
        let p = self.transit(MapKind::Plus, x, alpha, Mode::Divergence)?;
        let m = self.transit(MapKind::Minus, -x, alpha, Mode::Divergence)?;
        let dp = self.liouville(x, &p, alpha)?;
        let dm = self.liouville(-x, &m, alpha)?;
        Ok((p.x - m.x, dp + dm))
    }

    /// Local return of the upper orbit through `(x, 0)` near `(-a, 0)`:
    /// backward when the orbit arrives from above (`g < 0`), forward when
    /// it leaves upward (`g > 0`). Both points lie on one arc above the
    /// line, so the map is an involution.
    pub fn backward_fold_map(&self, x: f64, alpha: &[f64]) -> Result<f64> {
        let a = self.model.a;
        let g = self.g(x, 0.0, alpha)?;
        let dir = if g.abs() <= 1e-13 {
            // On a tangency: a visible fold is left backward, anything else is fixed.
            if self.model.upper_lie(x, alpha)?.z2h > 0.0 {
                Direction::Backward
            } else {
                return Ok(x);
            }
        } else if g < 0.0 {
            Direction::Backward
        } else {
            Direction::Forward
        };
        let w = self.opts.window * a;
        let arc = integrate_arc(
            self.model,
            Side::Upper,
            (x, 0.0),
            alpha,
            dir,
            Stop::Boundary { window: Some((-a - w, -a + w)), touch: false },
            &self.opts.arc,
        )
        .map_err(|e| Error::Domain(format!("orbit from ({x}, 0) does not return near (-a, 0): {e}")))?;
        Ok(arc.end().0)
    }

    fn target_level(&self, kind: MapKind) -> f64 {
        if kind == MapKind::Full {
            0.0
        } else {
            self.section.c
        }
    }

    fn liouville(&self, x: f64, l: &Landing, alpha: &[f64]) -> Result<f64> {
        let (x1, y1) = l.arc.end();
        let d = l.arc.div_integral().expect("divergence integrated");
        Ok(self.g(x, 0.0, alpha)? / self.g(x1, y1, alpha)? * d.exp())
    }

    fn sigma_x_liouville(&self, kind: MapKind, x: f64, alpha: &[f64]) -> Result<f64> {
        let l = self.transit(kind, x, alpha, Mode::Divergence)?;
        self.liouville(x, &l, alpha)
    }

    /// A partial derivative of `σ⁺`, `σ⁻` or `σ`.
    pub fn derivative(&self, kind: MapKind, which: Partial, x: f64, alpha: &[f64], method: Method) -> Result<f64> {
        match method {
            Method::Analytic => self.analytic(kind, which, x, alpha),
            Method::Fd => self.finite_difference(kind, which, x, alpha),
        }
    }

    fn analytic(&self, kind: MapKind, which: Partial, x: f64, alpha: &[f64]) -> Result<f64> {
        let h2 = self.opts.fd_h2;
        match which {
            Partial::X => self.sigma_x_liouville(kind, x, alpha),
            Partial::Alpha(i) => {
                check_index(self.model, i)?;
                let l = self.transit(kind, x, alpha, Mode::Variational)?;
                let (x1, y1) = l.arc.end();
                let d = l.arc.div_integral().unwrap();
                Ok(-l.arc.adjoint_integral(i).unwrap() * d.exp() / self.g(x1, y1, alpha)?)
            }
            Partial::XX if !self.opts.analytic_second => {
                let p = self.sigma_x_liouville(kind, x + h2, alpha)?;
                let m = self.sigma_x_liouville(kind, x - h2, alpha)?;
                Ok((p - m) / (2.0 * h2))
            }
            Partial::XAlpha(i) if !self.opts.analytic_second => {
                check_index(self.model, i)?;
                let mut ap = alpha.to_vec();
                let mut am = alpha.to_vec();
                ap[i] += h2;
                am[i] -= h2;
                let p = self.sigma_x_liouville(kind, x, &ap)?;
                let m = self.sigma_x_liouville(kind, x, &am)?;
                Ok((p - m) / (2.0 * h2))
            }
            Partial::XX => self.second_variational(kind, None, x, alpha),
            Partial::XAlpha(i) => {
                check_index(self.model, i)?;
                self.second_variational(kind, Some(i), x, alpha)
            }
        }
    }

    /// Second derivatives from the variational data of one arc: the
    /// quotient rule on `g(x,0)/g(x1,y1)` plus the derivative of the
    /// exponent `D(τ)`, whose end moves with `τ_x = -y_x(τ)/g(x1, y1)`.
    fn second_variational(&self, kind: MapKind, alpha_i: Option<usize>, x: f64, alpha: &[f64]) -> Result<f64> {
        let model = self.model;
        let l = self.transit(kind, x, alpha, Mode::Variational)?;
        let arc = &l.arc;
        let (x1, y1) = arc.end();
        let ed = arc.div_integral().unwrap().exp();
        let g0 = self.g(x, 0.0, alpha)?;
        let g1 = self.g(x1, y1, alpha)?;
        let gx1 = model.gx(x1, y1, alpha)?;
        let sx = g0 / g1 * ed;
        let mut jet = crate::model::Jet::new(model.m);
        model.eval_jet(Side::Upper, x1, y1, alpha, &mut jet)?;
        let div1 = jet.div();
        match alpha_i {
            None => {
                let gx0 = model.gx(x, 0.0, alpha)?;
                let y_x = arc.phi().unwrap()[1][0];
                let quot = (gx0 * g1 - g0 * gx1 * sx) / (g1 * g1) * ed;
                Ok(quot + sx * (-div1 / g1 * y_x + arc.grad_div_x().unwrap()))
            }
            Some(i) => {
                let s_a = -arc.adjoint_integral(i).unwrap() * ed / g1;
                let ga0 = model.g_alpha(i, x, 0.0, alpha)?;
                let ga1 = jet.ga[i];
                let y_a = arc.sensitivity(i).unwrap().1;
                let quot = (ga0 * g1 - g0 * (gx1 * s_a + ga1)) / (g1 * g1) * ed;
                Ok(quot
                    + sx * (-div1 / g1 * y_a + arc.grad_div_alpha(i).unwrap() + arc.div_alpha_integral(i).unwrap()))
            }
        }
    }

    /// Replays the base transit with perturbed data so that differences are
    /// free of step-selection noise.
    fn replayed(&self, kind: MapKind, base: &Landing, x: f64, alpha: &[f64]) -> Result<f64> {
        let dir = if kind == MapKind::Minus { Direction::Backward } else { Direction::Forward };
        let st = replay_to_level(
            self.model,
            Side::Upper,
            (x, 0.0),
            alpha,
            dir,
            &base.arc,
            self.target_level(kind),
            Mode::Plain,
            &self.opts.arc,
        )?;
        Ok(st[0])
    }

    fn finite_difference(&self, kind: MapKind, which: Partial, x: f64, alpha: &[f64]) -> Result<f64> {
        let base = self.transit(kind, x, alpha, Mode::Plain)?;
        let (h1, h2) = (self.opts.fd_h1, self.opts.fd_h2);
        let at = |dx: f64, i: Option<usize>, da: f64| -> Result<f64> {
            let mut al = alpha.to_vec();
            if let Some(i) = i {
                al[i] += da;
            }
            self.replayed(kind, &base, x + dx, &al)
        };
        match which {
            Partial::X => Ok((at(h1, None, 0.0)? - at(-h1, None, 0.0)?) / (2.0 * h1)),
            Partial::Alpha(i) => {
                check_index(self.model, i)?;
                Ok((at(0.0, Some(i), h1)? - at(0.0, Some(i), -h1)?) / (2.0 * h1))
            }
            Partial::XX => {
                Ok((at(h2, None, 0.0)? - 2.0 * at(0.0, None, 0.0)? + at(-h2, None, 0.0)?) / (h2 * h2))
            }
            Partial::XAlpha(i) => {
                check_index(self.model, i)?;
                let v = at(h2, Some(i), h2)? - at(h2, Some(i), -h2)? - at(-h2, Some(i), h2)? + at(-h2, Some(i), -h2)?;
                Ok(v / (4.0 * h2 * h2))
            }
        }
    }

    /// CSV trace `x,value,derivative` of a map over `xs`.
    pub fn trace_csv(&self, kind: MapKind, xs: &[f64], alpha: &[f64]) -> Result<String> {
        let mut out = String::from("x,value,derivative\n");
        for &x in xs {
            let v = self.map(kind, x, alpha)?;
            let d = self.sigma_x_liouville(kind, x, alpha)?;
            let _ = writeln!(out, "{x:.17e},{v:.17e},{d:.17e}");
        }
        Ok(out)
    }
}

fn check_index(model: &FilippovModel, i: usize) -> Result<()> {
    if i >= model.m {
        return Err(Error::Domain(format!("parameter index {} exceeds arity {}", i + 1, model.m)));
    }
    Ok(())
}

/// True when an arc ended by touching rather than crossing.
pub fn is_touch(arc: &Arc) -> bool {
    arc.terminal == Terminal::Touch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn s1_section_at_half_height() {
        let m = load_scenario("s1").unwrap();
        let s = reference_section(&m, &MapOptions::default()).unwrap();
        // Peak of y(x) = ∫ -(u+1)(u-1/3) du at x = 1/3 is 32/81.
        assert!(close(s.c, 16.0 / 81.0, 1e-9), "{s:?}");
        assert!(s.b > 1.0 / 3.0 && s.b < 1.0);
        let (_, g) = m.eval_field(Side::Upper, s.b, s.c, &[0.0, 0.0]).unwrap();
        assert!(g < 0.0);
    }

    #[test]
    fn s1_half_maps_meet_at_section_point() {
        let m = load_scenario("s1").unwrap();
        let maps = Maps::new(&m).unwrap();
        let z = [0.0, 0.0];
        let p = maps.sigma_half(MapKind::Plus, -1.0, &z).unwrap();
        let q = maps.sigma_half(MapKind::Minus, 1.0, &z).unwrap();
        assert!((p - maps.section.b).abs() < 1e-9);
        assert!((q - maps.section.b).abs() < 1e-9);
        assert!((maps.sigma_full(-1.0, &z).unwrap() - 1.0).abs() < 1e-9);
        assert!(maps.t1(-1.0, &z).unwrap().abs() < 1e-9);
    }

    #[test]
    fn s1_full_map_derivatives() {
        let m = load_scenario("s1").unwrap();
        let maps = Maps::new(&m).unwrap();
        let z = [0.0, 0.0];
        for method in [Method::Analytic, Method::Fd] {
            let sa = maps.derivative(MapKind::Full, Partial::Alpha(0), -1.0, &z, method).unwrap();
            assert!(close(sa, 1.5, 1e-6), "{method:?} {sa}");
            let sxx = maps.derivative(MapKind::Full, Partial::XX, -1.0, &z, method).unwrap();
            assert!(close(sxx, -1.0, 1e-5), "{method:?} {sxx}");
        }
        let sx = maps.derivative(MapKind::Plus, Partial::X, -1.0, &z, Method::Analytic).unwrap();
        assert_eq!(sx, 0.0);
    }

    #[test]
    fn variational_second_derivatives_agree_with_differenced_first() {
        let m = load_scenario("s3").unwrap();
        let mut maps = Maps::new(&m).unwrap();
        // Close to the fold the default 1e-4 difference step is too coarse
        // for a 1e-6 comparison.
        maps.opts.fd_h2 = 1e-5;
        let al = [2e-3, -1e-3];
        for kind in [MapKind::Plus, MapKind::Minus] {
            let x = if kind == MapKind::Plus { -0.97 } else { 1.02 };
            for which in [Partial::XX, Partial::XAlpha(0), Partial::XAlpha(1)] {
                maps.opts.analytic_second = false;
                let d1 = maps.derivative(kind, which, x, &al, Method::Analytic).unwrap();
                maps.opts.analytic_second = true;
                let d2 = maps.derivative(kind, which, x, &al, Method::Analytic).unwrap();
                assert!(close(d1, d2, 1e-6), "{kind:?} {which:?}: {d1} vs {d2}");
            }
        }
    }

    #[test]
    fn s3_t2_vanishes_on_the_critical_orbit() {
        let m = load_scenario("s3").unwrap();
        let maps = Maps::new(&m).unwrap();
        let z = [0.0, 0.0];
        let (t, tx) = maps.t2_with_x(-1.0, &z).unwrap();
        assert!(t.abs() < 1e-9 && tx.abs() < 1e-9, "{t} {tx}");
    }

    #[test]
    fn fold_map_is_an_involution() {
        let m = load_scenario("s2").unwrap();
        let maps = Maps::new(&m).unwrap();
        // g(x, 0) < 0 on roughly (-1.008, -0.992).
        let al = [-1e-4, 0.0];
        for x in [-1.005, -1.0, -0.995] {
            let p = maps.backward_fold_map(x, &al).unwrap();
            assert!(p < -1.008, "{x} -> {p}");
            let pp = maps.backward_fold_map(p, &al).unwrap();
            assert!((pp - x).abs() < 1e-7, "{x} -> {p} -> {pp}");
        }
    }
}
