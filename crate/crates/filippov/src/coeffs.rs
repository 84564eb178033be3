//! Bifurcation coefficients along the critical orbit and measured unfolding
//! coordinates.
//!
//! Integrals along the orbit are evaluated twice: by adaptive Gauss-Kronrod
//! quadrature on the dense interpolant and by co-integration with the orbit.
//! The quadrature values are reported; the discrepancy feeds the error bars.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{integrate_arc, Arc, ArcOptions, Crossing, Direction, Mode, Stop};
use crate::maps::{critical_orbit, MapKind, Maps, SectionSpec};
use crate::model::{Case, FilippovModel, Jet, Side};
use crate::quad;
use crate::roots::{brent, brent_with};

/// Absolute tolerance of the orbit quadratures.
pub const QUAD_TOL: f64 = 1e-11;

/// Denominators below this make a derived coefficient undefined.
const SINGULAR: f64 = 1e-10;

/// Leading values of the fold-fold curve coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Varthetas {
    pub vartheta3: f64,
    pub vartheta4: f64,
    pub vartheta5: f64,
    pub vartheta6: f64,
    pub vartheta7: f64,
}

impl Varthetas {
    /// `ϑ4 < ϑ6 < ϑ5 < ϑ7 < ϑ3`.
    pub fn ordered(&self) -> bool {
        self.vartheta4 < self.vartheta6
            && self.vartheta6 < self.vartheta5
            && self.vartheta5 < self.vartheta7
            && self.vartheta7 < self.vartheta3
    }
}

/// Field partials at the two ends of the critical orbit (`alpha = 0`).
#[derive(Clone, Debug, Serialize)]
pub struct EndPartials {
    pub f_left: f64,
    pub f_right: f64,
    pub g_right: f64,
    pub gx_left: f64,
    pub gx_right: f64,
    pub gxx_left: f64,
    pub g_alpha_left: Vec<f64>,
    pub g_alpha_right: Vec<f64>,
    pub gx_alpha_left: Vec<f64>,
    pub g_section: f64,
}

/// Estimated absolute errors of the reported values.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ErrorBars {
    pub tau0: f64,
    pub lambda0: f64,
    pub lambda_plus0: f64,
    pub lambda_minus0: f64,
    pub kappa: Vec<f64>,
    pub kappa_plus: Vec<f64>,
    pub kappa_minus: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoefficientReport {
    pub case: Case,
    pub model_hash: String,
    pub tau0: f64,
    pub lambda0: f64,
    pub lambda_plus0: f64,
    pub lambda_minus0: f64,
    pub kappa: Vec<f64>,
    pub kappa_plus: Vec<f64>,
    pub kappa_minus: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    pub zeta: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub r: Option<f64>,
    pub vartheta_leading: Option<Varthetas>,
    pub section: SectionSpec,
    /// Landing error of the critical orbit at `(a, 0)`.
    pub landing_error: f64,
    pub partials: EndPartials,
    pub errors: ErrorBars,
}

impl CoefficientReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Linear part of the measured unfolding map `alpha -> beta` for the
    /// report's case, one row per coordinate.
    pub fn unfolding_jacobian(&self) -> Option<Vec<Vec<f64>>> {
        match self.case {
            Case::Codim1 => Some(vec![self.theta.clone()?]),
            Case::Cusp => Some(vec![self.zeta.clone()?, self.eta.clone()?]),
            Case::FoldFold => {
                let k2: Vec<f64> = self.kappa.iter().map(|k| 2.0 * k / self.delta).collect();
                Some(vec![self.mu.clone()?, k2])
            }
        }
    }
}

/// Orbit integral `∫_0^τ λ(t) (f g_{a_i} - g f_{a_i}) dt` with
/// `λ(t) = exp(D(τ) - D(t))`, by quadrature over each dense step.
fn kappa_quadrature(model: &FilippovModel, arc: &Arc, i: usize) -> Result<quad::Quadrature> {
    let alpha = model.zero_alpha();
    let sgn = arc.direction.sign();
    let d_end = arc.div_integral().ok_or_else(|| Error::Domain("arc without divergence".into()))?;
    let mut jet = Jet::new(model.m);
    let mut total = quad::Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    let tol = QUAD_TOL / arc.dense.len().max(1) as f64;
    let s_end = arc.tau().abs();
    for d in &arc.dense {
        let hi = (d.s0 + d.h).min(s_end);
        if hi <= d.s0 {
            continue;
        }
        let q = quad::integrate(
            |s| {
                let (x, y, dd) = (d.eval(0, s), d.eval(1, s), d.eval(2, s));
                model.eval_jet(Side::Upper, x, y, &alpha, &mut jet)?;
                Ok((d_end - dd).exp() * (jet.f * jet.ga[i] - jet.g * jet.fa[i]))
            },
            d.s0,
            hi,
            tol,
        )?;
        total.value += q.value;
        total.error += q.error;
        total.evaluations += q.evaluations;
    }
    total.value *= sgn;
    Ok(total)
}

/// `∫_0^τ div dt` by quadrature on the dense arc.
fn divergence_quadrature(model: &FilippovModel, arc: &Arc) -> Result<quad::Quadrature> {
    let alpha = model.zero_alpha();
    let sgn = arc.direction.sign();
    let mut jet = Jet::new(model.m);
    let mut total = quad::Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    let tol = QUAD_TOL / arc.dense.len().max(1) as f64;
    let s_end = arc.tau().abs();
    for d in &arc.dense {
        let hi = (d.s0 + d.h).min(s_end);
        if hi <= d.s0 {
            continue;
        }
        let q = quad::integrate(
            |s| {
                model.eval_jet(Side::Upper, d.eval(0, s), d.eval(1, s), &alpha, &mut jet)?;
                Ok(jet.div())
            },
            d.s0,
            hi,
            tol,
        )?;
        total.value += q.value;
        total.error += q.error;
    }
    total.value *= sgn;
    Ok(total)
}

struct OrbitIntegrals {
    tau: f64,
    lambda: f64,
    lambda_err: f64,
    kappa: Vec<f64>,
    kappa_err: Vec<f64>,
    end: (f64, f64),
}

fn orbit_integrals(model: &FilippovModel, arc: &Arc) -> Result<OrbitIntegrals> {
    let d_ode = arc.div_integral().unwrap();
    let dq = divergence_quadrature(model, arc)?;
    let lambda = dq.value.exp();
    let lambda_err = lambda * ((dq.value - d_ode).abs() + dq.error);
    let mut kappa = Vec::with_capacity(model.m);
    let mut kappa_err = Vec::with_capacity(model.m);
    for i in 0..model.m {
        let q = kappa_quadrature(model, arc, i)?;
        let ode = d_ode.exp() * arc.adjoint_integral(i).unwrap();
        kappa.push(q.value);
        kappa_err.push((q.value - ode).abs() + q.error);
    }
    Ok(OrbitIntegrals { tau: arc.tau(), lambda, lambda_err, kappa, kappa_err, end: arc.end() })
}

fn section_arc(model: &FilippovModel, s: &SectionSpec, kind: MapKind, opts: &ArcOptions) -> Result<Arc> {
    let a = model.a;
    let (x0, dir, sense) = match kind {
        MapKind::Plus => (-a, Direction::Forward, Crossing::Down),
        _ => (a, Direction::Backward, Crossing::Up),
    };
    let o = ArcOptions { mode: Mode::Variational, keep_dense: true, ..*opts };
    integrate_arc(
        model,
        Side::Upper,
        (x0, 0.0),
        &model.zero_alpha(),
        dir,
        Stop::Section { level: s.c, sense, window: Some((s.b - s.delta, s.b + s.delta)) },
        &o,
    )
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den.abs() > SINGULAR).then(|| num / den)
}

fn end_partials(model: &FilippovModel, s: &SectionSpec) -> Result<EndPartials> {
    let a = model.a;
    let z = model.zero_alpha();
    let (f_left, _) = model.eval_field(Side::Upper, -a, 0.0, &z)?;
    let (f_right, g_right) = model.eval_field(Side::Upper, a, 0.0, &z)?;
    let (_, g_section) = model.eval_field(Side::Upper, s.b, s.c, &z)?;
    let mut p = EndPartials {
        f_left,
        f_right,
        g_right,
        gx_left: model.gx(-a, 0.0, &z)?,
        gx_right: model.gx(a, 0.0, &z)?,
        gxx_left: model.gxx(-a, 0.0, &z)?,
        g_alpha_left: Vec::new(),
        g_alpha_right: Vec::new(),
        gx_alpha_left: Vec::new(),
        g_section,
    };
    for i in 0..model.m {
        p.g_alpha_left.push(model.g_alpha(i, -a, 0.0, &z)?);
        p.g_alpha_right.push(model.g_alpha(i, a, 0.0, &z)?);
        p.gx_alpha_left.push(model.gx_alpha(i, -a, 0.0, &z)?);
    }
    Ok(p)
}

/// Coefficients without any hypothesis gating.
pub fn raw_report(model: &FilippovModel, case: Case, maps: &Maps<'_>) -> Result<CoefficientReport> {
    let opts = &maps.opts.arc;
    let m = model.m;
    let orbit = critical_orbit(model, Mode::Variational, opts)
        .map_err(|e| Error::Hypothesis(format!("critical orbit does not return: {e}")))?;
    let main = orbit_integrals(model, &orbit)?;
    let plus = orbit_integrals(model, &section_arc(model, &maps.section, MapKind::Plus, opts)?)?;
    let minus = orbit_integrals(model, &section_arc(model, &maps.section, MapKind::Minus, opts)?)?;
    let p = end_partials(model, &maps.section)?;
    let a = model.a;
    let landing_error = (main.end.0 - a).abs() + main.end.1.abs();

    let lam = main.lambda;
    let delta = p.gx_left * lam - p.gx_right;
    let per = |f: &dyn Fn(usize) -> Option<f64>| -> Option<Vec<f64>> { (0..m).map(f).collect() };
    let theta = per(&|i| Some(ratio(-main.kappa[i], p.g_right)? - ratio(p.g_alpha_left[i], p.gx_left)?));
    let zeta = per(&|i| ratio(-2.0 * p.g_alpha_left[i], p.gxx_left));
    let eta = per(&|i| Some(ratio(-main.kappa[i], p.g_right)? - ratio(p.gx_alpha_left[i], p.gxx_left)?));
    let mu = per(&|i| Some(-ratio(p.g_alpha_left[i], p.gx_left)? - ratio(p.g_alpha_right[i], p.gx_right)?));
    let r = ratio(-p.f_left * p.gx_right, p.gx_left * p.f_right + p.gx_right * p.f_left);
    let vartheta = match (ratio(p.gx_right, delta), r) {
        (Some(q), Some(r)) => {
            let t4 = q * q;
            let t3 = (1.0 + q) * (1.0 + q);
            Some(Varthetas {
                vartheta3: t3,
                vartheta4: t4,
                vartheta5: t4 + q,
                vartheta6: t4 + (1.0 - (1.0 + r) * (1.0 + r)) * q,
                vartheta7: t3 + (r * r - 1.0) * lam * p.gx_left / delta,
            })
        }
        _ => None,
    };

    // Vectors that belong to another case are left out of the report.
    let (theta, zeta, eta, mu, r, vartheta) = match case {
        Case::Codim1 => (theta, None, None, None, None, None),
        Case::Cusp => (None, zeta, eta, None, None, None),
        Case::FoldFold => (None, None, None, mu, r, vartheta),
    };

    let errors = ErrorBars {
        tau0: maps.opts.arc.event_tol / p.g_section.abs().max(1e-3),
        lambda0: main.lambda_err,
        lambda_plus0: plus.lambda_err,
        lambda_minus0: minus.lambda_err,
        kappa: main.kappa_err.clone(),
        kappa_plus: plus.kappa_err,
        kappa_minus: minus.kappa_err,
        theta: theta.as_ref().map(|_| main.kappa_err.iter().map(|e| e / p.g_right.abs()).collect()),
        eta: eta.as_ref().map(|_| main.kappa_err.iter().map(|e| e / p.g_right.abs()).collect()),
        delta: p.gx_left.abs() * main.lambda_err,
    };

    Ok(CoefficientReport {
        case,
        model_hash: model.hash(),
        tau0: main.tau,
        lambda0: lam,
        lambda_plus0: plus.lambda,
        lambda_minus0: minus.lambda,
        kappa: main.kappa,
        kappa_plus: plus.kappa,
        kappa_minus: minus.kappa,
        theta,
        zeta,
        eta,
        mu,
        delta,
        r,
        vartheta_leading: vartheta,
        section: maps.section,
        landing_error,
        partials: p,
        errors,
    })
}

/// Full coefficient report for `case`; fails when the case's hypotheses do
/// not hold at `alpha = 0`.
pub fn coefficient_report(model: &FilippovModel, case: Case) -> Result<CoefficientReport> {
    let maps = Maps::new(model)?;
    let rep = raw_report(model, case, &maps)?;
    let hyp = crate::model::hypotheses_from_report(model, case, &rep, &Default::default())?;
    if !hyp.holds() {
        return Err(Error::Hypothesis(hyp.failures().join("; ")));
    }
    Ok(rep)
}

/// `ξ2(z, α) = ∫_0^1 σ_x(tz - ξ1(α), 0; α) dt` and `ξ3 = ξ̃3 - ξ2`, where
/// `ξ̃3` is the Taylor remainder of the fold map across the band
/// `[-z - ξ1, z - ξ1]`, normalised so that `-P(z - ξ1) = (3 + ξ̃3) z + ξ1`
/// when `-z - ξ1` is the invisible fold.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct XiValues {
    pub xi2: f64,
    pub xi3: f64,
    pub xi3_tilde: f64,
}

pub fn xi_functions(maps: &Maps<'_>, z: f64, alpha: &[f64]) -> Result<XiValues> {
    let cusp = cusp_roots(maps.model, alpha)?;
    let xi1 = cusp.xi1;
    let q = quad::integrate(
        |t| maps.derivative(MapKind::Full, crate::maps::Partial::X, t * z - xi1, alpha, crate::maps::Method::Analytic),
        0.0,
        1.0,
        1e-9,
    )?;
    let xi2 = q.value;
    if z == 0.0 {
        return Ok(XiValues { xi2, xi3: -xi2, xi3_tilde: 0.0 });
    }
    let left = -z - xi1;
    let p_left = maps.backward_fold_map(left, alpha)?;
    let h = maps.opts.fd_h1.max(1e-7 * z.abs());
    let px = (maps.backward_fold_map(left + h, alpha)? - maps.backward_fold_map(left - h, alpha)?) / (2.0 * h);
    let p_right = maps.backward_fold_map(z - xi1, alpha)?;
    let xi3_tilde = -(p_right - p_left - 2.0 * z * px) / z;
    Ok(XiValues { xi2, xi3: xi3_tilde - xi2, xi3_tilde })
}

/// Root structure of `g(x, 0)` near `(-a, 0)` in the cusp unfolding.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CuspRoots {
    pub phi1: f64,
    pub xi1: f64,
    /// `(x*-, x*+)` when `g` changes sign near `-a`.
    pub roots: Option<(f64, f64)>,
}

fn window(model: &FilippovModel, centre: f64) -> (f64, f64) {
    let w = 0.15 * model.a;
    (centre - w, centre + w)
}

/// `φ1 = ((x+ - x-)/2)^2`, `ξ1 = -(x+ + x-)/2` from the two roots of `g`
/// near `-a`; without roots, `φ1 = -2 g_min / g_xx` at the minimum of `g`.
pub fn cusp_roots(model: &FilippovModel, alpha: &[f64]) -> Result<CuspRoots> {
    let (lo, hi) = window(model, -model.a);
    let x_min = brent(|x| model.gx(x, 0.0, alpha), lo, hi, 1e-15)?;
    let g = |x: f64| Ok(model.eval_field(Side::Upper, x, 0.0, alpha)?.1);
    let g_min = g(x_min)?;
    let gxx = model.gxx(x_min, 0.0, alpha)?;
    if gxx <= 0.0 {
        return Err(Error::Domain("g has no minimum near (-a, 0)".into()));
    }
    if g_min < 0.0 {
        let x_lo = brent_with(g, lo, g(lo)?, x_min, g_min, 1e-16, 0.0)?;
        let x_hi = brent_with(g, x_min, g_min, hi, g(hi)?, 1e-16, 0.0)?;
        let half = 0.5 * (x_hi - x_lo);
        return Ok(CuspRoots { phi1: half * half, xi1: -0.5 * (x_hi + x_lo), roots: Some((x_lo, x_hi)) });
    }
    Ok(CuspRoots { phi1: -2.0 * g_min / gxx, xi1: -x_min, roots: None })
}

/// Simple root of `g(x, 0)` in the window around `centre`.
pub fn fold_root(model: &FilippovModel, centre: f64, alpha: &[f64]) -> Result<f64> {
    let (lo, hi) = window(model, centre);
    let g = |x: f64| Ok(model.eval_field(Side::Upper, x, 0.0, alpha)?.1);
    // Widen from a narrow bracket so that distant roots are not picked up.
    let mut w = 1e-3 * model.a;
    loop {
        let (l, h) = ((centre - w).max(lo), (centre + w).min(hi));
        let (gl, gh) = (g(l)?, g(h)?);
        if gl.signum() != gh.signum() {
            return brent_with(g, l, gl, h, gh, 1e-16, 0.0);
        }
        if l <= lo && h >= hi {
            return Err(Error::NoBracket(format!("fold of g near x = {centre}")));
        }
        w *= 4.0;
    }
}

/// Measured unfolding coordinates at one parameter value.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "case", rename_all = "lowercase")]
pub enum MeasuredUnfolding {
    Codim1 {
        rho1: f64,
        /// Fold `-ϱ1`.
        fold: f64,
        /// Zero `ϱ2` of `T1`.
        t1_zero: f64,
    },
    Cusp {
        phi1: f64,
        xi1: f64,
        phi2: f64,
        roots: Option<(f64, f64)>,
    },
    #[serde(rename = "foldfold")]
    FoldFold {
        phi1: f64,
        phi2_hat: f64,
        /// `-ϑ1⁻`, the upper fold near `-a`.
        fold_left: f64,
        /// `ϑ1⁺`, the upper fold near `a`.
        fold_right: f64,
        x_star: f64,
        t2_star: f64,
        t2_xx: f64,
    },
}

impl MeasuredUnfolding {
    pub fn beta(&self) -> Vec<f64> {
        match *self {
            MeasuredUnfolding::Codim1 { rho1, .. } => vec![rho1],
            MeasuredUnfolding::Cusp { phi1, phi2, .. } => vec![phi1, phi2],
            MeasuredUnfolding::FoldFold { phi1, phi2_hat, .. } => vec![phi1, phi2_hat],
        }
    }
}

/// Zero of a monotone map near `centre`, widening the bracket as needed
/// but never below `floor`.
pub fn zero_near<F>(mut f: F, centre: f64, max_w: f64, floor: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut w = max_w / 64.0;
    loop {
        let (l, h) = ((centre - w).max(floor), centre + w);
        let (fl, fh) = (f(l)?, f(h)?);
        if fl.signum() != fh.signum() {
            return brent_with(f, l, fl, h, fh, xtol, 0.0);
        }
        if w >= max_w {
            return Err(Error::NoBracket(format!("zero near x = {centre}")));
        }
        w = (2.0 * w).min(max_w);
    }
}

/// Critical point of `T2` near `-a` as `(x*, T2(x*), T2_xx(x*))`.
///
/// `T2` is only defined right of both `-ϑ1⁻` and `-ϑ1⁺`: further left one of
/// the half orbits starts into the lower half plane and escapes. When the
/// maximum lies beyond that edge, the quadratic continuation from the edge
/// is returned instead.
pub fn t2_critical(maps: &Maps<'_>, alpha: &[f64]) -> Result<(f64, f64, f64)> {
    let model = maps.model;
    let a = model.a;
    let max_w = 0.9 * maps.opts.window * a;
    let edge = fold_root(model, -a, alpha)?.max(-fold_root(model, a, alpha)?);
    let floor = edge + 1e-9 * a;
    let h = maps.opts.fd_h2;
    let d_floor = maps.t2_x(floor, alpha)?;
    if d_floor <= 0.0 {
        let (d1, d2) = (maps.t2_x(floor + h, alpha)?, maps.t2_x(floor + 2.0 * h, alpha)?);
        let t2xx = (-3.0 * d_floor + 4.0 * d1 - d2) / (2.0 * h);
        let t2 = maps.t2(floor, alpha)?;
        let x_star = floor - d_floor / t2xx;
        return Ok((x_star, t2 - d_floor * d_floor / (2.0 * t2xx), t2xx));
    }
    let mut w = max_w / 64.0;
    let x_star = loop {
        let hi = floor + w;
        let d_hi = maps.t2_x(hi, alpha)?;
        if d_hi <= 0.0 {
            break brent_with(|x| maps.t2_x(x, alpha), floor, d_floor, hi, d_hi, 1e-13, 0.0)?;
        }
        if w >= max_w {
            return Err(Error::NoBracket(format!("critical point of T2 right of x = {edge}")));
        }
        w = (2.0 * w).min(max_w);
    };
    let h = h.min(0.5 * (x_star - edge));
    let t2xx = (maps.t2_x(x_star + h, alpha)? - maps.t2_x(x_star - h, alpha)?) / (2.0 * h);
    Ok((x_star, maps.t2(x_star, alpha)?, t2xx))
}

pub fn measured_unfolding(maps: &Maps<'_>, case: Case, alpha: &[f64]) -> Result<MeasuredUnfolding> {
    let model = maps.model;
    model.check_alpha(alpha)?;
    let a = model.a;
    match case {
        Case::Codim1 => {
            let fold = fold_root(model, -a, alpha)?;
            let w = 0.9 * maps.opts.window * a;
            let t1_zero = zero_near(|x| maps.t1(x, alpha), -a, w, f64::NEG_INFINITY, 1e-14)?;
            Ok(MeasuredUnfolding::Codim1 { rho1: fold - t1_zero, fold, t1_zero })
        }
        Case::Cusp => {
            let c = cusp_roots(model, alpha)?;
            let phi2 = maps.t1(-c.xi1, alpha)?;
            Ok(MeasuredUnfolding::Cusp { phi1: c.phi1, xi1: c.xi1, phi2, roots: c.roots })
        }
        Case::FoldFold => {
            let fold_left = fold_root(model, -a, alpha)?;
            let fold_right = fold_root(model, a, alpha)?;
            let (x_star, t2_star, t2_xx) = t2_critical(maps, alpha)?;
            if t2_xx >= 0.0 {
                return Err(Error::Degenerate(format!("T2 has no maximum near -a (T2_xx = {t2_xx})")));
            }
            Ok(MeasuredUnfolding::FoldFold {
                phi1: fold_left + fold_right,
                phi2_hat: -2.0 * t2_star / t2_xx,
                fold_left,
                fold_right,
                x_star,
                t2_star,
                t2_xx,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    fn report(name: &str, case: Case) -> CoefficientReport {
        let m = load_scenario(name).unwrap();
        let maps = Maps::new(&m).unwrap();
        raw_report(&m, case, &maps).unwrap()
    }

    fn near(v: &[f64], want: &[f64], tol: f64) -> bool {
        v.iter().zip(want).all(|(a, b)| (a - b).abs() < tol)
    }

    #[test]
    fn s1_theta() {
        let r = report("s1", Case::Codim1);
        assert!((r.tau0 - 2.0).abs() < 1e-9);
        assert!((r.lambda0 - 1.0).abs() < 1e-12);
        assert!(near(&r.kappa, &[2.0, 2.0], 1e-8), "{:?}", r.kappa);
        assert!(near(r.theta.as_ref().unwrap(), &[0.75, 1.5], 1e-8));
    }

    #[test]
    fn s2_zeta_eta() {
        let r = report("s2", Case::Cusp);
        assert!(near(r.zeta.as_ref().unwrap(), &[-2.0 / 3.0, 0.0], 1e-10));
        assert!(near(r.eta.as_ref().unwrap(), &[1.0, 2.0 / 3.0], 1e-8), "{:?}", r.eta);
    }

    #[test]
    fn s3_fold_fold_values() {
        let r = report("s3", Case::FoldFold);
        let e2 = 2f64.exp();
        assert!((r.lambda0 - e2).abs() < 1e-8);
        assert!(near(&r.kappa, &[e2 - 1.0, -2.0], 1e-8), "{:?}", r.kappa);
        assert!(r.theta.is_none());
        let v = r.vartheta_leading.unwrap();
        assert!(v.ordered(), "{v:?}");
        let rr = r.r.unwrap();
        assert!(rr > -1.0 && rr < 0.0);
        // Identity from the definition of Delta.
        let p = &r.partials;
        assert!((r.lambda0 * p.gx_left / r.delta - 1.0 - p.gx_right / r.delta).abs() < 1e-12);
    }

    #[test]
    fn section_identities() {
        for (name, case) in [("s1", Case::Codim1), ("s2", Case::Cusp), ("s3", Case::FoldFold)] {
            let r = report(name, case);
            assert!((r.lambda_minus0 * r.lambda0 - r.lambda_plus0).abs() < 1e-8, "{name}");
            for i in 0..2 {
                let want = r.kappa_plus[i] - r.kappa[i] * r.lambda_minus0;
                assert!((r.kappa_minus[i] - want).abs() < 1e-6 * want.abs().max(1.0), "{name} {i}");
            }
        }
    }

    #[test]
    fn s3_unfolding_vanishes_at_origin() {
        let m = load_scenario("s3").unwrap();
        let maps = Maps::new(&m).unwrap();
        let u = measured_unfolding(&maps, Case::FoldFold, &[0.0, 0.0]).unwrap();
        let b = u.beta();
        assert!(b[0].abs() < 1e-9 && b[1].abs() < 1e-9, "{u:?}");
    }

    #[test]
    fn s1_rho1_slope() {
        let m = load_scenario("s1").unwrap();
        let maps = Maps::new(&m).unwrap();
        let h = 1e-5;
        let p = measured_unfolding(&maps, Case::Codim1, &[h, 0.0]).unwrap().beta()[0];
        let q = measured_unfolding(&maps, Case::Codim1, &[-h, 0.0]).unwrap().beta()[0];
        assert!(((p - q) / (2.0 * h) - 0.75).abs() < 1e-4);
    }

    #[test]
    fn xi2_vanishes_at_origin() {
        let m = load_scenario("s2").unwrap();
        let maps = Maps::new(&m).unwrap();
        let v = xi_functions(&maps, 0.0, &[0.0, 0.0]).unwrap();
        assert!(v.xi2.abs() < 1e-9);
    }
}
