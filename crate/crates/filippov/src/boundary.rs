//! Points of the switching line: crossing and sliding sets, tangencies,
//! the sliding vector field and its pseudo-equilibria.
//!
//! With `h = y` and the lower field the reflection of the upper one, every
//! lower Lie derivative is `(Z^-)^k h (x) = -(Z^+)^k h (-x)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FilippovModel;
use crate::roots::{brent, newton_safe};

/// Lie derivatives of `h = y` along both fields at `(x, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LieData {
    pub zph: f64,
    pub zmh: f64,
    pub z2ph: f64,
    pub z2mh: f64,
    pub z3ph: f64,
    pub z3mh: f64,
}

impl LieData {
    /// Data of the time-reversed system (both fields negated).
    pub fn reversed(self) -> LieData {
        LieData {
            zph: -self.zph,
            zmh: -self.zmh,
            z2ph: self.z2ph,
            z2mh: self.z2mh,
            z3ph: -self.z3ph,
            z3mh: -self.z3mh,
        }
    }
}

pub fn lie_data(model: &FilippovModel, x: f64, alpha: &[f64]) -> Result<LieData> {
    let up = model.upper_lie(x, alpha)?;
    let lo = model.upper_lie(-x, alpha)?;
    Ok(LieData { zph: up.zh, zmh: -lo.zh, z2ph: up.z2h, z2mh: -lo.z2h, z3ph: up.z3h, z3mh: -lo.z3h })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tangency {
    Fold { visible: bool },
    Cusp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryClass {
    CrossingUp,
    CrossingDown,
    SlidingStable,
    SlidingUnstable,
    TangentUpper(Tangency),
    TangentLower(Tangency),
    FoldFold { upper: Tangency, lower: Tangency },
    BoundaryEquilibrium,
    HigherDegenerate,
}

impl BoundaryClass {
    pub fn name(&self) -> String {
        fn t(k: &Tangency) -> &'static str {
            match k {
                Tangency::Fold { visible: true } => "visible-fold",
                Tangency::Fold { visible: false } => "invisible-fold",
                Tangency::Cusp => "cusp",
            }
        }
        match self {
            BoundaryClass::CrossingUp => "crossing-up".into(),
            BoundaryClass::CrossingDown => "crossing-down".into(),
            BoundaryClass::SlidingStable => "sliding-stable".into(),
            BoundaryClass::SlidingUnstable => "sliding-unstable".into(),
            BoundaryClass::TangentUpper(k) => format!("upper-{}", t(k)),
            BoundaryClass::TangentLower(k) => format!("lower-{}", t(k)),
            BoundaryClass::FoldFold { upper, lower } => format!("fold-fold({}/{})", t(upper), t(lower)),
            BoundaryClass::BoundaryEquilibrium => "boundary-equilibrium".into(),
            BoundaryClass::HigherDegenerate => "higher-degenerate".into(),
        }
    }

    /// Class of the mirror point `-x` (upper and lower swap, crossing
    /// direction flips, sliding stability is kept).
    pub fn reflected(self) -> BoundaryClass {
        match self {
            BoundaryClass::CrossingUp => BoundaryClass::CrossingDown,
            BoundaryClass::CrossingDown => BoundaryClass::CrossingUp,
            BoundaryClass::TangentUpper(k) => BoundaryClass::TangentLower(k),
            BoundaryClass::TangentLower(k) => BoundaryClass::TangentUpper(k),
            BoundaryClass::FoldFold { upper, lower } => BoundaryClass::FoldFold { upper: lower, lower: upper },
            other => other,
        }
    }

    pub fn is_tangency(&self) -> bool {
        matches!(
            self,
            BoundaryClass::TangentUpper(_) | BoundaryClass::TangentLower(_) | BoundaryClass::FoldFold { .. }
        )
    }
}

impl Serialize for BoundaryClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

/// Tolerances for tangency detection.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryTolerances {
    /// `|Z h|` below this counts as tangent.
    pub tangency: f64,
    /// `|Z^2 h|` below this is not a fold; `Z^3 h` decides.
    pub fold: f64,
    /// Sample count for root bracketing in portraits.
    pub samples: usize,
}

impl Default for BoundaryTolerances {
    fn default() -> Self {
        BoundaryTolerances { tangency: 1e-11, fold: 1e-8, samples: 400 }
    }
}

fn tangency(z2: f64, z3: f64, upper: bool, tol: &BoundaryTolerances) -> Option<Tangency> {
    if z2.abs() > tol.fold {
        // An upper fold is visible when the orbit bends into y > 0.
        Some(Tangency::Fold { visible: if upper { z2 > 0.0 } else { z2 < 0.0 } })
    } else if z3.abs() > tol.tangency {
        Some(Tangency::Cusp)
    } else {
        None
    }
}

/// Class of a point from its Lie data alone.
pub fn classify_lie(l: &LieData, tol: &BoundaryTolerances) -> BoundaryClass {
    let tp = l.zph.abs() <= tol.tangency;
    let tm = l.zmh.abs() <= tol.tangency;
    match (tp, tm) {
        (false, false) => {
            if l.zph > 0.0 && l.zmh > 0.0 {
                BoundaryClass::CrossingUp
            } else if l.zph < 0.0 && l.zmh < 0.0 {
                BoundaryClass::CrossingDown
            } else if l.zph < 0.0 {
                BoundaryClass::SlidingStable
            } else {
                BoundaryClass::SlidingUnstable
            }
        }
        (true, false) => match tangency(l.z2ph, l.z3ph, true, tol) {
            Some(k) => BoundaryClass::TangentUpper(k),
            None => BoundaryClass::HigherDegenerate,
        },
        (false, true) => match tangency(l.z2mh, l.z3mh, false, tol) {
            Some(k) => BoundaryClass::TangentLower(k),
            None => BoundaryClass::HigherDegenerate,
        },
        (true, true) => match (tangency(l.z2ph, l.z3ph, true, tol), tangency(l.z2mh, l.z3mh, false, tol)) {
            (Some(upper), Some(lower)) => BoundaryClass::FoldFold { upper, lower },
            _ => BoundaryClass::HigherDegenerate,
        },
    }
}

pub fn classify_point(model: &FilippovModel, x: f64, alpha: &[f64]) -> Result<BoundaryClass> {
    classify_point_with(model, x, alpha, &BoundaryTolerances::default())
}

pub fn classify_point_with(
    model: &FilippovModel,
    x: f64,
    alpha: &[f64],
    tol: &BoundaryTolerances,
) -> Result<BoundaryClass> {
    let l = lie_data(model, x, alpha)?;
    let class = classify_lie(&l, tol);
    if class.is_tangency() || class == BoundaryClass::HigherDegenerate {
        // A vanishing normal component with a vanishing tangential one is an
        // equilibrium on the line, not a tangency.
        let (fu, _) = model.eval_field(crate::model::Side::Upper, x, 0.0, alpha)?;
        let (fl, _) = model.eval_field(crate::model::Side::Lower, x, 0.0, alpha)?;
        if (l.zph.abs() <= tol.tangency && fu.abs() <= tol.tangency)
            || (l.zmh.abs() <= tol.tangency && fl.abs() <= tol.tangency)
        {
            return Ok(BoundaryClass::BoundaryEquilibrium);
        }
    }
    Ok(class)
}

/// Numerator `f^s = g(x) f(-x) - g(-x) f(x)` of the sliding field (upper
/// field values on the line).
pub fn sliding_numerator(model: &FilippovModel, x: f64, alpha: &[f64]) -> Result<f64> {
    use crate::model::Side::Upper;
    let (fp, gp) = model.eval_field(Upper, x, 0.0, alpha)?;
    let (fm, gm) = model.eval_field(Upper, -x, 0.0, alpha)?;
    Ok(gp * fm - gm * fp)
}

/// Speed of the Filippov sliding motion along the line at `(x, 0)`.
pub fn sliding_velocity(model: &FilippovModel, x: f64, alpha: &[f64]) -> Result<f64> {
    use crate::model::Side::Upper;
    let (fp, gp) = model.eval_field(Upper, x, 0.0, alpha)?;
    let (fm, gm) = model.eval_field(Upper, -x, 0.0, alpha)?;
    let den = gp + gm;
    if den.abs() < 1e-14 {
        return Err(Error::Domain(format!("sliding field undefined at x = {x} (end of a sliding segment)")));
    }
    Ok(-(gp * fm - gm * fp) / den)
}

#[derive(Clone, Debug, Serialize)]
pub struct TangentPoint {
    pub x: f64,
    pub class: BoundaryClass,
    pub lie_data: LieData,
}

#[derive(Clone, Debug, Serialize)]
pub struct Segment {
    pub x_lo: f64,
    pub x_hi: f64,
    pub class: BoundaryClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoKind {
    PseudoSaddle,
    PseudoNode,
}

#[derive(Clone, Debug, Serialize)]
pub struct PseudoEquilibrium {
    pub x: f64,
    #[serde(rename = "type")]
    pub kind: PseudoKind,
    /// Stability of the sliding segment it lies on.
    pub stable_sliding: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryPortrait {
    pub interval: (f64, f64),
    pub tangent_points: Vec<TangentPoint>,
    pub segments: Vec<Segment>,
    pub pseudo_equilibria: Vec<PseudoEquilibrium>,
    /// Tangencies closer than the sampling resolution that could not be separated.
    pub unresolved: Vec<f64>,
}

impl BoundaryPortrait {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("portrait serializes")
    }

    pub fn sliding_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments
            .iter()
            .filter(|s| matches!(s.class, BoundaryClass::SlidingStable | BoundaryClass::SlidingUnstable))
    }
}

/// Zeros of `h` on `[lo, hi]`: sign changes refined by Brent, plus double
/// zeros found as zeros of `dh` where `|h|` is below `tol`.
fn zeros(
    h: &dyn Fn(f64) -> Result<f64>,
    dh: &dyn Fn(f64) -> Result<(f64, f64)>,
    lo: f64,
    hi: f64,
    n: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let hv: Vec<f64> = xs.iter().map(|&x| h(x)).collect::<Result<_>>()?;
    let dv: Vec<f64> = xs.iter().map(|&x| dh(x).map(|p| p.0)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (xs[i], xs[i + 1]);
        if hv[i] == 0.0 {
            out.push(a);
            continue;
        }
        if hv[i] * hv[i + 1] < 0.0 {
            let r = newton_safe(|x| Ok((h(x)?, dh(x)?.0)), a, b, 1e-15, 0.0)
                .or_else(|_| brent(|x| h(x), a, b, 1e-15))?;
            out.push(r);
        } else if dv[i] * dv[i + 1] < 0.0 {
            // Extremum of h inside: a double zero if |h| vanishes there.
            let c = newton_safe(|x| dh(x), a, b, 1e-15, 0.0).or_else(|_| brent(|x| Ok(dh(x)?.0), a, b, 1e-15))?;
            let hc = h(c)?;
            if hc.abs() <= tol {
                out.push(c);
            } else if hc * hv[i] < 0.0 {
                // Two simple zeros closer than the sampling step.
                out.push(brent(|x| h(x), a, c, 1e-15)?);
                out.push(brent(|x| h(x), c, b, 1e-15)?);
            }
        }
    }
    if hv[n] == 0.0 {
        out.push(hi);
    }
    Ok(out)
}

/// Tangent points, sliding/crossing segments and pseudo-equilibria on `[lo, hi]`.
pub fn boundary_portrait(
    model: &FilippovModel,
    interval: (f64, f64),
    alpha: &[f64],
    tol: &BoundaryTolerances,
) -> Result<BoundaryPortrait> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!("bad interval [{lo}, {hi}]")));
    }
    model.check_alpha(alpha)?;
    let up = |x: f64| Ok(model.upper_lie(x, alpha)?.zh);
    let dup = |x: f64| {
        let gx = model.gx(x, 0.0, alpha)?;
        let gxx = model.gxx(x, 0.0, alpha)?;
        Ok((gx, gxx))
    };
    // Lower normal component at x is -g(-x); its zeros are mirrors of upper zeros.
    let mut xs = zeros(&up, &dup, lo, hi, tol.samples, tol.tangency)?;
    let mirrored = zeros(&up, &dup, -hi, -lo, tol.samples, tol.tangency)?;
    xs.extend(mirrored.into_iter().map(|x| -x));
    xs.sort_by(|a, b| a.total_cmp(b));

    let res = (hi - lo) / tol.samples as f64;
    let mut merged: Vec<f64> = Vec::new();
    let mut unresolved = Vec::new();
    for x in xs {
        match merged.last() {
            Some(&p) if (x - p).abs() <= 1e-9 => {}
            Some(&p) if (x - p).abs() < 1e-3 * res => unresolved.push(x),
            _ => merged.push(x),
        }
    }

    // A fold-fold needs both normal components to vanish at the same point,
    // so a merged point is classified with a tolerance wide enough to cover
    // the root-finding error of either side.
    let mut tangent_points = Vec::new();
    for &x in &merged {
        let l = lie_data(model, x, alpha)?;
        let t = BoundaryTolerances { tangency: tol.tangency.max(1e-10), ..*tol };
        let class = classify_point_with(model, x, alpha, &t)?;
        tangent_points.push(TangentPoint { x, class, lie_data: l });
    }

    let mut cuts = vec![lo];
    cuts.extend(merged.iter().copied().filter(|&x| x > lo && x < hi));
    cuts.push(hi);
    let mut segments: Vec<Segment> = Vec::new();
    for w in cuts.windows(2) {
        if w[1] - w[0] <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let class = classify_lie(&lie_data(model, mid, alpha)?, &BoundaryTolerances { tangency: 0.0, ..*tol });
        match segments.last_mut() {
            Some(s) if s.class == class => s.x_hi = w[1],
            _ => segments.push(Segment { x_lo: w[0], x_hi: w[1], class }),
        }
    }

    let mut pseudo_equilibria = Vec::new();
    for seg in &segments {
        let stable = match seg.class {
            BoundaryClass::SlidingStable => true,
            BoundaryClass::SlidingUnstable => false,
            _ => continue,
        };
        let fs = |x: f64| sliding_numerator(model, x, alpha);
        let n = (tol.samples / 4).max(16);
        let (a, b) = (seg.x_lo, seg.x_hi);
        let pad = 1e-9 * (b - a);
        let (_, brackets) = crate::roots::scan(fs, a + pad, b - pad, n)?;
        for br in brackets {
            let x = crate::roots::brent_with(fs, br.a, br.fa, br.b, br.fb, 1e-15, 0.0)?;
            let h = 1e-6 * (b - a).min(1.0);
            let dv = (sliding_velocity(model, x + h, alpha)? - sliding_velocity(model, x - h, alpha)?) / (2.0 * h);
            // Along a stable segment a repelling sliding motion makes a
            // saddle; along an unstable one an attracting motion does.
            let kind = if (dv > 0.0) == stable { PseudoKind::PseudoSaddle } else { PseudoKind::PseudoNode };
            pseudo_equilibria.push(PseudoEquilibrium { x, kind, stable_sliding: stable });
        }
    }

    Ok(BoundaryPortrait { interval, tangent_points, segments, pseudo_equilibria, unresolved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    #[test]
    fn lie_data_of_scenarios() {
        let s1 = load_scenario("s1").unwrap();
        let l = lie_data(&s1, -1.0, &[0.0, 0.0]).unwrap();
        assert!(l.zph.abs() < 1e-15);
        assert!((l.z2ph - 4.0 / 3.0).abs() < 1e-14);
        let s2 = load_scenario("s2").unwrap();
        let l = lie_data(&s2, -1.0, &[0.0, 0.0]).unwrap();
        assert!(l.zph.abs() < 1e-15 && l.z2ph.abs() < 1e-14);
        assert!((l.z3ph - 3.0).abs() < 1e-13);
    }

    #[test]
    fn lower_data_is_mirrored() {
        let s3 = load_scenario("s3").unwrap();
        let a = [0.01, -0.02];
        for x in [-1.3, -0.2, 0.7] {
            let l = lie_data(&s3, x, &a).unwrap();
            let r = lie_data(&s3, -x, &a).unwrap();
            assert_eq!(l.zmh, -r.zph);
            assert_eq!(l.z2mh, -r.z2ph);
        }
    }

    #[test]
    fn classification_examples() {
        let s1 = load_scenario("s1").unwrap();
        let z = [0.0, 0.0];
        assert_eq!(classify_point(&s1, -2.0, &z).unwrap(), BoundaryClass::SlidingStable);
        assert_eq!(classify_point(&s1, 0.0, &z).unwrap(), BoundaryClass::SlidingUnstable);
        assert_eq!(
            classify_point(&s1, -1.0, &z).unwrap(),
            BoundaryClass::TangentUpper(Tangency::Fold { visible: true })
        );
        let s3 = load_scenario("s3").unwrap();
        let vis = Tangency::Fold { visible: true };
        assert_eq!(
            classify_point(&s3, 1.0, &z).unwrap(),
            BoundaryClass::FoldFold { upper: vis, lower: vis }
        );
        let s2 = load_scenario("s2").unwrap();
        assert_eq!(classify_point(&s2, -1.0, &z).unwrap(), BoundaryClass::TangentUpper(Tangency::Cusp));
    }

    #[test]
    fn sliding_speed_sign_and_oddness() {
        let s1 = load_scenario("s1").unwrap();
        let z = [0.0, 0.0];
        assert!(sliding_velocity(&s1, -1.5, &z).unwrap() > 0.0);
        let v = sliding_velocity(&s1, -1.5, &[0.01, 0.02]).unwrap();
        let w = sliding_velocity(&s1, 1.5, &[0.01, 0.02]).unwrap();
        assert!((v + w).abs() < 1e-14);
    }

    #[test]
    fn fold_moves_linearly_with_alpha() {
        let s1 = load_scenario("s1").unwrap();
        let p = boundary_portrait(&s1, (-1.2, -0.8), &[1e-3, 0.0], &BoundaryTolerances::default()).unwrap();
        let folds: Vec<_> = p
            .tangent_points
            .iter()
            .filter(|t| matches!(t.class, BoundaryClass::TangentUpper(Tangency::Fold { visible: true })))
            .collect();
        assert_eq!(folds.len(), 1);
        let rho1 = -folds[0].x;
        assert!((rho1 - (1.0 + 0.75e-3)).abs() < 1e-6, "{rho1}");
    }

    #[test]
    fn s3_portrait_at_origin() {
        let s3 = load_scenario("s3").unwrap();
        let p = boundary_portrait(&s3, (-1.5, 1.5), &[0.0, 0.0], &BoundaryTolerances::default()).unwrap();
        let ff: Vec<_> = p
            .tangent_points
            .iter()
            .filter(|t| matches!(t.class, BoundaryClass::FoldFold { .. }))
            .map(|t| t.x)
            .collect();
        assert_eq!(ff.len(), 2, "{:?}", p.tangent_points);
        assert!((ff[0] + 1.0).abs() < 1e-12 && (ff[1] - 1.0).abs() < 1e-12);
        for s in p.sliding_segments() {
            assert!(s.x_hi <= -1.0 + 1e-12 || s.x_lo >= -1.0 - 1e-12);
            assert!(s.x_hi <= 1.0 + 1e-12 || s.x_lo >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn s3_pseudo_saddle_near_fold_fold() {
        let s3 = load_scenario("s3").unwrap();
        let p = boundary_portrait(&s3, (-1.5, -0.5), &[1e-3, 0.0], &BoundaryTolerances::default()).unwrap();
        assert_eq!(p.pseudo_equilibria.len(), 1, "{}", p.to_json());
        assert_eq!(p.pseudo_equilibria[0].kind, PseudoKind::PseudoSaddle);
    }
}
