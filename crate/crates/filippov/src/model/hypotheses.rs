//! Numerical verification of the standing hypotheses at `alpha = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FilippovModel, Side};
use crate::coeffs::{raw_report, CoefficientReport};
use crate::error::{Error, Result};
use crate::maps::{critical_orbit, MapOptions, Maps};
use crate::flow::Mode;

/// Which degeneracy organises the bifurcation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Fold at `(-a, 0)`, regular point at `(a, 0)`.
    #[serde(rename = "codim1")]
    Codim1,
    /// Cusp at `(-a, 0)`, regular point at `(a, 0)`.
    #[serde(rename = "cusp")]
    Cusp,
    /// Folds at both ends.
    #[serde(rename = "foldfold")]
    FoldFold,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Codim1 => "codim1",
            Case::Cusp => "cusp",
            Case::FoldFold => "foldfold",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Case> {
        match s.to_ascii_lowercase().as_str() {
            "codim1" => Ok(Case::Codim1),
            "cusp" => Ok(Case::Cusp),
            "foldfold" | "fold-fold" => Ok(Case::FoldFold),
            _ => Err(Error::Domain(format!("unknown case '{s}' (expected codim1, cusp or foldfold)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    /// Allowed distance of the critical orbit's landing point from `(a, 0)`.
    pub landing: f64,
    /// Values below this count as zero in equality conditions.
    pub zero: f64,
    /// Annulus half-width relative to `a`.
    pub annulus_eps: f64,
    /// Interior samples for the positivity check.
    pub samples: usize,
    /// Time exempt from the positivity check at each end of the orbit.
    pub endpoint_exempt: f64,
    /// Smallest accepted nondegeneracy measure.
    pub nondegeneracy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            landing: 1e-8,
            zero: 1e-10,
            annulus_eps: 0.2,
            samples: 1000,
            endpoint_exempt: 1e-3,
            nondegeneracy: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct H0Report {
    pub holds: bool,
    pub landing_error: f64,
    pub min_interior_y: f64,
    pub tau0: f64,
}

/// A sign or equality condition with the values it was decided on.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub holds: bool,
    pub witness: Vec<(String, f64)>,
}

impl Check {
    fn new(holds: bool, witness: &[(&str, f64)]) -> Check {
        Check { holds, witness: witness.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Nondegeneracy {
    /// Names of the coefficient vectors involved.
    pub vectors: Vec<String>,
    /// Norm (one vector) or largest 2x2 minor (two vectors).
    pub measure: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub case: Case,
    pub h0: H0Report,
    pub h1: Option<Check>,
    pub h1_prime: Option<Check>,
    pub h2: Option<Check>,
    pub h2_prime: Option<Check>,
    pub h3: Option<Check>,
    pub nondegeneracy: Option<Nondegeneracy>,
}

impl HypothesisReport {
    /// All conditions required by the case hold.
    pub fn holds(&self) -> bool {
        self.failures().is_empty()
    }

    /// Names of the required conditions that fail.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.h0.holds {
            out.push(format!(
                "H0 (landing error {:e}, min interior y {:e})",
                self.h0.landing_error, self.h0.min_interior_y
            ));
        }
        let named = [
            ("H1", &self.h1),
            ("H1'", &self.h1_prime),
            ("H2", &self.h2),
            ("H2'", &self.h2_prime),
            ("H3", &self.h3),
        ];
        for (name, c) in named {
            if let Some(c) = c {
                if !c.holds {
                    out.push(format!("{name} {:?}", c.witness));
                }
            }
        }
        if let Some(n) = &self.nondegeneracy {
            if !n.holds {
                out.push(format!("nondegeneracy of {} (measure {:e})", n.vectors.join(", "), n.measure));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn h0_check(model: &FilippovModel, tol: &Tolerances, opts: &MapOptions) -> Result<H0Report> {
    let a = model.a;
    let orbit = match critical_orbit(model, Mode::Plain, &opts.arc) {
        Ok(o) => o,
        Err(Error::TimeOut(_)) | Err(Error::Domain(_)) => {
            return Ok(H0Report { holds: false, landing_error: f64::INFINITY, min_interior_y: f64::NAN, tau0: 0.0 })
        }
        Err(e) => return Err(e),
    };
    let (x1, y1) = orbit.end();
    let landing_error = ((x1 - a).powi(2) + y1 * y1).sqrt();
    let tau0 = orbit.tau();
    let mut min_y = f64::INFINITY;
    let span = tau0 - 2.0 * tol.endpoint_exempt;
    if span > 0.0 {
        for k in 0..=tol.samples {
            let t = tol.endpoint_exempt + span * k as f64 / tol.samples as f64;
            if let Some(p) = orbit.interpolate(t) {
                min_y = min_y.min(p[1]);
            }
        }
    }
    let holds = tau0 > 0.0 && landing_error <= tol.landing && min_y > 0.0;
    Ok(H0Report { holds, landing_error, min_interior_y: min_y, tau0 })
}

fn minor2(u: &[f64], v: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            best = best.max((u[i] * v[j] - u[j] * v[i]).abs());
        }
    }
    best
}

/// Decides every condition of `case` from an already computed report.
pub fn hypotheses_from_report(
    model: &FilippovModel,
    case: Case,
    rep: &CoefficientReport,
    tol: &Tolerances,
) -> Result<HypothesisReport> {
    let a = model.a;
    let z = model.zero_alpha();
    let p = &rep.partials;
    let (_, g_left) = model.eval_field(Side::Upper, -a, 0.0, &z)?;
    let zero = tol.zero;
    let h0 = H0Report {
        holds: rep.landing_error <= tol.landing && rep.tau0 > 0.0,
        landing_error: rep.landing_error,
        min_interior_y: f64::NAN,
        tau0: rep.tau0,
    };
    let h1 = || {
        Check::new(
            g_left.abs() <= zero && p.f_left * p.gx_left > 0.0,
            &[("g(-a,0;0)", g_left), ("f(-a,0;0)*g_x(-a,0;0)", p.f_left * p.gx_left)],
        )
    };
    let h1p = || {
        Check::new(
            p.f_left.abs() > zero && g_left.abs() <= zero && p.gx_left.abs() <= zero && p.gxx_left > 0.0,
            &[
                ("f(-a,0;0)", p.f_left),
                ("g(-a,0;0)", g_left),
                ("g_x(-a,0;0)", p.gx_left),
                ("g_xx(-a,0;0)", p.gxx_left),
            ],
        )
    };
    let h2 = || Check::new(p.g_right < -zero, &[("g(a,0;0)", p.g_right)]);
    let h2p = || {
        Check::new(
            p.g_right.abs() <= zero && p.f_right * p.gx_right > 0.0 && p.f_left * p.f_right > 0.0,
            &[
                ("g(a,0;0)", p.g_right),
                ("f(a,0;0)*g_x(a,0;0)", p.f_right * p.gx_right),
                ("f(-a,0;0)*f(a,0;0)", p.f_left * p.f_right),
            ],
        )
    };
    let h3 = || Check::new(rep.delta > 0.0, &[("Delta", rep.delta), ("lambda(0)", rep.lambda0)]);
    let nondeg = |names: &[&str], vecs: &[Option<&Vec<f64>>]| -> Nondegeneracy {
        let vectors = names.iter().map(|s| s.to_string()).collect();
        let measure = match vecs {
            [Some(u)] => u.iter().map(|x| x * x).sum::<f64>().sqrt(),
            [Some(u), Some(v)] => minor2(u, v),
            _ => f64::NAN,
        };
        Nondegeneracy { vectors, measure, holds: measure > tol.nondegeneracy }
    };
    let mut r = HypothesisReport {
        case,
        h0,
        h1: None,
        h1_prime: None,
        h2: None,
        h2_prime: None,
        h3: None,
        nondegeneracy: None,
    };
    match case {
        Case::Codim1 => {
            r.h1 = Some(h1());
            r.h2 = Some(h2());
            r.nondegeneracy = Some(nondeg(&["theta"], &[rep.theta.as_ref()]));
        }
        Case::Cusp => {
            r.h1_prime = Some(h1p());
            r.h2 = Some(h2());
            r.nondegeneracy = Some(nondeg(&["zeta", "eta"], &[rep.zeta.as_ref(), rep.eta.as_ref()]));
        }
        Case::FoldFold => {
            r.h1 = Some(h1());
            r.h2_prime = Some(h2p());
            r.h3 = Some(h3());
            r.nondegeneracy = Some(nondeg(&["mu", "kappa"], &[rep.mu.as_ref(), Some(&rep.kappa)]));
        }
    }
    Ok(r)
}

/// Checks the hypotheses of `case` for `model` at `alpha = 0`.
pub fn check_hypotheses(model: &FilippovModel, case: Case, tol: &Tolerances) -> Result<HypothesisReport> {
    let opts = MapOptions::default();
    let h0 = h0_check(model, tol, &opts)?;
    if !h0.holds {
        return Ok(HypothesisReport {
            case,
            h0,
            h1: None,
            h1_prime: None,
            h2: None,
            h2_prime: None,
            h3: None,
            nondegeneracy: None,
        });
    }
    let maps = Maps::with_options(model, opts)?;
    let rep = raw_report(model, case, &maps)?;
    let mut r = hypotheses_from_report(model, case, &rep, tol)?;
    r.h0 = h0;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    #[test]
    fn scenarios_satisfy_their_hypotheses() {
        for (name, case) in [("s1", Case::Codim1), ("s2", Case::Cusp), ("s3", Case::FoldFold)] {
            let m = load_scenario(name).unwrap();
            let r = check_hypotheses(&m, case, &Tolerances::default()).unwrap();
            assert!(r.holds(), "{name}: {:?}", r.failures());
            assert!(r.h0.min_interior_y > 0.0 && r.h0.tau0 > 0.0);
        }
    }

    #[test]
    fn wrong_case_is_rejected() {
        let m = load_scenario("s1").unwrap();
        let r = check_hypotheses(&m, Case::FoldFold, &Tolerances::default()).unwrap();
        assert!(!r.holds());
        assert!(r.failures().iter().any(|f| f.starts_with("H2'")));
    }

    #[test]
    fn case_names_round_trip() {
        for c in [Case::Codim1, Case::Cusp, Case::FoldFold] {
            assert_eq!(c.name().parse::<Case>().unwrap(), c);
        }
        assert!("codim3".parse::<Case>().is_err());
    }
}
