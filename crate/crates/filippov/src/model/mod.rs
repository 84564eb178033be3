//! Z2-symmetric Filippov models.
//!
//! A model stores only the upper field `(f, g)` on `y > 0`. The lower field is
//! always obtained by reflection, `(-f(-x,-y), -g(-x,-y))`, so the symmetry
//! holds exactly. Switching happens on the x-axis.

mod hypotheses;
mod scenarios;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprs::{self, parse_expr, Expr, Tape, Var};

pub use hypotheses::{
    check_hypotheses, hypotheses_from_report, Case, Check, H0Report, HypothesisReport, Nondegeneracy, Tolerances,
};
pub use scenarios::{load_scenario, scenario_names, scenario_summary, S3_CONSTANT};

/// Which subsystem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Upper => Side::Lower,
            Side::Lower => Side::Upper,
        }
    }
}

/// A planar Z2-symmetric Filippov system with switching line `y = 0`.
#[derive(Clone, Debug)]
pub struct FilippovModel {
    pub label: String,
    /// The reference tangency sits at `(-a, 0)`.
    pub a: f64,
    pub m: usize,
    f: Expr,
    g: Expr,
    compiled: Arc<Compiled>,
}

#[derive(Debug)]
struct Compiled {
    field: Tape,
    jet: Tape,
    lie: Tape,
    gx: Expr,
    gxx: Expr,
    g_alpha: Vec<Expr>,
    gx_alpha: Vec<Expr>,
    f_alpha: Vec<Expr>,
}

/// First-order data of the field at a point, including the gradient of the
/// divergence. Parameter-indexed entries have length `m`.
#[derive(Clone, Debug, Default)]
pub struct Jet {
    pub f: f64,
    pub g: f64,
    pub fx: f64,
    pub fy: f64,
    pub gx: f64,
    pub gy: f64,
    pub div_x: f64,
    pub div_y: f64,
    pub fa: Vec<f64>,
    pub ga: Vec<f64>,
    pub div_a: Vec<f64>,
}

impl Jet {
    pub fn new(m: usize) -> Jet {
        Jet { fa: vec![0.0; m], ga: vec![0.0; m], div_a: vec![0.0; m], ..Default::default() }
    }

    pub fn div(&self) -> f64 {
        self.fx + self.gy
    }
}

/// Lie derivatives of `h = y` along the upper field at `(x, 0)`:
/// `g`, `f g_x + g g_y` and one more Lie step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpperLie {
    pub zh: f64,
    pub z2h: f64,
    pub z3h: f64,
}

impl FilippovModel {
    /// Builds a model from the upper field. No dynamical validation here.
    pub fn new(f_plus: Expr, g_plus: Expr, m: usize, a: f64, label: &str) -> Result<FilippovModel> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::ModelFile(format!("reference abscissa a must be positive, got {a}")));
        }
        let f = f_plus.with_arity(m)?;
        let g = g_plus.with_arity(m)?;
        let compiled = Arc::new(Compiled::new(&f, &g, m)?);
        Ok(FilippovModel { label: label.to_string(), a, m, f, g, compiled })
    }

    pub fn f_plus(&self) -> &Expr {
        &self.f
    }

    pub fn g_plus(&self) -> &Expr {
        &self.g
    }

    fn input(&self, x: f64, y: f64, alpha: &[f64], buf: &mut [f64]) {
        buf[0] = x;
        buf[1] = y;
        buf[2..2 + self.m].copy_from_slice(alpha);
    }

    /// Field of one subsystem at `(x, y)`.
    pub fn eval_field(&self, side: Side, x: f64, y: f64, alpha: &[f64]) -> Result<(f64, f64)> {
        self.check_alpha(alpha)?;
        let mut inp = [0.0; 2 + MAX_INLINE];
        let mut heap;
        let buf: &mut [f64] = if self.m <= MAX_INLINE {
            &mut inp[..self.m + 2]
        } else {
            heap = vec![0.0; self.m + 2];
            &mut heap
        };
        let mut out = [0.0; 2];
        match side {
            Side::Upper => {
                self.input(x, y, alpha, buf);
                self.compiled.field.eval(buf, &mut out)?;
                Ok((out[0], out[1]))
            }
            Side::Lower => {
                self.input(-x, -y, alpha, buf);
                self.compiled.field.eval(buf, &mut out)?;
                Ok((-out[0], -out[1]))
            }
        }
    }

    /// Full first-order jet of one subsystem, written into `jet`.
    pub fn eval_jet(&self, side: Side, x: f64, y: f64, alpha: &[f64], jet: &mut Jet) -> Result<()> {
        let m = self.m;
        let mut inp = [0.0; 2 + MAX_INLINE];
        let mut out = [0.0; 8 + 3 * MAX_INLINE];
        let (mut hin, mut hout);
        let (inb, outb): (&mut [f64], &mut [f64]) = if m <= MAX_INLINE {
            (&mut inp[..m + 2], &mut out[..8 + 3 * m])
        } else {
            hin = vec![0.0; m + 2];
            hout = vec![0.0; 8 + 3 * m];
            (&mut hin, &mut hout)
        };
        let (sx, sy) = if side == Side::Upper { (x, y) } else { (-x, -y) };
        self.input(sx, sy, alpha, inb);
        self.compiled.jet.eval(inb, outb)?;
        // Reflection: values and parameter partials flip sign, first
        // partials keep it, and the divergence gradient flips.
        let s = if side == Side::Upper { 1.0 } else { -1.0 };
        jet.f = s * outb[0];
        jet.g = s * outb[1];
        jet.fx = outb[2];
        jet.fy = outb[3];
        jet.gx = outb[4];
        jet.gy = outb[5];
        jet.div_x = s * outb[6];
        jet.div_y = s * outb[7];
        for i in 0..m {
            jet.fa[i] = s * outb[8 + i];
            jet.ga[i] = s * outb[8 + m + i];
            jet.div_a[i] = outb[8 + 2 * m + i];
        }
        Ok(())
    }

    /// Upper-field Lie derivatives of `h = y` at `(x, 0)`.
    pub fn upper_lie(&self, x: f64, alpha: &[f64]) -> Result<UpperLie> {
        self.check_alpha(alpha)?;
        let mut buf = vec![0.0; self.m + 2];
        self.input(x, 0.0, alpha, &mut buf);
        let mut out = [0.0; 3];
        self.compiled.lie.eval(&buf, &mut out)?;
        Ok(UpperLie { zh: out[0], z2h: out[1], z3h: out[2] })
    }

    /// `g_x` of the upper field at `(x, y)`.
    pub fn gx(&self, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.compiled.gx.eval(x, y, alpha)?)
    }

    /// `g_xx` of the upper field at `(x, y)`.
    pub fn gxx(&self, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.compiled.gxx.eval(x, y, alpha)?)
    }

    /// `g_{a_i}` of the upper field.
    pub fn g_alpha(&self, i: usize, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.compiled.g_alpha[i].eval(x, y, alpha)?)
    }

    /// `g_{x a_i}` of the upper field.
    pub fn gx_alpha(&self, i: usize, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.compiled.gx_alpha[i].eval(x, y, alpha)?)
    }

    /// `f_{a_i}` of the upper field.
    pub fn f_alpha(&self, i: usize, x: f64, y: f64, alpha: &[f64]) -> Result<f64> {
        Ok(self.compiled.f_alpha[i].eval(x, y, alpha)?)
    }

    pub fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.m {
            return Err(Error::ModelFile(format!("expected {} parameters, got {}", self.m, alpha.len())));
        }
        Ok(())
    }

    pub fn zero_alpha(&self) -> Vec<f64> {
        vec![0.0; self.m]
    }

    /// Canonical text of the model, stable across runs.
    pub fn canonical_text(&self) -> String {
        format!(
            "a = {:?}\nm = {}\nf_plus = \"{}\"\ng_plus = \"{}\"\nlabel = {:?}\n",
            self.a, self.m, self.f, self.g, self.label
        )
    }

    /// 64-bit FNV-1a hash of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Parses the plain-text model format (`a`, `m`, `f_plus`, `g_plus`, `label`).
    pub fn from_text(text: &str) -> Result<FilippovModel> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct ModelFile {
            a: f64,
            m: usize,
            f_plus: String,
            g_plus: String,
            #[serde(default)]
            label: String,
        }
        let mf: ModelFile = toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        let f = parse_expr(&mf.f_plus, mf.m)?;
        let g = parse_expr(&mf.g_plus, mf.m)?;
        FilippovModel::new(f, g, mf.m, mf.a, &mf.label)
    }

    pub fn from_file(path: &std::path::Path) -> Result<FilippovModel> {
        FilippovModel::from_text(&std::fs::read_to_string(path)?)
    }
}

const MAX_INLINE: usize = 8;

impl Compiled {
    fn new(f: &Expr, g: &Expr, m: usize) -> Result<Compiled> {
        let fx = f.diff(Var::X)?;
        let fy = f.diff(Var::Y)?;
        let gx = g.diff(Var::X)?;
        let gy = g.diff(Var::Y)?;
        let div = fx.combine(&gy, exprs::add);
        let div_x = div.diff(Var::X)?;
        let div_y = div.diff(Var::Y)?;
        let params: Vec<Var> = (0..m).map(Var::Param).collect();
        let f_alpha: Vec<Expr> = params.iter().map(|&p| f.diff(p)).collect::<Result<_, _>>()?;
        let g_alpha: Vec<Expr> = params.iter().map(|&p| g.diff(p)).collect::<Result<_, _>>()?;
        let div_alpha: Vec<Expr> = params.iter().map(|&p| div.diff(p)).collect::<Result<_, _>>()?;
        let gx_alpha: Vec<Expr> = params.iter().map(|&p| gx.diff(p)).collect::<Result<_, _>>()?;
        let gxx = gx.diff(Var::X)?;

        // Lie derivatives of h = y along (f, g).
        let lie_step = |e: &Expr| -> Result<Expr> {
            let ex = e.diff(Var::X)?;
            let ey = e.diff(Var::Y)?;
            Ok(f.combine(&ex, exprs::mul).combine(&g.combine(&ey, exprs::mul), exprs::add))
        };
        let z2 = lie_step(g)?;
        let z3 = lie_step(&z2)?;

        let mut jet_out: Vec<&Expr> = vec![f, g, &fx, &fy, &gx, &gy, &div_x, &div_y];
        jet_out.extend(f_alpha.iter());
        jet_out.extend(g_alpha.iter());
        jet_out.extend(div_alpha.iter());
        Ok(Compiled {
            field: Tape::new(&[f, g]),
            jet: Tape::new(&jet_out),
            lie: Tape::new(&[g, &z2, &z3]),
            gx,
            gxx,
            g_alpha,
            gx_alpha,
            f_alpha,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_field_is_reflection() {
        for name in scenario_names() {
            let model = load_scenario(name).unwrap();
            let alpha = [0.013, -0.02];
            for &(x, y) in &[(0.3, -0.7), (-1.2, 0.4), (0.0, 0.0), (2.5, 1e-3)] {
                let (fl, gl) = model.eval_field(Side::Lower, x, y, &alpha).unwrap();
                let (fu, gu) = model.eval_field(Side::Upper, -x, -y, &alpha).unwrap();
                assert_eq!((fl, gl), (-fu, -gu));
            }
        }
    }

    #[test]
    fn scenario_field_values() {
        let s1 = load_scenario("s1").unwrap();
        assert_eq!(s1.eval_field(Side::Upper, -1.0, 0.0, &[0.0, 0.0]).unwrap(), (1.0, 0.0));
        let s3 = load_scenario("s3").unwrap();
        let (f, g) = s3.eval_field(Side::Upper, 1.0, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(f, 1.0);
        assert!(g.abs() < 1e-15);
        let s2 = load_scenario("s2").unwrap();
        assert!(s2.gx(-1.0, 0.0, &[0.0, 0.0]).unwrap().abs() < 1e-15);
        assert!((s2.gxx(-1.0, 0.0, &[0.0, 0.0]).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jet_matches_finite_differences_on_both_sides() {
        let model = load_scenario("s3").unwrap();
        let alpha = [0.02, -0.01];
        let h = 1e-6;
        for side in [Side::Upper, Side::Lower] {
            let (x, y) = (0.4, -0.3);
            let mut j = Jet::new(2);
            model.eval_jet(side, x, y, &alpha, &mut j).unwrap();
            let fd = |dx: f64, dy: f64| {
                let p = model.eval_field(side, x + dx, y + dy, &alpha).unwrap();
                let q = model.eval_field(side, x - dx, y - dy, &alpha).unwrap();
                ((p.0 - q.0) / (2.0 * h), (p.1 - q.1) / (2.0 * h))
            };
            let (fx, gx) = fd(h, 0.0);
            let (fy, gy) = fd(0.0, h);
            assert!((j.fx - fx).abs() < 1e-8 && (j.gx - gx).abs() < 1e-8);
            assert!((j.fy - fy).abs() < 1e-8 && (j.gy - gy).abs() < 1e-8);
            let div_at = |xx: f64, yy: f64| {
                let mut k = Jet::new(2);
                model.eval_jet(side, xx, yy, &alpha, &mut k).unwrap();
                k.div()
            };
            let dx = (div_at(x + h, y) - div_at(x - h, y)) / (2.0 * h);
            assert!((j.div_x - dx).abs() < 1e-7, "{side:?} {} vs {dx}", j.div_x);
            let mut ap = alpha;
            ap[1] += h;
            let mut am = alpha;
            am[1] -= h;
            let gp = model.eval_field(side, x, y, &ap).unwrap().1;
            let gm = model.eval_field(side, x, y, &am).unwrap().1;
            assert!((j.ga[1] - (gp - gm) / (2.0 * h)).abs() < 1e-8);
        }
    }

    #[test]
    fn arity_is_enforced() {
        let f = parse_expr("1", 3).unwrap();
        let g = parse_expr("a3*x", 3).unwrap();
        assert!(FilippovModel::new(f, g, 2, 1.0, "bad").is_err());
        let y = parse_expr("y", 0).unwrap();
        assert!(FilippovModel::new(y.clone(), y, 0, 1.0, "ok").is_ok());
    }

    #[test]
    fn model_file_round_trip() {
        let s1 = load_scenario("s1").unwrap();
        let again = FilippovModel::from_text(&s1.canonical_text()).unwrap();
        assert_eq!(again.f_plus(), s1.f_plus());
        assert_eq!(again.g_plus(), s1.g_plus());
        assert_eq!(again.hash(), s1.hash());
        assert!(FilippovModel::from_text("a = 1\nm = 0\nf_plus = \"1\"\ng_plus = \"q\"\n").is_err());
    }
}
