//! Dormand-Prince 5(4) with the free fourth-order continuous extension.
//!
//! The stepper always advances in increasing "integration time" `s`; callers
//! implement time reversal inside the right-hand side. Error control covers
//! only the leading `err_dims` components, so co-integrated variational data
//! never changes the step sequence of the underlying orbit.

use crate::error::{Error, Result};

/// A first-order system `u' = F(s, u)`.
pub trait System {
    fn dim(&self) -> usize;
    fn rhs(&mut self, s: f64, u: &[f64], du: &mut [f64]) -> Result<()>;
}

#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
    pub err_dims: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { rtol: 1e-10, atol: 1e-12, h_max: 0.1, h_min: 1e-14, max_steps: 200_000, err_dims: 2 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolation data of one accepted step for the first `nd` components.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub s0: f64,
    pub h: f64,
    /// Five coefficient blocks of length `nd`, stored contiguously.
    pub coef: Vec<f64>,
}

impl DenseStep {
    pub fn nd(&self) -> usize {
        self.coef.len() / 5
    }

    /// Component `i` at integration time `s` inside the step.
    pub fn eval(&self, i: usize, s: f64) -> f64 {
        let nd = self.nd();
        let th = (s - self.s0) / self.h;
        let th1 = 1.0 - th;
        let r = |k: usize| self.coef[k * nd + i];
        r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
    }

    /// Derivative of component `i` with respect to `s`.
    pub fn deriv(&self, i: usize, s: f64) -> f64 {
        let nd = self.nd();
        let th = (s - self.s0) / self.h;
        let r = |k: usize| self.coef[k * nd + i];
        // d/dθ of r0 + θ r1 + θ(1-θ) r2 + θ²(1-θ) r3 + θ²(1-θ)² r4
        let d = r(1)
            + (1.0 - 2.0 * th) * r(2)
            + (2.0 * th - 3.0 * th * th) * r(3)
            + (2.0 * th * (1.0 - th) * (1.0 - 2.0 * th)) * r(4);
        d / self.h
    }

    /// Times strictly inside the step where the derivative of component `i`
    /// changes sign, in increasing order. The interpolant is a quartic in
    /// `θ`, so its derivative is a cubic; splitting `[0, 1]` at the roots of
    /// the cubic's derivative leaves monotone pieces with at most one root.
    pub fn turning_points(&self, i: usize) -> Vec<f64> {
        let nd = self.nd();
        let r = |k: usize| self.coef[k * nd + i];
        let (c1, c2, c3, c4) = (r(1) + r(2), -r(2) + r(3) + r(4), -r(3) - 2.0 * r(4), r(4));
        let p1 = |t: f64| c1 + t * (2.0 * c2 + t * (3.0 * c3 + t * 4.0 * c4));
        // Roots of p1' = 2 c2 + 6 c3 t + 12 c4 t^2.
        let (qa, qb, qc) = (12.0 * c4, 6.0 * c3, 2.0 * c2);
        let mut cuts = vec![0.0];
        if qa != 0.0 {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc > 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (qb + qb.signum() * sq);
                let mut rts = [q / qa, if q != 0.0 { qc / q } else { f64::NAN }];
                rts.sort_by(f64::total_cmp);
                cuts.extend(rts.into_iter().filter(|t| *t > 0.0 && *t < 1.0));
            }
        } else if qb != 0.0 {
            let t = -qc / qb;
            if t > 0.0 && t < 1.0 {
                cuts.push(t);
            }
        }
        cuts.push(1.0);
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (p1(a), p1(b));
            if fa == 0.0 && a > 0.0 {
                out.push(a);
            } else if fa * fb < 0.0 {
                if let Ok(t) = crate::roots::brent_with(|t| Ok(p1(t)), a, fa, b, fb, 1e-15, 0.0) {
                    out.push(t);
                }
            }
        }
        out.dedup();
        out.into_iter().map(|t| self.s0 + t * self.h).collect()
    }
}

/// Stepper state.
pub struct Stepper {
    n: usize,
    pub s: f64,
    pub u: Vec<f64>,
    pub s_old: f64,
    pub u_old: Vec<f64>,
    /// Right-hand side at `(s, u)`.
    pub f: Vec<f64>,
    /// Right-hand side at `(s_old, u_old)`.
    pub f_old: Vec<f64>,
    k: [Vec<f64>; 6],
    tmp: Vec<f64>,
    unew: Vec<f64>,
    fnew: Vec<f64>,
    pub h: f64,
    pub ctl: StepControl,
    pub steps: usize,
    pub rejected: usize,
    last_h: f64,
}

impl Stepper {
    pub fn new<S: System>(sys: &mut S, s0: f64, u0: &[f64], ctl: StepControl) -> Result<Stepper> {
        let n = sys.dim();
        assert_eq!(u0.len(), n);
        let mut f = vec![0.0; n];
        sys.rhs(s0, u0, &mut f)?;
        let mut st = Stepper {
            n,
            s: s0,
            u: u0.to_vec(),
            s_old: s0,
            u_old: u0.to_vec(),
            f_old: f.clone(),
            f,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            unew: vec![0.0; n],
            fnew: vec![0.0; n],
            h: 0.0,
            ctl,
            steps: 0,
            rejected: 0,
            last_h: 0.0,
        };
        st.h = st.initial_step(sys)?;
        Ok(st)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Size of the last accepted step.
    pub fn last_h(&self) -> f64 {
        self.last_h
    }

    fn err_dims(&self) -> usize {
        self.ctl.err_dims.min(self.n)
    }

    fn initial_step<S: System>(&mut self, sys: &mut S) -> Result<f64> {
        let ne = self.err_dims();
        let sc = |v: f64, a: f64| self.ctl.atol + self.ctl.rtol * v.abs().max(a.abs());
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..ne {
            let w = sc(self.u[i], 0.0);
            d0 += (self.u[i] / w).powi(2);
            d1 += (self.f[i] / w).powi(2);
        }
        d0 = (d0 / ne as f64).sqrt();
        d1 = (d1 / ne as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.ctl.h_max);
        for i in 0..self.n {
            self.tmp[i] = self.u[i] + h0 * self.f[i];
        }
        let mut f1 = vec![0.0; self.n];
        sys.rhs(self.s + h0, &self.tmp, &mut f1)?;
        let mut d2 = 0.0;
        for i in 0..ne {
            d2 += ((f1[i] - self.f[i]) / sc(self.u[i], 0.0)).powi(2);
        }
        d2 = (d2 / ne as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.ctl.h_max))
    }

    /// One explicit step of size `h` from `(s, u)` with derivative `f`,
    /// leaving the result in `unew`/`fnew` and returning the error norm.
    fn attempt<S: System>(&mut self, sys: &mut S, h: f64) -> Result<f64> {
        let n = self.n;
        let s = self.s;
        let (u, f) = (&self.u, &self.f);
        let [k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = u[i] + h * A21 * f[i];
        }
        sys.rhs(s + C2 * h, tmp, k2)?;
        for i in 0..n {
            tmp[i] = u[i] + h * (A31 * f[i] + A32 * k2[i]);
        }
        sys.rhs(s + C3 * h, tmp, k3)?;
        for i in 0..n {
            tmp[i] = u[i] + h * (A41 * f[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(s + C4 * h, tmp, k4)?;
        for i in 0..n {
            tmp[i] = u[i] + h * (A51 * f[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(s + C5 * h, tmp, k5)?;
        for i in 0..n {
            tmp[i] = u[i] + h * (A61 * f[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(s + h, tmp, k6)?;
        for i in 0..n {
            self.unew[i] = u[i] + h * (A71 * f[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(s + h, &self.unew, &mut self.fnew)?;
        k7.copy_from_slice(&self.fnew);
        let ne = self.ctl.err_dims.min(n);
        let mut err = 0.0;
        for i in 0..ne {
            let e = h * (E1 * f[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.ctl.atol + self.ctl.rtol * u[i].abs().max(self.unew[i].abs());
            err += (e / sc).powi(2);
        }
        Ok((err / ne as f64).sqrt())
    }

    fn accept(&mut self, h: f64) {
        self.s_old = self.s;
        std::mem::swap(&mut self.u_old, &mut self.u);
        std::mem::swap(&mut self.f_old, &mut self.f);
        self.u.copy_from_slice(&self.unew);
        self.f.copy_from_slice(&self.fnew);
        self.s += h;
        self.last_h = h;
        self.steps += 1;
    }

    /// Takes one adaptive step, never beyond `s_limit`.
    pub fn step<S: System>(&mut self, sys: &mut S, s_limit: f64) -> Result<()> {
        if self.steps >= self.ctl.max_steps {
            return Err(Error::MaxSteps { t: self.s });
        }
        let mut h = self.h.min(self.ctl.h_max);
        loop {
            let mut clipped = false;
            if self.s + h >= s_limit {
                h = s_limit - self.s;
                clipped = true;
            }
            if h < self.ctl.h_min {
                if clipped && h > 0.0 {
                    // Tiny final piece: take it without control.
                    self.attempt(sys, h)?;
                    self.accept(h);
                    return Ok(());
                }
                return Err(Error::StepUnderflow { t: self.s });
            }
            let err = match self.attempt(sys, h) {
                Ok(e) => e,
                // A domain error inside a trial step: shrink and retry.
                Err(Error::Eval(_)) if h > 1e3 * self.ctl.h_min => {
                    h *= 0.25;
                    self.rejected += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if err <= 1.0 {
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                self.accept(h);
                if !clipped {
                    self.h = (h * fac).min(self.ctl.h_max);
                }
                return Ok(());
            }
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            self.rejected += 1;
        }
    }

    /// Takes one step of exactly `h` without error control.
    pub fn step_fixed<S: System>(&mut self, sys: &mut S, h: f64) -> Result<()> {
        self.attempt(sys, h)?;
        self.accept(h);
        Ok(())
    }

    /// Result of a trial step of size `h` from the current point, without
    /// advancing. Used to polish event locations with genuine steps.
    pub fn probe<S: System>(&mut self, sys: &mut S, h: f64, out: &mut [f64]) -> Result<()> {
        self.attempt(sys, h)?;
        out.copy_from_slice(&self.unew);
        Ok(())
    }

    /// Same as [`probe`](Self::probe) but from the start of the last step.
    pub fn probe_from_old<S: System>(&mut self, sys: &mut S, h: f64, out: &mut [f64]) -> Result<()> {
        std::mem::swap(&mut self.u, &mut self.u_old);
        std::mem::swap(&mut self.f, &mut self.f_old);
        std::mem::swap(&mut self.s, &mut self.s_old);
        let r = self.attempt(sys, h);
        std::mem::swap(&mut self.u, &mut self.u_old);
        std::mem::swap(&mut self.f, &mut self.f_old);
        std::mem::swap(&mut self.s, &mut self.s_old);
        r?;
        out.copy_from_slice(&self.unew);
        Ok(())
    }

    /// Dense-output coefficients of the last accepted step for the first `nd` components.
    pub fn dense(&self, nd: usize) -> DenseStep {
        let h = self.s - self.s_old;
        let nd = nd.min(self.n);
        let mut coef = vec![0.0; 5 * nd];
        let [_, k3, k4, k5, k6, k7] = &self.k;
        let k1 = &self.f_old;
        for i in 0..nd {
            let ydiff = self.u[i] - self.u_old[i];
            let bspl = h * k1[i] - ydiff;
            coef[i] = self.u_old[i];
            coef[nd + i] = ydiff;
            coef[2 * nd + i] = bspl;
            coef[3 * nd + i] = ydiff - h * k7[i] - bspl;
            coef[4 * nd + i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        DenseStep { s0: self.s_old, h, coef }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Osc;
    impl System for Osc {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _s: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
            du[0] = u[1];
            du[1] = -u[0];
            Ok(())
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy_and_dense_output() {
        let mut sys = Osc;
        let mut st = Stepper::new(&mut sys, 0.0, &[0.0, 1.0], StepControl::default()).unwrap();
        let mut worst_dense: f64 = 0.0;
        while st.s < 10.0 {
            st.step(&mut sys, 10.0).unwrap();
            let d = st.dense(2);
            for j in 1..8 {
                let s = d.s0 + d.h * j as f64 / 8.0;
                worst_dense = worst_dense.max((d.eval(0, s) - s.sin()).abs());
                worst_dense = worst_dense.max((d.eval(1, s) - s.cos()).abs());
                assert!((d.deriv(0, s) - s.cos()).abs() < 1e-7);
            }
        }
        assert!((st.s - 10.0).abs() < 1e-15);
        assert!((st.u[0] - 10f64.sin()).abs() < 1e-9, "{}", st.u[0] - 10f64.sin());
        assert!(worst_dense < 1e-9, "dense error {worst_dense}");
    }

    #[test]
    fn dense_output_interpolates_endpoints() {
        let mut sys = Osc;
        let mut st = Stepper::new(&mut sys, 0.0, &[0.3, -0.2], StepControl::default()).unwrap();
        st.step(&mut sys, 1.0).unwrap();
        let d = st.dense(2);
        assert!((d.eval(0, d.s0) - st.u_old[0]).abs() < 1e-16);
        assert!((d.eval(0, d.s0 + d.h) - st.u[0]).abs() < 1e-15);
        assert!((d.deriv(1, d.s0) - st.f_old[1]).abs() < 1e-12);
    }

    /// `y' = (s - 0.2)(s - 0.5)(s - 0.9)`: a quartic solution, which the
    /// interpolant of a single unit step reproduces.
    struct Cubic;
    impl System for Cubic {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&mut self, _s: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
            du[0] = 1.0;
            du[1] = (u[0] - 0.2) * (u[0] - 0.5) * (u[0] - 0.9);
            Ok(())
        }
    }

    #[test]
    fn turning_points_inside_one_step() {
        let mut sys = Cubic;
        let mut st = Stepper::new(&mut sys, 0.0, &[0.0, 0.0], StepControl::default()).unwrap();
        st.step_fixed(&mut sys, 1.0).unwrap();
        let tp = st.dense(2).turning_points(1);
        assert_eq!(tp.len(), 3, "{tp:?}");
        for (t, want) in tp.iter().zip([0.2, 0.5, 0.9]) {
            assert!((t - want).abs() < 1e-12, "{tp:?}");
        }
        assert!(st.dense(2).turning_points(0).is_empty());
    }

    #[test]
    fn fixed_steps_converge_at_fifth_order() {
        let run = |n: usize| {
            let mut sys = Osc;
            let mut st = Stepper::new(&mut sys, 0.0, &[0.0, 1.0], StepControl::default()).unwrap();
            for _ in 0..n {
                st.step_fixed(&mut sys, 1.0 / n as f64).unwrap();
            }
            (st.u[0] - 1f64.sin()).abs()
        };
        let ratio = run(10) / run(20);
        assert!(ratio > 28.0 && ratio < 40.0, "ratio {ratio}");
    }
}
