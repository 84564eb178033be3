//! Smooth arcs of one subsystem with event location and optional
//! variational co-integration.

use serde::Serialize;

use super::dopri::{DenseStep, StepControl, Stepper, System};
use crate::error::{Error, Result};
use crate::model::{FilippovModel, Jet, Side};
use crate::roots::brent_with;

/// Direction of physical time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Sense in which `y` passes a level, measured along the integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Crossing {
    Down,
    Up,
}

/// What ends an arc.
#[derive(Clone, Copy, Debug)]
pub enum Stop {
    /// `y` passes `level` in the given sense with `x` inside `window`;
    /// passes outside the window are recorded and integration continues.
    Section { level: f64, sense: Crossing, window: Option<(f64, f64)> },
    /// Return to the switching line from the arc's own side, either by a
    /// transversal crossing or (if `touch`) by a tangential touch.
    Boundary { window: Option<(f64, f64)>, touch: bool },
    /// Only the time limit.
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    SectionHit,
    BoundaryHit,
    /// Quadratic contact with the switching line without crossing it.
    Touch,
    SlidingExit,
    /// The sliding motion reached a pseudo-equilibrium.
    Stalled,
    TimeOut,
}

/// Which auxiliary quantities are co-integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Plain,
    /// Adds `D(t) = ∫ div dt`.
    Divergence,
    /// Adds the fundamental matrix, parameter sensitivities, the adjoint
    /// integrals and the divergence-gradient integrals.
    Variational,
}

/// Index layout of the augmented state `[x, y, D, Φ, w, A, Bx, Ba, Ca]`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub m: usize,
    pub mode: Mode,
}

impl Layout {
    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Plain => 2,
            Mode::Divergence => 3,
            Mode::Variational => 8 + 5 * self.m,
        }
    }
    pub const D: usize = 2;
    pub const PHI: usize = 3;
    pub fn w(&self, i: usize) -> usize {
        7 + 2 * i
    }
    pub fn a(&self, i: usize) -> usize {
        7 + 2 * self.m + i
    }
    pub fn bx(&self) -> usize {
        7 + 3 * self.m
    }
    pub fn ba(&self, i: usize) -> usize {
        8 + 3 * self.m + i
    }
    pub fn ca(&self, i: usize) -> usize {
        8 + 4 * self.m + i
    }

    fn initial(&self, x: f64, y: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        u[0] = x;
        u[1] = y;
        if self.mode == Mode::Variational {
            u[Self::PHI] = 1.0;
            u[Self::PHI + 3] = 1.0;
        }
        u
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ArcOptions {
    pub mode: Mode,
    pub ctl: StepControl,
    /// Longest physical duration of the arc.
    pub t_max: f64,
    pub keep_dense: bool,
    /// A local minimum of `|y|` below this counts as touching the line.
    pub touch_tol: f64,
    /// Event functions are driven below this by polishing with real steps.
    pub event_tol: f64,
    /// Return the partial arc instead of an error when `t_max` is reached first.
    pub allow_timeout: bool,
}

impl Default for ArcOptions {
    fn default() -> Self {
        ArcOptions {
            mode: Mode::Plain,
            ctl: StepControl::default(),
            t_max: 50.0,
            keep_dense: false,
            touch_tol: 1e-9,
            event_tol: 1e-12,
            allow_timeout: false,
        }
    }
}

impl ArcOptions {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
    pub fn dense(mut self) -> Self {
        self.keep_dense = true;
        self
    }
}

/// Regime of a trajectory piece.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Upper,
    Lower,
    Sliding,
}

impl From<Side> for Regime {
    fn from(s: Side) -> Regime {
        match s {
            Side::Upper => Regime::Upper,
            Side::Lower => Regime::Lower,
        }
    }
}

/// A solution piece in one regime.
#[derive(Clone, Debug)]
pub struct Arc {
    pub regime: Regime,
    pub direction: Direction,
    pub t_start: f64,
    pub t_end: f64,
    /// `(t, x, y)` at the accepted step ends, starting with the initial point.
    pub samples: Vec<[f64; 3]>,
    pub terminal: Terminal,
    pub layout: Layout,
    /// Augmented state at the end.
    pub end_state: Vec<f64>,
    /// Passes of the stop level outside the acceptance window, `(t, x, y)`.
    pub passes: Vec<[f64; 3]>,
    /// Accepted integration steps (in `s = |t - t_start|`).
    pub steps: Vec<f64>,
    /// Interpolants of `x`, `y` and (when integrated) `D`, in `s`.
    pub dense: Vec<DenseStep>,
}

impl Arc {
    pub fn end(&self) -> (f64, f64) {
        (self.end_state[0], self.end_state[1])
    }

    pub fn start(&self) -> (f64, f64) {
        (self.samples[0][1], self.samples[0][2])
    }

    /// Signed physical duration.
    pub fn tau(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// `∫ div dt` over the arc in physical time.
    pub fn div_integral(&self) -> Option<f64> {
        (self.layout.mode != Mode::Plain).then(|| self.end_state[Layout::D])
    }

    /// Fundamental matrix of the variational equation at the end, row-major.
    pub fn phi(&self) -> Option<[[f64; 2]; 2]> {
        (self.layout.mode == Mode::Variational).then(|| {
            let p = &self.end_state[Layout::PHI..Layout::PHI + 4];
            [[p[0], p[1]], [p[2], p[3]]]
        })
    }

    /// Sensitivity `(x_{a_i}, y_{a_i})` of the end state (time held fixed).
    pub fn sensitivity(&self, i: usize) -> Option<(f64, f64)> {
        (self.layout.mode == Mode::Variational).then(|| {
            let k = self.layout.w(i);
            (self.end_state[k], self.end_state[k + 1])
        })
    }

    /// `∫ e^{-D(t)} (f g_{a_i} - g f_{a_i}) dt` along the arc.
    pub fn adjoint_integral(&self, i: usize) -> Option<f64> {
        (self.layout.mode == Mode::Variational).then(|| self.end_state[self.layout.a(i)])
    }

    /// `∫ ∇div · (x_x, y_x) dt`.
    pub fn grad_div_x(&self) -> Option<f64> {
        (self.layout.mode == Mode::Variational).then(|| self.end_state[self.layout.bx()])
    }

    /// `∫ ∇div · w_i dt`.
    pub fn grad_div_alpha(&self, i: usize) -> Option<f64> {
        (self.layout.mode == Mode::Variational).then(|| self.end_state[self.layout.ba(i)])
    }

    /// `∫ div_{a_i} dt`.
    pub fn div_alpha_integral(&self, i: usize) -> Option<f64> {
        (self.layout.mode == Mode::Variational).then(|| self.end_state[self.layout.ca(i)])
    }

    /// Moves the arc to start at physical time `t0`.
    pub fn shift(&mut self, t0: f64) {
        self.t_start += t0;
        self.t_end += t0;
        for p in self.samples.iter_mut().chain(self.passes.iter_mut()) {
            p[0] += t0;
        }
    }

    /// Interpolated `(x, y, D)` at physical time `t` (needs dense output).
    pub fn interpolate(&self, t: f64) -> Option<[f64; 3]> {
        if self.dense.is_empty() {
            return None;
        }
        let s = ((t - self.t_start) * self.direction.sign()).clamp(0.0, self.tau().abs());
        let idx = self.dense.partition_point(|d| d.s0 + d.h < s).min(self.dense.len() - 1);
        let d = &self.dense[idx];
        let s = s.clamp(d.s0, d.s0 + d.h);
        let z = if d.nd() > 2 { d.eval(2, s) } else { 0.0 };
        Some([d.eval(0, s), d.eval(1, s), z])
    }
}

/// Right-hand side of one subsystem, time-reversed when integrating backward.
pub(crate) struct FieldSystem<'a> {
    pub model: &'a FilippovModel,
    pub side: Side,
    pub alpha: &'a [f64],
    pub sgn: f64,
    pub layout: Layout,
    jet: Jet,
}

impl<'a> FieldSystem<'a> {
    pub fn new(model: &'a FilippovModel, side: Side, alpha: &'a [f64], dir: Direction, mode: Mode) -> Self {
        FieldSystem {
            model,
            side,
            alpha,
            sgn: dir.sign(),
            layout: Layout { m: model.m, mode },
            jet: Jet::new(model.m),
        }
    }
}

impl System for FieldSystem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn rhs(&mut self, _s: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
        let sg = self.sgn;
        if self.layout.mode == Mode::Plain {
            let (f, g) = self.model.eval_field(self.side, u[0], u[1], self.alpha)?;
            du[0] = sg * f;
            du[1] = sg * g;
            return Ok(());
        }
        self.model.eval_jet(self.side, u[0], u[1], self.alpha, &mut self.jet)?;
        let j = &self.jet;
        du[0] = sg * j.f;
        du[1] = sg * j.g;
        du[Layout::D] = sg * j.div();
        if self.layout.mode == Mode::Divergence {
            return Ok(());
        }
        let l = self.layout;
        let p = Layout::PHI;
        let (p00, p01, p10, p11) = (u[p], u[p + 1], u[p + 2], u[p + 3]);
        du[p] = sg * (j.fx * p00 + j.fy * p10);
        du[p + 1] = sg * (j.fx * p01 + j.fy * p11);
        du[p + 2] = sg * (j.gx * p00 + j.gy * p10);
        du[p + 3] = sg * (j.gx * p01 + j.gy * p11);
        let lam_bar = (-u[Layout::D]).exp();
        for i in 0..l.m {
            let k = l.w(i);
            let (wx, wy) = (u[k], u[k + 1]);
            du[k] = sg * (j.fx * wx + j.fy * wy + j.fa[i]);
            du[k + 1] = sg * (j.gx * wx + j.gy * wy + j.ga[i]);
            du[l.a(i)] = sg * lam_bar * (j.f * j.ga[i] - j.g * j.fa[i]);
            du[l.ba(i)] = sg * (j.div_x * wx + j.div_y * wy);
            du[l.ca(i)] = sg * j.div_a[i];
        }
        du[l.bx()] = sg * (j.div_x * p00 + j.div_y * p10);
        Ok(())
    }
}

enum Found {
    Level { s: f64 },
    Touch { s: f64 },
}

/// Integrates one subsystem from `start` until `stop` fires.
pub fn integrate_arc(
    model: &FilippovModel,
    side: Side,
    start: (f64, f64),
    alpha: &[f64],
    direction: Direction,
    stop: Stop,
    opts: &ArcOptions,
) -> Result<Arc> {
    model.check_alpha(alpha)?;
    let mut sys = FieldSystem::new(model, side, alpha, direction, opts.mode);
    let layout = sys.layout;
    let u0 = layout.initial(start.0, start.1);
    let nd = if opts.mode == Mode::Plain { 2 } else { 3 };
    let mut st = Stepper::new(&mut sys, 0.0, &u0, opts.ctl)?;
    let sgn = direction.sign();

    let (level, sense, window, touch) = match stop {
        Stop::Section { level, sense, window } => (Some(level), sense, window, false),
        Stop::Boundary { window, touch } => {
            let sense = if side == Side::Upper { Crossing::Down } else { Crossing::Up };
            (Some(0.0), sense, window, touch)
        }
        Stop::Time => (None, Crossing::Down, None, false),
    };
    let dsg = match sense {
        Crossing::Down => 1.0,
        Crossing::Up => -1.0,
    };

    let mut arc = Arc {
        regime: side.into(),
        direction,
        t_start: 0.0,
        t_end: 0.0,
        samples: vec![[0.0, start.0, start.1]],
        terminal: Terminal::TimeOut,
        layout,
        end_state: u0.clone(),
        passes: Vec::new(),
        steps: Vec::new(),
        dense: Vec::new(),
    };

    let s_max = opts.t_max;
    // A touch only counts once the arc has left the line; this keeps
    // a start at a fold from registering as a touch.
    let mut touch_armed = dsg * start.1 > 10.0 * opts.touch_tol;
    loop {
        if st.s >= s_max {
            arc.terminal = Terminal::TimeOut;
            break;
        }
        st.step(&mut sys, s_max)?;
        arc.steps.push(st.last_h());
        let need_dense = opts.keep_dense || level.is_some() || touch;
        let dense = need_dense.then(|| st.dense(nd));

        let mut found: Option<Found> = None;
        if let (Some(lv), Some(d)) = (level, dense.as_ref()) {
            // Signed distance to the level, positive on the approach side.
            let e0 = dsg * (st.u_old[1] - lv);
            let e1 = dsg * (st.u[1] - lv);
            let ev = |s: f64| Ok(dsg * (d.eval(1, s) - lv));
            let tol_s = 1e-15 * d.h.max(1.0);
            // Walk the monotone pieces of the interpolant, so that a dip
            // between two turning points inside one step is not stepped over.
            // A start on the level (possibly at a fold, where the initial
            // slope is rounding noise) only counts after rising above it.
            let s1 = d.s0 + d.h;
            let mut armed = e0 > 0.0;
            let mut prev = (d.s0, e0);
            for s in d.turning_points(1).into_iter().chain(std::iter::once(s1)) {
                let e = if s == s1 { e1 } else { ev(s)? };
                let at_min = s < s1 && e < prev.1;
                if at_min && armed && touch && touch_armed && e.abs() <= opts.touch_tol {
                    found = Some(Found::Touch { s });
                    break;
                }
                if armed && prev.1 > 0.0 && e <= 0.0 {
                    found = Some(Found::Level { s: brent_with(ev, prev.0, prev.1, s, e, tol_s, 0.0)? });
                    break;
                }
                armed |= e > 0.0;
                prev = (s, e);
            }
        }

        match found {
            Some(Found::Level { s }) => {
                let lv = level.unwrap();
                let (state, s) = polish_level(&mut st, &mut sys, s, lv, opts.event_tol)?;
                let x = state[0];
                if window.map_or(true, |(lo, hi)| x >= lo && x <= hi) {
                    if touch {
                        if let Some((state, s)) = shallow_touch(&mut st, &mut sys, &state, s, dsg, opts)? {
                            finish(&mut arc, &st, dense, state, s, opts, sgn, Terminal::Touch);
                            return Ok(arc);
                        }
                    }
                    let terminal = if matches!(stop, Stop::Boundary { .. }) {
                        Terminal::BoundaryHit
                    } else {
                        Terminal::SectionHit
                    };
                    finish(&mut arc, &st, dense, state, s, opts, sgn, terminal);
                    return Ok(arc);
                }
                arc.passes.push([sgn * s, x, state[1]]);
            }
            Some(Found::Touch { s }) => {
                let mut state = vec![0.0; st.dim()];
                st.probe_from_old(&mut sys, s - st.s_old, &mut state)?;
                let x = state[0];
                if window.map_or(true, |(lo, hi)| x >= lo && x <= hi) {
                    finish(&mut arc, &st, dense, state, s, opts, sgn, Terminal::Touch);
                    return Ok(arc);
                }
            }
            None => {}
        }
        if let Some(d) = dense {
            if opts.keep_dense {
                arc.dense.push(d);
            }
        }
        arc.samples.push([sgn * st.s, st.u[0], st.u[1]]);
        touch_armed |= dsg * st.u[1] > 10.0 * opts.touch_tol;
    }
    arc.t_end = sgn * st.s;
    arc.end_state = st.u.clone();
    if matches!(stop, Stop::Time) || opts.allow_timeout {
        return Ok(arc);
    }
    Err(Error::TimeOut(format!(
        "{side:?} arc from ({}, {}) did not reach its event within t = {}",
        start.0, start.1, opts.t_max
    )))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    arc: &mut Arc,
    st: &Stepper,
    dense: Option<DenseStep>,
    state: Vec<f64>,
    s: f64,
    opts: &ArcOptions,
    sgn: f64,
    terminal: Terminal,
) {
    // The recorded step sequence ends with the partial step to the event.
    if let Some(last) = arc.steps.last_mut() {
        *last = s - st.s_old;
    }
    if opts.keep_dense {
        if let Some(d) = dense {
            arc.dense.push(d);
        }
    }
    arc.samples.push([sgn * s, state[0], state[1]]);
    arc.t_end = sgn * s;
    arc.end_state = state;
    arc.terminal = terminal;
}

/// Moves a located level crossing onto a genuine Runge-Kutta step from the
/// start of the current step, by Newton iteration on the step length.
fn polish_level(
    st: &mut Stepper,
    sys: &mut FieldSystem<'_>,
    s_guess: f64,
    level: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = st.dim();
    let mut state = vec![0.0; n];
    let mut du = vec![0.0; n];
    let mut h = s_guess - st.s_old;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for _ in 0..6 {
        st.probe_from_old(sys, h, &mut state)?;
        let e = state[1] - level;
        if best.as_ref().map_or(true, |b| e.abs() < b.0) {
            best = Some((e.abs(), state.clone(), st.s_old + h));
        }
        if e.abs() <= tol {
            break;
        }
        sys.rhs(0.0, &state, &mut du)?;
        if du[1] == 0.0 {
            break;
        }
        h -= e / du[1];
    }
    let (_, state, s) = best.unwrap();
    Ok((state, s))
}

/// A crossing so shallow that the whole excursion past the line stays
/// within the touch tolerance is a touch: returns the state at the turning
/// point. With `y' = v` and `y'' = a` at the crossing the dip is roughly
/// `v^2 / 2|a|`; that screens out clear crossings, then the turning point
/// is located on the orbit itself (near a fold the profile is not quadratic).
fn shallow_touch(
    st: &mut Stepper,
    sys: &mut FieldSystem<'_>,
    state: &[f64],
    s: f64,
    dsg: f64,
    opts: &ArcOptions,
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut jet = Jet::new(sys.model.m);
    sys.model.eval_jet(sys.side, state[0], state[1], sys.alpha, &mut jet)?;
    let v = sys.sgn * jet.g;
    let a = jet.f * jet.gx + jet.g * jet.gy;
    // Moving towards the line (dsg * v < 0) and bending back (dsg * a > 0).
    if !(dsg * v < 0.0 && dsg * a > 0.0) || v * v / (2.0 * a.abs()) > 100.0 * opts.touch_tol {
        return Ok(None);
    }
    let mut out = vec![0.0; st.dim()];
    let mut vel = |st: &mut Stepper, sys: &mut FieldSystem<'_>, s1: f64, out: &mut Vec<f64>| -> Result<f64> {
        st.probe_from_old(sys, s1 - st.s_old, out)?;
        sys.model.eval_jet(sys.side, out[0], out[1], sys.alpha, &mut jet)?;
        Ok(dsg * sys.sgn * jet.g)
    };
    let ds = (v / a).abs();
    let (s_a, v_a) = (s, dsg * v);
    let mut s_b = s + ds;
    let mut v_b = vel(st, sys, s_b, &mut out)?;
    let mut k = 0;
    while v_b < 0.0 {
        k += 1;
        if k > 8 {
            return Ok(None);
        }
        s_b = s + ds * f64::powi(2.0, k);
        v_b = vel(st, sys, s_b, &mut out)?;
    }
    let tol_s = 1e-15 * s_b.abs().max(1.0);
    let s_t = brent_with(|x| vel(st, sys, x, &mut out), s_a, v_a, s_b, v_b, tol_s, 0.0)?;
    st.probe_from_old(sys, s_t - st.s_old, &mut out)?;
    if out[1].abs() > opts.touch_tol {
        return Ok(None);
    }
    Ok(Some((out, s_t)))
}

/// Recomputes an arc with exactly the step sequence of `base`, solving for
/// the final partial step so that `y` reaches `level`. The result depends
/// smoothly on `start` and `alpha`, which makes finite differences of
/// event-terminated maps clean.
#[allow(clippy::too_many_arguments)]
pub fn replay_to_level(
    model: &FilippovModel,
    side: Side,
    start: (f64, f64),
    alpha: &[f64],
    direction: Direction,
    base: &Arc,
    level: f64,
    mode: Mode,
    opts: &ArcOptions,
) -> Result<Vec<f64>> {
    let mut sys = FieldSystem::new(model, side, alpha, direction, mode);
    let u0 = sys.layout.initial(start.0, start.1);
    let mut st = Stepper::new(&mut sys, 0.0, &u0, opts.ctl)?;
    let n_full = base.steps.len().saturating_sub(1);
    for &h in &base.steps[..n_full] {
        st.step_fixed(&mut sys, h)?;
    }
    let h0 = *base.steps.last().ok_or_else(|| Error::Domain("empty base arc".into()))?;
    let n = st.dim();
    let mut state = vec![0.0; n];
    let mut du = vec![0.0; n];
    let mut h = h0;
    for _ in 0..20 {
        st.probe(&mut sys, h, &mut state)?;
        let e = state[1] - level;
        if e.abs() <= 1e-15 * (1.0 + level.abs()) {
            break;
        }
        sys.rhs(0.0, &state, &mut du)?;
        let dh = e / du[1];
        h -= dh;
        if dh.abs() <= 1e-16 * h.abs().max(1e-300) {
            st.probe(&mut sys, h, &mut state)?;
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    /// Near the cusp of `s2` the upper orbit from a crossing point dips a
    /// few 1e-7 below the line over an interval much shorter than one step.
    #[test]
    fn dip_between_two_turning_points_is_found() {
        let m = load_scenario("s2").unwrap();
        let alpha = [-1.0865348536037384e-5, 0.016891800866850392];
        // g(., 0) < 0 on (-1.0117835, -0.99939).
        let stop = Stop::Boundary { window: None, touch: true };
        let arc =
            integrate_arc(&m, Side::Upper, (-1.016741, 0.0), &alpha, Direction::Forward, stop, &ArcOptions::default())
                .unwrap();
        let (x, _) = arc.end();
        assert!(x > -1.0117835 && x < -0.99939, "lands at {x}");
        assert!(matches!(arc.terminal, Terminal::BoundaryHit), "{:?}", arc.terminal);
    }
}
