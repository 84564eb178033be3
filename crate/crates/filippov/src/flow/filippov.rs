//! Filippov solutions: smooth arcs concatenated through crossing, sliding
//! and exit at tangencies.

use std::fmt::Write as _;

use serde::Serialize;

use super::arc::{integrate_arc, Arc, ArcOptions, Direction, Layout, Mode, Regime, Stop, Terminal};
use super::dopri::{StepControl, Stepper, System};
use crate::boundary::{classify_lie, lie_data, sliding_velocity, BoundaryClass, BoundaryTolerances, LieData, Tangency};
use crate::error::{Error, Result};
use crate::model::{FilippovModel, Side};
use crate::roots::brent_with;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Crossing,
    SlidingOnset,
    SlidingExit,
    /// Touch of the line at a tangency without switching.
    Graze,
    /// Switch of side at a fold-fold point.
    FoldFoldSwitch,
    Stall,
    HigherDegenerate,
    TimeOut,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Crossing => "crossing",
            EventKind::SlidingOnset => "sliding-onset",
            EventKind::SlidingExit => "sliding-exit",
            EventKind::Graze => "graze",
            EventKind::FoldFoldSwitch => "fold-fold-switch",
            EventKind::Stall => "stall",
            EventKind::HigherDegenerate => "higher-degenerate",
            EventKind::TimeOut => "time-out",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// A concatenation of arcs with matching endpoints.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub direction: Direction,
    pub arcs: Vec<Arc>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn end(&self) -> (f64, f64) {
        self.arcs.last().map_or((f64::NAN, f64::NAN), |a| a.end())
    }

    pub fn t_end(&self) -> f64 {
        self.arcs.last().map_or(0.0, |a| a.t_end)
    }

    /// Points where the solution meets the switching line, with the event kind.
    pub fn line_events(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind != EventKind::TimeOut)
    }

    /// CSV with columns `t,x,y,regime`; events as `# event,...` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,regime\n");
        let mut ev = self.events.iter().peekable();
        for arc in &self.arcs {
            let name = match arc.regime {
                Regime::Upper => "upper",
                Regime::Lower => "lower",
                Regime::Sliding => "sliding",
            };
            for s in &arc.samples {
                let _ = writeln!(out, "{:.15e},{:.15e},{:.15e},{name}", s[0], s[1], s[2]);
            }
            let sg = self.direction.sign();
            while let Some(e) = ev.peek() {
                if sg * e.t <= sg * arc.t_end + 1e-12 {
                    let _ = writeln!(out, "# event,{},{:.15e},{:.15e},{:.15e}", e.kind.name(), e.t, e.x, e.y);
                    ev.next();
                } else {
                    break;
                }
            }
        }
        for e in ev {
            let _ = writeln!(out, "# event,{},{:.15e},{:.15e},{:.15e}", e.kind.name(), e.t, e.x, e.y);
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FilippovOptions {
    pub arc: ArcOptions,
    pub tol: BoundaryTolerances,
    /// Offset used to look at the neighbours of a tangent point.
    pub neighbor: f64,
    /// Guard against accumulating switching (chattering).
    pub max_transitions: usize,
    /// Sliding speed below which the motion counts as stalled.
    pub stall_speed: f64,
    /// After a touch, the other normal component below this makes the
    /// point a fold-fold.
    pub fold_fold: f64,
    /// Stop after this many sliding exits (0: no limit).
    pub max_exits: usize,
}

impl Default for FilippovOptions {
    fn default() -> Self {
        FilippovOptions {
            arc: ArcOptions { allow_timeout: true, ..ArcOptions::default() },
            tol: BoundaryTolerances { tangency: 1e-10, ..BoundaryTolerances::default() },
            neighbor: 1e-7,
            max_transitions: 10_000,
            stall_speed: 1e-12,
            fold_fold: 1e-7,
            max_exits: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Next {
    Region(Side),
    Slide,
    Stop(EventKind),
}

fn side_regime(side: Side) -> Regime {
    side.into()
}

/// Lie data as seen in the integration direction.
fn effective_lie(model: &FilippovModel, x: f64, alpha: &[f64], dir: Direction) -> Result<LieData> {
    let l = lie_data(model, x, alpha)?;
    Ok(if dir == Direction::Forward { l } else { l.reversed() })
}

/// Decides where a solution at `(x, 0)` goes next. `incoming` is the side
/// an arc arrived from when it touched the line without crossing.
fn decide(
    model: &FilippovModel,
    x: f64,
    alpha: &[f64],
    dir: Direction,
    incoming: Option<Side>,
    opts: &FilippovOptions,
) -> Result<Next> {
    let l = effective_lie(model, x, alpha, dir)?;
    let class = classify_lie(&l, &opts.tol);
    let sg = dir.sign();
    match class {
        BoundaryClass::CrossingUp => Ok(Next::Region(Side::Upper)),
        BoundaryClass::CrossingDown => Ok(Next::Region(Side::Lower)),
        BoundaryClass::SlidingStable => Ok(Next::Slide),
        BoundaryClass::SlidingUnstable => Err(Error::Ambiguous(format!(
            "solution reaches the repelling sliding set at x = {x}"
        ))),
        BoundaryClass::HigherDegenerate | BoundaryClass::BoundaryEquilibrium => {
            Ok(Next::Stop(EventKind::HigherDegenerate))
        }
        BoundaryClass::FoldFold { upper, lower } => {
            let up_vis = upper == Tangency::Fold { visible: true };
            let lo_vis = lower == Tangency::Fold { visible: true };
            match incoming {
                // A graze at a fold-fold continues on the other side when that
                // side's fold is visible.
                Some(side) => {
                    let other_vis = if side == Side::Upper { lo_vis } else { up_vis };
                    if other_vis {
                        Ok(Next::Region(side.other()))
                    } else {
                        Ok(Next::Region(side))
                    }
                }
                None if up_vis => Ok(Next::Region(Side::Upper)),
                None if lo_vis => Ok(Next::Region(Side::Lower)),
                None => neighbor(model, x, alpha, dir, Side::Upper, opts),
            }
        }
        BoundaryClass::TangentUpper(_) => {
            if incoming == Some(Side::Upper) && l.z2ph > 0.0 {
                return Ok(Next::Region(Side::Upper));
            }
            let _ = sg;
            neighbor(model, x, alpha, dir, Side::Upper, opts)
        }
        BoundaryClass::TangentLower(_) => {
            if incoming == Some(Side::Lower) && l.z2mh < 0.0 {
                return Ok(Next::Region(Side::Lower));
            }
            neighbor(model, x, alpha, dir, Side::Lower, opts)
        }
    }
}

/// Continuation after an arc touched the line at a tangency of its own
/// field. The solution grazes on, except at a fold-fold whose other fold
/// is visible, where it continues on the other side.
fn after_touch(
    model: &FilippovModel,
    x: f64,
    alpha: &[f64],
    dir: Direction,
    side: Side,
    opts: &FilippovOptions,
) -> Result<Next> {
    let l = effective_lie(model, x, alpha, dir)?;
    let (other, other_z2) = match side {
        Side::Upper => (l.zmh, -l.z2mh),
        Side::Lower => (l.zph, l.z2ph),
    };
    if other.abs() <= opts.fold_fold && other_z2 > opts.tol.fold {
        return Ok(Next::Region(side.other()));
    }
    Ok(Next::Region(side))
}

/// Resolves a tangency by classifying the point a small step ahead along
/// the tangent field.
fn neighbor(
    model: &FilippovModel,
    x: f64,
    alpha: &[f64],
    dir: Direction,
    tangent: Side,
    opts: &FilippovOptions,
) -> Result<Next> {
    let (f, _) = model.eval_field(tangent, x, 0.0, alpha)?;
    let step = opts.neighbor * dir.sign() * f.signum();
    if step == 0.0 {
        return Ok(Next::Stop(EventKind::HigherDegenerate));
    }
    let l = effective_lie(model, x + step, alpha, dir)?;
    let class = classify_lie(&l, &BoundaryTolerances { tangency: 0.0, ..opts.tol });
    Ok(match class {
        BoundaryClass::CrossingUp => Next::Region(Side::Upper),
        BoundaryClass::CrossingDown => Next::Region(Side::Lower),
        BoundaryClass::SlidingStable => Next::Slide,
        // The tangent side's field leaves the line there.
        BoundaryClass::SlidingUnstable => Next::Region(tangent),
        _ => Next::Stop(EventKind::HigherDegenerate),
    })
}

struct SlidingSystem<'a> {
    model: &'a FilippovModel,
    alpha: &'a [f64],
    sgn: f64,
}

impl System for SlidingSystem<'_> {
    fn dim(&self) -> usize {
        1
    }
    fn rhs(&mut self, _s: f64, u: &[f64], du: &mut [f64]) -> Result<()> {
        du[0] = self.sgn * sliding_velocity(self.model, u[0], self.alpha)?;
        Ok(())
    }
}

struct SlideEnd {
    arc: Arc,
    exit: Option<Side>,
}

/// Integrates the sliding motion from `x0` until a normal component changes
/// sign, the motion stalls or the time budget runs out.
fn slide(
    model: &FilippovModel,
    x0: f64,
    alpha: &[f64],
    dir: Direction,
    t_budget: f64,
    opts: &FilippovOptions,
) -> Result<SlideEnd> {
    let sgn = dir.sign();
    let mut sys = SlidingSystem { model, alpha, sgn };
    let ctl = StepControl { err_dims: 1, ..opts.arc.ctl };
    let mut st = Stepper::new(&mut sys, 0.0, &[x0], ctl)?;
    let normal = |x: f64| -> Result<(f64, f64)> {
        let l = effective_lie(model, x, alpha, dir)?;
        Ok((l.zph, l.zmh))
    };
    let mut samples = vec![[0.0, x0, 0.0]];
    let mut steps = Vec::new();
    let mut prev = normal(x0)?;
    let finish = |samples: Vec<[f64; 3]>, steps: Vec<f64>, s: f64, x: f64, terminal: Terminal| Arc {
        regime: Regime::Sliding,
        direction: dir,
        t_start: 0.0,
        t_end: sgn * s,
        samples,
        terminal,
        layout: Layout { m: model.m, mode: Mode::Plain },
        end_state: vec![x, 0.0],
        passes: Vec::new(),
        steps,
        dense: Vec::new(),
    };
    loop {
        if st.s >= t_budget {
            let x = st.u[0];
            return Ok(SlideEnd { arc: finish(samples, steps, st.s, x, Terminal::TimeOut), exit: None });
        }
        st.step(&mut sys, t_budget)?;
        steps.push(st.last_h());
        let cur = normal(st.u[0])?;
        // Stable sliding has zph < 0 < zmh; leaving it means zph turns
        // positive (exit up) or zmh turns negative (exit down).
        let up = prev.0 < 0.0 && cur.0 >= 0.0;
        let down = prev.1 > 0.0 && cur.1 <= 0.0;
        if up || down {
            let d = st.dense(1);
            let which = |s: f64| -> Result<f64> {
                let (p, m) = normal(d.eval(0, s))?;
                Ok(if up { p } else { -m })
            };
            let e0 = if up { prev.0 } else { -prev.1 };
            let e1 = if up { cur.0 } else { -cur.1 };
            let s_ev = brent_with(which, d.s0, e0, d.s0 + d.h, e1, 1e-15, 0.0)?;
            let x = d.eval(0, s_ev);
            samples.push([sgn * s_ev, x, 0.0]);
            if let Some(last) = steps.last_mut() {
                *last = s_ev - d.s0;
            }
            let exit = if up { Side::Upper } else { Side::Lower };
            return Ok(SlideEnd { arc: finish(samples, steps, s_ev, x, Terminal::SlidingExit), exit: Some(exit) });
        }
        samples.push([sgn * st.s, st.u[0], 0.0]);
        if st.f[0].abs() < opts.stall_speed {
            let x = st.u[0];
            return Ok(SlideEnd { arc: finish(samples, steps, st.s, x, Terminal::Stalled), exit: None });
        }
        prev = cur;
    }
}

/// Forward Filippov solution from `start` up to time `t_max`.
pub fn flow_filippov(model: &FilippovModel, start: (f64, f64), alpha: &[f64], t_max: f64) -> Result<Trajectory> {
    flow_filippov_with(model, start, alpha, t_max, Direction::Forward, &FilippovOptions::default())
}

/// Filippov solution in either time direction. Backward solutions are the
/// forward solutions of the system with both fields negated.
pub fn flow_filippov_with(
    model: &FilippovModel,
    start: (f64, f64),
    alpha: &[f64],
    t_max: f64,
    direction: Direction,
    opts: &FilippovOptions,
) -> Result<Trajectory> {
    model.check_alpha(alpha)?;
    let sgn = direction.sign();
    let mut traj = Trajectory { direction, arcs: Vec::new(), events: Vec::new() };
    let (mut x, mut y) = start;
    let mut t = 0.0f64;
    let mut exits = 0usize;
    let mut next = if y > 0.0 {
        Next::Region(Side::Upper)
    } else if y < 0.0 {
        Next::Region(Side::Lower)
    } else {
        decide(model, x, alpha, direction, None, opts)?
    };

    for _ in 0..opts.max_transitions {
        let budget = t_max - t.abs();
        if budget <= 0.0 {
            traj.events.push(Event { kind: EventKind::TimeOut, t, x, y });
            return Ok(traj);
        }
        match next {
            Next::Stop(kind) => {
                traj.events.push(Event { kind, t, x, y });
                return Ok(traj);
            }
            Next::Region(side) => {
                let aopts = ArcOptions { t_max: budget, ..opts.arc };
                let mut arc = integrate_arc(
                    model,
                    side,
                    (x, y),
                    alpha,
                    direction,
                    Stop::Boundary { window: None, touch: true },
                    &aopts,
                )?;
                arc.shift(t);
                t = arc.t_end;
                (x, y) = arc.end();
                let terminal = arc.terminal;
                debug_assert_eq!(arc.regime, side_regime(side));
                traj.arcs.push(arc);
                match terminal {
                    Terminal::TimeOut => {
                        traj.events.push(Event { kind: EventKind::TimeOut, t, x, y });
                        return Ok(traj);
                    }
                    Terminal::Touch => {
                        y = 0.0;
                        next = after_touch(model, x, alpha, direction, side, opts)?;
                        let kind = match next {
                            Next::Region(s) if s == side => EventKind::Graze,
                            Next::Region(_) => EventKind::FoldFoldSwitch,
                            Next::Slide => EventKind::SlidingOnset,
                            Next::Stop(k) => k,
                        };
                        traj.events.push(Event { kind, t, x, y });
                    }
                    _ => {
                        y = 0.0;
                        next = decide(model, x, alpha, direction, Some(side), opts)?;
                        let kind = match next {
                            Next::Region(s) if s == side => EventKind::Graze,
                            Next::Region(_) => EventKind::Crossing,
                            Next::Slide => EventKind::SlidingOnset,
                            Next::Stop(k) => k,
                        };
                        traj.events.push(Event { kind, t, x, y });
                    }
                }
            }
            Next::Slide => {
                let end = slide(model, x, alpha, direction, budget, opts)?;
                let mut arc = end.arc;
                arc.shift(t);
                t = arc.t_end;
                x = arc.end_state[0];
                y = 0.0;
                let terminal = arc.terminal;
                traj.arcs.push(arc);
                match (terminal, end.exit) {
                    (Terminal::SlidingExit, Some(side)) => {
                        traj.events.push(Event { kind: EventKind::SlidingExit, t, x, y });
                        exits += 1;
                        if opts.max_exits > 0 && exits >= opts.max_exits {
                            return Ok(traj);
                        }
                        next = Next::Region(side);
                    }
                    (Terminal::Stalled, _) => {
                        traj.events.push(Event { kind: EventKind::Stall, t, x, y });
                        return Ok(traj);
                    }
                    _ => {
                        traj.events.push(Event { kind: EventKind::TimeOut, t, x, y });
                        return Ok(traj);
                    }
                }
            }
        }
        let _ = sgn;
    }
    Err(Error::Degenerate(format!(
        "more than {} regime switches before t = {t_max} (chattering?)",
        opts.max_transitions
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    #[test]
    fn crossing_up_start_goes_to_upper() {
        let s1 = load_scenario("s1").unwrap();
        let x = -0.6;
        let l = lie_data(&s1, x, &[0.0, 0.0]).unwrap();
        assert!(l.zph > 0.0 && l.zmh > 0.0);
        let tr = flow_filippov(&s1, (x, 0.0), &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(tr.arcs[0].regime, Regime::Upper);
    }

    #[test]
    fn s3_origin_orbit_is_the_critical_cycle() {
        let s3 = load_scenario("s3").unwrap();
        let tr = flow_filippov(&s3, (-1.0, 0.0), &[0.0, 0.0], 4.0).unwrap();
        assert!(tr.arcs.len() >= 2);
        assert_eq!(tr.arcs[0].regime, Regime::Upper);
        let (x, y) = tr.arcs[0].end();
        assert!((x - 1.0).abs() < 1e-7 && y.abs() < 1e-9, "{x} {y}");
        assert_eq!(tr.arcs[1].regime, Regime::Lower);
        let (x, y) = tr.arcs[1].end();
        assert!((x + 1.0).abs() < 1e-6 && y.abs() < 1e-9, "{x} {y}");
    }

    #[test]
    fn s1_sliding_cycle_closes() {
        let s1 = load_scenario("s1").unwrap();
        let alpha = [1e-3, 0.0];
        let tr = flow_filippov(&s1, (-1.2, 0.0), &alpha, 12.0).unwrap();
        let exits: Vec<f64> = tr.events.iter().filter(|e| e.kind == EventKind::SlidingExit).map(|e| e.x).collect();
        assert!(exits.len() >= 3, "{:?}", tr.events);
        // Successive exits alternate between the two visible folds.
        assert!((exits[0] + exits[1]).abs() < 1e-9);
        assert!((exits[2] - exits[0]).abs() < 1e-9);
    }

    #[test]
    fn csv_has_events() {
        let s1 = load_scenario("s1").unwrap();
        let tr = flow_filippov(&s1, (-1.2, 0.0), &[1e-3, 0.0], 3.0).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,x,y,regime\n"));
        assert!(csv.contains("# event,sliding-exit,"));
    }
}
