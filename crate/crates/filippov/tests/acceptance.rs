//! Acceptance suite. Prints one PASS/FAIL line per criterion, followed by
//! the failing checks, and exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::E;
use std::time::{Duration, Instant};

use filippov::atlas::{
    coverage, default_cutoffs, extract_curves, fit_all, run_sweep_with, Axis, CellStatus, Coords, CurveFit, CurveSpec,
    Curves, Diagram, GridSpec, Unfolding,
};
use filippov::boundary::{classify_point, sliding_velocity};
use filippov::coeffs::{coefficient_report, measured_unfolding, CoefficientReport};
use filippov::cycles::{Analyzer, Connection, ConnectionKind, CycleKind, SlidingLabel, Stability};
use filippov::exprs::{parse_expr, Var};
use filippov::flow::{flow_filippov, integrate_arc, ArcOptions, Direction, Stop};
use filippov::maps::{MapKind, Maps, Method, Partial};
use filippov::model::{load_scenario, Case, FilippovModel, Side};
use filippov::roots::brent;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

mod common;

/// Checks of one criterion.
#[derive(Default)]
struct Checks {
    total: usize,
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if !ok {
            self.failed.push(what());
        }
    }

    fn close(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check((got - want).abs() <= tol, || format!("{name} = {got:.10} (want {want:.10} ± {tol:e})"));
    }

    fn rel(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        let e = ((got - want) / want).abs();
        self.check(e <= tol, || format!("{name} = {got:.6} (want {want:.6} within {:.0}%, off by {:.1}%)", tol * 100.0, e * 100.0));
    }

    fn ok<T, E: std::fmt::Display>(&mut self, name: &str, r: Result<T, E>) -> Option<T> {
        match r {
            Ok(v) => {
                self.total += 1;
                Some(v)
            }
            Err(e) => {
                self.check(false, || format!("{name}: {e}"));
                None
            }
        }
    }
}

fn criterion(n: u32, title: &str, limit: Duration, body: impl FnOnce(&mut Checks)) -> bool {
    let t0 = Instant::now();
    let mut c = Checks::default();
    body(&mut c);
    let took = t0.elapsed();
    c.check(took <= limit, || format!("runtime {took:.1?} exceeds {limit:?}"));
    let pass = c.failed.is_empty();
    println!(
        "criterion {n}: {} - {title} ({} of {} checks passed, {:.1?})",
        if pass { "PASS" } else { "FAIL" },
        c.total - c.failed.len(),
        c.total,
        took
    );
    for f in &c.failed {
        println!("    fails: {f}");
    }
    for n in &c.notes {
        println!("    note: {n}");
    }
    pass
}

fn scenario(name: &str) -> FilippovModel {
    load_scenario(name).expect("built-in scenario")
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `κ_i = ∫_0^τ0 λ(t) g_αi(Γ0(t)) dt` for the built-in scenarios, where
/// `f = 1` puts the critical orbit at `x = -1 + t` and `λ(t) = exp(∫_t^τ0 div)`.
fn kappa_oracle(m: &FilippovModel, div: f64) -> Vec<f64> {
    let g = m.g_plus();
    (0..m.m)
        .map(|i| {
            let ga = g.diff(Var::Param(i)).unwrap();
            // `g_α` of the scenarios does not depend on `y`.
            simpson(|t| (div * (2.0 - t)).exp() * ga.eval(-1.0 + t, 0.0, &[0.0, 0.0]).unwrap(), 0.0, 2.0, 4000)
        })
        .collect()
}

fn report(c: &mut Checks, name: &str, case: Case) -> Option<CoefficientReport> {
    c.ok(&format!("{name} report"), coefficient_report(&scenario(name), case))
}

fn criterion_1() -> bool {
    criterion(1, "coefficient exactness", Duration::from_secs(10), |c| {
        if let Some(r) = report(c, "s1", Case::Codim1) {
            let theta = r.theta.clone().unwrap_or_default();
            c.close("s1 theta1", theta[0], 0.75, 1e-6);
            c.close("s1 theta2", theta[1], 1.5, 1e-6);
            c.close("s1 lambda0", r.lambda0, 1.0, 1e-6);
            let k = kappa_oracle(&scenario("s1"), 0.0);
            c.close("s1 kappa1", r.kappa[0], k[0], 1e-6);
            c.close("s1 kappa2", r.kappa[1], k[1], 1e-6);
        }
        if let Some(r) = report(c, "s2", Case::Cusp) {
            let (z, e) = (r.zeta.clone().unwrap_or_default(), r.eta.clone().unwrap_or_default());
            c.close("s2 zeta1", z[0], -2.0 / 3.0, 1e-6);
            c.close("s2 zeta2", z[1], 0.0, 1e-6);
            c.close("s2 eta1", e[0], 1.0, 1e-6);
            c.close("s2 eta2", e[1], 2.0 / 3.0, 1e-6);
            let k = kappa_oracle(&scenario("s2"), 0.0);
            c.close("s2 kappa1", r.kappa[0], k[0], 1e-6);
            c.close("s2 kappa2", r.kappa[1], k[1], 1e-6);
        }
        if let Some(r) = report(c, "s3", Case::FoldFold) {
            let cs = (E * E - 7.0) / 2.0;
            let (gl, gr) = (2.0 - 2.0 * cs, 2.0 + 2.0 * cs);
            let l0 = E * E;
            c.close("s3 lambda0", r.lambda0, l0, 1e-6);
            let k = kappa_oracle(&scenario("s3"), 1.0);
            c.close("s3 kappa1 (quadrature)", r.kappa[0], k[0], 1e-6);
            c.close("s3 kappa2 (quadrature)", r.kappa[1], k[1], 1e-6);
            c.close("s3 kappa1", r.kappa[0], l0 - 1.0, 1e-6);
            c.close("s3 kappa2", r.kappa[1], -2.0, 1e-6);
            c.close("s3 Delta", r.delta, l0 * gl - gr, 1e-6);
            c.close("s3 r", r.r.unwrap_or(f64::NAN), -gr / (gl + gr), 1e-6);
            let mu = r.mu.clone().unwrap_or_default();
            c.close("s3 mu1", mu[0], -1.0 / gl - 1.0 / gr, 1e-6);
            c.close("s3 mu2", mu[1], 1.0 / gl - 1.0 / gr, 1e-6);
            // The constant itself, by shooting: the orbit from the fold at
            // (-1, 0) reaches x = 1 at t = 2 and must be back on the line.
            let f = parse_expr("1", 1).unwrap();
            let g = parse_expr("x^3 - x + a1*(x^2 - 1) + y", 1).unwrap();
            let m = FilippovModel::new(f, g, 1, 1.0, "shoot").unwrap();
            let opts = ArcOptions { t_max: 2.0, allow_timeout: true, ..ArcOptions::default() };
            let y_at_1 = |c: f64| {
                integrate_arc(&m, Side::Upper, (-1.0, 0.0), &[c], Direction::Forward, Stop::Time, &opts).map(|a| a.end().1)
            };
            if let Some(shot) = c.ok("s3 shooting", brent(y_at_1, 0.1, 0.3, 1e-15)) {
                c.close("s3 c* by shooting", shot, cs, 1e-9);
            }
        }
    })
}

fn criterion_2() -> bool {
    criterion(2, "map coefficient identities and derivatives", Duration::from_secs(30), |c| {
        for (name, case) in [("s1", Case::Codim1), ("s2", Case::Cusp), ("s3", Case::FoldFold)] {
            let Some(r) = report(c, name, case) else { continue };
            c.close(&format!("{name} lambda- lambda - lambda+"), r.lambda_minus0 * r.lambda0 - r.lambda_plus0, 0.0, 1e-8);
            for i in 0..2 {
                let want = r.kappa_plus[i] - r.kappa[i] * r.lambda_minus0;
                c.close(&format!("{name} kappa-_{}", i + 1), r.kappa_minus[i], want, 1e-6 * want.abs().max(1e-300));
            }
            let m = scenario(name);
            let maps = Maps::new(&m).unwrap();
            let partials =
                [Partial::X, Partial::XX, Partial::Alpha(0), Partial::Alpha(1), Partial::XAlpha(0), Partial::XAlpha(1)];
            for alpha in [[0.0, 0.0], [-2e-3, 1e-3]] {
                for (kind, x) in [(MapKind::Plus, -0.9), (MapKind::Minus, 1.02), (MapKind::Full, -0.9)] {
                    for which in partials {
                        let an = maps.derivative(kind, which, x, &alpha, Method::Analytic);
                        let fd = maps.derivative(kind, which, x, &alpha, Method::Fd);
                        let tag = format!("{name} {kind:?} {which:?} at x = {x}, alpha = {alpha:?}");
                        if let (Some(an), Some(fd)) = (c.ok(&tag, an), c.ok(&tag, fd)) {
                            c.close(&tag, an, fd, 1e-5 * an.abs().max(1.0));
                        }
                    }
                }
            }
        }
    })
}

fn criterion_3() -> bool {
    criterion(3, "codim-1 diagram on s1", Duration::from_secs(60), |c| {
        let m = scenario("s1");
        let Some(u) = c.ok("s1 unfolding", Unfolding::new(&m, Case::Codim1)) else { return };
        let grid = GridSpec { coords: Coords::Alpha, b1: Axis { lo: -1e-2, hi: 1e-2, n: 201 }, b2: Axis { lo: 0.0, hi: 0.0, n: 1 } };
        let Some(d) = c.ok("s1 sweep", run_sweep_with(&u, &grid, 1)) else { return };
        let mut seq: Vec<String> = Vec::new();
        let mut cycles_max = 0;
        for cell in &d.cells {
            c.check(cell.status == CellStatus::Resolved, || format!("cell {} is {:?}", cell.i, cell.status));
            let Some(l) = &cell.label else { continue };
            let n = l.n_crossing + usize::from(l.sliding != SlidingLabel::None) + usize::from(l.critical != "none");
            cycles_max = cycles_max.max(n);
            let key = l.core_key();
            if seq.last() != Some(&key) {
                seq.push(key);
            }
        }
        let want = [
            "crossing=1[stable/0] sliding=none critical=none",
            "crossing=0[] sliding=none critical=through-fold",
            "crossing=0[] sliding=stable/from-upper interior critical=none",
        ];
        c.check(seq == want, || format!("label sequence {seq:?}"));
        c.check(cycles_max <= 1, || format!("{cycles_max} cycles in one cell"));
        // The critical cell sits at rho1 = 0, and rho1 grows at 3/4 per unit alpha1.
        if let Some(cell) = d.cells.iter().find(|cl| cl.label.as_ref().is_some_and(|l| l.critical != "none")) {
            c.close("rho1 at the critical cell", cell.beta.map_or(f64::NAN, |b| b[0]), 0.0, 1e-12);
            c.close("alpha1 at the critical cell", cell.at[0], 0.0, 1e-12);
        }
        let maps = Maps::new(&m).unwrap();
        let h = 1e-5;
        let rho = |a1: f64| measured_unfolding(&maps, Case::Codim1, &[a1, 0.0]).map(|u| u.beta()[0]);
        if let (Some(p), Some(q)) = (c.ok("rho1(+h)", rho(h)), c.ok("rho1(-h)", rho(-h))) {
            c.rel("d rho1 / d alpha1", (p - q) / (2.0 * h), 0.75, 0.01);
        }
    })
}

fn fit_checks(c: &mut Checks, fits: &[CurveFit], names: &[&str], cutoffs: &[f64], exponent: f64, exp_tol: f64) {
    for &name in names {
        let series: Vec<&CurveFit> = cutoffs.iter().filter_map(|&k| fits.iter().find(|f| f.curve == name && f.cutoff == k)).collect();
        c.check(series.len() == cutoffs.len(), || format!("{name}: {} of {} cutoffs fitted", series.len(), cutoffs.len()));
        let Some(last) = series.last() else { continue };
        let pred = last.predicted.unwrap_or(f64::NAN);
        c.rel(&format!("{name} constant at cutoff {:.1e}", last.cutoff), last.c, pred, 0.10);
        c.close(&format!("{name} exponent"), last.exponent, exponent, exp_tol);
        c.check(!last.ill_conditioned, || format!("{name} fit ill-conditioned"));
        let errs: Vec<f64> = series.iter().filter_map(|f| f.relative_error()).collect();
        c.check(errs.windows(2).all(|w| w[1] <= w[0]), || format!("{name}: errors over cutoffs {errs:?} not monotone"));
    }
}

fn sweep_checks(c: &mut Checks, d: &Diagram, tag: &str) {
    let mis: Vec<String> = d
        .cells
        .iter()
        .filter(|cl| cl.misclassified())
        .map(|cl| format!("({}, {}) {} vs {}", cl.i, cl.j, cl.core_key().unwrap_or_default(), cl.predicted.clone().unwrap_or_default()))
        .collect();
    c.check(mis.is_empty(), || format!("{tag}: {} misclassified cells, first {:?}", mis.len(), mis.first()));
    // Cells whose deciding orbit passes within the touch tolerance of the
    // line are left unresolved; they must stay rare.
    let unresolved = d.cells.iter().filter(|cl| cl.status != CellStatus::Resolved).count();
    c.check(unresolved * 100 <= d.cells.len(), || format!("{tag}: {unresolved} of {} cells not resolved", d.cells.len()));
    c.notes.push(format!("{tag}: {} cells, {unresolved} not resolved, {} misclassified", d.cells.len(), mis.len()));
    let cov = coverage(d);
    c.check(cov.orphans.is_empty(), || format!("{tag}: {} of {} label changes without an event sign change", cov.orphans.len(), cov.transitions));
}

fn criterion_4() -> bool {
    criterion(4, "cusp curve constants and regions on s2", Duration::from_secs(300), |c| {
        let m = scenario("s2");
        let Some(u) = c.ok("s2 unfolding", Unfolding::new(&m, Case::Cusp)) else { return };
        let spec = CurveSpec { samples: 24, ..CurveSpec::for_case(Case::Cusp, 12) };
        let Some(curves) = c.ok("s2 curves", extract_curves(&u, &spec, 1)) else { return };
        c.check(curves.misses.is_empty(), || format!("no sign change on {:?}", curves.misses));
        let cutoffs = default_cutoffs(Case::Cusp);
        let fits = fit_all(&u, &curves, &cutoffs);
        fit_checks(c, &fits, &["CS", "SS", "GS"], &cutoffs, 0.5, 0.05);
        // 101 x 101 in (beta1, beta2 / sqrt|beta1|). The scaled rows are
        // offset so that no row lies exactly on a curve with constant ±1.
        let grid = GridSpec {
            coords: Coords::Scaled,
            b1: Axis { lo: -6.4e-5, hi: 6.4e-5, n: 101 },
            b2: Axis { lo: -2.52, hi: 2.48, n: 101 },
        };
        let Some(d) = c.ok("s2 sweep", run_sweep_with(&u, &grid, 1)) else { return };
        sweep_checks(c, &d, "s2 101x101");
        let right: BTreeSet<String> =
            d.cells.iter().filter(|cl| cl.at[0] > 0.0 && cl.status == CellStatus::Resolved).filter_map(|cl| cl.core_key()).collect();
        let want: BTreeSet<String> = [
            "crossing=1[stable/0] sliding=none critical=none",
            "crossing=0[] sliding=stable/from-upper interior critical=none",
            "crossing=0[] sliding=stable/from-lower interior critical=none",
            "crossing=1[stable/4] sliding=none critical=none",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        c.check(right == want, || format!("phi1 > 0 inventory {right:?}"));
    })
}

fn s3_line_spec(lines: usize, samples: usize) -> CurveSpec {
    CurveSpec { lines, b1_max: 1e-2, b1_min: 2.5e-3, samples, xtol: 1e-13 }
}

fn point_on(curves: &Curves, name: &str, line: usize) -> Option<[f64; 2]> {
    curves.points.get(name)?.iter().find(|p| p.line == line).map(|p| p.beta)
}

fn criterion_5() -> bool {
    criterion(5, "fold-fold curves and the two-cycle region on s3", Duration::from_secs(600), |c| {
        let m = scenario("s3");
        let Some(u) = c.ok("s3 unfolding", Unfolding::new(&m, Case::FoldFold)) else { return };
        let v = u.report.vartheta_leading.expect("fold-fold report has varthetas");
        c.check(v.ordered(), || format!("vartheta ordering fails: {v:?}"));
        for (name, got, listed) in [
            ("vartheta4", v.vartheta4, 0.0631),
            ("vartheta6", v.vartheta6, 0.2734),
            ("vartheta5", v.vartheta5, 0.3142),
            ("vartheta7", v.vartheta7, 0.7604),
            ("vartheta3", v.vartheta3, 1.5653),
        ] {
            c.close(name, got, listed, 6e-4);
        }
        let spec = CurveSpec { samples: 24, ..CurveSpec::for_case(Case::FoldFold, 12) };
        let Some(curves) = c.ok("s3 curves", extract_curves(&u, &spec, 1)) else { return };
        c.check(curves.misses.is_empty(), || format!("no sign change on {:?}", curves.misses));
        let cutoffs = default_cutoffs(Case::FoldFold);
        let fits = fit_all(&u, &curves, &cutoffs);
        fit_checks(c, &fits, &["CS+", "SH+", "TC+", "TC-", "SH-", "CS-"], &cutoffs, 2.0, 0.1);

        // Two crossing cycles exactly between F0 (beta2 = 0) and CS+.
        let an = Analyzer::new(&m, Case::FoldFold).unwrap();
        let Some(lines) = c.ok("s3 lines", extract_curves(&u, &s3_line_spec(3, 16), 1)) else { return };
        for line in 0..3 {
            let Some(cs) = point_on(&lines, "CS+", line) else {
                c.check(false, || format!("no CS+ point on line {line}"));
                continue;
            };
            let b1 = cs[0];
            for frac in [-0.2, 0.1, 0.5, 0.9, 1.1, 1.5] {
                let b2 = frac * cs[1];
                let Some(alpha) = c.ok("inversion", u.invert([b1, b2])) else { continue };
                let Some(cyc) = c.ok("find_cycles", an.find_cycles(&alpha)) else { continue };
                let cr: Vec<_> = cyc.iter().filter(|x| x.kind == CycleKind::Crossing).collect();
                let inside = frac > 0.0 && frac < 1.0;
                c.check((cr.len() == 2) == inside, || format!("beta = ({b1:.2e}, {frac} CS+): {} crossing cycles", cr.len()));
                if cr.len() == 2 {
                    let (r0, r1) = (cr[0].return_map_derivative.unwrap_or(f64::NAN), cr[1].return_map_derivative.unwrap_or(f64::NAN));
                    c.check(r0 > 1.0 && r1 < 1.0, || format!("R' inner {r0}, outer {r1}"));
                    c.check(
                        cr[0].stability == Stability::Unstable && cr[1].stability == Stability::Stable,
                        || format!("pairing {:?}, {:?}", cr[0].stability, cr[1].stability),
                    );
                }
            }
        }
        let sliver = GridSpec {
            coords: Coords::Scaled,
            b1: Axis { lo: 2.5e-3, hi: 1e-2, n: 7 },
            b2: Axis { lo: -0.02, hi: 0.1, n: 25 },
        };
        if let Some(d) = c.ok("s3 sliver sweep", run_sweep_with(&u, &sliver, 1)) {
            sweep_checks(c, &d, "s3 sliver");
            let two = d.cells.iter().filter(|cl| cl.label.as_ref().is_some_and(|l| l.n_crossing == 2)).count();
            c.check(two > 0, || "no two-cycle cell in the sliver sweep".into());
        }
        let wide = GridSpec {
            coords: Coords::Scaled,
            b1: Axis { lo: -1e-2, hi: 1e-2, n: 21 },
            b2: Axis { lo: -1.0, hi: 2.5, n: 36 },
        };
        if let Some(d) = c.ok("s3 sweep", run_sweep_with(&u, &wide, 1)) {
            sweep_checks(c, &d, "s3 21x36");
        }
    })
}

fn criterion_6() -> bool {
    use ConnectionKind::*;
    criterion(6, "connection inventory on s3", Duration::from_secs(120), |c| {
        let m = scenario("s3");
        let Some(u) = c.ok("s3 unfolding", Unfolding::new(&m, Case::FoldFold)) else { return };
        let an = Analyzer::new(&m, Case::FoldFold).unwrap();
        let Some(lines) = c.ok("s3 lines", extract_curves(&u, &s3_line_spec(3, 16), 1)) else { return };
        let expected = |name: &str| -> (Vec<Connection>, Option<Stability>) {
            match name {
                "TC+" | "TC-" => (vec![Connection::new(TangentTangent, "T_u-", "T_u+")], None),
                "SH+" => (vec![Connection::new(TangentEquilibrium, "T_u-", "E_p+")], None),
                "SH-" => (vec![Connection::new(TangentEquilibrium, "E_p-", "T_u+")], None),
                "CS+" => (vec![Connection::new(TangentTangent, "T_u-", "T_l+")], Some(Stability::InternallyStable)),
                "CS-" => (vec![Connection::new(TangentTangent, "T_l-", "T_u+")], Some(Stability::InternallyUnstable)),
                _ => (Vec::new(), None),
            }
        };
        for name in ["CS+", "SH+", "TC+", "TC-", "SH-", "CS-"] {
            let Some(pts) = lines.points.get(name) else {
                c.check(false, || format!("no {name} points"));
                continue;
            };
            let (want, critical) = expected(name);
            for p in pts {
                let Some(conn) = c.ok(name, an.find_connections(&p.alpha)) else { continue };
                c.check(conn == want, || {
                    format!("{name} at beta1 = {:.2e}: {:?}", p.beta[0], conn.iter().map(|k| k.key()).collect::<Vec<_>>())
                });
                let Some(cyc) = c.ok(name, an.find_cycles(&p.alpha)) else { continue };
                let crit: Vec<Stability> =
                    cyc.iter().filter(|x| x.kind == CycleKind::CriticalCrossing).map(|x| x.stability).collect();
                c.check(crit == critical.into_iter().collect::<Vec<_>>(), || format!("{name}: critical cycles {crit:?}"));
            }
        }
        // Sliding cycles: stable exactly in (CS+, SH+), unstable exactly in (SH-, CS-).
        for line in 0..6 {
            let (lo, hi, want) = if line < 3 { ("CS+", "SH+", SlidingLabel::Stable) } else { ("SH-", "CS-", SlidingLabel::Unstable) };
            let (Some(p), Some(q)) = (point_on(&lines, lo, line), point_on(&lines, hi, line)) else {
                c.check(false, || format!("line {line}: missing {lo} or {hi}"));
                continue;
            };
            let w = q[1] - p[1];
            for (frac, inside) in [(-0.3, false), (0.05, true), (0.5, true), (0.95, true), (1.3, false)] {
                let b = [p[0], p[1] + frac * w];
                let Some(alpha) = c.ok("inversion", u.invert(b)) else { continue };
                let l = an.classify(&alpha);
                let got = l.sliding == want;
                c.check(got == inside, || format!("beta = ({:.2e}, {:.3e}): sliding {:?}", b[0], b[1], l.sliding));
            }
        }
    })
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn prop(c: &mut Checks, name: &str, result: Result<(), impl std::fmt::Display>) {
    c.check(result.is_ok(), || format!("{name}: {}", result.err().map(|e| e.to_string()).unwrap_or_default()));
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn criterion_7() -> bool {
    criterion(7, "property suites", Duration::from_secs(60), |c| {
        let names = ["s1", "s2", "s3"];
        let r = runner(100).run(
            &(common::expr_text(), -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            |(text, x, y, a1, a2)| {
                let e = parse_expr(&text, 2).map_err(|e| fail(e.to_string()))?;
                let base = [x, y, a1, a2];
                for (k, var) in [Var::X, Var::Y, Var::Param(0), Var::Param(1)].into_iter().enumerate() {
                    let d = e.diff(var).unwrap().eval(x, y, &[a1, a2]).unwrap();
                    let f = |v: f64| {
                        let mut p = base;
                        p[k] = v;
                        e.eval(p[0], p[1], &p[2..]).unwrap()
                    };
                    let h = 1e-5;
                    let fd = (f(base[k] + h) - f(base[k] - h)) / (2.0 * h);
                    if (d - fd).abs() > 1e-5 * (1.0 + d.abs() + f(base[k]).abs()) {
                        return Err(fail(format!("{text}: derivative {k} = {d}, differences {fd}")));
                    }
                }
                Ok(())
            },
        );
        prop(c, "derivatives vs differences", r);

        let r = runner(60).run(&(0usize..3, -1.5f64..1.5, -0.01f64..0.01, -0.01f64..0.01), |(s, x, a1, a2)| {
            let m = scenario(names[s]);
            let alpha = [a1, a2];
            let (p, q) = (classify_point(&m, x, &alpha), classify_point(&m, -x, &alpha));
            match (p, q) {
                (Ok(p), Ok(q)) if q == p.reflected() => {}
                (p, q) => return Err(fail(format!("{} x = {x}: {p:?} vs {q:?}", names[s]))),
            }
            if let (Ok(v), Ok(w)) = (sliding_velocity(&m, x, &alpha), sliding_velocity(&m, -x, &alpha)) {
                if (v + w).abs() > 1e-14 * (1.0 + v.abs()) {
                    return Err(fail(format!("sliding velocity {v} at {x}, {w} at {}", -x)));
                }
            }
            Ok(())
        });
        prop(c, "reflection of boundary classes and sliding velocity", r);

        let r = runner(30).run(
            &(0usize..3, -1.5f64..1.5, -0.3f64..0.3, -0.01f64..0.01, -0.01f64..0.01),
            |(s, x, y, a1, a2)| {
                let m = scenario(names[s]);
                let alpha = [a1, a2];
                match (flow_filippov(&m, (x, y), &alpha, 1.5), flow_filippov(&m, (-x, -y), &alpha, 1.5)) {
                    (Ok(p), Ok(q)) => {
                        let (e, f) = (p.end(), q.end());
                        let kinds = |t: &filippov::flow::Trajectory| t.events.iter().map(|e| e.kind).collect::<Vec<_>>();
                        if (e.0 + f.0).abs() > 1e-8 || (e.1 + f.1).abs() > 1e-8 || kinds(&p) != kinds(&q) {
                            return Err(fail(format!("{} from ({x}, {y}): ends {e:?} and {f:?}", names[s])));
                        }
                        for ev in p.line_events() {
                            if ev.y.abs() > 1e-10 {
                                return Err(fail(format!("event off the line by {:e}", ev.y)));
                            }
                        }
                        Ok(())
                    }
                    (Err(_), Err(_)) => Ok(()),
                    (p, q) => Err(fail(format!("only one of the mirror flows failed: {:?} {:?}", p.err(), q.err()))),
                }
            },
        );
        prop(c, "reflection of flows", r);

        let m1 = scenario("s1");
        let r = runner(30).run(&(-0.9f64..0.9, 0.01f64..0.3), |(x0, y0)| {
            let big_g = |x: f64| -(x.powi(3) / 3.0 + x * x / 3.0 - x / 3.0);
            let tr = flow_filippov(&m1, (x0, y0), &[0.0, 0.0], 3.0).map_err(|e| fail(e.to_string()))?;
            if let Some(ev) = tr.line_events().next() {
                let resid = y0 + big_g(ev.x) - big_g(x0);
                if resid.abs() > 1e-10 || ev.y.abs() > 1e-10 || (ev.t - (ev.x - x0)).abs() > 1e-10 {
                    return Err(fail(format!("event at ({}, {:e}) t = {}: orbit residual {resid:e}", ev.x, ev.y, ev.t)));
                }
            }
            Ok(())
        });
        prop(c, "event accuracy against the closed-form orbit", r);

        let r = runner(20).run(&(0usize..2, -0.01f64..0.01, -0.01f64..0.01), |(s, a1, a2)| {
            let (name, case) = [("s1", Case::Codim1), ("s2", Case::Cusp)][s];
            let m = scenario(name);
            let an = Analyzer::new(&m, case).unwrap();
            for cy in an.find_cycles(&[a1, a2]).map_err(|e| fail(e.to_string()))? {
                if cy.symmetry_defect() > 1e-7 {
                    return Err(fail(format!("{name} cycle not symmetric: {cy:?}")));
                }
            }
            Ok(())
        });
        prop(c, "symmetric cycles", r);

        let m3 = scenario("s3");
        let u = Unfolding::new(&m3, Case::FoldFold).unwrap();
        let grid = GridSpec { coords: Coords::Scaled, b1: Axis { lo: -1e-2, hi: 1e-2, n: 5 }, b2: Axis { lo: -1.0, hi: 2.5, n: 6 } };
        let one = run_sweep_with(&u, &grid, 1).map(|d| d.to_json());
        let four = run_sweep_with(&u, &grid, 4).map(|d| d.to_json());
        match (one, four) {
            (Ok(a), Ok(b)) => c.check(a == b, || "sweeps with 1 and 4 workers differ".into()),
            (a, b) => c.check(false, || format!("sweep failed: {:?} {:?}", a.err(), b.err())),
        }
    })
}

fn main() {
    let results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6(), criterion_7()];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed} of {} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
