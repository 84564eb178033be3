//! `atlas`: command-line front end for the filippov crate.
//!
//! Exit codes: 0 success, 2 hypothesis failure, 3 numerical failure,
//! 1 for usage and I/O problems.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filippov::atlas::{run_curves, run_sweep_with, Axis, Coords, CurveSpec, Diagram, GridSpec, Unfolding};
use filippov::coeffs::raw_report;
use filippov::cycles::Analyzer;
use filippov::error::Error;
use filippov::flow::flow_filippov;
use filippov::maps::Maps;
use filippov::model::{
    check_hypotheses, hypotheses_from_report, load_scenario, scenario_names, scenario_summary, Case, FilippovModel,
};

#[derive(Parser)]
#[command(name = "atlas", version, about = "Bifurcations of symmetric cycles in planar Filippov systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Check the hypotheses of the case at alpha = 0.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        json: bool,
    },
    /// Coefficients of the case at alpha = 0.
    Coeffs {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        json: bool,
    },
    /// Symmetric cycles and region label at one parameter value.
    Classify {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha: Vec<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Filippov trajectory from one initial point, written as CSV.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, allow_hyphen_values = true)]
        y0: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify every cell of a two-parameter grid.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// First grid axis, lo:hi:n.
        #[arg(long, allow_hyphen_values = true)]
        b1: Axis,
        /// Second grid axis, lo:hi:n.
        #[arg(long, allow_hyphen_values = true)]
        b2: Axis,
        /// Grid coordinates: beta (measured), scaled (beta2 over its
        /// leading-order scale) or alpha.
        #[arg(long, default_value = "beta")]
        coords: Coords,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Bifurcation curve points and asymptotic fits.
    Curves {
        #[command(flatten)]
        model: ModelArgs,
        /// Search lines per sign of beta1.
        #[arg(long, default_value_t = 12)]
        rays: usize,
        /// Samples per line before root refinement.
        #[arg(long, default_value_t = 24)]
        samples: usize,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in scenario (s1, s2, s3).
    #[arg(long, conflicts_with = "model")]
    scenario: Option<String>,
    /// Model file (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    /// codim1, cusp or foldfold; defaults to the scenario's own case.
    #[arg(long)]
    case: Option<Case>,
}

#[derive(Args)]
struct RunArgs {
    /// Worker threads; ATLAS_THREADS overrides.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; `.csv` selects CSV, anything else JSON. Default: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        let code = if e.is_hypothesis() { 2 } else { 3 };
        Fail(code, e.to_string())
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Fail {
    Fail(1, format!("{}: {e}", path.display()))
}

fn load(args: &ModelArgs) -> Result<(FilippovModel, Case), Fail> {
    match (&args.scenario, &args.model) {
        (Some(name), _) => {
            let model = load_scenario(name).map_err(|e| Fail(1, e.to_string()))?;
            let own = match name.to_ascii_lowercase().as_str() {
                "s1" => Case::Codim1,
                "s2" => Case::Cusp,
                _ => Case::FoldFold,
            };
            Ok((model, args.case.unwrap_or(own)))
        }
        (None, Some(path)) => {
            let model = FilippovModel::from_file(path).map_err(|e| Fail(1, e.to_string()))?;
            let case = args.case.ok_or_else(|| Fail(1, "--model needs --case".into()))?;
            Ok((model, case))
        }
        (None, None) => Err(Fail(1, "give --scenario or --model".into())),
    }
}

fn full_alpha(model: &FilippovModel, alpha: &[f64]) -> Result<Vec<f64>, Fail> {
    if alpha.is_empty() {
        return Ok(model.zero_alpha());
    }
    if alpha.len() != model.m {
        return Err(Fail(1, format!("--alpha needs {} values, got {}", model.m, alpha.len())));
    }
    Ok(alpha.to_vec())
}

fn threads(arg: Option<usize>) -> usize {
    std::env::var("ATLAS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .or(arg)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_fail(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn is_csv(out: Option<&Path>) -> bool {
    out.and_then(|p| p.extension()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Refuses to sweep a model whose case hypotheses fail.
fn require_hypotheses(model: &FilippovModel, case: Case) -> Result<(), Fail> {
    let rep = check_hypotheses(model, case, &Default::default())?;
    if !rep.holds() {
        return Err(Fail(2, format!("hypotheses fail: {}", rep.failures().join("; "))));
    }
    Ok(())
}

fn emit_diagram(d: &Diagram, out: Option<&Path>) -> Result<(), Fail> {
    let text = if is_csv(out) {
        if d.cells.is_empty() {
            d.curves.to_csv()
        } else {
            d.cells_csv()
        }
    } else {
        d.to_json() + "\n"
    };
    write_out(out, &text)
}

fn run(cli: Cli) -> Result<(), Fail> {
    match cli.cmd {
        Cmd::Scenario { cmd: ScenarioCmd::List } => {
            for name in scenario_names() {
                println!("{name}  {}", scenario_summary(name).unwrap_or(""));
            }
        }
        Cmd::Check { model, json } => {
            let (model, case) = load(&model)?;
            let rep = check_hypotheses(&model, case, &Default::default())?;
            if json {
                println!("{}", rep.to_json());
            } else if rep.holds() {
                println!("{case}: all hypotheses hold");
            } else {
                for f in rep.failures() {
                    println!("fails: {f}");
                }
            }
            if !rep.holds() {
                return Err(Fail(2, format!("{case} hypotheses fail")));
            }
        }
        Cmd::Coeffs { model, json } => {
            let (model, case) = load(&model)?;
            let maps = Maps::new(&model)?;
            let rep = raw_report(&model, case, &maps)?;
            let hyp = hypotheses_from_report(&model, case, &rep, &Default::default())?;
            if json {
                println!("{}", rep.to_json());
            } else {
                println!("case {case}, tau0 = {}, lambda0 = {}", rep.tau0, rep.lambda0);
                println!("kappa = {:?}", rep.kappa);
                if let Some(j) = rep.unfolding_jacobian() {
                    for row in j {
                        println!("  {row:?}");
                    }
                }
            }
            if !hyp.holds() {
                return Err(Fail(2, format!("hypotheses fail: {}", hyp.failures().join("; "))));
            }
        }
        Cmd::Classify { model, alpha, json } => {
            let (model, case) = load(&model)?;
            let alpha = full_alpha(&model, &alpha)?;
            let an = Analyzer::new(&model, case)?;
            let cycles = an.find_cycles(&alpha)?;
            let label = an.classify(&alpha);
            if json {
                let v = serde_json::json!({ "alpha": alpha, "label": label, "cycles": cycles });
                println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            } else {
                println!("{}", label.key());
                for c in &cycles {
                    let rd = c.return_map_derivative.map_or(String::new(), |d| format!(" R' = {d:.6}"));
                    println!("  {:?} {} {}{rd}", c.kind, c.sub_kind, c.stability.name());
                }
            }
        }
        Cmd::Simulate { model, x0, y0, t, alpha, out } => {
            let (model, _) = load(&model)?;
            let alpha = full_alpha(&model, &alpha)?;
            let tr = flow_filippov(&model, (x0, y0), &alpha, t)?;
            write_out(out.as_deref(), &tr.to_csv())?;
        }
        Cmd::Sweep { model, b1, b2, coords, run } => {
            let (model, case) = load(&model)?;
            require_hypotheses(&model, case)?;
            let unf = Unfolding::new(&model, case)?;
            let grid = GridSpec { coords, b1, b2 };
            let d = run_sweep_with(&unf, &grid, threads(run.threads))?;
            emit_diagram(&d, run.out.as_deref())?;
        }
        Cmd::Curves { model, rays, samples, run } => {
            let (model, case) = load(&model)?;
            require_hypotheses(&model, case)?;
            let unf = Unfolding::new(&model, case)?;
            let mut spec = CurveSpec::for_case(case, rays);
            spec.samples = samples.max(2);
            let d = run_curves(&unf, &spec, threads(run.threads))?;
            if !d.curves.misses.is_empty() {
                eprintln!("no sign change on: {}", d.curves.misses.join(", "));
            }
            for f in &d.fits {
                eprintln!(
                    "{:<4} cutoff {:.1e}  C = {:.5} ± {:.1e}  predicted {}  exponent {:.3}",
                    f.curve,
                    f.cutoff,
                    f.c,
                    f.c_stderr,
                    f.predicted.map_or("-".into(), |p| format!("{p:.5}")),
                    f.exponent
                );
            }
            emit_diagram(&d, run.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("atlas: {msg}");
            ExitCode::from(code)
        }
    }
}
