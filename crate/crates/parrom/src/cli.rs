//! Command-line front end: norm computation, reduction, certification, and
//! the built-in benchmarks.
//!
//! Exit codes: 0 success, 1 convergence or certification failure, 2 usage
//! error, 3 internal inconsistency (the independent checkers disagree).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::bench::{self, BenchName, CHECK_TOL};
use crate::conditions::{check_thm3, check_thm5, ConditionBasis, ConditionReport};
use crate::error::{Error, Result};
use crate::model::{
    state_space_to_pole_residue, ModeResidue, ParameterDomain, PoleResidueModel,
};
use crate::norms::h2l2_error;
use crate::optimize::{
    bfgs_minimize, pack, DecisionLayout, ObjectiveContext, OptimizerConfig,
};
use crate::schema::{
    breakdown_to_json, fmt_sci5, load_model, model_to_json, report_csv, report_table,
    reports_to_json, state_space_from_json,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONSISTENT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Table,
}

#[derive(Parser, Debug)]
#[command(
    name = "parrom",
    version,
    about = "H2xL2-optimal reduced-order modeling of parametric LTI systems",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute the H2xL2 norm of a model, or the error against a reduced model.
    Norm {
        /// Model file (state-space or pole-residue JSON).
        #[arg(long)]
        model: PathBuf,
        /// Optional reduced model; reports the error instead of the norm.
        #[arg(long)]
        rom: Option<PathBuf>,
        /// Parameter box, one "lo:hi" range per axis, comma-separated.
        #[arg(long)]
        domain: String,
        /// Gauss-Legendre order per axis.
        #[arg(long, default_value_t = ParameterDomain::DEFAULT_QUAD_ORDER)]
        quad_order: usize,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduce a model by BFGS from a truncation initialization.
    Reduce {
        #[arg(long)]
        fom: PathBuf,
        /// Reduced order (states for state-space input, modes otherwise).
        #[arg(long, short)]
        order: usize,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = ParameterDomain::DEFAULT_QUAD_ORDER)]
        quad_order: usize,
        #[arg(long, default_value_t = 1e-9)]
        grad_tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        /// Also optimize the input map (frozen by default).
        #[arg(long)]
        free_b: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a reduced model against the interpolatory conditions.
    Check {
        #[arg(long)]
        fom: PathBuf,
        #[arg(long)]
        rom: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = ParameterDomain::DEFAULT_QUAD_ORDER)]
        quad_order: usize,
        /// Largest acceptable relative residual.
        #[arg(long, default_value_t = CHECK_TOL)]
        tol: f64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in benchmark end to end.
    Bench {
        /// Benchmark name: synth6 or penzl12.
        name: String,
        #[arg(long, default_value_t = ParameterDomain::DEFAULT_QUAD_ORDER)]
        quad_order: usize,
        #[arg(long, default_value_t = CHECK_TOL)]
        tol: f64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses "lo:hi[,lo:hi...]" into a parameter box.
pub fn parse_domain(spec: &str, quad_order: usize) -> Result<ParameterDomain> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in spec.split(',') {
        let (l, h) = part
            .split_once(':')
            .ok_or_else(|| Error::Structure(format!("bad domain range '{part}', expected lo:hi")))?;
        lo.push(
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Structure(format!("bad domain bound '{l}'")))?,
        );
        hi.push(
            h.trim()
                .parse::<f64>()
                .map_err(|_| Error::Structure(format!("bad domain bound '{h}'")))?,
        );
    }
    ParameterDomain::new(lo, hi, quad_order)
}

/// Reads and validates the evaluation-thread cap. Evaluation currently runs
/// sequentially (deterministic reduction order), so the cap only gates the
/// value's validity.
fn read_thread_cap() -> Result<usize> {
    match std::env::var("PARROM_THREADS") {
        Ok(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Structure(format!("PARROM_THREADS must be a positive integer, got '{s}'"))),
        Err(_) => Ok(1),
    }
}

fn emit(format: Format, out: Option<&Path>, json: &Value, reports: Option<&[ConditionReport]>) -> Result<()> {
    let text = match format {
        Format::Json => {
            let mut t = serde_json::to_string_pretty(json)?;
            t.push('\n');
            t
        }
        Format::Csv => match reports {
            Some(r) => report_csv(r),
            None => return Err(Error::Structure("csv format needs condition reports".into())),
        },
        Format::Table => match reports {
            Some(r) => report_table(r),
            None => {
                let mut t = String::new();
                if let Some(total) = json.get("total").and_then(|x| x.as_f64()) {
                    t.push_str(&format!("h2l2 value  {}\n", fmt_sci5(total)));
                }
                if t.is_empty() {
                    t = format!("{json:#}\n");
                }
                t
            }
        },
    };
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Loads a reduce input: the full model plus a truncation template.
fn load_reduce_input(path: &Path, r: usize) -> Result<(PoleResidueModel, PoleResidueModel)> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("A").is_some() {
        let sys = state_space_from_json(&v)?;
        if r >= sys.order() {
            return Err(Error::Structure(format!(
                "reduced order {r} must be below the full order {}",
                sys.order()
            )));
        }
        let fom = state_space_to_pole_residue(&sys)?;
        let template = state_space_to_pole_residue(&bench::truncate(&sys, r)?)?;
        return Ok((fom, template));
    }
    let fom = load_model(path)?;
    if r >= fom.modes.len() {
        return Err(Error::Structure(format!(
            "reduced order {r} must be below the mode count {}",
            fom.modes.len()
        )));
    }
    // Mode truncation must not split a conjugate pair.
    let last = &fom.modes[r - 1];
    let next = &fom.modes[r];
    let is_conj_pair = last.lambda0 == next.lambda0.conj()
        && last
            .lambda_lin
            .iter()
            .zip(&next.lambda_lin)
            .all(|(x, y)| *x == y.conj());
    if is_conj_pair && last.lambda0.im != 0.0 {
        return Err(Error::Structure(format!(
            "order {r} splits the conjugate pair at modes {} and {r}",
            r - 1
        )));
    }
    let mut template = fom.clone();
    template.modes.truncate(r);
    Ok((fom, template))
}

/// Certification flow shared by `check`: the general quadrature checker,
/// plus the closed-form checker with cross-validation when the pair is in
/// dynamics-parameter form.
fn run_check(
    fom: &PoleResidueModel,
    rom: &PoleResidueModel,
    dom: &ParameterDomain,
) -> Result<(Vec<ConditionReport>, Option<f64>)> {
    let basis = ConditionBasis::affine_dynamics(dom.np());
    let thm3 = check_thm3(fom, rom, dom, &basis)?;
    if thm3.under_resolved {
        eprintln!(
            "warning: quadrature order {} is below the certification threshold {}; \
             residuals are informational only",
            dom.quad_order(),
            crate::conditions::MIN_CERTIFIED_QUAD_ORDER
        );
    }
    let mut reports = thm3.reports;
    let mut cross = None;
    if dom.np() == 1 && is_dyn_form(fom) && is_dyn_form(rom) {
        let (a, b) = (dom.lo()[0], dom.hi()[0]);
        let thm5 = check_thm5(fom, rom, a, b)?;
        let max_rel = bench::cross_validate(&reports, &thm5, a, b)?;
        cross = Some(max_rel);
        if max_rel > bench::CROSS_CHECK_TOL {
            return Err(Error::CrossCheck(format!(
                "quadrature vs closed-form disagreement {max_rel:.3e} (order {})",
                dom.quad_order()
            )));
        }
        reports.extend(thm5);
    }
    Ok((reports, cross))
}

fn is_dyn_form(model: &PoleResidueModel) -> bool {
    model.np == 1
        && model.modes.iter().all(|m| match &m.residue {
            ModeResidue::RankOne { b_terms, c_terms } => b_terms
                .iter()
                .chain(c_terms)
                .all(|(f, _)| f.degree() == 0),
            ModeResidue::Full { phi_terms } => phi_terms.iter().all(|(f, _)| f.degree() == 0),
        })
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::CrossCheck(_) | Error::ImaginaryResidue { .. } => EXIT_INCONSISTENT,
        Error::NonConvergence { .. } => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Full CLI entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = read_thread_cap() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Norm {
            model,
            rom,
            domain,
            quad_order,
            format,
            out,
        } => {
            let dom = parse_domain(&domain, quad_order)?;
            let fom = load_model(&model)?;
            let rom = match rom {
                Some(path) => load_model(&path)?,
                None => PoleResidueModel::empty(fom.np, fom.ni, fom.no),
            };
            let bd = h2l2_error(&fom, &rom, &dom)?;
            emit(format, out.as_deref(), &breakdown_to_json(&bd), None)?;
            Ok(EXIT_OK)
        }
        Command::Reduce {
            fom,
            order,
            domain,
            quad_order,
            grad_tol,
            max_iter,
            free_b,
            format,
            out,
        } => {
            let dom = parse_domain(&domain, quad_order)?;
            let (fom, template) = load_reduce_input(&fom, order)?;
            let layout = DecisionLayout::from_model(&template, true, free_b, true)?;
            let cfg = OptimizerConfig {
                grad_tol,
                max_iter,
                quad_order,
                ..OptimizerConfig::default()
            };
            let ctx = ObjectiveContext::new(&fom, &layout, &template, &dom)?;
            let x0 = pack(&template, &layout)?;
            let result = bfgs_minimize(&x0, &ctx, &cfg)?;
            let report = serde_json::json!({
                "schema": 1,
                "converged": result.converged,
                "iterations": result.iterations,
                "grad_inf_norm": result.grad_inf_norm,
                "objective_history": result.objective_history,
                "rom": model_to_json(&result.rom),
            });
            match format {
                Format::Csv => {
                    // Iterate log as CSV.
                    let mut text = String::from("iter,objective,grad_inf_norm,step\n");
                    for rec in &result.iterate_log {
                        text.push_str(&format!(
                            "{},{},{},{}\n",
                            rec.iter, rec.objective, rec.grad_inf_norm, rec.step
                        ));
                    }
                    match out.as_deref() {
                        Some(path) => std::fs::write(path, text)?,
                        None => print!("{text}"),
                    }
                }
                _ => emit(format, out.as_deref(), &report, None)?,
            }
            Ok(if result.converged { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Check {
            fom,
            rom,
            domain,
            quad_order,
            tol,
            format,
            out,
        } => {
            let dom = parse_domain(&domain, quad_order)?;
            let fom = load_model(&fom)?;
            let rom = load_model(&rom)?;
            let (reports, cross) = run_check(&fom, &rom, &dom)?;
            let mut json = reports_to_json(&reports);
            if let (Value::Object(map), Some(c)) = (&mut json, cross) {
                map.insert("cross_check_max_rel".into(), serde_json::json!(c));
            }
            emit(format, out.as_deref(), &json, Some(&reports))?;
            let ok = bench::max_rel_err(&reports) <= tol;
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Bench {
            name,
            quad_order,
            tol,
            format,
            out,
        } => {
            let name = BenchName::parse(&name)
                .ok_or_else(|| Error::Structure(format!("unknown benchmark '{name}'")))?;
            let spec = bench::benchmark(name)?;
            let cfg = OptimizerConfig {
                quad_order,
                ..OptimizerConfig::default()
            };
            let outcome = bench::run_bench(&spec, &cfg)?;
            emit(format, out.as_deref(), &outcome.report, Some(&outcome.thm5))?;
            let ok = outcome.result.converged && outcome.max_rel_err <= tol;
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
    }
}
