//! Built-in benchmark problems and the end-to-end reduce-and-certify
//! pipeline: optimize from a truncation initialization, check the
//! closed-form dynamics-parameter conditions, re-check them with the general
//! quadrature checker, and cross-validate the two checkers against each
//! other.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::conditions::{
    check_thm3, check_thm5, ConditionBasis, ConditionId, ConditionReport, Thm3Output,
};
use crate::error::{Error, Result};
use crate::model::{
    state_space_to_pole_residue, ModeResidue, ParameterDomain, ParametricStateSpace,
    PoleResidueModel, ScalarParamFunction,
};
use crate::optimize::{
    bfgs_minimize, pack, DecisionLayout, ObjectiveContext, OptimizationResult, OptimizerConfig,
};
use crate::schema::{model_to_json, reports_to_json};

/// Relative tolerance for the closed-form vs quadrature cross-check.
pub const CROSS_CHECK_TOL: f64 = 1e-8;

/// Default residual tolerance for certification.
pub const CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchName {
    /// Order-6 synthetic model with three rotation blocks, reduced to
    /// order 4 over `[1/50, 1]`.
    Synth6,
    /// Order-12 parametric variant of a SLICOT test system, reduced to
    /// order 3 over `[1, 100]`.
    Penzl12,
}

impl BenchName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchName::Synth6 => "synth6",
            BenchName::Penzl12 => "penzl12",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "synth6" => Some(BenchName::Synth6),
            "penzl12" => Some(BenchName::Penzl12),
            _ => None,
        }
    }
}

/// A fully specified benchmark problem.
pub struct BenchmarkSpec {
    pub name: BenchName,
    pub fom_ss: ParametricStateSpace,
    pub fom: PoleResidueModel,
    pub dom: ParameterDomain,
    pub r: usize,
    pub template: PoleResidueModel,
    pub layout: DecisionLayout,
}

fn constant(np: usize, c: f64) -> ScalarParamFunction {
    ScalarParamFunction::constant(np, c)
}

fn coordinate(np: usize) -> ScalarParamFunction {
    ScalarParamFunction::coordinate(np, 0)
}

/// Synthetic order-6 system: three 2x2 rotation blocks at magnitudes 10, 30,
/// 50, each with pole `-m q +/- i m`; the third block's real part is
/// stabilized (the positive-real-part variant has no finite error norm on
/// the domain).
fn synth6_state_space() -> Result<ParametricStateSpace> {
    let n = 6;
    let mut a0 = DMatrix::zeros(n, n);
    let mut a1 = DMatrix::zeros(n, n);
    for (block, mag) in [(0usize, 10.0), (2, 30.0), (4, 50.0)] {
        a0[(block, block + 1)] = mag;
        a0[(block + 1, block)] = -mag;
        a1[(block, block)] = -mag;
        a1[(block + 1, block + 1)] = -mag;
    }
    let b = DMatrix::from_column_slice(n, 1, &[2.0, 0.0, 2.0, 0.0, 2.0, 0.0]);
    let c = DMatrix::from_row_slice(1, n, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    ParametricStateSpace::with_identity_e(
        1,
        vec![(constant(1, 1.0), a0), (coordinate(1), a1)],
        vec![(constant(1, 1.0), b)],
        vec![(constant(1, 1.0), c)],
    )
}

/// Parametric variant of the SLICOT test system: a 2x2 block with pole
/// `-1 +/- i q` plus `diag(-1, ..., -10)`, twelve states in total.
fn penzl12_state_space() -> Result<ParametricStateSpace> {
    let n = 12;
    let mut a0 = DMatrix::zeros(n, n);
    a0[(0, 0)] = -1.0;
    a0[(1, 1)] = -1.0;
    for k in 0..10 {
        a0[(2 + k, 2 + k)] = -(1.0 + k as f64);
    }
    let mut a1 = DMatrix::zeros(n, n);
    a1[(0, 1)] = 1.0;
    a1[(1, 0)] = -1.0;
    let mut bc = vec![1.0; n];
    bc[0] = 5.0;
    bc[1] = 5.0;
    let b = DMatrix::from_column_slice(n, 1, &bc);
    let c = DMatrix::from_row_slice(1, n, &bc);
    ParametricStateSpace::with_identity_e(
        1,
        vec![(constant(1, 1.0), a0), (coordinate(1), a1)],
        vec![(constant(1, 1.0), b)],
        vec![(constant(1, 1.0), c)],
    )
}

/// Truncates a separable state-space model to its leading `r` states.
pub fn truncate(sys: &ParametricStateSpace, r: usize) -> Result<ParametricStateSpace> {
    let take = |terms: &[(ScalarParamFunction, DMatrix<f64>)], rows: usize, cols: usize| {
        terms
            .iter()
            .map(|(f, m)| (f.clone(), m.view((0, 0), (rows, cols)).into_owned()))
            .collect::<Vec<_>>()
    };
    ParametricStateSpace::new(
        sys.np,
        take(&sys.e_terms, r, r),
        take(&sys.a_terms, r, r),
        take(&sys.b_terms, r, sys.num_inputs()),
        take(&sys.c_terms, sys.num_outputs(), r),
    )
}

/// Replaces each mode's input vector by a frozen unit gauge and rescales the
/// output vector so the rank-one residue, and hence the transfer function,
/// is unchanged. SISO only.
fn fix_input_gauge(model: &mut PoleResidueModel) -> Result<()> {
    for mode in &mut model.modes {
        match &mut mode.residue {
            ModeResidue::RankOne { b_terms, c_terms } => {
                if b_terms.len() != 1 || c_terms.len() != 1 || b_terms[0].1.len() != 1 {
                    return Err(Error::Structure("gauge fix expects single-term SISO modes".into()));
                }
                let b_old = b_terms[0].1[0];
                if b_old == Complex64::ZERO {
                    continue;
                }
                b_terms[0].1[0] = Complex64::new(1.0, 0.0);
                c_terms[0].1[0] *= b_old.conj();
            }
            ModeResidue::Full { .. } => {
                return Err(Error::Structure("gauge fix expects rank-one modes".into()))
            }
        }
    }
    Ok(())
}

/// Builds a benchmark problem with its truncation-initialized template and
/// decision layout (dynamics and output map free, input map frozen).
pub fn benchmark(name: BenchName) -> Result<BenchmarkSpec> {
    let (fom_ss, dom, r) = match name {
        BenchName::Synth6 => (synth6_state_space()?, ParameterDomain::interval(0.02, 1.0)?, 4),
        BenchName::Penzl12 => (penzl12_state_space()?, ParameterDomain::interval(1.0, 100.0)?, 3),
    };
    let fom = state_space_to_pole_residue(&fom_ss)?;
    fom.require_stable_on(&dom)?;
    let mut template = state_space_to_pole_residue(&truncate(&fom_ss, r)?)?;
    if name == BenchName::Penzl12 {
        // The truncated input map is gauge-fixed to unit mode gains before
        // freezing; the output map absorbs the scale, so the initial
        // transfer function still matches plain truncation.
        fix_input_gauge(&mut template)?;
    }
    let layout = DecisionLayout::from_model(&template, true, false, true)?;
    Ok(BenchmarkSpec {
        name,
        fom_ss,
        fom,
        dom,
        r,
        template,
        layout,
    })
}

/// Everything a benchmark run produces.
pub struct BenchOutcome {
    pub result: OptimizationResult,
    pub thm5: Vec<ConditionReport>,
    pub thm3: Thm3Output,
    pub cross_max_rel: f64,
    pub max_rel_err: f64,
    pub report: Value,
}

fn rel_diff(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> f64 {
    (x - y).norm() / x.norm().max(y.norm()).max(1e-300)
}

/// Checks that the general quadrature checker and the closed-form
/// dynamics-parameter checker computed the same integrals, on both sides of
/// every condition: the quadrature Hermite values with weights `{1, q}` are
/// invertible combinations of the two closed-form frequency partials.
/// Returns the largest relative disagreement.
pub fn cross_validate(
    thm3: &[ConditionReport],
    thm5: &[ConditionReport],
    a: f64,
    b: f64,
) -> Result<f64> {
    let pick = |reports: &[ConditionReport], id: ConditionId, mode: usize, func: Option<usize>| {
        reports
            .iter()
            .find(|r| r.condition_id == id && r.mode == mode && r.func_index == func)
            .map(|r| (r.lhs.clone(), r.rhs.clone(), r.degenerate))
            .ok_or_else(|| Error::CrossCheck(format!("missing {} for mode {mode}", id.as_str())))
    };
    let modes = thm5
        .iter()
        .map(|r| r.mode)
        .max()
        .map_or(0, |m| m + 1);
    let mut max_rel: f64 = 0.0;
    for ell in 0..modes {
        let (l5_1, r5_1, degen) = pick(thm5, ConditionId::Thm5Lagrange, ell, None)?;
        if degen {
            continue;
        }
        let (l5_2, r5_2, _) = pick(thm5, ConditionId::Thm5LagrangeLeft, ell, None)?;
        let (l5_3, r5_3, _) = pick(thm5, ConditionId::Thm5HermiteA, ell, None)?;
        let (l5_4, r5_4, _) = pick(thm5, ConditionId::Thm5HermiteB, ell, None)?;
        let (l3_a, r3_a, _) = pick(thm3, ConditionId::Thm3A, ell, Some(0))?;
        let (l3_b, r3_b, _) = pick(thm3, ConditionId::Thm3B, ell, Some(0))?;
        let (l3_c0, r3_c0, _) = pick(thm3, ConditionId::Thm3C, ell, Some(0))?;
        let (l3_c1, r3_c1, _) = pick(thm3, ConditionId::Thm3C, ell, Some(1))?;

        // Exact-integration identities: the parameter integral of H at the
        // reflected pole is G at the endpoint pair; the s-derivative
        // integrals with weights 1 and q are Ga + Gb and a Ga + b Gb.
        let ca = Complex64::new(a, 0.0);
        let cb = Complex64::new(b, 0.0);
        let pairs = [
            (l3_a, l5_1.clone(), "thm3_a lhs vs thm5_1"),
            (r3_a, r5_1.clone(), "thm3_a rhs vs thm5_1"),
            (l3_b, l5_2.clone(), "thm3_b lhs vs thm5_2"),
            (r3_b, r5_2.clone(), "thm3_b rhs vs thm5_2"),
            (l3_c0, &l5_3 + &l5_4, "thm3_c w=1 lhs"),
            (r3_c0, &r5_3 + &r5_4, "thm3_c w=1 rhs"),
            (l3_c1, &l5_3 * ca + &l5_4 * cb, "thm3_c w=q lhs"),
            (r3_c1, &r5_3 * ca + &r5_4 * cb, "thm3_c w=q rhs"),
        ];
        for (x, y, _label) in &pairs {
            max_rel = max_rel.max(rel_diff(x, y));
        }
    }
    Ok(max_rel)
}

/// Largest non-degenerate relative residual in a report list.
pub fn max_rel_err(reports: &[ConditionReport]) -> f64 {
    reports
        .iter()
        .filter(|r| !r.degenerate)
        .map(|r| r.rel_err)
        .fold(0.0, f64::max)
}

/// Runs a benchmark end to end: reduce, certify with both checkers, and
/// cross-validate them. The cross-check failure is a hard error; residuals
/// above tolerance and non-convergence are reported in the outcome.
pub fn run_bench(spec: &BenchmarkSpec, cfg: &OptimizerConfig) -> Result<BenchOutcome> {
    let dom = spec.dom.with_quad_order(cfg.quad_order);
    let ctx = ObjectiveContext::new(&spec.fom, &spec.layout, &spec.template, &dom)?;
    let x0 = pack(&spec.template, &spec.layout)?;
    let result = bfgs_minimize(&x0, &ctx, cfg)?;

    let (a, b) = (dom.lo()[0], dom.hi()[0]);
    let thm5 = check_thm5(&spec.fom, &result.rom, a, b)?;
    let basis = ConditionBasis::affine_dynamics(1);
    let thm3 = check_thm3(&spec.fom, &result.rom, &dom, &basis)?;
    let cross_max_rel = cross_validate(&thm3.reports, &thm5, a, b)?;
    if cross_max_rel > CROSS_CHECK_TOL {
        return Err(Error::CrossCheck(format!(
            "quadrature vs closed-form disagreement {cross_max_rel:.3e} exceeds {CROSS_CHECK_TOL:.1e} \
             (quadrature order {})",
            dom.quad_order()
        )));
    }
    let max_rel = max_rel_err(&thm5);

    let report = json!({
        "schema": 1,
        "benchmark": spec.name.as_str(),
        "converged": result.converged,
        "iterations": result.iterations,
        "grad_inf_norm": result.grad_inf_norm,
        "objective_history": result.objective_history,
        "rom": model_to_json(&result.rom),
        "cross_check_max_rel": cross_max_rel,
        "condition_reports": {
            "legend": {
                "thm5_1": "Lagrange interpolation of G, right tangential",
                "thm5_2": "Lagrange interpolation of G, left tangential",
                "thm5_3": "Hermite interpolation of dG/ds_a",
                "thm5_4": "Hermite interpolation of dG/ds_b",
                "thm3_*": "general quadrature forms used for cross-validation",
            },
            "thm5": reports_to_json(&thm5),
            "thm3": reports_to_json(&thm3.reports),
        },
    });
    Ok(BenchOutcome {
        result,
        thm5,
        thm3,
        cross_max_rel,
        max_rel_err: max_rel,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn synth6_shapes_and_stability() {
        let spec = benchmark(BenchName::Synth6).unwrap();
        assert_eq!(spec.fom.order(), 6);
        assert_eq!(spec.template.order(), 4);
        assert!(spec.fom.is_stable_on(&spec.dom));
        assert!(spec.template.is_stable_on(&spec.dom));
    }

    #[test]
    fn penzl12_template_matches_plain_truncation() {
        let spec = benchmark(BenchName::Penzl12).unwrap();
        assert_eq!(spec.fom.order(), 12);
        assert_eq!(spec.template.order(), 3);
        // the input gauge fix rescales b and c per mode without changing
        // the transfer function
        let plain = state_space_to_pole_residue(&truncate(&spec.fom_ss, 3).unwrap()).unwrap();
        for _ in 0..5 {
            let s = Complex64::new(0.7, 3.1);
            for q in [1.0, 17.5, 100.0] {
                let a = spec.template.eval_transfer(s, &[q]).unwrap();
                let b = plain.eval_transfer(s, &[q]).unwrap();
                assert!((a[(0, 0)] - b[(0, 0)]).norm() <= 1e-12 * (1.0 + b[(0, 0)].norm()));
            }
        }
        // gauge fix leaves every b entry at one
        for mode in &spec.template.modes {
            let bv = mode.b_at(&[1.0]).unwrap();
            assert!((bv[0] - Complex64::new(1.0, 0.0)).norm() <= 1e-15);
        }
    }

    #[test]
    fn bench_name_parsing() {
        assert_eq!(BenchName::parse("synth6").unwrap(), BenchName::Synth6);
        assert_eq!(BenchName::parse("penzl12").unwrap(), BenchName::Penzl12);
        assert!(BenchName::parse("nope").is_none());
    }

    #[test]
    fn rel_diff_uses_larger_magnitude() {
        use nalgebra::DMatrix;
        let x = DMatrix::from_element(1, 1, Complex64::new(2.0, 0.0));
        let y = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        assert!((rel_diff(&x, &y) - 0.5).abs() <= 1e-15);
        let z = DMatrix::from_element(1, 1, Complex64::ZERO);
        assert_eq!(rel_diff(&z, &z), 0.0);
    }
}
