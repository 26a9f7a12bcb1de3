//! H2 inner products and norms for pole-residue models, a frequency-domain
//! quadrature oracle, and the H2(x)L2 error over a parameter box.
//!
//! The closed pole-residue form and the frequency oracle are two independent
//! routes to the same quantity; keeping both lets the test suites
//! cross-validate one against the other.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ParameterDomain, PoleResidueModel};

/// Relative slack allowed on the imaginary residue of nominally real values.
const IM_RTOL: f64 = 1e-10;

/// Nodes and weights of a quadrature rule on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule with `m` points on `[a, b]`, exact for polynomials of
/// degree up to `2m - 1`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial, seeded
/// with the Chebyshev-based asymptotic estimate.
pub fn gauss_legendre(m: usize, a: f64, b: f64) -> QuadratureRule1D {
    assert!(m >= 1, "quadrature order must be >= 1");
    assert!(a < b, "need a < b");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    // Roots are symmetric; solve for the first half.
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Bonnet recurrence for P_m(x) and P'_m(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                // One polishing step after convergence.
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=m {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                x -= p1 / dp;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = mid - half * x;
        nodes[m - 1 - i] = mid + half * x;
        weights[i] = half * w;
        weights[m - 1 - i] = half * w;
    }
    if m == 1 {
        nodes[0] = mid;
        weights[0] = b - a;
    }
    QuadratureRule1D { nodes, weights }
}

/// Tensor-product Gauss-Legendre grid over a parameter box, as a flat list of
/// `(q, weight)` pairs in a fixed axis-major order.
pub fn tensor_rule(dom: &ParameterDomain) -> Vec<(Vec<f64>, f64)> {
    let rules: Vec<QuadratureRule1D> = (0..dom.np())
        .map(|k| gauss_legendre(dom.quad_order(), dom.lo()[k], dom.hi()[k]))
        .collect();
    let mut grid: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for rule in &rules {
        let mut next = Vec::with_capacity(grid.len() * rule.nodes.len());
        for (q, w) in &grid {
            for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
                let mut q2 = q.clone();
                q2.push(*node);
                next.push((q2, w * weight));
            }
        }
        grid = next;
    }
    grid
}

/// H2 inner product of two pole-residue models at a fixed parameter point:
///
/// ```text
/// <H1, H2> = (1/2pi) int tr(H2(iw,q)^* H1(iw,q)) dw
///          = sum_{i,j} tr(S_j(q)^* R_i(q)) / (-p_i(q) - conj(r_j(q)))
/// ```
pub fn h2_inner_pr(m1: &PoleResidueModel, m2: &PoleResidueModel, q: &[f64]) -> Result<Complex64> {
    m1.require_stable_at(q)?;
    m2.require_stable_at(q)?;
    let r1: Vec<(Complex64, DMatrix<Complex64>)> = m1
        .modes
        .iter()
        .map(|m| (m.lambda_at(q), m.residue_at(q)))
        .collect();
    let r2: Vec<(Complex64, DMatrix<Complex64>)> = m2
        .modes
        .iter()
        .map(|m| (m.lambda_at(q), m.residue_at(q)))
        .collect();
    let mut acc = Complex64::ZERO;
    for (p_i, res_i) in &r1 {
        for (r_j, res_j) in &r2 {
            let tr = (res_j.adjoint() * res_i).trace();
            acc += tr / (-p_i - r_j.conj());
        }
    }
    Ok(acc)
}

fn real_part_checked(z: Complex64) -> Result<f64> {
    let bound = IM_RTOL * (1.0 + z.re.abs());
    if z.im.abs() > bound {
        return Err(Error::ImaginaryResidue { im: z.im.abs(), bound });
    }
    Ok(z.re)
}

/// Squared H2 error `<H - Hhat, H - Hhat>` at a fixed parameter point,
/// expanded by bilinearity into three inner products.
pub fn h2_error_sq_at_q(fom: &PoleResidueModel, rom: &PoleResidueModel, q: &[f64]) -> Result<f64> {
    let hh = real_part_checked(h2_inner_pr(fom, fom, q)?)?;
    let rr = real_part_checked(h2_inner_pr(rom, rom, q)?)?;
    let hr = h2_inner_pr(fom, rom, q)?;
    Ok(hh + rr - 2.0 * hr.re)
}

/// Squared H2 norm at a fixed parameter point, closed form.
pub fn h2_norm_sq_pr(model: &PoleResidueModel, q: &[f64]) -> Result<f64> {
    real_part_checked(h2_inner_pr(model, model, q)?)
}

const ORACLE_MAX_DEPTH: u32 = 40;

/// H2 norm by direct frequency integration: `(1/2pi) int ||H(iw,q)||_F^2 dw`
/// under the substitution `w = tan(theta)`, which maps the whole real line to
/// a finite interval and absorbs the `1/w^2` tail exactly in measure.
///
/// Refinement bisects intervals until the nested 7/15-point Gauss estimate of
/// the local error fits within the proportional share of `tol`.
pub fn h2_norm_freq_oracle(model: &PoleResidueModel, q: &[f64], tol: f64) -> Result<f64> {
    model.require_stable_at(q)?;
    if model.modes.is_empty() {
        return Ok(0.0);
    }
    let integrand = |theta: f64| -> Result<f64> {
        let (sin, cos) = theta.sin_cos();
        let w = sin / cos;
        let h = model.eval_transfer(Complex64::new(0.0, w), q)?;
        // dw = sec^2(theta) d(theta)
        Ok(h.norm_squared() / (cos * cos) / (2.0 * std::f64::consts::PI))
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let total = adaptive_segment(&integrand, -half_pi, half_pi, tol, tol, 0)?;
    Ok(total.max(0.0).sqrt())
}

/// Adaptive bisection with a nested coarse/fine Gauss pair per segment.
///
/// `tol` is this segment's proportional share of the budget; `global_tol`
/// is the caller's original request. At the recursion cap a segment whose
/// residual error still fits the global request is accepted rather than
/// rejected, since its contribution to the total is negligible.
fn adaptive_segment(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    tol: f64,
    global_tol: f64,
    depth: u32,
) -> Result<f64> {
    let coarse = fixed_gauss(f, a, b, 7)?;
    let fine = fixed_gauss(f, a, b, 15)?;
    let err = (fine - coarse).abs();
    // Second disjunct: the two estimates agree to their own rounding floor,
    // so further bisection cannot sharpen the comparison.
    if err <= tol * (1.0 + fine.abs())
        || err <= 64.0 * f64::EPSILON * (coarse.abs() + fine.abs())
    {
        return Ok(fine);
    }
    if depth >= ORACLE_MAX_DEPTH {
        if err <= global_tol * (1.0 + fine.abs()) {
            return Ok(fine);
        }
        return Err(Error::NonConvergence { estimate: err, tol });
    }
    let mid = 0.5 * (a + b);
    // Floor the split tolerance: evaluation noise near the compactified
    // endpoints does not shrink with the segment width, so an ever-tightening
    // share would recurse to the depth cap over whole subintervals.
    let child_tol = (0.5 * tol).max(1e-15);
    let left = adaptive_segment(f, a, mid, child_tol, global_tol, depth + 1)?;
    let right = adaptive_segment(f, mid, b, child_tol, global_tol, depth + 1)?;
    Ok(left + right)
}

fn fixed_gauss(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, m: usize) -> Result<f64> {
    let rule = gauss_legendre(m, a, b);
    let mut acc = 0.0;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(*x)?;
    }
    Ok(acc)
}

/// Per-node contribution to the H2(x)L2 error.
#[derive(Debug, Clone)]
pub struct NodeError {
    pub q: Vec<f64>,
    pub weight: f64,
    pub h2_err_sq: f64,
}

/// Squared H2(x)L2 error with its per-quadrature-node breakdown.
#[derive(Debug, Clone)]
pub struct ErrorBreakdown {
    pub total_sq: f64,
    pub per_node: Vec<NodeError>,
}

/// H2(x)L2 error by tensor Gauss-Legendre quadrature over the box.
///
/// Node contributions are summed in the fixed grid order, so repeated runs
/// are bit-identical.
pub fn h2l2_error(
    fom: &PoleResidueModel,
    rom: &PoleResidueModel,
    dom: &ParameterDomain,
) -> Result<ErrorBreakdown> {
    fom.require_stable_on(dom)?;
    rom.require_stable_on(dom)?;
    let grid = tensor_rule(dom);
    let mut per_node = Vec::with_capacity(grid.len());
    let mut total_sq = 0.0;
    for (q, weight) in grid {
        let h2_err_sq = h2_error_sq_at_q(fom, rom, &q)?;
        total_sq += weight * h2_err_sq;
        per_node.push(NodeError { q, weight, h2_err_sq });
    }
    Ok(ErrorBreakdown { total_sq, per_node })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PoleResidueMode;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn siso_const(lambda: Complex64, b: f64, cc: f64) -> PoleResidueMode {
        PoleResidueMode::constant_rank_one(
            1,
            lambda,
            DVector::from_element(1, c(b, 0.0)),
            DVector::from_element(1, c(cc, 0.0)),
        )
    }

    fn model_of(modes: Vec<PoleResidueMode>) -> PoleResidueModel {
        PoleResidueModel::new(1, 1, 1, modes)
    }

    /// Random stable SISO model with real poles and a few conjugate pairs.
    fn random_stable(rng: &mut ChaCha8Rng, max_order: usize, re_lo: f64, re_hi: f64) -> PoleResidueModel {
        let pairs = rng.gen_range(0..=max_order / 2);
        let singles = rng.gen_range(1..=(max_order - 2 * pairs).max(1));
        let mut modes = Vec::new();
        for _ in 0..pairs {
            let sigma = -rng.gen_range(re_lo..re_hi);
            let omega = rng.gen_range(0.1..10.0);
            let b = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let cc = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            modes.push(PoleResidueMode::constant_rank_one(
                1,
                c(sigma, omega),
                DVector::from_element(1, b),
                DVector::from_element(1, cc),
            ));
            modes.push(PoleResidueMode::constant_rank_one(
                1,
                c(sigma, -omega),
                DVector::from_element(1, b.conj()),
                DVector::from_element(1, cc.conj()),
            ));
        }
        for _ in 0..singles {
            modes.push(siso_const(
                c(-rng.gen_range(re_lo..re_hi), 0.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ));
        }
        let mut m = model_of(modes);
        m.real_realizable = true;
        m
    }

    #[test]
    fn gauss_legendre_low_orders() {
        let r = gauss_legendre(1, 0.0, 1.0);
        assert!((r.nodes[0] - 0.5).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-15);

        let r = gauss_legendre(2, 0.0, 1.0);
        let integral: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
        assert!((integral - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_log_integral() {
        let r = gauss_legendre(64, 1.0, 100.0);
        let integral: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w / x).sum();
        assert!((integral - 100.0f64.ln()).abs() / 100.0f64.ln() <= 1e-10);
    }

    #[test]
    fn gauss_legendre_weight_sum_and_ordering() {
        for m in [1, 2, 7, 31, 64] {
            let r = gauss_legendre(m, 0.25, 3.5);
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 3.25).abs() / 3.25 <= 1e-13);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes.iter().all(|&x| x > 0.25 && x < 3.5));
        }
    }

    #[test]
    fn inner_product_single_mode() {
        let m = model_of(vec![siso_const(c(-1.0, 0.0), 1.0, 1.0)]);
        let v = h2_inner_pr(&m, &m, &[0.0]).unwrap();
        assert!((v - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn inner_product_far_separated_poles() {
        let m1 = model_of(vec![siso_const(c(-1.0, 0.0), 1.0, 1.0)]);
        let m2 = model_of(vec![siso_const(c(-1e6, 0.0), 1.0, 1.0)]);
        let v = h2_inner_pr(&m1, &m2, &[0.0]).unwrap();
        let expect = 1.0 / (1.0 + 1e6);
        assert!((v.re - expect).abs() / expect <= 1e-10);
        assert!(v.im.abs() <= 1e-20);
    }

    #[test]
    fn inner_product_rejects_unstable() {
        let m = model_of(vec![siso_const(c(0.5, 0.0), 1.0, 1.0)]);
        assert!(matches!(
            h2_inner_pr(&m, &m, &[0.0]),
            Err(Error::Instability { .. })
        ));
    }

    #[test]
    fn error_sq_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_stable(&mut rng, 6, 0.2, 5.0);
        let norm_sq = h2_norm_sq_pr(&m, &[0.3]).unwrap();
        assert!(h2_error_sq_at_q(&m, &m, &[0.3]).unwrap() <= 1e-12 * norm_sq);
        let empty = PoleResidueModel::empty(1, 1, 1);
        let err_sq = h2_error_sq_at_q(&m, &empty, &[0.3]).unwrap();
        assert!((err_sq - norm_sq).abs() <= 1e-13 * norm_sq);
    }

    #[test]
    fn freq_oracle_single_mode() {
        let m = model_of(vec![siso_const(c(-1.0, 0.0), 1.0, 1.0)]);
        let v = h2_norm_freq_oracle(&m, &[0.0], 1e-8).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() <= 1e-8);
    }

    #[test]
    fn freq_oracle_empty_model() {
        let m = PoleResidueModel::empty(1, 1, 1);
        assert_eq!(h2_norm_freq_oracle(&m, &[0.0], 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn freq_oracle_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_stable(&mut rng, 8, 0.1, 20.0);
            let closed = h2_norm_sq_pr(&m, &[0.5]).unwrap().sqrt();
            let oracle = h2_norm_freq_oracle(&m, &[0.5], 1e-9).unwrap();
            assert!(
                (closed - oracle).abs() <= 1e-8 * (1.0 + closed),
                "closed {closed} oracle {oracle}"
            );
        }
    }

    #[test]
    fn h2l2_identical_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_stable(&mut rng, 6, 0.2, 5.0);
        let dom = ParameterDomain::interval(0.0, 1.0).unwrap();
        let norm = h2l2_error(&m, &PoleResidueModel::empty(1, 1, 1), &dom).unwrap();
        let err = h2l2_error(&m, &m, &dom).unwrap();
        assert!(err.total_sq <= 1e-12 * norm.total_sq);
    }

    #[test]
    fn h2l2_breakdown_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fom = random_stable(&mut rng, 8, 0.2, 5.0);
        let rom = random_stable(&mut rng, 4, 0.2, 5.0);
        let dom = ParameterDomain::interval(0.0, 1.0).unwrap();
        let bd = h2l2_error(&fom, &rom, &dom).unwrap();
        let recomputed: f64 = bd.per_node.iter().map(|n| n.weight * n.h2_err_sq).sum();
        assert!((bd.total_sq - recomputed).abs() <= 1e-13 * bd.total_sq.max(1.0));
        assert!(bd.per_node.iter().all(|n| n.h2_err_sq >= 0.0));
    }

    /// Self-convergence on a smooth integrand: the quadrature value is
    /// already resolved at the default order.
    #[test]
    fn h2l2_quadrature_self_convergence() {
        let spec = crate::bench::benchmark(crate::bench::BenchName::Synth6).unwrap();
        let coarse = h2l2_error(&spec.fom, &spec.template, &spec.dom).unwrap();
        let fine = h2l2_error(
            &spec.fom,
            &spec.template,
            &spec.dom.with_quad_order(2 * spec.dom.quad_order()),
        )
        .unwrap();
        let rel = (coarse.total_sq - fine.total_sq).abs() / fine.total_sq;
        assert!(rel <= 1e-10, "rel {rel}");
    }

    #[test]
    fn tensor_rule_covers_box() {
        let dom = ParameterDomain::new(vec![0.0, 1.0], vec![1.0, 3.0], 5).unwrap();
        let grid = tensor_rule(&dom);
        assert_eq!(grid.len(), 25);
        let total: f64 = grid.iter().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() <= 1e-13);
        assert!(grid.iter().all(|(q, _)| dom.contains(q)));
    }

    proptest! {
        /// Gauss-Legendre of order m integrates q^(2m-1) exactly.
        #[test]
        fn quadrature_exactness(m in 1usize..20) {
            let r = gauss_legendre(m, 0.0, 1.0);
            let p = (2 * m - 1) as i32;
            let integral: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(p)).sum();
            let exact = 1.0 / (p as f64 + 1.0);
            prop_assert!((integral - exact).abs() / exact <= 1e-12);
        }

        /// Conjugate symmetry and the Cauchy-Schwarz bound for the
        /// pole-residue inner product.
        #[test]
        fn inner_product_properties(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m1 = random_stable(&mut rng, 6, 0.2, 10.0);
            let m2 = random_stable(&mut rng, 6, 0.2, 10.0);
            let q = [rng.gen_range(0.0..1.0)];
            let v12 = h2_inner_pr(&m1, &m2, &q).unwrap();
            let v21 = h2_inner_pr(&m2, &m1, &q).unwrap();
            prop_assert!((v12 - v21.conj()).norm() <= 1e-13 * (1.0 + v12.norm()));
            let n1 = h2_inner_pr(&m1, &m1, &q).unwrap().re;
            let n2 = h2_inner_pr(&m2, &m2, &q).unwrap().re;
            prop_assert!(v12.norm_sqr() <= n1 * n2 * (1.0 + 1e-10));
        }
    }
}
