//! Parametric LTI models: separable state-space form, diagonal pole-residue
//! form, transfer-function evaluation, and stability checks.
//!
//! A pole-residue model represents
//!
//! ```text
//! H(s, q) = sum_l  R_l(q) / (s - lambda_l(q))
//! ```
//!
//! with affine poles `lambda_l(q) = lambda0 + sum_k q_k * lambda_lin[k]` and
//! residues that are either rank-one `c_l(q) b_l(q)^*` (reduced models) or
//! full matrices (full-order models given directly in pole-residue form).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scale-invariant guard against evaluating a transfer function at a pole.
pub const POLE_HIT_RTOL: f64 = 1e-12;

/// A real multivariate polynomial stored as a sum of monomials.
///
/// Each term is a coefficient together with one exponent per parameter
/// coordinate. This is the coefficient-function class for separable
/// parametric models; it is closed under the moment integrals used by the
/// condition checkers, which is why general symbolic expressions are not
/// admitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarParamFunction {
    np: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl ScalarParamFunction {
    pub fn new(np: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        if np == 0 {
            return Err(Error::Structure("parameter dimension must be >= 1".into()));
        }
        for (_, exps) in &terms {
            if exps.len() != np {
                return Err(Error::Structure(format!(
                    "exponent vector length {} != np {}",
                    exps.len(),
                    np
                )));
            }
        }
        Ok(Self { np, terms })
    }

    /// The constant function `c`.
    pub fn constant(np: usize, c: f64) -> Self {
        Self {
            np,
            terms: vec![(c, vec![0; np])],
        }
    }

    /// The coordinate function `q_k`.
    pub fn coordinate(np: usize, k: usize) -> Self {
        assert!(k < np);
        let mut exps = vec![0; np];
        exps[k] = 1;
        Self {
            np,
            terms: vec![(1.0, exps)],
        }
    }

    pub fn np(&self) -> usize {
        self.np
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        assert_eq!(q.len(), self.np);
        self.terms
            .iter()
            .map(|(c, exps)| {
                c * exps
                    .iter()
                    .zip(q)
                    .map(|(&e, &qk)| qk.powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Total degree of the highest-order term with a nonzero coefficient.
    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(_, exps)| exps.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Splits an affine function into `(constant, linear coefficients)`.
    /// Returns an error if any term has total degree above one.
    pub fn affine_parts(&self) -> Result<(f64, Vec<f64>)> {
        let mut c0 = 0.0;
        let mut lin = vec![0.0; self.np];
        for (c, exps) in &self.terms {
            let deg: u32 = exps.iter().sum();
            match deg {
                0 => c0 += c,
                1 => {
                    let k = exps.iter().position(|&e| e == 1).unwrap();
                    lin[k] += c;
                }
                _ if *c == 0.0 => {}
                _ => {
                    return Err(Error::Structure(
                        "coefficient function is not affine in q".into(),
                    ))
                }
            }
        }
        Ok((c0, lin))
    }
}

/// Parameter box `[lo, hi]` with a per-axis Gauss-Legendre order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    quad_order: usize,
}

impl ParameterDomain {
    pub const DEFAULT_QUAD_ORDER: usize = 64;

    pub fn new(lo: Vec<f64>, hi: Vec<f64>, quad_order: usize) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Structure("domain bounds must be nonempty and conformable".into()));
        }
        if quad_order < 1 {
            return Err(Error::Structure("quad_order must be >= 1".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) {
                return Err(Error::Structure(format!("need lo < hi, got [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi, quad_order })
    }

    /// 1-D interval with the default quadrature order.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a], vec![b], Self::DEFAULT_QUAD_ORDER)
    }

    pub fn np(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn with_quad_order(&self, m: usize) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            quad_order: m.max(1),
        }
    }

    /// All `2^np` box vertices, in lexicographic bit order.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let np = self.np();
        (0..1usize << np)
            .map(|mask| {
                (0..np)
                    .map(|k| if mask >> k & 1 == 0 { self.lo[k] } else { self.hi[k] })
                    .collect()
            })
            .collect()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.np()
            && q.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&qk, (&l, &h))| l <= qk && qk <= h)
    }
}

/// Parameter-separable state-space model `E(q) x' = A(q) x + B(q) u`,
/// `y = C(q) x`, each matrix a sum of coefficient-function times constant
/// matrix terms.
#[derive(Debug, Clone)]
pub struct ParametricStateSpace {
    pub np: usize,
    pub e_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
    pub a_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
    pub b_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
    pub c_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
}

impl ParametricStateSpace {
    pub fn new(
        np: usize,
        e_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
        a_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
        b_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
        c_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
    ) -> Result<Self> {
        let sys = Self {
            np,
            e_terms,
            a_terms,
            b_terms,
            c_terms,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Model with `E = I` and constant-free shape checks applied.
    pub fn with_identity_e(
        np: usize,
        a_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
        b_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
        c_terms: Vec<(ScalarParamFunction, DMatrix<f64>)>,
    ) -> Result<Self> {
        let n = a_terms
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| Error::Structure("A must have at least one term".into()))?;
        let e_terms = vec![(ScalarParamFunction::constant(np, 1.0), DMatrix::identity(n, n))];
        Self::new(np, e_terms, a_terms, b_terms, c_terms)
    }

    fn validate(&self) -> Result<()> {
        let n = self.order();
        let ni = self.num_inputs();
        let no = self.num_outputs();
        let check = |terms: &[(ScalarParamFunction, DMatrix<f64>)],
                     rows: usize,
                     cols: usize,
                     name: &str|
         -> Result<()> {
            for (f, m) in terms {
                if f.np() != self.np {
                    return Err(Error::Structure(format!(
                        "{name} coefficient function has np {} != {}",
                        f.np(),
                        self.np
                    )));
                }
                if m.nrows() != rows || m.ncols() != cols {
                    return Err(Error::Structure(format!(
                        "{name} term shape {}x{} != {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
            Ok(())
        };
        check(&self.e_terms, n, n, "E")?;
        check(&self.a_terms, n, n, "A")?;
        check(&self.b_terms, n, ni, "B")?;
        check(&self.c_terms, no, n, "C")?;
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.a_terms.first().map_or(0, |(_, m)| m.nrows())
    }

    pub fn num_inputs(&self) -> usize {
        self.b_terms.first().map_or(0, |(_, m)| m.ncols())
    }

    pub fn num_outputs(&self) -> usize {
        self.c_terms.first().map_or(0, |(_, m)| m.nrows())
    }

    fn assemble(terms: &[(ScalarParamFunction, DMatrix<f64>)], q: &[f64]) -> DMatrix<f64> {
        let (rows, cols) = terms
            .first()
            .map(|(_, m)| (m.nrows(), m.ncols()))
            .unwrap_or((0, 0));
        let mut out = DMatrix::zeros(rows, cols);
        for (f, m) in terms {
            out += m * f.eval(q);
        }
        out
    }

    pub fn e_at(&self, q: &[f64]) -> DMatrix<f64> {
        Self::assemble(&self.e_terms, q)
    }

    pub fn a_at(&self, q: &[f64]) -> DMatrix<f64> {
        Self::assemble(&self.a_terms, q)
    }

    pub fn b_at(&self, q: &[f64]) -> DMatrix<f64> {
        Self::assemble(&self.b_terms, q)
    }

    pub fn c_at(&self, q: &[f64]) -> DMatrix<f64> {
        Self::assemble(&self.c_terms, q)
    }

    /// Dense evaluation of `C(q) (s E(q) - A(q))^{-1} B(q)`.
    ///
    /// This is the reference route the pole-residue evaluator is checked
    /// against; it stays independent of the mode decomposition.
    pub fn transfer_dense(&self, s: Complex64, q: &[f64]) -> Result<DMatrix<Complex64>> {
        let to_c = |m: DMatrix<f64>| m.map(|x| Complex64::new(x, 0.0));
        let resolvent = to_c(self.e_at(q)) * s - to_c(self.a_at(q));
        let inv = resolvent
            .try_inverse()
            .ok_or_else(|| Error::Structure("singular s E(q) - A(q)".into()))?;
        Ok(to_c(self.c_at(q)) * inv * to_c(self.b_at(q)))
    }
}

/// Residue of a single mode: rank-one `c(q) b(q)^*` or a full matrix.
#[derive(Debug, Clone)]
pub enum ModeResidue {
    RankOne {
        b_terms: Vec<(ScalarParamFunction, DVector<Complex64>)>,
        c_terms: Vec<(ScalarParamFunction, DVector<Complex64>)>,
    },
    Full {
        phi_terms: Vec<(ScalarParamFunction, DMatrix<Complex64>)>,
    },
}

/// One first-order term of a pole-residue model, with an affine pole.
#[derive(Debug, Clone)]
pub struct PoleResidueMode {
    pub lambda0: Complex64,
    pub lambda_lin: Vec<Complex64>,
    pub residue: ModeResidue,
}

impl PoleResidueMode {
    pub fn rank_one(
        lambda0: Complex64,
        lambda_lin: Vec<Complex64>,
        b_terms: Vec<(ScalarParamFunction, DVector<Complex64>)>,
        c_terms: Vec<(ScalarParamFunction, DVector<Complex64>)>,
    ) -> Self {
        Self {
            lambda0,
            lambda_lin,
            residue: ModeResidue::RankOne { b_terms, c_terms },
        }
    }

    /// Mode with a parameter-independent pole and constant vectors b, c.
    pub fn constant_rank_one(
        np: usize,
        lambda: Complex64,
        b: DVector<Complex64>,
        c: DVector<Complex64>,
    ) -> Self {
        let one = ScalarParamFunction::constant(np, 1.0);
        Self::rank_one(lambda, vec![Complex64::ZERO; np], vec![(one.clone(), b)], vec![(one, c)])
    }

    pub fn lambda_at(&self, q: &[f64]) -> Complex64 {
        self.lambda0
            + self
                .lambda_lin
                .iter()
                .zip(q)
                .map(|(&l, &qk)| l * qk)
                .sum::<Complex64>()
    }

    /// `b(q)` for a rank-one mode.
    pub fn b_at(&self, q: &[f64]) -> Option<DVector<Complex64>> {
        match &self.residue {
            ModeResidue::RankOne { b_terms, .. } => Some(eval_vec_terms(b_terms, q)),
            ModeResidue::Full { .. } => None,
        }
    }

    /// `c(q)` for a rank-one mode.
    pub fn c_at(&self, q: &[f64]) -> Option<DVector<Complex64>> {
        match &self.residue {
            ModeResidue::RankOne { c_terms, .. } => Some(eval_vec_terms(c_terms, q)),
            ModeResidue::Full { .. } => None,
        }
    }

    /// Residue matrix `R(q)` (rank-one modes expand to `c(q) b(q)^*`).
    pub fn residue_at(&self, q: &[f64]) -> DMatrix<Complex64> {
        match &self.residue {
            ModeResidue::RankOne { b_terms, c_terms } => {
                let b = eval_vec_terms(b_terms, q);
                let c = eval_vec_terms(c_terms, q);
                &c * b.adjoint()
            }
            ModeResidue::Full { phi_terms } => {
                let (rows, cols) = phi_terms
                    .first()
                    .map(|(_, m)| (m.nrows(), m.ncols()))
                    .unwrap_or((0, 0));
                let mut out = DMatrix::zeros(rows, cols);
                for (f, m) in phi_terms {
                    out += m * Complex64::new(f.eval(q), 0.0);
                }
                out
            }
        }
    }

    fn conjugated(&self) -> Self {
        let residue = match &self.residue {
            ModeResidue::RankOne { b_terms, c_terms } => ModeResidue::RankOne {
                b_terms: b_terms
                    .iter()
                    .map(|(f, v)| (f.clone(), v.map(|z| z.conj())))
                    .collect(),
                c_terms: c_terms
                    .iter()
                    .map(|(f, v)| (f.clone(), v.map(|z| z.conj())))
                    .collect(),
            },
            ModeResidue::Full { phi_terms } => ModeResidue::Full {
                phi_terms: phi_terms
                    .iter()
                    .map(|(f, m)| (f.clone(), m.map(|z| z.conj())))
                    .collect(),
            },
        };
        Self {
            lambda0: self.lambda0.conj(),
            lambda_lin: self.lambda_lin.iter().map(|l| l.conj()).collect(),
            residue,
        }
    }
}

fn eval_vec_terms(
    terms: &[(ScalarParamFunction, DVector<Complex64>)],
    q: &[f64],
) -> DVector<Complex64> {
    let len = terms.first().map_or(0, |(_, v)| v.len());
    let mut out = DVector::zeros(len);
    for (f, v) in terms {
        out += v * Complex64::new(f.eval(q), 0.0);
    }
    out
}

/// A parametric transfer function in diagonal pole-residue form.
#[derive(Debug, Clone)]
pub struct PoleResidueModel {
    pub np: usize,
    pub ni: usize,
    pub no: usize,
    pub modes: Vec<PoleResidueMode>,
    /// Complex modes come in consecutive conjugate pairs, so the model has a
    /// real state-space realization.
    pub real_realizable: bool,
}

impl PoleResidueModel {
    pub fn new(np: usize, ni: usize, no: usize, modes: Vec<PoleResidueMode>) -> Self {
        Self {
            np,
            ni,
            no,
            modes,
            real_realizable: false,
        }
    }

    pub fn empty(np: usize, ni: usize, no: usize) -> Self {
        Self::new(np, ni, no, Vec::new())
    }

    pub fn order(&self) -> usize {
        self.modes.len()
    }

    /// `H(s, q) = sum_l R_l(q) / (s - lambda_l(q))`.
    pub fn eval_transfer(&self, s: Complex64, q: &[f64]) -> Result<DMatrix<Complex64>> {
        let mut out = DMatrix::zeros(self.no, self.ni);
        for (l, mode) in self.modes.iter().enumerate() {
            let lambda = mode.lambda_at(q);
            let den = s - lambda;
            if den.norm() < POLE_HIT_RTOL * (1.0 + s.norm() + lambda.norm()) {
                return Err(Error::PoleHit { s, pole: lambda, mode: l });
            }
            out += mode.residue_at(q) / den;
        }
        Ok(out)
    }

    /// `dH/ds (s, q) = -sum_l R_l(q) / (s - lambda_l(q))^2`.
    pub fn eval_transfer_ds(&self, s: Complex64, q: &[f64]) -> Result<DMatrix<Complex64>> {
        let mut out = DMatrix::zeros(self.no, self.ni);
        for (l, mode) in self.modes.iter().enumerate() {
            let lambda = mode.lambda_at(q);
            let den = s - lambda;
            if den.norm() < POLE_HIT_RTOL * (1.0 + s.norm() + lambda.norm()) {
                return Err(Error::PoleHit { s, pole: lambda, mode: l });
            }
            out -= mode.residue_at(q) / (den * den);
        }
        Ok(out)
    }

    /// Vertex stability check, exact for poles affine in `q`: returns the
    /// first violating `(mode, vertex)`, or `None` if `Re lambda_l(q) < 0`
    /// everywhere on the box.
    pub fn stability_witness(&self, dom: &ParameterDomain) -> Option<(usize, Vec<f64>)> {
        for (l, mode) in self.modes.iter().enumerate() {
            for vertex in dom.vertices() {
                if mode.lambda_at(&vertex).re >= 0.0 {
                    return Some((l, vertex));
                }
            }
        }
        None
    }

    pub fn is_stable_on(&self, dom: &ParameterDomain) -> bool {
        self.stability_witness(dom).is_none()
    }

    pub fn require_stable_on(&self, dom: &ParameterDomain) -> Result<()> {
        match self.stability_witness(dom) {
            None => Ok(()),
            Some((mode, q)) => {
                let re_lambda = self.modes[mode].lambda_at(&q).re;
                Err(Error::Instability { mode, re_lambda, q })
            }
        }
    }

    /// Stability at a single parameter point.
    pub fn require_stable_at(&self, q: &[f64]) -> Result<()> {
        for (mode, m) in self.modes.iter().enumerate() {
            let re_lambda = m.lambda_at(q).re;
            if re_lambda >= 0.0 {
                return Err(Error::Instability {
                    mode,
                    re_lambda,
                    q: q.to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Converts a real block-structured state-space model to diagonal
/// pole-residue form.
///
/// The A terms must share a single partition into 1x1 blocks and 2x2 blocks
/// of the rotation form `[[sigma, omega], [-omega, sigma]]`, and E(q) must be
/// the identity. Each 2x2 block diagonalizes through the fixed similarity
/// `T = [[1, 1], [i, -i]]`, yielding a conjugate pair of modes with
/// `lambda(q) = sigma(q) +/- i omega(q)`; 1x1 blocks yield real modes.
pub fn state_space_to_pole_residue(sys: &ParametricStateSpace) -> Result<PoleResidueModel> {
    let n = sys.order();
    let np = sys.np;

    // E(q) must be the identity; spot-check at a handful of points since the
    // coefficient functions are polynomial but the term split is arbitrary.
    for t in 0..5 {
        let q: Vec<f64> = (0..np).map(|k| 0.1 + 0.17 * (t * np + k) as f64 % 1.0).collect();
        let e = sys.e_at(&q);
        if (&e - DMatrix::identity(n, n)).norm() > 1e-12 * (n as f64) {
            return Err(Error::Structure("E(q) must be the identity".into()));
        }
    }

    // Detect the shared 1x1 / 2x2 partition from the joint sparsity pattern.
    let mut blocks: Vec<(usize, bool)> = Vec::new(); // (start index, is 2x2)
    let mut k = 0;
    while k < n {
        let coupled = k + 1 < n
            && sys
                .a_terms
                .iter()
                .any(|(_, m)| m[(k, k + 1)] != 0.0 || m[(k + 1, k)] != 0.0);
        if coupled {
            for (_, m) in &sys.a_terms {
                if m[(k, k)] != m[(k + 1, k + 1)] || m[(k, k + 1)] != -m[(k + 1, k)] {
                    return Err(Error::Structure(format!(
                        "2x2 block at state {k} is not of rotation form in every A term"
                    )));
                }
            }
            blocks.push((k, true));
            k += 2;
        } else {
            blocks.push((k, false));
            k += 1;
        }
    }

    // All off-block entries must vanish in every term.
    let mut block_of = vec![0usize; n];
    for (bi, &(start, two)) in blocks.iter().enumerate() {
        block_of[start] = bi;
        if two {
            block_of[start + 1] = bi;
        }
    }
    for (_, m) in &sys.a_terms {
        for i in 0..n {
            for j in 0..n {
                if block_of[i] != block_of[j] && m[(i, j)] != 0.0 {
                    return Err(Error::Structure(format!(
                        "A has a nonzero entry ({i}, {j}) outside the block partition"
                    )));
                }
            }
        }
    }

    // Accumulates sum_t f_t(q) * z_t into an affine pole, requiring every
    // contributing coefficient function to be affine.
    let affine_pole = |entries: Vec<(&ScalarParamFunction, Complex64)>| -> Result<(Complex64, Vec<Complex64>)> {
        let mut lambda0 = Complex64::ZERO;
        let mut lambda_lin = vec![Complex64::ZERO; np];
        for (f, z) in entries {
            if z == Complex64::ZERO {
                continue;
            }
            let (c0, lin) = f.affine_parts()?;
            lambda0 += z * c0;
            for (dst, l) in lambda_lin.iter_mut().zip(lin) {
                *dst += z * l;
            }
        }
        Ok((lambda0, lambda_lin))
    };

    let cplx = |x: f64| Complex64::new(x, 0.0);
    let mut modes = Vec::new();
    for &(start, two) in &blocks {
        if two {
            // sigma(q) + i omega(q) from the per-term block entries.
            let entries: Vec<_> = sys
                .a_terms
                .iter()
                .map(|(f, m)| (f, Complex64::new(m[(start, start)], m[(start, start + 1)])))
                .collect();
            let (lambda0, lambda_lin) = affine_pole(entries)?;

            // b_+^* = (1/2) (B_row[k] - i B_row[k+1]); c_+ = C_col[k] + i C_col[k+1].
            let b_terms: Vec<_> = sys
                .b_terms
                .iter()
                .map(|(f, bm)| {
                    let v = DVector::from_iterator(
                        sys.num_inputs(),
                        (0..sys.num_inputs())
                            .map(|j| Complex64::new(bm[(start, j)], bm[(start + 1, j)]) * 0.5),
                    );
                    (f.clone(), v)
                })
                .collect();
            let c_terms: Vec<_> = sys
                .c_terms
                .iter()
                .map(|(f, cm)| {
                    let v = DVector::from_iterator(
                        sys.num_outputs(),
                        (0..sys.num_outputs())
                            .map(|i| Complex64::new(cm[(i, start)], cm[(i, start + 1)])),
                    );
                    (f.clone(), v)
                })
                .collect();

            let plus = PoleResidueMode::rank_one(lambda0, lambda_lin, b_terms, c_terms);
            let minus = plus.conjugated();
            modes.push(plus);
            modes.push(minus);
        } else {
            let entries: Vec<_> = sys
                .a_terms
                .iter()
                .map(|(f, m)| (f, cplx(m[(start, start)])))
                .collect();
            let (lambda0, lambda_lin) = affine_pole(entries)?;
            let b_terms: Vec<_> = sys
                .b_terms
                .iter()
                .map(|(f, bm)| (f.clone(), bm.row(start).transpose().map(cplx)))
                .collect();
            let c_terms: Vec<_> = sys
                .c_terms
                .iter()
                .map(|(f, cm)| (f.clone(), cm.column(start).map(cplx)))
                .collect();
            modes.push(PoleResidueMode::rank_one(lambda0, lambda_lin, b_terms, c_terms));
        }
    }

    Ok(PoleResidueModel {
        np,
        ni: sys.num_inputs(),
        no: sys.num_outputs(),
        modes,
        real_realizable: true,
    })
}
