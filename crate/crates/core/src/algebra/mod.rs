//! Dense linear algebra over hybrid quantum-classical operators.
//!
//! A hybrid operator is a family of `n_c` complex `d x d` blocks, one per
//! classical label. Superoperators act on the column-stacked vectorization
//! of the whole family: block `R` occupies the slice `R*d² .. (R+1)*d²`
//! and within a block entry `(i, j)` sits at offset `j*d + i`.

mod expm;
mod matrix;

pub use expm::expm_scaled;
pub use matrix::CMatrix;
pub(crate) use matrix::{ONE, ZERO};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerances for the state invariants.
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const EIGEN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct HybridOperator {
    d: usize,
    blocks: Vec<CMatrix>,
}

impl HybridOperator {
    pub fn new(blocks: Vec<CMatrix>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::DimensionMismatch("a hybrid operator needs at least one block".into()))?;
        let d = first.dim();
        if let Some(bad) = blocks.iter().find(|b| b.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "block of dimension {} among blocks of dimension {d}",
                bad.dim()
            )));
        }
        Ok(HybridOperator { d, blocks })
    }

    pub fn zeros(n_classical: usize, d: usize) -> Self {
        HybridOperator {
            d,
            blocks: vec![CMatrix::zeros(d); n_classical],
        }
    }

    /// `|I) = I|1)`: the identity in every classical block.
    pub fn identity_effect(n_classical: usize, d: usize) -> Self {
        HybridOperator {
            d,
            blocks: vec![CMatrix::identity(d); n_classical],
        }
    }

    /// Separable operator `rho ⊗ probs`.
    pub fn product(rho: &CMatrix, probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().map(|&p| rho.scale_real(p)).collect())
    }

    /// Operator supported on a single classical label.
    pub fn on_label(rho: &CMatrix, label: usize, n_classical: usize) -> Result<Self> {
        if label >= n_classical {
            return Err(Error::LabelOutOfRange { label, n_classical });
        }
        let mut h = Self::zeros(n_classical, rho.dim());
        h.blocks[label] = rho.clone();
        Ok(h)
    }

    #[inline]
    pub fn n_classical(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn block(&self, label: usize) -> &CMatrix {
        &self.blocks[label]
    }

    pub fn block_mut(&mut self, label: usize) -> &mut CMatrix {
        &mut self.blocks[label]
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    /// Length of the vectorized form, `n_c * d²`.
    pub fn vec_len(&self) -> usize {
        self.blocks.len() * self.d * self.d
    }

    pub fn total_trace(&self) -> Complex64 {
        self.blocks.iter().map(CMatrix::trace).sum()
    }

    pub fn scale_real(&self, s: f64) -> Self {
        HybridOperator {
            d: self.d,
            blocks: self.blocks.iter().map(|b| b.scale_real(s)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &HybridOperator) -> f64 {
        assert_eq!(self.blocks.len(), other.blocks.len());
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn symmetrize(&mut self) {
        for b in &mut self.blocks {
            b.symmetrize();
        }
    }

    /// Divides by the real part of the total trace.
    pub fn normalized(&self) -> Option<Self> {
        let tr = self.total_trace().re;
        (tr.is_finite() && tr > 0.0).then(|| self.scale_real(1.0 / tr))
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.blocks.iter().map(CMatrix::hermitian_defect).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.hermitian_eigenvalues())
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the state invariants: Hermitian blocks, non-negative
    /// spectra and unit total trace.
    pub fn check_state(&self) -> Result<()> {
        let herm = self.hermitian_defect();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidParameter(format!("state block not Hermitian (defect {herm:e})")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -EIGEN_TOL {
            return Err(Error::InvalidParameter(format!("state block has eigenvalue {min_ev:e}")));
        }
        let tr = self.total_trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("state total trace is {tr}")));
        }
        Ok(())
    }

    fn check_compatible(&self, other: &HybridOperator) -> Result<()> {
        if self.n_classical() != other.n_classical() || self.d != other.d {
            return Err(Error::DimensionMismatch(format!(
                "(n_c={}, d={}) vs (n_c={}, d={})",
                self.n_classical(),
                self.d,
                other.n_classical(),
                other.d
            )));
        }
        Ok(())
    }
}

/// Superoperator on the vectorized hybrid space.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridSuperop {
    n_classical: usize,
    d: usize,
    matrix: CMatrix,
}

impl HybridSuperop {
    pub fn new(n_classical: usize, d: usize, matrix: CMatrix) -> Result<Self> {
        let n = n_classical * d * d;
        if n == 0 || matrix.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "superoperator of size {} for n_c={n_classical}, d={d}",
                matrix.dim()
            )));
        }
        Ok(HybridSuperop { n_classical, d, matrix })
    }

    pub fn zeros(n_classical: usize, d: usize) -> Self {
        HybridSuperop {
            n_classical,
            d,
            matrix: CMatrix::zeros(n_classical * d * d),
        }
    }

    pub fn identity(n_classical: usize, d: usize) -> Self {
        HybridSuperop {
            n_classical,
            d,
            matrix: CMatrix::identity(n_classical * d * d),
        }
    }

    pub fn n_classical(&self) -> usize {
        self.n_classical
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &HybridSuperop) -> HybridSuperop {
        assert_eq!(self.matrix.dim(), other.matrix.dim());
        HybridSuperop {
            n_classical: self.n_classical,
            d: self.d,
            matrix: self.matrix.matmul(&other.matrix),
        }
    }

    pub fn add(&self, other: &HybridSuperop) -> HybridSuperop {
        HybridSuperop {
            n_classical: self.n_classical,
            d: self.d,
            matrix: &self.matrix + &other.matrix,
        }
    }

    pub fn sub(&self, other: &HybridSuperop) -> HybridSuperop {
        HybridSuperop {
            n_classical: self.n_classical,
            d: self.d,
            matrix: &self.matrix - &other.matrix,
        }
    }

    pub fn max_abs_diff(&self, other: &HybridSuperop) -> f64 {
        self.matrix.max_abs_diff(&other.matrix)
    }

    fn check_target(&self, h: &HybridOperator) -> Result<()> {
        if h.n_classical() != self.n_classical || h.dim() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "superoperator for (n_c={}, d={}) applied to (n_c={}, d={})",
                self.n_classical,
                self.d,
                h.n_classical(),
                h.dim()
            )));
        }
        Ok(())
    }
}

/// Column-stacks every block and concatenates in label order.
pub fn vectorize(h: &HybridOperator) -> Vec<Complex64> {
    let d = h.d;
    let mut out = Vec::with_capacity(h.vec_len());
    for b in &h.blocks {
        for j in 0..d {
            for i in 0..d {
                out.push(b[(i, j)]);
            }
        }
    }
    out
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &[Complex64], n_classical: usize, d: usize) -> Result<HybridOperator> {
    if n_classical == 0 || d == 0 || v.len() != n_classical * d * d {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for n_c={n_classical}, d={d}",
            v.len()
        )));
    }
    let blocks = v
        .chunks_exact(d * d)
        .map(|chunk| {
            let mut m = CMatrix::zeros(d);
            for j in 0..d {
                for i in 0..d {
                    m[(i, j)] = chunk[j * d + i];
                }
            }
            m
        })
        .collect();
    Ok(HybridOperator { d, blocks })
}

pub fn apply(s: &HybridSuperop, h: &HybridOperator) -> Result<HybridOperator> {
    s.check_target(h)?;
    devectorize(&s.matrix.matvec(&vectorize(h)), s.n_classical, s.d)
}

/// `exp(S t)` for `t >= 0`.
pub fn expm(s: &HybridSuperop, t: f64) -> Result<HybridSuperop> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("negative propagation time {t}")));
    }
    Ok(HybridSuperop {
        n_classical: s.n_classical,
        d: s.d,
        matrix: expm_scaled(&s.matrix, t)?,
    })
}

/// `Σ_R Tr[A_R B_R]`.
pub fn hs_pairing(a: &HybridOperator, b: &HybridOperator) -> Result<Complex64> {
    a.check_compatible(b)?;
    let d = a.d;
    let mut acc = ZERO;
    for (ab, bb) in a.blocks.iter().zip(&b.blocks) {
        for i in 0..d {
            for k in 0..d {
                acc += ab[(i, k)] * bb[(k, i)];
            }
        }
    }
    Ok(acc)
}

/// Index map of the blockwise transpose on the vectorized space.
fn transpose_index(k: usize, d: usize) -> usize {
    let d2 = d * d;
    let (block, off) = (k / d2, k % d2);
    let (j, i) = (off / d, off % d);
    block * d2 + i * d + j
}

/// Adjoint with respect to [`hs_pairing`].
///
/// With `P` the blockwise-transpose permutation the pairing reads
/// `vec(A)ᵀ P vec(B)`, so the dual is `P Sᵀ P`.
pub fn dual(s: &HybridSuperop) -> HybridSuperop {
    let n = s.matrix.dim();
    let d = s.d;
    let mut out = CMatrix::zeros(n);
    for r in 0..n {
        let pr = transpose_index(r, d);
        for c in 0..n {
            let pc = transpose_index(c, d);
            out[(r, c)] = s.matrix[(pc, pr)];
        }
    }
    HybridSuperop {
        n_classical: s.n_classical,
        d,
        matrix: out,
    }
}

/// Row vector `τ` with `τ · vec(X) = Σ_R Tr[X_R]`.
pub fn trace_functional(n_classical: usize, d: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; n_classical * d * d];
    for r in 0..n_classical {
        for i in 0..d {
            v[r * d * d + i * d + i] = ONE;
        }
    }
    v
}

/// Classical probability vector over the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalDist {
    probs: Vec<f64>,
}

impl ClassicalDist {
    pub const NEG_TOL: f64 = 1e-12;
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch("empty classical distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < -Self::NEG_TOL) {
            return Err(Error::InvalidParameter(format!("invalid probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {sum}")));
        }
        Ok(ClassicalDist { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Option<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return None;
        }
        Some(ClassicalDist {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn purity(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_block(d: usize, rng: &mut impl Rng) -> CMatrix {
        let data = (0..d * d)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        CMatrix::from_row_major(d, data).unwrap()
    }

    fn random_hermitian(d: usize, rng: &mut impl Rng) -> CMatrix {
        let mut m = random_block(d, rng);
        m.symmetrize();
        m
    }

    fn random_op(n_c: usize, d: usize, rng: &mut impl Rng) -> HybridOperator {
        HybridOperator::new((0..n_c).map(|_| random_block(d, rng)).collect()).unwrap()
    }

    fn random_superop(n_c: usize, d: usize, rng: &mut impl Rng) -> HybridSuperop {
        HybridSuperop::new(n_c, d, random_block(n_c * d * d, rng)).unwrap()
    }

    #[test]
    fn identity_vectorizes_to_column_stack() {
        let h = HybridOperator::identity_effect(1, 2);
        assert_eq!(vectorize(&h), vec![ONE, ZERO, ZERO, ONE]);
    }

    #[test]
    fn ground_state_on_first_label_vectorizes() {
        // basis (|+>, |->), labels (d, u): |-><-| lives at (1,1) of block d
        let minus = CMatrix::unit(2, 1, 1);
        let h = HybridOperator::on_label(&minus, 0, 2).unwrap();
        let v = vectorize(&h);
        let expected: Vec<Complex64> = [0., 0., 0., 1., 0., 0., 0., 0.].iter().map(|&x| c(x, 0.0)).collect();
        assert_eq!(v, expected);
        // column stacking puts entry (0,1) at offset 2
        let h = HybridOperator::on_label(&CMatrix::unit(2, 0, 1), 0, 1).unwrap();
        assert_eq!(vectorize(&h)[2], ONE);
    }

    #[test]
    fn devectorize_rejects_bad_length() {
        assert!(devectorize(&[ONE; 7], 2, 2).is_err());
        assert!(devectorize(&[ONE; 8], 0, 2).is_err());
    }

    #[test]
    fn mixed_block_dimensions_rejected() {
        assert!(HybridOperator::new(vec![CMatrix::zeros(2), CMatrix::zeros(3)]).is_err());
        assert!(HybridOperator::new(vec![]).is_err());
    }

    #[test]
    fn zero_and_identity_superops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_op(2, 3, &mut rng);
        assert_eq!(apply(&HybridSuperop::zeros(2, 3), &h).unwrap(), HybridOperator::zeros(2, 3));
        assert_eq!(apply(&HybridSuperop::identity(2, 3), &h).unwrap(), h);
        assert!(apply(&HybridSuperop::identity(1, 3), &h).is_err());
    }

    #[test]
    fn pairing_with_identity_effect_is_total_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_op(3, 2, &mut rng);
        let i = HybridOperator::identity_effect(3, 2);
        assert!((hs_pairing(&a, &i).unwrap() - a.total_trace()).norm() < 1e-14);
    }

    #[test]
    fn pairing_matches_brute_force_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = HybridOperator::new(vec![random_hermitian(2, &mut rng), random_hermitian(2, &mut rng)]).unwrap();
        let b = HybridOperator::new(vec![random_hermitian(2, &mut rng), random_hermitian(2, &mut rng)]).unwrap();
        let mut brute = ZERO;
        for r in 0..2 {
            let prod = a.block(r).matmul(b.block(r));
            brute += prod[(0, 0)] + prod[(1, 1)];
        }
        let p = hs_pairing(&a, &b).unwrap();
        assert!((p - brute).norm() < 1e-14);
        assert!(p.im.abs() < 1e-10);
    }

    #[test]
    fn pairing_of_state_with_itself_is_block_purity_sum() {
        let rho = HybridOperator::new(vec![
            CMatrix::from_real_rows(&[&[0.3, 0.1], &[0.1, 0.2]]).unwrap(),
            CMatrix::from_real_rows(&[&[0.25, 0.0], &[0.0, 0.25]]).unwrap(),
        ])
        .unwrap();
        let p = hs_pairing(&rho, &rho).unwrap();
        assert!(p.im.abs() < 1e-15);
        let expected = rho.block(0).purity() + rho.block(1).purity();
        assert!((p.re - expected).abs() < 1e-15);
        assert!(p.re > 0.0 && p.re <= 1.0);
    }

    #[test]
    fn dual_of_identity_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert_eq!(dual(&HybridSuperop::identity(2, 2)), HybridSuperop::identity(2, 2));
        let s = random_superop(2, 2, &mut rng);
        assert_eq!(dual(&dual(&s)), s);
    }

    #[test]
    fn dual_satisfies_pairing_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let s = random_superop(2, 3, &mut rng);
            let a = random_op(2, 3, &mut rng);
            let rho = random_op(2, 3, &mut rng);
            let lhs = hs_pairing(&a, &apply(&s, &rho).unwrap()).unwrap();
            let rhs = hs_pairing(&rho, &apply(&dual(&s), &a).unwrap()).unwrap();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn dual_reverses_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let u = random_superop(2, 2, &mut rng);
        let v = random_superop(2, 2, &mut rng);
        let lhs = dual(&u.compose(&v));
        let rhs = dual(&v).compose(&dual(&u));
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn expm_rejects_negative_time() {
        assert!(expm(&HybridSuperop::identity(1, 2), -0.1).is_err());
    }

    #[test]
    fn classical_dist_validation() {
        assert!(ClassicalDist::new(vec![0.5, 0.5]).is_ok());
        assert!(ClassicalDist::new(vec![0.7, 0.5]).is_err());
        assert!(ClassicalDist::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassicalDist::new(vec![]).is_err());
        assert!(ClassicalDist::from_weights(&[0.0, 0.0]).is_none());
        let p = ClassicalDist::from_weights(&[1.0, 3.0]).unwrap();
        assert_eq!(p.probs(), &[0.25, 0.75]);
        assert!((p.purity() - 0.625).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn vectorize_round_trip(n_c in 1usize..4, d in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_op(n_c, d, &mut rng);
            let back = devectorize(&vectorize(&h), n_c, d).unwrap();
            prop_assert_eq!(back, h);
        }

        #[test]
        fn expm_semigroup(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_superop(2, 2, &mut rng);
            let lhs = expm(&s, t1 + t2).unwrap();
            let rhs = expm(&s, t1).unwrap().compose(&expm(&s, t2).unwrap());
            let scale = lhs.matrix().max_abs().max(1.0);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9 * scale);
        }

        #[test]
        fn dual_pairing_identity(seed in any::<u64>(), n_c in 1usize..3, d in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_superop(n_c, d, &mut rng);
            let a = random_op(n_c, d, &mut rng);
            let rho = random_op(n_c, d, &mut rng);
            let lhs = hs_pairing(&a, &apply(&s, &rho).unwrap()).unwrap();
            let rhs = hs_pairing(&rho, &apply(&dual(&s), &a).unwrap()).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }
    }
}
