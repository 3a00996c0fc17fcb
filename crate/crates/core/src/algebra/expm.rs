//! Matrix exponential by scaling and squaring with a fixed [13/13] Padé
//! approximant (Higham 2005). No eigendecomposition is used, so the routine
//! is safe for the non-normal generators that appear in dissipative
//! dynamics.

use num_complex::Complex64;

use super::matrix::CMatrix;
use crate::error::{Error, Result};

const THETA_13: f64 = 5.371920351148152;

const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Computes `exp(a * t)`.
pub fn expm_scaled(a: &CMatrix, t: f64) -> Result<CMatrix> {
    if !t.is_finite() || !a.is_finite() {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let d = a.dim();
    if t == 0.0 {
        return Ok(CMatrix::identity(d));
    }
    let mut x = a.scale_real(t);
    let norm = x.norm1();
    if norm == 0.0 {
        return Ok(CMatrix::identity(d));
    }
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    if squarings > 0 {
        x.scale_in_place(0.5f64.powi(squarings));
    }

    let b = |k: usize| Complex64::new(PADE_13[k], 0.0);
    let ident = CMatrix::identity(d);
    let x2 = x.matmul(&x);
    let x4 = x2.matmul(&x2);
    let x6 = x4.matmul(&x2);

    // U = X [X6 (b13 X6 + b11 X4 + b9 X2) + b7 X6 + b5 X4 + b3 X2 + b1 I]
    let mut inner_u = x6.scale(b(13));
    inner_u.axpy(b(11), &x4);
    inner_u.axpy(b(9), &x2);
    let mut u = x6.matmul(&inner_u);
    u.axpy(b(7), &x6);
    u.axpy(b(5), &x4);
    u.axpy(b(3), &x2);
    u.axpy(b(1), &ident);
    let u = x.matmul(&u);

    // V = X6 (b12 X6 + b10 X4 + b8 X2) + b6 X6 + b4 X4 + b2 X2 + b0 I
    let mut inner_v = x6.scale(b(12));
    inner_v.axpy(b(10), &x4);
    inner_v.axpy(b(8), &x2);
    let mut v = x6.matmul(&inner_v);
    v.axpy(b(6), &x6);
    v.axpy(b(4), &x4);
    v.axpy(b(2), &x2);
    v.axpy(b(0), &ident);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.solve(&p)?;
    for _ in 0..squarings {
        r = r.matmul(&r);
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("matrix exponential result"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(dim: usize, scale: f64, rng: &mut impl Rng) -> CMatrix {
        let data = (0..dim * dim)
            .map(|_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
            .collect();
        CMatrix::from_row_major(dim, data).unwrap()
    }

    /// Truncated Taylor series, kept independent of the Padé path.
    fn taylor_oracle(a: &CMatrix, t: f64, order: usize) -> CMatrix {
        let x = a.scale_real(t);
        let mut term = CMatrix::identity(a.dim());
        let mut sum = term.clone();
        for k in 1..=order {
            term = term.matmul(&x).scale_real(1.0 / k as f64);
            sum = &sum + &term;
        }
        sum
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(5, 1.0, &mut rng);
        assert_eq!(expm_scaled(&a, 0.0).unwrap(), CMatrix::identity(5));
    }

    #[test]
    fn diagonal_generator_exponentiates_entrywise() {
        let diag = [
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.5, 2.0),
            Complex64::new(-30.0, -1.0),
        ];
        let a = CMatrix::from_diagonal(&diag);
        let e = expm_scaled(&a, 0.7).unwrap();
        for (i, z) in diag.iter().enumerate() {
            let expected = (z * 0.7).exp();
            assert!((e[(i, i)] - expected).norm() < 1e-13 * expected.norm().max(1.0));
        }
        assert!(e.max_abs_diff(&CMatrix::from_diagonal(&[e[(0, 0)], e[(1, 1)], e[(2, 2)]])) == 0.0);
    }

    #[test]
    fn matches_taylor_oracle_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_matrix(8, 1.0, &mut rng);
        let e = expm_scaled(&a, 0.3).unwrap();
        let oracle = taylor_oracle(&a, 0.3, 30);
        assert!(e.max_abs_diff(&oracle) < 1e-10, "diff {}", e.max_abs_diff(&oracle));
    }

    #[test]
    fn large_norm_uses_squaring_and_stays_accurate() {
        // nilpotent-plus-diagonal block with known closed form
        let mut a = CMatrix::zeros(2);
        a[(0, 0)] = Complex64::new(-5.0, 0.0);
        a[(1, 1)] = Complex64::new(-5.0, 0.0);
        a[(0, 1)] = Complex64::new(40.0, 0.0);
        let t = 1.3;
        let e = expm_scaled(&a, t).unwrap();
        let decay = (-5.0 * t).exp();
        assert!((e[(0, 0)].re - decay).abs() < 1e-14);
        assert!((e[(0, 1)].re - 40.0 * t * decay).abs() < 1e-12);
        assert!(e[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_matrix(6, 1.5, &mut rng);
            let t1: f64 = rng.random_range(0.0..1.0);
            let t2: f64 = rng.random_range(0.0..1.0);
            let lhs = expm_scaled(&a, t1 + t2).unwrap();
            let rhs = expm_scaled(&a, t1).unwrap().matmul(&expm_scaled(&a, t2).unwrap());
            let scale = lhs.max_abs().max(1.0);
            assert!(lhs.max_abs_diff(&rhs) < 1e-9 * scale);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let a = CMatrix::identity(2);
        assert!(expm_scaled(&a, f64::NAN).is_err());
    }
}
