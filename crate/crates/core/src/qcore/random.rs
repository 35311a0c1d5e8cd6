//! Seeded random states and unitaries.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::{ComplexMatrix, ZERO};
use super::state::DensityMatrix;

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random unitary: Gram-Schmidt QR of a complex Ginibre matrix.
///
/// Gram-Schmidt yields an R factor with positive real diagonal, which is the
/// phase fix that makes Q Haar distributed.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<C64> = (0..n).map(|_| gaussian(rng)).collect();
        // two passes of modified Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for q in &cols {
                let proj: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        cols.push(v.into_iter().map(|z| z / norm).collect());
    }
    ComplexMatrix::from_fn(n, n, |r, c| cols[c][r])
}

/// Haar-random normalized state vector.
pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|z| z / norm).collect();
        }
    }
}

/// Full-rank random state G G^† / tr(G G^†) from a Ginibre matrix.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ComplexMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    let w = g.matmul(&g.adjoint());
    let tr = w.trace().re;
    DensityMatrix::from_matrix_unchecked(w.scale_real(1.0 / tr))
}

/// Random dichotomic observable n·σ on a qubit.
pub fn random_qubit_observable<R: Rng + ?Sized>(rng: &mut R) -> ComplexMatrix {
    let mut n: [f64; 3] = [0.0; 3];
    loop {
        for x in n.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            n.iter_mut().for_each(|x| *x /= norm);
            break;
        }
    }
    let [x, y, z] = n;
    ComplexMatrix::from_vec(
        2,
        2,
        vec![
            C64::new(z, 0.0),
            C64::new(x, -y),
            C64::new(x, y),
            C64::new(-z, 0.0),
        ],
    )
    .unwrap_or_else(|_| ComplexMatrix::diagonal(&[C64::new(1.0, 0.0), ZERO]))
}
