use nalgebra::DMatrix;
use rand::Rng;

/// Block size of the simultaneous iteration.
const BLOCK: usize = 12;

/// Dominant eigenvalue magnitude by orthogonal (block power) iteration.
///
/// A block of `BLOCK` vectors is repeatedly multiplied by `A` and re-orthonormalised;
/// the Ritz values of the projected block matrix converge to the dominant eigenvalues,
/// including complex-conjugate pairs, which a single-vector power iteration cannot
/// resolve. Stops after `max_iter` sweeps or when the estimate changes by less than
/// `tol` (relative) on three consecutive sweeps.
pub fn spectral_radius<R: Rng + ?Sized>(a: &DMatrix<f64>, rng: &mut R, max_iter: usize, tol: f64) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "spectral radius of a non-square matrix");
    let k = BLOCK.min(n);
    let mut q = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let mut prev = f64::NAN;
    let mut estimate = 0.0;
    let mut stable = 0;
    for _ in 0..max_iter {
        let z = a * &q;
        if z.norm() == 0.0 {
            return 0.0;
        }
        let h = q.transpose() * &z;
        estimate = h.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
        if (estimate - prev).abs() <= tol * estimate {
            stable += 1;
            if stable >= 3 {
                break;
            }
        } else {
            stable = 0;
        }
        prev = estimate;
        q = z.qr().q();
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn random_dense(n: usize, density: f64, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n * n).map(|_| if rng.random::<f64>() < density { rng.random_range(-1.0..1.0) } else { 0.0 }).collect()
    }

    fn dense_radius(n: usize, dense: &[f64]) -> f64 {
        let m = DMatrix::from_row_slice(n, n, dense);
        m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn matches_dense_eigensolver() {
        for (seed, density) in [(1, 1.0), (2, 0.5), (3, 0.2), (4, 0.97)] {
            let dense = random_dense(50, density, seed);
            let a = DMatrix::from_row_slice(50, 50, &dense);
            let est = spectral_radius(&a, &mut seeded(seed + 100), 500, 1e-12);
            let exact = dense_radius(50, &dense);
            assert!((est - exact).abs() <= 1e-6 * exact, "seed {seed}: {est} vs {exact}");
        }
    }

    #[test]
    fn zero_matrix() {
        let a = DMatrix::zeros(4, 4);
        assert_eq!(spectral_radius(&a, &mut seeded(0), 10, 1e-10), 0.0);
    }
}
