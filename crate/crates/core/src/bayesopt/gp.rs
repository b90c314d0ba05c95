use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Zero-mean GP with an ARD Matérn-5/2 kernel on standardised targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    length_scales: Vec<f64>,
    signal_variance: f64,
    noise: f64,
    y_mean: f64,
    y_std: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFitOptions {
    /// Diagonal jitter on the standardised scale.
    pub noise: f64,
    /// Gradient-ascent steps on the log marginal likelihood.
    pub steps: usize,
    pub learning_rate: f64,
    pub min_length: f64,
    pub max_length: f64,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        Self { noise: 1e-6, steps: 100, learning_rate: 0.05, min_length: 0.01, max_length: 10.0 }
    }
}

fn matern(r: f64) -> f64 {
    (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
}

fn scaled_distance(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(ls).map(|((p, q), l)| ((p - q) / l).powi(2)).sum::<f64>().sqrt()
}

fn gram(x: &[Vec<f64>], ls: &[f64], var: f64, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| var * matern(scaled_distance(&x[i], &x[j], ls)) + if i == j { noise } else { 0.0 })
}

/// Cholesky with jitter escalation for nearly duplicated inputs.
fn robust_cholesky(mut k: DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut extra = 0.0;
    for _ in 0..8 {
        if let Some(c) = k.clone().cholesky() {
            return Ok((c, noise + extra));
        }
        let add = if extra == 0.0 { noise.max(1e-10) * 10.0 } else { extra * 9.0 };
        for i in 0..k.nrows() {
            k[(i, i)] += add;
        }
        extra += add;
    }
    Err(Error::numerical("GP kernel matrix is not positive definite"))
}

/// Log marginal likelihood and its gradient in (ln ℓ_1…ln ℓ_D, ln σ²).
fn lml_and_gradient(x: &[Vec<f64>], y: &DVector<f64>, ls: &[f64], var: f64, noise: f64) -> Option<(f64, Vec<f64>)> {
    let n = x.len();
    let d = ls.len();
    let k = gram(x, ls, var, noise);
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..n {
            let r = scaled_distance(&x[i], &x[j], ls);
            let base = var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            for (q, l) in ls.iter().enumerate() {
                let diff = (x[i][q] - x[j][q]) / l;
                grad[q] += 0.5 * w[(i, j)] * base * diff * diff;
            }
            grad[d] += 0.5 * w[(i, j)] * var * matern(r);
        }
    }
    Some((lml, grad))
}

impl GaussianProcess {
    /// Fit to `(x, y)`; length scales and signal variance maximise the marginal likelihood.
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &GpFitOptions) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::shape("GP needs matching, non-empty inputs and targets"));
        }
        let d = x[0].len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_std = if sd > 1e-12 { sd } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));

        let mut theta = vec![0.3f64.ln(); d];
        theta.push(0.0);
        let (lo, hi) = (opts.min_length.ln(), opts.max_length.ln());
        let unpack = |t: &[f64]| -> (Vec<f64>, f64) { (t[..d].iter().map(|v| v.exp()).collect(), t[d].exp()) };
        let mut best = theta.clone();
        let mut best_lml = f64::NEG_INFINITY;
        // Adam on log-hyperparameters, keeping the best iterate.
        let (mut m, mut v) = (vec![0.0; d + 1], vec![0.0; d + 1]);
        for step in 1..=opts.steps {
            let (ls, var) = unpack(&theta);
            let Some((lml, g)) = lml_and_gradient(x, &ys, &ls, var, opts.noise) else { break };
            if lml > best_lml {
                best_lml = lml;
                best = theta.clone();
            }
            for q in 0..=d {
                m[q] = 0.9 * m[q] + 0.1 * g[q];
                v[q] = 0.999 * v[q] + 0.001 * g[q] * g[q];
                let mh = m[q] / (1.0 - 0.9f64.powi(step as i32));
                let vh = v[q] / (1.0 - 0.999f64.powi(step as i32));
                theta[q] += opts.learning_rate * mh / (vh.sqrt() + 1e-8);
            }
            for t in theta[..d].iter_mut() {
                *t = t.clamp(lo, hi);
            }
            theta[d] = theta[d].clamp(-6.0, 6.0);
        }
        let (length_scales, signal_variance) = unpack(&best);
        let (chol, noise) = robust_cholesky(gram(x, &length_scales, signal_variance, 0.0), opts.noise)?;
        let alpha = chol.solve(&ys);
        Ok(Self { x: x.to_vec(), length_scales, signal_variance, noise, y_mean, y_std, alpha, chol })
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    /// Posterior mean and standard deviation in target units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| self.signal_variance * matern(scaled_distance(xi, p, &self.length_scales))),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is invertible");
        let var = (self.signal_variance + self.noise - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

/// Expected improvement below `best` for a Gaussian prediction (`mean`, `sd`).
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gain = best - mean;
    if sd <= 1e-300 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (gain * cdf + sd * pdf).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_observations() {
        let x: Vec<Vec<f64>> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&v| vec![v, 1.0 - v * v]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        let gp = GaussianProcess::fit(&x, &y, &GpFitOptions::default()).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let (m, s) = gp.predict(p);
            assert!((m - v).abs() < 1e-3, "{m} vs {v}");
            assert!(s < 1e-2);
        }
    }

    #[test]
    fn marginal_likelihood_gradient() {
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 / 7.0, ((i * 3) % 7) as f64 / 7.0]).collect();
        let y = DVector::from_iterator(7, x.iter().map(|p| p[0] * p[0] - p[1]));
        let ls = [0.4, 0.7];
        let var = 1.3;
        let (_, g) = lml_and_gradient(&x, &y, &ls, var, 1e-6).unwrap();
        let h = 1e-6;
        for q in 0..3 {
            let shifted = |s: f64| {
                let mut t = [ls[0].ln(), ls[1].ln(), var.ln()];
                t[q] += s;
                lml_and_gradient(&x, &y, &[t[0].exp(), t[1].exp()], t[2].exp(), 1e-6).unwrap().0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!((fd - g[q]).abs() < 1e-4 * fd.abs().max(1.0), "{q}: {fd} vs {}", g[q]);
        }
    }

    #[test]
    fn expected_improvement_limits() {
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.5 - 0.2);
        let e = expected_improvement(0.0, 1.0, 0.0);
        assert!((e - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!(expected_improvement(50.0, 1.0, 0.0) >= 0.0);
    }
}
