use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::basis::BasisSet;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Reduced operators of `ẏ_k = Σ_l A_kl y_l + Σ_{l,m} B_lmk y_l y_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinOperators {
    pub linear: DMatrix<f64>,
    /// `B_lmk` stored at `(l·d + m)·d + k`.
    pub quadratic: Vec<f64>,
    pub viscosity: f64,
}

/// `A_kl = −ν (φ_l', φ_k')` and `B_lmk = −(φ_l φ_m', φ_k)` by the basis quadrature.
pub fn assemble_operators(basis: &BasisSet, nu: f64) -> Result<GalerkinOperators> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::config(format!("viscosity must be non-negative, got {nu}")));
    }
    let d = basis.dim();
    let row = |m: &DMatrix<f64>, l: usize| -> Vec<f64> { m.row(l).iter().copied().collect() };
    let phi: Vec<Vec<f64>> = (0..d).map(|l| row(basis.values(), l)).collect();
    let dphi: Vec<Vec<f64>> = (0..d).map(|l| row(basis.derivatives(), l)).collect();
    let linear = DMatrix::from_fn(d, d, |k, l| -nu * basis.inner(&dphi[l], &dphi[k]));
    let mut quadratic = vec![0.0; d * d * d];
    for l in 0..d {
        for m in 0..d {
            let prod: Vec<f64> = phi[l].iter().zip(&dphi[m]).map(|(a, b)| a * b).collect();
            for k in 0..d {
                quadratic[(l * d + m) * d + k] = -basis.inner(&prod, &phi[k]);
            }
        }
    }
    Ok(GalerkinOperators { linear, quadratic, viscosity: nu })
}

impl GalerkinOperators {
    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn quadratic_at(&self, l: usize, m: usize, k: usize) -> f64 {
        let d = self.dim();
        self.quadratic[(l * d + m) * d + k]
    }

    /// Drift `b(y) = A y + B[y, y]`.
    pub fn drift(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out: Vec<f64> = (0..d).map(|k| (0..d).map(|l| self.linear[(k, l)] * y[l]).sum()).collect();
        for l in 0..d {
            for m in 0..d {
                let ylm = y[l] * y[m];
                if ylm == 0.0 {
                    continue;
                }
                let base = (l * d + m) * d;
                for k in 0..d {
                    out[k] += self.quadratic[base + k] * ylm;
                }
            }
        }
        out
    }
}

/// Coefficient path; `coefficients[j]` is `y(times[j])`, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub times: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl RomTrajectory {
    /// CSV with header `t,y1,…,yd`.
    pub fn to_csv(&self) -> String {
        let d = self.coefficients.first().map_or(0, |c| c.len());
        let mut s = String::from("t");
        for i in 1..=d {
            s.push_str(&format!(",y{i}"));
        }
        s.push('\n');
        for (t, y) in self.times.iter().zip(&self.coefficients) {
            s.push_str(&t.to_string());
            for v in y {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Norm beyond which integration aborts.
pub const BLOWUP_NORM: f64 = 1e6;

fn check_start(ops: &GalerkinOperators, y0: &[f64], dt: f64) -> Result<()> {
    if y0.len() != ops.dim() {
        return Err(Error::shape(format!(
            "initial state has {} entries, operators are {}-dimensional",
            y0.len(),
            ops.dim()
        )));
    }
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::config("initial state must be finite"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

fn check_blowup(y: &[f64], step: usize) -> Result<()> {
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n <= BLOWUP_NORM) {
        return Err(Error::numerical(format!("reduced model blew up at step {step} (|y|={n:.3e})")));
    }
    Ok(())
}

fn axpy(y: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(v, d)| v + a * d).collect()
}

/// Classical fourth-order Runge–Kutta on the deterministic coefficient ODE.
pub fn integrate_rom(ops: &GalerkinOperators, y0: &[f64], dt: f64, steps: usize) -> Result<RomTrajectory> {
    check_start(ops, y0, dt)?;
    let mut times = vec![0.0];
    let mut coefficients = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    for s in 1..=steps {
        let k1 = ops.drift(&y);
        let k2 = ops.drift(&axpy(&y, 0.5 * dt, &k1));
        let k3 = ops.drift(&axpy(&y, 0.5 * dt, &k2));
        let k4 = ops.drift(&axpy(&y, dt, &k3));
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_blowup(&y, s)?;
        times.push(s as f64 * dt);
        coefficients.push(y.clone());
    }
    Ok(RomTrajectory { times, coefficients, noise: None, seed: None })
}

/// Euler–Maruyama for `dY = b(Y) dt + g dB` with diagonal `g` and seeded increments.
pub fn simulate_sde(
    ops: &GalerkinOperators,
    g: &[f64],
    y0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<RomTrajectory> {
    check_start(ops, y0, dt)?;
    if g.len() != y0.len() || g.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::config("noise amplitudes must be finite, non-negative and one per coefficient"));
    }
    let mut rng = seeded(seed);
    let sq = dt.sqrt();
    let mut times = vec![0.0];
    let mut coefficients = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    for s in 1..=steps {
        let b = ops.drift(&y);
        for i in 0..y.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[i] += b[i] * dt + g[i] * sq * z;
        }
        check_blowup(&y, s)?;
        times.push(s as f64 * dt);
        coefficients.push(y.clone());
    }
    Ok(RomTrajectory { times, coefficients, noise: Some(g.to_vec()), seed: Some(seed) })
}
