//! Lanczos ground state and short-iterative Lanczos real-time propagation.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::ManyBodyState;
use crate::hamiltonian::{Amplitude, LinearOperator, SparseHamiltonian};

/// Seed of the deterministic Lanczos start vector.
pub const LANCZOS_SEED: u64 = 0x1a2c_2005;
pub const DEGENERACY_GAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub t_final: f64,
    pub dt_out: f64,
    pub krylov_dim: usize,
    /// Error budget for the whole run; each step may spend a share
    /// proportional to its length.
    pub tol: f64,
    pub dt_max: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            t_final: 200.0,
            dt_out: 0.2,
            krylov_dim: 20,
            tol: 1e-9,
            dt_max: 5.0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.dt_out > 0.0) {
            return bad(format!("dt_out must be positive, got {}", self.dt_out));
        }
        if self.krylov_dim < 4 {
            return bad(format!("krylov_dim must be at least 4, got {}", self.krylov_dim));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.dt_max > 0.0) {
            return bad(format!("dt_max must be positive, got {}", self.dt_max));
        }
        Ok(())
    }

    /// Output times `k · dt_out` up to and including `t_final`.
    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.t_final / self.dt_out + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.dt_out).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateResult {
    pub state: ManyBodyState,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Gap to the next Ritz value of the final Krylov space.
    pub gap: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub tol: f64,
    pub max_basis: usize,
    pub max_matvecs: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_basis: 120,
            max_matvecs: 20_000,
            seed: LANCZOS_SEED,
        }
    }
}

fn dot<T: Amplitude>(a: &[T], b: &[T]) -> Complex64 {
    T::dot(a, b)
}

fn norm<T: Amplitude>(a: &[T]) -> f64 {
    dot(a, a).re.max(0.0).sqrt()
}

fn axpy_real(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lowest eigenpair of a real symmetric operator by restarted Lanczos with
/// full reorthogonalisation.
pub fn lowest_eigenpair<O: LinearOperator>(
    op: &O,
    opts: LanczosOptions,
) -> Result<(f64, Vec<f64>, f64, usize, f64)> {
    let dim = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let n0 = norm(&start);
    start.iter_mut().for_each(|x| *x /= n0);

    let max_basis = opts.max_basis.min(dim).max(1);
    let mut matvecs = 0;
    let mut best_residual = f64::INFINITY;
    let mut work = vec![0.0; dim];

    loop {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz: Option<(f64, Vec<f64>, f64)> = None;

        for k in 0..max_basis {
            op.apply_real(&basis[k], &mut work);
            matvecs += 1;
            let alpha = dot(&basis[k], &work).re;
            alphas.push(alpha);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &work).re;
                    axpy_real(-c, v, &mut work);
                }
            }
            let beta = norm(&work);
            let (values, vectors) = tridiagonal_eigen(&alphas, &betas);
            let y0: Vec<f64> = vectors.column(0).iter().copied().collect();
            let estimate = beta * y0[k].abs();
            let t_scale = values[0].abs().max(values[values.len() - 1].abs()).max(1.0);
            let exhausted = beta <= 1e-13 * t_scale || k + 1 == max_basis;
            let gap = if values.len() > 1 {
                values[1] - values[0]
            } else {
                f64::INFINITY
            };
            if estimate <= 0.1 * opts.tol || exhausted || matvecs >= opts.max_matvecs {
                ritz = Some((values[0], y0, gap));
                break;
            }
            betas.push(beta);
            let inv = 1.0 / beta;
            basis.push(work.iter().map(|x| x * inv).collect());
        }

        let (theta, y, gap) = ritz.expect("Krylov loop always yields a Ritz pair");
        let mut x = vec![0.0; dim];
        for (v, &c) in basis.iter().zip(&y) {
            axpy_real(c, v, &mut x);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        op.apply_real(&x, &mut work);
        matvecs += 1;
        axpy_real(-theta, &x, &mut work);
        let residual = norm(&work);
        best_residual = best_residual.min(residual);
        if residual <= opts.tol {
            return Ok((theta, x, residual, matvecs, gap));
        }
        if matvecs >= opts.max_matvecs {
            return Err(Error::LanczosNonConvergence {
                iterations: matvecs,
                residual: best_residual,
            });
        }
        start = x;
    }
}

/// Eigen-decomposition of the symmetric tridiagonal matrix, ascending.
fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let k = alphas.len();
    let t = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            alphas[r]
        } else if r + 1 == c {
            betas[r]
        } else if c + 1 == r {
            betas[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Ground state of the Hamiltonian as a normalised many-body state.
pub fn ground_state(h: &SparseHamiltonian, tol: f64) -> Result<GroundStateResult> {
    let opts = LanczosOptions {
        tol,
        ..LanczosOptions::default()
    };
    let (energy, x, residual, iterations, gap) = lowest_eigenpair(h, opts)?;
    let coeffs = x.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let state = ManyBodyState::from_coeffs(h.fock_a.clone(), h.fock_b.clone(), coeffs)?;
    Ok(GroundStateResult {
        state,
        energy,
        residual,
        iterations,
        gap,
        degenerate: gap < DEGENERACY_GAP,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagationStats {
    pub steps: usize,
    pub matvecs: usize,
    pub smallest_step: f64,
    pub largest_step: f64,
    pub accumulated_error: f64,
}

/// Krylov space `V`, tridiagonal eigensystem and the residual coupling out of
/// the space.
struct KrylovSpace {
    vectors: Vec<Vec<Complex64>>,
    values: Vec<f64>,
    eigvecs: DMatrix<f64>,
    beta_out: f64,
    /// Norm of the vector the space was built from.
    scale: f64,
}

impl KrylovSpace {
    fn build<O: LinearOperator>(op: &O, psi: &[Complex64], max_dim: usize) -> (Self, usize) {
        let dim = psi.len();
        let scale = norm(psi);
        let inv = 1.0 / scale;
        let mut vectors = vec![psi.iter().map(|c| c * inv).collect::<Vec<_>>()];
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        let mut w = vec![Complex64::default(); dim];
        let mut beta_out = 0.0;
        let mut matvecs = 0;
        let max_dim = max_dim.min(dim);
        for k in 0..max_dim {
            op.apply_complex(&vectors[k], &mut w);
            matvecs += 1;
            let alpha = dot(&vectors[k], &w).re;
            alphas.push(alpha);
            for _ in 0..2 {
                for v in &vectors {
                    let c = dot(v, &w);
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
            let beta = norm(&w);
            let t_scale = alphas.iter().fold(1.0f64, |m, a| m.max(a.abs()));
            if beta <= 1e-13 * t_scale {
                beta_out = 0.0;
                break;
            }
            if k + 1 == max_dim {
                beta_out = beta;
                break;
            }
            betas.push(beta);
            let inv = 1.0 / beta;
            vectors.push(w.iter().map(|c| c * inv).collect());
        }
        let (values, eigvecs) = tridiagonal_eigen(&alphas, &betas);
        (
            Self {
                vectors,
                values,
                eigvecs,
                beta_out,
                scale,
            },
            matvecs,
        )
    }

    /// Coefficients of `exp(-i T τ) e₁` in the Krylov basis.
    fn coefficients(&self, tau: f64) -> Vec<Complex64> {
        let k = self.values.len();
        let phases: Vec<Complex64> = (0..k)
            .map(|n| Complex64::from_polar(self.eigvecs[(0, n)], -self.values[n] * tau))
            .collect();
        (0..k)
            .map(|r| (0..k).map(|n| phases[n] * self.eigvecs[(r, n)]).sum())
            .collect()
    }

    fn error_estimate(&self, tau: f64) -> f64 {
        if self.beta_out == 0.0 {
            return 0.0;
        }
        let y = self.coefficients(tau);
        self.scale * self.beta_out * y[y.len() - 1].norm()
    }

    fn evolve(&self, tau: f64, out: &mut [Complex64]) {
        let y = self.coefficients(tau);
        out.iter_mut().for_each(|x| *x = Complex64::default());
        for (v, c) in self.vectors.iter().zip(&y) {
            let c = c * self.scale;
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
    }
}

/// Solves `i ∂ψ/∂t = Hψ`, calling `sink` with the state at every multiple of
/// `dt_out` from 0 to `t_final` inclusive.
pub fn propagate<O, F>(
    state: &ManyBodyState,
    op: &O,
    cfg: &PropagationConfig,
    sink: F,
) -> Result<ManyBodyState>
where
    O: LinearOperator,
    F: FnMut(&ManyBodyState) -> Result<()>,
{
    propagate_with_stats(state, op, cfg, sink).map(|(s, _)| s)
}

pub fn propagate_with_stats<O, F>(
    state: &ManyBodyState,
    op: &O,
    cfg: &PropagationConfig,
    mut sink: F,
) -> Result<(ManyBodyState, PropagationStats)>
where
    O: LinearOperator,
    F: FnMut(&ManyBodyState) -> Result<()>,
{
    cfg.validate()?;
    if op.dim() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator dimension {} vs state dimension {}",
            op.dim(),
            state.dim()
        )));
    }
    let t0 = state.time;
    let outputs = cfg.output_times();
    let mut stats = PropagationStats {
        smallest_step: f64::INFINITY,
        ..PropagationStats::default()
    };
    let mut current = state.clone();
    let mut snapshot = state.clone();
    let mut next_out = 0;
    let mut elapsed = 0.0;

    sink(&current)?;
    next_out += 1;

    let horizon = outputs.last().copied().unwrap_or(0.0).max(cfg.t_final);
    while horizon - elapsed > 1e-12 * horizon.max(1.0) {
        let (space, mv) = KrylovSpace::build(op, &current.coeffs, cfg.krylov_dim);
        stats.matvecs += mv;

        let mut tau = cfg.dt_max.min(horizon - elapsed);
        let mut err = space.error_estimate(tau);
        while err > cfg.tol * tau / horizon {
            tau *= 0.8;
            if tau < 1e-12 {
                return Err(Error::StepUnderflow {
                    time: t0 + elapsed,
                    step: tau,
                    error: err,
                });
            }
            err = space.error_estimate(tau);
        }
        // Land exactly on the horizon instead of leaving a sliver.
        if horizon - (elapsed + tau) < 1e-9 {
            tau = horizon - elapsed;
        }

        while next_out < outputs.len() && outputs[next_out] <= elapsed + tau + 1e-12 {
            let local = outputs[next_out] - elapsed;
            space.evolve(local, &mut snapshot.coeffs);
            snapshot.time = t0 + outputs[next_out];
            sink(&snapshot)?;
            next_out += 1;
        }

        space.evolve(tau, &mut current.coeffs);
        elapsed += tau;
        current.time = t0 + elapsed;
        stats.steps += 1;
        stats.accumulated_error += err;
        stats.smallest_step = stats.smallest_step.min(tau);
        stats.largest_step = stats.largest_step.max(tau);
    }
    Ok((current, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense real symmetric matrix as an operator.
    struct Dense(DMatrix<f64>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply_complex(&self, input: &[Complex64], out: &mut [Complex64]) {
            for r in 0..self.dim() {
                out[r] = (0..self.dim()).map(|c| input[c] * self.0[(r, c)]).sum();
            }
        }
        fn apply_real(&self, input: &[f64], out: &mut [f64]) {
            for r in 0..self.dim() {
                out[r] = (0..self.dim()).map(|c| input[c] * self.0[(r, c)]).sum();
            }
        }
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn lanczos_matches_dense_eigensolver() {
        let m = random_symmetric(60, 1);
        let exact = SymmetricEigen::new(m.clone()).eigenvalues.min();
        let (e, _, res, _, _) = lowest_eigenpair(&Dense(m), LanczosOptions::default()).unwrap();
        assert!((e - exact).abs() < 1e-10);
        assert!(res <= 1e-10);
    }

    #[test]
    fn lanczos_small_dimension_and_degeneracy() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, -2.0, -2.0]));
        let (e, _, _, _, _) = lowest_eigenpair(&Dense(m), LanczosOptions::default()).unwrap();
        assert!((e + 2.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_reports_nonconvergence() {
        let m = random_symmetric(200, 3);
        let opts = LanczosOptions {
            tol: 1e-14,
            max_basis: 5,
            max_matvecs: 30,
            ..LanczosOptions::default()
        };
        assert!(matches!(
            lowest_eigenpair(&Dense(m), opts),
            Err(Error::LanczosNonConvergence { .. })
        ));
    }

    #[test]
    fn krylov_step_matches_dense_exponential() {
        let n = 40;
        let m = random_symmetric(n, 9);
        let eig = SymmetricEigen::new(m.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let t = 3.7;
        // exact: Q exp(-iΛt) Qᵀ ψ
        let mut exact = vec![Complex64::default(); n];
        for k in 0..n {
            let proj: Complex64 = (0..n).map(|r| psi[r] * eig.eigenvectors[(r, k)]).sum();
            let phase = Complex64::from_polar(1.0, -eig.eigenvalues[k] * t);
            for r in 0..n {
                exact[r] += proj * phase * eig.eigenvectors[(r, k)];
            }
        }
        let basis_a = std::sync::Arc::new(crate::fock::FockBasis::new(n, 1).unwrap());
        let basis_b = std::sync::Arc::new(crate::fock::FockBasis::new(1, 0).unwrap());
        let state = ManyBodyState::from_coeffs(basis_a, basis_b, psi).unwrap();
        let cfg = PropagationConfig {
            t_final: t,
            dt_out: t,
            krylov_dim: 12,
            tol: 1e-11,
            dt_max: 1.0,
        };
        let mut seen = Vec::new();
        let out = propagate(&state, &Dense(m), &cfg, |s| {
            seen.push(s.time);
            Ok(())
        })
        .unwrap();
        for (x, y) in out.coeffs.iter().zip(&exact) {
            assert!((x - y).norm() < 1e-9);
        }
        assert_eq!(seen.len(), 2);
        assert!((seen[1] - t).abs() < 1e-12);
    }

    #[test]
    fn output_times_are_multiples() {
        let cfg = PropagationConfig {
            t_final: 1.0,
            dt_out: 0.2,
            ..PropagationConfig::default()
        };
        let times = cfg.output_times();
        assert_eq!(times.len(), 6);
        assert!((times[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PropagationConfig::default();
        cfg.krylov_dim = 3;
        assert!(cfg.validate().is_err());
        cfg = PropagationConfig {
            t_final: -1.0,
            ..PropagationConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
