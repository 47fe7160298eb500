//! Sine discrete variable representation on a hard-wall box.
//!
//! Grid nodes are the interior points of the box, the kinetic operator is the
//! exact box-eigenfunction representation and potentials are diagonal. The
//! single-particle eigenvectors produced here are the fixed orbital basis the
//! many-body problem is expanded in.
//!
//! Orbitals are stored as DVR amplitudes `c_j` normalised as `Σ_j c_j² = 1`.
//! The wavefunction value at node `x_j` is `c_j / sqrt(dx)` where `dx` is the
//! uniform quadrature weight.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::Species;

/// |ζ(1/2)| for the confinement-induced shift of the 1D coupling.
pub const ZETA_HALF_ABS: f64 = 1.460_354_508_809_586_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: -40.0,
            x_max: 40.0,
            n_points: 400,
        }
    }
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        let grid = Self {
            x_min,
            x_max,
            n_points,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) {
            return Err(Error::InvalidParameter("grid bounds must be finite".into()));
        }
        if !(self.x_min < 0.0 && self.x_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid must straddle the origin, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if self.n_points < 64 {
            return Err(Error::InvalidParameter(format!(
                "need at least 64 grid points, got {}",
                self.n_points
            )));
        }
        let scale = self.length();
        if self.nodes().iter().any(|x| x.abs() < 1e-12 * scale) {
            return Err(Error::InvalidParameter(
                "a grid node sits on x = 0; the left/right partition would be ambiguous".into(),
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Uniform quadrature weight of every node.
    pub fn spacing(&self) -> f64 {
        self.length() / (self.n_points + 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + (j + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// True when `x_min = -x_max`, so node `j` mirrors node `n - 1 - j`.
    pub fn is_symmetric(&self) -> bool {
        (self.x_min + self.x_max).abs() <= 1e-12 * self.length()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub label: Species,
    pub mass: f64,
    pub omega: f64,
}

impl SpeciesParams {
    pub fn new(label: Species, mass: f64, omega: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "trap frequency must be non-negative, got {omega}"
            )));
        }
        Ok(Self { label, mass, omega })
    }

    pub fn light() -> Self {
        Self {
            label: Species::A,
            mass: 1.0,
            omega: 0.1,
        }
    }

    pub fn heavy() -> Self {
        Self {
            label: Species::B,
            mass: 6.0,
            omega: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    pub barrier_height: f64,
    pub barrier_width: f64,
    pub tilt: f64,
}

impl TrapParams {
    pub fn new(barrier_height: f64, barrier_width: f64, tilt: f64) -> Result<Self> {
        if !(barrier_height >= 0.0 && barrier_height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "barrier height must be non-negative, got {barrier_height}"
            )));
        }
        if !(barrier_width > 0.0 && barrier_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "barrier width must be positive, got {barrier_width}"
            )));
        }
        if !tilt.is_finite() {
            return Err(Error::InvalidParameter("tilt must be finite".into()));
        }
        Ok(Self {
            barrier_height,
            barrier_width,
            tilt,
        })
    }

    pub fn with_tilt(self, tilt: f64) -> Self {
        Self { tilt, ..self }
    }

    /// Peak value of the Gaussian barrier, `V0 / (w sqrt(2π))`.
    pub fn barrier_peak(&self) -> f64 {
        self.barrier_height / (self.barrier_width * (2.0 * PI).sqrt())
    }
}

/// Exact sine-DVR matrix of `-(1/2M) d²/dx²` with hard walls at the box edges.
pub fn build_kinetic(grid: &GridSpec, mass: f64) -> DMatrix<f64> {
    let n = grid.n_points;
    let big_n = (n + 1) as f64;
    let prefactor = PI * PI / (4.0 * mass * grid.length() * grid.length());
    let inv_sin2 = |arg: f64| {
        let s = arg.sin();
        1.0 / (s * s)
    };
    DMatrix::from_fn(n, n, |r, c| {
        let i = (r + 1) as f64;
        if r == c {
            prefactor * ((2.0 * big_n * big_n + 1.0) / 3.0 - inv_sin2(PI * i / big_n))
        } else {
            let k = (c + 1) as f64;
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            prefactor
                * sign
                * (inv_sin2(PI * (i - k) / (2.0 * big_n)) - inv_sin2(PI * (i + k) / (2.0 * big_n)))
        }
    })
}

/// Harmonic trap, Gaussian barrier and linear tilt evaluated at `x`.
pub fn potential_at(x: f64, species: &SpeciesParams, trap: &TrapParams) -> f64 {
    let w = trap.barrier_width;
    0.5 * species.mass * species.omega * species.omega * x * x
        + trap.barrier_peak() * (-x * x / (2.0 * w * w)).exp()
        + trap.tilt * x
}

pub fn build_potential(grid: &GridSpec, species: &SpeciesParams, trap: &TrapParams) -> Vec<f64> {
    grid.nodes()
        .into_iter()
        .map(|x| potential_at(x, species, trap))
        .collect()
}

/// Lowest single-particle eigenstates of one species together with the
/// orbital-space matrices the many-body layers need.
#[derive(Debug, Clone)]
pub struct OrbitalBasis {
    pub grid: GridSpec,
    pub species: SpeciesParams,
    pub trap: TrapParams,
    pub n_orbitals: usize,
    pub energies: Vec<f64>,
    /// `n_orbitals × n_points` DVR amplitudes.
    pub orbitals: DMatrix<f64>,
    /// `⟨a|x|b⟩`.
    pub position_matrix: DMatrix<f64>,
    /// Overlaps restricted to `x < 0` and `x > 0`.
    pub half_overlaps: (DMatrix<f64>, DMatrix<f64>),
}

impl OrbitalBasis {
    pub fn n_points(&self) -> usize {
        self.grid.n_points
    }

    /// Orbital value `φ_a(x_j)` in inverse square-root length units.
    pub fn value(&self, a: usize, j: usize) -> f64 {
        self.orbitals[(a, j)] / self.grid.spacing().sqrt()
    }

    /// Field-operator amplitudes `φ_a(x_j)` for all orbitals at node `j`.
    pub fn field_amplitudes(&self, j: usize) -> Vec<f64> {
        (0..self.n_orbitals).map(|a| self.value(a, j)).collect()
    }

    pub fn left_overlap(&self) -> &DMatrix<f64> {
        &self.half_overlaps.0
    }

    pub fn right_overlap(&self) -> &DMatrix<f64> {
        &self.half_overlaps.1
    }

    /// Largest deviation of `U Uᵀ` from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let gram = &self.orbitals * self.orbitals.transpose();
        max_abs_diff_identity(&gram)
    }

    /// Mirror-parity sign of each orbital, if the grid is symmetric.
    pub fn parity_signs(&self) -> Option<Vec<f64>> {
        if !self.grid.is_symmetric() {
            return None;
        }
        let n = self.grid.n_points;
        let signs = (0..self.n_orbitals)
            .map(|a| {
                let overlap: f64 = (0..n)
                    .map(|j| self.orbitals[(a, j)] * self.orbitals[(a, n - 1 - j)])
                    .sum();
                if overlap >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Some(signs)
    }

    /// Projects a one-body grid operator onto the orbital space.
    pub fn project(&self, grid_operator: &DMatrix<f64>) -> DMatrix<f64> {
        &self.orbitals * grid_operator * self.orbitals.transpose()
    }

    /// Projects a diagonal grid operator onto the orbital space.
    pub fn project_diagonal(&self, diag: &[f64]) -> DMatrix<f64> {
        let weighted = DMatrix::from_fn(self.n_orbitals, self.grid.n_points, |a, j| {
            self.orbitals[(a, j)] * diag[j]
        });
        &weighted * self.orbitals.transpose()
    }
}

fn max_abs_diff_identity(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((m[(r, c)] - target).abs());
        }
    }
    worst
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 100_000;

/// Diagonalises kinetic plus potential energy on the grid and keeps the
/// lowest `n_orbitals` eigenpairs.
pub fn solve_single_particle(
    grid: &GridSpec,
    species: &SpeciesParams,
    trap: &TrapParams,
    n_orbitals: usize,
) -> Result<OrbitalBasis> {
    grid.validate()?;
    if n_orbitals == 0 || n_orbitals > grid.n_points {
        return Err(Error::InvalidParameter(format!(
            "n_orbitals must be in 1..={}, got {}",
            grid.n_points, n_orbitals
        )));
    }
    let mut hamiltonian = build_kinetic(grid, species.mass);
    for (j, v) in build_potential(grid, species, trap).into_iter().enumerate() {
        hamiltonian[(j, j)] += v;
    }
    let (energies, orbitals) = lowest_eigenpairs(&hamiltonian, n_orbitals)?;

    let nodes = grid.nodes();
    let position_matrix = {
        let weighted =
            DMatrix::from_fn(n_orbitals, grid.n_points, |a, j| orbitals[(a, j)] * nodes[j]);
        &weighted * orbitals.transpose()
    };
    let left_mask: Vec<f64> = nodes
        .iter()
        .map(|&x| if x < 0.0 { 1.0 } else { 0.0 })
        .collect();
    let masked = DMatrix::from_fn(n_orbitals, grid.n_points, |a, j| {
        orbitals[(a, j)] * left_mask[j]
    });
    let left = &masked * orbitals.transpose();
    let right_masked = &orbitals - &masked;
    let right = &right_masked * orbitals.transpose();

    Ok(OrbitalBasis {
        grid: *grid,
        species: *species,
        trap: *trap,
        n_orbitals,
        energies,
        orbitals,
        position_matrix,
        half_overlaps: (left, right),
    })
}

/// Returns the `count` lowest eigenvalues (ascending) and eigenvectors as rows.
///
/// Each eigenvector is sign-fixed so that its first component of maximal
/// magnitude is positive.
pub(crate) fn lowest_eigenpairs(
    matrix: &DMatrix<f64>,
    count: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    let eig = SymmetricEigen::try_new(matrix.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(
        || {
            Error::EigenNonConvergence(format!(
                "dense symmetric eigensolver on a {n}×{n} grid Hamiltonian hit {EIGEN_MAX_ITER} iterations"
            ))
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut energies = Vec::with_capacity(count);
    let mut vectors = DMatrix::zeros(count, n);
    let mut worst_residual = 0.0f64;
    for (row, &k) in order.iter().take(count).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let peak = v.amax();
        let pivot = v
            .iter()
            .position(|x| x.abs() >= peak * (1.0 - 1e-8))
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        let lambda = eig.eigenvalues[k];
        let residual = (matrix * &v - &v * lambda).norm();
        worst_residual = worst_residual.max(residual);
        energies.push(lambda);
        vectors.row_mut(row).copy_from(&v.transpose());
    }
    let scale = matrix.amax().max(1.0);
    if worst_residual > 1e-8 * scale {
        return Err(Error::EigenNonConvergence(format!(
            "worst eigenpair residual {worst_residual:e} exceeds {:e}",
            1e-8 * scale
        )));
    }
    Ok((energies, vectors))
}

/// Effective 1D interspecies coupling from the 3D scattering length.
///
/// `a_s` is in units of `sqrt(ħ/(M_A ω_⊥))`, `omega_perp` in units of `ω_⊥` and
/// `mu` in units of `M_A`; the result is in units of `sqrt(ħ³ω_⊥/M_A)`.
pub fn effective_coupling(a_s: f64, omega_perp: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0 && omega_perp > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reduced mass and transverse frequency must be positive (mu = {mu}, omega_perp = {omega_perp})"
        )));
    }
    let a_perp = (1.0 / (mu * omega_perp)).sqrt();
    let resonance = 2f64.sqrt() * a_perp / ZETA_HALF_ABS;
    let denominator = 1.0 - ZETA_HALF_ABS * a_s / (2f64.sqrt() * a_perp);
    if denominator.abs() < 1e-12 {
        return Err(Error::CouplingResonance { a_s, resonance });
    }
    Ok(2.0 * a_s / (mu * a_perp * a_perp) / denominator)
}

pub fn reduced_mass(mass_a: f64, mass_b: f64) -> f64 {
    mass_a * mass_b / (mass_a + mass_b)
}
