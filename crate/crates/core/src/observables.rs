//! Reduced densities, well populations, pair probabilities, entanglement and
//! fragmentation measures, and Fourier spectra of time signals.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dvr::OrbitalBasis;
use crate::error::{Error, Result};
use crate::fock::{apply_one_body, ManyBodyState, Species};
use crate::hamiltonian::SparseHamiltonian;

/// Schmidt weights below this are not counted in the rank.
pub const SCHMIDT_RANK_CUTOFF: f64 = 1e-14;
/// Number of leading Schmidt weights kept per output time.
pub const SCHMIDT_KEEP: usize = 8;

/// One-body reduced density matrix `D_ab = ⟨c†_a c_b⟩` in the orbital basis.
#[derive(Debug, Clone)]
pub struct OneBodyRDM {
    pub species: Species,
    pub matrix: DMatrix<Complex64>,
    pub trace: f64,
}

impl OneBodyRDM {
    pub fn n_orbitals(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Natural populations in descending order with their natural orbitals
    /// as matching columns (coefficients over the orbital basis).
    pub fn natural_orbitals(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        let m = self.n_orbitals();
        let eig = SymmetricEigen::new(self.matrix.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let pops = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        (pops, vecs)
    }

    pub fn natural_populations(&self) -> Vec<f64> {
        self.natural_orbitals().0
    }

    /// Spatial density `ρ(x_j)` per unit length at every grid node.
    pub fn density(&self, basis: &OrbitalBasis) -> Vec<f64> {
        let m = self.n_orbitals();
        let dx = basis.grid.spacing();
        (0..basis.n_points())
            .map(|j| {
                let mut acc = 0.0;
                for a in 0..m {
                    let ca = basis.orbitals[(a, j)];
                    if ca == 0.0 {
                        continue;
                    }
                    for b in 0..m {
                        acc += self.matrix[(a, b)].re * ca * basis.orbitals[(b, j)];
                    }
                }
                acc / dx
            })
            .collect()
    }
}

/// `⟨ψ|c†_a c_b|ψ⟩` for every orbital pair of one species.
pub fn rdm1(state: &ManyBodyState, species: Species) -> OneBodyRDM {
    let basis = state.basis(species);
    let m = basis.n_orbitals();
    let table = basis.one_body_table();
    let (rows, cols) = (state.dim_a(), state.dim_b());
    let psi = &state.coeffs;
    let mut matrix = DMatrix::<Complex64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let mut acc = Complex64::default();
            for hop in table.pair(a, b) {
                let (t, s) = (hop.target as usize, hop.source as usize);
                let mut part = Complex64::default();
                match species {
                    Species::A => {
                        let (rt, rs) = (&psi[t * cols..(t + 1) * cols], &psi[s * cols..(s + 1) * cols]);
                        for (x, y) in rt.iter().zip(rs) {
                            part += x.conj() * y;
                        }
                    }
                    Species::B => {
                        for r in 0..rows {
                            part += psi[r * cols + t].conj() * psi[r * cols + s];
                        }
                    }
                }
                acc += part * hop.sign;
            }
            matrix[(a, b)] = acc;
        }
    }
    let trace = (0..m).map(|a| matrix[(a, a)].re).sum();
    OneBodyRDM {
        species,
        matrix,
        trace,
    }
}

/// Particles of the species found at `x < 0`, i.e. `Re Tr(D · O^L)`.
pub fn left_population(rdm: &OneBodyRDM, basis: &OrbitalBasis) -> f64 {
    half_population(rdm, basis.left_overlap())
}

pub fn right_population(rdm: &OneBodyRDM, basis: &OrbitalBasis) -> f64 {
    half_population(rdm, basis.right_overlap())
}

fn half_population(rdm: &OneBodyRDM, overlap: &DMatrix<f64>) -> f64 {
    let m = rdm.n_orbitals();
    let mut acc = 0.0;
    for a in 0..m {
        for b in 0..m {
            acc += rdm.matrix[(a, b)].re * overlap[(b, a)];
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pair {
    AA,
    BB,
    AB,
}

fn half_number(state: &ManyBodyState, species: Species, overlap: &DMatrix<f64>) -> ManyBodyState {
    let op = overlap.map(|x| Complex64::new(x, 0.0));
    apply_one_body(state, species, &op).expect("overlap matrix matches the orbital count")
}

/// Probability that a randomly chosen pair of fermions shares a well.
///
/// Same-species pairs are counted without ordering, so `|3,0⟩ → 1` and
/// `|1,2⟩ → 1/3`; mixed pairs are normalised by `N_A N_B`.
pub fn pair_probability(
    state: &ManyBodyState,
    pair: Pair,
    basis_a: &OrbitalBasis,
    basis_b: &OrbitalBasis,
) -> Result<f64> {
    match pair {
        Pair::AA => same_species_pair(state, Species::A, basis_a),
        Pair::BB => same_species_pair(state, Species::B, basis_b),
        Pair::AB => {
            let (na, nb) = (state.n_particles(Species::A), state.n_particles(Species::B));
            if na == 0 || nb == 0 {
                return Err(Error::TooFewParticles("AB".into()));
            }
            let norm2 = state.inner(state).re;
            let al = half_number(state, Species::A, basis_a.left_overlap());
            let bl = half_number(state, Species::B, basis_b.left_overlap());
            let mut ar = state.clone();
            let mut br = state.clone();
            for ((r, l), (rb, lb)) in ar
                .coeffs
                .iter_mut()
                .zip(&al.coeffs)
                .zip(br.coeffs.iter_mut().zip(&bl.coeffs))
            {
                *r = *r * na as f64 - l;
                *rb = *rb * nb as f64 - lb;
            }
            let ll = al.inner(&bl).re;
            let rr = ar.inner(&br).re;
            Ok((ll + rr) / (norm2 * (na * nb) as f64))
        }
    }
}

fn same_species_pair(
    state: &ManyBodyState,
    species: Species,
    own: &OrbitalBasis,
) -> Result<f64> {
    let n = state.n_particles(species);
    if n < 2 {
        return Err(Error::TooFewParticles(format!("{species}{species}")));
    }
    let norm2 = state.inner(state).re;
    // Σ_{i≠j} L_i L_j = N_L² − N_{L²}; the projected overlap is not idempotent.
    let pairs_in = |overlap: &DMatrix<f64>| {
        let once = half_number(state, species, overlap);
        let squared = half_number(state, species, &(overlap * overlap));
        once.inner(&once).re - state.inner(&squared).re
    };
    let same = pairs_in(own.left_overlap()) + pairs_in(own.right_overlap());
    Ok(same / (norm2 * (n * (n - 1)) as f64))
}

/// Interspecies Schmidt weights `λ_k = s_k²`, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    pub weights: Vec<f64>,
    pub rank: usize,
}

pub fn schmidt_spectrum(state: &ManyBodyState) -> SchmidtSpectrum {
    let c = state.as_matrix();
    let mut weights: Vec<f64> = c
        .singular_values()
        .iter()
        .map(|s| s * s)
        .collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let rank = weights.iter().filter(|&&w| w > SCHMIDT_RANK_CUTOFF).count();
    SchmidtSpectrum { weights, rank }
}

/// Von Neumann entropy `−Σ λ ln λ` with `0 ln 0 = 0`.
pub fn entropy(spec: &SchmidtSpectrum) -> f64 {
    spec.weights
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.ln())
        .sum::<f64>()
        .max(0.0)
}

/// `N − Σ_{i ≤ N} n_i` over the `N` largest natural populations.
pub fn fragmentation(rdm: &OneBodyRDM) -> f64 {
    let n = rdm.trace.round() as usize;
    let pops = rdm.natural_populations();
    let top: f64 = pops.iter().take(n).sum();
    (rdm.trace - top).clamp(0.0, rdm.trace.max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// Optional preprocessing for [`spectrum`]; the default evaluates the raw
/// transform of the finite record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub detrend: bool,
    pub window: Window,
}

/// `ω ∈ [0, 2]` sampled at 2000 points.
pub fn default_omega_grid() -> Vec<f64> {
    let n = 2000;
    (0..n).map(|k| 2.0 * k as f64 / (n - 1) as f64).collect()
}

/// `P(ω) = (1/π) ∫ f(t) cos(ωt) dt` over the record, trapezoid rule.
pub fn spectrum(
    times: &[f64],
    values: &[f64],
    omega_grid: &[f64],
    opts: SpectrumOptions,
) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} times vs {} values",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::InvalidParameter(
            "spectrum needs at least two samples".into(),
        ));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::NonUniformTimeGrid {
            index: 0,
            dt,
            expected: dt,
        });
    }
    for (index, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::NonUniformTimeGrid {
                index,
                dt: step,
                expected: dt,
            });
        }
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let signal: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let v = if opts.detrend { v - mean } else { v };
            match opts.window {
                Window::None => v,
                Window::Hann => {
                    let s = (std::f64::consts::PI * k as f64 / (n - 1) as f64).sin();
                    v * s * s
                }
            }
        })
        .collect();
    Ok(omega_grid
        .iter()
        .map(|&omega| {
            let mut acc = 0.0;
            for (k, (&t, &f)) in times.iter().zip(&signal).enumerate() {
                let weight = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                acc += weight * f * (omega * t).cos();
            }
            acc * dt / std::f64::consts::PI
        })
        .collect())
}

/// Indices of interior local maxima at or above `fraction` of the global
/// maximum of `p`.
pub fn spectral_peaks(p: &[f64], fraction: f64) -> Vec<usize> {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    for k in 0..p.len() {
        let left = if k == 0 { f64::NEG_INFINITY } else { p[k - 1] };
        let right = if k + 1 == p.len() { f64::NEG_INFINITY } else { p[k + 1] };
        if p[k] > left && p[k] >= right && p[k] >= fraction * max {
            peaks.push(k);
        }
    }
    peaks
}

/// Everything measured at the output times of one quench.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub n_a: usize,
    pub n_b: usize,
    pub times: Vec<f64>,
    pub norm: Vec<f64>,
    pub energy: Vec<f64>,
    pub left_pop_a: Vec<f64>,
    pub left_pop_b: Vec<f64>,
    pub p2_aa: Vec<f64>,
    pub p2_bb: Vec<f64>,
    pub p2_ab: Vec<f64>,
    pub entropy: Vec<f64>,
    pub frag_a: Vec<f64>,
    pub frag_b: Vec<f64>,
    pub schmidt: Vec<Vec<f64>>,
    pub density_a: Vec<Vec<f64>>,
    pub density_b: Vec<Vec<f64>>,
}

impl ObservableSeries {
    pub fn new(n_a: usize, n_b: usize) -> Self {
        Self {
            n_a,
            n_b,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends every observable of `state`. Pair probabilities that are
    /// undefined for the particle numbers are stored as NaN. The energy
    /// column is filled only when a Hamiltonian is given.
    pub fn record(
        &mut self,
        state: &ManyBodyState,
        basis_a: &OrbitalBasis,
        basis_b: &OrbitalBasis,
        hamiltonian: Option<&SparseHamiltonian>,
    ) {
        let da = rdm1(state, Species::A);
        let db = rdm1(state, Species::B);
        let pair = |p| pair_probability(state, p, basis_a, basis_b).unwrap_or(f64::NAN);
        let spec = schmidt_spectrum(state);
        self.times.push(state.time);
        self.norm.push(state.norm());
        if let Some(h) = hamiltonian {
            self.energy.push(h.expectation(state));
        }
        self.left_pop_a.push(left_population(&da, basis_a));
        self.left_pop_b.push(left_population(&db, basis_b));
        self.p2_aa.push(pair(Pair::AA));
        self.p2_bb.push(pair(Pair::BB));
        self.p2_ab.push(pair(Pair::AB));
        self.entropy.push(entropy(&spec));
        self.frag_a.push(fragmentation(&da));
        self.frag_b.push(fragmentation(&db));
        self.schmidt
            .push(spec.weights.iter().take(SCHMIDT_KEEP).copied().collect());
        self.density_a.push(da.density(basis_a));
        self.density_b.push(db.density(basis_b));
    }

    pub fn left_pop(&self, species: Species) -> &[f64] {
        match species {
            Species::A => &self.left_pop_a,
            Species::B => &self.left_pop_b,
        }
    }

    pub fn n_particles(&self, species: Species) -> usize {
        match species {
            Species::A => self.n_a,
            Species::B => self.n_b,
        }
    }

    /// Rows with `t ≤ t_max`.
    pub fn truncated(&self, t_max: f64) -> Self {
        let n = self.times.iter().take_while(|&&t| t <= t_max + 1e-9).count();
        let cut = |v: &Vec<f64>| v.iter().take(n).copied().collect::<Vec<_>>();
        let cut2 = |v: &Vec<Vec<f64>>| v.iter().take(n).cloned().collect::<Vec<_>>();
        Self {
            n_a: self.n_a,
            n_b: self.n_b,
            times: cut(&self.times),
            norm: cut(&self.norm),
            energy: cut(&self.energy),
            left_pop_a: cut(&self.left_pop_a),
            left_pop_b: cut(&self.left_pop_b),
            p2_aa: cut(&self.p2_aa),
            p2_bb: cut(&self.p2_bb),
            p2_ab: cut(&self.p2_ab),
            entropy: cut(&self.entropy),
            frag_a: cut(&self.frag_a),
            frag_b: cut(&self.frag_b),
            schmidt: cut2(&self.schmidt),
            density_a: cut2(&self.density_a),
            density_b: cut2(&self.density_b),
        }
    }
}
