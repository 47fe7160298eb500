//! Matrix-free two-species Hamiltonian in the product Fock space.
//!
//! The operator is
//!
//! ```text
//! H = Σ_ac hᴬ_ac a†_a a_c + Σ_bd hᴮ_bd b†_b b_d + Σ W_ac,bd a†_a a_c b†_b b_d
//! ```
//!
//! with `h = diag(ε) + (d - d₀) X` in the orbital basis (`d₀` is the tilt the
//! orbitals were solved at) and `W` the contact interaction integrated on the
//! DVR grid. There is no intraspecies interaction.
//!
//! The interaction is applied by contracting `W` with the B-species hop table
//! once per unordered A orbital pair, giving one sparse B-space matrix `K_ac`
//! per pair. A matvec then costs one sparse row product per A hop.

use std::ops::{Add, AddAssign, Mul};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dvr::OrbitalBasis;
use crate::error::{Error, Result};
use crate::fock::{FockBasis, ManyBodyState, DEFAULT_CAPACITY};

/// Relative cutoff below which interaction elements are dropped.
pub const INTERACTION_SCREEN: f64 = 1e-14;

/// Scalars the operator kernels run on: real vectors for the ground-state
/// solver, complex ones for propagation.
pub trait Amplitude:
    Copy + Default + AddAssign + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn dot(a: &[Self], b: &[Self]) -> Complex64;
}

impl Amplitude for f64 {
    fn dot(a: &[f64], b: &[f64]) -> Complex64 {
        Complex64::new(a.iter().zip(b).map(|(x, y)| x * y).sum(), 0.0)
    }
}

impl Amplitude for Complex64 {
    fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }
}

/// A Hermitian operator given by its action on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply_complex(&self, input: &[Complex64], out: &mut [Complex64]);
    fn apply_real(&self, input: &[f64], out: &mut [f64]);
}

/// `W_ac,bd = g Σ_j φᴬ_a(x_j) φᴬ_c(x_j) φᴮ_b(x_j) φᴮ_d(x_j) dx`.
#[derive(Debug, Clone)]
pub struct InteractionTensor {
    pub coupling: f64,
    pub m_a: usize,
    pub m_b: usize,
    elements: Vec<f64>,
}

impl InteractionTensor {
    #[inline]
    pub fn get(&self, a: usize, c: usize, b: usize, d: usize) -> f64 {
        self.elements[((a * self.m_a + c) * self.m_b + b) * self.m_b + d]
    }

    pub fn max_abs(&self) -> f64 {
        self.elements.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn elements(&self) -> &[f64] {
        &self.elements
    }
}

pub fn build_interaction(
    basis_a: &OrbitalBasis,
    basis_b: &OrbitalBasis,
    coupling: f64,
) -> Result<InteractionTensor> {
    if basis_a.grid != basis_b.grid {
        return Err(Error::GridMismatch);
    }
    let (m_a, m_b) = (basis_a.n_orbitals, basis_b.n_orbitals);
    let mut elements = vec![0.0; m_a * m_a * m_b * m_b];
    if coupling != 0.0 {
        let weight = coupling / basis_a.grid.spacing();
        let mut pa = vec![0.0; m_a * m_a];
        let mut pb = vec![0.0; m_b * m_b];
        for j in 0..basis_a.n_points() {
            for a in 0..m_a {
                for c in 0..m_a {
                    pa[a * m_a + c] = basis_a.orbitals[(a, j)] * basis_a.orbitals[(c, j)];
                }
            }
            for b in 0..m_b {
                for d in 0..m_b {
                    pb[b * m_b + d] = basis_b.orbitals[(b, j)] * basis_b.orbitals[(d, j)];
                }
            }
            for (ac, &x) in pa.iter().enumerate() {
                let row = &mut elements[ac * m_b * m_b..(ac + 1) * m_b * m_b];
                let scaled = x * weight;
                for (dst, &y) in row.iter_mut().zip(&pb) {
                    *dst += scaled * y;
                }
            }
        }
    }
    Ok(InteractionTensor {
        coupling,
        m_a,
        m_b,
        elements,
    })
}

#[derive(Debug, Clone, Default)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n_rows: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    #[inline]
    fn row_dot<T: Amplitude>(&self, r: usize, vals: &[f64], x: &[T]) -> T {
        let (start, end) = (self.row_ptr[r], self.row_ptr[r + 1]);
        let mut acc = T::default();
        for (&c, &v) in self.cols[start..end].iter().zip(&vals[start..end]) {
            acc += x[c as usize] * v;
        }
        acc
    }
}

/// `K_ac` blocks, one per unordered A pair. Pairs whose screened blocks
/// share a sparsity pattern share one `Csr` structure.
#[derive(Debug)]
struct CouplingBlocks {
    patterns: Vec<Csr>,
    /// `(a, c, pattern index)` with `a ≤ c`.
    pairs: Vec<(usize, usize, usize)>,
    values: Vec<Vec<f64>>,
}

impl CouplingBlocks {
    fn build(fock_b: &FockBasis, tensor: &InteractionTensor) -> Self {
        let m_b = fock_b.n_orbitals();
        let n_rows = fock_b.len();
        let table = fock_b.one_body_table();
        // (target, source, b, d, sign) for every B hop, sorted by position.
        let mut hops = Vec::with_capacity(table.total_len());
        for b in 0..m_b {
            for d in 0..m_b {
                for hop in table.pair(b, d) {
                    hops.push((hop.target, hop.source, b as u16, d as u16, hop.sign));
                }
            }
        }
        hops.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut positions: Vec<(u32, u32)> = Vec::new();
        let mut slot_of_hop = Vec::with_capacity(hops.len());
        for &(t, s, ..) in &hops {
            if positions.last() != Some(&(t, s)) {
                positions.push((t, s));
            }
            slot_of_hop.push(positions.len() - 1);
        }
        let nnz = positions.len();

        let cutoff = INTERACTION_SCREEN * tensor.max_abs();
        let m_a = tensor.m_a;
        let mut patterns = Vec::new();
        let mut pattern_of_mask: std::collections::HashMap<Vec<bool>, usize> =
            std::collections::HashMap::new();
        let mut pairs = Vec::new();
        let mut values = Vec::new();
        for a in 0..m_a {
            for c in a..m_a {
                let mut v = vec![0.0; nnz];
                let mut used = vec![false; nnz];
                for (hop, &slot) in hops.iter().zip(&slot_of_hop) {
                    let w = tensor.get(a, c, hop.2 as usize, hop.3 as usize);
                    if w.abs() > cutoff {
                        v[slot] += hop.4 * w;
                        used[slot] = true;
                    }
                }
                if !used.iter().any(|&u| u) {
                    continue;
                }
                let compact: Vec<f64> = v
                    .iter()
                    .zip(&used)
                    .filter(|(_, &u)| u)
                    .map(|(&x, _)| x)
                    .collect();
                let next = patterns.len();
                let index = *pattern_of_mask.entry(used.clone()).or_insert(next);
                if index == next {
                    let mut row_ptr = vec![0usize; n_rows + 1];
                    let mut cols = Vec::with_capacity(compact.len());
                    for (&(t, src), _) in positions.iter().zip(&used).filter(|(_, &u)| u) {
                        row_ptr[t as usize + 1] += 1;
                        cols.push(src);
                    }
                    for r in 0..n_rows {
                        row_ptr[r + 1] += row_ptr[r];
                    }
                    patterns.push(Csr {
                        row_ptr,
                        cols,
                        vals: Vec::new(),
                    });
                }
                pairs.push((a, c, index));
                values.push(compact);
            }
        }
        Self {
            patterns,
            pairs,
            values,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseHamiltonian {
    pub orbitals_a: Arc<OrbitalBasis>,
    pub orbitals_b: Arc<OrbitalBasis>,
    pub fock_a: Arc<FockBasis>,
    pub fock_b: Arc<FockBasis>,
    pub interaction: Arc<InteractionTensor>,
    tilt: f64,
    one_body_a: Csr,
    one_body_b: Csr,
    coupling: Arc<CouplingBlocks>,
}

fn one_body_matrix(orbitals: &OrbitalBasis, tilt: f64) -> DMatrix<f64> {
    let shift = tilt - orbitals.trap.tilt;
    let mut h = &orbitals.position_matrix * shift;
    for a in 0..orbitals.n_orbitals {
        h[(a, a)] += orbitals.energies[a];
    }
    h
}

fn one_body_csr(fock: &FockBasis, h: &DMatrix<f64>) -> Csr {
    let m = fock.n_orbitals();
    let table = fock.one_body_table();
    let mut triplets = Vec::with_capacity(table.total_len());
    for a in 0..m {
        for c in 0..m {
            let h_ac = h[(a, c)];
            if h_ac == 0.0 {
                continue;
            }
            for hop in table.pair(a, c) {
                triplets.push((hop.target, hop.source, h_ac * hop.sign));
            }
        }
    }
    Csr::from_triplets(fock.len(), triplets)
}

pub fn assemble(
    orbitals_a: Arc<OrbitalBasis>,
    orbitals_b: Arc<OrbitalBasis>,
    fock_a: Arc<FockBasis>,
    fock_b: Arc<FockBasis>,
    interaction: Arc<InteractionTensor>,
    tilt: f64,
) -> Result<SparseHamiltonian> {
    if fock_a.n_orbitals() != orbitals_a.n_orbitals
        || fock_b.n_orbitals() != orbitals_b.n_orbitals
        || interaction.m_a != orbitals_a.n_orbitals
        || interaction.m_b != orbitals_b.n_orbitals
    {
        return Err(Error::DimensionMismatch(format!(
            "orbitals ({}, {}), Fock bases ({}, {}), interaction ({}, {})",
            orbitals_a.n_orbitals,
            orbitals_b.n_orbitals,
            fock_a.n_orbitals(),
            fock_b.n_orbitals(),
            interaction.m_a,
            interaction.m_b
        )));
    }
    if orbitals_a.grid != orbitals_b.grid {
        return Err(Error::GridMismatch);
    }
    let dim = fock_a.len().saturating_mul(fock_b.len());
    if dim > DEFAULT_CAPACITY {
        return Err(Error::Capacity {
            what: "product space".into(),
            needed: dim,
            budget: DEFAULT_CAPACITY,
        });
    }
    let one_body_a = one_body_csr(&fock_a, &one_body_matrix(&orbitals_a, tilt));
    let one_body_b = one_body_csr(&fock_b, &one_body_matrix(&orbitals_b, tilt));
    let coupling = Arc::new(CouplingBlocks::build(&fock_b, &interaction));
    let h = SparseHamiltonian {
        orbitals_a,
        orbitals_b,
        fock_a,
        fock_b,
        interaction,
        tilt,
        one_body_a,
        one_body_b,
        coupling,
    };
    let asym = h.hermiticity_defect(2, 0x5eed);
    if asym > 1e-12 {
        return Err(Error::NonHermitian(asym));
    }
    Ok(h)
}

/// Same operator with the tilt term replaced; interaction blocks are shared.
pub fn requench(h: &SparseHamiltonian, tilt: f64) -> SparseHamiltonian {
    let mut out = h.clone();
    out.tilt = tilt;
    out.one_body_a = one_body_csr(&h.fock_a, &one_body_matrix(&h.orbitals_a, tilt));
    out.one_body_b = one_body_csr(&h.fock_b, &one_body_matrix(&h.orbitals_b, tilt));
    out
}

impl SparseHamiltonian {
    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    pub fn dim_a(&self) -> usize {
        self.fock_a.len()
    }

    pub fn dim_b(&self) -> usize {
        self.fock_b.len()
    }

    pub fn one_body_matrix_a(&self) -> DMatrix<f64> {
        one_body_matrix(&self.orbitals_a, self.tilt)
    }

    pub fn one_body_matrix_b(&self) -> DMatrix<f64> {
        one_body_matrix(&self.orbitals_b, self.tilt)
    }

    pub fn apply<T: Amplitude>(&self, input: &[T], out: &mut [T]) {
        let cols = self.dim_b();
        let rows = self.dim_a();
        debug_assert_eq!(input.len(), rows * cols);
        debug_assert_eq!(out.len(), rows * cols);
        out.iter_mut().for_each(|x| *x = T::default());

        let ha = &self.one_body_a;
        for i in 0..rows {
            for k in ha.row_ptr[i]..ha.row_ptr[i + 1] {
                let (j, v) = (ha.cols[k] as usize, ha.vals[k]);
                let (src, dst) = (j * cols, i * cols);
                for q in 0..cols {
                    let x = input[src + q] * v;
                    out[dst + q] += x;
                }
            }
        }

        let hb = &self.one_body_b;
        for r in 0..rows {
            let row_in = &input[r * cols..(r + 1) * cols];
            let row_out = &mut out[r * cols..(r + 1) * cols];
            for (i, o) in row_out.iter_mut().enumerate() {
                *o += hb.row_dot(i, &hb.vals, row_in);
            }
        }

        let blocks = &*self.coupling;
        let table = self.fock_a.one_body_table();
        for (&(a, c, p), k_vals) in blocks.pairs.iter().zip(&blocks.values) {
            let pattern = &blocks.patterns[p];
            for hop in table.pair(a, c) {
                let (i, j) = (hop.target as usize, hop.source as usize);
                Self::coupled_row(pattern, k_vals, hop.sign, input, out, j, i, cols);
                if a != c {
                    Self::coupled_row(pattern, k_vals, hop.sign, input, out, i, j, cols);
                }
            }
        }
    }

    /// `out[dst, :] += sign · K · input[src, :]`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn coupled_row<T: Amplitude>(
        pattern: &Csr,
        k_vals: &[f64],
        sign: f64,
        input: &[T],
        out: &mut [T],
        src: usize,
        dst: usize,
        cols: usize,
    ) {
        let row_in = &input[src * cols..(src + 1) * cols];
        let row_out = &mut out[dst * cols..(dst + 1) * cols];
        for (r, o) in row_out.iter_mut().enumerate() {
            let acc = pattern.row_dot(r, k_vals, row_in);
            *o += acc * sign;
        }
    }

    pub fn apply_state(&self, state: &ManyBodyState) -> ManyBodyState {
        let mut out = state.clone();
        self.apply(&state.coeffs, &mut out.coeffs);
        out
    }

    /// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩`, real part (imaginary part is rounding noise).
    pub fn expectation(&self, state: &ManyBodyState) -> f64 {
        let h_psi = self.apply_state(state);
        state.inner(&h_psi).re / state.inner(state).re
    }

    /// Largest relative `|⟨u|Hv⟩ - ⟨Hu|v⟩|` over random complex pairs.
    pub fn hermiticity_defect(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim();
        let mut worst = 0.0f64;
        let mut random = || -> Vec<Complex64> {
            (0..dim)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect()
        };
        for _ in 0..pairs {
            let u = random();
            let v = random();
            let mut hu = vec![Complex64::default(); dim];
            let mut hv = vec![Complex64::default(); dim];
            self.apply(&u, &mut hu);
            self.apply(&v, &mut hv);
            let lhs = Complex64::dot(&u, &hv);
            let rhs = Complex64::dot(&hu, &v);
            let scale = lhs.norm().max(rhs.norm()).max(1e-300);
            worst = worst.max((lhs - rhs).norm() / scale);
        }
        worst
    }
}

impl LinearOperator for SparseHamiltonian {
    fn dim(&self) -> usize {
        self.dim_a() * self.dim_b()
    }

    fn apply_complex(&self, input: &[Complex64], out: &mut [Complex64]) {
        self.apply(input, out);
    }

    fn apply_real(&self, input: &[f64], out: &mut [f64]) {
        self.apply(input, out);
    }
}

/// Many-body mirror parity `Π = Π_a p_a^{n_a}` over both species, built from
/// the orbital parity signs. `None` if the grid is not mirror symmetric.
pub fn apply_parity(
    state: &ManyBodyState,
    orbitals_a: &OrbitalBasis,
    orbitals_b: &OrbitalBasis,
) -> Option<ManyBodyState> {
    let pa = orbitals_a.parity_signs()?;
    let pb = orbitals_b.parity_signs()?;
    let sign_of = |config: u64, signs: &[f64]| -> f64 {
        FockBasis::occupied(config).map(|a| signs[a]).product()
    };
    let sa: Vec<f64> = state
        .basis_a
        .configs()
        .iter()
        .map(|&c| sign_of(c, &pa))
        .collect();
    let sb: Vec<f64> = state
        .basis_b
        .configs()
        .iter()
        .map(|&c| sign_of(c, &pb))
        .collect();
    let mut out = state.clone();
    let cols = state.dim_b();
    for (i, &x) in sa.iter().enumerate() {
        for (k, &y) in sb.iter().enumerate() {
            out.coeffs[i * cols + k] *= x * y;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dvr::{solve_single_particle, GridSpec, SpeciesParams, TrapParams};

    fn setup(m: usize, na: usize, nb: usize, g: f64) -> SparseHamiltonian {
        let grid = GridSpec::default();
        let trap = TrapParams::new(1.0, 1.0, 0.0).unwrap();
        let oa = Arc::new(solve_single_particle(&grid, &SpeciesParams::light(), &trap, m).unwrap());
        let ob = Arc::new(solve_single_particle(&grid, &SpeciesParams::heavy(), &trap, m).unwrap());
        let w = Arc::new(build_interaction(&oa, &ob, g).unwrap());
        let fa = Arc::new(FockBasis::new(m, na).unwrap());
        let fb = Arc::new(FockBasis::new(m, nb).unwrap());
        assemble(oa, ob, fa, fb, w, 0.0).unwrap()
    }

    fn random_state(h: &SparseHamiltonian, seed: u64) -> ManyBodyState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..h.dim())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut s =
            ManyBodyState::from_coeffs(h.fock_a.clone(), h.fock_b.clone(), coeffs).unwrap();
        s.normalize();
        s
    }

    #[test]
    fn zero_coupling_gives_zero_tensor() {
        let h = setup(4, 1, 1, 0.0);
        assert!(h.interaction.elements().iter().all(|&x| x == 0.0));
        assert!(h.coupling.pairs.is_empty());
    }

    #[test]
    fn tensor_is_linear_symmetric_and_positive_on_diagonal() {
        let grid = GridSpec::default();
        let trap = TrapParams::new(1.0, 1.0, 0.0).unwrap();
        let oa = solve_single_particle(&grid, &SpeciesParams::light(), &trap, 5).unwrap();
        let ob = solve_single_particle(&grid, &SpeciesParams::heavy(), &trap, 5).unwrap();
        let w1 = build_interaction(&oa, &ob, 0.7).unwrap();
        let w2 = build_interaction(&oa, &ob, 1.4).unwrap();
        assert!(w1.get(0, 0, 0, 0) > 0.0);
        for (x, y) in w1.elements().iter().zip(w2.elements()) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1e-300) * 4.0);
        }
        for a in 0..5 {
            for c in 0..5 {
                for b in 0..5 {
                    for d in 0..5 {
                        assert_eq!(w1.get(a, c, b, d), w1.get(c, a, d, b));
                        assert_eq!(w1.get(a, c, b, d), w1.get(c, a, b, d));
                    }
                }
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let trap = TrapParams::new(1.0, 1.0, 0.0).unwrap();
        let oa = solve_single_particle(&GridSpec::default(), &SpeciesParams::light(), &trap, 3)
            .unwrap();
        let other = GridSpec::new(-30.0, 30.0, 300).unwrap();
        let ob = solve_single_particle(&other, &SpeciesParams::heavy(), &trap, 3).unwrap();
        assert!(matches!(
            build_interaction(&oa, &ob, 1.0),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn hermitian_on_random_pairs() {
        let h = setup(8, 3, 2, 1.5);
        assert!(h.hermiticity_defect(20, 99) <= 1e-12);
        let s = random_state(&h, 5);
        let hs = h.apply_state(&s);
        assert!(s.inner(&hs).im.abs() < 1e-12);
    }

    #[test]
    fn requench_to_same_tilt_is_identical() {
        let h = setup(6, 2, 2, 1.0);
        let h2 = requench(&h, h.tilt());
        let s = random_state(&h, 3);
        let x = h.apply_state(&s);
        let y = h2.apply_state(&s);
        for (p, q) in x.coeffs.iter().zip(&y.coeffs) {
            assert!((p - q).norm() < 1e-14);
        }
    }

    #[test]
    fn tilt_shifts_energy_linearly() {
        let h0 = setup(6, 2, 2, 1.0);
        let d = 0.13;
        let hd = requench(&h0, d);
        let s = random_state(&h0, 8);
        let xa = apply_one_body_x(&s, &h0.orbitals_a.position_matrix, crate::fock::Species::A);
        let xb = apply_one_body_x(&s, &h0.orbitals_b.position_matrix, crate::fock::Species::B);
        let x_total = s.inner(&xa).re + s.inner(&xb).re;
        let diff = hd.expectation(&s) - h0.expectation(&s);
        assert!((diff - d * x_total).abs() < 1e-12);
    }

    fn apply_one_body_x(
        s: &ManyBodyState,
        x: &DMatrix<f64>,
        species: crate::fock::Species,
    ) -> ManyBodyState {
        crate::fock::apply_one_body_real(s, species, x).unwrap()
    }

    #[test]
    fn commutes_with_parity_at_zero_tilt() {
        let h = setup(8, 2, 2, 2.0);
        let s = random_state(&h, 21);
        let hp = h.apply_state(&apply_parity(&s, &h.orbitals_a, &h.orbitals_b).unwrap());
        let ph = apply_parity(&h.apply_state(&s), &h.orbitals_a, &h.orbitals_b).unwrap();
        for (p, q) in hp.coeffs.iter().zip(&ph.coeffs) {
            assert!((p - q).norm() < 1e-10);
        }
        let tilted = requench(&h, 0.2);
        let hp = tilted.apply_state(&apply_parity(&s, &h.orbitals_a, &h.orbitals_b).unwrap());
        let ph = apply_parity(&tilted.apply_state(&s), &h.orbitals_a, &h.orbitals_b).unwrap();
        let defect: f64 = hp
            .coeffs
            .iter()
            .zip(&ph.coeffs)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(defect > 1e-3);
    }

    #[test]
    fn real_and_complex_kernels_agree() {
        let h = setup(6, 2, 3, 0.9);
        let s = random_state(&h, 4);
        let re: Vec<f64> = s.coeffs.iter().map(|c| c.re).collect();
        let mut out_re = vec![0.0; h.dim()];
        h.apply_real(&re, &mut out_re);
        let as_c: Vec<Complex64> = re.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut out_c = vec![Complex64::default(); h.dim()];
        h.apply_complex(&as_c, &mut out_c);
        for (x, y) in out_re.iter().zip(&out_c) {
            assert!((x - y.re).abs() < 1e-14 && y.im == 0.0);
        }
    }
}
