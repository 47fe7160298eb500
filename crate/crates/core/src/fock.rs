//! Occupation-number bases for spin-polarised fermions and the two-species
//! product-space state.
//!
//! A configuration is a bitmask over orbitals. The state `|n⟩` is
//! `c†_{p1} c†_{p2} … c†_{pN} |0⟩` with `p1 < p2 < … < pN`, i.e. creators are
//! applied to the vacuum in descending orbital order. With this convention
//! `c_k |n⟩` carries the sign `(-1)^(number of occupied orbitals below k)`.
//!
//! Configurations are kept in ascending integer order, which for fixed
//! popcount is colexicographic order, so the rank of a bitmask follows from
//! the combinatorial number system without any hashing.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Config = u64;

/// Default upper bound on the number of amplitudes held by one state.
pub const DEFAULT_CAPACITY: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    A,
    B,
}

impl Species {
    pub fn other(self) -> Self {
        match self {
            Species::A => Species::B,
            Species::B => Species::A,
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Species::A => f.write_str("A"),
            Species::B => f.write_str("B"),
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    usize::try_from(acc).unwrap_or(usize::MAX)
}

#[inline]
pub(crate) fn parity_below(config: Config, orbital: usize) -> f64 {
    let mask = (1u64 << orbital) - 1;
    if (config & mask).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One `a†_a a_c` matrix element: `⟨target| a†_a a_c |source⟩ = sign`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub target: u32,
    pub source: u32,
    pub sign: f64,
}

/// All nonzero matrix elements of `a†_a a_c` for every orbital pair, grouped
/// by pair index `a * m + c`.
#[derive(Debug)]
pub struct OneBodyTable {
    n_orbitals: usize,
    hops: Vec<Vec<Hop>>,
}

impl OneBodyTable {
    pub fn pair(&self, a: usize, c: usize) -> &[Hop] {
        &self.hops[a * self.n_orbitals + c]
    }

    pub fn total_len(&self) -> usize {
        self.hops.iter().map(Vec::len).sum()
    }
}

#[derive(Debug)]
pub struct FockBasis {
    n_orbitals: usize,
    n_particles: usize,
    configs: Vec<Config>,
    binom: Vec<Vec<usize>>,
    table: OnceLock<OneBodyTable>,
}

impl FockBasis {
    pub fn new(n_orbitals: usize, n_particles: usize) -> Result<Self> {
        Self::with_capacity(n_orbitals, n_particles, DEFAULT_CAPACITY)
    }

    pub fn with_capacity(n_orbitals: usize, n_particles: usize, capacity: usize) -> Result<Self> {
        if n_orbitals > 63 {
            return Err(Error::InvalidParameter(format!(
                "at most 63 orbitals fit in a bitmask, got {n_orbitals}"
            )));
        }
        if n_particles > n_orbitals {
            return Err(Error::InvalidParameter(format!(
                "{n_particles} fermions do not fit into {n_orbitals} orbitals"
            )));
        }
        let size = binomial(n_orbitals, n_particles);
        if size > capacity {
            return Err(Error::Capacity {
                what: format!("Fock basis C({n_orbitals},{n_particles})"),
                needed: size,
                budget: capacity,
            });
        }

        let mut configs = Vec::with_capacity(size);
        if n_particles == 0 {
            configs.push(0);
        } else {
            let limit: u64 = 1u64 << n_orbitals;
            let mut c: u64 = (1u64 << n_particles) - 1;
            while c < limit {
                configs.push(c);
                // Gosper's hack: next larger integer with the same popcount.
                let lowest = c & c.wrapping_neg();
                let ripple = c + lowest;
                c = (((ripple ^ c) >> 2) / lowest) | ripple;
            }
        }
        debug_assert_eq!(configs.len(), size);

        let binom = (0..=n_orbitals)
            .map(|n| (0..=n_particles + 1).map(|k| binomial(n, k)).collect())
            .collect();

        Ok(Self {
            n_orbitals,
            n_particles,
            configs,
            binom,
            table: OnceLock::new(),
        })
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_orbitals
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn config(&self, index: usize) -> Config {
        self.configs[index]
    }

    /// Ordinal of a configuration, or `None` if it is not in this basis.
    pub fn index_of(&self, config: Config) -> Option<usize> {
        if config.count_ones() as usize != self.n_particles
            || (self.n_orbitals < 64 && config >> self.n_orbitals != 0)
        {
            return None;
        }
        let mut rank = 0;
        let mut rest = config;
        let mut k = 0;
        while rest != 0 {
            let p = rest.trailing_zeros() as usize;
            rank += self.binom[p][k + 1];
            rest &= rest - 1;
            k += 1;
        }
        Some(rank)
    }

    pub fn occupied(config: Config) -> impl Iterator<Item = usize> {
        let mut rest = config;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let p = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(p)
            }
        })
    }

    /// Lazily built table of every `a†_a a_c` matrix element.
    pub fn one_body_table(&self) -> &OneBodyTable {
        self.table.get_or_init(|| self.build_table())
    }

    fn build_table(&self) -> OneBodyTable {
        let m = self.n_orbitals;
        let mut hops: Vec<Vec<Hop>> = vec![Vec::new(); m * m];
        for (j, &config) in self.configs.iter().enumerate() {
            for c in Self::occupied(config) {
                let removed = config & !(1u64 << c);
                let sign_c = parity_below(config, c);
                for a in 0..m {
                    if a != c && removed & (1u64 << a) != 0 {
                        continue;
                    }
                    let created = removed | (1u64 << a);
                    let sign = sign_c * parity_below(removed, a);
                    let i = self
                        .index_of(created)
                        .expect("single excitation stays inside the basis");
                    hops[a * m + c].push(Hop {
                        target: i as u32,
                        source: j as u32,
                        sign,
                    });
                }
            }
        }
        OneBodyTable { n_orbitals: m, hops }
    }
}

/// Row-major coefficient matrix over `basis_a × basis_b`.
#[derive(Debug, Clone)]
pub struct ManyBodyState {
    pub basis_a: Arc<FockBasis>,
    pub basis_b: Arc<FockBasis>,
    pub coeffs: Vec<Complex64>,
    pub time: f64,
}

impl ManyBodyState {
    pub fn zeros(basis_a: Arc<FockBasis>, basis_b: Arc<FockBasis>) -> Self {
        let dim = basis_a.len() * basis_b.len();
        Self {
            basis_a,
            basis_b,
            coeffs: vec![Complex64::new(0.0, 0.0); dim],
            time: 0.0,
        }
    }

    pub fn from_coeffs(
        basis_a: Arc<FockBasis>,
        basis_b: Arc<FockBasis>,
        coeffs: Vec<Complex64>,
    ) -> Result<Self> {
        let dim = basis_a.len() * basis_b.len();
        if coeffs.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a {}×{} product space",
                coeffs.len(),
                basis_a.len(),
                basis_b.len()
            )));
        }
        Ok(Self {
            basis_a,
            basis_b,
            coeffs,
            time: 0.0,
        })
    }

    /// Product of two single configurations.
    pub fn product_config(
        basis_a: Arc<FockBasis>,
        basis_b: Arc<FockBasis>,
        config_a: Config,
        config_b: Config,
    ) -> Result<Self> {
        let ia = basis_a
            .index_of(config_a)
            .ok_or_else(|| Error::InvalidParameter(format!("{config_a:#b} not in A basis")))?;
        let ib = basis_b
            .index_of(config_b)
            .ok_or_else(|| Error::InvalidParameter(format!("{config_b:#b} not in B basis")))?;
        let mut state = Self::zeros(basis_a, basis_b);
        let cols = state.dim_b();
        state.coeffs[ia * cols + ib] = Complex64::new(1.0, 0.0);
        Ok(state)
    }

    pub fn dim_a(&self) -> usize {
        self.basis_a.len()
    }

    pub fn dim_b(&self) -> usize {
        self.basis_b.len()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn basis(&self, species: Species) -> &Arc<FockBasis> {
        match species {
            Species::A => &self.basis_a,
            Species::B => &self.basis_b,
        }
    }

    pub fn n_particles(&self, species: Species) -> usize {
        self.basis(species).n_particles()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.coeffs.iter_mut().for_each(|c| *c *= inv);
        }
        n
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn as_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim_a(), self.dim_b(), &self.coeffs)
    }

    fn like(&self, coeffs: Vec<Complex64>) -> Self {
        Self {
            basis_a: Arc::clone(&self.basis_a),
            basis_b: Arc::clone(&self.basis_b),
            coeffs,
            time: self.time,
        }
    }
}

/// `out += Σ_ac h_ac a†_a a_c · input` on the given species.
pub(crate) fn accumulate_one_body(
    input: &[Complex64],
    out: &mut [Complex64],
    basis_a: &FockBasis,
    basis_b: &FockBasis,
    species: Species,
    h: &DMatrix<Complex64>,
) {
    let cols = basis_b.len();
    let rows = basis_a.len();
    let basis = match species {
        Species::A => basis_a,
        Species::B => basis_b,
    };
    let m = basis.n_orbitals();
    let table = basis.one_body_table();
    for a in 0..m {
        for c in 0..m {
            let h_ac = h[(a, c)];
            if h_ac == Complex64::new(0.0, 0.0) {
                continue;
            }
            for hop in table.pair(a, c) {
                let w = h_ac * hop.sign;
                let (t, s) = (hop.target as usize, hop.source as usize);
                match species {
                    Species::A => {
                        let (src, dst) = (s * cols, t * cols);
                        for k in 0..cols {
                            out[dst + k] += w * input[src + k];
                        }
                    }
                    Species::B => {
                        for r in 0..rows {
                            out[r * cols + t] += w * input[r * cols + s];
                        }
                    }
                }
            }
        }
    }
}

/// Applies `Σ_ab h_ab a†_a a_b` of one species. The result is not normalised.
pub fn apply_one_body(
    state: &ManyBodyState,
    species: Species,
    h: &DMatrix<Complex64>,
) -> Result<ManyBodyState> {
    let m = state.basis(species).n_orbitals();
    if h.nrows() != m || h.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "one-body matrix is {}×{}, species {species} has {m} orbitals",
            h.nrows(),
            h.ncols()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); state.dim()];
    accumulate_one_body(
        &state.coeffs,
        &mut out,
        &state.basis_a,
        &state.basis_b,
        species,
        h,
    );
    Ok(state.like(out))
}

/// Real-matrix convenience wrapper around [`apply_one_body`].
pub fn apply_one_body_real(
    state: &ManyBodyState,
    species: Species,
    h: &DMatrix<f64>,
) -> Result<ManyBodyState> {
    apply_one_body(state, species, &h.map(|x| Complex64::new(x, 0.0)))
}

/// Applies the field operator `Ψ̂(x') = Σ_a φ_a(x') c_a` of one species, with
/// `amplitudes[a] = φ_a(x')`. The result lives in the `(N-1)`-particle basis
/// of the same orbitals and is not normalised.
pub fn annihilate_at(
    state: &ManyBodyState,
    species: Species,
    amplitudes: &[f64],
) -> Result<ManyBodyState> {
    let basis = state.basis(species);
    if basis.n_particles() == 0 {
        return Err(Error::EmptySpecies(species));
    }
    if amplitudes.len() != basis.n_orbitals() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes for {} orbitals",
            amplitudes.len(),
            basis.n_orbitals()
        )));
    }
    let reduced = Arc::new(FockBasis::new(
        basis.n_orbitals(),
        basis.n_particles() - 1,
    )?);
    let (new_a, new_b) = match species {
        Species::A => (Arc::clone(&reduced), Arc::clone(&state.basis_b)),
        Species::B => (Arc::clone(&state.basis_a), Arc::clone(&reduced)),
    };
    let mut out = ManyBodyState::zeros(new_a, new_b);
    out.time = state.time;
    let old_cols = state.dim_b();
    let new_cols = out.dim_b();
    let rows = state.dim_a();

    for (j, &config) in basis.configs().iter().enumerate() {
        for a in FockBasis::occupied(config) {
            let amp = amplitudes[a];
            if amp == 0.0 {
                continue;
            }
            let i = reduced
                .index_of(config & !(1u64 << a))
                .expect("removing one particle stays inside the reduced basis");
            let w = amp * parity_below(config, a);
            match species {
                Species::A => {
                    for k in 0..old_cols {
                        out.coeffs[i * new_cols + k] += state.coeffs[j * old_cols + k] * w;
                    }
                }
                Species::B => {
                    for r in 0..rows {
                        out.coeffs[r * new_cols + i] += state.coeffs[r * old_cols + j] * w;
                    }
                }
            }
        }
    }
    Ok(out)
}
