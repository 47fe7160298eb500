#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use fermix::dvr::{solve_single_particle, GridSpec, OrbitalBasis, SpeciesParams, TrapParams};
use fermix::fock::{FockBasis, ManyBodyState, Species};
use fermix::hamiltonian::{assemble, build_interaction, LinearOperator, SparseHamiltonian};
use fermix::observables::{left_population, rdm1};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Library Hamiltonian of the default trap with orbitals of the symmetric
/// (`d = 0`) single-particle problem.
pub fn system(m: usize, n_a: usize, n_b: usize, g: f64, tilt: f64) -> SparseHamiltonian {
    system_with(m, n_a, n_b, g, tilt, 1.0)
}

pub fn system_with(m: usize, n_a: usize, n_b: usize, g: f64, tilt: f64, v0: f64) -> SparseHamiltonian {
    let grid = GridSpec::default();
    let trap = TrapParams::new(v0, 1.0, 0.0).unwrap();
    let oa = Arc::new(solve_single_particle(&grid, &SpeciesParams::light(), &trap, m).unwrap());
    let ob = Arc::new(solve_single_particle(&grid, &SpeciesParams::heavy(), &trap, m).unwrap());
    let fa = Arc::new(FockBasis::new(m, n_a).unwrap());
    let fb = Arc::new(FockBasis::new(m, n_b).unwrap());
    let w = Arc::new(build_interaction(&oa, &ob, g).unwrap());
    assemble(oa, ob, fa, fb, w, tilt).unwrap()
}

/// Dense real matrix of a small operator, column by column.
pub fn dense(op: &impl LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        op.apply_real(&e, &mut col);
        out.column_mut(k).copy_from_slice(&col);
        e[k] = 0.0;
    }
    out
}

pub fn left_pops(state: &ManyBodyState, oa: &OrbitalBasis, ob: &OrbitalBasis) -> (f64, f64) {
    (
        left_population(&rdm1(state, Species::A), oa),
        left_population(&rdm1(state, Species::B), ob),
    )
}

/// `-H`, for running a propagation backwards.
pub struct Reversed<'a, O>(pub &'a O);

impl<O: LinearOperator> LinearOperator for Reversed<'_, O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply_complex(&self, input: &[Complex64], out: &mut [Complex64]) {
        self.0.apply_complex(input, out);
        out.iter_mut().for_each(|x| *x = -*x);
    }

    fn apply_real(&self, input: &[f64], out: &mut [f64]) {
        self.0.apply_real(input, out);
        out.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest deviation of the library observables of `state` from a dense
/// reference.
pub fn max_deviation(state: &ManyBodyState, h: &SparseHamiltonian, reference: &oracle::DenseObservables) -> f64 {
    use fermix::observables::{entropy, fragmentation, pair_probability, schmidt_spectrum, Pair};
    let (oa, ob) = (&h.orbitals_a, &h.orbitals_b);
    let (la, lb) = left_pops(state, oa, ob);
    let spec = schmidt_spectrum(state);
    let mut diffs = vec![
        la - reference.left_a,
        lb - reference.left_b,
        pair_probability(state, Pair::AB, oa, ob).unwrap() - reference.p2_ab,
        entropy(&spec) - reference.entropy,
        fragmentation(&rdm1(state, Species::A)) - reference.frag_a,
        fragmentation(&rdm1(state, Species::B)) - reference.frag_b,
    ];
    if let Some(p) = reference.p2_aa {
        diffs.push(pair_probability(state, Pair::AA, oa, ob).unwrap() - p);
    }
    for (k, &lam) in reference.schmidt.iter().enumerate() {
        diffs.push(spec.weights.get(k).copied().unwrap_or(0.0) - lam);
    }
    diffs.iter().fold(0.0, |m, d| m.max(d.abs()))
}
