//! Brute-force references. Nothing here calls into the library's orbital,
//! Fock or Hamiltonian code.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy)]
pub struct Setup {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub omega: f64,
    pub v0: f64,
    pub w: f64,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            x_min: -40.0,
            x_max: 40.0,
            n: 400,
            omega: 0.1,
            v0: 1.0,
            w: 1.0,
        }
    }
}

impl Setup {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n).map(|k| self.x_min + k as f64 * self.dx()).collect()
    }

    /// Kinetic energy built from the box eigenfunctions `sin(kπ(x-x_min)/L)`.
    pub fn kinetic(&self, mass: f64) -> DMatrix<f64> {
        let n = self.n;
        let big = (n + 1) as f64;
        let length = self.x_max - self.x_min;
        let s = DMatrix::from_fn(n, n, |j, k| {
            (2.0 / big).sqrt() * (PI * ((j + 1) * (k + 1)) as f64 / big).sin()
        });
        let e = DMatrix::from_diagonal(&DVector::from_fn(n, |k, _| {
            let kk = (k + 1) as f64 * PI / length;
            kk * kk / (2.0 * mass)
        }));
        &s * e * &s
    }

    pub fn potential(&self, mass: f64, tilt: f64) -> Vec<f64> {
        self.nodes()
            .iter()
            .map(|&x| {
                0.5 * mass * self.omega * self.omega * x * x
                    + self.v0 / (self.w * (2.0 * PI).sqrt()) * (-x * x / (2.0 * self.w * self.w)).exp()
                    + tilt * x
            })
            .collect()
    }
}

/// Lowest `m` eigenstates of one species on the grid, as columns of unit
/// DVR amplitudes, plus their energies and orbital-space operators.
pub struct Orbitals {
    pub coeffs: DMatrix<f64>,
    pub energies: Vec<f64>,
    pub position: DMatrix<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

pub fn orbitals(setup: &Setup, mass: f64, tilt: f64, m: usize) -> Orbitals {
    let mut h = setup.kinetic(mass);
    for (j, v) in setup.potential(mass, tilt).into_iter().enumerate() {
        h[(j, j)] += v;
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..setup.n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut coeffs = DMatrix::from_fn(setup.n, m, |j, a| eig.eigenvectors[(j, order[a])]);
    // Sign gauge: the first entry of maximal magnitude is positive.
    for mut col in coeffs.column_iter_mut() {
        let peak = col.amax();
        let pivot = col.iter().position(|x| x.abs() >= peak * (1.0 - 1e-8)).unwrap();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let energies = order[..m].iter().map(|&k| eig.eigenvalues[k]).collect();
    let nodes = setup.nodes();
    let weighted = |f: &dyn Fn(f64) -> f64| {
        DMatrix::from_fn(m, m, |a, b| {
            (0..setup.n)
                .map(|j| coeffs[(j, a)] * coeffs[(j, b)] * f(nodes[j]))
                .sum()
        })
    };
    let position = weighted(&|x| x);
    let left = weighted(&|x| if x < 0.0 { 1.0 } else { 0.0 });
    let right = weighted(&|x| if x > 0.0 { 1.0 } else { 0.0 });
    Orbitals {
        coeffs,
        energies,
        position,
        left,
        right,
    }
}

impl Orbitals {
    pub fn m(&self) -> usize {
        self.energies.len()
    }

    /// Orbital-space single-particle Hamiltonian at `tilt`, for orbitals
    /// computed at `basis_tilt`.
    pub fn one_body(&self, tilt: f64, basis_tilt: f64) -> DMatrix<f64> {
        let mut h = &self.position * (tilt - basis_tilt);
        for a in 0..self.m() {
            h[(a, a)] += self.energies[a];
        }
        h
    }
}

/// `g Σ_j u_a u_c v_b v_d / dx` indexed `[a][c][b][d]`.
pub fn contact(setup: &Setup, a: &Orbitals, b: &Orbitals, g: f64) -> Vec<f64> {
    let (ma, mb) = (a.m(), b.m());
    let mut w = vec![0.0; ma * ma * mb * mb];
    for j in 0..setup.n {
        for p in 0..ma {
            for q in 0..ma {
                let x = a.coeffs[(j, p)] * a.coeffs[(j, q)] * g / setup.dx();
                for r in 0..mb {
                    for s in 0..mb {
                        w[((p * ma + q) * mb + r) * mb + s] += x * b.coeffs[(j, r)] * b.coeffs[(j, s)];
                    }
                }
            }
        }
    }
    w
}

/// First-quantised model: `n_a` A fermions (slots `0..n_a`) and one B
/// particle, as a dense matrix on `m_a^n_a · m_b` product states restricted
/// to the antisymmetric sector of A.
pub struct DenseModel {
    pub n_a: usize,
    pub m_a: usize,
    pub m_b: usize,
    /// Isometry from the antisymmetric sector into the product space.
    pub embed: DMatrix<f64>,
    pub energies: Vec<f64>,
    /// Eigenvectors in the antisymmetric sector, as columns.
    pub vectors: DMatrix<f64>,
    pub left_a: DMatrix<f64>,
    pub right_a: DMatrix<f64>,
    pub left_b: DMatrix<f64>,
    pub right_b: DMatrix<f64>,
}

fn digits(mut idx: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for k in (0..len).rev() {
        out[k] = idx % base;
        idx /= base;
    }
    out
}

fn index_of(digits: &[usize], base: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * base + d)
}

/// Applies a one-body operator to a single A slot in the product space.
fn slot_operator(op: &DMatrix<f64>, slot: usize, n_a: usize, m_a: usize, m_b: usize) -> DMatrix<f64> {
    let dim = m_a.pow(n_a as u32) * m_b;
    let mut out = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let (a_idx, b) = (col / m_b, col % m_b);
        let occ = digits(a_idx, m_a, n_a);
        for new in 0..m_a {
            let x = op[(new, occ[slot])];
            if x != 0.0 {
                let mut o = occ.clone();
                o[slot] = new;
                out[(index_of(&o, m_a) * m_b + b, col)] += x;
            }
        }
    }
    out
}

fn b_operator(op: &DMatrix<f64>, n_a: usize, m_a: usize) -> DMatrix<f64> {
    let ia = DMatrix::<f64>::identity(m_a.pow(n_a as u32), m_a.pow(n_a as u32));
    ia.kronecker(op)
}

impl DenseModel {
    pub fn new(
        oa: &Orbitals,
        ob: &Orbitals,
        w: &[f64],
        n_a: usize,
        tilt: f64,
        basis_tilt: f64,
    ) -> Self {
        assert!(n_a == 1 || n_a == 2);
        let (m_a, m_b) = (oa.m(), ob.m());
        let dim_a = m_a.pow(n_a as u32);
        let dim = dim_a * m_b;
        let ha = oa.one_body(tilt, basis_tilt);
        let hb = ob.one_body(tilt, basis_tilt);

        let mut h = b_operator(&hb, n_a, m_a);
        for slot in 0..n_a {
            h += slot_operator(&ha, slot, n_a, m_a, m_b);
        }
        for col in 0..dim {
            let (a_idx, b) = (col / m_b, col % m_b);
            let occ = digits(a_idx, m_a, n_a);
            for slot in 0..n_a {
                for new_a in 0..m_a {
                    for new_b in 0..m_b {
                        let x = w[((new_a * m_a + occ[slot]) * m_b + new_b) * m_b + b];
                        let mut o = occ.clone();
                        o[slot] = new_a;
                        h[(index_of(&o, m_a) * m_b + new_b, col)] += x;
                    }
                }
            }
        }

        let sectors: Vec<Vec<usize>> = if n_a == 1 {
            (0..m_a).map(|a| vec![a]).collect()
        } else {
            (0..m_a)
                .flat_map(|a| (a + 1..m_a).map(move |c| vec![a, c]))
                .collect()
        };
        let mut embed = DMatrix::zeros(dim, sectors.len() * m_b);
        for (s, occ) in sectors.iter().enumerate() {
            for b in 0..m_b {
                let col = s * m_b + b;
                if n_a == 1 {
                    embed[(occ[0] * m_b + b, col)] = 1.0;
                } else {
                    let r = 1.0 / 2f64.sqrt();
                    embed[(index_of(&[occ[0], occ[1]], m_a) * m_b + b, col)] = r;
                    embed[(index_of(&[occ[1], occ[0]], m_a) * m_b + b, col)] = -r;
                }
            }
        }
        let reduced = embed.transpose() * &h * &embed;
        let eig = SymmetricEigen::new(reduced);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(order.len(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self {
            n_a,
            m_a,
            m_b,
            embed,
            energies,
            vectors,
            left_a: oa.left.clone(),
            right_a: oa.right.clone(),
            left_b: ob.left.clone(),
            right_b: ob.right.clone(),
        }
    }

    /// Eigenvector `k` in the product space.
    pub fn eigenstate(&self, k: usize) -> DVector<Complex64> {
        (&self.embed * self.vectors.column(k)).map(|x| Complex64::new(x, 0.0))
    }

    /// `exp(-i H' t) ψ` for a product-space state `ψ`, where `H'` is the
    /// model Hamiltonian.
    pub fn evolve(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let to_sector = self.embed.transpose().map(|x| Complex64::new(x, 0.0));
        let v = self.vectors.map(|x| Complex64::new(x, 0.0));
        let mut c = v.adjoint() * (to_sector * psi);
        for (k, e) in self.energies.iter().enumerate() {
            c[k] *= Complex64::from_polar(1.0, -e * t);
        }
        self.embed.map(|x| Complex64::new(x, 0.0)) * (v * c)
    }

    fn expect(&self, op: &DMatrix<f64>, psi: &DVector<Complex64>) -> f64 {
        let opc = op.map(|x| Complex64::new(x, 0.0));
        (psi.adjoint() * opc * psi)[(0, 0)].re
    }

    pub fn observables(&self, psi: &DVector<Complex64>) -> DenseObservables {
        let (n_a, m_a, m_b) = (self.n_a, self.m_a, self.m_b);
        let la: Vec<_> = (0..n_a).map(|s| slot_operator(&self.left_a, s, n_a, m_a, m_b)).collect();
        let ra: Vec<_> = (0..n_a).map(|s| slot_operator(&self.right_a, s, n_a, m_a, m_b)).collect();
        let lb = b_operator(&self.left_b, n_a, m_a);
        let rb = b_operator(&self.right_b, n_a, m_a);

        let left_a = la.iter().map(|op| self.expect(op, psi)).sum();
        let left_b = self.expect(&lb, psi);
        let p2_aa = (n_a == 2).then(|| self.expect(&(&la[0] * &la[1] + &ra[0] * &ra[1]), psi));
        let p2_ab = (0..n_a)
            .map(|s| self.expect(&(&la[s] * &lb + &ra[s] * &rb), psi))
            .sum::<f64>()
            / n_a as f64;

        let dim_a = m_a.pow(n_a as u32);
        let mat = DMatrix::from_fn(dim_a, m_b, |i, b| psi[i * m_b + b]);
        let gram = &mat * mat.adjoint();
        let mut schmidt: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|x| x.max(0.0)).collect();
        schmidt.sort_by(|a, b| b.total_cmp(a));
        let entropy = -schmidt.iter().filter(|&&l| l > 1e-300).map(|l| l * l.ln()).sum::<f64>();

        // ρ_A(p, q) = n_a Σ_rest ψ(p, rest) ψ*(q, rest), slot 0 singled out.
        let rest = dim_a / m_a * m_b;
        let rdm_a = DMatrix::from_fn(m_a, m_a, |p, q| {
            (0..rest)
                .map(|r| psi[p * rest + r] * psi[q * rest + r].conj())
                .sum::<Complex64>()
                * n_a as f64
        });
        let rdm_b = DMatrix::from_fn(m_b, m_b, |p, q| {
            (0..dim_a)
                .map(|i| psi[i * m_b + p] * psi[i * m_b + q].conj())
                .sum::<Complex64>()
        });
        let frag = |rdm: &DMatrix<Complex64>, n: usize| {
            let mut pops: Vec<f64> = rdm.clone().symmetric_eigenvalues().iter().cloned().collect();
            pops.sort_by(|a, b| b.total_cmp(a));
            n as f64 - pops[..n].iter().sum::<f64>()
        };
        DenseObservables {
            left_a,
            left_b,
            p2_aa,
            p2_ab,
            schmidt,
            entropy,
            frag_a: frag(&rdm_a, n_a),
            frag_b: frag(&rdm_b, 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseObservables {
    pub left_a: f64,
    pub left_b: f64,
    pub p2_aa: Option<f64>,
    pub p2_ab: f64,
    pub schmidt: Vec<f64>,
    pub entropy: f64,
    pub frag_a: f64,
    pub frag_b: f64,
}

/// Non-interacting quench: each species fills the `n` lowest levels of the
/// orbital-space Hamiltonian at `tilt_initial` and evolves under the one at
/// `tilt_final`. Returns `⟨ρ⟩_L` at each time.
pub fn free_left_population(
    orb: &Orbitals,
    n: usize,
    tilt_initial: f64,
    tilt_final: f64,
    basis_tilt: f64,
    times: &[f64],
) -> Vec<f64> {
    let initial = SymmetricEigen::new(orb.one_body(tilt_initial, basis_tilt));
    let mut order: Vec<usize> = (0..orb.m()).collect();
    order.sort_by(|&a, &b| initial.eigenvalues[a].total_cmp(&initial.eigenvalues[b]));
    let fin = SymmetricEigen::new(orb.one_body(tilt_final, basis_tilt));
    let vf = fin.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let left = orb.left.map(|x| Complex64::new(x, 0.0));
    times
        .iter()
        .map(|&t| {
            order[..n]
                .iter()
                .map(|&k| {
                    let u = initial.eigenvectors.column(k).map(|x| Complex64::new(x, 0.0));
                    let mut c = vf.adjoint() * u;
                    for (i, e) in fin.eigenvalues.iter().enumerate() {
                        c[i] *= Complex64::from_polar(1.0, -e * t);
                    }
                    let ut = &vf * c;
                    (ut.adjoint() * &left * &ut)[(0, 0)].re
                })
                .sum()
        })
        .collect()
}

/// Occupation-number configurations of `n` fermions in `m` orbitals,
/// ascending as integers.
pub fn configurations(m: usize, n: usize) -> Vec<u64> {
    (0u64..1 << m).filter(|c| c.count_ones() as usize == n).collect()
}

/// `c_k` on a configuration, with the sign of the occupied orbitals below `k`.
fn annihilate(config: u64, k: usize) -> Option<(u64, f64)> {
    if config & (1 << k) == 0 {
        return None;
    }
    let below = (config & ((1 << k) - 1)).count_ones();
    Some((config & !(1 << k), if below % 2 == 0 { 1.0 } else { -1.0 }))
}

fn create(config: u64, k: usize) -> Option<(u64, f64)> {
    if config & (1 << k) != 0 {
        return None;
    }
    let below = (config & ((1 << k) - 1)).count_ones();
    Some((config | (1 << k), if below % 2 == 0 { 1.0 } else { -1.0 }))
}

fn hop(config: u64, a: usize, c: usize) -> Option<(u64, f64)> {
    let (mid, s1) = annihilate(config, c)?;
    let (out, s2) = create(mid, a)?;
    Some((out, s1 * s2))
}

/// Dense second-quantised Hamiltonian over (A configuration, B configuration)
/// pairs, A-major.
pub fn second_quantised(
    oa: &Orbitals,
    ob: &Orbitals,
    w: &[f64],
    n_a: usize,
    n_b: usize,
    tilt: f64,
    basis_tilt: f64,
) -> DMatrix<f64> {
    let (ma, mb) = (oa.m(), ob.m());
    let ca = configurations(ma, n_a);
    let cb = configurations(mb, n_b);
    let pos = |list: &[u64], c: u64| list.iter().position(|&x| x == c).unwrap();
    let ha = oa.one_body(tilt, basis_tilt);
    let hb = ob.one_body(tilt, basis_tilt);
    let dim = ca.len() * cb.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (ia, &xa) in ca.iter().enumerate() {
        for (ib, &xb) in cb.iter().enumerate() {
            let col = ia * cb.len() + ib;
            for a in 0..ma {
                for c in 0..ma {
                    if let Some((ya, sa)) = hop(xa, a, c) {
                        let row = pos(&ca, ya) * cb.len() + ib;
                        h[(row, col)] += ha[(a, c)] * sa;
                        for b in 0..mb {
                            for d in 0..mb {
                                if let Some((yb, sb)) = hop(xb, b, d) {
                                    let row = pos(&ca, ya) * cb.len() + pos(&cb, yb);
                                    h[(row, col)] += w[((a * ma + c) * mb + b) * mb + d] * sa * sb;
                                }
                            }
                        }
                    }
                }
            }
            for b in 0..mb {
                for d in 0..mb {
                    if let Some((yb, sb)) = hop(xb, b, d) {
                        let row = ia * cb.len() + pos(&cb, yb);
                        h[(row, col)] += hb[(b, d)] * sb;
                    }
                }
            }
        }
    }
    h
}
