mod common;

use std::sync::Arc;

use common::system;
use fermix::dynamics::ground_state;
use fermix::fock::{FockBasis, ManyBodyState, Species};
use fermix::hamiltonian::SparseHamiltonian;
use fermix::observables::{left_population, rdm1};
use fermix::singleshot::{
    average_shots, binned_histogram, chi_square_test, expected_image, read_shots_csv, run_shots, write_shots_csv,
    ImagingOrder, ShotConfig,
};

fn correlated() -> (SparseHamiltonian, ManyBodyState) {
    let h = system(6, 2, 2, 1.2, 0.05);
    let gs = ground_state(&h, 1e-12).unwrap();
    (h, gs.state)
}

fn config(order: ImagingOrder, n_shots: usize, seed: u64) -> ShotConfig {
    ShotConfig {
        order,
        psf_width: 1.0,
        n_shots,
        seed,
        image_grid: fermix::dvr::GridSpec::default().nodes(),
    }
}

fn node_index(x: f64) -> usize {
    let grid = fermix::dvr::GridSpec::default();
    ((x - grid.x_min) / grid.spacing()).round() as usize - 1
}

#[test]
fn first_draw_follows_the_one_body_density() {
    let (h, state) = correlated();
    for order in [ImagingOrder::AB, ImagingOrder::BA] {
        let cfg = config(order, 1500, 11);
        let records = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &cfg, 2).unwrap();
        let first = order.species()[0];
        let basis = match first {
            Species::A => &h.orbitals_a,
            Species::B => &h.orbitals_b,
        };
        let density = rdm1(&state, first).density(basis);
        let drawn: Vec<usize> = records.iter().map(|r| node_index(r.positions(first)[0])).collect();
        let (counts, probs) = binned_histogram(&drawn, &density, 4);
        let (_, dof, p) = chi_square_test(&counts, &probs).unwrap();
        assert!(dof > 5);
        assert!(p > 0.01, "{order}: p = {p}");
    }
}

#[test]
fn mean_counts_converge_to_well_populations() {
    let (h, state) = correlated();
    let exact_a = left_population(&rdm1(&state, Species::A), &h.orbitals_a);
    let exact_b = left_population(&rdm1(&state, Species::B), &h.orbitals_b);
    let cfg = config(ImagingOrder::AB, 2000, 5);
    let grid = cfg.image_grid.clone();
    let records = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &cfg, 2).unwrap();
    let mut errors = Vec::new();
    for n in [125, 500, 2000] {
        let avg = average_shots(&records[..n], &grid, 1.0).unwrap();
        for (ours, exact, se) in [
            (avg.left_fraction_a, exact_a, avg.left_error_a),
            (avg.left_fraction_b, exact_b, avg.left_error_b),
        ] {
            assert!((ours - exact).abs() <= 4.0 * se + 2e-3, "n = {n}: {ours} vs {exact} (se {se})");
        }
        errors.push(avg.left_error_b);
    }
    // Standard errors shrink like 1/sqrt(N).
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn mean_image_approaches_blurred_density() {
    let (h, state) = correlated();
    let cfg = config(ImagingOrder::BA, 2000, 9);
    let grid = fermix::dvr::GridSpec::default();
    let records = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &cfg, 2).unwrap();
    let avg = average_shots(&records, &cfg.image_grid, 1.0).unwrap();
    for (species, basis) in [(Species::A, &h.orbitals_a), (Species::B, &h.orbitals_b)] {
        let density = rdm1(&state, species).density(basis);
        let expected = expected_image(&density, &grid, &cfg.image_grid, 1.0);
        let mean = avg.mean_image(species);
        let peak = expected.iter().cloned().fold(0.0, f64::max);
        let worst = mean
            .iter()
            .zip(&expected)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst < 0.1 * peak, "{species}: {worst} vs peak {peak}");
    }
}

#[test]
fn imaging_order_is_irrelevant_for_product_states() {
    let fa = Arc::new(FockBasis::new(6, 2).unwrap());
    let fb = Arc::new(FockBasis::new(6, 2).unwrap());
    // Orbitals 0 and 1 of each species: an even/odd pair spread over both wells.
    let state = ManyBodyState::product_config(fa, fb, 0b11, 0b101).unwrap();
    let h = system(6, 2, 2, 0.0, 0.0);
    let ab = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &config(ImagingOrder::AB, 1500, 1), 2).unwrap();
    let ba = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &config(ImagingOrder::BA, 1500, 2), 2).unwrap();
    let grid = fermix::dvr::GridSpec::default().nodes();
    let x = average_shots(&ab, &grid, 1.0).unwrap();
    let y = average_shots(&ba, &grid, 1.0).unwrap();
    for (p, q, sp, sq) in [
        (x.left_fraction_a, y.left_fraction_a, x.left_error_a, y.left_error_a),
        (x.left_fraction_b, y.left_fraction_b, x.left_error_b, y.left_error_b),
    ] {
        let se = (sp * sp + sq * sq).sqrt();
        assert!((p - q).abs() <= 4.0 * se, "{p} vs {q} (se {se})");
    }
}

#[test]
fn shots_are_reproducible_and_survive_a_csv_round_trip() {
    let (h, state) = correlated();
    let cfg = config(ImagingOrder::AB, 20, 77);
    let a = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &cfg, 1).unwrap();
    let b = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &cfg, 3).unwrap();
    assert_eq!(a, b);
    let other = run_shots(&state, &h.orbitals_a, &h.orbitals_b, &ShotConfig { seed: 78, ..cfg.clone() }, 1).unwrap();
    assert_ne!(a, other);
    for r in &a {
        assert_eq!(r.positions(Species::A).len(), 2);
        assert_eq!(r.positions(Species::B).len(), 2);
    }
    let mut buf = Vec::new();
    write_shots_csv(&a, &mut buf).unwrap();
    let back = read_shots_csv(buf.as_slice()).unwrap();
    assert_eq!(back, a);
}
