//! Simulated in-situ absorption images: positions are drawn one particle at a
//! time from the conditional one-body density, the drawn particle is removed
//! with the field operator, and the result is blurred by a Gaussian PSF.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dvr::{GridSpec, OrbitalBasis};
use crate::error::{Error, Result};
use crate::fock::{annihilate_at, ManyBodyState, Species};
use crate::observables::rdm1;

/// Draws that leave a state with norm below this are retried.
pub const RENORM_FLOOR: f64 = 1e-12;
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImagingOrder {
    #[default]
    AB,
    BA,
}

impl ImagingOrder {
    pub fn species(self) -> [Species; 2] {
        match self {
            ImagingOrder::AB => [Species::A, Species::B],
            ImagingOrder::BA => [Species::B, Species::A],
        }
    }
}

impl std::str::FromStr for ImagingOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AB" => Ok(ImagingOrder::AB),
            "BA" => Ok(ImagingOrder::BA),
            other => Err(Error::InvalidParameter(format!(
                "imaging order must be AB or BA, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for ImagingOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImagingOrder::AB => "AB",
            ImagingOrder::BA => "BA",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub order: ImagingOrder,
    pub psf_width: f64,
    pub n_shots: usize,
    pub seed: u64,
    pub image_grid: Vec<f64>,
}

impl Default for ShotConfig {
    fn default() -> Self {
        Self {
            order: ImagingOrder::AB,
            psf_width: 1.0,
            n_shots: 100,
            seed: 0,
            image_grid: GridSpec::default().nodes(),
        }
    }
}

impl ShotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.psf_width > 0.0 && self.psf_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "psf_width must be positive, got {}",
                self.psf_width
            )));
        }
        if self.n_shots == 0 {
            return Err(Error::InvalidParameter("n_shots must be at least 1".into()));
        }
        if self.image_grid.len() < 2 {
            return Err(Error::InvalidParameter(
                "image grid needs at least two points".into(),
            ));
        }
        Ok(())
    }
}

/// Integral of one unit-height Gaussian spot, used to turn the summed image
/// back into a particle count.
pub fn psf_area(psf_width: f64) -> f64 {
    psf_width * (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub time: f64,
    pub shot: usize,
    pub order: ImagingOrder,
    pub positions_first: Vec<f64>,
    pub positions_second: Vec<f64>,
    pub image_first: Vec<f64>,
    pub image_second: Vec<f64>,
}

impl ShotRecord {
    pub fn positions(&self, species: Species) -> &[f64] {
        if self.order.species()[0] == species {
            &self.positions_first
        } else {
            &self.positions_second
        }
    }

    pub fn image(&self, species: Species) -> &[f64] {
        if self.order.species()[0] == species {
            &self.image_first
        } else {
            &self.image_second
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotAverage {
    pub time: f64,
    pub n_shots: usize,
    pub image_grid: Vec<f64>,
    pub mean_image_a: Vec<f64>,
    pub mean_image_b: Vec<f64>,
    pub left_fraction_a: f64,
    pub left_fraction_b: f64,
    /// Standard error of the left fraction over the shots.
    pub left_error_a: f64,
    pub left_error_b: f64,
}

impl ShotAverage {
    pub fn left_fraction(&self, species: Species) -> f64 {
        match species {
            Species::A => self.left_fraction_a,
            Species::B => self.left_fraction_b,
        }
    }

    pub fn left_error(&self, species: Species) -> f64 {
        match species {
            Species::A => self.left_error_a,
            Species::B => self.left_error_b,
        }
    }

    pub fn mean_image(&self, species: Species) -> &[f64] {
        match species {
            Species::A => &self.mean_image_a,
            Species::B => &self.mean_image_b,
        }
    }
}

/// Rejection sampling of a grid node: propose a node uniformly and accept it
/// when `ρ(x) > q` with `q` uniform on `[0, max ρ]`. Accepted nodes follow
/// `ρ / Σρ`.
pub fn draw_node<R: Rng + ?Sized>(density: &[f64], rng: &mut R) -> Result<usize> {
    let max = density.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::ZeroDensity);
    }
    loop {
        let j = rng.random_range(0..density.len());
        let q = rng.random::<f64>() * max;
        if density[j] > q {
            return Ok(j);
        }
    }
}

pub fn draw_position<R: Rng + ?Sized>(density: &[f64], grid: &GridSpec, rng: &mut R) -> Result<f64> {
    Ok(grid.node(draw_node(density, rng)?))
}

/// Sum of unit-height Gaussians centred on the positions.
pub fn psf_image(positions: &[f64], image_grid: &[f64], psf_width: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * psf_width * psf_width);
    image_grid
        .iter()
        .map(|&x| positions.iter().map(|&p| (-(x - p) * (x - p) * inv).exp()).sum())
        .collect()
}

fn basis_of<'a>(species: Species, a: &'a OrbitalBasis, b: &'a OrbitalBasis) -> &'a OrbitalBasis {
    match species {
        Species::A => a,
        Species::B => b,
    }
}

/// Removes every particle of `species` from `state`, recording where each
/// one was found. Returns the positions and the remaining normalised state.
fn image_species<R: Rng + ?Sized>(
    mut state: ManyBodyState,
    species: Species,
    basis: &OrbitalBasis,
    rng: &mut R,
) -> Result<(Vec<f64>, ManyBodyState)> {
    let n = state.n_particles(species);
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let density = rdm1(&state, species).density(basis);
        let mut attempts = 0;
        let next = loop {
            attempts += 1;
            let j = draw_node(&density, rng)?;
            let mut reduced = annihilate_at(&state, species, &basis.field_amplitudes(j))?;
            if reduced.norm() >= RENORM_FLOOR {
                reduced.normalize();
                positions.push(basis.grid.node(j));
                break reduced;
            }
            if attempts >= MAX_RETRIES {
                return Err(Error::Renormalization { attempts });
            }
        };
        state = next;
    }
    Ok((positions, state))
}

/// One simulated image of both species, taken in `cfg.order`.
pub fn single_shot<R: Rng + ?Sized>(
    state: &ManyBodyState,
    basis_a: &OrbitalBasis,
    basis_b: &OrbitalBasis,
    cfg: &ShotConfig,
    rng: &mut R,
) -> Result<ShotRecord> {
    cfg.validate()?;
    let mut current = state.clone();
    current.normalize();
    let [first, second] = cfg.order.species();
    let (positions_first, rest) =
        image_species(current, first, basis_of(first, basis_a, basis_b), rng)?;
    let (positions_second, _) =
        image_species(rest, second, basis_of(second, basis_a, basis_b), rng)?;
    Ok(ShotRecord {
        time: state.time,
        shot: 0,
        order: cfg.order,
        image_first: psf_image(&positions_first, &cfg.image_grid, cfg.psf_width),
        image_second: psf_image(&positions_second, &cfg.image_grid, cfg.psf_width),
        positions_first,
        positions_second,
    })
}

/// Independent RNG stream for one shot.
pub fn shot_rng(seed: u64, shot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot as u64);
    rng
}

/// `cfg.n_shots` shots spread over `workers` threads; the result is ordered
/// by shot index and does not depend on the worker count.
pub fn run_shots(
    state: &ManyBodyState,
    basis_a: &OrbitalBasis,
    basis_b: &OrbitalBasis,
    cfg: &ShotConfig,
    workers: usize,
) -> Result<Vec<ShotRecord>> {
    cfg.validate()?;
    let workers = workers.clamp(1, cfg.n_shots);
    let shoot = |k: usize| -> Result<ShotRecord> {
        let mut rng = shot_rng(cfg.seed, k);
        let mut rec = single_shot(state, basis_a, basis_b, cfg, &mut rng)?;
        rec.shot = k;
        Ok(rec)
    };
    if workers == 1 {
        return (0..cfg.n_shots).map(shoot).collect();
    }
    let chunks: Vec<Result<Vec<ShotRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let shoot = &shoot;
                scope.spawn(move || {
                    (w..cfg.n_shots)
                        .step_by(workers)
                        .map(shoot)
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("shot worker panicked"))
            .collect()
    });
    let mut records = Vec::with_capacity(cfg.n_shots);
    for chunk in chunks {
        records.extend(chunk?);
    }
    records.sort_by_key(|r| r.shot);
    Ok(records)
}

fn uniform_spacing(grid: &[f64]) -> f64 {
    (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
}

fn left_integral(image: &[f64], grid: &[f64], dx: f64) -> f64 {
    image
        .iter()
        .zip(grid)
        .filter(|(_, &x)| x < 0.0)
        .map(|(v, _)| v * dx)
        .sum()
}

/// Pointwise mean image and left-well particle count per species. The left
/// integral is divided by the PSF area so it counts particles.
pub fn average_shots(records: &[ShotRecord], image_grid: &[f64], psf_width: f64) -> Result<ShotAverage> {
    if records.is_empty() {
        return Err(Error::EmptyShots);
    }
    let n = image_grid.len();
    if n < 2 {
        return Err(Error::InvalidParameter("image grid needs at least two points".into()));
    }
    for r in records {
        if r.image_first.len() != n || r.image_second.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "shot {} has images of length {}/{} on a grid of {n}",
                r.shot,
                r.image_first.len(),
                r.image_second.len()
            )));
        }
    }
    let dx = uniform_spacing(image_grid);
    let area = psf_area(psf_width);
    let count = records.len() as f64;
    let mut out = ShotAverage {
        time: records[0].time,
        n_shots: records.len(),
        image_grid: image_grid.to_vec(),
        mean_image_a: vec![0.0; n],
        mean_image_b: vec![0.0; n],
        left_fraction_a: 0.0,
        left_fraction_b: 0.0,
        left_error_a: 0.0,
        left_error_b: 0.0,
    };
    for species in [Species::A, Species::B] {
        let lefts: Vec<f64> = records
            .iter()
            .map(|r| left_integral(r.image(species), image_grid, dx) / area)
            .collect();
        let mean = lefts.iter().sum::<f64>() / count;
        let var = if records.len() > 1 {
            lefts.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (count - 1.0)
        } else {
            0.0
        };
        let mut image = vec![0.0; n];
        for r in records {
            for (acc, v) in image.iter_mut().zip(r.image(species)) {
                *acc += v / count;
            }
        }
        match species {
            Species::A => {
                out.mean_image_a = image;
                out.left_fraction_a = mean;
                out.left_error_a = (var / count).sqrt();
            }
            Species::B => {
                out.mean_image_b = image;
                out.left_fraction_b = mean;
                out.left_error_b = (var / count).sqrt();
            }
        }
    }
    Ok(out)
}

/// Infinite-shot limit of the mean image: the density convolved with the PSF.
pub fn expected_image(density: &[f64], grid: &GridSpec, image_grid: &[f64], psf_width: f64) -> Vec<f64> {
    let dx = grid.spacing();
    let nodes = grid.nodes();
    let inv = 1.0 / (2.0 * psf_width * psf_width);
    image_grid
        .iter()
        .map(|&x| {
            nodes
                .iter()
                .zip(density)
                .map(|(&p, &r)| r * dx * (-(x - p) * (x - p) * inv).exp())
                .sum()
        })
        .collect()
}

/// Pearson goodness-of-fit of `counts` against `probs`. Neighbouring bins
/// are merged until every expected count is at least 5. Returns the
/// statistic, the degrees of freedom and the p-value.
pub fn chi_square_test(counts: &[u64], probs: &[f64]) -> Result<(f64, usize, f64)> {
    if counts.len() != probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} counts vs {} probabilities",
            counts.len(),
            probs.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    let psum: f64 = probs.iter().sum();
    if total == 0 || !(psum > 0.0) {
        return Err(Error::InvalidParameter("empty histogram or zero law".into()));
    }
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        obs += c as f64;
        exp += p / psum * total as f64;
        if exp >= 5.0 {
            merged.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => merged.push((obs, exp)),
        }
    }
    if merged.len() < 2 {
        return Ok((0.0, 0, 1.0));
    }
    let stat: f64 = merged.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = merged.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok((stat, dof, 1.0 - dist.cdf(stat)))
}

/// Counts of grid-node samples in bins of `bin` consecutive nodes, together
/// with the binned probabilities of `density`.
pub fn binned_histogram(nodes_drawn: &[usize], density: &[f64], bin: usize) -> (Vec<u64>, Vec<f64>) {
    let nbins = density.len().div_ceil(bin);
    let mut counts = vec![0u64; nbins];
    let mut probs = vec![0.0; nbins];
    for &j in nodes_drawn {
        counts[j / bin] += 1;
    }
    for (j, &r) in density.iter().enumerate() {
        probs[j / bin] += r.max(0.0);
    }
    (counts, probs)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.17e}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn split(field: &str) -> Result<Vec<f64>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {v:?} in shot file: {e}")))
        })
        .collect()
}

pub const SHOT_CSV_HEADER: &str = "time,shot,order,species,positions,image";

/// Writes one line per shot and species: time, shot index, imaging order,
/// species, `;`-separated positions and `;`-separated image values.
pub fn write_shots_csv<W: Write>(records: &[ShotRecord], mut out: W) -> Result<()> {
    writeln!(out, "{SHOT_CSV_HEADER}")?;
    for r in records {
        for species in r.order.species() {
            writeln!(
                out,
                "{:.17e},{},{},{},{},{}",
                r.time,
                r.shot,
                r.order,
                species,
                join(r.positions(species)),
                join(r.image(species))
            )?;
        }
    }
    Ok(())
}

pub fn read_shots_csv<R: BufRead>(input: R) -> Result<Vec<ShotRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref() != Some(SHOT_CSV_HEADER) {
        return Err(Error::Config("missing shot file header".into()));
    }
    let mut records: Vec<ShotRecord> = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Config(format!("shot line has {} fields", f.len())));
        }
        let bad = |e: String| Error::Config(format!("shot line {line:?}: {e}"));
        let time: f64 = f[0].parse().map_err(|e| bad(format!("{e}")))?;
        let shot: usize = f[1].parse().map_err(|e| bad(format!("{e}")))?;
        let order: ImagingOrder = f[2].parse()?;
        let positions = split(f[4])?;
        let image = split(f[5])?;
        let is_first = order.species()[0].to_string() == f[3];
        if is_first {
            records.push(ShotRecord {
                time,
                shot,
                order,
                positions_first: positions,
                positions_second: Vec::new(),
                image_first: image,
                image_second: Vec::new(),
            });
        } else {
            let last = records
                .last_mut()
                .filter(|r| r.shot == shot && r.time == time)
                .ok_or_else(|| bad("second species without first".into()))?;
            last.positions_second = positions;
            last.image_second = image;
        }
    }
    Ok(records)
}
