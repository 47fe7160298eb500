//! Experiment orchestration: configuration, the quench pipeline, parameter
//! sweeps, convergence studies and file output.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dvr::{solve_single_particle, GridSpec, OrbitalBasis, SpeciesParams, TrapParams};
use crate::dynamics::{
    ground_state, propagate_with_stats, LanczosOptions, PropagationConfig, PropagationStats,
};
use crate::error::{Error, Result};
use crate::fock::{FockBasis, ManyBodyState, Species, DEFAULT_CAPACITY};
use crate::hamiltonian::{assemble, build_interaction, requench, SparseHamiltonian};
use crate::observables::{
    default_omega_grid, spectrum, ObservableSeries, SpectrumOptions, Window, SCHMIDT_KEEP,
};
use crate::singleshot::{average_shots, run_shots, write_shots_csv, ImagingOrder, ShotAverage, ShotConfig, ShotRecord};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Default memory budget for one run.
pub const DEFAULT_MEMORY_MB: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Narrow barrier, `w = 0.1`.
    PaperSec2,
    /// Wide barrier, `w = 1`.
    PaperSec3,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-sec2" => Ok(Preset::PaperSec2),
            "paper-sec3" => Ok(Preset::PaperSec3),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected paper-sec2 or paper-sec3)"
            ))),
        }
    }
}

/// Imaging performed at selected output times of a quench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotPlan {
    pub n_shots: usize,
    pub order: ImagingOrder,
    pub psf_width: f64,
    pub times: Vec<f64>,
}

impl Default for ShotPlan {
    fn default() -> Self {
        Self {
            n_shots: 100,
            order: ImagingOrder::AB,
            psf_width: 1.0,
            times: vec![10.0, 30.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub mass_a: f64,
    pub mass_b: f64,
    pub omega: f64,
    pub barrier_height: f64,
    pub barrier_width: f64,
    pub d_initial: f64,
    pub d_final: f64,
    pub coupling: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub orbitals_a: usize,
    pub orbitals_b: usize,
    pub propagation: PropagationConfig,
    pub ground_tol: f64,
    pub record_energy: bool,
    pub shots: Option<ShotPlan>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub capacity: usize,
    pub memory_mb: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::PaperSec3)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            grid: GridSpec::default(),
            mass_a: 1.0,
            mass_b: 6.0,
            omega: 0.1,
            barrier_height: 1.0,
            barrier_width: match preset {
                Preset::PaperSec2 => 0.1,
                Preset::PaperSec3 => 1.0,
            },
            d_initial: 0.2,
            d_final: 0.0,
            coupling: 0.1,
            n_a: 3,
            n_b: 3,
            orbitals_a: 12,
            orbitals_b: 12,
            propagation: PropagationConfig::default(),
            ground_tol: 1e-10,
            record_energy: false,
            shots: None,
            output_dir: None,
            seed: 0,
            workers: default_workers(),
            capacity: DEFAULT_CAPACITY,
            memory_mb: DEFAULT_MEMORY_MB,
        }
    }

    pub fn species(&self, species: Species) -> Result<SpeciesParams> {
        match species {
            Species::A => SpeciesParams::new(Species::A, self.mass_a, self.omega),
            Species::B => SpeciesParams::new(Species::B, self.mass_b, self.omega),
        }
    }

    pub fn trap(&self, tilt: f64) -> Result<TrapParams> {
        TrapParams::new(self.barrier_height, self.barrier_width, tilt)
    }

    pub fn mass_ratio(&self) -> f64 {
        self.mass_b / self.mass_a
    }

    /// Checks the configuration and returns warnings for values outside the
    /// usual quench protocol.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.grid.validate()?;
        self.species(Species::A)?;
        self.species(Species::B)?;
        self.trap(self.d_initial)?;
        self.propagation.validate()?;
        for (name, v) in [
            ("d_initial", self.d_initial),
            ("d_final", self.d_final),
            ("coupling", self.coupling),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.ground_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ground_tol must be positive, got {}",
                self.ground_tol
            )));
        }
        for (name, n, m) in [
            ("A", self.n_a, self.orbitals_a),
            ("B", self.n_b, self.orbitals_b),
        ] {
            if m == 0 || m > 63 || n > m {
                return Err(Error::InvalidParameter(format!(
                    "species {name}: {n} particles in {m} orbitals"
                )));
            }
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        if let Some(plan) = &self.shots {
            if plan.n_shots == 0 || !(plan.psf_width > 0.0) {
                return Err(Error::InvalidParameter(
                    "shots need n_shots ≥ 1 and psf_width > 0".into(),
                ));
            }
        }
        let mut warnings = Vec::new();
        if !(self.d_initial >= self.d_final && self.d_final >= 0.0) {
            warnings.push(format!(
                "tilt quench {} -> {} is outside the usual d_initial >= d_final >= 0 protocol",
                self.d_initial, self.d_final
            ));
        }
        let ratio = self.mass_ratio();
        if !(2.0..=15.0).contains(&ratio) {
            warnings.push(format!("mass ratio {ratio} lies outside [2, 15]"));
        }
        Ok(warnings)
    }

    /// Product-space dimension and a conservative memory estimate in bytes.
    pub fn footprint(&self) -> (usize, usize) {
        let da = crate::fock::binomial(self.orbitals_a, self.n_a);
        let db = crate::fock::binomial(self.orbitals_b, self.n_b);
        let dim = da.saturating_mul(db);
        // complex Krylov vectors during propagation, real Lanczos vectors
        // for the ground state
        let per_entry = (16 * (self.propagation.krylov_dim + 8)).max(8 * (LanczosOptions::default().max_basis + 4));
        let state_bytes = dim.saturating_mul(per_entry);
        let m2 = self.orbitals_a * self.orbitals_a;
        let hops_b = db.saturating_mul(self.n_b * (self.orbitals_b.saturating_sub(self.n_b) + 1));
        let coupling_bytes = hops_b.saturating_mul(m2).saturating_mul(8);
        (dim, state_bytes.saturating_add(coupling_bytes))
    }

    pub fn check_capacity(&self) -> Result<()> {
        let (dim, bytes) = self.footprint();
        if dim > self.capacity {
            return Err(Error::Capacity {
                what: "product space dimension".into(),
                needed: dim,
                budget: self.capacity,
            });
        }
        let budget = self.memory_mb.saturating_mul(1 << 20);
        if bytes > budget {
            return Err(Error::Capacity {
                what: "memory (bytes)".into(),
                needed: bytes,
                budget,
            });
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of this configuration. Blank lines
    /// and `#` comments are ignored; unknown keys are errors.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                let msg = match e {
                    Error::Config(msg) => msg,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: {msg}", lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(preset) = text.lines().find_map(|l| {
            let l = l.split('#').next()?.trim();
            let (k, v) = l.split_once('=')?;
            (k.trim() == "preset").then(|| v.trim().to_string())
        }) {
            cfg = Self::preset(preset.parse()?);
        }
        cfg.apply_config_text(text)?;
        Ok(cfg)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Self::from_config_text(&fs::read_to_string(path)?)
    }

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn plan(cfg: &mut ExperimentConfig) -> &mut ShotPlan {
            cfg.shots.get_or_insert_with(ShotPlan::default)
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| num(key, s.trim()))
                .collect()
        }
        match key {
            "preset" => {
                let p: Preset = value.parse()?;
                self.barrier_width = Self::preset(p).barrier_width;
            }
            "x_min" => self.grid.x_min = num(key, value)?,
            "x_max" => self.grid.x_max = num(key, value)?,
            "n_points" => self.grid.n_points = num(key, value)?,
            "mass_a" => self.mass_a = num(key, value)?,
            "mass_b" => self.mass_b = num(key, value)?,
            "omega" => self.omega = num(key, value)?,
            "barrier_height" => self.barrier_height = num(key, value)?,
            "barrier_width" => self.barrier_width = num(key, value)?,
            "d_initial" => self.d_initial = num(key, value)?,
            "d_final" => self.d_final = num(key, value)?,
            "coupling" => self.coupling = num(key, value)?,
            "n_a" => self.n_a = num(key, value)?,
            "n_b" => self.n_b = num(key, value)?,
            "orbitals_a" => self.orbitals_a = num(key, value)?,
            "orbitals_b" => self.orbitals_b = num(key, value)?,
            "t_final" => self.propagation.t_final = num(key, value)?,
            "dt_out" => self.propagation.dt_out = num(key, value)?,
            "krylov_dim" => self.propagation.krylov_dim = num(key, value)?,
            "tol" => self.propagation.tol = num(key, value)?,
            "dt_max" => self.propagation.dt_max = num(key, value)?,
            "ground_tol" => self.ground_tol = num(key, value)?,
            "record_energy" => self.record_energy = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "capacity" => self.capacity = num(key, value)?,
            "memory_mb" => self.memory_mb = num(key, value)?,
            "output_dir" => {
                self.output_dir = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "shots" => match value {
                "none" | "off" | "false" => self.shots = None,
                "on" | "true" => {
                    plan(self);
                }
                other => return Err(Error::Config(format!("shots: expected on/off, got {other:?}"))),
            },
            "shot_count" => plan(self).n_shots = num(key, value)?,
            "shot_order" => plan(self).order = value.parse()?,
            "psf_width" => plan(self).psf_width = num(key, value)?,
            "shot_times" => plan(self).times = list(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Configuration as `key = value` lines accepted by
    /// [`ExperimentConfig::apply_config_text`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let p = &self.propagation;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("x_min", self.grid.x_min.to_string());
        kv("x_max", self.grid.x_max.to_string());
        kv("n_points", self.grid.n_points.to_string());
        kv("mass_a", self.mass_a.to_string());
        kv("mass_b", self.mass_b.to_string());
        kv("omega", self.omega.to_string());
        kv("barrier_height", self.barrier_height.to_string());
        kv("barrier_width", self.barrier_width.to_string());
        kv("d_initial", self.d_initial.to_string());
        kv("d_final", self.d_final.to_string());
        kv("coupling", self.coupling.to_string());
        kv("n_a", self.n_a.to_string());
        kv("n_b", self.n_b.to_string());
        kv("orbitals_a", self.orbitals_a.to_string());
        kv("orbitals_b", self.orbitals_b.to_string());
        kv("t_final", p.t_final.to_string());
        kv("dt_out", p.dt_out.to_string());
        kv("krylov_dim", p.krylov_dim.to_string());
        kv("tol", p.tol.to_string());
        kv("dt_max", p.dt_max.to_string());
        kv("ground_tol", self.ground_tol.to_string());
        kv("record_energy", self.record_energy.to_string());
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("capacity", self.capacity.to_string());
        kv("memory_mb", self.memory_mb.to_string());
        kv(
            "output_dir",
            self.output_dir
                .as_ref()
                .map(|d| d.display().to_string())
                .unwrap_or_default(),
        );
        match &self.shots {
            None => kv("shots", "off".into()),
            Some(plan) => {
                kv("shots", "on".into());
                kv("shot_count", plan.n_shots.to_string());
                kv("shot_order", plan.order.to_string());
                kv("psf_width", plan.psf_width.to_string());
                kv(
                    "shot_times",
                    plan.times.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSummary {
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    pub gap: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotSlice {
    pub average: ShotAverage,
    pub records: Vec<ShotRecord>,
}

#[derive(Debug, Clone)]
pub struct QuenchResult {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
    pub ground: GroundSummary,
    pub stats: PropagationStats,
    /// Post-quench energy at the first and last output time.
    pub energy_initial: f64,
    pub energy_final: f64,
    pub series: ObservableSeries,
    pub shots: Vec<ShotSlice>,
    pub orbitals_a: Arc<OrbitalBasis>,
    pub orbitals_b: Arc<OrbitalBasis>,
    pub final_state: ManyBodyState,
}

impl QuenchResult {
    pub fn relative_energy_drift(&self) -> f64 {
        (self.energy_final - self.energy_initial).abs() / self.energy_initial.abs().max(1e-300)
    }
}

/// Orbitals, Hamiltonians and ground state of one configuration.
pub struct Prepared {
    pub orbitals_a: Arc<OrbitalBasis>,
    pub orbitals_b: Arc<OrbitalBasis>,
    pub initial: SparseHamiltonian,
    pub ground: crate::dynamics::GroundStateResult,
}

/// Orbitals of the post-quench trap, `H(d_initial)` and its ground state.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.check_capacity().map_err(Error::at("capacity"))?;
    let trap = cfg.trap(cfg.d_final).map_err(Error::at("orbitals"))?;
    let orbitals_a = Arc::new(
        solve_single_particle(&cfg.grid, &cfg.species(Species::A)?, &trap, cfg.orbitals_a)
            .map_err(Error::at("orbitals"))?,
    );
    let orbitals_b = Arc::new(
        solve_single_particle(&cfg.grid, &cfg.species(Species::B)?, &trap, cfg.orbitals_b)
            .map_err(Error::at("orbitals"))?,
    );
    let fock = |m, n| {
        FockBasis::with_capacity(m, n, cfg.capacity)
            .map(Arc::new)
            .map_err(Error::at("fock"))
    };
    let fock_a = fock(cfg.orbitals_a, cfg.n_a)?;
    let fock_b = fock(cfg.orbitals_b, cfg.n_b)?;
    let w = Arc::new(
        build_interaction(&orbitals_a, &orbitals_b, cfg.coupling).map_err(Error::at("interaction"))?,
    );
    let initial = assemble(
        Arc::clone(&orbitals_a),
        Arc::clone(&orbitals_b),
        fock_a,
        fock_b,
        w,
        cfg.d_initial,
    )
    .map_err(Error::at("hamiltonian"))?;
    let ground = ground_state(&initial, cfg.ground_tol).map_err(Error::at("ground state"))?;
    Ok(Prepared {
        orbitals_a,
        orbitals_b,
        initial,
        ground,
    })
}

fn is_shot_time(plan: &ShotPlan, t: f64, dt_out: f64) -> bool {
    plan.times.iter().any(|&s| (s - t).abs() < 0.25 * dt_out)
}

/// Ground state at `d_initial`, sudden quench to `d_final` and propagation,
/// recording observables (and images, if configured) at every output time.
/// Files are written when `output_dir` is set.
pub fn run_quench(cfg: &ExperimentConfig) -> Result<QuenchResult> {
    let warnings = cfg.validate()?;
    let prep = prepare(cfg)?;
    let (oa, ob) = (Arc::clone(&prep.orbitals_a), Arc::clone(&prep.orbitals_b));
    let h = requench(&prep.initial, cfg.d_final);
    let mut series = ObservableSeries::new(cfg.n_a, cfg.n_b);
    let mut shots = Vec::new();
    let record_energy = cfg.record_energy;
    let shot_workers = cfg.workers;
    let dt_out = cfg.propagation.dt_out;
    let energy_initial = h.expectation(&prep.ground.state);

    let (final_state, stats) = propagate_with_stats(&prep.ground.state, &h, &cfg.propagation, |state| {
        series.record(state, &oa, &ob, record_energy.then_some(&h));
        if let Some(plan) = &cfg.shots {
            if is_shot_time(plan, state.time, dt_out) {
                let shot_cfg = ShotConfig {
                    order: plan.order,
                    psf_width: plan.psf_width,
                    n_shots: plan.n_shots,
                    seed: cfg.seed ^ state.time.to_bits(),
                    image_grid: cfg.grid.nodes(),
                };
                let records = run_shots(state, &oa, &ob, &shot_cfg, shot_workers)?;
                let average = average_shots(&records, &shot_cfg.image_grid, plan.psf_width)?;
                shots.push(ShotSlice { average, records });
            }
        }
        Ok(())
    })
    .map_err(Error::at("propagation"))?;
    let energy_final = h.expectation(&final_state);

    let result = QuenchResult {
        config: cfg.clone(),
        warnings,
        ground: GroundSummary {
            energy: prep.ground.energy,
            residual: prep.ground.residual,
            iterations: prep.ground.iterations,
            gap: prep.ground.gap,
            degenerate: prep.ground.degenerate,
        },
        stats,
        energy_initial,
        energy_final,
        series,
        shots,
        orbitals_a: oa,
        orbitals_b: ob,
        final_state,
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&result, dir).map_err(Error::at("output"))?;
    }
    Ok(result)
}

/// 64-bit FNV-1a, used to derive per-run seeds from axis values.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derived_seed(base: u64, axis: &str, value: f64) -> u64 {
    let mut bytes = axis.as_bytes().to_vec();
    bytes.extend_from_slice(&value.to_bits().to_le_bytes());
    base.wrapping_add(fnv1a(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    Coupling,
    MassRatio,
    ParticleNumber,
    BarrierHeight,
    Tilt,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Coupling => "g",
            SweepAxis::MassRatio => "mass_ratio",
            SweepAxis::ParticleNumber => "particle_number",
            SweepAxis::BarrierHeight => "barrier_height",
            SweepAxis::Tilt => "tilt",
        }
    }

    /// Configuration with the axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Coupling => cfg.coupling = value,
            SweepAxis::MassRatio => cfg.mass_b = value * cfg.mass_a,
            SweepAxis::ParticleNumber => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "particle number must be a non-negative integer, got {value}"
                    )));
                }
                cfg.n_a = value as usize;
                cfg.n_b = value as usize;
            }
            SweepAxis::BarrierHeight => cfg.barrier_height = value,
            SweepAxis::Tilt => cfg.d_final = value,
        }
        cfg.seed = derived_seed(base.seed, self.name(), value);
        if let Some(dir) = &base.output_dir {
            cfg.output_dir = Some(dir.join(format!("{}={value}", self.name())));
        }
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" | "coupling" => Ok(SweepAxis::Coupling),
            "mass_ratio" => Ok(SweepAxis::MassRatio),
            "particle_number" => Ok(SweepAxis::ParticleNumber),
            "barrier_height" => Ok(SweepAxis::BarrierHeight),
            "tilt" | "d" => Ok(SweepAxis::Tilt),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (g, mass_ratio, particle_number, barrier_height, tilt)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SweepOutcome {
    Done(Box<QuenchResult>),
    Skipped(String),
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub outcome: SweepOutcome,
}

impl SweepRun {
    pub fn result(&self) -> Option<&QuenchResult> {
        match &self.outcome {
            SweepOutcome::Done(r) => Some(r),
            SweepOutcome::Skipped(_) => None,
        }
    }
}

/// Runs every configuration, `workers` at a time, keeping input order.
fn run_batch(configs: Vec<ExperimentConfig>, workers: usize) -> Vec<Result<QuenchResult>> {
    let n = configs.len();
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return configs.iter().map(run_quench).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<QuenchResult>>>> =
        (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let mut cfg = configs[k].clone();
                cfg.workers = 1;
                let out = run_quench(&cfg);
                *slots[k].lock().expect("result slot poisoned") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot poisoned").expect("every run executed"))
        .collect()
}

/// One quench per axis value. Runs that exceed the capacity budget are
/// skipped with the reason recorded; other errors abort the sweep.
pub fn sweep_parameters(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRun>> {
    let configs = values
        .iter()
        .map(|&v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = configs.iter().map(|c| c.seed).collect();
    let mut runnable = Vec::new();
    let mut skipped = vec![None; configs.len()];
    for (k, c) in configs.into_iter().enumerate() {
        match c.check_capacity() {
            Ok(()) => runnable.push((k, c)),
            Err(e) => skipped[k] = Some(e.to_string()),
        }
    }
    let (index, batch): (Vec<usize>, Vec<ExperimentConfig>) = runnable.into_iter().unzip();
    let mut results = run_batch(batch, cfg.workers).into_iter();
    let mut index = index.into_iter().peekable();
    let mut runs = Vec::with_capacity(values.len());
    for (k, &value) in values.iter().enumerate() {
        let outcome = if index.peek() == Some(&k) {
            index.next();
            let r = results.next().expect("one result per runnable config");
            match r {
                Ok(r) => SweepOutcome::Done(Box::new(r)),
                Err(Error::Stage { stage: "capacity", source }) => SweepOutcome::Skipped(source.to_string()),
                Err(Error::Capacity { what, needed, budget }) => SweepOutcome::Skipped(
                    Error::Capacity { what, needed, budget }.to_string(),
                ),
                Err(e) => return Err(e),
            }
        } else {
            SweepOutcome::Skipped(skipped[k].take().unwrap_or_default())
        };
        runs.push(SweepRun {
            axis,
            value,
            seed: seeds[k],
            outcome,
        });
    }
    Ok(runs)
}

/// Qualitative outcome of one post-quench tilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiltBand {
    /// Indistinguishable from the symmetric quench (within 0.3 particles).
    NearSymmetric,
    /// Both species keep at least 90 % of their particles in the left well.
    Trapped,
    Intermediate,
}

#[derive(Debug, Clone)]
pub struct TiltSweep {
    pub runs: Vec<SweepRun>,
    pub bands: Vec<Option<TiltBand>>,
}

/// Largest deviation of the left populations between two runs, in particles.
pub fn max_left_deviation(a: &ObservableSeries, b: &ObservableSeries) -> f64 {
    let n = a.len().min(b.len());
    let mut worst: f64 = 0.0;
    for k in 0..n {
        worst = worst
            .max((a.left_pop_a[k] - b.left_pop_a[k]).abs())
            .max((a.left_pop_b[k] - b.left_pop_b[k]).abs());
    }
    worst
}

/// Smallest left fraction `⟨ρ⟩_L / N` reached by either species.
pub fn min_left_fraction(s: &ObservableSeries) -> f64 {
    let fa = s.left_pop_a.iter().cloned().fold(f64::INFINITY, f64::min) / s.n_a.max(1) as f64;
    let fb = s.left_pop_b.iter().cloned().fold(f64::INFINITY, f64::min) / s.n_b.max(1) as f64;
    fa.min(fb)
}

pub fn classify_tilt(series: &ObservableSeries, symmetric: Option<&ObservableSeries>) -> TiltBand {
    if min_left_fraction(series) >= 0.9 {
        return TiltBand::Trapped;
    }
    if let Some(reference) = symmetric {
        if max_left_deviation(series, reference) <= 0.3 {
            return TiltBand::NearSymmetric;
        }
    }
    TiltBand::Intermediate
}

/// One quench per post-quench tilt. Bands are assigned against the `d = 0`
/// run when it is part of the sweep.
pub fn sweep_tilt(cfg: &ExperimentConfig, d_values: &[f64]) -> Result<TiltSweep> {
    for &d in d_values {
        if !(0.0..=cfg.d_initial).contains(&d) {
            return Err(Error::InvalidParameter(format!(
                "post-quench tilt {d} outside [0, {}]",
                cfg.d_initial
            )));
        }
    }
    let runs = sweep_parameters(cfg, SweepAxis::Tilt, d_values)?;
    let symmetric = runs
        .iter()
        .find(|r| r.value == 0.0)
        .and_then(|r| r.result())
        .map(|r| r.series.clone());
    let bands = runs
        .iter()
        .map(|r| r.result().map(|q| classify_tilt(&q.series, symmetric.as_ref())))
        .collect();
    Ok(TiltSweep { runs, bands })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub reference: String,
    pub compared: Vec<String>,
    pub orbital_counts: Vec<usize>,
    pub times: Vec<f64>,
    /// `deviations_a[k][t] = |⟨ρ_A⟩_L(C_k) − ⟨ρ_A⟩_L(C')| / N_A`.
    pub deviations_a: Vec<Vec<f64>>,
    pub deviations_b: Vec<Vec<f64>>,
    pub max_a: Vec<f64>,
    pub max_b: Vec<f64>,
    /// Rank correlation between orbital count and time-averaged deviation.
    pub trend: Option<f64>,
}

fn label(m_a: usize, m_b: usize) -> String {
    format!("({m_a},{m_b})")
}

/// Spearman rank correlation; `None` for fewer than two points or constant
/// input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Compares quenches with equal orbital counts for both species against the
/// largest count in `orbital_counts`.
pub fn convergence_study(cfg: &ExperimentConfig, orbital_counts: &[usize]) -> Result<ConvergenceReport> {
    let mut counts = orbital_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let reference = *counts
        .last()
        .ok_or_else(|| Error::InvalidParameter("no orbital counts given".into()))?;
    let configs: Vec<ExperimentConfig> = counts
        .iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.orbitals_a = m;
            c.orbitals_b = m;
            c.shots = None;
            c.output_dir = cfg.output_dir.as_ref().map(|d| d.join(format!("orbitals={m}")));
            c
        })
        .collect();
    let results = run_batch(configs, cfg.workers)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let reference_series = &results[results.len() - 1].series;
    Ok(convergence_report(
        &counts,
        &results.iter().map(|r| &r.series).collect::<Vec<_>>(),
        reference,
        reference_series,
    ))
}

/// Deviation report from already computed series, one per orbital count.
pub fn convergence_report(
    counts: &[usize],
    series: &[&ObservableSeries],
    reference: usize,
    reference_series: &ObservableSeries,
) -> ConvergenceReport {
    let n = reference_series.len();
    let mut report = ConvergenceReport {
        reference: label(reference, reference),
        compared: Vec::new(),
        orbital_counts: Vec::new(),
        times: reference_series.times.clone(),
        deviations_a: Vec::new(),
        deviations_b: Vec::new(),
        max_a: Vec::new(),
        max_b: Vec::new(),
        trend: None,
    };
    let mut means = Vec::new();
    for (&m, s) in counts.iter().zip(series) {
        if m == reference {
            continue;
        }
        let dev = |own: &[f64], refr: &[f64], np: usize| -> Vec<f64> {
            (0..n.min(own.len()))
                .map(|k| (own[k] - refr[k]).abs() / np.max(1) as f64)
                .collect()
        };
        let da = dev(&s.left_pop_a, &reference_series.left_pop_a, s.n_a);
        let db = dev(&s.left_pop_b, &reference_series.left_pop_b, s.n_b);
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        report.max_a.push(max(&da));
        report.max_b.push(max(&db));
        let mean = (da.iter().sum::<f64>() + db.iter().sum::<f64>()) / (da.len() + db.len()).max(1) as f64;
        means.push(mean);
        report.compared.push(label(m, m));
        report.orbital_counts.push(m);
        report.deviations_a.push(da);
        report.deviations_b.push(db);
    }
    let xs: Vec<f64> = report.orbital_counts.iter().map(|&m| m as f64).collect();
    report.trend = spearman(&xs, &means);
    report
}

fn csv_preamble(cfg: &ExperimentConfig) -> String {
    let mut s = format!("# fermix {VERSION}\n");
    for line in cfg.to_config_text().lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

/// Writes the series, densities, spectra, Schmidt weights, shot files and a
/// JSON manifest into `dir`. Every CSV starts with `#` lines holding the
/// code version and the full configuration.
pub fn write_outputs(result: &QuenchResult, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let cfg = &result.config;
    let pre = csv_preamble(cfg);
    let s = &result.series;
    let mut files = Vec::new();

    let columns: Vec<(&str, &Vec<f64>)> = {
        let mut c = vec![
            ("norm", &s.norm),
            ("left_pop_A", &s.left_pop_a),
            ("left_pop_B", &s.left_pop_b),
            ("p2_AA", &s.p2_aa),
            ("p2_BB", &s.p2_bb),
            ("p2_AB", &s.p2_ab),
            ("entropy", &s.entropy),
            ("frag_A", &s.frag_a),
            ("frag_B", &s.frag_b),
        ];
        if !s.energy.is_empty() {
            c.insert(1, ("energy", &s.energy));
        }
        c
    };

    let mut w = create(&dir.join("series.csv"))?;
    w.write_all(pre.as_bytes())?;
    let header: Vec<&str> = std::iter::once("t").chain(columns.iter().map(|c| c.0)).collect();
    writeln!(w, "{}", header.join(","))?;
    for k in 0..s.len() {
        let row: Vec<String> = std::iter::once(fmt_f(s.times[k]))
            .chain(columns.iter().map(|c| fmt_f(c.1[k])))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    files.push("series.csv".to_string());

    let sdir = dir.join("series");
    fs::create_dir_all(&sdir)?;
    for (name, values) in &columns {
        let mut w = create(&sdir.join(format!("{name}.csv")))?;
        w.write_all(pre.as_bytes())?;
        writeln!(w, "t,{name}")?;
        for (t, v) in s.times.iter().zip(values.iter()) {
            writeln!(w, "{},{}", fmt_f(*t), fmt_f(*v))?;
        }
        w.flush()?;
        files.push(format!("series/{name}.csv"));
    }

    let nodes = cfg.grid.nodes();
    for (name, rows) in [("density_A.csv", &s.density_a), ("density_B.csv", &s.density_b)] {
        let mut w = create(&dir.join(name))?;
        w.write_all(pre.as_bytes())?;
        let xs: Vec<String> = nodes.iter().map(|x| fmt_f(*x)).collect();
        writeln!(w, "t,{}", xs.join(","))?;
        for (t, row) in s.times.iter().zip(rows) {
            let vals: Vec<String> = row.iter().map(|v| fmt_f(*v)).collect();
            writeln!(w, "{},{}", fmt_f(*t), vals.join(","))?;
        }
        w.flush()?;
        files.push(name.to_string());
    }

    let omega = default_omega_grid();
    let windowed = SpectrumOptions {
        detrend: true,
        window: Window::Hann,
    };
    for (name, values) in [("spectrum_A.csv", &s.left_pop_a), ("spectrum_B.csv", &s.left_pop_b)] {
        let raw = spectrum(&s.times, values, &omega, SpectrumOptions::default())?;
        let win = spectrum(&s.times, values, &omega, windowed)?;
        let mut w = create(&dir.join(name))?;
        w.write_all(pre.as_bytes())?;
        writeln!(w, "omega,P,P_detrended_hann")?;
        for k in 0..omega.len() {
            writeln!(w, "{},{},{}", fmt_f(omega[k]), fmt_f(raw[k]), fmt_f(win[k]))?;
        }
        w.flush()?;
        files.push(name.to_string());
    }

    let mut w = create(&dir.join("schmidt.csv"))?;
    w.write_all(pre.as_bytes())?;
    let lam: Vec<String> = (1..=SCHMIDT_KEEP).map(|k| format!("lambda_{k}")).collect();
    writeln!(w, "t,{}", lam.join(","))?;
    for (t, weights) in s.times.iter().zip(&s.schmidt) {
        let vals: Vec<String> = (0..SCHMIDT_KEEP)
            .map(|k| fmt_f(weights.get(k).copied().unwrap_or(0.0)))
            .collect();
        writeln!(w, "{},{}", fmt_f(*t), vals.join(","))?;
    }
    w.flush()?;
    files.push("schmidt.csv".to_string());

    if !result.shots.is_empty() {
        let shot_dir = dir.join("shots");
        fs::create_dir_all(&shot_dir)?;
        let mut summary = create(&shot_dir.join("summary.csv"))?;
        summary.write_all(pre.as_bytes())?;
        writeln!(
            summary,
            "t,n_shots,left_fraction_A,left_error_A,left_fraction_B,left_error_B"
        )?;
        for slice in &result.shots {
            let a = &slice.average;
            let tag = format!("t{:.2}", a.time);
            let mut w = create(&shot_dir.join(format!("records_{tag}.csv")))?;
            w.write_all(pre.as_bytes())?;
            write_shots_csv(&slice.records, &mut w)?;
            w.flush()?;
            let mut w = create(&shot_dir.join(format!("average_{tag}.csv")))?;
            w.write_all(pre.as_bytes())?;
            writeln!(w, "x,mean_image_A,mean_image_B")?;
            for k in 0..a.image_grid.len() {
                writeln!(
                    w,
                    "{},{},{}",
                    fmt_f(a.image_grid[k]),
                    fmt_f(a.mean_image_a[k]),
                    fmt_f(a.mean_image_b[k])
                )?;
            }
            w.flush()?;
            writeln!(
                summary,
                "{},{},{},{},{},{}",
                fmt_f(a.time),
                a.n_shots,
                fmt_f(a.left_fraction_a),
                fmt_f(a.left_error_a),
                fmt_f(a.left_fraction_b),
                fmt_f(a.left_error_b)
            )?;
            files.push(format!("shots/records_{tag}.csv"));
            files.push(format!("shots/average_{tag}.csv"));
        }
        summary.flush()?;
        files.push("shots/summary.csv".to_string());
    }

    let manifest = serde_json::json!({
        "program": "fermix",
        "version": VERSION,
        "config": cfg,
        "config_text": cfg.to_config_text(),
        "warnings": result.warnings,
        "ground_state": result.ground,
        "propagation": result.stats,
        "energy_initial": result.energy_initial,
        "energy_final": result.energy_final,
        "files": files,
    });
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_differ_in_barrier_width() {
        assert_eq!(ExperimentConfig::preset(Preset::PaperSec2).barrier_width, 0.1);
        assert_eq!(ExperimentConfig::default().barrier_width, 1.0);
        assert!("paper-sec4".parse::<Preset>().is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.coupling = 1.2;
        cfg.shots = Some(ShotPlan {
            n_shots: 17,
            order: ImagingOrder::BA,
            psf_width: 0.5,
            times: vec![1.0, 2.5],
        });
        cfg.output_dir = Some(PathBuf::from("/tmp/x"));
        let text = cfg.to_config_text();
        let back = ExperimentConfig::from_config_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_config_text("coupling = 1\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(ExperimentConfig::from_config_text("coupling 1").is_err());
        assert!(ExperimentConfig::from_config_text("n_a = x").is_err());
    }

    #[test]
    fn comments_and_preset_key() {
        let cfg = ExperimentConfig::from_config_text("# header\npreset = paper-sec2 # narrow\n\nd_final = 0.05\n")
            .unwrap();
        assert_eq!(cfg.barrier_width, 0.1);
        assert_eq!(cfg.d_final, 0.05);
    }

    #[test]
    fn validation_warnings_and_errors() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().unwrap().is_empty());
        cfg.d_final = 0.3;
        assert_eq!(cfg.validate().unwrap().len(), 1);
        cfg.mass_b = 20.0;
        assert_eq!(cfg.validate().unwrap().len(), 2);
        cfg.n_a = 13;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn capacity_guard() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.check_capacity().is_ok());
        cfg.capacity = 1000;
        assert!(matches!(cfg.check_capacity(), Err(Error::Capacity { .. })));
        cfg.capacity = DEFAULT_CAPACITY;
        cfg.memory_mb = 1;
        assert!(matches!(cfg.check_capacity(), Err(Error::Capacity { .. })));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derived_seed(7, "g", 0.1);
        assert_eq!(a, derived_seed(7, "g", 0.1));
        assert_ne!(a, derived_seed(7, "g", 0.2));
        assert_ne!(a, derived_seed(7, "mass_ratio", 0.1));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn axis_application() {
        let base = ExperimentConfig::default();
        assert_eq!(SweepAxis::MassRatio.apply(&base, 2.0).unwrap().mass_b, 2.0);
        let p = SweepAxis::ParticleNumber.apply(&base, 2.0).unwrap();
        assert_eq!((p.n_a, p.n_b), (2, 2));
        assert!(SweepAxis::ParticleNumber.apply(&base, 2.5).is_err());
        assert_eq!("g".parse::<SweepAxis>().unwrap(), SweepAxis::Coupling);
        assert!("mass".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0]).is_none());
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn identical_configurations_have_zero_deviation() {
        let mut s = ObservableSeries::new(2, 2);
        s.times = vec![0.0, 1.0];
        s.left_pop_a = vec![1.9, 1.1];
        s.left_pop_b = vec![2.0, 1.5];
        let r = convergence_report(&[8, 10], &[&s, &s], 10, &s);
        assert_eq!(r.max_a, vec![0.0]);
        assert_eq!(r.max_b, vec![0.0]);
        assert_eq!(r.reference, "(10,10)");
    }
}
