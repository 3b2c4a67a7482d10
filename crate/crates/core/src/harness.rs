//! Experiments: mean-field convergence rate, flocking decay, and the
//! outside-mass test for the particle marginal.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundEvaluation, SupportData};
use crate::dynamics::{self, IntegrateOptions, ParticleEnsemble};
use crate::error::{input, Error, Result};
use crate::exec::Exec;
use crate::io::sha256_hex;
use crate::kernels::{GeneralForce, InteractionKernel, KernelDescriptor, KernelForm};
use crate::meanfield::{
    self, fit_flocking_support, least_squares, FlockingSupportFit, InitialDensitySpec, MarginalRequest,
    FIT_RADIUS_FLOOR,
};
use crate::transport::{wp_exact, wp_sliced_with, DiscreteMeasure, EXACT_SIZE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn default_dt() -> f64 {
    dynamics::DEFAULT_DT
}
fn default_p() -> f64 {
    2.0
}
fn default_n() -> usize {
    1
}
fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}
fn default_n_proj() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelDescriptor,
    pub initial: InitialDensitySpec,
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<usize>,
    pub times: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M_ref")]
    pub m_ref: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Marginal order.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Horizon of the flocking study; defaults to the last entry of `times`.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Tolerance of the outside-mass test.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Directions for the sliced surrogate when exact transport is too large.
    #[serde(default = "default_n_proj")]
    pub n_proj: usize,
    /// Compare `M_ref` against a `2 M_ref` reference cloud.
    #[serde(default)]
    pub check_reference: bool,
}

impl ExperimentConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg: Self = if is_toml { toml::from_str(&text)? } else { Self::parse(&text)? };
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON first, TOML as fallback.
    pub fn parse(text: &str) -> Result<Self> {
        match serde_json::from_str(text) {
            Ok(c) => Ok(c),
            Err(json_err) => toml::from_str(text).map_err(|_| Error::Json(json_err)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.initial.dimension()?;
        let kernel = InteractionKernel::new(self.kernel.clone())?;
        if kernel.dimension() != d {
            return input(format!("kernel dimension {} does not match density dimension {d}", kernel.dimension()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return input("N_grid must be a nonempty strictly increasing list of positive integers");
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return input("times must be a nonempty list of finite nonnegative reals");
        }
        if self.k < 2 {
            return input("K must be >= 2");
        }
        let n_max = *self.n_grid.last().unwrap();
        if self.m_ref < 4 * n_max {
            return input(format!("M_ref = {} must be >= 4 max(N_grid) = {}", self.m_ref, 4 * n_max));
        }
        if self.n == 0 || self.n > self.n_grid[0] {
            return input("marginal order n must satisfy 1 <= n <= min(N_grid)");
        }
        if self.m_ref < self.k * self.n {
            return input("M_ref must be >= K n so reference tuples can be drawn without replacement");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return input("dt must be finite and > 0");
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return input("p must be >= 1");
        }
        if self.n_proj == 0 {
            return input("n_proj must be >= 1");
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return input("epsilon must be > 0");
            }
        }
        if let Some(t) = self.t_end {
            if !(t.is_finite() && t > 0.0) {
                return input("t_end must be finite and > 0");
            }
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn interaction_kernel(&self) -> Result<InteractionKernel> {
        InteractionKernel::new(self.kernel.clone())
    }

    fn sorted_times(&self) -> Vec<f64> {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    fn horizon(&self) -> f64 {
        self.t_end.unwrap_or_else(|| self.times.iter().cloned().fold(0.0, f64::max))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for a named role derived from the experiment seed.
pub fn derive_seed(base: u64, role: SeedRole) -> u64 {
    splitmix64(base ^ splitmix64(role as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedRole {
    ReferenceA = 1,
    ReferenceB = 2,
    Marginal = 3,
    SubsampleA = 4,
    SubsampleB = 5,
    Slices = 6,
    NBody = 7,
    Refinement = 8,
    TestFunctions = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMethod {
    Exact,
    Sliced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSeeds {
    pub marginal_seed_base: u64,
    pub reference_a: u64,
    pub reference_b: u64,
    pub subsample_a: u64,
    pub subsample_b: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub t: f64,
    #[serde(rename = "W_hat")]
    pub w_hat: f64,
    #[serde(rename = "W_selfnoise")]
    pub w_selfnoise: f64,
    /// `sqrt(max(W_hat² - W_selfnoise², 0))`.
    pub corrected: f64,
    /// Theorem-matched `C(t) N^{-1/2}`; absent for higher marginals.
    pub bound: Option<f64>,
    pub method: DistanceMethod,
    pub seeds: RecordSeeds,
}

impl ConvergenceRecord {
    /// `W_hat ≤ bound + 2 W_selfnoise`.
    pub fn within_noisy_envelope(&self) -> bool {
        self.bound.is_none_or(|b| self.w_hat <= b + 2.0 * self.w_selfnoise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    /// Noise-corrected distance between the `M_ref` and `2 M_ref` clouds.
    pub distance: f64,
    /// A quarter of the smallest positive corrected `W_hat`.
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub config_hash: String,
    pub records: Vec<ConvergenceRecord>,
    pub bounds: Vec<BoundEvaluation>,
    pub reference_check: Option<ReferenceCheck>,
}

/// Bound evaluator matching the kernel class: the strict Cucker-Smale
/// constant, the bounded-Lipschitz corollary for saturating and null forces,
/// and the explicit sublinear constant for rotated alignment.
pub fn theorem_bound(kernel: &InteractionKernel, support: &SupportData, t: f64) -> Result<BoundEvaluation> {
    match kernel.form() {
        KernelForm::CuckerSmale(rate) => bounds::cs_bound(rate.sup_norm(), support, t),
        KernelForm::General(GeneralForce::Rotating { .. }) => bounds::sublinear_bound(kernel.gamma0(), support, t),
        KernelForm::General(_) => bounds::lipschitz_bound(
            kernel.sup_norm().expect("bounded force"),
            kernel.global_lipschitz().expect("Lipschitz force"),
            t,
        ),
    }
}

/// Rows of `n`-tuples of distinct particles drawn without replacement.
fn tuple_rows(state: &ParticleEnsemble, idx: &[usize], n: usize) -> Vec<f64> {
    let d = state.d();
    let mut out = Vec::with_capacity(idx.len() * 2 * d);
    for tuple in idx.chunks(n) {
        for &i in tuple {
            out.extend_from_slice(state.position(i));
            out.extend_from_slice(state.velocity(i));
        }
    }
    out
}

fn subsample_indices(m: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, m, count).into_vec()
}

/// Empirical `W_p` between equal-size uniform clouds: exact when the
/// combined size fits the exact cap, sliced otherwise.
pub fn empirical_distance(
    a: &[f64],
    b: &[f64],
    width: usize,
    p: f64,
    n_proj: usize,
    seed: u64,
    exec: Exec,
) -> Result<(f64, DistanceMethod)> {
    let mu = DiscreteMeasure::uniform(width, a.to_vec())?;
    let nu = DiscreteMeasure::uniform(width, b.to_vec())?;
    if mu.len() + nu.len() <= EXACT_SIZE_CAP {
        Ok((wp_exact(&mu, &nu, p)?.0, DistanceMethod::Exact))
    } else {
        Ok((wp_sliced_with(&mu, &nu, p, n_proj, seed, exec)?, DistanceMethod::Sliced))
    }
}

fn quadrature_correct(w: f64, floor: f64) -> f64 {
    (w * w - floor * floor).max(0.0).sqrt()
}

pub fn run_convergence_study(cfg: &ExperimentConfig, exec: Exec) -> Result<ConvergenceStudy> {
    cfg.validate()?;
    let kernel = cfg.interaction_kernel()?;
    let support = cfg.initial.support_data()?;
    let times = cfg.sorted_times();
    let d = kernel.dimension();
    let width = 2 * d * cfg.n;
    let seeds = RecordSeeds {
        marginal_seed_base: derive_seed(cfg.seed, SeedRole::Marginal),
        reference_a: derive_seed(cfg.seed, SeedRole::ReferenceA),
        reference_b: derive_seed(cfg.seed, SeedRole::ReferenceB),
        subsample_a: derive_seed(cfg.seed, SeedRole::SubsampleA),
        subsample_b: derive_seed(cfg.seed, SeedRole::SubsampleB),
    };
    let slice_seed = derive_seed(cfg.seed, SeedRole::Slices);
    log::info!("reference clouds: M_ref = {}, {} times", cfg.m_ref, times.len());
    let ref_a = meanfield::solve_vlasov_at(&cfg.initial, &kernel, cfg.m_ref, &times, cfg.dt, seeds.reference_a, exec)?;
    let ref_b = meanfield::solve_vlasov_at(&cfg.initial, &kernel, cfg.m_ref, &times, cfg.dt, seeds.reference_b, exec)?;
    let idx_a = subsample_indices(cfg.m_ref, cfg.k * cfg.n, seeds.subsample_a);
    let idx_b = subsample_indices(cfg.m_ref, cfg.k * cfg.n, seeds.subsample_b);
    let sub_a: Vec<Vec<f64>> = ref_a.iter().map(|s| tuple_rows(s, &idx_a, cfg.n)).collect();
    let sub_b: Vec<Vec<f64>> = ref_b.iter().map(|s| tuple_rows(s, &idx_b, cfg.n)).collect();
    let floors = exec.try_map_indexed(times.len(), |ti| {
        empirical_distance(&sub_a[ti], &sub_b[ti], width, cfg.p, cfg.n_proj, slice_seed, Exec::Sequential)
    })?;
    let evals: Vec<BoundEvaluation> =
        times.iter().map(|t| theorem_bound(&kernel, &support, *t)).collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(cfg.n_grid.len() * times.len());
    for &big_n in &cfg.n_grid {
        log::info!("marginal samples: N = {big_n}, K = {}", cfg.k);
        let req = MarginalRequest { big_n, n: cfg.n, dt: cfg.dt, exec };
        let sets = meanfield::marginal_samples_at(&cfg.initial, &kernel, req, &times, cfg.k, seeds.marginal_seed_base)?;
        let dists = exec.try_map_indexed(times.len(), |ti| {
            empirical_distance(&sets[ti].samples, &sub_a[ti], width, cfg.p, cfg.n_proj, slice_seed, Exec::Sequential)
        })?;
        for (ti, &t) in times.iter().enumerate() {
            let (w_hat, method) = dists[ti];
            let w_selfnoise = floors[ti].0;
            records.push(ConvergenceRecord {
                big_n,
                t,
                w_hat,
                w_selfnoise,
                corrected: quadrature_correct(w_hat, w_selfnoise),
                bound: (cfg.n == 1).then(|| evals[ti].bound(big_n)),
                method,
                seeds: seeds.clone(),
            });
        }
    }
    records.sort_by(|a, b| a.big_n.cmp(&b.big_n).then(a.t.total_cmp(&b.t)));
    let reference_check = if cfg.check_reference {
        Some(reference_refinement(cfg, &kernel, &times, &ref_a, &records, exec)?)
    } else {
        None
    };
    Ok(ConvergenceStudy { config_hash: cfg.hash(), records, bounds: evals, reference_check })
}

/// Distance between the `M_ref` reference and a `2 M_ref` cloud at the last
/// time, corrected by the floor between two disjoint halves of the `M_ref`
/// cloud.
fn reference_refinement(
    cfg: &ExperimentConfig,
    kernel: &InteractionKernel,
    times: &[f64],
    ref_a: &[ParticleEnsemble],
    records: &[ConvergenceRecord],
    exec: Exec,
) -> Result<ReferenceCheck> {
    let seed = derive_seed(cfg.seed, SeedRole::Refinement);
    let big = meanfield::solve_vlasov_at(&cfg.initial, kernel, 2 * cfg.m_ref, times, cfg.dt, seed, exec)?;
    let last = times.len() - 1;
    let k = (cfg.m_ref / 2).min(EXACT_SIZE_CAP / 2) / cfg.n;
    let halves = subsample_indices(cfg.m_ref, 2 * k * cfg.n, seed ^ 1);
    let a1 = tuple_rows(&ref_a[last], &halves[..k * cfg.n], cfg.n);
    let a2 = tuple_rows(&ref_a[last], &halves[k * cfg.n..], cfg.n);
    let b = tuple_rows(&big[last], &subsample_indices(2 * cfg.m_ref, k * cfg.n, seed ^ 2), cfg.n);
    let width = 2 * kernel.dimension() * cfg.n;
    let (w, _) = empirical_distance(&a1, &b, width, cfg.p, cfg.n_proj, seed, exec)?;
    let (floor, _) = empirical_distance(&a1, &a2, width, cfg.p, cfg.n_proj, seed, exec)?;
    let distance = quadrature_correct(w, floor);
    let smallest = records.iter().map(|r| r.corrected).filter(|c| *c > 0.0).fold(f64::INFINITY, f64::min);
    let threshold = 0.25 * smallest;
    Ok(ReferenceCheck { distance, threshold, passed: distance <= threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub t: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    /// `(N, corrected)` points entering the fit.
    pub points: Vec<(usize, f64)>,
    pub conclusive: bool,
    pub note: Option<String>,
}

/// Least-squares fit of `log corrected` against `log N` at time `t`, using
/// only records with `W_hat > 2 W_selfnoise`.
pub fn fit_rate(records: &[ConvergenceRecord], t: f64) -> RateFit {
    let mut points: Vec<(usize, f64)> = records
        .iter()
        .filter(|r| (r.t - t).abs() <= 1e-12 * t.abs().max(1.0))
        .filter(|r| r.w_hat > 2.0 * r.w_selfnoise && r.corrected > 0.0)
        .map(|r| (r.big_n, r.corrected))
        .collect();
    points.sort_by_key(|p| p.0);
    points.dedup_by_key(|p| p.0);
    if points.len() < 3 {
        return RateFit {
            t,
            slope: None,
            intercept: None,
            r2: None,
            note: Some(format!("inconclusive: {} usable N above twice the noise floor, need 3", points.len())),
            points,
            conclusive: false,
        };
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|(n, w)| ((*n as f64).ln(), w.ln())).collect();
    let (slope, intercept, r2) = least_squares(&xy);
    RateFit { t, slope: Some(slope), intercept: Some(intercept), r2: Some(r2), points, conclusive: true, note: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockingFrame {
    pub t: f64,
    /// `(mean |v - v̄|²)^{1/2}` over the reference cloud.
    pub spread: f64,
    /// `max |v - v̄|` over the reference cloud.
    pub max_radius: f64,
    /// Velocity diameter of the side-by-side particle run.
    pub nbody_velocity_diameter: f64,
}

/// `spread(t) ≈ E e^{-F t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlockingVerdict {
    Flocking,
    TriviallyFlocked,
    NoFlockingDetected,
}

impl FlockingVerdict {
    pub fn label(self) -> &'static str {
        match self {
            FlockingVerdict::Flocking => "flocking",
            FlockingVerdict::TriviallyFlocked => "trivially flocked",
            FlockingVerdict::NoFlockingDetected => "no flocking detected",
        }
    }
}

/// Decay rates at or below this count as no flocking.
pub const FLOCKING_ALPHA_MIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockingReport {
    pub config_hash: String,
    pub reference_seed: u64,
    pub nbody_seed: u64,
    pub t_end: f64,
    pub support_fit: FlockingSupportFit,
    pub spread_fit: Option<ExponentialFit>,
    pub verdict: FlockingVerdict,
    pub label: String,
    pub frames: Vec<FlockingFrame>,
    #[serde(rename = "nbody_N")]
    pub nbody_n: usize,
    /// Largest frame-to-frame increase of the particle velocity diameter.
    pub dv_increase: f64,
    pub dv_exact: bool,
    pub dv_monotone: bool,
}

/// Frame stride giving about 200 stored frames on `[0, t_end]`.
fn stride_for(t_end: f64, dt: f64) -> usize {
    ((t_end / dt / 200.0).round() as usize).max(1)
}

pub fn run_flocking_study(cfg: &ExperimentConfig, exec: Exec) -> Result<FlockingReport> {
    cfg.validate()?;
    let kernel = cfg.interaction_kernel()?;
    // γ ≡ 0 is the Cucker-Smale form with ψ ≡ 0
    let null = matches!(kernel.form(), KernelForm::General(GeneralForce::Null));
    if !(kernel.is_cucker_smale() || null) {
        return Err(Error::Precondition("flocking study needs a Cucker-Smale kernel".into()));
    }
    let t_end = cfg.horizon();
    if t_end <= 0.0 {
        return input("flocking study needs a positive horizon");
    }
    let opts = IntegrateOptions { frame_stride: stride_for(t_end, cfg.dt), exec };
    let reference_seed = derive_seed(cfg.seed, SeedRole::ReferenceA);
    let nbody_seed = derive_seed(cfg.seed, SeedRole::NBody);
    let traj = meanfield::solve_vlasov_with(&cfg.initial, &kernel, cfg.m_ref, t_end, cfg.dt, reference_seed, opts)?;
    let nbody_n = *cfg.n_grid.last().unwrap();
    let nbody_init = meanfield::sample_initial(&cfg.initial, nbody_n, nbody_seed)?;
    let nbody = dynamics::integrate_with(&nbody_init, &kernel, t_end, cfg.dt, opts)?;
    let support_fit = fit_flocking_support(&traj)?;
    let vbar = &support_fit.v_bar;
    let mut frames = Vec::with_capacity(traj.states.len());
    for ((t, s), ns) in traj.times.iter().zip(&traj.states).zip(&nbody.states) {
        let dev: Vec<f64> =
            (0..s.n()).map(|i| s.velocity(i).iter().zip(vbar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).collect();
        let spread = (dev.iter().sum::<f64>() / s.n() as f64).sqrt();
        let max_radius = dev.iter().cloned().fold(0.0, f64::max).sqrt();
        let (dv, _) = dynamics::diameter(ns.velocities(), ns.d());
        frames.push(FlockingFrame { t: *t, spread, max_radius, nbody_velocity_diameter: dv });
    }
    let usable: Vec<(f64, f64)> =
        frames.iter().filter(|f| f.spread > FIT_RADIUS_FLOOR).map(|f| (f.t, f.spread.ln())).collect();
    let spread_fit = (usable.len() >= 2).then(|| {
        let (slope, intercept, r2) = least_squares(&usable);
        ExponentialFit { e: intercept.exp(), f: -slope, r2 }
    });
    let verdict = if frames.iter().all(|f| f.max_radius <= FIT_RADIUS_FLOOR) {
        FlockingVerdict::TriviallyFlocked
    } else if support_fit.alpha > FLOCKING_ALPHA_MIN {
        FlockingVerdict::Flocking
    } else {
        FlockingVerdict::NoFlockingDetected
    };
    let (dv_increase, dv_exact) = dynamics::velocity_diameter_increase(&nbody);
    let dv_scale = frames.first().map_or(1.0, |f| f.nbody_velocity_diameter.max(1.0));
    Ok(FlockingReport {
        config_hash: cfg.hash(),
        reference_seed,
        nbody_seed,
        t_end,
        support_fit,
        spread_fit,
        verdict,
        label: verdict.label().to_string(),
        frames,
        nbody_n,
        dv_increase,
        dv_exact,
        dv_monotone: dv_increase <= dynamics::ENVELOPE_TOLERANCE * dv_scale,
    })
}

/// Phase-space box `B(c_x, X) × B(c_v, R)` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockBox {
    pub center_x: Vec<f64>,
    pub center_v: Vec<f64>,
    pub x_radius: f64,
    pub v_radius: f64,
}

impl FlockBox {
    pub fn from_fit(fit: &FlockingSupportFit, t: f64) -> Self {
        FlockBox {
            center_x: fit.center_at(t),
            center_v: fit.v_bar.clone(),
            x_radius: fit.x_radius,
            v_radius: fit.velocity_radius_at(t),
        }
    }

    /// Euclidean distance in `ℝ^{2d}` from `z = (x, v)` to the box.
    pub fn distance(&self, z: &[f64]) -> f64 {
        let d = self.center_x.len();
        let ox = (dist(&z[..d], &self.center_x) - self.x_radius).max(0.0);
        let ov = (dist(&z[d..], &self.center_v) - self.v_radius).max(0.0);
        (ox * ox + ov * ov).sqrt()
    }

    /// `max_{z ∈ box} ⟨u, z - c⟩`.
    fn support_function(&self, u: &[f64]) -> f64 {
        let d = self.center_x.len();
        self.x_radius * norm(&u[..d]) + self.v_radius * norm(&u[d..])
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// A 1-Lipschitz test function with values in `[0, 1]` vanishing on the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `min(dist(z, box), 1)`.
    ClippedDistance,
    /// `clamp(min_j (⟨u_j, z - c⟩ - h_box(u_j) - o_j), 0, 1)` with unit `u_j`
    /// and offsets `o_j ≥ 0`.
    MinAffine { directions: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl TestFunction {
    pub fn eval(&self, b: &FlockBox, z: &[f64]) -> f64 {
        match self {
            TestFunction::ClippedDistance => b.distance(z).min(1.0),
            TestFunction::MinAffine { directions, offsets } => {
                let d = b.center_x.len();
                let m = directions
                    .iter()
                    .zip(offsets)
                    .map(|(u, o)| {
                        let proj: f64 =
                            (0..d).map(|c| u[c] * (z[c] - b.center_x[c]) + u[d + c] * (z[d + c] - b.center_v[c])).sum();
                        proj - b.support_function(u) - o
                    })
                    .fold(f64::INFINITY, f64::min);
                m.clamp(0.0, 1.0)
            }
        }
    }
}

/// Clipped distance plus `count` seeded min-affine functions.
pub fn test_function_bank(d: usize, count: usize, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = vec![TestFunction::ClippedDistance];
    for _ in 0..count {
        let pieces = rng.random_range(1..=4);
        let mut directions = Vec::with_capacity(pieces);
        let mut offsets = Vec::with_capacity(pieces);
        for _ in 0..pieces {
            let mut u: Vec<f64> = (0..2 * d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&u).max(1e-300);
            u.iter_mut().for_each(|c| *c /= n);
            directions.push(u);
            offsets.push(rng.random_range(0.0..0.5));
        }
        bank.push(TestFunction::MinAffine { directions, offsets });
    }
    bank
}

/// Two-sided Hoeffding half-width at 95% for `K` draws in `[0, 1]`.
pub fn hoeffding_band(k: usize) -> f64 {
    ((2.0f64 / 0.05).ln() / (2.0 * k as f64)).sqrt()
}

/// Kendall's tau-b of two equal-length series; `None` when either is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            if a == 0.0 && b == 0.0 {
                continue;
            } else if a == 0.0 {
                tx += 1;
            } else if b == 0.0 {
                ty += 1;
            } else if a * b > 0.0 {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    (denom > 0.0 && conc + disc > 0).then(|| (conc - disc) as f64 / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRole {
    AboveThreshold,
    Control,
    BelowThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseRow {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub role: GridRole,
    /// One estimate of `∫φ dρ_{N;1}` per test function.
    pub estimates: Vec<f64>,
    pub max_estimate: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    Threshold,
    Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseReport {
    pub config_hash: String,
    pub t: f64,
    pub epsilon: f64,
    pub gamma0: f64,
    pub bound: BoundEvaluation,
    pub n_threshold: f64,
    pub flock_box: FlockBox,
    pub support_fit: FlockingSupportFit,
    pub hoeffding_band: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub marginal_seed_base: u64,
    pub test_function_seed: u64,
    pub rows: Vec<InverseRow>,
    pub mode: InverseMode,
    /// Kendall tau between `N` and the negated max estimate (trend mode).
    pub kendall_tau: Option<f64>,
    pub passed: bool,
    pub note: String,
}

/// Number of seeded min-affine test functions.
pub const RANDOM_TEST_FUNCTIONS: usize = 20;

pub fn run_inverse_check(cfg: &ExperimentConfig, epsilon: f64, exec: Exec) -> Result<InverseReport> {
    cfg.validate()?;
    if !(epsilon > 0.0) {
        return input(format!("epsilon must be > 0, got {epsilon}"));
    }
    let kernel = cfg.interaction_kernel()?;
    let t = cfg.times.iter().cloned().fold(0.0, f64::max);
    if t <= 0.0 {
        return Err(Error::Precondition("outside-mass test needs t > 0 for a flocking fit".into()));
    }
    let opts = IntegrateOptions { frame_stride: stride_for(t, cfg.dt), exec };
    let traj = meanfield::solve_vlasov_with(
        &cfg.initial,
        &kernel,
        cfg.m_ref,
        t,
        cfg.dt,
        derive_seed(cfg.seed, SeedRole::ReferenceA),
        opts,
    )?;
    let support_fit = fit_flocking_support(&traj)
        .map_err(|e| Error::Precondition(format!("no flocking fit available: {e}")))?
        .enveloping();
    let gamma0 = kernel.gamma0();
    let bound = bounds::flocking_bound(gamma0, &support_fit, t)?;
    let n_threshold = bounds::n_threshold(bound.c_t, epsilon)?;
    let flock_box = FlockBox::from_fit(&support_fit, t);
    let tf_seed = derive_seed(cfg.seed, SeedRole::TestFunctions);
    let bank = test_function_bank(kernel.dimension(), RANDOM_TEST_FUNCTIONS, tf_seed);
    let band = hoeffding_band(cfg.k);
    let marginal_seed_base = derive_seed(cfg.seed, SeedRole::Marginal);
    let threshold_n = n_threshold.ceil();
    let control = cfg.n_grid.iter().rev().find(|n| (**n as f64) < threshold_n).copied();
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for &big_n in &cfg.n_grid {
        let req = MarginalRequest { big_n, n: 1, dt: cfg.dt, exec };
        let set =
            meanfield::marginal_samples_at(&cfg.initial, &kernel, req, &[t], cfg.k, marginal_seed_base)?.remove(0);
        let estimates: Vec<f64> = bank
            .iter()
            .map(|phi| (0..set.k()).map(|r| phi.eval(&flock_box, set.row(r))).sum::<f64>() / set.k() as f64)
            .collect();
        let max_estimate = estimates.iter().cloned().fold(0.0, f64::max);
        let role = if big_n as f64 >= threshold_n {
            GridRole::AboveThreshold
        } else if Some(big_n) == control {
            GridRole::Control
        } else {
            GridRole::BelowThreshold
        };
        rows.push(InverseRow { big_n, role, estimates, max_estimate, within: max_estimate <= epsilon + band });
    }
    let above: Vec<&InverseRow> = rows.iter().filter(|r| r.role == GridRole::AboveThreshold).collect();
    let (mode, kendall, passed, note) = if !above.is_empty() {
        let ok = above.iter().all(|r| r.within);
        let note = format!(
            "{} grid sizes at or above N_t,eps = {:.4e}; max outside estimate vs eps + band = {:.4}",
            above.len(),
            n_threshold,
            epsilon + band
        );
        (InverseMode::Threshold, None, ok, note)
    } else {
        let ns: Vec<f64> = rows.iter().map(|r| r.big_n as f64).collect();
        let neg: Vec<f64> = rows.iter().map(|r| -r.max_estimate).collect();
        let tau = kendall_tau(&ns, &neg);
        let constant = rows.windows(2).all(|w| w[0].max_estimate == w[1].max_estimate);
        let enough = rows.len() >= 4;
        let ok = enough && (constant || tau.is_some_and(|t| t > 0.0));
        let note = format!(
            "N_t,eps = {:.4e} exceeds the grid; trend check over {} sizes: {}",
            n_threshold,
            rows.len(),
            if !enough {
                "inconclusive, fewer than 4 sizes".to_string()
            } else if constant {
                "estimates constant in N".to_string()
            } else {
                format!("kendall tau = {:.3}", tau.unwrap_or(f64::NAN))
            }
        );
        (InverseMode::Trend, tau, ok, note)
    };
    Ok(InverseReport {
        config_hash: cfg.hash(),
        t,
        epsilon,
        gamma0,
        bound,
        n_threshold,
        flock_box,
        support_fit,
        hoeffding_band: band,
        k: cfg.k,
        marginal_seed_base,
        test_function_seed: tf_seed,
        rows,
        mode,
        kendall_tau: kendall,
        passed,
        note,
    })
}

/// All bound evaluators applicable to the configured kernel at each time.
pub fn evaluate_bounds(cfg: &ExperimentConfig) -> Result<Vec<BoundEvaluation>> {
    cfg.validate()?;
    let kernel = cfg.interaction_kernel()?;
    let support = cfg.initial.support_data()?;
    let mut out = Vec::new();
    for &t in &cfg.sorted_times() {
        out.push(theorem_bound(&kernel, &support, t)?);
        if kernel.gamma0() > 0.0 && !matches!(kernel.form(), KernelForm::General(GeneralForce::Rotating { .. })) {
            out.push(bounds::sublinear_bound(kernel.gamma0(), &support, t)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RateDescriptor;

    fn base_cfg() -> ExperimentConfig {
        ExperimentConfig {
            kernel: KernelDescriptor::CuckerSmale { psi: RateDescriptor::Constant { c: 1.0 }, d: 1 },
            initial: InitialDensitySpec::uniform_cube(1, (0.0, 1.0), (-1.0, 1.0)),
            n_grid: vec![2, 4, 8],
            times: vec![0.0, 0.5],
            k: 50,
            m_ref: 200,
            dt: 0.05,
            seed: 1,
            p: 2.0,
            n: 1,
            outputs: PathBuf::from("out"),
            formats: default_formats(),
            t_end: None,
            epsilon: None,
            n_proj: 16,
            check_reference: false,
        }
    }

    fn rec(n: usize, w: f64, floor: f64) -> ConvergenceRecord {
        ConvergenceRecord {
            big_n: n,
            t: 1.0,
            w_hat: w,
            w_selfnoise: floor,
            corrected: quadrature_correct(w, floor),
            bound: None,
            method: DistanceMethod::Exact,
            seeds: RecordSeeds {
                marginal_seed_base: 0,
                reference_a: 0,
                reference_b: 0,
                subsample_a: 0,
                subsample_b: 0,
            },
        }
    }

    #[test]
    fn rate_fit_on_exact_power_laws() {
        let half: Vec<_> = [16, 64, 256, 1024].iter().map(|&n| rec(n, 3.0 / (n as f64).sqrt(), 0.0)).collect();
        let f = fit_rate(&half, 1.0);
        assert!((f.slope.unwrap() + 0.5).abs() < 1e-10);
        let one: Vec<_> = [16, 64, 256].iter().map(|&n| rec(n, 3.0 / n as f64, 0.0)).collect();
        assert!((fit_rate(&one, 1.0).slope.unwrap() + 1.0).abs() < 1e-10);
    }

    #[test]
    fn rate_fit_excludes_noise_dominated_points() {
        let r = vec![rec(16, 0.5, 0.1), rec(32, 0.3, 0.2), rec(64, 0.25, 0.2), rec(128, 0.1, 0.05)];
        let f = fit_rate(&r, 1.0);
        assert!(!f.conclusive);
        assert_eq!(f.points, vec![(16, quadrature_correct(0.5, 0.1))]);
        assert!(f.note.unwrap().contains("inconclusive"));
    }

    #[test]
    fn config_validation() {
        assert!(base_cfg().validate().is_ok());
        let mut c = base_cfg();
        c.n_grid = vec![4, 4];
        assert!(c.validate().is_err());
        let mut c = base_cfg();
        c.m_ref = 31;
        assert!(c.validate().is_err());
        let mut c = base_cfg();
        c.k = 1;
        assert!(c.validate().is_err());
        let mut c = base_cfg();
        c.kernel = KernelDescriptor::Null { d: 2 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_parses_json_and_toml_identically() {
        let js = serde_json::to_string(&base_cfg()).unwrap();
        let from_json = ExperimentConfig::parse(&js).unwrap();
        let tm = toml::to_string(&base_cfg()).unwrap();
        let from_toml = ExperimentConfig::parse(&tm).unwrap();
        assert_eq!(from_json, base_cfg());
        assert_eq!(from_toml, base_cfg());
        assert_eq!(from_json.hash(), base_cfg().hash());
    }

    #[test]
    fn seeds_are_distinct_per_role() {
        let roles = [
            SeedRole::ReferenceA,
            SeedRole::ReferenceB,
            SeedRole::Marginal,
            SeedRole::SubsampleA,
            SeedRole::SubsampleB,
            SeedRole::Slices,
            SeedRole::NBody,
            SeedRole::Refinement,
            SeedRole::TestFunctions,
        ];
        let mut s: Vec<u64> = roles.iter().map(|r| derive_seed(5, *r)).collect();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), roles.len());
    }

    #[test]
    fn study_is_exec_independent() {
        let cfg = base_cfg();
        let a = run_convergence_study(&cfg, Exec::Sequential).unwrap();
        let b = run_convergence_study(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 6);
        // time zero: both clouds sample the initial law
        for r in a.records.iter().filter(|r| r.t == 0.0) {
            assert_eq!(r.bound, Some(0.0));
        }
    }

    #[test]
    fn test_functions_are_bounded_lipschitz_and_vanish_inside() {
        let b = FlockBox { center_x: vec![1.0, 0.0], center_v: vec![0.5, 0.5], x_radius: 1.0, v_radius: 0.2 };
        let bank = test_function_bank(2, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            for phi in &bank {
                let (a, c) = (phi.eval(&b, &z), phi.eval(&b, &w));
                assert!((0.0..=1.0).contains(&a));
                assert!((a - c).abs() <= dist(&z, &w) + 1e-12);
                if b.distance(&z) == 0.0 {
                    assert_eq!(a, 0.0);
                }
            }
        }
        assert_eq!(bank[0].eval(&b, &[1.0, 0.0, 0.5, 0.5]), 0.0);
        assert!((bank[0].eval(&b, &[1.0, 0.0, 0.5, 0.9]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn kendall_tau_cases() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn hoeffding_width() {
        assert!((hoeffding_band(1000) - (40f64.ln() / 2000.0).sqrt()).abs() < 1e-15);
    }
}
