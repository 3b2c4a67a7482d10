//! Mean-field limit by characteristics on sample clouds.
//!
//! The kinetic solution `ρ^t` is the pushforward of `ρ^in` by the
//! characteristic flow whose velocity field is `γ ⋆ ρ^t`. Replacing `ρ^t` by
//! the empirical measure of `M` samples makes the characteristic system the
//! `M`-particle flow itself, so the reference solve goes through
//! [`dynamics::integrate_with`] unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::SupportData;
use crate::dynamics::{
    self, evolve_to_times, BoundCheckReport, IntegrateOptions, ParticleEnsemble, Trajectory, ENVELOPE_TOLERANCE,
};
use crate::error::{input, Error, Result};
use crate::exec::Exec;
use crate::kernels::InteractionKernel;

/// Compactly supported initial law `ρ^in` on `ℝ^d × ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialDensitySpec {
    /// Uniform on the product of the two axis-aligned boxes. Degenerate
    /// intervals (`min == max`) are allowed.
    UniformBox {
        x_min: Vec<f64>,
        x_max: Vec<f64>,
        v_min: Vec<f64>,
        v_max: Vec<f64>,
    },
    /// Independent diagonal Gaussians in `x` and `v`, each conditioned on the
    /// Euclidean ball of the given radius around its mean.
    GaussianTruncated {
        x_mean: Vec<f64>,
        v_mean: Vec<f64>,
        x_std: Vec<f64>,
        v_std: Vec<f64>,
        x_radius: f64,
        v_radius: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub density: InitialDensitySpec,
}

const MAX_REJECTIONS: usize = 1_000_000;

impl InitialDensitySpec {
    /// Uniform box with the same interval in every coordinate.
    pub fn uniform_cube(d: usize, x: (f64, f64), v: (f64, f64)) -> Self {
        InitialDensitySpec::UniformBox {
            x_min: vec![x.0; d],
            x_max: vec![x.1; d],
            v_min: vec![v.0; d],
            v_max: vec![v.1; d],
        }
    }

    /// Validates the spec and returns its dimension.
    pub fn dimension(&self) -> Result<usize> {
        match self {
            InitialDensitySpec::UniformBox { x_min, x_max, v_min, v_max } => {
                let d = x_min.len();
                if d == 0 || x_max.len() != d || v_min.len() != d || v_max.len() != d {
                    return input("uniform box bounds must be nonempty vectors of equal length");
                }
                for (lo, hi) in x_min.iter().zip(x_max).chain(v_min.iter().zip(v_max)) {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return input(format!("uniform box interval [{lo}, {hi}] is invalid"));
                    }
                }
                Ok(d)
            }
            InitialDensitySpec::GaussianTruncated { x_mean, v_mean, x_std, v_std, x_radius, v_radius } => {
                let d = x_mean.len();
                if d == 0 || v_mean.len() != d || x_std.len() != d || v_std.len() != d {
                    return input("gaussian parameters must be nonempty vectors of equal length");
                }
                if x_mean.iter().chain(v_mean).any(|m| !m.is_finite())
                    || x_std.iter().chain(v_std).any(|s| !(s.is_finite() && *s >= 0.0))
                {
                    return input("gaussian means must be finite and standard deviations >= 0");
                }
                if !(x_radius.is_finite() && *x_radius > 0.0 && v_radius.is_finite() && *v_radius > 0.0) {
                    return input("gaussian truncation radii must be finite and > 0");
                }
                Ok(d)
            }
            InitialDensitySpec::Mixture { components } => {
                if components.is_empty() {
                    return input("mixture needs at least one component");
                }
                let mut d = None;
                for c in components {
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return input("mixture weights must be positive");
                    }
                    let dc = c.density.dimension()?;
                    if *d.get_or_insert(dc) != dc {
                        return input("mixture components disagree on dimension");
                    }
                }
                Ok(d.unwrap())
            }
        }
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, x: &mut [f64], v: &mut [f64]) -> Result<()> {
        match self {
            InitialDensitySpec::UniformBox { x_min, x_max, v_min, v_max } => {
                for c in 0..x.len() {
                    x[c] = x_min[c] + (x_max[c] - x_min[c]) * rng.random::<f64>();
                }
                for c in 0..v.len() {
                    v[c] = v_min[c] + (v_max[c] - v_min[c]) * rng.random::<f64>();
                }
                Ok(())
            }
            InitialDensitySpec::GaussianTruncated { x_mean, v_mean, x_std, v_std, x_radius, v_radius } => {
                truncated_gaussian(rng, x_mean, x_std, *x_radius, x)?;
                truncated_gaussian(rng, v_mean, v_std, *v_radius, v)
            }
            InitialDensitySpec::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (k, c) in components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                components[pick].density.sample_into(rng, x, v)
            }
        }
    }

    /// Whether `(x, v)` lies in the closed support, up to `tol`.
    pub fn contains(&self, x: &[f64], v: &[f64], tol: f64) -> bool {
        match self {
            InitialDensitySpec::UniformBox { x_min, x_max, v_min, v_max } => {
                let inside = |p: &[f64], lo: &[f64], hi: &[f64]| {
                    p.iter().zip(lo.iter().zip(hi)).all(|(c, (l, h))| *c >= l - tol && *c <= h + tol)
                };
                inside(x, x_min, x_max) && inside(v, v_min, v_max)
            }
            InitialDensitySpec::GaussianTruncated { x_mean, v_mean, x_radius, v_radius, .. } => {
                euclid(x, x_mean) <= x_radius + tol && euclid(v, v_mean) <= v_radius + tol
            }
            InitialDensitySpec::Mixture { components } => components.iter().any(|c| c.density.contains(x, v, tol)),
        }
    }

    /// Exact mean `(∫x ρ^in, ∫v ρ^in)`.
    pub fn mean(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            InitialDensitySpec::UniformBox { x_min, x_max, v_min, v_max } => {
                (midpoint(x_min, x_max), midpoint(v_min, v_max))
            }
            // truncation to a centered ball keeps the mean
            InitialDensitySpec::GaussianTruncated { x_mean, v_mean, .. } => (x_mean.clone(), v_mean.clone()),
            InitialDensitySpec::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let (mut mx, mut mv): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
                for c in components {
                    let (cx, cv) = c.density.mean();
                    if mx.is_empty() {
                        mx = vec![0.0; cx.len()];
                        mv = vec![0.0; cv.len()];
                    }
                    let w = c.weight / total;
                    mx.iter_mut().zip(&cx).for_each(|(a, b)| *a += w * b);
                    mv.iter_mut().zip(&cv).for_each(|(a, b)| *a += w * b);
                }
                (mx, mv)
            }
        }
    }

    /// Axis-aligned bounding box of the support: `(x_lo, x_hi, v_lo, v_hi)`.
    pub fn bounding_box(&self) -> [Vec<f64>; 4] {
        match self {
            InitialDensitySpec::UniformBox { x_min, x_max, v_min, v_max } => {
                [x_min.clone(), x_max.clone(), v_min.clone(), v_max.clone()]
            }
            InitialDensitySpec::GaussianTruncated { x_mean, v_mean, x_radius, v_radius, .. } => [
                x_mean.iter().map(|m| m - x_radius).collect(),
                x_mean.iter().map(|m| m + x_radius).collect(),
                v_mean.iter().map(|m| m - v_radius).collect(),
                v_mean.iter().map(|m| m + v_radius).collect(),
            ],
            InitialDensitySpec::Mixture { components } => {
                let mut boxes = components.iter().map(|c| c.density.bounding_box());
                let mut acc = boxes.next().expect("validated mixture is nonempty");
                for b in boxes {
                    for k in 0..4 {
                        for (a, c) in acc[k].iter_mut().zip(&b[k]) {
                            *a = if k % 2 == 0 { a.min(*c) } else { a.max(*c) };
                        }
                    }
                }
                acc
            }
        }
    }

    /// `sup |v|` over the support.
    pub fn velocity_sup(&self) -> f64 {
        match self {
            InitialDensitySpec::UniformBox { v_min, v_max, .. } => v_min
                .iter()
                .zip(v_max)
                .map(|(l, h)| {
                    let m = l.abs().max(h.abs());
                    m * m
                })
                .sum::<f64>()
                .sqrt(),
            InitialDensitySpec::GaussianTruncated { v_mean, v_radius, .. } => norm(v_mean) + v_radius,
            InitialDensitySpec::Mixture { components } => {
                components.iter().map(|c| c.density.velocity_sup()).fold(0.0, f64::max)
            }
        }
    }

    /// `∫|v| ρ^in`: exact for one-dimensional boxes, otherwise the upper bound
    /// `sqrt(∫|v|² ρ^in)` (boxes) or `|v̄| + min(r_v, sqrt(Σσ²))` (truncated
    /// Gaussians).
    pub fn velocity_l1(&self) -> f64 {
        match self {
            InitialDensitySpec::UniformBox { v_min, v_max, .. } => {
                if v_min.len() == 1 {
                    abs_mean_uniform(v_min[0], v_max[0])
                } else {
                    v_min.iter().zip(v_max).map(|(a, b)| (a * a + a * b + b * b) / 3.0).sum::<f64>().sqrt()
                }
            }
            InitialDensitySpec::GaussianTruncated { v_mean, v_std, v_radius, .. } => {
                norm(v_mean) + v_radius.min(norm(v_std))
            }
            InitialDensitySpec::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                components.iter().map(|c| c.weight / total * c.density.velocity_l1()).sum()
            }
        }
    }

    /// Diameter of the support in `ℝ^{2d}` (exact for boxes and single
    /// Gaussians, bounding-box diagonal for mixtures).
    pub fn support_diameter(&self) -> f64 {
        match self {
            InitialDensitySpec::GaussianTruncated { x_radius, v_radius, .. } => {
                2.0 * (x_radius * x_radius + v_radius * v_radius).sqrt()
            }
            _ => {
                let [xl, xh, vl, vh] = self.bounding_box();
                xl.iter().zip(&xh).chain(vl.iter().zip(&vh)).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
            }
        }
    }

    /// Support constants consumed by the bound evaluators.
    pub fn support_data(&self) -> Result<SupportData> {
        self.dimension()?;
        Ok(SupportData {
            v_sup: self.velocity_sup(),
            v_l1: self.velocity_l1(),
            vbar: self.mean().1,
            supp_size: self.support_diameter(),
            flock: None,
        })
    }
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(l, h)| 0.5 * (l + h)).collect()
}

/// `E|U|` for `U` uniform on `[a, b]`.
fn abs_mean_uniform(a: f64, b: f64) -> f64 {
    if a == b {
        a.abs()
    } else if a >= 0.0 {
        0.5 * (a + b)
    } else if b <= 0.0 {
        -0.5 * (a + b)
    } else {
        (a * a + b * b) / (2.0 * (b - a))
    }
}

fn truncated_gaussian(rng: &mut ChaCha8Rng, mean: &[f64], std: &[f64], radius: f64, out: &mut [f64]) -> Result<()> {
    for _ in 0..MAX_REJECTIONS {
        for c in 0..out.len() {
            let z: f64 = rng.sample(StandardNormal);
            out[c] = mean[c] + std[c] * z;
        }
        if euclid(out, mean) <= radius {
            return Ok(());
        }
    }
    input("gaussian truncation radius too small for rejection sampling")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `M` i.i.d. draws from `ρ^in`, deterministic in `(spec, M, seed)`.
pub fn sample_initial(spec: &InitialDensitySpec, m: usize, seed: u64) -> Result<ParticleEnsemble> {
    let d = spec.dimension()?;
    if m == 0 {
        return input("sample count must be >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; m * d];
    let mut v = vec![0.0; m * d];
    for i in 0..m {
        spec.sample_into(&mut rng, &mut x[i * d..(i + 1) * d], &mut v[i * d..(i + 1) * d])?;
    }
    ParticleEnsemble::new(d, x, v)
}

fn check_kernel(spec: &InitialDensitySpec, kernel: &InteractionKernel) -> Result<usize> {
    let d = spec.dimension()?;
    if d != kernel.dimension() {
        return input(format!("density dimension {d} does not match kernel dimension {}", kernel.dimension()));
    }
    Ok(d)
}

/// Evolves an `M`-sample cloud of `ρ^in` along the self-consistent
/// characteristic flow.
pub fn solve_vlasov(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    m: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    solve_vlasov_with(spec, kernel, m, t_end, dt, seed, IntegrateOptions::default())
}

pub fn solve_vlasov_with(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    m: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    check_kernel(spec, kernel)?;
    if m < 2 {
        return input("reference cloud needs M >= 2 samples");
    }
    let cloud = sample_initial(spec, m, seed)?;
    dynamics::integrate_with(&cloud, kernel, t_end, dt, opts)
}

/// Reference cloud states at the requested (nondecreasing) times, on the
/// same step grid as [`solve_vlasov`].
#[allow(clippy::too_many_arguments)]
pub fn solve_vlasov_at(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    m: usize,
    times: &[f64],
    dt: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ParticleEnsemble>> {
    check_kernel(spec, kernel)?;
    if m < 2 {
        return input("reference cloud needs M >= 2 samples");
    }
    evolve_to_times(&sample_initial(spec, m, seed)?, kernel, times, dt, exec)
}

/// `K` i.i.d. draws of the first `n` particles of the `N`-body flow at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSampleSet {
    /// Marginal order.
    pub n: usize,
    pub t: f64,
    /// Particle count of the underlying system.
    #[serde(rename = "N")]
    pub big_n: usize,
    pub d: usize,
    /// Row-major `K × 2dn`; a row is `(x_1, v_1, …, x_n, v_n)`.
    pub samples: Vec<f64>,
    /// Seed of each row's run.
    pub seeds: Vec<u64>,
    pub seed_base: u64,
    pub kernel_id: String,
    /// True when rows pool all particles of each run (correlated rows).
    pub pooled: bool,
}

impl MarginalSampleSet {
    pub fn width(&self) -> usize {
        2 * self.d * self.n
    }

    pub fn k(&self) -> usize {
        self.samples.len() / self.width()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.samples[r * w..(r + 1) * w]
    }
}

/// Parameters shared by the marginal samplers.
#[derive(Debug, Clone, Copy)]
pub struct MarginalRequest {
    pub big_n: usize,
    pub n: usize,
    pub dt: f64,
    pub exec: Exec,
}

/// Samples of `ρ^t_{N;n}` by `K` independent `N`-body runs seeded
/// `seed_base + k`.
#[allow(clippy::too_many_arguments)]
pub fn marginal_samples(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    big_n: usize,
    n: usize,
    t: f64,
    k: usize,
    dt: f64,
    seed_base: u64,
) -> Result<MarginalSampleSet> {
    let req = MarginalRequest { big_n, n, dt, exec: Exec::default() };
    let mut sets = marginal_samples_at(spec, kernel, req, &[t], k, seed_base)?;
    Ok(sets.remove(0))
}

/// One sample set per requested time, all from the same `K` runs.
pub fn marginal_samples_at(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    req: MarginalRequest,
    times: &[f64],
    k: usize,
    seed_base: u64,
) -> Result<Vec<MarginalSampleSet>> {
    if k < 2 {
        return input("marginal sampling needs K >= 2 runs");
    }
    let seeds: Vec<u64> = (0..k as u64).map(|r| seed_base.wrapping_add(r)).collect();
    let mut sets = marginal_samples_for_seeds(spec, kernel, req, times, &seeds)?;
    for s in &mut sets {
        s.seed_base = seed_base;
    }
    Ok(sets)
}

/// Like [`marginal_samples_at`] with an explicit seed per row.
pub fn marginal_samples_for_seeds(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    req: MarginalRequest,
    times: &[f64],
    seeds: &[u64],
) -> Result<Vec<MarginalSampleSet>> {
    let d = check_kernel(spec, kernel)?;
    let MarginalRequest { big_n, n, dt, exec } = req;
    if n == 0 || n > big_n {
        return input(format!("marginal order must satisfy 1 <= n <= N, got n = {n}, N = {big_n}"));
    }
    if times.is_empty() {
        return input("at least one sampling time is required");
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let inner = if exec.is_parallel() && seeds.len() > 1 { Exec::Sequential } else { exec };
    let runs = exec.try_map_indexed(seeds.len(), |r| {
        let init = sample_initial(spec, big_n, seeds[r])?;
        evolve_to_times(&init, kernel, &sorted, dt, inner).map_err(|e| Error::Run { run: r, source: Box::new(e) })
    })?;
    let width = 2 * d * n;
    let mut sets = Vec::with_capacity(times.len());
    for &ti in &(0..times.len()).collect::<Vec<_>>() {
        let slot = order.iter().position(|&o| o == ti).unwrap();
        let mut samples = Vec::with_capacity(seeds.len() * width);
        for frames in &runs {
            let st = &frames[slot];
            for p in 0..n {
                samples.extend_from_slice(st.position(p));
                samples.extend_from_slice(st.velocity(p));
            }
        }
        sets.push(MarginalSampleSet {
            n,
            t: times[ti],
            big_n,
            d,
            samples,
            seeds: seeds.to_vec(),
            seed_base: seeds.first().copied().unwrap_or(0),
            kernel_id: kernel.id(),
            pooled: false,
        });
    }
    Ok(sets)
}

/// Cheap single-particle samples pooling all `N` particles of each of `runs`
/// runs. Rows from the same run are correlated; the result is flagged
/// `pooled`.
pub fn pooled_marginal_samples(
    spec: &InitialDensitySpec,
    kernel: &InteractionKernel,
    big_n: usize,
    t: f64,
    runs: usize,
    dt: f64,
    seed_base: u64,
) -> Result<MarginalSampleSet> {
    let d = check_kernel(spec, kernel)?;
    if runs == 0 || runs * big_n < 2 {
        return input("pooled sampling needs at least two rows");
    }
    let exec = Exec::default();
    let frames = exec.try_map_indexed(runs, |r| {
        let init = sample_initial(spec, big_n, seed_base.wrapping_add(r as u64))?;
        evolve_to_times(&init, kernel, &[t], dt, Exec::Sequential)
            .map_err(|e| Error::Run { run: r, source: Box::new(e) })
    })?;
    let mut samples = Vec::with_capacity(runs * big_n * 2 * d);
    for f in &frames {
        for p in 0..big_n {
            samples.extend_from_slice(f[0].position(p));
            samples.extend_from_slice(f[0].velocity(p));
        }
    }
    Ok(MarginalSampleSet {
        n: 1,
        t,
        big_n,
        d,
        samples,
        seeds: (0..runs as u64).map(|r| seed_base.wrapping_add(r)).collect(),
        seed_base,
        kernel_id: kernel.id(),
        pooled: true,
    })
}

/// Monte Carlo allowance `5/√M` on the mean-speed envelope.
pub fn mc_allowance(m: usize) -> f64 {
    5.0 / (m as f64).sqrt()
}

/// Checks the kinetic growth envelopes on every stored frame of a
/// reference cloud: mean speed `≤ e^{2γ₀t}·(mean speed at 0)·(1 + 5/√M)`, and
/// each `|Φ_v(t)| ≤ e^{2γ₀t}(‖v‖_{L∞(supp)} + ‖v‖_{L¹})`.
pub fn check_kinetic_bounds(
    traj: &Trajectory,
    kernel: &InteractionKernel,
    gamma0: f64,
    spec: &InitialDensitySpec,
) -> Result<BoundCheckReport> {
    let d = check_kernel(spec, kernel)?;
    if traj.kernel_id != kernel.id() {
        return input("trajectory was produced by a different kernel");
    }
    let init = traj.initial();
    if init.d() != d {
        return input("trajectory dimension does not match density");
    }
    let scale = spec.support_diameter().max(1.0);
    if (0..init.n()).any(|i| !spec.contains(init.position(i), init.velocity(i), 1e-12 * scale)) {
        return input("trajectory initial cloud is not supported on the given density");
    }
    if !(gamma0.is_finite() && gamma0 >= 0.0) {
        return input(format!("gamma0 must be finite and >= 0, got {gamma0}"));
    }
    let m = init.n();
    let support = spec.support_data()?;
    let allowance = 1.0 + mc_allowance(m);
    let mean_speed = |s: &ParticleEnsemble| (0..s.n()).map(|i| norm(s.velocity(i))).sum::<f64>() / s.n() as f64;
    let speed0 = mean_speed(init);
    let mut report = BoundCheckReport::new(gamma0, ENVELOPE_TOLERANCE);
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let growth = (2.0 * gamma0 * t).exp();
        report.push("mean_speed", *t, growth * speed0 * allowance, mean_speed(state));
        let max_speed = (0..state.n()).map(|i| norm(state.velocity(i))).fold(0.0, f64::max);
        report.push("characteristic_speed", *t, growth * (support.v_sup + support.v_l1), max_speed);
    }
    Ok(report)
}

/// Parameters of a flocking support envelope
/// `supp ρ^t ⊂ B(x̄ + t v̄, X) × B(v̄, V e^{-αt})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockingSupportFit {
    pub x_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    /// `X`.
    pub x_radius: f64,
    /// `V`.
    pub v_radius: f64,
    pub alpha: f64,
    /// `max_t (observed radius)/(V e^{-αt}) - 1`, clipped at 0.
    pub residual: f64,
    /// Root mean square of the log-linear fit residuals.
    pub rms_residual: f64,
}

/// Radii below this are excluded from the log-linear fit.
pub const FIT_RADIUS_FLOOR: f64 = 1e-10;

impl FlockingSupportFit {
    pub fn velocity_radius_at(&self, t: f64) -> f64 {
        self.v_radius * (-self.alpha * t).exp()
    }

    pub fn center_at(&self, t: f64) -> Vec<f64> {
        self.x_bar.iter().zip(&self.v_bar).map(|(x, v)| x + t * v).collect()
    }

    /// The fit with `V` inflated by the residual so the envelope contains
    /// every fitted frame.
    pub fn enveloping(&self) -> FlockingSupportFit {
        FlockingSupportFit { v_radius: self.v_radius * (1.0 + self.residual), residual: 0.0, ..self.clone() }
    }

    /// Euclidean distance in `ℝ^{2d}` from `(x, v)` to the envelope at time `t`.
    pub fn distance_outside(&self, t: f64, x: &[f64], v: &[f64]) -> f64 {
        let cx = self.center_at(t);
        let ox = (euclid(x, &cx) - self.x_radius).max(0.0);
        let ov = (euclid(v, &self.v_bar) - self.velocity_radius_at(t)).max(0.0);
        (ox * ox + ov * ov).sqrt()
    }
}

/// Fits the flocking envelope to a stored cloud trajectory: `v̄` is the final
/// mean velocity, `x̄` the initial mean position, `X` the largest distance to
/// `x̄ + t v̄`, and `(V, α)` the least-squares line through
/// `log max_i |v_i(t) - v̄|`.
pub fn fit_flocking_support(traj: &Trajectory) -> Result<FlockingSupportFit> {
    if traj.states.len() < 3 {
        return input(format!("flocking fit needs >= 3 frames, got {}", traj.states.len()));
    }
    let d = traj.initial().d();
    let mean_of = |data: &[f64]| -> Vec<f64> {
        let n = data.len() / d;
        let mut m = vec![0.0; d];
        for row in data.chunks(d) {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    };
    let v_bar = mean_of(traj.last().velocities());
    let x_bar = mean_of(traj.initial().positions());
    let mut x_radius: f64 = 0.0;
    let mut radii = Vec::with_capacity(traj.states.len());
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let c: Vec<f64> = x_bar.iter().zip(&v_bar).map(|(x, v)| x + t * v).collect();
        for i in 0..s.n() {
            x_radius = x_radius.max(euclid(s.position(i), &c));
        }
        radii.push((0..s.n()).map(|i| euclid(s.velocity(i), &v_bar)).fold(0.0, f64::max));
    }
    let usable: Vec<(f64, f64)> =
        traj.times.iter().zip(&radii).filter(|(_, r)| **r > FIT_RADIUS_FLOOR).map(|(t, r)| (*t, r.ln())).collect();
    let (v_radius, alpha, rms_residual) = if usable.len() >= 2 {
        let (slope, intercept, _) = least_squares(&usable);
        let ss: f64 = usable.iter().map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
        (intercept.exp(), -slope, (ss / usable.len() as f64).sqrt())
    } else {
        (radii.iter().cloned().fold(0.0, f64::max), 0.0, 0.0)
    };
    let v_radius = v_radius.max(f64::MIN_POSITIVE);
    let residual =
        traj.times.iter().zip(&radii).map(|(t, r)| r / (v_radius * (-alpha * t).exp()) - 1.0).fold(0.0, f64::max);
    Ok(FlockingSupportFit {
        x_bar,
        v_bar,
        x_radius: x_radius.max(f64::MIN_POSITIVE),
        v_radius,
        alpha,
        residual,
        rms_residual,
    })
}

/// Ordinary least squares `y = slope·x + intercept`; returns `(slope, intercept, r²)`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
