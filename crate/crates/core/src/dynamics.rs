//! N-particle flow: `ẋ_i = v_i`, `v̇_i = (1/N) Σ_j γ(x_i - x_j, v_j - v_i)`.
//!
//! The force sum runs over all `j` including `j = i` (that term is exactly
//! zero). Per-particle sums use a fixed eight-lane accumulator and a fixed
//! reduction tree, so results are bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::exec::Exec;
use crate::kernels::{rotate_into, GeneralForce, InteractionKernel, KernelForm, RateVisitor};

/// Default step size.
pub const DEFAULT_DT: f64 = 1e-2;

/// Diameters are computed exactly over all pairs up to this many particles.
pub const EXACT_DIAMETER_CAP: usize = 16_384;

const LANES: usize = 8;
const ROW_BLOCK: usize = 32;

/// `N` particles in `ℝ^d × ℝ^d`, stored row-major (`N × d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    d: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return input("dimension must be >= 1");
        }
        if positions.is_empty() || positions.len() % d != 0 || positions.len() != velocities.len() {
            return input(format!(
                "ensemble arrays of lengths {} and {} do not form N >= 1 rows of dimension {d}",
                positions.len(),
                velocities.len()
            ));
        }
        if positions.iter().chain(&velocities).any(|c| !c.is_finite()) {
            return input("ensemble contains non-finite entries");
        }
        Ok(Self { d, positions, velocities })
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|c| c.is_finite())
    }

    /// The first `n` particles as a new ensemble.
    pub fn head(&self, n: usize) -> ParticleEnsemble {
        let n = n.min(self.n());
        Self {
            d: self.d,
            positions: self.positions[..n * self.d].to_vec(),
            velocities: self.velocities[..n * self.d].to_vec(),
        }
    }
}

/// Integrator metadata carried by a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub name: String,
    pub dt: f64,
    /// Frames are stored every `frame_stride` steps (plus the final state).
    pub frame_stride: usize,
}

/// Stored frames of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleEnsemble>,
    pub scheme: Scheme,
    pub kernel_id: String,
}

impl Trajectory {
    pub fn initial(&self) -> &ParticleEnsemble {
        &self.states[0]
    }

    pub fn last(&self) -> &ParticleEnsemble {
        self.states.last().expect("trajectory has at least one frame")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub frame_stride: usize,
    pub exec: Exec,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { frame_stride: 1, exec: Exec::default() }
    }
}

struct Accel<'a> {
    x: &'a [f64],
    v: &'a [f64],
    d: usize,
    out: &'a mut [f64],
    exec: Exec,
}

impl RateVisitor for Accel<'_> {
    type Out = ();
    fn visit<F: Fn(f64) -> f64 + Sync + Copy>(self, rate: F) {
        pair_sums(self.x, self.v, self.d, self.out, self.exec, move |r2x, _| rate(r2x));
    }
}

/// Writes `(1/N) Σ_j γ(x_i - x_j, v_j - v_i)` for every `i` into `out`.
pub(crate) fn accelerations(kernel: &InteractionKernel, x: &[f64], v: &[f64], out: &mut [f64], exec: Exec) {
    let d = kernel.dimension();
    match kernel.form() {
        KernelForm::CuckerSmale(rate) => rate.visit(Accel { x, v, d, out, exec }),
        KernelForm::General(GeneralForce::Rotating { rate, cos, sin }) => {
            rate.visit(Accel { x, v, d, out: &mut *out, exec });
            let mut tmp = vec![0.0; d];
            for row in out.chunks_mut(d) {
                rotate_into(*cos, *sin, row, &mut tmp);
                row.copy_from_slice(&tmp);
            }
        }
        KernelForm::General(GeneralForce::Saturating { c }) => {
            let c = *c;
            pair_sums(x, v, d, out, exec, move |_, r2v| c / (1.0 + r2v.sqrt()));
        }
        KernelForm::General(GeneralForce::Null) => out.iter_mut().for_each(|o| *o = 0.0),
    }
}

/// `out_i = (1/N) Σ_j w(|x_i - x_j|², |v_j - v_i|²) (v_j - v_i)`.
fn pair_sums<W>(x: &[f64], v: &[f64], d: usize, out: &mut [f64], exec: Exec, w: W)
where
    W: Fn(f64, f64) -> f64 + Sync + Copy,
{
    match d {
        1 => pair_sums_d::<1, W>(x, v, out, exec, w),
        2 => pair_sums_d::<2, W>(x, v, out, exec, w),
        3 => pair_sums_d::<3, W>(x, v, out, exec, w),
        _ => pair_sums_dyn(x, v, d, out, exec, w),
    }
}

#[inline(always)]
fn reduce_lanes(a: &[f64; LANES]) -> f64 {
    ((a[0] + a[4]) + (a[2] + a[6])) + ((a[1] + a[5]) + (a[3] + a[7]))
}

/// Pair terms `w(|x_i - x_j|², |v_j - v_i|²)(v_j - v_i)` for the `LANES`
/// consecutive partners starting at `j`.
#[inline(always)]
fn lane_terms<const D: usize, W>(
    xi: &[f64; D],
    vi: &[f64; D],
    xs: &[f64],
    vs: &[f64],
    n: usize,
    j: usize,
    w: W,
) -> [[f64; LANES]; D]
where
    W: Fn(f64, f64) -> f64,
{
    let mut r2x = [0.0; LANES];
    let mut r2v = [0.0; LANES];
    let mut dv = [[0.0; LANES]; D];
    for c in 0..D {
        let xc: &[f64; LANES] = xs[c * n + j..c * n + j + LANES].try_into().unwrap();
        let vc: &[f64; LANES] = vs[c * n + j..c * n + j + LANES].try_into().unwrap();
        for l in 0..LANES {
            let dx = xi[c] - xc[l];
            dv[c][l] = vc[l] - vi[c];
            r2x[l] += dx * dx;
            r2v[l] += dv[c][l] * dv[c][l];
        }
    }
    let mut wt = [0.0; LANES];
    for l in 0..LANES {
        wt[l] = w(r2x[l], r2v[l]);
    }
    for c in 0..D {
        for l in 0..LANES {
            dv[c][l] *= wt[l];
        }
    }
    dv
}

#[inline(always)]
fn scalar_term<const D: usize, W>(
    xi: &[f64; D],
    vi: &[f64; D],
    xs: &[f64],
    vs: &[f64],
    n: usize,
    j: usize,
    w: W,
) -> [f64; D]
where
    W: Fn(f64, f64) -> f64,
{
    let mut r2x = 0.0;
    let mut r2v = 0.0;
    let mut dv = [0.0; D];
    for c in 0..D {
        let dx = xi[c] - xs[c * n + j];
        dv[c] = vs[c * n + j] - vi[c];
        r2x += dx * dx;
        r2v += dv[c] * dv[c];
    }
    let wt = w(r2x, r2v);
    dv.map(|d| d * wt)
}

/// Rows per block: a multiple of `LANES`, at least `ROW_BLOCK`, and at most
/// about 64 blocks.
fn block_rows(n: usize) -> usize {
    n.div_ceil(64).div_ceil(LANES).max(ROW_BLOCK / LANES) * LANES
}

/// Every supported weight is symmetric in the pair, so the term of `(i, j)`
/// is minus the term of `(j, i)`. Block `I` sums its own rows against
/// themselves and, once per pair, against all later rows, crediting the
/// later rows with the negated terms. Block outputs are reduced in block
/// order, so the result does not depend on the executor.
fn pair_sums_d<const D: usize, W>(x: &[f64], v: &[f64], out: &mut [f64], exec: Exec, w: W)
where
    W: Fn(f64, f64) -> f64 + Sync + Copy,
{
    let n = x.len() / D;
    // component-major copies so the j loop reads contiguous lanes
    let mut xs = vec![0.0; D * n];
    let mut vs = vec![0.0; D * n];
    for j in 0..n {
        for c in 0..D {
            xs[c * n + j] = x[j * D + c];
            vs[c * n + j] = v[j * D + c];
        }
    }
    let b = block_rows(n);
    let nb = n.div_ceil(b);
    let parts = exec.map_indexed(nb, |blk| {
        let r0 = blk * b;
        let r1 = (r0 + b).min(n);
        let off = n - r1;
        let mut rows = vec![0.0; (r1 - r0) * D];
        let mut cols = vec![0.0; D * off];
        for i in r0..r1 {
            let xi: [f64; D] = std::array::from_fn(|c| xs[c * n + i]);
            let vi: [f64; D] = std::array::from_fn(|c| vs[c * n + i]);
            let mut acc = [[0.0f64; LANES]; D];
            let mut tail = [0.0; D];
            let mut j = r0;
            while j + LANES <= r1 {
                let g = lane_terms(&xi, &vi, &xs, &vs, n, j, w);
                for c in 0..D {
                    for l in 0..LANES {
                        acc[c][l] += g[c][l];
                    }
                }
                j += LANES;
            }
            while j < r1 {
                let g = scalar_term(&xi, &vi, &xs, &vs, n, j, w);
                for c in 0..D {
                    tail[c] += g[c];
                }
                j += 1;
            }
            // r1 is a multiple of LANES whenever later rows exist
            let mut j = r1;
            while j + LANES <= n {
                let g = lane_terms(&xi, &vi, &xs, &vs, n, j, w);
                for c in 0..D {
                    let col: &mut [f64; LANES] =
                        (&mut cols[c * off + j - r1..c * off + j - r1 + LANES]).try_into().unwrap();
                    for l in 0..LANES {
                        acc[c][l] += g[c][l];
                        col[l] -= g[c][l];
                    }
                }
                j += LANES;
            }
            while j < n {
                let g = scalar_term(&xi, &vi, &xs, &vs, n, j, w);
                for c in 0..D {
                    tail[c] += g[c];
                    cols[c * off + j - r1] -= g[c];
                }
                j += 1;
            }
            for c in 0..D {
                rows[(i - r0) * D + c] = reduce_lanes(&acc[c]) + tail[c];
            }
        }
        (rows, cols)
    });
    out.iter_mut().for_each(|o| *o = 0.0);
    for (blk, (rows, cols)) in parts.iter().enumerate() {
        let r0 = blk * b;
        let r1 = (r0 + b).min(n);
        let off = n - r1;
        for (o, r) in out[r0 * D..r1 * D].iter_mut().zip(rows) {
            *o += r;
        }
        for j in 0..off {
            for c in 0..D {
                out[(r1 + j) * D + c] += cols[c * off + j];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv_n);
}

fn pair_sums_dyn<W>(x: &[f64], v: &[f64], d: usize, out: &mut [f64], exec: Exec, w: W)
where
    W: Fn(f64, f64) -> f64 + Sync + Copy,
{
    let n = x.len() / d;
    let inv_n = 1.0 / n as f64;
    exec.for_each_chunk_mut(out, ROW_BLOCK * d, |block, rows| {
        let mut dv = vec![0.0; d];
        for (r, row) in rows.chunks_mut(d).enumerate() {
            let i = block * ROW_BLOCK + r;
            row.iter_mut().for_each(|o| *o = 0.0);
            for j in 0..n {
                let mut r2x = 0.0;
                let mut r2v = 0.0;
                for c in 0..d {
                    let dx = x[i * d + c] - x[j * d + c];
                    dv[c] = v[j * d + c] - v[i * d + c];
                    r2x += dx * dx;
                    r2v += dv[c] * dv[c];
                }
                let wt = w(r2x, r2v);
                for c in 0..d {
                    row[c] += wt * dv[c];
                }
            }
            row.iter_mut().for_each(|o| *o *= inv_n);
        }
    });
}

fn check_dimension(state: &ParticleEnsemble, kernel: &InteractionKernel) -> Result<()> {
    if state.d() != kernel.dimension() {
        return input(format!(
            "ensemble dimension {} does not match kernel dimension {}",
            state.d(),
            kernel.dimension()
        ));
    }
    Ok(())
}

/// Time derivative `(Ẋ, V̇) = (V, G(X, V))`, returned in ensemble shape.
pub fn drift(state: &ParticleEnsemble, kernel: &InteractionKernel) -> Result<ParticleEnsemble> {
    check_dimension(state, kernel)?;
    let mut acc = vec![0.0; state.velocities.len()];
    accelerations(kernel, &state.positions, &state.velocities, &mut acc, Exec::default());
    Ok(ParticleEnsemble { d: state.d, positions: state.velocities.clone(), velocities: acc })
}

/// Scratch buffers for the classical fourth-order Runge-Kutta step.
pub(crate) struct Rk4<'k> {
    kernel: &'k InteractionKernel,
    exec: Exec,
    x_stage: Vec<f64>,
    v_stage: Vec<f64>,
    acc: Vec<f64>,
    dx_sum: Vec<f64>,
    dv_sum: Vec<f64>,
}

impl<'k> Rk4<'k> {
    pub(crate) fn new(kernel: &'k InteractionKernel, len: usize, exec: Exec) -> Self {
        Self {
            kernel,
            exec,
            x_stage: vec![0.0; len],
            v_stage: vec![0.0; len],
            acc: vec![0.0; len],
            dx_sum: vec![0.0; len],
            dv_sum: vec![0.0; len],
        }
    }

    pub(crate) fn step(&mut self, state: &mut ParticleEnsemble, h: f64) {
        let x = &mut state.positions;
        let v = &mut state.velocities;
        let len = x.len();
        // stage 1
        accelerations(self.kernel, x, v, &mut self.acc, self.exec);
        for k in 0..len {
            self.dx_sum[k] = v[k];
            self.dv_sum[k] = self.acc[k];
            self.x_stage[k] = x[k] + 0.5 * h * v[k];
            self.v_stage[k] = v[k] + 0.5 * h * self.acc[k];
        }
        // stages 2 and 3
        for coef in [0.5, 1.0] {
            accelerations(self.kernel, &self.x_stage, &self.v_stage, &mut self.acc, self.exec);
            for k in 0..len {
                let vk = self.v_stage[k];
                self.dx_sum[k] += 2.0 * vk;
                self.dv_sum[k] += 2.0 * self.acc[k];
                self.x_stage[k] = x[k] + coef * h * vk;
                self.v_stage[k] = v[k] + coef * h * self.acc[k];
            }
        }
        // stage 4
        accelerations(self.kernel, &self.x_stage, &self.v_stage, &mut self.acc, self.exec);
        for k in 0..len {
            self.dx_sum[k] += self.v_stage[k];
            self.dv_sum[k] += self.acc[k];
            x[k] += h / 6.0 * self.dx_sum[k];
            v[k] += h / 6.0 * self.dv_sum[k];
        }
    }
}

fn validate_step(kernel: &InteractionKernel, t_end: f64, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return input(format!("dt must be positive, got {dt}"));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return input(format!("t_end must be finite and >= 0, got {t_end}"));
    }
    let cap = stability_cap(kernel);
    if dt > cap {
        return input(format!("dt = {dt} exceeds the stability cap 0.1/gamma0 = {cap}"));
    }
    Ok(())
}

/// Largest admissible step, `0.1 / max(γ₀, 1e-6)`.
pub fn stability_cap(kernel: &InteractionKernel) -> f64 {
    0.1 / kernel.gamma0().max(1e-6)
}

/// Grid decomposition of `[0, t_end]`: number of full steps and the length of
/// a trailing partial step (0 when `t_end` is on the grid).
fn grid(t_end: f64, dt: f64) -> (usize, f64) {
    let ratio = t_end / dt;
    let full = (ratio + 1e-9).floor() as usize;
    let rest = t_end - full as f64 * dt;
    if rest > 1e-12 * t_end.max(1.0) {
        (full, rest)
    } else {
        (full, 0.0)
    }
}

/// Integrates with default options (every step stored, default execution).
pub fn integrate(initial: &ParticleEnsemble, kernel: &InteractionKernel, t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_with(initial, kernel, t_end, dt, IntegrateOptions::default())
}

/// Fixed-step classical RK4 over `[0, t_end]`, with a final partial step when
/// `t_end` is not a multiple of `dt`.
pub fn integrate_with(
    initial: &ParticleEnsemble,
    kernel: &InteractionKernel,
    t_end: f64,
    dt: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory> {
    check_dimension(initial, kernel)?;
    validate_step(kernel, t_end, dt)?;
    let stride = opts.frame_stride.max(1);
    let (full, rest) = grid(t_end, dt);
    let mut rk = Rk4::new(kernel, initial.positions.len(), opts.exec);
    let mut state = initial.clone();
    let mut times = vec![0.0];
    let mut states = vec![initial.clone()];
    for step in 1..=full {
        rk.step(&mut state, dt);
        let t = step as f64 * dt;
        if !state.is_finite() {
            return Err(Error::Divergence { step, time: t });
        }
        if step % stride == 0 || (step == full && rest == 0.0) {
            times.push(t);
            states.push(state.clone());
        }
    }
    if rest > 0.0 {
        rk.step(&mut state, rest);
        if !state.is_finite() {
            return Err(Error::Divergence { step: full + 1, time: t_end });
        }
        times.push(t_end);
        states.push(state);
    }
    Ok(Trajectory {
        times,
        states,
        scheme: Scheme { name: "rk4".into(), dt, frame_stride: stride },
        kernel_id: kernel.id(),
    })
}

/// States at each of the nondecreasing `times`. Grid times reproduce
/// [`integrate_with`] bit for bit; off-grid times take a partial step from the
/// preceding grid point without disturbing the grid.
pub fn evolve_to_times(
    initial: &ParticleEnsemble,
    kernel: &InteractionKernel,
    times: &[f64],
    dt: f64,
    exec: Exec,
) -> Result<Vec<ParticleEnsemble>> {
    check_dimension(initial, kernel)?;
    if times.windows(2).any(|w| w[1] < w[0]) {
        return input("requested times must be nondecreasing");
    }
    let t_max = times.last().copied().unwrap_or(0.0);
    validate_step(kernel, t_max, dt)?;
    if times.first().is_some_and(|t| *t < 0.0) {
        return input("requested times must be >= 0");
    }
    let mut rk = Rk4::new(kernel, initial.positions.len(), exec);
    let mut state = initial.clone();
    let mut step = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let (full, rest) = grid(t, dt);
        while step < full {
            rk.step(&mut state, dt);
            step += 1;
            if !state.is_finite() {
                return Err(Error::Divergence { step, time: step as f64 * dt });
            }
        }
        if rest > 0.0 {
            let mut partial = state.clone();
            rk.step(&mut partial, rest);
            if !partial.is_finite() {
                return Err(Error::Divergence { step: step + 1, time: t });
            }
            out.push(partial);
        } else {
            out.push(state.clone());
        }
    }
    Ok(out)
}

/// Ensemble-level quantities tracked along runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDiagnostics {
    pub position_diameter: f64,
    pub velocity_diameter: f64,
    pub total_momentum: Vec<f64>,
    pub abs_velocity_sum: f64,
    pub max_speed: f64,
    /// False when the diameters come from random pair sampling.
    pub exact: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `max_{i,j} |p_i - p_j|` over rows of a row-major array; the flag is false
/// when the value is a max over 10⁶ sampled pairs.
pub fn diameter(points: &[f64], d: usize) -> (f64, bool) {
    let n = points.len() / d;
    if d == 1 {
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        return (if n == 0 { 0.0 } else { hi - lo }, true);
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    if n <= EXACT_DIAMETER_CAP {
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(dist(row(i), row(j)));
            }
        }
        return (best, true);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1a3);
    let mut best: f64 = 0.0;
    for _ in 0..1_000_000 {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        best = best.max(dist(row(i), row(j)));
    }
    (best, false)
}

pub fn diagnostics(state: &ParticleEnsemble) -> DynamicsDiagnostics {
    let d = state.d();
    let (dx, ex) = diameter(state.positions(), d);
    let (dv, ev) = diameter(state.velocities(), d);
    let mut momentum = vec![0.0; d];
    let mut abs_sum = 0.0;
    let mut max_speed: f64 = 0.0;
    for i in 0..state.n() {
        let vi = state.velocity(i);
        for (m, c) in momentum.iter_mut().zip(vi) {
            *m += c;
        }
        let s = norm(vi);
        abs_sum += s;
        max_speed = max_speed.max(s);
    }
    DynamicsDiagnostics {
        position_diameter: dx,
        velocity_diameter: dv,
        total_momentum: momentum,
        abs_velocity_sum: abs_sum,
        max_speed,
        exact: ex && ev,
    }
}

/// One envelope comparison at one stored time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub time: f64,
    pub bound: f64,
    pub observed: f64,
    /// `bound - observed`.
    pub margin: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub gamma0: f64,
    pub relative_tolerance: f64,
    pub checks: Vec<BoundCheck>,
}

impl BoundCheckReport {
    pub(crate) fn new(gamma0: f64, relative_tolerance: f64) -> Self {
        Self { gamma0, relative_tolerance, checks: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: &str, time: f64, bound: f64, observed: f64) {
        let margin = bound - observed;
        let tol = self.relative_tolerance * bound.abs().max(observed.abs()).max(1.0);
        self.checks.push(BoundCheck { name: name.to_string(), time, bound, observed, margin, flagged: margin < -tol });
    }

    pub fn flag_count(&self) -> usize {
        self.checks.iter().filter(|c| c.flagged).count()
    }

    pub fn passed(&self) -> bool {
        self.flag_count() == 0
    }

    pub fn min_margin(&self, name: &str) -> Option<f64> {
        self.checks.iter().filter(|c| c.name == name).map(|c| c.margin).reduce(f64::min)
    }
}

/// Relative tolerance of the a priori envelope checks.
pub const ENVELOPE_TOLERANCE: f64 = 1e-8;

/// `(e^{2γ₀t} - 1) / (2γ₀)`, with the `γ₀ → 0` limit `t`.
pub(crate) fn growth_integral(gamma0: f64, t: f64) -> f64 {
    if gamma0 == 0.0 {
        t
    } else {
        (2.0 * gamma0 * t).exp_m1() / (2.0 * gamma0)
    }
}

/// Checks the Gronwall growth envelopes of the particle flow on every stored
/// frame: `Σ|v_i(t)| ≤ e^{2γ₀t} Σ|v_i(0)|`, `max|v_i(t)| ≤ e^{2γ₀t} max|v_j(0)|`
/// and `|x_i(t) - x_i(0)| ≤ max|v_j(0)| (e^{2γ₀t} - 1)/(2γ₀)`.
pub fn check_apriori_bounds(traj: &Trajectory, kernel: &InteractionKernel, gamma0: f64) -> Result<BoundCheckReport> {
    if traj.kernel_id != kernel.id() {
        return input("trajectory was produced by a different kernel");
    }
    if traj.initial().d() != kernel.dimension() {
        return input("trajectory dimension does not match kernel");
    }
    if !(gamma0.is_finite() && gamma0 >= 0.0) {
        return input(format!("gamma0 must be finite and >= 0, got {gamma0}"));
    }
    let init = traj.initial();
    let d0 = diagnostics_speeds(init);
    let mut report = BoundCheckReport::new(gamma0, ENVELOPE_TOLERANCE);
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let growth = (2.0 * gamma0 * t).exp();
        let now = diagnostics_speeds(state);
        report.push("abs_velocity_sum", *t, growth * d0.0, now.0);
        report.push("max_speed", *t, growth * d0.1, now.1);
        let displacement = (0..state.n()).map(|i| dist(state.position(i), init.position(i))).fold(0.0, f64::max);
        report.push("displacement", *t, d0.1 * growth_integral(gamma0, *t), displacement);
    }
    Ok(report)
}

fn diagnostics_speeds(state: &ParticleEnsemble) -> (f64, f64) {
    (0..state.n()).map(|i| norm(state.velocity(i))).fold((0.0, 0.0f64), |(s, m), v| (s + v, m.max(v)))
}

/// Largest frame-to-frame increase of the velocity diameter, and whether all
/// diameters were exact.
pub fn velocity_diameter_increase(traj: &Trajectory) -> (f64, bool) {
    let mut exact = true;
    let series: Vec<f64> = traj
        .states
        .iter()
        .map(|s| {
            let (dv, e) = diameter(s.velocities(), s.d());
            exact &= e;
            dv
        })
        .collect();
    let worst = series.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    (worst, exact)
}

/// `max_t ‖Σv_i(t) - Σv_i(0)‖`.
pub fn momentum_drift(traj: &Trajectory) -> f64 {
    let m0 = diagnostics(traj.initial()).total_momentum;
    traj.states
        .iter()
        .map(|s| {
            let d = s.d();
            let mut m = vec![0.0; d];
            for i in 0..s.n() {
                for (a, b) in m.iter_mut().zip(s.velocity(i)) {
                    *a += b;
                }
            }
            dist(&m, &m0)
        })
        .fold(0.0, f64::max)
}
