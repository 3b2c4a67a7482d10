//! Interaction force laws.
//!
//! A kernel is the pair force `γ(dx, dv)` felt by particle `i` from particle
//! `j`, with `dx = x_i - x_j` and `dv = v_j - v_i` (the velocity of the
//! neighbour relative to `i`). With that convention the Cucker-Smale kernel is
//! `γ(dx, dv) = ψ(dx)·dv` and relaxes velocities toward each other.
//!
//! Kernels are built from serializable descriptors so that every constant the
//! convergence bounds consume (`γ₀`, sup norms, Lipschitz data) is derived from
//! an auditable closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input, Error, Result};

/// Radial communication rate family, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateDescriptor {
    /// `ψ ≡ c`.
    Constant { c: f64 },
    /// `ψ(x) = K / (1 + |x|²)^β`.
    InversePower {
        #[serde(rename = "K")]
        k: f64,
        beta: f64,
    },
    /// Piecewise-linear `ψ(r)` through `(radii[k], values[k])`, constant past
    /// the last radius. `radii` must start at 0 and increase strictly.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

/// Force law descriptor, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelDescriptor {
    /// `γ(x, v) = ψ(x) v`.
    CuckerSmale { psi: RateDescriptor, d: usize },
    /// `γ(x, v) = c v / (1 + |v|)`: bounded and globally Lipschitz.
    Saturating {
        c: f64,
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma0: Option<f64>,
    },
    /// `γ(x, v) = ψ(x) R_θ v` where `R_θ` rotates the first two coordinates
    /// (for `d = 1` it scales by `cos θ`). `θ = π` gives velocity repulsion.
    Rotating {
        psi: RateDescriptor,
        angle: f64,
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma0: Option<f64>,
    },
    /// `γ ≡ 0`: free streaming.
    Null { d: usize },
}

impl KernelDescriptor {
    pub fn dimension(&self) -> usize {
        match self {
            KernelDescriptor::CuckerSmale { d, .. }
            | KernelDescriptor::Saturating { d, .. }
            | KernelDescriptor::Rotating { d, .. }
            | KernelDescriptor::Null { d } => *d,
        }
    }

    /// Stable hex digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("descriptor serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex::encode(&hash[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PowerKind {
    Zero,
    Quarter,
    Half,
    One,
    General(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum RateFamily {
    Constant(f64),
    InversePower { k: f64, power: PowerKind },
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

/// A validated radial communication rate `ψ(x) = ψ̃(|x|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunicationRate {
    family: RateFamily,
    sup_norm: f64,
    lip_const: f64,
    nonincreasing: bool,
}

impl CommunicationRate {
    pub fn from_descriptor(desc: &RateDescriptor) -> Result<Self> {
        match desc {
            RateDescriptor::Constant { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return input(format!("constant rate must be positive and finite, got {c}"));
                }
                Ok(Self { family: RateFamily::Constant(*c), sup_norm: *c, lip_const: 0.0, nonincreasing: true })
            }
            RateDescriptor::InversePower { k, beta } => {
                if !(k.is_finite() && *k > 0.0) {
                    return input(format!("inverse-power K must be positive, got {k}"));
                }
                if !(beta.is_finite() && *beta >= 0.0) {
                    return input(format!("inverse-power beta must be >= 0, got {beta}"));
                }
                let power = match *beta {
                    b if b == 0.0 => PowerKind::Zero,
                    b if b == 0.25 => PowerKind::Quarter,
                    b if b == 0.5 => PowerKind::Half,
                    b if b == 1.0 => PowerKind::One,
                    b => PowerKind::General(b),
                };
                // max of |d/dr K (1+r²)^-β| is reached at r² = 1/(2β+1)
                let lip = if *beta == 0.0 {
                    0.0
                } else {
                    let r2 = 1.0 / (2.0 * beta + 1.0);
                    2.0 * beta * k * r2.sqrt() * (1.0 + r2).powf(-beta - 1.0)
                };
                Ok(Self {
                    family: RateFamily::InversePower { k: *k, power },
                    sup_norm: *k,
                    lip_const: lip,
                    nonincreasing: true,
                })
            }
            RateDescriptor::Tabulated { radii, values } => {
                if radii.len() < 2 || radii.len() != values.len() {
                    return input("tabulated rate needs >= 2 matching (radius, value) samples");
                }
                if radii[0] != 0.0 {
                    return input("tabulated rate radii must start at 0");
                }
                if radii.windows(2).any(|w| !(w[1] > w[0])) || radii.iter().any(|r| !r.is_finite()) {
                    return input("tabulated rate radii must be finite and strictly increasing");
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return input("tabulated rate values must be positive and finite");
                }
                let sup_norm = values.iter().cloned().fold(0.0, f64::max);
                let lip_const = radii
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(r, v)| ((v[1] - v[0]) / (r[1] - r[0])).abs())
                    .fold(0.0, f64::max);
                let nonincreasing = values.windows(2).all(|w| w[1] <= w[0]);
                if !nonincreasing {
                    log::warn!("tabulated communication rate is not radially nonincreasing");
                }
                Ok(Self {
                    family: RateFamily::Tabulated { radii: radii.clone(), values: values.clone() },
                    sup_norm,
                    lip_const,
                    nonincreasing,
                })
            }
        }
    }

    /// `‖ψ‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Global Lipschitz constant of `ψ`.
    pub fn lip_const(&self) -> f64 {
        self.lip_const
    }

    /// False for a tabulated rate whose samples increase somewhere.
    pub fn is_nonincreasing(&self) -> bool {
        self.nonincreasing
    }

    /// `ψ` evaluated at squared radius `r2 = |x|²`.
    #[inline]
    pub fn at_r2(&self, r2: f64) -> f64 {
        match &self.family {
            RateFamily::Constant(c) => *c,
            RateFamily::InversePower { k, power } => k * inverse_power(*power, r2),
            RateFamily::Tabulated { radii, values } => tabulated(radii, values, r2.sqrt()),
        }
    }

    /// `ψ(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.at_r2(x.iter().map(|c| c * c).sum())
    }

    /// Hands a monomorphized `r2 -> ψ` closure to `visitor`, keeping the
    /// family dispatch out of pair loops.
    pub(crate) fn visit<V: RateVisitor>(&self, visitor: V) -> V::Out {
        match &self.family {
            RateFamily::Constant(c) => {
                let c = *c;
                visitor.visit(move |_r2: f64| c)
            }
            RateFamily::InversePower { k, power } => {
                let k = *k;
                match *power {
                    PowerKind::Zero => visitor.visit(move |_r2: f64| k),
                    PowerKind::Quarter => visitor.visit(move |r2: f64| k / (1.0 + r2).sqrt().sqrt()),
                    PowerKind::Half => visitor.visit(move |r2: f64| k / (1.0 + r2).sqrt()),
                    PowerKind::One => visitor.visit(move |r2: f64| k / (1.0 + r2)),
                    PowerKind::General(b) => visitor.visit(move |r2: f64| k * (1.0 + r2).powf(-b)),
                }
            }
            RateFamily::Tabulated { radii, values } => {
                visitor.visit(move |r2: f64| tabulated(radii, values, r2.sqrt()))
            }
        }
    }
}

/// Receives a concrete rate closure from [`CommunicationRate::visit`].
pub(crate) trait RateVisitor {
    type Out;
    fn visit<F: Fn(f64) -> f64 + Sync + Copy>(self, rate: F) -> Self::Out;
}

#[inline]
fn inverse_power(power: PowerKind, r2: f64) -> f64 {
    match power {
        PowerKind::Zero => 1.0,
        PowerKind::Quarter => 1.0 / (1.0 + r2).sqrt().sqrt(),
        PowerKind::Half => 1.0 / (1.0 + r2).sqrt(),
        PowerKind::One => 1.0 / (1.0 + r2),
        PowerKind::General(b) => (1.0 + r2).powf(-b),
    }
}

#[inline]
fn tabulated(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let last = radii.len() - 1;
    if r >= radii[last] {
        return values[last];
    }
    let k = radii.partition_point(|&q| q <= r) - 1;
    let w = (r - radii[k]) / (radii[k + 1] - radii[k]);
    values[k] + w * (values[k + 1] - values[k])
}

/// Non-Cucker-Smale force laws.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneralForce {
    Saturating { c: f64 },
    Rotating { rate: CommunicationRate, cos: f64, sin: f64 },
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    CuckerSmale(CommunicationRate),
    General(GeneralForce),
}

/// A validated force law with its certified constants.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    descriptor: KernelDescriptor,
    form: KernelForm,
    d: usize,
    gamma0: f64,
}

impl InteractionKernel {
    pub fn new(descriptor: KernelDescriptor) -> Result<Self> {
        let d = descriptor.dimension();
        if d == 0 {
            return input("kernel dimension must be >= 1");
        }
        let check_declared = |natural: f64, declared: Option<f64>| -> Result<f64> {
            match declared {
                None => Ok(natural),
                Some(g) if g.is_finite() && g >= natural => Ok(g),
                Some(g) => input(format!("declared gamma0 = {g} is below the force law's own constant {natural}")),
            }
        };
        let (form, gamma0) = match &descriptor {
            KernelDescriptor::CuckerSmale { psi, .. } => {
                let rate = CommunicationRate::from_descriptor(psi)?;
                let g = rate.sup_norm();
                (KernelForm::CuckerSmale(rate), g)
            }
            KernelDescriptor::Saturating { c, gamma0, .. } => {
                if !(c.is_finite() && *c >= 0.0) {
                    return input(format!("saturating c must be >= 0, got {c}"));
                }
                (KernelForm::General(GeneralForce::Saturating { c: *c }), check_declared(*c, *gamma0)?)
            }
            KernelDescriptor::Rotating { psi, angle, gamma0, .. } => {
                if !angle.is_finite() {
                    return input("rotation angle must be finite");
                }
                let rate = CommunicationRate::from_descriptor(psi)?;
                let g = check_declared(rate.sup_norm(), *gamma0)?;
                let (sin, cos) = angle.sin_cos();
                (KernelForm::General(GeneralForce::Rotating { rate, cos, sin }), g)
            }
            KernelDescriptor::Null { .. } => (KernelForm::General(GeneralForce::Null), 0.0),
        };
        Ok(Self { descriptor, form, d, gamma0 })
    }

    /// Strict Cucker-Smale kernel in dimension `d`.
    pub fn cucker_smale(psi: RateDescriptor, d: usize) -> Result<Self> {
        Self::new(KernelDescriptor::CuckerSmale { psi, d })
    }

    pub fn descriptor(&self) -> &KernelDescriptor {
        &self.descriptor
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Digest of the descriptor, used to tag trajectories and sample files.
    pub fn id(&self) -> String {
        self.descriptor.digest()
    }

    /// The communication rate for Cucker-Smale kernels.
    pub fn rate(&self) -> Option<&CommunicationRate> {
        match &self.form {
            KernelForm::CuckerSmale(r) => Some(r),
            KernelForm::General(_) => None,
        }
    }

    pub fn is_cucker_smale(&self) -> bool {
        matches!(self.form, KernelForm::CuckerSmale(_))
    }

    /// `sup |γ|` when the force is bounded.
    pub fn sup_norm(&self) -> Option<f64> {
        match &self.form {
            KernelForm::General(GeneralForce::Saturating { c }) => Some(*c),
            KernelForm::General(GeneralForce::Null) => Some(0.0),
            _ => None,
        }
    }

    /// Global Lipschitz constant when the force is globally Lipschitz.
    pub fn global_lipschitz(&self) -> Option<f64> {
        match &self.form {
            KernelForm::General(GeneralForce::Saturating { c }) => Some(*c),
            KernelForm::General(GeneralForce::Null) => Some(0.0),
            KernelForm::CuckerSmale(r) if r.lip_const() == 0.0 => Some(r.sup_norm()),
            _ => None,
        }
    }

    /// Writes `γ(dx, dv)` into `out` without dimension checks.
    #[inline]
    pub fn force_into(&self, dx: &[f64], dv: &[f64], out: &mut [f64]) {
        match &self.form {
            KernelForm::CuckerSmale(rate) => {
                let p = rate.eval(dx);
                for (o, v) in out.iter_mut().zip(dv) {
                    *o = p * v;
                }
            }
            KernelForm::General(GeneralForce::Saturating { c }) => {
                let norm = dv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = c / (1.0 + norm);
                for (o, v) in out.iter_mut().zip(dv) {
                    *o = s * v;
                }
            }
            KernelForm::General(GeneralForce::Rotating { rate, cos, sin }) => {
                let p = rate.eval(dx);
                rotate_into(*cos, *sin, dv, out);
                for o in out.iter_mut() {
                    *o *= p;
                }
            }
            KernelForm::General(GeneralForce::Null) => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    /// Interaction force `γ(dx, dv)`.
    pub fn eval_force(&self, dx: &[f64], dv: &[f64]) -> Result<Vec<f64>> {
        if dx.len() != self.d || dv.len() != self.d {
            return input(format!(
                "force arguments have lengths ({}, {}), kernel dimension is {}",
                dx.len(),
                dv.len(),
                self.d
            ));
        }
        let mut out = vec![0.0; self.d];
        self.force_into(dx, dv, &mut out);
        Ok(out)
    }

    /// The sublinearity constant `γ₀` with `|γ(x, v)| ≤ γ₀ |v|`.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Upper estimate of `sup Lip(γ)` over arguments with `|dv| ≤ 2·velocity_radius`.
    ///
    /// Closed forms are used where available; with `sample_budget > 0` a
    /// seeded central-difference scan also runs and the larger value is
    /// returned.
    pub fn lipschitz_on_region(&self, velocity_radius: f64, sample_budget: usize, seed: u64) -> Result<f64> {
        if !(velocity_radius.is_finite() && velocity_radius >= 0.0) {
            return input(format!("velocity radius must be finite and >= 0, got {velocity_radius}"));
        }
        let closed = match &self.form {
            // |∇(ψ(x) v)| ≤ ψ + |v| Lip(ψ) with |v| ≤ 2R
            KernelForm::CuckerSmale(rate) | KernelForm::General(GeneralForce::Rotating { rate, .. }) => {
                Some(rate.sup_norm() + 2.0 * velocity_radius * rate.lip_const())
            }
            KernelForm::General(GeneralForce::Null) => Some(0.0),
            KernelForm::General(GeneralForce::Saturating { .. }) => None,
        };
        if sample_budget == 0 {
            return closed.ok_or_else(|| {
                Error::Unsupported("no closed-form Lipschitz constant; sample_budget must be > 0".into())
            });
        }
        let scanned = self.scan_lipschitz(velocity_radius, sample_budget, seed);
        Ok(closed.map_or(scanned, |c| c.max(scanned)))
    }

    /// Max over sampled points of the spectral norm of the central-difference
    /// Jacobian of `γ`.
    fn scan_lipschitz(&self, velocity_radius: f64, samples: usize, seed: u64) -> f64 {
        let d = self.d;
        let v_ball = 2.0 * velocity_radius;
        let scale = v_ball.max(1.0);
        let h = 1e-4 * scale;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = vec![0.0; 2 * d];
        let mut zp = vec![0.0; 2 * d];
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        let mut jac = vec![0.0; d * 2 * d];
        let mut best: f64 = 0.0;
        for _ in 0..samples {
            sample_ball(&mut rng, scale, &mut z[..d]);
            sample_ball(&mut rng, v_ball, &mut z[d..]);
            for col in 0..2 * d {
                zp.copy_from_slice(&z);
                zp[col] += h;
                self.force_into(&zp[..d], &zp[d..], &mut fp);
                zp[col] -= 2.0 * h;
                self.force_into(&zp[..d], &zp[d..], &mut fm);
                for row in 0..d {
                    jac[row * 2 * d + col] = (fp[row] - fm[row]) / (2.0 * h);
                }
            }
            best = best.max(spectral_norm(&jac, d, 2 * d));
        }
        best
    }
}

pub(crate) fn rotate_into(cos: f64, sin: f64, v: &[f64], out: &mut [f64]) {
    match v.len() {
        1 => out[0] = cos * v[0],
        _ => {
            out.copy_from_slice(v);
            out[0] = cos * v[0] - sin * v[1];
            out[1] = sin * v[0] + cos * v[1];
        }
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64, out: &mut [f64]) {
    if radius == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut norm2 = 0.0;
    for o in out.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *o = g;
        norm2 += g * g;
    }
    let norm = norm2.sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / out.len() as f64);
    out.iter_mut().for_each(|o| *o *= r / norm);
}

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `A Aᵀ`.
fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    let mut gram = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            gram[i * rows + j] = (0..cols).map(|k| a[i * cols + k] * a[j * cols + k]).sum();
        }
    }
    if rows == 1 {
        return gram[0].sqrt();
    }
    let mut x = vec![1.0; rows];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let y: Vec<f64> = (0..rows).map(|i| (0..rows).map(|j| gram[i * rows + j] * x[j]).sum()).collect();
        let n = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        let next = n / x.iter().map(|c| c * c).sum::<f64>().sqrt();
        x = y.into_iter().map(|c| c / n).collect();
        if (next - lambda).abs() <= 1e-14 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}
