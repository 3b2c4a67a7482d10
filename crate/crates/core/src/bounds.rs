//! Explicit convergence constants `C(t)` with `W₂(ρ^t_{N;1}, ρ^t) ≤ C(t) N^{-1/2}`.
//!
//! Every evaluator computes its constant twice: a direct form and an
//! independent log-domain form. The direct value is reported unless it
//! overflows, in which case the log form is exponentiated; values beyond
//! `f64::MAX` saturate to `+∞` and record the saturation time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::meanfield::FlockingSupportFit;

/// Support constants of `ρ^in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportData {
    /// `sup |v|` over the support.
    pub v_sup: f64,
    /// `∫|v| ρ^in`.
    pub v_l1: f64,
    /// `v̄ = ∫v ρ^in`.
    pub vbar: Vec<f64>,
    /// Diameter of the support in `ℝ^{2d}`.
    pub supp_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flock: Option<FlockingSupportFit>,
}

impl SupportData {
    pub fn vbar_norm(&self) -> f64 {
        self.vbar.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.v_sup) && ok(self.v_l1) && ok(self.supp_size)) || self.vbar.iter().any(|c| !c.is_finite()) {
            return input("support constants must be finite and nonnegative");
        }
        if self.vbar_norm() > self.v_sup * (1.0 + 1e-12) + 1e-300 {
            return input("|vbar| exceeds v_sup");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// Strict Cucker-Smale constant.
    Main,
    /// General integral constant with a supplied support profile.
    MainSublinear,
    /// Bounded, globally Lipschitz force.
    GeneralLipschitz,
    /// Bounded in `x`, sublinear in `v`, explicit double exponential.
    SublinearExplicit,
    /// Constant under a flocking support envelope.
    FlockingCdet,
}

/// A labeled second reading of the same constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternateEvaluation {
    pub label: String,
    #[serde(rename = "C_t")]
    pub c_t: f64,
    pub auxiliary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub theorem: Theorem,
    pub t: f64,
    #[serde(rename = "C_t")]
    pub c_t: f64,
    pub rate_exponent: f64,
    pub auxiliary: BTreeMap<String, f64>,
    /// `C_t` from the log-domain path.
    #[serde(rename = "C_t_dual")]
    pub c_t_dual: f64,
    /// First time at which the constant exceeds `f64::MAX`, when saturated.
    pub saturated_at: Option<f64>,
    pub alternate: Option<AlternateEvaluation>,
}

impl BoundEvaluation {
    /// `C(t)·N^{-1/2}`.
    pub fn bound(&self, n: usize) -> f64 {
        self.c_t * (n as f64).powf(self.rate_exponent)
    }

    pub fn saturated(&self) -> bool {
        self.c_t.is_infinite()
    }

    /// Relative disagreement between the two evaluation paths.
    pub fn dual_disagreement(&self) -> f64 {
        rel_diff(self.c_t, self.c_t_dual)
    }
}

/// Relative difference that treats equal infinities and exact zeros as agreeing.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return input(format!("bound time must be finite and >= 0, got {t}"));
    }
    Ok(())
}

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return input(format!("{name} must be finite and >= 0, got {x}"));
    }
    Ok(())
}

/// `ln(e^x - 1)` for `x > 0`, written as `x + ln(1 - e^{-x})`.
fn ln_expm1(x: f64) -> f64 {
    x + (-(-x).exp_m1()).ln()
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn finish(
    theorem: Theorem,
    t: f64,
    direct: f64,
    ln_c: impl Fn(f64) -> f64,
    auxiliary: BTreeMap<String, f64>,
) -> BoundEvaluation {
    let ln_t = ln_c(t);
    let dual = if t == 0.0 { 0.0 } else { ln_t.exp() };
    let c_t = if direct.is_finite() { direct } else { dual };
    let saturated_at = c_t.is_infinite().then(|| saturation_time(&ln_c, t));
    BoundEvaluation { theorem, t, c_t, rate_exponent: -0.5, auxiliary, c_t_dual: dual, saturated_at, alternate: None }
}

/// Bisection for the first `s ≤ t` with `ln C(s) ≥ ln f64::MAX`.
fn saturation_time(ln_c: &impl Fn(f64) -> f64, t: f64) -> f64 {
    let target = f64::MAX.ln();
    let (mut lo, mut hi) = (0.0, t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ln_c(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn aux(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Strict Cucker-Smale constant
/// `C(t) = 4‖ψ‖²_∞ (2|v̄| + |supp|) ((e^{Lt} - 1)/L)^{1/2}`,
/// `L = 2(1 + 8‖ψ‖²_∞ ‖v‖²_{L∞})`.
pub fn cs_bound(psi_sup: f64, support: &SupportData, t: f64) -> Result<BoundEvaluation> {
    check_time(t)?;
    support.validate()?;
    if !(psi_sup.is_finite() && psi_sup > 0.0) {
        return input(format!("psi_sup must be finite and > 0, got {psi_sup}"));
    }
    let psi2 = psi_sup * psi_sup;
    let l = 2.0 * (1.0 + 8.0 * psi2 * support.v_sup * support.v_sup);
    let pre = 2.0 * support.vbar_norm() + support.supp_size;
    let direct = 4.0 * psi2 * pre * ((l * t).exp_m1() / l).sqrt();
    let ln_c = |s: f64| 4f64.ln() + 2.0 * psi_sup.ln() + ln_or_neg_inf(pre) + 0.5 * (ln_expm1(l * s) - l.ln());
    Ok(finish(
        Theorem::Main,
        t,
        direct,
        ln_c,
        aux(&[
            ("L", l),
            ("psi_sup", psi_sup),
            ("v_sup", support.v_sup),
            ("vbar_norm", support.vbar_norm()),
            ("supp_size", support.supp_size),
        ]),
    ))
}

/// Bounded, globally Lipschitz force:
/// `C(t) = (4‖γ‖_∞ (e^{Λt} - 1)/Λ)^{1/2}`, `Λ = 2(1 + 2 Lip(γ)²)`.
/// The alternate squares `‖γ‖_∞`.
pub fn lipschitz_bound(gamma_sup: f64, lip: f64, t: f64) -> Result<BoundEvaluation> {
    check_time(t)?;
    check_nonneg("gamma_sup", gamma_sup)?;
    check_nonneg("lip", lip)?;
    let lambda = 2.0 * (1.0 + 2.0 * lip * lip);
    let growth = (lambda * t).exp_m1() / lambda;
    let direct = (4.0 * gamma_sup * growth).sqrt();
    let ln_c = |s: f64| 0.5 * (4f64.ln() + ln_or_neg_inf(gamma_sup) + ln_expm1(lambda * s) - lambda.ln());
    let table = aux(&[("Lambda", lambda), ("gamma_sup", gamma_sup), ("lip", lip)]);
    let mut eval = finish(Theorem::GeneralLipschitz, t, direct, ln_c, table.clone());
    let alt = (4.0 * gamma_sup * gamma_sup * growth).sqrt();
    let alt = if alt.is_finite() {
        alt
    } else {
        (0.5 * (4f64.ln() + 2.0 * ln_or_neg_inf(gamma_sup) + ln_expm1(lambda * t) - lambda.ln())).exp()
    };
    eval.alternate = Some(AlternateEvaluation { label: "gamma_sup_squared".into(), c_t: alt, auxiliary: table });
    Ok(eval)
}

/// Explicit sublinear constant
/// `C(t) = 2γ₀a (2 e^{e^{4γ₀t} 4γ₀ a²} e^{4t} (e^{4γ₀t} - 1))^{1/2}`, `a = ‖v‖_{L∞} + ‖v‖_{L¹}`.
pub fn sublinear_bound(gamma0: f64, support: &SupportData, t: f64) -> Result<BoundEvaluation> {
    check_time(t)?;
    support.validate()?;
    if !(gamma0.is_finite() && gamma0 > 0.0) {
        return input(format!("gamma0 must be finite and > 0, got {gamma0}"));
    }
    let a = support.v_sup + support.v_l1;
    let inner = |s: f64| (4.0 * gamma0 * s).exp() * 4.0 * gamma0 * a * a;
    let direct = 2.0 * gamma0 * a * (2.0 * inner(t).exp() * (4.0 * t).exp() * (4.0 * gamma0 * t).exp_m1()).sqrt();
    let ln_c = |s: f64| {
        2f64.ln()
            + gamma0.ln()
            + ln_or_neg_inf(a)
            + 0.5 * (2f64.ln() + 4.0 * gamma0 * a * a * (4.0 * gamma0 * s).exp() + 4.0 * s + ln_expm1(4.0 * gamma0 * s))
    };
    Ok(finish(
        Theorem::SublinearExplicit,
        t,
        direct,
        ln_c,
        aux(&[("gamma0", gamma0), ("v_sup", support.v_sup), ("v_l1", support.v_l1), ("a", a)]),
    ))
}

/// Constant under the flocking envelope, as printed:
/// `C(t) = 4γ₀ s (e^{2(1+8s)t} - 1)/(2(1+8s))`, `s = |v̄|² + V²`.
/// The alternate uses the rate `2(1 + 8γ₀² s)` in both places.
pub fn flocking_bound(gamma0: f64, fit: &FlockingSupportFit, t: f64) -> Result<BoundEvaluation> {
    check_time(t)?;
    check_nonneg("gamma0", gamma0)?;
    if !(fit.v_radius.is_finite() && fit.v_radius >= 0.0) || fit.v_bar.iter().any(|c| !c.is_finite()) {
        return input("flocking fit must have finite v_bar and V >= 0");
    }
    let s = fit.v_bar.iter().map(|c| c * c).sum::<f64>() + fit.v_radius * fit.v_radius;
    let eval_rate = |rate: f64| -> (f64, Box<dyn Fn(f64) -> f64>) {
        let direct = 4.0 * gamma0 * s * (rate * t).exp_m1() / rate;
        let ln_c = move |u: f64| 4f64.ln() + ln_or_neg_inf(gamma0) + ln_or_neg_inf(s) + ln_expm1(rate * u) - rate.ln();
        (direct, Box::new(ln_c))
    };
    let rate = 2.0 * (1.0 + 8.0 * s);
    let alt_rate = 2.0 * (1.0 + 8.0 * gamma0 * gamma0 * s);
    let (direct, ln_c) = eval_rate(rate);
    let mut eval = finish(
        Theorem::FlockingCdet,
        t,
        direct,
        ln_c,
        aux(&[("gamma0", gamma0), ("s", s), ("rate", rate), ("V", fit.v_radius), ("alpha", fit.alpha)]),
    );
    let (alt_direct, alt_ln) = eval_rate(alt_rate);
    let alt = if alt_direct.is_finite() { alt_direct } else { alt_ln(t).exp() };
    eval.alternate = Some(AlternateEvaluation {
        label: "gamma0_squared_rate".into(),
        c_t: alt,
        auxiliary: aux(&[("gamma0", gamma0), ("s", s), ("rate", alt_rate)]),
    });
    Ok(eval)
}

/// One interval `[previous t_end, t_end)` of a piecewise-constant support
/// profile: `gamma_sup` bounds `|γ|` and `lip` bounds `Lip(γ)` over the
/// support differences on that interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub t_end: f64,
    pub gamma_sup: f64,
    pub lip: f64,
}

/// General constant
/// `C(t)² = 4 ∫₀ᵗ G(s)² e^{∫ₛᵗ L(u) du} ds`, `L = 2(1 + 2 Lip²)`,
/// for a piecewise-constant profile `(G, Lip)`, integrated exactly.
/// The dual path accumulates the integral forward in time.
pub fn main_sublinear_bound(profile: &[ProfileSegment], t: f64) -> Result<BoundEvaluation> {
    check_time(t)?;
    if profile.is_empty() {
        return input("support profile is empty");
    }
    let mut prev = 0.0;
    for seg in profile {
        check_nonneg("gamma_sup", seg.gamma_sup)?;
        check_nonneg("lip", seg.lip)?;
        if !(seg.t_end.is_finite() && seg.t_end > prev) {
            return input("profile interval ends must be finite and strictly increasing from 0");
        }
        prev = seg.t_end;
    }
    if prev < t {
        return input(format!("support profile ends at {prev}, before t = {t}"));
    }
    let pieces = |s: f64| -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut a = 0.0;
        for seg in profile {
            let b = seg.t_end.min(s);
            if b > a {
                out.push((b - a, seg.gamma_sup * seg.gamma_sup, 2.0 * (1.0 + 2.0 * seg.lip * seg.lip)));
            }
            a = seg.t_end;
            if a >= s {
                break;
            }
        }
        out
    };
    // backward: each piece weighted by the growth accumulated after it
    let ps = pieces(t);
    let mut tail: f64 = 0.0;
    let mut integral = 0.0;
    for &(len, g2, l) in ps.iter().rev() {
        integral += g2 * tail.exp() * (l * len).exp_m1() / l;
        tail += l * len;
    }
    let direct = (4.0 * integral).sqrt();
    // forward: I ← I e^{L len} + G² (e^{L len} - 1)/L, carried as ln I
    let ln_c = |s: f64| {
        let mut ln_i = f64::NEG_INFINITY;
        for (len, g2, l) in pieces(s) {
            let grown = ln_i + l * len;
            let fresh = ln_or_neg_inf(g2) + ln_expm1(l * len) - l.ln();
            ln_i = log_add(grown, fresh);
        }
        0.5 * (4f64.ln() + ln_i)
    };
    let g_max = profile.iter().map(|s| s.gamma_sup).fold(0.0, f64::max);
    let lip_max = profile.iter().map(|s| s.lip).fold(0.0, f64::max);
    Ok(finish(
        Theorem::MainSublinear,
        t,
        direct,
        ln_c,
        aux(&[
            ("segments", profile.len() as f64),
            ("gamma_sup_max", g_max),
            ("lip_max", lip_max),
            ("L_integral", tail),
        ]),
    ))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `N_{t,ε} = (C_t/ε)²`.
pub fn n_threshold(c_t: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return input(format!("epsilon must be > 0, got {epsilon}"));
    }
    if c_t.is_nan() || c_t < 0.0 {
        return input(format!("C_t must be >= 0, got {c_t}"));
    }
    Ok((c_t / epsilon).powi(2))
}
