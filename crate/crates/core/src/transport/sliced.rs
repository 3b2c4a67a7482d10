use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DiscreteMeasure;
use crate::error::{input, Result};
use crate::exec::Exec;

/// Unit direction `k` of the slice bank for `seed`. In one dimension every
/// direction is `+1`.
pub fn slice_direction(dim: usize, seed: u64, k: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|c| *c /= n);
            return v;
        }
    }
}

fn project(m: &DiscreteMeasure, dir: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..m.len()).map(|i| m.point(i).iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Sliced `W_p`: `(mean_k W_p^p(θ_k#μ, θ_k#ν))^{1/p}` over `n_proj` random
/// unit directions, each 1-d problem solved by sorting.
pub fn wp_sliced(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, n_proj: usize, seed: u64) -> Result<f64> {
    wp_sliced_with(mu, nu, p, n_proj, seed, Exec::default())
}

pub fn wp_sliced_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    n_proj: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if !(p.is_finite() && p >= 1.0) {
        return input(format!("Wasserstein exponent must be >= 1, got {p}"));
    }
    if n_proj == 0 {
        return input("sliced distance needs n_proj >= 1");
    }
    if mu.dim() != nu.dim() {
        return input(format!("measures live in dimensions {} and {}", mu.dim(), nu.dim()));
    }
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return input("sliced distance needs uniform measures of equal size; resample first");
    }
    let n = mu.len();
    let per_dir = exec.map_indexed(n_proj, |k| {
        let dir = slice_direction(mu.dim(), seed, k);
        let a = project(mu, &dir);
        let b = project(nu, &dir);
        let s: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let d = (x - y).abs();
                if p == 2.0 {
                    d * d
                } else {
                    d.powf(p)
                }
            })
            .sum();
        s / n as f64
    });
    let mean = per_dir.iter().sum::<f64>() / n_proj as f64;
    Ok(mean.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::wp_exact;

    #[test]
    fn identical_clouds_vanish() {
        let mu = DiscreteMeasure::uniform(2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        assert_eq!(wp_sliced(&mu, &mu, 2.0, 16, 3).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_matches_exact() {
        let mu = DiscreteMeasure::uniform(1, vec![0.1, 2.0, -0.7, 3.3, 1.1]).unwrap();
        let nu = DiscreteMeasure::uniform(1, vec![1.0, -2.0, 0.0, 0.4, 5.0]).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let s = wp_sliced(&mu, &nu, p, 1, 0).unwrap();
            let e = wp_exact(&mu, &nu, p).unwrap().0;
            assert!((s - e).abs() < 1e-10, "{s} vs {e}");
        }
    }

    #[test]
    fn directions_are_seeded_and_unit() {
        let a = slice_direction(3, 5, 2);
        assert_eq!(a, slice_direction(3, 5, 2));
        assert_ne!(a, slice_direction(3, 5, 3));
        assert!((a.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exec_independent() {
        let mu = DiscreteMeasure::uniform(2, (0..40).map(|i| (i as f64).sin()).collect()).unwrap();
        let nu = DiscreteMeasure::uniform(2, (0..40).map(|i| (i as f64).cos()).collect()).unwrap();
        let a = wp_sliced_with(&mu, &nu, 2.0, 32, 1, Exec::Sequential).unwrap();
        let b = wp_sliced_with(&mu, &nu, 2.0, 32, 1, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unequal_sizes_rejected() {
        let mu = DiscreteMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        let nu = DiscreteMeasure::uniform(1, vec![0.0]).unwrap();
        assert!(wp_sliced(&mu, &nu, 2.0, 4, 0).is_err());
        assert!(wp_sliced(&mu, &mu, 2.0, 0, 0).is_err());
    }
}
