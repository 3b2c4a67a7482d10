//! Transportation problem with real masses by successive shortest paths.
//!
//! Sources are the rows of the cost matrix, sinks its columns. Forward arcs
//! have unbounded capacity, reverse arcs carry the current flow. Node
//! potentials keep reduced costs nonnegative so each search is a dense
//! Dijkstra.

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

pub(crate) struct FlowSolution {
    pub flow: Vec<f64>,
    pub potential: Vec<f64>,
}

pub(crate) fn solve(cost: &[f64], supply: &[f64], demand: &[f64]) -> FlowSolution {
    let (n, m) = (supply.len(), demand.len());
    let nodes = n + m;
    let mut flow = vec![0.0; n * m];
    let mut left_s = supply.to_vec();
    let mut left_d = demand.to_vec();
    let mut pot = vec![0.0; nodes];
    for j in 0..m {
        pot[n + j] = (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min);
    }
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    loop {
        if left_s.iter().all(|s| *s <= MASS_EPS) || left_d.iter().all(|d| *d <= MASS_EPS) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|b| *b = false);
        for i in 0..n {
            if left_s[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for (k, d) in dist.iter().enumerate() {
                if !done[k] && *d < bd {
                    bd = *d;
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= n && left_d[best - n] > MASS_EPS {
                target = best;
                break;
            }
            if best < n {
                let i = best;
                for j in 0..m {
                    let k = n + j;
                    if done[k] {
                        continue;
                    }
                    let rc = (cost[i * m + j] + pot[i] - pot[k]).max(0.0);
                    if bd + rc < dist[k] {
                        dist[k] = bd + rc;
                        prev[k] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= 0.0 {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + pot[best] - pot[i]).max(0.0);
                    if bd + rc < dist[i] {
                        dist[i] = bd + rc;
                        prev[i] = best;
                    }
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        let dt = dist[target];
        for k in 0..nodes {
            pot[k] += if done[k] { dist[k] } else { dt };
        }
        let mut delta = left_d[target - n];
        let mut k = target;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p >= n {
                delta = delta.min(flow[k * m + (p - n)]);
            }
            k = p;
        }
        delta = delta.min(left_s[k]);
        left_s[k] -= delta;
        left_d[target - n] -= delta;
        let mut k = target;
        while prev[k] != usize::MAX {
            let p = prev[k];
            if p < n {
                flow[p * m + (k - n)] += delta;
            } else {
                let f = &mut flow[k * m + (p - n)];
                *f -= delta;
                if *f < MASS_EPS * 1e-3 {
                    *f = 0.0;
                }
            }
            k = p;
        }
    }
    FlowSolution { flow, potential: pot }
}

/// Largest complementary-slackness defect: negative reduced costs anywhere,
/// nonzero reduced costs on arcs carrying flow.
pub(crate) fn dual_residual(cost: &[f64], n: usize, m: usize, sol: &FlowSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let rc = cost[i * m + j] + sol.potential[i] - sol.potential[n + j];
            worst = worst.max(-rc);
            if sol.flow[i * m + j] > 0.0 {
                worst = worst.max(rc.abs());
            }
        }
    }
    worst
}
