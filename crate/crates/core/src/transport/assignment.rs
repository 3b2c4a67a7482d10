//! Dense `O(n³)` shortest-augmenting-path assignment with potentials.

/// Optimal permutation for the square cost matrix `cost` (row-major `n×n`).
/// Returns `(col_of_row, u, v)` with duals `u_i + v_j ≤ c_ij`, tight on the
/// assignment. Among equal reduced costs the lowest column index wins.
pub(crate) fn solve(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(cost.len(), n * n);
    // 1-based arrays; index 0 is the virtual root column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    (col_of, u[1..].to_vec(), v[1..].to_vec())
}

/// Largest complementary-slackness defect of `(u, v)` for the assignment.
pub(crate) fn dual_residual(cost: &[f64], n: usize, col_of: &[usize], u: &[f64], v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max(u[i] + v[j] - cost[i * n + j]);
        }
        worst = worst.max((cost[i * n + col_of[i]] - u[i] - v[col_of[i]]).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_instance() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (col, u, v) = solve(&c, 3);
        let total: f64 = (0..3).map(|i| c[i * 3 + col[i]]).sum();
        assert_eq!(total, 5.0);
        assert!(dual_residual(&c, 3, &col, &u, &v) < 1e-12);
    }

    #[test]
    fn ties_prefer_identity() {
        let c = vec![1.0; 16];
        let (col, _, _) = solve(&c, 4);
        assert_eq!(col, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_entry() {
        assert_eq!(solve(&[7.0], 1).0, vec![0]);
    }
}
