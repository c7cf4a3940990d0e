//! Kuhn-Munkres assignment with row/column potentials, `O(n^2 m)`.

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is `n x m` with `n <= m`. Returns `assignment[row] = column`.
/// Integer costs keep the optimum exact.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows ({n}) than columns ({m})");
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");

    const INF: i64 = i64::MAX / 4;
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maximum-weight assignment on a square or rectangular weight matrix;
/// the smaller side is padded with zero weights.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let size = rows.max(cols);
    let top = weights.iter().flatten().copied().max().unwrap_or(0);
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| top - weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    let mut assignment = min_cost_assignment(&cost);
    assignment.truncate(rows);
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_min_cost() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let a = min_cost_assignment(&cost);
        let total: i64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn rectangular_max_weight() {
        let w = vec![vec![1, 9, 0, 0], vec![8, 7, 0, 0]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0]);
        let tall = vec![vec![5], vec![9], vec![1]];
        let a = max_weight_assignment(&tall);
        assert_eq!(a[1], 0);
    }

    #[test]
    fn empty() {
        assert!(min_cost_assignment(&[]).is_empty());
    }
}
