//! Minimum-cost assignment (Kuhn–Munkres with potentials, O(n²·m)).

/// Assigns each row to a distinct column minimizing the total cost. For
/// `n` rows and `m` columns, `min(n, m)` pairs are made. Returns the column
/// of each row. Costs must be finite.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    if m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = hungarian(&t);
        let mut out = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }

    // 1-based potentials; p[j] is the row matched to column j
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Assignment over a matrix that may contain infinite (forbidden) entries,
/// with pairs costing more than `gate` excluded.
///
/// The gate takes part in the optimization: every row and column may also
/// stay unassigned at a cost of `gate / 2`, so a pair is only made when it is
/// cheaper than leaving both ends open. Gating only after a forced
/// `min(n, m)` assignment lets a detection with no real partner displace a
/// good pair. With an infinite gate this reduces to the plain assignment.
pub fn assign_gated(cost: &[Vec<f64>], gate: f64) -> Vec<(usize, usize, f64)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let allowed = |c: f64| c.is_finite() && c <= gate;
    let finite_max = cost
        .iter()
        .flatten()
        .filter(|c| allowed(**c))
        .fold(0.0f64, |a, &c| a.max(c.abs()));
    let big = (finite_max + 1.0) * ((n + m) as f64 + 1.0);
    let matrix: Vec<Vec<f64>> = if gate.is_finite() {
        let open = 0.5 * gate;
        let k = n + m;
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| match (i < n, j < m) {
                        (true, true) if allowed(cost[i][j]) => cost[i][j],
                        (true, true) => big + open,
                        (true, false) if j - m == i => open,
                        (false, true) if i - n == j => open,
                        (false, false) => 0.0,
                        _ => big + open,
                    })
                    .collect()
            })
            .collect()
    } else {
        cost.iter()
            .map(|r| r.iter().map(|&c| if c.is_finite() { c } else { big }).collect())
            .collect()
    };
    hungarian(&matrix)
        .into_iter()
        .take(n)
        .enumerate()
        .filter_map(|(i, j)| {
            let j = j?;
            (j < m && allowed(cost[i][j])).then(|| (i, j, cost[i][j]))
        })
        .collect()
}
