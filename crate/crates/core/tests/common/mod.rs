//! Reference computations used as oracles. Nothing here calls into the
//! library's solvers.

#![allow(dead_code)]

use gridshare_core::model::{Case, GridSpec, UserSpec};

/// Gaussian elimination with partial pivoting on a small dense system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// DC power flow: solve for angles with the slack at zero, then
/// `flow = b (theta_from - theta_to)`.
pub fn dc_flows(grid: &GridSpec<f64>, injection: &[f64]) -> Vec<f64> {
    let n = grid.buses.len();
    let idx = |b| grid.buses.iter().position(|x| *x == b).unwrap();
    let slack = idx(grid.slack_bus);
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mut lap = vec![vec![0.0; n]; n];
    for l in &grid.lines {
        let (i, j) = (idx(l.from_bus), idx(l.to_bus));
        lap[i][i] += l.susceptance;
        lap[j][j] += l.susceptance;
        lap[i][j] -= l.susceptance;
        lap[j][i] -= l.susceptance;
    }
    let red: Vec<Vec<f64>> = keep.iter().map(|&i| keep.iter().map(|&j| lap[i][j]).collect()).collect();
    let rhs: Vec<f64> = keep.iter().map(|&i| injection[i]).collect();
    let sol = if keep.is_empty() { vec![] } else { gauss_solve(red, rhs) };
    let mut theta = vec![0.0; n];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = sol[k];
    }
    grid.lines
        .iter()
        .map(|l| l.susceptance * (theta[idx(l.from_bus)] - theta[idx(l.to_bus)]))
        .collect()
}

/// Bus injections when each user withdraws `net[k]`.
pub fn injections(grid: &GridSpec<f64>, users: &[UserSpec<f64>], net: &[f64]) -> Vec<f64> {
    let mut inj = vec![0.0; grid.buses.len()];
    for (u, p) in users.iter().zip(net) {
        let i = grid.buses.iter().position(|b| *b == u.bus).unwrap();
        inj[i] -= p;
    }
    inj
}

/// Direct check of balance, boxes and line limits for demands `d` and
/// outputs `w` (one per prosumer, in user order).
pub fn dispatch_feasible(case_grid: &GridSpec<f64>, users: &[UserSpec<f64>], d: &[f64], w: &[f64], tol: f64) -> bool {
    let mut wi = w.iter();
    let net: Vec<f64> = users
        .iter()
        .zip(d)
        .map(|(u, d)| u.fixed_demand + d - if u.is_prosumer() { *wi.next().unwrap() } else { 0.0 })
        .collect();
    let balance: f64 = net.iter().sum();
    if balance.abs() > tol {
        return false;
    }
    if users.iter().zip(d).any(|(u, d)| *d < u.elastic_lo - tol || *d > u.elastic_hi + tol) {
        return false;
    }
    let flows = dc_flows(case_grid, &injections(case_grid, users, &net));
    flows.iter().zip(&case_grid.lines).all(|(f, l)| f.abs() <= l.flow_limit + tol)
}

/// Euclidean projection onto `{q | sum q = 0, -F_l <= g_l . q <= F_l}` by
/// Dykstra's alternating projections.
pub fn dykstra_projection(b: &[f64], g: &[Vec<f64>], limits: &[f64], cycles: usize) -> Vec<f64> {
    let n = b.len();
    let sets = 1 + g.len();
    let mut x = b.to_vec();
    let mut incr = vec![vec![0.0; n]; sets];
    for _ in 0..cycles {
        for s in 0..sets {
            let y: Vec<f64> = x.iter().zip(&incr[s]).map(|(a, b)| a + b).collect();
            let p = if s == 0 {
                let mean = y.iter().sum::<f64>() / n as f64;
                y.iter().map(|v| v - mean).collect::<Vec<_>>()
            } else {
                let row = &g[s - 1];
                let lim = limits[s - 1];
                let val: f64 = row.iter().zip(&y).map(|(a, b)| a * b).sum();
                let nn: f64 = row.iter().map(|a| a * a).sum();
                let target = val.clamp(-lim, lim);
                if nn == 0.0 {
                    y.clone()
                } else {
                    y.iter().zip(row).map(|(v, r)| v - (val - target) / nn * r).collect()
                }
            };
            incr[s] = y.iter().zip(&p).map(|(a, b)| a - b).collect();
            x = p;
        }
    }
    x
}

/// Outputs of a case as a vector in prosumer order.
pub fn outputs(case: &Case<f64>) -> Vec<f64> {
    case.scenario.vector(&case.users).unwrap()
}
