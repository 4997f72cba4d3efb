//! Linear assignment by the Hungarian algorithm in O(n³).
//!
//! Rows and columns are matched one-to-one over a square cost matrix using
//! the potential-and-augmenting-path formulation. Speaker mapping needs the
//! maximizing variant, provided as a wrapper over the minimizer.

use crate::error::{Error, Result};

/// One-to-one assignment minimizing total cost. Returns `assignment` with
/// `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Data(format!(
                "assignment: row {i} has {} entries in an {n}×{n} matrix",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "assignment: cost ({i}, {j}) is not finite"
            )));
        }
    }

    // row and column potentials with 1-based indexing; index 0 is the
    // virtual unmatched column used to start each augmenting search
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        // walk the alternating path back, flipping matches
        while j0 != 0 {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// One-to-one assignment maximizing total value.
pub fn max_value_assignment(value: &[Vec<f64>]) -> Result<Vec<usize>> {
    let negated: Vec<Vec<f64>> = value
        .iter()
        .map(|row| row.iter().map(|v| -v).collect())
        .collect();
    min_cost_assignment(&negated)
}
