//! Maximum-weight bipartite assignment (Hungarian method with potentials).
//!
//! Rectangular inputs are square-padded with zero-weight rows or columns.
//! Among all optimal permutations of the padded matrix the lexicographically
//! smallest one (row 0's column first, then row 1's, ...) is returned.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs between real rows and real columns, by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
    /// Column chosen for every row of the padded square matrix.
    pub permutation: Vec<usize>,
}

fn validate(weights: &[Vec<f64>]) -> Result<usize> {
    let cols = weights.first().map(Vec::len).unwrap_or(0);
    if weights.is_empty() || cols == 0 {
        return Err(Error::Invalid("assignment matrix is empty".into()));
    }
    for row in weights {
        if row.len() != cols {
            return Err(Error::Invalid("assignment matrix is ragged".into()));
        }
        if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid(
                "assignment weights must be finite and non-negative".into(),
            ));
        }
    }
    Ok(cols)
}

pub fn optimal_assignment(weights: &[Vec<f64>]) -> Result<Assignment> {
    let cols = validate(weights)?;
    let rows = weights.len();
    let n = rows.max(cols);
    let w = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            weights[i][j]
        } else {
            0.0
        }
    };
    let max_w = weights.iter().flatten().cloned().fold(0.0, f64::max);
    let eps = 1e-9 * (1.0 + max_w);

    // Minimise cost = -w. Arrays are 1-based with a virtual row/col 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1]; // owner[col] = row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    // Every optimal matching lives on the edges the optimal duals make tight.
    let tight = |i: usize, j: usize| (-w(i, j) - u[i + 1] - v[j + 1]).abs() <= eps;
    lexicographic_min(n, &tight, &mut row_to_col);

    let total = (0..n).map(|i| w(i, row_to_col[i])).sum();
    let pairs = row_to_col
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < rows && j < cols)
        .map(|(i, &j)| (i, j))
        .collect();
    Ok(Assignment {
        pairs,
        total,
        permutation: row_to_col,
    })
}

/// Rewrites the perfect matching `row_to_col` (over `tight` edges) into the
/// lexicographically smallest perfect matching of the tight subgraph.
fn lexicographic_min(n: usize, tight: &dyn Fn(usize, usize) -> bool, row_to_col: &mut [usize]) {
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    for i in 0..n {
        let target = row_to_col[i];
        // rows that cannot free `target` while rows <= i stay put
        let mut dead = vec![false; n];
        for j in 0..target {
            let r = col_to_row[j];
            if r <= i || !tight(i, j) || dead[r] {
                continue;
            }
            let mut seen_cols = vec![false; n];
            seen_cols[j] = true;
            if reroute(r, i, target, tight, row_to_col, &mut col_to_row, &mut seen_cols, &mut dead) {
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }
}

/// Depth-first search for an alternating path moving row `r` off its column
/// and ending with some row taking `target`. Applies the path on success.
#[allow(clippy::too_many_arguments)]
fn reroute(
    r: usize,
    fixed_upto: usize,
    target: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    seen_cols: &mut [bool],
    dead: &mut [bool],
) -> bool {
    let n = row_to_col.len();
    for c in 0..n {
        if seen_cols[c] || !tight(r, c) || c == row_to_col[r] {
            continue;
        }
        seen_cols[c] = true;
        let found = if c == target {
            true
        } else {
            let next = col_to_row[c];
            next > fixed_upto
                && !dead[next]
                && reroute(next, fixed_upto, target, tight, row_to_col, col_to_row, seen_cols, dead)
        };
        if found {
            row_to_col[r] = c;
            col_to_row[c] = r;
            return true;
        }
    }
    dead[r] = true;
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dominant() {
        let m = vec![
            vec![9.0, 1.0, 1.0],
            vec![1.0, 9.0, 1.0],
            vec![1.0, 1.0, 9.0],
        ];
        let a = optimal_assignment(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total, 27.0);
    }

    #[test]
    fn single_row() {
        let a = optimal_assignment(&[vec![0.0, 5.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.total, 5.0);
    }

    #[test]
    fn ties_take_smallest_columns() {
        let a = optimal_assignment(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = optimal_assignment(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn tall_matrix_leaves_rows_unmatched() {
        let a = optimal_assignment(&[vec![1.0], vec![3.0], vec![2.0]]).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.total, 3.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(optimal_assignment(&[]).is_err());
        assert!(optimal_assignment(&[vec![]]).is_err());
        assert!(optimal_assignment(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(optimal_assignment(&[vec![-1.0]]).is_err());
    }
}
