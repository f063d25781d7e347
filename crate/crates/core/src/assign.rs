//! Exact solver for the rectangular linear assignment problem
//! (shortest augmenting path formulation, O(rows² · cols)).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("need at least as many columns as rows, got {rows} rows and {cols} columns")]
    NotEnoughColumns { rows: usize, cols: usize },
    #[error("cost matrix row {row} has {got} entries, expected {expected}")]
    RaggedMatrix {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite cost at row {row}, column {col}")]
    NonFiniteCost { row: usize, col: usize },
}

/// Minimum-cost injective assignment of rows to columns.
///
/// `cost[r][c]` is the cost of assigning row `r` to column `c`; requires
/// `rows <= cols`. Returns the assigned column per row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>, AssignError> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    if rows > cols {
        return Err(AssignError::NotEnoughColumns { rows, cols });
    }
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(AssignError::RaggedMatrix {
                row: r,
                got: row.len(),
                expected: cols,
            });
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(AssignError::NonFiniteCost { row: r, col: c });
            }
        }
    }

    // 1-based dual potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut col_row = vec![0usize; cols + 1]; // row matched to each column (0 = free)
    let mut way = vec![0usize; cols + 1];

    for r in 1..=rows {
        col_row[0] = r;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];

        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
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
            for j in 0..=cols {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if col_row[j] > 0 {
            assignment[col_row[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| cost[r][c])
            .sum()
    }

    /// Minimum over all injective row -> column maps, by enumeration.
    /// Every candidate is totalled left-to-right so float association
    /// matches `total` exactly.
    pub(crate) fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        fn rec(
            cost: &[Vec<f64>],
            row: usize,
            used: &mut Vec<bool>,
            assignment: &mut Vec<usize>,
            best: &mut f64,
        ) {
            if row == cost.len() {
                let t = total(cost, assignment);
                if t < *best {
                    *best = t;
                }
                return;
            }
            for c in 0..cost[row].len() {
                if !used[c] {
                    used[c] = true;
                    assignment.push(c);
                    rec(cost, row + 1, used, assignment, best);
                    assignment.pop();
                    used[c] = false;
                }
            }
        }
        let mut used = vec![false; cost.first().map_or(0, Vec::len)];
        let mut assignment = Vec::with_capacity(cost.len());
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut used, &mut assignment, &mut best);
        best
    }

    #[test]
    fn single_pair_forced() {
        assert_eq!(solve_assignment(&[vec![3.5]]).unwrap(), vec![0]);
    }

    #[test]
    fn zero_cost_column_dominates() {
        let cost = vec![vec![5.0, 0.0]];
        assert_eq!(solve_assignment(&cost).unwrap(), vec![1]);
    }

    #[test]
    fn known_square_instance() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(total(&cost, &a), 5.0);
    }

    #[test]
    fn more_rows_than_columns_rejected() {
        let cost = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            solve_assignment(&cost).unwrap_err(),
            AssignError::NotEnoughColumns { rows: 2, cols: 1 }
        );
    }

    #[test]
    fn non_finite_cost_rejected() {
        let cost = vec![vec![1.0, f64::NAN]];
        assert_eq!(
            solve_assignment(&cost).unwrap_err(),
            AssignError::NonFiniteCost { row: 0, col: 1 }
        );
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            (rows, cols, flat) in (1usize..=5, 0usize..=2).prop_flat_map(|(r, extra)| {
                let c = r + extra;
                (Just(r), Just(c), proptest::collection::vec(0.0f64..100.0, r * c))
            })
        ) {
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|r| flat[r * cols..(r + 1) * cols].to_vec())
                .collect();
            let a = solve_assignment(&cost).unwrap();
            // injective
            let mut seen = std::collections::HashSet::new();
            for &c in &a {
                prop_assert!(seen.insert(c));
            }
            prop_assert_eq!(total(&cost, &a), brute_force_min(&cost));
        }
    }
}
