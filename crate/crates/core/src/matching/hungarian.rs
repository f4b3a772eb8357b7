//! Minimum-cost perfect assignment on a square cost matrix.
//!
//! Shortest augmenting paths with row/column potentials (the Kuhn–Munkres
//! method in its O(k³) Jonker–Volgenant form): rows are inserted one at a
//! time and each insertion runs a Dijkstra-like search over reduced costs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returns `assignment` with `assignment[row] = column` minimizing
/// `Σ cost[row][assignment[row]]`.
pub fn hungarian_solve(cost: &Tensor) -> Result<Vec<usize>> {
    let [rows, cols] = cost.dims2("hungarian_solve")?;
    if rows != cols {
        return Err(Error::shape(
            "hungarian_solve",
            format!("cost matrix must be square, got {rows}x{cols}"),
        ));
    }
    if let Some(i) = cost.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("cost matrix entry ({}, {})", i / cols, i % cols),
        });
    }
    let n = rows;
    let c = |i: usize, j: usize| cost.data()[i * n + j];

    // 1-based bookkeeping; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = c(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        // Flip the alternating path back to the root.
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// `Σ_row cost[row][assignment[row]]`, summed in row order.
pub fn assignment_cost(cost: &Tensor, assignment: &[usize]) -> f64 {
    let n = assignment.len();
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.data()[i * n + j])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over all permutations, by Heap's algorithm.
    fn brute_force_min(cost: &Tensor) -> f64 {
        let n = cost.shape()[0];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = assignment_cost(cost, &perm);
        let mut c = vec![0; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.min(assignment_cost(cost, &perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn two_by_two() {
        let cost = Tensor::new(&[2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let a = hungarian_solve(&cost).unwrap();
        assert_eq!(a, vec![0, 1]);
        assert_eq!(assignment_cost(&cost, &a), 2.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let cost = Tensor::from_fn(&[5, 5], |i| if i / 5 == i % 5 { 0.0 } else { 1.0 + (i % 3) as f64 });
        assert_eq!(hungarian_solve(&cost).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn anti_diagonal() {
        let cost = Tensor::from_fn(&[3, 3], |i| if i / 3 + i % 3 == 2 { -1.0 } else { 0.0 });
        assert_eq!(hungarian_solve(&cost).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(hungarian_solve(&Tensor::zeros(&[2, 3])).is_err());
        let nan = Tensor::new(&[2, 2], vec![0.0, f64::NAN, 1.0, 1.0]).unwrap();
        assert!(matches!(hungarian_solve(&nan), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let k = rng.gen_range(1..=7);
            let cost = Tensor::from_fn(&[k, k], |_| rng.gen_range(-5.0..5.0));
            let a = hungarian_solve(&cost).unwrap();
            let mut seen = a.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..k).collect::<Vec<_>>());
            assert_eq!(assignment_cost(&cost, &a), brute_force_min(&cost));
        }
    }

    #[test]
    fn optimal_cost_shifts_with_row_and_column_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.gen_range(1..=6);
            let cost = Tensor::from_fn(&[k, k], |_| f64::from(rng.gen_range(0..50)));
            let base = assignment_cost(&cost, &hungarian_solve(&cost).unwrap());
            let row = rng.gen_range(0..k);
            let col = rng.gen_range(0..k);
            let (dr, dc) = (f64::from(rng.gen_range(-10..10)), f64::from(rng.gen_range(-10..10)));
            let shifted = Tensor::from_fn(&[k, k], |i| {
                cost.data()[i] + if i / k == row { dr } else { 0.0 } + if i % k == col { dc } else { 0.0 }
            });
            let moved = assignment_cost(&shifted, &hungarian_solve(&shifted).unwrap());
            assert_eq!(moved, base + dr + dc);
        }
    }
}
