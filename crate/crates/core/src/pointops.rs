//! Farthest point sampling, nearest neighbours and exact earth mover's
//! distance between equal-size point sets (xyz only).

use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

pub const BRUTEFORCE_MAX_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    /// `permutation[i]` is the point of `b` matched to point `i` of `a`.
    pub permutation: Vec<usize>,
    pub total_cost: T,
    pub mean_cost: T,
}

#[inline]
pub fn distance<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Greedy max-min selection of `k` indices starting at `start`; ties go to
/// the smallest index.
pub fn farthest_point_sampling<T: Scalar>(points: &[[T; 3]], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        bail!(InvalidArgument, "cannot pick {k} of {n} points");
    }
    if start >= n {
        bail!(Index, "start index {start} of {n} points");
    }
    let mut picked = Vec::with_capacity(k);
    let mut dmin = vec![T::infinity(); n];
    let mut taken = vec![false; n];
    let mut cur = start;
    for _ in 0..k {
        picked.push(cur);
        taken[cur] = true;
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = distance(&points[i], &points[cur]);
            if d < dmin[i] {
                dmin[i] = d;
            }
            if best.is_none_or(|b| dmin[i] > dmin[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => cur = b,
            None => break,
        }
    }
    Ok(picked)
}

/// Sum of matched distances, accumulated in index order of `a`.
pub fn assignment_cost<T: Scalar>(a: &[[T; 3]], b: &[[T; 3]], permutation: &[usize]) -> T {
    permutation
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + distance(&a[i], &b[j]))
}

fn result<T: Scalar>(a: &[[T; 3]], b: &[[T; 3]], permutation: Vec<usize>) -> AssignmentResult<T> {
    let total_cost = assignment_cost(a, b, &permutation);
    AssignmentResult {
        mean_cost: total_cost / T::from_usize_lossy(a.len()),
        permutation,
        total_cost,
    }
}

fn check_sizes<T>(a: &[[T; 3]], b: &[[T; 3]]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::CardinalityMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        bail!(EmptyInput, "earth mover's distance of empty sets");
    }
    Ok(())
}

/// Minimum-cost perfect matching under Euclidean cost (shortest augmenting
/// path Hungarian algorithm, `O(n³)`).
pub fn emd<T: Scalar>(a: &[[T; 3]], b: &[[T; 3]]) -> Result<AssignmentResult<T>> {
    check_sizes(a, b)?;
    let n = a.len();
    let cost: Vec<T> = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| distance(p, q)))
        .collect();
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![T::zero(); n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = T::infinity());
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = T::infinity();
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
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
            if j1 == 0 {
                // Only reachable with non-finite costs.
                bail!(InvalidArgument, "earth mover's distance needs finite coordinates");
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
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    Ok(result(a, b, permutation))
}

/// Exact minimum over all `n!` matchings; refuses `n > 8`.
pub fn emd_bruteforce<T: Scalar>(a: &[[T; 3]], b: &[[T; 3]]) -> Result<AssignmentResult<T>> {
    check_sizes(a, b)?;
    let n = a.len();
    if n > BRUTEFORCE_MAX_POINTS {
        bail!(InvalidArgument, "brute-force matching refuses {n} > {BRUTEFORCE_MAX_POINTS} points");
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(a, b, &perm);
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let cost = assignment_cost(a, b, &perm);
            if cost < best_cost {
                best_cost = cost;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(result(a, b, best))
}

/// For each query row, the nearest reference row and its distance. With
/// `exclude_self`, `query` must be the reference set itself and row `i`
/// never matches `i`. Ties go to the smaller index.
pub fn pairwise_nearest<T: Scalar>(
    query: &[[T; 3]],
    reference: &[[T; 3]],
    exclude_self: bool,
) -> Result<Vec<(usize, T)>> {
    if reference.is_empty() {
        bail!(InvalidArgument, "empty reference set");
    }
    if exclude_self {
        if reference.len() < 2 {
            bail!(InvalidArgument, "excluding self needs at least two reference points");
        }
        if query.len() != reference.len() {
            bail!(InvalidArgument, "excluding self needs the query to be the reference set");
        }
    }
    Ok(query
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut best = (usize::MAX, T::infinity());
            for (j, r) in reference.iter().enumerate() {
                if exclude_self && i == j {
                    continue;
                }
                let d = distance(q, r);
                if best.0 == usize::MAX || d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_examples() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 2, 0).unwrap(), vec![0, 2]);
        assert_eq!(farthest_point_sampling(&pts, 1, 1).unwrap(), vec![1]);
        let mut all = farthest_point_sampling(&pts, 3, 0).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(farthest_point_sampling(&pts, 4, 0).is_err());
    }

    #[test]
    fn fps_tie_goes_to_smallest_index() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sampling(&pts, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn emd_examples() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(emd(&a, &b).unwrap().mean_cost, 0.5);
        assert_eq!(emd(&a, &a).unwrap().mean_cost, 0.0);
        assert_eq!(emd_bruteforce(&a, &b).unwrap().mean_cost, 0.5);
        let one = emd_bruteforce(&[[0.0, 0.0, 0.0]], &[[3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(one.total_cost, 5.0);
        assert!(matches!(
            emd(&a, &b[..1]),
            Err(Error::CardinalityMismatch { left: 2, right: 1 })
        ));
        let big = vec![[0.0f64; 3]; 9];
        assert!(emd_bruteforce(&big, &big).is_err());
    }

    #[test]
    fn emd_crossing_pairs() {
        let a = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let b = [[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let r = emd(&a, &b).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn nearest_examples() {
        let r = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let q = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let out = pairwise_nearest(&q, &r, false).unwrap();
        assert_eq!(out, vec![(0, 1.0), (1, 0.0)]);
        let dup = [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [5.0, 0.0, 0.0]];
        let out = pairwise_nearest(&dup, &dup, true).unwrap();
        assert_eq!(out[0], (1, 0.0));
        assert_eq!(out[1], (0, 0.0));
        assert!(pairwise_nearest::<f64>(&q, &[], false).is_err());
    }
}
