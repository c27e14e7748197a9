//! Minimum-cost rectangular assignment (Hungarian algorithm with
//! potentials, O(n²m)).
//!
//! Infeasible pairs are replaced by a sentinel cost large enough that the
//! solver first maximizes the number of feasible pairs, then minimizes
//! their total cost; sentinel pairs are stripped from the result.

/// Dense cost matrix; `None` marks a gated-out pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![None; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged cost matrix");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, Some(v));
            }
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Option<f64>) {
        self.cells[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs, ascending by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of feasible costs over `pairs`.
    pub cost: f64,
}

/// Hungarian on a full `n × m` matrix with `n ≤ m`; returns the column of
/// every row. Ties resolve toward the lowest column index.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum-total-cost assignment over the feasible pairs of `cost`.
pub fn assign(cost: &CostMatrix) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
            cost: 0.0,
        };
    }
    let finite = cost.cells.iter().flatten().copied();
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
    let k = rows.min(cols) as f64;
    let sentinel = if lo.is_finite() {
        hi + k * (hi - lo) + hi.abs() + 1.0
    } else {
        1.0
    };
    let value = |r: usize, c: usize| cost.get(r, c).unwrap_or(sentinel);

    let mut pairs: Vec<(usize, usize)> = if rows <= cols {
        hungarian(rows, cols, value)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        hungarian(cols, rows, |c, r| value(r, c))
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.retain(|&(r, c)| cost.get(r, c).is_some());
    pairs.sort_unstable();

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut total = 0.0;
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
        total += cost.get(r, c).unwrap();
    }
    Assignment {
        pairs,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        cost: total,
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Same result class as [`assign`] for a sparse feasible set, solved per
/// connected component of the bipartite gating graph. `edges` holds
/// `(row, col, cost)` with no duplicate pairs.
pub fn assign_sparse(rows: usize, cols: usize, edges: &[(usize, usize, f64)]) -> Assignment {
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    for &(r, c, _) in edges {
        let (a, b) = (find(&mut parent, r), find(&mut parent, rows + c));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for r in 0..rows {
        let root = find(&mut parent, r);
        groups.entry(root).or_default().0.push(r);
    }
    for c in 0..cols {
        let root = find(&mut parent, rows + c);
        groups.entry(root).or_default().1.push(c);
    }
    let mut edges_by_root: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
    for &e in edges {
        let root = find(&mut parent, e.0);
        edges_by_root.entry(root).or_default().push(e);
    }

    let mut result = Assignment::default();
    for (root, (grow, gcol)) in &groups {
        let Some(group_edges) = edges_by_root.get(root) else { continue };
        let mut local = CostMatrix::new(grow.len(), gcol.len());
        for &(r, c, v) in group_edges {
            let lr = grow.binary_search(&r).unwrap();
            let lc = gcol.binary_search(&c).unwrap();
            local.set(lr, lc, Some(v));
        }
        let sub = assign(&local);
        result.cost += sub.cost;
        result
            .pairs
            .extend(sub.pairs.iter().map(|&(lr, lc)| (grow[lr], gcol[lc])));
    }
    result.pairs.sort_unstable();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in &result.pairs {
        row_used[r] = true;
        col_used[c] = true;
    }
    result.unmatched_rows = (0..rows).filter(|&r| !row_used[r]).collect();
    result.unmatched_cols = (0..cols).filter(|&c| !col_used[c]).collect();
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let a = assign(&CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 2.0);

        let diag = CostMatrix::from_rows(&[
            vec![0.0, 5.0, 5.0],
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ]);
        assert_eq!(assign(&diag).pairs, vec![(0, 0), (1, 1), (2, 2)]);

        let ties = CostMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(assign(&ties).pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn gated_pairs_are_never_returned() {
        let mut m = CostMatrix::from_rows(&[vec![1.0, 9.0, 9.0], vec![9.0, 9.0, 9.0]]);
        m.set(1, 0, None);
        m.set(1, 1, None);
        m.set(1, 2, None);
        let a = assign(&m);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unmatched_rows, vec![1]);
        assert_eq!(a.unmatched_cols, vec![1, 2]);
    }

    #[test]
    fn feasible_cardinality_beats_cost() {
        // Row 0 prefers col 0, but only col 0 is feasible for row 1.
        let mut m = CostMatrix::from_rows(&[vec![0.0, 100.0], vec![1.0, 0.0]]);
        m.set(1, 1, None);
        let a = assign(&m);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn tall_matrices_and_empty() {
        let a = assign(&CostMatrix::from_rows(&[vec![3.0], vec![1.0], vec![2.0]]));
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_rows, vec![0, 2]);
        let e = assign(&CostMatrix::new(0, 3));
        assert_eq!(e.unmatched_cols, vec![0, 1, 2]);
    }

    #[test]
    fn sparse_matches_dense() {
        let edges = vec![(0, 0, 1.0), (0, 1, 0.5), (1, 1, 0.2), (2, 3, 4.0), (3, 3, 1.0)];
        let mut dense = CostMatrix::new(4, 5);
        for &(r, c, v) in &edges {
            dense.set(r, c, Some(v));
        }
        let a = assign(&dense);
        let b = assign_sparse(4, 5, &edges);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.pairs.len(), b.pairs.len());
        assert_eq!(b.unmatched_cols, vec![2, 4]);
    }
}
