//! Exact linear assignment, discrete Wasserstein-2 distance and the optimal
//! transport score (OTS).
//!
//! Between two uniform clouds of equal size the Kantorovich problem has an
//! optimal vertex that is a permutation, so the discrete optimal transport map
//! is the solution of a square assignment problem on squared Euclidean costs.

use crate::numerics::{sq_dist, Matrix, Vector};
use crate::parallel::Exec;
use crate::{Error, Result};

/// Finite uniform-weight point cloud. Each point carries mass `1 / len`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Vector>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vector>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("empirical measure"))?;
        let dim = first.dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::dim("empirical measure point", dim, p.dim()));
        }
        if !points.iter().all(Vector::is_finite) {
            return Err(Error::NonFinite("empirical measure"));
        }
        Ok(EmpiricalMeasure { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| Vector::new(r.clone()))
            .collect::<Result<Vec<_>>>()?;
        EmpiricalMeasure::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector> {
        self.points
    }

    pub fn translate(&self, offset: &Vector) -> Result<EmpiricalMeasure> {
        let points = self
            .points
            .iter()
            .map(|p| p.add(offset))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmpiricalMeasure { points })
    }

    /// Point `i` of the result is point `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<EmpiricalMeasure> {
        if !is_permutation(perm, self.len()) {
            return Err(Error::dim("permutation", self.len(), perm.len()));
        }
        Ok(EmpiricalMeasure {
            points: perm.iter().map(|&j| self.points[j].clone()).collect(),
        })
    }

    /// Mean of `|x|^2` over the cloud.
    pub fn second_moment(&self) -> f64 {
        self.points.iter().map(Vector::norm_sq).sum::<f64>() / self.len() as f64
    }

    fn check_paired(&self, other: &EmpiricalMeasure, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dim(context, format!("{} points", self.len()), format!("{} points", other.len())));
        }
        if self.dim() != other.dim() {
            return Err(Error::dim(context, format!("dim {}", self.dim()), format!("dim {}", other.dim())));
        }
        Ok(())
    }
}

/// Square matrix of finite nonnegative pairing costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(costs: Matrix) -> Result<Self> {
        if costs.rows() != costs.cols() {
            return Err(Error::dim("cost matrix", "square", format!("{}x{}", costs.rows(), costs.cols())));
        }
        if costs.rows() == 0 {
            return Err(Error::Empty("cost matrix"));
        }
        if !costs.is_finite() {
            return Err(Error::NonFinite("cost matrix"));
        }
        if let Some(&c) = costs.as_slice().iter().find(|&&c| c < 0.0) {
            return Err(Error::Range {
                name: "cost",
                value: c,
                range: "[0, inf)",
            });
        }
        Ok(CostMatrix(costs))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        CostMatrix::new(Matrix::from_rows(rows)?)
    }

    /// `c[i][j] = |a_i - b_j|^2`, rows built with the default executor.
    pub fn squared_euclidean(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<Self> {
        CostMatrix::squared_euclidean_with(a, b, Exec::default())
    }

    pub fn squared_euclidean_with(a: &EmpiricalMeasure, b: &EmpiricalMeasure, exec: Exec) -> Result<Self> {
        a.check_paired(b, "squared-euclidean costs")?;
        let m = a.len();
        let rows = exec.map(m, |i| {
            let ai = a.points[i].as_slice();
            b.points
                .iter()
                .map(|bj| sq_dist(ai, bj.as_slice()))
                .collect::<Vec<_>>()
        });
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        CostMatrix::new(Matrix::from_vec(m, m, data)?)
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Sum of `c[i][perm[i]]` in row order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Optimal permutation `permutation[i] = sigma(i)` and its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentResult {
    /// Number of rows assigned to their own index.
    pub fn fixed_points(&self) -> usize {
        self.permutation.iter().enumerate().filter(|(i, &j)| *i == j).count()
    }
}

pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Exhaustive search over all `m!` permutations in lexicographic order.
/// Strict improvement is required to replace the incumbent, so ties resolve
/// to the lexicographically smallest permutation.
pub fn brute_force_lap(cost: &CostMatrix) -> Result<AssignmentResult> {
    let m = cost.size();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::Size {
            context: "brute-force assignment",
            size: m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = perm.clone();
    let mut best_cost = cost.cost_of(&perm);
    while next_permutation(&mut perm) {
        let c = cost.cost_of(&perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Ok(AssignmentResult {
        permutation: best,
        total_cost: best_cost,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

pub(crate) fn is_permutation(perm: &[usize], m: usize) -> bool {
    if perm.len() != m {
        return false;
    }
    let mut seen = vec![false; m];
    perm.iter().all(|&j| j < m && !std::mem::replace(&mut seen[j], true))
}

const UNASSIGNED: usize = usize::MAX;

/// Jonker-Volgenant shortest augmenting path solver, O(m^3).
///
/// Phases: column reduction (columns scanned from last to first, each
/// assigned to its lowest-index minimum row if that row is still free),
/// reduction transfer for uniquely assigned rows, then one Dijkstra-style
/// augmentation per free row, free rows taken in increasing index order.
/// Within an augmentation, columns are scanned in the order of an index list
/// that starts as `0..m`, and a free column tied at the current minimum
/// distance ends the search as soon as it is reached. The solver never
/// consults anything but the input, so repeated calls return the same
/// permutation.
pub fn solve_lap(cost: &CostMatrix) -> Result<AssignmentResult> {
    let n = cost.size();
    let c = cost.matrix();
    if n == 1 {
        return Ok(AssignmentResult {
            permutation: vec![0],
            total_cost: c[(0, 0)],
        });
    }

    let mut v = vec![0.0; n];
    let mut row_of = vec![UNASSIGNED; n];
    let mut col_of = vec![UNASSIGNED; n];

    // Column reduction.
    for j in 0..n {
        let mut best = 0;
        for i in 1..n {
            if c[(i, j)] < c[(best, j)] {
                best = i;
            }
        }
        v[j] = c[(best, j)];
        row_of[j] = best;
    }
    let mut unique = vec![true; n];
    for j in (0..n).rev() {
        let i = row_of[j];
        if col_of[i] == UNASSIGNED {
            col_of[i] = j;
        } else {
            unique[i] = false;
            row_of[j] = UNASSIGNED;
        }
    }

    // Reduction transfer.
    let mut free_rows = Vec::new();
    for i in 0..n {
        let j = col_of[i];
        if j == UNASSIGNED {
            free_rows.push(i);
        } else if unique[i] {
            let mut min = f64::INFINITY;
            for k in (0..n).filter(|&k| k != j) {
                min = min.min(c[(i, k)] - v[k]);
            }
            v[j] -= min;
        }
    }

    let mut dist = vec![0.0; n];
    let mut pred = vec![0usize; n];
    let mut cols = vec![0usize; n];
    for free in free_rows {
        let sink = shortest_path(c, free, &row_of, &mut v, &mut dist, &mut pred, &mut cols);
        // Flip the alternating path back to the free row.
        let mut j = sink;
        loop {
            let i = pred[j];
            row_of[j] = i;
            let next = col_of[i];
            col_of[i] = j;
            if i == free {
                break;
            }
            j = next;
        }
    }

    let total_cost = cost.cost_of(&col_of);
    debug_assert!(is_permutation(&col_of, n));
    Ok(AssignmentResult {
        permutation: col_of,
        total_cost,
    })
}

/// One shortest augmenting path from `start` under column prices `v`.
/// Returns the free column that ends the path and updates prices of the
/// columns whose distance became final.
fn shortest_path(
    c: &Matrix,
    start: usize,
    row_of: &[usize],
    v: &mut [f64],
    dist: &mut [f64],
    pred: &mut [usize],
    cols: &mut [usize],
) -> usize {
    let n = v.len();
    for j in 0..n {
        cols[j] = j;
        dist[j] = c[(start, j)] - v[j];
        pred[j] = start;
    }
    // cols[..lo] final, cols[lo..hi] at the current minimum, cols[hi..] open.
    let (mut lo, mut hi, mut ready) = (0usize, 0usize, 0usize);
    let sink = 'search: loop {
        if lo == hi {
            ready = lo;
            hi = collect_minimum(lo, dist, cols);
            for &j in &cols[lo..hi] {
                if row_of[j] == UNASSIGNED {
                    break 'search j;
                }
            }
        }
        // Scan the columns at the current minimum.
        while lo != hi {
            let j = cols[lo];
            lo += 1;
            let i = row_of[j];
            let min = dist[j];
            let h = c[(i, j)] - v[j] - min;
            let mut k = hi;
            while k < n {
                let jj = cols[k];
                let reduced = c[(i, jj)] - v[jj] - h;
                if reduced < dist[jj] {
                    dist[jj] = reduced;
                    pred[jj] = i;
                    if reduced == min {
                        if row_of[jj] == UNASSIGNED {
                            break 'search jj;
                        }
                        cols.swap(k, hi);
                        hi += 1;
                    }
                }
                k += 1;
            }
        }
    };
    // Prices of finalized columns move by their distance below the sink's.
    let min = dist[sink];
    for &j in &cols[..ready] {
        v[j] += dist[j] - min;
    }
    sink
}

/// Moves every open column at the minimum distance to `cols[lo..hi]`.
fn collect_minimum(lo: usize, dist: &[f64], cols: &mut [usize]) -> usize {
    let mut hi = lo + 1;
    let mut min = dist[cols[lo]];
    for k in lo + 1..cols.len() {
        let j = cols[k];
        if dist[j] <= min {
            if dist[j] < min {
                hi = lo;
                min = dist[j];
            }
            cols[k] = cols[hi];
            cols[hi] = j;
            hi += 1;
        }
    }
    hi
}

/// Discrete W2 together with the optimal pairing it was computed from.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub assignment: AssignmentResult,
    pub w2: f64,
}

pub fn optimal_plan(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<TransportPlan> {
    let cost = CostMatrix::squared_euclidean(a, b)?;
    let assignment = solve_lap(&cost)?;
    let w2 = (assignment.total_cost.max(0.0) / a.len() as f64).sqrt();
    Ok(TransportPlan { assignment, w2 })
}

/// `sqrt(min over sigma of (1/m) sum |a_i - b_sigma(i)|^2)`.
pub fn wasserstein2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    Ok(optimal_plan(a, b)?.w2)
}

/// Fraction of samples that the optimal assignment from `inputs` to
/// `outputs` pairs with their own image (`outputs[i] = f(inputs[i])`).
/// 1 means the learned map is a discrete optimal transport map.
pub fn ots(inputs: &EmpiricalMeasure, outputs: &EmpiricalMeasure) -> Result<f64> {
    let plan = optimal_plan(inputs, outputs)?;
    Ok(plan.assignment.fixed_points() as f64 / inputs.len() as f64)
}
