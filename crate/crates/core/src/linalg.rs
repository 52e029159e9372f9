//! Sparse linear least squares through prefactorized normal equations.

use std::collections::BTreeMap;
use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};

fn sequential() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Affine substitution `x = T·y + t` from full unknowns `x` to reduced
/// unknowns `y`. Rows are written against `x` and expanded on insertion.
#[derive(Clone, Debug)]
pub struct VariableMap {
    terms: Vec<Vec<(usize, f64)>>,
    offset: Vec<f64>,
    reduced: usize,
}

impl VariableMap {
    pub fn identity(n: usize) -> Self {
        Self {
            terms: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            offset: vec![0.0; n],
            reduced: n,
        }
    }

    /// Map with `full` unknowns, each initially unset, over `reduced`
    /// unknowns.
    pub fn new(full: usize, reduced: usize) -> Self {
        Self {
            terms: vec![Vec::new(); full],
            offset: vec![0.0; full],
            reduced,
        }
    }

    pub fn set(&mut self, full: usize, terms: Vec<(usize, f64)>, offset: f64) {
        debug_assert!(terms.iter().all(|&(j, _)| j < self.reduced));
        self.terms[full] = terms;
        self.offset[full] = offset;
    }

    pub fn full_len(&self) -> usize {
        self.terms.len()
    }

    pub fn reduced_len(&self) -> usize {
        self.reduced
    }

    /// Evaluates `x = T·y + t`.
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .zip(&self.offset)
            .map(|(t, o)| o + t.iter().map(|&(j, c)| c * y[j]).sum::<f64>())
            .collect()
    }
}

/// Weighted rows `w_r (a_r·x − b_r)²` stored in compressed form over the
/// reduced unknowns of a [`VariableMap`].
#[derive(Clone, Debug)]
pub struct LeastSquares {
    map: VariableMap,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    weights: Vec<f64>,
    /// `a_r·t`, subtracted from the right-hand side.
    shift: Vec<f64>,
    scratch: BTreeMap<usize, f64>,
}

impl LeastSquares {
    pub fn new(map: VariableMap) -> Self {
        Self {
            map,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            weights: Vec::new(),
            shift: Vec::new(),
            scratch: BTreeMap::new(),
        }
    }

    pub fn map(&self) -> &VariableMap {
        &self.map
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn unknowns(&self) -> usize {
        self.map.reduced
    }

    /// Appends a row given as coefficients on the full unknowns; returns its
    /// index.
    pub fn push(&mut self, coeffs: &[(usize, f64)], weight: f64) -> usize {
        self.scratch.clear();
        let mut shift = 0.0;
        for &(i, c) in coeffs {
            shift += c * self.map.offset[i];
            for &(j, t) in &self.map.terms[i] {
                *self.scratch.entry(j).or_insert(0.0) += c * t;
            }
        }
        for (&j, &v) in &self.scratch {
            if v != 0.0 {
                self.cols.push(j);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.weights.push(weight);
        self.shift.push(shift);
        self.weights.len() - 1
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `AᵀWA` as lower-triangular triplets.
    fn normal_triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in 0..self.rows() {
            let w = self.weights[r];
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let cols = &self.cols[span.clone()];
            let vals = &self.vals[span];
            for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                for (&cb, &vb) in cols[..=a].iter().zip(&vals[..=a]) {
                    let (i, j) = if ca >= cb { (ca, cb) } else { (cb, ca) };
                    *acc.entry((j, i)).or_insert(0.0) += w * va * vb;
                }
            }
        }
        acc.into_iter().map(|((c, r), v)| Triplet::new(r, c, v)).collect()
    }

    /// Factorizes `AᵀWA`. Fails when the system is not positive definite.
    pub fn factorize(&self) -> Result<NormalFactor> {
        sequential();
        let n = self.unknowns();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &self.normal_triplets())
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        Ok(NormalFactor { llt, n })
    }

    /// `AᵀW(b − A·t)` for per-row targets `b`, one slice per right-hand side.
    pub fn normal_rhs(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.unknowns()];
        for r in 0..self.rows() {
            let s = self.weights[r] * (b[r] - self.shift[r]);
            for (c, v) in self.row(r) {
                out[c] += v * s;
            }
        }
        out
    }

    /// Solves for the full unknowns given per-row targets.
    pub fn solve(&self, factor: &NormalFactor, b: &[f64]) -> Vec<f64> {
        let y = factor.solve(&self.normal_rhs(b));
        self.map.expand(&y)
    }

    /// Weighted energy `Σ w_r (a_r·y + shift_r − b_r)²` at reduced unknowns.
    pub fn energy_reduced(&self, y: &[f64], b: &[f64]) -> f64 {
        (0..self.rows())
            .map(|r| {
                let ax: f64 = self.row(r).map(|(c, v)| v * y[c]).sum();
                let e = ax + self.shift[r] - b[r];
                self.weights[r] * e * e
            })
            .sum()
    }

    /// `‖AᵀW(Ay − b')‖ / ‖AᵀWb'‖` at reduced unknowns `y`, the optimality
    /// residual of the normal equations.
    pub fn normal_residual(&self, y: &[f64], b: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.unknowns()];
        for r in 0..self.rows() {
            let ax: f64 = self.row(r).map(|(c, v)| v * y[c]).sum();
            let s = self.weights[r] * (ax + self.shift[r] - b[r]);
            for (c, v) in self.row(r) {
                grad[c] += v * s;
            }
        }
        let rhs = self.normal_rhs(b);
        let num = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let den = rhs.iter().map(|g| g * g).sum::<f64>().sqrt();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

/// Cholesky factor of a normal matrix, reusable across right-hand sides.
pub struct NormalFactor {
    llt: Llt<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for NormalFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalFactor").field("n", &self.n).finish()
    }
}

impl NormalFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.llt.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Solves several right-hand sides given as columns.
    pub fn solve_columns(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let b = Mat::from_fn(self.n, cols.len(), |i, j| cols[j][i]);
        let x = self.llt.solve(&b);
        (0..cols.len()).map(|j| (0..self.n).map(|i| x[(i, j)]).collect()).collect()
    }
}

/// Factorizes a symmetric positive definite matrix given by lower or full
/// triplets (duplicates summed, upper entries ignored).
pub fn factorize_spd(n: usize, entries: &[(usize, usize, f64)]) -> Result<NormalFactor> {
    sequential();
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(r, c, v) in entries {
        if r >= c {
            *acc.entry((c, r)).or_insert(0.0) += v;
        }
    }
    let trip: Vec<_> = acc.into_iter().map(|((c, r), v)| Triplet::new(r, c, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let llt = mat
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    Ok(NormalFactor { llt, n })
}
