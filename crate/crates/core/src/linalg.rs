//! Sparse assembly and direct solves for the trace systems, plus dense local
//! kernels used by static condensation.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("triplet ({row},{col}) out of range for dimension {n}")]
    OutOfRange { row: usize, col: usize, n: usize },
    #[error("right-hand side length {found} does not match dimension {n}")]
    RhsLength { found: usize, n: usize },
    #[error("right-hand side is not orthogonal to the kernel: defect {defect:e} (‖b‖ = {norm:e})")]
    Incompatible { defect: f64, norm: f64 },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("matrix is singular or ill-conditioned: relative residual {0:e}")]
    Singular(f64),
    #[error("singular local block")]
    SingularLocal,
}

/// Square matrix in compressed row form with its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Build a CSR matrix from triplets. Duplicates are summed after sorting by
/// `(row, col, value)`, so the result does not depend on triplet order.
pub fn assemble(
    n: usize,
    mut triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
) -> Result<SparseSystem, LinalgError> {
    if rhs.len() != n {
        return Err(LinalgError::RhsLength { found: rhs.len(), n });
    }
    if let Some(&(row, col, _)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
        return Err(LinalgError::OutOfRange { row, col, n });
    }
    triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    let mut row_ptr = vec![0usize; n + 1];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in triplets {
        if last == Some((r, c)) {
            *values.last_mut().expect("entry exists") += v;
        } else {
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    Ok(SparseSystem {
        n,
        row_ptr,
        col_idx,
        values,
        rhs,
    })
}

impl SparseSystem {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(p) => self.values[a + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| self.values[p] * x[self.col_idx[p]])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] = self.values[p];
            }
        }
        m
    }

    fn triplets(&self) -> impl Iterator<Item = Triplet<usize, usize, f64>> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| Triplet::new(i, self.col_idx[p], self.values[p]))
        })
    }
}

impl SparseSystem {
    /// `b − A x` with error-free products and compensated summation, so
    /// that the result is accurate to about one rounding of each entry even
    /// when `|A||x|` is much larger than `b`.
    pub fn residual_compensated(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (mut s, mut c) = (b[i], 0.0);
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let a = -self.values[p];
                    let xv = x[self.col_idx[p]];
                    let prod = a * xv;
                    let perr = a.mul_add(xv, -prod);
                    let t = s + prod;
                    let bb = t - s;
                    let serr = (s - (t - bb)) + (prod - bb);
                    s = t;
                    c += serr + perr;
                }
                s + c
            })
            .collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual accepted from a direct solve.
pub const RESIDUAL_TOL: f64 = 1e-9;

const MAX_REFINEMENT: usize = 3;

/// Relative compatibility defect accepted when a kernel is supplied.
pub const COMPAT_TOL: f64 = 1e-9;

/// Direct sparse LU solve. With `kernel = Some(z)` the matrix is assumed to
/// have the one-dimensional null space spanned by `z` (and so does its
/// transpose); the right-hand side must be orthogonal to `z` up to
/// round-off. The unknown with the largest `|z_i|` is pinned to zero, the
/// reduced system is solved, and the returned solution satisfies `zᵀx = 0`.
pub fn solve_sparse(system: &SparseSystem, kernel: Option<&[f64]>) -> Result<Vec<f64>, LinalgError> {
    solve_sparse_scaled(system, kernel, 0.0)
}

/// As [`solve_sparse`] with the residual and compatibility tolerances taken
/// relative to `max(‖b‖, scale)`. Used for correction solves, whose
/// right-hand side is a small residual of a larger system.
pub fn solve_sparse_scaled(system: &SparseSystem, kernel: Option<&[f64]>, scale: f64) -> Result<Vec<f64>, LinalgError> {
    let n = system.n;
    if norm(&system.rhs) == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let bnorm = norm(&system.rhs).max(scale);
    let mut rhs = system.rhs.clone();
    let pin = match kernel {
        None => None,
        Some(z) => {
            let zz: f64 = z.iter().map(|v| v * v).sum();
            let defect = z.iter().zip(&system.rhs).map(|(a, b)| a * b).sum::<f64>() / zz.sqrt();
            if defect.abs() > COMPAT_TOL * bnorm.max(f64::MIN_POSITIVE) {
                return Err(LinalgError::Incompatible {
                    defect: defect.abs(),
                    norm: bnorm,
                });
            }
            let a = defect / zz.sqrt();
            rhs.iter_mut().zip(z).for_each(|(r, zi)| *r -= a * zi);
            (0..n).max_by(|&i, &j| z[i].abs().total_cmp(&z[j].abs()))
        }
    };
    // reduced index of a full index, None for the pinned unknown
    let reduce = |i: usize| -> Option<usize> {
        match pin {
            Some(p) if i == p => None,
            Some(p) if i > p => Some(i - 1),
            _ => Some(i),
        }
    };
    let dim = if pin.is_some() { n - 1 } else { n };
    let trip: Vec<Triplet<usize, usize, f64>> = system
        .triplets()
        .filter_map(|t| Some(Triplet::new(reduce(t.row)?, reduce(t.col)?, t.val)))
        .collect();
    if dim == 0 {
        return Ok(vec![0.0; n]);
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trip)
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
    let project = |x: &mut Vec<f64>| {
        if let Some(z) = kernel {
            // remove round-off components along the kernel
            let zz: f64 = z.iter().map(|v| v * v).sum();
            let a = z.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() / zz;
            x.iter_mut().zip(z).for_each(|(xi, zi)| *xi -= a * zi);
        }
    };
    let lu_solve = |r: &[f64]| -> Vec<f64> {
        let mut b = Mat::<f64>::zeros(dim, 1);
        for (i, &v) in r.iter().enumerate() {
            if let Some(ri) = reduce(i) {
                b[(ri, 0)] = v;
            }
        }
        lu.solve_in_place(b.as_mut());
        (0..n).map(|i| reduce(i).map_or(0.0, |ri| b[(ri, 0)])).collect()
    };
    let residual = |x: &[f64]| system.residual_compensated(x, &rhs);
    let mut x = lu_solve(&rhs);
    project(&mut x);
    let mut r = residual(&x);
    let mut res = norm(&r) / bnorm;
    // iterative refinement for badly scaled systems
    for _ in 0..MAX_REFINEMENT {
        if !res.is_finite() || res <= 1e-3 * RESIDUAL_TOL {
            break;
        }
        let dx = lu_solve(&r);
        let mut y: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        project(&mut y);
        let ry = residual(&y);
        let rn = norm(&ry) / bnorm;
        if !(rn < res) {
            break;
        }
        (x, r, res) = (y, ry, rn);
    }
    log::debug!("sparse solve n = {n}: relative residual {res:e}");
    if !res.is_finite() || res > RESIDUAL_TOL {
        return Err(LinalgError::Singular(res));
    }
    Ok(x)
}

/// Dense LU with partial pivoting of one element block.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    #[cfg(debug_assertions)]
    a: DMatrix<f64>,
}

impl LocalBlock {
    pub fn factor(a: DMatrix<f64>) -> Result<Self, LinalgError> {
        let lu = a.clone().lu();
        let u = lu.u();
        let dmax = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dmin = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(dmin > 1e-14 * dmax) {
            return Err(LinalgError::SingularLocal);
        }
        Ok(Self {
            lu,
            #[cfg(debug_assertions)]
            a,
        })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.lu.solve(b).expect("factor checked pivots");
        #[cfg(debug_assertions)]
        {
            let r = (&self.a * &x - b).norm();
            let scale = self.a.norm() * x.norm() + b.norm();
            debug_assert!(r <= 1e-11 * scale.max(f64::MIN_POSITIVE), "local residual {r:e}");
        }
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }
}
