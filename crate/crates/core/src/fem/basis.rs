//! Orthonormal polynomial bases on the reference triangle and the unit
//! interval.

use nalgebra::DMatrix;

use super::FemError;

/// Number of scalar functions in P_k on a triangle.
pub fn dim_pk(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// L²(T̂)-orthonormal basis of P_k on the reference triangle, obtained by
/// Cholesky orthonormalization of the graded monomials `x^a y^b`
/// (ordered by total degree). The first function is the constant `√2`,
/// and the first `dim_pk(j)` functions span P_j for every `j ≤ k`.
#[derive(Debug, Clone)]
pub struct ScalarBasis {
    pub k: usize,
    exps: Vec<(usize, usize)>,
    /// Row i holds the monomial coefficients of basis function i.
    coef: Vec<Vec<f64>>,
}

impl ScalarBasis {
    pub fn new(k: usize) -> Result<Self, FemError> {
        let mut exps = Vec::with_capacity(dim_pk(k));
        for d in 0..=k {
            for b in 0..=d {
                exps.push((d - b, b));
            }
        }
        let n = exps.len();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let a = exps[i].0 + exps[j].0;
            let b = exps[i].1 + exps[j].1;
            factorial(a) * factorial(b) / factorial(a + b + 2)
        });
        let chol = gram.cholesky().ok_or(FemError::SingularGram(k))?;
        // G = L Lᵀ, so the rows of L⁻¹ give orthonormal combinations.
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(FemError::SingularGram(k))?;
        let coef = (0..n)
            .map(|i| (0..n).map(|j| linv[(i, j)]).collect())
            .collect();
        Ok(Self { k, exps, coef })
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    fn monomials(&self, x: [f64; 2], out: &mut [f64]) {
        for (m, &(a, b)) in out.iter_mut().zip(&self.exps) {
            *m = x[0].powi(a as i32) * x[1].powi(b as i32);
        }
    }

    pub fn eval(&self, x: [f64; 2], out: &mut [f64]) {
        let n = self.dim();
        let mut mono = vec![0.0; n];
        self.monomials(x, &mut mono);
        for (o, row) in out.iter_mut().zip(&self.coef) {
            *o = row.iter().zip(&mono).map(|(c, m)| c * m).sum();
        }
    }

    pub fn values(&self, x: [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.eval(x, &mut v);
        v
    }

    /// Gradients with respect to reference coordinates.
    pub fn eval_grad(&self, x: [f64; 2], out: &mut [[f64; 2]]) {
        let n = self.dim();
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            if a > 0 {
                dx[i] = a as f64 * x[0].powi(a as i32 - 1) * x[1].powi(b as i32);
            }
            if b > 0 {
                dy[i] = b as f64 * x[0].powi(a as i32) * x[1].powi(b as i32 - 1);
            }
        }
        for (o, row) in out.iter_mut().zip(&self.coef) {
            o[0] = row.iter().zip(&dx).map(|(c, m)| c * m).sum();
            o[1] = row.iter().zip(&dy).map(|(c, m)| c * m).sum();
        }
    }

    pub fn grads(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let mut g = vec![[0.0; 2]; self.dim()];
        self.eval_grad(x, &mut g);
        g
    }
}

/// Legendre polynomials orthonormal on `[0, 1]`:
/// `ψ_j(s) = √(2j+1) P_j(2s − 1)`.
#[derive(Debug, Clone, Copy)]
pub struct FaceBasis {
    pub k: usize,
}

impl FaceBasis {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn dim(&self) -> usize {
        self.k + 1
    }

    pub fn eval(&self, s: f64, out: &mut [f64]) {
        let t = 2.0 * s - 1.0;
        let (mut p0, mut p1) = (1.0, t);
        for (j, o) in out.iter_mut().enumerate().take(self.dim()) {
            let pj = match j {
                0 => 1.0,
                1 => t,
                _ => {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * t * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            *o = (2.0 * j as f64 + 1.0).sqrt() * pj;
        }
    }

    pub fn values(&self, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.eval(s, &mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::quadrature::{edge_rule, triangle_rule};

    #[test]
    fn scalar_basis_is_orthonormal() {
        for k in 0..=4 {
            let b = ScalarBasis::new(k).unwrap();
            assert_eq!(b.dim(), dim_pk(k));
            let q = triangle_rule(2 * k).unwrap();
            let n = b.dim();
            let mut m = vec![0.0; n * n];
            for (p, w) in q.points.iter().zip(&q.weights) {
                let v = b.values(*p);
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] += w * v[i] * v[j];
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((m[i * n + j] - e).abs() < 1e-11, "k={k} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = ScalarBasis::new(3).unwrap();
        let x = [0.21, 0.37];
        let g = b.grads(x);
        let h = 1e-6;
        let xp = b.values([x[0] + h, x[1]]);
        let xm = b.values([x[0] - h, x[1]]);
        let yp = b.values([x[0], x[1] + h]);
        let ym = b.values([x[0], x[1] - h]);
        for i in 0..b.dim() {
            assert!((g[i][0] - (xp[i] - xm[i]) / (2.0 * h)).abs() < 1e-6);
            assert!((g[i][1] - (yp[i] - ym[i]) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn face_basis_is_orthonormal() {
        for k in 0..=5 {
            let f = FaceBasis::new(k);
            let r = edge_rule(2 * k).unwrap();
            for i in 0..=k {
                for j in 0..=k {
                    let s: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(s, w)| {
                            let v = f.values(*s);
                            w * v[i] * v[j]
                        })
                        .sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((s - e).abs() < 1e-13);
                }
            }
        }
    }
}
