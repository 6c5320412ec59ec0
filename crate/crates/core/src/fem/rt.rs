//! Raviart–Thomas space RT_k on the reference triangle, mapped to physical
//! cells with the contravariant Piola transform.
//!
//! Basis: `(P_k)²` (orthonormal scalar basis in each component) followed by
//! `x̃ m` for the homogeneous monomials `m` of degree k in `x̃ = x̂ − x̂_c`,
//! with `x̂_c` the reference centroid.

use super::basis::{dim_pk, ScalarBasis};
use super::FemError;

#[derive(Debug, Clone)]
pub struct RtBasis {
    pub k: usize,
    scalar: ScalarBasis,
}

const CENTER: [f64; 2] = [1.0 / 3.0, 1.0 / 3.0];

impl RtBasis {
    pub fn new(k: usize) -> Result<Self, FemError> {
        Ok(Self {
            k,
            scalar: ScalarBasis::new(k)?,
        })
    }

    pub fn dim(&self) -> usize {
        (self.k + 1) * (self.k + 3)
    }

    /// Values and reference divergences at a reference point.
    pub fn eval(&self, x: [f64; 2], vals: &mut [[f64; 2]], divs: &mut [f64]) {
        let n = dim_pk(self.k);
        let phi = self.scalar.values(x);
        for i in 0..n {
            vals[i] = [phi[i], 0.0];
            vals[n + i] = [0.0, phi[i]];
        }
        let g = self.scalar.grads(x);
        for i in 0..n {
            divs[i] = g[i][0];
            divs[n + i] = g[i][1];
        }
        let xt = [x[0] - CENTER[0], x[1] - CENTER[1]];
        let k = self.k as i32;
        for a in 0..=k {
            let m = xt[0].powi(k - a) * xt[1].powi(a);
            let idx = 2 * n + a as usize;
            vals[idx] = [xt[0] * m, xt[1] * m];
            divs[idx] = (self.k as f64 + 2.0) * m;
        }
    }

    pub fn values(&self, x: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut v = vec![[0.0; 2]; self.dim()];
        let mut d = vec![0.0; self.dim()];
        self.eval(x, &mut v, &mut d);
        (v, d)
    }
}

/// Contravariant Piola transform `v = J v̂ / det J`.
pub fn piola(jac: &[[f64; 2]; 2], det: f64, v: [f64; 2]) -> [f64; 2] {
    [
        (jac[0][0] * v[0] + jac[0][1] * v[1]) / det,
        (jac[1][0] * v[0] + jac[1][1] * v[1]) / det,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_lies_in_pk_and_matches_fd() {
        let b = RtBasis::new(2).unwrap();
        let x = [0.3, 0.2];
        let (_, d) = b.values(x);
        let h = 1e-6;
        let (xp, _) = b.values([x[0] + h, x[1]]);
        let (xm, _) = b.values([x[0] - h, x[1]]);
        let (yp, _) = b.values([x[0], x[1] + h]);
        let (ym, _) = b.values([x[0], x[1] - h]);
        for i in 0..b.dim() {
            let fd = (xp[i][0] - xm[i][0] + yp[i][1] - ym[i][1]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn normal_trace_is_degree_k_on_edges() {
        // On each reference edge x̂·n̂ is constant, so x̃ m · n̂ has degree k.
        let b = RtBasis::new(2).unwrap();
        let ends = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let normals = [[0.0, -1.0], [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()], [-1.0, 0.0]];
        for j in 0..3 {
            let (a, c) = (ends[j], ends[(j + 1) % 3]);
            // degree-3 finite difference along the edge must vanish
            let f = |t: f64| {
                let p = [a[0] + t * (c[0] - a[0]), a[1] + t * (c[1] - a[1])];
                let (v, _) = b.values(p);
                v.iter()
                    .map(|vi| vi[0] * normals[j][0] + vi[1] * normals[j][1])
                    .collect::<Vec<_>>()
            };
            let (f0, f1, f2, f3) = (f(0.1), f(0.3), f(0.5), f(0.7));
            for i in 0..b.dim() {
                let d3 = f3[i] - 3.0 * f2[i] + 3.0 * f1[i] - f0[i];
                assert!(d3.abs() < 1e-12, "edge {j} fn {i}");
            }
        }
    }
}
