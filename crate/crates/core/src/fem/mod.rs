//! Element machinery: quadrature, bases, affine and Piola maps, L²
//! projections, the discrete HDG gradient and the discrete 1,h norms.
//!
//! All cell fields use the orthonormal reference basis pulled back through
//! the affine map, so on a cell `E` the mass matrix is `det J · I` and
//! `‖w‖²_E = det J · Σ w_i²`. Face fields use the orthonormal Legendre
//! basis in the global face parameter, so `‖ŵ‖²_e = |e| · Σ ŵ_j²`.

pub mod basis;
pub mod quadrature;
pub mod rt;

use rayon::prelude::*;

use crate::mesh::Mesh;
pub use basis::{dim_pk, FaceBasis, ScalarBasis};
pub use quadrature::{edge_rule, triangle_rule, EdgeRule, QuadratureRule};
pub use rt::{piola, RtBasis};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FemError {
    #[error("quadrature exactness {requested} exceeds supported maximum {max}")]
    QuadratureTooHigh { requested: usize, max: usize },
    #[error("monomial Gram matrix of degree {0} is not positive definite")]
    SingularGram(usize),
    #[error("singular local system on cell {cell}")]
    SingularLocal { cell: usize },
    #[error("field degree mismatch: expected {expected}, found {found}")]
    DegreeMismatch { expected: usize, found: usize },
}

/// Affine map `x = v0 + J x̂` from the reference triangle onto a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMap {
    pub v0: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    pub det: f64,
}

impl CellMap {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        Self::from_vertices(mesh.cell_vertices(cell))
    }

    pub fn from_vertices(v: [[f64; 2]; 3]) -> Self {
        let jac = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        Self {
            v0: v[0],
            jac,
            inv,
            det,
        }
    }

    pub fn to_physical(&self, xh: [f64; 2]) -> [f64; 2] {
        [
            self.v0[0] + self.jac[0][0] * xh[0] + self.jac[0][1] * xh[1],
            self.v0[1] + self.jac[1][0] * xh[0] + self.jac[1][1] * xh[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.v0[0], x[1] - self.v0[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient: `J⁻ᵀ ĝ`.
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }

    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        piola(&self.jac, self.det, v)
    }
}

const REF_VERTS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Point on local edge `j` (from reference vertex j to j+1) at parameter `t`.
pub fn edge_ref_point(j: usize, t: f64) -> [f64; 2] {
    let a = REF_VERTS[j];
    let b = REF_VERTS[(j + 1) % 3];
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Local edge parameter for the global face parameter `s`, given the cell's
/// orientation sign for that face.
pub fn local_param(sign: f64, s: f64) -> f64 {
    if sign > 0.0 {
        s
    } else {
        1.0 - s
    }
}

/// Basis evaluation tables at the default quadrature points for degree k.
#[derive(Debug, Clone)]
pub struct Tables {
    pub k: usize,
    pub scalar: ScalarBasis,
    pub face: FaceBasis,
    pub rt: RtBasis,
    pub vol: QuadratureRule,
    /// `phi[q][i]`
    pub phi: Vec<Vec<f64>>,
    /// Reference gradients `dphi[q][i]`.
    pub dphi: Vec<Vec<[f64; 2]>>,
    pub rt_vals: Vec<Vec<[f64; 2]>>,
    pub rt_divs: Vec<Vec<f64>>,
    pub edge: EdgeRule,
    /// `psi[q][l]` at the face quadrature points.
    pub psi: Vec<Vec<f64>>,
    /// Cell basis on each local edge: index `2 j + (sign < 0)`, then `[q][i]`.
    trace_phi: Vec<Vec<Vec<f64>>>,
    trace_rt: Vec<Vec<Vec<[f64; 2]>>>,
    trace_pts: Vec<Vec<[f64; 2]>>,
}

impl Tables {
    pub fn new(k: usize) -> Result<Self, FemError> {
        Self::with_exactness(k, 2 * k + 2, 2 * k + 3)
    }

    pub fn with_exactness(k: usize, vol_deg: usize, face_deg: usize) -> Result<Self, FemError> {
        let scalar = ScalarBasis::new(k)?;
        let face = FaceBasis::new(k);
        let rt = RtBasis::new(k)?;
        let vol = triangle_rule(vol_deg)?;
        let edge = edge_rule(face_deg)?;
        let phi = vol.points.iter().map(|&p| scalar.values(p)).collect();
        let dphi = vol.points.iter().map(|&p| scalar.grads(p)).collect();
        let (rt_vals, rt_divs) = vol.points.iter().map(|&p| rt.values(p)).unzip();
        let psi = edge.points.iter().map(|&s| face.values(s)).collect();
        let mut trace_phi = Vec::with_capacity(6);
        let mut trace_rt = Vec::with_capacity(6);
        let mut trace_pts = Vec::with_capacity(6);
        for j in 0..3 {
            for sign in [1.0, -1.0] {
                let pts: Vec<[f64; 2]> = edge
                    .points
                    .iter()
                    .map(|&s| edge_ref_point(j, local_param(sign, s)))
                    .collect();
                trace_phi.push(pts.iter().map(|&p| scalar.values(p)).collect());
                trace_rt.push(pts.iter().map(|&p| rt.values(p).0).collect());
                trace_pts.push(pts);
            }
        }
        Ok(Self {
            k,
            scalar,
            face,
            rt,
            vol,
            phi,
            dphi,
            rt_vals,
            rt_divs,
            edge,
            psi,
            trace_phi,
            trace_rt,
            trace_pts,
        })
    }

    /// Scalar dofs per cell.
    pub fn nphi(&self) -> usize {
        self.scalar.dim()
    }

    /// Dofs per face.
    pub fn npsi(&self) -> usize {
        self.face.dim()
    }

    pub fn nrt(&self) -> usize {
        self.rt.dim()
    }

    fn slot(j: usize, sign: f64) -> usize {
        2 * j + usize::from(sign < 0.0)
    }

    /// Cell basis values `[q][i]` on local edge `j`, ordered by the global
    /// face quadrature points.
    pub fn trace_phi(&self, j: usize, sign: f64) -> &[Vec<f64>] {
        &self.trace_phi[Self::slot(j, sign)]
    }

    pub fn trace_rt(&self, j: usize, sign: f64) -> &[Vec<[f64; 2]>] {
        &self.trace_rt[Self::slot(j, sign)]
    }

    pub fn trace_points(&self, j: usize, sign: f64) -> &[[f64; 2]] {
        &self.trace_pts[Self::slot(j, sign)]
    }
}

/// Cellwise polynomial field with `ncomp` components, each stored as
/// `nloc` coefficients per cell (component-major within a cell).
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub k: usize,
    pub ncomp: usize,
    pub nloc: usize,
    pub data: Vec<f64>,
}

impl CellField {
    pub fn zeros(ncells: usize, k: usize, ncomp: usize) -> Self {
        let nloc = dim_pk(k);
        Self {
            k,
            ncomp,
            nloc,
            data: vec![0.0; ncells * ncomp * nloc],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.data.len() / (self.ncomp * self.nloc)
    }

    pub fn block_len(&self) -> usize {
        self.ncomp * self.nloc
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let b = self.block_len();
        &self.data[c * b..(c + 1) * b]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        let b = self.block_len();
        &mut self.data[c * b..(c + 1) * b]
    }

    /// Component `d` on cell `c` evaluated against basis values `phi`.
    pub fn eval(&self, c: usize, d: usize, phi: &[f64]) -> f64 {
        let off = c * self.block_len() + d * self.nloc;
        self.data[off..off + self.nloc]
            .iter()
            .zip(phi)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn eval_vec(&self, c: usize, phi: &[f64]) -> [f64; 2] {
        [self.eval(c, 0, phi), self.eval(c, 1, phi)]
    }

    /// Reference gradient of component `d`.
    pub fn eval_ref_grad(&self, c: usize, d: usize, dphi: &[[f64; 2]]) -> [f64; 2] {
        let off = c * self.block_len() + d * self.nloc;
        let mut g = [0.0; 2];
        for (a, gi) in self.data[off..off + self.nloc].iter().zip(dphi) {
            g[0] += a * gi[0];
            g[1] += a * gi[1];
        }
        g
    }

    /// Evaluate at a physical point inside cell `c`.
    pub fn value_at(&self, mesh: &Mesh, basis: &ScalarBasis, c: usize, x: [f64; 2]) -> Vec<f64> {
        let phi = basis.values(CellMap::new(mesh, c).to_reference(x));
        (0..self.ncomp).map(|d| self.eval(c, d, &phi)).collect()
    }

    /// Global L² norm, exact for the orthonormal basis.
    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        self.l2_norm_sq(mesh).sqrt()
    }

    pub fn l2_norm_sq(&self, mesh: &Mesh) -> f64 {
        (0..self.num_cells())
            .map(|c| 2.0 * mesh.cell_area(c) * self.cell(c).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// `(a, b)_Ω` for fields with identical layout.
    pub fn inner(&self, other: &CellField, mesh: &Mesh) -> f64 {
        (0..self.num_cells())
            .map(|c| {
                2.0 * mesh.cell_area(c)
                    * self
                        .cell(c)
                        .iter()
                        .zip(other.cell(c))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .sum()
    }

    /// `∫_E` of component `d` (only the constant mode contributes).
    pub fn cell_integral(&self, mesh: &Mesh, c: usize, d: usize) -> f64 {
        // φ_0 = √2 on the reference triangle.
        let det = 2.0 * mesh.cell_area(c);
        det * self.cell(c)[d * self.nloc] * 2f64.sqrt() * 0.5
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn axpy(&mut self, a: f64, x: &CellField) {
        self.data.iter_mut().zip(&x.data).for_each(|(y, x)| *y += a * x);
    }
}

/// Facewise P_k field.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub k: usize,
    pub nloc: usize,
    pub data: Vec<f64>,
}

impl FaceField {
    pub fn zeros(nfaces: usize, k: usize) -> Self {
        Self {
            k,
            nloc: k + 1,
            data: vec![0.0; nfaces * (k + 1)],
        }
    }

    pub fn face(&self, f: usize) -> &[f64] {
        &self.data[f * self.nloc..(f + 1) * self.nloc]
    }

    pub fn face_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.data[f * self.nloc..(f + 1) * self.nloc]
    }

    pub fn eval(&self, f: usize, psi: &[f64]) -> f64 {
        self.face(f).iter().zip(psi).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }
}

/// Cellwise RT_k field in the Piola-mapped reference basis.
#[derive(Debug, Clone, PartialEq)]
pub struct RtField {
    pub k: usize,
    pub nloc: usize,
    pub data: Vec<f64>,
}

impl RtField {
    pub fn zeros(ncells: usize, k: usize) -> Self {
        let nloc = (k + 1) * (k + 3);
        Self {
            k,
            nloc,
            data: vec![0.0; ncells * nloc],
        }
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.data[c * self.nloc..(c + 1) * self.nloc]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.nloc..(c + 1) * self.nloc]
    }

    /// Physical value from reference basis values.
    pub fn eval(&self, c: usize, map: &CellMap, vals: &[[f64; 2]]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (a, b) in self.cell(c).iter().zip(vals) {
            v[0] += a * b[0];
            v[1] += a * b[1];
        }
        map.piola(v)
    }

    /// Physical divergence from reference divergences.
    pub fn eval_div(&self, c: usize, map: &CellMap, divs: &[f64]) -> f64 {
        self.cell(c).iter().zip(divs).map(|(a, b)| a * b).sum::<f64>() / map.det
    }

    pub fn value_at(&self, mesh: &Mesh, basis: &RtBasis, c: usize, x: [f64; 2]) -> [f64; 2] {
        let map = CellMap::new(mesh, c);
        let (v, _) = basis.values(map.to_reference(x));
        self.eval(c, &map, &v)
    }
}

/// Per-cell L² projection π_k of a scalar function.
pub fn project_cell<F>(mesh: &Mesh, tables: &Tables, f: F) -> CellField
where
    F: Fn([f64; 2]) -> f64 + Sync,
{
    project_cell_components(mesh, tables, 1, |x, out| out[0] = f(x))
}

/// Componentwise π_k of a vector function.
pub fn project_cell_vector<F>(mesh: &Mesh, tables: &Tables, f: F) -> CellField
where
    F: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    project_cell_components(mesh, tables, 2, |x, out| out.copy_from_slice(&f(x)))
}

pub fn project_cell_components<F>(mesh: &Mesh, tables: &Tables, ncomp: usize, f: F) -> CellField
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    let mut out = CellField::zeros(mesh.num_cells(), tables.k, ncomp);
    let n = out.nloc;
    out.data
        .par_chunks_mut(ncomp * n)
        .enumerate()
        .for_each(|(c, block)| {
            let map = CellMap::new(mesh, c);
            let mut val = vec![0.0; ncomp];
            for (q, (&p, &w)) in tables.vol.points.iter().zip(&tables.vol.weights).enumerate() {
                f(map.to_physical(p), &mut val);
                for d in 0..ncomp {
                    for i in 0..n {
                        block[d * n + i] += w * val[d] * tables.phi[q][i];
                    }
                }
            }
        });
    out
}

/// Per-face L² projection π̂_k.
pub fn project_face<F>(mesh: &Mesh, tables: &Tables, f: F) -> FaceField
where
    F: Fn([f64; 2]) -> f64 + Sync,
{
    let mut out = FaceField::zeros(mesh.num_faces(), tables.k);
    let n = out.nloc;
    out.data.par_chunks_mut(n).enumerate().for_each(|(fi, block)| {
        for (q, (&s, &w)) in tables.edge.points.iter().zip(&tables.edge.weights).enumerate() {
            let v = f(mesh.face_point(fi, s));
            for l in 0..n {
                block[l] += w * v * tables.psi[q][l];
            }
        }
    });
    out
}

/// Right-hand side of the lifting system on one cell, scaled by `1/det`:
/// `(∇w, φ_i e_d)_E − ⟨w − ŵ, φ_i n_d⟩_∂E`.
fn lift_cell(mesh: &Mesh, tables: &Tables, w: &CellField, what: &FaceField, c: usize, out: &mut [f64]) {
    let n = tables.nphi();
    let map = CellMap::new(mesh, c);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (q, &wq) in tables.vol.weights.iter().enumerate() {
        let g = map.grad(w.eval_ref_grad(c, 0, &tables.dphi[q]));
        for i in 0..n {
            out[i] += wq * g[0] * tables.phi[q][i];
            out[n + i] += wq * g[1] * tables.phi[q][i];
        }
    }
    for j in 0..3 {
        let cf = mesh.cell_faces[c][j];
        let face = &mesh.faces[cf.face];
        let nrm = mesh.outward_normal(c, j);
        let tphi = tables.trace_phi(j, cf.sign);
        let scale = face.length / map.det;
        for (q, &wq) in tables.edge.weights.iter().enumerate() {
            let jump = w.eval(c, 0, &tphi[q]) - what.eval(cf.face, &tables.psi[q]);
            for i in 0..n {
                let t = scale * wq * jump * tphi[q][i];
                out[i] -= t * nrm[0];
                out[n + i] -= t * nrm[1];
            }
        }
    }
}

/// Discrete HDG gradient G_h(w, ŵ) ∈ (P_k)², one local mass solve per cell.
pub fn lift_gradient(mesh: &Mesh, tables: &Tables, w: &CellField, what: &FaceField) -> CellField {
    assert_eq!(w.ncomp, 1, "lift_gradient expects a scalar field");
    let mut g = CellField::zeros(mesh.num_cells(), tables.k, 2);
    let n = tables.nphi();
    // The local mass matrix is det·I in the orthonormal basis, so the
    // scaled right-hand side already is the solution.
    g.data.par_chunks_mut(2 * n).enumerate().for_each(|(c, block)| {
        lift_cell(mesh, tables, w, what, c, block);
    });
    g
}

/// `‖w − ŵ‖²_{∂E_h}`, summing both sides of interior faces.
pub fn jump_norm_sq(mesh: &Mesh, tables: &Tables, w: &CellField, what: &FaceField) -> f64 {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut s = 0.0;
            for j in 0..3 {
                let cf = mesh.cell_faces[c][j];
                let len = mesh.faces[cf.face].length;
                let tphi = tables.trace_phi(j, cf.sign);
                for (q, &wq) in tables.edge.weights.iter().enumerate() {
                    let d = w.eval(c, 0, &tphi[q]) - what.eval(cf.face, &tables.psi[q]);
                    s += len * wq * d * d;
                }
            }
            s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// `(‖(w,ŵ)‖_{1,h}, ‖(w,ŵ)‖_{1,h,0})`.
pub fn norm_1h(mesh: &Mesh, tables: &Tables, w: &CellField, what: &FaceField) -> (f64, f64) {
    let g = lift_gradient(mesh, tables, w, what);
    let semi = g.l2_norm_sq(mesh) + jump_norm_sq(mesh, tables, w, what);
    ((w.l2_norm_sq(mesh) + semi).sqrt(), semi.sqrt())
}
