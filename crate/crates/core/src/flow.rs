//! Darcy HDG solve with static condensation onto the pressure trace, and the
//! element-wise Raviart–Thomas reconstruction of the velocity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::fem::{dim_pk, CellField, CellMap, FaceField, RtField, Tables};
use crate::linalg::{assemble, solve_sparse, solve_sparse_scaled, LinalgError, LocalBlock};
use crate::mesh::Mesh;

/// Space-time data function `(x, t, region_tag) -> value`.
pub type DataFn = Arc<dyn Fn([f64; 2], f64, u32) -> f64 + Send + Sync>;

pub fn constant_fn(v: f64) -> DataFn {
    Arc::new(move |_, _, _| v)
}

/// Value per region tag, with a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionValues {
    pub default: f64,
    pub by_tag: Vec<(u32, f64)>,
}

impl RegionValues {
    pub fn uniform(v: f64) -> Self {
        Self {
            default: v,
            by_tag: Vec::new(),
        }
    }

    pub fn get(&self, tag: u32) -> f64 {
        self.by_tag
            .iter()
            .find(|(t, _)| *t == tag)
            .map_or(self.default, |(_, v)| *v)
    }
}

/// Quarter-power style mixing law `μ(c) = (c μ_s^{-e} + (1-c) μ_o^{-e})^{-1/e}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viscosity {
    pub mu_o: f64,
    pub mu_s: f64,
    pub exponent: f64,
}

impl Viscosity {
    pub fn quarter_power(mu_o: f64, mu_s: f64) -> Self {
        Self {
            mu_o,
            mu_s,
            exponent: 0.25,
        }
    }

    /// `μ(c)` with `c` clamped to `[0, 1]`.
    pub fn eval(&self, c: f64) -> f64 {
        let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
        let e = self.exponent;
        (c * self.mu_s.powf(-e) + (1.0 - c) * self.mu_o.powf(-e)).powf(-1.0 / e)
    }
}

pub fn viscosity(law: &Viscosity, c: f64) -> f64 {
    law.eval(c)
}

#[derive(Clone)]
pub struct PhysicalModel {
    pub porosity: RegionValues,
    /// Scalar permeability per region.
    pub permeability: RegionValues,
    pub viscosity: Viscosity,
    pub d0: f64,
    pub alpha_l: f64,
    pub alpha_t: f64,
    pub f_i: DataFn,
    pub f_p: DataFn,
    pub c_bar: DataFn,
    /// Additional transport source (manufactured solutions).
    pub transport_forcing: Option<DataFn>,
    pub c0: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for PhysicalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhysicalModel")
            .field("porosity", &self.porosity)
            .field("permeability", &self.permeability)
            .field("viscosity", &self.viscosity)
            .field("d0", &self.d0)
            .field("alpha_l", &self.alpha_l)
            .field("alpha_t", &self.alpha_t)
            .finish_non_exhaustive()
    }
}

impl PhysicalModel {
    /// `(φ₀, φ₁)` over the cells of `mesh`.
    pub fn porosity_bounds(&self, mesh: &Mesh) -> (f64, f64) {
        mesh.region_tags.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &t| {
            let p = self.porosity.get(t);
            (lo.min(p), hi.max(p))
        })
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<(), FlowError> {
        let (lo, hi) = self.porosity_bounds(mesh);
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(FlowError::InvalidModel("porosity must be positive".into()));
        }
        if mesh.region_tags.iter().any(|&t| !(self.permeability.get(t) > 0.0)) {
            return Err(FlowError::InvalidModel("permeability must be positive".into()));
        }
        if !(self.viscosity.mu_o > 0.0 && self.viscosity.mu_s > 0.0) {
            return Err(FlowError::InvalidModel("viscosities must be positive".into()));
        }
        if !(self.d0 > 0.0 && self.alpha_l >= 0.0 && self.alpha_t >= 0.0) {
            return Err(FlowError::InvalidModel(
                "need d0 > 0 and nonnegative dispersivities".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("incompatible sources: |∫(f_I - f_P)| = {defect:e} exceeds {bound:e}")]
    Incompatible { defect: f64, bound: f64 },
    #[error("negative source value {0:e}")]
    NegativeSource(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("stabilization σ_u must be positive, got {0}")]
    BadSigma(f64),
    #[error("singular local block on cell {0}")]
    SingularLocal(usize),
    #[error("trace solve failed: {0}")]
    Solver(#[from] LinalgError),
}

/// Source data sampled at the volume quadrature points of every cell at one
/// time level. Index `[cell * nq + q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSlice {
    pub t: f64,
    pub nq: usize,
    pub f_i: Vec<f64>,
    pub f_p: Vec<f64>,
    pub c_bar: Vec<f64>,
    pub forcing: Vec<f64>,
    /// Factor applied to `f_P` so that the discrete integrals balance.
    pub production_scale: f64,
}

impl SourceSlice {
    /// Sample the model sources at time `t`. With `rebalance`, `f_P` is
    /// rescaled by `∫f_I / ∫f_P` (quadrature integrals) when both are
    /// positive, removing quadrature-level mismatch in the injection
    /// condition.
    pub fn evaluate(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, t: f64, rebalance: bool) -> Self {
        let nq = tables.vol.len();
        let nc = mesh.num_cells();
        let sample = |f: &DataFn| -> Vec<f64> {
            (0..nc)
                .into_par_iter()
                .flat_map_iter(|c| {
                    let map = CellMap::new(mesh, c);
                    let tag = mesh.region_tags[c];
                    tables.vol.points.iter().map(move |&p| f(map.to_physical(p), t, tag))
                })
                .collect()
        };
        let f_i = sample(&model.f_i);
        let f_p = sample(&model.f_p);
        let c_bar = sample(&model.c_bar);
        let forcing = match &model.transport_forcing {
            Some(g) => sample(g),
            None => vec![0.0; nc * nq],
        };
        let mut s = Self {
            t,
            nq,
            f_i,
            f_p,
            c_bar,
            forcing,
            production_scale: 1.0,
        };
        if rebalance {
            let ii = s.integral(mesh, tables, &s.f_i);
            let ip = s.integral(mesh, tables, &s.f_p);
            if ii > 0.0 && ip > 0.0 {
                let scale = ii / ip;
                s.f_p.iter_mut().for_each(|v| *v *= scale);
                s.production_scale = scale;
            }
        }
        s
    }

    pub fn integral(&self, mesh: &Mesh, tables: &Tables, vals: &[f64]) -> f64 {
        (0..mesh.num_cells())
            .map(|c| {
                let det = 2.0 * mesh.cell_area(c);
                tables
                    .vol
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(q, w)| w * det * vals[c * self.nq + q])
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn l2(&self, mesh: &Mesh, tables: &Tables, vals: &[f64]) -> f64 {
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        self.integral(mesh, tables, &sq).sqrt()
    }

    /// `f_I − f_P` at `(cell, q)`.
    pub fn net(&self, c: usize, q: usize) -> f64 {
        let i = c * self.nq + q;
        self.f_i[i] - self.f_p[i]
    }

    pub fn check_compatibility(&self, mesh: &Mesh, tables: &Tables) -> Result<(), FlowError> {
        if let Some(v) = self.f_i.iter().chain(&self.f_p).find(|v| **v < 0.0) {
            return Err(FlowError::NegativeSource(*v));
        }
        let net: Vec<f64> = self.f_i.iter().zip(&self.f_p).map(|(a, b)| a - b).collect();
        let defect = self.integral(mesh, tables, &net).abs();
        let bound = 1e-9 * (self.l2(mesh, tables, &self.f_i) + self.l2(mesh, tables, &self.f_p));
        if defect > bound {
            return Err(FlowError::Incompatible { defect, bound });
        }
        Ok(())
    }

    /// π_k(f_I − f_P) as a cell field.
    pub fn project_net(&self, mesh: &Mesh, tables: &Tables) -> CellField {
        let mut out = CellField::zeros(mesh.num_cells(), tables.k, 1);
        let n = tables.nphi();
        out.data.par_chunks_mut(n).enumerate().for_each(|(c, b)| {
            for (q, w) in tables.vol.weights.iter().enumerate() {
                let f = self.net(c, q);
                for i in 0..n {
                    b[i] += w * f * tables.phi[q][i];
                }
            }
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub u: CellField,
    pub p: CellField,
    pub p_hat: FaceField,
}

/// Trace-space vector spanning the kernel of the condensed pressure system.
pub fn constant_trace(nfaces: usize, k: usize) -> Vec<f64> {
    let mut z = vec![0.0; nfaces * (k + 1)];
    for f in 0..nfaces {
        z[f * (k + 1)] = 1.0;
    }
    z
}

/// `K⁻¹ = μ(c) / κ` at each volume quadrature point of cell `c`.
fn kinv_at(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, c_prev: &CellField, c: usize) -> Vec<f64> {
    let kappa = model.permeability.get(mesh.region_tags[c]);
    tables
        .phi
        .iter()
        .map(|phi| model.viscosity.eval(c_prev.eval(c, 0, phi)) / kappa)
        .collect()
}

/// Local (u, p) system of one cell and its coupling to the face traces.
pub struct DarcyLocal {
    /// `[[A, -Bᵀ], [-B, -S]]`, size `3n`.
    pub m: DMatrix<f64>,
    /// `[[C], [E]]`, size `3n × 3m`.
    pub n: DMatrix<f64>,
    /// `[0; -F]`
    pub g: DVector<f64>,
    /// `σ|e| I` on each face, size `3m`.
    pub h: DMatrix<f64>,
}

pub fn darcy_local(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    c_prev: &CellField,
    sources: &SourceSlice,
    sigma_u: f64,
    c: usize,
) -> DarcyLocal {
    let np = tables.nphi();
    let nf = tables.npsi();
    let map = CellMap::new(mesh, c);
    let kinv = kinv_at(mesh, tables, model, c_prev, c);
    let mut m = DMatrix::zeros(3 * np, 3 * np);
    let mut g = DVector::zeros(3 * np);
    for (q, &w) in tables.vol.weights.iter().enumerate() {
        let wd = w * map.det;
        let phi = &tables.phi[q];
        let grads: Vec<[f64; 2]> = tables.dphi[q].iter().map(|&g| map.grad(g)).collect();
        let f = sources.net(c, q);
        for i in 0..np {
            g[2 * np + i] -= wd * f * phi[i];
            for j in 0..np {
                let a = wd * kinv[q] * phi[i] * phi[j];
                m[(i, j)] += a;
                m[(np + i, np + j)] += a;
                // -(p_j, ∇·r) with r = φ_i e_d
                for d in 0..2 {
                    let b = wd * phi[j] * grads[i][d];
                    m[(d * np + i, 2 * np + j)] -= b;
                    m[(2 * np + j, d * np + i)] -= b;
                }
            }
        }
    }
    let mut n = DMatrix::zeros(3 * np, 3 * nf);
    let mut h = DMatrix::zeros(3 * nf, 3 * nf);
    for j in 0..3 {
        let cf = mesh.cell_faces[c][j];
        let len = mesh.faces[cf.face].length;
        let nrm = mesh.outward_normal(c, j);
        let tphi = tables.trace_phi(j, cf.sign);
        for (q, &w) in tables.edge.weights.iter().enumerate() {
            let wl = w * len;
            let psi = &tables.psi[q];
            let phi = &tphi[q];
            for a in 0..np {
                for b in 0..np {
                    m[(2 * np + a, 2 * np + b)] -= sigma_u * wl * phi[a] * phi[b];
                }
                for l in 0..nf {
                    let v = wl * phi[a] * psi[l];
                    n[(a, j * nf + l)] += v * nrm[0];
                    n[(np + a, j * nf + l)] += v * nrm[1];
                    n[(2 * np + a, j * nf + l)] += sigma_u * v;
                }
            }
            for l in 0..nf {
                for r in 0..nf {
                    h[(j * nf + l, j * nf + r)] += sigma_u * wl * psi[l] * psi[r];
                }
            }
        }
    }
    DarcyLocal { m, n, g, h }
}

/// Global trace index of dof `l` on local face `j` of cell `c`.
fn trace_dofs(mesh: &Mesh, nf: usize, c: usize) -> Vec<usize> {
    (0..3)
        .flat_map(|j| {
            let f = mesh.cell_faces[c][j].face;
            (0..nf).map(move |l| f * nf + l)
        })
        .collect()
}

/// Solve the Darcy step for `(u_h, p_h, p̂_h)` with `K⁻¹` evaluated at
/// `c_prev`. `p_h` and `p̂_h` are shifted so that `∫p_h = 0`.
pub fn solve_darcy(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    c_prev: &CellField,
    sources: &SourceSlice,
    sigma_u: f64,
) -> Result<FlowSolution, FlowError> {
    if !(sigma_u > 0.0) {
        return Err(FlowError::BadSigma(sigma_u));
    }
    sources.check_compatibility(mesh, tables)?;
    let np = tables.nphi();
    let nf = tables.npsi();
    let nc = mesh.num_cells();
    // per cell: the local system, its factors, M⁻¹N, M⁻¹g and the condensed
    // block [NᵀM⁻¹N + H | NᵀM⁻¹g]
    type Cond = (DarcyLocal, LocalBlock, DMatrix<f64>, DVector<f64>, DMatrix<f64>);
    let locals: Vec<Cond> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let l = darcy_local(mesh, tables, model, c_prev, sources, sigma_u, c);
            let blk = LocalBlock::factor(l.m.clone()).map_err(|_| FlowError::SingularLocal(c))?;
            let minv_n = blk.solve(&l.n);
            let minv_g = blk.solve_vec(&l.g);
            let a = l.n.transpose() * &minv_n + &l.h;
            let r = l.n.transpose() * &minv_g;
            let ar = DMatrix::from_fn(a.nrows(), a.ncols() + 1, |i, j| if j < a.ncols() { a[(i, j)] } else { r[i] });
            Ok((l, blk, minv_n, minv_g, ar))
        })
        .collect::<Result<_, FlowError>>()?;
    let ntr = mesh.num_faces() * nf;
    let mut trip = Vec::with_capacity(nc * 9 * nf * nf);
    let mut rhs = vec![0.0; ntr];
    for (c, (_, _, _, _, ar)) in locals.iter().enumerate() {
        let dofs = trace_dofs(mesh, nf, c);
        for (a, &ga) in dofs.iter().enumerate() {
            rhs[ga] += ar[(a, 3 * nf)];
            for (b, &gb) in dofs.iter().enumerate() {
                trip.push((ga, gb, ar[(a, b)]));
            }
        }
    }
    // the sources were checked above, so the remaining kernel component of
    // the rhs is assembly round-off
    let z = constant_trace(mesh.num_faces(), tables.k);
    let zb: f64 = z.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / mesh.num_faces() as f64;
    for (r, zi) in rhs.iter_mut().zip(&z) {
        *r -= zb * zi;
    }
    let sys = assemble(ntr, trip.clone(), rhs)?;
    let mut phat_vec = solve_sparse(&sys, Some(&z))?;
    // cell unknowns recovered relative to the mean face level p0 of the
    // cell; a constant pressure with zero velocity solves the homogeneous
    // local problem
    let recover = |phat: &[f64]| -> Vec<(DVector<f64>, DVector<f64>, f64)> {
        locals
            .par_iter()
            .enumerate()
            .map(|(c, (l, blk, minv_n, minv_g, _))| {
                let dofs = trace_dofs(mesh, nf, c);
                let mut ph = DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| phat[d]));
                let p0 = (0..3).map(|j| ph[j * nf]).sum::<f64>() / 3.0;
                for j in 0..3 {
                    ph[j * nf] -= p0;
                }
                let x = minv_g - minv_n * &ph;
                // one refinement step against the unfactored block; the
                // blocks of low-permeability cells are badly conditioned
                let r = &l.g - &l.m * &x - &l.n * &ph;
                (x + blk.solve_vec(&r), ph, p0)
            })
            .collect()
    };
    let mut interior = recover(&phat_vec);
    // the condensed matrix inherits the conditioning of the local blocks;
    // one correction against the trace residual Nᵀx − Hp̂ of the recovered
    // unknowns
    let mut res = vec![0.0; ntr];
    for (c, (x, ph, _)) in interior.iter().enumerate() {
        let (l, ..) = &locals[c];
        let rc = l.n.transpose() * x - &l.h * ph;
        for (a, &ga) in trace_dofs(mesh, nf, c).iter().enumerate() {
            res[ga] += rc[a];
        }
    }
    let zr: f64 = z.iter().zip(&res).map(|(a, b)| a * b).sum::<f64>() / mesh.num_faces() as f64;
    for (r, zi) in res.iter_mut().zip(&z) {
        *r -= zr * zi;
    }
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2(&res) > 1e2 * f64::EPSILON * l2(&sys.rhs) {
        let dp = solve_sparse_scaled(&assemble(ntr, trip, res)?, Some(&z), l2(&sys.rhs))?;
        for (p, d) in phat_vec.iter_mut().zip(&dp) {
            *p += d;
        }
        interior = recover(&phat_vec);
    }
    let mut p_hat = FaceField {
        k: tables.k,
        nloc: nf,
        data: phat_vec,
    };
    let mut u = CellField::zeros(nc, tables.k, 2);
    let mut p = CellField::zeros(nc, tables.k, 1);
    let interior: Vec<DVector<f64>> = interior
        .into_iter()
        .map(|(mut x, _, p0)| {
            x[2 * np] += p0 / 2f64.sqrt();
            x
        })
        .collect();
    for (c, x) in interior.iter().enumerate() {
        u.cell_mut(c).copy_from_slice(&x.as_slice()[..2 * np]);
        p.cell_mut(c).copy_from_slice(&x.as_slice()[2 * np..]);
    }
    let mean = (0..nc).map(|c| p.cell_integral(mesh, c, 0)).sum::<f64>() / mesh.total_area();
    let s2 = 2f64.sqrt();
    for c in 0..nc {
        // constant = mean · φ_0/√2
        p.cell_mut(c)[0] -= mean / s2;
    }
    for f in 0..mesh.num_faces() {
        p_hat.face_mut(f)[0] -= mean;
    }
    Ok(FlowSolution { u, p, p_hat })
}

/// Element-wise RT_k reconstruction matching the interior moments of `u_h`
/// against `(P_{k-1})²` and the normal moments of `u_h·n + σ(p_h − p̂_h)`.
pub fn reconstruct_velocity(mesh: &Mesh, tables: &Tables, flow: &FlowSolution, sigma_u: f64) -> Result<RtField, FlowError> {
    let k = tables.k;
    let np = tables.nphi();
    let nf = tables.npsi();
    let nint = if k == 0 { 0 } else { dim_pk(k - 1) };
    let nrt = tables.nrt();
    let mut out = RtField::zeros(mesh.num_cells(), k);
    out.data
        .par_chunks_mut(nrt)
        .enumerate()
        .try_for_each(|(c, block)| {
            let map = CellMap::new(mesh, c);
            let mut a = DMatrix::<f64>::zeros(nrt, nrt);
            let mut b = DVector::<f64>::zeros(nrt);
            for (q, &w) in tables.vol.weights.iter().enumerate() {
                let wd = w * map.det;
                let phi = &tables.phi[q];
                for (col, v) in tables.rt_vals[q].iter().enumerate() {
                    let pv = map.piola(*v);
                    for i in 0..nint {
                        a[(i, col)] += wd * pv[0] * phi[i];
                        a[(nint + i, col)] += wd * pv[1] * phi[i];
                    }
                }
            }
            for i in 0..nint {
                // (u_h, φ_i e_d) = det · u_{d,i} for the orthonormal basis
                b[i] = map.det * flow.u.cell(c)[i];
                b[nint + i] = map.det * flow.u.cell(c)[np + i];
            }
            for j in 0..3 {
                let cf = mesh.cell_faces[c][j];
                let len = mesh.faces[cf.face].length;
                let nrm = mesh.outward_normal(c, j);
                let tphi = tables.trace_phi(j, cf.sign);
                let trt = tables.trace_rt(j, cf.sign);
                for (q, &w) in tables.edge.weights.iter().enumerate() {
                    let wl = w * len;
                    let psi = &tables.psi[q];
                    let un = flow.u.eval(c, 0, &tphi[q]) * nrm[0] + flow.u.eval(c, 1, &tphi[q]) * nrm[1];
                    let jump = flow.p.eval(c, 0, &tphi[q]) - flow.p_hat.eval(cf.face, psi);
                    let val = un + sigma_u * jump;
                    for l in 0..nf {
                        let row = 2 * nint + j * nf + l;
                        b[row] += wl * val * psi[l];
                        for (col, v) in trt[q].iter().enumerate() {
                            let pv = map.piola(*v);
                            a[(row, col)] += wl * (pv[0] * nrm[0] + pv[1] * nrm[1]) * psi[l];
                        }
                    }
                }
            }
            let blk = LocalBlock::factor(a).map_err(|_| FlowError::SingularLocal(c))?;
            block.copy_from_slice(blk.solve_vec(&b).as_slice());
            Ok::<(), FlowError>(())
        })?;
    Ok(out)
}

/// Per-cell `‖∇·U − π_k(f_I − f_P)‖_{L²(E)}`.
pub fn divergence_defects(mesh: &Mesh, tables: &Tables, u: &RtField, sources: &SourceSlice) -> Vec<f64> {
    let pf = sources.project_net(mesh, tables);
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            let mut s = 0.0;
            for (q, &w) in tables.vol.weights.iter().enumerate() {
                let d = u.eval_div(c, &map, &tables.rt_divs[q]) - pf.eval(c, 0, &tables.phi[q]);
                s += w * map.det * d * d;
            }
            s.sqrt()
        })
        .collect()
}

/// Max over interior faces of `‖⟦U·n⟧‖_{L²(e)}`.
pub fn normal_jump(mesh: &Mesh, tables: &Tables, u: &RtField) -> f64 {
    (0..mesh.num_faces())
        .into_par_iter()
        .filter_map(|f| {
            let face = &mesh.faces[f];
            let nb = face.neighbor?;
            let side = |c: usize| {
                let j = (0..3).find(|&j| mesh.cell_faces[c][j].face == f).expect("face in cell");
                let sign = mesh.cell_faces[c][j].sign;
                let map = CellMap::new(mesh, c);
                tables
                    .trace_rt(j, sign)
                    .iter()
                    .map(|v| {
                        let val = u.eval(c, &map, v);
                        val[0] * face.normal[0] + val[1] * face.normal[1]
                    })
                    .collect::<Vec<_>>()
            };
            let (a, b) = (side(face.owner), side(nb));
            let s: f64 = tables
                .edge
                .weights
                .iter()
                .zip(a.iter().zip(&b))
                .map(|(w, (x, y))| w * face.length * (x - y).powi(2))
                .sum();
            Some(s.sqrt())
        })
        .reduce(|| 0.0, f64::max)
}

/// `‖U‖_{L²(Ω)}` by quadrature.
pub fn rt_l2_norm(mesh: &Mesh, tables: &Tables, u: &RtField) -> f64 {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            tables
                .vol
                .weights
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    let v = u.eval(c, &map, &tables.rt_vals[q]);
                    w * map.det * (v[0] * v[0] + v[1] * v[1])
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        .sqrt()
}

/// `‖σ^{1/2}(p_h − p̂_h)‖²_{∂E_h}`.
pub fn pressure_jump_sq(mesh: &Mesh, tables: &Tables, flow: &FlowSolution, sigma_u: f64) -> f64 {
    sigma_u * crate::fem::jump_norm_sq(mesh, tables, &flow.p, &flow.p_hat)
}

/// `(K⁻¹u, u)`.
pub fn kinv_energy(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, c_prev: &CellField, flow: &FlowSolution) -> f64 {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            let kinv = kinv_at(mesh, tables, model, c_prev, c);
            tables
                .vol
                .weights
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    let u = flow.u.eval_vec(c, &tables.phi[q]);
                    w * map.det * kinv[q] * (u[0] * u[0] + u[1] * u[1])
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Relative defect of `(K⁻¹u,u) + σ‖p − p̂‖² = (f_I − f_P, p)`.
pub fn energy_identity_defect(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    c_prev: &CellField,
    sources: &SourceSlice,
    flow: &FlowSolution,
    sigma_u: f64,
) -> f64 {
    let lhs = kinv_energy(mesh, tables, model, c_prev, flow) + pressure_jump_sq(mesh, tables, flow, sigma_u);
    let rhs = sources.project_net(mesh, tables).inner(&flow.p, mesh);
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

/// `‖π_k(K⁻¹u) + G_h(p, p̂)‖ / ‖G_h(p, p̂)‖`, which vanishes by the first
/// Darcy equation.
pub fn gradient_identity_defect(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, c_prev: &CellField, flow: &FlowSolution) -> f64 {
    let g = crate::fem::lift_gradient(mesh, tables, &flow.p, &flow.p_hat);
    let np = tables.nphi();
    let mut ku = CellField::zeros(mesh.num_cells(), tables.k, 2);
    ku.data.par_chunks_mut(2 * np).enumerate().for_each(|(c, b)| {
        let kinv = kinv_at(mesh, tables, model, c_prev, c);
        for (q, w) in tables.vol.weights.iter().enumerate() {
            let u = flow.u.eval_vec(c, &tables.phi[q]);
            for i in 0..np {
                b[i] += w * kinv[q] * u[0] * tables.phi[q][i];
                b[np + i] += w * kinv[q] * u[1] * tables.phi[q][i];
            }
        }
    });
    let gn = g.l2_norm(mesh);
    ku.axpy(1.0, &g);
    ku.l2_norm(mesh) / gn.max(f64::MIN_POSITIVE)
}
