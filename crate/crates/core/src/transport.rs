//! Three-field HDG transport step with backward Euler in time, the
//! skew-symmetrized convection form and condensation onto the trace `ĉ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::fem::{lift_gradient, project_cell, project_face, CellField, CellMap, FaceField, RtField, Tables};
use crate::flow::{PhysicalModel, SourceSlice};
use crate::linalg::{assemble, solve_sparse, LinalgError, LocalBlock};
use crate::mesh::Mesh;

/// How the diffusive stabilization `nᵀD(U)n` is made single-valued on
/// interior faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaDMode {
    /// Evaluate from the face's owner cell (lower cell index).
    #[default]
    Owner,
    /// Pointwise maximum over both adjacent cells.
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub k: usize,
    pub sigma_u: f64,
    pub tau: f64,
    pub t_final: f64,
    pub sigma_d: SigmaDMode,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),
    #[error("velocity is not H(div)-conforming: normal jump {jump:e} (‖U‖ = {norm:e})")]
    NotConforming { jump: f64, norm: f64 },
    #[error("singular local block on cell {0}")]
    SingularLocal(usize),
    #[error("trace solve failed: {0}")]
    Solver(#[from] LinalgError),
}

impl Discretization {
    pub fn new(k: usize, tau: f64, t_final: f64) -> Self {
        Self {
            k,
            sigma_u: 1.0,
            tau,
            t_final,
            sigma_d: SigmaDMode::Owner,
        }
    }

    /// Number of uniform steps `N` with `N τ = T`.
    pub fn num_steps(&self) -> Result<usize, TransportError> {
        if !(self.tau > 0.0 && self.t_final > 0.0) {
            return Err(TransportError::InvalidDiscretization(format!(
                "need τ > 0 and T > 0 (τ = {}, T = {})",
                self.tau, self.t_final
            )));
        }
        let n = (self.t_final / self.tau).round();
        if n < 1.0 || (n * self.tau - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(TransportError::InvalidDiscretization(format!(
                "T = {} is not an integer multiple of τ = {}",
                self.t_final, self.tau
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.sigma_u > 0.0) {
            return Err(TransportError::InvalidDiscretization(format!(
                "σ_u must be positive, got {}",
                self.sigma_u
            )));
        }
        if self.k == 0 {
            log::warn!("analysis requires k ≥ 1");
        }
        self.num_steps().map(|_| ())
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.tau
    }
}

/// `D(u) = d0 I + |u| (α_l E + α_t (I − E))`, `E = u uᵀ / |u|²`.
pub fn dispersion(u: [f64; 2], d0: f64, alpha_l: f64, alpha_t: f64) -> [[f64; 2]; 2] {
    let nu = u[0].hypot(u[1]);
    if nu < 1e-14 {
        return [[d0, 0.0], [0.0, d0]];
    }
    let e = [
        [u[0] * u[0] / (nu * nu), u[0] * u[1] / (nu * nu)],
        [u[1] * u[0] / (nu * nu), u[1] * u[1] / (nu * nu)],
    ];
    let mut d = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            d[i][j] = d0 * id + nu * (alpha_l * e[i][j] + alpha_t * (id - e[i][j]));
        }
    }
    d
}

fn model_dispersion(model: &PhysicalModel, u: [f64; 2]) -> [[f64; 2]; 2] {
    dispersion(u, model.d0, model.alpha_l, model.alpha_t)
}

fn ndn(d: &[[f64; 2]; 2], n: [f64; 2]) -> f64 {
    n[0] * (d[0][0] * n[0] + d[0][1] * n[1]) + n[1] * (d[1][0] * n[0] + d[1][1] * n[1])
}

/// Advecting velocity seen by the transport step.
#[derive(Debug, Clone, Copy)]
pub enum Velocity<'a> {
    Reconstructed(&'a RtField),
    /// Raw HDG velocity, not normal-continuous.
    Raw(&'a CellField),
}

impl Velocity<'_> {
    pub fn at_volume(&self, tables: &Tables, c: usize, map: &CellMap, q: usize) -> [f64; 2] {
        match self {
            Velocity::Reconstructed(u) => u.eval(c, map, &tables.rt_vals[q]),
            Velocity::Raw(u) => u.eval_vec(c, &tables.phi[q]),
        }
    }

    /// Value on local edge `j` at face quadrature point `q`.
    pub fn at_trace(&self, tables: &Tables, c: usize, map: &CellMap, j: usize, sign: f64, q: usize) -> [f64; 2] {
        match self {
            Velocity::Reconstructed(u) => u.eval(c, map, &tables.trace_rt(j, sign)[q]),
            Velocity::Raw(u) => u.eval_vec(c, &tables.trace_phi(j, sign)[q]),
        }
    }
}

fn local_index(mesh: &Mesh, c: usize, f: usize) -> usize {
    (0..3).find(|&j| mesh.cell_faces[c][j].face == f).expect("face belongs to cell")
}

/// `σ_D = nᵀ D(U) n` at the quadrature points of every face, index
/// `[face * nq + q]`.
pub fn sigma_d(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, vel: Velocity<'_>, mode: SigmaDMode) -> Vec<f64> {
    let nq = tables.edge.points.len();
    (0..mesh.num_faces())
        .into_par_iter()
        .flat_map_iter(|f| {
            let face = &mesh.faces[f];
            let side = |c: usize| -> Vec<f64> {
                let j = local_index(mesh, c, f);
                let sign = mesh.cell_faces[c][j].sign;
                let map = CellMap::new(mesh, c);
                (0..nq)
                    .map(|q| ndn(&model_dispersion(model, vel.at_trace(tables, c, &map, j, sign, q)), face.normal))
                    .collect()
            };
            let mut s = side(face.owner);
            if let (SigmaDMode::Max, Some(nb)) = (mode, face.neighbor) {
                for (a, b) in s.iter_mut().zip(side(nb)) {
                    *a = a.max(b);
                }
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    pub theta: CellField,
    pub q: CellField,
    pub c: CellField,
    pub c_hat: FaceField,
}

/// Local system of one cell: `M x + N ĉ = g` for `x = (θ, q, c)` and the
/// cell's contribution `P x + Q ĉ` to the trace equations.
pub struct TransportLocal {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub g: DVector<f64>,
    pub p: DMatrix<f64>,
    pub qq: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn transport_local(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    tau: f64,
    c_prev: &CellField,
    vel: Velocity<'_>,
    sig_d: &[f64],
    sources: &SourceSlice,
    c: usize,
) -> TransportLocal {
    let np = tables.nphi();
    let nf = tables.npsi();
    let (th, qo, co) = (0, 2 * np, 4 * np);
    let map = CellMap::new(mesh, c);
    let phi_c = model.porosity.get(mesh.region_tags[c]);
    let mut m = DMatrix::zeros(5 * np, 5 * np);
    let mut g = DVector::zeros(5 * np);
    for (qp, &w) in tables.vol.weights.iter().enumerate() {
        let wd = w * map.det;
        let phi = &tables.phi[qp];
        let grads: Vec<[f64; 2]> = tables.dphi[qp].iter().map(|&g| map.grad(g)).collect();
        let u = vel.at_volume(tables, c, &map, qp);
        let d = model_dispersion(model, u);
        let idx = c * sources.nq + qp;
        let fsum = sources.f_i[idx] + sources.f_p[idx];
        let src = sources.f_i[idx] * sources.c_bar[idx] + sources.forcing[idx];
        let cp = c_prev.eval(c, 0, phi);
        let ugrad: Vec<f64> = grads.iter().map(|g| u[0] * g[0] + u[1] * g[1]).collect();
        for i in 0..np {
            g[co + i] += wd * (src + phi_c * cp / tau) * phi[i];
            for j in 0..np {
                let mass = wd * phi[i] * phi[j];
                for a in 0..2 {
                    // (Dθ, z) − (q, z)
                    for b in 0..2 {
                        m[(th + a * np + i, th + b * np + j)] += d[a][b] * mass;
                    }
                    m[(th + a * np + i, qo + a * np + j)] -= mass;
                    // (θ, v) − (c, ∇·v)
                    m[(qo + a * np + i, th + a * np + j)] += mass;
                    m[(qo + a * np + i, co + j)] -= wd * phi[j] * grads[i][a];
                    // −(q, ∇w)
                    m[(co + i, qo + a * np + j)] -= wd * grads[i][a] * phi[j];
                }
                m[(co + i, co + j)] += (phi_c / tau + 0.5 * fsum) * mass
                    + 0.5 * wd * (ugrad[j] * phi[i] - ugrad[i] * phi[j]);
            }
        }
    }
    let mut n = DMatrix::zeros(5 * np, 3 * nf);
    let mut p = DMatrix::zeros(3 * nf, 5 * np);
    let mut qq = DMatrix::zeros(3 * nf, 3 * nf);
    let nqf = tables.edge.points.len();
    for j in 0..3 {
        let cf = mesh.cell_faces[c][j];
        let len = mesh.faces[cf.face].length;
        let nrm = mesh.outward_normal(c, j);
        let tphi = tables.trace_phi(j, cf.sign);
        for (qp, &w) in tables.edge.weights.iter().enumerate() {
            let wl = w * len;
            let psi = &tables.psi[qp];
            let phi = &tphi[qp];
            let u = vel.at_trace(tables, c, &map, j, cf.sign, qp);
            let un = u[0] * nrm[0] + u[1] * nrm[1];
            let ts = sig_d[cf.face * nqf + qp] + un.abs();
            for a in 0..np {
                for b in 0..np {
                    let v = wl * phi[a] * phi[b];
                    for dd in 0..2 {
                        m[(co + a, qo + dd * np + b)] += v * nrm[dd];
                    }
                    m[(co + a, co + b)] += ts * v;
                }
                for l in 0..nf {
                    let v = wl * phi[a] * psi[l];
                    for dd in 0..2 {
                        n[(qo + dd * np + a, j * nf + l)] += v * nrm[dd];
                        p[(j * nf + l, qo + dd * np + a)] += v * nrm[dd];
                    }
                    n[(co + a, j * nf + l)] += (0.5 * un - ts) * v;
                    p[(j * nf + l, co + a)] += (ts + 0.5 * un) * v;
                }
            }
            for l in 0..nf {
                for r in 0..nf {
                    qq[(j * nf + l, j * nf + r)] += (0.5 * un - ts) * wl * psi[l] * psi[r];
                }
            }
        }
    }
    TransportLocal { m, n, g, p, qq }
}

fn trace_dofs(mesh: &Mesh, nf: usize, c: usize) -> Vec<usize> {
    (0..3)
        .flat_map(|j| {
            let f = mesh.cell_faces[c][j].face;
            (0..nf).map(move |l| f * nf + l)
        })
        .collect()
}

/// One backward-Euler transport step. With `Velocity::Reconstructed` the
/// normal continuity of `U` is checked first.
#[allow(clippy::too_many_arguments)]
pub fn solve_transport_step(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    disc: &Discretization,
    c_prev: &CellField,
    vel: Velocity<'_>,
    sources: &SourceSlice,
) -> Result<TransportSolution, TransportError> {
    if !(disc.tau > 0.0) {
        return Err(TransportError::InvalidDiscretization(format!("τ = {}", disc.tau)));
    }
    if let Velocity::Reconstructed(u) = vel {
        let norm = crate::flow::rt_l2_norm(mesh, tables, u);
        let jump = crate::flow::normal_jump(mesh, tables, u);
        if jump > 1e-8 * norm.max(f64::MIN_POSITIVE) {
            return Err(TransportError::NotConforming { jump, norm });
        }
    }
    let np = tables.nphi();
    let nf = tables.npsi();
    let nc = mesh.num_cells();
    let sig = sigma_d(mesh, tables, model, vel, disc.sigma_d);
    type Cond = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>);
    let locals: Vec<Cond> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let l = transport_local(mesh, tables, model, disc.tau, c_prev, vel, &sig, sources, c);
            let blk = LocalBlock::factor(l.m).map_err(|_| TransportError::SingularLocal(c))?;
            let minv_n = blk.solve(&l.n);
            let minv_g = blk.solve_vec(&l.g);
            let a = l.qq - &l.p * &minv_n;
            let r = -(&l.p * &minv_g);
            Ok((minv_n, minv_g, a, r))
        })
        .collect::<Result<_, TransportError>>()?;
    let ntr = mesh.num_faces() * nf;
    let mut trip = Vec::with_capacity(nc * 9 * nf * nf);
    let mut rhs = vec![0.0; ntr];
    for (c, (_, _, a, r)) in locals.iter().enumerate() {
        let dofs = trace_dofs(mesh, nf, c);
        for (x, &gx) in dofs.iter().enumerate() {
            rhs[gx] += r[x];
            for (y, &gy) in dofs.iter().enumerate() {
                trip.push((gx, gy, a[(x, y)]));
            }
        }
    }
    let sys = assemble(ntr, trip, rhs)?;
    let c_hat = FaceField {
        k: tables.k,
        nloc: nf,
        data: solve_sparse(&sys, None)?,
    };
    let interior: Vec<DVector<f64>> = locals
        .par_iter()
        .enumerate()
        .map(|(c, (minv_n, minv_g, _, _))| {
            let dofs = trace_dofs(mesh, nf, c);
            let ch = DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| c_hat.data[d]));
            minv_g - minv_n * ch
        })
        .collect();
    let mut theta = CellField::zeros(nc, tables.k, 2);
    let mut q = CellField::zeros(nc, tables.k, 2);
    let mut cf = CellField::zeros(nc, tables.k, 1);
    for (c, x) in interior.iter().enumerate() {
        let x = x.as_slice();
        theta.cell_mut(c).copy_from_slice(&x[..2 * np]);
        q.cell_mut(c).copy_from_slice(&x[2 * np..4 * np]);
        cf.cell_mut(c).copy_from_slice(&x[4 * np..]);
    }
    Ok(TransportSolution {
        theta,
        q,
        c: cf,
        c_hat,
    })
}

/// `c_h⁰ = π_k c₀`, `ĉ_h⁰ = π̂_k c₀`.
pub fn initialize_concentration(mesh: &Mesh, tables: &Tables, model: &PhysicalModel) -> (CellField, FaceField) {
    let c0 = &model.c0;
    (project_cell(mesh, tables, |x| c0(x)), project_face(mesh, tables, |x| c0(x)))
}

/// Energy quantities of one transport step, all integrated with the
/// assembly quadrature.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepEnergy {
    /// `‖φ^{1/2} c^i‖²`
    pub phi_c2: f64,
    /// `‖c^i‖²`
    pub c2: f64,
    /// `‖φ^{1/2}(c^i − c^{i−1})‖²`
    pub phi_dc2: f64,
    /// `(φ(c^i − c^{i−1}), c^i)`
    pub phi_dc_c: f64,
    /// `(D(U)θ, θ)`
    pub d_theta2: f64,
    /// `(f_I c, c)`
    pub fi_c2: f64,
    /// `(f_P c, c)`
    pub fp_c2: f64,
    /// `‖(σ_D + |U·n|)^{1/2}(c − ĉ)‖²_{∂E_h}`
    pub jump: f64,
    /// `−½⟨U·n ĉ, ĉ⟩_{∂E_h}`
    pub skew: f64,
    /// `(f_I c̄ + g, c)`
    pub source_c: f64,
    /// `‖f_I^{-1/2}(f_I c̄ + g)‖²` (infinite if the source is nonzero
    /// where `f_I = 0`)
    pub source2: f64,
}

impl StepEnergy {
    /// Residual of the discrete energy identity obtained by testing the
    /// step equations with the solution itself, scaled by `τ`.
    pub fn identity_residual(&self, tau: f64) -> f64 {
        self.phi_dc_c + tau * (self.d_theta2 + 0.5 * (self.fi_c2 + self.fp_c2) + self.jump + self.skew - self.source_c)
    }

    pub fn identity_scale(&self, tau: f64) -> f64 {
        self.phi_dc_c.abs()
            + tau
                * (self.d_theta2
                    + 0.5 * (self.fi_c2 + self.fp_c2)
                    + self.jump
                    + self.skew.abs()
                    + self.source_c.abs())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn step_energy(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    disc: &Discretization,
    c_prev: &CellField,
    sol: &TransportSolution,
    vel: Velocity<'_>,
    sources: &SourceSlice,
) -> StepEnergy {
    let sig = sigma_d(mesh, tables, model, vel, disc.sigma_d);
    let nqf = tables.edge.points.len();
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            let phi_c = model.porosity.get(mesh.region_tags[c]);
            let mut e = StepEnergy::default();
            for (qp, &w) in tables.vol.weights.iter().enumerate() {
                let wd = w * map.det;
                let phi = &tables.phi[qp];
                let cv = sol.c.eval(c, 0, phi);
                let cp = c_prev.eval(c, 0, phi);
                let th = sol.theta.eval_vec(c, phi);
                let d = model_dispersion(model, vel.at_volume(tables, c, &map, qp));
                let idx = c * sources.nq + qp;
                let fi = sources.f_i[idx];
                let s = fi * sources.c_bar[idx] + sources.forcing[idx];
                e.phi_c2 += wd * phi_c * cv * cv;
                e.c2 += wd * cv * cv;
                e.phi_dc2 += wd * phi_c * (cv - cp) * (cv - cp);
                e.phi_dc_c += wd * phi_c * (cv - cp) * cv;
                e.d_theta2 += wd * ndn(&d, th);
                e.fi_c2 += wd * fi * cv * cv;
                e.fp_c2 += wd * sources.f_p[idx] * cv * cv;
                e.source_c += wd * s * cv;
                e.source2 += if fi > 0.0 {
                    wd * s * s / fi
                } else if s == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
            }
            for j in 0..3 {
                let cf = mesh.cell_faces[c][j];
                let len = mesh.faces[cf.face].length;
                let nrm = mesh.outward_normal(c, j);
                let tphi = tables.trace_phi(j, cf.sign);
                for (qp, &w) in tables.edge.weights.iter().enumerate() {
                    let u = vel.at_trace(tables, c, &map, j, cf.sign, qp);
                    let un = u[0] * nrm[0] + u[1] * nrm[1];
                    let ts = sig[cf.face * nqf + qp] + un.abs();
                    let ch = sol.c_hat.eval(cf.face, &tables.psi[qp]);
                    let jmp = sol.c.eval(c, 0, &tphi[qp]) - ch;
                    e.jump += w * len * ts * jmp * jmp;
                    e.skew -= 0.5 * w * len * un * ch * ch;
                }
            }
            e
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(StepEnergy::default(), |a, b| StepEnergy {
            phi_c2: a.phi_c2 + b.phi_c2,
            c2: a.c2 + b.c2,
            phi_dc2: a.phi_dc2 + b.phi_dc2,
            phi_dc_c: a.phi_dc_c + b.phi_dc_c,
            d_theta2: a.d_theta2 + b.d_theta2,
            fi_c2: a.fi_c2 + b.fi_c2,
            fp_c2: a.fp_c2 + b.fp_c2,
            jump: a.jump + b.jump,
            skew: a.skew + b.skew,
            source_c: a.source_c + b.source_c,
            source2: a.source2 + b.source2,
        })
}

/// `‖θ_h + G_h(c_h, ĉ_h)‖`.
pub fn theta_gradient_defect(mesh: &Mesh, tables: &Tables, sol: &TransportSolution) -> f64 {
    let mut g = lift_gradient(mesh, tables, &sol.c, &sol.c_hat);
    g.axpy(1.0, &sol.theta);
    g.l2_norm(mesh)
}

/// `‖π_k(D(U)θ) − q‖`, which vanishes by the first transport equation.
pub fn flux_defect(mesh: &Mesh, tables: &Tables, model: &PhysicalModel, sol: &TransportSolution, vel: Velocity<'_>) -> f64 {
    let np = tables.nphi();
    let mut r = CellField::zeros(mesh.num_cells(), tables.k, 2);
    r.data.par_chunks_mut(2 * np).enumerate().for_each(|(c, b)| {
        let map = CellMap::new(mesh, c);
        for (qp, w) in tables.vol.weights.iter().enumerate() {
            let th = sol.theta.eval_vec(c, &tables.phi[qp]);
            let d = model_dispersion(model, vel.at_volume(tables, c, &map, qp));
            let dt = [d[0][0] * th[0] + d[0][1] * th[1], d[1][0] * th[0] + d[1][1] * th[1]];
            for i in 0..np {
                b[i] += w * dt[0] * tables.phi[qp][i];
                b[np + i] += w * dt[1] * tables.phi[qp][i];
            }
        }
    });
    r.axpy(-1.0, &sol.q);
    r.l2_norm(mesh)
}

/// Assembled value of `Σ_E [−½⟨U·n c, c⟩ + ½⟨U·n(ĉ + c), c − ĉ⟩]`, which
/// equals `−½ Σ_E ⟨U·n ĉ, ĉ⟩` and vanishes for normal-continuous `U` with
/// zero boundary flux.
pub fn skew_face_term(mesh: &Mesh, tables: &Tables, vel: Velocity<'_>, c: &CellField, c_hat: &FaceField) -> f64 {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|e| {
            let map = CellMap::new(mesh, e);
            let mut s = 0.0;
            for j in 0..3 {
                let cf = mesh.cell_faces[e][j];
                let len = mesh.faces[cf.face].length;
                let nrm = mesh.outward_normal(e, j);
                let tphi = tables.trace_phi(j, cf.sign);
                for (qp, &w) in tables.edge.weights.iter().enumerate() {
                    let u = vel.at_trace(tables, e, &map, j, cf.sign, qp);
                    let un = u[0] * nrm[0] + u[1] * nrm[1];
                    let cv = c.eval(e, 0, &tphi[qp]);
                    let ch = c_hat.eval(cf.face, &tables.psi[qp]);
                    s += w * len * (-0.5 * un * cv * cv + 0.5 * un * (ch + cv) * (cv - ch));
                }
            }
            s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

#[cfg(test)]
mod tests;
