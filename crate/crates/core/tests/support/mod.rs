//! Dense monolithic assemblies of the full HDG flow and transport systems
//! (no condensation), written term by term from the weak forms.
#![allow(dead_code)]


use std::sync::Arc;

use hdgmd::fem::{CellField, CellMap, RtField, Tables};
use hdgmd::flow::{reconstruct_velocity, solve_darcy, PhysicalModel, RegionValues, SourceSlice, Viscosity};
use hdgmd::mesh::Mesh;
use hdgmd::transport::{solve_transport_step, Discretization, Velocity};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sparse linear form in the global unknowns.
type Lin = Vec<(usize, f64)>;

fn add(a: &mut DMatrix<f64>, row: usize, w: f64, lin: &Lin) {
    for &(col, v) in lin {
        a[(row, col)] += w * v;
    }
}

fn scaled(lin: &Lin, s: f64) -> Lin {
    lin.iter().map(|&(i, v)| (i, s * v)).collect()
}

fn combine(parts: &[(&Lin, f64)]) -> Lin {
    parts.iter().flat_map(|(l, s)| scaled(l, *s)).collect()
}

fn one_cell(rng: &mut ChaCha8Rng) -> Mesh {
    let mut j = || rng.random_range(-0.2..0.2);
    let v = vec![[j(), j()], [1.0 + j(), j()], [j(), 1.0 + j()]];
    Mesh::from_raw_fix_orientation(v, vec![[0, 1, 2]], vec![1]).unwrap().0
}

fn two_cells(rng: &mut ChaCha8Rng) -> Mesh {
    let mut j = || rng.random_range(-0.15..0.15);
    let v = vec![[j(), j()], [1.0 + j(), j()], [1.0 + j(), 1.0 + j()], [j(), 1.0 + j()]];
    Mesh::from_raw_fix_orientation(v, vec![[0, 1, 2], [0, 2, 3]], vec![1, 2]).unwrap().0
}

fn random_model(rng: &mut ChaCha8Rng) -> PhysicalModel {
    let (a, b, c) = (rng.random_range(1.0..3.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let (d, e) = (rng.random_range(0.5..2.0), rng.random_range(-0.3..0.3));
    let cbar = rng.random_range(0.0..1.0);
    let (g0, g1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    PhysicalModel {
        porosity: RegionValues {
            default: rng.random_range(0.1..0.5),
            by_tag: vec![(2, rng.random_range(0.1..0.5))],
        },
        permeability: RegionValues {
            default: rng.random_range(0.5..2.0),
            by_tag: vec![(2, rng.random_range(0.01..0.1))],
        },
        viscosity: Viscosity::quarter_power(rng.random_range(1.0..5.0), 1.0),
        d0: rng.random_range(0.05..1.0),
        alpha_l: rng.random_range(0.0..0.5),
        alpha_t: rng.random_range(0.0..0.1),
        f_i: Arc::new(move |x, _, _| a + b * x[0] + c * x[1]),
        f_p: Arc::new(move |x, _, _| d + e * x[0] * x[1]),
        c_bar: Arc::new(move |_, _, _| cbar),
        transport_forcing: Some(Arc::new(move |x, _, _| g0 * x[0] - g1 * x[1] * x[1])),
        c0: Arc::new(|_| 0.0),
    }
}

fn random_cells(rng: &mut ChaCha8Rng, nc: usize, k: usize, ncomp: usize, mean: f64, spread: f64) -> CellField {
    let mut f = CellField::zeros(nc, k, ncomp);
    for v in f.data.iter_mut() {
        *v = rng.random_range(-spread..spread);
    }
    let nloc = f.nloc;
    for c in 0..nc {
        // the first basis function is the constant 1/√2 on the reference cell
        for d in 0..ncomp {
            f.cell_mut(c)[d * nloc] += mean * 2f64.sqrt();
        }
    }
    f
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// A point on a face seen from one adjacent cell.
struct Side {
    cell: usize,
    phi: Vec<f64>,
    xhat: [f64; 2],
    /// Outward normal of `cell`.
    n: [f64; 2],
}

/// Visit every face quadrature point with the data of each adjacent cell.
fn for_face_points(mesh: &Mesh, tables: &Tables, mut f: impl FnMut(usize, f64, &[f64], &[Side])) {
    for (fi, face) in mesh.faces.iter().enumerate() {
        for (q, &s) in tables.edge.points.iter().enumerate() {
            let x = mesh.face_point(fi, s);
            let w = tables.edge.weights[q] * face.length;
            let psi = tables.face.values(s);
            let sides: Vec<Side> = std::iter::once((face.owner, 1.0))
                .chain(face.neighbor.map(|c| (c, -1.0)))
                .map(|(cell, sgn)| {
                    let xhat = CellMap::new(mesh, cell).to_reference(x);
                    Side {
                        cell,
                        phi: tables.scalar.values(xhat),
                        xhat,
                        n: [sgn * face.normal[0], sgn * face.normal[1]],
                    }
                })
                .collect();
            f(fi, w, &psi, &sides);
        }
    }
}

// ---------------------------------------------------------------- flow

struct FlowLayout {
    np: usize,
    nf: usize,
    nc: usize,
}

impl FlowLayout {
    fn u(&self, c: usize, d: usize, i: usize) -> usize {
        c * 3 * self.np + d * self.np + i
    }
    fn p(&self, c: usize, i: usize) -> usize {
        c * 3 * self.np + 2 * self.np + i
    }
    fn phat(&self, f: usize, l: usize) -> usize {
        self.nc * 3 * self.np + f * self.nf + l
    }
}

/// Monolithic Darcy system with an extra row fixing `∫p = 0`; solved in
/// the least-squares sense (the system is consistent).
pub fn flow_oracle(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    c_prev: &CellField,
    src: &SourceSlice,
    sigma: f64,
) -> DVector<f64> {
    let np = tables.nphi();
    let nf = tables.npsi();
    let nc = mesh.num_cells();
    let lay = FlowLayout { np, nf, nc };
    let n = nc * 3 * np + mesh.num_faces() * nf;
    let mut a = DMatrix::zeros(n + 1, n);
    let mut b = DVector::zeros(n + 1);
    for c in 0..nc {
        let map = CellMap::new(mesh, c);
        let kappa = model.permeability.get(mesh.region_tags[c]);
        for (q, &xh) in tables.vol.points.iter().enumerate() {
            let w = tables.vol.weights[q] * map.det;
            let phi = tables.scalar.values(xh);
            let grads: Vec<[f64; 2]> = tables.scalar.grads(xh).into_iter().map(|g| map.grad(g)).collect();
            let kinv = model.viscosity.eval(c_prev.eval(c, 0, &phi)) / kappa;
            let u: [Lin; 2] = [0, 1].map(|d| (0..np).map(|j| (lay.u(c, d, j), phi[j])).collect());
            let p: Lin = (0..np).map(|j| (lay.p(c, j), phi[j])).collect();
            let div: Lin = (0..2).flat_map(|d| (0..np).map(move |j| (d, j))).map(|(d, j)| (lay.u(c, d, j), grads[j][d])).collect();
            for i in 0..np {
                for d in 0..2 {
                    // (K⁻¹u, r) − (p, ∇·r)
                    let row = lay.u(c, d, i);
                    add(&mut a, row, w * kinv * phi[i], &u[d]);
                    add(&mut a, row, -w * grads[i][d], &p);
                }
                // (∇·u, s) = (f_I − f_P, s) + face terms
                let row = lay.p(c, i);
                add(&mut a, row, w * phi[i], &div);
                b[row] += w * phi[i] * src.net(c, q);
            }
        }
        for i in 0..np {
            a[(n, lay.p(c, i))] += tables.vol.points.iter().zip(&tables.vol.weights).map(|(&xh, w)| w * map.det * tables.scalar.values(xh)[i]).sum::<f64>();
        }
    }
    for_face_points(mesh, tables, |f, w, psi, sides| {
        let phat: Lin = (0..nf).map(|l| (lay.phat(f, l), psi[l])).collect();
        for s in sides {
            let c = s.cell;
            let p: Lin = (0..np).map(|j| (lay.p(c, j), s.phi[j])).collect();
            let un: Lin = (0..2).flat_map(|d| (0..np).map(move |j| (d, j))).map(|(d, j)| (lay.u(c, d, j), s.phi[j] * s.n[d])).collect();
            let jump = combine(&[(&p, sigma), (&phat, -sigma)]);
            for i in 0..np {
                for d in 0..2 {
                    // ⟨p̂, r·n⟩
                    add(&mut a, lay.u(c, d, i), w * s.phi[i] * s.n[d], &phat);
                }
                // ⟨σ(p − p̂), s⟩
                add(&mut a, lay.p(c, i), w * s.phi[i], &jump);
            }
            // ⟨u·n + σ(p − p̂), ŝ⟩
            let flux = combine(&[(&un, 1.0), (&jump, 1.0)]);
            for l in 0..nf {
                add(&mut a, lay.phat(f, l), w * psi[l], &flux);
            }
        }
    });
    a.svd(true, true).solve(&b, 1e-13).unwrap()
}

// ----------------------------------------------------------- transport

struct TransportLayout {
    np: usize,
    nf: usize,
    nc: usize,
}

impl TransportLayout {
    fn theta(&self, c: usize, d: usize, i: usize) -> usize {
        c * 5 * self.np + d * self.np + i
    }
    fn q(&self, c: usize, d: usize, i: usize) -> usize {
        c * 5 * self.np + (2 + d) * self.np + i
    }
    fn c(&self, c: usize, i: usize) -> usize {
        c * 5 * self.np + 4 * self.np + i
    }
    fn chat(&self, f: usize, l: usize) -> usize {
        self.nc * 5 * self.np + f * self.nf + l
    }
}

fn dispersion(u: [f64; 2], model: &PhysicalModel) -> [[f64; 2]; 2] {
    let m = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let mut d = [[model.d0, 0.0], [0.0, model.d0]];
    for i in 0..2 {
        d[i][i] += m * model.alpha_t;
        for j in 0..2 {
            if m > 0.0 {
                d[i][j] += (model.alpha_l - model.alpha_t) * u[i] * u[j] / m;
            }
        }
    }
    d
}

/// Velocity evaluated from the given cell at reference point `xhat`.
fn velocity_at(mesh: &Mesh, tables: &Tables, vel: &Velocity<'_>, c: usize, xhat: [f64; 2]) -> [f64; 2] {
    match vel {
        Velocity::Raw(u) => u.eval_vec(c, &tables.scalar.values(xhat)),
        Velocity::Reconstructed(u) => {
            let (vals, _) = tables.rt.values(xhat);
            u.eval(c, &CellMap::new(mesh, c), &vals)
        }
    }
}

/// Monolithic transport step, written term by term from the weak form with
/// the numerical fluxes substituted.
#[allow(clippy::too_many_arguments)]
pub fn transport_oracle(
    mesh: &Mesh,
    tables: &Tables,
    model: &PhysicalModel,
    tau: f64,
    c_prev: &CellField,
    vel: Velocity<'_>,
    src: &SourceSlice,
) -> DVector<f64> {
    let np = tables.nphi();
    let nf = tables.npsi();
    let nc = mesh.num_cells();
    let lay = TransportLayout { np, nf, nc };
    let n = nc * 5 * np + mesh.num_faces() * nf;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for c in 0..nc {
        let map = CellMap::new(mesh, c);
        let phi_c = model.porosity.get(mesh.region_tags[c]);
        for (qp, &xh) in tables.vol.points.iter().enumerate() {
            let w = tables.vol.weights[qp] * map.det;
            let phi = tables.scalar.values(xh);
            let grads: Vec<[f64; 2]> = tables.scalar.grads(xh).into_iter().map(|g| map.grad(g)).collect();
            let u = velocity_at(mesh, tables, &vel, c, xh);
            let d = dispersion(u, model);
            let idx = c * src.nq + qp;
            let theta: [Lin; 2] = [0, 1].map(|k| (0..np).map(|j| (lay.theta(c, k, j), phi[j])).collect());
            let q: [Lin; 2] = [0, 1].map(|k| (0..np).map(|j| (lay.q(c, k, j), phi[j])).collect());
            let cv: Lin = (0..np).map(|j| (lay.c(c, j), phi[j])).collect();
            let ugradc: Lin = (0..np).map(|j| (lay.c(c, j), u[0] * grads[j][0] + u[1] * grads[j][1])).collect();
            let dtheta: [Lin; 2] = [0, 1].map(|k| combine(&[(&theta[0], d[k][0]), (&theta[1], d[k][1])]));
            let fsum = src.f_i[idx] + src.f_p[idx];
            let rhs = src.f_i[idx] * src.c_bar[idx] + src.forcing[idx] + phi_c * c_prev.eval(c, 0, &phi) / tau;
            for i in 0..np {
                for k in 0..2 {
                    // (Dθ, z) − (q, z)
                    let row = lay.theta(c, k, i);
                    add(&mut a, row, w * phi[i], &dtheta[k]);
                    add(&mut a, row, -w * phi[i], &q[k]);
                    // (θ, v) − (c, ∇·v)
                    let row = lay.q(c, k, i);
                    add(&mut a, row, w * phi[i], &theta[k]);
                    add(&mut a, row, -w * grads[i][k], &cv);
                }
                // (φc/τ, w) − (q + ½Uc, ∇w) + ½(U·∇c, w) + ½((f_I+f_P)c, w)
                let row = lay.c(c, i);
                let ugradw = u[0] * grads[i][0] + u[1] * grads[i][1];
                add(&mut a, row, w * phi_c / tau * phi[i], &cv);
                add(&mut a, row, -w * grads[i][0], &q[0]);
                add(&mut a, row, -w * grads[i][1], &q[1]);
                add(&mut a, row, -0.5 * w * ugradw, &cv);
                add(&mut a, row, 0.5 * w * phi[i], &ugradc);
                add(&mut a, row, 0.5 * w * fsum * phi[i], &cv);
                b[row] += w * rhs * phi[i];
            }
        }
    }
    for_face_points(mesh, tables, |f, w, psi, sides| {
        let face = &mesh.faces[f];
        let chat: Lin = (0..nf).map(|l| (lay.chat(f, l), psi[l])).collect();
        // σ_D = nᵀD(U)n from the owner side
        let owner = &sides[0];
        let uo = velocity_at(mesh, tables, &vel, owner.cell, owner.xhat);
        let d = dispersion(uo, model);
        let nn = face.normal;
        let sigma_d = (0..2).map(|i| (0..2).map(|j| nn[i] * d[i][j] * nn[j]).sum::<f64>()).sum::<f64>();
        for s in sides {
            let c = s.cell;
            let u = velocity_at(mesh, tables, &vel, c, s.xhat);
            let un = u[0] * s.n[0] + u[1] * s.n[1];
            let cv: Lin = (0..np).map(|j| (lay.c(c, j), s.phi[j])).collect();
            let qn: Lin = (0..2).flat_map(|k| (0..np).map(move |j| (k, j))).map(|(k, j)| (lay.q(c, k, j), s.phi[j] * s.n[k])).collect();
            let diff = combine(&[(&cv, 1.0), (&chat, -1.0)]);
            // q̂·n + ½(Uc)^·n
            let flux = combine(&[
                (&qn, 1.0),
                (&diff, sigma_d),
                (&cv, 0.5 * un),
                (&chat, 0.5 * un),
                (&diff, un.abs()),
            ]);
            for i in 0..np {
                for k in 0..2 {
                    // ⟨ĉ, v·n⟩
                    add(&mut a, lay.q(c, k, i), w * s.phi[i] * s.n[k], &chat);
                }
                // −½⟨U·n c, w⟩ + ⟨flux, w⟩
                let row = lay.c(c, i);
                add(&mut a, row, -0.5 * w * un * s.phi[i], &cv);
                add(&mut a, row, w * s.phi[i], &flux);
            }
            for l in 0..nf {
                add(&mut a, lay.chat(f, l), w * psi[l], &flux);
            }
        }
    });
    a.lu().solve(&b).expect("monolithic transport system is nonsingular")
}

// ---------------------------------------------------------- comparisons

fn flow_vector(sol: &hdgmd::flow::FlowSolution, mesh: &Mesh, tables: &Tables) -> Vec<f64> {
    let np = tables.nphi();
    let mut v = Vec::new();
    for c in 0..mesh.num_cells() {
        v.extend_from_slice(&sol.u.cell(c)[..2 * np]);
        v.extend_from_slice(sol.p.cell(c));
    }
    v.extend_from_slice(&sol.p_hat.data);
    v
}

fn transport_vector(sol: &hdgmd::transport::TransportSolution, mesh: &Mesh) -> Vec<f64> {
    let mut v = Vec::new();
    for c in 0..mesh.num_cells() {
        v.extend_from_slice(sol.theta.cell(c));
        v.extend_from_slice(sol.q.cell(c));
        v.extend_from_slice(sol.c.cell(c));
    }
    v.extend_from_slice(&sol.c_hat.data);
    v
}

pub struct Case {
    pub mesh: Mesh,
    pub tables: Tables,
    pub model: PhysicalModel,
    pub c_prev: CellField,
    pub src: SourceSlice,
    pub sigma: f64,
    pub tau: f64,
}

pub fn case(rng: &mut ChaCha8Rng, cells: usize, k: usize) -> Case {
    let mesh = if cells == 1 { one_cell(rng) } else { two_cells(rng) };
    let tables = Tables::new(k).unwrap();
    let model = random_model(rng);
    let c_prev = random_cells(rng, mesh.num_cells(), k, 1, 0.5, 0.2);
    let src = SourceSlice::evaluate(&mesh, &tables, &model, 0.0, true);
    Case {
        mesh,
        tables,
        model,
        c_prev,
        src,
        sigma: rng.random_range(0.3..3.0),
        tau: rng.random_range(0.01..0.5),
    }
}


/// Relative difference between a condensed solve and the monolithic one.
#[derive(Debug, Clone, Copy)]
pub struct Comparison {
    pub cells: usize,
    pub k: usize,
    pub rel: f64,
}

pub const TOL: f64 = 1e-10;

/// Random flow problems on one and two cells, three per degree 0..=3.
pub fn flow_comparisons(seed: u64) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for cells in [1, 2] {
        for k in 0..=3 {
            for _ in 0..3 {
                let cs = case(&mut rng, cells, k);
                let sol = solve_darcy(&cs.mesh, &cs.tables, &cs.model, &cs.c_prev, &cs.src, cs.sigma).unwrap();
                let x = flow_oracle(&cs.mesh, &cs.tables, &cs.model, &cs.c_prev, &cs.src, cs.sigma);
                let v = flow_vector(&sol, &cs.mesh, &cs.tables);
                // one cell with k = 0: compatible sources give the zero
                // solution, so compare absolutely
                let rel = if x.norm() < 1e-12 {
                    DVector::from_vec(v).norm()
                } else {
                    rel(&v, x.as_slice())
                };
                out.push(Comparison { cells, k, rel });
            }
        }
    }
    out
}

/// Random transport steps on one and two cells, with a random broken
/// velocity or the reconstruction of a flow solve.
pub fn transport_comparisons(seed: u64, reconstructed: bool) -> Vec<Comparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for cells in [1, 2] {
        for k in 0..=3 {
            for _ in 0..3 {
                let cs = case(&mut rng, cells, k);
                let raw = random_cells(&mut rng, cs.mesh.num_cells(), k, 2, 0.0, 1.5);
                let rt: RtField;
                let vel = if reconstructed {
                    let flow = solve_darcy(&cs.mesh, &cs.tables, &cs.model, &cs.c_prev, &cs.src, cs.sigma).unwrap();
                    rt = reconstruct_velocity(&cs.mesh, &cs.tables, &flow, cs.sigma).unwrap();
                    Velocity::Reconstructed(&rt)
                } else {
                    Velocity::Raw(&raw)
                };
                let disc = Discretization::new(k, cs.tau, cs.tau);
                let sol = solve_transport_step(&cs.mesh, &cs.tables, &cs.model, &disc, &cs.c_prev, vel, &cs.src).unwrap();
                let x = transport_oracle(&cs.mesh, &cs.tables, &cs.model, cs.tau, &cs.c_prev, vel, &cs.src);
                out.push(Comparison {
                    cells,
                    k,
                    rel: rel(&transport_vector(&sol, &cs.mesh), x.as_slice()),
                });
            }
        }
    }
    out
}
