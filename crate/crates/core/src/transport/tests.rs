use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fem::{project_cell_vector, Tables};
use crate::flow::{constant_fn, reconstruct_velocity, solve_darcy, RegionValues, Viscosity};
use crate::mesh::generate_unit_square;

fn model() -> PhysicalModel {
    PhysicalModel {
        porosity: RegionValues::uniform(0.2),
        permeability: RegionValues::uniform(1.0),
        viscosity: Viscosity::quarter_power(2.0, 1.0),
        d0: 1.0,
        alpha_l: 1.8e-5,
        alpha_t: 1.8e-6,
        f_i: constant_fn(0.0),
        f_p: constant_fn(0.0),
        c_bar: constant_fn(0.0),
        transport_forcing: None,
        c0: Arc::new(|_| 0.0),
    }
}

fn wells_model() -> PhysicalModel {
    let mut m = model();
    m.d0 = 1e-2;
    m.alpha_l = 0.1;
    m.alpha_t = 0.01;
    m.f_i = Arc::new(|x, _, _| if x[0] > 0.75 && x[1] > 0.75 { 50.0 } else { 0.0 });
    m.f_p = Arc::new(|x, _, _| if x[0] < 0.25 && x[1] < 0.25 { 50.0 } else { 0.0 });
    m.c_bar = constant_fn(1.0);
    m
}

#[test]
fn dispersion_tensor() {
    assert_eq!(dispersion([0.0, 0.0], 0.7, 1.0, 2.0), [[0.7, 0.0], [0.0, 0.7]]);
    let d = dispersion([1.0, 0.0], 1.0, 1.8e-5, 1.8e-6);
    assert!((d[0][0] - (1.0 + 1.8e-5)).abs() < 1e-15);
    assert!((d[1][1] - (1.0 + 1.8e-6)).abs() < 1e-15);
    assert!(d[0][1].abs() < 1e-20 && d[1][0].abs() < 1e-20);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let u = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let a: f64 = rng.random_range(0.0..6.3);
        let (c, s) = (a.cos(), a.sin());
        let ru = [c * u[0] - s * u[1], s * u[0] + c * u[1]];
        let d = dispersion(u, 0.3, 0.2, 0.05);
        let dr = dispersion(ru, 0.3, 0.2, 0.05);
        assert!((d[0][1] - d[1][0]).abs() < 1e-15);
        // R D Rᵀ
        let r = [[c, -s], [s, c]];
        for i in 0..2 {
            for j in 0..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        v += r[i][k] * d[k][l] * r[j][l];
                    }
                }
                assert!((v - dr[i][j]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn sigma_d_values() {
    let mesh = generate_unit_square(2).unwrap();
    let t = Tables::new(1).unwrap();
    let m = model();
    let zero = CellField::zeros(mesh.num_cells(), 1, 2);
    let s = sigma_d(&mesh, &t, &m, Velocity::Raw(&zero), SigmaDMode::Owner);
    assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
    let ux = project_cell_vector(&mesh, &t, |_| [1.0, 0.0]);
    let s = sigma_d(&mesh, &t, &m, Velocity::Raw(&ux), SigmaDMode::Owner);
    let nq = t.edge.points.len();
    for (f, face) in mesh.faces.iter().enumerate() {
        for q in 0..nq {
            assert!(s[f * nq + q] >= m.d0);
            if face.normal[0].abs() == 1.0 {
                assert!((s[f * nq + q] - (1.0 + 1.8e-5)).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn constants_are_preserved_without_flow() {
    let mesh = generate_unit_square(3).unwrap();
    let t = Tables::new(2).unwrap();
    let m = model();
    let disc = Discretization::new(2, 0.1, 1.0);
    let cp = project_cell(&mesh, &t, |_| 0.4);
    let u = CellField::zeros(mesh.num_cells(), 2, 2);
    let s = SourceSlice::evaluate(&mesh, &t, &m, 0.1, true);
    let sol = solve_transport_step(&mesh, &t, &m, &disc, &cp, Velocity::Raw(&u), &s).unwrap();
    for (a, b) in sol.c.data.iter().zip(&cp.data) {
        assert!((a - b).abs() < 1e-12);
    }
    for f in 0..mesh.num_faces() {
        assert!((sol.c_hat.face(f)[0] - 0.4).abs() < 1e-12);
    }
    assert!(sol.theta.data.iter().chain(&sol.q.data).all(|v| v.abs() < 1e-12));
}

#[test]
fn step_identities_with_reconstructed_velocity() {
    let mesh = generate_unit_square(4).unwrap();
    for k in 1..=2 {
        let t = Tables::new(k).unwrap();
        let m = wells_model();
        let disc = Discretization::new(k, 0.05, 1.0);
        let cp = project_cell(&mesh, &t, |x| 0.5 * (PI * x[0]).sin() * x[1]);
        let s = SourceSlice::evaluate(&mesh, &t, &m, 0.05, true);
        let flow = solve_darcy(&mesh, &t, &m, &cp, &s, 1.0).unwrap();
        let u = reconstruct_velocity(&mesh, &t, &flow, 1.0).unwrap();
        let vel = Velocity::Reconstructed(&u);
        let sol = solve_transport_step(&mesh, &t, &m, &disc, &cp, vel, &s).unwrap();
        let th = sol.theta.l2_norm(&mesh);
        assert!(theta_gradient_defect(&mesh, &t, &sol) < 1e-9 * (1.0 + th));
        assert!(flux_defect(&mesh, &t, &m, &sol, vel) < 1e-9 * (1.0 + sol.q.l2_norm(&mesh)));
        let e = step_energy(&mesh, &t, &m, &disc, &cp, &sol, vel, &s);
        assert!(e.identity_residual(disc.tau).abs() < 1e-9 * e.identity_scale(disc.tau));
        assert!(e.skew.abs() < 1e-10 * (1.0 + e.jump));
        // random trace data: assembled face term still vanishes
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = sol.c.clone();
        let mut ch = sol.c_hat.clone();
        c.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        ch.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        assert!(skew_face_term(&mesh, &t, vel, &c, &ch).abs() < 1e-9);
        let raw = Velocity::Raw(&flow.u);
        assert!(skew_face_term(&mesh, &t, raw, &c, &ch).abs() > 1e-6);
    }
}

#[test]
fn non_conforming_velocity_is_rejected() {
    let mesh = generate_unit_square(2).unwrap();
    let t = Tables::new(1).unwrap();
    let m = model();
    let disc = Discretization::new(1, 0.1, 1.0);
    let mut u = crate::fem::RtField::zeros(mesh.num_cells(), 1);
    u.cell_mut(0)[0] = 1.0;
    let cp = CellField::zeros(mesh.num_cells(), 1, 1);
    let s = SourceSlice::evaluate(&mesh, &t, &m, 0.1, true);
    assert!(matches!(
        solve_transport_step(&mesh, &t, &m, &disc, &cp, Velocity::Reconstructed(&u), &s),
        Err(TransportError::NotConforming { .. })
    ));
}

#[test]
fn discretization_checks() {
    assert_eq!(Discretization::new(1, 0.05, 5.0).num_steps().unwrap(), 100);
    assert!(Discretization::new(1, 0.03, 0.1).num_steps().is_err());
    assert!(Discretization::new(1, 0.0, 0.1).validate().is_err());
    let (c, ch) = initialize_concentration(
        &generate_unit_square(1).unwrap(),
        &Tables::new(1).unwrap(),
        &model(),
    );
    assert!(c.data.iter().chain(&ch.data).all(|v| *v == 0.0));
}
