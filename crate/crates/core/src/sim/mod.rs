//! Coupled time loop, scenario definitions and per-step audit records.

pub mod mms;

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::fem::{CellField, CellMap, FaceField, FemError, RtField, Tables};
use crate::flow::{
    constant_fn, divergence_defects, energy_identity_defect, gradient_identity_defect, normal_jump,
    pressure_jump_sq, reconstruct_velocity, rt_l2_norm, solve_darcy, FlowError, FlowSolution, PhysicalModel,
    RegionValues, SourceSlice, Viscosity,
};
use crate::mesh::{
    generate_lshape, generate_unit_square, load_mesh, refine_uniform, LShapeGrading, Mesh, MeshError, TAG_OMEGA2,
    TAG_WELL_BOTTOM_LEFT, TAG_WELL_TOP_RIGHT,
};
use crate::transport::{
    flux_defect, initialize_concentration, solve_transport_step, step_energy, theta_gradient_defect, Discretization,
    StepEnergy, TransportError, TransportSolution, Velocity,
};

pub use mms::{CosineSolution, ExactSolution, Jet, MmsBundle, MmsForcing, MmsParams};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("step {step} (t = {t}) failed: {message}")]
    StepFailed {
        step: usize,
        t: f64,
        message: String,
        trajectory: Box<Trajectory>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    /// `n × n` squares split into triangles, then `refinements` uniform
    /// refinements.
    UnitSquare { divisions: usize, refinements: usize },
    LShape { well_size: f64, grading: LShapeGrading },
    File(PathBuf),
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh, MeshError> {
        match self {
            MeshSpec::UnitSquare { divisions, refinements } => {
                let mut m = generate_unit_square(*divisions)?;
                for _ in 0..*refinements {
                    m = refine_uniform(&m);
                }
                Ok(m)
            }
            MeshSpec::LShape { well_size, grading } => generate_lshape(*well_size, grading),
            MeshSpec::File(p) => load_mesh(p),
        }
    }
}

/// Which corner well injects; the other one produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WellPlacement {
    #[default]
    InjectorTopRight,
    InjectorBottomLeft,
    /// No wells (sources come from the model only).
    None,
}

impl WellPlacement {
    /// `(injection tag, production tag)`.
    pub fn tags(&self) -> Option<(u32, u32)> {
        match self {
            WellPlacement::InjectorTopRight => Some((TAG_WELL_TOP_RIGHT, TAG_WELL_BOTTOM_LEFT)),
            WellPlacement::InjectorBottomLeft => Some((TAG_WELL_BOTTOM_LEFT, TAG_WELL_TOP_RIGHT)),
            WellPlacement::None => None,
        }
    }
}

/// Which states to keep in the trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSchedule {
    /// Keep every `every`-th step (0: none besides `times` and the final
    /// state).
    pub every: usize,
    /// Extra times to keep (rounded to the nearest step).
    pub times: Vec<f64>,
    /// Keep `c_h` at every step.
    pub concentration_history: bool,
}

impl OutputSchedule {
    pub fn all() -> Self {
        Self {
            every: 1,
            times: Vec::new(),
            concentration_history: true,
        }
    }

    pub fn keeps(&self, step: usize, nsteps: usize, tau: f64) -> bool {
        step == nsteps
            || (self.every > 0 && step % self.every == 0)
            || self.times.iter().any(|t| (t / tau).round() as usize == step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Manufactured,
    LShape,
    Zero,
    Custom,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub mesh_spec: MeshSpec,
    pub mesh: Mesh,
    pub model: PhysicalModel,
    pub disc: Discretization,
    pub exact: Option<Arc<MmsBundle>>,
    pub wells: WellPlacement,
    pub schedule: OutputSchedule,
    /// Rescale `f_P` at every step so that the quadrature integrals of
    /// `f_I` and `f_P` agree.
    pub rebalance: bool,
}

pub const MMS_T: f64 = 0.1;
pub const LSHAPE_T: f64 = 5.0;
pub const LSHAPE_WELL_SIZE: f64 = 0.01;
pub const LSHAPE_RATE: f64 = 180.0;

/// Parameters of the manufactured problem.
pub fn mms_params() -> MmsParams {
    MmsParams {
        kappa: 1.0,
        porosity: 0.2,
        d0: 1.0,
        alpha_l: 1.8e-5,
        alpha_t: 1.8e-6,
        viscosity: Viscosity::quarter_power(2.0, 1.0),
        production: 25.0,
        c_bar: 0.0,
    }
}

/// Largest `τ ≤ τ_max` that divides `t_final` evenly.
pub fn fit_step(tau_max: f64, t_final: f64) -> f64 {
    let n = (t_final / tau_max * (1.0 - 1e-12)).ceil().max(1.0);
    t_final / n
}

/// Model whose sources make `bundle` an exact solution.
pub fn mms_model(bundle: Arc<MmsBundle>) -> PhysicalModel {
    let p = bundle.params;
    let (b1, b2, b3) = (bundle.clone(), bundle.clone(), bundle.clone());
    PhysicalModel {
        porosity: RegionValues::uniform(p.porosity),
        permeability: RegionValues::uniform(p.kappa),
        viscosity: p.viscosity,
        d0: p.d0,
        alpha_l: p.alpha_l,
        alpha_t: p.alpha_t,
        f_i: Arc::new(move |x, t, _| b1.f_i(x, t)),
        f_p: constant_fn(p.production),
        c_bar: constant_fn(p.c_bar),
        transport_forcing: Some(Arc::new(move |x, t, _| b2.forcing(x, t).transport)),
        c0: Arc::new(move |x| b3.concentration(x, 0.0)),
    }
}

/// Model of the L-shaped reservoir with two corner wells.
pub fn lshape_model(wells: WellPlacement) -> PhysicalModel {
    let (inj, prod) = wells.tags().map_or((None, None), |(a, b)| (Some(a), Some(b)));
    let rate = move |tag: Option<u32>| -> crate::flow::DataFn {
        Arc::new(move |_, _, t| if Some(t) == tag { LSHAPE_RATE } else { 0.0 })
    };
    PhysicalModel {
        porosity: RegionValues::uniform(0.1),
        permeability: RegionValues {
            default: 1.0,
            by_tag: vec![(TAG_OMEGA2, 1e-6)],
        },
        viscosity: Viscosity::quarter_power(4.0, 1.0),
        d0: 1.8e-6,
        alpha_l: 1.8e-4,
        alpha_t: 1.8e-5,
        f_i: rate(inj),
        f_p: rate(prod),
        c_bar: constant_fn(1.0),
        transport_forcing: None,
        c0: Arc::new(|_| 0.0),
    }
}

/// Model with no sources and `c₀ = 0`.
pub fn zero_model() -> PhysicalModel {
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

impl Scenario {
    pub fn new(
        name: &str,
        kind: ScenarioKind,
        mesh_spec: MeshSpec,
        model: PhysicalModel,
        disc: Discretization,
    ) -> Result<Self, SimError> {
        let mesh = mesh_spec.build()?;
        Ok(Self {
            name: name.to_string(),
            kind,
            mesh_spec,
            mesh,
            model,
            disc,
            exact: None,
            wells: WellPlacement::None,
            schedule: OutputSchedule::default(),
            rebalance: true,
        })
    }

    /// Manufactured problem on the unit square refined `level` times from
    /// two triangles (`h = √2 / 2^level`), `τ = min(0.01, h^{k+1})`
    /// shrunk to divide `T = 0.1`.
    pub fn manufactured(level: usize, k: usize) -> Result<Self, SimError> {
        let h = std::f64::consts::SQRT_2 / f64::from(1u32 << level);
        let tau = fit_step(0.01f64.min(h.powi(k as i32 + 1)), MMS_T);
        let bundle = Arc::new(MmsBundle::cosine(mms_params()));
        let mut s = Self::new(
            &format!("manufactured-l{level}-k{k}"),
            ScenarioKind::Manufactured,
            MeshSpec::UnitSquare {
                divisions: 1,
                refinements: level,
            },
            mms_model(bundle.clone()),
            Discretization::new(k, tau, MMS_T),
        )?;
        s.exact = Some(bundle);
        s.schedule = OutputSchedule::all();
        Ok(s)
    }

    pub fn lshape(k: usize, tau: f64, wells: WellPlacement, grading: LShapeGrading) -> Result<Self, SimError> {
        let mut s = Self::new(
            "lshape",
            ScenarioKind::LShape,
            MeshSpec::LShape {
                well_size: LSHAPE_WELL_SIZE,
                grading,
            },
            lshape_model(wells),
            Discretization::new(k, tau, LSHAPE_T),
        )?;
        s.wells = wells;
        s.schedule = OutputSchedule {
            every: 0,
            times: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            concentration_history: true,
        };
        Ok(s)
    }

    pub fn zero(level: usize, k: usize, tau: f64, t_final: f64) -> Result<Self, SimError> {
        let mut s = Self::new(
            "zero",
            ScenarioKind::Zero,
            MeshSpec::UnitSquare {
                divisions: 1,
                refinements: level,
            },
            zero_model(),
            Discretization::new(k, tau, t_final),
        )?;
        s.schedule = OutputSchedule::all();
        Ok(s)
    }

    /// Replace the mesh, e.g. by one read from a file.
    pub fn set_mesh(&mut self, spec: MeshSpec) -> Result<(), SimError> {
        self.mesh = spec.build()?;
        self.mesh_spec = spec;
        Ok(())
    }

    /// Times of the states a run will store.
    pub fn scheduled_times(&self) -> Result<Vec<f64>, SimError> {
        let n = self.disc.num_steps()?;
        Ok((1..=n)
            .filter(|&i| self.schedule.keeps(i, n, self.disc.tau))
            .map(|i| self.disc.time(i))
            .collect())
    }

    /// Cells of the production well, if any.
    pub fn production_region(&self) -> Option<Vec<usize>> {
        let (_, prod) = self.wells.tags()?;
        Some(self.mesh.cells_with_tag(prod))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate(&self.mesh)?;
        self.disc.validate()?;
        if let Some(b) = &self.exact {
            self_test(self, b)?;
        }
        Ok(())
    }
}

/// Check that the synthesized sources satisfy the flow equation at the
/// quadrature points and that the exact fields have no boundary flux.
fn self_test(s: &Scenario, b: &MmsBundle) -> Result<(), SimError> {
    let mesh = &s.mesh;
    let tables = Tables::new(s.disc.k)?;
    for t in [0.0, 0.5 * s.disc.t_final, s.disc.t_final] {
        for c in 0..mesh.num_cells() {
            let map = CellMap::new(mesh, c);
            for &p in &tables.vol.points {
                let x = map.to_physical(p);
                let r = b.forcing(x, t).flow;
                if r.abs() > 1e-10 * (1.0 + b.f_i(x, t).abs()) {
                    return Err(SimError::InvalidScenario(format!(
                        "flow forcing residual {r:e} at {x:?}, t = {t}"
                    )));
                }
            }
        }
        for (f, face) in mesh.faces.iter().enumerate() {
            if !face.is_boundary() {
                continue;
            }
            for &sq in &tables.edge.points {
                let x = mesh.face_point(f, sq);
                let n = face.normal;
                let u = b.velocity(x, t);
                let th = b.theta(x, t);
                let un = u[0] * n[0] + u[1] * n[1];
                let tn = th[0] * n[0] + th[1] * n[1];
                if un.abs() > 1e-10 || tn.abs() > 1e-10 {
                    return Err(SimError::InvalidScenario(format!(
                        "exact solution has boundary flux (u·n = {un:e}, θ·n = {tn:e}) at {x:?}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Evaluate the source terms of the manufactured problem at one point.
/// Returns `(f_I − f_P, transport source)`.
pub fn mms_forcing(bundle: &MmsBundle, x: [f64; 2], t: f64) -> (f64, f64) {
    let f = bundle.forcing(x, t);
    (bundle.f_i(x, t) - bundle.f_p(x, t), f.transport)
}

/// All discrete fields after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteState {
    pub step: usize,
    pub t: f64,
    pub flow: FlowSolution,
    pub velocity: RtField,
    pub transport: TransportSolution,
}

/// Diagnostics recorded after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: StepEnergy,
    /// Relative defect of the per-step transport energy identity.
    pub transport_identity: f64,
    /// Relative defect of the flow energy identity.
    pub flow_identity: f64,
    /// `‖π_k(K⁻¹u) + G_h(p,p̂)‖ / ‖G_h(p,p̂)‖`
    pub flow_gradient: f64,
    /// Max over cells of `‖∇·U − π_k(f_I − f_P)‖_{L²(E)}`.
    pub divergence: f64,
    /// `‖f_I − f_P‖`
    pub source_norm: f64,
    /// Max over interior faces of `‖⟦U·n⟧‖_{L²(e)}`.
    pub normal_jump: f64,
    pub velocity_norm: f64,
    /// `‖θ + G_h(c,ĉ)‖`
    pub theta_defect: f64,
    pub theta_norm: f64,
    /// `‖π_k(D(U)θ) − q‖`
    pub flux_defect: f64,
    /// `‖U − u‖`
    pub reconstruction_gap: f64,
    /// `h^{1/2} ‖σ_u^{1/2}(p − p̂)‖_{∂E_h}`
    pub pressure_jump: f64,
    pub production_scale: f64,
    /// Cells with values above 1.001 / below −0.001.
    pub overshoot: usize,
    pub undershoot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub t: f64,
    pub message: String,
}

#[derive(Clone, PartialEq)]
pub struct Trajectory {
    pub k: usize,
    pub tau: f64,
    pub reconstructed: bool,
    pub initial: (CellField, FaceField),
    /// `‖c₀‖²` by quadrature of the closed form.
    pub c0_norm2: f64,
    /// `‖φ^{1/2} c_h⁰‖²`
    pub phi_c0h2: f64,
    pub porosity_bounds: (f64, f64),
    pub states: Vec<DiscreteState>,
    pub records: Vec<StepRecord>,
    /// `(t_i, c_h^i)` for every step, when requested.
    pub history: Vec<(f64, CellField)>,
    pub failure: Option<StepFailure>,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("k", &self.k)
            .field("tau", &self.tau)
            .field("reconstructed", &self.reconstructed)
            .field("states", &self.states.len())
            .field("records", &self.records.len())
            .field("failure", &self.failure)
            .finish_non_exhaustive()
    }
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    /// Stored state nearest to `t` within half a step.
    pub fn state_at(&self, t: f64) -> Option<&DiscreteState> {
        self.states.iter().find(|s| (s.t - t).abs() <= 0.5 * self.tau)
    }
}

/// Counts of cells with over- and undershoots at the volume quadrature
/// points and vertices.
pub fn overshoot_counts(mesh: &Mesh, tables: &Tables, c: &CellField) -> (usize, usize) {
    let flags = overshoot_flags(mesh, tables, c);
    (
        flags.iter().filter(|f| f.0).count(),
        flags.iter().filter(|f| f.1).count(),
    )
}

pub const OVERSHOOT: f64 = 1.001;
pub const UNDERSHOOT: f64 = -0.001;

/// Per cell `(over, under)`.
pub fn overshoot_flags(mesh: &Mesh, tables: &Tables, c: &CellField) -> Vec<(bool, bool)> {
    let verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let vert_vals: Vec<Vec<f64>> = verts.iter().map(|&v| tables.scalar.values(v)).collect();
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|e| {
            let vals = tables
                .phi
                .iter()
                .chain(&vert_vals)
                .map(|phi| c.eval(e, 0, phi));
            vals.fold((false, false), |(o, u), v| (o || v > OVERSHOOT, u || v < UNDERSHOOT))
        })
        .collect()
}

fn closed_form_norm2(mesh: &Mesh, tables: &Tables, f: &(dyn Fn([f64; 2]) -> f64 + Send + Sync)) -> f64 {
    (0..mesh.num_cells())
        .map(|c| {
            let map = CellMap::new(mesh, c);
            tables
                .vol
                .points
                .iter()
                .zip(&tables.vol.weights)
                .map(|(&p, w)| w * map.det * f(map.to_physical(p)).powi(2))
                .sum::<f64>()
        })
        .sum()
}

fn phi_norm2(mesh: &Mesh, model: &PhysicalModel, c: &CellField) -> f64 {
    // orthonormal basis: ‖c‖²_E = det Σ coef²
    (0..mesh.num_cells())
        .map(|e| {
            model.porosity.get(mesh.region_tags[e])
                * 2.0
                * mesh.cell_area(e)
                * c.cell(e).iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

fn cell_field_diff_norm(mesh: &Mesh, tables: &Tables, u: &RtField, raw: &CellField) -> f64 {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            (0..tables.vol.len())
                .map(|q| {
                    let a = u.eval(c, &map, &tables.rt_vals[q]);
                    let b = raw.eval_vec(c, &tables.phi[q]);
                    tables.vol.weights[q] * map.det * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Override the scenario schedule and keep every state.
    pub store_all: bool,
}

/// Run the coupled scheme with the reconstructed velocity in transport.
/// Any step error aborts with the trajectory computed so far.
pub fn run(scenario: &Scenario, options: RunOptions) -> Result<Trajectory, SimError> {
    let traj = run_impl(scenario, options, true)?;
    match &traj.failure {
        Some(f) => Err(SimError::StepFailed {
            step: f.step,
            t: f.t,
            message: f.message.clone(),
            trajectory: Box::new(traj),
        }),
        None => Ok(traj),
    }
}

/// As [`run`] with the raw HDG velocity in transport. Step failures are
/// recorded in `Trajectory::failure` rather than returned as errors.
pub fn run_without_reconstruction(scenario: &Scenario, options: RunOptions) -> Result<Trajectory, SimError> {
    run_impl(scenario, options, false)
}

/// A step producing non-finite values is treated as a failure.
fn finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn run_impl(scenario: &Scenario, options: RunOptions, reconstructed: bool) -> Result<Trajectory, SimError> {
    scenario.validate()?;
    let mesh = &scenario.mesh;
    let model = &scenario.model;
    let disc = &scenario.disc;
    let tables = Tables::new(disc.k)?;
    let nsteps = disc.num_steps()?;
    let h = mesh.h_max();
    let (c0, c0_hat) = initialize_concentration(mesh, &tables, model);
    let hi = Tables::with_exactness(disc.k, 2 * disc.k + 4, 2 * disc.k + 5)?;
    let c0f = model.c0.clone();
    let mut traj = Trajectory {
        k: disc.k,
        tau: disc.tau,
        reconstructed,
        c0_norm2: closed_form_norm2(mesh, &hi, &|x| c0f(x)),
        phi_c0h2: phi_norm2(mesh, model, &c0),
        porosity_bounds: model.porosity_bounds(mesh),
        initial: (c0.clone(), c0_hat),
        states: Vec::new(),
        records: Vec::new(),
        history: Vec::new(),
        failure: None,
    };
    let mut c_prev = c0;
    for i in 1..=nsteps {
        let t = disc.time(i);
        let fail = |traj: &mut Trajectory, message: String| {
            log::warn!("step {i} (t = {t}) failed: {message}");
            traj.failure = Some(StepFailure { step: i, t, message });
        };
        let sources = SourceSlice::evaluate(mesh, &tables, model, t, scenario.rebalance);
        let flow = match solve_darcy(mesh, &tables, model, &c_prev, &sources, disc.sigma_u) {
            Ok(f) => f,
            Err(e) => {
                fail(&mut traj, format!("flow: {e}"));
                break;
            }
        };
        let vel_rt = match reconstruct_velocity(mesh, &tables, &flow, disc.sigma_u) {
            Ok(u) => u,
            Err(e) => {
                fail(&mut traj, format!("reconstruction: {e}"));
                break;
            }
        };
        let vel = if reconstructed {
            Velocity::Reconstructed(&vel_rt)
        } else {
            Velocity::Raw(&flow.u)
        };
        let sol = match solve_transport_step(mesh, &tables, model, disc, &c_prev, vel, &sources) {
            Ok(s) if finite(&s.c.data) && finite(&s.c_hat.data) => s,
            Ok(_) => {
                fail(&mut traj, "transport: non-finite concentration".into());
                break;
            }
            Err(e) => {
                fail(&mut traj, format!("transport: {e}"));
                break;
            }
        };
        let energy = step_energy(mesh, &tables, model, disc, &c_prev, &sol, vel, &sources);
        let net: Vec<f64> = sources.f_i.iter().zip(&sources.f_p).map(|(a, b)| a - b).collect();
        let (overshoot, undershoot) = overshoot_counts(mesh, &tables, &sol.c);
        let record = StepRecord {
            step: i,
            t,
            energy,
            transport_identity: energy.identity_residual(disc.tau).abs()
                / energy.identity_scale(disc.tau).max(f64::MIN_POSITIVE),
            flow_identity: energy_identity_defect(mesh, &tables, model, &c_prev, &sources, &flow, disc.sigma_u),
            flow_gradient: gradient_identity_defect(mesh, &tables, model, &c_prev, &flow),
            divergence: divergence_defects(mesh, &tables, &vel_rt, &sources)
                .into_iter()
                .fold(0.0, f64::max),
            source_norm: sources.l2(mesh, &tables, &net),
            normal_jump: normal_jump(mesh, &tables, &vel_rt),
            velocity_norm: rt_l2_norm(mesh, &tables, &vel_rt),
            theta_defect: theta_gradient_defect(mesh, &tables, &sol),
            theta_norm: sol.theta.l2_norm(mesh),
            flux_defect: flux_defect(mesh, &tables, model, &sol, vel),
            reconstruction_gap: cell_field_diff_norm(mesh, &tables, &vel_rt, &flow.u),
            pressure_jump: h.sqrt() * pressure_jump_sq(mesh, &tables, &flow, disc.sigma_u).sqrt(),
            production_scale: sources.production_scale,
            overshoot,
            undershoot,
        };
        traj.records.push(record);
        if scenario.schedule.concentration_history {
            traj.history.push((t, sol.c.clone()));
        }
        if options.store_all || scenario.schedule.keeps(i, nsteps, disc.tau) {
            traj.states.push(DiscreteState {
                step: i,
                t,
                flow,
                velocity: vel_rt,
                transport: sol.clone(),
            });
        }
        log::debug!("step {i}/{nsteps} t = {t:.4} ‖c‖² = {:.6e}", energy.c2);
        c_prev = sol.c;
    }
    Ok(traj)
}
