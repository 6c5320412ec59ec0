//! Error measurement, convergence rates, energy audits and breakthrough
//! curves.

use rayon::prelude::*;

use crate::fem::{CellField, CellMap, RtField, Tables};
use crate::flow::SourceSlice;
use crate::mesh::Mesh;
use crate::sim::{
    overshoot_flags, run, run_without_reconstruction, DiscreteState, RunOptions, Scenario, SimError, Trajectory,
};
use crate::transport::{step_energy, StepEnergy, Velocity};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("level {level}: {source}")]
    Level { level: usize, source: Box<SimError> },
    #[error("manufactured scenario required")]
    NotManufactured,
    #[error("need at least two levels, got {0}")]
    TooFewLevels(usize),
    #[error("empty region")]
    EmptyRegion,
    #[error("stored states do not cover every step")]
    MissingStates,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A discrete field to compare against a closed form.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    /// Component `d` of a cell field.
    Scalar(&'a CellField, usize),
    /// Two-component cell field.
    Vector(&'a CellField),
    Rt(&'a RtField),
}

impl FieldRef<'_> {
    fn degree(&self) -> usize {
        match self {
            FieldRef::Scalar(f, _) | FieldRef::Vector(f) => f.k,
            FieldRef::Rt(f) => f.k,
        }
    }
}

/// `‖field − exact‖_{L²(Ω)}` with a volume rule of exactness `2k+4`.
/// Scalar fields compare against the first component of `exact`.
pub fn l2_error(mesh: &Mesh, field: FieldRef<'_>, exact: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync)) -> f64 {
    let k = field.degree();
    let tables = Tables::with_exactness(k, 2 * k + 4, 2 * k + 5).expect("quadrature degree in range");
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let map = CellMap::new(mesh, c);
            let mut s = 0.0;
            for (q, (&p, &w)) in tables.vol.points.iter().zip(&tables.vol.weights).enumerate() {
                let e = exact(map.to_physical(p));
                let d2 = match field {
                    FieldRef::Scalar(f, d) => (f.eval(c, d, &tables.phi[q]) - e[0]).powi(2),
                    FieldRef::Vector(f) => {
                        let v = f.eval_vec(c, &tables.phi[q]);
                        (v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)
                    }
                    FieldRef::Rt(f) => {
                        let v = f.eval(c, &map, &tables.rt_vals[q]);
                        (v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)
                    }
                };
                s += w * map.det * d2;
            }
            s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        .sqrt()
}

/// Observed order between consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    /// Both errors at round-off.
    Exact,
}

pub const ROUNDOFF: f64 = 1e-12;

/// `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` for consecutive pairs.
pub fn rates(h: &[f64], err: &[f64]) -> Vec<Rate> {
    h.windows(2)
        .zip(err.windows(2))
        .map(|(h, e)| {
            if e[0] < ROUNDOFF && e[1] < ROUNDOFF {
                Rate::Exact
            } else {
                Rate::Value((e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            }
        })
        .collect()
}

/// L² errors of the five fields at the final time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldErrors {
    pub p: f64,
    pub u: f64,
    pub u_rt: f64,
    pub c: f64,
    pub q: f64,
}

impl FieldErrors {
    pub const NAMES: [&'static str; 5] = ["p", "u", "U", "c", "q"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.p, self.u, self.u_rt, self.c, self.q]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub cells: usize,
    /// Global trace unknowns per solve.
    pub trace_dofs: usize,
    pub tau: f64,
    pub steps: usize,
    pub errors: FieldErrors,
    /// Max over steps of `‖U − u‖ / (h^{1/2}‖σ^{1/2}(p − p̂)‖)`.
    pub scaling_ratio: f64,
    /// Overshoot cells at the final time.
    pub overshoot: usize,
    pub audit: Vec<AuditRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub k: usize,
    pub reconstructed: bool,
    pub levels: Vec<LevelResult>,
}

impl ErrorReport {
    /// Rates per field (outer index as in [`FieldErrors::NAMES`]).
    pub fn rates(&self) -> Vec<Vec<Rate>> {
        let h: Vec<f64> = self.levels.iter().map(|l| l.h).collect();
        (0..5)
            .map(|f| {
                let e: Vec<f64> = self.levels.iter().map(|l| l.errors.as_array()[f]).collect();
                rates(&h, &e)
            })
            .collect()
    }

    /// Rates between the two finest levels.
    pub fn finest_rates(&self) -> Vec<Rate> {
        self.rates().into_iter().map(|r| *r.last().expect("two levels")).collect()
    }
}

/// Errors of a manufactured run against the exact solution at the final
/// stored state.
pub fn final_errors(scenario: &Scenario, state: &DiscreteState) -> Result<FieldErrors, VerifyError> {
    let b = scenario.exact.as_ref().ok_or(VerifyError::NotManufactured)?;
    let mesh = &scenario.mesh;
    let t = state.t;
    // p is fixed by zero mean; the exact pressure has zero mean as well
    Ok(FieldErrors {
        p: l2_error(mesh, FieldRef::Scalar(&state.flow.p, 0), &|x| [b.pressure(x, t), 0.0]),
        u: l2_error(mesh, FieldRef::Vector(&state.flow.u), &|x| b.velocity(x, t)),
        u_rt: l2_error(mesh, FieldRef::Rt(&state.velocity), &|x| b.velocity(x, t)),
        c: l2_error(mesh, FieldRef::Scalar(&state.transport.c, 0), &|x| [b.concentration(x, t), 0.0]),
        q: l2_error(mesh, FieldRef::Vector(&state.transport.q), &|x| b.flux(x, t)),
    })
}

/// Run the manufactured problem on `levels` consecutive uniform
/// refinements starting from `first_level` (0 is the two-triangle mesh with
/// `h = √2`).
pub fn convergence_study(
    k: usize,
    first_level: usize,
    levels: usize,
    reconstructed: bool,
) -> Result<ErrorReport, VerifyError> {
    if levels < 2 {
        return Err(VerifyError::TooFewLevels(levels));
    }
    let results: Vec<Result<LevelResult, VerifyError>> = (first_level..first_level + levels)
        .into_par_iter()
        .map(|level| {
            let wrap = |e: SimError| VerifyError::Level {
                level,
                source: Box::new(e),
            };
            let mut s = Scenario::manufactured(level, k).map_err(wrap)?;
            s.schedule.every = 0;
            s.schedule.concentration_history = false;
            let tr = if reconstructed {
                run(&s, RunOptions::default())
            } else {
                run_without_reconstruction(&s, RunOptions::default())
            }
            .map_err(wrap)?;
            if let Some(f) = &tr.failure {
                return Err(wrap(SimError::InvalidScenario(format!("step {} failed: {}", f.step, f.message))));
            }
            let last = tr.states.last().expect("final state stored");
            let tables = Tables::new(k).map_err(|e| wrap(e.into()))?;
            Ok(LevelResult {
                level,
                h: s.mesh.h_max(),
                cells: s.mesh.num_cells(),
                trace_dofs: s.mesh.num_faces() * tables.npsi(),
                tau: s.disc.tau,
                steps: tr.records.len(),
                errors: final_errors(&s, last)?,
                scaling_ratio: scaling_ratio(&tr),
                overshoot: crate::sim::overshoot_counts(&s.mesh, &tables, &last.transport.c).0,
                audit: energy_audit(&tr),
            })
        })
        .collect();
    Ok(ErrorReport {
        k,
        reconstructed,
        levels: results.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Max over steps of `‖U − u‖ / (h^{1/2}‖σ^{1/2}(p − p̂)‖)`, skipping steps
/// where both vanish.
pub fn scaling_ratio(tr: &Trajectory) -> f64 {
    tr.records
        .iter()
        .filter(|r| r.pressure_jump > 0.0)
        .map(|r| r.reconstruction_gap / r.pressure_jump)
        .fold(0.0, f64::max)
}

/// Cumulative energy audit after step `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRecord {
    pub step: usize,
    pub t: f64,
    pub flow_identity: f64,
    /// Left side of the bound as stated:
    /// `φ₀‖c^m‖² + τΣ(‖f_I^{1/2}c‖² + ‖(σ_D+|U·n|)^{1/2}(c−ĉ)‖² + τ‖φ^{1/2}δc‖² + ‖D^{1/2}θ‖²)`
    pub lhs: f64,
    /// `φ₁‖c₀‖² + τΣ‖f_I^{-1/2}(f_I c̄ + g)‖²`
    pub rhs: f64,
    pub slack: f64,
    /// Left side of the bound that follows from the step identity:
    /// `‖φ^{1/2}c^m‖² + Σ(‖φ^{1/2}(c^i−c^{i−1})‖² + 2τ‖D^{1/2}θ‖² + τ‖f_P^{1/2}c‖² + 2τ‖(σ_D+|U·n|)^{1/2}(c−ĉ)‖²)`
    pub corrected_lhs: f64,
    /// `‖φ^{1/2}c_h⁰‖² + τΣ‖f_I^{-1/2}(f_I c̄ + g)‖²`
    pub corrected_rhs: f64,
    pub corrected_slack: f64,
    /// Telescoped identity residual relative to its scale.
    pub identity_defect: f64,
    pub skew: f64,
    pub divergence: f64,
    pub source_norm: f64,
    pub normal_jump: f64,
    pub velocity_norm: f64,
    pub theta_defect: f64,
    pub theta_norm: f64,
}

impl AuditRecord {
    pub fn passes(&self) -> bool {
        self.slack >= -1e-8 * self.rhs
    }

    pub fn corrected_passes(&self) -> bool {
        self.corrected_slack >= -1e-8 * self.corrected_rhs
    }
}

/// Accumulate both sides of the stability bounds from per-step energies.
pub fn audit_from_energies(tr: &Trajectory, energies: &[StepEnergy]) -> Vec<AuditRecord> {
    let tau = tr.tau;
    let (phi0, phi1) = tr.porosity_bounds;
    let mut lit_sum = 0.0;
    let mut cor_sum = 0.0;
    let mut src = 0.0;
    let mut ident = 0.0;
    let mut ident_scale = 0.0;
    let mut out = Vec::with_capacity(energies.len());
    for (r, e) in tr.records.iter().zip(energies) {
        lit_sum += tau * (e.fi_c2 + e.jump) + e.phi_dc2 + tau * e.d_theta2;
        cor_sum += e.phi_dc2 + 2.0 * tau * e.d_theta2 + tau * e.fp_c2 + 2.0 * tau * e.jump;
        src += tau * e.source2;
        ident += 2.0 * e.identity_residual(tau);
        ident_scale += 2.0 * e.identity_scale(tau);
        let lhs = phi0 * e.c2 + lit_sum;
        let rhs = phi1 * tr.c0_norm2 + src;
        let corrected_lhs = e.phi_c2 + cor_sum;
        let corrected_rhs = tr.phi_c0h2 + src;
        out.push(AuditRecord {
            step: r.step,
            t: r.t,
            flow_identity: r.flow_identity,
            lhs,
            rhs,
            slack: rhs - lhs,
            corrected_lhs,
            corrected_rhs,
            corrected_slack: corrected_rhs - corrected_lhs,
            identity_defect: ident.abs() / ident_scale.max(f64::MIN_POSITIVE),
            skew: e.skew,
            divergence: r.divergence,
            source_norm: r.source_norm,
            normal_jump: r.normal_jump,
            velocity_norm: r.velocity_norm,
            theta_defect: r.theta_defect,
            theta_norm: r.theta_norm,
        });
    }
    out
}

/// Audit from the energies recorded during the run.
pub fn energy_audit(tr: &Trajectory) -> Vec<AuditRecord> {
    let e: Vec<StepEnergy> = tr.records.iter().map(|r| r.energy).collect();
    audit_from_energies(tr, &e)
}

/// Recompute every step's energy terms from the stored states. Requires a
/// state for every step.
pub fn recompute_energies(scenario: &Scenario, tr: &Trajectory) -> Result<Vec<StepEnergy>, VerifyError> {
    if tr.states.len() != tr.records.len() || tr.states.iter().enumerate().any(|(i, s)| s.step != i + 1) {
        return Err(VerifyError::MissingStates);
    }
    let mesh = &scenario.mesh;
    let tables = Tables::new(tr.k).map_err(SimError::from)?;
    let mut prev = &tr.initial.0;
    let mut out = Vec::with_capacity(tr.states.len());
    for st in &tr.states {
        let sources = SourceSlice::evaluate(mesh, &tables, &scenario.model, st.t, scenario.rebalance);
        let vel = if tr.reconstructed {
            Velocity::Reconstructed(&st.velocity)
        } else {
            Velocity::Raw(&st.flow.u)
        };
        out.push(step_energy(mesh, &tables, &scenario.model, &scenario.disc, prev, &st.transport, vel, &sources));
        prev = &st.transport.c;
    }
    Ok(out)
}

/// Average concentration over `region` at every recorded time, starting
/// with `t = 0`. Uses the per-step history when present, else the stored
/// states.
pub fn breakthrough_curve(mesh: &Mesh, tr: &Trajectory, region: &[usize]) -> Result<Vec<(f64, f64)>, VerifyError> {
    if region.is_empty() {
        return Err(VerifyError::EmptyRegion);
    }
    let area: f64 = region.iter().map(|&c| mesh.cell_area(c)).sum();
    let avg = |c: &CellField| region.iter().map(|&e| c.cell_integral(mesh, e, 0)).sum::<f64>() / area;
    let mut out = vec![(0.0, avg(&tr.initial.0))];
    if tr.history.is_empty() {
        out.extend(tr.states.iter().map(|s| (s.t, avg(&s.transport.c))));
    } else {
        out.extend(tr.history.iter().map(|(t, c)| (*t, avg(c))));
    }
    Ok(out)
}

/// Per-cell `(over 1.001, under −0.001)` flags of the concentration.
pub fn overshoot_map(mesh: &Mesh, state: &DiscreteState) -> Vec<(bool, bool)> {
    let tables = Tables::new(state.transport.c.k).expect("degree in range");
    overshoot_flags(mesh, &tables, &state.transport.c)
}
