//! Manufactured solutions: closed-form pressure and concentration with
//! hand-derived derivatives, and the sources that make them exact.

use std::f64::consts::PI;

use crate::flow::Viscosity;
use crate::transport::dispersion;

/// Values and derivatives of a scalar field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

pub trait ExactSolution: Send + Sync {
    fn pressure(&self, x: [f64; 2], t: f64) -> Jet;
    fn concentration(&self, x: [f64; 2], t: f64) -> Jet;
    fn concentration_dt(&self, x: [f64; 2], t: f64) -> f64;
}

/// `p = −cos(πx)cos(πy)`, `c = ½ sin(πt/2)(sin²(2πx) + cos²(2πy))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineSolution;

impl ExactSolution for CosineSolution {
    fn pressure(&self, x: [f64; 2], _t: f64) -> Jet {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let p2 = PI * PI;
        Jet {
            v: -cx * cy,
            grad: [PI * sx * cy, PI * cx * sy],
            hess: [[p2 * cx * cy, -p2 * sx * sy], [-p2 * sx * sy, p2 * cx * cy]],
        }
    }

    fn concentration(&self, x: [f64; 2], t: f64) -> Jet {
        let a = 0.5 * (0.5 * PI * t).sin();
        let s = (2.0 * PI * x[0]).sin().powi(2) + (2.0 * PI * x[1]).cos().powi(2);
        let sx = 2.0 * PI * (4.0 * PI * x[0]).sin();
        let sy = -2.0 * PI * (4.0 * PI * x[1]).sin();
        let sxx = 8.0 * PI * PI * (4.0 * PI * x[0]).cos();
        let syy = -8.0 * PI * PI * (4.0 * PI * x[1]).cos();
        Jet {
            v: a * s,
            grad: [a * sx, a * sy],
            hess: [[a * sxx, 0.0], [0.0, a * syy]],
        }
    }

    fn concentration_dt(&self, x: [f64; 2], t: f64) -> f64 {
        let s = (2.0 * PI * x[0]).sin().powi(2) + (2.0 * PI * x[1]).cos().powi(2);
        0.25 * PI * (0.5 * PI * t).cos() * s
    }
}

/// Coefficients used to synthesize the sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsParams {
    pub kappa: f64,
    pub porosity: f64,
    pub d0: f64,
    pub alpha_l: f64,
    pub alpha_t: f64,
    pub viscosity: Viscosity,
    /// Constant production rate `f_P`; `f_I = f_P + ∇·u`.
    pub production: f64,
    pub c_bar: f64,
}

/// Residual terms of the rewritten transport equation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsForcing {
    /// `∇·u − (f_I − f_P)`
    pub flow: f64,
    /// Full transport source `g`.
    pub transport: f64,
    /// `φ ∂_t c`
    pub time_derivative: f64,
    /// `−∇·(D(u)∇c)`
    pub diffusion: f64,
    /// `u·∇c + ½(∇·u)c`
    pub advection: f64,
    /// `½(f_I + f_P)c − f_I c̄`
    pub reaction: f64,
}

pub struct MmsBundle {
    pub exact: Box<dyn ExactSolution>,
    pub params: MmsParams,
}

impl std::fmt::Debug for MmsBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MmsBundle").field("params", &self.params).finish_non_exhaustive()
    }
}

struct Mobility {
    m: f64,
    dm: f64,
}

impl MmsBundle {
    pub fn cosine(params: MmsParams) -> Self {
        Self {
            exact: Box::new(CosineSolution),
            params,
        }
    }

    /// `1/μ(c)` and its derivative for `c` in `[0, 1]`.
    fn mobility(&self, c: f64) -> Mobility {
        let v = self.params.viscosity;
        let e = v.exponent;
        let (a, b) = (v.mu_s.powf(-e), v.mu_o.powf(-e));
        let l = b + c * (a - b);
        Mobility {
            m: l.powf(1.0 / e),
            dm: (a - b) / e * l.powf(1.0 / e - 1.0),
        }
    }

    pub fn pressure(&self, x: [f64; 2], t: f64) -> f64 {
        self.exact.pressure(x, t).v
    }

    pub fn concentration(&self, x: [f64; 2], t: f64) -> f64 {
        self.exact.concentration(x, t).v
    }

    /// `u = −κ μ(c)⁻¹ ∇p` and its Jacobian `J_ij = ∂_j u_i`.
    pub fn velocity_jet(&self, x: [f64; 2], t: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let p = self.exact.pressure(x, t);
        let c = self.exact.concentration(x, t);
        let mob = self.mobility(c.v);
        let k = self.params.kappa;
        let u = [-k * mob.m * p.grad[0], -k * mob.m * p.grad[1]];
        let mut j = [[0.0; 2]; 2];
        for (i, row) in j.iter_mut().enumerate() {
            for (jj, v) in row.iter_mut().enumerate() {
                *v = -k * (mob.dm * c.grad[jj] * p.grad[i] + mob.m * p.hess[i][jj]);
            }
        }
        (u, j)
    }

    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.velocity_jet(x, t).0
    }

    pub fn div_velocity(&self, x: [f64; 2], t: f64) -> f64 {
        let (_, j) = self.velocity_jet(x, t);
        j[0][0] + j[1][1]
    }

    /// `θ = −∇c`
    pub fn theta(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let g = self.exact.concentration(x, t).grad;
        [-g[0], -g[1]]
    }

    /// `q = D(u) θ`
    pub fn flux(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let th = self.theta(x, t);
        let d = dispersion(self.velocity(x, t), self.params.d0, self.params.alpha_l, self.params.alpha_t);
        [d[0][0] * th[0] + d[0][1] * th[1], d[1][0] * th[0] + d[1][1] * th[1]]
    }

    pub fn f_p(&self, _x: [f64; 2], _t: f64) -> f64 {
        self.params.production
    }

    pub fn f_i(&self, x: [f64; 2], t: f64) -> f64 {
        self.params.production + self.div_velocity(x, t)
    }

    /// `∇·(D(u)∇c)` from the chain rule.
    fn div_dispersive_flux(&self, x: [f64; 2], t: f64) -> f64 {
        let pr = &self.params;
        let c = self.exact.concentration(x, t);
        let (u, j) = self.velocity_jet(x, t);
        let lap = c.hess[0][0] + c.hess[1][1];
        let n = u[0].hypot(u[1]);
        if n < 1e-14 {
            return pr.d0 * lap;
        }
        let div_u = j[0][0] + j[1][1];
        // ∇|u|
        let gn = [
            (u[0] * j[0][0] + u[1] * j[1][0]) / n,
            (u[0] * j[0][1] + u[1] * j[1][1]) / n,
        ];
        let s = u[0] * c.grad[0] + u[1] * c.grad[1];
        // ∇(u·∇c)
        let mut gs = [0.0; 2];
        for (jj, g) in gs.iter_mut().enumerate() {
            for i in 0..2 {
                *g += j[i][jj] * c.grad[i] + u[i] * c.hess[i][jj];
            }
        }
        let gs_u = gs[0] * u[0] + gs[1] * u[1];
        let u_gn = u[0] * gn[0] + u[1] * gn[1];
        (pr.d0 + pr.alpha_t * n) * lap
            + pr.alpha_t * (gn[0] * c.grad[0] + gn[1] * c.grad[1])
            + (pr.alpha_l - pr.alpha_t) * (gs_u / n + s * div_u / n - s * u_gn / (n * n))
    }

    pub fn forcing(&self, x: [f64; 2], t: f64) -> MmsForcing {
        let pr = &self.params;
        let c = self.exact.concentration(x, t);
        let (u, j) = self.velocity_jet(x, t);
        let div_u = j[0][0] + j[1][1];
        let f_i = self.f_i(x, t);
        let f_p = self.f_p(x, t);
        let time_derivative = pr.porosity * self.exact.concentration_dt(x, t);
        let diffusion = -self.div_dispersive_flux(x, t);
        let advection = u[0] * c.grad[0] + u[1] * c.grad[1] + 0.5 * div_u * c.v;
        let reaction = 0.5 * (f_i + f_p) * c.v - f_i * pr.c_bar;
        MmsForcing {
            flow: div_u - (f_i - f_p),
            transport: time_derivative + diffusion + advection + reaction,
            time_derivative,
            diffusion,
            advection,
            reaction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MmsParams {
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

    /// Residual of the rewritten transport equation by central differences
    /// of the closed forms only.
    fn fd_residual(b: &MmsBundle, x: [f64; 2], t: f64, h: f64) -> f64 {
        let pr = b.params;
        let p = |x: [f64; 2]| -(PI * x[0]).cos() * (PI * x[1]).cos();
        let c = |x: [f64; 2], t: f64| {
            0.5 * (0.5 * PI * t).sin() * ((2.0 * PI * x[0]).sin().powi(2) + (2.0 * PI * x[1]).cos().powi(2))
        };
        let grad = |f: &dyn Fn([f64; 2]) -> f64, x: [f64; 2]| {
            [
                (f([x[0] + h, x[1]]) - f([x[0] - h, x[1]])) / (2.0 * h),
                (f([x[0], x[1] + h]) - f([x[0], x[1] - h])) / (2.0 * h),
            ]
        };
        let u = |x: [f64; 2]| {
            let gp = grad(&p, x);
            let mu = pr.viscosity.eval(c(x, t));
            [-pr.kappa * gp[0] / mu, -pr.kappa * gp[1] / mu]
        };
        let flux = |x: [f64; 2]| {
            let gc = grad(&|y| c(y, t), x);
            let d = dispersion(u(x), pr.d0, pr.alpha_l, pr.alpha_t);
            [d[0][0] * gc[0] + d[0][1] * gc[1], d[1][0] * gc[0] + d[1][1] * gc[1]]
        };
        let div = |f: &dyn Fn([f64; 2]) -> [f64; 2], x: [f64; 2]| {
            (f([x[0] + h, x[1]])[0] - f([x[0] - h, x[1]])[0]) / (2.0 * h)
                + (f([x[0], x[1] + h])[1] - f([x[0], x[1] - h])[1]) / (2.0 * h)
        };
        let ct = (c(x, t + h) - c(x, t - h)) / (2.0 * h);
        let divu = div(&u, x);
        let uv = u(x);
        let gc = grad(&|y| c(y, t), x);
        let fi = pr.production + divu;
        let fp = pr.production;
        let cv = c(x, t);
        pr.porosity * ct - div(&flux, x) + uv[0] * gc[0] + uv[1] * gc[1] + 0.5 * divu * cv + 0.5 * (fi + fp) * cv
            - fi * pr.c_bar
    }

    #[test]
    fn forcing_matches_finite_differences() {
        let b = MmsBundle::cosine(params());
        for &(x, t) in &[([0.25, 0.25], 0.1), ([0.13, 0.71], 0.05), ([0.6, 0.4], 0.1)] {
            let f = b.forcing(x, t);
            let fd = fd_residual(&b, x, t, 1e-5);
            assert!((f.transport - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{x:?}: {} vs {fd}", f.transport);
            assert!(f.flow.abs() < 1e-13);
        }
    }

    #[test]
    fn dispersion_terms_match_finite_differences() {
        // exaggerated dispersivities exercise the velocity-dependent part
        let mut p = params();
        p.alpha_l = 0.3;
        p.alpha_t = 0.05;
        let b = MmsBundle::cosine(p);
        let x = [0.3, 0.62];
        let fd = fd_residual(&b, x, 0.1, 1e-5);
        assert!((b.forcing(x, 0.1).transport - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn time_derivative_at_start() {
        let b = MmsBundle::cosine(params());
        let x = [0.3, 0.8];
        let s = (2.0 * PI * x[0]).sin().powi(2) + (2.0 * PI * x[1]).cos().powi(2);
        let f = b.forcing(x, 0.0);
        assert!((f.time_derivative - 0.2 * 0.25 * PI * s).abs() < 1e-14);
        assert_eq!(b.concentration(x, 0.0), 0.0);
    }

    struct Flat;
    impl ExactSolution for Flat {
        fn pressure(&self, x: [f64; 2], _t: f64) -> Jet {
            // harmonic
            Jet {
                v: x[0] * x[0] - x[1] * x[1],
                grad: [2.0 * x[0], -2.0 * x[1]],
                hess: [[2.0, 0.0], [0.0, -2.0]],
            }
        }
        fn concentration(&self, _x: [f64; 2], _t: f64) -> Jet {
            Jet {
                v: 0.3,
                grad: [0.0; 2],
                hess: [[0.0; 2]; 2],
            }
        }
        fn concentration_dt(&self, _x: [f64; 2], _t: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn constant_concentration_reduces_to_source_balance() {
        let mut p = params();
        p.viscosity = Viscosity::quarter_power(1.0, 1.0);
        p.c_bar = 0.8;
        let b = MmsBundle {
            exact: Box::new(Flat),
            params: p,
        };
        let x = [0.4, 0.7];
        let f = b.forcing(x, 0.2);
        let fi = b.f_i(x, 0.2);
        assert!((fi - 25.0).abs() < 1e-14);
        assert!((f.transport - (fi * 0.3 - fi * 0.8)).abs() < 1e-13);
    }

    #[test]
    fn exact_solution_has_no_boundary_flux() {
        let b = MmsBundle::cosine(params());
        for i in 0..=10 {
            let s = i as f64 / 10.0;
            for (x, n) in [([0.0, s], [-1.0, 0.0]), ([1.0, s], [1.0, 0.0]), ([s, 0.0], [0.0, -1.0]), ([s, 1.0], [0.0, 1.0])] {
                let u = b.velocity(x, 0.1);
                let th = b.theta(x, 0.1);
                assert!((u[0] * n[0] + u[1] * n[1]).abs() < 1e-14);
                assert!((th[0] * n[0] + th[1] * n[1]).abs() < 1e-13);
            }
        }
    }
}
