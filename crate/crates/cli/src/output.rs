//! CSV and legacy VTK writers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hdgmd::fem::{CellMap, Tables};
use hdgmd::mesh::Mesh;
use hdgmd::sim::DiscreteState;
use hdgmd::verify::{overshoot_map, AuditRecord, ErrorReport, Rate};

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn rate(r: Option<Rate>) -> String {
    match r {
        None => String::new(),
        Some(Rate::Exact) => "exact".into(),
        Some(Rate::Value(v)) => num(v),
    }
}

pub fn rates_csv(report: &ErrorReport) -> String {
    let mut s = String::from(
        "level,h,cells,tau,steps,err_p,err_u,err_U,err_c,err_q,rate_p,rate_u,rate_U,rate_c,rate_q,scaling_ratio\n",
    );
    let rates = report.rates();
    for (i, l) in report.levels.iter().enumerate() {
        let e = l.errors.as_array();
        let _ = write!(s, "{},{},{},{},{}", l.level, num(l.h), l.cells, num(l.tau), l.steps);
        for v in e {
            let _ = write!(s, ",{}", num(v));
        }
        for r in &rates {
            let _ = write!(s, ",{}", rate(i.checked_sub(1).map(|j| r[j])));
        }
        let _ = writeln!(s, ",{}", num(l.scaling_ratio));
    }
    s
}

pub fn breakthrough_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("t,avg_c\n");
    for (t, c) in curve {
        let _ = writeln!(s, "{},{}", num(*t), num(*c));
    }
    s
}

pub fn audit_csv(audit: &[AuditRecord], overshoot: &[(usize, usize)]) -> String {
    let mut s = String::from(
        "step,t,flow_identity,divergence,source_norm,normal_jump,velocity_norm,theta_defect,theta_norm,\
         lhs,rhs,slack,corrected_lhs,corrected_rhs,corrected_slack,identity_defect,skew,overshoot,undershoot\n",
    );
    for (a, (o, u)) in audit.iter().zip(overshoot) {
        let vals = [
            a.flow_identity,
            a.divergence,
            a.source_norm,
            a.normal_jump,
            a.velocity_norm,
            a.theta_defect,
            a.theta_norm,
            a.lhs,
            a.rhs,
            a.slack,
            a.corrected_lhs,
            a.corrected_rhs,
            a.corrected_slack,
            a.identity_defect,
            a.skew,
        ];
        let _ = write!(s, "{},{}", a.step, num(a.t));
        for v in vals {
            let _ = write!(s, ",{}", num(v));
        }
        let _ = writeln!(s, ",{o},{u}");
    }
    s
}

/// Legacy ASCII unstructured grid with three points per cell, so the
/// discontinuous concentration is shown without averaging.
pub fn vtk(mesh: &Mesh, state: &DiscreteState) -> String {
    let k = state.transport.c.k;
    let tables = Tables::new(k).expect("degree in range");
    let nc = mesh.num_cells();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "hdgmd step {} t {}", state.step, num(state.t));
    let _ = writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", 3 * nc);
    for c in 0..nc {
        for v in mesh.cell_vertices(c) {
            let _ = writeln!(s, "{} {} 0", num(v[0]), num(v[1]));
        }
    }
    let _ = writeln!(s, "CELLS {} {}", nc, 4 * nc);
    for c in 0..nc {
        let _ = writeln!(s, "3 {} {} {}", 3 * c, 3 * c + 1, 3 * c + 2);
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(s, "5");
    }
    let flags = overshoot_map(mesh, state);
    let _ = writeln!(s, "CELL_DATA {nc}");
    let _ = writeln!(s, "SCALARS region int 1\nLOOKUP_TABLE default");
    for t in &mesh.region_tags {
        let _ = writeln!(s, "{t}");
    }
    let _ = writeln!(s, "SCALARS overshoot int 1\nLOOKUP_TABLE default");
    for (o, _) in &flags {
        let _ = writeln!(s, "{}", u8::from(*o));
    }
    let _ = writeln!(s, "SCALARS undershoot int 1\nLOOKUP_TABLE default");
    for (_, u) in &flags {
        let _ = writeln!(s, "{}", u8::from(*u));
    }
    let _ = writeln!(s, "VECTORS velocity double");
    let (centroid_vals, _) = tables.rt.values([1.0 / 3.0, 1.0 / 3.0]);
    for c in 0..nc {
        let u = state.velocity.eval(c, &CellMap::new(mesh, c), &centroid_vals);
        let _ = writeln!(s, "{} {} 0", num(u[0]), num(u[1]));
    }
    let _ = writeln!(s, "POINT_DATA {}", 3 * nc);
    let _ = writeln!(s, "SCALARS c double 1\nLOOKUP_TABLE default");
    let vert_vals: Vec<Vec<f64>> = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        .iter()
        .map(|&x| tables.scalar.values(x))
        .collect();
    for c in 0..nc {
        for phi in &vert_vals {
            let _ = writeln!(s, "{}", num(state.transport.c.eval(c, 0, phi)));
        }
    }
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)
}

/// File name of the snapshot at time `t`.
pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:.6}.vtk")
}
