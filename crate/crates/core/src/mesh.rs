//! Conforming triangular meshes: generation, refinement, plain-text I/O and
//! face connectivity.
//!
//! Cells are stored counter-clockwise. Local edge `j` of a cell runs from
//! vertex `j` to vertex `(j + 1) % 3`. Every face carries one global unit
//! normal pointing out of its owner, the adjacent cell with the lower index.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use spade::{ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};
use thiserror::Error;

/// Material tag of Ω₁ (and of the unit square).
pub const TAG_OMEGA1: u32 = 1;
/// Material tag of the low-permeability block Ω₂ = [0,1/2]×[1/2,1].
pub const TAG_OMEGA2: u32 = 2;
/// Ω₁ cells inside the well square at the (1,1) corner.
pub const TAG_WELL_TOP_RIGHT: u32 = 3;
/// Ω₁ cells inside the well square at the (0,0) corner.
pub const TAG_WELL_BOTTOM_LEFT: u32 = 4;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read mesh file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate cell {cell}: same vertices as cell {first}")]
    DuplicateCell { cell: usize, first: usize },
    #[error("degenerate cell {cell}: signed area {area:e}")]
    DegenerateCell { cell: usize, area: f64 },
    #[error("non-conforming connectivity: {0}")]
    NonConforming(String),
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh construction failed: {0}")]
    Construction(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    /// Endpoints in the traversal order of the owner cell. The face
    /// parameter `s ∈ [0,1]` runs from `vertices[0]` to `vertices[1]`.
    pub vertices: [usize; 2],
    /// Unit normal pointing out of `owner`.
    pub normal: [f64; 2],
    pub length: f64,
    pub owner: usize,
    pub neighbor: Option<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }
}

/// A cell's view of one of its faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFace {
    pub face: usize,
    /// `+1` if the cell owns the face (outward normal equals the global
    /// normal), `-1` otherwise.
    pub sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFlag {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    pub cell_faces: Vec<[CellFace; 3]>,
    pub region_tags: Vec<u32>,
    pub h_max: f64,
    pub h_per_cell: Vec<f64>,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds connectivity and validates the invariants. Clockwise cells are
    /// an error here; use [`Mesh::from_raw_fix_orientation`] to repair them.
    pub fn from_raw(
        vertices: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        region_tags: Vec<u32>,
    ) -> Result<Self, MeshError> {
        if cells.len() != region_tags.len() {
            return Err(MeshError::InvalidParameter(format!(
                "{} cells but {} region tags",
                cells.len(),
                region_tags.len()
            )));
        }
        if cells.is_empty() {
            return Err(MeshError::InvalidParameter("mesh has no cells".into()));
        }
        let nv = vertices.len();
        let mut seen: HashMap<[usize; 3], usize> = HashMap::with_capacity(cells.len());
        for (ci, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&v| v >= nv) {
                return Err(MeshError::NonConforming(format!(
                    "cell {ci} references a vertex out of range (have {nv})"
                )));
            }
            let mut key = *cell;
            key.sort_unstable();
            if key[0] == key[1] || key[1] == key[2] {
                return Err(MeshError::DegenerateCell { cell: ci, area: 0.0 });
            }
            if let Some(&first) = seen.get(&key) {
                return Err(MeshError::DuplicateCell { cell: ci, first });
            }
            seen.insert(key, ci);
            let area = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
            let scale = (0..3)
                .map(|j| norm(sub(vertices[cell[(j + 1) % 3]], vertices[cell[j]])))
                .fold(0.0, f64::max);
            if !(area > 1e-14 * scale * scale) {
                return Err(MeshError::DegenerateCell { cell: ci, area });
            }
        }

        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 2);
        let mut faces: Vec<Face> = Vec::with_capacity(cells.len() * 2);
        let mut cell_faces = Vec::with_capacity(cells.len());
        for (ci, cell) in cells.iter().enumerate() {
            let mut local = [CellFace { face: 0, sign: 1.0 }; 3];
            for j in 0..3 {
                let a = cell[j];
                let b = cell[(j + 1) % 3];
                let key = (a.min(b), a.max(b));
                match edge_map.get(&key) {
                    None => {
                        let d = sub(vertices[b], vertices[a]);
                        let len = norm(d);
                        edge_map.insert(key, faces.len());
                        local[j] = CellFace {
                            face: faces.len(),
                            sign: 1.0,
                        };
                        faces.push(Face {
                            vertices: [a, b],
                            normal: [d[1] / len, -d[0] / len],
                            length: len,
                            owner: ci,
                            neighbor: None,
                        });
                    }
                    Some(&fi) => {
                        let face = &mut faces[fi];
                        if face.neighbor.is_some() {
                            return Err(MeshError::NonConforming(format!(
                                "edge ({a},{b}) is shared by more than two cells"
                            )));
                        }
                        if face.vertices != [b, a] {
                            return Err(MeshError::NonConforming(format!(
                                "cells {} and {ci} traverse edge ({a},{b}) in the same direction",
                                face.owner
                            )));
                        }
                        face.neighbor = Some(ci);
                        local[j] = CellFace { face: fi, sign: -1.0 };
                    }
                }
            }
            cell_faces.push(local);
        }

        let h_per_cell: Vec<f64> = cells
            .iter()
            .map(|c| {
                (0..3)
                    .map(|j| norm(sub(vertices[c[(j + 1) % 3]], vertices[c[j]])))
                    .fold(0.0, f64::max)
            })
            .collect();
        let h_max = h_per_cell.iter().copied().fold(0.0, f64::max);
        let mesh = Mesh {
            vertices,
            cells,
            faces,
            cell_faces,
            region_tags,
            h_max,
            h_per_cell,
        };
        mesh.check_hanging_nodes()?;
        Ok(mesh)
    }

    /// Like [`Mesh::from_raw`], but clockwise cells are reordered to
    /// counter-clockwise with a warning. Returns the number of fixed cells.
    pub fn from_raw_fix_orientation(
        vertices: Vec<[f64; 2]>,
        mut cells: Vec<[usize; 3]>,
        region_tags: Vec<u32>,
    ) -> Result<(Self, usize), MeshError> {
        let mut fixed = 0;
        for (ci, cell) in cells.iter_mut().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                continue;
            }
            let area = signed_area(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]);
            if area < 0.0 {
                log::warn!("cell {ci} is clockwise; reordered to counter-clockwise");
                cell.swap(1, 2);
                fixed += 1;
            }
        }
        Ok((Self::from_raw(vertices, cells, region_tags)?, fixed))
    }

    /// A vertex lying strictly inside a boundary edge means two cells meet
    /// along an edge without sharing its endpoints.
    fn check_hanging_nodes(&self) -> Result<(), MeshError> {
        let bfaces: Vec<&Face> = self.faces.iter().filter(|f| f.is_boundary()).collect();
        let mut bverts: Vec<usize> = bfaces.iter().flat_map(|f| f.vertices).collect();
        bverts.sort_unstable();
        bverts.dedup();
        for f in &bfaces {
            let a = self.vertices[f.vertices[0]];
            let b = self.vertices[f.vertices[1]];
            let d = sub(b, a);
            let len2 = d[0] * d[0] + d[1] * d[1];
            for &v in &bverts {
                if v == f.vertices[0] || v == f.vertices[1] {
                    continue;
                }
                let p = sub(self.vertices[v], a);
                let s = (p[0] * d[0] + p[1] * d[1]) / len2;
                let cross = (p[0] * d[1] - p[1] * d[0]).abs() / len2.sqrt();
                if s > 1e-12 && s < 1.0 - 1e-12 && cross < 1e-12 * len2.sqrt() {
                    return Err(MeshError::NonConforming(format!(
                        "vertex {v} hangs on edge ({},{})",
                        f.vertices[0], f.vertices[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn cell_vertices(&self, cell: usize) -> [[f64; 2]; 3] {
        let c = self.cells[cell];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        signed_area(a, b, c)
    }

    pub fn cell_centroid(&self, cell: usize) -> [f64; 2] {
        let [a, b, c] = self.cell_vertices(cell);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_area(c)).sum()
    }

    /// Outward unit normal of local edge `j` of `cell`.
    /// Longest edge.
    pub fn h_max(&self) -> f64 {
        self.faces.iter().map(|f| f.length).fold(0.0, f64::max)
    }

    pub fn outward_normal(&self, cell: usize, j: usize) -> [f64; 2] {
        let cf = self.cell_faces[cell][j];
        let n = self.faces[cf.face].normal;
        [cf.sign * n[0], cf.sign * n[1]]
    }

    pub fn boundary_flag(&self, face: usize) -> BoundaryFlag {
        if self.faces[face].is_boundary() {
            BoundaryFlag::Boundary
        } else {
            BoundaryFlag::Interior
        }
    }

    /// Point on `face` at parameter `s ∈ [0,1]`.
    pub fn face_point(&self, face: usize, s: f64) -> [f64; 2] {
        let f = &self.faces[face];
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    /// Circumradius over inradius of a cell (2 for an equilateral triangle).
    pub fn shape_ratio(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        let la = norm(sub(b, c));
        let lb = norm(sub(c, a));
        let lc = norm(sub(a, b));
        let area = signed_area(a, b, c);
        let circum = la * lb * lc / (4.0 * area);
        let inradius = 2.0 * area / (la + lb + lc);
        circum / inradius
    }

    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.num_cells())
            .map(|c| self.shape_ratio(c))
            .fold(0.0, f64::max)
    }

    pub fn cells_with_tag(&self, tag: u32) -> Vec<usize> {
        (0..self.num_cells())
            .filter(|&c| self.region_tags[c] == tag)
            .collect()
    }
}

/// Structured mesh of (0,1)² with `n` squares per side, each split along
/// its lower-left to upper-right diagonal.
pub fn generate_unit_square(n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidParameter("cells per side must be ≥ 1".into()));
    }
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = id(i, j);
            let v10 = id(i + 1, j);
            let v11 = id(i + 1, j + 1);
            let v01 = id(i, j + 1);
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    let tags = vec![TAG_OMEGA1; cells.len()];
    Mesh::from_raw(vertices, cells, tags)
}

/// Red refinement: every triangle is split into four congruent children by
/// its edge midpoints. Region tags are inherited.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    vertices.extend((0..mesh.num_faces()).map(|f| mesh.face_point(f, 0.5)));
    let mut cells = Vec::with_capacity(4 * mesh.num_cells());
    let mut tags = Vec::with_capacity(4 * mesh.num_cells());
    for (ci, c) in mesh.cells.iter().enumerate() {
        let cf = &mesh.cell_faces[ci];
        // midpoint of local edge j (v_j → v_{j+1})
        let m = [nv + cf[0].face, nv + cf[1].face, nv + cf[2].face];
        cells.push([c[0], m[0], m[2]]);
        cells.push([m[0], c[1], m[1]]);
        cells.push([m[2], m[1], c[2]]);
        cells.push([m[0], m[1], m[2]]);
        tags.extend([mesh.region_tags[ci]; 4]);
    }
    Mesh::from_raw(vertices, cells, tags).expect("red refinement of a valid mesh is valid")
}

/// Grading controls for the L-shaped mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LShapeGrading {
    /// Number of geometric rings of seed points around the re-entrant corner.
    pub corner_depth: usize,
    /// Number of geometric rings around the inner corner of each well.
    pub well_depth: usize,
    /// Radius ratio between consecutive rings (0 < ratio < 1).
    pub ratio: f64,
    /// Largest allowed cell area away from the refinement targets.
    pub max_area: f64,
    /// Smallest interior angle enforced by the quality refinement, degrees.
    pub min_angle_deg: f64,
}

impl Default for LShapeGrading {
    fn default() -> Self {
        LShapeGrading {
            corner_depth: 8,
            well_depth: 4,
            ratio: 0.6,
            max_area: 3.0e-4,
            min_angle_deg: 25.0,
        }
    }
}

fn in_lshape(p: [f64; 2]) -> bool {
    let inside_box = p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0;
    inside_box && !(p[0] >= 0.5 && p[1] <= 0.5)
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub(b, a);
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]))
        .clamp(0.0, 1.0);
    norm(sub(p, [a[0] + t * d[0], a[1] + t * d[1]]))
}

/// Graded mesh of Ω = ([0,1]×[1/2,1]) ∪ ([0,1/2]×[0,1/2]) with the
/// Ω₁/Ω₂ interface and both well squares resolved by cell edges.
pub fn generate_lshape(well_size: f64, grading: &LShapeGrading) -> Result<Mesh, MeshError> {
    if !(well_size > 0.0 && well_size <= 0.5) {
        return Err(MeshError::InvalidParameter(format!(
            "well size must be in (0, 1/2], got {well_size}"
        )));
    }
    if !(grading.ratio > 0.0 && grading.ratio < 1.0) || !(grading.max_area > 0.0) {
        return Err(MeshError::InvalidParameter(
            "grading ratio must be in (0,1) and max_area positive".into(),
        ));
    }
    let w = well_size;
    let mut boundary: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    if w < 0.5 {
        boundary.push([w, 0.0]);
    }
    boundary.extend([[0.5, 0.0], [0.5, 0.5], [1.0, 0.5]]);
    if w < 0.5 {
        boundary.push([1.0, 1.0 - w]);
    }
    boundary.push([1.0, 1.0]);
    if w < 0.5 {
        boundary.push([1.0 - w, 1.0]);
    }
    boundary.extend([[0.5, 1.0], [0.0, 1.0], [0.0, 0.5]]);
    if w < 0.5 {
        boundary.push([0.0, w]);
    }
    let mut segments: Vec<([f64; 2], [f64; 2])> = (0..boundary.len())
        .map(|i| (boundary[i], boundary[(i + 1) % boundary.len()]))
        .collect();
    // Ω₂ interface
    segments.push(([0.5, 0.5], [0.5, 1.0]));
    segments.push(([0.0, 0.5], [0.5, 0.5]));
    if w < 0.5 {
        segments.push(([w, 0.0], [w, w]));
        segments.push(([w, w], [0.0, w]));
        segments.push(([1.0, 1.0 - w], [1.0 - w, 1.0 - w]));
        segments.push(([1.0 - w, 1.0 - w], [1.0 - w, 1.0]));
    }

    let mut seeds: Vec<[f64; 2]> = Vec::new();
    let mut ring = |center: [f64; 2], r: f64, a0: f64, a1: f64| {
        let span = a1 - a0;
        let count = ((span / 0.4).ceil() as usize).max(3);
        for m in 0..count {
            let ang = a0 + (m as f64 + 0.5) * span / count as f64;
            let p = [center[0] + r * ang.cos(), center[1] + r * ang.sin()];
            if in_lshape(p) && segments.iter().all(|&(a, b)| dist_to_segment(p, a, b) > 0.25 * r) {
                seeds.push(p);
            }
        }
    };
    let tau = std::f64::consts::TAU;
    for j in 0..grading.corner_depth {
        let r = 0.25 * grading.ratio.powi(j as i32);
        ring([0.5, 0.5], r, 0.0, 0.75 * tau);
    }
    for j in 0..grading.well_depth {
        let r = 2.0 * w / grading.ratio.powi(j as i32);
        if r < 0.25 {
            ring([w, w], r, 0.0, 0.25 * tau);
            ring([1.0 - w, 1.0 - w], r, 0.5 * tau, 0.75 * tau);
        }
    }

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let construction = |e: spade::InsertionError| MeshError::Construction(format!("{e:?}"));
    for &(a, b) in &segments {
        let ha = cdt.insert(Point2::new(a[0], a[1])).map_err(construction)?;
        let hb = cdt.insert(Point2::new(b[0], b[1])).map_err(construction)?;
        cdt.add_constraint(ha, hb);
    }
    for p in &seeds {
        cdt.insert(Point2::new(p[0], p[1])).map_err(construction)?;
    }
    // Interior constraints defeat the parity-based outer-face detection, so
    // the notch is refined too and discarded below.
    let params = RefinementParameters::<f64>::new()
        .with_angle_limit(spade::AngleLimit::from_deg(grading.min_angle_deg))
        .with_max_allowed_area(grading.max_area)
        .with_max_additional_vertices(2_000_000);
    let result = cdt.refine(params);
    if !result.refinement_complete {
        return Err(MeshError::Construction(
            "quality refinement did not complete".into(),
        ));
    }

    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    let mut tags = Vec::new();
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let center = {
            let p: Vec<_> = vs.iter().map(|v| v.position()).collect();
            [(p[0].x + p[1].x + p[2].x) / 3.0, (p[0].y + p[1].y + p[2].y) / 3.0]
        };
        if !in_lshape(center) {
            continue;
        }
        let mut cell = [0usize; 3];
        let mut pts = [[0.0; 2]; 3];
        for (j, v) in vs.iter().enumerate() {
            let pos = v.position();
            pts[j] = [pos.x, pos.y];
            let idx = v.fix().index();
            let next = vertices.len();
            cell[j] = *remap.entry(idx).or_insert_with(|| {
                vertices.push([pos.x, pos.y]);
                next
            });
        }
        if signed_area(pts[0], pts[1], pts[2]) < 0.0 {
            cell.swap(1, 2);
        }
        let cx = (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0;
        let cy = (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0;
        let tag = if cx < 0.5 && cy > 0.5 {
            TAG_OMEGA2
        } else if cx > 1.0 - w && cy > 1.0 - w {
            TAG_WELL_TOP_RIGHT
        } else if cx < w && cy < w {
            TAG_WELL_BOTTOM_LEFT
        } else {
            TAG_OMEGA1
        };
        cells.push(cell);
        tags.push(tag);
    }
    Mesh::from_raw(vertices, cells, tags)
}

/// Serializes a mesh in the `hdgmesh 1` plain-text format.
pub fn write_mesh_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("hdgmesh 1\n");
    let _ = writeln!(out, "V {}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.16e} {:.16e}", v[0], v[1]);
    }
    let _ = writeln!(out, "C {}", mesh.cells.len());
    for (c, tag) in mesh.cells.iter().zip(&mesh.region_tags) {
        let _ = writeln!(out, "{} {} {} {}", c[0], c[1], c[2], tag);
    }
    out
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    std::fs::write(path, write_mesh_string(mesh)).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses the `hdgmesh 1` format. Returns the mesh and the number of cells
/// whose orientation was repaired.
pub fn parse_mesh<R: BufRead>(reader: R) -> Result<(Mesh, usize), MeshError> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let mut next = |what: &str| -> Result<(usize, String), MeshError> {
        match lines.next() {
            Some((n, Ok(s))) => Ok((n, s)),
            Some((n, Err(e))) => Err(MeshError::Parse {
                line: n,
                msg: e.to_string(),
            }),
            None => Err(MeshError::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let (n, header) = next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["hdgmesh", "1"] {
        return Err(MeshError::Parse {
            line: n,
            msg: format!("expected header `hdgmesh 1`, found `{header}`"),
        });
    }
    let count = |line: usize, s: &str, key: &str| -> Result<usize, MeshError> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.as_slice() {
            [k, v] if *k == key => v.parse().map_err(|_| MeshError::Parse {
                line,
                msg: format!("bad count `{v}`"),
            }),
            _ => Err(MeshError::Parse {
                line,
                msg: format!("expected `{key} <count>`, found `{s}`"),
            }),
        }
    };
    let (n, s) = next("vertex count")?;
    let nv = count(n, &s, "V")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, s) = next("vertex")?;
        let xs: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MeshError::Parse {
                line: n,
                msg: e.to_string(),
            })?;
        if xs.len() != 2 || !xs.iter().all(|x| x.is_finite()) {
            return Err(MeshError::Parse {
                line: n,
                msg: format!("expected two finite coordinates, found `{s}`"),
            });
        }
        vertices.push([xs[0], xs[1]]);
    }
    let (n, s) = next("cell count")?;
    let nc = count(n, &s, "C")?;
    let mut cells = Vec::with_capacity(nc);
    let mut tags = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (n, s) = next("cell")?;
        let toks: Vec<usize> = s
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| MeshError::Parse {
                line: n,
                msg: e.to_string(),
            })?;
        if toks.len() != 4 {
            return Err(MeshError::Parse {
                line: n,
                msg: format!("expected `i j k tag`, found `{s}`"),
            });
        }
        cells.push([toks[0], toks[1], toks[2]]);
        tags.push(toks[3] as u32);
    }
    Mesh::from_raw_fix_orientation(vertices, cells, tags)
}

pub fn load_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let file = std::fs::File::open(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_mesh(BufReader::new(file)).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euler_characteristic(m: &Mesh) -> i64 {
        m.vertices.len() as i64 - m.faces.len() as i64 + m.cells.len() as i64
    }

    #[test]
    fn unit_square_counts() {
        let m = generate_unit_square(1).unwrap();
        assert_eq!((m.vertices.len(), m.cells.len(), m.faces.len()), (4, 2, 5));
        assert!((m.h_max - 2f64.sqrt()).abs() < 1e-15);
        let m2 = generate_unit_square(2).unwrap();
        assert_eq!((m2.vertices.len(), m2.faces.len(), m2.cells.len()), (9, 16, 8));
        assert_eq!(euler_characteristic(&m2), 1);
        assert!((m2.h_max - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn normals_are_opposite_across_interior_faces() {
        let m = generate_unit_square(3).unwrap();
        for (fi, f) in m.faces.iter().enumerate() {
            let Some(nb) = f.neighbor else { continue };
            assert!(f.owner < nb);
            let jo = (0..3).find(|&j| m.cell_faces[f.owner][j].face == fi).unwrap();
            let jn = (0..3).find(|&j| m.cell_faces[nb][j].face == fi).unwrap();
            let a = m.outward_normal(f.owner, jo);
            let b = m.outward_normal(nb, jn);
            assert!((a[0] + b[0]).abs() < 1e-15 && (a[1] + b[1]).abs() < 1e-15);
        }
        let nb = m.faces.iter().filter(|f| f.is_boundary()).count();
        assert_eq!(nb, 12);
    }

    #[test]
    fn outward_normals_point_away_from_centroid() {
        let m = generate_unit_square(2).unwrap();
        for c in 0..m.num_cells() {
            let g = m.cell_centroid(c);
            for j in 0..3 {
                let f = m.cell_faces[c][j].face;
                let mid = m.face_point(f, 0.5);
                let n = m.outward_normal(c, j);
                assert!((mid[0] - g[0]) * n[0] + (mid[1] - g[1]) * n[1] > 0.0);
            }
        }
    }

    #[test]
    fn refinement_quadruples_and_halves() {
        let m = generate_unit_square(1).unwrap();
        let r = refine_uniform(&m);
        assert_eq!(r.num_cells(), 8);
        assert!((r.h_max - m.h_max / 2.0).abs() < 1e-15);
        assert!((r.total_area() - 1.0).abs() < 1e-14);
        assert!((r.max_shape_ratio() - m.max_shape_ratio()).abs() < 1e-12);
        // geometrically identical to the structured mesh with twice the cells
        let s = generate_unit_square(2).unwrap();
        let mut a: Vec<_> = r.vertices.iter().map(|v| (v[0].to_bits(), v[1].to_bits())).collect();
        let mut b: Vec<_> = s.vertices.iter().map(|v| (v[0].to_bits(), v[1].to_bits())).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn refined_faces_split_parent_faces() {
        let m = generate_unit_square(2).unwrap();
        let r = refine_uniform(&m);
        let nv = m.vertices.len();
        for (fi, f) in m.faces.iter().enumerate() {
            let mid = nv + fi;
            for half in [[f.vertices[0], mid], [mid, f.vertices[1]]] {
                assert!(r
                    .faces
                    .iter()
                    .any(|g| g.vertices == half || g.vertices == [half[1], half[0]]));
            }
        }
    }

    #[test]
    fn duplicate_cell_rejected() {
        let text = "hdgmesh 1\nV 4\n0 0\n1 0\n1 1\n0 1\nC 3\n0 1 2 1\n0 2 3 1\n1 2 0 1\n";
        let err = parse_mesh(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate cell"), "{err}");
    }

    #[test]
    fn clockwise_cell_is_fixed() {
        let text = "hdgmesh 1\nV 4\n0 0\n1 0\n1 1\n0 1\nC 2\n0 2 1 1\n0 2 3 1\n";
        let (m, fixed) = parse_mesh(text.as_bytes()).unwrap();
        assert_eq!(fixed, 1);
        assert!((0..2).all(|c| m.cell_area(c) > 0.0));
    }

    #[test]
    fn degenerate_and_nonconforming_rejected() {
        let text = "hdgmesh 1\nV 3\n0 0\n1 0\n2 0\nC 1\n0 1 2 1\n";
        assert!(matches!(
            parse_mesh(text.as_bytes()),
            Err(MeshError::DegenerateCell { .. })
        ));
        // hanging node at (0.5, 0.5) on the diagonal of the right triangle
        let text = "hdgmesh 1\nV 5\n0 0\n1 0\n1 1\n0 1\n0.5 0.5\nC 3\n0 1 2 1\n0 4 3 1\n4 2 3 1\n";
        assert!(matches!(
            parse_mesh(text.as_bytes()),
            Err(MeshError::NonConforming(_))
        ));
        assert!(matches!(
            parse_mesh("hdgmesh 2\n".as_bytes()),
            Err(MeshError::Parse { .. })
        ));
    }

    #[test]
    fn round_trip_text_format() {
        let m = generate_unit_square(2).unwrap();
        let (back, fixed) = parse_mesh(write_mesh_string(&m).as_bytes()).unwrap();
        assert_eq!(fixed, 0);
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.cells, m.cells);
        assert_eq!(back.region_tags, m.region_tags);
    }

    #[test]
    fn lshape_geometry_and_tags() {
        let grading = LShapeGrading {
            max_area: 5e-3,
            corner_depth: 8,
            well_depth: 2,
            ..Default::default()
        };
        let m = generate_lshape(0.01, &grading).unwrap();
        assert!((m.total_area() - 0.75).abs() < 1e-13);
        let tagged_area = |tag| -> f64 { m.cells_with_tag(tag).iter().map(|&c| m.cell_area(c)).sum() };
        assert!((tagged_area(TAG_WELL_TOP_RIGHT) - 1e-4).abs() < 1e-15);
        assert!((tagged_area(TAG_WELL_BOTTOM_LEFT) - 1e-4).abs() < 1e-15);
        assert!((tagged_area(TAG_OMEGA2) - 0.25).abs() < 1e-13, "{}", tagged_area(TAG_OMEGA2));
        for c in 0..m.num_cells() {
            let [a, b, d] = m.cell_vertices(c);
            let xs = [a[0], b[0], d[0]];
            let ys = [a[1], b[1], d[1]];
            let in_left = xs.iter().all(|&x| x <= 0.5 + 1e-14);
            if in_left {
                let above = ys.iter().all(|&y| y >= 0.5 - 1e-14);
                let below = ys.iter().all(|&y| y <= 0.5 + 1e-14);
                assert!(above || below, "cell {c} straddles y = 1/2");
            }
            let in_top = ys.iter().all(|&y| y >= 0.5 - 1e-14);
            if in_top {
                let left = xs.iter().all(|&x| x <= 0.5 + 1e-14);
                let right = xs.iter().all(|&x| x >= 0.5 - 1e-14);
                assert!(left || right, "cell {c} straddles x = 1/2");
            }
        }
        // graded: the smallest cells sit near the refinement targets
        let near_corner = (0..m.num_cells())
            .filter(|&c| norm(sub(m.cell_centroid(c), [0.5, 0.5])) < 0.02)
            .count();
        assert!(near_corner > 10);
        assert!(m.max_shape_ratio() < 6.0, "shape ratio {}", m.max_shape_ratio());
    }

    #[test]
    fn lshape_rejects_bad_well() {
        assert!(generate_lshape(0.0, &LShapeGrading::default()).is_err());
        assert!(generate_lshape(0.6, &LShapeGrading::default()).is_err());
    }
}
