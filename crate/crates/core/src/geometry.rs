//! Parametric cell geometry and structured hexahedral meshes.
//!
//! Every domain in this crate is a union of axis-aligned boxes, so all meshes
//! are tensor-product grids with an element mask. The grids are graded towards
//! the junction points `P± = (0, 0, ±1/2)` so that the thin ligament of width
//! `2·t·h` is resolved by `2·ligament_divisions` elements while the bulk of the
//! cell keeps the requested body resolution.
//!
//! Four builders are provided:
//!
//! * [`build_limit_cell`]: the isolated cell `ϖ_0` on a uniform grid.
//! * [`build_body_template`]: `ϖ_0` carrying exactly the grid lines of the
//!   body part of a periodicity cell, pulled back by the scale map.
//! * [`build_periodicity_cell`]: `ϖ_h`, the scaled body plus the ligament stubs
//!   (or the aperture patches when `a = 0`), with periodic node pairing.
//! * [`build_truncated_omega`]: the junction domain `Ω` in stretched
//!   coordinates, truncated by a box of half-width `rho`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POLE_TOP: [f64; 3] = [0.0, 0.0, 0.5];
pub const POLE_BOTTOM: [f64; 3] = [0.0, 0.0, -0.5];

const COORD_TOL: f64 = 1e-12;

/// How neighbouring cells are joined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Junction {
    /// `a = 0`: cells touch and communicate through an aperture of size `h`.
    Aperture,
    /// `a = 1`: the body is shrunk by `1 - h` and the gap is bridged by a
    /// ligament of length `h`.
    Ligament,
}

impl Junction {
    pub fn a(self) -> f64 {
        match self {
            Junction::Aperture => 0.0,
            Junction::Ligament => 1.0,
        }
    }

    pub fn from_index(a: u8) -> Result<Self> {
        match a {
            0 => Ok(Junction::Aperture),
            1 => Ok(Junction::Ligament),
            _ => Err(Error::InvalidParameter(format!(
                "junction mode must be 0 or 1, got {a}"
            ))),
        }
    }
}

/// Cell geometry: the box `(-L1, L1) × (-L2, L2) × (-1/2, 1/2)` and the square
/// ligament cross-section `θ = (-t, t)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub half_x: f64,
    pub half_y: f64,
    pub ligament_half_width: f64,
    pub junction: Junction,
}

impl Default for CellParams {
    fn default() -> Self {
        Self {
            half_x: 0.45,
            half_y: 0.5,
            ligament_half_width: 0.1,
            junction: Junction::Ligament,
        }
    }
}

impl CellParams {
    pub fn new(half_x: f64, half_y: f64, ligament_half_width: f64, junction: Junction) -> Result<Self> {
        let p = Self {
            half_x,
            half_y,
            ligament_half_width,
            junction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_x > 0.0 && self.half_y > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box half-widths must be positive, got ({}, {})",
                self.half_x, self.half_y
            )));
        }
        let t = self.ligament_half_width;
        if !(t > 0.0 && t < self.half_x.min(self.half_y)) {
            return Err(Error::InvalidParameter(format!(
                "ligament half-width {t} must lie in (0, min(L1, L2))"
            )));
        }
        Ok(())
    }

    pub fn a(&self) -> f64 {
        self.junction.a()
    }

    /// `|ϖ_0|`
    pub fn volume(&self) -> f64 {
        4.0 * self.half_x * self.half_y
    }

    /// Second moments `J_k = ∫ x_k² dx` over `ϖ_0`.
    pub fn second_moments(&self) -> [f64; 3] {
        let v = self.volume();
        [
            v * self.half_x * self.half_x / 3.0,
            v * self.half_y * self.half_y / 3.0,
            v * 0.25 / 3.0,
        ]
    }

    fn check_h(&self, h: f64) -> Result<()> {
        if !(h > 0.0 && h <= 0.1 + 1e-15) {
            return Err(Error::InvalidParameter(format!(
                "h = {h} outside (0, 0.1]"
            )));
        }
        if self.ligament_half_width * h >= self.half_x.min(self.half_y) * (1.0 - self.a() * h) {
            return Err(Error::InvalidParameter(
                "ligament does not fit inside the scaled cell face".into(),
            ));
        }
        Ok(())
    }
}

/// The homothety `x ↦ a_h x` with `a_h = (1 - a h)^{-1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleMap {
    factor: f64,
}

pub fn scale_map(junction: Junction, h: f64) -> Result<ScaleMap> {
    let ah = junction.a() * h;
    if ah >= 1.0 {
        return Err(Error::InvalidParameter(format!("a*h = {ah} must be < 1")));
    }
    Ok(ScaleMap {
        factor: 1.0 / (1.0 - ah),
    })
}

impl ScaleMap {
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        x.map(|c| c * self.factor)
    }

    pub fn invert(&self, x: [f64; 3]) -> [f64; 3] {
        x.map(|c| c / self.factor)
    }

    /// Eigenvalues of the scaled body are `a_h² λ`.
    pub fn eigenvalue_factor(&self) -> f64 {
        self.factor * self.factor
    }
}

/// Discretization controls shared by all builders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    /// Largest element edge in the body, in cell units.
    pub resolution: f64,
    /// Elements across the ligament half-width `t`.
    pub ligament_divisions: usize,
    /// Geometric growth ratio of the grading away from the junction.
    pub growth: f64,
    /// Axial/lateral element aspect ratio inside the ligament.
    pub ligament_aspect: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            ligament_divisions: 2,
            growth: 1.5,
            ligament_aspect: 2.0,
        }
    }
}

impl MeshSpec {
    fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidParameter("resolution must be positive".into()));
        }
        if self.ligament_divisions == 0 {
            return Err(Error::Mesh(
                "resolution too coarse to resolve the ligament: fewer than 2 elements across θ"
                    .into(),
            ));
        }
        if !(self.growth >= 1.0 && self.growth <= 3.0) {
            return Err(Error::InvalidParameter(format!(
                "grading ratio {} outside [1, 3]",
                self.growth
            )));
        }
        if !(self.ligament_aspect > 0.0 && self.ligament_aspect <= 4.0) {
            return Err(Error::InvalidParameter(format!(
                "ligament aspect {} outside (0, 4]",
                self.ligament_aspect
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetTag {
    TractionFree,
    QuasiTop,
    QuasiBottom,
    FarField,
}

impl FacetTag {
    pub fn code(self) -> i32 {
        match self {
            FacetTag::TractionFree => 1,
            FacetTag::QuasiTop => 2,
            FacetTag::QuasiBottom => 3,
            FacetTag::FarField => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub nodes: [usize; 4],
    pub element: usize,
    pub tag: FacetTag,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainKind {
    LimitCell,
    BodyTemplate { h: f64 },
    ScaledBody { h: f64 },
    PeriodicityCell,
    TruncatedJunction { rho: f64 },
}

/// The tensor-product grid a mesh was cut from, kept for point location.
#[derive(Clone, Debug)]
pub struct TensorGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Element id of grid cell `(i, j, k)`, if the cell belongs to the mesh.
    cell_element: Vec<Option<u32>>,
}

impl TensorGrid {
    fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * (self.y.len() - 1) + j) * (self.x.len() - 1) + i
    }

    /// Grid cell containing `p` together with local coordinates in `[0,1]³`.
    pub fn locate(&self, p: [f64; 3]) -> Option<(usize, [f64; 3])> {
        let (i, s) = locate_1d(&self.x, p[0])?;
        let (j, t) = locate_1d(&self.y, p[1])?;
        let (k, u) = locate_1d(&self.z, p[2])?;
        let e = self.cell_element[self.cell_index(i, j, k)]?;
        Some((e as usize, [s, t, u]))
    }

    pub fn element_at(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        self.cell_element[self.cell_index(i, j, k)].map(|e| e as usize)
    }
}

fn locate_1d(grid: &[f64], v: f64) -> Option<(usize, f64)> {
    let n = grid.len();
    let lo = grid[0];
    let hi = grid[n - 1];
    let tol = COORD_TOL * (hi - lo).abs().max(1.0);
    if v < lo - tol || v > hi + tol {
        return None;
    }
    let idx = grid.partition_point(|&g| g <= v);
    let i = idx.saturating_sub(1).min(n - 2);
    let s = ((v - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0);
    Some((i, s))
}

/// Tagged hexahedral mesh of one of the parametric domains.
#[derive(Clone, Debug)]
pub struct CellMesh {
    pub nodes: Vec<[f64; 3]>,
    /// Eight-node connectivity in VTK order.
    pub hexes: Vec<[usize; 8]>,
    pub facets: Vec<Facet>,
    /// `(QuasiTop node, QuasiBottom node)` pairs related by `z ↦ z - 1`.
    pub periodic_pairs: Vec<(usize, usize)>,
    /// Geometric parameter (0 for the limit cell and for `Ω`).
    pub h: f64,
    pub resolution: f64,
    pub kind: DomainKind,
    pub grid: TensorGrid,
}

/// Corners of the reference hexahedron in VTK order.
pub const HEX_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Local faces with outward orientation.
pub const HEX_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

impl CellMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn element_nodes(&self, e: usize) -> [[f64; 3]; 8] {
        self.hexes[e].map(|n| self.nodes[n])
    }

    /// Centroid of an (axis-aligned) element.
    pub fn element_center(&self, e: usize) -> [f64; 3] {
        let pts = self.element_nodes(e);
        let mut c = [0.0; 3];
        for p in pts {
            for d in 0..3 {
                c[d] += p[d] / 8.0;
            }
        }
        c
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        let p = self.element_nodes(e);
        (p[6][0] - p[0][0]) * (p[6][1] - p[0][1]) * (p[6][2] - p[0][2])
    }

    pub fn volume(&self) -> f64 {
        (0..self.hexes.len()).map(|e| self.element_volume(e)).sum()
    }

    pub fn facet_area(&self, f: &Facet) -> f64 {
        let p = f.nodes.map(|n| self.nodes[n]);
        let a = sub(p[1], p[0]);
        let b = sub(p[3], p[0]);
        norm(cross(a, b))
    }

    pub fn tagged_area(&self, tag: FacetTag) -> f64 {
        self.facets
            .iter()
            .filter(|f| f.tag == tag)
            .map(|f| self.facet_area(f))
            .sum()
    }

    pub fn count_facets(&self, tag: FacetTag) -> usize {
        self.facets.iter().filter(|f| f.tag == tag).count()
    }

    /// Index of the node at `p`, if any.
    pub fn find_node(&self, p: [f64; 3]) -> Option<usize> {
        let ix = find_exact(&self.grid.x, p[0])?;
        let iy = find_exact(&self.grid.y, p[1])?;
        let iz = find_exact(&self.grid.z, p[2])?;
        // any element touching the grid point shares the node
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let (Some(i), Some(j), Some(k)) = (
                        (ix + di).checked_sub(1),
                        (iy + dj).checked_sub(1),
                        (iz + dk).checked_sub(1),
                    ) else {
                        continue;
                    };
                    if i + 1 >= self.grid.x.len() || j + 1 >= self.grid.y.len() || k + 1 >= self.grid.z.len() {
                        continue;
                    }
                    if let Some(e) = self.grid.element_at(i, j, k) {
                        let corner = [1 - di, 1 - dj, 1 - dk];
                        let local = HEX_CORNERS.iter().position(|c| *c == corner).unwrap();
                        return Some(self.hexes[e][local]);
                    }
                }
            }
        }
        None
    }

    /// Nodes lying on facets with the given tag, sorted.
    pub fn tagged_nodes(&self, tag: FacetTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .facets
            .iter()
            .filter(|f| f.tag == tag)
            .flat_map(|f| f.nodes)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Largest edge-length ratio over elements whose centroid satisfies `pred`.
    pub fn max_aspect_ratio(&self, pred: impl Fn([f64; 3]) -> bool) -> f64 {
        let mut worst: f64 = 1.0;
        for e in 0..self.hexes.len() {
            if !pred(self.element_center(e)) {
                continue;
            }
            let p = self.element_nodes(e);
            let d = [p[6][0] - p[0][0], p[6][1] - p[0][1], p[6][2] - p[0][2]];
            let mx = d.iter().cloned().fold(0.0, f64::max);
            let mn = d.iter().cloned().fold(f64::INFINITY, f64::min);
            worst = worst.max(mx / mn);
        }
        worst
    }

    /// Trilinear interpolation of a nodal field at `p`.
    pub fn interpolate<T>(&self, field: &[T], dofs_per_node: usize, p: [f64; 3]) -> Option<Vec<T>>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let (e, s) = self.grid.locate(p)?;
        let mut out = vec![T::default(); dofs_per_node];
        for (local, c) in HEX_CORNERS.iter().enumerate() {
            let w = (if c[0] == 1 { s[0] } else { 1.0 - s[0] })
                * (if c[1] == 1 { s[1] } else { 1.0 - s[1] })
                * (if c[2] == 1 { s[2] } else { 1.0 - s[2] });
            if w == 0.0 {
                continue;
            }
            let n = self.hexes[e][local];
            for d in 0..dofs_per_node {
                out[d] = out[d] + field[n * dofs_per_node + d] * w;
            }
        }
        Some(out)
    }
}

fn find_exact(grid: &[f64], v: f64) -> Option<usize> {
    let i = grid.partition_point(|&g| g < v - COORD_TOL);
    (i < grid.len() && (grid[i] - v).abs() <= COORD_TOL).then_some(i)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

// ---------------------------------------------------------------------------
// 1-D grids

/// Points `0 = p_0 < … < p_n = extent`: uniform with `fine_count` intervals on
/// `[0, fine_extent]`, then geometrically growing spacing capped at
/// `max_spacing`.
fn graded_half_line(
    fine_extent: f64,
    fine_count: usize,
    first_graded: f64,
    growth: f64,
    max_spacing: f64,
    extent: f64,
) -> Vec<f64> {
    let mut pts = vec![0.0];
    if fine_count > 0 && fine_extent > 0.0 {
        for i in 1..=fine_count {
            pts.push(fine_extent * i as f64 / fine_count as f64);
        }
    }
    let mut s = first_graded.min(max_spacing);
    loop {
        let last = *pts.last().unwrap();
        let remaining = extent - last;
        if remaining <= COORD_TOL {
            break;
        }
        if s >= max_spacing {
            let n = (remaining / max_spacing - 1e-9).ceil().max(1.0) as usize;
            for i in 1..=n {
                pts.push(last + remaining * i as f64 / n as f64);
            }
            break;
        }
        if remaining <= s * 1.5 {
            if remaining > max_spacing {
                let n = (remaining / max_spacing - 1e-9).ceil() as usize;
                for i in 1..=n {
                    pts.push(last + remaining * i as f64 / n as f64);
                }
            } else if remaining < 0.5 * s && pts.len() > 1 {
                *pts.last_mut().unwrap() = extent;
            } else {
                pts.push(extent);
            }
            break;
        }
        pts.push(last + s);
        s = (s * growth).min(max_spacing);
    }
    let n = pts.len();
    pts[n - 1] = extent;
    pts
}

fn mirrored(half: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = half.iter().rev().map(|x| -x).collect();
    v.extend_from_slice(&half[1..]);
    v
}

fn uniform_symmetric(half_extent: f64, resolution: f64) -> Vec<f64> {
    let mut n = (2.0 * half_extent / resolution - 1e-9).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    (0..=n)
        .map(|i| -half_extent + 2.0 * half_extent * i as f64 / n as f64)
        .collect()
}

/// Grid lines of the body part of a periodicity cell in physical coordinates.
struct BodyGrids {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    /// Fine lateral spacing at the junction.
    fine: f64,
}

fn body_grids(params: &CellParams, h: f64, spec: &MeshSpec) -> BodyGrids {
    let shrink = 1.0 - params.a() * h;
    let th = params.ligament_half_width * h;
    let div = spec.ligament_divisions;
    let fine = th / div as f64;
    let lateral = |half: f64| {
        mirrored(&graded_half_line(
            th,
            div,
            fine * spec.growth,
            spec.growth,
            spec.resolution,
            half * shrink,
        ))
    };
    let half_height = 0.5 * shrink;
    let from_face = graded_half_line(0.0, 0, fine, spec.growth, spec.resolution, half_height);
    let top: Vec<f64> = from_face.iter().map(|d| half_height - d).collect();
    let mut z: Vec<f64> = top.iter().rev().copied().collect();
    // top is decreasing from the face to 0; mirror for the bottom half
    let mut bottom: Vec<f64> = top.iter().map(|v| -v).collect();
    bottom.retain(|v| *v < -COORD_TOL);
    z.retain(|v| *v >= -COORD_TOL);
    let mut all = bottom;
    all.extend(z);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    BodyGrids {
        x: lateral(params.half_x),
        y: lateral(params.half_y),
        z: all,
        fine,
    }
}

// ---------------------------------------------------------------------------
// Tensor-grid mesh assembly

struct TensorMeshBuilder<'a> {
    x: &'a [f64],
    y: &'a [f64],
    z: &'a [f64],
}

impl<'a> TensorMeshBuilder<'a> {
    /// Builds the masked mesh. `keep(center)` selects grid cells; `split_k`
    /// duplicates the nodes of the plane `z = z[split_k]` wherever `glued(x, y)`
    /// is false, so that the two sides only communicate through the glued part.
    fn build(
        &self,
        keep: impl Fn([f64; 3]) -> bool,
        split: Option<(usize, &dyn Fn(f64, f64) -> bool)>,
    ) -> (Vec<[f64; 3]>, Vec<[usize; 8]>, TensorGrid) {
        let (nx, ny, nz) = (self.x.len(), self.y.len(), self.z.len());
        let mut cell_element = vec![None; (nx - 1) * (ny - 1) * (nz - 1)];
        let mut node_of: HashMap<(usize, usize, usize, u8), usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut hexes = Vec::new();
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let c = [
                        0.5 * (self.x[i] + self.x[i + 1]),
                        0.5 * (self.y[j] + self.y[j + 1]),
                        0.5 * (self.z[k] + self.z[k + 1]),
                    ];
                    if !keep(c) {
                        continue;
                    }
                    let mut hex = [0usize; 8];
                    for (local, corner) in HEX_CORNERS.iter().enumerate() {
                        let (gi, gj, gk) = (i + corner[0], j + corner[1], k + corner[2]);
                        let side = match split {
                            Some((sk, glued)) if gk == sk && !glued(self.x[gi], self.y[gj]) => {
                                // lower element (k == sk - 1) vs upper element (k == sk)
                                if k < sk {
                                    1
                                } else {
                                    2
                                }
                            }
                            _ => 0,
                        };
                        let id = *node_of.entry((gi, gj, gk, side)).or_insert_with(|| {
                            nodes.push([self.x[gi], self.y[gj], self.z[gk]]);
                            nodes.len() - 1
                        });
                        hex[local] = id;
                    }
                    let ci = (k * (ny - 1) + j) * (nx - 1) + i;
                    cell_element[ci] = Some(hexes.len() as u32);
                    hexes.push(hex);
                }
            }
        }
        let grid = TensorGrid {
            x: self.x.to_vec(),
            y: self.y.to_vec(),
            z: self.z.to_vec(),
            cell_element,
        };
        (nodes, hexes, grid)
    }
}

/// Boundary facets (faces owned by exactly one element), tagged by `tag`.
fn boundary_facets(
    nodes: &[[f64; 3]],
    hexes: &[[usize; 8]],
    tag: impl Fn([f64; 3], [f64; 3]) -> FacetTag,
) -> Vec<Facet> {
    let mut seen: HashMap<[usize; 4], (usize, usize, u32)> = HashMap::new();
    for (e, hex) in hexes.iter().enumerate() {
        for (f, face) in HEX_FACES.iter().enumerate() {
            let mut key = face.map(|l| hex[l]);
            key.sort_unstable();
            seen.entry(key).and_modify(|v| v.2 += 1).or_insert((e, f, 1));
        }
    }
    let mut owned: Vec<(usize, usize)> = seen
        .values()
        .filter(|v| v.2 == 1)
        .map(|v| (v.0, v.1))
        .collect();
    owned.sort_unstable();
    owned
        .into_iter()
        .map(|(e, f)| {
            let ids = HEX_FACES[f].map(|l| hexes[e][l]);
            let p = ids.map(|n| nodes[n]);
            let mut c = [0.0; 3];
            for q in p {
                for d in 0..3 {
                    c[d] += 0.25 * q[d];
                }
            }
            let nrm = cross(sub(p[1], p[0]), sub(p[3], p[0]));
            let len = norm(nrm);
            let nrm = nrm.map(|v| v / len);
            Facet {
                nodes: ids,
                element: e,
                tag: tag(c, nrm),
            }
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

// ---------------------------------------------------------------------------
// Builders

/// Uniform mesh of `ϖ_0`; `P±` are nodes and all facets are traction free.
pub fn build_limit_cell(params: &CellParams, resolution: f64) -> Result<CellMesh> {
    params.validate()?;
    let shortest = 2.0 * params.half_x.min(params.half_y).min(0.5);
    if !(resolution > 0.0) || resolution > shortest / 4.0 + 1e-12 {
        return Err(Error::Mesh(format!(
            "resolution {resolution} too coarse: need at least 4 layers per axis (≤ {})",
            shortest / 4.0
        )));
    }
    let x = uniform_symmetric(params.half_x, resolution);
    let y = uniform_symmetric(params.half_y, resolution);
    let z = uniform_symmetric(0.5, resolution);
    Ok(box_mesh(x, y, z, resolution, DomainKind::LimitCell, 0.0))
}

/// `ϖ_0` meshed with the grid lines of the body part of the periodicity cell
/// at `h`, mapped back by `a_h`. Solving on this mesh gives the limit
/// eigenpairs that are discretely consistent with [`build_periodicity_cell`].
pub fn build_body_template(params: &CellParams, h: f64, spec: &MeshSpec) -> Result<CellMesh> {
    params.validate()?;
    params.check_h(h)?;
    spec.validate()?;
    let map = scale_map(params.junction, h)?;
    let g = body_grids(params, h, spec);
    let f = map.factor();
    let scale = |v: Vec<f64>| v.into_iter().map(|c| c * f).collect::<Vec<_>>();
    let mut x = scale(g.x);
    let mut y = scale(g.y);
    let mut z = scale(g.z);
    // pin the outer faces exactly
    snap_ends(&mut x, params.half_x);
    snap_ends(&mut y, params.half_y);
    snap_ends(&mut z, 0.5);
    Ok(box_mesh(x, y, z, spec.resolution, DomainKind::BodyTemplate { h }, 0.0))
}

fn snap_ends(v: &mut [f64], half: f64) {
    let n = v.len();
    v[0] = -half;
    v[n - 1] = half;
}

/// `ϖ(h) = a_h^{-1} ϖ_0` obtained by scaling an existing mesh of `ϖ_0`.
pub fn build_scaled_body(limit: &CellMesh, map: &ScaleMap, h: f64) -> CellMesh {
    let mut m = limit.clone();
    for p in m.nodes.iter_mut() {
        *p = map.invert(*p);
    }
    let inv = |v: &mut Vec<f64>| v.iter_mut().for_each(|c| *c /= map.factor());
    inv(&mut m.grid.x);
    inv(&mut m.grid.y);
    inv(&mut m.grid.z);
    m.kind = DomainKind::ScaledBody { h };
    m.h = h;
    m
}

fn box_mesh(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, resolution: f64, kind: DomainKind, h: f64) -> CellMesh {
    let b = TensorMeshBuilder { x: &x, y: &y, z: &z };
    let (nodes, hexes, grid) = b.build(|_| true, None);
    let facets = boundary_facets(&nodes, &hexes, |_, _| FacetTag::TractionFree);
    CellMesh {
        nodes,
        hexes,
        facets,
        periodic_pairs: Vec::new(),
        h,
        resolution,
        kind,
        grid,
    }
}

/// Mesh of the periodicity cell `ϖ_h`.
pub fn build_periodicity_cell(params: &CellParams, h: f64, spec: &MeshSpec) -> Result<CellMesh> {
    params.validate()?;
    params.check_h(h)?;
    spec.validate()?;
    let g = body_grids(params, h, spec);
    let th = params.ligament_half_width * h;
    let z_face = 0.5 * (1.0 - params.a() * h);
    let mut z = g.z.clone();
    if params.junction == Junction::Ligament {
        let stub = 0.5 - z_face;
        let n = (stub / (spec.ligament_aspect * g.fine)).round().max(1.0) as usize;
        for i in 1..=n {
            let d = stub * i as f64 / n as f64;
            z.push(z_face + d);
            z.push(-z_face - d);
        }
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let last = z.len() - 1;
        z[0] = -0.5;
        z[last] = 0.5;
    }
    let inside_patch = |x: f64, y: f64| x.abs() < th + COORD_TOL && y.abs() < th + COORD_TOL;
    let builder = TensorMeshBuilder {
        x: &g.x,
        y: &g.y,
        z: &z,
    };
    let (nodes, hexes, grid) = builder.build(
        |c| c[2].abs() < z_face || inside_patch(c[0], c[1]),
        None,
    );
    let facets = boundary_facets(&nodes, &hexes, |c, n| {
        if close(c[2], 0.5) && n[2] > 0.5 && inside_patch(c[0], c[1]) {
            FacetTag::QuasiTop
        } else if close(c[2], -0.5) && n[2] < -0.5 && inside_patch(c[0], c[1]) {
            FacetTag::QuasiBottom
        } else {
            FacetTag::TractionFree
        }
    });
    let mut mesh = CellMesh {
        nodes,
        hexes,
        facets,
        periodic_pairs: Vec::new(),
        h,
        resolution: spec.resolution,
        kind: DomainKind::PeriodicityCell,
        grid,
    };
    mesh.periodic_pairs = pair_quasi_nodes(&mesh)?;
    Ok(mesh)
}

fn pair_quasi_nodes(mesh: &CellMesh) -> Result<Vec<(usize, usize)>> {
    let top = mesh.tagged_nodes(FacetTag::QuasiTop);
    let bottom = mesh.tagged_nodes(FacetTag::QuasiBottom);
    if top.len() != bottom.len() || top.is_empty() {
        return Err(Error::Mesh(format!(
            "quasi-periodic faces do not match: {} top vs {} bottom nodes",
            top.len(),
            bottom.len()
        )));
    }
    let key = |p: [f64; 3]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let by_xy: HashMap<(i64, i64), usize> = bottom.iter().map(|&n| (key(mesh.nodes[n]), n)).collect();
    let mut pairs = Vec::with_capacity(top.len());
    for &t in &top {
        let p = mesh.nodes[t];
        let b = *by_xy.get(&key(p)).ok_or_else(|| {
            Error::Mesh(format!("QuasiTop node {t} at {p:?} has no partner"))
        })?;
        let q = mesh.nodes[b];
        if (p[0] - q[0]).abs() > COORD_TOL || (p[1] - q[1]).abs() > COORD_TOL || (p[2] - q[2] - 1.0).abs() > COORD_TOL {
            return Err(Error::Mesh("non-conforming periodic faces".into()));
        }
        pairs.push((t, b));
    }
    Ok(pairs)
}

/// Truncated junction domain `Ω ∩ {|ξ1|, |ξ2| < ρ, |ξ3| < ρ + a/2}` in
/// stretched coordinates, graded like the periodicity cells near `P±`.
pub fn build_truncated_omega(params: &CellParams, rho: f64, spec: &MeshSpec) -> Result<CellMesh> {
    params.validate()?;
    spec.validate()?;
    if !(rho >= 4.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation radius {rho} < 4 does not contain the boundary layer"
        )));
    }
    let t = params.ligament_half_width;
    let a = params.a();
    let div = spec.ligament_divisions;
    let fine = t / div as f64;
    let cap = rho / 4.0;
    let lateral = mirrored(&graded_half_line(t, div, fine * spec.growth, spec.growth, cap, rho));
    let outer = graded_half_line(0.0, 0, fine, spec.growth, cap, rho);
    let mut z = Vec::new();
    let half_lig = 0.5 * a;
    if a > 0.0 {
        let n = (half_lig / (spec.ligament_aspect * fine)).round().max(1.0) as usize;
        for i in 0..n {
            let d = half_lig * i as f64 / n as f64;
            z.push(d);
            if i > 0 {
                z.push(-d);
            }
        }
    } else {
        z.push(0.0);
    }
    for d in &outer[1..] {
        z.push(half_lig + d);
        z.push(-half_lig - d);
    }
    if a > 0.0 {
        z.push(half_lig);
        z.push(-half_lig);
    }
    z.sort_by(|p, q| p.partial_cmp(q).unwrap());
    z.dedup_by(|p, q| (*p - *q).abs() < COORD_TOL);
    let top = rho + half_lig;
    let in_theta = |x: f64, y: f64| x.abs() < t + COORD_TOL && y.abs() < t + COORD_TOL;
    let builder = TensorMeshBuilder {
        x: &lateral,
        y: &lateral,
        z: &z,
    };
    let split_k = z.iter().position(|v| v.abs() < COORD_TOL).unwrap();
    let glued = |x: f64, y: f64| in_theta(x, y);
    let (nodes, hexes, grid) = if a > 0.0 {
        builder.build(|c| c[2].abs() > half_lig || in_theta(c[0], c[1]), None)
    } else {
        builder.build(|_| true, Some((split_k, &glued)))
    };
    let facets = boundary_facets(&nodes, &hexes, |c, _| {
        if close(c[0].abs(), rho) || close(c[1].abs(), rho) || close(c[2].abs(), top) {
            FacetTag::FarField
        } else {
            FacetTag::TractionFree
        }
    });
    Ok(CellMesh {
        nodes,
        hexes,
        facets,
        periodic_pairs: Vec::new(),
        h: 0.0,
        resolution: cap,
        kind: DomainKind::TruncatedJunction { rho },
        grid,
    })
}

impl CellMesh {
    pub fn rho(&self) -> Option<f64> {
        match self.kind {
            DomainKind::TruncatedJunction { rho } => Some(rho),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> CellParams {
        CellParams::new(0.5, 0.5, 0.1, Junction::Ligament).unwrap()
    }

    #[test]
    fn limit_cell_grid_and_poles() {
        let m = build_limit_cell(&square(), 0.25).unwrap();
        assert_eq!(m.hexes.len(), 64);
        assert_eq!(m.n_nodes(), 125);
        assert!(m.find_node(POLE_TOP).is_some());
        assert!(m.find_node(POLE_BOTTOM).is_some());
        assert_relative_eq!(m.volume(), 1.0, max_relative = 1e-12);
        assert!(m.facets.iter().all(|f| f.tag == FacetTag::TractionFree));
        assert_eq!(m.facets.len(), 6 * 16);
    }

    #[test]
    fn limit_cell_rejects_coarse_resolution() {
        assert!(build_limit_cell(&square(), 0.3).is_err());
    }

    #[test]
    fn limit_cell_volume_matches_box() {
        let p = CellParams::new(0.45, 0.5, 0.1, Junction::Ligament).unwrap();
        let m = build_limit_cell(&p, 0.1).unwrap();
        assert_relative_eq!(m.volume(), p.volume(), max_relative = 1e-10);
    }

    #[test]
    fn rectangular_cell_breaks_swap_symmetry() {
        let p = CellParams::new(0.45, 0.5, 0.1, Junction::Ligament).unwrap();
        let m = build_limit_cell(&p, 0.125).unwrap();
        let key = |p: [f64; 3]| [(p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64, (p[2] * 1e9).round() as i64];
        let mut a: Vec<_> = m.nodes.iter().map(|p| key(*p)).collect();
        let mut b: Vec<_> = m.nodes.iter().map(|p| key([p[1], p[0], p[2]])).collect();
        a.sort();
        b.sort();
        assert_ne!(a, b);
    }

    #[test]
    fn scale_map_values() {
        let m = scale_map(Junction::Ligament, 0.1).unwrap();
        assert_relative_eq!(m.factor(), 1.0 / 0.9, max_relative = 1e-15);
        assert_eq!(scale_map(Junction::Aperture, 0.1).unwrap().factor(), 1.0);
        let m = scale_map(Junction::Ligament, 0.05).unwrap();
        assert_relative_eq!(m.eigenvalue_factor(), (1.0f64 / 0.95).powi(2), max_relative = 1e-15);
        let x = [0.3, -0.2, 0.1];
        let y = m.invert(m.apply(x));
        for d in 0..3 {
            assert_relative_eq!(x[d], y[d], max_relative = 1e-15);
        }
    }

    #[test]
    fn ligament_cell_geometry() {
        let p = square();
        let spec = MeshSpec::default();
        let m = build_periodicity_cell(&p, 0.1, &spec).unwrap();
        // body shrunk to 0.9, stubs of height h/2 close the period
        let zs: Vec<f64> = m.nodes.iter().map(|n| n[2]).collect();
        let zmax = zs.iter().cloned().fold(f64::MIN, f64::max);
        assert_relative_eq!(zmax, 0.5, max_relative = 1e-14);
        let body_top = m
            .nodes
            .iter()
            .filter(|n| n[0].abs() > 0.02)
            .map(|n| n[2])
            .fold(f64::MIN, f64::max);
        assert_relative_eq!(body_top, 0.45, max_relative = 1e-12);
        let th = 0.1 * 0.1;
        let expected = 0.9f64.powi(3) + (2.0 * th) * (2.0 * th) * 0.1;
        assert_relative_eq!(m.volume(), expected, max_relative = 1e-10);
        assert_eq!(m.count_facets(FacetTag::QuasiTop), m.count_facets(FacetTag::QuasiBottom));
        assert!(m.count_facets(FacetTag::QuasiTop) > 0);
    }

    #[test]
    fn aperture_cell_keeps_body() {
        let p = CellParams::new(0.5, 0.5, 0.1, Junction::Aperture).unwrap();
        let m = build_periodicity_cell(&p, 0.05, &MeshSpec::default()).unwrap();
        assert_relative_eq!(m.volume(), 1.0, max_relative = 1e-10);
        let area = m.tagged_area(FacetTag::QuasiTop);
        assert_relative_eq!(area, (2.0 * 0.1 * 0.05f64).powi(2), max_relative = 1e-10);
    }

    #[test]
    fn periodic_pairs_are_unit_translations() {
        for junction in [Junction::Aperture, Junction::Ligament] {
            let p = CellParams::new(0.45, 0.5, 0.1, junction).unwrap();
            let m = build_periodicity_cell(&p, 0.07, &MeshSpec::default()).unwrap();
            let top = m.tagged_nodes(FacetTag::QuasiTop);
            assert_eq!(m.periodic_pairs.len(), top.len());
            for &(t, b) in &m.periodic_pairs {
                let (pt, pb) = (m.nodes[t], m.nodes[b]);
                assert!((pt[0] - pb[0]).abs() < 1e-12);
                assert!((pt[1] - pb[1]).abs() < 1e-12);
                assert!((pt[2] - pb[2] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_h_out_of_range() {
        let p = square();
        assert!(build_periodicity_cell(&p, 0.2, &MeshSpec::default()).is_err());
        assert!(build_periodicity_cell(&p, 0.0, &MeshSpec::default()).is_err());
    }

    #[test]
    fn ligament_resolved_and_quality_gate() {
        let p = square();
        let h = 0.05;
        let m = build_periodicity_cell(&p, h, &MeshSpec::default()).unwrap();
        let th = 0.1 * h;
        let z_face = 0.5 * (1.0 - h);
        let in_lig = |c: [f64; 3]| c[2].abs() > z_face;
        assert!(m.max_aspect_ratio(in_lig) <= 4.0 + 1e-9);
        let across = m.grid.x.iter().filter(|x| x.abs() < th - 1e-12).count() + 1;
        assert!(across >= 2);
    }

    #[test]
    fn omega_far_field_area_scales_quadratically() {
        let p = square();
        let spec = MeshSpec::default();
        let m4 = build_truncated_omega(&p, 4.0, &spec).unwrap();
        let m8 = build_truncated_omega(&p, 8.0, &spec).unwrap();
        let a4 = m4.tagged_area(FacetTag::FarField);
        let a8 = m8.tagged_area(FacetTag::FarField);
        assert_relative_eq!(a4, 24.0 * 16.0, max_relative = 1e-10);
        assert_relative_eq!(a8 / a4, 4.0, max_relative = 1e-10);
        assert!(build_truncated_omega(&p, 3.0, &spec).is_err());
    }

    #[test]
    fn omega_volumes() {
        let spec = MeshSpec::default();
        let rho = 4.0;
        let lig = build_truncated_omega(&square(), rho, &spec).unwrap();
        let expected = 2.0 * (2.0 * rho) * (2.0 * rho) * rho + 0.2 * 0.2 * 1.0;
        assert_relative_eq!(lig.volume(), expected, max_relative = 1e-10);
        let ap = CellParams::new(0.5, 0.5, 0.1, Junction::Aperture).unwrap();
        let m = build_truncated_omega(&ap, rho, &spec).unwrap();
        assert_relative_eq!(m.volume(), 2.0 * (2.0 * rho) * (2.0 * rho) * rho, max_relative = 1e-10);
        // the crack plane outside the aperture is traction free on both sides
        let crack = m
            .facets
            .iter()
            .filter(|f| f.tag == FacetTag::TractionFree && m.facet_area(f) > 0.0)
            .filter(|f| f.nodes.iter().all(|&n| m.nodes[n][2].abs() < 1e-12))
            .map(|f| m.facet_area(f))
            .sum::<f64>();
        assert_relative_eq!(crack, 2.0 * ((2.0 * rho).powi(2) - 0.04), max_relative = 1e-10);
    }

    #[test]
    fn tag_partition_counts() {
        let p = square();
        let m = build_periodicity_cell(&p, 0.1, &MeshSpec::default()).unwrap();
        let total = m.facets.len();
        let sum: usize = [FacetTag::TractionFree, FacetTag::QuasiTop, FacetTag::QuasiBottom, FacetTag::FarField]
            .iter()
            .map(|t| m.count_facets(*t))
            .sum();
        assert_eq!(total, sum);
    }

    #[test]
    fn scaled_bodies_share_template() {
        let p = square();
        let limit = build_limit_cell(&p, 0.125).unwrap();
        let m1 = scale_map(Junction::Ligament, 0.05).unwrap();
        let m2 = scale_map(Junction::Ligament, 0.1).unwrap();
        let b1 = build_scaled_body(&limit, &m1, 0.05);
        let b2 = build_scaled_body(&limit, &m2, 0.1);
        let ratio = m2.factor() / m1.factor();
        for (p1, p2) in b1.nodes.iter().zip(&b2.nodes) {
            for d in 0..3 {
                assert!((p1[d] - p2[d] * ratio).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn body_template_maps_onto_cell_body() {
        let p = CellParams::default();
        let spec = MeshSpec::default();
        let h = 0.07;
        let tpl = build_body_template(&p, h, &spec).unwrap();
        let cell = build_periodicity_cell(&p, h, &spec).unwrap();
        let map = scale_map(p.junction, h).unwrap();
        let zf = 0.5 * (1.0 - h);
        for q in &tpl.nodes {
            let x = map.invert(*q);
            if x[2].abs() <= zf + 1e-12 {
                let found = cell.find_node(x);
                assert!(found.is_some(), "template node {q:?} missing in cell");
            }
        }
        assert_relative_eq!(tpl.volume(), p.volume(), max_relative = 1e-10);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let m = build_truncated_omega(&square(), 4.0, &MeshSpec::default()).unwrap();
        let f: Vec<f64> = m.nodes.iter().map(|p| 2.0 * p[0] - p[1] + 0.5 * p[2]).collect();
        for q in [[0.3, -1.7, 2.2], [0.05, 0.02, 0.1], [-3.9, 3.9, -4.4]] {
            let v = m.interpolate(&f, 1, q).unwrap()[0];
            assert_relative_eq!(v, 2.0 * q[0] - q[1] + 0.5 * q[2], epsilon = 1e-12);
        }
        // beside the ligament there is no material
        assert!(m.interpolate(&f, 1, [1.0, 1.0, 0.0]).is_none());
    }
}
