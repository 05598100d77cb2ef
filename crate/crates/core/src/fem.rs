//! Global assembly and Floquet constraint elimination.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::eigen::SymbolicCache;
use crate::elastic::{element_matrices, gauss_points, shape_gradients, voigt_matrix, ElementMatrices, HookeTensor};
use crate::error::{Error, Result};
use crate::geometry::CellMesh;
use crate::sparse::{CsrMatrix, Scalar};

/// Global stiffness and mass with dof `3·node + component`.
#[derive(Clone, Debug)]
pub struct AssembledPair {
    pub k: CsrMatrix<f64>,
    pub m: CsrMatrix<f64>,
    pub n_nodes: usize,
}

pub fn dof(node: usize, component: usize) -> usize {
    3 * node + component
}

/// Element matrices of every hexahedron. Axis-aligned elements with equal
/// edge vectors share one evaluation.
pub fn element_table(mesh: &CellMesh, a: &HookeTensor, density: f64) -> Result<(Vec<usize>, Vec<ElementMatrices>)> {
    let mut cache: HashMap<[u64; 24], usize> = HashMap::new();
    let mut table = Vec::new();
    let mut index = Vec::with_capacity(mesh.hexes.len());
    for e in 0..mesh.hexes.len() {
        let pts = mesh.element_nodes(e);
        let mut key = [0u64; 24];
        for i in 0..8 {
            for d in 0..3 {
                key[3 * i + d] = (pts[i][d] - pts[0][d]).to_bits();
            }
        }
        let slot = match cache.get(&key) {
            Some(&s) => s,
            None => {
                let em = element_matrices(&pts, a, density).map_err(|err| match err {
                    Error::DegenerateElement { det, .. } => Error::DegenerateElement { element: e, det },
                    other => other,
                })?;
                table.push(em);
                cache.insert(key, table.len() - 1);
                table.len() - 1
            }
        };
        index.push(slot);
    }
    Ok((index, table))
}

/// Sorted dof-level sparsity pattern from node adjacency.
fn pattern(mesh: &CellMesh) -> (Vec<usize>, Vec<usize>) {
    let nn = mesh.n_nodes();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
    for hex in &mesh.hexes {
        for &a in hex {
            adj[a].extend_from_slice(hex);
        }
    }
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    let mut row_ptr = Vec::with_capacity(3 * nn + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for row in &adj {
        for _ in 0..3 {
            for &b in row {
                col_idx.extend_from_slice(&[3 * b, 3 * b + 1, 3 * b + 2]);
            }
            row_ptr.push(col_idx.len());
        }
    }
    (row_ptr, col_idx)
}

/// Scatter-add of the element matrices in element order.
pub fn assemble(mesh: &CellMesh, a: &HookeTensor, density: f64) -> Result<AssembledPair> {
    if !(density > 0.0) {
        return Err(Error::InvalidParameter(format!("density {density} must be positive")));
    }
    let (index, table) = element_table(mesh, a, density)?;
    let (row_ptr, col_idx) = pattern(mesh);
    let n = 3 * mesh.n_nodes();
    let mut k = CsrMatrix::<f64>::zeros(n, row_ptr.clone(), col_idx.clone());
    let mut m = CsrMatrix::<f64>::zeros(n, row_ptr, col_idx);
    for (e, hex) in mesh.hexes.iter().enumerate() {
        let em = &table[index[e]];
        for i in 0..8 {
            for ci in 0..3 {
                let r = dof(hex[i], ci);
                let start = k.row_ptr[r];
                let row = &k.col_idx[start..k.row_ptr[r + 1]];
                for j in 0..8 {
                    let c0 = dof(hex[j], 0);
                    let p = start + row.binary_search(&c0).expect("pattern covers element");
                    for cj in 0..3 {
                        k.values[p + cj] += em.k[3 * i + ci][3 * j + cj];
                        m.values[p + cj] += em.m[3 * i + ci][3 * j + cj];
                    }
                }
            }
        }
    }
    Ok(AssembledPair {
        k,
        m,
        n_nodes: mesh.n_nodes(),
    })
}

/// Sum of element energies `a(u, v; E)` over the elements selected by `keep`.
pub fn energy_form(
    mesh: &CellMesh,
    a: &HookeTensor,
    u: &[f64],
    v: &[f64],
    keep: impl Fn(usize) -> bool,
) -> Result<f64> {
    let (index, table) = element_table(mesh, a, 1.0)?;
    let mut s = 0.0;
    for (e, hex) in mesh.hexes.iter().enumerate() {
        if !keep(e) {
            continue;
        }
        let em = &table[index[e]];
        let mut ue = [0.0; 24];
        let mut ve = [0.0; 24];
        for i in 0..8 {
            for c in 0..3 {
                ue[3 * i + c] = u[dof(hex[i], c)];
                ve[3 * i + c] = v[dof(hex[i], c)];
            }
        }
        for p in 0..24 {
            let mut r = 0.0;
            for q in 0..24 {
                r += em.k[p][q] * ve[q];
            }
            s += ue[p] * r;
        }
    }
    Ok(s)
}

/// Shape gradients and `det J` at the eight Gauss points of one element.
type GaussData = [(f64, [[f64; 3]; 8]); 8];

/// Energy form evaluated from element strains. Unlike `uᴴ K v` it does not
/// cancel for nearly rigid fields, so small energies keep their relative
/// accuracy.
#[derive(Debug)]
pub struct StrainOperator {
    hooke: [[f64; 6]; 6],
    hexes: Vec<[usize; 8]>,
    index: Vec<usize>,
    table: Vec<GaussData>,
}

impl StrainOperator {
    pub fn new(mesh: &CellMesh, a: &HookeTensor) -> Result<Self> {
        let mut cache: HashMap<[u64; 24], usize> = HashMap::new();
        let mut table = Vec::new();
        let mut index = Vec::with_capacity(mesh.hexes.len());
        for e in 0..mesh.hexes.len() {
            let pts = mesh.element_nodes(e);
            let mut key = [0u64; 24];
            for i in 0..8 {
                for d in 0..3 {
                    key[3 * i + d] = (pts[i][d] - pts[0][d]).to_bits();
                }
            }
            let slot = match cache.get(&key) {
                Some(&s) => s,
                None => {
                    let mut data = [(0.0, [[0.0; 3]; 8]); 8];
                    for (q, r) in gauss_points().into_iter().enumerate() {
                        let (det, _, g) = shape_gradients(&pts, r);
                        if !(det > 0.0) {
                            return Err(Error::DegenerateElement { element: e, det });
                        }
                        data[q] = (det, g);
                    }
                    table.push(data);
                    cache.insert(key, table.len() - 1);
                    table.len() - 1
                }
            };
            index.push(slot);
        }
        Ok(Self {
            hooke: *a.matrix(),
            hexes: mesh.hexes.clone(),
            index,
            table,
        })
    }

    /// `G[i][j] = a(v_j, v_i)` for full nodal fields.
    pub fn gram(&self, vs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let n = vs.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut g = vec![vec![zero; n]; n];
        let mut strains = vec![[zero; 6]; n];
        let mut stresses = vec![[zero; 6]; n];
        for (e, hex) in self.hexes.iter().enumerate() {
            let data = &self.table[self.index[e]];
            for &(det, grads) in data {
                for (k, v) in vs.iter().enumerate() {
                    // differences to the first node keep constants exact
                    let base = [v[dof(hex[0], 0)], v[dof(hex[0], 1)], v[dof(hex[0], 2)]];
                    let mut s = [zero; 6];
                    for a in 1..8 {
                        let d = voigt_matrix(grads[a]);
                        let u = [
                            v[dof(hex[a], 0)] - base[0],
                            v[dof(hex[a], 1)] - base[1],
                            v[dof(hex[a], 2)] - base[2],
                        ];
                        for (row, sr) in s.iter_mut().enumerate() {
                            *sr += u[0] * d[row][0] + u[1] * d[row][1] + u[2] * d[row][2];
                        }
                    }
                    strains[k] = s;
                    stresses[k] = std::array::from_fn(|r| (0..6).map(|c| s[c] * self.hooke[r][c]).sum());
                }
                for i in 0..n {
                    for j in 0..n {
                        let w: Complex64 = (0..6).map(|r| strains[i][r].conj() * stresses[j][r]).sum();
                        g[i][j] += w * det;
                    }
                }
            }
        }
        g
    }
}

/// Geometric nested dissection of points lying on the planes of a tensor
/// grid: each subset is split by its median grid plane along the axis with
/// the most planes, and the plane is eliminated after both halves.
pub fn nested_dissection(points: &[[f64; 3]], subset: Vec<usize>) -> Vec<usize> {
    fn dissect(points: &[[f64; 3]], set: Vec<usize>, out: &mut Vec<usize>) {
        if set.len() <= 48 {
            out.extend(set);
            return;
        }
        let mut best: Option<(usize, Vec<f64>)> = None;
        for d in 0..3 {
            let mut vals: Vec<f64> = set.iter().map(|&i| points[i][d]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            if best.as_ref().map_or(true, |(_, v)| vals.len() > v.len()) {
                best = Some((d, vals));
            }
        }
        let (d, vals) = best.unwrap();
        if vals.len() < 3 {
            out.extend(set);
            return;
        }
        let cut = vals[vals.len() / 2];
        let (mut lo, mut hi, mut sep) = (Vec::new(), Vec::new(), Vec::new());
        for i in set {
            let x = points[i][d];
            if x < cut {
                lo.push(i);
            } else if x > cut {
                hi.push(i);
            } else {
                sep.push(i);
            }
        }
        dissect(points, lo, out);
        dissect(points, hi, out);
        out.extend(sep);
    }
    let mut out = Vec::with_capacity(subset.len());
    dissect(points, subset, &mut out);
    out
}

/// Elimination of QuasiTop dofs: `u_top = e^{iη} u_bottom`.
///
/// The reduced pattern and the scatter plan do not depend on `η`, so one
/// reduction serves a whole sweep, together with the symbolic Cholesky
/// factorization of the reduced pattern.
#[derive(Debug)]
pub struct FloquetReduction {
    pub n_full: usize,
    pub n_reduced: usize,
    /// Reduced index and phase exponent of every full dof.
    pub map: Vec<(usize, i8)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Target position and net exponent for every full nonzero.
    scatter: Vec<(usize, i8)>,
    symbolic: SymbolicCache,
}

impl FloquetReduction {
    /// Identity reduction (no constraints).
    pub fn identity(pair: &AssembledPair) -> Arc<Self> {
        Arc::new(Self::build(pair, &[], None))
    }

    /// Identity reduction whose factorizations use a nested dissection of
    /// the mesh.
    pub fn unconstrained(pair: &AssembledPair, mesh: &CellMesh) -> Arc<Self> {
        Arc::new(Self::build(pair, &[], Some(&mesh.nodes)))
    }

    pub fn new(pair: &AssembledPair, mesh: &CellMesh) -> Result<Arc<Self>> {
        if mesh.periodic_pairs.is_empty() {
            return Err(Error::MissingPairs("mesh has no QuasiTop/QuasiBottom pairing".into()));
        }
        Ok(Arc::new(Self::build(pair, &mesh.periodic_pairs, Some(&mesh.nodes))))
    }

    fn build(pair: &AssembledPair, pairs: &[(usize, usize)], points: Option<&[[f64; 3]]>) -> Self {
        let n_full = pair.k.n;
        let mut master = vec![usize::MAX; pair.n_nodes];
        for &(top, bottom) in pairs {
            master[top] = bottom;
        }
        let mut node_red = vec![usize::MAX; pair.n_nodes];
        let mut next = 0;
        for node in 0..pair.n_nodes {
            if master[node] == usize::MAX {
                node_red[node] = next;
                next += 1;
            }
        }
        let mut map = vec![(0usize, 0i8); n_full];
        for node in 0..pair.n_nodes {
            let (r, e) = if master[node] == usize::MAX {
                (node_red[node], 0)
            } else {
                (node_red[master[node]], 1)
            };
            for c in 0..3 {
                map[dof(node, c)] = (3 * r + c, e);
            }
        }
        let n_reduced = 3 * next;
        // reduced pattern
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_reduced];
        for i in 0..n_full {
            let ri = map[i].0;
            for p in pair.k.row_ptr[i]..pair.k.row_ptr[i + 1] {
                rows[ri].push(map[pair.k.col_idx[p]].0);
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let mut scatter = Vec::with_capacity(pair.k.nnz());
        for i in 0..n_full {
            let (ri, ei) = map[i];
            let row = &col_idx[row_ptr[ri]..row_ptr[ri + 1]];
            for p in pair.k.row_ptr[i]..pair.k.row_ptr[i + 1] {
                let (rj, ej) = map[pair.k.col_idx[p]];
                let pos = row_ptr[ri] + row.binary_search(&rj).unwrap();
                scatter.push((pos, ej - ei));
            }
        }
        let symbolic = match points {
            Some(points) => {
                let free: Vec<usize> = (0..pair.n_nodes).filter(|&i| master[i] == usize::MAX).collect();
                let mut masters: Vec<usize> = pairs.iter().map(|&(_, b)| b).collect();
                masters.sort_unstable();
                masters.dedup();
                let mut is_last = vec![false; pair.n_nodes];
                for &b in &masters {
                    is_last[b] = true;
                }
                let inner: Vec<usize> = free.into_iter().filter(|&i| !is_last[i]).collect();
                let mut order = nested_dissection(points, inner);
                order.extend(masters);
                let dofs = order
                    .iter()
                    .flat_map(|&node| (0..3).map(move |c| (node, c)))
                    .map(|(node, c)| 3 * node_red[node] + c)
                    .collect();
                SymbolicCache::with_order(dofs)
            }
            None => SymbolicCache::new(),
        };
        Self {
            n_full,
            n_reduced,
            map,
            row_ptr,
            col_idx,
            scatter,
            symbolic,
        }
    }

    pub fn symbolic(&self) -> &SymbolicCache {
        &self.symbolic
    }

    /// `Tᴴ A T` for the elimination map `T` at phase `η`.
    pub fn reduce<T: Scalar>(&self, a: &CsrMatrix<f64>, eta: f64) -> CsrMatrix<T> {
        let phases = [T::phase(eta, -1), T::from_f64(1.0), T::phase(eta, 1)];
        let mut out = CsrMatrix::<T>::zeros(self.n_reduced, self.row_ptr.clone(), self.col_idx.clone());
        for (p, &(pos, net)) in self.scatter.iter().enumerate() {
            out.values[pos] += phases[(net + 1) as usize] * a.values[p];
        }
        out
    }

    /// Full nodal field `T u`.
    pub fn expand<T: Scalar>(&self, u: &[T], eta: f64) -> Vec<T> {
        let ph = T::phase(eta, 1);
        self.map
            .iter()
            .map(|&(r, e)| if e == 0 { u[r] } else { u[r] * ph })
            .collect()
    }
}

/// Hermitian pencil `(K(η), M(η))` on the reduced dofs.
#[derive(Clone, Debug)]
pub struct QuasiPeriodicSystem<T> {
    pub eta: f64,
    pub k: CsrMatrix<T>,
    pub m: CsrMatrix<T>,
    pub reduction: Arc<FloquetReduction>,
}

impl<T: Scalar> QuasiPeriodicSystem<T> {
    pub fn from_reduction(pair: &AssembledPair, reduction: &Arc<FloquetReduction>, eta: f64) -> Self {
        Self {
            eta,
            k: reduction.reduce(&pair.k, eta),
            m: reduction.reduce(&pair.m, eta),
            reduction: Arc::clone(reduction),
        }
    }

    pub fn dim(&self) -> usize {
        self.k.n
    }
}

pub fn apply_quasiperiodicity(pair: &AssembledPair, mesh: &CellMesh, eta: f64) -> Result<QuasiPeriodicSystem<Complex64>> {
    let red = FloquetReduction::new(pair, mesh)?;
    Ok(QuasiPeriodicSystem::from_reduction(pair, &red, eta))
}

/// Real system for `η ∈ {0, π}`, where the phase is ±1.
pub fn apply_quasiperiodicity_real(pair: &AssembledPair, reduction: &Arc<FloquetReduction>, eta: f64) -> Result<QuasiPeriodicSystem<f64>> {
    if eta.sin().abs() > 1e-14 {
        return Err(Error::InvalidParameter(format!("real Floquet system needs η ∈ {{0, π}}, got {eta}")));
    }
    Ok(QuasiPeriodicSystem::from_reduction(pair, reduction, eta))
}
