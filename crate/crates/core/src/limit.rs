//! Traction-free spectrum of the isolated cell `ϖ_0`.

use serde::{Deserialize, Serialize};

use crate::eigen::{solve_gevp, EigenOptions};
use crate::elastic::{rigid_motion, HookeTensor};
use crate::error::{Error, Result};
use crate::fem::{assemble, AssembledPair, FloquetReduction};
use crate::geometry::{CellMesh, POLE_BOTTOM, POLE_TOP};
use crate::sparse::{dot, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitOptions {
    pub n_eigs: usize,
    pub density: f64,
    /// Relative width of a multiplicity cluster.
    pub cluster_tol: f64,
    /// Rigid threshold relative to the first elastic eigenvalue.
    pub zero_tol: f64,
    pub eigen: EigenOptions,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            n_eigs: 12,
            density: 1.0,
            cluster_tol: 1e-4,
            zero_tol: 1e-8,
            eigen: EigenOptions {
                block: 6,
                tol: 1e-9,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Nodal fields, `M`-orthonormal (`L²`-orthonormal for unit density).
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// `u_k(P⁺)`
    pub trace_top: Vec<[f64; 3]>,
    /// `u_k(P⁻)`
    pub trace_bottom: Vec<[f64; 3]>,
    pub clusters: Vec<Vec<usize>>,
    pub rigid_count: usize,
    /// Absolute rigid threshold used.
    pub zero_threshold: f64,
    pub rigid_aligned: bool,
}

impl LimitSpectrum {
    pub fn cluster_of(&self, k: usize) -> &[usize] {
        self.clusters.iter().find(|c| c.contains(&k)).map(|c| c.as_slice()).unwrap_or(&[])
    }

    pub fn is_simple(&self, k: usize) -> bool {
        self.cluster_of(k).len() == 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Eigenvectors as little-endian `f64`, one field after another.
    pub fn vectors_to_bytes(&self) -> Vec<u8> {
        self.vectors.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Nodal value of a 3-component field at a pole.
pub fn pole_trace(mesh: &CellMesh, u: &[f64], pole: [f64; 3]) -> Result<[f64; 3]> {
    let n = mesh
        .find_node(pole)
        .ok_or_else(|| Error::Mesh(format!("pole {pole:?} is not a mesh node")))?;
    Ok([u[3 * n], u[3 * n + 1], u[3 * n + 2]])
}

/// Rigid motions `β_j e_j`, `β_j x × e_{j-3}` with unit `L²` norm.
#[derive(Clone, Debug)]
pub struct RigidBasis {
    pub fields: Vec<Vec<f64>>,
    pub betas: [f64; 6],
    pub volume: f64,
    /// Second moments `J_k = ∫ x_k²`.
    pub second_moments: [f64; 3],
}

impl RigidBasis {
    /// Moments of inertia `∫ |x × e_k|²` about the coordinate axes.
    pub fn moments_of_inertia(&self) -> [f64; 3] {
        let j = self.second_moments;
        [j[1] + j[2], j[0] + j[2], j[0] + j[1]]
    }
}

/// Volume and second moments by exact quadrature over the elements.
fn moments(mesh: &CellMesh) -> (f64, [f64; 3]) {
    let mut vol = 0.0;
    let mut j = [0.0; 3];
    for e in 0..mesh.hexes.len() {
        let p = mesh.element_nodes(e);
        let lo = p[0];
        let hi = p[6];
        let v = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
        vol += v;
        for d in 0..3 {
            let (a, b) = (lo[d], hi[d]);
            j[d] += v * (a * a + a * b + b * b) / 3.0;
        }
    }
    (vol, j)
}

pub fn rigid_basis(mesh: &CellMesh) -> RigidBasis {
    let (volume, j) = moments(mesh);
    let tb = volume.powf(-0.5);
    let betas = [
        tb,
        tb,
        tb,
        (j[1] + j[2]).powf(-0.5),
        (j[0] + j[2]).powf(-0.5),
        (j[0] + j[1]).powf(-0.5),
    ];
    let fields = (0..6)
        .map(|r| {
            mesh.nodes
                .iter()
                .flat_map(|x| rigid_motion(r, *x).map(|c| c * betas[r]))
                .collect()
        })
        .collect();
    RigidBasis {
        fields,
        betas,
        volume,
        second_moments: j,
    }
}

fn clusters(eigs: &[f64], rigid: usize, tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    if rigid > 0 {
        out.push((0..rigid).collect());
    }
    for k in rigid..eigs.len() {
        match out.last_mut() {
            Some(c) if c[0] >= rigid && (eigs[k] - eigs[c[0]]).abs() <= tol * (1.0 + eigs[c[0]].abs()) => c.push(k),
            _ => out.push(vec![k]),
        }
    }
    out
}

fn gram_schmidt(m: &CsrMatrix<f64>, vecs: &mut [Vec<f64>], idx: &[usize]) {
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[..a] {
            let mj = m.mul_vec(&vecs[j]);
            let c = dot(&mj, &vecs[i]);
            let vj = vecs[j].clone();
            for (x, y) in vecs[i].iter_mut().zip(&vj) {
                *x -= c * y;
            }
        }
        let nrm = m.quadratic_form(&vecs[i]).sqrt();
        vecs[i].iter_mut().for_each(|x| *x /= nrm);
    }
}

/// Deterministic sign: the largest component of `u(P⁻)` (else `u(P⁺)`,
/// else of the whole field) is made positive.
fn fix_sign(u: &mut [f64], bottom: [f64; 3], top: [f64; 3]) {
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pick = |t: [f64; 3]| {
        let i = (0..3).max_by(|&a, &b| t[a].abs().partial_cmp(&t[b].abs()).unwrap()).unwrap();
        (t[i].abs() > 1e-10 * scale).then_some(t[i])
    };
    let s = pick(bottom).or_else(|| pick(top)).unwrap_or_else(|| {
        *u.iter().max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap()).unwrap()
    });
    if s < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn solve_limit(mesh: &CellMesh, a: &HookeTensor, opts: &LimitOptions) -> Result<LimitSpectrum> {
    let pair = assemble(mesh, a, opts.density)?;
    solve_limit_assembled(mesh, &pair, opts)
}

pub fn solve_limit_assembled(mesh: &CellMesh, pair: &AssembledPair, opts: &LimitOptions) -> Result<LimitSpectrum> {
    if opts.n_eigs < 7 {
        return Err(Error::InvalidParameter(format!(
            "limit solve needs at least 7 eigenpairs, got {}",
            opts.n_eigs
        )));
    }
    let eo = EigenOptions {
        n_eigs: opts.n_eigs,
        shift: -1.0,
        block: opts.eigen.block.max(6),
        ..opts.eigen
    };
    let red = FloquetReduction::unconstrained(pair, mesh);
    let s = solve_gevp::<f64>(&pair.k, &pair.m, &eo, Some(red.symbolic()))?;
    let first_elastic = s.eigenvalues.iter().copied().find(|&l| l > 1e-6).unwrap_or(1.0);
    let threshold = opts.zero_tol * first_elastic;
    let rigid = s.eigenvalues.iter().filter(|&&l| l <= threshold).count();
    if rigid != 6 {
        return Err(Error::LimitSpectrum(format!(
            "expected 6 rigid modes below {threshold:.3e}, found {rigid}: {:?}",
            &s.eigenvalues[..7.min(s.eigenvalues.len())]
        )));
    }
    let cl = clusters(&s.eigenvalues, rigid, opts.cluster_tol);
    let mut vectors = s.vectors;
    for c in &cl {
        if c.len() > 1 {
            gram_schmidt(&pair.m, &mut vectors, c);
        }
    }
    let mut spec = LimitSpectrum {
        eigenvalues: s.eigenvalues,
        vectors,
        residuals: s.residuals,
        trace_top: Vec::new(),
        trace_bottom: Vec::new(),
        clusters: cl,
        rigid_count: rigid,
        zero_threshold: threshold,
        rigid_aligned: false,
    };
    for u in spec.vectors.iter_mut().skip(rigid) {
        let b = pole_trace(mesh, u, POLE_BOTTOM)?;
        let t = pole_trace(mesh, u, POLE_TOP)?;
        fix_sign(u, b, t);
    }
    refresh_traces(&mut spec, mesh)?;
    Ok(spec)
}

fn refresh_traces(spec: &mut LimitSpectrum, mesh: &CellMesh) -> Result<()> {
    spec.trace_top = spec.vectors.iter().map(|u| pole_trace(mesh, u, POLE_TOP)).collect::<Result<_>>()?;
    spec.trace_bottom = spec.vectors.iter().map(|u| pole_trace(mesh, u, POLE_BOTTOM)).collect::<Result<_>>()?;
    Ok(())
}

/// Rotates the computed rigid cluster onto the order and normalization of
/// `basis`: `Q P (PᵀP)^{-1/2}` with `P = Qᵀ M R`.
pub fn align_rigid_cluster(
    spec: &LimitSpectrum,
    basis: &RigidBasis,
    mesh: &CellMesh,
    m: &CsrMatrix<f64>,
) -> Result<LimitSpectrum> {
    if spec.rigid_count != 6 {
        return Err(Error::LimitSpectrum("no rigid cluster to align".into()));
    }
    let mr: Vec<Vec<f64>> = basis.fields.iter().map(|r| m.mul_vec(r)).collect();
    let p = faer::Mat::<f64>::from_fn(6, 6, |i, j| dot(&spec.vectors[i], &mr[j]));
    let ptp = p.transpose() * &p;
    let evd = ptp
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::LimitSpectrum(format!("alignment eigen: {e:?}")))?;
    let s = evd.S();
    let smin = (0..6).map(|i| s[i]).fold(f64::INFINITY, f64::min);
    if !(smin > 1e-12) {
        return Err(Error::LimitSpectrum(format!(
            "rigid projection rank deficient (σ²_min = {smin:.3e})"
        )));
    }
    let u = evd.U();
    let inv_sqrt = faer::Mat::<f64>::from_fn(6, 6, |i, j| {
        (0..6).map(|l| u[(i, l)] * s[l].powf(-0.5) * u[(j, l)]).sum()
    });
    let coeff = &p * &inv_sqrt;
    let n = spec.vectors[0].len();
    let mut out = spec.clone();
    for j in 0..6 {
        let mut v = vec![0.0; n];
        for i in 0..6 {
            let c = coeff[(i, j)];
            for (x, y) in v.iter_mut().zip(&spec.vectors[i]) {
                *x += c * y;
            }
        }
        out.vectors[j] = v;
    }
    out.rigid_aligned = true;
    refresh_traces(&mut out, mesh)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastic::isotropic_hooke;
    use crate::geometry::{build_limit_cell, CellParams, Junction};
    use approx::assert_relative_eq;

    #[test]
    fn unit_box_rigid_normalization() {
        let p = CellParams::new(0.5, 0.5, 0.1, Junction::Ligament).unwrap();
        let mesh = build_limit_cell(&p, 0.25).unwrap();
        let rb = rigid_basis(&mesh);
        assert_relative_eq!(rb.betas[0], 1.0, max_relative = 1e-14);
        for j in rb.second_moments {
            assert_relative_eq!(j, 1.0 / 12.0, max_relative = 1e-14);
        }
        for i in rb.moments_of_inertia() {
            assert_relative_eq!(i, 1.0 / 6.0, max_relative = 1e-14);
        }
        assert_relative_eq!(rb.betas[3], 6f64.sqrt(), max_relative = 1e-14);
        let a = isotropic_hooke(1.0, 1.0).unwrap();
        let pair = assemble(&mesh, &a, 1.0).unwrap();
        for r in 0..6 {
            for s in 0..6 {
                let g = dot(&rb.fields[r], &pair.m.mul_vec(&rb.fields[s]));
                let d = if r == s { 1.0 } else { 0.0 };
                assert!((g - d).abs() < 1e-12, "gram[{r}][{s}] = {g}");
            }
        }
    }

    #[test]
    fn pole_trace_of_simple_fields() {
        let p = CellParams::default();
        let mesh = build_limit_cell(&p, 0.125).unwrap();
        let c: Vec<f64> = mesh.nodes.iter().flat_map(|_| [0.3, -0.2, 1.5]).collect();
        assert_eq!(pole_trace(&mesh, &c, POLE_TOP).unwrap(), [0.3, -0.2, 1.5]);
        assert_eq!(pole_trace(&mesh, &c, POLE_BOTTOM).unwrap(), [0.3, -0.2, 1.5]);
        let z: Vec<f64> = mesh.nodes.iter().flat_map(|x| [0.0, 0.0, x[2]]).collect();
        assert_eq!(pole_trace(&mesh, &z, POLE_TOP).unwrap(), [0.0, 0.0, 0.5]);
        assert_eq!(pole_trace(&mesh, &z, POLE_BOTTOM).unwrap(), [0.0, 0.0, -0.5]);
        assert!(pole_trace(&mesh, &c, [0.01, 0.0, 0.5]).is_err());
    }

    #[test]
    fn cluster_partition() {
        let e = [0.0, 0.0, 1.0, 1.00001, 2.0];
        let c = clusters(&e, 2, 1e-4);
        assert_eq!(c, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }
}
