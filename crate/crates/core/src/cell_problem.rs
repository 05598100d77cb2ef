//! Boundary-layer unit problems on the truncated junction domain and the
//! polarization matrices extracted from them.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::eigen::{ShiftInvert, SymbolicCache};
use crate::elastic::HookeTensor;
use crate::error::{Error, Result};
use crate::fem::{assemble, element_table, nested_dissection, AssembledPair};
use crate::geometry::{build_truncated_omega, CellMesh, CellParams, FacetTag, MeshSpec};
use crate::sparse::CsrMatrix;

/// Displacement `X_j` with far-field data `±e_j` on the upper and lower
/// truncation facets.
#[derive(Clone, Debug)]
pub struct UnitSolution {
    /// Axis, `0..3`.
    pub j: usize,
    /// Nodal field, three components per node.
    pub field: Vec<f64>,
    pub rho: f64,
}

/// Dirichlet data of the unit problem `j` on the side `upper`.
fn far_value(j: usize, upper: bool) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[j] = if upper { 1.0 } else { -1.0 };
    v
}

/// Whether each node belongs to the half `ξ3 > 0`, judged by the elements
/// that own it, so that the two copies of a crack node are told apart.
fn upper_side(mesh: &CellMesh) -> Vec<bool> {
    let mut sum = vec![0.0; mesh.n_nodes()];
    for (e, hex) in mesh.hexes.iter().enumerate() {
        let zc = mesh.element_center(e)[2];
        for &n in hex {
            sum[n] += zc;
        }
    }
    sum.into_iter().map(|s| s > 0.0).collect()
}

/// The three unit problems on one truncated mesh, sharing one factorization
/// of the constrained stiffness.
pub fn solve_unit_problems(mesh: &CellMesh, a: &HookeTensor) -> Result<[UnitSolution; 3]> {
    let rho = mesh
        .rho()
        .ok_or_else(|| Error::InvalidParameter("unit problems need a truncated junction mesh".into()))?;
    let pair = assemble(mesh, a, 1.0)?;
    let nn = mesh.n_nodes();
    let mut fixed = vec![false; nn];
    for n in mesh.tagged_nodes(FacetTag::FarField) {
        fixed[n] = true;
    }
    if !fixed.iter().any(|&f| f) {
        return Err(Error::Mesh("truncated mesh has no FarField facets".into()));
    }
    // free node numbering in nested dissection order
    let free: Vec<usize> = nested_dissection(&mesh.nodes, (0..nn).filter(|&i| !fixed[i]).collect());
    let mut slot = vec![usize::MAX; nn];
    for (s, &node) in free.iter().enumerate() {
        slot[node] = s;
    }
    let kff = restrict(&pair, &slot, free.len());
    // free dofs are already in nested dissection order
    let order = SymbolicCache::with_order((0..kff.n).collect());
    let op = ShiftInvert::factor(&kff, 0.0, Some(&order))?;
    if !op.is_cholesky() {
        return Err(Error::NotPositiveDefinite(0.0));
    }
    let upper = upper_side(mesh);
    let nf = 3 * free.len();
    let mut rhs = Mat::<f64>::zeros(nf, 3);
    let mut data = vec![[0.0; 3]; 3 * nn];
    for j in 0..3 {
        let mut ud = vec![0.0; 3 * nn];
        for node in 0..nn {
            if fixed[node] {
                let v = far_value(j, upper[node]);
                ud[3 * node..3 * node + 3].copy_from_slice(&v);
            }
        }
        let kud = pair.k.mul_vec(&ud);
        for node in 0..nn {
            if !fixed[node] {
                for c in 0..3 {
                    rhs[(3 * slot[node] + c, j)] = -kud[3 * node + c];
                }
            }
        }
        for d in 0..3 * nn {
            data[d][j] = ud[d];
        }
    }
    op.solve_in_place(&mut rhs);
    let sols = [0, 1, 2].map(|j| {
        let mut field = vec![0.0; 3 * nn];
        for node in 0..nn {
            for c in 0..3 {
                let d = 3 * node + c;
                field[d] = if fixed[node] { data[d][j] } else { rhs[(3 * slot[node] + c, j)] };
            }
        }
        UnitSolution { j, field, rho }
    });
    Ok(sols)
}

pub fn solve_unit_problem(j: usize, mesh: &CellMesh, a: &HookeTensor) -> Result<UnitSolution> {
    if j > 2 {
        return Err(Error::InvalidParameter(format!("unit problem axis {j} not in 0..3")));
    }
    let [x0, x1, x2] = solve_unit_problems(mesh, a)?;
    Ok([x0, x1, x2].into_iter().nth(j).unwrap())
}

/// Stiffness restricted to free nodes, renumbered by `slot`.
fn restrict(pair: &AssembledPair, slot: &[usize], n_free: usize) -> CsrMatrix<f64> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 3 * n_free];
    for i in 0..pair.k.n {
        let si = slot[i / 3];
        if si == usize::MAX {
            continue;
        }
        let r = 3 * si + i % 3;
        for p in pair.k.row_ptr[i]..pair.k.row_ptr[i + 1] {
            let c = pair.k.col_idx[p];
            let sc = slot[c / 3];
            if sc != usize::MAX {
                rows[r].push((3 * sc + c % 3, pair.k.values[p]));
            }
        }
    }
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for mut row in rows {
        row.sort_unstable_by_key(|e| e.0);
        for (c, v) in row {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix {
        n: 3 * n_free,
        row_ptr,
        col_idx,
        values,
    }
}

/// Gram matrices `a(X_j, X_l)` over the elements above and below `ξ3 = 0`.
pub fn half_energies(mesh: &CellMesh, a: &HookeTensor, sols: &[UnitSolution; 3]) -> Result<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let (index, table) = element_table(mesh, a, 1.0)?;
    let mut upper = [[0.0; 3]; 3];
    let mut lower = [[0.0; 3]; 3];
    for (e, hex) in mesh.hexes.iter().enumerate() {
        let em = &table[index[e]];
        let side = if mesh.element_center(e)[2] > 0.0 { &mut upper } else { &mut lower };
        let mut ue = [[0.0; 24]; 3];
        for (j, s) in sols.iter().enumerate() {
            for i in 0..8 {
                for c in 0..3 {
                    ue[j][3 * i + c] = s.field[3 * hex[i] + c];
                }
            }
        }
        let mut ku = [[0.0; 24]; 3];
        for j in 0..3 {
            for p in 0..24 {
                let mut r = 0.0;
                for q in 0..24 {
                    r += em.k[p][q] * ue[j][q];
                }
                ku[j][p] = r;
            }
        }
        for j in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for p in 0..24 {
                    s += ue[j][p] * ku[l][p];
                }
                side[j][l] += s;
            }
        }
    }
    Ok((upper, lower))
}

/// Polarization matrices at one truncation radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationSample {
    pub rho: f64,
    pub m_plus: [[f64; 3]; 3],
    pub m_minus: [[f64; 3]; 3],
}

/// `M⁺ = a(X_j, X_l; Ω⁺)` and `M⁻ = -a(X_j, X_l; Ω⁻)` at the mesh radius.
pub fn extract_polarization(mesh: &CellMesh, a: &HookeTensor, sols: &[UnitSolution; 3]) -> Result<PolarizationSample> {
    let rho = mesh.rho().ok_or_else(|| Error::InvalidParameter("not a truncated junction mesh".into()))?;
    let (upper, lower) = half_energies(mesh, a, sols)?;
    let mut m_minus = lower;
    for row in m_minus.iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    Ok(PolarizationSample {
        rho,
        m_plus: upper,
        m_minus,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationMatrix {
    /// Extrapolated when `extrapolated`, otherwise the finest radius.
    pub m_plus: [[f64; 3]; 3],
    pub m_minus: [[f64; 3]; 3],
    pub samples: Vec<PolarizationSample>,
    pub extrapolated: bool,
}

fn max_abs(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
}

/// `max|M - Mᵀ| / max|M|`
pub fn symmetry_defect(m: &[[f64; 3]; 3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            d = d.max((m[i][j] - m[j][i]).abs());
        }
    }
    d / max_abs(m)
}

/// `max|M⁺ + M⁻| / max|M⁺|`
pub fn antisymmetry_defect(plus: &[[f64; 3]; 3], minus: &[[f64; 3]; 3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            d = d.max((plus[i][j] + minus[i][j]).abs());
        }
    }
    d / max_abs(plus)
}

pub fn symmetrize(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut s = *m;
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    s
}

/// Ascending eigenvalues of the symmetric part.
pub fn sym_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let s = symmetrize(m);
    let mat = Mat::<f64>::from_fn(3, 3, |i, j| s[i][j]);
    let ev = mat.self_adjoint_eigenvalues(faer::Side::Lower).expect("3x3 eigenvalues");
    [ev[0], ev[1], ev[2]]
}

impl PolarizationMatrix {
    pub fn symmetry_defect(&self) -> f64 {
        symmetry_defect(&self.m_plus)
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        antisymmetry_defect(&self.m_plus, &self.m_minus)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigenvalues(&self.m_plus)[0]
    }

    /// Symmetric part of `M⁺`, the matrix used by the asymptotics.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        symmetrize(&self.m_plus)
    }

    pub fn finest(&self) -> &PolarizationSample {
        self.samples
            .iter()
            .max_by(|a, b| a.rho.partial_cmp(&b.rho).unwrap())
            .expect("at least one sample")
    }

    /// Direct construction from a known matrix (no truncation data).
    pub fn from_matrix(m_plus: [[f64; 3]; 3]) -> Self {
        let mut m_minus = m_plus;
        m_minus.iter_mut().flatten().for_each(|v| *v = -*v);
        Self {
            m_plus,
            m_minus,
            samples: Vec::new(),
            extrapolated: false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Entrywise fit of `M(ρ) = M_∞ + c/ρ`. With two radii this is
/// `(ρ₂M₂ - ρ₁M₁)/(ρ₂ - ρ₁)`, i.e. `2M(8) - M(4)`; with more it is the least
/// squares fit. When the tail is below `noise` the finest value is kept.
pub fn extrapolate_polarization(samples: Vec<PolarizationSample>, noise: f64) -> Result<PolarizationMatrix> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no polarization samples".into()));
    }
    let mut samples = samples;
    samples.sort_by(|a, b| a.rho.partial_cmp(&b.rho).unwrap());
    let finest = samples.last().unwrap().clone();
    let tail = if samples.len() >= 2 {
        let first = &samples[0];
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((finest.m_plus[i][j] - first.m_plus[i][j]).abs());
            }
        }
        d / max_abs(&finest.m_plus)
    } else {
        0.0
    };
    if samples.len() < 2 || tail <= noise {
        return Ok(PolarizationMatrix {
            m_plus: finest.m_plus,
            m_minus: finest.m_minus,
            samples,
            extrapolated: false,
        });
    }
    let fit = |pick: &dyn Fn(&PolarizationSample) -> [[f64; 3]; 3]| {
        let xs: Vec<f64> = samples.iter().map(|s| 1.0 / s.rho).collect();
        let nx = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / nx;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let ys: Vec<f64> = samples.iter().map(|s| pick(s)[i][j]).collect();
                let my = ys.iter().sum::<f64>() / nx;
                let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
                out[i][j] = my - sxy / sxx * mx;
            }
        }
        out
    };
    Ok(PolarizationMatrix {
        m_plus: fit(&|s| s.m_plus),
        m_minus: fit(&|s| s.m_minus),
        samples,
        extrapolated: true,
    })
}

/// Unit problems and polarization over a list of truncation radii.
pub fn polarization_study(
    params: &CellParams,
    a: &HookeTensor,
    rhos: &[f64],
    spec: &MeshSpec,
) -> Result<PolarizationMatrix> {
    let mut samples = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mesh = build_truncated_omega(params, rho, spec)?;
        let sols = solve_unit_problems(&mesh, a)?;
        samples.push(extract_polarization(&mesh, a, &sols)?);
    }
    extrapolate_polarization(samples, 1e-10)
}
