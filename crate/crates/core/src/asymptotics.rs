//! First-order band corrections `Λ′_k(η)` built from the limit traces and
//! the polarization matrix, and the leading-order eigenvector ansatz.

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cell_problem::{sym_eigenvalues, UnitSolution};
use crate::elastic::rigid_motion;
use crate::error::{Error, Result};
use crate::fem::FloquetReduction;
use crate::geometry::{CellMesh, CellParams, POLE_BOTTOM, POLE_TOP};
use crate::limit::LimitSpectrum;
use crate::sparse::{dot, CsrMatrix};

type C = Complex64;

/// Normalization of the quadratic coupling term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Factor1,
    Factor2,
}

impl Convention {
    pub fn factor(self) -> f64 {
        match self {
            Convention::Factor1 => 1.0,
            Convention::Factor2 => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Convention::Factor1 => "factor1",
            Convention::Factor2 => "factor2",
        }
    }

    pub const ALL: [Convention; 2] = [Convention::Factor1, Convention::Factor2];
}

impl std::str::FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor1" => Ok(Convention::Factor1),
            "factor2" => Ok(Convention::Factor2),
            _ => Err(Error::InvalidParameter(format!("unknown convention {s:?}"))),
        }
    }
}

/// Pole data of one limit eigenfunction: `A = -u(P⁺)/2`, `B = u(P⁻)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingVector {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

impl CouplingVector {
    pub fn from_traces(top: [f64; 3], bottom: [f64; 3]) -> Self {
        Self {
            a: top.map(|v| -0.5 * v),
            b: bottom.map(|v| 0.5 * v),
        }
    }

    /// `b(η) = A + e^{iη} B`, the coefficient of the unit solutions.
    pub fn jump(&self, eta: f64) -> [C; 3] {
        let p = C::from_polar(1.0, eta);
        std::array::from_fn(|j| C::new(self.a[j], 0.0) + p * self.b[j])
    }

    /// `a(η) = -A + e^{iη} B`, the constant part of the inner field.
    pub fn mean(&self, eta: f64) -> [C; 3] {
        let p = C::from_polar(1.0, eta);
        std::array::from_fn(|j| C::new(-self.a[j], 0.0) + p * self.b[j])
    }
}

pub fn coupling_vector(spec: &LimitSpectrum, k: usize) -> Result<CouplingVector> {
    if k >= spec.eigenvalues.len() {
        return Err(Error::Asymptotics(format!(
            "eigenpair {k} not computed ({} available)",
            spec.eigenvalues.len()
        )));
    }
    Ok(CouplingVector::from_traces(spec.trace_top[k], spec.trace_bottom[k]))
}

/// `xᵀ M ȳ`
fn form(m: &[[f64; 3]; 3], x: &[C; 3], y: &[C; 3]) -> C {
    let mut s = C::new(0.0, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            s += x[i] * m[i][j] * y[j].conj();
        }
    }
    s
}

fn real_form(m: &[[f64; 3]; 3], x: &[f64; 3], y: &[f64; 3]) -> f64 {
    (0..3).map(|i| (0..3).map(|j| x[i] * m[i][j] * y[j]).sum::<f64>()).sum()
}

/// `Λ′(η) = 2aλ + c b(η)ᵀ M⁺ b̄(η)`.
pub fn lambda_prime(lambda: f64, a: f64, cv: &CouplingVector, m_plus: &[[f64; 3]; 3], eta: f64, conv: Convention) -> f64 {
    let b = cv.jump(eta);
    2.0 * a * lambda + conv.factor() * form(m_plus, &b, &b).re
}

/// `Λ′(η) = c0 + c1 cos η` sampled on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionCurve {
    pub k: usize,
    pub lambda: f64,
    pub convention: Convention,
    pub c0: f64,
    pub c1: f64,
    pub etas: Vec<f64>,
    pub values: Vec<f64>,
}

impl CorrectionCurve {
    pub fn new(k: usize, lambda: f64, a: f64, cv: &CouplingVector, m_plus: &[[f64; 3]; 3], conv: Convention, etas: &[f64]) -> Self {
        let c = conv.factor();
        let c0 = 2.0 * a * lambda + c * (real_form(m_plus, &cv.a, &cv.a) + real_form(m_plus, &cv.b, &cv.b));
        let c1 = 2.0 * c * real_form(m_plus, &cv.a, &cv.b);
        let values = etas.iter().map(|&e| lambda_prime(lambda, a, cv, m_plus, e, conv)).collect();
        Self {
            k,
            lambda,
            convention: conv,
            c0,
            c1,
            etas: etas.to_vec(),
            values,
        }
    }

    pub fn eval(&self, eta: f64) -> f64 {
        self.c0 + self.c1 * eta.cos()
    }

    /// Extremes of `Λ′`, attained at `η ∈ {0, π}`.
    pub fn range(&self) -> (f64, f64) {
        let (p, q) = (self.c0 + self.c1, self.c0 - self.c1);
        (p.min(q), p.max(q))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eta,lambda_prime\n");
        for (e, v) in self.etas.iter().zip(&self.values) {
            s.push_str(&format!("{e:.12e},{v:.12e}\n"));
        }
        s
    }
}

/// Hermitian matrix `B_qj = b_qᵀ M⁺ b̄_j` over a cluster and its spectrum.
#[derive(Clone, Debug)]
pub struct MultiplicityMatrix {
    pub eta: f64,
    pub matrix: Vec<Vec<C>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<C>>,
}

impl MultiplicityMatrix {
    pub fn new(cvs: &[CouplingVector], m_plus: &[[f64; 3]; 3], eta: f64) -> Result<Self> {
        let bs: Vec<[C; 3]> = cvs.iter().map(|cv| cv.jump(eta)).collect();
        Self::from_jumps(&bs, m_plus, eta)
    }

    /// From the jumps `b_q(η)` directly, e.g. of a complex basis of the
    /// eigenspace.
    pub fn from_jumps(bs: &[[C; 3]], m_plus: &[[f64; 3]; 3], eta: f64) -> Result<Self> {
        let matrix: Vec<Vec<C>> = bs.iter().map(|bq| bs.iter().map(|bj| form(m_plus, bq, bj)).collect()).collect();
        let (eigenvalues, eigenvectors) = hermitian_eigen(&matrix)?;
        Ok(Self {
            eta,
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    /// Eigenvalues above `tol · max |μ|`.
    pub fn rank(&self, tol: f64) -> usize {
        let top = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.eigenvalues.iter().filter(|v| v.abs() > tol * top).count()
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        self.matrix.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Λ′` of the split band family, ascending.
    pub fn corrections(&self, lambda: f64, a: f64, conv: Convention) -> Vec<f64> {
        self.eigenvalues.iter().map(|mu| 2.0 * a * lambda + conv.factor() * mu).collect()
    }
}

pub fn multiplicity_matrix(cvs: &[CouplingVector], m_plus: &[[f64; 3]; 3], eta: f64) -> Result<MultiplicityMatrix> {
    MultiplicityMatrix::new(cvs, m_plus, eta)
}

fn hermitian_eigen(a: &[Vec<C>]) -> Result<(Vec<f64>, Vec<Vec<C>>)> {
    let n = a.len();
    let m = Mat::<C>::from_fn(n, n, |i, j| 0.5 * (a[i][j] + a[j][i].conj()));
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Asymptotics(format!("multiplicity eigen: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let vals = (0..n).map(|i| s[i].re).collect();
    let vecs = (0..n).map(|l| (0..n).map(|i| u[(i, l)]).collect()).collect();
    Ok((vals, vecs))
}

/// Coupling vectors of the normalized rigid motions `β_r r(x)`.
pub fn rigid_coupling_vectors(betas: &[f64; 6]) -> [CouplingVector; 6] {
    std::array::from_fn(|r| {
        let top = rigid_motion(r, POLE_TOP).map(|v| v * betas[r]);
        let bottom = rigid_motion(r, POLE_BOTTOM).map(|v| v * betas[r]);
        CouplingVector::from_traces(top, bottom)
    })
}

/// Weights `|α_trans|²` and `|α_rot|²` of the rigid jumps at `η`: the
/// translation `β e_j` jumps by `β(e^{iη} - 1)/2 e_j`, `x × e1` by
/// `-β₄(1 + e^{iη})/4 e2` and `x × e2` by `β₅(1 + e^{iη})/4 e1`.
pub fn rigid_weights(betas: &[f64; 6], eta: f64) -> [f64; 3] {
    let t = 0.25 * betas[0] * betas[0] * (2.0 - 2.0 * eta.cos());
    let r = (2.0 + 2.0 * eta.cos()) / 16.0;
    [t + r * betas[4] * betas[4], t + r * betas[3] * betas[3], t]
}

/// Sorted `Λ′` of the six rigid bands: three zeros and `c · eig(W M⁺)`.
pub fn rigid_corrections(betas: &[f64; 6], m_plus: &[[f64; 3]; 3], eta: f64, conv: Convention) -> [f64; 6] {
    let w = rigid_weights(betas, eta).map(f64::sqrt);
    let scaled: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| w[i] * m_plus[i][j] * w[j]));
    let mu = sym_eigenvalues(&scaled);
    let mut out = [0.0, 0.0, 0.0, conv.factor() * mu[0], conv.factor() * mu[1], conv.factor() * mu[2]];
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Three kernel vectors of the rigid multiplicity matrix in the basis
/// `(e1, e2, e3, x × e1, x × e2, x × e3)`.
pub fn rigid_kernel_vectors(betas: &[f64; 6], eta: f64) -> [[C; 6]; 3] {
    let cv = rigid_coupling_vectors(betas);
    let alpha = cv[0].jump(eta)[0];
    let g4 = cv[3].jump(eta)[1];
    let g5 = cv[4].jump(eta)[0];
    let z = C::new(0.0, 0.0);
    let mut k1 = [z; 6];
    k1[0] = g5.conj();
    k1[4] = -alpha.conj();
    let mut k2 = [z; 6];
    k2[1] = g4.conj();
    k2[3] = -alpha.conj();
    let mut k3 = [z; 6];
    k3[5] = C::new(1.0, 0.0);
    [k1, k2, k3]
}

/// Band interval `λ + h [min Λ′, max Λ′]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictedBand {
    pub k: usize,
    pub h: f64,
    pub lambda: f64,
    pub convention: Convention,
    pub lower: f64,
    pub upper: f64,
}

impl PredictedBand {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn predicted_band(curve: &CorrectionCurve, h: f64) -> PredictedBand {
    let (lo, hi) = curve.range();
    PredictedBand {
        k: curve.k,
        h,
        lambda: curve.lambda,
        convention: curve.convention,
        lower: curve.lambda + h * lo,
        upper: curve.lambda + h * hi,
    }
}

/// `λ_k + h Λ′_k(η)` for every band, sorted at each `η`.
pub fn predicted_dispersion(curves: &[CorrectionCurve], h: f64, eta: f64) -> Vec<f64> {
    let mut v: Vec<f64> = curves.iter().map(|c| c.lambda + h * c.eval(eta)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

// ---------------------------------------------------------------------------
// Ansatz

/// Radii of the cut-offs `χ±` around the poles, in cell units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffRadii {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffRadii {
    fn default() -> Self {
        Self { inner: 0.2, outer: 0.4 }
    }
}

/// `1` below `r0`, `0` above `r1`, quintic in between.
fn smooth_step_down(r: f64, r0: f64, r1: f64) -> f64 {
    if r <= r0 {
        1.0
    } else if r >= r1 {
        0.0
    } else {
        let s = (r - r0) / (r1 - r0);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Ingredients of the leading-order eigenvector on the periodicity cell.
pub struct AnsatzParts<'a> {
    pub params: &'a CellParams,
    pub h: f64,
    pub cell: &'a CellMesh,
    pub reduction: &'a FloquetReduction,
    /// Mesh of `ϖ_0` carrying `field`.
    pub template: &'a CellMesh,
    pub field: &'a [f64],
    pub trace_top: [f64; 3],
    pub trace_bottom: [f64; 3],
    pub omega: &'a CellMesh,
    pub units: &'a [UnitSolution; 3],
    pub cutoff: CutoffRadii,
}

fn unit_values(omega: &CellMesh, units: &[UnitSolution; 3], xi: [f64; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|j| match omega.interpolate(&units[j].field, 3, xi) {
        Some(v) => [v[0], v[1], v[2]],
        None => {
            let mut e = [0.0; 3];
            e[j] = if xi[2] > 0.0 { 1.0 } else { -1.0 };
            e
        }
    })
}

/// Reduced nodal vector of
/// `𝒳ʰ u∘a_h + Σ± χ± (V^∓∘τ± - 𝒳ʰ u(P±))` at phase `η`.
pub fn assemble_ansatz(parts: &AnsatzParts<'_>, eta: f64) -> Result<Vec<C>> {
    let p = parts.params;
    let h = parts.h;
    let a = p.a();
    let t = p.ligament_half_width;
    if 3.0 * t * h >= parts.cutoff.inner || parts.cutoff.outer >= 0.5 || parts.cutoff.inner >= parts.cutoff.outer {
        return Err(Error::Asymptotics(format!(
            "cut-offs do not separate at h = {h}: need 3th < S < R < 1/2"
        )));
    }
    let f = 1.0 / (1.0 - a * h);
    let cv = CouplingVector::from_traces(parts.trace_top, parts.trace_bottom);
    let am = cv.mean(eta);
    let bj = cv.jump(eta);
    let back = C::from_polar(1.0, -eta);
    let eps = 1e-9;
    let mut full = vec![C::new(0.0, 0.0); 3 * parts.cell.n_nodes()];
    for (n, x) in parts.cell.nodes.iter().enumerate() {
        let top = x[2] > 0.0;
        let pole = if top { POLE_TOP } else { POLE_BOTTOM };
        let trace = if top { parts.trace_top } else { parts.trace_bottom };
        let mut xi = [(x[0] - pole[0]) / h, (x[1] - pole[1]) / h, (x[2] - pole[2]) / h];
        xi[2] = if top { xi[2].min(-eps) } else { xi[2].max(eps) };
        let r_in = xi[0].abs().max(xi[1].abs()).max(xi[2].abs() - 0.5 * a);
        let cut = 1.0 - smooth_step_down(r_in, 1.5 * t, 3.0 * t);
        let d = ((x[0] - pole[0]).powi(2) + (x[1] - pole[1]).powi(2) + (x[2] - pole[2]).powi(2)).sqrt();
        let chi = smooth_step_down(d, parts.cutoff.inner, parts.cutoff.outer);
        let mut val = [C::new(0.0, 0.0); 3];
        if cut > 0.0 {
            let y = [
                (x[0] * f).clamp(-p.half_x, p.half_x),
                (x[1] * f).clamp(-p.half_y, p.half_y),
                (x[2] * f).clamp(-0.5, 0.5),
            ];
            let u = parts
                .template
                .interpolate(parts.field, 3, y)
                .ok_or_else(|| Error::Asymptotics(format!("point {y:?} outside the limit mesh")))?;
            for c in 0..3 {
                val[c] += C::new(cut * (u[c] - if chi > 0.0 { chi * trace[c] } else { 0.0 }), 0.0);
            }
        }
        if chi > 0.0 {
            let xs = unit_values(parts.omega, parts.units, xi);
            let ph = if top { C::new(1.0, 0.0) } else { back };
            for c in 0..3 {
                let mut v = am[c];
                for j in 0..3 {
                    v += bj[j] * xs[j][c];
                }
                val[c] += v * ph * chi;
            }
        }
        for c in 0..3 {
            full[3 * n + c] = val[c];
        }
    }
    let red = parts.reduction;
    let mut out = vec![C::new(0.0, 0.0); red.n_reduced];
    for (i, &(r, e)) in red.map.iter().enumerate() {
        if e == 0 {
            out[r] = full[i];
        }
    }
    Ok(out)
}

/// Overlap and `H¹` distance between an ansatz and a computed eigenvector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnsatzComparison {
    /// `|⟨U, u⟩_M| / (‖U‖_M ‖u‖_M)`
    pub overlap: f64,
    /// Relative `H¹` error after phase and norm alignment.
    pub h1_error: f64,
}

pub fn compare_ansatz(k: &CsrMatrix<C>, m: &CsrMatrix<C>, ansatz: &[C], eigvec: &[C]) -> AnsatzComparison {
    let mu = m.mul_vec(eigvec);
    let na = m.quadratic_form(ansatz).re.sqrt();
    let ne = m.quadratic_form(eigvec).re.sqrt();
    let ip = dot(ansatz, &mu);
    let overlap = ip.norm() / (na * ne);
    let phase = if ip.norm() > 0.0 { ip / ip.norm() } else { C::new(1.0, 0.0) };
    let diff: Vec<C> = ansatz
        .iter()
        .zip(eigvec)
        .map(|(a, e)| *a * phase * (ne / na) - *e)
        .collect();
    let h1 = |v: &[C]| (k.quadratic_form(v).re + m.quadratic_form(v).re).max(0.0).sqrt();
    AnsatzComparison {
        overlap,
        h1_error: h1(&diff) / h1(eigvec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(d: [f64; 3]) -> [[f64; 3]; 3] {
        [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]]
    }

    #[test]
    fn cosine_form_matches_direct_evaluation() {
        let cv = CouplingVector::from_traces([0.3, -1.2, 0.7], [0.4, 0.1, -0.9]);
        let m = [[0.5, 0.1, 0.0], [0.1, 0.4, 0.05], [0.0, 0.05, 0.9]];
        let etas: Vec<f64> = (0..9).map(|i| i as f64 * 0.7).collect();
        for conv in Convention::ALL {
            let c = CorrectionCurve::new(7, 3.2, 1.0, &cv, &m, conv, &etas);
            for (e, v) in etas.iter().zip(&c.values) {
                assert_relative_eq!(c.eval(*e), *v, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn unit_box_rigid_weights() {
        // unit cube: β1 = 1, β4 = β5 = √6
        let s6 = 6f64.sqrt();
        let betas = [1.0, 1.0, 1.0, s6, s6, s6];
        let w = rigid_weights(&betas, std::f64::consts::PI);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(w[2], 1.0, max_relative = 1e-14);
        let w0 = rigid_weights(&betas, 0.0);
        assert_relative_eq!(w0[0], 1.5, max_relative = 1e-14);
        assert_eq!(w0[2], 0.0);
        let r = rigid_corrections(&betas, &diag([1.0, 2.0, 3.0]), std::f64::consts::PI, Convention::Factor2);
        assert_eq!(&r[..3], &[0.0; 3]);
        assert_relative_eq!(r[3], 2.0, max_relative = 1e-13);
        assert_relative_eq!(r[5], 6.0, max_relative = 1e-13);
    }

    #[test]
    fn rigid_matrix_kernel() {
        let betas = [1.05, 1.05, 1.05, 2.58, 2.71, 3.1];
        let m = [[0.5, 0.1, 0.0], [0.1, 0.4, 0.05], [0.0, 0.05, 0.9]];
        let cvs = rigid_coupling_vectors(&betas);
        for eta in [0.3, 1.7, 2.9, 4.4] {
            let b = MultiplicityMatrix::new(&cvs, &m, eta).unwrap();
            assert_eq!(b.rank(1e-10), 3);
            for kv in rigid_kernel_vectors(&betas, eta) {
                let r = b.apply(&kv);
                assert!(r.iter().all(|z| z.norm() < 1e-13), "{r:?}");
            }
            let closed = rigid_corrections(&betas, &m, eta, Convention::Factor1);
            for (x, y) in closed.iter().zip(&b.corrections(0.0, 1.0, Convention::Factor1)) {
                assert!((x - y).abs() < 1e-12, "{closed:?}");
            }
        }
    }

    #[test]
    fn band_hull_from_extremes() {
        let cv = CouplingVector::from_traces([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]);
        let m = diag([0.0, 0.0, 1.0]);
        let c = CorrectionCurve::new(6, 10.0, 0.0, &cv, &m, Convention::Factor2, &[0.0, 1.0]);
        // b(η) = (e^{iη} - 1)/2 e3, so Λ′ = 1 - cos η
        assert_relative_eq!(c.c0, 1.0, max_relative = 1e-14);
        assert_relative_eq!(c.c1, -1.0, max_relative = 1e-14);
        let band = predicted_band(&c, 0.1);
        assert_relative_eq!(band.lower, 10.0, max_relative = 1e-14);
        assert_relative_eq!(band.upper, 10.2, max_relative = 1e-14);
    }
}
