//! Direct Floquet sweeps, band diagrams and gaps, and the studies comparing
//! them with the asymptotic formula.

use std::sync::Arc;

use faer::{Mat, Side};
use log::{info, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    assemble_ansatz, compare_ansatz, rigid_corrections, rigid_kernel_vectors, AnsatzParts, Convention, CorrectionCurve,
    CouplingVector, CutoffRadii, MultiplicityMatrix,
};
use crate::cell_problem::{solve_unit_problems, UnitSolution};
use crate::eigen::{lumped_mass, residual, solve_gevp_from, EigenOptions, ShiftInvert, Spectrum};
use crate::elastic::HookeTensor;
use crate::error::{Error, Result};
use crate::fem::{assemble, AssembledPair, FloquetReduction, QuasiPeriodicSystem, StrainOperator};
use crate::sparse::dot;
use crate::geometry::{
    build_body_template, build_periodicity_cell, build_truncated_omega, CellMesh, CellParams, Junction, MeshSpec,
};
use crate::limit::{align_rigid_cluster, rigid_basis, solve_limit_assembled, LimitOptions, LimitSpectrum, RigidBasis};

type C = Complex64;

/// `ϖ_0` meshed consistently with the cell at `h`, and its aligned spectrum.
pub struct LimitModel {
    pub h: f64,
    pub mesh: CellMesh,
    pub spectrum: LimitSpectrum,
    pub basis: RigidBasis,
}

impl LimitModel {
    pub fn build(params: &CellParams, a: &HookeTensor, h: f64, spec: &MeshSpec, opts: &LimitOptions) -> Result<Self> {
        let mesh = build_body_template(params, h, spec)?;
        let pair = assemble(&mesh, a, opts.density)?;
        let raw = solve_limit_assembled(&mesh, &pair, opts)?;
        let basis = rigid_basis(&mesh);
        let spectrum = align_rigid_cluster(&raw, &basis, &mesh, &pair.m)?;
        Ok(Self {
            h,
            mesh,
            spectrum,
            basis,
        })
    }
}

/// Assembled periodicity cell with its Floquet reduction.
pub struct CellModel {
    pub h: f64,
    pub junction: Junction,
    pub mesh: CellMesh,
    pub pair: AssembledPair,
    pub reduction: Arc<FloquetReduction>,
    pub strain: StrainOperator,
}

impl CellModel {
    pub fn build(params: &CellParams, a: &HookeTensor, h: f64, spec: &MeshSpec) -> Result<Self> {
        let mesh = build_periodicity_cell(params, h, spec)?;
        let pair = assemble(&mesh, a, 1.0)?;
        let reduction = FloquetReduction::new(&pair, &mesh)?;
        let strain = StrainOperator::new(&mesh, a)?;
        Ok(Self {
            h,
            junction: params.junction,
            mesh,
            pair,
            reduction,
            strain,
        })
    }

    pub fn dim(&self) -> usize {
        self.reduction.n_reduced
    }

    pub fn system(&self, eta: f64) -> QuasiPeriodicSystem<C> {
        QuasiPeriodicSystem::from_reduction(&self.pair, &self.reduction, eta)
    }

    /// Eigenpairs at `eta`. Eigenvalues far below the rest of the computed
    /// spectrum are refined to high relative accuracy, see
    /// [`CellModel::refine_small`].
    pub fn solve(&self, eta: f64, opts: &EigenOptions, start: &[Vec<C>]) -> Result<Spectrum<C>> {
        let s = self.system(eta);
        let mut sp = solve_gevp_from(&s.k, &s.m, opts, Some(self.reduction.symbolic()), start)?;
        self.refine_small(&s, eta, &mut sp)?;
        Ok(sp)
    }

    /// Nearly rigid eigenpairs have `Λ` close to the rounding level
    /// `ε‖K‖` of `uᴴKu`. For a cluster below `SMALL · Λ_max`, separated
    /// from the next eigenvalue by a factor `SEPARATION`, one block inverse iteration
    /// step at the cluster top is followed by a Rayleigh-Ritz step whose
    /// stiffness is evaluated from element strains.
    pub fn refine_small(&self, sys: &QuasiPeriodicSystem<C>, eta: f64, sp: &mut Spectrum<C>) -> Result<()> {
        const SMALL: f64 = 1e-4;
        const SEPARATION: f64 = 1e2;
        let n = sp.eigenvalues.len();
        let top = sp.eigenvalues.last().copied().unwrap_or(0.0);
        let floor = 1e-10 * top;
        let small = sp.eigenvalues.iter().take_while(|&&l| l < SMALL * top).count();
        // split the small eigenvalues at their widest relative gap
        let Some((count, ratio)) = (1..=small.min(n - 1))
            .map(|i| (i, sp.eigenvalues[i] / sp.eigenvalues[i - 1].max(floor)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return Ok(());
        };
        if ratio < SEPARATION {
            return Ok(());
        }
        let cluster_top = sp.eigenvalues[count - 1].max(floor);
        let op = ShiftInvert::new(&sys.k, &sys.m, -cluster_top, Some(self.reduction.symbolic()))?;
        let mut ys: Vec<Vec<C>> = sp.vectors[..count]
            .iter()
            .map(|v| {
                let mut y = op.solve(&sys.m.mul_vec(v));
                let nrm = sys.m.quadratic_form(&y).re.sqrt();
                y.iter_mut().for_each(|z| *z /= nrm);
                y
            })
            .collect();
        // M-orthonormalize
        let mv: Vec<Vec<C>> = ys.iter().map(|y| sys.m.mul_vec(y)).collect();
        let gm = Mat::<C>::from_fn(count, count, |i, j| dot(&ys[i], &mv[j]));
        let (w, _) = whiten(&gm)?;
        ys = combine(&ys, &w);
        let full: Vec<Vec<C>> = ys.iter().map(|y| self.reduction.expand(y, eta)).collect();
        let g = self.strain.gram(&full);
        let gk = Mat::<C>::from_fn(count, count, |i, j| 0.5 * (g[i][j] + g[j][i].conj()));
        let evd = gk
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization(format!("refinement eigenproblem: {e:?}")))?;
        let q = evd.U().to_owned();
        let vals: Vec<f64> = (0..count).map(|i| evd.S()[i].re).collect();
        let vecs = combine(&ys, &q);
        let lumped = lumped_mass(&sys.m);
        for (i, (l, v)) in vals.into_iter().zip(vecs).enumerate() {
            sp.residuals[i] = residual(&sys.k, &sys.m, &lumped, &v).1;
            sp.eigenvalues[i] = l;
            sp.vectors[i] = v;
        }
        Ok(())
    }

    /// Eigenvalues over the grid, each solve warm-started from the previous.
    pub fn sweep(&self, etas: &[f64], opts: &EigenOptions) -> BandDiagram {
        let mut values = Vec::with_capacity(etas.len());
        let mut residuals = Vec::with_capacity(etas.len());
        let mut failures = Vec::new();
        let mut prev: Vec<Vec<C>> = Vec::new();
        for &eta in etas {
            match self.solve(eta, opts, &prev) {
                Ok(s) => {
                    info!("h = {} eta = {eta:.4}: {} restarts", self.h, s.restarts);
                    residuals.push(s.residuals.iter().cloned().fold(0.0, f64::max));
                    values.push(Some(s.eigenvalues));
                    prev = s.vectors;
                }
                Err(e) => {
                    warn!("h = {} eta = {eta:.4}: {e}", self.h);
                    failures.push(format!("eta = {eta}: {e}"));
                    residuals.push(f64::NAN);
                    values.push(None);
                    prev.clear();
                }
            }
        }
        BandDiagram {
            h: self.h,
            junction: self.junction,
            n_dofs: self.dim(),
            etas: etas.to_vec(),
            values,
            residuals,
            failures,
        }
    }
}

/// `W` with `Wᴴ G W = I` for a Hermitian positive definite `G`.
fn whiten(g: &Mat<C>) -> Result<(Mat<C>, Vec<f64>)> {
    let n = g.nrows();
    let h = Mat::<C>::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)].conj()));
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("mass projection: {e:?}")))?;
    let s: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Factorization("refined block is rank deficient".into()));
    }
    let u = evd.U();
    Ok((Mat::<C>::from_fn(n, n, |i, j| u[(i, j)] / s[j].sqrt()), s))
}

/// Columns `Σ_i y_i c[i][j]`.
fn combine(ys: &[Vec<C>], c: &Mat<C>) -> Vec<Vec<C>> {
    let len = ys.first().map_or(0, Vec::len);
    (0..c.ncols())
        .map(|j| {
            let mut out = vec![C::new(0.0, 0.0); len];
            for (i, y) in ys.iter().enumerate() {
                let f = c[(i, j)];
                for (o, v) in out.iter_mut().zip(y) {
                    *o += v * f;
                }
            }
            out
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandDiagram {
    pub h: f64,
    pub junction: Junction,
    pub n_dofs: usize,
    pub etas: Vec<f64>,
    /// `values[i][k] = Λ_k(η_i)`, ascending in `k`; `None` marks a failed solve.
    pub values: Vec<Option<Vec<f64>>>,
    pub residuals: Vec<f64>,
    pub failures: Vec<String>,
}

/// Closed band hull `[min_η Λ_k, max_η Λ_k]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandInterval {
    /// 1-based.
    pub band: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// 1-based index `j` of the band below the gap.
    pub below: usize,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    /// `(λ_j, λ_{j+1})`
    pub limit_pair: Option<[f64; 2]>,
}

impl BandDiagram {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn n_bands(&self) -> usize {
        self.values.iter().flatten().map(Vec::len).min().unwrap_or(0)
    }

    /// Completed samples `(η, Λ_k(η))`.
    pub fn band(&self, k: usize) -> Vec<(f64, f64)> {
        self.etas
            .iter()
            .zip(&self.values)
            .filter_map(|(&e, v)| v.as_ref().map(|v| (e, v[k])))
            .collect()
    }

    pub fn intervals(&self) -> Vec<BandInterval> {
        (0..self.n_bands())
            .map(|k| {
                let b = self.band(k);
                BandInterval {
                    band: k + 1,
                    lower: b.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
                    upper: b.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    /// Largest `|Λ_k(η) - Λ_k(2π - η)| / max(|Λ_k(η)|, |Λ_k(2π - η)|)` over
    /// mirrored pairs. Pairs that are both numerically zero (below `1e-10`
    /// times the largest computed eigenvalue) count as equal.
    pub fn symmetry_defect(&self) -> f64 {
        let tau = std::f64::consts::TAU;
        let scale = self.values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let zero = 1e-10 * scale;
        let mut worst: f64 = 0.0;
        for (i, &e) in self.etas.iter().enumerate() {
            let Some(j) = self.etas.iter().position(|&f| (f - (tau - e)).abs() < 1e-9) else {
                continue;
            };
            if let (Some(a), Some(b)) = (&self.values[i], &self.values[j]) {
                for (x, y) in a.iter().zip(b) {
                    let m = x.abs().max(y.abs());
                    if m > zero {
                        worst = worst.max((x - y).abs() / m);
                    }
                }
            }
        }
        worst
    }

    /// The samples at the given subset of the grid.
    pub fn restricted(&self, etas: &[f64]) -> BandDiagram {
        let keep: Vec<usize> = (0..self.etas.len())
            .filter(|&i| etas.iter().any(|e| (e - self.etas[i]).abs() < 1e-12))
            .collect();
        BandDiagram {
            h: self.h,
            junction: self.junction,
            n_dofs: self.n_dofs,
            etas: keep.iter().map(|&i| self.etas[i]).collect(),
            values: keep.iter().map(|&i| self.values[i].clone()).collect(),
            residuals: keep.iter().map(|&i| self.residuals[i]).collect(),
            failures: self.failures.clone(),
        }
    }

    /// `eta,band1,...,bandN`; failed samples are written as `nan`.
    pub fn to_csv(&self) -> String {
        let n = self.n_bands();
        let mut s = String::from("eta");
        for k in 1..=n {
            s.push_str(&format!(",band{k}"));
        }
        s.push('\n');
        for (e, v) in self.etas.iter().zip(&self.values) {
            s.push_str(&format!("{e:.12e}"));
            for k in 0..n {
                match v {
                    Some(v) => s.push_str(&format!(",{:.12e}", v[k])),
                    None => s.push_str(",nan"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(h: f64, junction: Junction, s: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("dispersion csv: {m}"));
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"eta") {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let n = cols.len() - 1;
        let mut etas = Vec::new();
        let mut values = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if f.len() != n + 1 {
                return Err(bad(format!("row with {} columns, expected {}", f.len(), n + 1)));
            }
            etas.push(f[0]);
            values.push(if f[1..].iter().any(|v| v.is_nan()) { None } else { Some(f[1..].to_vec()) });
        }
        Ok(Self {
            h,
            junction,
            n_dofs: 0,
            residuals: vec![f64::NAN; etas.len()],
            failures: Vec::new(),
            etas,
            values,
        })
    }
}

/// Maximal open intervals between the union of the closed band hulls.
pub fn detect_gaps(diagram: &BandDiagram, lambdas: &[f64]) -> Vec<Gap> {
    let iv = diagram.intervals();
    let mut out = Vec::new();
    let mut top = f64::NEG_INFINITY;
    for j in 0..iv.len().saturating_sub(1) {
        top = top.max(iv[j].upper);
        let bottom = iv[j + 1..].iter().map(|b| b.lower).fold(f64::INFINITY, f64::min);
        if bottom > top {
            out.push(Gap {
                below: j + 1,
                lower: top,
                upper: bottom,
                width: bottom - top,
                limit_pair: (j + 1 < lambdas.len()).then(|| [lambdas[j], lambdas[j + 1]]),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Asymptotic predictions

/// `Λ′_k(η)` for every computed limit eigenpair; clusters are resolved
/// through their multiplicity matrix, ascending within the cluster.
pub fn corrections_at(limit: &LimitSpectrum, m_plus: &[[f64; 3]; 3], a: f64, conv: Convention, eta: f64) -> Result<Vec<f64>> {
    let n = limit.eigenvalues.len();
    let mut out = vec![0.0; n];
    for cl in &limit.clusters {
        let cvs: Vec<CouplingVector> = cl
            .iter()
            .map(|&k| CouplingVector::from_traces(limit.trace_top[k], limit.trace_bottom[k]))
            .collect();
        let lambda = if cl[0] < limit.rigid_count {
            0.0
        } else {
            cl.iter().map(|&k| limit.eigenvalues[k]).sum::<f64>() / cl.len() as f64
        };
        let corr = MultiplicityMatrix::new(&cvs, m_plus, eta)?.corrections(lambda, a, conv);
        for (&k, c) in cl.iter().zip(corr) {
            out[k] = c;
        }
    }
    Ok(out)
}

/// `λ_k + h Λ′_k(η)`, sorted.
pub fn predicted_values(limit: &LimitSpectrum, m_plus: &[[f64; 3]; 3], a: f64, conv: Convention, h: f64, eta: f64) -> Result<Vec<f64>> {
    let corr = corrections_at(limit, m_plus, a, conv, eta)?;
    let mut v: Vec<f64> = corr
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let l = if k < limit.rigid_count { 0.0 } else { limit.eigenvalues[k] };
            l + h * c
        })
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(v)
}

/// `max_η |Λ_k(η) - pred_k(η)|` for each band.
pub fn asymptotic_errors(diagram: &BandDiagram, limit: &LimitSpectrum, m_plus: &[[f64; 3]; 3], a: f64, conv: Convention) -> Result<Vec<f64>> {
    let n = diagram.n_bands().min(limit.eigenvalues.len());
    let mut err = vec![0.0f64; n];
    for (e, v) in diagram.etas.iter().zip(&diagram.values) {
        let Some(v) = v else { continue };
        let p = predicted_values(limit, m_plus, a, conv, diagram.h, *e)?;
        for k in 0..n {
            err[k] = err[k].max((v[k] - p[k]).abs());
        }
    }
    Ok(err)
}

/// `max_η |Λ_k(η) - λ_k|` for each band.
pub fn zeroth_order_errors(diagram: &BandDiagram, limit: &LimitSpectrum) -> Vec<f64> {
    let n = diagram.n_bands().min(limit.eigenvalues.len());
    (0..n)
        .map(|k| {
            let l = if k < limit.rigid_count { 0.0 } else { limit.eigenvalues[k] };
            diagram.band(k).iter().map(|p| (p.1 - l).abs()).fold(0.0, f64::max)
        })
        .collect()
}

/// Least-squares slope of `ln e` against `ln h`, with the RMS log residual.
pub fn loglog_slope(hs: &[f64], es: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(es)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&h, &e)| (h.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let res = (pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / n).sqrt();
    (slope, res)
}

/// Fit `e ≈ C h`: the constant and `‖e - Ch‖ / ‖e‖`.
pub fn linear_fit(hs: &[f64], es: &[f64]) -> (f64, f64) {
    let c = hs.iter().zip(es).map(|(h, e)| h * e).sum::<f64>() / hs.iter().map(|h| h * h).sum::<f64>();
    let r = hs.iter().zip(es).map(|(h, e)| (e - c * h).powi(2)).sum::<f64>().sqrt();
    let n = es.iter().map(|e| e * e).sum::<f64>().sqrt();
    (c, if n > 0.0 { r / n } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Convergence study

/// One value of `h` of the study: primary and control discretizations.
pub struct StudyLevel<'a> {
    pub h: f64,
    pub limit: &'a LimitSpectrum,
    pub diagram: &'a BandDiagram,
    pub control: Option<(&'a LimitSpectrum, &'a BandDiagram)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandConvergence {
    /// 1-based.
    pub band: usize,
    pub lambda: f64,
    pub errors: Vec<f64>,
    pub control_errors: Option<Vec<f64>>,
    /// `|e_primary - e_control|` per `h`.
    pub floor: Option<Vec<f64>>,
    pub slope: f64,
    pub slope_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConventionReport {
    pub convention: Convention,
    pub bands: Vec<BandConvergence>,
}

/// Zeroth-order enclosure `|Λ_k - λ_k| ≤ C h`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnclosureFit {
    pub band: usize,
    pub deviations: Vec<f64>,
    pub c_fit: f64,
    /// `max_h dev / h`
    pub c_enclosing: f64,
    pub fit_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub target_band: usize,
    pub winner: Option<Convention>,
    pub winning_slope: Option<f64>,
    pub losing_slope: Option<f64>,
    pub mesh_limited: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub junction: Junction,
    pub h: Vec<f64>,
    pub m_plus: [[f64; 3]; 3],
    pub conventions: Vec<ConventionReport>,
    pub enclosure: Vec<EnclosureFit>,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn band(&self, conv: Convention, band: usize) -> Option<&BandConvergence> {
        self.conventions
            .iter()
            .find(|c| c.convention == conv)
            .and_then(|c| c.bands.iter().find(|b| b.band == band))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Errors under each convention, slopes, floors, and the verdict on
/// `target_band` (1-based). `m_control` is the polarization matrix of the
/// control discretization.
pub fn convergence_study(
    levels: &[StudyLevel<'_>],
    m_plus: &[[f64; 3]; 3],
    m_control: Option<&[[f64; 3]; 3]>,
    a: f64,
    conventions: &[Convention],
    target_band: usize,
) -> Result<ConvergenceReport> {
    if levels.len() < 2 {
        return Err(Error::InvalidParameter("convergence study needs at least two values of h".into()));
    }
    let hs: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let junction = levels[0].diagram.junction;
    let n = levels
        .iter()
        .map(|l| l.diagram.n_bands().min(l.limit.eigenvalues.len()))
        .min()
        .unwrap_or(0);
    let mut reports = Vec::new();
    for &conv in conventions {
        let primary: Vec<Vec<f64>> = levels
            .iter()
            .map(|l| asymptotic_errors(l.diagram, l.limit, m_plus, a, conv))
            .collect::<Result<_>>()?;
        let control: Option<Vec<Vec<f64>>> = match (m_control, levels.iter().all(|l| l.control.is_some())) {
            (Some(mc), true) => Some(
                levels
                    .iter()
                    .map(|l| {
                        let (lim, d) = l.control.unwrap();
                        asymptotic_errors(d, lim, mc, a, conv)
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => None,
        };
        let bands = (0..n)
            .map(|k| {
                let errors: Vec<f64> = primary.iter().map(|e| e[k]).collect();
                let control_errors: Option<Vec<f64>> = control.as_ref().map(|c| c.iter().map(|e| e[k]).collect());
                let floor = control_errors
                    .as_ref()
                    .map(|c| c.iter().zip(&errors).map(|(x, y)| (x - y).abs()).collect());
                let (slope, slope_residual) = loglog_slope(&hs, &errors);
                BandConvergence {
                    band: k + 1,
                    lambda: levels.last().unwrap().limit.eigenvalues[k],
                    errors,
                    control_errors,
                    floor,
                    slope,
                    slope_residual,
                }
            })
            .collect();
        reports.push(ConventionReport { convention: conv, bands });
    }
    let enclosure = (0..n)
        .map(|k| {
            let dev: Vec<f64> = levels.iter().map(|l| zeroth_order_errors(l.diagram, l.limit)[k]).collect();
            let (c_fit, fit_residual) = linear_fit(&hs, &dev);
            EnclosureFit {
                band: k + 1,
                c_enclosing: dev.iter().zip(&hs).map(|(d, h)| d / h).fold(0.0, f64::max),
                deviations: dev,
                c_fit,
                fit_residual,
            }
        })
        .collect();
    let mut report = ConvergenceReport {
        junction,
        h: hs,
        m_plus: *m_plus,
        conventions: reports,
        enclosure,
        verdict: Verdict {
            target_band,
            winner: None,
            winning_slope: None,
            losing_slope: None,
            mesh_limited: false,
            note: String::new(),
        },
    };
    report.verdict = verdict(&report, target_band);
    Ok(report)
}

fn verdict(report: &ConvergenceReport, target: usize) -> Verdict {
    let mut v = Verdict {
        target_band: target,
        winner: None,
        winning_slope: None,
        losing_slope: None,
        mesh_limited: false,
        note: String::new(),
    };
    let mut cands: Vec<(Convention, &BandConvergence)> = report
        .conventions
        .iter()
        .filter_map(|c| c.bands.iter().find(|b| b.band == target).map(|b| (c.convention, b)))
        .collect();
    if cands.is_empty() {
        v.note = format!("band {target} not available");
        return v;
    }
    cands.sort_by(|x, y| {
        y.1.slope
            .partial_cmp(&x.1.slope)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.errors.last().partial_cmp(&y.1.errors.last()).unwrap_or(std::cmp::Ordering::Equal))
    });
    let (conv, best) = cands[0];
    let idx = best.errors.len() - 1;
    if let Some(f) = &best.floor {
        if f[idx] > 0.5 * best.errors[idx] {
            v.mesh_limited = true;
            v.note = format!(
                "mesh-limited: floor {:.3e} exceeds half the error {:.3e} at h = {}",
                f[idx], best.errors[idx], report.h[idx]
            );
            return v;
        }
    } else {
        v.note = "no control discretization; floor not assessed".into();
    }
    v.winner = Some(conv);
    v.winning_slope = Some(best.slope);
    v.losing_slope = cands.get(1).map(|c| c.1.slope);
    v
}

// ---------------------------------------------------------------------------
// Checks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WidthCheck {
    pub band: usize,
    pub h: f64,
    pub convention: Convention,
    pub measured: f64,
    /// `h |Λ′(0) - Λ′(π)|`
    pub predicted: f64,
    pub ratio: f64,
    /// `A_kᵀ M⁺ B_k`, the coefficient governing the width.
    pub a_m_b: f64,
    /// `|u_k(P⁻)|`, the weaker criterion.
    pub bottom_trace: f64,
}

pub fn band_width_check(
    diagram: &BandDiagram,
    limit: &LimitSpectrum,
    m_plus: &[[f64; 3]; 3],
    a: f64,
    conv: Convention,
    band: usize,
) -> Result<WidthCheck> {
    let k = band - 1;
    if !limit.is_simple(k) || k < limit.rigid_count {
        return Err(Error::Asymptotics(format!("band {band} is not simple")));
    }
    let cv = CouplingVector::from_traces(limit.trace_top[k], limit.trace_bottom[k]);
    let curve = CorrectionCurve::new(k, limit.eigenvalues[k], a, &cv, m_plus, conv, &[]);
    let (lo, hi) = curve.range();
    let iv = diagram.intervals()[k];
    let measured = iv.upper - iv.lower;
    let predicted = diagram.h * (hi - lo);
    let a_m_b: f64 = (0..3).map(|i| (0..3).map(|j| cv.a[i] * m_plus[i][j] * cv.b[j]).sum::<f64>()).sum();
    let tb = limit.trace_bottom[k];
    Ok(WidthCheck {
        band,
        h: diagram.h,
        convention: conv,
        measured,
        predicted,
        ratio: measured / predicted,
        a_m_b,
        bottom_trace: (tb[0] * tb[0] + tb[1] * tb[1] + tb[2] * tb[2]).sqrt(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidSample {
    pub eta: f64,
    /// `Λ_j/h`, `j = 1..6`.
    pub measured: [f64; 6],
    /// Sorted predictions, three zeros first.
    pub predicted: [f64; 6],
    /// Largest of the lower three measured ratios over the smallest nonzero prediction.
    pub zero_ratio: f64,
    /// Largest relative deviation of the upper three.
    pub max_deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidCheck {
    pub h: f64,
    pub convention: Convention,
    pub samples: Vec<RigidSample>,
    /// Largest rank of `B(η)` over the samples.
    pub max_rank: usize,
    /// Largest `|B(η) v|` over the closed-form kernel vectors.
    pub kernel_residual: f64,
    /// Largest gap between `c · eig B(η)` and the closed-form corrections.
    pub closed_form_gap: f64,
}

impl RigidCheck {
    pub fn worst_zero_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.zero_ratio).fold(0.0, f64::max)
    }

    pub fn worst_deviation(&self) -> f64 {
        self.samples.iter().map(|s| s.max_deviation).fold(0.0, f64::max)
    }
}

/// Lowest six bands against the rigid corrections. Samples where the
/// prediction has fewer than three nonzero values (`η = 0`) are skipped.
pub fn rigid_band_check(
    diagram: &BandDiagram,
    limit: &LimitSpectrum,
    betas: &[f64; 6],
    m_plus: &[[f64; 3]; 3],
    conv: Convention,
) -> Result<RigidCheck> {
    if !limit.rigid_aligned || limit.rigid_count != 6 {
        return Err(Error::Asymptotics("rigid check needs the aligned rigid cluster".into()));
    }
    let cvs: Vec<CouplingVector> = (0..6)
        .map(|k| CouplingVector::from_traces(limit.trace_top[k], limit.trace_bottom[k]))
        .collect();
    let h = diagram.h;
    let mut samples = Vec::new();
    let mut max_rank = 0;
    let mut kernel_residual: f64 = 0.0;
    let mut closed_form_gap: f64 = 0.0;
    for (&eta, v) in diagram.etas.iter().zip(&diagram.values) {
        let b = MultiplicityMatrix::new(&cvs, m_plus, eta)?;
        max_rank = max_rank.max(b.rank(1e-8));
        for kv in rigid_kernel_vectors(betas, eta) {
            let r = b.apply(&kv);
            kernel_residual = kernel_residual.max(r.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        let predicted = rigid_corrections(betas, m_plus, eta, conv);
        for (x, y) in b.corrections(0.0, 0.0, conv).iter().zip(&predicted) {
            closed_form_gap = closed_form_gap.max((x - y).abs());
        }
        let Some(v) = v else { continue };
        let smallest = predicted[3];
        if !(smallest > 1e-12 * predicted[5]) {
            continue;
        }
        let measured: [f64; 6] = std::array::from_fn(|j| v[j] / h);
        let zero_ratio = measured[..3].iter().map(|m| m.abs()).fold(0.0, f64::max) / smallest;
        let max_deviation = (3..6)
            .map(|j| (measured[j] - predicted[j]).abs() / predicted[j])
            .fold(0.0, f64::max);
        samples.push(RigidSample {
            eta,
            measured,
            predicted,
            zero_ratio,
            max_deviation,
        });
    }
    Ok(RigidCheck {
        h,
        convention: conv,
        samples,
        max_rank,
        kernel_residual,
        closed_form_gap,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnsatzSample {
    pub h: f64,
    pub overlap: f64,
    pub h1_error: f64,
    /// Overlap of the ansatz with the eigenvector of the next band.
    pub wrong_band_overlap: f64,
    /// `‖𝒰‖_{L²}`
    pub ansatz_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnsatzCheck {
    pub band: usize,
    pub eta: f64,
    pub samples: Vec<AnsatzSample>,
}

impl AnsatzCheck {
    pub fn monotone(&self) -> bool {
        let mut s: Vec<&AnsatzSample> = self.samples.iter().collect();
        s.sort_by(|a, b| b.h.partial_cmp(&a.h).unwrap());
        s.windows(2).all(|w| w[1].h1_error < w[0].h1_error)
    }
}

/// Unit solutions on one truncated domain, reused across `h`.
pub struct InnerSolutions {
    pub mesh: CellMesh,
    pub units: [UnitSolution; 3],
}

impl InnerSolutions {
    pub fn build(params: &CellParams, a: &HookeTensor, rho: f64, spec: &MeshSpec) -> Result<Self> {
        let mesh = build_truncated_omega(params, rho, spec)?;
        let units = solve_unit_problems(&mesh, a)?;
        Ok(Self { mesh, units })
    }
}

/// Ansatz of band `band` (1-based) against the direct eigenvector at `eta`.
pub fn ansatz_sample(
    params: &CellParams,
    limit: &LimitModel,
    cell: &CellModel,
    inner: &InnerSolutions,
    band: usize,
    eta: f64,
    opts: &EigenOptions,
) -> Result<AnsatzSample> {
    let k = band - 1;
    let spec = &limit.spectrum;
    if k < spec.rigid_count || !spec.is_simple(k) || k + 1 >= opts.n_eigs {
        return Err(Error::Asymptotics(format!("band {band} is not a simple elastic band below n_eigs")));
    }
    let parts = AnsatzParts {
        params,
        h: cell.h,
        cell: &cell.mesh,
        reduction: &cell.reduction,
        template: &limit.mesh,
        field: &spec.vectors[k],
        trace_top: spec.trace_top[k],
        trace_bottom: spec.trace_bottom[k],
        omega: &inner.mesh,
        units: &inner.units,
        cutoff: CutoffRadii::default(),
    };
    let ansatz = assemble_ansatz(&parts, eta)?;
    let sys = cell.system(eta);
    let sp = solve_gevp_from(&sys.k, &sys.m, opts, Some(cell.reduction.symbolic()), &[])?;
    let cmp = compare_ansatz(&sys.k, &sys.m, &ansatz, &sp.vectors[k]);
    let wrong = compare_ansatz(&sys.k, &sys.m, &ansatz, &sp.vectors[k + 1]);
    Ok(AnsatzSample {
        h: cell.h,
        overlap: cmp.overlap,
        h1_error: cmp.h1_error,
        wrong_band_overlap: wrong.overlap,
        ansatz_norm: sys.m.quadratic_form(&ansatz).re.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagram(values: Vec<Vec<f64>>, etas: Vec<f64>) -> BandDiagram {
        BandDiagram {
            h: 0.1,
            junction: Junction::Aperture,
            n_dofs: 0,
            residuals: vec![0.0; etas.len()],
            failures: vec![],
            values: values.into_iter().map(Some).collect(),
            etas,
        }
    }

    #[test]
    fn gaps_between_hulls() {
        let d = diagram(
            vec![vec![0.0, 1.0, 1.5], vec![0.5, 1.2, 3.0], vec![0.2, 1.1, 2.0]],
            vec![0.0, 1.0, 2.0],
        );
        // hulls [0, 0.5], [1, 1.2], [1.5, 3]
        let g = detect_gaps(&d, &[0.0, 1.0, 2.0]);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].below, 1);
        assert!((g[0].width - 0.5).abs() < 1e-15);
        assert_eq!(g[0].limit_pair, Some([0.0, 1.0]));
        assert_eq!(g[1].below, 2);
        assert!((g[1].width - 0.3).abs() < 1e-15);
        assert_eq!(g[1].limit_pair, Some([1.0, 2.0]));
    }

    #[test]
    fn overlapping_bands_have_no_gap() {
        let d = diagram(vec![vec![0.0, 1.0], vec![1.5, 1.6]], vec![0.0, 1.0]);
        assert!(detect_gaps(&d, &[]).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let tau = std::f64::consts::TAU;
        let d = diagram(vec![vec![0.0, 1.0], vec![0.1, 1.25], vec![0.0, 1.0]], vec![0.0, tau / 2.0, tau]);
        let back = BandDiagram::from_csv(0.1, Junction::Aperture, &d.to_csv()).unwrap();
        assert_eq!(back.values, d.values);
        assert!(d.to_csv().starts_with("eta,band1,band2\n"));
        assert_eq!(d.symmetry_defect(), 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let hs = [0.1, 0.07, 0.05];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
        let (s, r) = loglog_slope(&hs, &es);
        assert!((s - 1.5).abs() < 1e-12 && r < 1e-12);
        let (c, res) = linear_fit(&hs, &[0.2, 0.14, 0.1]);
        assert!((c - 2.0).abs() < 1e-12 && res < 1e-12);
    }
}
