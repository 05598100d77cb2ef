//! Shift-invert block Krylov eigensolver for Hermitian definite pencils.
//!
//! The operator `OP = (K - σM)^{-1} M` is self-adjoint in the `M` inner
//! product; its largest eigenvalues `θ = 1/(λ - σ)` belong to the eigenvalues
//! `λ` just above the shift. The basis is expanded block by block with full
//! `M`-orthogonalization, the Ritz values come from the dense projected
//! matrix `Vᴴ M OP V`, and the basis is thick-restarted on the wanted Ritz
//! vectors. A block of size `b` resolves eigenvalues of multiplicity up to
//! `b`; rank-deficient candidates are replaced by fresh random vectors.

use std::sync::{Arc, OnceLock};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::linalg::matmul::matmul;
use faer::{Accum, Conj, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{dot, norm, CsrMatrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenOptions {
    pub n_eigs: usize,
    pub shift: f64,
    /// Bound on `‖Ku - ΛMu‖_{D⁻¹} / ((1 + |Λ|) ‖u‖_M)`, `D` the lumped mass.
    pub tol: f64,
    pub block: usize,
    /// Largest basis size; `0` picks one from `n_eigs` and `block`.
    pub max_basis: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            n_eigs: 6,
            shift: -1.0,
            tol: 1e-8,
            block: 6,
            max_basis: 0,
            max_restarts: 60,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Spectrum<T> {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `M`-orthonormal.
    pub vectors: Vec<Vec<T>>,
    pub residuals: Vec<f64>,
    pub shift: f64,
    pub restarts: usize,
    pub solves: usize,
}

/// Symbolic Cholesky analysis shared by all matrices with one pattern.
///
/// With an explicit elimination order (for example a nested dissection of
/// the mesh) the analysis skips the minimum degree heuristic.
#[derive(Debug, Default)]
pub struct SymbolicCache {
    order: Option<(Vec<usize>, Vec<usize>)>,
    cell: OnceLock<Arc<SymbolicCholesky<usize>>>,
}

impl SymbolicCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// `order[k]` is the index eliminated at step `k`.
    pub fn with_order(order: Vec<usize>) -> Self {
        let mut inv = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            inv[i] = k;
        }
        Self {
            order: Some((order, inv)),
            cell: OnceLock::new(),
        }
    }

    fn get_or_analyze<T: Scalar>(&self, a: &CsrMatrix<T>, vals: &[T]) -> Result<Arc<SymbolicCholesky<usize>>> {
        if let Some(s) = self.cell.get() {
            return Ok(Arc::clone(s));
        }
        let sym = a.with_csc(vals, |mat| {
            let ord = match &self.order {
                Some((fwd, inv)) if fwd.len() == a.n => {
                    SymmetricOrdering::Custom(faer::perm::PermRef::new_checked(fwd, inv, a.n))
                }
                _ => SymmetricOrdering::Amd,
            };
            factorize_symbolic_cholesky(mat.symbolic(), Side::Lower, ord, Default::default())
                .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))
        })?;
        let sym = Arc::new(sym);
        let _ = self.cell.set(Arc::clone(&sym));
        Ok(sym)
    }
}

enum Factor<T: Scalar> {
    Llt(Arc<SymbolicCholesky<usize>>, Vec<T>),
    Lu(Lu<usize, T>),
}

/// Sparse factorization of `K - σM`.
pub struct ShiftInvert<T: Scalar> {
    factor: Factor<T>,
    pub shift: f64,
}

impl<T: Scalar> ShiftInvert<T> {
    pub fn new(k: &CsrMatrix<T>, m: &CsrMatrix<T>, shift: f64, symbolic: Option<&SymbolicCache>) -> Result<Self> {
        Self::factor(&k.add_scaled(-shift, m), shift, symbolic)
    }

    /// Factorizes a Hermitian matrix, by Cholesky when it is positive
    /// definite and by LU otherwise.
    pub fn factor(a: &CsrMatrix<T>, shift: f64, symbolic: Option<&SymbolicCache>) -> Result<Self> {
        let par = Par::Seq;
        let vals = a.hermitian_csc_values();
        let local;
        let cache = match symbolic {
            Some(c) => c,
            None => {
                local = SymbolicCache::new();
                &local
            }
        };
        let sym = cache.get_or_analyze(a, &vals)?;
        let llt = a.with_csc(&vals, |mat| {
            let mut values = vec![T::default(); sym.len_val()];
            let mut mem = MemBuffer::try_new(sym.factorize_numeric_llt_scratch::<T>(par, Default::default()))
                .map_err(|e| Error::Factorization(format!("workspace: {e:?}")))?;
            sym.factorize_numeric_llt::<T>(
                &mut values,
                mat,
                Side::Lower,
                Default::default(),
                par,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map(|_| ())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
            Ok::<_, Error>(values)
        });
        if let Ok(values) = llt {
            return Ok(Self {
                factor: Factor::Llt(sym, values),
                shift,
            });
        }
        a.with_csc(&vals, |mat| {
            let sym = SymbolicLu::try_new(mat.symbolic())
                .map_err(|e| Error::Factorization(format!("symbolic LU: {e:?}")))?;
            let lu = Lu::try_new_with_symbolic(sym, mat).map_err(|e| Error::Factorization(format!("LU: {e:?}")))?;
            Ok(Self {
                factor: Factor::Lu(lu),
                shift,
            })
        })
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Llt(..))
    }

    pub fn solve_in_place(&self, rhs: &mut Mat<T>) {
        match &self.factor {
            Factor::Llt(sym, values) => {
                let par = Par::Seq;
                let mut mem = MemBuffer::new(sym.solve_in_place_scratch::<T>(rhs.ncols(), par));
                LltRef::new(sym, values).solve_in_place_with_conj(Conj::No, rhs.as_mut(), par, MemStack::new(&mut mem));
            }
            Factor::Lu(l) => l.solve_in_place_with_conj(Conj::No, rhs.as_mut()),
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut rhs = Mat::<T>::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_in_place(&mut rhs);
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Basis `V`, its images `MV` and `W = OP V`, and `H = (MV)ᴴ W`, stored in
/// preallocated columns of which the first `len` are live.
struct Basis<T: Scalar> {
    v: Mat<T>,
    mv: Mat<T>,
    w: Mat<T>,
    h: Mat<T>,
    len: usize,
}

impl<T: Scalar> Basis<T> {
    fn new(n: usize, cap: usize) -> Self {
        Self {
            v: Mat::zeros(n, cap),
            mv: Mat::zeros(n, cap),
            w: Mat::zeros(n, cap),
            h: Mat::zeros(cap, cap),
            len: 0,
        }
    }

    fn col(m: &Mat<T>, j: usize) -> Vec<T> {
        (0..m.nrows()).map(|i| m[(i, j)]).collect()
    }
}

fn random_vector<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..n)
        .map(|_| {
            let re: f64 = rng.gen_range(-1.0..1.0);
            if T::IS_COMPLEX {
                let im: f64 = rng.gen_range(-1.0..1.0);
                T::from_c64(num_complex::Complex64::new(re, im))
            } else {
                T::from_f64(re)
            }
        })
        .collect()
}

/// `x -= V (MV)ᴴ x` over the live basis.
fn project_out<T: Scalar>(basis: &Basis<T>, x: &mut Mat<T>) {
    let len = basis.len;
    if len == 0 {
        return;
    }
    let mut c = Mat::<T>::zeros(len, x.ncols());
    matmul(
        c.as_mut(),
        Accum::Replace,
        basis.mv.as_ref().subcols(0, len).adjoint(),
        x.as_ref(),
        T::from_f64(1.0),
        Par::Seq,
    );
    matmul(
        x.as_mut(),
        Accum::Add,
        basis.v.as_ref().subcols(0, len),
        c.as_ref(),
        T::from_f64(-1.0),
        Par::Seq,
    );
}

fn col_norm<T: Scalar>(x: &Mat<T>, j: usize) -> f64 {
    (0..x.nrows()).map(|i| x[(i, j)].abs2()).sum::<f64>().sqrt()
}

/// `M`-orthogonalizes the candidate columns against the basis and each other
/// and appends the survivors. Returns how many were appended.
fn push_block<T: Scalar>(basis: &mut Basis<T>, m: &CsrMatrix<T>, cands: &[Vec<T>], room: usize) -> usize {
    let n = basis.v.nrows();
    let mut added = 0;
    for cand in cands {
        if added == room {
            break;
        }
        let n0 = norm(cand);
        if n0 == 0.0 {
            continue;
        }
        let mut x = Mat::<T>::from_fn(n, 1, |i, _| cand[i]);
        let mut prev = n0;
        let mut ok = true;
        for pass in 0..4 {
            project_out(basis, &mut x);
            let nx = col_norm(&x, 0);
            if nx < 1e-14 * n0 {
                ok = false;
                break;
            }
            if pass >= 1 && nx > 0.5 * prev {
                break;
            }
            prev = nx;
        }
        if !ok {
            continue;
        }
        let xv = Basis::col(&x, 0);
        let mx = m.mul_vec(&xv);
        let nm = dot(&xv, &mx).re();
        if !(nm > 0.0) {
            continue;
        }
        let s = 1.0 / nm.sqrt();
        let j = basis.len;
        for i in 0..n {
            basis.v[(i, j)] = xv[i] * s;
            basis.mv[(i, j)] = mx[i] * s;
        }
        basis.len += 1;
        added += 1;
    }
    added
}

/// Applies `OP` to basis columns `from..len` and extends `H`.
fn extend_images<T: Scalar>(basis: &mut Basis<T>, op: &ShiftInvert<T>, from: usize) -> usize {
    let n = basis.v.nrows();
    let len = basis.len;
    let cols = len - from;
    if cols == 0 {
        return 0;
    }
    let mut rhs = basis.mv.as_ref().subcols(from, cols).to_owned();
    op.solve_in_place(&mut rhs);
    basis.w.as_mut().subcols_mut(from, cols).copy_from(rhs.as_ref());
    let mut hc = Mat::<T>::zeros(len, cols);
    matmul(
        hc.as_mut(),
        Accum::Replace,
        basis.mv.as_ref().subcols(0, len).adjoint(),
        basis.w.as_ref().subcols(from, cols),
        T::from_f64(1.0),
        Par::Seq,
    );
    for c in 0..cols {
        for i in 0..len {
            basis.h[(i, from + c)] = hc[(i, c)];
            if i < from {
                basis.h[(from + c, i)] = hc[(i, c)].cj();
            }
        }
    }
    let _ = n;
    cols
}

/// Row sums of `|M|`, used to weight residuals.
pub fn lumped_mass<T: Scalar>(m: &CsrMatrix<T>) -> Vec<f64> {
    (0..m.n)
        .map(|i| {
            (m.row_ptr[i]..m.row_ptr[i + 1])
                .map(|p| m.values[p].abs2().sqrt())
                .sum()
        })
        .collect()
}

/// Rayleigh quotient of `x` and its scaled residual
/// `‖Kx - λMx‖_{D⁻¹} / ((1 + |λ|) ‖x‖_M)`.
pub fn residual<T: Scalar>(k: &CsrMatrix<T>, m: &CsrMatrix<T>, lumped: &[f64], x: &[T]) -> (f64, f64) {
    let kx = k.mul_vec(x);
    let mx = m.mul_vec(x);
    let xmx = dot(x, &mx).re();
    let lam = dot(x, &kx).re() / xmx;
    let mut r2 = 0.0;
    for i in 0..x.len() {
        let r = kx[i] - mx[i] * lam;
        r2 += r.abs2() / lumped[i];
    }
    (lam, r2.sqrt() / ((1.0 + lam.abs()) * xmx.sqrt()))
}

/// The `n_eigs` eigenpairs of `K u = λ M u` just above the shift.
pub fn solve_gevp<T: Scalar>(
    k: &CsrMatrix<T>,
    m: &CsrMatrix<T>,
    opts: &EigenOptions,
    symbolic: Option<&SymbolicCache>,
) -> Result<Spectrum<T>> {
    solve_gevp_from(k, m, opts, symbolic, &[])
}

/// As [`solve_gevp`], seeding the basis with `start` (for example the
/// eigenvectors of a nearby pencil). The result does not depend on the seed
/// beyond the convergence tolerance.
pub fn solve_gevp_from<T: Scalar>(
    k: &CsrMatrix<T>,
    m: &CsrMatrix<T>,
    opts: &EigenOptions,
    symbolic: Option<&SymbolicCache>,
    start: &[Vec<T>],
) -> Result<Spectrum<T>> {
    let n = k.n;
    let nev = opts.n_eigs;
    if nev == 0 || 4 * nev > n {
        return Err(Error::InvalidParameter(format!(
            "requested {nev} eigenpairs of a pencil of dimension {n} (need 1 ≤ n_eigs ≤ n/4)"
        )));
    }
    let b = opts.block.max(1).min(n / 4).max(1);
    let mmax = if opts.max_basis > 0 {
        opts.max_basis.max(nev + b)
    } else {
        (2 * nev + 2 * b).max(nev + 3 * b).max(24)
    }
    .min(n);
    let mut shift = opts.shift;
    let scale = k.max_abs().max(m.max_abs());
    let mut op = None;
    for attempt in 0..4 {
        match ShiftInvert::new(k, m, shift, symbolic) {
            Ok(f) => {
                op = Some(f);
                break;
            }
            Err(e) if attempt == 3 => return Err(e),
            Err(_) => shift += opts.tol.max(1e-12) * scale.max(1.0) * 10f64.powi(attempt),
        }
    }
    let op = op.unwrap();
    let lumped = lumped_mass(m);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis = Basis::<T>::new(n, mmax);
    let seeds: Vec<Vec<T>> = start.iter().filter(|v| v.len() == n).cloned().collect();
    push_block(&mut basis, m, &seeds, mmax.saturating_sub(b));
    let seeded = basis.len >= nev;
    while basis.len < b {
        let r = random_vector(n, &mut rng);
        push_block(&mut basis, m, &[r], 1);
    }
    let mut solves = extend_images(&mut basis, &op, 0);
    let mut last_block = 0..basis.len;
    let mut restarts = 0;
    let mut candidates: Vec<Vec<T>> = Vec::new();
    let mut skip_expand = seeded;
    loop {
        // expand
        while !skip_expand && basis.len < mmax {
            if candidates.is_empty() {
                candidates = last_block.clone().map(|j| Basis::col(&basis.w, j)).collect();
            }
            let start = basis.len;
            let room = (mmax - start).min(b);
            let got = push_block(&mut basis, m, &candidates, room);
            candidates.clear();
            for _ in got..room {
                let mut tries = 0;
                while tries < 5 && push_block(&mut basis, m, &[random_vector(n, &mut rng)], 1) == 0 {
                    tries += 1;
                }
            }
            if basis.len == start {
                break;
            }
            solves += extend_images(&mut basis, &op, start);
            last_block = start..basis.len;
        }
        skip_expand = false;
        // Rayleigh-Ritz
        let len = basis.len;
        let hm = Mat::<T>::from_fn(len, len, |i, j| (basis.h[(i, j)] + basis.h[(j, i)].cj()) * 0.5);
        let evd = hm
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Factorization(format!("projected eigenproblem: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();
        // descending θ
        let theta: Vec<f64> = (0..len).rev().map(|i| s[i].re()).collect();
        let y = Mat::<T>::from_fn(len, len, |i, j| u[(i, len - 1 - j)]);
        let keep = (nev + b.max(nev / 2)).min(len.saturating_sub(b)).max(nev.min(len)).min(len);
        let combine = |src: &Mat<T>, cols: usize| {
            let mut out = Mat::<T>::zeros(n, cols);
            matmul(
                out.as_mut(),
                Accum::Replace,
                src.as_ref().subcols(0, len),
                y.as_ref().subcols(0, cols),
                T::from_f64(1.0),
                Par::Seq,
            );
            out
        };
        let cols = keep.max(nev);
        let xs = combine(&basis.v, cols);
        let ws = combine(&basis.w, cols);
        let mut lambdas = Vec::with_capacity(nev);
        let mut vecs = Vec::with_capacity(nev);
        let mut resid = Vec::with_capacity(nev);
        let mut unconverged = Vec::new();
        for rank in 0..nev {
            let th = theta[rank];
            let mut r2 = 0.0;
            let mut x2 = 0.0;
            for i in 0..n {
                r2 += (ws[(i, rank)] - xs[(i, rank)] * th).abs2();
                x2 += xs[(i, rank)].abs2();
            }
            let est = r2.sqrt() / (th.abs() * x2.sqrt()).max(f64::MIN_POSITIVE);
            let x = Basis::col(&xs, rank);
            let (lam, res) = if est < 1e-3 && th != 0.0 {
                residual(k, m, &lumped, &x)
            } else {
                (shift + 1.0 / th, f64::INFINITY)
            };
            if !(res <= opts.tol) {
                unconverged.push(rank);
            }
            lambdas.push(lam);
            vecs.push(x);
            resid.push(res);
        }
        if unconverged.is_empty() {
            let mut idx: Vec<usize> = (0..nev).collect();
            idx.sort_by(|&a, &b| lambdas[a].partial_cmp(&lambdas[b]).unwrap());
            return Ok(Spectrum {
                eigenvalues: idx.iter().map(|&i| lambdas[i]).collect(),
                vectors: idx.iter().map(|&i| vecs[i].clone()).collect(),
                residuals: idx.iter().map(|&i| resid[i]).collect(),
                shift,
                restarts,
                solves,
            });
        }
        if restarts >= opts.max_restarts {
            let mut partial = lambdas.clone();
            partial.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return Err(Error::NoConvergence {
                iterations: restarts,
                converged: nev - unconverged.len(),
                requested: nev,
                partial,
            });
        }
        restarts += 1;
        // thick restart on the leading Ritz vectors
        let mvs = combine(&basis.mv, keep);
        basis.v.as_mut().subcols_mut(0, keep).copy_from(xs.as_ref().subcols(0, keep));
        basis.w.as_mut().subcols_mut(0, keep).copy_from(ws.as_ref().subcols(0, keep));
        basis.mv.as_mut().subcols_mut(0, keep).copy_from(mvs.as_ref());
        for i in 0..keep {
            for j in 0..keep {
                basis.h[(i, j)] = if i == j { T::from_f64(theta[i]) } else { T::default() };
            }
        }
        basis.len = keep;
        candidates = unconverged.iter().take(b).map(|&r| Basis::col(&basis.w, r)).collect();
        let mut extra = nev;
        while candidates.len() < b && extra < keep {
            candidates.push(Basis::col(&basis.w, extra));
            extra += 1;
        }
        last_block = 0..0;
    }
}
