//! Voigt strain operator, elastic moduli and trilinear hexahedral elements.
//!
//! Strains are 6-vectors in the √2-scaled convention
//! `(ε11, ε22, √2 ε12, √2 ε13, √2 ε23, ε33)`, so the energy density is the
//! plain quadratic form `εᵀ A ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `D(x) v`, the 6×3 symbol `D(x)` applied to `v`.
pub fn voigt_apply(x: [f64; 3], v: [f64; 3]) -> [f64; 6] {
    [
        x[0] * v[0],
        x[1] * v[1],
        S * (x[1] * v[0] + x[0] * v[1]),
        S * (x[2] * v[0] + x[0] * v[2]),
        S * (x[2] * v[1] + x[1] * v[2]),
        x[2] * v[2],
    ]
}

/// The 6×3 matrix `D(g)` for a gradient `g`.
pub fn voigt_matrix(g: [f64; 3]) -> [[f64; 3]; 6] {
    [
        [g[0], 0.0, 0.0],
        [0.0, g[1], 0.0],
        [S * g[1], S * g[0], 0.0],
        [S * g[2], 0.0, S * g[0]],
        [0.0, S * g[2], S * g[1]],
        [0.0, 0.0, g[2]],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Isotropic { lambda: f64, mu: f64 },
    Explicit,
}

/// Symmetric positive definite 6×6 moduli.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookeTensor {
    a: [[f64; 6]; 6],
    provenance: Provenance,
}

pub fn isotropic_hooke(lambda: f64, mu: f64) -> Result<HookeTensor> {
    if !(mu > 0.0) || !(3.0 * lambda + 2.0 * mu > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Lamé parameters (λ={lambda}, μ={mu}) violate μ > 0, 3λ + 2μ > 0"
        )));
    }
    let q = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut a = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            a[i][j] = lambda * q[i] * q[j];
        }
        a[i][i] += 2.0 * mu;
    }
    let mut t = HookeTensor::explicit(a)?;
    t.provenance = Provenance::Isotropic { lambda, mu };
    Ok(t)
}

impl HookeTensor {
    pub fn explicit(a: [[f64; 6]; 6]) -> Result<Self> {
        let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..6 {
            for j in 0..i {
                if (a[i][j] - a[j][i]).abs() > 1e-14 * scale.max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "moduli not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let t = Self {
            a,
            provenance: Provenance::Explicit,
        };
        let min = t.min_eigenvalue();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(min));
        }
        Ok(t)
    }

    pub fn matrix(&self) -> &[[f64; 6]; 6] {
        &self.a
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = faer::Mat::<f64>::from_fn(6, 6, |i, j| self.a[i][j]);
        let mut ev = m
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("6x6 symmetric eigenvalues");
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `A ε`
    pub fn stress(&self, e: &[f64; 6]) -> [f64; 6] {
        let mut s = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                s[i] += self.a[i][j] * e[j];
            }
        }
        s
    }

    /// `εᵀ A ε`
    pub fn energy_density(&self, e: &[f64; 6]) -> f64 {
        let s = self.stress(e);
        (0..6).map(|i| s[i] * e[i]).sum()
    }
}

/// Element stiffness and mass, 24×24 row-major with dof `3·node + component`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementMatrices {
    pub k: Box<[[f64; 24]; 24]>,
    pub m: Box<[[f64; 24]; 24]>,
}

const GAUSS: f64 = 0.577_350_269_189_625_8;

/// Reference corner signs in VTK order.
const CORNER_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

fn shape(r: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut n = [0.0; 8];
    let mut dn = [[0.0; 3]; 8];
    for (i, c) in CORNER_SIGNS.iter().enumerate() {
        let f = [1.0 + c[0] * r[0], 1.0 + c[1] * r[1], 1.0 + c[2] * r[2]];
        n[i] = 0.125 * f[0] * f[1] * f[2];
        dn[i] = [
            0.125 * c[0] * f[1] * f[2],
            0.125 * c[1] * f[0] * f[2],
            0.125 * c[2] * f[0] * f[1],
        ];
    }
    (n, dn)
}

fn inverse3(j: [[f64; 3]; 3]) -> (f64, [[f64; 3]; 3]) {
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    let inv = [
        [
            (j[1][1] * j[2][2] - j[1][2] * j[2][1]) / det,
            (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / det,
            (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / det,
        ],
        [
            (j[1][2] * j[2][0] - j[1][0] * j[2][2]) / det,
            (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / det,
            (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / det,
        ],
        [
            (j[1][0] * j[2][1] - j[1][1] * j[2][0]) / det,
            (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / det,
            (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / det,
        ],
    ];
    (det, inv)
}

/// Physical shape-function gradients at reference point `r`, with `det J`.
pub fn shape_gradients(nodes: &[[f64; 3]; 8], r: [f64; 3]) -> (f64, [f64; 8], [[f64; 3]; 8]) {
    let (n, dn) = shape(r);
    // J[a][b] = ∂x_b/∂r_a
    let mut jac = [[0.0; 3]; 3];
    for i in 0..8 {
        for a in 0..3 {
            for b in 0..3 {
                jac[a][b] += dn[i][a] * nodes[i][b];
            }
        }
    }
    let (det, inv) = inverse3(jac);
    let mut g = [[0.0; 3]; 8];
    for i in 0..8 {
        for b in 0..3 {
            g[i][b] = (0..3).map(|a| inv[b][a] * dn[i][a]).sum();
        }
    }
    (det, n, g)
}

pub fn gauss_points() -> [[f64; 3]; 8] {
    let mut p = [[0.0; 3]; 8];
    for (i, c) in CORNER_SIGNS.iter().enumerate() {
        p[i] = c.map(|s| s * GAUSS);
    }
    p
}

/// Stiffness `∫ (A D(∇)φ_i)·(D(∇)φ_j)` and mass `∫ ρ φ_i φ_j` by 2×2×2 Gauss.
pub fn element_matrices(nodes: &[[f64; 3]; 8], a: &HookeTensor, density: f64) -> Result<ElementMatrices> {
    let mut k = Box::new([[0.0; 24]; 24]);
    let mut m = Box::new([[0.0; 24]; 24]);
    let am = a.matrix();
    for r in gauss_points() {
        let (det, n, g) = shape_gradients(nodes, r);
        if !(det > 0.0) {
            return Err(Error::DegenerateElement { element: 0, det });
        }
        // B: 6×24
        let mut b = [[0.0; 24]; 6];
        for i in 0..8 {
            let d = voigt_matrix(g[i]);
            for row in 0..6 {
                for c in 0..3 {
                    b[row][3 * i + c] = d[row][c];
                }
            }
        }
        let mut ab = [[0.0; 24]; 6];
        for row in 0..6 {
            for col in 0..24 {
                ab[row][col] = (0..6).map(|s| am[row][s] * b[s][col]).sum();
            }
        }
        for p in 0..24 {
            for q in p..24 {
                let v: f64 = (0..6).map(|s| b[s][p] * ab[s][q]).sum();
                k[p][q] += det * v;
            }
        }
        for i in 0..8 {
            for j in i..8 {
                let v = density * det * n[i] * n[j];
                for c in 0..3 {
                    m[3 * i + c][3 * j + c] += v;
                }
            }
        }
    }
    for p in 0..24 {
        for q in 0..p {
            k[p][q] = k[q][p];
            m[p][q] = m[q][p];
        }
    }
    Ok(ElementMatrices { k, m })
}

impl ElementMatrices {
    pub fn energy(&self, v: &[f64; 24]) -> f64 {
        quad(&self.k, v)
    }

    pub fn mass(&self, v: &[f64; 24]) -> f64 {
        quad(&self.m, v)
    }
}

fn quad(a: &[[f64; 24]; 24], v: &[f64; 24]) -> f64 {
    let mut s = 0.0;
    for i in 0..24 {
        for j in 0..24 {
            s += v[i] * a[i][j] * v[j];
        }
    }
    s
}

/// The six rigid motions `e_j` and `x × e_j` evaluated at `x`.
pub fn rigid_motion(j: usize, x: [f64; 3]) -> [f64; 3] {
    match j {
        0 => [1.0, 0.0, 0.0],
        1 => [0.0, 1.0, 0.0],
        2 => [0.0, 0.0, 1.0],
        // x × e1, x × e2, x × e3
        3 => [0.0, x[2], -x[1]],
        4 => [-x[2], 0.0, x[0]],
        5 => [x[1], -x[0], 0.0],
        _ => panic!("rigid motion index {j} out of range"),
    }
}
