//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::Convention;
use crate::eigen::EigenOptions;
use crate::elastic::{isotropic_hooke, HookeTensor};
use crate::error::{Error, Result};
use crate::geometry::{CellParams, MeshSpec};
use crate::limit::LimitOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Material {
    Isotropic { lambda: f64, mu: f64 },
    /// Voigt matrix with `2^{-1/2}`-scaled shears.
    Explicit { matrix: [[f64; 6]; 6] },
}

impl Default for Material {
    fn default() -> Self {
        Material::Isotropic { lambda: 1.0, mu: 1.0 }
    }
}

impl Material {
    pub fn hooke(&self) -> Result<HookeTensor> {
        match self {
            Material::Isotropic { lambda, mu } => isotropic_hooke(*lambda, *mu),
            Material::Explicit { matrix } => HookeTensor::explicit(*matrix),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    Factor1,
    Factor2,
    Both,
}

impl ConventionChoice {
    pub fn conventions(self) -> Vec<Convention> {
        match self {
            ConventionChoice::Factor1 => vec![Convention::Factor1],
            ConventionChoice::Factor2 => vec![Convention::Factor2],
            ConventionChoice::Both => Convention::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for ConventionChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor1" => Ok(Self::Factor1),
            "factor2" => Ok(Self::Factor2),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("unknown convention {s:?} (factor1, factor2, both)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Limit,
    Cell,
    Sweep,
    Asymptotics,
    Study,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Limit,
        Stage::Cell,
        Stage::Sweep,
        Stage::Asymptotics,
        Stage::Study,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Limit => "limit",
            Stage::Cell => "cell",
            Stage::Sweep => "sweep",
            Stage::Asymptotics => "asymptotics",
            Stage::Study => "study",
            Stage::Report => "report",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut v: Vec<Stage> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

/// `n` equispaced points `2πi/(n-1)`, `i = 0..n`, closed at `2π` so that the
/// grid maps onto itself under `η ↦ 2π - η`.
pub fn default_eta_grid(n: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    (0..n).map(|i| tau * i as f64 / (n - 1) as f64).collect()
}

/// Which checks of the study stage to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// 1-based band for the convergence verdict and the ansatz check.
    pub target_band: usize,
    /// 1-based band for the width check.
    pub width_band: usize,
    /// Second discretization for the error floor.
    pub control_mesh: Option<MeshSpec>,
    /// Floquet parameter of the ansatz comparison.
    pub ansatz_eta: f64,
    pub rigid_check: bool,
    pub ansatz_check: bool,
    pub width_check: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            target_band: 10,
            width_band: 9,
            control_mesh: Some(MeshSpec {
                resolution: 0.125,
                growth: 1.5,
                ..MeshSpec::default()
            }),
            ansatz_eta: 2.0,
            rigid_check: true,
            ansatz_check: true,
            width_check: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub vtk: bool,
    pub matrix_market: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            vtk: false,
            matrix_market: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub cell: CellParams,
    pub material: Material,
    pub h: Vec<f64>,
    pub eta: Vec<f64>,
    pub n_bands: usize,
    pub mesh: MeshSpec,
    /// Per-`h` overrides of `mesh.resolution`, aligned with `h`.
    pub resolutions: Option<Vec<f64>>,
    pub eigen: EigenOptions,
    pub limit: LimitOptions,
    pub rho: Vec<f64>,
    pub convention: ConventionChoice,
    pub study: StudyConfig,
    pub output: OutputConfig,
    pub stages: Vec<Stage>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            cell: CellParams::default(),
            material: Material::default(),
            h: vec![0.1, 0.07, 0.05],
            eta: default_eta_grid(17),
            n_bands: 12,
            mesh: MeshSpec {
                resolution: 0.15,
                growth: 2.0,
                ..MeshSpec::default()
            },
            resolutions: None,
            eigen: EigenOptions {
                n_eigs: 12,
                block: 8,
                tol: 1e-8,
                ..EigenOptions::default()
            },
            limit: LimitOptions::default(),
            rho: vec![4.0, 8.0],
            convention: ConventionChoice::Both,
            study: StudyConfig::default(),
            output: OutputConfig::default(),
            stages: Stage::ALL.to_vec(),
        }
    }
}

impl SweepConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.material.hooke()?;
        if self.h.is_empty() {
            return Err(Error::Config("h list is empty".into()));
        }
        if let Some(h) = self.h.iter().find(|&&h| !(h > 0.0 && h <= 0.1)) {
            return Err(Error::Config(format!("h = {h} outside (0, 0.1]")));
        }
        if self.eta.is_empty() {
            return Err(Error::Config("eta grid is empty".into()));
        }
        let tau = std::f64::consts::TAU;
        for &e in &self.eta {
            if !(0.0..=tau + 1e-12).contains(&e) {
                return Err(Error::Config(format!("eta = {e} outside [0, 2π]")));
            }
            if !self.eta.iter().any(|&f| (f - (tau - e)).abs() < 1e-9 || (e == 0.0 && f == 0.0)) {
                return Err(Error::Config(format!("eta grid is not symmetric: 2π - {e} missing")));
            }
        }
        if self.n_bands < 7 {
            return Err(Error::Config(format!("n_bands = {} < 7 misses the first elastic band", self.n_bands)));
        }
        if let Some(r) = &self.resolutions {
            if r.len() != self.h.len() {
                return Err(Error::Config(format!(
                    "{} resolutions for {} values of h",
                    r.len(),
                    self.h.len()
                )));
            }
        }
        if self.rho.is_empty() || self.rho.iter().any(|&r| r < 4.0) {
            return Err(Error::Config("rho list must be non-empty with values ≥ 4".into()));
        }
        let nb = self.n_bands;
        for (name, b) in [("target_band", self.study.target_band), ("width_band", self.study.width_band)] {
            if b == 0 || b > nb {
                return Err(Error::Config(format!("{name} = {b} outside 1..={nb}")));
            }
        }
        Ok(())
    }

    /// Mesh controls for the `i`-th value of `h`.
    pub fn mesh_for(&self, i: usize) -> MeshSpec {
        match &self.resolutions {
            Some(r) => MeshSpec {
                resolution: r[i],
                ..self.mesh
            },
            None => self.mesh,
        }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            n_eigs: self.n_bands,
            ..self.eigen
        }
    }

    pub fn limit_options(&self) -> LimitOptions {
        LimitOptions {
            n_eigs: self.limit.n_eigs.max(self.n_bands),
            ..self.limit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = SweepConfig::default();
        c.validate().unwrap();
        let back = SweepConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = SweepConfig::from_json(r#"{"h": [0.1], "stages": ["limit"]}"#).unwrap();
        assert_eq!(c.h, vec![0.1]);
        assert_eq!(c.stages, vec![Stage::Limit]);
        assert_eq!(c.eta.len(), 17);
    }

    #[test]
    fn grid_contains_zero_and_pi() {
        let g = default_eta_grid(17);
        assert_eq!(g[0], 0.0);
        assert!((g[8] - std::f64::consts::PI).abs() < 1e-15);
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert!((a + b - std::f64::consts::TAU).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(SweepConfig::from_json(r#"{"h": [0.2]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"eta": [0.0, 1.0]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"n_bands": 4}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"bogus": 1}"#).is_ok());
        assert!(parse_stages("limit,nope").is_err());
        assert_eq!(parse_stages("sweep, limit").unwrap(), vec![Stage::Limit, Stage::Sweep]);
    }
}
