//! Stage orchestration and artifact output for one configuration.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{predicted_band, Convention, CorrectionCurve, CouplingVector, PredictedBand};
use crate::cell_problem::{polarization_study, PolarizationMatrix};
use crate::config::{Stage, SweepConfig};
use crate::elastic::HookeTensor;
use crate::error::{Error, Result};
use crate::geometry::{build_limit_cell, Junction, MeshSpec};
use crate::io::{write_matrix_market, write_vtk, PointField};
use crate::limit::{align_rigid_cluster, rigid_basis, solve_limit_assembled, LimitSpectrum};
use crate::pipeline::{
    ansatz_sample, band_width_check, convergence_study, corrections_at, detect_gaps, AnsatzCheck, BandDiagram,
    BandInterval, CellModel, ConvergenceReport, Gap, InnerSolutions, LimitModel, RigidCheck, StudyLevel, WidthCheck,
};
use crate::fem::assemble;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: Status,
    pub message: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageOutcome>,
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.stages.iter().all(|s| s.status == Status::Ok)
    }
}

/// `h` as it appears in file names.
pub fn h_label(h: f64) -> String {
    format!("{h}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagramSummary {
    pub h: f64,
    pub complete: bool,
    pub n_dofs: usize,
    pub intervals: Vec<BandInterval>,
    pub gaps: Vec<Gap>,
    pub symmetry_defect: f64,
    pub max_residual: f64,
    pub failures: Vec<String>,
}

pub fn summarize(d: &BandDiagram, lambdas: &[f64]) -> DiagramSummary {
    DiagramSummary {
        h: d.h,
        complete: d.is_complete(),
        n_dofs: d.n_dofs,
        intervals: d.intervals(),
        gaps: detect_gaps(d, lambdas),
        symmetry_defect: d.symmetry_defect(),
        max_residual: d.residuals.iter().cloned().filter(|r| r.is_finite()).fold(0.0, f64::max),
        failures: d.failures.clone(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandsReport {
    pub junction: Junction,
    pub diagrams: Vec<DiagramSummary>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ChecksReport {
    pub width: Vec<WidthCheck>,
    pub rigid: Vec<RigidCheck>,
    pub ansatz: Option<AnsatzCheck>,
    pub errors: Vec<String>,
}

struct Level {
    h: f64,
    limit: LimitModel,
    diagram: BandDiagram,
}

type Slot<T> = Option<std::result::Result<T, String>>;

pub struct Runner {
    cfg: SweepConfig,
    hooke: HookeTensor,
    out: PathBuf,
    summary: RunSummary,
    limit: Slot<LimitSpectrum>,
    polarization: Slot<PolarizationMatrix>,
    levels: Slot<Vec<Level>>,
    control: Slot<(PolarizationMatrix, Vec<Level>)>,
    convergence: Option<ConvergenceReport>,
}

fn slot_ref<T>(s: &Slot<T>) -> Result<&T> {
    match s {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(Error::Upstream(e.clone())),
        None => Err(Error::Config("stage not run".into())),
    }
}

/// The stage that owns a slot reports its failure as its own.
fn owned<T>(r: Result<T>) -> Result<()> {
    match r {
        Ok(_) => Ok(()),
        Err(Error::Upstream(m)) => Err(Error::Stage(m)),
        Err(e) => Err(e),
    }
}

impl Runner {
    pub fn new(cfg: SweepConfig) -> Result<Self> {
        cfg.validate()?;
        let hooke = cfg.material.hooke()?;
        let out = cfg.output.dir.clone();
        Ok(Self {
            cfg,
            hooke,
            out,
            summary: RunSummary::default(),
            limit: None,
            polarization: None,
            levels: None,
            control: None,
            convergence: None,
        })
    }

    pub fn with_output(mut self, dir: &Path) -> Self {
        self.out = dir.to_path_buf();
        self
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let p = self.out.join(name);
        fs::write(&p, contents)?;
        self.summary.files.push(name.to_string());
        Ok(())
    }

    fn writer(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        fs::create_dir_all(&self.out)?;
        self.summary.files.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.out.join(name))?))
    }

    /// Runs `stages` (all configured stages when `None`) and writes
    /// `summary.json`.
    pub fn run(mut self, stages: Option<&[Stage]>) -> Result<RunSummary> {
        let mut stages: Vec<Stage> = stages.map(<[Stage]>::to_vec).unwrap_or_else(|| self.cfg.stages.clone());
        stages.sort();
        stages.dedup();
        for st in stages {
            info!("stage {}", st.name());
            let r = match st {
                Stage::Limit => self.stage_limit(),
                Stage::Cell => self.stage_cell(),
                Stage::Sweep => self.stage_sweep(),
                Stage::Asymptotics => self.stage_asymptotics(),
                Stage::Study => self.stage_study(),
                Stage::Report => self.stage_report(),
            };
            let outcome = match r {
                Ok(()) => StageOutcome {
                    stage: st,
                    status: Status::Ok,
                    message: None,
                },
                Err(e) => {
                    let msg = e.to_string();
                    error!("stage {} failed: {msg}", st.name());
                    let status = if matches!(e, Error::Upstream(_)) {
                        Status::Skipped
                    } else {
                        Status::Failed
                    };
                    StageOutcome {
                        stage: st,
                        status,
                        message: Some(msg),
                    }
                }
            };
            self.summary.stages.push(outcome);
        }
        let mut s = self.summary.clone();
        s.files.push("summary.json".into());
        self.write("summary.json", &serde_json::to_string_pretty(&s)?)?;
        Ok(s)
    }

    // -- stages --------------------------------------------------------------

    fn stage_limit(&mut self) -> Result<()> {
        owned(self.ensure_limit())
    }

    fn ensure_limit(&mut self) -> Result<&LimitSpectrum> {
        if self.limit.is_none() {
            let r = self.compute_limit();
            self.limit = Some(r.map_err(|e| e.to_string()));
        }
        slot_ref(&self.limit)
    }

    fn compute_limit(&mut self) -> Result<LimitSpectrum> {
        let cfg = &self.cfg;
        let mesh = build_limit_cell(&cfg.cell, cfg.mesh.resolution)?;
        let pair = assemble(&mesh, &self.hooke, cfg.limit.density)?;
        let raw = solve_limit_assembled(&mesh, &pair, &cfg.limit_options())?;
        let spec = align_rigid_cluster(&raw, &rigid_basis(&mesh), &mesh, &pair.m)?;
        self.write("limit.json", &spec.to_json()?)?;
        if self.cfg.output.vtk {
            let fields: Vec<(String, &Vec<f64>)> = spec
                .vectors
                .iter()
                .enumerate()
                .skip(spec.rigid_count)
                .take(4)
                .map(|(k, v)| (format!("u{}", k + 1), v))
                .collect();
            let pf: Vec<PointField> = fields.iter().map(|(n, v)| PointField { name: n, values: v }).collect();
            let mut w = self.writer("limit.vtk")?;
            write_vtk(&mut w, &mesh, "isolated cell eigenfunctions", &pf)?;
        }
        if self.cfg.output.matrix_market {
            let mut w = self.writer("limit_K.mtx")?;
            write_matrix_market(&mut w, &pair.k)?;
            let mut w = self.writer("limit_M.mtx")?;
            write_matrix_market(&mut w, &pair.m)?;
        }
        Ok(spec)
    }

    fn stage_cell(&mut self) -> Result<()> {
        owned(self.ensure_polarization())
    }

    fn ensure_polarization(&mut self) -> Result<&PolarizationMatrix> {
        if self.polarization.is_none() {
            let r = self.compute_polarization(self.cfg.mesh, "mplus.json");
            self.polarization = Some(r.map_err(|e| e.to_string()));
        }
        slot_ref(&self.polarization)
    }

    fn compute_polarization(&mut self, spec: MeshSpec, name: &str) -> Result<PolarizationMatrix> {
        let pol = polarization_study(&self.cfg.cell, &self.hooke, &self.cfg.rho, &spec)?;
        self.write(name, &pol.to_json()?)?;
        if self.cfg.output.vtk && name == "mplus.json" {
            let rho = self.cfg.rho.iter().cloned().fold(0.0, f64::max);
            let inner = InnerSolutions::build(&self.cfg.cell, &self.hooke, rho, &spec)?;
            let names = ["X1", "X2", "X3"];
            let pf: Vec<PointField> = inner
                .units
                .iter()
                .zip(names)
                .map(|(u, n)| PointField { name: n, values: &u.field })
                .collect();
            let mut w = self.writer(&format!("omega_rho{}.vtk", h_label(rho)))?;
            write_vtk(&mut w, &inner.mesh, "unit boundary-layer solutions", &pf)?;
        }
        Ok(pol)
    }

    fn stage_sweep(&mut self) -> Result<()> {
        owned(self.ensure_levels())
    }

    fn ensure_levels(&mut self) -> Result<&Vec<Level>> {
        if self.levels.is_none() {
            let specs: Vec<MeshSpec> = (0..self.cfg.h.len()).map(|i| self.cfg.mesh_for(i)).collect();
            let r = self.compute_levels(&specs, "");
            self.levels = Some(r.map_err(|e| e.to_string()));
        }
        slot_ref(&self.levels)
    }

    fn compute_levels(&mut self, specs: &[MeshSpec], tag: &str) -> Result<Vec<Level>> {
        let mut levels = Vec::new();
        let hs = self.cfg.h.clone();
        for (&h, spec) in hs.iter().zip(specs) {
            let limit = LimitModel::build(&self.cfg.cell, &self.hooke, h, spec, &self.cfg.limit_options())?;
            let cell = CellModel::build(&self.cfg.cell, &self.hooke, h, spec)?;
            info!("h = {h}{tag}: {} cell dofs", cell.dim());
            let diagram = cell.sweep(&self.cfg.eta, &self.cfg.eigen_options());
            let hl = h_label(h);
            self.write(&format!("limit_h{hl}{tag}.json"), &limit.spectrum.to_json()?)?;
            self.write(&format!("dispersion_h{hl}{tag}.csv"), &diagram.to_csv())?;
            if tag.is_empty() {
                self.dump_cell(&cell, &limit)?;
            }
            if !diagram.is_complete() {
                return Err(Error::Config(format!(
                    "incomplete diagram at h = {h}: {}",
                    diagram.failures.join("; ")
                )));
            }
            levels.push(Level { h, limit, diagram });
        }
        let report = BandsReport {
            junction: self.cfg.cell.junction,
            diagrams: levels
                .iter()
                .map(|l| summarize(&l.diagram, &l.limit.spectrum.eigenvalues))
                .collect(),
        };
        self.write(&format!("bands{tag}.json"), &serde_json::to_string_pretty(&report)?)?;
        Ok(levels)
    }

    fn dump_cell(&mut self, cell: &CellModel, limit: &LimitModel) -> Result<()> {
        let hl = h_label(cell.h);
        if self.cfg.output.vtk {
            let mut w = self.writer(&format!("cell_h{hl}.vtk"))?;
            write_vtk(&mut w, &cell.mesh, "periodicity cell", &[])?;
            let k = limit.spectrum.rigid_count;
            let pf = [PointField {
                name: "u7",
                values: &limit.spectrum.vectors[k],
            }];
            let mut w = self.writer(&format!("template_h{hl}.vtk"))?;
            write_vtk(&mut w, &limit.mesh, "isolated cell on the cell grid", &pf)?;
        }
        if self.cfg.output.matrix_market {
            let eta = self.cfg.study.ansatz_eta;
            let s = cell.system(eta);
            let mut w = self.writer(&format!("cell_h{hl}_K.mtx"))?;
            write_matrix_market(&mut w, &s.k)?;
            let mut w = self.writer(&format!("cell_h{hl}_M.mtx"))?;
            write_matrix_market(&mut w, &s.m)?;
        }
        Ok(())
    }

    fn stage_asymptotics(&mut self) -> Result<()> {
        let m = self.ensure_polarization()?.matrix();
        self.ensure_levels()?;
        let a = self.cfg.cell.a();
        let etas = self.cfg.eta.clone();
        let mut files = Vec::new();
        for conv in self.cfg.convention.conventions() {
            for l in slot_ref(&self.levels)? {
                let spec = &l.limit.spectrum;
                let curves: Vec<CorrectionCurve> = (spec.rigid_count..spec.eigenvalues.len())
                    .filter(|&k| spec.is_simple(k))
                    .map(|k| {
                        let cv = CouplingVector::from_traces(spec.trace_top[k], spec.trace_bottom[k]);
                        CorrectionCurve::new(k, spec.eigenvalues[k], a, &cv, &m, conv, &etas)
                    })
                    .collect();
                let bands: Vec<PredictedBand> = curves.iter().map(|c| predicted_band(c, l.h)).collect();
                let mut csv = String::from("eta");
                for k in 1..=spec.eigenvalues.len() {
                    csv.push_str(&format!(",band{k}"));
                }
                csv.push('\n');
                for &e in &etas {
                    csv.push_str(&format!("{e:.12e}"));
                    for v in corrections_at(spec, &m, a, conv, e)? {
                        csv.push_str(&format!(",{v:.12e}"));
                    }
                    csv.push('\n');
                }
                let hl = h_label(l.h);
                let c = conv.name();
                files.push((format!("corrections_{c}_h{hl}.json"), serde_json::to_string_pretty(&curves)?));
                files.push((format!("predicted_bands_{c}_h{hl}.json"), serde_json::to_string_pretty(&bands)?));
                files.push((format!("lambda_prime_{c}_h{hl}.csv"), csv));
            }
        }
        for (n, s) in files {
            self.write(&n, &s)?;
        }
        Ok(())
    }

    fn ensure_control(&mut self) -> Result<Option<&(PolarizationMatrix, Vec<Level>)>> {
        let Some(spec) = self.cfg.study.control_mesh else {
            return Ok(None);
        };
        if self.control.is_none() {
            let r = (|| {
                let pol = self.compute_polarization(spec, "mplus_control.json")?;
                let specs = vec![spec; self.cfg.h.len()];
                let levels = self.compute_levels(&specs, "_control")?;
                Ok::<_, Error>((pol, levels))
            })();
            self.control = Some(r.map_err(|e| e.to_string()));
        }
        slot_ref(&self.control).map(Some)
    }

    fn stage_study(&mut self) -> Result<()> {
        let m = self.ensure_polarization()?.matrix();
        self.ensure_levels()?;
        owned(self.ensure_control())?;
        let a = self.cfg.cell.a();
        let convs = self.cfg.convention.conventions();
        let study = self.cfg.study.clone();
        let levels = slot_ref(&self.levels)?;
        let control = match &self.control {
            Some(Ok(c)) => Some(c),
            _ => None,
        };
        let study_levels: Vec<StudyLevel> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| StudyLevel {
                h: l.h,
                limit: &l.limit.spectrum,
                diagram: &l.diagram,
                control: control.map(|c| (&c.1[i].limit.spectrum, &c.1[i].diagram)),
            })
            .collect();
        let mc = control.map(|c| c.0.matrix());
        let report = convergence_study(&study_levels, &m, mc.as_ref(), a, &convs, study.target_band)?;
        let mut checks = ChecksReport::default();
        if study.width_check {
            for &conv in &convs {
                for l in levels {
                    match band_width_check(&l.diagram, &l.limit.spectrum, &m, a, conv, study.width_band) {
                        Ok(w) => checks.width.push(w),
                        Err(e) => checks.errors.push(format!("width h = {}: {e}", l.h)),
                    }
                }
            }
        }
        if study.rigid_check {
            let finest = levels.iter().min_by(|x, y| x.h.partial_cmp(&y.h).unwrap()).unwrap();
            for &conv in &convs {
                match crate::pipeline::rigid_band_check(
                    &finest.diagram,
                    &finest.limit.spectrum,
                    &finest.limit.basis.betas,
                    &m,
                    conv,
                ) {
                    Ok(r) => checks.rigid.push(r),
                    Err(e) => checks.errors.push(format!("rigid: {e}")),
                }
            }
        }
        if study.ansatz_check {
            let rho = self.cfg.rho.iter().cloned().fold(0.0, f64::max);
            let inner = InnerSolutions::build(&self.cfg.cell, &self.hooke, rho, &self.cfg.mesh)?;
            let mut samples = Vec::new();
            for (i, l) in levels.iter().enumerate() {
                let cell = CellModel::build(&self.cfg.cell, &self.hooke, l.h, &self.cfg.mesh_for(i))?;
                match ansatz_sample(
                    &self.cfg.cell,
                    &l.limit,
                    &cell,
                    &inner,
                    study.target_band,
                    study.ansatz_eta,
                    &self.cfg.eigen_options(),
                ) {
                    Ok(s) => samples.push(s),
                    Err(e) => checks.errors.push(format!("ansatz h = {}: {e}", l.h)),
                }
            }
            checks.ansatz = Some(AnsatzCheck {
                band: study.target_band,
                eta: study.ansatz_eta,
                samples,
            });
        }
        self.write("convergence.json", &report.to_json()?)?;
        self.write("checks.json", &serde_json::to_string_pretty(&checks)?)?;
        self.convergence = Some(report);
        Ok(())
    }

    fn stage_report(&mut self) -> Result<()> {
        let text = report_from_dir(&self.out, self.cfg.cell.junction)?;
        self.write("report.txt", &text)?;
        print!("{text}");
        Ok(())
    }
}

/// Text summary of the artifacts found in `dir`.
pub fn report_from_dir(dir: &Path, junction: Junction) -> Result<String> {
    let mut s = String::new();
    if let Ok(t) = fs::read_to_string(dir.join("limit.json")) {
        let v: serde_json::Value = serde_json::from_str(&t)?;
        if let Some(e) = v["eigenvalues"].as_array() {
            let l: Vec<String> = e.iter().filter_map(|x| x.as_f64()).map(|x| format!("{x:.6}")).collect();
            s.push_str(&format!("limit eigenvalues: {}\n", l.join(" ")));
        }
    }
    if let Ok(t) = fs::read_to_string(dir.join("mplus.json")) {
        let p: PolarizationMatrix = serde_json::from_str(&t)?;
        s.push_str(&format!(
            "M+ eigenvalues {:?}, symmetry defect {:.2e}, M+ + M- defect {:.2e}\n",
            crate::cell_problem::sym_eigenvalues(&p.matrix()),
            p.symmetry_defect(),
            p.antisymmetry_defect()
        ));
    }
    let mut files: Vec<(f64, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let h: f64 = name.strip_prefix("dispersion_h")?.strip_suffix(".csv")?.parse().ok()?;
            Some((h, e.path()))
        })
        .collect();
    files.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut summaries = Vec::new();
    for (h, p) in files {
        let d = BandDiagram::from_csv(h, junction, &fs::read_to_string(&p)?)?;
        let lambdas: Vec<f64> = fs::read_to_string(dir.join(format!("limit_h{}.json", h_label(h))))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| {
                v["eigenvalues"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            })
            .unwrap_or_default();
        let sm = summarize(&d, &lambdas);
        s.push_str(&format!(
            "h = {h}: {} bands, {} gaps, symmetry defect {:.2e}\n",
            sm.intervals.len(),
            sm.gaps.len(),
            sm.symmetry_defect
        ));
        for g in &sm.gaps {
            s.push_str(&format!(
                "  gap above band {}: ({:.6}, {:.6}) width {:.6}\n",
                g.below, g.lower, g.upper, g.width
            ));
        }
        summaries.push(sm);
    }
    if !summaries.is_empty() {
        let report = BandsReport {
            junction,
            diagrams: summaries,
        };
        fs::write(dir.join("bands.json"), serde_json::to_string_pretty(&report)?)?;
    }
    if let Ok(t) = fs::read_to_string(dir.join("convergence.json")) {
        let r: ConvergenceReport = serde_json::from_str(&t)?;
        let v = &r.verdict;
        s.push_str(&format!(
            "convergence: band {} winner {:?} slope {:?} (other {:?}){}{}\n",
            v.target_band,
            v.winner.map(Convention::name),
            v.winning_slope,
            v.losing_slope,
            if v.mesh_limited { " [mesh-limited]" } else { "" },
            if v.note.is_empty() { String::new() } else { format!(" ({})", v.note) }
        ));
    }
    Ok(s)
}
