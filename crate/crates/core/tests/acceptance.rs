//! Acceptance suite. Prints one line per criterion and fails at the end if
//! any criterion fails.

use std::f64::consts::TAU;
use std::time::Instant;

use ligament_bands::asymptotics::{
    rigid_kernel_vectors, Convention, CouplingVector, MultiplicityMatrix,
};
use ligament_bands::cell_problem::{antisymmetry_defect, polarization_study, PolarizationMatrix};
use ligament_bands::config::{default_eta_grid, SweepConfig};
use ligament_bands::eigen::{solve_gevp, EigenOptions};
use ligament_bands::elastic::HookeTensor;
use ligament_bands::fem::assemble;
use ligament_bands::geometry::{build_limit_cell, build_scaled_body, scale_map, Junction, MeshSpec};
use ligament_bands::limit::{align_rigid_cluster, rigid_basis, solve_limit_assembled, LimitSpectrum};
use ligament_bands::pipeline::{
    ansatz_sample, band_width_check, convergence_study, detect_gaps, rigid_band_check, AnsatzCheck,
    BandDiagram, CellModel, InnerSolutions, LimitModel, StudyLevel,
};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    n: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

struct Board {
    rows: Vec<Outcome>,
}

impl Board {
    fn record(&mut self, n: usize, name: &'static str, pass: bool, detail: String, t: Instant) {
        let o = Outcome {
            n,
            name,
            pass,
            detail,
            secs: t.elapsed().as_secs_f64(),
        };
        println!(
            "criterion {:>2} [{}] {} ({:.0} s): {}",
            o.n,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.secs,
            o.detail
        );
        self.rows.push(o);
    }
}

fn config(junction: Junction) -> SweepConfig {
    let mut c = SweepConfig::default();
    c.cell.junction = junction;
    c
}

struct Level {
    limit: LimitModel,
    cell: CellModel,
    diagram: BandDiagram,
}

fn sweep_level(cfg: &SweepConfig, a: &HookeTensor, h: f64, spec: &MeshSpec, etas: &[f64], n_bands: usize) -> Level {
    let mut lo = cfg.limit_options();
    lo.n_eigs = lo.n_eigs.max(n_bands);
    let limit = LimitModel::build(&cfg.cell, a, h, spec, &lo).expect("limit template");
    let cell = CellModel::build(&cfg.cell, a, h, spec).expect("periodicity cell");
    let mut eo = cfg.eigen_options();
    eo.n_eigs = n_bands;
    let diagram = cell.sweep(etas, &eo);
    assert!(diagram.is_complete(), "sweep at h = {h} failed: {:?}", diagram.failures);
    Level { limit, cell, diagram }
}

fn aligned_limit(cfg: &SweepConfig, a: &HookeTensor, resolution: f64) -> (LimitSpectrum, [f64; 6]) {
    let mesh = build_limit_cell(&cfg.cell, resolution).unwrap();
    let pair = assemble(&mesh, a, 1.0).unwrap();
    let raw = solve_limit_assembled(&mesh, &pair, &cfg.limit_options()).unwrap();
    let basis = rigid_basis(&mesh);
    (align_rigid_cluster(&raw, &basis, &mesh, &pair.m).unwrap(), basis.betas)
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<C>> {
    let mut q: Vec<Vec<C>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<C> = (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        for u in &q {
            let p: C = u.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            q.push(v.into_iter().map(|z| z / nrm).collect());
        }
    }
    q
}

#[test]
fn acceptance() {
    let _ = env_logger::builder().is_test(true).try_init();
    let mut board = Board { rows: Vec::new() };
    let grid = default_eta_grid(17);
    let ligament = config(Junction::Ligament);
    let aperture = config(Junction::Aperture);
    let hooke = ligament.material.hooke().unwrap();
    let hs = [0.1, 0.07, 0.05];

    // 1
    let t = Instant::now();
    let (limit_box, betas_box) = aligned_limit(&ligament, &hooke, 0.05);
    let l7 = limit_box.eigenvalues[6];
    let zeros = limit_box.eigenvalues.iter().filter(|&&l| l <= 1e-8 * l7).count();
    board.record(
        1,
        "rigid-motion spectrum",
        zeros == 6 && l7 > 0.0,
        format!("{zeros} eigenvalues below 1e-8 lambda7, lambda7 = {l7:.6}"),
        t,
    );

    // 2
    let t = Instant::now();
    let base_mesh = build_limit_cell(&ligament.cell, 0.1).unwrap();
    let lo = ligament.limit_options();
    let spectrum = |mesh: &_| {
        let pair = assemble(mesh, &hooke, 1.0).unwrap();
        let opts = EigenOptions { n_eigs: lo.n_eigs, ..lo.eigen };
        solve_gevp(&pair.k, &pair.m, &opts, None).unwrap().eigenvalues
    };
    let base = spectrum(&base_mesh);
    let mut worst: f64 = 0.0;
    for h in [0.05, 0.1] {
        let map = scale_map(Junction::Ligament, h).unwrap();
        let mesh = build_scaled_body(&base_mesh, &map, h);
        let scaled = spectrum(&mesh);
        for j in 6..base.len().min(scaled.len()) {
            let expect = map.eigenvalue_factor() * base[j];
            worst = worst.max((scaled[j] - expect).abs() / expect);
        }
    }
    board.record(
        2,
        "scaling identity",
        worst <= 1e-3,
        format!("max relative deviation from a_h^2 lambda_j = {worst:.3e}"),
        t,
    );

    // 3
    let t = Instant::now();
    let mut c3 = true;
    let mut d3 = Vec::new();
    let mut pols: Vec<PolarizationMatrix> = Vec::new();
    for cfg in [&ligament, &aperture] {
        let p = polarization_study(&cfg.cell, &hooke, &cfg.rho, &cfg.mesh).unwrap();
        let fin = p.finest();
        let raw = antisymmetry_defect(&fin.m_plus, &fin.m_minus);
        let ext = p.antisymmetry_defect();
        let sym = p.symmetry_defect();
        let min = p.min_eigenvalue();
        let ok = sym <= 1e-6 && min > 0.0 && raw <= 3e-2 && ext <= raw.max(1e-9);
        c3 &= ok;
        d3.push(format!(
            "a={}: sym {sym:.1e}, min eig {min:.4e}, |M+ + M-| raw {raw:.2e} extrapolated {ext:.2e}",
            cfg.cell.a()
        ));
        pols.push(p);
    }
    let m_lig = pols[0].matrix();
    let m_ap = pols[1].matrix();
    board.record(3, "polarization matrix", c3, d3.join("; "), t);

    // 4 and 5 share the default sweep of the ligament junction.
    let t = Instant::now();
    let lig_levels: Vec<Level> = hs
        .iter()
        .map(|&h| sweep_level(&ligament, &hooke, h, &ligament.mesh, &grid, 10))
        .collect();
    let defect = lig_levels.iter().map(|l| l.diagram.symmetry_defect()).fold(0.0, f64::max);
    board.record(
        4,
        "time-reversal symmetry",
        defect <= 1e-8,
        format!("max relative |Lambda(eta) - Lambda(2pi - eta)| = {defect:.2e}"),
        t,
    );

    let t = Instant::now();
    let levels: Vec<StudyLevel> = lig_levels
        .iter()
        .map(|l| StudyLevel {
            h: l.diagram.h,
            limit: &l.limit.spectrum,
            diagram: &l.diagram,
            control: None,
        })
        .collect();
    let lig_report = convergence_study(&levels, &m_lig, None, 1.0, &[Convention::Factor2], 10).unwrap();
    let fits: Vec<_> = lig_report.enclosure.iter().filter(|e| (7..=10).contains(&e.band)).collect();
    let c5 = fits.len() == 4 && fits.iter().all(|e| e.fit_residual <= 0.2);
    board.record(
        5,
        "linear enclosure",
        c5,
        fits.iter()
            .map(|e| format!("band {} C = {:.3} residual {:.1}%", e.band, e.c_fit, 100.0 * e.fit_residual))
            .collect::<Vec<_>>()
            .join(", "),
        t,
    );
    drop(levels);
    drop(lig_levels);

    // 6, 7, 8 share the aperture sweeps.
    let t = Instant::now();
    let control_spec = aperture.study.control_mesh.unwrap();
    let ap_levels: Vec<Level> = hs
        .iter()
        .map(|&h| sweep_level(&aperture, &hooke, h, &aperture.mesh, &grid, 12))
        .collect();
    let ap_control: Vec<Level> = hs
        .iter()
        .map(|&h| sweep_level(&aperture, &hooke, h, &control_spec, &grid, 12))
        .collect();
    let m_ap_control = polarization_study(&aperture.cell, &hooke, &aperture.rho, &control_spec)
        .unwrap()
        .matrix();
    let levels: Vec<StudyLevel> = ap_levels
        .iter()
        .zip(&ap_control)
        .map(|(p, c)| StudyLevel {
            h: p.diagram.h,
            limit: &p.limit.spectrum,
            diagram: &p.diagram,
            control: Some((&c.limit.spectrum, &c.diagram)),
        })
        .collect();
    let report = convergence_study(&levels, &m_ap, Some(&m_ap_control), 0.0, &Convention::ALL, 10).unwrap();
    let v = &report.verdict;
    let b1 = report.band(Convention::Factor1, 10).unwrap();
    let b2 = report.band(Convention::Factor2, 10).unwrap();
    let floor = b2.floor.as_ref().map(|f| f[2] / b2.errors[2]).unwrap_or(f64::NAN);
    let c6 = !v.mesh_limited
        && v.winner.is_some()
        && v.winning_slope.is_some_and(|s| s >= 1.2)
        && v.losing_slope.is_some_and(|s| s <= 1.05);
    board.record(
        6,
        "first-order correction",
        c6,
        format!(
            "band 10, winner {:?} slope {:.3}, loser slope {:.3}; factor1 errors {:.2e}..{:.2e}, \
             factor2 errors {:.2e}..{:.2e}, floor {:.0}% of smallest error",
            v.winner.map(|c| c.name()),
            v.winning_slope.unwrap_or(f64::NAN),
            v.losing_slope.unwrap_or(f64::NAN),
            b1.errors[0],
            b1.errors[2],
            b2.errors[0],
            b2.errors[2],
            100.0 * floor
        ),
        t,
    );
    drop(levels);

    let t = Instant::now();
    let w_far = band_width_check(&ap_levels[0].diagram, &ap_levels[0].limit.spectrum, &m_ap, 0.0, Convention::Factor2, 9)
        .unwrap();
    let w_near = band_width_check(&ap_levels[2].diagram, &ap_levels[2].limit.spectrum, &m_ap, 0.0, Convention::Factor2, 9)
        .unwrap();
    let scaling = w_far.measured / w_near.measured;
    let c7 = (0.8..=1.25).contains(&w_near.ratio) && (1.5..=2.5).contains(&scaling);
    board.record(
        7,
        "band width",
        c7,
        format!(
            "band 9 at h=0.05: measured {:.4e} predicted {:.4e} ratio {:.3}; width(0.1)/width(0.05) = {scaling:.3}; \
             A M B = {:.3e}, |u(P-)| = {:.3e}",
            w_near.measured, w_near.predicted, w_near.ratio, w_near.a_m_b, w_near.bottom_trace
        ),
        t,
    );

    let t = Instant::now();
    let finest = &ap_levels[2];
    let rc = rigid_band_check(
        &finest.diagram,
        &finest.limit.spectrum,
        &finest.limit.basis.betas,
        &m_ap,
        Convention::Factor2,
    )
    .unwrap();
    let c8 = !rc.samples.is_empty() && rc.worst_zero_ratio() <= 0.1 && rc.worst_deviation() <= 0.15;
    board.record(
        8,
        "rigid bands",
        c8,
        format!(
            "{} samples at h=0.05: worst zero ratio {:.3e}, worst deviation {:.2}%",
            rc.samples.len(),
            rc.worst_zero_ratio(),
            100.0 * rc.worst_deviation()
        ),
        t,
    );

    // 9
    let t = Instant::now();
    let coarse_grid = default_eta_grid(9);
    let mut widths = Vec::new();
    for l in &ap_levels {
        let d = l.diagram.restricted(&coarse_grid);
        widths.push((l.diagram.h, gap_above(&d, &l.limit.spectrum.eigenvalues, 6)));
    }
    let extra = sweep_level(&aperture, &hooke, 0.03, &aperture.mesh, &coarse_grid, 8);
    widths.push((0.03, gap_above(&extra.diagram, &extra.limit.spectrum.eigenvalues, 6)));
    drop(extra);
    let at_05 = widths[2].1;
    let growing = widths.windows(2).all(|w| w[1].1 > w[0].1);
    board.record(
        9,
        "gap existence",
        at_05 > 0.0 && growing,
        format!(
            "gap between bands 6 and 7: {}",
            widths
                .iter()
                .map(|(h, w)| format!("h={h} width {w:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        t,
    );

    // 10
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cvs: Vec<CouplingVector> = (0..6)
        .map(|k| CouplingVector::from_traces(limit_box.trace_top[k], limit_box.trace_bottom[k]))
        .collect();
    let mut max_rank = 0;
    let mut kernel: f64 = 0.0;
    let mut invariance: f64 = 0.0;
    for _ in 0..5 {
        let eta = rng.gen_range(0.0..TAU);
        let b = MultiplicityMatrix::new(&cvs, &m_lig, eta).unwrap();
        max_rank = max_rank.max(b.rank(1e-8));
        for kv in rigid_kernel_vectors(&betas_box, eta) {
            kernel = kernel.max(b.apply(&kv).iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        let q = random_unitary(6, &mut rng);
        let jumps: Vec<[C; 3]> = cvs.iter().map(|c| c.jump(eta)).collect();
        let rotated: Vec<[C; 3]> = q
            .iter()
            .map(|row| std::array::from_fn(|i| row.iter().zip(&jumps).map(|(w, bj)| w * bj[i]).sum()))
            .collect();
        let br = MultiplicityMatrix::from_jumps(&rotated, &m_lig, eta).unwrap();
        let scale = b.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (x, y) in b.eigenvalues.iter().zip(&br.eigenvalues) {
            invariance = invariance.max((x - y).abs() / scale);
        }
    }
    board.record(
        10,
        "multiplicity machinery",
        max_rank <= 3 && kernel <= 1e-10 && invariance <= 1e-10,
        format!("max rank {max_rank}, kernel residual {kernel:.2e}, unitary invariance {invariance:.2e}"),
        t,
    );

    // 11
    let t = Instant::now();
    let rho = aperture.rho.iter().cloned().fold(0.0, f64::max);
    let inner = InnerSolutions::build(&aperture.cell, &hooke, rho, &aperture.mesh).unwrap();
    let mut check = AnsatzCheck {
        band: 10,
        eta: 2.0,
        samples: Vec::new(),
    };
    for l in &ap_levels {
        check.samples.push(
            ansatz_sample(&aperture.cell, &l.limit, &l.cell, &inner, 10, 2.0, &aperture.eigen_options()).unwrap(),
        );
    }
    let s05 = check.samples.iter().find(|s| s.h == 0.05).unwrap();
    board.record(
        11,
        "ansatz overlap",
        s05.overlap >= 0.95 && check.monotone(),
        format!(
            "band 10 at eta=2: {}",
            check
                .samples
                .iter()
                .map(|s| format!(
                    "h={} overlap {:.4} H1 error {:.3} (next band overlap {:.3})",
                    s.h, s.overlap, s.h1_error, s.wrong_band_overlap
                ))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        t,
    );

    let failed: Vec<usize> = board.rows.iter().filter(|o| !o.pass).map(|o| o.n).collect();
    println!(
        "acceptance: {}/{} criteria pass",
        board.rows.len() - failed.len(),
        board.rows.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

/// Width of the gap between band `k` and band `k + 1` (1-based), zero when
/// the bands overlap.
fn gap_above(d: &BandDiagram, lambdas: &[f64], k: usize) -> f64 {
    detect_gaps(d, lambdas)
        .iter()
        .find(|g| g.below == k)
        .map(|g| g.width)
        .unwrap_or(0.0)
}
