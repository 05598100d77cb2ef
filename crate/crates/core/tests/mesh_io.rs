use ligament_bands::eigen::EigenOptions;
use ligament_bands::elastic::isotropic_hooke;
use ligament_bands::fem::assemble;
use ligament_bands::geometry::{build_limit_cell, CellParams, Junction, MeshSpec};
use ligament_bands::io::{read_matrix_market, write_matrix_market, write_vtk, PointField};
use ligament_bands::pipeline::CellModel;

#[test]
fn matrix_market_round_trip() {
    let params = CellParams::default();
    let mesh = build_limit_cell(&params, 0.2).unwrap();
    let pair = assemble(&mesh, &isotropic_hooke(1.0, 1.0).unwrap(), 1.0).unwrap();
    let mut buf = Vec::new();
    write_matrix_market(&mut buf, &pair.k).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
    let (n, entries) = read_matrix_market(&text).unwrap();
    assert_eq!(n, pair.k.n);
    assert_eq!(entries.len(), pair.k.nnz());
    for (i, j, re, im) in entries {
        assert_eq!(re, pair.k.get(i, j));
        assert_eq!(im, 0.0);
    }
}

#[test]
fn vtk_counts_match_the_mesh() {
    let params = CellParams::default();
    let mesh = build_limit_cell(&params, 0.2).unwrap();
    let field = vec![0.5; 3 * mesh.n_nodes()];
    let mut buf = Vec::new();
    write_vtk(&mut buf, &mesh, "cell", &[PointField { name: "u", values: &field }]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let n_cells = mesh.hexes.len() + mesh.facets.len();
    assert!(text.contains(&format!("POINTS {} double", mesh.n_nodes())));
    assert!(text.contains(&format!("CELL_TYPES {n_cells}")));
    assert!(text.contains(&format!("POINT_DATA {}", mesh.n_nodes())));
    assert_eq!(text.lines().filter(|l| *l == "12").count(), mesh.hexes.len());
}

#[test]
fn limit_cell_volume_and_moments() {
    let params = CellParams::new(0.45, 0.5, 0.1, Junction::Aperture).unwrap();
    let mesh = build_limit_cell(&params, 0.2).unwrap();
    assert!((mesh.volume() - params.volume()).abs() < 1e-12);
    let j = params.second_moments();
    assert!((j[0] - 0.9 * 0.45 * 0.45 / 3.0).abs() < 1e-15);
    assert!((j[2] - 0.9 / 12.0).abs() < 1e-15);
}

#[test]
fn periodic_rigid_motions_stay_free_at_zero_eta() {
    let params = CellParams::new(0.45, 0.5, 0.1, Junction::Aperture).unwrap();
    let spec = MeshSpec { resolution: 0.2, growth: 2.0, ..MeshSpec::default() };
    let model = CellModel::build(&params, &isotropic_hooke(1.0, 1.0).unwrap(), 0.1, &spec).unwrap();
    let opts = EigenOptions { n_eigs: 8, ..EigenOptions::default() };
    let sp = model.solve(0.0, &opts, &[]).unwrap();
    let top = sp.eigenvalues[7];
    // three translations and the rotation about the waveguide axis
    assert!(sp.eigenvalues[..4].iter().all(|l| l.abs() < 1e-9 * top), "{:?}", sp.eigenvalues);
    assert!(sp.eigenvalues[4] > 1e-3 * top, "{:?}", sp.eigenvalues);

    // the refinement leaves an already accurate spectrum in place
    let mut again = sp.clone();
    model.refine_small(&model.system(0.0), 0.0, &mut again).unwrap();
    for (a, b) in sp.eigenvalues.iter().zip(&again.eigenvalues) {
        assert!((a - b).abs() <= 1e-9 * top);
    }
}
