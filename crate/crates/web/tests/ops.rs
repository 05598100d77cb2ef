use ligament_bands_web::{box_betas, coarse_dispersion_impl, correction_curve_impl, rigid_predictions_impl};
use serde_json::Value;

const M: &str = "[[0.9, 0.1, 0.0], [0.1, 0.8, 0.0], [0.0, 0.0, 0.5]]";

#[test]
fn curve_is_cosine_and_band_encloses_it() {
    let input = format!(
        r#"{{"lambda": 7.0, "a": 0.0, "trace_top": [0.2, 0.0, 0.5], "trace_bottom": [-0.2, 0.1, 0.5],
            "m_plus": {M}, "h": 0.05, "n_eta": 17}}"#
    );
    let v: Value = serde_json::from_str(&correction_curve_impl(&input).unwrap()).unwrap();
    let c0 = v["curve"]["c0"].as_f64().unwrap();
    let c1 = v["curve"]["c1"].as_f64().unwrap();
    let etas = v["curve"]["etas"].as_array().unwrap();
    let vals = v["curve"]["values"].as_array().unwrap();
    for (e, y) in etas.iter().zip(vals) {
        let e = e.as_f64().unwrap();
        assert!((y.as_f64().unwrap() - (c0 + c1 * e.cos())).abs() < 1e-12);
    }
    let lo = v["band"]["lower"].as_f64().unwrap();
    let hi = v["band"]["upper"].as_f64().unwrap();
    for d in v["dispersion"].as_array().unwrap() {
        let d = d.as_f64().unwrap();
        assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
    }
}

#[test]
fn rigid_predictions_start_with_three_zeros() {
    let input = format!(r#"{{"half_x": 0.45, "half_y": 0.5, "m_plus": {M}, "h": 0.05, "n_eta": 9}}"#);
    let v: Value = serde_json::from_str(&rigid_predictions_impl(&input).unwrap()).unwrap();
    let bands = v["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 9);
    for row in &bands[1..8] {
        let r: Vec<f64> = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(r[..3].iter().all(|x| x.abs() < 1e-14));
        assert!(r[3] > 0.0 && r.windows(2).all(|w| w[0] <= w[1] + 1e-14));
    }
    let b = box_betas(0.45, 0.5);
    assert!((b[0] - (0.9f64).powf(-0.5)).abs() < 1e-14);
}

#[test]
fn rejects_malformed_input() {
    assert!(correction_curve_impl("{").is_err());
    assert!(rigid_predictions_impl(&format!(r#"{{"half_x": -1, "half_y": 0.5, "m_plus": {M}, "h": 0.05}}"#)).is_err());
    assert!(coarse_dispersion_impl(r#"{"cell": {"half_x": 0.45, "half_y": 0.5, "ligament_half_width": 0.1, "junction": "aperture"}, "h": 0.3}"#).is_err());
}

#[test]
fn coarse_dispersion_runs() {
    let input = r#"{"cell": {"half_x": 0.45, "half_y": 0.5, "ligament_half_width": 0.1, "junction": "aperture"},
                    "h": 0.1, "n_eta": 3, "n_bands": 8}"#;
    let v: Value = serde_json::from_str(&coarse_dispersion_impl(input).unwrap()).unwrap();
    let bands = v["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 3);
    let limit: Vec<f64> = v["limit"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let first: Vec<f64> = bands[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    // At eta = 0 translations stay free.
    assert!(first[0].abs() < 1e-6 * limit[6]);
    assert!((first[6] - limit[6]).abs() < 0.5 * limit[6]);
}
