use qlink_web::{composite_scan, grover, teleported_cz_chi};

fn chi(werner_p: f64, local_cz: f64) -> serde_json::Value {
    serde_json::from_str(&teleported_cz_chi(werner_p, local_cz, 1).unwrap()).unwrap()
}

#[test]
fn chi_view_has_sixteen_labels_and_sane_fidelity() {
    let v = chi(0.115, 0.04);
    assert_eq!(v["labels"].as_array().unwrap().len(), 16);
    assert_eq!(v["magnitude"].as_array().unwrap().len(), 16);
    let f = v["average_gate_fidelity"].as_f64().unwrap();
    assert!(f > 0.8 && f < 0.9, "{f}");
}

#[test]
fn worse_bell_pairs_lower_the_fidelity() {
    let a = chi(0.05, 0.04)["average_gate_fidelity"].as_f64().unwrap();
    let b = chi(0.3, 0.04)["average_gate_fidelity"].as_f64().unwrap();
    assert!(b < a);
}

#[test]
fn scan_and_grover_return_json() {
    let s = composite_scan(50.0, 15.0, 1.2, 1.4, 5).unwrap();
    let v: serde_json::Value = serde_json::from_str(&s).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);
    let g = grover(0.0, 0.0, 10, 3).unwrap();
    let v: serde_json::Value = serde_json::from_str(&g).unwrap();
    assert_eq!(v["per_marked"].as_array().unwrap().len(), 4);
}
