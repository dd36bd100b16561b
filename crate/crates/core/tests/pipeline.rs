//! End-to-end runs through the public API: document in, verdicts out.

use bec_core::halfspace::edge_modes;
use bec_core::io::{chiral_to_doc, parse_family_doc, parse_model_doc};
use bec_core::verify::{verify_all, verify_ensemble, EnsembleSpec};
use bec_core::winding::bulk_winding;
use bec_core::{fixtures, Error, Tolerances};

const SSH_DOC: &str = r#"{
  "dim_v": 2,
  "range": 1,
  "on_site": [[[0, 0], [1, 0]], [[1, 0], [0, 0]]],
  "right_hops": [[[[0, 0], [0, 0]], [[2, 0], [0, 0]]]],
  "grading": [1, -1]
}"#;

#[test]
fn document_to_winding_and_edge() {
    let tol = Tolerances::default();
    let cm = parse_model_doc(SSH_DOC).unwrap().to_chiral(&tol).unwrap();
    let w = bulk_winding(&cm, &tol).unwrap();
    let e = edge_modes(&cm, None, &tol).unwrap();
    assert_eq!(w.winding, 1);
    assert_eq!(w.method_roots, Some(1));
    assert_eq!(e.edge_index, 1);
    assert_eq!((e.dim_ker_pm, e.dim_ker_mp), (1, 0));
}

#[test]
fn fixtures_survive_a_document_round_trip() {
    let tol = Tolerances::default();
    for (name, cm) in fixtures::by_name("dimerized-all").unwrap() {
        let text = serde_json::to_string(&chiral_to_doc(&cm)).unwrap();
        let back = parse_model_doc(&text).unwrap().to_chiral(&tol).unwrap();
        assert_eq!(back.grading, cm.grading, "{name}");
        let (a, b) = (bulk_winding(&cm, &tol).unwrap(), bulk_winding(&back, &tol).unwrap());
        assert_eq!(a.winding, b.winding, "{name}");
    }
}

#[test]
fn every_fixture_verifies() {
    let tol = Tolerances::default();
    for name in ["dimerized-all", "ssh:1,2", "ssh:2,1", "double-root:0.7"] {
        for (label, cm) in fixtures::by_name(name).unwrap() {
            let case = verify_all(&label, &cm, 60, &tol).unwrap();
            assert!(case.passed(), "{label}: {:?}", case.checks);
            assert_eq!(case.winding.winding, case.edge.edge_index, "{label}");
        }
    }
}

#[test]
fn family_corners_have_expected_winding() {
    let tol = Tolerances::default();
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../cli/data/ssh_family.json")).unwrap();
    let fam = parse_family_doc(&text).unwrap();
    for (t1, t2, w) in [(0.5, 1.5, 1), (1.5, 0.5, 0), (-0.5, -1.5, 1), (1.5, -0.5, 0)] {
        let cm = fam.model_at(t1, t2, &tol).unwrap();
        assert_eq!(bulk_winding(&cm, &tol).unwrap().winding, w, "t1={t1} t2={t2}");
    }
}

#[test]
fn small_ensemble_is_reproducible() {
    let tol = Tolerances::default();
    let spec = EnsembleSpec { seed: 42, count: 4, dim_v: 2, range: 1, coefficient_scale: 1.0, gap_floor: 0.05 };
    let a = serde_json::to_string(&verify_ensemble(&spec, 40, &tol).unwrap()).unwrap();
    let b = serde_json::to_string(&verify_ensemble(&spec, 40, &tol).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_documents_are_rejected() {
    let tol = Tolerances::default();
    assert!(matches!(parse_model_doc("{\"dim_v\": 2"), Err(Error::Parse(_))));
    let bad_grading = SSH_DOC.replace("[1, -1]", "[1, 1]");
    assert!(parse_model_doc(&bad_grading).unwrap().to_chiral(&tol).is_err());
    assert!(fixtures::by_name("no-such-fixture").is_err());
}
