use std::io::Write;

use gridshare_core::cases::{random_case, two_group_case, RandomCaseSpec};
use gridshare_core::model::{load_case, ModelError};
use gridshare_core::Case;

fn write_tmp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn two_group_file_loads() {
    let f = write_tmp(&two_group_case::<f64>(10.0).to_json());
    let case: Case = load_case(f.path()).unwrap();
    assert_eq!(case.users.len(), 200);
    assert_eq!(case.grid.lines[0].flow_limit, 10.0);
}

#[test]
fn round_trip_is_identical() {
    for seed in 0..20 {
        let case = random_case::<f64>(seed, &RandomCaseSpec::default());
        let f = write_tmp(&case.to_json());
        let loaded: Case = load_case(f.path()).unwrap();
        assert_eq!(loaded, case);
        let again: Case = Case::from_json(&loaded.to_json()).unwrap();
        assert_eq!(again, loaded);
    }
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_case::<f64>("/nonexistent/case.json"), Err(ModelError::Io(_))));
}

#[test]
fn wrong_type_names_position() {
    let text = two_group_case::<f64>(10.0).to_json().replacen("\"alpha1\": 0.3", "\"alpha1\": \"x\"", 1);
    let err = Case::from_json(&text).unwrap_err();
    assert!(matches!(err, ModelError::Parse(_)));
    assert!(err.to_string().contains("line"), "{err}");
}

#[test]
fn inverted_box_names_field() {
    let mut case = two_group_case::<f64>(10.0);
    case.users[5].elastic_lo = 0.9;
    match Case::from_json(&case.to_json()) {
        Err(ModelError::Invalid { field, .. }) => assert_eq!(field, "users[5].elastic_lo"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn negative_box_is_allowed() {
    let mut case = two_group_case::<f64>(10.0);
    case.users[0].elastic_lo = -0.5;
    assert!(Case::from_json(&case.to_json()).is_ok());
}
