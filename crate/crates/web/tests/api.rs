use gsdde_web::{chattering_gap, forward_paths, gap_view, gnormal_table, paths_view, table_view};

#[test]
fn table_is_a_distribution() {
    let v = table_view(0.75, 1.25).unwrap();
    assert_eq!(v.x.len(), v.pdf.len());
    assert!(v.cdf.windows(2).all(|w| w[1] >= w[0]));
    assert!(v.cdf[0] < 1e-3 && *v.cdf.last().unwrap() > 0.999);
}

#[test]
fn paths_are_seeded() {
    let a = paths_view(0.75, 1.25, 8, 3).unwrap();
    let b = paths_view(0.75, 1.25, 8, 3).unwrap();
    assert_eq!(a.paths, b.paths);
    assert_eq!(a.paths.len(), 8);
    assert_eq!(a.paths[0].len(), a.t.len());
}

#[test]
fn one_hot_control_has_zero_gap() {
    let rows = gap_view(1.0, 50, 1).unwrap();
    assert!(rows.iter().all(|r| r.gap == 0.0));
}

#[test]
fn exports_return_json_or_messages() {
    assert!(gnormal_table(1.0, 1.0).unwrap().starts_with("{\"x\":"));
    assert!(gnormal_table(1.5, 1.0).is_err());
    assert!(forward_paths(0.75, 1.25, 0, 1).is_err());
    assert!(chattering_gap(0.5, 20, 1).unwrap().starts_with('['));
}
