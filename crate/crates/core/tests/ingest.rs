use mvdi::panel::{emit, ingest, TransformSpec};
use mvdi::simulate::{planted_fixture, PlantedConfig};

#[test]
fn planted_fixture_round_trips_through_files() {
    let fx = planted_fixture(&PlantedConfig::default()).unwrap();
    assert_eq!((fx.series.nrows(), fx.series.ncols(), fx.series.len()), (14, 10, 107));
    let dir = tempfile::tempdir().unwrap();
    let (panel, target) = (dir.path().join("panel.csv"), dir.path().join("target.csv"));
    emit(&fx.series, &fx.target, &panel, &target).unwrap();
    let (series, y) = ingest(&panel, &target, &TransformSpec::identity()).unwrap();
    assert_eq!(series, fx.series);
    assert_eq!(y, fx.target);
}

#[test]
fn transforms_shorten_every_series_to_a_common_length() {
    let fx = planted_fixture(&PlantedConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (panel, target) = (dir.path().join("panel.csv"), dir.path().join("target.csv"));
    emit(&fx.series, &fx.target, &panel, &target).unwrap();
    let spec = TransformSpec::from_reader("row_id,col_id,rule\n*,c1,diff2\n*,*,diff1\n".as_bytes(), true).unwrap();
    let (series, y) = ingest(&panel, &target, &spec).unwrap();
    assert_eq!(series.len(), 105);
    assert_eq!(y.values().len(), 105);
    assert_eq!(series.time_index()[0], "3");
    let col: Vec<f64> = (0..105).map(|t| series.get(t)[(0, 1)]).collect();
    assert!(col.iter().sum::<f64>().abs() < 1e-10);
}
