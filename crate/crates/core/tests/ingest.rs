use errlab_core::datagen::{generate, make_preset_spec, CategoricalColumn, Dataset, PresetScenario};
use errlab_core::ingest::*;
use errlab_core::randmath::RngState;
use proptest::prelude::*;

fn synthetic(n: usize) -> Dataset<f64> {
    let mut spec = make_preset_spec(PresetScenario::Sim3 { scenario: 1 }).unwrap();
    spec.n = n;
    let ds = generate::<f64>(&spec, RngState::new(3)).unwrap();
    let mut ds = inject_missing_day(&ds, 1, 0.3, RngState::new(4)).unwrap();
    ds.x_true = None;
    ds.x_additive = None;
    ds.categoricals.push(CategoricalColumn {
        name: "group".into(),
        values: (0..n).map(|i| ["a", "b", "c"][i % 3].to_string()).collect(),
    });
    ds
}

#[test]
fn written_tables_round_trip() {
    let ds = synthetic(200);
    let schema = TableSchema::for_dataset(&ds);
    let mut buf = Vec::new();
    write_table(&ds, &schema, &mut buf).unwrap();
    let back: LoadedTable<f64> = read_table(&buf[..], &schema).unwrap();
    assert_eq!(back.dropped_missing + back.dropped_filtered, 0);
    assert_eq!(back.dataset, ds);
    let absent = ds.present.iter().filter(|&&p| !p).count();
    assert!(absent > 30 && absent < 90, "{absent}");
}

#[test]
fn file_round_trip_with_semicolons() {
    let ds = synthetic(50);
    let mut schema = TableSchema::for_dataset(&ds);
    schema.delimiter = ';';
    schema.missing_token = ".".into();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_table(&ds, &schema, std::fs::File::create(&path).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains(';'));
    assert_eq!(load_table::<f64>(&path, &schema).unwrap().dataset, ds);
}

#[test]
fn single_precision_load() {
    let ds = synthetic(20);
    let schema = TableSchema::for_dataset(&ds);
    let mut buf = Vec::new();
    write_table(&ds, &schema, &mut buf).unwrap();
    let back: LoadedTable<f32> = read_table(&buf[..], &schema).unwrap();
    assert_eq!(back.dataset.y[3], ds.y[3] as f32);
}

#[test]
fn missing_schema_file_is_io_error() {
    assert!(matches!(
        TableSchema::load(std::path::Path::new("/nonexistent/schema.json")),
        Err(errlab_core::Error::Io { .. })
    ));
}

fn cell() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => (-1000i32..1000, 0u32..100).prop_map(|(a, b)| format!("{a}.{b}")),
        1 => Just("NA".to_string()),
        1 => Just(String::new()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn never_invents_values(rows in proptest::collection::vec(proptest::collection::vec(cell(), 4), 1..30)) {
        let schema: TableSchema = serde_json::from_str(
            r#"{"outcome_column": "y", "replicate_columns": [{"name": "x", "days": ["d1", "d2"]}],
                "covariate_columns": [{"name": "z", "kind": "continuous"}]}"#,
        ).unwrap();
        let mut text = String::from("y,d1,d2,z\n");
        for r in &rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        let t: LoadedTable<f64> = read_table(text.as_bytes(), &schema).unwrap();
        prop_assert_eq!(t.rows_read, rows.len());
        prop_assert_eq!(t.dropped_missing + t.dropped_filtered + t.dataset.n(), rows.len());
        let file_values: Vec<f64> = rows.iter().flatten().filter_map(|c| c.parse().ok()).collect();
        let ds = &t.dataset;
        for i in 0..ds.n() {
            prop_assert!(file_values.contains(&ds.y[i]));
            prop_assert!(file_values.contains(&ds.z[(i, 0)]));
            for j in 0..2 {
                if ds.is_present(i, j) {
                    prop_assert!(file_values.contains(&ds.x(i, 0, j)));
                }
            }
        }
    }
}
