use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use mmw_core::format::{parse_delimited, parse_jsonl, Format};
use mmw_core::schema::{Attribute, RelationSchema};
use mmw_core::testkit::Gen;
use mmw_core::{parse_query, DataType, DataValue, Table, Tuple};
use mmw_mesh::{
    Component, ErrorCode, FaultPoint, Mask, MaskConfig, MaskMode, Mediator, MediatorConfig, Refresh, Wrapper,
    WrapperConfig,
};
use proptest::prelude::*;

fn golden(name: &str) -> String {
    fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/data/golden")
            .join(name),
    )
    .unwrap()
}

fn pair() -> Table {
    let schema = RelationSchema::new(
        "pair",
        vec![
            Attribute::new("id", DataType::Integer),
            Attribute::new("note", DataType::Text).nullable(),
            Attribute::new("price", DataType::Decimal),
            Attribute::new("at", DataType::Timestamp).nullable(),
        ],
    );
    // deliberately out of order
    Table::new(
        schema,
        vec![
            vec![
                DataValue::Integer(2),
                DataValue::text("b, \"x\""),
                DataValue::decimal("10.50").unwrap(),
                DataValue::Null,
            ],
            vec![
                DataValue::Integer(1),
                DataValue::Null,
                DataValue::decimal("-0.25").unwrap(),
                DataValue::timestamp("2024-01-02T03:04:05Z").unwrap(),
            ],
        ],
    )
    .unwrap()
}

fn memory(id: &str, alias: &str, tables: &[Table]) -> Arc<Wrapper> {
    Arc::new(Wrapper::standalone(WrapperConfig::memory(id, alias, tables)).unwrap())
}

fn serving_mask(upstream: Arc<dyn Component>) -> Mask {
    Mask::standalone(MaskConfig::virtualizing("serve", Some(upstream.id())), Some(upstream)).unwrap()
}

fn serve(m: &Mask, text: &str, f: Format) -> Result<String, mmw_mesh::ComponentError> {
    m.serve(&parse_query(text).unwrap(), f, "tester")
}

#[test]
fn renderings_match_golden_files_on_every_run() {
    let mask = serving_mask(memory("w", "g", &[pair()]));
    for _ in 0..3 {
        assert_eq!(
            serve(&mask, "SELECT * FROM g.pair", Format::Csv).unwrap(),
            golden("pair.csv")
        );
        assert_eq!(
            serve(&mask, "SELECT * FROM g.pair", Format::Jsonl).unwrap(),
            golden("pair.jsonl")
        );
    }
    let pretty = serve(&mask, "SELECT * FROM g.pair", Format::Pretty).unwrap();
    assert!(pretty.ends_with("(2 rows)\n"), "{pretty}");
}

#[test]
fn empty_result_is_header_only() {
    let mask = serving_mask(memory("w", "g", &[pair()]));
    let csv = serve(&mask, "SELECT * FROM g.pair WHERE id > 5", Format::Csv).unwrap();
    assert_eq!(csv, "id:integer,note:text?,price:decimal,at:timestamp?\n");
    assert_eq!(
        serve(&mask, "SELECT * FROM g.pair WHERE id > 5", Format::Jsonl).unwrap(),
        ""
    );
}

#[test]
fn disabled_format_and_upstream_errors() {
    let w = memory("w", "g", &[pair()]);
    let mut config = MaskConfig::virtualizing("serve", Some("w"));
    config.formats = vec![Format::Jsonl];
    let mask = Mask::standalone(config, Some(w)).unwrap();
    let e = serve(&mask, "SELECT * FROM g.pair", Format::Csv).unwrap_err();
    assert_eq!((e.code, e.origin.as_str()), (ErrorCode::Protocol, "serve"));
    let e = serve(&mask, "SELECT * FROM g.nothing", Format::Jsonl).unwrap_err();
    assert_eq!((e.code, e.origin.as_str()), (ErrorCode::UnknownRelation, "w"));

    let mut none = MaskConfig::virtualizing("serve", Some("w"));
    none.formats.clear();
    assert!(Mask::standalone(none, Some(memory("w", "g", &[]))).is_err());
}

fn gen_table(g: &mut Gen, rows: usize) -> Table {
    let schema = g.relation("t");
    let rows: Vec<Tuple> = (0..rows)
        .map(|_| schema.attributes.iter().map(|a| g.cell(a)).collect())
        .collect();
    Table::new(schema, rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csv_then_jsonl_round_trip(seed in any::<u64>(), rows in 0usize..12) {
        let mut g = Gen::new(seed);
        let t = gen_table(&mut g, rows);
        let mask = serving_mask(memory("w", "g", std::slice::from_ref(&t)));
        let csv = serve(&mask, "SELECT * FROM g.t", Format::Csv).unwrap();
        let from_csv = parse_delimited(&csv, "t").unwrap();
        prop_assert!(from_csv.bag_eq(&t));
        let again = serving_mask(memory("w2", "h", &[from_csv]));
        let jsonl = serve(&again, "SELECT * FROM h.t", Format::Jsonl).unwrap();
        let from_jsonl = parse_jsonl(&jsonl, &t.schema).unwrap();
        prop_assert!(from_jsonl.bag_eq(&t));
        // identical table, identical bytes
        prop_assert_eq!(serve(&mask, "SELECT * FROM g.t", Format::Csv).unwrap(), csv);
    }
}

struct Pipeline {
    _dir: tempfile::TempDir,
    target: std::path::PathBuf,
    source: Arc<Wrapper>,
    stage: Arc<Mediator>,
    mask: Arc<Mask>,
}

fn items(n: i64) -> Table {
    Table::new(
        RelationSchema::new(
            "items",
            vec![
                Attribute::new("id", DataType::Integer),
                Attribute::new("label", DataType::Text),
            ],
        ),
        (0..n)
            .map(|i| vec![DataValue::Integer(i), DataValue::text(format!("item {i}"))])
            .collect(),
    )
    .unwrap()
}

fn pipeline(views: &str, tables: &[Table]) -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("store/product");
    let source = memory("src", "ops", tables);
    let stage = Arc::new(
        Mediator::standalone(
            MediatorConfig::new("stage", "staged")
                .bind("ops", "src")
                .with_views(views),
            [("ops".to_string(), source.clone() as Arc<dyn Component>)].into(),
        )
        .unwrap(),
    );
    let mask = Arc::new(
        Mask::standalone(
            MaskConfig::materializing("store", "stage", &target),
            Some(stage.clone() as Arc<dyn Component>),
        )
        .unwrap(),
    );
    Pipeline {
        _dir: dir,
        target,
        source,
        stage,
        mask,
    }
}

const TWO_VIEWS: &str =
    "CREATE VIEW items AS SELECT * FROM ops.items;\nCREATE VIEW labels AS SELECT label FROM ops.items WHERE id > 2;";

fn wrap(target: &Path) -> Wrapper {
    Wrapper::standalone(WrapperConfig::delimited_dir("reader", "stored", target)).unwrap()
}

fn read(w: &Wrapper, rel: &str) -> Table {
    w.execute(&parse_query(&format!("SELECT * FROM stored.{rel}")).unwrap(), "t")
        .unwrap()
}

fn staged(p: &Pipeline, rel: &str) -> Table {
    p.stage
        .execute(&parse_query(&format!("SELECT * FROM staged.{rel}")).unwrap(), "t")
        .unwrap()
}

#[test]
fn materialize_then_wrap_serves_the_product() {
    let p = pipeline(TWO_VIEWS, &[items(6)]);
    let report = p.mask.materialize().unwrap();
    assert_eq!(report.epoch, 1);
    let rows: Vec<(&str, usize)> = report.relations.iter().map(|r| (r.name.as_str(), r.rows)).collect();
    assert_eq!(rows, [("items", 6), ("labels", 3)]);
    assert_eq!(
        fs::read_to_string(p.target.parent().unwrap().join("product.epoch"))
            .unwrap()
            .trim(),
        "1"
    );
    let w = wrap(&p.target);
    for rel in ["items", "labels"] {
        assert!(read(&w, rel).bag_eq(&staged(&p, rel)), "{rel}");
    }
    assert_eq!(p.mask.epoch().unwrap(), 1);
}

#[test]
fn empty_product_writes_header_only_files() {
    let p = pipeline("CREATE VIEW items AS SELECT * FROM ops.items;", &[items(0)]);
    let report = p.mask.materialize().unwrap();
    assert_eq!(report.relations[0].rows, 0);
    assert_eq!(
        fs::read_to_string(p.target.join("items.csv")).unwrap(),
        "id:integer,label:text\n"
    );
}

#[test]
fn modes_are_exclusive() {
    let p = pipeline(TWO_VIEWS, &[items(2)]);
    let q = parse_query("SELECT * FROM staged.items").unwrap();
    assert_eq!(p.mask.execute(&q, "t").unwrap_err().code, ErrorCode::Protocol);
    assert_eq!(
        p.mask.serve(&q, Format::Csv, "t").unwrap_err().code,
        ErrorCode::Protocol
    );
    assert_eq!(p.mask.mode(), MaskMode::Materializing);

    let virt = serving_mask(p.stage.clone());
    assert_eq!(virt.materialize().unwrap_err().code, ErrorCode::Protocol);
    assert!(virt.target().is_none());

    // materializing needs a target and an upstream
    let mut no_target = MaskConfig::materializing("m", "stage", "x");
    no_target.target = None;
    assert!(Mask::standalone(no_target, Some(p.stage.clone() as Arc<dyn Component>)).is_err());
    assert!(Mask::standalone(MaskConfig::materializing("m", "stage", p.target.clone()), None).is_err());
}

#[test]
fn interrupted_refresh_keeps_the_previous_snapshot() {
    for point in [FaultPoint::MidStaging, FaultPoint::BeforePublish] {
        let p = pipeline(TWO_VIEWS, &[items(4)]);
        p.mask.materialize().unwrap();
        let w = wrap(&p.target);
        let before: Vec<Table> = ["items", "labels"].iter().map(|r| read(&w, r)).collect();

        p.source.replace_rows("items", items(9).rows).unwrap();
        p.mask.inject_fault(Some(point));
        assert!(p.mask.materialize().is_err(), "{point:?}");
        assert_eq!(p.mask.epoch().unwrap(), 1);
        for (rel, old) in ["items", "labels"].iter().zip(&before) {
            assert!(read(&w, rel).bag_eq(old), "{point:?} {rel}");
        }

        p.mask.inject_fault(None);
        assert_eq!(p.mask.materialize().unwrap().epoch, 2);
        assert_eq!(read(&w, "items").len(), 9);
    }
}

/// Readers racing refreshes only ever see whole snapshots.
#[test]
fn concurrent_readers_never_see_partial_snapshots() {
    let p = pipeline(TWO_VIEWS, &[items(3)]);
    p.mask.materialize().unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let target = p.target.clone();
    let reader = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            let w = wrap(&target);
            let mut seen = 0;
            while !stop.load(Ordering::SeqCst) {
                let t = read(&w, "items");
                // a complete snapshot of n items has ids 0..n
                let ids: BTreeSet<i64> = t
                    .rows
                    .iter()
                    .map(|r| match r[0] {
                        DataValue::Integer(i) => i,
                        _ => unreachable!(),
                    })
                    .collect();
                assert_eq!(ids, (0..t.len() as i64).collect(), "partial snapshot");
                seen += 1;
            }
            seen
        })
    };
    for n in 4..40 {
        p.source.replace_rows("items", items(n).rows).unwrap();
        if n % 5 == 0 {
            p.mask.inject_fault(Some(FaultPoint::MidStaging));
            assert!(p.mask.materialize().is_err());
            p.mask.inject_fault(None);
        }
        p.mask.materialize().unwrap();
    }
    stop.store(true, Ordering::SeqCst);
    assert!(reader.join().unwrap() > 0);
    assert_eq!(read(&wrap(&p.target), "items").len(), 39);
}

#[test]
fn overlapping_triggers_coalesce() {
    let p = pipeline(TWO_VIEWS, &[items(5)]);
    let triggers = 16;
    let handles: Vec<_> = (0..triggers)
        .map(|_| {
            let mask = Arc::clone(&p.mask);
            thread::spawn(move || mask.materialize().unwrap().epoch)
        })
        .collect();
    let epochs: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let published = p.mask.epoch().unwrap();
    assert!(published <= triggers, "{published}");
    assert!(epochs.iter().all(|e| *e >= 1 && *e <= published));
    assert!(read(&wrap(&p.target), "items").bag_eq(&staged(&p, "items")));
}

#[test]
fn interval_refresh_picks_up_changes() {
    let dir = tempfile::tempdir().unwrap();
    let source = memory("src", "ops", &[items(2)]);
    let mut config = MaskConfig::materializing("store", "src", dir.path().join("out"));
    config.refresh = Refresh::Interval(1);
    let mask = Arc::new(Mask::standalone(config, Some(source.clone() as Arc<dyn Component>)).unwrap());
    mask.materialize().unwrap();
    mask.start_refresher();
    source.replace_rows("items", items(7).rows).unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let w = wrap(&dir.path().join("out"));
    while read(&w, "items").len() != 7 {
        assert!(Instant::now() < deadline, "refresher never ran");
        thread::sleep(Duration::from_millis(50));
    }
    mask.stop_refresher();
    assert!(mask.epoch().unwrap() >= 2);
}

#[test]
fn mask_without_upstream_presents_an_empty_schema() {
    let mask = Mask::standalone(MaskConfig::virtualizing("lonely", None), None).unwrap();
    let s = mask.get_schema().unwrap();
    assert!(s.relations.is_empty());
    assert_eq!(s.product, "lonely");
}

#[test]
fn mask_directly_over_a_wrapper_serves() {
    let mask = serving_mask(memory("w", "g", &[pair()]));
    assert_eq!(
        serve(&mask, "SELECT id FROM g.pair", Format::Csv).unwrap(),
        "id:integer\n1\n2\n"
    );
    let l = mask.lineage("pair").unwrap();
    assert_eq!(l.components(), ["serve", "w"]);
}
