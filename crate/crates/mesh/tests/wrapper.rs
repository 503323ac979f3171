use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use mmw_core::format::{parse_delimited, parse_jsonl_filtered, render_delimited, render_jsonl};
use mmw_core::query::evaluate;
use mmw_core::schema::{Attribute, RelationSchema};
use mmw_core::testkit::{Catalog, Gen};
use mmw_core::{parse_query, DataType, DataValue, QualifiedName, Query, Table};
use mmw_mesh::{Component, ErrorCode, Wrapper, WrapperConfig};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/people")
}

/// Header cells `name:type` with an optional `?` for nullable, split by hand.
fn header_oracle(path: &Path) -> Vec<(String, String, bool)> {
    let text = fs::read_to_string(path).unwrap();
    let header = text.lines().next().unwrap();
    header
        .split(',')
        .map(|cell| {
            let (name, ty) = cell.split_once(':').unwrap();
            match ty.strip_suffix('?') {
                Some(t) => (name.to_string(), t.to_string(), true),
                None => (name.to_string(), ty.to_string(), false),
            }
        })
        .collect()
}

fn run(w: &Wrapper, text: &str) -> Result<Table, mmw_mesh::ComponentError> {
    w.execute(&parse_query(text).unwrap(), "tester")
}

#[test]
fn golden_people_file() {
    let w = Wrapper::standalone(WrapperConfig::delimited_dir("people_wrapper", "hr", golden_dir())).unwrap();
    let schema = w.get_schema().unwrap();
    assert_eq!(schema.product, "hr");
    assert_eq!(schema.relations.len(), 1);
    let people = &schema.relations[0];
    assert_eq!(people.name, "people");
    let got: Vec<(String, String, bool)> = people
        .attributes
        .iter()
        .map(|a| (a.name.clone(), a.data_type.name().to_string(), a.nullable))
        .collect();
    assert_eq!(got, header_oracle(&golden_dir().join("people.csv")));

    let t = run(&w, "SELECT * FROM hr.people").unwrap();
    let expected = vec![
        vec![DataValue::Integer(1), DataValue::text("ada")],
        vec![DataValue::Integer(2), DataValue::text("grace")],
        vec![DataValue::Integer(3), DataValue::text("edsger")],
    ];
    assert_eq!(t.sorted_rows(), expected);
    assert_eq!(w.get_schema().unwrap(), schema, "schema is stable");
}

#[test]
fn empty_directories_serve_empty_schemas() {
    let dir = tempfile::tempdir().unwrap();
    for config in [
        WrapperConfig::delimited_dir("csv_wrapper", "a", dir.path()),
        WrapperConfig::doc_lines("doc_wrapper", "b", dir.path()),
        WrapperConfig::memory("mem_wrapper", "c", &[]),
    ] {
        let w = Wrapper::standalone(config).unwrap();
        assert!(w.get_schema().unwrap().relations.is_empty());
    }
}

#[test]
fn unreadable_source_fails_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    assert!(Wrapper::standalone(WrapperConfig::delimited_dir("w", "a", &missing)).is_err());
    assert!(Wrapper::standalone(WrapperConfig::doc_lines("w", "a", &missing)).is_err());
    assert!(Wrapper::standalone(WrapperConfig::memory("bad id", "a", &[])).is_err());
    assert!(Wrapper::standalone(WrapperConfig::memory("w", "select", &[])).is_err());
}

#[test]
fn lost_source_is_unavailable_not_a_bad_query() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(golden_dir().join("people.csv"), dir.path().join("people.csv")).unwrap();
    let w = Wrapper::standalone(WrapperConfig::delimited_dir("w", "hr", dir.path())).unwrap();
    assert_eq!(run(&w, "SELECT * FROM hr.people").unwrap().len(), 3);
    assert_eq!(
        run(&w, "SELECT * FROM hr.nobody").unwrap_err().code,
        ErrorCode::UnknownRelation
    );
    assert_eq!(
        run(&w, "SELECT missing FROM hr.people").unwrap_err().code,
        ErrorCode::Type
    );
    fs::remove_dir_all(dir.path()).unwrap();
    assert_eq!(
        run(&w, "SELECT * FROM hr.people").unwrap_err().code,
        ErrorCode::Unavailable
    );
}

#[test]
fn foreign_namespace_is_rejected() {
    let w = Wrapper::standalone(WrapperConfig::delimited_dir("w", "hr", golden_dir())).unwrap();
    let e = run(&w, "SELECT * FROM payroll.people").unwrap_err();
    assert_eq!(e.code, ErrorCode::UnknownRelation);
    assert!(e.message.contains("foreign namespace"), "{}", e.message);
    assert_eq!(e.origin, "w");
}

#[test]
fn conflicting_doc_field_widens_to_nullable_text() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("things.jsonl"),
        "{\"id\":1,\"x\":5}\n{\"id\":2,\"x\":\"five\"}\n",
    )
    .unwrap();
    let w = Wrapper::standalone(WrapperConfig::doc_lines("w", "docs", dir.path())).unwrap();
    let schema = w.get_schema().unwrap();
    let x = schema.relations[0].attribute("x").unwrap();
    assert_eq!((x.data_type, x.nullable), (DataType::Text, true));
    let t = run(&w, "SELECT x FROM docs.things").unwrap();
    assert_eq!(
        t.sorted_rows(),
        vec![vec![DataValue::text("5")], vec![DataValue::text("five")]]
    );
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Null,
    Bool,
    Int,
    Dec,
    Text,
}

fn scalar(k: Kind, i: u8) -> Value {
    match k {
        Kind::Null => Value::Null,
        Kind::Bool => json!(i.is_multiple_of(2)),
        Kind::Int => json!(i),
        Kind::Dec => serde_json::from_str(&format!("{i}.5")).unwrap(),
        Kind::Text => json!(format!("t{i}")),
    }
}

fn kind_type(k: Kind) -> DataType {
    match k {
        Kind::Bool => DataType::Boolean,
        Kind::Int => DataType::Integer,
        Kind::Dec => DataType::Decimal,
        Kind::Text | Kind::Null => DataType::Text,
    }
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![
        Just(Kind::Null),
        Just(Kind::Bool),
        Just(Kind::Int),
        Just(Kind::Dec),
        Just(Kind::Text)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Brute-force widening oracle over small record sets.
    #[test]
    fn doc_lines_type_inference(records in prop::collection::vec(
        prop::collection::btree_map(prop::sample::select(vec!["a", "b", "c"]), (kind(), any::<u8>()), 1..=3),
        1..6,
    )) {
        let mut text = String::new();
        for r in &records {
            let obj: Map<String, Value> = r.iter().map(|(k, (kind, i))| (k.to_string(), scalar(*kind, *i))).collect();
            text.push_str(&Value::Object(obj).to_string());
            text.push('\n');
        }
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("recs.jsonl"), &text).unwrap();
        let w = Wrapper::standalone(WrapperConfig::doc_lines("w", "docs", dir.path())).unwrap();
        let schema = w.get_schema().unwrap();
        let rel = &schema.relations[0];

        let mut order: Vec<&str> = Vec::new();
        for r in &records {
            for k in r.keys() {
                if !order.contains(k) {
                    order.push(k);
                }
            }
        }
        prop_assert_eq!(rel.names().collect::<Vec<_>>(), order.clone());
        for name in order {
            let kinds: Vec<Kind> = records.iter().filter_map(|r| r.get(name).map(|v| v.0)).collect();
            let present: std::collections::BTreeSet<Kind> = kinds.iter().copied().filter(|k| *k != Kind::Null).collect();
            let missing = kinds.len() < records.len();
            let expected_type = match present.len() {
                1 => kind_type(*present.iter().next().unwrap()),
                _ => DataType::Text,
            };
            let expected_nullable = missing || kinds.contains(&Kind::Null) || present.len() != 1;
            let a = rel.attribute(name).unwrap();
            prop_assert_eq!((a.data_type, a.nullable), (expected_type, expected_nullable), "{}", name);
        }
        let all = run(&w, "SELECT * FROM docs.recs").unwrap();
        prop_assert_eq!(all.len(), records.len());
    }
}

const BIG_ROWS: usize = 10_000;

fn big_table(g: &mut Gen) -> Table {
    let schema = RelationSchema::new(
        "big",
        vec![
            Attribute::new("id", DataType::Integer),
            Attribute::new("grp", DataType::Integer),
            Attribute::new("label", DataType::Text).nullable(),
            Attribute::new("amount", DataType::Decimal).nullable(),
            Attribute::new("flag", DataType::Boolean),
        ],
    );
    let rows = (0..BIG_ROWS)
        .map(|i| {
            // whole decimals would print as JSON integers
            let amount = match g.below(4) {
                0 => DataValue::Null,
                k => DataValue::decimal(["0.5", "-2.25", "13.75"][k - 1]).unwrap(),
            };
            vec![
                DataValue::Integer(i as i64),
                g.cell(&schema.attributes[1]),
                g.cell(&schema.attributes[2]),
                amount,
                g.cell(&schema.attributes[4]),
            ]
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

fn differential_queries(g: &mut Gen, schema: &RelationSchema) -> Vec<Query> {
    let mut out: Vec<Query> = [
        "SELECT * FROM data.big WHERE grp = 3",
        "SELECT id, label FROM data.big WHERE grp = 1 AND amount > 0.0",
        "SELECT label FROM data.big WHERE label = '' OR flag = false",
        "SELECT id AS n, amount FROM data.big WHERE id < 500 AND label <> 'a'",
        "SELECT * FROM data.big WHERE id = 9999",
        "SELECT * FROM data.big WHERE grp = 1 UNION SELECT * FROM data.big WHERE grp = 2",
    ]
    .iter()
    .map(|t| parse_query(t).unwrap())
    .collect();
    for _ in 0..10 {
        let p = g.predicate(schema, 2);
        out.push(Query::scan("data", "big").select(p));
    }
    out
}

/// Pushed-down file scans against naive evaluation over the whole file.
#[test]
fn pushdown_over_ten_thousand_rows_matches_full_scan() {
    let mut g = Gen::new(0x10_000);
    let big = big_table(&mut g);
    let csv_dir = tempfile::tempdir().unwrap();
    let doc_dir = tempfile::tempdir().unwrap();
    fs::write(csv_dir.path().join("big.csv"), render_delimited(&big)).unwrap();
    fs::write(doc_dir.path().join("big.jsonl"), render_jsonl(&big)).unwrap();
    let csv = Wrapper::standalone(WrapperConfig::delimited_dir("csv_w", "data", csv_dir.path())).unwrap();
    let doc = Wrapper::standalone(WrapperConfig::doc_lines("doc_w", "data", doc_dir.path())).unwrap();

    let full_csv = parse_delimited(&fs::read_to_string(csv_dir.path().join("big.csv")).unwrap(), "big").unwrap();
    assert!(full_csv.bag_eq(&big));
    let doc_schema = doc.get_schema().unwrap().relations[0].clone();
    assert!(doc_schema.same_columns(&big.schema));
    let full_doc = parse_jsonl_filtered(
        &fs::read_to_string(doc_dir.path().join("big.jsonl")).unwrap(),
        &doc_schema,
        true,
        |_, _| true,
    )
    .unwrap();

    let naive = |t: &Table, q: &Query| {
        let db: BTreeMap<QualifiedName, Table> = [(QualifiedName::new("data", "big"), t.clone())].into();
        evaluate(q, &db).unwrap()
    };
    for q in differential_queries(&mut g, &big.schema) {
        let got = csv.execute(&q, "tester").unwrap();
        assert!(got.bag_eq(&naive(&full_csv, &q)), "csv: {}", mmw_core::render_query(&q));
        let got = doc.execute(&q, "tester").unwrap();
        assert!(
            got.bag_eq(&naive(&full_doc, &q)),
            "jsonl: {}",
            mmw_core::render_query(&q)
        );
    }
}

/// Every adapter answers generated queries like the reference evaluator
/// over the same snapshot.
#[test]
fn adapters_agree_with_reference_on_generated_queries() {
    let mut g = Gen::new(0xada97);
    for round in 0..40 {
        let base = g.base_catalog(1);
        let db = g.database(&base, 6);
        let tables: Vec<Table> = db
            .iter()
            .map(|(n, t)| Table {
                schema: RelationSchema {
                    name: n.relation.clone(),
                    ..t.schema.clone()
                },
                rows: t.rows.clone(),
            })
            .collect();
        let csv_dir = tempfile::tempdir().unwrap();
        for t in &tables {
            fs::write(
                csv_dir.path().join(format!("{}.csv", t.schema.name)),
                render_delimited(t),
            )
            .unwrap();
        }
        let mem = Wrapper::standalone(WrapperConfig::memory("mem", "w1", &tables)).unwrap();
        let csv = Wrapper::standalone(WrapperConfig::delimited_dir("csv", "w1", csv_dir.path())).unwrap();
        for _ in 0..8 {
            let (q, _) = g.query(&base, 3);
            let oracle = evaluate(&q, &db).unwrap();
            let text = mmw_core::render_query(&q);
            assert!(
                mem.execute(&q, "t").unwrap().bag_eq(&oracle),
                "round {round} memory: {text}"
            );
            assert!(
                csv.execute(&q, "t").unwrap().bag_eq(&oracle),
                "round {round} csv: {text}"
            );
        }
    }
}

#[test]
fn doc_lines_agree_with_reference_on_generated_queries() {
    let mut g = Gen::new(0xd0c5);
    for _ in 0..40 {
        let base = g.base_catalog(1);
        let db = g.database(&base, 6);
        let dir = tempfile::tempdir().unwrap();
        for (n, t) in &db {
            fs::write(dir.path().join(format!("{}.jsonl", n.relation)), render_jsonl(t)).unwrap();
        }
        let w = Wrapper::standalone(WrapperConfig::doc_lines("doc", "w1", dir.path())).unwrap();
        // the served schema is inferred from the records; query against it
        let served: Catalog = w
            .get_schema()
            .unwrap()
            .relations
            .into_iter()
            .filter(|r| r.arity() > 0)
            .map(|r| (QualifiedName::new("w1", &r.name), r))
            .collect();
        let snapshot: BTreeMap<QualifiedName, Table> = served
            .iter()
            .map(|(n, s)| {
                let text = fs::read_to_string(dir.path().join(format!("{}.jsonl", n.relation))).unwrap();
                (n.clone(), parse_jsonl_filtered(&text, s, true, |_, _| true).unwrap())
            })
            .collect();
        if served.is_empty() {
            continue;
        }
        for _ in 0..8 {
            let (q, _) = g.query(&served, 3);
            let oracle = evaluate(&q, &snapshot).unwrap();
            assert!(
                w.execute(&q, "t").unwrap().bag_eq(&oracle),
                "{}",
                mmw_core::render_query(&q)
            );
        }
    }
}

#[test]
fn file_epoch_tracks_changes() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("people.csv");
    fs::copy(golden_dir().join("people.csv"), &file).unwrap();
    let w = Wrapper::standalone(WrapperConfig::delimited_dir("w", "hr", dir.path())).unwrap();
    let e0 = w.epoch().unwrap();
    assert_eq!(w.epoch().unwrap(), e0, "unchanged source keeps its epoch");

    let later = SystemTime::now() + Duration::from_secs(5);
    fs::File::options()
        .write(true)
        .open(&file)
        .unwrap()
        .set_modified(later)
        .unwrap();
    let e1 = w.epoch().unwrap();
    assert!(e1 > e0, "touch bumps the epoch");

    let mut last = e1;
    for i in 0..100u64 {
        let mut text = fs::read_to_string(&file).unwrap();
        text.push_str(&format!("{},n{i}\n", 10 + i));
        fs::write(&file, text).unwrap();
        let e = w.epoch().unwrap();
        assert!(e > last, "mutation {i}");
        last = e;
    }
    assert_eq!(run(&w, "SELECT * FROM hr.people").unwrap().len(), 103);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn memory_epoch_strictly_monotone(ops in prop::collection::vec((any::<bool>(), 0i64..50), 100)) {
        let schema = RelationSchema::new("t", vec![Attribute::new("k", DataType::Integer)]);
        let w = Wrapper::standalone(WrapperConfig::memory("w", "mem", &[Table::empty(schema)])).unwrap();
        let mut last = w.epoch().unwrap();
        let mut expected: Vec<i64> = Vec::new();
        for (replace, k) in ops {
            if replace {
                w.replace_rows("t", vec![vec![DataValue::Integer(k)]]).unwrap();
                expected = vec![k];
            } else {
                w.insert_rows("t", vec![vec![DataValue::Integer(k)]]).unwrap();
                expected.push(k);
            }
            let e = w.epoch().unwrap();
            prop_assert!(e > last);
            last = e;
            prop_assert_eq!(w.epoch().unwrap(), e);
        }
        let t = run(&w, "SELECT * FROM mem.t").unwrap();
        expected.sort();
        prop_assert_eq!(t.sorted_rows(), expected.into_iter().map(|k| vec![DataValue::Integer(k)]).collect::<Vec<_>>());
    }
}

#[test]
fn identifying_tags_are_served() {
    let mut g = Gen::new(7);
    let people = g.identifying_relation(5);
    let mut plain = people.clone();
    for a in &mut plain.schema.attributes {
        a.tags.clear();
    }
    let mut config = WrapperConfig::memory("w", "crm", &[plain]);
    config.identifying = vec!["people.ssn".into(), "people.email".into()];
    let w = Wrapper::standalone(config).unwrap();
    let schema = w.get_schema().unwrap();
    let tagged: Vec<&str> = schema.relations[0]
        .attributes
        .iter()
        .filter(|a| a.is_identifying())
        .map(|a| a.name.as_str())
        .collect();
    assert_eq!(tagged, ["ssn", "email"]);

    let mut bad = WrapperConfig::memory("w", "crm", &[people]);
    bad.identifying = vec!["people.nope".into()];
    assert!(Wrapper::standalone(bad).is_err());
}
