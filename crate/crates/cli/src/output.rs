//! Renders command results as tables so every format works the same way.

use mmw_core::format::Format;
use mmw_core::schema::{Attribute, RelationSchema};
use mmw_core::{DataType, DataValue, Table};
use mmw_mesh::{CatalogEntry, Lineage, MaterializeReport, Stats};

fn text(s: &str) -> DataValue {
    DataValue::text(s)
}

fn optional(s: Option<&str>) -> DataValue {
    s.map_or(DataValue::Null, text)
}

fn int(n: u64) -> DataValue {
    DataValue::Integer(n as i64)
}

fn table(name: &str, attrs: Vec<Attribute>, rows: Vec<Vec<DataValue>>) -> Table {
    Table::new(RelationSchema::new(name, attrs), rows).expect("rows match their schema")
}

pub fn catalog(entries: &[CatalogEntry], format: Format) -> String {
    let rows = entries
        .iter()
        .map(|e| {
            let relations: Vec<String> = e
                .relations
                .iter()
                .map(|r| {
                    let cols: Vec<String> = r
                        .attributes
                        .iter()
                        .map(|a| format!("{}:{}", a.name, a.data_type))
                        .collect();
                    format!("{}({})", r.name, cols.join(" "))
                })
                .collect();
            let metadata: Vec<String> = e.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
            vec![
                text(&e.domain),
                text(&e.product),
                int(e.version.into()),
                text(&e.component),
                text(&e.endpoint),
                text(&e.status),
                text(&relations.join("; ")),
                text(&metadata.join("; ")),
            ]
        })
        .collect();
    let attrs = vec![
        Attribute::new("domain", DataType::Text),
        Attribute::new("product", DataType::Text),
        Attribute::new("version", DataType::Integer),
        Attribute::new("component", DataType::Text),
        Attribute::new("endpoint", DataType::Text),
        Attribute::new("status", DataType::Text),
        Attribute::new("relations", DataType::Text),
        Attribute::new("metadata", DataType::Text),
    ];
    // catalog order is meaningful, so no sorting here
    format.render(&table("catalog", attrs, rows))
}

fn flatten(node: &Lineage, depth: u64, rows: &mut Vec<Vec<DataValue>>) {
    rows.push(vec![
        int(depth),
        text(&node.component),
        text(&node.relation),
        optional(node.via.as_deref()),
        optional(node.source.as_deref()),
    ]);
    for c in &node.children {
        flatten(c, depth + 1, rows);
    }
}

pub fn lineage(l: &Lineage, format: Format) -> String {
    if format == Format::Pretty {
        return l.render();
    }
    let mut rows = Vec::new();
    flatten(l, 0, &mut rows);
    let attrs = vec![
        Attribute::new("depth", DataType::Integer),
        Attribute::new("component", DataType::Text),
        Attribute::new("relation", DataType::Text),
        Attribute::new("via", DataType::Text).nullable(),
        Attribute::new("source", DataType::Text).nullable(),
    ];
    format.render(&table("lineage", attrs, rows))
}

pub fn materialized(report: &MaterializeReport, format: Format) -> String {
    let rows = report
        .relations
        .iter()
        .map(|r| {
            vec![
                text(&report.target),
                int(report.epoch),
                text(&r.name),
                int(r.rows as u64),
            ]
        })
        .collect();
    let attrs = vec![
        Attribute::new("target", DataType::Text),
        Attribute::new("epoch", DataType::Integer),
        Attribute::new("relation", DataType::Text),
        Attribute::new("rows", DataType::Integer),
    ];
    format.render(&table("materialized", attrs, rows))
}

pub fn stats(component: &str, s: &Stats, format: Format) -> String {
    let attrs = [
        "queries_served",
        "rows_returned",
        "cache_hits",
        "cache_misses",
        "errors",
    ]
    .into_iter()
    .map(|n| Attribute::new(n, DataType::Integer));
    let mut all = vec![Attribute::new("component", DataType::Text)];
    all.extend(attrs);
    let row = vec![
        text(component),
        int(s.queries_served),
        int(s.rows_returned),
        int(s.cache_hits),
        int(s.cache_misses),
        int(s.errors),
    ];
    format.render(&table("stats", all, vec![row]))
}
