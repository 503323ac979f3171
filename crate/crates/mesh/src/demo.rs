//! Two self-contained scenarios with seeded data.
//!
//! `data-mesh`: three domains. Domain x's product mediator consumes domain
//! y's product mediator; domain z's mediator integrates two shared platform
//! wrappers and de-identifies customer emails.
//!
//! `data-product`: one domain's pipeline. An operational source is
//! consumed and transformed by a staging mediator, materialized by a mask
//! into local storage, read back by a wrapper and served by a product
//! mediator and a serving mask.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mmw_core::format::{render_delimited, render_jsonl};
use mmw_core::query::parse_query;
use mmw_core::schema::{Attribute, RelationSchema};
use mmw_core::{DataType, DataValue, Table, Tuple};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::component::Component;
use crate::mask::FaultPoint;
use crate::runtime::{mesh_up, Mesh, MeshOptions};
use crate::topology::{load_topology_file, validate_topology, MeshTopology, RULE_BOUNDARY, RULE_EXTERNAL_MEDIATOR};
use crate::wrapper::MemoryRelation;

pub const DEMO_SEED: u64 = 0x4d4d_5701;

pub const TOPOLOGY_FILE: &str = "topology.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    DataMesh,
    DataProduct,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::DataMesh, Scenario::DataProduct];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::DataMesh => "data-mesh",
            Scenario::DataProduct => "data-product",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?} (expected data-mesh or data-product)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario: {}\nseed: {}\n", self.scenario, self.seed);
        for c in &self.checks {
            let mark = if c.passed { "ok" } else { "FAILED" };
            out.push_str(&format!("{}: {mark}", c.name));
            if !c.detail.is_empty() {
                out.push_str(&format!(" ({})", c.detail));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("workspace: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Setup(String),
}

fn setup<E: fmt::Display>(what: &str) -> impl FnOnce(E) -> DemoError + '_ {
    move |e| DemoError::Setup(format!("{what}: {e}"))
}

fn decimal_cents(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> DataValue {
    let cents = rng.random_range(lo..hi);
    DataValue::decimal(&format!("{}.{:02}", cents / 100, cents % 100)).expect("well-formed decimal")
}

fn table(name: &str, attrs: Vec<Attribute>, rows: Vec<Tuple>) -> Table {
    Table::new(RelationSchema::new(name, attrs), rows).expect("generated rows conform")
}

fn memory_config(alias: &str, tables: &[Table], identifying: &[&str]) -> serde_json::Value {
    json!({
        "alias": alias,
        "adapter": {
            "kind": "memory",
            "relations": tables.iter().map(MemoryRelation::from_table).collect::<Vec<_>>(),
        },
        "identifying": identifying,
    })
}

fn component(id: &str, kind: &str, domain: &str, role: &str, config: serde_json::Value) -> serde_json::Value {
    json!({"id": id, "kind": kind, "domain": domain, "role": role, "endpoint": "in_process", "config": config})
}

fn open_acl() -> serde_json::Value {
    json!([
        {"principal": "intruder", "domain": "*", "product": "*", "allow": false},
        {"principal": "*", "domain": "*", "product": "*", "allow": true},
    ])
}

pub struct MeshData {
    pub orders: Table,
    pub shipments: Table,
    pub sales: Table,
    pub customers: Table,
}

pub fn mesh_data(seed: u64) -> MeshData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders = table(
        "orders",
        vec![
            Attribute::new("order_id", DataType::Integer),
            Attribute::new("customer_id", DataType::Integer),
            Attribute::new("amount", DataType::Decimal),
        ],
        (1..=12)
            .map(|i| {
                vec![
                    DataValue::Integer(i),
                    DataValue::Integer(rng.random_range(1..=5)),
                    decimal_cents(&mut rng, 500, 50_000),
                ]
            })
            .collect(),
    );
    let carriers = ["dhl", "ups", "post"];
    let statuses = ["delivered", "in_transit", "cancelled"];
    let shipments = table(
        "shipments",
        vec![
            Attribute::new("order_id", DataType::Integer),
            Attribute::new("carrier", DataType::Text),
            Attribute::new("status", DataType::Text),
        ],
        (1..=14)
            .filter_map(|i| {
                if !rng.random_bool(0.8) {
                    return None;
                }
                Some(vec![
                    DataValue::Integer(i),
                    DataValue::text(carriers[rng.random_range(0..3)]),
                    DataValue::text(statuses[rng.random_range(0..3)]),
                ])
            })
            .collect(),
    );
    let sales = table(
        "sales",
        vec![
            Attribute::new("sale_id", DataType::Integer),
            Attribute::new("customer_id", DataType::Integer),
            Attribute::new("amount", DataType::Decimal),
        ],
        (1..=10)
            .map(|i| {
                vec![
                    DataValue::Integer(i),
                    DataValue::Integer(rng.random_range(1..=5)),
                    decimal_cents(&mut rng, 100, 9_999),
                ]
            })
            .collect(),
    );
    let customers = table(
        "customers",
        vec![
            Attribute::new("customer_id", DataType::Integer),
            Attribute::new("email", DataType::Text),
            Attribute::new("region", DataType::Text).nullable(),
        ],
        (1..=5)
            .map(|i| {
                let region = if i == 5 {
                    DataValue::Null
                } else {
                    DataValue::text(["north", "south"][rng.random_range(0..2)])
                };
                vec![
                    DataValue::Integer(i),
                    DataValue::text(format!("customer{i}.{}@example.org", rng.random_range(100..1000))),
                    region,
                ]
            })
            .collect(),
    );
    MeshData {
        orders,
        shipments,
        sales,
        customers,
    }
}

/// Writes the data-mesh scenario into `dir`; returns the topology path.
pub fn write_data_mesh(dir: &Path, seed: u64) -> io::Result<PathBuf> {
    let d = mesh_data(seed);
    fs::create_dir_all(dir.join("data/sales"))?;
    fs::create_dir_all(dir.join("data/customers"))?;
    fs::write(dir.join("data/sales/sales.csv"), render_delimited(&d.sales))?;
    // a doc_lines source: the null region is simply absent
    let mut jsonl = String::new();
    for line in render_jsonl(&d.customers).lines() {
        jsonl.push_str(&line.replace(",\"region\":null", ""));
        jsonl.push('\n');
    }
    fs::write(dir.join("data/customers/customers.jsonl"), jsonl)?;
    let doc = json!({
        "domains": ["x", "y", "z", "dip"],
        "components": [
            component("y_ops", "wrapper", "y", "operational_wrapper", memory_config("y_ops", &[d.shipments], &[])),
            component("y_product", "mediator", "y", "product_mediator", json!({
                "product": "y_product",
                "version": 1,
                "downstream": {"ops": "y_ops"},
                "views": "CREATE VIEW deliveries AS SELECT order_id, carrier, status FROM ops.shipments WHERE status <> 'cancelled';\n",
                "metadata": {"owner": "logistics", "quality.completeness": "0.98"},
            })),
            component("y_mask", "mask", "y", "serving_mask", json!({"upstream": "y_product"})),
            component("x_ops", "wrapper", "x", "operational_wrapper", memory_config("x_ops", &[d.orders], &[])),
            component("x_product", "mediator", "x", "product_mediator", json!({
                "product": "x_product",
                "version": 1,
                "downstream": {"ops": "x_ops", "logistics": "y_product"},
                "views": "CREATE VIEW order_status AS SELECT order_id, amount, carrier, status FROM ops.orders JOIN logistics.deliveries ON order_id = order_id;\n",
                "metadata": {"owner": "sales", "quality.completeness": "0.95"},
            })),
            component("x_mask", "mask", "x", "serving_mask", json!({"upstream": "x_product"})),
            component("dip_sales", "wrapper", "dip", "dip_wrapper", json!({
                "alias": "dip_sales",
                "adapter": {"kind": "delimited_dir", "path": "data/sales"},
            })),
            component("dip_customers", "wrapper", "dip", "dip_wrapper", json!({
                "alias": "dip_customers",
                "adapter": {"kind": "doc_lines", "path": "data/customers"},
                "identifying": ["customers.email"],
            })),
            component("z_product", "mediator", "z", "product_mediator", json!({
                "product": "z_product",
                "version": 1,
                "downstream": {"sales": "dip_sales", "crm": "dip_customers"},
                "views": "CREATE VIEW customer_sales AS SELECT sale_id, amount, region, hash(email) AS customer_ref FROM sales.sales JOIN crm.customers ON customer_id = customer_id;\n",
                "metadata": {"owner": "marketing", "quality.completeness": "1.0"},
                "salt": "z-salt",
                "deny_raw_identifying": true,
            })),
            component("z_mask", "mask", "z", "serving_mask", json!({"upstream": "z_product"})),
        ],
        "edges": [
            ["y_product", "y_ops"], ["y_mask", "y_product"],
            ["x_product", "x_ops"], ["x_product", "y_product"], ["x_mask", "x_product"],
            ["z_product", "dip_sales"], ["z_product", "dip_customers"], ["z_mask", "z_product"],
        ],
        "policies": {"enforce_kind_rules": true, "enforce_product_boundary": true, "deny_external_mediator_access": true},
        "acl": open_acl(),
    });
    let path = dir.join(TOPOLOGY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    Ok(path)
}

pub struct ProductData {
    pub customers: Table,
    pub orders: Table,
}

fn product_orders(rng: &mut ChaCha8Rng, ids: std::ops::RangeInclusive<i64>) -> Vec<Tuple> {
    ids.map(|i| {
        vec![
            DataValue::Integer(i),
            DataValue::Integer(rng.random_range(1..=6)),
            decimal_cents(rng, 100, 20_000),
        ]
    })
    .collect()
}

pub fn product_data(seed: u64) -> ProductData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cities = ["zagreb", "split", "rijeka", "osijek"];
    let customers = table(
        "customers",
        vec![
            Attribute::new("id", DataType::Integer),
            Attribute::new("name", DataType::Text),
            Attribute::new("ssn", DataType::Text),
            Attribute::new("city", DataType::Text),
        ],
        (1..=6)
            .map(|i| {
                vec![
                    DataValue::Integer(i),
                    DataValue::text(format!("customer {i}")),
                    DataValue::text(format!(
                        "{:03}-{:02}-{:04}",
                        rng.random_range(100..1000),
                        rng.random_range(10..100),
                        rng.random_range(1000..10_000)
                    )),
                    DataValue::text(cities[rng.random_range(0..cities.len())]),
                ]
            })
            .collect(),
    );
    let orders = table(
        "orders",
        vec![
            Attribute::new("order_id", DataType::Integer),
            Attribute::new("customer_id", DataType::Integer),
            Attribute::new("amount", DataType::Decimal),
        ],
        product_orders(&mut rng, 1..=15),
    );
    ProductData { customers, orders }
}

/// Writes the data-product scenario into `dir`; returns the topology path.
pub fn write_data_product(dir: &Path, seed: u64) -> io::Result<PathBuf> {
    let d = product_data(seed);
    fs::create_dir_all(dir.join("storage"))?;
    let doc = json!({
        "domains": ["p"],
        "components": [
            component("p_ops", "wrapper", "p", "operational_wrapper",
                memory_config("p_ops", &[d.customers, d.orders], &["customers.ssn", "customers.name"])),
            component("p_stage", "mediator", "p", "staging_mediator", json!({
                "product": "p_stage",
                "downstream": {"ops": "p_ops"},
                "views": "CREATE VIEW enriched AS SELECT order_id, amount, city, hash(ssn) AS customer_ref FROM ops.orders JOIN ops.customers ON customer_id = id;\n",
                "salt": "p-salt",
                "deny_raw_identifying": true,
            })),
            component("p_store_mask", "mask", "p", "materializing_mask", json!({
                "upstream": "p_stage",
                "mode": "materializing",
                "target": "storage/p_store",
            })),
            component("p_storage", "wrapper", "p", "operational_wrapper", json!({
                "alias": "p_storage",
                "adapter": {"kind": "delimited_dir", "path": "storage/p_store"},
            })),
            component("p_product", "mediator", "p", "product_mediator", json!({
                "product": "p_product",
                "version": 1,
                "downstream": {"store": "p_storage"},
                "views": "CREATE VIEW enriched AS SELECT * FROM store.enriched;\n",
                "metadata": {"owner": "p", "quality.completeness": "0.99"},
            })),
            component("p_serve", "mask", "p", "serving_mask", json!({"upstream": "p_product"})),
        ],
        "edges": [
            ["p_stage", "p_ops"], ["p_store_mask", "p_stage"], ["p_product", "p_storage"], ["p_serve", "p_product"],
        ],
        "acl": open_acl(),
    });
    let path = dir.join(TOPOLOGY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
    Ok(path)
}

pub fn write_scenario(scenario: Scenario, dir: &Path, seed: u64) -> io::Result<PathBuf> {
    match scenario {
        Scenario::DataMesh => write_data_mesh(dir, seed),
        Scenario::DataProduct => write_data_product(dir, seed),
    }
}

/// Writes and runs `scenario` in `workspace`, collecting every check.
pub fn run_demo(scenario: Scenario, workspace: &Path, seed: u64) -> Result<DemoReport, DemoError> {
    let path = write_scenario(scenario, workspace, seed)?;
    let topology = load_topology_file(&path).map_err(setup("topology"))?;
    let checks = match scenario {
        Scenario::DataMesh => data_mesh_checks(&topology, seed)?,
        Scenario::DataProduct => data_product_checks(&topology, workspace)?,
    };
    Ok(DemoReport { scenario, seed, checks })
}

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.0.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

fn run(mesh: &Mesh, component: &str, text: &str, principal: &str) -> Result<Table, String> {
    let q = parse_query(text).map_err(|e| e.to_string())?;
    mesh.component(component)
        .ok_or_else(|| format!("no component {component}"))?
        .execute(&q, principal)
        .map_err(|e| e.to_string())
}

pub const CHECK_CATALOG: &str = "catalog: 3 products";
pub const CHECK_LINEAGE: &str = "x lineage reaches a domain y source";
pub const CHECK_EXTERNAL_MEDIATOR: &str = "planted mask -> foreign mediator edge rejected";
pub const CHECK_OPERATIONAL: &str = "planted cross-domain operational edge rejected";

fn data_mesh_checks(topology: &MeshTopology, seed: u64) -> Result<Vec<Check>, DemoError> {
    let mut checks = Checks(Vec::new());
    let findings = validate_topology(topology);
    let v = findings.iter().filter(|f| f.is_violation()).count();
    let w = findings.len() - v;
    checks.add("validate", v == 0 && w == 0, format!("{v} violations, {w} warnings"));

    let mesh = mesh_up(topology, &MeshOptions::default()).map_err(setup("mesh up"))?;
    let catalog = mesh.catalog();
    let products: Vec<&str> = catalog.iter().map(|e| e.product.as_str()).collect();
    checks.add(
        CHECK_CATALOG,
        products == ["x_product", "y_product", "z_product"],
        products.join(", "),
    );

    let lineage = mesh.lineage("x_product", "order_status");
    let (reached, detail) = match &lineage {
        Ok(l) => (l.reaches("y_ops") && l.reaches("y_product"), l.components().join(" > ")),
        Err(e) => (false, e.to_string()),
    };
    checks.add(CHECK_LINEAGE, reached, detail);

    let mut planted = topology.clone();
    planted.add_edge("x_mask", "y_product");
    let found = validate_topology(&planted);
    let hit = found.iter().any(|f| {
        f.is_violation() && f.rule == RULE_EXTERNAL_MEDIATOR && f.edge == Some(("x_mask".into(), "y_product".into()))
    });
    checks.add(CHECK_EXTERNAL_MEDIATOR, hit, RULE_EXTERNAL_MEDIATOR);

    let mut planted = topology.clone();
    planted.add_edge("x_product", "y_ops");
    let found = validate_topology(&planted);
    let hit = found
        .iter()
        .any(|f| f.is_violation() && f.rule == RULE_BOUNDARY && f.edge == Some(("x_product".into(), "y_ops".into())));
    checks.add(CHECK_OPERATIONAL, hit, RULE_BOUNDARY);

    // x's product joins its orders with y's served deliveries
    let d = mesh_data(seed);
    let mut expected: Vec<Tuple> = Vec::new();
    for o in &d.orders.rows {
        for s in &d.shipments.rows {
            if o[0] == s[0] && s[2] != DataValue::text("cancelled") {
                expected.push(vec![o[0].clone(), o[2].clone(), s[1].clone(), s[2].clone()]);
            }
        }
    }
    expected.sort();
    match run(&mesh, "x_mask", "SELECT * FROM x_product.order_status", "analyst") {
        Ok(t) => checks.add(
            "x serves orders joined with y deliveries",
            t.sorted_rows() == expected,
            format!("{} rows", t.len()),
        ),
        Err(e) => checks.add("x serves orders joined with y deliveries", false, e),
    }

    let raw: BTreeSet<String> = d.customers.rows.iter().map(|r| r[1].render()).collect();
    match run(&mesh, "z_mask", "SELECT * FROM z_product.customer_sales", "analyst") {
        Ok(t) => {
            let i = t.schema.position("customer_ref").expect("declared");
            let served: BTreeSet<String> = t.rows.iter().flat_map(|r| r.iter().map(DataValue::render)).collect();
            let hashed = t.rows.iter().all(|r| {
                let v = r[i].render();
                v.len() == 16 && v.bytes().all(|b| b.is_ascii_hexdigit())
            });
            checks.add(
                "z serves no raw email",
                served.is_disjoint(&raw) && hashed && !t.is_empty(),
                format!("{} rows", t.len()),
            );
        }
        Err(e) => checks.add("z serves no raw email", false, e),
    }

    let denied = run(&mesh, "y_mask", "SELECT * FROM y_product.deliveries", "intruder");
    checks.add(
        "intruder denied",
        denied.as_ref().is_err_and(|e| e.contains("access_denied")),
        denied.err().unwrap_or_default(),
    );
    mesh.down();
    Ok(checks.0)
}

pub const CHECK_STARTUP: &str = "startup order";
pub const CHECK_SERVED: &str = "served == materialized";
pub const CHECK_MUTATION: &str = "mutation reaches served data after refresh";
pub const CHECK_FAULT: &str = "interrupted refresh keeps last snapshot";
pub const CHECK_STORAGE_LINEAGE: &str = "lineage passes through storage";

fn data_product_checks(topology: &MeshTopology, _workspace: &Path) -> Result<Vec<Check>, DemoError> {
    let mut checks = Checks(Vec::new());
    let mesh = mesh_up(topology, &MeshOptions::default()).map_err(setup("mesh up"))?;
    let order = mesh.startup_order().join(", ");
    checks.add(
        CHECK_STARTUP,
        order == "p_ops, p_stage, p_store_mask, p_storage, p_product, p_serve",
        order.clone(),
    );

    let staged = || run(&mesh, "p_stage", "SELECT * FROM p_stage.enriched", "p_auditor");
    let served = || run(&mesh, "p_serve", "SELECT * FROM p_product.enriched", "analyst");
    let compare = |label: &str, checks: &mut Checks| match (staged(), served()) {
        (Ok(a), Ok(b)) => checks.add(label, a == b && !a.is_empty(), format!("{} rows", b.len())),
        (a, b) => checks.add(label, false, format!("{:?} / {:?}", a.err(), b.err())),
    };
    compare(CHECK_SERVED, &mut checks);

    let lineage = mesh.lineage("p_product", "enriched");
    let (ok, detail) = match &lineage {
        Ok(l) => (
            l.reaches("p_storage") && l.reaches("p_store_mask") && l.reaches("p_ops"),
            l.components().join(" > "),
        ),
        Err(e) => (false, e.to_string()),
    };
    checks.add(CHECK_STORAGE_LINEAGE, ok, detail);

    let ops = mesh.wrapper("p_ops").expect("declared wrapper");
    let store = mesh.mask("p_store_mask").expect("declared mask");
    let before = served().map_err(DemoError::Setup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(DEMO_SEED);
    ops.insert_rows("orders", product_orders(&mut rng, 100..=104))
        .map_err(setup("mutate"))?;
    let stale = served().map_err(DemoError::Setup)?;
    let refreshed = store.materialize().map_err(setup("materialize"));
    let after_stage = staged().map_err(DemoError::Setup)?;
    let after = served().map_err(DemoError::Setup)?;
    checks.add(
        CHECK_MUTATION,
        refreshed.is_ok() && stale == before && after == after_stage && after.len() == before.len() + 5,
        format!("{} -> {} rows", before.len(), after.len()),
    );

    let mut fault_ok = true;
    let mut details = Vec::new();
    for point in [FaultPoint::MidStaging, FaultPoint::BeforePublish] {
        store.inject_fault(Some(point));
        ops.insert_rows("orders", product_orders(&mut rng, 200..=201))
            .map_err(setup("mutate"))?;
        let failed = store.materialize().is_err();
        let still = served().map_err(DemoError::Setup)?;
        fault_ok &= failed && still == after;
        details.push(format!("{point:?}: {} rows", still.len()));
    }
    store.inject_fault(None);
    let recovered = store.materialize().is_ok() && served().ok() == staged().ok();
    checks.add(CHECK_FAULT, fault_ok && recovered, details.join(", "));
    mesh.down();
    Ok(checks.0)
}
