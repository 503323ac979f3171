//! Wrappers put one data source behind the universal schema and query
//! interface. Three adapters: in-memory tables, a directory of delimited
//! files, and a directory of JSON-lines files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::UNIX_EPOCH;

use mmw_core::format::{infer_jsonl_schema, parse_delimited_filtered, parse_jsonl_filtered, read_delimited_schema};
use mmw_core::query::{evaluate_with, render_query, satisfied, RelationSource, ScanRequest};
use mmw_core::schema::{Attribute, ProductSchema, RelationSchema, IDENTIFYING};
use mmw_core::{DataValue, QualifiedName, Query, QueryError, Table, Tuple};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::access::{AccessLogEntry, Gate, Governance};
use crate::component::{Component, Kind, Lineage, Stats};
use crate::error::ConfigError;
use crate::protocol::{ComponentError, ErrorCode};

pub const DELIMITED_EXTENSION: &str = "csv";
pub const DOC_LINES_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterConfig {
    Memory {
        #[serde(default)]
        relations: Vec<MemoryRelation>,
    },
    DelimitedDir {
        path: PathBuf,
    },
    DocLines {
        path: PathBuf,
    },
}

/// Inline relation: schema plus rows of JSON scalars in attribute order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRelation {
    pub schema: RelationSchema,
    #[serde(default)]
    pub rows: Vec<Vec<Value>>,
}

impl MemoryRelation {
    pub fn from_table(t: &Table) -> Self {
        MemoryRelation {
            schema: t.schema.clone(),
            rows: t.rows.iter().map(|r| r.iter().map(json_of).collect()).collect(),
        }
    }

    pub fn to_table(&self) -> Result<Table, String> {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, raw)| {
                if raw.len() != self.schema.arity() {
                    return Err(format!(
                        "row {i}: {} values for {} attributes",
                        raw.len(),
                        self.schema.arity()
                    ));
                }
                raw.iter()
                    .zip(&self.schema.attributes)
                    .map(|(v, a)| cell_from_json(v, a).map_err(|e| format!("row {i}: {e}")))
                    .collect()
            })
            .collect::<Result<Vec<Tuple>, String>>()?;
        Table::new(self.schema.clone(), rows).map_err(|e| format!("{}: {e}", self.schema.name))
    }
}

fn json_of(v: &DataValue) -> Value {
    match v {
        DataValue::Null => Value::Null,
        DataValue::Boolean(b) => Value::Bool(*b),
        DataValue::Integer(i) => Value::from(*i),
        DataValue::Decimal(d) => serde_json::from_str(&d.to_string()).expect("decimals are JSON numbers"),
        DataValue::Text(s) => Value::String(s.clone()),
        DataValue::Timestamp(t) => Value::String(t.to_string()),
    }
}

fn cell_from_json(v: &Value, attr: &Attribute) -> Result<DataValue, String> {
    let text = match v {
        Value::Null => return Ok(DataValue::Null),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        _ => return Err(format!("{}: not a scalar", attr.name)),
    };
    attr.data_type
        .parse_value(&text)
        .map_err(|e| format!("{}: {e}", attr.name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrapperConfig {
    #[serde(default)]
    pub id: String,
    /// Namespace this wrapper serves.
    pub alias: String,
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub salt: String,
    /// `relation.attribute` names to tag as identifying.
    #[serde(default)]
    pub identifying: Vec<String>,
}

impl WrapperConfig {
    pub fn memory(id: &str, alias: &str, tables: &[Table]) -> Self {
        WrapperConfig {
            id: id.to_string(),
            alias: alias.to_string(),
            adapter: AdapterConfig::Memory {
                relations: tables.iter().map(MemoryRelation::from_table).collect(),
            },
            salt: String::new(),
            identifying: Vec::new(),
        }
    }

    pub fn delimited_dir(id: &str, alias: &str, path: impl Into<PathBuf>) -> Self {
        WrapperConfig {
            id: id.to_string(),
            alias: alias.to_string(),
            adapter: AdapterConfig::DelimitedDir { path: path.into() },
            salt: String::new(),
            identifying: Vec::new(),
        }
    }

    pub fn doc_lines(id: &str, alias: &str, path: impl Into<PathBuf>) -> Self {
        WrapperConfig {
            id: id.to_string(),
            alias: alias.to_string(),
            adapter: AdapterConfig::DocLines { path: path.into() },
            salt: String::new(),
            identifying: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Delimited,
    DocLines,
}

impl FileKind {
    fn extension(self) -> &'static str {
        match self {
            FileKind::Delimited => DELIMITED_EXTENSION,
            FileKind::DocLines => DOC_LINES_EXTENSION,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FileKind::Delimited => "delimited_dir",
            FileKind::DocLines => "doc_lines",
        }
    }
}

type Fingerprint = (PathBuf, Vec<(String, u64, u128)>);

enum Adapter {
    Memory {
        /// Declaration order.
        tables: RwLock<Vec<Table>>,
        epoch: AtomicU64,
    },
    Files {
        kind: FileKind,
        path: PathBuf,
        probe: Mutex<(Option<Fingerprint>, u64)>,
    },
}

pub struct Wrapper {
    id: String,
    alias: String,
    salt: String,
    identifying: BTreeSet<(String, String)>,
    adapter: Adapter,
    gate: Gate,
}

/// One consistent read of a file-backed source.
struct FileSnapshot<'a> {
    wrapper: &'a Wrapper,
    kind: FileKind,
    dir: PathBuf,
    schemas: BTreeMap<QualifiedName, RelationSchema>,
}

enum ScanFailure {
    Query(QueryError),
    Source(ComponentError),
}

impl From<QueryError> for ScanFailure {
    fn from(e: QueryError) -> Self {
        ScanFailure::Query(e)
    }
}

impl RelationSource for FileSnapshot<'_> {
    type Error = ScanFailure;

    fn schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.schemas.get(name).cloned()
    }

    fn scan(&self, request: &ScanRequest<'_>) -> Result<Table, ScanFailure> {
        let schema = &self.schemas[request.relation];
        let file = self
            .dir
            .join(format!("{}.{}", request.relation.relation, self.kind.extension()));
        let text = fs::read_to_string(&file).map_err(|e| ScanFailure::Source(self.wrapper.source_error(&file, e)))?;
        let salt = &self.wrapper.salt;
        let keep = |s: &RelationSchema, row: &Tuple| request.filter.is_none_or(|p| satisfied(p, s, row, salt));
        let parsed = match self.kind {
            FileKind::Delimited => parse_delimited_filtered(&text, &schema.name, keep),
            FileKind::DocLines => parse_jsonl_filtered(&text, schema, true, keep),
        }
        .map_err(|e| ScanFailure::Source(self.wrapper.source_error(&file, e)))?;
        if !parsed.schema.same_columns(schema) {
            return Err(ScanFailure::Source(ComponentError::unavailable(
                &self.wrapper.id,
                format!("{} changed shape while reading", file.display()),
            )));
        }
        let mut table = Table {
            schema: schema.clone(),
            rows: parsed.rows,
        };
        if let Some(cols) = &request.columns {
            let idx: Vec<usize> = cols.iter().map(|c| schema.position(c).expect("checked")).collect();
            table.schema.attributes = idx.iter().map(|&i| schema.attributes[i].clone()).collect();
            table.schema.key = None;
            table.rows = table
                .rows
                .into_iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect();
        }
        Ok(table)
    }

    fn supports_pushdown(&self) -> bool {
        true
    }
}

impl Wrapper {
    pub fn new(config: WrapperConfig, governance: Governance) -> Result<Wrapper, ConfigError> {
        let id = config.id.clone();
        for name in [&config.id, &config.alias] {
            if !crate::is_name(name) {
                return Err(ConfigError::Identifier {
                    component: id.clone(),
                    name: name.clone(),
                });
            }
        }
        let mut identifying = BTreeSet::new();
        for path in &config.identifying {
            let (rel, attr) = path.split_once('.').ok_or_else(|| {
                ConfigError::invalid(&id, format!("identifying entry {path:?} is not relation.attribute"))
            })?;
            identifying.insert((rel.to_string(), attr.to_string()));
        }
        let adapter = match config.adapter {
            AdapterConfig::Memory { relations } => {
                let mut tables = Vec::new();
                let mut names = BTreeSet::new();
                for r in &relations {
                    let violations = r.schema.violations();
                    if let Some(v) = violations.first() {
                        return Err(ConfigError::invalid(&id, format!("{}: {}", v.path, v.message)));
                    }
                    if !names.insert(r.schema.name.clone()) {
                        return Err(ConfigError::invalid(
                            &id,
                            format!("duplicate relation {}", r.schema.name),
                        ));
                    }
                    tables.push(r.to_table().map_err(|m| ConfigError::invalid(&id, m))?);
                }
                Adapter::Memory {
                    tables: RwLock::new(tables),
                    epoch: AtomicU64::new(0),
                }
            }
            AdapterConfig::DelimitedDir { path } => Adapter::Files {
                kind: FileKind::Delimited,
                path,
                probe: Mutex::new((None, 0)),
            },
            AdapterConfig::DocLines { path } => Adapter::Files {
                kind: FileKind::DocLines,
                path,
                probe: Mutex::new((None, 0)),
            },
        };
        let wrapper = Wrapper {
            gate: Gate::new(&id, governance),
            id,
            alias: config.alias,
            salt: config.salt,
            identifying,
            adapter,
        };
        // sources must be readable at configure time
        let schema = wrapper.get_schema().map_err(|e| ConfigError::Source {
            component: wrapper.id.clone(),
            location: wrapper.location(),
            message: e.message,
        })?;
        for (rel, attr) in &wrapper.identifying {
            if schema.relation(rel).and_then(|r| r.attribute(attr)).is_none() {
                return Err(ConfigError::invalid(
                    &wrapper.id,
                    format!("identifying attribute {rel}.{attr} not in source"),
                ));
            }
        }
        wrapper.epoch().ok();
        Ok(wrapper)
    }

    pub fn standalone(config: WrapperConfig) -> Result<Wrapper, ConfigError> {
        Wrapper::new(config, Governance::default())
    }

    pub fn alias(&self) -> &str {
        &self.alias
    }

    /// Source path for file adapters.
    pub fn path(&self) -> Option<&Path> {
        match &self.adapter {
            Adapter::Files { path, .. } => Some(path),
            Adapter::Memory { .. } => None,
        }
    }

    fn location(&self) -> String {
        match &self.adapter {
            Adapter::Memory { .. } => "memory".to_string(),
            Adapter::Files { path, .. } => path.display().to_string(),
        }
    }

    fn source_error(&self, path: &Path, e: impl std::fmt::Display) -> ComponentError {
        ComponentError::unavailable(&self.id, format!("source {}: {e}", path.display()))
    }

    fn tag(&self, mut schema: RelationSchema) -> RelationSchema {
        for a in &mut schema.attributes {
            if self.identifying.contains(&(schema.name.clone(), a.name.clone())) {
                a.tags.insert(IDENTIFYING.to_string());
            }
        }
        schema
    }

    fn file_schemas(&self, kind: FileKind, dir: &Path) -> Result<Vec<RelationSchema>, ComponentError> {
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| self.source_error(dir, e))? {
            let entry = entry.map_err(|e| self.source_error(dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(kind.extension()) || !path.is_file() {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            if !crate::is_name(&stem) {
                return Err(self.source_error(&path, format!("relation name {stem:?} is not an identifier")));
            }
            files.push((stem, path));
        }
        files.sort();
        files
            .into_iter()
            .map(|(name, path)| {
                let text = fs::read_to_string(&path).map_err(|e| self.source_error(&path, e))?;
                let schema = match kind {
                    FileKind::Delimited => read_delimited_schema(&text, &name),
                    FileKind::DocLines => infer_jsonl_schema(&text, &name),
                }
                .map_err(|e| self.source_error(&path, e))?;
                Ok(self.tag(schema))
            })
            .collect()
    }

    fn fingerprint(&self, dir: &Path, kind: FileKind) -> Result<Fingerprint, ComponentError> {
        let canonical = fs::canonicalize(dir).map_err(|e| self.source_error(dir, e))?;
        let mut files = Vec::new();
        for entry in fs::read_dir(&canonical).map_err(|e| self.source_error(dir, e))? {
            let entry = entry.map_err(|e| self.source_error(dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(kind.extension()) {
                continue;
            }
            let meta = entry.metadata().map_err(|e| self.source_error(&path, e))?;
            let mtime = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos());
            files.push((entry.file_name().to_string_lossy().into_owned(), meta.len(), mtime));
        }
        files.sort();
        Ok((canonical, files))
    }

    fn qualified(&self, relation: &str) -> QualifiedName {
        QualifiedName::new(&self.alias, relation)
    }

    fn run(&self, q: &Query) -> Result<Table, ComponentError> {
        if let Some(foreign) = q.namespaces().into_iter().find(|ns| *ns != self.alias) {
            return Err(ComponentError::new(
                ErrorCode::UnknownRelation,
                &self.id,
                format!("foreign namespace {foreign}; this wrapper serves {}", self.alias),
            ));
        }
        match &self.adapter {
            Adapter::Memory { tables, .. } => {
                let snapshot: BTreeMap<QualifiedName, Table> = tables
                    .read()
                    .unwrap()
                    .iter()
                    .map(|t| {
                        (
                            self.qualified(&t.schema.name),
                            Table {
                                schema: self.tag(t.schema.clone()),
                                rows: t.rows.clone(),
                            },
                        )
                    })
                    .collect();
                evaluate_with(q, &snapshot, &self.salt).map_err(|e| ComponentError::from_query(&e, &self.id))
            }
            Adapter::Files { kind, path, .. } => {
                // a linked directory may be swapped and pruned mid-read;
                // retry against the new target
                let mut attempts = 0;
                loop {
                    let dir = fs::canonicalize(path).map_err(|e| self.source_error(path, e))?;
                    let result = self.run_files(q, *kind, dir.clone());
                    attempts += 1;
                    let moved = || fs::canonicalize(path).is_ok_and(|now| now != dir);
                    match result {
                        Err(e) if e.code == ErrorCode::Unavailable && attempts < 5 && moved() => continue,
                        r => return r,
                    }
                }
            }
        }
    }

    fn run_files(&self, q: &Query, kind: FileKind, dir: PathBuf) -> Result<Table, ComponentError> {
        let schemas = self
            .file_schemas(kind, &dir)?
            .into_iter()
            .map(|s| (self.qualified(&s.name), s))
            .collect();
        let snapshot = FileSnapshot {
            wrapper: self,
            kind,
            dir,
            schemas,
        };
        evaluate_with(q, &snapshot, &self.salt).map_err(|e| match e {
            ScanFailure::Query(e) => ComponentError::from_query(&e, &self.id),
            ScanFailure::Source(e) => e,
        })
    }

    fn memory(&self) -> Result<(&RwLock<Vec<Table>>, &AtomicU64), ComponentError> {
        match &self.adapter {
            Adapter::Memory { tables, epoch } => Ok((tables, epoch)),
            Adapter::Files { .. } => Err(ComponentError::protocol(
                &self.id,
                "only memory sources accept mutations",
            )),
        }
    }

    /// Replaces a memory relation's rows and bumps the epoch.
    pub fn replace_rows(&self, relation: &str, rows: Vec<Tuple>) -> Result<(), ComponentError> {
        self.mutate(relation, |t| {
            t.rows = rows;
        })
    }

    pub fn insert_rows(&self, relation: &str, rows: Vec<Tuple>) -> Result<(), ComponentError> {
        self.mutate(relation, |t| t.rows.extend(rows))
    }

    fn mutate(&self, relation: &str, f: impl FnOnce(&mut Table)) -> Result<(), ComponentError> {
        let (tables, epoch) = self.memory()?;
        let mut tables = tables.write().unwrap();
        let table = tables.iter_mut().find(|t| t.schema.name == relation).ok_or_else(|| {
            ComponentError::new(ErrorCode::UnknownRelation, &self.id, format!("no relation {relation}"))
        })?;
        let mut next = table.clone();
        f(&mut next);
        let checked = Table::new(next.schema, next.rows)
            .map_err(|e| ComponentError::new(ErrorCode::Type, &self.id, e.to_string()))?;
        *table = checked;
        epoch.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    /// Current contents of a memory relation.
    pub fn table(&self, relation: &str) -> Option<Table> {
        let (tables, _) = self.memory().ok()?;
        let tables = tables.read().unwrap();
        tables.iter().find(|t| t.schema.name == relation).cloned()
    }
}

impl Component for Wrapper {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> Kind {
        Kind::Wrapper
    }

    fn namespace(&self) -> String {
        self.alias.clone()
    }

    fn get_schema(&self) -> Result<ProductSchema, ComponentError> {
        let mut schema = ProductSchema::new(&self.alias, 1);
        schema.relations = match &self.adapter {
            Adapter::Memory { tables, .. } => tables
                .read()
                .unwrap()
                .iter()
                .map(|t| self.tag(t.schema.clone()))
                .collect(),
            Adapter::Files { kind, path, .. } => self.file_schemas(*kind, path)?,
        };
        let kind = match &self.adapter {
            Adapter::Memory { .. } => "memory",
            Adapter::Files { kind, .. } => kind.name(),
        };
        schema.metadata.insert("source.kind".to_string(), kind.to_string());
        Ok(schema)
    }

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        let text = render_query(q);
        self.gate.admit(principal, &self.alias, &text)?;
        let result = self.run(q);
        self.gate.finish(principal, &text, &result, false);
        result
    }

    fn epoch(&self) -> Result<u64, ComponentError> {
        match &self.adapter {
            Adapter::Memory { epoch, .. } => Ok(epoch.load(Ordering::SeqCst)),
            Adapter::Files { kind, path, probe } => {
                let fp = self.fingerprint(path, *kind)?;
                let mut probe = probe.lock().unwrap();
                if probe.0.as_ref() != Some(&fp) {
                    if probe.0.is_some() {
                        probe.1 += 1;
                    }
                    probe.0 = Some(fp);
                }
                Ok(probe.1)
            }
        }
    }

    fn stats(&self) -> Result<Stats, ComponentError> {
        Ok(self.gate.counters.snapshot())
    }

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError> {
        let schema = self.get_schema()?;
        if schema.relation(relation).is_none() {
            return Err(ComponentError::new(
                ErrorCode::UnknownRelation,
                &self.id,
                format!("no relation {relation}"),
            ));
        }
        let mut leaf = Lineage::leaf(&self.id, relation);
        leaf.source = Some(match &self.adapter {
            Adapter::Memory { .. } => "memory".to_string(),
            Adapter::Files { kind, path, .. } => path
                .join(format!("{relation}.{}", kind.extension()))
                .display()
                .to_string(),
        });
        Ok(leaf)
    }

    fn access_log(&self) -> Vec<AccessLogEntry> {
        self.gate.log.entries()
    }
}

impl Wrapper {
    pub(crate) fn gate(&self) -> &Gate {
        &self.gate
    }
}
