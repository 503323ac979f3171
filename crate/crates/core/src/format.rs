//! Text formats shared by wrappers and masks.
//!
//! Delimited: UTF-8, comma separated, `"` quoting with `""` escaping, header
//! row of `name:type` cells (`name:type?` marks a nullable attribute). An
//! unquoted empty field is null in a nullable attribute; an empty text value
//! is written quoted (`""`).
//!
//! JSON lines: one flat object per row, fields in schema order. Integers and
//! decimals are JSON numbers in canonical form, timestamps and text are
//! strings, null is `null`.

use serde_json::{Map, Value};

use crate::error::FormatError;
use crate::schema::{Attribute, RelationSchema};
use crate::table::{Table, Tuple};
use crate::value::{DataType, DataValue, Decimal, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
    Pretty,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
            Format::Pretty => "pretty",
        }
    }

    pub fn render(self, table: &Table) -> String {
        match self {
            Format::Csv => render_delimited(table),
            Format::Jsonl => render_jsonl(table),
            Format::Pretty => render_pretty(table),
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            "pretty" => Ok(Format::Pretty),
            other => Err(format!("unknown format {other:?} (expected csv, jsonl or pretty)")),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn quote_cell(s: &str) -> String {
    if s.is_empty() || s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_header(schema: &RelationSchema) -> String {
    schema
        .attributes
        .iter()
        .map(|a| format!("{}:{}{}", a.name, a.data_type, if a.nullable { "?" } else { "" }))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn render_delimited(table: &Table) -> String {
    let mut out = render_header(&table.schema);
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                DataValue::Null => String::new(),
                v => quote_cell(&v.render()),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One parsed cell and whether it was quoted.
type Cell = (String, bool);

/// Splits delimited text into records, tracking the 1-based line each starts on.
fn split_records(text: &str) -> Result<Vec<(usize, Vec<Cell>)>, FormatError> {
    let mut records = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while chars.peek().is_some() {
        let start = line;
        let mut cells = Vec::new();
        let mut cell = String::new();
        let mut quoted = false;
        loop {
            match chars.next() {
                None => {
                    cells.push((std::mem::take(&mut cell), quoted));
                    break;
                }
                Some('"') if cell.is_empty() && !quoted => {
                    quoted = true;
                    loop {
                        match chars.next() {
                            None => return Err(FormatError::at(start, "unterminated quoted field")),
                            Some('"') if chars.peek() == Some(&'"') => {
                                chars.next();
                                cell.push('"');
                            }
                            Some('"') => break,
                            Some(c) => {
                                if c == '\n' {
                                    line += 1;
                                }
                                cell.push(c);
                            }
                        }
                    }
                    match chars.peek() {
                        None | Some(',') | Some('\n') | Some('\r') => {}
                        Some(_) => return Err(FormatError::at(line, "text after closing quote")),
                    }
                }
                Some(',') => {
                    cells.push((std::mem::take(&mut cell), quoted));
                    quoted = false;
                }
                Some('\r') if chars.peek() == Some(&'\n') => {}
                Some('\n') => {
                    line += 1;
                    cells.push((std::mem::take(&mut cell), quoted));
                    break;
                }
                Some('"') => return Err(FormatError::at(line, "quote inside unquoted field")),
                Some(c) => cell.push(c),
            }
        }
        records.push((start, cells));
    }
    Ok(records)
}

pub fn parse_header(cells: &[String]) -> Result<Vec<Attribute>, FormatError> {
    let mut attrs: Vec<Attribute> = Vec::new();
    for cell in cells {
        let (name, ty) = cell
            .split_once(':')
            .ok_or_else(|| FormatError::Header(format!("cell {cell:?} is not name:type")))?;
        let (ty, nullable) = match ty.strip_suffix('?') {
            Some(t) => (t, true),
            None => (ty, false),
        };
        let data_type: DataType = ty
            .parse()
            .map_err(|_| FormatError::Header(format!("unknown type {ty:?} for {name}")))?;
        if !crate::schema::is_identifier(name) {
            return Err(FormatError::Header(format!("invalid attribute name {name:?}")));
        }
        if attrs.iter().any(|a| a.name == name) {
            return Err(FormatError::Header(format!("duplicate attribute {name}")));
        }
        attrs.push(Attribute {
            nullable,
            ..Attribute::new(name, data_type)
        });
    }
    Ok(attrs)
}

fn parse_cell(cell: &Cell, attr: &Attribute, line: usize) -> Result<DataValue, FormatError> {
    let (text, quoted) = cell;
    if text.is_empty() && !quoted {
        if attr.nullable {
            return Ok(DataValue::Null);
        }
        if attr.data_type != DataType::Text {
            return Err(FormatError::at(
                line,
                format!("empty value in non-nullable {}", attr.name),
            ));
        }
    }
    attr.data_type
        .parse_value(text)
        .map_err(|e| FormatError::at(line, format!("{}: {e}", attr.name)))
}

/// Reads the schema line only.
pub fn read_delimited_schema(text: &str, relation: &str) -> Result<RelationSchema, FormatError> {
    let first = text.lines().next().unwrap_or("");
    let records = split_records(first)?;
    let header = records.first().map(|(_, cells)| cells.clone()).unwrap_or_default();
    if header.is_empty() || (header.len() == 1 && header[0].0.is_empty()) {
        return Err(FormatError::Header("missing header row".to_string()));
    }
    let names: Vec<String> = header.into_iter().map(|(c, _)| c).collect();
    Ok(RelationSchema::new(relation, parse_header(&names)?))
}

/// Parses a delimited document, keeping only rows accepted by `keep`.
pub fn parse_delimited_filtered(
    text: &str,
    relation: &str,
    mut keep: impl FnMut(&RelationSchema, &Tuple) -> bool,
) -> Result<Table, FormatError> {
    let mut records = split_records(text)?.into_iter();
    let (_, header) = records
        .next()
        .ok_or_else(|| FormatError::Header("missing header row".to_string()))?;
    if header.len() == 1 && header[0].0.is_empty() {
        return Err(FormatError::Header("missing header row".to_string()));
    }
    let names: Vec<String> = header.into_iter().map(|(c, _)| c).collect();
    let schema = RelationSchema::new(relation, parse_header(&names)?);
    let mut rows = Vec::new();
    for (line, cells) in records {
        if cells.len() != schema.arity() {
            // a trailing blank line is not a record
            if cells.len() == 1 && cells[0].0.is_empty() && !cells[0].1 && schema.arity() != 1 {
                continue;
            }
            return Err(FormatError::at(
                line,
                format!("{} fields, header has {}", cells.len(), schema.arity()),
            ));
        }
        let row = cells
            .iter()
            .zip(&schema.attributes)
            .map(|(c, a)| parse_cell(c, a, line))
            .collect::<Result<Tuple, _>>()?;
        if keep(&schema, &row) {
            rows.push(row);
        }
    }
    Ok(Table { schema, rows })
}

pub fn parse_delimited(text: &str, relation: &str) -> Result<Table, FormatError> {
    parse_delimited_filtered(text, relation, |_, _| true)
}

fn json_value(v: &DataValue) -> String {
    match v {
        DataValue::Null => "null".to_string(),
        DataValue::Boolean(b) => b.to_string(),
        DataValue::Integer(i) => i.to_string(),
        DataValue::Decimal(d) => d.to_string(),
        DataValue::Text(s) => serde_json::to_string(s).expect("string serializes"),
        DataValue::Timestamp(t) => format!("\"{t}\""),
    }
}

pub fn render_jsonl(table: &Table) -> String {
    let mut out = String::new();
    let keys: Vec<String> = table
        .schema
        .attributes
        .iter()
        .map(|a| serde_json::to_string(&a.name).expect("string serializes"))
        .collect();
    for row in &table.rows {
        out.push('{');
        for (i, (k, v)) in keys.iter().zip(row).enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(k);
            out.push(':');
            out.push_str(&json_value(v));
        }
        out.push_str("}\n");
    }
    out
}

/// Maps one JSON scalar to a value, inferring its kind. Strings in the
/// canonical timestamp form become timestamps.
pub fn json_scalar(v: &Value) -> Option<DataValue> {
    Some(match v {
        Value::Null => DataValue::Null,
        Value::Bool(b) => DataValue::Boolean(*b),
        Value::Number(n) => {
            let text = n.to_string();
            match text.parse::<i64>() {
                Ok(i) if !text.contains(['.', 'e', 'E']) => DataValue::Integer(i),
                _ => DataValue::Decimal(Decimal::parse_json_number(&text).ok()?),
            }
        }
        Value::String(s) => match s.parse::<Timestamp>() {
            Ok(t) => DataValue::Timestamp(t),
            Err(_) => DataValue::Text(s.clone()),
        },
        Value::Array(_) | Value::Object(_) => return None,
    })
}

fn parse_object(line: &str, lineno: usize) -> Result<Map<String, Value>, FormatError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(FormatError::at(lineno, "record is not a JSON object")),
        Err(e) => Err(FormatError::at(lineno, e.to_string())),
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Infers a relation schema from JSON-lines records: attributes in order of
/// first appearance; a field seen with two different kinds widens to nullable
/// text;
/// fields that are null or missing in any record are nullable.
pub fn infer_jsonl_schema(text: &str, relation: &str) -> Result<RelationSchema, FormatError> {
    let mut attrs: Vec<(String, Option<DataType>, bool, bool)> = Vec::new(); // name, kind, conflict, nullable
    let mut count = 0usize;
    let mut seen_in: Vec<usize> = Vec::new();
    for (lineno, line) in records(text) {
        count += 1;
        let obj = parse_object(line, lineno)?;
        for (key, value) in &obj {
            let v =
                json_scalar(value).ok_or_else(|| FormatError::at(lineno, format!("field {key} is not a scalar")))?;
            let idx = match attrs.iter().position(|a| a.0 == *key) {
                Some(i) => i,
                None => {
                    if !crate::schema::is_identifier(key) {
                        return Err(FormatError::at(lineno, format!("invalid field name {key:?}")));
                    }
                    attrs.push((key.clone(), None, false, false));
                    seen_in.push(0);
                    attrs.len() - 1
                }
            };
            seen_in[idx] += 1;
            let entry = &mut attrs[idx];
            match (v.data_type(), entry.1) {
                (None, _) => entry.3 = true,
                (Some(k), None) => entry.1 = Some(k),
                (Some(k), Some(prev)) if k != prev => entry.2 = true,
                _ => {}
            }
        }
    }
    let attributes = attrs
        .into_iter()
        .zip(seen_in)
        .map(|((name, kind, conflict, nullable), seen)| Attribute {
            nullable: nullable || conflict || seen < count || kind.is_none(),
            ..Attribute::new(
                name,
                if conflict {
                    DataType::Text
                } else {
                    kind.unwrap_or(DataType::Text)
                },
            )
        })
        .collect();
    Ok(RelationSchema::new(relation, attributes))
}

/// Parses JSON-lines against a known schema. With `widen`, scalars of another
/// kind are accepted into text attributes via their canonical rendering.
pub fn parse_jsonl_filtered(
    text: &str,
    schema: &RelationSchema,
    widen: bool,
    mut keep: impl FnMut(&RelationSchema, &Tuple) -> bool,
) -> Result<Table, FormatError> {
    let mut rows = Vec::new();
    for (lineno, line) in records(text) {
        let obj = parse_object(line, lineno)?;
        if let Some(extra) = obj.keys().find(|k| schema.attribute(k).is_none()) {
            return Err(FormatError::at(lineno, format!("unexpected field {extra}")));
        }
        let mut row = Vec::with_capacity(schema.arity());
        for attr in &schema.attributes {
            let raw = obj.get(&attr.name).unwrap_or(&Value::Null);
            let v = json_scalar(raw)
                .ok_or_else(|| FormatError::at(lineno, format!("field {} is not a scalar", attr.name)))?;
            let v = match (&v, v.data_type()) {
                (DataValue::Null, _) if attr.nullable => v,
                (DataValue::Null, _) => {
                    return Err(FormatError::at(lineno, format!("null in non-nullable {}", attr.name)))
                }
                (_, Some(k)) if k == attr.data_type => v,
                // whole decimals are written as JSON integers
                (DataValue::Integer(_), _) if attr.data_type == DataType::Decimal => {
                    DataValue::Decimal(Decimal::parse_json_number(&v.render()).expect("integer is a decimal"))
                }
                // a timestamp-shaped string in a text attribute is still text
                (DataValue::Timestamp(_), _) if attr.data_type == DataType::Text => {
                    DataValue::Text(raw.as_str().unwrap_or_default().to_string())
                }
                (_, _) if widen && attr.data_type == DataType::Text => DataValue::Text(v.render()),
                (_, Some(k)) => {
                    return Err(FormatError::at(
                        lineno,
                        format!("{} value in {} attribute {}", k, attr.data_type, attr.name),
                    ))
                }
                (_, None) => unreachable!(),
            };
            row.push(v);
        }
        if keep(schema, &row) {
            rows.push(row);
        }
    }
    Ok(Table {
        schema: schema.clone(),
        rows,
    })
}

pub fn parse_jsonl(text: &str, schema: &RelationSchema) -> Result<Table, FormatError> {
    parse_jsonl_filtered(text, schema, false, |_, _| true)
}

/// Human-oriented aligned table. Not a stable format.
pub fn render_pretty(table: &Table) -> String {
    let headers: Vec<String> = table
        .schema
        .attributes
        .iter()
        .map(|a| format!("{}:{}", a.name, a.data_type))
        .collect();
    let cells: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| if v.is_null() { "NULL".to_string() } else { v.render() })
                .collect()
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        row.iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&headers);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out.push_str(&format!(
        "({} row{})\n",
        cells.len(),
        if cells.len() == 1 { "" } else { "s" }
    ));
    out
}
