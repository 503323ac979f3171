//! Newline-delimited JSON request/response messages shared by every
//! component endpoint, in-process or over TCP.

use std::fmt;

use mmw_core::format::Format;
use mmw_core::query::parse_query;
use mmw_core::schema::{Attribute, ProductSchema, RelationSchema};
use mmw_core::{DataValue, ParseError, QueryError, QueryErrorKind, Table, ViewError};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::component::{Component, Lineage, MaterializeReport, Stats};

pub const ANONYMOUS: &str = "anonymous";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Syntax,
    Type,
    UnknownRelation,
    AccessDenied,
    Unavailable,
    Protocol,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::Syntax,
        ErrorCode::Type,
        ErrorCode::UnknownRelation,
        ErrorCode::AccessDenied,
        ErrorCode::Unavailable,
        ErrorCode::Protocol,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Syntax => "syntax",
            ErrorCode::Type => "type",
            ErrorCode::UnknownRelation => "unknown_relation",
            ErrorCode::AccessDenied => "access_denied",
            ErrorCode::Unavailable => "unavailable",
            ErrorCode::Protocol => "protocol",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A request failure, tagged with the component where it arose.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{code} from {origin}: {message}")]
pub struct ComponentError {
    pub code: ErrorCode,
    pub message: String,
    pub origin: String,
}

impl ComponentError {
    pub fn new(code: ErrorCode, origin: &str, message: impl Into<String>) -> Self {
        ComponentError {
            code,
            message: message.into(),
            origin: origin.to_string(),
        }
    }

    pub fn from_query(e: &QueryError, origin: &str) -> Self {
        let code = match e.kind {
            QueryErrorKind::UnknownRelation => ErrorCode::UnknownRelation,
            _ => ErrorCode::Type,
        };
        ComponentError::new(code, origin, e.to_string())
    }

    pub fn from_parse(e: &ParseError, origin: &str) -> Self {
        ComponentError::new(ErrorCode::Syntax, origin, e.to_string())
    }

    pub fn from_view(e: &ViewError, origin: &str) -> Self {
        match e {
            ViewError::Syntax(p) => ComponentError::from_parse(p, origin),
            ViewError::Query { source, .. } => {
                ComponentError::new(ComponentError::from_query(source, origin).code, origin, e.to_string())
            }
            ViewError::UnknownRelation(_) => ComponentError::new(ErrorCode::UnknownRelation, origin, e.to_string()),
            ViewError::UnboundNamespace(_) => ComponentError::new(ErrorCode::UnknownRelation, origin, e.to_string()),
            _ => ComponentError::new(ErrorCode::Type, origin, e.to_string()),
        }
    }

    pub fn unavailable(origin: &str, message: impl Into<String>) -> Self {
        ComponentError::new(ErrorCode::Unavailable, origin, message)
    }

    pub fn protocol(origin: &str, message: impl Into<String>) -> Self {
        ComponentError::new(ErrorCode::Protocol, origin, message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    GetSchema,
    ExecQuery {
        query: String,
        principal: Option<String>,
        /// `table` (default) or a rendering format served by masks.
        format: Option<String>,
    },
    Stats,
    Lineage {
        relation: String,
    },
    Epoch,
    Materialize,
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<Option<&'a str>, String> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(format!("field {name} must be a string")),
    }
}

impl Request {
    pub fn parse(line: &str) -> Result<Request, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
        let Value::Object(obj) = value else {
            return Err("request must be a JSON object".to_string());
        };
        let ty = field(&obj, "type")?.ok_or("missing request type")?;
        let required = |name: &str| -> Result<String, String> {
            field(&obj, name)?
                .map(str::to_string)
                .ok_or_else(|| format!("{ty} request needs {name}"))
        };
        Ok(match ty {
            "get_schema" => Request::GetSchema,
            "exec_query" => Request::ExecQuery {
                query: required("query")?,
                principal: field(&obj, "principal")?.map(str::to_string),
                format: field(&obj, "format")?.map(str::to_string),
            },
            "stats" => Request::Stats,
            "lineage" => Request::Lineage {
                relation: required("relation")?,
            },
            "epoch" => Request::Epoch,
            "materialize" => Request::Materialize,
            other => return Err(format!("unknown request type {other:?}")),
        })
    }

    pub fn to_line(&self) -> String {
        let mut obj = Map::new();
        let ty = match self {
            Request::GetSchema => "get_schema",
            Request::ExecQuery { .. } => "exec_query",
            Request::Stats => "stats",
            Request::Lineage { .. } => "lineage",
            Request::Epoch => "epoch",
            Request::Materialize => "materialize",
        };
        obj.insert("type".into(), ty.into());
        match self {
            Request::ExecQuery {
                query,
                principal,
                format,
            } => {
                obj.insert("query".into(), query.as_str().into());
                if let Some(p) = principal {
                    obj.insert("principal".into(), p.as_str().into());
                }
                if let Some(f) = format {
                    obj.insert("format".into(), f.as_str().into());
                }
            }
            Request::Lineage { relation } => {
                obj.insert("relation".into(), relation.as_str().into());
            }
            _ => {}
        }
        Value::Object(obj).to_string()
    }
}

/// Table payload: attribute list plus rows of canonical renderings, with
/// JSON null for null. Rows are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTable {
    pub schema: Vec<Attribute>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl WireTable {
    pub fn from_table(t: &Table) -> Self {
        WireTable {
            schema: t.schema.attributes.clone(),
            rows: t
                .sorted_rows()
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| match v {
                            DataValue::Null => None,
                            v => Some(v.render()),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn into_table(self, relation: &str) -> Result<Table, String> {
        let schema = RelationSchema::new(relation, self.schema);
        let mut rows = Vec::with_capacity(self.rows.len());
        for raw in self.rows {
            if raw.len() != schema.arity() {
                return Err(format!("row has {} values, schema has {}", raw.len(), schema.arity()));
            }
            let row = raw
                .into_iter()
                .zip(&schema.attributes)
                .map(|(cell, attr)| match cell {
                    None => Ok(DataValue::Null),
                    Some(text) => attr.data_type.parse_value(&text).map_err(|e| e.to_string()),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Table::new(schema, rows).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Schema {
        #[serde(flatten)]
        schema: ProductSchema,
    },
    Table(WireTable),
    Rendering {
        format: String,
        body: String,
    },
    Stats {
        component: String,
        #[serde(flatten)]
        stats: Stats,
    },
    Lineage {
        lineage: Lineage,
    },
    Epoch {
        epoch: u64,
    },
    Materialized {
        report: MaterializeReport,
    },
    Error(ComponentError),
}

impl Response {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }

    /// Parses one response line. Decoded by hand rather than through a
    /// tagged-enum derive so large numbers survive intact.
    pub fn parse(line: &str) -> Result<Response, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
        let Value::Object(mut obj) = value else {
            return Err("response must be a JSON object".to_string());
        };
        let ty = match obj.remove("type") {
            Some(Value::String(s)) => s,
            _ => return Err("missing response type".to_string()),
        };
        let rest = Value::Object(obj);
        fn de<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        Ok(match ty.as_str() {
            "schema" => Response::Schema { schema: de(rest)? },
            "table" => Response::Table(de(rest)?),
            "rendering" => {
                #[derive(Deserialize)]
                struct R {
                    format: String,
                    body: String,
                }
                let r: R = de(rest)?;
                Response::Rendering {
                    format: r.format,
                    body: r.body,
                }
            }
            "stats" => {
                let component = rest
                    .get("component")
                    .and_then(Value::as_str)
                    .ok_or("stats response needs component")?
                    .to_string();
                Response::Stats {
                    component,
                    stats: de(rest)?,
                }
            }
            "lineage" => {
                let Value::Object(mut o) = rest else { unreachable!() };
                Response::Lineage {
                    lineage: de(o.remove("lineage").ok_or("lineage response needs lineage")?)?,
                }
            }
            "epoch" => {
                let epoch = rest
                    .get("epoch")
                    .and_then(|v| v.to_string().parse::<u64>().ok())
                    .ok_or("epoch response needs an integer epoch")?;
                Response::Epoch { epoch }
            }
            "materialized" => {
                let Value::Object(mut o) = rest else { unreachable!() };
                Response::Materialized {
                    report: de(o.remove("report").ok_or("materialized response needs report")?)?,
                }
            }
            "error" => Response::Error(de(rest)?),
            other => return Err(format!("unknown response type {other:?}")),
        })
    }
}

/// Answers one request line for `component`.
pub fn handle_line(component: &dyn Component, line: &str) -> Response {
    match Request::parse(line) {
        Ok(request) => handle(component, request),
        Err(message) => Response::Error(ComponentError::protocol(component.id(), message)),
    }
}

pub fn handle(component: &dyn Component, request: Request) -> Response {
    let id = component.id();
    let result = match request {
        Request::GetSchema => component.get_schema().map(|schema| Response::Schema { schema }),
        Request::ExecQuery {
            query,
            principal,
            format,
        } => {
            let principal = principal.as_deref().unwrap_or(ANONYMOUS);
            match parse_query(&query) {
                Err(e) => Err(ComponentError::from_parse(&e, id)),
                Ok(q) => match format.as_deref() {
                    None | Some("table") => component
                        .execute(&q, principal)
                        .map(|t| Response::Table(WireTable::from_table(&t))),
                    Some(name) => match name.parse::<Format>() {
                        Ok(f) => component.serve(&q, f, principal).map(|body| Response::Rendering {
                            format: f.name().to_string(),
                            body,
                        }),
                        Err(_) => Err(ComponentError::protocol(id, format!("unknown format {name:?}"))),
                    },
                },
            }
        }
        Request::Stats => component.stats().map(|stats| Response::Stats {
            component: id.to_string(),
            stats,
        }),
        Request::Lineage { relation } => component
            .lineage(&relation)
            .map(|lineage| Response::Lineage { lineage }),
        Request::Epoch => component.epoch().map(|epoch| Response::Epoch { epoch }),
        Request::Materialize => component.materialize().map(|report| Response::Materialized { report }),
    };
    result.unwrap_or_else(Response::Error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmw_core::DataType;

    #[test]
    fn request_round_trip() {
        let reqs = [
            Request::GetSchema,
            Request::ExecQuery {
                query: "SELECT * FROM a.b".into(),
                principal: Some("p".into()),
                format: None,
            },
            Request::Stats,
            Request::Lineage { relation: "v".into() },
            Request::Epoch,
            Request::Materialize,
        ];
        for r in reqs {
            assert_eq!(Request::parse(&r.to_line()).unwrap(), r);
        }
    }

    #[test]
    fn malformed_requests() {
        for line in [
            "",
            "[]",
            "{}",
            r#"{"type":"nope"}"#,
            r#"{"type":"exec_query"}"#,
            r#"{"type":"lineage","relation":3}"#,
        ] {
            assert!(Request::parse(line).is_err(), "{line}");
        }
    }

    #[test]
    fn table_wire_shape() {
        let schema = RelationSchema::new(
            "t",
            vec![
                Attribute::new("id", DataType::Integer),
                Attribute::new("s", DataType::Text).nullable(),
            ],
        );
        let t = Table::new(schema, vec![vec![2.into(), DataValue::Null], vec![1.into(), "".into()]]).unwrap();
        let line = Response::Table(WireTable::from_table(&t)).to_line();
        assert_eq!(
            line,
            r#"{"type":"table","schema":[{"name":"id","type":"integer","nullable":false},{"name":"s","type":"text","nullable":true}],"rows":[["1",""],["2",null]]}"#
        );
        let Response::Table(w) = Response::parse(&line).unwrap() else {
            panic!()
        };
        assert_eq!(w.into_table("t").unwrap(), t);
    }

    #[test]
    fn error_and_epoch_round_trip() {
        let e = Response::Error(ComponentError::new(ErrorCode::AccessDenied, "m", "no"));
        assert_eq!(
            e.to_line(),
            r#"{"type":"error","code":"access_denied","message":"no","origin":"m"}"#
        );
        assert_eq!(Response::parse(&e.to_line()).unwrap(), e);
        let big = Response::Epoch { epoch: u64::MAX };
        assert_eq!(Response::parse(&big.to_line()).unwrap(), big);
    }
}
