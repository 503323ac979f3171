//! Relation and product schemas.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::{DataType, DataValue};

/// Tag marking an attribute whose raw values identify a person.
pub const IDENTIFYING: &str = "identifying";

/// Reserved metadata keys on a product schema.
pub const META_DESCRIPTION: &str = "description";
pub const META_OWNER: &str = "owner";
pub const META_FRESHNESS: &str = "quality.freshness";
pub const META_COMPLETENESS: &str = "quality.completeness";

/// True for lowercase snake-case identifiers: `[a-z][a-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z')) && bytes.all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_'))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(rename = "type")]
    pub data_type: DataType,
    #[serde(default)]
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        Attribute {
            name: name.into(),
            data_type,
            nullable: false,
            tags: BTreeSet::new(),
        }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }

    pub fn tagged(mut self, tag: &str) -> Self {
        self.tags.insert(tag.to_string());
        self
    }

    pub fn is_identifying(&self) -> bool {
        self.tags.contains(IDENTIFYING)
    }

    /// Name, type and nullability agree; tags are ignored.
    pub fn same_shape(&self, other: &Attribute) -> bool {
        self.name == other.name && self.data_type == other.data_type && self.nullable == other.nullable
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationSchema {
    pub name: String,
    pub attributes: Vec<Attribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<String>>,
}

impl RelationSchema {
    pub fn new(name: impl Into<String>, attributes: Vec<Attribute>) -> Self {
        RelationSchema {
            name: name.into(),
            attributes,
            key: None,
        }
    }

    pub fn with_key(mut self, key: &[&str]) -> Self {
        self.key = Some(key.iter().map(|k| k.to_string()).collect());
        self
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Attribute names and types agree, position by position.
    pub fn same_columns(&self, other: &RelationSchema) -> bool {
        self.arity() == other.arity()
            && self
                .attributes
                .iter()
                .zip(&other.attributes)
                .all(|(a, b)| a.name == b.name && a.data_type == b.data_type)
    }

    /// Names, types and nullability agree; relation name, key and tags are ignored.
    pub fn same_shape(&self, other: &RelationSchema) -> bool {
        self.arity() == other.arity()
            && self
                .attributes
                .iter()
                .zip(&other.attributes)
                .all(|(a, b)| a.same_shape(b))
    }

    /// Invariant violations of this relation alone.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !is_identifier(&self.name) {
            out.push(Violation::new(
                &self.name,
                format!("invalid relation name {:?}", self.name),
            ));
        }
        let mut seen = HashMap::new();
        for attr in &self.attributes {
            let path = format!("{}.{}", self.name, attr.name);
            if !is_identifier(&attr.name) {
                out.push(Violation::new(&path, format!("invalid attribute name {:?}", attr.name)));
            }
            *seen.entry(attr.name.as_str()).or_insert(0usize) += 1;
        }
        for (name, count) in seen {
            if count > 1 {
                out.push(Violation::new(
                    format!("{}.{}", self.name, name),
                    format!("attribute {name} declared {count} times"),
                ));
            }
        }
        if let Some(key) = &self.key {
            let mut key_seen = BTreeSet::new();
            for k in key {
                let path = format!("{}.{}", self.name, k);
                if !key_seen.insert(k) {
                    out.push(Violation::new(&path, format!("key attribute {k} listed twice")));
                }
                match self.attribute(k) {
                    None => out.push(Violation::new(&path, format!("key attribute {k} does not exist"))),
                    Some(a) if a.nullable => out.push(Violation::new(&path, format!("key attribute {k} is nullable"))),
                    Some(_) => {}
                }
            }
        }
        out
    }
}

/// A named, versioned set of relations with free-form metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSchema {
    pub product: String,
    pub version: u32,
    pub relations: Vec<RelationSchema>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ProductSchema {
    pub fn new(product: impl Into<String>, version: u32) -> Self {
        ProductSchema {
            product: product.into(),
            version,
            relations: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSchema> {
        self.relations.iter().find(|r| r.name == name)
    }
}

/// A schema invariant violation. Paths are `relation` or `relation.attribute`;
/// product-level problems use the empty path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Every invariant violation of `schema`, sorted by path.
pub fn validate_product_schema(schema: &ProductSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    if !is_identifier(&schema.product) {
        out.push(Violation::new("", format!("invalid product name {:?}", schema.product)));
    }
    if schema.version < 1 {
        out.push(Violation::new("", "version must be at least 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for rel in &schema.relations {
        *counts.entry(rel.name.as_str()).or_default() += 1;
    }
    for (name, count) in &counts {
        if *count > 1 {
            out.push(Violation::new(*name, format!("relation {name} declared {count} times")));
        }
    }
    for rel in &schema.relations {
        out.extend(rel.violations());
    }
    out.sort();
    out.dedup();
    out
}

/// Why a tuple does not fit a relation schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleViolation {
    /// `None` when the arity is wrong.
    pub attribute: Option<String>,
    pub message: String,
}

impl fmt::Display for TupleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.attribute {
            Some(a) => write!(f, "{a}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks arity, then kind and nullability attribute by attribute, reporting
/// the first mismatch.
pub fn conform(tuple: &[DataValue], schema: &RelationSchema) -> Result<(), TupleViolation> {
    if tuple.len() != schema.arity() {
        return Err(TupleViolation {
            attribute: None,
            message: format!(
                "arity {} does not match {} of {}",
                tuple.len(),
                schema.arity(),
                schema.name
            ),
        });
    }
    for (value, attr) in tuple.iter().zip(&schema.attributes) {
        let problem = match value.data_type() {
            None if !attr.nullable => Some("null in non-nullable attribute".to_string()),
            Some(kind) if kind != attr.data_type => Some(format!("{kind} value in {} attribute", attr.data_type)),
            _ => None,
        };
        if let Some(message) = problem {
            return Err(TupleViolation {
                attribute: Some(attr.name.clone()),
                message,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn people() -> RelationSchema {
        RelationSchema::new(
            "people",
            vec![
                Attribute::new("id", DataType::Integer),
                Attribute::new("name", DataType::Text).nullable(),
            ],
        )
        .with_key(&["id"])
    }

    #[test]
    fn identifiers() {
        for ok in ["a", "orders", "x_1", "a__b9"] {
            assert!(is_identifier(ok), "{ok}");
        }
        for bad in ["", "1a", "_a", "Orders", "a-b", "a b", "é"] {
            assert!(!is_identifier(bad), "{bad}");
        }
    }

    #[test]
    fn empty_product_is_valid() {
        assert!(validate_product_schema(&ProductSchema::new("sales", 1)).is_empty());
    }

    #[test]
    fn duplicate_relation_reported_once() {
        let mut p = ProductSchema::new("sales", 1);
        let orders = RelationSchema::new("orders", vec![Attribute::new("id", DataType::Integer)]);
        p.relations = vec![orders.clone(), orders];
        let v = validate_product_schema(&p);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].path, "orders");
    }

    #[test]
    fn nullable_key_names_attribute() {
        let mut p = ProductSchema::new("hr", 1);
        let mut rel = people();
        rel.attributes[0].nullable = true;
        p.relations.push(rel);
        let v = validate_product_schema(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "people.id");
        assert!(v[0].message.contains("nullable"));
    }

    #[test]
    fn zero_version_and_bad_names() {
        let mut p = ProductSchema::new("Bad", 0);
        p.relations
            .push(RelationSchema::new("r", vec![Attribute::new("X", DataType::Text)]));
        let paths: Vec<_> = validate_product_schema(&p).into_iter().map(|v| v.path).collect();
        assert_eq!(paths, vec!["", "", "r.X"]);
    }

    #[test]
    fn conform_examples() {
        let schema = RelationSchema::new(
            "r",
            vec![
                Attribute::new("n", DataType::Integer),
                Attribute::new("s", DataType::Text),
            ],
        );
        assert!(conform(&[42.into(), "a".into()], &schema).is_ok());
        let single = RelationSchema::new("r", vec![Attribute::new("n", DataType::Integer)]);
        let err = conform(&[DataValue::Null], &single).unwrap_err();
        assert_eq!(err.attribute.as_deref(), Some("n"));
        assert!(conform(&[1.into()], &schema).unwrap_err().attribute.is_none());
    }

    /// Independent per-invariant checker: counts how many violations each
    /// rule should produce for a relation by straightforward enumeration.
    fn naive_relation_paths(rel: &RelationSchema) -> BTreeSet<String> {
        let mut paths = BTreeSet::new();
        if !is_identifier(&rel.name) {
            paths.insert(rel.name.clone());
        }
        for (i, a) in rel.attributes.iter().enumerate() {
            let bad_name = !is_identifier(&a.name);
            let dup = rel
                .attributes
                .iter()
                .enumerate()
                .any(|(j, b)| j != i && b.name == a.name);
            if bad_name || dup {
                paths.insert(format!("{}.{}", rel.name, a.name));
            }
        }
        for (i, k) in rel.key.iter().flatten().enumerate() {
            let exists = rel.attributes.iter().any(|a| &a.name == k);
            let nullable = rel.attributes.iter().any(|a| &a.name == k && a.nullable);
            let repeated = rel.key.as_ref().unwrap()[..i].contains(k);
            if !exists || nullable || repeated {
                paths.insert(format!("{}.{}", rel.name, k));
            }
        }
        paths
    }

    fn arb_relation() -> impl Strategy<Value = RelationSchema> {
        let name = prop::sample::select(vec!["r", "s", "Bad"]);
        let attr =
            (prop::sample::select(vec!["a", "b", "c", "X"]), any::<bool>()).prop_map(|(n, nullable)| Attribute {
                nullable,
                ..Attribute::new(n, DataType::Integer)
            });
        let key = prop::option::of(prop::collection::vec(prop::sample::select(vec!["a", "b", "d"]), 0..3));
        (name, prop::collection::vec(attr, 0..4), key).prop_map(|(n, attrs, key)| RelationSchema {
            name: n.to_string(),
            attributes: attrs,
            key: key.map(|k| k.into_iter().map(String::from).collect()),
        })
    }

    proptest! {
        #[test]
        fn validation_paths_match_naive_checker(rels in prop::collection::vec(arb_relation(), 0..4)) {
            let mut p = ProductSchema::new("prod", 1);
            p.relations = rels;
            let got: BTreeSet<String> = validate_product_schema(&p).into_iter().map(|v| v.path).collect();
            let mut expected = BTreeSet::new();
            for (i, r) in p.relations.iter().enumerate() {
                if p.relations.iter().enumerate().any(|(j, s)| j != i && s.name == r.name) {
                    expected.insert(r.name.clone());
                }
                expected.extend(naive_relation_paths(r));
            }
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn valid_product_implies_valid_relations(rels in prop::collection::vec(arb_relation(), 0..4)) {
            let mut p = ProductSchema::new("prod", 1);
            p.relations = rels;
            if validate_product_schema(&p).is_empty() {
                for r in &p.relations {
                    prop_assert!(r.violations().is_empty());
                }
            }
        }

        #[test]
        fn conform_matches_naive_field_loop(
            types in prop::collection::vec((0usize..5, any::<bool>()), 0..5),
            values in prop::collection::vec((0usize..6, any::<i64>()), 0..5),
        ) {
            let schema = RelationSchema::new("r", types.iter().enumerate().map(|(i, (t, n))| Attribute {
                nullable: *n,
                ..Attribute::new(format!("a{i}"), DataType::ALL[*t])
            }).collect());
            let tuple: Vec<DataValue> = values.iter().map(|(k, v)| match k {
                0 => DataValue::Null,
                1 => DataValue::Boolean(v % 2 == 0),
                2 => DataValue::Integer(*v),
                3 => DataValue::decimal(&format!("{}.5", v / 2)).unwrap(),
                4 => DataValue::Text(v.to_string()),
                _ => DataValue::Timestamp(crate::value::Timestamp::from_unix_seconds(v.rem_euclid(1 << 30)).unwrap()),
            }).collect();
            let mut ok = tuple.len() == schema.arity();
            if ok {
                for (attr, v) in schema.attributes.iter().zip(&tuple) {
                    let fits = match v {
                        DataValue::Null => attr.nullable,
                        v => v.data_type() == Some(attr.data_type),
                    };
                    if !fits { ok = false; }
                }
            }
            prop_assert_eq!(conform(&tuple, &schema).is_ok(), ok);
        }
    }
}
