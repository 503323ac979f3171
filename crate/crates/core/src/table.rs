use crate::schema::{conform, RelationSchema, TupleViolation};
use crate::value::DataValue;

pub type Tuple = Vec<DataValue>;

/// A relation instance: schema plus a bag of rows.
///
/// Equality is bag equality over rows together with matching attribute
/// names and types; row order, relation name, keys and tags do not matter.
#[derive(Debug, Clone)]
pub struct Table {
    pub schema: RelationSchema,
    pub rows: Vec<Tuple>,
}

impl Table {
    /// Builds a table, rejecting rows that do not conform to `schema`.
    pub fn new(schema: RelationSchema, rows: Vec<Tuple>) -> Result<Self, TupleViolation> {
        for row in &rows {
            conform(row, &schema)?;
        }
        Ok(Table { schema, rows })
    }

    pub fn empty(schema: RelationSchema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in the total value order, column by column.
    pub fn sorted_rows(&self) -> Vec<Tuple> {
        let mut rows = self.rows.clone();
        rows.sort();
        rows
    }

    pub fn bag_eq(&self, other: &Table) -> bool {
        self.schema.same_columns(&other.schema)
            && self.rows.len() == other.rows.len()
            && self.sorted_rows() == other.sorted_rows()
    }

    /// Copy with rows sorted, for deterministic output.
    pub fn sorted(&self) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: self.sorted_rows(),
        }
    }
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.bag_eq(other)
    }
}

impl Eq for Table {}
