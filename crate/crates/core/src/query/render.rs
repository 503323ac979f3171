//! Canonical text rendering. `parse_query(render_query(q))` equals
//! `q.normalized()` structurally.

use crate::value::DataValue;

use super::ast::{Expr, Predicate, Query};

pub fn render_query(q: &Query) -> String {
    render_union(&q.normalized())
}

fn render_union(q: &Query) -> String {
    match q {
        Query::Union { left, right } => {
            let left = match left.as_ref() {
                // UNION associates to the right; a left-nested union needs a subquery.
                Query::Union { .. } => format!("SELECT * FROM ({})", render_union(left)),
                other => render_core(other),
            };
            format!("{left} UNION {}", render_union(right))
        }
        other => render_core(other),
    }
}

fn render_core(q: &Query) -> String {
    let (list, rest) = match q {
        Query::Project { input, items } => {
            let list = items
                .iter()
                .map(|item| match &item.expr {
                    Expr::Attr(a) if *a == item.name => a.clone(),
                    e => format!("{} AS {}", render_expr(e), item.name),
                })
                .collect::<Vec<_>>()
                .join(", ");
            (list, input.as_ref())
        }
        other => ("*".to_string(), other),
    };
    let (from, predicate) = match rest {
        Query::Select { input, predicate } => (input.as_ref(), Some(predicate)),
        other => (other, None),
    };
    let mut out = format!("SELECT {list} FROM {}", render_from(from));
    if let Some(p) = predicate {
        out.push_str(" WHERE ");
        out.push_str(&render_predicate(p));
    }
    out
}

fn render_from(q: &Query) -> String {
    match q {
        Query::Join { left, right, on } => {
            let cond = on
                .iter()
                .map(|(l, r)| format!("{l} = {r}"))
                .collect::<Vec<_>>()
                .join(" AND ");
            format!("{} JOIN {} ON {cond}", render_from(left), render_from_item(right))
        }
        other => render_from_item(other),
    }
}

fn render_from_item(q: &Query) -> String {
    match q {
        Query::Scan(name) => name.to_string(),
        Query::Rename { input, renames } => {
            let base = match input.as_ref() {
                Query::Scan(name) => name.to_string(),
                other => format!("({})", render_union(other)),
            };
            let list = renames
                .iter()
                .map(|(o, n)| format!("{o} AS {n}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{base} RENAME ({list})")
        }
        other => format!("({})", render_union(other)),
    }
}

pub fn render_predicate(p: &Predicate) -> String {
    let wrap = |p: &Predicate| match p {
        Predicate::Compare(..) => render_predicate(p),
        _ => format!("({})", render_predicate(p)),
    };
    match p {
        Predicate::Compare(a, op, b) => format!("{} {} {}", render_expr(a), op.symbol(), render_expr(b)),
        Predicate::And(a, b) => format!("{} AND {}", wrap(a), wrap(b)),
        Predicate::Or(a, b) => format!("{} OR {}", wrap(a), wrap(b)),
        Predicate::Not(a) => format!("NOT {}", wrap(a)),
    }
}

pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Attr(a) => a.clone(),
        Expr::Literal(v) => render_literal(v),
        Expr::Hash(e) => format!("hash({})", render_expr(e)),
        Expr::Redact => "redact()".to_string(),
        Expr::Concat(a, b) => format!("concat({}, {})", render_expr(a), render_expr(b)),
    }
}

fn render_literal(v: &DataValue) -> String {
    match v {
        DataValue::Null => "NULL".to_string(),
        DataValue::Boolean(true) => "TRUE".to_string(),
        DataValue::Boolean(false) => "FALSE".to_string(),
        DataValue::Integer(i) => i.to_string(),
        DataValue::Decimal(d) => {
            let s = d.to_string();
            if s.contains('.') {
                s
            } else {
                format!("{s}.0")
            }
        }
        DataValue::Text(s) => format!("'{}'", s.replace('\'', "''")),
        DataValue::Timestamp(t) => format!("TIMESTAMP '{t}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::ast::{CompareOp, ProjectItem};
    use crate::query::parse_query;

    #[test]
    fn scan_renders_as_star() {
        assert_eq!(render_query(&Query::scan("a", "r")), "SELECT * FROM a.r");
    }

    #[test]
    fn stacked_selects_merge() {
        let p1 = Predicate::compare(Expr::attr("x"), CompareOp::Gt, Expr::Literal(1.into()));
        let p2 = Predicate::or(
            Predicate::compare(Expr::attr("y"), CompareOp::Eq, Expr::Literal("a".into())),
            Predicate::compare(Expr::attr("y"), CompareOp::Eq, Expr::Literal(DataValue::Null)),
        );
        let q = Query::scan("a", "r").select(p1).select(p2);
        assert_eq!(
            render_query(&q),
            "SELECT * FROM a.r WHERE x > 1 AND (y = 'a' OR y = NULL)"
        );
    }

    #[test]
    fn nested_shapes() {
        let q = Query::scan("s", "r").project_columns(&["a"]).project_columns(&["a"]);
        assert_eq!(render_query(&q), "SELECT a FROM (SELECT a FROM s.r)");
        let u = Query::scan("a", "r")
            .union(Query::scan("b", "r"))
            .union(Query::scan("c", "r"));
        let text = render_query(&u);
        assert_eq!(
            text,
            "SELECT * FROM (SELECT * FROM a.r UNION SELECT * FROM b.r) UNION SELECT * FROM c.r"
        );
        assert_eq!(parse_query(&text).unwrap(), u);
        let j = Query::scan("a", "r").join(
            Query::scan("b", "s").join(Query::scan("c", "t"), &[("p", "q")]),
            &[("x", "y")],
        );
        let text = render_query(&j);
        assert_eq!(
            text,
            "SELECT * FROM a.r JOIN (SELECT * FROM b.s JOIN c.t ON p = q) ON x = y"
        );
        assert_eq!(parse_query(&text).unwrap(), j);
    }

    #[test]
    fn literal_forms_reparse() {
        let q = Query::scan("a", "r").project(vec![
            ProjectItem::new(Expr::Literal(DataValue::decimal("7").unwrap()), "d"),
            ProjectItem::new(Expr::Literal("o'k".into()), "t"),
            ProjectItem::new(Expr::hash(Expr::concat(Expr::attr("a"), Expr::Redact)), "h"),
        ]);
        let text = render_query(&q);
        assert_eq!(
            text,
            "SELECT 7.0 AS d, 'o''k' AS t, hash(concat(a, redact())) AS h FROM a.r"
        );
        assert_eq!(parse_query(&text).unwrap(), q);
    }
}
