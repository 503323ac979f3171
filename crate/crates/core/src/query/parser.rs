//! Recursive-descent parser for the query surface syntax:
//!
//! ```text
//! query     := core (UNION query)?
//! core      := SELECT items FROM from_item (JOIN from_item ON eq (AND eq)*)* (WHERE pred)?
//! items     := '*' | item (',' item)*
//! item      := expr (AS ident)?
//! from_item := (qname | '(' query ')') (RENAME '(' ident AS ident (',' ident AS ident)* ')')?
//! eq        := ident '=' ident
//! pred      := conj (OR conj)*
//! conj      := neg (AND neg)*
//! neg       := NOT neg | '(' pred ')' | expr op expr
//! expr      := ident | literal | hash '(' expr ')' | redact '(' ')' | concat '(' expr ',' expr ')'
//! ```
//!
//! Keywords are case-insensitive, identifiers are not. `SELECT *` adds no
//! projection node; `WHERE` becomes a selection below the projection.

use crate::error::ParseError;
use crate::value::{DataValue, Decimal, Timestamp};

use super::ast::{CompareOp, Expr, Predicate, ProjectItem, QualifiedName, Query};

const RESERVED: &[&str] = &[
    "select", "from", "join", "on", "and", "or", "not", "where", "union", "as", "rename", "null", "true", "false",
];

/// True for words the query grammar reserves (case-insensitively).
pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(String),
    Dec(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("{w:?}"),
            Tok::Int(s) | Tok::Dec(s) => s.clone(),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: &[&str] = &["<>", "!=", "<=", ">=", "=", "<", ">", ",", ".", "(", ")", "*", ";", "-"];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut column) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, column: &mut usize, n: usize| {
        for k in 0..n {
            if chars[*i + k] == '\n' {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
        }
        *i += n;
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut column, 1);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut column, 1);
            }
            continue;
        }
        let (start_line, start_col) = (line, column);
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut column, n);
            Tok::Word(word)
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut decimal = false;
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                decimal = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let s: String = chars[i..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut column, n);
            if decimal {
                Tok::Dec(s)
            } else {
                Tok::Int(s)
            }
        } else if c == '\'' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => {
                        return Err(ParseError {
                            line: start_line,
                            column: start_col,
                            expected: vec!["closing quote".to_string()],
                            found: "end of input".to_string(),
                        })
                    }
                    Some('\'') if chars.get(j + 1) == Some(&'\'') => {
                        s.push('\'');
                        j += 2;
                    }
                    Some('\'') => {
                        j += 1;
                        break;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        j += 1;
                    }
                }
            }
            let n = j - i;
            advance(&mut i, &mut line, &mut column, n);
            Tok::Str(s)
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
                Some(sym) => {
                    advance(&mut i, &mut line, &mut column, sym.len());
                    Tok::Sym(if *sym == "!=" { "<>" } else { sym })
                }
                None => {
                    return Err(ParseError {
                        line,
                        column,
                        expected: vec!["token".to_string()],
                        found: format!("{c:?}"),
                    })
                }
            }
        };
        out.push(Token {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

pub(crate) struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    /// Alternatives tried at the current position since the last consumed token.
    expected: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    pub(crate) fn new(text: &str) -> PResult<Self> {
        Ok(Parser {
            tokens: lex(text)?,
            pos: 0,
            expected: Vec::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        self.expected.clear();
        t
    }

    fn note(&mut self, what: &str) {
        if !self.expected.iter().any(|e| e == what) {
            self.expected.push(what.to_string());
        }
    }

    pub(crate) fn error(&self) -> ParseError {
        let t = &self.tokens[self.pos];
        let mut expected = self.expected.clone();
        expected.sort();
        ParseError {
            line: t.line,
            column: t.column,
            expected,
            found: t.tok.describe(),
        }
    }

    fn error_with(&mut self, what: &str) -> ParseError {
        self.note(what);
        self.error()
    }

    pub(crate) fn at_keyword(&mut self, kw: &str) -> bool {
        let hit = matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw));
        if !hit {
            self.note(kw);
        }
        hit
    }

    pub(crate) fn eat_keyword(&mut self, kw: &str) -> bool {
        let hit = self.at_keyword(kw);
        if hit {
            self.bump();
        }
        hit
    }

    pub(crate) fn keyword(&mut self, kw: &str) -> PResult<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error())
        }
    }

    fn at_sym(&mut self, sym: &str) -> bool {
        let hit = matches!(self.peek(), Tok::Sym(s) if *s == sym);
        if !hit {
            self.note(&format!("'{sym}'"));
        }
        hit
    }

    pub(crate) fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = self.at_sym(sym);
        if hit {
            self.bump();
        }
        hit
    }

    fn sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.error())
        }
    }

    pub(crate) fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Word(w) if !is_reserved(w) => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            _ => Err(self.error_with("identifier")),
        }
    }

    pub(crate) fn at_end(&mut self) -> bool {
        let hit = matches!(self.peek(), Tok::Eof);
        if !hit {
            self.note("end of input");
        }
        hit
    }

    pub(crate) fn expect_end(&mut self) -> PResult<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error())
        }
    }

    pub(crate) fn query(&mut self) -> PResult<Query> {
        let core = self.core()?;
        if self.eat_keyword("union") {
            let rest = self.query()?;
            return Ok(core.union(rest));
        }
        Ok(core)
    }

    fn core(&mut self) -> PResult<Query> {
        self.keyword("select")?;
        let items = if self.eat_sym("*") {
            None
        } else {
            let mut items = vec![self.item()?];
            while self.eat_sym(",") {
                items.push(self.item()?);
            }
            Some(items)
        };
        self.keyword("from")?;
        let mut source = self.source_item()?;
        while self.eat_keyword("join") {
            let right = self.source_item()?;
            self.keyword("on")?;
            let mut on = vec![self.join_pair()?];
            while self.eat_keyword("and") {
                on.push(self.join_pair()?);
            }
            source = Query::Join {
                left: Box::new(source),
                right: Box::new(right),
                on,
            };
        }
        if self.eat_keyword("where") {
            let p = self.predicate()?;
            source = source.select(p);
        }
        Ok(match items {
            Some(items) => source.project(items),
            None => source,
        })
    }

    fn item(&mut self) -> PResult<ProjectItem> {
        let expr = self.expr()?;
        if self.eat_keyword("as") {
            let name = self.ident()?;
            return Ok(ProjectItem { expr, name });
        }
        match &expr {
            Expr::Attr(a) => Ok(ProjectItem::new(expr.clone(), a)),
            _ => Err(self.error()),
        }
    }

    fn qname(&mut self) -> PResult<QualifiedName> {
        let namespace = self.ident()?;
        self.sym(".")?;
        let relation = self.ident()?;
        Ok(QualifiedName { namespace, relation })
    }

    fn source_item(&mut self) -> PResult<Query> {
        let base = if self.eat_sym("(") {
            let q = self.query()?;
            self.sym(")")?;
            q
        } else {
            Query::Scan(self.qname()?)
        };
        if self.eat_keyword("rename") {
            self.sym("(")?;
            let mut renames = Vec::new();
            loop {
                let old = self.ident()?;
                self.keyword("as")?;
                let new = self.ident()?;
                renames.push((old, new));
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.sym(")")?;
            return Ok(Query::Rename {
                input: Box::new(base),
                renames,
            });
        }
        Ok(base)
    }

    fn join_pair(&mut self) -> PResult<(String, String)> {
        let l = self.ident()?;
        self.sym("=")?;
        let r = self.ident()?;
        Ok((l, r))
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        let mut p = self.conjunction()?;
        while self.eat_keyword("or") {
            let r = self.conjunction()?;
            p = Predicate::or(p, r);
        }
        Ok(p)
    }

    fn conjunction(&mut self) -> PResult<Predicate> {
        let mut p = self.negation()?;
        while self.eat_keyword("and") {
            let r = self.negation()?;
            p = Predicate::and(p, r);
        }
        Ok(p)
    }

    fn negation(&mut self) -> PResult<Predicate> {
        if self.eat_keyword("not") {
            return Ok(Predicate::negate(self.negation()?));
        }
        if self.eat_sym("(") {
            let p = self.predicate()?;
            self.sym(")")?;
            return Ok(p);
        }
        let lhs = self.expr()?;
        let op = self.compare_op()?;
        let rhs = self.expr()?;
        Ok(Predicate::Compare(lhs, op, rhs))
    }

    fn compare_op(&mut self) -> PResult<CompareOp> {
        for op in CompareOp::ALL {
            if self.eat_sym(op.symbol()) {
                return Ok(op);
            }
        }
        Err(self.error())
    }

    fn expr(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        match tok {
            Tok::Word(w) => {
                let lower = w.to_ascii_lowercase();
                match lower.as_str() {
                    "null" => {
                        self.bump();
                        Ok(Expr::Literal(DataValue::Null))
                    }
                    "true" | "false" => {
                        self.bump();
                        Ok(Expr::Literal(DataValue::Boolean(lower == "true")))
                    }
                    "timestamp" if matches!(self.peek_at(1), Tok::Str(_)) => {
                        self.bump();
                        let Tok::Str(s) = self.peek().clone() else {
                            unreachable!()
                        };
                        let ts: Timestamp = s.parse().map_err(|_| self.error_with("timestamp literal"))?;
                        self.bump();
                        Ok(Expr::Literal(DataValue::Timestamp(ts)))
                    }
                    "hash" | "redact" | "concat" if matches!(self.peek_at(1), Tok::Sym("(")) => {
                        self.bump();
                        self.bump();
                        let e = match lower.as_str() {
                            "hash" => Expr::hash(self.expr()?),
                            "redact" => Expr::Redact,
                            _ => {
                                let a = self.expr()?;
                                self.sym(",")?;
                                let b = self.expr()?;
                                Expr::concat(a, b)
                            }
                        };
                        self.sym(")")?;
                        Ok(e)
                    }
                    _ => Ok(Expr::Attr(self.ident()?)),
                }
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(DataValue::Text(s)))
            }
            Tok::Sym("-") if matches!(self.peek_at(1), Tok::Int(_) | Tok::Dec(_)) => {
                self.bump();
                self.number(true)
            }
            Tok::Int(_) | Tok::Dec(_) => self.number(false),
            _ => Err(self.error_with("expression")),
        }
    }

    fn number(&mut self, negative: bool) -> PResult<Expr> {
        let sign = if negative { "-" } else { "" };
        let value = match self.peek().clone() {
            Tok::Int(s) => format!("{sign}{s}")
                .parse::<i64>()
                .map(DataValue::Integer)
                .map_err(|_| self.error_with("64-bit integer"))?,
            Tok::Dec(s) => format!("{sign}{s}")
                .parse::<Decimal>()
                .map(DataValue::Decimal)
                .map_err(|_| self.error_with("decimal"))?,
            _ => return Err(self.error_with("number")),
        };
        self.bump();
        Ok(Expr::Literal(value))
    }
}

/// Parses one query; trailing input is an error.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let mut p = Parser::new(text)?;
    let q = p.query()?;
    p.expect_end()?;
    Ok(q)
}
