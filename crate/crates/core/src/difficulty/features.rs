//! Shallow SQL scanner for structural complexity features.
//!
//! The supported subset is single SELECT/INSERT/UPDATE/DELETE statements
//! with joins, WHERE clauses, scalar or IN subqueries and aggregate calls.
//! Placeholders may be `?`, `$n`, `:name` or `{{name}}`.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported SQL at bytes {}..{} (`{token}`): {reason}", span.start, span.end)]
pub struct UnsupportedSyntax {
    pub span: Range<usize>,
    pub token: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SqlFeatures {
    pub n_tables: u32,
    pub n_joins: u32,
    pub n_where_predicates: u32,
    pub n_subqueries: u32,
    pub n_aggregates: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Ident(String),
    Str,
    Num,
    Param,
    LParen,
    RParen,
    Comma,
    Semi,
    Dot,
    Op,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Range<usize>,
}

impl Token {
    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn upper(&self) -> Option<String> {
        match &self.tok {
            Tok::Word(w) => Some(w.to_ascii_uppercase()),
            _ => None,
        }
    }
}

const AGGREGATES: [&str; 5] = ["COUNT", "SUM", "AVG", "MIN", "MAX"];
const CLAUSE_WORDS: [&str; 24] = [
    "WHERE",
    "JOIN",
    "INNER",
    "LEFT",
    "RIGHT",
    "FULL",
    "OUTER",
    "CROSS",
    "NATURAL",
    "ON",
    "USING",
    "GROUP",
    "ORDER",
    "LIMIT",
    "OFFSET",
    "HAVING",
    "SET",
    "VALUES",
    "RETURNING",
    "SELECT",
    "AS",
    "DEFAULT",
    "UNION",
    "WINDOW",
];
const WHERE_END: [&str; 6] = ["GROUP", "ORDER", "LIMIT", "HAVING", "RETURNING", "OFFSET"];

fn unsupported(sql: &str, span: Range<usize>, reason: &str) -> UnsupportedSyntax {
    UnsupportedSyntax {
        token: sql.get(span.clone()).unwrap_or("").to_string(),
        span,
        reason: reason.to_string(),
    }
}

fn tokenize(sql: &str) -> Result<Vec<Token>, UnsupportedSyntax> {
    let b = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && b.get(i + 1) == Some(&b'-') {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && b.get(i + 1) == Some(&b'*') {
            match sql[i + 2..].find("*/") {
                Some(end) => i = i + 2 + end + 2,
                None => return Err(unsupported(sql, start..b.len(), "unterminated comment")),
            }
            continue;
        }
        let tok = match c {
            b'\'' => {
                i += 1;
                loop {
                    match b.get(i) {
                        None => return Err(unsupported(sql, start..b.len(), "unterminated string literal")),
                        Some(b'\'') if b.get(i + 1) == Some(&b'\'') => i += 2,
                        Some(b'\'') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                Tok::Str
            }
            b'"' | b'`' => {
                let close = c;
                i += 1;
                let s = i;
                while i < b.len() && b[i] != close {
                    i += 1;
                }
                if i >= b.len() {
                    return Err(unsupported(sql, start..b.len(), "unterminated quoted identifier"));
                }
                i += 1;
                Tok::Ident(sql[s..i - 1].to_string())
            }
            b'{' if b.get(i + 1) == Some(&b'{') => match sql[i..].find("}}") {
                Some(end) => {
                    i += end + 2;
                    Tok::Param
                }
                None => return Err(unsupported(sql, start..b.len(), "unterminated placeholder")),
            },
            b'?' => {
                i += 1;
                Tok::Param
            }
            b'$' | b':' if b.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric() || *n == b'_') => {
                i += 1;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                Tok::Param
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b';' => {
                i += 1;
                Tok::Semi
            }
            b'.' if !b.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i += 1;
                Tok::Dot
            }
            b'0'..=b'9' | b'.' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'.') {
                    i += 1;
                }
                Tok::Num
            }
            b'=' | b'<' | b'>' | b'!' | b'+' | b'-' | b'*' | b'/' | b'%' | b'|' => {
                i += 1;
                while i < b.len() && matches!(b[i], b'=' | b'<' | b'>' | b'|') {
                    i += 1;
                }
                Tok::Op
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] >= 0x80) {
                    i += 1;
                }
                Tok::Word(sql[start..i].to_string())
            }
            _ => return Err(unsupported(sql, start..start + 1, "unexpected character")),
        };
        out.push(Token { tok, span: start..i });
    }
    Ok(out)
}

struct Scan {
    tokens: Vec<Token>,
    depth: Vec<u32>,
}

fn scan(sql: &str) -> Result<Scan, UnsupportedSyntax> {
    let mut tokens = tokenize(sql)?;
    if tokens.last().is_some_and(|t| t.tok == Tok::Semi) {
        tokens.pop();
    }
    let Some(first) = tokens.first() else {
        return Err(unsupported(sql, 0..sql.len(), "empty statement"));
    };
    match first.upper().as_deref() {
        Some("SELECT" | "INSERT" | "UPDATE" | "DELETE") => {}
        _ => {
            return Err(unsupported(
                sql,
                first.span.clone(),
                "statement must start with SELECT, INSERT, UPDATE or DELETE",
            ))
        }
    }
    let mut depth = Vec::with_capacity(tokens.len());
    let mut d: u32 = 0;
    for t in &tokens {
        match t.tok {
            Tok::LParen => {
                depth.push(d);
                d += 1;
            }
            Tok::RParen => {
                d = d
                    .checked_sub(1)
                    .ok_or_else(|| unsupported(sql, t.span.clone(), "unbalanced `)`"))?;
                depth.push(d);
            }
            Tok::Semi => return Err(unsupported(sql, t.span.clone(), "multiple statements")),
            _ => {
                if let Some(u) = t.upper() {
                    if matches!(u.as_str(), "UNION" | "INTERSECT" | "EXCEPT" | "WITH") {
                        return Err(unsupported(
                            sql,
                            t.span.clone(),
                            "compound queries are outside the supported subset",
                        ));
                    }
                }
                depth.push(d);
            }
        }
    }
    if d != 0 {
        let last = tokens.last().expect("nonempty").span.clone();
        return Err(unsupported(sql, last, "unbalanced `(`"));
    }
    Ok(Scan { tokens, depth })
}

fn name_at(tokens: &[Token], i: usize) -> Option<(String, usize)> {
    let mut name = match &tokens.get(i)?.tok {
        Tok::Word(w) if !CLAUSE_WORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => w.clone(),
        Tok::Ident(w) => w.clone(),
        _ => return None,
    };
    let mut j = i + 1;
    // schema-qualified: keep the last component
    while tokens.get(j).is_some_and(|t| t.tok == Tok::Dot) {
        match tokens.get(j + 1).map(|t| &t.tok) {
            Some(Tok::Word(w) | Tok::Ident(w)) => {
                name = w.clone();
                j += 2;
            }
            _ => break,
        }
    }
    Some((name.to_ascii_lowercase(), j))
}

fn skip_alias(tokens: &[Token], mut j: usize) -> usize {
    if tokens.get(j).is_some_and(|t| t.is_kw("AS")) {
        j += 1;
    }
    if let Some(t) = tokens.get(j) {
        let is_alias = match &t.tok {
            Tok::Word(w) => !CLAUSE_WORDS.iter().any(|k| w.eq_ignore_ascii_case(k)),
            Tok::Ident(_) => true,
            _ => false,
        };
        if is_alias {
            j += 1;
        }
    }
    j
}

fn tables_of(s: &Scan) -> BTreeSet<String> {
    let t = &s.tokens;
    let mut tables = BTreeSet::new();
    for i in 0..t.len() {
        let Some(u) = t[i].upper() else { continue };
        let list = match u.as_str() {
            "FROM" => true,
            "JOIN" | "INTO" => false,
            "UPDATE" if i == 0 => false,
            _ => continue,
        };
        let mut j = i + 1;
        while let Some((name, next)) = name_at(t, j) {
            tables.insert(name);
            if !list {
                break;
            }
            let after = skip_alias(t, next);
            if t.get(after).is_some_and(|x| x.tok == Tok::Comma) {
                j = after + 1;
            } else {
                break;
            }
        }
    }
    tables
}

/// Distinct, lowercased table names referenced anywhere in the statement.
pub fn referenced_tables(sql: &str) -> Result<Vec<String>, UnsupportedSyntax> {
    let s = scan(sql)?;
    Ok(tables_of(&s).into_iter().collect())
}

pub fn extract_features(sql: &str) -> Result<SqlFeatures, UnsupportedSyntax> {
    let s = scan(sql)?;
    let t = &s.tokens;
    let tables = tables_of(&s);
    if tables.is_empty() {
        return Err(unsupported(sql, 0..sql.len(), "no table reference"));
    }
    let mut f = SqlFeatures {
        n_tables: tables.len() as u32,
        ..SqlFeatures::default()
    };
    for (i, tok) in t.iter().enumerate() {
        let Some(u) = tok.upper() else { continue };
        match u.as_str() {
            "JOIN" => f.n_joins += 1,
            "SELECT" if s.depth[i] > 0 => f.n_subqueries += 1,
            a if AGGREGATES.contains(&a) && t.get(i + 1).is_some_and(|n| n.tok == Tok::LParen) => f.n_aggregates += 1,
            _ => {}
        }
    }
    if let Some(w) = (0..t.len()).find(|&i| s.depth[i] == 0 && t[i].is_kw("WHERE")) {
        let mut atoms = 1;
        let mut between = false;
        for (tok, _) in t.iter().zip(&s.depth).skip(w + 1).filter(|(_, d)| **d == 0) {
            match tok.upper().as_deref() {
                Some(e) if WHERE_END.contains(&e) => break,
                Some("BETWEEN") => between = true,
                Some("AND") if between => between = false,
                Some("AND" | "OR") => atoms += 1,
                _ => {}
            }
        }
        f.n_where_predicates = atoms;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(sql: &str) -> SqlFeatures {
        extract_features(sql).unwrap()
    }

    #[test]
    fn single_table_lookup() {
        assert_eq!(
            feats("SELECT name FROM account WHERE industry = ?"),
            SqlFeatures {
                n_tables: 1,
                n_joins: 0,
                n_where_predicates: 1,
                n_subqueries: 0,
                n_aggregates: 0
            }
        );
    }

    #[test]
    fn aliased_join() {
        let f = feats("SELECT a.name FROM contact c JOIN account a ON c.account_id=a.id WHERE c.name = ?");
        assert_eq!((f.n_tables, f.n_joins, f.n_where_predicates), (2, 1, 1));
    }

    #[test]
    fn count_with_two_atoms() {
        let f = feats("SELECT COUNT(*) FROM ticket WHERE status=? AND priority=?");
        assert_eq!((f.n_aggregates, f.n_where_predicates), (1, 2));
    }

    #[test]
    fn between_and_is_one_atom() {
        let f = feats("SELECT id FROM opportunity WHERE amount BETWEEN 1 AND 5 OR stage = 'won'");
        assert_eq!(f.n_where_predicates, 2);
    }

    #[test]
    fn subquery_where_not_top_level() {
        let f =
            feats("DELETE FROM contact WHERE account_id IN (SELECT id FROM account WHERE industry = ? AND name <> ?)");
        assert_eq!((f.n_tables, f.n_subqueries, f.n_where_predicates), (2, 1, 1));
    }

    #[test]
    fn tables_listed() {
        assert_eq!(
            referenced_tables("INSERT INTO \"Note\" (body, parent_id) VALUES (?, (SELECT id FROM main.contact WHERE name = ? LIMIT 1))").unwrap(),
            vec!["contact", "note"]
        );
        assert_eq!(
            referenced_tables("SELECT 1 FROM a x, b AS y, c WHERE x.id = y.id").unwrap(),
            vec!["a", "b", "c"]
        );
    }

    #[test]
    fn errors_name_span() {
        let e = extract_features("SELECT name FROM t WHERE x = 'open").unwrap_err();
        assert_eq!(e.span, 29..34);
        let e = extract_features("SELECT 1; DELETE FROM t").unwrap_err();
        assert_eq!(e.token, ";");
        let e = extract_features("CREATE TABLE t (x int)").unwrap_err();
        assert_eq!(e.token, "CREATE");
        assert!(extract_features("SELECT 1").is_err());
        assert!(extract_features("SELECT (1 FROM t").is_err());
        assert!(extract_features("   ").is_err());
        assert!(extract_features("WITH x AS (SELECT 1) SELECT * FROM x").is_err());
    }

    #[test]
    fn trailing_semicolon_and_comments() {
        let f = feats("SELECT name -- the label\nFROM account /* all */ WHERE id = 1;");
        assert_eq!((f.n_tables, f.n_where_predicates), (1, 1));
    }
}
