//! Parser for the canonical plan text.
//!
//! ```text
//! plan  := Scan(ident)
//!        | Filter(pred=pred, input=plan)
//!        | Project(cols=[ident, ...], input=plan)
//!        | Join(left=plan, right=plan, key=ident)
//!        | Aggregate(group=[ident, ...], aggs=[agg, ...], input=plan)
//!        | Sort(col=ident, dir=asc|desc, input=plan)
//!        | Limit(n=int, input=plan)
//! agg   := FN(ident | *) AS ident            FN in SUM AVG COUNT MIN MAX
//! pred  := conj (OR conj)*
//! conj  := unary (AND unary)*
//! unary := NOT unary | ( pred ) | ident op (literal | ident)
//! op    := = | != | < | <= | > | >=
//! literal := number[%] | "string" | true | false | null | DATE "yyyy-mm-dd"
//! ident := [A-Za-z_][A-Za-z0-9_.]* | `backtick quoted`
//! ```
//!
//! Keywords are case-insensitive; node names are not.

use thiserror::Error;

use super::plan::{AggFunc, AggregateExpr, CmpOp, Literal, Operand, Predicate, QueryPlan, SortDirection};
use crate::table::{parse_date, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("plan parse error at byte {offset}: {message}")]
pub struct PlanParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident { text: String, quoted: bool },
    Str(String),
    Num { value: f64, percent: bool },
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Star,
    Op(CmpOp),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, PlanParseError> {
    let bytes = src.as_bytes();
    let err = |offset: usize, message: String| PlanParseError { offset, message };
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b'[' => out.push((start, Tok::LBracket)),
            b']' => out.push((start, Tok::RBracket)),
            b',' => out.push((start, Tok::Comma)),
            b'*' => out.push((start, Tok::Star)),
            b'=' => out.push((start, Tok::Op(CmpOp::Eq))),
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                out.push((start, Tok::Op(CmpOp::Ne)));
                i += 1;
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', true) => CmpOp::Le,
                    (b'<', false) => CmpOp::Lt,
                    (_, true) => CmpOp::Ge,
                    _ => CmpOp::Gt,
                };
                if eq {
                    i += 1;
                }
                out.push((start, Tok::Op(op)));
            }
            b'"' => {
                let mut j = i + 1;
                while j < bytes.len() && bytes[j] != b'"' {
                    if bytes[j] == b'\\' {
                        j += 1;
                    }
                    j += 1;
                }
                if j >= bytes.len() {
                    return Err(err(start, "unterminated string literal".into()));
                }
                let s: String =
                    serde_json::from_str(&src[i..=j]).map_err(|e| err(start, format!("bad string literal: {e}")))?;
                out.push((start, Tok::Str(s)));
                i = j;
            }
            b'`' => {
                let mut text = String::new();
                let mut j = i + 1;
                loop {
                    match src[j..].find('`') {
                        None => return Err(err(start, "unterminated quoted identifier".into())),
                        Some(k) => {
                            text.push_str(&src[j..j + k]);
                            j += k + 1;
                            if bytes.get(j) == Some(&b'`') {
                                text.push('`');
                                j += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push((start, Tok::Ident { text, quoted: true }));
                i = j;
                continue;
            }
            b'-' | b'0'..=b'9' | b'.' => {
                let mut j = i;
                if bytes[j] == b'-' {
                    j += 1;
                }
                let digits_start = j;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j == digits_start {
                    return Err(err(start, "expected digits".into()));
                }
                let value: f64 = src[i..j].parse().map_err(|_| err(start, format!("bad number {:?}", &src[i..j])))?;
                let percent = bytes.get(j) == Some(&b'%');
                if percent {
                    j += 1;
                }
                out.push((start, Tok::Num { value, percent }));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.') {
                    j += 1;
                }
                out.push((start, Tok::Ident { text: src[i..j].to_string(), quoted: false }));
                i = j;
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(start, format!("unexpected character {ch:?}")));
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, PlanParseError> {
        Err(PlanParseError { offset: self.offset(), message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), PlanParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident { text, quoted: false }) if text.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PlanParseError> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn ident(&mut self) -> Result<String, PlanParseError> {
        match self.peek() {
            Some(Tok::Ident { text, quoted }) if *quoted || super::plan::is_bare_ident(text) => {
                let t = text.clone();
                self.pos += 1;
                Ok(t)
            }
            _ => self.err("expected identifier"),
        }
    }

    /// `name=`
    fn arg(&mut self, name: &str) -> Result<(), PlanParseError> {
        self.keyword(name)?;
        self.expect(Tok::Op(CmpOp::Eq), "'='")
    }

    fn plan(&mut self) -> Result<QueryPlan, PlanParseError> {
        let node = match self.next() {
            Some(Tok::Ident { text, quoted: false }) => text,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return self.err("expected plan operator");
            }
        };
        self.expect(Tok::LParen, "'('")?;
        let plan = match node.as_str() {
            "Scan" => QueryPlan::Scan { table: self.ident()? },
            "Filter" => {
                self.arg("pred")?;
                let predicate = self.predicate()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("input")?;
                QueryPlan::Filter { predicate, input: Box::new(self.plan()?) }
            }
            "Project" => {
                self.arg("cols")?;
                let columns = self.ident_list()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("input")?;
                QueryPlan::Project { columns, input: Box::new(self.plan()?) }
            }
            "Join" => {
                self.arg("left")?;
                let left = self.plan()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("right")?;
                let right = self.plan()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("key")?;
                QueryPlan::Join { left: Box::new(left), right: Box::new(right), key: self.ident()? }
            }
            "Aggregate" => {
                self.arg("group")?;
                let group_by = self.ident_list()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("aggs")?;
                let aggregates = self.agg_list()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("input")?;
                QueryPlan::Aggregate { group_by, aggregates, input: Box::new(self.plan()?) }
            }
            "Sort" => {
                self.arg("col")?;
                let column = self.ident()?;
                self.expect(Tok::Comma, "','")?;
                self.arg("dir")?;
                let direction = if self.peek_keyword("asc") {
                    SortDirection::Asc
                } else if self.peek_keyword("desc") {
                    SortDirection::Desc
                } else {
                    return self.err("expected asc or desc");
                };
                self.pos += 1;
                self.expect(Tok::Comma, "','")?;
                self.arg("input")?;
                QueryPlan::Sort { column, direction, input: Box::new(self.plan()?) }
            }
            "Limit" => {
                self.arg("n")?;
                let n = match self.next() {
                    Some(Tok::Num { value, percent: false })
                        if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 =>
                    {
                        value as usize
                    }
                    _ => {
                        self.pos -= 1;
                        return self.err("expected a non-negative integer");
                    }
                };
                self.expect(Tok::Comma, "','")?;
                self.arg("input")?;
                QueryPlan::Limit { n, input: Box::new(self.plan()?) }
            }
            other => {
                self.pos -= 2;
                return self.err(format!("unknown operator {other:?}"));
            }
        };
        self.expect(Tok::RParen, "')'")?;
        Ok(plan)
    }

    fn ident_list(&mut self) -> Result<Vec<String>, PlanParseError> {
        self.expect(Tok::LBracket, "'['")?;
        let mut out = Vec::new();
        if self.peek() == Some(&Tok::RBracket) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.ident()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RBracket) => return Ok(out),
                _ => {
                    self.pos -= 1;
                    return self.err("expected ',' or ']'");
                }
            }
        }
    }

    fn agg_list(&mut self) -> Result<Vec<AggregateExpr>, PlanParseError> {
        self.expect(Tok::LBracket, "'['")?;
        let mut out = Vec::new();
        if self.peek() == Some(&Tok::RBracket) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            let func = match self.peek() {
                Some(Tok::Ident { text, quoted: false }) => AggFunc::from_name(text),
                _ => None,
            };
            let Some(func) = func else { return self.err("expected SUM, AVG, COUNT, MIN or MAX") };
            self.pos += 1;
            self.expect(Tok::LParen, "'('")?;
            let column = if self.peek() == Some(&Tok::Star) {
                self.pos += 1;
                None
            } else {
                Some(self.ident()?)
            };
            self.expect(Tok::RParen, "')'")?;
            self.keyword("as")?;
            let output = self.ident()?;
            out.push(AggregateExpr { func, column, output });
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RBracket) => return Ok(out),
                _ => {
                    self.pos -= 1;
                    return self.err("expected ',' or ']'");
                }
            }
        }
    }

    fn predicate(&mut self) -> Result<Predicate, PlanParseError> {
        let mut left = self.conjunction()?;
        while self.peek_keyword("or") {
            self.pos += 1;
            left = Predicate::Or(Box::new(left), Box::new(self.conjunction()?));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Predicate, PlanParseError> {
        let mut left = self.unary()?;
        while self.peek_keyword("and") {
            self.pos += 1;
            left = Predicate::And(Box::new(left), Box::new(self.unary()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Predicate, PlanParseError> {
        if self.peek_keyword("not") {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let p = self.predicate()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(p);
        }
        let column = self.ident()?;
        let op = match self.next() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.pos -= 1;
                return self.err("expected comparison operator");
            }
        };
        let operand = self.operand()?;
        Ok(Predicate::Compare { column, op, operand })
    }

    fn operand(&mut self) -> Result<Operand, PlanParseError> {
        let lit = match self.peek().cloned() {
            Some(Tok::Num { value, percent }) => Literal { value: Value::Number(value), percent },
            Some(Tok::Str(s)) => Literal::new(Value::Text(s)),
            Some(Tok::Ident { text, quoted: false }) => match text.to_ascii_lowercase().as_str() {
                "true" => Literal::new(Value::Bool(true)),
                "false" => Literal::new(Value::Bool(false)),
                "null" => Literal::new(Value::Null),
                "date" => {
                    self.pos += 1;
                    return match self.next() {
                        Some(Tok::Str(s)) => match parse_date(&s) {
                            Some(d) => Ok(Operand::Literal(Literal::new(Value::Date(d)))),
                            None => {
                                self.pos -= 1;
                                self.err(format!("invalid date {s:?}"))
                            }
                        },
                        _ => {
                            self.pos -= 1;
                            self.err("expected date string")
                        }
                    };
                }
                _ => return Ok(Operand::Column(self.ident()?)),
            },
            Some(Tok::Ident { .. }) => return Ok(Operand::Column(self.ident()?)),
            _ => return self.err("expected literal or column"),
        };
        self.pos += 1;
        Ok(Operand::Literal(lit))
    }
}

/// Parses canonical plan text. Surrounding code fences and whitespace are
/// tolerated; trailing tokens are an error.
pub fn parse_plan(src: &str) -> Result<QueryPlan, PlanParseError> {
    let body = strip_fences(src);
    let base = src.find(body).unwrap_or(0);
    let toks = lex(body).map_err(|e| PlanParseError { offset: e.offset + base, ..e })?;
    let mut p = Parser { toks, pos: 0, end: body.len() };
    let plan = p.plan().map_err(|e| PlanParseError { offset: e.offset + base, ..e })?;
    if p.pos < p.toks.len() {
        let off = p.offset() + base;
        return Err(PlanParseError { offset: off, message: "unexpected trailing input".into() });
    }
    Ok(plan)
}

fn strip_fences(src: &str) -> &str {
    let t = src.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_example() {
        let src = r#"Aggregate(group=[], aggs=[SUM(sales) AS total], input=Filter(pred=(quarter = "Q3"), input=Scan(sales)))"#;
        let plan = parse_plan(src).unwrap();
        assert_eq!(plan.operators(), ["Aggregate", "Filter", "Scan"]);
        assert_eq!(plan.to_string(), src);
    }

    #[test]
    fn precedence_and_quoting() {
        let plan =
            parse_plan("Filter(pred=NOT a = 1 OR `Sales Metrics` != \"x\" AND b >= 15%, input=Scan(`my table`))")
                .unwrap();
        let QueryPlan::Filter { predicate, .. } = &plan else { panic!() };
        assert_eq!(predicate.to_string(), "(NOT (a = 1) OR ((`Sales Metrics` != \"x\") AND (b >= 15%)))");
        assert_eq!(parse_plan(&plan.to_string()).unwrap(), plan);
    }

    #[test]
    fn literals() {
        let plan = parse_plan(
            r#"Filter(pred=((d < DATE "2024-01-31") AND ((t = "say \"hi\"") OR ((b = true) OR (n = null)))), input=Scan(t))"#,
        )
        .unwrap();
        assert_eq!(parse_plan(&plan.to_string()).unwrap(), plan);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_plan("Scan(sales").unwrap_err();
        assert_eq!(e.offset, 10);
        let e = parse_plan("Frobnicate(x)").unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(e.message.contains("Frobnicate"));
        assert!(parse_plan("Scan(a) extra").is_err());
        assert!(parse_plan("Limit(n=-1, input=Scan(a))").is_err());
        assert!(parse_plan("Filter(pred=(a = DATE \"2024-13-01\"), input=Scan(a))").is_err());
        assert!(parse_plan("Scan(`open").is_err());
    }

    #[test]
    fn tolerates_code_fences() {
        let plan = parse_plan("```\nScan(sales)\n```").unwrap();
        assert_eq!(plan, QueryPlan::scan("sales"));
    }
}
