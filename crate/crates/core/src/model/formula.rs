//! Arithmetic over input fields for precomputed measures, e.g. `fare * seats`.
//!
//! Grammar: `expr := term (('+'|'-') term)*`, `term := factor (('*'|'/') factor)*`,
//! `factor := number | identifier | '(' expr ')' | '-' factor`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Number(f64),
    Field(String),
    Neg(Box<Formula>),
    Binary(Box<Formula>, BinOp, Box<Formula>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormulaError {
    #[error("formula syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("field {0:?} missing or not numeric")]
    MissingField(String),
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if "+-*/()".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let n = src[start..i].parse().map_err(|_| FormulaError::Syntax { pos: start, msg: "bad number".into() })?;
            out.push((start, Tok::Num(n)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else {
            return Err(FormulaError::Syntax { pos: i, msg: format!("unexpected {c:?}") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Formula::Binary(Box::new(lhs), op, Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Formula::Binary(Box::new(lhs), op, Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Formula, FormulaError> {
        let at = self.here();
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Tok::Num(n)) => Ok(Formula::Number(n)),
            Some(Tok::Ident(s)) => Ok(Formula::Field(s)),
            Some(Tok::Op('-')) => Ok(Formula::Neg(Box::new(self.factor()?))),
            Some(Tok::Op('(')) => {
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::Op(')')) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(FormulaError::Syntax { pos: self.here(), msg: "expected ')'".into() }),
                }
            }
            Some(t) => Err(FormulaError::Syntax { pos: at, msg: format!("unexpected {t:?}") }),
            None => Err(FormulaError::Syntax { pos: at, msg: "unexpected end".into() }),
        }
    }
}

impl Formula {
    pub fn parse(src: &str) -> Result<Formula, FormulaError> {
        let toks = tokenize(src)?;
        let mut p = Parser { toks, pos: 0, end: src.len() };
        let f = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(FormulaError::Syntax { pos: p.here(), msg: "trailing input".into() });
        }
        Ok(f)
    }

    /// Field names referenced, in first-use order.
    pub fn fields(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Formula::Number(_) => {}
            Formula::Field(f) => {
                if !out.contains(&f.as_str()) {
                    out.push(f);
                }
            }
            Formula::Neg(x) => x.collect(out),
            Formula::Binary(a, _, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, FormulaError> {
        match self {
            Formula::Number(n) => Ok(*n),
            Formula::Field(f) => lookup(f).ok_or_else(|| FormulaError::MissingField(f.clone())),
            Formula::Neg(x) => Ok(-x.eval(lookup)?),
            Formula::Binary(a, op, b) => {
                let (a, b) = (a.eval(lookup)?, b.eval(lookup)?);
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div if b == 0.0 => Err(FormulaError::DivisionByZero),
                    BinOp::Div => Ok(a / b),
                }
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Number(n) => write!(f, "{n}"),
            Formula::Field(s) => f.write_str(s),
            Formula::Neg(x) => write!(f, "-({x})"),
            Formula::Binary(a, op, b) => {
                let c = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                };
                write!(f, "({a} {c} {b})")
            }
        }
    }
}
