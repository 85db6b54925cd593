//! Parser and evaluator for user-supplied statistic expressions.
//!
//! Grammar: arithmetic over the coordinate variables `z1..zk` with
//! `+ - * / ^` (integer powers), parentheses, `sqrt`, `log`, `exp`, and
//! floating-point literals. Errors carry the byte offset where parsing
//! failed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Const(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, i32),
    Call(Func, Box<Ast>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sqrt,
    Log,
    Exp,
}

/// A parsed expression, ready for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    text: String,
    ast: Ast,
    /// Highest 1-based variable index referenced (0 when no variable occurs).
    max_var: usize,
}

impl Expression {
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Highest 1-based variable index referenced.
    pub fn max_var(&self) -> usize {
        self.max_var
    }

    /// Evaluate at a coordinate vector. The caller must supply at least
    /// `max_var` coordinates; non-finite intermediate values propagate as-is
    /// (callers decide how to treat them).
    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert!(z.len() >= self.max_var);
        eval_ast(&self.ast, z)
    }
}

fn eval_ast(ast: &Ast, z: &[f64]) -> f64 {
    match ast {
        Ast::Const(c) => *c,
        Ast::Var(i) => z[*i],
        Ast::Neg(a) => -eval_ast(a, z),
        Ast::Add(a, b) => eval_ast(a, z) + eval_ast(b, z),
        Ast::Sub(a, b) => eval_ast(a, z) - eval_ast(b, z),
        Ast::Mul(a, b) => eval_ast(a, z) * eval_ast(b, z),
        Ast::Div(a, b) => eval_ast(a, z) / eval_ast(b, z),
        Ast::Pow(a, e) => eval_ast(a, z).powi(*e),
        Ast::Call(Func::Sqrt, a) => eval_ast(a, z).sqrt(),
        Ast::Call(Func::Log, a) => eval_ast(a, z).ln(),
        Ast::Call(Func::Exp, a) => eval_ast(a, z).exp(),
    }
}

/// Parse an expression. Offsets in errors are byte positions into `text`.
pub fn parse(text: &str) -> Result<Expression> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        max_var: 0,
    };
    p.skip_ws();
    let ast = p.expression()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(Expression {
        text: text.to_string(),
        ast,
        max_var: p.max_var,
    })
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    max_var: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r')) {
            self.pos += 1;
        }
    }

    fn expression(&mut self) -> Result<Ast> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    self.skip_ws();
                    acc = Ast::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    self.skip_ws();
                    acc = Ast::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Ast> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    self.skip_ws();
                    acc = Ast::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    self.skip_ws();
                    acc = Ast::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Ast> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            self.skip_ws();
            return Ok(Ast::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let mut base = self.atom()?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'^') {
                self.pos += 1;
                self.skip_ws();
                let exp = self.integer_exponent()?;
                base = Ast::Pow(Box::new(base), exp);
            } else {
                return Ok(base);
            }
        }
    }

    fn integer_exponent(&mut self) -> Result<i32> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == digits_start {
            self.pos = start;
            return Err(self.error("expected integer exponent after `^`"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<i32>().map_err(|_| Error::Parse {
            offset: start,
            message: format!("integer exponent `{text}` out of range"),
        })
    }

    fn atom(&mut self) -> Result<Ast> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("expected operand")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expression()?;
                self.skip_ws();
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(inner)
                } else {
                    Err(self.error("expected `)`"))
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Ast> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(b'0'..=b'9')) {
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to something else (e.g. `2*exp(..)` typo'd);
                // treat the literal as ending before it.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Ast::Const(v)),
            Err(_) => Err(Error::Parse {
                offset: start,
                message: format!("invalid numeric literal `{text}`"),
            }),
        }
    }

    fn identifier(&mut self) -> Result<Ast> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        let word = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match word {
            "z" => {
                let digit_start = self.pos;
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
                if self.pos == digit_start {
                    self.pos = start;
                    return Err(Error::Parse {
                        offset: start,
                        message: "expected variable index after `z`".to_string(),
                    });
                }
                let digits = std::str::from_utf8(&self.bytes[digit_start..self.pos]).unwrap();
                let name = format!("z{digits}");
                let index: usize = digits.parse().map_err(|_| Error::Parse {
                    offset: digit_start,
                    message: format!("variable index `{digits}` out of range"),
                })?;
                if index == 0 {
                    return Err(Error::UnknownVariable {
                        name,
                        offset: start,
                    });
                }
                self.max_var = self.max_var.max(index);
                Ok(Ast::Var(index - 1))
            }
            "sqrt" | "log" | "exp" => {
                let func = match word {
                    "sqrt" => Func::Sqrt,
                    "log" => Func::Log,
                    _ => Func::Exp,
                };
                self.skip_ws();
                if self.peek() != Some(b'(') {
                    return Err(self.error(&format!("expected `(` after `{word}`")));
                }
                self.pos += 1;
                let inner = self.expression()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(Ast::Call(func, Box::new(inner)))
            }
            other => Err(Error::UnknownVariable {
                name: other.to_string(),
                offset: start,
            }),
        }
    }
}
