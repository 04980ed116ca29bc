//! Text form of expressions.
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := atom ("^" "2")?
//! atom   := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")" | "-" atom
//! ```
//!
//! Variables are written `x1..xN` (1-based) and stored 0-based. A minus sign
//! directly in front of a number literal folds into a negative constant.

use super::{BinaryOp, Expression, Node, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::UnknownVariable { offset, .. } => *offset,
        }
    }
}

pub fn parse(text: &str) -> Result<Expression, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax { offset: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.syntax(format!("expected `{}`, found `{}`", ch as char, c as char))),
            None => Err(self.syntax(format!("expected `{}`, found end of input", ch as char))),
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expression::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expression::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expression, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            let lit = self.number_literal();
            if lit.as_deref() != Some("2") {
                self.pos = start;
                return Err(self.syntax("only `^2` is supported"));
            }
            return Ok(base.sq());
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                // Only a literal directly after the sign folds into a
                // constant, so printed negations of constants round-trip.
                let literal = matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.');
                let inner = self.atom()?;
                Ok(match inner.node() {
                    Node::Const(c) if literal => Expression::constant(-c),
                    _ => -inner,
                })
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                let lit = self.number_literal().ok_or_else(|| self.syntax("malformed number"))?;
                lit.parse::<f64>()
                    .map(Expression::constant)
                    .map_err(|_| ParseError::Syntax { offset: start, message: format!("malformed number `{lit}`") })
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier").to_string();
                if self.peek() == Some(b'(') {
                    let op = UnaryOp::from_name(&name).ok_or(ParseError::UnknownFunction { offset: start, name })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(b')')?;
                    Ok(Expression::unary(op, arg))
                } else {
                    variable_index(&name)
                        .map(Expression::var)
                        .ok_or(ParseError::UnknownVariable { offset: start, name })
                }
            }
            Some(c) => Err(self.syntax(format!("unexpected `{}`", c as char))),
        }
    }

    /// Consumes `digits [. digits] [(e|E) [+-] digits]`.
    fn number_literal(&mut self) -> Option<String> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return None;
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        Some(std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number").to_string())
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

// Printing precedence levels.
const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const POWER: u8 = 3;
const ATOM: u8 = 4;

fn level(e: &Expression) -> u8 {
    match e.node() {
        Node::Const(_) | Node::Var(_) => ATOM,
        Node::Unary(UnaryOp::Sq, c) if sq_as_power(c) => POWER,
        Node::Unary(..) => ATOM,
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => SUM,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PRODUCT,
    }
}

/// `u^2` only for plain bases; everything else prints as `sq(u)`.
fn sq_as_power(base: &Expression) -> bool {
    match base.node() {
        Node::Var(_) => true,
        Node::Const(c) => *c >= 0.0,
        Node::Unary(op, _) => *op != UnaryOp::Neg && *op != UnaryOp::Sq,
        Node::Binary(..) => false,
    }
}

pub(crate) fn print(e: &Expression) -> String {
    let mut out = String::new();
    write(e, SUM, &mut out);
    out
}

fn write(e: &Expression, min_level: u8, out: &mut String) {
    if level(e) < min_level {
        out.push('(');
        write(e, SUM, out);
        out.push(')');
        return;
    }
    match e.node() {
        Node::Const(c) => out.push_str(&format!("{c}")),
        Node::Var(i) => out.push_str(&format!("x{}", i + 1)),
        Node::Unary(UnaryOp::Neg, c) => {
            out.push('-');
            write(c, ATOM, out);
        }
        Node::Unary(UnaryOp::Sq, c) if sq_as_power(c) => {
            write(c, ATOM, out);
            out.push_str("^2");
        }
        Node::Unary(op, c) => {
            out.push_str(op.name().expect("named function"));
            out.push('(');
            write(c, SUM, out);
            out.push(')');
        }
        Node::Binary(op, l, r) => {
            let (left_min, right_min) = match op {
                BinaryOp::Add | BinaryOp::Sub => (SUM, PRODUCT),
                BinaryOp::Mul | BinaryOp::Div => (PRODUCT, POWER),
            };
            write(l, left_min, out);
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    out.push(' ');
                    out.push(op.symbol());
                    out.push(' ');
                }
                _ => out.push(op.symbol()),
            }
            write(r, right_min, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::simplify;

    #[test]
    fn round_trips_quadratic() {
        let text = "x1^2 + 0.5*x2^2";
        let e = parse(text).unwrap();
        assert_eq!(e.to_string(), text);
        assert_eq!(e.eval(&[1.0, 2.0]).unwrap(), 3.0);
    }

    #[test]
    fn parses_pendulum_candidate() {
        let e = parse("omc(x1) + 0.254*sq(x2)").unwrap();
        let want = Expression::var(0).omc() + 0.254 * Expression::var(1).sq();
        assert_eq!(e, want);
    }

    #[test]
    fn unterminated_call_reports_offset() {
        let err = parse("sin(").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 4, .. }), "{err:?}");
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(parse("tan(x1)"), Err(ParseError::UnknownFunction { offset: 0, .. })));
        assert!(matches!(parse("x1 + y"), Err(ParseError::UnknownVariable { offset: 5, .. })));
        assert!(matches!(parse("x0"), Err(ParseError::UnknownVariable { .. })));
    }

    #[test]
    fn trailing_operator_is_an_error() {
        assert!(matches!(parse("x1+"), Err(ParseError::Syntax { offset: 3, .. })));
        assert!(parse("x1^3").is_err());
    }

    #[test]
    fn minus_binds_to_atom() {
        // -x1^2 is (-x1)^2 by the grammar
        let e = parse("-x1^2").unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), 9.0);
        let e = parse("-sq(x1)").unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        assert_eq!(parse("-2.5").unwrap().as_const(), Some(-2.5));
    }

    #[test]
    fn prints_with_minimal_parentheses() {
        let x = Expression::var;
        let cases = [
            x(0) - (x(1) + x(2)),
            x(0) / (x(1) * x(2)),
            (x(0) + x(1)) * x(2),
            -(x(0).sq()),
            (x(0) - x(1)).sq(),
            x(0) * -x(1),
            Expression::constant(-0.25) * x(0),
            x(0).sin().sq() + (x(1) * x(0)).cos(),
        ];
        for e in cases {
            let s = simplify(&e);
            let back = parse(&s.to_string()).unwrap();
            assert_eq!(back, s, "{s}");
        }
        assert_eq!((x(0) - (x(1) + x(2))).to_string(), "x1 - (x2 + x3)");
    }

    #[test]
    fn shortest_round_trip_constants() {
        let c = 0.1 + 0.2;
        let e = Expression::constant(c) * Expression::var(0);
        let back = parse(&e.to_string()).unwrap();
        assert_eq!(back.constants(), vec![c]);
    }
}
