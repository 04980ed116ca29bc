//! Immutable expression trees over the regression operator set.
//!
//! An [`Expression`] is a cheap-to-clone handle to a shared node. Trees are
//! built bottom-up and never mutated, so they can be shared freely across
//! threads by the regressor, the falsifier and the reports.

mod diff;
mod eval;
mod parse;
mod refine;
mod simplify;

use std::fmt;
use std::sync::Arc;

pub use diff::{differentiate, gradient, lie_derivative};
pub use eval::{EvalError, Program};
pub use parse::{parse, ParseError};
pub use refine::{mse, refine_constants, RefineConfig};
pub use simplify::simplify;

/// Unary operators. `Sinc` is internal: it only appears in system
/// right-hand sides and is never offered to the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Sin,
    Cos,
    /// `1 - cos(u)`
    Omc,
    /// `u^2`
    Sq,
    Neg,
    /// `sin(u)/u`, continuously extended with value 1 at 0.
    Sinc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl UnaryOp {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            UnaryOp::Sin => u.sin(),
            UnaryOp::Cos => u.cos(),
            UnaryOp::Omc => 1.0 - u.cos(),
            UnaryOp::Sq => u * u,
            UnaryOp::Neg => -u,
            UnaryOp::Sinc => sinc(u),
        }
    }

    /// Function name used by the text grammar. `Neg` has none.
    pub fn name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Omc => Some("omc"),
            UnaryOp::Sq => Some("sq"),
            UnaryOp::Sinc => Some("sinc"),
            UnaryOp::Neg => None,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "omc" => Some(UnaryOp::Omc),
            "sq" => Some(UnaryOp::Sq),
            "sinc" => Some(UnaryOp::Sinc),
            _ => None,
        }
    }
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

pub(crate) fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        // Taylor series; error below 1e-20 in this band.
        let u2 = u * u;
        1.0 - u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sin() / u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// 0-based state index.
    Var(usize),
    Unary(UnaryOp, Expression),
    Binary(BinaryOp, Expression, Expression),
}

/// Shared, immutable expression tree.
#[derive(Clone)]
pub struct Expression(Arc<Node>);

impl PartialEq for Expression {
    /// Structural equality; constants compare by value.
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Expression {
    pub fn new(node: Node) -> Self {
        Expression(Arc::new(node))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Node::Const(c))
    }

    pub fn var(index: usize) -> Self {
        Self::new(Node::Var(index))
    }

    pub fn unary(op: UnaryOp, child: Expression) -> Self {
        Self::new(Node::Unary(op, child))
    }

    pub fn binary(op: BinaryOp, lhs: Expression, rhs: Expression) -> Self {
        Self::new(Node::Binary(op, lhs, rhs))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn sin(self) -> Self {
        Self::unary(UnaryOp::Sin, self)
    }

    pub fn cos(self) -> Self {
        Self::unary(UnaryOp::Cos, self)
    }

    pub fn omc(self) -> Self {
        Self::unary(UnaryOp::Omc, self)
    }

    pub fn sq(self) -> Self {
        Self::unary(UnaryOp::Sq, self)
    }

    pub fn sinc(self) -> Self {
        Self::unary(UnaryOp::Sinc, self)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Node count.
    pub fn complexity(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, c) => 1 + c.complexity(),
            Node::Binary(_, l, r) => 1 + l.complexity() + r.complexity(),
        }
    }

    pub fn depth(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, c) => 1 + c.depth(),
            Node::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Number of variables the tree needs (max index + 1), 0 when none.
    pub fn arity(&self) -> usize {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Unary(_, c) => c.arity(),
            Node::Binary(_, l, r) => l.arity().max(r.arity()),
        }
    }

    /// Constant leaves in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_constants(&mut |c| out.push(c));
        out
    }

    fn visit_constants(&self, f: &mut impl FnMut(f64)) {
        match self.node() {
            Node::Const(c) => f(*c),
            Node::Var(_) => {}
            Node::Unary(_, c) => c.visit_constants(f),
            Node::Binary(_, l, r) => {
                l.visit_constants(f);
                r.visit_constants(f);
            }
        }
    }

    /// Same shape with constant leaves replaced in pre-order.
    ///
    /// Panics if `values` is shorter than the number of constant leaves.
    pub fn with_constants(&self, values: &[f64]) -> Expression {
        let mut it = values.iter().copied();
        let out = self.replace_constants(&mut it);
        debug_assert!(it.next().is_none(), "too many constants supplied");
        out
    }

    fn replace_constants(&self, it: &mut impl Iterator<Item = f64>) -> Expression {
        match self.node() {
            Node::Const(_) => Expression::constant(it.next().expect("constant count mismatch")),
            Node::Var(_) => self.clone(),
            Node::Unary(op, c) => Expression::unary(*op, c.replace_constants(it)),
            Node::Binary(op, l, r) => {
                let l = l.replace_constants(it);
                let r = r.replace_constants(it);
                Expression::binary(*op, l, r)
            }
        }
    }

    /// Replace every variable `i` by `map(i)`.
    pub fn substitute(&self, map: &impl Fn(usize) -> Expression) -> Expression {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => map(*i),
            Node::Unary(op, c) => Expression::unary(*op, c.substitute(map)),
            Node::Binary(op, l, r) => Expression::binary(*op, l.substitute(map), r.substitute(map)),
        }
    }

    /// True when every operator appears in the given unary set (binary
    /// operators and `neg` are always allowed).
    pub fn uses_only(&self, unary: &[UnaryOp]) -> bool {
        match self.node() {
            Node::Const(_) | Node::Var(_) => true,
            Node::Unary(op, c) => (*op == UnaryOp::Neg || unary.contains(op)) && c.uses_only(unary),
            Node::Binary(_, l, r) => l.uses_only(unary) && r.uses_only(unary),
        }
    }

    /// Evaluate at a single point.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_unchecked(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { point: x.to_vec() })
        }
    }

    /// Evaluate without the finiteness check; NaN/inf propagate.
    ///
    /// Panics if `x` is shorter than [`Expression::arity`].
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Unary(op, c) => op.apply(c.eval_unchecked(x)),
            Node::Binary(op, l, r) => op.apply(l.eval_unchecked(x), r.eval_unchecked(x)),
        }
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({self})")
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&parse::print(self))
    }
}

impl serde::Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Expression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait for Expression {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::binary($op, self, rhs)
            }
        }
        impl std::ops::$trait<f64> for Expression {
            type Output = Expression;
            fn $method(self, rhs: f64) -> Expression {
                Expression::binary($op, self, Expression::constant(rhs))
            }
        }
        impl std::ops::$trait<Expression> for f64 {
            type Output = Expression;
            fn $method(self, rhs: Expression) -> Expression {
                Expression::binary($op, Expression::constant(self), rhs)
            }
        }
    };
}

binop!(Add, add, BinaryOp::Add);
binop!(Sub, sub, BinaryOp::Sub);
binop!(Mul, mul, BinaryOp::Mul);
binop!(Div, div, BinaryOp::Div);

impl std::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::unary(UnaryOp::Neg, self)
    }
}

/// `k * e` with the factor pushed through sums, differences, quotients and
/// the left factor of products, so it lands on the coefficients.
pub fn scale_terms(e: &Expression, k: f64) -> Expression {
    match e.node() {
        Node::Const(c) => Expression::constant(c * k),
        Node::Binary(op @ (BinaryOp::Add | BinaryOp::Sub), l, r) => Expression::binary(*op, scale_terms(l, k), scale_terms(r, k)),
        Node::Binary(op @ (BinaryOp::Mul | BinaryOp::Div), l, r) => Expression::binary(*op, scale_terms(l, k), r.clone()),
        _ => Expression::constant(k) * e.clone(),
    }
}

/// Sum of terms; `0` for an empty iterator.
pub fn sum(terms: impl IntoIterator<Item = Expression>) -> Expression {
    terms.into_iter().reduce(|a, b| a + b).unwrap_or_else(|| Expression::constant(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expression {
        Expression::var(i)
    }

    #[test]
    fn complexity_counts_nodes() {
        assert_eq!(Expression::constant(2.0).complexity(), 1);
        assert_eq!(x(0).complexity(), 1);
        assert_eq!(x(0).sq().complexity(), 2);
        assert_eq!((x(0).sq() + 0.5 * x(1).sq()).complexity(), 7);
    }

    #[test]
    fn evaluates_simple_forms() {
        let e = x(0).sq() + x(1).sq() / 2.0;
        assert_eq!(e.eval(&[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(x(0).omc().eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn singular_point_reports_non_finite() {
        let e = x(0).sin() / x(0);
        match e.eval(&[0.0]) {
            Err(EvalError::NonFinite { point }) => assert_eq!(point, vec![0.0]),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn constants_round_trip_in_preorder() {
        let e = 1.5 * x(0) + 2.5 * x(1).sq();
        assert_eq!(e.constants(), vec![1.5, 2.5]);
        let e2 = e.with_constants(&[3.0, 4.0]);
        assert_eq!(e2.constants(), vec![3.0, 4.0]);
        assert_eq!(e2.eval(&[1.0, 1.0]).unwrap(), 7.0);
    }

    #[test]
    fn sinc_is_continuous_at_zero() {
        assert_eq!(sinc(0.0), 1.0);
        let a = sinc(0.99e-4);
        let b = (0.99e-4f64).sin() / 0.99e-4;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn arity_and_substitution() {
        let e = x(0) * x(2);
        assert_eq!(e.arity(), 3);
        let s = e.substitute(&|i| Expression::constant(i as f64 + 1.0));
        assert_eq!(s.eval(&[]).unwrap(), 3.0);
    }
}
