//! Local rewriting: constant folding, 0/1 identities, sign pushing and a few
//! structural cancellations. Every rule keeps or lowers the node count.

use super::{BinaryOp, Expression, Node, UnaryOp};

pub fn simplify(e: &Expression) -> Expression {
    match e.node() {
        Node::Const(_) | Node::Var(_) => e.clone(),
        Node::Unary(op, c) => unary(*op, simplify(c)),
        Node::Binary(op, l, r) => binary(*op, simplify(l), simplify(r)),
    }
}

fn fold(v: f64) -> Option<Expression> {
    v.is_finite().then(|| Expression::constant(v))
}

/// Builds `op(c)` applying local rules; `c` is assumed already simplified.
pub(crate) fn unary(op: UnaryOp, c: Expression) -> Expression {
    if let Some(v) = c.as_const() {
        if let Some(k) = fold(op.apply(v)) {
            return k;
        }
    }
    if let Node::Unary(UnaryOp::Neg, inner) = c.node() {
        match op {
            UnaryOp::Neg => return inner.clone(),
            UnaryOp::Sq | UnaryOp::Omc | UnaryOp::Cos | UnaryOp::Sinc => return unary(op, inner.clone()),
            UnaryOp::Sin => {}
        }
    }
    if op == UnaryOp::Neg {
        if let Node::Binary(BinaryOp::Sub, a, b) = c.node() {
            return Expression::binary(BinaryOp::Sub, b.clone(), a.clone());
        }
    }
    Expression::unary(op, c)
}

fn neg(c: Expression) -> Expression {
    unary(UnaryOp::Neg, c)
}

/// Builds `l op r` applying local rules; children assumed simplified.
pub(crate) fn binary(op: BinaryOp, l: Expression, r: Expression) -> Expression {
    if let (Some(a), Some(b)) = (l.as_const(), r.as_const()) {
        if let Some(k) = fold(op.apply(a, b)) {
            return k;
        }
    }
    match op {
        BinaryOp::Add => add(l, r),
        BinaryOp::Sub => sub(l, r),
        BinaryOp::Mul => mul(l, r),
        BinaryOp::Div => div(l, r),
    }
}

fn add(l: Expression, r: Expression) -> Expression {
    if l.is_zero() {
        return r;
    }
    if r.is_zero() {
        return l;
    }
    if let Node::Unary(UnaryOp::Neg, y) = r.node() {
        return sub(l, y.clone());
    }
    if let Node::Unary(UnaryOp::Neg, y) = l.node() {
        return sub(r, y.clone());
    }
    if let Some(m) = negative_term(&r) {
        return sub(l, m);
    }
    if l == r {
        return mul(Expression::constant(2.0), l);
    }
    // constants to the right of a sum: (c + e) -> (e + c)
    if l.as_const().is_some() && r.as_const().is_none() {
        return add(r, l);
    }
    Expression::binary(BinaryOp::Add, l, r)
}

fn sub(l: Expression, r: Expression) -> Expression {
    if r.is_zero() {
        return l;
    }
    if l.is_zero() {
        return neg(r);
    }
    if l == r {
        return Expression::constant(0.0);
    }
    if let Node::Unary(UnaryOp::Neg, y) = r.node() {
        return add(l, y.clone());
    }
    if let Some(m) = negative_term(&r) {
        return add(l, m);
    }
    Expression::binary(BinaryOp::Sub, l, r)
}

/// For `-c` or `-c*y` with `c > 0`, the positive counterpart `c` or `c*y`.
fn negative_term(e: &Expression) -> Option<Expression> {
    match e.node() {
        Node::Const(c) if *c < 0.0 => Some(Expression::constant(-c)),
        Node::Binary(BinaryOp::Mul, a, y) => match a.as_const() {
            Some(c) if c < 0.0 => Some(Expression::binary(BinaryOp::Mul, Expression::constant(-c), y.clone())),
            _ => None,
        },
        _ => None,
    }
}

fn mul(l: Expression, r: Expression) -> Expression {
    if l.is_zero() || r.is_zero() {
        return Expression::constant(0.0);
    }
    if l.is_one() {
        return r;
    }
    if r.is_one() {
        return l;
    }
    if l.as_const() == Some(-1.0) {
        return neg(r);
    }
    if r.as_const() == Some(-1.0) {
        return neg(l);
    }
    // canonical: constant factor on the left
    if r.as_const().is_some() && l.as_const().is_none() {
        return mul(r, l);
    }
    if let Some(c) = l.as_const() {
        match r.node() {
            Node::Binary(BinaryOp::Mul, a, b) => {
                if let Some(c2) = a.as_const() {
                    if let Some(k) = fold(c * c2) {
                        return mul(k, b.clone());
                    }
                }
            }
            Node::Unary(UnaryOp::Neg, y) => return mul(Expression::constant(-c), y.clone()),
            _ => {}
        }
    }
    if let (Node::Unary(UnaryOp::Neg, a), Node::Unary(UnaryOp::Neg, b)) = (l.node(), r.node()) {
        return mul(a.clone(), b.clone());
    }
    if l == r {
        return unary(UnaryOp::Sq, l);
    }
    if let Node::Unary(UnaryOp::Sinc, u) = r.node() {
        if *u == l {
            return unary(UnaryOp::Sin, l);
        }
    }
    if let Node::Unary(UnaryOp::Sinc, u) = l.node() {
        if *u == r {
            return unary(UnaryOp::Sin, r);
        }
    }
    Expression::binary(BinaryOp::Mul, l, r)
}

fn div(l: Expression, r: Expression) -> Expression {
    if l.is_zero() {
        return Expression::constant(0.0);
    }
    if r.is_one() {
        return l;
    }
    if l == r {
        return Expression::constant(1.0);
    }
    if let Some(c) = r.as_const() {
        if c != 0.0 {
            if let Some(k) = fold(1.0 / c) {
                return mul(k, l);
            }
        }
    }
    Expression::binary(BinaryOp::Div, l, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expression {
        Expression::var(i)
    }

    #[test]
    fn zero_times_anything_vanishes() {
        let e = 0.0 * x(0).sin() + x(1);
        assert_eq!(simplify(&e), x(1));
    }

    #[test]
    fn folds_constants() {
        let e = Expression::constant(2.0) * Expression::constant(3.0);
        assert_eq!(simplify(&e).as_const(), Some(6.0));
    }

    #[test]
    fn structural_cancellation() {
        let e = x(0).sq() - x(0).sq();
        assert_eq!(simplify(&e).as_const(), Some(0.0));
    }

    #[test]
    fn double_negation_and_sign_pushing() {
        assert_eq!(simplify(&-(-x(0))), x(0));
        assert_eq!(simplify(&(x(0) + -x(1))), x(0) - x(1));
        assert_eq!(simplify(&(-x(0)).sq()), x(0).sq());
    }

    #[test]
    fn sinc_product_becomes_sine() {
        let e = x(1) * x(1).sinc();
        assert_eq!(simplify(&e), x(1).sin());
    }

    #[test]
    fn keeps_division_by_zero_unfolded() {
        let e = Expression::constant(1.0) / Expression::constant(0.0);
        assert_eq!(simplify(&e).complexity(), 3);
    }
}
