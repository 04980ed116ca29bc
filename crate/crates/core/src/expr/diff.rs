use super::simplify::{binary, simplify, unary};
use super::{BinaryOp, Expression, Node, UnaryOp};

fn c(v: f64) -> Expression {
    Expression::constant(v)
}

fn mul(a: Expression, b: Expression) -> Expression {
    binary(BinaryOp::Mul, a, b)
}

fn add(a: Expression, b: Expression) -> Expression {
    binary(BinaryOp::Add, a, b)
}

fn sub(a: Expression, b: Expression) -> Expression {
    binary(BinaryOp::Sub, a, b)
}

fn div(a: Expression, b: Expression) -> Expression {
    binary(BinaryOp::Div, a, b)
}

/// Symbolic partial derivative with respect to variable `i`.
pub fn differentiate(e: &Expression, i: usize) -> Expression {
    let e = simplify(e);
    d(&e, i)
}

fn d(e: &Expression, i: usize) -> Expression {
    match e.node() {
        Node::Const(_) => c(0.0),
        Node::Var(j) => c(if *j == i { 1.0 } else { 0.0 }),
        Node::Unary(op, u) => {
            let du = d(u, i);
            if du.is_zero() {
                return c(0.0);
            }
            let outer = match op {
                UnaryOp::Sin => unary(UnaryOp::Cos, u.clone()),
                UnaryOp::Cos => unary(UnaryOp::Neg, unary(UnaryOp::Sin, u.clone())),
                UnaryOp::Omc => unary(UnaryOp::Sin, u.clone()),
                UnaryOp::Sq => mul(c(2.0), u.clone()),
                UnaryOp::Neg => c(-1.0),
                // (cos u - sinc u) / u
                UnaryOp::Sinc => div(
                    sub(unary(UnaryOp::Cos, u.clone()), unary(UnaryOp::Sinc, u.clone())),
                    u.clone(),
                ),
            };
            mul(outer, du)
        }
        Node::Binary(op, l, r) => {
            let dl = d(l, i);
            let dr = d(r, i);
            match op {
                BinaryOp::Add => add(dl, dr),
                BinaryOp::Sub => sub(dl, dr),
                BinaryOp::Mul => add(mul(dl, r.clone()), mul(l.clone(), dr)),
                BinaryOp::Div => {
                    if dr.is_zero() {
                        div(dl, r.clone())
                    } else {
                        let num = sub(mul(dl, r.clone()), mul(l.clone(), dr));
                        div(num, unary(UnaryOp::Sq, r.clone()))
                    }
                }
            }
        }
    }
}

/// All partial derivatives `[dV/dx_0, ..., dV/dx_{n-1}]`.
pub fn gradient(e: &Expression, n: usize) -> Vec<Expression> {
    let e = simplify(e);
    (0..n).map(|i| d(&e, i)).collect()
}

/// `sum_i (dV/dx_i) * f_i`, simplified.
///
/// Errors when `V` references a variable beyond `f.len()`.
pub fn lie_derivative(v: &Expression, f: &[Expression]) -> Result<Expression, crate::Error> {
    if v.arity() > f.len() {
        return Err(crate::Error::DimensionMismatch { expected: f.len(), found: v.arity() });
    }
    let grad = gradient(v, f.len());
    let terms = grad
        .into_iter()
        .zip(f)
        .map(|(g, fi)| mul(g, simplify(fi)))
        .filter(|t| !t.is_zero());
    let mut acc = c(0.0);
    for t in terms {
        acc = add(acc, t);
    }
    Ok(simplify(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expression {
        Expression::var(i)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn polynomial_rule() {
        let e = x(0).sq() + x(1).sq() / 2.0;
        let de = differentiate(&e, 0);
        assert_eq!(de, 2.0 * x(0));
    }

    #[test]
    fn omc_differentiates_to_sine() {
        assert_eq!(differentiate(&x(0).omc(), 0), x(0).sin());
    }

    #[test]
    fn product_rule() {
        let e = x(0) * x(0).sin();
        let de = differentiate(&e, 0);
        for t in [-1.3f64, 0.0, 0.7, 2.1] {
            let want = t.sin() + t * t.cos();
            assert!(close(de.eval(&[t]).unwrap(), want));
        }
    }

    #[test]
    fn sinc_derivative_matches_quotient() {
        let de = differentiate(&x(0).sinc(), 0);
        let t: f64 = 0.8;
        let want = (t * t.cos() - t.sin()) / (t * t);
        assert!(close(de.eval(&[t]).unwrap(), want));
    }

    #[test]
    fn lie_of_zero_is_zero() {
        let f = vec![x(1), -x(0)];
        assert!(lie_derivative(&Expression::constant(0.0), &f).unwrap().is_zero());
    }

    #[test]
    fn lie_rejects_out_of_range_variables() {
        let f = vec![x(1), -x(0)];
        assert!(lie_derivative(&x(2).sq(), &f).is_err());
    }
}
