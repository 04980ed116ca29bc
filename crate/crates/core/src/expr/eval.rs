use super::{BinaryOp, Expression, Node, UnaryOp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("non-finite value at point {point:?}")]
    NonFinite { point: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Postfix form of an expression for evaluation over many points.
///
/// Batch evaluation works column-wise: `columns[i]` holds variable `i` for
/// every point, so each instruction runs as one tight loop.
#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    max_stack: usize,
}

impl Program {
    pub fn compile(e: &Expression) -> Self {
        let mut code = Vec::with_capacity(e.complexity());
        emit(e, &mut code);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for ins in &code {
            match ins {
                Instr::Const(_) | Instr::Var(_) => depth += 1,
                Instr::Unary(_) => {}
                Instr::Binary(_) => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Program { code, max_stack }
    }

    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        for ins in &self.code {
            match *ins {
                Instr::Const(c) => stack.push(c),
                Instr::Var(i) => stack.push(x[i]),
                Instr::Unary(op) => {
                    let top = stack.last_mut().expect("stack underflow");
                    *top = op.apply(*top);
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    *a = op.apply(*a, b);
                }
            }
        }
        stack.pop().unwrap_or(f64::NAN)
    }

    /// Evaluate over `n` points stored column-wise. Non-finite values are
    /// returned as-is.
    pub fn eval_columns(&self, columns: &[Vec<f64>], n: usize) -> Vec<f64> {
        let mut stack: Vec<Vec<f64>> = Vec::with_capacity(self.max_stack);
        for ins in &self.code {
            match *ins {
                Instr::Const(c) => stack.push(vec![c; n]),
                Instr::Var(i) => stack.push(columns[i][..n].to_vec()),
                Instr::Unary(op) => {
                    let top = stack.last_mut().expect("stack underflow");
                    apply_unary(op, top);
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    apply_binary(op, a, &b);
                }
            }
        }
        stack.pop().unwrap_or_else(|| vec![f64::NAN; n])
    }

    /// Evaluate over row-major points.
    pub fn eval_rows(&self, points: &[Vec<f64>]) -> Vec<f64> {
        points.iter().map(|p| self.eval_point(p)).collect()
    }
}

fn emit(e: &Expression, code: &mut Vec<Instr>) {
    match e.node() {
        Node::Const(c) => code.push(Instr::Const(*c)),
        Node::Var(i) => code.push(Instr::Var(*i)),
        Node::Unary(op, c) => {
            emit(c, code);
            code.push(Instr::Unary(*op));
        }
        Node::Binary(op, l, r) => {
            emit(l, code);
            emit(r, code);
            code.push(Instr::Binary(*op));
        }
    }
}

fn apply_unary(op: UnaryOp, v: &mut [f64]) {
    match op {
        UnaryOp::Sq => v.iter_mut().for_each(|a| *a *= *a),
        UnaryOp::Neg => v.iter_mut().for_each(|a| *a = -*a),
        _ => v.iter_mut().for_each(|a| *a = op.apply(*a)),
    }
}

fn apply_binary(op: BinaryOp, a: &mut [f64], b: &[f64]) {
    let it = a.iter_mut().zip(b);
    match op {
        BinaryOp::Add => it.for_each(|(x, y)| *x += y),
        BinaryOp::Sub => it.for_each(|(x, y)| *x -= y),
        BinaryOp::Mul => it.for_each(|(x, y)| *x *= y),
        BinaryOp::Div => it.for_each(|(x, y)| *x /= y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_matches_pointwise() {
        let x = Expression::var;
        let e = (x(0).sin() * x(1) + 0.5 * x(1).sq()) / (2.0 - x(0).cos());
        let p = Program::compile(&e);
        let pts: Vec<Vec<f64>> = (0..17).map(|k| vec![0.1 * k as f64, -0.3 * k as f64]).collect();
        let cols = vec![pts.iter().map(|p| p[0]).collect(), pts.iter().map(|p| p[1]).collect()];
        let batch = p.eval_columns(&cols, pts.len());
        for (pt, b) in pts.iter().zip(&batch) {
            assert_eq!(*b, e.eval_unchecked(pt));
            assert_eq!(*b, p.eval_point(pt));
        }
    }
}
