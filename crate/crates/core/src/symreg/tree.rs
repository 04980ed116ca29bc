//! Random trees and pre-order subtree surgery for the GP operators.

use rand::Rng;

use crate::expr::{BinaryOp, Expression, Node, UnaryOp};

/// Subtree rooted at pre-order position `n`.
pub(crate) fn nth(e: &Expression, n: usize) -> Expression {
    if n == 0 {
        return e.clone();
    }
    match e.node() {
        Node::Const(_) | Node::Var(_) => panic!("subtree index out of range"),
        Node::Unary(_, c) => nth(c, n - 1),
        Node::Binary(_, l, r) => {
            let lc = l.complexity();
            if n <= lc {
                nth(l, n - 1)
            } else {
                nth(r, n - 1 - lc)
            }
        }
    }
}

/// Copy of `e` with the subtree at pre-order position `n` replaced.
pub(crate) fn replace_nth(e: &Expression, n: usize, with: &Expression) -> Expression {
    if n == 0 {
        return with.clone();
    }
    match e.node() {
        Node::Const(_) | Node::Var(_) => panic!("subtree index out of range"),
        Node::Unary(op, c) => Expression::unary(*op, replace_nth(c, n - 1, with)),
        Node::Binary(op, l, r) => {
            let lc = l.complexity();
            if n <= lc {
                Expression::binary(*op, replace_nth(l, n - 1, with), r.clone())
            } else {
                Expression::binary(*op, l.clone(), replace_nth(r, n - 1 - lc, with))
            }
        }
    }
}

/// Operator and variable pools a tree may draw from.
#[derive(Debug, Clone)]
pub(crate) struct Grammar {
    pub n_vars: usize,
    pub unary: Vec<UnaryOp>,
    pub binary: Vec<BinaryOp>,
}

impl Grammar {
    pub fn terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Expression {
        if self.n_vars > 0 && rng.random_bool(0.6) {
            Expression::var(rng.random_range(0..self.n_vars))
        } else {
            Expression::constant(random_constant(rng))
        }
    }

    /// Grow (`full == false`) or full tree of at most `depth` levels and
    /// `max_size` nodes.
    pub fn random_tree<R: Rng + ?Sized>(&self, rng: &mut R, depth: usize, max_size: usize, full: bool) -> Expression {
        let too_small = max_size < 2 || (max_size < 3 && self.unary.is_empty());
        if depth <= 1 || too_small || (!full && rng.random_bool(0.3)) {
            return self.terminal(rng);
        }
        let use_unary = !self.unary.is_empty() && (self.binary.is_empty() || max_size < 3 || rng.random_bool(0.3));
        if use_unary {
            let op = self.unary[rng.random_range(0..self.unary.len())];
            Expression::unary(op, self.random_tree(rng, depth - 1, max_size - 1, full))
        } else if !self.binary.is_empty() {
            let op = self.binary[rng.random_range(0..self.binary.len())];
            let budget = max_size - 1;
            let left_budget = (budget / 2).max(1);
            let l = self.random_tree(rng, depth - 1, left_budget, full);
            let r = self.random_tree(rng, depth - 1, budget - l.complexity(), full);
            Expression::binary(op, l, r)
        } else {
            self.terminal(rng)
        }
    }
}

pub(crate) fn random_constant<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let v: f64 = rng.random_range(-2.0..2.0);
    // a coarse value keeps printed trees readable before refinement
    (v * 100.0).round() / 100.0
}
