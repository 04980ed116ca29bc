//! Grid dumps of a certificate and its Lie derivative over a 2-D slice of
//! the domain.

use std::io::Write;

use crate::dynamics::DynamicalSystem;
use crate::expr::{lie_derivative, Expression, Program};
use crate::neuralnet::LyapunovNet;
use crate::{Error, Result};

/// Two state coordinates spanning the grid; the others are held at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub a: usize,
    pub b: usize,
}

impl Slice {
    /// The full plane of a 2-D system, or an error asking for a slice.
    pub fn for_system(sys: &DynamicalSystem, slice: Option<Slice>) -> Result<Slice> {
        let s = match slice {
            Some(s) => s,
            None if sys.dim == 2 => Slice { a: 0, b: 1 },
            None => {
                return Err(Error::Config(format!("{} is {}-dimensional; pass a 2-D slice", sys.name, sys.dim)));
            }
        };
        if s.a == s.b || s.a >= sys.dim || s.b >= sys.dim {
            return Err(Error::Config(format!("slice ({}, {}) is invalid for dimension {}", s.a + 1, s.b + 1, sys.dim)));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub x1: f64,
    pub x2: f64,
    pub v: f64,
    pub lie: f64,
}

/// Grid points in row-major order from the lower domain corner: the first
/// slice coordinate indexes rows, the second varies fastest.
pub fn grid(sys: &DynamicalSystem, slice: Slice, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    let axis = |k: usize| -> Vec<f64> {
        let (lo, hi) = (sys.domain.lower[k], sys.domain.upper[k]);
        (0..n).map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
    };
    let (ua, ub) = (axis(slice.a), axis(slice.b));
    let mut out = Vec::with_capacity(n * n);
    for &p in &ua {
        for &q in &ub {
            let mut x = vec![0.0; sys.dim];
            x[slice.a] = p;
            x[slice.b] = q;
            out.push(x);
        }
    }
    Ok(out)
}

pub fn expression_landscape(sys: &DynamicalSystem, v: &Expression, slice: Slice, n: usize) -> Result<Vec<Row>> {
    let v = sys.expand_auxiliary(v);
    if v.arity() > sys.dim {
        return Err(Error::DimensionMismatch { expected: sys.dim, found: v.arity() });
    }
    let lie = Program::compile(&lie_derivative(&v, &sys.rhs)?);
    let value = Program::compile(&v);
    Ok(grid(sys, slice, n)?
        .into_iter()
        .map(|x| Row { x1: x[slice.a], x2: x[slice.b], v: value.eval_point(&x), lie: lie.eval_point(&x) })
        .collect())
}

pub fn network_landscape(sys: &DynamicalSystem, net: &LyapunovNet, slice: Slice, n: usize) -> Result<Vec<Row>> {
    if net.n_in() != sys.input_dim() {
        return Err(Error::DimensionMismatch { expected: sys.input_dim(), found: net.n_in() });
    }
    let g0 = net.g_origin();
    grid(sys, slice, n)?
        .into_iter()
        .map(|x| {
            let f = sys.eval_rhs(&x)?;
            let lie = net.grad_state(sys, &x).iter().zip(&f).map(|(g, fi)| g * fi).sum();
            Ok(Row { x1: x[slice.a], x2: x[slice.b], v: net.forward_with_origin(&sys.augment(&x), g0), lie })
        })
        .collect()
}

/// CSV with header `x1,x2,V,LfV`; the first two columns hold the slice
/// coordinates.
pub fn write_csv(out: &mut impl Write, rows: &[Row]) -> std::io::Result<()> {
    writeln!(out, "x1,x2,V,LfV")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.x1, r.x2, r.v, r.lie)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{get_system, path_following};
    use crate::expr::parse;
    use crate::neuralnet::NetConfig;

    #[test]
    fn path_following_lie_is_minus_x2_squared() {
        let sys = path_following(2.0, 6.0);
        let rows = expression_landscape(&sys, &parse("x1^2 + x2^2/2").unwrap(), Slice { a: 0, b: 1 }, 11).unwrap();
        assert_eq!(rows.len(), 121);
        assert_eq!((rows[0].x1, rows[0].x2), (-2.0, -std::f64::consts::PI));
        assert_eq!(rows[1].x1, -2.0);
        for r in rows {
            assert!((r.lie + r.x2 * r.x2).abs() <= 1e-12 * (1.0 + r.x2 * r.x2), "{r:?}");
        }
    }

    #[test]
    fn single_cell_grid_is_lower_corner() {
        let sys = get_system("van_der_pol").unwrap();
        let rows = expression_landscape(&sys, &parse("x1^2 + x2^2").unwrap(), Slice { a: 0, b: 1 }, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].x1, rows[0].x2), (-1.0, -1.0));
    }

    #[test]
    fn network_values_match_forward() {
        let sys = get_system("van_der_pol").unwrap();
        let net = LyapunovNet::for_system(&sys, &[6], NetConfig::default(), 3);
        let rows = network_landscape(&sys, &net, Slice { a: 0, b: 1 }, 5).unwrap();
        for r in rows {
            assert_eq!(r.v, net.forward(&[r.x1, r.x2]));
        }
    }

    #[test]
    fn higher_dimensions_need_a_slice() {
        let sys = get_system("trig3d").unwrap();
        assert!(Slice::for_system(&sys, None).is_err());
        assert!(Slice::for_system(&sys, Some(Slice { a: 0, b: 0 })).is_err());
        let s = Slice::for_system(&sys, Some(Slice { a: 0, b: 2 })).unwrap();
        let rows = expression_landscape(&sys, &parse("x1^2 + x2^2 + x3^2").unwrap(), s, 3).unwrap();
        assert_eq!(rows[2].x2, 1.5);
    }
}
