//! The bounded kernel `g` solving `g'''' + 2g''' - g'' - 2g' = delta` and the
//! two positive weight combinations built from it.

use crate::error::{Error, Result};

/// Which one-sided limit to take at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Kernel value and derivatives at one point. Orders three and four carry both
/// one-sided values; away from zero the two agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub t: f64,
    pub g: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3_left: f64,
    pub d3_right: f64,
    pub d4_left: f64,
    pub d4_right: f64,
}

pub fn g(t: f64) -> f64 {
    if t < 0.0 {
        (2.0 - t.exp_m1()) / 6.0
    } else {
        let e = (-t).exp();
        e * (3.0 - e) / 6.0
    }
}

fn branch_deriv(t: f64, order: u32, side: Side) -> f64 {
    let left = t < 0.0 || (t == 0.0 && side == Side::Left);
    if left {
        -t.exp() / 6.0
    } else {
        let k = order as i32;
        let a = (-2.0f64).powi(k) * (-2.0 * t).exp();
        let b = 3.0 * (-1.0f64).powi(k) * (-t).exp();
        -(a - b) / 6.0
    }
}

/// Branchwise derivative of order 1..=4. At zero, orders one and two are
/// continuous so `side` is ignored there.
pub fn g_deriv(t: f64, order: u32, side: Side) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::Domain(format!("derivative order {order} not in 1..=4")));
    }
    if order <= 2 && t == 0.0 {
        return Ok(branch_deriv(t, order, Side::Right));
    }
    Ok(branch_deriv(t, order, side))
}

pub fn sample(t: f64) -> KernelSample {
    KernelSample {
        t,
        g: g(t),
        d1: branch_deriv(t, 1, Side::Right),
        d2: branch_deriv(t, 2, Side::Right),
        d3_left: branch_deriv(t, 3, Side::Left),
        d3_right: branch_deriv(t, 3, Side::Right),
        d4_left: branch_deriv(t, 4, Side::Left),
        d4_right: branch_deriv(t, 4, Side::Right),
    }
}

/// `g'''' + 2g''' - g'' - 2g'` off the origin.
pub fn ode_residual(t: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::Domain("the kernel equation is distributional at t = 0".into()));
    }
    let d = |k| branch_deriv(t, k, Side::Right);
    Ok(d(4) + 2.0 * d(3) - d(2) - 2.0 * d(1))
}

/// Jump of the third derivative across zero.
pub fn third_derivative_jump() -> f64 {
    branch_deriv(0.0, 3, Side::Right) - branch_deriv(0.0, 3, Side::Left)
}

/// `-(g'' + g')`.
pub fn weight_w1(t: f64) -> f64 {
    if t < 0.0 {
        t.exp() / 3.0
    } else {
        (-2.0 * t).exp() / 3.0
    }
}

/// `-(2g'' + 3g' - g)`.
pub fn weight_w2(t: f64) -> f64 {
    if t < 0.0 {
        (4.0 * t.exp() + 3.0) / 6.0
    } else {
        ((-2.0 * t).exp() + 6.0 * (-t).exp()) / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_reference_points() {
        assert_eq!(g(0.0), 1.0 / 3.0);
        assert!((g(-20.0) - 0.5).abs() < 1e-8);
        assert!(g(20.0).abs() < 1e-8);
        let d1 = g_deriv(1.0, 1, Side::Right).unwrap();
        assert!((d1 - (-(1.0 / 6.0) * (-2.0 * (-2.0f64).exp() + 3.0 * (-1.0f64).exp()))).abs() < 1e-15);
        assert!((d1 + 0.138839).abs() < 1e-4);
        let d2 = g_deriv(-1.0, 2, Side::Left).unwrap();
        assert!((d2 + 0.061313).abs() < 1e-6);
    }

    #[test]
    fn jump_is_one() {
        assert_eq!(third_derivative_jump(), 1.0);
        assert_eq!(g_deriv(0.0, 3, Side::Right).unwrap(), 5.0 / 6.0);
        assert_eq!(g_deriv(0.0, 3, Side::Left).unwrap(), -1.0 / 6.0);
    }

    #[test]
    fn low_orders_continuous_at_zero() {
        for k in 1..=2 {
            let l = branch_deriv(0.0, k, Side::Left);
            let r = branch_deriv(0.0, k, Side::Right);
            assert!((l - r).abs() < 1e-15, "order {k}");
        }
        let eps = 1e-13;
        assert!((g(eps) - g(-eps)).abs() < 1e-13);
    }

    #[test]
    fn bad_order_rejected() {
        assert!(g_deriv(0.3, 0, Side::Left).is_err());
        assert!(g_deriv(0.3, 5, Side::Left).is_err());
        assert!(ode_residual(0.0).is_err());
    }

    #[test]
    fn residual_vanishes() {
        for t in [0.7, -3.0, 5.0] {
            assert!(ode_residual(t).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn weights() {
        assert!((weight_w1(-1.0) - 0.122626).abs() < 1e-6);
        assert!((weight_w1(1.0) - 0.045112).abs() < 1e-6);
        assert_eq!(weight_w1(0.0), 1.0 / 3.0);
        assert!((weight_w1(-1e-14) - 1.0 / 3.0).abs() < 1e-13);
        assert_eq!(weight_w2(0.0), 7.0 / 6.0);
        assert!(((4.0 + 3.0) / 6.0 - weight_w2(-1e-300)).abs() < 1e-15);
        assert!((weight_w2(-20.0) - 0.5).abs() < 1e-8);
        assert!((weight_w2(1.0) - ((-2.0f64).exp() + 6.0 * (-1.0f64).exp()) / 6.0).abs() < 1e-15);
        assert!((weight_w2(1.0) - 0.390460).abs() < 1e-4);
    }

    #[test]
    fn weights_match_derivative_combinations() {
        for &t in &[-4.0, -0.5, 0.25, 3.0] {
            let s = sample(t);
            assert!((weight_w1(t) + s.d2 + s.d1).abs() < 1e-14);
            assert!((weight_w2(t) + 2.0 * s.d2 + 3.0 * s.d1 - s.g).abs() < 1e-14);
        }
    }
}
