//! Fixed-step classical Runge-Kutta integration and piecewise-cubic input
//! reconstruction between sample instants.

use nalgebra::DVector;

/// A state that can be advanced by scaled increments.
pub trait State: Clone {
    /// Returns `self + h * d`.
    fn add_scaled(&self, h: f64, d: &Self) -> Self;
}

impl State for DVector<f64> {
    fn add_scaled(&self, h: f64, d: &Self) -> Self {
        self + d * h
    }
}

impl State for f64 {
    fn add_scaled(&self, h: f64, d: &Self) -> Self {
        self + h * d
    }
}

/// One RK4 step of `x' = f(t, x)` from `t` to `t + h`.
pub fn rk4_step<S, F>(f: F, t: f64, x: &S, h: f64) -> S
where
    S: State,
    F: Fn(f64, &S) -> S,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &x.add_scaled(0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &x.add_scaled(0.5 * h, &k2));
    let k4 = f(t + h, &x.add_scaled(h, &k3));
    x.add_scaled(h / 6.0, &k1)
        .add_scaled(h / 3.0, &k2)
        .add_scaled(h / 3.0, &k3)
        .add_scaled(h / 6.0, &k4)
}

/// A scalar signal on `[t0, t0 + h]` known through its end values and slopes,
/// evaluated by cubic Hermite interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteSegment {
    pub t0: f64,
    pub h: f64,
    pub v0: f64,
    pub v1: f64,
    pub d0: f64,
    pub d1: f64,
}

impl HermiteSegment {
    /// A segment holding `v` constant.
    pub fn constant(t0: f64, h: f64, v: f64) -> Self {
        Self { t0, h, v0: v, v1: v, d0: 0.0, d1: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.h == 0.0 {
            return self.v0;
        }
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.v0 + h10 * self.h * self.d0 + h01 * self.v1 + h11 * self.h * self.d1
    }

    /// Time derivative of the interpolant.
    pub fn slope(&self, t: f64) -> f64 {
        if self.h == 0.0 {
            return self.d0;
        }
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let g00 = 6.0 * s2 - 6.0 * s;
        let g10 = 3.0 * s2 - 4.0 * s + 1.0;
        let g11 = 3.0 * s2 - 2.0 * s;
        (g00 * (self.v0 - self.v1)) / self.h + g10 * self.d0 + g11 * self.d1
    }

    /// The same cubic on the sub-interval `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> Self {
        Self { t0: a, h: b - a, v0: self.eval(a), v1: self.eval(b), d0: self.slope(a), d1: self.slope(b) }
    }
}

/// Measured output and applied input over one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSegment {
    pub y: HermiteSegment,
    pub u: HermiteSegment,
}

impl InputSegment {
    pub fn constant(t0: f64, h: f64, y: f64, u: f64) -> Self {
        Self { y: HermiteSegment::constant(t0, h, y), u: HermiteSegment::constant(t0, h, u) }
    }

    pub fn t0(&self) -> f64 {
        self.y.t0
    }

    pub fn h(&self) -> f64 {
        self.y.h
    }

    /// The same signals on the sub-interval `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> Self {
        Self { y: self.y.restrict(a, b), u: self.u.restrict(a, b) }
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        (self.y.eval(t), self.u.eval(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay_is_fourth_order() {
        let f = |_t: f64, x: &f64| -x;
        let run = |h: f64| {
            let mut x = 1.0;
            let steps = (1.0 / h).round() as usize;
            for i in 0..steps {
                x = rk4_step(f, i as f64 * h, &x, h);
            }
            (x - (-1.0f64).exp()).abs()
        };
        let (e1, e2) = (run(0.1), run(0.05));
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.2, "observed order {order}");
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let p = |t: f64| 2.0 * t * t * t - t * t + 3.0 * t - 1.0;
        let dp = |t: f64| 6.0 * t * t - 2.0 * t + 3.0;
        let (t0, h) = (0.3, 0.7);
        let seg = HermiteSegment { t0, h, v0: p(t0), v1: p(t0 + h), d0: dp(t0), d1: dp(t0 + h) };
        for k in 0..=10 {
            let t = t0 + h * k as f64 / 10.0;
            assert!((seg.eval(t) - p(t)).abs() < 1e-12);
            assert!((seg.slope(t) - dp(t)).abs() < 1e-11);
        }
        let sub = seg.restrict(0.5, 0.8);
        for k in 0..=10 {
            let t = 0.5 + 0.3 * k as f64 / 10.0;
            assert!((sub.eval(t) - p(t)).abs() < 1e-12);
        }
    }
}
