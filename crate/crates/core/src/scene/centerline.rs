//! Lumen centerline: a C2 cubic spline curve `c(t) = (x(t), y(t), t)`.
//!
//! The curve is a graph over the world z-axis, which keeps the nearest-point
//! projection a well-conditioned 1-D Newton solve seeded at `p.z`.

use nalgebra::Vector3;

/// Natural cubic spline on uniform knots, extended linearly past both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformSpline {
    t0: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl UniformSpline {
    pub fn new(t0: f64, step: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 2 && step > 0.0);
        let second = natural_second_derivatives(&values, step);
        Self {
            t0,
            step,
            values,
            second,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.step * (self.values.len() - 1) as f64
    }

    pub fn knots(&self) -> &[f64] {
        &self.values
    }

    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.values.len() - 1;
        let h = self.step;
        if t <= self.t0 {
            let (f, d, _) = self.eval_segment(0, 0.0);
            return (f + d * (t - self.t0), d, 0.0);
        }
        if t >= self.t_end() {
            let (f, d, _) = self.eval_segment(n - 1, h);
            return (f + d * (t - self.t_end()), d, 0.0);
        }
        let x = (t - self.t0) / h;
        let i = (x.floor() as usize).min(n - 1);
        self.eval_segment(i, t - self.t0 - i as f64 * h)
    }

    fn eval_segment(&self, i: usize, dt: f64) -> (f64, f64, f64) {
        let h = self.step;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let a = (h - dt) / h;
        let b = dt / h;
        let f = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (f, d, dd)
    }
}

fn natural_second_derivatives(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior rows of [1 4 1] m = 6/h^2 * second difference.
    let inner = n - 2;
    let mut c = vec![0.0; inner];
    let mut d = vec![0.0; inner];
    for k in 0..inner {
        let rhs = 6.0 * (y[k + 2] - 2.0 * y[k + 1] + y[k]) / (h * h);
        let denom = if k == 0 { 4.0 } else { 4.0 - c[k - 1] };
        c[k] = 1.0 / denom;
        d[k] = if k == 0 {
            rhs / denom
        } else {
            (rhs - d[k - 1]) / denom
        };
    }
    for k in (0..inner).rev() {
        m[k + 1] = if k + 1 == inner {
            d[k]
        } else {
            d[k] - c[k] * m[k + 2]
        };
    }
    m
}

/// Point on the centerline with its local frame.
#[derive(Clone, Copy, Debug)]
pub struct CenterlineSample {
    pub t: f64,
    pub position: Vector3<f64>,
    /// Unit tangent.
    pub tangent: Vector3<f64>,
    /// Unit normal-plane axis defining angle zero.
    pub e1: Vector3<f64>,
    /// `tangent x e1`.
    pub e2: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centerline {
    x: UniformSpline,
    y: UniformSpline,
    arc_t0: f64,
    arc_step: f64,
    arc: Vec<f64>,
}

const ARC_STEP: f64 = 1e-3;

impl Centerline {
    /// Knots at `t0 + k * step` with lateral offsets `(x_k, y_k)`.
    pub fn new(t0: f64, step: f64, offsets: &[(f64, f64)]) -> Self {
        let x = UniformSpline::new(t0, step, offsets.iter().map(|o| o.0).collect());
        let y = UniformSpline::new(t0, step, offsets.iter().map(|o| o.1).collect());
        let mut line = Self {
            x,
            y,
            arc_t0: t0,
            arc_step: ARC_STEP,
            arc: Vec::new(),
        };
        line.build_arclength();
        line
    }

    pub fn straight(t0: f64, t1: f64) -> Self {
        Self::new(t0, t1 - t0, &[(0.0, 0.0), (0.0, 0.0)])
    }

    pub fn param_range(&self) -> (f64, f64) {
        (self.x.t0, self.x.t_end())
    }

    pub fn knot_offsets(&self) -> Vec<(f64, f64)> {
        self.x
            .knots()
            .iter()
            .copied()
            .zip(self.y.knots().iter().copied())
            .collect()
    }

    fn build_arclength(&mut self) {
        let (t0, t1) = self.param_range();
        let n = ((t1 - t0) / self.arc_step).ceil() as usize + 1;
        let mut arc = Vec::with_capacity(n);
        arc.push(0.0);
        let h = self.arc_step;
        for k in 1..n {
            let a = t0 + (k - 1) as f64 * h;
            // Simpson on each cell.
            let seg = h / 6.0 * (self.speed(a) + 4.0 * self.speed(a + 0.5 * h) + self.speed(a + h));
            arc.push(arc[k - 1] + seg);
        }
        // Arclength is measured from t = 0.
        self.arc = arc;
        let s0 = self.arclength_raw(0.0);
        for s in &mut self.arc {
            *s -= s0;
        }
    }

    #[inline]
    fn speed(&self, t: f64) -> f64 {
        let (_, dx, _) = self.x.eval(t);
        let (_, dy, _) = self.y.eval(t);
        (dx * dx + dy * dy + 1.0).sqrt()
    }

    fn arclength_raw(&self, t: f64) -> f64 {
        let h = self.arc_step;
        let last = self.arc.len() - 1;
        let x = (t - self.arc_t0) / h;
        if x <= 0.0 {
            return self.arc[0] + (t - self.arc_t0) * self.speed(self.arc_t0);
        }
        if x >= last as f64 {
            let t_end = self.arc_t0 + last as f64 * h;
            return self.arc[last] + (t - t_end) * self.speed(t_end);
        }
        let i = x.floor() as usize;
        let ta = self.arc_t0 + i as f64 * h;
        let u = (t - ta) / h;
        // Cubic Hermite with the exact speed as slope.
        let (s0, s1) = (self.arc[i], self.arc[i + 1]);
        let (m0, m1) = (self.speed(ta) * h, self.speed(ta + h) * h);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * s0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * s1
            + (u3 - u2) * m1
    }

    /// Arclength from `t = 0`.
    pub fn arclength(&self, t: f64) -> f64 {
        self.arclength_raw(t)
    }

    /// Inverse of [`Centerline::arclength`].
    pub fn param_at_arclength(&self, s: f64) -> f64 {
        let mut t = s;
        for _ in 0..20 {
            let f = self.arclength(t) - s;
            let dt = f / self.speed(t);
            t -= dt;
            if dt.abs() < 1e-14 {
                break;
            }
        }
        t
    }

    /// Position, first and second derivative in `t`.
    #[inline]
    pub fn derivatives(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (x, dx, ddx) = self.x.eval(t);
        let (y, dy, ddy) = self.y.eval(t);
        (
            Vector3::new(x, y, t),
            Vector3::new(dx, dy, 1.0),
            Vector3::new(ddx, ddy, 0.0),
        )
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.derivatives(t).0
    }

    pub fn curvature(&self, t: f64) -> f64 {
        let (_, d1, d2) = self.derivatives(t);
        d1.cross(&d2).norm() / d1.norm().powi(3)
    }

    pub fn sample(&self, t: f64) -> CenterlineSample {
        let (position, d1, _) = self.derivatives(t);
        let tangent = d1.normalize();
        let x = Vector3::x();
        let e1 = (x - tangent * tangent.dot(&x)).normalize();
        let e2 = tangent.cross(&e1);
        CenterlineSample {
            t,
            position,
            tangent,
            e1,
            e2,
        }
    }

    /// Parameter of the centerline point nearest to `p`, assuming `p` lies
    /// within the tube's locally-unique projection neighbourhood.
    #[inline]
    pub fn nearest_param(&self, p: &Vector3<f64>) -> f64 {
        let mut t = p.z;
        for _ in 0..8 {
            let (c, d1, d2) = self.derivatives(t);
            let diff = c - p;
            let g = diff.dot(&d1);
            let dg = d1.norm_squared() + diff.dot(&d2);
            let step = g / dg.max(1e-6);
            t -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spline_interpolates_knots_and_is_c2() {
        let s = UniformSpline::new(0.0, 0.1, vec![0.0, 1.0, -0.5, 0.25, 0.0]);
        for (k, y) in [0.0, 1.0, -0.5, 0.25, 0.0].iter().enumerate() {
            assert_relative_eq!(s.eval(k as f64 * 0.1).0, *y, epsilon = 1e-12);
        }
        for k in 1..4 {
            let t = k as f64 * 0.1;
            let (_, d_lo, dd_lo) = s.eval(t - 1e-9);
            let (_, d_hi, dd_hi) = s.eval(t + 1e-9);
            assert_relative_eq!(d_lo, d_hi, epsilon = 1e-5);
            assert_relative_eq!(dd_lo, dd_hi, epsilon = 1e-5);
        }
    }

    #[test]
    fn spline_derivative_matches_finite_difference() {
        let s = UniformSpline::new(-0.1, 0.05, vec![0.0, 0.003, -0.002, 0.001, 0.0, 0.002]);
        for t in [-0.2, -0.07, 0.0, 0.031, 0.12, 0.3] {
            let h = 1e-6;
            let fd = (s.eval(t + h).0 - s.eval(t - h).0) / (2.0 * h);
            assert_relative_eq!(s.eval(t).1, fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn straight_line_arclength_is_z() {
        let c = Centerline::straight(-0.1, 0.5);
        for t in [-0.3, 0.0, 0.123, 0.7] {
            assert_relative_eq!(c.arclength(t), t, epsilon = 1e-12);
            assert_relative_eq!(c.param_at_arclength(t), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn nearest_param_agrees_with_dense_search() {
        let c = Centerline::new(
            -0.1,
            0.05,
            &[
                (0.0, 0.0),
                (0.003, -0.001),
                (-0.002, 0.002),
                (0.001, 0.0),
                (0.0, 0.0),
            ],
        );
        for p in [
            Vector3::new(0.004, 0.002, 0.01),
            Vector3::new(-0.01, 0.006, 0.05),
            Vector3::new(0.0, -0.012, 0.09),
        ] {
            let t = c.nearest_param(&p);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..200_001 {
                let tk = -0.1 + k as f64 * 1e-6 * 1.5;
                let d = (c.position(tk) - p).norm();
                if d < best.0 {
                    best = (d, tk);
                }
            }
            assert!((t - best.1).abs() < 2e-6, "{t} vs {}", best.1);
        }
    }
}
