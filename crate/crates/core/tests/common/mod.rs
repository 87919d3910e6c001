//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod cli;
pub mod filter;
pub mod golden;
pub mod scenarios;

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::Vector3;
use psm::dynamics::BodyParams;

/// Hyper-dual number `a + b e1 + c e2 + d e1 e2` with `e1^2 = e2^2 = 0`.
/// Seeding two inputs with `e1` and `e2` gives the exact mixed second
/// partial in `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hd {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Hd {
    pub fn cst(a: f64) -> Self {
        Self { a, b: 0.0, c: 0.0, d: 0.0 }
    }

    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            a: f,
            b: df * self.b,
            c: df * self.c,
            d: df * self.d + ddf * self.b * self.c,
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.a.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(self) -> Self {
        let r = self.a.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * r * r))
    }

    pub fn sq(self) -> Self {
        self * self
    }
}

impl Add for Hd {
    type Output = Hd;
    fn add(self, o: Hd) -> Hd {
        Hd {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
            d: self.d + o.d,
        }
    }
}

impl Sub for Hd {
    type Output = Hd;
    fn sub(self, o: Hd) -> Hd {
        self + (-o)
    }
}

impl Neg for Hd {
    type Output = Hd;
    fn neg(self) -> Hd {
        Hd {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
        }
    }
}

impl Mul for Hd {
    type Output = Hd;
    fn mul(self, o: Hd) -> Hd {
        Hd {
            a: self.a * o.a,
            b: self.a * o.b + self.b * o.a,
            c: self.a * o.c + self.c * o.a,
            d: self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        }
    }
}

impl Mul<Hd> for f64 {
    type Output = Hd;
    fn mul(self, o: Hd) -> Hd {
        Hd::cst(self) * o
    }
}

/// Kinetic energy written out term by term. `q = (theta, theta_dot)`.
pub fn kinetic(q: &[Hd; 6], p: &BodyParams) -> Hd {
    let m = p.mass;
    let lb = p.length;
    let [x, y, _z, wx, wy, wz] = *q;
    let (sx, cx, sy, cy) = (x.sin(), x.cos(), y.sin(), y.cos());
    let l = lb * ((sy * cx).sq() + sx.sq()).sqrt();
    0.5 * ((m * lb * lb + p.inertia.x) * wx.sq())
        + 0.5 * ((m * lb * lb * cx.sq() + Hd::cst(p.inertia.y)) * wy.sq())
        + 0.5 * ((m * l.sq() + Hd::cst(p.inertia.z)) * wz.sq())
        - (m * lb) * (l * wx * wz * cy * sx)
        - (m * lb) * (l * wy * wz * sy * cx)
}

/// Gravity plus spring potential; the upright pose is the gravity minimum.
pub fn potential(q: &[Hd; 6], p: &BodyParams, theta_m: &Vector3<f64>, k: &Vector3<f64>) -> Hd {
    let gravity = -(p.mass * p.gravity * p.length) * (q[0].cos() * q[1].cos());
    (0..3).fold(gravity, |acc, i| acc + 0.5 * (k[i] * (q[i] - Hd::cst(theta_m[i])).sq()))
}

/// Rayleigh dissipation of the damper.
pub fn dissipation(q: &[Hd; 6], theta_dot_m: &Vector3<f64>, b: &Vector3<f64>) -> Hd {
    (0..3).fold(Hd::cst(0.0), |acc, i| acc + 0.5 * (b[i] * (q[3 + i] - Hd::cst(theta_dot_m[i])).sq()))
}

fn seeded(q: &[f64; 6], i: usize, j: usize) -> [Hd; 6] {
    let mut out = q.map(Hd::cst);
    out[i].b = 1.0;
    out[j].c = 1.0;
    out
}

/// `d/dt(dT/dq_dot) - dT/dq + dV/dq + dD/dq_dot` at `(theta, theta_dot,
/// theta_ddot)`: the torque the Euler-Lagrange equations demand.
#[allow(clippy::too_many_arguments)]
pub fn euler_lagrange_torque(
    theta: &Vector3<f64>,
    theta_dot: &Vector3<f64>,
    theta_ddot: &Vector3<f64>,
    theta_m: &Vector3<f64>,
    theta_dot_m: &Vector3<f64>,
    k: &Vector3<f64>,
    b: &Vector3<f64>,
    p: &BodyParams,
) -> Vector3<f64> {
    let q = [theta.x, theta.y, theta.z, theta_dot.x, theta_dot.y, theta_dot.z];
    let qdot = [theta_dot.x, theta_dot.y, theta_dot.z, theta_ddot.x, theta_ddot.y, theta_ddot.z];
    let mut tau = Vector3::zeros();
    for i in 0..3 {
        // Total time derivative of dT/d(theta_dot_i) by the chain rule.
        let mut ddt = 0.0;
        for (j, rate) in qdot.iter().enumerate() {
            ddt += kinetic(&seeded(&q, 3 + i, j), p).d * rate;
        }
        let dt_dq = kinetic(&seeded(&q, i, i), p).b;
        let dv_dq = potential(&seeded(&q, i, i), p, theta_m, k).b;
        let dd_dqdot = dissipation(&seeded(&q, 3 + i, 3 + i), theta_dot_m, b).b;
        tau[i] = ddt - dt_dq + dv_dq + dd_dqdot;
    }
    tau
}

/// Kinetic energy in plain floats for finite-difference checks.
pub fn kinetic_f64(theta: &Vector3<f64>, theta_dot: &Vector3<f64>, p: &BodyParams) -> f64 {
    let q = [theta.x, theta.y, theta.z, theta_dot.x, theta_dot.y, theta_dot.z].map(Hd::cst);
    kinetic(&q, p).a
}

/// Relative error with an absolute floor for tiny references.
pub fn rel_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
