//! Unit quaternions, the so(3) exponential map and their reverse-mode derivatives.
//!
//! Quaternions are stored `[w, x, y, z]`.

use std::f64::consts::PI;

pub type Quat = [f64; 4];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Returns the unit quaternion and the norm of the input. A zero input maps to identity.
pub fn normalize(q: &Quat) -> (Quat, f64) {
    let n = norm(q);
    if n == 0.0 || !n.is_finite() {
        return (IDENTITY, 0.0);
    }
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Pulls a gradient on `normalize(q)` back onto `q`.
pub fn normalize_backward(q: &Quat, grad_unit: &Quat) -> Quat {
    let (u, n) = normalize(q);
    if n == 0.0 {
        return [0.0; 4];
    }
    let d = dot4(&u, grad_unit);
    [
        (grad_unit[0] - u[0] * d) / n,
        (grad_unit[1] - u[1] * d) / n,
        (grad_unit[2] - u[2] * d) / n,
        (grad_unit[3] - u[3] * d) / n,
    ]
}

#[inline]
fn dot4(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Hamilton product `a ⊗ b`.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Gradients of `a ⊗ b` with respect to `a` and `b`.
pub fn mul_backward(a: &Quat, b: &Quat, g: &Quat) -> (Quat, Quat) {
    // p = R(b) a = L(a) b; return R(b)^T g and L(a)^T g.
    let ga = [
        b[0] * g[0] + b[1] * g[1] + b[2] * g[2] + b[3] * g[3],
        -b[1] * g[0] + b[0] * g[1] - b[3] * g[2] + b[2] * g[3],
        -b[2] * g[0] + b[3] * g[1] + b[0] * g[2] - b[1] * g[3],
        -b[3] * g[0] - b[2] * g[1] + b[1] * g[2] + b[0] * g[3],
    ];
    let gb = [
        a[0] * g[0] + a[1] * g[1] + a[2] * g[2] + a[3] * g[3],
        -a[1] * g[0] + a[0] * g[1] + a[3] * g[2] - a[2] * g[3],
        -a[2] * g[0] - a[3] * g[1] + a[0] * g[2] + a[1] * g[3],
        -a[3] * g[0] + a[2] * g[1] - a[1] * g[2] + a[0] * g[3],
    ];
    (ga, gb)
}

/// Rotation matrix of a unit quaternion.
pub fn to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Gradient of `to_matrix` (treated as a polynomial in `q`) given `dL/dR`.
pub fn to_matrix_backward(q: &Quat, g: &Mat3) -> Quat {
    let [w, x, y, z] = *q;
    let gw = 2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let gy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let gz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    [gw, gx, gy, gz]
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Re-expresses a rotation vector so that its magnitude lies in `[0, π]`.
pub fn wrap_rotation_vector(v: &[f64; 3]) -> [f64; 3] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta <= PI {
        return *v;
    }
    let k = wrap_angle(theta) / theta;
    [v[0] * k, v[1] * k, v[2] * k]
}

const SMALL_ANGLE: f64 = 1e-6;

/// Exponential map from a rotation vector to a unit quaternion, with the
/// rotation angle wrapped into `(-π, π]` first.
pub fn exp(v: &[f64; 3]) -> Quat {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let k = 0.5 - t2 / 48.0;
        return [1.0 - t2 / 8.0, v[0] * k, v[1] * k, v[2] * k];
    }
    let phi = wrap_angle(theta);
    let k = (0.5 * phi).sin() / theta;
    [(0.5 * phi).cos(), v[0] * k, v[1] * k, v[2] * k]
}

/// Pulls a gradient on `exp(v)` back onto `v`.
pub fn exp_backward(v: &[f64; 3], g: &Quat) -> [f64; 3] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    // J_w = a * v, J_vec = k1 I + c v v^T
    let (a, k1, c) = if theta < SMALL_ANGLE {
        (-0.25 + theta * theta / 96.0, 0.5 - theta * theta / 48.0, -1.0 / 24.0)
    } else {
        let phi = wrap_angle(theta);
        let (s, co) = (0.5 * phi).sin_cos();
        let k1 = s / theta;
        let k2 = 0.5 * co;
        (-0.5 * s / theta, k1, (k2 - k1) / (theta * theta))
    };
    let gv_dot = v[0] * g[1] + v[1] * g[2] + v[2] * g[3];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = a * v[i] * g[0] + k1 * g[i + 1] + c * v[i] * gv_dot;
    }
    out
}

pub fn mat3_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t[j][i] = *v;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "component {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn matrix_is_orthonormal() {
        let (q, _) = normalize(&[0.3, -0.5, 0.7, 0.2]);
        let r = to_matrix(&q);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrap_examples() {
        assert!((wrap_angle(1.5 * PI) + 0.5 * PI).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let q = exp(&[PI / 2.0, 0.0, 0.0]);
        let s = (PI / 4.0).sin();
        assert!((q[0] - s).abs() < 1e-15 && (q[1] - s).abs() < 1e-15);
        assert_eq!(q[2], 0.0);
    }

    #[test]
    fn wrapped_exp_is_same_rotation() {
        // 3π/2 about z equals -π/2 about z as a rotation
        let a = exp(&[0.0, 0.0, 1.5 * PI]);
        let b = exp(&[0.0, 0.0, -0.5 * PI]);
        let ra = to_matrix(&a);
        let rb = to_matrix(&b);
        for i in 0..3 {
            for j in 0..3 {
                assert!((ra[i][j] - rb[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn exp_gradient_matches_fd() {
        for v in [[0.3, -0.2, 0.5], [1e-8, 2e-8, -1e-8], [2.0, 2.5, -1.0], [0.0, 0.0, 0.0]] {
            let g = [0.4, -0.7, 0.2, 1.1];
            let analytic = exp_backward(&v, &g);
            fd_check(
                |x| {
                    let q = exp(&[x[0], x[1], x[2]]);
                    q.iter().zip(&g).map(|(a, b)| a * b).sum()
                },
                &v,
                &analytic,
            );
        }
    }

    #[test]
    fn matrix_and_mul_gradients_match_fd() {
        let q = [0.6, -0.3, 0.5, 0.2];
        let gm = [[0.3, -1.0, 0.2], [0.7, 0.1, -0.4], [0.5, 0.9, -0.6]];
        let analytic = to_matrix_backward(&q, &gm);
        fd_check(
            |x| {
                let r = to_matrix(&[x[0], x[1], x[2], x[3]]);
                (0..3).map(|i| (0..3).map(|j| r[i][j] * gm[i][j]).sum::<f64>()).sum()
            },
            &q,
            &analytic,
        );

        let b = [0.1, 0.8, -0.3, 0.4];
        let g = [0.5, -0.2, 0.9, 0.3];
        let (ga, gb) = mul_backward(&q, &b, &g);
        fd_check(|x| dot4(&mul(&[x[0], x[1], x[2], x[3]], &b), &g), &q, &ga);
        fd_check(|x| dot4(&mul(&q, &[x[0], x[1], x[2], x[3]]), &g), &b, &gb);

        let gn = normalize_backward(&q, &g);
        fd_check(|x| dot4(&normalize(&[x[0], x[1], x[2], x[3]]).0, &g), &q, &gn);
    }
}
