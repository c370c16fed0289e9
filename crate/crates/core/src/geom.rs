//! Small fixed-size vector helpers.
//!
//! Positions and velocities are stored as `[f64; 3]` with a runtime
//! dimension; unused trailing components stay zero. This keeps the hot loops
//! free of heap traffic while allowing mixed dimensions (e.g. one spatial
//! axis against two velocity axes).

pub type V3 = [f64; 3];

pub const ZERO3: V3 = [0.0; 3];

#[inline]
pub fn dot(a: &V3, b: &V3, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm_sq(a: &V3, d: usize) -> f64 {
    dot(a, a, d)
}

#[inline]
pub fn norm(a: &V3, d: usize) -> f64 {
    norm_sq(a, d).sqrt()
}

#[inline]
pub fn sub(a: &V3, b: &V3, d: usize) -> V3 {
    let mut out = ZERO3;
    for i in 0..d {
        out[i] = a[i] - b[i];
    }
    out
}

#[inline]
pub fn add_scaled(a: &V3, b: &V3, c: f64, d: usize) -> V3 {
    let mut out = *a;
    for i in 0..d {
        out[i] = a[i] + c * b[i];
    }
    out
}

/// Wrap a point onto the unit torus, componentwise into [0, 1).
#[inline]
pub fn wrap_torus(x: &V3, d: usize) -> V3 {
    let mut out = *x;
    for i in 0..d {
        out[i] = x[i] - x[i].floor();
        // x.floor() == x for tiny negative values can still yield 1.0 after
        // rounding; fold that back.
        if out[i] >= 1.0 {
            out[i] -= 1.0;
        }
    }
    out
}

/// An orthonormal frame whose first axis is `e`; `d` is 2 or 3.
/// The sign of `e` is canonicalized first so that the frame depends only on
/// the line spanned by `e`, not its orientation.
pub fn plane_frame(e_in: &V3, d: usize) -> (V3, V3, V3) {
    let mut e = *e_in;
    for i in 0..d {
        if e[i] != 0.0 {
            if e[i] < 0.0 {
                for c in e.iter_mut().take(d) {
                    *c = -*c;
                }
            }
            break;
        }
    }
    if d == 2 {
        return (e, [-e[1], e[0], 0.0], ZERO3);
    }
    // pick the axis least aligned with e to start Gram-Schmidt
    let mut k = 0;
    for i in 1..3 {
        if e[i].abs() < e[k].abs() {
            k = i;
        }
    }
    let mut a = ZERO3;
    a[k] = 1.0;
    let proj = dot(&a, &e, 3);
    let mut p = ZERO3;
    for i in 0..3 {
        p[i] = a[i] - proj * e[i];
    }
    let n = norm(&p, 3);
    for c in p.iter_mut() {
        *c /= n;
    }
    let q = [
        e[1] * p[2] - e[2] * p[1],
        e[2] * p[0] - e[0] * p[2],
        e[0] * p[1] - e[1] * p[0],
    ];
    (e, p, q)
}

/// Determinant of the top-left `n`×`n` block of a 3×3 matrix stored row-major.
pub fn det_n(m: &[[f64; 3]; 3], n: usize) -> f64 {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("spatial dimension is 1, 2 or 3"),
    }
}
