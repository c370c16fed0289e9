//! The integral kernel k(v,u) of the compact part K of the linearized
//! collision operator, and its lattice quadrature table.
//!
//! k = k₂ − k₁. k₁ comes from the loss pairing and is closed-form up to the
//! angular factor. k₂ is the gain pairing reduced to kernel form: writing
//! u − v = ξ + y with y ⊥ ξ, both gain terms collapse onto one integral over
//! the perpendicular plane,
//!
//!   k₂(v,u) = 2c · e^{−m∥²/2 − r²/8} ∫_{y ⊥ ξ}
//!             [ r^{p+1−d} + r^{−1}|y|^{p+2−d} ] z^{γ−p} e^{−|m⊥+y|²/2} dy,
//!
//! with r = |v−u| (floored at eps_reg in the singular factors),
//! z = √(r²+|y|²), m = (v+u)/2 split into components along and across ξ, and
//! b(θ) = c|cos θ|^p. Every ingredient depends on (v,u) only through r, |m⊥|
//! and m∥², so the evaluation is symmetric in (v,u) to machine precision. In
//! three dimensions the plane integral reduces by rotation invariance to a
//! radial integral against the scaled Bessel function e^{−x}I₀(x).
//!
//! Applying K on the lattice needs care at the diagonal, where k ~ 1/|v−u|
//! is integrable but unresolvable by the trapezoid rule: the diagonal table
//! entry is chosen so that the row quadrature reproduces an accurate polar
//! evaluation of ∫ k(v,u) du over the box. On top of that, a small symmetric
//! rank correction pins the discrete identity K(√μ ψ) = ν √μ ψ for the
//! collision invariants ψ ∈ {1, v, |v|²/2}, which the conservation ledger
//! relies on; its size is reported alongside the table.

use super::{gauss_legendre, AngularGrid, CollisionKernelSpec};
use crate::geom::{dot, norm, norm_sq, plane_frame, sub, V3};
use crate::phase_space::PhaseGrid;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// e^{−x} I₀(x) for x ≥ 0 (Abramowitz–Stegun 9.8.1/9.8.2, ~2e−7 relative).
fn bessel_i0_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = (x / 3.75) * (x / 3.75);
        let i0 = 1.0
            + t * (3.5156229
                + t * (3.0899424 + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p / x.sqrt()
    }
}

/// k₁(v,u): angular factor × r^γ × √(μ(v)μ(u)).
pub fn k1_point(spec: &CollisionKernelSpec, c_ang: f64, v: &V3, u: &V3, d_v: usize) -> f64 {
    let r = norm(&sub(u, v, d_v), d_v).max(spec.eps_reg);
    c_ang * r.powf(spec.gamma) * (-(norm_sq(v, d_v) + norm_sq(u, d_v)) / 4.0).exp()
}

/// k₂(v,u) by the plane reduction above.
pub fn k2_point(spec: &CollisionKernelSpec, v: &V3, u: &V3, d_v: usize) -> f64 {
    let d = d_v;
    let xi = sub(u, v, d);
    let r_true = norm(&xi, d);
    let r = r_true.max(spec.eps_reg);
    let p = spec.b_form.power;
    let c = spec.b_form.c;
    let gamma = spec.gamma;

    // m split along/across ξ
    let mut m = [0.0f64; 3];
    for i in 0..d {
        m[i] = 0.5 * (v[i] + u[i]);
    }
    let m_par = (norm_sq(u, d) - norm_sq(v, d)) / (2.0 * r);
    let m_perp_sq = (norm_sq(&m, d) - m_par * m_par).max(0.0);
    let m_perp = m_perp_sq.sqrt();
    let envelope = (-0.5 * m_par * m_par - r * r / 8.0).exp();
    if envelope == 0.0 {
        return 0.0;
    }

    // Panel the 1-D integral at the |y|-kink and around the Gaussian bump so
    // a modest Gauss-Legendre order resolves every feature regardless of how
    // far the bump sits from the origin.
    let n_half = (spec.n_kernel / 2).max(12);
    let (gx, gw) = gauss_legendre(n_half);
    let mut integral = 0.0;
    if d == 2 {
        // signed projection of m onto the (1-D) perpendicular axis
        let e = {
            let mut e = if r_true > 0.0 { xi } else { [1.0, 0.0, 0.0] };
            if r_true > 0.0 {
                for c in e.iter_mut().take(2) {
                    *c /= r_true;
                }
            }
            let (e, _, _) = plane_frame(&e, 2);
            e
        };
        let eperp = [-e[1], e[0], 0.0];
        let s0 = dot(&m, &eperp, 2);
        let center = -s0;
        let half = s0.abs() + 9.0;
        let mut cuts = [-half, center - 6.0, 0.0, center + 6.0, half];
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0].max(-half), w[1].min(half));
            if hi <= lo {
                continue;
            }
            for (x, wgl) in gx.iter().zip(&gw) {
                let t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
                let wt = 0.5 * (hi - lo) * wgl;
                let z = (r * r + t * t).sqrt();
                let a = r.powi(p - 1) + t.abs().powi(p) / r;
                integral += wt * a * z.powf(gamma - p as f64) * (-0.5 * (t + s0) * (t + s0)).exp();
            }
        }
    } else {
        // rotation-invariant plane integral via the scaled Bessel I₀
        let cap = m_perp + 9.0;
        let mut cuts = [0.0, (m_perp - 6.0).max(0.0), (m_perp + 6.0).min(cap), cap];
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            for (x, wgl) in gx.iter().zip(&gw) {
                let rho = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
                let wr = 0.5 * (hi - lo) * wgl;
                let z = (r * r + rho * rho).sqrt();
                let a = r.powi(p - 2) + rho.powi(p - 1) / r;
                let gauss = (-0.5 * (rho - m_perp) * (rho - m_perp)).exp();
                integral += wr
                    * a
                    * z.powf(gamma - p as f64)
                    * rho
                    * gauss
                    * bessel_i0_scaled(rho * m_perp)
                    * std::f64::consts::TAU;
            }
        }
    }
    2.0 * c * envelope * integral
}

/// The Grad kernel k(v,u) = k₂ − k₁ with the |v−u| floor applied.
pub fn grad_kernel_k(spec: &CollisionKernelSpec, v: &V3, u: &V3, d_v: usize) -> f64 {
    let ang = AngularGrid::build(spec, d_v);
    k2_point(spec, v, u, d_v) - k1_point(spec, ang.c_ang, v, u, d_v)
}

/// ∫_box k(v, u) du by polar quadrature around v; the radial integrand
/// ρ^{d−1} k is bounded through the 1/ρ singularity.
pub fn kernel_box_integral(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    c_ang: f64,
    v: &V3,
    signed: bool,
) -> f64 {
    let d = grid.d_v;
    let (gx, gw) = gauss_legendre(spec.n_kernel);
    let mut dirs: Vec<(V3, f64)> = Vec::new();
    if d == 2 {
        let n = 2 * spec.n_kernel;
        for j in 0..n {
            let th = (j as f64 + 0.5) * std::f64::consts::TAU / n as f64;
            dirs.push(([th.cos(), th.sin(), 0.0], std::f64::consts::TAU / n as f64));
        }
    } else {
        let nc = spec.n_kernel / 2;
        let (cx, cw) = gauss_legendre(nc.max(8));
        let na = spec.n_kernel;
        for (ci, wi) in cx.iter().zip(&cw) {
            let s = (1.0 - ci * ci).max(0.0).sqrt();
            for j in 0..na {
                let ph = (j as f64 + 0.5) * std::f64::consts::TAU / na as f64;
                dirs.push((
                    [s * ph.cos(), s * ph.sin(), *ci],
                    wi * std::f64::consts::TAU / na as f64,
                ));
            }
        }
    }
    let mut total = 0.0;
    for (om, wom) in dirs {
        // distance to the box wall along om, capped by the Gaussian reach
        let mut rmax = f64::INFINITY;
        for a in 0..d {
            if om[a] > 1e-14 {
                rmax = rmax.min((grid.v_max - v[a]) / om[a]);
            } else if om[a] < -1e-14 {
                rmax = rmax.min((-grid.v_max - v[a]) / om[a]);
            }
        }
        rmax = rmax.min(18.0);
        if rmax <= 0.0 {
            continue;
        }
        for (x, w) in gx.iter().zip(&gw) {
            let rho = 0.5 * (x + 1.0) * rmax;
            let wr = 0.5 * w * rmax;
            let mut u = *v;
            for a in 0..d {
                u[a] += rho * om[a];
            }
            let mut k = k2_point(spec, v, &u, d) - k1_point(spec, c_ang, v, &u, d);
            if !signed {
                k = k.abs();
            }
            total += wom * wr * rho.powi(d as i32 - 1) * k;
        }
    }
    total
}

/// ∫ |k(v,u)| (1+|v|)^α e^{θ|v|²} / ((1+|u|)^α e^{θ|u|²}) du over the
/// weighted-bound domain (polar, Gaussian-truncated); θ < 1/8.
pub fn weighted_kernel_integral(
    spec: &CollisionKernelSpec,
    d_v: usize,
    v: &V3,
    alpha: f64,
    theta: f64,
) -> f64 {
    assert!(theta < 0.125, "weighted bound needs theta < 1/8");
    let ang = AngularGrid::build(spec, d_v);
    let (gx, gw) = gauss_legendre(64);
    let vn = norm(v, d_v);
    let rmax = 14.0 + 2.0 * vn;
    // the energy shell |u| ≈ |v| narrows like 1/|v| in angle
    let ndir = if d_v == 2 {
        (128.0 + 32.0 * vn) as usize
    } else {
        0
    };
    let mut total = 0.0;
    let numer = (1.0 + vn).powf(alpha) * (theta * vn * vn).exp();
    let mut add_dir = |om: V3, wom: f64| {
        for (x, w) in gx.iter().zip(&gw) {
            let rho = 0.5 * (x + 1.0) * rmax;
            let wr = 0.5 * w * rmax;
            let mut u = *v;
            for a in 0..d_v {
                u[a] += rho * om[a];
            }
            let un = norm(&u, d_v);
            let k = (k2_point(spec, v, &u, d_v) - k1_point(spec, ang.c_ang, v, &u, d_v)).abs();
            let ratio = numer / ((1.0 + un).powf(alpha) * (theta * un * un).exp());
            total += wom * wr * rho.powi(d_v as i32 - 1) * k * ratio;
        }
    };
    if d_v == 2 {
        for j in 0..ndir {
            let th = (j as f64 + 0.5) * std::f64::consts::TAU / ndir as f64;
            add_dir([th.cos(), th.sin(), 0.0], std::f64::consts::TAU / ndir as f64);
        }
    } else {
        let nc = (32.0 + 12.0 * vn) as usize;
        let (cx, cw) = gauss_legendre(nc);
        let na = 48;
        for (ci, wi) in cx.iter().zip(&cw) {
            let s = (1.0 - ci * ci).max(0.0).sqrt();
            for j in 0..na {
                let ph = (j as f64 + 0.5) * std::f64::consts::TAU / na as f64;
                add_dir(
                    [s * ph.cos(), s * ph.sin(), *ci],
                    wi * std::f64::consts::TAU / na as f64,
                );
            }
        }
    }
    total
}

/// Dense symmetric kernel table over the velocity lattice with the
/// row-quadrature diagonal and the invariant-pinning correction applied.
#[derive(Debug)]
pub struct KernelTable {
    pub n: usize,
    /// Symmetric kernel values, row-major n×n.
    pub t: Vec<f64>,
    /// Accurate ∫_box k(v_i, u) du per node.
    pub s_k: Vec<f64>,
    /// ν on the lattice (trapezoid, consistent with the loss side).
    pub nu: Vec<f64>,
    /// min over the lattice of ν.
    pub nu_min: f64,
    /// Sup of |invariant defect| before the rank correction, per invariant.
    pub defect_before: Vec<f64>,
    /// Same after (roundoff level).
    pub defect_after: Vec<f64>,
    /// Sup norm of the correction kernel itself.
    pub correction_sup: f64,
}

impl KernelTable {
    /// out(v_i) = Σ_j w_j T_ij f(u_j); `out` must have lattice length.
    pub fn apply(&self, grid: &PhaseGrid, f: &[f64], out: &mut [f64]) {
        let w = grid.v_weights();
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.t[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * w[j] * f[j];
            }
            *o = acc;
        }
    }

    /// ∫ k(v_i, u) f(u) du for a single lattice row.
    pub fn apply_row(&self, grid: &PhaseGrid, i: usize, f: &[f64]) -> f64 {
        let w = grid.v_weights();
        let row = &self.t[i * self.n..(i + 1) * self.n];
        row.iter().zip(w.iter().zip(f)).map(|(t, (w, f))| t * w * f).sum()
    }
}

fn solve_small(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // Gaussian elimination with partial pivoting; a is m×m, b is m×k.
    let m = a.len();
    let k = b[0].len();
    let mut aug: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend_from_slice(&b[i]);
            row
        })
        .collect();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular invariant Gram system");
        for r in 0..m {
            if r != col {
                let f = aug[r][col] / p;
                for c2 in col..(m + k) {
                    let v = aug[col][c2];
                    aug[r][c2] -= f * v;
                }
            }
        }
    }
    (0..m)
        .map(|i| {
            let p = aug[i][i];
            (0..k).map(|j| aug[i][m + j] / p).collect()
        })
        .collect()
}

pub fn build_kernel_table(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> KernelTable {
    let d = grid.d_v;
    let n = grid.n_v_cells();
    let ang = AngularGrid::build(spec, d);
    let nodes = grid.v_nodes();
    let w = grid.v_weights();

    let mut t = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = k2_point(spec, &nodes[i], &nodes[j], d) - k1_point(spec, ang.c_ang, &nodes[i], &nodes[j], d);
            t[i * n + j] = k;
            t[j * n + i] = k;
        }
    }
    let s_k: Vec<f64> = (0..n)
        .map(|i| kernel_box_integral(spec, grid, ang.c_ang, &nodes[i], true))
        .collect();
    // diagonal by row quadrature: Σ_j w_j T_ij = S_k(v_i)
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += w[j] * t[i * n + j];
            }
        }
        t[i * n + i] = (s_k[i] - off) / w[i];
    }

    let nu: Vec<f64> = nodes
        .iter()
        .map(|v| super::nu_with_cang(spec, grid, v, ang.c_ang))
        .collect();
    let nu_min = nu.iter().cloned().fold(f64::INFINITY, f64::min);

    // collision invariants ψ ∈ {1, v_1..v_d, |v|²/2} against √μ
    let n_inv = d + 2;
    let smu = grid.sqrt_mu_lattice();
    let mut e: Vec<Vec<f64>> = Vec::with_capacity(n_inv);
    e.push(smu.to_vec());
    for a in 0..d {
        e.push((0..n).map(|i| nodes[i][a] * smu[i]).collect());
    }
    e.push(
        (0..n)
            .map(|i| 0.5 * norm_sq(&nodes[i], d) * smu[i])
            .collect(),
    );

    let defect = |t: &[f64], ea: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += t[i * n + j] * w[j] * ea[j];
                }
                nu[i] * ea[i] - acc
            })
            .collect()
    };
    let r: Vec<Vec<f64>> = e.iter().map(|ea| defect(&t, ea)).collect();
    let defect_before: Vec<f64> = r
        .iter()
        .map(|ra| ra.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .collect();

    let ip = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(w).map(|((a, b), w)| a * b * w).sum() };
    let gram: Vec<Vec<f64>> = (0..n_inv)
        .map(|a| (0..n_inv).map(|b| ip(&e[a], &e[b])).collect())
        .collect();
    let mut rmat: Vec<Vec<f64>> = (0..n_inv)
        .map(|a| (0..n_inv).map(|b| ip(&r[a], &e[b])).collect())
        .collect();
    for a in 0..n_inv {
        for b in (a + 1)..n_inv {
            let s = 0.5 * (rmat[a][b] + rmat[b][a]);
            rmat[a][b] = s;
            rmat[b][a] = s;
        }
    }
    // m = G⁻¹R, then q_a = Σ_b G⁻¹_ab (r_b − ½ Σ_c e_c m_cb)
    let mmat = solve_small(&gram, &rmat);
    let p: Vec<Vec<f64>> = (0..n_inv)
        .map(|b| {
            (0..n)
                .map(|i| {
                    let mut s = r[b][i];
                    for c in 0..n_inv {
                        s -= 0.5 * e[c][i] * mmat[c][b];
                    }
                    s
                })
                .collect()
        })
        .collect();
    // q = G⁻¹ p (solve columnwise over the lattice index)
    let ginv_cols = solve_small(&gram, &identity(n_inv));
    let q: Vec<Vec<f64>> = (0..n_inv)
        .map(|a| {
            (0..n)
                .map(|i| {
                    let mut s = 0.0;
                    for b in 0..n_inv {
                        s += ginv_cols[a][b] * p[b][i];
                    }
                    s
                })
                .collect()
        })
        .collect();
    let mut correction_sup = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let mut c = 0.0;
            for a in 0..n_inv {
                c += q[a][i] * e[a][j] + e[a][i] * q[a][j];
            }
            t[i * n + j] += c;
            if j != i {
                t[j * n + i] += c;
            }
            correction_sup = correction_sup.max(c.abs());
        }
    }
    let defect_after: Vec<f64> = e
        .iter()
        .map(|ea| {
            defect(&t, ea)
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
        })
        .collect();

    KernelTable {
        n,
        t,
        s_k,
        nu,
        nu_min,
        defect_before,
        defect_after,
        correction_sup,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

type TableKey = (
    (usize, usize, usize, usize, u64, u64),
    (u64, u64, i32, usize, u64, usize, usize),
);

static TABLE_CACHE: Lazy<Mutex<HashMap<TableKey, Arc<KernelTable>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Build (or fetch from the process-wide cache) the kernel table for a
/// grid/spec pair. Tables are immutable once built.
pub fn kernel_table(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> Arc<KernelTable> {
    let key = (grid.cache_key(), spec.cache_key(grid.d_v));
    let mut cache = TABLE_CACHE.lock().unwrap();
    if let Some(t) = cache.get(&key) {
        return t.clone();
    }
    let t = Arc::new(build_kernel_table(spec, grid));
    cache.insert(key, t.clone());
    t
}
