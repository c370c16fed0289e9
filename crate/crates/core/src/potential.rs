//! The external potential: a finite trigonometric series on the unit torus.
//!
//! Restricting to finite series keeps periodicity and every derivative exact,
//! and makes the C³-norm bound computable by sampling. The field is shifted
//! so that min Φ = 0; shifting changes neither the force nor the dynamics.

use crate::error::{CoreError, Result};
use crate::geom::{wrap_torus, V3};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One Fourier mode: `a·cos(2π k·x) + b·sin(2π k·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [i32; 3],
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct PotentialField {
    modes: Vec<Mode>,
    shift: f64,
    m_norm: f64,
    d: usize,
}

/// Coordinate axes along which the potential has identically zero derivative.
/// Momentum along these axes is conserved by the flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegenerateSubspace {
    /// 0-based spatial axis indices.
    pub indices: Vec<usize>,
    pub n0: usize,
}

/// Default per-axis sample count used for the cached C³-norm and min search.
fn default_samples(kmax: i32) -> usize {
    (2 * kmax as usize + 1).max(16)
}

impl PotentialField {
    /// Build a potential over the first `d` torus axes. With `auto_shift` the
    /// constant offset is adjusted so the sampled minimum is zero.
    pub fn new(modes: Vec<Mode>, d: usize, auto_shift: bool) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(CoreError::InvalidConfig(format!(
                "potential dimension d = {d}, expected 1, 2 or 3"
            )));
        }
        for m in &modes {
            for (i, &ki) in m.k.iter().enumerate() {
                if i >= d && ki != 0 && (m.a != 0.0 || m.b != 0.0) {
                    return Err(CoreError::InvalidConfig(format!(
                        "mode k = {:?} uses axis {} beyond dimension {d}",
                        m.k,
                        i + 1
                    )));
                }
            }
            if !(m.a.is_finite() && m.b.is_finite()) {
                return Err(CoreError::InvalidConfig(
                    "non-finite mode coefficient".into(),
                ));
            }
        }
        let mut phi = Self {
            modes,
            shift: 0.0,
            m_norm: 0.0,
            d,
        };
        if auto_shift {
            phi = phi.normalize_nonnegative();
        }
        phi.m_norm = phi
            .c3_norm_estimate(default_samples(phi.max_mode()))
            .expect("default sampling satisfies its own precondition");
        Ok(phi)
    }

    /// The zero potential (free transport).
    pub fn free(d: usize) -> Self {
        Self::new(Vec::new(), d, false).expect("trivial field is valid")
    }

    /// `c · (1 − cos(2π x₁))`, the standard one-mode well.
    pub fn cosine_well(d: usize, c: f64) -> Self {
        Self::new(
            vec![
                Mode { k: [0, 0, 0], a: c, b: 0.0 },
                Mode { k: [1, 0, 0], a: -c, b: 0.0 },
            ],
            d,
            false,
        )
        .expect("cosine well is valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Cached C³-norm bound `M` (max of |∂^α Φ| over |α| ≤ 3 on a fine grid).
    pub fn m_norm(&self) -> f64 {
        self.m_norm
    }

    fn max_mode(&self) -> i32 {
        self.modes
            .iter()
            .flat_map(|m| m.k.iter().map(|k| k.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Φ(x). The input is wrapped onto the torus first, which makes
    /// `evaluate(x) == evaluate(x + e_i)` exact in floating point.
    pub fn evaluate(&self, x: &V3) -> f64 {
        let xw = wrap_torus(x, self.d);
        let mut s = self.shift;
        for m in &self.modes {
            let th = self.phase(m, &xw);
            s += m.a * th.cos() + m.b * th.sin();
        }
        s
    }

    #[inline]
    fn phase(&self, m: &Mode, xw: &V3) -> f64 {
        let mut kx = 0.0;
        for i in 0..self.d {
            kx += m.k[i] as f64 * xw[i];
        }
        TAU * kx
    }

    /// Analytic ∇Φ(x) (first `d` components).
    pub fn gradient(&self, x: &V3) -> V3 {
        let xw = wrap_torus(x, self.d);
        let mut g = [0.0; 3];
        for m in &self.modes {
            let th = self.phase(m, &xw);
            // d/dx_i [a cos + b sin] = 2π k_i (−a sin + b cos)
            let dcoef = -m.a * th.sin() + m.b * th.cos();
            for i in 0..self.d {
                g[i] += TAU * m.k[i] as f64 * dcoef;
            }
        }
        g
    }

    /// Analytic Hessian of Φ.
    pub fn hessian(&self, x: &V3) -> [[f64; 3]; 3] {
        let xw = wrap_torus(x, self.d);
        let mut h = [[0.0; 3]; 3];
        for m in &self.modes {
            let th = self.phase(m, &xw);
            let ddcoef = -m.a * th.cos() - m.b * th.sin();
            for i in 0..self.d {
                for j in 0..self.d {
                    h[i][j] += TAU * TAU * (m.k[i] * m.k[j]) as f64 * ddcoef;
                }
            }
        }
        h
    }

    /// ∂^α Φ(x) for a multi-index α over the spatial axes.
    pub fn partial(&self, alpha: &[usize; 3], x: &V3) -> f64 {
        let xw = wrap_torus(x, self.d);
        let order: usize = alpha.iter().sum();
        let mut s = if order == 0 { self.shift } else { 0.0 };
        for m in &self.modes {
            let mut factor = 1.0;
            for i in 0..self.d {
                factor *= (TAU * m.k[i] as f64).powi(alpha[i] as i32);
            }
            if factor == 0.0 {
                continue;
            }
            // Each θ-derivative rotates (a, b) → (b, −a).
            let (mut a, mut b) = (m.a, m.b);
            for _ in 0..order {
                let t = a;
                a = b;
                b = -t;
            }
            let th = self.phase(m, &xw);
            s += factor * (a * th.cos() + b * th.sin());
        }
        s
    }

    /// Max of |∂^α Φ| over all |α| ≤ 3 and a per-axis sample grid.
    ///
    /// `samples_per_axis` must be at least `2·max|k| + 1` so that no mode
    /// aliases to zero on the sample grid.
    pub fn c3_norm_estimate(&self, samples_per_axis: usize) -> Result<f64> {
        let need = 2 * self.max_mode() as usize + 1;
        if samples_per_axis < need.max(2) {
            return Err(CoreError::InvalidConfig(format!(
                "samples_per_axis = {samples_per_axis} below the Nyquist bound {need}"
            )));
        }
        let mut worst = 0.0f64;
        for alpha in multi_indices_up_to(self.d, 3) {
            for x in sample_grid(self.d, samples_per_axis) {
                worst = worst.max(self.partial(&alpha, &x).abs());
            }
        }
        Ok(worst)
    }

    /// Axes along which Φ is constant: axis `i` qualifies iff every mode with
    /// `k_i ≠ 0` has zero coefficients.
    pub fn degenerate_directions(&self) -> DegenerateSubspace {
        let mut indices = Vec::new();
        for i in 0..self.d {
            let active = self
                .modes
                .iter()
                .any(|m| m.k[i] != 0 && (m.a != 0.0 || m.b != 0.0));
            if !active {
                indices.push(i);
            }
        }
        let n0 = indices.len();
        DegenerateSubspace { indices, n0 }
    }

    /// Shift the constant so the sampled minimum becomes zero. The minimum is
    /// located by grid search at four times the highest mode resolution and
    /// then polished with one Newton step; the result is an estimate, not a
    /// certified bound.
    pub fn normalize_nonnegative(&self) -> Self {
        let n = (4 * self.max_mode() as usize).max(8);
        let mut best_x = [0.0; 3];
        let mut best = f64::INFINITY;
        for x in sample_grid(self.d, n) {
            let v = self.evaluate(&x);
            if v < best {
                best = v;
                best_x = x;
            }
        }
        // One damped Newton polish on the gradient, kept only if it improves.
        let g = self.gradient(&best_x);
        let h = self.hessian(&best_x);
        if let Some(step) = newton_step(&g, &h, self.d) {
            let mut cand = best_x;
            for i in 0..self.d {
                cand[i] -= step[i];
            }
            let v = self.evaluate(&cand);
            if v < best {
                best = v;
            }
        }
        let mut out = self.clone();
        out.shift = self.shift - best;
        out
    }
}

/// Solve H·s = g for the top `d`×`d` block, rejecting near-singular systems.
fn newton_step(g: &V3, h: &[[f64; 3]; 3], d: usize) -> Option<V3> {
    let det = crate::geom::det_n(h, d);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut s = [0.0; 3];
    match d {
        1 => s[0] = g[0] / h[0][0],
        2 => {
            s[0] = (g[0] * h[1][1] - g[1] * h[0][1]) / det;
            s[1] = (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        }
        3 => {
            // Cramer on the 3×3 block.
            for i in 0..3 {
                let mut m = *h;
                for r in 0..3 {
                    m[r][i] = g[r];
                }
                s[i] = crate::geom::det_n(&m, 3) / det;
            }
        }
        _ => return None,
    }
    Some(s)
}

fn sample_grid(d: usize, n: usize) -> impl Iterator<Item = V3> {
    let total = n.pow(d as u32);
    (0..total).map(move |mut idx| {
        let mut x = [0.0; 3];
        for xi in x.iter_mut().take(d) {
            *xi = (idx % n) as f64 / n as f64;
            idx /= n;
        }
        x
    })
}

fn multi_indices_up_to(d: usize, order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a0 in 0..=order {
        for a1 in 0..=(order - a0) {
            for a2 in 0..=(order - a0 - a1) {
                let alpha = [a0, a1, a2];
                if alpha.iter().skip(d).all(|&x| x == 0) {
                    out.push(alpha);
                }
            }
        }
    }
    out
}
