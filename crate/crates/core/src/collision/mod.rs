//! Cutoff hard-potential collision machinery.
//!
//! The kernel is B(v−u, ω) = |v−u|^γ b(θ) with 0 ≤ γ ≤ 1 and an angular
//! factor 0 ≤ b(θ) ≤ C·|cos θ|. Velocity integrals run on the phase grid's
//! trapezoid lattice; the sphere integral uses a product rule (two-panel
//! Gauss–Legendre in cos θ × uniform azimuth) in three dimensions and
//! uniform nodes on the circle in two.
//!
//! Post-collision velocities fall off-lattice and are read through
//! Maxwellian-factored multilinear interpolation: a slice is stored as its
//! ratio against μ^θ (θ = 1 for densities, θ = ½ for √μ-weighted
//! perturbations) and the Maxwellian factors recombine analytically through
//! the collision invariant μ(u′)μ(v′) = μ(u)μ(v). This keeps the sampled
//! equilibrium an exact zero of the discrete collision operator. A plain
//! (unfactored) mode is kept for quadrature-convergence studies.

pub mod kernel;
pub mod sweep;
pub mod verify;

use crate::error::{CoreError, Result};
use crate::geom::{dot, norm, plane_frame, sub, V3};
use crate::phase_space::{maxwellian_mu, PhaseGrid};
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::Mutex;

/// Angular factor b(θ) = c·|cos θ|^p, which satisfies the cutoff bound
/// 0 ≤ b ≤ c·|cos θ| for every integer p ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularCutoff {
    pub c: f64,
    pub power: i32,
}

impl Default for AngularCutoff {
    fn default() -> Self {
        Self { c: 1.0, power: 1 }
    }
}

impl AngularCutoff {
    #[inline]
    pub fn eval_cos(&self, cos_theta: f64) -> f64 {
        self.c * cos_theta.abs().powi(self.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionKernelSpec {
    /// Relative-velocity exponent, hard potentials: 0 ≤ γ ≤ 1.
    pub gamma: f64,
    pub b_form: AngularCutoff,
    /// Nodes per sphere-quadrature factor (circle nodes when d_v = 2).
    pub n_angle: usize,
    /// Floor for |v−u| in the kernel's singular factors.
    pub eps_reg: f64,
    /// Resolution of the kernel-reduction quadrature.
    pub n_kernel: usize,
}

impl Default for CollisionKernelSpec {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            b_form: AngularCutoff::default(),
            n_angle: 16,
            eps_reg: 1e-6,
            n_kernel: 32,
        }
    }
}

impl CollisionKernelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("kernel.gamma = {} outside the hard-potential range [0, 1]", self.gamma));
        }
        if self.b_form.c <= 0.0 || !self.b_form.c.is_finite() {
            errs.push(format!("kernel.b_scale = {} must be positive", self.b_form.c));
        }
        if self.b_form.power < 1 {
            errs.push(format!(
                "kernel.b_power = {} must be >= 1 to satisfy the angular cutoff",
                self.b_form.power
            ));
        }
        if self.n_angle < 4 || self.n_angle % 2 != 0 {
            errs.push(format!("kernel.n_angle = {} must be even and >= 4", self.n_angle));
        }
        if !(self.eps_reg > 0.0) {
            errs.push(format!("kernel.eps_reg = {} must be positive", self.eps_reg));
        }
        if self.n_kernel < 8 {
            errs.push(format!("kernel.n_kernel = {} must be >= 8", self.n_kernel));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CoreError::ConfigErrors(errs))
        }
    }

    pub(crate) fn cache_key(&self, d_v: usize) -> (u64, u64, i32, usize, u64, usize, usize) {
        (
            self.gamma.to_bits(),
            self.b_form.c.to_bits(),
            self.b_form.power,
            self.n_angle,
            self.eps_reg.to_bits(),
            self.n_kernel,
            d_v,
        )
    }
}

/// Scattering directions relative to the collision axis: node k carries
/// (cos θ_k, sin θ_k, azimuth components, weight·b(θ_k)).
#[derive(Debug, Clone)]
pub struct AngularGrid {
    pub d_v: usize,
    /// (cos θ, sin θ·cos φ, sin θ·sin φ, w·b(θ)) per node.
    pub nodes: Vec<(f64, f64, f64, f64)>,
    /// Σ w·b over the sphere; the loss side's direction-independent factor.
    pub c_ang: f64,
}

impl AngularGrid {
    pub fn build(spec: &CollisionKernelSpec, d_v: usize) -> Self {
        let mut nodes = Vec::new();
        if d_v == 2 {
            // uniform midpoint nodes on the circle
            let n = spec.n_angle;
            let w = TAU / n as f64;
            for j in 0..n {
                let th = (j as f64 + 0.5) * TAU / n as f64;
                nodes.push((th.cos(), th.sin(), 0.0, w * spec.b_form.eval_cos(th.cos())));
            }
        } else {
            // two-panel Gauss-Legendre in cos θ (exact for |c|^p) × uniform azimuth
            let (gx, gw) = gauss_legendre(spec.n_angle);
            let nphi = spec.n_angle;
            let wphi = TAU / nphi as f64;
            for panel in [-1.0f64, 1.0] {
                for (c0, w0) in gx.iter().zip(&gw) {
                    // map [−1,1] to [0,1] then to the panel
                    let c = panel * 0.5 * (c0 + 1.0);
                    let wc = 0.5 * w0;
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    for j in 0..nphi {
                        let ph = (j as f64 + 0.5) * wphi;
                        nodes.push((c, s * ph.cos(), s * ph.sin(), wc * wphi * spec.b_form.eval_cos(c)));
                    }
                }
            }
        }
        let c_ang = nodes.iter().map(|n| n.3).sum();
        Self { d_v, nodes, c_ang }
    }

    /// Realize node `k` as a direction vector given the frame (e, p, q).
    #[inline]
    pub fn direction(&self, k: usize, e: &V3, p: &V3, q: &V3) -> V3 {
        let (c, sc, ss, _) = self.nodes[k];
        let mut w = [0.0; 3];
        for i in 0..self.d_v {
            w[i] = c * e[i] + sc * p[i] + ss * q[i];
        }
        w
    }
}

/// Gauss–Legendre nodes/weights on [−1, 1], cached per order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: Lazy<Mutex<std::collections::HashMap<usize, (Vec<f64>, Vec<f64>)>>> =
        Lazy::new(|| Mutex::new(std::collections::HashMap::new()));
    let mut cache = CACHE.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            // Newton on Legendre P_n, standard initial guesses.
            let mut xs = vec![0.0; n];
            let mut ws = vec![0.0; n];
            for i in 0..n {
                let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                for _ in 0..100 {
                    let (p, dp) = legendre_pd(n, x);
                    let dx = p / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        break;
                    }
                }
                let (_, dp) = legendre_pd(n, x);
                xs[n - 1 - i] = x;
                ws[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
            }
            (xs, ws)
        })
        .clone()
}

fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Elastic exchange along ω: v′ = v + [(u−v)·ω]ω, u′ = u − [(u−v)·ω]ω.
pub fn post_collision(v: &V3, u: &V3, omega: &V3, d_v: usize) -> Result<(V3, V3)> {
    let n = norm(omega, d_v);
    if (n - 1.0).abs() > 1e-12 {
        return Err(CoreError::NonUnitOmega { norm: n });
    }
    let rel = sub(u, v, d_v);
    let t = dot(&rel, omega, d_v);
    let mut vp = *v;
    let mut up = *u;
    for i in 0..d_v {
        vp[i] = v[i] + t * omega[i];
        up[i] = u[i] - t * omega[i];
    }
    Ok((vp, up))
}

/// ν(v) = ∫∫ |v−u|^γ μ(u) b(θ) dω du on the grid's trapezoid lattice.
/// The angular sum is direction-independent, so this factorizes exactly as
/// c_ang · Σ_u w_u |v−u|^γ μ(u).
pub fn collision_frequency_nu(spec: &CollisionKernelSpec, grid: &PhaseGrid, v: &V3) -> f64 {
    let ang = AngularGrid::build(spec, grid.d_v);
    nu_with_cang(spec, grid, v, ang.c_ang)
}

pub(crate) fn nu_with_cang(spec: &CollisionKernelSpec, grid: &PhaseGrid, v: &V3, c_ang: f64) -> f64 {
    let mut s = 0.0;
    for (node, (w, mu)) in grid
        .v_nodes()
        .iter()
        .zip(grid.v_weights().iter().zip(grid.mu_lattice()))
    {
        let r = norm(&sub(node, v, grid.d_v), grid.d_v);
        s += w * r.powf(spec.gamma) * mu;
    }
    c_ang * s
}

/// ν evaluated on every lattice node.
pub fn nu_lattice(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> Vec<f64> {
    let ang = AngularGrid::build(spec, grid.d_v);
    grid.v_nodes()
        .iter()
        .map(|v| nu_with_cang(spec, grid, v, ang.c_ang))
        .collect()
}

/// How a velocity slice is factored for off-lattice interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SliceFactor {
    /// Interpolate raw values (quadrature-study mode).
    Plain,
    /// Values = μ(v)·ratio; densities. `ext` is the ratio outside the box
    /// (e^{−Φ(x)} reproduces the local Maxwellian).
    Maxwellian,
    /// Values = √μ(v)·ratio; √μ-weighted perturbations. Ratio extends by 0.
    SqrtMaxwellian,
}

/// A function on the velocity lattice together with its interpolation rule.
#[derive(Debug, Clone, Copy)]
pub struct VSlice<'a> {
    pub values: &'a [f64],
    pub factor: SliceFactor,
    /// Ratio value outside the box (ignored for `Plain`, which extends by 0).
    pub ext: f64,
}

impl<'a> VSlice<'a> {
    pub fn plain(values: &'a [f64]) -> Self {
        Self {
            values,
            factor: SliceFactor::Plain,
            ext: 0.0,
        }
    }

    /// Density slice; `ext` is the Maxwellian prefactor outside the box.
    pub fn density(values: &'a [f64], ext: f64) -> Self {
        Self {
            factor: SliceFactor::Maxwellian,
            values,
            ext,
        }
    }

    pub fn sqrt_mu_weighted(values: &'a [f64]) -> Self {
        Self {
            factor: SliceFactor::SqrtMaxwellian,
            values,
            ext: 0.0,
        }
    }

    fn theta(&self) -> f64 {
        match self.factor {
            SliceFactor::Plain => 0.0,
            SliceFactor::Maxwellian => 1.0,
            SliceFactor::SqrtMaxwellian => 0.5,
        }
    }

    /// Ratio field values[i]/μ^θ(v_i) on the lattice.
    fn ratio_field(&self, grid: &PhaseGrid) -> Vec<f64> {
        match self.factor {
            SliceFactor::Plain => self.values.to_vec(),
            SliceFactor::Maxwellian => self
                .values
                .iter()
                .zip(grid.mu_lattice())
                .map(|(v, m)| v / m)
                .collect(),
            SliceFactor::SqrtMaxwellian => self
                .values
                .iter()
                .zip(grid.sqrt_mu_lattice())
                .map(|(v, m)| v / m)
                .collect(),
        }
    }
}

/// Multilinear interpolation of a velocity-lattice array with ghost cells
/// holding `ext` outside the box, so the extension blends continuously over
/// one cell (identical to the padded-array semantics of the lattice sweep).
pub(crate) fn interp_v(grid: &PhaseGrid, values: &[f64], ext: f64, p: &V3) -> f64 {
    let d = grid.d_v;
    let dv = grid.dv();
    for a in 0..d {
        if p[a].abs() > grid.v_max + dv {
            return ext;
        }
    }
    let nv = grid.nv;
    let vs = grid.v_axis();
    let mut j0 = [0isize; 3];
    let mut fr = [0.0f64; 3];
    for a in 0..d {
        let t = (p[a] + grid.v_max) / dv;
        let tf = t.floor();
        let j = tf as isize;
        j0[a] = j;
        fr[a] = if j >= 0 && (j as usize) <= nv - 2 {
            let ju = j as usize;
            (p[a] - vs[ju]) / (vs[ju + 1] - vs[ju])
        } else {
            t - tf
        };
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut lin = 0isize;
        let mut inside = true;
        for a in 0..d {
            let hi = ((corner >> a) & 1) as isize;
            w *= if hi == 1 { fr[a] } else { 1.0 - fr[a] };
            let j = j0[a] + hi;
            if j < 0 || j >= nv as isize {
                inside = false;
            }
            lin = lin * nv as isize + j;
        }
        let val = if inside { values[lin as usize] } else { ext };
        acc += w * val;
    }
    acc
}

/// Evaluate one slice at an off-lattice velocity through its factoring.
pub(crate) fn eval_slice(grid: &PhaseGrid, slice: &VSlice, ratio: &[f64], p: &V3) -> f64 {
    let r = interp_v(grid, ratio, if slice.factor == SliceFactor::Plain { 0.0 } else { slice.ext }, p);
    match slice.factor {
        SliceFactor::Plain => r,
        SliceFactor::Maxwellian => maxwellian_mu(p, grid.d_v) * r,
        SliceFactor::SqrtMaxwellian => maxwellian_mu(p, grid.d_v).sqrt() * r,
    }
}

fn check_slices(grid: &PhaseGrid, slices: &[&VSlice]) -> Result<()> {
    for s in slices {
        if s.values.len() != grid.n_v_cells() {
            return Err(CoreError::SliceLength {
                got: s.values.len(),
                expect: grid.n_v_cells(),
            });
        }
    }
    Ok(())
}

/// Gain part Q₊(F₁,F₂)(v) = ΣΣ w·B(v−u,ω)·F₁(u′)·F₂(v′).
pub fn q_gain(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    f1: &VSlice,
    f2: &VSlice,
    v: &V3,
) -> Result<f64> {
    check_slices(grid, &[f1, f2])?;
    let ang = AngularGrid::build(spec, grid.d_v);
    let folded = ang.folded();
    let r1 = f1.ratio_field(grid);
    let r2 = f2.ratio_field(grid);
    let d = grid.d_v;
    let same_theta = f1.theta() == f2.theta() && f1.factor != SliceFactor::Plain;
    let mut acc = 0.0;
    for (u, (wu, _mu_u)) in grid
        .v_nodes()
        .iter()
        .zip(grid.v_weights().iter().zip(grid.mu_lattice()))
    {
        let xi = sub(u, v, d);
        let r = norm(&xi, d);
        let bbase = if r == 0.0 && spec.gamma == 0.0 {
            1.0
        } else {
            r.powf(spec.gamma)
        };
        if bbase == 0.0 {
            continue;
        }
        let e = if r > 0.0 {
            let mut e = xi;
            for c in e.iter_mut().take(d) {
                *c /= r;
            }
            e
        } else {
            let mut e = [0.0; 3];
            e[0] = 1.0;
            e
        };
        let (e, p, q) = plane_frame(&e, d);
        let mut ang_acc = 0.0;
        for &(c, sc, ss, wb) in &folded {
            if wb == 0.0 {
                continue;
            }
            let mut om = [0.0; 3];
            for i in 0..d {
                om[i] = c * e[i] + sc * p[i] + ss * q[i];
            }
            let t = dot(&xi, &om, d);
            let mut vp = *v;
            let mut up = *u;
            for i in 0..d {
                vp[i] += t * om[i];
                up[i] -= t * om[i];
            }
            let prod = if same_theta {
                // μ^θ(u′)μ^θ(v′) = μ^θ(u)μ^θ(v) exactly; interpolate ratios only
                let iu = interp_v(grid, &r1, f1.ext, &up);
                let iv = interp_v(grid, &r2, f2.ext, &vp);
                iu * iv
            } else {
                eval_slice(grid, f1, &r1, &up) * eval_slice(grid, f2, &r2, &vp)
            };
            ang_acc += wb * prod;
        }
        let factor = if same_theta {
            let th = f1.theta();
            let muu = maxwellian_mu(u, d);
            let muv = maxwellian_mu(v, d);
            (muu * muv).powf(th)
        } else {
            1.0
        };
        acc += wu * bbase * factor * ang_acc;
    }
    Ok(acc)
}

/// Loss part Q₋(F₁,F₂)(v) = F₂(v) · ΣΣ w·B·F₁(u); the angular factor is
/// direction-independent and factors out exactly.
pub fn q_loss(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    f1: &VSlice,
    f2: &VSlice,
    v: &V3,
) -> Result<f64> {
    check_slices(grid, &[f1, f2])?;
    let ang = AngularGrid::build(spec, grid.d_v);
    let d = grid.d_v;
    let mut s = 0.0;
    for (u, (wu, f1u)) in grid
        .v_nodes()
        .iter()
        .zip(grid.v_weights().iter().zip(f1.values))
    {
        let r = norm(&sub(u, v, d), d);
        let bbase = if r == 0.0 && spec.gamma == 0.0 {
            1.0
        } else {
            r.powf(spec.gamma)
        };
        s += wu * bbase * f1u;
    }
    let r2 = f2.ratio_field(grid);
    let f2v = eval_slice(grid, f2, &r2, v);
    Ok(ang.c_ang * s * f2v)
}

/// Γ(f₁,f₂) = μ^{−1/2} Q(√μ f₁, √μ f₂), returned as (gain, loss).
///
/// Slices hold plain perturbation values f; the √μ weights and the μ^{−1/2}
/// prefactor recombine analytically.
pub fn gamma_nonlinear(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    f1: &VSlice,
    f2: &VSlice,
    v: &V3,
) -> Result<(f64, f64)> {
    check_slices(grid, &[f1, f2])?;
    let ang = AngularGrid::build(spec, grid.d_v);
    let folded = ang.folded();
    let d = grid.d_v;
    // gain: Σ_u w √μ(u) |ξ|^γ Σ_ω w b I[f₁](u′) I[f₂](v′)
    let mut gain = 0.0;
    for (u, (wu, sq_mu_u)) in grid
        .v_nodes()
        .iter()
        .zip(grid.v_weights().iter().zip(grid.sqrt_mu_lattice()))
    {
        let xi = sub(u, v, d);
        let r = norm(&xi, d);
        let bbase = if r == 0.0 && spec.gamma == 0.0 {
            1.0
        } else {
            r.powf(spec.gamma)
        };
        if bbase == 0.0 {
            continue;
        }
        let e = if r > 0.0 {
            let mut e = xi;
            for c in e.iter_mut().take(d) {
                *c /= r;
            }
            e
        } else {
            let mut e = [0.0; 3];
            e[0] = 1.0;
            e
        };
        let (e, p, q) = plane_frame(&e, d);
        let mut ang_acc = 0.0;
        for &(c, sc, ss, wb) in &folded {
            let mut om = [0.0; 3];
            for i in 0..d {
                om[i] = c * e[i] + sc * p[i] + ss * q[i];
            }
            let t = dot(&xi, &om, d);
            let mut vp = *v;
            let mut up = *u;
            for i in 0..d {
                vp[i] += t * om[i];
                up[i] -= t * om[i];
            }
            let iu = interp_v(grid, f1.values, 0.0, &up);
            let iv = interp_v(grid, f2.values, 0.0, &vp);
            ang_acc += wb * iu * iv;
        }
        gain += wu * bbase * sq_mu_u * ang_acc;
    }
    // loss: f₂(v) · c_ang · Σ_u w |ξ|^γ √μ(u) f₁(u)
    let mut ls = 0.0;
    for (u, (wu, (sq_mu_u, f1u))) in grid.v_nodes().iter().zip(
        grid.v_weights()
            .iter()
            .zip(grid.sqrt_mu_lattice().iter().zip(f1.values)),
    ) {
        let r = norm(&sub(u, v, d), d);
        let bbase = if r == 0.0 && spec.gamma == 0.0 {
            1.0
        } else {
            r.powf(spec.gamma)
        };
        ls += wu * bbase * sq_mu_u * f1u;
    }
    let f2v = interp_v(grid, f2.values, 0.0, v);
    Ok((gain, ang.c_ang * ls * f2v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::PhaseGrid;

    fn grid() -> std::sync::Arc<PhaseGrid> {
        PhaseGrid::new(1, 2, 4, 16, 6.0, 1e-7).unwrap()
    }

    #[test]
    fn angular_sum_matches_closed_form() {
        let spec = CollisionKernelSpec::default();
        // ∫ |cos θ| over the circle = 4; over the sphere = 2π
        let a2 = AngularGrid::build(&spec, 2);
        assert!((a2.c_ang - 4.0).abs() < 0.03, "circle: {}", a2.c_ang);
        let a3 = AngularGrid::build(&spec, 3);
        assert!((a3.c_ang - TAU).abs() < 1e-12, "sphere: {}", a3.c_ang);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-13);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn post_collision_examples() {
        // head-on exchange
        let (vp, up) = post_collision(&[0.0; 3], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(vp, [1.0, 0.0, 0.0]);
        assert_eq!(up, [0.0, 0.0, 0.0]);
        // grazing: ω ⊥ (u−v)
        let (vp, up) = post_collision(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 3).unwrap();
        assert_eq!(vp, [0.0; 3]);
        assert_eq!(up, [1.0, 0.0, 0.0]);
        // non-unit ω rejected
        assert!(post_collision(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.9, 0.0, 0.0], 3).is_err());
    }

    #[test]
    fn post_collision_conserves_momentum_and_energy() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..50 {
            let v = [rnd(), rnd(), rnd()];
            let u = [rnd(), rnd(), rnd()];
            let mut om = [rnd(), rnd(), rnd()];
            let n = norm(&om, 3);
            for c in om.iter_mut() {
                *c /= n;
            }
            let (vp, up) = post_collision(&v, &u, &om, 3).unwrap();
            for i in 0..3 {
                assert!((vp[i] + up[i] - v[i] - u[i]).abs() < 1e-12);
            }
            let e0 = norm_sq_t(&v) + norm_sq_t(&u);
            let e1 = norm_sq_t(&vp) + norm_sq_t(&up);
            assert!((e0 - e1).abs() < 1e-12);
        }
    }

    fn norm_sq_t(v: &V3) -> f64 {
        v.iter().map(|c| c * c).sum()
    }

    #[test]
    fn nu_constant_for_gamma_zero() {
        let g = grid();
        let spec = CollisionKernelSpec {
            gamma: 0.0,
            ..Default::default()
        };
        let ang = AngularGrid::build(&spec, g.d_v);
        // equals (sphere integral of b) × (box quadrature of μ)
        let box_mu: f64 = g
            .v_weights()
            .iter()
            .zip(g.mu_lattice())
            .map(|(w, m)| w * m)
            .sum();
        let mut worst: f64 = 0.0;
        for v in [[0.0; 3], [1.3, -2.0, 0.0], [5.5, 0.25, 0.0]] {
            let nu = collision_frequency_nu(&spec, &g, &v);
            worst = worst.max((nu - ang.c_ang * box_mu).abs());
        }
        assert!(worst < 1e-12, "spread {worst}");
    }

    #[test]
    fn nu_gamma_one_linear_growth_band() {
        let g = PhaseGrid::new(1, 2, 4, 32, 6.0, 1e-7).unwrap();
        let spec = CollisionKernelSpec::default();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..=12 {
            let s = k as f64 * 0.25; // |v| in [0, 3]
            let v = [s, 0.0, 0.0];
            let ratio = collision_frequency_nu(&spec, &g, &v) / (1.0 + s);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        assert!(hi / lo < 4.0, "c2/c1 = {}", hi / lo);
    }

    #[test]
    fn nu_refined_quadrature_oracle() {
        // γ = 1 at v = 0: fine lattice within 1e−4 relative needs a fine base
        // grid; the |v−u| kink limits the coarse rule.
        let spec = CollisionKernelSpec::default();
        let coarse = PhaseGrid::new(1, 2, 4, 64, 6.0, 1e-7).unwrap();
        let fine = PhaseGrid::new(1, 2, 4, 253, 6.0, 1e-7).unwrap();
        let v = [0.0; 3];
        let a = collision_frequency_nu(&spec, &coarse, &v);
        let b = collision_frequency_nu(&spec, &fine, &v);
        assert!(
            (a - b).abs() <= 1e-4 * b.abs(),
            "coarse {a} fine {b} rel {}",
            (a - b).abs() / b.abs()
        );
    }

    #[test]
    fn equilibrium_gain_equals_loss_in_factored_mode() {
        let g = grid();
        let spec = CollisionKernelSpec::default();
        let mu: Vec<f64> = g.mu_lattice().to_vec();
        let s1 = VSlice::density(&mu, 1.0);
        let s2 = VSlice::density(&mu, 1.0);
        for v in [[0.26, -0.26, 0.0], [1.8, 0.9, 0.0]] {
            let gain = q_gain(&spec, &g, &s1, &s2, &v).unwrap();
            let loss = q_loss(&spec, &g, &s1, &s2, &v).unwrap();
            assert!(
                (gain - loss).abs() <= 1e-12 * loss.abs().max(1.0),
                "v {v:?}: gain {gain} loss {loss}"
            );
        }
    }

    #[test]
    fn loss_factorizes_through_nu() {
        let g = grid();
        let spec = CollisionKernelSpec::default();
        let mu: Vec<f64> = g.mu_lattice().to_vec();
        let arb: Vec<f64> = (0..g.n_v_cells()).map(|i| (i as f64 * 0.37).sin() + 1.5).collect();
        let s1 = VSlice::density(&mu, 1.0);
        let s2 = VSlice::plain(&arb);
        for vl in [0usize, 37, 101] {
            let v = g.v_coord(vl);
            let loss = q_loss(&spec, &g, &s1, &s2, &v).unwrap();
            let nu = collision_frequency_nu(&spec, &g, &v);
            assert!(
                (loss - nu * arb[vl]).abs() <= 1e-12 * (nu * arb[vl]).abs(),
                "cell {vl}"
            );
        }
    }

    #[test]
    fn gamma_zero_slice_gives_zero() {
        let g = grid();
        let spec = CollisionKernelSpec::default();
        let f: Vec<f64> = (0..g.n_v_cells()).map(|i| (i as f64 * 0.1).cos()).collect();
        let z = vec![0.0; g.n_v_cells()];
        let (gain, loss) =
            gamma_nonlinear(&spec, &g, &VSlice::plain(&f), &VSlice::plain(&z), &[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(gain, 0.0);
    }

    #[test]
    fn gamma_equilibrium_cancels() {
        let g = grid();
        let spec = CollisionKernelSpec::default();
        // f₁ = f₂ = √μ means F = μ on both sides: gain ≈ loss to the
        // quadrature tolerance (√μ is interpolated here, unlike the
        // density-factored equilibrium path which is exact)
        let smu: Vec<f64> = g.sqrt_mu_lattice().to_vec();
        let s = VSlice::plain(&smu);
        let v = [0.8, -1.2, 0.0];
        let (gain, loss) = gamma_nonlinear(&spec, &g, &s, &s, &v).unwrap();
        assert!(
            (gain - loss).abs() <= 0.05 * loss.abs(),
            "gain {gain} loss {loss}"
        );
    }
}
