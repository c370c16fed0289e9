//! Numerical verification of the kernel and bilinear-form bounds.
//!
//! The theory's constants are existential, so each check *fits* a constant on
//! half of a deterministic random sample and reports how the other half (or a
//! stated tolerance) holds up. A `max_violation_ratio` at or below 1 means
//! the fitted bound survived out-of-sample; the suite records values, it
//! never aborts a run.

use super::kernel::{grad_kernel_k, kernel_table, weighted_kernel_integral};
use super::{gamma_nonlinear, nu_lattice, q_gain, q_loss, CollisionKernelSpec, VSlice};
use crate::geom::{norm, norm_sq, V3};
use crate::phase_space::PhaseGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub fitted_constant: f64,
    pub sample_size: usize,
    /// value / allowance; ≤ 1 means the check held.
    pub max_violation_ratio: f64,
}

fn rand_v(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> V3 {
    let mut v = [0.0; 3];
    for c in v.iter_mut().take(d) {
        *c = rng.gen_range(-scale..scale);
    }
    v
}

/// k(v,u) = k(u,v) over random pairs; allowance 1e−10.
pub fn kernel_symmetry_check(
    spec: &CollisionKernelSpec,
    d_v: usize,
    n_pairs: usize,
    seed: u64,
) -> BoundCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let v = rand_v(&mut rng, d_v, 4.0);
        let u = rand_v(&mut rng, d_v, 4.0);
        let a = grad_kernel_k(spec, &v, &u, d_v);
        let b = grad_kernel_k(spec, &u, &v, d_v);
        worst = worst.max((a - b).abs());
    }
    BoundCheck {
        name: "kernel_symmetry".into(),
        fitted_constant: worst,
        sample_size: n_pairs,
        max_violation_ratio: worst / 1e-10,
    }
}

/// |k(v,u)| ≤ C {r + r⁻¹} e^{−r²/8} e^{−(|v|²−|u|²)²/(8r²)}: fit C on the
/// first half, report the second half against the fit.
pub fn grad_bound_check(
    spec: &CollisionKernelSpec,
    d_v: usize,
    n_pairs: usize,
    seed: u64,
) -> BoundCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = |v: &V3, u: &V3| -> f64 {
        let r = norm(&crate::geom::sub(u, v, d_v), d_v).max(spec.eps_reg);
        let q = norm_sq(v, d_v) - norm_sq(u, d_v);
        (r + 1.0 / r) * (-r * r / 8.0).exp() * (-q * q / (8.0 * r * r)).exp()
    };
    let mut ratios = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let v = rand_v(&mut rng, d_v, 4.0);
        let u = rand_v(&mut rng, d_v, 4.0);
        let k = grad_kernel_k(spec, &v, &u, d_v).abs();
        ratios.push(k / shape(&v, &u));
    }
    let half = n_pairs / 2;
    let c_fit = ratios[..half].iter().cloned().fold(0.0f64, f64::max);
    let worst_out = ratios[half..].iter().cloned().fold(0.0f64, f64::max);
    BoundCheck {
        name: "grad_kernel_bound".into(),
        fitted_constant: c_fit,
        sample_size: n_pairs,
        max_violation_ratio: worst_out / c_fit,
    }
}

/// Weighted kernel integral ∫|k(v,u)|·ratio du ≤ C (1+|v|)^{−1}: reports
/// C = max (1+|v|)·integral over the ladder and checks the {0,2,4} ladder is
/// non-increasing within 10%.
pub fn weighted_kernel_ladder(
    spec: &CollisionKernelSpec,
    d_v: usize,
    alpha: f64,
    theta: f64,
) -> BoundCheck {
    let ladder = [0.0, 1.0, 2.0, 3.0, 4.0];
    let mut g = Vec::new();
    for &s in &ladder {
        let v = {
            let mut v = [0.0; 3];
            v[0] = s;
            v
        };
        let integral = weighted_kernel_integral(spec, d_v, &v, alpha, theta);
        g.push((1.0 + s) * integral);
    }
    let c_fit = g.iter().cloned().fold(0.0f64, f64::max);
    // non-increasing within 10% along {0, 2, 4}
    let checks = [(0usize, 2usize), (2, 4)];
    let mut viol = 0.0f64;
    for (a, b) in checks {
        viol = viol.max(g[b] / (1.1 * g[a]));
    }
    BoundCheck {
        name: format!("weighted_kernel_integral_a{alpha}_t{theta}"),
        fitted_constant: c_fit,
        sample_size: ladder.len(),
        max_violation_ratio: viol,
    }
}

/// Random perturbation slice: polynomial times an off-center Gaussian.
pub fn random_slice(grid: &PhaseGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = grid.d_v;
    let center = rand_v(rng, d, 1.5);
    let sigma: f64 = rng.gen_range(0.6..1.6);
    let c0: f64 = rng.gen_range(-1.0..1.0);
    let c1 = rand_v(rng, d, 1.0);
    let c2: f64 = rng.gen_range(-0.5..0.5);
    grid.v_nodes()
        .iter()
        .map(|v| {
            let mut lin = c0;
            for a in 0..d {
                lin += c1[a] * v[a];
            }
            let r2 = crate::geom::norm_sq(&crate::geom::sub(v, &center, d), d);
            (lin + c2 * r2) * (-r2 / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// (1+|v|)^α Γ₊(f,f)(v) ≤ C ‖(1+|·|)^α f‖_∞ (∫(1+|u|)⁴f²du)^{1/2} / (1+|v|),
/// α = 4, over random slices.
pub fn gamma_plus_bound_check(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    n_slices: usize,
    seed: u64,
) -> BoundCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 4.0;
    let d = grid.d_v;
    let mut ratios = Vec::new();
    for _ in 0..n_slices {
        let f = random_slice(grid, &mut rng);
        let slice = VSlice::plain(&f);
        let weighted_sup = grid
            .v_nodes()
            .iter()
            .zip(&f)
            .map(|(v, fv)| (1.0 + norm(v, d)).powf(alpha) * fv.abs())
            .fold(0.0f64, f64::max);
        let l2_mom: f64 = grid
            .v_nodes()
            .iter()
            .zip(grid.v_weights().iter().zip(&f))
            .map(|(u, (w, fu))| w * (1.0 + norm(u, d)).powi(4) * fu * fu)
            .sum::<f64>()
            .sqrt();
        if weighted_sup * l2_mom == 0.0 {
            continue;
        }
        for vl in (0..grid.n_v_cells()).step_by(grid.n_v_cells() / 24 + 1) {
            let v = grid.v_coord(vl);
            let (gain, _) = gamma_nonlinear(spec, grid, &slice, &slice, &v).unwrap();
            let vfac = 1.0 + norm(&v, d);
            let lhs = vfac.powf(alpha) * gain.abs();
            let rhs = weighted_sup * l2_mom / vfac;
            ratios.push(lhs / rhs);
        }
    }
    let half = ratios.len() / 2;
    let c_fit = ratios[..half].iter().cloned().fold(0.0f64, f64::max);
    let worst_out = ratios[half..].iter().cloned().fold(0.0f64, f64::max);
    BoundCheck {
        name: "gamma_plus_pointwise_bound".into(),
        fitted_constant: c_fit,
        sample_size: ratios.len(),
        max_violation_ratio: worst_out / c_fit.max(1e-300),
    }
}

/// ‖Γ(f,f)‖_{L²_v} ≤ C ‖f‖_{L²_v} ‖ν f‖_{L²_v} over random slices; the
/// violation ratio compares the late-sample max against twice the overall
/// max seen in the first half (stability of the fit).
pub fn l2_bilinear_bound_check(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    n_slices: usize,
    seed: u64,
) -> BoundCheck {
    assert!(n_slices >= 10, "need at least 10 samples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = nu_lattice(spec, grid);
    let w = grid.v_weights();
    let mut ratios = Vec::new();
    for _ in 0..n_slices {
        let f = random_slice(grid, &mut rng);
        let slice = VSlice::plain(&f);
        let norm_f: f64 = f
            .iter()
            .zip(w)
            .map(|(f, w)| w * f * f)
            .sum::<f64>()
            .sqrt();
        let norm_nuf: f64 = f
            .iter()
            .zip(nu.iter().zip(w))
            .map(|(f, (n, w))| w * (n * f) * (n * f))
            .sum::<f64>()
            .sqrt();
        if norm_f * norm_nuf == 0.0 {
            continue; // 0/0 guarded
        }
        let mut gamma_sq = 0.0;
        for vl in 0..grid.n_v_cells() {
            let v = grid.v_coord(vl);
            let (gain, loss) = gamma_nonlinear(spec, grid, &slice, &slice, &v).unwrap();
            let g = gain - loss;
            gamma_sq += w[vl] * g * g;
        }
        ratios.push(gamma_sq.sqrt() / (norm_f * norm_nuf));
    }
    let overall = ratios.iter().cloned().fold(0.0f64, f64::max);
    let late = ratios[ratios.len() / 2..]
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    BoundCheck {
        name: "l2_bilinear_bound".into(),
        fitted_constant: overall,
        sample_size: ratios.len(),
        max_violation_ratio: late / (2.0 * overall.max(1e-300)),
    }
}

/// max_v |Q(μ,μ)(v)| over the lattice against 1e−3·max νμ (production
/// factored interpolation; exactly zero up to roundoff by construction).
pub fn equilibrium_invariance_check(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> BoundCheck {
    let mu = grid.mu_lattice().to_vec();
    let nu = nu_lattice(spec, grid);
    let s = VSlice::density(&mu, 1.0);
    let numax = nu
        .iter()
        .zip(&mu)
        .map(|(n, m)| n * m)
        .fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for vl in 0..grid.n_v_cells() {
        let v = grid.v_coord(vl);
        let gain = q_gain(spec, grid, &s, &s, &v).unwrap();
        let loss = q_loss(spec, grid, &s, &s, &v).unwrap();
        worst = worst.max((gain - loss).abs());
    }
    BoundCheck {
        name: "equilibrium_invariance".into(),
        fitted_constant: worst / numax,
        sample_size: grid.n_v_cells(),
        max_violation_ratio: worst / (1e-3 * numax),
    }
}

/// Corrected-table identity residual ‖K√μ − ν√μ‖ against 1e−3·max ν√μ, plus
/// the raw (uncorrected) defect as the fitted constant context.
pub fn k_identity_check(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> (BoundCheck, BoundCheck) {
    let table = kernel_table(spec, grid);
    let smu = grid.sqrt_mu_lattice();
    let mut out = vec![0.0; grid.n_v_cells()];
    table.apply(grid, smu, &mut out);
    let scale = table
        .nu
        .iter()
        .zip(smu)
        .map(|(n, s)| (n * s).abs())
        .fold(0.0f64, f64::max);
    let worst = out
        .iter()
        .zip(table.nu.iter().zip(smu))
        .map(|(o, (n, s))| (o - n * s).abs())
        .fold(0.0f64, f64::max);
    let corrected = BoundCheck {
        name: "k_identity_corrected".into(),
        fitted_constant: worst / scale,
        sample_size: grid.n_v_cells(),
        max_violation_ratio: worst / (1e-3 * scale),
    };
    let raw = BoundCheck {
        name: "k_identity_raw_defect".into(),
        fitted_constant: table.defect_before[0] / scale,
        sample_size: grid.n_v_cells(),
        max_violation_ratio: 0.0,
    };
    (corrected, raw)
}

/// The full verification suite in a fixed, deterministic order.
pub fn verify_suite(
    spec: &CollisionKernelSpec,
    grid: &PhaseGrid,
    kernel_pairs: usize,
    slices: usize,
    seed: u64,
) -> Vec<BoundCheck> {
    let mut rows = Vec::new();
    // kernel-level rows live in the estimate's native three velocity
    // dimensions regardless of the run's grid
    rows.push(kernel_symmetry_check(spec, 3, kernel_pairs, seed));
    rows.push(grad_bound_check(spec, 3, kernel_pairs, seed.wrapping_add(1)));
    for (alpha, theta) in [(0.0, 0.0), (4.0, 0.0), (0.0, 0.1), (4.0, 0.1)] {
        rows.push(weighted_kernel_ladder(spec, 3, alpha, theta));
    }
    rows.push(gamma_plus_bound_check(spec, grid, slices.min(24), seed.wrapping_add(2)));
    rows.push(l2_bilinear_bound_check(spec, grid, slices, seed.wrapping_add(3)));
    rows.push(equilibrium_invariance_check(spec, grid));
    let (a, b) = k_identity_check(spec, grid);
    rows.push(a);
    rows.push(b);
    rows
}

/// CSV rendering with the fixed column set.
pub fn bounds_to_csv(rows: &[BoundCheck]) -> String {
    let mut out = String::from("bound_name,fitted_constant,sample_size,max_violation_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{},{:?}\n",
            r.name, r.fitted_constant, r.sample_size, r.max_violation_ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> std::sync::Arc<PhaseGrid> {
        PhaseGrid::new(1, 2, 4, 12, 6.0, 1e-6).unwrap()
    }

    #[test]
    fn symmetry_check_passes() {
        let spec = CollisionKernelSpec::default();
        let row = kernel_symmetry_check(&spec, 2, 400, 7);
        assert!(row.max_violation_ratio <= 1.0, "{row:?}");
    }

    #[test]
    fn grad_bound_fit_is_stable() {
        let spec = CollisionKernelSpec::default();
        let row = grad_bound_check(&spec, 2, 600, 11);
        assert!(row.fitted_constant.is_finite() && row.fitted_constant > 0.0);
        assert!(row.max_violation_ratio <= 1.5, "{row:?}");
    }

    #[test]
    fn weighted_ladder_non_increasing() {
        let spec = CollisionKernelSpec::default();
        for (alpha, theta) in [(0.0, 0.0), (4.0, 0.1)] {
            let row = weighted_kernel_ladder(&spec, 3, alpha, theta);
            assert!(
                row.max_violation_ratio <= 1.0,
                "alpha {alpha} theta {theta}: {row:?}"
            );
        }
    }

    #[test]
    fn l2_bilinear_reproducible_and_stable() {
        let spec = CollisionKernelSpec {
            n_angle: 8,
            ..Default::default()
        };
        let grid = small_grid();
        let a = l2_bilinear_bound_check(&spec, &grid, 12, 99);
        let b = l2_bilinear_bound_check(&spec, &grid, 12, 99);
        assert_eq!(a, b, "fixed seed must reproduce");
        assert!(a.fitted_constant.is_finite());
        assert!(a.max_violation_ratio <= 1.0);
    }

    #[test]
    fn equilibrium_invariance_is_tiny_in_factored_mode() {
        let spec = CollisionKernelSpec {
            n_angle: 8,
            ..Default::default()
        };
        let grid = small_grid();
        let row = equilibrium_invariance_check(&spec, &grid);
        assert!(row.max_violation_ratio <= 1.0, "{row:?}");
    }
}
