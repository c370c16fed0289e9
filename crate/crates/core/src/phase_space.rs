//! Discretized phase space and distribution fields.
//!
//! Space is the unit torus sampled at `nx` points per axis (uniform weight
//! 1/nx); velocity is the box [−v_max, v_max]^d_v sampled at `nv` points per
//! axis including the endpoints, integrated by the trapezoid rule. Values are
//! stored x-major, v-minor.

use crate::error::{CoreError, Result};
use crate::geom::V3;
use crate::potential::PotentialField;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// exp(−|v|²/2) for the first `d` components.
#[inline]
pub fn maxwellian_mu(v: &V3, d: usize) -> f64 {
    (-0.5 * crate::geom::norm_sq(v, d)).exp()
}

/// The steady state μ_E(x,v) = μ(v)·e^{−Φ(x)}.
#[inline]
pub fn local_maxwellian_mu_e(phi: &PotentialField, x: &V3, v: &V3, d_v: usize) -> f64 {
    maxwellian_mu(v, d_v) * (-phi.evaluate(x)).exp()
}

/// Velocity-energy weight parameters; the decay theory needs β ≥ 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    pub beta: f64,
}

impl WeightParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(CoreError::InvalidConfig(format!(
                "weight exponent beta = {beta} must be finite and nonnegative"
            )));
        }
        Ok(Self { beta })
    }
}

/// w_β(x,v) = (|v|²/2 + Φ(x) + 1)^{β/2} ≥ 1.
#[inline]
pub fn weight_w_beta(params: WeightParams, phi: &PotentialField, x: &V3, v: &V3, d_v: usize) -> f64 {
    let base = 0.5 * crate::geom::norm_sq(v, d_v) + phi.evaluate(x) + 1.0;
    base.powf(0.5 * params.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// The particle density F ≥ 0.
    Density,
    /// The scaled perturbation f = (F − μ_E)/√μ_E.
    Perturbation,
    /// The weighted perturbation h = w_β f.
    Weighted,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldKind::Density => "F",
            FieldKind::Perturbation => "f",
            FieldKind::Weighted => "h",
        };
        write!(f, "{s}")
    }
}

impl FieldKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(FieldKind::Density),
            "f" => Ok(FieldKind::Perturbation),
            "h" => Ok(FieldKind::Weighted),
            other => Err(CoreError::SnapshotIo(format!("unknown field kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub d_x: usize,
    pub d_v: usize,
    pub nx: usize,
    pub nv: usize,
    pub v_max: f64,
    pub tail_tol: f64,
    xs: Vec<f64>,
    vs: Vec<f64>,
    /// 1-D trapezoid weights on the velocity axis.
    wv1: Vec<f64>,
    /// All velocity lattice nodes, v-minor order.
    v_nodes: Vec<V3>,
    /// Tensorized trapezoid weight per velocity node.
    v_weights: Vec<f64>,
    /// μ(v) and √μ(v) cached on the lattice.
    mu_lattice: Vec<f64>,
    sqrt_mu_lattice: Vec<f64>,
}

impl PartialEq for PhaseGrid {
    fn eq(&self, o: &Self) -> bool {
        self.d_x == o.d_x
            && self.d_v == o.d_v
            && self.nx == o.nx
            && self.nv == o.nv
            && self.v_max == o.v_max
    }
}

impl PhaseGrid {
    pub fn new(d_x: usize, d_v: usize, nx: usize, nv: usize, v_max: f64, tail_tol: f64) -> Result<Arc<Self>> {
        let mut errs = Vec::new();
        if !(1..=3).contains(&d_x) {
            errs.push(format!("d_x = {d_x}, expected 1..=3"));
        }
        if !(2..=3).contains(&d_v) {
            errs.push(format!("d_v = {d_v}, expected 2 or 3"));
        }
        if d_x > d_v {
            errs.push(format!("d_x = {d_x} exceeds d_v = {d_v}"));
        }
        if nx < 4 {
            errs.push(format!("nx = {nx}, expected at least 4"));
        }
        if nv < 8 {
            errs.push(format!("nv = {nv}, expected at least 8"));
        }
        if !(v_max > 0.0) {
            errs.push(format!("v_max = {v_max} must be positive"));
        }
        if !errs.is_empty() {
            return Err(CoreError::ConfigErrors(errs));
        }
        let tail = maxwellian_tail_mass(v_max, d_v);
        if tail > tail_tol {
            return Err(CoreError::InvalidConfig(format!(
                "Maxwellian tail mass {tail:.3e} outside the velocity box exceeds tail_tol {tail_tol:.3e}; \
                 increase v_max or loosen tail_tol"
            )));
        }

        let xs: Vec<f64> = (0..nx).map(|i| i as f64 / nx as f64).collect();
        let dv = 2.0 * v_max / (nv - 1) as f64;
        let vs: Vec<f64> = (0..nv).map(|j| -v_max + j as f64 * dv).collect();
        let mut wv1 = vec![dv; nv];
        wv1[0] *= 0.5;
        wv1[nv - 1] *= 0.5;

        let nvtot = nv.pow(d_v as u32);
        let mut v_nodes = Vec::with_capacity(nvtot);
        let mut v_weights = Vec::with_capacity(nvtot);
        for lin in 0..nvtot {
            let mut v = [0.0; 3];
            let mut w = 1.0;
            let mut rem = lin;
            for a in (0..d_v).rev() {
                let j = rem % nv;
                rem /= nv;
                v[a] = vs[j];
                w *= wv1[j];
            }
            v_nodes.push(v);
            v_weights.push(w);
        }
        let mu_lattice: Vec<f64> = v_nodes.iter().map(|v| maxwellian_mu(v, d_v)).collect();
        let sqrt_mu_lattice: Vec<f64> = mu_lattice.iter().map(|m| m.sqrt()).collect();

        Ok(Arc::new(Self {
            d_x,
            d_v,
            nx,
            nv,
            v_max,
            tail_tol,
            xs,
            vs,
            wv1,
            v_nodes,
            v_weights,
            mu_lattice,
            sqrt_mu_lattice,
        }))
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / (self.nv - 1) as f64
    }

    pub fn n_x_cells(&self) -> usize {
        self.nx.pow(self.d_x as u32)
    }

    pub fn n_v_cells(&self) -> usize {
        self.nv.pow(self.d_v as u32)
    }

    pub fn n_cells(&self) -> usize {
        self.n_x_cells() * self.n_v_cells()
    }

    /// Quadrature weight of one x cell (uniform periodic rule).
    pub fn x_weight(&self) -> f64 {
        self.dx().powi(self.d_x as i32)
    }

    pub fn x_axis(&self) -> &[f64] {
        &self.xs
    }

    pub fn v_axis(&self) -> &[f64] {
        &self.vs
    }

    pub fn v_axis_weights(&self) -> &[f64] {
        &self.wv1
    }

    pub fn v_nodes(&self) -> &[V3] {
        &self.v_nodes
    }

    pub fn v_weights(&self) -> &[f64] {
        &self.v_weights
    }

    pub fn mu_lattice(&self) -> &[f64] {
        &self.mu_lattice
    }

    pub fn sqrt_mu_lattice(&self) -> &[f64] {
        &self.sqrt_mu_lattice
    }

    pub fn x_coord(&self, x_lin: usize) -> V3 {
        let mut x = [0.0; 3];
        let mut rem = x_lin;
        for a in (0..self.d_x).rev() {
            x[a] = self.xs[rem % self.nx];
            rem /= self.nx;
        }
        x
    }

    pub fn v_coord(&self, v_lin: usize) -> V3 {
        self.v_nodes[v_lin]
    }

    pub fn x_lin(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in 0..self.d_x {
            lin = lin * self.nx + idx[a];
        }
        lin
    }

    pub fn v_lin(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in 0..self.d_v {
            lin = lin * self.nv + idx[a];
        }
        lin
    }

    /// Total velocity-box volume as seen by the trapezoid rule: (2·v_max)^d_v.
    pub fn v_box_volume(&self) -> f64 {
        (2.0 * self.v_max).powi(self.d_v as i32)
    }

    fn key_floats(&self) -> (u64, u64) {
        (self.v_max.to_bits(), self.tail_tol.to_bits())
    }

    /// Stable identity for caches keyed by lattice geometry.
    pub fn cache_key(&self) -> (usize, usize, usize, usize, u64, u64) {
        let (a, b) = self.key_floats();
        (self.d_x, self.d_v, self.nx, self.nv, a, b)
    }
}

/// Maxwellian mass fraction outside [−v_max, v_max]^d_v,
/// 1 − (∫_{−V}^{V} e^{−t²/2} dt / √(2π))^{d_v}, by fine Simpson quadrature.
pub fn maxwellian_tail_mass(v_max: f64, d_v: usize) -> f64 {
    let n = 20_000usize; // even
    let h = 2.0 * v_max / n as f64;
    let g = |t: f64| (-0.5 * t * t).exp();
    let mut s = g(-v_max) + g(v_max);
    for i in 1..n {
        let t = -v_max + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(t);
    }
    let inside = s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - inside.powi(d_v as i32)
}

#[derive(Debug, Clone)]
pub struct DistributionField {
    pub grid: Arc<PhaseGrid>,
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(grid: Arc<PhaseGrid>, kind: FieldKind) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            kind,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<PhaseGrid>, kind: FieldKind, mut f: impl FnMut(&V3, &V3) -> f64) -> Self {
        let mut out = Self::zeros(grid, kind);
        let nv = out.grid.n_v_cells();
        for xl in 0..out.grid.n_x_cells() {
            let x = out.grid.x_coord(xl);
            for vl in 0..nv {
                out.values[xl * nv + vl] = f(&x, &out.grid.v_coord(vl));
            }
        }
        out
    }

    /// The discrete steady state μ_E sampled on the lattice.
    pub fn equilibrium(grid: Arc<PhaseGrid>, phi: &PotentialField) -> Self {
        let mu = grid.mu_lattice().to_vec();
        let mut out = Self::zeros(grid, FieldKind::Density);
        let nv = out.grid.n_v_cells();
        for xl in 0..out.grid.n_x_cells() {
            let e = (-phi.evaluate(&out.grid.x_coord(xl))).exp();
            for vl in 0..nv {
                out.values[xl * nv + vl] = e * mu[vl];
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, x_lin: usize, v_lin: usize) -> f64 {
        self.values[x_lin * self.grid.n_v_cells() + v_lin]
    }

    pub fn x_slice(&self, x_lin: usize) -> &[f64] {
        let nv = self.grid.n_v_cells();
        &self.values[x_lin * nv..(x_lin + 1) * nv]
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFinite { cell: i });
            }
        }
        Ok(())
    }

    /// Periodic multilinear interpolation in x, multilinear in v inside the
    /// box. Outside the box the equilibrium-consistent extension applies:
    /// μ_E(x,v) for densities, 0 for perturbations.
    pub fn interpolate(&self, phi: &PotentialField, x: &V3, v: &V3) -> f64 {
        let g = &self.grid;
        for a in 0..g.d_v {
            if v[a].abs() > g.v_max {
                return match self.kind {
                    FieldKind::Density => local_maxwellian_mu_e(phi, x, v, g.d_v),
                    _ => 0.0,
                };
            }
        }
        // per-axis stencil: (lower index, fraction); fractions are derived
        // from the stored axis coordinates so queries at lattice nodes
        // reproduce stored values exactly
        let mut ix = [0usize; 3];
        let mut fx = [0.0f64; 3];
        let nxf = g.nx as f64;
        for a in 0..g.d_x {
            let xa = x[a] - x[a].floor();
            let mut i0 = (xa * nxf).floor() as usize;
            if i0 >= g.nx {
                i0 = g.nx - 1;
            }
            let lo = g.xs[i0];
            let hi = if i0 + 1 == g.nx { 1.0 } else { g.xs[i0 + 1] };
            ix[a] = i0;
            fx[a] = (xa - lo) / (hi - lo);
        }
        let mut iv = [0usize; 3];
        let mut fv = [0.0f64; 3];
        let dv = g.dv();
        for a in 0..g.d_v {
            let t = (v[a] + g.v_max) / dv;
            let mut j0 = t.floor() as usize;
            if j0 > g.nv - 2 {
                j0 = g.nv - 2;
            }
            iv[a] = j0;
            fv[a] = (v[a] - g.vs[j0]) / (g.vs[j0 + 1] - g.vs[j0]);
        }
        // accumulate over the 2^(d_x + d_v) corners
        let nv_tot = g.n_v_cells();
        let dims = g.d_x + g.d_v;
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut xl = 0usize;
            for a in 0..g.d_x {
                let hi = (corner >> a) & 1;
                w *= if hi == 1 { fx[a] } else { 1.0 - fx[a] };
                let i = if hi == 1 { (ix[a] + 1) % g.nx } else { ix[a] };
                xl = xl * g.nx + i;
            }
            let mut vl = 0usize;
            for a in 0..g.d_v {
                let hi = (corner >> (g.d_x + a)) & 1;
                w *= if hi == 1 { fv[a] } else { 1.0 - fv[a] };
                let j = iv[a] + hi;
                vl = vl * g.nv + j;
            }
            if w != 0.0 {
                acc += w * self.values[xl * nv_tot + vl];
            }
        }
        acc
    }

    /// L² norm with uniform-x / trapezoid-v quadrature.
    pub fn norm_l2(&self) -> f64 {
        let g = &self.grid;
        let wx = g.x_weight();
        let wv = g.v_weights();
        let nv = g.n_v_cells();
        let mut total = 0.0;
        for xl in 0..g.n_x_cells() {
            let slice = &self.values[xl * nv..(xl + 1) * nv];
            let mut s = 0.0;
            for (val, w) in slice.iter().zip(wv) {
                s += val * val * w;
            }
            total += s;
        }
        (total * wx).sqrt()
    }

    /// Sup norm over the lattice.
    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// ∫ e^{−|v|²/8} |f(x,·)| dv at one x cell (trapezoid).
    pub fn small_velocity_moment(&self, x_lin: usize) -> f64 {
        let g = &self.grid;
        let nv = g.n_v_cells();
        let slice = &self.values[x_lin * nv..(x_lin + 1) * nv];
        let mut s = 0.0;
        for (vl, (val, w)) in slice.iter().zip(g.v_weights()).enumerate() {
            let vsq = crate::geom::norm_sq(&g.v_nodes()[vl], g.d_v);
            s += w * (-vsq / 8.0).exp() * val.abs();
        }
        s
    }
}

/// f = (F − μ_E)/√μ_E and h = w_β f, pointwise on the lattice.
pub fn perturbation_from_density(
    density: &DistributionField,
    phi: &PotentialField,
    params: WeightParams,
) -> Result<(DistributionField, DistributionField)> {
    assert_eq!(density.kind, FieldKind::Density, "input must be a density field");
    density.assert_finite()?;
    let g = density.grid.clone();
    let nv = g.n_v_cells();
    let mut f = DistributionField::zeros(g.clone(), FieldKind::Perturbation);
    let mut h = DistributionField::zeros(g.clone(), FieldKind::Weighted);
    for xl in 0..g.n_x_cells() {
        let x = g.x_coord(xl);
        let ephi = (-phi.evaluate(&x)).exp();
        let ephi_half = ephi.sqrt();
        for vl in 0..nv {
            let mu_e = ephi * g.mu_lattice()[vl];
            let sq = ephi_half * g.sqrt_mu_lattice()[vl];
            let fval = (density.values[xl * nv + vl] - mu_e) / sq;
            let w = weight_w_beta(params, phi, &x, &g.v_nodes()[vl], g.d_v);
            f.values[xl * nv + vl] = fval;
            h.values[xl * nv + vl] = w * fval;
        }
    }
    Ok((f, h))
}

/// F = μ_E + √μ_E f, the inverse of [`perturbation_from_density`].
pub fn density_from_perturbation(
    f: &DistributionField,
    phi: &PotentialField,
) -> DistributionField {
    assert_eq!(f.kind, FieldKind::Perturbation, "input must be a perturbation field");
    let g = f.grid.clone();
    let nv = g.n_v_cells();
    let mut out = DistributionField::zeros(g.clone(), FieldKind::Density);
    for xl in 0..g.n_x_cells() {
        let x = g.x_coord(xl);
        let ephi = (-phi.evaluate(&x)).exp();
        let ephi_half = ephi.sqrt();
        for vl in 0..nv {
            let mu_e = ephi * g.mu_lattice()[vl];
            let sq = ephi_half * g.sqrt_mu_lattice()[vl];
            out.values[xl * nv + vl] = mu_e + sq * f.values[xl * nv + vl];
        }
    }
    out
}

/// Sidecar metadata stored next to the raw snapshot payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub kind: FieldKind,
    pub d_x: usize,
    pub d_v: usize,
    pub nx: usize,
    pub nv: usize,
    pub v_max: f64,
    pub tail_tol: f64,
    pub time: f64,
    pub config_hash: String,
}

/// Write `field` as raw little-endian f64 (x-major, v-minor) plus a sidecar
/// `<path>.meta` text file.
pub fn write_snapshot(field: &DistributionField, time: f64, config_hash: &str, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| CoreError::SnapshotIo(format!("{}: {e}", path.display()));
    let mut payload = Vec::with_capacity(field.values.len() * 8);
    for v in &field.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut fh = std::fs::File::create(path).map_err(io)?;
    fh.write_all(&payload).map_err(io)?;
    let g = &field.grid;
    let meta = format!(
        "kind={}\nd_x={}\nd_v={}\nnx={}\nnv={}\nv_max={:?}\ntail_tol={:?}\ntime={:?}\nconfig_hash={}\n",
        field.kind, g.d_x, g.d_v, g.nx, g.nv, g.v_max, g.tail_tol, time, config_hash
    );
    std::fs::write(path.with_extension("meta"), meta).map_err(io)?;
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`]; returns the field, the time
/// stamp and the recorded config hash.
pub fn read_snapshot(path: &Path) -> Result<(DistributionField, f64, String)> {
    let io = |e: std::io::Error| CoreError::SnapshotIo(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path.with_extension("meta")).map_err(io)?;
    let mut meta = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        meta.get(k)
            .ok_or_else(|| CoreError::SnapshotIo(format!("missing metadata key {k}")))
    };
    let parse_us = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| CoreError::SnapshotIo(format!("bad integer for {k}")))
    };
    let parse_f = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| CoreError::SnapshotIo(format!("bad float for {k}")))
    };
    let kind = FieldKind::parse(get("kind")?)?;
    let grid = PhaseGrid::new(
        parse_us("d_x")?,
        parse_us("d_v")?,
        parse_us("nx")?,
        parse_us("nv")?,
        parse_f("v_max")?,
        parse_f("tail_tol")?,
    )?;
    let mut raw = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut raw).map_err(io)?;
    let expected = grid.n_cells() * 8;
    if raw.len() != expected {
        return Err(CoreError::SnapshotIo(format!(
            "payload is {} bytes, grid expects {expected}",
            raw.len()
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = DistributionField { grid, kind, values };
    Ok((field, parse_f("time")?, get("config_hash")?.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2d() -> Arc<PhaseGrid> {
        PhaseGrid::new(1, 2, 8, 16, 6.0, 1e-7).unwrap()
    }

    #[test]
    fn tail_guard_fails_loudly() {
        let err = PhaseGrid::new(1, 2, 8, 16, 2.0, 1e-8);
        assert!(matches!(err, Err(CoreError::InvalidConfig(_))));
        assert!(PhaseGrid::new(1, 2, 8, 16, 6.5, 1e-8).is_ok());
    }

    #[test]
    fn maxwellian_values() {
        assert_eq!(maxwellian_mu(&[0.0, 0.0, 0.0], 3), 1.0);
        let v = [2.0f64.sqrt(), 0.0, 0.0];
        assert!((maxwellian_mu(&v, 3) - (-1.0f64).exp()).abs() < 1e-15);
        let w = [0.3, -0.9, 0.4];
        let neg = [-0.3, 0.9, -0.4];
        assert_eq!(maxwellian_mu(&w, 3), maxwellian_mu(&neg, 3));
    }

    #[test]
    fn local_maxwellian_factors() {
        let phi = PotentialField::cosine_well(1, 1.0);
        assert_eq!(
            local_maxwellian_mu_e(&phi, &[0.0; 3], &[0.7, -0.2, 0.0], 2),
            maxwellian_mu(&[0.7, -0.2, 0.0], 2)
        );
        // Φ(x) = ln 2 at 1 − cos(2πx) = ln 2
        let x = [(1.0f64 - 2.0f64.ln()).acos() / std::f64::consts::TAU, 0.0, 0.0];
        let got = local_maxwellian_mu_e(&phi, &x, &[0.0; 3], 2);
        assert!((got - 0.5).abs() < 1e-12);
        let v = [0.9, 0.1, 0.0];
        let x2 = [0.37, 0.0, 0.0];
        let prod = maxwellian_mu(&v, 2) * (-phi.evaluate(&x2)).exp();
        assert!((local_maxwellian_mu_e(&phi, &x2, &v, 2) - prod).abs() < 1e-15);
    }

    #[test]
    fn weight_examples() {
        let phi = PotentialField::free(1);
        let p4 = WeightParams::new(4.0).unwrap();
        assert_eq!(weight_w_beta(p4, &phi, &[0.0; 3], &[0.0; 3], 2), 1.0);
        // |v|² = 2, Φ = 1 → (1 + 1 + 1)² = 9
        let lifted = PotentialField::new(
            vec![crate::potential::Mode { k: [0, 0, 0], a: 1.0, b: 0.0 }],
            1,
            false,
        )
        .unwrap();
        let v = [2.0f64.sqrt(), 0.0, 0.0];
        assert!((weight_w_beta(p4, &lifted, &[0.0; 3], &v, 2) - 9.0).abs() < 1e-12);
        let p0 = WeightParams::new(0.0).unwrap();
        assert_eq!(weight_w_beta(p0, &phi, &[0.1; 3], &[3.0, 1.0, 0.0], 2), 1.0);
    }

    #[test]
    fn perturbation_round_trip() {
        let grid = grid_2d();
        let phi = PotentialField::cosine_well(1, 0.5);
        let params = WeightParams::new(4.0).unwrap();
        // F = 2 μ_E → f = √μ_E
        let twice = DistributionField::from_fn(grid.clone(), FieldKind::Density, |x, v| {
            2.0 * local_maxwellian_mu_e(&phi, x, v, 2)
        });
        let (f, h) = perturbation_from_density(&twice, &phi, params).unwrap();
        let nv = grid.n_v_cells();
        for xl in [0usize, 3] {
            let x = grid.x_coord(xl);
            for vl in [0usize, nv / 2] {
                let expect = local_maxwellian_mu_e(&phi, &x, &grid.v_coord(vl), 2).sqrt();
                assert!((f.at(xl, vl) - expect).abs() < 1e-14);
                let w = weight_w_beta(params, &phi, &x, &grid.v_coord(vl), 2);
                assert!((h.at(xl, vl) - w * expect).abs() < 1e-13);
            }
        }
        // equilibrium → f ≡ 0
        let eq = DistributionField::equilibrium(grid.clone(), &phi);
        let (f0, h0) = perturbation_from_density(&eq, &phi, params).unwrap();
        assert_eq!(f0.norm_linf(), 0.0);
        assert_eq!(h0.norm_linf(), 0.0);
        // random nonnegative F round-trips
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let rand_f = DistributionField::from_fn(grid.clone(), FieldKind::Density, |x, v| {
            local_maxwellian_mu_e(&phi, x, v, 2) * (0.5 + rnd())
        });
        let (fr, _) = perturbation_from_density(&rand_f, &phi, params).unwrap();
        let back = density_from_perturbation(&fr, &phi);
        for i in 0..back.values.len() {
            let a = rand_f.values[i];
            let b = back.values[i];
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-30), "cell {i}: {a} vs {b}");
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linear_fields() {
        let grid = grid_2d();
        let phi = PotentialField::free(1);
        let fld = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |x, v| {
            0.3 + 0.7 * x[0].sin() + 0.2 * v[0] - 0.1 * v[1]
        });
        // node reproduction
        let xl = 5usize;
        let vl = 33usize;
        let got = fld.interpolate(&phi, &grid.x_coord(xl), &grid.v_coord(vl));
        assert_eq!(got, fld.at(xl, vl));
        // linear-in-v exactness at interior points
        let lin = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, v| {
            1.5 * v[0] - 0.25 * v[1] + 2.0
        });
        let q = lin.interpolate(&phi, &[0.0; 3], &[0.83, -2.41, 0.0]);
        assert!((q - (1.5 * 0.83 - 0.25 * (-2.41) + 2.0)).abs() < 1e-12);
        // constants are exact everywhere inside
        let c = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, _| 4.25);
        assert!((c.interpolate(&phi, &[0.123, 0.0, 0.0], &[1.77, 3.21, 0.0]) - 4.25).abs() < 1e-12);
    }

    #[test]
    fn interpolation_outside_box_uses_extension() {
        let grid = grid_2d();
        let phi = PotentialField::cosine_well(1, 0.5);
        let f = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, _| 1.0);
        assert_eq!(f.interpolate(&phi, &[0.2, 0.0, 0.0], &[7.0, 0.0, 0.0]), 0.0);
        let dens = DistributionField::equilibrium(grid.clone(), &phi);
        let x = [0.2, 0.0, 0.0];
        let v = [7.0, 0.1, 0.0];
        let got = dens.interpolate(&phi, &x, &v);
        assert!((got - local_maxwellian_mu_e(&phi, &x, &v, 2)).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_of_unit_field_is_sqrt_box_volume() {
        let grid = grid_2d();
        let ones = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, _| 1.0);
        let expect = grid.v_box_volume().sqrt();
        assert!((ones.norm_l2() - expect).abs() < 1e-12 * expect);
        let zeros = DistributionField::zeros(grid.clone(), FieldKind::Perturbation);
        assert_eq!(zeros.norm_l2(), 0.0);
    }

    #[test]
    fn l2_matches_double_loop_oracle() {
        let grid = grid_2d();
        let fld = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |x, v| {
            (x[0] * 7.0).cos() * (-0.3 * (v[0] * v[0] + v[1] * v[1])).exp() + 0.1 * v[1]
        });
        let mut acc = 0.0;
        for xl in 0..grid.n_x_cells() {
            for vl in 0..grid.n_v_cells() {
                let val = fld.at(xl, vl);
                acc += val * val * grid.x_weight() * grid.v_weights()[vl];
            }
        }
        assert!((fld.norm_l2() - acc.sqrt()).abs() < 1e-13 * acc.sqrt().max(1.0));
    }

    #[test]
    fn linf_norm_scan() {
        let grid = grid_2d();
        let mut fld = DistributionField::zeros(grid, FieldKind::Weighted);
        fld.values[17] = -5.0;
        assert_eq!(fld.norm_linf(), 5.0);
    }

    #[test]
    fn small_moment_separable_oracle() {
        let grid = grid_2d();
        // f ≡ 1: separable product of 1-D trapezoids of e^{−t²/8}
        let ones = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, _| 1.0);
        let got = ones.small_velocity_moment(0);
        let mut one_d = 0.0;
        for (j, w) in grid.v_axis_weights().iter().enumerate() {
            let t = grid.v_axis()[j];
            one_d += w * (-t * t / 8.0).exp();
        }
        let expect = one_d * one_d;
        assert!((got - expect).abs() < 1e-12 * expect);
        // f = √μ: product quadrature of e^{−t²/8 − t²/4}
        let smu = DistributionField::from_fn(grid.clone(), FieldKind::Perturbation, |_, v| {
            maxwellian_mu(v, 2).sqrt()
        });
        let got2 = smu.small_velocity_moment(0);
        let mut one_d2 = 0.0;
        for (j, w) in grid.v_axis_weights().iter().enumerate() {
            let t = grid.v_axis()[j];
            one_d2 += w * (-t * t / 8.0 - t * t / 4.0).exp();
        }
        let expect2 = one_d2 * one_d2;
        assert!((got2 - expect2).abs() < 1e-12 * expect2);
        // zero field
        let z = DistributionField::zeros(grid, FieldKind::Perturbation);
        assert_eq!(z.small_velocity_moment(0), 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = grid_2d();
        let phi = PotentialField::cosine_well(1, 0.25);
        let fld = DistributionField::equilibrium(grid, &phi);
        let path = dir.path().join("snap_t0.f64");
        write_snapshot(&fld, 1.25, "abcd1234", &path).unwrap();
        let (back, t, hash) = read_snapshot(&path).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(hash, "abcd1234");
        assert_eq!(back.kind, FieldKind::Density);
        assert_eq!(back.values, fld.values);
    }
}
