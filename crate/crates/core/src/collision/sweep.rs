//! Whole-lattice collision sweeps used by the time marchers.
//!
//! Evaluating the gain term node-by-node recomputes the scattering geometry
//! per output velocity even though it depends only on the difference u − v
//! and the direction node. The sweep loops difference-offsets outermost, so
//! each (ξ, ω) pair sets up its interpolation stencil once and streams over
//! the valid velocity range; the Maxwellian prefactors recombine through the
//! collision invariant, which keeps the inner loop free of transcendentals.
//! The scattering directions come in ±ω pairs with identical geometry, so
//! only half the nodes are visited with doubled weights.

use super::{AngularGrid, CollisionKernelSpec};
use crate::geom::{norm, plane_frame, V3};
use crate::phase_space::PhaseGrid;

pub struct LatticeSweep {
    d: usize,
    nv: usize,
    dv: f64,
    /// padding per side (axis units) covering every stencil offset
    pad: usize,
    pdim: usize,
    c_ang: f64,
    /// folded direction nodes (cos θ, sin θ cos φ, sin θ sin φ, 2·w·b)
    ang: Vec<(f64, f64, f64, f64)>,
    /// |ξ|^γ per difference offset, linear over (2nv−1)^d
    rgam: Vec<f64>,
    gamma: f64,
    padded: Vec<f64>,
    out: Vec<f64>,
}

impl LatticeSweep {
    pub fn new(spec: &CollisionKernelSpec, grid: &PhaseGrid) -> Self {
        let d = grid.d_v;
        let nv = grid.nv;
        let dv = grid.dv();
        let ang_full = AngularGrid::build(spec, d);
        let ang = ang_full.folded();
        let c_ang = ang_full.c_ang;
        let span = 2 * nv - 1;
        let mut rgam = vec![0.0f64; span.pow(d as u32)];
        let mut idx = vec![0usize; d];
        for (lin, r) in rgam.iter_mut().enumerate() {
            let mut rem = lin;
            for a in (0..d).rev() {
                idx[a] = rem % span;
                rem /= span;
            }
            let mut s = 0.0;
            for &i in idx.iter().take(d) {
                let off = (i as isize - (nv as isize - 1)) as f64 * dv;
                s += off * off;
            }
            let rr = s.sqrt();
            *r = if rr == 0.0 && spec.gamma == 0.0 {
                1.0
            } else {
                rr.powf(spec.gamma)
            };
        }
        // |b|, |a| ≤ |ξ| ≤ (nv−1)·√d axis units
        let pad = ((nv - 1) as f64 * (d as f64).sqrt()).ceil() as usize + 2;
        let pdim = nv + 2 * pad;
        Self {
            d,
            nv,
            dv,
            pad,
            pdim,
            c_ang,
            ang,
            rgam,
            gamma: spec.gamma,
            padded: vec![0.0; pdim.pow(d as u32)],
            out: vec![0.0; nv.pow(d as u32)],
        }
    }

    pub fn c_ang(&self) -> f64 {
        self.c_ang
    }

    /// R-type loss sweep: out[v] = c_ang · Σ_u w_u |v−u|^γ fvals[u].
    pub fn loss_rate(&self, weighted_f: &[f64], out: &mut [f64]) {
        let nv = self.nv;
        let span = 2 * nv - 1;
        match self.d {
            2 => {
                out.fill(0.0);
                for (ul, wf) in weighted_f.iter().enumerate() {
                    if *wf == 0.0 {
                        continue;
                    }
                    let u0 = ul / nv;
                    let u1 = ul % nv;
                    // offset row base into rgam for ξ = u − v
                    for v0 in 0..nv {
                        let r0 = (u0 + nv - 1 - v0) * span;
                        let orow = v0 * nv;
                        let rrow = r0 + (u1 + nv - 1);
                        for v1 in 0..nv {
                            out[orow + v1] += wf * self.rgam[rrow - v1];
                        }
                    }
                }
                for o in out.iter_mut() {
                    *o *= self.c_ang;
                }
            }
            _ => {
                out.fill(0.0);
                for (ul, wf) in weighted_f.iter().enumerate() {
                    if *wf == 0.0 {
                        continue;
                    }
                    let u0 = ul / (nv * nv);
                    let u1 = (ul / nv) % nv;
                    let u2 = ul % nv;
                    for v0 in 0..nv {
                        let r0 = (u0 + nv - 1 - v0) * span;
                        for v1 in 0..nv {
                            let r1 = (r0 + u1 + nv - 1 - v1) * span;
                            let orow = (v0 * nv + v1) * nv;
                            let rrow = r1 + (u2 + nv - 1);
                            for v2 in 0..nv {
                                out[orow + v2] += wf * self.rgam[rrow - v2];
                            }
                        }
                    }
                }
                for o in out.iter_mut() {
                    *o *= self.c_ang;
                }
            }
        }
    }

    /// Gain sweep: returns S with
    /// S[v] = Σ_u w_u |ξ|^γ Σ_ω w b(θ) I[ratio](u′) I[ratio](v′),
    /// where wmu[u] = w_u μ^θ(u) and the caller multiplies by μ^θ(v) as the
    /// factoring requires (Q₊ of densities: μ(v)·S; Γ₊ of perturbations: S).
    pub fn gain(&mut self, ratio: &[f64], ext: f64, wmu: &[f64]) -> &[f64] {
        assert_eq!(ratio.len(), self.out.len());
        assert_eq!(wmu.len(), self.out.len());
        self.fill_padded(ratio, ext);
        self.out.fill(0.0);
        match self.d {
            2 => self.gain_2d(wmu),
            _ => self.gain_3d(wmu),
        }
        &self.out
    }

    fn fill_padded(&mut self, ratio: &[f64], ext: f64) {
        let nv = self.nv;
        let pad = self.pad;
        let pdim = self.pdim;
        self.padded.fill(ext);
        match self.d {
            2 => {
                for j0 in 0..nv {
                    let src = j0 * nv;
                    let dst = (j0 + pad) * pdim + pad;
                    self.padded[dst..dst + nv].copy_from_slice(&ratio[src..src + nv]);
                }
            }
            _ => {
                for j0 in 0..nv {
                    for j1 in 0..nv {
                        let src = (j0 * nv + j1) * nv;
                        let dst = ((j0 + pad) * pdim + j1 + pad) * pdim + pad;
                        self.padded[dst..dst + nv].copy_from_slice(&ratio[src..src + nv]);
                    }
                }
            }
        }
    }

    /// Stencil of one real-space displacement: integer base offset per axis
    /// plus the fractional weights.
    #[inline]
    fn stencil(&self, disp: &V3, base: &mut [isize; 3], fr: &mut [f64; 3]) {
        for a in 0..self.d {
            let s = disp[a] / self.dv;
            let f = s.floor();
            base[a] = f as isize;
            fr[a] = s - f;
        }
    }

    fn gain_2d(&mut self, wmu: &[f64]) {
        let nv = self.nv as isize;
        let pdim = self.pdim as isize;
        let span = 2 * self.nv - 1;
        let mut base_a = [0isize; 3];
        let mut fr_a = [0.0f64; 3];
        let mut base_b = [0isize; 3];
        let mut fr_b = [0.0f64; 3];
        for dxi0 in -(nv - 1)..nv {
            for dxi1 in -(nv - 1)..nv {
                let xi = [dxi0 as f64 * self.dv, dxi1 as f64 * self.dv, 0.0];
                let r = norm(&xi, 2);
                let bbase = self.rgam
                    [((dxi0 + nv - 1) as usize) * span + (dxi1 + nv - 1) as usize];
                if bbase == 0.0 {
                    continue;
                }
                let e = if r > 0.0 {
                    [xi[0] / r, xi[1] / r, 0.0]
                } else {
                    [1.0, 0.0, 0.0]
                };
                let (e, p, q) = plane_frame(&e, 2);
                // valid v range so that u = v + ξ stays on the lattice
                let v0_lo = 0.max(-dxi0);
                let v0_hi = (nv - 1).min(nv - 1 - dxi0);
                let v1_lo = 0.max(-dxi1);
                let v1_hi = (nv - 1).min(nv - 1 - dxi1);
                if v0_lo > v0_hi || v1_lo > v1_hi {
                    continue;
                }
                for &(c, sc, ss, wb2) in &self.ang {
                    let om = [
                        c * e[0] + sc * p[0] + ss * q[0],
                        c * e[1] + sc * p[1] + ss * q[1],
                        0.0,
                    ];
                    let t = xi[0] * om[0] + xi[1] * om[1];
                    let a_vec = [t * om[0], t * om[1], 0.0];
                    let b_vec = [xi[0] - a_vec[0], xi[1] - a_vec[1], 0.0];
                    self.stencil(&a_vec, &mut base_a, &mut fr_a);
                    self.stencil(&b_vec, &mut base_b, &mut fr_b);
                    let wa = [
                        (1.0 - fr_a[0]) * (1.0 - fr_a[1]),
                        (1.0 - fr_a[0]) * fr_a[1],
                        fr_a[0] * (1.0 - fr_a[1]),
                        fr_a[0] * fr_a[1],
                    ];
                    let wb = [
                        (1.0 - fr_b[0]) * (1.0 - fr_b[1]),
                        (1.0 - fr_b[0]) * fr_b[1],
                        fr_b[0] * (1.0 - fr_b[1]),
                        fr_b[0] * fr_b[1],
                    ];
                    let off_a = base_a[0] * pdim + base_a[1];
                    let off_b = base_b[0] * pdim + base_b[1];
                    let coef = wb2 * bbase;
                    for v0 in v0_lo..=v0_hi {
                        let lp_row = (v0 + self.pad as isize) * pdim + self.pad as isize;
                        let out_row = (v0 * nv) as usize;
                        let u_row = (v0 + dxi0) * nv + dxi1;
                        for v1 in v1_lo..=v1_hi {
                            let lp = lp_row + v1;
                            let ia = (lp + off_a) as usize;
                            let ib = (lp + off_b) as usize;
                            let pu = wb[0] * self.padded[ib]
                                + wb[1] * self.padded[ib + 1]
                                + wb[2] * self.padded[ib + pdim as usize]
                                + wb[3] * self.padded[ib + pdim as usize + 1];
                            let pv = wa[0] * self.padded[ia]
                                + wa[1] * self.padded[ia + 1]
                                + wa[2] * self.padded[ia + pdim as usize]
                                + wa[3] * self.padded[ia + pdim as usize + 1];
                            let w = wmu[(u_row + v1) as usize];
                            self.out[out_row + v1 as usize] += coef * w * pu * pv;
                        }
                    }
                }
            }
        }
    }

    fn gain_3d(&mut self, wmu: &[f64]) {
        let nv = self.nv as isize;
        let pdim = self.pdim as isize;
        let pdim2 = pdim * pdim;
        let span = 2 * self.nv - 1;
        let mut base_a = [0isize; 3];
        let mut fr_a = [0.0f64; 3];
        let mut base_b = [0isize; 3];
        let mut fr_b = [0.0f64; 3];
        for dxi0 in -(nv - 1)..nv {
            for dxi1 in -(nv - 1)..nv {
                for dxi2 in -(nv - 1)..nv {
                    let xi = [
                        dxi0 as f64 * self.dv,
                        dxi1 as f64 * self.dv,
                        dxi2 as f64 * self.dv,
                    ];
                    let r = norm(&xi, 3);
                    let lin = (((dxi0 + nv - 1) as usize * span) + (dxi1 + nv - 1) as usize) * span
                        + (dxi2 + nv - 1) as usize;
                    let bbase = self.rgam[lin];
                    if bbase == 0.0 {
                        continue;
                    }
                    let e = if r > 0.0 {
                        [xi[0] / r, xi[1] / r, xi[2] / r]
                    } else {
                        [1.0, 0.0, 0.0]
                    };
                    let (e, p, q) = plane_frame(&e, 3);
                    let v0_lo = 0.max(-dxi0);
                    let v0_hi = (nv - 1).min(nv - 1 - dxi0);
                    let v1_lo = 0.max(-dxi1);
                    let v1_hi = (nv - 1).min(nv - 1 - dxi1);
                    let v2_lo = 0.max(-dxi2);
                    let v2_hi = (nv - 1).min(nv - 1 - dxi2);
                    if v0_lo > v0_hi || v1_lo > v1_hi || v2_lo > v2_hi {
                        continue;
                    }
                    for &(c, sc, ss, wb2) in &self.ang {
                        let mut om = [0.0f64; 3];
                        for i in 0..3 {
                            om[i] = c * e[i] + sc * p[i] + ss * q[i];
                        }
                        let t = xi[0] * om[0] + xi[1] * om[1] + xi[2] * om[2];
                        let a_vec = [t * om[0], t * om[1], t * om[2]];
                        let b_vec = [xi[0] - a_vec[0], xi[1] - a_vec[1], xi[2] - a_vec[2]];
                        self.stencil(&a_vec, &mut base_a, &mut fr_a);
                        self.stencil(&b_vec, &mut base_b, &mut fr_b);
                        let mut wa = [0.0f64; 8];
                        let mut wbv = [0.0f64; 8];
                        for corner in 0..8usize {
                            let mut xa = 1.0;
                            let mut xb = 1.0;
                            for ax in 0..3 {
                                let hi = (corner >> ax) & 1;
                                xa *= if hi == 1 { fr_a[ax] } else { 1.0 - fr_a[ax] };
                                xb *= if hi == 1 { fr_b[ax] } else { 1.0 - fr_b[ax] };
                            }
                            wa[corner] = xa;
                            wbv[corner] = xb;
                        }
                        let tap = |corner: usize| -> isize {
                            ((corner >> 0) & 1) as isize * pdim2
                                + (((corner >> 1) & 1) as isize) * pdim
                                + ((corner >> 2) & 1) as isize
                        };
                        let off_a = base_a[0] * pdim2 + base_a[1] * pdim + base_a[2];
                        let off_b = base_b[0] * pdim2 + base_b[1] * pdim + base_b[2];
                        let coef = wb2 * bbase;
                        for v0 in v0_lo..=v0_hi {
                            for v1 in v1_lo..=v1_hi {
                                let lp_row = ((v0 + self.pad as isize) * pdim
                                    + (v1 + self.pad as isize))
                                    * pdim
                                    + self.pad as isize;
                                let out_row = ((v0 * nv + v1) * nv) as usize;
                                let u_row = ((v0 + dxi0) * nv + (v1 + dxi1)) * nv + dxi2;
                                for v2 in v2_lo..=v2_hi {
                                    let lp = lp_row + v2;
                                    let ia = lp + off_a;
                                    let ib = lp + off_b;
                                    let mut pu = 0.0;
                                    let mut pv = 0.0;
                                    for corner in 0..8usize {
                                        let t = tap(corner);
                                        pu += wbv[corner] * self.padded[(ib + t) as usize];
                                        pv += wa[corner] * self.padded[(ia + t) as usize];
                                    }
                                    let w = wmu[(u_row + v2) as usize];
                                    self.out[out_row + v2 as usize] += coef * w * pu * pv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl AngularGrid {
    /// Halved node set exploiting ω → −ω evenness of the collision geometry:
    /// weights doubled, same quadrature value for even integrands.
    pub fn folded(&self) -> Vec<(f64, f64, f64, f64)> {
        if self.d_v == 2 {
            let n = self.nodes.len();
            self.nodes[..n / 2]
                .iter()
                .map(|&(c, sc, ss, w)| (c, sc, ss, 2.0 * w))
                .collect()
        } else {
            self.nodes
                .iter()
                .filter(|n| n.0 > 0.0)
                .map(|&(c, sc, ss, w)| (c, sc, ss, 2.0 * w))
                .collect()
        }
    }
}
