//! Retarded space-time mollification of the velocity history and the
//! divergence-corrected drift built from it.
//!
//! The kernel is a product of standard exponential bumps supported in
//! {(y, tau) : |y|^2 < tau, 1 < tau < 2}, so the smoothed field at time
//! `t` reads only slices from the window [t - 2 eps, t - eps]. Fields
//! extend by zero outside the box (walls) and before absolute time zero;
//! periodic boxes wrap instead.

use crate::elliptic::EllipticSolver;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::grid::{BcKind, GridSpec};
use crate::history::FieldHistory;
use crate::ops;

/// Unnormalized spatial bump profile on [0, 1).
fn chi(s: f64) -> f64 {
    if s < 1.0 {
        (-1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// Unnormalized temporal bump profile on (1, 2).
fn phi(tau: f64) -> f64 {
    if tau > 1.0 && tau < 2.0 {
        (-1.0 / ((tau - 1.0) * (2.0 - tau))).exp()
    } else {
        0.0
    }
}

struct TimeTap {
    /// Physical retardation of this tap.
    tau: f64,
    /// Spatial lattice offsets (in cells) and normalized weights.
    offsets: Vec<([isize; 3], f64)>,
}

/// Quadrature form of the retarded kernel for one (grid, dt, epsilon).
pub struct MollifierSpec {
    pub epsilon: f64,
    pub kernel_resolution: usize,
    /// Computed constant scaling the bump product so the discrete
    /// weights sum to one.
    pub zeta_normalization: f64,
    dims: usize,
    dt: f64,
    taps: Vec<TimeTap>,
}

impl MollifierSpec {
    /// Build the kernel quadrature on the simulation lattice itself:
    /// spatial offsets are multiples of the grid spacing and temporal
    /// offsets multiples of `dt`, strided down to roughly
    /// `kernel_resolution` points per epsilon when the lattice is finer.
    pub fn new(
        epsilon: f64,
        kernel_resolution: usize,
        grid: &GridSpec,
        dt: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mollifier epsilon must be positive, got {epsilon}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("mollifier needs dt > 0".into()));
        }
        if kernel_resolution == 0 {
            return Err(Error::InvalidInput(
                "kernel_resolution must be at least 1".into(),
            ));
        }
        let dims = grid.dims();
        let res = kernel_resolution as f64;
        let time_stride = ((epsilon / (res * dt)).floor() as usize).max(1);
        let mut space_stride = [1usize; 3];
        for (k, s) in space_stride.iter_mut().enumerate().take(dims) {
            *s = ((epsilon / (res * grid.h(k))).floor() as usize).max(1);
        }

        // enumerate lattice taps inside the support
        let mut raw_taps: Vec<(f64, Vec<([isize; 3], f64)>)> = Vec::new();
        let mut raw_total = 0.0;
        let step_t = time_stride as f64 * dt;
        let mut m = 1;
        loop {
            let tau = m as f64 * step_t;
            if tau >= 2.0 * epsilon {
                break;
            }
            m += 1;
            let w_t = phi(tau / epsilon);
            if w_t == 0.0 {
                continue;
            }
            // spatial reach at this tau: |y|^2 < tau * eps
            let reach = (tau * epsilon).sqrt();
            let mut offsets = Vec::new();
            let mut ranges = [0isize; 3];
            for k in 0..dims {
                ranges[k] = (reach / (space_stride[k] as f64 * grid.h(k))).ceil() as isize;
            }
            let mut j = [-ranges[0], -ranges[1], -ranges[2]];
            if dims == 2 {
                j[2] = 0;
            }
            loop {
                let mut y2 = 0.0;
                let mut cells = [0isize; 3];
                for k in 0..dims {
                    let yk = (j[k] * space_stride[k] as isize) as f64 * grid.h(k);
                    y2 += yk * yk;
                    cells[k] = j[k] * space_stride[k] as isize;
                }
                let s = y2 / (tau * epsilon);
                let w = chi(s) * w_t;
                if w > 0.0 {
                    offsets.push((cells, w));
                    raw_total += w;
                }
                // odometer over [-range, range]^dims
                let mut k = 0;
                loop {
                    if k == dims {
                        break;
                    }
                    j[k] += 1;
                    if j[k] <= ranges[k] {
                        break;
                    }
                    j[k] = -ranges[k];
                    k += 1;
                }
                if k == dims {
                    break;
                }
            }
            if !offsets.is_empty() {
                raw_taps.push((tau, offsets));
            }
        }
        if raw_taps.is_empty() || raw_total <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "kernel support is empty: epsilon = {epsilon} too small for dt = {dt}"
            )));
        }

        // element volume cancels in the normalization; keep it explicit
        // so zeta_normalization is the actual kernel constant
        let mut elem = time_stride as f64 * dt;
        for k in 0..dims {
            elem *= space_stride[k] as f64 * grid.h(k);
        }
        let epow = epsilon.powi(dims as i32 + 1);
        let c = epow / (raw_total * elem);
        let scale = 1.0 / raw_total;
        let taps = raw_taps
            .into_iter()
            .map(|(tau, offsets)| TimeTap {
                tau,
                offsets: offsets
                    .into_iter()
                    .map(|(cells, w)| (cells, w * scale))
                    .collect(),
            })
            .collect();
        Ok(MollifierSpec {
            epsilon,
            kernel_resolution,
            zeta_normalization: c,
            dims,
            dt,
            taps,
        })
    }

    /// Kernel value at rescaled offset `y` and rescaled retardation
    /// `tau` (support {|y|^2 < tau, 1 < tau < 2}).
    pub fn zeta(&self, y: &[f64; 3], tau: f64) -> f64 {
        if tau <= 1.0 || tau >= 2.0 {
            return 0.0;
        }
        let mut y2 = 0.0;
        for v in y.iter().take(self.dims) {
            y2 += v * v;
        }
        self.zeta_normalization * chi(y2 / tau) * phi(tau)
    }

    /// Sum of the discrete quadrature weights (one by construction).
    pub fn weight_sum(&self) -> f64 {
        self.taps
            .iter()
            .map(|t| t.offsets.iter().map(|(_, w)| w).sum::<f64>())
            .sum()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The retarded window read by an evaluation at time `t`.
    pub fn window(&self, t: f64) -> (f64, f64) {
        (t - 2.0 * self.epsilon, t - self.epsilon)
    }

    /// Mollified velocity at time `t`. Strictly retarded: only slices
    /// with retardation in (eps, 2 eps) contribute, and sample times at
    /// or before absolute zero contribute nothing (zero extension).
    pub fn theta(&self, history: &FieldHistory, t: f64) -> Result<VectorField> {
        if history.is_empty() {
            return Err(Error::Coverage("empty history".into()));
        }
        let grid = history.grid().clone();
        let mut out = VectorField::zeros(&grid);
        let tol = 1e-9 * self.dt;
        for tap in &self.taps {
            let ts = t - tap.tau;
            if ts <= tol {
                continue; // before the start of time: zero extension
            }
            let idx = history.index_at(ts).ok_or_else(|| {
                Error::Coverage(format!(
                    "slice at t = {ts:.6} (retardation {:.6}) not stored",
                    tap.tau
                ))
            })?;
            let u = &history.state(idx).u;
            for k in 0..self.dims.min(u.dims()) {
                let lay = out.comp_layout(k);
                let src = &u.components[k];
                let dst = &mut out.components[k];
                let counts = lay.counts;
                for &(cells, w) in &tap.offsets {
                    // dst[x] += w * src[x - y]
                    for flat in 0..dst.len() {
                        let c = lay.coords(flat);
                        let mut s = [0usize; 3];
                        let mut inside = true;
                        for a in 0..3 {
                            let raw = c[a] as isize - cells[a];
                            let n = counts[a] as isize;
                            let v = match grid.bc() {
                                BcKind::Periodic => ((raw % n) + n) % n,
                                BcKind::Wall => {
                                    if raw < 0 || raw >= n {
                                        inside = false;
                                        break;
                                    }
                                    raw
                                }
                            };
                            s[a] = v as usize;
                        }
                        if inside {
                            dst[flat] += w * src[lay.idx(s)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Dilation ratio of the boundary-shrink map for parameter `delta`.
pub fn shrink_ratio(grid: &GridSpec, delta: f64) -> f64 {
    1.0 + 2.0 * delta / grid.length_min()
}

/// The affine dilation about the box center: points move away from the
/// center by the shrink ratio, so boundary points sample beyond the box.
pub fn shrink_map(grid: &GridSpec, delta: f64, x: &[f64; 3]) -> [f64; 3] {
    let lam = shrink_ratio(grid, delta);
    let c = grid.center();
    let mut out = [0.0; 3];
    for k in 0..grid.dims() {
        out[k] = c[k] + lam * (x[k] - c[k]);
    }
    out
}

/// Compose a MAC field with the dilation: sample `f` at the mapped
/// position by multilinear interpolation, zero beyond the box. The
/// output therefore vanishes on a boundary layer of width ~delta.
pub fn shrink_compose(f: &VectorField, delta: f64) -> Result<VectorField> {
    if delta < 0.0 || !delta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "shrink delta must be nonnegative, got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(f.clone());
    }
    let grid = &f.grid;
    let mut out = VectorField::zeros(grid);
    for k in 0..f.dims() {
        let lay = out.comp_layout(k);
        for flat in 0..out.components[k].len() {
            let pos = grid.face_pos(k, lay.coords(flat));
            let mapped = shrink_map(grid, delta, &pos);
            out.components[k][flat] = sample_face_lattice(f, k, &mapped);
        }
    }
    out.enforce_wall_bc();
    Ok(out)
}

/// Multilinear interpolation of component `k` at a physical point, with
/// zero extension for lattice nodes outside the stored array.
fn sample_face_lattice(f: &VectorField, k: usize, p: &[f64; 3]) -> f64 {
    let grid = &f.grid;
    let lay = f.comp_layout(k);
    let dims = grid.dims();
    // lattice coordinates of the point in the component's node grid
    let mut l = [0.0f64; 3];
    for a in 0..dims {
        let off = if a == k { 0.0 } else { 0.5 };
        l[a] = p[a] / grid.h(a) - off;
    }
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dims {
        let fl = l[a].floor();
        base[a] = fl as isize;
        frac[a] = l[a] - fl;
    }
    let comp = &f.components[k];
    let mut acc = 0.0;
    let corners = 1usize << dims;
    for corner in 0..corners {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..dims {
            let hi = (corner >> a) & 1 == 1;
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
            let raw = base[a] + if hi { 1 } else { 0 };
            let n = lay.counts[a] as isize;
            let v = match grid.bc() {
                BcKind::Periodic => ((raw % n) + n) % n,
                BcKind::Wall => {
                    if raw < 0 || raw >= n {
                        inside = false;
                        break;
                    }
                    raw
                }
            };
            idx[a] = v as usize;
        }
        if inside && w != 0.0 {
            acc += w * comp[lay.idx(idx)];
        }
    }
    acc
}

/// The divergence-corrected drift: mollify, shrink into the box, then
/// add the gradient of the Neumann corrector so the result is discretely
/// solenoidal with zero normal trace on walls.
pub fn theta_hat(
    spec: &MollifierSpec,
    history: &FieldHistory,
    t: f64,
    solver: &mut EllipticSolver,
) -> Result<VectorField> {
    let theta = spec.theta(history, t)?;
    let grid = theta.grid.clone();
    let mut w = if grid.bc() == BcKind::Wall {
        shrink_compose(&theta, 2.0 * spec.epsilon)?
    } else {
        theta
    };
    let mut div = ops::divergence(&w);
    // roundoff-level defects carry no meaningful correction and only
    // feed noise into the potential solve
    if div.max_abs() > 1e-13 * (1.0 + w.max_abs()) {
        div.remove_mean(); // discrete gauge; the exact mean is zero flux
        let (g, _) = solver.solve_neumann_poisson(&div)?;
        let mut grad_g = ops::gradient(&g);
        grad_g.enforce_wall_bc(); // Neumann condition at wall faces
        w.axpy(1.0, &grad_g);
    }
    w.enforce_wall_bc();
    Ok(w)
}
