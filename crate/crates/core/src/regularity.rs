//! Parabolic-cylinder diagnostics of computed trajectories: the four
//! scale-invariant cylinder quantities, the smallness criteria, lattice
//! scans with covering estimates of the flagged set, parabolic
//! rescaling, the local energy ledger, and the ingredient inequalities
//! of the decay machinery with configurable constants.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::{BcKind, GridSpec, Layout};
use crate::history::{FieldHistory, FieldSelector, State};
use crate::norms::{
    cylinder_slices, integral_p_scalar, spacetime_lp_cached, trapezoid, ParabolicCylinder,
    Region,
};
use crate::ops;

/// One Morrey-seminorm sample attached to a report.
#[derive(Debug, Clone, Serialize)]
pub struct MorreySample {
    pub field: &'static str,
    pub p: f64,
    pub lambda: f64,
    pub value: f64,
}

/// Criterion outcomes at the report's thresholds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriterionFlags {
    pub l3_small: bool,
    pub grad_small: bool,
}

/// Cylinder quantities of one evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct CknReport {
    pub cylinder: ParabolicCylinder,
    /// sup over slices of r^{-1} integral over the ball of |u|^2.
    pub a: f64,
    /// r^{-1} integral over the cylinder of |grad u|^2.
    pub b: f64,
    /// r^{-2} integral of |u|^3.
    pub c: f64,
    /// r^{-2} integral of |P|^{3/2}.
    pub d: f64,
    /// Raw integral of |grad psi|^4 over the cylinder.
    pub gradpsi_l4: f64,
    pub morrey: Vec<MorreySample>,
    /// c + (r^{-1} gradpsi_l4)^{3/4} + d^2.
    pub l3_criterion_value: f64,
    /// b itself, the quantity the gradient criterion thresholds.
    pub grad_criterion_value: f64,
    pub flags: CriterionFlags,
}

#[derive(Debug, Clone)]
pub struct RegularityConfig {
    /// Cylinder radii, decreasing; empty means a ladder derived from the
    /// grid by theta0 steps down to the 4h resolution floor.
    pub radii: Vec<f64>,
    pub stride_space: usize,
    pub stride_time: usize,
    pub epsilon0: f64,
    pub epsilon1: f64,
    /// Scale step of the derived radius ladder, in (0, 1/2).
    pub theta0: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        RegularityConfig {
            radii: Vec::new(),
            stride_space: 2,
            stride_time: 2,
            epsilon0: 0.1,
            epsilon1: 0.1,
            theta0: 0.25,
        }
    }
}

impl RegularityConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.theta0 > 0.0 && self.theta0 < 0.5) {
            return Err(Error::InvalidInput(format!(
                "theta0 must lie in (0, 1/2), got {}",
                self.theta0
            )));
        }
        if self.stride_space == 0 || self.stride_time == 0 {
            return Err(Error::InvalidInput("strides must be positive".into()));
        }
        if !(self.epsilon0 > 0.0) || !(self.epsilon1 > 0.0) {
            return Err(Error::InvalidInput("thresholds must be positive".into()));
        }
        let floor = 4.0 * grid.h_min();
        for &r in &self.radii {
            if r < floor {
                return Err(Error::InvalidInput(format!(
                    "radius {r} below the 4h resolution floor {floor}"
                )));
            }
        }
        Ok(())
    }

    /// The radius ladder: configured radii (sorted decreasing) or a
    /// derived geometric ladder from a quarter of the shortest box edge
    /// down to 4h.
    pub fn ladder(&self, grid: &GridSpec) -> Vec<f64> {
        let floor = 4.0 * grid.h_min();
        let mut out: Vec<f64> = if self.radii.is_empty() {
            let mut r = 0.25 * grid.length_min();
            let mut v = Vec::new();
            while r >= floor && v.len() < 12 {
                v.push(r);
                r *= self.theta0 / 0.25 * 0.5; // theta0-scaled step, halving at default
            }
            if v.len() < 2 && !v.is_empty() {
                v.push((v[0] * 0.5).max(floor));
            }
            v
        } else {
            self.radii.clone()
        };
        out.sort_by(|a, b| b.partial_cmp(a).unwrap());
        out.dedup();
        out
    }
}

/// Pointwise slice caches reused across many cylinder evaluations.
pub struct SliceCache {
    pub u_mag: Vec<ScalarField>,
    pub grad_u: Vec<ScalarField>,
    pub pressure: Vec<ScalarField>,
    pub grad_psi: Vec<ScalarField>,
}

impl SliceCache {
    pub fn build(history: &FieldHistory) -> Self {
        let n = history.len();
        let mut u_mag = Vec::with_capacity(n);
        let mut grad_u = Vec::with_capacity(n);
        let mut pressure = Vec::with_capacity(n);
        let mut grad_psi = Vec::with_capacity(n);
        for i in 0..n {
            let s = history.state(i);
            u_mag.push(s.pointwise(FieldSelector::Velocity));
            grad_u.push(s.pointwise(FieldSelector::GradVelocity));
            pressure.push(s.pointwise(FieldSelector::Pressure));
            grad_psi.push(s.pointwise(FieldSelector::GradPsi));
        }
        SliceCache {
            u_mag,
            grad_u,
            pressure,
            grad_psi,
        }
    }
}

fn ckn_from_cache(
    history: &FieldHistory,
    cache: &SliceCache,
    cyl: &ParabolicCylinder,
    epsilon0: f64,
    epsilon1: f64,
) -> Result<CknReport> {
    let idx = cylinder_slices(history, cyl)?;
    let region = cyl.ball();
    let r = cyl.radius;
    // A: discrete sup over slices of the windowed kinetic ball integral
    let mut a: f64 = 0.0;
    for &i in &idx {
        let v = integral_p_scalar(&cache.u_mag[i], 2.0, &region)?;
        a = a.max(v / r);
    }
    let b = spacetime_lp_cached(history, &cache.grad_u, 2.0, cyl)?.integral / r;
    let c = spacetime_lp_cached(history, &cache.u_mag, 3.0, cyl)?.integral / (r * r);
    let d = spacetime_lp_cached(history, &cache.pressure, 1.5, cyl)?.integral / (r * r);
    let gradpsi_l4 = spacetime_lp_cached(history, &cache.grad_psi, 4.0, cyl)?.integral;
    Ok(assemble_report(
        *cyl, r, a, b, c, d, gradpsi_l4, epsilon0, epsilon1,
    ))
}

/// The gradient quantity of one cylinder, deriving pointwise fields
/// only inside the window.
fn b_quantity(history: &FieldHistory, cyl: &ParabolicCylinder) -> Result<f64> {
    let idx = cylinder_slices(history, cyl)?;
    let region = cyl.ball();
    let samples: Vec<f64> = idx
        .iter()
        .map(|&i| {
            integral_p_scalar(
                &history.state(i).pointwise(FieldSelector::GradVelocity),
                2.0,
                &region,
            )
        })
        .collect::<Result<_>>()?;
    Ok(trapezoid(history.dt(), &samples) / cyl.radius)
}

/// The four cylinder quantities plus criterion values at the default
/// thresholds. Pointwise fields are derived only for the slices inside
/// the cylinder's window.
pub fn ckn(history: &FieldHistory, cyl: &ParabolicCylinder) -> Result<CknReport> {
    let cfg = RegularityConfig::default();
    ckn_with_thresholds(history, cyl, cfg.epsilon0, cfg.epsilon1)
}

pub fn ckn_with_thresholds(
    history: &FieldHistory,
    cyl: &ParabolicCylinder,
    epsilon0: f64,
    epsilon1: f64,
) -> Result<CknReport> {
    let idx = cylinder_slices(history, cyl)?;
    let region = cyl.ball();
    let r = cyl.radius;
    let dt = history.dt();
    let mut a: f64 = 0.0;
    let mut b_s = Vec::with_capacity(idx.len());
    let mut c_s = Vec::with_capacity(idx.len());
    let mut d_s = Vec::with_capacity(idx.len());
    let mut psi4_s = Vec::with_capacity(idx.len());
    for &i in &idx {
        let s = history.state(i);
        let u_mag = s.pointwise(FieldSelector::Velocity);
        let grad_u = s.pointwise(FieldSelector::GradVelocity);
        let pressure = s.pointwise(FieldSelector::Pressure);
        let grad_psi = s.pointwise(FieldSelector::GradPsi);
        a = a.max(integral_p_scalar(&u_mag, 2.0, &region)? / r);
        b_s.push(integral_p_scalar(&grad_u, 2.0, &region)?);
        c_s.push(integral_p_scalar(&u_mag, 3.0, &region)?);
        d_s.push(integral_p_scalar(&pressure, 1.5, &region)?);
        psi4_s.push(integral_p_scalar(&grad_psi, 4.0, &region)?);
    }
    let b = trapezoid(dt, &b_s) / r;
    let c = trapezoid(dt, &c_s) / (r * r);
    let d = trapezoid(dt, &d_s) / (r * r);
    let gradpsi_l4 = trapezoid(dt, &psi4_s);
    Ok(assemble_report(
        *cyl, r, a, b, c, d, gradpsi_l4, epsilon0, epsilon1,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    cylinder: ParabolicCylinder,
    r: f64,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    gradpsi_l4: f64,
    epsilon0: f64,
    epsilon1: f64,
) -> CknReport {
    let l3_criterion_value = c + (gradpsi_l4 / r).powf(0.75) + d * d;
    let morrey = vec![
        MorreySample {
            field: "u",
            p: 3.0,
            lambda: 3.0,
            value: r.powf(3.0 - 5.0) * (c * r * r),
        },
        MorreySample {
            field: "grad_psi",
            p: 4.0,
            lambda: 2.0,
            value: r.powf(2.0 - 5.0) * gradpsi_l4,
        },
    ];
    let flags = CriterionFlags {
        l3_small: l3_criterion_value < epsilon0.powi(3),
        grad_small: b < epsilon1 * epsilon1,
    };
    CknReport {
        cylinder,
        a,
        b,
        c,
        d,
        gradpsi_l4,
        morrey,
        l3_criterion_value,
        grad_criterion_value: b,
        flags,
    }
}

/// Strict smallness test of the combined cubic quantity against
/// epsilon0^3.
pub fn criterion_l3(report: &CknReport, epsilon0: f64) -> bool {
    report.l3_criterion_value < epsilon0.powi(3)
}

/// Gradient smallness near z0: the limit superior over shrinking radii
/// is approximated by the largest of the two smallest resolvable radii.
pub fn criterion_grad(
    history: &FieldHistory,
    center: [f64; 3],
    t0: f64,
    radii: &[f64],
    epsilon1: f64,
) -> Result<bool> {
    if radii.len() < 2 {
        return Err(Error::InvalidInput(
            "gradient criterion needs at least two radii".into(),
        ));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut worst: f64 = 0.0;
    for &r in &sorted[..2] {
        let cyl = ParabolicCylinder::new(center, t0, r);
        worst = worst.max(b_quantity(history, &cyl)?);
    }
    Ok(worst < epsilon1 * epsilon1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRecord {
    pub cylinder: ParabolicCylinder,
    pub report: CknReport,
    pub flagged: bool,
}

#[derive(Debug, Serialize)]
pub struct ScanOutcome {
    pub records: Vec<ScanRecord>,
    /// Centers skipped because some ladder cylinder left the interior or
    /// the stored window.
    pub skipped: usize,
    pub radii: Vec<f64>,
}

/// Evaluate the gradient criterion on a space-time lattice of centers.
/// Flagged records fail the criterion; the report is computed at the
/// smallest ladder radius. Results are ordered by (time, cell index), so
/// the outcome does not depend on evaluation order.
pub fn scan(history: &FieldHistory, config: &RegularityConfig) -> Result<ScanOutcome> {
    let grid = history.grid().clone();
    config.validate(&grid)?;
    let radii = config.ladder(&grid);
    if radii.len() < 2 {
        return Err(Error::InvalidInput(
            "scan needs a ladder of at least two radii".into(),
        ));
    }
    let r_min = *radii.last().unwrap();
    let two_smallest = [radii[radii.len() - 1], radii[radii.len() - 2]];
    let cache = SliceCache::build(history);
    let lay = Layout::new([grid.cells(0), grid.cells(1), grid.cells(2)]);
    let mut records = Vec::new();
    let mut skipped = 0usize;

    let mut time_indices = Vec::new();
    let mut ti = history.len() - 1;
    loop {
        time_indices.push(ti);
        if ti < config.stride_time {
            break;
        }
        ti -= config.stride_time;
    }
    time_indices.reverse();

    for &it in &time_indices {
        let t0 = history.times()[it];
        let mut c = [0usize; 3];
        loop {
            let center = grid.cell_pos(c);
            let mut usable = true;
            for &r in &radii {
                let cyl = ParabolicCylinder::new(center, t0, r);
                if !cyl.ball_interior(&grid) || cylinder_slices(history, &cyl).is_err() {
                    usable = false;
                    break;
                }
            }
            if usable {
                let mut worst: f64 = 0.0;
                for &r in &two_smallest {
                    let cyl = ParabolicCylinder::new(center, t0, r);
                    worst = worst.max(
                        spacetime_lp_cached(history, &cache.grad_u, 2.0, &cyl)?.integral / r,
                    );
                }
                let flagged = !(worst < config.epsilon1 * config.epsilon1);
                let cyl = ParabolicCylinder::new(center, t0, r_min);
                let report =
                    ckn_from_cache(history, &cache, &cyl, config.epsilon0, config.epsilon1)?;
                records.push(ScanRecord {
                    cylinder: cyl,
                    report,
                    flagged,
                });
            } else {
                skipped += 1;
            }
            // advance the strided odometer over cells
            let mut axis = grid.dims();
            for k in (0..grid.dims()).rev() {
                c[k] += config.stride_space;
                if c[k] < lay.counts[k] {
                    axis = k;
                    break;
                }
                c[k] = 0;
            }
            if axis == grid.dims() {
                break;
            }
        }
    }
    Ok(ScanOutcome {
        records,
        skipped,
        radii,
    })
}

/// Greedy disjoint subfamily by decreasing radius; returns the sum of
/// five times the selected radii (the pre-measure of the covering).
/// Permutations and duplicates of the input do not change the value.
pub fn vitali_cover(flags: &[ParabolicCylinder], grid: &GridSpec) -> f64 {
    let mut sorted: Vec<&ParabolicCylinder> = flags.iter().collect();
    sorted.sort_by(|a, b| {
        b.radius
            .partial_cmp(&a.radius)
            .unwrap()
            .then(a.t0.partial_cmp(&b.t0).unwrap())
            .then(a.center.partial_cmp(&b.center).unwrap())
    });
    let mut chosen: Vec<&ParabolicCylinder> = Vec::new();
    for c in sorted {
        if chosen.iter().all(|s| !s.overlaps(c, grid)) {
            chosen.push(c);
        }
    }
    chosen.iter().map(|c| 5.0 * c.radius).sum()
}

/// Multilinear sample of a cell-centered scalar at a physical point;
/// periodic wrap or zero extension outside walls.
fn sample_cells(f: &ScalarField, p: &[f64; 3]) -> f64 {
    let grid = &f.grid;
    let lay = f.layout();
    let dims = grid.dims();
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dims {
        let l = p[a] / grid.h(a) - 0.5;
        let fl = l.floor();
        base[a] = fl as isize;
        frac[a] = l - fl;
    }
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
            acc += w * f.values[lay.idx(idx)];
        }
    }
    acc
}

fn sample_faces(v: &VectorField, k: usize, p: &[f64; 3]) -> f64 {
    let grid = &v.grid;
    let lay = v.comp_layout(k);
    let dims = grid.dims();
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dims {
        let off = if a == k { 0.0 } else { 0.5 };
        let l = p[a] / grid.h(a) - off;
        let fl = l.floor();
        base[a] = fl as isize;
        frac[a] = l - fl;
    }
    let comp = &v.components[k];
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

/// Parabolic rescaling about z0 = (x0, t0): the returned history lives
/// on a box of the same cell counts with edge lengths L/r0, with x0 at
/// its center and t0 at its final slice; amplitudes follow
/// (r0 u, r0^2 P, n+, n-, psi). Space is interpolated multilinearly and
/// time linearly.
pub fn rescale(
    history: &FieldHistory,
    x0: [f64; 3],
    t0: f64,
    r0: f64,
) -> Result<FieldHistory> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::InvalidInput(format!(
            "rescale needs r0 > 0, got {r0}"
        )));
    }
    let src = history.grid().clone();
    let tol = 1e-9 * history.dt();
    if t0 > history.t_last() + tol || t0 < history.t_first() - tol {
        return Err(Error::Coverage(format!(
            "t0 = {t0} outside stored range"
        )));
    }
    let dims = src.dims();
    let lengths: Vec<f64> = (0..dims).map(|k| src.length(k) / r0).collect();
    let cells: Vec<usize> = (0..dims).map(|k| src.cells(k)).collect();
    let target = GridSpec::new(dims, &cells, &lengths, src.bc())?;
    let tc = target.center();

    let span = t0 - history.t_first();
    let dt_new = history.dt();
    let slices_new = ((span / (r0 * r0) / dt_new).floor() as usize).max(1);
    let t_end_new = slices_new as f64 * dt_new;

    // map a target point into the source box
    let map_x = |x: &[f64; 3]| -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for k in 0..dims {
            let v = x0[k] + r0 * (x[k] - tc[k]);
            match src.bc() {
                BcKind::Periodic => {
                    out[k] = v.rem_euclid(src.length(k));
                }
                BcKind::Wall => {
                    if v < 0.0 || v > src.length(k) {
                        return Err(Error::Coverage(format!(
                            "mapped point {v:.4} outside the source box on axis {k}"
                        )));
                    }
                    out[k] = v;
                }
            }
        }
        Ok(out)
    };

    let mut out = FieldHistory::new();
    for j in 0..=slices_new {
        let t_new = j as f64 * dt_new;
        let t_src = t0 + r0 * r0 * (t_new - t_end_new);
        // bracketing source slices for linear interpolation in time
        let pos = (t_src - history.t_first()) / history.dt();
        let i0 = (pos.floor().max(0.0) as usize).min(history.len() - 1);
        let i1 = (i0 + 1).min(history.len() - 1);
        let wt = (pos - i0 as f64).clamp(0.0, 1.0);
        let s0 = history.state(i0);
        let s1 = history.state(i1);

        let mut s = State::zeros(&target);
        // velocity: r0 * u(source point)
        for k in 0..dims {
            let lay = s.u.comp_layout(k);
            for flat in 0..s.u.components[k].len() {
                let p_t = target.face_pos(k, lay.coords(flat));
                let p_s = map_x(&p_t)?;
                let v0 = sample_faces(&s0.u, k, &p_s);
                let v1 = sample_faces(&s1.u, k, &p_s);
                s.u.components[k][flat] = r0 * ((1.0 - wt) * v0 + wt * v1);
            }
        }
        let lay = s.p.layout();
        for flat in 0..s.p.values.len() {
            let p_t = target.cell_pos(lay.coords(flat));
            let p_s = map_x(&p_t)?;
            let lerp = |f0: &ScalarField, f1: &ScalarField| {
                (1.0 - wt) * sample_cells(f0, &p_s) + wt * sample_cells(f1, &p_s)
            };
            s.p.values[flat] = r0 * r0 * lerp(&s0.p, &s1.p);
            s.n_plus.values[flat] = lerp(&s0.n_plus, &s1.n_plus);
            s.n_minus.values[flat] = lerp(&s0.n_minus, &s1.n_minus);
            s.psi.values[flat] = lerp(&s0.psi, &s1.psi);
        }
        out.push(t_new, s)?;
    }
    Ok(out)
}

/// A nonnegative compactly supported space-time bump with analytic
/// derivatives, the test function of the local energy ledger.
#[derive(Debug, Clone)]
pub struct LocalEnergyProbe {
    pub center: [f64; 3],
    /// Per-axis spatial half-widths of the support.
    pub radii: [f64; 3],
    pub t_center: f64,
    pub t_radius: f64,
    pub amplitude: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// d/ds log bump = -2s/(1-s^2)^2, packaged as bump'.
fn bump_d1(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let q = 1.0 - s * s;
        bump(s) * (-2.0 * s / (q * q))
    } else {
        0.0
    }
}

fn bump_d2(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let q = 1.0 - s * s;
        let g = -2.0 * s / (q * q);
        let gp = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
        bump(s) * (g * g + gp)
    } else {
        0.0
    }
}

impl LocalEnergyProbe {
    pub fn value(&self, x: &[f64; 3], t: f64, dims: usize) -> f64 {
        let mut v = self.amplitude * bump((t - self.t_center) / self.t_radius);
        for k in 0..dims {
            v *= bump((x[k] - self.center[k]) / self.radii[k]);
        }
        v
    }

    pub fn dt(&self, x: &[f64; 3], t: f64, dims: usize) -> f64 {
        let mut v = self.amplitude * bump_d1((t - self.t_center) / self.t_radius)
            / self.t_radius;
        for k in 0..dims {
            v *= bump((x[k] - self.center[k]) / self.radii[k]);
        }
        v
    }

    pub fn grad(&self, x: &[f64; 3], t: f64, dims: usize) -> [f64; 3] {
        let tb = bump((t - self.t_center) / self.t_radius);
        let spatial: Vec<f64> = (0..dims)
            .map(|k| (x[k] - self.center[k]) / self.radii[k])
            .collect();
        let mut out = [0.0; 3];
        for k in 0..dims {
            let mut v = self.amplitude * tb * bump_d1(spatial[k]) / self.radii[k];
            for j in 0..dims {
                if j != k {
                    v *= bump(spatial[j]);
                }
            }
            out[k] = v;
        }
        out
    }

    pub fn laplacian(&self, x: &[f64; 3], t: f64, dims: usize) -> f64 {
        let tb = bump((t - self.t_center) / self.t_radius);
        let spatial: Vec<f64> = (0..dims)
            .map(|k| (x[k] - self.center[k]) / self.radii[k])
            .collect();
        let mut acc = 0.0;
        for k in 0..dims {
            let mut v =
                self.amplitude * tb * bump_d2(spatial[k]) / (self.radii[k] * self.radii[k]);
            for j in 0..dims {
                if j != k {
                    v *= bump(spatial[j]);
                }
            }
            acc += v;
        }
        acc
    }

    fn support_ok(&self, history: &FieldHistory) -> Result<()> {
        let grid = history.grid();
        for k in 0..grid.dims() {
            if self.center[k] - self.radii[k] < 0.0
                || self.center[k] + self.radii[k] > grid.length(k)
            {
                return Err(Error::Coverage(format!(
                    "probe support leaves the box on axis {k}"
                )));
            }
        }
        let tol = 1e-9 * history.dt();
        if self.t_center - self.t_radius < history.t_first() - tol
            || self.t_center + self.t_radius > history.t_last() + tol
        {
            return Err(Error::Coverage(
                "probe support leaves the stored time range".into(),
            ));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidInput(
                "probe amplitude must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// RHS minus LHS of the local energy identity tested against the probe:
/// nonnegative (up to discretization) for the inequality, near zero for
/// trajectories satisfying the equality.
pub fn local_energy_residual(
    history: &FieldHistory,
    probe: &LocalEnergyProbe,
) -> Result<f64> {
    probe.support_ok(history)?;
    let grid = history.grid().clone();
    let dims = grid.dims();
    let vol = grid.cell_volume();
    let lay = Layout::new([grid.cells(0), grid.cells(1), grid.cells(2)]);

    let mut lhs_samples = Vec::with_capacity(history.len());
    let mut rhs_samples = Vec::with_capacity(history.len());
    for i in 0..history.len() {
        let t = history.times()[i];
        let s = history.state(i);
        let u_cells = ops::components_at_cells(&s.u);
        let jac = ops::jacobian_cells(&s.u);
        let grad_psi = ops::components_at_cells(&ops::gradient(&s.psi));
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for flat in 0..lay.len() {
            let x = grid.cell_pos(lay.coords(flat));
            let phi = probe.value(&x, t, dims);
            let phi_t = probe.dt(&x, t, dims);
            let phi_grad = probe.grad(&x, t, dims);
            let phi_lap = probe.laplacian(&x, t, dims);
            if phi == 0.0 && phi_t == 0.0 {
                continue;
            }
            let mut u2 = 0.0;
            let mut grad_u2 = 0.0;
            for k in 0..dims {
                u2 += u_cells[k].values[flat] * u_cells[k].values[flat];
                for j in 0..dims {
                    grad_u2 += jac[k][j].values[flat] * jac[k][j].values[flat];
                }
            }
            lhs += 2.0 * grad_u2 * phi;
            rhs += u2 * (phi_t + phi_lap);
            // (|u|^2 + 2P) u . grad(phi)
            let mut udotg = 0.0;
            for k in 0..dims {
                udotg += u_cells[k].values[flat] * phi_grad[k];
            }
            rhs += (u2 + 2.0 * s.p.values[flat]) * udotg;
            // -2 (grad psi (x) grad psi - |grad psi|^2 I / 2) : grad(u phi)
            let mut gpsi2 = 0.0;
            for k in 0..dims {
                gpsi2 += grad_psi[k].values[flat] * grad_psi[k].values[flat];
            }
            let mut contraction = 0.0;
            for k in 0..dims {
                for j in 0..dims {
                    let s_kj = grad_psi[k].values[flat] * grad_psi[j].values[flat]
                        - if k == j { 0.5 * gpsi2 } else { 0.0 };
                    let grad_uphi = phi * jac[k][j].values[flat]
                        + u_cells[k].values[flat] * phi_grad[j];
                    contraction += s_kj * grad_uphi;
                }
            }
            rhs -= 2.0 * contraction;
        }
        lhs_samples.push(lhs * vol);
        rhs_samples.push(rhs * vol);
    }
    let dt = history.dt();
    Ok(trapezoid(dt, &rhs_samples) - trapezoid(dt, &lhs_samples))
}

/// Both sides of a checked inequality with its configurable constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

fn check_pair(lhs: f64, rhs: f64) -> LemmaCheck {
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    LemmaCheck { lhs, rhs, ratio }
}

/// Single-slice interpolation inequality on the centered ball of radius
/// `r`: |u|_q^q against the gradient/energy product with constant `c`.
pub fn check_interpolation(
    u: &VectorField,
    r: f64,
    q: f64,
    c: f64,
) -> Result<LemmaCheck> {
    if !(2.0..=6.0).contains(&q) {
        return Err(Error::InvalidInput(format!(
            "interpolation exponent must lie in [2, 6], got {q}"
        )));
    }
    let grid = &u.grid;
    let region = Region::Ball {
        center: grid.center(),
        radius: r,
    };
    let mut u_mag = ops::magnitude_sq_cells(u);
    for v in &mut u_mag.values {
        *v = v.sqrt();
    }
    let mut grad_mag = ops::jacobian_sq_cells(u);
    for v in &mut grad_mag.values {
        *v = v.sqrt();
    }
    let lhs = integral_p_scalar(&u_mag, q, &region)?;
    let l2 = integral_p_scalar(&u_mag, 2.0, &region)?;
    let grad_l2 = integral_p_scalar(&grad_mag, 2.0, &region)?;
    let a = 1.5 * (1.0 - q / 6.0);
    let rhs = c * grad_l2.powf(q / 2.0 - a) * l2.powf(a)
        + c * r.powf(3.0 * (1.0 - q / 2.0)) * l2.powf(q / 2.0);
    Ok(check_pair(lhs, rhs))
}

/// The cubic-quantity bound C(r) <= C0 [ (r/rho)^3 A^{3/2}(rho) +
/// (rho/r)^3 A^{3/4}(rho) B^{3/4}(rho) ], evaluated at the top-center of
/// the history.
pub fn check_cr(history: &FieldHistory, r: f64, rho: f64, c0: f64) -> Result<LemmaCheck> {
    if !(r > 0.0 && r <= rho) {
        return Err(Error::InvalidInput(format!(
            "need 0 < r <= rho, got r = {r}, rho = {rho}"
        )));
    }
    let grid = history.grid();
    let center = grid.center();
    let t0 = history.t_last();
    let small = ckn(history, &ParabolicCylinder::new(center, t0, r))?;
    let big = ckn(history, &ParabolicCylinder::new(center, t0, rho))?;
    let rhs = c0
        * ((r / rho).powi(3) * big.a.powf(1.5)
            + (rho / r).powi(3) * big.a.powf(0.75) * big.b.powf(0.75));
    Ok(check_pair(small.c, rhs))
}

/// The pressure bound D(r) <= C [ (r/rho) D(rho) + (rho/r)^2
/// A^{3/4}(rho) B^{3/4}(rho) + (rho/r)^2 rho^{3/2} ].
pub fn check_dr(history: &FieldHistory, r: f64, rho: f64, c: f64) -> Result<LemmaCheck> {
    if !(r > 0.0 && r <= 0.5 * rho) {
        return Err(Error::InvalidInput(format!(
            "need 0 < r <= rho/2, got r = {r}, rho = {rho}"
        )));
    }
    let grid = history.grid();
    let center = grid.center();
    let t0 = history.t_last();
    let small = ckn(history, &ParabolicCylinder::new(center, t0, r))?;
    let big = ckn(history, &ParabolicCylinder::new(center, t0, rho))?;
    let rhs = c
        * ((r / rho) * big.d
            + (rho / r).powi(2) * big.a.powf(0.75) * big.b.powf(0.75)
            + (rho / r).powi(2) * rho.powf(1.5));
    Ok(check_pair(small.d, rhs))
}

/// Sampled Morrey seminorm: the sup over the given centers and radii of
/// r^{lambda-5} times the space-time p-integral of the selected field.
pub fn morrey_norm(
    history: &FieldHistory,
    sel: FieldSelector,
    p: f64,
    lambda: f64,
    centers: &[([f64; 3], f64)],
    radii: &[f64],
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("need p >= 1, got {p}")));
    }
    if !(0.0..=5.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "need lambda in [0, 5], got {lambda}"
        )));
    }
    let grid = history.grid().clone();
    let slices: Vec<ScalarField> = (0..history.len())
        .map(|i| history.state(i).pointwise(sel))
        .collect();
    let mut best: Option<f64> = None;
    for &(x, t) in centers {
        for &r in radii {
            let cyl = ParabolicCylinder::new(x, t, r);
            if !cyl.ball_interior(&grid) {
                continue;
            }
            match spacetime_lp_cached(history, &slices, p, &cyl) {
                Ok(v) => {
                    let m = r.powf(lambda - 5.0) * v.integral;
                    best = Some(best.map_or(m, |b: f64| b.max(m)));
                }
                Err(Error::Coverage(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    best.ok_or_else(|| Error::Coverage("no usable cylinder in the sample set".into()))
}

/// JSON report of a scan plus a CSV summary, the analysis output pair.
pub fn render_reports(outcome: &ScanOutcome) -> (String, String) {
    let json = serde_json::to_string_pretty(outcome).expect("reports serialize");
    let mut csv = String::from(
        "t0,x0,x1,x2,radius,a,b,c,d,gradpsi_l4,l3_value,grad_value,flagged\n",
    );
    for rec in &outcome.records {
        let r = &rec.report;
        csv.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            rec.cylinder.t0,
            rec.cylinder.center[0],
            rec.cylinder.center[1],
            rec.cylinder.center[2],
            rec.cylinder.radius,
            r.a,
            r.b,
            r.c,
            r.d,
            r.gradpsi_l4,
            r.l3_criterion_value,
            r.grad_criterion_value,
            rec.flagged
        ));
    }
    (json, csv)
}
