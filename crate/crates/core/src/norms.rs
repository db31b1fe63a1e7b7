//! Integral norms over regions and parabolic cylinders.
//!
//! Midpoint (cell-center) quadrature everywhere; cells cut by a ball
//! boundary are counted by center inclusion, an O(h) effect that every
//! cylinder-quantity tolerance budgets for. Time integrals use the
//! trapezoid rule over stored slices.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::{BcKind, GridSpec};
use crate::history::{FieldHistory, FieldSelector};
use crate::ops;

/// Spatial integration region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    WholeDomain,
    /// Open ball; membership by cell-center inclusion, wrapped on
    /// periodic boxes.
    Ball { center: [f64; 3], radius: f64 },
}

/// Backward parabolic cylinder Q_r(z0) = B_r(x0) x (t0 - r^2, t0].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParabolicCylinder {
    pub center: [f64; 3],
    pub t0: f64,
    pub radius: f64,
}

impl ParabolicCylinder {
    pub fn new(center: [f64; 3], t0: f64, radius: f64) -> Self {
        ParabolicCylinder { center, t0, radius }
    }

    pub fn t_bottom(&self) -> f64 {
        self.t0 - self.radius * self.radius
    }

    pub fn ball(&self) -> Region {
        Region::Ball {
            center: self.center,
            radius: self.radius,
        }
    }

    /// True when the spatial ball sits strictly inside a wall box (always
    /// true on periodic boxes when the ball fits) — interior regularity
    /// scans skip everything else.
    pub fn ball_interior(&self, grid: &GridSpec) -> bool {
        match grid.bc() {
            BcKind::Periodic => 2.0 * self.radius < grid.length_min(),
            BcKind::Wall => (0..grid.dims()).all(|k| {
                self.center[k] - self.radius > 0.0
                    && self.center[k] + self.radius < grid.length(k)
            }),
        }
    }

    /// Does two cylinders' space-time extent overlap (parabolic metric
    /// geometry: product of balls and backward time intervals)?
    pub fn overlaps(&self, other: &ParabolicCylinder, grid: &GridSpec) -> bool {
        let d = grid.distance(&self.center, &other.center);
        if d >= self.radius + other.radius {
            return false;
        }
        let (a0, a1) = (self.t_bottom(), self.t0);
        let (b0, b1) = (other.t_bottom(), other.t0);
        a0 < b1 && b0 < a1
    }
}

/// Parabolic distance max(|x-y|, sqrt|t-s|).
pub fn parabolic_distance(grid: &GridSpec, a: (&[f64; 3], f64), b: (&[f64; 3], f64)) -> f64 {
    let dx = grid.distance(a.0, b.0);
    dx.max((a.1 - b.1).abs().sqrt())
}

/// Flat indices of cells whose centers fall inside the region.
pub fn region_cells(grid: &GridSpec, region: &Region) -> Vec<usize> {
    let lay = crate::grid::Layout::new([grid.cells(0), grid.cells(1), grid.cells(2)]);
    match region {
        Region::WholeDomain => (0..lay.len()).collect(),
        Region::Ball { center, radius } => (0..lay.len())
            .filter(|&flat| {
                let x = grid.cell_pos(lay.coords(flat));
                grid.distance(&x, center) < *radius
            })
            .collect(),
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidInput(format!("lp norm needs p >= 1, got {p}")));
    }
    Ok(())
}

/// Raw integral of |f|^p over the region.
pub fn integral_p_scalar(f: &ScalarField, p: f64, region: &Region) -> Result<f64> {
    check_p(p)?;
    let vol = f.grid.cell_volume();
    let sum: f64 = match region {
        Region::WholeDomain => f.values.iter().map(|v| v.abs().powf(p)).sum(),
        _ => region_cells(&f.grid, region)
            .into_iter()
            .map(|i| f.values[i].abs().powf(p))
            .sum(),
    };
    Ok(sum * vol)
}

/// (integral |f|^p vol)^{1/p} for a scalar field.
pub fn lp_norm_scalar(f: &ScalarField, p: f64, region: &Region) -> Result<f64> {
    Ok(integral_p_scalar(f, p, region)?.powf(1.0 / p))
}

/// Lp norm of a MAC field via its cell-centered magnitude.
pub fn lp_norm_vector(v: &VectorField, p: f64, region: &Region) -> Result<f64> {
    check_p(p)?;
    let mut mag = ops::magnitude_sq_cells(v);
    for x in &mut mag.values {
        *x = x.sqrt();
    }
    lp_norm_scalar(&mag, p, region)
}

/// Result of a space-time Lp evaluation over a cylinder.
#[derive(Debug, Clone, Copy)]
pub struct SpaceTimeLp {
    /// Raw integral of |f|^p over Q_r.
    pub integral: f64,
    /// integral^{1/p}.
    pub norm: f64,
}

/// Check that the history covers the cylinder's time window and return
/// the participating slice indices.
pub fn cylinder_slices(history: &FieldHistory, cyl: &ParabolicCylinder) -> Result<Vec<usize>> {
    if history.len() < 2 {
        return Err(Error::Coverage(
            "need at least two stored slices for a time window".into(),
        ));
    }
    let tol = 1e-9 * history.dt();
    if cyl.t_bottom() < history.t_first() - tol || cyl.t0 > history.t_last() + tol {
        return Err(Error::Coverage(format!(
            "window ({:.6}, {:.6}] outside stored range [{:.6}, {:.6}]",
            cyl.t_bottom(),
            cyl.t0,
            history.t_first(),
            history.t_last()
        )));
    }
    let idx = history.indices_in(cyl.t_bottom(), cyl.t0);
    if idx.len() < 2 {
        return Err(Error::Coverage(format!(
            "window ({:.6}, {:.6}] intersects fewer than two slices",
            cyl.t_bottom(),
            cyl.t0
        )));
    }
    Ok(idx)
}

/// Trapezoid-in-time integral of |f|^p over the cylinder for the selected
/// quantity, plus its p-th root.
pub fn spacetime_lp(
    history: &FieldHistory,
    sel: FieldSelector,
    p: f64,
    cyl: &ParabolicCylinder,
) -> Result<SpaceTimeLp> {
    check_p(p)?;
    let idx = cylinder_slices(history, cyl)?;
    let region = cyl.ball();
    let samples: Vec<f64> = idx
        .iter()
        .map(|&i| integral_p_scalar(&history.state(i).pointwise(sel), p, &region))
        .collect::<Result<_>>()?;
    let integral = trapezoid(history.dt(), &samples);
    Ok(SpaceTimeLp {
        integral,
        norm: integral.powf(1.0 / p),
    })
}

/// Same as `spacetime_lp` but over precomputed per-slice pointwise
/// fields aligned with the history, used by scans that reuse slices for
/// many cylinders.
pub fn spacetime_lp_cached(
    history: &FieldHistory,
    slices: &[ScalarField],
    p: f64,
    cyl: &ParabolicCylinder,
) -> Result<SpaceTimeLp> {
    check_p(p)?;
    let idx = cylinder_slices(history, cyl)?;
    let region = cyl.ball();
    let samples: Vec<f64> = idx
        .iter()
        .map(|&i| integral_p_scalar(&slices[i], p, &region))
        .collect::<Result<_>>()?;
    let integral = trapezoid(history.dt(), &samples);
    Ok(SpaceTimeLp {
        integral,
        norm: integral.powf(1.0 / p),
    })
}

pub fn trapezoid(dt: f64, samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let mut s = 0.5 * (samples[0] + samples[samples.len() - 1]);
    for v in &samples[1..samples.len() - 1] {
        s += v;
    }
    s * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::State;
    use std::f64::consts::PI;

    fn pgrid(n: usize) -> GridSpec {
        GridSpec::new(3, &[n, n, n], &[1.0, 1.0, 1.0], BcKind::Periodic).unwrap()
    }

    #[test]
    fn rejects_p_below_one() {
        let g = pgrid(8);
        let f = ScalarField::constant(&g, 1.0);
        assert!(lp_norm_scalar(&f, 0.5, &Region::WholeDomain).is_err());
    }

    #[test]
    fn constant_on_whole_box() {
        // volume 1 box: ||1||_p = 1 for any p
        let g = pgrid(8);
        let f = ScalarField::constant(&g, 1.0);
        for p in [1.5, 5.0 / 3.0, 2.0, 3.0, 4.0, 6.0] {
            let n = lp_norm_scalar(&f, p, &Region::WholeDomain).unwrap();
            assert!((n - 1.0).abs() < 1e-13);
        }
        // scaled box: ||1||_p = V^{1/p}
        let g2 = GridSpec::new(2, &[16, 16], &[2.0, 3.0], BcKind::Periodic).unwrap();
        let f2 = ScalarField::constant(&g2, 1.0);
        let n = lp_norm_scalar(&f2, 2.0, &Region::WholeDomain).unwrap();
        assert!((n - 6.0f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn ball_volume_against_voxel_oracle() {
        // center-inclusion quadrature approximates the analytic ball
        // volume to O(h) relative error
        for n in [16usize, 32] {
            let g = pgrid(n);
            let f = ScalarField::constant(&g, 1.0);
            let r = 0.3;
            let region = Region::Ball {
                center: [0.5, 0.5, 0.5],
                radius: r,
            };
            let got = integral_p_scalar(&f, 2.0, &region).unwrap();
            let exact = 4.0 / 3.0 * PI * r * r * r;
            let rel = (got - exact).abs() / exact;
            // O(h) with a modest constant; h = 1/n
            assert!(
                rel < 3.0 / n as f64,
                "n = {n}: relative gap {rel} too large"
            );
        }
    }

    #[test]
    fn single_cell_spike_l2() {
        let g = pgrid(8);
        let mut f = ScalarField::zeros(&g);
        f.values[100] = 7.0;
        let n = lp_norm_scalar(&f, 2.0, &Region::WholeDomain).unwrap();
        let cell_vol = g.cell_volume();
        assert!((n - cell_vol.sqrt() * 7.0).abs() < 1e-13);
    }

    #[test]
    fn absolute_homogeneity() {
        let g = pgrid(8);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin() + 0.3 * x[1]);
        for p in [1.5, 2.0, 3.0] {
            let n1 = lp_norm_scalar(&f, p, &Region::WholeDomain).unwrap();
            let mut g2 = f.clone();
            g2.scale(-2.5);
            let n2 = lp_norm_scalar(&g2, p, &Region::WholeDomain).unwrap();
            assert!((n2 - 2.5 * n1).abs() / n2 < 1e-13);
        }
    }

    fn history_of(times: &[f64], f: impl Fn(f64) -> State) -> FieldHistory {
        let states = times.iter().map(|&t| f(t)).collect();
        FieldHistory::from_slices(times.to_vec(), states).unwrap()
    }

    #[test]
    fn spacetime_constant_velocity() {
        // |u| = c over the cylinder: integral = c^3 * |B_r| * r^2 up to
        // ball quadrature error
        let g = pgrid(24);
        let c = 1.7;
        let times: Vec<f64> = (0..=16).map(|i| i as f64 * 0.005).collect();
        let h = history_of(&times, |_| {
            let mut s = State::zeros(&g);
            for comp in &mut s.u.components {
                for v in comp.iter_mut() {
                    *v = c / 3.0f64.sqrt();
                }
            }
            s
        });
        let r = 0.25f64;
        let cyl = ParabolicCylinder::new([0.5, 0.5, 0.5], 0.08, r);
        let got = spacetime_lp(&h, FieldSelector::Velocity, 3.0, &cyl).unwrap();
        let exact = c.powi(3) * (4.0 / 3.0 * PI * r.powi(3)) * (r * r);
        let rel = (got.integral - exact).abs() / exact;
        assert!(rel < 0.2, "relative gap {rel}");
    }

    #[test]
    fn spacetime_time_linear_matches_hand_integral() {
        // f(t) = t, p = 1 on the whole box (ball covering the box center
        // area): trapezoid is exact for linear integrands
        let g = pgrid(8);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.01).collect();
        let h = history_of(&times, |t| {
            let mut s = State::zeros(&g);
            s.p = ScalarField::constant(&g, t);
            s
        });
        let r = 0.3f64;
        let cyl = ParabolicCylinder::new([0.5, 0.5, 0.5], 0.1, r);
        // window (0.01, 0.1]: slices 0.02..=0.1 -> wait, bottom = 0.1-0.09=0.01
        let got = spacetime_lp(&h, FieldSelector::Pressure, 1.0, &cyl).unwrap();
        // voxel ball volume for exactness of the spatial factor
        let ball_vol = region_cells(&g, &cyl.ball()).len() as f64 * g.cell_volume();
        // slices at t = 0.01..0.1: trapezoid of t over [0.01, 0.1]
        let exact_time = 0.5 * (0.01 + 0.1) * 0.09;
        let exact = ball_vol * exact_time;
        assert!(
            ((got.integral - exact) / exact).abs() < 1e-12,
            "got {} vs {}",
            got.integral,
            exact
        );
    }

    #[test]
    fn coverage_error_when_window_missing() {
        let g = pgrid(8);
        let times: Vec<f64> = (0..=4).map(|i| 0.1 + i as f64 * 0.01).collect();
        let h = history_of(&times, |_| State::zeros(&g));
        let cyl = ParabolicCylinder::new([0.5, 0.5, 0.5], 0.14, 0.5);
        let err = spacetime_lp(&h, FieldSelector::Velocity, 3.0, &cyl);
        assert!(matches!(err, Err(Error::Coverage(_))));
    }

    #[test]
    fn cylinder_overlap_geometry() {
        let g = pgrid(8);
        let a = ParabolicCylinder::new([0.5, 0.5, 0.5], 0.1, 0.1);
        let b = ParabolicCylinder::new([0.55, 0.5, 0.5], 0.1, 0.1);
        let c = ParabolicCylinder::new([0.5, 0.5, 0.5], 0.3, 0.1);
        assert!(a.overlaps(&b, &g));
        // c's window (0.29, 0.3] is disjoint from a's (0.09, 0.1]
        assert!(!a.overlaps(&c, &g));
    }
}
