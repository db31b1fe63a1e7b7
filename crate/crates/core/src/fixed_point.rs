//! The charge-pair contraction map: freeze the potential from a guessed
//! trajectory, evolve the linear transport system, measure distances in
//! the L4-in-time / L2-in-space norm, and iterate to the fixed point.
//! When the measured ratios stall at or above one, the horizon is
//! shrunk and the iteration restarts, mirroring the small-time argument
//! behind the construction.

use crate::elliptic::EllipticSolver;
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::GridSpec;
use crate::nernst_planck::{np_step, solve_potential, NPStepParams};
use crate::norms::trapezoid;

/// A charge-pair trajectory on a uniform time grid over [0, T].
#[derive(Debug, Clone)]
pub struct YTState {
    times: Vec<f64>,
    pub n_plus: Vec<ScalarField>,
    pub n_minus: Vec<ScalarField>,
}

impl YTState {
    pub fn new(
        times: Vec<f64>,
        n_plus: Vec<ScalarField>,
        n_minus: Vec<ScalarField>,
    ) -> Result<Self> {
        if times.len() < 2 || times.len() != n_plus.len() || times.len() != n_minus.len() {
            return Err(Error::InvalidInput(
                "trajectory needs matching times and at least two slices".into(),
            ));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("time axis must increase".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
                return Err(Error::InvalidInput("non-uniform trajectory spacing".into()));
            }
        }
        let grid = n_plus[0].grid.clone();
        for f in n_plus.iter().chain(&n_minus) {
            if f.grid != grid {
                return Err(Error::InvalidInput(
                    "all slices must share one grid".into(),
                ));
            }
        }
        Ok(YTState {
            times,
            n_plus,
            n_minus,
        })
    }

    pub fn zeros(grid: &GridSpec, steps: usize, dt: f64) -> Result<Self> {
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        let n = times.len();
        Self::new(
            times,
            vec![ScalarField::zeros(grid); n],
            vec![ScalarField::zeros(grid); n],
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> &GridSpec {
        &self.n_plus[0].grid
    }

    /// Slice-wise difference; both trajectories must share the axis.
    pub fn sub(&self, other: &YTState) -> YTState {
        assert_eq!(self.len(), other.len(), "trajectory length mismatch");
        YTState {
            times: self.times.clone(),
            n_plus: self
                .n_plus
                .iter()
                .zip(&other.n_plus)
                .map(|(a, b)| a.sub(b))
                .collect(),
            n_minus: self
                .n_minus
                .iter()
                .zip(&other.n_minus)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for f in self.n_plus.iter_mut().chain(self.n_minus.iter_mut()) {
            f.scale(a);
        }
    }

    /// First `len` slices (a shorter horizon).
    pub fn truncated(&self, len: usize) -> YTState {
        let len = len.clamp(2, self.len());
        YTState {
            times: self.times[..len].to_vec(),
            n_plus: self.n_plus[..len].to_vec(),
            n_minus: self.n_minus[..len].to_vec(),
        }
    }
}

/// The L4([0,T], L2) norm of the pair:
/// ( int_0^T ( ||n+||_2^2 + ||n-||_2^2 )^2 dt )^{1/4}, trapezoid in time.
pub fn yt_norm(y: &YTState) -> f64 {
    let vol = y.grid().cell_volume();
    let samples: Vec<f64> = (0..y.len())
        .map(|i| {
            let a: f64 = y.n_plus[i].values.iter().map(|v| v * v).sum();
            let b: f64 = y.n_minus[i].values.iter().map(|v| v * v).sum();
            let l2sq = (a + b) * vol;
            l2sq * l2sq
        })
        .collect();
    trapezoid(y.dt(), &samples).powf(0.25)
}

/// Drift driving the transport steps of the map.
#[derive(Clone, Copy)]
pub enum Drift<'a> {
    Zero,
    Steady(&'a VectorField),
    PerStep(&'a [VectorField]),
}

impl<'a> Drift<'a> {
    fn at(&self, i: usize, zero: &'a VectorField) -> &'a VectorField {
        match self {
            Drift::Zero => zero,
            Drift::Steady(w) => w,
            Drift::PerStep(ws) => &ws[i.min(ws.len() - 1)],
        }
    }
}

/// One application of the map: solve the potential from the frozen
/// trajectory slice by slice, then advance the transport system from
/// the given initial pair with that frozen potential.
pub fn map_f(
    ybar: &YTState,
    w: Drift<'_>,
    n0: (&ScalarField, &ScalarField),
    params: &NPStepParams,
    solver: &mut EllipticSolver,
) -> Result<YTState> {
    let grid = ybar.grid().clone();
    let zero_w = VectorField::zeros(&grid);
    let steps = ybar.len() - 1;
    let mut n_plus = Vec::with_capacity(steps + 1);
    let mut n_minus = Vec::with_capacity(steps + 1);
    n_plus.push(n0.0.clone());
    n_minus.push(n0.1.clone());
    for i in 0..steps {
        let psi_bar = solve_potential(&ybar.n_plus[i], &ybar.n_minus[i], solver)?;
        let (np1, nm1) = np_step(
            &n_plus[i],
            &n_minus[i],
            w.at(i, &zero_w),
            &psi_bar,
            params,
            solver,
        )?;
        n_plus.push(np1);
        n_minus.push(nm1);
    }
    YTState::new(ybar.times().to_vec(), n_plus, n_minus)
}

/// ||F(y1) - F(y2)|| / ||y1 - y2|| in the trajectory norm.
pub fn contraction_ratio(
    y1: &YTState,
    y2: &YTState,
    w: Drift<'_>,
    n0: (&ScalarField, &ScalarField),
    params: &NPStepParams,
    solver: &mut EllipticSolver,
) -> Result<f64> {
    let denom = yt_norm(&y1.sub(y2));
    if denom < 1e-14 {
        return Err(Error::DegeneratePair(denom));
    }
    let f1 = map_f(y1, w, n0, params, solver)?;
    let f2 = map_f(y2, w, n0, params, solver)?;
    Ok(yt_norm(&f1.sub(&f2)) / denom)
}

#[derive(Debug, Clone, Copy)]
pub struct PicardConfig {
    /// Relative trajectory-norm increment at which to stop.
    pub tol: f64,
    pub max_iters: usize,
    /// Horizon factor applied when the increments stall.
    pub t_shrink: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-8,
            max_iters: 50,
            t_shrink: 0.5,
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy)]
pub struct PicardRecord {
    pub iter: usize,
    /// Increment ratio against the previous iterate (NaN on the first
    /// measurement after a start or restart).
    pub ratio: f64,
    pub increment: f64,
    pub t_end: f64,
}

/// Iterate y <- F(y) to the fixed point. Stalls (increment ratio >= 1)
/// shrink the horizon and restart from the truncated initial guess.
pub fn picard_solve(
    y0: &YTState,
    w: Drift<'_>,
    n0: (&ScalarField, &ScalarField),
    params: &NPStepParams,
    config: &PicardConfig,
    solver: &mut EllipticSolver,
) -> Result<(YTState, Vec<PicardRecord>)> {
    if !(config.t_shrink > 0.0 && config.t_shrink < 1.0) {
        return Err(Error::InvalidInput(format!(
            "t_shrink must lie in (0,1), got {}",
            config.t_shrink
        )));
    }
    let mut y = y0.clone();
    let mut records = Vec::new();
    let mut prev_inc: Option<f64> = None;
    for iter in 1..=config.max_iters {
        let fy = map_f(&y, w, n0, params, solver)?;
        let inc = yt_norm(&fy.sub(&y));
        let scale = yt_norm(&fy).max(1e-300);
        let ratio = match prev_inc {
            Some(p) if p > 1e-300 => inc / p,
            _ => f64::NAN,
        };
        records.push(PicardRecord {
            iter,
            ratio,
            increment: inc,
            t_end: y.t_end(),
        });
        if inc <= config.tol * scale {
            return Ok((fy, records));
        }
        if let Some(p) = prev_inc {
            if inc >= p {
                // stalled: shrink the horizon, restart from the guess
                let new_len = (((y.len() - 1) as f64 * config.t_shrink).ceil() as usize
                    + 1)
                .max(2);
                if new_len >= y.len() {
                    let ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
                    return Err(Error::MaxItersExceeded {
                        max_iters: config.max_iters,
                        last_ratio: ratio,
                        ratios,
                    });
                }
                y = y0.truncated(new_len);
                prev_inc = None;
                continue;
            }
        }
        prev_inc = Some(inc);
        y = fy;
    }
    let ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
    let last = ratios.last().copied().unwrap_or(f64::NAN);
    Err(Error::MaxItersExceeded {
        max_iters: config.max_iters,
        last_ratio: last,
        ratios,
    })
}

/// Bisect the horizon length for the largest prefix of the two probe
/// trajectories whose measured contraction ratio stays at or below
/// `target`. Returns (T*, ratio at T*).
pub fn bisect_contraction_t(
    y1: &YTState,
    y2: &YTState,
    w: Drift<'_>,
    n0: (&ScalarField, &ScalarField),
    params: &NPStepParams,
    target: f64,
    solver: &mut EllipticSolver,
) -> Result<(f64, f64)> {
    assert_eq!(y1.len(), y2.len());
    let full = y1.len();
    let ratio_at = |len: usize, solver: &mut EllipticSolver| -> Result<f64> {
        contraction_ratio(
            &y1.truncated(len),
            &y2.truncated(len),
            w,
            n0,
            params,
            solver,
        )
    };
    let r_full = ratio_at(full, solver)?;
    if r_full <= target {
        return Ok((y1.t_end(), r_full));
    }
    let mut lo = 2usize;
    let r_lo = ratio_at(lo, solver)?;
    if r_lo > target {
        return Err(Error::InvalidInput(format!(
            "even the shortest horizon has ratio {r_lo:.3} > {target}"
        )));
    }
    let mut hi = full;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ratio_at(mid, solver)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = ratio_at(lo, solver)?;
    Ok((y1.times()[lo - 1], r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::EllipticConfig;
    use crate::grid::BcKind;
    use std::f64::consts::PI;

    fn solver() -> EllipticSolver {
        EllipticSolver::new(EllipticConfig::default())
    }

    fn pgrid(n: usize) -> GridSpec {
        GridSpec::new(2, &[n, n], &[1.0, 1.0], BcKind::Periodic).unwrap()
    }

    /// Mean-balanced sinusoidal trajectory with amplitude `a`.
    fn sin_traj(grid: &GridSpec, steps: usize, dt: f64, a: f64, phase: f64) -> YTState {
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        let n_plus = times
            .iter()
            .map(|&t| {
                ScalarField::from_fn(grid, |x| {
                    a * (1.0 + (2.0 * PI * x[0] + phase + t).sin())
                })
            })
            .collect();
        let n_minus = times
            .iter()
            .map(|&t| {
                ScalarField::from_fn(grid, |x| {
                    a * (1.0 + (2.0 * PI * x[1] - phase - t).cos())
                })
            })
            .collect();
        YTState::new(times, n_plus, n_minus).unwrap()
    }

    #[test]
    fn yt_norm_closed_forms() {
        let g = pgrid(8);
        let zero = YTState::zeros(&g, 10, 0.01).unwrap();
        assert_eq!(yt_norm(&zero), 0.0);

        // n+ = c, n- = 0 on unit volume: norm = (T (c^2 V)^2)^{1/4}
        let c = 1.7;
        let steps = 10;
        let dt = 0.02;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        let n = times.len();
        let y = YTState::new(
            times,
            vec![ScalarField::constant(&g, c); n],
            vec![ScalarField::zeros(&g); n],
        )
        .unwrap();
        let t = steps as f64 * dt;
        let expect = (t * (c * c) * (c * c)).powf(0.25);
        assert!((yt_norm(&y) - expect).abs() < 1e-12);

        // homogeneity
        let mut y2 = sin_traj(&g, 8, 0.01, 1.0, 0.3);
        let n1 = yt_norm(&y2);
        y2.scale(-2.5);
        assert!((yt_norm(&y2) - 2.5 * n1).abs() / (2.5 * n1) < 1e-13);
    }

    #[test]
    fn balanced_guess_decouples_to_pure_diffusion() {
        let g = pgrid(16);
        let steps = 6;
        let dt = 1e-3;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        let same = ScalarField::from_fn(&g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin());
        let ybar = YTState::new(
            times,
            vec![same.clone(); steps + 1],
            vec![same.clone(); steps + 1],
        )
        .unwrap();
        let n0p = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[1]).cos());
        let n0m = ScalarField::constant(&g, 1.3);
        let params = NPStepParams::new(dt);
        let out = map_f(&ybar, Drift::Zero, (&n0p, &n0m), &params, &mut solver()).unwrap();
        // oracle: the same evolution with the potential identically zero
        let mut s = solver();
        let zero_psi = ScalarField::zeros(&g);
        let zero_w = VectorField::zeros(&g);
        let (mut ap, mut am) = (n0p.clone(), n0m.clone());
        for i in 0..steps {
            let (p1, m1) = np_step(&ap, &am, &zero_w, &zero_psi, &params, &mut s).unwrap();
            ap = p1;
            am = m1;
            assert_eq!(out.n_plus[i + 1].values, ap.values);
            assert_eq!(out.n_minus[i + 1].values, am.values);
        }
    }

    #[test]
    fn zero_guess_keeps_constants_steady() {
        let g = pgrid(16);
        let ybar = YTState::zeros(&g, 8, 1e-3).unwrap();
        let n0 = ScalarField::constant(&g, 2.0);
        let params = NPStepParams::new(1e-3);
        let out = map_f(&ybar, Drift::Zero, (&n0, &n0), &params, &mut solver()).unwrap();
        for i in 0..out.len() {
            for v in out.n_plus[i].values.iter().chain(&out.n_minus[i].values) {
                assert!((v - 2.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degenerate_pair_rejected() {
        let g = pgrid(8);
        let y = sin_traj(&g, 6, 1e-3, 0.5, 0.0);
        let n0 = ScalarField::constant(&g, 1.0);
        let r = contraction_ratio(
            &y,
            &y.clone(),
            Drift::Zero,
            (&n0, &n0),
            &NPStepParams::new(1e-3),
            &mut solver(),
        );
        assert!(matches!(r, Err(Error::DegeneratePair(_))));
    }

    #[test]
    fn ratio_below_one_and_monotone_under_halving() {
        let g = pgrid(16);
        let dt = 5e-4;
        let steps = 64;
        let y1 = sin_traj(&g, steps, dt, 0.8, 0.0);
        let y2 = sin_traj(&g, steps, dt, 0.8, 0.9);
        let n0 = ScalarField::constant(&g, 1.0);
        let params = NPStepParams::new(dt);
        let mut s = solver();
        let mut prev = f64::INFINITY;
        let mut len = steps + 1;
        for _ in 0..5 {
            let r = contraction_ratio(
                &y1.truncated(len),
                &y2.truncated(len),
                Drift::Zero,
                (&n0, &n0),
                &params,
                &mut s,
            )
            .unwrap();
            assert!(r < 1.0, "ratio {r} not contractive at len {len}");
            assert!(
                r <= prev * (1.0 + 1e-9),
                "halving the horizon increased the ratio: {prev} -> {r}"
            );
            prev = r;
            len = (len / 2).max(2);
        }
    }

    #[test]
    fn picard_zero_charges_goes_to_zero() {
        let g = pgrid(16);
        let y0 = sin_traj(&g, 8, 1e-3, 0.2, 0.4); // nonzero guess
        let zero = ScalarField::zeros(&g);
        let (fix, recs) = picard_solve(
            &y0,
            Drift::Zero,
            (&zero, &zero),
            &NPStepParams::new(1e-3),
            &PicardConfig::default(),
            &mut solver(),
        )
        .unwrap();
        assert!(!recs.is_empty());
        assert!(yt_norm(&fix) < 1e-12, "fixed point should vanish");
    }

    #[test]
    fn picard_restarts_from_fixed_point_in_one_iteration() {
        let g = pgrid(16);
        let dt = 1e-3;
        let steps = 8;
        let n0p = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).sin());
        let n0m = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (2.0 * PI * x[1]).sin());
        let y0 = YTState::zeros(&g, steps, dt).unwrap();
        let params = NPStepParams::new(dt);
        let cfg = PicardConfig::default();
        let mut s = solver();
        let (fix, _) =
            picard_solve(&y0, Drift::Zero, (&n0p, &n0m), &params, &cfg, &mut s).unwrap();
        let (fix2, recs) =
            picard_solve(&fix, Drift::Zero, (&n0p, &n0m), &params, &cfg, &mut s).unwrap();
        assert_eq!(recs.len(), 1, "restart from the fixed point: {recs:?}");
        let gap = yt_norm(&fix2.sub(&fix));
        assert!(gap <= 10.0 * cfg.tol * yt_norm(&fix).max(1e-300));
    }

    #[test]
    fn picard_limit_matches_direct_coupled_evolution() {
        let g = pgrid(16);
        let dt = 1e-3;
        let steps = 12;
        let n0p = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).sin());
        let n0m = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * (2.0 * PI * x[1]).cos());
        let params = NPStepParams::new(dt);
        let cfg = PicardConfig::default();
        let mut s = solver();
        let y0 = YTState::zeros(&g, steps, dt).unwrap();
        let (fix, _) =
            picard_solve(&y0, Drift::Zero, (&n0p, &n0m), &params, &cfg, &mut s).unwrap();
        // independent oracle: self-consistent potential each step
        let zero_w = VectorField::zeros(&g);
        let (mut ap, mut am) = (n0p.clone(), n0m.clone());
        let mut worst = 0.0f64;
        for i in 0..steps {
            let psi = solve_potential(&ap, &am, &mut s).unwrap();
            let (p1, m1) = np_step(&ap, &am, &zero_w, &psi, &params, &mut s).unwrap();
            ap = p1;
            am = m1;
            let dp = fix.n_plus[i + 1].sub(&ap).max_abs();
            let dm = fix.n_minus[i + 1].sub(&am).max_abs();
            worst = worst.max(dp).max(dm);
        }
        let scale = yt_norm(&fix);
        assert!(
            worst <= 10.0 * cfg.tol * scale.max(1.0),
            "picard limit vs direct evolution gap {worst}"
        );
    }

    #[test]
    fn two_starts_agree_on_the_fixed_point() {
        let g = pgrid(16);
        let dt = 1e-3;
        let steps = 10;
        let n0p = ScalarField::from_fn(&g, |x| 1.0 + 0.25 * (2.0 * PI * x[0]).sin());
        let mut n0m = ScalarField::constant(&g, 1.0);
        let excess = n0p.integral() - n0m.integral();
        for v in &mut n0m.values {
            *v += excess;
        }
        let params = NPStepParams::new(dt);
        let cfg = PicardConfig::default();
        let mut s = solver();
        let (fa, _) = picard_solve(
            &YTState::zeros(&g, steps, dt).unwrap(),
            Drift::Zero,
            (&n0p, &n0m),
            &params,
            &cfg,
            &mut s,
        )
        .unwrap();
        let (fb, _) = picard_solve(
            &sin_traj(&g, steps, dt, 0.5, 1.1),
            Drift::Zero,
            (&n0p, &n0m),
            &params,
            &cfg,
            &mut s,
        )
        .unwrap();
        let gap = yt_norm(&fa.sub(&fb));
        assert!(
            gap <= 10.0 * cfg.tol * yt_norm(&fa).max(1e-300),
            "distinct starts disagree by {gap}"
        );
    }

    #[test]
    fn gateaux_stability_of_the_ratio() {
        // ratio(y1 + delta e, y1) stays bounded (by 1 at this small T)
        // as delta -> 0
        let g = pgrid(16);
        let dt = 5e-4;
        let steps = 8;
        let y1 = sin_traj(&g, steps, dt, 0.6, 0.0);
        let n0 = ScalarField::constant(&g, 1.0);
        let params = NPStepParams::new(dt);
        let mut s = solver();
        let mut ratios = Vec::new();
        for delta in [1e-2, 1e-3, 1e-4, 1e-5] {
            let mut bump = sin_traj(&g, steps, dt, 1.0, 0.7);
            bump.scale(delta);
            let mut y2 = y1.clone();
            for i in 0..y2.len() {
                y2.n_plus[i].axpy(1.0, &bump.n_plus[i]);
                y2.n_minus[i].axpy(1.0, &bump.n_minus[i]);
            }
            let r = contraction_ratio(&y2, &y1, Drift::Zero, (&n0, &n0), &params, &mut s)
                .unwrap();
            ratios.push(r);
            assert!(r <= 1.0, "ratio {r} above 1 at certified small T");
        }
        // the directional limit exists: consecutive values settle
        let tail_gap = (ratios[2] - ratios[3]).abs();
        assert!(
            tail_gap < 0.1 * ratios[3].max(1e-6) + 1e-6,
            "ratios not settling: {ratios:?}"
        );
    }
}
