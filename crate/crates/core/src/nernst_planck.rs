//! One IMEX step of the two-species charge transport: explicit
//! conservative drift advection and clipped electro-flux, implicit
//! diffusion. All fluxes live on faces so each species' mass is
//! conserved to roundoff under periodic or no-flux boundaries.

use crate::elliptic::{EllipticSolver, HelmholtzBc};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::BcKind;
use crate::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvectionScheme {
    /// Arithmetic-mean face values (energy friendly).
    Centered,
    /// Donor-cell face values (robustness runs).
    Upwind,
}

#[derive(Debug, Clone, Copy)]
pub struct NPStepParams {
    pub dt: f64,
    /// Clip the species value inside the electro-flux; the state itself
    /// is never clipped, undershoots stay visible as diagnostics.
    pub clip_in_flux: bool,
    pub advection: AdvectionScheme,
}

impl NPStepParams {
    pub fn new(dt: f64) -> Self {
        NPStepParams {
            dt,
            clip_in_flux: true,
            advection: AdvectionScheme::Centered,
        }
    }
}

/// Largest stable advective dt for the drift field (infinite when at
/// rest).
pub fn cfl_limit(w: &VectorField) -> f64 {
    let vmax = w.max_speed();
    if vmax == 0.0 {
        f64::INFINITY
    } else {
        w.grid.h_min() / vmax
    }
}

/// Divergence of the face flux `n_face * w`, with `n_face` by centered
/// mean or donor-cell upwinding. Wall faces carry no flux because the
/// drift's normal component vanishes there.
fn advective_divergence(
    n: &ScalarField,
    w: &VectorField,
    scheme: AdvectionScheme,
) -> ScalarField {
    let grid = &n.grid;
    let mut flux = VectorField::zeros(grid);
    let lay = n.layout();
    for k in 0..grid.dims() {
        let flay = flux.comp_layout(k);
        let ncells = grid.cells(k);
        for flat in 0..flux.components[k].len() {
            let fc = flay.coords(flat);
            let i = fc[k];
            let wv = w.components[k][flat];
            let (lo_idx, hi_idx) = match grid.bc() {
                BcKind::Periodic => {
                    let mut lo = fc;
                    let mut hi = fc;
                    lo[k] = (i + ncells - 1) % ncells;
                    hi[k] = i % ncells;
                    (Some(lay.idx(lo)), Some(lay.idx(hi)))
                }
                BcKind::Wall => {
                    if i == 0 || i == ncells {
                        (None, None)
                    } else {
                        let mut lo = fc;
                        let mut hi = fc;
                        lo[k] = i - 1;
                        hi[k] = i;
                        (Some(lay.idx(lo)), Some(lay.idx(hi)))
                    }
                }
            };
            flux.components[k][flat] = match (lo_idx, hi_idx) {
                (Some(lo), Some(hi)) => {
                    let nf = match scheme {
                        AdvectionScheme::Centered => 0.5 * (n.values[lo] + n.values[hi]),
                        AdvectionScheme::Upwind => {
                            if wv > 0.0 {
                                n.values[lo]
                            } else if wv < 0.0 {
                                n.values[hi]
                            } else {
                                0.5 * (n.values[lo] + n.values[hi])
                            }
                        }
                    };
                    nf * wv
                }
                _ => 0.0,
            };
        }
    }
    ops::divergence(&flux)
}

/// Divergence of the electro-flux `[n]_+ grad(psi)` on faces. No-flux
/// walls: the potential satisfies a homogeneous Neumann condition, so
/// boundary faces carry nothing.
fn electro_divergence(
    n: &ScalarField,
    grad_psi: &VectorField,
    clip: bool,
) -> ScalarField {
    let grid = &n.grid;
    let mut flux = VectorField::zeros(grid);
    for k in 0..grid.dims() {
        let n_face = ops::cell_to_face(n, k);
        let flay = flux.comp_layout(k);
        let ncells = grid.cells(k);
        for flat in 0..flux.components[k].len() {
            let fc = flay.coords(flat);
            let i = fc[k];
            if grid.bc() == BcKind::Wall && (i == 0 || i == ncells) {
                continue;
            }
            let nf = if clip { n_face[flat].max(0.0) } else { n_face[flat] };
            flux.components[k][flat] = nf * grad_psi.components[k][flat];
        }
    }
    ops::divergence(&flux)
}

/// Advance both species through one IMEX step driven by the solenoidal
/// drift `w` and the frozen potential `psi`.
pub fn np_step(
    n_plus: &ScalarField,
    n_minus: &ScalarField,
    w: &VectorField,
    psi: &ScalarField,
    params: &NPStepParams,
    solver: &mut EllipticSolver,
) -> Result<(ScalarField, ScalarField)> {
    if !(params.dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "np step needs dt > 0, got {}",
            params.dt
        )));
    }
    if !n_plus.is_finite() || !n_minus.is_finite() || !psi.is_finite() || !w.is_finite() {
        return Err(Error::InvalidInput("non-finite input field".into()));
    }
    let div_w = ops::divergence(w);
    let div_scale = 1.0f64.max(w.max_abs());
    if div_w.max_abs() > 1e-6 * div_scale {
        return Err(Error::InvalidInput(format!(
            "drift not divergence-free: max |div w| = {:.3e}",
            div_w.max_abs()
        )));
    }
    let limit = cfl_limit(w);
    if params.dt > limit {
        eprintln!(
            "warning: advective CFL exceeded (dt = {:.3e}, limit = {:.3e})",
            params.dt, limit
        );
    }

    let grad_psi = ops::gradient(psi);
    let dt = params.dt;
    let mut out = Vec::with_capacity(2);
    for (n, sign) in [(n_plus, 1.0), (n_minus, -1.0)] {
        let adv = advective_divergence(n, w, params.advection);
        let ele = electro_divergence(n, &grad_psi, params.clip_in_flux);
        let mut rhs = n.clone();
        rhs.axpy(-dt, &adv);
        rhs.axpy(sign * dt, &ele);
        let (n_new, _) = solver.solve_helmholtz(&rhs, dt, HelmholtzBc::Neumann)?;
        let pre = n.max_abs();
        let post = n_new.max_abs();
        if !n_new.is_finite() || post > 10.0 * pre {
            return Err(Error::Stability {
                time: f64::NAN,
                what: format!("species max grew {pre:.3e} -> {post:.3e}"),
                max: post,
            });
        }
        out.push(n_new);
    }
    let n_minus_new = out.pop().unwrap();
    let n_plus_new = out.pop().unwrap();
    Ok((n_plus_new, n_minus_new))
}

/// Potential from the charge difference under the zero-mean gauge. The
/// neutral background (the mean, conserved to roundoff along a run) is
/// projected out before the solve; a roundoff-level difference skips the
/// solve entirely.
pub fn solve_potential(
    n_plus: &ScalarField,
    n_minus: &ScalarField,
    solver: &mut EllipticSolver,
) -> Result<ScalarField> {
    let mut rho = n_plus.sub(n_minus);
    let scale = n_plus.max_abs().max(n_minus.max_abs());
    if rho.max_abs() <= 1e-13 * (1.0 + scale) {
        return Ok(ScalarField::zeros(&n_plus.grid));
    }
    rho.remove_mean();
    Ok(solver.solve_neumann_poisson(&rho)?.0)
}

/// The combined p-th power ledger of both species.
pub fn lp_ledger(n_plus: &ScalarField, n_minus: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::InvalidInput(format!(
            "lp ledger needs p >= 2, got {p}"
        )));
    }
    let vol = n_plus.grid.cell_volume();
    let s: f64 = n_plus
        .values
        .iter()
        .zip(&n_minus.values)
        .map(|(a, b)| a.abs().powf(p) + b.abs().powf(p))
        .sum();
    Ok(s * vol)
}
