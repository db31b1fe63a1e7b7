//! One IMEX projection step of the drifted momentum equation: explicit
//! conservative advection by the solenoidal drift, explicit
//! electrostatic force, implicit diffusion, then a pressure projection
//! that restores the discrete divergence constraint exactly (up to the
//! elliptic tolerance).

use crate::elliptic::EllipticSolver;
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::BcKind;
use crate::nernst_planck::AdvectionScheme;
use crate::ops;

/// Which algebraic form of the electrostatic body force to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceForm {
    /// -(n+ - n-) grad(psi) with the charge interpolated to faces.
    ChargeGradient,
    /// div(grad psi (x) grad psi - |grad psi|^2 I / 2); the form driving
    /// the local energy ledger.
    MaxwellStress,
}

#[derive(Debug, Clone, Copy)]
pub struct NSStepParams {
    pub dt: f64,
    pub force_form: ForceForm,
    pub advection: AdvectionScheme,
}

impl NSStepParams {
    pub fn new(dt: f64) -> Self {
        NSStepParams {
            dt,
            force_form: ForceForm::MaxwellStress,
            advection: AdvectionScheme::Centered,
        }
    }
}

/// Face-centered electrostatic force in the requested form.
pub fn electro_force(
    n_plus: &ScalarField,
    n_minus: &ScalarField,
    psi: &ScalarField,
    form: ForceForm,
) -> VectorField {
    let grid = &psi.grid;
    match form {
        ForceForm::ChargeGradient => {
            let rho = n_plus.sub(n_minus);
            let grad_psi = ops::gradient(psi);
            let mut out = VectorField::zeros(grid);
            for k in 0..grid.dims() {
                let rho_face = ops::cell_to_face(&rho, k);
                for flat in 0..out.components[k].len() {
                    out.components[k][flat] =
                        -rho_face[flat] * grad_psi.components[k][flat];
                }
            }
            out.enforce_wall_bc();
            out
        }
        ForceForm::MaxwellStress => {
            let grad_psi = ops::gradient(psi);
            let g = ops::components_at_cells(&grad_psi);
            let d = grid.dims();
            // stress entries at cell centers
            let mut mag2 = ScalarField::zeros(grid);
            for gc in &g {
                for (m, v) in mag2.values.iter_mut().zip(&gc.values) {
                    *m += v * v;
                }
            }
            let mut stress = vec![vec![ScalarField::zeros(grid); d]; d];
            for i in 0..d {
                for j in 0..d {
                    let s = &mut stress[i][j];
                    for (idx, v) in s.values.iter_mut().enumerate() {
                        *v = g[i].values[idx] * g[j].values[idx];
                        if i == j {
                            *v -= 0.5 * mag2.values[idx];
                        }
                    }
                }
            }
            stress_divergence(grid, &stress)
        }
    }
}

/// Face-centered divergence of a symmetric cell-centered tensor:
/// component k gets d_k T_kk by the tight face difference plus
/// d_j T_kj of the face-interpolated entries.
fn stress_divergence(
    grid: &crate::grid::GridSpec,
    stress: &[Vec<ScalarField>],
) -> VectorField {
    let d = grid.dims();
    let mut out = VectorField::zeros(grid);
    let clay = stress[0][0].layout();
    for k in 0..d {
        let flay = out.comp_layout(k);
        let nk = grid.cells(k);
        for flat in 0..out.components[k].len() {
            let fc = flay.coords(flat);
            let i = fc[k];
            if grid.bc() == BcKind::Wall && (i == 0 || i == nk) {
                continue; // pinned faces
            }
            let (lo_cell, hi_cell) = adjacent_cells(grid, k, &fc, nk);
            // diagonal: tight difference across the face
            let mut acc = (stress[k][k].values[clay.idx(hi_cell)]
                - stress[k][k].values[clay.idx(lo_cell)])
                / grid.h(k);
            // off-diagonal: average to the face, then centered along j
            for j in 0..d {
                if j == k {
                    continue;
                }
                let nj = grid.cells(j);
                let face_val = |jj: isize| -> f64 {
                    let (mut lo, mut hi) = (lo_cell, hi_cell);
                    let wrapped = match grid.bc() {
                        BcKind::Periodic => (((jj % nj as isize) + nj as isize)
                            % nj as isize) as usize,
                        BcKind::Wall => jj.clamp(0, nj as isize - 1) as usize,
                    };
                    lo[j] = wrapped;
                    hi[j] = wrapped;
                    0.5 * (stress[k][j].values[clay.idx(lo)]
                        + stress[k][j].values[clay.idx(hi)])
                };
                let jc = fc[j] as isize;
                let (a, b, span) = match grid.bc() {
                    BcKind::Periodic => (jc - 1, jc + 1, 2.0 * grid.h(j)),
                    BcKind::Wall => {
                        if fc[j] == 0 {
                            (jc, jc + 1, grid.h(j))
                        } else if fc[j] == nj - 1 {
                            (jc - 1, jc, grid.h(j))
                        } else {
                            (jc - 1, jc + 1, 2.0 * grid.h(j))
                        }
                    }
                };
                acc += (face_val(b) - face_val(a)) / span;
            }
            out.components[k][flat] = acc;
        }
    }
    out
}

fn adjacent_cells(
    grid: &crate::grid::GridSpec,
    k: usize,
    fc: &[usize; 3],
    nk: usize,
) -> ([usize; 3], [usize; 3]) {
    let mut lo = *fc;
    let mut hi = *fc;
    match grid.bc() {
        BcKind::Periodic => {
            lo[k] = (fc[k] + nk - 1) % nk;
            hi[k] = fc[k] % nk;
        }
        BcKind::Wall => {
            lo[k] = fc[k] - 1;
            hi[k] = fc[k];
        }
    }
    (lo, hi)
}

/// Conservative MAC transport div(u (x) w) evaluated on the faces of
/// each velocity component. Conserves discrete kinetic energy when `w`
/// is discretely solenoidal.
pub fn advection(u: &VectorField, w: &VectorField, scheme: AdvectionScheme) -> VectorField {
    let grid = &u.grid;
    let d = grid.dims();
    let mut out = VectorField::zeros(grid);
    for k in 0..d {
        let flay = u.comp_layout(k);
        let nk = grid.cells(k);
        let uk = &u.components[k];
        for flat in 0..out.components[k].len() {
            let fc = flay.coords(flat);
            let i = fc[k];
            if grid.bc() == BcKind::Wall && (i == 0 || i == nk) {
                continue;
            }
            let mut acc = 0.0;
            // along-axis term: d_k (u_k w_k) via products at cell centers
            {
                let q_at = |cell_k: usize, base: &[usize; 3]| -> f64 {
                    // cell (cell_k) along axis k bounded by faces cell_k, cell_k+1
                    let mut fa = *base;
                    let mut fb = *base;
                    match grid.bc() {
                        BcKind::Periodic => {
                            fa[k] = cell_k % nk;
                            fb[k] = (cell_k + 1) % nk;
                        }
                        BcKind::Wall => {
                            fa[k] = cell_k;
                            fb[k] = cell_k + 1;
                        }
                    }
                    let ubar = 0.5 * (uk[flay.idx(fa)] + uk[flay.idx(fb)]);
                    let wbar =
                        0.5 * (w.components[k][flay.idx(fa)] + w.components[k][flay.idx(fb)]);
                    let uval = match scheme {
                        AdvectionScheme::Centered => ubar,
                        AdvectionScheme::Upwind => {
                            if wbar > 0.0 {
                                uk[flay.idx(fa)]
                            } else if wbar < 0.0 {
                                uk[flay.idx(fb)]
                            } else {
                                ubar
                            }
                        }
                    };
                    uval * wbar
                };
                let (lo_cell, hi_cell) = match grid.bc() {
                    BcKind::Periodic => ((i + nk - 1) % nk, i),
                    BcKind::Wall => (i - 1, i),
                };
                acc += (q_at(hi_cell, &fc) - q_at(lo_cell, &fc)) / grid.h(k);
            }
            // cross terms: d_j (u_k w_j) via edge-centered fluxes
            for j in 0..d {
                if j == k {
                    continue;
                }
                let nj = grid.cells(j);
                let wlay = w.comp_layout(j);
                let edge_flux = |jnode: isize| -> f64 {
                    // edge at (face i along k, node jnode along j)
                    if grid.bc() == BcKind::Wall && (jnode <= 0 || jnode >= nj as isize) {
                        return 0.0; // w_j vanishes on the wall
                    }
                    let jn = (((jnode % nj as isize) + nj as isize) % nj as isize) as usize;
                    // u_k averaged across the edge in j: j-cells jn-1, jn
                    let mut ua = fc;
                    let mut ub = fc;
                    ua[j] = (jn + nj - 1) % nj;
                    ub[j] = jn % nj;
                    if grid.bc() == BcKind::Wall {
                        ua[j] = jn - 1;
                        ub[j] = jn;
                    }
                    let ubar = 0.5 * (uk[flay.idx(ua)] + uk[flay.idx(ub)]);
                    // w_j averaged across the edge in k: k-cells i-1, i
                    let (lo_k, hi_k) = match grid.bc() {
                        BcKind::Periodic => ((i + nk - 1) % nk, i % nk),
                        BcKind::Wall => (i - 1, i),
                    };
                    let mut wa = fc;
                    let mut wb = fc;
                    wa[k] = lo_k;
                    wa[j] = jn;
                    wb[k] = hi_k;
                    wb[j] = jn;
                    let wbar =
                        0.5 * (w.components[j][wlay.idx(wa)] + w.components[j][wlay.idx(wb)]);
                    let uval = match scheme {
                        AdvectionScheme::Centered => ubar,
                        AdvectionScheme::Upwind => {
                            if wbar > 0.0 {
                                uk[flay.idx(ua)]
                            } else if wbar < 0.0 {
                                uk[flay.idx(ub)]
                            } else {
                                ubar
                            }
                        }
                    };
                    uval * wbar
                };
                let jc = fc[j] as isize;
                acc += (edge_flux(jc + 1) - edge_flux(jc)) / grid.h(j);
            }
            out.components[k][flat] = acc;
        }
    }
    out
}

/// Advance the velocity and pressure one step: explicit drift advection
/// and force, implicit diffusion, pressure projection with the zero-mean
/// gauge.
pub fn ns_step(
    u: &VectorField,
    w: &VectorField,
    force: &VectorField,
    params: &NSStepParams,
    solver: &mut EllipticSolver,
) -> Result<(VectorField, ScalarField)> {
    let dt = params.dt;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("ns step needs dt > 0, got {dt}")));
    }
    if !u.is_finite() || !w.is_finite() || !force.is_finite() {
        return Err(Error::InvalidInput("non-finite input field".into()));
    }
    let div_w = ops::divergence(w);
    if div_w.max_abs() > 1e-6 * 1.0f64.max(w.max_abs()) {
        return Err(Error::InvalidInput(format!(
            "drift not divergence-free: max |div w| = {:.3e}",
            div_w.max_abs()
        )));
    }
    let grid = u.grid.clone();
    let adv = advection(u, w, params.advection);
    let mut u_star = u.clone();
    u_star.axpy(-dt, &adv);
    u_star.axpy(dt, force);
    u_star.enforce_wall_bc();

    // implicit diffusion per component
    let mut u_diff = VectorField::zeros(&grid);
    for k in 0..grid.dims() {
        let (x, _) = solver.solve_helmholtz_faces(&grid, k, &u_star.components[k], dt)?;
        u_diff.components[k] = x;
    }

    // projection: lap p = div(u_diff) / dt
    let mut rhs = ops::divergence(&u_diff);
    rhs.scale(-1.0 / dt);
    let (p, _) = solver.solve_neumann_poisson(&rhs)?;
    let mut grad_p = ops::gradient(&p);
    grad_p.enforce_wall_bc();
    let mut u_new = u_diff;
    u_new.axpy(-dt, &grad_p);
    u_new.enforce_wall_bc();

    let allowed = 10.0 * (u.max_abs() + dt * force.max_abs());
    let post = u_new.max_abs();
    if !u_new.is_finite() || post > allowed {
        return Err(Error::Stability {
            time: f64::NAN,
            what: format!("velocity max grew to {post:.3e} (allowance {allowed:.3e})"),
            max: post,
        });
    }
    Ok((u_new, p))
}
