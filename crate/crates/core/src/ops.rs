//! Discrete differential operators on the staggered grid.
//!
//! Gradients live on faces, divergences on cells, and the composition
//! `divergence(gradient(f))` reproduces `laplacian(f)` exactly on
//! periodic grids. Wall boundaries use one-sided differences for face
//! gradients and Neumann mirror ghosts for the Laplacian.

use crate::field::{ScalarField, VectorField};
use crate::grid::{BcKind, Layout};

/// Face-normal gradient of a cell-centered scalar.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = &f.grid;
    let lay = f.layout();
    let mut out = VectorField::zeros(grid);
    for k in 0..grid.dims() {
        let flay = out.comp_layout(k);
        let h = grid.h(k);
        let n = grid.cells(k);
        let comp = &mut out.components[k];
        for flat in 0..flay.len() {
            let fc = flay.coords(flat);
            let i = fc[k];
            let v = match grid.bc() {
                BcKind::Periodic => {
                    // face i sits between cells i-1 (wrapped) and i
                    let mut hi = fc;
                    let mut lo = fc;
                    hi[k] = i % n;
                    lo[k] = (i + n - 1) % n;
                    (f.values[lay.idx(hi)] - f.values[lay.idx(lo)]) / h
                }
                BcKind::Wall => {
                    if i == 0 {
                        // one-sided from the two nearest cells
                        let mut a = fc;
                        let mut b = fc;
                        a[k] = 0;
                        b[k] = 1;
                        (f.values[lay.idx(b)] - f.values[lay.idx(a)]) / h
                    } else if i == n {
                        let mut a = fc;
                        let mut b = fc;
                        a[k] = n - 2;
                        b[k] = n - 1;
                        (f.values[lay.idx(b)] - f.values[lay.idx(a)]) / h
                    } else {
                        let mut hi = fc;
                        let mut lo = fc;
                        hi[k] = i;
                        lo[k] = i - 1;
                        (f.values[lay.idx(hi)] - f.values[lay.idx(lo)]) / h
                    }
                }
            };
            comp[flat] = v;
        }
    }
    out
}

/// Cell-centered divergence of a face vector, the adjoint of `gradient`
/// up to sign on periodic grids.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = &v.grid;
    let mut out = ScalarField::zeros(grid);
    let lay = out.layout();
    for k in 0..grid.dims() {
        let flay = v.comp_layout(k);
        let h = grid.h(k);
        let n = grid.cells(k);
        let comp = &v.components[k];
        for flat in 0..lay.len() {
            let c = lay.coords(flat);
            // low face has the cell's own index, high face is +1
            let mut lo = c;
            let mut hi = c;
            match grid.bc() {
                BcKind::Periodic => {
                    lo[k] = c[k];
                    hi[k] = (c[k] + 1) % n;
                }
                BcKind::Wall => {
                    lo[k] = c[k];
                    hi[k] = c[k] + 1;
                }
            }
            out.values[flat] += (comp[flay.idx(hi)] - comp[flay.idx(lo)]) / h;
        }
    }
    out
}

/// Standard second-order Laplacian stencil. Periodic wrap or Neumann
/// mirror ghosts at walls.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = &f.grid;
    let lay = f.layout();
    let mut out = ScalarField::zeros(grid);
    for k in 0..grid.dims() {
        let h2 = grid.h(k) * grid.h(k);
        let n = grid.cells(k);
        for flat in 0..lay.len() {
            let c = lay.coords(flat);
            let i = c[k];
            let center = f.values[flat];
            let (lo, hi) = match grid.bc() {
                BcKind::Periodic => {
                    let mut l = c;
                    let mut r = c;
                    l[k] = (i + n - 1) % n;
                    r[k] = (i + 1) % n;
                    (f.values[lay.idx(l)], f.values[lay.idx(r)])
                }
                BcKind::Wall => {
                    let l = if i == 0 {
                        center // mirror ghost
                    } else {
                        let mut l = c;
                        l[k] = i - 1;
                        f.values[lay.idx(l)]
                    };
                    let r = if i == n - 1 {
                        center
                    } else {
                        let mut r = c;
                        r[k] = i + 1;
                        f.values[lay.idx(r)]
                    };
                    (l, r)
                }
            };
            out.values[flat] += (lo - 2.0 * center + hi) / h2;
        }
    }
    out
}

/// Average the axis-`k` face component onto cell centers.
pub fn face_to_cell(v: &VectorField, k: usize) -> ScalarField {
    let grid = &v.grid;
    let mut out = ScalarField::zeros(grid);
    let lay = out.layout();
    let flay = v.comp_layout(k);
    let n = grid.cells(k);
    let comp = &v.components[k];
    for flat in 0..lay.len() {
        let c = lay.coords(flat);
        let mut lo = c;
        let mut hi = c;
        match grid.bc() {
            BcKind::Periodic => {
                lo[k] = c[k];
                hi[k] = (c[k] + 1) % n;
            }
            BcKind::Wall => {
                lo[k] = c[k];
                hi[k] = c[k] + 1;
            }
        }
        out.values[flat] = 0.5 * (comp[flay.idx(lo)] + comp[flay.idx(hi)]);
    }
    out
}

/// All components of `v` averaged to cell centers.
pub fn components_at_cells(v: &VectorField) -> Vec<ScalarField> {
    (0..v.dims()).map(|k| face_to_cell(v, k)).collect()
}

/// Pointwise squared magnitude |v|^2 at cell centers.
pub fn magnitude_sq_cells(v: &VectorField) -> ScalarField {
    let comps = components_at_cells(v);
    let mut out = ScalarField::zeros(&v.grid);
    for c in &comps {
        for (o, x) in out.values.iter_mut().zip(&c.values) {
            *o += x * x;
        }
    }
    out
}

/// Centered derivative of a cell-centered scalar along `axis`, one-sided
/// at wall boundary cells.
pub fn derivative_cells(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = &f.grid;
    let lay = f.layout();
    let h = grid.h(axis);
    let n = grid.cells(axis);
    let mut out = ScalarField::zeros(grid);
    for flat in 0..lay.len() {
        let c = lay.coords(flat);
        let i = c[axis];
        out.values[flat] = match grid.bc() {
            BcKind::Periodic => {
                let mut l = c;
                let mut r = c;
                l[axis] = (i + n - 1) % n;
                r[axis] = (i + 1) % n;
                (f.values[lay.idx(r)] - f.values[lay.idx(l)]) / (2.0 * h)
            }
            BcKind::Wall => {
                if i == 0 {
                    let mut r = c;
                    r[axis] = 1;
                    (f.values[lay.idx(r)] - f.values[flat]) / h
                } else if i == n - 1 {
                    let mut l = c;
                    l[axis] = n - 2;
                    (f.values[flat] - f.values[lay.idx(l)]) / h
                } else {
                    let mut l = c;
                    let mut r = c;
                    l[axis] = i - 1;
                    r[axis] = i + 1;
                    (f.values[lay.idx(r)] - f.values[lay.idx(l)]) / (2.0 * h)
                }
            }
        };
    }
    out
}

/// Full velocity Jacobian at cell centers: entry `[k][j]` holds
/// d u_k / d x_j. Diagonal entries use the tight face difference, which
/// is exact for the MAC layout; off-diagonal entries differentiate the
/// cell-centered interpolant.
pub fn jacobian_cells(v: &VectorField) -> Vec<Vec<ScalarField>> {
    let grid = &v.grid;
    let d = v.dims();
    let cell_comps = components_at_cells(v);
    let mut jac = Vec::with_capacity(d);
    for k in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            if j == k {
                // exact per-cell face difference
                let mut out = ScalarField::zeros(grid);
                let lay = out.layout();
                let flay = v.comp_layout(k);
                let h = grid.h(k);
                let n = grid.cells(k);
                let comp = &v.components[k];
                for flat in 0..lay.len() {
                    let c = lay.coords(flat);
                    let mut lo = c;
                    let mut hi = c;
                    match grid.bc() {
                        BcKind::Periodic => {
                            lo[k] = c[k];
                            hi[k] = (c[k] + 1) % n;
                        }
                        BcKind::Wall => {
                            lo[k] = c[k];
                            hi[k] = c[k] + 1;
                        }
                    }
                    out.values[flat] = (comp[flay.idx(hi)] - comp[flay.idx(lo)]) / h;
                }
                row.push(out);
            } else {
                row.push(derivative_cells(&cell_comps[k], j));
            }
        }
        jac.push(row);
    }
    jac
}

/// Pointwise |grad v|^2 (squared Frobenius norm of the Jacobian) at cells.
pub fn jacobian_sq_cells(v: &VectorField) -> ScalarField {
    let jac = jacobian_cells(v);
    let mut out = ScalarField::zeros(&v.grid);
    for row in &jac {
        for entry in row {
            for (o, x) in out.values.iter_mut().zip(&entry.values) {
                *o += x * x;
            }
        }
    }
    out
}

/// Pointwise |grad^2 f|^2 at cells: tight second differences on the
/// diagonal, centered-of-centered for mixed entries (counted twice for
/// the two symmetric slots).
pub fn hessian_sq_cells(f: &ScalarField) -> ScalarField {
    let grid = &f.grid;
    let d = grid.dims();
    let lay = f.layout();
    let mut out = ScalarField::zeros(grid);
    // diagonal: same stencil as the per-axis Laplacian contribution
    for k in 0..d {
        let h2 = grid.h(k) * grid.h(k);
        let n = grid.cells(k);
        for flat in 0..lay.len() {
            let c = lay.coords(flat);
            let i = c[k];
            let center = f.values[flat];
            let (lo, hi) = match grid.bc() {
                BcKind::Periodic => {
                    let mut l = c;
                    let mut r = c;
                    l[k] = (i + n - 1) % n;
                    r[k] = (i + 1) % n;
                    (f.values[lay.idx(l)], f.values[lay.idx(r)])
                }
                BcKind::Wall => {
                    let l = if i == 0 {
                        center
                    } else {
                        let mut l = c;
                        l[k] = i - 1;
                        f.values[lay.idx(l)]
                    };
                    let r = if i == n - 1 {
                        center
                    } else {
                        let mut r = c;
                        r[k] = i + 1;
                        f.values[lay.idx(r)]
                    };
                    (l, r)
                }
            };
            let dkk = (lo - 2.0 * center + hi) / h2;
            out.values[flat] += dkk * dkk;
        }
    }
    for k in 0..d {
        let dk = derivative_cells(f, k);
        for j in 0..d {
            if j == k {
                continue;
            }
            let dkj = derivative_cells(&dk, j);
            for (o, x) in out.values.iter_mut().zip(&dkj.values) {
                *o += x * x;
            }
        }
    }
    out
}

/// Interpolate a cell scalar to the faces of component `k` by arithmetic
/// mean; boundary wall faces copy the adjacent cell.
pub fn cell_to_face(f: &ScalarField, k: usize) -> Vec<f64> {
    let grid = &f.grid;
    let lay = f.layout();
    let flay = Layout::new(grid.face_counts(k));
    let n = grid.cells(k);
    let mut out = vec![0.0; flay.len()];
    for flat in 0..flay.len() {
        let fc = flay.coords(flat);
        let i = fc[k];
        out[flat] = match grid.bc() {
            BcKind::Periodic => {
                let mut hi = fc;
                let mut lo = fc;
                hi[k] = i % n;
                lo[k] = (i + n - 1) % n;
                0.5 * (f.values[lay.idx(hi)] + f.values[lay.idx(lo)])
            }
            BcKind::Wall => {
                if i == 0 {
                    let mut a = fc;
                    a[k] = 0;
                    f.values[lay.idx(a)]
                } else if i == n {
                    let mut a = fc;
                    a[k] = n - 1;
                    f.values[lay.idx(a)]
                } else {
                    let mut hi = fc;
                    let mut lo = fc;
                    hi[k] = i;
                    lo[k] = i - 1;
                    0.5 * (f.values[lay.idx(hi)] + f.values[lay.idx(lo)])
                }
            }
        };
    }
    out
}

/// Face-weighted inner product of two MAC fields (each face counts one
/// cell volume).
pub fn dot(a: &VectorField, b: &VectorField) -> f64 {
    let vol = a.grid.cell_volume();
    let mut s = 0.0;
    for (ca, cb) in a.components.iter().zip(&b.components) {
        for (x, y) in ca.iter().zip(cb) {
            s += x * y;
        }
    }
    s * vol
}

/// Cell-weighted inner product of two scalar fields.
pub fn dot_scalar(a: &ScalarField, b: &ScalarField) -> f64 {
    let vol = a.grid.cell_volume();
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        * vol
}

/// Face-based squared L2 norm of a MAC field, the discrete kinetic
/// energy integrand.
pub fn l2_sq(v: &VectorField) -> f64 {
    dot(v, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn pgrid(n: usize) -> GridSpec {
        GridSpec::new(2, &[n, n], &[1.0, 1.0], BcKind::Periodic).unwrap()
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = pgrid(16);
        let f = ScalarField::constant(&g, 5.0);
        let grad = gradient(&f);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn gradient_mms_second_order() {
        // f = sin(2 pi x / L): face-difference error ratio ~4 under doubling
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = pgrid(n);
            let k = 2.0 * PI;
            let f = ScalarField::from_fn(&g, |x| (k * x[0]).sin());
            let grad = gradient(&f);
            let lay = grad.comp_layout(0);
            let mut emax = 0.0f64;
            for flat in 0..lay.len() {
                let pos = g.face_pos(0, lay.coords(flat));
                let exact = k * (k * pos[0]).cos();
                emax = emax.max((grad.components[0][flat] - exact).abs());
            }
            errs.push(emax);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (3.0..5.0).contains(&ratio),
                "expected ~4x error drop, got {ratio}"
            );
        }
    }

    #[test]
    fn gradient_linear_exact_on_wall_grid() {
        let g = GridSpec::new(2, &[16, 16], &[1.0, 1.0], BcKind::Wall).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0]);
        let grad = gradient(&f);
        let lay = grad.comp_layout(0);
        for flat in 0..lay.len() {
            // exact for linear fields everywhere, including one-sided faces
            assert!((grad.components[0][flat] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn divergence_of_constant_is_zero() {
        let g = pgrid(16);
        let mut v = VectorField::zeros(&g);
        for c in &mut v.components {
            for x in c.iter_mut() {
                *x = 3.5;
            }
        }
        let d = divergence(&v);
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn taylor_green_face_samples_are_discretely_solenoidal() {
        let g = GridSpec::new(2, &[32, 32], &[2.0 * PI, 2.0 * PI], BcKind::Periodic).unwrap();
        let v = VectorField::from_fn(&g, |k, x| match k {
            0 => x[0].sin() * x[1].cos(),
            _ => -(x[0].cos()) * x[1].sin(),
        });
        let d = divergence(&v);
        assert!(d.max_abs() < 1e-12, "max |div| = {}", d.max_abs());
    }

    #[test]
    fn div_grad_equals_laplacian_on_periodic() {
        let g = pgrid(16);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).cos() + 0.3 * (2.0 * PI * x[1]).sin());
        let a = divergence(&gradient(&f));
        let b = laplacian(&f);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn laplacian_mms_second_order() {
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = pgrid(n);
            let k = 2.0 * PI;
            let f = ScalarField::from_fn(&g, |x| (k * x[0]).cos());
            let lap = laplacian(&f);
            let mut emax = 0.0f64;
            for (v, fv) in lap.values.iter().zip(&f.values) {
                emax = emax.max((v + k * k * fv).abs());
            }
            errs.push(emax);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn laplacian_of_quadratic_mismatches_at_periodic_seam() {
        // x^2 is not periodic: the wrap stencil must disagree with the
        // analytic value 2 at the seam while matching in the interior.
        let g = pgrid(16);
        let f = ScalarField::from_fn(&g, |x| x[0] * x[0]);
        let lap = laplacian(&f);
        let lay = lap.layout();
        let interior = lap.values[lay.idx([8, 4, 0])];
        let seam = lap.values[lay.idx([0, 4, 0])];
        assert!((interior - 2.0).abs() < 1e-9);
        assert!((seam - 2.0).abs() > 1.0);
    }

    #[test]
    fn gradient_divergence_adjoint_on_periodic() {
        let g = pgrid(24);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos());
        let v = VectorField::from_fn(&g, |k, x| match k {
            0 => (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).cos() + 0.2,
            _ => (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).sin() - 0.7,
        });
        let lhs = dot(&gradient(&f), &v);
        let rhs = -dot_scalar(&f, &divergence(&v));
        let scale = lhs.abs().max(rhs.abs());
        assert!(scale > 0.1, "test fields must have O(1) overlap, got {scale}");
        assert!(
            (lhs - rhs).abs() / scale < 1e-12,
            "adjointness violated: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn jacobian_diagonal_matches_divergence() {
        let g = pgrid(16);
        let v = VectorField::from_fn(&g, |k, x| match k {
            0 => (2.0 * PI * x[0]).sin(),
            _ => (2.0 * PI * x[1]).cos(),
        });
        let jac = jacobian_cells(&v);
        let div = divergence(&v);
        for i in 0..div.values.len() {
            let s = jac[0][0].values[i] + jac[1][1].values[i];
            assert!((s - div.values[i]).abs() < 1e-12);
        }
    }
}
