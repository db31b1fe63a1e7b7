use crate::grid::{BcKind, GridSpec, Layout};

/// Cell-centered scalar data on a grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.cell_count()],
        }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.cell_count()],
        }
    }

    /// Fill from a function of the cell-center position.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let lay = Layout::new([grid.cells(0), grid.cells(1), grid.cells(2)]);
        let mut values = vec![0.0; lay.len()];
        for flat in 0..lay.len() {
            let x = grid.cell_pos(lay.coords(flat));
            values[flat] = f(&x);
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new([self.grid.cells(0), self.grid.cells(1), self.grid.cells(2)])
    }

    #[inline]
    pub fn at(&self, i: [usize; 3]) -> f64 {
        self.values[self.layout().idx(i)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Subtract the mean in place (zero-mean gauge).
    pub fn remove_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Integral over the box (sum times cell volume).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }
}

/// Face-staggered (MAC) vector data: component `k` lives on faces normal
/// to axis `k`. With wall boundaries the normal component carries `N+1`
/// planes along its own axis and is zero on the two boundary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let components = (0..grid.dims())
            .map(|k| vec![0.0; Layout::new(grid.face_counts(k)).len()])
            .collect();
        VectorField {
            grid: grid.clone(),
            components,
        }
    }

    /// Fill each component from a function of (component, face position).
    pub fn from_fn(grid: &GridSpec, f: impl Fn(usize, &[f64; 3]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.dims() {
            let lay = out.comp_layout(k);
            for flat in 0..lay.len() {
                let x = grid.face_pos(k, lay.coords(flat));
                out.components[k][flat] = f(k, &x);
            }
        }
        out.enforce_wall_bc();
        out
    }

    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn comp_layout(&self, k: usize) -> Layout {
        Layout::new(self.grid.face_counts(k))
    }

    #[inline]
    pub fn at(&self, k: usize, i: [usize; 3]) -> f64 {
        self.components[k][self.comp_layout(k).idx(i)]
    }

    pub fn is_finite(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.components {
            for v in c {
                *v *= a;
            }
        }
    }

    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            debug_assert_eq!(c.len(), o.len());
            for (v, w) in c.iter_mut().zip(o) {
                *v += a * w;
            }
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Zero the normal component on wall boundary faces. No-op on
    /// periodic grids.
    pub fn enforce_wall_bc(&mut self) {
        if self.grid.bc() != BcKind::Wall {
            return;
        }
        for k in 0..self.dims() {
            let lay = self.comp_layout(k);
            let last = lay.counts[k] - 1;
            for flat in 0..lay.len() {
                let c = lay.coords(flat);
                if c[k] == 0 || c[k] == last {
                    self.components[k][flat] = 0.0;
                }
            }
        }
    }

    /// Largest magnitude over any face, used for CFL estimates.
    pub fn max_speed(&self) -> f64 {
        self.max_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(bc: BcKind) -> GridSpec {
        GridSpec::new(2, &[8, 8], &[1.0, 1.0], bc).unwrap()
    }

    #[test]
    fn scalar_from_fn_and_mean() {
        let g = grid2(BcKind::Periodic);
        let f = ScalarField::from_fn(&g, |x| x[0]);
        // mean of cell centers (i+1/2)/8 over i=0..8 is 1/2
        assert!((f.mean() - 0.5).abs() < 1e-15);
        let mut f2 = f.clone();
        f2.remove_mean();
        assert!(f2.mean().abs() < 1e-15);
    }

    #[test]
    fn wall_bc_zeroes_boundary_faces() {
        let g = grid2(BcKind::Wall);
        let v = VectorField::from_fn(&g, |_, _| 1.0);
        let lay = v.comp_layout(0);
        assert_eq!(lay.counts, [9, 8, 1]);
        for j in 0..8 {
            assert_eq!(v.at(0, [0, j, 0]), 0.0);
            assert_eq!(v.at(0, [8, j, 0]), 0.0);
            assert_eq!(v.at(0, [4, j, 0]), 1.0);
        }
    }

    #[test]
    fn periodic_component_counts_match_cells() {
        let g = grid2(BcKind::Periodic);
        let v = VectorField::zeros(&g);
        assert_eq!(v.comp_layout(0).counts, [8, 8, 1]);
        assert_eq!(v.comp_layout(1).counts, [8, 8, 1]);
    }
}
