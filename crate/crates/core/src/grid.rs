use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary regime shared by every axis of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    /// All axes wrap.
    Periodic,
    /// Solid walls: no-slip velocity, homogeneous Neumann for scalars.
    Wall,
}

impl BcKind {
    pub fn code(self) -> u8 {
        match self {
            BcKind::Periodic => 0,
            BcKind::Wall => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(BcKind::Periodic),
            1 => Some(BcKind::Wall),
            _ => None,
        }
    }
}

/// Uniform Cartesian box grid in 2 or 3 dimensions.
///
/// Cell centers sit at `(i + 1/2) h` per axis; faces normal to axis `k`
/// sit at integer multiples of `h_k`. Internally all three axes are
/// carried, with unused trailing axes collapsed to a single cell of unit
/// extent, so index arithmetic is uniform across 2D and 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    bc: BcKind,
}

impl GridSpec {
    pub fn new(dims: usize, cells: &[usize], lengths: &[f64], bc: BcKind) -> Result<Self> {
        if dims != 2 && dims != 3 {
            return Err(Error::Config(format!("dims must be 2 or 3, got {dims}")));
        }
        if cells.len() != dims || lengths.len() != dims {
            return Err(Error::Config(format!(
                "expected {dims} cell counts and lengths, got {} and {}",
                cells.len(),
                lengths.len()
            )));
        }
        let mut c = [1usize; 3];
        let mut l = [1.0f64; 3];
        for k in 0..dims {
            if cells[k] < 8 {
                return Err(Error::Config(format!(
                    "axis {k}: need at least 8 cells, got {}",
                    cells[k]
                )));
            }
            if !(lengths[k] > 0.0) || !lengths[k].is_finite() {
                return Err(Error::Config(format!(
                    "axis {k}: length must be positive and finite, got {}",
                    lengths[k]
                )));
            }
            c[k] = cells[k];
            l[k] = lengths[k];
        }
        Ok(GridSpec {
            dims,
            cells: c,
            lengths: l,
            bc,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bc(&self) -> BcKind {
        self.bc
    }

    /// Cell count along axis `k` (1 for axes beyond `dims`).
    pub fn cells(&self, k: usize) -> usize {
        self.cells[k]
    }

    pub fn length(&self, k: usize) -> f64 {
        self.lengths[k]
    }

    /// Grid spacing along axis `k`.
    pub fn h(&self, k: usize) -> f64 {
        self.lengths[k] / self.cells[k] as f64
    }

    /// Smallest spacing over the active axes.
    pub fn h_min(&self) -> f64 {
        (0..self.dims).map(|k| self.h(k)).fold(f64::MAX, f64::min)
    }

    /// Shortest box edge.
    pub fn length_min(&self) -> f64 {
        (0..self.dims)
            .map(|k| self.length(k))
            .fold(f64::MAX, f64::min)
    }

    /// Volume of one cell (area in 2D).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dims).map(|k| self.h(k)).product()
    }

    /// Total number of cells.
    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    /// Box center coordinates.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for k in 0..self.dims {
            c[k] = 0.5 * self.lengths[k];
        }
        c
    }

    /// Coordinate of the cell center `(i0, i1, i2)`.
    pub fn cell_pos(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for k in 0..self.dims {
            x[k] = (idx[k] as f64 + 0.5) * self.h(k);
        }
        x
    }

    /// Number of stored values along axis `a` for the face-normal
    /// component of axis `comp`: `N+1` planes for wall boundaries on the
    /// normal axis (both wall faces stored), `N` otherwise.
    pub fn face_counts(&self, comp: usize) -> [usize; 3] {
        let mut c = self.cells;
        if self.bc == BcKind::Wall {
            c[comp] += 1;
        }
        c
    }

    /// Position of face node `idx` of the axis-`comp` component: offset by
    /// half a cell towards the low side along the normal axis.
    pub fn face_pos(&self, comp: usize, idx: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for k in 0..self.dims {
            if k == comp {
                x[k] = idx[k] as f64 * self.h(k);
            } else {
                x[k] = (idx[k] as f64 + 0.5) * self.h(k);
            }
        }
        x
    }

    /// Distance between two points, wrapping per-axis for periodic boxes.
    pub fn distance(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dims {
            let mut d = (a[k] - b[k]).abs();
            if self.bc == BcKind::Periodic {
                let l = self.lengths[k];
                d = d.min(l - d % l).min(d % l);
            }
            s += d * d;
        }
        s.sqrt()
    }

    /// Volume of the ball of radius `r` in `dims` dimensions.
    pub fn ball_volume(&self, r: f64) -> f64 {
        match self.dims {
            2 => std::f64::consts::PI * r * r,
            _ => 4.0 / 3.0 * std::f64::consts::PI * r * r * r,
        }
    }
}

/// Row-major index layout over up to three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub counts: [usize; 3],
}

impl Layout {
    pub fn new(counts: [usize; 3]) -> Self {
        Layout { counts }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: [usize; 3]) -> usize {
        (i[0] * self.counts[1] + i[1]) * self.counts[2] + i[2]
    }

    /// Inverse of `idx`.
    #[inline]
    pub fn coords(&self, mut flat: usize) -> [usize; 3] {
        let i2 = flat % self.counts[2];
        flat /= self.counts[2];
        let i1 = flat % self.counts[1];
        let i0 = flat / self.counts[1];
        [i0, i1, i2]
    }

    /// Neighbor index along `axis` with offset +-1, wrapping.
    #[inline]
    pub fn wrap(&self, i: [usize; 3], axis: usize, off: isize) -> [usize; 3] {
        let n = self.counts[axis] as isize;
        let mut j = i;
        j[axis] = (((i[axis] as isize + off) % n + n) % n) as usize;
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_grids() {
        assert!(GridSpec::new(2, &[4, 16], &[1.0, 1.0], BcKind::Periodic).is_err());
        assert!(GridSpec::new(2, &[16, 16], &[1.0, -1.0], BcKind::Periodic).is_err());
        assert!(GridSpec::new(4, &[16; 4], &[1.0; 4], BcKind::Periodic).is_err());
    }

    #[test]
    fn spacing_and_volume() {
        let g = GridSpec::new(2, &[16, 32], &[2.0, 1.0], BcKind::Wall).unwrap();
        assert_eq!(g.h(0), 0.125);
        assert_eq!(g.h(1), 0.03125);
        assert_eq!(g.cell_count(), 512);
        assert!((g.cell_volume() - 0.125 * 0.03125).abs() < 1e-15);
        // collapsed third axis
        assert_eq!(g.cells(2), 1);
        assert_eq!(g.h(2), 1.0);
    }

    #[test]
    fn layout_roundtrip() {
        let l = Layout::new([3, 4, 5]);
        for flat in 0..l.len() {
            assert_eq!(l.idx(l.coords(flat)), flat);
        }
        assert_eq!(l.wrap([0, 0, 0], 0, -1), [2, 0, 0]);
        assert_eq!(l.wrap([2, 3, 4], 2, 1), [2, 3, 0]);
    }

    #[test]
    fn face_counts_follow_bc() {
        let gp = GridSpec::new(2, &[8, 8], &[1.0, 1.0], BcKind::Periodic).unwrap();
        let gw = GridSpec::new(2, &[8, 8], &[1.0, 1.0], BcKind::Wall).unwrap();
        assert_eq!(gp.face_counts(0), [8, 8, 1]);
        assert_eq!(gw.face_counts(0), [9, 8, 1]);
        assert_eq!(gw.face_counts(1), [8, 9, 1]);
    }

    #[test]
    fn periodic_distance_wraps() {
        let g = GridSpec::new(2, &[8, 8], &[1.0, 1.0], BcKind::Periodic).unwrap();
        let d = g.distance(&[0.05, 0.5, 0.0], &[0.95, 0.5, 0.0]);
        assert!((d - 0.1).abs() < 1e-12);
    }
}
