use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::GridSpec;
use crate::ops;

/// The solution quintuple on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: VectorField,
    pub p: ScalarField,
    pub n_plus: ScalarField,
    pub n_minus: ScalarField,
    pub psi: ScalarField,
}

impl State {
    pub fn zeros(grid: &GridSpec) -> Self {
        State {
            u: VectorField::zeros(grid),
            p: ScalarField::zeros(grid),
            n_plus: ScalarField::zeros(grid),
            n_minus: ScalarField::zeros(grid),
            psi: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.p.grid
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.p.is_finite()
            && self.n_plus.is_finite()
            && self.n_minus.is_finite()
            && self.psi.is_finite()
    }
}

/// Which stored (or derived) quantity a space-time integral runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSelector {
    Velocity,
    Pressure,
    NPlus,
    NMinus,
    Psi,
    GradVelocity,
    GradPsi,
}

impl State {
    /// Pointwise magnitude of the selected quantity at cell centers.
    pub fn pointwise(&self, sel: FieldSelector) -> ScalarField {
        match sel {
            FieldSelector::Velocity => {
                let mut m = ops::magnitude_sq_cells(&self.u);
                for v in &mut m.values {
                    *v = v.sqrt();
                }
                m
            }
            FieldSelector::Pressure => self.p.clone(),
            FieldSelector::NPlus => self.n_plus.clone(),
            FieldSelector::NMinus => self.n_minus.clone(),
            FieldSelector::Psi => self.psi.clone(),
            FieldSelector::GradVelocity => {
                let mut m = ops::jacobian_sq_cells(&self.u);
                for v in &mut m.values {
                    *v = v.sqrt();
                }
                m
            }
            FieldSelector::GradPsi => {
                let g = ops::gradient(&self.psi);
                let mut m = ops::magnitude_sq_cells(&g);
                for v in &mut m.values {
                    *v = v.sqrt();
                }
                m
            }
        }
    }
}

/// Time-ordered window of states with uniform spacing, the substrate for
/// mollification and cylinder integrals. Fields extend by zero outside
/// the box and, following the convention for the space-time extension,
/// by zero before absolute time zero.
#[derive(Debug, Clone)]
pub struct FieldHistory {
    times: Vec<f64>,
    states: Vec<State>,
}

impl FieldHistory {
    pub fn new() -> Self {
        FieldHistory {
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    /// Build from paired times and states; validates uniform increasing
    /// spacing.
    pub fn from_slices(times: Vec<f64>, states: Vec<State>) -> Result<Self> {
        let mut h = FieldHistory::new();
        for (t, s) in times.into_iter().zip(states) {
            h.push(t, s)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, t: f64, state: State) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidInput(format!(
                    "history times must increase: {t} after {last}"
                )));
            }
            if self.times.len() >= 2 {
                let dt = self.dt();
                let gap = t - last;
                if (gap - dt).abs() > 1e-9 * dt.max(1e-300) {
                    return Err(Error::InvalidInput(format!(
                        "non-uniform history spacing: {gap} vs {dt}"
                    )));
                }
            }
        }
        self.times.push(t);
        self.states.push(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() >= 2 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &State {
        &self.states[i]
    }

    pub fn state_mut(&mut self, i: usize) -> &mut State {
        &mut self.states[i]
    }

    pub fn t_first(&self) -> f64 {
        self.times[0]
    }

    pub fn t_last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn grid(&self) -> &GridSpec {
        self.states[0].grid()
    }

    /// Index of the stored slice at time `t` (within a relative spacing
    /// tolerance), if present.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let dt = self.dt().max(1e-300);
        let guess = ((t - self.times[0]) / dt).round();
        if guess < 0.0 {
            return None;
        }
        let i = guess as usize;
        if i < self.times.len() && (self.times[i] - t).abs() <= 1e-6 * dt {
            Some(i)
        } else {
            None
        }
    }

    /// Indices of stored slices whose times lie in `[a, b]` (inclusive,
    /// with spacing tolerance).
    pub fn indices_in(&self, a: f64, b: f64) -> Vec<usize> {
        let tol = 1e-9 * self.dt().max(1e-300).max((b - a).abs());
        (0..self.times.len())
            .filter(|&i| self.times[i] >= a - tol && self.times[i] <= b + tol)
            .collect()
    }

    /// Drop slices strictly older than `t_keep`.
    pub fn drop_before(&mut self, t_keep: f64) {
        let tol = 1e-9 * self.dt().max(1e-300);
        let keep_from = self
            .times
            .iter()
            .position(|&t| t >= t_keep - tol)
            .unwrap_or(self.times.len());
        self.times.drain(..keep_from);
        self.states.drain(..keep_from);
    }
}

impl Default for FieldHistory {
    fn default() -> Self {
        Self::new()
    }
}
