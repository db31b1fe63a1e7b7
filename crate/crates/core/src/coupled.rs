//! Orchestration of the full scheme: block time-marching where the
//! drift is the divergence-corrected retarded mollification of the
//! velocity history (or the velocity itself in direct mode), plus the
//! global energy ledger along the run.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{AxisRule, EllipticConfig, EllipticSolver, StencilSpec};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::{BcKind, GridSpec};
use crate::history::{FieldHistory, State};
use crate::mollifier::{theta_hat, MollifierSpec};
use crate::momentum::{electro_force, ns_step, ForceForm, NSStepParams};
use crate::nernst_planck::{np_step, solve_potential, NPStepParams};
use crate::ops;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSection {
    pub dims: usize,
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub bc: BcKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
}

fn default_kernel_resolution() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifierSection {
    /// Number of marching blocks; the retardation scale is t_end/blocks.
    pub blocks: usize,
    /// Retarded scheme when true, otherwise the drift is the current
    /// velocity itself.
    pub mollified: bool,
    #[serde(default = "default_kernel_resolution")]
    pub kernel_resolution: usize,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialSection {
    /// One of: rest, taylor_green, charged_blob, random_charges.
    pub preset: String,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cadence() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    /// Emit a ledger row and snapshot every `cadence` steps.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
}

/// Full run configuration; the on-disk form is a TOML file with the
/// sections grid/time/mollifier/initial/output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    pub mollifier: MollifierSection,
    pub initial: InitialSection,
    pub output: OutputSection,
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: SimConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.grid.dims,
            &self.grid.cells,
            &self.grid.lengths,
            self.grid.bc,
        )
    }

    pub fn epsilon(&self) -> f64 {
        self.time.t_end / self.mollifier.blocks as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec()?;
        if !(self.time.t_end > 0.0) || !(self.time.dt > 0.0) {
            return Err(Error::Config(format!(
                "t_end and dt must be positive, got {} and {}",
                self.time.t_end, self.time.dt
            )));
        }
        if self.mollifier.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        let eps = self.epsilon();
        let per_block = eps / self.time.dt;
        if (per_block - per_block.round()).abs() > 1e-9 * per_block.max(1.0)
            || per_block.round() < 1.0
        {
            return Err(Error::Config(format!(
                "dt must divide t_end/blocks: {} steps per block",
                per_block
            )));
        }
        if self.output.cadence == 0 {
            return Err(Error::Config("output cadence must be at least 1".into()));
        }
        match self.initial.preset.as_str() {
            "rest" | "taylor_green" | "charged_blob" | "random_charges" => Ok(()),
            other => Err(Error::Config(format!(
                "unknown initial preset '{other}'"
            ))),
        }
    }
}

/// One emitted row of the run diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub kinetic: f64,
    pub electrostatic: f64,
    pub dissipation_cum: f64,
    pub global_ei_residual: f64,
    pub min_nplus: f64,
    pub min_nminus: f64,
    pub mass_nplus: f64,
    pub mass_nminus: f64,
    pub div_u_l2: f64,
}

/// Energy bookkeeping along a run: per-row diagnostics plus the running
/// sup/integral bounds.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
    /// Energy of the initial data including the initial potential.
    pub initial_energy: f64,
    /// Running sup over time of kinetic + electrostatic energy.
    pub e1: f64,
    /// Accumulated integral of |grad u|^2 + |hess psi|^2.
    pub e2: f64,
}

impl EnergyLedger {
    pub fn csv_header() -> &'static str {
        "t,kinetic,electrostatic,dissipation_cum,global_ei_residual,min_nplus,min_nminus,mass_nplus,mass_nminus,div_u_l2"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.t,
                r.kinetic,
                r.electrostatic,
                r.dissipation_cum,
                r.global_ei_residual,
                r.min_nplus,
                r.min_nminus,
                r.mass_nplus,
                r.mass_nminus,
                r.div_u_l2
            ));
        }
        out
    }
}

/// Instantaneous energy quantities of one state.
struct SliceEnergy {
    kinetic: f64,
    electrostatic: f64,
    /// Integrand of the dissipation ledger.
    dissipation: f64,
    hessian: f64,
}

/// Ledger quantities in the operator-native discrete forms, so the
/// energy identity's integration-by-parts chains cancel to solver
/// tolerance instead of O(h^2): |grad u|^2 and |grad psi|^2 as the
/// Dirichlet forms of the actual stencils, the species weight as the
/// clipped face means the electro-flux uses.
fn slice_energy(state: &State) -> SliceEnergy {
    let grid = state.grid();
    let vol = grid.cell_volume();
    let kinetic = ops::l2_sq(&state.u);

    // <psi, -lap psi> with the Neumann/periodic cell stencil
    let cell_spec = StencilSpec::cells(grid, AxisRule::Neumann);
    let mut buf = vec![0.0; state.psi.values.len()];
    cell_spec.apply_laplacian(&state.psi.values, &mut buf);
    let electrostatic = -state
        .psi
        .values
        .iter()
        .zip(&buf)
        .map(|(p, l)| p * l)
        .sum::<f64>()
        * vol;

    // <u_k, -lap u_k> with the per-component velocity stencils
    let mut grad_u_form = 0.0;
    for k in 0..grid.dims() {
        let spec = StencilSpec::velocity_faces(grid, k);
        let comp = &state.u.components[k];
        let mut out = vec![0.0; comp.len()];
        spec.apply_laplacian(comp, &mut out);
        grad_u_form -= comp.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() * vol;
    }

    let mut dissip = grad_u_form;
    for (np, nm) in state.n_plus.values.iter().zip(&state.n_minus.values) {
        let rho = np - nm;
        dissip += rho * rho * vol;
    }
    // species-weighted potential gradient on faces, with the same
    // clipped face means as the transport flux
    let mut grad_psi = ops::gradient(&state.psi);
    grad_psi.enforce_wall_bc();
    for k in 0..grid.dims() {
        let np_face = ops::cell_to_face(&state.n_plus, k);
        let nm_face = ops::cell_to_face(&state.n_minus, k);
        for (i, g) in grad_psi.components[k].iter().enumerate() {
            let weight = np_face[i].max(0.0) + nm_face[i].max(0.0);
            dissip += weight * g * g * vol;
        }
    }

    let grad_u_sq = ops::jacobian_sq_cells(&state.u);
    let hess = ops::hessian_sq_cells(&state.psi);
    let hessian: f64 =
        (grad_u_sq.values.iter().sum::<f64>() + hess.values.iter().sum::<f64>()) * vol;
    SliceEnergy {
        kinetic,
        electrostatic,
        dissipation: dissip,
        hessian,
    }
}

/// A running simulation; drives one step at a time so callers can probe
/// intermediate drifts, inject perturbations, or checkpoint partial
/// results.
pub struct Simulation {
    pub config: SimConfig,
    grid: GridSpec,
    state: State,
    t: f64,
    step_index: usize,
    total_steps: usize,
    epsilon: f64,
    moll: Option<MollifierSpec>,
    ring: FieldHistory,
    solver: EllipticSolver,
    ledger: EnergyLedger,
    outputs: FieldHistory,
    prev_energy: SliceEnergy,
    dissipation_cum: f64,
    /// The drift used by the most recent step, for retardation probes.
    pub last_drift: Option<VectorField>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid_spec()?;
        let mut solver = EllipticSolver::new(EllipticConfig::default());
        let mut state = initial_state(&grid, &config.initial, &mut solver)?;

        // charge balance is required by every potential solve
        let imbalance = (state.n_plus.integral() - state.n_minus.integral()).abs();
        let scale = state.n_plus.integral().abs().max(1.0);
        if imbalance > 1e-12 * scale {
            return Err(Error::Config(format!(
                "initial charges unbalanced by {imbalance:.3e}"
            )));
        }
        state.psi = solve_potential(&state.n_plus, &state.n_minus, &mut solver)?;

        let dt = config.time.dt;
        let total_steps = (config.time.t_end / dt).round() as usize;
        let epsilon = config.epsilon();
        let moll = if config.mollifier.mollified {
            Some(MollifierSpec::new(
                epsilon,
                config.mollifier.kernel_resolution,
                &grid,
                dt,
            )?)
        } else {
            None
        };

        let e0 = slice_energy(&state);
        let ledger = EnergyLedger {
            rows: Vec::new(),
            initial_energy: e0.kinetic + e0.electrostatic,
            e1: e0.kinetic + e0.electrostatic,
            e2: 0.0,
        };
        let mut ring = FieldHistory::new();
        ring.push(0.0, state.clone())?;
        let mut outputs = FieldHistory::new();
        outputs.push(0.0, state.clone())?;

        let mut sim = Simulation {
            config,
            grid,
            state,
            t: 0.0,
            step_index: 0,
            total_steps,
            epsilon,
            moll,
            ring,
            solver,
            ledger,
            outputs,
            prev_energy: e0,
            dissipation_cum: 0.0,
            last_drift: None,
        };
        sim.emit_row();
        Ok(sim)
    }

    pub fn finished(&self) -> bool {
        self.step_index >= self.total_steps
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn outputs(&self) -> &FieldHistory {
        &self.outputs
    }

    /// Block index owning the step that starts at time `t`.
    pub fn block_of(&self, t: f64) -> usize {
        ((t + 1e-9 * self.config.time.dt) / self.epsilon) as usize
    }

    /// Scale the current velocity (and its ring entry), used to probe
    /// retardation: later-block data changes must not reach the drift of
    /// the block in progress.
    pub fn perturb_velocity(&mut self, factor: f64) {
        self.state.u.scale(factor);
        let last = self.ring.len() - 1;
        self.ring.state_mut(last).u.scale(factor);
    }

    fn drift(&mut self) -> Result<VectorField> {
        match &self.moll {
            None => Ok(self.state.u.clone()),
            Some(spec) => {
                if self.block_of(self.t) == 0 {
                    // the first block decouples: transport and momentum
                    // see no drift at all
                    Ok(VectorField::zeros(&self.grid))
                } else {
                    theta_hat(spec, &self.ring, self.t, &mut self.solver)
                }
            }
        }
    }

    pub fn step(&mut self) -> Result<()> {
        if self.finished() {
            return Ok(());
        }
        let dt = self.config.time.dt;
        let w = self.drift().map_err(|e| self.stamp(e))?;
        let force = electro_force(
            &self.state.n_plus,
            &self.state.n_minus,
            &self.state.psi,
            ForceForm::MaxwellStress,
        );
        let np_params = NPStepParams::new(dt);
        let (np1, nm1) = np_step(
            &self.state.n_plus,
            &self.state.n_minus,
            &w,
            &self.state.psi,
            &np_params,
            &mut self.solver,
        )
        .map_err(|e| self.stamp(e))?;
        let ns_params = NSStepParams::new(dt);
        let (u1, p1) = ns_step(&self.state.u, &w, &force, &ns_params, &mut self.solver)
            .map_err(|e| self.stamp(e))?;

        self.state.n_plus = np1;
        self.state.n_minus = nm1;
        self.state.u = u1;
        self.state.p = p1;
        self.state.psi =
            solve_potential(&self.state.n_plus, &self.state.n_minus, &mut self.solver)
                .map_err(|e| self.stamp(e))?;
        self.t += dt;
        self.step_index += 1;
        self.last_drift = Some(w);

        // trapezoid ledger between the old and new slice
        let e_new = slice_energy(&self.state);
        self.dissipation_cum += dt * (self.prev_energy.dissipation + e_new.dissipation);
        self.ledger.e1 = self.ledger.e1.max(e_new.kinetic + e_new.electrostatic);
        self.ledger.e2 += 0.5 * dt * (self.prev_energy.hessian + e_new.hessian);
        self.prev_energy = e_new;

        if self.moll.is_some() {
            self.ring.push(self.t, self.state.clone())?;
            self.ring
                .drop_before(self.t - 2.0 * self.epsilon - 1e-9 * dt);
        }
        if self.step_index % self.config.output.cadence == 0 || self.finished() {
            self.outputs.push(self.t, self.state.clone())?;
            self.emit_row();
        }
        Ok(())
    }

    fn emit_row(&mut self) {
        let e = slice_energy(&self.state);
        let div = ops::divergence(&self.state.u);
        let div_l2 = (div.values.iter().map(|v| v * v).sum::<f64>()
            * self.grid.cell_volume())
        .sqrt();
        let row = LedgerRow {
            t: self.t,
            kinetic: e.kinetic,
            electrostatic: e.electrostatic,
            dissipation_cum: self.dissipation_cum,
            global_ei_residual: e.kinetic + e.electrostatic + self.dissipation_cum
                - self.ledger.initial_energy,
            min_nplus: self.state.n_plus.min(),
            min_nminus: self.state.n_minus.min(),
            mass_nplus: self.state.n_plus.integral(),
            mass_nminus: self.state.n_minus.integral(),
            div_u_l2: div_l2,
        };
        debug_assert!(
            self.ledger
                .rows
                .last()
                .map(|p| row.dissipation_cum >= p.dissipation_cum)
                .unwrap_or(true),
            "dissipation ledger must not retreat"
        );
        self.ledger.rows.push(row);
    }

    fn stamp(&self, e: Error) -> Error {
        match e {
            Error::Stability { what, max, .. } => Error::Stability {
                time: self.t,
                what,
                max,
            },
            other => other,
        }
    }

    pub fn into_outputs(self) -> (FieldHistory, EnergyLedger) {
        (self.outputs, self.ledger)
    }
}

/// Run the configured simulation to completion.
pub fn run(config: &SimConfig) -> Result<(FieldHistory, EnergyLedger)> {
    let mut sim = Simulation::new(config.clone())?;
    while !sim.finished() {
        sim.step()?;
    }
    Ok(sim.into_outputs())
}

/// Write the history as a snapshot directory (one file per slice).
pub fn checkpoint(history: &FieldHistory, dir: &Path) -> Result<()> {
    crate::snapshot::checkpoint(history, dir)?;
    Ok(())
}

/// Read a snapshot directory back.
pub fn restore(dir: &Path) -> Result<FieldHistory> {
    crate::snapshot::restore(dir)
}

/// Build the preset initial state (velocity projected to the discrete
/// divergence-free space, charges exactly balanced).
pub fn initial_state(
    grid: &GridSpec,
    init: &InitialSection,
    solver: &mut EllipticSolver,
) -> Result<State> {
    let mut state = State::zeros(grid);
    let a = init.amplitude;
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    match init.preset.as_str() {
        "rest" => {}
        "taylor_green" => {
            let k: Vec<f64> = (0..grid.dims())
                .map(|i| 2.0 * std::f64::consts::PI / grid.length(i))
                .collect();
            state.u = VectorField::from_fn(grid, |comp, x| match (grid.dims(), comp) {
                (2, 0) => a * (k[0] * x[0]).sin() * (k[1] * x[1]).cos(),
                (2, 1) => -a * (k[0] * x[0]).cos() * (k[1] * x[1]).sin(),
                (3, 0) => a * (k[0] * x[0]).sin() * (k[1] * x[1]).cos() * (k[2] * x[2]).cos(),
                (3, 1) => -a * (k[0] * x[0]).cos() * (k[1] * x[1]).sin() * (k[2] * x[2]).cos(),
                _ => 0.0,
            });
        }
        "charged_blob" => {
            let c = grid.center();
            let w2 = init.width * init.width;
            state.n_plus = ScalarField::from_fn(grid, |x| {
                let mut r2 = 0.0;
                for k in 0..grid.dims() {
                    r2 += (x[k] - c[k] * 0.8).powi(2);
                }
                a * (-r2 / w2).exp()
            });
            state.n_minus = ScalarField::from_fn(grid, |x| {
                let mut r2 = 0.0;
                for k in 0..grid.dims() {
                    r2 += (x[k] - c[k] * 1.2).powi(2);
                }
                a * (-r2 / w2).exp()
            });
        }
        "random_charges" => {
            state.n_plus = random_smooth_nonneg(grid, a, &mut rng);
            state.n_minus = random_smooth_nonneg(grid, a, &mut rng);
            state.u = random_stream_velocity(grid, 0.2 * a, &mut rng);
        }
        other => return Err(Error::Config(format!("unknown initial preset '{other}'"))),
    }

    // exact charge balance (multiplicative when possible)
    let mp = state.n_plus.integral();
    let mm = state.n_minus.integral();
    if mp > 0.0 && mm > 0.0 {
        let f = mp / mm;
        state.n_minus.scale(f);
    } else if (mp - mm).abs() > 0.0 {
        let shift = (mp - mm) / grid.length(0).powi(grid.dims() as i32);
        for v in &mut state.n_minus.values {
            *v += shift;
        }
    }

    // project the velocity onto the discrete divergence-free space
    if state.u.max_abs() > 0.0 {
        state.u.enforce_wall_bc();
        let div = ops::divergence(&state.u);
        if div.max_abs() > 0.0 {
            let mut rhs = div.clone();
            rhs.scale(-1.0);
            let (p, _) = solver.solve_neumann_poisson(&rhs)?;
            let mut grad = ops::gradient(&p);
            grad.enforce_wall_bc();
            state.u.axpy(-1.0, &grad);
            state.u.enforce_wall_bc();
        }
    }
    Ok(state)
}

/// Smooth nonnegative random field: unit background plus a few seeded
/// low-wavenumber modes, clipped at zero.
fn random_smooth_nonneg(grid: &GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let dims = grid.dims();
    let mut modes = Vec::new();
    for _ in 0..4 {
        let m: Vec<f64> = (0..dims)
            .map(|_| rng.gen_range(-2i32..=2) as f64)
            .collect();
        let coef: f64 = rng.gen_range(-0.4..0.4);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        modes.push((m, coef, phase));
    }
    let mut f = ScalarField::from_fn(grid, |x| {
        let mut v = 1.0;
        for (m, coef, phase) in &modes {
            let mut arg = *phase;
            for k in 0..dims {
                arg += 2.0 * std::f64::consts::PI * m[k] * x[k] / grid.length(k);
            }
            v += coef * arg.cos();
        }
        amp * v.max(0.0)
    });
    // avoid an identically-zero species
    if f.max_abs() == 0.0 {
        f = ScalarField::constant(grid, amp);
    }
    f
}

/// Random solenoidal velocity from a low-mode stream function (2D) or a
/// pair of stream slabs (3D); exact discrete divergence by construction
/// after projection in the caller.
fn random_stream_velocity(grid: &GridSpec, amp: f64, rng: &mut ChaCha8Rng) -> VectorField {
    let dims = grid.dims();
    let mut modes = Vec::new();
    for _ in 0..3 {
        let m: Vec<f64> = (0..dims)
            .map(|_| rng.gen_range(-2i32..=2) as f64)
            .collect();
        let coef: f64 = rng.gen_range(-1.0..1.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        modes.push((m, coef, phase));
    }
    let psi = move |x: &[f64; 3], grid: &GridSpec| -> f64 {
        let mut v = 0.0;
        for (m, coef, phase) in &modes {
            let mut arg = *phase;
            for k in 0..dims.min(m.len()) {
                arg += 2.0 * std::f64::consts::PI * m[k] * x[k] / grid.length(k);
            }
            v += coef * arg.sin();
        }
        v
    };
    let g = grid.clone();
    let mut v = VectorField::from_fn(grid, move |comp, x| {
        // derivative of the stream function in the rotated direction
        let h = 1e-5 * g.h_min();
        let mut xp = *x;
        let mut xm = *x;
        let other = if comp == 0 { 1 } else { 0 };
        xp[other] += h;
        xm[other] -= h;
        let sign = if comp == 0 { 1.0 } else { -1.0 };
        sign * (psi(&xp, &g) - psi(&xm, &g)) / (2.0 * h)
    });
    v.scale(amp);
    v.enforce_wall_bc();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(n: usize, preset: &str, mollified: bool) -> SimConfig {
        SimConfig {
            grid: GridSection {
                dims: 2,
                cells: vec![n, n],
                lengths: vec![1.0, 1.0],
                bc: BcKind::Periodic,
            },
            time: TimeSection {
                t_end: 0.02,
                dt: 1e-3,
            },
            mollifier: MollifierSection {
                blocks: 2,
                mollified,
                kernel_resolution: 8,
            },
            initial: InitialSection {
                preset: preset.into(),
                amplitude: 1.0,
                width: 0.1,
                seed: 7,
            },
            output: OutputSection { cadence: 5 },
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let cfg = base_config(16, "rest", true);
        let (hist, ledger) = run(&cfg).unwrap();
        assert_eq!(hist.len(), 5); // rows at 0 and every 5th of 20 steps
        for i in 0..hist.len() {
            assert_eq!(hist.state(i).u.max_abs(), 0.0);
            assert_eq!(hist.state(i).n_plus.max_abs(), 0.0);
        }
        for r in &ledger.rows {
            assert_eq!(r.kinetic, 0.0);
            assert_eq!(r.dissipation_cum, 0.0);
        }
    }

    #[test]
    fn ledger_row_count_matches_cadence() {
        let mut cfg = base_config(16, "taylor_green", false);
        cfg.output.cadence = 4;
        let (_, ledger) = run(&cfg).unwrap();
        // 20 steps / 4 + initial row
        assert_eq!(ledger.rows.len(), 6);
    }

    #[test]
    fn taylor_green_pure_ns_matches_analytic_decay() {
        let mut cfg = base_config(32, "taylor_green", false);
        cfg.grid.lengths = vec![2.0 * std::f64::consts::PI; 2];
        cfg.time.t_end = 0.05;
        cfg.time.dt = 1e-3;
        cfg.mollifier.blocks = 1;
        let (hist, ledger) = run(&cfg).unwrap();
        // charges stay zero, psi stays zero
        let last = hist.state(hist.len() - 1);
        assert_eq!(last.n_plus.max_abs(), 0.0);
        assert_eq!(last.psi.max_abs(), 0.0);
        let e0 = ledger.rows[0].kinetic;
        let eT = ledger.rows.last().unwrap().kinetic;
        let expect = (-4.0f64 * 0.05).exp();
        let rel = (eT / e0 - expect).abs() / expect;
        assert!(rel < 5e-3, "kinetic decay off by {rel}");
    }

    #[test]
    fn charge_neutrality_and_global_energy_inequality() {
        // the trapezoid dissipation ledger needs the charge relaxation
        // resolved: dt times the squared mode frequency well below one
        let mut cfg = base_config(24, "charged_blob", true);
        cfg.time.t_end = 0.005;
        cfg.time.dt = 1e-4;
        cfg.mollifier.blocks = 5;
        cfg.initial.amplitude = 2.0;
        cfg.initial.width = 0.3;
        cfg.output.cadence = 10;
        let (_, ledger) = run(&cfg).unwrap();
        let e0 = ledger.initial_energy;
        for r in &ledger.rows {
            assert!(
                (r.mass_nplus - r.mass_nminus).abs() <= 1e-11 * r.mass_nplus.max(1.0),
                "charge neutrality broken at t = {}",
                r.t
            );
            let lhs = r.kinetic + r.electrostatic + r.dissipation_cum;
            assert!(
                lhs <= e0 * (1.0 + 1e-3),
                "energy inequality violated at t = {}: {lhs} vs {e0}",
                r.t
            );
            assert!(r.div_u_l2 < 1e-8);
        }
        // dissipation is monotone
        for w in ledger.rows.windows(2) {
            assert!(w[1].dissipation_cum >= w[0].dissipation_cum);
        }
    }

    #[test]
    fn retardation_blocks_later_perturbations_from_the_drift() {
        let mut cfg = base_config(12, "random_charges", true);
        cfg.time.t_end = 0.04;
        cfg.time.dt = 1e-3;
        cfg.mollifier.blocks = 4; // eps = 0.01 = 10 steps
        cfg.output.cadence = 1;
        let mk = || Simulation::new(cfg.clone()).unwrap();
        let mut sim_a = mk();
        let mut sim_b = mk();
        let steps_per_block = 10;
        // run both through block 0 and into block 1
        for _ in 0..steps_per_block + 2 {
            sim_a.step().unwrap();
            sim_b.step().unwrap();
        }
        // perturb B inside block 1; drifts during the REST of block 1
        // read only block-0 data, so they must stay bit-identical
        sim_b.perturb_velocity(1.01);
        let mut saw_divergence = false;
        for _ in 0..steps_per_block - 2 {
            sim_a.step().unwrap();
            sim_b.step().unwrap();
            let da = sim_a.last_drift.as_ref().unwrap();
            let db = sim_b.last_drift.as_ref().unwrap();
            assert_eq!(
                da.components, db.components,
                "drift changed within the same block after a later perturbation"
            );
            if sim_a.state().u.components != sim_b.state().u.components {
                saw_divergence = true;
            }
        }
        assert!(saw_divergence, "perturbation must affect the states themselves");
        // once marching enters block 2 the perturbed window is read and
        // the drifts may differ; run to the end and require the states
        // to have genuinely diverged
        while !sim_a.finished() {
            sim_a.step().unwrap();
            sim_b.step().unwrap();
        }
        let gap = sim_a
            .state()
            .u
            .sub(&sim_b.state().u)
            .max_abs();
        assert!(gap > 0.0);
    }

    #[test]
    fn mollified_approaches_direct_as_blocks_increase() {
        let mut base = base_config(16, "random_charges", false);
        base.time.t_end = 0.032;
        base.time.dt = 5e-4; // 64 steps
        base.initial.amplitude = 1.0;
        base.output.cadence = 64;
        base.mollifier.blocks = 1;
        let (direct, _) = run(&base).unwrap();
        let u_ref = &direct.state(direct.len() - 1).u;
        let mut gaps = Vec::new();
        for blocks in [4usize, 8, 16] {
            let mut cfg = base.clone();
            cfg.mollifier.mollified = true;
            cfg.mollifier.blocks = blocks;
            let (hist, _) = run(&cfg).unwrap();
            let u_m = &hist.state(hist.len() - 1).u;
            gaps.push((ops::l2_sq(&u_m.sub(u_ref))).sqrt());
        }
        assert!(
            gaps[1] < gaps[0] && gaps[2] < gaps[1],
            "mollified-vs-direct gap not shrinking: {gaps:?}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_blocks() {
        let mut cfg = base_config(16, "rest", true);
        cfg.mollifier.blocks = 3; // 0.02 / 3 not a multiple of dt
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.mollifier.blocks = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg2 = base_config(16, "unknown_preset", true);
        cfg2.initial.preset = "bogus".into();
        assert!(matches!(cfg2.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = base_config(16, "taylor_green", true);
        let text = toml::to_string(&cfg).unwrap();
        let back: SimConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.grid.cells, cfg.grid.cells);
        assert_eq!(back.initial.preset, cfg.initial.preset);
    }
}
