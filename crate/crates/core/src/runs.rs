//! Shared parameter bundle that turns (model, discretization, policy) into
//! validated run configurations; used by the study drivers and the CLI.

use crate::error::SolverError;
use crate::grid::{Grid, TruncationPolicy};
use crate::hamiltonian::{resolve_cfl, CflGiven, CflMode};
use crate::model::{estimate_constants, Model, ModelConstants};
use crate::stepper_eps::EpsRunConfig;
use crate::stepper_limit::LimitRunConfig;
use crate::trajectory::SolverTolerances;

/// Discretisation and policy parameters of one run, before the model is
/// attached. `domain_halfwidth` is per axis around the model center.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub t_final: f64,
    pub dt: f64,
    pub dx: f64,
    pub domain_halfwidth: f64,
    pub policy: TruncationPolicy,
    pub snapshot_times: Vec<f64>,
    pub tol: SolverTolerances,
    pub cfl_mode: CflMode,
    pub big_lambda: Option<f64>,
    pub allow_unstable: bool,
}

impl RunParams {
    pub fn baseline() -> RunParams {
        RunParams {
            t_final: 1.0,
            dt: 5e-4,
            dx: 5e-2,
            domain_halfwidth: 5.0,
            policy: TruncationPolicy::Extrapolated,
            snapshot_times: vec![],
            tol: SolverTolerances::default(),
            cfl_mode: CflMode::EpsFixed,
            big_lambda: None,
            allow_unstable: false,
        }
    }

    pub fn with_discretization(mut self, dt: f64, dx: f64) -> RunParams {
        self.dt = dt;
        self.dx = dx;
        self
    }

    /// Base grid centered at the model anchor, `n_half = floor(halfwidth/dx)`.
    pub fn grid_for(&self, model: &Model) -> Result<Grid, SolverError> {
        let n_half = (self.domain_halfwidth / self.dx + 1e-9).floor() as usize;
        match model.dim() {
            1 => Grid::new_1d(model.center()[0], self.dx, n_half),
            _ => Grid::new_2d(model.center(), [self.dx, self.dx], [n_half, n_half]),
        }
    }

    fn padded_policy(&self, n_t: usize) -> TruncationPolicy {
        match self.policy {
            TruncationPolicy::Shrinking { padding: 0 } => {
                TruncationPolicy::Shrinking { padding: n_t }
            }
            p => p,
        }
    }

    pub fn constants_for(&self, model: &Model) -> Result<(Grid, ModelConstants), SolverError> {
        let grid = self.grid_for(model)?;
        let consts = estimate_constants(model, &grid, self.t_final)?;
        Ok((grid, consts))
    }

    /// Validated stiff-run configuration at the given `eps`.
    pub fn eps_config(&self, model: &Model, eps: f64) -> Result<EpsRunConfig, SolverError> {
        let (grid, consts) = self.constants_for(model)?;
        let cfl = resolve_cfl(
            self.cfl_mode,
            eps,
            &consts,
            self.t_final,
            model.dim(),
            CflGiven::Pair {
                dt: self.dt,
                dx: self.dx,
            },
            self.big_lambda,
        )?;
        let cfg = EpsRunConfig {
            model: model.clone(),
            consts,
            eps,
            t_final: self.t_final,
            cfl,
            grid,
            policy: self.padded_policy(cfl.n_t),
            snapshot_times: self.snapshot_times.clone(),
            tol: self.tol,
            allow_unstable: self.allow_unstable,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validated limit-run configuration (CFL in limit mode).
    pub fn limit_config(&self, model: &Model) -> Result<LimitRunConfig, SolverError> {
        let (grid, consts) = self.constants_for(model)?;
        let cfl = resolve_cfl(
            CflMode::Limit,
            0.0,
            &consts,
            self.t_final,
            model.dim(),
            CflGiven::Pair {
                dt: self.dt,
                dx: self.dx,
            },
            None,
        )?;
        let cfg = LimitRunConfig {
            model: model.clone(),
            consts,
            t_final: self.t_final,
            cfl,
            grid,
            policy: self.padded_policy(cfl.n_t),
            snapshot_times: self.snapshot_times.clone(),
            tol: self.tol,
            allow_unstable: self.allow_unstable,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
