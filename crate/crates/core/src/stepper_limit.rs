//! One full time step of the limit scheme: explicit monotone stage, then the
//! scalar constraint solve for `J` enforcing `min_i v_i = 0`, plus the time
//! loop.

use crate::error::SolverError;
use crate::grid::{Grid, State, TruncationPolicy};
use crate::hamiltonian::{CflMode, CflSpec};
use crate::model::{Model, ModelConstants, Point};
use crate::stepper_eps::{stage, validate_common};
use crate::trajectory::{SnapshotPlan, SolveStats, SolverTolerances, StatsSummary, Trajectory};

/// Configuration of one limit run; the CFL spec must be resolved in `Limit`
/// mode.
#[derive(Clone)]
pub struct LimitRunConfig {
    pub model: Model,
    pub consts: ModelConstants,
    pub t_final: f64,
    pub cfl: CflSpec,
    pub grid: Grid,
    pub policy: TruncationPolicy,
    pub snapshot_times: Vec<f64>,
    pub tol: SolverTolerances,
    pub allow_unstable: bool,
}

impl LimitRunConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.cfl.mode != CflMode::Limit {
            return Err(SolverError::Domain(
                "limit runs require a CFL spec resolved in limit mode".into(),
            ));
        }
        validate_common(
            self.t_final,
            &self.cfl,
            &self.policy,
            &self.snapshot_times,
            self.model.dim(),
            self.grid.dim(),
        )
    }
}

/// Root of the increasing map
/// `J -> min_i (v~_i - dt R(x_i, J))`,
/// bracketed on `[i_min, i_max]` with geometric bracket expansion when the
/// supplied bracket misses the sign change (presets violating the extremum
/// assumption do). Pure bisection; the residual at the returned root is at
/// most `tol_j_rel * max(1, |bracket hi|)`.
///
/// When the previous multiplier (`warm`) still satisfies the constraint to
/// tolerance it is returned unchanged, so the series stays bit-constant
/// between genuine moves of the root instead of carrying bisection dust.
#[allow(clippy::too_many_arguments)]
pub fn solve_j_constraint(
    v_tilde: &[f64],
    pts: &[Point],
    model: &Model,
    dt: f64,
    bracket: (f64, f64),
    warm: Option<f64>,
    tol: &SolverTolerances,
) -> Result<(f64, SolveStats), SolverError> {
    assert_eq!(v_tilde.len(), pts.len());
    if v_tilde.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::SolverFailure(
            "non-finite state entering the constraint solve".into(),
        ));
    }
    let mut stats = SolveStats::default();
    let residual = |j: f64| -> f64 {
        let mut m = f64::INFINITY;
        for (idx, &v) in v_tilde.iter().enumerate() {
            m = m.min(v - dt * model.rate(pts[idx], j));
        }
        m
    };
    let (mut lo, mut hi) = bracket;
    if !(lo <= hi) {
        return Err(SolverError::Domain(format!(
            "invalid bracket [{lo}, {hi}]"
        )));
    }
    let tol_j = tol.tol_j_rel * hi.abs().max(1.0);
    if let Some(w) = warm {
        if residual(w).abs() <= tol_j {
            return Ok((w, stats));
        }
    }
    let mut h_lo = residual(lo);
    let mut h_hi = residual(hi);
    // expand downwards while the residual is positive at lo, upwards while
    // negative at hi
    let mut width = (hi - lo).max(1.0);
    let mut n = 0;
    while h_lo > 0.0 {
        if h_lo <= tol_j {
            return Ok((lo, stats));
        }
        n += 1;
        if n > tol.max_doublings {
            return Err(SolverError::SolverFailure(format!(
                "no sign change for the J constraint within {} bracket expansions",
                tol.max_doublings
            )));
        }
        hi = lo;
        h_hi = h_lo;
        lo -= width;
        width *= 2.0;
        h_lo = residual(lo);
    }
    let mut width = (hi - lo).max(1.0);
    let mut n = 0;
    while h_hi < 0.0 {
        if -h_hi <= tol_j {
            return Ok((hi, stats));
        }
        n += 1;
        if n > tol.max_doublings {
            return Err(SolverError::SolverFailure(format!(
                "no sign change for the J constraint within {} bracket expansions",
                tol.max_doublings
            )));
        }
        lo = hi;
        h_lo = h_hi;
        hi += width;
        width *= 2.0;
        h_hi = residual(hi);
    }
    if h_lo.abs() <= tol_j {
        return Ok((lo, stats));
    }
    if h_hi.abs() <= tol_j {
        return Ok((hi, stats));
    }
    // refine down to the absolute bracket tolerance so the root itself, not
    // just the residual, is resolved
    let mut best = (hi, h_hi.abs());
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let h = residual(mid);
        stats.bisect_iters += 1;
        if h.abs() < best.1 {
            best = (mid, h.abs());
        }
        if h >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol.bisect_tol {
            break;
        }
    }
    if best.1 <= tol_j {
        return Ok((best.0, stats));
    }
    Err(SolverError::SolverFailure(format!(
        "J constraint solve stalled with residual {:.3e}",
        best.1
    )))
}

/// One full step of the limit scheme: monotone stage at `eps = 0`, constraint
/// solve for `J`, then `v_i <- v~_i - dt R(x_i, J)`. No renormalisation is
/// applied afterwards: the constraint residual stays within the solver
/// tolerance by construction.
#[allow(clippy::too_many_arguments)]
pub fn step_limit(
    v: &State,
    model: &Model,
    dt: f64,
    policy: TruncationPolicy,
    bracket: (f64, f64),
    tol: &SolverTolerances,
    allow_unstable: bool,
) -> Result<(State, f64, SolveStats), SolverError> {
    let staged = stage(v, dt, 0.0, policy, allow_unstable)?;
    let pts: Vec<Point> = staged.grid().points_iter().collect();
    finish_step(staged, &pts, model, dt, bracket, None, tol)
}

fn finish_step(
    staged: State,
    pts: &[Point],
    model: &Model,
    dt: f64,
    bracket: (f64, f64),
    warm: Option<f64>,
    tol: &SolverTolerances,
) -> Result<(State, f64, SolveStats), SolverError> {
    let (j_new, stats) = solve_j_constraint(staged.values(), pts, model, dt, bracket, warm, tol)?;
    let mut out = staged;
    for (idx, v) in out.values_mut().iter_mut().enumerate() {
        *v -= dt * model.rate(pts[idx], j_new);
    }
    Ok((out, j_new, stats))
}

/// Incremental driver for the limit scheme.
pub struct LimitStepper {
    model: Model,
    dt: f64,
    n_t: usize,
    policy: TruncationPolicy,
    bracket: (f64, f64),
    tol: SolverTolerances,
    allow_unstable: bool,
    state: State,
    pts: Vec<Point>,
    warm: Option<f64>,
    step: usize,
}

impl LimitStepper {
    pub fn new(cfg: &LimitRunConfig) -> Result<LimitStepper, SolverError> {
        cfg.validate()?;
        let grid0 = match cfg.policy {
            TruncationPolicy::Shrinking { padding } => cfg.grid.padded(padding),
            TruncationPolicy::Extrapolated => cfg.grid,
        };
        let state = State::sample(grid0, |x| cfg.model.initial_value(x));
        let pts = grid0.points_iter().collect();
        Ok(LimitStepper {
            model: cfg.model.clone(),
            dt: cfg.cfl.dt,
            n_t: cfg.cfl.n_t,
            policy: cfg.policy,
            bracket: (cfg.consts.i_min, cfg.consts.i_max),
            tol: cfg.tol,
            allow_unstable: cfg.allow_unstable,
            state,
            pts,
            warm: None,
            step: 0,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_t
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn done(&self) -> bool {
        self.step >= self.n_t
    }

    pub fn advance(&mut self) -> Result<(f64, SolveStats), SolverError> {
        let staged = stage(&self.state, self.dt, 0.0, self.policy, self.allow_unstable)
            .map_err(|e| e.at_step(self.step))?;
        if *staged.grid() != *self.state.grid() {
            self.pts = staged.grid().points_iter().collect();
        }
        let (state, j_new, stats) = finish_step(
            staged, &self.pts, &self.model, self.dt, self.bracket, self.warm, &self.tol,
        )
        .map_err(|e| e.at_step(self.step))?;
        self.state = state;
        self.warm = Some(j_new);
        self.step += 1;
        Ok((j_new, stats))
    }
}

/// Iterate the limit scheme `N_t` times; deterministic given the config.
pub fn run_limit(cfg: &LimitRunConfig) -> Result<Trajectory, SolverError> {
    run_limit_with(cfg, |_, _, _, _| {})
}

/// Same as [`run_limit`] with a per-step observer `(step, time, state, J)`.
pub fn run_limit_with(
    cfg: &LimitRunConfig,
    mut observe: impl FnMut(usize, f64, &State, f64),
) -> Result<Trajectory, SolverError> {
    let mut stepper = LimitStepper::new(cfg)?;
    let n_t = cfg.cfl.n_t;
    let plan = SnapshotPlan::new(&cfg.snapshot_times, cfg.cfl.dt, n_t);
    let mut scalar = Vec::with_capacity(n_t);
    let mut argmin = Vec::with_capacity(n_t + 1);
    let mut min_values = Vec::with_capacity(n_t + 1);
    let mut snapshots = Vec::new();
    let mut stats = StatsSummary::default();
    argmin.push(stepper.state().argmin());
    min_values.push(stepper.state().min_value());
    for t in plan.wants(0) {
        snapshots.push((t, stepper.state().clone()));
    }
    for n in 1..=n_t {
        let (j_new, step_stats) = stepper.advance()?;
        scalar.push(j_new);
        argmin.push(stepper.state().argmin());
        min_values.push(stepper.state().min_value());
        stats.absorb(&step_stats);
        observe(n, stepper.time(), stepper.state(), j_new);
        for t in plan.wants(n) {
            snapshots.push((t, stepper.state().clone()));
        }
    }
    let traj = Trajectory {
        dt: cfg.cfl.dt,
        scalar,
        argmin,
        min_values,
        snapshots,
        final_state: stepper.state.clone(),
        stats,
    };
    traj.check_consistent();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{estimate_constants, Model};
    use crate::trajectory::SolverTolerances;

    fn tols() -> SolverTolerances {
        SolverTolerances::default()
    }

    #[test]
    fn run_one_step_equals_step_limit() {
        use crate::hamiltonian::{resolve_cfl, CflGiven, CflMode};
        let model = Model::preset("paper-1d").unwrap();
        let grid = crate::grid::Grid::new_1d(1.0, 5e-2, 100).unwrap();
        let consts = estimate_constants(&model, &grid, 5e-4).unwrap();
        let cfl = resolve_cfl(
            CflMode::Limit,
            0.0,
            &consts,
            5e-4,
            1,
            CflGiven::Pair { dt: 5e-4, dx: 5e-2 },
            None,
        )
        .unwrap();
        let cfg = LimitRunConfig {
            model: model.clone(),
            consts,
            t_final: 5e-4,
            cfl,
            grid,
            policy: TruncationPolicy::Extrapolated,
            snapshot_times: vec![],
            tol: tols(),
            allow_unstable: false,
        };
        let traj = run_limit(&cfg).unwrap();
        assert_eq!(traj.n_steps(), 1);
        let v0 = State::sample(grid, |x| model.initial_value(x));
        let (manual, j_manual, _) = step_limit(
            &v0,
            &model,
            5e-4,
            TruncationPolicy::Extrapolated,
            (consts.i_min, consts.i_max),
            &tols(),
            false,
        )
        .unwrap();
        assert_eq!(traj.scalar[0], j_manual);
        assert_eq!(manual.values(), traj.final_state.values());
    }

    #[test]
    fn constraint_single_point_linear() {
        // 0.1 - 0.1 (0 - J) = 0  =>  J = -1
        let m = Model::preset("analytic-1d").unwrap();
        let (j, _) =
            solve_j_constraint(&[0.1], &[[0.0, 0.0]], &m, 0.1, (0.0, 1.0), None, &tols()).unwrap();
        assert!((j + 1.0).abs() <= 1e-10, "j = {j}");
    }

    #[test]
    fn constraint_two_point_min() {
        // min(0.2 + 0.1 J, -0.1 + 0.1 J) = 0  =>  J = 1
        let m = Model::preset("analytic-1d").unwrap();
        let (j, _) = solve_j_constraint(
            &[0.2, 0.0],
            &[[0.0, 0.0], [1.0, 0.0]],
            &m,
            0.1,
            (0.0, 1.0),
            None,
            &tols(),
        )
        .unwrap();
        assert!((j - 1.0).abs() <= 1e-10, "j = {j}");
    }

    #[test]
    fn constraint_x_independent_rate() {
        // R = -J: m + dt J = 0 => J = -m / dt
        let m = Model::custom("dec", 1, [0.0, 0.0], |_, j| -j, |_| 1.0, |_| 0.0, None).unwrap();
        let vt = [0.5, 0.3, 0.9];
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let dt = 0.25;
        let (j, _) = solve_j_constraint(&vt, &pts, &m, dt, (0.0, 1.0), None, &tols()).unwrap();
        assert!((j - (-0.3 / dt)).abs() <= 1e-10);
    }

    #[test]
    fn constraint_tight_at_argmin() {
        // if min v~ = 0 and R(x*, .) vanishes at some J0 in the bracket, the
        // argmin value stays at 0 and J = J0
        let m = Model::custom(
            "pinned",
            1,
            [0.0, 0.0],
            |x, j| x[0] - j,
            |_| 1.0,
            |_| 0.0,
            None,
        )
        .unwrap();
        let vt = [0.4, 0.0, 0.7];
        let pts = [[-1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let (j, _) = solve_j_constraint(&vt, &pts, &m, 1e-2, (0.0, 5.0), None, &tols()).unwrap();
        assert!((j - 2.0).abs() <= 1e-10);
        let updated = 0.0 - 1e-2 * m.rate([2.0, 0.0], j);
        assert!(updated.abs() <= 1e-12);
    }
}
