//! One full time step of the stiff scheme: explicit monotone stage followed
//! by the implicit scalar solve for the total population `I`, plus the time
//! loop.

use crate::error::SolverError;
use crate::grid::{extrapolate_boundary, Grid, State, TruncationPolicy};
use crate::hamiltonian::{monotone_step, monotone_step_unchecked, CflSpec};
use crate::model::{Model, ModelConstants, Point};
use crate::trajectory::{SnapshotPlan, SolveStats, SolverTolerances, StatsSummary, Trajectory};

/// Configuration of one stiff run.
#[derive(Clone)]
pub struct EpsRunConfig {
    pub model: Model,
    pub consts: ModelConstants,
    pub eps: f64,
    pub t_final: f64,
    pub cfl: CflSpec,
    /// Base grid; the shrinking policy pads it by `padding` layers up front.
    pub grid: Grid,
    pub policy: TruncationPolicy,
    pub snapshot_times: Vec<f64>,
    pub tol: SolverTolerances,
    /// Bypass the stage stability guard (deliberate experiments only).
    pub allow_unstable: bool,
}

impl EpsRunConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(SolverError::Domain(format!(
                "eps must lie in (0, 1], got {}",
                self.eps
            )));
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

pub(crate) fn validate_common(
    t_final: f64,
    cfl: &CflSpec,
    policy: &TruncationPolicy,
    snapshot_times: &[f64],
    model_dim: usize,
    grid_dim: usize,
) -> Result<(), SolverError> {
    if !(t_final > 0.0) {
        return Err(SolverError::Domain("T must be positive".into()));
    }
    if model_dim != grid_dim {
        return Err(SolverError::GridMismatch(format!(
            "model dimension {model_dim} vs grid dimension {grid_dim}"
        )));
    }
    if let Some(t) = snapshot_times
        .iter()
        .find(|&&t| !(0.0..=t_final * (1.0 + 1e-12)).contains(&t))
    {
        return Err(SolverError::Domain(format!(
            "snapshot time {t} outside [0, {t_final}]"
        )));
    }
    if let TruncationPolicy::Shrinking { padding } = policy {
        if *padding < cfl.n_t {
            return Err(SolverError::Domain(format!(
                "shrinking policy consumes one layer per step: padding {padding} < N_t = {}",
                cfl.n_t
            )));
        }
    }
    Ok(())
}

/// Shifted evaluation of the fixed-point function
/// `phi(I) = I - vol * sum_i psi_i exp((-u~_i + dt R(x_i, I)) / eps)`.
///
/// The largest exponent is factored out before exponentiating, so the sum
/// never overflows; `ln_quad` carries the log of the quadrature term and the
/// derivative uses the same shifted weights.
struct PhiEval {
    /// `I - exp(ln_quad)`; negative infinity when the quadrature term
    /// overflows (the sign is still certain there).
    phi: f64,
    dphi: f64,
    /// ln of the quadrature term.
    ln_quad: f64,
    /// Weighted mean of `dR/dI` over the shifted weights (negative for a
    /// decreasing rate); drives the log-form Newton derivative.
    di_ratio: f64,
    /// Backward-error floor of the residual: the exponent arguments carry
    /// rounding of order `max_i (|u_i| + dt |R_i|) / eps * eps_machine`,
    /// which the quadrature term amplifies; residuals below the floor are
    /// not resolvable in f64.
    floor: f64,
}

#[allow(clippy::too_many_arguments)]
fn eval_phi(
    i: f64,
    u_tilde: &[f64],
    pts: &[Point],
    psi: &[f64],
    vol: f64,
    model: &Model,
    eps: f64,
    dt: f64,
) -> PhiEval {
    let mut m = f64::NEG_INFINITY;
    let mut e_scale = 0.0f64;
    let mut exps = Vec::with_capacity(u_tilde.len());
    for (idx, &u) in u_tilde.iter().enumerate() {
        let r = model.rate(pts[idx], i);
        let e = (-u + dt * r) / eps;
        exps.push(e);
        if e > m {
            m = e;
        }
        e_scale = e_scale.max((u.abs() + dt * r.abs()) / eps);
    }
    let mut s = 0.0;
    let mut s_di = 0.0;
    for (idx, &e) in exps.iter().enumerate() {
        let w = psi[idx] * (e - m).exp();
        s += w;
        s_di += w * model.rate_di(pts[idx], i);
    }
    let ln_quad = vol.ln() + m + s.ln();
    let di_ratio = s_di / s;
    if ln_quad > 700.0 {
        return PhiEval {
            phi: f64::NEG_INFINITY,
            dphi: f64::INFINITY,
            ln_quad,
            di_ratio,
            floor: f64::INFINITY,
        };
    }
    let quad = ln_quad.exp();
    PhiEval {
        phi: i - quad,
        // d/dI of the quadrature term is (dt/eps) * quad * di_ratio
        dphi: 1.0 - (dt / eps) * quad * di_ratio,
        ln_quad,
        di_ratio,
        floor: quad * (1.0 + e_scale) * f64::EPSILON,
    }
}

/// Root of `phi` (difference of an increasing and a decreasing function,
/// hence unique). Direct Newton from the warm start, falling back to Newton
/// on the log form `ln I = ln_quad(I)`, then to bracketed bisection with
/// geometric bracket expansion.
#[allow(clippy::too_many_arguments)]
pub fn solve_i_implicit(
    u_tilde: &[f64],
    pts: &[Point],
    psi: &[f64],
    vol: f64,
    model: &Model,
    eps: f64,
    dt: f64,
    warm: f64,
    tol: &SolverTolerances,
) -> Result<(f64, SolveStats), SolverError> {
    assert_eq!(u_tilde.len(), pts.len());
    assert_eq!(u_tilde.len(), psi.len());
    if !(eps > 0.0) || !(dt > 0.0) {
        return Err(SolverError::Domain(
            "solve_i_implicit needs eps > 0 and dt > 0".into(),
        ));
    }
    if u_tilde.iter().any(|u| !u.is_finite()) {
        return Err(SolverError::SolverFailure(
            "non-finite state entering the implicit solve".into(),
        ));
    }
    let mut stats = SolveStats::default();
    let eval = |i: f64| eval_phi(i, u_tilde, pts, psi, vol, model, eps, dt);
    // the residual is accepted at the requested tolerance on the scale of
    // the current iterate, or at the evaluation's own rounding floor when
    // stiffness makes that floor larger
    let accepted = |i: f64, e: &PhiEval| -> bool {
        e.phi.is_finite()
            && e.phi.abs() <= (tol.tol_phi_rel * i.abs().max(1.0)).max(4.0 * e.floor)
    };
    let warm = if warm.is_finite() { warm.max(0.0) } else { 1.0 };

    // direct Newton
    let mut i = warm;
    for _ in 0..tol.max_newton {
        let e = eval(i);
        if accepted(i, &e) {
            return Ok((i, stats));
        }
        if !e.phi.is_finite() || !e.dphi.is_finite() {
            break;
        }
        stats.newton_iters += 1;
        let next = i - e.phi / e.dphi;
        if !next.is_finite() || next < 0.0 {
            break;
        }
        i = next;
    }

    // log-form Newton: g(I) = ln I - ln_quad(I), increasing in I
    let mut i = warm.max(1e-12);
    for _ in 0..tol.max_newton {
        let e = eval(i);
        if accepted(i, &e) {
            return Ok((i, stats));
        }
        stats.log_newton_iters += 1;
        let g = i.ln() - e.ln_quad;
        let dg = 1.0 / i - (dt / eps) * e.di_ratio;
        let next = i - g / dg;
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        if (next - i).abs() <= 1e-16 * i.abs() {
            break;
        }
        i = next;
    }

    // safeguarded bisection; phi(0) <= 0 always
    stats.used_fallback = true;
    let mut lo = 0.0f64;
    let e0 = eval(lo);
    if accepted(lo, &e0) {
        return Ok((lo, stats));
    }
    let mut hi = warm.max(1.0);
    let mut expansions = 0;
    loop {
        let e = eval(hi);
        if accepted(hi, &e) {
            return Ok((hi, stats));
        }
        if e.phi > 0.0 {
            break;
        }
        expansions += 1;
        if expansions > tol.max_doublings {
            return Err(SolverError::SolverFailure(format!(
                "no sign change for phi within {} bracket doublings (hi = {hi:.3e})",
                tol.max_doublings
            )));
        }
        hi *= 2.0;
    }
    let mut best: (f64, f64, f64) = (hi, f64::INFINITY, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eval(mid);
        stats.bisect_iters += 1;
        if e.phi.is_finite() && e.phi.abs() < best.1 {
            best = (mid, e.phi.abs(), e.floor);
        }
        if accepted(mid, &e) {
            return Ok((mid, stats));
        }
        if e.phi >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol.bisect_tol.min(1e-12 * hi.max(1.0)) {
            break;
        }
    }
    // Newton polish inside the bracket
    let mut i = 0.5 * (lo + hi);
    for _ in 0..5 {
        let e = eval(i);
        if accepted(i, &e) {
            return Ok((i, stats));
        }
        if e.phi.is_finite() && e.phi.abs() < best.1 {
            best = (i, e.phi.abs(), e.floor);
        }
        if !(e.phi.is_finite() && e.dphi.is_finite()) {
            break;
        }
        let next = (i - e.phi / e.dphi).clamp(lo, hi);
        if next == i {
            break;
        }
        i = next;
    }
    let (best_i, best_res, best_floor) = best;
    if best_res <= (10.0 * tol.tol_phi_rel * best_i.abs().max(1.0)).max(4.0 * best_floor) {
        return Ok((best_i, stats));
    }
    Err(SolverError::SolverFailure(format!(
        "implicit I solve stalled with residual {best_res:.3e}"
    )))
}

/// One full step of the stiff scheme: monotone stage, implicit `I` solve on
/// the staged values, then the reaction update
/// `u_i <- u~_i - dt R(x_i, I)`.
#[allow(clippy::too_many_arguments)]
pub fn step_eps(
    u: &State,
    model: &Model,
    eps: f64,
    dt: f64,
    policy: TruncationPolicy,
    warm: f64,
    tol: &SolverTolerances,
    allow_unstable: bool,
) -> Result<(State, f64, SolveStats), SolverError> {
    let staged = stage(u, dt, eps, policy, allow_unstable)?;
    let grid = *staged.grid();
    let pts: Vec<Point> = grid.points_iter().collect();
    let psi: Vec<f64> = pts.iter().map(|&x| model.weight(x)).collect();
    finish_step(staged, &pts, &psi, model, eps, dt, warm, tol)
}

pub(crate) fn stage(
    u: &State,
    dt: f64,
    eps: f64,
    policy: TruncationPolicy,
    allow_unstable: bool,
) -> Result<State, SolverError> {
    let step = if allow_unstable {
        monotone_step_unchecked
    } else {
        monotone_step
    };
    match policy {
        TruncationPolicy::Shrinking { .. } => step(u, dt, eps),
        TruncationPolicy::Extrapolated => step(&extrapolate_boundary(u)?, dt, eps),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    staged: State,
    pts: &[Point],
    psi: &[f64],
    model: &Model,
    eps: f64,
    dt: f64,
    warm: f64,
    tol: &SolverTolerances,
) -> Result<(State, f64, SolveStats), SolverError> {
    let vol = staged.grid().cell_volume();
    let (i_new, stats) =
        solve_i_implicit(staged.values(), pts, psi, vol, model, eps, dt, warm, tol)?;
    let mut out = staged;
    for (idx, v) in out.values_mut().iter_mut().enumerate() {
        *v -= dt * model.rate(pts[idx], i_new);
    }
    Ok((out, i_new, stats))
}

/// Incremental driver for the stiff scheme; `run_eps` wraps it, and the
/// browser demo advances it a few steps per frame.
pub struct EpsStepper {
    model: Model,
    eps: f64,
    dt: f64,
    n_t: usize,
    policy: TruncationPolicy,
    tol: SolverTolerances,
    allow_unstable: bool,
    state: State,
    pts: Vec<Point>,
    psi: Vec<f64>,
    warm: f64,
    step: usize,
}

impl EpsStepper {
    pub fn new(cfg: &EpsRunConfig) -> Result<EpsStepper, SolverError> {
        cfg.validate()?;
        let grid0 = match cfg.policy {
            TruncationPolicy::Shrinking { padding } => cfg.grid.padded(padding),
            TruncationPolicy::Extrapolated => cfg.grid,
        };
        let state = State::sample(grid0, |x| cfg.model.initial_value(x));
        let pts: Vec<Point> = grid0.points_iter().collect();
        let psi: Vec<f64> = pts.iter().map(|&x| cfg.model.weight(x)).collect();
        // first warm start: the R = 0 value vol * sum psi exp(-u0/eps),
        // assembled in log space so far tails cannot overflow the sum
        let mut m = f64::NEG_INFINITY;
        for v in state.values() {
            m = m.max(-v / cfg.eps);
        }
        let mut s = 0.0;
        for (idx, v) in state.values().iter().enumerate() {
            s += psi[idx] * (-v / cfg.eps - m).exp();
        }
        let ln_warm = grid0.cell_volume().ln() + m + s.ln();
        if ln_warm > 700.0 {
            return Err(SolverError::SolverFailure(
                "initial population quadrature overflows".into(),
            ));
        }
        Ok(EpsStepper {
            model: cfg.model.clone(),
            eps: cfg.eps,
            dt: cfg.cfl.dt,
            n_t: cfg.cfl.n_t,
            policy: cfg.policy,
            tol: cfg.tol,
            allow_unstable: cfg.allow_unstable,
            state,
            pts,
            psi,
            warm: ln_warm.exp(),
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

    /// Advance one time step, returning the new scalar `I` and solver stats.
    pub fn advance(&mut self) -> Result<(f64, SolveStats), SolverError> {
        let staged = stage(&self.state, self.dt, self.eps, self.policy, self.allow_unstable)
            .map_err(|e| e.at_step(self.step))?;
        if *staged.grid() != *self.state.grid() {
            let grid = *staged.grid();
            self.pts = grid.points_iter().collect();
            self.psi = self.pts.iter().map(|&x| self.model.weight(x)).collect();
        }
        let (state, i_new, stats) = finish_step(
            staged, &self.pts, &self.psi, &self.model, self.eps, self.dt, self.warm, &self.tol,
        )
        .map_err(|e| e.at_step(self.step))?;
        self.state = state;
        self.warm = i_new;
        self.step += 1;
        Ok((i_new, stats))
    }
}

/// Iterate the stiff scheme `N_t` times, recording the scalar series, the
/// argmin track, and the requested snapshots. Deterministic given the config.
pub fn run_eps(cfg: &EpsRunConfig) -> Result<Trajectory, SolverError> {
    run_eps_with(cfg, |_, _, _, _| {})
}

/// Same as [`run_eps`] with a per-step observer `(step, time, state, I)`.
pub fn run_eps_with(
    cfg: &EpsRunConfig,
    mut observe: impl FnMut(usize, f64, &State, f64),
) -> Result<Trajectory, SolverError> {
    let mut stepper = EpsStepper::new(cfg)?;
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
        let (i_new, step_stats) = stepper.advance()?;
        scalar.push(i_new);
        argmin.push(stepper.state().argmin());
        min_values.push(stepper.state().min_value());
        stats.absorb(&step_stats);
        observe(n, stepper.time(), stepper.state(), i_new);
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
    use crate::grid::Grid;
    use crate::hamiltonian::{resolve_cfl, CflGiven, CflMode};
    use crate::model::estimate_constants;

    fn tols() -> SolverTolerances {
        SolverTolerances::default()
    }

    fn bisect_oracle(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn implicit_solve_closed_form_when_rate_vanishes() {
        let m = Model::custom("r0", 1, [0.0, 0.0], |_, _| 0.0, |_| 1.0, |_| 0.0, None).unwrap();
        let u = [0.3, -0.1, 0.7];
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let psi = [1.0, 1.0, 1.0];
        let eps = 0.5;
        let expect: f64 = 0.25 * u.iter().map(|v: &f64| (-v / eps).exp()).sum::<f64>();
        let (i, _) = solve_i_implicit(&u, &pts, &psi, 0.25, &m, eps, 1e-3, 0.1, &tols()).unwrap();
        assert!((i - expect).abs() < 1e-12);
    }

    #[test]
    fn implicit_solve_single_point_example() {
        // phi(I) = I - e^{-I}; root is the omega constant
        let m = Model::custom("expdec", 1, [0.0, 0.0], |_, i| -i, |_| 1.0, |_| 0.0, None).unwrap();
        let (i, _) = solve_i_implicit(
            &[0.0],
            &[[0.0, 0.0]],
            &[1.0],
            1.0,
            &m,
            0.25,
            0.25,
            0.5,
            &tols(),
        )
        .unwrap();
        let oracle = bisect_oracle(|x| x - (-x).exp(), 0.0, 1.0);
        assert!((i - oracle).abs() <= 1e-10, "i = {i}, oracle = {oracle}");
        assert!((oracle - 0.567143).abs() < 1e-6);
    }

    #[test]
    fn implicit_solve_two_point_example() {
        // phi(I) = I - 2 e^{-I}
        let m = Model::custom("expdec", 1, [0.0, 0.0], |_, i| -i, |_| 1.0, |_| 0.0, None).unwrap();
        let (i, _) = solve_i_implicit(
            &[0.0, 0.0],
            &[[0.0, 0.0], [1.0, 0.0]],
            &[1.0, 1.0],
            1.0,
            &m,
            1.0,
            1.0,
            0.5,
            &tols(),
        )
        .unwrap();
        let oracle = bisect_oracle(|x| x - 2.0 * (-x).exp(), 0.0, 2.0);
        assert!((i - oracle).abs() <= 1e-10);
        assert!((oracle - 0.852606).abs() < 1e-6);
    }

    #[test]
    fn implicit_solve_monotone_response() {
        // raising the staged values lowers the returned I
        let m = Model::preset("paper-1d").unwrap();
        let pts: Vec<_> = (0..5).map(|k| [k as f64 * 0.5 - 1.0, 0.0]).collect();
        let psi = vec![1.0; 5];
        let lowered = [0.0, 0.1, 0.2, 0.1, 0.0];
        let raised: Vec<f64> = lowered.iter().map(|v| v + 0.05).collect();
        let eps = 1e-2;
        let (i_low, _) =
            solve_i_implicit(&lowered, &pts, &psi, 0.5, &m, eps, 1e-3, 1.0, &tols()).unwrap();
        let (i_high, _) =
            solve_i_implicit(&raised, &pts, &psi, 0.5, &m, eps, 1e-3, 1.0, &tols()).unwrap();
        assert!(i_high < i_low);
    }

    #[test]
    fn step_preserves_constants_when_rate_vanishes() {
        let m = Model::custom("r0", 1, [0.0, 0.0], |_, _| 0.0, |_| 1.0, |_| 0.0, None).unwrap();
        let g = Grid::new_1d(0.0, 0.1, 6).unwrap();
        let c = 1.25;
        let u = State::sample(g, |_| c);
        let eps = 0.3;
        let (out, i_new, _) = step_eps(
            &u,
            &m,
            eps,
            1e-3,
            TruncationPolicy::Shrinking { padding: 1 },
            0.1,
            &tols(),
            false,
        )
        .unwrap();
        assert!(out.values().iter().all(|&v| v == c));
        // I = e^{-c/eps} * grid mass of psi over the shrunk grid
        let mass = 0.1 * out.grid().len() as f64;
        assert!((i_new - (-c / eps).exp() * mass).abs() < 1e-14);
    }

    #[test]
    fn run_one_step_equals_step_eps() {
        let model = Model::preset("paper-1d").unwrap();
        let grid = Grid::new_1d(1.0, 5e-2, 100).unwrap();
        let consts = estimate_constants(&model, &grid, 5e-4).unwrap();
        let cfl = resolve_cfl(
            CflMode::EpsFixed,
            1e-2,
            &consts,
            5e-4,
            1,
            CflGiven::Pair { dt: 5e-4, dx: 5e-2 },
            None,
        )
        .unwrap();
        let cfg = EpsRunConfig {
            model: model.clone(),
            consts,
            eps: 1e-2,
            t_final: 5e-4,
            cfl,
            grid,
            policy: TruncationPolicy::Extrapolated,
            snapshot_times: vec![],
            tol: tols(),
            allow_unstable: false,
        };
        let traj = run_eps(&cfg).unwrap();
        assert_eq!(traj.n_steps(), 1);
        let u0 = State::sample(grid, |x| model.initial_value(x));
        let mut stepper = EpsStepper::new(&cfg).unwrap();
        let warm = stepper.warm;
        let (manual, i_manual, _) = step_eps(
            &u0,
            &model,
            1e-2,
            5e-4,
            TruncationPolicy::Extrapolated,
            warm,
            &tols(),
            false,
        )
        .unwrap();
        let (i_run, _) = stepper.advance().unwrap();
        assert_eq!(i_manual, i_run);
        assert_eq!(traj.scalar[0], i_manual);
        assert_eq!(manual.values(), traj.final_state.values());
    }

    #[test]
    fn implicit_solve_survives_overflowing_exponents() {
        // staged values dipping to -5 at eps = 1e-6 put the quadrature term
        // around exp(5e6): the direct Newton evaluation overflows at once
        // and the solve must recover through the log form
        let m = Model::custom("expdec", 1, [0.0, 0.0], |_, i| -i, |_| 1.0, |_| 0.0, None).unwrap();
        let u = [-5.0, -4.0, -3.0];
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let psi = [1.0, 1.0, 1.0];
        let (eps, dt) = (1e-6, 5e-4);
        let (i, stats) =
            solve_i_implicit(&u, &pts, &psi, 1.0, &m, eps, dt, 0.5, &tols()).unwrap();
        // oracle: g(I) = ln I - ln(sum_k exp((u_k... )) via shifted bisection
        let oracle = {
            let g = |x: f64| {
                let es: Vec<f64> = u.iter().map(|&v| (-v + dt * -x) / eps).collect();
                let mx = es.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = es.iter().map(|e| (e - mx).exp()).sum();
                x.ln() - (mx + s.ln())
            };
            let (mut lo, mut hi) = (1.0f64, 1e9f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        assert!(
            (i - oracle).abs() <= 1e-6 * oracle,
            "i = {i}, oracle = {oracle}"
        );
        assert!(stats.log_newton_iters > 0 || stats.used_fallback);
    }

    #[test]
    fn implicit_solve_bisection_fallback_from_bad_warm_start() {
        // an absurd warm start exercises the bracketed-bisection safety net
        let m = Model::custom("expdec", 1, [0.0, 0.0], |_, i| -i, |_| 1.0, |_| 0.0, None).unwrap();
        let (i, _) = solve_i_implicit(
            &[0.0],
            &[[0.0, 0.0]],
            &[1.0],
            1.0,
            &m,
            0.25,
            0.25,
            1e12,
            &tols(),
        )
        .unwrap();
        let oracle = bisect_oracle(|x| x - (-x).exp(), 0.0, 1.0);
        assert!((i - oracle).abs() <= 1e-9, "i = {i}, oracle = {oracle}");
    }

    #[test]
    fn step_eps_2d_constant_state() {
        let m = Model::custom(
            "r0-2d",
            2,
            [0.0, 0.0],
            |_, _| 0.0,
            |_| 1.0,
            |_| 0.0,
            None,
        )
        .unwrap();
        let g = Grid::new_2d([0.0, 0.0], [0.1, 0.1], [5, 5]).unwrap();
        let u = State::sample(g, |_| 2.0);
        let (out, i_new, _) = step_eps(
            &u,
            &m,
            0.5,
            1e-3,
            TruncationPolicy::Extrapolated,
            0.1,
            &tols(),
            false,
        )
        .unwrap();
        assert_eq!(out.grid().len(), g.len());
        assert!(out.values().iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let mass = 0.01 * g.len() as f64;
        assert!((i_new - (-2.0f64 / 0.5).exp() * mass).abs() < 1e-12);
    }

    #[test]
    fn snapshots_map_to_nearest_steps() {
        let model = Model::preset("paper-1d").unwrap();
        let grid = Grid::new_1d(1.0, 5e-2, 100).unwrap();
        let consts = estimate_constants(&model, &grid, 1e-2).unwrap();
        let cfl = resolve_cfl(
            CflMode::EpsFixed,
            1e-2,
            &consts,
            1e-2,
            1,
            CflGiven::Pair { dt: 1e-3, dx: 5e-2 },
            None,
        )
        .unwrap();
        let cfg = EpsRunConfig {
            model,
            consts,
            eps: 1e-2,
            t_final: 1e-2,
            cfl,
            grid,
            policy: TruncationPolicy::Extrapolated,
            snapshot_times: vec![0.0, 0.0051, 1e-2],
            tol: tols(),
            allow_unstable: false,
        };
        let traj = run_eps(&cfg).unwrap();
        let times: Vec<f64> = traj.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![0.0, 0.0051, 1e-2]);
        // t = 0 snapshot is the sampled initial datum
        assert_eq!(
            traj.snapshots[0].1.values()[100],
            cfg.model.initial_value([1.0, 0.0])
        );
        // final-time snapshot equals the final state
        assert_eq!(
            traj.snapshots[2].1.values(),
            traj.final_state.values()
        );
    }

    #[test]
    fn rejects_bad_eps_and_padding() {
        let model = Model::preset("paper-1d").unwrap();
        let grid = Grid::new_1d(1.0, 5e-2, 100).unwrap();
        let consts = estimate_constants(&model, &grid, 1.0).unwrap();
        let cfl = resolve_cfl(
            CflMode::EpsFixed,
            1e-2,
            &consts,
            1.0,
            1,
            CflGiven::Pair { dt: 5e-4, dx: 5e-2 },
            None,
        )
        .unwrap();
        let mut cfg = EpsRunConfig {
            model,
            consts,
            eps: -1.0,
            t_final: 1.0,
            cfl,
            grid,
            policy: TruncationPolicy::Extrapolated,
            snapshot_times: vec![],
            tol: tols(),
            allow_unstable: false,
        };
        assert!(cfg.validate().is_err());
        cfg.eps = 1e-2;
        cfg.policy = TruncationPolicy::Shrinking { padding: 10 };
        assert!(cfg.validate().is_err());
        cfg.policy = TruncationPolicy::Shrinking { padding: 2000 };
        assert!(cfg.validate().is_ok());
    }
}
