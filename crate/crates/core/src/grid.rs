//! Uniform trait lattices in 1D/2D, grid-valued states, the truncation-radius
//! bound, and the two domain-handling policies (shrinking domain vs. cubic
//! boundary extrapolation).

use crate::error::SolverError;
use crate::hamiltonian::numerical_hamiltonian;
use crate::model::{Model, ModelConstants, Point};

/// Below this `eps` the eps-independent envelope is used in the tail bound,
/// so one grid can serve a whole eps-sweep down to the limit scheme.
pub const EPS_FLOOR: f64 = 1e-6;

/// Uniform lattice `x_i = x0 + i dx`, `i in [-n_half, n_half]` per axis
/// (tensor product in 2D). The point count is odd and `x0` is a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    x0: Point,
    dx: [f64; 2],
    n_half: [usize; 2],
}

impl Grid {
    pub fn new_1d(x0: f64, dx: f64, n_half: usize) -> Result<Grid, SolverError> {
        Grid::validate(dx, n_half)?;
        Ok(Grid {
            dim: 1,
            x0: [x0, 0.0],
            dx: [dx, 1.0],
            n_half: [n_half, 0],
        })
    }

    pub fn new_2d(x0: Point, dx: [f64; 2], n_half: [usize; 2]) -> Result<Grid, SolverError> {
        Grid::validate(dx[0], n_half[0])?;
        Grid::validate(dx[1], n_half[1])?;
        Ok(Grid {
            dim: 2,
            x0,
            dx,
            n_half,
        })
    }

    fn validate(dx: f64, n_half: usize) -> Result<(), SolverError> {
        if !(dx > 0.0) {
            return Err(SolverError::Domain(format!("dx must be positive, got {dx}")));
        }
        if n_half < 4 {
            return Err(SolverError::Domain(format!(
                "n_half must be at least 4 (boundary extrapolation needs 4 interior neighbors), got {n_half}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> Point {
        self.x0
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.dx[axis]
    }

    pub fn n_half(&self, axis: usize) -> usize {
        self.n_half[axis]
    }

    pub fn axis_len(&self, axis: usize) -> usize {
        if axis < self.dim {
            2 * self.n_half[axis] + 1
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.axis_len(0) * self.axis_len(1)
    }

    /// A grid always carries at least one point per axis.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature cell volume: `dx` in 1D, `dx * dy` in 2D.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 2 {
            self.dx[0] * self.dx[1]
        } else {
            self.dx[0]
        }
    }

    pub fn coord(&self, axis: usize, idx: usize) -> f64 {
        self.x0[axis] + (idx as f64 - self.n_half[axis] as f64) * self.dx[axis]
    }

    /// Point of a flat (row-major, x outer) index.
    pub fn point(&self, flat: usize) -> Point {
        let ny = self.axis_len(1);
        let ix = flat / ny;
        let iy = flat % ny;
        if self.dim == 2 {
            [self.coord(0, ix), self.coord(1, iy)]
        } else {
            [self.coord(0, ix), 0.0]
        }
    }

    pub fn points_iter(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Grid with `k` extra layers per side (shrinking policy allocates its
    /// working margin this way).
    pub fn padded(&self, k: usize) -> Grid {
        let mut g = *self;
        g.n_half[0] += k;
        if self.dim == 2 {
            g.n_half[1] += k;
        }
        g
    }

    /// Grid with the outermost layer removed on every side; removing a layer
    /// must leave at least 3 points per axis.
    pub(crate) fn shrunk(&self) -> Result<Grid, SolverError> {
        let mut g = *self;
        for axis in 0..self.dim {
            if self.axis_len(axis) < 5 {
                return Err(SolverError::Domain(format!(
                    "cannot shrink: axis {axis} has {} points, need at least 5",
                    self.axis_len(axis)
                )));
            }
            g.n_half[axis] -= 1;
        }
        Ok(g)
    }

    /// Per-axis max difference quotient of grid values.
    pub fn lipschitz_of(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let (nx, ny) = (self.axis_len(0), self.axis_len(1));
        let mut l = 0.0f64;
        for ix in 0..nx {
            for iy in 0..ny {
                let f = ix * ny + iy;
                if ix + 1 < nx {
                    l = l.max((values[f + ny] - values[f]).abs() / self.dx[0]);
                }
                if self.dim == 2 && iy + 1 < ny {
                    l = l.max((values[f + 1] - values[f]).abs() / self.dx[1]);
                }
            }
        }
        l
    }
}

/// Grid-valued unknown at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    grid: Grid,
    values: Vec<f64>,
}

impl State {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<State, SolverError> {
        if values.len() != grid.len() {
            return Err(SolverError::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(State { grid, values })
    }

    pub fn sample(grid: Grid, f: impl Fn(Point) -> f64) -> State {
        let values = grid.points_iter().map(f).collect();
        State { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Location of the minimum; ties resolve to the smallest flat index
    /// (lexicographic in 2D), which keeps trajectories deterministic.
    pub fn argmin(&self) -> Point {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = i;
            }
        }
        self.grid.point(best)
    }

    pub fn lipschitz(&self) -> f64 {
        self.grid.lipschitz_of(&self.values)
    }

    /// Remove the outermost layer on every side.
    pub fn shrink(&self) -> Result<State, SolverError> {
        let mut out = self.clone();
        for axis in 0..self.grid.dim() {
            out = out.shrink_axis(axis)?;
        }
        Ok(out)
    }

    /// Remove the outermost layer on both sides of one axis.
    pub(crate) fn shrink_axis(&self, axis: usize) -> Result<State, SolverError> {
        if self.grid.axis_len(axis) < 5 {
            return Err(SolverError::Domain(format!(
                "cannot shrink: axis {axis} has {} points, need at least 5",
                self.grid.axis_len(axis)
            )));
        }
        let mut grid = self.grid;
        grid.n_half[axis] -= 1;
        let (nx, ny) = (self.grid.axis_len(0), self.grid.axis_len(1));
        let mut values = Vec::with_capacity(grid.len());
        let (x_range, y_range) = match axis {
            0 => (1..nx - 1, 0..ny),
            _ => (0..nx, 1..ny - 1),
        };
        for ix in x_range {
            for iy in y_range.clone() {
                values.push(self.values[ix * ny + iy]);
            }
        }
        Ok(State { grid, values })
    }
}

/// Domain-handling policy for the time loop.
///
/// `Shrinking` starts from a grid padded by `padding` layers and removes one
/// layer per side per time step, so no boundary approximation is ever made;
/// `padding` must cover the number of time steps. `Extrapolated` keeps the
/// grid fixed and rebuilds one ghost value per boundary from the cubic
/// extrapolation at every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationPolicy {
    Shrinking { padding: usize },
    Extrapolated,
}

/// Smallest truncation radius `X` such that the coercivity tail bound
/// `2 psi_max exp(-(a X + b_T) / eps_eff) / (1 - exp(-a dx / eps_eff))`
/// drops below `dt`, where `b_T = b_lower - T (H(a, a) + K)` is the
/// time-decayed lower offset and `eps_eff = max(eps, EPS_FLOOR)`.
pub fn truncation_radius(
    _model: &Model,
    consts: &ModelConstants,
    eps: f64,
    dt: f64,
    t_final: f64,
    dx: f64,
) -> Result<f64, SolverError> {
    let a = consts.a_lower;
    if !(a > 0.0) {
        return Err(SolverError::CoercivityFailure { a });
    }
    let eps_eff = eps.max(EPS_FLOOR);
    let b_t = consts.b_lower - t_final * (numerical_hamiltonian(a, a) + consts.k);
    let denom = 1.0 - (-a * dx / eps_eff).exp();
    let x = (eps_eff * (2.0 * consts.psi_max / (dt * denom)).ln() - b_t) / a;
    Ok(x.max(0.0))
}

/// State augmented with one ghost value per boundary per axis, computed by
/// the 4-point cubic extrapolation `u_0 = 4 u_1 - 6 u_2 + 4 u_3 - u_4` and
/// its mirror; in 2D the rule is applied axis-by-axis on each boundary line.
/// The 5-point stencil never reads the corners, but they are filled by
/// extrapolating the ghost rows so the padded state carries no artificial
/// slopes.
pub fn extrapolate_boundary(u: &State) -> Result<State, SolverError> {
    let g = u.grid();
    for axis in 0..g.dim() {
        if g.axis_len(axis) < 4 {
            return Err(SolverError::Domain(format!(
                "boundary extrapolation needs at least 4 points per axis, axis {axis} has {}",
                g.axis_len(axis)
            )));
        }
    }
    let padded = g.padded(1);
    let (nx, ny) = (g.axis_len(0), g.axis_len(1));
    let pny = padded.axis_len(1);
    let mut values = vec![0.0; padded.len()];
    let off_y = if g.dim() == 2 { 1 } else { 0 };
    for ix in 0..nx {
        for iy in 0..ny {
            values[(ix + 1) * pny + iy + off_y] = u.values()[ix * ny + iy];
        }
    }
    let cubic = |a: f64, b: f64, c: f64, d: f64| 4.0 * a - 6.0 * b + 4.0 * c - d;
    // x-boundaries: one ghost per y-line
    for iy in 0..ny {
        let v = |ix: usize| u.values()[ix * ny + iy];
        values[iy + off_y] = cubic(v(0), v(1), v(2), v(3));
        values[(nx + 1) * pny + iy + off_y] = cubic(v(nx - 1), v(nx - 2), v(nx - 3), v(nx - 4));
    }
    if g.dim() == 2 {
        for ix in 0..nx {
            let v = |iy: usize| u.values()[ix * ny + iy];
            values[(ix + 1) * pny] = cubic(v(0), v(1), v(2), v(3));
            values[(ix + 1) * pny + ny + 1] = cubic(v(ny - 1), v(ny - 2), v(ny - 3), v(ny - 4));
        }
        for ghost_col in [0, ny + 1] {
            let v: Vec<f64> = (0..=nx + 1).map(|row| values[row * pny + ghost_col]).collect();
            values[ghost_col] = cubic(v[1], v[2], v[3], v[4]);
            values[(nx + 1) * pny + ghost_col] = cubic(v[nx], v[nx - 1], v[nx - 2], v[nx - 3]);
        }
    }
    State::new(padded, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{estimate_constants, Model};

    #[test]
    fn grid_basics() {
        let g = Grid::new_1d(1.0, 5e-2, 100).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g.point(0)[0] + 4.0).abs() < 1e-12);
        assert!((g.point(200)[0] - 6.0).abs() < 1e-12);
        assert!((g.point(100)[0] - 1.0).abs() < 1e-12);
        assert!(Grid::new_1d(0.0, 0.1, 3).is_err());
        assert!(Grid::new_1d(0.0, -0.1, 10).is_err());
    }

    #[test]
    fn extrapolation_exact_on_low_degree_polynomials() {
        let g = Grid::new_1d(0.0, 1.0, 4).unwrap();
        for f in [
            (|x: f64| x) as fn(f64) -> f64,
            |x: f64| x * x,
            |x: f64| x * x * x,
            |x: f64| 2.0 * x * x * x - 3.0 * x * x + x - 7.0,
        ] {
            let u = State::sample(g, |p| f(p[0]));
            let e = extrapolate_boundary(&u).unwrap();
            let expect_left = f(g.point(0)[0] - 1.0);
            let expect_right = f(g.point(8)[0] + 1.0);
            let scale = expect_left.abs().max(expect_right.abs()).max(1.0);
            assert!((e.values()[0] - expect_left).abs() / scale <= 1e-12);
            assert!((e.values()[10] - expect_right).abs() / scale <= 1e-12);
        }
    }

    #[test]
    fn extrapolation_integer_examples() {
        // u_i = i, i^2, i^3 on i = 1..=4 extrapolate to 0 at i = 0
        let g = Grid::new_1d(2.5, 1.0, 4).unwrap(); // 9 points, values set directly
        for pow in 1..=3u32 {
            let vals: Vec<f64> = (1..=9).map(|i| (i as f64).powi(pow as i32)).collect();
            let u = State::new(g, vals).unwrap();
            let e = extrapolate_boundary(&u).unwrap();
            assert_eq!(e.values()[0], 0.0);
        }
    }

    #[test]
    fn extrapolation_2d_lines() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
        let u = State::sample(g, |p| p[0] * p[0] + 3.0 * p[1]);
        let e = extrapolate_boundary(&u).unwrap();
        // ghost on the left x-boundary, center y line
        let ghost = e.values()[5]; // padded ix = 0 (x = -5), iy center
        let expect = 25.0 + 0.0;
        assert!((ghost - expect).abs() < 1e-11, "ghost = {ghost}");
    }

    #[test]
    fn shrink_counts_and_center() {
        let g = Grid::new_1d(0.0, 1.0, 4).unwrap(); // 9 points
        let u = State::sample(g, |p| p[0]);
        let s = u.shrink().unwrap();
        assert_eq!(s.grid().len(), 7);
        assert!((s.grid().point(3)[0]).abs() < 1e-15);
        let s2 = s.shrink().unwrap().shrink().unwrap();
        assert_eq!(s2.grid().len(), 3);
        assert!(s2.shrink().is_err());
    }

    #[test]
    fn shrink_2d_counts() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap(); // 9 x 9
        let u = State::sample(g, |p| p[0] + p[1]);
        let s = u.shrink().unwrap();
        assert_eq!((s.grid().axis_len(0), s.grid().axis_len(1)), (7, 7));
    }

    #[test]
    fn shrink_axis_order_commutes_2d() {
        let g = Grid::new_2d([0.0, 0.0], [0.5, 0.25], [4, 5]).unwrap();
        let u = State::sample(g, |p| (p[0] + 1.0) * (p[1] - 2.0) + p[0] * p[0]);
        let xy = u.shrink_axis(0).unwrap().shrink_axis(1).unwrap();
        let yx = u.shrink_axis(1).unwrap().shrink_axis(0).unwrap();
        assert_eq!(xy, yx);
        assert_eq!(xy, u.shrink().unwrap());
        assert_eq!(xy.grid().axis_len(0), 7);
        assert_eq!(xy.grid().axis_len(1), 9);
    }

    fn consts_for_radius(a: f64, b: f64, k: f64) -> ModelConstants {
        ModelConstants {
            l0: a,
            k,
            kappa: k,
            i_min: 0.0,
            i_max: 1.0,
            i_min_bracketed: true,
            i_max_bracketed: true,
            psi_min: 1.0,
            psi_max: 1.0,
            a_lower: a,
            b_lower: b,
            a_upper: a,
            b_upper: b,
            dx_est: 1.0,
        }
    }

    #[test]
    fn truncation_radius_closed_form_example() {
        // a = 1, b_T = 0, psi_max = 1, eps = 1, dx = 1, dt = 0.1
        let m = Model::preset("paper-1d").unwrap();
        let c = consts_for_radius(1.0, 0.0, 2.0);
        let x = truncation_radius(&m, &c, 1.0, 0.1, 0.0, 1.0).unwrap();
        // oracle: scalar solve of 2 e^{-X} / (1 - e^{-1}) = dt
        let mut lo = 0.0;
        let mut hi = 50.0;
        let f = |x: f64| 2.0 * (-x).exp() / (1.0 - (-1.0f64).exp()) - 0.1;
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((x - 0.5 * (lo + hi)).abs() < 1e-10, "x = {x}");
        assert!((x - 3.45).abs() < 0.01);
    }

    #[test]
    fn truncation_radius_monotonicity() {
        let m = Model::preset("paper-1d").unwrap();
        // halving dt raises X by at most ln(2) * eps_eff / a
        for eps in [1.0, 1e-2, 0.0] {
            let c = consts_for_radius(0.8, -1.0, 2.0);
            let x1 = truncation_radius(&m, &c, eps, 1e-3, 1.0, 0.05).unwrap();
            let x2 = truncation_radius(&m, &c, eps, 5e-4, 1.0, 0.05).unwrap();
            assert!(x2 >= x1);
            let cap = 2.0f64.ln() * eps.max(EPS_FLOOR) / 0.8;
            assert!(x2 - x1 <= cap + 1e-12, "growth {} cap {}", x2 - x1, cap);
        }
        // non-increasing in a_lower on the sub-critical slope range
        // (for slopes beyond sqrt(C/T) the linear-growth term takes over)
        let mut prev = f64::INFINITY;
        for k in 1..=9 {
            let a = 0.15 * k as f64;
            let c = consts_for_radius(a, 0.0, 2.0);
            let x = truncation_radius(&m, &c, 1e-3, 1e-3, 1.0, 0.05).unwrap();
            assert!(x <= prev + 1e-12, "a = {a}: {x} > {prev}");
            prev = x;
        }
    }

    #[test]
    fn truncation_radius_requires_coercivity() {
        let m = Model::preset("paper-1d").unwrap();
        let c = consts_for_radius(0.0, 0.0, 2.0);
        assert!(matches!(
            truncation_radius(&m, &c, 1e-2, 1e-3, 1.0, 0.05),
            Err(SolverError::CoercivityFailure { .. })
        ));
    }

    #[test]
    fn radius_verified_a_posteriori_paper_preset() {
        // doubling the domain radius changes the initial quadrature by < dt
        let m = Model::preset("paper-1d").unwrap();
        let g = Grid::new_1d(1.0, 5e-2, 100).unwrap();
        let c = estimate_constants(&m, &g, 1.0).unwrap();
        let eps = 1e-2;
        let dt = 5e-4;
        let x = truncation_radius(&m, &c, eps, dt, 1.0, 5e-2).unwrap();
        let quad = |radius: f64| {
            let n = (radius / 5e-2).ceil() as usize;
            let g = Grid::new_1d(1.0, 5e-2, n.max(4)).unwrap();
            5e-2 * g
                .points_iter()
                .map(|p| (-m.initial_value(p) / eps).exp())
                .sum::<f64>()
        };
        assert!((quad(2.0 * x) - quad(x)).abs() < dt);
    }
}
