//! Problem data: net growth rate `R(x, I)`, weight `psi`, initial datum, and
//! the structural constants the schemes and CFL conditions are built from.

use std::fmt;
use std::sync::Arc;

use crate::error::SolverError;
use crate::grid::Grid;
use crate::hamiltonian::numerical_hamiltonian;

/// Trait points are carried as `[f64; 2]`; in dimension 1 the second
/// component is zero and ignored by the callbacks.
pub type Point = [f64; 2];

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type RateFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Immutable problem description. Evaluation callbacks are shared and safe to
/// call from concurrent study workers.
#[derive(Clone)]
pub struct Model {
    name: String,
    dim: usize,
    x0: Point,
    rate: RateFn,
    rate_di: Option<RateFn>,
    psi: ScalarFn,
    u_init: ScalarFn,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("x0", &self.x0)
            .finish()
    }
}

impl Model {
    pub fn custom(
        name: &str,
        dim: usize,
        x0: Point,
        rate: impl Fn(Point, f64) -> f64 + Send + Sync + 'static,
        psi: impl Fn(Point) -> f64 + Send + Sync + 'static,
        u_init: impl Fn(Point) -> f64 + Send + Sync + 'static,
        rate_di: Option<Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>>,
    ) -> Result<Model, SolverError> {
        if dim != 1 && dim != 2 {
            return Err(SolverError::Domain(format!(
                "trait dimension must be 1 or 2, got {dim}"
            )));
        }
        Ok(Model {
            name: name.to_string(),
            dim,
            x0,
            rate: Arc::new(rate),
            rate_di,
            psi: Arc::new(psi),
            u_init: Arc::new(u_init),
        })
    }

    /// Built-in model presets; names are stable CLI strings.
    ///
    /// * `paper-1d`: double-well initial datum with linear growth at
    ///   infinity, logistic-saturating rate `e^{-I} x^2/(1+x^2) - I`,
    ///   `psi = 1`.
    /// * `analytic-1d`: `v_in = min(x^2, (x-2)^2 + 1)` with `R = x - I`; the
    ///   rate is unbounded in `x` so it only makes sense on a truncated
    ///   domain, which is exactly how it is used.
    /// * `paper-2d`: the radial analogue of `paper-1d` on R^2.
    pub fn preset(name: &str) -> Result<Model, SolverError> {
        const ALPHA: f64 = 2.0;
        const BETA: f64 = -0.2;
        const DELTA: f64 = 1.0;
        match name {
            "paper-1d" => Model::custom(
                name,
                1,
                [1.0, 0.0],
                |x, i| (-i).exp() * x[0] * x[0] / (1.0 + x[0] * x[0]) - i,
                |_| 1.0,
                |x| {
                    let wb = (x[0] - BETA) * (x[0] - BETA);
                    let wa = (x[0] - ALPHA) * (x[0] - ALPHA) + DELTA;
                    wb.min(wa) / (1.0 + x[0] * x[0]).sqrt()
                },
                Some(Arc::new(|x: Point, i: f64| {
                    -(-i).exp() * x[0] * x[0] / (1.0 + x[0] * x[0]) - 1.0
                })),
            ),
            "analytic-1d" => Model::custom(
                name,
                1,
                [1.0, 0.0],
                |x, i| x[0] - i,
                |_| 1.0,
                |x| (x[0] * x[0]).min((x[0] - ALPHA) * (x[0] - ALPHA) + DELTA),
                Some(Arc::new(|_: Point, _: f64| -1.0)),
            ),
            "paper-2d" => Model::custom(
                name,
                2,
                [1.0, 1.0],
                |x, i| {
                    let r2 = x[0] * x[0] + x[1] * x[1];
                    (-i).exp() * r2 / (1.0 + r2) - i
                },
                |_| 1.0,
                |x| {
                    let wb = (x[0] - BETA) * (x[0] - BETA) + (x[1] - BETA) * (x[1] - BETA);
                    let wa =
                        (x[0] - ALPHA) * (x[0] - ALPHA) + (x[1] - ALPHA) * (x[1] - ALPHA) + DELTA;
                    wb.min(wa) / (1.0 + x[0] * x[0] + x[1] * x[1]).sqrt()
                },
                Some(Arc::new(|x: Point, i: f64| {
                    let r2 = x[0] * x[0] + x[1] * x[1];
                    -(-i).exp() * r2 / (1.0 + r2) - 1.0
                })),
            ),
            other => Err(SolverError::Domain(format!("unknown preset '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> Point {
        self.x0
    }

    /// Net growth rate `R(x, I)`.
    #[inline]
    pub fn rate(&self, x: Point, i: f64) -> f64 {
        (self.rate)(x, i)
    }

    /// `R` evaluation with a finiteness check; a non-finite value signals an
    /// ill-posed model at `(x, I)`.
    pub fn eval_checked(&self, x: Point, i: f64) -> Result<f64, SolverError> {
        let r = self.rate(x, i);
        if r.is_finite() {
            Ok(r)
        } else {
            Err(SolverError::Domain(format!(
                "R({x:?}, {i}) is not finite"
            )))
        }
    }

    /// `dR/dI`, analytic when supplied, otherwise a centered difference with
    /// step `1e-6 * max(1, |I|)`.
    #[inline]
    pub fn rate_di(&self, x: Point, i: f64) -> f64 {
        match &self.rate_di {
            Some(f) => f(x, i),
            None => {
                let h = 1e-6 * i.abs().max(1.0);
                (self.rate(x, i + h) - self.rate(x, i - h)) / (2.0 * h)
            }
        }
    }

    #[inline]
    pub fn weight(&self, x: Point) -> f64 {
        (self.psi)(x)
    }

    #[inline]
    pub fn initial_value(&self, x: Point) -> f64 {
        (self.u_init)(x)
    }
}

/// Structural constants estimated on a grid; feeds the CFL conditions and the
/// truncation-radius bound. Deterministic for identical inputs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ModelConstants {
    /// Grid Lipschitz constant of the initial datum.
    pub l0: f64,
    /// Bound on |dR/dI|, 1/|dR/dI| and the restricted-range W^{2,inf}
    /// surrogate of `R`.
    pub k: f64,
    /// W^{2,inf} surrogate of `R(., I)` over `I in [0, 2 I_M]`.
    pub kappa: f64,
    /// Root of `I -> min_x R(x, I)` (clamped to the bracket when the sign
    /// change is missing).
    pub i_min: f64,
    /// Root of `I -> max_x R(x, I)`.
    pub i_max: f64,
    /// Whether the `i_min` / `i_max` roots were bracketed (the positivity
    /// assumption on the rate extrema can fail; the analytic test case does).
    pub i_min_bracketed: bool,
    pub i_max_bracketed: bool,
    pub psi_min: f64,
    pub psi_max: f64,
    /// Coercivity envelope: `a_lower |x - x0| + b_lower <= u_in(x)
    /// <= a_upper |x - x0| + b_upper` on the grid.
    pub a_lower: f64,
    pub b_lower: f64,
    pub a_upper: f64,
    pub b_upper: f64,
    /// Grid spacing the constants were estimated on.
    pub dx_est: f64,
}

/// Bracket-bisection roots of `I -> min_x R(x, I)` and `I -> max_x R(x, I)`,
/// with min/max over `x` taken on the supplied grid.
///
/// When no sign change exists on the bracket the corresponding root is
/// clamped to the bracket end and flagged, without failing: the analytic test
/// case violates the extremum assumption by design.
pub fn find_i_bounds(
    model: &Model,
    grid: &Grid,
    bracket: (f64, f64),
) -> Result<ModelIBounds, SolverError> {
    if grid.is_empty() {
        return Err(SolverError::Domain("empty grid".into()));
    }
    let min_rate = |i: f64| {
        grid.points_iter()
            .map(|x| model.rate(x, i))
            .fold(f64::INFINITY, f64::min)
    };
    let max_rate = |i: f64| {
        grid.points_iter()
            .map(|x| model.rate(x, i))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (i_min, lo_ok) = bisect_decreasing(&min_rate, bracket, 1e-10);
    let (i_max, hi_ok) = bisect_decreasing(&max_rate, bracket, 1e-10);
    Ok(ModelIBounds {
        i_min,
        i_max,
        i_min_bracketed: lo_ok,
        i_max_bracketed: hi_ok,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ModelIBounds {
    pub i_min: f64,
    pub i_max: f64,
    pub i_min_bracketed: bool,
    pub i_max_bracketed: bool,
}

/// Bisection for a decreasing function of `I`. Returns the root to absolute
/// tolerance `tol`, or the clamped bracket end (flagged `false`) when the
/// sign change is missing.
fn bisect_decreasing(f: &dyn Fn(f64) -> f64, (mut lo, mut hi): (f64, f64), tol: f64) -> (f64, bool) {
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return (lo, true);
    }
    if fhi == 0.0 {
        return (hi, true);
    }
    if flo < 0.0 {
        // decreasing and already negative: root is below the bracket
        return (lo, false);
    }
    if fhi > 0.0 {
        return (hi, false);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), true)
}

/// Number of I-samples used for the `K` / `kappa` scans.
const I_SAMPLES: usize = 33;
/// Number of candidate slopes tried for the lower coercivity envelope.
const ENVELOPE_CANDIDATES: usize = 64;

/// Estimate the model constants on a grid.
///
/// * `l0` is the max over adjacent grid pairs of `|du_in| / dx`.
/// * `kappa` scans `|R| + |d_x R| + |d_xx R|` (centered differences) over the
///   grid and `I in [0, 2 i_max]`.
/// * `k` additionally covers the `dR/dI` bounds.
/// * The envelope slope `a_lower` is chosen among candidates `<= l0` to
///   minimise the truncation-radius proxy, with offset `b(a) = min(u_in -
///   a |x - x0|)`.
pub fn estimate_constants(
    model: &Model,
    grid: &Grid,
    t_final: f64,
) -> Result<ModelConstants, SolverError> {
    if grid.is_empty() {
        return Err(SolverError::Domain("empty grid".into()));
    }
    let u0: Vec<f64> = grid.points_iter().map(|x| model.initial_value(x)).collect();
    let l0 = grid.lipschitz_of(&u0);

    let (mut psi_min, mut psi_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in grid.points_iter() {
        let p = model.weight(x);
        psi_min = psi_min.min(p);
        psi_max = psi_max.max(p);
    }

    let bounds = find_i_bounds(model, grid, (0.0, 1e6))?;
    let i_hi = 2.0 * bounds.i_max.max(0.5);

    let dx = grid.dx(0);
    let mut kappa = 0.0f64;
    let mut k_di = 0.0f64;
    for s in 0..I_SAMPLES {
        let i = i_hi * s as f64 / (I_SAMPLES - 1) as f64;
        let mut w2 = 0.0f64;
        for idx in 0..grid.len() {
            let x = grid.point(idx);
            let r0 = model.rate(x, i);
            let mut deriv = 0.0f64;
            for axis in 0..model.dim() {
                let h = grid.dx(axis);
                let mut xp = x;
                let mut xm = x;
                xp[axis] += h;
                xm[axis] -= h;
                let (rp, rm) = (model.rate(xp, i), model.rate(xm, i));
                let d1 = (rp - rm) / (2.0 * h);
                let d2 = (rp - 2.0 * r0 + rm) / (h * h);
                deriv = deriv.max(d1.abs() + d2.abs());
            }
            w2 = w2.max(r0.abs() + deriv);
            let di = model.rate_di(x, i).abs();
            k_di = k_di.max(di).max(1.0 / di.max(1e-300));
        }
        kappa = kappa.max(w2);
    }
    let k = k_di.max(kappa);

    // Lower envelope: among candidate slopes, minimise the small-eps
    // truncation-radius proxy (T (a^2 + K) - b(a) + 1) / a.
    let radii: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let x = grid.point(idx);
            let dx0 = x[0] - model.center()[0];
            let dx1 = x[1] - model.center()[1];
            (dx0 * dx0 + dx1 * dx1).sqrt()
        })
        .collect();
    let offset_for = |a: f64| -> f64 {
        u0.iter()
            .zip(&radii)
            .map(|(&u, &r)| u - a * r)
            .fold(f64::INFINITY, f64::min)
    };
    let mut a_lower = 0.0;
    let mut b_lower = offset_for(0.0);
    if l0 > 0.0 {
        let mut best_proxy = f64::INFINITY;
        for c in 1..=ENVELOPE_CANDIDATES {
            let a = l0 * c as f64 / ENVELOPE_CANDIDATES as f64;
            let b = offset_for(a);
            let proxy = (t_final * (numerical_hamiltonian(a, a) + k) - b + 1.0) / a;
            if proxy < best_proxy {
                best_proxy = proxy;
                a_lower = a;
                b_lower = b;
            }
        }
    }
    let a_upper = l0.max(f64::MIN_POSITIVE);
    let b_upper = u0
        .iter()
        .zip(&radii)
        .map(|(&u, &r)| u - a_upper * r)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ModelConstants {
        l0,
        k,
        kappa,
        i_min: bounds.i_min,
        i_max: bounds.i_max,
        i_min_bracketed: bounds.i_min_bracketed,
        i_max_bracketed: bounds.i_max_bracketed,
        psi_min,
        psi_max,
        a_lower,
        b_lower,
        a_upper,
        b_upper,
        dx_est: dx,
    })
}
