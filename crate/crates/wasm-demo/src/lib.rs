//! wasm-bindgen surface for the browser demo: drive a 1D run incrementally
//! and read back the curves the page plots.
//!
//! Build with `wasm-pack build crates/wasm-demo --target web --out-dir
//! www/pkg` and serve `crates/wasm-demo/www/`.

use wasm_bindgen::prelude::*;

use apsolve_core::analysis::detect_jumps;
use apsolve_core::model::Model;
use apsolve_core::runs::RunParams;
use apsolve_core::stepper_eps::EpsStepper;
use apsolve_core::stepper_limit::LimitStepper;

enum Driver {
    Eps(EpsStepper),
    Limit(LimitStepper),
}

/// One interactive simulation: either the stiff scheme at `eps > 0` or the
/// constrained limit scheme at `eps = 0`.
#[wasm_bindgen]
pub struct Demo {
    driver: Driver,
    scalar_series: Vec<f64>,
    eps: f64,
}

impl Demo {
    fn build(
        preset: &str,
        eps: f64,
        dt: f64,
        dx: f64,
        t_final: f64,
    ) -> Result<Demo, apsolve_core::SolverError> {
        let model = Model::preset(preset)?;
        if model.dim() != 1 {
            return Err(apsolve_core::SolverError::Domain(
                "the browser demo drives 1D presets".into(),
            ));
        }
        let mut params = RunParams::baseline();
        if dt > 0.0 {
            params.dt = dt;
        }
        if dx > 0.0 {
            params.dx = dx;
        }
        if t_final > 0.0 {
            params.t_final = t_final;
        }
        let driver = if eps > 0.0 {
            Driver::Eps(EpsStepper::new(&params.eps_config(&model, eps)?)?)
        } else {
            Driver::Limit(LimitStepper::new(&params.limit_config(&model)?)?)
        };
        Ok(Demo {
            driver,
            scalar_series: vec![],
            eps,
        })
    }

    fn advance_by(&mut self, steps: usize) -> Result<(), apsolve_core::SolverError> {
        for _ in 0..steps {
            if self.done() {
                break;
            }
            let scalar = match &mut self.driver {
                Driver::Eps(s) => s.advance()?.0,
                Driver::Limit(s) => s.advance()?.0,
            };
            self.scalar_series.push(scalar);
        }
        Ok(())
    }
}

#[wasm_bindgen]
impl Demo {
    /// `preset` is `paper-1d` or `analytic-1d`; `eps = 0` selects the limit
    /// scheme. Discretization defaults match the CLI when zeros are passed.
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, eps: f64, dt: f64, dx: f64, t_final: f64) -> Result<Demo, JsValue> {
        Demo::build(preset, eps, dt, dx, t_final).map_err(err_to_js)
    }

    /// Advance up to `steps` time steps (stops at the final time).
    pub fn advance(&mut self, steps: usize) -> Result<(), JsValue> {
        self.advance_by(steps).map_err(err_to_js)
    }

    pub fn done(&self) -> bool {
        match &self.driver {
            Driver::Eps(s) => s.done(),
            Driver::Limit(s) => s.done(),
        }
    }

    pub fn time(&self) -> f64 {
        match &self.driver {
            Driver::Eps(s) => s.time(),
            Driver::Limit(s) => s.time(),
        }
    }

    pub fn dt(&self) -> f64 {
        match &self.driver {
            Driver::Eps(s) => s.dt(),
            Driver::Limit(s) => s.dt(),
        }
    }

    pub fn n_steps(&self) -> usize {
        match &self.driver {
            Driver::Eps(s) => s.n_steps(),
            Driver::Limit(s) => s.n_steps(),
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn state(&self) -> &apsolve_core::grid::State {
        match &self.driver {
            Driver::Eps(s) => s.state(),
            Driver::Limit(s) => s.state(),
        }
    }

    /// Trait coordinates of the current grid.
    pub fn positions(&self) -> Vec<f64> {
        let g = self.state().grid();
        (0..g.len()).map(|i| g.point(i)[0]).collect()
    }

    /// Current profile `u` (or `v` for the limit scheme).
    pub fn values(&self) -> Vec<f64> {
        self.state().values().to_vec()
    }

    /// Hopf-Cole density `exp(-u / eps_view)`, normalised to max 1 for
    /// plotting. For the limit scheme pass a small display `eps_view`.
    pub fn density(&self, eps_view: f64) -> Vec<f64> {
        let e = eps_view.max(1e-6);
        let mut out: Vec<f64> = self
            .state()
            .values()
            .iter()
            .map(|&v| {
                let ex = -v / e;
                if ex < -700.0 {
                    0.0
                } else {
                    ex.exp()
                }
            })
            .collect();
        let m = out.iter().copied().fold(0.0f64, f64::max);
        if m > 0.0 {
            for v in &mut out {
                *v /= m;
            }
        }
        out
    }

    /// Total-population series `I^n` (or multiplier `J^n`) accumulated so
    /// far.
    pub fn scalar_series(&self) -> Vec<f64> {
        self.scalar_series.clone()
    }

    /// Dominant trait (argmin of the profile).
    pub fn argmin(&self) -> f64 {
        self.state().argmin()[0]
    }

    pub fn min_value(&self) -> f64 {
        self.state().min_value()
    }

    /// Detected jump times of the accumulated scalar series.
    pub fn jump_times(&self) -> Vec<f64> {
        detect_jumps(&self.scalar_series, self.dt(), 1e-10)
            .iter()
            .map(|j| j.time)
            .collect()
    }
}

fn err_to_js(e: apsolve_core::SolverError) -> JsValue {
    JsValue::from_str(&e.to_string())
}
