//! Domain types shared by every other module: uniform time grids, scalar
//! time-varying coefficients, quadratic cost specifications and the two
//! linear-quadratic models (drift-controlled and controlled-diffusion).
//!
//! Coefficients live on uniform sample grids with linear interpolation
//! between knots. Standing assumptions are checked knotwise.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("a time grid needs at least one step")]
    EmptyGrid,
    #[error("a sampled function needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value {value} in {name}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("sampled coefficient {name} has horizon {found}, expected {expected}")]
    HorizonMismatch {
        name: &'static str,
        found: f64,
        expected: f64,
    },
    #[error("control weight R must be positive, got {value} at t = {t}")]
    NonPositiveControlWeight { t: f64, value: f64 },
    #[error("noise level must be positive, got {value} at t = {t}")]
    NonPositiveNoise { t: f64, value: f64 },
    #[error("convexity defect Q - S^2/R = {value} < 0 at t = {t}")]
    ConvexityDefect { t: f64, value: f64 },
    #[error("terminal weight M must be non-negative, got {0}")]
    NegativeTerminalWeight(f64),
    #[error("invalid parameter box: {0}")]
    InvalidBox(String),
}

/// Uniform partition `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ModelError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidHorizon(horizon));
        }
        if steps == 0 {
            return Err(ModelError::EmptyGrid);
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Mesh size `|π|`.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// The `i`-th knot. The last knot is exactly the horizon.
    pub fn knot(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.knot(i)).collect()
    }

    pub fn refine(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }

    /// Returns `Some(r)` when every knot of `coarse` is a knot of `self`,
    /// i.e. the step counts differ by the integer factor `r`.
    pub fn refinement_factor(&self, coarse: &TimeGrid) -> Option<usize> {
        let same_horizon =
            (self.horizon - coarse.horizon).abs() <= 1e-12 * self.horizon.max(1.0);
        if same_horizon && self.steps.is_multiple_of(coarse.steps) {
            Some(self.steps / coarse.steps)
        } else {
            None
        }
    }

    /// Index `i` of the interval `[t_i, t_{i+1})` containing `t`; the
    /// horizon itself maps to the last interval.
    pub fn interval_index(&self, t: f64) -> usize {
        let last = self.steps - 1;
        let raw = (t / self.horizon * self.steps as f64).floor();
        let mut i = if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(last)
        };
        while i < last && self.knot(i + 1) <= t {
            i += 1;
        }
        while i > 0 && self.knot(i) > t {
            i -= 1;
        }
        i
    }
}

/// Samples of a function on a uniform grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    horizon: f64,
    values: Vec<f64>,
}

impl Samples {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: self.values.len() - 1,
        }
    }
}

/// A scalar coefficient on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFunction {
    Constant(f64),
    Sampled(Samples),
}

impl From<f64> for TimeFunction {
    fn from(c: f64) -> Self {
        TimeFunction::Constant(c)
    }
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        TimeFunction::Constant(value)
    }

    pub fn zero() -> Self {
        TimeFunction::Constant(0.0)
    }

    /// Uniformly spaced samples over `[0, horizon]`, first sample at 0 and
    /// last at the horizon.
    pub fn sampled(horizon: f64, values: Vec<f64>) -> Result<Self, ModelError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidHorizon(horizon));
        }
        if values.len() < 2 {
            return Err(ModelError::TooFewSamples(values.len()));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                name: "samples",
                value: bad,
            });
        }
        Ok(TimeFunction::Sampled(Samples { horizon, values }))
    }

    /// Samples `f` at every knot of `grid`.
    pub fn tabulate(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        TimeFunction::Sampled(Samples {
            horizon: grid.horizon,
            values: (0..=grid.steps).map(|i| f(grid.knot(i))).collect(),
        })
    }

    /// Builds `f(t)` from the given inputs: a constant when every input is
    /// constant, otherwise samples on the finest grid among the inputs.
    pub fn combine(inputs: &[&TimeFunction], f: impl Fn(f64) -> f64) -> Self {
        match finest_grid(inputs) {
            None => TimeFunction::Constant(f(0.0)),
            Some(grid) => TimeFunction::tabulate(&grid, f),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFunction::Constant(_))
    }

    pub fn samples(&self) -> Option<&Samples> {
        match self {
            TimeFunction::Constant(_) => None,
            TimeFunction::Sampled(s) => Some(s),
        }
    }

    pub fn grid(&self) -> Option<TimeGrid> {
        self.samples().map(Samples::grid)
    }

    /// Evaluation without a domain check; times outside the sample range
    /// are clamped to it.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Sampled(s) => {
                let steps = s.values.len() - 1;
                let pos = (t / s.horizon * steps as f64).clamp(0.0, steps as f64);
                let i = (pos.floor() as usize).min(steps - 1);
                let w = pos - i as f64;
                s.values[i] * (1.0 - w) + s.values[i + 1] * w
            }
        }
    }

    /// Checked evaluation: `t` must lie in the function's domain.
    pub fn eval(&self, t: f64) -> Result<f64, ModelError> {
        let horizon = match self {
            TimeFunction::Constant(_) => f64::INFINITY,
            TimeFunction::Sampled(s) => s.horizon,
        };
        if !(t.is_finite() && t >= 0.0 && t <= horizon) {
            return Err(ModelError::OutOfDomain { t, horizon });
        }
        Ok(self.value(t))
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            TimeFunction::Constant(c) => c.abs(),
            TimeFunction::Sampled(s) => s.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Sampled(s) => s.values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Sampled(s) => {
                s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Knot times of the sample grid (just `0` for a constant).
    pub fn knot_times(&self) -> Vec<f64> {
        match self {
            TimeFunction::Constant(_) => vec![0.0],
            TimeFunction::Sampled(s) => s.grid().knots(),
        }
    }

    fn check_horizon(&self, name: &'static str, horizon: f64) -> Result<(), ModelError> {
        if let TimeFunction::Sampled(s) = self {
            if (s.horizon - horizon).abs() > 1e-12 * horizon.max(1.0) {
                return Err(ModelError::HorizonMismatch {
                    name,
                    found: s.horizon,
                    expected: horizon,
                });
            }
        }
        Ok(())
    }
}

/// The grid with the most samples among the non-constant inputs.
pub fn finest_grid(inputs: &[&TimeFunction]) -> Option<TimeGrid> {
    inputs
        .iter()
        .filter_map(|f| f.grid())
        .max_by_key(TimeGrid::steps)
}

/// Quadratic running and terminal cost
/// `f(t,x,a) = Q x² + 2 S x a + R a² + 2 p x + 2 q a`, `g(x) = M x² + 2 m̄ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    /// `Q`
    pub state_weight: TimeFunction,
    /// `S`
    pub cross_weight: TimeFunction,
    /// `R`
    pub control_weight: TimeFunction,
    /// `p`
    pub state_linear: TimeFunction,
    /// `q`
    pub control_linear: TimeFunction,
    /// `M`
    pub terminal_weight: f64,
    /// `m̄`
    pub terminal_linear: f64,
}

impl CostSpec {
    pub fn zero() -> Self {
        Self {
            state_weight: TimeFunction::zero(),
            cross_weight: TimeFunction::zero(),
            control_weight: TimeFunction::zero(),
            state_linear: TimeFunction::zero(),
            control_linear: TimeFunction::zero(),
            terminal_weight: 0.0,
            terminal_linear: 0.0,
        }
    }

    /// Constant `Q`, `R`, `M` with every other coefficient zero.
    pub fn quadratic(state_weight: f64, control_weight: f64, terminal_weight: f64) -> Self {
        Self {
            state_weight: state_weight.into(),
            control_weight: control_weight.into(),
            terminal_weight,
            ..Self::zero()
        }
    }

    #[inline]
    pub fn running(&self, t: f64, x: f64, a: f64) -> f64 {
        self.state_weight.value(t) * x * x
            + 2.0 * self.cross_weight.value(t) * x * a
            + self.control_weight.value(t) * a * a
            + 2.0 * self.state_linear.value(t) * x
            + 2.0 * self.control_linear.value(t) * a
    }

    #[inline]
    pub fn terminal(&self, x: f64) -> f64 {
        self.terminal_weight * x * x + 2.0 * self.terminal_linear * x
    }

    fn functions(&self) -> [(&'static str, &TimeFunction); 5] {
        [
            ("Q", &self.state_weight),
            ("S", &self.cross_weight),
            ("R", &self.control_weight),
            ("p", &self.state_linear),
            ("q", &self.control_linear),
        ]
    }

    fn check_finite(&self, horizon: f64) -> Result<(), ModelError> {
        for (name, f) in self.functions() {
            f.check_horizon(name, horizon)?;
            check_finite_fn(name, f)?;
        }
        for (name, v) in [("M", self.terminal_weight), ("m_bar", self.terminal_linear)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite { name, value: v });
            }
        }
        Ok(())
    }
}

fn check_finite_fn(name: &'static str, f: &TimeFunction) -> Result<(), ModelError> {
    let sup = f.sup_norm();
    if sup.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite { name, value: sup })
    }
}

/// Drift parameters `θ = (A, B)` of `dX = (A X + B a) dt + σ̄ dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    pub a: f64,
    pub b: f64,
}

impl DriftParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.a, self.b]
    }

    pub fn from_array(v: [f64; 2]) -> Self {
        Self { a: v[0], b: v[1] }
    }

    pub fn distance_squared(&self, other: &DriftParams) -> f64 {
        (self.a - other.a).powi(2) + (self.b - other.b).powi(2)
    }
}

/// Drift-controlled model with constant unknown parameters and additive noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModel {
    /// True parameters `θ★`.
    pub drift: DriftParams,
    /// Noise level `σ̄`.
    pub noise: TimeFunction,
    pub x0: f64,
    pub horizon: f64,
    pub cost: CostSpec,
}

impl LqModel {
    /// Builds and validates a model for learning runs.
    pub fn new(
        drift: DriftParams,
        noise: TimeFunction,
        x0: f64,
        horizon: f64,
        cost: CostSpec,
    ) -> Result<Self, ModelError> {
        let model = Self {
            drift,
            noise,
            x0,
            horizon,
            cost,
        };
        validate_lq_model(&model)?;
        Ok(model)
    }

    /// Like [`LqModel::new`] but accepts a vanishing noise level, for
    /// deterministic checks only.
    pub fn diagnostic(
        drift: DriftParams,
        noise: TimeFunction,
        x0: f64,
        horizon: f64,
        cost: CostSpec,
    ) -> Result<Self, ModelError> {
        let model = Self {
            drift,
            noise,
            x0,
            horizon,
            cost,
        };
        validate_common(&model)?;
        for t in validation_knots(&[&model.noise]) {
            let s = model.noise.value(t);
            if s < 0.0 {
                return Err(ModelError::NonPositiveNoise { t, value: s });
            }
        }
        Ok(model)
    }

    /// The default benchmark: `A★ = 0.3`, `B★ = 1`, `σ̄ = 0.5`, `x0 = 1`,
    /// `T = 1`, `Q = R = 1`, `M = 0.5`, all other cost terms zero.
    pub fn benchmark() -> Self {
        let cost = CostSpec::quadratic(1.0, 1.0, 0.5);
        Self::new(DriftParams::new(0.3, 1.0), 0.5.into(), 1.0, 1.0, cost)
            .expect("benchmark model is valid")
    }

    pub fn grid(&self, steps: usize) -> Result<TimeGrid, ModelError> {
        TimeGrid::new(self.horizon, steps)
    }
}

fn validation_knots(fns: &[&TimeFunction]) -> Vec<f64> {
    let mut knots: Vec<f64> = fns.iter().flat_map(|f| f.knot_times()).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
}

fn validate_common(model: &LqModel) -> Result<(), ModelError> {
    if !(model.horizon.is_finite() && model.horizon > 0.0) {
        return Err(ModelError::InvalidHorizon(model.horizon));
    }
    for (name, v) in [
        ("A_star", model.drift.a),
        ("B_star", model.drift.b),
        ("x0", model.x0),
    ] {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { name, value: v });
        }
    }
    model.noise.check_horizon("sigma_bar", model.horizon)?;
    check_finite_fn("sigma_bar", &model.noise)?;
    model.cost.check_finite(model.horizon)?;
    let cost = &model.cost;
    let knots = validation_knots(&[&cost.control_weight, &cost.state_weight, &cost.cross_weight]);
    for &t in &knots {
        let r = cost.control_weight.value(t);
        if r <= 0.0 {
            return Err(ModelError::NonPositiveControlWeight { t, value: r });
        }
    }
    for &t in &knots {
        let r = cost.control_weight.value(t);
        let s = cost.cross_weight.value(t);
        let defect = cost.state_weight.value(t) - s * s / r;
        if defect < 0.0 {
            return Err(ModelError::ConvexityDefect { t, value: defect });
        }
    }
    if cost.terminal_weight < 0.0 {
        return Err(ModelError::NegativeTerminalWeight(cost.terminal_weight));
    }
    Ok(())
}

/// Checks `R > 0`, `σ̄ > 0`, `Q - S²/R ≥ 0` at every sample knot and `M ≥ 0`.
pub fn validate_lq_model(model: &LqModel) -> Result<(), ModelError> {
    validate_common(model)?;
    for t in validation_knots(&[&model.noise]) {
        let s = model.noise.value(t);
        if s <= 0.0 {
            return Err(ModelError::NonPositiveNoise { t, value: s });
        }
    }
    Ok(())
}

/// Controlled-diffusion model
/// `dX = (A_t X + B_t a + b̄_t) dt + (C_t X + D_t a + σ̄_t) dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLqModel {
    pub a: TimeFunction,
    pub b: TimeFunction,
    /// Drift offset `b̄`.
    pub offset: TimeFunction,
    pub c: TimeFunction,
    pub d: TimeFunction,
    /// Diffusion offset `σ̄`.
    pub noise: TimeFunction,
    pub x0: f64,
    pub horizon: f64,
    pub cost: CostSpec,
}

impl GeneralLqModel {
    /// Only boundedness is required here: no sign or convexity conditions.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ModelError::InvalidHorizon(self.horizon));
        }
        if !self.x0.is_finite() {
            return Err(ModelError::NonFinite {
                name: "x0",
                value: self.x0,
            });
        }
        for (name, f) in [
            ("A", &self.a),
            ("B", &self.b),
            ("b_bar", &self.offset),
            ("C", &self.c),
            ("D", &self.d),
            ("sigma_bar", &self.noise),
        ] {
            f.check_horizon(name, self.horizon)?;
            check_finite_fn(name, f)?;
        }
        self.cost.check_finite(self.horizon)
    }

    /// Embeds the drift-controlled model (`b̄ = C = D = 0`).
    pub fn from_lq(model: &LqModel) -> Self {
        Self {
            a: model.drift.a.into(),
            b: model.drift.b.into(),
            offset: TimeFunction::zero(),
            c: TimeFunction::zero(),
            d: TimeFunction::zero(),
            noise: model.noise.clone(),
            x0: model.x0,
            horizon: model.horizon,
            cost: model.cost.clone(),
        }
    }

    #[inline]
    pub fn drift(&self, t: f64, x: f64, action: f64) -> f64 {
        self.a.value(t) * x + self.b.value(t) * action + self.offset.value(t)
    }

    #[inline]
    pub fn diffusion(&self, t: f64, x: f64, action: f64) -> f64 {
        self.c.value(t) * x + self.d.value(t) * action + self.noise.value(t)
    }
}

/// Known compact parameter box `Θ = [A_lo, A_hi] × [B_lo, B_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBox {
    pub a_lo: f64,
    pub a_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

impl ThetaBox {
    pub fn new(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> Result<Self, ModelError> {
        let finite = [a_lo, a_hi, b_lo, b_hi].iter().all(|v| v.is_finite());
        if !finite || a_lo >= a_hi || b_lo >= b_hi {
            return Err(ModelError::InvalidBox(format!(
                "[{a_lo}, {a_hi}] x [{b_lo}, {b_hi}]"
            )));
        }
        Ok(Self {
            a_lo,
            a_hi,
            b_lo,
            b_hi,
        })
    }

    pub fn contains(&self, theta: &DriftParams) -> bool {
        (self.a_lo..=self.a_hi).contains(&theta.a) && (self.b_lo..=self.b_hi).contains(&theta.b)
    }

    pub fn contains_strictly(&self, theta: &DriftParams) -> bool {
        self.a_lo < theta.a && theta.a < self.a_hi && self.b_lo < theta.b && theta.b < self.b_hi
    }

    /// Coordinatewise clip onto the box.
    pub fn clip(&self, theta: &DriftParams) -> DriftParams {
        DriftParams {
            a: theta.a.clamp(self.a_lo, self.a_hi),
            b: theta.b.clamp(self.b_lo, self.b_hi),
        }
    }
}
