//! Domain types and pure simulation kernels.
//!
//! The thermal model is a first-order RC circuit driven by internally
//! generated heat `h`. With surface temperature `T_s` as the capacitor
//! voltage, ambient `T_a` as the sink and `eps = exp(-dt / (R_T * C_T))`,
//! exact discretization of the circuit ODE gives the recursion
//!
//! ```text
//! T_s[k] = eps * T_s[k-1] + (1 - eps) * T_a[k-1] + (1 - eps) * R_T * h[k-1]
//! ```
//!
//! Heat generation combines irreversible (overpotential) and reversible
//! (entropic) sources; both are folded into a single polynomial of SOC so
//! that `h = I * (V - eta(SOC))`. Substituting `h` into the recursion and
//! collecting coefficients yields a form that is *linear* in a reparameterized
//! vector theta:
//!
//! ```text
//! T_s[k] = theta . x[k-1]
//! x      = [T_s, T_a, I*V, I, I*SOC, I*SOC^2, ..., I*SOC^d]
//! ```
//!
//! with `theta_1 = eps`, `theta_2 = 1 - eps`, `theta_3 = (1-eps)*R_T` and
//! `theta_{4+j} = -(1-eps)*R_T*eta_j` (the heat-polynomial minus sign is
//! folded into theta so the prediction is a plain dot product). Everything
//! here is a pure function on immutable data and safe to call from any
//! number of threads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance of the uniform-grid contract: consecutive sample
/// spacing may deviate at most this fraction from the nominal `dt`.
pub const GRID_TOLERANCE: f64 = 0.01;

/// Strictly positive and finite (NaN fails).
pub(crate) fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// One measurement record of a cycling experiment.
///
/// Current follows the coulomb-counting sign convention: negative while
/// discharging, positive while charging. Temperatures are in degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Seconds since cycle start.
    pub t: f64,
    /// Current in amperes.
    pub i: f64,
    /// Terminal voltage in volts.
    pub v: f64,
    /// Surface temperature in deg C.
    pub ts: f64,
    /// Ambient temperature in deg C.
    pub ta: f64,
}

impl Sample {
    pub fn new(t: f64, i: f64, v: f64, ts: f64, ta: f64) -> Self {
        Sample { t, i, v, ts, ta }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fields = [
            ("t", self.t),
            ("i", self.i),
            ("v", self.v),
            ("ts", self.ts),
            ("ta", self.ta),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidSample {
                    index,
                    reason: format!("{name} = {value} is not finite"),
                });
            }
        }
        if self.t < 0.0 {
            return Err(Error::InvalidSample {
                index,
                reason: format!("t = {} is negative", self.t),
            });
        }
        Ok(())
    }
}

/// One charging or discharging cycle, uniformly sampled.
///
/// Construction validates the hard invariants (finite fields, strictly
/// increasing time, positive capacity, SOC in range). The uniform-grid
/// contract (`|step - dt| <= 1% of dt`) is checked by the simulation and
/// identification entry points via [`CycleData::check_uniform_grid`], so a
/// freshly parsed, still-jittered cycle can be represented and handed to
/// [`crate::datasets::resample_uniform`].
#[derive(Debug, Clone, PartialEq)]
pub struct CycleData {
    samples: Vec<Sample>,
    dt: f64,
    q0: f64,
    soc0: f64,
    cycle_index: u32,
    meta: BTreeMap<String, String>,
}

impl CycleData {
    pub fn new(
        samples: Vec<Sample>,
        dt: f64,
        q0: f64,
        soc0: f64,
        cycle_index: u32,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooShortCycle {
                required: 2,
                got: samples.len(),
            });
        }
        if !positive_finite(dt) {
            return Err(Error::InvalidInterval(dt));
        }
        if !positive_finite(q0) {
            return Err(Error::InvalidCapacity(q0));
        }
        if !(0.0..=1.0).contains(&soc0) {
            return Err(Error::InvalidSoc(soc0));
        }
        for (index, sample) in samples.iter().enumerate() {
            sample.validate(index)?;
            if index > 0 && sample.t <= samples[index - 1].t {
                return Err(Error::NonMonotonicTime {
                    index,
                    t: sample.t,
                    prev: samples[index - 1].t,
                });
            }
        }
        Ok(CycleData {
            samples,
            dt,
            q0,
            soc0,
            cycle_index,
            meta,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Nominal sampling interval in seconds.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Maximum available capacity in ampere-hours.
    pub fn q0(&self) -> f64 {
        self.q0
    }

    /// Initial state of charge, dimensionless in `[0, 1]`.
    pub fn soc0(&self) -> f64 {
        self.soc0
    }

    pub fn cycle_index(&self) -> u32 {
        self.cycle_index
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn insert_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Time covered by the cycle, `t_last - t_first`, in seconds.
    pub fn span(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Largest relative deviation of a consecutive step from the nominal dt.
    pub fn max_grid_deviation(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| ((w[1].t - w[0].t) - self.dt).abs() / self.dt)
            .fold(0.0, f64::max)
    }

    /// Enforce the uniform-grid contract required by the model kernels.
    pub fn check_uniform_grid(&self) -> Result<()> {
        for (index, w) in self.samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            let deviation = (step - self.dt).abs() / self.dt;
            if deviation > GRID_TOLERANCE {
                return Err(Error::GridNotUniform {
                    index: index + 1,
                    step,
                    nominal: self.dt,
                    deviation: deviation * 100.0,
                });
            }
        }
        Ok(())
    }
}

/// Real polynomial in SOC; `coeffs[j]` multiplies `soc^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidPolynomial(
                "need at least one coefficient".into(),
            ));
        }
        if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidPolynomial(format!(
                "non-finite coefficient {c}"
            )));
        }
        Ok(Polynomial { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Evaluate by Horner recurrence.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Alias for [`Polynomial::eval`], matching the operation vocabulary used
/// throughout the crate.
pub fn poly_eval(p: &Polynomial, soc: f64) -> f64 {
    p.eval(soc)
}

/// Physical thermal parameters: resistance, capacitance and the heat
/// polynomial `eta` (difference of the OCV and entropic-term polynomials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    r_t: f64,
    c_t: f64,
    eta: Polynomial,
}

impl PhysicalParams {
    pub fn new(r_t: f64, c_t: f64, eta: Polynomial) -> Result<Self> {
        if !positive_finite(r_t) {
            return Err(Error::InvalidPolynomial(format!(
                "thermal resistance r_t = {r_t} must be positive and finite"
            )));
        }
        if !positive_finite(c_t) {
            return Err(Error::InvalidPolynomial(format!(
                "thermal capacitance c_t = {c_t} must be positive and finite"
            )));
        }
        Ok(PhysicalParams { r_t, c_t, eta })
    }

    /// Thermal resistance in K/W.
    pub fn r_t(&self) -> f64 {
        self.r_t
    }

    /// Thermal capacitance in J/K.
    pub fn c_t(&self) -> f64 {
        self.c_t
    }

    pub fn eta(&self) -> &Polynomial {
        &self.eta
    }

    /// Discrete decay factor `exp(-dt / (R_T * C_T))`, in (0, 1) for any
    /// positive finite arguments.
    pub fn epsilon(&self, dt: f64) -> f64 {
        (-dt / (self.r_t * self.c_t)).exp()
    }
}

/// Reparameterized coefficient vector theta of length `m = d + 4`.
///
/// Stored in the all-plus convention: the model prediction is the plain dot
/// product `theta . x`, with the heat-sum minus sign folded into
/// `theta_4..theta_m` by [`params_to_linear`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    theta: Vec<f64>,
}

impl LinearParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.len() < 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                got: theta.len(),
            });
        }
        if let Some(c) = theta.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidPolynomial(format!(
                "non-finite linear parameter {c}"
            )));
        }
        Ok(LinearParams { theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Number of parameters, `m`.
    pub fn m(&self) -> usize {
        self.theta.len()
    }

    /// Degree of the embedded heat polynomial, `d = m - 4`.
    pub fn degree(&self) -> usize {
        self.theta.len() - 4
    }
}

/// How the temperature recursion is driven during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Each step uses the *measured* previous surface temperature
    /// (one-step-ahead residuals; this is what least squares minimizes).
    TeacherForced,
    /// Each step feeds back the model's own previous prediction
    /// (multi-step rollout of a whole profile).
    FreeRunning,
}

impl std::fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictionMode::TeacherForced => write!(f, "teacher_forced"),
            PredictionMode::FreeRunning => write!(f, "free_running"),
        }
    }
}

impl std::str::FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_forced" => Ok(PredictionMode::TeacherForced),
            "free_running" => Ok(PredictionMode::FreeRunning),
            other => Err(Error::Config(format!(
                "unknown prediction mode {other:?} (expected teacher_forced or free_running)"
            ))),
        }
    }
}

/// Clamping bounds for the SOC profile. Defaults to `[0, 1]`; infinite
/// bounds disable clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for SocBounds {
    fn default() -> Self {
        SocBounds { min: 0.0, max: 1.0 }
    }
}

impl SocBounds {
    pub const UNCLAMPED: SocBounds = SocBounds {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };
}

/// SOC trajectory of a cycle, one value per sample, plus how many values the
/// bounds clamped. Clamping keeps polynomial features bounded with noisy
/// current or a misestimated capacity, and the count keeps the data problem
/// visible.
#[derive(Debug, Clone, PartialEq)]
pub struct SocSeries {
    pub values: Vec<f64>,
    pub clamp_events: usize,
}

/// Quadrature rule for coulomb counting. Left-rectangle is the default; it
/// matches the explicit structure of the temperature recursion (features at
/// step k are built from sample k-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SocIntegration {
    #[default]
    LeftRectangle,
    Trapezoidal,
}

/// Coulomb-counting SOC profile with default `[0, 1]` clamping and
/// left-rectangle quadrature.
///
/// `values[0] = soc0` and each step adds `i[k-1] * step_seconds / (3600 * q0)`
/// using the actual per-step interval.
pub fn soc_profile(cycle: &CycleData) -> Result<SocSeries> {
    soc_profile_with(cycle, SocBounds::default())
}

/// [`soc_profile`] with configurable clamping bounds.
pub fn soc_profile_with(cycle: &CycleData, bounds: SocBounds) -> Result<SocSeries> {
    soc_profile_opts(cycle, bounds, SocIntegration::default())
}

/// [`soc_profile`] with configurable bounds and quadrature rule.
pub fn soc_profile_opts(
    cycle: &CycleData,
    bounds: SocBounds,
    rule: SocIntegration,
) -> Result<SocSeries> {
    cycle.check_uniform_grid()?;
    let samples = cycle.samples();
    let mut values = Vec::with_capacity(samples.len());
    let mut clamp_events = 0;
    let mut clamp = |raw: f64| {
        let clamped = raw.clamp(bounds.min, bounds.max);
        if clamped != raw {
            clamp_events += 1;
        }
        clamped
    };
    let mut soc = cycle.soc0();
    values.push(clamp(soc));
    for w in samples.windows(2) {
        let step = w[1].t - w[0].t;
        let charge = match rule {
            SocIntegration::LeftRectangle => w[0].i * step,
            SocIntegration::Trapezoidal => 0.5 * (w[0].i + w[1].i) * step,
        };
        soc += charge / (3600.0 * cycle.q0());
        values.push(clamp(soc));
    }
    Ok(SocSeries {
        values,
        clamp_events,
    })
}

/// Instantaneous heat generation in watts: `h = i * (v - eta(soc))`.
///
/// The sign is kept as-is (charging overpotential and entropic release can
/// legitimately make `h` negative); no absolute value is applied.
pub fn heat_generation(i: f64, v: f64, soc: f64, eta: &Polynomial) -> f64 {
    i * (v - eta.eval(soc))
}

/// One step of the physically parameterized recursion.
pub fn step_physical(
    ts_prev: f64,
    ta_prev: f64,
    h_prev: f64,
    p: &PhysicalParams,
    dt: f64,
) -> Result<f64> {
    if !positive_finite(dt) {
        return Err(Error::InvalidInterval(dt));
    }
    let eps = p.epsilon(dt);
    Ok(eps * ts_prev + (1.0 - eps) * ta_prev + (1.0 - eps) * p.r_t() * h_prev)
}

/// Regression features `[ts, ta, i*v, i, i*soc, ..., i*soc^d]` built from the
/// previous sample. `0^0` is taken as 1 so the bare-current feature survives
/// at zero SOC.
pub fn feature_row(sample_prev: &Sample, soc_prev: f64, d: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(d + 4);
    row.push(sample_prev.ts);
    row.push(sample_prev.ta);
    row.push(sample_prev.i * sample_prev.v);
    let mut monomial = 1.0;
    for _ in 0..=d {
        row.push(sample_prev.i * monomial);
        monomial *= soc_prev;
    }
    row
}

/// Human-readable names of the `m = d + 4` feature columns, in order.
pub fn feature_labels(d: usize) -> Vec<String> {
    let mut labels = vec!["ts_prev".to_string(), "ta_prev".to_string(), "i*v".to_string()];
    for j in 0..=d {
        labels.push(format!("i*soc^{j}"));
    }
    labels
}

/// One step of the linear form: the dot product `theta . features`.
pub fn step_linear(features: &[f64], theta: &LinearParams) -> Result<f64> {
    if features.len() != theta.m() {
        return Err(Error::DimensionMismatch {
            expected: theta.m(),
            got: features.len(),
        });
    }
    Ok(features
        .iter()
        .zip(theta.theta())
        .map(|(x, t)| x * t)
        .sum())
}

/// Map physical parameters to the linear vector:
/// `theta = [eps, 1-eps, (1-eps)*R_T, -(1-eps)*R_T*eta_0, ...]`.
pub fn params_to_linear(p: &PhysicalParams, dt: f64) -> Result<LinearParams> {
    if !positive_finite(dt) {
        return Err(Error::InvalidInterval(dt));
    }
    let eps = p.epsilon(dt);
    let gain = (1.0 - eps) * p.r_t();
    let mut theta = Vec::with_capacity(p.eta().coeffs().len() + 3);
    theta.push(eps);
    theta.push(1.0 - eps);
    theta.push(gain);
    for &eta_j in p.eta().coeffs() {
        theta.push(-gain * eta_j);
    }
    LinearParams::new(theta)
}

/// Physical parameters recovered from a linear vector.
///
/// Unconstrained least squares does not enforce `theta_1 + theta_2 = 1`, so
/// the ambient gain is discarded and its violation reported as `consistency`.
/// A fit can also land outside the physical manifold entirely (negative
/// resistance); that is flagged rather than rejected so the diagnostic is
/// still inspectable.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPhysical {
    pub r_t: f64,
    pub c_t: f64,
    pub eta: Polynomial,
    /// `|theta_1 + theta_2 - 1|`.
    pub consistency: f64,
    /// True when the recovered `r_t` or `c_t` is not strictly positive.
    pub non_physical: bool,
}

impl RecoveredPhysical {
    /// Convert into validated [`PhysicalParams`]; fails when flagged
    /// non-physical.
    pub fn into_params(self) -> Result<PhysicalParams> {
        PhysicalParams::new(self.r_t, self.c_t, self.eta)
    }
}

/// Invert the Table-of-coefficients mapping: `eps = theta_1`,
/// `R_T = theta_3 / (1 - theta_1)`, `R_T*C_T = -dt / ln(theta_1)`,
/// `eta_j = -theta_{4+j} / theta_3`.
pub fn linear_to_physical(theta: &LinearParams, dt: f64) -> Result<RecoveredPhysical> {
    if !positive_finite(dt) {
        return Err(Error::InvalidInterval(dt));
    }
    let t = theta.theta();
    let eps = t[0];
    if !(0.0 < eps && eps < 1.0) {
        return Err(Error::NonInvertible(format!(
            "theta_1 = {eps} must lie strictly in (0, 1) to act as a decay factor"
        )));
    }
    if t[2] == 0.0 {
        return Err(Error::NonInvertible(
            "theta_3 = 0 leaves the heat polynomial undetermined".into(),
        ));
    }
    let r_t = t[2] / (1.0 - eps);
    let rc = -dt / eps.ln();
    let c_t = rc / r_t;
    let eta = Polynomial::new(t[3..].iter().map(|&v| -v / t[2]).collect())?;
    let consistency = (t[0] + t[1] - 1.0).abs();
    Ok(RecoveredPhysical {
        r_t,
        c_t,
        eta,
        consistency,
        non_physical: !(r_t > 0.0 && c_t > 0.0),
    })
}

/// Roll the linear model over a cycle.
///
/// Element 0 of the output is the measured `ts[0]`; element `k` is predicted
/// from the features of sample `k-1`. Teacher-forced mode reads the measured
/// previous temperature, free-running mode feeds back the previous
/// prediction.
pub fn simulate_cycle(
    cycle: &CycleData,
    theta: &LinearParams,
    mode: PredictionMode,
) -> Result<Vec<f64>> {
    let soc = soc_profile(cycle)?;
    let samples = cycle.samples();
    let d = theta.degree();
    let mut out = Vec::with_capacity(samples.len());
    out.push(samples[0].ts);
    for k in 1..samples.len() {
        let mut prev = samples[k - 1];
        if mode == PredictionMode::FreeRunning {
            prev.ts = out[k - 1];
        }
        let features = feature_row(&prev, soc.values[k - 1], d);
        out.push(step_linear(&features, theta)?);
    }
    Ok(out)
}
