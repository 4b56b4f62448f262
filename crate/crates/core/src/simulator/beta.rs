//! Shifted and scaled beta model of detector inter-arrival times.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed dead-time floor of the fitted model, seconds.
pub const DEFAULT_X0_S: f64 = 15e-9;
/// Fixed scale of the fitted model, seconds.
pub const DEFAULT_SCALE_S: f64 = 1.0;
/// Detection-rate band over which the default rate map is calibrated (Hz).
pub const CALIBRATION_BAND_HZ: (f64, f64) = (100e3, 650e3);
/// Minimum sample count accepted by [`fit_beta`].
pub const MIN_FIT_SAMPLES: usize = 1000;

/// Beta distribution on `(x0, x0 + s)` with shape parameters `alpha`, `beta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BetaArrivalModel<T> {
    pub alpha: T,
    pub beta: T,
    /// Offset (seconds).
    pub x0: T,
    /// Scale (seconds).
    pub s: T,
}

impl<T: Scalar> BetaArrivalModel<T> {
    /// Model with the fixed `alpha = 1`, `x0 = 15 ns`, `s = 1 s` and the given `beta`.
    pub fn new(beta: T) -> Result<Self> {
        Self::with_params(T::one(), beta, T::lit(DEFAULT_X0_S), T::lit(DEFAULT_SCALE_S))
    }

    pub fn with_params(alpha: T, beta: T, x0: T, s: T) -> Result<Self> {
        if !(alpha > T::zero() && beta > T::zero() && s > T::zero()) || !x0.is_finite() {
            return Err(Error::invalid(format!(
                "beta model needs alpha, beta, s > 0 (alpha={alpha}, beta={beta}, x0={x0}, s={s})"
            )));
        }
        Ok(Self { alpha, beta, x0, s })
    }

    /// Density at `x` seconds; zero outside `[x0, x0 + s]`.
    pub fn pdf(&self, x: T) -> T {
        let z = (x - self.x0) / self.s;
        if !(z >= T::zero() && z <= T::one()) {
            return T::zero();
        }
        let (a, b) = (self.alpha.as_f64(), self.beta.as_f64());
        let z = z.as_f64();
        let mut log = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) - self.s.as_f64().ln();
        // 0^0 = 1: the power terms vanish when their exponent is zero.
        if a != 1.0 {
            log += (a - 1.0) * z.ln();
        }
        if b != 1.0 {
            log += (b - 1.0) * (-z).ln_1p();
        }
        T::lit(log.exp())
    }

    pub fn cdf(&self, x: T) -> T {
        let z = (x - self.x0) / self.s;
        if z <= T::zero() {
            return T::zero();
        }
        if z >= T::one() {
            return T::one();
        }
        if self.alpha == T::one() {
            // 1 - (1 - z)^beta
            return -(self.beta * (-z).ln_1p()).exp_m1();
        }
        T::lit(beta_reg(self.alpha.as_f64(), self.beta.as_f64(), z.as_f64()))
    }

    pub fn mean(&self) -> T {
        self.x0 + self.s * self.alpha / (self.alpha + self.beta)
    }

    /// Inverse CDF for `alpha = 1`: `(x - x0)/s = 1 - (1 - u)^(1/beta)`.
    /// Returns the normalized excess `z` in `[0, 1)` rather than `x`.
    pub fn unit_quantile(&self, u: T) -> T {
        -((-u).ln_1p() / self.beta).exp_m1()
    }

    /// Draws one normalized excess `z = (x - x0)/s`.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        if self.alpha == T::one() {
            let u: f64 = rng.random();
            self.unit_quantile(T::lit(u))
        } else {
            let d = Beta::new(self.alpha.as_f64(), self.beta.as_f64()).expect("validated shape parameters");
            T::lit(d.sample(rng))
        }
    }

    /// Draws one inter-arrival time in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.x0 + self.s * self.sample_unit(rng)
    }
}

/// Density of `model` at `x` seconds.
pub fn beta_pdf<T: Scalar>(x: T, model: &BetaArrivalModel<T>) -> T {
    model.pdf(x)
}

/// Maximum-likelihood `beta` for inter-arrival samples with `alpha = 1` and the
/// given `x0`, `s` held fixed: `beta = N / sum(-ln(1 - (x - x0)/s))`.
pub fn fit_beta_with<T: Scalar>(samples: &[T], x0: T, s: T) -> Result<BetaArrivalModel<T>> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "fit_beta needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut acc = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        if !(x > x0) {
            return Err(Error::invalid(format!("sample {i} = {x} s is not above the dead-time floor {x0} s")));
        }
        let z = ((x - x0) / s).as_f64();
        if z >= 1.0 {
            return Err(Error::invalid(format!("sample {i} = {x} s lies beyond the model support")));
        }
        acc -= (-z).ln_1p();
    }
    let beta = samples.len() as f64 / acc;
    BetaArrivalModel::with_params(T::one(), T::lit(beta), x0, s)
}

/// [`fit_beta_with`] using the default `x0` and `s`.
pub fn fit_beta<T: Scalar>(samples: &[T]) -> Result<BetaArrivalModel<T>> {
    fit_beta_with(samples, T::lit(DEFAULT_X0_S), T::lit(DEFAULT_SCALE_S))
}

/// Linear map from detection rate to `beta`: `beta = slope * rate`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BetaRateMap {
    /// Seconds (beta per Hz).
    pub slope: f64,
    pub x0: f64,
    pub s: f64,
}

impl Default for BetaRateMap {
    fn default() -> Self {
        Self::minimax(CALIBRATION_BAND_HZ.0, CALIBRATION_BAND_HZ.1, DEFAULT_X0_S, DEFAULT_SCALE_S)
    }
}

impl BetaRateMap {
    /// Relative error of the model mean against `1/rate`.
    pub fn mean_error(&self, rate: f64) -> f64 {
        let beta = self.slope * rate;
        rate * (self.x0 + self.s / (1.0 + beta)) - 1.0
    }

    /// Slope that balances the relative mean error at both ends of `[lo, hi]`.
    /// The error is increasing in rate and decreasing in slope, so the
    /// worst case over the band sits at the endpoints.
    pub fn minimax(lo: f64, hi: f64, x0: f64, s: f64) -> Self {
        let imbalance = |slope: f64| {
            let m = Self { slope, x0, s };
            m.mean_error(lo) + m.mean_error(hi)
        };
        let (mut a, mut b) = (0.5 * s, 2.0 * s);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if imbalance(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        Self { slope: 0.5 * (a + b), x0, s }
    }

    /// Least-squares slope through the origin over `(rate, beta)` pairs.
    pub fn calibrate(points: &[(f64, f64)]) -> Result<Self> {
        let (num, den) = points.iter().fold((0.0, 0.0), |(n, d), &(r, b)| (n + r * b, d + r * r));
        if points.is_empty() || den <= 0.0 {
            return Err(Error::InsufficientData("calibration needs at least one positive rate".into()));
        }
        Ok(Self { slope: num / den, x0: DEFAULT_X0_S, s: DEFAULT_SCALE_S })
    }

    /// Fits `beta` on each inter-arrival trace (rate taken as the inverse mean
    /// gap) and refits the slope.
    pub fn calibrate_from_traces(traces: &[Vec<f64>]) -> Result<Self> {
        let mut points = Vec::with_capacity(traces.len());
        for trace in traces {
            let model = fit_beta(trace)?;
            let mean = trace.iter().sum::<f64>() / trace.len() as f64;
            points.push((1.0 / mean, model.beta));
        }
        Self::calibrate(&points)
    }

    /// Highest representable rate (inverse dead-time floor).
    pub fn rate_limit(&self) -> f64 {
        1.0 / self.x0
    }

    pub fn model_for(&self, rate_hz: f64) -> Result<BetaArrivalModel<f64>> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::invalid(format!("detection rate must be positive, got {rate_hz}")));
        }
        if rate_hz >= self.rate_limit() {
            return Err(Error::RateExceedsDeadTime { rate: rate_hz, limit: self.rate_limit() });
        }
        BetaArrivalModel::with_params(1.0, self.slope * rate_hz, self.x0, self.s)
    }
}

/// Beta model for a detection rate using the default calibrated map.
pub fn beta_for_rate(rate_hz: f64) -> Result<BetaArrivalModel<f64>> {
    BetaRateMap::default().model_for(rate_hz)
}
