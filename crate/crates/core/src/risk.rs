//! Sequential test of "population mean <= 1/2" for a bounded nonnegative
//! population.
//!
//! The built-in test is the ALPHA supermartingale with a truncated shrinkage
//! estimator. Other tests can be plugged in through [`RiskMeasure`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when checking that an observation lies in `[0, u]`.
const RANGE_TOLERANCE: f64 = 1e-12;

/// Absolute slack used when deciding the null mean has hit zero.
const NULL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    WithReplacement,
    #[default]
    WithoutReplacement,
}

/// Parameters of the truncated shrinkage estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkTrunc {
    pub eta0: f64,
    /// Weight of the prior guess, in pseudo-draws.
    pub d: f64,
    pub c: f64,
    pub eps: f64,
}

impl ShrinkTrunc {
    /// Defaults tuned for an overstatement assorter whose honest value is `eta0`.
    pub fn for_honest_value(eta0: f64) -> Self {
        ShrinkTrunc {
            eta0,
            d: 100.0,
            c: (eta0 - 0.5) / 2.0,
            eps: 1e-7,
        }
    }

    fn check(&self) -> Result<()> {
        let ShrinkTrunc { eta0, d, c, eps } = *self;
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(Error::Config(format!("eta0 = {eta0} must be positive")));
        }
        if !(d >= 1.0 && d.is_finite()) {
            return Err(Error::Config(format!("d = {d} must be at least 1")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("c = {c} must be positive")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps = {eps} must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    ShrinkTrunc(ShrinkTrunc),
    /// A constant alternative. `eta = mu` gives the trivial test.
    Fixed { eta: f64 },
}

/// A pluggable anytime-valid test.
pub trait RiskMeasure: Send {
    /// Feed one observation; returns the measured risk afterwards.
    fn update(&mut self, x: f64) -> Result<f64>;
    fn measured_risk(&self) -> f64;
    fn draws(&self) -> u64;
}

/// What the data say about the null beyond the test statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NullState {
    Open,
    /// The observed sum already exceeds what the null allows.
    Impossible,
    /// The null mean of the remaining items is at least the population
    /// bound, so no remaining data can reject it.
    Unfalsifiable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTest {
    u_pop: f64,
    n: u64,
    scheme: SamplingScheme,
    estimator: Estimator,
    t: f64,
    t_max: f64,
    sum: f64,
    j: u64,
    risk: f64,
    state: NullState,
}

impl AlphaTest {
    pub fn new(u_pop: f64, n: u64, scheme: SamplingScheme, estimator: Estimator) -> Result<Self> {
        if !(u_pop.is_finite() && u_pop > 0.5) {
            return Err(Error::Untestable(u_pop));
        }
        if n == 0 {
            return Err(Error::Precondition("population size must be at least 1".into()));
        }
        match estimator {
            Estimator::ShrinkTrunc(p) => p.check()?,
            Estimator::Fixed { eta } if !(eta.is_finite() && eta >= 0.0) => {
                return Err(Error::Config(format!("fixed eta {eta} must be nonnegative")))
            }
            Estimator::Fixed { .. } => {}
        }
        Ok(AlphaTest {
            u_pop,
            n,
            scheme,
            estimator,
            t: 1.0,
            t_max: 1.0,
            sum: 0.0,
            j: 0,
            risk: 1.0,
            state: NullState::Open,
        })
    }

    pub fn u_pop(&self) -> f64 {
        self.u_pop
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn running_sum(&self) -> f64 {
        self.sum
    }

    pub fn null_state(&self) -> NullState {
        self.state
    }

    /// Null mean of the next draw given the draws so far.
    pub fn null_mean(&self) -> f64 {
        match self.scheme {
            SamplingScheme::WithReplacement => 0.5,
            SamplingScheme::WithoutReplacement => {
                (self.n as f64 / 2.0 - self.sum) / (self.n - self.j) as f64
            }
        }
    }

    /// Predictable estimate of the mean for the next draw.
    pub fn eta(&self, mu: f64) -> f64 {
        let cap = |e: f64, eps: f64| e.min(self.u_pop - eps);
        let eta = match self.estimator {
            Estimator::ShrinkTrunc(ShrinkTrunc { eta0, d, c, eps }) => {
                let j = self.j as f64;
                let shrunk = (d * eta0 + self.sum) / (d + j);
                cap((mu + c / (d + j).sqrt()).max(shrunk), eps)
            }
            Estimator::Fixed { eta } => cap(eta, 0.0),
        };
        eta.max(mu)
    }

    /// Betting multiplier for observation `x` at null mean `mu` and estimate `eta`.
    pub fn multiplier(&self, x: f64, mu: f64, eta: f64) -> f64 {
        let u = self.u_pop;
        (x / mu) * (eta - mu) / (u - mu) + (u - eta) / (u - mu)
    }

    fn check_range(&self, x: f64) -> Result<()> {
        let slack = RANGE_TOLERANCE * self.u_pop.max(1.0);
        if !(x.is_finite() && x >= -slack && x <= self.u_pop + slack) {
            return Err(Error::OutOfRange { x, upper: self.u_pop });
        }
        Ok(())
    }

    fn record(&mut self, x: f64) {
        self.sum += x;
        self.j += 1;
        if self.scheme == SamplingScheme::WithoutReplacement {
            let half = self.n as f64 / 2.0;
            if self.sum > half + NULL_TOLERANCE * half.max(1.0) {
                self.state = NullState::Impossible;
            }
        }
    }
}

impl RiskMeasure for AlphaTest {
    fn update(&mut self, x: f64) -> Result<f64> {
        if self.scheme == SamplingScheme::WithoutReplacement && self.j >= self.n {
            return Err(Error::Exhausted(self.j));
        }
        self.check_range(x)?;
        match self.state {
            NullState::Impossible | NullState::Unfalsifiable => {
                self.record(x);
                return Ok(self.risk);
            }
            NullState::Open => {}
        }
        let mu = self.null_mean();
        if mu < -NULL_TOLERANCE {
            self.state = NullState::Impossible;
        } else if mu <= NULL_TOLERANCE {
            // Every remaining item must be 0 under the null.
            if x > NULL_TOLERANCE {
                self.state = NullState::Impossible;
            }
        } else if mu >= self.u_pop {
            self.state = NullState::Unfalsifiable;
        } else {
            let eta = self.eta(mu);
            let m = if eta == mu { 1.0 } else { self.multiplier(x, mu, eta) };
            self.t *= m;
            self.t_max = self.t_max.max(self.t);
        }
        self.record(x);
        self.risk = match self.state {
            NullState::Impossible => 0.0,
            NullState::Unfalsifiable => 1.0,
            NullState::Open => (1.0 / self.t_max).min(1.0),
        };
        Ok(self.risk)
    }

    fn measured_risk(&self) -> f64 {
        self.risk
    }

    fn draws(&self) -> u64 {
        self.j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn honest(v: f64) -> ShrinkTrunc {
        ShrinkTrunc::for_honest_value(1.0 / (2.0 - v))
    }

    #[test]
    fn init() {
        let t = AlphaTest::new(1.2, 100, SamplingScheme::default(), Estimator::ShrinkTrunc(honest(1.0 / 3.0)))
            .unwrap();
        assert_eq!(t.measured_risk(), 1.0);
        assert_eq!(t.t(), 1.0);
        assert!(matches!(
            AlphaTest::new(0.4, 100, SamplingScheme::default(), Estimator::Fixed { eta: 0.3 }),
            Err(Error::Untestable(_))
        ));
        assert!(AlphaTest::new(1.2, 0, SamplingScheme::default(), Estimator::Fixed { eta: 0.6 }).is_err());
        assert!((2.0 / (2.0 - 1.0 / 3.0) - 1.2f64).abs() < TOL);
    }

    #[test]
    fn multiplier_examples() {
        let t = AlphaTest::new(1.2, 100, SamplingScheme::WithReplacement, Estimator::Fixed { eta: 0.6 })
            .unwrap();
        assert!((t.multiplier(0.6, 0.5, 0.6) - 36.0 / 35.0).abs() < TOL);
        assert!((t.multiplier(0.0, 0.5, 0.6) - 0.6 / 0.7).abs() < TOL);
    }

    #[test]
    fn degenerate_estimator_leaves_risk_alone() {
        let mut t = AlphaTest::new(1.2, 100, SamplingScheme::WithReplacement, Estimator::Fixed { eta: 0.5 })
            .unwrap();
        for x in [0.0, 1.2, 0.6] {
            assert_eq!(t.update(x).unwrap(), 1.0);
            assert_eq!(t.t(), 1.0);
        }
    }

    #[test]
    fn risk_is_running_max() {
        // Multipliers 1.5 then 0.8: T history {1, 1.5, 1.2}.
        let mut t = AlphaTest::new(2.0, 10, SamplingScheme::WithReplacement, Estimator::Fixed { eta: 1.0 })
            .unwrap();
        // eta = 1, mu = 1/2, u = 2: m = x * (1/1.5) + 1/1.5, so x = 1.25 gives 1.5.
        t.update(1.25).unwrap();
        assert!((t.t() - 1.5).abs() < TOL);
        // m = 0.8 needs x = 0.2.
        t.update(0.2).unwrap();
        assert!((t.t() - 1.2).abs() < TOL);
        assert!((t.measured_risk() - 1.0 / 1.5).abs() < TOL);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let mut t = AlphaTest::new(1.2, 10, SamplingScheme::WithReplacement, Estimator::ShrinkTrunc(honest(1.0 / 3.0)))
            .unwrap();
        assert!(matches!(t.update(1.3), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.update(-0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.update(f64::NAN), Err(Error::OutOfRange { .. })));
        assert_eq!(t.draws(), 0);
        t.update(1.2).unwrap();
    }

    fn crossing(v: f64, n: u64, scheme: SamplingScheme) -> (u64, f64) {
        let eta0 = 1.0 / (2.0 - v);
        let mut t = AlphaTest::new(2.0 * eta0, n, scheme, Estimator::ShrinkTrunc(honest(v))).unwrap();
        loop {
            let r = t.update(eta0).unwrap();
            if r <= 0.05 {
                return (t.draws(), r);
            }
        }
    }

    #[test]
    fn honest_stream_stopping_rounds() {
        use SamplingScheme::*;
        let (k, r) = crossing(0.2, 10_000, WithoutReplacement);
        assert_eq!(k, 290);
        assert!((r - 0.04969775713534816).abs() < 1e-12);
        assert_eq!(crossing(0.2, 1000, WithoutReplacement).0, 230);
        let (k, r) = crossing(0.2, 1000, WithReplacement);
        assert_eq!(k, 299);
        assert!((r - 0.049536256637661064).abs() < 1e-12);
        assert_eq!(crossing(1.0 / 3.0, 10_000, WithoutReplacement).0, 106);
        assert_eq!(crossing(1.0 / 3.0, 1000, WithoutReplacement).0, 97);
        assert_eq!(crossing(1.0 / 3.0, 1000, WithReplacement).0, 107);
    }

    #[test]
    fn risk_after_200_honest_draws() {
        let eta0 = 1.0 / 1.8;
        for (scheme, want) in [
            (SamplingScheme::WithoutReplacement, 0.12859424747572837),
            (SamplingScheme::WithReplacement, 0.13397967485795906),
        ] {
            let mut t = AlphaTest::new(2.0 * eta0, 10_000, scheme, Estimator::ShrinkTrunc(honest(0.2))).unwrap();
            for _ in 0..200 {
                t.update(eta0).unwrap();
            }
            assert!((t.measured_risk() - want).abs() < 1e-12, "{}", t.measured_risk());
        }
    }

    #[test]
    fn exhaustion_and_impossible_null() {
        let mut t = AlphaTest::new(1.0, 2, SamplingScheme::WithoutReplacement, Estimator::Fixed { eta: 0.9 })
            .unwrap();
        // Sum 1.0 + 0.4 > N/2 = 1 once the second item is seen; first item alone is 1.0 = N/2.
        t.update(1.0).unwrap();
        assert_eq!(t.null_state(), NullState::Open);
        assert_eq!(t.update(0.4).unwrap(), 0.0);
        assert_eq!(t.null_state(), NullState::Impossible);
        assert!(matches!(t.update(0.5), Err(Error::Exhausted(2))));
    }

    #[test]
    fn unfalsifiable_null_pins_risk() {
        // N = 4, u = 1: after two zeros the remaining two must average 1 = u.
        let mut t = AlphaTest::new(1.0, 4, SamplingScheme::WithoutReplacement, Estimator::Fixed { eta: 0.9 })
            .unwrap();
        t.update(0.0).unwrap();
        t.update(0.0).unwrap();
        assert_eq!(t.update(1.0).unwrap(), 1.0);
        assert_eq!(t.null_state(), NullState::Unfalsifiable);
    }

    #[test]
    fn deterministic_trajectories() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 * 1.2).collect();
        let run = || {
            let mut t = AlphaTest::new(1.2, 1000, SamplingScheme::WithoutReplacement, Estimator::ShrinkTrunc(honest(1.0 / 3.0)))
                .unwrap();
            xs.iter().map(|&x| t.update(x).unwrap().to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
