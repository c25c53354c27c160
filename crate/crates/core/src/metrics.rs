//! Phase timing for review runs and Welch's two-sample t-test.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fetch,
    Tools,
    Map,
    Post,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Fetch, Phase::Tools, Phase::Map, Phase::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Fetch => "fetch",
            Phase::Tools => "tools",
            Phase::Map => "map",
            Phase::Post => "post",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| MetricsError::UnknownPhase(s.to_owned()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("unknown phase {0:?}")]
    UnknownPhase(String),
    #[error("phase {phase:?} has invalid duration {seconds}")]
    InvalidDuration { phase: String, seconds: f64 },
    #[error("sample of size {0} is too small; at least 2 observations are needed")]
    InsufficientSample(usize),
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("samples contain a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDuration {
    pub name: Phase,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phases: Vec<PhaseDuration>,
    pub total: f64,
}

/// Sums durations per phase, keeping the order of first appearance.
pub fn summarize_phases<S: AsRef<str>>(samples: &[(S, f64)]) -> Result<PhaseReport, MetricsError> {
    let mut report = PhaseReport::default();
    for (name, seconds) in samples {
        let phase: Phase = name.as_ref().parse()?;
        if !(seconds.is_finite() && *seconds >= 0.0) {
            return Err(MetricsError::InvalidDuration {
                phase: name.as_ref().to_owned(),
                seconds: *seconds,
            });
        }
        match report.phases.iter_mut().find(|p| p.name == phase) {
            Some(existing) => existing.duration += seconds,
            None => report.phases.push(PhaseDuration {
                name: phase,
                duration: *seconds,
            }),
        }
        report.total += seconds;
    }
    Ok(report)
}

impl fmt::Display for PhaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.phases {
            writeln!(f, "  {:<6} {:>9.3}s", p.name.as_str(), p.duration)?;
        }
        write!(f, "  {:<6} {:>9.3}s", "total", self.total)
    }
}

/// Accumulates wall-clock time per phase on a monotonic clock.
#[derive(Debug, Default)]
pub struct PhaseTimer {
    samples: Vec<(Phase, f64)>,
}

impl PhaseTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(phase, start.elapsed().as_secs_f64());
        out
    }

    pub fn start(&self) -> Instant {
        Instant::now()
    }

    pub fn stop(&mut self, phase: Phase, started: Instant) {
        self.record(phase, started.elapsed().as_secs_f64());
    }

    pub fn record(&mut self, phase: Phase, seconds: f64) {
        self.samples.push((phase, seconds));
    }

    pub fn report(&self) -> PhaseReport {
        let named: Vec<(&str, f64)> = self.samples.iter().map(|(p, s)| (p.as_str(), *s)).collect();
        summarize_phases(&named).expect("recorded phases are always valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

impl fmt::Display for TTestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t = {}, df = {}, p = {}", self.t, self.df, self.p)
    }
}

fn mean_and_variance(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let ss: f64 = sample.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, MetricsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(MetricsError::InsufficientSample(s.len()));
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
    }
    let (mean_a, var_a) = mean_and_variance(a);
    let (mean_b, var_b) = mean_and_variance(b);
    if var_a == 0.0 && var_b == 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    let se_a = var_a / a.len() as f64;
    let se_b = var_b / b.len() as f64;
    let se = se_a + se_b;
    let t = (mean_a - mean_b) / se.sqrt();
    let df =
        se * se / (se_a * se_a / (a.len() as f64 - 1.0) + se_b * se_b / (b.len() as f64 - 1.0));
    Ok(TTestResult {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let t2 = t * t;
    // I_x(df/2, 1/2) with x = df / (df + t^2); 1 - x is passed separately
    // so large |t| keeps its precision.
    let x = df / (df + t2);
    let one_minus_x = t2 / (df + t2);
    regularized_incomplete_beta(x, one_minus_x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`; `one_minus_x` must equal `1 - x`.
pub fn regularized_incomplete_beta(x: f64, one_minus_x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * one_minus_x.ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(one_minus_x, b, a) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
