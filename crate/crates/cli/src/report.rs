//! Check records and their JSON / CSV serialisation.

use std::io::Write;

use ntk_spectrum::McEstimate;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

/// How `passed` follows from the recorded numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|estimate − target| ≤ tolerance · std_error`
    WithinSe,
    /// `|estimate − target| ≤ tolerance`
    WithinAbs,
    /// `|estimate − target| ≤ tolerance · |target|`
    WithinRel,
    /// `estimate ≤ target + tolerance · std_error`
    AtMostSe,
    /// `estimate ≤ target`
    AtMost,
    /// `estimate ≥ target`
    AtLeast,
    /// distance from `[target, upper]` at most `tolerance · std_error`
    IntervalSe,
    /// Recorded for reference, always passes.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The mathematical statement under test.
    pub anchor: String,
    pub rule: Rule,
    pub target: f64,
    pub upper: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Absolute slack for floating-point round-off on statistical comparisons.
const ROUND_OFF: f64 = 1e-9;

impl Check {
    fn build(
        name: impl Into<String>,
        anchor: &str,
        rule: Rule,
        target: f64,
        estimate: f64,
    ) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            rule,
            target,
            upper: None,
            estimate,
            std_error: 0.0,
            tolerance: 0.0,
            passed: false,
        }
        .evaluated()
    }

    pub fn within_se(
        name: impl Into<String>,
        anchor: &str,
        target: f64,
        e: McEstimate,
        k: f64,
    ) -> Self {
        let mut c = Self::build(name, anchor, Rule::WithinSe, target, e.value);
        c.std_error = e.std_error;
        c.tolerance = k;
        c.evaluated()
    }

    pub fn at_most_se(
        name: impl Into<String>,
        anchor: &str,
        bound: f64,
        e: McEstimate,
        k: f64,
    ) -> Self {
        let mut c = Self::build(name, anchor, Rule::AtMostSe, bound, e.value);
        c.std_error = e.std_error;
        c.tolerance = k;
        c.evaluated()
    }

    pub fn interval_se(
        name: impl Into<String>,
        anchor: &str,
        (lo, hi): (f64, f64),
        e: McEstimate,
        k: f64,
    ) -> Self {
        let mut c = Self::build(name, anchor, Rule::IntervalSe, lo, e.value);
        c.upper = Some(hi);
        c.std_error = e.std_error;
        c.tolerance = k;
        c.evaluated()
    }

    pub fn within_abs(
        name: impl Into<String>,
        anchor: &str,
        target: f64,
        estimate: f64,
        tol: f64,
    ) -> Self {
        let mut c = Self::build(name, anchor, Rule::WithinAbs, target, estimate);
        c.tolerance = tol;
        c.evaluated()
    }

    pub fn within_rel(
        name: impl Into<String>,
        anchor: &str,
        target: f64,
        estimate: f64,
        tol: f64,
    ) -> Self {
        let mut c = Self::build(name, anchor, Rule::WithinRel, target, estimate);
        c.tolerance = tol;
        c.evaluated()
    }

    pub fn at_most(name: impl Into<String>, anchor: &str, bound: f64, estimate: f64) -> Self {
        Self::build(name, anchor, Rule::AtMost, bound, estimate)
    }

    pub fn at_least(name: impl Into<String>, anchor: &str, bound: f64, estimate: f64) -> Self {
        Self::build(name, anchor, Rule::AtLeast, bound, estimate)
    }

    pub fn info(name: impl Into<String>, anchor: &str, target: f64, estimate: f64) -> Self {
        Self::build(name, anchor, Rule::Info, target, estimate)
    }

    /// Carries a standard error for display without changing the rule.
    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = se;
        self.evaluated()
    }

    /// Recomputes `passed` from the stored numbers.
    pub fn evaluated(mut self) -> Self {
        self.passed = self.verdict();
        self
    }

    pub fn verdict(&self) -> bool {
        let (t, e, se, tol) = (self.target, self.estimate, self.std_error, self.tolerance);
        if !e.is_finite() {
            return self.rule == Rule::Info;
        }
        match self.rule {
            Rule::WithinSe => (e - t).abs() <= tol * se + ROUND_OFF,
            Rule::WithinAbs => (e - t).abs() <= tol,
            Rule::WithinRel => (e - t).abs() <= tol * t.abs(),
            Rule::AtMostSe => e <= t + tol * se + ROUND_OFF,
            Rule::AtMost => e <= t,
            Rule::AtLeast => e >= t,
            Rule::IntervalSe => {
                let hi = self.upper.unwrap_or(t);
                let dist = if e < t {
                    t - e
                } else if e > hi {
                    e - hi
                } else {
                    0.0
                };
                dist <= tol * se + ROUND_OFF
            }
            Rule::Info => true,
        }
    }

    /// A check for a computation that raised an error.
    pub fn failed(name: impl Into<String>, anchor: &str, error: &impl std::fmt::Display) -> Self {
        let mut c = Self::build(
            format!("{} ({error})", name.into()),
            anchor,
            Rule::AtMost,
            0.0,
            f64::NAN,
        );
        c.passed = false;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn new(suite: &str) -> Self {
        Self {
            suite: suite.into(),
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Seconds since the Unix epoch at the start of the run.
    pub timestamp: u64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: Metadata,
    pub suites: Vec<SuiteReport>,
}

/// Exit-status bit of each suite.
pub fn suite_bit(suite: &str) -> i32 {
    match suite {
        "kernel" => 1,
        "spectrum" => 2,
        "fisher" => 4,
        "approx" => 8,
        "flow" => 16,
        _ => 32,
    }
}

impl Report {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    /// Zero when every check passed, otherwise the failing suites' bits.
    pub fn exit_code(&self) -> i32 {
        self.suites
            .iter()
            .filter(|s| !s.passed())
            .map(|s| suite_bit(&s.suite))
            .fold(0, |a, b| a | b)
    }

    pub fn checks(&self) -> impl Iterator<Item = (&str, &Check)> {
        self.suites
            .iter()
            .flat_map(|s| s.checks.iter().map(move |c| (s.suite.as_str(), c)))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))
    }

    /// One row per check.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Row<'a> {
            suite: &'a str,
            name: &'a str,
            anchor: &'a str,
            rule: Rule,
            target: f64,
            upper: Option<f64>,
            estimate: f64,
            std_error: f64,
            tolerance: f64,
            passed: bool,
        }
        let mut w = csv::Writer::from_writer(out);
        for (suite, c) in self.checks() {
            w.serialize(Row {
                suite,
                name: &c.name,
                anchor: &c.anchor,
                rule: c.rule,
                target: c.target,
                upper: c.upper,
                estimate: c.estimate,
                std_error: c.std_error,
                tolerance: c.tolerance,
                passed: c.passed,
            })
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn csv_string(&self) -> Result<String, CliError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
    }

    /// Every numeric field of every check, for reproducibility comparisons.
    pub fn numeric_fields(&self) -> Vec<(String, [u64; 5])> {
        self.checks()
            .map(|(s, c)| {
                (
                    format!("{s}/{}", c.name),
                    [
                        c.target.to_bits(),
                        c.upper.unwrap_or(f64::NAN).to_bits(),
                        c.estimate.to_bits(),
                        c.std_error.to_bits(),
                        c.tolerance.to_bits(),
                    ],
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(value: f64, std_error: f64) -> McEstimate {
        McEstimate {
            value,
            std_error,
            n_samples: 100,
        }
    }

    #[test]
    fn rules() {
        assert!(Check::within_se("a", "", 1.0, est(1.3, 0.1), 4.0).passed);
        assert!(!Check::within_se("a", "", 1.0, est(1.5, 0.1), 4.0).passed);
        assert!(Check::at_most_se("a", "", 1.0, est(1.3, 0.1), 4.0).passed);
        assert!(!Check::at_most_se("a", "", 1.0, est(1.5, 0.1), 4.0).passed);
        assert!(Check::interval_se("a", "", (0.0, 1.0), est(1.3, 0.1), 4.0).passed);
        assert!(Check::interval_se("a", "", (0.0, 1.0), est(0.5, 0.0), 4.0).passed);
        assert!(!Check::interval_se("a", "", (0.0, 1.0), est(-0.5, 0.1), 4.0).passed);
        assert!(Check::within_rel("a", "", 2.0, 2.1, 0.1).passed);
        assert!(!Check::within_rel("a", "", 2.0, 2.3, 0.1).passed);
        assert!(Check::at_least("a", "", 2.0, 2.0).passed);
        assert!(Check::info("a", "", 2.0, -7.0).passed);
        assert!(!Check::failed("a", "", &"boom").passed);
    }

    #[test]
    fn exit_code_is_bitmask() {
        let mut k = SuiteReport::new("kernel");
        k.push(Check::at_most("x", "", 0.0, 1.0));
        let mut f = SuiteReport::new("flow");
        f.push(Check::at_most("x", "", 0.0, 1.0));
        let s = SuiteReport::new("spectrum");
        let r = Report {
            metadata: Metadata {
                version: "0".into(),
                seed: 0,
                config: ExperimentConfig::default(),
                timestamp: 0,
                runtime_secs: 0.0,
            },
            suites: vec![k, s, f],
        };
        assert_eq!(r.exit_code(), 17);
        assert_eq!(r.csv_string().unwrap().lines().count(), 3);
    }
}
