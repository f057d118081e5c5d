//! Pass/fail records collected by the experiments and the summary table.

use jumpreg::report::{fmt_f64, CsvTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `|measured − expected| ≤ tolerance`.
    pub fn within(name: impl Into<String>, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            expected,
            tolerance,
            pass: (measured - expected).abs() <= tolerance,
        }
    }

    /// Passes when `measured ≤ expected + tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            expected,
            tolerance,
            pass: measured <= expected + tolerance,
        }
    }

    /// Relative form of [`Check::within`]: tolerance `rel · |expected|`.
    pub fn relative(name: impl Into<String>, measured: f64, expected: f64, rel: f64) -> Self {
        Self::within(name, measured, expected, rel * expected.abs())
    }

    pub fn status(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

pub fn summary_table(checks: &[Check]) -> CsvTable {
    let mut t = CsvTable::new(&["name", "measured", "expected", "tolerance", "status"]);
    for c in checks {
        t.push(vec![
            c.name.clone(),
            fmt_f64(c.measured),
            fmt_f64(c.expected),
            fmt_f64(c.tolerance),
            c.status().into(),
        ]);
    }
    t
}

/// Exit status as a function of the summary's status column alone.
pub fn exit_status(summary: &CsvTable) -> i32 {
    let col = summary.header.iter().position(|h| h == "status").expect("status column");
    if summary.rows.iter().all(|r| r[col] == "PASS") {
        0
    } else {
        1
    }
}
