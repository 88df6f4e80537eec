//! Reporting helpers for the acceptance target. Each criterion yields one
//! [`Verdict`], printed as a single `PASS` or `FAIL` line.

use std::fmt;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u32, name: &'static str, passed: bool, detail: impl Into<String>) -> Verdict {
        Verdict {
            id,
            name,
            passed,
            detail: detail.into(),
        }
    }

    /// Prints the line and panics on failure so the test harness sees it.
    pub fn enforce(&self) {
        println!("{self}");
        assert!(self.passed, "{self}");
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} criterion {}: {} ({})", self.id, self.name, self.detail)
    }
}

/// Formats a wall-clock duration as seconds with one decimal.
pub fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let v = Verdict::new(4, "parity", true, "64 shapes");
        assert_eq!(v.to_string(), "PASS criterion 4: parity (64 shapes)");
        let f = Verdict::new(1, "x", false, "err=1");
        assert!(f.to_string().starts_with("FAIL criterion 1"));
    }
}
