//! Command implementations behind the `orthoscore` binary.

pub mod analyze;
pub mod check;
pub mod simulate;
pub mod table;

use std::fmt;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, unreadable input or violated preconditions (exit 2).
    Usage(String),
    /// Estimation ran but the result is statistically unusable (exit 1).
    Quality(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Quality(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Quality(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Seed used when neither `--seed` nor `ORTHOSCORE_SEED` is given.
pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "ORTHOSCORE_SEED";

/// `v` rounded to 6 significant digits, printed without trailing zeros.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Write `body` to `path`, adding a final newline if missing.
pub fn write_text(path: &std::path::Path, body: &str) -> Result<(), CliError> {
    let mut s = body.to_string();
    if !s.ends_with('\n') {
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0023456789), "0.00234568");
        assert_eq!(sig6(1234567.0), "1234570");
        assert_eq!(sig6(-1.5), "-1.5");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(f64::NAN), "NaN");
    }
}
