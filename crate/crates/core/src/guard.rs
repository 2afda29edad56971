//! Resource caps for constructions whose output can grow exponentially.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("resource guard exceeded: {what} needs {needed}, cap is {cap}")]
pub struct GuardError {
    pub what: String,
    pub needed: String,
    pub cap: String,
}

impl GuardError {
    pub fn new(what: impl Into<String>, needed: impl ToString, cap: impl ToString) -> Self {
        GuardError {
            what: what.into(),
            needed: needed.to_string(),
            cap: cap.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Guard {
    /// Largest tuple grid enumerated when decomposing one threshold constraint.
    pub max_tuples: u64,
    /// Largest `precision * dimension` accepted when extracting a program from a transformer.
    pub max_pd: u32,
    /// Largest number of lines a generated program may have.
    pub max_lines: usize,
    /// Largest node count produced by full inlining.
    pub max_inline: usize,
}

impl Default for Guard {
    fn default() -> Self {
        Guard {
            max_tuples: 1_000_000,
            max_pd: 6,
            max_lines: 500_000,
            max_inline: 1_000_000,
        }
    }
}

impl Guard {
    /// Parses `key=value` pairs separated by commas, e.g. `tuples=5000000,pd=8`.
    /// Keys: `tuples`, `pd`, `lines`, `inline`.
    pub fn parse(spec: &str) -> Result<Guard, String> {
        let mut g = Guard::default();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("guard entry `{part}` is not key=value"))?;
            let bad = |_| format!("guard value `{value}` is not a non-negative integer");
            match key.trim() {
                "tuples" => g.max_tuples = value.trim().parse().map_err(bad)?,
                "pd" => g.max_pd = value.trim().parse().map_err(bad)?,
                "lines" => g.max_lines = value.trim().parse().map_err(bad)?,
                "inline" => g.max_inline = value.trim().parse().map_err(bad)?,
                other => return Err(format!("unknown guard key `{other}`")),
            }
        }
        Ok(g)
    }

    /// Reads `CRASPKIT_GUARD`, falling back to defaults when unset.
    pub fn from_env() -> Result<Guard, String> {
        match std::env::var("CRASPKIT_GUARD") {
            Ok(s) => Guard::parse(&s),
            Err(_) => Ok(Guard::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides() {
        let g = Guard::parse("tuples=10, pd=9").unwrap();
        assert_eq!(g.max_tuples, 10);
        assert_eq!(g.max_pd, 9);
        assert_eq!(g.max_lines, Guard::default().max_lines);
        assert!(Guard::parse("bogus=1").is_err());
        assert!(Guard::parse("pd").is_err());
    }
}
