//! Counting-logic toolkit: syntax, exact evaluation, witness search, and the
//! translations between counting programs, past-time temporal logic,
//! Diophantine systems, and fixed-point transformers.

pub mod depth2;
pub mod diophantine;
pub mod families;
pub mod fixed;
pub mod gen;
pub mod guard;
pub mod machine;
pub mod parser;
pub mod positive;
pub mod semantics;
pub mod syntax;
pub mod tl;
pub mod transformer;
pub mod word;

pub use guard::{Guard, GuardError};
pub use parser::{parse_program, ParseError};
pub use semantics::{
    accepts, evaluate, find_witness, reference_evaluate, EvalTrace, WitnessReport,
};
pub use syntax::{measure, Cmp, ComplexityReport, Constraint, Formula, Line, Program, Term};

/// Crate version, embedded in JSON reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
