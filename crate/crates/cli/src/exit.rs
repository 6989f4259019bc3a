//! Exit-code taxonomy and the mapping from library errors.

use std::fmt;

use dissipacert::certify::lmi::LmiError;
use dissipacert::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok,
    Input,
    Divergence,
    Informativity,
    Infeasible,
    Undecided,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Ok => 0,
            ExitKind::Input => 2,
            ExitKind::Divergence => 3,
            ExitKind::Informativity => 4,
            ExitKind::Infeasible => 5,
            ExitKind::Undecided => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitKind::Ok => "ok",
            ExitKind::Input => "input_error",
            ExitKind::Divergence => "divergence",
            ExitKind::Informativity => "not_informative",
            ExitKind::Infeasible => "infeasible",
            ExitKind::Undecided => "undecided",
        }
    }
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Input, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

/// Default classification of library errors.
pub fn classify(e: &Error) -> ExitKind {
    match e {
        Error::Validation(_) | Error::Range(_) | Error::Io(_) | Error::Json(_) | Error::NoUniqueEquilibrium(_) => {
            ExitKind::Input
        }
        Error::Divergence { .. } => ExitKind::Divergence,
        Error::Informativity { .. } | Error::Reduction(_) => ExitKind::Informativity,
        Error::Lmi(LmiError::Malformed(_)) => ExitKind::Input,
        Error::Lmi(_) | Error::Numerical(_) => ExitKind::Infeasible,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(classify(&e), e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_taxonomy() {
        let codes: Vec<i32> = [
            ExitKind::Ok,
            ExitKind::Input,
            ExitKind::Divergence,
            ExitKind::Informativity,
            ExitKind::Infeasible,
            ExitKind::Undecided,
        ]
        .iter()
        .map(|k| k.code())
        .collect();
        assert_eq!(codes, vec![0, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn library_errors_are_classified() {
        assert_eq!(classify(&Error::Divergence { index: 3 }), ExitKind::Divergence);
        let e = Error::Informativity { context: "rank".into(), achieved: 1, required: 2 };
        assert_eq!(classify(&e), ExitKind::Informativity);
        let e = Error::Lmi(LmiError::Infeasible { block: "b".into(), violation: 1.0 });
        assert_eq!(classify(&e), ExitKind::Infeasible);
        assert_eq!(classify(&Error::Validation("x".into())), ExitKind::Input);
    }
}
