use std::fmt;
use std::path::Path;

/// Process exit categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validation,
    Divergence,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn missing(path: &Path) -> Self {
        Self::io(path, "no such directory")
    }

    pub fn context(mut self, prefix: impl fmt::Display) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Divergence => 2,
            Kind::Io => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<grainform::Error> for CliError {
    fn from(err: grainform::Error) -> Self {
        use grainform::Error as E;
        let kind = match err {
            E::Validation(_) | E::NoGrain => Kind::Validation,
            E::Diverged(_) => Kind::Divergence,
            E::NotAModelFile
            | E::UnsupportedModelVersion(_)
            | E::TruncatedModel
            | E::InconsistentModel(_)
            | E::Io { .. }
            | E::Image { .. } => Kind::Io,
        };
        Self {
            kind,
            message: err.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        Self {
            kind: Kind::Io,
            message: format!("malformed JSON: {err}"),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        Self {
            kind: Kind::Io,
            message: format!("CSV: {err}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_category() {
        assert_eq!(CliError::from(grainform::Error::Validation("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(grainform::Error::NoGrain).exit_code(), 1);
        assert_eq!(CliError::from(grainform::Error::Diverged("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(grainform::Error::TruncatedModel).exit_code(), 3);
        assert_eq!(CliError::missing(Path::new("/x")).exit_code(), 3);
    }
}
