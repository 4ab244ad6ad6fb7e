use std::fmt;

use serde::Serialize;

/// Exit-code taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config,
    Data,
    Numerical,
    Property,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
            Kind::Property => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn property(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Property,
            message: message.into(),
        }
    }

    /// Single-line JSON object written to stderr.
    pub fn to_json(&self) -> String {
        let body = serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.kind.exit_code(),
                "message": self.message,
            }
        });
        body.to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} error: {}", self.kind, self.message)
    }
}

fn classify(e: &dcue::Error) -> Kind {
    use dcue::Error as E;
    match e {
        E::Config(_) | E::InvalidFolds { .. } => Kind::Config,
        E::Io { .. }
        | E::Csv(_)
        | E::MissingColumn(_)
        | E::NonNumeric { .. }
        | E::InvalidData(_)
        | E::BadPrediction(_) => Kind::Data,
        E::Learner { source, .. } => classify(source),
        _ => Kind::Numerical,
    }
}

impl From<dcue::Error> for Failure {
    fn from(e: dcue::Error) -> Self {
        Failure {
            kind: classify(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;
