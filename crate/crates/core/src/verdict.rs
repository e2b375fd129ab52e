//! Verification outcomes shared by the solver driver and the oracle.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::quantized::QValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Safe,
    Unsafe,
    Unknown,
    Timeout,
    SolverError,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Safe => "SAFE",
            Status::Unsafe => "UNSAFE",
            Status::Unknown => "UNKNOWN",
            Status::Timeout => "TIMEOUT",
            Status::SolverError => "SOLVER_ERROR",
        })
    }
}

/// Potential and activation output of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronValue {
    pub pre: QValue,
    pub post: QValue,
}

/// Full execution trace of the quantized interpreter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub inputs: Vec<QValue>,
    pub layers: Vec<Vec<NeuronValue>>,
}

impl Trace {
    pub fn outputs(&self) -> Vec<QValue> {
        self.layers.last().map(|l| l.iter().map(|n| n.post).collect()).unwrap_or_default()
    }
}

/// A concrete input that satisfies every assume and violates an assert,
/// together with its replayed trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub input_values: Vec<QValue>,
    pub violated_assert: usize,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub counterexample: Option<Counterexample>,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    pub solver: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl Verdict {
    pub fn new(status: Status, solver: impl Into<String>, wall_time: Duration) -> Verdict {
        Verdict {
            status,
            counterexample: None,
            wall_time,
            solver: solver.into(),
            warnings: Vec::new(),
            diagnostics: None,
        }
    }

    pub fn with_diagnostics(mut self, d: impl Into<String>) -> Verdict {
        self.diagnostics = Some(d.into());
        self
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
