//! Run reports.

use pbcore::aggregation::{IndependenceReport, RankedScheme, SimilarityReport};
use pbcore::coreverify::{CoreCertificate, Deviation};
use pbcore::lindahl::LindahlResult;
use pbcore::mechanism::{ApproximationCertificate, MechanismSample};
use pbcore::model::Allocation;
use serde::{Deserialize, Serialize};

use crate::config::ElectionConfig;

pub const TOOL: &str = "pbcore";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    /// SHA-256 of the ballot file.
    pub votes: Option<String>,
    /// SHA-256 of the configuration file.
    pub config: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub fractional: Option<Allocation>,
    pub integral: Option<Allocation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSummary {
    pub x: Allocation,
    pub y: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub max_violation: f64,
    pub budget_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Outcome {
    Gen {
        profile: String,
        voters: usize,
        items: usize,
    },
    Solve {
        method: String,
        result: LindahlResult,
        certificate: Option<CoreCertificate>,
    },
    SolveSat {
        result: HeuristicSummary,
        certificate: Option<CoreCertificate>,
    },
    CheckCore {
        oracle: String,
        in_core: bool,
        deviation: Option<Deviation>,
        certificate: Option<CoreCertificate>,
    },
    Mechanism {
        sample: MechanismSample,
        certificate: ApproximationCertificate,
    },
    Compare {
        core: RankedScheme,
        welfare: RankedScheme,
        similarity: SimilarityReport,
    },
    Analyze {
        report: IndependenceReport,
    },
}

/// Everything needed to reproduce a run: inputs are identified by hash,
/// the effective configuration (including the seed) is echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub inputs: InputHashes,
    pub config: ElectionConfig,
    pub allocation: AllocationReport,
    pub outcome: Outcome,
    /// Files written next to the report.
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> pbcore::Result<Self> {
        serde_json::from_str(text).map_err(|e| pbcore::Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}
