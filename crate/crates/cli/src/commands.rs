//! Command dispatch. Every command reads its inputs, runs one analysis,
//! writes its artifacts into the output directory and returns the report,
//! which is also saved there as `<command>.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pbcore::aggregation::{chi2_pairwise, compare, rank_and_round, Scheme};
use pbcore::coreverify::{
    certify_from_residual, certify_heuristic, find_deviation_continuous_with,
    find_deviation_integral, ContinuousSearch,
};
use pbcore::lindahl::{sgd_elicitation, solve_potential, solve_proportional_fairness};
use pbcore::mechanism::{approximation_certificate, sample_mechanism};
use pbcore::model::{Allocation, AllocationKind, Instance, UtilityModel};
use pbcore::saturating::heuristic_solve;
use pbcore::synth::{gen_synthetic, Profile};
use pbcore::{Error, Result};

use crate::config::{ElectionConfig, Money};
use crate::io::{self, ComparisonRow};
use crate::report::{
    AllocationReport, HeuristicSummary, InputHashes, Outcome, RunReport, Timing, TOOL, VERSION,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PBCORE_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Potential,
    ProportionalFairness,
    Sgd,
}

impl SolveMethod {
    fn name(self) -> &'static str {
        match self {
            SolveMethod::Potential => "potential",
            SolveMethod::ProportionalFairness => "proportional-fairness",
            SolveMethod::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Gen {
        profile: Profile,
        voters: usize,
        items: usize,
    },
    Solve {
        method: SolveMethod,
    },
    SolveSat,
    CheckCore {
        allocation: PathBuf,
        integral: bool,
    },
    Mechanism,
    Compare,
    Analyze,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Solve { .. } => "solve",
            Command::SolveSat => "solve-sat",
            Command::CheckCore { .. } => "check-core",
            Command::Mechanism => "mechanism",
            Command::Compare => "compare",
            Command::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub votes: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

struct Inputs {
    inst: Instance,
    config: ElectionConfig,
    hashes: InputHashes,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<String> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(name.to_string())
}

fn load(inv: &Invocation, default_budget: Option<Money>) -> Result<Inputs> {
    let votes_path = inv
        .votes
        .as_ref()
        .ok_or_else(|| Error::Config("--votes is required".into()))?;
    let (votes, votes_hash) = io::read_votes(votes_path)?;
    let (config, config_hash) = match &inv.config {
        Some(path) => {
            let bytes = read(path)?;
            let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse {
                line: 0,
                column: 0,
                message: "configuration is not UTF-8".into(),
            })?;
            (
                ElectionConfig::from_json(&text)?,
                Some(io::sha256_hex(&bytes)),
            )
        }
        None => match default_budget {
            Some(b) => (ElectionConfig::new(b), None),
            None => return Err(Error::Config("--config is required".into())),
        },
    };
    let config = match inv.seed {
        Some(seed) => config.with_seed(seed),
        None => {
            let seed = config.seed;
            config.with_seed(seed)
        }
    };
    let inst = config.instance(&votes)?;
    Ok(Inputs {
        inst,
        config,
        hashes: InputHashes {
            votes: Some(votes_hash),
            config: config_hash,
        },
    })
}

/// Runs one command and writes its report and artifacts.
pub fn run_command(inv: &Invocation) -> Result<RunReport> {
    let start = Instant::now();
    fs::create_dir_all(&inv.out).map_err(|e| Error::Io(format!("{}: {e}", inv.out.display())))?;
    let mut artifacts = Vec::new();
    let mut allocation = AllocationReport::default();

    let (config, hashes, outcome) = match &inv.command {
        Command::Gen {
            profile,
            voters,
            items,
        } => {
            let seed = inv.seed.unwrap_or(0);
            let inst = gen_synthetic(*profile, *voters, *items, seed)?;
            let config = ElectionConfig::describing(&inst)?.with_seed(seed);
            let mut ballots = Vec::new();
            io::write_votes(&mut ballots, &inst)?;
            artifacts.push(write(&inv.out, "votes.csv", &ballots)?);
            let config_text = config.to_json();
            artifacts.push(write(&inv.out, "config.json", config_text.as_bytes())?);
            let hashes = InputHashes {
                votes: Some(io::sha256_hex(&ballots)),
                config: Some(io::sha256_hex(config_text.as_bytes())),
            };
            let outcome = Outcome::Gen {
                profile: profile.to_string(),
                voters: inst.n(),
                items: inst.k(),
            };
            (config, hashes, outcome)
        }
        Command::Solve { method } => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, None)?;
            let result = match method {
                SolveMethod::Potential => solve_potential(&inst, &config.model, &config.solver)?,
                SolveMethod::ProportionalFairness => {
                    solve_proportional_fairness(&inst, &config.model, &config.solver)?
                }
                SolveMethod::Sgd => sgd_elicitation(&inst, &config.model, &config.sgd)?,
            };
            let certificate = certify_from_residual(&inst, &config.model, &result.x).ok();
            let mut trace = Vec::new();
            io::write_trace(&mut trace, &result.objective_trace)?;
            artifacts.push(write(&inv.out, "solve_trace.csv", &trace)?);
            allocation.fractional = Some(result.x.clone());
            (
                config,
                hashes,
                Outcome::Solve {
                    method: method.name().into(),
                    result,
                    certificate,
                },
            )
        }
        Command::SolveSat => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, None)?;
            let res = heuristic_solve(&inst, &config.heuristic)?;
            let certificate = certify_heuristic(&res).ok();
            let mut trace = Vec::new();
            io::write_trace(&mut trace, &res.max_violation_trace)?;
            artifacts.push(write(&inv.out, "solve_sat_trace.csv", &trace)?);
            allocation.fractional = Some(res.x.clone());
            let result = HeuristicSummary {
                max_violation: res.max_violation(),
                x: res.x,
                y: res.y,
                converged: res.converged,
                sweeps: res.sweeps,
                budget_flagged: res.budget_flagged,
            };
            (
                config,
                hashes,
                Outcome::SolveSat {
                    result,
                    certificate,
                },
            )
        }
        Command::CheckCore {
            allocation: path,
            integral,
        } => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, None)?;
            let x = read_allocation(path, *integral)?;
            x.validate(&inst, 1e-9)?;
            let (oracle, deviation) = if x.kind == AllocationKind::Integral {
                (
                    "integral",
                    find_deviation_integral(&inst, &x, config.core_check.integral_epsilon)?,
                )
            } else {
                let search =
                    ContinuousSearch::new(config.core_check.grid_steps, config.core_check.mode);
                (
                    "continuous",
                    find_deviation_continuous_with(&inst, &config.model, &x, &search)?,
                )
            };
            let certificate = if x.kind == AllocationKind::Fractional {
                certify_from_residual(&inst, &config.model, &x).ok()
            } else {
                None
            };
            match x.kind {
                AllocationKind::Fractional => allocation.fractional = Some(x),
                AllocationKind::Integral => allocation.integral = Some(x),
            }
            let outcome = Outcome::CheckCore {
                oracle: oracle.into(),
                in_core: deviation.is_none(),
                deviation,
                certificate,
            };
            (config, hashes, outcome)
        }
        Command::Mechanism => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, None)?;
            if config.model != UtilityModel::Linear {
                return Err(Error::Unsupported {
                    family: config.model.family_name(),
                    reason: "the mechanism is defined for linear utilities".into(),
                });
            }
            let sample = sample_mechanism(&inst, &config.mechanism)?;
            let certificate = approximation_certificate(&inst, &sample.x, &config.mechanism)?;
            allocation.fractional = Some(sample.x.clone());
            (
                config,
                hashes,
                Outcome::Mechanism {
                    sample,
                    certificate,
                },
            )
        }
        Command::Compare => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, None)?;
            let core_x = heuristic_solve(&inst, &config.heuristic)?.x;
            let core = rank_and_round(&inst, Scheme::Core, Some(&core_x))?;
            let welfare = rank_and_round(&inst, Scheme::Welfare, None)?;
            let similarity = compare(&core, &welfare, inst.budget())?;
            let sizes = inst.require_sizes()?;
            let votes = inst.vote_counts();
            let rows = (0..inst.k())
                .map(|j| {
                    Ok(ComparisonRow {
                        project: inst.item_names()[j].clone(),
                        budget: Money::from_dollars(sizes[j])?,
                        votes: votes[j],
                        core: core.fractional.x[j] / sizes[j],
                        welfare: welfare.fractional.x[j] / sizes[j],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut table = Vec::new();
            io::write_comparison(&mut table, &rows)?;
            artifacts.push(write(&inv.out, "compare.csv", &table)?);
            allocation.fractional = Some(core.fractional.clone());
            allocation.integral = Some(core.integral.clone());
            (
                config,
                hashes,
                Outcome::Compare {
                    core,
                    welfare,
                    similarity,
                },
            )
        }
        Command::Analyze => {
            let Inputs {
                inst,
                config,
                hashes,
            } = load(inv, Some(Money::from_cents(100)))?;
            let report = chi2_pairwise(&inst, config.analysis.dof)?;
            let leaves: Vec<String> = report
                .clustered_items
                .iter()
                .map(|&j| inst.item_names()[j].clone())
                .collect();
            let mut table = Vec::new();
            io::write_merges(&mut table, &report.merges, &leaves)?;
            artifacts.push(write(&inv.out, "dendrogram.csv", &table)?);
            (config, hashes, Outcome::Analyze { report })
        }
    };

    let name = format!("{}.json", inv.command.name());
    artifacts.push(name.clone());
    let report = RunReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        seed: config.seed,
        inputs: hashes,
        config,
        allocation,
        outcome,
        artifacts,
        timing: Timing {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    write(&inv.out, &name, report.to_json().as_bytes())?;
    Ok(report)
}

/// Reads an allocation from a JSON array, an allocation object, or a
/// previous run report. `integral` picks a report's integral allocation and
/// marks bare arrays as integral.
pub fn read_allocation(path: &Path, integral: bool) -> Result<Allocation> {
    let bytes = read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let parse = |v: serde_json::Value| -> Result<Allocation> {
        serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    };
    if value.is_array() {
        let x: Vec<f64> =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        return Ok(if integral {
            Allocation::integral(x)
        } else {
            Allocation::fractional(x)
        });
    }
    if let Some(alloc) = value.get("allocation") {
        let key = if integral { "integral" } else { "fractional" };
        return match alloc.get(key) {
            Some(v) if !v.is_null() => parse(v.clone()),
            _ => Err(Error::Config(format!(
                "{} has no {key} allocation",
                path.display()
            ))),
        };
    }
    parse(value)
}

/// Output directory: the flag, else the environment variable, else `.`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Machine-readable error document printed on failure.
pub fn error_json(e: &Error) -> String {
    let mut body = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Parse { line, column, .. } = e {
        body["line"] = (*line).into();
        body["column"] = (*column).into();
    }
    serde_json::json!({ "error": body }).to_string()
}
