//! The `run` subcommand without the process plumbing.

use std::path::{Path, PathBuf};

use hiershare::simnet::report::SimReport;
use hiershare::simnet::{SimError, World};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::snapshot::{Snapshot, SnapshotError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("--save-at {save_at} is outside the epochs this run covers ({from}..={to})")]
    SaveAt { save_at: u64, from: u64, to: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub epochs: Option<u64>,
    pub out: PathBuf,
    /// Write a snapshot once this many epochs have completed.
    pub save_at: Option<u64>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: SimReport,
    pub report_path: PathBuf,
    pub table_path: PathBuf,
    pub snapshot_path: Option<PathBuf>,
}

pub fn snapshot_path(out: &Path, name: &str, epoch: u64) -> PathBuf {
    out.join(format!("{name}.epoch{epoch}.snapshot"))
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads the scenario and applies command-line overrides.
pub fn load_scenario(opts: &RunOptions) -> Result<ScenarioConfig, RunError> {
    let mut scenario = ScenarioConfig::load(&opts.scenario)?;
    if let Some(seed) = opts.seed {
        scenario.seed = seed;
    }
    if let Some(epochs) = opts.epochs {
        scenario.epochs = epochs;
    }
    Ok(scenario)
}

pub fn run(opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let scenario = load_scenario(opts)?;
    let file = opts.scenario.display().to_string();
    let sim = scenario.to_sim(&file)?;

    let mut world = match &opts.resume {
        Some(path) => {
            let snapshot = Snapshot::load(path)?;
            snapshot.check_resumable()?;
            let mut expected = snapshot.scenario.clone();
            expected.epochs = scenario.epochs;
            if expected != scenario {
                return Err(SnapshotError::ScenarioMismatch(format!(
                    "{} was taken from scenario {:?} with seed {}",
                    path.display(),
                    snapshot.scenario.name,
                    snapshot.scenario.seed
                ))
                .into());
            }
            World::from_state(sim, &snapshot.state)?
        }
        None => World::new(sim)?,
    };

    if let Some(save_at) = opts.save_at {
        let from = world.next_epoch();
        if save_at < from || save_at > scenario.epochs {
            return Err(RunError::SaveAt {
                save_at,
                from,
                to: scenario.epochs,
            });
        }
    }

    std::fs::create_dir_all(&opts.out).map_err(|source| RunError::Io {
        path: opts.out.display().to_string(),
        source,
    })?;

    let mut saved = None;
    loop {
        if opts.save_at == Some(world.next_epoch()) && saved.is_none() {
            let path = snapshot_path(&opts.out, &scenario.name, world.next_epoch());
            let snapshot = Snapshot {
                scenario: scenario.clone(),
                state: world.to_state(scenario.redact_secrets),
            };
            snapshot.save(&path)?;
            saved = Some(path);
        }
        if world.epochs_done() {
            break;
        }
        world.step_epoch()?;
    }
    let report = world.finish().clone();

    let report_path = opts.out.join(format!("{}.report", scenario.name));
    let table_path = opts.out.join(format!("{}.txt", scenario.name));
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write(&report_path, &json)?;
    write(&table_path, &report.table())?;
    Ok(RunOutcome {
        report,
        report_path,
        table_path,
        snapshot_path: saved,
    })
}
