//! The `skillscope` pipeline: stages that hand off through a run directory
//! tracked by a manifest.

pub mod args;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

use args::{Cli, Command};
use error::{CliError, CliResult};
use manifest::{now_unix_ms, sha256_hex, RunLock, RunManifest, Stage, StageRecord};
use stages::{Context, PipelineConfig, StageOutput};

const DEFAULT_SEED: u64 = 42;

/// Runs one command and returns the text to print on success.
pub fn run(cli: Cli) -> CliResult<String> {
    let run_dir = cli
        .run_dir
        .clone()
        .ok_or_else(|| CliError::Usage("no run directory: pass --run-dir or set SKILLSCOPE_RUN_DIR".into()))?;
    let config = match &cli.config {
        Some(path) => PipelineConfig::from_path(path)?,
        None => PipelineConfig::default(),
    };

    if let Command::Report = cli.command {
        let manifest = RunManifest::load(&run_dir)?.ok_or_else(|| {
            CliError::Data(format!(
                "no manifest in {}; nothing has been run there",
                run_dir.display()
            ))
        })?;
        return stages::report(&run_dir, &manifest);
    }

    let stage = match &cli.command {
        Command::Ingest { .. } => Stage::Ingest,
        Command::Preprocess { .. } => Stage::Preprocess,
        Command::Fit { .. } => Stage::Fit,
        Command::Scan { .. } => Stage::Scan,
        Command::Topics { .. } => Stage::Topics,
        Command::Profile { .. } => Stage::Profile,
        Command::Report => unreachable!("handled above"),
    };

    let _lock = RunLock::acquire(&run_dir)?;
    let existing = RunManifest::load(&run_dir)?;
    let seed = cli
        .seed
        .or(existing.as_ref().map(|m| m.seed))
        .or(config.seed)
        .unwrap_or(DEFAULT_SEED);
    let mut manifest = existing.unwrap_or_else(|| RunManifest::new(seed));
    manifest.seed = seed;
    manifest.require_upstream(&run_dir, stage)?;

    let ctx = Context {
        run_dir: &run_dir,
        seed,
        config: &config,
    };
    let output = match &cli.command {
        Command::Ingest {
            input,
            format,
            institutions,
            course_types,
        } => stages::ingest(input, format.as_deref(), institutions, course_types),
        Command::Preprocess { rules } => stages::preprocess_stage(&ctx, rules.as_deref()),
        Command::Fit { model, k } => stages::fit_stage(&ctx, *model, *k),
        Command::Scan {
            kmin,
            kmax,
            top,
            restarts,
        } => stages::scan_stage(&ctx, *kmin, *kmax, *top, *restarts),
        Command::Topics { top } => stages::topics_stage(&ctx, *top),
        Command::Profile { group_by, labels, flat } => stages::profile_stage(&ctx, *group_by, labels.as_deref(), *flat),
        Command::Report => unreachable!("handled above"),
    }?;
    commit(&run_dir, &mut manifest, stage, output)
}

fn commit(run_dir: &Path, manifest: &mut RunManifest, stage: Stage, output: StageOutput) -> CliResult<String> {
    let StageOutput {
        params,
        inputs,
        files,
        summary,
    } = output;
    let mut outputs = std::collections::BTreeMap::new();
    for (rel, bytes) in &files {
        manifest::write_atomic(&run_dir.join(rel), bytes)?;
        outputs.insert(rel.to_string(), sha256_hex(bytes));
    }
    let config_hash = sha256_hex(params.to_string().as_bytes());
    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord {
            completed_unix_ms: now_unix_ms(),
            config_hash,
            params,
            inputs,
            outputs,
        },
    );
    manifest.save(run_dir)?;
    Ok(summary)
}

/// Run directory artifacts written by `stage`, as absolute paths.
pub fn stage_artifacts(run_dir: &Path, manifest: &RunManifest, stage: Stage) -> Vec<PathBuf> {
    manifest
        .record(stage)
        .map(|r| r.outputs.keys().map(|k| run_dir.join(k)).collect())
        .unwrap_or_default()
}
