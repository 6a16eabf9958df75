mod data;
mod retrieve;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use sdr_core::corpus::{load_documents, load_judgments, read_qrels, DocumentCollection, Judgment};
use sdr_core::encoder::Checkpoint;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;
use crate::{Command, Context};

pub fn run(command: Command, ctx: &mut Context) -> Result<Value, CliError> {
    match command {
        Command::GenData => data::gen_data(ctx),
        Command::Extract => data::extract(ctx),
        Command::Mask => data::mask(ctx),
        Command::Pretrain => train::pretrain(ctx),
        Command::Finetune => train::finetune(ctx),
        Command::GradCheck => train::grad_check(ctx),
        Command::Mine => retrieve::mine(ctx),
        Command::Index => retrieve::index(ctx),
        Command::Search => retrieve::search(ctx),
        Command::Eval => retrieve::eval(ctx),
        Command::Diagnose => retrieve::diagnose(ctx),
    }
}

/// Reads the command's config table, then runs `body` and writes the
/// manifest.
fn with_section<T, F>(ctx: &mut Context, body: F) -> Result<Value, CliError>
where
    T: DeserializeOwned + Serialize,
    F: FnOnce(&mut Context, &T) -> Result<Value, CliError>,
{
    let section: T = ctx.raw.section(ctx.command)?;
    let summary = body(ctx, &section)?;
    let seed = ctx.seed;
    let manifest = ctx.artifacts.write_manifest(ctx.command, seed, &section)?;
    let mut summary = summary;
    if let Value::Object(m) = &mut summary {
        m.insert("manifest".into(), Value::String(manifest.display().to_string()));
    }
    Ok(summary)
}

fn require<'a>(field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Validation(format!("missing required path `{field}`")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| {
        sdr_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn documents(ctx: &mut Context, path: &Path) -> Result<DocumentCollection, CliError> {
    Ok(load_documents(ctx.artifacts.input(path)?)?)
}

fn checkpoint(ctx: &mut Context, path: &Path) -> Result<(Checkpoint, String), CliError> {
    let c = Checkpoint::load(ctx.artifacts.input(path)?)?;
    let fp = c.fingerprint();
    Ok((c, fp))
}

/// JSON-lines judgments, or whitespace qrels for any other extension.
fn judgments(ctx: &mut Context, path: &Path) -> Result<Vec<Judgment>, CliError> {
    let path = ctx.artifacts.input(path)?;
    if path.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        Ok(load_judgments(&path, None, None)?)
    } else {
        Ok(read_qrels(&path)?)
    }
}
