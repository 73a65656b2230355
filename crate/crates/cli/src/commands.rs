//! Subcommand implementations. Each writes its result to `out`; JSON unless
//! `--pretty` is given.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use em_core::browse::FixtureProvider;
use em_core::catalog::{CatalogError, CatalogRecord};
use em_core::harness::{load_dataset, render_table, run_benchmark, DatasetSpec, SourceFormat};
use em_core::kernel::{params, ParamValue};
use em_core::knowledge::KnowledgeEntry;
use em_core::tools::default_registry;
use em_core::tune::{tune, SearchSpace, Strategy, TuneConfig, TuneOutcome};
use em_core::{EntityPair, EntityRecord, ParameterTree};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Settings};
use crate::resolve::{resolve, ParamRequest, ResolveError};
use crate::runtime::{default_params, Runtime, RuntimeOptions};
use crate::scaffold::{scaffold, ScaffoldError};
use crate::service::{self, ServiceState};
use crate::{
    BackendArgs, BenchmarkArgs, CalibrateArgs, Cli, CliError, Command, DatasetArgs, MatchArgs, ParamArgs, ScaffoldArgs,
    ServeArgs, TuneArgs,
};

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let (settings, config_file) = config::load(cli.config.as_deref()).map_err(CliError::usage)?;
    let ctx = Session {
        settings,
        config_file,
        pretty: cli.pretty,
    };
    match cli.command {
        Command::Match(args) => run_match(&ctx, args, out),
        Command::Benchmark(args) => run_benchmark_cmd(&ctx, args, out),
        Command::Tune(args) => run_tune(&ctx, args, out),
        Command::Calibrate(args) => run_calibrate(&ctx, args, out),
        Command::Config => run_config(&ctx, out),
        Command::Serve(args) => run_serve(&ctx, args),
        Command::Scaffold(args) => run_scaffold(args, out),
    }
}

struct Session {
    settings: Settings,
    config_file: Option<PathBuf>,
    pretty: bool,
}

impl Session {
    fn runtime(&self, backend: &BackendArgs) -> Result<Runtime, CliError> {
        let options = RuntimeOptions {
            mock_script: backend.mock_script.clone(),
            search_fixture: backend.search_fixture.clone(),
            no_cache: backend.no_cache,
            trace_file: backend.trace_file.clone(),
        };
        Runtime::build(&self.settings, &options)
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string(value).context("serializing output")?;
    writeln!(out, "{text}").context("writing output")?;
    Ok(())
}

fn emit_text(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    write!(out, "{text}").context("writing output")?;
    if !text.ends_with('\n') {
        writeln!(out).context("writing output")?;
    }
    Ok(())
}

/// Flags as `(path, raw value)` settings, in the order they apply.
fn explicit_settings(args: &ParamArgs) -> Vec<(String, String)> {
    let mut settings = Vec::new();
    let toggle = |on: bool| if on { "on" } else { "off" }.to_string();
    if let Some(v) = args.browse {
        settings.push((params::MATCH_BROWSE.to_string(), toggle(v)));
    }
    if let Some(v) = args.schema {
        settings.push((params::PREPARE_SCHEMA.to_string(), toggle(v)));
    }
    if let Some(v) = args.cot {
        settings.push((params::MATCH_COT.to_string(), toggle(v)));
    }
    if let Some(model) = &args.model {
        settings.push((params::MATCH_MODEL.to_string(), model.clone()));
    }
    settings.extend(args.settings.iter().cloned());
    settings
}

fn resolve_error(e: ResolveError) -> CliError {
    match e {
        ResolveError::Setting { .. } | ResolveError::Catalog(CatalogError::UnknownProfile(_)) => CliError::usage(e),
        other => CliError::failed(other),
    }
}

fn resolve_params(
    rt: &Runtime,
    args: &ParamArgs,
    sample: Option<&[EntityPair]>,
) -> Result<em_core::catalog::Calibration, CliError> {
    let req = ParamRequest {
        hint: args.profile.as_deref(),
        optimize: args.optimize,
        settings: explicit_settings(args),
        sample,
    };
    resolve(&rt.store, &rt.defaults, &req).map_err(resolve_error)
}

fn read_entity(side: &str, arg: &str) -> Result<EntityRecord, CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::usage(format!("--{side}: cannot read {arg}: {e}")))?
    };
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("--{side}: invalid JSON: {e}")))?;
    EntityRecord::from_json(&value).map_err(|e| CliError::usage(format!("--{side}: {e}")))
}

fn load_data(args: &DatasetArgs) -> Result<DatasetSpec, CliError> {
    let format = args.format.unwrap_or_else(|| format_for(&args.dataset));
    load_dataset(&args.dataset, format).map_err(CliError::failed)
}

fn format_for(path: &Path) -> SourceFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => SourceFormat::PrefixedCsv,
        _ => SourceFormat::Jsonl,
    }
}

fn run_match(ctx: &Session, args: MatchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let left = read_entity("left", &args.left)?;
    let right = read_entity("right", &args.right)?;
    let pair = EntityPair::new("cli", left, right);
    let rt = ctx.runtime(&args.backend)?;
    let cal = resolve_params(&rt, &args.params, Some(std::slice::from_ref(&pair)))?;
    let prediction = rt
        .matcher
        .match_pair(&pair, &cal.tree, &cal.knowledge)
        .map_err(|e| CliError::failed(format!("{}: {e}", e.code())))?;
    if ctx.pretty {
        let mut text = format!("{} (run {})\n", prediction.decision, prediction.run_id);
        if let Some(explanation) = &prediction.explanation {
            text.push_str(explanation);
        }
        return emit_text(out, &text);
    }
    emit(
        out,
        &json!({
            "decision": prediction.decision,
            "explanation": prediction.explanation,
            "run_id": prediction.run_id,
        }),
    )
}

fn run_benchmark_cmd(ctx: &Session, args: BenchmarkArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let rt = ctx.runtime(&args.backend)?;
    let cal = resolve_params(&rt, &args.params, Some(&data.pairs))?;
    let result = run_benchmark(&data, &rt.matcher, &cal.tree, &cal.knowledge, args.mode, args.parallelism)
        .map_err(CliError::usage)?;
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&result).context("serializing result")?;
        std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    }
    if ctx.pretty {
        return emit_text(out, &render_table(&[(data.name.as_str(), &result.metrics)]));
    }
    emit(
        out,
        &json!({
            "dataset": result.dataset,
            "mode": result.mode,
            "profile": cal.chosen_profile,
            "metrics": result.metrics,
            "config_digest": result.config_digest,
        }),
    )
}

fn strategies(args: &TuneArgs) -> Result<BTreeSet<Strategy>, CliError> {
    if args.strategies.is_empty() {
        let mut set = BTreeSet::from([Strategy::Rules, Strategy::Experiences]);
        if args.space.is_some() {
            set.insert(Strategy::Search);
        }
        return Ok(set);
    }
    args.strategies
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(CliError::usage))
        .collect()
}

/// Parameters of `tree` that differ from `defaults`, knowledge excluded.
fn changed_params(tree: &ParameterTree, defaults: &ParameterTree) -> Vec<(String, ParamValue)> {
    tree.iter()
        .filter(|(_, v)| !matches!(v, ParamValue::Knowledge(_)))
        .filter(|(path, v)| defaults.get(path).ok() != Some(*v))
        .map(|(path, v)| (path.to_string(), v.clone()))
        .collect()
}

fn merge_knowledge(base: &[KnowledgeEntry], learned: &[KnowledgeEntry]) -> Vec<KnowledgeEntry> {
    let mut seen = BTreeSet::new();
    base.iter()
        .chain(learned)
        .filter(|k| seen.insert(k.text.to_lowercase()))
        .cloned()
        .collect()
}

#[derive(Serialize)]
struct TuneReport<'a> {
    #[serde(flatten)]
    outcome: &'a TuneOutcome,
    saved_profile: Option<&'a str>,
}

fn run_tune(ctx: &Session, args: TuneArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let strategies = strategies(&args)?;
    let space = match &args.space {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SearchSpace>(&text)
                .map_err(|e| CliError::usage(format!("invalid search space {}: {e}", path.display())))?
        }
        None if strategies.contains(&Strategy::Search) => {
            return Err(CliError::usage("the search strategy needs --space"));
        }
        None => SearchSpace::default(),
    };
    if let Some(key) = &args.save_profile {
        em_core::catalog::validate_key(key).map_err(CliError::usage)?;
    }
    let data = load_data(&args.data)?;
    let rt = ctx.runtime(&args.backend)?;
    let cal = resolve_params(&rt, &args.params, None)?;
    let config = TuneConfig {
        strategies,
        budget: args.budget,
        seed: args.seed.or(ctx.settings.seed).unwrap_or(0),
        parallelism: args.parallelism,
    };
    let outcome = tune(&rt.matcher, &cal.tree, &cal.knowledge, &data.pairs, &space, &config).map_err(CliError::failed)?;

    if let Some(key) = &args.save_profile {
        let mut record = CatalogRecord::from_outcome(key.clone(), &outcome).with_signature(data.attribute_signature());
        let mut overrides: em_core::tune::Overrides = changed_params(&cal.tree, &rt.defaults).into_iter().collect();
        overrides.extend(outcome.best_overrides.clone());
        record.overrides = overrides;
        let (base_rules, base_experiences): (Vec<_>, Vec<_>) = cal
            .knowledge
            .iter()
            .cloned()
            .partition(|k| k.kind == em_core::knowledge::KnowledgeKind::Rule);
        record.rules = merge_knowledge(&base_rules, &outcome.rules);
        record.experiences = merge_knowledge(&base_experiences, &outcome.experiences);
        rt.store.save(&record).map_err(CliError::failed)?;
    }

    if ctx.pretty {
        let mut text = format!("best score {:.2} over {} trial(s)\n", outcome.best_score, outcome.trials.len());
        for (path, value) in &outcome.best_overrides {
            text.push_str(&format!("  {path} = {}\n", value.render()));
        }
        text.push_str(&format!(
            "{} rule(s), {} experience(s) learned\n",
            outcome.rules.len(),
            outcome.experiences.len()
        ));
        if let Some(key) = &args.save_profile {
            text.push_str(&format!("saved as profile `{key}`\n"));
        }
        return emit_text(out, &text);
    }
    emit(
        out,
        &TuneReport {
            outcome: &outcome,
            saved_profile: args.save_profile.as_deref(),
        },
    )
}

fn run_calibrate(ctx: &Session, args: CalibrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = em_core::catalog::CatalogStore::new(ctx.settings.catalog_dir());
    if args.list {
        let profiles = store.list_profiles().map_err(CliError::failed)?;
        if ctx.pretty {
            return emit_text(out, &profiles.join("\n"));
        }
        return emit(out, &json!({ "profiles": profiles }));
    }
    let data = match &args.dataset {
        Some(path) => Some(load_data(&DatasetArgs {
            dataset: path.clone(),
            format: args.format,
        })?),
        None => None,
    };
    let cal = em_core::catalog::calibrate(
        &store,
        &default_params(&ctx.settings),
        args.profile.as_deref(),
        data.as_ref().map(|d| d.pairs.as_slice()),
    )
    .map_err(CliError::failed)?;
    if ctx.pretty {
        let mut text = format!("profile: {}\n", cal.chosen_profile);
        for (path, value) in cal.tree.iter().filter(|(_, v)| !matches!(v, ParamValue::Knowledge(_))) {
            text.push_str(&format!("  {path} = {}\n", value.render()));
        }
        text.push_str(&format!("{} knowledge entr(ies)\n", cal.knowledge.len()));
        return emit_text(out, &text);
    }
    emit(
        out,
        &json!({
            "chosen_profile": cal.chosen_profile,
            "parameters": cal.tree.to_map(),
            "knowledge": cal.knowledge,
        }),
    )
}

fn run_config(ctx: &Session, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = default_params(&ctx.settings);
    if ctx.pretty {
        let mut text = match &ctx.config_file {
            Some(p) => format!("config file: {}\n", p.display()),
            None => "config file: (none)\n".to_string(),
        };
        let settings = toml::to_string(&ctx.settings.redacted()).context("rendering settings")?;
        text.push_str(&settings);
        text.push_str(&format!("catalog: {}\n", ctx.settings.catalog_dir().display()));
        return emit_text(out, &text);
    }
    emit(
        out,
        &json!({
            "config_file": ctx.config_file,
            "settings": ctx.settings.redacted(),
            "catalog_dir": ctx.settings.catalog_dir(),
            "parameters": defaults.to_map(),
        }),
    )
}

fn run_serve(ctx: &Session, args: ServeArgs) -> Result<(), CliError> {
    let rt = ctx.runtime(&args.backend)?;
    let state = ServiceState {
        matcher: rt.matcher,
        defaults: rt.defaults,
        store: rt.store,
    };
    let tokio_rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    tokio_rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .with_context(|| format!("cannot listen on {}", args.addr))?;
        let addr = listener.local_addr().context("reading the bound address")?;
        tracing::info!(%addr, "serving");
        eprintln!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        service::serve(listener, state, shutdown).await.context("serving")?;
        Ok::<(), CliError>(())
    })
}

fn run_scaffold(args: ScaffoldArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let registry = default_registry(Arc::new(FixtureProvider::new())).context("building the tool registry")?;
    let path = scaffold(&args.name, &args.parent, &args.out_dir, &registry).map_err(|e| match e {
        ScaffoldError::InvalidName(_) | ScaffoldError::UnknownParent(_) => CliError::usage(e),
        other => CliError::failed(other),
    })?;
    emit(
        out,
        &json!({ "created": path, "tool": format!("{}.{}", args.parent, args.name) }),
    )
}
