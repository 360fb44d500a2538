use std::collections::HashMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use workbench_cli::api::{ServeConfig, Server};
use workbench_cli::{
    ame_text, analysis_text, echo_text, exit_code, export_text, gateway, load_attachments, load_context,
    load_manifest, store_path, Format, Invalid, Table,
};
use workbench_core::analysis::{AnalysisOptions, Subject};
use workbench_core::lexical::{hedge_counts, stage_one_note};
use workbench_core::orchestrator::{
    execute_stage_one, execute_stage_two, run_plan, sample_seeds, OrchestratorError, Partial, RunManifest,
    StageOneRecord,
};
use workbench_core::prompt::TemplateSet;
use workbench_core::provider::{accumulate_cost, ProviderMode};
use workbench_core::stats::{Correction, Reference};
use workbench_core::store::Store;

#[derive(Parser)]
#[command(name = "workbench", version, about = "Citation context interpretation workbench")]
struct Cli {
    /// Run manifest.
    #[arg(long, global = true, default_value = "plan.cfg")]
    plan: PathBuf,
    /// Workspace directory; defaults to the manifest's store path.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Provider mode, overriding WORKBENCH_MODE and the manifest.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<ProviderMode>,
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<ProviderMode, String> {
    s.parse().map_err(|e: workbench_core::provider::ProviderError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run the stage-one classification calls.
    Stage1 {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Sample stage-one records as stage-two seeds.
    Sample {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the stage-two grid over the sampled seeds.
    Stage2,
    /// Stage one, sampling and stage two in one go.
    Run,
    /// Import a hypothesis-by-code CSV of 0/1 cells.
    ImportCodes { file: PathBuf },
    /// Fit every code and print the full report.
    Analyze {
        /// Include the lexical marker study.
        #[arg(long)]
        markers: bool,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Dot-and-whisker rows for one AME family.
    Report {
        #[arg(long)]
        family: String,
        /// Effects on marker indicators instead of codes.
        #[arg(long)]
        markers: bool,
        /// Unrounded proportions instead of percentage points.
        #[arg(long)]
        raw: bool,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Marker-level effects over the stored hypothesis texts.
    Echo {
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Write a table derived from the code matrix as CSV.
    Export {
        #[arg(value_enum)]
        table: TableArg,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of built UI assets.
        #[arg(long)]
        assets: Option<PathBuf>,
        #[command(flatten)]
        stats: StatsArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct StatsArgs {
    #[arg(long, value_enum, default_value_t = CorrectionArg::Cr1)]
    correction: CorrectionArg,
    #[arg(long, value_enum, default_value_t = ReferenceArg::Normal)]
    reference: ReferenceArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

impl StatsArgs {
    fn options(self, markers: bool) -> AnalysisOptions {
        AnalysisOptions {
            correction: match self.correction {
                CorrectionArg::Cr0 => Correction::CR0,
                CorrectionArg::Cr1 => Correction::CR1,
            },
            reference: match self.reference {
                ReferenceArg::Normal => Reference::Normal,
                ReferenceArg::T => Reference::T,
            },
            alpha: self.alpha,
            markers,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum CorrectionArg {
    Cr0,
    Cr1,
}

#[derive(ValueEnum, Clone, Copy)]
enum ReferenceArg {
    Normal,
    T,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum TableArg {
    Table1,
    Table3,
    Matrix,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Writes command output; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        () = interrupt => {}
        () = terminate => {}
    }
    eprintln!("shutting down");
}

fn open_store(cli_store: Option<&Path>, manifest: &RunManifest) -> Result<Store> {
    let path = store_path(cli_store, manifest);
    Store::open(&path).with_context(|| format!("opening store {}", path.display()))
}

/// Saves what an incomplete plan produced before passing the error on.
fn keep_partial(store: &Store, err: OrchestratorError) -> anyhow::Error {
    if let OrchestratorError::PlanIncomplete { partial, .. } = &err {
        let saved = match partial.as_ref() {
            Partial::StageOne(records) => store.save_stage_one(records),
            Partial::StageTwo(runs) => store.save_runs(runs),
        };
        if let Err(e) = saved {
            eprintln!("warning: could not save partial records: {e}");
        }
    }
    err.into()
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut manifest = load_manifest(&cli.plan)?;
    let templates = TemplateSet::embedded();
    match cli.command {
        Command::Stage1 { n } => {
            if let Some(n) = n {
                manifest.stage_one_count = n;
                // Sampling is its own step here.
                manifest.seed_sample_size = manifest.seed_sample_size.min(n);
            }
            manifest.validate()?;
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let _lock = store.lock()?;
            let gw = gateway(&manifest, cli.mode)?;
            let ctx = load_context(&manifest)?;
            let records =
                execute_stage_one(&manifest, &ctx, &gw, &templates).map_err(|e| keep_partial(&store, e))?;
            store.save_stage_one(&records)?;
            let notes: Vec<String> = records.iter().filter_map(|r| r.result()).map(stage_one_note).collect();
            let h = hedge_counts(&notes);
            println!(
                "stage one: {} records, {} parsed; hedges expected_to={} likely_to={} may={}",
                records.len(),
                notes.len(),
                h.expected_to,
                h.likely_to,
                h.may
            );
        }
        Command::Sample { k, seed } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let _lock = store.lock()?;
            let usable: Vec<StageOneRecord> =
                store.stage_one()?.into_iter().filter(|r| r.result().is_some()).collect();
            let seeds = sample_seeds(
                &usable,
                k.unwrap_or(manifest.seed_sample_size),
                seed.unwrap_or(manifest.rng_seed),
            )?;
            let ids: Vec<String> = seeds.into_iter().map(|s| s.record_id).collect();
            store.save_seeds(&ids)?;
            println!("{}", ids.join(" "));
        }
        Command::Stage2 => {
            manifest.validate()?;
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let _lock = store.lock()?;
            let ids = store.seeds()?;
            if ids.is_empty() {
                return Err(Invalid("no seeds stored; run `workbench sample` first".into()).into());
            }
            let by_id: HashMap<String, StageOneRecord> =
                store.stage_one()?.into_iter().map(|r| (r.record_id.clone(), r)).collect();
            let seeds = ids
                .iter()
                .map(|id| by_id.get(id).cloned().ok_or_else(|| Invalid(format!("seed {id} has no stage-one record"))))
                .collect::<Result<Vec<_>, _>>()?;
            let gw = gateway(&manifest, cli.mode)?;
            let attachments = load_attachments(&manifest)?;
            let runs = execute_stage_two(&manifest, &seeds, &attachments, &gw, &templates)
                .map_err(|e| keep_partial(&store, e))?;
            store.save_runs(&runs)?;
            let units: usize = runs.iter().filter_map(|r| r.result()).map(|r| r.output.alternative_hypotheses.len()).sum();
            println!("stage two: {} runs, {} hypothesis units", runs.len(), units);
        }
        Command::Run => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let _lock = store.lock()?;
            let gw = gateway(&manifest, cli.mode)?;
            let ctx = load_context(&manifest)?;
            let attachments = load_attachments(&manifest)?;
            let plan = run_plan(&manifest, &ctx, &attachments, &gw, &templates).map_err(|e| keep_partial(&store, e))?;
            store.record_plan(&plan)?;
            let cost = accumulate_cost(plan.usages(), &manifest.provider.price_table);
            println!(
                "stage one {} | seeds {} | runs {} | hypotheses {} | intermediate sections {}",
                plan.stage_one.len(),
                plan.seeds.len(),
                plan.runs.len(),
                plan.hypothesis_count(),
                plan.intermediate_count()
            );
            println!(
                "tokens: {} input, {} output ({} reasoning); cost USD {}",
                cost.input_tokens, cost.output_tokens, cost.reasoning_tokens, cost.total_usd
            );
        }
        Command::ImportCodes { file } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let _lock = store.lock()?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let m = store.import_code_matrix(&text)?;
            println!("imported {} rows x {} codes (codebook v{})", m.rows.len(), m.columns.len(), m.codebook_version);
        }
        Command::Analyze { markers, format, stats } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            emit(&analysis_text(&store, &stats.options(markers), format.into())?)?;
        }
        Command::Report { family, markers, raw, format, stats } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let subject = if markers { Subject::Markers } else { Subject::Codes };
            emit(&ame_text(&store, &family, subject, raw, &stats.options(false), format.into())?)?;
        }
        Command::Echo { stats } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            emit(&echo_text(&store, &stats.options(false))?)?;
        }
        Command::Export { table } => {
            let store = open_store(cli.store.as_deref(), &manifest)?;
            let table = match table {
                TableArg::Table1 => Table::Table1,
                TableArg::Table3 => Table::Table3,
                TableArg::Matrix => Table::Matrix,
            };
            emit(&export_text(&store, table)?)?;
        }
        Command::Serve { port, host, assets, stats } => {
            let config = ServeConfig {
                addr: SocketAddr::new(host, port),
                store: store_path(cli.store.as_deref(), &manifest),
                options: stats.options(false),
                assets,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = Server::bind(config).await?;
                eprintln!("listening on http://{}", server.local_addr()?);
                server
                    .run(shutdown_signal())
                    .await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
