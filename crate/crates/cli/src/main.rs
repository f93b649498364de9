//! `careline`: chat, simulate, and evaluate care calls from the terminal.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use careline_core::config::{BackendKind, Config};
use careline_core::harness::{load_cases, run_iso_eval, run_simulation, IsoEvalCase, PatientScript};
use careline_core::intervention::ProtocolSet;
use careline_core::model::{parse_patient_profile, read_file, CallScript, ProtectedStore, ReferenceTables};
use careline_core::orchestrator::{Orchestrator, StepOutcome};
use careline_core::policy::PolicyIndex;
use careline_core::prompt::PromptDoc;
use careline_core::state::Phase;
use careline_core::summary::summarize_call;

#[derive(Parser, Debug)]
#[command(name = "careline", version, about = "Multi-agent care-call engine")]
struct Cli {
    /// Configuration file (defaults to ./careline.toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Patient profile JSON, overriding the config.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Call script JSON, overriding the config.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Reference tables directory, overriding the config.
    #[arg(long, global = true)]
    tables: Option<PathBuf>,
    /// Facility tenant whose policy index answers questions.
    #[arg(long, global = true)]
    tenant: Option<String>,
    #[arg(long, global = true, value_parser = ["rules", "service"])]
    backend: Option<String>,
    /// Print injected tasks and state changes per turn.
    #[arg(long, global = true)]
    debug: bool,
    /// Seed for scripted-utterance variants.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for transcripts, summaries and metrics.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interactive session on stdin.
    Chat,
    /// Run scripted-patient simulations.
    Simulate { scripts: Vec<PathBuf> },
    /// Run single-turn capability cases (files or directories).
    Isoeval { cases: Vec<PathBuf> },
    /// Build and save the policy vector indexes.
    Index,
    /// Schema-check every fixture under the tables directory.
    Validate,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let path = cli.config.clone().unwrap_or_else(|| PathBuf::from("careline.toml"));
    let mut c = Config::load(&path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(p) = &cli.profile {
        c.paths.profile = p.clone();
    }
    if let Some(p) = &cli.script {
        c.paths.script = p.clone();
    }
    if let Some(p) = &cli.tables {
        c.paths.tables = p.clone();
    }
    if let Some(t) = &cli.tenant {
        c.engine.tenant = t.clone();
    }
    if let Some(b) = &cli.backend {
        c.backend = b.parse::<BackendKind>()?;
    }
    Ok(c)
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn print_debug(out: &StepOutcome) {
    if let Some(doc) = PromptDoc::parse(&out.prompt) {
        for t in &doc.tasks {
            eprintln!("  [task:{} {} p{}] {}", t.id, t.origin, t.priority, t.text);
        }
    }
    for o in &out.outputs {
        for d in &o.state_deltas {
            eprintln!("  [delta {}] {}", o.agent_id, serde_json::to_string(d).unwrap_or_default());
        }
    }
    eprintln!("  [phase] {} consumed={:?}", out.phase.as_str(), out.consumed);
}

fn finish_session(orch: &mut Orchestrator, out: Option<&Path>, stem: &str) -> Result<()> {
    orch.transcript_mut().flush();
    let profile = orch.state().profile_loaded.then(|| orch.profile().clone());
    let summary = summarize_call(orch.state(), profile.as_ref(), &orch.resources().script);
    let complete = matches!(summary.outcome, Phase::Terminated | Phase::Escalated);
    let mut text = summary.render();
    if !complete {
        text = format!("Status: incomplete\n{text}");
    }
    if let Some(dir) = out {
        write_out(dir, &format!("{stem}.transcript.jsonl"), &orch.transcript().to_jsonl())?;
        write_out(dir, &format!("{stem}.summary.txt"), &text)?;
        write_out(dir, &format!("{stem}.summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

fn chat(cli: &Cli, config: &Config) -> Result<bool> {
    let mut orch = config.build_orchestrator()?;
    let interrupted = Arc::new(AtomicBool::new(false));
    let flag = interrupted.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    let (tx, rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in std::io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    println!("agent: {}", orch.start()?);
    let stdout = std::io::stdout();
    while !orch.is_finished() {
        print!("you: ");
        stdout.lock().flush()?;
        let line = loop {
            if interrupted.load(Ordering::SeqCst) {
                break None;
            }
            match rx.recv_timeout(Duration::from_millis(100)) {
                Ok(l) => break Some(l),
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => break None,
            }
        };
        let Some(line) = line else {
            println!();
            log::warn!("session interrupted");
            break;
        };
        if line.trim().is_empty() {
            continue;
        }
        let out = orch.step(&line)?;
        if cli.debug {
            print_debug(&out);
        }
        println!("agent: {}", out.response);
    }
    finish_session(&mut orch, cli.out.as_deref(), "chat")?;
    Ok(orch.is_finished())
}

fn simulate(cli: &Cli, config: &Config, scripts: &[PathBuf]) -> Result<bool> {
    if scripts.is_empty() {
        bail!("no patient scripts given");
    }
    let mut all_ok = true;
    for path in scripts {
        let script = PatientScript::load(path)?;
        let report = run_simulation(&script, config, cli.seed)?;
        if cli.debug {
            for o in &report.outcomes {
                eprintln!("turn {}: {}", o.turn, o.response);
                print_debug(o);
            }
        }
        let status = if report.success { "ok" } else { "FAILED" };
        println!(
            "{}: {status} phase={} turns={} sections={}/{} escalations={} elapsed={:?}",
            report.name,
            report.final_phase.as_str(),
            report.metrics.turns,
            report.metrics.sections_completed,
            report.metrics.sections_total,
            report.metrics.escalations,
            report.elapsed
        );
        if let Some(f) = &report.failure {
            println!("  turn {}: {}", f.turn, f.message);
        }
        if let Some(dir) = &cli.out {
            write_out(dir, &format!("{}.transcript.jsonl", script.name), &report.transcript)?;
            write_out(dir, &format!("{}.summary.txt", script.name), &report.summary.render())?;
            write_out(dir, &format!("{}.metrics.json", script.name), &serde_json::to_string_pretty(&report.metrics)?)?;
        }
        all_ok &= report.success;
    }
    Ok(all_ok)
}

fn collect_cases(paths: &[PathBuf]) -> Result<Vec<IsoEvalCase>> {
    let mut cases = Vec::new();
    for p in paths {
        if p.is_dir() {
            cases.extend(load_cases(p)?);
        } else {
            cases.push(IsoEvalCase::parse(&read_file(p)?)?);
        }
    }
    Ok(cases)
}

fn isoeval(cli: &Cli, config: &Config, paths: &[PathBuf]) -> Result<bool> {
    let default = config.paths.tables.join("isoeval");
    let paths = if paths.is_empty() { vec![default] } else { paths.to_vec() };
    let cases = collect_cases(&paths)?;
    let report = run_iso_eval(&cases, config);
    for c in &report.cases {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.id);
        for f in &c.failures {
            println!("    {f}");
        }
    }
    println!("{}/{} passed", report.passed, report.total);
    if let Some(dir) = &cli.out {
        write_out(dir, "isoeval.json", &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report.all_passed())
}

fn index(cli: &Cli, config: &Config) -> Result<bool> {
    let tables = ReferenceTables::load_dir(&config.paths.tables)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| config.paths.index_dir.clone())
        .context("no output directory: pass --out or set paths.index_dir")?;
    let idx = PolicyIndex::build(tables.policy_corpora.values());
    idx.save_dir(&dir)?;
    for t in idx.tenants() {
        let n = idx.tenant(&t).map_or(0, |i| i.len());
        println!("{t}: {n} chunks");
    }
    Ok(true)
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

fn validate(config: &Config) -> Result<bool> {
    let p = &config.paths;
    let mut ok = true;
    let mut report = |what: &Path, r: Result<()>| match r {
        Ok(()) => println!("ok    {}", what.display()),
        Err(e) => {
            ok = false;
            println!("error {}: {e:#}", what.display());
        }
    };
    let tables = ReferenceTables::load_dir(&p.tables);
    report(&p.tables, tables.as_ref().map(|_| ()).map_err(|e| anyhow::anyhow!("{e}")));
    report(&p.script, CallScript::parse(&read_file(&p.script)?).map(|_| ()).map_err(Into::into));
    report(&p.protocols, ProtocolSet::load(&p.protocols).map(|_| ()).map_err(Into::into));
    report(&p.identity_store, ProtectedStore::parse(&read_file(&p.identity_store)?).map(|_| ()).map_err(Into::into));
    if let Ok(tables) = &tables {
        for f in json_files(&p.tables.join("profiles")) {
            let r = read_file(&f).and_then(|t| parse_patient_profile(&t, tables));
            report(&f, r.map(|_| ()).map_err(Into::into));
        }
    }
    for f in json_files(&p.tables.join("scripts")) {
        report(&f, read_file(&f).and_then(|t| CallScript::parse(&t)).map(|_| ()).map_err(Into::into));
    }
    for f in json_files(&p.tables.join("patients")) {
        report(&f, PatientScript::load(&f).map(|_| ()).map_err(Into::into));
    }
    for f in json_files(&p.tables.join("isoeval")) {
        report(&f, read_file(&f).and_then(|t| IsoEvalCase::parse(&t)).map(|_| ()).map_err(Into::into));
    }
    Ok(ok)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = load_config(&cli)?;
    let ok = match &cli.command {
        Command::Chat => chat(&cli, &config)?,
        Command::Simulate { scripts } => simulate(&cli, &config, scripts)?,
        Command::Isoeval { cases } => isoeval(&cli, &config, cases)?,
        Command::Index => index(&cli, &config)?,
        Command::Validate => validate(&config)?,
    };
    if !ok {
        std::process::exit(1);
    }
    Ok(())
}
