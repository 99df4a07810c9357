use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use noncesuch::assorter::ExternalAssertions;
use noncesuch::config::AuditConfig;
use noncesuch::engine::{draw_log_jsonl, run_audit, Audit, AuditReport, AUDIT_STREAM};
use noncesuch::error::{Error, Result};
use noncesuch::io::{load_election, read_structured, to_pretty_json, ElectionFiles, ElectionPaths};
use noncesuch::live::{run_interactive, run_with_mvr_file, MvrFile};
use noncesuch::model::{Election, Finding};
use noncesuch::prng::derive_prng;
use noncesuch::reconcile::{pre_audit_checks, PreAudit};
use noncesuch::retrieval::{PhysicalPile, PileIndex, RetrieverPolicy, SimRetriever};
use noncesuch::sim::{generate, run_experiment, ExperimentSpec, GenSpec};

#[derive(Parser)]
#[command(name = "noncesuch", version, about = "Ballot-level comparison audits with untrusted imprinting and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic election (contests, CVRs, manifest, cards).
    Gen {
        /// Generator spec, TOML or JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an audit against a simulated pile or with manual vote records.
    Audit(AuditArgs),
    /// Run a Monte Carlo experiment.
    Simulate {
        /// Experiment spec, TOML or JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<String>,
        /// Overrides the replication count in the spec.
        #[arg(long)]
        reps: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize an audit or experiment output directory.
    Report {
        dir: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    contests: PathBuf,
    #[arg(long)]
    cvrs: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Ground-truth cards; selects a simulated audit.
    #[arg(long, conflicts_with_all = ["mvr_file", "interactive"])]
    cards: Option<PathBuf>,
    /// Retriever policy for a simulated audit (default honest).
    #[arg(long, requires = "cards")]
    adversary: Option<PathBuf>,
    /// Manual vote records keyed by requested id.
    #[arg(long, conflicts_with = "interactive")]
    mvr_file: Option<PathBuf>,
    /// Prompt for each retrieved card on the terminal.
    #[arg(long)]
    interactive: bool,
    /// External assertions for contests that use them.
    #[arg(long)]
    assertions: Option<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen(spec: &Path, seed: &str, out: &Path) -> Result<ExitCode> {
    let spec: GenSpec = read_structured(spec)?;
    let election = generate(&spec, &mut derive_prng(seed, "gen")?)?;
    ElectionFiles::from_election(&election).write_to(out)?;
    println!(
        "wrote {} CVRs and {} cards to {}",
        election.cvrs.len(),
        election.cards.as_ref().map_or(0, Vec::len),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn check_findings(election: &Election) -> Result<()> {
    // Duplicate ids are an audit outcome, not an input error.
    let fatal: Vec<String> = election
        .validate()
        .into_iter()
        .filter(|f| !Finding::is_duplicate_id(f))
        .map(|f| f.to_string())
        .collect();
    if fatal.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("invalid election: {}", fatal.join("; "))))
    }
}

fn write_outputs(out: &Path, report: &AuditReport, audit: Option<&Audit>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let log = audit.map(|a| draw_log_jsonl(a.log())).unwrap_or_default();
    std::fs::write(out.join("draws.jsonl"), log)?;
    std::fs::write(out.join("report.json"), to_pretty_json(report))?;
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<ExitCode> {
    let mut config = AuditConfig::load(&args.config)?;
    if let Some(seed) = &args.seed {
        config.seed = seed.clone();
        config.validate()?;
    }
    let election = load_election(&ElectionPaths {
        contests: &args.contests,
        cvrs: &args.cvrs,
        manifest: &args.manifest,
        cards: args.cards.as_deref(),
    })?;
    check_findings(&election)?;
    let external = match &args.assertions {
        Some(p) => ExternalAssertions::parse(&std::fs::read_to_string(p)?, &p.display().to_string())?,
        None => ExternalAssertions::new(),
    };

    let plan = match pre_audit_checks(&election, &external)? {
        PreAudit::Plan(p) => Arc::new(p),
        PreAudit::FullHandCount(reason) => {
            let mut report = AuditReport::before_sampling(reason);
            if election.cards.is_some() {
                report.hand_count = Some(election.hand_count()?);
            }
            write_outputs(&args.out, &report, None)?;
            println!("full hand count before sampling");
            return Ok(ExitCode::from(2));
        }
    };

    let audit = if args.cards.is_some() {
        let policy: RetrieverPolicy = match &args.adversary {
            Some(p) => read_structured(p)?,
            None => RetrieverPolicy::honest(),
        };
        let index = Arc::new(PileIndex::new(election.cards()?, &plan.cvrs));
        let mut retriever = SimRetriever::new(Arc::clone(&index), policy);
        let mut pile = PhysicalPile::new(index);
        run_audit(Arc::clone(&plan), &config, AUDIT_STREAM, &mut retriever, &mut pile)?
    } else {
        let mut audit = Audit::new(Arc::clone(&plan), &config, AUDIT_STREAM)?;
        if let Some(path) = &args.mvr_file {
            run_with_mvr_file(&mut audit, &MvrFile::load(path)?)?;
        } else if args.interactive {
            let stdin = std::io::stdin();
            let mut input = BufReader::new(stdin.lock());
            let mut stdout = std::io::stdout();
            run_interactive(&mut audit, &election.contests, &mut input, &mut stdout)?;
            stdout.flush()?;
        } else {
            return Err(Error::Config("give --cards, --mvr-file or --interactive".into()));
        }
        audit
    };

    let mut report = audit.report();
    if report.exit_code() != 0 && election.cards.is_some() {
        report.hand_count = Some(election.hand_count()?);
    }
    write_outputs(&args.out, &report, Some(&audit))?;
    match report.exit_code() {
        0 => {
            println!("all assertions confirmed after {} draws", report.total_draws);
            Ok(ExitCode::SUCCESS)
        }
        _ => {
            println!("full hand count required after {} draws", report.total_draws);
            Ok(ExitCode::from(2))
        }
    }
}

fn cmd_simulate(spec: &Path, seed: Option<&str>, reps: Option<u64>, jobs: usize, out: &Path) -> Result<ExitCode> {
    let mut spec: ExperimentSpec = read_structured(spec)?;
    if let Some(s) = seed {
        spec.seed = s.to_owned();
    }
    if let Some(r) = reps {
        spec.reps = r;
    }
    let output = run_experiment(&spec, jobs)?;
    output.write_to(out)?;
    let rendered = noncesuch::report::render_experiment(out)?;
    print!("{}", rendered.text);
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(dir: &Path, csv: Option<&Path>) -> Result<ExitCode> {
    let rendered = noncesuch::report::render_dir(dir)?;
    print!("{}", rendered.text);
    if let Some(path) = csv {
        std::fs::write(path, rendered.csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { spec, seed, out } => cmd_gen(spec, seed, out),
        Command::Audit(args) => cmd_audit(args),
        Command::Simulate { spec, seed, reps, jobs, out } => cmd_simulate(spec, seed.as_deref(), *reps, *jobs, out),
        Command::Report { dir, csv } => cmd_report(dir, csv.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
