use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amsueo::attack::run_attack;
use amsueo::config::{ConfigError, RunConfig};
use amsueo::experiment::{render_summary, run_experiment, summarize, write_csv_file};
use amsueo::grade::{grade, Grade};
use amsueo::report::{summary_path, ReportFile};
use amsueo::simulator::{read_jsonl, read_transcripts, GroundTruth, JsonlWriter, Simulator};
use amsueo::system::SystemFile;

/// AM-SUEO-DBLTKM protocol simulator and passive multi-session attack.
#[derive(Parser, Debug)]
#[command(name = "amsueo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate moduli, matrices and secrets; write the system file.
    GenSystem(Common),
    /// Run a session campaign from a system file.
    Simulate(Common),
    /// Attack a transcript log. Reads only the transcripts.
    Attack {
        #[command(flatten)]
        common: Common,
        /// After the attack, grade the report against the system file and sidecar.
        #[arg(long)]
        grade: bool,
    },
    /// Generate, simulate, attack and grade for every seed in the list.
    Experiment(Common),
    /// Re-grade an existing report against a system file and sidecar.
    Verify(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    modulus_bits: Option<String>,
    #[arg(long)]
    limb_bits: Option<String>,
    #[arg(long)]
    entry_bits: Option<String>,
    #[arg(long)]
    factor_bound_bits: Option<String>,
    #[arg(long)]
    am_table_size: Option<String>,
    /// paper-model or full-20.
    #[arg(long)]
    family_mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    n_sessions: Option<String>,
    #[arg(long)]
    accept_threshold: Option<String>,
    #[arg(long)]
    verify_sessions: Option<String>,
    #[arg(long)]
    max_multiplicity: Option<String>,
    #[arg(long)]
    max_candidates: Option<String>,
    #[arg(long)]
    scan_chunk: Option<String>,
    /// Enable the single-session wrap heuristic.
    #[arg(long)]
    use_wrap_hints: bool,
    /// Seed list for experiments, e.g. `0..20` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    /// Parallel seed slots for experiments.
    #[arg(long)]
    workers: Option<String>,
    /// Keep ground-truth prime factors in the system file.
    #[arg(long)]
    include_factors: bool,
    /// Do not write the ground-truth sidecar.
    #[arg(long)]
    no_ground_truth: bool,
    #[arg(long, value_name = "PATH")]
    system: Option<String>,
    #[arg(long, value_name = "PATH")]
    transcripts: Option<String>,
    #[arg(long, value_name = "PATH")]
    sidecar: Option<String>,
    #[arg(long, value_name = "PATH")]
    report: Option<String>,
    #[arg(long, value_name = "PATH")]
    csv: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("modulus_bits", &self.modulus_bits);
        push("limb_bits", &self.limb_bits);
        push("entry_bits", &self.entry_bits);
        push("factor_bound_bits", &self.factor_bound_bits);
        push("am_table_size", &self.am_table_size);
        push("family_mode", &self.family_mode);
        push("seed", &self.seed);
        push("n_sessions", &self.n_sessions);
        push("accept_threshold", &self.accept_threshold);
        push("verify_sessions", &self.verify_sessions);
        push("max_multiplicity", &self.max_multiplicity);
        push("max_candidates", &self.max_candidates);
        push("scan_chunk", &self.scan_chunk);
        push("seeds", &self.seeds);
        push("workers", &self.workers);
        push("system", &self.system);
        push("transcripts", &self.transcripts);
        push("sidecar", &self.sidecar);
        push("report", &self.report);
        push("csv", &self.csv);
        if self.use_wrap_hints {
            out.push(("use_wrap_hints", "true".into()));
        }
        if self.include_factors {
            out.push(("include_factors", "true".into()));
        }
        if self.no_ground_truth {
            out.push(("ground_truth", "false".into()));
        }
        out
    }

    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        RunConfig::resolve(self.config.as_deref(), self.overrides())
    }
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn io_context<T, E: std::fmt::Display>(r: Result<T, E>, what: &str, path: &Path) -> Result<T, Failure> {
    r.map_err(|e| Failure(format!("{what} {}: {e}", path.display())))
}

fn gen_system(cfg: &RunConfig) -> Result<u8, Failure> {
    let sys = SystemFile::generate(&cfg.params())?;
    io_context(sys.write(&cfg.system, cfg.include_factors), "cannot write", &cfg.system)?;
    let p = &sys.params;
    println!("system        {}", cfg.system.display());
    println!("config hash   {}", cfg.hash());
    println!("modulus bits  {} (limbs {}, entries {}, factors <= {} bits)", p.modulus_bits, p.limb_bits, p.entry_bits, p.factor_bound_bits);
    println!("family mode   {}", p.family_mode);
    println!("matrices      2");
    println!("moduli        {}", sys.am.table.len());
    for m in &sys.am.table {
        println!("  {}", m.q);
    }
    println!("p bits        {}", sys.am.p.bits());
    Ok(0)
}

fn simulate(cfg: &RunConfig) -> Result<u8, Failure> {
    let sys = io_context(SystemFile::read(&cfg.system), "cannot read system file", &cfg.system)?;
    let mut sim = Simulator::from_system(&sys);
    let mut transcripts = io_context(JsonlWriter::create(&cfg.transcripts), "cannot create", &cfg.transcripts)?;
    let mut sidecar = if cfg.ground_truth {
        Some(io_context(JsonlWriter::create(&cfg.sidecar), "cannot create", &cfg.sidecar)?)
    } else {
        None
    };
    let mut leaks = 0u64;
    let stats = sim.run_campaign(cfg.n_sessions, |t, gt| {
        if amsueo::attack::detect_useful_session(0, t).is_some_and(|l| !l.wrapped) {
            leaks += 1;
        }
        transcripts.write(t)?;
        if let Some(w) = sidecar.as_mut() {
            w.write(gt)?;
        }
        Ok(())
    })?;
    io_context(transcripts.finish(), "cannot flush", &cfg.transcripts)?;
    if let Some(w) = sidecar {
        io_context(w.finish(), "cannot flush", &cfg.sidecar)?;
    }
    println!("sessions              {}", stats.sessions);
    println!("transcripts           {}", cfg.transcripts.display());
    if cfg.ground_truth {
        println!("sidecar               {}", cfg.sidecar.display());
    }
    println!("pre/post coincidence  {:.5} (1/32 = {:.5})", stats.coincidence_rate(), 1.0 / 32.0);
    println!("unwrapped leak rate   {:.5}", leaks as f64 / stats.sessions as f64);
    Ok(0)
}

fn load_grade_inputs(cfg: &RunConfig) -> Result<(SystemFile, Vec<GroundTruth>), Failure> {
    let sys = io_context(SystemFile::read(&cfg.system), "cannot read system file", &cfg.system)?;
    let truth = io_context(read_jsonl::<GroundTruth>(&cfg.sidecar), "cannot read sidecar", &cfg.sidecar)?;
    Ok((sys, truth))
}

fn print_grade(g: &Grade) {
    println!("grade: full={} A={} B={} S={} ID={} moduli={} spurious={} decrypted={} indices_wrong={} prediction={} forgery={}",
        g.full, g.a_correct, g.b_correct, g.s_correct, g.id_correct, g.verified_moduli, g.spurious_moduli.len(),
        g.sessions_decrypted, g.reduced_wrong, g.prediction_correct, g.forgery_accepted);
}

fn attack(cfg: &RunConfig, with_grade: bool) -> Result<u8, Failure> {
    let transcripts = io_context(read_transcripts(&cfg.transcripts), "cannot read transcripts", &cfg.transcripts)?;
    let attack = run_attack(&transcripts, &cfg.attack())?;
    let seconds = attack.scan.seconds;
    let mut report = ReportFile::new(cfg, attack);
    if with_grade {
        let (sys, truth) = load_grade_inputs(cfg)?;
        let g = grade(&report.attack, &sys, &truth);
        print_grade(&g);
        report.grade = Some(g);
    }
    io_context(report.write(&cfg.report), "cannot write report", &cfg.report)?;
    let csv_path = summary_path(&cfg.report);
    io_context(report.write_summary_csv(&csv_path), "cannot write summary", &csv_path)?;
    let s = report.summary();
    println!("outcome          {}{}", s.outcome, if s.limiting_phase.is_empty() { String::new() } else { format!(" (limited by {})", s.limiting_phase) });
    println!("leaks            {} unwrapped, {} wrapped", s.leaks, s.wrapped_leaks);
    println!("partial matrices {}", s.partials);
    println!("accepted qx      {} (scan {:.2}s)", s.accepted_qx, seconds);
    println!("candidates       {}", s.candidates);
    println!("verified moduli  {}", s.verified_moduli);
    println!("decrypted        {}", s.sessions_decrypted);
    println!("forged C5 match  {}", s.prediction_matches_observed);
    for note in &report.attack.notes {
        println!("note: {note}");
    }
    println!("report           {}", cfg.report.display());
    Ok(report.attack.outcome.exit_code() as u8)
}

fn experiment(cfg: &RunConfig) -> Result<u8, Failure> {
    let rows = run_experiment(cfg);
    io_context(write_csv_file(&rows, &cfg.csv), "cannot write", &cfg.csv)?;
    let summary = summarize(&rows);
    println!("config hash               {}", cfg.hash());
    print!("{}", render_summary(&summary));
    println!("csv                       {}", cfg.csv.display());
    Ok(if summary.full == rows.len() { 0 } else if summary.full > 0 { 2 } else { 3 })
}

fn verify(cfg: &RunConfig) -> Result<u8, Failure> {
    let report = io_context(ReportFile::read(&cfg.report), "cannot read report", &cfg.report)?;
    let (sys, truth) = load_grade_inputs(cfg)?;
    let g = grade(&report.attack, &sys, &truth);
    print_grade(&g);
    Ok(if g.full { 0 } else if g.verified_moduli > 0 { 2 } else { 3 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = || -> Result<u8, Failure> {
        match &cli.command {
            Command::GenSystem(c) => gen_system(&c.resolve()?),
            Command::Simulate(c) => simulate(&c.resolve()?),
            Command::Attack { common, grade } => attack(&common.resolve()?, *grade),
            Command::Experiment(c) => experiment(&c.resolve()?),
            Command::Verify(c) => verify(&c.resolve()?),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
