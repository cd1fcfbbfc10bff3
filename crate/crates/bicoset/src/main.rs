//! bicoset: construct and verify bipartite coset graphs over PSL2(Fp).
//!
//! Exit codes: 0 success, 2 search exhausted the field, 3 precondition or
//! pair rejection, 64 usage error, 1 anything else.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bicoset::cosetgraph::build_graph;
use bicoset::error::{Error, Result};
use bicoset::field::FieldCtx;
use bicoset::group::DEFAULT_GROUP_CAP;
use bicoset::pipeline::{
    flattening_to_csv, run_scan, run_search, run_verify_full, scan_to_csv, SearchCensus,
    SearchMode, SearchOutcome, SearchParams, VerifyParams,
};
use bicoset::spectral::{DEFAULT_DENSE_CAP, DEFAULT_MAX_ITER, DEFAULT_NORM_TOL};
use bicoset::subgroups::{PairCertificate, SieveOutcome, DEFAULT_TUPLE_BUDGET};

#[derive(Parser)]
#[command(
    name = "bicoset",
    version,
    about = "Bipartite coset graphs over PSL2(Fp): search, verify, scan, export"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Find a conjugation parameter x whose pair passes the checks.
    Search(SearchArgs),
    /// Build one pair and verify girth, spectral, and walk properties.
    Verify(VerifyArgs),
    /// Sweep a prime range and tabulate girth and norms as CSV.
    Scan(ScanArgs),
    /// Write a pair's bipartite graph as an edge list.
    Export(ExportArgs),
}

#[derive(Args)]
struct CommonSearch {
    /// Candidate order: scan | sieve | random.
    #[arg(long, default_value = "sieve")]
    mode: SearchMode,
    /// Product-free depth to certify (default from log p / (2.1 log(d-1))).
    #[arg(long)]
    l1: Option<u32>,
    /// Word-condition depth to certify (default from the same formula over
    /// the word rank).
    #[arg(long)]
    l2: Option<u32>,
    /// Cap on sieve/word tuples before a run refuses to start.
    #[arg(long, default_value_t = DEFAULT_TUPLE_BUDGET)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl CommonSearch {
    fn params(&self) -> SearchParams {
        SearchParams {
            mode: self.mode,
            l1: self.l1,
            l2: self.l2,
            budget: self.budget,
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    d: u64,
    #[command(flatten)]
    search: CommonSearch,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    d: u64,
    /// Verify this x instead of searching for one.
    #[arg(long)]
    x: Option<u64>,
    #[command(flatten)]
    search: CommonSearch,
    /// Norm iteration tolerance.
    #[arg(long, default_value_t = DEFAULT_NORM_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: u64,
    /// Largest operator dimension solved densely (env BICOSET_DENSE_CAP
    /// applies when the flag is absent).
    #[arg(long)]
    dense_cap: Option<usize>,
    /// Cap on group enumeration and BFS size.
    #[arg(long, default_value_t = DEFAULT_GROUP_CAP)]
    bfs_cap: u64,
    /// Random-walk steps for the flattening curve.
    #[arg(long, default_value_t = 100)]
    steps: u32,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full flattening curve as CSV.
    #[arg(long)]
    walk_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    d: u64,
    #[arg(long)]
    p_min: u64,
    #[arg(long)]
    p_max: u64,
    #[command(flatten)]
    search: CommonSearch,
    #[arg(long, default_value_t = DEFAULT_NORM_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: u64,
    #[arg(long)]
    dense_cap: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GROUP_CAP)]
    bfs_cap: u64,
    /// Write the CSV table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    d: u64,
    /// Export this x instead of searching for one.
    #[arg(long)]
    x: Option<u64>,
    #[command(flatten)]
    search: CommonSearch,
    #[arg(long, default_value_t = DEFAULT_GROUP_CAP)]
    bfs_cap: u64,
    /// Write the edge list here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_dense_cap(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("BICOSET_DENSE_CAP")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(DEFAULT_DENSE_CAP)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SieveSummary {
    bad_count: usize,
    intersection_count: usize,
    loop_count: usize,
    word_count: usize,
    tuples_evaluated: u64,
    bound: f64,
    slack: f64,
}

impl From<&SieveOutcome> for SieveSummary {
    fn from(s: &SieveOutcome) -> Self {
        SieveSummary {
            bad_count: s.bad.len(),
            intersection_count: s.intersection_count,
            loop_count: s.loop_count,
            word_count: s.word_count,
            tuples_evaluated: s.tuples_evaluated,
            bound: s.bound,
            slack: s.slack,
        }
    }
}

#[derive(Serialize)]
struct SearchReport<'a> {
    p: u64,
    d: u64,
    mode: SearchMode,
    l1: u32,
    l2: u32,
    x: u64,
    census: SearchCensus,
    sieve: Option<SieveSummary>,
    certificate: &'a PairCertificate,
}

fn cmd_search(a: &SearchArgs) -> Result<()> {
    let ctx = FieldCtx::new(a.p)?;
    let outcome = run_search(&ctx, a.d, &a.search.params())?;
    match &outcome.found {
        Some((x, cert)) => {
            let report = SearchReport {
                p: outcome.p,
                d: outcome.d,
                mode: outcome.mode,
                l1: outcome.l1,
                l2: outcome.l2,
                x: *x,
                census: outcome.census,
                sieve: outcome.sieve.as_ref().map(SieveSummary::from),
                certificate: cert,
            };
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            emit(&a.out, &json)
        }
        None => Err(exhaustion(&outcome)),
    }
}

/// Builds the exit-2 error and prints the census to stderr.
fn exhaustion(outcome: &SearchOutcome) -> Error {
    let census = serde_json::to_string_pretty(&outcome.census)
        .unwrap_or_else(|_| format!("{:?}", outcome.census));
    eprintln!("{census}");
    let sieved = outcome.sieve.as_ref().map(|s| s.bad.len()).unwrap_or(0);
    Error::Exhausted {
        p: outcome.p,
        bad_count: sieved.max(outcome.census.rejected_total() as usize),
    }
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let params = VerifyParams {
        p: a.p,
        d: a.d,
        x: a.x,
        mode: a.search.mode,
        l1: a.search.l1,
        l2: a.search.l2,
        tol: a.tol,
        max_iter: a.max_iter,
        dense_cap: resolve_dense_cap(a.dense_cap),
        group_cap: a.bfs_cap,
        walk_steps: a.steps,
        budget: a.search.budget,
        seed: a.search.seed,
        threads: a.search.threads,
    };
    let output = run_verify_full(&params)?;
    if let Some(path) = &a.walk_csv {
        let curve = output.flattening.as_deref().unwrap_or(&[]);
        fs::write(path, flattening_to_csv(curve))?;
    }
    let mut json = serde_json::to_string_pretty(&output.report)?;
    json.push('\n');
    emit(&a.out, &json)
}

fn cmd_scan(a: &ScanArgs) -> Result<()> {
    let res = run_scan(
        a.d,
        a.p_min,
        a.p_max,
        &a.search.params(),
        a.tol,
        a.max_iter,
        resolve_dense_cap(a.dense_cap),
        a.bfs_cap,
    )?;
    for (p, reason) in &res.skipped {
        eprintln!("p = {p} skipped: {reason}");
    }
    emit(&a.out, &scan_to_csv(&res.rows))
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let ctx = FieldCtx::new(a.p)?;
    let cert = match a.x {
        Some(x) => {
            let h = bicoset::pipeline::build_subgroup(&ctx, a.d)?;
            bicoset::subgroups::make_pair(&ctx, &h, x)?
        }
        None => {
            let outcome = run_search(&ctx, a.d, &a.search.params())?;
            match outcome.found {
                Some((_, cert)) => cert,
                None => return Err(exhaustion(&outcome)),
            }
        }
    };
    let graph = build_graph(&ctx, &cert, a.bfs_cap)?;
    let mut buf = Vec::new();
    graph.export_edge_list(&mut buf)?;
    let text = String::from_utf8(buf).expect("edge list is ASCII");
    emit(&a.out, &text)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Search(a) => cmd_search(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Scan(a) => cmd_scan(a),
        Cmd::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Exhausted { p, bad_count }) => {
            eprintln!("no valid x in F_{p}: {bad_count} candidates excluded");
            ExitCode::from(2)
        }
        Err(e @ (Error::Precondition(_) | Error::PairRejected { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
