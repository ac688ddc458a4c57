use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bprr_core::bounds::bound_summary;
use bprr_core::exact::{solve_exact, ExactLimits};
use bprr_core::milp::{milp_text, parse_lp_summary, MilpCounts};
use bprr_core::model::{Request, TokenCost};
use bprr_core::placement::{cg_block_placement, cg_feasibility, max_guaranteed_requests};
use bprr_core::routing::initial_states;
use bprr_core::scenario::{load_scenario, Scenario};
use bprr_core::sim::{
    auto_target, csv_rows, run, run_monte_carlo, write_csv, ArrivalProcess, CsvRow, LengthModel,
    PolicyConfig, PolicyKind, PreparedPolicy, WorkloadSpec,
};
use bprr_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "bprr",
    version,
    about = "Block placement and request routing for distributed LLM inference"
)]
struct Cli {
    /// Overrides the workload seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario JSON file.
    #[arg(short, long)]
    scenario: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a block placement.
    Place {
        #[command(flatten)]
        s: ScenarioArg,
        #[arg(long, default_value = "proposed")]
        policy: PolicyKind,
        #[arg(long)]
        target: Option<u64>,
    },
    /// Route one request on an idle cluster.
    Route {
        #[command(flatten)]
        s: ScenarioArg,
        #[arg(long)]
        client: String,
        #[arg(long, default_value_t = 20)]
        input_len: u32,
        #[arg(long, default_value_t = 128)]
        output_len: u32,
        #[arg(long, default_value = "proposed")]
        policy: PolicyKind,
        #[arg(long)]
        target: Option<u64>,
    },
    /// Simulate the workload, once or over Monte Carlo runs.
    Simulate {
        #[command(flatten)]
        s: ScenarioArg,
        /// Policies to run; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Per-token upper bound, lower bound and their ratio.
    Bound {
        #[command(flatten)]
        s: ScenarioArg,
        #[arg(long)]
        target: Option<u64>,
    },
    /// Optimal placement and routing of a tiny instance by enumeration.
    Exact {
        #[command(flatten)]
        s: ScenarioArg,
        #[arg(long, default_value_t = ExactLimits::default().max_blocks)]
        max_blocks: u32,
        #[arg(long, default_value_t = ExactLimits::default().max_servers)]
        max_servers: usize,
        #[arg(long, default_value_t = ExactLimits::default().max_requests)]
        max_requests: usize,
    },
    /// Write the joint placement and routing MILP in LP format.
    EmitMilp {
        #[command(flatten)]
        s: ScenarioArg,
    },
    /// Sweep arrival rates and output lengths over policies.
    Compare {
        #[command(flatten)]
        s: ScenarioArg,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5")]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "64,128")]
        output_lens: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Check placement, sizing and simulator invariants on a scenario.
    Validate {
        #[command(flatten)]
        s: ScenarioArg,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Output<'a> {
    out: Option<&'a Path>,
    format: Option<Format>,
}

impl Output<'_> {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match self.out {
            Some(p) => Box::new(File::create(p)?),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        Ok(())
    }

    fn text(&self, text: &str) -> Result<()> {
        let mut w = self.writer()?;
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    fn csv<T: Serialize>(&self, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.writer()?);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn load(s: &ScenarioArg, seed: Option<u64>) -> Result<Scenario> {
    let mut scenario = load_scenario(&s.scenario)?;
    if let (Some(seed), Some(w)) = (seed, scenario.workload.as_mut()) {
        w.seed = seed;
    }
    Ok(scenario)
}

fn policy_for(scenario: &Scenario, kind: PolicyKind, target: Option<u64>) -> PolicyConfig {
    let mut config = scenario
        .policies
        .iter()
        .find(|p| p.kind == kind)
        .cloned()
        .unwrap_or_else(|| PolicyConfig::new(kind));
    if target.is_some() {
        config.target = target;
    }
    config
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    let out = Output {
        out: cli.out.as_deref(),
        format: cli.format,
    };
    match &cli.command {
        Command::Place { s, policy, target } => {
            let scenario = load(s, cli.seed)?;
            let workload = scenario.sizing_workload();
            let config = policy_for(&scenario, *policy, *target);
            let prepared =
                PreparedPolicy::prepare(&scenario.cluster, &workload, &config, workload.seed)?;
            let doc = prepared.placement.to_doc(&scenario.cluster);
            if out.format == Some(Format::Csv) {
                #[derive(Serialize)]
                struct Row<'a> {
                    server: &'a str,
                    first: Option<u32>,
                    count: u32,
                }
                let rows: Vec<Row> = scenario
                    .cluster
                    .servers()
                    .iter()
                    .enumerate()
                    .map(|(j, srv)| {
                        let r = prepared.placement.range(j);
                        Row {
                            server: &srv.id,
                            first: r.map(|r| r.first),
                            count: r.map_or(0, |r| r.count),
                        }
                    })
                    .collect();
                out.csv(&rows)?;
            } else {
                out.json(&serde_json::json!({ "policy": policy, "target": prepared.target, "placement": doc }))?;
            }
        }
        Command::Route {
            s,
            client,
            input_len,
            output_len,
            policy,
            target,
        } => {
            let scenario = load(s, cli.seed)?;
            let workload = scenario.sizing_workload();
            let cluster = &scenario.cluster;
            let config = policy_for(&scenario, *policy, *target);
            let prepared = PreparedPolicy::prepare(cluster, &workload, &config, workload.seed)?;
            let request = Request {
                id: 0,
                client: cluster.client_index(client)?,
                arrival: 0.0,
                input_len: *input_len,
                output_len: *output_len,
            };
            cluster.model().check_lengths(*input_len, *output_len)?;
            let states = initial_states(cluster, &prepared.placement, scenario.options.accounting);
            let outcome = prepared.decide(cluster, &states, &request, 0.0)?;
            let chain: Vec<&str> = outcome
                .route
                .servers()
                .into_iter()
                .map(|j| cluster.servers()[j].id.as_str())
                .collect();
            let cost = TokenCost::Averaged {
                input_len: *input_len,
                output_len: *output_len,
            };
            let per_token = cost.route_time(cluster, &outcome.route);
            out.json(&serde_json::json!({
                "policy": policy,
                "chain": chain,
                "outcome": outcome,
                "per_token": per_token,
            }))?;
        }
        Command::Simulate { s, policies, runs } => {
            let scenario = load(s, cli.seed)?;
            let workload = scenario.workload()?;
            let configs: Vec<PolicyConfig> = if policies.is_empty() {
                scenario.policies_or_default()
            } else {
                policies
                    .iter()
                    .map(|&k| policy_for(&scenario, k, None))
                    .collect()
            };
            let runs = runs.unwrap_or(scenario.runs);
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for config in &configs {
                let (report, timing) =
                    run_monte_carlo(&scenario.cluster, workload, config, &scenario.options, runs)?;
                rows.extend(csv_rows(&report, Some(&timing)));
                reports.push(serde_json::json!({ "report": report, "timing": timing }));
            }
            match out.format {
                Some(Format::Json) => out.json(&reports)?,
                _ => write_csv(&rows, out.writer()?)?,
            }
        }
        Command::Bound { s, target } => {
            let scenario = load(s, cli.seed)?;
            let workload = scenario.sizing_workload();
            let cluster = &scenario.cluster;
            let target = match target {
                Some(t) => *t,
                None => auto_target(cluster, &workload)?,
            };
            let plan = cg_block_placement(cluster, target)?;
            let requests = workload.generate(cluster)?;
            let b = bound_summary(cluster, &plan, &requests)?;
            match out.format {
                Some(Format::Json) => out.json(&b)?,
                Some(Format::Csv) => out.csv(&[b])?,
                None => out.text(&format!("{} {} {}\n", b.upper, b.lower, b.ratio))?,
            }
        }
        Command::Exact {
            s,
            max_blocks,
            max_servers,
            max_requests,
        } => {
            let scenario = load(s, cli.seed)?;
            let requests = scenario.workload()?.generate(&scenario.cluster)?;
            let limits = ExactLimits {
                max_blocks: *max_blocks,
                max_servers: *max_servers,
                max_requests: *max_requests,
                ..ExactLimits::default()
            };
            let solution = solve_exact(&scenario.cluster, &requests, &limits)?;
            out.json(&serde_json::json!({
                "objective": solution.objective,
                "mean_objective": solution.mean_objective(),
                "placement": solution.placement.to_doc(&scenario.cluster),
                "routes": solution.routes,
                "placements_visited": solution.placements_visited,
                "assignments_visited": solution.assignments_visited,
            }))?;
        }
        Command::EmitMilp { s } => {
            let scenario = load(s, cli.seed)?;
            let requests = match &scenario.workload {
                Some(w) => w.generate(&scenario.cluster)?,
                None => Vec::new(),
            };
            let text = milp_text(&scenario.cluster, &requests)?;
            let summary = parse_lp_summary(&text)?;
            let expected = MilpCounts::expected(&scenario.cluster, requests.len())?;
            if summary.rows != expected.rows() || summary.binaries.len() != expected.binaries {
                return Err(Error::Contract(
                    "emitted model does not match its analytic size".into(),
                ));
            }
            out.text(&text)?;
            eprintln!(
                "{} rows, {} binaries, {} integers, {} auxiliaries",
                summary.rows,
                summary.binaries.len(),
                summary.generals.len(),
                expected.auxiliaries
            );
        }
        Command::Compare {
            s,
            rates,
            output_lens,
            policies,
            runs,
        } => {
            let scenario = load(s, cli.seed)?;
            let base = scenario.workload()?;
            let configs: Vec<PolicyConfig> = if policies.is_empty() {
                vec![
                    PolicyConfig::new(PolicyKind::Proposed),
                    PolicyConfig::new(PolicyKind::Petals),
                ]
            } else {
                policies
                    .iter()
                    .map(|&k| policy_for(&scenario, k, None))
                    .collect()
            };
            let runs = runs.unwrap_or(scenario.runs);
            let rows = compare(&scenario, base, &configs, rates, output_lens, runs)?;
            match out.format {
                Some(Format::Json) => out.json(&rows)?,
                Some(Format::Csv) => out.csv(&rows)?,
                None => out.text(&compare_table(&rows, rates, output_lens))?,
            }
        }
        Command::Validate { s } => {
            let scenario = load(s, cli.seed)?;
            let checks = validate(&scenario)?;
            let mut text = String::new();
            for (name, ok) in &checks {
                text.push_str(&format!("{} {name}\n", if *ok { "pass" } else { "FAIL" }));
            }
            out.text(&text)?;
            if checks.iter().any(|(_, ok)| !ok) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompareRow {
    rate: f64,
    output_len: u32,
    #[serde(flatten)]
    row: CsvRow,
}

fn compare(
    scenario: &Scenario,
    base: &WorkloadSpec,
    configs: &[PolicyConfig],
    rates: &[f64],
    output_lens: &[u32],
    runs: usize,
) -> Result<Vec<CompareRow>> {
    let (input_len, _) = base.lengths.max_lengths();
    let mut rows = Vec::new();
    for &rate in rates {
        for &output_len in output_lens {
            let workload = WorkloadSpec {
                arrivals: ArrivalProcess::Poisson { rate },
                lengths: LengthModel::Fixed {
                    input_len,
                    output_len,
                },
                ..base.clone()
            };
            for config in configs {
                let (report, timing) = run_monte_carlo(
                    &scenario.cluster,
                    &workload,
                    config,
                    &scenario.options,
                    runs,
                )?;
                rows.extend(
                    csv_rows(&report, Some(&timing))
                        .into_iter()
                        .map(|row| CompareRow {
                            rate,
                            output_len,
                            row,
                        }),
                );
            }
        }
    }
    Ok(rows)
}

/// Mean per-token time (std) and first-token time per policy, one column
/// per (rate, output length) cell.
fn compare_table(rows: &[CompareRow], rates: &[f64], output_lens: &[u32]) -> String {
    let mut policies: Vec<&str> = Vec::new();
    for r in rows {
        if !policies.contains(&r.row.policy.as_str()) {
            policies.push(&r.row.policy);
        }
    }
    let cells: Vec<(f64, u32)> = rates
        .iter()
        .flat_map(|&r| output_lens.iter().map(move |&l| (r, l)))
        .collect();
    let mut text = format!("{:<18} {:<14}", "policy", "metric");
    for (r, l) in &cells {
        text.push_str(&format!(" {:>22}", format!("rate={r} l_out={l}")));
    }
    text.push('\n');
    for p in policies {
        for metric in ["per_token", "ttft"] {
            text.push_str(&format!("{p:<18} {metric:<14}"));
            for &(rate, l) in &cells {
                let cell = rows
                    .iter()
                    .find(|r| {
                        r.rate == rate
                            && r.output_len == l
                            && r.row.policy == p
                            && r.row.metric == metric
                    })
                    .map(|r| format!("{:.4} ({:.4})", r.row.mean, r.row.std))
                    .unwrap_or_default();
                text.push_str(&format!(" {cell:>22}"));
            }
            text.push('\n');
        }
    }
    text
}

fn validate(scenario: &Scenario) -> Result<Vec<(String, bool)>> {
    let cluster = &scenario.cluster;
    let workload = scenario.sizing_workload();
    let mut checks = Vec::new();
    let guaranteed = max_guaranteed_requests(cluster);
    checks.push((
        "guaranteed target is placeable".to_string(),
        guaranteed == 0 || cg_feasibility(cluster, guaranteed),
    ));
    if let Some(p) = &scenario.placement {
        checks.push((
            "given placement covers every block".to_string(),
            p.is_feasible(),
        ));
    }
    for config in scenario.policies_or_default() {
        let prepared = PreparedPolicy::prepare(cluster, &workload, &config, workload.seed)?;
        checks.push((
            format!("{}: placement covers every block", config.kind),
            prepared.placement.is_feasible(),
        ));
        if let Some(w) = &scenario.workload {
            let mut options = scenario.options.clone();
            options.check_invariants = true;
            let (name, ok) = match (
                run(cluster, w, &config, &options),
                run(cluster, w, &config, &options),
            ) {
                (Ok(a), Ok(b)) => {
                    let agg = &a.report.aggregates;
                    let conserved = agg.arrivals == agg.completed + agg.dropped;
                    (
                        "memory, conservation and determinism",
                        conserved && a.report == b.report,
                    )
                }
                (Err(Error::CapacityViolated(_)), _) | (_, Err(Error::CapacityViolated(_))) => {
                    ("memory, conservation and determinism", false)
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            checks.push((format!("{}: {name}", config.kind), ok));
        }
    }
    Ok(checks)
}
