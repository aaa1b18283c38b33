//! `maas`: generate instances, run mechanisms, audit matchings, and run
//! simulations from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 computational budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use maas_core::approx_stable::match_as;
use maas_core::audit::{
    apply_switching_cost, find_blocking_groups, find_blocking_pairs, metrics_csv, posterior_audit, records_csv,
    stability_metrics, BlockingRecord, RecordKind,
};
use maas_core::gen::{generate_instance, GenConfig, MarketInstance};
use maas_core::model::{Matching, Period};
use maas_core::mw::match_mw;
use maas_core::mwas::{expand_and_prune, match_mwas_instance, MwasOptions};
use maas_core::sim::{
    aggregate_csv, periods_csv, run, run_anarchy, sweep, sweep_trends, Access, AnarchyConfig, Mechanism, RunReport,
    SimConfig,
};

const MATCHING_FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "maas",
    version,
    about = "Matching with contracts for manufacturing-service marketplaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a market instance.
    Gen {
        /// Generator config (JSON); defaults apply when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Matching period of the instance.
        #[arg(long, default_value_t = 1)]
        period: u32,
    },
    /// Run one mechanism on an instance.
    Match {
        instance: PathBuf,
        #[arg(long)]
        mechanism: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find blocking pairs and groups of a matching.
    Audit {
        instance: PathBuf,
        matching: PathBuf,
        /// Next period's instance and matching, for the two-period audit.
        #[arg(long, num_args = 2, value_names = ["INSTANCE", "MATCHING"])]
        posterior: Option<Vec<PathBuf>>,
        #[arg(long = "switching-cost", num_args = 1.., value_delimiter = ',')]
        switching_cost: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Multi-period simulation.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// One simulation per arrival rate.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Defection from the MW allocation.
    Anarchy {
        config: PathBuf,
        #[arg(long)]
        access: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    periods: Option<u32>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    replications: Option<u32>,
    #[arg(long)]
    posterior: bool,
    #[arg(long = "switching-cost", num_args = 1.., value_delimiter = ',')]
    switching_cost: Vec<f64>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Resource(String),
}

impl From<maas_core::Error> for Failure {
    fn from(e: maas_core::Error) -> Self {
        if e.is_resource() {
            Failure::Resource(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Usage(format!("{context}: {e}"))
}

#[derive(Serialize, Deserialize)]
struct MatchingFile {
    version: u32,
    config_hash: String,
    instance_hash: String,
    mechanism: Mechanism,
    period: Period,
    utility: f64,
    lb: Option<usize>,
    matching: Matching,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(usage(&path.display().to_string()))?;
    serde_json::from_str(&text).map_err(usage(&path.display().to_string()))
}

fn write(path: &Path, contents: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(usage(&dir.display().to_string()))?;
    }
    fs::write(path, contents).map_err(usage(&path.display().to_string()))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force`.
fn prepare_out_dir(dir: &Path, force: bool) -> Outcome {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Failure::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(usage(&dir.display().to_string()))
}

fn cmd_gen(config: Option<&Path>, out: &Path, seed: Option<u64>, lambda: Option<f64>, period: u32) -> Outcome {
    let mut cfg: GenConfig = match config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = lambda {
        cfg.lambda_orders = l;
    }
    let instance = generate_instance(&cfg, Period(period))?;
    write(out, &instance.to_json())?;
    println!(
        "wrote {}: {} suppliers, {} orders, {} contracts",
        out.display(),
        instance.suppliers.len(),
        instance.n_orders(),
        instance.contracts.len()
    );
    Ok(())
}

fn run_mechanism(instance: &MarketInstance, mechanism: Mechanism) -> Outcome<(Matching, Option<usize>)> {
    Ok(match mechanism {
        Mechanism::Mw => (match_mw(instance)?, None),
        Mechanism::As => (match_as(instance, Default::default())?.matching, None),
        _ => {
            let objective = mechanism.objective().expect("MWAS variant");
            let mw = match_mw(instance)?;
            let stable = match_as(instance, Default::default())?.matching;
            let (out, _) = match_mwas_instance(instance, objective, &[&mw, &stable], &MwasOptions::default())?;
            (out.matching, Some(out.lb))
        }
    })
}

fn cmd_match(instance_path: &Path, mechanism: &str, out: &Path) -> Outcome {
    let mechanism: Mechanism = mechanism.parse()?;
    let instance: MarketInstance = read_json(instance_path)?;
    let (matching, lb) = run_mechanism(&instance, mechanism)?;
    let file = MatchingFile {
        version: MATCHING_FORMAT_VERSION,
        config_hash: instance.config_hash.clone(),
        instance_hash: instance.hash(),
        mechanism,
        period: instance.current,
        utility: matching.total_utility(),
        lb,
        matching,
    };
    write(out, &serde_json::to_string_pretty(&file).expect("matching serializes"))?;
    let lb = file.lb.map(|l| format!(" lb={l}")).unwrap_or_default();
    println!(
        "{mechanism}: utility={:.6} matched_orders={}/{} matched_suppliers={}{lb}",
        file.utility,
        file.matching.len(),
        instance.n_orders(),
        file.matching.by_supplier().len()
    );
    Ok(())
}

/// Loads a matching and checks it was computed on `instance`.
fn load_matching(path: &Path, instance: &MarketInstance) -> Outcome<MatchingFile> {
    let file: MatchingFile = read_json(path)?;
    if file.config_hash != instance.config_hash || file.instance_hash != instance.hash() {
        return Err(Failure::Usage(format!(
            "{} was not computed on this instance (hash mismatch)",
            path.display()
        )));
    }
    Ok(file)
}

fn write_records(dir: &Path, stem: &str, records: &[BlockingRecord], instance: &MarketInstance) -> Outcome {
    let table = stability_metrics(records, instance);
    write(&dir.join(format!("{stem}_records.csv")), &records_csv(records))?;
    write(
        &dir.join(format!("{stem}_records.json")),
        &serde_json::to_string_pretty(records).expect("records serialize"),
    )?;
    write(&dir.join(format!("{stem}_metrics.csv")), &metrics_csv(&table))?;
    write(
        &dir.join(format!("{stem}_metrics.json")),
        &serde_json::to_string_pretty(&table).expect("metrics serialize"),
    )
}

fn cmd_audit(
    instance_path: &Path,
    matching_path: &Path,
    posterior: Option<&[PathBuf]>,
    thetas: &[f64],
    out: &Path,
    force: bool,
) -> Outcome {
    let instance: MarketInstance = read_json(instance_path)?;
    let file = load_matching(matching_path, &instance)?;
    if let Some(t) = thetas.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Failure::Usage(format!("switching cost {t} must be finite and >= 0")));
    }
    prepare_out_dir(out, force)?;
    let graph = expand_and_prune(&instance, MwasOptions::default().bundle_cap)?;
    let mut records = find_blocking_pairs(&file.matching, &instance)?;
    records.extend(find_blocking_groups(&file.matching, &instance, Some(&graph))?);
    write_records(out, "transient", &records, &instance)?;
    let pairs = records.iter().filter(|r| r.kind == RecordKind::Pair).count();
    println!(
        "transient: {pairs} blocking pairs, {} blocking groups",
        records.len() - pairs
    );

    if !thetas.is_empty() {
        let mut w = String::from("theta,pairs,groups\n");
        for &theta in thetas {
            let kept = apply_switching_cost(&records, theta);
            let p = kept.iter().filter(|r| r.kind == RecordKind::Pair).count();
            w.push_str(&format!("{theta},{p},{}\n", kept.len() - p));
        }
        write(&out.join("switching_cost.csv"), &w)?;
    }

    if let Some([next_instance, next_matching]) = posterior {
        let next: MarketInstance = read_json(next_instance)?;
        let next_file = load_matching(next_matching, &next)?;
        let records = posterior_audit(&file.matching, &next_file.matching, &instance, &next)?;
        write_records(out, "posterior", &records, &instance)?;
        let pairs = records.iter().filter(|r| r.kind == RecordKind::Pair).count();
        println!(
            "posterior: {pairs} blocking pairs, {} blocking groups",
            records.len() - pairs
        );
    }
    Ok(())
}

fn sim_config(path: &Path, args: &RunArgs) -> Outcome<SimConfig> {
    let mut cfg: SimConfig = read_json(path)?;
    if let Some(m) = &args.mechanism {
        cfg.mechanism = m.parse()?;
    }
    if let Some(s) = args.seed {
        cfg.gen.seed = s;
    }
    if let Some(p) = args.periods {
        cfg.n_periods = p;
        if let Some(a) = cfg.anarchy.as_mut() {
            a.n_periods = p;
        }
    }
    if let Some(l) = args.lambda {
        cfg.gen.lambda_orders = l;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if args.posterior {
        cfg.posterior_audit = true;
    }
    if !args.switching_cost.is_empty() {
        cfg.switching_cost_sweep = args.switching_cost.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stem(cfg: &SimConfig) -> String {
    format!("{}_lambda{}_seed{}", cfg.mechanism, cfg.gen.lambda_orders, cfg.gen.seed)
}

fn write_report(dir: &Path, stem: &str, report: &RunReport) -> Outcome {
    write(&dir.join(format!("{stem}.json")), &report.to_json())?;
    write(&dir.join(format!("{stem}_periods.csv")), &periods_csv(report))?;
    write(&dir.join(format!("{stem}_aggregate.csv")), &aggregate_csv(report))?;
    for r in &report.replications {
        write(
            &dir.join(format!("{stem}_rep{}.json", r.replication)),
            &serde_json::to_string_pretty(r).expect("replication serializes"),
        )?;
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    for row in report.aggregate.iter().filter(|a| {
        matches!(a.metric.as_str(), "impact_of_stability" | "matched_orders") || a.metric.starts_with("anarchy_")
    }) {
        let ci = if row.degenerate {
            "n/a".to_string()
        } else {
            format!("{:.4}", row.ci_half_width)
        };
        println!("{:<10} {:<32} {:.4} ({ci})", row.mechanism.name(), row.metric, row.mean);
    }
}

fn cmd_simulate(config: &Path, args: &RunArgs) -> Outcome {
    let cfg = sim_config(config, args)?;
    prepare_out_dir(&args.out, args.force)?;
    let report = run(&cfg)?;
    write(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;
    write_report(&args.out, &stem(&cfg), &report)?;
    print_summary(&report);
    Ok(())
}

fn cmd_sweep(config: &Path, lambdas: &[f64], args: &RunArgs) -> Outcome {
    let cfg = sim_config(config, args)?;
    prepare_out_dir(&args.out, args.force)?;
    let reports = sweep(&cfg, lambdas)?;
    write(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;
    let mut summary = String::from("lambda,mechanism,metric,mean,ci_half_width\n");
    for (lambda, report) in &reports {
        let mut c = cfg.clone();
        c.gen.lambda_orders = *lambda;
        write_report(&args.out, &stem(&c), report)?;
        for a in report.aggregate.iter().filter(|a| {
            matches!(
                a.metric.as_str(),
                "impact_of_stability" | "avg_order_rank" | "avg_supplier_rank"
            )
        }) {
            summary.push_str(&format!(
                "{lambda},{},{},{},{}\n",
                a.mechanism, a.metric, a.mean, a.ci_half_width
            ));
        }
    }
    write(&args.out.join("sweep.csv"), &summary)?;
    let trends = sweep_trends(&reports, cfg.mechanism);
    write(
        &args.out.join("trends.json"),
        &serde_json::to_string_pretty(&trends).expect("trends serialize"),
    )?;
    println!(
        "{}: supplier rank decreasing={} order rank increasing={} impact weakly decreasing={}",
        cfg.mechanism, trends.supplier_rank_decreasing, trends.order_rank_increasing, trends.impact_weakly_decreasing
    );
    Ok(())
}

fn cmd_anarchy(config: &Path, access: Option<&str>, args: &RunArgs) -> Outcome {
    let mut cfg = sim_config(config, args)?;
    let section = cfg.anarchy.get_or_insert_with(AnarchyConfig::default);
    if let Some(a) = access {
        section.access = a.parse::<Access>()?;
    }
    if let Some(p) = args.periods {
        section.n_periods = p;
    }
    prepare_out_dir(&args.out, args.force)?;
    let report = run_anarchy(&cfg)?;
    write(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;
    let access = match cfg.anarchy.as_ref().map(|a| a.access) {
        Some(Access::Restricted) => "restricted",
        _ => "complete",
    };
    write_report(
        &args.out,
        &format!("anarchy_{access}_lambda{}_seed{}", cfg.gen.lambda_orders, cfg.gen.seed),
        &report,
    )?;
    print_summary(&report);
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Gen {
            config,
            out,
            seed,
            lambda,
            period,
        } => cmd_gen(config.as_deref(), &out, seed, lambda, period),
        Command::Match {
            instance,
            mechanism,
            out,
        } => cmd_match(&instance, &mechanism, &out),
        Command::Audit {
            instance,
            matching,
            posterior,
            switching_cost,
            out,
            force,
        } => cmd_audit(&instance, &matching, posterior.as_deref(), &switching_cost, &out, force),
        Command::Simulate { config, run } => cmd_simulate(&config, &run),
        Command::Sweep { config, lambdas, run } => cmd_sweep(&config, &lambdas, &run),
        Command::Anarchy { config, access, run } => cmd_anarchy(&config, access.as_deref(), &run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Resource(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
