use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;

use cace_core::catalog::{build_default_catalog, ModelCatalog, ProfileParams};
use cace_core::engine::{run as simulate, ClusterConfig, EngineConfig, SimulationReport};
use cace_core::experiment::{
    ablation_config, compare_grid, CellRun, ExperimentConfig, DEFAULT_RATE_PER_S, DEFAULT_WINDOWS,
};
use cace_core::metrics::{compute_run_metrics, emit_report, emit_table, ComparisonTable, OutputFormat};
use cace_core::policy::{make_policy, PolicyConfig, Variant, DEFAULT_W1, DEFAULT_WINDOW_LENGTH};
use cace_core::workload::{
    build_trace, parse_trace, serialize_trace, PatternName, Trace, WorkloadPattern, DEFAULT_WINDOW_S,
};

use crate::config::FileConfig;
use crate::{Cli, Command, Failure, GridArgs, PolicyArgs};

const DEFAULT_OUT: &str = "cace-out";

struct Context {
    file: FileConfig,
    catalog: ModelCatalog,
    out: PathBuf,
    format: OutputFormat,
    seeds: Option<Vec<u64>>,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    let catalog = match cli.global.catalog.as_ref().or(file.catalog.as_ref()) {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading catalog {}", path.display()))?;
            ModelCatalog::load(&bytes).with_context(|| format!("malformed catalog {}", path.display()))?
        }
        None => build_default_catalog(&ProfileParams::default())?,
    };
    let ctx = Context {
        catalog,
        out: cli
            .global
            .out
            .or(file.out.clone())
            .unwrap_or_else(|| DEFAULT_OUT.into()),
        format: cli.global.format.or(file.format).unwrap_or_default(),
        seeds: cli.global.seeds.or(file.seeds.clone()),
        file,
    };
    if ctx.seeds.as_ref().is_some_and(Vec::is_empty) {
        return Err(usage("--seeds needs at least one seed"));
    }

    match cli.command {
        Command::Catalog => {
            print!("{}", String::from_utf8_lossy(&ctx.catalog.save()));
            Ok(())
        }
        Command::Generate {
            pattern,
            rate,
            duration,
            windows,
            seed,
            output,
        } => generate(&ctx, pattern, rate, duration, windows, seed, output),
        Command::Simulate {
            trace,
            policy,
            knobs,
            accelerators,
            unload_time,
            output,
        } => {
            let grid = GridArgs {
                accelerators,
                unload_time,
                ..GridArgs::default()
            };
            simulate_one(&ctx, &trace, policy, &knobs, &grid, output)
        }
        Command::Compare {
            patterns,
            policies,
            baseline,
            grid,
            knobs,
        } => {
            let mut cfg = experiment(&ctx, &grid, &knobs)?;
            if let Some(p) = patterns.or(ctx.file.patterns.clone()) {
                cfg.patterns = p;
            }
            if let Some(v) = policies.or(ctx.file.policies.clone()) {
                cfg.variants = v;
            }
            let baseline = baseline.or(ctx.file.baseline).unwrap_or(Variant::Lru);
            grid_run(&ctx, &cfg, baseline)
        }
        Command::Ablate { pattern, grid, knobs } => {
            let base = experiment(&ctx, &grid, &knobs)?;
            let pattern = pattern.or(ctx.file.pattern).unwrap_or(PatternName::PopularitySkewed);
            grid_run(&ctx, &ablation_config(&base, pattern), Variant::CaceFull)
        }
    }
}

fn policy_config(ctx: &Context, variant: Variant, knobs: &PolicyArgs) -> PolicyConfig {
    PolicyConfig {
        variant,
        w1: knobs.w1.or(ctx.file.w1).unwrap_or(DEFAULT_W1),
        window_length: knobs
            .window
            .map(|w| w as usize)
            .or(ctx.file.window)
            .unwrap_or(DEFAULT_WINDOW_LENGTH),
        output_token_normalizer: None,
        p1_mode: knobs.p1_mode.or(ctx.file.p1_mode).unwrap_or_default(),
    }
}

fn cluster(ctx: &Context, grid: &GridArgs) -> ClusterConfig {
    let mut cluster = ClusterConfig::default();
    if let Some(n) = grid.accelerators.map(|n| n as usize).or(ctx.file.accelerators) {
        cluster.num_accelerators = n;
    }
    if let Some(t) = grid.unload_time.or(ctx.file.unload_time) {
        cluster.unload_time_s = t;
    }
    cluster
}

fn experiment(ctx: &Context, grid: &GridArgs, knobs: &PolicyArgs) -> Result<ExperimentConfig, Failure> {
    let policy = policy_config(ctx, Variant::CaceFull, knobs);
    let mut cfg = ExperimentConfig {
        rate: grid.rate.or(ctx.file.rate).unwrap_or(DEFAULT_RATE_PER_S),
        duration: grid.duration.or(ctx.file.duration).unwrap_or(DEFAULT_WINDOW_S),
        windows: grid.windows.or(ctx.file.windows).unwrap_or(DEFAULT_WINDOWS),
        cluster: cluster(ctx, grid),
        w1: policy.w1,
        window_length: policy.window_length,
        p1_mode: policy.p1_mode,
        tokens: ctx.file.tokens.unwrap_or_default(),
        ..ExperimentConfig::default()
    };
    if let Some(seeds) = &ctx.seeds {
        cfg.seeds = seeds.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn generate(
    ctx: &Context,
    pattern: Option<PatternName>,
    rate: Option<f64>,
    duration: Option<f64>,
    windows: Option<u32>,
    seed: Option<u64>,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let pattern = pattern.or(ctx.file.pattern).unwrap_or(PatternName::Uniform);
    let rate = rate.or(ctx.file.rate).unwrap_or(DEFAULT_RATE_PER_S);
    let duration = duration.or(ctx.file.duration).unwrap_or(DEFAULT_WINDOW_S);
    let windows = windows.or(ctx.file.windows).unwrap_or(1);
    let seeds = match seed {
        Some(s) => vec![s],
        None => ctx.seeds.clone().unwrap_or_else(|| vec![1]),
    };
    if !(rate.is_finite() && rate > 0.0) {
        return Err(usage(format!("rate must be positive, got {rate}")));
    }
    if !(duration.is_finite() && duration >= 0.0) || windows == 0 {
        return Err(usage("duration must be non-negative and windows at least 1"));
    }
    if output.is_some() && seeds.len() > 1 {
        return Err(usage("--output takes a single seed; use --out with several seeds"));
    }
    let tokens = ctx.file.tokens.unwrap_or_default();
    for &seed in &seeds {
        let trace = build_trace(
            &WorkloadPattern::preset(pattern),
            rate,
            duration,
            windows,
            seed,
            &ctx.catalog,
            &tokens,
        )?;
        let path = output
            .clone()
            .unwrap_or_else(|| ctx.out.join(format!("trace-{pattern}-seed{seed}.jsonl")));
        write(&path, &serialize_trace(&trace))?;
        println!("{}: {}", path.display(), census(&trace));
    }
    Ok(())
}

fn census(trace: &Trace) -> String {
    let mut tasks: BTreeMap<&str, usize> = BTreeMap::new();
    let mut langs: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &trace.requests {
        *tasks.entry(r.task_class.as_str()).or_default() += 1;
        *langs.entry(r.language.as_str()).or_default() += 1;
    }
    let join = |m: &BTreeMap<&str, usize>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    format!("{} requests; {}; {}", trace.requests.len(), join(&tasks), join(&langs))
}

fn summary_line(report: &SimulationReport) -> anyhow::Result<String> {
    let m = compute_run_metrics(report)?;
    let mean = |s: Option<&cace_core::LatencySummary>| s.map_or("-".to_string(), |s| format!("{:.3}", s.mean_s));
    Ok(format!(
        "policy={} requests={} hit_rate={:.4} load_overhead_s={:.2} evictions={} ttft_mean_s={} e2e_mean_s={}",
        report.run_meta.policy,
        m.total_requests,
        m.cache_hit_rate,
        m.load_overhead_s,
        report.counters.evictions,
        mean(m.ttft_completion.as_ref()),
        mean(m.e2e_reasoning.as_ref()),
    ))
}

fn simulate_one(
    ctx: &Context,
    trace_path: &Path,
    policy: Option<Variant>,
    knobs: &PolicyArgs,
    grid: &GridArgs,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let variant = policy.or(ctx.file.policy).unwrap_or(Variant::CaceFull);
    let cfg = policy_config(ctx, variant, knobs);
    let cluster = cluster(ctx, grid);
    cluster.validate().map_err(|e| usage(e.to_string()))?;
    let policy = make_policy(cfg, &ctx.catalog).map_err(|e| usage(e.to_string()))?;

    let bytes = fs::read(trace_path).with_context(|| format!("reading trace {}", trace_path.display()))?;
    let trace = parse_trace(&bytes).with_context(|| format!("malformed trace {}", trace_path.display()))?;
    let report = simulate(
        &trace,
        &ctx.catalog,
        &cluster,
        &policy,
        &EngineConfig {
            window_length: cfg.window_length,
        },
    )?;
    let path = output.unwrap_or_else(|| {
        ctx.out.join(format!(
            "report-{}-{}-seed{}.{}",
            trace.pattern,
            variant,
            trace.seed,
            ctx.format.extension()
        ))
    });
    write(&path, &emit_report(&report, ctx.format)?)?;
    println!("{}", summary_line(&report)?);
    Ok(())
}

fn run_path(out: &Path, cell: &CellRun, format: OutputFormat) -> PathBuf {
    out.join("runs").join(format!(
        "{}-{}-seed{}.{}",
        cell.pattern,
        cell.variant,
        cell.seed,
        format.extension()
    ))
}

fn grid_run(ctx: &Context, cfg: &ExperimentConfig, baseline: Variant) -> Result<(), Failure> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if !cfg.variants.contains(&baseline) {
        return Err(usage(format!(
            "baseline `{baseline}` is not among the compared policies"
        )));
    }
    let (cells, table) = compare_grid(cfg, &ctx.catalog, baseline)?;
    for cell in &cells {
        write(
            &run_path(&ctx.out, cell, ctx.format),
            &emit_report(&cell.report, ctx.format)?,
        )?;
    }
    let path = ctx.out.join(format!("comparison.{}", ctx.format.extension()));
    write(&path, &emit_table(&table, ctx.format)?)?;
    print_table(&table);
    println!("wrote {} and {} run reports", path.display(), cells.len());
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{:+.1}%", x * 100.0))
}

fn print_table(table: &ComparisonTable) {
    println!(
        "{:<18} {:<8} {:>8} {:>10} {:>9} {:>10} {:>10} {:>8} {:>8}",
        "pattern", "policy", "hit", "load_s", "evictions", "ttft_mean", "e2e_mean", "d_load", "d_ttft"
    );
    for row in &table.rows {
        let m = &row.metrics;
        let mean = |s: Option<&cace_core::LatencySummary>| s.map_or("-".to_string(), |s| format!("{:.2}", s.mean_s));
        println!(
            "{:<18} {:<8} {:>8.4} {:>10.1} {:>9.1} {:>10} {:>10} {:>8} {:>8}",
            row.pattern,
            row.variant,
            m.cache_hit_rate,
            m.load_overhead_s,
            m.evictions,
            mean(m.ttft_completion.as_ref()),
            mean(m.e2e_reasoning.as_ref()),
            pct(row.deltas.load_overhead_reduction),
            pct(row.deltas.ttft_mean_reduction),
        );
    }
}
