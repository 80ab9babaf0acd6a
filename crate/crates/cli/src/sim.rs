//! `wavedag sim`: simulation runs and commit-rate estimates as CSV.

use std::io::Write;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use wavedag_core::{ValidatorId, WaveConfig};
use wavedag_sim::checks::{
    check_common_core, check_no_equivocation, check_prefix_consistency, check_single_certificate,
};
use wavedag_sim::estimate::{estimate_direct_commit_rate, EstimateConfig};
use wavedag_sim::{Adversarial, FaultPlan, Scheduler, SimConfig};

use crate::{SchedulerKind, SimArgs};

#[derive(Serialize)]
struct Row {
    seed: u64,
    n: usize,
    f: usize,
    wave_len: u64,
    leaders: usize,
    scheduler: String,
    faults: usize,
    rounds: u64,
    txs_committed: usize,
    mean_latency_hops: String,
    p50_latency_hops: u64,
    p99_latency_hops: u64,
    direct_commits: usize,
    indirect_commits: usize,
    skips: usize,
    commit_rate: String,
    safety_ok: bool,
}

#[derive(Serialize)]
struct EstimateRow {
    f: usize,
    leaders: usize,
    wave_len: u64,
    crashed: usize,
    waves: u64,
    hits: u64,
    rate: String,
    wilson_low: String,
    wilson_high: String,
    bound: String,
    meets_bound: bool,
}

/// Fixed precision keeps the CSV byte-identical everywhere.
fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn scheduler(kind: SchedulerKind) -> Scheduler {
    match kind {
        SchedulerKind::Sync => Scheduler::sync(),
        SchedulerKind::Random => Scheduler::RandomModel,
        SchedulerKind::Adversarial => Scheduler::Adversarial(Adversarial::default()),
    }
}

/// Equivocators are the lowest ids, crashed validators the highest.
fn fault_plan(args: &SimArgs) -> FaultPlan {
    let mut plan =
        FaultPlan::crashed_at_start((args.n - args.faults..args.n).map(ValidatorId::from));
    plan.equivocators = (0..args.byzantine).map(ValidatorId::from).collect();
    plan.variants = 2;
    plan
}

fn run_seed(args: &SimArgs, wave: WaveConfig, seed: u64) -> Result<(Row, Vec<String>)> {
    let mut config = SimConfig::new(args.n, wave, scheduler(args.scheduler), args.rounds, seed);
    config.load = args.load;
    config.faults = fault_plan(args);
    config.keep_union = true;
    let report = wavedag_sim::run(config)?;
    let union = report.union.as_ref().expect("union requested");
    let violations: Vec<String> = [
        check_prefix_consistency(&report),
        check_no_equivocation(&report),
        check_single_certificate(union, &wave),
        check_common_core(union),
    ]
    .into_iter()
    .filter_map(|r| r.err().map(|v| format!("seed {seed}: {v}")))
    .collect();
    let m = report.metrics();
    let row = Row {
        seed,
        n: args.n,
        f: (args.n - 1) / 3,
        wave_len: args.wave,
        leaders: args.leaders,
        scheduler: report.params.scheduler.clone(),
        faults: args.faults + args.byzantine,
        rounds: args.rounds,
        txs_committed: m.txs_committed,
        mean_latency_hops: fixed(m.mean_latency_hops),
        p50_latency_hops: m.p50_latency_hops,
        p99_latency_hops: m.p99_latency_hops,
        direct_commits: m.direct_commits,
        indirect_commits: m.indirect_commits,
        skips: m.skips,
        commit_rate: fixed(m.commit_rate),
        safety_ok: violations.is_empty(),
    };
    Ok((row, violations))
}

fn output(args: &SimArgs) -> Result<Box<dyn Write>> {
    Ok(match &args.out {
        Some(path) => Box::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Returns whether every run was safe.
pub fn run(args: &SimArgs) -> Result<bool> {
    let f = (args.n.max(1) - 1) / 3;
    if args.faults + args.byzantine > f {
        bail!(
            "{} crashed plus {} byzantine validators exceed f = {f}",
            args.faults,
            args.byzantine
        );
    }
    let wave = WaveConfig::new(args.wave, args.leaders, args.n)?;
    if args.estimate_commit_rate {
        return estimate(args, f);
    }
    // Seeds run in parallel; rows come out in seed order.
    let results: Vec<_> = (args.seed..args.seed + args.seeds)
        .into_par_iter()
        .map(|seed| run_seed(args, wave, seed))
        .collect::<Result<_>>()?;
    let mut writer = csv::Writer::from_writer(output(args)?);
    let mut violations = Vec::new();
    for (row, v) in results {
        writer.serialize(row)?;
        violations.extend(v);
    }
    writer.flush()?;
    if violations.is_empty() {
        eprintln!("safety: OK");
        Ok(true)
    } else {
        for v in &violations {
            eprintln!("safety: VIOLATED: {v}");
        }
        Ok(false)
    }
}

fn estimate(args: &SimArgs, f: usize) -> Result<bool> {
    if args.scheduler != SchedulerKind::Random {
        bail!("--estimate-commit-rate samples the random network model; pass --scheduler random");
    }
    if args.n != 3 * f + 1 {
        bail!("--estimate-commit-rate needs n = 3f + 1");
    }
    if args.byzantine > 0 {
        bail!("--estimate-commit-rate supports crash faults only");
    }
    let mut config = EstimateConfig::new(
        f,
        args.leaders,
        args.wave,
        args.waves.unwrap_or(10_000),
        args.seed,
    );
    config.crashed = args.faults;
    let e = estimate_direct_commit_rate(&config)?;
    let mut writer = csv::Writer::from_writer(output(args)?);
    writer.serialize(EstimateRow {
        f: e.f,
        leaders: e.leaders,
        wave_len: e.wave_length,
        crashed: e.crashed,
        waves: e.waves,
        hits: e.hits,
        rate: fixed(e.rate),
        wilson_low: fixed(e.low),
        wilson_high: fixed(e.high),
        bound: fixed(e.bound),
        meets_bound: e.meets_bound(),
    })?;
    writer.flush()?;
    Ok(true)
}
