//! `wavedag cluster` and `wavedag local-config`.

use std::net::SocketAddr;
use std::time::Duration;

use anyhow::{Context, Result};
use wavedag_core::{ValidatorId, WaveConfig};
use wavedag_net::{run_process, ClusterConfig, LoadConfig};

use crate::{ClusterArgs, LocalConfigArgs};

pub fn run(args: &ClusterArgs) -> Result<bool> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let config = ClusterConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let load = LoadConfig {
        rate: args.rate,
        tx_size: args.tx_size,
        resubmit_after: Duration::from_millis(args.resubmit_ms),
        run_for: Duration::from_secs(args.duration_secs),
        wal: args.wal.clone(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    let s = runtime.block_on(run_process(&config, ValidatorId(args.id), load))?;
    println!("validator: {}", s.id);
    println!("committed blocks: {}", s.committed_blocks);
    println!("committed transactions: {}", s.committed_txs);
    println!(
        "own transactions: {} submitted, {} committed, {} re-submissions",
        s.submitted, s.own_committed, s.resubmitted
    );
    println!(
        "latency ms: mean {:.1}, p50 {}, p99 {}",
        s.mean_latency_ms, s.p50_latency_ms, s.p99_latency_ms
    );
    for (count, hash) in &s.prefix_hashes {
        println!("prefix {count} {hash}");
    }
    Ok(true)
}

pub fn local_config(args: &LocalConfigArgs) -> Result<bool> {
    let wave = WaveConfig::new(args.wave, args.leaders, args.n)?;
    let addresses: Vec<SocketAddr> = (0..args.n)
        .map(|i| SocketAddr::from(([127, 0, 0, 1], args.base_port + i as u16)))
        .collect();
    let config = ClusterConfig::local(args.seed, wave, &addresses);
    config.committee()?;
    print!("{}", config.to_toml());
    Ok(true)
}
