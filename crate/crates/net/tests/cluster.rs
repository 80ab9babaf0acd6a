//! Local TCP clusters on loopback.

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::time::{sleep, timeout, Instant};
use wavedag_core::{AdvancePolicy, BlockRef, Transaction, ValidatorId, WaveConfig};
use wavedag_net::{spawn_node, ClusterConfig, NodeHandle};
use wavedag_sim::{run, Scheduler, SimConfig};

struct Cluster {
    config: ClusterConfig,
    nodes: Vec<Option<NodeHandle>>,
    /// Everything each node handed out, across restarts.
    committed: Vec<Vec<BlockRef>>,
}

impl Cluster {
    async fn start(n: usize, seed: u64, wave: WaveConfig, wal_dir: Option<&Path>) -> Self {
        let mut listeners = Vec::new();
        for _ in 0..n {
            listeners.push(TcpListener::bind("127.0.0.1:0").await.unwrap());
        }
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let config = ClusterConfig::local(seed, wave, &addrs);
        let mut cluster = Self {
            config,
            nodes: (0..n).map(|_| None).collect(),
            committed: vec![Vec::new(); n],
        };
        for (i, listener) in listeners.into_iter().enumerate() {
            cluster.spawn(i, listener, wal_dir, |_| {});
        }
        cluster
    }

    fn spawn(
        &mut self,
        i: usize,
        listener: TcpListener,
        wal_dir: Option<&Path>,
        tweak: impl FnOnce(&mut wavedag_net::NodeConfig),
    ) {
        let mut config = self.config.node_config(ValidatorId(i as u16)).unwrap();
        config.wal = wal_dir.map(|d| d.join(format!("node-{i}.wal")));
        tweak(&mut config);
        let mut node = spawn_node(config, listener).unwrap();
        // A restarted node first re-delivers what it handed out before.
        let before = &mut self.committed[i];
        assert_eq!(node.replayed, before.len() as u64);
        for expected in before.iter() {
            let block = node.committed.try_recv().expect("replayed block");
            assert_eq!(block.reference(), *expected);
        }
        self.nodes[i] = Some(node);
    }

    fn drain(&mut self) {
        for (node, seq) in self.nodes.iter_mut().zip(&mut self.committed) {
            if let Some(node) = node {
                while let Ok(block) = node.committed.try_recv() {
                    seq.push(block.reference());
                }
            }
        }
    }

    /// Polls until every listed node has handed out at least `count` blocks.
    async fn wait_for(&mut self, nodes: &[usize], count: usize) {
        let deadline = Instant::now() + Duration::from_secs(60);
        loop {
            self.drain();
            if nodes.iter().all(|&i| self.committed[i].len() >= count) {
                return;
            }
            for &i in nodes {
                let task = &self.nodes[i].as_ref().unwrap().task;
                assert!(!task.is_finished(), "node {i} stopped");
            }
            assert!(
                Instant::now() < deadline,
                "timed out at {:?}",
                self.committed.iter().map(Vec::len).collect::<Vec<_>>()
            );
            sleep(Duration::from_millis(20)).await;
        }
    }

    async fn kill(&mut self, i: usize) {
        let mut node = self.nodes[i].take().unwrap();
        node.kill();
        let _ = (&mut node.task).await;
        while let Ok(block) = node.committed.try_recv() {
            self.committed[i].push(block.reference());
        }
    }

    fn assert_prefix_consistent(&self) {
        for a in &self.committed {
            for b in &self.committed {
                let k = a.len().min(b.len());
                assert_eq!(a[..k], b[..k]);
            }
        }
    }
}

#[tokio::test]
async fn four_nodes_commit_identical_prefixes() {
    let mut c = Cluster::start(4, 11, WaveConfig::new(5, 2, 4).unwrap(), None).await;
    for (i, node) in c.nodes.iter().enumerate() {
        let node = node.as_ref().unwrap();
        for k in 0..50u32 {
            let tx = Transaction::new(format!("{i}/{k}").into_bytes());
            node.submit.send(tx).await.unwrap();
        }
    }
    c.wait_for(&[0, 1, 2, 3], 200).await;
    c.assert_prefix_consistent();
}

#[tokio::test]
async fn survivors_continue_and_restarted_node_catches_up() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Cluster::start(4, 12, WaveConfig::new(4, 1, 4).unwrap(), Some(dir.path())).await;
    c.wait_for(&[0, 1, 2, 3], 60).await;

    c.kill(3).await;
    let at_kill = c.committed[..3].iter().map(Vec::len).max().unwrap();
    c.wait_for(&[0, 1, 2], at_kill + 100).await;
    c.assert_prefix_consistent();

    let addr = c.config.address(ValidatorId(3)).unwrap();
    let listener = timeout(Duration::from_secs(10), async {
        loop {
            match TcpListener::bind(addr).await {
                Ok(l) => return l,
                Err(_) => sleep(Duration::from_millis(50)).await,
            }
        }
    })
    .await
    .expect("address released");
    c.spawn(3, listener, Some(dir.path()), |_| {});
    let target = c.committed[..3].iter().map(Vec::len).max().unwrap() + 40;
    c.wait_for(&[0, 1, 2, 3], target).await;
    c.assert_prefix_consistent();
}

/// With every node waiting for all n blocks of a round, the DAG is the full
/// one no matter how the network interleaves, so TCP and the simulator agree
/// block for block.
#[tokio::test]
async fn empty_blocks_match_the_synchronous_simulation() {
    let seed = 13;
    let wave = WaveConfig::new(5, 2, 4).unwrap();
    let mut sim = SimConfig::new(4, wave, Scheduler::Synchronous { hop: 1 }, 60, seed);
    sim.load = 0;
    sim.advance = AdvancePolicy::WaitForAll;
    sim.advance_timeout = 1_000_000;
    let expected = run(sim).unwrap().validators[0].commit_sequence.clone();
    assert!(expected.len() > 100);

    let mut listeners = Vec::new();
    for _ in 0..4 {
        listeners.push(TcpListener::bind("127.0.0.1:0").await.unwrap());
    }
    let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
    let mut c = Cluster {
        config: ClusterConfig::local(seed, wave, &addrs),
        nodes: (0..4).map(|_| None).collect(),
        committed: vec![Vec::new(); 4],
    };
    for (i, listener) in listeners.into_iter().enumerate() {
        c.spawn(i, listener, None, |config| {
            config.validator.advance = AdvancePolicy::WaitForAll;
            config.advance_timeout = Duration::from_secs(3600);
        });
    }
    c.wait_for(&[0, 1, 2, 3], expected.len()).await;
    for seq in &c.committed {
        assert_eq!(seq[..expected.len()], expected[..]);
    }
}
