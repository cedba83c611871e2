use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slsp::engine::NodeConfig;
use slsp::scenario::{run_scenario, ExitStatus, RunOptions, Scenario};
use slsp::sim::{Graph, MobilityModel, SimWorld, WorldConfig};
use slsp::time::{SimDuration, SimTime};

/// Mean benign recall over the last five seconds of a 20-node run with
/// random link flips at 0.1 per second. Keys are rebroadcast at least every
/// two LSU periods so that nodes entering a zone are validated promptly.
fn churn_tail_recall(seed: u64) -> (f64, u64) {
    let g = Graph::random_connected(20, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut w = SimWorld::new(
        g,
        vec![
            NodeConfig {
                max_key_interval: SimDuration::from_secs(10),
                ..NodeConfig::default()
            };
            20
        ],
        WorldConfig {
            seed,
            mobility: MobilityModel::RandomEdgeChurn { rate: 0.1 },
            keep_samples: true,
            ..WorldConfig::default()
        },
    )
    .unwrap();
    let end = 120.0;
    w.run_until(SimTime::from_secs_f64(end));
    let tail: Vec<f64> = w
        .samples()
        .iter()
        .filter(|s| s.role == "benign" && s.t > end - 5.0)
        .map(|s| s.recall)
        .collect();
    assert!(!tail.is_empty());
    let flips = w.summary().churn_flips;
    (tail.iter().sum::<f64>() / tail.len() as f64, flips)
}

#[test]
fn churn_liveness() {
    for seed in 0..8 {
        let (recall, flips) = churn_tail_recall(seed);
        assert!(flips > 0, "seed {seed}: no churn happened");
        assert!(recall >= 0.9, "seed {seed}: tail recall {recall:.3}");
    }
}

/// LSUs from benign originators accepted by benign nodes, with and without
/// a 100 pkt/s flooder.
#[test]
fn flooder_costs_benign_delivery_at_most_ten_percent() {
    let sc = Scenario::from_bundled("flooder").unwrap();
    let opts = RunOptions {
        record_acceptors: true,
        ..RunOptions::default()
    };
    let flooder = sc.adversaries[0].0;
    let count = |sc: &Scenario| {
        let r = run_scenario(sc, &opts).unwrap();
        let w = &r.world;
        let mut n = 0usize;
        for (key, &(origin, at)) in w.originations() {
            if origin == flooder || at < SimTime::from_secs_f64(15.0) || at > SimTime::from_secs_f64(55.0) {
                continue;
            }
            n += w.acceptors().get(key).map_or(0, |m| m.keys().filter(|&&a| a != flooder).count());
        }
        n
    };
    let with = count(&sc) as f64;
    let without = count(&sc.without_adversaries()) as f64;
    assert!(without > 0.0);
    let loss = 1.0 - with / without;
    assert!(loss <= 0.10, "benign delivery fell by {:.1}% ({with} vs {without})", loss * 100.0);
}

#[test]
fn catalog_contained_across_seeds() {
    let sc = Scenario::from_bundled("adversary_catalog").unwrap();
    for seed in 0..4 {
        let r = run_scenario(
            &sc,
            &RunOptions {
                seed: Some(seed),
                check: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.summary.fabricated_links_with_benign_endpoint, 0, "seed {seed}");
        assert!(r.violations.is_empty(), "seed {seed}: {:?}", r.violations);
        assert_eq!(r.status, ExitStatus::Ok, "seed {seed}: {:?}", r.failures);
    }
}

#[test]
fn seeds_change_outcomes() {
    let sc = Scenario::from_bundled("churn").unwrap();
    let a = run_scenario(&sc, &RunOptions { seed: Some(1), ..RunOptions::default() }).unwrap().metrics_jsonl();
    let b = run_scenario(&sc, &RunOptions { seed: Some(2), ..RunOptions::default() }).unwrap().metrics_jsonl();
    assert_ne!(a, b);
}

#[test]
fn duration_override_shortens_run() {
    let sc = Scenario::from_bundled("two_node_basic").unwrap();
    let r = run_scenario(
        &sc,
        &RunOptions {
            duration: Some(SimDuration::from_secs(3)),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(r.world.now(), SimTime::from_secs_f64(3.0));
    assert_eq!(r.summary.duration_s, 3.0);
}


#[test]
fn benign_network_reaches_full_recall() {
    for seed in 0..3 {
        let g = Graph::random_connected(20, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut w = SimWorld::new(g, vec![NodeConfig::default(); 20], WorldConfig { seed, ..WorldConfig::default() }).unwrap();
        w.run_until(SimTime::from_secs_f64(30.0));
        for id in 0..20 {
            let a = w.topology_accuracy(id);
            assert_eq!((a.precision, a.recall), (1.0, 1.0), "seed {seed} node {id}: {a:?}");
        }
    }
}
