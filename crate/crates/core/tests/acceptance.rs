//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slsp::crypto::{Authority, Digest, SignatureVerifier};
use slsp::engine::{Action, DiscardReason, Handling, Node, NodeConfig, NodeEvent};
use slsp::scenario::{run_scenario, RunOptions, Scenario, BUNDLED};
use slsp::sim::{ip_of, mac_of, AdversaryKind, Graph, HopMode, SimWorld, WorldConfig};
use slsp::time::SimTime;
use slsp::wire::{Frame, Packet};

use common::{chain_consistent, sha_iter, smallest_shortest_path, Adj};

type Outcome = Result<String, String>;

fn secs(s: f64) -> SimTime {
    SimTime::from_secs_f64(s)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str) -> slsp::scenario::RunReport {
    let sc = Scenario::from_bundled(name).unwrap();
    run_scenario(&sc, &RunOptions::default()).unwrap()
}

/// Acceptors of every LSU originated in `[10, 15)` s must equal the true
/// R-ball of the originator.
fn zone_confinement() -> Outcome {
    let started = Instant::now();
    let mut checked = 0usize;
    let mut originators = BTreeSet::new();
    for seed in 0..50u64 {
        let g = Graph::random_connected(30, 15, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for radius in 1..=3u8 {
            let cfg = NodeConfig {
                radius,
                ..NodeConfig::default()
            };
            let mut w = SimWorld::new(
                g.clone(),
                vec![cfg; 30],
                WorldConfig {
                    seed,
                    record_acceptors: true,
                    keep_samples: false,
                    ..WorldConfig::default()
                },
            )
            .unwrap();
            w.run_until(secs(16.0));
            let mut seen = BTreeSet::new();
            for (&(orig, seq), &(v, at)) in w.originations() {
                if at < secs(10.0) || at >= secs(15.0) {
                    continue;
                }
                let mut want = g.ball(v, u32::from(radius));
                want.remove(&v);
                let got: BTreeSet<usize> = w
                    .acceptors()
                    .get(&(orig, seq))
                    .map(|m| m.keys().copied().collect())
                    .unwrap_or_default();
                ensure(got == want, || {
                    format!("seed {seed} R={radius} node {v} seq {seq}: got {got:?}, want {want:?}")
                })?;
                checked += 1;
                seen.insert(v);
            }
            ensure(seen.len() == 30, || {
                format!("seed {seed} R={radius}: only {} nodes originated in the window", seen.len())
            })?;
            originators.insert((seed, radius));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ensure(elapsed < 60.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "{checked} LSUs over {} graph/radius pairs matched their true balls exactly ({elapsed:.1} s)",
        originators.len()
    ))
}

#[derive(Debug, Default)]
struct FuzzTally {
    total: usize,
    discarded_bad_chain: usize,
    unchanged_forward: usize,
    legitimate: usize,
    advanced: usize,
}

/// Mutated LSUs at a single benign receiver: acceptance must coincide with
/// chain consistency, and the only reach-extending class is unchanged-forward.
fn chain_gate_fuzz() -> Result<FuzzTally, String> {
    let auth = Authority::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut origins: Vec<Node> = (1..=5u8)
        .map(|r| {
            let id = usize::from(r);
            let cfg = NodeConfig {
                radius: r,
                ..NodeConfig::default()
            };
            Node::new(mac_of(id), auth.enroll(ip_of(id)), auth.verifier(), cfg).unwrap()
        })
        .collect();
    let rx_cfg = NodeConfig {
        radius: 5,
        ..NodeConfig::default()
    };
    let mut rx = Node::new(mac_of(0), auth.enroll(ip_of(0)), auth.verifier(), rx_cfg).unwrap();
    for o in &origins {
        rx.install_key(o.ip(), o.identity().keys.public);
    }
    let relay = 40usize;
    let other_chain = sha_iter([7; 32], 1);
    let mut t = FuzzTally::default();
    let now = secs(1.0);
    while t.total < 10_000 {
        let k = rng.gen_range(0..origins.len());
        let r = origins[k].config().radius;
        let p = origins[k].originate_lsu(now, false).unwrap();
        // x[j] = X_j, computed by the oracle from X_1.
        let x: Vec<[u8; 32]> = (0..=u32::from(r) + 3)
            .map(|j| if j == 0 { [0; 32] } else { sha_iter(p.hops_traversed.0, j - 1) })
            .collect();
        ensure(p.zone_radius.0 == x[usize::from(r)], || "anchor differs from oracle".into())?;
        // The adversary is the hop-i receiver: it holds ttl = r - i, hops = X_i.
        let i = rng.gen_range(1..=r);
        let held_ttl = i32::from(r - i);
        let mutate_ttl = rng.gen_bool(0.7);
        let mutate_hops = !mutate_ttl || rng.gen_bool(0.5);
        let ttl = if mutate_ttl {
            loop {
                let d = rng.gen_range(-4..=4);
                let v = held_ttl + d;
                if d != 0 && v >= 0 {
                    break v as u8;
                }
            }
        } else {
            held_ttl as u8
        };
        let (hops, class_j) = if mutate_hops {
            match rng.gen_range(0..5) {
                0 => (rng.gen::<[u8; 32]>(), None),
                1 => ([0; 32], None),
                2 => (other_chain, None),
                3 => (p.zone_radius.0, Some(u32::from(r))),
                _ => {
                    let j = rng.gen_range(u32::from(i)..=u32::from(r) + 3);
                    (x[j as usize], Some(j))
                }
            }
        } else {
            (x[usize::from(i)], Some(u32::from(i)))
        };
        let mut m = p.clone();
        m.ttl = ttl;
        m.hops_traversed = Digest(hops);
        let raw = Frame {
            src_mac: mac_of(relay),
            src_ip: ip_of(relay),
            packet: Packet::Lsu(m),
        }
        .to_raw()
        .unwrap();
        let h = rx.handle_now(&raw, now);
        rx.take_outbox();
        let accepted = matches!(h, Handling::Processed(Action::AcceptRelay | Action::AcceptOnly));
        let consistent = chain_consistent(r, ttl, hops, p.zone_radius.0);
        t.total += 1;
        ensure(accepted == consistent, || {
            format!("R={r} i={i} ttl={ttl}: accepted={accepted} oracle={consistent} ({h:?})")
        })?;
        if !accepted {
            ensure(h == Handling::Processed(Action::Discard(DiscardReason::BadChain)), || {
                format!("inconsistent mutant discarded as {h:?}")
            })?;
            t.discarded_bad_chain += 1;
            continue;
        }
        let legit_remaining = i32::from(r) - i32::from(i) - 1;
        let extension = i32::from(ttl) - legit_remaining;
        match class_j {
            Some(j) if j == u32::from(i) => {
                ensure(extension == 1, || format!("unchanged-forward extended by {extension}"))?;
                t.unchanged_forward += 1;
            }
            Some(j) if j == u32::from(i) + 1 => {
                ensure(extension == 0, || format!("legitimate form extended by {extension}"))?;
                t.legitimate += 1;
            }
            Some(_) => {
                ensure(extension < 0, || format!("advanced form extended by {extension}"))?;
                t.advanced += 1;
            }
            None => return Err("accepted a mutant with a substituted digest off the chain".into()),
        }
    }
    Ok(t)
}

/// Farthest node on a line accepting node 0's LSUs, with hop extenders at
/// the given positions.
fn line_reach(extenders: &[usize]) -> usize {
    let n = 12;
    let mut w = SimWorld::new(
        Graph::line(n).unwrap(),
        vec![NodeConfig::default(); n],
        WorldConfig {
            seed: 4,
            record_acceptors: true,
            keep_samples: false,
            ..WorldConfig::default()
        },
    )
    .unwrap();
    for &e in extenders {
        w.inject_adversary(
            e,
            AdversaryKind::HopExtender {
                mode: HopMode::UnchangedForward,
            },
        )
        .unwrap();
    }
    w.run_until(secs(30.0));
    w.originations()
        .iter()
        .filter(|(_, &(v, at))| v == 0 && at >= secs(10.0))
        .filter_map(|(k, _)| w.acceptors().get(k))
        .flat_map(|m| m.keys().copied())
        .max()
        .unwrap_or(0)
}

fn hash_chain_gate() -> Outcome {
    let t = chain_gate_fuzz()?;
    ensure(t.unchanged_forward > 0 && t.discarded_bad_chain > 0, || format!("degenerate fuzz: {t:?}"))?;
    let radius = 2;
    let mut reach = Vec::new();
    for ext in [&[][..], &[1], &[2], &[1, 2], &[1, 3], &[1, 2, 3]] {
        let got = line_reach(ext);
        ensure(got == radius + ext.len(), || {
            format!("extenders at {ext:?}: reach {got}, expected {}", radius + ext.len())
        })?;
        reach.push(format!("{ext:?}->{got}"));
    }
    Ok(format!(
        "{} mutants: {} discarded (bad chain), accepted {} unchanged-forward (+1), {} legitimate, {} advanced (shorter); line reach {}",
        t.total,
        t.discarded_bad_chain,
        t.unchanged_forward,
        t.legitimate,
        t.advanced,
        reach.join(" ")
    ))
}

fn two_sided_confirmation() -> Outcome {
    let forger = run("single_forger");
    let s = &forger.summary;
    ensure(s.fabricated_links_with_benign_endpoint == 0, || {
        format!("single_forger: {} fabricated links with a benign endpoint", s.fabricated_links_with_benign_endpoint)
    })?;
    ensure(s.benign_mean_recall > 0.9, || format!("single_forger recall {}", s.benign_mean_recall))?;
    let forged_sent = forger.world.tx_log(0).iter().filter(|r| r.tag == Some(0x02)).count();
    ensure(forged_sent > 0, || "forger sent nothing".into())?;

    let coll = run("colluder_pair");
    let c = &coll.summary;
    ensure(c.fabricated_adversarial_links > 0, || "colluders fabricated nothing".into())?;
    ensure(c.fabricated_links_with_benign_endpoint == 0, || {
        format!("colluder_pair: {} fabricated links touch a benign node", c.fabricated_links_with_benign_endpoint)
    })?;
    Ok(format!(
        "single_forger: 0 fabricated links with a benign endpoint over 100 s; colluder_pair: {} fabricated link(s), all between the colluders",
        c.fabricated_adversarial_links
    ))
}

fn nlp_detection() -> Outcome {
    let mut parts = Vec::new();
    for name in ["ip_changed", "duplicate_ip", "self_mac_spoof"] {
        let sc = Scenario::from_bundled(name).unwrap();
        let want = sc.expect.first_notification.clone().unwrap();
        let r = run_scenario(&sc, &RunOptions::default()).unwrap();
        let recs = r.world.notifications();
        let first = recs
            .iter()
            .find(|n| n.receiver == want.receiver)
            .ok_or_else(|| format!("{name}: node {} raised nothing", want.receiver))?;
        ensure(first.kind == want.kind, || format!("{name}: first was {:?}", first.kind))?;
        let audited: Vec<_> = recs.iter().filter(|n| n.before.is_some()).collect();
        ensure(!audited.is_empty(), || format!("{name}: no audited notification"))?;
        ensure(audited.iter().all(|n| n.before == n.after), || {
            format!("{name}: a notification changed LSDB/key store state")
        })?;
        parts.push(format!("{name}: {:?} at node {}, {} audited state hashes unchanged", first.kind, first.receiver, audited.len()));
    }
    Ok(parts.join("; "))
}

fn replay_immunity() -> Outcome {
    let sc = Scenario::from_bundled("replay").unwrap();
    let with = run_scenario(&sc, &RunOptions::default()).unwrap();
    let without = run_scenario(&sc.without_adversaries(), &RunOptions::default()).unwrap();
    let replayer = sc.adversaries[0].0;
    let extra = with.world.tx_log(replayer).len() as f64 / without.world.tx_log(replayer).len() as f64;
    ensure(extra > 2.0, || format!("replayer only sent {extra:.2}x the baseline"))?;
    for id in 0..with.world.len() {
        let a = serde_json::to_vec(&with.world.node(id).lsdb().snapshot()).unwrap();
        let b = serde_json::to_vec(&without.world.node(id).lsdb().snapshot()).unwrap();
        ensure(a == b, || format!("node {id}: LSDB snapshot differs from the replay-free run"))?;
    }
    Ok(format!(
        "{} nodes byte-identical to the replay-free run; replayer sent {extra:.1}x its baseline frames, {} duplicate discards",
        with.world.len(),
        with.summary.discards.get(&DiscardReason::Duplicate).copied().unwrap_or(0)
    ))
}

/// Three flooders at 100 pkt/s and three benign neighbors at 1 pkt/s feed
/// one receiver ticking every 100 ms.
fn scheduler_fairness() -> Outcome {
    let auth = Authority::new(6);
    let cfg = NodeConfig::default();
    let mk = |id: usize| Node::new(mac_of(id), auth.enroll(ip_of(id)), auth.verifier(), cfg.clone()).unwrap();
    let mut rx = mk(0);
    let flooders = [1usize, 2, 3];
    let benign = [4usize, 5, 6];
    let hello = |id: usize| {
        Frame {
            src_mac: mac_of(id),
            src_ip: ip_of(id),
            packet: Packet::Hello(mk(id).make_hello()),
        }
        .to_raw()
        .unwrap()
    };
    let frames: BTreeMap<usize, _> = flooders.iter().chain(&benign).map(|&i| (i, hello(i))).collect();
    let tick = cfg.tick;
    let stable = SimTime(cfg.rate_half_life.mul(3).0);
    let end = secs(60.0);
    let quanta = &cfg.sched.quanta;
    let mut now = SimTime::ZERO;
    let mut prev: BTreeMap<usize, u64> = BTreeMap::new();
    let mut benign_sent = 0u64;
    let mut flood_rounds = 0u64;
    while now < end {
        for &f in &flooders {
            for _ in 0..10 {
                rx.deliver_frame(&frames[&f], now);
            }
        }
        if now.0.is_multiple_of(1_000_000) {
            for &b in &benign {
                rx.deliver_frame(&frames[&b], now);
                if now >= stable {
                    benign_sent += 1;
                }
            }
        }
        now += tick;
        rx.timer_tick(now);
        let served = |id: usize| rx.scheduler().counters().served.get(&mac_of(id)).copied().unwrap_or(0);
        if now > stable {
            for &b in &benign {
                let q = rx.scheduler().queue(mac_of(b)).map_or(0, |q| q.len());
                ensure(q == 0, || format!("t={now}: benign neighbor {b} left {q} packets queued"))?;
            }
            let fc = rx.scheduler().config().class_for(rx.nlp().rate_of(mac_of(1), now));
            let bc = rx.scheduler().config().class_for(rx.nlp().rate_of(mac_of(4), now));
            ensure(quanta[fc] * 8 <= quanta[bc], || {
                format!("t={now}: flooder class {fc} quantum {} vs benign class {bc} quantum {}", quanta[fc], quanta[bc])
            })?;
            for &f in &flooders {
                let d = served(f) - prev.get(&f).copied().unwrap_or(0);
                ensure(d as usize <= quanta[fc], || format!("t={now}: flooder {f} served {d} in one round"))?;
            }
            let counts: Vec<u64> = flooders.iter().map(|&f| served(f)).collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            ensure(spread <= 1, || format!("t={now}: within-class spread {spread} ({counts:?})"))?;
            flood_rounds += 1;
        }
        for &i in flooders.iter().chain(&benign) {
            prev.insert(i, served(i));
        }
    }
    let c = rx.scheduler().counters();
    for &b in &benign {
        let starved = c.dropped_starved.get(&mac_of(b)).copied().unwrap_or(0);
        let full = c.dropped_full.get(&mac_of(b)).copied().unwrap_or(0);
        ensure(starved + full == 0, || format!("benign neighbor {b} lost {} packets", starved + full))?;
    }
    Ok(format!(
        "after {:.0} s: {benign_sent} benign packets all served within one tick, flooders served <= 1 per round ({} rounds) against benign quantum {}, spread <= 1",
        stable.as_secs_f64(),
        flood_rounds,
        quanta[0]
    ))
}

fn rekey_protocol() -> Outcome {
    let n = 12;
    let g = Graph::random_connected(n, 6, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let cfg = NodeConfig::default();
    let lost = cfg.lost_neighbor;
    let mut w = SimWorld::new(
        g,
        vec![cfg; n],
        WorldConfig {
            seed: 7,
            keep_samples: false,
            ..WorldConfig::default()
        },
    )
    .unwrap();
    let v = 0;
    w.run_until(secs(30.0));
    let old = w.node(v).identity().keys.public;
    let holders_before = w.benign_ids().iter().filter(|&&u| u != v && w.node(u).key_store().contains_key(&old)).count();
    ensure(holders_before > 0, || "nobody learned the original key".into())?;
    w.node_mut(v).force_next_seq(u32::MAX - 1);
    w.run_until(secs(150.0));

    let log = w.rekey_log();
    let started = log
        .iter()
        .find(|(_, id, e)| *id == v && matches!(e, NodeEvent::RekeyStarted))
        .map(|(t, _, _)| *t)
        .ok_or("no rekey started")?;
    let (resumed, new_key) = log
        .iter()
        .find_map(|(t, id, e)| match e {
            NodeEvent::RekeyCompleted { key } if *id == v => Some((*t, *key)),
            _ => None,
        })
        .ok_or("no rekey completed")?;
    ensure(resumed - started == lost, || {
        format!("silence lasted {} s, lost_neighbor is {} s", (resumed - started).as_secs_f64(), lost.as_secs_f64())
    })?;
    let tx = w.tx_log(v);
    let during = tx.iter().filter(|r| r.at >= started && r.at < resumed).count();
    ensure(during == 0, || format!("{during} frames sent while silent"))?;
    let first_after = tx.iter().find(|r| r.at >= resumed).map(|r| r.at);
    ensure(first_after == Some(resumed), || format!("first frame after silence at {first_after:?}"))?;

    let new = w.node(v).identity().keys.public;
    ensure(new.key_id == new_key && new.key_id > old.key_id, || "identity did not move to a fresh key".into())?;
    let verifier = w.authority().verifier();
    ensure(verifier.verify_certificate(&w.node(v).identity().certificate), || "new certificate does not verify".into())?;
    let msg = b"probe";
    ensure(
        verifier.verify(&new, msg, &slsp::crypto::sign(&w.node(v).identity().keys.private, msg)),
        || "new key does not verify".into(),
    )?;
    let mut holders_new = 0;
    for u in w.benign_ids() {
        if u == v {
            continue;
        }
        let ks = w.node(u).key_store();
        ensure(!ks.contains_key(&old), || format!("node {u} still stores the old key"))?;
        if ks.contains_key(&new) {
            holders_new += 1;
        }
    }
    ensure(holders_new >= holders_before, || {
        format!("{holders_new} nodes hold the new key, {holders_before} held the old one")
    })?;
    Ok(format!(
        "silent {:.0} s exactly (t={} to t={}), zero frames, new key id {} held by {holders_new} nodes, old key id {} held by none",
        lost.as_secs_f64(),
        started,
        resumed,
        new.key_id.0,
        old.key_id.0
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut queries = 0usize;
    let mut found = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..4u64 {
        let n = 50;
        let g = Graph::random_connected(n, 35, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
        let cfg = NodeConfig {
            radius: 3,
            ..NodeConfig::default()
        };
        let mut w = SimWorld::new(g, vec![cfg; n], WorldConfig { seed, keep_samples: false, ..WorldConfig::default() }).unwrap();
        w.run_until(secs(40.0));
        for _ in 0..250 {
            let s = rng.gen_range(0..n);
            let d = rng.gen_range(0..n);
            let lsdb = w.node(s).lsdb();
            let mut adj = Adj::new();
            for l in lsdb.confirmed_links() {
                let (a, b) = l.endpoints;
                adj.entry(a).or_default().insert(b);
                adj.entry(b).or_default().insert(a);
            }
            let want = if s == d { Some(vec![ip_of(s)]) } else { smallest_shortest_path(&adj, ip_of(s), ip_of(d)) };
            let got = lsdb.route(ip_of(s), ip_of(d));
            ensure(got == want, || format!("route {s}->{d}: {got:?} vs oracle {want:?}"))?;
            queries += 1;
            if got.is_some() && s != d {
                found += 1;
            }
        }
    }
    ensure(found * 2 > queries, || format!("only {found} of {queries} queries had a route"))?;
    let mut pairs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for r in 1..=16u32 {
        let x: [u8; 32] = rng.gen();
        let anchor = Digest(sha_iter(x, r));
        for i in 1..=r {
            let hops = Digest(sha_iter(x, i));
            for rem in 0..=16u32 {
                let got = slsp::crypto::verify_chain_link(&anchor, &hops, rem);
                ensure(got == (rem == r - i), || format!("R={r} i={i} remaining={rem}: {got}"))?;
            }
            pairs += 1;
        }
        let chain = slsp::crypto::make_chain(Digest(x), r as u8).unwrap();
        ensure(chain.anchor == anchor && chain.first_link.0 == sha_iter(x, 1), || format!("make_chain R={r}"))?;
    }
    Ok(format!(
        "{queries} route queries ({found} with a path) equal the brute-force oracle; {pairs} (R, i) chain pairs equal direct hashing"
    ))
}

fn determinism() -> Outcome {
    for (name, _) in BUNDLED {
        let sc = Scenario::from_bundled(name).unwrap();
        let a = run_scenario(&sc, &RunOptions::default()).unwrap().metrics_jsonl();
        let b = run_scenario(&sc, &RunOptions::default()).unwrap().metrics_jsonl();
        ensure(a == b, || format!("{name}: metrics differ between runs"))?;
        ensure(!a.is_empty(), || format!("{name}: empty metrics"))?;
    }
    Ok(format!("{} bundled scenarios produced byte-identical metrics twice", BUNDLED.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("zone confinement", zone_confinement),
        ("hash-chain gate", hash_chain_gate),
        ("two-sided confirmation", two_sided_confirmation),
        ("NLP detection", nlp_detection),
        ("replay immunity", replay_immunity),
        ("scheduler fairness", scheduler_fairness),
        ("rekey protocol", rekey_protocol),
        ("oracle equivalence", oracle_equivalence),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS: {detail}", i + 1),
            Err(why) => {
                println!("criterion {} {name}: FAIL: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
