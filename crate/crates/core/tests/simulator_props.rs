use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracemax::codec;
use tracemax::generate;
use tracemax::id_assignment::assign_ids;
use tracemax::reconstruction::{attribute_sources, resolve};
use tracemax::simulator::{run, RoutingPolicy, Scenario, ScenarioError, Source, Victim};
use tracemax::topology::RouterId;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(asset(name)).unwrap()
}

#[test]
fn same_scenario_same_bytes() {
    for name in ["three_attackers.scenario.yaml", "mesh.scenario.yaml", "chain55.scenario.yaml"] {
        let s = load(name);
        let a = serde_yaml::to_string(&run(&s).unwrap()).unwrap();
        let b = serde_yaml::to_string(&run(&load(name)).unwrap()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn other_packets_getting_lost_changes_nothing() {
    let mut s = load("mesh.scenario.yaml");
    s.loss_rate = 0.0;
    let (clean, clean_report) = run(&s).unwrap();
    for loss in [0.1, 0.5, 0.9] {
        s.loss_rate = loss;
        let (lossy, report) = run(&s).unwrap();
        assert!(lossy.iter().any(|r| !r.delivered));
        for (l, c) in lossy.iter().zip(&clean) {
            assert_eq!(l.actual_path, c.actual_path);
            assert_eq!(l.snapshots, c.snapshots);
            if l.delivered {
                assert_eq!(l.captured, c.captured);
            }
        }
        for v in &report.verdicts {
            let same = clean_report.verdicts.iter().find(|c| c.packet_id == v.packet_id).unwrap();
            assert_eq!(v, same);
        }
        assert_eq!(report.attribution, report.true_ingress);
    }
}

#[test]
fn capture_order_does_not_matter() {
    let s = load("three_attackers.scenario.yaml");
    let (records, report) = run(&s).unwrap();
    let mut captures: Vec<_> = records
        .iter()
        .filter_map(|r| {
            let bytes = codec::from_hex(r.captured.as_ref()?).unwrap();
            Some((r.packet_id, codec::decode(&bytes, &s.profile).unwrap(), r.receiver()))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        captures.shuffle(&mut rng);
        for (pid, opt, receiver) in &captures {
            let path = resolve(opt, *receiver, &s.topology, &s.assignment, s.bridge_budget).unwrap();
            let verdict = report.verdicts.iter().find(|v| v.packet_id == *pid).unwrap();
            assert_eq!(Some(&path), verdict.path.as_ref());
        }
        let plain: Vec<_> = captures.iter().map(|(_, o, r)| (o.clone(), *r)).collect();
        let attribution = attribute_sources(&plain, &s.topology, &s.assignment, s.bridge_budget);
        assert_eq!(attribution.ingress, report.attribution);
        assert!(attribution.failures.is_empty());
    }
}

#[test]
fn three_attackers_one_spoofed_address() {
    let s = load("three_attackers.scenario.yaml");
    assert!(s.sources.iter().all(|src| src.claimed_src == Ipv4Addr::new(203, 0, 113, 66)));
    let (_, report) = run(&s).unwrap();
    assert_eq!(
        report.attribution,
        BTreeMap::from([(RouterId(5), 40), (RouterId(7), 25), (RouterId(9), 10)])
    );
    assert!(report.all_matched());

    // with loss the counts follow what was delivered
    let mut lossy = s.clone();
    lossy.loss_rate = 0.1;
    let (records, report) = run(&lossy).unwrap();
    let mut delivered = BTreeMap::new();
    for r in records.iter().filter(|r| r.delivered) {
        *delivered.entry(r.actual_path[0]).or_insert(0u64) += 1;
    }
    assert_eq!(report.attribution, delivered);
    assert!(report.delivered < 75);

    // a different forged address per packet source changes no path
    let mut spoofed = s.clone();
    for (i, src) in spoofed.sources.iter_mut().enumerate() {
        src.claimed_src = Ipv4Addr::new(10, 99, 0, i as u8);
    }
    let (_, again) = run(&spoofed).unwrap();
    for (a, b) in report_paths(&run(&s).unwrap().1).iter().zip(report_paths(&again)) {
        assert_eq!(*a, b);
    }
}

fn report_paths(r: &tracemax::simulator::ReconstructionReport) -> Vec<Vec<RouterId>> {
    r.verdicts.iter().map(|v| v.path.as_ref().unwrap().routers.clone()).collect()
}

#[test]
fn ecmp_splits_the_diamond() {
    let t = generate::diamond();
    let a = assign_ids(&t, 0).unwrap().with_bit_width(4).unwrap();
    let mut s = Scenario::simple(
        t,
        a,
        Source {
            attach: RouterId(1),
            claimed_src: Ipv4Addr::new(198, 51, 100, 1),
            packets: 1000,
            payload: 64,
            forged_option: None,
        },
        Victim {
            attach: RouterId(4),
            address: Ipv4Addr::new(192, 0, 2, 4),
        },
    );
    s.routing = RoutingPolicy::EcmpRandom { seed: 2024 };
    let (records, report) = run(&s).unwrap();
    let via_two = records.iter().filter(|r| r.actual_path[1] == RouterId(2)).count();
    // 1000 fair coin flips: 500 +- 60 is about 3.8 standard deviations
    assert!((440..=560).contains(&via_two), "{via_two}");
    assert_eq!(report.matched, 1000);
}

#[test]
fn bundled_edge_cases() {
    let (_, report) = run(&load("bridged.scenario.yaml")).unwrap();
    assert_eq!(report.matched, 7);
    assert!(report.verdicts.iter().all(|v| v.path.as_ref().unwrap().routers.contains(&RouterId(2))));

    let (_, report) = run(&load("duplicate_incoming.scenario.yaml")).unwrap();
    assert_eq!(report.mismatched, 5);
    assert!(report.verdicts.iter().all(|v| matches!(
        &v.error,
        Some(tracemax::reconstruction::ReconstructionError::Ambiguous { candidates, .. })
            if candidates == &[RouterId(2), RouterId(3)]
    )));

    let (records, report) = run(&load("chain55.scenario.yaml")).unwrap();
    assert!(records.iter().all(|r| r.actual_path.len() == 55 && r.hops_marked() == 54));
    assert_eq!(report.max_traced_hops, 55);
    assert!(report.all_matched());
}

#[test]
fn bad_scenarios_fail_before_running() {
    let mut s = load("bridged.scenario.yaml");
    s.sources[0].attach = RouterId(2);
    assert!(matches!(run(&s), Err(ScenarioError::Invalid(m)) if m.contains("does not mark")));

    let mut s = load("mesh.scenario.yaml");
    s.loss_rate = -0.1;
    assert!(matches!(run(&s), Err(ScenarioError::Invalid(_))));

    let dir = std::env::temp_dir().join(format!("tracemax-scenario-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("broken.yaml");
    std::fs::write(&path, "topology: missing.yaml\nsources: []\nvictim: { attach: 1, address: 192.0.2.1 }\n").unwrap();
    assert!(matches!(Scenario::load(&path), Err(ScenarioError::Document(_))));
    std::fs::write(&path, "topology: x.yaml\nsources: []\nvictim: { attach: 1, address: 192.0.2.1 }\nrouting: { policy: flood }\n").unwrap();
    assert!(matches!(Scenario::load(&path), Err(ScenarioError::Document(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulated_paths_come_back_exactly() {
    let mut checked = 0;
    for g in 0..100u64 {
        let n = 3 + (g % 38) as u32;
        let t = generate::random_connected(n, 0.15, 0.05, g);
        for seed in 0..3u64 {
            let a = assign_ids(&t, seed).unwrap();
            let bw = a.bit_width();
            let mut rng = ChaCha8Rng::seed_from_u64(g * 31 + seed);
            let ids: Vec<RouterId> = t.router_ids().collect();
            let victim = *ids.choose(&mut rng).unwrap();
            let mut s = Scenario::simple(
                t.clone(),
                a,
                Source {
                    attach: *ids.choose(&mut rng).unwrap(),
                    claimed_src: Ipv4Addr::new(198, 51, 100, 7),
                    packets: 8,
                    payload: 100,
                    forged_option: None,
                },
                Victim {
                    attach: victim,
                    address: Ipv4Addr::new(192, 0, 2, 1),
                },
            );
            s.profile.bit_width = bw;
            s.routing = RoutingPolicy::EcmpRandom { seed };
            s.seed = seed;
            let (records, report) = run(&s).unwrap();
            assert!(report.all_matched(), "graph {g} seed {seed}: {:?}", report.verdicts);
            for (r, v) in records.iter().zip(&report.verdicts) {
                assert_eq!(v.path.as_ref().unwrap().routers, r.actual_path);
            }
            checked += records.len();
        }
    }
    assert_eq!(checked, 2400);
}
