use std::collections::BTreeMap;
use std::sync::Arc;

use super::*;
use crate::cnc::{Cnc, SegmentEntry};
use crate::cuc::Cuc;
use crate::testkit::{cross_pop_topology, nsd, placement, reference_stream, reference_topology, traffic, vl, GBPS};
use crate::uni::CncRegistry;

fn reference_setup() -> (Topology, BTreeMap<DomainId, CncState>) {
    let topo = Arc::new(reference_topology());
    let path = topo.shortest_path(&"A".into(), &"C".into()).unwrap();
    let mut cnc = Cnc::new("pop1".into(), topo.clone());
    cnc.admit_stream(&reference_stream("s1", 100_000), &path.hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let states = BTreeMap::from([(DomainId::from("pop1"), cnc.into_state())]);
    ((*topo).clone(), states)
}

fn run(topo: &Topology, states: &BTreeMap<DomainId, CncState>, bg_load: f64, seed: u64) -> SimReport {
    let streams = collect_streams(states).unwrap();
    let cfg = SimConfig { duration_cycles: 3, bg_load, seed };
    simulate(topo, &collect_gcls(states), &streams, &cfg).unwrap()
}

#[test]
fn reference_trace_unloaded() {
    let (topo, states) = reference_setup();
    let report = run(&topo, &states, 0.0, 0);
    let s = &report.streams[&StreamId::from("s1")];
    assert_eq!(s.observed_worst_latency_ns, 10_320);
    assert_eq!(s.observed_frame_count, 3);
    assert_eq!(s.dropped_frames, 0);
    assert_eq!(report.gate_violations(), 0);
    assert_eq!(report.horizon_ns, 250_000);
}

#[test]
fn reference_trace_saturated() {
    let (topo, states) = reference_setup();
    let report = run(&topo, &states, 1.0, 7);
    let s = &report.streams[&StreamId::from("s1")];
    assert_eq!(s.observed_worst_latency_ns, 10_320);
    assert_eq!(s.dropped_frames, 0);
    assert_eq!(report.gate_violations(), 0);
    let a = &report.ports[&"A.p0".parse::<PortRef>().unwrap()];
    assert!(a.background_sent > 0);
}

#[test]
fn empty_stream_set() {
    let topo = reference_topology();
    let report = simulate(&topo, &BTreeMap::new(), &[], &SimConfig::default()).unwrap();
    assert_eq!(report, SimReport::default());
}

#[test]
fn deterministic_for_a_seed() {
    let (topo, states) = reference_setup();
    assert_eq!(run(&topo, &states, 0.6, 42), run(&topo, &states, 0.6, 42));
}

#[test]
fn config_bounds() {
    let topo = reference_topology();
    for bad in [
        SimConfig { duration_cycles: 0, ..SimConfig::default() },
        SimConfig { bg_load: 1.5, ..SimConfig::default() },
        SimConfig { bg_load: f64::NAN, ..SimConfig::default() },
    ] {
        assert!(matches!(
            simulate(&topo, &BTreeMap::new(), &[], &bad),
            Err(SimConfigError::Invalid(_))
        ));
    }
}

#[test]
fn open_gate_everywhere_lets_background_delay_scheduled_frames() {
    // Without lists every class shares the wire, so a saturated best-effort
    // queue holds the scheduled frame back.
    let (topo, states) = reference_setup();
    let streams = collect_streams(&states).unwrap();
    let cfg = SimConfig { duration_cycles: 3, bg_load: 1.0, seed: 1 };
    let report = simulate(&topo, &BTreeMap::new(), &streams, &cfg).unwrap();
    assert!(report.streams[&StreamId::from("s1")].observed_worst_latency_ns > 10_320);
}

fn instance_on(topology: Topology, nsd: &crate::descriptors::Nsd, placement: &crate::descriptors::Placement) -> (Cuc, NsInstance) {
    let topology = Arc::new(topology);
    let registry = CncRegistry::in_process(&topology, BTreeMap::new()).unwrap();
    let mut cuc = Cuc::new(topology, registry).unwrap();
    let inst = cuc.instantiate(nsd, placement).unwrap().clone();
    (cuc, inst)
}

#[test]
fn healthy_instance_passes() {
    let t = traffic(250_000, 500, 1, 100_000);
    let (cuc, inst) = instance_on(
        reference_topology(),
        &nsd("ctl", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t, t)]),
        &placement(&[("plc", "A"), ("io", "C")]),
    );
    let states = cuc.registry().snapshots();
    let outcome = verify_ns(&inst, cuc.topology(), &states, &SimConfig { bg_load: 0.5, ..SimConfig::default() }).unwrap();
    assert!(outcome.pass, "{:?}", outcome.failures);
    assert_eq!(outcome.runs.iter().map(|r| r.0).collect::<Vec<_>>(), [0.0, 1.0, 0.5]);
}

#[test]
fn cross_pop_agrees_with_summed_segments() {
    let (cuc, inst) = instance_on(
        cross_pop_topology(GBPS, 500, 1000).build(),
        &nsd(
            "wide",
            &["plc", "io"],
            &[],
            &[vl(
                "vl1",
                "plc",
                "io",
                7,
                traffic(250_000, 500, 1, 200_000),
                traffic(500_000, 500, 2, 400_000),
            )],
        ),
        &placement(&[("plc", "H1"), ("io", "H2")]),
    );
    let states = cuc.registry().snapshots();
    let report = run(cuc.topology(), &states, 0.0, 0);
    for s in &inst.streams {
        assert_eq!(
            Some(report.streams[&s.stream_id].observed_worst_latency_ns),
            inst.e2e_latency_ns(&s.stream_id),
            "{}",
            s.stream_id
        );
    }
    let outcome = verify_ns(&inst, cuc.topology(), &states, &SimConfig::default()).unwrap();
    assert!(outcome.pass, "{:?}", outcome.failures);
}

#[test]
fn corrupted_list_fails() {
    let t = traffic(250_000, 500, 1, 100_000);
    let (cuc, inst) = instance_on(
        reference_topology(),
        &nsd("ctl", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t, t)]),
        &placement(&[("plc", "A"), ("io", "C")]),
    );
    let mut states = cuc.registry().snapshots();
    let gcl = states
        .get_mut(&DomainId::from("pop1"))
        .unwrap()
        .gcls
        .get_mut(&"B1.p1".parse::<PortRef>().unwrap())
        .unwrap();
    // Let best effort run right up to the window.
    for e in gcl.entries.iter_mut() {
        if e.gate_states == 0 {
            e.gate_states = !gcl.scheduled_classes;
        }
    }
    let outcome = verify_ns(&inst, cuc.topology(), &states, &SimConfig::default()).unwrap();
    assert!(!outcome.pass);
    assert!(outcome.failures.iter().any(|f| f.contains("guard_too_short")), "{:?}", outcome.failures);
}

#[test]
fn inactive_instance_is_rejected() {
    let t = traffic(250_000, 500, 1, 100_000);
    let (mut cuc, inst) = instance_on(
        reference_topology(),
        &nsd("ctl", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t, t)]),
        &placement(&[("plc", "A"), ("io", "C")]),
    );
    cuc.terminate(&inst.instance_id).unwrap();
    let gone = cuc.instance(&inst.instance_id).unwrap().clone();
    let states = cuc.registry().snapshots();
    assert!(matches!(
        verify_ns(&gone, cuc.topology(), &states, &SimConfig::default()),
        Err(VerifyError::NotActive(id)) if id == "ns-1"
    ));
}
