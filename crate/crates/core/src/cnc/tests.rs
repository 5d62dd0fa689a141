use std::sync::Arc;

use super::*;
use crate::model::{GclEntry, NodeId};
use crate::testkit::{self, reference_stream, reference_topology, traffic, TopologyBuilder, GBPS};
use crate::topology::DomainKind;

fn reference_cnc() -> (Cnc, Vec<Hop>) {
    let topo = Arc::new(reference_topology());
    let path = topo.shortest_path(&"A".into(), &"C".into()).unwrap();
    (Cnc::new("pop1".into(), topo), path.hops)
}

fn window(s: &StreamSchedule, port: &str) -> (u64, u64) {
    let port: PortRef = port.parse().unwrap();
    let r = s.reservations.iter().find(|r| r.port_id == port).unwrap();
    (r.window_start_ns, r.window_end_ns)
}

#[test]
fn admit_reference_stream() {
    let (mut cnc, hops) = reference_cnc();
    let s = cnc
        .admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    // 0 + 4160 tx + 500 prop = 4660; + 1000 processing = 5660; + 4160 + 500 = 10_320
    assert_eq!(window(&s, "A.p0"), (0, 4_160));
    assert_eq!(window(&s, "B1.p1"), (5_660, 9_820));
    assert_eq!(s.e2e_latency_ns, 10_320);
    assert_eq!(s.cycle_ns, 250_000);
    assert_eq!(s.instances(), 1);
    assert_eq!(cnc.state().hyperperiod_ns, 250_000);
}

#[test]
fn admit_second_identical_stream() {
    let (mut cnc, hops) = reference_cnc();
    cnc.admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let s2 = cnc
        .admit_stream(&reference_stream("s2", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    assert_eq!(window(&s2, "A.p0"), (4_160, 8_320));
    assert_eq!(window(&s2, "B1.p1"), (9_820, 13_980));
    assert_eq!(s2.e2e_latency_ns, 14_480);
}

#[test]
fn budget_too_small() {
    let (mut cnc, hops) = reference_cnc();
    let before = cnc.state().clone();
    let err = cnc
        .admit_stream(&reference_stream("s1", 10_000), &hops, SegmentEntry::Talker, 10_000)
        .unwrap_err();
    assert!(matches!(err, CncError::ExceedsBudget { latency_ns, budget_ns: 10_000, .. } if latency_ns > 10_000));
    assert_eq!(err.cause(), FailureCause::InfeasibleBudget);
    assert_eq!(cnc.state(), &before);
}

#[test]
fn remove_keeps_others() {
    let (mut cnc, hops) = reference_cnc();
    cnc.admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let s2 = cnc
        .admit_stream(&reference_stream("s2", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    cnc.remove_stream(&"s1".into()).unwrap();
    let state = cnc.state();
    assert_eq!(state.admitted.len(), 1);
    assert_eq!(state.admitted[&StreamId::from("s2")].schedule, s2);
    for list in state.reservations.values() {
        assert!(list.iter().all(|r| r.stream_id.as_str() == "s2"));
    }
    assert_eq!(state.reservations.values().map(Vec::len).sum::<usize>(), 2);
}

#[test]
fn remove_unknown() {
    let (mut cnc, _) = reference_cnc();
    assert_eq!(
        cnc.remove_stream(&"ghost".into()),
        Err(CncError::UnknownStream("ghost".into()))
    );
}

#[test]
fn admit_then_remove_round_trips() {
    let (mut cnc, hops) = reference_cnc();
    cnc.admit_stream(&reference_stream("s0", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let baseline = cnc.state().clone();
    cnc.admit_stream(
        &testkit::stream("s1", "A", "C", traffic(300_000, 200, 2, 200_000), 5),
        &hops,
        SegmentEntry::Talker,
        200_000,
    )
    .unwrap();
    assert_eq!(cnc.state().hyperperiod_ns, 1_500_000);
    cnc.remove_stream(&"s1".into()).unwrap();
    assert_eq!(cnc.state(), &baseline);

    cnc.remove_stream(&"s0".into()).unwrap();
    assert_eq!(cnc.state(), &CncState::new("pop1".into()));
}

#[test]
fn duplicate_stream_rejected() {
    let (mut cnc, hops) = reference_cnc();
    let s = reference_stream("s1", 100_000);
    cnc.admit_stream(&s, &hops, SegmentEntry::Talker, 100_000).unwrap();
    assert!(matches!(
        cnc.admit_stream(&s, &hops, SegmentEntry::Talker, 100_000),
        Err(CncError::DuplicateStream(_))
    ));
}

#[test]
fn bridge_without_qbv() {
    let topo = Arc::new(
        TopologyBuilder::new()
            .domain("d", DomainKind::NfviPop, "vim")
            .host("A", "d")
            .bridge_with("B1", "d", 0, 8, false)
            .host("C", "d")
            .link("A", "B1", GBPS, 0)
            .link("B1", "C", GBPS, 0)
            .build(),
    );
    let hops = topo.shortest_path(&"A".into(), &"C".into()).unwrap().hops;
    let mut cnc = Cnc::new("d".into(), topo);
    assert_eq!(
        cnc.admit_stream(&reference_stream("s", 100_000), &hops, SegmentEntry::Talker, 100_000),
        Err(CncError::Capability(NodeId::from("B1")))
    );
}

#[test]
fn hyperperiod_overflow() {
    let (mut cnc, hops) = reference_cnc();
    let a = testkit::stream("a", "A", "C", traffic(700_000_000, 100, 1, 1_000_000), 7);
    let b = testkit::stream("b", "A", "C", traffic(900_000_000, 100, 1, 1_000_000), 6);
    cnc.admit_stream(&a, &hops, SegmentEntry::Talker, 1_000_000).unwrap();
    let before = cnc.state().clone();
    assert!(matches!(
        cnc.admit_stream(&b, &hops, SegmentEntry::Talker, 1_000_000),
        Err(CncError::HyperperiodOverflow(6_300_000_000))
    ));
    assert_eq!(cnc.state(), &before);
}

#[test]
fn segment_from_other_domain_is_malformed() {
    let (mut cnc, hops) = reference_cnc();
    let mut cnc_other = Cnc::new("elsewhere".into(), cnc.topology().clone());
    assert!(matches!(
        cnc_other.admit_stream(&reference_stream("s", 100_000), &hops, SegmentEntry::Talker, 100_000),
        Err(CncError::Malformed(_))
    ));
    assert!(matches!(
        cnc.admit_stream(&reference_stream("s", 100_000), &hops[1..], SegmentEntry::Talker, 100_000),
        Err(CncError::Malformed(_))
    ));
}

#[test]
fn same_class_queue_sharing_pushes_talker() {
    // Two talkers feed one bridge port with the same class. The second burst
    // must not sit in the class queue while the first one's window is open.
    let topo = Arc::new(
        TopologyBuilder::new()
            .domain("d", DomainKind::NfviPop, "vim")
            .host("A", "d")
            .host("D", "d")
            .bridge("B1", "d", 1000)
            .host("C", "d")
            .link("A", "B1", GBPS, 500)
            .link("D", "B1", GBPS, 500)
            .link("B1", "C", GBPS, 500)
            .build(),
    );
    let mut cnc = Cnc::new("d".into(), topo.clone());
    let path_a = topo.shortest_path(&"A".into(), &"C".into()).unwrap().hops;
    let path_d = topo.shortest_path(&"D".into(), &"C".into()).unwrap().hops;
    cnc.admit_stream(&reference_stream("s1", 100_000), &path_a, SegmentEntry::Talker, 100_000)
        .unwrap();
    let s2 = testkit::stream("s2", "D", "C", traffic(250_000, 500, 1, 100_000), 7);
    let sched = cnc.admit_stream(&s2, &path_d, SegmentEntry::Talker, 100_000).unwrap();
    // D's burst would be queued at B1 from 5660; it is delayed until s1's window ends.
    let talker = sched.first_hop().next().unwrap();
    let bridge = &sched.reservations[1];
    assert!(bridge.queue_start_ns >= 9_820, "{bridge:?}");
    assert_eq!(talker.window_start_ns, 4_160);
    assert_eq!((bridge.window_start_ns, bridge.window_end_ns), (9_820, 13_980));
    assert_eq!(sched.e2e_latency_ns, 14_480);

    // A different class may overlap queues freely.
    let s3 = testkit::stream("s3", "D", "C", traffic(250_000, 500, 1, 100_000), 6);
    let sched = cnc.admit_stream(&s3, &path_d, SegmentEntry::Talker, 100_000).unwrap();
    assert_eq!(sched.reservations[0].window_start_ns, 0);
    assert_eq!(sched.reservations[1].window_start_ns, 13_980);
}

#[test]
fn multi_instance_pattern() {
    let (mut cnc, hops) = reference_cnc();
    cnc.admit_stream(&reference_stream("slow", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let fast = testkit::stream("fast", "A", "C", traffic(125_000, 500, 1, 100_000), 6);
    let s = cnc.admit_stream(&fast, &hops, SegmentEntry::Talker, 100_000).unwrap();
    // Instance 0 waits behind "slow"; instance 1 at 125 µs is free.
    assert_eq!(s.cycle_ns, 250_000);
    assert_eq!(s.instances(), 2);
    assert_eq!(window(&s, "A.p0"), (4_160, 8_320));
    let inst1: Vec<_> = s.reservations.iter().filter(|r| r.instance == 1).collect();
    assert_eq!((inst1[0].window_start_ns, inst1[1].window_start_ns), (125_000, 130_660));
    assert_eq!(s.e2e_latency_ns, 14_480);
    assert_eq!(s.exit_first_frame_min_ns, 10_320);
}

#[test]
fn upstream_entry_offsets() {
    let (mut cnc, hops) = reference_cnc();
    // Pretend frames reach B1 from elsewhere: first at 3000, last at 7000.
    let s = cnc
        .admit_stream(
            &reference_stream("s", 100_000),
            &hops[1..],
            SegmentEntry::Upstream {
                earliest_ns: 3_000,
                latest_ns: 7_000,
            },
            100_000,
        )
        .unwrap();
    let r = &s.reservations[0];
    assert_eq!((r.queue_start_ns, r.window_start_ns, r.window_end_ns), (4_000, 8_000, 12_160));
    assert_eq!(s.entry_offset_ns, 7_000);
    assert_eq!(s.e2e_latency_ns, 12_660 - 7_000);
    assert_eq!(s.exit_latest_ns(), 12_660);
}

#[test]
fn gcl_reference_construction() {
    let port = PortRef::new("B1", "p1");
    let w = Window {
        start: 20_000,
        len: 4_160,
        queue_start: 20_000,
        queue_len: 4_160,
        class: 7,
    };
    let gcl = build_port_gcl(&port, &[w], 250_000, GBPS, Some(16)).unwrap();
    // guard = 12_336; 20_000 - 12_336 = 7_664
    assert_eq!(
        gcl.entries,
        vec![
            GclEntry { gate_states: 0x7f, interval_ns: 7_664 },
            GclEntry { gate_states: 0x00, interval_ns: 12_336 },
            GclEntry { gate_states: 0x80, interval_ns: 4_160 },
            GclEntry { gate_states: 0x7f, interval_ns: 225_840 },
        ]
    );
    assert_eq!(gcl.interval_sum(), 250_000);
    assert_eq!(gcl.scheduled_classes, 0x80);
    assert_eq!(
        build_port_gcl(&port, &[w], 250_000, GBPS, Some(2)),
        Err(CncError::GclOverflow { port, entries: 4, max: 2 })
    );
}

#[test]
fn gcl_close_windows_share_closed_gap() {
    let port = PortRef::new("B1", "p1");
    let a = Window { start: 20_000, len: 4_000, queue_start: 20_000, queue_len: 4_000, class: 7 };
    let b = Window { start: 25_000, len: 4_000, queue_start: 25_000, queue_len: 4_000, class: 6 };
    let c = Window { start: 29_000, len: 1_000, queue_start: 29_000, queue_len: 1_000, class: 6 };
    let gcl = build_port_gcl(&port, &[c, a, b], 100_000, GBPS, None).unwrap();
    let masks: Vec<(u8, u64)> = gcl.entries.iter().map(|e| (e.gate_states, e.interval_ns)).collect();
    assert_eq!(
        masks,
        vec![
            (0x3f, 7_664),
            (0x00, 12_336),
            (0x80, 4_000),
            (0x00, 1_000),
            (0x40, 5_000),
            (0x3f, 70_000),
        ]
    );
}

#[test]
fn gcl_window_across_cycle_end() {
    let port = PortRef::new("B1", "p1");
    let w = Window { start: 98_000, len: 4_000, queue_start: 98_000, queue_len: 4_000, class: 3 };
    let gcl = build_port_gcl(&port, &[w], 100_000, GBPS, None).unwrap();
    let masks: Vec<(u8, u64)> = gcl.entries.iter().map(|e| (e.gate_states, e.interval_ns)).collect();
    assert_eq!(
        masks,
        vec![(0x08, 2_000), (0xf7, 83_664), (0x00, 12_336), (0x08, 2_000)]
    );
}

#[test]
fn gcls_only_for_reserved_ports() {
    let (mut cnc, hops) = reference_cnc();
    assert!(cnc.synthesize_gcls().unwrap().is_empty());
    cnc.admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let gcls = cnc.synthesize_gcls().unwrap();
    let ports: Vec<String> = gcls.keys().map(|p| p.to_string()).collect();
    assert_eq!(ports, ["A.p0", "B1.p1"]);
    assert_eq!(&gcls, &cnc.state().gcls);
    let b1 = &gcls[&"B1.p1".parse::<PortRef>().unwrap()];
    // [5660, 9820) window; its guard wraps around the cycle end.
    assert_eq!(
        b1.entries,
        vec![
            GclEntry { gate_states: 0x00, interval_ns: 5_660 },
            GclEntry { gate_states: 0x80, interval_ns: 4_160 },
            GclEntry { gate_states: 0x7f, interval_ns: 233_504 },
            GclEntry { gate_states: 0x00, interval_ns: 6_676 },
        ]
    );
}

#[test]
fn gcl_overflow_blocks_admission() {
    let topo = Arc::new(
        TopologyBuilder::new()
            .domain("d", DomainKind::NfviPop, "vim")
            .host("A", "d")
            .bridge_with("B1", "d", 1000, 4, true)
            .host("C", "d")
            .link("A", "B1", GBPS, 500)
            .link("B1", "C", GBPS, 500)
            .build(),
    );
    let hops = topo.shortest_path(&"A".into(), &"C".into()).unwrap().hops;
    let mut cnc = Cnc::new("d".into(), topo);
    cnc.admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let before = cnc.state().clone();
    let other = testkit::stream("s2", "A", "C", traffic(250_000, 500, 1, 100_000), 3);
    assert!(matches!(
        cnc.admit_stream(&other, &hops, SegmentEntry::Talker, 100_000),
        Err(CncError::GclOverflow { .. })
    ));
    assert_eq!(cnc.state(), &before);
}

#[test]
fn bridge_config_documents() {
    let (mut cnc, hops) = reference_cnc();
    assert!(cnc.bridge_config().is_empty());
    cnc.admit_stream(&reference_stream("s1", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let docs = cnc.bridge_config();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].bridge_id, NodeId::from("B1"));
    assert_eq!(docs[0].ports.len(), 1);
    assert_eq!(docs[0].ports[0].port_id, "B1.p1".parse().unwrap());
    assert_eq!(docs[0].vlan_memberships.len(), 1);
    assert_eq!(docs[0].vlan_memberships[0].vlan_id, 100);
    assert_eq!(
        docs[0].vlan_memberships[0].ports,
        vec!["B1.p0".parse().unwrap(), "B1.p1".parse().unwrap()]
    );
}

#[test]
fn bridge_config_sorted_by_bridge() {
    let topo = Arc::new(
        TopologyBuilder::new()
            .domain("d", DomainKind::NfviPop, "vim")
            .host("A", "d")
            .bridge("Z9", "d", 100)
            .bridge("B2", "d", 100)
            .host("C", "d")
            .link("A", "Z9", GBPS, 10)
            .link("Z9", "B2", GBPS, 10)
            .link("B2", "C", GBPS, 10)
            .build(),
    );
    let hops = topo.shortest_path(&"A".into(), &"C".into()).unwrap().hops;
    let mut cnc = Cnc::new("d".into(), topo);
    cnc.admit_stream(&reference_stream("s", 100_000), &hops, SegmentEntry::Talker, 100_000)
        .unwrap();
    let ids: Vec<String> = cnc.bridge_config().iter().map(|d| d.bridge_id.0.clone()).collect();
    assert_eq!(ids, ["B2", "Z9"]);
}

#[test]
fn handle_uni_requests() {
    use crate::uni::{CapabilityQuery, RemoveStream, ResponseStatus};
    let (mut cnc, hops) = reference_cnc();
    let req = UniRequest::StreamRequest(StreamRequest {
        request_id: "r1".into(),
        domain_id: "pop1".into(),
        stream: reference_stream("s1", 100_000),
        segment: hops,
        latency_budget_ns: 100_000,
        entry: SegmentEntry::Talker,
    });
    let resp = cnc.handle(&req);
    assert_eq!(resp.status, ResponseStatus::Ok);
    assert_eq!(resp.schedule.unwrap().e2e_latency_ns, 10_320);

    let resp = cnc.handle(&UniRequest::RemoveStream(RemoveStream {
        request_id: "r2".into(),
        domain_id: "pop1".into(),
        stream_id: "nope".into(),
    }));
    assert_eq!(resp.cause, Some(FailureCause::UnknownStream));

    let resp = cnc.handle(&UniRequest::CapabilityQuery(CapabilityQuery {
        request_id: "r3".into(),
        domain_id: "pop1".into(),
    }));
    let caps = resp.capabilities.unwrap();
    assert_eq!(caps.bridges.len(), 1);
    assert_eq!(caps.bridges[0].processing_delay_ns, 1000);

    let resp = cnc.handle(&UniRequest::CapabilityQuery(CapabilityQuery {
        request_id: "r4".into(),
        domain_id: "other".into(),
    }));
    assert_eq!(resp.cause, Some(FailureCause::Malformed));
}
