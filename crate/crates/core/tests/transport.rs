//! Orchestrating against controllers behind a socket must leave exactly the
//! same workspace as orchestrating against in-process controllers.

use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use tsnfv::cuc::Cuc;
use tsnfv::testkit::{cross_pop_topology, nsd, placement, traffic, vl, GBPS};
use tsnfv::topology::Topology;
use tsnfv::uni::{serve, CncRegistry, UniService};
use tsnfv::workspace::WorkspaceState;

fn lifecycle(cuc: &mut Cuc) {
    let t = |lat| traffic(250_000, 500, 1, lat);
    let a = nsd("a", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t(200_000), t(200_000))]);
    let b = nsd("b", &["x", "y"], &[], &[vl("vl1", "x", "y", 6, traffic(500_000, 1_000, 2, 300_000), t(300_000))]);
    let tight = nsd("c", &["plc", "io"], &[], &[vl("vl1", "plc", "io", 7, t(5_000), t(5_000))]);
    let pa = placement(&[("plc", "H1"), ("io", "H2")]);
    let pb = placement(&[("x", "H2"), ("y", "H1")]);
    cuc.instantiate(&a, &pa).unwrap();
    cuc.instantiate(&b, &pb).unwrap();
    cuc.instantiate(&tight, &pa).unwrap_err();
    cuc.terminate("ns-1").unwrap();
    cuc.update("ns-2", &a, &placement(&[("plc", "H2"), ("io", "H1")])).unwrap();
}

#[test]
fn tcp_and_in_process_workspaces_are_identical() {
    let topology = Arc::new(cross_pop_topology(GBPS, 500, 1000).build());

    let mut local = WorkspaceState::new(&topology).into_cuc().unwrap();
    lifecycle(&mut local);
    let expected = WorkspaceState::capture(&local).to_json();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let service = Arc::new(UniService::new(topology.clone()));
    let stop = Arc::new(AtomicBool::new(false));
    let server = {
        let (service, stop) = (service.clone(), stop.clone());
        thread::spawn(move || serve(listener, service, stop))
    };
    let mut remote = Cuc::new(topology.clone(), CncRegistry::tcp(&topology, &addr)).unwrap();
    lifecycle(&mut remote);
    let actual = WorkspaceState {
        topology: Topology::to_document(&topology),
        cnc_states: service.states(),
        ledger: remote.ledger(),
    }
    .to_json();
    stop.store(true, Ordering::SeqCst);
    drop(remote);
    server.join().unwrap().unwrap();

    assert_eq!(actual, expected);
}
