//! Command-line front end: lifecycle operations on a file-backed workspace,
//! schedule inspection, verification and a UNI service mode.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use tsnfv::cuc::{Cuc, CucError, InstanceStatus, NsInstance};
use tsnfv::descriptors::{parse_nsd, parse_placement, Nsd, Placement};
use tsnfv::model::PortRef;
use tsnfv::topology::Topology;
use tsnfv::uni::{serve, UniService};
use tsnfv::verifier::{verify_ns, SimConfig, VerifyError, VerifyOutcome};
use tsnfv::workspace::WorkspaceState;

#[derive(Debug, Parser)]
#[command(name = "tsnfv", version, about = "Orchestrate time-sensitive streams for network services")]
struct Cli {
    /// Workspace state file, created on first use.
    #[arg(long, global = true, default_value = "tsnfv-state.json")]
    state: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive, admit and configure the streams of a network service.
    Instantiate {
        /// Topology file; required when the state file does not exist yet.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        nsd: PathBuf,
        #[arg(long)]
        placement: PathBuf,
    },
    /// Release every stream of an instance.
    Terminate { instance_id: String },
    /// Replace an instance's descriptor and placement, restoring it on failure.
    Update {
        instance_id: String,
        #[arg(long)]
        nsd: PathBuf,
        #[arg(long)]
        placement: PathBuf,
    },
    /// Print part of the workspace.
    Show {
        #[command(subcommand)]
        what: Show,
    },
    /// Replay an active instance in simulation and check its latency bounds.
    Verify {
        instance_id: String,
        /// Extra background load to simulate besides 0 and 1.
        #[arg(long, default_value_t = 1.0)]
        bg_load: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the outcome as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Host one controller per domain behind the line-delimited UNI protocol.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        topology: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum Show {
    /// Streams of active instances with their latencies.
    Streams,
    /// Gate control list deployed on a port, e.g. `B1.p1`.
    Gcl { port: String },
    /// End-station configuration of a station.
    Config { station: String },
    /// UNI dispatch log.
    Audit,
}

/// Failures sorted by the exit code they map to.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Admission(anyhow::Error),
    Verification,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl Failure {
    fn from_cuc(e: CucError) -> Self {
        let admission = match &e {
            CucError::AdmissionFailed { .. } => true,
            CucError::UpdateFailed { cause, .. } => matches!(**cause, CucError::AdmissionFailed { .. }),
            _ => false,
        };
        if admission {
            Failure::Admission(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut out = String::new();
    let result = run(cli, &mut out);
    print!("{out}");
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Admission(e)) => {
            eprintln!("admission failed: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => ExitCode::from(3),
    }
}

fn run(cli: Cli, out: &mut String) -> Result<(), Failure> {
    match cli.command {
        Command::Instantiate { topology, nsd, placement } => {
            let (nsd, placement) = (read_nsd(&nsd)?, read_placement(&placement)?);
            let mut cuc = open_workspace(&cli.state, topology.as_deref())?;
            let result = cuc.instantiate(&nsd, &placement).map(|i| i.instance_id.clone());
            save(&cuc, &cli.state)?;
            let id = result.map_err(Failure::from_cuc)?;
            render_instance(out, cuc.instance(&id).expect("just recorded"));
            Ok(())
        }
        Command::Terminate { instance_id } => {
            let mut cuc = load_workspace(&cli.state)?;
            cuc.terminate(&instance_id).map_err(Failure::from_cuc)?;
            save(&cuc, &cli.state)?;
            writeln!(out, "{instance_id} terminated").unwrap();
            Ok(())
        }
        Command::Update { instance_id, nsd, placement } => {
            let (nsd, placement) = (read_nsd(&nsd)?, read_placement(&placement)?);
            let mut cuc = load_workspace(&cli.state)?;
            let result = cuc.update(&instance_id, &nsd, &placement).map(|_| ());
            save(&cuc, &cli.state)?;
            result.map_err(Failure::from_cuc)?;
            render_instance(out, cuc.instance(&instance_id).expect("updated"));
            Ok(())
        }
        Command::Show { what } => {
            let cuc = load_workspace(&cli.state)?;
            show(out, &cuc, what)
        }
        Command::Verify { instance_id, bg_load, seed, json } => {
            let cuc = load_workspace(&cli.state)?;
            let instance = cuc
                .instance(&instance_id)
                .ok_or_else(|| anyhow!("unknown instance {instance_id}"))?;
            let cfg = SimConfig { bg_load, seed, ..SimConfig::default() };
            let outcome = verify_ns(instance, cuc.topology(), &cuc.registry().snapshots(), &cfg).map_err(
                |e| match e {
                    VerifyError::NotActive(_) | VerifyError::Sim(_) => Failure::Input(e.into()),
                },
            )?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes")).unwrap();
            } else {
                render_outcome(out, instance, &outcome);
            }
            if outcome.pass {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::Serve { listen, topology } => {
            let topology = Arc::new(read_topology(&topology)?);
            let listener = TcpListener::bind(&listen).with_context(|| format!("cannot bind {listen}"))?;
            let addr = listener.local_addr().context("listener address")?;
            let shutdown = Arc::new(AtomicBool::new(false));
            let flag = shutdown.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;
            println!("listening on {addr}");
            serve(listener, Arc::new(UniService::new(topology)), shutdown).context("service stopped")?;
            Ok(())
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_topology(path: &Path) -> anyhow::Result<Topology> {
    Topology::from_file(path).with_context(|| format!("topology {}", path.display()))
}

fn read_nsd(path: &Path) -> anyhow::Result<Nsd> {
    parse_nsd(&read(path)?).with_context(|| format!("descriptor {}", path.display()))
}

fn read_placement(path: &Path) -> anyhow::Result<Placement> {
    parse_placement(&read(path)?).with_context(|| format!("placement {}", path.display()))
}

fn load_workspace(state: &Path) -> anyhow::Result<Cuc> {
    WorkspaceState::load(state)?.into_cuc().context("restoring workspace")
}

/// Resume from `state`, or start a fresh workspace on `topology`.
fn open_workspace(state: &Path, topology: Option<&Path>) -> anyhow::Result<Cuc> {
    if state.exists() {
        let cuc = load_workspace(state)?;
        if let Some(path) = topology {
            if read_topology(path)?.to_document() != cuc.topology().to_document() {
                return Err(anyhow!("{} does not match the topology stored in {}", path.display(), state.display()));
            }
        }
        return Ok(cuc);
    }
    let path = topology.ok_or_else(|| anyhow!("no state at {}; pass --topology to create it", state.display()))?;
    Ok(WorkspaceState::new(&read_topology(path)?).into_cuc()?)
}

fn save(cuc: &Cuc, state: &Path) -> anyhow::Result<()> {
    Ok(WorkspaceState::capture(cuc).save(state)?)
}

fn render_instance(out: &mut String, inst: &NsInstance) {
    writeln!(out, "instance {} ({:?})", inst.instance_id, inst.status).unwrap();
    for s in &inst.streams {
        let segments = &inst.schedules[&s.stream_id];
        let domains: Vec<&str> = segments.iter().map(|g| g.domain_id.as_str()).collect();
        writeln!(
            out,
            "  {}  {} -> {}  e2e {} ns  max {} ns  domains {}",
            s.stream_id,
            s.talker.node_id,
            s.listener.node_id,
            inst.e2e_latency_ns(&s.stream_id).unwrap_or(0),
            s.traffic.max_latency_ns,
            domains.join(",")
        )
        .unwrap();
    }
}

fn show(out: &mut String, cuc: &Cuc, what: Show) -> Result<(), Failure> {
    match what {
        Show::Streams => {
            writeln!(out, "{:<28} {:>3} {:>10} {:>10} {:>10}  path", "stream", "pcp", "period_ns", "e2e_ns", "max_ns")
                .unwrap();
            for inst in cuc.instances().values().filter(|i| i.status == InstanceStatus::Active) {
                for s in &inst.streams {
                    let mut nodes = vec![s.talker.node_id.as_str()];
                    for seg in &inst.schedules[&s.stream_id] {
                        nodes.extend(seg.hops.iter().map(|h| h.ingress.node.as_str()));
                    }
                    writeln!(
                        out,
                        "{:<28} {:>3} {:>10} {:>10} {:>10}  {}",
                        s.stream_id.as_str(),
                        s.frame.pcp,
                        s.traffic.period_ns,
                        inst.e2e_latency_ns(&s.stream_id).unwrap_or(0),
                        s.traffic.max_latency_ns,
                        nodes.join("-")
                    )
                    .unwrap();
                }
            }
            Ok(())
        }
        Show::Gcl { port } => {
            let port: PortRef = port.parse().map_err(|e| anyhow!("bad port {port}: {e}"))?;
            if cuc.topology().link_at(&port).is_none() {
                return Err(anyhow!("no linked port {port}").into());
            }
            let states = cuc.registry().snapshots();
            let Some(gcl) = states.values().find_map(|s| s.gcls.get(&port)) else {
                writeln!(out, "{port}: no gate control list (all gates open)").unwrap();
                return Ok(());
            };
            writeln!(
                out,
                "{port}: cycle {} ns, base {} ns, scheduled classes {:08b}",
                gcl.cycle_ns, gcl.base_time_ns, gcl.scheduled_classes
            )
            .unwrap();
            writeln!(out, "{:>3}  {:<8}  {:>12}", "#", "gates", "interval_ns").unwrap();
            for (i, e) in gcl.entries.iter().enumerate() {
                writeln!(out, "{i:>3}  {:08b}  {:>12}", e.gate_states, e.interval_ns).unwrap();
            }
            Ok(())
        }
        Show::Config { station } => {
            let mut found = false;
            for inst in cuc.instances().values().filter(|i| i.status == InstanceStatus::Active) {
                for config in inst.configs.iter().filter(|c| c.station_id == station) {
                    writeln!(out, "# {} {}", inst.instance_id, config.interface).unwrap();
                    writeln!(out, "{}", serde_json::to_string_pretty(config).expect("config serializes")).unwrap();
                    found = true;
                }
            }
            if found {
                return Ok(());
            }
            let placed = cuc
                .instances()
                .values()
                .filter(|i| i.status == InstanceStatus::Active)
                .find_map(|i| i.placement.get(&station));
            match placed {
                Some(p) if cuc.topology().node(&p.node_id).is_some_and(|n| !n.is_managed()) => {
                    writeln!(out, "{station}: no config (unmanaged PNF)").unwrap();
                    Ok(())
                }
                Some(_) => {
                    writeln!(out, "{station}: no config (carries no TSN stream)").unwrap();
                    Ok(())
                }
                None => Err(anyhow!("unknown station {station}").into()),
            }
        }
        Show::Audit => {
            for r in cuc.audit() {
                writeln!(
                    out,
                    "{:<8} {:<6} {:<12} {:<12} {}",
                    r.request_id,
                    r.reference_point,
                    r.controller_id.as_str(),
                    r.domain_id.as_str(),
                    r.kind
                )
                .unwrap();
            }
            Ok(())
        }
    }
}

fn render_outcome(out: &mut String, inst: &NsInstance, outcome: &VerifyOutcome) {
    writeln!(out, "verify {}: {}", outcome.instance_id, if outcome.pass { "PASS" } else { "FAIL" }).unwrap();
    for (load, report) in &outcome.runs {
        writeln!(out, "bg_load {load}: horizon {} ns", report.horizon_ns).unwrap();
        for s in &inst.streams {
            if let Some(r) = report.streams.get(&s.stream_id) {
                writeln!(
                    out,
                    "  {:<28} worst {:>10} ns  bound {:>10} ns  frames {:>5}  dropped {}",
                    s.stream_id.as_str(),
                    r.observed_worst_latency_ns,
                    s.traffic.max_latency_ns,
                    r.observed_frame_count,
                    r.dropped_frames
                )
                .unwrap();
            }
        }
        writeln!(out, "  gate violations {}", report.gate_violations()).unwrap();
    }
    for f in &outcome.failures {
        writeln!(out, "failure: {f}").unwrap();
    }
}
