use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{decode, encode, FailureCause, UniMessage, UniResponse};
use crate::cnc::{Cnc, CncState};
use crate::model::DomainId;
use crate::topology::Topology;

/// The CNCs of every topology domain behind one UNI endpoint.
///
/// Requests are processed one at a time regardless of how many connections
/// are open.
#[derive(Debug)]
pub struct UniService {
    cncs: Mutex<BTreeMap<DomainId, Cnc>>,
}

impl UniService {
    pub fn new(topology: Arc<Topology>) -> Self {
        let cncs = topology
            .domains
            .keys()
            .map(|d| (d.clone(), Cnc::new(d.clone(), topology.clone())))
            .collect();
        UniService {
            cncs: Mutex::new(cncs),
        }
    }

    /// Answer one encoded request line with one encoded response line.
    pub fn handle_line(&self, line: &[u8]) -> Vec<u8> {
        let response = match decode(line) {
            Err(e) => UniResponse::failed("", FailureCause::Malformed, e.to_string()),
            Ok(UniMessage::Response(r)) => UniResponse::failed(
                r.request_id,
                FailureCause::Malformed,
                "responses are not accepted here",
            ),
            Ok(message) => {
                let request = message.into_request().expect("non-response message");
                let mut cncs = self.cncs.lock().unwrap_or_else(|e| e.into_inner());
                match cncs.get_mut(request.domain_id()) {
                    Some(cnc) => cnc.handle(&request),
                    None => UniResponse::failed(
                        request.request_id(),
                        FailureCause::UnknownDomain,
                        format!("domain {} is not served here", request.domain_id()),
                    ),
                }
            }
        };
        encode(&UniMessage::Response(response))
    }

    pub fn states(&self) -> BTreeMap<DomainId, CncState> {
        let cncs = self.cncs.lock().unwrap_or_else(|e| e.into_inner());
        cncs.iter().map(|(d, c)| (d.clone(), c.state().clone())).collect()
    }

    fn serve_connection(&self, stream: TcpStream, shutdown: &AtomicBool) -> io::Result<()> {
        stream.set_read_timeout(Some(Duration::from_millis(100)))?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut line = Vec::new();
        loop {
            match reader.read_until(b'\n', &mut line) {
                Ok(0) => return Ok(()),
                Ok(_) if line.ends_with(b"\n") => {
                    writer.write_all(&self.handle_line(&line))?;
                    writer.flush()?;
                    line.clear();
                }
                Ok(_) => {
                    // Peer closed mid-line: answer what arrived, then stop.
                    writer.write_all(&self.handle_line(&line))?;
                    return Ok(());
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if shutdown.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Accept connections until `shutdown` is raised, one thread per connection.
pub fn serve(listener: TcpListener, service: Arc<UniService>, shutdown: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let service = service.clone();
                let shutdown = shutdown.clone();
                workers.push(thread::spawn(move || {
                    let _ = service.serve_connection(stream, &shutdown);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(e),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}
