use std::time::Duration;

use super::{InProcessLink, StreamLink, StreamServer, TransportError, TransportSession};
use crate::codec::HciPacket;
use crate::controller::{Controller, ControllerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendSpec {
    InProcess,
    /// A loopback TCP server in front of its own simulated controller.
    StreamLoopback { settle: Duration },
}

/// Inbound packets observed after each scenario step.
pub type Transcript = Vec<Vec<HciPacket>>;

/// Runs one scenario against each backend, every backend getting a fresh
/// controller built from `profile`.
pub fn transport_equivalence_harness(
    profile: &ControllerProfile,
    scenario: &[HciPacket],
    backends: &[BackendSpec],
) -> Result<Vec<Transcript>, TransportError> {
    backends
        .iter()
        .map(|spec| {
            let controller = Controller::new(profile.clone()).shared();
            let (session, _server) = match *spec {
                BackendSpec::InProcess => (TransportSession::new(InProcessLink::new(controller)), None),
                BackendSpec::StreamLoopback { settle } => {
                    let server = StreamServer::spawn("127.0.0.1:0", controller)?;
                    let link = StreamLink::connect(&server.local_addr().to_string(), settle)?;
                    (TransportSession::new(link), Some(server))
                }
            };
            let transcript = scenario
                .iter()
                .map(|step| {
                    session.send(step)?;
                    session.drain()
                })
                .collect::<Result<Transcript, _>>();
            session.close();
            transcript
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CommandPacket, Opcode};

    #[test]
    fn backends_agree_on_a_short_scenario() {
        let scenario: Vec<HciPacket> = [Opcode::RESET, Opcode::READ_BD_ADDR, Opcode::READ_LOCAL_NAME]
            .into_iter()
            .map(|op| CommandPacket::new(op, vec![]).unwrap().into())
            .collect();
        let out = transport_equivalence_harness(
            &ControllerProfile::with_seed(5),
            &scenario,
            &[
                BackendSpec::InProcess,
                BackendSpec::StreamLoopback {
                    settle: Duration::from_millis(100),
                },
            ],
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], out[1]);
        assert!(out[0].iter().all(|step| step.len() == 1));
    }
}
