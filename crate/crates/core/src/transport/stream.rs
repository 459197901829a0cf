use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{BackendKind, Link, TransportError};
use crate::codec::{encode_h4, HciPacket, StreamDecoder};
use crate::controller::SharedController;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const POLL: Duration = Duration::from_millis(20);

/// H4 frames over a TCP byte stream.
pub struct StreamLink {
    writer: Mutex<TcpStream>,
    reader: Mutex<(TcpStream, StreamDecoder)>,
    up: AtomicBool,
    settle: Duration,
}

impl StreamLink {
    pub fn connect(addr: &str, settle: Duration) -> Result<Self, TransportError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| TransportError::BadConfig(format!("{addr}: {e}")))?
            .collect();
        let mut last = None;
        for a in &addrs {
            match TcpStream::connect_timeout(a, CONNECT_TIMEOUT) {
                Ok(stream) => return Self::from_stream(stream, settle),
                Err(e) => last = Some(e),
            }
        }
        Err(TransportError::BackendUnavailable(match last {
            Some(e) => format!("{addr}: {e}"),
            None => format!("{addr}: no addresses"),
        }))
    }

    pub fn from_stream(stream: TcpStream, settle: Duration) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(StreamLink {
            writer: Mutex::new(stream),
            reader: Mutex::new((reader, StreamDecoder::new())),
            up: AtomicBool::new(true),
            settle,
        })
    }
}

impl Link for StreamLink {
    fn kind(&self) -> BackendKind {
        BackendKind::FramedStream
    }

    fn send(&self, frame: &[u8]) -> Result<(), TransportError> {
        if !self.is_up() {
            return Err(TransportError::Down);
        }
        let mut w = self.writer.lock().expect("writer lock");
        w.write_all(frame).map_err(|e| {
            self.up.store(false, Ordering::SeqCst);
            TransportError::Io(e)
        })
    }

    fn recv(&self, timeout: Duration) -> Result<Option<HciPacket>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.reader.lock().expect("reader lock");
        let (stream, decoder) = &mut *guard;
        let mut buf = [0u8; 4096];
        loop {
            if let Some(p) = decoder.next_packet()? {
                return Ok(Some(p));
            }
            if !self.is_up() {
                return Err(TransportError::Down);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            stream.set_read_timeout(Some(left))?;
            match stream.read(&mut buf) {
                Ok(0) => {
                    self.up.store(false, Ordering::SeqCst);
                }
                Ok(n) => decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => {
                    self.up.store(false, Ordering::SeqCst);
                    return Err(e.into());
                }
            }
        }
    }

    fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    fn close(&self) {
        self.up.store(false, Ordering::SeqCst);
        let _ = self.writer.lock().expect("writer lock").shutdown(Shutdown::Both);
    }

    fn settle_window(&self) -> Duration {
        self.settle
    }
}

/// Serves a simulated controller to [`StreamLink`] clients.
pub struct StreamServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    clients: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl StreamServer {
    pub fn spawn(bind: &str, controller: SharedController) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let clients = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let stop = stop.clone();
            let clients = clients.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let stop = stop.clone();
                            let controller = controller.clone();
                            let h = std::thread::spawn(move || serve_client(stream, controller, stop));
                            clients.lock().expect("clients lock").push(h);
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                        Err(_) => std::thread::sleep(POLL),
                    }
                }
            })
        };
        Ok(StreamServer {
            local_addr,
            stop,
            accept: Some(accept),
            clients,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for h in self.clients.lock().expect("clients lock").drain(..) {
            let _ = h.join();
        }
    }

    /// Blocks until the server is stopped from another thread or the
    /// accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_client(mut stream: TcpStream, controller: SharedController, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let _ = stream.set_nodelay(true);
    let mut decoder = StreamDecoder::new();
    let mut buf = [0u8; 4096];
    while !stop.load(Ordering::SeqCst) {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => decoder.push(&buf[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                continue
            }
            Err(_) => return,
        }
        let mut out = Vec::new();
        for item in decoder.by_ref() {
            // a malformed frame is dropped; the stream resynchronises after it
            let Ok(packet) = item else { continue };
            let processed = controller.lock().expect("controller lock").process(&packet);
            for ev in processed.events {
                out.extend(encode_h4(&HciPacket::Event(ev)));
            }
        }
        if !out.is_empty() && stream.write_all(&out).is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CommandPacket, Opcode};
    use crate::controller::{Controller, ControllerProfile};
    use crate::transport::TransportSession;

    #[test]
    fn loopback_round_trip() {
        let server = StreamServer::spawn(
            "127.0.0.1:0",
            Controller::new(ControllerProfile::default()).shared(),
        )
        .unwrap();
        let link = StreamLink::connect(&server.local_addr().to_string(), Duration::from_millis(100)).unwrap();
        let session = TransportSession::new(link);
        // split one frame across two writes
        let frame = encode_h4(&HciPacket::Command(CommandPacket::new(Opcode::READ_BD_ADDR, vec![]).unwrap()));
        session.send_frame(&frame[..2]).unwrap();
        std::thread::sleep(Duration::from_millis(30));
        session.send_frame(&frame[2..]).unwrap();
        let got = session.drain().unwrap();
        assert_eq!(got.len(), 1);
        assert!(matches!(&got[0], HciPacket::Event(e) if e.code() == 0x0E));
    }

    #[test]
    fn refused_connection_is_unavailable() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let err = StreamLink::connect(&format!("127.0.0.1:{port}"), Duration::ZERO).err().unwrap();
        assert!(matches!(err, TransportError::BackendUnavailable(_)));
        let err = StreamLink::connect("not an address", Duration::ZERO).err().unwrap();
        assert!(matches!(err, TransportError::BadConfig(_)));
    }

    #[test]
    fn server_shutdown_marks_link_down() {
        let mut server = StreamServer::spawn(
            "127.0.0.1:0",
            Controller::new(ControllerProfile::default()).shared(),
        )
        .unwrap();
        let link = StreamLink::connect(&server.local_addr().to_string(), Duration::from_millis(50)).unwrap();
        std::thread::sleep(Duration::from_millis(50));
        server.shutdown();
        let deadline = Instant::now() + Duration::from_secs(2);
        while link.is_up() && Instant::now() < deadline {
            let _ = link.recv(Duration::from_millis(50));
        }
        assert!(!link.is_up());
    }
}
