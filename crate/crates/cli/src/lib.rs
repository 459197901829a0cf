//! Interactive shell and batch runner over a raw HCI/ACL session.

use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use rawblue_core::codec::{raw_command_buffer, BdAddr, ConnectionHandle, HciEvent, Opcode};
use rawblue_core::controller::{parse_name_field, Controller, ControllerProfile, MAX_RAM_TRANSFER};
use rawblue_core::dispatch::{DispatchSession, DispatchStatus};
use rawblue_core::logger::{render_text, write_capture_file, CaptureSink, LogEntry, LogRecord};
use rawblue_core::probe::{infer_arg_order, render_evidence, PermutedAclCall, ProbeOptions, Role};
use rawblue_core::transport::{open_transport, StreamServer, TransportConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMMAND_FAILED: i32 = 1;
pub const EXIT_SETUP_FAILED: i32 = 2;

const DEMO_PEER: BdAddr = BdAddr([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0xFF]);

#[derive(Debug, Parser)]
#[command(name = "rawblue", version, about = "Raw HCI/ACL shell over a simulated or remote controller")]
pub struct Cli {
    /// sim, sim:<seed>, stream:<host>:<port>, replay:<file> or replay-timed:<file>
    #[arg(long, default_value = "sim")]
    pub transport: String,
    /// Controller profile file (key = value lines)
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Write the capture log here on exit
    #[arg(long)]
    pub capture: Option<PathBuf>,
    /// Seed for the simulated controller and capture clock
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interactive prompt (default)
    Repl,
    /// Run a script of shell commands, one per line
    Batch { script: PathBuf },
    /// Serve a simulated controller over TCP
    Serve { addr: String },
}

#[derive(Debug, Error)]
pub enum ShellError {
    #[error("usage: {0}")]
    Usage(&'static str),
    #[error("{0}")]
    Parse(String),
    #[error("status {status}: {message}")]
    Status { status: DispatchStatus, message: String },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Quit,
}

const HELP: &str = "\
connect <bdaddr>                 open an ACL connection
disconnect <handle>              close it again
sendhcicmd <ogf> <ocf> [hex]     send a raw HCI command
sendaclcmd <handle> <hex>        send raw ACL data
writeram <addr> <hex>            vendor RAM write
readram <addr> <len>             vendor RAM read
launchram <addr>                 vendor RAM launch
readname                         read the local name
log [tail [n]|export <file>]     show or save the capture
probe demo [2|3|4]               infer a hidden argument order
quit";

/// Bytes from hex text, spaced or contiguous, with an optional `0x`.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, ShellError> {
    let joined: String = text
        .split(|c: char| c.is_whitespace() || c == ':')
        .map(|t| t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t))
        .collect();
    hex::decode(&joined).map_err(|e| ShellError::Parse(format!("bad hex {text:?}: {e}")))
}

/// A hex number with or without `0x`.
pub fn parse_hex_number(text: &str) -> Result<u32, ShellError> {
    let digits = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")).unwrap_or(text);
    u32::from_str_radix(digits, 16).map_err(|_| ShellError::Parse(format!("bad hex number {text:?}")))
}

/// Decimal, or hex with `0x`.
pub fn parse_count(text: &str) -> Result<usize, ShellError> {
    let parsed = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(h) => usize::from_str_radix(h, 16),
        None => text.parse(),
    };
    parsed.map_err(|_| ShellError::Parse(format!("bad count {text:?}")))
}

pub struct Shell<W: Write> {
    session: DispatchSession,
    profile: ControllerProfile,
    out: W,
    printed: usize,
    next_request: u32,
}

impl<W: Write> Shell<W> {
    pub fn new(session: DispatchSession, profile: ControllerProfile, out: W) -> Self {
        Shell {
            session,
            profile,
            out,
            printed: 0,
            next_request: 1,
        }
    }

    pub fn session(&self) -> &DispatchSession {
        &self.session
    }

    pub fn capture(&self) -> &CaptureSink {
        self.session.capture()
    }

    pub fn into_output(self) -> W {
        self.out
    }

    /// Prints capture records that arrived since the last call.
    pub fn flush_pending(&mut self) -> io::Result<()> {
        let fresh = self.capture().since(self.printed);
        self.printed += fresh.len();
        for r in &fresh {
            writeln!(self.out, "{}", render_text(r))?;
        }
        Ok(())
    }

    fn request_id(&mut self) -> u32 {
        let id = self.next_request;
        self.next_request = self.next_request.wrapping_add(1);
        id
    }

    /// Sends a raw command, waits for the controller and returns the
    /// records it produced.
    fn command(&mut self, op: Opcode, params: &[u8]) -> Result<Vec<LogRecord>, ShellError> {
        let buf = raw_command_buffer(op, params).map_err(|e| ShellError::Parse(e.to_string()))?;
        let from = self.capture().len();
        let request = self.request_id();
        let status = self.session.send_raw_command(request, &buf);
        self.session.settle();
        let records = self.capture().since(from);
        self.flush_pending()?;
        if !status.is_success() {
            return Err(ShellError::Status {
                status,
                message: format!("{} refused", op.name().unwrap_or("command")),
            });
        }
        Ok(records)
    }

    fn return_params(records: &[LogRecord], op: Opcode) -> Result<Vec<u8>, ShellError> {
        let ret = records
            .iter()
            .find_map(|r| match r.entry() {
                LogEntry::Event(e) => match HciEvent::parse(e) {
                    HciEvent::CommandComplete { opcode, return_params } if opcode == op => Some(return_params),
                    _ => None,
                },
                _ => None,
            })
            .ok_or_else(|| ShellError::Failed(format!("no Command Complete for {op}")))?;
        match ret.first() {
            Some(0) => Ok(ret),
            Some(st) => Err(ShellError::Failed(format!("{op} failed with status 0x{st:02X}"))),
            None => Err(ShellError::Failed(format!("empty Command Complete for {op}"))),
        }
    }

    /// Runs one shell line.
    pub fn execute(&mut self, line: &str) -> Result<Flow, ShellError> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(Flow::Continue);
        }
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let args: Vec<&str> = rest.split_whitespace().collect();
        match cmd {
            "quit" | "exit" => return Ok(Flow::Quit),
            "help" => writeln!(self.out, "{HELP}")?,
            "connect" => self.connect(&args)?,
            "disconnect" => self.disconnect(&args)?,
            "sendhcicmd" => self.send_hci(&args)?,
            "sendaclcmd" => self.send_acl(&args)?,
            "writeram" => self.write_ram(&args)?,
            "readram" => self.read_ram(&args)?,
            "launchram" => self.launch_ram(&args)?,
            "readname" => self.read_name()?,
            "log" => self.log(&args)?,
            "probe" => self.probe(&args)?,
            other => return Err(ShellError::Parse(format!("unknown command {other:?}; try help"))),
        }
        Ok(Flow::Continue)
    }

    fn connect(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let [addr] = args else {
            return Err(ShellError::Usage("connect <bdaddr>"));
        };
        let peer: BdAddr = addr.parse().map_err(|e| ShellError::Parse(format!("{e}")))?;
        let handle = self.open_connection(peer)?;
        writeln!(self.out, "connected {peer} handle {handle}")?;
        Ok(())
    }

    fn open_connection(&mut self, peer: BdAddr) -> Result<ConnectionHandle, ShellError> {
        let mut params = peer.to_le_bytes().to_vec();
        // packet type, page scan mode, reserved, clock offset, allow role switch
        params.extend([0x18, 0xCC, 0x01, 0x00, 0x00, 0x00, 0x01]);
        let records = self.command(Opcode::CREATE_CONNECTION, &params)?;
        let mut refused = None;
        for r in &records {
            let LogEntry::Event(e) = r.entry() else { continue };
            match HciEvent::parse(e) {
                HciEvent::ConnectionComplete { status: 0, handle, .. } => return Ok(handle),
                HciEvent::ConnectionComplete { status, .. } | HciEvent::CommandStatus { status, .. }
                    if status != 0 =>
                {
                    refused = Some(status)
                }
                _ => {}
            }
        }
        Err(ShellError::Failed(match refused {
            Some(st) => format!("connection to {peer} refused with status 0x{st:02X}"),
            None => format!("no Connection Complete for {peer}"),
        }))
    }

    fn disconnect(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let [h] = args else {
            return Err(ShellError::Usage("disconnect <handle>"));
        };
        let h = parse_hex_number(h)? as u16;
        let mut params = h.to_le_bytes().to_vec();
        params.push(0x13);
        let records = self.command(Opcode::DISCONNECT, &params)?;
        let done = records.iter().any(|r| {
            matches!(r.entry(), LogEntry::Event(e)
                if matches!(HciEvent::parse(e), HciEvent::DisconnectionComplete { status: 0, .. }))
        });
        if !done {
            return Err(ShellError::Failed(format!("handle 0x{h:04X} not disconnected")));
        }
        Ok(())
    }

    fn send_hci(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let (ogf, ocf, params) = match args {
            [ogf, ocf, hex @ ..] => (parse_hex_number(ogf)?, parse_hex_number(ocf)?, parse_hex(&hex.join(""))?),
            _ => return Err(ShellError::Usage("sendhcicmd <ogf> <ocf> [hexparams]")),
        };
        let op = u16::try_from(ogf)
            .ok()
            .zip(u16::try_from(ocf).ok())
            .and_then(|(g, c)| Opcode::new(g, c).ok())
            .ok_or_else(|| ShellError::Parse(format!("no opcode for ogf 0x{ogf:X} ocf 0x{ocf:X}")))?;
        self.command(op, &params)?;
        Ok(())
    }

    fn send_acl(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let (handle, data) = match args {
            [h, hex @ ..] if !hex.is_empty() => (parse_hex_number(h)?, parse_hex(&hex.join(""))?),
            _ => return Err(ShellError::Usage("sendaclcmd <handle> <hexpayload>")),
        };
        let request = self.request_id();
        let status = self.session.send_raw_acl(&data, handle, request);
        self.session.settle();
        self.flush_pending()?;
        if !status.is_success() {
            return Err(ShellError::Status {
                status,
                message: format!("ACL data on handle 0x{handle:04X} not sent"),
            });
        }
        Ok(())
    }

    fn write_ram(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let (addr, data) = match args {
            [a, hex @ ..] if !hex.is_empty() => (parse_hex_number(a)?, parse_hex(&hex.join(""))?),
            _ => return Err(ShellError::Usage("writeram <addr> <hex>")),
        };
        let op = self.profile.vendor.write_ram;
        for (i, chunk) in data.chunks(MAX_RAM_TRANSFER).enumerate() {
            let mut params = addr.wrapping_add((i * MAX_RAM_TRANSFER) as u32).to_le_bytes().to_vec();
            params.extend(chunk);
            let records = self.command(op, &params)?;
            Self::return_params(&records, op)?;
        }
        writeln!(self.out, "wrote {} byte(s) at 0x{addr:08X}", data.len())?;
        Ok(())
    }

    fn read_ram(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let [addr, len] = args else {
            return Err(ShellError::Usage("readram <addr> <len>"));
        };
        let (addr, len) = (parse_hex_number(addr)?, parse_count(len)?);
        let op = self.profile.vendor.read_ram;
        let mut bytes = Vec::<u8>::with_capacity(len);
        while bytes.len() < len {
            let n = (len - bytes.len()).min(MAX_RAM_TRANSFER);
            let mut params = addr.wrapping_add(bytes.len() as u32).to_le_bytes().to_vec();
            params.push(n as u8);
            let records = self.command(op, &params)?;
            bytes.extend(&Self::return_params(&records, op)?[1..]);
        }
        for (i, row) in bytes.chunks(16).enumerate() {
            let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
            writeln!(self.out, "{:08x}  {}", addr.wrapping_add(16 * i as u32), hex.join(" "))?;
        }
        Ok(())
    }

    fn launch_ram(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let [addr] = args else {
            return Err(ShellError::Usage("launchram <addr>"));
        };
        let addr = parse_hex_number(addr)?;
        let op = self.profile.vendor.launch_ram;
        let records = self.command(op, &addr.to_le_bytes())?;
        Self::return_params(&records, op)?;
        writeln!(self.out, "launched 0x{addr:08X}")?;
        Ok(())
    }

    fn read_name(&mut self) -> Result<(), ShellError> {
        let records = self.command(Opcode::READ_LOCAL_NAME, &[])?;
        let ret = Self::return_params(&records, Opcode::READ_LOCAL_NAME)?;
        let name = parse_name_field(&ret).ok_or_else(|| ShellError::Failed("unreadable name".into()))?;
        writeln!(self.out, "local name {name:?}")?;
        Ok(())
    }

    fn log(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let records = match args {
            [] => self.capture().snapshot(),
            ["tail"] => self.capture().tail(10),
            ["tail", n] => self.capture().tail(parse_count(n)?),
            ["export", file] => {
                let records = self.capture().snapshot();
                write_capture_file(file, &records)?;
                writeln!(self.out, "exported {} record(s) to {file}", records.len())?;
                return Ok(());
            }
            _ => return Err(ShellError::Usage("log [tail [n]|export <file>]")),
        };
        for r in &records {
            writeln!(self.out, "{}", render_text(r))?;
        }
        Ok(())
    }

    fn probe(&mut self, args: &[&str]) -> Result<(), ShellError> {
        let roles: Vec<Role> = match args {
            ["demo"] | ["demo", "4"] => Role::ALL.to_vec(),
            ["demo", "3"] => vec![Role::Data, Role::Handle, Role::Request],
            ["demo", "2"] => vec![Role::Handle, Role::Request],
            _ => return Err(ShellError::Usage("probe demo [2|3|4]")),
        };
        if self.session.live_handles().is_empty() {
            let handle = self.open_connection(DEMO_PEER)?;
            writeln!(self.out, "connected {DEMO_PEER} handle {handle}")?;
        }
        // the documented order with handle and request trading places
        let hidden: Vec<Role> = roles
            .iter()
            .map(|r| match r {
                Role::Handle => Role::Request,
                Role::Request => Role::Handle,
                other => *other,
            })
            .collect();
        let mut callable = PermutedAclCall::new(hidden).map_err(|e| ShellError::Failed(e.to_string()))?;
        let verdict = infer_arg_order(&mut callable, &roles, &self.session, ProbeOptions::default());
        self.flush_pending()?;
        let verdict = verdict.map_err(|e| ShellError::Failed(e.to_string()))?;
        write!(self.out, "{}", render_evidence(&verdict))?;
        Ok(())
    }
}

/// Turns flags into a profile and an open dispatch session.
pub fn open_session(cli: &Cli) -> Result<(DispatchSession, ControllerProfile), String> {
    let mut profile = match &cli.profile {
        Some(path) => ControllerProfile::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => ControllerProfile::default(),
    };
    let mut config: TransportConfig = cli.transport.parse().map_err(|e| format!("{e}"))?;
    if let TransportConfig::Sim(from_flag) = &config {
        if cli.profile.is_none() {
            profile.seed = from_flag.seed;
        }
    }
    if let Some(seed) = cli.seed {
        profile.seed = seed;
    }
    if let TransportConfig::Sim(p) = &mut config {
        *p = profile.clone();
    }
    let transport = open_transport(config).map_err(|e| e.to_string())?;
    let capture = match cli.seed {
        Some(seed) => CaptureSink::simulated(seed),
        None => CaptureSink::system(),
    };
    let session = DispatchSession::new(transport, capture).with_acl_mtu(usize::from(profile.acl_buffer_size));
    Ok((session, profile))
}

fn export(shell: &Shell<impl Write>, path: Option<&Path>) -> Result<(), String> {
    match path {
        Some(p) => write_capture_file(p, &shell.capture().snapshot()).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(()),
    }
}

/// Executes a script; the error names the failing line.
pub fn run_batch<W: Write>(shell: &mut Shell<W>, script: &str) -> Result<(), (usize, ShellError)> {
    for (i, line) in script.lines().enumerate() {
        match shell.execute(line) {
            Ok(Flow::Continue) => {}
            Ok(Flow::Quit) => break,
            Err(e) => return Err((i + 1, e)),
        }
    }
    Ok(())
}

/// Reads commands from `input` until it ends or `quit`. Errors are reported
/// and the loop carries on.
pub fn run_repl<W: Write>(shell: &mut Shell<W>, input: impl BufRead, prompt: bool) -> io::Result<()> {
    let mut lines = input.lines();
    loop {
        shell.flush_pending()?;
        if prompt {
            write!(shell.out, "rawblue> ")?;
            shell.out.flush()?;
        }
        let Some(line) = lines.next().transpose()? else {
            return Ok(());
        };
        match shell.execute(&line) {
            Ok(Flow::Continue) => {}
            Ok(Flow::Quit) => return Ok(()),
            Err(e) => writeln!(shell.out, "error: {e}")?,
        }
    }
}

/// The whole program behind `main`, returning the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(Command::Serve { addr }) = &cli.command {
        return serve(&cli, addr);
    }
    let script = match &cli.command {
        Some(Command::Batch { script }) => match std::fs::read_to_string(script) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("rawblue: {}: {e}", script.display());
                return EXIT_SETUP_FAILED;
            }
        },
        _ => None,
    };
    let (session, profile) = match open_session(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("rawblue: {e}");
            return EXIT_SETUP_FAILED;
        }
    };
    let mut shell = Shell::new(session, profile, io::stdout().lock());
    let mut code = EXIT_OK;
    match script {
        Some(script) => {
            if let Err((line, e)) = run_batch(&mut shell, &script) {
                eprintln!("rawblue: line {line}: {e}");
                code = EXIT_COMMAND_FAILED;
            }
        }
        None => {
            let stdin = io::stdin();
            let prompt = stdin.is_terminal();
            if let Err(e) = run_repl(&mut shell, stdin.lock(), prompt) {
                eprintln!("rawblue: {e}");
                code = EXIT_COMMAND_FAILED;
            }
        }
    }
    if let Err(e) = export(&shell, cli.capture.as_deref()) {
        eprintln!("rawblue: {e}");
        return EXIT_SETUP_FAILED;
    }
    code
}

fn serve(cli: &Cli, addr: &str) -> i32 {
    let mut profile = match &cli.profile {
        Some(path) => match ControllerProfile::load(path) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("rawblue: {}: {e}", path.display());
                return EXIT_SETUP_FAILED;
            }
        },
        None => ControllerProfile::default(),
    };
    if let Some(seed) = cli.seed {
        profile.seed = seed;
    }
    match StreamServer::spawn(addr, Controller::new(profile).shared()) {
        Ok(server) => {
            println!("serving simulated controller on {}", server.local_addr());
            server.wait();
            EXIT_OK
        }
        Err(e) => {
            eprintln!("rawblue: {addr}: {e}");
            EXIT_SETUP_FAILED
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_forms() {
        assert_eq!(parse_hex("00 11 22").unwrap(), [0, 0x11, 0x22]);
        assert_eq!(parse_hex("001122").unwrap(), [0, 0x11, 0x22]);
        assert_eq!(parse_hex("0x0011 22").unwrap(), [0, 0x11, 0x22]);
        assert_eq!(parse_hex("").unwrap(), Vec::<u8>::new());
        assert!(parse_hex("0").is_err());
        assert!(parse_hex("zz").is_err());
        assert_eq!(parse_hex_number("0172").unwrap(), 0x172);
        assert_eq!(parse_hex_number("0x000B").unwrap(), 0xB);
        assert!(parse_hex_number("0x").is_err());
        assert_eq!(parse_count("4").unwrap(), 4);
        assert_eq!(parse_count("0x10").unwrap(), 16);
    }

    fn shell() -> Shell<Vec<u8>> {
        let cli = Cli::parse_from(["rawblue", "--seed", "1"]);
        let (session, profile) = open_session(&cli).unwrap();
        Shell::new(session, profile, Vec::new())
    }

    #[test]
    fn comments_blank_lines_and_quit() {
        let mut s = shell();
        assert_eq!(s.execute("   ").unwrap(), Flow::Continue);
        assert_eq!(s.execute("# nothing").unwrap(), Flow::Continue);
        assert_eq!(s.execute("quit").unwrap(), Flow::Quit);
        assert!(s.capture().is_empty());
    }

    #[test]
    fn usage_errors() {
        let mut s = shell();
        assert!(matches!(s.execute("connect"), Err(ShellError::Usage(_))));
        assert!(matches!(s.execute("readram 1"), Err(ShellError::Usage(_))));
        assert!(matches!(s.execute("bogus"), Err(ShellError::Parse(_))));
        assert!(matches!(s.execute("sendhcicmd 40 0"), Err(ShellError::Parse(_))));
    }

    #[test]
    fn fresh_ram_reads_zero() {
        let mut s = shell();
        s.execute("readram 200000 4").unwrap();
        let out = String::from_utf8(s.into_output()).unwrap();
        assert!(out.ends_with("00200000  00 00 00 00\n"), "{out}");
    }

    #[test]
    fn ram_round_trip_across_chunks() {
        let mut s = shell();
        let data: String = (0..600).map(|i| format!("{:02x}", i % 251)).collect();
        s.execute(&format!("writeram 0x210000 {data}")).unwrap();
        s.execute("readram 210000 600").unwrap();
        let out = String::from_utf8(s.into_output()).unwrap();
        assert!(out.contains("002100f0  f0 f1 f2 f3 f4 f5 f6 f7 f8 f9 fa 00 01 02 03 04"), "{out}");
        assert!(out.contains("00210250  5a 5b 5c 5d 5e 5f 60 61\n"), "{out}");
    }
}
