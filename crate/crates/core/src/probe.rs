//! Argument-order inference for black-box raw-send functions.
//!
//! The prober only sees what lands in the capture log. It places a
//! distinguishable sentinel in every argument position, calls the function,
//! and reads the outcome back from the log.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::codec::{ConnectionHandle, HciEvent};
use crate::controller::FIRST_HANDLE;
use crate::dispatch::{DispatchSession, DispatchStatus};
use crate::logger::{LogEntry, LogRecord};

const NO_DEVICE_PREFIX: &str = "ACLPacketToHw No Device Handle 0x";
const REQUEST_SENTINEL: u32 = 0x0172;
const PAYLOAD_TAG: &[u8; 8] = b"RBPROBE:";
/// What a buffer becomes when it lands in an integer slot.
const POINTER_TOKEN: u32 = 0x7FFE_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Data,
    Size,
    Handle,
    Request,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Data, Role::Size, Role::Handle, Role::Request];

    pub fn name(self) -> &'static str {
        match self {
            Role::Data => "data",
            Role::Size => "size",
            Role::Handle => "handle",
            Role::Request => "request",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Bytes(Vec<u8>),
    Word(u32),
}

impl Arg {
    fn as_bytes(&self) -> Vec<u8> {
        match self {
            Arg::Bytes(b) => b.clone(),
            Arg::Word(_) => Vec::new(),
        }
    }

    fn as_word(&self) -> u32 {
        match self {
            Arg::Word(w) => *w,
            Arg::Bytes(b) => POINTER_TOKEN | (b.len() as u32 & 0xFFFF),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feedback {
    Success,
    NoDeviceHandle(u16),
    Malformed,
    Silent,
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Success => f.write_str("Success"),
            Feedback::NoDeviceHandle(h) => write!(f, "NoDeviceHandle(0x{h:X})"),
            Feedback::Malformed => f.write_str("Malformed"),
            Feedback::Silent => f.write_str("Silent"),
        }
    }
}

/// Classifies the records one probe produced.
pub fn classify_feedback(records: &[LogRecord]) -> Feedback {
    let errors: Vec<&str> = records
        .iter()
        .filter_map(|r| match r.entry() {
            LogEntry::Error(text) => Some(text.as_str()),
            _ => None,
        })
        .collect();
    if let Some(h) = errors.iter().find_map(|t| {
        t.strip_prefix(NO_DEVICE_PREFIX)
            .and_then(|hex| u16::from_str_radix(hex.trim(), 16).ok())
    }) {
        return Feedback::NoDeviceHandle(h);
    }
    if !errors.is_empty() {
        return Feedback::Malformed;
    }
    for (i, r) in records.iter().enumerate() {
        let LogEntry::AclSend(sent) = r.entry() else { continue };
        let completed = records[i + 1..].iter().any(|later| match later.entry() {
            LogEntry::Event(ev) => matches!(
                HciEvent::parse(ev),
                HciEvent::NumberOfCompletedPackets(list)
                    if list.iter().any(|&(h, n)| h == sent.handle() && n > 0)
            ),
            _ => false,
        });
        if completed {
            return Feedback::Success;
        }
    }
    Feedback::Silent
}

/// A send function whose parameter order is hidden from the caller.
pub trait BlackBoxCallable {
    fn arity(&self) -> usize;

    fn invoke(&mut self, session: &DispatchSession, args: &[Arg]) -> DispatchStatus;
}

/// The raw ACL send reached through a fixed, hidden parameter order.
///
/// `hidden[i]` is the real role of caller position `i`. Roles that are not
/// exposed take fixed values: a 16-byte payload, its length, the first
/// connection handle and request id 0.
#[derive(Debug, Clone)]
pub struct PermutedAclCall {
    hidden: Vec<Role>,
}

impl PermutedAclCall {
    pub fn new(hidden: Vec<Role>) -> Result<Self, ProbeError> {
        check_roles(&hidden)?;
        Ok(PermutedAclCall { hidden })
    }
}

impl BlackBoxCallable for PermutedAclCall {
    fn arity(&self) -> usize {
        self.hidden.len()
    }

    fn invoke(&mut self, session: &DispatchSession, args: &[Arg]) -> DispatchStatus {
        let slot = |role| {
            self.hidden
                .iter()
                .position(|&r| r == role)
                .and_then(|i| args.get(i))
        };
        let data = slot(Role::Data).map_or_else(default_payload, Arg::as_bytes);
        let size = slot(Role::Size).map_or(data.len() as u32, Arg::as_word);
        let handle = slot(Role::Handle).map_or(u32::from(FIRST_HANDLE), Arg::as_word);
        let request = slot(Role::Request).map_or(0, Arg::as_word);
        session.send_raw_acl_sized(&data, size as usize, handle, request)
    }
}

fn default_payload() -> Vec<u8> {
    Sentinels::payload(0, 16)
}

/// One distinguishable value per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentinels {
    pub data: Vec<u8>,
    pub size: u32,
    pub handle: u32,
    pub request: u32,
}

impl Sentinels {
    /// Picks sentinels around the single live handle `live`, avoiding
    /// `taken` handles. `salt` varies the payload between rounds.
    pub fn choose(live: u16, taken: &BTreeSet<u16>, salt: u8) -> Self {
        let data_len = if live == 16 { 17 } else { 16 };
        let clash = |v: u32| v == u32::from(live) || v == data_len as u32 || taken.contains(&(v as u16));
        let request = (REQUEST_SENTINEL..=u32::from(ConnectionHandle::MAX))
            .chain(1..REQUEST_SENTINEL)
            .find(|&v| !clash(v))
            .expect("handle space is larger than the live set");
        Sentinels {
            data: Self::payload(salt, data_len),
            size: data_len as u32,
            handle: u32::from(live),
            request,
        }
    }

    fn payload(salt: u8, len: usize) -> Vec<u8> {
        let mut p = PAYLOAD_TAG.to_vec();
        p.extend((0..len - PAYLOAD_TAG.len()).map(|i| salt.wrapping_add(i as u8)));
        p
    }

    pub fn arg(&self, role: Role) -> Arg {
        match role {
            Role::Data => Arg::Bytes(self.data.clone()),
            Role::Size => Arg::Word(self.size),
            Role::Handle => Arg::Word(self.handle),
            Role::Request => Arg::Word(self.request),
        }
    }

    /// Which role's sentinel carries the integer `v`.
    pub fn role_of(&self, v: u32) -> Option<Role> {
        [(Role::Size, self.size), (Role::Handle, self.handle), (Role::Request, self.request)]
            .into_iter()
            .find(|&(_, s)| s == v)
            .map(|(r, _)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub candidate: Vec<Role>,
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeVerdict {
    /// Real role of each caller position.
    pub permutation: Vec<Role>,
    pub probes_used: usize,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProbeOptions {
    /// Skip candidates already contradicted by a misplaced handle sentinel.
    pub adaptive: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbeError {
    #[error("roles must be non-empty, distinct and include the handle")]
    BadRoles,
    #[error("callable takes {arity} arguments but {roles} roles were given")]
    ArityMismatch { arity: usize, roles: usize },
    #[error("probing needs exactly one live connection, found {0}")]
    LiveHandles(usize),
    #[error("no argument order produced a successful send")]
    Undecidable { evidence: Vec<Evidence> },
}

fn check_roles(roles: &[Role]) -> Result<(), ProbeError> {
    let distinct: BTreeSet<_> = roles.iter().collect();
    if roles.is_empty() || distinct.len() != roles.len() || !roles.contains(&Role::Handle) {
        return Err(ProbeError::BadRoles);
    }
    Ok(())
}

/// Calls `callable` once with sentinels arranged per `candidate` and
/// classifies what the capture log shows.
pub fn probe_once(
    callable: &mut dyn BlackBoxCallable,
    candidate: &[Role],
    sentinels: &Sentinels,
    session: &DispatchSession,
) -> Feedback {
    let args: Vec<Arg> = candidate.iter().map(|&r| sentinels.arg(r)).collect();
    let from = session.capture().len();
    callable.invoke(session, &args);
    session.settle();
    classify_feedback(&session.capture().since(from))
}

/// All orderings of `roles`, in lexicographic order of their positions in
/// `roles`.
pub fn permutations(roles: &[Role]) -> Vec<Vec<Role>> {
    let mut idx: Vec<usize> = (0..roles.len()).collect();
    let mut out = vec![idx.iter().map(|&i| roles[i]).collect()];
    loop {
        let Some(k) = (1..idx.len()).rev().find(|&k| idx[k - 1] < idx[k]).map(|k| k - 1) else {
            return out;
        };
        let l = (k + 1..idx.len()).rev().find(|&l| idx[k] < idx[l]).expect("pivot exists");
        idx.swap(k, l);
        idx[k + 1..].reverse();
        out.push(idx.iter().map(|&i| roles[i]).collect());
    }
}

/// Finds the real role of every argument position of `callable`.
///
/// `session` must have exactly one live connection. Every probe and the
/// verdict are also written to the capture log as notes.
pub fn infer_arg_order(
    callable: &mut dyn BlackBoxCallable,
    roles: &[Role],
    session: &DispatchSession,
    options: ProbeOptions,
) -> Result<ProbeVerdict, ProbeError> {
    check_roles(roles)?;
    if callable.arity() != roles.len() {
        return Err(ProbeError::ArityMismatch {
            arity: callable.arity(),
            roles: roles.len(),
        });
    }
    let live = session.live_handles();
    let [h] = live[..] else {
        return Err(ProbeError::LiveHandles(live.len()));
    };
    let sentinels = Sentinels::choose(h, &live.iter().copied().collect(), 0);
    let candidates = permutations(roles);
    let total = candidates.len();
    let mut evidence = Vec::new();
    // positions known to hold the real handle parameter
    let mut handle_at: Option<usize> = None;
    for (n, candidate) in candidates.into_iter().enumerate() {
        if options.adaptive && handle_at.is_some_and(|p| candidate[p] != Role::Handle) {
            continue;
        }
        let feedback = probe_once(callable, &candidate, &sentinels, session);
        session.capture().note(format!(
            "probe {}/{total} order ({}) -> {feedback}",
            n + 1,
            join(&candidate)
        ));
        if let Feedback::NoDeviceHandle(v) = feedback {
            if let Some(misplaced) = sentinels.role_of(u32::from(v)) {
                handle_at = candidate.iter().position(|&r| r == misplaced);
            }
        }
        evidence.push(Evidence {
            candidate: candidate.clone(),
            feedback,
        });
        if feedback == Feedback::Success {
            session.capture().note(format!("probe verdict ({})", join(&candidate)));
            return Ok(ProbeVerdict {
                permutation: candidate,
                probes_used: evidence.len(),
                evidence,
            });
        }
    }
    session.capture().note("probe verdict undecidable");
    Err(ProbeError::Undecidable { evidence })
}

fn join(roles: &[Role]) -> String {
    roles.iter().map(|r| r.name()).collect::<Vec<_>>().join(", ")
}

/// Human-readable table of a verdict's evidence trail.
pub fn render_evidence(verdict: &ProbeVerdict) -> String {
    let mut out = String::from("#  order                              result\n");
    for (i, e) in verdict.evidence.iter().enumerate() {
        out.push_str(&format!("{:<2} {:<34} {}\n", i + 1, join(&e.candidate), e.feedback));
    }
    out.push_str(&format!(
        "verdict: ({}) after {} probe(s)\n",
        join(&verdict.permutation),
        verdict.probes_used
    ));
    out
}
