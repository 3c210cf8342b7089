//! Deterministic in-memory message passing between Alice, Bob and Sonai.
//!
//! Time advances in ticks. Each tick delivers every due message (links in id
//! order, FIFO within a link), then lets Alice, the first mover and the
//! second mover act in that order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::epr::{self, SimRng, SpinOutcome};
use crate::protocol::{
    decode, measure_all, AbortReason, CandidateTracker, DecodeResult, PreparedBlock,
    ProtocolConfig, RevealCursor, RevealEvent, Role, SessionOutcome, Transcript,
};

pub const DEFAULT_TIMEOUT_TICKS: u64 = 8;
pub const DEFAULT_LINK_DELAY: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartyId {
    Alice,
    Bob,
    Sonai,
}

impl From<Role> for PartyId {
    fn from(r: Role) -> Self {
        match r {
            Role::Bob => PartyId::Bob,
            Role::Sonai => PartyId::Sonai,
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartyId::Alice => "alice",
            PartyId::Bob => "bob",
            PartyId::Sonai => "sonai",
        })
    }
}

/// How a receiver behaves when it is its turn to disclose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    /// Stops disclosing after this many own reveals.
    WithholdAfter(usize),
    /// Discloses everything at its first opportunity.
    BatchDump,
    /// Follows the schedule but flips each disclosed outcome with this probability.
    LieWithProb(f64),
}

impl Strategy {
    pub fn validate(&self, n: usize) -> Result<(), String> {
        match *self {
            Strategy::WithholdAfter(k) if k > n => Err(format!("withhold count {k} exceeds n = {n}")),
            Strategy::LieWithProb(p) if !(0.0..=1.0).contains(&p) => {
                Err(format!("lie probability {p} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    fn will_send_more(&self, cursor: &RevealCursor) -> bool {
        match *self {
            _ if cursor.remaining() == 0 => false,
            Strategy::WithholdAfter(k) => cursor.revealed() < k,
            _ => true,
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    /// `honest`, `withhold:K`, `batch`, `lie:P`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let arg_err = || format!("strategy {s:?} needs an argument");
        match (name.to_ascii_lowercase().as_str(), arg) {
            ("honest", None) => Ok(Strategy::Honest),
            ("batch" | "batchdump" | "batch-dump", None) => Ok(Strategy::BatchDump),
            ("withhold", Some(k)) => k
                .parse()
                .map(Strategy::WithholdAfter)
                .map_err(|e| format!("bad withhold count {k:?}: {e}")),
            ("lie", Some(p)) => {
                let p: f64 = p.parse().map_err(|e| format!("bad lie probability {p:?}: {e}"))?;
                if (0.0..=1.0).contains(&p) {
                    Ok(Strategy::LieWithProb(p))
                } else {
                    Err(format!("lie probability {p} outside [0, 1]"))
                }
            }
            ("withhold" | "lie", None) => Err(arg_err()),
            _ => Err(format!(
                "unknown strategy {s:?} (expected honest, withhold:K, batch, lie:P)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Honest => f.write_str("honest"),
            Strategy::WithholdAfter(k) => write!(f, "withhold:{k}"),
            Strategy::BatchDump => f.write_str("batch"),
            Strategy::LieWithProb(p) => write!(f, "lie:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessPolicy {
    /// How many reveals a party may be ahead of what it has received.
    pub one_ahead_limit: usize,
    /// Consecutive idle ticks before giving up.
    pub timeout_ticks: u64,
}

impl Default for FairnessPolicy {
    fn default() -> Self {
        FairnessPolicy {
            one_ahead_limit: 1,
            timeout_ticks: DEFAULT_TIMEOUT_TICKS,
        }
    }
}

impl FairnessPolicy {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.one_ahead_limit < 1 {
            return Err("one-ahead limit must be at least 1");
        }
        if self.timeout_ticks < 1 {
            return Err("timeout must be at least 1 tick");
        }
        Ok(())
    }
}

/// What a receiver knows when deciding whether to disclose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FairnessView {
    pub sent: usize,
    pub received: usize,
    pub first_mover: bool,
    pub idle_ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessDecision {
    Proceed,
    Stall,
    Abort(AbortReason),
}

/// One-ahead rule: the first mover may be `limit` reveals ahead of what it
/// has received, the second mover `limit - 1`. Extra reveals received from
/// the counterpart are simply accepted.
pub fn enforce_fairness(policy: &FairnessPolicy, view: &FairnessView) -> FairnessDecision {
    if view.idle_ticks >= policy.timeout_ticks {
        return FairnessDecision::Abort(AbortReason::Timeout);
    }
    let handicap = usize::from(!view.first_mover);
    if view.sent + handicap >= view.received + policy.one_ahead_limit {
        FairnessDecision::Stall
    } else {
        FairnessDecision::Proceed
    }
}

/// Reveals emitted by `strategy` this tick.
pub fn apply_strategy<R: Rng + ?Sized>(
    cursor: &mut RevealCursor,
    strategy: &Strategy,
    decision: FairnessDecision,
    rng: &mut R,
    round: &mut u64,
) -> Vec<RevealEvent> {
    let proceed = decision == FairnessDecision::Proceed;
    match *strategy {
        Strategy::Honest if proceed => cursor.reveal_next(round).into_iter().collect(),
        Strategy::WithholdAfter(k) if proceed && cursor.revealed() < k => {
            cursor.reveal_next(round).into_iter().collect()
        }
        Strategy::BatchDump => std::iter::from_fn(|| cursor.reveal_next(round)).collect(),
        Strategy::LieWithProb(p) if proceed => cursor
            .reveal_next(round)
            .map(|mut e| {
                if rng.gen_bool(p) {
                    e.outcome = -e.outcome;
                }
                e
            })
            .into_iter()
            .collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    /// The receiver's particles; measuring them yields these outcomes.
    Delivery(Vec<SpinOutcome>),
    Reveal(RevealEvent),
    DecodeAnnounce(DecodeResult),
    Abort(AbortReason),
}

impl MessageKind {
    fn name(&self) -> &'static str {
        match self {
            MessageKind::Delivery(_) => "delivery",
            MessageKind::Reveal(_) => "reveal",
            MessageKind::DecodeAnnounce(_) => "decode_announce",
            MessageKind::Abort(_) => "abort",
        }
    }

    fn summary(&self) -> String {
        match self {
            MessageKind::Delivery(v) => format!("particles={}", v.len()),
            MessageKind::Reveal(e) => {
                format!("round={} position={} outcome={}", e.round, e.position, e.outcome)
            }
            MessageKind::DecodeAnnounce(r) => match r.bits {
                Some(b) => format!("status={} bits={} confidence={}", r.status, b, r.confidence),
                None => format!("status={} confidence={}", r.status, r.confidence),
            },
            MessageKind::Abort(r) => format!("reason={r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub sender: PartyId,
    pub receiver: PartyId,
}

#[derive(Debug, Clone)]
struct Queued {
    due: u64,
    seq: u64,
    msg: WireMessage,
}

/// FIFO queue for one ordered party pair.
#[derive(Debug, Clone)]
pub struct Link {
    pub from: PartyId,
    pub to: PartyId,
    pub delay: u64,
    queue: VecDeque<Queued>,
    next_seq: u64,
    delivered: u64,
}

impl Link {
    fn new(from: PartyId, to: PartyId, delay: u64) -> Self {
        Link {
            from,
            to,
            delay,
            queue: VecDeque::new(),
            next_seq: 0,
            delivered: 0,
        }
    }

    pub fn name(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub link: String,
    pub kind: String,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub payload_summary: String,
}

pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
struct Receiver {
    strategy: Strategy,
    first_mover: bool,
    rng: SimRng,
    cursor: Option<RevealCursor>,
    tracker: Option<CandidateTracker>,
    received: usize,
    idle_ticks: u64,
    active: bool,
    result: Option<DecodeResult>,
}

impl Receiver {
    fn sent(&self) -> usize {
        self.cursor.as_ref().map_or(0, RevealCursor::revealed)
    }
}

const LINK_ALICE_BOB: usize = 0;
const LINK_ALICE_SONAI: usize = 1;
const LINK_BOB_SONAI: usize = 2;
const LINK_SONAI_BOB: usize = 3;

fn role_index(r: Role) -> usize {
    match r {
        Role::Bob => 0,
        Role::Sonai => 1,
    }
}

/// Links, parties and clock of one session.
#[derive(Debug, Clone)]
pub struct World {
    config: ProtocolConfig,
    codebook: Codebook,
    block: PreparedBlock,
    tick: u64,
    round: u64,
    links: Vec<Link>,
    alice_sent: bool,
    receivers: [Receiver; 2],
    transcript: Transcript,
    log: Vec<LogEntry>,
    first_abort: Option<AbortReason>,
    fifo_ok: bool,
}

impl World {
    /// `strategies` is `[bob, sonai]`.
    pub fn new(
        config: ProtocolConfig,
        codebook: Codebook,
        block: PreparedBlock,
        strategies: [Strategy; 2],
    ) -> Self {
        let receiver = |role: Role, strategy: Strategy, stream| Receiver {
            strategy,
            first_mover: config.reveal_first == role,
            rng: epr::substream(config.seed, stream),
            cursor: None,
            tracker: None,
            received: 0,
            idle_ticks: 0,
            active: false,
            result: None,
        };
        let receivers = [
            receiver(Role::Bob, strategies[0], epr::Stream::BobStrategy),
            receiver(Role::Sonai, strategies[1], epr::Stream::SonaiStrategy),
        ];
        let d = DEFAULT_LINK_DELAY;
        World {
            links: vec![
                Link::new(PartyId::Alice, PartyId::Bob, d),
                Link::new(PartyId::Alice, PartyId::Sonai, d),
                Link::new(PartyId::Bob, PartyId::Sonai, d),
                Link::new(PartyId::Sonai, PartyId::Bob, d),
            ],
            config,
            codebook,
            block,
            tick: 0,
            round: 0,
            alice_sent: false,
            receivers,
            transcript: Transcript::new(),
            log: Vec::new(),
            first_abort: None,
            fifo_ok: true,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn fifo_ok(&self) -> bool {
        self.fifo_ok
    }

    pub fn result(&self, role: Role) -> Option<&DecodeResult> {
        self.receivers[role_index(role)].result.as_ref()
    }

    pub fn sent(&self, role: Role) -> usize {
        self.receivers[role_index(role)].sent()
    }

    pub fn tracker(&self, role: Role) -> Option<&CandidateTracker> {
        self.receivers[role_index(role)].tracker.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.receivers.iter().all(|r| r.result.is_some())
    }

    fn send(&mut self, link: usize, kind: MessageKind) {
        let l = &mut self.links[link];
        debug_assert!(
            matches!(kind, MessageKind::Delivery(_)) == (l.from == PartyId::Alice),
            "deliveries only come from Alice"
        );
        let msg = WireMessage {
            kind,
            sender: l.from,
            receiver: l.to,
        };
        l.queue.push_back(Queued {
            due: self.tick + l.delay,
            seq: l.next_seq,
            msg,
        });
        l.next_seq += 1;
    }

    fn outgoing(role: Role) -> usize {
        match role {
            Role::Bob => LINK_BOB_SONAI,
            Role::Sonai => LINK_SONAI_BOB,
        }
    }

    /// Advances one tick.
    pub fn schedule_step(&mut self) {
        self.tick += 1;
        for r in &mut self.receivers {
            r.active = false;
        }

        for li in 0..self.links.len() {
            while self.links[li].queue.front().is_some_and(|q| q.due <= self.tick) {
                let q = self.links[li].queue.pop_front().expect("front exists");
                let link = &mut self.links[li];
                if q.seq != link.delivered {
                    self.fifo_ok = false;
                }
                link.delivered = q.seq + 1;
                self.log.push(LogEntry {
                    tick: self.tick,
                    link: link.name(),
                    kind: q.msg.kind.name().to_string(),
                    sender: q.msg.sender,
                    receiver: q.msg.receiver,
                    payload_summary: q.msg.kind.summary(),
                });
                self.deliver(q.msg);
            }
        }

        if !self.alice_sent {
            self.alice_sent = true;
            let bob = measure_all(Role::Bob, &self.block);
            let sonai = measure_all(Role::Sonai, &self.block);
            self.send(LINK_ALICE_BOB, MessageKind::Delivery(bob));
            self.send(LINK_ALICE_SONAI, MessageKind::Delivery(sonai));
        }

        let first = self.config.reveal_first;
        for role in [first, first.counterpart()] {
            self.act(role);
        }
    }

    fn finalize(&mut self, role: Role, result: DecodeResult) {
        let r = &mut self.receivers[role_index(role)];
        if r.result.is_none() {
            r.result = Some(result);
        }
    }

    fn abort(&mut self, role: Role, reason: AbortReason) {
        if self.receivers[role_index(role)].result.is_some() {
            return;
        }
        let conf = self.own_decode(role).map_or(0.0, |d| d.confidence);
        self.finalize(role, DecodeResult::abort(reason, conf, self.config.exact()));
        self.first_abort.get_or_insert(reason);
        self.send(Self::outgoing(role), MessageKind::Abort(reason));
    }

    fn own_decode(&mut self, role: Role) -> Option<DecodeResult> {
        let config = self.config.clone();
        self.receivers[role_index(role)]
            .tracker
            .as_mut()
            .map(|t| decode(t, &config))
    }

    fn deliver(&mut self, msg: WireMessage) {
        let role = match msg.receiver {
            PartyId::Bob => Role::Bob,
            PartyId::Sonai => Role::Sonai,
            PartyId::Alice => return,
        };
        let idx = role_index(role);
        self.receivers[idx].active = true;
        if self.receivers[idx].result.is_some() {
            return;
        }
        match msg.kind {
            MessageKind::Delivery(outcomes) => {
                let r = &mut self.receivers[idx];
                r.tracker = Some(CandidateTracker::for_party(
                    role,
                    &outcomes,
                    &self.codebook,
                    self.config.delta,
                ));
                r.cursor = Some(RevealCursor::new(role, outcomes));
            }
            MessageKind::Reveal(event) => {
                let r = &mut self.receivers[idx];
                r.received += 1;
                let observed = match (&mut r.tracker, event.party == role) {
                    (Some(t), false) => t.observe(&event).is_ok(),
                    _ => false,
                };
                if !observed {
                    self.abort(role, AbortReason::FairnessViolation);
                }
            }
            MessageKind::DecodeAnnounce(_) => {}
            MessageKind::Abort(reason) => {
                let result = match self.own_decode(role) {
                    Some(d) if d.is_decoded() => d,
                    Some(d) => DecodeResult::abort(reason, d.confidence, d.exact),
                    None => DecodeResult::abort(reason, 0.0, self.config.exact()),
                };
                self.finalize(role, result);
            }
        }
    }

    fn act(&mut self, role: Role) {
        let idx = role_index(role);
        let n = self.codebook.n();
        if self.receivers[idx].result.is_some() || self.receivers[idx].cursor.is_none() {
            return;
        }
        let r = &self.receivers[idx];
        let view = FairnessView {
            sent: r.sent(),
            received: r.received,
            first_mover: r.first_mover,
            idle_ticks: r.idle_ticks,
        };
        let decision = enforce_fairness(&self.config.policy, &view);
        if let FairnessDecision::Abort(reason) = decision {
            self.abort(role, reason);
            return;
        }

        let r = &mut self.receivers[idx];
        let cursor = r.cursor.as_mut().expect("checked");
        let events = apply_strategy(cursor, &r.strategy, decision, &mut r.rng, &mut self.round);
        if !events.is_empty() {
            r.active = true;
        }
        for e in events {
            self.transcript
                .push(e)
                .expect("own reveals are fresh and rounds increase");
            self.send(Self::outgoing(role), MessageKind::Reveal(e));
        }

        let r = &self.receivers[idx];
        let done_sending = !r.strategy.will_send_more(r.cursor.as_ref().expect("checked"));
        if r.received >= n && done_sending {
            let result = self.own_decode(role).expect("tracker exists with cursor");
            self.finalize(role, result);
            self.send(Self::outgoing(role), MessageKind::DecodeAnnounce(result));
            self.receivers[idx].active = true;
        }

        let r = &mut self.receivers[idx];
        if r.active {
            r.idle_ticks = 0;
        } else {
            r.idle_ticks += 1;
        }
    }

    /// Tick budget after which a session is forced to end.
    pub fn tick_budget(&self) -> u64 {
        4 * self.codebook.n() as u64 + self.config.policy.timeout_ticks + 4
    }

    /// Steps until both receivers are done, then writes the terminal record.
    pub fn run(mut self) -> SessionOutcome {
        let budget = self.tick_budget();
        while !self.is_finished() && self.tick < budget {
            self.schedule_step();
        }
        for role in [Role::Bob, Role::Sonai] {
            self.abort(role, AbortReason::Timeout);
        }

        let mut public = CandidateTracker::public(&self.codebook, self.config.delta);
        public
            .observe_all(self.transcript.events())
            .expect("transcript holds valid reveals");
        let decoded = decode(&mut public, &self.config);
        let session = match self.first_abort {
            Some(reason) => DecodeResult::abort(reason, decoded.confidence, decoded.exact),
            None => decoded,
        };
        self.transcript.set_terminal(session.to_record());

        let [bob, sonai] = self.receivers;
        SessionOutcome {
            codebook: self.codebook,
            block: self.block,
            transcript: self.transcript,
            bob: bob.result.expect("finalized"),
            sonai: sonai.result.expect("finalized"),
            session,
            bob_sent: bob.cursor.as_ref().map_or(0, RevealCursor::revealed),
            sonai_sent: sonai.cursor.as_ref().map_or(0, RevealCursor::revealed),
            bob_tracker: bob.tracker,
            sonai_tracker: sonai.tracker,
            ticks: self.tick,
            log: self.log,
            fifo_ok: self.fifo_ok,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{generate_codebook, BitPair};
    use crate::protocol::{alice_prepare, fairness_gap, run_with_codebook, DecodeStatus};
    use rand::SeedableRng;

    fn world(n: usize, seed: u64, strategies: [Strategy; 2]) -> World {
        let config = ProtocolConfig {
            n,
            lambda: (n / 4).max(1),
            seed,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(seed);
        let cb = generate_codebook(n, config.lambda, &mut rng).unwrap();
        let block = alice_prepare(BitPair::new(true, false), &cb, config.noise, &mut rng).unwrap();
        World::new(config, cb, block, strategies)
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("honest".parse::<Strategy>(), Ok(Strategy::Honest));
        assert_eq!("withhold:3".parse::<Strategy>(), Ok(Strategy::WithholdAfter(3)));
        assert_eq!("batch".parse::<Strategy>(), Ok(Strategy::BatchDump));
        assert_eq!("lie:0.5".parse::<Strategy>(), Ok(Strategy::LieWithProb(0.5)));
        assert!("lie:1.5".parse::<Strategy>().is_err());
        assert!("withhold".parse::<Strategy>().is_err());
        assert!("sneaky".parse::<Strategy>().is_err());
        assert!(Strategy::WithholdAfter(9).validate(8).is_err());
        for s in ["honest", "withhold:3", "batch", "lie:0.25"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn fairness_rule() {
        let p = FairnessPolicy::default();
        let view = |sent, received, first_mover, idle_ticks| FairnessView {
            sent,
            received,
            first_mover,
            idle_ticks,
        };
        assert_eq!(enforce_fairness(&p, &view(0, 0, true, 0)), FairnessDecision::Proceed);
        assert_eq!(enforce_fairness(&p, &view(0, 0, false, 0)), FairnessDecision::Stall);
        assert_eq!(enforce_fairness(&p, &view(1, 0, true, 0)), FairnessDecision::Stall);
        assert_eq!(enforce_fairness(&p, &view(0, 1, false, 0)), FairnessDecision::Proceed);
        // a dump from the counterpart is accepted data
        assert_eq!(enforce_fairness(&p, &view(1, 64, true, 0)), FairnessDecision::Proceed);
        assert_eq!(
            enforce_fairness(&p, &view(1, 0, true, p.timeout_ticks)),
            FairnessDecision::Abort(AbortReason::Timeout)
        );
        assert!(FairnessPolicy { one_ahead_limit: 0, timeout_ticks: 1 }.validate().is_err());
        assert!(FairnessPolicy { one_ahead_limit: 1, timeout_ticks: 0 }.validate().is_err());
    }

    #[test]
    fn strategies_emit_as_specified() {
        let outcomes = vec![SpinOutcome::Plus; 6];
        let mut rng = SimRng::seed_from_u64(0);
        let mut round = 0;

        let mut c = RevealCursor::new(Role::Sonai, outcomes.clone());
        let dump = apply_strategy(&mut c, &Strategy::BatchDump, FairnessDecision::Stall, &mut rng, &mut round);
        assert_eq!(dump.len(), 6);

        let mut c = RevealCursor::new(Role::Sonai, outcomes.clone());
        let none = apply_strategy(&mut c, &Strategy::WithholdAfter(0), FairnessDecision::Proceed, &mut rng, &mut round);
        assert!(none.is_empty());

        let mut c = RevealCursor::new(Role::Sonai, outcomes.clone());
        let lie = apply_strategy(&mut c, &Strategy::LieWithProb(1.0), FairnessDecision::Proceed, &mut rng, &mut round);
        assert_eq!(lie[0].outcome, SpinOutcome::Minus);

        let mut c = RevealCursor::new(Role::Sonai, outcomes);
        let stalled = apply_strategy(&mut c, &Strategy::Honest, FairnessDecision::Stall, &mut rng, &mut round);
        assert!(stalled.is_empty());
    }

    #[test]
    fn idle_world_only_advances_clock() {
        let w = world(8, 1, [Strategy::Honest; 2]);
        let finished = {
            let mut w = w.clone();
            while !w.is_finished() {
                w.schedule_step();
            }
            // drain what is in flight
            for _ in 0..4 {
                w.schedule_step();
            }
            w
        };
        let mut stepped = finished.clone();
        stepped.schedule_step();
        assert_eq!(stepped.tick(), finished.tick() + 1);
        assert_eq!(stepped.transcript(), finished.transcript());
        assert_eq!(stepped.log(), finished.log());
        assert!(stepped.links().iter().all(|l| l.pending() == 0));
    }

    #[test]
    fn honest_session_terminates_quickly() {
        for n in [8, 32, 64] {
            let out = world(n, 5, [Strategy::Honest; 2]).run();
            assert!(out.both_decoded());
            assert!(out.ticks <= 2 * n as u64 + 4, "n={n} ticks={}", out.ticks);
            assert_eq!(fairness_gap(&out.transcript), 1);
            assert!(out.fifo_ok);
        }
    }

    #[test]
    fn same_seed_same_log() {
        let a = world(32, 9, [Strategy::Honest, Strategy::LieWithProb(0.3)]).run();
        let b = world(32, 9, [Strategy::Honest, Strategy::LieWithProb(0.3)]).run();
        assert_eq!(log_to_jsonl(&a.log), log_to_jsonl(&b.log));
    }

    #[test]
    fn withhold_zero_times_out() {
        let out = world(64, 2, [Strategy::Honest, Strategy::WithholdAfter(0)]).run();
        assert_eq!(out.bob.status, DecodeStatus::Abort(AbortReason::Timeout));
        assert_eq!(out.sonai_sent, 0);
        assert_eq!(out.bob_sent, 1);
        assert_eq!(out.session.status, DecodeStatus::Abort(AbortReason::Timeout));
    }

    #[test]
    fn withhold_leaks_at_most_one() {
        for k in [0, 1, 3, 10, 31] {
            for first in [Role::Bob, Role::Sonai] {
                let mut w = world(32, k as u64, [Strategy::Honest, Strategy::WithholdAfter(k)]);
                w.config.reveal_first = first;
                let out = w.run();
                assert!(out.bob_sent <= out.sonai_sent + 1, "k={k}");
                assert_eq!(out.sonai_sent, k);
                assert_eq!(out.bob.status, DecodeStatus::Abort(AbortReason::Timeout));
                assert!(out.ticks <= 4 * 32 + DEFAULT_TIMEOUT_TICKS);
            }
        }
    }

    #[test]
    fn batch_dump_is_accepted() {
        let out = world(16, 3, [Strategy::Honest, Strategy::BatchDump]).run();
        assert!(out.bob.is_decoded());
        assert_eq!(fairness_gap(&out.transcript), 16 - 1);
        let dump_tick = out
            .log
            .iter()
            .filter(|e| e.kind == "reveal" && e.sender == PartyId::Sonai)
            .map(|e| e.tick)
            .collect::<Vec<_>>();
        assert_eq!(dump_tick.len(), 16);
        assert!(dump_tick.iter().all(|&t| t == dump_tick[0]));

        let out = world(16, 3, [Strategy::BatchDump, Strategy::Honest]).run();
        assert_eq!(fairness_gap(&out.transcript), 16);
    }

    #[test]
    fn total_lie_kills_every_candidate() {
        let config = ProtocolConfig {
            n: 64,
            lambda: 16,
            seed: 77,
            ..Default::default()
        };
        let mut rng = SimRng::seed_from_u64(77);
        let cb = generate_codebook(64, 16, &mut rng).unwrap();
        let out = run_with_codebook(
            &config,
            &cb,
            BitPair::new(false, true),
            [Strategy::Honest, Strategy::LieWithProb(1.0)],
        )
        .unwrap();
        assert_eq!(out.bob.status, DecodeStatus::Abort(AbortReason::NoConsistentEntry));
    }

    #[test]
    fn fifo_holds_under_dump() {
        let out = world(64, 4, [Strategy::BatchDump, Strategy::BatchDump]).run();
        assert!(out.fifo_ok);
        let mut last = 0;
        for e in out.log.iter().filter(|e| e.link == "bob->sonai" && e.kind == "reveal") {
            let pos: u32 = e.payload_summary.split("position=").nth(1).unwrap()
                .split(' ').next().unwrap().parse().unwrap();
            assert_eq!(pos, last + 1);
            last = pos;
        }
        assert_eq!(last, 64);
    }
}
