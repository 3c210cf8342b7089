//! Party roles and the recovery procedure.
//!
//! Alice prepares a block for a bit pair and hands each receiver its half.
//! Bob and Sonai measure, disclose their outcomes one at a time in turn, and
//! each keeps all four codebook entries as candidates, dropping an entry as
//! soon as its anti-correlation checks fail too often.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{entry_for_bits, BitPair, Codebook, CodebookError, Pairing};
use crate::epr::{self, EprError, NoiseModel, PairOutcomes, SpinOutcome};
use crate::netsim::{FairnessPolicy, Strategy};
use crate::unionfind::UnionFind;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Epr(#[from] EprError),
    #[error("{party} already revealed position {position}")]
    DuplicateReveal { party: Role, position: u32 },
    #[error("{party} revealed position {position} outside 1..={n}")]
    PositionOutOfRange { party: Role, position: u32, n: usize },
    #[error("round {round} does not follow round {previous}")]
    RoundOrder { round: u64, previous: u64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("message lengths differ: {0} vs {1}")]
    MessageLength(usize, usize),
    #[error("block {block} did not decode: {status}")]
    BlockFailed { block: usize, status: DecodeStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Bob,
    Sonai,
}

impl Role {
    pub fn counterpart(self) -> Role {
        match self {
            Role::Bob => Role::Sonai,
            Role::Sonai => Role::Bob,
        }
    }

    fn index(self) -> usize {
        match self {
            Role::Bob => 0,
            Role::Sonai => 1,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Bob => "bob",
            Role::Sonai => "sonai",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bob" => Ok(Role::Bob),
            "sonai" => Ok(Role::Sonai),
            _ => Err(format!("unknown party {s:?} (expected bob or sonai)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub noise: NoiseModel,
    pub lambda: usize,
    /// Largest tolerated fraction of failed checks for a live candidate.
    pub delta: f64,
    pub confidence_target: f64,
    pub reveal_first: Role,
    pub seed: u64,
    pub policy: FairnessPolicy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n: crate::codebook::DEFAULT_N,
            noise: NoiseModel::NOISELESS,
            lambda: crate::codebook::DEFAULT_LAMBDA,
            delta: 0.0,
            confidence_target: 0.99,
            reveal_first: Role::Bob,
            seed: 0,
            policy: FairnessPolicy::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        NoiseModel::new(self.noise.flip_probability())?;
        if !(0.0..0.5).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 0.5)", self.delta));
        }
        // Must sit strictly below the midpoint of the honest and wrong-entry
        // violation rates, or wrong entries survive as often as the true one.
        let midpoint = (self.noise.honest_violation_rate() + 0.5) / 2.0;
        if self.delta >= midpoint {
            return bad(format!(
                "delta {} must be below {midpoint:.4} at noise {}",
                self.delta,
                self.noise.flip_probability()
            ));
        }
        if !(self.confidence_target > 0.0 && self.confidence_target < 1.0) {
            return bad(format!(
                "confidence target {} outside (0, 1)",
                self.confidence_target
            ));
        }
        self.policy
            .validate()
            .map_err(|m| ProtocolError::Config(m.to_string()))
    }

    /// Whether survival probabilities are exact (no noise, no tolerance).
    pub fn exact(&self) -> bool {
        self.noise.is_noiseless() && self.delta == 0.0
    }
}

/// What Alice hands out for one bit pair: the predetermined z outcomes at
/// each receiver position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedBlock {
    pub entry_index: usize,
    pub bits: BitPair,
    pub bob: Vec<SpinOutcome>,
    pub sonai: Vec<SpinOutcome>,
}

/// Puts pair halves at the positions given by the entry's sequence codes.
/// `pairs[l]` is the pair with label `l + 1`.
pub fn place_block(cb: &Codebook, entry_index: usize, pairs: &[PairOutcomes]) -> PreparedBlock {
    let entry = cb.entry(entry_index);
    assert_eq!(pairs.len(), cb.n(), "one pair per label");
    let bob = entry
        .s_i()
        .labels()
        .iter()
        .map(|&l| pairs[l as usize - 1].i_side)
        .collect();
    let sonai = entry
        .s_j()
        .labels()
        .iter()
        .map(|&l| pairs[l as usize - 1].j_side)
        .collect();
    PreparedBlock {
        entry_index,
        bits: entry.bits(),
        bob,
        sonai,
    }
}

pub fn alice_prepare<R: Rng + ?Sized>(
    bits: BitPair,
    cb: &Codebook,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<PreparedBlock, ProtocolError> {
    let entry = entry_for_bits(cb, bits);
    let index = cb.index_for_bits(entry.bits()).expect("entry exists");
    let pairs = epr::sample_block(cb.n(), noise, rng)?;
    Ok(place_block(cb, index, &pairs))
}

/// The receiver's outcome list. Outcomes are fixed at preparation, so
/// measuring again gives the same list.
pub fn measure_all(role: Role, block: &PreparedBlock) -> Vec<SpinOutcome> {
    match role {
        Role::Bob => block.bob.clone(),
        Role::Sonai => block.sonai.clone(),
    }
}

/// One public disclosure. `position` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevealEvent {
    pub round: u64,
    pub party: Role,
    pub position: u32,
    pub outcome: SpinOutcome,
}

/// A receiver's own disclosure order: ascending positions.
#[derive(Debug, Clone)]
pub struct RevealCursor {
    role: Role,
    outcomes: Vec<SpinOutcome>,
    next: usize,
}

impl RevealCursor {
    pub fn new(role: Role, outcomes: Vec<SpinOutcome>) -> Self {
        RevealCursor {
            role,
            outcomes,
            next: 0,
        }
    }

    pub fn revealed(&self) -> usize {
        self.next
    }

    pub fn remaining(&self) -> usize {
        self.outcomes.len() - self.next
    }

    /// Reveals the lowest unrevealed position, taking the next round number
    /// from `round`. `None` once everything is out.
    pub fn reveal_next(&mut self, round: &mut u64) -> Option<RevealEvent> {
        if self.next >= self.outcomes.len() {
            return None;
        }
        *round += 1;
        let ev = RevealEvent {
            round: *round,
            party: self.role,
            position: self.next as u32 + 1,
            outcome: self.outcomes[self.next],
        };
        self.next += 1;
        Some(ev)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateState {
    pub entry: usize,
    pub bits: BitPair,
    pub checks_completed: u32,
    pub violations: u32,
    pub alive: bool,
    /// log2 survival probability against the current lead, refreshed by [`decode`].
    pub survival_log2: f64,
    /// Bob positions (0-based) of checks that passed.
    passed: Vec<u32>,
    /// Which Bob positions already had their check completed.
    done: Vec<bool>,
}

impl CandidateState {
    pub fn passed_checks(&self) -> &[u32] {
        &self.passed
    }

    /// Bob positions (0-based) of every completed check, passed or not.
    pub fn completed_checks(&self) -> impl Iterator<Item = usize> + '_ {
        self.done
            .iter()
            .enumerate()
            .filter(|(_, &d)| d)
            .map(|(k, _)| k)
    }
}

/// Whose knowledge a tracker models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observer {
    Party(Role),
    /// Anyone holding only the public transcript.
    Public,
}

/// Per-candidate consistency bookkeeping for one observer.
#[derive(Debug, Clone)]
pub struct CandidateTracker {
    observer: Observer,
    n: usize,
    delta: f64,
    pairings: Vec<Pairing>,
    /// Known outcomes per side (index 0 Bob, 1 Sonai).
    known: [Vec<Option<SpinOutcome>>; 2],
    revealed: [Vec<bool>; 2],
    states: Vec<CandidateState>,
}

impl CandidateTracker {
    pub fn for_party(role: Role, own: &[SpinOutcome], cb: &Codebook, delta: f64) -> Self {
        let mut t = Self::empty(Observer::Party(role), cb, delta);
        t.known[role.index()] = own.iter().copied().map(Some).collect();
        t
    }

    pub fn public(cb: &Codebook, delta: f64) -> Self {
        Self::empty(Observer::Public, cb, delta)
    }

    fn empty(observer: Observer, cb: &Codebook, delta: f64) -> Self {
        let n = cb.n();
        CandidateTracker {
            observer,
            n,
            delta,
            pairings: cb.entries().iter().map(|e| e.pairing().clone()).collect(),
            known: [vec![None; n], vec![None; n]],
            revealed: [vec![false; n], vec![false; n]],
            states: cb
                .entries()
                .iter()
                .enumerate()
                .map(|(i, e)| CandidateState {
                    entry: i,
                    bits: e.bits(),
                    checks_completed: 0,
                    violations: 0,
                    alive: true,
                    survival_log2: 0.0,
                    passed: Vec::new(),
                    done: vec![false; n],
                })
                .collect(),
        }
    }

    pub fn observer(&self) -> Observer {
        self.observer
    }

    pub fn states(&self) -> &[CandidateState] {
        &self.states
    }

    pub fn alive(&self) -> Vec<usize> {
        self.states
            .iter()
            .filter(|s| s.alive)
            .map(|s| s.entry)
            .collect()
    }

    pub fn revealed_count(&self, role: Role) -> usize {
        self.revealed[role.index()].iter().filter(|&&r| r).count()
    }

    fn complete_check(&mut self, candidate: usize, k: usize, bob: SpinOutcome, sonai: SpinOutcome) {
        let delta = self.delta;
        let s = &mut self.states[candidate];
        if s.done[k] {
            return;
        }
        s.done[k] = true;
        s.checks_completed += 1;
        if bob.is_opposite(sonai) {
            s.passed.push(k as u32);
        } else {
            s.violations += 1;
        }
        s.alive = s.violations as f64 <= delta * s.checks_completed as f64;
    }

    /// Folds one newly observed disclosure into every candidate.
    ///
    /// A Sonai reveal at `p` checks Bob position `map^-1(p)`; a Bob reveal at
    /// `k` checks Sonai position `map(k)`. A check completes once both
    /// outcomes are known to the observer.
    pub fn observe(&mut self, event: &RevealEvent) -> Result<(), ProtocolError> {
        let side = event.party.index();
        if event.position == 0 || event.position as usize > self.n {
            return Err(ProtocolError::PositionOutOfRange {
                party: event.party,
                position: event.position,
                n: self.n,
            });
        }
        let pos = event.position as usize - 1;
        if self.revealed[side][pos] {
            return Err(ProtocolError::DuplicateReveal {
                party: event.party,
                position: event.position,
            });
        }
        self.revealed[side][pos] = true;
        // An observer trusts its own private outcome over what it announced.
        if self.known[side][pos].is_none() {
            self.known[side][pos] = Some(event.outcome);
        }
        for c in 0..self.states.len() {
            let (k, p) = match event.party {
                Role::Bob => (pos, self.pairings[c].map(pos)),
                Role::Sonai => (self.pairings[c].inv(pos), pos),
            };
            if let (Some(b), Some(s)) = (self.known[0][k], self.known[1][p]) {
                self.complete_check(c, k, b, s);
            }
        }
        Ok(())
    }

    pub fn observe_all<'a>(
        &mut self,
        events: impl IntoIterator<Item = &'a RevealEvent>,
    ) -> Result<(), ProtocolError> {
        events.into_iter().try_for_each(|e| self.observe(e))
    }

    /// Survival of `candidate` if `reference` were the true entry; see
    /// [`survival_logprob`].
    pub fn survival(&self, candidate: usize, reference: usize, exact: bool) -> SurvivalEstimate {
        survival_logprob(&self.states[candidate], &self.pairings[candidate], &self.pairings[reference], exact)
    }
}

impl CandidateTracker {
    /// Probability, as log2, that a wrong `candidate` would pass every check
    /// this observer has completed for it, had `reference` been true.
    /// Unlike [`CandidateTracker::survival`] this counts failed checks too,
    /// so it measures how much evidence was gathered, not what it showed.
    pub fn evidence_bound(&self, candidate: usize, reference: usize) -> f64 {
        let cand = &self.pairings[candidate];
        let refp = &self.pairings[reference];
        let mut uf = UnionFind::new(self.n);
        let mut rank = 0u32;
        for k in self.states[candidate].completed_checks() {
            let partner = refp.inv(cand.map(k));
            if partner != k && uf.union(k, partner) {
                rank += 1;
            }
        }
        -(rank as f64)
    }
}

pub fn update_candidates(
    tracker: &mut CandidateTracker,
    event: &RevealEvent,
) -> Result<(), ProtocolError> {
    tracker.observe(event)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalEstimate {
    pub log2: f64,
    /// False under noise, where the value is only indicative.
    pub exact: bool,
}

impl SurvivalEstimate {
    pub fn probability(&self) -> f64 {
        self.log2.exp2()
    }
}

/// `-rank` of the constraint graph on Bob positions: every passed check at a
/// position where the candidate and the reference disagree joins `k` and
/// `reference^-1(candidate(k))`. On noiseless data `2^result` is the exact
/// probability that a wrong candidate passes those checks.
pub fn survival_logprob(
    state: &CandidateState,
    candidate: &Pairing,
    reference: &Pairing,
    exact: bool,
) -> SurvivalEstimate {
    let mut uf = UnionFind::new(candidate.len());
    let mut rank = 0u32;
    for &k in &state.passed {
        let k = k as usize;
        let partner = reference.inv(candidate.map(k));
        if partner != k && uf.union(k, partner) {
            rank += 1;
        }
    }
    SurvivalEstimate {
        log2: -(rank as f64),
        exact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    NoConsistentEntry,
    Timeout,
    FairnessViolation,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::NoConsistentEntry => "no_consistent_entry",
            AbortReason::Timeout => "timeout",
            AbortReason::FairnessViolation => "fairness_violation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeStatus {
    Decoded,
    Undecided,
    Abort(AbortReason),
}

impl fmt::Display for DecodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStatus::Decoded => f.write_str("decoded"),
            DecodeStatus::Undecided => f.write_str("undecided"),
            DecodeStatus::Abort(r) => write!(f, "abort({r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeResult {
    pub status: DecodeStatus,
    /// Set when decoded.
    pub bits: Option<BitPair>,
    pub confidence: f64,
    /// Whether `confidence` is an exact probability or a noisy-mode heuristic.
    pub exact: bool,
}

impl DecodeResult {
    pub fn abort(reason: AbortReason, confidence: f64, exact: bool) -> Self {
        DecodeResult {
            status: DecodeStatus::Abort(reason),
            bits: None,
            confidence,
            exact,
        }
    }

    pub fn is_decoded(&self) -> bool {
        self.status == DecodeStatus::Decoded
    }

    pub fn to_record(&self) -> TerminalRecord {
        let (status, abort_reason) = match self.status {
            DecodeStatus::Decoded => (TerminalStatus::Decoded, None),
            DecodeStatus::Undecided => (TerminalStatus::Undecided, None),
            DecodeStatus::Abort(r) => (TerminalStatus::Abort, Some(r)),
        };
        TerminalRecord {
            status,
            bob_bit: self.bits.map(|b| b.bob as u8),
            sonai_bit: self.bits.map(|b| b.sonai as u8),
            confidence: self.confidence,
            abort_reason,
        }
    }
}

fn check_score(passed: bool, q: f64) -> f64 {
    // Log-likelihood ratio of "this entry is true" against "the check is a
    // fair coin", for one check.
    if passed {
        (2.0 * (1.0 - q)).ln()
    } else {
        (2.0 * q).ln()
    }
}

/// Decision after any round.
///
/// Exact mode: the lead is the first live entry in trial order and
/// `confidence = 1 - sum 2^survival` over the other live entries. Noisy mode:
/// entries are scored by a likelihood ratio and the confidence is the
/// normalized weight of the best live entry.
pub fn decode(tracker: &mut CandidateTracker, config: &ProtocolConfig) -> DecodeResult {
    let exact = config.exact();
    let alive = tracker.alive();
    if alive.is_empty() {
        return DecodeResult::abort(AbortReason::NoConsistentEntry, 0.0, exact);
    }

    let (lead, confidence) = if exact {
        let lead = alive[0];
        let mut wrong_mass = 0.0;
        for c in 0..tracker.states.len() {
            let s = tracker.survival(c, lead, true);
            tracker.states[c].survival_log2 = s.log2;
            if c != lead && tracker.states[c].alive {
                wrong_mass += s.probability();
            }
        }
        (lead, (1.0 - wrong_mass).clamp(0.0, 1.0))
    } else {
        let q = config.noise.honest_violation_rate().clamp(1e-12, 0.5);
        let scores: Vec<f64> = tracker
            .states
            .iter()
            .map(|s| {
                let pass = s.checks_completed - s.violations;
                pass as f64 * check_score(true, q) + s.violations as f64 * check_score(false, q)
            })
            .collect();
        let lead = alive
            .iter()
            .copied()
            .fold(alive[0], |best, c| if scores[c] > scores[best] { c } else { best });
        for c in 0..tracker.states.len() {
            tracker.states[c].survival_log2 = tracker.survival(c, lead, false).log2;
        }
        let norm: f64 = scores.iter().map(|s| (s - scores[lead]).exp()).sum();
        (lead, 1.0 / norm)
    };

    let decided = alive.len() == 1 && confidence >= config.confidence_target;
    DecodeResult {
        status: if decided {
            DecodeStatus::Decoded
        } else {
            DecodeStatus::Undecided
        },
        bits: decided.then(|| tracker.states[lead].bits),
        confidence,
        exact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalStatus {
    Decoded,
    Undecided,
    Abort,
}

/// Last line of an exported transcript.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalRecord {
    pub status: TerminalStatus,
    pub bob_bit: Option<u8>,
    pub sonai_bit: Option<u8>,
    pub confidence: f64,
    pub abort_reason: Option<AbortReason>,
}

impl TerminalRecord {
    pub fn to_result(&self, exact: bool) -> DecodeResult {
        let bits = match (self.bob_bit, self.sonai_bit) {
            (Some(b), Some(s)) => BitPair::from_array([b, s]),
            _ => None,
        };
        let status = match (self.status, self.abort_reason) {
            (TerminalStatus::Decoded, _) => DecodeStatus::Decoded,
            (TerminalStatus::Undecided, _) => DecodeStatus::Undecided,
            (TerminalStatus::Abort, r) => DecodeStatus::Abort(r.unwrap_or(AbortReason::NoConsistentEntry)),
        };
        DecodeResult {
            status,
            bits,
            confidence: self.confidence,
            exact,
        }
    }
}

/// Append-only public record of disclosures plus the session's final word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    events: Vec<RevealEvent>,
    terminal: Option<TerminalRecord>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: event after terminal record")]
    AfterTerminal { line: usize },
    #[error("line {line}: {source}")]
    Protocol {
        line: usize,
        source: ProtocolError,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Event(RevealEvent),
    Terminal(TerminalRecord),
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: RevealEvent) -> Result<(), ProtocolError> {
        if let Some(last) = self.events.last() {
            if event.round <= last.round {
                return Err(ProtocolError::RoundOrder {
                    round: event.round,
                    previous: last.round,
                });
            }
        }
        if self
            .events
            .iter()
            .any(|e| e.party == event.party && e.position == event.position)
        {
            return Err(ProtocolError::DuplicateReveal {
                party: event.party,
                position: event.position,
            });
        }
        self.events.push(event);
        Ok(())
    }

    pub fn set_terminal(&mut self, terminal: TerminalRecord) {
        self.terminal = Some(terminal);
    }

    pub fn events(&self) -> &[RevealEvent] {
        &self.events
    }

    pub fn terminal(&self) -> Option<&TerminalRecord> {
        self.terminal.as_ref()
    }

    /// Events up to and including `round`.
    pub fn prefix(&self, round: u64) -> &[RevealEvent] {
        let end = self.events.partition_point(|e| e.round <= round);
        &self.events[..end]
    }

    pub fn reveal_count(&self, role: Role) -> usize {
        self.events.iter().filter(|e| e.party == role).count()
    }

    /// A party's candidate states after `round`, given its private outcomes.
    pub fn view_at(
        &self,
        role: Role,
        own: &[SpinOutcome],
        cb: &Codebook,
        delta: f64,
        round: u64,
    ) -> Result<CandidateTracker, ProtocolError> {
        let mut t = CandidateTracker::for_party(role, own, cb, delta);
        t.observe_all(self.prefix(round))?;
        Ok(t)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        if let Some(t) = &self.terminal {
            out.push_str(&serde_json::to_string(t).expect("terminal serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses one or more transcripts; each ends at a terminal line, and a
    /// trailing segment without one is returned unterminated. Returned line
    /// numbers (1-based) locate each event.
    pub fn parse_jsonl(text: &str) -> Result<Vec<(Transcript, Vec<usize>)>, TranscriptError> {
        let mut out = Vec::new();
        let mut cur = Transcript::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(raw) {
                Ok(Line::Event(e)) => {
                    cur.events.push(e);
                    lines.push(line);
                }
                Ok(Line::Terminal(t)) => {
                    cur.terminal = Some(t);
                    out.push((std::mem::take(&mut cur), std::mem::take(&mut lines)));
                }
                Err(_) => {
                    // Re-parse strictly for a useful message.
                    let source = serde_json::from_str::<RevealEvent>(raw)
                        .err()
                        .unwrap_or_else(|| serde_json::from_str::<TerminalRecord>(raw).unwrap_err());
                    return Err(TranscriptError::Parse { line, source });
                }
            }
        }
        if !cur.events.is_empty() || out.is_empty() {
            out.push((cur, lines));
        }
        Ok(out)
    }

    /// Recomputes the public decode from the recorded disclosures.
    ///
    /// Session-level aborts (timeout, fairness violation) cannot be derived
    /// from disclosures alone, so a recorded one is carried through with the
    /// confidence recomputed.
    pub fn replay(
        &self,
        cb: &Codebook,
        config: &ProtocolConfig,
        lines: Option<&[usize]>,
    ) -> Result<DecodeResult, TranscriptError> {
        let mut tracker = CandidateTracker::public(cb, config.delta);
        let mut last_round = 0;
        for (i, e) in self.events.iter().enumerate() {
            let line = lines.and_then(|l| l.get(i).copied()).unwrap_or(i + 1);
            if e.round <= last_round {
                return Err(TranscriptError::Protocol {
                    line,
                    source: ProtocolError::RoundOrder {
                        round: e.round,
                        previous: last_round,
                    },
                });
            }
            last_round = e.round;
            tracker
                .observe(e)
                .map_err(|source| TranscriptError::Protocol { line, source })?;
        }
        let result = decode(&mut tracker, config);
        Ok(match self.terminal.and_then(|t| t.abort_reason) {
            Some(r @ (AbortReason::Timeout | AbortReason::FairnessViolation)) => {
                DecodeResult::abort(r, result.confidence, result.exact)
            }
            _ => result,
        })
    }
}

/// Largest difference between the two receivers' disclosure counts over
/// every prefix of the transcript.
pub fn fairness_gap(transcript: &Transcript) -> usize {
    let (mut bob, mut sonai, mut gap) = (0i64, 0i64, 0i64);
    for e in transcript.events() {
        match e.party {
            Role::Bob => bob += 1,
            Role::Sonai => sonai += 1,
        }
        gap = gap.max((bob - sonai).abs());
    }
    gap as usize
}

/// Result of one end-to-end session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub codebook: Codebook,
    pub block: PreparedBlock,
    pub transcript: Transcript,
    pub bob: DecodeResult,
    pub sonai: DecodeResult,
    /// Public decode (or session abort) written as the transcript's last line.
    pub session: DecodeResult,
    pub bob_tracker: Option<CandidateTracker>,
    pub sonai_tracker: Option<CandidateTracker>,
    pub bob_sent: usize,
    pub sonai_sent: usize,
    pub ticks: u64,
    pub log: Vec<crate::netsim::LogEntry>,
    pub fifo_ok: bool,
}

impl SessionOutcome {
    pub fn result(&self, role: Role) -> &DecodeResult {
        match role {
            Role::Bob => &self.bob,
            Role::Sonai => &self.sonai,
        }
    }

    pub fn both_decoded(&self) -> bool {
        self.bob.is_decoded() && self.sonai.is_decoded()
    }
}

/// Fresh codebook from the seed, one block for `bits`, then the
/// alternating-disclosure exchange.
pub fn run_session(
    config: &ProtocolConfig,
    bits: BitPair,
    strategies: [Strategy; 2],
) -> Result<SessionOutcome, ProtocolError> {
    config.validate()?;
    let mut cb_rng = epr::substream(config.seed, epr::Stream::Codebook);
    let cb = crate::codebook::generate_codebook(config.n, config.lambda, &mut cb_rng)?;
    run_with_codebook(config, &cb, bits, strategies)
}

/// As [`run_session`] with a given codebook (its `n` overrides the config's).
pub fn run_with_codebook(
    config: &ProtocolConfig,
    cb: &Codebook,
    bits: BitPair,
    strategies: [Strategy; 2],
) -> Result<SessionOutcome, ProtocolError> {
    let config = ProtocolConfig {
        n: cb.n(),
        ..config.clone()
    };
    config.validate()?;
    let mut prep = epr::substream(config.seed, epr::Stream::Preparation);
    let block = alice_prepare(bits, cb, config.noise, &mut prep)?;
    Ok(run_prepared(&config, cb, block, strategies))
}

pub fn run_prepared(
    config: &ProtocolConfig,
    cb: &Codebook,
    block: PreparedBlock,
    strategies: [Strategy; 2],
) -> SessionOutcome {
    crate::netsim::World::new(config.clone(), cb.clone(), block, strategies).run()
}

/// Equal-length messages framed into one block per bit pair.
#[derive(Debug, Clone)]
pub struct MessageFrame {
    pub bob_bits: Vec<bool>,
    pub sonai_bits: Vec<bool>,
    pub codebook: Codebook,
    pub blocks: Vec<PreparedBlock>,
    pub block_seeds: Vec<u64>,
}

pub fn parse_bits(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

pub fn format_bits(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// One codebook for the whole message (drawn from the config seed), one
/// freshly prepared block per bit pair.
pub fn encode_message(
    bob_msg: &[bool],
    sonai_msg: &[bool],
    config: &ProtocolConfig,
) -> Result<MessageFrame, ProtocolError> {
    if bob_msg.len() != sonai_msg.len() {
        return Err(ProtocolError::MessageLength(bob_msg.len(), sonai_msg.len()));
    }
    config.validate()?;
    let mut cb_rng = epr::substream(config.seed, epr::Stream::Codebook);
    let cb = crate::codebook::generate_codebook(config.n, config.lambda, &mut cb_rng)?;
    encode_message_with(bob_msg, sonai_msg, config, cb)
}

pub fn encode_message_with(
    bob_msg: &[bool],
    sonai_msg: &[bool],
    config: &ProtocolConfig,
    cb: Codebook,
) -> Result<MessageFrame, ProtocolError> {
    if bob_msg.len() != sonai_msg.len() {
        return Err(ProtocolError::MessageLength(bob_msg.len(), sonai_msg.len()));
    }
    let mut blocks = Vec::with_capacity(bob_msg.len());
    let mut block_seeds = Vec::with_capacity(bob_msg.len());
    for (b, (&x, &y)) in bob_msg.iter().zip(sonai_msg).enumerate() {
        let seed = epr::derive_seed(config.seed, b as u64);
        let mut prep = epr::substream(seed, epr::Stream::Preparation);
        blocks.push(alice_prepare(BitPair::new(x, y), &cb, config.noise, &mut prep)?);
        block_seeds.push(seed);
    }
    Ok(MessageFrame {
        bob_bits: bob_msg.to_vec(),
        sonai_bits: sonai_msg.to_vec(),
        codebook: cb,
        blocks,
        block_seeds,
    })
}

/// Runs every block of a frame. Block `b` uses seed `frame.block_seeds[b]`
/// for its strategies.
pub fn run_message(
    frame: &MessageFrame,
    config: &ProtocolConfig,
    strategies: [Strategy; 2],
) -> Vec<SessionOutcome> {
    let config = ProtocolConfig {
        n: frame.codebook.n(),
        ..config.clone()
    };
    frame
        .blocks
        .iter()
        .zip(&frame.block_seeds)
        .map(|(block, &seed)| {
            let cfg = ProtocolConfig {
                seed,
                ..config.clone()
            };
            run_prepared(&cfg, &frame.codebook, block.clone(), strategies)
        })
        .collect()
}

/// Concatenates per-block decodes; any block that did not decode fails the
/// whole message.
pub fn decode_message(results: &[DecodeResult]) -> Result<(Vec<bool>, Vec<bool>), ProtocolError> {
    let mut bob = Vec::with_capacity(results.len());
    let mut sonai = Vec::with_capacity(results.len());
    for (block, r) in results.iter().enumerate() {
        match (r.status, r.bits) {
            (DecodeStatus::Decoded, Some(bits)) => {
                bob.push(bits.bob);
                sonai.push(bits.sonai);
            }
            (status, _) => return Err(ProtocolError::BlockFailed { block, status }),
        }
    }
    Ok((bob, sonai))
}
