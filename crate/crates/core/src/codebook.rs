//! Sequence codes, relative pairings and the four-entry codebook.
//!
//! A sequence code lists EPR pair labels (1..=n) in the order a receiver gets
//! the particles. Only the relative pairing between Bob's and Sonai's codes
//! matters for the anti-correlation checks, so Bob's code is kept canonical
//! (identity) and all information about an entry lives in Sonai's code.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CODEBOOK_VERSION: u32 = 1;
pub const DEFAULT_ATTEMPT_BUDGET: usize = 10_000;
pub const DEFAULT_N: usize = 64;
pub const DEFAULT_LAMBDA: usize = 16;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid sequence code: {0}")]
    InvalidSequence(SequenceDefects),
    #[error("codebook has defects: {}", join_defects(.0))]
    Invalid(Vec<Defect>),
    #[error(
        "could not find four pairings {lambda} apart at n = {n} after {attempts} rejections; \
         increase --n or lower --lambda"
    )]
    Capacity {
        n: usize,
        lambda: usize,
        attempts: usize,
    },
    #[error("security parameter must be at least 1")]
    ZeroLambda,
    #[error("bad bit pair {0:?}: expected two characters from {{0,1}}")]
    BadBits(String),
    #[error("unsupported codebook version {0}")]
    Version(u32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn join_defects(d: &[Defect]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

/// The double bit carried by one block: Bob's bit and Sonai's bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitPair {
    pub bob: bool,
    pub sonai: bool,
}

impl BitPair {
    pub const fn new(bob: bool, sonai: bool) -> Self {
        BitPair { bob, sonai }
    }

    /// Trial order of the recovery walkthrough: 00, 11, 01, 10.
    /// Used as the tie-break order everywhere.
    pub const TRIAL_ORDER: [BitPair; 4] = [
        BitPair::new(false, false),
        BitPair::new(true, true),
        BitPair::new(false, true),
        BitPair::new(true, false),
    ];

    pub fn as_array(self) -> [u8; 2] {
        [self.bob as u8, self.sonai as u8]
    }

    pub fn from_array(bits: [u8; 2]) -> Option<Self> {
        match bits {
            [b @ 0..=1, s @ 0..=1] => Some(BitPair::new(b == 1, s == 1)),
            _ => None,
        }
    }
}

impl fmt::Display for BitPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.bob as u8, self.sonai as u8)
    }
}

impl FromStr for BitPair {
    type Err = CodebookError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        let bit = |c: u8| match c {
            b'0' => Some(false),
            b'1' => Some(true),
            _ => None,
        };
        match b {
            [x, y] => match (bit(*x), bit(*y)) {
                (Some(x), Some(y)) => Ok(BitPair::new(x, y)),
                _ => Err(CodebookError::BadBits(s.to_string())),
            },
            _ => Err(CodebookError::BadBits(s.to_string())),
        }
    }
}

/// Ordering of EPR pair labels. Labels are 1-based; the code is not
/// guaranteed to be a permutation until validated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SequenceCode(pub Vec<u32>);

impl SequenceCode {
    pub fn identity(n: usize) -> Self {
        SequenceCode((1..=n as u32).collect())
    }

    /// Parses letter labels (`A` = 1, `B` = 2, ...).
    pub fn from_letters(s: &str) -> Self {
        SequenceCode(
            s.chars()
                .filter(|c| c.is_ascii_alphabetic())
                .map(|c| (c.to_ascii_uppercase() as u32) - ('A' as u32) + 1)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.0
    }
}

/// What is wrong with a sequence code that should be a permutation of 1..=n.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceDefects {
    pub expected_len: usize,
    pub actual_len: usize,
    pub duplicates: BTreeSet<u32>,
    pub missing: BTreeSet<u32>,
    pub out_of_range: BTreeSet<u32>,
}

impl SequenceDefects {
    pub fn is_ok(&self) -> bool {
        self.expected_len == self.actual_len
            && self.duplicates.is_empty()
            && self.missing.is_empty()
            && self.out_of_range.is_empty()
    }
}

impl fmt::Display for SequenceDefects {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.expected_len != self.actual_len {
            parts.push(format!(
                "length {} (expected {})",
                self.actual_len, self.expected_len
            ));
        }
        let list = |s: &BTreeSet<u32>| s.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        if !self.duplicates.is_empty() {
            parts.push(format!("duplicate labels {{{}}}", list(&self.duplicates)));
        }
        if !self.missing.is_empty() {
            parts.push(format!("missing labels {{{}}}", list(&self.missing)));
        }
        if !self.out_of_range.is_empty() {
            parts.push(format!("labels out of range {{{}}}", list(&self.out_of_range)));
        }
        f.write_str(&parts.join(", "))
    }
}

pub fn validate_sequence(s: &SequenceCode, n: usize) -> Result<(), SequenceDefects> {
    let mut defects = SequenceDefects {
        expected_len: n,
        actual_len: s.len(),
        ..Default::default()
    };
    let mut seen = vec![false; n + 1];
    for &label in s.labels() {
        if label == 0 || label as usize > n {
            defects.out_of_range.insert(label);
        } else if seen[label as usize] {
            defects.duplicates.insert(label);
        } else {
            seen[label as usize] = true;
        }
    }
    defects.missing = (1..=n as u32).filter(|&l| !seen[l as usize]).collect();
    if defects.is_ok() {
        Ok(())
    } else {
        Err(defects)
    }
}

/// `map[k]` is the Sonai position holding the partner of Bob's position `k`.
/// Positions are 0-based internally; use [`Pairing::one_based`] for display.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pairing {
    map: Vec<u32>,
    inverse: Vec<u32>,
}

impl Pairing {
    pub fn identity(n: usize) -> Self {
        let map: Vec<u32> = (0..n as u32).collect();
        Pairing {
            inverse: map.clone(),
            map,
        }
    }

    pub fn from_zero_based(map: Vec<u32>) -> Result<Self, CodebookError> {
        let n = map.len();
        let mut inverse = vec![u32::MAX; n];
        for (k, &p) in map.iter().enumerate() {
            if p as usize >= n || inverse[p as usize] != u32::MAX {
                let labels = SequenceCode(map.iter().map(|p| p + 1).collect());
                let defects = validate_sequence(&labels, n).unwrap_err();
                return Err(CodebookError::InvalidSequence(defects));
            }
            inverse[p as usize] = k as u32;
        }
        Ok(Pairing { map, inverse })
    }

    pub fn from_one_based(map: &[u32]) -> Result<Self, CodebookError> {
        let zero: Vec<u32> = map.iter().map(|&p| p.wrapping_sub(1)).collect();
        Self::from_zero_based(zero)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sonai position paired with Bob position `k`.
    pub fn map(&self, k: usize) -> usize {
        self.map[k] as usize
    }

    /// Bob position paired with Sonai position `p`.
    pub fn inv(&self, p: usize) -> usize {
        self.inverse[p] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.map
    }

    pub fn one_based(&self) -> Vec<u32> {
        self.map.iter().map(|p| p + 1).collect()
    }
}

pub fn relative_pairing(s_i: &SequenceCode, s_j: &SequenceCode) -> Result<Pairing, CodebookError> {
    if s_i.len() != s_j.len() {
        return Err(CodebookError::LengthMismatch(s_i.len(), s_j.len()));
    }
    let n = s_i.len();
    validate_sequence(s_i, n).map_err(CodebookError::InvalidSequence)?;
    validate_sequence(s_j, n).map_err(CodebookError::InvalidSequence)?;
    let mut position_in_j = vec![0u32; n + 1];
    for (p, &label) in s_j.labels().iter().enumerate() {
        position_in_j[label as usize] = p as u32;
    }
    let map = s_i
        .labels()
        .iter()
        .map(|&label| position_in_j[label as usize])
        .collect();
    Pairing::from_zero_based(map)
}

/// Positions (0-based) where the two pairings disagree.
pub fn mismatch_set(a: &Pairing, b: &Pairing) -> Result<Vec<usize>, CodebookError> {
    if a.len() != b.len() {
        return Err(CodebookError::LengthMismatch(a.len(), b.len()));
    }
    Ok((0..a.len()).filter(|&k| a.map(k) != b.map(k)).collect())
}

/// The permutation of Bob positions `k -> truth^-1(candidate(k))`.
///
/// Under `truth`, a check of `candidate` at `k` compares Bob's outcome at `k`
/// with the partner of Bob's outcome at `shift(k)`.
pub fn shift_permutation(candidate: &Pairing, truth: &Pairing) -> Result<Vec<usize>, CodebookError> {
    if candidate.len() != truth.len() {
        return Err(CodebookError::LengthMismatch(candidate.len(), truth.len()));
    }
    Ok((0..candidate.len())
        .map(|k| truth.inv(candidate.map(k)))
        .collect())
}

/// Mismatch count minus the number of cycles the shift permutation has on
/// the mismatch set. A wrong candidate passes every check on noiseless data
/// with probability `2^-distance`.
pub fn effective_distance(candidate: &Pairing, truth: &Pairing) -> Result<usize, CodebookError> {
    let shift = shift_permutation(candidate, truth)?;
    let n = shift.len();
    let mut visited = vec![false; n];
    let mut distance = 0;
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !visited[k] {
            visited[k] = true;
            k = shift[k];
            len += 1;
        }
        distance += len - 1;
    }
    Ok(distance)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookEntry {
    bits: BitPair,
    s_i: SequenceCode,
    s_j: SequenceCode,
    pairing: Pairing,
}

impl CodebookEntry {
    pub fn new(bits: BitPair, s_i: SequenceCode, s_j: SequenceCode) -> Result<Self, CodebookError> {
        let pairing = relative_pairing(&s_i, &s_j)?;
        Ok(CodebookEntry {
            bits,
            s_i,
            s_j,
            pairing,
        })
    }

    /// Entry with canonical (identity) Bob code.
    pub fn canonical(bits: BitPair, s_j: SequenceCode) -> Result<Self, CodebookError> {
        Self::new(bits, SequenceCode::identity(s_j.len()), s_j)
    }

    pub fn bits(&self) -> BitPair {
        self.bits
    }

    pub fn s_i(&self) -> &SequenceCode {
        &self.s_i
    }

    pub fn s_j(&self) -> &SequenceCode {
        &self.s_j
    }

    pub fn pairing(&self) -> &Pairing {
        &self.pairing
    }

    #[cfg(test)]
    pub(crate) fn with_stale_pairing(mut self, pairing: Pairing) -> Self {
        self.pairing = pairing;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Defect {
    WrongEntryCount(usize),
    InvalidSequence {
        entry: usize,
        side: &'static str,
        defects: SequenceDefects,
    },
    DuplicateBitPair(BitPair),
    MissingBitPair(BitPair),
    BadBits { entry: usize, bits: [u8; 2] },
    PairingCacheStale { entry: usize },
    TooClose {
        a: BitPair,
        b: BitPair,
        distance: usize,
        lambda: usize,
    },
    ZeroLambda,
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::WrongEntryCount(c) => write!(f, "expected 4 entries, found {c}"),
            Defect::InvalidSequence {
                entry,
                side,
                defects,
            } => write!(f, "entry {entry} {side} is not a permutation: {defects}"),
            Defect::DuplicateBitPair(b) => write!(f, "duplicate bit pair {b}"),
            Defect::MissingBitPair(b) => write!(f, "missing bit pair {b}"),
            Defect::BadBits { entry, bits } => write!(f, "entry {entry} has bad bits {bits:?}"),
            Defect::PairingCacheStale { entry } => {
                write!(f, "entry {entry} pairing does not match its sequence codes")
            }
            Defect::TooClose {
                a,
                b,
                distance,
                lambda,
            } => write!(
                f,
                "entries {a} and {b} at effective distance {distance} < lambda {lambda}"
            ),
            Defect::ZeroLambda => write!(f, "lambda must be at least 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    n: usize,
    lambda: usize,
    entries: Vec<CodebookEntry>,
}

impl Codebook {
    /// Builds and validates.
    pub fn new(n: usize, lambda: usize, entries: Vec<CodebookEntry>) -> Result<Self, CodebookError> {
        let cb = Codebook::from_parts_unchecked(n, lambda, entries);
        let defects = validate_codebook(&cb);
        if defects.is_empty() {
            Ok(cb)
        } else {
            Err(CodebookError::Invalid(defects))
        }
    }

    pub fn from_parts_unchecked(n: usize, lambda: usize, mut entries: Vec<CodebookEntry>) -> Self {
        // Keep entries in trial order so candidate indices are stable.
        entries.sort_by_key(|e| trial_rank(e.bits));
        Codebook { n, lambda, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Entries in trial order (00, 11, 01, 10).
    pub fn entries(&self) -> &[CodebookEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &CodebookEntry {
        &self.entries[index]
    }

    pub fn index_for_bits(&self, bits: BitPair) -> Option<usize> {
        self.entries.iter().position(|e| e.bits == bits)
    }

    /// Smallest effective distance over the six ordered-pair comparisons.
    pub fn min_distance(&self) -> usize {
        let mut min = usize::MAX;
        for a in 0..self.entries.len() {
            for b in (a + 1)..self.entries.len() {
                let d = effective_distance(self.entries[a].pairing(), self.entries[b].pairing())
                    .unwrap_or(0);
                min = min.min(d);
            }
        }
        min
    }

    pub fn to_document(&self) -> CodebookDocument {
        CodebookDocument {
            version: CODEBOOK_VERSION,
            n: self.n,
            lambda: self.lambda,
            entries: self
                .entries
                .iter()
                .map(|e| EntryDocument {
                    bits: e.bits.as_array(),
                    s_j: e.s_j.0.clone(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &CodebookDocument) -> Result<Self, CodebookError> {
        if doc.version != CODEBOOK_VERSION {
            return Err(CodebookError::Version(doc.version));
        }
        let defects = validate_document(doc);
        if !defects.is_empty() {
            return Err(CodebookError::Invalid(defects));
        }
        let entries = doc
            .entries
            .iter()
            .map(|e| {
                let bits = BitPair::from_array(e.bits).expect("validated");
                CodebookEntry::canonical(bits, SequenceCode(e.s_j.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Codebook::new(doc.n, doc.lambda, entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("codebook serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CodebookError> {
        let doc: CodebookDocument = serde_json::from_str(s)?;
        Codebook::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodebookError> {
        Codebook::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodebookError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

fn trial_rank(bits: BitPair) -> usize {
    BitPair::TRIAL_ORDER
        .iter()
        .position(|&b| b == bits)
        .expect("every bit pair has a rank")
}

pub fn validate_codebook(cb: &Codebook) -> Vec<Defect> {
    let mut defects = Vec::new();
    if cb.lambda == 0 {
        defects.push(Defect::ZeroLambda);
    }
    if cb.entries.len() != 4 {
        defects.push(Defect::WrongEntryCount(cb.entries.len()));
    }
    check_bit_pairs(cb.entries.iter().map(|e| e.bits), &mut defects);

    let mut valid = true;
    for (idx, e) in cb.entries.iter().enumerate() {
        for (side, s) in [("s_i", &e.s_i), ("s_j", &e.s_j)] {
            if let Err(d) = validate_sequence(s, cb.n) {
                valid = false;
                defects.push(Defect::InvalidSequence {
                    entry: idx,
                    side,
                    defects: d,
                });
            }
        }
        match relative_pairing(&e.s_i, &e.s_j) {
            Ok(p) if p == e.pairing => {}
            _ => {
                valid = false;
                defects.push(Defect::PairingCacheStale { entry: idx });
            }
        }
    }
    if valid {
        let pairings: Vec<(BitPair, &Pairing)> =
            cb.entries.iter().map(|e| (e.bits, &e.pairing)).collect();
        check_distances(&pairings, cb.lambda, &mut defects);
    }
    defects
}

fn check_bit_pairs(bits: impl Iterator<Item = BitPair>, defects: &mut Vec<Defect>) {
    let mut seen = BTreeSet::new();
    for b in bits {
        if !seen.insert(b) {
            defects.push(Defect::DuplicateBitPair(b));
        }
    }
    for b in BitPair::TRIAL_ORDER {
        if !seen.contains(&b) {
            defects.push(Defect::MissingBitPair(b));
        }
    }
}

fn check_distances(pairings: &[(BitPair, &Pairing)], lambda: usize, defects: &mut Vec<Defect>) {
    for a in 0..pairings.len() {
        for b in (a + 1)..pairings.len() {
            let d = effective_distance(pairings[a].1, pairings[b].1).unwrap_or(0);
            if d < lambda {
                defects.push(Defect::TooClose {
                    a: pairings[a].0,
                    b: pairings[b].0,
                    distance: d,
                    lambda,
                });
            }
        }
    }
}

/// On-disk form; Bob's code is implicitly the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookDocument {
    pub version: u32,
    pub n: usize,
    pub lambda: usize,
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub bits: [u8; 2],
    pub s_j: Vec<u32>,
}

/// Validates a document that may not even form a codebook (e.g. a code
/// that repeats labels).
pub fn validate_document(doc: &CodebookDocument) -> Vec<Defect> {
    let mut defects = Vec::new();
    if doc.lambda == 0 {
        defects.push(Defect::ZeroLambda);
    }
    if doc.entries.len() != 4 {
        defects.push(Defect::WrongEntryCount(doc.entries.len()));
    }
    let mut bits = Vec::new();
    for (idx, e) in doc.entries.iter().enumerate() {
        match BitPair::from_array(e.bits) {
            Some(b) => bits.push(b),
            None => defects.push(Defect::BadBits {
                entry: idx,
                bits: e.bits,
            }),
        }
    }
    check_bit_pairs(bits.into_iter(), &mut defects);

    let mut pairings = Vec::new();
    for (idx, e) in doc.entries.iter().enumerate() {
        let s_j = SequenceCode(e.s_j.clone());
        match validate_sequence(&s_j, doc.n) {
            Ok(()) => {
                if let (Some(b), Ok(p)) = (
                    BitPair::from_array(e.bits),
                    relative_pairing(&SequenceCode::identity(doc.n), &s_j),
                ) {
                    pairings.push((b, p));
                }
            }
            Err(d) => defects.push(Defect::InvalidSequence {
                entry: idx,
                side: "s_j",
                defects: d,
            }),
        }
    }
    if pairings.len() == doc.entries.len() {
        let refs: Vec<(BitPair, &Pairing)> = pairings.iter().map(|(b, p)| (*b, p)).collect();
        check_distances(&refs, doc.lambda, &mut defects);
    }
    defects
}

/// Four canonical entries with pairwise effective distance at least `lambda`,
/// by rejection sampling.
pub fn generate_codebook<R: Rng + ?Sized>(
    n: usize,
    lambda: usize,
    rng: &mut R,
) -> Result<Codebook, CodebookError> {
    generate_codebook_with_budget(n, lambda, DEFAULT_ATTEMPT_BUDGET, rng)
}

pub fn generate_codebook_with_budget<R: Rng + ?Sized>(
    n: usize,
    lambda: usize,
    budget: usize,
    rng: &mut R,
) -> Result<Codebook, CodebookError> {
    if lambda == 0 {
        return Err(CodebookError::ZeroLambda);
    }
    let capacity = CodebookError::Capacity {
        n,
        lambda,
        attempts: budget,
    };
    // A single n-cycle is the farthest any two pairings can be.
    if n == 0 || lambda > n - 1 {
        return Err(capacity);
    }
    let mut pairings: Vec<Pairing> = Vec::with_capacity(4);
    let mut codes: Vec<Vec<u32>> = Vec::with_capacity(4);
    let mut rejections = 0;
    while pairings.len() < 4 {
        let mut s_j: Vec<u32> = (1..=n as u32).collect();
        s_j.shuffle(rng);
        let map = {
            let mut m = vec![0u32; n];
            for (p, &label) in s_j.iter().enumerate() {
                m[label as usize - 1] = p as u32;
            }
            m
        };
        let pairing = Pairing::from_zero_based(map).expect("shuffle is a permutation");
        let far = pairings
            .iter()
            .all(|other| effective_distance(&pairing, other).expect("same n") >= lambda);
        if far {
            pairings.push(pairing);
            codes.push(s_j);
        } else {
            rejections += 1;
            if rejections >= budget {
                return Err(capacity);
            }
        }
    }
    let entries = BitPair::TRIAL_ORDER
        .iter()
        .zip(codes)
        .map(|(&bits, s_j)| CodebookEntry::canonical(bits, SequenceCode(s_j)))
        .collect::<Result<Vec<_>, _>>()?;
    Codebook::new(n, lambda, entries)
}

pub fn entry_for_bits(cb: &Codebook, bits: BitPair) -> &CodebookEntry {
    let idx = cb
        .index_for_bits(bits)
        .expect("validated codebook holds all four bit pairs");
    &cb.entries[idx]
}

/// Sonai's codes of the 8-pair example, in trial order 00, 11, 01, 10.
/// The last one is printed with E and C repeated; see [`EXAMPLE_S_J_10_CORRECTED`].
pub const EXAMPLE_S_J: [&str; 4] = ["BFGAEHDC", "ACGEBDHF", "FABDCGEH", "ECHBEACD"];

/// Later duplicate occurrences replaced by the missing labels, ascending.
pub const EXAMPLE_S_J_10_CORRECTED: &str = "ECHBFAGD";

/// The 8-pair example codebook with the repeated-label code corrected.
/// `lambda` is set to the smallest pairwise distance it actually has.
pub fn example_codebook() -> Codebook {
    let codes = [EXAMPLE_S_J[0], EXAMPLE_S_J[1], EXAMPLE_S_J[2], EXAMPLE_S_J_10_CORRECTED];
    let entries: Vec<CodebookEntry> = BitPair::TRIAL_ORDER
        .iter()
        .zip(codes)
        .map(|(&bits, code)| {
            CodebookEntry::canonical(bits, SequenceCode::from_letters(code))
                .expect("example codes are permutations")
        })
        .collect();
    let probe = Codebook::from_parts_unchecked(8, 1, entries.clone());
    let lambda = probe.min_distance();
    Codebook::new(8, lambda, entries).expect("example codebook is valid")
}

/// The example as printed, which fails validation.
pub fn example_document_as_printed() -> CodebookDocument {
    CodebookDocument {
        version: CODEBOOK_VERSION,
        n: 8,
        lambda: 1,
        entries: BitPair::TRIAL_ORDER
            .iter()
            .zip(EXAMPLE_S_J)
            .map(|(b, code)| EntryDocument {
                bits: b.as_array(),
                s_j: SequenceCode::from_letters(code).0,
            })
            .collect(),
    }
}
