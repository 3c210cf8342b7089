//! Independent seeded sessions, fanned out over a worker pool.
//!
//! Trial `i` runs with seed `derive_seed(master, i)`, so the per-trial
//! records do not depend on how many workers ran them. Aggregation walks the
//! records in trial order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{effective_distance, generate_codebook, BitPair, Codebook};
use crate::epr::{self, derive_seed};
use crate::netsim::Strategy;
use crate::protocol::{
    fairness_gap, run_with_codebook, CandidateTracker, DecodeResult, DecodeStatus, ProtocolConfig,
    ProtocolError,
};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0}")]
    Setup(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Tally decode outcomes.
    Honest,
    /// Also replay each transcript against a designated wrong entry.
    Soundness,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    /// `seed` is the master seed.
    pub config: ProtocolConfig,
    pub trials: usize,
    /// Fixed bit pair, or uniformly random per trial.
    pub bits: Option<BitPair>,
    pub strategies: [Strategy; 2],
    pub mode: TrialMode,
    pub candidate: Option<BitPair>,
    /// Fixed codebook, or a fresh one per trial.
    pub codebook: Option<Codebook>,
    /// `None` uses every core; `Some(1)` runs on the calling thread.
    pub workers: Option<usize>,
}

impl Experiment {
    pub fn honest(config: ProtocolConfig, trials: usize) -> Self {
        Experiment {
            config,
            trials,
            bits: None,
            strategies: [Strategy::Honest; 2],
            mode: TrialMode::Honest,
            candidate: None,
            codebook: None,
            workers: None,
        }
    }

    fn validate(&self) -> Result<(), MonteCarloError> {
        let setup = |m: &str| Err(MonteCarloError::Setup(m.to_string()));
        if self.trials == 0 {
            return setup("trials must be at least 1");
        }
        self.config.validate()?;
        for s in &self.strategies {
            s.validate(self.n()).map_err(MonteCarloError::Setup)?;
        }
        if self.mode == TrialMode::Soundness {
            match (self.bits, self.candidate) {
                (Some(b), Some(c)) if b != c => {}
                (Some(_), Some(_)) => return setup("candidate must differ from the encoded bits"),
                _ => return setup("soundness mode needs fixed --bits and a --candidate"),
            }
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.codebook.as_ref().map_or(self.config.n, Codebook::n)
    }
}

/// One trial as written to the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub bits: String,
    /// `success`, `wrong`, `undecided` or `abort_<reason>`.
    pub outcome: String,
    pub bob_status: String,
    pub sonai_status: String,
    pub confidence: f64,
    pub fairness_gap: usize,
    pub candidate_survived: Option<bool>,
    pub wrong1_distance: usize,
    pub wrong1_survived: bool,
    pub wrong2_distance: usize,
    pub wrong2_survived: bool,
    pub wrong3_distance: usize,
    pub wrong3_survived: bool,
}

impl TrialRecord {
    pub fn wrong(&self) -> [(usize, bool); 3] {
        [
            (self.wrong1_distance, self.wrong1_survived),
            (self.wrong2_distance, self.wrong2_survived),
            (self.wrong3_distance, self.wrong3_survived),
        ]
    }
}

fn classify(bits: BitPair, bob: &DecodeResult, sonai: &DecodeResult) -> String {
    for r in [bob, sonai] {
        if let DecodeStatus::Abort(reason) = r.status {
            return format!("abort_{reason}");
        }
    }
    if bob.status == DecodeStatus::Undecided || sonai.status == DecodeStatus::Undecided {
        "undecided".into()
    } else if bob.bits == Some(bits) && sonai.bits == Some(bits) {
        "success".into()
    } else {
        "wrong".into()
    }
}

pub fn run_trial(exp: &Experiment, trial: usize) -> Result<TrialRecord, MonteCarloError> {
    let seed = derive_seed(exp.config.seed, trial as u64);
    let config = ProtocolConfig {
        seed,
        ..exp.config.clone()
    };
    let bits = exp.bits.unwrap_or_else(|| {
        use rand::Rng;
        let mut rng = epr::substream(seed, epr::Stream::Bits);
        BitPair::new(rng.gen(), rng.gen())
    });
    let fresh;
    let cb = match &exp.codebook {
        Some(cb) => cb,
        None => {
            let mut rng = epr::substream(seed, epr::Stream::Codebook);
            fresh = generate_codebook(config.n, config.lambda, &mut rng)
                .map_err(ProtocolError::from)?;
            &fresh
        }
    };
    let out = run_with_codebook(&config, cb, bits, exp.strategies)?;

    let mut public = CandidateTracker::public(cb, config.delta);
    public.observe_all(out.transcript.events())?;
    let truth = out.block.entry_index;
    let mut wrong = (0..4).filter(|&c| c != truth).map(|c| {
        let d = effective_distance(cb.entry(c).pairing(), cb.entry(truth).pairing())
            .expect("same n");
        (d, public.states()[c].alive)
    });
    let mut next = || wrong.next().expect("three wrong entries");
    let (w1, w2, w3) = (next(), next(), next());

    let candidate_survived = match exp.mode {
        TrialMode::Soundness => {
            let c = exp.candidate.and_then(|c| cb.index_for_bits(c)).expect("validated");
            Some(public.states()[c].alive)
        }
        TrialMode::Honest => None,
    };

    Ok(TrialRecord {
        trial,
        seed,
        bits: bits.to_string(),
        outcome: classify(bits, &out.bob, &out.sonai),
        bob_status: out.bob.status.to_string(),
        sonai_status: out.sonai.status.to_string(),
        confidence: out.session.confidence,
        fairness_gap: fairness_gap(&out.transcript),
        candidate_survived,
        wrong1_distance: w1.0,
        wrong1_survived: w1.1,
        wrong2_distance: w2.0,
        wrong2_survived: w2.1,
        wrong3_distance: w3.0,
        wrong3_survived: w3.1,
    })
}

pub fn run_trials_sequential(exp: &Experiment) -> Result<Vec<TrialRecord>, MonteCarloError> {
    exp.validate()?;
    (0..exp.trials).map(|i| run_trial(exp, i)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_trials_parallel(exp: &Experiment) -> Result<Vec<TrialRecord>, MonteCarloError> {
    use rayon::prelude::*;
    exp.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.workers.unwrap_or(0))
        .build()
        .map_err(|e| MonteCarloError::Pool(e.to_string()))?;
    pool.install(|| {
        (0..exp.trials)
            .into_par_iter()
            .map(|i| run_trial(exp, i))
            .collect()
    })
}

/// Parallel when built with the `parallel` feature and more than one worker
/// is allowed, sequential otherwise. Records come back in trial order.
pub fn run_trials(exp: &Experiment) -> Result<Vec<TrialRecord>, MonteCarloError> {
    #[cfg(feature = "parallel")]
    if exp.workers != Some(1) {
        return run_trials_parallel(exp);
    }
    run_trials_sequential(exp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub version: String,
    pub seed: u64,
    pub mode: TrialMode,
    pub bits: Option<String>,
    pub candidate: Option<String>,
    pub strategy_bob: String,
    pub strategy_sonai: String,
    pub codebook: String,
    pub config: ProtocolConfig,
}

impl ReportHeader {
    pub fn for_experiment(exp: &Experiment) -> Self {
        ReportHeader {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: exp.config.seed,
            mode: exp.mode,
            bits: exp.bits.map(|b| b.to_string()),
            candidate: exp.candidate.map(|b| b.to_string()),
            strategy_bob: exp.strategies[0].to_string(),
            strategy_sonai: exp.strategies[1].to_string(),
            codebook: if exp.codebook.is_some() {
                "fixed".into()
            } else {
                "fresh-per-trial".into()
            },
            config: ProtocolConfig {
                n: exp.n(),
                ..exp.config.clone()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalTally {
    pub trials: usize,
    pub survived: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSurvival {
    pub survived: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub header: ReportHeader,
    pub trials: usize,
    pub decode_success_rate: f64,
    pub successes: usize,
    pub wrong_decodes: usize,
    pub undecided: usize,
    pub abort_counts: BTreeMap<String, usize>,
    pub mean_confidence: f64,
    pub fairness_gap_histogram: BTreeMap<usize, usize>,
    /// Keyed by effective distance to the true entry.
    pub survival_by_distance: BTreeMap<usize, SurvivalTally>,
    pub candidate_survival: Option<CandidateSurvival>,
}

pub fn aggregate(header: ReportHeader, records: &[TrialRecord]) -> StatsReport {
    let trials = records.len();
    let mut successes = 0;
    let mut wrong_decodes = 0;
    let mut undecided = 0;
    let mut abort_counts = BTreeMap::new();
    let mut confidence_sum = 0.0;
    let mut gaps = BTreeMap::new();
    let mut survival: BTreeMap<usize, SurvivalTally> = BTreeMap::new();
    let mut candidate = None::<usize>;
    for r in records {
        match r.outcome.as_str() {
            "success" => successes += 1,
            "wrong" => wrong_decodes += 1,
            "undecided" => undecided += 1,
            other => {
                let reason = other.strip_prefix("abort_").unwrap_or(other);
                *abort_counts.entry(reason.to_string()).or_insert(0) += 1;
            }
        }
        confidence_sum += r.confidence;
        *gaps.entry(r.fairness_gap).or_insert(0) += 1;
        for (d, s) in r.wrong() {
            let t = survival.entry(d).or_default();
            t.trials += 1;
            t.survived += s as usize;
        }
        if let Some(s) = r.candidate_survived {
            *candidate.get_or_insert(0) += s as usize;
        }
    }
    let per_trial = |x: usize| x as f64 / trials.max(1) as f64;
    StatsReport {
        header,
        trials,
        decode_success_rate: per_trial(successes),
        successes,
        wrong_decodes,
        undecided,
        abort_counts,
        mean_confidence: confidence_sum / trials.max(1) as f64,
        fairness_gap_histogram: gaps,
        survival_by_distance: survival,
        candidate_survival: candidate.map(|survived| CandidateSurvival {
            survived,
            rate: per_trial(survived),
        }),
    }
}

pub fn run_experiment(exp: &Experiment) -> Result<(Vec<TrialRecord>, StatsReport), MonteCarloError> {
    let records = run_trials(exp)?;
    let report = aggregate(ReportHeader::for_experiment(exp), &records);
    Ok((records, report))
}

/// Per-trial CSV; the header travels as `#` comment lines.
pub fn write_csv(
    path: impl AsRef<Path>,
    header: &ReportHeader,
    records: &[TrialRecord],
) -> Result<(), MonteCarloError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        file,
        "# entpost {} seed={}",
        header.version, header.seed
    )?;
    writeln!(
        file,
        "# {}",
        serde_json::to_string(header).expect("header serializes")
    )?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>, MonteCarloError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn write_report(path: impl AsRef<Path>, report: &StatsReport) -> Result<(), MonteCarloError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::example_codebook;

    fn small(trials: usize) -> Experiment {
        Experiment::honest(
            ProtocolConfig {
                n: 32,
                lambda: 8,
                seed: 2024,
                ..Default::default()
            },
            trials,
        )
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let mut one = small(64);
        one.workers = Some(1);
        let mut many = small(64);
        many.workers = Some(4);
        let (ra, a) = run_experiment(&one).unwrap();
        let (rb, b) = run_experiment(&many).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn counts_sum_to_trials() {
        let mut exp = small(50);
        exp.strategies = [Strategy::Honest, Strategy::WithholdAfter(3)];
        let (_, r) = run_experiment(&exp).unwrap();
        let total = r.successes + r.wrong_decodes + r.undecided + r.abort_counts.values().sum::<usize>();
        assert_eq!(total, 50);
        assert_eq!(r.abort_counts.get("timeout"), Some(&50));
        assert!((0.0..=1.0).contains(&r.decode_success_rate));
        assert_eq!(r.fairness_gap_histogram.values().sum::<usize>(), 50);
    }

    #[test]
    fn soundness_mode_needs_candidate() {
        let mut exp = small(4);
        exp.mode = TrialMode::Soundness;
        assert!(run_trials(&exp).is_err());
        exp.bits = Some(BitPair::new(false, false));
        exp.candidate = Some(BitPair::new(false, false));
        assert!(run_trials(&exp).is_err());
        exp.candidate = Some(BitPair::new(true, true));
        exp.codebook = Some(example_codebook());
        let recs = run_trials(&exp).unwrap();
        assert!(recs.iter().all(|r| r.candidate_survived.is_some()));
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(matches!(run_trials(&small(0)), Err(MonteCarloError::Setup(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let exp = small(10);
        let (recs, report) = run_experiment(&exp).unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &report.header, &recs).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, recs);
    }
}
