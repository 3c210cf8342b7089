//! Acceptance checks. Each test prints one `PASS`/`FAIL` line (written
//! straight to stderr so it shows without `--nocapture`) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use entpost::codebook::{
    effective_distance, example_codebook, example_document_as_printed, validate_document,
    CodebookEntry, Defect, Pairing, SequenceCode,
};
use entpost::epr::{substream, PairOutcomes, SpinOutcome, Stream};
use entpost::montecarlo::{run_experiment, run_trials, Experiment, TrialMode};
use entpost::netsim::Strategy;
use entpost::protocol::{
    fairness_gap, place_block, run_session, run_with_codebook, AbortReason, CandidateTracker,
    DecodeStatus, RevealCursor, Transcript,
};
use entpost::{BitPair, Codebook, ProtocolConfig, Role};
use rand::seq::SliceRandom;
use rand::Rng;

fn report(name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: &str) -> bool {
    let pass = ok && elapsed <= budget;
    let line = format!(
        "{} {name}: {detail} [{:.2}s, budget {:.0}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    pass
}

fn example_config(seed: u64) -> ProtocolConfig {
    let cb = example_codebook();
    ProtocolConfig {
        n: cb.n(),
        lambda: cb.lambda(),
        seed,
        ..Default::default()
    }
}

#[test]
fn walkthrough_fidelity() {
    let start = Instant::now();
    let cb = example_codebook();
    let (mut correct, mut wrong, mut truth_lost) = (0, 0, 0);
    let mut per_case = Vec::new();
    for bits in BitPair::TRIAL_ORDER {
        let mut case_ok = 0;
        for seed in 0..100 {
            let out = run_with_codebook(&example_config(seed), &cb, bits, [Strategy::Honest; 2])
                .expect("session runs");
            let ok = [out.bob, out.sonai]
                .iter()
                .all(|r| r.is_decoded() && r.bits == Some(bits));
            correct += ok as usize;
            case_ok += ok as usize;
            wrong += [out.bob, out.sonai]
                .iter()
                .filter(|r| r.is_decoded() && r.bits != Some(bits))
                .count();
            for t in [&out.bob_tracker, &out.sonai_tracker].into_iter().flatten() {
                truth_lost += !t.states()[out.block.entry_index].alive as usize;
            }
        }
        per_case.push(format!("{bits}:{case_ok}/100"));
    }
    let detail = format!(
        "{correct}/400 sessions decoded by both receivers ({}); wrong decodes {wrong}; true entry eliminated {truth_lost}",
        per_case.join(" ")
    );
    let pass = report(
        "walkthrough fidelity",
        correct == 400,
        start.elapsed(),
        Duration::from_secs(1),
        &detail,
    );
    // Independently of the success count: nothing may ever decode wrongly,
    // and the true entry can never be eliminated on noiseless data.
    assert_eq!(wrong, 0);
    assert_eq!(truth_lost, 0);
    assert!(pass, "{detail}");
}

fn all_perms(n: usize) -> Vec<Vec<u32>> {
    fn rec(cur: &mut Vec<u32>, used: &mut Vec<bool>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                cur.push(v as u32);
                rec(cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Noiseless preparations (one outcome bit per Bob position) under which
/// `candidate` passes every check, given `truth` placed the pairs.
fn surviving_preparations(candidate: &[u32], truth: &[u32]) -> u64 {
    let n = truth.len();
    let mut truth_inv = vec![0usize; n];
    for (k, &p) in truth.iter().enumerate() {
        truth_inv[p as usize] = k;
    }
    // Check k compares Bob's k with Sonai's candidate(k), which is the twin
    // of Bob's truth^-1(candidate(k)): it passes iff those two Bob bits agree.
    let partner: Vec<usize> = (0..n).map(|k| truth_inv[candidate[k] as usize]).collect();
    (0u64..1 << n)
        .filter(|x| (0..n).all(|k| (x >> k) & 1 == (x >> partner[k]) & 1))
        .count() as u64
}

fn pairing(map: &[u32]) -> Pairing {
    Pairing::from_zero_based(map.to_vec()).expect("permutation")
}

/// Full-pipeline count: place every noiseless preparation with the codebook,
/// feed the alternating transcript to a public tracker, count survivors.
fn tracker_survivals(cb: &Codebook, truth: usize, candidate: usize) -> u64 {
    let n = cb.n();
    let mut survived = 0;
    for x in 0u64..1 << n {
        let pairs: Vec<PairOutcomes> = (0..n)
            .map(|l| {
                let s = if (x >> l) & 1 == 1 {
                    SpinOutcome::Plus
                } else {
                    SpinOutcome::Minus
                };
                PairOutcomes::new(s, -s)
            })
            .collect();
        let block = place_block(cb, truth, &pairs);
        let mut tracker = CandidateTracker::public(cb, 0.0);
        let mut bob = RevealCursor::new(Role::Bob, block.bob.clone());
        let mut sonai = RevealCursor::new(Role::Sonai, block.sonai.clone());
        let mut round = 0;
        for _ in 0..n {
            for c in [&mut bob, &mut sonai] {
                let e = c.reveal_next(&mut round).expect("outcome left");
                tracker.observe(&e).expect("valid event");
            }
        }
        survived += tracker.states()[candidate].alive as u64;
    }
    survived
}

#[test]
fn exact_soundness_oracle() {
    let start = Instant::now();
    let mut checked = 0u64;
    let mut mismatches = Vec::new();
    let mut compare = |cand: &[u32], truth: &[u32], checked: &mut u64| {
        let d = effective_distance(&pairing(cand), &pairing(truth)).expect("same n");
        let got = surviving_preparations(cand, truth);
        let want = 1u64 << (truth.len() - d);
        *checked += 1;
        if got != want && mismatches.len() < 5 {
            mismatches.push(format!("{cand:?} vs {truth:?}: {got} != {want}"));
        }
    };

    // Every (candidate, truth) pair for n <= 5.
    for n in 1..=5 {
        let perms = all_perms(n);
        for truth in &perms {
            for cand in &perms {
                compare(cand, truth, &mut checked);
            }
        }
    }

    // n = 6..8: every candidate against a spread of truths.
    let cb = example_codebook();
    let example_maps: Vec<Vec<u32>> = cb
        .entries()
        .iter()
        .map(|e| e.pairing().as_slice().to_vec())
        .collect();
    let mut rng = substream(2024, Stream::Codebook);
    for n in 6..=8 {
        let perms = all_perms(n);
        let mut truths: Vec<Vec<u32>> = vec![(0..n as u32).collect(), (0..n as u32).rev().collect()];
        for _ in 0..2 {
            let mut p: Vec<u32> = (0..n as u32).collect();
            p.shuffle(&mut rng);
            truths.push(p);
        }
        if n == 8 {
            truths.extend(example_maps.iter().cloned());
        }
        for truth in &truths {
            for cand in &perms {
                compare(cand, truth, &mut checked);
            }
        }
    }

    // The worked case, through the whole pipeline.
    let d = effective_distance(cb.entry(1).pairing(), cb.entry(0).pairing()).unwrap();
    let worked = tracker_survivals(&cb, 0, 1);
    let worked_ok = d == 4 && worked == 16;

    // Every ordered pair of the example codebook through the tracker.
    let mut pipeline_ok = true;
    for truth in 0..4 {
        for cand in (0..4).filter(|&c| c != truth) {
            let d = effective_distance(cb.entry(cand).pairing(), cb.entry(truth).pairing()).unwrap();
            pipeline_ok &= tracker_survivals(&cb, truth, cand) == 1 << (8 - d);
        }
    }

    let detail = format!(
        "{checked} pairing pairs (all pairs n<=5; all candidates vs 5-8 truths at n=6..8), {} mismatches; worked case 11-vs-00 distance {d} survives {worked}/256; example codebook pipeline {}",
        mismatches.len(),
        if pipeline_ok { "exact" } else { "MISMATCH" }
    );
    let pass = report(
        "exact soundness oracle",
        mismatches.is_empty() && worked_ok && pipeline_ok,
        start.elapsed(),
        Duration::from_secs(10),
        &detail,
    );
    assert!(pass, "{detail} {mismatches:?}");
}

#[test]
fn statistical_soundness() {
    let start = Instant::now();
    let cb = example_codebook();
    let exp = Experiment {
        config: example_config(20_240_601),
        trials: 100_000,
        bits: Some(BitPair::new(false, false)),
        strategies: [Strategy::Honest; 2],
        mode: TrialMode::Soundness,
        candidate: Some(BitPair::new(true, true)),
        codebook: Some(cb.clone()),
        workers: None,
    };
    let d = effective_distance(cb.entry(1).pairing(), cb.entry(0).pairing()).unwrap();
    let (_, stats) = run_experiment(&exp).expect("experiment runs");
    let rate = stats.candidate_survival.expect("soundness mode").rate;
    let ok = d == 4 && (rate - 0.0625).abs() <= 0.0023;
    let detail = format!("candidate 11 vs truth 00 (distance {d}): survival {rate:.5}, target 0.0625 +- 0.0023");
    let pass = report("statistical soundness", ok, start.elapsed(), Duration::from_secs(30), &detail);
    assert!(pass, "{detail}");
}

#[test]
fn completeness_at_scale() {
    let start = Instant::now();
    let config = ProtocolConfig {
        n: 64,
        lambda: 16,
        seed: 77,
        ..Default::default()
    };
    let (_, stats) = run_experiment(&Experiment::honest(config, 10_000)).expect("experiment runs");
    let detail = format!(
        "n=64 lambda=16: {}/{} correct, {} wrong, {} undecided, aborts {:?}",
        stats.successes, stats.trials, stats.wrong_decodes, stats.undecided, stats.abort_counts
    );
    let pass = report(
        "completeness at scale",
        stats.successes == 10_000,
        start.elapsed(),
        Duration::from_secs(60),
        &detail,
    );
    assert!(pass, "{detail}");
}

#[test]
fn noise_margin() {
    let start = Instant::now();
    let config = ProtocolConfig {
        n: 256,
        lambda: 16,
        noise: entpost::epr::NoiseModel::new(0.05).unwrap(),
        delta: 0.25,
        seed: 5,
        ..Default::default()
    };
    let (_, stats) = run_experiment(&Experiment::honest(config, 10_000)).expect("experiment runs");
    let detail = format!(
        "eps=0.05 delta=0.25 n=256: {:.4} correct ({}/{}), {} wrong, {} undecided, aborts {:?}",
        stats.decode_success_rate,
        stats.successes,
        stats.trials,
        stats.wrong_decodes,
        stats.undecided,
        stats.abort_counts
    );
    let pass = report(
        "noise margin",
        stats.decode_success_rate >= 0.99,
        start.elapsed(),
        Duration::from_secs(300),
        &detail,
    );
    assert!(pass, "{detail}");
}

#[test]
fn fairness() {
    let start = Instant::now();
    let n = 64;
    let mut problems: Vec<String> = Vec::new();

    // Honest alternation, both first-mover choices.
    let mut honest_gaps = BTreeMap::new();
    for seed in 0..200u64 {
        let config = ProtocolConfig {
            n,
            seed,
            reveal_first: if seed % 2 == 0 { Role::Bob } else { Role::Sonai },
            ..Default::default()
        };
        let bits = BitPair::TRIAL_ORDER[seed as usize % 4];
        let out = run_session(&config, bits, [Strategy::Honest; 2]).expect("session runs");
        *honest_gaps.entry(fairness_gap(&out.transcript)).or_insert(0) += 1;
    }
    if honest_gaps.keys().any(|&g| g != 1) {
        problems.push(format!("honest gaps {honest_gaps:?}"));
    }

    // Withholding cheater.
    let (mut lead_violations, mut non_timeouts, mut survival_violations) = (0, 0, 0);
    let (mut compared, mut evidence_over) = (0, 0);
    let mut evidence_hist: BTreeMap<i64, usize> = BTreeMap::new();
    for t in 0..1000u64 {
        let mut rng = substream(t, Stream::Bits);
        let k = rng.gen_range(0..n);
        let cheater = if rng.gen() { Role::Sonai } else { Role::Bob };
        let first = if rng.gen() { Role::Bob } else { Role::Sonai };
        let config = ProtocolConfig {
            n,
            seed: t,
            reveal_first: first,
            ..Default::default()
        };
        let mut strategies = [Strategy::Honest; 2];
        strategies[(cheater == Role::Sonai) as usize] = Strategy::WithholdAfter(k);
        let bits = BitPair::TRIAL_ORDER[rng.gen_range(0..4)];
        let out = run_session(&config, bits, strategies).expect("session runs");

        let (mut honest_count, mut cheat_count) = (0usize, 0usize);
        for e in out.transcript.events() {
            if e.party == cheater {
                cheat_count += 1;
            } else {
                honest_count += 1;
            }
            if honest_count > cheat_count + 1 {
                lead_violations += 1;
                break;
            }
        }
        if out.session.status != DecodeStatus::Abort(AbortReason::Timeout) {
            non_timeouts += 1;
        }

        let truth = out.block.entry_index;
        let (b, s) = (out.bob_tracker.as_ref().unwrap(), out.sonai_tracker.as_ref().unwrap());
        for c in (0..4).filter(|&c| c != truth) {
            // survival_logprob is defined for live candidates: compare where
            // both parties still hold the candidate.
            if b.states()[c].alive && s.states()[c].alive {
                compared += 1;
                let diff = (b.survival(c, truth, true).log2 - s.survival(c, truth, true).log2).abs();
                survival_violations += (diff > 1.0) as usize;
            }
            let ev = (b.evidence_bound(c, truth) - s.evidence_bound(c, truth)).abs();
            *evidence_hist.entry(ev as i64).or_insert(0) += 1;
            evidence_over += (ev > 1.0) as usize;
        }
    }
    if lead_violations > 0 {
        problems.push(format!("{lead_violations} sessions with honest lead > 1"));
    }
    if non_timeouts > 0 {
        problems.push(format!("{non_timeouts} sessions not ending in timeout"));
    }
    if survival_violations > 0 {
        problems.push(format!("{survival_violations} survival differences > 1 bit"));
    }
    let detail = format!(
        "honest gaps {honest_gaps:?}; 1000 withholding sessions: lead>1 {lead_violations}, non-timeout {non_timeouts}, survival diff>1 bit {survival_violations}/{compared} live candidates (informational: completed-check evidence diff histogram {evidence_hist:?}, {evidence_over} over 1 bit)"
    );
    let pass = report("fairness", problems.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
    assert!(pass, "{detail}; {problems:?}");
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["entpost"];
    full.extend_from_slice(args);
    let code = entpost::cli::run(full, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

#[test]
fn determinism_and_replay() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let mut problems = Vec::new();

    // Same flags and seed, byte-identical artifacts.
    let runs: [&[&str]; 4] = [
        &["--n", "64", "--bits", "10", "--seed", "7"],
        &["--n", "64", "--bits", "01", "--seed", "8", "--strategy-sonai", "withhold:5"],
        &["--n", "128", "--bits", "11", "--seed", "9", "--noise", "0.05", "--delta", "0.2"],
        &["--bob-msg", "1011", "--sonai-msg", "0110", "--seed", "10"],
    ];
    let mut replayed = 0;
    for (i, flags) in runs.iter().enumerate() {
        let mut files = Vec::new();
        for rep in 0..2 {
            let (t, ev) = (p(&format!("t{i}_{rep}.jsonl")), p(&format!("e{i}_{rep}.jsonl")));
            let mut args = vec!["run", "--out", &t, "--event-log", &ev];
            args.extend_from_slice(flags);
            cli(&args);
            files.push((std::fs::read(&t).unwrap(), std::fs::read(&ev).unwrap()));
        }
        if files[0] != files[1] {
            problems.push(format!("run {i} not byte-identical"));
        }
        // Replay through the command line.
        let t = p(&format!("t{i}_0.jsonl"));
        let cbp = p(&format!("t{i}_0.codebook.json"));
        let mut args = vec!["replay", "--transcript", &t, "--codebook", &cbp];
        let noise_flags = ["--noise", "0.05", "--delta", "0.2"];
        if i == 2 {
            args.extend_from_slice(&noise_flags);
        }
        let (code, text) = cli(&args);
        replayed += text.matches("matches recorded").count();
        if code != 0 {
            problems.push(format!("replay {i} exit {code}: {text}"));
        }
    }

    // Library replay over many sessions, honest and adversarial.
    let strategies = [
        [Strategy::Honest; 2],
        [Strategy::WithholdAfter(3), Strategy::Honest],
        [Strategy::Honest, Strategy::BatchDump],
        [Strategy::Honest, Strategy::LieWithProb(0.3)],
    ];
    for seed in 0..200u64 {
        let config = ProtocolConfig {
            n: 32,
            lambda: 8,
            seed,
            ..Default::default()
        };
        let out = run_session(&config, BitPair::TRIAL_ORDER[seed as usize % 4], strategies[seed as usize % 4])
            .expect("session runs");
        let text = out.transcript.to_jsonl();
        let parsed = Transcript::parse_jsonl(&text).expect("parses");
        let (t, lines) = &parsed[0];
        let r = t.replay(&out.codebook, &config, Some(lines)).expect("replays");
        if Some(&r.to_record()) != out.transcript.terminal() || r != out.session {
            problems.push(format!("library replay differs at seed {seed}"));
        }
        replayed += 1;
    }

    // One worker versus many.
    let config = ProtocolConfig {
        n: 48,
        lambda: 12,
        seed: 99,
        ..Default::default()
    };
    let mut exp = Experiment::honest(config, 500);
    exp.strategies = [Strategy::Honest, Strategy::LieWithProb(0.01)];
    exp.workers = Some(1);
    let one = run_trials(&exp).unwrap();
    let (_, one_report) = run_experiment(&exp).unwrap();
    exp.workers = Some(4);
    let many = run_trials(&exp).unwrap();
    let (_, many_report) = run_experiment(&exp).unwrap();
    let reports_equal = one == many
        && serde_json::to_string(&one_report).unwrap() == serde_json::to_string(&many_report).unwrap();
    if !reports_equal {
        problems.push("1-worker and 4-worker results differ".into());
    }

    let detail = format!(
        "{} CLI runs repeated byte-identically; {replayed} decode results replayed; 1 vs 4 workers {}",
        runs.len(),
        if reports_equal { "identical" } else { "DIFFER" }
    );
    let pass = report("determinism & replay", problems.is_empty(), start.elapsed(), Duration::from_secs(60), &detail);
    assert!(pass, "{detail}; {problems:?}");
}

#[test]
fn validator_catches_erratum() {
    let start = Instant::now();
    let doc = example_document_as_printed();
    let defects = validate_document(&doc);
    let letters = |set: &std::collections::BTreeSet<u32>| -> String {
        set.iter().map(|&l| (b'A' + l as u8 - 1) as char).collect()
    };
    let found = defects.iter().find_map(|d| match d {
        Defect::InvalidSequence { entry: 3, defects, .. } => {
            Some((letters(&defects.duplicates), letters(&defects.missing)))
        }
        _ => None,
    });
    let ok = found == Some(("CE".into(), "FG".into()))
        && Codebook::from_document(&doc).is_err()
        && CodebookEntry::canonical(BitPair::new(true, false), SequenceCode::from_letters("ECHBEACD")).is_err();
    let detail = match &found {
        Some((dup, miss)) => format!("fourth sequence rejected: duplicates {{{dup}}}, missing {{{miss}}}"),
        None => format!("fourth sequence not flagged; defects {defects:?}"),
    };
    let pass = report("validator catches erratum", ok, start.elapsed(), Duration::from_secs(1), &detail);
    assert!(pass, "{detail}");
}
