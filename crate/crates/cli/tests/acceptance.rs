//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ehrcnn::baselines::{run_baseline_suite, Classifier, SuiteConfig, SuiteRow};
use ehrcnn::cohort::{build_cohort, rebalance_controls, split_dataset, CohortDataset, CohortSpec, Split};
use ehrcnn::data::{build_vocabulary, EventCode, PatientRecord, Vocabulary};
use ehrcnn::embedding::{train_cbow, CbowConfig, EmbeddingMatrix};
use ehrcnn::metrics::{auprc, auroc, max_f1};
use ehrcnn::nn::{
    conv1d_forward, gradient_check, predict, train_cnn, AdaDelta, CnnModel, Conv1dBank, EmbeddingInputMode, ModelConfig,
    TrainConfig, PAD,
};
use ehrcnn::representations::AggregationMode;
use ehrcnn::rng::SeededRng;
use ehrcnn::synth::{generate_cohort_corpus, generate_corpus, synth_index, PresenceSignal, SynthConfig};
use ndarray::Array2;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn uniform_table(rows: usize, cols: usize, rng: &mut SeededRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform_range(-0.5, 0.5))
}

// 1. Analytic gradients against central differences.
fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for mode in EmbeddingInputMode::ALL {
        for _ in 0..40 {
            let d = rng.range_inclusive(1, 8);
            let k = rng.range_inclusive(1, 4);
            let mut filters: Vec<usize> = [2, 3, 5].into_iter().filter(|_| rng.bernoulli(0.5)).collect();
            if filters.is_empty() {
                filters.push([2, 3, 5][rng.index(3)]);
            }
            let t = rng.range_inclusive(6, 20);
            let v = 12;
            let table = uniform_table(v, d, &mut rng);
            let config = ModelConfig {
                input_mode: mode,
                dim: d,
                filter_sizes: filters,
                filter_count: k,
                seed: rng.next_u64(),
                ..Default::default()
            };
            let model = CnnModel::new(&config, v, Some(&table)).map_err(|e| e.to_string())?;
            let tokens: Vec<u32> = (0..t).map(|_| rng.index(v) as u32).collect();
            let label = rng.bernoulli(0.5) as u8;
            let report = gradient_check(&model, &tokens, label, 1e-5, rng.next_u64()).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
            cases += 1;
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} over {cases} models"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!("{cases} models, max relative error {worst:.2e}, {:.1?}", start.elapsed()))
}

// 2. Output length of a valid convolution, plus a direct per-entry check.
fn geometry() -> Outcome {
    let mut rng = SeededRng::new(202);
    for case in 0..500 {
        let f = rng.range_inclusive(1, 12);
        let t = rng.range_inclusive(f, f + 150);
        let (d, k) = (rng.range_inclusive(1, 5), rng.range_inclusive(1, 4));
        let bank = Conv1dBank::glorot(f, k, d, &mut rng);
        let x: Vec<f64> = (0..t * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let y = conv1d_forward(&x, t, &bank).map_err(|e| e.to_string())?;
        ensure(y.len() == (t - f + 1) * k, || format!("case {case}: T={t} F={f} gave {} rows", y.len() / k))?;
        let p = rng.index(t - f + 1);
        let j = rng.index(k);
        let direct: f64 = bank.bias[j]
            + (0..f * d).map(|i| bank.weights[j * f * d + i] * x[p * d + i]).sum::<f64>();
        ensure((y[p * k + j] - direct).abs() < 1e-12, || format!("case {case}: entry ({p},{j}) differs"))?;
        if f > 1 {
            let short = conv1d_forward(&x[..(f - 1) * d], f - 1, &bank);
            ensure(short.is_err(), || format!("case {case}: T < F accepted"))?;
        }
    }
    Ok("500 (T, F) pairs, length T-F+1".into())
}

// 3. Trailing pads never change the output.
fn padding() -> Outcome {
    let mut rng = SeededRng::new(303);
    let v = 30;
    let models: Vec<CnnModel> = EmbeddingInputMode::ALL
        .iter()
        .map(|&mode| {
            let table = uniform_table(v, 6, &mut rng);
            let config = ModelConfig { input_mode: mode, dim: 6, filter_count: 5, seed: rng.next_u64(), ..Default::default() };
            CnnModel::new(&config, v, Some(&table)).expect("valid model")
        })
        .collect();
    for case in 0..100 {
        let len = rng.range_inclusive(1, 60);
        let seq: Vec<u32> = (0..len).map(|_| rng.index(v) as u32).collect();
        let mut padded = seq.clone();
        padded.extend(std::iter::repeat_n(PAD, rng.range_inclusive(1, 32)));
        for m in &models {
            let a = m.forward(&seq).map_err(|e| e.to_string())?;
            let b = m.forward(&padded).map_err(|e| e.to_string())?;
            ensure(a.map(f64::to_bits) == b.map(f64::to_bits), || {
                format!("case {case} ({}): {a:?} vs {b:?}", m.input_mode.name())
            })?;
        }
    }
    Ok("100 sequences x 5 modes bit-identical".into())
}

fn oracle_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| y[i] == 1) {
        for j in (0..s.len()).filter(|&j| y[j] == 0) {
            pairs += 1.0;
            num += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

/// Precision and recall at every distinct threshold, highest first.
fn threshold_sweep(s: &[f64], y: &[u8]) -> Vec<(f64, f64, usize)> {
    let mut thresholds = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = y.iter().filter(|&&l| l == 1).count();
    thresholds
        .into_iter()
        .map(|t| {
            let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count();
            let predicted = (0..s.len()).filter(|&i| s[i] >= t).count();
            (tp as f64 / predicted as f64, tp as f64 / positives as f64, tp)
        })
        .collect()
}

fn oracle_auprc(s: &[f64], y: &[u8]) -> f64 {
    let mut prev = 0.0;
    threshold_sweep(s, y)
        .into_iter()
        .map(|(p, r, _)| {
            let a = (r - prev) * p;
            prev = r;
            a
        })
        .sum()
}

fn oracle_max_f1(s: &[f64], y: &[u8]) -> f64 {
    threshold_sweep(s, y)
        .into_iter()
        .map(|(p, r, tp)| if tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .fold(0.0, f64::max)
}

// 4. Metrics against brute-force definitions.
fn metric_oracles() -> Outcome {
    let fixed_auroc = auroc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).map_err(|e| e.to_string())?;
    ensure(fixed_auroc == 0.75, || format!("fixed AUROC {fixed_auroc}"))?;
    let fixed_f1 = max_f1(&[0.9, 0.8, 0.2], &[1, 0, 1]).map_err(|e| e.to_string())?;
    ensure(fixed_f1 == 0.8, || format!("fixed max F1 {fixed_f1}"))?;

    let mut rng = SeededRng::new(404);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.range_inclusive(2, 80);
        // Coarse scores on half the instances so ties are common.
        let coarse = rng.bernoulli(0.5);
        let s: Vec<f64> =
            (0..n).map(|_| if coarse { rng.index(6) as f64 / 5.0 } else { rng.uniform() }).collect();
        let mut y: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.4) as u8).collect();
        y[0] = 1;
        y[1] = 0;
        let err = |a: ehrcnn::Result<f64>, b: f64| a.map(|a| (a - b).abs()).unwrap_or(f64::INFINITY);
        let e = err(auroc(&s, &y), oracle_auroc(&s, &y))
            .max(err(auprc(&s, &y), oracle_auprc(&s, &y)))
            .max(err(max_f1(&s, &y), oracle_max_f1(&s, &y)));
        ensure(e <= 1e-12, || format!("instance {case}: error {e:.3e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("1000 instances, max error {worst:.1e}; fixed cases exact"))
}

// 5. AdaDelta against a transcription of the update rule.
fn adadelta() -> Outcome {
    let opt = AdaDelta::default();
    let (mut x, mut eg, mut ed) = ([0.0], [0.0], [0.0]);
    opt.step(&mut x, &[1.0], &mut eg, &mut ed).map_err(|e| e.to_string())?;
    ensure((x[0] + 4.4721e-3).abs() < 5e-8, || format!("first step {:e}", x[0]))?;

    // f(x) = 1.5 (x - 2)^2
    let grad = |x: f64| 3.0 * (x - 2.0);
    let (rho, eps) = (0.95f64, 1e-6f64);
    let (mut ox, mut oeg, mut oed) = (-1.0f64, 0.0f64, 0.0f64);
    let (mut x, mut eg, mut ed) = ([-1.0], [0.0], [0.0]);
    let mut worst: f64 = 0.0;
    for step in 0..100 {
        let g = grad(ox);
        oeg = rho * oeg + (1.0 - rho) * g * g;
        let dx = -((oed + eps).sqrt() / (oeg + eps).sqrt()) * g;
        oed = rho * oed + (1.0 - rho) * dx * dx;
        ox += dx;
        let g = [grad(x[0])];
        opt.step(&mut x, &g, &mut eg, &mut ed).map_err(|e| e.to_string())?;
        let e = (x[0] - ox).abs().max((eg[0] - oeg).abs()).max((ed[0] - oed).abs());
        ensure(e < 1e-10, || format!("step {step}: deviation {e:e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("first step {:.4e}; 100 steps, max deviation {worst:.1e}", -(1e-6f64 / (0.05 + 1e-6)).sqrt()))
}

fn corpus_vocab(config: &SynthConfig, cohort: bool) -> (Vocabulary, Vec<PatientRecord>) {
    let raw = if cohort { generate_cohort_corpus(config) } else { generate_corpus(config) }.expect("valid synth config");
    build_vocabulary(&raw, 1).expect("non-empty vocabulary")
}

fn cbow(vocab: &Vocabulary, records: &[PatientRecord], dim: usize, seed: u64) -> EmbeddingMatrix {
    let seqs: Vec<Vec<u32>> = records.iter().map(|r| r.indices()).collect();
    let config = CbowConfig { dim, window: 20, min_count: 1, epochs: 5, seed, ..Default::default() };
    train_cbow(&seqs, vocab, &config).expect("cbow trains")
}

// 6. Codes from the same concept end up closer than codes from different ones.
fn concept_recovery() -> Outcome {
    let start = Instant::now();
    let config = SynthConfig { vocab_size: 200, concept_count: 10, patients: 2000, motif: None, seed: 42, ..Default::default() };
    let (vocab, records) = corpus_vocab(&config, false);
    let emb = cbow(&vocab, &records, 200, 1);
    let concept: Vec<usize> =
        vocab.codes().iter().map(|c| config.concept_of(synth_index(&c.code).expect("synthetic code"))).collect();
    let (mut within_sum, mut within_n, mut cross_sum, mut cross_n) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..vocab.len() {
        for b in a + 1..vocab.len() {
            let c = emb.cosine(a, b);
            if concept[a] == concept[b] {
                within_sum += c;
                within_n += 1;
            } else {
                cross_sum += c;
                cross_n += 1;
            }
        }
    }
    let (w, x) = (within_sum / within_n as f64, cross_sum / cross_n as f64);
    ensure(w - x >= 0.2, || format!("within {w:.3} - cross {x:.3} = {:.3}", w - x))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!("within {w:.3}, cross {x:.3}, gap {:.3}, {:.1?}", w - x, start.elapsed()))
}

fn split_groups(ds: &CohortDataset, ratios: [u32; 3]) -> Result<(), String> {
    let groups = ds.case_count();
    let total: usize = ratios.iter().map(|&r| r as usize).sum();
    let expect_val = groups * ratios[1] as usize / total;
    let expect_test = groups * ratios[2] as usize / total;
    let got = [ds.counts(Split::Train).cases, ds.counts(Split::Val).cases, ds.counts(Split::Test).cases];
    ensure(got == [groups - expect_val - expect_test, expect_val, expect_test], || {
        format!("{groups} groups split as {got:?}")
    })
}

fn test_auroc(model: &CnnModel, ds: &CohortDataset) -> ehrcnn::Result<f64> {
    let seqs: Vec<&[u32]> = ds.test.iter().map(|s| s.indices.as_slice()).collect();
    let labels: Vec<u8> = ds.test.iter().map(|s| s.label).collect();
    auroc(&predict(model, &seqs)?, &labels)
}

fn describe(rows: &[SuiteRow]) -> String {
    rows.iter().map(|r| format!("{}+{} {:.3}", r.classifier, r.representation, r.auroc)).collect::<Vec<_>>().join(", ")
}

// 7. Only the order-aware model sees an order-defined signal.
fn temporal_order() -> Outcome {
    let start = Instant::now();
    let config = SynthConfig { patients: 6000, seed: 7, ..Default::default() };
    let (vocab, records) = corpus_vocab(&config, true);
    let emb = cbow(&vocab, &records, 16, 1);
    let spec = CohortSpec { seed: 3, ..Default::default() };
    let ds = build_cohort(&records, &vocab, &spec).map_err(|e| e.to_string())?;
    ensure(ds.case_count() >= 1500, || format!("{} cases", ds.case_count()))?;
    ensure(ds.control_count() == 2 * ds.case_count(), || format!("{} controls", ds.control_count()))?;
    split_groups(&ds, spec.split_ratios)?;

    let suite = SuiteConfig { rand_seed: 5, ..Default::default() };
    let rows = run_baseline_suite(&ds, vocab.len(), Some(&emb.input), &suite).map_err(|e| e.to_string())?;
    let best = rows.iter().map(|r| r.auroc).fold(0.0, f64::max);
    ensure(best <= 0.60, || format!("baseline above 0.60: {}", describe(&rows)))?;

    let model_config = ModelConfig { input_mode: EmbeddingInputMode::W2vFinetune, seed: 4, ..Default::default() };
    let train_config = TrainConfig { max_epochs: 10, patience: 5, seed: 6, ..Default::default() };
    let (model, _) = train_cnn(&ds, &model_config, vocab.len(), Some(&emb.input), &train_config).map_err(|e| e.to_string())?;
    let cnn = test_auroc(&model, &ds).map_err(|e| e.to_string())?;
    ensure(cnn >= 0.85, || format!("CNN test AUROC {cnn:.3}"))?;
    within(Duration::from_secs(600), start)?;
    Ok(format!(
        "{} cases; CNN {cnn:.3}; best of {} baselines {best:.3}; {:.1?}",
        ds.case_count(),
        rows.len(),
        start.elapsed()
    ))
}

// 8. Learned embeddings keep the presence signal that random ones lose.
fn embedding_vs_raw() -> Outcome {
    let config = SynthConfig {
        vocab_size: 1000,
        concept_count: 20,
        patients: 6000,
        motif: None,
        presence: Some(PresenceSignal { concept: 2, boost: 0.3 }),
        case_fraction: 0.1,
        seed: 1,
        ..Default::default()
    };
    let (vocab, records) = corpus_vocab(&config, true);
    let emb = cbow(&vocab, &records, 16, 1);
    let ds = build_cohort(&records, &vocab, &CohortSpec { seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let suite = SuiteConfig {
        classifiers: vec![Classifier::Lr],
        representations: vec![AggregationMode::BofW, AggregationMode::W2vAll, AggregationMode::RandSum],
        rand_seed: 5,
        ..Default::default()
    };
    let rows = run_baseline_suite(&ds, vocab.len(), Some(&emb.input), &suite).map_err(|e| e.to_string())?;
    let (bofw, all, rand) = (rows[0].auroc, rows[1].auroc, rows[2].auroc);
    ensure(all >= bofw - 0.01, || format!("W2v-All {all:.3} vs BofW {bofw:.3}"))?;
    ensure(all - rand >= 0.05, || format!("W2v-All {all:.3} vs Rand-Sum {rand:.3}"))?;
    Ok(format!("LR: BofW {bofw:.3}, W2v-All {all:.3}, Rand-Sum {rand:.3}"))
}

// 9. Cohort extraction protocol.
fn cohort_protocol() -> Outcome {
    let mut rng = SeededRng::new(909);
    for _ in 0..200 {
        let n = rng.range_inclusive(10, 2000);
        let (train, val, test) = split_dataset((0..n).collect::<Vec<_>>(), [7, 1, 2], rng.next_u64()).map_err(|e| e.to_string())?;
        let expect = [n - n / 10 - n * 2 / 10, n / 10, n * 2 / 10];
        ensure([train.len(), val.len(), test.len()] == expect, || format!("n = {n}"))?;
        let mut all: Vec<usize> = train.into_iter().chain(val).chain(test).collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || format!("n = {n}: split is not a partition"))?;
    }

    let mut attrition = Vec::new();
    for seed in 0..3 {
        let config = SynthConfig {
            patients: 1500,
            seq_len_range: (30, 320),
            day_step_range: (0, 6),
            case_fraction: 0.15,
            seed: 900 + seed,
            ..Default::default()
        };
        let (vocab, records) = corpus_vocab(&config, true);
        let target = vocab.index_of(&EventCode::diagnosis("T0")).ok_or("target missing from vocabulary")?;
        let first_target: HashMap<&str, u32> = records
            .iter()
            .filter_map(|r| r.events.iter().find(|e| e.code_index == target).map(|e| (r.patient_id.as_str(), e.day)))
            .collect();
        let mut cases = Vec::new();
        for holdoff in [0, 90, 180] {
            let spec = CohortSpec { holdoff_days: holdoff, seed: 3 + seed, ..Default::default() };
            let ds = build_cohort(&records, &vocab, &spec).map_err(|e| e.to_string())?;
            let mut seen = HashSet::new();
            for (split, s) in ds.iter() {
                ensure(seen.insert(s.patient_id.clone()), || format!("{} appears twice ({split:?})", s.patient_id))?;
                ensure((50..=250).contains(&s.indices.len()), || format!("{} has length {}", s.patient_id, s.indices.len()))?;
                ensure(!s.indices.contains(&target), || format!("{} input holds the target code", s.patient_id))?;
                match (s.label, first_target.get(s.patient_id.as_str())) {
                    (1, Some(&d0)) => ensure(s.days.iter().all(|&d| (d as i64) < d0 as i64 - holdoff as i64), || {
                        format!("{} has events inside the hold-off window", s.patient_id)
                    })?,
                    (0, None) => {}
                    (l, t) => return Err(format!("{} labelled {l} but first target {t:?}", s.patient_id)),
                }
            }
            for split in Split::ALL {
                let c = ds.counts(split);
                ensure(c.controls == 2 * c.cases, || format!("{split:?}: {c:?}"))?;
            }
            split_groups(&ds, spec.split_ratios)?;
            cases.push(ds.case_count());
        }
        ensure(cases.windows(2).all(|w| w[0] >= w[1]), || format!("case counts {cases:?} not monotone"))?;
        attrition.push(cases);

        let wide = CohortSpec { controls_per_case: 3, seed: 5, ..Default::default() };
        let ds = build_cohort(&records, &vocab, &wide).map_err(|e| e.to_string())?;
        let balanced = rebalance_controls(&ds, &CohortSpec::default(), 6).map_err(|e| e.to_string())?;
        ensure(balanced.control_count() == 2 * balanced.case_count(), || {
            format!("{} controls for {} cases after rebalancing", balanced.control_count(), balanced.case_count())
        })?;
        ensure(balanced.case_count() == ds.case_count(), || "rebalancing dropped cases".into())?;
    }
    Ok(format!("200 splits exact; case counts at hold-off 0/90/180: {attrition:?}"))
}

fn run_pipeline(bin: &Path, config: &Path, out: &Path) -> Result<(), String> {
    let steps: [&[&str]; 5] = [&["synth"], &["embed"], &["cohort"], &["train"], &["evaluate", "--suite"]];
    for step in steps {
        let o = Command::new(bin)
            .arg("--config")
            .arg(config)
            .args(["--seed", "77", "--out"])
            .arg(out)
            .args(step)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || format!("{step:?}: {}", String::from_utf8_lossy(&o.stderr)))?;
    }
    Ok(())
}

// 10. The whole pipeline twice gives the same bytes.
fn determinism() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_ehrcnn"));
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.json");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(bin, &config, &a)?;
    run_pipeline(bin, &config, &b)?;
    let files = ["report.json", "report.csv", "model.bin", "embeddings.txt", "cohort.jsonl"];
    for f in files {
        let (x, y) = (fs::read(a.join(f)).map_err(|e| e.to_string())?, fs::read(b.join(f)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical", files.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradients),
        ("convolution geometry", geometry),
        ("padding invariance", padding),
        ("metric oracles", metric_oracles),
        ("AdaDelta fidelity", adadelta),
        ("embedding concept recovery", concept_recovery),
        ("temporal-order separation", temporal_order),
        ("embedding vs raw input", embedding_vs_raw),
        ("cohort protocol", cohort_protocol),
        ("pipeline determinism", determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {n:2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:2} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
