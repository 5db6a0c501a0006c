//! Case/control cohorts for one prediction target.
//!
//! [`build_cohort`] runs the extraction pipeline in a fixed order: event-kind
//! filter, hold-off cut before the first target diagnosis, minimum length,
//! truncation to the first `max_len` events, demographic control matching
//! and finally a seeded split in which each case travels with its matched
//! controls.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{filter_kinds, EventCode, EventKind, PatientRecord, Sex, Vocabulary};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub target_codes: Vec<EventCode>,
    pub allowed_kinds: Vec<EventKind>,
    pub min_len: usize,
    pub max_len: usize,
    pub controls_per_case: usize,
    pub holdoff_days: u32,
    pub split_ratios: [u32; 3],
    pub match_age_tolerance_years: i32,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            target_codes: vec![EventCode::diagnosis("T0")],
            allowed_kinds: EventKind::ALL.to_vec(),
            min_len: 50,
            max_len: 250,
            controls_per_case: 2,
            holdoff_days: 0,
            split_ratios: [7, 1, 2],
            match_age_tolerance_years: 5,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_codes.is_empty() {
            return Err(Error::config("target_codes must be non-empty"));
        }
        if self.allowed_kinds.is_empty() {
            return Err(Error::config("allowed_kinds must be non-empty"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(format!("need 1 <= min_len ({}) <= max_len ({})", self.min_len, self.max_len)));
        }
        if self.controls_per_case == 0 {
            return Err(Error::config("controls_per_case must be at least 1"));
        }
        if self.split_ratios.contains(&0) {
            return Err(Error::config("split ratios must be positive"));
        }
        if self.match_age_tolerance_years < 0 {
            return Err(Error::config("match_age_tolerance_years must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub patient_id: String,
    /// 1 for cases, 0 for controls.
    pub label: u8,
    pub indices: Vec<u32>,
    pub days: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortDataset {
    pub train: Vec<LabeledSequence>,
    pub val: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub cases: usize,
    pub controls: usize,
}

impl CohortDataset {
    pub fn split(&self, split: Split) -> &[LabeledSequence] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<LabeledSequence> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn counts(&self, split: Split) -> SplitCounts {
        let seqs = self.split(split);
        let cases = seqs.iter().filter(|s| s.label == 1).count();
        SplitCounts { cases, controls: seqs.len() - cases }
    }

    pub fn case_count(&self) -> usize {
        Split::ALL.iter().map(|&s| self.counts(s).cases).sum()
    }

    pub fn control_count(&self) -> usize {
        Split::ALL.iter().map(|&s| self.counts(s).controls).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &LabeledSequence)> {
        Split::ALL.into_iter().flat_map(move |s| self.split(s).iter().map(move |x| (s, x)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// JSON lines of `{patient_id, label, indices, days, split}`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for (split, s) in self.iter() {
            let line = CohortLine {
                patient_id: s.patient_id.clone(),
                label: s.label,
                indices: s.indices.clone(),
                days: s.days.clone(),
                split,
            };
            serde_json::to_writer(&mut *w, &line).map_err(|e| Error::format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut out = CohortDataset::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CohortLine =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            if l.label > 1 || l.indices.len() != l.days.len() {
                return Err(Error::Parse { line: i + 1, message: "bad label or ragged indices/days".into() });
            }
            out.split_mut(l.split).push(LabeledSequence {
                patient_id: l.patient_id,
                label: l.label,
                indices: l.indices,
                days: l.days,
            });
        }
        Ok(out)
    }

    pub fn summary(&self, spec: &CohortSpec) -> CohortSummary {
        CohortSummary {
            case_count: self.case_count(),
            control_count: self.control_count(),
            train: self.counts(Split::Train),
            val: self.counts(Split::Val),
            test: self.counts(Split::Test),
            spec: spec.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CohortLine {
    patient_id: String,
    label: u8,
    indices: Vec<u32>,
    days: Vec<u32>,
    split: Split,
}

/// Sidecar for a cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub case_count: usize,
    pub control_count: usize,
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    pub spec: CohortSpec,
}

/// What control matching looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub patient_id: String,
    pub sex: Sex,
    pub birth_year: i32,
    /// Event count after kind filtering, before truncation.
    pub length: usize,
}

/// Greedy choice of `controls_per_case` controls from `pool`.
///
/// Candidates must share the case's sex and be born within the age
/// tolerance; the closest record lengths win, ties by ascending patient id.
/// Too few candidates widen the tolerance in 5-year steps, and once it
/// spans the whole pool the sex constraint is dropped.
pub fn match_controls(case: &Candidate, pool: &[Candidate], spec: &CohortSpec) -> Result<Vec<String>> {
    Ok(match_positions(case, pool, spec)?.into_iter().map(|i| pool[i].patient_id.clone()).collect())
}

fn match_positions(case: &Candidate, pool: &[Candidate], spec: &CohortSpec) -> Result<Vec<usize>> {
    let need = spec.controls_per_case;
    let age_gap = |c: &Candidate| (c.birth_year - case.birth_year).abs();
    let widest = pool.iter().map(age_gap).max().unwrap_or(0);
    let pick = |mut eligible: Vec<usize>| {
        eligible.sort_by(|&a, &b| {
            let (ca, cb) = (&pool[a], &pool[b]);
            ca.length
                .abs_diff(case.length)
                .cmp(&cb.length.abs_diff(case.length))
                .then_with(|| ca.patient_id.cmp(&cb.patient_id))
        });
        eligible.truncate(need);
        eligible
    };

    let mut tolerance = spec.match_age_tolerance_years;
    loop {
        let eligible: Vec<usize> =
            (0..pool.len()).filter(|&i| pool[i].sex == case.sex && age_gap(&pool[i]) <= tolerance).collect();
        if eligible.len() >= need {
            return Ok(pick(eligible));
        }
        if tolerance >= widest {
            break;
        }
        tolerance += 5;
    }
    if pool.len() >= need {
        return Ok(pick((0..pool.len()).collect()));
    }
    Err(Error::data(format!(
        "case {} needs {need} controls but only {} eligible remain",
        case.patient_id,
        pool.len()
    )))
}

/// Seeded shuffle, then sizes `floor(n * r / sum(r))` for validation and
/// test with the remainder going to training.
pub fn split_dataset<T>(mut items: Vec<T>, ratios: [u32; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < 10 {
        return Err(Error::data(format!("cannot split {n} items into three parts; need at least 10")));
    }
    if ratios.contains(&0) {
        return Err(Error::config("split ratios must be positive"));
    }
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let part = |r: u32| (n as u64 * r as u64 / total) as usize;
    let (n_val, n_test) = (part(ratios[1]), part(ratios[2]));
    let n_train = n - n_val - n_test;
    SeededRng::new(seed).shuffle(&mut items);
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok((items, val, test))
}

/// Extracts the labeled, matched and split cohort.
pub fn build_cohort(records: &[PatientRecord], vocab: &Vocabulary, spec: &CohortSpec) -> Result<CohortDataset> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::data("no patient records"));
    }
    let targets: HashSet<u32> = spec.target_codes.iter().filter_map(|c| vocab.index_of(c)).collect();
    if targets.is_empty() {
        return Err(Error::data("no target code is present in the vocabulary"));
    }

    let mut cases: Vec<(Candidate, LabeledSequence)> = Vec::new();
    let mut pool: Vec<(Candidate, LabeledSequence)> = Vec::new();
    for record in records {
        // Targets are looked up on the full record, before kind filtering.
        let first_target = record.events.iter().find(|e| targets.contains(&e.code_index)).map(|e| e.day);
        let mut filtered = filter_kinds(record, vocab, &spec.allowed_kinds);
        if let Some(d0) = first_target {
            let cutoff = d0 as i64 - spec.holdoff_days as i64;
            filtered.events.retain(|e| (e.day as i64) < cutoff);
        }
        if filtered.events.len() < spec.min_len {
            continue;
        }
        let candidate = Candidate {
            patient_id: record.patient_id.clone(),
            sex: record.sex,
            birth_year: record.birth_year,
            length: filtered.events.len(),
        };
        filtered.events.truncate(spec.max_len);
        let seq = LabeledSequence {
            patient_id: record.patient_id.clone(),
            label: first_target.is_some() as u8,
            indices: filtered.events.iter().map(|e| e.code_index).collect(),
            days: filtered.events.iter().map(|e| e.day).collect(),
        };
        if first_target.is_some() {
            cases.push((candidate, seq));
        } else {
            pool.push((candidate, seq));
        }
    }
    if cases.is_empty() {
        return Err(Error::data("empty case group"));
    }
    cases.sort_by(|a, b| a.0.patient_id.cmp(&b.0.patient_id));

    let mut candidates: Vec<Candidate> = pool.iter().map(|(c, _)| c.clone()).collect();
    let mut sequences: Vec<Option<LabeledSequence>> = pool.into_iter().map(|(_, s)| Some(s)).collect();
    let mut slots: Vec<usize> = (0..candidates.len()).collect();
    let mut groups = Vec::with_capacity(cases.len());
    for (case, seq) in cases {
        let chosen = match_positions(&case, &candidates, spec)?;
        let mut group = vec![seq];
        group.extend(chosen.iter().map(|&i| sequences[slots[i]].take().expect("control used twice")));
        groups.push(group);
        let used: HashSet<usize> = chosen.into_iter().collect();
        let mut i = 0;
        candidates.retain(|_| {
            let keep = !used.contains(&i);
            i += 1;
            keep
        });
        let mut i = 0;
        slots.retain(|_| {
            let keep = !used.contains(&i);
            i += 1;
            keep
        });
    }

    let (train, val, test) = split_dataset(groups, spec.split_ratios, spec.seed)?;
    Ok(CohortDataset {
        train: train.into_iter().flatten().collect(),
        val: val.into_iter().flatten().collect(),
        test: test.into_iter().flatten().collect(),
    })
}

/// Drops surplus controls, uniformly at random, until there are exactly
/// `controls_per_case` controls per case.
pub fn rebalance_controls(dataset: &CohortDataset, spec: &CohortSpec, seed: u64) -> Result<CohortDataset> {
    let target = dataset.case_count() * spec.controls_per_case;
    let controls: Vec<(Split, usize)> = Split::ALL
        .into_iter()
        .flat_map(|s| dataset.split(s).iter().enumerate().filter(|(_, x)| x.label == 0).map(move |(i, _)| (s, i)))
        .collect();
    if controls.len() < target {
        return Err(Error::data(format!(
            "{} controls is below {} per case for {} cases",
            controls.len(),
            spec.controls_per_case,
            dataset.case_count()
        )));
    }
    let drop: HashSet<(Split, usize)> = SeededRng::new(seed)
        .sample_indices(controls.len(), controls.len() - target)
        .into_iter()
        .map(|k| controls[k])
        .collect();
    let mut out = CohortDataset::default();
    for s in Split::ALL {
        *out.split_mut(s) = dataset
            .split(s)
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(&(s, *i)))
            .map(|(_, x)| x.clone())
            .collect();
    }
    Ok(out)
}
