//! Seeded synthetic event corpora.
//!
//! Codes `C0000..` are split into `concept_count` equal blocks. A patient's
//! stream is a run of segments; each segment picks one concept and draws all
//! of its events uniformly from that concept's block, so codes of one
//! concept co-occur far more often than codes of different concepts.
//!
//! Cohort corpora add a target diagnosis at the end of every case. Two
//! class signals can be planted:
//!
//! * a temporal motif (code `first` followed by `second` within `max_gap`
//!   positions). Controls receive the same kind of stream, motif included,
//!   but with positions shuffled before days are assigned, so both classes
//!   share one event-count distribution and differ only in order.
//! * a presence signal: case segments pick a chosen concept with extra
//!   probability, so the classes differ in which codes occur, not in order.
//!
//! Code `i` is a medication when `i % 5 == 4` and a diagnosis otherwise.

use serde::{Deserialize, Serialize};

use crate::data::{EventCode, EventKind, RawEvent, RawPatient, Sex};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    /// Synthetic code index of the leading event.
    pub first: usize,
    /// Synthetic code index of the trailing event.
    pub second: usize,
    /// `second` follows `first` by at most this many positions.
    pub max_gap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresenceSignal {
    pub concept: usize,
    /// Probability that a case segment is forced onto `concept`.
    pub boost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub concept_count: usize,
    pub patients: usize,
    pub seq_len_range: (usize, usize),
    pub segment_len_range: (usize, usize),
    pub motif: Option<Motif>,
    pub presence: Option<PresenceSignal>,
    pub target_code: String,
    pub case_fraction: f64,
    pub day_step_range: (u32, u32),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 200,
            concept_count: 10,
            patients: 1000,
            seq_len_range: (60, 100),
            segment_len_range: (8, 20),
            motif: Some(Motif { first: 3, second: 27, max_gap: 3 }),
            presence: None,
            target_code: "T0".into(),
            case_fraction: 0.3,
            day_step_range: (0, 14),
            seed: 0,
        }
    }
}

pub fn synth_code(index: usize) -> EventCode {
    let kind = if index % 5 == 4 { EventKind::Medication } else { EventKind::Diagnosis };
    EventCode { code: format!("C{index:04}"), kind }
}

/// Inverse of [`synth_code`] on the code string.
pub fn synth_index(code: &str) -> Option<usize> {
    code.strip_prefix('C')?.parse().ok()
}

impl SynthConfig {
    pub fn target(&self) -> EventCode {
        EventCode::diagnosis(self.target_code.clone())
    }

    pub fn block_size(&self) -> usize {
        self.vocab_size / self.concept_count
    }

    pub fn concept_of(&self, index: usize) -> usize {
        index / self.block_size()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.concept_count == 0 {
            return err("vocab_size and concept_count must be positive".into());
        }
        if !self.vocab_size.is_multiple_of(self.concept_count) {
            return err(format!("concept_count {} does not divide vocab_size {}", self.concept_count, self.vocab_size));
        }
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return err(format!("bad seq_len_range ({lo}, {hi})"));
        }
        let (slo, shi) = self.segment_len_range;
        if slo == 0 || slo > shi {
            return err(format!("bad segment_len_range ({slo}, {shi})"));
        }
        if !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return err(format!("case_fraction {} outside (0, 1)", self.case_fraction));
        }
        if self.day_step_range.0 > self.day_step_range.1 {
            return err("bad day_step_range".into());
        }
        if let Some(m) = self.motif {
            if m.first >= self.vocab_size || m.second >= self.vocab_size {
                return err("motif code outside vocabulary".into());
            }
            if m.max_gap == 0 {
                return err("motif max_gap must be at least 1".into());
            }
            if hi < m.max_gap + 1 {
                return err(format!("seq_len_range max {hi} cannot hold a motif spanning {} events", m.max_gap + 1));
            }
        }
        if let Some(p) = self.presence {
            if p.concept >= self.concept_count || !(0.0..=1.0).contains(&p.boost) {
                return err("bad presence signal".into());
            }
        }
        if self.target_code.is_empty() {
            return err("target_code must be non-empty".into());
        }
        if synth_index(&self.target_code).is_some() {
            return err(format!("target_code {:?} collides with generated codes", self.target_code));
        }
        Ok(())
    }

    fn demographics(&self, rng: &mut SeededRng) -> (Sex, i32) {
        let sex = if rng.index(2) == 0 { Sex::F } else { Sex::M };
        let birth_year = 1930 + rng.index(66) as i32;
        (sex, birth_year)
    }

    fn concept_stream(&self, len: usize, boost: Option<PresenceSignal>, rng: &mut SeededRng) -> Vec<usize> {
        let block = self.block_size();
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let concept = match boost {
                Some(p) if rng.bernoulli(p.boost) => p.concept,
                _ => rng.index(self.concept_count),
            };
            let seg = rng
                .range_inclusive(self.segment_len_range.0, self.segment_len_range.1)
                .min(len - out.len());
            for _ in 0..seg {
                out.push(concept * block + rng.index(block));
            }
        }
        out
    }

    fn assign_days(&self, stream: &[usize], rng: &mut SeededRng) -> Vec<RawEvent> {
        let mut day = rng.index(365) as u32;
        let mut events = Vec::with_capacity(stream.len() + 1);
        for (i, &code) in stream.iter().enumerate() {
            if i > 0 {
                day += rng.range_inclusive(self.day_step_range.0 as usize, self.day_step_range.1 as usize) as u32;
            }
            events.push(RawEvent { code: synth_code(code), day });
        }
        events
    }
}

fn patient_id(i: usize) -> String {
    format!("P{i:06}")
}

/// Concept-local background corpus without any target diagnosis.
pub fn generate_corpus(config: &SynthConfig) -> Result<Vec<RawPatient>> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    Ok((0..config.patients)
        .map(|i| {
            let (sex, birth_year) = config.demographics(&mut rng);
            let len = rng.range_inclusive(config.seq_len_range.0, config.seq_len_range.1);
            let stream = config.concept_stream(len, None, &mut rng);
            RawPatient { patient_id: patient_id(i), sex, birth_year, events: config.assign_days(&stream, &mut rng) }
        })
        .collect())
}

/// Case/control corpus; see the module docs for how classes differ.
pub fn generate_cohort_corpus(config: &SynthConfig) -> Result<Vec<RawPatient>> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let n_cases = ((config.patients as f64) * config.case_fraction).round() as usize;
    let mut is_case: Vec<bool> = (0..config.patients).map(|i| i < n_cases).collect();
    rng.shuffle(&mut is_case);

    Ok(is_case
        .iter()
        .enumerate()
        .map(|(i, &case)| {
            let (sex, birth_year) = config.demographics(&mut rng);
            let len = rng.range_inclusive(config.seq_len_range.0, config.seq_len_range.1);
            let boost = if case { config.presence } else { None };
            let mut stream = config.concept_stream(len, boost, &mut rng);
            if let Some(m) = config.motif {
                let len = stream.len();
                if len >= 2 {
                    let gap = rng.range_inclusive(1, m.max_gap.min(len - 1));
                    let at = rng.index(len - gap);
                    stream[at] = m.first;
                    stream[at + gap] = m.second;
                }
                if !case {
                    rng.shuffle(&mut stream);
                }
            }
            let mut events = config.assign_days(&stream, &mut rng);
            if case {
                let last = events.last().map_or(0, |e| e.day);
                let day = last + 1 + rng.index(config.day_step_range.1 as usize + 1) as u32;
                events.push(RawEvent { code: config.target(), day });
            }
            RawPatient { patient_id: patient_id(i), sex, birth_year, events }
        })
        .collect())
}
