//! Patients, events and vocabularies.
//!
//! Raw files carry event codes as strings. [`Vocabulary::build`] turns the
//! codes that occur often enough into a dense index space, and
//! [`Vocabulary::index_patients`] rewrites raw patients into
//! [`PatientRecord`]s whose events are ordered by `(day, code_index)`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Diagnosis,
    Medication,
}

impl EventKind {
    pub const ALL: [EventKind; 2] = [EventKind::Diagnosis, EventKind::Medication];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Diagnosis => "diagnosis",
            EventKind::Medication => "medication",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnosis" => Ok(EventKind::Diagnosis),
            "medication" => Ok(EventKind::Medication),
            other => Err(Error::format(format!("unknown event kind {other:?}"))),
        }
    }
}

/// An event type. Identical code strings of different kinds are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventCode {
    pub code: String,
    pub kind: EventKind,
}

impl EventCode {
    pub fn new(code: impl Into<String>, kind: EventKind) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::format("event code must be non-empty"));
        }
        Ok(EventCode { code, kind })
    }

    pub fn diagnosis(code: impl Into<String>) -> Self {
        EventCode { code: code.into(), kind: EventKind::Diagnosis }
    }

    pub fn medication(code: impl Into<String>) -> Self {
        EventCode { code: code.into(), kind: EventKind::Medication }
    }
}

impl fmt::Display for EventCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.code, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub code: EventCode,
    pub day: u32,
}

/// A patient as read from disk, before vocabulary assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPatient {
    pub patient_id: String,
    pub sex: Sex,
    pub birth_year: i32,
    /// Ordered by day; same-day events keep file order.
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MedicalEvent {
    pub code_index: u32,
    pub day: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub birth_year: i32,
    /// Sorted ascending by `(day, code_index)`.
    pub events: Vec<MedicalEvent>,
}

impl PatientRecord {
    pub fn indices(&self) -> Vec<u32> {
        self.events.iter().map(|e| e.code_index).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct PatientLine {
    patient_id: String,
    sex: Sex,
    birth_year: i32,
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    patient_id: String,
    code: String,
    kind: EventKind,
    day: u32,
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: &str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })
}

/// Reads the patients and events JSON-lines files.
pub fn load_patients(patients_path: &Path, events_path: &Path) -> Result<Vec<RawPatient>> {
    let patients = BufReader::new(File::open(patients_path)?);
    let events = BufReader::new(File::open(events_path)?);
    read_patients(patients, events)
}

pub fn read_patients(patients: impl BufRead, events: impl BufRead) -> Result<Vec<RawPatient>> {
    let mut out = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, line) in patients.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientLine = parse_line(&line, i + 1)?;
        if by_id.insert(p.patient_id.clone(), out.len()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate patient_id {:?}", p.patient_id),
            });
        }
        out.push(RawPatient { patient_id: p.patient_id, sex: p.sex, birth_year: p.birth_year, events: Vec::new() });
    }
    for (i, line) in events.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: EventLine = parse_line(&line, i + 1)?;
        let code = EventCode::new(e.code, e.kind)
            .map_err(|err| Error::Parse { line: i + 1, message: err.to_string() })?;
        let slot = *by_id.get(&e.patient_id).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("event for unknown patient_id {:?}", e.patient_id),
        })?;
        out[slot].events.push(RawEvent { code, day: e.day });
    }
    for p in &mut out {
        p.events.sort_by_key(|e| e.day);
    }
    Ok(out)
}

pub fn write_patients(path: &Path, patients: &[RawPatient]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_patients_to(&mut w, patients)?;
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, patients: &[RawPatient]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events_to(&mut w, patients)?;
    w.flush()?;
    Ok(())
}

pub fn write_patients_to(w: &mut impl Write, patients: &[RawPatient]) -> Result<()> {
    for p in patients {
        let line = PatientLine { patient_id: p.patient_id.clone(), sex: p.sex, birth_year: p.birth_year };
        serde_json::to_writer(&mut *w, &line).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_events_to(w: &mut impl Write, patients: &[RawPatient]) -> Result<()> {
    for p in patients {
        for e in &p.events {
            let line = EventLine {
                patient_id: p.patient_id.clone(),
                code: e.code.code.clone(),
                kind: e.code.kind,
                day: e.day,
            };
            serde_json::to_writer(&mut *w, &line).map_err(|e| Error::format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Dense index space over the retained event codes.
///
/// Index order is descending count, ties broken by `(code, kind)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    codes: Vec<EventCode>,
    counts: Vec<u64>,
    lookup: HashMap<EventCode, u32>,
    min_count: u64,
}

impl Vocabulary {
    /// Keeps every code occurring at least `min_count` times across all patients.
    pub fn build(patients: &[RawPatient], min_count: u64) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        let mut counts: HashMap<&EventCode, u64> = HashMap::new();
        for p in patients {
            for e in &p.events {
                *counts.entry(&e.code).or_default() += 1;
            }
        }
        let entries = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(code, c)| (code.clone(), c))
            .collect();
        Self::from_counts(entries, min_count)
    }

    /// Builds a vocabulary from `(code, count)` pairs, ordering them canonically.
    pub fn from_counts(mut entries: Vec<(EventCode, u64)>, min_count: u64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_ordered(entries, min_count)
    }

    fn from_ordered(entries: Vec<(EventCode, u64)>, min_count: u64) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        let mut codes = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (code, count)) in entries.into_iter().enumerate() {
            if lookup.insert(code.clone(), i as u32).is_some() {
                return Err(Error::format(format!("duplicate vocabulary entry {code}")));
            }
            codes.push(code);
            counts.push(count);
        }
        Ok(Vocabulary { codes, counts, lookup, min_count })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn index_of(&self, code: &EventCode) -> Option<u32> {
        self.lookup.get(code).copied()
    }

    pub fn code(&self, index: u32) -> &EventCode {
        &self.codes[index as usize]
    }

    pub fn codes(&self) -> &[EventCode] {
        &self.codes
    }

    pub fn count(&self, index: u32) -> u64 {
        self.counts[index as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn kind(&self, index: u32) -> EventKind {
        self.codes[index as usize].kind
    }

    /// Resolves raw codes to indices, dropping codes outside the vocabulary,
    /// and orders each patient's events by `(day, code_index)`.
    pub fn index_patients(&self, patients: &[RawPatient]) -> Vec<PatientRecord> {
        patients
            .iter()
            .map(|p| {
                let mut events: Vec<MedicalEvent> = p
                    .events
                    .iter()
                    .filter_map(|e| self.index_of(&e.code).map(|code_index| MedicalEvent { code_index, day: e.day }))
                    .collect();
                events.sort_unstable_by_key(|e| (e.day, e.code_index));
                PatientRecord { patient_id: p.patient_id.clone(), sex: p.sex, birth_year: p.birth_year, events }
            })
            .collect()
    }

    /// Inverse of [`index_patients`](Self::index_patients).
    pub fn unindex_patients(&self, records: &[PatientRecord]) -> Vec<RawPatient> {
        records
            .iter()
            .map(|r| RawPatient {
                patient_id: r.patient_id.clone(),
                sex: r.sex,
                birth_year: r.birth_year,
                events: r.events.iter().map(|e| RawEvent { code: self.code(e.code_index).clone(), day: e.day }).collect(),
            })
            .collect()
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

    /// Text format: `V min_count`, then `index code kind count` per index.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.min_count)?;
        for (i, (code, count)) in self.codes.iter().zip(&self.counts).enumerate() {
            if code.code.contains(char::is_whitespace) {
                return Err(Error::format(format!("code {:?} contains whitespace", code.code)));
            }
            writeln!(w, "{i} {} {} {count}", code.code, code.kind)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty vocabulary file"))??;
        let mut parts = header.split_whitespace();
        let (Some(v), Some(min_count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format("vocabulary header must be `V min_count`"));
        };
        let v: usize = v.parse().map_err(|_| Error::format("bad vocabulary size"))?;
        let min_count: u64 = min_count.parse().map_err(|_| Error::format("bad min_count"))?;
        let mut entries = Vec::with_capacity(v);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse { line: i + 2, message: "expected `index code kind count`".into() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad());
            }
            let index: usize = fields[0].parse().map_err(|_| bad())?;
            if index != entries.len() {
                return Err(Error::Parse { line: i + 2, message: format!("expected index {}", entries.len()) });
            }
            let kind: EventKind = fields[2].parse().map_err(|_| bad())?;
            let count: u64 = fields[3].parse().map_err(|_| bad())?;
            entries.push((EventCode::new(fields[1], kind)?, count));
        }
        if entries.len() != v {
            return Err(Error::format(format!("header declares {v} codes but file has {}", entries.len())));
        }
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        Self::from_ordered(entries, min_count)
    }
}

/// Builds the vocabulary and indexes every patient against it.
pub fn build_vocabulary(patients: &[RawPatient], min_count: u64) -> Result<(Vocabulary, Vec<PatientRecord>)> {
    let vocab = Vocabulary::build(patients, min_count)?;
    let records = vocab.index_patients(patients);
    Ok((vocab, records))
}

/// Drops events whose kind is not in `allowed`, preserving order.
pub fn filter_kinds(record: &PatientRecord, vocab: &Vocabulary, allowed: &[EventKind]) -> PatientRecord {
    let allowed: HashSet<EventKind> = allowed.iter().copied().collect();
    PatientRecord {
        events: record.events.iter().copied().filter(|e| allowed.contains(&vocab.kind(e.code_index))).collect(),
        ..record.clone()
    }
}
