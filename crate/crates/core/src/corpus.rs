//! Record assembly and dataset bookkeeping.
//!
//! Raw exports come in four tables: free-text note sections, diagnosis
//! metadata carrying the decision flag, medication lines and virology
//! results. This module merges them into one labeled record per patient and
//! provides the two sampling operations every experiment depends on:
//! a stratified train/test split and balanced downsampling. Both are
//! deterministic under an explicit seed.
//!
//! Text fields are expected to be cleaned (see [`crate::textclean`]) before
//! they reach these functions. Cleaning strips newlines, so it has to happen
//! per section; the blank-line separators inserted between sections here
//! must survive.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::seeds;

/// Joins note sections of one patient, newest first.
pub const NOTE_SEPARATOR: &str = "\n\n";

pub const LABEL_EXCLUSION: u8 = 0;
pub const LABEL_INCLUSION: u8 = 1;

/// One free-text section as exported, date still unparsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNoteEntry {
    pub pseudonym: String,
    /// ISO calendar date (YYYY-MM-DD). Parsed in [`aggregate_notes`]; kept
    /// as text so a malformed export fails with the entry index instead of
    /// at deserialization, where the index is lost.
    pub authored: String,
    pub section_text: String,
}

/// One diagnosis metadata row. `decision_flag` is 0 for exclusion, 1 for
/// inclusion, 2 for patients not selected for research.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMetadataEntry {
    pub pseudonym: String,
    pub start_date: String,
    pub icd10_code: String,
    pub specialism: String,
    pub decision_flag: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationEntry {
    pub pseudonym: String,
    pub atc_code: String,
    pub code_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirologyEntry {
    pub pseudonym: String,
    pub hix_code: String,
    pub value_string: String,
}

/// The unit flowing through the pipeline: merged text plus binary label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub pseudonym: String,
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub seed: u64,
}

/// Outcome of [`build_records`], with counts for entries that could not be
/// merged. Both counts are diagnostics, not errors: partial exports are
/// normal when tables are extracted on different days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub records: Vec<PatientRecord>,
    /// metadata rows whose pseudonym has no note text
    pub metadata_without_notes: usize,
    /// note pseudonyms that never appear in the metadata
    pub notes_without_metadata: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("note entry {index}: date {date:?} is not an ISO calendar date")]
    BadDate { index: usize, date: String },
    #[error("metadata for {pseudonym}: decision flag {flag} outside 0..=2")]
    BadFlag { pseudonym: String, flag: u8 },
    #[error("class {label} has no records")]
    EmptyClass { label: u8 },
    #[error("split fraction {fraction} outside (0, 1)")]
    BadFraction { fraction: f64 },
}

/// ATC grammar check: one letter, two digits, then letters or digits.
/// Group prefixes (5 characters, e.g. H02AB) and full codes both pass.
pub fn is_valid_atc(code: &str) -> bool {
    let b = code.as_bytes();
    b.len() >= 3
        && b[0].is_ascii_alphabetic()
        && b[1].is_ascii_digit()
        && b[2].is_ascii_digit()
        && b[3..].iter().all(|c| c.is_ascii_alphanumeric())
}

pub fn parse_iso_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Concatenate each patient's sections newest first, joined by a blank
/// line. Sections sharing a date keep their input order (the export is
/// ordered within a day, the date column is not finer-grained).
pub fn aggregate_notes(
    entries: &[RawNoteEntry],
) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut per_patient: BTreeMap<&str, Vec<(NaiveDate, &str)>> = BTreeMap::new();
    for (index, e) in entries.iter().enumerate() {
        let date = parse_iso_date(&e.authored).ok_or_else(|| CorpusError::BadDate {
            index,
            date: e.authored.clone(),
        })?;
        per_patient
            .entry(e.pseudonym.as_str())
            .or_default()
            .push((date, e.section_text.as_str()));
    }

    let mut out = BTreeMap::new();
    for (pseudonym, mut sections) in per_patient {
        // stable sort: ties stay in input order
        sections.sort_by(|a, b| b.0.cmp(&a.0));
        let text = sections
            .iter()
            .map(|(_, t)| *t)
            .collect::<Vec<_>>()
            .join(NOTE_SEPARATOR);
        out.insert(pseudonym.to_string(), text);
    }
    Ok(out)
}

/// Render one patient's structured data as text. The two section labels and
/// line formats are fixed; changing them changes every model input, so treat
/// this template as part of the wire contract. Empty sections render the
/// placeholder word None to keep the block shape constant.
pub fn render_structured(meds: &[MedicationEntry], vir: &[VirologyEntry]) -> String {
    let mut out = String::new();
    if meds.is_empty() {
        out.push_str("Medicatie: None");
    } else {
        out.push_str("Medicatie:");
        for m in meds {
            out.push('\n');
            out.push_str(&m.code_text);
            out.push_str(" (ATC ");
            out.push_str(&m.atc_code);
            out.push(')');
        }
    }
    out.push('\n');
    if vir.is_empty() {
        out.push_str("Virologie: None");
    } else {
        out.push_str("Virologie:");
        for v in vir {
            out.push('\n');
            out.push_str(&v.hix_code);
            out.push_str(": ");
            out.push_str(&v.value_string);
        }
    }
    out
}

/// Merge the four tables into labeled records.
///
/// A patient yields a record only with both note text and at least one
/// metadata row. Any flag-2 row drops the patient entirely (not selected
/// for research); otherwise conflicting 0/1 flags resolve to 1, erring
/// toward inclusion the way the screening task prefers. The structured
/// block is always appended, as placeholders when empty.
pub fn build_records(
    notes: &[RawNoteEntry],
    metadata: &[RawMetadataEntry],
    meds: &[MedicationEntry],
    vir: &[VirologyEntry],
) -> Result<BuildReport, CorpusError> {
    let aggregated = aggregate_notes(notes)?;

    // pseudonym -> (has flag 2, max flag seen)
    let mut flags: BTreeMap<&str, (bool, u8)> = BTreeMap::new();
    for m in metadata {
        if m.decision_flag > 2 {
            return Err(CorpusError::BadFlag {
                pseudonym: m.pseudonym.clone(),
                flag: m.decision_flag,
            });
        }
        let e = flags.entry(m.pseudonym.as_str()).or_insert((false, 0));
        if m.decision_flag == 2 {
            e.0 = true;
        } else {
            e.1 = e.1.max(m.decision_flag);
        }
    }

    let mut meds_by: BTreeMap<&str, Vec<MedicationEntry>> = BTreeMap::new();
    for m in meds {
        meds_by.entry(m.pseudonym.as_str()).or_default().push(m.clone());
    }
    let mut vir_by: BTreeMap<&str, Vec<VirologyEntry>> = BTreeMap::new();
    for v in vir {
        vir_by.entry(v.pseudonym.as_str()).or_default().push(v.clone());
    }

    let mut records = Vec::new();
    let mut metadata_without_notes = 0usize;
    let mut notes_without_metadata = 0usize;

    for (pseudonym, (dropped, label)) in &flags {
        if !aggregated.contains_key(*pseudonym) {
            metadata_without_notes += 1;
            continue;
        }
        if *dropped {
            continue;
        }
        let empty_m: Vec<MedicationEntry> = Vec::new();
        let empty_v: Vec<VirologyEntry> = Vec::new();
        let pm = meds_by.get(*pseudonym).unwrap_or(&empty_m);
        let pv = vir_by.get(*pseudonym).unwrap_or(&empty_v);
        let mut text = aggregated[*pseudonym].clone();
        text.push_str(NOTE_SEPARATOR);
        text.push_str(&render_structured(pm, pv));
        records.push(PatientRecord {
            pseudonym: (*pseudonym).to_string(),
            text,
            label: *label,
        });
    }
    for pseudonym in aggregated.keys() {
        if !flags.contains_key(pseudonym.as_str()) {
            notes_without_metadata += 1;
        }
    }

    Ok(BuildReport {
        records,
        metadata_without_notes,
        notes_without_metadata,
    })
}

/// Round half away from zero, the rule behind the published class counts
/// (105.5 inclusion test cases round to 106).
pub fn round_half_away(x: f64) -> usize {
    // f64::round implements half-away-from-zero
    libm::round(x) as usize
}

/// Stratified split: per class, exactly `round_half_away(fraction * size)`
/// records are drawn into the test set, uniformly under the seed. Input
/// order is preserved within both halves, so output bytes depend only on
/// input order and seed.
pub fn stratified_split(
    records: &[PatientRecord],
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::BadFraction { fraction });
    }
    let mut in_test = alloc::vec![false; records.len()];
    for label in [LABEL_EXCLUSION, LABEL_INCLUSION] {
        let idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(CorpusError::EmptyClass { label });
        }
        let take = round_half_away(fraction * idx.len() as f64);
        let mut rng = seeds::rng(seed, "stratified-split", u64::from(label));
        let mut shuffled = idx;
        shuffle(&mut shuffled, &mut rng);
        for &i in shuffled.iter().take(take) {
            in_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if in_test[i] {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok(DatasetSplit { train, test, seed })
}

/// Undersample the majority class to the minority size. The minority class
/// is kept whole; survivors keep input order.
pub fn downsample_balanced(
    records: &[PatientRecord],
    seed: u64,
) -> Result<Vec<PatientRecord>, CorpusError> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        by_class[usize::from(r.label.min(1))].push(i);
    }
    for label in [LABEL_EXCLUSION, LABEL_INCLUSION] {
        if by_class[usize::from(label)].is_empty() {
            return Err(CorpusError::EmptyClass { label });
        }
    }
    let minority = by_class[0].len().min(by_class[1].len());
    let mut keep = alloc::vec![false; records.len()];
    for class in &by_class {
        if class.len() == minority {
            for &i in class {
                keep[i] = true;
            }
        } else {
            let mut shuffled = class.clone();
            let mut rng = seeds::rng(seed, "downsample", 0);
            shuffle(&mut shuffled, &mut rng);
            for &i in shuffled.iter().take(minority) {
                keep[i] = true;
            }
        }
    }
    Ok(records
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, r)| r.clone())
        .collect())
}

/// Fisher-Yates with our own index draws; avoids depending on shuffle
/// implementations whose draw order has changed between rand releases.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut impl rand::Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(p: &str, d: &str, t: &str) -> RawNoteEntry {
        RawNoteEntry {
            pseudonym: p.into(),
            authored: d.into(),
            section_text: t.into(),
        }
    }

    fn rec(p: &str, label: u8) -> PatientRecord {
        PatientRecord {
            pseudonym: p.into(),
            text: "x".into(),
            label,
        }
    }

    #[test]
    fn aggregates_newest_first() {
        let got = aggregate_notes(&[
            note("P1", "2021-01-01", "A"),
            note("P1", "2022-05-05", "B"),
        ])
        .unwrap();
        assert_eq!(got["P1"], "B\n\nA");
    }

    #[test]
    fn single_entry_is_identity() {
        let got = aggregate_notes(&[note("P1", "2021-01-01", "alleen")]).unwrap();
        assert_eq!(got["P1"], "alleen");
    }

    #[test]
    fn equal_dates_keep_input_order() {
        let got = aggregate_notes(&[
            note("P1", "2021-01-01", "X"),
            note("P1", "2021-01-01", "Y"),
        ])
        .unwrap();
        assert_eq!(got["P1"], "X\n\nY");
    }

    #[test]
    fn bad_date_reports_entry_index() {
        let err = aggregate_notes(&[
            note("P1", "2021-01-01", "ok"),
            note("P2", "01/02/2021", "nee"),
        ])
        .unwrap_err();
        assert_eq!(
            err,
            CorpusError::BadDate {
                index: 1,
                date: "01/02/2021".into()
            }
        );
    }

    #[test]
    fn aggregate_conserves_length() {
        let entries = [
            note("P1", "2020-01-01", "een"),
            note("P1", "2020-06-01", "twee"),
            note("P1", "2021-01-01", "drie"),
        ];
        let got = aggregate_notes(&entries).unwrap();
        let expect: usize =
            entries.iter().map(|e| e.section_text.len()).sum::<usize>()
                + NOTE_SEPARATOR.len() * (entries.len() - 1);
        assert_eq!(got["P1"].len(), expect);
    }

    #[test]
    fn structured_placeholders() {
        assert_eq!(render_structured(&[], &[]), "Medicatie: None\nVirologie: None");
    }

    #[test]
    fn structured_med_line() {
        let block = render_structured(
            &[MedicationEntry {
                pseudonym: "P1".into(),
                atc_code: "J01CA04".into(),
                code_text: "amoxicilline".into(),
            }],
            &[],
        );
        assert!(block.contains("amoxicilline (ATC J01CA04)"));
        assert!(block.contains("Virologie: None"));
    }

    #[test]
    fn structured_virology_line() {
        let block = render_structured(
            &[],
            &[VirologyEntry {
                pseudonym: "P1".into(),
                hix_code: "HBsAg".into(),
                value_string: "positive".into(),
            }],
        );
        assert!(block.contains("HBsAg: positive"));
        assert!(block.contains("Medicatie: None"));
    }

    fn meta(p: &str, flag: u8) -> RawMetadataEntry {
        RawMetadataEntry {
            pseudonym: p.into(),
            start_date: "2022-01-01".into(),
            icd10_code: "B20".into(),
            specialism: "INT".into(),
            decision_flag: flag,
        }
    }

    #[test]
    fn flag_two_patients_are_dropped() {
        let report = build_records(
            &[note("P1", "2022-01-01", "n1"), note("P2", "2022-01-01", "n2")],
            &[meta("P1", 2), meta("P2", 1)],
            &[],
            &[],
        )
        .unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].pseudonym, "P2");
        assert_eq!(report.records[0].label, 1);
    }

    #[test]
    fn text_ends_with_placeholder_block() {
        let report = build_records(
            &[note("P1", "2022-01-01", "tekst")],
            &[meta("P1", 1)],
            &[],
            &[],
        )
        .unwrap();
        assert!(report.records[0]
            .text
            .ends_with("tekst\n\nMedicatie: None\nVirologie: None"));
    }

    #[test]
    fn conflicting_flags_resolve_to_inclusion() {
        let report = build_records(
            &[note("P1", "2022-01-01", "n")],
            &[meta("P1", 0), meta("P1", 1)],
            &[],
            &[],
        )
        .unwrap();
        assert_eq!(report.records[0].label, 1);
    }

    #[test]
    fn any_flag_two_drops_even_with_other_flags() {
        let report = build_records(
            &[note("P1", "2022-01-01", "n")],
            &[meta("P1", 1), meta("P1", 2)],
            &[],
            &[],
        )
        .unwrap();
        assert!(report.records.is_empty());
    }

    #[test]
    fn merge_counts_partial_exports() {
        let report = build_records(
            &[note("P1", "2022-01-01", "n"), note("P9", "2022-01-01", "o")],
            &[meta("P1", 1), meta("P7", 0)],
            &[],
            &[],
        )
        .unwrap();
        assert_eq!(report.metadata_without_notes, 1);
        assert_eq!(report.notes_without_metadata, 1);
    }

    fn synthetic_class_mix(n_excl: usize, n_incl: usize) -> Vec<PatientRecord> {
        let mut v = Vec::new();
        for i in 0..n_excl {
            v.push(rec(&format!("E{i}"), LABEL_EXCLUSION));
        }
        for i in 0..n_incl {
            v.push(rec(&format!("I{i}"), LABEL_INCLUSION));
        }
        v
    }

    #[test]
    fn split_reproduces_published_counts() {
        let records = synthetic_class_mix(9571, 1055);
        let split = stratified_split(&records, 0.10, 42).unwrap();
        let count = |rs: &[PatientRecord], l: u8| rs.iter().filter(|r| r.label == l).count();
        assert_eq!(split.test.len(), 1063);
        assert_eq!(count(&split.test, LABEL_EXCLUSION), 957);
        assert_eq!(count(&split.test, LABEL_INCLUSION), 106);
        assert_eq!(split.train.len(), 9563);
        assert_eq!(count(&split.train, LABEL_EXCLUSION), 8614);
        assert_eq!(count(&split.train, LABEL_INCLUSION), 949);
    }

    #[test]
    fn split_is_deterministic_and_partitioning() {
        let records = synthetic_class_mix(40, 10);
        let a = stratified_split(&records, 0.10, 7).unwrap();
        let b = stratified_split(&records, 0.10, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&records, 0.10, 8).unwrap();
        assert_ne!(a.test, c.test);
        // union restores the input, disjoint by pseudonym
        let mut union: Vec<&str> = a
            .train
            .iter()
            .chain(a.test.iter())
            .map(|r| r.pseudonym.as_str())
            .collect();
        union.sort_unstable();
        let mut expect: Vec<&str> = records.iter().map(|r| r.pseudonym.as_str()).collect();
        expect.sort_unstable();
        assert_eq!(union, expect);
    }

    #[test]
    fn split_rounds_per_class() {
        let records = synthetic_class_mix(5, 5);
        let split = stratified_split(&records, 0.10, 1).unwrap();
        // 0.5 per class rounds away from zero to 1
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn split_rejects_missing_class() {
        let records = synthetic_class_mix(5, 0);
        assert_eq!(
            stratified_split(&records, 0.10, 1).unwrap_err(),
            CorpusError::EmptyClass { label: 1 }
        );
    }

    #[test]
    fn downsample_published_count() {
        let records = synthetic_class_mix(8614, 949);
        let out = downsample_balanced(&records, 9).unwrap();
        assert_eq!(out.len(), 1898);
        assert_eq!(out.iter().filter(|r| r.label == 0).count(), 949);
    }

    #[test]
    fn downsample_balanced_input_unchanged() {
        let records = synthetic_class_mix(5, 5);
        let out = downsample_balanced(&records, 3).unwrap();
        assert_eq!(out, records);
    }

    #[test]
    fn downsample_tiny() {
        let records = synthetic_class_mix(3, 1);
        let out = downsample_balanced(&records, 3).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn atc_grammar() {
        assert!(is_valid_atc("H02AB"));
        assert!(is_valid_atc("J01CA04"));
        assert!(!is_valid_atc("02HAB"));
        assert!(!is_valid_atc("H0"));
        assert!(!is_valid_atc("H02-AB"));
    }
}
