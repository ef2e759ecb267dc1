//! Synthetic corpus generation.
//!
//! Notes are pseudo-Dutch filler with machine-readable fact tags woven in:
//! `[[IC:31 excl=0 d=2022-03-01]]`, `[[MED:H02AB01 d=2022-01-15]]`,
//! `[[VIR:anti-hbc res=pos d=2022-02-01]]`, `[[DIS:rheumatoid-arthritis]]`,
//! `[[HIVTEST:neg d=2021-06-01]]`. The label is whatever the rule engine says
//! about the parsed facts, so the corpus carries its own ground truth and
//! [`parse_tags`] is exact by construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, LABEL_EXCLUSION, LABEL_INCLUSION};
use crate::guideline::{
    decide, HivTest, HivTestResult, IcEvent, MedicationFact, PatientFacts, RuleSet,
    VirologyFinding,
};
use crate::seeds;

/// Retries per record before generation gives up on hitting the target class.
const MAX_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub inclusion_fraction: f64,
    pub seed: u64,
    /// Inclusive bounds on filler sentences added around the tags.
    pub filler_sentences_per_note: (usize, usize),
    /// Target fraction of tag sentences among all body sentences; lower
    /// density means more filler per fact.
    pub tag_density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 100,
            inclusion_fraction: 0.10,
            seed: 0,
            filler_sentences_per_note: (2, 8),
            tag_density: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedNote {
    pub pseudonym: String,
    pub text: String,
    pub facts: PatientFacts,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("record {index}: could not reach class {class} in {MAX_DRAWS} draws")]
    ClassUnreachable { index: usize, class: &'static str },
    #[error("malformed tag at byte {offset}: {reason}")]
    BadTag { offset: usize, reason: String },
    #[error(transparent)]
    Guideline(#[from] crate::guideline::GuidelineError),
}

const FILLER: &[&str] = &[
    "Patient kwam op controle op de polikliniek.",
    "Lichamelijk onderzoek toonde geen bijzonderheden.",
    "De laboratoriumuitslagen werden met patient besproken.",
    "Vervolgafspraak over drie maanden afgesproken.",
    "Anamnese werd afgenomen en in het dossier gedocumenteerd.",
    "Het medicatieoverzicht werd met de apotheek doorgenomen.",
    "Patient gebruikt geen alcohol en rookt niet.",
    "Bloeddruk en pols waren binnen de referentiewaarden.",
    "Een verwijzing naar de fysiotherapeut werd besproken.",
    "Conclusie en beleid werden genoteerd.",
    "De huisarts ontvangt een afschrift van deze brief.",
    "Patient werd gerustgesteld en gaat akkoord met het beleid.",
    "Het gewicht was stabiel ten opzichte van het vorige consult.",
    "Er waren geen nieuwe klachten sinds het laatste bezoek.",
];

/// ATC codes outside the immunosuppressive prefix list, used as distractors.
const BENIGN_ATC: &[&str] = &["N02BE01", "A10BA02", "C07AB02", "R03AC02", "B01AC06"];

const NON_HIV_NEGATIVE_MARKERS: &[&str] = &["anti-hcv", "hbsag", "pcr-hav"];

fn fmt_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

fn ic_tag(code: u8, excluded: bool, date: NaiveDate) -> String {
    format!("[[IC:{code} excl={} d={}]]", u8::from(excluded), fmt_date(date))
}

fn past_date(rng: &mut ChaCha20Rng, max_days_back: u64) -> NaiveDate {
    let anchor = NaiveDate::from_ymd_opt(2022, 6, 1).expect("valid anchor");
    anchor
        .checked_sub_days(Days::new(rng.random_range(0..max_days_back)))
        .expect("anchor minus bounded offset stays in range")
}

fn pick<'a, T>(rng: &mut ChaCha20Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Tag sentences for one drawn scenario. The tags, not this struct, are the
/// source of truth; facts are re-read from the final text.
struct Draw {
    tags: Vec<String>,
}

fn non_acute_code(rng: &mut ChaCha20Rng) -> u8 {
    loop {
        let code = rng.random_range(1..=36u8);
        if code != 19 && code != 30 {
            return code;
        }
    }
}

fn non_exempt_code(rng: &mut ChaCha20Rng, rules: &RuleSet) -> u8 {
    loop {
        let code = rng.random_range(1..=36u8);
        if !rules.ic(code).expect("1..=36").exempt {
            return code;
        }
    }
}

fn distractors(rng: &mut ChaCha20Rng, tags: &mut Vec<String>) {
    if rng.random_bool(0.3) {
        let code = rng.random_range(1..=36u8);
        tags.push(ic_tag(code, true, past_date(rng, 2000)));
    }
    if rng.random_bool(0.25) {
        tags.push(format!(
            "[[MED:{} d={}]]",
            pick(rng, BENIGN_ATC),
            fmt_date(past_date(rng, 900))
        ));
    }
    if rng.random_bool(0.2) {
        tags.push(format!(
            "[[VIR:{} res=neg d={}]]",
            pick(rng, NON_HIV_NEGATIVE_MARKERS),
            fmt_date(past_date(rng, 900))
        ));
    }
}

fn immunosuppressive_med(rng: &mut ChaCha20Rng, rules: &RuleSet, date: NaiveDate) -> String {
    let prefix = pick(rng, &rules.immunosuppressive_atc_prefixes);
    format!("[[MED:{}{:02} d={}]]", prefix, rng.random_range(1..=19u8), fmt_date(date))
}

fn draw_inclusion(rng: &mut ChaCha20Rng, rules: &RuleSet) -> Draw {
    let ic_date = past_date(rng, 900);
    let mut tags = Vec::new();
    match rng.random_range(0..4u8) {
        // Indicator condition, no HIV test on file.
        0 => {
            tags.push(ic_tag(rng.random_range(1..=36), false, ic_date));
            if rng.random_bool(0.3) {
                let later = ic_date
                    .checked_add_days(Days::new(rng.random_range(0..180)))
                    .expect("bounded");
                tags.push(ic_tag(non_acute_code(rng), false, later));
            }
        }
        // Last test more than a year before the condition.
        1 => {
            tags.push(ic_tag(non_acute_code(rng), false, ic_date));
            let stale = ic_date
                .checked_sub_days(Days::new(rng.random_range(366..1500)))
                .expect("anchor keeps this in range");
            tags.push(format!("[[HIVTEST:neg d={}]]", fmt_date(stale)));
        }
        // Acute presentation; the only test predates onset.
        2 => {
            let code = if rng.random_bool(0.5) { 19 } else { 30 };
            tags.push(ic_tag(code, false, ic_date));
            let before = ic_date
                .checked_sub_days(Days::new(rng.random_range(10..360)))
                .expect("bounded");
            tags.push(format!("[[HIVTEST:neg d={}]]", fmt_date(before)));
        }
        // Lab-qualified hepatitis, optionally under immunosuppression (the
        // qualification must survive the filter).
        _ => {
            let (code, markers): (u8, Vec<&str>) = match rng.random_range(0..3u8) {
                0 => (10, if rng.random_bool(0.5) { vec!["pcr-hav"] } else { vec!["igm-anti-hav"] }),
                1 => (11, vec!["hbsag", "anti-hbc"]),
                _ => (12, vec![*pick(rng, &["anti-hcv", "hcv-igg", "hcv-rna", "tma-k-hcv"])]),
            };
            for m in markers {
                tags.push(format!("[[VIR:{m} res=pos d={}]]", fmt_date(ic_date)));
            }
            if rng.random_bool(0.4) {
                tags.push(ic_tag(code, true, ic_date));
            }
            if rng.random_bool(0.5) {
                tags.push(immunosuppressive_med(rng, rules, ic_date));
            }
        }
    }
    distractors(rng, &mut tags);
    Draw { tags }
}

fn draw_exclusion(rng: &mut ChaCha20Rng, rules: &RuleSet) -> Draw {
    let ic_date = past_date(rng, 900);
    let mut tags = Vec::new();
    match rng.random_range(0..5u8) {
        // Nothing reportable at all.
        0 => {}
        // Only textually excluded mentions.
        1 => {
            for _ in 0..rng.random_range(1..=2) {
                tags.push(ic_tag(rng.random_range(1..=36), true, past_date(rng, 2000)));
            }
        }
        // Condition already covered by a recent negative test.
        2 => {
            tags.push(ic_tag(non_acute_code(rng), false, ic_date));
            let offset = rng.random_range(0..=360);
            let test = ic_date
                .checked_sub_days(Days::new(offset))
                .expect("bounded");
            tags.push(format!("[[HIVTEST:neg d={}]]", fmt_date(test)));
        }
        // Known positive before the condition.
        3 => {
            tags.push(ic_tag(rng.random_range(1..=36), false, ic_date));
            let prior = ic_date
                .checked_sub_days(Days::new(rng.random_range(30..2000)))
                .expect("anchor keeps this in range");
            tags.push(format!("[[HIVTEST:pos d={}]]", fmt_date(prior)));
        }
        // Non-exempt condition explained by immunosuppression.
        _ => {
            tags.push(ic_tag(non_exempt_code(rng, rules), false, ic_date));
            if rng.random_bool(0.6) {
                let med_date = past_date(rng, 900);
                tags.push(immunosuppressive_med(rng, rules, med_date));
            } else {
                let entry = pick(rng, &rules.immunosuppressive_diseases);
                tags.push(format!("[[DIS:{}]]", entry.key));
            }
        }
    }
    distractors(rng, &mut tags);
    Draw { tags }
}

fn tag_sentence(tag: &str) -> String {
    let body = match tag.get(2..5) {
        Some("IC:") => "Beoordeling vastgelegd",
        Some("MED") => "Actuele medicatie",
        Some("VIR") => "Labuitslag ontvangen",
        Some("DIS") => "Relevante voorgeschiedenis",
        _ => "Testhistorie",
    };
    format!("{body}: {tag}.")
}

fn compose_text(
    rng: &mut ChaCha20Rng,
    cfg: &SynthConfig,
    pseudonym: &str,
    tags: &[String],
) -> String {
    let (lo, hi) = cfg.filler_sentences_per_note;
    let wanted = libm::round(tags.len() as f64 * (1.0 / cfg.tag_density - 1.0)) as usize;
    let n_filler = wanted.clamp(lo, hi);
    let mut sentences: Vec<String> = tags.iter().map(|t| tag_sentence(t)).collect();
    for _ in 0..n_filler {
        sentences.push((*pick(rng, FILLER)).to_string());
    }
    corpus::shuffle(&mut sentences, rng);
    let mut out = format!("Betreft patient {pseudonym}, gezien op de polikliniek.");
    for s in &sentences {
        out.push(' ');
        out.push_str(s);
    }
    out
}

/// Seeded corpus with an exact class mix: exactly round(n × fraction) notes
/// carry the Inclusion label, and identical configs produce identical bytes.
pub fn generate_corpus(rules: &RuleSet, cfg: &SynthConfig) -> Result<Vec<TaggedNote>, SynthError> {
    if cfg.n == 0 {
        return Err(SynthError::BadConfig("n must be at least 1".to_string()));
    }
    if !(cfg.inclusion_fraction > 0.0 && cfg.inclusion_fraction < 1.0) {
        return Err(SynthError::BadConfig(format!(
            "inclusion fraction {} outside (0, 1)",
            cfg.inclusion_fraction
        )));
    }
    if !(cfg.tag_density > 0.0 && cfg.tag_density <= 1.0) {
        return Err(SynthError::BadConfig(format!(
            "tag density {} outside (0, 1]",
            cfg.tag_density
        )));
    }
    if cfg.filler_sentences_per_note.0 > cfg.filler_sentences_per_note.1 {
        return Err(SynthError::BadConfig("filler range is inverted".to_string()));
    }
    let n_inclusion = corpus::round_half_away(cfg.inclusion_fraction * cfg.n as f64);
    if n_inclusion == 0 || n_inclusion >= cfg.n {
        return Err(SynthError::BadConfig(format!(
            "mix of {n_inclusion} inclusions in {} records leaves an empty class",
            cfg.n
        )));
    }

    let mut targets = vec![LABEL_INCLUSION; n_inclusion];
    targets.resize(cfg.n, LABEL_EXCLUSION);
    corpus::shuffle(&mut targets, &mut seeds::rng(cfg.seed, "mix", 0));

    let mut out = Vec::with_capacity(cfg.n);
    for (i, &target) in targets.iter().enumerate() {
        let pseudonym = format!("SYN-{i:06}");
        let mut rng = seeds::rng(cfg.seed, "record", i as u64);
        let mut found = None;
        for _ in 0..MAX_DRAWS {
            let draw = if target == LABEL_INCLUSION {
                draw_inclusion(&mut rng, rules)
            } else {
                draw_exclusion(&mut rng, rules)
            };
            let text = compose_text(&mut rng, cfg, &pseudonym, &draw.tags);
            // Facts come back out of the text so their order always matches a
            // reader's parse; the engine is insensitive to that order.
            let facts = parse_tags(&text).expect("generated tags are well formed");
            let label = u8::from(decide(rules, &facts)?.recommend);
            if label == target {
                found = Some(TaggedNote { pseudonym: pseudonym.clone(), text, facts, label });
                break;
            }
        }
        out.push(found.ok_or(SynthError::ClassUnreachable {
            index: i,
            class: if target == LABEL_INCLUSION { "Inclusion" } else { "Exclusion" },
        })?);
    }
    Ok(out)
}

fn parse_date(s: &str, offset: usize) -> Result<NaiveDate, SynthError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| SynthError::BadTag {
        offset,
        reason: format!("bad date {s:?}"),
    })
}

fn payload_ok(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

/// Extracts the facts a note's tags encode, ignoring every non-tag byte.
/// Errors carry the byte offset of the offending tag opener.
pub fn parse_tags(text: &str) -> Result<PatientFacts, SynthError> {
    let mut facts = PatientFacts::default();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("[[") {
        let start = pos + rel;
        let bad = |reason: &str| SynthError::BadTag {
            offset: start,
            reason: reason.to_string(),
        };
        let end_rel = text[start..]
            .find("]]")
            .ok_or_else(|| bad("unterminated tag"))?;
        let inner = &text[start + 2..start + end_rel];
        let mut parts = inner.split(' ');
        let head = parts.next().expect("split yields at least one part");
        let (kind, payload) = head
            .split_once(':')
            .ok_or_else(|| bad("missing KIND:payload head"))?;
        if !payload_ok(payload) {
            return Err(bad(&format!("payload {payload:?} has characters outside [A-Za-z0-9-]")));
        }
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(&format!("expected key=value, found {part:?}")))?;
            keys.push((k, v));
        }
        let get = |name: &str| -> Result<&str, SynthError> {
            keys.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| bad(&format!("missing key {name}")))
        };
        match kind {
            "IC" => {
                let code: u8 = payload
                    .parse()
                    .map_err(|_| bad(&format!("IC code {payload:?} is not an integer")))?;
                let excl = match get("excl")? {
                    "0" => false,
                    "1" => true,
                    other => return Err(bad(&format!("excl must be 0 or 1, found {other:?}"))),
                };
                let date = parse_date(get("d")?, start)?;
                facts.ic_events.push(IcEvent { code, date, exclusion_present: excl });
            }
            "MED" => {
                if !corpus::is_valid_atc(payload) {
                    return Err(bad(&format!("{payload:?} is not an ATC code")));
                }
                facts.medications.push(MedicationFact {
                    atc_code: payload.to_string(),
                    date: parse_date(get("d")?, start)?,
                });
            }
            "VIR" => {
                let positive = match get("res")? {
                    "pos" => true,
                    "neg" => false,
                    other => return Err(bad(&format!("res must be pos or neg, found {other:?}"))),
                };
                facts.virology.push(VirologyFinding {
                    marker: payload.to_string(),
                    positive,
                    date: parse_date(get("d")?, start)?,
                });
            }
            "DIS" => {
                facts.immunosuppressive_diseases.push(payload.to_string());
            }
            "HIVTEST" => {
                let result = match payload {
                    "pos" => HivTestResult::Positive,
                    "neg" => HivTestResult::Negative,
                    other => return Err(bad(&format!("result must be pos or neg, found {other:?}"))),
                };
                facts.hiv_tests.push(HivTest { date: parse_date(get("d")?, start)?, result });
            }
            other => return Err(bad(&format!("unknown tag kind {other:?}"))),
        }
        pos = start + end_rel + 2;
    }
    Ok(facts)
}
