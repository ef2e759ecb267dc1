//! Indicator-condition screening rules.
//!
//! The tables (condition catalog, ATC prefixes, virology criteria, HIV test
//! markers) live in `resources/guideline_rules.json` and are embedded at build
//! time; a clinical revision of the tables is a resource edit, not a code
//! change. [`decide`] walks the nine screening steps over a [`PatientFacts`]
//! bundle and returns the recommendation together with a per-step trace.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Tests within this horizon before an indicator condition count as current
/// (step 8, rules 4 and 5). Expressed in days; leap years are not special-cased.
pub const WITHIN_YEAR_DAYS: i64 = 365;

const BUILTIN_RULES: &str = include_str!("../resources/guideline_rules.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuidelineError {
    #[error("unknown indicator condition code {code}")]
    UnknownIcCode { code: u8 },
    #[error("malformed rule table: {0}")]
    MalformedRules(String),
}

/// One row of the indicator-condition catalog.
///
/// `exempt` marks conditions that remain indicators even under documented
/// immunosuppression (step 5). `association_rank` orders conditions by
/// strength of HIV association for step 6; lower is stronger, unranked
/// conditions share a large sentinel rank and fall back to code order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorCondition {
    pub code: u8,
    pub name: String,
    pub aids_defining: bool,
    pub exempt: bool,
    pub acute: bool,
    pub association_rank: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionMode {
    /// A single positive marker satisfies the criterion.
    Any,
    /// Every listed marker must have a positive result.
    All,
}

/// Lab-result pattern that qualifies an indicator condition on its own,
/// regardless of textual exclusions on the condition mention (step 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirologyCriterion {
    pub code: u8,
    pub mode: CriterionMode,
    pub markers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseEntry {
    pub key: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: String,
    pub indicator_conditions: Vec<IndicatorCondition>,
    pub immunosuppressive_atc_prefixes: Vec<String>,
    pub immunosuppressive_diseases: Vec<DiseaseEntry>,
    pub virology_criteria: Vec<VirologyCriterion>,
    pub hiv_test_markers: Vec<String>,
}

impl RuleSet {
    /// The embedded table. Panics only if the shipped resource is broken,
    /// which is a build defect, not a runtime condition.
    pub fn builtin() -> RuleSet {
        RuleSet::from_json(BUILTIN_RULES).expect("embedded rule table must be valid")
    }

    pub fn from_json(raw: &str) -> Result<RuleSet, GuidelineError> {
        let rules: RuleSet = serde_json::from_str(raw)
            .map_err(|e| GuidelineError::MalformedRules(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    fn validate(&self) -> Result<(), GuidelineError> {
        let n = self.indicator_conditions.len();
        if n != 36 {
            return Err(GuidelineError::MalformedRules(format!(
                "expected 36 indicator conditions, found {n}"
            )));
        }
        for (i, ic) in self.indicator_conditions.iter().enumerate() {
            if usize::from(ic.code) != i + 1 {
                return Err(GuidelineError::MalformedRules(format!(
                    "condition codes must be 1..=36 in order; position {i} holds code {}",
                    ic.code
                )));
            }
            if ic.name.trim().is_empty() {
                return Err(GuidelineError::MalformedRules(format!(
                    "condition {} has an empty name",
                    ic.code
                )));
            }
        }
        for prefix in &self.immunosuppressive_atc_prefixes {
            if !crate::corpus::is_valid_atc(prefix) {
                return Err(GuidelineError::MalformedRules(format!(
                    "ATC prefix {prefix:?} is not valid ATC syntax"
                )));
            }
        }
        for crit in &self.virology_criteria {
            self.ic(crit.code)?;
            if crit.markers.is_empty() {
                return Err(GuidelineError::MalformedRules(format!(
                    "virology criterion for condition {} lists no markers",
                    crit.code
                )));
            }
        }
        if self.hiv_test_markers.is_empty() {
            return Err(GuidelineError::MalformedRules(
                "HIV test marker list is empty".to_string(),
            ));
        }
        Ok(())
    }

    pub fn ic(&self, code: u8) -> Result<&IndicatorCondition, GuidelineError> {
        self.indicator_conditions
            .get(usize::from(code).wrapping_sub(1))
            .filter(|ic| ic.code == code)
            .ok_or(GuidelineError::UnknownIcCode { code })
    }
}

/// Case-insensitive, punctuation-insensitive key for marker and disease
/// matching: "IgM anti-HAV" and "igm-anti-hav" collapse to the same string.
pub fn normalize_term(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// A dated mention of an indicator condition in the record.
/// `exclusion_present` means the note itself documents a non-HIV explanation,
/// which removes the mention from consideration before step 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcEvent {
    pub code: u8,
    pub date: NaiveDate,
    pub exclusion_present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirologyFinding {
    pub marker: String,
    pub positive: bool,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationFact {
    pub atc_code: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HivTestResult {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HivTest {
    pub date: NaiveDate,
    pub result: HivTestResult,
}

/// Everything the rule walk consumes, already extracted from the record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientFacts {
    #[serde(default)]
    pub ic_events: Vec<IcEvent>,
    #[serde(default)]
    pub virology: Vec<VirologyFinding>,
    #[serde(default)]
    pub medications: Vec<MedicationFact>,
    #[serde(default)]
    pub immunosuppressive_diseases: Vec<String>,
    #[serde(default)]
    pub hiv_tests: Vec<HivTest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u8,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineDecision {
    pub recommend: bool,
    /// Highest-priority surviving condition, present even when the final
    /// answer is negative for a test-history reason.
    pub primary_ic: Option<u8>,
    pub trace: Vec<TraceEntry>,
}

/// A condition still in play after steps 1 and 2. `virology_backed` carries
/// the step 2 qualification through step 5, where it defeats the
/// immunosuppression filter.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Candidate {
    code: u8,
    date: NaiveDate,
    virology_backed: bool,
}

fn event_candidates(rules: &RuleSet, facts: &PatientFacts) -> Result<Vec<Candidate>, GuidelineError> {
    let mut out: Vec<Candidate> = Vec::new();
    for ev in &facts.ic_events {
        rules.ic(ev.code)?;
        if ev.exclusion_present {
            continue;
        }
        match out.iter_mut().find(|c| c.code == ev.code) {
            // Repeat mentions collapse to one candidate dated at the first
            // occurrence; recency never weakens an indicator.
            Some(c) => c.date = c.date.min(ev.date),
            None => out.push(Candidate {
                code: ev.code,
                date: ev.date,
                virology_backed: false,
            }),
        }
    }
    Ok(out)
}

fn criterion_date(crit: &VirologyCriterion, facts: &PatientFacts) -> Option<NaiveDate> {
    // Earliest positive date per marker; the criterion is met when its mode
    // is satisfied, and dated at the moment it became satisfiable (min for
    // any-of, max over required markers for all-of).
    let mut per_marker: Vec<Option<NaiveDate>> = Vec::new();
    for marker in &crit.markers {
        let key = normalize_term(marker);
        let earliest = facts
            .virology
            .iter()
            .filter(|v| v.positive && normalize_term(&v.marker) == key)
            .map(|v| v.date)
            .min();
        per_marker.push(earliest);
    }
    match crit.mode {
        CriterionMode::Any => per_marker.into_iter().flatten().min(),
        CriterionMode::All => {
            let mut latest: Option<NaiveDate> = None;
            for d in per_marker {
                let d = d?;
                latest = Some(latest.map_or(d, |l| l.max(d)));
            }
            latest
        }
    }
}

/// Codes qualified by lab results alone (step 2), with the date each
/// criterion was met.
pub fn virology_overrides(rules: &RuleSet, facts: &PatientFacts) -> Vec<(u8, NaiveDate)> {
    rules
        .virology_criteria
        .iter()
        .filter_map(|crit| criterion_date(crit, facts).map(|d| (crit.code, d)))
        .collect()
}

fn merged_candidates(rules: &RuleSet, facts: &PatientFacts) -> Result<Vec<Candidate>, GuidelineError> {
    let mut cands = event_candidates(rules, facts)?;
    for (code, date) in virology_overrides(rules, facts) {
        match cands.iter_mut().find(|c| c.code == code) {
            Some(c) => {
                c.virology_backed = true;
                c.date = c.date.min(date);
            }
            None => cands.push(Candidate {
                code,
                date,
                virology_backed: true,
            }),
        }
    }
    Ok(cands)
}

/// Candidate conditions after steps 1 and 2, most recent first. Excluded
/// mentions are dropped unless a virology criterion re-qualifies the code.
pub fn detect_candidate_ics(
    rules: &RuleSet,
    facts: &PatientFacts,
) -> Result<Vec<u8>, GuidelineError> {
    let mut cands = merged_candidates(rules, facts)?;
    cands.sort_by(|a, b| b.date.cmp(&a.date).then(a.code.cmp(&b.code)));
    Ok(cands.iter().map(|c| c.code).collect())
}

fn immunosuppressive_medication<'a>(rules: &RuleSet, facts: &'a PatientFacts) -> Option<&'a str> {
    facts.medications.iter().find_map(|m| {
        let code = m.atc_code.trim().to_uppercase();
        rules
            .immunosuppressive_atc_prefixes
            .iter()
            .any(|p| code.starts_with(p.as_str()))
            .then_some(m.atc_code.as_str())
    })
}

fn immunosuppressive_disease<'a>(rules: &RuleSet, facts: &'a PatientFacts) -> Option<&'a str> {
    facts.immunosuppressive_diseases.iter().find_map(|d| {
        let key = normalize_term(d);
        rules
            .immunosuppressive_diseases
            .iter()
            .any(|entry| {
                normalize_term(&entry.key) == key
                    || entry.aliases.iter().any(|a| normalize_term(a) == key)
            })
            .then_some(d.as_str())
    })
}

/// Steps 3 to 5: under documented immunosuppression, keep only exempt or
/// virology-backed conditions. Without immunosuppression the list passes
/// through unchanged.
pub fn apply_immunosuppression_filters(
    rules: &RuleSet,
    facts: &PatientFacts,
    codes: &[u8],
) -> Result<Vec<u8>, GuidelineError> {
    for &code in codes {
        rules.ic(code)?;
    }
    if immunosuppressive_medication(rules, facts).is_none()
        && immunosuppressive_disease(rules, facts).is_none()
    {
        return Ok(codes.to_vec());
    }
    let backed: Vec<u8> = virology_overrides(rules, facts)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    Ok(codes
        .iter()
        .copied()
        .filter(|&c| {
            let ic = rules.ic(c).expect("validated above");
            ic.exempt || backed.contains(&c)
        })
        .collect())
}

/// Step 6 ordering: strongest HIV association first, code as tiebreak.
pub fn prioritize(rules: &RuleSet, codes: &[u8]) -> Vec<u8> {
    let mut out = codes.to_vec();
    out.sort_by_key(|&c| {
        let rank = rules.ic(c).map(|ic| ic.association_rank).unwrap_or(u8::MAX);
        (rank, c)
    });
    out.dedup();
    out
}

fn collect_hiv_tests(rules: &RuleSet, facts: &PatientFacts) -> Vec<HivTest> {
    let mut tests = facts.hiv_tests.clone();
    let keys: Vec<String> = rules.hiv_test_markers.iter().map(|m| normalize_term(m)).collect();
    for v in &facts.virology {
        if keys.contains(&normalize_term(&v.marker)) {
            tests.push(HivTest {
                date: v.date,
                result: if v.positive {
                    HivTestResult::Positive
                } else {
                    HivTestResult::Negative
                },
            });
        }
    }
    tests.sort_by_key(|t| t.date);
    tests
}

fn fmt_codes(codes: &[u8]) -> String {
    let mut s = String::from("[");
    for (i, c) in codes.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&c.to_string());
    }
    s.push(']');
    s
}

/// Full nine-step walk. Total over any facts whose condition codes are known;
/// an unknown code is the only error path.
pub fn decide(rules: &RuleSet, facts: &PatientFacts) -> Result<GuidelineDecision, GuidelineError> {
    let mut trace: Vec<TraceEntry> = Vec::new();
    fn push(trace: &mut Vec<TraceEntry>, step: u8, outcome: String) {
        trace.push(TraceEntry { step, outcome });
    }

    // Step 1: dated mentions, minus textually excluded ones.
    let from_events = event_candidates(rules, facts)?;
    let excluded = facts.ic_events.iter().filter(|e| e.exclusion_present).count();
    let event_codes: Vec<u8> = from_events.iter().map(|c| c.code).collect();
    push(
        &mut trace,
        1,
        format!(
            "conditions from events {}; {excluded} excluded mention(s) set aside",
            fmt_codes(&event_codes)
        ),
    );

    // Step 2: lab criteria qualify hepatitis codes irrespective of exclusions.
    let overrides = virology_overrides(rules, facts);
    let override_codes: Vec<u8> = overrides.iter().map(|&(c, _)| c).collect();
    push(
        &mut trace,
        2,
        if override_codes.is_empty() {
            String::from("no virology criterion met")
        } else {
            format!("virology qualifies {}", fmt_codes(&override_codes))
        },
    );

    let candidates = merged_candidates(rules, facts)?;

    // Steps 3 and 4: establish immunosuppression from medication and history.
    let med = immunosuppressive_medication(rules, facts);
    push(
        &mut trace,
        3,
        match med {
            Some(code) => format!("immunosuppressive medication present ({code})"),
            None => String::from("no immunosuppressive medication"),
        },
    );
    let dis = immunosuppressive_disease(rules, facts);
    push(
        &mut trace,
        4,
        match dis {
            Some(d) => format!("immunosuppressive disease present ({d})"),
            None => String::from("no immunosuppressive disease"),
        },
    );

    // Step 5: drop non-exempt candidates when immunosuppression explains them.
    let immunosuppressed = med.is_some() || dis.is_some();
    let surviving: Vec<Candidate> = if immunosuppressed {
        candidates
            .iter()
            .filter(|c| {
                let exempt = rules.ic(c.code).map(|ic| ic.exempt).unwrap_or(false);
                exempt || c.virology_backed
            })
            .cloned()
            .collect()
    } else {
        candidates.clone()
    };
    if immunosuppressed {
        let removed: Vec<u8> = candidates
            .iter()
            .filter(|c| !surviving.iter().any(|s| s.code == c.code))
            .map(|c| c.code)
            .collect();
        let kept: Vec<u8> = surviving.iter().map(|c| c.code).collect();
        push(
            &mut trace,
            5,
            format!(
                "immunosuppression filter removed {}; kept {}",
                fmt_codes(&removed),
                fmt_codes(&kept)
            ),
        );
    } else {
        push(&mut trace, 5, String::from("no immunosuppression; filter not applied"));
    }

    // Step 6: priority order.
    let surviving_codes: Vec<u8> = surviving.iter().map(|c| c.code).collect();
    let prioritized = prioritize(rules, &surviving_codes);
    let primary_ic = prioritized.first().copied();
    push(&mut trace, 6, format!("priority order {}", fmt_codes(&prioritized)));

    // Step 7: assemble the HIV test history (explicit tests plus any virology
    // rows naming an HIV marker).
    let tests = collect_hiv_tests(rules, facts);
    let positives: Vec<&HivTest> = tests
        .iter()
        .filter(|t| t.result == HivTestResult::Positive)
        .collect();
    push(
        &mut trace,
        7,
        if tests.is_empty() {
            String::from("no HIV test documented")
        } else {
            let latest = tests.last().expect("nonempty");
            format!(
                "{} HIV test(s); latest {} {}; {} positive",
                tests.len(),
                latest.date,
                match latest.result {
                    HivTestResult::Positive => "positive",
                    HivTestResult::Negative => "negative",
                },
                positives.len()
            )
        },
    );

    // Step 8: the decision rules, first match wins. The outcome line starts
    // with the fired rule's tag so traces stay greppable per case.
    let ic_date = surviving.iter().map(|c| c.date).min();
    let positivity_note = if positives.is_empty() {
        String::new()
    } else {
        String::from(" (rule 1: HIV positivity documented)")
    };
    let (recommend, verdict) = if let (Some(ic_date), false) = (ic_date, positives.is_empty()) {
        let prior = positives.iter().any(|t| t.date < ic_date);
        if prior {
            (
                false,
                format!("rule 2: positive result predates the condition; already diagnosed{positivity_note}"),
            )
        } else {
            step8_for_negative_history(&surviving, rules, &tests, ic_date, &positivity_note)
        }
    } else if ic_date.is_none() {
        (
            false,
            format!("rule 3: no surviving indicator condition{positivity_note}"),
        )
    } else {
        let ic_date = ic_date.expect("checked above");
        step8_for_negative_history(&surviving, rules, &tests, ic_date, &positivity_note)
    };
    push(&mut trace, 8, verdict);

    Ok(GuidelineDecision {
        recommend,
        primary_ic,
        trace,
    })
}

fn step8_for_negative_history(
    surviving: &[Candidate],
    rules: &RuleSet,
    tests: &[HivTest],
    ic_date: NaiveDate,
    positivity_note: &str,
) -> (bool, String) {
    if tests.is_empty() {
        return (true, String::from("rule 4a: no HIV test documented; recommend"));
    }
    let latest = tests.last().expect("nonempty").date;
    if (ic_date - latest).num_days() > WITHIN_YEAR_DAYS {
        return (
            true,
            format!("rule 4b: last test {latest} is more than a year before the condition; recommend{positivity_note}"),
        );
    }
    // Acute presentations need a test on or after their own date even when an
    // older one exists.
    for c in surviving {
        let acute = rules.ic(c.code).map(|ic| ic.acute).unwrap_or(false);
        if acute && !tests.iter().any(|t| t.date >= c.date) {
            return (
                true,
                format!("rule 4c: acute condition {} has no test on or after {}; recommend{positivity_note}", c.code, c.date),
            );
        }
    }
    let recent_negative = tests.iter().any(|t| {
        t.result == HivTestResult::Negative
            && t.date <= ic_date
            && (ic_date - t.date).num_days() <= WITHIN_YEAR_DAYS
    });
    if recent_negative {
        return (
            false,
            format!("rule 5: negative test within a year before the condition{positivity_note}"),
        );
    }
    (
        false,
        format!("rule 4 none: test history current; no rule qualifies{positivity_note}"),
    )
}
