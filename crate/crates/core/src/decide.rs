//! Per-run decision parsing and multi-run aggregation.
//!
//! A run's verdict is the standalone YES or NO nearest the end of its last
//! ten tokens. Six strategies reduce a record's runs to one label; Unparsed
//! runs drop out of every selection pool, and when nothing is left the
//! aggregate falls back to Inclusion with `failsafe_applied` set, since a
//! needless test is the cheaper mistake. NoInconsistent is the one strategy
//! allowed to abstain instead.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::inference::{RunOutput, RunStatus};

/// Tokens inspected at the tail of a run when looking for the verdict.
pub const DECISION_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Inclusion,
    Exclusion,
    Unparsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    First,
    SelfConsistency,
    MaxProb,
    Shortest,
    Longest,
    NoInconsistent,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::First,
        Strategy::SelfConsistency,
        Strategy::MaxProb,
        Strategy::Shortest,
        Strategy::Longest,
        Strategy::NoInconsistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::First => "first",
            Strategy::SelfConsistency => "self_consistency",
            Strategy::MaxProb => "max_prob",
            Strategy::Shortest => "shortest",
            Strategy::Longest => "longest",
            Strategy::NoInconsistent => "no_inconsistent",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = DecideError;

    fn from_str(s: &str) -> Result<Self, DecideError> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| DecideError::UnknownStrategy(s.into()))
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateLabel {
    Inclusion,
    Exclusion,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDecision {
    pub strategy: Strategy,
    pub label: AggregateLabel,
    pub chosen_run: Option<u32>,
    pub failsafe_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecideError {
    #[error("run has no tokens; average logprob undefined")]
    EmptyTokenList,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

fn keyword(token: &str) -> Option<Decision> {
    let core = token.trim_matches(|c: char| !c.is_alphanumeric());
    if core.eq_ignore_ascii_case("yes") {
        Some(Decision::Inclusion)
    } else if core.eq_ignore_ascii_case("no") {
        Some(Decision::Exclusion)
    } else {
        None
    }
}

/// Scans the last ten tokens back-to-front; the match nearest the end wins.
pub fn parse_decision(run: &RunOutput) -> Decision {
    if run.status == RunStatus::Failed {
        return Decision::Unparsed;
    }
    let window = run.tokens.len().min(DECISION_WINDOW);
    run.tokens
        .iter()
        .rev()
        .take(window)
        .find_map(|t| keyword(&t.t))
        .unwrap_or(Decision::Unparsed)
}

/// Arithmetic mean of the per-token logprobs (the length-normalized sequence
/// score used by the max-probability strategy).
pub fn avg_logprob(run: &RunOutput) -> Result<f64, DecideError> {
    if run.tokens.is_empty() {
        return Err(DecideError::EmptyTokenList);
    }
    Ok(run.tokens.iter().map(|t| t.lp).sum::<f64>() / run.tokens.len() as f64)
}

/// The audit row stored next to each aggregate decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRunSummary {
    pub run_index: u32,
    pub decision: Decision,
    pub avg_logprob: Option<f64>,
    pub completion_token_count: u32,
    pub status: RunStatus,
}

pub fn summarize_runs(runs: &[RunOutput]) -> Vec<PerRunSummary> {
    runs.iter()
        .map(|r| PerRunSummary {
            run_index: r.run_index,
            decision: parse_decision(r),
            avg_logprob: avg_logprob(r).ok(),
            completion_token_count: r.completion_token_count,
            status: r.status,
        })
        .collect()
}

fn failsafe(strategy: Strategy) -> AggregateDecision {
    AggregateDecision {
        strategy,
        label: AggregateLabel::Inclusion,
        chosen_run: None,
        failsafe_applied: true,
    }
}

fn from_decision(strategy: Strategy, decision: Decision, run_index: u32) -> AggregateDecision {
    AggregateDecision {
        strategy,
        label: match decision {
            Decision::Inclusion => AggregateLabel::Inclusion,
            Decision::Exclusion => AggregateLabel::Exclusion,
            Decision::Unparsed => unreachable!("selection pools hold parsed runs only"),
        },
        chosen_run: Some(run_index),
        failsafe_applied: false,
    }
}

/// Reduces one record's runs to a single label.
///
/// Selection strategies (First, MaxProb, Shortest, Longest) pick among
/// parsed runs, breaking ties toward the lowest run index, and fall back to
/// the Inclusion fail-safe when no run parsed. SelfConsistency majority-votes
/// with the same fail-safe on ties. NoInconsistent answers only when all runs
/// parse identically and abstains otherwise.
pub fn aggregate(strategy: Strategy, runs: &[RunOutput]) -> AggregateDecision {
    let mut parsed: Vec<(&RunOutput, Decision)> = runs
        .iter()
        .map(|r| (r, parse_decision(r)))
        .filter(|(_, d)| *d != Decision::Unparsed)
        .collect();
    parsed.sort_by_key(|(r, _)| r.run_index);

    match strategy {
        Strategy::First => match parsed.first() {
            Some(&(run, d)) => from_decision(strategy, d, run.run_index),
            None => failsafe(strategy),
        },
        Strategy::SelfConsistency => {
            let yes = parsed.iter().filter(|(_, d)| *d == Decision::Inclusion).count();
            let no = parsed.len() - yes;
            let label = if yes > no {
                AggregateLabel::Inclusion
            } else if no > yes {
                AggregateLabel::Exclusion
            } else {
                return failsafe(strategy);
            };
            AggregateDecision { strategy, label, chosen_run: None, failsafe_applied: false }
        }
        Strategy::MaxProb => {
            let best = parsed.iter().max_by(|(a, _), (b, _)| {
                let la = avg_logprob(a).expect("parsed run has tokens");
                let lb = avg_logprob(b).expect("parsed run has tokens");
                // max_by keeps the later element on Equal; run order is
                // ascending, so flip equality to keep the lowest index.
                la.total_cmp(&lb).then(core::cmp::Ordering::Greater)
            });
            match best {
                Some(&(run, d)) => from_decision(strategy, d, run.run_index),
                None => failsafe(strategy),
            }
        }
        Strategy::Shortest => match parsed
            .iter()
            .min_by_key(|(r, _)| (r.completion_token_count, r.run_index))
        {
            Some(&(run, d)) => from_decision(strategy, d, run.run_index),
            None => failsafe(strategy),
        },
        Strategy::Longest => {
            let best = parsed.iter().max_by(|(a, _), (b, _)| {
                a.completion_token_count
                    .cmp(&b.completion_token_count)
                    .then(core::cmp::Ordering::Greater)
            });
            match best {
                Some(&(run, d)) => from_decision(strategy, d, run.run_index),
                None => failsafe(strategy),
            }
        }
        Strategy::NoInconsistent => {
            let unanimous = parsed.len() == runs.len()
                && !runs.is_empty()
                && parsed.windows(2).all(|w| w[0].1 == w[1].1);
            let label = if unanimous {
                match parsed[0].1 {
                    Decision::Inclusion => AggregateLabel::Inclusion,
                    _ => AggregateLabel::Exclusion,
                }
            } else {
                AggregateLabel::Abstain
            };
            AggregateDecision { strategy, label, chosen_run: None, failsafe_applied: false }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::TokenLogprob;

    fn run_with(idx: u32, words: &[&str], lp: f64) -> RunOutput {
        let tokens: Vec<TokenLogprob> =
            words.iter().map(|w| TokenLogprob { t: (*w).to_owned(), lp }).collect();
        RunOutput {
            record: "r".into(),
            run_index: idx,
            text: words.join(" "),
            completion_token_count: tokens.len() as u32,
            tokens,
            prompt_token_count: 100,
            status: RunStatus::Ok,
        }
    }

    #[test]
    fn terminal_yes_parses_as_inclusion() {
        let run = run_with(0, &["de", "decision", ":", "YES"], -0.3);
        assert_eq!(parse_decision(&run), Decision::Inclusion);
    }

    #[test]
    fn nearest_to_end_keyword_wins() {
        let run = run_with(0, &["dus", "not", "NO", "but", "YES"], -0.3);
        assert_eq!(parse_decision(&run), Decision::Inclusion);
        let run = run_with(0, &["dus", "not", "YES", "but", "NO"], -0.3);
        assert_eq!(parse_decision(&run), Decision::Exclusion);
    }

    #[test]
    fn keyword_outside_window_is_unparsed() {
        let mut words = vec!["YES"];
        words.extend(core::iter::repeat_n("woord", 10));
        let run = run_with(0, &words, -0.3);
        assert_eq!(parse_decision(&run), Decision::Unparsed);
        // One filler fewer puts the keyword exactly at the window edge.
        let mut words = vec!["YES"];
        words.extend(core::iter::repeat_n("woord", 9));
        let run = run_with(0, &words, -0.3);
        assert_eq!(parse_decision(&run), Decision::Inclusion);
    }

    #[test]
    fn punctuation_and_case_are_ignored() {
        for tail in [&["antwoord:", "yes."][..], &["'YES'"], &["(Yes)"]] {
            let run = run_with(0, tail, -0.3);
            assert_eq!(parse_decision(&run), Decision::Inclusion, "tail {tail:?}");
        }
        let run = run_with(0, &["No,"], -0.3);
        assert_eq!(parse_decision(&run), Decision::Exclusion);
        // Embedded keywords are not standalone tokens.
        let run = run_with(0, &["nosferatu", "eyes"], -0.3);
        assert_eq!(parse_decision(&run), Decision::Unparsed);
    }

    #[test]
    fn failed_runs_never_parse() {
        assert_eq!(parse_decision(&RunOutput::failed("r", 0)), Decision::Unparsed);
    }

    #[test]
    fn avg_logprob_is_the_mean() {
        let mut run = run_with(0, &["a", "b", "c"], 0.0);
        run.tokens[0].lp = -1.0;
        run.tokens[1].lp = -2.0;
        run.tokens[2].lp = -3.0;
        assert_eq!(avg_logprob(&run).unwrap(), -2.0);
        let zeros = run_with(0, &["a", "b"], 0.0);
        assert_eq!(avg_logprob(&zeros).unwrap(), 0.0);
        assert_eq!(
            avg_logprob(&RunOutput::failed("r", 0)).unwrap_err(),
            DecideError::EmptyTokenList
        );
    }

    fn yes(idx: u32) -> RunOutput {
        run_with(idx, &["toelichting", "YES"], -0.4)
    }

    fn no(idx: u32) -> RunOutput {
        run_with(idx, &["toelichting", "NO"], -0.4)
    }

    fn unparsed(idx: u32) -> RunOutput {
        RunOutput::failed("r", idx)
    }

    #[test]
    fn majority_vote_examples() {
        let runs = vec![yes(0), no(1), yes(2)];
        let agg = aggregate(Strategy::SelfConsistency, &runs);
        assert_eq!(agg.label, AggregateLabel::Inclusion);
        assert!(!agg.failsafe_applied);
        assert_eq!(agg.chosen_run, None);
    }

    #[test]
    fn no_inconsistent_abstains_on_split() {
        let runs = vec![yes(0), no(1), yes(2)];
        assert_eq!(aggregate(Strategy::NoInconsistent, &runs).label, AggregateLabel::Abstain);
        let runs = vec![no(0), no(1), no(2)];
        assert_eq!(aggregate(Strategy::NoInconsistent, &runs).label, AggregateLabel::Exclusion);
        let runs = vec![yes(0), yes(1), unparsed(2)];
        assert_eq!(aggregate(Strategy::NoInconsistent, &runs).label, AggregateLabel::Abstain);
    }

    #[test]
    fn max_prob_picks_highest_average() {
        let mut r0 = no(0);
        let mut r1 = yes(1);
        let mut r2 = no(2);
        for t in &mut r0.tokens {
            t.lp = -1.2;
        }
        for t in &mut r1.tokens {
            t.lp = -0.8;
        }
        for t in &mut r2.tokens {
            t.lp = -1.5;
        }
        let agg = aggregate(Strategy::MaxProb, &[r0, r1, r2]);
        assert_eq!(agg.label, AggregateLabel::Inclusion);
        assert_eq!(agg.chosen_run, Some(1));
    }

    #[test]
    fn max_prob_breaks_ties_toward_low_index() {
        let agg = aggregate(Strategy::MaxProb, &[no(0), yes(1), yes(2)]);
        assert_eq!(agg.chosen_run, Some(0));
        assert_eq!(agg.label, AggregateLabel::Exclusion);
    }

    #[test]
    fn unparsed_tie_falls_back_to_inclusion() {
        let runs = vec![yes(0), unparsed(1), no(2)];
        let agg = aggregate(Strategy::SelfConsistency, &runs);
        assert_eq!(agg.label, AggregateLabel::Inclusion);
        assert!(agg.failsafe_applied);
    }

    #[test]
    fn first_skips_unparsed_runs() {
        let runs = vec![unparsed(0), no(1), yes(2)];
        let agg = aggregate(Strategy::First, &runs);
        assert_eq!(agg.label, AggregateLabel::Exclusion);
        assert_eq!(agg.chosen_run, Some(1));
        assert!(!agg.failsafe_applied);

        let runs = vec![no(0), yes(1), yes(2)];
        assert_eq!(aggregate(Strategy::First, &runs).chosen_run, Some(0));
    }

    #[test]
    fn shortest_and_longest_use_token_counts() {
        let short = run_with(0, &["NO"], -0.4);
        let medium = run_with(1, &["dus", "dus", "YES"], -0.4);
        let long = run_with(2, &["a", "b", "c", "d", "YES"], -0.4);
        let runs = vec![short, medium, long];
        let s = aggregate(Strategy::Shortest, &runs);
        assert_eq!((s.label, s.chosen_run), (AggregateLabel::Exclusion, Some(0)));
        let l = aggregate(Strategy::Longest, &runs);
        assert_eq!((l.label, l.chosen_run), (AggregateLabel::Inclusion, Some(2)));
        // Equal lengths resolve to the lower run index.
        let runs = vec![run_with(0, &["x", "NO"], -0.4), run_with(1, &["x", "YES"], -0.4)];
        assert_eq!(aggregate(Strategy::Longest, &runs).chosen_run, Some(0));
    }

    #[test]
    fn all_unparsed_behavior_per_strategy() {
        let runs = vec![unparsed(0), unparsed(1), unparsed(2)];
        for strategy in [
            Strategy::First,
            Strategy::SelfConsistency,
            Strategy::MaxProb,
            Strategy::Shortest,
            Strategy::Longest,
        ] {
            let agg = aggregate(strategy, &runs);
            assert_eq!(agg.label, AggregateLabel::Inclusion, "{strategy}");
            assert!(agg.failsafe_applied, "{strategy}");
            assert_eq!(agg.chosen_run, None, "{strategy}");
        }
        assert_eq!(aggregate(Strategy::NoInconsistent, &runs).label, AggregateLabel::Abstain);
    }

    #[test]
    fn unanimous_runs_collapse_every_strategy() {
        let runs = vec![yes(0), yes(1), yes(2)];
        for strategy in Strategy::ALL {
            let agg = aggregate(strategy, &runs);
            assert_eq!(agg.label, AggregateLabel::Inclusion, "{strategy}");
            assert!(!agg.failsafe_applied, "{strategy}");
        }
    }

    #[test]
    fn summaries_expose_run_details() {
        let runs = vec![yes(0), unparsed(1)];
        let summary = summarize_runs(&runs);
        assert_eq!(summary[0].decision, Decision::Inclusion);
        assert!(summary[0].avg_logprob.is_some());
        assert_eq!(summary[1].decision, Decision::Unparsed);
        assert_eq!(summary[1].avg_logprob, None);
        assert_eq!(summary[1].status, RunStatus::Failed);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("votes".parse::<Strategy>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn aggregation_ignores_arrival_order(
            decisions in proptest::collection::vec(0u8..3, 3),
            perm in 0usize..6,
        ) {
            let runs: Vec<RunOutput> = decisions
                .iter()
                .enumerate()
                .map(|(i, d)| match d {
                    0 => yes(i as u32),
                    1 => no(i as u32),
                    _ => unparsed(i as u32),
                })
                .collect();
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let shuffled: Vec<RunOutput> =
                orders[perm].iter().map(|&i| runs[i].clone()).collect();
            for strategy in Strategy::ALL {
                proptest::prop_assert_eq!(
                    aggregate(strategy, &runs),
                    aggregate(strategy, &shuffled),
                    "strategy {}", strategy
                );
            }
        }

        #[test]
        fn shifting_logprobs_never_changes_max_prob_choice(
            lps in proptest::collection::vec(-5.0f64..0.0, 3),
            shift in -3.0f64..0.0,
        ) {
            let mut runs = vec![yes(0), no(1), yes(2)];
            for (run, lp) in runs.iter_mut().zip(&lps) {
                for t in &mut run.tokens {
                    t.lp = *lp;
                }
            }
            let before = aggregate(Strategy::MaxProb, &runs);
            for run in &mut runs {
                for t in &mut run.tokens {
                    t.lp += shift;
                }
            }
            let after = aggregate(Strategy::MaxProb, &runs);
            proptest::prop_assert_eq!(before.chosen_run, after.chosen_run);
            proptest::prop_assert_eq!(before.label, after.label);
        }

        #[test]
        fn avg_logprob_shift_linearity(
            lps in proptest::collection::vec(-8.0f64..0.0, 1..40),
            shift in -4.0f64..0.0,
        ) {
            let mut run = run_with(0, &vec!["w"; lps.len()], 0.0);
            for (t, lp) in run.tokens.iter_mut().zip(&lps) {
                t.lp = *lp;
            }
            let base = avg_logprob(&run).unwrap();
            for t in &mut run.tokens {
                t.lp += shift;
            }
            let shifted = avg_logprob(&run).unwrap();
            proptest::prop_assert!((shifted - (base + shift)).abs() < 1e-9);
        }
    }
}
