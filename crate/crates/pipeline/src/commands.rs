//! The stage implementations behind each subcommand. Stages communicate
//! only through artifacts on disk, so any stage can be re-run in isolation
//! as long as the digest chain still matches.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::artifacts::{self, ConfusionRow, DecisionRow, DigestBasis, MetricsRow, SplitManifest};
use crate::client::{self, Backend, PromptedRecord};
use crate::config::{self, BackendKind, PipelineConfig, Subset};
use crate::core::corpus::{
    self, MedicationEntry, PatientRecord, RawMetadataEntry, RawNoteEntry, VirologyEntry,
};
use crate::core::decide::{self, AggregateLabel, Strategy};
use crate::core::evalkit::{self, ConfusionMatrix};
use crate::core::guideline::RuleSet;
use crate::core::inference::{RunOutput, RunStatus};
use crate::core::mock::MockModel;
use crate::core::prompts::{self, PromptId, PromptTemplate};
use crate::core::stats::{self, LengthRecord, RunLengthConfig, TestOutcome};
use crate::core::synth;
use crate::core::textclean::clean_text;
use crate::server::{MockServer, ServeOptions};
use crate::StageError;

fn stage(name: &'static str, err: impl std::fmt::Display) -> StageError {
    StageError::Stage { stage: name, reason: err.to_string() }
}

fn ensure_parent(path: &Path, name: &'static str) -> Result<(), StageError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| stage(name, format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

// Digest chain walkers. Each one verifies its artifact against what the
// current config implies and hands back the digest the next link chains
// from. A mismatch anywhere surfaces as a config error before any stage
// touches stale data. The record set is the chain root: its generation
// parameters may have arrived as one-off flags no later invocation knows,
// so descendants chain from its content hash instead of its config digest.

fn verified_records(cfg: &PipelineConfig) -> Result<String, StageError> {
    Ok(artifacts::verify_meta(&cfg.records_path(), None)?.content_digest)
}

fn verified_split(cfg: &PipelineConfig) -> Result<String, StageError> {
    let records = verified_records(cfg)?;
    let expected = config::digest_split(&records, cfg.seed, &cfg.split);
    Ok(artifacts::verify_meta(&cfg.split_path(), Some(&expected))?.config_digest)
}

/// Parent of the runs artifact: the split when a subset was drawn, the
/// record set itself when the whole corpus was sent.
fn runs_parent(cfg: &PipelineConfig) -> Result<String, StageError> {
    match cfg.subset {
        Subset::All => verified_records(cfg),
        Subset::Test | Subset::Train => verified_split(cfg),
    }
}

fn verified_runs(cfg: &PipelineConfig, prompt: PromptId) -> Result<String, StageError> {
    let parent = runs_parent(cfg)?;
    let expected = config::digest_runs(&parent, cfg, prompt);
    Ok(artifacts::verify_meta(&cfg.runs_path(prompt), Some(&expected))?.config_digest)
}

fn verified_decisions(cfg: &PipelineConfig, prompt: PromptId) -> Result<String, StageError> {
    let runs = verified_runs(cfg, prompt)?;
    let expected = config::digest_decisions(&runs, &cfg.strategies);
    Ok(artifacts::verify_meta(&cfg.decisions_path(prompt), Some(&expected))?.config_digest)
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<(), StageError> {
    let notes = synth::generate_corpus(&RuleSet::builtin(), &cfg.synth)
        .map_err(|e| stage("synth", e))?;
    let records: Vec<PatientRecord> = notes
        .into_iter()
        .map(|n| PatientRecord { pseudonym: n.pseudonym, text: n.text, label: n.label })
        .collect();
    let inclusions = records.iter().filter(|r| r.label == corpus::LABEL_INCLUSION).count();

    let path = cfg.records_path();
    ensure_parent(&path, "synth")?;
    artifacts::write_jsonl(&path, &records).map_err(|e| stage("synth", e))?;
    artifacts::write_meta(&path, &config::digest_records_synth(&cfg.synth), DigestBasis::Config)
        .map_err(|e| stage("synth", e))?;
    println!(
        "synth: {} records ({} inclusion, {} exclusion) -> {}",
        records.len(),
        inclusions,
        records.len() - inclusions,
        path.display()
    );
    Ok(())
}

// The export column headers, fixed by the source system.

#[derive(serde::Deserialize)]
struct NoteCsvRow {
    #[serde(rename = "Pseudoniem")]
    pseudonym: String,
    authored: String,
    section_text: String,
}

#[derive(serde::Deserialize)]
struct MetadataCsvRow {
    #[serde(rename = "Pseudoniem")]
    pseudonym: String,
    start_date: String,
    icd10_code: String,
    specialism: String,
    #[serde(rename = "HIV_indicator_HIVteam")]
    decision_flag: u8,
}

#[derive(serde::Deserialize)]
struct MedicationCsvRow {
    #[serde(rename = "Pseudoniem")]
    pseudonym: String,
    #[serde(rename = "code5_ATC_code")]
    atc_code: String,
    code_text: String,
}

#[derive(serde::Deserialize)]
struct VirologyCsvRow {
    #[serde(rename = "Pseudoniem")]
    pseudonym: String,
    hix_code: String,
    #[serde(rename = "valueString")]
    value_string: String,
}

fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let text = fs::read_to_string(path)
        .map_err(|e| stage("ingest", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for (i, row) in rdr.deserialize::<T>().enumerate() {
        rows.push(row.map_err(|e| {
            stage("ingest", format!("{} row {}: {e}", path.display(), i + 2))
        })?);
    }
    Ok(rows)
}

pub struct IngestPaths<'a> {
    pub notes: &'a Path,
    pub metadata: &'a Path,
    pub medication: &'a Path,
    pub virology: &'a Path,
}

pub fn cmd_ingest(cfg: &PipelineConfig, paths: &IngestPaths) -> Result<(), StageError> {
    let note_rows: Vec<NoteCsvRow> = read_csv_rows(paths.notes)?;
    let meta_rows: Vec<MetadataCsvRow> = read_csv_rows(paths.metadata)?;
    let med_rows: Vec<MedicationCsvRow> = read_csv_rows(paths.medication)?;
    let vir_rows: Vec<VirologyCsvRow> = read_csv_rows(paths.virology)?;

    let notes: Vec<RawNoteEntry> = note_rows
        .into_iter()
        .map(|r| RawNoteEntry {
            pseudonym: r.pseudonym,
            authored: r.authored,
            section_text: clean_text(&r.section_text),
        })
        .collect();
    let metadata: Vec<RawMetadataEntry> = meta_rows
        .into_iter()
        .map(|r| RawMetadataEntry {
            pseudonym: r.pseudonym,
            start_date: r.start_date,
            icd10_code: r.icd10_code,
            specialism: r.specialism,
            decision_flag: r.decision_flag,
        })
        .collect();
    let mut dropped_atc = 0usize;
    let meds: Vec<MedicationEntry> = med_rows
        .into_iter()
        .filter_map(|r| {
            if corpus::is_valid_atc(&r.atc_code) {
                Some(MedicationEntry {
                    pseudonym: r.pseudonym,
                    atc_code: r.atc_code,
                    code_text: clean_text(&r.code_text),
                })
            } else {
                dropped_atc += 1;
                None
            }
        })
        .collect();
    let vir: Vec<VirologyEntry> = vir_rows
        .into_iter()
        .map(|r| VirologyEntry {
            pseudonym: r.pseudonym,
            hix_code: r.hix_code,
            value_string: clean_text(&r.value_string),
        })
        .collect();

    let report =
        corpus::build_records(&notes, &metadata, &meds, &vir).map_err(|e| stage("ingest", e))?;

    // external basis: the digest covers the export bytes, which no config
    // can reproduce
    let raw: Vec<Vec<u8>> = [paths.notes, paths.metadata, paths.medication, paths.virology]
        .iter()
        .map(|p| fs::read(p).map_err(|e| stage("ingest", format!("{}: {e}", p.display()))))
        .collect::<Result<_, _>>()?;
    let raw_refs: Vec<&[u8]> = raw.iter().map(|b| b.as_slice()).collect();
    let digest = config::digest_records_ingest(&raw_refs);

    let path = cfg.records_path();
    ensure_parent(&path, "ingest")?;
    artifacts::write_jsonl(&path, &report.records).map_err(|e| stage("ingest", e))?;
    artifacts::write_meta(&path, &digest, DigestBasis::External).map_err(|e| stage("ingest", e))?;

    if report.metadata_without_notes > 0 {
        eprintln!(
            "warning: {} metadata rows had no note text and were skipped",
            report.metadata_without_notes
        );
    }
    if dropped_atc > 0 {
        eprintln!("warning: {dropped_atc} medication rows with malformed ATC codes dropped");
    }
    println!(
        "ingest: {} records ({} notes without metadata ignored) -> {}",
        report.records.len(),
        report.notes_without_metadata,
        path.display()
    );
    Ok(())
}

pub fn cmd_split(cfg: &PipelineConfig) -> Result<(), StageError> {
    let records_digest = verified_records(cfg)?;
    let records: Vec<PatientRecord> =
        artifacts::read_jsonl(&cfg.records_path()).map_err(|e| stage("split", e))?;

    let split = corpus::stratified_split(&records, cfg.split.fraction, cfg.seed)
        .map_err(|e| stage("split", e))?;
    let balanced_train = if cfg.split.balance {
        corpus::downsample_balanced(&split.train, cfg.seed).map_err(|e| stage("split", e))?
    } else {
        split.train.clone()
    };

    let manifest = SplitManifest {
        seed: cfg.seed,
        fraction: cfg.split.fraction,
        test_pseudonyms: split.test.iter().map(|r| r.pseudonym.clone()).collect(),
        balanced_train_pseudonyms: balanced_train.iter().map(|r| r.pseudonym.clone()).collect(),
    };

    let path = cfg.split_path();
    ensure_parent(&path, "split")?;
    artifacts::write_json(&path, &manifest).map_err(|e| stage("split", e))?;
    let digest = config::digest_split(&records_digest, cfg.seed, &cfg.split);
    artifacts::write_meta(&path, &digest, DigestBasis::Config).map_err(|e| stage("split", e))?;
    println!(
        "split: {} train ({} after balancing), {} test -> {}",
        split.train.len(),
        manifest.balanced_train_pseudonyms.len(),
        manifest.test_pseudonyms.len(),
        path.display()
    );
    Ok(())
}

/// Records the run stage will prompt, honoring the configured subset.
fn select_records(cfg: &PipelineConfig) -> Result<Vec<PatientRecord>, StageError> {
    let records: Vec<PatientRecord> =
        artifacts::read_jsonl(&cfg.records_path()).map_err(|e| stage("run", e))?;
    if cfg.subset == Subset::All {
        return Ok(records);
    }
    let manifest: SplitManifest =
        artifacts::read_json(&cfg.split_path()).map_err(|e| stage("run", e))?;
    let wanted: std::collections::BTreeSet<&str> = match cfg.subset {
        Subset::Test => manifest.test_pseudonyms.iter().map(|s| s.as_str()).collect(),
        Subset::Train => {
            manifest.balanced_train_pseudonyms.iter().map(|s| s.as_str()).collect()
        }
        Subset::All => unreachable!(),
    };
    Ok(records
        .into_iter()
        .filter(|r| wanted.contains(r.pseudonym.as_str()))
        .collect())
}

pub fn cmd_run(cfg: &PipelineConfig, prompt: PromptId) -> Result<(), StageError> {
    let parent = runs_parent(cfg)?;
    let records = select_records(cfg)?;
    if records.is_empty() {
        return Err(stage("run", "selected subset contains no records"));
    }

    let template = PromptTemplate::builtin(prompt);
    let mut prompted = Vec::with_capacity(records.len());
    for r in &records {
        let text = prompts::build_prompt(&template, &r.text)
            .map_err(|e| stage("run", format!("record {}: {e}", r.pseudonym)))?;
        prompted.push(PromptedRecord { pseudonym: r.pseudonym.clone(), prompt: text });
    }

    let backend = match cfg.backend {
        BackendKind::InProcess => Backend::InProcess(
            MockModel::new(cfg.mock.clone(), RuleSet::builtin())
                .map_err(|e| StageError::Config(config::ConfigError::Invalid(e.to_string())))?,
        ),
        BackendKind::Http => Backend::http(&cfg.server, cfg.inference.timeout_ms),
    };
    backend
        .health_check()
        .map_err(|e| StageError::Unreachable(e.to_string()))?;

    let runs = client::collect_runs(&backend, &cfg.inference, &prompted);
    for r in &runs {
        r.validate().map_err(|e| stage("run", e))?;
    }
    let failed = runs.iter().filter(|r| r.status == RunStatus::Failed).count();

    let path = cfg.runs_path(prompt);
    ensure_parent(&path, "run")?;
    artifacts::write_jsonl(&path, &runs).map_err(|e| stage("run", e))?;
    let digest = config::digest_runs(&parent, cfg, prompt);
    artifacts::write_meta(&path, &digest, DigestBasis::Config).map_err(|e| stage("run", e))?;

    if failed > 0 {
        eprintln!("warning: {failed} of {} runs failed and were recorded as such", runs.len());
    }
    println!(
        "run: {} records x {} runs ({} prompt) -> {}",
        records.len(),
        cfg.inference.n_runs,
        prompt.as_str(),
        path.display()
    );
    Ok(())
}

/// Consecutive runs for one record, relying on the sorted artifact order.
fn group_runs(runs: &[RunOutput]) -> Vec<(&str, &[RunOutput])> {
    let mut groups = Vec::new();
    let mut start = 0usize;
    for i in 1..=runs.len() {
        if i == runs.len() || runs[i].record != runs[start].record {
            groups.push((runs[start].record.as_str(), &runs[start..i]));
            start = i;
        }
    }
    groups
}

pub fn cmd_aggregate(cfg: &PipelineConfig, prompt: PromptId) -> Result<(), StageError> {
    let runs_digest = verified_runs(cfg, prompt)?;
    let runs: Vec<RunOutput> =
        artifacts::read_jsonl(&cfg.runs_path(prompt)).map_err(|e| stage("aggregate", e))?;
    if runs.is_empty() {
        return Err(stage("aggregate", "runs artifact is empty"));
    }

    let mut rows = Vec::new();
    let mut failsafes = 0usize;
    let mut abstains = 0usize;
    for (record, group) in group_runs(&runs) {
        let per_run = decide::summarize_runs(group);
        for &strategy in &cfg.strategies {
            let agg = decide::aggregate(strategy, group);
            if agg.failsafe_applied {
                failsafes += 1;
            }
            if agg.label == AggregateLabel::Abstain {
                abstains += 1;
            }
            rows.push(DecisionRow {
                record: record.to_string(),
                strategy,
                label: agg.label,
                chosen_run: agg.chosen_run,
                failsafe_applied: agg.failsafe_applied,
                per_run: per_run.clone(),
            });
        }
    }

    let path = cfg.decisions_path(prompt);
    ensure_parent(&path, "aggregate")?;
    artifacts::write_jsonl(&path, &rows).map_err(|e| stage("aggregate", e))?;
    let digest = config::digest_decisions(&runs_digest, &cfg.strategies);
    artifacts::write_meta(&path, &digest, DigestBasis::Config)
        .map_err(|e| stage("aggregate", e))?;
    println!(
        "aggregate: {} decisions ({} failsafe, {} abstained) -> {}",
        rows.len(),
        failsafes,
        abstains,
        path.display()
    );
    Ok(())
}

fn label_map(cfg: &PipelineConfig) -> Result<BTreeMap<String, u8>, StageError> {
    let records: Vec<PatientRecord> =
        artifacts::read_jsonl(&cfg.records_path()).map_err(|e| stage("evaluate", e))?;
    Ok(records.into_iter().map(|r| (r.pseudonym, r.label)).collect())
}

fn strategy_block<'a>(
    rows: &'a [DecisionRow],
    strategy: Strategy,
) -> Vec<&'a DecisionRow> {
    rows.iter().filter(|r| r.strategy == strategy).collect()
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<(), StageError> {
    let labels = label_map(cfg)?;
    let mut metric_rows: Vec<MetricsRow> = Vec::new();
    let mut confusion_rows: Vec<ConfusionRow> = Vec::new();
    let mut decision_digests = Vec::new();

    for prompt in PromptId::ALL {
        let path = cfg.decisions_path(prompt);
        if !path.exists() {
            continue;
        }
        decision_digests.push(verified_decisions(cfg, prompt)?);
        let rows: Vec<DecisionRow> = artifacts::read_jsonl(&path).map_err(|e| stage("evaluate", e))?;

        for &strategy in &cfg.strategies {
            let block = strategy_block(&rows, strategy);
            let mut decisions = Vec::with_capacity(block.len());
            let mut truth = Vec::with_capacity(block.len());
            for row in &block {
                let Some(&label) = labels.get(&row.record) else {
                    return Err(stage(
                        "evaluate",
                        format!("decision for {} has no record", row.record),
                    ));
                };
                decisions.push(decide::AggregateDecision {
                    strategy: row.strategy,
                    label: row.label,
                    chosen_run: row.chosen_run,
                    failsafe_applied: row.failsafe_applied,
                });
                truth.push(label);
            }

            let mut cm = ConfusionMatrix::default();
            let mut abstained = 0u64;
            for (d, &t) in decisions.iter().zip(&truth) {
                match d.label {
                    AggregateLabel::Inclusion => cm.observe(t, corpus::LABEL_INCLUSION),
                    AggregateLabel::Exclusion => cm.observe(t, corpus::LABEL_EXCLUSION),
                    AggregateLabel::Abstain => abstained += 1,
                }
            }
            let grid = cm.rows_exclusion_first();
            for (truth_name, row) in ["exclusion", "inclusion"].iter().zip(grid) {
                confusion_rows.push(ConfusionRow {
                    prompt,
                    strategy,
                    truth: (*truth_name).to_string(),
                    predicted_exclusion: row[0],
                    predicted_inclusion: row[1],
                });
            }

            match evalkit::evaluate_strategy(&decisions, &truth) {
                Ok(m) => metric_rows.push(MetricsRow {
                    prompt,
                    strategy,
                    accuracy: Some(m.accuracy),
                    macro_f1: Some(m.macro_f1),
                    sensitivity: Some(m.sensitivity),
                    specificity: Some(m.specificity),
                    abstained: m.abstained,
                    retained_fraction: Some(m.retained_fraction),
                }),
                Err(e) => {
                    eprintln!("warning: {}/{strategy}: {e}", prompt.as_str());
                    metric_rows.push(MetricsRow {
                        prompt,
                        strategy,
                        accuracy: None,
                        macro_f1: None,
                        sensitivity: None,
                        specificity: None,
                        abstained,
                        retained_fraction: None,
                    });
                }
            }
        }
    }

    if decision_digests.is_empty() {
        return Err(stage("evaluate", "no decisions artifact found; run aggregate first"));
    }

    let digest = config::digest_metrics(&decision_digests);
    let metrics_path = cfg.metrics_path();
    ensure_parent(&metrics_path, "evaluate")?;
    artifacts::write_csv(&metrics_path, &metric_rows).map_err(|e| stage("evaluate", e))?;
    artifacts::write_meta(&metrics_path, &digest, DigestBasis::Config)
        .map_err(|e| stage("evaluate", e))?;
    let confusion_path = cfg.confusion_path();
    artifacts::write_csv(&confusion_path, &confusion_rows).map_err(|e| stage("evaluate", e))?;
    artifacts::write_meta(&confusion_path, &digest, DigestBasis::Config)
        .map_err(|e| stage("evaluate", e))?;
    println!("evaluate: {} metric rows -> {}", metric_rows.len(), metrics_path.display());
    Ok(())
}

pub fn cmd_analyze(cfg: &PipelineConfig, prompt: PromptId) -> Result<(), StageError> {
    let decisions_digest = verified_decisions(cfg, prompt)?;
    let labels = label_map(cfg)?;
    let runs: Vec<RunOutput> =
        artifacts::read_jsonl(&cfg.runs_path(prompt)).map_err(|e| stage("analyze", e))?;
    let rows: Vec<DecisionRow> =
        artifacts::read_jsonl(&cfg.decisions_path(prompt)).map_err(|e| stage("analyze", e))?;

    let verdicts: BTreeMap<&str, &DecisionRow> = rows
        .iter()
        .filter(|r| r.strategy == cfg.analyze.strategy)
        .map(|r| (r.record.as_str(), r))
        .collect();
    if verdicts.is_empty() {
        return Err(stage(
            "analyze",
            format!("no decisions for strategy {}", cfg.analyze.strategy),
        ));
    }

    let mut length_records = Vec::new();
    let mut skipped_abstain = 0usize;
    let mut skipped_failed = 0usize;
    for (record, group) in group_runs(&runs) {
        let ok_runs: Vec<&RunOutput> =
            group.iter().filter(|r| r.status == RunStatus::Ok).collect();
        if ok_runs.is_empty() {
            skipped_failed += 1;
            continue;
        }
        let Some(verdict) = verdicts.get(record) else {
            return Err(stage("analyze", format!("record {record} has runs but no decision")));
        };
        let predicted = match verdict.label {
            AggregateLabel::Inclusion => corpus::LABEL_INCLUSION,
            AggregateLabel::Exclusion => corpus::LABEL_EXCLUSION,
            AggregateLabel::Abstain => {
                skipped_abstain += 1;
                continue;
            }
        };
        let Some(&truth) = labels.get(record) else {
            return Err(stage("analyze", format!("record {record} missing from records")));
        };
        let sum: u64 = ok_runs.iter().map(|r| u64::from(r.completion_token_count)).sum();
        length_records.push(LengthRecord {
            record: record.to_string(),
            input_tokens: u64::from(ok_runs[0].prompt_token_count),
            avg_output_tokens: sum as f64 / ok_runs.len() as f64,
            correct: predicted == truth,
        });
    }

    let stats_cfg = RunLengthConfig {
        input_alternative: cfg.analyze.input_alternative,
        output_alternative: cfg.analyze.output_alternative,
    };
    let report = stats::run_length_analysis(&length_records, stats_cfg)
        .map_err(|e| stage("analyze", e))?;

    let path = cfg.analysis_path(prompt);
    ensure_parent(&path, "analyze")?;
    artifacts::write_json(&path, &report).map_err(|e| stage("analyze", e))?;
    let digest = config::digest_analysis(&decisions_digest, &cfg.analyze);
    artifacts::write_meta(&path, &digest, DigestBasis::Config).map_err(|e| stage("analyze", e))?;
    let scatter = cfg.scatter_path(prompt);
    artifacts::write_csv(&scatter, &report.retained).map_err(|e| stage("analyze", e))?;
    artifacts::write_meta(&scatter, &digest, DigestBasis::Config)
        .map_err(|e| stage("analyze", e))?;

    if skipped_abstain + skipped_failed > 0 {
        eprintln!(
            "warning: skipped {skipped_abstain} abstained and {skipped_failed} failed records"
        );
    }
    println!(
        "analyze: {} records ({} outliers dropped) -> {}",
        report.total_records,
        report.dropped_outliers,
        path.display()
    );
    Ok(())
}

pub fn cmd_mock_serve(cfg: &PipelineConfig) -> Result<(), StageError> {
    let server = MockServer::start(ServeOptions {
        bind: cfg.server.bind.clone(),
        policy: cfg.mock.clone(),
        workers: cfg.server.workers,
        delay_ms: cfg.server.delay_ms,
    })
    .map_err(|e| stage("mock-serve", e))?;
    println!("mock server listening on {}", server.url());
    server.join();
    Ok(())
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

fn outcome_line(name: &str, outcome: &TestOutcome) -> String {
    match outcome {
        TestOutcome::Ok(r) => format!("  {name}: statistic {:.4}, p {:.4}", r.statistic, r.p_value),
        TestOutcome::Error(e) => format!("  {name}: not computed ({e})"),
    }
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<(), StageError> {
    let metrics_path = cfg.metrics_path();
    if !metrics_path.exists() {
        return Err(stage("report", "no metrics.csv; run evaluate first"));
    }
    let rows: Vec<MetricsRow> =
        artifacts::read_csv(&metrics_path).map_err(|e| stage("report", e))?;

    println!("{:<7} {:<17} {:>9} {:>9} {:>12} {:>12} {:>9} {:>9}",
        "prompt", "strategy", "accuracy", "macro_f1", "sensitivity", "specificity", "abstained", "retained");
    for r in &rows {
        println!(
            "{:<7} {:<17} {:>9} {:>9} {:>12} {:>12} {:>9} {:>9}",
            r.prompt.as_str(),
            r.strategy.as_str(),
            fmt_cell(r.accuracy),
            fmt_cell(r.macro_f1),
            fmt_cell(r.sensitivity),
            fmt_cell(r.specificity),
            r.abstained,
            fmt_cell(r.retained_fraction),
        );
    }

    for prompt in PromptId::ALL {
        let path = cfg.analysis_path(prompt);
        if !path.exists() {
            continue;
        }
        let report: stats::RunLengthReport =
            artifacts::read_json(&path).map_err(|e| stage("report", e))?;
        println!();
        println!(
            "{} length analysis: {} records, {} outliers dropped, {} correct / {} incorrect",
            prompt.as_str(),
            report.total_records,
            report.dropped_outliers,
            report.correct_n,
            report.incorrect_n
        );
        println!("{}", outcome_line("input vs output rank correlation", &report.spearman_input_vs_output));
        println!("{}", outcome_line("input length by correctness", &report.input_by_correctness));
        println!("{}", outcome_line("output length by correctness", &report.output_by_correctness));
    }
    Ok(())
}
