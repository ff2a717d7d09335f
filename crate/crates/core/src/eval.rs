//! Context precision, context recall, faithfulness and answer relevancy,
//! computed per record and averaged into a report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{judge_bool, DecodingOptions, Embedder, GenRequest, ModelBackend};
use crate::error::{Error, Result};
use crate::index::cosine_similarity;
use crate::text::split_sentences;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub question: String,
    #[serde(default)]
    pub ground_truth: String,
    /// Filled by the pipeline under test when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl EvalRecord {
    pub fn new(question: impl Into<String>, ground_truth: impl Into<String>) -> Self {
        EvalRecord {
            question: question.into(),
            ground_truth: ground_truth.into(),
            contexts: None,
            answer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub statement: String,
    pub supported: bool,
}

/// Decides relevance and attribution for the metrics.
pub trait Judge {
    /// Whether `context` is useful for answering `question` with `ground_truth`.
    fn context_relevant(&self, question: &str, ground_truth: &str, context: &str) -> Result<bool>;

    /// Whether `statement` can be attributed to `contexts`.
    fn attributable(&self, statement: &str, contexts: &[String]) -> Result<bool>;

    /// Claims made by an answer.
    fn claims(&self, answer: &str) -> Result<Vec<String>> {
        Ok(split_sentences(answer))
    }
}

fn normalize(s: &str) -> String {
    s.trim()
        .trim_end_matches(['.', '!', '?', '。', '！', '？'])
        .trim()
        .to_lowercase()
}

/// Case-insensitive containment. A statement is attributable when some
/// context contains it (terminal punctuation ignored); a context is
/// relevant when it contains at least one ground-truth sentence.
#[derive(Debug, Default, Clone, Copy)]
pub struct SubstringJudge;

impl Judge for SubstringJudge {
    fn context_relevant(&self, _question: &str, ground_truth: &str, context: &str) -> Result<bool> {
        let context = context.to_lowercase();
        Ok(split_sentences(ground_truth)
            .iter()
            .map(|s| normalize(s))
            .any(|s| !s.is_empty() && context.contains(&s)))
    }

    fn attributable(&self, statement: &str, contexts: &[String]) -> Result<bool> {
        let statement = normalize(statement);
        Ok(!statement.is_empty()
            && contexts
                .iter()
                .any(|c| c.to_lowercase().contains(&statement)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgePrompts {
    pub relevant: String,
    pub supported: String,
    pub question: String,
}

impl Default for JudgePrompts {
    fn default() -> Self {
        JudgePrompts {
            relevant: "Decide whether the context is useful for answering the question, given \
                       the reference answer.\n\n### Question\n{question}\n\n### Reference\n\
                       {ground_truth}\n\n### Context\n{context}\n\n\
                       Reply with a JSON object {\"relevant\": true} or {\"relevant\": false}."
                .into(),
            supported: "Decide whether the statement can be inferred from the context.\n\n\
                        ### Context\n{context}\n\n### Statement\n{statement}\n\n\
                        Reply with a JSON object {\"supported\": true} or {\"supported\": false}."
                .into(),
            question: "Write one question that the following answer responds to. Reply with \
                       the question only.\n\n### Answer\n{answer}"
                .into(),
        }
    }
}

/// Judgments by the backend in JSON mode.
pub struct LlmJudge<'a> {
    pub backend: &'a dyn ModelBackend,
    pub prompts: &'a JudgePrompts,
}

impl Judge for LlmJudge<'_> {
    fn context_relevant(&self, question: &str, ground_truth: &str, context: &str) -> Result<bool> {
        let prompt = crate::agent::fill(
            &self.prompts.relevant,
            &[
                ("question", question),
                ("ground_truth", ground_truth),
                ("context", context),
            ],
        );
        Ok(judge_bool(self.backend, &prompt, "relevant")?)
    }

    fn attributable(&self, statement: &str, contexts: &[String]) -> Result<bool> {
        let prompt = crate::agent::fill(
            &self.prompts.supported,
            &[
                ("context", &contexts.join("\n\n")),
                ("statement", statement),
            ],
        );
        Ok(judge_bool(self.backend, &prompt, "supported")?)
    }
}

/// Produces questions that an answer could be responding to.
pub trait QuestionGenerator {
    fn generate(&self, answer: &str, n: usize) -> Result<Vec<String>>;
}

/// Uses the answer text itself as each generated question; deterministic
/// and model-free.
#[derive(Debug, Default, Clone, Copy)]
pub struct AnswerAsQuestion;

impl QuestionGenerator for AnswerAsQuestion {
    fn generate(&self, answer: &str, n: usize) -> Result<Vec<String>> {
        Ok(vec![answer.to_string(); n])
    }
}

/// Asks the backend for one question per call, varying the seed.
pub struct LlmQuestionGenerator<'a> {
    pub backend: &'a dyn ModelBackend,
    pub prompts: &'a JudgePrompts,
}

impl QuestionGenerator for LlmQuestionGenerator<'_> {
    fn generate(&self, answer: &str, n: usize) -> Result<Vec<String>> {
        let prompt = crate::agent::fill(&self.prompts.question, &[("answer", answer)]);
        (0..n)
            .map(|i| {
                let req = GenRequest::text(prompt.clone()).with_options(DecodingOptions {
                    temperature: 0.0,
                    seed: Some(42 + i as u64),
                });
                Ok(self.backend.generate(&req)?.text.trim().to_string())
            })
            .collect()
    }
}

/// Rank-weighted precision: the mean of precision@k over the positions k
/// that hold a relevant context. 0 when none is relevant, `None` when
/// there are no contexts.
pub fn context_precision(contexts: &[String], relevance: &[bool]) -> Result<Option<f64>> {
    if contexts.len() != relevance.len() {
        return Err(Error::InvalidArgument(format!(
            "{} contexts but {} relevance flags",
            contexts.len(),
            relevance.len()
        )));
    }
    Ok(precision_from_flags(relevance))
}

pub fn precision_from_flags(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

/// A metric value plus warnings about judge failures behind it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scored {
    pub value: Option<f64>,
    pub verdicts: Vec<JudgeVerdict>,
    pub warnings: Vec<String>,
}

fn attributed_fraction(statements: Vec<String>, contexts: &[String], judge: &dyn Judge) -> Scored {
    let mut out = Scored::default();
    if statements.is_empty() {
        return out;
    }
    for s in statements {
        let supported = judge.attributable(&s, contexts).unwrap_or_else(|e| {
            out.warnings.push(format!("judge failed on {s:?}: {e}"));
            false
        });
        out.verdicts.push(JudgeVerdict {
            statement: s,
            supported,
        });
    }
    let n = out.verdicts.iter().filter(|v| v.supported).count();
    out.value = Some(n as f64 / out.verdicts.len() as f64);
    out
}

/// Fraction of ground-truth sentences attributable to the contexts.
pub fn context_recall(ground_truth: &str, contexts: &[String], judge: &dyn Judge) -> Scored {
    attributed_fraction(split_sentences(ground_truth), contexts, judge)
}

/// Fraction of the answer's claims supported by the contexts.
pub fn faithfulness(answer: &str, contexts: &[String], judge: &dyn Judge) -> Result<Scored> {
    Ok(attributed_fraction(judge.claims(answer)?, contexts, judge))
}

/// Mean clamped cosine between the question and `n` questions generated
/// from the answer. `None` for an empty answer.
pub fn answer_relevancy(
    question: &str,
    answer: &str,
    generator: &dyn QuestionGenerator,
    embedder: &dyn Embedder,
    n: usize,
) -> Result<Option<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "answer_relevancy needs n >= 1".into(),
        ));
    }
    if answer.trim().is_empty() {
        return Ok(None);
    }
    let generated = generator.generate(answer, n)?;
    if generated.is_empty() {
        return Err(Error::InvalidArgument(
            "question generator returned nothing".into(),
        ));
    }
    let q = embedder.embed(question)?;
    let mut sum = 0.0;
    for g in &generated {
        let score = match embedder.embed(g) {
            Ok(e) => cosine_similarity(&q, &e)?.max(0.0),
            // A blank generated question carries no signal.
            Err(crate::backend::BackendError::EmptyInput) => 0.0,
            Err(e) => return Err(e.into()),
        };
        sum += score;
    }
    Ok(Some(sum / generated.len() as f64))
}

/// Produces contexts and an answer for a question.
pub trait AnswerPipeline {
    fn name(&self) -> &str;
    fn answer(&self, question: &str) -> Result<(Vec<String>, String)>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub index: usize,
    pub question: String,
    pub context_precision: Option<f64>,
    pub context_recall: Option<f64>,
    pub faithfulness: Option<f64>,
    pub answer_relevancy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub context_precision: Option<f64>,
    pub context_recall: Option<f64>,
    pub faithfulness: Option<f64>,
    pub answer_relevancy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NullCounts {
    pub context_precision: usize,
    pub context_recall: usize,
    pub faithfulness: usize,
    pub answer_relevancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pipeline: String,
    pub rows: Vec<MetricRow>,
    pub aggregates: MetricMeans,
    pub null_counts: NullCounts,
    pub failed: usize,
}

type Getter = fn(&MetricRow) -> Option<f64>;

const METRICS: [(&str, Getter); 4] = [
    ("Context precision", |r| r.context_precision),
    ("Context recall", |r| r.context_recall),
    ("Faithfulness", |r| r.faithfulness),
    ("Answer relevancy", |r| r.answer_relevancy),
];

impl MetricReport {
    /// Builds aggregates from rows; failed rows are left out entirely.
    pub fn from_rows(pipeline: impl Into<String>, rows: Vec<MetricRow>) -> Self {
        let ok: Vec<&MetricRow> = rows.iter().filter(|r| r.failed.is_none()).collect();
        let mean = |get: Getter| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let nulls = |get: Getter| ok.iter().filter(|r| get(r).is_none()).count();
        let [p, r, f, a] = METRICS.map(|(_, g)| g);
        MetricReport {
            pipeline: pipeline.into(),
            aggregates: MetricMeans {
                context_precision: mean(p),
                context_recall: mean(r),
                faithfulness: mean(f),
                answer_relevancy: mean(a),
            },
            null_counts: NullCounts {
                context_precision: nulls(p),
                context_recall: nulls(r),
                faithfulness: nulls(f),
                answer_relevancy: nulls(a),
            },
            failed: rows.len() - ok.len(),
            rows,
        }
    }
}

/// Markdown table with one row per metric and one column per report.
pub fn render_markdown(reports: &[MetricReport]) -> String {
    let mut out = String::from("| Metric |");
    for r in reports {
        out.push_str(&format!(" {} |", r.pipeline));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(reports.len()));
    out.push('\n');
    let means = |m: &MetricMeans| {
        [
            m.context_precision,
            m.context_recall,
            m.faithfulness,
            m.answer_relevancy,
        ]
    };
    for (i, (label, _)) in METRICS.iter().enumerate() {
        out.push_str(&format!("| {label} |"));
        for r in reports {
            match means(&r.aggregates)[i] {
                Some(v) => out.push_str(&format!(" {v:.3} |")),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out
}

pub struct EvalSettings<'a> {
    pub judge: &'a dyn Judge,
    pub generator: &'a dyn QuestionGenerator,
    pub embedder: &'a dyn Embedder,
    /// Questions generated per answer for answer relevancy.
    pub n_questions: usize,
}

fn score_record(
    index: usize,
    record: &EvalRecord,
    pipeline: &dyn AnswerPipeline,
    settings: &EvalSettings,
) -> Result<MetricRow> {
    let (contexts, answer) = match (&record.contexts, &record.answer) {
        (Some(c), Some(a)) => (c.clone(), a.clone()),
        (c, a) => {
            let (got_c, got_a) = pipeline.answer(&record.question)?;
            (c.clone().unwrap_or(got_c), a.clone().unwrap_or(got_a))
        }
    };
    let mut row = MetricRow {
        index,
        question: record.question.clone(),
        ..MetricRow::default()
    };
    let flags: Vec<bool> = contexts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            settings
                .judge
                .context_relevant(&record.question, &record.ground_truth, c)
                .unwrap_or_else(|e| {
                    row.warnings
                        .push(format!("relevance judge failed on context {}: {e}", i + 1));
                    false
                })
        })
        .collect();
    row.context_precision = context_precision(&contexts, &flags)?;
    let recall = context_recall(&record.ground_truth, &contexts, settings.judge);
    row.context_recall = recall.value;
    row.warnings.extend(recall.warnings);
    let faith = faithfulness(&answer, &contexts, settings.judge)?;
    row.faithfulness = faith.value;
    row.warnings.extend(faith.warnings);
    row.answer_relevancy = answer_relevancy(
        &record.question,
        &answer,
        settings.generator,
        settings.embedder,
        settings.n_questions,
    )?;
    Ok(row)
}

/// Scores every record, running `pipeline` for records without contexts
/// or an answer. A record whose pipeline run or scoring fails becomes a
/// failed row.
pub fn evaluate_dataset(
    records: &[EvalRecord],
    pipeline: &dyn AnswerPipeline,
    settings: &EvalSettings,
) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            score_record(i, rec, pipeline, settings).unwrap_or_else(|e| {
                log::warn!("record {i} failed: {e}");
                MetricRow {
                    index: i,
                    question: rec.question.clone(),
                    failed: Some(e.to_string()),
                    ..MetricRow::default()
                }
            })
        })
        .collect();
    Ok(MetricReport::from_rows(pipeline.name(), rows))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueTurn {
    question: String,
    #[serde(default)]
    ground_truth: String,
    #[serde(default)]
    contexts: Option<Vec<String>>,
    #[serde(default)]
    answer: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DatasetLine {
    Dialogue { turns: Vec<DialogueTurn> },
    Single(EvalRecord),
}

/// Parses a JSON-lines dataset. A line `{"turns": [...]}` is a dialogue:
/// each turn becomes one record whose question is prefixed by the earlier
/// turns as `User:` / `Assistant:` lines (reference answers stand in for
/// the assistant).
pub fn parse_dataset(text: &str) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(line)
            .map_err(|e| Error::InvalidArgument(format!("dataset line {}: {e}", lineno + 1)))?;
        match parsed {
            DatasetLine::Single(r) => out.push(r),
            DatasetLine::Dialogue { turns } => {
                let mut prior = String::new();
                for t in turns {
                    let question = if prior.is_empty() {
                        t.question.clone()
                    } else {
                        format!("{prior}User: {}", t.question)
                    };
                    prior.push_str(&format!(
                        "User: {}\nAssistant: {}\n",
                        t.question, t.ground_truth
                    ));
                    out.push(EvalRecord {
                        question,
                        ground_truth: t.ground_truth,
                        contexts: t.contexts,
                        answer: t.answer,
                    });
                }
            }
        }
    }
    if let Some(i) = out.iter().position(|r| r.question.trim().is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "dataset record {i} has an empty question"
        )));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_from_flags(&[true; 4]), Some(1.0));
        let p = precision_from_flags(&[true, false, true]).unwrap();
        assert!((p - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(precision_from_flags(&[false, false]), Some(0.0));
        assert_eq!(precision_from_flags(&[]), None);
        assert!(context_precision(&s(&["a"]), &[true, false]).is_err());
    }

    #[test]
    fn substring_judge_rules() {
        let j = SubstringJudge;
        let ctx = s(&["The pump runs at 3 bar"]);
        assert!(j.attributable("the PUMP runs at 3 bar.", &ctx).unwrap());
        assert!(!j.attributable("The pump runs at 4 bar.", &ctx).unwrap());
        assert!(j
            .context_relevant("q", "Unrelated. The pump runs at 3 bar.", &ctx[0])
            .unwrap());
        assert!(!j.context_relevant("q", "", &ctx[0]).unwrap());
    }

    #[test]
    fn recall_nulls_on_empty_ground_truth() {
        assert_eq!(
            context_recall("  ", &s(&["x"]), &SubstringJudge).value,
            None
        );
    }

    #[test]
    fn faithfulness_nulls_on_empty_answer() {
        assert_eq!(
            faithfulness("", &s(&["x"]), &SubstringJudge).unwrap().value,
            None
        );
    }

    #[test]
    fn dialogue_lines_are_flattened() {
        let text = r#"{"question": "What is ABS?", "ground_truth": "Anti-lock braking."}

{"turns": [{"question": "Who founded Bosch?", "ground_truth": "Robert Bosch."}, {"question": "When was he born?", "ground_truth": "1861."}]}"#;
        let recs = parse_dataset(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].question, "Who founded Bosch?");
        assert_eq!(
            recs[2].question,
            "User: Who founded Bosch?\nAssistant: Robert Bosch.\nUser: When was he born?"
        );
        assert!(parse_dataset("{\"q\": 1}")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    #[test]
    fn markdown_layout() {
        let rows = vec![MetricRow {
            context_precision: Some(0.5),
            ..MetricRow::default()
        }];
        let md = render_markdown(&[MetricReport::from_rows("naive", rows)]);
        assert_eq!(
            md,
            "| Metric | naive |\n|---|---|\n| Context precision | 0.500 |\n\
             | Context recall | n/a |\n| Faithfulness | n/a |\n| Answer relevancy | n/a |\n"
        );
    }
}
