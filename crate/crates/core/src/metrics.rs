//! Slot chunk F1, multi-intent accuracy / macro F1 and semantic-frame accuracy.

use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("malformed tag `{tag}` at position {position}")]
    MalformedTag { tag: String, position: usize },
    #[error("utterance {utterance}: gold has {gold} tags, prediction has {pred}")]
    LengthMismatch {
        utterance: usize,
        gold: usize,
        pred: usize,
    },
    #[error("gold has {gold} utterances, prediction has {pred}")]
    CountMismatch { gold: usize, pred: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// A labelled span with inclusive bounds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChunkScheme {
    /// An `I-x` that does not continue a chunk of `x` opens a new chunk.
    #[default]
    Lenient,
    /// Orphan `I-x` tags belong to no chunk.
    Strict,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str, position: usize) -> Result<Tag<'_>> {
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    match tag.split_once('-') {
        Some(("B", label)) if !label.is_empty() => Ok(Tag::Begin(label)),
        Some(("I", label)) if !label.is_empty() => Ok(Tag::Inside(label)),
        _ => Err(MetricsError::MalformedTag {
            tag: tag.to_string(),
            position,
        }),
    }
}

pub fn extract_chunks<S: AsRef<str>>(tags: &[S], scheme: ChunkScheme) -> Result<Vec<ChunkSpan>> {
    let mut chunks = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = parse_tag(tag.as_ref(), i)?;
        let continues = matches!((&tag, open), (Tag::Inside(l), Some((o, _))) if *l == o);
        if continues {
            continue;
        }
        if let Some((label, start)) = open.take() {
            chunks.push(ChunkSpan {
                label: label.to_string(),
                start,
                end: i - 1,
            });
        }
        match tag {
            Tag::Begin(l) => open = Some((l, i)),
            Tag::Inside(l) if scheme == ChunkScheme::Lenient => open = Some((l, i)),
            _ => {}
        }
    }
    if let Some((label, start)) = open {
        chunks.push(ChunkSpan {
            label: label.to_string(),
            start,
            end: tags.len() - 1,
        });
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub correct_chunks: usize,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged exact chunk match over the corpus (lenient chunking).
pub fn slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SlotScores> {
    slot_f1_with(gold, pred, ChunkScheme::Lenient)
}

pub fn slot_f1_with<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>], scheme: ChunkScheme) -> Result<SlotScores> {
    if gold.len() != pred.len() {
        return Err(MetricsError::CountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut s = SlotScores::default();
    for (u, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::LengthMismatch {
                utterance: u,
                gold: g.len(),
                pred: p.len(),
            });
        }
        let gc: BTreeSet<ChunkSpan> = extract_chunks(g, scheme)?.into_iter().collect();
        let pc: BTreeSet<ChunkSpan> = extract_chunks(p, scheme)?.into_iter().collect();
        s.gold_chunks += gc.len();
        s.predicted_chunks += pc.len();
        s.correct_chunks += gc.intersection(&pc).count();
    }
    s.precision = ratio(s.correct_chunks, s.predicted_chunks);
    s.recall = ratio(s.correct_chunks, s.gold_chunks);
    s.f1 = f1_of(s.precision, s.recall);
    Ok(s)
}

/// Exact-set accuracy and macro F1 over `num_labels` intent ids.
pub fn intent_metrics(gold: &[BTreeSet<usize>], pred: &[BTreeSet<usize>], num_labels: usize) -> Result<(f64, f64)> {
    if gold.len() != pred.len() {
        return Err(MetricsError::CountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let exact = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let mut f1_sum = 0.0;
    for label in 0..num_labels {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(pred) {
            match (g.contains(&label), p.contains(&label)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        f1_sum += f1_of(ratio(tp, tp + fp), ratio(tp, tp + fn_));
    }
    let macro_f1 = if num_labels == 0 {
        0.0
    } else {
        f1_sum / num_labels as f64
    };
    Ok((ratio(exact, gold.len()), macro_f1))
}

/// An utterance's intent set and slot tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticFrame {
    pub intents: BTreeSet<String>,
    pub slots: Vec<String>,
}

impl SemanticFrame {
    /// `intent1#intent2<TAB>tag1 tag2 ...`
    pub fn to_line(&self) -> String {
        let intents: Vec<&str> = self.intents.iter().map(String::as_str).collect();
        format!("{}\t{}", intents.join("#"), self.slots.join(" "))
    }
}

pub fn overall_accuracy(gold: &[SemanticFrame], pred: &[SemanticFrame]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(MetricsError::CountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(ratio(gold.iter().zip(pred).filter(|(g, p)| g == p).count(), gold.len()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub slot_f1: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    /// Fraction of utterances whose whole tag sequence is right.
    pub slot_sentence_accuracy: f64,
    pub intent_accuracy: f64,
    pub intent_macro_f1: f64,
    pub overall_accuracy: f64,
    pub utterances: usize,
    pub gold_chunks: usize,
    pub predicted_chunks: usize,
    pub correct_chunks: usize,
}

impl MetricsReport {
    /// Scores predicted frames against gold; `intent_labels` defines the macro-F1 label set.
    pub fn compute(gold: &[SemanticFrame], pred: &[SemanticFrame], intent_labels: &[String]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(MetricsError::CountMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        let gs: Vec<Vec<&str>> = gold.iter().map(|f| f.slots.iter().map(String::as_str).collect()).collect();
        let ps: Vec<Vec<&str>> = pred.iter().map(|f| f.slots.iter().map(String::as_str).collect()).collect();
        let slots = slot_f1(&gs, &ps)?;

        let label_id = |l: &String| intent_labels.iter().position(|x| x == l).unwrap_or(intent_labels.len());
        let to_ids = |f: &SemanticFrame| -> BTreeSet<usize> { f.intents.iter().map(label_id).collect() };
        let gi: Vec<BTreeSet<usize>> = gold.iter().map(to_ids).collect();
        let pi: Vec<BTreeSet<usize>> = pred.iter().map(to_ids).collect();
        let (intent_accuracy, intent_macro_f1) = intent_metrics(&gi, &pi, intent_labels.len())?;
        let sentence = gold.iter().zip(pred).filter(|(g, p)| g.slots == p.slots).count();

        Ok(Self {
            slot_f1: slots.f1,
            slot_precision: slots.precision,
            slot_recall: slots.recall,
            slot_sentence_accuracy: ratio(sentence, gold.len()),
            intent_accuracy,
            intent_macro_f1,
            overall_accuracy: overall_accuracy(gold, pred)?,
            utterances: gold.len(),
            gold_chunks: slots.gold_chunks,
            predicted_chunks: slots.predicted_chunks,
            correct_chunks: slots.correct_chunks,
        })
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("slot_f1", self.slot_f1),
            ("slot_precision", self.slot_precision),
            ("slot_recall", self.slot_recall),
            ("slot_sentence_accuracy", self.slot_sentence_accuracy),
            ("intent_accuracy", self.intent_accuracy),
            ("intent_macro_f1", self.intent_macro_f1),
            ("overall_accuracy", self.overall_accuracy),
        ]
    }

    /// One `key=value` line per metric, four decimals.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.named() {
            let _ = writeln!(out, "{k}={v:.4}");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8}", "metric", "value");
        let _ = writeln!(out, "{}", "-".repeat(33));
        for (k, v) in self.named() {
            let _ = writeln!(out, "{k:<24} {v:>8.4}");
        }
        let _ = writeln!(out, "{}", "-".repeat(33));
        let _ = writeln!(
            out,
            "utterances={} gold_chunks={} predicted_chunks={} correct_chunks={}",
            self.utterances, self.gold_chunks, self.predicted_chunks, self.correct_chunks
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(label: &str, start: usize, end: usize) -> ChunkSpan {
        ChunkSpan {
            label: label.into(),
            start,
            end,
        }
    }

    #[test]
    fn chunks_basic() {
        assert!(extract_chunks(&["O", "O", "O"], ChunkScheme::Lenient).unwrap().is_empty());
        assert_eq!(
            extract_chunks(&["B-a", "I-a", "O", "B-b"], ChunkScheme::Lenient).unwrap(),
            vec![span("a", 0, 1), span("b", 3, 3)]
        );
    }

    #[test]
    fn lenient_vs_strict_orphans() {
        let tags = ["O", "I-a", "I-a", "I-b", "B-a", "I-a"];
        assert_eq!(
            extract_chunks(&tags, ChunkScheme::Lenient).unwrap(),
            vec![span("a", 1, 2), span("b", 3, 3), span("a", 4, 5)]
        );
        assert_eq!(
            extract_chunks(&tags, ChunkScheme::Strict).unwrap(),
            vec![span("a", 4, 5)]
        );
    }

    #[test]
    fn malformed_tag() {
        assert_eq!(
            extract_chunks(&["O", "X-a"], ChunkScheme::Lenient),
            Err(MetricsError::MalformedTag {
                tag: "X-a".into(),
                position: 1
            })
        );
        assert!(extract_chunks(&["B-"], ChunkScheme::Lenient).is_err());
    }

    #[test]
    fn slot_f1_cases() {
        let gold = vec![vec!["B-a", "O", "B-b"]];
        assert_eq!(slot_f1(&gold, &gold).unwrap().f1, 1.0);
        let none = vec![vec!["O", "O", "O"]];
        assert_eq!(slot_f1(&gold, &none).unwrap().f1, 0.0);

        // 1 correct of 2 predicted, 4 gold
        let gold = vec![vec!["B-a", "B-b", "B-c", "B-d"]];
        let pred = vec![vec!["B-a", "O", "O", "B-x"]];
        let s = slot_f1(&gold, &pred).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 0.25));
        assert!((s.f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn slot_f1_length_mismatch_names_utterance() {
        let gold = vec![vec!["O"], vec!["O", "O"]];
        let pred = vec![vec!["O"], vec!["O"]];
        assert_eq!(
            slot_f1(&gold, &pred),
            Err(MetricsError::LengthMismatch {
                utterance: 1,
                gold: 2,
                pred: 1
            })
        );
    }

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn intent_metric_cases() {
        let g = vec![set(&[0]), set(&[0, 1])];
        assert_eq!(intent_metrics(&g, &g, 2).unwrap().0, 1.0);
        let p = vec![set(&[0]), set(&[0])];
        let (acc, _) = intent_metrics(&g, &p, 2).unwrap();
        assert_eq!(acc, 0.5);
        // label 0 always right, label 1 never predicted
        let (_, macro_f1) = intent_metrics(&g, &p, 2).unwrap();
        assert_eq!(macro_f1, 0.5);
    }

    fn frame(intents: &[&str], slots: &[&str]) -> SemanticFrame {
        SemanticFrame {
            intents: intents.iter().map(|s| s.to_string()).collect(),
            slots: slots.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn overall_accuracy_cases() {
        let g = vec![frame(&["A"], &["O", "B-x"]), frame(&["A", "B"], &["O"])];
        assert_eq!(overall_accuracy(&g, &g).unwrap(), 1.0);
        let p = vec![frame(&["A"], &["O", "B-x"]), frame(&["A"], &["O"])];
        assert_eq!(overall_accuracy(&g, &p).unwrap(), 0.5);
    }

    #[test]
    fn report_formats() {
        let g = vec![frame(&["A"], &["O", "B-x"]), frame(&["A", "B"], &["O"])];
        let p = vec![frame(&["A"], &["O", "B-x"]), frame(&["B"], &["O"])];
        let labels = vec!["A".to_string(), "B".to_string()];
        let r = MetricsReport::compute(&g, &p, &labels).unwrap();
        assert_eq!(r.overall_accuracy, 0.5);
        assert!(r.overall_accuracy <= r.intent_accuracy.min(r.slot_sentence_accuracy));
        let kv = r.to_key_values();
        assert_eq!(kv.lines().count(), 7);
        assert!(kv.contains("overall_accuracy=0.5000"));
        assert!(r.to_table().contains("intent_macro_f1"));
        assert_eq!(p[1].to_line(), "B\tO");
    }
}
