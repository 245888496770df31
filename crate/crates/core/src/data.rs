//! Multi-intent BIO corpora: parsing, vocabularies, batching and a synthetic generator.
//!
//! File format: blank-line separated blocks. Each block has one `token tag`
//! line per token, followed by a final line holding the intent labels joined
//! by `#`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("block {block}, line {line}: {msg}")]
    Format {
        block: usize,
        line: usize,
        msg: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("example {example}: unknown {kind} label `{label}`")]
    UnknownLabel {
        kind: &'static str,
        label: String,
        example: usize,
    },
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("invalid synthetic corpus settings: {0}")]
    Synth(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intents: BTreeSet<String>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when every `I-x` continues a chunk of label `x`.
    pub fn is_bio_well_formed(&self) -> bool {
        let mut prev: Option<&str> = None;
        for tag in &self.slots {
            if let Some(label) = tag.strip_prefix("I-") {
                if prev != Some(label) {
                    return false;
                }
                prev = Some(label);
            } else if let Some(label) = tag.strip_prefix("B-") {
                prev = Some(label);
            } else {
                prev = None;
            }
        }
        true
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Example>> {
    let mut examples = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    for (no, line) in lines.chain(std::iter::once((0, ""))) {
        if line.trim().is_empty() {
            if !block.is_empty() {
                examples.push(parse_block(examples.len(), &block)?);
                block.clear();
            }
        } else {
            block.push((no, line));
        }
    }
    Ok(examples)
}

fn parse_block(index: usize, lines: &[(usize, &str)]) -> Result<Example> {
    let err = |line: usize, msg: String| DataError::Format {
        block: index,
        line,
        msg,
    };
    if lines.len() < 2 {
        return Err(err(
            lines[0].0,
            "block needs at least one token line and an intent line".into(),
        ));
    }
    let (intent_no, intent_line) = lines[lines.len() - 1];
    let mut tokens = Vec::with_capacity(lines.len() - 1);
    let mut slots = Vec::with_capacity(lines.len() - 1);
    for &(no, line) in &lines[..lines.len() - 1] {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(
                no,
                format!("expected `token tag`, found {} fields", fields.len()),
            ));
        }
        tokens.push(fields[0].to_string());
        slots.push(fields[1].to_string());
    }
    let intent_line = intent_line.trim();
    let mut intents = BTreeSet::new();
    for label in intent_line.split('#') {
        if label.is_empty() {
            return Err(err(intent_no, "empty intent label".into()));
        }
        intents.insert(label.to_string());
    }
    Ok(Example {
        tokens,
        slots,
        intents,
    })
}

/// Inverse of [`parse_corpus`] for well-formed examples.
pub fn serialize_corpus(examples: &[Example]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in ex.tokens.iter().zip(&ex.slots) {
            let _ = writeln!(out, "{tok} {tag}");
        }
        let intents: Vec<&str> = ex.intents.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", intents.join("#"));
    }
    out
}

/// Bidirectional token/id map. Word vocabularies reserve `0 = <pad>` and `1 = <unk>`;
/// label vocabularies have no reserved entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    reserved: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from the given entries in order (reserved entries excluded).
    pub fn from_entries<I, S>(entries: I, reserved: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = if reserved {
            vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
        } else {
            Vec::new()
        };
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for e in entries {
            let e = e.into();
            if !index.contains_key(&e) {
                index.insert(e.clone(), tokens.len());
                tokens.push(e);
            }
        }
        Self {
            tokens,
            index,
            reserved,
        }
    }

    /// Word vocabulary ordered by descending frequency, ties broken lexicographically.
    pub fn words<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_entries(entries.into_iter().map(|(t, _)| t), true)
    }

    /// Label vocabulary in lexicographic order.
    pub fn labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        Self::from_entries(set, false)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_reserved(&self) -> bool {
        self.reserved
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id for a word, falling back to `<unk>`.
    pub fn word_id(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Entries excluding the reserved ones, in id order.
    pub fn entries(&self) -> &[String] {
        if self.reserved {
            &self.tokens[2..]
        } else {
            &self.tokens
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub slots: Vocabulary,
    pub intents: Vocabulary,
}

pub fn build_vocabularies(corpus: &[Example]) -> Result<Vocabularies> {
    if corpus.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok(Vocabularies {
        words: Vocabulary::words(corpus.iter().flat_map(|e| e.tokens.iter().map(String::as_str))),
        slots: Vocabulary::labels(corpus.iter().flat_map(|e| e.slots.iter().map(String::as_str))),
        intents: Vocabulary::labels(corpus.iter().flat_map(|e| e.intents.iter().map(String::as_str))),
    })
}

/// An example mapped to ids. `intents` is sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub tokens: Vec<usize>,
    pub slots: Vec<usize>,
    pub intents: Vec<usize>,
}

impl Vocabularies {
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.words.word_id(t.as_ref())).collect()
    }

    /// Unknown words become `<unk>`; unknown labels are errors.
    pub fn encode(&self, example: &Example, index: usize) -> Result<EncodedExample> {
        let slots = example
            .slots
            .iter()
            .map(|s| {
                self.slots.id(s).ok_or_else(|| DataError::UnknownLabel {
                    kind: "slot",
                    label: s.clone(),
                    example: index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut intents = example
            .intents
            .iter()
            .map(|s| {
                self.intents.id(s).ok_or_else(|| DataError::UnknownLabel {
                    kind: "intent",
                    label: s.clone(),
                    example: index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        intents.sort_unstable();
        Ok(EncodedExample {
            tokens: self.encode_tokens(&example.tokens),
            slots,
            intents,
        })
    }

    pub fn encode_all(&self, corpus: &[Example]) -> Result<Vec<EncodedExample>> {
        corpus.iter().enumerate().map(|(i, e)| self.encode(e, i)).collect()
    }
}

/// Padded batch. Padded token and slot positions hold [`PAD_ID`] and are
/// excluded through `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub token_ids: Vec<Vec<usize>>,
    pub slot_ids: Vec<Vec<usize>>,
    pub intents: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
    /// Position of each row in the source corpus.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    /// Unpadded token ids, slot ids and multi-hot intents of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[usize], &[f64]) {
        let n = self.lengths[i];
        (&self.token_ids[i][..n], &self.slot_ids[i][..n], &self.intents[i])
    }

    fn from_examples(examples: &[(usize, &EncodedExample)], num_intents: usize) -> Self {
        let max_len = examples.iter().map(|(_, e)| e.tokens.len()).max().unwrap_or(0);
        let mut b = Batch {
            token_ids: Vec::with_capacity(examples.len()),
            slot_ids: Vec::with_capacity(examples.len()),
            intents: Vec::with_capacity(examples.len()),
            lengths: Vec::with_capacity(examples.len()),
            mask: Vec::with_capacity(examples.len()),
            indices: Vec::with_capacity(examples.len()),
        };
        for &(idx, e) in examples {
            let n = e.tokens.len();
            let mut toks = e.tokens.clone();
            toks.resize(max_len, PAD_ID);
            let mut slots = e.slots.clone();
            slots.resize(max_len, PAD_ID);
            let mut hot = vec![0.0; num_intents];
            for &i in &e.intents {
                hot[i] = 1.0;
            }
            b.token_ids.push(toks);
            b.slot_ids.push(slots);
            b.intents.push(hot);
            b.lengths.push(n);
            b.mask.push((0..max_len).map(|t| t < n).collect());
            b.indices.push(idx);
        }
        b
    }
}

/// Batches of already encoded examples; shuffling is deterministic in `seed`.
pub fn batch_encoded(
    encoded: &[EncodedExample],
    num_intents: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(DataError::BatchSize);
    }
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<(usize, &EncodedExample)> = chunk.iter().map(|&i| (i, &encoded[i])).collect();
            Batch::from_examples(&rows, num_intents)
        })
        .collect())
}

pub fn batchify(
    corpus: &[Example],
    vocabs: &Vocabularies,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    let encoded = vocabs.encode_all(corpus)?;
    batch_encoded(&encoded, vocabs.intents.len(), batch_size, seed, shuffle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_examples: usize,
    pub n_intents: usize,
    pub n_slot_types: usize,
    /// Fractions of utterances carrying 1, 2 and 3 intents.
    pub intent_ratio: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_examples: 80,
            n_intents: 5,
            n_slot_types: 6,
            intent_ratio: [0.3, 0.5, 0.2],
        }
    }
}

const VERBS: [&str; 12] = [
    "play", "book", "find", "show", "add", "rate", "check", "get", "cancel", "list", "send", "track",
];
const VALUES_PER_SLOT: usize = 4;

fn intent_name(i: usize) -> String {
    let verb = VERBS[i % VERBS.len()];
    let mut name: String = verb[..1].to_uppercase() + &verb[1..] + "Thing";
    if i >= VERBS.len() {
        name.push_str(&(i / VERBS.len()).to_string());
    }
    name
}

fn verb_token(i: usize) -> String {
    let verb = VERBS[i % VERBS.len()];
    if i >= VERBS.len() {
        format!("{verb}{}", i / VERBS.len())
    } else {
        verb.to_string()
    }
}

/// Exact per-class counts for `n` items by largest remainder.
fn apportion(ratio: &[f64; 3], n: usize) -> [usize; 3] {
    let raw: Vec<f64> = ratio.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Generates a learnable multi-intent corpus.
///
/// Intent `i` always emits `<verb_i> the <value chunk>`, where the value chunk
/// is one or two tokens tagged `B-/I-slot{i mod n_slot_types}`. Utterances with
/// several intents join their templates with `and`.
pub fn synth_examples(cfg: &SynthConfig) -> Result<Vec<Example>> {
    let sum: f64 = cfg.intent_ratio.iter().sum();
    if cfg.intent_ratio.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::Synth(format!(
            "intent ratio {:?} must be non-negative and sum to 1",
            cfg.intent_ratio
        )));
    }
    let max_k = (0..3).rev().find(|&k| cfg.intent_ratio[k] > 0.0).unwrap_or(0) + 1;
    if cfg.n_intents < max_k {
        return Err(DataError::Synth(format!(
            "{max_k} intents per utterance need at least {max_k} intent labels"
        )));
    }
    if cfg.n_slot_types == 0 {
        return Err(DataError::Synth("need at least one slot type".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = apportion(&cfg.intent_ratio, cfg.n_examples);
    let mut sizes: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k + 1, c))
        .collect();
    sizes.shuffle(&mut rng);

    let intent_ids: Vec<usize> = (0..cfg.n_intents).collect();
    let mut examples = Vec::with_capacity(cfg.n_examples);
    for k in sizes {
        let chosen: Vec<usize> = intent_ids.choose_multiple(&mut rng, k).copied().collect();
        let mut tokens = Vec::new();
        let mut slots = Vec::new();
        if rng.gen_bool(0.3) {
            tokens.push("please".to_string());
            slots.push("O".to_string());
        }
        for (pos, &intent) in chosen.iter().enumerate() {
            if pos > 0 {
                tokens.push("and".to_string());
                slots.push("O".to_string());
            }
            let slot = intent % cfg.n_slot_types;
            tokens.push(verb_token(intent));
            slots.push("O".to_string());
            tokens.push("the".to_string());
            slots.push("O".to_string());
            let chunk_len = rng.gen_range(1..=2);
            for c in 0..chunk_len {
                tokens.push(format!("v{slot}x{}", rng.gen_range(0..VALUES_PER_SLOT)));
                let prefix = if c == 0 { "B" } else { "I" };
                slots.push(format!("{prefix}-slot{slot}"));
            }
        }
        examples.push(Example {
            tokens,
            slots,
            intents: chosen.iter().map(|&i| intent_name(i)).collect(),
        });
    }
    Ok(examples)
}

/// [`synth_examples`] serialized in the corpus file format.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<String> {
    Ok(serialize_corpus(&synth_examples(cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_block() {
        let ex = parse_corpus("listen O\nto O\nrock B-music_item\nPlayMusic").unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].tokens, ["listen", "to", "rock"]);
        assert_eq!(ex[0].slots, ["O", "O", "B-music_item"]);
        assert_eq!(ex[0].intents.iter().collect::<Vec<_>>(), ["PlayMusic"]);
    }

    #[test]
    fn parses_multi_intent_line() {
        let ex = parse_corpus("hi O\nPlayMusic#BookRestaurant\n\nyo O\nA\n").unwrap();
        assert_eq!(ex[0].intents.len(), 2);
        assert_eq!(ex.len(), 2);
    }

    #[test]
    fn format_errors_report_block_and_line() {
        let err = parse_corpus("a O\nX\n\nlonely\n").unwrap_err();
        assert_eq!(
            err,
            DataError::Format {
                block: 1,
                line: 4,
                msg: "block needs at least one token line and an intent line".into()
            }
        );
        let err = parse_corpus("a O extra\nX\n").unwrap_err();
        assert!(matches!(err, DataError::Format { block: 0, line: 1, .. }));
        let err = parse_corpus("a O\nX\n\nb O\nY##Z\n").unwrap_err();
        assert!(matches!(err, DataError::Format { block: 1, line: 5, .. }));
    }

    #[test]
    fn vocab_single_example() {
        let ex = parse_corpus("listen O\nto O\nrock B-music_item\nPlayMusic").unwrap();
        let v = build_vocabularies(&ex).unwrap();
        assert_eq!(v.intents.len(), 1);
        assert_eq!(v.slots.len(), 2);
        assert_eq!(v.words.len(), 5);
        assert_eq!(v.words.word_id("unseen"), UNK_ID);
        assert_eq!(v.words.token(PAD_ID), PAD_TOKEN);
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = parse_corpus("x O\ny O\nA\n\ny O\nx O\nB\n").unwrap();
        let mut b = a.clone();
        b.reverse();
        assert_eq!(
            build_vocabularies(&a).unwrap().words,
            build_vocabularies(&b).unwrap().words
        );
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(build_vocabularies(&[]), Err(DataError::EmptyCorpus));
    }

    fn corpus(n: usize) -> Vec<Example> {
        synth_examples(&SynthConfig {
            n_examples: n,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn batch_sizes() {
        let c = corpus(10);
        let v = build_vocabularies(&c).unwrap();
        let b = batchify(&c, &v, 16, 0, true).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 10);
        let c = corpus(17);
        let v = build_vocabularies(&c).unwrap();
        let b = batchify(&c, &v, 16, 0, true).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), [16, 1]);
        assert_eq!(batchify(&c, &v, 0, 0, true), Err(DataError::BatchSize));
    }

    #[test]
    fn batches_are_seeded_and_padded() {
        let c = corpus(40);
        let v = build_vocabularies(&c).unwrap();
        let a = batchify(&c, &v, 8, 9, true).unwrap();
        let b = batchify(&c, &v, 8, 9, true).unwrap();
        assert_eq!(a, b);
        for batch in &a {
            for i in 0..batch.len() {
                assert!(batch.token_ids[i].iter().all(|&t| t < v.words.len()));
                for t in 0..batch.max_len() {
                    assert_eq!(batch.mask[i][t], t < batch.lengths[i]);
                    if !batch.mask[i][t] {
                        assert_eq!(batch.slot_ids[i][t], PAD_ID);
                        assert_eq!(batch.token_ids[i][t], PAD_ID);
                    }
                }
                let ones = batch.intents[i].iter().filter(|&&x| x == 1.0).count();
                assert!((1..=v.intents.len()).contains(&ones));
            }
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let train = parse_corpus("a O\nX\n").unwrap();
        let v = build_vocabularies(&train).unwrap();
        let dev = parse_corpus("a B-foo\nX\n").unwrap();
        assert!(matches!(
            batchify(&dev, &v, 4, 0, false),
            Err(DataError::UnknownLabel { kind: "slot", .. })
        ));
        let dev = parse_corpus("zzz O\nY\n").unwrap();
        assert!(matches!(
            v.encode(&dev[0], 0),
            Err(DataError::UnknownLabel { kind: "intent", .. })
        ));
    }

    #[test]
    fn synth_single_intent_ratio() {
        let ex = synth_examples(&SynthConfig {
            intent_ratio: [1.0, 0.0, 0.0],
            n_examples: 50,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(ex.iter().all(|e| e.intents.len() == 1));
    }

    #[test]
    fn synth_histogram_follows_ratio() {
        let ex = synth_examples(&SynthConfig {
            n_examples: 1000,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut hist = [0usize; 3];
        for e in &ex {
            hist[e.intents.len() - 1] += 1;
        }
        for (h, r) in hist.iter().zip([0.3, 0.5, 0.2]) {
            assert!((*h as f64 / 1000.0 - r).abs() <= 0.03);
        }
        assert!(ex.iter().all(Example::is_bio_well_formed));
    }

    #[test]
    fn synth_is_deterministic_and_validates() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_corpus(&cfg).unwrap(), synth_corpus(&cfg).unwrap());
        let bad = SynthConfig {
            intent_ratio: [0.5, 0.2, 0.2],
            ..SynthConfig::default()
        };
        assert!(matches!(synth_corpus(&bad), Err(DataError::Synth(_))));
    }

    #[test]
    fn bio_well_formedness_tracks_orphans() {
        let ex = parse_corpus("a I-x\nb O\nA\n").unwrap();
        assert!(!ex[0].is_bio_well_formed());
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        let tok = "[a-z]{1,6}";
        let tag = prop_oneof![Just("O".to_string()), "[BI]-[a-z]{1,4}"];
        (
            prop::collection::vec((tok, tag), 1..8),
            prop::collection::btree_set("[A-Za-z]{1,8}", 1..4),
        )
            .prop_map(|(pairs, intents)| Example {
                tokens: pairs.iter().map(|p| p.0.clone()).collect(),
                slots: pairs.iter().map(|p| p.1.clone()).collect(),
                intents,
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(examples in prop::collection::vec(arb_example(), 1..6)) {
            let text = serialize_corpus(&examples);
            prop_assert_eq!(parse_corpus(&text).unwrap(), examples.clone());
            let trimmed = text.trim_end_matches('\n');
            prop_assert_eq!(parse_corpus(trimmed).unwrap(), examples);
        }
    }
}
