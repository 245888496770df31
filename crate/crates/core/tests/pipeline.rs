//! Library-level training pipeline: corpus text in, frames out.

use sdjn::config::Settings;
use sdjn::data::parse_corpus;
use sdjn::metrics::SemanticFrame;
use sdjn::trainer::{self, predict_frames};

const FIVE: &str = "\
play O
jazz B-genre
PlayMusic

book O
a O
table O
for O
two B-party_size
BookRestaurant

play O
rock B-genre
and O
book O
for O
four B-party_size
BookRestaurant#PlayMusic

weather O
in O
paris B-city
GetWeather

weather O
in O
new B-city
york I-city
and O
play O
pop B-genre
GetWeather#PlayMusic
";

#[test]
fn overfit_five_examples_reproduces_gold_frames() {
    let corpus = parse_corpus(FIVE).unwrap();
    assert_eq!(corpus.len(), 5);
    let mut s = Settings::from_text(
        "emb_dim = 16\nencoder_hidden = 16\nattn_dim = 16\ndecoder_hidden = 16\n\
         slot_emb_dim = 16\ngat_dim = 16\ndropout = 0\nlearning_rate = 0.01\nepochs = 300\nbatch_size = 5\n",
    )
    .unwrap();
    s.train.seed = 2;
    let out = trainer::train(&s, &corpus, &corpus, |_, _| {}).unwrap();
    assert_eq!(out.best.best_dev, 1.0, "log tail: {:?}", out.log.last().map(|e| e.to_string()));

    let utterances: Vec<Vec<String>> = corpus.iter().map(|e| e.tokens.clone()).collect();
    let frames = predict_frames(&out.best.model, &out.best.vocabs, &utterances).unwrap();
    for (frame, ex) in frames.iter().zip(&corpus) {
        let gold = SemanticFrame {
            intents: ex.intents.clone(),
            slots: ex.slots.clone(),
        };
        assert_eq!(frame.to_line(), gold.to_line());
    }
}

#[test]
fn checkpoint_text_round_trip_keeps_predictions() {
    let corpus = parse_corpus(FIVE).unwrap();
    let mut s = Settings::default();
    s.model = s.model.with_width(8);
    s.train.epochs = 3;
    let out = trainer::train(&s, &corpus, &corpus, |_, _| {}).unwrap();
    let back = sdjn::checkpoint::Checkpoint::from_text(&out.best.to_text()).unwrap();
    let utterances: Vec<Vec<String>> = corpus.iter().map(|e| e.tokens.clone()).collect();
    assert_eq!(
        predict_frames(&out.best.model, &out.best.vocabs, &utterances).unwrap(),
        predict_frames(&back.model, &back.vocabs, &utterances).unwrap()
    );
    assert_eq!(back.epoch, out.best.epoch);
    assert_eq!(back.best_dev, out.best.best_dev);
}
