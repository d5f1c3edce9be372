use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gendep::corpus::{build_vocab, encode_treebank, read_conll_file, write_conll, SentenceRecord, VocabOptions};
use gendep::decoder::{particle_parse, DecodeSettings};
use gendep::eval::{attachment_scores, DEFAULT_PUNCT_TAGS};
use gendep::model::ModelConfig;
use gendep::persist::ModelFile;
use gendep::synth::synthetic_treebank;
use gendep::trainer::{train_supervised, Diagnostics, TrainSettings};

fn gendep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gendep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = gendep(args);
    assert!(
        out.status.success(),
        "gendep {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn write(dir: &Path, name: &str, records: &[SentenceRecord]) -> PathBuf {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).unwrap();
    write_conll(records, &mut f).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Best of attaching every token to its left or to its right neighbour.
fn neighbour_baseline(gold: &[SentenceRecord]) -> f64 {
    let attach = |left: bool| -> f64 {
        let pred: Vec<SentenceRecord> = gold
            .iter()
            .map(|r| {
                let n = r.len();
                let mut r = r.clone();
                for (i, t) in r.tokens.iter_mut().enumerate() {
                    let pos = i + 1;
                    t.head = Some(if left { pos - 1 } else if pos == n { 0 } else { pos + 1 });
                }
                r
            })
            .collect();
        attachment_scores(&pred, gold, &DEFAULT_PUNCT_TAGS).unwrap().uas
    };
    attach(true).max(attach(false))
}

#[test]
fn train_parse_eval_beats_neighbour_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.conll", &synthetic_treebank(11, 50));
    let gold_records = synthetic_treebank(12, 50);
    let dev = write(dir.path(), "dev.conll", &gold_records);
    let model = dir.path().join("model.json");
    let pred = dir.path().join("pred.conll");
    ok(&["train", "--train", s(&train), "--out", s(&model), "--iterations", "5", "--seed", "3"]);
    ok(&["parse", "--model", s(&model), "--input", s(&dev), "--particles", "20", "--output", s(&pred)]);
    let out = String::from_utf8(ok(&["eval", "--pred", s(&pred), "--gold", s(&dev)])).unwrap();
    let record: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    let uas = record["uas"].as_f64().unwrap();
    let baseline = neighbour_baseline(&gold_records);
    assert!(uas >= baseline, "UAS {uas} below baseline {baseline}");
    assert!(out.contains("UAS"));
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.conll", &synthetic_treebank(21, 40));
    let text = dir.path().join("raw.txt");
    fs::write(&text, "The man saw a dog .\nShe ate bread with a fork .\n").unwrap();
    let run = |tag: &str| {
        let model = dir.path().join(format!("m{tag}.json"));
        let refined = dir.path().join(format!("r{tag}.json"));
        ok(&["train", "--train", s(&train), "--out", s(&model), "--iterations", "3", "--oracle", "sampled", "--particles", "10"]);
        let parsed = ok(&["parse", "--model", s(&model), "--input", s(&text), "--format", "text", "--particles", "10"]);
        let scored = ok(&["score", "--model", s(&model), "--input", s(&text), "--particles", "10"]);
        let generated = ok(&["generate", "--model", s(&model), "--count", "5", "--seed", "9", "--min-length", "2"]);
        ok(&["refine", "--model", s(&model), "--input", s(&text), "--out", s(&refined), "--mode", "sample", "--particles", "10"]);
        (fs::read(&model).unwrap(), parsed, scored, generated, fs::read(&refined).unwrap())
    };
    assert!(run("a") == run("b"));
}

#[test]
fn given_tags_need_tagged_input() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.conll", &synthetic_treebank(5, 20));
    let model = dir.path().join("m.json");
    ok(&["train", "--train", s(&train), "--out", s(&model), "--iterations", "1"]);
    let text = dir.path().join("untagged.txt");
    fs::write(&text, "The man slept .\n").unwrap();
    let out = gendep(&["parse", "--model", s(&model), "--input", s(&text), "--format", "text", "--tags", "given"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("untagged.txt"), "{err}");

    // Tagged CoNLL input is accepted.
    ok(&["parse", "--model", s(&model), "--input", s(&train), "--tags", "given"]);
}

#[test]
fn missing_input_is_named() {
    let out = gendep(&["eval", "--pred", "/nonexistent/pred.conll", "--gold", "/nonexistent/gold.conll"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/pred.conll"));
}

#[test]
fn eval_is_invariant_to_sentence_order() {
    let dir = tempfile::tempdir().unwrap();
    let gold = synthetic_treebank(31, 30);
    let mut pred = gold.clone();
    for (i, r) in pred.iter_mut().enumerate() {
        if i % 3 == 0 {
            r.tokens[0].head = Some(r.len());
            r.tokens[0].label = "x".into();
        }
    }
    let a = ok(&["eval", "--pred", s(&write(dir.path(), "p1", &pred)), "--gold", s(&write(dir.path(), "g1", &gold))]);
    let (mut p2, mut g2) = (pred.clone(), gold.clone());
    p2.reverse();
    g2.reverse();
    p2.swap(0, 7);
    g2.swap(0, 7);
    let b = ok(&["eval", "--pred", s(&write(dir.path(), "p2", &p2)), "--gold", s(&write(dir.path(), "g2", &g2))]);
    assert_eq!(a, b);
}

#[test]
fn parses_survive_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_treebank(41, 200);
    let vocab = build_vocab(&records, VocabOptions::default());
    let (corpus, _) = encode_treebank(&records, &vocab);
    let config = ModelConfig::new(vocab.size(), vocab.tags.len() as u32, vocab.labels.len() as u32);
    let settings = TrainSettings {
        iterations: 2,
        ..TrainSettings::default()
    };
    let model = train_supervised(config, &corpus, &settings, &mut Diagnostics::none()).unwrap();
    let held_out = synthetic_treebank(42, 100);
    let decode = DecodeSettings::with_particles(20);
    let parse_all = |m: &gendep::model::GenerativeModel| -> Vec<_> {
        held_out
            .iter()
            .map(|r| {
                let out = particle_parse(m, &vocab.words(&r.forms()), None, &decode).unwrap();
                (out.best, out.best_log_weight.to_bits())
            })
            .collect()
    };
    let before = parse_all(&model);
    let path = dir.path().join("m.json");
    ModelFile::new(vocab.clone(), model).save(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap();
    assert_eq!(parse_all(&loaded.model), before);
}

#[test]
fn synth_writes_readable_treebanks() {
    let dir = tempfile::tempdir().unwrap();
    let (train, dev) = (dir.path().join("t.conll"), dir.path().join("d.conll"));
    ok(&["synth", "--train", s(&train), "--dev", s(&dev)]);
    assert_eq!(read_conll_file(&train).unwrap().len(), 500);
    assert_eq!(read_conll_file(&dev).unwrap().len(), 100);
}
