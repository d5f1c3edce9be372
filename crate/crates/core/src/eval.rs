//! Attachment scores and beam-sum perplexity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::SentenceRecord;
use crate::decoder::{marginal_log_prob, particle_parse, DecodeSettings};
use crate::error::{Error, Result};
use crate::hpyp::Symbol;
use crate::model::GenerativeModel;

/// Gold tags whose tokens are excluded from attachment scores.
pub const DEFAULT_PUNCT_TAGS: [&str; 8] = ["``", "''", ",", ".", ":", "-LRB-", "-RRB-", "PUNCT"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub tag_accuracy: f64,
    pub scored_tokens: usize,
    pub tokens: usize,
    pub perplexity: Option<f64>,
    pub sentences_per_second: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "UAS            {:>8.2}\nLAS            {:>8.2}\nTag accuracy   {:>8.2}\nScored tokens  {:>8}\nTokens         {:>8}\n",
            self.uas, self.las, self.tag_accuracy, self.scored_tokens, self.tokens
        );
        if let Some(p) = self.perplexity {
            s.push_str(&format!("Perplexity     {p:>8.2}\n"));
        }
        if let Some(r) = self.sentences_per_second {
            s.push_str(&format!("Sentences/sec  {r:>8.2}\n"));
        }
        s
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// UAS and LAS over tokens whose gold tag is not in `punct_tags`; tag
/// accuracy over all tokens.
pub fn attachment_scores(
    pred: &[SentenceRecord],
    gold: &[SentenceRecord],
    punct_tags: &[&str],
) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted sentences, {} gold",
            pred.len(),
            gold.len()
        )));
    }
    let (mut scored, mut heads, mut labelled, mut tokens, mut tags) = (0, 0, 0, 0, 0);
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch(format!(
                "sentence {}: {} predicted tokens, {} gold",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        for (pt, gt) in p.tokens.iter().zip(&g.tokens) {
            tokens += 1;
            if pt.tag == gt.tag {
                tags += 1;
            }
            if punct_tags.contains(&gt.tag.as_str()) {
                continue;
            }
            scored += 1;
            if pt.head.is_some() && pt.head == gt.head {
                heads += 1;
                if pt.label == gt.label {
                    labelled += 1;
                }
            }
        }
    }
    Ok(EvalReport {
        uas: percent(heads, scored),
        las: percent(labelled, scored),
        tag_accuracy: percent(tags, tokens),
        scored_tokens: scored,
        tokens,
        perplexity: None,
        sentences_per_second: None,
    })
}

/// Per-sentence beam-sum log probabilities.
pub fn sentence_log_probs(
    model: &GenerativeModel,
    sentences: &[Vec<Symbol>],
    settings: &DecodeSettings,
) -> Result<Vec<f64>> {
    sentences
        .par_iter()
        .map(|words| {
            let out = particle_parse(model, words, None, settings)?;
            marginal_log_prob(&out.beam)
        })
        .collect()
}

/// `exp(-sum log p / N)`, with `N` counting every word plus one termination
/// event per sentence.
pub fn perplexity_from(log_probs: &[f64], sentences: &[Vec<Symbol>]) -> f64 {
    let events: usize = sentences.iter().map(|s| s.len() + 1).sum();
    (-log_probs.iter().sum::<f64>() / events as f64).exp()
}

pub fn perplexity(model: &GenerativeModel, sentences: &[Vec<Symbol>], settings: &DecodeSettings) -> Result<f64> {
    let lps = sentence_log_probs(model, sentences, settings)?;
    Ok(perplexity_from(&lps, sentences))
}
