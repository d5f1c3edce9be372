//! Particle beam decoder, beam-sum marginal and ancestral generation.
//!
//! Particles are split between moves using probabilities renormalised over
//! the moves that can still complete the sentence, while entry weights
//! multiply the model's generative probabilities. The log weight of a
//! terminal entry is therefore the joint log probability of its derivation.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpyp::Symbol;
use crate::model::{Derivation, EventKind, Features, GenerativeModel};
use crate::transition::{oracle_choices, Configuration, DepTree, Transition, TransitionKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReduceBranching {
    /// Only the highest-probability reduce.
    #[default]
    BestOne,
    /// The best left arc and the best right arc.
    BestLeftAndRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeSettings {
    pub particles: u64,
    pub max_tag_candidates: usize,
    pub tags_provided: bool,
    pub reduce_branching: ReduceBranching,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            particles: 100,
            max_tag_candidates: 3,
            tags_provided: false,
            reduce_branching: ReduceBranching::BestOne,
        }
    }
}

impl DecodeSettings {
    pub fn with_particles(particles: u64) -> Self {
        DecodeSettings {
            particles,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Settings("at least one particle is required".into()));
        }
        if self.max_tag_candidates == 0 {
            return Err(Error::Settings("at least one tag candidate is required".into()));
        }
        Ok(())
    }
}

/// A partial derivation with its particle count and log weight.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamEntry {
    pub config: Configuration,
    pub particles: u64,
    pub log_weight: f64,
    /// Tags of the words shifted so far.
    pub tags: Vec<Symbol>,
    /// Scored transitions so far (the root shift excluded).
    pub transitions: Vec<Transition>,
}

impl BeamEntry {
    fn root(particles: u64, n: usize) -> Self {
        let mut config = Configuration::initial();
        config
            .apply_in_place(Transition::Shift, n)
            .expect("root shift is always legal");
        BeamEntry {
            config,
            particles,
            log_weight: 0.0,
            tags: Vec::with_capacity(n),
            transitions: Vec::with_capacity(2 * n),
        }
    }

    pub fn derivation(&self, words: &[Symbol]) -> Result<Derivation> {
        Derivation::new(words.to_vec(), self.tags.clone(), self.transitions.clone())
    }
}

#[derive(Clone, Debug)]
pub struct ParseOutput {
    pub best: Derivation,
    pub best_log_weight: f64,
    pub beam: Vec<BeamEntry>,
    /// Transitions executed, counting one per child entry created.
    pub transitions_executed: u64,
}

/// Splits `total` proportionally to `weights` by largest remainder. Ties in
/// the remainder go to the lower index.
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum <= 0.0 || !sum.is_finite() {
        let mut out = vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Reallocates `budget` particles proportionally to `k * exp(log_weight)`,
/// flooring and dropping entries left with none. If every entry would be
/// dropped the best one keeps a single particle.
pub fn selection_step(beam: Vec<BeamEntry>, budget: u64) -> Vec<BeamEntry> {
    if beam.is_empty() {
        return beam;
    }
    let scores: Vec<f64> = beam
        .iter()
        .map(|e| (e.particles as f64).ln() + e.log_weight)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    let mut kept = Vec::with_capacity(beam.len());
    let mut best_entry = None;
    for (i, (mut e, w)) in beam.into_iter().zip(scaled).enumerate() {
        let k = (w / total * budget as f64).floor() as u64;
        if k > 0 {
            e.particles = k;
            kept.push(e);
        } else if i == best {
            best_entry = Some(e);
        }
    }
    if kept.is_empty() {
        let mut e = best_entry.expect("best entry exists when none are kept");
        e.particles = 1;
        kept.push(e);
    }
    kept
}

/// Log of the summed weights of the distinct derivations in `beam`.
pub fn marginal_log_prob(beam: &[BeamEntry]) -> Result<f64> {
    let mut seen = HashSet::new();
    let weights: Vec<f64> = beam
        .iter()
        .filter(|e| seen.insert((&e.tags, &e.transitions)))
        .map(|e| e.log_weight)
        .collect();
    log_sum_exp(&weights).ok_or(Error::EmptyBeam)
}

pub fn log_sum_exp(xs: &[f64]) -> Option<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() {
        return None;
    }
    if max == f64::NEG_INFINITY {
        return Some(max);
    }
    Some(max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// Moves the decoder may take from a configuration.
enum Restriction<'a> {
    /// Any move that can still complete a sentence of `n` words.
    Sentence,
    /// Only moves that keep the gold tree derivable.
    Gold(&'a DepTree),
}

impl Restriction<'_> {
    /// Generative probabilities of the feasible moves at `c`.
    fn moves(
        &self,
        m: &GenerativeModel,
        f: &Features,
        c: &Configuration,
        n: usize,
    ) -> Result<Vec<(Transition, f64)>> {
        let all = m.transition_probs(f, c.generative_moves());
        match self {
            Restriction::Sentence => {
                let legal = c.legal_transitions(n);
                Ok(all.into_iter().filter(|(t, _)| legal.allows(t.kind())).collect())
            }
            Restriction::Gold(gold) => Ok(oracle_choices(c, gold)?
                .into_iter()
                .map(|choice| {
                    let dish = m.transition_dish(choice);
                    let p = all
                        .iter()
                        .find(|(t, _)| m.transition_dish(*t) == dish)
                        .map_or(0.0, |x| x.1);
                    (choice, p)
                })
                .collect()),
        }
    }
}

struct Decoder<'a> {
    model: &'a GenerativeModel,
    words: &'a [Symbol],
    given_tags: Option<&'a [Symbol]>,
    settings: DecodeSettings,
    restriction: Restriction<'a>,
    executed: u64,
}

impl Decoder<'_> {
    fn n(&self) -> usize {
        self.words.len()
    }

    fn features(&self, e: &BeamEntry) -> Features {
        self.model.features(&e.config, self.words, &e.tags)
    }

    fn execute(&mut self, e: &mut BeamEntry, t: Transition, log_p: f64) -> Result<()> {
        e.config.apply_in_place(t, self.n())?;
        e.transitions.push(t);
        e.log_weight += log_p;
        self.executed += 1;
        Ok(())
    }

    /// Tag candidates for the word at the buffer with their scores
    /// p(tag) * p(word | tag).
    fn tag_candidates(&self, e: &BeamEntry, f: &Features) -> Result<Vec<(Symbol, f64)>> {
        let pos = e.config.buffer();
        let word = self.words[pos - 1];
        if let Some(tags) = self.given_tags {
            let tag = tags[pos - 1];
            let p_tag = self.model.tag_probs(f)[tag as usize];
            return Ok(vec![(tag, p_tag * self.model.word_prob(f, tag, word)?)]);
        }
        let tag_probs = self.model.tag_probs(f);
        let mut scored = Vec::with_capacity(tag_probs.len());
        for (tag, p) in tag_probs.into_iter().enumerate() {
            let tag = tag as Symbol;
            scored.push((tag, p * self.model.word_prob(f, tag, word)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(self.settings.max_tag_candidates);
        Ok(scored)
    }

    /// Advances `entry` until it shifts the next word or becomes terminal,
    /// branching on reduces. Shifted and terminal entries are appended to
    /// `out`.
    fn pass_entry(&mut self, entry: BeamEntry, out: &mut Vec<BeamEntry>) -> Result<()> {
        let mut queue = vec![entry];
        while let Some(mut e) = queue.pop() {
            if e.config.is_terminal(self.n()) {
                out.push(e);
                continue;
            }
            let f = self.features(&e);
            let moves = self.restriction.moves(self.model, &f, &e.config, self.n())?;
            if moves.is_empty() {
                return Err(Error::NoOracleContinuation(e.config.to_string()));
            }
            let feasible_total: f64 = moves.iter().map(|x| x.1).sum();
            let p_shift = moves
                .iter()
                .find(|x| x.0 == Transition::Shift)
                .map_or(0.0, |x| x.1);
            let n_shift = (e.particles as f64 * p_shift / feasible_total).round() as u64;
            let n_shift = n_shift.min(e.particles);
            let n_reduce = e.particles - n_shift;

            if n_reduce > 0 {
                let reduces = self.reduce_branches(&moves);
                if reduces.is_empty() {
                    return Err(Error::NoOracleContinuation(e.config.to_string()));
                }
                let weights: Vec<f64> = reduces.iter().map(|x| x.1).collect();
                let shares = apportion(n_reduce, &weights);
                for ((t, p), k) in reduces.into_iter().zip(shares) {
                    if k == 0 {
                        continue;
                    }
                    let mut child = e.clone();
                    child.particles = k;
                    self.execute(&mut child, t, p.ln())?;
                    queue.push(child);
                }
            }

            if n_shift > 0 {
                let candidates = self.tag_candidates(&e, &f)?;
                let weights: Vec<f64> = candidates.iter().map(|x| x.1).collect();
                let shares = apportion(n_shift, &weights);
                let log_shift = p_shift.ln();
                let mut last = None;
                for (i, k) in shares.iter().enumerate() {
                    if *k > 0 {
                        last = Some(i);
                    }
                }
                for (i, ((tag, score), k)) in candidates.into_iter().zip(shares).enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let mut child = if Some(i) == last {
                        std::mem::replace(&mut e, BeamEntry::root(0, 0))
                    } else {
                        e.clone()
                    };
                    child.particles = k;
                    child.tags.push(tag);
                    self.execute(&mut child, Transition::Shift, log_shift + score.ln())?;
                    out.push(child);
                }
            }
        }
        Ok(())
    }

    fn reduce_branches(&self, moves: &[(Transition, f64)]) -> Vec<(Transition, f64)> {
        let best_of = |kind: Option<TransitionKind>| {
            moves
                .iter()
                .filter(|(t, _)| t.is_reduce() && kind.is_none_or(|k| t.kind() == k))
                .fold(None::<(Transition, f64)>, |best, &(t, p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((t, p)),
                })
        };
        match self.settings.reduce_branching {
            ReduceBranching::BestOne => best_of(None).into_iter().collect(),
            ReduceBranching::BestLeftAndRight => best_of(Some(TransitionKind::LeftArc))
                .into_iter()
                .chain(best_of(Some(TransitionKind::RightArc)))
                .collect(),
        }
    }

    fn run(mut self) -> Result<ParseOutput> {
        self.settings.validate()?;
        let n = self.n();
        if n == 0 {
            return Err(Error::Settings("cannot decode an empty sentence".into()));
        }
        if let Some(tags) = self.given_tags {
            if tags.len() != n {
                return Err(Error::LengthMismatch(format!("{n} words but {} tags", tags.len())));
            }
        }
        let budget = self.settings.particles;
        let mut beam = vec![BeamEntry::root(budget, n)];
        for _ in 0..n {
            let mut next = Vec::with_capacity(beam.len() * 2);
            for e in beam {
                self.pass_entry(e, &mut next)?;
            }
            if next.is_empty() {
                return Err(Error::EmptyBeam);
            }
            beam = selection_step(next, budget);
        }
        // After the last shift particles keep splitting over reduces.
        let mut finished = Vec::with_capacity(beam.len());
        for e in beam {
            self.pass_entry(e, &mut finished)?;
        }
        let best = finished
            .iter()
            .fold(None::<&BeamEntry>, |b, e| match b {
                Some(b) if b.log_weight >= e.log_weight => Some(b),
                _ => Some(e),
            })
            .ok_or(Error::EmptyBeam)?;
        Ok(ParseOutput {
            best: best.derivation(self.words)?,
            best_log_weight: best.log_weight,
            transitions_executed: self.executed,
            beam: finished,
        })
    }
}

/// Decodes `words` with the particle beam. `tags` must be given iff
/// `settings.tags_provided`.
pub fn particle_parse(
    model: &GenerativeModel,
    words: &[Symbol],
    tags: Option<&[Symbol]>,
    settings: &DecodeSettings,
) -> Result<ParseOutput> {
    if tags.is_some() != settings.tags_provided {
        return Err(Error::Settings(
            "tags must be supplied exactly when the settings say they are provided".into(),
        ));
    }
    Decoder {
        model,
        words,
        given_tags: tags,
        settings: *settings,
        restriction: Restriction::Sentence,
        executed: 0,
    }
    .run()
}

/// Runs the beam restricted to derivations of `gold` with the given tags.
pub fn gold_constrained_beam(
    model: &GenerativeModel,
    words: &[Symbol],
    tags: &[Symbol],
    gold: &DepTree,
    particles: u64,
) -> Result<ParseOutput> {
    if gold.len() != words.len() {
        return Err(Error::LengthMismatch(format!(
            "{} words but a tree over {}",
            words.len(),
            gold.len()
        )));
    }
    Decoder {
        model,
        words,
        given_tags: Some(tags),
        settings: DecodeSettings {
            particles,
            max_tag_candidates: 1,
            tags_provided: true,
            reduce_branching: ReduceBranching::BestLeftAndRight,
        },
        restriction: Restriction::Gold(gold),
        executed: 0,
    }
    .run()
}

/// Single-path decoding: shift when shifting holds at least half of the
/// feasible mass, otherwise take the best reduce; tags by p(tag) p(word|tag).
pub fn greedy_parse(model: &GenerativeModel, words: &[Symbol], tags: Option<&[Symbol]>) -> Result<Derivation> {
    let n = words.len();
    let mut c = Configuration::initial();
    c.apply_in_place(Transition::Shift, n)?;
    let mut chosen_tags = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(2 * n);
    while !c.is_terminal(n) {
        let f = model.features(&c, words, &chosen_tags);
        let legal = c.legal_transitions(n);
        let probs: Vec<(Transition, f64)> = model
            .transition_probs(&f, c.generative_moves())
            .into_iter()
            .filter(|(t, _)| legal.allows(t.kind()))
            .collect();
        let total: f64 = probs.iter().map(|x| x.1).sum();
        let p_shift = probs.iter().find(|x| x.0 == Transition::Shift).map_or(0.0, |x| x.1);
        let t = if legal.shift && p_shift / total >= 0.5 {
            let pos = c.buffer();
            let tag = match tags {
                Some(tags) => tags[pos - 1],
                None => {
                    let tp = model.tag_probs(&f);
                    let mut best = (0, f64::NEG_INFINITY);
                    for (tag, p) in tp.into_iter().enumerate() {
                        let s = p * model.word_prob(&f, tag as Symbol, words[pos - 1])?;
                        if s > best.1 {
                            best = (tag as Symbol, s);
                        }
                    }
                    best.0
                }
            };
            chosen_tags.push(tag);
            Transition::Shift
        } else {
            probs
                .iter()
                .filter(|(t, _)| t.is_reduce())
                .fold(None::<(Transition, f64)>, |best, &(t, p)| match best {
                    Some((_, bp)) if bp >= p => best,
                    _ => Some((t, p)),
                })
                .ok_or_else(|| Error::NoOracleContinuation(c.to_string()))?
                .0
        };
        c.apply_in_place(t, n)?;
        transitions.push(t);
    }
    Derivation::new(words.to_vec(), chosen_tags, transitions)
}

/// A sampled sentence with its derivation and joint log probability.
#[derive(Clone, Debug)]
pub struct Generated {
    pub derivation: Derivation,
    pub tree: DepTree,
    pub log_prob: f64,
}

/// Ancestral sampling from the model. Generation stops when the root takes
/// its dependent; once `max_len` words exist shifting is disabled so the
/// derivation is forced to terminate. `max_len` is at least 1.
pub fn generate<R: Rng + ?Sized>(model: &GenerativeModel, rng: &mut R, max_len: usize) -> Result<Generated> {
    let max_len = max_len.max(1);
    let mut c = Configuration::initial();
    c.apply_generative(Transition::Shift)?;
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut transitions = Vec::new();
    loop {
        let f = model.features(&c, &words, &tags);
        let mut moves = c.generative_moves();
        if words.len() >= max_len {
            moves.shift = false;
        }
        let probs = model.transition_probs(&f, moves);
        let index = WeightedIndex::new(probs.iter().map(|x| x.1))
            .map_err(|e| Error::Settings(format!("degenerate transition distribution: {e}")))?;
        let t = probs[index.sample(rng)].0;
        if t == Transition::Shift {
            let tag_key = model.key(EventKind::Tag, &f);
            let tag = model.tree(EventKind::Tag).sample_dish(&tag_key, rng)?;
            let word_key = model.key(EventKind::Word, &f.with_buffer_tag(tag));
            let word = model.tree(EventKind::Word).sample_dish(&word_key, rng)?;
            tags.push(tag);
            words.push(word);
        }
        let ends = t.kind() == TransitionKind::RightArc && c.stack_item(2) == Some(0);
        c.apply_generative(t)?;
        transitions.push(t);
        if ends {
            break;
        }
    }
    let derivation = Derivation::new(words, tags, transitions)?;
    let tree = derivation.tree()?;
    let log_prob = model.joint_log_probability(&derivation)?;
    Ok(Generated {
        derivation,
        tree,
        log_prob,
    })
}
