//! Gibbs training of the model from treebanks and raw text.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TreebankSentence;
use crate::decoder::{gold_constrained_beam, particle_parse, BeamEntry, DecodeSettings};
use crate::error::{Error, Result};
use crate::hpyp::{Hyperparams, Symbol};
use crate::model::{Derivation, EventKind, GenerativeModel, ModelConfig, ObservationTrace};
use crate::transition::DepTree;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    /// Greedy-oracle derivations.
    #[default]
    Deterministic,
    /// Derivations sampled from the gold-constrained particle beam.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub iterations: usize,
    pub oracle: OracleMode,
    pub derivation_particles: u64,
    /// Resample hyperparameters after every this many iterations; `None`
    /// means 1 for deterministic and 5 for sampled derivations.
    pub hyper_resample_every: Option<usize>,
    /// Slice-sampling sweeps per level per resample.
    pub slice_iterations: usize,
    pub seed: u64,
    /// Visit sentences in a seeded random order instead of corpus order.
    pub shuffle: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 20,
            oracle: OracleMode::Deterministic,
            derivation_particles: 100,
            hyper_resample_every: None,
            slice_iterations: 5,
            seed: 1,
            shuffle: false,
        }
    }
}

impl TrainSettings {
    pub fn resample_every(&self) -> usize {
        self.hyper_resample_every.unwrap_or(match self.oracle {
            OracleMode::Deterministic => 1,
            OracleMode::Sampled => 5,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Settings("at least one iteration is required".into()));
        }
        if self.derivation_particles == 0 {
            return Err(Error::Settings("at least one derivation particle is required".into()));
        }
        if self.resample_every() == 0 {
            return Err(Error::Settings("resampling interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnsupMode {
    /// Sample a derivation from the final beam and update every distribution.
    #[default]
    LatentSample,
    /// Observe the best derivation's word events only.
    ViterbiSemisup,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsupSettings {
    pub mode: UnsupMode,
    pub particles: u64,
    pub update_word_only: bool,
    pub sweeps: usize,
    pub seed: u64,
}

impl UnsupSettings {
    pub fn new(mode: UnsupMode) -> Self {
        UnsupSettings {
            mode,
            particles: 100,
            update_word_only: mode == UnsupMode::ViterbiSemisup,
            sweeps: 1,
            seed: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mode == UnsupMode::ViterbiSemisup && !self.update_word_only {
            return Err(Error::Settings("semi-supervised refinement updates words only".into()));
        }
        if self.particles == 0 || self.sweeps == 0 {
            return Err(Error::Settings("particles and sweeps must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: String,
    pub iteration: usize,
    /// Sum of the joint log probabilities of the current derivations.
    pub log_likelihood: f64,
    pub customers: u64,
    pub resampled: bool,
    pub transition_hyper: Hyperparams,
    pub tag_hyper: Hyperparams,
    pub word_hyper: Hyperparams,
}

/// Writes one JSON record per line to an optional sink.
pub struct Diagnostics<'a> {
    sink: Option<&'a mut dyn Write>,
}

impl<'a> Diagnostics<'a> {
    pub fn new(sink: &'a mut dyn Write) -> Self {
        Diagnostics { sink: Some(sink) }
    }

    pub fn none() -> Self {
        Diagnostics { sink: None }
    }

    fn emit(&mut self, record: &IterationRecord) -> Result<()> {
        log::info!(
            "{} iteration {}: log-likelihood {:.3}",
            record.stage,
            record.iteration,
            record.log_likelihood
        );
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut **sink, record)?;
            writeln!(sink)?;
        }
        Ok(())
    }
}

fn record(model: &GenerativeModel, stage: &str, iteration: usize, ll: f64, resampled: bool) -> IterationRecord {
    IterationRecord {
        stage: stage.to_string(),
        iteration,
        log_likelihood: ll,
        customers: model.event_count(),
        resampled,
        transition_hyper: model.tree(EventKind::Transition).hyperparams().clone(),
        tag_hyper: model.tree(EventKind::Tag).hyperparams().clone(),
        word_hyper: model.tree(EventKind::Word).hyperparams().clone(),
    }
}

/// Picks one of the distinct derivations in `beam` with probability
/// proportional to its weight.
pub fn sample_from_beam<R: Rng + ?Sized>(beam: &[BeamEntry], words: &[Symbol], rng: &mut R) -> Result<Derivation> {
    let mut distinct: Vec<&BeamEntry> = Vec::with_capacity(beam.len());
    for e in beam {
        if !distinct
            .iter()
            .any(|d| d.transitions == e.transitions && d.tags == e.tags)
        {
            distinct.push(e);
        }
    }
    if distinct.is_empty() {
        return Err(Error::EmptyBeam);
    }
    let max = distinct
        .iter()
        .map(|e| e.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = distinct.iter().map(|e| (e.log_weight - max).exp()).collect();
    let index = WeightedIndex::new(&weights).map_err(|_| Error::EmptyBeam)?;
    distinct[index.sample(rng)].derivation(words)
}

/// Samples a derivation of `gold` from the gold-constrained particle beam.
pub fn sample_derivation<R: Rng + ?Sized>(
    model: &GenerativeModel,
    words: &[Symbol],
    tags: &[Symbol],
    gold: &DepTree,
    particles: u64,
    rng: &mut R,
) -> Result<Derivation> {
    let out = gold_constrained_beam(model, words, tags, gold, particles)?;
    sample_from_beam(&out.beam, words, rng)
}

fn corpus_log_likelihood(model: &GenerativeModel, derivations: &[Derivation]) -> Result<f64> {
    derivations
        .iter()
        .map(|d| model.joint_log_probability(d))
        .sum()
}

/// Trains a model on projective treebank sentences.
///
/// The first iteration observes greedy-oracle derivations. Each later
/// iteration forgets and re-observes every sentence, with a fresh sampled
/// derivation in sampled mode.
pub fn train_supervised(
    config: ModelConfig,
    corpus: &[TreebankSentence],
    settings: &TrainSettings,
    diagnostics: &mut Diagnostics<'_>,
) -> Result<GenerativeModel> {
    settings.validate()?;
    let mut model = GenerativeModel::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut derivations = Vec::with_capacity(corpus.len());
    let mut traces: Vec<ObservationTrace> = Vec::with_capacity(corpus.len());
    for s in corpus {
        let d = Derivation::from_gold(s.words.clone(), s.tags.clone(), &s.tree)?;
        traces.push(model.observe(&d, &mut rng)?);
        derivations.push(d);
    }
    let every = settings.resample_every();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for iteration in 1..=settings.iterations {
        if iteration > 1 {
            if settings.shuffle {
                order.shuffle(&mut rng);
            }
            for &i in &order {
                model.forget(&traces[i])?;
                let s = &corpus[i];
                let d = match settings.oracle {
                    OracleMode::Deterministic => derivations[i].clone(),
                    OracleMode::Sampled => sample_derivation(
                        &model,
                        &s.words,
                        &s.tags,
                        &s.tree,
                        settings.derivation_particles,
                        &mut rng,
                    )?,
                };
                traces[i] = model.observe(&d, &mut rng)?;
                derivations[i] = d;
            }
        }
        let resampled = iteration % every == 0;
        if resampled {
            model.resample_hyperparameters(&mut rng, settings.slice_iterations);
        }
        let ll = corpus_log_likelihood(&model, &derivations)?;
        diagnostics.emit(&record(&model, "supervised", iteration, ll, resampled))?;
    }
    Ok(model)
}

/// Refines a trained model on sentences without annotation.
pub fn train_unsupervised(
    mut model: GenerativeModel,
    corpus: &[Vec<Symbol>],
    settings: &UnsupSettings,
    diagnostics: &mut Diagnostics<'_>,
) -> Result<GenerativeModel> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let decode = DecodeSettings::with_particles(settings.particles);
    let mut traces: Vec<Option<ObservationTrace>> = vec![None; corpus.len()];
    let mut derivations: Vec<Option<Derivation>> = vec![None; corpus.len()];
    for sweep in 1..=settings.sweeps {
        for (i, words) in corpus.iter().enumerate() {
            if words.is_empty() {
                continue;
            }
            if let Some(trace) = traces[i].take() {
                model.forget(&trace)?;
            }
            let out = particle_parse(&model, words, None, &decode)?;
            let d = match settings.mode {
                UnsupMode::LatentSample => sample_from_beam(&out.beam, words, &mut rng)?,
                UnsupMode::ViterbiSemisup => out.best,
            };
            let trace = if settings.update_word_only {
                model.observe_words(&d, &mut rng)?
            } else {
                model.observe(&d, &mut rng)?
            };
            traces[i] = Some(trace);
            derivations[i] = Some(d);
        }
        let current: Vec<Derivation> = derivations.iter().flatten().cloned().collect();
        let ll = corpus_log_likelihood(&model, &current)?;
        let stage = match settings.mode {
            UnsupMode::LatentSample => "latent-sample",
            UnsupMode::ViterbiSemisup => "viterbi-semisup",
        };
        diagnostics.emit(&record(&model, stage, sweep, ll, false))?;
    }
    Ok(model)
}
