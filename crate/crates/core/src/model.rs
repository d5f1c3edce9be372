//! The generative model: context extraction and the three HPYP-backed
//! distributions over transitions, tags and words.
//!
//! A derivation is scored by replaying it. At every configuration reached
//! before a scored transition the transition event is generated; when that
//! transition is a shift, the tag and then the word of the shifted token are
//! generated from the same configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpyp::{Dish, HpypTree, SeatingTrace, Symbol};
use crate::transition::{Configuration, DepTree, Legal, Position, Transition, TransitionKind};

/// One element of a conditioning context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextElement {
    /// Tag of the token at the buffer (the token being generated).
    BufferTag,
    S1Tag,
    S2Tag,
    S3Tag,
    Rc1S1Tag,
    Lc1S1Tag,
    Rc1S2Tag,
    S1Word,
    S2Word,
}

impl ContextElement {
    pub fn is_word(self) -> bool {
        matches!(self, ContextElement::S1Word | ContextElement::S2Word)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Transition,
    Tag,
    Word,
}

/// Ordered context elements, most important first. Back-off drops the tail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub kind: EventKind,
    pub elements: Vec<ContextElement>,
}

use ContextElement as E;

const TRANSITION_CONTEXT: [ContextElement; 8] = [
    E::S1Tag,
    E::S2Tag,
    E::Rc1S1Tag,
    E::Lc1S1Tag,
    E::S3Tag,
    E::Rc1S2Tag,
    E::S1Word,
    E::S2Word,
];

const WORD_CONTEXT: [ContextElement; 6] = [
    E::BufferTag,
    E::S1Tag,
    E::Rc1S1Tag,
    E::Lc1S1Tag,
    E::S1Word,
    E::S2Word,
];

/// Order in which elements are added in the context ablation, starting from
/// the first two.
pub const ABLATION_ORDER: [ContextElement; 8] = TRANSITION_CONTEXT;

impl ContextSpec {
    pub fn full(kind: EventKind) -> Self {
        let elements = match kind {
            EventKind::Transition | EventKind::Tag => TRANSITION_CONTEXT.to_vec(),
            EventKind::Word => WORD_CONTEXT.to_vec(),
        };
        ContextSpec { kind, elements }
    }

    /// The full spec restricted to `included`; the buffer tag of the word
    /// context is always kept.
    pub fn restricted(kind: EventKind, included: &[ContextElement]) -> Self {
        let mut spec = Self::full(kind);
        spec.elements
            .retain(|e| *e == ContextElement::BufferTag || included.contains(e));
        spec
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn without_words(mut self) -> Self {
        self.elements.retain(|e| !e.is_word());
        self
    }
}

/// Specs for the three distributions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSpecs {
    pub transition: ContextSpec,
    pub tag: ContextSpec,
    pub word: ContextSpec,
}

impl Default for ContextSpecs {
    fn default() -> Self {
        ContextSpecs {
            transition: ContextSpec::full(EventKind::Transition),
            tag: ContextSpec::full(EventKind::Tag),
            word: ContextSpec::full(EventKind::Word),
        }
    }
}

impl ContextSpecs {
    /// Specs using the first `count` elements of [`ABLATION_ORDER`].
    pub fn ablation(count: usize) -> Self {
        let included = &ABLATION_ORDER[..count.min(ABLATION_ORDER.len())];
        ContextSpecs {
            transition: ContextSpec::restricted(EventKind::Transition, included),
            tag: ContextSpec::restricted(EventKind::Tag, included),
            word: ContextSpec::restricted(EventKind::Word, included),
        }
    }

    pub fn get(&self, kind: EventKind) -> &ContextSpec {
        match kind {
            EventKind::Transition => &self.transition,
            EventKind::Tag => &self.tag,
            EventKind::Word => &self.word,
        }
    }
}

/// Static description of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: u32,
    pub num_tags: u32,
    pub num_labels: u32,
    pub lexicalised: bool,
    pub predict_labels: bool,
    pub specs: ContextSpecs,
}

impl ModelConfig {
    pub fn new(vocab_size: u32, num_tags: u32, num_labels: u32) -> Self {
        ModelConfig {
            vocab_size,
            num_tags,
            num_labels,
            lexicalised: true,
            predict_labels: true,
            specs: ContextSpecs::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.num_tags == 0 {
            return Err(Error::Settings("vocabulary and tagset must be nonempty".into()));
        }
        if self.predict_labels && self.num_labels == 0 {
            return Err(Error::Settings("label prediction needs at least one label".into()));
        }
        for (kind, spec) in [
            (EventKind::Transition, &self.specs.transition),
            (EventKind::Tag, &self.specs.tag),
            (EventKind::Word, &self.specs.word),
        ] {
            if spec.kind != kind {
                return Err(Error::Settings(format!("spec for {kind:?} has kind {:?}", spec.kind)));
            }
            if kind != EventKind::Word && spec.elements.contains(&ContextElement::BufferTag) {
                return Err(Error::Settings("buffer tag is only known when generating words".into()));
            }
        }
        Ok(())
    }

    fn effective_specs(&self) -> ContextSpecs {
        if self.lexicalised {
            self.specs.clone()
        } else {
            ContextSpecs {
                transition: self.specs.transition.clone().without_words(),
                tag: self.specs.tag.clone().without_words(),
                word: self.specs.word.clone().without_words(),
            }
        }
    }
}

/// A complete derivation of a sentence.
///
/// `transitions` excludes the unscored root shift. `shift_offsets[i]` is the
/// index in `transitions` of the shift that generates word `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Derivation {
    pub words: Vec<Symbol>,
    pub tags: Vec<Symbol>,
    pub transitions: Vec<Transition>,
    pub shift_offsets: Vec<usize>,
}

impl Derivation {
    /// Validates `transitions` as a terminal derivation of `words`.
    pub fn new(words: Vec<Symbol>, tags: Vec<Symbol>, transitions: Vec<Transition>) -> Result<Self> {
        let n = words.len();
        if tags.len() != n {
            return Err(Error::LengthMismatch(format!("{n} words but {} tags", tags.len())));
        }
        let mut c = Configuration::initial();
        c.apply_in_place(Transition::Shift, n)?;
        let mut shift_offsets = Vec::with_capacity(n);
        for (i, &t) in transitions.iter().enumerate() {
            c.apply_in_place(t, n)?;
            if t == Transition::Shift {
                shift_offsets.push(i);
            }
        }
        if !c.is_terminal(n) {
            return Err(Error::NonTerminalDerivation);
        }
        Ok(Derivation {
            words,
            tags,
            transitions,
            shift_offsets,
        })
    }

    /// The greedy-oracle derivation of a gold tree.
    pub fn from_gold(words: Vec<Symbol>, tags: Vec<Symbol>, gold: &DepTree) -> Result<Self> {
        let mut transitions = crate::transition::greedy_derivation(gold)?;
        transitions.remove(0);
        Self::new(words, tags, transitions)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// All transitions including the root shift.
    pub fn full_transitions(&self) -> Vec<Transition> {
        let mut all = Vec::with_capacity(self.transitions.len() + 1);
        all.push(Transition::Shift);
        all.extend_from_slice(&self.transitions);
        all
    }

    pub fn tree(&self) -> Result<DepTree> {
        crate::transition::derivation_to_tree(&self.full_transitions(), self.len())
    }
}

/// Raw context symbols of one configuration, one per [`ContextElement`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Features {
    vals: [Symbol; 9],
}

impl Features {
    pub fn get(&self, e: ContextElement) -> Symbol {
        self.vals[e as usize]
    }

    pub fn with_buffer_tag(mut self, tag: Symbol) -> Self {
        self.vals[ContextElement::BufferTag as usize] = tag;
        self
    }
}

/// A single generated event with its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub context: Vec<Symbol>,
    pub dish: Dish,
    /// Transition events only: the generatively legal moves at this point.
    pub legal: Legal,
}

/// Seating traces of one observed derivation, in observation order.
#[derive(Clone, Debug, Default)]
pub struct ObservationTrace {
    seats: Vec<(EventKind, SeatingTrace)>,
}

impl ObservationTrace {
    pub fn len(&self) -> usize {
        self.seats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seats.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    config: ModelConfig,
    specs: ContextSpecs,
    transitions: HpypTree,
    tags: HpypTree,
    words: HpypTree,
}

impl GenerativeModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let specs = config.effective_specs();
        let transition_dishes = if config.predict_labels {
            1 + 2 * config.num_labels
        } else {
            3
        };
        Ok(GenerativeModel {
            transitions: HpypTree::new(transition_dishes, specs.transition.len()),
            tags: HpypTree::new(config.num_tags, specs.tag.len()),
            words: HpypTree::new(config.vocab_size, specs.word.len()),
            specs,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The specs actually used (word elements removed when unlexicalised).
    pub fn specs(&self) -> &ContextSpecs {
        &self.specs
    }

    pub fn tree(&self, kind: EventKind) -> &HpypTree {
        match kind {
            EventKind::Transition => &self.transitions,
            EventKind::Tag => &self.tags,
            EventKind::Word => &self.words,
        }
    }

    pub fn tree_mut(&mut self, kind: EventKind) -> &mut HpypTree {
        match kind {
            EventKind::Transition => &mut self.transitions,
            EventKind::Tag => &mut self.tags,
            EventKind::Word => &mut self.words,
        }
    }

    pub fn null_tag(&self) -> Symbol {
        self.config.num_tags
    }

    pub fn null_word(&self) -> Symbol {
        self.config.vocab_size
    }

    pub fn num_tags(&self) -> u32 {
        self.config.num_tags
    }

    pub fn vocab_size(&self) -> u32 {
        self.config.vocab_size
    }

    pub fn num_labels(&self) -> u32 {
        self.config.num_labels
    }

    pub fn predicts_labels(&self) -> bool {
        self.config.predict_labels
    }

    pub fn is_lexicalised(&self) -> bool {
        self.config.lexicalised
    }

    /// Labels attached to reduce transitions; a single unlabelled choice when
    /// labels are not predicted.
    fn label_range(&self) -> u32 {
        if self.config.predict_labels {
            self.config.num_labels
        } else {
            1
        }
    }

    pub fn transition_dish(&self, t: Transition) -> Dish {
        if !self.config.predict_labels {
            return match t.kind() {
                TransitionKind::Shift => 0,
                TransitionKind::LeftArc => 1,
                TransitionKind::RightArc => 2,
            };
        }
        let labels = self.config.num_labels;
        match t {
            Transition::Shift => 0,
            Transition::LeftArc(l) => 1 + l,
            Transition::RightArc(l) => 1 + labels + l,
        }
    }

    pub fn dish_transition(&self, dish: Dish) -> Transition {
        let labels = self.label_range();
        match dish {
            0 => Transition::Shift,
            d if d <= labels => Transition::LeftArc(d - 1),
            d => Transition::RightArc(d - 1 - labels),
        }
    }

    /// Every transition allowed by `legal`, in dish order.
    pub fn candidate_transitions(&self, legal: Legal) -> Vec<Transition> {
        let labels = self.label_range();
        let mut out = Vec::with_capacity(1 + 2 * labels as usize);
        if legal.shift {
            out.push(Transition::Shift);
        }
        if legal.left_arc {
            out.extend((0..labels).map(Transition::LeftArc));
        }
        if legal.right_arc {
            out.extend((0..labels).map(Transition::RightArc));
        }
        out
    }

    /// Raw context symbols of `c`. `tags[i]` and `words[i]` belong to word
    /// `i + 1`; the buffer tag is read from `tags` when available. The root
    /// and absent elements map to the null symbols.
    pub fn features(&self, c: &Configuration, words: &[Symbol], tags: &[Symbol]) -> Features {
        let null_tag = self.null_tag();
        let null_word = self.null_word();
        let tag_of = |p: Option<Position>| match p {
            Some(p) if p > 0 => tags.get(p - 1).copied().unwrap_or(null_tag),
            _ => null_tag,
        };
        let word_of = |p: Option<Position>| match p {
            Some(p) if p > 0 => words.get(p - 1).copied().unwrap_or(null_word),
            _ => null_word,
        };
        let s1 = c.stack_item(1);
        let s2 = c.stack_item(2);
        let s3 = c.stack_item(3);
        let mut vals = [null_tag; 9];
        let beta = c.buffer();
        vals[E::BufferTag as usize] = if beta > 0 { tag_of(Some(beta)) } else { null_tag };
        vals[E::S1Tag as usize] = tag_of(s1);
        vals[E::S2Tag as usize] = tag_of(s2);
        vals[E::S3Tag as usize] = tag_of(s3);
        vals[E::Rc1S1Tag as usize] = tag_of(s1.and_then(|p| c.rightmost_child(p)));
        vals[E::Lc1S1Tag as usize] = tag_of(s1.and_then(|p| c.leftmost_child(p)));
        vals[E::Rc1S2Tag as usize] = tag_of(s2.and_then(|p| c.rightmost_child(p)));
        vals[E::S1Word as usize] = word_of(s1);
        vals[E::S2Word as usize] = word_of(s2);
        Features { vals }
    }

    /// The context key of `kind` for the given features.
    pub fn key(&self, kind: EventKind, f: &Features) -> Vec<Symbol> {
        self.specs.get(kind).elements.iter().map(|&e| f.get(e)).collect()
    }

    /// Context key of `kind` at configuration `c`. For words the tag of the
    /// token at the buffer must already be in `tags`.
    pub fn extract_context(
        &self,
        kind: EventKind,
        c: &Configuration,
        words: &[Symbol],
        tags: &[Symbol],
    ) -> Vec<Symbol> {
        self.key(kind, &self.features(c, words, tags))
    }

    /// Probabilities of the transitions allowed by `legal`, renormalised over
    /// that set.
    pub fn transition_probs(&self, f: &Features, legal: Legal) -> Vec<(Transition, f64)> {
        let candidates = self.candidate_transitions(legal);
        let dishes: Vec<Dish> = candidates.iter().map(|&t| self.transition_dish(t)).collect();
        let key = self.key(EventKind::Transition, f);
        let probs = self
            .transitions
            .predictive_many(&key, &dishes)
            .expect("keys and dishes are in range by construction");
        let total: f64 = probs.iter().sum();
        candidates
            .into_iter()
            .zip(probs)
            .map(|(t, p)| (t, p / total))
            .collect()
    }

    /// Transition distribution at `c` over the generatively legal moves.
    /// Shift is always among them; a right arc from the root ends the sentence.
    pub fn transition_distribution(
        &self,
        c: &Configuration,
        words: &[Symbol],
        tags: &[Symbol],
    ) -> Vec<(Transition, f64)> {
        self.transition_probs(&self.features(c, words, tags), c.generative_moves())
    }

    /// p(tag | context) for every tag.
    pub fn tag_probs(&self, f: &Features) -> Vec<f64> {
        let key = self.key(EventKind::Tag, f);
        self.tags
            .predictive_distribution(&key)
            .expect("key length matches the tree depth")
    }

    pub fn tag_distribution(&self, c: &Configuration, words: &[Symbol], tags: &[Symbol]) -> Vec<f64> {
        self.tag_probs(&self.features(c, words, tags))
    }

    /// p(word | tag, context).
    pub fn word_prob(&self, f: &Features, tag: Symbol, word: Symbol) -> Result<f64> {
        let key = self.key(EventKind::Word, &f.with_buffer_tag(tag));
        self.words.predictive_probability(&key, word)
    }

    /// Word distribution at `c`; the tag of the token at the buffer must be in
    /// `tags`.
    pub fn word_distribution(&self, c: &Configuration, words: &[Symbol], tags: &[Symbol]) -> Vec<f64> {
        let key = self.extract_context(EventKind::Word, c, words, tags);
        self.words
            .predictive_distribution(&key)
            .expect("key length matches the tree depth")
    }

    fn check_symbols(&self, d: &Derivation) -> Result<()> {
        if let Some(&w) = d.words.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(Error::DishOutOfSupport {
                dish: w,
                base_size: self.config.vocab_size,
            });
        }
        if let Some(&t) = d.tags.iter().find(|&&t| t >= self.config.num_tags) {
            return Err(Error::DishOutOfSupport {
                dish: t,
                base_size: self.config.num_tags,
            });
        }
        if self.config.predict_labels {
            if let Some(l) = d
                .transitions
                .iter()
                .filter_map(|t| t.label())
                .find(|&l| l >= self.config.num_labels)
            {
                return Err(Error::DishOutOfSupport {
                    dish: l,
                    base_size: self.config.num_labels,
                });
            }
        }
        Ok(())
    }

    /// Every event generated by `d`, in generation order.
    pub fn events(&self, d: &Derivation) -> Result<Vec<Event>> {
        self.check_symbols(d)?;
        let n = d.len();
        let mut events = Vec::with_capacity(3 * n + d.transitions.len());
        let mut c = Configuration::initial();
        c.apply_in_place(Transition::Shift, n)?;
        for &t in &d.transitions {
            let f = self.features(&c, &d.words, &d.tags);
            let legal = c.generative_moves();
            events.push(Event {
                kind: EventKind::Transition,
                context: self.key(EventKind::Transition, &f),
                dish: self.transition_dish(t),
                legal,
            });
            if t == Transition::Shift {
                let pos = c.buffer();
                if pos > n {
                    return Err(Error::IllegalTransition {
                        transition: t.to_string(),
                        config: c.to_string(),
                    });
                }
                let tag = d.tags[pos - 1];
                events.push(Event {
                    kind: EventKind::Tag,
                    context: self.key(EventKind::Tag, &f),
                    dish: tag,
                    legal: Legal::default(),
                });
                events.push(Event {
                    kind: EventKind::Word,
                    context: self.key(EventKind::Word, &f.with_buffer_tag(tag)),
                    dish: d.words[pos - 1],
                    legal: Legal::default(),
                });
            }
            c.apply_in_place(t, n)?;
        }
        if !c.is_terminal(n) {
            return Err(Error::NonTerminalDerivation);
        }
        Ok(events)
    }

    /// Log probability of one event under the current seating.
    pub fn event_log_prob(&self, e: &Event) -> Result<f64> {
        let tree = self.tree(e.kind);
        match e.kind {
            EventKind::Transition => {
                let dishes: Vec<Dish> = self
                    .candidate_transitions(e.legal)
                    .into_iter()
                    .map(|t| self.transition_dish(t))
                    .collect();
                if !dishes.contains(&e.dish) {
                    return Err(Error::IllegalTransition {
                        transition: self.dish_transition(e.dish).to_string(),
                        config: "replayed configuration".into(),
                    });
                }
                let probs = tree.predictive_many(&e.context, &dishes)?;
                let total: f64 = probs.iter().sum();
                let own = tree.predictive_probability(&e.context, e.dish)?;
                Ok((own / total).ln())
            }
            EventKind::Tag | EventKind::Word => Ok(tree.predictive_probability(&e.context, e.dish)?.ln()),
        }
    }

    /// Log joint probability of the tags, words and transitions of `d`.
    pub fn joint_log_probability(&self, d: &Derivation) -> Result<f64> {
        let mut total = 0.0;
        for e in self.events(d)? {
            total += self.event_log_prob(&e)?;
        }
        Ok(total)
    }

    /// Adds one customer per event of `d`.
    pub fn observe<R: Rng + ?Sized>(&mut self, d: &Derivation, rng: &mut R) -> Result<ObservationTrace> {
        self.observe_filtered(d, rng, |_| true)
    }

    /// Adds customers for the word events of `d` only.
    pub fn observe_words<R: Rng + ?Sized>(&mut self, d: &Derivation, rng: &mut R) -> Result<ObservationTrace> {
        self.observe_filtered(d, rng, |k| k == EventKind::Word)
    }

    fn observe_filtered<R: Rng + ?Sized>(
        &mut self,
        d: &Derivation,
        rng: &mut R,
        keep: impl Fn(EventKind) -> bool,
    ) -> Result<ObservationTrace> {
        let events = self.events(d)?;
        let mut trace = ObservationTrace::default();
        for e in events.into_iter().filter(|e| keep(e.kind)) {
            let seat = self.tree_mut(e.kind).add_customer(&e.context, e.dish, rng)?;
            trace.seats.push((e.kind, seat));
        }
        Ok(trace)
    }

    /// Removes the customers recorded in `trace`, newest first.
    pub fn forget(&mut self, trace: &ObservationTrace) -> Result<()> {
        for (kind, seat) in trace.seats.iter().rev() {
            self.tree_mut(*kind).remove_customer(seat)?;
        }
        Ok(())
    }

    /// Resamples the hyperparameters of all three trees.
    pub fn resample_hyperparameters<R: Rng + ?Sized>(&mut self, rng: &mut R, iterations: usize) {
        for kind in [EventKind::Transition, EventKind::Tag, EventKind::Word] {
            self.tree_mut(kind).resample_hyperparameters(rng, iterations);
        }
    }

    /// Number of observed events: customers at the deepest level of each tree.
    pub fn event_count(&self) -> u64 {
        [&self.transitions, &self.tags, &self.words]
            .iter()
            .map(|t| t.customers_at_level(t.depth()))
            .sum()
    }

    pub fn total_customers(&self) -> u64 {
        self.transitions.total_customers() + self.tags.total_customers() + self.words.total_customers()
    }

    pub fn audit(&self) -> Result<()> {
        self.transitions.audit()?;
        self.tags.audit()?;
        self.words.audit()
    }
}
