//! Arc-standard transition system with the root node at position 0.
//!
//! Words occupy positions `1..=n`. The first shift of every derivation pushes
//! the root; after that each shift generates one word. An arc from the root can
//! only be added as the last transition, so the root gets exactly one
//! dependent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = usize;
pub type LabelId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionKind {
    Shift,
    LeftArc,
    RightArc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    Shift,
    LeftArc(LabelId),
    RightArc(LabelId),
}

impl Transition {
    pub fn kind(self) -> TransitionKind {
        match self {
            Transition::Shift => TransitionKind::Shift,
            Transition::LeftArc(_) => TransitionKind::LeftArc,
            Transition::RightArc(_) => TransitionKind::RightArc,
        }
    }

    pub fn label(self) -> Option<LabelId> {
        match self {
            Transition::Shift => None,
            Transition::LeftArc(l) | Transition::RightArc(l) => Some(l),
        }
    }

    pub fn is_reduce(self) -> bool {
        self != Transition::Shift
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Shift => write!(f, "sh"),
            Transition::LeftArc(l) => write!(f, "la({l})"),
            Transition::RightArc(l) => write!(f, "ra({l})"),
        }
    }
}

/// A labelled dependency `head -> dependent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Arc {
    pub head: Position,
    pub dependent: Position,
    pub label: LabelId,
}

/// Which transition kinds are currently allowed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Legal {
    pub shift: bool,
    pub left_arc: bool,
    pub right_arc: bool,
}

impl Legal {
    pub fn allows(self, kind: TransitionKind) -> bool {
        match kind {
            TransitionKind::Shift => self.shift,
            TransitionKind::LeftArc => self.left_arc,
            TransitionKind::RightArc => self.right_arc,
        }
    }

    pub fn kinds(self) -> Vec<TransitionKind> {
        let mut kinds = Vec::with_capacity(3);
        if self.shift {
            kinds.push(TransitionKind::Shift);
        }
        if self.left_arc {
            kinds.push(TransitionKind::LeftArc);
        }
        if self.right_arc {
            kinds.push(TransitionKind::RightArc);
        }
        kinds
    }

    pub fn any_reduce(self) -> bool {
        self.left_arc || self.right_arc
    }
}

/// Parser state: stack, index of the next word, and the arcs built so far.
///
/// Per-position arrays cover positions `0..buffer` (everything shifted).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    stack: Vec<Position>,
    buffer: Position,
    heads: Vec<Option<(Position, LabelId)>>,
    leftmost: Vec<Option<Position>>,
    rightmost: Vec<Option<Position>>,
    children: Vec<u32>,
}

impl Default for Configuration {
    fn default() -> Self {
        Self::initial()
    }
}

impl Configuration {
    /// `([], 0, {})`.
    pub fn initial() -> Self {
        Configuration {
            stack: Vec::new(),
            buffer: 0,
            heads: Vec::new(),
            leftmost: Vec::new(),
            rightmost: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn stack(&self) -> &[Position] {
        &self.stack
    }

    /// Next position to be shifted.
    pub fn buffer(&self) -> Position {
        self.buffer
    }

    /// Number of words shifted so far (the root excluded).
    pub fn words_shifted(&self) -> usize {
        self.buffer.saturating_sub(1)
    }

    /// `σ_i`, counting from the top of the stack starting at 1.
    pub fn stack_item(&self, i: usize) -> Option<Position> {
        debug_assert!(i >= 1);
        self.stack.len().checked_sub(i).map(|idx| self.stack[idx])
    }

    pub fn head(&self, pos: Position) -> Option<(Position, LabelId)> {
        self.heads.get(pos).copied().flatten()
    }

    pub fn leftmost_child(&self, pos: Position) -> Option<Position> {
        self.leftmost.get(pos).copied().flatten()
    }

    pub fn rightmost_child(&self, pos: Position) -> Option<Position> {
        self.rightmost.get(pos).copied().flatten()
    }

    pub fn child_count(&self, pos: Position) -> u32 {
        self.children.get(pos).copied().unwrap_or(0)
    }

    pub fn arcs(&self) -> Vec<Arc> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(dependent, h)| {
                h.map(|(head, label)| Arc {
                    head,
                    dependent,
                    label,
                })
            })
            .collect()
    }

    /// Legal transition kinds when parsing a sentence of `n` words.
    pub fn legal_transitions(&self, n: usize) -> Legal {
        let two = self.stack.len() >= 2;
        let second_is_root = two && self.stack[self.stack.len() - 2] == 0;
        Legal {
            shift: self.buffer <= n,
            left_arc: two && !second_is_root,
            right_arc: two && (!second_is_root || self.buffer > n),
        }
    }

    /// Legal transition kinds when the sentence length is not fixed: shift is
    /// always possible and a right arc from the root ends the sentence.
    pub fn generative_moves(&self) -> Legal {
        let two = self.stack.len() >= 2;
        let second_is_root = two && self.stack[self.stack.len() - 2] == 0;
        Legal {
            shift: true,
            left_arc: two && !second_is_root,
            right_arc: two,
        }
    }

    /// Terminal iff all `n` words are shifted and only the root remains.
    pub fn is_terminal(&self, n: usize) -> bool {
        self.buffer > n && self.stack.len() == 1 && self.stack[0] == 0
    }

    /// Applies `t` for a sentence of `n` words.
    pub fn apply(&self, t: Transition, n: usize) -> Result<Configuration> {
        let mut next = self.clone();
        next.apply_in_place(t, n)?;
        Ok(next)
    }

    pub fn apply_in_place(&mut self, t: Transition, n: usize) -> Result<()> {
        if !self.legal_transitions(n).allows(t.kind()) {
            return Err(self.illegal(t));
        }
        self.execute(t);
        Ok(())
    }

    /// Applies `t` under [`Configuration::generative_moves`] legality.
    pub fn apply_generative(&mut self, t: Transition) -> Result<()> {
        // The first shift pushes the root.
        if !self.generative_moves().allows(t.kind()) {
            return Err(self.illegal(t));
        }
        self.execute(t);
        Ok(())
    }

    fn illegal(&self, t: Transition) -> Error {
        Error::IllegalTransition {
            transition: t.to_string(),
            config: self.to_string(),
        }
    }

    fn execute(&mut self, t: Transition) {
        match t {
            Transition::Shift => {
                self.stack.push(self.buffer);
                self.buffer += 1;
                self.heads.push(None);
                self.leftmost.push(None);
                self.rightmost.push(None);
                self.children.push(0);
            }
            Transition::LeftArc(label) => {
                let top = self.stack.pop().expect("checked legality");
                let second = self.stack.pop().expect("checked legality");
                self.stack.push(top);
                self.attach(top, second, label);
            }
            Transition::RightArc(label) => {
                let top = self.stack.pop().expect("checked legality");
                let second = *self.stack.last().expect("checked legality");
                self.attach(second, top, label);
            }
        }
    }

    fn attach(&mut self, head: Position, dependent: Position, label: LabelId) {
        self.heads[dependent] = Some((head, label));
        self.children[head] += 1;
        let lm = &mut self.leftmost[head];
        if lm.is_none_or(|l| dependent < l) {
            *lm = Some(dependent);
        }
        let rm = &mut self.rightmost[head];
        if rm.is_none_or(|r| dependent > r) {
            *rm = Some(dependent);
        }
    }

    /// Checks the structural invariants; used by tests and debug assertions.
    pub fn audit(&self) -> std::result::Result<(), String> {
        if self.stack.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("stack not increasing: {:?}", self.stack));
        }
        if self.stack.first().is_some_and(|&p| p != 0) {
            return Err("stack bottom is not the root".into());
        }
        let len = self.buffer;
        if self.heads.len() != len || self.leftmost.len() != len || self.rightmost.len() != len {
            return Err("per-position arrays out of sync with buffer".into());
        }
        let mut children = vec![0u32; len];
        let mut lm: Vec<Option<Position>> = vec![None; len];
        let mut rm: Vec<Option<Position>> = vec![None; len];
        for arc in self.arcs() {
            if arc.dependent == 0 || arc.head == arc.dependent {
                return Err(format!("bad arc {arc:?}"));
            }
            if self.stack.contains(&arc.dependent) {
                return Err(format!("attached position {} still on stack", arc.dependent));
            }
            children[arc.head] += 1;
            lm[arc.head] = Some(lm[arc.head].map_or(arc.dependent, |l| l.min(arc.dependent)));
            rm[arc.head] = Some(rm[arc.head].map_or(arc.dependent, |r| r.max(arc.dependent)));
        }
        if children != self.children || lm != self.leftmost || rm != self.rightmost {
            return Err("child indices disagree with arcs".into());
        }
        Ok(())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(stack={:?}, buffer={}, arcs={})", self.stack, self.buffer, self.arcs().len())
    }
}

/// A dependency tree over words `1..=n`; position 0 is the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepTree {
    heads: Vec<Position>,
    labels: Vec<LabelId>,
}

impl DepTree {
    /// `heads[i]` and `labels[i]` describe word `i + 1`. The tree must be
    /// acyclic with exactly one dependent of the root.
    pub fn new(heads: Vec<Position>, labels: Vec<LabelId>) -> Result<Self> {
        let tree = DepTree { heads, labels };
        tree.validate()?;
        Ok(tree)
    }

    /// Unlabelled tree (every label 0).
    pub fn from_heads(heads: Vec<Position>) -> Result<Self> {
        let labels = vec![0; heads.len()];
        Self::new(heads, labels)
    }

    fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if self.labels.len() != n {
            return Err(Error::InvalidTree("heads and labels differ in length".into()));
        }
        if n == 0 {
            return Err(Error::InvalidTree("empty sentence".into()));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n {
                return Err(Error::InvalidTree(format!("word {} has head {h} > {n}", i + 1)));
            }
            if h == i + 1 {
                return Err(Error::InvalidTree(format!("word {} heads itself", i + 1)));
            }
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::InvalidTree(format!("{roots} dependents of the root")));
        }
        for start in 1..=n {
            let mut pos = start;
            for _ in 0..=n {
                pos = self.heads[pos - 1];
                if pos == 0 {
                    break;
                }
            }
            if pos != 0 {
                return Err(Error::InvalidTree(format!("cycle through word {start}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Head of word `pos` (1-based).
    pub fn head(&self, pos: Position) -> Position {
        self.heads[pos - 1]
    }

    pub fn label(&self, pos: Position) -> LabelId {
        self.labels[pos - 1]
    }

    pub fn heads(&self) -> &[Position] {
        &self.heads
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn arcs(&self) -> Vec<Arc> {
        (1..=self.len())
            .map(|d| Arc {
                head: self.head(d),
                dependent: d,
                label: self.label(d),
            })
            .collect()
    }

    /// Number of dependents of `pos` (0 is the root).
    pub fn child_count(&self, pos: Position) -> u32 {
        self.heads.iter().filter(|&&h| h == pos).count() as u32
    }

    /// True if `pos` has a dependent at a position `>= from`.
    pub fn has_child_from(&self, pos: Position, from: Position) -> bool {
        (from.max(1)..=self.len()).any(|d| self.heads[d - 1] == pos)
    }
}

fn arc_is_valid(c: &Configuration, gold: &DepTree, head: Position, dependent: Position) -> bool {
    dependent != 0
        && dependent <= gold.len()
        && gold.head(dependent) == head
        && c.child_count(dependent) == gold.child_count(dependent)
}

/// Every transition from `c` after which `gold` is still derivable.
///
/// A valid right arc is forced. A valid left arc may be delayed by a shift
/// while `σ1` still has gold dependents to the right of the buffer.
pub fn oracle_choices(c: &Configuration, gold: &DepTree) -> Result<Vec<Transition>> {
    let n = gold.len();
    if c.stack().is_empty() {
        return Ok(vec![Transition::Shift]);
    }
    if let (Some(s1), Some(s2)) = (c.stack_item(1), c.stack_item(2)) {
        if arc_is_valid(c, gold, s2, s1) && c.legal_transitions(n).right_arc {
            return Ok(vec![Transition::RightArc(gold.label(s1))]);
        }
        if s2 != 0 && arc_is_valid(c, gold, s1, s2) {
            let left = Transition::LeftArc(gold.label(s2));
            if c.buffer() <= n && gold.has_child_from(s1, c.buffer()) {
                return Ok(vec![left, Transition::Shift]);
            }
            return Ok(vec![left]);
        }
    }
    if c.buffer() <= n {
        Ok(vec![Transition::Shift])
    } else {
        Err(Error::NoOracleContinuation(format!("{c}")))
    }
}

/// Deterministic oracle: reduces as soon as a valid arc exists.
pub fn greedy_oracle(c: &Configuration, gold: &DepTree) -> Result<Transition> {
    Ok(oracle_choices(c, gold)?[0])
}

/// The full greedy derivation of `gold`, including the root shift.
pub fn greedy_derivation(gold: &DepTree) -> Result<Vec<Transition>> {
    let n = gold.len();
    let mut c = Configuration::initial();
    let mut out = Vec::with_capacity(2 * n + 1);
    while !c.is_terminal(n) {
        let t = greedy_oracle(&c, gold)?;
        c.apply_in_place(t, n)?;
        out.push(t);
    }
    let built = tree_of(&c, n)?;
    if built != *gold {
        return Err(Error::NoOracleContinuation(
            "greedy derivation does not reproduce the gold tree".into(),
        ));
    }
    Ok(out)
}

fn tree_of(c: &Configuration, n: usize) -> Result<DepTree> {
    let mut heads = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for pos in 1..=n {
        let (h, l) = c
            .head(pos)
            .ok_or_else(|| Error::InvalidTree(format!("word {pos} has no head")))?;
        heads.push(h);
        labels.push(l);
    }
    DepTree::new(heads, labels)
}

/// Replays a complete transition sequence (root shift included) for a
/// sentence of `n` words and returns the resulting tree.
pub fn derivation_to_tree(transitions: &[Transition], n: usize) -> Result<DepTree> {
    let mut c = Configuration::initial();
    for &t in transitions {
        c.apply_in_place(t, n)?;
    }
    if !c.is_terminal(n) {
        return Err(Error::NonTerminalDerivation);
    }
    tree_of(&c, n)
}
