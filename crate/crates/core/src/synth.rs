//! A synthetic English-like dependency treebank.
//!
//! Sentences come from a small head-driven grammar with verb frames, noun
//! phrases with determiners, adjectives, numbers and coordination, adverbs,
//! clausal complements and prepositional phrases whose attachment depends
//! on the words involved: instruments attach to the verb, accessories to the
//! object noun. Trees are projective by construction. Tags follow Penn
//! Treebank conventions and labels follow Stanford-style names.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{SentenceRecord, TokenRecord};

struct Node {
    form: String,
    tag: &'static str,
    label: &'static str,
    left: Vec<Node>,
    right: Vec<Node>,
}

impl Node {
    fn leaf(form: &str, tag: &'static str, label: &'static str) -> Self {
        Node {
            form: form.to_string(),
            tag,
            label,
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    fn with_label(mut self, label: &'static str) -> Self {
        self.label = label;
        self
    }

    /// Appends tokens in surface order under `head`; returns this node's
    /// position.
    fn linearize(self, head: usize, out: &mut Vec<TokenRecord>) -> usize {
        // Left children precede the head, whose position is known only after
        // they are emitted.
        let left: Vec<usize> = self.left.into_iter().map(|c| c.linearize(0, out)).collect();
        let me = out.len() + 1;
        out.push(TokenRecord {
            form: self.form,
            tag: self.tag.to_string(),
            head: Some(head),
            label: self.label.to_string(),
        });
        for pos in left {
            out[pos - 1].head = Some(me);
        }
        for child in self.right {
            child.linearize(me, out);
        }
        me
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NounClass {
    Food,
    Instrument,
    Person,
    Place,
    Accessory,
    Thing,
}

const FOOD: &[&str] = &["pizza", "soup", "bread", "cake", "salad", "pasta", "apple", "rice", "fish", "pie"];
const INSTRUMENT: &[&str] = &["fork", "spoon", "knife", "telescope", "hammer", "brush", "saw", "stick", "camera"];
const PERSON: &[&str] = &[
    "man", "woman", "boy", "girl", "doctor", "teacher", "child", "farmer", "student", "friend", "baker",
];
const PLACE: &[&str] = &["park", "kitchen", "garden", "house", "city", "school", "store", "forest", "station"];
const ACCESSORY: &[&str] = &["hat", "cheese", "sauce", "beard", "scarf", "glasses", "stripes", "nuts", "ribbon"];
const THING: &[&str] = &["book", "letter", "car", "box", "ball", "picture", "door", "watch", "lamp", "song"];
const NAMES: &[&str] = &["John", "Mary", "Alice", "Smith", "Peter", "Anna"];
const PLACE_NAMES: &[&str] = &["Paris", "London", "Boston", "Rome"];
const ADJECTIVES: &[&str] = &[
    "big", "small", "old", "red", "happy", "quick", "green", "strange", "tall", "young", "cold", "new",
];
const ADVERBS: &[&str] = &["quickly", "slowly", "often", "never", "always", "yesterday", "today", "again"];
const NUMBERS: &[&str] = &["two", "three", "five", "10", "12", "1984"];
const MODALS: &[&str] = &["will", "can", "could", "would", "must"];
const RARE_STEMS: &[&str] = &[
    "zorv", "plim", "quant", "drebb", "skel", "morth", "vint", "glab", "trusk", "fenn", "brom", "cald", "yurt",
    "wexl", "pland", "snor", "klip", "gorm", "hesk", "jund",
];
const RARE_SUFFIXES: &[&str] = &["ion", "er", "ity", "al", "s", "", "ing"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum VerbClass {
    Eat,
    See,
    Move,
    Give,
    Say,
}

/// Past, present third person, base.
type VerbForms = (&'static str, &'static str, &'static str);

const EAT: &[VerbForms] = &[("ate", "eats", "eat"), ("cooked", "cooks", "cook"), ("cut", "cuts", "cut"), ("served", "serves", "serve")];
const SEE: &[VerbForms] = &[
    ("saw", "sees", "see"),
    ("watched", "watches", "watch"),
    ("found", "finds", "find"),
    ("liked", "likes", "like"),
    ("met", "meets", "meet"),
];
const MOVE: &[VerbForms] = &[
    ("walked", "walks", "walk"),
    ("ran", "runs", "run"),
    ("went", "goes", "go"),
    ("slept", "sleeps", "sleep"),
    ("arrived", "arrives", "arrive"),
];
const GIVE: &[VerbForms] = &[("gave", "gives", "give"), ("sent", "sends", "send"), ("showed", "shows", "show")];
const SAY: &[VerbForms] = &[("said", "says", "say"), ("thought", "thinks", "think"), ("knew", "knows", "know")];

struct Grammar {
    rng: ChaCha8Rng,
}

impl Grammar {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    /// Zipf-weighted choice.
    fn zipf<T: Copy>(&mut self, items: &[T]) -> T {
        let weights: Vec<f64> = (0..items.len()).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let index = WeightedIndex::new(weights).expect("nonempty item list");
        items[index.sample(&mut self.rng)]
    }

    fn rare_word(&mut self) -> String {
        let stem = RARE_STEMS[self.rng.gen_range(0..RARE_STEMS.len())];
        let suffix = RARE_SUFFIXES[self.rng.gen_range(0..RARE_SUFFIXES.len())];
        format!("{stem}{suffix}")
    }

    fn noun_word(&mut self, class: NounClass) -> (String, &'static str) {
        if self.chance(0.04) {
            let w = self.rare_word();
            let tag = if w.ends_with('s') { "NNS" } else { "NN" };
            return (w, tag);
        }
        let list = match class {
            NounClass::Food => FOOD,
            NounClass::Instrument => INSTRUMENT,
            NounClass::Person => PERSON,
            NounClass::Place => PLACE,
            NounClass::Accessory => ACCESSORY,
            NounClass::Thing => THING,
        };
        let w = self.zipf(list);
        if class != NounClass::Accessory && self.chance(0.2) {
            let plural = match w {
                "man" => "men".to_string(),
                "woman" => "women".to_string(),
                "child" => "children".to_string(),
                "box" => "boxes".to_string(),
                "watch" => "watches".to_string(),
                "glasses" | "fish" | "rice" => w.to_string(),
                _ => format!("{w}s"),
            };
            return (plural, "NNS");
        }
        let tag = if w.ends_with('s') && class == NounClass::Accessory { "NNS" } else { "NN" };
        (w.to_string(), tag)
    }

    /// A noun phrase headed by a noun of `class`; `label` is its relation.
    fn noun_phrase(&mut self, class: NounClass, label: &'static str, allow_coord: bool) -> Node {
        if class == NounClass::Person && self.chance(0.15) {
            return Node::leaf(self.zipf(NAMES), "NNP", label);
        }
        if class == NounClass::Place && self.chance(0.15) {
            return Node::leaf(self.zipf(PLACE_NAMES), "NNP", label);
        }
        let (form, tag) = self.noun_word(class);
        let mut head = Node::leaf(&form, tag, label);
        if self.chance(0.1) && matches!(class, NounClass::Thing | NounClass::Food) {
            let (m, _) = self.noun_word(NounClass::Place);
            head.left.push(Node::leaf(&m, "NN", "nn"));
        }
        let mut adjectives = 0;
        while adjectives < 2 && self.chance(if adjectives == 0 { 0.3 } else { 0.15 }) {
            let adj = if self.chance(0.05) {
                format!("{}al", self.rare_word())
            } else {
                self.zipf(ADJECTIVES).to_string()
            };
            head.left.insert(0, Node::leaf(&adj, "JJ", "amod"));
            adjectives += 1;
        }
        if tag == "NNS" {
            if self.chance(0.3) {
                head.left.insert(0, Node::leaf(self.zipf(NUMBERS), "CD", "num"));
            } else if self.chance(0.4) {
                head.left.insert(0, Node::leaf(self.zipf(&["the", "some", "these"]), "DT", "det"));
            }
        } else if self.chance(0.9) {
            head.left.insert(0, Node::leaf(self.zipf(&["the", "a", "this", "every"]), "DT", "det"));
        }
        if allow_coord && self.chance(0.07) {
            head.right.push(Node::leaf(self.zipf(&["and", "or"]), "CC", "cc"));
            let conj = self.noun_phrase(class, "conj", false);
            head.right.push(conj);
        }
        head
    }

    fn pronoun(&mut self, subject: bool) -> Node {
        if subject {
            Node::leaf(self.zipf(&["he", "she", "they", "we", "it"]), "PRP", "nsubj")
        } else {
            Node::leaf(self.zipf(&["him", "her", "them", "it"]), "PRP", "dobj")
        }
    }

    fn pp(&mut self, prep: &str, class: NounClass) -> Node {
        let mut p = Node::leaf(prep, "IN", "prep");
        let obj = self.noun_phrase(class, "pobj", false);
        p.right.push(obj);
        p
    }

    fn subject(&mut self) -> Node {
        if self.chance(0.2) {
            return self.pronoun(true);
        }
        let mut np = self.noun_phrase(NounClass::Person, "nsubj", true);
        if self.chance(0.12) {
            let prep = self.zipf(&["in", "from", "near"]);
            let pp = self.pp(prep, NounClass::Place);
            np.right.push(pp);
        }
        np
    }

    /// A clause headed by a verb; `depth` limits embedding.
    fn clause(&mut self, depth: usize) -> Node {
        let class = self.zipf(&[VerbClass::See, VerbClass::Eat, VerbClass::Move, VerbClass::Say, VerbClass::Give]);
        let class = if depth > 0 && class == VerbClass::Say { VerbClass::See } else { class };
        let forms = self.zipf(match class {
            VerbClass::Eat => EAT,
            VerbClass::See => SEE,
            VerbClass::Move => MOVE,
            VerbClass::Give => GIVE,
            VerbClass::Say => SAY,
        });
        let modal = self.chance(0.15);
        let (form, tag) = if modal {
            (forms.2, "VB")
        } else if self.chance(0.65) {
            (forms.0, "VBD")
        } else {
            (forms.1, "VBZ")
        };
        let mut verb = Node::leaf(form, tag, "root");
        verb.left.push(self.subject());
        if modal {
            verb.left.push(Node::leaf(self.zipf(MODALS), "MD", "aux"));
        } else if self.chance(0.08) {
            verb.left.push(Node::leaf(self.zipf(&["often", "never", "always"]), "RB", "advmod"));
        }
        match class {
            VerbClass::Eat => {
                let obj = if self.chance(0.1) {
                    self.pronoun(false)
                } else {
                    self.noun_phrase(NounClass::Food, "dobj", true)
                };
                self.object_with_pp(verb, obj, NounClass::Instrument, NounClass::Accessory)
            }
            VerbClass::See => {
                let obj = if self.chance(0.15) {
                    self.pronoun(false)
                } else {
                    let class = if self.chance(0.6) { NounClass::Person } else { NounClass::Thing };
                    self.noun_phrase(class, "dobj", true)
                };
                self.object_with_pp(verb, obj, NounClass::Instrument, NounClass::Accessory)
            }
            VerbClass::Move => {
                if self.chance(0.7) {
                    let prep = self.zipf(&["to", "in", "near", "from"]);
                    let pp = self.pp(prep, NounClass::Place);
                    verb.right.push(pp);
                }
                self.finish_clause(verb)
            }
            VerbClass::Give => {
                let obj = self.noun_phrase(NounClass::Thing, "dobj", true);
                verb.right.push(obj);
                if self.chance(0.8) {
                    let pp = self.pp("to", NounClass::Person);
                    verb.right.push(pp);
                }
                self.finish_clause(verb)
            }
            VerbClass::Say => {
                if self.chance(0.7) {
                    let mut inner = self.clause(depth + 1).with_label("ccomp");
                    if self.chance(0.7) {
                        inner.left.insert(0, Node::leaf("that", "IN", "mark"));
                    }
                    verb.right.push(inner);
                    verb
                } else {
                    let mut obj = self.noun_phrase(NounClass::Thing, "dobj", false);
                    if self.chance(0.5) {
                        let pp = self.pp("about", NounClass::Person);
                        obj.right.push(pp);
                    }
                    verb.right.push(obj);
                    self.finish_clause(verb)
                }
            }
        }
    }

    /// Attaches the object and an optional "with" phrase: instruments modify
    /// the verb, accessories the object noun.
    fn object_with_pp(&mut self, mut verb: Node, mut obj: Node, verb_class: NounClass, noun_class: NounClass) -> Node {
        let pronoun = obj.tag == "PRP";
        if self.chance(0.45) {
            if !pronoun && self.chance(0.5) {
                let pp = self.pp("with", noun_class);
                obj.right.push(pp);
                verb.right.push(obj);
            } else {
                verb.right.push(obj);
                let pp = self.pp("with", verb_class);
                verb.right.push(pp);
            }
        } else {
            verb.right.push(obj);
        }
        if self.chance(0.15) {
            let prep = self.zipf(&["in", "at", "near"]);
            let pp = self.pp(prep, NounClass::Place);
            verb.right.push(pp);
        }
        self.finish_clause(verb)
    }

    fn finish_clause(&mut self, mut verb: Node) -> Node {
        if self.chance(0.15) {
            verb.right.push(Node::leaf(self.zipf(ADVERBS), "RB", "advmod"));
        }
        verb
    }

    fn sentence(&mut self) -> Vec<TokenRecord> {
        let mut root = self.clause(0);
        if self.chance(0.1) {
            root.left.insert(0, Node::leaf(",", ",", "punct"));
            root.left.insert(0, Node::leaf(self.zipf(&["yesterday", "today", "often"]), "RB", "advmod"));
        }
        root.right.push(Node::leaf(".", ".", "punct"));
        let mut tokens = Vec::new();
        root.linearize(0, &mut tokens);
        if let Some(first) = tokens.first_mut() {
            let mut chars = first.form.chars();
            if let Some(c) = chars.next() {
                if first.tag != "NNP" {
                    first.form = c.to_uppercase().collect::<String>() + chars.as_str();
                }
            }
        }
        tokens
    }
}

/// `count` sentences drawn with `seed`.
pub fn synthetic_treebank(seed: u64, count: usize) -> Vec<SentenceRecord> {
    let mut g = Grammar {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    (0..count)
        .map(|i| SentenceRecord {
            tokens: g.sentence(),
            source: format!("synthetic-{seed}"),
            lines: (i + 1, i + 1),
        })
        .collect()
}

/// The default 500-sentence training and 100-sentence development split.
pub fn synthetic_split() -> (Vec<SentenceRecord>, Vec<SentenceRecord>) {
    (synthetic_treebank(20_240_601, 500), synthetic_treebank(20_240_602, 100))
}
