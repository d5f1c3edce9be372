//! Hierarchical Pitman-Yor processes in the Chinese restaurant franchise
//! representation.
//!
//! A [`HpypTree`] holds one level of restaurants per context length
//! `0..=depth`. The restaurant for a context backs off to the restaurant whose
//! context drops the last element; the empty-context restaurant backs off to a
//! uniform distribution over `base_size` dishes. Restaurants are created only
//! when a customer sits down, so a missing restaurant behaves as an empty one.
//!
//! Every table keeps a link to the table in the parent restaurant that served
//! its dish. Customers can therefore be removed from exactly the table they
//! joined, in any order, using the [`SeatingTrace`] returned on insertion.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::slice_sample;

pub type Dish = u32;
pub type Symbol = u32;

/// Hash map with a fixed hasher: iteration order depends only on the insertion
/// history, which keeps seeded runs reproducible.
pub(crate) type StableMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// Shape and rate of the Gamma prior on `strength + discount`.
const STRENGTH_PRIOR_SHAPE: f64 = 1.0;
const STRENGTH_PRIOR_RATE: f64 = 0.1;
const DISCOUNT_SLICE_WIDTH: f64 = 0.1;
const STRENGTH_SLICE_WIDTH: f64 = 1.0;

/// Discount and strength of one back-off level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PypParams {
    pub discount: f64,
    pub strength: f64,
}

impl PypParams {
    pub fn new(discount: f64, strength: f64) -> Self {
        PypParams { discount, strength }
    }

    pub fn is_valid(&self) -> bool {
        self.discount.is_finite()
            && self.strength.is_finite()
            && (0.0..1.0).contains(&self.discount)
            && self.strength > -self.discount
    }
}

impl Default for PypParams {
    fn default() -> Self {
        PypParams {
            discount: 0.5,
            strength: 1.0,
        }
    }
}

/// Per-level hyperparameters, indexed by context length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    levels: Vec<PypParams>,
}

impl Hyperparams {
    pub fn new(levels: Vec<PypParams>) -> Result<Self> {
        for (level, p) in levels.iter().enumerate() {
            if !p.is_valid() {
                return Err(Error::InvalidHyperparams {
                    level,
                    discount: p.discount,
                    strength: p.strength,
                });
            }
        }
        Ok(Hyperparams { levels })
    }

    /// Default parameters for a tree with contexts up to length `depth`.
    pub fn uniform(depth: usize, params: PypParams) -> Self {
        Hyperparams {
            levels: vec![params; depth + 1],
        }
    }

    pub fn level(&self, level: usize) -> PypParams {
        self.levels[level]
    }

    pub fn levels(&self) -> &[PypParams] {
        &self.levels
    }
}

/// Identifies one table of a dish inside a restaurant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableRef {
    pub slot: u32,
    /// Tree-wide unique id of the table, never reused.
    pub id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Table {
    size: u32,
    id: u64,
    parent: Option<TableRef>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct DishTables {
    customers: u32,
    tables: u32,
    slots: Vec<Table>,
    free: Vec<u32>,
}

impl DishTables {
    fn live(&self) -> impl Iterator<Item = (u32, &Table)> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, t)| t.size > 0)
            .map(|(i, t)| (i as u32, t))
    }

    fn sorted_sizes(&self) -> Vec<u32> {
        let mut sizes: Vec<u32> = self.live().map(|(_, t)| t.size).collect();
        sizes.sort_unstable();
        sizes
    }

    fn open(&mut self, parent: Option<TableRef>, id: u64) -> TableRef {
        self.customers += 1;
        self.tables += 1;
        let table = Table { size: 1, id, parent };
        let slot = match self.free.pop() {
            Some(slot) => {
                self.slots[slot as usize] = table;
                slot
            }
            None => {
                self.slots.push(table);
                self.slots.len() as u32 - 1
            }
        };
        TableRef { slot, id }
    }

    fn table_mut(&mut self, at: TableRef) -> Option<&mut Table> {
        self.slots
            .get_mut(at.slot as usize)
            .filter(|t| t.size > 0 && t.id == at.id)
    }
}

/// Per-dish customer and table counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DishCounts {
    pub customers: u32,
    pub tables: u32,
}

/// One Chinese restaurant: the seating arrangement of a single context.
#[derive(Clone, Debug, Default)]
pub struct Restaurant {
    dishes: StableMap<Dish, DishTables>,
    customers: u32,
    tables: u32,
}

impl PartialEq for Restaurant {
    /// Compares the observable seating: totals, and for every dish its counts
    /// and the multiset of table sizes.
    fn eq(&self, other: &Self) -> bool {
        self.customers == other.customers
            && self.tables == other.tables
            && self.dishes.len() == other.dishes.len()
            && self.dishes.iter().all(|(dish, mine)| {
                other.dishes.get(dish).is_some_and(|theirs| {
                    mine.customers == theirs.customers
                        && mine.tables == theirs.tables
                        && mine.sorted_sizes() == theirs.sorted_sizes()
                })
            })
    }
}

impl Restaurant {
    pub fn customers(&self) -> u32 {
        self.customers
    }

    pub fn tables(&self) -> u32 {
        self.tables
    }

    pub fn dish_counts(&self, dish: Dish) -> DishCounts {
        self.dishes
            .get(&dish)
            .map(|d| DishCounts {
                customers: d.customers,
                tables: d.tables,
            })
            .unwrap_or_default()
    }

    /// Dishes with at least one customer, in ascending order.
    pub fn dishes(&self) -> Vec<Dish> {
        let mut dishes: Vec<Dish> = self.dishes.keys().copied().collect();
        dishes.sort_unstable();
        dishes
    }

    /// Sizes of the tables serving `dish`, ascending.
    pub fn table_sizes(&self, dish: Dish) -> Vec<u32> {
        self.dishes
            .get(&dish)
            .map(DishTables::sorted_sizes)
            .unwrap_or_default()
    }

    fn is_empty(&self) -> bool {
        self.customers == 0
    }

    #[inline]
    fn predict(&self, dish: Dish, parent: f64, params: PypParams) -> f64 {
        if self.customers == 0 {
            return parent;
        }
        let PypParams { discount, strength } = params;
        let (cw, tw) = match self.dishes.get(&dish) {
            Some(d) => (d.customers as f64, d.tables as f64),
            None => (0.0, 0.0),
        };
        let c = self.customers as f64;
        let t = self.tables as f64;
        ((cw - discount * tw) + (strength + discount * t) * parent) / (strength + c)
    }

    /// Checks the count invariants of this restaurant.
    fn audit(&self) -> std::result::Result<(), String> {
        let mut customers = 0;
        let mut tables = 0;
        for (dish, d) in &self.dishes {
            let sizes: u32 = d.live().map(|(_, t)| t.size).sum();
            let live = d.live().count() as u32;
            if sizes != d.customers {
                return Err(format!(
                    "dish {dish}: table sizes sum to {sizes}, customer count is {}",
                    d.customers
                ));
            }
            if live != d.tables {
                return Err(format!(
                    "dish {dish}: {live} live tables, table count is {}",
                    d.tables
                ));
            }
            if d.customers == 0 || d.tables == 0 {
                return Err(format!("dish {dish}: empty dish entry retained"));
            }
            for &slot in &d.free {
                if d.slots[slot as usize].size != 0 {
                    return Err(format!("dish {dish}: occupied slot {slot} on free list"));
                }
            }
            customers += d.customers;
            tables += d.tables;
        }
        if customers != self.customers || tables != self.tables {
            return Err(format!(
                "totals ({}, {}) disagree with per-dish sums ({customers}, {tables})",
                self.customers, self.tables
            ));
        }
        Ok(())
    }
}

/// Where a customer was seated: the context, the dish and the table chosen at
/// each level, deepest first, down to the level where an existing table was
/// joined (or level 0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatingTrace {
    pub context: Vec<Symbol>,
    pub dish: Dish,
    pub seats: Vec<TableRef>,
}

/// A hierarchy of Pitman-Yor restaurants over a finite set of dishes.
#[derive(Clone, Debug)]
pub struct HpypTree {
    base_size: u32,
    levels: Vec<StableMap<Vec<Symbol>, Restaurant>>,
    hyper: Hyperparams,
    next_table_id: u64,
}

impl PartialEq for HpypTree {
    fn eq(&self, other: &Self) -> bool {
        self.base_size == other.base_size && self.hyper == other.hyper && self.levels == other.levels
    }
}

impl HpypTree {
    /// An empty tree over `base_size` dishes accepting contexts up to length
    /// `depth`, with every level at the default hyperparameters.
    pub fn new(base_size: u32, depth: usize) -> Self {
        Self::with_hyperparams(base_size, Hyperparams::uniform(depth, PypParams::default()))
    }

    pub fn with_hyperparams(base_size: u32, hyper: Hyperparams) -> Self {
        assert!(base_size > 0, "base distribution needs a nonempty support");
        assert!(!hyper.levels.is_empty());
        let levels = (0..hyper.levels.len()).map(|_| StableMap::default()).collect();
        HpypTree {
            base_size,
            levels,
            hyper,
            next_table_id: 0,
        }
    }

    pub fn base_size(&self) -> u32 {
        self.base_size
    }

    /// Maximum context length.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn set_hyperparams(&mut self, hyper: Hyperparams) -> Result<()> {
        if hyper.levels.len() != self.levels.len() {
            return Err(Error::Settings(format!(
                "expected {} hyperparameter levels, got {}",
                self.levels.len(),
                hyper.levels.len()
            )));
        }
        self.hyper = hyper;
        Ok(())
    }

    pub fn restaurant(&self, context: &[Symbol]) -> Option<&Restaurant> {
        self.levels.get(context.len())?.get(context)
    }

    /// Number of restaurants at each level.
    pub fn restaurant_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len()).collect()
    }

    pub fn total_customers(&self) -> u64 {
        self.levels
            .iter()
            .flat_map(|l| l.values())
            .map(|r| r.customers as u64)
            .sum()
    }

    /// Customers seated directly at `level`.
    pub fn customers_at_level(&self, level: usize) -> u64 {
        self.levels[level].values().map(|r| r.customers as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty()
    }

    fn check_query(&self, context: &[Symbol], dish: Dish) -> Result<()> {
        if dish >= self.base_size {
            return Err(Error::DishOutOfSupport {
                dish,
                base_size: self.base_size,
            });
        }
        self.check_context(context)
    }

    fn check_context(&self, context: &[Symbol]) -> Result<()> {
        if context.len() > self.depth() {
            return Err(Error::ContextTooLong {
                len: context.len(),
                depth: self.depth(),
            });
        }
        Ok(())
    }

    fn chain(&self, context: &[Symbol]) -> Vec<Option<&Restaurant>> {
        (0..=context.len())
            .map(|k| self.levels[k].get(&context[..k]))
            .collect()
    }

    /// Predictive probability of `dish` given `context`.
    pub fn predictive_probability(&self, context: &[Symbol], dish: Dish) -> Result<f64> {
        self.check_query(context, dish)?;
        let mut p = 1.0 / self.base_size as f64;
        for k in 0..=context.len() {
            if let Some(r) = self.levels[k].get(&context[..k]) {
                p = r.predict(dish, p, self.hyper.levels[k]);
            }
        }
        Ok(p)
    }

    /// Predictive probabilities of a set of dishes given `context`, sharing
    /// the restaurant lookups.
    pub fn predictive_many(&self, context: &[Symbol], dishes: &[Dish]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        if let Some(&dish) = dishes.iter().find(|&&d| d >= self.base_size) {
            return Err(Error::DishOutOfSupport {
                dish,
                base_size: self.base_size,
            });
        }
        let chain = self.chain(context);
        let base = 1.0 / self.base_size as f64;
        Ok(dishes
            .iter()
            .map(|&dish| {
                chain
                    .iter()
                    .enumerate()
                    .fold(base, |p, (k, r)| match r {
                        Some(r) => r.predict(dish, p, self.hyper.levels[k]),
                        None => p,
                    })
            })
            .collect())
    }

    /// The full predictive distribution over all dishes.
    pub fn predictive_distribution(&self, context: &[Symbol]) -> Result<Vec<f64>> {
        let dishes: Vec<Dish> = (0..self.base_size).collect();
        self.predictive_many(context, &dishes)
    }

    /// Seats a customer eating `dish` in the restaurant for `context`, opening
    /// tables and sending customers to the parent restaurants as needed.
    pub fn add_customer<R: Rng + ?Sized>(
        &mut self,
        context: &[Symbol],
        dish: Dish,
        rng: &mut R,
    ) -> Result<SeatingTrace> {
        self.check_query(context, dish)?;
        let depth = context.len();

        // parent_p[k]: predictive probability of the dish from the levels
        // strictly above k, computed before any mutation.
        let mut parent_p = Vec::with_capacity(depth + 1);
        let mut p = 1.0 / self.base_size as f64;
        for k in 0..=depth {
            parent_p.push(p);
            if let Some(r) = self.levels[k].get(&context[..k]) {
                p = r.predict(dish, p, self.hyper.levels[k]);
            }
        }

        // Walk down the chain deciding join-or-open at each level.
        enum Choice {
            Join(u32),
            Open,
        }
        let mut choices = Vec::new();
        for k in (0..=depth).rev() {
            let PypParams { discount, strength } = self.hyper.levels[k];
            let choice = match self.levels[k].get(&context[..k]) {
                None => Choice::Open,
                Some(r) => match r.dishes.get(&dish) {
                    None => Choice::Open,
                    Some(d) => {
                        let existing = d.customers as f64 - discount * d.tables as f64;
                        let fresh = (strength + discount * r.tables as f64) * parent_p[k];
                        let mut u = rng.gen::<f64>() * (existing + fresh);
                        if u < existing {
                            let mut chosen = None;
                            for (slot, t) in d.live() {
                                chosen = Some(slot);
                                u -= t.size as f64 - discount;
                                if u < 0.0 {
                                    break;
                                }
                            }
                            Choice::Join(chosen.expect("dish entry without live tables"))
                        } else {
                            Choice::Open
                        }
                    }
                },
            };
            let stop = matches!(choice, Choice::Join(_));
            choices.push((k, choice));
            if stop {
                break;
            }
        }

        // Apply bottom-up (shallowest level first) so parent links exist.
        let mut seats = vec![TableRef { slot: 0, id: 0 }; choices.len()];
        let mut parent: Option<TableRef> = None;
        for (i, (k, choice)) in choices.into_iter().enumerate().rev() {
            let restaurant = self.levels[k].entry(context[..k].to_vec()).or_default();
            restaurant.customers += 1;
            let dishes = restaurant.dishes.entry(dish).or_default();
            let at = match choice {
                Choice::Join(slot) => {
                    dishes.customers += 1;
                    let table = &mut dishes.slots[slot as usize];
                    table.size += 1;
                    TableRef { slot, id: table.id }
                }
                Choice::Open => {
                    restaurant.tables += 1;
                    self.next_table_id += 1;
                    dishes.open(parent, self.next_table_id)
                }
            };
            seats[i] = at;
            parent = Some(at);
        }

        Ok(SeatingTrace {
            context: context.to_vec(),
            dish,
            seats,
        })
    }

    /// Removes the customer described by `trace`. A table left empty is closed
    /// and the customer it sent to the parent restaurant is removed as well.
    pub fn remove_customer(&mut self, trace: &SeatingTrace) -> Result<()> {
        let context = &trace.context;
        let dish = trace.dish;
        self.check_query(context, dish)?;
        let first = *trace
            .seats
            .first()
            .ok_or_else(|| Error::StaleTrace("trace has no seats".into()))?;

        let mut level = context.len();
        let mut at = first;
        loop {
            let key = &context[..level];
            let restaurant = self.levels[level].get_mut(key).ok_or_else(|| {
                Error::StaleTrace(format!("no restaurant for context {key:?} at level {level}"))
            })?;
            let dishes = restaurant.dishes.get_mut(&dish).ok_or_else(|| {
                Error::StaleTrace(format!("dish {dish} not served at level {level}"))
            })?;
            let table = dishes.table_mut(at).ok_or_else(|| {
                Error::StaleTrace(format!(
                    "table {at:?} for dish {dish} at level {level} no longer exists"
                ))
            })?;
            table.size -= 1;
            let closed = table.size == 0;
            let parent = table.parent;
            if closed {
                table.parent = None;
            }
            dishes.customers -= 1;
            restaurant.customers -= 1;
            if closed {
                dishes.tables -= 1;
                dishes.free.push(at.slot);
                restaurant.tables -= 1;
                if dishes.customers == 0 {
                    restaurant.dishes.remove(&dish);
                }
            }
            if restaurant.is_empty() {
                self.levels[level].remove(key);
            }
            match (closed, parent) {
                (true, Some(p)) if level > 0 => {
                    level -= 1;
                    at = p;
                }
                (true, Some(_)) => {
                    return Err(Error::StaleTrace("level-0 table has a parent link".into()));
                }
                (true, None) if level > 0 => {
                    return Err(Error::StaleTrace(format!(
                        "table at level {level} has no parent link"
                    )));
                }
                _ => return Ok(()),
            }
        }
    }

    /// Draws a dish from the predictive distribution of `context` without
    /// changing the seating.
    pub fn sample_dish<R: Rng + ?Sized>(&self, context: &[Symbol], rng: &mut R) -> Result<Dish> {
        self.check_context(context)?;
        for k in (0..=context.len()).rev() {
            let Some(r) = self.levels[k].get(&context[..k]) else {
                continue;
            };
            if r.is_empty() {
                continue;
            }
            let PypParams { discount, strength } = self.hyper.levels[k];
            let existing = r.customers as f64 - discount * r.tables as f64;
            let backoff = strength + discount * r.tables as f64;
            let mut u = rng.gen::<f64>() * (existing + backoff);
            if u >= existing {
                continue;
            }
            // Iterate in dish order so a seed maps to the same draw regardless
            // of hash-map layout.
            let dishes = r.dishes();
            let mut chosen = dishes[0];
            for dish in dishes {
                let d = &r.dishes[&dish];
                chosen = dish;
                u -= d.customers as f64 - discount * d.tables as f64;
                if u < 0.0 {
                    break;
                }
            }
            return Ok(chosen);
        }
        Ok(rng.gen_range(0..self.base_size))
    }

    /// Resamples the discount and strength of every level by slice sampling
    /// their posterior given the current seating arrangement. Levels without
    /// customers keep their values.
    pub fn resample_hyperparameters<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        iterations: usize,
    ) -> &Hyperparams {
        for k in 0..self.levels.len() {
            let stats = LevelStats::collect(self.levels[k].values());
            if stats.customers == 0 {
                continue;
            }
            let mut params = self.hyper.levels[k];
            for _ in 0..iterations {
                let strength = params.strength;
                params.discount = slice_sample(
                    params.discount,
                    |d| stats.log_posterior(d, strength),
                    (-strength).max(0.0),
                    1.0,
                    DISCOUNT_SLICE_WIDTH,
                    rng,
                );
                // Guard the closed lower end of the discount support.
                if params.discount < 0.0 {
                    params.discount = 0.0;
                }
                let discount = params.discount;
                params.strength = slice_sample(
                    params.strength,
                    |s| stats.log_posterior(discount, s),
                    -discount,
                    f64::INFINITY,
                    STRENGTH_SLICE_WIDTH,
                    rng,
                );
            }
            debug_assert!(params.is_valid());
            self.hyper.levels[k] = params;
        }
        &self.hyper
    }

    /// Log probability of the seating arrangement at `level` under `params`,
    /// excluding the dish draws from the parent.
    pub fn level_log_likelihood(&self, level: usize, params: PypParams) -> f64 {
        LevelStats::collect(self.levels[level].values()).log_likelihood(params.discount, params.strength)
    }

    /// Verifies the count invariants of every restaurant and the parent links
    /// between levels.
    pub fn audit(&self) -> Result<()> {
        if self.levels[0].len() > 1 || self.levels[0].keys().any(|k| !k.is_empty()) {
            return Err(Error::StaleTrace("malformed level 0".into()));
        }
        for (k, level) in self.levels.iter().enumerate() {
            for (context, r) in level {
                if context.len() != k {
                    return Err(Error::StaleTrace(format!(
                        "context {context:?} stored at level {k}"
                    )));
                }
                r.audit()
                    .map_err(|m| Error::StaleTrace(format!("context {context:?}: {m}")))?;
                if r.is_empty() {
                    return Err(Error::StaleTrace(format!("empty restaurant {context:?} retained")));
                }
                if k == 0 {
                    continue;
                }
                let parent = self.levels[k - 1].get(&context[..k - 1]).ok_or_else(|| {
                    Error::StaleTrace(format!("restaurant {context:?} has no parent restaurant"))
                })?;
                for (dish, d) in &r.dishes {
                    let pd = parent.dishes.get(dish).ok_or_else(|| {
                        Error::StaleTrace(format!("dish {dish} of {context:?} missing in parent"))
                    })?;
                    for (_, t) in d.live() {
                        let link = t.parent.ok_or_else(|| {
                            Error::StaleTrace(format!("table of {context:?} lacks parent link"))
                        })?;
                        let ok = pd
                            .slots
                            .get(link.slot as usize)
                            .is_some_and(|pt| pt.size > 0 && pt.id == link.id);
                        if !ok {
                            return Err(Error::StaleTrace(format!(
                                "table of {context:?} links to a dead parent table"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sufficient statistics of one level for hyperparameter inference, stored as
/// tail counts so the likelihood costs O(max count) to evaluate.
struct LevelStats {
    customers: u64,
    /// `restaurant_tables[i]`: restaurants with more than `i + 1` tables.
    restaurant_tables: Vec<u64>,
    /// `restaurant_customers[i]`: restaurants with more than `i + 1` customers.
    restaurant_customers: Vec<u64>,
    /// `table_sizes[j]`: tables with more than `j + 1` customers.
    table_sizes: Vec<u64>,
}

impl LevelStats {
    fn collect<'a>(restaurants: impl Iterator<Item = &'a Restaurant>) -> Self {
        fn bump(tail: &mut Vec<u64>, count: u32) {
            // Records count - 1 increments: positions 0..count-1.
            let n = count.saturating_sub(1) as usize;
            if tail.len() < n + 1 {
                tail.resize(n + 1, 0);
            }
            tail[n] += 1;
        }
        let mut customers = 0;
        let mut rt = Vec::new();
        let mut rc = Vec::new();
        let mut ts = Vec::new();
        for r in restaurants {
            if r.customers == 0 {
                continue;
            }
            customers += r.customers as u64;
            bump(&mut rt, r.tables);
            bump(&mut rc, r.customers);
            for d in r.dishes.values() {
                for (_, t) in d.live() {
                    bump(&mut ts, t.size);
                }
            }
        }
        // Convert histograms of (count - 1) into tails: tail[i] = #{x : x - 1 > i}.
        fn to_tail(hist: Vec<u64>) -> Vec<u64> {
            let mut tail = vec![0; hist.len().saturating_sub(1)];
            let mut acc = 0;
            for i in (0..tail.len()).rev() {
                acc += hist[i + 1];
                tail[i] = acc;
            }
            tail
        }
        LevelStats {
            customers,
            restaurant_tables: to_tail(rt),
            restaurant_customers: to_tail(rc),
            table_sizes: to_tail(ts),
        }
    }

    fn log_likelihood(&self, discount: f64, strength: f64) -> f64 {
        let mut ll = 0.0;
        for (i, &n) in self.restaurant_tables.iter().enumerate() {
            ll += n as f64 * (strength + (i + 1) as f64 * discount).ln();
        }
        for (i, &n) in self.restaurant_customers.iter().enumerate() {
            ll -= n as f64 * (strength + (i + 1) as f64).ln();
        }
        for (j, &n) in self.table_sizes.iter().enumerate() {
            ll += n as f64 * ((j + 1) as f64 - discount).ln();
        }
        ll
    }

    fn log_posterior(&self, discount: f64, strength: f64) -> f64 {
        if !(0.0..1.0).contains(&discount) || strength <= -discount {
            return f64::NEG_INFINITY;
        }
        let shifted = strength + discount;
        let prior = (STRENGTH_PRIOR_SHAPE - 1.0) * shifted.ln() - STRENGTH_PRIOR_RATE * shifted;
        let ll = self.log_likelihood(discount, strength);
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll + prior
        }
    }
}

// Serialization goes through sorted records so the output is canonical.

#[derive(Serialize)]
struct TreeRecordRef<'a> {
    base_size: u32,
    next_table_id: u64,
    hyper: &'a Hyperparams,
    restaurants: Vec<RestaurantRecordRef<'a>>,
}

#[derive(Serialize)]
struct RestaurantRecordRef<'a> {
    context: &'a [Symbol],
    dishes: Vec<(Dish, &'a DishTables)>,
}

#[derive(Deserialize)]
struct TreeRecord {
    base_size: u32,
    next_table_id: u64,
    hyper: Hyperparams,
    restaurants: Vec<RestaurantRecord>,
}

#[derive(Deserialize)]
struct RestaurantRecord {
    context: Vec<Symbol>,
    dishes: Vec<(Dish, DishTables)>,
}

impl Serialize for HpypTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut restaurants = Vec::new();
        for level in &self.levels {
            let mut contexts: Vec<&Vec<Symbol>> = level.keys().collect();
            contexts.sort();
            for context in contexts {
                let r = &level[context];
                let dishes = r.dishes().into_iter().map(|d| (d, &r.dishes[&d])).collect();
                restaurants.push(RestaurantRecordRef { context, dishes });
            }
        }
        TreeRecordRef {
            base_size: self.base_size,
            next_table_id: self.next_table_id,
            hyper: &self.hyper,
            restaurants,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HpypTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let record = TreeRecord::deserialize(deserializer)?;
        let hyper = Hyperparams::new(record.hyper.levels).map_err(D::Error::custom)?;
        if record.base_size == 0 {
            return Err(D::Error::custom("base size must be positive"));
        }
        let mut tree = HpypTree::with_hyperparams(record.base_size, hyper);
        tree.next_table_id = record.next_table_id;
        for rr in record.restaurants {
            let level = rr.context.len();
            if level > tree.depth() {
                return Err(D::Error::custom("restaurant context longer than tree depth"));
            }
            let mut r = Restaurant::default();
            for (dish, d) in rr.dishes {
                if dish >= record.base_size {
                    return Err(D::Error::custom("dish outside base support"));
                }
                r.customers += d.customers;
                r.tables += d.tables;
                r.dishes.insert(dish, d);
            }
            tree.levels[level].insert(rr.context, r);
        }
        tree.audit().map_err(D::Error::custom)?;
        Ok(tree)
    }
}
