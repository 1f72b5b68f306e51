//! Arc-eager dependency parsing over synthetic token sequences.
//!
//! Tokens are 0-based positions; `heads[i] = None` marks the sentence root.
//! There is no artificial root token: the real root simply stays
//! unattached, and a configuration is terminal once no action is legal.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::policy::{AsObservation, Observation};
use crate::rng::{substream, tag, Rng};

pub const SHIFT: usize = 0;
pub const LEFT_ARC: usize = 1;
pub const RIGHT_ARC: usize = 2;
pub const REDUCE: usize = 3;
pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    pub heads: Vec<Option<usize>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    stack: Vec<usize>,
    /// The buffer is always the suffix `front..n`.
    front: usize,
    n: usize,
    heads: Vec<Option<usize>>,
    /// Dependents in the order their arcs were added.
    attached: Vec<usize>,
}

impl ParserState {
    pub fn new(n: usize) -> Self {
        Self {
            stack: Vec::new(),
            front: 0,
            n,
            heads: vec![None; n],
            attached: Vec::new(),
        }
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn buffer(&self) -> std::ops::Range<usize> {
        self.front..self.n
    }

    pub fn buffer_front(&self) -> Option<usize> {
        (self.front < self.n).then_some(self.front)
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    /// `(head, dependent)` pairs in attachment order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.attached
            .iter()
            .map(|&d| (self.heads[d].expect("attached tokens have heads"), d))
            .collect()
    }

    pub fn recent_dependents(&self) -> &[usize] {
        &self.attached
    }

    pub fn is_attached(&self, i: usize) -> bool {
        self.heads[i].is_some()
    }

    pub fn is_legal(&self, action: usize) -> bool {
        let top = self.stack.last().copied();
        let buf = self.front < self.n;
        match action {
            SHIFT => buf,
            LEFT_ARC => buf && top.is_some_and(|i| !self.is_attached(i)),
            RIGHT_ARC => buf && top.is_some(),
            REDUCE => top.is_some_and(|i| self.is_attached(i)),
            _ => false,
        }
    }

    pub fn legal_mask(&self) -> [bool; NUM_ACTIONS] {
        [
            self.is_legal(SHIFT),
            self.is_legal(LEFT_ARC),
            self.is_legal(RIGHT_ARC),
            self.is_legal(REDUCE),
        ]
    }

    pub fn is_terminal(&self) -> bool {
        !self.legal_mask().iter().any(|&l| l)
    }
}

/// Applies one arc-eager transition.
pub fn arc_eager_step(state: &ParserState, action: usize) -> Result<ParserState> {
    if !state.is_legal(action) {
        return Err(Error::Transition(format!("action {action} is illegal here")));
    }
    let mut next = state.clone();
    match action {
        SHIFT => {
            next.stack.push(next.front);
            next.front += 1;
        }
        LEFT_ARC => {
            let i = next.stack.pop().expect("legal left-arc has a stack top");
            next.heads[i] = Some(next.front);
            next.attached.push(i);
        }
        RIGHT_ARC => {
            let i = *next.stack.last().expect("legal right-arc has a stack top");
            let j = next.front;
            next.heads[j] = Some(i);
            next.attached.push(j);
            next.stack.push(j);
            next.front += 1;
        }
        _ => {
            next.stack.pop();
        }
    }
    Ok(next)
}

/// Fraction of non-root tokens whose predicted head equals the gold head.
/// Unattached tokens count as wrong. The sentence root has no gold head to
/// recover and is left out of the denominator.
pub fn uas(predicted: &[Option<usize>], gold: &[Option<usize>]) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        if let Some(h) = g {
            total += 1;
            if *p == Some(*h) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

/// Static gold oracle; falls back to the first legal action when the
/// preferred one is unavailable (possible once earlier moves left the gold
/// path). Returns `None` at terminal configurations.
pub fn gold_action(state: &ParserState, gold: &[Option<usize>]) -> Option<usize> {
    if let (Some(&i), Some(j)) = (state.stack.last(), state.buffer_front()) {
        if gold[i] == Some(j) && state.is_legal(LEFT_ARC) {
            return Some(LEFT_ARC);
        }
        if gold[j] == Some(i) {
            return Some(RIGHT_ARC);
        }
        let below = &state.stack[..state.stack.len() - 1];
        let linked = below.iter().any(|&k| gold[j] == Some(k) || gold[k] == Some(j));
        if linked && state.is_legal(REDUCE) {
            return Some(REDUCE);
        }
    }
    [SHIFT, REDUCE, RIGHT_ARC, LEFT_ARC].into_iter().find(|&a| state.is_legal(a))
}

/// Runs the gold oracle to completion.
pub fn oracle_completion(state: &ParserState, gold: &[Option<usize>]) -> ParserState {
    let mut s = state.clone();
    while let Some(a) = gold_action(&s, gold) {
        s = arc_eager_step(&s, a).expect("oracle picks legal actions");
    }
    s
}

/// Cost-to-go `1 - UAS` after applying `action` and then the gold oracle.
/// Illegal actions leave the configuration unchanged.
pub fn clairvoyant_q(state: &ParserState, action: usize, gold: &[Option<usize>]) -> f64 {
    let after = arc_eager_step(state, action).unwrap_or_else(|_| state.clone());
    1.0 - uas(oracle_completion(&after, gold).heads(), gold)
}

pub fn clairvoyant_q_vector(state: &ParserState, gold: &[Option<usize>]) -> Vec<f64> {
    (0..NUM_ACTIONS).map(|a| clairvoyant_q(state, a, gold)).collect()
}

/// True when no two arcs cross and there is exactly one root.
pub fn is_projective_tree(heads: &[Option<usize>]) -> bool {
    if heads.iter().filter(|h| h.is_none()).count() != 1 {
        return false;
    }
    let n = heads.len();
    for start in 0..n {
        let mut cur = start;
        for _ in 0..=n {
            match heads[cur] {
                Some(h) if h < n => cur = h,
                Some(_) => return false,
                None => break,
            }
        }
        if heads[cur].is_some() {
            return false;
        }
    }
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .filter_map(|(d, h)| h.map(|h| (h.min(d), h.max(d))))
        .collect();
    for &(a, b) in &arcs {
        for &(c, d) in &arcs {
            if a < c && c < b && b < d {
                return false;
            }
        }
    }
    true
}

/// Word categories of the synthetic grammar; a word's category is `id % 5`.
const VERB: usize = 0;
const NOUN: usize = 1;
const DET: usize = 2;
const ADJ: usize = 3;
const PREP: usize = 4;

fn word(category: usize, vocab: usize, rng: &mut Rng) -> usize {
    let count = (vocab - category).div_ceil(5);
    category + 5 * rng.gen_range(0..count)
}

/// Appends a noun phrase `D? J{0,2} N` whose noun attaches to `head`.
fn noun_phrase(tokens: &mut Vec<usize>, heads: &mut Vec<Option<usize>>, head: Option<usize>, vocab: usize, rng: &mut Rng) {
    let mods = usize::from(rng.gen_bool(0.6)) + rng.gen_range(0..3);
    let start = tokens.len();
    let noun = start + mods;
    for m in 0..mods {
        let cat = if m == 0 && rng.gen_bool(0.6) { DET } else { ADJ };
        tokens.push(word(cat, vocab, rng));
        heads.push(Some(noun));
    }
    tokens.push(word(NOUN, vocab, rng));
    heads.push(head);
}

/// Random projective sentences from a small head-initial grammar:
/// optional subject noun phrase, a verb (the root), then one to three
/// complements, each a noun phrase or a prepositional phrase attached to
/// the verb.
pub fn make_parse_corpus(num_sentences: usize, max_len: usize, vocab: usize, seed: u64) -> Result<Vec<Sentence>> {
    if max_len < 2 {
        return Err(Error::Config("max_len must be at least 2".into()));
    }
    if vocab < 5 {
        return Err(Error::Config("vocab must be at least 5".into()));
    }
    let mut rng = substream(seed, &[tag::CORPUS]);
    let mut corpus = Vec::with_capacity(num_sentences);
    while corpus.len() < num_sentences {
        let mut tokens = Vec::new();
        let mut heads: Vec<Option<usize>> = Vec::new();
        let subject = rng.gen_bool(0.7);
        let mut subject_noun = None;
        if subject {
            noun_phrase(&mut tokens, &mut heads, None, vocab, &mut rng);
            subject_noun = Some(tokens.len() - 1);
        }
        let verb = tokens.len();
        tokens.push(word(VERB, vocab, &mut rng));
        heads.push(None);
        if let Some(n) = subject_noun {
            heads[n] = Some(verb);
        }
        for _ in 0..rng.gen_range(1..=3) {
            if rng.gen_bool(0.5) {
                noun_phrase(&mut tokens, &mut heads, Some(verb), vocab, &mut rng);
            } else {
                let p = tokens.len();
                tokens.push(word(PREP, vocab, &mut rng));
                heads.push(Some(verb));
                noun_phrase(&mut tokens, &mut heads, Some(p), vocab, &mut rng);
            }
        }
        if tokens.len() <= max_len {
            corpus.push(Sentence { tokens, heads });
        }
    }
    Ok(corpus)
}

/// One sentence per line; tab-separated `token:head` with 1-based heads and
/// `0` for the root.
pub fn write_corpus(corpus: &[Sentence]) -> String {
    let mut out = String::new();
    for s in corpus {
        let cells: Vec<String> = s
            .tokens
            .iter()
            .zip(&s.heads)
            .map(|(t, h)| format!("{t}:{}", h.map_or(0, |h| h + 1)))
            .collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    out
}

pub fn read_corpus(text: &str) -> Result<Vec<Sentence>> {
    let mut corpus = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = Vec::new();
        let mut heads = Vec::new();
        for cell in line.split('\t') {
            let parse = || -> Option<(usize, usize)> {
                let (t, h) = cell.split_once(':')?;
                Some((t.trim().parse().ok()?, h.trim().parse().ok()?))
            };
            let (t, h) = parse().ok_or_else(|| Error::Parse {
                line: ln + 1,
                message: format!("bad cell {cell:?}"),
            })?;
            tokens.push(t);
            heads.push(h.checked_sub(1));
        }
        if heads.iter().any(|h| h.is_some_and(|h| h >= tokens.len())) {
            return Err(Error::Parse {
                line: ln + 1,
                message: "head index beyond sentence".into(),
            });
        }
        corpus.push(Sentence { tokens, heads });
    }
    Ok(corpus)
}

/// Reactive features: word ids of the top three stack items, the first three
/// buffer items and the three most recently attached dependents (one-hot,
/// with an extra "empty" slot each), attachment flags of the top two stack
/// items, and a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub vocab: usize,
}

impl Featurizer {
    const SLOTS: usize = 9;

    pub fn dim(&self) -> usize {
        Self::SLOTS * (self.vocab + 1) + 3
    }

    pub fn features(&self, state: &ParserState, sentence: &Sentence) -> Vec<f64> {
        let width = self.vocab + 1;
        let mut x = vec![0.0; self.dim()];
        let mut put = |slot: usize, tok: Option<usize>| {
            let id = tok.map_or(self.vocab, |i| sentence.tokens[i].min(self.vocab - 1));
            x[slot * width + id] = 1.0;
        };
        let st = state.stack();
        for k in 0..3 {
            put(k, st.len().checked_sub(k + 1).map(|i| st[i]));
        }
        let buf = state.buffer();
        for k in 0..3 {
            let i = buf.start + k;
            put(3 + k, (i < buf.end).then_some(i));
        }
        let deps = state.recent_dependents();
        for k in 0..3 {
            put(6 + k, deps.len().checked_sub(k + 1).map(|i| deps[i]));
        }
        let base = Self::SLOTS * width;
        for k in 0..2 {
            if let Some(i) = st.len().checked_sub(k + 1).map(|i| st[i]) {
                x[base + k] = if state.is_attached(i) { 1.0 } else { 0.0 };
            }
        }
        x[base + 2] = 1.0;
        x
    }
}

/// A parser configuration with its sentence id, features and legal mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseObs {
    pub sentence: usize,
    pub state: ParserState,
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ParseObs {
    pub fn new(sentence_id: usize, sentence: &Sentence, state: ParserState, featurizer: &Featurizer) -> Self {
        let features = featurizer.features(&state, sentence);
        let mask = state.legal_mask().to_vec();
        Self {
            sentence: sentence_id,
            state,
            features,
            mask,
        }
    }
}

impl AsObservation for ParseObs {
    fn observation(&self) -> Observation<'_> {
        Observation::features(&self.features).masked(&self.mask)
    }
}

/// Clairvoyant cost-to-go oracle over a corpus.
#[derive(Debug, Clone, Copy)]
pub struct ParseOracle<'a> {
    pub corpus: &'a [Sentence],
}

impl crate::oracle::CostToGo<ParseObs, usize> for ParseOracle<'_> {
    fn q(&self, _t: usize, obs: &ParseObs, action: &usize, _rng: &mut Rng) -> Result<f64> {
        let s = self
            .corpus
            .get(obs.sentence)
            .ok_or_else(|| Error::Range(format!("sentence {} not in corpus", obs.sentence)))?;
        Ok(clairvoyant_q(&obs.state, *action, &s.heads))
    }

    fn is_exact(&self) -> bool {
        true
    }
}

impl crate::oracle::DiscreteCostToGo<ParseObs> for ParseOracle<'_> {
    fn q_vector(&self, _t: usize, obs: &ParseObs, _rng: &mut Rng) -> Result<Vec<f64>> {
        let s = self
            .corpus
            .get(obs.sentence)
            .ok_or_else(|| Error::Range(format!("sentence {} not in corpus", obs.sentence)))?;
        Ok(clairvoyant_q_vector(&obs.state, &s.heads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_shift_from_empty_stack() {
        let s = ParserState::new(3);
        assert_eq!(s.legal_mask(), [true, false, false, false]);
    }

    #[test]
    fn two_token_example() {
        let gold = [None, Some(0)];
        let mut s = ParserState::new(2);
        for a in [SHIFT, RIGHT_ARC] {
            s = arc_eager_step(&s, a).unwrap();
        }
        while s.is_legal(REDUCE) {
            s = arc_eager_step(&s, REDUCE).unwrap();
        }
        assert!(s.is_terminal());
        assert_eq!(s.arcs(), vec![(0, 1)]);
        assert_eq!(uas(s.heads(), &gold), 1.0);
    }

    #[test]
    fn illegal_action_is_transition_error() {
        let s = ParserState::new(2);
        assert!(matches!(arc_eager_step(&s, REDUCE), Err(Error::Transition(_))));
    }

    #[test]
    fn uas_examples() {
        let gold = [Some(1), None, Some(1), Some(4), Some(1)];
        assert_eq!(uas(&gold, &gold), 1.0);
        assert_eq!(uas(&[None; 5], &gold), 0.0);
        let pred = [Some(1), None, Some(1), Some(1), Some(1)];
        assert_eq!(uas(&pred, &gold), 0.75);
    }

    #[test]
    fn corpus_is_projective_reproducible_and_bounded() {
        let a = make_parse_corpus(200, 12, 30, 5).unwrap();
        let b = make_parse_corpus(200, 12, 30, 5).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.len() >= 2 && s.len() <= 12);
            assert!(is_projective_tree(&s.heads));
        }
    }

    #[test]
    fn oracle_round_trip_reconstructs_gold() {
        for s in make_parse_corpus(300, 12, 30, 9).unwrap() {
            let mut st = ParserState::new(s.len());
            let mut steps = 0;
            while let Some(a) = gold_action(&st, &s.heads) {
                st = arc_eager_step(&st, a).unwrap();
                steps += 1;
            }
            assert!(steps <= 2 * s.len());
            assert_eq!(st.heads(), s.heads.as_slice());
            assert_eq!(uas(st.heads(), &s.heads), 1.0);
        }
    }

    #[test]
    fn completed_configuration_has_flat_cost_to_go() {
        let s = &make_parse_corpus(1, 8, 20, 1).unwrap()[0];
        let done = oracle_completion(&ParserState::new(s.len()), &s.heads);
        let q = clairvoyant_q_vector(&done, &s.heads);
        assert!(q.iter().all(|&v| v == q[0]));
        assert_eq!(q[0], 0.0);
    }

    #[test]
    fn legal_moves_exist_until_done() {
        for s in make_parse_corpus(50, 12, 20, 2).unwrap() {
            let mut st = ParserState::new(s.len());
            let mut rng = substream(3, &[]);
            let mut steps = 0;
            while !st.is_terminal() {
                let legal: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| st.is_legal(a)).collect();
                st = arc_eager_step(&st, legal[rng.gen_range(0..legal.len())]).unwrap();
                steps += 1;
            }
            assert!(steps <= 2 * s.len());
            assert!(st.buffer().is_empty());
        }
    }

    #[test]
    fn corpus_text_round_trip() {
        let c = make_parse_corpus(20, 10, 15, 4).unwrap();
        assert_eq!(read_corpus(&write_corpus(&c)).unwrap(), c);
        assert!(matches!(read_corpus("3:1\tx"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn features_are_one_hot_per_slot() {
        let f = Featurizer { vocab: 10 };
        let s = &make_parse_corpus(1, 8, 10, 1).unwrap()[0];
        let st = arc_eager_step(&ParserState::new(s.len()), SHIFT).unwrap();
        let x = f.features(&st, s);
        assert_eq!(x.len(), f.dim());
        for slot in 0..9 {
            let ones = x[slot * 11..(slot + 1) * 11].iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, 1);
        }
    }
}
