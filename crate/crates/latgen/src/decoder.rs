//! Time-synchronous beam decoder from frame posteriors to word lattices.
//!
//! Tokens live on a prefix tree over pronunciations and are keyed by
//! `(tree node, LM state at word start)`. Each frame a token either stays on
//! its class or moves to a child. At frame boundaries tokens on word-final
//! nodes emit a word link into the lattice node `(frame, next LM state)`;
//! all links into a node are kept while only the best continues. A token
//! keeps one arrival per word-start node, so a merge on the search key does
//! not drop the inferior history.

use std::collections::BTreeMap;

use ltlm_core::{
    prune, topo_sort, validate, Arc, Lattice, LatticeError, NgramModel, NgramState, ScoreWeights, StateId, WordId,
    EOS, MAX_STATES,
};

use crate::fam::Posteriors;
use crate::lexicon::Lexicon;
use crate::LatgenError;

pub const POSTERIOR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Per-frame token beam around the frame best (nats).
    pub lattice_beam: f64,
    pub max_active: usize,
    /// Output lattice pruning beam (nats).
    pub prune_beam: f64,
    pub acoustic_scale: f64,
    pub lm_weight: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            lattice_beam: 8.0,
            max_active: 200,
            prune_beam: 4.0,
            acoustic_scale: 1.0,
            lm_weight: 1.0,
        }
    }
}

impl DecoderConfig {
    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights::new(self.acoustic_scale, self.lm_weight, 0.0)
    }
}

#[derive(Debug)]
struct Node {
    class: u32,
    children: Vec<usize>,
    words: Vec<WordId>,
}

#[derive(Debug)]
struct PrefixTree {
    nodes: Vec<Node>,
}

impl PrefixTree {
    fn new(lexicon: &Lexicon) -> Self {
        let mut nodes = vec![Node {
            class: u32::MAX,
            children: Vec::new(),
            words: Vec::new(),
        }];
        for (w, prons) in lexicon.iter() {
            for pron in prons {
                let mut at = 0;
                for &c in pron {
                    at = match nodes[at].children.iter().copied().find(|&k| nodes[k].class == c) {
                        Some(k) => k,
                        None => {
                            nodes.push(Node {
                                class: c,
                                children: Vec::new(),
                                words: Vec::new(),
                            });
                            let k = nodes.len() - 1;
                            nodes[at].children.push(k);
                            k
                        }
                    };
                }
                if !nodes[at].words.contains(&w) {
                    nodes[at].words.push(w);
                }
            }
        }
        Self { nodes }
    }
}

const NO_TRACE: u32 = u32::MAX;

/// Best partial word from one lattice start node.
#[derive(Debug, Clone, Copy)]
struct Arrival {
    cost: f64,
    ac: f64,
    start_state: StateId,
    start_frame: usize,
    trace: u32,
}

/// Arrivals sharing a search key, at most one per start node.
#[derive(Debug, Clone, Default)]
struct Token {
    arrivals: Vec<Arrival>,
}

impl Token {
    fn best(&self) -> f64 {
        self.arrivals.iter().map(|a| a.cost).fold(f64::INFINITY, f64::min)
    }

    /// True when `cost` from `start` would improve this token.
    fn accepts(&self, start: StateId, cost: f64) -> bool {
        self.arrivals.iter().find(|a| a.start_state == start).is_none_or(|a| cost < a.cost)
    }

    fn offer(&mut self, arrival: Arrival) {
        match self.arrivals.iter_mut().find(|a| a.start_state == arrival.start_state) {
            Some(a) if arrival.cost < a.cost => *a = arrival,
            Some(_) => {}
            None => self.arrivals.push(arrival),
        }
    }
}

type Key = (usize, NgramState);

/// One word hypothesis over frames `start_frame..end_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLink {
    pub word: WordId,
    pub src: StateId,
    pub dst: StateId,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Sum of `-ln posterior` over the word's frames (nats, unscaled).
    pub ac_cost: f64,
    /// `-ln P(word | history)` (nats).
    pub lm_cost: f64,
    /// Class decoded at each frame of the span.
    pub classes: Vec<u32>,
}

/// Raw decoder output before trimming and pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub links: Vec<WordLink>,
    /// Frame index of every lattice node.
    pub state_frames: Vec<usize>,
    pub initial_state: StateId,
    pub final_states: BTreeMap<StateId, f64>,
}

impl Decoded {
    pub fn to_lattice(&self, utterance_id: &str) -> Lattice {
        Lattice {
            utterance_id: utterance_id.to_string(),
            num_states: self.state_frames.len(),
            arcs: self
                .links
                .iter()
                .map(|l| Arc::new(l.src, l.dst, l.word, l.lm_cost, l.ac_cost))
                .collect(),
            initial_state: self.initial_state,
            final_states: self.final_states.clone(),
        }
    }
}

struct Search<'a> {
    post: &'a Posteriors,
    tree: PrefixTree,
    lm: &'a NgramModel,
    cfg: &'a DecoderConfig,
    arena: Vec<(u32, u32)>,
    states: BTreeMap<(usize, NgramState), StateId>,
    state_frames: Vec<usize>,
    links: Vec<WordLink>,
}

impl Search<'_> {
    fn lattice_state(&mut self, frame: usize, lm_state: NgramState) -> StateId {
        let next = self.state_frames.len();
        let id = *self.states.entry((frame, lm_state)).or_insert(next);
        if id == next {
            self.state_frames.push(frame);
        }
        id
    }

    fn classes(&self, mut trace: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while trace != NO_TRACE {
            let (c, parent) = self.arena[trace as usize];
            out.push(c);
            trace = parent;
        }
        out.reverse();
        out
    }

    /// Emits word links for every arrival on a word-final node at boundary
    /// `t` and returns the best restart per LM state.
    fn exits(&mut self, active: &BTreeMap<Key, Token>, t: usize) -> BTreeMap<NgramState, Arrival> {
        let mut roots: BTreeMap<NgramState, Arrival> = BTreeMap::new();
        for (&(node, state), tok) in active {
            if self.tree.nodes[node].words.is_empty() {
                continue;
            }
            for arrival in &tok.arrivals {
                let classes = self.classes(arrival.trace);
                for wi in 0..self.tree.nodes[node].words.len() {
                    let word = self.tree.nodes[node].words[wi];
                    let (lp, next) = self.lm.score_step(state, word);
                    let lm_cost = -lp;
                    let dst = self.lattice_state(t, next);
                    self.links.push(WordLink {
                        word,
                        src: arrival.start_state,
                        dst,
                        start_frame: arrival.start_frame,
                        end_frame: t,
                        ac_cost: arrival.ac,
                        lm_cost,
                        classes: classes.clone(),
                    });
                    let cost = arrival.cost + self.cfg.lm_weight * lm_cost;
                    let restart = Arrival {
                        cost,
                        ac: 0.0,
                        start_state: dst,
                        start_frame: t,
                        trace: NO_TRACE,
                    };
                    roots
                        .entry(next)
                        .and_modify(|r| {
                            if cost < r.cost {
                                *r = restart;
                            }
                        })
                        .or_insert(restart);
                }
            }
        }
        roots
    }

    fn relax(&mut self, next: &mut BTreeMap<Key, Token>, key: Key, from: &Arrival, t: usize) {
        let class = self.tree.nodes[key.0].class;
        let inc = -self.post[t][class as usize].max(POSTERIOR_FLOOR).ln();
        let cost = from.cost + self.cfg.acoustic_scale * inc;
        let token = next.entry(key).or_default();
        if !token.accepts(from.start_state, cost) {
            return;
        }
        self.arena.push((class, from.trace));
        token.offer(Arrival {
            cost,
            ac: from.ac + inc,
            start_state: from.start_state,
            start_frame: from.start_frame,
            trace: (self.arena.len() - 1) as u32,
        });
    }

    /// Drops arrivals outside the beam, then keeps the `max_active` best
    /// tokens.
    fn prune_tokens(&self, tokens: BTreeMap<Key, Token>) -> BTreeMap<Key, Token> {
        let best = tokens.values().map(Token::best).fold(f64::INFINITY, f64::min);
        let limit = best + self.cfg.lattice_beam;
        let mut kept: Vec<(Key, Token)> = tokens
            .into_iter()
            .filter_map(|(k, mut tok)| {
                tok.arrivals.retain(|a| a.cost <= limit);
                (!tok.arrivals.is_empty()).then_some((k, tok))
            })
            .collect();
        if kept.len() > self.cfg.max_active {
            kept.sort_by(|a, b| a.1.best().total_cmp(&b.1.best()).then(a.0.cmp(&b.0)));
            kept.truncate(self.cfg.max_active);
        }
        kept.into_iter().collect()
    }
}

fn check_posteriors(posteriors: &Posteriors, num_classes: usize) -> Result<(), LatgenError> {
    if posteriors.is_empty() {
        return Err(LatgenError::EmptyInput);
    }
    for (t, row) in posteriors.iter().enumerate() {
        if row.len() != num_classes {
            return Err(LatgenError::InvalidModel(format!(
                "frame {t}: {} posteriors, expected {num_classes}",
                row.len()
            )));
        }
    }
    Ok(())
}

/// Runs the beam search and returns every word link created.
pub fn decode(
    posteriors: &Posteriors,
    lexicon: &Lexicon,
    lm: &NgramModel,
    cfg: &DecoderConfig,
) -> Result<Decoded, LatgenError> {
    check_posteriors(posteriors, lexicon.num_classes())?;
    if lexicon.is_empty() {
        return Err(LatgenError::InvalidModel("empty lexicon".into()));
    }
    let mut search = Search {
        post: posteriors,
        tree: PrefixTree::new(lexicon),
        lm,
        cfg,
        arena: Vec::new(),
        states: BTreeMap::new(),
        state_frames: Vec::new(),
        links: Vec::new(),
    };
    let initial_state = search.lattice_state(0, lm.initial_state());
    let mut roots = BTreeMap::from([(
        lm.initial_state(),
        Arrival {
            cost: 0.0,
            ac: 0.0,
            start_state: initial_state,
            start_frame: 0,
            trace: NO_TRACE,
        },
    )]);
    let mut active: BTreeMap<Key, Token> = BTreeMap::new();
    for t in 0..posteriors.len() {
        if t > 0 {
            roots = search.exits(&active, t);
        }
        let mut next = BTreeMap::new();
        for (&(node, state), tok) in &active {
            for arrival in &tok.arrivals {
                search.relax(&mut next, (node, state), arrival, t);
                for ci in 0..search.tree.nodes[node].children.len() {
                    let child = search.tree.nodes[node].children[ci];
                    search.relax(&mut next, (child, state), arrival, t);
                }
            }
        }
        for (&state, arrival) in &roots {
            for ci in 0..search.tree.nodes[0].children.len() {
                let child = search.tree.nodes[0].children[ci];
                search.relax(&mut next, (child, state), arrival, t);
            }
        }
        active = search.prune_tokens(next);
        if active.is_empty() {
            return Err(LatgenError::DeadEnd { frame: t });
        }
    }
    let end = posteriors.len();
    let roots = search.exits(&active, end);
    if roots.is_empty() {
        return Err(LatgenError::DeadEnd { frame: end });
    }
    let final_states = roots
        .keys()
        .map(|&s| (search.states[&(end, s)], -lm.score_step(s, EOS).0))
        .collect();
    Ok(Decoded {
        links: search.links,
        state_frames: search.state_frames,
        initial_state,
        final_states,
    })
}

/// Decodes, trims, sorts topologically and prunes with `prune_beam`. The
/// beam is halved until the lattice fits in `MAX_STATES`.
pub fn decode_to_lattice(
    posteriors: &Posteriors,
    lexicon: &Lexicon,
    lm: &NgramModel,
    cfg: &DecoderConfig,
    utterance_id: &str,
) -> Result<Lattice, LatgenError> {
    let raw = decode(posteriors, lexicon, lm, cfg)?.to_lattice(utterance_id);
    let end = posteriors.len();
    let dead = |e: LatticeError| match e {
        LatticeError::NoFinalState => LatgenError::DeadEnd { frame: end },
        other => LatgenError::Lattice(other),
    };
    let trimmed = validate(&raw, true).map_err(dead)?.lattice;
    let sorted = topo_sort(&trimmed).map_err(dead)?;
    let weights = cfg.weights();
    let mut beam = cfg.prune_beam;
    loop {
        let lat = prune(&sorted, beam, &weights).map_err(dead)?;
        if lat.num_states <= MAX_STATES {
            return Ok(lat);
        }
        log::debug!("{utterance_id}: {} states at prune beam {beam}, halving", lat.num_states);
        beam /= 2.0;
        if beam < 1e-6 {
            return Err(LatgenError::Lattice(LatticeError::TooManyStates {
                states: lat.num_states,
                max: MAX_STATES,
            }));
        }
    }
}
