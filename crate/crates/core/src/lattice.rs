//! Lattice data model and structural algorithms.
//!
//! A lattice is a weighted DAG with a single initial state and one or more
//! final states. Each arc carries a word, a first-pass language-model cost and
//! an acoustic cost; final states carry an end-of-sentence cost. Arc order is
//! meaningful: per-arc side tables (oracle labels, model outputs) are aligned
//! with `Lattice::arcs`, so every transform here preserves the relative order
//! of the arcs it keeps.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::symbols::{WordId, BOS, EOS};
use crate::weights::ScoreWeights;

pub type StateId = usize;

/// Largest lattice accepted by [`augment`]. Two auxiliary states are added,
/// so augmented lattices fit a 256-row positional table.
pub const MAX_STATES: usize = 254;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice contains a cycle")]
    CyclicLattice,
    #[error("lattice has no final state reachable from the initial state")]
    NoFinalState,
    #[error("lattice has no initial state")]
    NoInitialState,
    #[error("lattice is already augmented with <s> arcs")]
    AlreadyAugmented,
    #[error("lattice has {states} states, at most {max} allowed")]
    TooManyStates { states: usize, max: usize },
    #[error("lattice has more than {limit} complete paths")]
    TooManyPaths { limit: usize },
    #[error("malformed lattice: {0}")]
    MalformedLattice(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub word: WordId,
    /// First-pass n-gram cost (nats).
    pub lm_cost: f64,
    /// Acoustic cost (nats).
    pub ac_cost: f64,
}

impl Arc {
    pub fn new(src: StateId, dst: StateId, word: WordId, lm_cost: f64, ac_cost: f64) -> Self {
        Self {
            src,
            dst,
            word,
            lm_cost,
            ac_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub utterance_id: String,
    pub num_states: usize,
    pub arcs: Vec<Arc>,
    pub initial_state: StateId,
    /// Final state to final cost (nats).
    pub final_states: BTreeMap<StateId, f64>,
}

impl Lattice {
    pub fn new(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            num_states: 0,
            arcs: Vec::new(),
            initial_state: 0,
            final_states: BTreeMap::new(),
        }
    }

    pub fn add_state(&mut self) -> StateId {
        self.num_states += 1;
        self.num_states - 1
    }

    /// Adds an arc, growing `num_states` to cover both endpoints.
    pub fn add_arc(&mut self, arc: Arc) -> usize {
        self.num_states = self.num_states.max(arc.src + 1).max(arc.dst + 1);
        self.arcs.push(arc);
        self.arcs.len() - 1
    }

    pub fn set_final(&mut self, state: StateId, cost: f64) {
        self.num_states = self.num_states.max(state + 1);
        self.final_states.insert(state, cost);
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.final_states.contains_key(&state)
    }

    /// Outgoing arc indices per state, in arc order.
    pub fn out_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.src].push(i);
        }
        out
    }

    /// Incoming arc indices per state, in arc order.
    pub fn in_arcs(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            inc[a.dst].push(i);
        }
        inc
    }

    /// True when the initial state is 0 and every arc goes forward.
    pub fn is_topologically_sorted(&self) -> bool {
        self.initial_state == 0 && self.arcs.iter().all(|a| a.src < a.dst)
    }

    pub fn is_augmented(&self) -> bool {
        self.arcs.iter().any(|a| a.word == BOS)
    }

    /// Number of complete paths, saturating at `u128::MAX`.
    pub fn num_paths(&self) -> Result<u128, LatticeError> {
        let order = topological_order(self)?;
        let out = self.out_arcs();
        let mut count = vec![0u128; self.num_states];
        for &s in order.iter().rev() {
            let mut c: u128 = u128::from(self.is_final(s));
            for &ai in &out[s] {
                c = c.saturating_add(count[self.arcs[ai].dst]);
            }
            count[s] = c;
        }
        Ok(count.get(self.initial_state).copied().unwrap_or(0))
    }

    /// Words along a sequence of arc indices.
    pub fn words_of(&self, arcs: &[usize]) -> Vec<WordId> {
        arcs.iter().map(|&i| self.arcs[i].word).collect()
    }

    fn check_indices(&self) -> Result<(), LatticeError> {
        if self.num_states == 0 || self.initial_state >= self.num_states {
            return Err(LatticeError::NoInitialState);
        }
        for (i, a) in self.arcs.iter().enumerate() {
            if a.src >= self.num_states || a.dst >= self.num_states {
                return Err(LatticeError::MalformedLattice(format!(
                    "arc {i} references a state outside 0..{}",
                    self.num_states
                )));
            }
        }
        if let Some((&s, _)) = self.final_states.range(self.num_states..).next() {
            return Err(LatticeError::MalformedLattice(format!(
                "final state {s} outside 0..{}",
                self.num_states
            )));
        }
        Ok(())
    }
}

/// Kahn's algorithm with a min-index priority queue. The initial state is
/// preferred over every other ready state so it always comes first when it
/// has no predecessors.
pub fn topological_order(lattice: &Lattice) -> Result<Vec<StateId>, LatticeError> {
    lattice.check_indices()?;
    let n = lattice.num_states;
    let mut indeg = vec![0usize; n];
    for a in &lattice.arcs {
        indeg[a.dst] += 1;
    }
    let out = lattice.out_arcs();
    let key = |s: StateId| Reverse((s != lattice.initial_state, s));
    let mut heap: BinaryHeap<Reverse<(bool, StateId)>> =
        (0..n).filter(|&s| indeg[s] == 0).map(key).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, s))) = heap.pop() {
        order.push(s);
        for &ai in &out[s] {
            let d = lattice.arcs[ai].dst;
            indeg[d] -= 1;
            if indeg[d] == 0 {
                heap.push(key(d));
            }
        }
    }
    if order.len() != n {
        return Err(LatticeError::CyclicLattice);
    }
    Ok(order)
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// The input lattice, or its trimmed version when trimming was requested.
    pub lattice: Lattice,
    /// States not reachable from the initial state.
    pub unreachable: Vec<StateId>,
    /// States from which no final state can be reached.
    pub dead_ends: Vec<StateId>,
    /// Arcs with a NaN or infinite cost.
    pub non_finite_arcs: Vec<usize>,
    /// Final states with a NaN or infinite final cost.
    pub non_finite_finals: Vec<StateId>,
    /// Old state index to new state index (identity without trimming).
    pub state_map: Vec<Option<StateId>>,
}

impl ValidationReport {
    /// True when no issue was found in the input.
    pub fn is_clean(&self) -> bool {
        self.unreachable.is_empty()
            && self.dead_ends.is_empty()
            && self.non_finite_arcs.is_empty()
            && self.non_finite_finals.is_empty()
    }
}

/// Checks the lattice definition and optionally trims it so that every state
/// lies on a complete path and every cost is finite.
pub fn validate(lattice: &Lattice, trim: bool) -> Result<ValidationReport, LatticeError> {
    lattice.check_indices()?;
    topological_order(lattice)?;
    if lattice.final_states.is_empty() {
        return Err(LatticeError::NoFinalState);
    }
    let n = lattice.num_states;
    let non_finite_arcs: Vec<usize> = lattice
        .arcs
        .iter()
        .enumerate()
        .filter(|(_, a)| !(a.lm_cost.is_finite() && a.ac_cost.is_finite()))
        .map(|(i, _)| i)
        .collect();
    let non_finite_finals: Vec<StateId> = lattice
        .final_states
        .iter()
        .filter(|(_, c)| !c.is_finite())
        .map(|(&s, _)| s)
        .collect();
    let arc_ok = |i: usize| !trim || non_finite_arcs.binary_search(&i).is_err();
    let final_ok = |s: StateId| !trim || non_finite_finals.binary_search(&s).is_err();

    let mut fwd = vec![false; n];
    let out = lattice.out_arcs();
    let mut stack = vec![lattice.initial_state];
    fwd[lattice.initial_state] = true;
    while let Some(s) = stack.pop() {
        for &ai in &out[s] {
            let d = lattice.arcs[ai].dst;
            if arc_ok(ai) && !fwd[d] {
                fwd[d] = true;
                stack.push(d);
            }
        }
    }
    let mut bwd = vec![false; n];
    let inc = lattice.in_arcs();
    let mut stack: Vec<StateId> = lattice
        .final_states
        .keys()
        .copied()
        .filter(|&s| final_ok(s))
        .collect();
    for &s in &stack {
        bwd[s] = true;
    }
    while let Some(s) = stack.pop() {
        for &ai in &inc[s] {
            let src = lattice.arcs[ai].src;
            if arc_ok(ai) && !bwd[src] {
                bwd[src] = true;
                stack.push(src);
            }
        }
    }
    let unreachable: Vec<StateId> = (0..n).filter(|&s| !fwd[s]).collect();
    let dead_ends: Vec<StateId> = (0..n).filter(|&s| !bwd[s]).collect();

    if !trim {
        if !bwd[lattice.initial_state] {
            return Err(LatticeError::NoFinalState);
        }
        return Ok(ValidationReport {
            lattice: lattice.clone(),
            unreachable,
            dead_ends,
            non_finite_arcs,
            non_finite_finals,
            state_map: (0..n).map(Some).collect(),
        });
    }
    if !bwd[lattice.initial_state] {
        return Err(LatticeError::NoFinalState);
    }
    let mut state_map = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if fwd[s] && bwd[s] {
            state_map[s] = Some(next);
            next += 1;
        }
    }
    let arcs = lattice
        .arcs
        .iter()
        .enumerate()
        .filter(|&(i, a)| arc_ok(i) && state_map[a.src].is_some() && state_map[a.dst].is_some())
        .map(|(_, a)| Arc {
            src: state_map[a.src].unwrap(),
            dst: state_map[a.dst].unwrap(),
            ..*a
        })
        .collect();
    let final_states = lattice
        .final_states
        .iter()
        .filter(|&(&s, _)| final_ok(s))
        .filter_map(|(&s, &c)| state_map[s].map(|ns| (ns, c)))
        .collect();
    let trimmed = Lattice {
        utterance_id: lattice.utterance_id.clone(),
        num_states: next,
        arcs,
        initial_state: state_map[lattice.initial_state].unwrap(),
        final_states,
    };
    Ok(ValidationReport {
        lattice: trimmed,
        unreachable,
        dead_ends,
        non_finite_arcs,
        non_finite_finals,
        state_map,
    })
}

/// Relabels states so every arc satisfies `src < dst` and the initial state
/// is 0. Arc order is unchanged.
pub fn topo_sort(lattice: &Lattice) -> Result<Lattice, LatticeError> {
    topo_sort_with_map(lattice).map(|(l, _)| l)
}

/// Like [`topo_sort`], also returning the old-to-new state map.
pub fn topo_sort_with_map(lattice: &Lattice) -> Result<(Lattice, Vec<StateId>), LatticeError> {
    let order = topological_order(lattice)?;
    if order[0] != lattice.initial_state {
        return Err(LatticeError::MalformedLattice(
            "initial state has incoming arcs".into(),
        ));
    }
    let mut map = vec![0; lattice.num_states];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    let sorted = Lattice {
        utterance_id: lattice.utterance_id.clone(),
        num_states: lattice.num_states,
        arcs: lattice
            .arcs
            .iter()
            .map(|a| Arc {
                src: map[a.src],
                dst: map[a.dst],
                ..*a
            })
            .collect(),
        initial_state: 0,
        final_states: lattice
            .final_states
            .iter()
            .map(|(&s, &c)| (map[s], c))
            .collect(),
    };
    Ok((sorted, map))
}

/// Adds the auxiliary `<s>` arc into the initial state and one `</s>` arc out
/// of each final state, carrying that state's final cost as its LM cost. The
/// result has a single final state with cost 0 and is topologically sorted.
pub fn augment(lattice: &Lattice) -> Result<Lattice, LatticeError> {
    if lattice.is_augmented() {
        return Err(LatticeError::AlreadyAugmented);
    }
    if lattice.num_states > MAX_STATES {
        return Err(LatticeError::TooManyStates {
            states: lattice.num_states,
            max: MAX_STATES,
        });
    }
    lattice.check_indices()?;
    let start = lattice.num_states;
    let end = start + 1;
    let mut arcs = Vec::with_capacity(lattice.arcs.len() + 1 + lattice.final_states.len());
    arcs.push(Arc::new(start, lattice.initial_state, BOS, 0.0, 0.0));
    arcs.extend_from_slice(&lattice.arcs);
    for (&s, &c) in &lattice.final_states {
        arcs.push(Arc::new(s, end, EOS, c, 0.0));
    }
    let mut final_states = BTreeMap::new();
    final_states.insert(end, 0.0);
    let aug = Lattice {
        utterance_id: lattice.utterance_id.clone(),
        num_states: lattice.num_states + 2,
        arcs,
        initial_state: start,
        final_states,
    };
    topo_sort(&aug)
}

/// Best forward (`alpha`) and backward (`beta`) combined costs per state.
/// `beta[s]` includes the weighted final cost.
pub fn forward_backward_best(
    lattice: &Lattice,
    weights: &ScoreWeights,
    extra: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>), LatticeError> {
    let order = topological_order(lattice)?;
    let n = lattice.num_states;
    let out = lattice.out_arcs();
    let cost = |i: usize| {
        let a = &lattice.arcs[i];
        weights.arc_cost(a.ac_cost, a.lm_cost) + extra.map_or(0.0, |e| e[i])
    };
    let mut alpha = vec![f64::INFINITY; n];
    alpha[lattice.initial_state] = 0.0;
    for &s in &order {
        if alpha[s].is_infinite() {
            continue;
        }
        for &ai in &out[s] {
            let d = lattice.arcs[ai].dst;
            let c = alpha[s] + cost(ai);
            if c < alpha[d] {
                alpha[d] = c;
            }
        }
    }
    let mut beta = vec![f64::INFINITY; n];
    for &s in order.iter().rev() {
        let mut b = lattice
            .final_states
            .get(&s)
            .map_or(f64::INFINITY, |&c| weights.final_cost(c));
        for &ai in &out[s] {
            let c = cost(ai) + beta[lattice.arcs[ai].dst];
            if c < b {
                b = c;
            }
        }
        beta[s] = b;
    }
    Ok((alpha, beta))
}

/// Arcs and final states surviving a beam of `beam` around the best path.
pub fn prune_mask(
    lattice: &Lattice,
    beam: f64,
    weights: &ScoreWeights,
) -> Result<(Vec<bool>, Vec<bool>), LatticeError> {
    let (alpha, beta) = forward_backward_best(lattice, weights, None)?;
    let best = beta[lattice.initial_state];
    if !best.is_finite() {
        return Err(LatticeError::NoFinalState);
    }
    let limit = best + beam + 1e-9 * (1.0 + best.abs());
    let arcs = lattice
        .arcs
        .iter()
        .map(|a| alpha[a.src] + weights.arc_cost(a.ac_cost, a.lm_cost) + beta[a.dst] <= limit)
        .collect();
    let mut finals = vec![false; lattice.num_states];
    for (&s, &c) in &lattice.final_states {
        finals[s] = alpha[s] + weights.final_cost(c) <= limit;
    }
    Ok((arcs, finals))
}

/// Removes every arc whose best complete path is more than `beam` worse than
/// the global best path, then trims.
pub fn prune(lattice: &Lattice, beam: f64, weights: &ScoreWeights) -> Result<Lattice, LatticeError> {
    prune_with_map(lattice, beam, weights).map(|(l, _)| l)
}

/// Like [`prune`], also returning the old-to-new state map.
pub fn prune_with_map(
    lattice: &Lattice,
    beam: f64,
    weights: &ScoreWeights,
) -> Result<(Lattice, Vec<Option<StateId>>), LatticeError> {
    let (keep_arcs, keep_finals) = prune_mask(lattice, beam, weights)?;
    let filtered = Lattice {
        utterance_id: lattice.utterance_id.clone(),
        num_states: lattice.num_states,
        arcs: lattice
            .arcs
            .iter()
            .zip(&keep_arcs)
            .filter(|(_, &k)| k)
            .map(|(a, _)| *a)
            .collect(),
        initial_state: lattice.initial_state,
        final_states: lattice
            .final_states
            .iter()
            .filter(|(&s, _)| keep_finals[s])
            .map(|(&s, &c)| (s, c))
            .collect(),
    };
    let report = validate(&filtered, true)?;
    Ok((report.lattice, report.state_map))
}

/// One complete path of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub arcs: Vec<usize>,
    pub states: Vec<StateId>,
    /// Arc labels along the path, auxiliary symbols included.
    pub words: Vec<WordId>,
    /// Summed LM cost including the final cost.
    pub lm_cost: f64,
    pub ac_cost: f64,
}

impl PathRecord {
    pub fn combined_cost(&self, weights: &ScoreWeights) -> f64 {
        weights.a * self.ac_cost + weights.l1 * self.lm_cost
    }
}

/// Lists every complete path in lexicographic order of state sequences
/// (parallel arcs by arc index). A path ending at a final state precedes its
/// own extensions.
pub fn enumerate_paths(lattice: &Lattice, limit: usize) -> Result<Vec<PathRecord>, LatticeError> {
    let total = lattice.num_paths()?;
    if total > limit as u128 {
        return Err(LatticeError::TooManyPaths { limit });
    }
    let mut out = lattice.out_arcs();
    for arcs in &mut out {
        arcs.sort_by_key(|&ai| (lattice.arcs[ai].dst, ai));
    }
    let mut paths = Vec::with_capacity(total as usize);
    let mut arc_stack: Vec<usize> = Vec::new();
    // (state, next outgoing arc position, emitted-final flag)
    let mut frames: Vec<(StateId, usize, bool)> = vec![(lattice.initial_state, 0, false)];
    while let Some(frame) = frames.last_mut() {
        let (s, pos, emitted) = *frame;
        if !emitted {
            frame.2 = true;
            if let Some(&fc) = lattice.final_states.get(&s) {
                let mut lm = 0.0;
                let mut ac = 0.0;
                for &ai in &arc_stack {
                    lm += lattice.arcs[ai].lm_cost;
                    ac += lattice.arcs[ai].ac_cost;
                }
                let mut states = vec![lattice.initial_state];
                states.extend(arc_stack.iter().map(|&ai| lattice.arcs[ai].dst));
                paths.push(PathRecord {
                    arcs: arc_stack.clone(),
                    states,
                    words: lattice.words_of(&arc_stack),
                    lm_cost: lm + fc,
                    ac_cost: ac,
                });
            }
            continue;
        }
        if pos < out[s].len() {
            frame.1 += 1;
            let ai = out[s][pos];
            arc_stack.push(ai);
            frames.push((lattice.arcs[ai].dst, 0, false));
        } else {
            frames.pop();
            arc_stack.pop();
        }
    }
    Ok(paths)
}
