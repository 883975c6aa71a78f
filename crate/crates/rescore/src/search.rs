//! Viterbi best path and N-best extraction over weighted lattices.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use ltlm_core::lattice::forward_backward_best;
use ltlm_core::symbols::is_auxiliary;
use ltlm_core::{Lattice, ScoreWeights, WordId};

use crate::RescoreError;

/// Hard cap on A* pops per lattice, to bound lattices where very many
/// paths share few word sequences.
pub const MAX_NBEST_POPS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Words with auxiliary symbols removed.
    pub words: Vec<WordId>,
    pub arcs: Vec<usize>,
    pub ac_cost: f64,
    /// Includes the final cost.
    pub lm_cost: f64,
    /// Weighted first-pass cost plus any extra arc costs.
    pub cost: f64,
}

fn words_without_aux(lattice: &Lattice, arcs: &[usize]) -> Vec<WordId> {
    arcs.iter()
        .map(|&a| lattice.arcs[a].word)
        .filter(|&w| !is_auxiliary(w))
        .collect()
}

fn check_extra(lattice: &Lattice, extra: Option<&[f64]>) -> Result<(), RescoreError> {
    if let Some(e) = extra {
        if e.len() != lattice.arcs.len() {
            return Err(RescoreError::Malformed(format!(
                "{} extra costs for {} arcs in {}",
                e.len(),
                lattice.arcs.len(),
                lattice.utterance_id
            )));
        }
    }
    Ok(())
}

fn hypothesis(lattice: &Lattice, arcs: Vec<usize>, final_state: usize, weights: &ScoreWeights, extra: Option<&[f64]>) -> Hypothesis {
    let mut ac = 0.0;
    let mut lm = 0.0;
    let mut cost = 0.0;
    for &a in &arcs {
        let arc = &lattice.arcs[a];
        ac += arc.ac_cost;
        lm += arc.lm_cost;
        cost += weights.arc_cost(arc.ac_cost, arc.lm_cost) + extra.map_or(0.0, |e| e[a]);
    }
    let fc = lattice.final_states[&final_state];
    Hypothesis {
        words: words_without_aux(lattice, &arcs),
        arcs,
        ac_cost: ac,
        lm_cost: lm + fc,
        cost: cost + weights.final_cost(fc),
    }
}

/// Lowest-cost complete path. `extra` holds already weighted per-arc costs.
/// Among equal-cost paths the lexicographically smallest state sequence
/// wins (parallel arcs by index; stopping beats continuing).
pub fn best_path(lattice: &Lattice, weights: &ScoreWeights, extra: Option<&[f64]>) -> Result<Hypothesis, RescoreError> {
    check_extra(lattice, extra)?;
    let (_, beta) = forward_backward_best(lattice, weights, extra)?;
    if !beta[lattice.initial_state].is_finite() {
        return Err(RescoreError::NoCompletePath(lattice.utterance_id.clone()));
    }
    let out = lattice.out_arcs();
    let cost = |i: usize| {
        let a = &lattice.arcs[i];
        weights.arc_cost(a.ac_cost, a.lm_cost) + extra.map_or(0.0, |e| e[i])
    };
    let mut s = lattice.initial_state;
    let mut arcs = Vec::new();
    loop {
        if lattice.final_states.get(&s).is_some_and(|&c| weights.final_cost(c) == beta[s]) {
            break;
        }
        let next = out[s]
            .iter()
            .copied()
            .filter(|&ai| cost(ai) + beta[lattice.arcs[ai].dst] == beta[s])
            .min_by_key(|&ai| (lattice.arcs[ai].dst, ai))
            .expect("beta is attained by some arc or final cost");
        arcs.push(next);
        s = lattice.arcs[next].dst;
    }
    Ok(hypothesis(lattice, arcs, s, weights, extra))
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Partial { state: usize, g: f64, node: Option<usize> },
    Complete { state: usize, node: Option<usize> },
}

struct Entry {
    f: f64,
    seq: u64,
    item: Item,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Reversed for a min-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Up to `n` distinct word sequences in increasing first-pass cost, found
/// by A* over partial paths with the exact cost-to-go as heuristic. A word
/// sequence reached by several paths keeps its cheapest one.
pub fn nbest_extract(lattice: &Lattice, n: usize, weights: &ScoreWeights) -> Result<Vec<Hypothesis>, RescoreError> {
    let (_, beta) = forward_backward_best(lattice, weights, None)?;
    let mut out = Vec::new();
    if n == 0 || !beta[lattice.initial_state].is_finite() {
        return Ok(out);
    }
    let adj = lattice.out_arcs();
    // Path arena: (parent node, arc).
    let mut nodes: Vec<(Option<usize>, usize)> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Entry>, f: f64, item: Item| {
        heap.push(Entry { f, seq, item });
        seq += 1;
    };
    push(
        &mut heap,
        beta[lattice.initial_state],
        Item::Partial {
            state: lattice.initial_state,
            g: 0.0,
            node: None,
        },
    );
    let mut seen: HashSet<Vec<WordId>> = HashSet::new();
    let mut pops = 0usize;
    while let Some(Entry { f, item, .. }) = heap.pop() {
        pops += 1;
        if pops > MAX_NBEST_POPS {
            log::warn!("{}: N-best search stopped after {MAX_NBEST_POPS} expansions", lattice.utterance_id);
            break;
        }
        match item {
            Item::Complete { state, node } => {
                let mut arcs = Vec::new();
                let mut cur = node;
                while let Some(i) = cur {
                    arcs.push(nodes[i].1);
                    cur = nodes[i].0;
                }
                arcs.reverse();
                let words = words_without_aux(lattice, &arcs);
                if seen.insert(words) {
                    let mut h = hypothesis(lattice, arcs, state, weights, None);
                    h.cost = f;
                    out.push(h);
                    if out.len() == n {
                        break;
                    }
                }
            }
            Item::Partial { state, g, node } => {
                if let Some(&fc) = lattice.final_states.get(&state) {
                    push(&mut heap, g + weights.final_cost(fc), Item::Complete { state, node });
                }
                for &ai in &adj[state] {
                    let arc = &lattice.arcs[ai];
                    if !beta[arc.dst].is_finite() {
                        continue;
                    }
                    let g2 = g + weights.arc_cost(arc.ac_cost, arc.lm_cost);
                    nodes.push((node, ai));
                    push(
                        &mut heap,
                        g2 + beta[arc.dst],
                        Item::Partial {
                            state: arc.dst,
                            g: g2,
                            node: Some(nodes.len() - 1),
                        },
                    );
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltlm_core::Arc;

    fn diamond(c1: f64, c2: f64) -> Lattice {
        let mut l = Lattice::new("d");
        l.add_arc(Arc::new(0, 1, 4, c1, 0.0));
        l.add_arc(Arc::new(0, 2, 5, c2, 0.0));
        l.add_arc(Arc::new(1, 3, 6, 0.0, 0.0));
        l.add_arc(Arc::new(2, 3, 6, 0.0, 0.0));
        l.set_final(3, 0.0);
        l
    }

    #[test]
    fn single_path_cost_is_the_weighted_sum() {
        let mut l = Lattice::new("s");
        l.add_arc(Arc::new(0, 1, 4, 1.0, 2.0));
        l.add_arc(Arc::new(1, 2, 5, 0.5, 0.25));
        l.set_final(2, 0.125);
        let w = ScoreWeights::new(2.0, 3.0, 0.0);
        let h = best_path(&l, &w, None).unwrap();
        assert_eq!(h.words, vec![4, 5]);
        assert_eq!(h.cost, 2.0 * 2.25 + 3.0 * 1.625);
    }

    #[test]
    fn diamond_picks_the_cheaper_branch() {
        let h = best_path(&diamond(3.0, 2.5), &ScoreWeights::first_pass(), None).unwrap();
        assert_eq!(h.words, vec![5, 6]);
        assert_eq!(h.cost, 2.5);
    }

    #[test]
    fn ties_go_to_the_smaller_state_sequence() {
        let h = best_path(&diamond(1.0, 1.0), &ScoreWeights::first_pass(), None).unwrap();
        assert_eq!(h.arcs, vec![0, 2]);
    }

    #[test]
    fn extra_costs_can_flip_the_choice() {
        let l = diamond(1.0, 1.5);
        let h = best_path(&l, &ScoreWeights::first_pass(), Some(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(h.words, vec![5, 6]);
        assert!(best_path(&l, &ScoreWeights::first_pass(), Some(&[1.0])).is_err());
    }

    #[test]
    fn two_sequences_give_two_hypotheses() {
        let n = nbest_extract(&diamond(1.0, 2.0), 50, &ScoreWeights::first_pass()).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!(n[0].words, vec![4, 6]);
        assert_eq!(n[1].words, vec![5, 6]);
    }

    #[test]
    fn duplicate_word_sequences_keep_the_cheapest_path() {
        let mut l = Lattice::new("dup");
        l.add_arc(Arc::new(0, 1, 4, 2.0, 0.0));
        l.add_arc(Arc::new(0, 1, 4, 1.0, 0.0));
        l.set_final(1, 0.0);
        let n = nbest_extract(&l, 5, &ScoreWeights::first_pass()).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].arcs, vec![1]);
        assert_eq!(n[0].cost, 1.0);
    }

    #[test]
    fn no_complete_path_is_an_error() {
        let mut l = Lattice::new("x");
        l.add_arc(Arc::new(0, 1, 4, 0.0, 0.0));
        l.set_final(2, 0.0);
        assert!(matches!(
            best_path(&l, &ScoreWeights::first_pass(), None),
            Err(RescoreError::NoCompletePath(_))
        ));
        assert!(nbest_extract(&l, 3, &ScoreWeights::first_pass()).unwrap().is_empty());
    }
}
