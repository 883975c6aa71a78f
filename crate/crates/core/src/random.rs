//! Random lattice fixtures for property tests and the self-test command.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lattice::{Arc, Lattice};
use crate::symbols::WordId;

#[derive(Debug, Clone)]
pub struct RandomLatticeSpec {
    pub states: usize,
    /// Arcs added on top of the spanning arcs that make every state useful.
    pub extra_arcs: usize,
    pub words: Vec<WordId>,
    /// Probability that a non-last state is also final.
    pub final_prob: f64,
    pub max_cost: f64,
    /// Randomly relabel states so the result is not topologically sorted.
    pub shuffle_states: bool,
}

impl Default for RandomLatticeSpec {
    fn default() -> Self {
        Self {
            states: 6,
            extra_arcs: 4,
            words: (4..10).collect(),
            final_prob: 0.15,
            max_cost: 5.0,
            shuffle_states: false,
        }
    }
}

/// A trimmed, acyclic lattice in which every state lies on a complete path.
/// The initial state is 0 unless states are shuffled.
pub fn random_lattice<R: Rng + ?Sized>(rng: &mut R, spec: &RandomLatticeSpec, id: &str) -> Lattice {
    let n = spec.states.max(2);
    let mut arcs = Vec::new();
    let arc = |rng: &mut R, src: usize, dst: usize| {
        let word = spec.words[rng.random_range(0..spec.words.len())];
        Arc::new(
            src,
            dst,
            word,
            rng.random::<f64>() * spec.max_cost,
            rng.random::<f64>() * spec.max_cost,
        )
    };
    for s in 1..n {
        let src = rng.random_range(0..s);
        arcs.push(arc(rng, src, s));
    }
    for s in 0..n - 1 {
        if !arcs.iter().any(|a: &Arc| a.src == s) {
            let dst = rng.random_range(s + 1..n);
            arcs.push(arc(rng, s, dst));
        }
    }
    for _ in 0..spec.extra_arcs {
        let src = rng.random_range(0..n - 1);
        let dst = rng.random_range(src + 1..n);
        arcs.push(arc(rng, src, dst));
    }
    let mut finals = vec![(n - 1, rng.random::<f64>() * spec.max_cost)];
    for s in 1..n - 1 {
        if rng.random::<f64>() < spec.final_prob {
            finals.push((s, rng.random::<f64>() * spec.max_cost));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    if spec.shuffle_states {
        perm.shuffle(rng);
    }
    arcs.shuffle(rng);
    let mut lat = Lattice::new(id);
    lat.num_states = n;
    lat.initial_state = perm[0];
    for a in arcs {
        lat.add_arc(Arc { src: perm[a.src], dst: perm[a.dst], ..a });
    }
    for (s, c) in finals {
        lat.set_final(perm[s], c);
    }
    lat
}

/// Draws lattices until one has at most `max_paths` complete paths.
pub fn random_small_lattice<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &RandomLatticeSpec,
    max_paths: u128,
    id: &str,
) -> Lattice {
    loop {
        let lat = random_lattice(rng, spec, id);
        if lat.num_paths().is_ok_and(|p| p <= max_paths) {
            return lat;
        }
    }
}
