/// Weights of the log-linear score combination.
///
/// Combined path cost is `a * ac + l1 * lm + l2 * rescoring`, the cost form
/// of `p(X|W)^a P1(W)^l1 P2(W)^l2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreWeights {
    pub a: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            a: 1.0,
            l1: 1.0,
            l2: 0.8,
        }
    }
}

impl ScoreWeights {
    pub fn new(a: f64, l1: f64, l2: f64) -> Self {
        Self { a, l1, l2 }
    }

    /// First-pass weights (no rescoring term).
    pub fn first_pass() -> Self {
        Self {
            l2: 0.0,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.l1.is_finite() && self.l2.is_finite()
    }

    /// First-pass combined cost of one arc.
    #[inline]
    pub fn arc_cost(&self, ac_cost: f64, lm_cost: f64) -> f64 {
        self.a * ac_cost + self.l1 * lm_cost
    }

    /// Final costs are language-model end-of-sentence costs.
    #[inline]
    pub fn final_cost(&self, cost: f64) -> f64 {
        self.l1 * cost
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            a: self.a * k,
            l1: self.l1 * k,
            l2: self.l2 * k,
        }
    }
}
