//! Random neural network with one neuron per output port.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::error::CramError;
use crate::simnet::FlowKey;
use crate::topo::{NodeId, PortNo};

/// Floor applied to the denominator of the potential equation.
pub const EPS_FLOOR: f64 = 1e-12;
/// Potentials are probabilities; saturated neurons are clamped here.
pub const Q_CAP: f64 = 0.999_999;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Explore,
    Exploit,
}

/// Which weight update a reward triggered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    Success,
    Failure,
}

/// Parameters of a freshly created RNN and of its fixed-point solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RnnParams {
    pub w_init: f64,
    pub lambda_plus_init: f64,
    pub lambda_minus_init: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl Default for RnnParams {
    fn default() -> Self {
        RnnParams { w_init: 1.0, lambda_plus_init: 1.0, lambda_minus_init: 0.0, fp_tol: 1e-9, fp_max_iter: 10_000 }
    }
}

/// Per-(flow, NFE) network. `w_plus[i][j]` is the excitatory weight of the
/// connection from neuron `i` to neuron `j`; the diagonal is always zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RnnState {
    pub flow: FlowKey,
    pub nfe: NodeId,
    pub neurons: Vec<PortNo>,
    pub w_plus: Vec<Vec<f64>>,
    pub w_minus: Vec<Vec<f64>>,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl RnnState {
    /// Symmetric network over `ports`, potentials solved.
    pub fn new(flow: FlowKey, nfe: NodeId, ports: &[PortNo], p: &RnnParams) -> Result<Self, CramError> {
        if ports.is_empty() {
            return Err(CramError::NoPorts);
        }
        let n = ports.len();
        let full = |v: f64| (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { v }).collect()).collect();
        Self::from_parts(
            flow,
            nfe,
            ports.to_vec(),
            full(p.w_init),
            full(p.w_init),
            vec![p.lambda_plus_init; n],
            vec![p.lambda_minus_init; n],
            p,
        )
    }

    /// Builds a network from explicit weights; diagonals are zeroed.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        flow: FlowKey,
        nfe: NodeId,
        neurons: Vec<PortNo>,
        mut w_plus: Vec<Vec<f64>>,
        mut w_minus: Vec<Vec<f64>>,
        lambda_plus: Vec<f64>,
        lambda_minus: Vec<f64>,
        p: &RnnParams,
    ) -> Result<Self, CramError> {
        let n = neurons.len();
        if n == 0 {
            return Err(CramError::NoPorts);
        }
        for (i, (a, b)) in w_plus.iter_mut().zip(w_minus.iter_mut()).enumerate() {
            a[i] = 0.0;
            b[i] = 0.0;
        }
        let mut rnn = RnnState { flow, nfe, neurons, w_plus, w_minus, lambda_plus, lambda_minus, q: vec![0.0; n], r: vec![0.0; n] };
        rnn.recompute_r();
        rnn.solve(p.fp_tol, p.fp_max_iter)?;
        Ok(rnn)
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn neuron_of(&self, port: PortNo) -> Option<usize> {
        self.neurons.iter().position(|p| *p == port)
    }

    /// Firing-rate normaliser of each neuron: its total outgoing weight.
    pub fn row_sums(&self) -> Vec<f64> {
        self.w_plus.iter().zip(&self.w_minus).map(|(a, b)| a.iter().sum::<f64>() + b.iter().sum::<f64>()).collect()
    }

    pub fn recompute_r(&mut self) {
        self.r = self.row_sums();
    }

    /// Total excitatory and inhibitory arrival rates at every neuron for the
    /// potentials `q`.
    fn arrival_rates(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut plus = self.lambda_plus.clone();
        let mut minus = self.lambda_minus.clone();
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    plus[i] += q[j] * self.w_plus[j][i];
                    minus[i] += q[j] * self.w_minus[j][i];
                }
            }
        }
        (plus, minus)
    }

    fn potential_map(&self, q: &[f64]) -> Vec<f64> {
        let (plus, minus) = self.arrival_rates(q);
        (0..self.len()).map(|i| (plus[i] / (self.r[i] + minus[i]).max(EPS_FLOOR)).clamp(0.0, Q_CAP)).collect()
    }

    /// Largest change one more fixed-point step would make to `q`.
    pub fn residual(&self) -> f64 {
        self.potential_map(&self.q).iter().zip(&self.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Synchronous fixed-point iteration from `q = 0`. Returns the number of
    /// iterations; on success the stored `q` has residual below `tol`.
    pub fn solve(&mut self, tol: f64, max_iter: usize) -> Result<usize, CramError> {
        let mut q = vec![0.0; self.len()];
        let mut residual = f64::INFINITY;
        for it in 1..=max_iter {
            let next = self.potential_map(&q);
            residual = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if residual < tol {
                self.q = q;
                return Ok(it);
            }
            q = next;
        }
        self.q = q;
        Err(CramError::NoConvergence { iterations: max_iter, residual })
    }

    /// Picks an output neuron among ports not in `forbidden`.
    pub fn select<R: Rng + ?Sized>(&self, mode: Mode, forbidden: &BTreeSet<PortNo>, rng: &mut R) -> Result<usize, CramError> {
        let allowed: Vec<usize> = (0..self.len()).filter(|&i| !forbidden.contains(&self.neurons[i])).collect();
        if allowed.is_empty() {
            return Err(CramError::AllForbidden);
        }
        Ok(match mode {
            Mode::Explore => allowed[rng.gen_range(0..allowed.len())],
            Mode::Exploit => *allowed
                .iter()
                .max_by(|&&a, &&b| self.q[a].total_cmp(&self.q[b]).then_with(|| self.neurons[b].cmp(&self.neurons[a])))
                .expect("non-empty"),
        })
    }

    /// Index of the most excited neuron, ties to the lowest port.
    pub fn argmax(&self) -> usize {
        let mut none = rand::rngs::mock::StepRng::new(0, 0);
        self.select(Mode::Exploit, &BTreeSet::new(), &mut none).expect("non-empty")
    }

    /// Reward-driven weight update for the decision `chosen`. Weights only;
    /// follow with [`renormalize`](Self::renormalize) and a solve.
    pub fn update_weights(&mut self, chosen: usize, reward: f64, gamma: f64) -> Result<Branch, CramError> {
        let n = self.len();
        if chosen >= n {
            return Err(CramError::BadNeuron(chosen));
        }
        let branch = if reward >= gamma || ties(reward, gamma) { Branch::Success } else { Branch::Failure };
        // with two neurons the divided term has no target
        let spread = if n > 2 { reward / (n - 2) as f64 } else { 0.0 };
        let (direct, divided) = match branch {
            Branch::Success => (&mut self.w_plus, &mut self.w_minus),
            Branch::Failure => (&mut self.w_minus, &mut self.w_plus),
        };
        for j in 0..n {
            if j == chosen {
                continue;
            }
            direct[j][chosen] += reward;
        }
        if n > 2 {
            for (j, row) in divided.iter_mut().enumerate() {
                for (k, w) in row.iter_mut().enumerate() {
                    if k != chosen && k != j {
                        *w += spread;
                    }
                }
            }
        }
        Ok(branch)
    }

    /// Scales every row back to its previous firing rate `r_i`.
    pub fn renormalize(&mut self) {
        let fresh = self.row_sums();
        for i in 0..self.len() {
            if fresh[i] > 0.0 {
                let s = self.r[i] / fresh[i];
                self.w_plus[i].iter_mut().for_each(|w| *w *= s);
                self.w_minus[i].iter_mut().for_each(|w| *w *= s);
            }
        }
        self.recompute_r();
    }

    /// Full learning step: update, renormalise, re-solve.
    pub fn reinforce(&mut self, chosen: usize, reward: f64, gamma: f64, p: &RnnParams) -> Result<Branch, CramError> {
        let b = self.update_weights(chosen, reward, gamma)?;
        self.renormalize();
        self.solve(p.fp_tol, p.fp_max_iter)?;
        Ok(b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

/// Relative tolerance under which a reward counts as equal to the threshold.
fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}
