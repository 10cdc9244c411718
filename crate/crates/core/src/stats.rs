//! Class co-occurrence counts, the probability matrix derived from them,
//! per-neuron average outputs and thresholds, and the online update rules
//! that keep all of them current.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::som::SomGrid;
use crate::types::{distance, LabelCardinality, LabelSet};

/// `t[j][k]` counts instances carrying both classes `j` and `k`; the diagonal
/// counts instances carrying `j`. `n_total` is the instance total `N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub t: Vec<Vec<u64>>,
    pub n_total: u64,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        CountMatrix {
            t: vec![vec![0; n]; n],
            n_total: 0,
        }
    }

    pub fn build<'a, I>(labelsets: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabelSet>,
    {
        let mut counts = CountMatrix::zeros(n);
        for y in labelsets {
            y.check_bounds(n)?;
            counts.update(y);
            counts.n_total += 1;
        }
        Ok(counts)
    }

    pub fn n_classes(&self) -> usize {
        self.t.len()
    }

    /// Adds one instance's label set. `n_total` is left to the caller, which
    /// advances it when the instance arrives.
    pub fn update(&mut self, y: &LabelSet) {
        let members = y.as_slice();
        for (i, &c) in members.iter().enumerate() {
            self.t[c][c] += 1;
            for &d in &members[i + 1..] {
                self.t[c][d] += 1;
                self.t[d][c] += 1;
            }
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n_classes();
        for j in 0..n {
            if self.t[j].len() != n {
                return Err(Error::usage("count matrix is not square"));
            }
            if self.t[j][j] > self.n_total {
                return Err(Error::usage(format!("t[{j},{j}] exceeds N")));
            }
            for k in 0..n {
                if self.t[j][k] != self.t[k][j] {
                    return Err(Error::usage(format!("t[{j},{k}] != t[{k},{j}]")));
                }
                if self.t[j][k] > self.t[j][j].min(self.t[k][k]) {
                    return Err(Error::usage(format!("t[{j},{k}] exceeds its marginals")));
                }
            }
        }
        Ok(())
    }
}

/// `p[j][k] = p(y_j | y_k)` off the diagonal, `p[j][j] = p(y_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    pub p: Vec<Vec<f64>>,
}

impl ProbMatrix {
    pub fn from_counts(counts: &CountMatrix) -> Result<Self> {
        if counts.n_total == 0 {
            return Err(Error::usage("probabilities need at least one counted instance"));
        }
        let n = counts.n_classes();
        let mut p = vec![vec![0.0; n]; n];
        for (j, row) in p.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                let denom = if j == k { counts.n_total } else { counts.t[k][k] };
                if denom > 0 {
                    *cell = counts.t[j][k] as f64 / denom as f64;
                }
            }
        }
        Ok(ProbMatrix { p })
    }

    /// Recomputes in place, reusing the allocation.
    pub(crate) fn refresh(&mut self, counts: &CountMatrix) {
        let n_total = counts.n_total.max(1) as f64;
        for (j, row) in self.p.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = if j == k {
                    counts.t[j][j] as f64 / n_total
                } else if counts.t[k][k] > 0 {
                    counts.t[j][k] as f64 / counts.t[k][k] as f64
                } else {
                    0.0
                };
            }
        }
    }

    pub fn prior(&self, j: usize) -> f64 {
        self.p[j][j]
    }

    /// `p(y_j | y_given)`.
    pub fn conditional(&self, j: usize, given: usize) -> f64 {
        self.p[j][given]
    }

    /// `p(y_j) * prod_{k != j, p(y_k|y_j) > 0} p(y_k|y_j)`: the class-only
    /// part of a neuron threshold for map `j`.
    pub fn threshold_factor(&self, j: usize) -> f64 {
        let mut f = self.prior(j);
        for k in 0..self.p.len() {
            if k != j {
                let c = self.conditional(k, j);
                if c > 0.0 {
                    f *= c;
                }
            }
        }
        f
    }
}

/// Threshold of a neuron in map `j` whose average output is `avg_output`.
/// Zero conditionals are skipped so they cannot annihilate the product.
pub fn neuron_threshold(j: usize, probs: &ProbMatrix, avg_output: f64) -> f64 {
    probs.threshold_factor(j) * avg_output
}

/// How the online average-output update combines a new discriminant value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgOutputMode {
    /// `avg += exp(-||x - m||)`, a cumulative sum.
    #[default]
    Verbatim,
    /// Incremental mean over the neuron's hit count.
    RunningMean,
}

impl std::str::FromStr for AvgOutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(AvgOutputMode::Verbatim),
            "running_mean" => Ok(AvgOutputMode::RunningMean),
            other => Err(Error::Config(format!(
                "unknown avg_output_mode `{other}` (expected verbatim or running_mean)"
            ))),
        }
    }
}

/// Per-map, per-neuron average outputs, thresholds and hit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronStats {
    pub avg_output: Vec<Vec<f64>>,
    pub threshold: Vec<Vec<f64>>,
    /// Instances each neuron has averaged over (offline mapped set plus online hits).
    pub hits: Vec<Vec<u64>>,
}

impl NeuronStats {
    pub fn new(avg_output: Vec<Vec<f64>>, hits: Vec<Vec<u64>>, probs: &ProbMatrix) -> Self {
        let threshold = avg_output.iter().map(|row| vec![0.0; row.len()]).collect();
        let mut stats = NeuronStats {
            avg_output,
            threshold,
            hits,
        };
        stats.update_thresholds(probs);
        stats
    }

    /// Recomputes every neuron threshold from the current probabilities and
    /// average outputs.
    pub fn update_thresholds(&mut self, probs: &ProbMatrix) {
        for (j, (thr, avg)) in self.threshold.iter_mut().zip(&self.avg_output).enumerate() {
            let factor = probs.threshold_factor(j);
            for (t, &a) in thr.iter_mut().zip(avg) {
                *t = factor * a;
            }
        }
    }

    /// Folds one discriminant value into neuron `b` of map `j`.
    pub fn record_output(&mut self, j: usize, b: usize, output: f64, mode: AvgOutputMode) {
        let hits = self.hits[j][b];
        let avg = &mut self.avg_output[j][b];
        *avg = match mode {
            AvgOutputMode::Verbatim => *avg + output,
            AvgOutputMode::RunningMean => (*avg * hits as f64 + output) / (hits + 1) as f64,
        };
        self.hits[j][b] = hits + 1;
    }
}

/// Average discriminant per neuron over the class instances mapped to it.
/// Returns `(avg_output, mapped)`; neurons with no instances get 0.
pub fn average_outputs<V: AsRef<[f64]>>(grid: &SomGrid, class_data: &[V]) -> (Vec<f64>, Vec<u64>) {
    let mut sums = vec![0.0; grid.len()];
    let mut mapped = vec![0u64; grid.len()];
    for x in class_data {
        let x = x.as_ref();
        let (b, d2) = grid.bmu(x);
        sums[b] += (-d2.sqrt()).exp();
        mapped[b] += 1;
    }
    let avg = sums
        .iter()
        .zip(&mapped)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    (avg, mapped)
}

/// `avg_prev + exp(-||x - m_b||)`.
pub fn update_average_output(avg_prev: f64, x: &[f64], m_b: &[f64]) -> Result<f64> {
    if x.len() != m_b.len() {
        return Err(Error::usage("length mismatch"));
    }
    Ok(avg_prev + (-distance(x, m_b)).exp())
}

/// `z_N = ((N - 1) z_{N-1} + |Y_N|) / N`, where `n` already counts the new instance.
pub fn update_cardinality(prev: LabelCardinality, y: &LabelSet, n: u64) -> Result<LabelCardinality> {
    if n == 0 {
        return Err(Error::usage("cardinality update needs N >= 1"));
    }
    let z = ((n - 1) as f64 * prev.z + y.len() as f64) / n as f64;
    Ok(LabelCardinality { z, n })
}
