//! Self-organizing map on a hexagonal lattice.
//!
//! Training is the batch Kohonen procedure: every input is copied into the
//! sub-list of its best matching neuron, then each neuron's weight is replaced
//! by the mean of the inputs held in the union of the sub-lists of its lattice
//! neighborhood. The neighborhood is a hard cut-off on hexagonal lattice
//! distance whose radius shrinks linearly over the epochs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{distance, squared_distance};

/// Minimum number of mapped training instances for a neuron to survive pruning.
pub const MIN_MAPPED: usize = 4;

const INIT_NOISE: f64 = 0.01;

/// Axial coordinates on a hexagonal lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HexPos {
    pub q: i32,
    pub r: i32,
}

impl HexPos {
    /// Converts odd-row offset coordinates (row-major `d x d` layout) to axial.
    pub fn from_offset(row: usize, col: usize) -> Self {
        let (row, col) = (row as i32, col as i32);
        HexPos {
            q: col - (row - (row & 1)) / 2,
            r: row,
        }
    }

    pub fn lattice_distance(self, other: HexPos) -> u32 {
        let dq = self.q - other.q;
        let dr = self.r - other.r;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub weight: Vec<f64>,
    /// Instances assigned to this neuron by the last batch assignment pass.
    pub mapped_count: usize,
    pub grid_pos: HexPos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomGrid {
    pub grid_dim: usize,
    pub neurons: Vec<Neuron>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchTrainConfig {
    pub max_epochs: usize,
    /// Training stops once the largest per-neuron weight displacement in an
    /// epoch falls below this value and the neighborhood has stopped shrinking.
    pub convergence_tol: f64,
    pub initial_radius: f64,
    pub final_radius: f64,
    pub rng_seed: u64,
}

impl BatchTrainConfig {
    /// Defaults for a `d x d` grid: radius decays from `ceil(d / 2)` to 0 over
    /// 100 epochs, tolerance 1e-6.
    pub fn for_grid(d: usize, rng_seed: u64) -> Self {
        BatchTrainConfig {
            max_epochs: 100,
            convergence_tol: 1e-6,
            initial_radius: d.div_ceil(2) as f64,
            final_radius: 0.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        if !(self.final_radius >= 0.0 && self.initial_radius >= self.final_radius) {
            return Err(Error::Config(
                "radii must satisfy initial_radius >= final_radius >= 0".into(),
            ));
        }
        Ok(())
    }

    fn radius_at(&self, epoch: usize) -> f64 {
        if self.max_epochs <= 1 {
            return self.final_radius;
        }
        let t = epoch as f64 / (self.max_epochs - 1) as f64;
        self.initial_radius + (self.final_radius - self.initial_radius) * t
    }
}

/// What happened during [`SomGrid::batch_train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub converged: bool,
    pub last_displacement: f64,
}

impl SomGrid {
    /// Builds a `d x d` grid whose weights are random training instances
    /// (sampled with replacement) plus uniform noise in `±0.01`.
    pub fn init<V: AsRef<[f64]>>(d: usize, training: &[V], rng_seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::usage("grid dimension must be at least 1"));
        }
        if training.is_empty() {
            return Err(Error::usage("cannot initialize a map without training instances"));
        }
        let width = training[0].as_ref().len();
        if training.iter().any(|x| x.as_ref().len() != width) {
            return Err(Error::usage("training instances have differing lengths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let neurons = (0..d * d)
            .map(|i| {
                let src = training[rng.random_range(0..training.len())].as_ref();
                let weight = src
                    .iter()
                    .map(|&v| v + rng.random_range(-INIT_NOISE..=INIT_NOISE))
                    .collect();
                Neuron {
                    weight,
                    mapped_count: 0,
                    grid_pos: HexPos::from_offset(i / d, i % d),
                }
            })
            .collect();
        Ok(SomGrid {
            grid_dim: d,
            neurons,
        })
    }

    /// Builds a grid directly from weight vectors laid out row-major on a
    /// `d x d` lattice (`weights.len() <= d * d`).
    pub fn from_weights(d: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 || weights.is_empty() || weights.len() > d * d {
            return Err(Error::usage("need between 1 and d*d weight vectors"));
        }
        let width = weights[0].len();
        if weights.iter().any(|w| w.len() != width) {
            return Err(Error::usage("weight vectors have differing lengths"));
        }
        let neurons = weights
            .into_iter()
            .enumerate()
            .map(|(i, weight)| Neuron {
                weight,
                mapped_count: 0,
                grid_pos: HexPos::from_offset(i / d, i % d),
            })
            .collect();
        Ok(SomGrid {
            grid_dim: d,
            neurons,
        })
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.neurons.first().map_or(0, |n| n.weight.len())
    }

    pub fn weight(&self, b: usize) -> &[f64] {
        &self.neurons[b].weight
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if self.neurons.is_empty() {
            return Err(Error::usage("map has no neurons"));
        }
        if x.len() != self.n_features() {
            return Err(Error::usage(format!(
                "input has {} features, map weights have {}",
                x.len(),
                self.n_features()
            )));
        }
        Ok(())
    }

    /// Index of the neuron nearest to `x`; the lowest index wins ties.
    pub fn best_matching(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(self.bmu(x).0)
    }

    #[inline]
    pub(crate) fn bmu(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.neurons.iter().enumerate() {
            let d2 = squared_distance(x, &n.weight);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    /// All neurons as `(index, distance)`, ascending by distance, ties by index.
    pub fn sort_neurons(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.neurons.len());
        self.sort_neurons_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn sort_neurons_into(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.extend(
            self.neurons
                .iter()
                .enumerate()
                .map(|(i, n)| (i, distance(x, &n.weight))),
        );
        // Stable, so equal distances keep ascending index order.
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
    }

    /// Batch Kohonen training. Records the final `mapped_count` of every neuron.
    pub fn batch_train<V: AsRef<[f64]> + Sync>(
        &mut self,
        data: &[V],
        cfg: &BatchTrainConfig,
    ) -> Result<TrainSummary> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::usage("batch training needs at least one instance"));
        }
        for x in data {
            self.check_input(x.as_ref())?;
        }
        let n = self.neurons.len();
        let width = self.n_features();
        let lattice: Vec<u32> = (0..n * n)
            .map(|ij| {
                self.neurons[ij / n]
                    .grid_pos
                    .lattice_distance(self.neurons[ij % n].grid_pos)
            })
            .collect();

        let mut sums = vec![0.0; n * width];
        let mut counts = vec![0usize; n];
        let mut next = vec![0.0; width];
        let final_reach = cfg.final_radius.floor() as u32;
        let mut summary = TrainSummary {
            epochs: 0,
            converged: false,
            last_displacement: f64::INFINITY,
        };

        for epoch in 0..cfg.max_epochs {
            let reach = cfg.radius_at(epoch).floor() as u32;
            self.accumulate(data, &mut sums, &mut counts);

            let mut displacement = 0.0f64;
            let mut new_weights = Vec::with_capacity(n);
            for b in 0..n {
                next.iter_mut().for_each(|v| *v = 0.0);
                let mut total = 0usize;
                for j in 0..n {
                    if lattice[b * n + j] <= reach && counts[j] > 0 {
                        total += counts[j];
                        for (acc, s) in next.iter_mut().zip(&sums[j * width..(j + 1) * width]) {
                            *acc += s;
                        }
                    }
                }
                if total == 0 {
                    new_weights.push(None);
                    continue;
                }
                let inv = 1.0 / total as f64;
                let w: Vec<f64> = next.iter().map(|s| s * inv).collect();
                displacement = displacement.max(distance(&w, &self.neurons[b].weight));
                new_weights.push(Some(w));
            }
            for (neuron, w) in self.neurons.iter_mut().zip(new_weights) {
                if let Some(w) = w {
                    neuron.weight = w;
                }
            }
            summary.epochs = epoch + 1;
            summary.last_displacement = displacement;
            // Once the neighborhood can no longer shrink, a vanishing
            // displacement is a fixed point of every remaining epoch.
            if reach == final_reach && displacement < cfg.convergence_tol {
                summary.converged = true;
                break;
            }
        }

        self.accumulate(data, &mut sums, &mut counts);
        for (neuron, &c) in self.neurons.iter_mut().zip(&counts) {
            neuron.mapped_count = c;
        }
        Ok(summary)
    }

    /// Per-neuron sum and count of the inputs for which it is the best match.
    fn accumulate<V: AsRef<[f64]>>(&self, data: &[V], sums: &mut [f64], counts: &mut [usize]) {
        let width = self.n_features();
        sums.iter_mut().for_each(|v| *v = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for x in data {
            let x = x.as_ref();
            let (b, _) = self.bmu(x);
            counts[b] += 1;
            for (acc, v) in sums[b * width..(b + 1) * width].iter_mut().zip(x) {
                *acc += v;
            }
        }
    }

    /// Drops neurons with fewer than four mapped instances. If none would
    /// survive, keeps the single neuron with the largest count (lowest index on ties).
    pub fn prune(&mut self) {
        if self.neurons.iter().any(|n| n.mapped_count >= MIN_MAPPED) {
            self.neurons.retain(|n| n.mapped_count >= MIN_MAPPED);
        } else if let Some(keep) = self
            .neurons
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mapped_count.cmp(&b.1.mapped_count).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
        {
            let kept = self.neurons.swap_remove(keep);
            self.neurons = vec![kept];
        }
    }

    /// Moves neuron `b` towards `x` by `eta`: `m_b += eta * (x - m_b)`.
    pub fn incremental_update(&mut self, b: usize, x: &[f64], eta: f64) -> Result<()> {
        self.check_input(x)?;
        if b >= self.neurons.len() {
            return Err(Error::usage(format!(
                "neuron index {b} out of range for map with {} neurons",
                self.neurons.len()
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::usage(format!("learning rate {eta} outside [0, 1]")));
        }
        self.nudge(b, x, eta);
        Ok(())
    }

    #[inline]
    pub(crate) fn nudge(&mut self, b: usize, x: &[f64], eta: f64) {
        for (m, &v) in self.neurons[b].weight.iter_mut().zip(x) {
            *m += eta * (v - *m);
        }
    }

    /// Sum of distances from each input to its best matching neuron.
    pub fn quantization_error<V: AsRef<[f64]>>(&self, data: &[V]) -> f64 {
        data.iter()
            .map(|x| self.bmu(x.as_ref()).1.sqrt())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(weights: Vec<Vec<f64>>) -> SomGrid {
        let d = (weights.len() as f64).sqrt().ceil() as usize;
        SomGrid::from_weights(d, weights).unwrap()
    }

    fn with_counts(counts: &[usize]) -> SomGrid {
        let mut g = grid(counts.iter().map(|&c| vec![c as f64]).collect());
        for (n, &c) in g.neurons.iter_mut().zip(counts) {
            n.mapped_count = c;
        }
        g
    }

    #[test]
    fn hex_lattice_distances() {
        let a = HexPos::from_offset(0, 0);
        assert_eq!(a.lattice_distance(HexPos::from_offset(0, 1)), 1);
        assert_eq!(a.lattice_distance(HexPos::from_offset(1, 0)), 1);
        // Odd rows shift right, so (1,1) is two steps from (0,0).
        assert_eq!(a.lattice_distance(HexPos::from_offset(1, 1)), 2);
        assert_eq!(HexPos::from_offset(1, 0).lattice_distance(HexPos::from_offset(0, 1)), 1);
        assert_eq!(a.lattice_distance(HexPos::from_offset(2, 2)), 3);
    }

    #[test]
    fn init_shapes_and_determinism() {
        let data = vec![vec![0.0, 1.0], vec![0.5, 0.2], vec![1.0, 0.0]];
        assert_eq!(SomGrid::init(1, &data, 3).unwrap().len(), 1);
        let a = SomGrid::init(3, &data, 42).unwrap();
        let b = SomGrid::init(3, &data, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        for n in &a.neurons {
            for (f, &w) in n.weight.iter().enumerate() {
                let lo = data.iter().map(|x| x[f]).fold(f64::INFINITY, f64::min);
                let hi = data.iter().map(|x| x[f]).fold(f64::NEG_INFINITY, f64::max);
                assert!(w >= lo - 0.01 && w <= hi + 0.01);
            }
        }
        let positions: std::collections::HashSet<_> = a.neurons.iter().map(|n| n.grid_pos).collect();
        assert_eq!(positions.len(), 9);
        assert!(SomGrid::init(2, &Vec::<Vec<f64>>::new(), 0).is_err());
        assert!(SomGrid::init(0, &data, 0).is_err());
    }

    #[test]
    fn best_matching_examples() {
        let g = grid(vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(g.best_matching(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(g.best_matching(&[0.0, 2.0]).unwrap(), 1);
        let tie = grid(vec![vec![1.0], vec![-1.0]]);
        assert_eq!(tie.best_matching(&[0.0]).unwrap(), 0);
        assert!(g.best_matching(&[0.0]).is_err());
    }

    #[test]
    fn best_matching_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..10);
            let ws: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                .collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, w) in ws.iter().enumerate() {
                let mut s = 0.0;
                for f in 0..3 {
                    s += (x[f] - w[f]).powi(2);
                }
                if s.sqrt() < best_d {
                    best_d = s.sqrt();
                    best = i;
                }
            }
            assert_eq!(grid(ws).best_matching(&x).unwrap(), best);
        }
    }

    #[test]
    fn sort_neurons_matches_oracle_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = rng.random_range(1..10);
            let ws: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
                .collect();
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let mut table: Vec<(usize, f64)> = ws
                .iter()
                .enumerate()
                .map(|(i, w)| (i, ((x[0] - w[0]).powi(2) + (x[1] - w[1]).powi(2)).sqrt()))
                .collect();
            table.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let g = grid(ws);
            let sorted = g.sort_neurons(&x).unwrap();
            assert_eq!(
                sorted.iter().map(|p| p.0).collect::<Vec<_>>(),
                table.iter().map(|p| p.0).collect::<Vec<_>>()
            );
            assert_eq!(sorted[0].0, g.best_matching(&x).unwrap());
            assert!(sorted.windows(2).all(|w| w[0].1 <= w[1].1));
        }
        let one = grid(vec![vec![0.3]]);
        assert_eq!(one.sort_neurons(&[0.0]).unwrap().len(), 1);
    }

    #[test]
    fn single_neuron_converges_to_mean() {
        let data = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let mut g = SomGrid::init(1, &data, 1).unwrap();
        let s = g.batch_train(&data, &BatchTrainConfig::for_grid(1, 1)).unwrap();
        assert!(s.converged);
        assert!((g.weight(0)[0] - 2.0).abs() < 1e-12);
        assert!((g.weight(0)[1] - 1.0).abs() < 1e-12);
        assert_eq!(g.neurons[0].mapped_count, 3);
    }

    #[test]
    fn repeated_point_is_fixed_point() {
        let data = vec![vec![0.25, 0.75]; 20];
        let mut g = SomGrid::init(3, &data, 5).unwrap();
        g.batch_train(&data, &BatchTrainConfig::for_grid(3, 5)).unwrap();
        g.prune();
        assert!(!g.is_empty());
        for n in &g.neurons {
            assert_eq!(n.weight, vec![0.25, 0.75]);
        }
    }

    #[test]
    fn two_blobs_reduce_quantization_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut data = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { 0.1 } else { 0.9 };
            data.push(vec![
                c + rng.random_range(-0.05..0.05),
                c + rng.random_range(-0.05..0.05),
            ]);
        }
        let mut g = SomGrid::init(2, &data, 3).unwrap();
        let before = g.quantization_error(&data);
        g.batch_train(&data, &BatchTrainConfig::for_grid(2, 3)).unwrap();
        let after = g.quantization_error(&data);
        assert!(after < before, "{after} !< {before}");
        let near = |p: f64| g.neurons.iter().any(|n| (n.weight[0] - p).abs() < 0.1 && (n.weight[1] - p).abs() < 0.1);
        assert!(near(0.1) && near(0.9));
        assert_eq!(g.neurons.iter().map(|n| n.mapped_count).sum::<usize>(), 200);
    }

    #[test]
    fn prune_examples() {
        let mut g = with_counts(&[5, 3, 4, 0]);
        g.prune();
        assert_eq!(g.neurons.iter().map(|n| n.mapped_count).collect::<Vec<_>>(), vec![5, 4]);

        let mut g = with_counts(&[4, 9, 6]);
        let before = g.clone();
        g.prune();
        assert_eq!(g, before);

        let mut g = with_counts(&[1, 3, 0, 3]);
        g.prune();
        assert_eq!(g.len(), 1);
        assert_eq!(g.neurons[0].mapped_count, 3);
        assert_eq!(g.neurons[0].weight, vec![3.0]);
        assert_eq!(g.neurons[0].grid_pos, HexPos::from_offset(0, 1));
    }

    #[test]
    fn incremental_update_examples() {
        let mut g = grid(vec![vec![0.0, 0.0], vec![5.0, 5.0]]);
        g.incremental_update(0, &[1.0, 1.0], 0.05).unwrap();
        assert_eq!(g.weight(0), &[0.05, 0.05]);
        assert_eq!(g.weight(1), &[5.0, 5.0]);
        g.incremental_update(1, &[2.0, 3.0], 1.0).unwrap();
        assert_eq!(g.weight(1), &[2.0, 3.0]);
        g.incremental_update(1, &[2.0, 3.0], 0.05).unwrap();
        assert_eq!(g.weight(1), &[2.0, 3.0]);
        assert!(g.incremental_update(2, &[0.0, 0.0], 0.05).is_err());
        assert!(g.incremental_update(0, &[0.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn empty_neighborhood_freezes_weight() {
        // Neuron 1 starts far from the data and never wins; with radius 0 its
        // neighborhood union stays empty.
        let data = vec![vec![0.0], vec![0.1]];
        let mut g = grid(vec![vec![0.05], vec![100.0]]);
        let cfg = BatchTrainConfig {
            initial_radius: 0.0,
            ..BatchTrainConfig::for_grid(2, 0)
        };
        g.batch_train(&data, &cfg).unwrap();
        assert_eq!(g.weight(1), &[100.0]);
        assert_eq!(g.neurons[1].mapped_count, 0);
    }

    #[test]
    fn config_validation() {
        let mut c = BatchTrainConfig::for_grid(3, 0);
        assert_eq!(c.initial_radius, 2.0);
        c.final_radius = 3.0;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn update_contracts_distance(
            m in prop::collection::vec(-10.0f64..10.0, 3),
            x in prop::collection::vec(-10.0f64..10.0, 3),
            eta in 0.001f64..0.999,
        ) {
            let mut g = SomGrid::from_weights(1, vec![m.clone()]).unwrap();
            let before = distance(&x, &m);
            g.incremental_update(0, &x, eta).unwrap();
            let after = distance(&x, g.weight(0));
            prop_assert!((after - (1.0 - eta) * before).abs() < 1e-12);
        }

        #[test]
        fn bmu_invariant_under_farther_neurons(
            ws in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..8),
            x in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let g = SomGrid::from_weights(3, ws.clone()).unwrap();
            let b = g.best_matching(&x).unwrap();
            let mut extended = ws;
            extended.push(vec![x[0] + 10.0, x[1] - 10.0]);
            let g2 = SomGrid::from_weights(3, extended).unwrap();
            prop_assert_eq!(g2.best_matching(&x).unwrap(), b);
            let mut order: Vec<usize> = g2.sort_neurons(&x).unwrap().iter().map(|p| p.0).collect();
            order.sort_unstable();
            prop_assert_eq!(order, (0..g2.len()).collect::<Vec<_>>());
        }

        #[test]
        fn batch_train_stays_in_hull(
            data in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..40),
            d in 1usize..4,
            seed in 0u64..1000,
        ) {
            let mut g = SomGrid::init(d, &data, seed).unwrap();
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for p in data.iter().chain(g.neurons.iter().map(|n| &n.weight)) {
                for f in 0..2 {
                    lo[f] = lo[f].min(p[f]);
                    hi[f] = hi[f].max(p[f]);
                }
            }
            g.batch_train(&data, &BatchTrainConfig::for_grid(d, seed)).unwrap();
            for n in &g.neurons {
                for f in 0..2 {
                    prop_assert!(n.weight[f].is_finite());
                    prop_assert!(n.weight[f] >= lo[f] - 1e-9 && n.weight[f] <= hi[f] + 1e-9);
                }
            }
        }
    }
}
