//! Truncated-Gaussian position sensor and the likelihoods it induces.
//!
//! An observer at `q_i` reads every other agent `j`. When `q_j` is inside the
//! observer's square window the reading is a window cell drawn with weight
//! `exp(-‖s - q_j‖² / 2σ²)`; otherwise the reading is empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{in_sensing_window, Grid, GridPos, RangeSpec};
use crate::hypothesis::{AgentId, HypothesisSet, IdentityLabel, TargetPositions};
use crate::rng::{uniform, StreamRng};

/// Sensor parameters for one observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorModel {
    sigma: f64,
    range: RangeSpec,
    grid: Grid,
}

impl SensorModel {
    pub fn new(sigma: f64, range: RangeSpec, grid: Grid) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSigma(sigma));
        }
        Ok(SensorModel { sigma, range, grid })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn range(&self) -> RangeSpec {
        self.range
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `𝒬_i(q_i)`, row-major.
    pub fn window(&self, q_i: GridPos) -> Vec<GridPos> {
        self.range.window(q_i, &self.grid)
    }

    pub fn sees(&self, q_i: GridPos, q: GridPos) -> bool {
        self.grid.contains(q) && in_sensing_window(q_i, q, self.range)
    }
}

/// One sensor value `s_i^j`; `None` is the empty reading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorReading {
    pub target: AgentId,
    pub value: Option<GridPos>,
}

/// All readings of one observer at one step, ascending by target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub observer: AgentId,
    pub readings: Vec<SensorReading>,
}

impl ObservationVector {
    /// Checks one reading per other agent, in ascending order.
    pub fn new(observer: AgentId, n_agents: usize, readings: Vec<SensorReading>) -> Result<Self> {
        let expected: Vec<AgentId> = (0..n_agents).filter(|&j| j != observer).collect();
        let got: Vec<AgentId> = readings.iter().map(|r| r.target).collect();
        if expected != got {
            return Err(Error::Contract(format!(
                "observer {observer} needs readings for {expected:?}, got {got:?}"
            )));
        }
        Ok(ObservationVector { observer, readings })
    }
}

/// Truncated-Gaussian weights over the window of `q_i`, aligned with [`SensorModel::window`].
///
/// Exponents are shifted by the smallest squared distance before
/// exponentiating; the ratio is unchanged and small σ cannot underflow the
/// denominator to zero.
pub fn sensor_distribution(q_i: GridPos, q_j: GridPos, model: &SensorModel) -> Vec<f64> {
    let window = model.window(q_i);
    let two_var = 2.0 * model.sigma * model.sigma;
    let d2: Vec<f64> = window.iter().map(|c| c.squared_euclidean(q_j)).collect();
    let d2_min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = d2.iter().map(|d| (-(d - d2_min) / two_var).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// `P_i(s | q_i, q_j)`.
pub fn sensor_prob(s: GridPos, q_i: GridPos, q_j: GridPos, model: &SensorModel) -> Result<f64> {
    let window = model.window(q_i);
    let k = window
        .iter()
        .position(|&c| c == s)
        .ok_or(Error::OutsideWindow { x: s.x, y: s.y })?;
    Ok(sensor_distribution(q_i, q_j, model)[k])
}

/// Full distribution of `s_i^j`: window cells (row-major) followed by the empty reading.
pub fn reading_distribution(q_i: GridPos, q_j: GridPos, model: &SensorModel) -> Result<Vec<f64>> {
    let mut dist = if model.sees(q_i, q_j) {
        sensor_distribution(q_i, q_j, model)
    } else {
        vec![0.0; model.window(q_i).len()]
    };
    dist.push(if model.sees(q_i, q_j) { 0.0 } else { 1.0 });
    Ok(dist)
}

/// Draw `s_i^j` given the true target position.
///
/// Inverse CDF over the window in row-major order, consuming one uniform
/// variate; an out-of-window target yields the empty reading without drawing.
pub fn sample_reading(
    target: AgentId,
    q_i: GridPos,
    q_j: GridPos,
    model: &SensorModel,
    rng: &mut StreamRng,
) -> SensorReading {
    if !model.sees(q_i, q_j) {
        return SensorReading { target, value: None };
    }
    let window = model.window(q_i);
    let probs = sensor_distribution(q_i, q_j, model);
    let u = uniform(rng);
    let mut acc = 0.0;
    let mut chosen = None;
    for (cell, p) in window.iter().zip(&probs) {
        if *p > 0.0 {
            chosen = Some(*cell);
        }
        acc += p;
        if u < acc && *p > 0.0 {
            break;
        }
    }
    SensorReading {
        target,
        value: chosen,
    }
}

/// `l_i^j(s | θ(j), q_i)` for a hypothesized target position.
///
/// A non-empty reading has probability zero when the hypothesized position
/// is outside the window, since such a target always yields the empty reading.
pub fn pair_likelihood(value: Option<GridPos>, hypothesized: GridPos, q_i: GridPos, model: &SensorModel) -> Result<f64> {
    let visible = model.sees(q_i, hypothesized);
    match value {
        Some(s) if visible => sensor_prob(s, q_i, hypothesized, model),
        Some(s) => {
            if model.sees(q_i, s) {
                Ok(0.0)
            } else {
                Err(Error::OutsideWindow { x: s.x, y: s.y })
            }
        }
        None if visible => Ok(0.0),
        None => Ok(1.0),
    }
}

/// `l_i(s_i | θ, q_i) = Π_{j≠i} l_i^j(s_i^j | θ(j), q_i)`, multiplied in ascending target order.
pub fn joint_likelihood(
    obs: &ObservationVector,
    theta: IdentityLabel,
    q_i: GridPos,
    targets: &TargetPositions,
    model: &SensorModel,
) -> Result<f64> {
    let mut l = 1.0;
    for r in &obs.readings {
        l *= pair_likelihood(r.value, targets.position(r.target, theta.bit(r.target)), q_i, model)?;
    }
    Ok(l)
}

/// Joint likelihood of `obs` under every hypothesis, in index order.
///
/// Each target's two per-bit likelihoods are evaluated once and reused; the
/// product order matches [`joint_likelihood`] so the values are bit-identical.
pub fn likelihood_vector(
    obs: &ObservationVector,
    hyps: &HypothesisSet,
    q_i: GridPos,
    targets: &TargetPositions,
    model: &SensorModel,
) -> Result<Vec<f64>> {
    let labels = hyps
        .labels()
        .ok_or_else(|| Error::InvalidHypotheses("likelihoods need identity labels".into()))?;
    let per_target: Vec<(AgentId, [f64; 2])> = obs
        .readings
        .iter()
        .map(|r| {
            Ok((
                r.target,
                [
                    pair_likelihood(r.value, targets.position(r.target, 0), q_i, model)?,
                    pair_likelihood(r.value, targets.position(r.target, 1), q_i, model)?,
                ],
            ))
        })
        .collect::<Result<_>>()?;
    Ok(labels
        .iter()
        .map(|label| {
            let mut l = 1.0;
            for (j, pair) in &per_target {
                l *= pair[label.bit(*j) as usize];
            }
            l
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn model(sigma: f64, radius: u32) -> SensorModel {
        SensorModel::new(sigma, RangeSpec::new(radius), Grid::new(10, 10).unwrap()).unwrap()
    }

    /// Hand evaluation over the 9 cells of a radius-1 window centred on the target:
    /// 1 centre at d²=0, 4 edges at d²=1, 4 corners at d²=2.
    fn radius_one_centre_oracle() -> f64 {
        1.0 / (1.0 + 4.0 * (-0.5f64).exp() + 4.0 * (-1.0f64).exp())
    }

    #[test]
    fn centre_probability_matches_hand_evaluation() {
        let m = model(1.0, 1);
        let c = GridPos::new(5, 5);
        let p = sensor_prob(c, c, c, &m).unwrap();
        assert_abs_diff_eq!(p, radius_one_centre_oracle(), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.2042, epsilon = 1e-4);
    }

    #[test]
    fn degenerate_and_single_cell_windows() {
        let m = model(1e-3, 3);
        let q_i = GridPos::new(5, 5);
        let q_j = GridPos::new(6, 4);
        assert_abs_diff_eq!(sensor_prob(q_j, q_i, q_j, &m).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(sensor_prob(GridPos::new(6, 5), q_i, q_j, &m).unwrap(), 0.0);

        let single = model(0.7, 0);
        assert_eq!(sensor_prob(q_i, q_i, GridPos::new(9, 9), &single).unwrap(), 1.0);
    }

    #[test]
    fn sensor_prob_errors() {
        assert!(matches!(SensorModel::new(0.0, RangeSpec::new(1), Grid::new(3, 3).unwrap()), Err(Error::InvalidSigma(_))));
        assert!(matches!(SensorModel::new(-1.0, RangeSpec::new(1), Grid::new(3, 3).unwrap()), Err(Error::InvalidSigma(_))));
        let m = model(1.0, 1);
        assert!(matches!(
            sensor_prob(GridPos::new(8, 8), GridPos::new(5, 5), GridPos::new(5, 5), &m),
            Err(Error::OutsideWindow { .. })
        ));
    }

    #[test]
    fn pair_likelihood_cases() {
        let m = model(1.0, 1);
        let q_i = GridPos::new(5, 5);
        let outside = GridPos::new(9, 9);
        assert_eq!(pair_likelihood(None, outside, q_i, &m).unwrap(), 1.0);
        assert_eq!(pair_likelihood(None, q_i, q_i, &m).unwrap(), 0.0);
        assert_abs_diff_eq!(
            pair_likelihood(Some(q_i), q_i, q_i, &m).unwrap(),
            radius_one_centre_oracle(),
            epsilon = 1e-15
        );
        assert_eq!(pair_likelihood(Some(q_i), outside, q_i, &m).unwrap(), 0.0);
    }

    fn two_target_positions() -> TargetPositions {
        TargetPositions {
            bad: vec![GridPos::new(0, 0), GridPos::new(9, 0), GridPos::new(9, 9)],
            good: vec![GridPos::new(5, 5), GridPos::new(2, 2), GridPos::new(4, 6)],
        }
    }

    #[test]
    fn joint_likelihood_examples() {
        let m = model(1.0, 1);
        let targets = two_target_positions();
        let q_i = GridPos::new(3, 5);
        let all_good = IdentityLabel(0b111);

        // Under an all-bad label for the targets both sit outside the window.
        let empty = ObservationVector::new(0, 3, vec![
            SensorReading { target: 1, value: None },
            SensorReading { target: 2, value: None },
        ])
        .unwrap();
        assert_eq!(joint_likelihood(&empty, IdentityLabel(0b001), GridPos::new(5, 5), &targets, &m).unwrap(), 1.0);

        // Target 2 would be visible at (4,6) under θ(2)=1, so ∅ annihilates the product.
        let q_obs = GridPos::new(4, 5);
        assert_eq!(joint_likelihood(&empty, all_good, q_obs, &targets, &m).unwrap(), 0.0);

        // Two visible targets read at their hypothesized cells, each centred in its own window.
        let targets = TargetPositions {
            bad: vec![GridPos::new(0, 0); 3],
            good: vec![GridPos::new(0, 0), q_i, q_i],
        };
        let obs = ObservationVector::new(0, 3, vec![
            SensorReading { target: 1, value: Some(q_i) },
            SensorReading { target: 2, value: Some(q_i) },
        ])
        .unwrap();
        let l = joint_likelihood(&obs, all_good, q_i, &targets, &m).unwrap();
        assert_abs_diff_eq!(l, radius_one_centre_oracle().powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.0417, epsilon = 1e-4);
    }

    #[test]
    fn likelihood_vector_matches_joint_bitwise() {
        let m = model(1.3, 3);
        let hyps = HypothesisSet::identity_product(3).unwrap();
        let targets = two_target_positions();
        let q_i = GridPos::new(3, 3);
        let obs = ObservationVector::new(0, 3, vec![
            SensorReading { target: 1, value: Some(GridPos::new(2, 3)) },
            SensorReading { target: 2, value: None },
        ])
        .unwrap();
        let v = likelihood_vector(&obs, &hyps, q_i, &targets, &m).unwrap();
        for (k, label) in hyps.labels().unwrap().iter().enumerate() {
            assert_eq!(v[k].to_bits(), joint_likelihood(&obs, *label, q_i, &targets, &m).unwrap().to_bits());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_window() {
        let m = model(1.0, 3);
        let key = StreamKey { seed: 7, domain: Domain::Observation, step: 3, a: 1, b: 2 };
        let q_i = GridPos::new(5, 5);
        let a = sample_reading(2, q_i, GridPos::new(6, 6), &m, &mut key.rng());
        let b = sample_reading(2, q_i, GridPos::new(6, 6), &m, &mut key.rng());
        assert_eq!(a, b);
        assert!(m.sees(q_i, a.value.unwrap()));
        let none = sample_reading(2, q_i, GridPos::new(0, 0), &m, &mut key.rng());
        assert_eq!(none.value, None);
    }

    #[test]
    fn small_sigma_reads_the_true_cell() {
        let m = model(1e-3, 3);
        let q_i = GridPos::new(5, 5);
        let q_j = GridPos::new(4, 7);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|&k| {
                let key = StreamKey { seed: 1, domain: Domain::Observation, step: k, a: 0, b: 1 };
                sample_reading(1, q_i, q_j, &m, &mut key.rng()).value == Some(q_j)
            })
            .count();
        assert!(hits as f64 / draws as f64 > 0.999);
    }

    #[test]
    fn empirical_frequencies_match_sensor_prob() {
        let m = model(1.5, 2);
        let q_i = GridPos::new(5, 5);
        let q_j = GridPos::new(6, 4);
        let window = m.window(q_i);
        let draws = 100_000usize;
        let mut counts = vec![0usize; window.len()];
        for k in 0..draws {
            let key = StreamKey { seed: 99, domain: Domain::Observation, step: k, a: 0, b: 1 };
            let s = sample_reading(1, q_i, q_j, &m, &mut key.rng()).value.unwrap();
            counts[window.iter().position(|&c| c == s).unwrap()] += 1;
        }
        for (cell, count) in window.iter().zip(&counts) {
            let p = sensor_prob(*cell, q_i, q_j, &m).unwrap();
            let freq = *count as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se + 1e-12, "cell {cell}: freq {freq} vs p {p}");
        }
    }

    proptest! {
        #[test]
        fn window_distribution_sums_to_one(
            qx in 0i32..10, qy in 0i32..10, tx in 0i32..10, ty in 0i32..10,
            sigma in 0.05f64..5.0, radius in 0u32..4,
        ) {
            let m = model(sigma, radius);
            let q_i = GridPos::new(qx, qy);
            let q_j = GridPos::new(tx, ty);
            let total: f64 = sensor_distribution(q_i, q_j, &m).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn probability_decays_with_distance(
            tx in 2i32..8, ty in 2i32..8, sigma in 0.1f64..4.0,
        ) {
            let m = model(sigma, 3);
            let q_i = GridPos::new(5, 5);
            let q_j = GridPos::new(tx, ty);
            let window = m.window(q_i);
            let probs = sensor_distribution(q_i, q_j, &m);
            for (a, pa) in window.iter().zip(&probs) {
                for (b, pb) in window.iter().zip(&probs) {
                    if a.squared_euclidean(q_j) < b.squared_euclidean(q_j) {
                        prop_assert!(pa >= pb);
                    }
                }
            }
        }

        #[test]
        fn identical_positions_carry_no_information(
            px in 0i32..10, py in 0i32..10, sx in 3i32..8, sy in 3i32..8, empty in any::<bool>(),
        ) {
            let m = model(1.0, 3);
            let q_i = GridPos::new(5, 5);
            let p = GridPos::new(px, py);
            let targets = TargetPositions { bad: vec![q_i, p], good: vec![q_i, p] };
            let value = if empty { None } else { Some(GridPos::new(sx, sy)) };
            let obs = ObservationVector::new(0, 2, vec![SensorReading { target: 1, value }]).unwrap();
            let as_bad = joint_likelihood(&obs, IdentityLabel(0b01), q_i, &targets, &m).unwrap();
            let as_good = joint_likelihood(&obs, IdentityLabel(0b11), q_i, &targets, &m).unwrap();
            prop_assert_eq!(as_bad.to_bits(), as_good.to_bits());
        }
    }
}
