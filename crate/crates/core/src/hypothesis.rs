//! Hypotheses, belief vectors, KL divergence and source-agent sets.
//!
//! In the UAV case study every hypothesis is an identity assignment: bit `j`
//! of the label says whether agent `j` is good (1) or bad (0). A
//! [`SourceSetIndex`] records, for each ordered hypothesis pair, which agents
//! visit a state where the two hypotheses induce different observation
//! likelihoods.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridPos, Identity};
use crate::observation::{reading_distribution, SensorModel};
use crate::simulator::ScenarioSpec;

pub type AgentId = usize;
pub type HypIdx = usize;

/// Tolerance on the sum of a normalized belief.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Threshold above which a KL divergence counts as an information gain.
pub const EPS_KL: f64 = 1e-12;

/// Maximum number of agents an [`AgentSet`] can hold.
pub const MAX_AGENTS: usize = 64;

/// Set of agent ids stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AgentSet(u64);

impl AgentSet {
    pub const fn empty() -> Self {
        AgentSet(0)
    }

    pub fn from_bits(bits: u64) -> Self {
        AgentSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(id: AgentId) -> Self {
        let mut s = Self::empty();
        s.insert(id);
        s
    }

    /// All agents `0..n`.
    pub fn all(n: usize) -> Self {
        assert!(n <= MAX_AGENTS, "at most {MAX_AGENTS} agents are supported");
        if n == MAX_AGENTS {
            AgentSet(u64::MAX)
        } else {
            AgentSet((1u64 << n) - 1)
        }
    }

    pub fn insert(&mut self, id: AgentId) {
        assert!(id < MAX_AGENTS, "agent id {id} exceeds {MAX_AGENTS}");
        self.0 |= 1u64 << id;
    }

    pub fn remove(&mut self, id: AgentId) {
        if id < MAX_AGENTS {
            self.0 &= !(1u64 << id);
        }
    }

    pub fn contains(self, id: AgentId) -> bool {
        id < MAX_AGENTS && self.0 & (1u64 << id) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 & other.0)
    }

    pub fn union(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 | other.0)
    }

    pub fn difference(self, other: AgentSet) -> AgentSet {
        AgentSet(self.0 & !other.0)
    }

    pub fn is_disjoint(self, other: AgentSet) -> bool {
        self.0 & other.0 == 0
    }

    /// Ids in ascending order.
    pub fn iter(self) -> impl Iterator<Item = AgentId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let id = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(id)
            }
        })
    }
}

impl FromIterator<AgentId> for AgentSet {
    fn from_iter<I: IntoIterator<Item = AgentId>>(iter: I) -> Self {
        let mut s = AgentSet::empty();
        for id in iter {
            s.insert(id);
        }
        s
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", ids.join(" "))
    }
}

impl Serialize for AgentSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for AgentSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<AgentId>::deserialize(d)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= MAX_AGENTS) {
            return Err(serde::de::Error::custom(format!(
                "agent id {bad} exceeds {MAX_AGENTS}"
            )));
        }
        Ok(ids.into_iter().collect())
    }
}

/// Good/bad assignment for every agent: bit `j` set means agent `j` is good.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IdentityLabel(pub u64);

impl IdentityLabel {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() > MAX_AGENTS {
            return Err(Error::InvalidHypotheses(format!(
                "label has {} entries, at most {MAX_AGENTS} supported",
                bits.len()
            )));
        }
        let mut v = 0u64;
        for (j, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => v |= 1 << j,
                other => {
                    return Err(Error::InvalidHypotheses(format!(
                        "label entry {j} must be 0 or 1, got {other}"
                    )))
                }
            }
        }
        Ok(IdentityLabel(v))
    }

    pub fn bit(self, agent: AgentId) -> u8 {
        ((self.0 >> agent) & 1) as u8
    }

    pub fn identity(self, agent: AgentId) -> Identity {
        if self.bit(agent) == 1 {
            Identity::Good
        } else {
            Identity::Bad
        }
    }

    pub fn to_bits(self, n_agents: usize) -> Vec<u8> {
        (0..n_agents).map(|j| self.bit(j)).collect()
    }

    /// Agents on which two labels disagree.
    pub fn diff(self, other: IdentityLabel) -> AgentSet {
        AgentSet::from_bits(self.0 ^ other.0)
    }

    pub fn display(self, n_agents: usize) -> String {
        let bits: Vec<String> = self.to_bits(n_agents).iter().map(|b| b.to_string()).collect();
        format!("({})", bits.join(","))
    }
}

/// Finite hypothesis set Θ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisSet {
    count: usize,
    n_agents: Option<usize>,
    labels: Option<Vec<IdentityLabel>>,
    full_product: bool,
}

impl HypothesisSet {
    /// Opaque hypotheses `0..count` with no identity structure.
    pub fn unlabeled(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidHypotheses(format!(
                "need at least 2 hypotheses, got {count}"
            )));
        }
        Ok(HypothesisSet {
            count,
            n_agents: None,
            labels: None,
            full_product: false,
        })
    }

    /// Every good/bad assignment of `n_agents` agents; hypothesis index equals the label bits.
    pub fn identity_product(n_agents: usize) -> Result<Self> {
        if n_agents == 0 || n_agents > 20 {
            return Err(Error::InvalidHypotheses(format!(
                "identity product supports 1..=20 agents, got {n_agents}"
            )));
        }
        let count = 1usize << n_agents;
        Ok(HypothesisSet {
            count,
            n_agents: Some(n_agents),
            labels: Some((0..count as u64).map(IdentityLabel).collect()),
            full_product: true,
        })
    }

    /// An explicit list of identity assignments.
    pub fn identities(n_agents: usize, labels: Vec<IdentityLabel>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidHypotheses(format!(
                "need at least 2 hypotheses, got {}",
                labels.len()
            )));
        }
        if n_agents == 0 || n_agents > MAX_AGENTS {
            return Err(Error::InvalidHypotheses(format!(
                "agent count {n_agents} out of range"
            )));
        }
        let limit = if n_agents == MAX_AGENTS {
            u64::MAX
        } else {
            (1u64 << n_agents) - 1
        };
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if l.0 & !limit != 0 {
                return Err(Error::InvalidHypotheses(format!(
                    "label {:#x} references agents beyond {n_agents}",
                    l.0
                )));
            }
            if !seen.insert(*l) {
                return Err(Error::InvalidHypotheses(format!(
                    "duplicate label {}",
                    l.display(n_agents)
                )));
            }
        }
        let full_product = n_agents <= 20 && labels.len() == 1usize << n_agents;
        Ok(HypothesisSet {
            count: labels.len(),
            n_agents: Some(n_agents),
            labels: Some(labels),
            full_product,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> Option<&[IdentityLabel]> {
        self.labels.as_deref()
    }

    pub fn label(&self, h: HypIdx) -> Option<IdentityLabel> {
        self.labels.as_ref().and_then(|l| l.get(h).copied())
    }

    pub fn n_agents(&self) -> Option<usize> {
        self.n_agents
    }

    /// True when the set contains every assignment, so flipping any single bit stays inside Θ.
    pub fn is_full_product(&self) -> bool {
        self.full_product
    }

    pub fn index_of(&self, label: IdentityLabel) -> Option<HypIdx> {
        if self.full_product {
            return Some(label.0 as usize).filter(|&k| k < self.count);
        }
        self.labels.as_ref()?.iter().position(|&l| l == label)
    }
}

/// A normalized probability vector over Θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidBelief(format!(
                "belief needs at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some((k, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidBelief(format!("entry {k} = {v} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidBelief(format!("entries sum to {sum}, expected 1")));
        }
        Ok(Belief(probs))
    }

    pub fn uniform(m: usize) -> Self {
        Belief(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, k: HypIdx) -> Self {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Belief(v)
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Belief(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, h: HypIdx) -> f64 {
        self.0[h]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> HypIdx {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for Belief {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Pre-normalization belief: non-negative, arbitrary sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RawBelief(Vec<f64>);

impl RawBelief {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidBelief(format!("raw entry {k} = {v} is negative or not finite")));
        }
        Ok(RawBelief(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Divide every entry by the total mass.
pub fn normalize(raw: &RawBelief) -> Result<Belief> {
    let sum: f64 = raw.0.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(Belief(raw.0.iter().map(|v| v / sum).collect()))
}

/// `D(p || q) = Σ p(x) ln(p(x)/q(x))`, with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: impl AsRef<[f64]>, q: impl AsRef<[f64]>) -> Result<f64> {
    let (p, q) = (p.as_ref(), q.as_ref());
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut d = 0.0;
    for (x, (&px, &qx)) in p.iter().zip(q).enumerate() {
        if px <= 0.0 {
            continue;
        }
        if qx <= 0.0 {
            return Err(Error::InfiniteDivergence { index: x });
        }
        d += px * (px / qx).ln();
    }
    // Rounding can leave a tiny negative sum for (nearly) equal inputs.
    Ok(d.max(0.0))
}

/// Whether `D > eps`, with infinite divergence counting as positive.
pub(crate) fn divergence_exceeds(p: &[f64], q: &[f64], eps: f64) -> Result<bool> {
    match kl_divergence(p, q) {
        Ok(d) => Ok(d > eps),
        Err(Error::InfiniteDivergence { .. }) => Ok(true),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum PairSets {
    /// Row-major `m × m` table.
    Dense(Vec<AgentSet>),
    /// `S(θ,θ') = ∪ { C_j : θ(j) ≠ θ'(j) }` where `C_j` is the set of agents able to tell agent `j`'s identity.
    Identity {
        labels: Vec<IdentityLabel>,
        distinguishers: Vec<AgentSet>,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Constraints {
    /// The same family applies to every θ.
    Shared(Vec<AgentSet>),
    PerHypothesis(Vec<Vec<AgentSet>>),
}

/// Source agent sets `S(θ,θ')` for every ordered pair of distinct hypotheses.
///
/// Besides the per-pair lookup it keeps, for each θ, a family of agent sets
/// such that "`|X ∩ S(θ,θ')| ≥ k` for all θ' ≠ θ" holds exactly when
/// "`|X ∩ C| ≥ k` for every C in the family". For a full identity product the
/// family is `{C_j}` and is shared by all θ, which keeps the check linear in
/// the number of agents rather than in |Θ|.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSetIndex {
    m: usize,
    pairs: PairSets,
    constraints: Constraints,
}

impl SourceSetIndex {
    /// From an explicit `m × m` table (row θ, column θ'); diagonal entries are ignored.
    pub fn from_table(m: usize, table: Vec<AgentSet>) -> Result<Self> {
        if m < 2 || table.len() != m * m {
            return Err(Error::DimensionMismatch {
                left: table.len(),
                right: m * m,
            });
        }
        let per: Vec<Vec<AgentSet>> = (0..m)
            .map(|a| (0..m).filter(|&b| b != a).map(|b| table[a * m + b]).collect())
            .collect();
        Ok(SourceSetIndex {
            m,
            pairs: PairSets::Dense(table),
            constraints: Constraints::PerHypothesis(per),
        })
    }

    /// From per-target distinguisher sets `C_j` over identity-labelled hypotheses.
    pub fn from_distinguishers(hyps: &HypothesisSet, distinguishers: Vec<AgentSet>) -> Result<Self> {
        let labels = hyps
            .labels()
            .ok_or_else(|| Error::InvalidHypotheses("identity labels required".into()))?
            .to_vec();
        let n = hyps.n_agents().unwrap_or(0);
        if distinguishers.len() != n {
            return Err(Error::DimensionMismatch {
                left: distinguishers.len(),
                right: n,
            });
        }
        let constraints = if hyps.is_full_product() {
            Constraints::Shared(distinguishers.clone())
        } else {
            Constraints::PerHypothesis(
                labels
                    .iter()
                    .map(|&a| {
                        labels
                            .iter()
                            .filter(|&&b| b != a)
                            .map(|&b| union_of(&distinguishers, a.diff(b)))
                            .collect()
                    })
                    .collect(),
            )
        };
        Ok(SourceSetIndex {
            m: labels.len(),
            pairs: PairSets::Identity {
                labels,
                distinguishers,
            },
            constraints,
        })
    }

    pub fn hypothesis_count(&self) -> usize {
        self.m
    }

    /// `S(θ,θ')`; empty when `θ = θ'`.
    pub fn sources(&self, theta: HypIdx, other: HypIdx) -> AgentSet {
        if theta == other {
            return AgentSet::empty();
        }
        match &self.pairs {
            PairSets::Dense(table) => table[theta * self.m + other],
            PairSets::Identity {
                labels,
                distinguishers,
            } => union_of(distinguishers, labels[theta].diff(labels[other])),
        }
    }

    /// Per-target distinguisher sets, when the index was built from identities.
    pub fn distinguishers(&self) -> Option<&[AgentSet]> {
        match &self.pairs {
            PairSets::Identity { distinguishers, .. } => Some(distinguishers),
            PairSets::Dense(_) => None,
        }
    }

    /// Constraint family equivalent to quantifying over all θ' ≠ θ.
    pub fn constraints(&self, theta: HypIdx) -> &[AgentSet] {
        match &self.constraints {
            Constraints::Shared(c) => c,
            Constraints::PerHypothesis(per) => &per[theta],
        }
    }

    /// `|S(θ,θ') ∩ set| ≥ threshold` for every θ' ≠ θ.
    pub fn meets(&self, theta: HypIdx, set: AgentSet, threshold: usize) -> bool {
        self.constraints(theta)
            .iter()
            .all(|c| c.intersection(set).len() >= threshold)
    }
}

fn union_of(sets: &[AgentSet], members: AgentSet) -> AgentSet {
    members
        .iter()
        .filter_map(|j| sets.get(j).copied())
        .fold(AgentSet::empty(), AgentSet::union)
}

/// Target positions under both identity bits at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPositions {
    /// Position of each agent under θ(j) = 0 (its bad path).
    pub bad: Vec<GridPos>,
    /// Position of each agent under θ(j) = 1 (its good path).
    pub good: Vec<GridPos>,
}

impl TargetPositions {
    pub fn position(&self, target: AgentId, bit: u8) -> GridPos {
        if bit == 1 {
            self.good[target]
        } else {
            self.bad[target]
        }
    }
}

/// Whether observer `agent` at `q` gains information separating `theta` from `other`.
///
/// The joint likelihood is a product over targets, so the joint divergence is
/// the sum of the per-target divergences over targets the two labels disagree on.
pub fn is_source_state(
    agent: AgentId,
    theta: IdentityLabel,
    other: IdentityLabel,
    q: GridPos,
    targets: &TargetPositions,
    sensor: &SensorModel,
    eps: f64,
) -> Result<bool> {
    if theta == other {
        return Err(Error::Contract("source state needs two distinct hypotheses".into()));
    }
    let mut total = 0.0;
    for j in theta.diff(other).iter() {
        if j == agent || j >= targets.good.len() {
            continue;
        }
        let p = reading_distribution(q, targets.position(j, theta.bit(j)), sensor)?;
        let r = reading_distribution(q, targets.position(j, other.bit(j)), sensor)?;
        match kl_divergence(&p, &r) {
            Ok(d) => total += d,
            Err(Error::InfiniteDivergence { .. }) => return Ok(true),
            Err(e) => return Err(e),
        }
    }
    Ok(total > eps)
}

/// Source sets for a scenario, scanning one joint period of the declared paths.
///
/// An observer follows its good cycle (the path it was assigned); target `j`
/// sits on its bad cycle under θ(j) = 0 and on its good cycle under θ(j) = 1.
pub fn compute_source_sets(spec: &ScenarioSpec) -> Result<SourceSetIndex> {
    let n = spec.agents.len();
    let period = spec.joint_period()?;
    let mut distinguishers = vec![AgentSet::empty(); n];
    for t in 0..period {
        let targets = spec.target_positions(t);
        for observer in 0..n {
            let q = spec.agents[observer].path.position_at(t, Identity::Good);
            let sensor = spec.sensor_model(observer)?;
            for j in (0..n).filter(|&j| j != observer) {
                if distinguishers[j].contains(observer) {
                    continue;
                }
                let p = reading_distribution(q, targets.bad[j], &sensor)?;
                let r = reading_distribution(q, targets.good[j], &sensor)?;
                if divergence_exceeds(&p, &r, EPS_KL)? {
                    distinguishers[j].insert(observer);
                }
            }
        }
    }
    SourceSetIndex::from_distinguishers(&spec.hypotheses, distinguishers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use proptest::strategy::ValueTree;

    #[test]
    fn kl_of_identical_is_zero() {
        assert_eq!(kl_divergence([0.5, 0.5], [0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_point_mass_against_uniform() {
        let d = kl_divergence([1.0, 0.0], [0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn kl_uniform_against_skewed() {
        let d = kl_divergence([0.5, 0.5], [0.25, 0.75]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(d, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.143841, epsilon = 1e-6);
    }

    #[test]
    fn kl_errors() {
        assert!(matches!(
            kl_divergence([0.5, 0.5], [1.0, 0.0]),
            Err(Error::InfiniteDivergence { index: 1 })
        ));
        assert!(matches!(
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let b = normalize(&RawBelief::new(vec![0.2, 0.2]).unwrap()).unwrap();
        assert_eq!(b.as_slice(), &[0.5, 0.5]);
        let b = normalize(&RawBelief::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert_abs_diff_eq!(b.get(0), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(b.get(1), 0.7, epsilon = 1e-15);
        let raw = vec![0.1, 0.3, 0.6];
        let independent_sum = raw.iter().rev().fold(0.0, |a, b| a + b);
        assert_abs_diff_eq!(independent_sum, 1.0, epsilon = 1e-15);
        let b = normalize(&RawBelief::new(raw.clone()).unwrap()).unwrap();
        for (x, y) in b.as_slice().iter().zip(&raw) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        assert!(matches!(
            normalize(&RawBelief::new(vec![0.0, 0.0]).unwrap()),
            Err(Error::ZeroMass)
        ));
        assert!(RawBelief::new(vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.5]).is_ok());
        assert!(Belief::new(vec![0.6, 0.5]).is_err());
        assert!(Belief::new(vec![1.2, -0.2]).is_err());
        assert!(Belief::new(vec![1.0]).is_err());
    }

    #[test]
    fn hypothesis_set_invariants() {
        assert!(HypothesisSet::unlabeled(1).is_err());
        let h = HypothesisSet::identity_product(5).unwrap();
        assert_eq!(h.count(), 32);
        let star = IdentityLabel::from_bits(&[1, 1, 1, 0, 1]).unwrap();
        assert_eq!(h.index_of(star), Some(0b10111));
        assert_eq!(star.display(5), "(1,1,1,0,1)");
        let dup = vec![IdentityLabel(1), IdentityLabel(1)];
        assert!(HypothesisSet::identities(2, dup).is_err());
        let explicit =
            HypothesisSet::identities(2, vec![IdentityLabel(0b11), IdentityLabel(0b01)]).unwrap();
        assert!(!explicit.is_full_product());
        assert_eq!(explicit.index_of(IdentityLabel(0b01)), Some(1));
    }

    #[test]
    fn agent_set_ops() {
        let a: AgentSet = [0, 2, 5].into_iter().collect();
        let b: AgentSet = [2, 3].into_iter().collect();
        assert_eq!(a.intersection(b).iter().collect::<Vec<_>>(), vec![2]);
        assert_eq!(a.union(b).len(), 4);
        assert_eq!(a.to_string(), "{0 2 5}");
        assert_eq!(AgentSet::all(3).len(), 3);
    }

    #[test]
    fn identity_sources_match_union_definition() {
        let hyps = HypothesisSet::identity_product(3).unwrap();
        let c = vec![
            AgentSet::from_iter([1]),
            AgentSet::from_iter([0, 2]),
            AgentSet::empty(),
        ];
        let idx = SourceSetIndex::from_distinguishers(&hyps, c.clone()).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let expected = if a == b {
                    AgentSet::empty()
                } else {
                    union_of(&c, AgentSet::from_bits((a ^ b) as u64))
                };
                assert_eq!(idx.sources(a, b), expected);
            }
        }
        // Full product: quantifying over θ' reduces to the per-target family.
        for theta in 0..8 {
            for set_bits in 0..8u64 {
                let set = AgentSet::from_bits(set_bits);
                for k in 0..3 {
                    let brute = (0..8)
                        .filter(|&o| o != theta)
                        .all(|o| idx.sources(theta, o).intersection(set).len() >= k);
                    assert_eq!(idx.meets(theta, set, k), brute);
                }
            }
        }
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_on_equal(p in simplex(4), q in simplex(4)) {
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
            let differ = p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-6);
            if differ {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn normalize_idempotent_and_ratio_preserving(raw in prop::collection::vec(0.001f64..10.0, 2..8)) {
            let once = normalize(&RawBelief::new(raw.clone()).unwrap()).unwrap();
            let twice = normalize(&RawBelief::new(once.as_slice().to_vec()).unwrap()).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let sum: f64 = once.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            let r_in = raw[0] / raw[1];
            let r_out = once.get(0) / once.get(1);
            prop_assert!(((r_in - r_out) / r_in).abs() <= 1e-9);
            prop_assert_eq!(once.argmax(), argmax(&raw));
        }
    }

    #[test]
    fn kl_is_asymmetric_somewhere() {
        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let mut witnessed = false;
        for _ in 0..64 {
            let p = simplex(3).new_tree(&mut runner).unwrap().current();
            let q = simplex(3).new_tree(&mut runner).unwrap().current();
            let forward = kl_divergence(&p, &q).unwrap();
            let backward = kl_divergence(&q, &p).unwrap();
            if (forward - backward).abs() > 1e-9 {
                witnessed = true;
                break;
            }
        }
        assert!(witnessed);
    }
}
