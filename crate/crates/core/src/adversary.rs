//! Byzantine broadcast policies.
//!
//! A bad agent moves along its own path like everyone else, but the belief it
//! shares comes from its policy rather than from an update rule. Every policy
//! emits a valid probability vector.

use crate::error::{Error, Result};
use crate::hypothesis::{AgentId, AgentSet, Belief, HypIdx};
use crate::rng::{exponential, Domain, StreamKey};

#[derive(Clone, Debug, PartialEq)]
pub enum AdversaryPolicy {
    /// A fresh uniform draw from the simplex every step.
    RandomBelief,
    /// All mass on one false hypothesis.
    FixedFalse { hypothesis: HypIdx },
    /// Every group member shares the same one-hot vector.
    Coordinated { group: AgentSet, hypothesis: HypIdx },
    /// Scripted beliefs by step; the last entry repeats once exhausted.
    Custom { script: Vec<Belief> },
}

impl AdversaryPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            AdversaryPolicy::RandomBelief => "random-belief",
            AdversaryPolicy::FixedFalse { .. } => "fixed-false",
            AdversaryPolicy::Coordinated { .. } => "coordinated",
            AdversaryPolicy::Custom { .. } => "custom",
        }
    }
}

/// Dirichlet(1, …, 1) by normalizing independent unit exponentials.
pub fn random_simplex_point(m: usize, seed: u64, step: usize, agent: AgentId) -> Belief {
    let mut rng = StreamKey {
        seed,
        domain: Domain::Adversary,
        step,
        a: agent,
        b: 0,
    }
    .rng();
    let mut draws: Vec<f64> = (0..m).map(|_| exponential(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        return Belief::uniform(m);
    }
    draws.iter_mut().for_each(|x| *x /= total);
    Belief::from_vec_unchecked(draws)
}

/// The belief bad agent `agent` shares at step `t` over `m` hypotheses.
pub fn adversarial_broadcast(
    policy: &AdversaryPolicy,
    agent: AgentId,
    t: usize,
    m: usize,
    seed: u64,
) -> Result<Belief> {
    match policy {
        AdversaryPolicy::RandomBelief => Ok(random_simplex_point(m, seed, t, agent)),
        AdversaryPolicy::FixedFalse { hypothesis } => one_hot(m, *hypothesis),
        AdversaryPolicy::Coordinated { group, hypothesis } => {
            if !group.contains(agent) {
                return Err(Error::Contract(format!(
                    "agent {agent} is not in its coordination group {group}"
                )));
            }
            one_hot(m, *hypothesis)
        }
        AdversaryPolicy::Custom { script } => {
            let b = script
                .get(t)
                .or(script.last())
                .ok_or_else(|| Error::Contract(format!("empty script for agent {agent}")))?;
            if b.len() != m {
                return Err(Error::DimensionMismatch {
                    left: b.len(),
                    right: m,
                });
            }
            Ok(b.clone())
        }
    }
}

fn one_hot(m: usize, k: HypIdx) -> Result<Belief> {
    if k >= m {
        return Err(Error::UnknownHypothesis(k));
    }
    Ok(Belief::one_hot(m, k))
}
