//! Max/argmax consensus over a communication schedule.
//!
//! Candidates compare by value, then by lower id, so exact value ties still
//! resolve identically on every agent.

use std::cmp::Ordering;

use thiserror::Error;

use crate::graph::{Graph, GraphSchedule};
use crate::linalg::Vector;
use crate::simnet::{Envelope, Outgoing, Payload, Protocol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("communication graph not connected (components: {components:?})")]
    NotConnected { components: Vec<Vec<usize>> },
    #[error("agents disagree after {rounds} rounds")]
    NoAgreement { rounds: usize },
    #[error("schedule has {schedule} nodes, got {agents} candidates")]
    AgentCount { schedule: usize, agents: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub value: f64,
    pub payload: Vector,
    pub id: usize,
}

impl Candidate {
    /// Loses to every real candidate.
    pub fn sentinel(dim: usize) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            payload: Vector::zeros(dim),
            id: usize::MAX,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }

    /// Order on `(value, -id)`.
    pub fn key_cmp(&self, other: &Self) -> Ordering {
        self.value.total_cmp(&other.value).then_with(|| other.id.cmp(&self.id))
    }

    pub fn beats(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Greater
    }
}

/// Best vertex of one agent's share under `<direction, v>`.
///
/// `share` pairs global vertex ids with vertices; an empty share yields the
/// sentinel.
pub fn local_argmax(share: &[(usize, Vector)], direction: &Vector) -> Result<Candidate, ConsensusError> {
    let mut best = Candidate::sentinel(direction.len());
    for (id, v) in share {
        if v.len() != direction.len() {
            return Err(ConsensusError::DimensionMismatch {
                expected: direction.len(),
                got: v.len(),
            });
        }
        let c = Candidate {
            value: direction.dot(v),
            payload: v.clone(),
            id: *id,
        };
        if c.beats(&best) {
            best = c;
        }
    }
    Ok(best)
}

/// Every agent keeps the best of itself and its round-start neighbors.
pub fn max_consensus_round(candidates: &[Candidate], g: &Graph) -> Vec<Candidate> {
    (0..candidates.len())
        .map(|i| best_of(&candidates[i], g.neighbors(i).iter().map(|&j| &candidates[j])).clone())
        .collect()
}

pub(crate) fn best_of<'a, I>(own: &'a Candidate, others: I) -> &'a Candidate
where
    I: Iterator<Item = &'a Candidate>,
{
    others.fold(own, |best, c| if c.beats(best) { c } else { best })
}

pub fn all_agree(candidates: &[Candidate]) -> bool {
    candidates
        .windows(2)
        .all(|w| w[0].id == w[1].id && w[0].value.to_bits() == w[1].value.to_bits())
}

/// Runs `rounds` rounds starting at schedule round `start_round` and
/// returns the held candidates after every round (index 0 is the input).
pub fn max_consensus_history(
    candidates: &[Candidate],
    schedule: &GraphSchedule,
    start_round: usize,
    rounds: usize,
) -> Vec<Vec<Candidate>> {
    let mut history = vec![candidates.to_vec()];
    for r in 0..rounds {
        let next = max_consensus_round(history.last().unwrap(), schedule.graph_at(start_round + r));
        history.push(next);
    }
    history
}

/// `rounds` rounds of max-consensus; errors if agents end up disagreeing.
pub fn max_consensus(
    candidates: &[Candidate],
    schedule: &GraphSchedule,
    rounds: usize,
) -> Result<Vec<Candidate>, ConsensusError> {
    max_consensus_from(candidates, schedule, 0, rounds)
}

pub fn max_consensus_from(
    candidates: &[Candidate],
    schedule: &GraphSchedule,
    start_round: usize,
    rounds: usize,
) -> Result<Vec<Candidate>, ConsensusError> {
    if schedule.node_count() != candidates.len() {
        return Err(ConsensusError::AgentCount {
            schedule: schedule.node_count(),
            agents: candidates.len(),
        });
    }
    if let GraphSchedule::Static(g) = schedule {
        if !g.is_connected() {
            return Err(ConsensusError::NotConnected {
                components: g.components(),
            });
        }
    }
    let mut held = candidates.to_vec();
    for r in 0..rounds {
        held = max_consensus_round(&held, schedule.graph_at(start_round + r));
    }
    if !all_agree(&held) {
        return Err(ConsensusError::NoAgreement { rounds });
    }
    Ok(held)
}

impl Payload for Candidate {
    fn payload_size(&self) -> usize {
        self.payload.len() + 2
    }
}

/// Max-consensus as a message-passing protocol.
pub struct MaxConsensusProtocol {
    pub initial: Vec<Candidate>,
}

impl Protocol for MaxConsensusProtocol {
    type State = Candidate;
    type Message = Candidate;

    fn agent_count(&self) -> usize {
        self.initial.len()
    }

    fn init(&self, agent: usize) -> (Candidate, Vec<Outgoing<Candidate>>) {
        let c = self.initial[agent].clone();
        (c.clone(), vec![Outgoing::Broadcast(c)])
    }

    fn step(&self, _: usize, own: &Candidate, inbox: &[Envelope<Candidate>]) -> (Candidate, Vec<Outgoing<Candidate>>) {
        let c = best_of(own, inbox.iter().map(|e| &e.payload)).clone();
        (c.clone(), vec![Outgoing::Broadcast(c)])
    }
}
