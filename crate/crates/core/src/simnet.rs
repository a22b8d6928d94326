//! Synchronous round-based message passing over a [`GraphSchedule`].
//!
//! Round `k` first delivers the messages produced at the end of round
//! `k - 1` (or by the initial announcement) along the edges of
//! `schedule.graph_at(k)`, then lets every agent step on its own state and
//! inbox. Agents never see anything except their inbox, and all inbox reads
//! happen against round-start buffers, so execution order inside a round
//! cannot change the outcome.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::graph::GraphSchedule;

/// Size of a message in scalar units, for cost accounting.
pub trait Payload {
    fn payload_size(&self) -> usize;
}

impl Payload for crate::linalg::Vector {
    fn payload_size(&self) -> usize {
        self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing<M> {
    /// To every neighbor in the graph active at delivery.
    Broadcast(M),
    /// To one agent; dropped if it is not a neighbor at delivery.
    To(usize, M),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub from: usize,
    pub payload: M,
}

pub trait Protocol {
    type State: Clone;
    type Message: Clone + Payload;

    fn agent_count(&self) -> usize;

    /// Initial local state and the messages announced before round 0.
    fn init(&self, agent: usize) -> (Self::State, Vec<Outgoing<Self::Message>>);

    /// One local step on round-start state and this round's inbox (sorted by sender).
    fn step(
        &self,
        agent: usize,
        state: &Self::State,
        inbox: &[Envelope<Self::Message>],
    ) -> (Self::State, Vec<Outgoing<Self::Message>>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub payload_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Keep a per-message log.
    pub log_messages: bool,
    /// Agent execution order within a round; identity when `None`.
    pub order: Option<Vec<usize>>,
    /// Schedule round index of the engine's round 0.
    pub start_round: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome<S> {
    pub states: Vec<S>,
    pub rounds: usize,
    pub stopped: bool,
    /// Delivered messages per round.
    pub delivered: Vec<BTreeMap<(usize, usize), usize>>,
    pub dropped: usize,
    pub log: Vec<LogEntry>,
}

/// Holds the per-agent buffers while a protocol runs.
pub struct RoundEngine<'a, P: Protocol> {
    protocol: &'a P,
    schedule: &'a GraphSchedule,
    round: usize,
    states: Vec<P::State>,
    outboxes: Vec<Vec<Outgoing<P::Message>>>,
    opts: EngineOptions,
    delivered: Vec<BTreeMap<(usize, usize), usize>>,
    dropped: usize,
    log: Vec<LogEntry>,
}

impl<'a, P: Protocol> RoundEngine<'a, P> {
    pub fn new(protocol: &'a P, schedule: &'a GraphSchedule, opts: EngineOptions) -> Self {
        assert_eq!(
            protocol.agent_count(),
            schedule.node_count(),
            "protocol and schedule disagree on agent count"
        );
        let (states, outboxes) = (0..protocol.agent_count()).map(|i| protocol.init(i)).unzip();
        Self {
            protocol,
            schedule,
            round: 0,
            states,
            outboxes,
            opts,
            delivered: Vec::new(),
            dropped: 0,
            log: Vec::new(),
        }
    }

    pub fn states(&self) -> &[P::State] {
        &self.states
    }

    pub fn round(&self) -> usize {
        self.round
    }

    fn deliver(&mut self) -> Vec<Vec<Envelope<P::Message>>> {
        let n = self.states.len();
        let g = self.schedule.graph_at(self.opts.start_round + self.round);
        let mut inboxes: Vec<Vec<Envelope<P::Message>>> = vec![Vec::new(); n];
        let mut tally = BTreeMap::new();
        let outboxes = std::mem::replace(&mut self.outboxes, vec![Vec::new(); n]);
        for (from, outbox) in outboxes.into_iter().enumerate() {
            for msg in outbox {
                let (targets, payload): (Vec<usize>, P::Message) = match msg {
                    Outgoing::Broadcast(m) => (g.neighbors(from).to_vec(), m),
                    Outgoing::To(to, m) => {
                        if to < n && g.has_edge(from, to) {
                            (vec![to], m)
                        } else {
                            self.dropped += 1;
                            continue;
                        }
                    }
                };
                for to in targets {
                    *tally.entry((from, to)).or_insert(0) += 1;
                    if self.opts.log_messages {
                        self.log.push(LogEntry {
                            round: self.round,
                            from,
                            to,
                            payload_size: payload.payload_size(),
                        });
                    }
                    inboxes[to].push(Envelope {
                        from,
                        payload: payload.clone(),
                    });
                }
            }
        }
        // senders were visited in ascending order, so inboxes are sorted
        self.delivered.push(tally);
        inboxes
    }

    /// Executes one full round.
    pub fn step_round(&mut self) {
        let inboxes = self.deliver();
        let n = self.states.len();
        let order: Vec<usize> = self.opts.order.clone().unwrap_or_else(|| (0..n).collect());
        let mut next: Vec<Option<P::State>> = vec![None; n];
        let mut outboxes: Vec<Vec<Outgoing<P::Message>>> = vec![Vec::new(); n];
        for i in order {
            let (s, out) = self.protocol.step(i, &self.states[i], &inboxes[i]);
            next[i] = Some(s);
            outboxes[i] = out;
        }
        self.states = next
            .into_iter()
            .map(|s| s.expect("execution order must cover every agent"))
            .collect();
        self.outboxes = outboxes;
        self.round += 1;
    }

    pub fn into_outcome(self, stopped: bool) -> Outcome<P::State> {
        Outcome {
            states: self.states,
            rounds: self.round,
            stopped,
            delivered: self.delivered,
            dropped: self.dropped,
            log: self.log,
        }
    }
}

/// Runs rounds until `stop(states)` holds (checked before the first round
/// and after each one) or `max_rounds` rounds have executed.
pub fn run_protocol<P, F>(
    protocol: &P,
    schedule: &GraphSchedule,
    stop: F,
    max_rounds: usize,
    opts: EngineOptions,
) -> Outcome<P::State>
where
    P: Protocol,
    F: Fn(&[P::State]) -> bool,
{
    let mut engine = RoundEngine::new(protocol, schedule, opts);
    loop {
        if stop(engine.states()) {
            return engine.into_outcome(true);
        }
        if engine.round() == max_rounds {
            return engine.into_outcome(false);
        }
        engine.step_round();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageCounts {
    pub per_round: Vec<usize>,
    pub per_edge: BTreeMap<(usize, usize), usize>,
    pub total: usize,
}

pub fn message_counts<S>(outcome: &Outcome<S>) -> MessageCounts {
    let mut counts = MessageCounts::default();
    for round in &outcome.delivered {
        let mut n = 0;
        for (edge, c) in round {
            *counts.per_edge.entry(*edge).or_insert(0) += c;
            n += c;
        }
        counts.per_round.push(n);
        counts.total += n;
    }
    counts
}

/// Writes the message log as JSON lines.
pub fn write_log_jsonl<W: Write>(log: &[LogEntry], mut w: W) -> io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
