//! Simulated asynchronous teacher behind the real wire contract.
//!
//! Submission never blocks; each ticket becomes due `latency_steps` after
//! submission and is delivered at the drain point at the start of a step.
//! Verdicts are emitted as exact single-line JSON and re-parsed through the
//! strict teacher parser, so the wire contract is exercised end to end even
//! though the pipeline runs in virtual time.

use crate::record::RecordId;
use crate::sim::item::solve_prompt;
use crate::textproto::{format_teacher_json, parse_teacher_json, TeacherReject, TeacherVerdict};
use rand::{Rng, RngExt};
use std::collections::BTreeMap;

/// Terminal ticket outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TicketStatus {
    Pending,
    Verified(String),
    Rejected(&'static str),
}

/// An in-flight augmentation candidate moving through the teacher pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationTicket {
    pub child_id: RecordId,
    pub parent_id: RecordId,
    pub new_problem: String,
    pub diff: f64,
    pub submitted_step: u64,
    pub latency_steps: u64,
    pub status: TicketStatus,
    /// Verdict fixed at submission time; revealed at drain time.
    planned: (bool, Option<String>),
}

/// One drained ticket plus the wire bytes it produced.
#[derive(Debug, Clone)]
pub struct DrainedTicket {
    pub ticket: VerificationTicket,
    pub json_line: String,
    pub verdict: Result<TeacherVerdict, TeacherReject>,
}

/// Virtual-time queue of pending verifications ordered by due step.
#[derive(Debug, Clone, Default)]
pub struct TeacherQueue {
    pending: BTreeMap<(u64, u64), VerificationTicket>,
    seq: u64,
    pub accept_rate: f64,
    pub answer_error_rate: f64,
    pub latency_steps: u64,
}

impl TeacherQueue {
    pub fn new(latency_steps: u64, accept_rate: f64, answer_error_rate: f64) -> Self {
        TeacherQueue {
            pending: BTreeMap::new(),
            seq: 0,
            accept_rate,
            answer_error_rate,
            latency_steps,
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.pending.values().map(|t| t.child_id)
    }

    /// Non-blocking submission. The verdict is decided now (solve the
    /// candidate exactly, then apply the accept/answer-error knobs) but
    /// only delivered once the latency has elapsed.
    pub fn submit<R: Rng>(
        &mut self,
        child_id: RecordId,
        parent_id: RecordId,
        new_problem: String,
        diff: f64,
        step: u64,
        rng: &mut R,
    ) {
        let solved = solve_prompt(&new_problem);
        let accepted = rng.random::<f64>() < self.accept_rate;
        let planned = match (solved, accepted) {
            (Some(answer), true) => {
                let answer = if self.answer_error_rate > 0.0
                    && rng.random::<f64>() < self.answer_error_rate
                {
                    // An occasional wrong annotation, still numeric.
                    format!("{answer}1")
                } else {
                    answer
                };
                (true, Some(answer))
            }
            _ => (false, None),
        };
        let ticket = VerificationTicket {
            child_id,
            parent_id,
            new_problem,
            diff,
            submitted_step: step,
            latency_steps: self.latency_steps,
            status: TicketStatus::Pending,
            planned,
        };
        self.pending
            .insert((step + self.latency_steps, self.seq), ticket);
        self.seq += 1;
    }

    /// Deliver every ticket whose latency has elapsed by `step`, in
    /// submission order within a due step.
    pub fn drain(&mut self, step: u64) -> Vec<DrainedTicket> {
        let mut due: Vec<(u64, u64)> = self
            .pending
            .range(..=(step, u64::MAX))
            .map(|(&k, _)| k)
            .collect();
        due.sort_unstable();
        let mut out = Vec::with_capacity(due.len());
        for key in due {
            let mut ticket = self.pending.remove(&key).expect("key just listed");
            let json_line = format_teacher_json(ticket.planned.0, ticket.planned.1.as_deref());
            let verdict = parse_teacher_json(&json_line);
            ticket.status = match &verdict {
                Ok(v) if v.solvable => {
                    TicketStatus::Verified(v.answer.clone().expect("solvable has answer"))
                }
                Ok(_) => TicketStatus::Rejected("unsolvable"),
                Err(_) => TicketStatus::Rejected("malformed_verdict"),
            };
            out.push(DrainedTicket {
                ticket,
                json_line,
                verdict,
            });
        }
        out
    }
}
