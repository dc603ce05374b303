//! Inter-node protocol: synchronous in-process delivery, teacher selection
//! and orchestration of education cycles.

mod message;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Stream;
use crate::distill::{select_policy, TransferPolicy, TransferReport};
use crate::error::{LencError, Result};
use crate::ksa::Verdict;
use crate::node::{NodeId, NodeState, ProtocolConfig, QueryResponse, SelectionPolicy};
pub use message::{encode_response, Message, MessageBody, Receipt, TraceRecord};

/// Cycles in which a node answers queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    #[default]
    Always,
    EvenCycles,
    OddCycles,
}

impl Availability {
    pub fn allows(&self, cycle: u64) -> bool {
        match self {
            Availability::Always => true,
            Availability::EvenCycles => cycle % 2 == 0,
            Availability::OddCycles => cycle % 2 == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CycleOutcome {
    /// The student was already an expert on the stream.
    NoCycle,
    NoTeacher,
    Completed,
    /// Transfer or bookkeeping failed; the student was restored.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub student: NodeId,
    pub verdict: Verdict,
    pub teacher: Option<NodeId>,
    pub selection_policy: SelectionPolicy,
    /// Selection score of every aware responder, in node-id order.
    pub scores: Vec<(NodeId, f64)>,
    pub transfer_policy: Option<TransferPolicy>,
    pub transfer: Option<TransferReport>,
    pub outcome: CycleOutcome,
    pub messages: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherChoice {
    pub teacher: Option<NodeId>,
    pub scores: Vec<(NodeId, f64)>,
}

/// Fraction of points where the two label vectors differ.
pub fn churn(student: &[usize], responder: &[usize]) -> f64 {
    if student.is_empty() || student.len() != responder.len() {
        return 1.0;
    }
    let differ = student.iter().zip(responder).filter(|(a, b)| a != b).count();
    differ as f64 / student.len() as f64
}

/// Picks a teacher among aware responders: highest accuracy, lowest OOD
/// score, or highest disagreement with the student. Ties go to the lowest id.
pub fn select_teacher(
    student: &NodeState,
    responses: &[(NodeId, QueryResponse)],
    policy: SelectionPolicy,
    stream: &Stream,
    cfg: &ProtocolConfig,
) -> TeacherChoice {
    let mut sorted: Vec<&(NodeId, QueryResponse)> = responses.iter().filter(|(id, _)| *id != student.id).collect();
    sorted.sort_by_key(|(id, _)| *id);
    let own = if policy == SelectionPolicy::Disagreement && student.task_count() > 0 {
        student.predict(stream, cfg).ok()
    } else {
        None
    };
    let mut scores = Vec::new();
    for (id, r) in sorted {
        let q = match (policy, r) {
            (SelectionPolicy::Accuracy, QueryResponse::Accuracy(a)) => *a,
            (SelectionPolicy::OodScore, QueryResponse::OodScore(s)) => *s,
            (SelectionPolicy::Disagreement, QueryResponse::Labels(l)) => own.as_deref().map_or(1.0, |o| churn(o, l)),
            _ => continue,
        };
        scores.push((*id, q));
    }
    let better = |a: f64, b: f64| match policy {
        SelectionPolicy::OodScore => a < b,
        _ => a > b,
    };
    let mut best: Option<(NodeId, f64)> = None;
    for &(id, q) in &scores {
        if best.is_none_or(|(_, bq)| better(q, bq)) {
            best = Some((id, q));
        }
    }
    TeacherChoice {
        teacher: best.map(|(id, _)| id),
        scores,
    }
}

pub struct Community {
    pub cfg: ProtocolConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    availability: BTreeMap<NodeId, Availability>,
    next_seq: BTreeMap<NodeId, u64>,
    cycle: u64,
    trace: Vec<TraceRecord>,
}

impl Community {
    pub fn new(cfg: ProtocolConfig) -> Self {
        Self {
            cfg,
            nodes: BTreeMap::new(),
            availability: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            cycle: 0,
            trace: Vec::new(),
        }
    }

    pub fn add_node(&mut self, node: NodeState) -> Result<()> {
        if self.nodes.contains_key(&node.id) {
            return Err(LencError::Config(format!("duplicate node id {}", node.id)));
        }
        self.next_seq.insert(node.id, 0);
        self.nodes.insert(node.id, node);
        Ok(())
    }

    pub fn set_availability(&mut self, id: NodeId, a: Availability) -> Result<()> {
        if !self.nodes.contains_key(&id) {
            return Err(LencError::UnknownNode(id));
        }
        self.availability.insert(id, a);
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeState> {
        self.nodes.get(&id).ok_or(LencError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut NodeState> {
        self.nodes.get_mut(&id).ok_or(LencError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    /// Index of the next cycle to run.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut out = String::from("cycle\tseq\tsender\trecipient\tkind\tbytes\n");
        for r in &self.trace {
            out.push_str(&r.line());
            out.push('\n');
        }
        out
    }

    fn available(&self, id: NodeId) -> bool {
        self.availability.get(&id).copied().unwrap_or_default().allows(self.cycle)
    }

    /// Next sequence number `sender` will use.
    pub fn peek_seq(&self, sender: NodeId) -> Result<u64> {
        self.next_seq.get(&sender).copied().ok_or(LencError::UnknownNode(sender))
    }

    /// Records a message whose sequence number must be the sender's next one.
    pub fn deliver(&mut self, msg: &Message) -> Result<Receipt> {
        if !self.nodes.contains_key(&msg.recipient) {
            return Err(LencError::Routing(format!("unknown recipient {}", msg.recipient)));
        }
        let expected = self.peek_seq(msg.sender)?;
        if msg.seq != expected {
            return Err(LencError::Routing(format!(
                "sender {} sent seq {} but next is {expected}",
                msg.sender, msg.seq
            )));
        }
        self.next_seq.insert(msg.sender, expected + 1);
        let bytes = msg.body.byte_size();
        self.trace.push(TraceRecord {
            cycle: self.cycle,
            seq: msg.seq,
            sender: msg.sender,
            recipient: msg.recipient,
            kind: msg.body.kind().to_string(),
            bytes,
        });
        Ok(Receipt {
            cycle: self.cycle,
            seq: msg.seq,
            bytes,
        })
    }

    fn send(&mut self, sender: NodeId, recipient: NodeId, body: MessageBody, in_reply_to: Option<u64>) -> Result<Receipt> {
        let msg = Message {
            sender,
            recipient,
            seq: self.peek_seq(sender)?,
            in_reply_to,
            body,
        };
        self.deliver(&msg)
    }

    /// Sends the stream to every other node in id order and gathers replies.
    /// Nodes unavailable this cycle answer `Unaware`.
    pub fn broadcast_query(
        &mut self,
        student: NodeId,
        stream: &Stream,
        policy: SelectionPolicy,
    ) -> Result<Vec<(NodeId, QueryResponse)>> {
        self.node(student)?;
        if self.nodes.len() < 2 {
            return Err(LencError::NoPeers);
        }
        let peers: Vec<NodeId> = self.nodes.keys().copied().filter(|&id| id != student).collect();
        let mut out = Vec::with_capacity(peers.len());
        for peer in peers {
            let q = self.send(
                student,
                peer,
                MessageBody::KnowledgeQuery {
                    stream: stream.clone(),
                    policy,
                },
                None,
            )?;
            let response = if self.available(peer) {
                self.nodes[&peer].respond_to_query(stream, policy, &self.cfg)
            } else {
                QueryResponse::Unaware
            };
            self.send(peer, student, MessageBody::QueryResponse(response.clone()), Some(q.seq))?;
            out.push((peer, response));
        }
        Ok(out)
    }

    /// One full education cycle for `student` on `stream`.
    pub fn run_education_cycle(
        &mut self,
        student_id: NodeId,
        stream: &Stream,
        selection: SelectionPolicy,
    ) -> Result<CycleReport> {
        let trace_start = self.trace.len();
        let result = self.cycle_inner(student_id, stream, selection, trace_start);
        self.cycle += 1;
        result
    }

    fn cycle_inner(
        &mut self,
        student_id: NodeId,
        stream: &Stream,
        selection: SelectionPolicy,
        trace_start: usize,
    ) -> Result<CycleReport> {
        let (assessment, request) = self.node(student_id)?.ingest_stream(stream, &self.cfg);
        let mut report = CycleReport {
            cycle: self.cycle,
            student: student_id,
            verdict: assessment.verdict,
            teacher: None,
            selection_policy: selection,
            scores: Vec::new(),
            transfer_policy: None,
            transfer: None,
            outcome: CycleOutcome::NoCycle,
            messages: 0,
            bytes: 0,
        };
        let Some(request) = request else {
            return Ok(report);
        };

        let responses = self.broadcast_query(student_id, stream, selection)?;
        let choice = select_teacher(&self.nodes[&student_id], &responses, selection, stream, &self.cfg);
        report.scores = choice.scores;
        let Some(teacher_id) = choice.teacher else {
            log::info!("cycle {}: node {student_id} found no teacher; stream discarded", self.cycle);
            report.outcome = CycleOutcome::NoTeacher;
            self.account(&mut report, trace_start);
            return Ok(report);
        };
        report.teacher = Some(teacher_id);

        let policy = self.choose_policy(student_id, teacher_id, stream)?;
        report.transfer_policy = Some(policy);
        let req = self.send(student_id, teacher_id, MessageBody::TransferRequest(policy), None)?;

        let payload = match self.nodes[&teacher_id].prepare_payload(stream, &policy, &self.cfg) {
            Ok(p) => p,
            Err(e) => {
                self.send(teacher_id, student_id, MessageBody::CycleAbort(e.to_string()), Some(req.seq))?;
                report.outcome = CycleOutcome::Failed(e.to_string());
                self.account(&mut report, trace_start);
                return Ok(report);
            }
        };
        self.send(teacher_id, student_id, MessageBody::TransferPayload(payload.clone()), Some(req.seq))?;

        let cfg = self.cfg.clone();
        let student = self.node_mut(student_id)?;
        let checkpoint = student.clone();
        let outcome = student
            .receive_transfer(&request, &payload, &policy, &cfg)
            .and_then(|r| student.finish_education(&r, &cfg).map(|_| r));
        match outcome {
            Ok(r) => {
                report.transfer = Some(r);
                report.outcome = CycleOutcome::Completed;
            }
            Err(e) => {
                *student = checkpoint;
                log::warn!("cycle {}: transfer to node {student_id} failed, rolled back: {e}", self.cycle);
                self.send(student_id, teacher_id, MessageBody::CycleAbort(e.to_string()), None)?;
                report.outcome = CycleOutcome::Failed(e.to_string());
            }
        }
        self.account(&mut report, trace_start);
        Ok(report)
    }

    fn account(&self, report: &mut CycleReport, trace_start: usize) {
        let recs = &self.trace[trace_start..];
        report.messages = recs.len();
        report.bytes = recs.iter().map(|r| r.bytes).sum();
    }

    fn choose_policy(&self, student_id: NodeId, teacher_id: NodeId, stream: &Stream) -> Result<TransferPolicy> {
        let s = self.node(student_id)?;
        let t = self.node(teacher_id)?;
        let mut c = s.constraints.combine(&t.constraints);
        let head = t.route(stream, &self.cfg)?;
        if t.datasets.get(head).and_then(Option::as_ref).is_none() {
            c.dataset_privacy = true;
        }
        let s_sizes = s.learner.fm.layer_sizes();
        let t_sizes = t.learner.fm.layer_sizes();
        let shared = !c.architecture_privacy && s_sizes == t_sizes;
        let more_complex = !c.architecture_privacy && s.learner.fm.param_count() >= 2 * t.learner.fm.param_count();
        Ok(select_policy(&c, s.task_count() == 0, shared, more_complex))
    }
}

#[cfg(test)]
mod tests;
