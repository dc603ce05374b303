use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::data::Stream;
use crate::distill::{InputOption, PolicyKind, TransferPayload, TransferPolicy};
use crate::node::{NodeId, QueryResponse, SelectionPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    KnowledgeQuery { stream: Stream, policy: SelectionPolicy },
    QueryResponse(QueryResponse),
    TransferRequest(TransferPolicy),
    TransferPayload(TransferPayload),
    CycleAbort(String),
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::KnowledgeQuery { .. } => "query",
            MessageBody::QueryResponse(_) => "response",
            MessageBody::TransferRequest(_) => "transfer_request",
            MessageBody::TransferPayload(_) => "payload",
            MessageBody::CycleAbort(_) => "abort",
        }
    }

    /// Size of the serialized body; envelope and addressing are not counted.
    pub fn byte_size(&self) -> u64 {
        let n = match self {
            MessageBody::KnowledgeQuery { stream, .. } => stream.encode().len(),
            MessageBody::QueryResponse(r) => encode_response(r).len(),
            MessageBody::TransferRequest(p) => {
                let mut e = Encoder::new();
                e.u8(policy_code(p.kind)).u8(match p.input_option {
                    None => 0,
                    Some(InputOption::StudentStream) => 1,
                    Some(InputOption::TeacherDataset) => 2,
                });
                e.len()
            }
            MessageBody::TransferPayload(p) => p.encode().len(),
            MessageBody::CycleAbort(reason) => reason.len(),
        };
        n as u64
    }
}

fn policy_code(k: PolicyKind) -> u8 {
    match k {
        PolicyKind::P1 => 1,
        PolicyKind::P2 => 2,
        PolicyKind::P3 => 3,
        PolicyKind::P4 => 4,
    }
}

pub fn encode_response(r: &QueryResponse) -> Vec<u8> {
    let mut e = Encoder::new();
    match r {
        QueryResponse::Unaware => {
            e.u8(0);
        }
        QueryResponse::Accuracy(a) => {
            e.u8(1).f64(*a);
        }
        QueryResponse::OodScore(s) => {
            e.u8(2).f64(*s);
        }
        QueryResponse::Labels(l) => {
            e.u8(3).usizes(l);
        }
    }
    e.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: NodeId,
    pub recipient: NodeId,
    pub seq: u64,
    /// Sequence number of the message this one answers.
    pub in_reply_to: Option<u64>,
    pub body: MessageBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub cycle: u64,
    pub seq: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub seq: u64,
    pub sender: NodeId,
    pub recipient: NodeId,
    pub kind: String,
    pub bytes: u64,
}

impl TraceRecord {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.cycle, self.seq, self.sender, self.recipient, self.kind, self.bytes
        )
    }
}
