use super::*;
use crate::data::LabeledDataset;
use crate::distill::{EnvironmentConstraints, TrainConfig};
use crate::harness::data::{make_blobs, split_tasks, BlobSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> ProtocolConfig {
    let mut c = ProtocolConfig::default();
    c.ksa.vae.epochs = 30;
    c.train = TrainConfig {
        epochs: 40,
        lr: 0.05,
        ..TrainConfig::default()
    };
    c
}

fn task(seed: u64) -> (LabeledDataset, LabeledDataset) {
    let spec = BlobSpec {
        class_count: 4,
        per_class: 250,
        ..BlobSpec::default()
    };
    let tt = make_blobs(seed, &spec).unwrap();
    let mut tr = split_tasks(&tt.train, 2).unwrap();
    let mut te = split_tasks(&tt.test, 2).unwrap();
    (tr.swap_remove(0), te.swap_remove(0))
}

fn untrained(id: NodeId) -> NodeState {
    NodeState::new(id, &[2, 10], EnvironmentConstraints::default(), 100 + id as u64).unwrap()
}

fn community(expert_id: Option<NodeId>, n: u32) -> (Community, LabeledDataset) {
    let (train, test) = task(3);
    let c = cfg();
    let mut com = Community::new(c.clone());
    for id in 0..n {
        let mut node = untrained(id);
        if Some(id) == expert_id {
            node.pretrain_task(&train, Some(&test), true, &c, &c.train).unwrap();
        }
        com.add_node(node).unwrap();
    }
    (com, train)
}

fn stream(d: &LabeledDataset, from: usize, n: usize) -> Stream {
    Stream::new(d.inputs[from..from + n].to_vec()).unwrap()
}

#[test]
fn fan_out_and_byte_accounting() {
    let (mut com, d) = community(None, 4);
    let s = stream(&d, 0, 30);
    let r = com.broadcast_query(0, &s, SelectionPolicy::Accuracy).unwrap();
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|(_, q)| *q == QueryResponse::Unaware));
    let query_bytes: u64 = com.trace().iter().filter(|t| t.kind == "query").map(|t| t.bytes).sum();
    assert_eq!(query_bytes, s.encode().len() as u64 * 3);
    for w in com.trace().windows(2) {
        if w[0].sender == w[1].sender {
            assert!(w[1].seq > w[0].seq);
        }
    }
}

#[test]
fn single_node_has_no_peers() {
    let (mut com, d) = community(None, 1);
    assert_eq!(
        com.broadcast_query(0, &stream(&d, 0, 5), SelectionPolicy::OodScore),
        Err(LencError::NoPeers)
    );
}

#[test]
fn delivery_checks_recipient_and_sequence() {
    let (mut com, d) = community(None, 2);
    let body = MessageBody::KnowledgeQuery {
        stream: stream(&d, 0, 3),
        policy: SelectionPolicy::Accuracy,
    };
    let mut msg = Message {
        sender: 0,
        recipient: 1,
        seq: 0,
        in_reply_to: None,
        body,
    };
    let r = com.deliver(&msg).unwrap();
    assert_eq!(r.bytes, stream(&d, 0, 3).encode().len() as u64);
    assert!(matches!(com.deliver(&msg), Err(LencError::Routing(_))));
    msg.seq = 1;
    msg.recipient = 9;
    assert!(matches!(com.deliver(&msg), Err(LencError::Routing(_))));
}

#[test]
fn selection_examples() {
    let s = Stream::new(vec![vec![0.0, 0.0]; 10]).unwrap();
    let student = untrained(9);
    let c = cfg();
    let acc = [(1, QueryResponse::Accuracy(0.9)), (2, QueryResponse::Accuracy(0.7))];
    assert_eq!(select_teacher(&student, &acc, SelectionPolicy::Accuracy, &s, &c).teacher, Some(1));
    let ood = [(1, QueryResponse::OodScore(0.4)), (2, QueryResponse::OodScore(0.1))];
    assert_eq!(select_teacher(&student, &ood, SelectionPolicy::OodScore, &s, &c).teacher, Some(2));
    let none = [(1, QueryResponse::Unaware), (2, QueryResponse::Unaware)];
    assert_eq!(select_teacher(&student, &none, SelectionPolicy::OodScore, &s, &c).teacher, None);
    let labels = [(3, QueryResponse::Labels(vec![0; 10])), (2, QueryResponse::Labels(vec![1; 10]))];
    let pick = select_teacher(&student, &labels, SelectionPolicy::Disagreement, &s, &c);
    assert_eq!(pick.teacher, Some(2));
    assert_eq!(pick.scores, vec![(2, 1.0), (3, 1.0)]);
    let own = [(9, QueryResponse::Accuracy(1.0)), (1, QueryResponse::Accuracy(0.1))];
    assert_eq!(select_teacher(&student, &own, SelectionPolicy::Accuracy, &s, &c).teacher, Some(1));
}

#[test]
fn disagreement_prefers_the_most_different_responder() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut student = untrained(0);
    student.learner.append_decision_head(2, &mut rng).unwrap();
    student.ksa.push(None);
    student.datasets.push(None);
    let s = Stream::new((0..10).map(|i| vec![i as f64, -(i as f64)]).collect()).unwrap();
    let own = student.predict(&s, &cfg()).unwrap();
    let flip = |k: usize| -> Vec<usize> {
        own.iter().enumerate().map(|(i, &y)| if i < k { 1 - y } else { y }).collect()
    };
    let r = [(1, QueryResponse::Labels(flip(1))), (2, QueryResponse::Labels(flip(4)))];
    let pick = select_teacher(&student, &r, SelectionPolicy::Disagreement, &s, &cfg());
    assert_eq!(pick.teacher, Some(2));
    assert!((pick.scores[0].1 - 0.1).abs() < 1e-12 && (pick.scores[1].1 - 0.4).abs() < 1e-12);
    let mut rev = r.clone();
    rev.reverse();
    assert_eq!(select_teacher(&student, &rev, SelectionPolicy::Disagreement, &s, &cfg()).teacher, Some(2));
    assert_eq!(churn(&own, &own), 0.0);
}

#[test]
fn expert_student_sends_nothing() {
    let (mut com, d) = community(Some(0), 3);
    let r = com.run_education_cycle(0, &stream(&d, 0, 100), SelectionPolicy::Disagreement).unwrap();
    assert_eq!(r.outcome, CycleOutcome::NoCycle);
    assert_eq!(r.messages, 0);
    assert!(com.trace().is_empty());
}

#[test]
fn no_teacher_leaves_student_unchanged() {
    let (mut com, d) = community(None, 3);
    let before = com.node(0).unwrap().clone();
    let r = com.run_education_cycle(0, &stream(&d, 0, 50), SelectionPolicy::OodScore).unwrap();
    assert_eq!(r.outcome, CycleOutcome::NoTeacher);
    assert_eq!(r.teacher, None);
    assert_eq!(com.node(0).unwrap(), &before);
    assert_eq!(r.messages, 4);
}

#[test]
fn end_to_end_cycle_selects_the_expert_and_replays_identically() {
    let run = || {
        let (mut com, d) = community(Some(2), 4);
        let r = com.run_education_cycle(0, &stream(&d, 0, 200), SelectionPolicy::Disagreement).unwrap();
        (r, com.trace_text(), com.node(0).unwrap().clone())
    };
    let (r, trace, student) = run();
    assert_eq!(r.teacher, Some(2));
    assert_eq!(r.outcome, CycleOutcome::Completed);
    assert_eq!(student.task_count(), 1);
    let (r2, trace2, student2) = run();
    assert_eq!(r, r2);
    assert_eq!(trace, trace2);
    assert_eq!(student, student2);
}

#[test]
fn failed_transfer_rolls_back() {
    let (mut com, d) = community(Some(1), 3);
    let first = com.run_education_cycle(0, &stream(&d, 100, 150), SelectionPolicy::Accuracy).unwrap();
    assert_eq!(first.outcome, CycleOutcome::Completed);
    // Force the next stream to look unknown so another transfer starts.
    let mut student = com.node(0).unwrap().clone();
    student.ksa[0].as_mut().unwrap().thresholds = crate::ksa::Thresholds::new(-1.0, -2.0).unwrap();
    *com.node_mut(0).unwrap() = student.clone();
    com.cfg.train.fail_after_epochs = Some(3);
    let r = com.run_education_cycle(0, &stream(&d, 0, 100), SelectionPolicy::Accuracy).unwrap();
    assert!(matches!(r.outcome, CycleOutcome::Failed(_)), "{:?}", r.outcome);
    assert_eq!(com.node(0).unwrap(), &student);
    assert_eq!(com.trace().last().unwrap().kind, "abort");
}

#[test]
fn availability_masks_responses() {
    let (mut com, d) = community(Some(1), 2);
    com.set_availability(1, Availability::OddCycles).unwrap();
    let r = com.run_education_cycle(0, &stream(&d, 0, 100), SelectionPolicy::OodScore).unwrap();
    assert_eq!(r.outcome, CycleOutcome::NoTeacher);
    let r = com.run_education_cycle(0, &stream(&d, 0, 100), SelectionPolicy::OodScore).unwrap();
    assert_eq!(r.teacher, Some(1));
    assert!(Availability::EvenCycles.allows(0) && !Availability::EvenCycles.allows(1));
}
