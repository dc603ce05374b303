//! A community member: one learner, one detector per task, consolidation
//! anchors and the node's environment constraints.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continual::{consolidate, ConsolidatedTask};
use crate::data::{LabeledDataset, Stream};
use crate::distill::{
    execute_transfer, EnvironmentConstraints, HeadTarget, LossHyperparams, TrainConfig, TransferPayload,
    TransferPolicy, TransferReport,
};
use crate::error::{LencError, Result};
use crate::ksa::{route_head, verdict, Assessment, KsaConfig, KsaModule, Verdict};
use crate::learner::{argmax, Learner};
use crate::seed::derive_seed;

pub type NodeId = u32;

/// Settings shared by every node of a community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub ksa: KsaConfig,
    pub loss: LossHyperparams,
    pub train: TrainConfig,
    pub lambda: f64,
    /// Inputs sampled for each Fisher estimate.
    pub fisher_samples: usize,
    /// When false, no anchors are kept and transfers fine-tune freely.
    pub use_ewc: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            ksa: KsaConfig::default(),
            loss: LossHyperparams::default(),
            train: TrainConfig::default(),
            lambda: 500.0,
            fisher_samples: 200,
            use_ewc: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Accuracy,
    OodScore,
    Disagreement,
}

/// A peer's answer to a knowledge query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QueryResponse {
    Unaware,
    Accuracy(f64),
    OodScore(f64),
    Labels(Vec<usize>),
}

impl QueryResponse {
    pub fn is_aware(&self) -> bool {
        !matches!(self, QueryResponse::Unaware)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EducationRequest {
    pub node: NodeId,
    pub stream: Stream,
    pub disposition: HeadTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub learner: Learner,
    /// One detector per head; `None` marks a task the node cannot teach.
    pub ksa: Vec<Option<KsaModule>>,
    pub consolidated: Vec<ConsolidatedTask>,
    pub datasets: Vec<Option<LabeledDataset>>,
    pub constraints: EnvironmentConstraints,
    pub seed: u64,
    /// Completed education cycles; feeds sub-seed derivation.
    pub educations: u64,
}

impl NodeState {
    pub fn new(id: NodeId, layer_sizes: &[usize], constraints: EnvironmentConstraints, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[id as u64, 0]));
        Ok(Self {
            id,
            learner: Learner::new(layer_sizes, &mut rng)?,
            ksa: Vec::new(),
            consolidated: Vec::new(),
            datasets: Vec::new(),
            constraints,
            seed,
            educations: 0,
        })
    }

    pub fn task_count(&self) -> usize {
        self.learner.task_count()
    }

    pub fn stored_accuracy(&self, task: usize) -> Option<f64> {
        self.learner.heads.get(task).and_then(|h| h.stored_accuracy)
    }

    fn sub_seed(&self, purpose: u64) -> u64 {
        derive_seed(self.seed, &[self.id as u64, self.educations + 1, purpose])
    }

    /// Per-task stream scores; tasks without a detector score +∞.
    pub fn task_scores(&self, stream: &Stream, cfg: &ProtocolConfig) -> Result<Vec<Option<crate::ksa::OodScore>>> {
        self.ksa
            .iter()
            .map(|k| k.as_ref().map(|k| k.score(stream, &cfg.ksa)).transpose())
            .collect()
    }

    /// Verdict of the best-scoring detector.
    pub fn assess(&self, stream: &Stream, cfg: &ProtocolConfig) -> Assessment {
        if self.task_count() == 0 {
            return Assessment::unknown();
        }
        let scores = match self.task_scores(stream, cfg) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("node {}: scoring failed, treating stream as unknown: {e}", self.id);
                return Assessment::unknown();
            }
        };
        let values: Vec<f64> = scores
            .iter()
            .map(|s| s.as_ref().map_or(f64::INFINITY, |s| s.value))
            .collect();
        let best = match route_head(&values) {
            Ok(b) => b,
            Err(_) => return Assessment::unknown(),
        };
        let (Some(score), Some(ksa)) = (scores[best].clone(), self.ksa[best].as_ref()) else {
            return Assessment::unknown();
        };
        Assessment {
            verdict: verdict(score.value, &ksa.thresholds),
            task: Some(best),
            score: Some(score),
        }
    }

    pub fn ingest_stream(&self, stream: &Stream, cfg: &ProtocolConfig) -> (Assessment, Option<EducationRequest>) {
        let a = self.assess(stream, cfg);
        let disposition = match (a.verdict, a.task) {
            (Verdict::Expert, _) => return (a, None),
            (Verdict::Limited, Some(j)) => HeadTarget::Reuse(j),
            _ => HeadTarget::Append,
        };
        let req = EducationRequest {
            node: self.id,
            stream: stream.clone(),
            disposition,
        };
        (a, Some(req))
    }

    pub fn respond_to_query(&self, stream: &Stream, policy: SelectionPolicy, cfg: &ProtocolConfig) -> QueryResponse {
        let a = self.assess(stream, cfg);
        let (Some(j), Some(score)) = (a.task, a.score.as_ref()) else {
            return QueryResponse::Unaware;
        };
        if a.verdict == Verdict::Unknown {
            return QueryResponse::Unaware;
        }
        match policy {
            SelectionPolicy::Accuracy => self
                .stored_accuracy(j)
                .map_or(QueryResponse::Unaware, QueryResponse::Accuracy),
            SelectionPolicy::OodScore => QueryResponse::OodScore(score.value),
            SelectionPolicy::Disagreement => match self.predict_with_head(j, stream) {
                Ok(labels) => QueryResponse::Labels(labels),
                Err(_) => QueryResponse::Unaware,
            },
        }
    }

    pub fn predict_with_head(&self, head: usize, stream: &Stream) -> Result<Vec<usize>> {
        stream
            .inputs()
            .iter()
            .map(|x| self.learner.logits(head, x).map(|z| argmax(&z)))
            .collect()
    }

    /// Head chosen by detector routing for this stream.
    pub fn route(&self, stream: &Stream, cfg: &ProtocolConfig) -> Result<usize> {
        match self.task_count() {
            0 => Err(LencError::NoKnowledge),
            1 => Ok(0),
            _ => {
                let values: Vec<f64> = self
                    .task_scores(stream, cfg)?
                    .iter()
                    .map(|s| s.as_ref().map_or(f64::INFINITY, |s| s.value))
                    .collect();
                route_head(&values)
            }
        }
    }

    pub fn predict(&self, stream: &Stream, cfg: &ProtocolConfig) -> Result<Vec<usize>> {
        let head = self.route(stream, cfg)?;
        self.predict_with_head(head, stream)
    }

    /// Teacher side of a transfer for the head that best matches `stream`.
    pub fn prepare_payload(
        &self,
        stream: &Stream,
        policy: &TransferPolicy,
        cfg: &ProtocolConfig,
    ) -> Result<TransferPayload> {
        let head = self.route(stream, cfg)?;
        let dataset = self.datasets.get(head).and_then(Option::as_ref);
        TransferPayload::prepare(&self.learner, head, policy, stream, dataset, cfg.loss.temperature)
    }

    /// Student side of a transfer.
    pub fn receive_transfer(
        &mut self,
        request: &EducationRequest,
        payload: &TransferPayload,
        policy: &TransferPolicy,
        cfg: &ProtocolConfig,
    ) -> Result<TransferReport> {
        let train = TrainConfig {
            seed: self.sub_seed(1),
            ..cfg.train
        };
        execute_transfer(
            &mut self.learner,
            payload,
            policy,
            &cfg.loss,
            request.disposition,
            &self.consolidated,
            &request.stream,
            &train,
        )
    }

    /// Post-transfer bookkeeping: detector (re)training, threshold
    /// calibration and consolidation of the trained head.
    pub fn finish_education(&mut self, report: &TransferReport, cfg: &ProtocolConfig) -> Result<()> {
        let head = report.head;
        if head >= self.task_count() {
            return Err(LencError::InvalidParameter(format!("transfer reported unknown head {head}")));
        }
        let appended = head >= self.ksa.len();
        let mut inputs = report.seen_inputs.clone();
        if !appended {
            if let Some(old) = &self.ksa[head] {
                let mut merged = old.inputs.clone();
                merged.extend(inputs);
                inputs = merged;
            }
        }
        let ksa = match KsaModule::fit(&inputs, &cfg.ksa, self.sub_seed(2)) {
            Ok(k) => Some(k),
            Err(e) => {
                log::warn!("node {}: cannot teach task {head}: detector training failed: {e}", self.id);
                None
            }
        };
        if appended {
            self.ksa.push(ksa);
            self.datasets.push(None);
            self.learner.heads[head].stored_accuracy = None;
        } else {
            self.ksa[head] = ksa;
        }
        if cfg.use_ewc {
            let c = consolidate(&self.learner, head, &report.seen_inputs, cfg.fisher_samples, cfg.lambda)?;
            match self.consolidated.iter_mut().find(|t| t.task_index == head) {
                Some(slot) => *slot = c,
                None => self.consolidated.push(c),
            }
        }
        self.educations += 1;
        Ok(())
    }

    /// Classical supervised learning of a new task before deployment.
    pub fn pretrain_task(
        &mut self,
        train: &LabeledDataset,
        test: Option<&LabeledDataset>,
        store_dataset: bool,
        cfg: &ProtocolConfig,
        train_cfg: &TrainConfig,
    ) -> Result<usize> {
        let policy = TransferPolicy {
            kind: crate::distill::PolicyKind::P1,
            input_option: None,
        };
        let stream = Stream::new(train.inputs.clone())?;
        let tc = TrainConfig {
            seed: self.sub_seed(3),
            ..*train_cfg
        };
        let hp = LossHyperparams { alpha: 1.0, ..cfg.loss };
        let report = execute_transfer(
            &mut self.learner,
            &TransferPayload::Dataset(train.clone()),
            &policy,
            &hp,
            HeadTarget::Append,
            &self.consolidated,
            &stream,
            &tc,
        )?;
        let head = report.head;
        let ksa = KsaModule::fit(&train.inputs, &cfg.ksa, self.sub_seed(2))?;
        self.ksa.push(Some(ksa));
        self.datasets.push(store_dataset.then(|| train.clone()));
        if cfg.use_ewc {
            let c = consolidate(&self.learner, head, &train.inputs, cfg.fisher_samples, cfg.lambda)?;
            self.consolidated.push(c);
        }
        if let Some(test) = test {
            let acc = head_accuracy(&self.learner, head, test)?;
            self.learner.heads[head].stored_accuracy = Some(acc);
        }
        self.educations += 1;
        Ok(head)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let t = self.task_count();
        if self.ksa.len() != t || self.datasets.len() != t {
            return Err(LencError::InvalidParameter(format!(
                "node {}: {t} heads but {} detectors and {} dataset slots",
                self.id,
                self.ksa.len(),
                self.datasets.len()
            )));
        }
        if self.consolidated.iter().any(|c| c.task_index >= t) {
            return Err(LencError::InvalidParameter(format!("node {}: anchor for missing head", self.id)));
        }
        Ok(())
    }
}

pub fn head_accuracy(learner: &Learner, head: usize, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(LencError::EmptyDataset(data.name.clone()));
    }
    let mut correct = 0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        correct += (learner.predict_label(head, x)? == y) as usize;
    }
    Ok(correct as f64 / data.len() as f64)
}
