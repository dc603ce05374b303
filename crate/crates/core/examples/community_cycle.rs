//! One education cycle between a pretrained expert and an untrained student,
//! with the message trace.

use lenc::harness::config::ExperimentConfig;
use lenc::harness::run::{build_community, routed_accuracy, sample_stream, task_data};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_toml(include_str!("../configs/expert_two_students.toml"))?;
    let (train, test) = task_data(&cfg)?;
    let mut com = build_community(&cfg, &train, &test)?;
    let (stream, _) = sample_stream(&train[0], cfg.stream_size, 11)?;
    let before = routed_accuracy(com.node(1)?, &test[0], &cfg.protocol)?;
    let r = com.run_education_cycle(1, &stream, cfg.selection)?;
    let after = routed_accuracy(com.node(1)?, &test[0], &cfg.protocol)?;
    println!("verdict {:?}, teacher {:?}, scores {:?}", r.verdict, r.teacher, r.scores);
    if let Some(p) = r.transfer_policy {
        println!("policy {:?} input {:?}", p.kind, p.input_option);
    }
    println!("outcome {:?}, {} messages, {} bytes", r.outcome, r.messages, r.bytes);
    println!("student accuracy {:.1}% -> {:.1}%", 100.0 * before, 100.0 * after);
    print!("{}", com.trace_text());
    Ok(())
}
