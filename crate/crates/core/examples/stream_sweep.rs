//! Student accuracy as a function of stream size, over two seeds.

use lenc::harness::config::ExperimentConfig;
use lenc::harness::sweep::{sweep, SweepAxis};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(include_str!("../configs/expert_two_students.toml"))?;
    cfg.schedule.repeats = 1;
    let out = sweep(&cfg, SweepAxis::StreamSize, &[10.0, 50.0, 200.0], &[1, 2])?;
    print!("{}", out.aggregate_csv()?);
    Ok(())
}
