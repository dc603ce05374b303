//! Three tasks learned in turn from a teacher, with and without the
//! consolidation penalty. Prints the student's accuracy after every step.

use lenc::harness::config::ExperimentConfig;
use lenc::harness::metrics::accuracy_matrix;
use lenc::harness::run::run_experiment;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let mut cfg = ExperimentConfig::from_toml(include_str!("../configs/continual_three_tasks.toml"))?;
    cfg.seed = seed;
    for use_ewc in [true, false] {
        cfg.protocol.use_ewc = use_ewc;
        let out = run_experiment(&cfg)?;
        println!("{}", if use_ewc { "with EWC" } else { "naive" });
        println!("{:>5} {:>7} {:>7} {:>7}", "step", "task0", "task1", "task2");
        for (step, row) in accuracy_matrix(&out.rows, 1).iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|a| format!("{:>7.1}", 100.0 * a)).collect();
            println!("{step:>5} {}", cells.join(" "));
        }
    }
    Ok(())
}
