//! Fit a detector on one blob task and score in-distribution, other-task and
//! far-shifted streams.

use lenc::data::Stream;
use lenc::harness::data::{make_blobs, shifted, split_tasks, BlobSpec};
use lenc::ksa::{verdict, KsaConfig, KsaModule};

fn main() -> anyhow::Result<()> {
    let spec = BlobSpec {
        class_count: 6,
        dim: 8,
        per_class: 500,
        ..BlobSpec::default()
    };
    let tt = make_blobs(4, &spec)?;
    let train = split_tasks(&tt.train, 3)?;
    let test = split_tasks(&tt.test, 3)?;
    let cfg = KsaConfig::default();
    let ksa = KsaModule::fit(&train[0].inputs, &cfg, 7)?;
    println!(
        "fitted on {} points: eps {:.4} delta {:.4} unreliable {}",
        train[0].len(),
        ksa.thresholds.epsilon,
        ksa.thresholds.delta,
        ksa.vae.unreliable
    );
    let show = |name: &str, inputs: Vec<Vec<f64>>| -> anyhow::Result<()> {
        let s = ksa.score(&Stream::new(inputs)?, &cfg)?;
        println!("{name:>12}: score {:>8.4} -> {:?}", s.value, verdict(s.value, &ksa.thresholds));
        Ok(())
    };
    show("same task", test[0].inputs.clone())?;
    show("task 1", test[1].inputs.clone())?;
    show("task 2", test[2].inputs.clone())?;
    show("shift 10σ", shifted(&test[0].inputs, 10.0 * spec.sigma))?;
    Ok(())
}
