//! Export a trained learner, encode it to bytes and rebuild it elsewhere.

use lenc::harness::data::{make_blobs, BlobSpec};
use lenc::learner::{export_parameters, import_parameters, Learner, ParameterSnapshot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut learner = Learner::new(&[2, 6, 4], &mut rng)?;
    learner.append_decision_head(3, &mut rng)?;
    learner.append_decision_head(2, &mut rng)?;
    let bytes = export_parameters(&learner).encode();
    let copy = import_parameters(&ParameterSnapshot::decode(&bytes)?)?;
    let probes = make_blobs(5, &BlobSpec::default())?.test;
    let same = probes
        .inputs
        .iter()
        .all(|x| (0..2).all(|h| learner.logits(h, x).unwrap() == copy.logits(h, x).unwrap()));
    println!("{} parameters in {} bytes; identical logits on {} probes: {same}", learner.param_count(), bytes.len(), probes.len());
    Ok(())
}
