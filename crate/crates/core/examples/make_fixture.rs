//! Writes two synthetic datasets in the on-disk layout the loader expects.
//!
//! ```text
//! cargo run --example make_fixture -- data/
//! ```
//!
//! `data/tiny/` has two domains, per-head tensors and a joint-space lexicon.
//! `data/spurious/` has four domains whose in-domain detectors lean on coordinates
//! that flip sign between generators.

use std::path::PathBuf;

use genprobe::npy::Dtype;
use genprobe::synth::{self, DatasetFiles, SpuriousFixture};

fn main() -> genprobe::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data".into());

    let tiny = synth::write_tiny_fixture(&root.join("tiny"))?;
    println!("wrote {}", tiny.display());

    let domains = SpuriousFixture::default().build()?;
    let spurious = synth::write_dataset(
        &root.join("spurious"),
        &DatasetFiles {
            name: "spurious",
            domains: &domains,
            ..Default::default()
        },
        Dtype::F32,
    )?;
    println!("wrote {}", spurious.display());
    println!("try: genprobe --manifest {} validate", spurious.display());
    Ok(())
}
