//! Loads a manifest and prints what it holds. Every referenced file is read and
//! checked up front, so a dataset that opens is safe to hand to long searches.
//!
//! ```text
//! cargo run --example validate_dataset -- path/to/manifest.json
//! ```
//!
//! Without an argument a small synthetic dataset is generated first.

use genprobe::{Cell, Dataset};

fn main() -> genprobe::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let manifest = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => genprobe::synth::write_tiny_fixture(tmp.path())?,
    };

    let data = match Dataset::open(&manifest) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}: {e}", manifest.display());
            std::process::exit(1);
        }
    };
    println!("{} (d = {}, encoder {:?})", data.manifest.name, data.manifest.dim, data.manifest.encoder_tag);
    for d in &data.domains {
        let rows: Vec<String> = Cell::HEAD_ORDER
            .iter()
            .filter_map(|&c| d.cell(c).map(|m| format!("{} {}", c.name(), m.rows())))
            .collect();
        println!("  {:<10} {:<9} {}", d.id(), d.kind().to_string(), rows.join(", "));
    }
    for (name, lex) in &data.lexicons {
        println!("  lexicon {name}: {} entries, {} space", lex.len(), lex.space());
    }
    for (id, t) in &data.head_tensors {
        let [n, l, h, dim] = t.shape();
        println!("  heads {id}: {n} images, {l} layers x {h} heads, d_model {dim}");
    }
    Ok(())
}
