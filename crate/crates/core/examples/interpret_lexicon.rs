//! Lexicon entries closest to (and farthest from) a detector's weight vector.
//!
//! Here the lexicon is built so that one entry lies along the planted signal; with
//! real data the lexicon would hold text embeddings of descriptive words.

use genprobe::interpret::{self, Order};
use genprobe::probe::{self, GridSpec, DEFAULT_TOL};
use genprobe::synth::SpuriousFixture;
use genprobe::{EmbeddingMatrix, Lexicon, LexiconSpace};

fn main() -> genprobe::Result<()> {
    let fixture = SpuriousFixture::default();
    let domains = fixture.build()?;
    let (train, val) = domains[0].train_val()?;
    let model = probe::grid_search(&train, &val, &GridSpec::default(), DEFAULT_TOL)?.model;

    let dim = fixture.dim;
    let words = ["signal", "spurious-1", "spurious-2", "texture", "lighting", "sky"];
    let mut rows = vec![0.0; words.len() * dim];
    for (i, _) in words.iter().enumerate() {
        rows[i * dim + i] = 1.0;
        rows[i * dim + (i + 7) % dim] = 0.2;
    }
    let lex = Lexicon::new(
        words.iter().map(|w| w.to_string()).collect(),
        EmbeddingMatrix::new(words.len(), dim, rows)?,
        LexiconSpace::Image,
    )?;

    let report = interpret::interpret_model(&model, &lex, 3, Order::Nearest)?;
    print!("{}", report.to_markdown());
    let far = interpret::interpret_model(&model, &lex, 2, Order::Farthest)?;
    print!("{}", far.to_markdown());
    Ok(())
}
