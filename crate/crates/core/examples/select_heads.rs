//! Ranks attention heads by how well a probe on each head's output transfers from a
//! training domain to a validation domain, then evaluates the top heads together
//! and reads the best head through a joint-space lexicon.

use genprobe::heads::{self, HeadId};
use genprobe::probe::{GridSpec, DEFAULT_TOL};
use genprobe::synth::{self, HeadFixture};
use genprobe::transfer;
use genprobe::LexiconSpace;

fn main() -> genprobe::Result<()> {
    let fixture = HeadFixture {
        informative: vec![(HeadId::new(1, 2), 2.5), (HeadId::new(2, 0), 1.0)],
        ..Default::default()
    };
    let hd = fixture.build()?;
    let grid = GridSpec::default();
    let (train, val) = (&hd.domains[0], &hd.domains[1]);

    let ranking = heads::rank_heads(
        (train, &hd.tensors[train.id()]),
        (val, &hd.tensors[val.id()]),
        &grid,
        DEFAULT_TOL,
    )?;
    for r in ranking.ranking.iter().take(5) {
        println!("  {} {:.4}", r.id(), r.val_acc);
    }

    let top = heads::select_top(&ranking, 3)?;
    let refs: Vec<_> = hd.domains.iter().collect();
    let m = heads::head_transfer_eval(&top, &refs, &hd.tensors, val.id(), &grid, DEFAULT_TOL)?;
    print!("{}", transfer::matrix_csv(&m));

    let lex = synth::random_lexicon(4, 50, fixture.joint_dim, LexiconSpace::Joint)?;
    let report = heads::interpret_head(top[0], train, &hd.tensors[train.id()], &lex, 3)?;
    print!("{}", report.to_markdown());
    Ok(())
}
