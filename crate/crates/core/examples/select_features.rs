//! Greedy feature removal between two domains, then the resulting mask evaluated on
//! domains that took no part in the search.
//!
//! Each search trains on one domain and removes, one coordinate at a time, the
//! feature whose removal most improves accuracy on the other domain. The two
//! directions are cut at their best step and the surviving features are combined.

use genprobe::probe::{GridSpec, DEFAULT_TOL};
use genprobe::select;
use genprobe::synth::SpuriousFixture;
use genprobe::transfer::{self, Detector};

fn main() -> genprobe::Result<()> {
    let fixture = SpuriousFixture {
        dim: 16,
        ..Default::default()
    };
    let domains = fixture.build()?;
    let (a, b) = (&domains[0], &domains[1]);
    let grid = GridSpec::default();
    let steps = select::default_max_steps(fixture.dim);

    let ab = select::greedy_search(a, b, &grid, steps, DEFAULT_TOL)?;
    let ba = select::greedy_search(b, a, &grid, steps, DEFAULT_TOL)?;
    for t in [&ab, &ba] {
        let best = t.best_step().expect("at least one step");
        println!(
            "{} -> {}: {:.4} before, {:.4} after removing {:?}",
            t.direction[0],
            t.direction[1],
            t.baseline_score,
            t.scores[best],
            &t.removed[..=best]
        );
    }
    let mask = select::combine_traces(&ab, &ba)?;
    println!("mask keeps {} of {}: {:?}", mask.kept.len(), fixture.dim, mask.kept);

    let held_out: Vec<_> = domains[2..].iter().collect();
    let before = transfer::build_matrix(&held_out, &Detector::Baseline, &grid, DEFAULT_TOL)?;
    let after = select::evaluate_mask(&mask, &held_out, &grid, DEFAULT_TOL)?;
    println!(
        "held-out mean accuracy: {:.4} -> {:.4}",
        transfer::summarize(&before, false)?.a_all,
        transfer::summarize(&after, false)?.a_all
    );
    Ok(())
}
