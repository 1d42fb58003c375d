//! Grid-searched logistic-regression probe on one domain, then train-on-one,
//! test-on-another accuracy.

use genprobe::probe::{self, GridSpec, DEFAULT_TOL};
use genprobe::synth::SpuriousFixture;

fn main() -> genprobe::Result<()> {
    let domains = SpuriousFixture::default().build()?;
    let source = &domains[0];
    let (train, val) = source.train_val()?;

    let fit = probe::grid_search(&train, &val, &GridSpec::default(), DEFAULT_TOL)?;
    println!(
        "{}: chose C = {}, max_iter = {} (best of {} cells)",
        source.id(),
        fit.chosen.c_reg,
        fit.chosen.max_iter,
        fit.val_scores.len()
    );
    for d in &domains {
        let acc = probe::accuracy(&fit.model, &d.test_set()?)?;
        println!("  test on {:<7} {acc:.4}", d.id());
    }

    // the weight vector round-trips through JSON exactly
    let json = fit.model.to_json(Some("baseline"));
    let path = std::env::temp_dir().join("genprobe_example_model.json");
    std::fs::write(&path, &json).expect("write model");
    let (back, source_tag) = genprobe::LinearModel::load(&path)?;
    assert_eq!(back.weights, fit.model.weights);
    println!("saved {} ({source_tag:?})", path.display());
    Ok(())
}
