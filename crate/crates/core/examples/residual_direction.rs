//! The residual direction: difference of the unit-normalized class means. A single
//! scalar feature, `e . resid`, is often enough to separate real from generated.

use genprobe::probe::{self, GridSpec, DEFAULT_TOL};
use genprobe::residual;
use genprobe::synth::SpuriousFixture;
use genprobe::Cell;

fn main() -> genprobe::Result<()> {
    let domains = SpuriousFixture::default().build()?;
    let grid = GridSpec::default();
    for d in &domains {
        let fake = d.cell(Cell::FakeTrain).expect("fake cell");
        let real = d.cell(Cell::RealTrain).expect("real cell");
        let dir = residual::compute_residual(fake, real)?;
        let (train, val) = d.train_val()?;
        let clf = residual::fit_residual_classifier(&dir, &train, &val, &grid, DEFAULT_TOL)?;
        let full = probe::grid_search(&train, &val, &grid, DEFAULT_TOL)?.model;
        let test = d.test_set()?;
        println!(
            "{:<7} residual {:.4}  full probe {:.4}  real side: {}",
            d.id(),
            clf.accuracy(&test)?,
            probe::accuracy(&full, &test)?,
            if clf.real_above { "above 0" } else { "below 0" }
        );
    }
    Ok(())
}
