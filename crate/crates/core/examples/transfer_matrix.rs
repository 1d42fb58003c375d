//! Train-on-one, test-on-all accuracy matrices for two detectors, their summary
//! means and the exported CSV/JSON report.

use genprobe::probe::{GridSpec, DEFAULT_TOL};
use genprobe::synth::SpuriousFixture;
use genprobe::transfer::{self, Detector};

fn main() -> genprobe::Result<()> {
    let domains = SpuriousFixture::default().build()?;
    let refs: Vec<_> = domains.iter().collect();
    let grid = GridSpec::default();
    let out = tempfile::tempdir().expect("temp dir");

    for (detector, stem) in [(Detector::Baseline, "baseline"), (Detector::Residual, "residual")] {
        let m = transfer::build_matrix(&refs, &detector, &grid, DEFAULT_TOL)?;
        let s = transfer::summarize(&m, false)?;
        print!("{stem}\n{}", transfer::matrix_csv(&m));
        println!(
            "a_all {:.4}  gan {:.4}  diff {:.4}  gan->diff {:.4}  diff->gan {:.4}\n",
            s.a_all, s.a_gan, s.a_diff, s.a_gan_to_diff, s.a_diff_to_gan
        );
        let paths = transfer::export_report(&m, &s, out.path(), stem)?;
        assert!(paths.summary_json.is_file());
    }
    Ok(())
}
