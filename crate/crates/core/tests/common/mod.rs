#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use genprobe::synth::{self, DatasetFiles, SpuriousFixture, SplitSizes};
use genprobe::npy::Dtype;

pub fn genprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn genprobe_ok(args: &[&str]) {
    let out = genprobe(args);
    assert!(
        out.status.success(),
        "genprobe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A four-domain spurious-coordinate fixture small enough for CLI runs.
pub fn small_spurious() -> SpuriousFixture {
    SpuriousFixture {
        dim: 12,
        sizes: SplitSizes {
            train: 200,
            val: 60,
            test: 200,
        },
        ..Default::default()
    }
}

pub fn write_spurious(dir: &Path, fixture: &SpuriousFixture) -> PathBuf {
    let domains = fixture.build().unwrap();
    synth::write_dataset(
        dir,
        &DatasetFiles {
            name: "spurious",
            domains: &domains,
            ..Default::default()
        },
        Dtype::F64,
    )
    .unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
