#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A 12-voxel experiment small enough to run every stage in seconds.
pub fn tiny_config(out: &Path) -> String {
    format!(
        r#"output_dir = "{}"

[phantom]
shape = [12, 12, 12]
subjects_per_class = 8
seed = 3

[split]
test_per_class = 2
val_per_class = 2

[network]
input_shape = [12, 12, 12]
blocks = [{{ filters = 3, pool = 2 }}, {{ filters = 4, pool = 3 }}]
dense_hidden = 8

[train]
max_epochs = 2
repetitions = 2
lr = 0.003

[attribution.occlusion]
patch = 4
stride = 4

[evaluation]
top_k = 5
"#,
        out.display()
    )
}

pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, tiny_config(&dir.join("out"))).unwrap();
    path
}

pub fn arob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arob"))
        .args(args)
        .env("AROB_THREADS", "2")
        .output()
        .unwrap()
}

pub fn arob_ok(args: &[&str]) -> String {
    let out = arob(args);
    assert!(
        out.status.success(),
        "arob {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn count_files(dir: &Path, ext: &str) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .map(|p| {
            if p.is_dir() {
                count_files(&p, ext)
            } else {
                usize::from(p.extension().is_some_and(|x| x == ext))
            }
        })
        .sum()
}
