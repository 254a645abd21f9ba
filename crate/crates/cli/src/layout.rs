//! File layout of an experiment's output directory.

use std::path::{Path, PathBuf};

use arob_core::attribution::{Group, Method};

#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn volume(&self, key: &str) -> PathBuf {
        self.data().join("volumes").join(format!("{key}.arob"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.data().join("cohort.json")
    }

    pub fn split(&self) -> PathBuf {
        self.data().join("split.json")
    }

    pub fn atlas_labels(&self) -> PathBuf {
        self.data().join("atlas.arob")
    }

    pub fn atlas_table(&self) -> PathBuf {
        self.data().join("regions.csv")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, run: usize) -> PathBuf {
        self.runs().join(format!("run_{run:02}"))
    }

    pub fn checkpoint(&self, run: usize) -> PathBuf {
        self.run_dir(run).join("model.ckpt")
    }

    pub fn run_record(&self, run: usize) -> PathBuf {
        self.run_dir(run).join("run.json")
    }

    pub fn run_metrics(&self, run: usize) -> PathBuf {
        self.run_dir(run).join("metrics.csv")
    }

    pub fn run_predictions(&self, run: usize) -> PathBuf {
        self.run_dir(run).join("predictions.csv")
    }

    pub fn runs_summary(&self) -> PathBuf {
        self.runs().join("summary.json")
    }

    pub fn runs_metrics(&self) -> PathBuf {
        self.runs().join("metrics.csv")
    }

    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }

    pub fn heatmap_dir(&self, run: usize, method: Method, group: Group) -> PathBuf {
        self.heatmaps()
            .join(format!("run_{run:02}"))
            .join(method.tag())
            .join(group.tag())
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn mean_map(&self, run: usize, method: Method, group: Group) -> PathBuf {
        self.eval().join("means").join(format!(
            "run_{run:02}_{}_{}.arob",
            method.tag(),
            group.tag()
        ))
    }

    pub fn region_table(&self, run: usize, method: Method) -> PathBuf {
        self.eval()
            .join("tables")
            .join(format!("run_{run:02}_{}.csv", method.tag()))
    }

    pub fn matrix(&self, method: Method, statistic: &str) -> PathBuf {
        self.eval()
            .join("matrices")
            .join(format!("{}_{statistic}.csv", method.tag()))
    }

    pub fn coherence(&self) -> PathBuf {
        self.eval().join("coherence.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report").join("report.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report").join("report.json")
    }
}

/// Parse `run_NN` (optionally followed by `_...`) into `NN`.
pub fn parse_run_name(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("run_")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}
