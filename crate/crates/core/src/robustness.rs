//! Cross-repetition robustness: mean heatmaps, max scaling, pairwise L2
//! distances, top-k region intersections and the summary report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atlas::{region_gain, Metric, Provenance, RegionAtlas, RegionScoreTable};
use crate::attribution::{Group, Method};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::AccuracySummary;

/// Voxelwise arithmetic mean of signed heatmaps.
pub fn mean_heatmap(maps: &[&Tensor]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("heatmap set for mean".into()))?;
    let mut acc = vec![0.0f64; first.len()];
    for m in maps {
        if m.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                left: first.shape().to_vec(),
                right: m.shape().to_vec(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v as f64;
        }
    }
    let n = maps.len() as f64;
    Tensor::new(
        first.shape().to_vec(),
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    )
}

/// Divide by the largest absolute value; an all-zero map is returned as is.
pub fn max_scale(map: &Tensor) -> Tensor {
    let m = map.abs_max();
    if m == 0.0 {
        return map.clone();
    }
    map.map(|v| v / m)
}

/// Symmetric run-by-run matrix of one statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub runs: Vec<usize>,
    /// Row-major `runs.len()` squared entries.
    pub values: Vec<f64>,
}

impl PairwiseMatrix {
    fn from_fn(runs: Vec<usize>, diagonal: f64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = runs.len();
        let mut values = vec![diagonal; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        PairwiseMatrix { runs, values }
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Mean over the `n (n - 1) / 2` unordered pairs, diagonal excluded.
    pub fn pair_mean(&self) -> f64 {
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += self.get(i, j);
            }
        }
        total / (n * (n - 1) / 2) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run");
        for r in &self.runs {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        for (i, r) in self.runs.iter().enumerate() {
            out.push_str(&r.to_string());
            for j in 0..self.len() {
                out.push_str(&format!(",{:.9e}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

fn need_pairs(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Empty(format!(
            "pairwise statistics need at least 2 runs, got {n}"
        )));
    }
    Ok(())
}

pub fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Euclidean distances between per-run maps, plus their unordered-pair mean.
pub fn pairwise_l2(runs: &[usize], maps: &[Tensor]) -> Result<(PairwiseMatrix, f64)> {
    need_pairs(maps.len())?;
    if runs.len() != maps.len() {
        return Err(Error::ShapeMismatch {
            left: vec![runs.len()],
            right: vec![maps.len()],
        });
    }
    for m in &maps[1..] {
        if m.shape() != maps[0].shape() {
            return Err(Error::ShapeMismatch {
                left: maps[0].shape().to_vec(),
                right: m.shape().to_vec(),
            });
        }
    }
    let matrix = PairwiseMatrix::from_fn(runs.to_vec(), 0.0, |i, j| {
        l2_distance(&maps[i], &maps[j]).expect("shapes checked")
    });
    let mean = matrix.pair_mean();
    Ok((matrix, mean))
}

/// Percentage overlap of per-run top-k sets, ignoring order.
pub fn topk_intersection(runs: &[usize], lists: &[Vec<u32>]) -> Result<(PairwiseMatrix, f64)> {
    need_pairs(lists.len())?;
    let k = lists[0].len();
    if k == 0 {
        return Err(Error::Empty("top-k list".into()));
    }
    if let Some(l) = lists.iter().find(|l| l.len() != k) {
        return Err(Error::InvalidConfig(format!(
            "top-k lists differ in length: {k} vs {}",
            l.len()
        )));
    }
    if runs.len() != lists.len() {
        return Err(Error::ShapeMismatch {
            left: vec![runs.len()],
            right: vec![lists.len()],
        });
    }
    let matrix = PairwiseMatrix::from_fn(runs.to_vec(), 100.0, |i, j| {
        let shared = lists[i].iter().filter(|id| lists[j].contains(id)).count();
        100.0 * shared as f64 / k as f64
    });
    let mean = matrix.pair_mean();
    Ok((matrix, mean))
}

/// Group-mean heatmaps of every run and method.
#[derive(Clone, Debug, Default)]
pub struct RunSet {
    means: BTreeMap<(Method, Group, usize), Tensor>,
}

impl RunSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: Method, group: Group, run: usize, mean: Tensor) -> Result<()> {
        if let Some(other) = self.means.values().next() {
            if other.shape() != mean.shape() {
                return Err(Error::ShapeMismatch {
                    left: other.shape().to_vec(),
                    right: mean.shape().to_vec(),
                });
            }
        }
        self.means.insert((method, group, run), mean);
        Ok(())
    }

    pub fn mean(&self, method: Method, group: Group, run: usize) -> Option<&Tensor> {
        self.means.get(&(method, group, run))
    }

    /// Runs that have a mean map for `method` and `group`, ascending.
    pub fn runs(&self, method: Method, group: Group) -> Vec<usize> {
        self.means
            .keys()
            .filter(|(m, g, _)| *m == method && *g == group)
            .map(|k| k.2)
            .collect()
    }

    pub fn all_runs(&self) -> Vec<usize> {
        let mut runs: Vec<usize> = self.means.keys().map(|k| k.2).collect();
        runs.sort_unstable();
        runs.dedup();
        runs
    }

    /// Region scores of one run: sum and density on the TP mean, gain from
    /// the TP and TN means.
    pub fn region_table(
        &self,
        method: Method,
        run: usize,
        atlas: &RegionAtlas,
    ) -> Result<Option<RegionScoreTable>> {
        let Some(tp) = self.mean(method, Group::Tp, run) else {
            return Ok(None);
        };
        let gain = match self.mean(method, Group::Tn, run) {
            Some(tn) => Some(region_gain(tp, tn, atlas)?),
            None => None,
        };
        let prov = Provenance {
            run,
            method: method.tag().into(),
            group: Group::Tp.tag().into(),
        };
        RegionScoreTable::build(tp, atlas, gain.as_ref(), prov).map(Some)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub l2_tp: Option<f64>,
    pub l2_tn: Option<f64>,
    pub coherence_sum_pct: Option<f64>,
    pub coherence_density_pct: Option<f64>,
    pub coherence_gain_pct: Option<f64>,
    /// Statistics that could not be computed and why.
    pub gaps: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub method: Method,
    pub statistic: String,
    pub matrix: PairwiseMatrix,
}

/// How often one region made a run's top-k list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusHits {
    pub region: u32,
    pub name: String,
    pub metric: Metric,
    pub hits: BTreeMap<Method, usize>,
    pub runs: BTreeMap<Method, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub top_k: usize,
    pub accuracy: Option<AccuracySummary>,
    pub methods: Vec<MethodRow>,
    pub matrices: Vec<NamedMatrix>,
    pub focus: Option<FocusHits>,
}

pub const REPORT_CSV_HEADER: &str =
    "method,l2_tp,l2_tn,coherence_sum_pct,coherence_density_pct,coherence_gain_pct";

impl CoherenceReport {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method.tag(),
                cell(r.l2_tp),
                cell(r.l2_tn),
                cell(r.coherence_sum_pct),
                cell(r.coherence_density_pct),
                cell(r.coherence_gain_pct)
            ));
        }
        out
    }

    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.methods.iter().find(|r| r.method == method)
    }
}

fn l2_for(runset: &RunSet, method: Method, group: Group) -> Result<(PairwiseMatrix, f64)> {
    let runs = runset.runs(method, group);
    let maps: Vec<Tensor> = runs
        .iter()
        .map(|&r| max_scale(runset.mean(method, group, r).expect("listed run")))
        .collect();
    pairwise_l2(&runs, &maps)
}

/// Assemble the per-method robustness table. Statistics that cannot be
/// computed (too few runs, missing groups) are left empty and listed in `gaps`.
pub fn build_report(
    runset: &RunSet,
    atlas: &RegionAtlas,
    methods: &[Method],
    k: usize,
    accuracy: Option<AccuracySummary>,
    focus_region: Option<u32>,
) -> Result<CoherenceReport> {
    let mut rows = Vec::new();
    let mut matrices = Vec::new();
    let mut focus = match focus_region {
        Some(id) => Some(FocusHits {
            region: id,
            name: atlas.region(id)?.name.clone(),
            metric: Metric::Density,
            hits: BTreeMap::new(),
            runs: BTreeMap::new(),
        }),
        None => None,
    };
    for &method in methods {
        let mut row = MethodRow {
            method,
            l2_tp: None,
            l2_tn: None,
            coherence_sum_pct: None,
            coherence_density_pct: None,
            coherence_gain_pct: None,
            gaps: Vec::new(),
        };
        for group in Group::ALL {
            match l2_for(runset, method, group) {
                Ok((m, mean)) => {
                    match group {
                        Group::Tp => row.l2_tp = Some(mean),
                        Group::Tn => row.l2_tn = Some(mean),
                    }
                    matrices.push(NamedMatrix {
                        method,
                        statistic: format!("l2_{group}"),
                        matrix: m,
                    });
                }
                Err(e) => row.gaps.push(format!("l2_{group}: {e}")),
            }
        }
        let mut tables = Vec::new();
        for run in runset.all_runs() {
            if let Some(t) = runset.region_table(method, run, atlas)? {
                tables.push(t);
            }
        }
        for metric in Metric::ALL {
            // gain needs both groups, so a run may lack it while having sum/density
            let (runs, lists): (Vec<usize>, Vec<Vec<u32>>) = tables
                .iter()
                .map(|t| (t.provenance.run, t.top_k(metric, k).ids))
                .filter(|(_, ids)| !ids.is_empty())
                .unzip();
            let slot = match metric {
                Metric::Sum => &mut row.coherence_sum_pct,
                Metric::Density => &mut row.coherence_density_pct,
                Metric::Gain => &mut row.coherence_gain_pct,
            };
            match topk_intersection(&runs, &lists) {
                Ok((m, mean)) => {
                    *slot = Some(mean);
                    matrices.push(NamedMatrix {
                        method,
                        statistic: format!("top{k}_{metric}"),
                        matrix: m,
                    });
                }
                Err(e) => row.gaps.push(format!("coherence_{metric}: {e}")),
            }
            if let Some(f) = focus.as_mut().filter(|f| f.metric == metric) {
                let hits = lists.iter().filter(|l| l.contains(&f.region)).count();
                f.hits.insert(method, hits);
                f.runs.insert(method, lists.len());
            }
        }
        rows.push(row);
    }
    Ok(CoherenceReport {
        top_k: k,
        accuracy,
        methods: rows,
        matrices,
        focus,
    })
}
