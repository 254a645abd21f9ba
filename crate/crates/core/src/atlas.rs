//! Region atlases and per-region heatmap scores (sum, density, gain).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container::VolumeData;
use crate::io::{container, nifti};
use crate::tensor::Tensor;

/// Background label, excluded from every metric.
pub const BACKGROUND: u32 = 0;

/// Denominator floor below which a gain is left undefined.
pub const GAIN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub name: String,
    pub voxels: usize,
}

/// Integer label volume plus its region table.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionAtlas {
    shape: [usize; 3],
    labels: Vec<u32>,
    regions: BTreeMap<u32, RegionInfo>,
}

impl RegionAtlas {
    /// Every nonzero label must be named in `names`; voxel counts are recomputed.
    pub fn new(shape: [usize; 3], labels: Vec<u32>, names: BTreeMap<u32, String>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if labels.len() != n {
            return Err(Error::DataLength {
                shape: shape.to_vec(),
                len: labels.len(),
                expected: n,
            });
        }
        let mut regions: BTreeMap<u32, RegionInfo> = names
            .into_iter()
            .filter(|(id, _)| *id != BACKGROUND)
            .map(|(id, name)| (id, RegionInfo { name, voxels: 0 }))
            .collect();
        for &l in &labels {
            if l == BACKGROUND {
                continue;
            }
            regions.get_mut(&l).ok_or(Error::UnknownRegion(l))?.voxels += 1;
        }
        Ok(RegionAtlas {
            shape,
            labels,
            regions,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn regions(&self) -> &BTreeMap<u32, RegionInfo> {
        &self.regions
    }

    pub fn region(&self, id: u32) -> Result<&RegionInfo> {
        self.regions.get(&id).ok_or(Error::UnknownRegion(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.regions.keys().copied()
    }

    pub fn label_volume(&self) -> VolumeData {
        VolumeData::I32 {
            shape: self.shape.to_vec(),
            data: self.labels.iter().map(|&l| l as i32).collect(),
        }
    }

    /// `id,name` per line, ascending id.
    pub fn table_text(&self) -> String {
        self.regions
            .iter()
            .map(|(id, r)| format!("{id},{}\n", r.name))
            .collect()
    }

    /// Load a label volume (container or NIfTI-1) and an `id,name` table.
    pub fn load(labels_path: &Path, table_path: &Path) -> Result<Self> {
        let data = if nifti::looks_like_nifti(labels_path)? {
            nifti::read_nifti(labels_path)?
        } else {
            container::read_container(labels_path)?.0
        };
        let shape: [usize; 3] = match data.shape() {
            [d, h, w] | [1, d, h, w] => [*d, *h, *w],
            other => {
                return Err(Error::format(
                    labels_path,
                    format!("label volume must be rank 3, got {other:?}"),
                ))
            }
        };
        let labels = match &data {
            VolumeData::I32 { data, .. } => data
                .iter()
                .map(|&v| {
                    u32::try_from(v)
                        .map_err(|_| Error::format(labels_path, format!("negative label {v}")))
                })
                .collect::<Result<Vec<_>>>()?,
            VolumeData::F32(t) => t
                .data()
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as u32)
                    } else {
                        Err(Error::format(labels_path, format!("non-integer label {v}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let text = std::fs::read_to_string(table_path).map_err(|e| Error::io(table_path, e))?;
        RegionAtlas::new(shape, labels, parse_table(table_path, &text)?)
    }
}

pub fn parse_table(path: &Path, text: &str) -> Result<BTreeMap<u32, String>> {
    let mut names = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line.split_once(',').ok_or_else(|| {
            Error::format(path, format!("line {}: expected `id,name`", lineno + 1))
        })?;
        let id: u32 = id.trim().parse().map_err(|_| {
            Error::format(path, format!("line {}: bad region id {id:?}", lineno + 1))
        })?;
        if names.insert(id, name.trim().to_string()).is_some() {
            return Err(Error::format(
                path,
                format!("line {}: duplicate region id {id}", lineno + 1),
            ));
        }
    }
    Ok(names)
}

/// Per-region scores keyed by region id.
pub type Scores = BTreeMap<u32, f64>;

fn check_shape(heatmap: &Tensor, atlas: &RegionAtlas) -> Result<()> {
    let spatial = match heatmap.shape() {
        [d, h, w] | [1, d, h, w] => [*d, *h, *w],
        _ => [0, 0, 0],
    };
    if spatial != atlas.shape {
        return Err(Error::ShapeMismatch {
            left: heatmap.shape().to_vec(),
            right: atlas.shape.to_vec(),
        });
    }
    Ok(())
}

/// Sum of absolute attribution per region.
pub fn region_sum(heatmap: &Tensor, atlas: &RegionAtlas) -> Result<Scores> {
    check_shape(heatmap, atlas)?;
    let mut scores: Scores = atlas.ids().map(|id| (id, 0.0)).collect();
    for (&l, &h) in atlas.labels.iter().zip(heatmap.data()) {
        if l != BACKGROUND {
            *scores.get_mut(&l).expect("atlas labels are validated") += (h as f64).abs();
        }
    }
    Ok(scores)
}

/// Region sums divided by voxel counts; empty regions are skipped.
pub fn region_density(heatmap: &Tensor, atlas: &RegionAtlas) -> Result<Scores> {
    Ok(density_from_sums(&region_sum(heatmap, atlas)?, atlas))
}

pub fn density_from_sums(sums: &Scores, atlas: &RegionAtlas) -> Scores {
    sums.iter()
        .filter_map(|(&id, &s)| {
            let n = atlas.regions[&id].voxels;
            if n == 0 {
                log::warn!("region {id} has no voxels, excluded from density");
                None
            } else {
                Some((id, s / n as f64))
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GainScores {
    pub gains: Scores,
    /// Regions whose control sum fell below [`GAIN_FLOOR`].
    pub undefined: Vec<u32>,
}

/// Ratio of patient to control region sums, both from group-mean heatmaps.
pub fn region_gain(
    patient_mean: &Tensor,
    control_mean: &Tensor,
    atlas: &RegionAtlas,
) -> Result<GainScores> {
    if patient_mean.shape() != control_mean.shape() {
        return Err(Error::ShapeMismatch {
            left: patient_mean.shape().to_vec(),
            right: control_mean.shape().to_vec(),
        });
    }
    let p = region_sum(patient_mean, atlas)?;
    let c = region_sum(control_mean, atlas)?;
    let mut out = GainScores::default();
    for (id, &den) in &c {
        if den < GAIN_FLOOR {
            out.undefined.push(*id);
        } else {
            out.gains.insert(*id, p[id] / den);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopK {
    pub ids: Vec<u32>,
    /// Fewer than `k` regions were available.
    pub short: bool,
}

/// The `k` highest-scoring region ids; ties go to the lower id.
pub fn top_k(scores: &Scores, k: usize) -> TopK {
    let ids = ranking(scores);
    let short = ids.len() < k;
    TopK {
        ids: ids.into_iter().take(k).collect(),
        short,
    }
}

/// All region ids ordered by descending score, ties by ascending id.
pub fn ranking(scores: &Scores) -> Vec<u32> {
    let mut ids: Vec<(u32, f64)> = scores.iter().map(|(&id, &s)| (id, s)).collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.into_iter().map(|(id, _)| id).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Sum,
    Density,
    Gain,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Sum, Metric::Density, Metric::Gain];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sum => "sum",
            Metric::Density => "density",
            Metric::Gain => "gain",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub id: u32,
    pub name: String,
    pub voxels: usize,
    pub sum: f64,
    pub density: Option<f64>,
    pub gain: Option<f64>,
    /// 1-based ranks; `None` where the score is undefined.
    pub rank_sum: usize,
    pub rank_density: Option<usize>,
    pub rank_gain: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run: usize,
    pub method: String,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScoreTable {
    pub provenance: Provenance,
    pub rows: Vec<RegionRow>,
}

fn ranks(scores: &Scores) -> BTreeMap<u32, usize> {
    ranking(scores)
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i + 1))
        .collect()
}

impl RegionScoreTable {
    pub fn build(
        heatmap: &Tensor,
        atlas: &RegionAtlas,
        gain: Option<&GainScores>,
        provenance: Provenance,
    ) -> Result<Self> {
        let sums = region_sum(heatmap, atlas)?;
        let dens = density_from_sums(&sums, atlas);
        let (rs, rd) = (ranks(&sums), ranks(&dens));
        let rg = gain.map(|g| ranks(&g.gains)).unwrap_or_default();
        let rows = atlas
            .regions
            .iter()
            .map(|(&id, info)| RegionRow {
                id,
                name: info.name.clone(),
                voxels: info.voxels,
                sum: sums[&id],
                density: dens.get(&id).copied(),
                gain: gain.and_then(|g| g.gains.get(&id).copied()),
                rank_sum: rs[&id],
                rank_density: rd.get(&id).copied(),
                rank_gain: rg.get(&id).copied(),
            })
            .collect();
        Ok(RegionScoreTable { provenance, rows })
    }

    pub fn scores(&self, metric: Metric) -> Scores {
        self.rows
            .iter()
            .filter_map(|r| {
                let v = match metric {
                    Metric::Sum => Some(r.sum),
                    Metric::Density => r.density,
                    Metric::Gain => r.gain,
                };
                v.map(|v| (r.id, v))
            })
            .collect()
    }

    pub fn top_k(&self, metric: Metric, k: usize) -> TopK {
        top_k(&self.scores(metric), k)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let optr = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out =
            String::from("id,name,voxels,sum,density,gain,rank_sum,rank_density,rank_gain\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.9e},{},{},{},{},{}\n",
                r.id,
                r.name,
                r.voxels,
                r.sum,
                opt(r.density),
                opt(r.gain),
                r.rank_sum,
                optr(r.rank_density),
                optr(r.rank_gain)
            ));
        }
        out
    }
}
