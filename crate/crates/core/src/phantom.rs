//! Synthetic brain-like cohort with a parcellation and a planted group effect.
//!
//! Geometry lives in normalized coordinates `(x, y, z) ∈ [-1, 1]³` where x is
//! the sagittal (left-right) axis, y coronal (posterior-anterior) and z axial
//! (inferior-superior). Every structure depends on `|x|` only, so the volume
//! is exactly mirror-symmetric across the sagittal mid-plane.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::RegionAtlas;
use crate::data::{AxisSemantics, ClassLabel, SubjectRecord, VolumeSample};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Stream};
use crate::tensor::Tensor;

pub const WHITE_MATTER: u32 = 1;
pub const HIPPOCAMPUS: u32 = 5;
pub const REGION_COUNT: u32 = 20;
const CORTEX_FIRST: u32 = 13;
const CORTEX_SECTORS: u32 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub subjects_per_class: usize,
    pub effect_region: u32,
    /// Fractional intensity reduction in the effect region at full severity.
    pub effect_size: f64,
    /// Standard deviation of per-timepoint Gaussian noise inside the brain.
    pub noise: f64,
    pub max_timepoints: usize,
    /// Per-patient severity is uniform on `[severity_min, 1]`.
    pub severity_min: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            shape: [36, 36, 36],
            subjects_per_class: 50,
            effect_region: HIPPOCAMPUS,
            effect_size: 0.3,
            noise: 0.05,
            max_timepoints: 3,
            severity_min: 0.5,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&e| e < 12) {
            return Err(Error::InvalidConfig(format!(
                "phantom extents {:?} must be at least 12",
                self.shape
            )));
        }
        if !(0.0..=1.0).contains(&self.effect_size) {
            return Err(Error::InvalidConfig(format!(
                "effect size {} outside [0, 1]",
                self.effect_size
            )));
        }
        if !(0.0..=1.0).contains(&self.severity_min) {
            return Err(Error::InvalidConfig("severity_min outside [0, 1]".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise level {} must be >= 0",
                self.noise
            )));
        }
        if self.subjects_per_class == 0 || self.max_timepoints == 0 {
            return Err(Error::InvalidConfig(
                "subjects_per_class and max_timepoints must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Mean severity factor applied to patients.
    pub fn mean_severity(&self) -> f64 {
        0.5 * (self.severity_min + 1.0)
    }
}

struct Blob {
    id: u32,
    centre: [f64; 3],
    radii: [f64; 3],
}

impl Blob {
    fn contains(&self, p: [f64; 3]) -> bool {
        // |x| mirrors the blob into both hemispheres
        let q = [p[0].abs(), p[1], p[2]];
        (0..3)
            .map(|a| ((q[a] - self.centre[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

const BRAIN_RADII: [f64; 3] = [0.82, 0.92, 0.82];
const CORTEX_RHO: f64 = 0.8;

fn blobs() -> Vec<Blob> {
    let b = |id, centre, radii| Blob { id, centre, radii };
    vec![
        b(4, [0.12, 0.05, 0.15], [0.08, 0.30, 0.10]),
        b(12, [0.0, -0.35, -0.32], [0.09, 0.08, 0.08]),
        b(5, [0.35, -0.10, -0.20], [0.11, 0.24, 0.11]),
        b(6, [0.33, 0.20, -0.30], [0.10, 0.10, 0.10]),
        b(7, [0.13, -0.10, 0.00], [0.11, 0.15, 0.12]),
        b(8, [0.20, 0.32, 0.20], [0.07, 0.16, 0.10]),
        b(9, [0.32, 0.15, 0.05], [0.07, 0.17, 0.12]),
        b(10, [0.22, 0.08, -0.05], [0.05, 0.08, 0.07]),
        b(11, [0.10, 0.28, -0.20], [0.07, 0.07, 0.06]),
        b(3, [0.0, -0.25, -0.55], [0.12, 0.14, 0.30]),
        b(2, [0.30, -0.62, -0.45], [0.32, 0.28, 0.25]),
    ]
}

pub fn region_names() -> BTreeMap<u32, String> {
    let fixed = [
        (1, "white-matter"),
        (2, "cerebellum"),
        (3, "brainstem"),
        (4, "lateral-ventricles"),
        (5, "hippocampus"),
        (6, "amygdala"),
        (7, "thalamus"),
        (8, "caudate"),
        (9, "putamen"),
        (10, "pallidum"),
        (11, "basal-forebrain"),
        (12, "fourth-ventricle"),
    ];
    let mut names: BTreeMap<u32, String> =
        fixed.into_iter().map(|(i, n)| (i, n.to_string())).collect();
    for s in 0..CORTEX_SECTORS {
        names.insert(CORTEX_FIRST + s, format!("cortex-sector-{}", s + 1));
    }
    names
}

/// Nominal tissue intensity per region.
fn base_intensity(id: u32) -> f64 {
    match id {
        1 => 0.85,
        2 => 0.70,
        3 => 0.75,
        4 => 0.15,
        5 => 0.55,
        6 => 0.58,
        7 => 0.70,
        8 => 0.62,
        9 => 0.66,
        10 => 0.76,
        11 => 0.60,
        12 => 0.20,
        _ => 0.60,
    }
}

fn coord(i: usize, n: usize) -> f64 {
    // exact sign symmetry: coord(i) == -coord(n - 1 - i)
    (2 * i + 1) as f64 / n as f64 - 1.0
}

fn label_at(p: [f64; 3], blobs: &[Blob]) -> u32 {
    let rho = (0..3)
        .map(|a| (p[a] / BRAIN_RADII[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    if rho > 1.0 {
        return 0;
    }
    if rho >= CORTEX_RHO {
        let angle = p[2].atan2(p[1]) + std::f64::consts::PI;
        let sector = ((angle / (2.0 * std::f64::consts::PI) * CORTEX_SECTORS as f64) as u32)
            .min(CORTEX_SECTORS - 1);
        return CORTEX_FIRST + sector;
    }
    blobs
        .iter()
        .find(|b| b.contains(p))
        .map_or(WHITE_MATTER, |b| b.id)
}

/// The phantom parcellation for a volume of the given shape.
pub fn phantom_atlas(shape: [usize; 3]) -> Result<RegionAtlas> {
    let blobs = blobs();
    let [d, h, w] = shape;
    let mut labels = Vec::with_capacity(d * h * w);
    for i in 0..d {
        for j in 0..h {
            for k in 0..w {
                labels.push(label_at([coord(i, d), coord(j, h), coord(k, w)], &blobs));
            }
        }
    }
    RegionAtlas::new(shape, labels, region_names())
}

/// `[1, 2, 1] / 4` along one axis with zero padding; mirror-symmetric in value order.
fn blur_axis(v: &[f64], shape: [usize; 3], axis: usize) -> Vec<f64> {
    let strides = [shape[1] * shape[2], shape[2], 1];
    let s = strides[axis];
    let n = shape[axis];
    let mut out = vec![0.0; v.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = (idx / s) % n;
        let left = if pos > 0 { v[idx - s] } else { 0.0 };
        let right = if pos + 1 < n { v[idx + s] } else { 0.0 };
        *o = ((left + right) + 2.0 * v[idx]) * 0.25;
    }
    out
}

struct SubjectDraw {
    region_gain: Vec<f64>,
    global_gain: f64,
    bias: [f64; 2],
    severity: f64,
    timepoints: usize,
}

fn draw_subject<R: Rng>(rng: &mut R, cfg: &PhantomConfig) -> SubjectDraw {
    SubjectDraw {
        region_gain: (0..=REGION_COUNT)
            .map(|_| rng.gen_range(0.96..1.04))
            .collect(),
        global_gain: rng.gen_range(0.95..1.05),
        bias: [rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)],
        severity: rng.gen_range(cfg.severity_min..=1.0),
        timepoints: rng.gen_range(1..=cfg.max_timepoints),
    }
}

/// Noise-free volume of one subject (flattened `[D, H, W]`).
fn clean_volume(
    atlas: &RegionAtlas,
    draw: &SubjectDraw,
    label: ClassLabel,
    cfg: &PhantomConfig,
) -> Vec<f64> {
    let shape = atlas.shape();
    let raw: Vec<f64> = atlas
        .labels()
        .iter()
        .map(|&l| {
            if l == 0 {
                0.0
            } else {
                base_intensity(l) * draw.region_gain[l as usize]
            }
        })
        .collect();
    let mut v = raw;
    for axis in 0..3 {
        v = blur_axis(&v, shape, axis);
    }
    let [_, h, w] = shape;
    let factor = match label {
        ClassLabel::Patient => 1.0 - cfg.effect_size * draw.severity,
        ClassLabel::Control => 1.0,
    };
    for (idx, x) in v.iter_mut().enumerate() {
        let (j, k) = ((idx / w) % h, idx % w);
        let field = 1.0 + draw.bias[0] * coord(j, h) + draw.bias[1] * coord(k, w);
        *x *= draw.global_gain * field;
        if atlas.labels()[idx] == cfg.effect_region {
            *x *= factor;
        }
    }
    v
}

fn subject_index(label: ClassLabel, i: usize) -> u64 {
    (label.index() as u64) << 32 | i as u64
}

pub fn subject_id(label: ClassLabel, i: usize) -> String {
    match label {
        ClassLabel::Control => format!("C{i:03}"),
        ClassLabel::Patient => format!("P{i:03}"),
    }
}

fn generate_subject(
    atlas: &RegionAtlas,
    cfg: &PhantomConfig,
    label: ClassLabel,
    i: usize,
) -> SubjectRecord {
    let mut rng = rng_for(cfg.seed, Stream::Subject, subject_index(label, i));
    let draw = draw_subject(&mut rng, cfg);
    let clean = clean_volume(atlas, &draw, label, cfg);
    let [d, h, w] = atlas.shape();
    let id = subject_id(label, i);
    let timepoints = (0..draw.timepoints)
        .map(|t| {
            let data = clean
                .iter()
                .zip(atlas.labels())
                .map(|(&x, &l)| {
                    let noise: f64 = if l == 0 {
                        0.0
                    } else {
                        rng.sample::<f64, _>(StandardNormal) * cfg.noise
                    };
                    (x + noise).clamp(0.0, 1.0) as f32
                })
                .collect();
            VolumeSample {
                volume: Tensor::new(vec![1, d, h, w], data).expect("phantom shape"),
                subject_id: id.clone(),
                timepoint: t,
                label,
                axes: AxisSemantics::default(),
            }
        })
        .collect();
    SubjectRecord {
        subject_id: id,
        label,
        timepoints,
    }
}

/// Controls first, then patients, each in index order.
pub fn generate_cohort(cfg: &PhantomConfig) -> Result<(Vec<SubjectRecord>, RegionAtlas)> {
    cfg.validate()?;
    let atlas = phantom_atlas(cfg.shape)?;
    atlas.region(cfg.effect_region)?;
    let jobs: Vec<(ClassLabel, usize)> = ClassLabel::ALL
        .iter()
        .flat_map(|&l| (0..cfg.subjects_per_class).map(move |i| (l, i)))
        .collect();
    let cohort = jobs
        .par_iter()
        .map(|&(label, i)| generate_subject(&atlas, cfg, label, i))
        .collect();
    Ok((cohort, atlas))
}

/// Per-region means of the noise-free control template (unit gains, no bias field).
pub fn template_region_means(cfg: &PhantomConfig) -> Result<BTreeMap<u32, f64>> {
    let atlas = phantom_atlas(cfg.shape)?;
    let draw = SubjectDraw {
        region_gain: vec![1.0; REGION_COUNT as usize + 1],
        global_gain: 1.0,
        bias: [0.0, 0.0],
        severity: 0.0,
        timepoints: 1,
    };
    let v = clean_volume(&atlas, &draw, ClassLabel::Control, cfg);
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&l, &x) in atlas.labels().iter().zip(&v) {
        if l != 0 {
            let e = sums.entry(l).or_default();
            e.0 += x;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect())
}
