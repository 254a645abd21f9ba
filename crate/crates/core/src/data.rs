//! Samples, subjects and subject-wise dataset splits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{container, nifti};
use crate::seed::{rng_for, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Control,
    Patient,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Control, ClassLabel::Patient];

    /// Logit index: control = 0, patient = 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Control => 0,
            ClassLabel::Patient => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Control),
            1 => Some(ClassLabel::Patient),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::Control => "control",
            ClassLabel::Patient => "patient",
        })
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(ClassLabel::Control),
            "patient" => Ok(ClassLabel::Patient),
            other => Err(Error::InvalidConfig(format!(
                "unknown class label {other:?}"
            ))),
        }
    }
}

/// Which axes of a `[C, D, H, W]` volume carry which anatomical direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSemantics {
    pub sagittal: usize,
    pub coronal: usize,
    pub axial: usize,
}

impl Default for AxisSemantics {
    fn default() -> Self {
        AxisSemantics {
            sagittal: 1,
            coronal: 2,
            axial: 3,
        }
    }
}

/// One scan: a `[1, D, H, W]` volume with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub volume: Tensor,
    pub subject_id: String,
    pub timepoint: usize,
    pub label: ClassLabel,
    pub axes: AxisSemantics,
}

impl VolumeSample {
    pub fn spatial_shape(&self) -> [usize; 3] {
        let s = self.volume.shape();
        [s[1], s[2], s[3]]
    }

    /// `<subject>_t<timepoint>`
    pub fn key(&self) -> String {
        format!("{}_t{}", self.subject_id, self.timepoint)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: ClassLabel,
    pub timepoints: Vec<VolumeSample>,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub train: Vec<VolumeSample>,
    pub validation: Vec<VolumeSample>,
    pub test: Vec<VolumeSample>,
}

impl DatasetSplit {
    /// Build a split from explicit id sets, expanding every subject's timepoints.
    pub fn from_ids(
        cohort: &[SubjectRecord],
        train_ids: BTreeSet<String>,
        val_ids: BTreeSet<String>,
        test_ids: BTreeSet<String>,
    ) -> Result<Self> {
        if !train_ids.is_disjoint(&val_ids)
            || !train_ids.is_disjoint(&test_ids)
            || !val_ids.is_disjoint(&test_ids)
        {
            return Err(Error::InvalidConfig("split subject sets overlap".into()));
        }
        let mut split = DatasetSplit {
            train_ids,
            val_ids,
            test_ids,
            ..Default::default()
        };
        for subject in cohort {
            let dst = if split.train_ids.contains(&subject.subject_id) {
                &mut split.train
            } else if split.val_ids.contains(&subject.subject_id) {
                &mut split.validation
            } else if split.test_ids.contains(&subject.subject_id) {
                &mut split.test
            } else {
                continue;
            };
            dst.extend(subject.timepoints.iter().cloned());
        }
        Ok(split)
    }
}

/// Assign whole subjects to test, validation and train sets.
///
/// Per class, subjects are shuffled with `seed`; the first `test_per_class`
/// go to test, the next `val_per_class` to validation, the rest to train.
pub fn split_subjectwise(
    cohort: &[SubjectRecord],
    test_per_class: usize,
    val_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut rng = rng_for(seed, Stream::Split, 0);
    let (mut train, mut val, mut test) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for class in ClassLabel::ALL {
        let mut ids: Vec<&str> = cohort
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.subject_id.as_str())
            .collect();
        ids.sort_unstable();
        let needed = test_per_class + val_per_class + 1;
        if ids.len() < needed {
            return Err(Error::InsufficientSubjects {
                class: class.to_string(),
                needed,
                available: ids.len(),
            });
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            let set = if i < test_per_class {
                &mut test
            } else if i < test_per_class + val_per_class {
                &mut val
            } else {
                &mut train
            };
            set.insert(id.to_string());
        }
    }
    DatasetSplit::from_ids(cohort, train, val, test)
}

/// Min-max scale to `[0, 1]`; a constant volume maps to zeros.
pub fn min_max_scale(t: &Tensor) -> Tensor {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(hi > lo) {
        return Tensor::zeros(t.shape());
    }
    let range = (hi - lo) as f64;
    t.map(|x| ((x - lo) as f64 / range) as f32)
}

/// Read an external volume (container or NIfTI-1) as an unlabeled sample.
///
/// The label defaults to control; callers relabel from their own metadata.
pub fn ingest_volume(path: &Path, expected_shape: [usize; 3]) -> Result<VolumeSample> {
    let raw = if nifti::looks_like_nifti(path)? {
        nifti::read_nifti(path)?.to_f32()
    } else {
        container::read_container(path)?.0.to_f32()
    };
    let shape = raw.shape().to_vec();
    let spatial: Vec<usize> = match shape.len() {
        3 => shape.clone(),
        4 if shape[0] == 1 => shape[1..].to_vec(),
        _ => {
            return Err(Error::format(
                path,
                format!("expected a 3D volume, found shape {shape:?}"),
            ))
        }
    };
    if spatial != expected_shape {
        return Err(Error::ShapeMismatch {
            left: spatial,
            right: expected_shape.to_vec(),
        });
    }
    let volume = min_max_scale(&raw).reshape(&[
        1,
        expected_shape[0],
        expected_shape[1],
        expected_shape[2],
    ])?;
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".nii").to_string())
        .unwrap_or_default();
    Ok(VolumeSample {
        volume,
        subject_id,
        timepoint: 0,
        label: ClassLabel::Control,
        axes: AxisSemantics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: ClassLabel, timepoints: usize) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.to_string(),
            label,
            timepoints: (0..timepoints)
                .map(|t| VolumeSample {
                    volume: Tensor::zeros(&[1, 2, 2, 2]),
                    subject_id: id.to_string(),
                    timepoint: t,
                    label,
                    axes: AxisSemantics::default(),
                })
                .collect(),
        }
    }

    fn cohort() -> Vec<SubjectRecord> {
        let mut c = Vec::new();
        for i in 0..50 {
            c.push(record(&format!("C{i:03}"), ClassLabel::Control, 1 + i % 3));
            c.push(record(
                &format!("P{i:03}"),
                ClassLabel::Patient,
                1 + (i + 1) % 3,
            ));
        }
        c
    }

    #[test]
    fn split_counts_and_disjointness() {
        let cohort = cohort();
        let split = split_subjectwise(&cohort, 10, 5, 3).unwrap();
        for class in ClassLabel::ALL {
            let prefix = if class == ClassLabel::Control {
                "C"
            } else {
                "P"
            };
            let count = |s: &BTreeSet<String>| s.iter().filter(|id| id.starts_with(prefix)).count();
            assert_eq!(count(&split.test_ids), 10);
            assert_eq!(count(&split.val_ids), 5);
            assert_eq!(count(&split.train_ids), 35);
        }
        for id in split
            .train_ids
            .iter()
            .chain(&split.val_ids)
            .chain(&split.test_ids)
        {
            let memberships = [&split.train_ids, &split.val_ids, &split.test_ids]
                .iter()
                .filter(|s| s.contains(id))
                .count();
            assert_eq!(memberships, 1, "{id}");
        }
        // every timepoint lands with its subject
        for subject in &cohort {
            let in_test = split
                .test
                .iter()
                .filter(|s| s.subject_id == subject.subject_id)
                .count();
            if split.test_ids.contains(&subject.subject_id) {
                assert_eq!(in_test, subject.timepoints.len());
            } else {
                assert_eq!(in_test, 0);
            }
        }
        let again = split_subjectwise(&cohort, 10, 5, 3).unwrap();
        assert_eq!(again.test_ids, split.test_ids);
    }

    #[test]
    fn insufficient_subjects_reports_counts() {
        let cohort = cohort();
        match split_subjectwise(&cohort, 40, 10, 0) {
            Err(Error::InsufficientSubjects {
                needed, available, ..
            }) => {
                assert_eq!((needed, available), (51, 50));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_volume_scales_to_zero() {
        let t = Tensor::full(&[2, 2], 7.0);
        assert!(min_max_scale(&t).data().iter().all(|&x| x == 0.0));
        let t = Tensor::new(vec![3], vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(min_max_scale(&t).data(), &[0.0, 1.0, 0.5]);
    }
}
