use std::collections::BTreeMap;

use arob_core::atlas::{ranking, region_density, region_gain, region_sum, top_k, RegionAtlas};
use arob_core::attribution::{Group, Method};
use arob_core::robustness::{
    build_report, l2_distance, max_scale, mean_heatmap, pairwise_l2, topk_intersection, RunSet,
};
use arob_core::Tensor;
use proptest::prelude::*;

fn atlas_from(labels: Vec<u32>, regions: u32) -> RegionAtlas {
    let names: BTreeMap<u32, String> = (1..=regions).map(|i| (i, format!("r{i}"))).collect();
    RegionAtlas::new([4, 4, 4], labels, names).unwrap()
}

fn labels_and_map() -> impl Strategy<Value = (Vec<u32>, Vec<f32>)> {
    (
        prop::collection::vec(0u32..6, 64),
        prop::collection::vec(-10.0f32..10.0, 64),
    )
}

proptest! {
    #[test]
    fn region_sums_partition_the_absolute_mass((labels, values) in labels_and_map()) {
        let atlas = atlas_from(labels.clone(), 5);
        let map = Tensor::new(vec![4, 4, 4], values.clone()).unwrap();
        let sums = region_sum(&map, &atlas).unwrap();
        let total: f64 = sums.values().sum();
        let inside: f64 = values.iter().zip(&labels).filter(|(_, &l)| l != 0).map(|(v, _)| v.abs() as f64).sum();
        prop_assert!((total - inside).abs() <= 1e-9 * inside.max(1.0));
    }

    #[test]
    fn rankings_are_invariant_to_positive_scaling((labels, values) in labels_and_map(), factor in 0.01f32..100.0) {
        let atlas = atlas_from(labels, 5);
        let map = Tensor::new(vec![4, 4, 4], values).unwrap();
        let scaled = map.scale(factor);
        let a = region_density(&map, &atlas).unwrap();
        let b = region_density(&scaled, &atlas).unwrap();
        prop_assert_eq!(ranking(&a), ranking(&b));
        let ga = region_gain(&map, &map.map(|v| v.abs() + 1.0), &atlas).unwrap();
        let gb = region_gain(&scaled, &map.map(|v| v.abs() + 1.0).scale(factor), &atlas).unwrap();
        for (id, g) in &ga.gains {
            prop_assert!((g - gb.gains[id]).abs() <= 1e-4 * g.abs().max(1.0));
        }
    }

    #[test]
    fn l2_satisfies_metric_axioms(a in prop::collection::vec(-5.0f32..5.0, 27), b in prop::collection::vec(-5.0f32..5.0, 27)) {
        let a = Tensor::new(vec![3, 3, 3], a).unwrap();
        let b = Tensor::new(vec![3, 3, 3], b).unwrap();
        prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(l2_distance(&a, &b).unwrap(), l2_distance(&b, &a).unwrap());
    }
}

#[test]
fn density_divides_by_voxel_count() {
    let mut labels = vec![0u32; 64];
    labels[..4].fill(1);
    labels[4..12].fill(2);
    let atlas = atlas_from(labels, 2);
    let map = Tensor::from_fn(&[4, 4, 4], |i| if i < 4 { -2.0 } else { 1.0 });
    let sums = region_sum(&map, &atlas).unwrap();
    assert_eq!(sums[&1], 8.0);
    assert_eq!(sums[&2], 8.0);
    let density = region_density(&map, &atlas).unwrap();
    assert_eq!(density[&1], 2.0);
    assert_eq!(density[&2], 1.0);
    assert_eq!(top_k(&density, 1).ids, vec![1]);
}

#[test]
fn gain_is_patient_over_control_and_flags_empty_controls() {
    let mut labels = vec![0u32; 64];
    labels[..8].fill(1);
    labels[8..16].fill(2);
    let atlas = atlas_from(labels, 2);
    let patient = Tensor::from_fn(&[4, 4, 4], |i| if i < 8 { 3.0 } else { 1.0 });
    let control = Tensor::from_fn(&[4, 4, 4], |i| if i < 8 { 1.0 } else { 0.0 });
    let g = region_gain(&patient, &control, &atlas).unwrap();
    assert_eq!(g.gains[&1], 3.0);
    assert_eq!(g.undefined, vec![2]);
}

#[test]
fn ties_are_broken_by_ascending_region_id() {
    let scores: BTreeMap<u32, f64> = [(4, 1.0), (2, 1.0), (9, 3.0), (1, 0.5)]
        .into_iter()
        .collect();
    assert_eq!(ranking(&scores), vec![9, 2, 4, 1]);
    let t = top_k(&scores, 6);
    assert!(t.short);
    assert_eq!(t.ids.len(), 4);
}

#[test]
fn identical_runs_are_perfectly_coherent() {
    let lists = vec![vec![1, 2, 3], vec![1, 2, 3], vec![3, 2, 1]];
    let (m, mean) = topk_intersection(&[0, 1, 2], &lists).unwrap();
    assert_eq!(mean, 100.0);
    assert_eq!(m.get(0, 2), 100.0);
    let disjoint = vec![vec![1, 2], vec![3, 4]];
    assert_eq!(topk_intersection(&[0, 1], &disjoint).unwrap().1, 0.0);
    assert!(topk_intersection(&[0, 1], &[vec![1], vec![1, 2]]).is_err());
}

#[test]
fn pairwise_l2_averages_unordered_pairs() {
    let maps: Vec<Tensor> = [0.0f32, 1.0, 3.0]
        .iter()
        .map(|&v| Tensor::full(&[1, 1, 4], v))
        .collect();
    let (m, mean) = pairwise_l2(&[0, 1, 2], &maps).unwrap();
    // distances 2, 6, 4
    assert_eq!(m.get(0, 1), 2.0);
    assert_eq!(m.get(1, 0), 2.0);
    assert!((mean - 4.0).abs() < 1e-12);
    assert!(pairwise_l2(&[0], &maps[..1]).is_err());
}

#[test]
fn mean_and_max_scaling() {
    let a = Tensor::new(vec![2], vec![1.0, -4.0]).unwrap();
    let b = Tensor::new(vec![2], vec![3.0, 0.0]).unwrap();
    let m = mean_heatmap(&[&a, &b]).unwrap();
    assert_eq!(m.data(), &[2.0, -2.0]);
    assert_eq!(max_scale(&a).data(), &[0.25, -1.0]);
    assert_eq!(max_scale(&Tensor::zeros(&[2])).data(), &[0.0, 0.0]);
    assert!(mean_heatmap(&[]).is_err());
}

#[test]
fn runs_without_controls_are_left_out_of_gain_only() {
    let labels: Vec<u32> = (0..64).map(|i| 1 + (i % 4) as u32).collect();
    let atlas = atlas_from(labels, 4);
    let map = |v: f32| Tensor::full(&[4, 4, 4], v);
    let mut set = RunSet::new();
    for run in 0..3 {
        set.insert(Method::Lrp, Group::Tp, run, map(1.0 + run as f32))
            .unwrap();
    }
    for run in 0..2 {
        set.insert(Method::Lrp, Group::Tn, run, map(0.5)).unwrap();
    }
    let report = build_report(&set, &atlas, &[Method::Lrp], 2, None, Some(1)).unwrap();
    let row = report.row(Method::Lrp).unwrap();
    assert!(row.gaps.is_empty(), "{:?}", row.gaps);
    assert_eq!(row.coherence_gain_pct, Some(100.0));
    assert_eq!(row.coherence_sum_pct, Some(100.0));
    let gain = report
        .matrices
        .iter()
        .find(|m| m.statistic == "top2_gain")
        .unwrap();
    assert_eq!(gain.matrix.runs, vec![0, 1]);
    let sum = report
        .matrices
        .iter()
        .find(|m| m.statistic == "top2_sum")
        .unwrap();
    assert_eq!(sum.matrix.runs, vec![0, 1, 2]);
    let tn = report
        .matrices
        .iter()
        .find(|m| m.statistic == "l2_tn")
        .unwrap();
    assert_eq!(tn.matrix.runs, vec![0, 1]);
}
