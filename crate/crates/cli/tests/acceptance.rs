//! Acceptance checks, one PASS/FAIL line per criterion.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use arob_cli::config::ExperimentConfig;
use arob_cli::pipeline;
use arob_core::atlas::{region_sum, RegionAtlas};
use arob_core::attribution::{
    gradient_times_input, guided_backprop, lrp, occlusion, LrpConfig, Method, OcclusionConfig,
};
use arob_core::io::checkpoint::{self, CheckpointMeta};
use arob_core::io::container::{self, Sidecar, VolumeData};
use arob_core::io::nifti;
use arob_core::nn::{
    softmax_cross_entropy, BlockSpec, Layer, Mode, Network, NetworkSpec, ReluRule,
};
use arob_core::phantom::{generate_cohort, PhantomConfig, HIPPOCAMPUS};
use arob_core::robustness::{pairwise_l2, topk_intersection};
use arob_core::Tensor;
use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn batch_of(x: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.clone().reshape(&shape).unwrap()
}

fn dense(out: usize, inputs: usize, weight: Vec<f32>, bias: Vec<f32>) -> Layer {
    Layer::Dense {
        weight: Tensor::new(vec![out, inputs], weight).unwrap(),
        bias: Tensor::new(vec![out], bias).unwrap(),
    }
}

fn c1_gradients() -> Check {
    let start = Instant::now();
    let spec = NetworkSpec {
        input_shape: [6, 6, 6],
        blocks: vec![
            BlockSpec {
                filters: 4,
                pool: 2,
            },
            BlockSpec {
                filters: 6,
                pool: 3,
            },
        ],
        dense_hidden: 12,
        dropout: 0.0,
        ..Default::default()
    };
    let mut net = Network::<f64>::build(&spec, 17).map_err(|e| e.to_string())?;
    // batchnorm cancels the scale; larger weights keep the fixed 1e-3 step
    // from crossing ReLU and pooling switch points
    for layer in net.layers_mut() {
        if let Layer::Conv3d { weight, .. } = layer {
            *weight = weight.scale(10.0);
        }
    }
    let params = net.param_count();
    ensure!(params <= 5000, "{params} parameters");
    let mut r = rng(1);
    let x = Tensor::<f64>::from_fn(&[4, 1, 6, 6, 6], |_| r.gen_range(0.0..1.0));
    let targets = [0, 1, 0, 1];
    let loss = |n: &Network<f64>| {
        let (logits, _) = n.forward(&x, Mode::Train, &mut StepRng::new(0, 0)).unwrap();
        softmax_cross_entropy(&logits, &targets).unwrap().0
    };
    let (logits, trace) = net
        .forward(&x, Mode::Train, &mut StepRng::new(0, 0))
        .unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &targets).unwrap();
    let grads = net.backward_params(&trace, &g).map_err(|e| e.to_string())?;
    let h = 1e-3;
    let (mut good, mut total) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    let names = net.param_names();
    let mut offenders = std::collections::BTreeMap::<&str, usize>::new();
    for p in 0..grads.len() {
        for k in 0..grads[p].len() {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads[p].data()[k];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            // both essentially zero counts as a match
            let ok = rel < 1e-3 || (fd - an).abs() < 1e-9;
            good += usize::from(ok);
            total += 1;
            if ok {
                continue;
            }
            worst = worst.max(rel);
            *offenders.entry(names[p].as_str()).or_default() += 1;
        }
    }
    let frac = good as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        frac >= 0.999,
        "{good}/{total} parameters within 1e-3 (worst {worst:.2e}, by tensor {offenders:?})"
    );
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "{good}/{total} parameters within 1e-3 relative error, {secs:.1}s"
    ))
}

fn c2_lrp_conservation() -> Check {
    let cfg = PhantomConfig {
        subjects_per_class: 10,
        seed: 5,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort(&cfg).map_err(|e| e.to_string())?;
    let net: Network = Network::build(&NetworkSpec::default(), 23).map_err(|e| e.to_string())?;
    let samples: Vec<_> = cohort
        .iter()
        .flat_map(|s| s.timepoints.first())
        .take(20)
        .collect();
    ensure!(samples.len() == 20, "only {} samples", samples.len());
    let lrp_cfg = LrpConfig {
        epsilon: 1e-6,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let target = i % 2;
        let logit = net.predict(&batch_of(&s.volume)).unwrap().data()[target] as f64;
        let r = lrp(&net, &s.volume, target, &lrp_cfg).map_err(|e| e.to_string())?;
        worst = worst.max((r.sum() - logit).abs() / (logit.abs() + 1e-8));
    }
    ensure!(worst < 0.01, "worst relative deviation {worst:.3e}");
    Ok(format!("20 samples, worst relative deviation {worst:.2e}"))
}

fn brute_occlusion(
    net: &Network,
    x: &Tensor,
    target: usize,
    patch: usize,
    stride: usize,
) -> Vec<f64> {
    let n = x.shape()[1];
    let score = |v: &Tensor| net.predict(&batch_of(v)).unwrap().data()[target] as f64;
    let base = score(x);
    let mut starts: Vec<usize> = (0..=n - patch).step_by(stride).collect();
    if starts.last().unwrap() + patch < n {
        starts.push(n - patch);
    }
    let (mut sum, mut count) = (vec![0.0; n * n * n], vec![0usize; n * n * n]);
    for &a in &starts {
        for &b in &starts {
            for &c in &starts {
                let idx: Vec<usize> = (a..a + patch)
                    .flat_map(|d| {
                        (b..b + patch)
                            .flat_map(move |h| (c..c + patch).map(move |w| (d * n + h) * n + w))
                    })
                    .collect();
                let mut occluded = x.clone();
                for &i in &idx {
                    occluded.data_mut()[i] = 0.0;
                }
                let delta = base - score(&occluded);
                for &i in &idx {
                    sum[i] += delta;
                    count[i] += 1;
                }
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

fn c3_linear_oracles() -> Check {
    let mut r = rng(3);
    let w: Vec<f32> = (0..2 * 216).map(|_| r.gen_range(-1.0..1.0)).collect();
    let linear = Network::from_layers(
        vec![1, 6, 6, 6],
        vec![dense(2, 216, w.clone(), vec![0.25, -0.5])],
    )
    .unwrap();
    let x = Tensor::from_fn(&[1, 6, 6, 6], |_| r.gen_range(0.0..1.0));
    let gxi = gradient_times_input(&linear, &x, 1).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..216 {
        worst = worst.max((gxi.data()[i] - w[216 + i] * x.data()[i]).abs() as f64);
    }
    ensure!(worst < 1e-5, "gradient*input deviates by {worst:.2e}");
    // disjoint tiling: each voxel receives its own patch's summed w*x
    let occ = occlusion(
        &linear,
        &x,
        1,
        &OcclusionConfig {
            patch: 3,
            stride: 3,
            fill: 0.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut worst_occ: f64 = 0.0;
    for d in 0..6 {
        for h in 0..6 {
            for v in 0..6 {
                let (pd, ph, pw) = (d / 3 * 3, h / 3 * 3, v / 3 * 3);
                let mut patch = 0.0f64;
                for a in pd..pd + 3 {
                    for b in ph..ph + 3 {
                        for c in pw..pw + 3 {
                            let i = (a * 6 + b) * 6 + c;
                            patch += (w[216 + i] * x.data()[i]) as f64;
                        }
                    }
                }
                worst_occ = worst_occ.max((occ.data()[(d * 6 + h) * 6 + v] as f64 - patch).abs());
            }
        }
    }
    ensure!(
        worst_occ < 1e-5,
        "occlusion patch deltas deviate by {worst_occ:.2e}"
    );
    // a nonlinear conv net against the exhaustive loop, patch 2 stride 1
    let conv = Network::from_layers(
        vec![1, 6, 6, 6],
        vec![
            Layer::Conv3d {
                weight: Tensor::from_fn(&[2, 1, 3, 3, 3], |_| r.gen_range(-0.5..0.5)),
                bias: Tensor::new(vec![2], vec![0.05, -0.05]).unwrap(),
            },
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            dense(
                2,
                54,
                (0..108).map(|_| r.gen_range(-0.5..0.5)).collect(),
                vec![0.0, 0.0],
            ),
        ],
    )
    .unwrap();
    let fast = occlusion(
        &conv,
        &x,
        0,
        &OcclusionConfig {
            patch: 2,
            stride: 1,
            fill: 0.0,
        },
    )
    .map_err(|e| e.to_string())?;
    let slow = brute_occlusion(&conv, &x, 0, 2, 1);
    let mut mismatches = 0;
    for (a, b) in fast.data().iter().zip(&slow) {
        mismatches += usize::from(*a != *b as f32);
    }
    ensure!(
        mismatches == 0,
        "{mismatches} voxels differ from the brute-force loop"
    );
    Ok(format!(
        "gxi {worst:.1e}, occlusion patch sums {worst_occ:.1e}, brute-force 6^3 exact"
    ))
}

fn c4_guided_gating() -> Check {
    // hidden unit j copies input voxel j; logit 0 = h0 - h1
    let net = Network::from_layers(
        vec![1, 1, 1, 2],
        vec![
            dense(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
            Layer::Relu,
            dense(2, 2, vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0]),
        ],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 0.8]).unwrap();
    let guided = guided_backprop(&net, &x, 0).map_err(|e| e.to_string())?;
    ensure!(
        guided.data() == [1.0, 0.0],
        "negative-gradient path not removed: {:?}",
        guided.data()
    );
    let dead = Tensor::new(vec![1, 1, 1, 2], vec![-0.5, 0.8]).unwrap();
    let guided_dead = guided_backprop(&net, &dead, 1).map_err(|e| e.to_string())?;
    ensure!(
        guided_dead.data() == [0.0, 1.0],
        "inactive path not removed: {:?}",
        guided_dead.data()
    );
    // all gates open: positive weights and inputs throughout
    let mut r = rng(4);
    let open = Network::from_layers(
        vec![1, 2, 2, 2],
        vec![
            dense(
                6,
                8,
                (0..48).map(|_| r.gen_range(0.01..1.0)).collect(),
                vec![0.1; 6],
            ),
            Layer::Relu,
            dense(
                4,
                6,
                (0..24).map(|_| r.gen_range(0.01..1.0)).collect(),
                vec![0.0; 4],
            ),
            Layer::Relu,
            dense(
                2,
                4,
                (0..8).map(|_| r.gen_range(0.01..1.0)).collect(),
                vec![0.0; 2],
            ),
        ],
    )
    .unwrap();
    let x = Tensor::from_fn(&[1, 2, 2, 2], |_| r.gen_range(0.1..1.0));
    let (_, trace) = open.forward_eval(&batch_of(&x)).unwrap();
    let standard = open.backward_input(&trace, 1, ReluRule::Standard).unwrap();
    let guided = guided_backprop(&open, &x, 1).map_err(|e| e.to_string())?;
    ensure!(
        guided.data() == standard.data(),
        "open-gate guided gradient differs from the standard gradient"
    );
    Ok("closed gates contribute 0, open gates bit-identical".into())
}

fn arob_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_arob"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "arob {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const C5_CONFIG: &str = r#"
[phantom]
subjects_per_class = 30
seed = 5

[split]
test_per_class = 8
val_per_class = 6

[train]
max_epochs = 10
lr = 0.0005
repetitions = 3
"#;

fn c5_determinism(work: &Path) -> Check {
    let start = Instant::now();
    let mut reports = Vec::new();
    for attempt in 0..2 {
        let out = work.join(format!("c5_{attempt}"));
        let cfg_path = work.join(format!("c5_{attempt}.toml"));
        fs::write(
            &cfg_path,
            format!("output_dir = {:?}\n{C5_CONFIG}", out.display().to_string()),
        )
        .map_err(|e| e.to_string())?;
        let cfg = cfg_path.to_str().unwrap();
        for stage in [
            &["gen-data"][..],
            &["train", "--runs", "3"],
            &["attribute", "--method", "all"],
            &["evaluate"],
            &["report"],
        ] {
            let mut args = vec!["--config", cfg];
            args.extend_from_slice(stage);
            arob_bin(&args)?;
        }
        let csv = fs::read(out.join("report/report.csv")).map_err(|e| e.to_string())?;
        let json = fs::read(out.join("report/report.json")).map_err(|e| e.to_string())?;
        let ckpt = fs::read(out.join("runs/run_02/model.ckpt")).map_err(|e| e.to_string())?;
        reports.push((csv, json, ckpt));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        reports[0].0 == reports[1].0,
        "report.csv differs between executions"
    );
    ensure!(
        reports[0].1 == reports[1].1,
        "report.json differs between executions"
    );
    ensure!(
        reports[0].2 == reports[1].2,
        "checkpoints differ between executions"
    );
    Ok(format!(
        "two executions byte-identical ({} report bytes), {secs:.0}s",
        reports[0].0.len() + reports[0].1.len()
    ))
}

/// Configuration of the end-to-end reproduction.
pub const C6_CONFIG: &str = r#"
[phantom]
subjects_per_class = 60
effect_size = 0.3

[split]
test_per_class = 10
val_per_class = 8

[train]
repetitions = 10
max_epochs = 30

[attribution.lrp]
epsilon = 0.25
"#;

fn c6_reproduction(work: &Path) -> Check {
    let start = Instant::now();
    let out = work.join("c6");
    let mut cfg = ExperimentConfig::from_toml(C6_CONFIG).map_err(|e| e.to_string())?;
    cfg.output_dir = out;
    ensure!(
        cfg.phantom.shape == [36, 36, 36] && cfg.phantom.effect_size == 0.3,
        "configuration drifted"
    );
    let report = pipeline::run_all(&cfg, None).map_err(|e| e.to_string())?;
    let acc = report.accuracy.as_ref().ok_or("no accuracy summary")?;
    let mut failures = Vec::new();
    if !acc.failed_runs.is_empty() {
        failures.push(format!("failed runs {:?}", acc.failed_runs));
    }
    if acc.per_run.len() != 10 {
        failures.push(format!("{} runs instead of 10", acc.per_run.len()));
    }
    if acc.mean < 0.85 {
        failures.push(format!("mean balanced accuracy {:.4} < 0.85", acc.mean));
    }
    if !(acc.max > acc.min) {
        failures.push(format!("zero balanced-accuracy range ({:.4})", acc.min));
    }
    for m in Method::ALL {
        match report.row(m) {
            Some(row)
                if [
                    row.l2_tp,
                    row.l2_tn,
                    row.coherence_sum_pct,
                    row.coherence_density_pct,
                    row.coherence_gain_pct,
                ]
                .iter()
                .all(|v| v.is_some_and(f64::is_finite)) => {}
            _ => failures.push(format!("incomplete table row for {m}")),
        }
    }
    let focus = report.focus.as_ref().ok_or("no focus-region counts")?;
    ensure!(focus.region == HIPPOCAMPUS, "focus region {}", focus.region);
    let hits = |m: Method| focus.hits.get(&m).copied().unwrap_or(0);
    for m in [Method::Lrp, Method::GuidedBackprop] {
        if hits(m) < 7 {
            failures.push(format!(
                "{m}: effect region in top-10 density in {}/10 runs",
                hits(m)
            ));
        }
    }
    let summary = format!(
        "BA mean {:.4} range [{:.4}, {:.4}]; effect-region top-10 hits gxi {} gbp {} lrp {} occ {}; {:.0}s",
        acc.mean,
        acc.min,
        acc.max,
        hits(Method::GradientInput),
        hits(Method::GuidedBackprop),
        hits(Method::Lrp),
        hits(Method::Occlusion),
        start.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn c7_metrics() -> Check {
    let mut r = rng(7);
    for _ in 0..20 {
        let maps: Vec<Tensor> = (0..3)
            .map(|_| Tensor::from_fn(&[4, 4, 4], |_| r.gen_range(-1.0..1.0)))
            .collect();
        let (m, _) = pairwise_l2(&[0, 1, 2], &maps).map_err(|e| e.to_string())?;
        for i in 0..3 {
            ensure!(m.get(i, i) == 0.0, "nonzero diagonal");
            for j in 0..3 {
                ensure!(m.get(i, j) == m.get(j, i), "asymmetric");
                for k in 0..3 {
                    ensure!(
                        m.get(i, k) <= m.get(i, j) + m.get(j, k) + 1e-9,
                        "triangle inequality violated"
                    );
                }
            }
        }
    }
    let ten: Vec<u32> = (1..=10).collect();
    let cases = [
        (vec![ten.clone(), ten.clone()], 100.0),
        (vec![ten.clone(), (11..=20).collect()], 0.0),
        (vec![ten.clone(), (4..=13).collect()], 70.0),
    ];
    for (lists, expected) in cases {
        let (_, got) = topk_intersection(&[0, 1], &lists).map_err(|e| e.to_string())?;
        ensure!(
            (got - expected).abs() < 1e-9,
            "intersection {got} instead of {expected}"
        );
    }
    for _ in 0..20 {
        let labels: Vec<u32> = (0..216).map(|_| r.gen_range(1..=6)).collect();
        let names = (1..=6).map(|i| (i, format!("r{i}"))).collect();
        let atlas = RegionAtlas::new([6, 6, 6], labels, names).map_err(|e| e.to_string())?;
        let h = Tensor::from_fn(&[6, 6, 6], |_| r.gen_range(-5.0..5.0));
        let total: f64 = region_sum(&h, &atlas)
            .map_err(|e| e.to_string())?
            .values()
            .sum();
        ensure!(
            (total - h.abs_sum()).abs() < 1e-4,
            "partition sum {total} vs {}",
            h.abs_sum()
        );
    }
    Ok(
        "L2 axioms on 20 triples, intersections 100/0/70%, partition property on 20 fixtures"
            .into(),
    )
}

fn c8_formats(work: &Path) -> Check {
    let dir = work.join("c8");
    let mut r = rng(8);
    let volume = Tensor::from_fn(&[7, 5, 6], |_| r.gen_range(-3.0..3.0));
    let meta = Sidecar {
        kind: Some("heatmap".into()),
        method: Some("lrp".into()),
        run: Some(1),
        ..Default::default()
    };
    let c = dir.join("v.arob");
    container::write_tensor(&c, &volume, Some(&meta)).map_err(|e| e.to_string())?;
    let bytes = fs::read(&c).map_err(|e| e.to_string())?;
    let (back, back_meta) = container::read_container(&c).map_err(|e| e.to_string())?;
    ensure!(
        back == VolumeData::F32(volume.clone()) && back_meta == Some(meta),
        "container roundtrip changed the data"
    );
    ensure!(&bytes[..4] == b"AROB", "container magic missing");
    container::write_container(&dir.join("v2.arob"), &back, None).map_err(|e| e.to_string())?;
    ensure!(
        fs::read(dir.join("v2.arob")).map_err(|e| e.to_string())? == bytes,
        "container re-encoding is not byte-identical"
    );

    let net: Network = Network::build(&NetworkSpec::default(), 9).map_err(|e| e.to_string())?;
    let ck = dir.join("m.ckpt");
    let ck_meta = CheckpointMeta {
        run: 0,
        seed: 9,
        best_epoch: 1,
        epochs_run: 1,
        best_val_loss: 0.5,
    };
    checkpoint::write_checkpoint(&ck, &net, &ck_meta).map_err(|e| e.to_string())?;
    let (loaded, loaded_meta) = checkpoint::read_checkpoint(&ck).map_err(|e| e.to_string())?;
    let x = Tensor::from_fn(&[2, 1, 36, 36, 36], |_| r.gen_range(0.0..1.0));
    ensure!(loaded_meta == ck_meta, "checkpoint metadata changed");
    ensure!(
        loaded.predict(&x).unwrap().data() == net.predict(&x).unwrap().data(),
        "checkpoint logits are not bit-identical"
    );

    let n = dir.join("v.nii");
    nifti::write_nifti(&n, &VolumeData::F32(volume.clone())).map_err(|e| e.to_string())?;
    let header = fs::read(&n).map_err(|e| e.to_string())?;
    ensure!(header[..4] == 348i32.to_le_bytes(), "sizeof_hdr is not 348");
    ensure!(&header[344..348] == b"n+1\0", "magic is not n+1");
    let imported = nifti::read_nifti(&n).map_err(|e| e.to_string())?;
    ensure!(
        imported == VolumeData::F32(volume),
        "NIfTI roundtrip changed the payload"
    );
    Ok("container, checkpoint and NIfTI-1 roundtrips byte-faithful".into())
}

fn main() -> ExitCode {
    // AROB_ACCEPTANCE_DIR keeps the generated experiments for inspection
    let temp = tempfile::tempdir().expect("temporary directory");
    let kept = std::env::var_os("AROB_ACCEPTANCE_DIR").map(std::path::PathBuf::from);
    let work_dir = kept.unwrap_or_else(|| temp.path().to_path_buf());
    let work = work_dir.as_path();
    fs::create_dir_all(work).expect("acceptance work directory");
    let only: Option<Vec<usize>> = std::env::var("AROB_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check>)> = vec![
        (1, "gradient correctness", Box::new(c1_gradients)),
        (2, "LRP conservation", Box::new(c2_lrp_conservation)),
        (3, "linear-model oracles", Box::new(c3_linear_oracles)),
        (4, "guided-backprop gating", Box::new(c4_guided_gating)),
        (5, "pipeline determinism", Box::new(|| c5_determinism(work))),
        (
            6,
            "end-to-end reproduction",
            Box::new(|| c6_reproduction(work)),
        ),
        (7, "metric unit tests", Box::new(c7_metrics)),
        (8, "format conformance", Box::new(|| c8_formats(work))),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            println!("SKIP C{id} {name}");
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS C{id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL C{id} {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
