use arob_core::data::ingest_volume;
use arob_core::io::container::{
    read_container, read_tensor, write_container, write_tensor, Sidecar, VolumeData,
};
use arob_core::io::nifti::{read_nifti, write_nifti};
use arob_core::io::pgm::{read_pgm, shade, write_pgm, Shading};
use arob_core::Tensor;

fn ramp(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n, n], |i| (i % 97) as f32 * 0.5 - 3.0)
}

#[test]
fn nifti_volume_of_expected_shape_is_ingested_and_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.nii");
    write_nifti(&path, &VolumeData::F32(ramp(36))).unwrap();
    let sample = ingest_volume(&path, [36, 36, 36]).unwrap();
    assert_eq!(sample.volume.shape(), &[1, 36, 36, 36]);
    assert_eq!(sample.subject_id, "scan");
    let (lo, hi) = sample
        .volume
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert_eq!((lo, hi), (0.0, 1.0));
}

#[test]
fn volume_of_wrong_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.nii");
    write_nifti(&path, &VolumeData::F32(ramp(35))).unwrap();
    let err = ingest_volume(&path, [36, 36, 36]).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains("35"), "{err}");
}

#[test]
fn constant_volume_scales_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.arob");
    write_tensor(&path, &Tensor::full(&[1, 6, 6, 6], 4.0), None).unwrap();
    let sample = ingest_volume(&path, [6, 6, 6]).unwrap();
    assert!(sample.volume.data().iter().all(|&v| v == 0.0));
}

#[test]
fn container_and_nifti_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let volume = ramp(5);
    let meta = Sidecar {
        kind: Some("heatmap".into()),
        run: Some(3),
        ..Default::default()
    };
    let c = dir.path().join("a.arob");
    write_tensor(&c, &volume, Some(&meta)).unwrap();
    let (data, back) = read_container(&c).unwrap();
    assert_eq!(data, VolumeData::F32(volume.clone()));
    assert_eq!(back, Some(meta));
    let n = dir.path().join("a.nii");
    write_nifti(&n, &VolumeData::F32(volume.clone())).unwrap();
    assert_eq!(read_nifti(&n).unwrap(), VolumeData::F32(volume.clone()));
    let labels = VolumeData::I32 {
        shape: vec![2, 2, 2],
        data: (0..8).collect(),
    };
    let l = dir.path().join("labels.arob");
    write_container(&l, &labels, None).unwrap();
    assert_eq!(read_container(&l).unwrap().0, labels);
    assert!(read_tensor(&l).unwrap_err().is_data_error());
}

#[test]
fn pgm_roundtrip_and_signed_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let image = shade(&[-2.0, 0.0, 2.0, 1.0], 2, 2, Shading::Signed);
    assert_eq!(image.pixels, vec![0, 128, 255, 191]);
    let path = dir.path().join("x.pgm");
    write_pgm(&path, &image).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(read_pgm(&path).unwrap(), image);
}
