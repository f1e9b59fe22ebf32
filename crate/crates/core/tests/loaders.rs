use std::path::Path;

use unsir_core::data::{load_cifar_binary, load_idx, CifarMeta};
use unsir_core::Error;

fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: u32, cols: u32) {
    let mut out = Vec::new();
    out.extend_from_slice(&[0, 0, 0x08, 0x03]);
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    std::fs::write(path, out).unwrap();
}

fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut out = vec![0, 0, 0x08, 0x01];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).unwrap();
}

#[test]
fn idx_round_trip_scales_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    let images = vec![vec![0, 51, 102, 255, 0, 0], vec![255; 6], vec![0; 6]];
    write_idx_images(&img, &images, 2, 3);
    write_idx_labels(&lbl, &[3, 0, 1]);
    let ds = load_idx(&img, &lbl).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.input_shape(), &[1, 2, 3]);
    assert_eq!(ds.num_classes(), 4);
    assert_eq!(ds.labels(), &[3, 0, 1]);
    assert_eq!(ds.sample(0), &[0.0, 0.2, 0.4, 1.0, 0.0, 0.0]);
    assert!(ds.sample(1).iter().all(|&v| v == 1.0));
}

#[test]
fn idx_count_mismatch_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    write_idx_images(&img, &[vec![1; 4], vec![2; 4]], 2, 2);
    write_idx_labels(&lbl, &[0]);
    assert!(matches!(load_idx(&img, &lbl), Err(Error::Format { .. })));
}

#[test]
fn idx_swapped_files_fail_on_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    write_idx_images(&img, &[vec![1; 4]], 2, 2);
    write_idx_labels(&lbl, &[0]);
    assert!(matches!(load_idx(&lbl, &img), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_idx(dir.path().join("nope"), dir.path().join("nope2")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

fn cifar_record(label: u8, meta: &CifarMeta, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut rec = vec![label];
    rec.extend((0..meta.channels * meta.height * meta.width).map(fill));
    rec
}

#[test]
fn cifar_batches_concatenate_in_order() {
    let meta = CifarMeta {
        num_classes: 5,
        channels: 3,
        height: 2,
        width: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let mut bytes = cifar_record(4, &meta, |i| i as u8);
    bytes.extend(cifar_record(1, &meta, |_| 255));
    std::fs::write(&a, bytes).unwrap();
    std::fs::write(&b, cifar_record(2, &meta, |_| 0)).unwrap();
    let ds = load_cifar_binary(&[&a, &b], meta).unwrap();
    assert_eq!(ds.labels(), &[4, 1, 2]);
    assert_eq!(ds.input_shape(), &[3, 2, 2]);
    // channel-major: value i of the record lands at flat index i
    let expected: Vec<f32> = (0..12).map(|i| i as f32 / 255.0).collect();
    assert_eq!(ds.sample(0), &expected[..]);
    assert!(ds.sample(2).iter().all(|&v| v == 0.0));
}

#[test]
fn cifar_label_out_of_range_reports_record_offset() {
    let meta = CifarMeta {
        num_classes: 3,
        channels: 1,
        height: 1,
        width: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let mut bytes = cifar_record(0, &meta, |_| 9);
    bytes.extend(cifar_record(3, &meta, |_| 9));
    std::fs::write(&a, bytes).unwrap();
    assert!(matches!(
        load_cifar_binary(&[&a], meta),
        Err(Error::Format { offset: 3, .. })
    ));
}
