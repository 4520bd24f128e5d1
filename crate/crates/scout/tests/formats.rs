mod common;

use std::path::Path;

use scout::checkpoint::{self, decode, encode};
use scout::dataset_dir::{read_dataset, write_dataset};
use scout::error::Error;
use scout::heatmap::{gray_levels, grid_png, write_heatmap};
use scout::tensor_io::{read_tensor, write_tensor};
use scout_core::grid::Grid;
use scout_core::micronet::{Architecture, ModelBundle};
use scout_core::synthgen::{generate_dataset, DatasetConfig};
use scout_core::tensor::Tensor;

use common::scratch;

fn model() -> ModelBundle {
    let names = ["a", "b", "c"].map(String::from).to_vec();
    ModelBundle::init(Architecture::standard(3), names, 4).unwrap()
}

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let m = model();
    let bytes = encode(&m);
    let back = decode(&bytes, Path::new("m")).unwrap();
    assert_eq!(back, m);
    let x = Tensor::new(vec![3, 32, 32], vec![0.3; 3 * 32 * 32]).unwrap();
    assert_eq!(m.forward(&x).unwrap().posteriors(), back.forward(&x).unwrap().posteriors());

    let dir = scratch("ckpt-roundtrip");
    let path = dir.join("m.ckpt");
    checkpoint::save(&m, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), m);
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let bytes = encode(&model());
    for cut in [0, 7, 15, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = decode(&bytes[..cut], Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode(&longer, Path::new("m")).is_err());
}

#[test]
fn corrupt_header_and_magic_are_rejected() {
    let bytes = encode(&model());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode(&magic, Path::new("m")).unwrap_err().to_string().contains("magic"));
    let mut header = bytes.clone();
    header[17] = b'#';
    assert!(decode(&header, Path::new("m")).unwrap_err().to_string().contains("corrupt header"));
    let mut nan = bytes;
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(decode(&nan, Path::new("m")).is_err());
}

#[test]
fn class_mismatch_is_reported() {
    let m = model();
    let err = checkpoint::check_classes(&m, &["a".into(), "b".into(), "x".into()]).unwrap_err();
    assert!(matches!(err, Error::ClassMismatch { .. }));
    assert_eq!(err.exit_code(), 2);
    checkpoint::check_classes(&m, &m.class_names).unwrap();
}

#[test]
fn dataset_directory_roundtrip() {
    let data = generate_dataset(&DatasetConfig::planted(6), 8).unwrap();
    let dir = scratch("dataset-roundtrip").join("d");
    write_dataset(&dir, &data).unwrap();
    let back = read_dataset(&dir).unwrap();
    assert_eq!(back.seed, data.seed);
    assert_eq!(back.config, data.config);
    assert_eq!(back.scenes, data.scenes);
    assert_eq!(back.ground_truth().unwrap(), data.ground_truth().unwrap());
}

#[test]
fn dataset_write_refuses_non_empty_destination() {
    let data = generate_dataset(&DatasetConfig::planted(4), 8).unwrap();
    let dir = scratch("dataset-occupied");
    std::fs::write(dir.join("keep.txt"), "x").unwrap();
    let err = write_dataset(&dir, &data).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("keep.txt")]);
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let err = read_dataset(Path::new("/nonexistent/scout-data")).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn tensor_and_heatmap_files() {
    let dir = scratch("tensor-files");
    let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 1e-300, 7.25]).unwrap();
    write_tensor(&dir.join("t"), &t).unwrap();
    assert_eq!(read_tensor(&dir.join("t")).unwrap(), t);

    let grid = Grid::new(2, 2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
    assert_eq!(gray_levels(&grid), vec![0, 64, 128, 255]);
    write_heatmap(&dir.join("h"), &grid).unwrap();
    assert_eq!(std::fs::read(dir.join("h.png")).unwrap(), grid_png(&grid).unwrap());
    let decoder = png::Decoder::new(std::io::Cursor::new(grid_png(&grid).unwrap()));
    let reader = decoder.read_info().unwrap();
    assert_eq!((reader.info().width, reader.info().height), (2, 2));
    assert_eq!(read_tensor(&dir.join("h")).unwrap().data(), grid.values());
}
