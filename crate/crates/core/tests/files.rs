use heavyfpca::func_core::fourier_basis;
use heavyfpca::heavytail_sim::{sample_curves, RvCurveModel};
use heavyfpca::io::{read_sample_file, write_sample_file};
use heavyfpca::{Error, Grid};
use tempfile::TempDir;

#[test]
fn sample_file_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let grid = Grid::uniform(40).unwrap();
    let model = RvCurveModel::reference(2.5, &grid).unwrap();
    let sample = sample_curves(&model, 64, &grid, 3).unwrap();
    let path = dir.path().join("curves.csv");
    write_sample_file(&path, &sample).unwrap();
    let back = read_sample_file(&path).unwrap();
    assert_eq!(back.data(), sample.data());
    assert_eq!(back.grid().points(), grid.points());
    // weights are rebuilt from point differences
    for (a, b) in back.grid().weights().iter().zip(grid.weights()) {
        assert!((a - b).abs() <= 1e-15);
    }
    assert_eq!(fourier_basis(back.grid(), 3).unwrap().len(), 3);
}

#[test]
fn missing_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let err = read_sample_file(dir.path().join("absent.csv")).unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err:?}");
}
