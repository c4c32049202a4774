use std::fs::File;

use approx::assert_relative_eq;
use elastlab::data::{gaussian_blobs, relu_realizable, AlphaSpec};
use elastlab::elasticity::srel_diag_quad_time;
use elastlab::flows::DiagQuadFlowSpec;
use elastlab::io::{create_file, read_dataset_class, read_dataset_real, read_series, write_dataset_class, write_dataset_real, write_series};
use elastlab::sgd::{aggregate_runs, sgd_quad, sgd_relu, InitSpec, QuadSgdSpec, ReluSgdSpec, SgdConfig};
use elastlab::Vector;
use proptest::prelude::*;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn datasets_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let real = relu_realizable(&v(&[1.0, -0.5, 2.0]), 64, 11).unwrap();
    let path = dir.path().join("real.csv");
    write_dataset_real(create_file(&path).unwrap(), &real).unwrap();
    assert_eq!(read_dataset_real(File::open(&path).unwrap()).unwrap(), real);

    let class = gaussian_blobs(4, &[v(&[0.0; 4]), v(&[3.0; 4]), v(&[-3.0; 4])], &[1.0, 0.5, 2.0], 20, 5).unwrap();
    let path = dir.path().join("class.csv");
    write_dataset_class(create_file(&path).unwrap(), &class).unwrap();
    assert_eq!(read_dataset_class(File::open(&path).unwrap()).unwrap(), class);
}

#[test]
fn series_survive_a_file_round_trip() {
    let spec = ReluSgdSpec { w_star: v(&[1.0, 1.0, 1.0]), init: InitSpec::Gaussian { scale: 1.0 } };
    let pairs = vec![(v(&[1.0, 2.0, 0.5]), v(&[2.0, 1.0, 1.0])), (v(&[1.0, 1.0, 1.0]), v(&[-1.0, 0.5, 3.0]))];
    let runs = sgd_relu(&spec, &SgdConfig::new(1e-3, 500, vec![4, 1, 9], pairs, 50)).unwrap();
    let series = aggregate_runs(&runs, &["a".into(), "b".into()]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    write_series(create_file(&path).unwrap(), &series).unwrap();
    let back = read_series(File::open(&path).unwrap()).unwrap();
    assert_eq!(back.times, series.times);
    assert_eq!(back.pairs, series.pairs);
    assert_eq!(back.run_ids, vec![1, 4, 9]);
    assert_eq!(back.values, series.values);
    assert_eq!(back.defined, series.defined);
    for (row_a, row_b) in back.mean.iter().zip(&series.mean) {
        for (a, b) in row_a.iter().zip(row_b) {
            match (a, b) {
                (Some(a), Some(b)) => assert_relative_eq!(*a, *b, max_relative = 1e-15),
                _ => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn runs_depend_only_on_their_seed() {
    let spec = QuadSgdSpec { w_star: v(&[1.0, 2.0, 3.0]), w0: v(&[0.7, 1.4, 2.0]), alpha: AlphaSpec::Zero };
    let pairs = vec![(v(&[1.0, -1.0, 1.0]), v(&[1.01, 0.999, 1.2]))];
    let both = sgd_quad(&spec, &SgdConfig::new(1e-3, 300, vec![2, 8], pairs.clone(), 10)).unwrap();
    let alone = sgd_quad(&spec, &SgdConfig::new(1e-3, 300, vec![8], pairs.clone(), 10)).unwrap();
    let run8 = both.iter().find(|r| r.seed == 8).unwrap();
    assert_eq!(run8, &alone[0]);

    let reversed = sgd_quad(&spec, &SgdConfig::new(1e-3, 300, vec![8, 2], pairs, 10)).unwrap();
    let ids = ["p".to_string()];
    assert_eq!(aggregate_runs(&both, &ids).unwrap(), aggregate_runs(&reversed, &ids).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn squared_weights_rise_toward_limit(
        a in prop::collection::vec(0.1f64..10.0, 3),
        b in prop::collection::vec(0.1f64..10.0, 3),
        frac in prop::collection::vec(0.01f64..0.99, 3),
        t in 0.0f64..5000.0,
    ) {
        let w0: Vec<f64> = (0..3).map(|q| frac[q] * a[q] / b[q]).collect();
        let spec = DiagQuadFlowSpec::new(v(&a), v(&b), 1e-3, v(&w0)).unwrap();
        let u = spec.squared_weights(t).unwrap();
        let limit = spec.limit();
        for q in 0..3 {
            let (lo, hi) = (w0[q], limit[q]);
            prop_assert!(u[q] >= lo * (1.0 - 1e-12) && u[q] <= hi * (1.0 + 1e-12), "u {} outside [{lo}, {hi}]", u[q]);
        }
    }

    #[test]
    fn closed_form_srel_is_reflexive(
        x in prop::collection::vec(-5.0f64..5.0, 3),
        t in 0.0f64..2000.0,
    ) {
        let spec = DiagQuadFlowSpec::new(v(&[1.0, 4.0, 9.0]), v(&[1.0, 1.0, 1.0]), 1e-3, v(&[0.5, 2.0, 4.0])).unwrap();
        let x = v(&x);
        if let Some(s) = srel_diag_quad_time(&spec, &x, &x, t).unwrap() {
            prop_assert!((s - 1.0).abs() < 1e-12, "S_rel(x, x) = {s}");
        }
    }
}
