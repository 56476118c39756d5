use super::*;
use crate::random::gaussian;

fn shape() -> ClassifierShape {
    ClassifierShape {
        bands: 3,
        windows: 2,
        heads: 2,
        m: 2,
        conv_maps: 4,
        classes: 3,
    }
}

fn random_fmap(s: &ClassifierShape, seed: u64) -> TangentFeatureMap {
    let mut r = rng(seed);
    let data = (0..s.bands * s.kernel_len()).map(|_| gaussian(&mut r)).collect();
    TangentFeatureMap::new(s.bands, s.windows, s.feature_width(), data).unwrap()
}

fn loss_of(clf: &TangentClassifier, fmap: &TangentFeatureMap, label: usize) -> f64 {
    loss(&clf.forward(fmap.clone()).unwrap().logits, label).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

#[test]
fn reshape_shapes_and_roundtrip() {
    let one = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])];
    let fmap = reshape_features(&one, 1, 1, 1).unwrap();
    assert_eq!(fmap.shape(), (1, 1, 1, 4));
    assert_eq!(fmap.as_slice(), &[1.0, 2.0, 3.0, 4.0]);

    let mut r = rng(1);
    let stacked: Vec<DMatrix<f64>> = (0..3 * 9 * 4).map(|_| gaussian_matrix(5, 5, &mut r)).collect();
    let fmap = reshape_features(&stacked, 3, 9, 4).unwrap();
    assert_eq!(fmap.as_slice().len(), 2700);
    assert_eq!(fmap.get(7, 2, 3 * 25 + 4 * 5 + 1), stacked[(2 * 9 + 7) * 4 + 3][(4, 1)]);
    assert_eq!(inverse_reshape(&fmap, 4).unwrap(), stacked);
    assert!(matches!(
        reshape_features(&stacked[1..], 3, 9, 4),
        Err(ClassifierError::ShapeMismatch(_))
    ));
}

#[test]
fn conv_zero_cases_and_linearity() {
    let s = shape();
    let mut clf = TangentClassifier::new(s, 2).unwrap();
    let fmap = random_fmap(&s, 3);
    let zero_kernel = TangentClassifier {
        conv_kernel: DMatrix::zeros(s.conv_maps, s.kernel_len()),
        ..clf.clone()
    };
    assert_eq!(
        conv_forward(&zero_kernel, &fmap).unwrap(),
        DMatrix::zeros(s.bands, s.conv_maps)
    );

    clf.conv_bias = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
    let zeros = TangentFeatureMap::new(
        s.bands,
        s.windows,
        s.feature_width(),
        vec![0.0; s.bands * s.kernel_len()],
    )
    .unwrap();
    let out = conv_forward(&clf, &zeros).unwrap();
    for f in 0..s.bands {
        assert_eq!(out.row(f).transpose(), clf.conv_bias);
    }

    clf.conv_bias.fill(0.0);
    let scaled = TangentFeatureMap::new(
        s.bands,
        s.windows,
        s.feature_width(),
        fmap.as_slice().iter().map(|v| v * -2.5).collect(),
    )
    .unwrap();
    let a = conv_forward(&clf, &fmap).unwrap() * -2.5;
    let b = conv_forward(&clf, &scaled).unwrap();
    assert!((a - b).norm() < 1e-12);
}

#[test]
fn band_importance_examples() {
    let s = shape();
    let mut clf = TangentClassifier::new(s, 4).unwrap();
    let ones = DMatrix::from_element(s.bands, s.conv_maps, 1.0);
    assert_eq!(squeeze(&ones), DVector::from_element(s.bands, 1.0));

    let conv = gaussian_matrix(s.bands, s.conv_maps, &mut rng(5));
    clf.omega1.fill(0.0);
    clf.omega2.fill(0.0);
    let (e, gated) = band_importance(&clf, &conv);
    assert_eq!(e, DVector::from_element(s.bands, 0.5));
    assert_eq!(gated, &conv * 0.5);
}

#[test]
fn importance_stays_in_open_unit_interval() {
    let s = shape();
    let mut r = rng(6);
    for seed in 0..1000 {
        let clf = TangentClassifier::new(s, seed).unwrap();
        let conv = gaussian_matrix(s.bands, s.conv_maps, &mut r) * 3.0;
        let (e, gated) = band_importance(&clf, &conv);
        assert!(e.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(gated.norm() <= conv.norm());
    }
}

#[test]
fn band_permutation_is_equivariant() {
    let s = shape();
    let clf = TangentClassifier::new(s, 7).unwrap();
    let fmap = random_fmap(&s, 8);
    let x = fmap.as_matrix();
    let mut swapped = x.clone();
    swapped.swap_rows(0, 2);
    let fswapped = TangentFeatureMap::from_matrix(&swapped, s.windows, s.feature_width());
    let a = conv_forward(&clf, &fmap).unwrap();
    let mut b = conv_forward(&clf, &fswapped).unwrap();
    b.swap_rows(0, 2);
    assert_eq!(a, b);

    // Permuting the bands of ω₁ rows and ω₂ columns alongside keeps 𝓔 equivariant.
    let mut permuted = clf.clone();
    permuted.omega1.swap_rows(0, 2);
    permuted.omega2.swap_columns(0, 2);
    let (e, _) = band_importance(&clf, &a);
    let (mut e2, _) = band_importance(&permuted, &conv_forward(&clf, &fswapped).unwrap());
    e2.swap_rows(0, 2);
    assert!((e - e2).norm() < 1e-15);
}

#[test]
fn loss_examples() {
    assert!((loss(&DVector::zeros(4), 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    let l = loss(&DVector::from_vec(vec![10.0, -10.0]), 0).unwrap();
    assert!(l <= 1e-8 && (l - 2.061153618e-9).abs() < 1e-15);
    assert_eq!(
        loss(&DVector::zeros(2), 2),
        Err(ClassifierError::LabelOutOfRange { label: 2, classes: 2 })
    );
    let mut r = rng(9);
    for _ in 0..100 {
        let logits = DVector::from_fn(5, |_, _| gaussian(&mut r) * 10.0);
        assert!((softmax(&logits).sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn parameter_count() {
    let s = ClassifierShape {
        bands: 20,
        windows: 1,
        heads: 1,
        m: 20,
        conv_maps: 1,
        classes: 2,
    };
    let mut clf = TangentClassifier::new(s, 0).unwrap();
    assert_eq!(clf.omega1.len(), 200);
    assert_eq!(
        clf.num_parameters(),
        clf.tensors_mut().iter().map(|t| t.len()).sum::<usize>()
    );
}

#[test]
fn gradients_match_central_differences() {
    let s = shape();
    let h = 1e-5;
    for seed in 0..50 {
        let clf = TangentClassifier::new(s, 100 + seed).unwrap();
        let fmap = random_fmap(&s, 200 + seed);
        let label = seed as usize % s.classes;
        let fwd = clf.forward(fmap.clone()).unwrap();
        let (grads, d_fmap) = clf.backward(&fwd, &loss_gradient(&fwd.logits, label).unwrap());

        let mut r = rng(300 + seed);
        let analytic = grads.tensors();
        for (t, tensor) in analytic.iter().enumerate() {
            let dir: Vec<f64> = (0..tensor.len()).map(|_| gaussian(&mut r)).collect();
            let want: f64 = tensor.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let mut plus = clf.clone();
            let mut minus = clf.clone();
            for ((p, m), d) in plus.tensors_mut()[t]
                .iter_mut()
                .zip(minus.tensors_mut()[t].iter_mut())
                .zip(&dir)
            {
                *p += h * d;
                *m -= h * d;
            }
            let numeric = (loss_of(&plus, &fmap, label) - loss_of(&minus, &fmap, label)) / (2.0 * h);
            assert!(
                rel_err(want, numeric) < 1e-4,
                "seed {seed} tensor {t}: {want} vs {numeric}"
            );
        }

        let dir: Vec<f64> = (0..fmap.as_slice().len()).map(|_| gaussian(&mut r)).collect();
        let want: f64 = d_fmap.as_slice().iter().zip(&dir).map(|(a, b)| a * b).sum();
        let shifted = |sign: f64| {
            let data = fmap
                .as_slice()
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + sign * h * d)
                .collect();
            TangentFeatureMap::new(s.bands, s.windows, s.feature_width(), data).unwrap()
        };
        let numeric = (loss_of(&clf, &shifted(1.0), label) - loss_of(&clf, &shifted(-1.0), label)) / (2.0 * h);
        assert!(rel_err(want, numeric) < 1e-4, "seed {seed} input: {want} vs {numeric}");
    }
}
