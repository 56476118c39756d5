//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the test harness so the report is always printed; exits
//! non-zero if any criterion fails. The end-to-end criteria train full models
//! and dominate the runtime.

mod common;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use spdbci::io::{trials_from_bytes, trials_to_bytes, RawTrialSet};
use spdbci::random::{gaussian, gaussian_matrix, random_spd, random_stiefel, random_sym, rng};
use spdbci::select::{
    assemble_l, fit_selection, objective, tangent_distance_matrix, update_w, SelectionOptions, SelectionTransform,
};
use spdbci::spd::{airm_distance, check_psd_gram, karcher_mean, spd_exp, spd_log, KarcherOptions, SpdMatrix};
use spdbci::synthetic::{generate, min_class_separation, SyntheticKind, SyntheticSpec};
use spdbci::train::{
    count_parameters, evaluate_cv, evaluate_holdout, initial_network, prepare, selection_samples, DataShape, Model,
    Optimizer, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, elapsed: Duration, limit: Option<Duration>, outcome: Outcome) -> bool {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = outcome.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / limit {}s", l.as_secs()));
    println!(
        "criterion {id} {}: {name}: {} ({:.1}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
    );
    pass
}

fn timed(f: impl FnOnce() -> Outcome) -> (Duration, Outcome) {
    let start = Instant::now();
    let outcome = f();
    (start.elapsed(), outcome)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

// ---- 1: Riemannian core ----

fn riemannian_core() -> Outcome {
    let mut r = rng(101);
    let mut worst_sym = 0.0f64;
    let mut worst_affine = 0.0f64;
    let mut worst_self = 0.0f64;
    let mut separated = true;
    let mut worst_roundtrip = 0.0f64;
    for n in [5, 8] {
        for _ in 0..200 {
            let x = random_spd(n, &mut r);
            let y = random_spd(n, &mut r);
            let d = airm_distance(&x, &y).unwrap();
            worst_sym = worst_sym.max(relative(d, airm_distance(&y, &x).unwrap()));
            worst_self = worst_self.max(airm_distance(&x, &x).unwrap());
            separated &= (&*x - &*y).norm() < 1e-8 || d > 1e-8;
            // Congruence by a random (almost surely invertible) matrix.
            let a = gaussian_matrix(n, n, &mut r) + DMatrix::identity(n, n);
            let ax = SpdMatrix::new(sym(&a * &*x * a.transpose())).unwrap();
            let ay = SpdMatrix::new(sym(&a * &*y * a.transpose())).unwrap();
            worst_affine = worst_affine.max(relative(d, airm_distance(&ax, &ay).unwrap()));

            let back = spd_exp(&spd_log(&x).unwrap()).unwrap();
            worst_roundtrip = worst_roundtrip.max((&*back - &*x).norm() / x.norm());
            let s = random_sym(n, &mut r);
            let again = spd_log(&spd_exp(&s).unwrap()).unwrap();
            worst_roundtrip = worst_roundtrip.max((&*again - &s).norm() / s.norm().max(1.0));
        }
    }

    // G² − D² must be a squared Euclidean distance matrix: D comes from a
    // coordinate projection of the point set that produced G.
    let mut worst_psd = f64::INFINITY;
    for set in 0..100 {
        let (g, d) = if set % 2 == 0 {
            let pts = gaussian_matrix(6, 6, &mut r);
            let dist = |cols: usize| {
                DMatrix::from_fn(6, 6, |i, j| {
                    (pts.row(i).columns(0, cols) - pts.row(j).columns(0, cols)).norm()
                })
            };
            (dist(6), dist(3))
        } else {
            let xs: Vec<SpdMatrix> = (0..6).map(|_| random_spd(5, &mut r)).collect();
            let logs: Vec<DMatrix<f64>> = xs.iter().map(|x| spd_log(x).unwrap().into_inner()).collect();
            let g = DMatrix::from_fn(6, 6, |i, j| (&logs[i] - &logs[j]).norm());
            let w = random_stiefel(5, 3, &mut r);
            (g, tangent_distance_matrix(&xs, &w).unwrap())
        };
        worst_psd = worst_psd.min(check_psd_gram(&g, &d).unwrap());
    }

    let pass = worst_sym < 1e-8
        && worst_self < 1e-8
        && separated
        && worst_affine < 1e-8
        && worst_roundtrip < 1e-8
        && worst_psd >= -1e-8;
    Outcome {
        pass,
        detail: format!(
            "symmetry {worst_sym:.1e}, self-distance {worst_self:.1e}, affine {worst_affine:.1e}, \
             log/exp {worst_roundtrip:.1e}, min eigenvalue {worst_psd:.1e}"
        ),
    }
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

// ---- 2: channel-selection optimality ----

/// `𝓛` written exactly as the double sum over all ordered pairs.
fn literal_l(samples: &[SpdMatrix], gamma_g: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let logs: Vec<DMatrix<f64>> = samples.iter().map(|x| spd_log(x).unwrap().into_inner()).collect();
    let p = w * w.transpose();
    let mut l = DMatrix::zeros(w.nrows(), w.nrows());
    for i in 0..logs.len() {
        for j in 0..logs.len() {
            let delta = &logs[i] - &logs[j];
            l -= gamma_g[(i, j)] * (&delta * &p * &delta);
        }
    }
    l
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

fn random_selection_fits() -> Vec<SelectionTransform> {
    let mut r = rng(202);
    (0..30)
        .map(|k| {
            let dim = 4 + k % 5;
            let xs: Vec<SpdMatrix> = (0..8).map(|_| random_spd(dim, &mut r)).collect();
            fit_selection(&xs, None, SelectionOptions::new(1 + k % (dim - 1))).unwrap()
        })
        .collect()
}

fn selection_optimality(planted_fits: &[SelectionTransform]) -> Outcome {
    let mut r = rng(203);
    let mut margin = f64::INFINITY;
    for k in 0..20 {
        let dim = 3 + k % 6;
        let m = 1 + k % dim;
        let l = random_sym(dim, &mut r);
        let best = objective(&l, &update_w(&l, m).unwrap());
        for _ in 0..10_000 {
            let candidate = random_stiefel(dim, m, &mut r);
            margin = margin.min(best - objective(&l, &candidate));
        }
    }

    let mut assembly = 0.0f64;
    for k in 0..20 {
        let dim = 3 + k % 6;
        let xs: Vec<SpdMatrix> = (0..7).map(|_| random_spd(dim, &mut r)).collect();
        let gamma_g = sym(gaussian_matrix(7, 7, &mut r));
        let w = random_stiefel(dim, 1 + k % dim, &mut r);
        let fast = assemble_l(&xs, &gamma_g, &w).unwrap();
        let slow = literal_l(&xs, &gamma_g, &w);
        assembly = assembly.max((&fast - &slow).norm() / slow.norm().max(1.0));
    }

    let fits = random_selection_fits();
    let all: Vec<&SelectionTransform> = fits.iter().chain(planted_fits).collect();
    let rising = all.iter().filter(|f| monotone(&f.objective_trace)).count();
    let safeguarded: usize = all.iter().map(|f| f.safeguarded_steps).sum();
    Outcome {
        pass: margin >= -1e-9 && assembly <= 1e-12 && rising == all.len(),
        detail: format!(
            "dominance margin {margin:.2e}, assembly error {assembly:.1e}, \
             {rising}/{} traces non-decreasing ({safeguarded} safeguarded steps)",
            all.len()
        ),
    }
}

// ---- 3: synthetic channel recovery ----

fn planted_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::Planted,
        channels: 8,
        classes: 2,
        trials: 200,
        planted: vec![1, 3, 5],
        class_seed: 30 + seed,
        seed,
        ..SyntheticSpec::default()
    }
}

fn selection_config(m: usize) -> TrainConfig {
    TrainConfig {
        m,
        ..TrainConfig::default()
    }
}

/// Literal double-centring `−½·H·(D∘D)·H`.
fn literal_gamma(dist: &DMatrix<f64>) -> DMatrix<f64> {
    let n = dist.nrows();
    let sq = dist.component_mul(dist);
    let row: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let all = sq.sum() / (n * n) as f64;
    DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row[i] - row[j] + all))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (k - 1..n)
        .flat_map(|last| {
            subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

/// Best 3-channel subset by exhaustive search of the trace objective on the
/// same whitened class/band means the fit sees.
fn subset_oracle(set: &RawTrialSet, config: &TrainConfig) -> Vec<usize> {
    let shape = DataShape::of(config, set);
    let data = prepare(config, set).unwrap();
    let mut network = initial_network(config, shape).unwrap();
    let (samples, groups) = selection_samples(&mut network, &data, shape.windows, config.karcher_iterations).unwrap();
    let count = groups.iter().max().unwrap() + 1;
    let means: Vec<SpdMatrix> = (0..count)
        .map(|g| {
            let members: Vec<SpdMatrix> = samples
                .iter()
                .zip(&groups)
                .filter(|(_, &k)| k == g)
                .map(|(x, _)| x.clone())
                .collect();
            karcher_mean(&members, KarcherOptions::default()).unwrap().mean
        })
        .collect();
    let logs: Vec<DMatrix<f64>> = means.iter().map(|x| spd_log(x).unwrap().into_inner()).collect();
    let dist = DMatrix::from_fn(count, count, |i, j| airm_distance(&means[i], &means[j]).unwrap());
    let gamma_g = literal_gamma(&dist);
    subsets(shape.channels, config.m)
        .into_iter()
        .map(|s| {
            // tr(P Δ P Δ) with P the coordinate projector onto `s`.
            let mut f = 0.0;
            for i in 0..count {
                for j in 0..count {
                    let delta = &logs[i] - &logs[j];
                    let block: f64 = s
                        .iter()
                        .flat_map(|&a| s.iter().map(move |&b| (a, b)))
                        .map(|(a, b)| delta[(a, b)].powi(2))
                        .sum();
                    f -= gamma_g[(i, j)] * block;
                }
            }
            (s, f)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn channel_recovery(fits: &mut Vec<SelectionTransform>) -> Outcome {
    let config = selection_config(3);
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let spec = planted_spec(seed);
        let set = generate(&spec).unwrap();
        let fit = spdbci::train::fit_channel_selection(&config, &set).unwrap();
        let mut chosen = fit.selected_channels.clone();
        chosen.sort_unstable();
        let oracle = subset_oracle(&set, &config);
        pass &= chosen == spec.planted && oracle == spec.planted;
        lines.push(format!("seed {seed}: fit {chosen:?} oracle {oracle:?}"));
        fits.push(fit);
    }
    Outcome {
        pass,
        detail: format!("planted [1, 3, 5]; {}", lines.join(", ")),
    }
}

// ---- 4: gradients ----

fn gradient_suite() -> Outcome {
    const SEEDS: u64 = 50;
    let worst = |check: &dyn Fn(u64) -> f64| (0..SEEDS).map(check).fold(0.0, f64::max);
    let layers = [
        ("bimap", worst(&common::bimap)),
        ("reeig", worst(&common::reeig)),
        ("logeig", worst(&common::logeig)),
        ("rbn", worst(&|s| common::rbn(s, true, false))),
        ("rbn-inference", worst(&|s| common::rbn(s, false, false))),
        ("rbn-bias", worst(&|s| common::rbn(s, true, true))),
        ("network", worst(&common::network)),
    ];
    let mut head = [0.0f64; 4];
    for seed in 0..SEEDS {
        for (w, e) in head.iter_mut().zip(common::classifier(seed)) {
            *w = w.max(e);
        }
    }
    let drift = (0..10).map(|s| common::stiefel_drift(s, 100)).fold(0.0, f64::max);
    let all = layers.iter().map(|&(_, e)| e).chain(head).fold(0.0, f64::max);
    let names: Vec<String> = layers
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .chain(
            ["conv", "band-importance", "classifier", "feature-input"]
                .iter()
                .zip(head)
                .map(|(n, e)| format!("{n} {e:.1e}")),
        )
        .collect();
    Outcome {
        pass: all < common::TOL && drift < 1e-8,
        detail: format!(
            "max relative error {all:.1e} ({}); stiefel drift {drift:.1e}",
            names.join(", ")
        ),
    }
}

// ---- 5 and 6: end-to-end ----

const E2E_CHANNELS: usize = 10;
const E2E_SAMPLES: usize = 250;

fn e2e_spec() -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::ClassMeans,
        channels: E2E_CHANNELS,
        classes: 2,
        trials: 500,
        samples: E2E_SAMPLES,
        separation: 2.0,
        seed: 100,
        ..SyntheticSpec::default()
    }
}

fn e2e_split() -> (RawTrialSet, RawTrialSet) {
    let all = generate(&e2e_spec()).unwrap();
    let train: Vec<usize> = (0..400).collect();
    let test: Vec<usize> = (400..500).collect();
    (all.subset(&train), all.subset(&test))
}

fn holdout_accuracy(config: &TrainConfig, train: &RawTrialSet, test: &RawTrialSet) -> (f64, Duration) {
    let start = Instant::now();
    let (report, _) = evaluate_holdout(config, train, test).unwrap();
    (report.accuracy, start.elapsed())
}

fn end_to_end(train: &RawTrialSet, test: &RawTrialSet) -> (Outcome, Duration) {
    let separation = min_class_separation(&e2e_spec()).unwrap();
    let config = TrainConfig {
        m: 5,
        heads: 4,
        ..TrainConfig::default()
    };
    let (acc5, took) = holdout_accuracy(&config, train, test);
    let (acc8, _) = holdout_accuracy(&TrainConfig { m: 8, ..config.clone() }, train, test);
    let pass = separation >= 2.0 - 1e-9 && acc5 >= 0.90 && acc5 >= acc8 - 0.08 && took < Duration::from_secs(300);
    (
        Outcome {
            pass,
            detail: format!(
                "separation {separation:.3}, m=5 accuracy {acc5:.2} in {:.0}s over {} epochs, m=8 accuracy {acc8:.2}",
                took.as_secs_f64(),
                config.epochs
            ),
        },
        took,
    )
}

const HEAD_SEEDS: u64 = 5;
// Plain gradient descent at the default rate leaves the wider K=4 classifier
// visibly under-trained after 100 epochs, which would compare optimizer speed
// rather than capacity; both variants are trained with Adam instead.
const HEAD_EPOCHS: usize = 50;

fn multi_head(train: &RawTrialSet, test: &RawTrialSet) -> Outcome {
    let mean = |heads: usize| {
        let accs: Vec<f64> = (0..HEAD_SEEDS)
            .map(|seed| {
                let config = TrainConfig {
                    m: 3,
                    heads,
                    seed,
                    epochs: HEAD_EPOCHS,
                    optimizer: Optimizer::Adam,
                    ..TrainConfig::default()
                };
                holdout_accuracy(&config, train, test).0
            })
            .collect();
        (accs.iter().sum::<f64>() / accs.len() as f64, accs)
    };
    let (k1, accs1) = mean(1);
    let (k4, accs4) = mean(4);
    Outcome {
        pass: k4 >= k1 - 0.01,
        detail: format!("adam, {HEAD_EPOCHS} epochs, mean accuracy K=4 {k4:.3} {accs4:?} vs K=1 {k1:.3} {accs1:?}"),
    }
}

// ---- 7: parameter accounting ----

struct Arch {
    channels: usize,
    classes: usize,
    samples: usize,
    config: TrainConfig,
}

/// Scalar parameters from the architecture's shapes alone.
fn hand_count(a: &Arch) -> usize {
    let c = &a.config;
    let (n, f, k, m, maps) = (a.channels, c.bands.bands.len(), c.heads, c.m, c.conv_maps);
    let s = a.samples / c.window_len;
    let bimaps = c.bimap_layers * n * n;
    let biases = if c.rbn_bias { f * n * (n + 1) / 2 } else { 0 };
    let heads = k * n * m;
    let conv = maps * s * k * m * m + maps;
    let importance = 2 * f * (m / 2).max(1);
    let linear = a.classes * f * maps + a.classes;
    bimaps + biases + heads + conv + importance + linear
}

fn built_count(a: &Arch) -> usize {
    let set = generate(&SyntheticSpec {
        channels: a.channels,
        classes: a.classes,
        trials: 4 * a.classes,
        samples: a.samples,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let shape = DataShape::of(&a.config, &set);
    let data = prepare(&a.config, &set).unwrap();
    count_parameters(&Model::initialize(&a.config, shape, &data).unwrap())
}

fn parameter_accounting() -> Outcome {
    let default = Arch {
        channels: 22,
        classes: 4,
        samples: 1000,
        config: TrainConfig::default(),
    };
    let mut small = TrainConfig {
        m: 3,
        heads: 2,
        conv_maps: 2,
        bimap_layers: 1,
        window_len: 125,
        ..TrainConfig::default()
    };
    small.bands.bands = vec![(8.0, 12.0), (16.0, 24.0)];
    let biased = TrainConfig {
        m: 7,
        heads: 3,
        rbn_bias: true,
        ..TrainConfig::default()
    };
    let archs = [
        default,
        Arch {
            channels: 6,
            classes: 3,
            samples: 500,
            config: small,
        },
        Arch {
            channels: 12,
            classes: 2,
            samples: 750,
            config: biased,
        },
    ];
    let mut pass = true;
    let mut lines = Vec::new();
    for a in &archs {
        let (hand, built) = (hand_count(a), built_count(a));
        pass &= hand == built;
        lines.push(format!("{built} (hand {hand})"));
    }
    let default_count = hand_count(&archs[0]);
    pass &= (10_000..=200_000).contains(&default_count);
    Outcome {
        pass,
        detail: format!("counts {}; default {default_count} in [10K, 200K]", lines.join(", ")),
    }
}

// ---- 8: formats and reports ----

fn formats_and_reports() -> Outcome {
    let set = generate(&SyntheticSpec {
        channels: 6,
        trials: 40,
        samples: 250,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let bytes = trials_to_bytes(&set);
    let decoded = trials_from_bytes(&bytes).unwrap();
    let round_trip = decoded == set && trials_to_bytes(&decoded) == bytes;

    let mut r = rng(808);
    let mut missed = 0;
    let probes = 2000;
    for _ in 0..probes {
        let mut damaged = bytes.clone();
        let at = (gaussian(&mut r).abs() * 1e6) as usize % damaged.len();
        damaged[at] ^= 1 << (at % 8);
        if trials_from_bytes(&damaged).is_ok() {
            missed += 1;
        }
    }

    let mut config = TrainConfig {
        m: 3,
        heads: 2,
        conv_maps: 2,
        epochs: 2,
        batch_size: 8,
        window_len: 125,
        ..TrainConfig::default()
    };
    config.bands.bands = vec![(8.0, 12.0), (16.0, 20.0)];
    let cv = evaluate_cv(&config, &set, 5).unwrap();
    let folds = cv.folds.len() == 5;
    let mut seen: Vec<usize> = cv.folds.iter().flat_map(|f| f.test_indices.clone()).collect();
    seen.sort_unstable();
    let partition = seen == (0..set.len()).collect::<Vec<_>>();
    let fold_mean = cv.fold_accuracies().iter().sum::<f64>() / 5.0;
    let total: usize = cv.confusion.iter().flatten().sum();
    let correct: usize = (0..cv.confusion.len()).map(|c| cv.confusion[c][c]).sum();
    let fold_correct = cv.folds.iter().all(|f| {
        let hits = f
            .test_indices
            .iter()
            .zip(&f.predictions)
            .filter(|(&i, &p)| set.trials()[i].label as usize == p)
            .count();
        (hits as f64 / f.test_indices.len() as f64 - f.accuracy).abs() < 1e-12
    });
    let consistent = folds
        && partition
        && fold_correct
        && (fold_mean - cv.mean).abs() < 1e-12
        && total == set.len()
        && (correct as f64 / total as f64 - cv.accuracy).abs() < 1e-12;

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    std::fs::write(&first, cv.to_csv(false)).unwrap();
    std::fs::write(&second, evaluate_cv(&config, &set, 5).unwrap().to_csv(false)).unwrap();
    let identical = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();

    Outcome {
        pass: round_trip && missed == 0 && consistent && identical,
        detail: format!(
            "round-trip {round_trip}, {missed}/{probes} single-bit corruptions accepted, \
             cv report consistent {consistent}, rerun byte-identical {identical}"
        ),
    }
}

fn main() {
    let mut results = Vec::new();

    let (t, o) = timed(riemannian_core);
    results.push(report(1, "riemannian core", t, Some(Duration::from_secs(30)), o));

    let mut planted_fits = Vec::new();
    let (t3, o3) = timed(|| channel_recovery(&mut planted_fits));
    let (t2, o2) = timed(|| selection_optimality(&planted_fits));
    results.push(report(2, "selection optimality", t2, Some(Duration::from_secs(60)), o2));
    results.push(report(3, "channel recovery", t3, Some(Duration::from_secs(120)), o3));

    let (t, o) = timed(gradient_suite);
    results.push(report(4, "gradients", t, Some(Duration::from_secs(120)), o));

    let (train, test) = e2e_split();
    let start = Instant::now();
    let (o, _) = end_to_end(&train, &test);
    results.push(report(5, "end-to-end classification", start.elapsed(), None, o));

    let (t, o) = timed(|| multi_head(&train, &test));
    results.push(report(6, "multi-head non-inferiority", t, None, o));

    let (t, o) = timed(parameter_accounting);
    results.push(report(7, "parameter accounting", t, None, o));

    let (t, o) = timed(formats_and_reports);
    results.push(report(8, "formats and reports", t, None, o));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
