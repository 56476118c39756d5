//! Finite-difference gradient checks shared by the integration suites.
//!
//! Every check draws a random scalar loss `L = Σᵢ ⟨Cᵢ, outᵢ⟩` (or cross-entropy
//! for the classifier), a random direction `V`, and compares the analytic
//! directional derivative `⟨∇L, V⟩` with the central difference
//! `(L(θ + hV) − L(θ − hV)) / 2h`. Each function returns the largest relative
//! error it saw.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use spdbci::classifier::{loss, loss_gradient, ClassifierShape, TangentClassifier, TangentFeatureMap};
use spdbci::layers::stiefel::{project_tangent, retract};
use spdbci::layers::{BiMapLayer, LogEigLayer, ManifoldNetwork, RbnLayer, ReEigLayer};
use spdbci::random::{gaussian, gaussian_matrix, random_spd, random_stiefel, random_sym, rng, SeededRng};
use spdbci::spd::{SpdMatrix, SymMatrix};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-10)
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn syms(n: usize, count: usize, r: &mut SeededRng) -> Vec<DMatrix<f64>> {
    (0..count).map(|_| random_sym(n, r)).collect()
}

fn shift(batch: &[DMatrix<f64>], dir: &[DMatrix<f64>], t: f64) -> Vec<DMatrix<f64>> {
    batch.iter().zip(dir).map(|(x, d)| x + d * t).collect()
}

fn spd_batch(batch: &[DMatrix<f64>]) -> Vec<SpdMatrix> {
    batch.iter().map(|x| SpdMatrix::new(x.clone()).unwrap()).collect()
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

fn pairing(out: Vec<SpdMatrix>, c: &[DMatrix<f64>]) -> f64 {
    out.iter().zip(c).map(|(o, c)| o.dot(c)).sum()
}

fn pairing_sym(out: Vec<SymMatrix>, c: &[DMatrix<f64>]) -> f64 {
    out.iter().zip(c).map(|(o, c)| o.dot(c)).sum()
}

/// BiMap input gradient and Stiefel-projected weight gradient.
pub fn bimap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m_in, m_out, n) = (5, 3, 4);
    let w = random_stiefel(m_in, m_out, &mut r).transpose();
    let x: Vec<DMatrix<f64>> = (0..n).map(|_| random_spd(m_in, &mut r).into_inner()).collect();
    let c = syms(m_out, n, &mut r);
    let mut layer = BiMapLayer::new(w.clone(), true).unwrap();
    layer.forward(&spd_batch(&x)).unwrap();
    let (gx, gw) = layer.backward(&c).unwrap();

    let eval = |w: &DMatrix<f64>, x: &[DMatrix<f64>]| {
        let l = BiMapLayer::new(w.clone(), false).unwrap();
        pairing(l.apply(&spd_batch(x)).unwrap(), &c)
    };
    let v = syms(m_in, n, &mut r);
    let e1 = rel_err(dot(&gx, &v), central(|t| eval(&w, &shift(&x, &v, t))));
    let xi = project_tangent(&w.transpose(), &gaussian_matrix(m_in, m_out, &mut r)).transpose();
    let e2 = rel_err(gw.dot(&xi), central(|t| eval(&(&w + &xi * t), &x)));
    e1.max(e2)
}

/// ReEig input gradient with some eigenvalues clamped well below ε.
pub fn reeig(seed: u64) -> f64 {
    let mut r = rng(seed);
    let eps = 1e-3;
    let n = 5;
    let x: Vec<DMatrix<f64>> = (0..3)
        .map(|_| {
            let q = random_stiefel(n, n, &mut r);
            let d = DVector::from_vec(vec![2.0, 0.7, 0.05, 2e-4, 1e-5]);
            &q * DMatrix::from_diagonal(&d) * q.transpose()
        })
        .collect();
    let c = syms(n, 3, &mut r);
    let mut layer = ReEigLayer::new(eps).unwrap();
    layer.forward(&x).unwrap();
    let g = layer.backward(&c).unwrap();
    // Keep the perturbation small enough that no eigenvalue crosses ε.
    let v: Vec<DMatrix<f64>> = syms(n, 3, &mut r).into_iter().map(|d| d * 0.5).collect();
    rel_err(
        dot(&g, &v),
        central(|t| pairing(layer.apply(&shift(&x, &v, t)).unwrap(), &c)),
    )
}

pub fn logeig(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 5;
    let x: Vec<DMatrix<f64>> = (0..3).map(|_| random_spd(n, &mut r).into_inner()).collect();
    let c = syms(n, 3, &mut r);
    let mut layer = LogEigLayer::new();
    layer.forward(&spd_batch(&x)).unwrap();
    let g = layer.backward(&c).unwrap();
    let v = syms(n, 3, &mut r);
    rel_err(
        dot(&g, &v),
        central(|t| pairing_sym(layer.apply(&spd_batch(&shift(&x, &v, t))).unwrap(), &c)),
    )
}

/// RBN in training mode (through the unrolled Karcher iterations) or
/// inference mode, with or without the learned bias.
pub fn rbn(seed: u64, training: bool, bias: bool) -> f64 {
    let mut r = rng(seed);
    let (dim, n) = (4, 6);
    let x: Vec<DMatrix<f64>> = (0..n).map(|_| random_spd(dim, &mut r).into_inner()).collect();
    let c = syms(dim, n, &mut r);
    let mut layer = RbnLayer::new(dim, 10, 0.9, bias).unwrap();
    layer.set_running_mean(random_spd(dim, &mut r)).unwrap();
    if bias {
        let mut b = random_sym(dim, &mut r) * 0.3;
        b = (&b + b.transpose()) * 0.5;
        layer = with_bias(layer, b);
    }
    let base = layer.clone();
    let eval = |layer: &RbnLayer, x: &[DMatrix<f64>]| {
        let mut l = layer.clone();
        pairing(l.forward(&spd_batch(x), training).unwrap(), &c)
    };
    layer.forward(&spd_batch(&x), training).unwrap();
    let g = layer.backward(&c).unwrap();
    let v = syms(dim, n, &mut r);
    let mut worst = rel_err(dot(&g.inputs, &v), central(|t| eval(&base, &shift(&x, &v, t))));
    if bias {
        let gb = g.log_bias.unwrap();
        let d = random_sym(dim, &mut r);
        let b0 = base.log_bias().unwrap().clone();
        let numeric = central(|t| eval(&with_bias(base.clone(), &b0 + &d * t), &x));
        worst = worst.max(rel_err(gb.dot(&d), numeric));
    }
    worst
}

/// Sets the log-bias through a bias-gradient step from zero.
fn with_bias(mut layer: RbnLayer, bias: DMatrix<f64>) -> RbnLayer {
    let current = layer.log_bias().unwrap().clone();
    layer.step_bias(&(current - bias), 1.0);
    layer
}

/// Whole feature extractor: input gradients and every BiMap weight.
pub fn network(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (dim, bands, per_band) = (4, 2, 3);
    let bimaps = (0..2)
        .map(|_| BiMapLayer::new(random_stiefel(dim, dim, &mut r).transpose(), true).unwrap())
        .collect::<Vec<_>>();
    let rbn = (0..bands)
        .map(|_| RbnLayer::new(dim, 10, 0.9, false).unwrap())
        .collect();
    let net = ManifoldNetwork::from_parts(bimaps, ReEigLayer::new(1e-4).unwrap(), rbn).unwrap();
    let x: Vec<DMatrix<f64>> = (0..bands * per_band)
        .map(|_| random_spd(dim, &mut r).into_inner())
        .collect();
    let c = syms(dim, x.len(), &mut r);
    let eval = |net: &ManifoldNetwork, x: &[DMatrix<f64>]| {
        let mut n = net.clone();
        pairing_sym(n.forward(&spd_batch(x), true).unwrap(), &c)
    };
    let mut trained = net.clone();
    trained.forward(&spd_batch(&x), true).unwrap();
    let (gx, grads) = trained.backward(&c).unwrap();
    let v = syms(dim, x.len(), &mut r);
    let mut worst = rel_err(dot(&gx, &v), central(|t| eval(&net, &shift(&x, &v, t))));
    for (idx, gw) in grads.bimap.iter().enumerate() {
        let w = net.bimaps()[idx].weight().clone();
        let xi = project_tangent(&w.transpose(), &gaussian_matrix(dim, dim, &mut r)).transpose();
        let numeric = central(|t| {
            let mut bimaps = net.bimaps().to_vec();
            bimaps[idx] = BiMapLayer::new(&w + &xi * t, false).unwrap();
            let moved =
                ManifoldNetwork::from_parts(bimaps, ReEigLayer::new(1e-4).unwrap(), net.rbn().to_vec()).unwrap();
            eval(&moved, &x)
        });
        worst = worst.max(rel_err(gw.dot(&xi), numeric));
    }
    worst
}

/// Classifier checks: `[conv kernel + bias, band-importance ω₁ + ω₂, linear head, input map]`.
pub fn classifier(seed: u64) -> [f64; 4] {
    let shape = ClassifierShape {
        bands: 3,
        windows: 2,
        heads: 2,
        m: 3,
        conv_maps: 4,
        classes: 3,
    };
    let clf = TangentClassifier::new(shape, seed).unwrap();
    let mut r = rng(seed + 1_000_000);
    let data: Vec<f64> = (0..shape.bands * shape.kernel_len())
        .map(|_| gaussian(&mut r))
        .collect();
    let fmap = TangentFeatureMap::new(shape.bands, shape.windows, shape.feature_width(), data.clone()).unwrap();
    let label = (seed % 3) as usize;
    let fwd = clf.forward(fmap.clone()).unwrap();
    let (grads, d_fmap) = clf.backward(&fwd, &loss_gradient(&fwd.logits, label).unwrap());
    let eval =
        |c: &TangentClassifier, f: &TangentFeatureMap| loss(&c.forward(f.clone()).unwrap().logits, label).unwrap();

    let analytic = grads.tensors();
    let mut param_err = [0.0f64; 6];
    for (t, err) in param_err.iter_mut().enumerate() {
        let dir: Vec<f64> = (0..analytic[t].len()).map(|_| gaussian(&mut r)).collect();
        let want: f64 = analytic[t].iter().zip(&dir).map(|(a, b)| a * b).sum();
        let numeric = central(|h| {
            let mut moved = clf.clone();
            for (p, d) in moved.tensors_mut()[t].iter_mut().zip(&dir) {
                *p += h * d;
            }
            eval(&moved, &fmap)
        });
        *err = rel_err(want, numeric);
    }
    let dir: Vec<f64> = (0..data.len()).map(|_| gaussian(&mut r)).collect();
    let want: f64 = d_fmap.as_slice().iter().zip(&dir).map(|(a, b)| a * b).sum();
    let numeric = central(|h| {
        let moved = data.iter().zip(&dir).map(|(x, d)| x + h * d).collect();
        eval(
            &clf,
            &TangentFeatureMap::new(shape.bands, shape.windows, shape.feature_width(), moved).unwrap(),
        )
    });
    [
        param_err[0].max(param_err[1]),
        param_err[2].max(param_err[3]),
        param_err[4].max(param_err[5]),
        rel_err(want, numeric),
    ]
}

/// `‖WᵀW − I‖_F` after `steps` retractions along random projected gradients.
pub fn stiefel_drift(seed: u64, steps: usize) -> f64 {
    let mut r = rng(seed);
    let mut w = random_stiefel(8, 4, &mut r);
    for _ in 0..steps {
        let g = project_tangent(&w, &gaussian_matrix(8, 4, &mut r));
        w = retract(&w, &g, 0.1);
    }
    (w.transpose() * &w - DMatrix::identity(4, 4)).norm()
}
