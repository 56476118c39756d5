use super::{Model, ModelGradients, Optimizer};
use crate::layers::stiefel;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl ModelGradients {
    /// Every gradient tensor as a flat slice, in a fixed order.
    fn for_each_tensor(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        let mut idx = 0;
        let mut visit = |s: &mut [f64]| {
            f(idx, s);
            idx += 1;
        };
        for g in &mut self.network.bimap {
            visit(g.as_mut_slice());
        }
        for g in self.network.rbn_log_bias.iter_mut().flatten() {
            visit(g.as_mut_slice());
        }
        for g in &mut self.heads {
            visit(g.as_mut_slice());
        }
        let c = &mut self.classifier;
        visit(c.conv_kernel.as_mut_slice());
        visit(c.conv_bias.as_mut_slice());
        visit(c.omega1.as_mut_slice());
        visit(c.omega2.as_mut_slice());
        visit(c.head_weight.as_mut_slice());
        visit(c.head_bias.as_mut_slice());
    }
}

/// Optimizer state; plain SGD keeps none.
#[derive(Debug, Clone)]
pub(crate) struct OptimizerState {
    kind: Optimizer,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update. Stiefel-constrained weights move along the
    /// tangent-projected direction followed by a QR retraction.
    pub(crate) fn update(&mut self, model: &mut Model, mut grads: ModelGradients, rate: f64) {
        if self.kind == Optimizer::Adam {
            self.step += 1;
            let c1 = 1.0 - BETA1.powi(self.step);
            let c2 = 1.0 - BETA2.powi(self.step);
            let (first, second) = (&mut self.first, &mut self.second);
            grads.for_each_tensor(|i, g| {
                if first.len() <= i {
                    first.push(vec![0.0; g.len()]);
                    second.push(vec![0.0; g.len()]);
                }
                for ((v, m), s) in g.iter_mut().zip(first[i].iter_mut()).zip(second[i].iter_mut()) {
                    *m = BETA1 * *m + (1.0 - BETA1) * *v;
                    *s = BETA2 * *s + (1.0 - BETA2) * *v * *v;
                    *v = (*m / c1) / ((*s / c2).sqrt() + EPS);
                }
            });
            for (g, layer) in grads.network.bimap.iter_mut().zip(model.network.bimaps()) {
                if layer.enforces_orthonormal() {
                    *g = stiefel::project_tangent(&layer.weight().transpose(), &g.transpose()).transpose();
                }
            }
            for (g, w) in grads.heads.iter_mut().zip(model.heads.heads()) {
                *g = stiefel::project_tangent(w, g);
            }
        }
        model.network.step(&grads.network, rate);
        model.heads.step(&grads.heads, rate);
        model.classifier.step(&grads.classifier, rate);
    }
}
