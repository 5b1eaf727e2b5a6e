//! Shared finite-difference oracle for unit tests.
//!
//! Independent of the autodiff path: it only re-evaluates the forward loss
//! at perturbed parameter values.

use crate::nn::Module;
use crate::tensor::{Graph, Tensor};
use crate::Result;

fn set_param_element<M: Module>(module: &mut M, param_idx: usize, elem: usize, value: f64) -> f64 {
    let mut seen = 0usize;
    let mut old = f64::NAN;
    module.visit_params("", &mut |_, t| {
        if seen == param_idx {
            let mut data = t.data().to_vec();
            old = data[elem];
            data[elem] = value;
            *t = Tensor::param(t.shape().to_vec(), data);
        }
        seen += 1;
    });
    old
}

/// Max relative error between autodiff gradients and central finite
/// differences (step 1e-5) over every parameter element of `module`.
pub(crate) fn max_rel_err_fd<M: Module>(
    module: &mut M,
    mut loss: impl FnMut(&mut M, &mut Graph) -> Result<Tensor>,
) -> f64 {
    let mut graph = Graph::recording();
    let root = loss(module, &mut graph).expect("loss forward failed");
    let grads = graph.backward(&root).expect("backward failed");

    let mut sizes = Vec::new();
    let mut autodiff = Vec::new();
    module.visit_params("", &mut |_, t| {
        sizes.push(t.numel());
        autodiff.push(grads.dense(t));
    });

    let mut eval = |m: &mut M| -> f64 {
        let mut g = Graph::inference();
        loss(m, &mut g)
            .and_then(|t| t.scalar_value())
            .expect("loss eval failed")
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let orig = set_param_element(module, p, i, 0.0);
            set_param_element(module, p, i, orig + h);
            let up = eval(module);
            set_param_element(module, p, i, orig - h);
            let down = eval(module);
            set_param_element(module, p, i, orig);
            let fd = (up - down) / (2.0 * h);
            let rel = (autodiff[p][i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}
