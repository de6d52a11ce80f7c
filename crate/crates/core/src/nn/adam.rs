//! Adaptive moment estimation over the tape's trainable leaves.

use ndarray::ArrayD;

use super::{fl, Graph, NodeId, Scalar};

/// Adam with bias correction; decay coefficients 0.9/0.999 and stability
/// epsilon 1e-8, updating parameters in place on the graph.
pub struct Adam<T: Scalar> {
    beta1: T,
    beta2: T,
    epsilon: T,
    step: usize,
    params: Vec<NodeId>,
    first_moment: Vec<ArrayD<T>>,
    second_moment: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(graph: &Graph<T>, params: Vec<NodeId>) -> Self {
        let first_moment = params
            .iter()
            .map(|&p| ArrayD::zeros(graph.value(p).raw_dim()))
            .collect();
        let second_moment = params
            .iter()
            .map(|&p| ArrayD::zeros(graph.value(p).raw_dim()))
            .collect();
        Adam {
            beta1: fl(0.9),
            beta2: fl(0.999),
            epsilon: fl(1e-8),
            step: 0,
            params,
            first_moment,
            second_moment,
        }
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    /// One update with a per-parameter learning rate (same order as
    /// `params`). Gradients must already be populated by `backward`.
    pub fn step(&mut self, graph: &mut Graph<T>, rates: &[T]) {
        assert_eq!(rates.len(), self.params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (idx, &param) in self.params.iter().enumerate() {
            let lr = rates[idx];
            let grad = graph.grad(param).clone();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let value = graph.value_mut(param);
            for ((mv, vv), (pv, gv)) in m
                .iter_mut()
                .zip(v.iter_mut())
                .zip(value.iter_mut().zip(grad.iter()))
            {
                *mv = self.beta1 * *mv + (T::one() - self.beta1) * *gv;
                *vv = self.beta2 * *vv + (T::one() - self.beta2) * *gv * *gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
