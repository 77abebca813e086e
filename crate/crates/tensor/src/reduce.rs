//! Full reductions. Accumulation runs in f64 so large activations do not lose
//! low-order bits before the result is stored back as f32.

use crate::op::Op;
use crate::{Result, Tensor};

impl Tensor {
    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().map(|&v| v as f64).sum();
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(Op::SumAll { x: self.node }, vec![1], vec![s as f32], rg))
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean_all(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(crate::config_err("mean_all", "empty tensor"));
        }
        let s: f64 = self.data.iter().map(|&v| v as f64).sum();
        let mean = (s / self.numel() as f64) as f32;
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(Op::MeanAll { x: self.node }, vec![1], vec![mean], rg))
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }
}

#[cfg(test)]
mod tests {
    use crate::Tape;

    #[test]
    fn mean_grad_is_uniform() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[4], true).unwrap();
        let m = x.mean_all().unwrap();
        assert!((m.item() - 2.5).abs() < 1e-6);
        let grads = m.backward().unwrap();
        for g in grads.get(&x).unwrap() {
            assert!((g - 0.25).abs() < 1e-7);
        }
    }
}
