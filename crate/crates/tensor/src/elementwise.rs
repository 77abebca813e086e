//! Elementwise unary and binary operations.

use crate::op::{BinaryKind, Op, UnaryKind};
use crate::{Result, Tensor, TensorError};

use crate::fastmath::fast_tanh;

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn gelu_tanh(x: f32) -> f32 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn unary_forward(kind: UnaryKind, x: f32) -> f32 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Recip => 1.0 / x,
        UnaryKind::Gelu => gelu_tanh(x),
        UnaryKind::Scale(s) => x * s,
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::Clamp(lo, hi) => x.clamp(lo, hi),
        UnaryKind::WrapHalfTurn => {
            if x < 0.0 {
                x + std::f32::consts::PI
            } else {
                x
            }
        }
    }
}

fn unary_derivative(kind: UnaryKind, x: f32, y: f32) -> f32 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Square => 2.0 * x,
        // Subgradient 0 at the origin keeps chains like sqrt(s1^2 + s2^2)
        // finite on unpolarized pixels.
        UnaryKind::Sqrt => {
            if y > 1e-12 {
                0.5 / y
            } else {
                0.0
            }
        }
        UnaryKind::Recip => -y * y,
        UnaryKind::Gelu => {
            let u = GELU_C * (x + GELU_A * x * x * x);
            let t = fast_tanh(u);
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        }
        UnaryKind::Scale(s) => s,
        UnaryKind::AddScalar(_) => 1.0,
        UnaryKind::Clamp(lo, hi) => {
            if x > lo && x < hi {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::WrapHalfTurn => 1.0,
    }
}

/// Scale `gout` in place by the local derivative; the caller then moves the
/// buffer into the input's gradient slot.
pub(crate) fn unary_backward_inplace(kind: UnaryKind, x: &[f32], y: &[f32], gout: &mut [f32]) {
    match kind {
        // constant derivatives
        UnaryKind::AddScalar(_) | UnaryKind::WrapHalfTurn => {}
        UnaryKind::Neg => {
            for g in gout.iter_mut() {
                *g = -*g;
            }
        }
        UnaryKind::Scale(s) => {
            for g in gout.iter_mut() {
                *g *= s;
            }
        }
        UnaryKind::Square => {
            for (x, g) in x.iter().zip(gout.iter_mut()) {
                *g *= 2.0 * x;
            }
        }
        UnaryKind::Gelu => {
            for (x, g) in x.iter().zip(gout.iter_mut()) {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = fast_tanh(u);
                *g *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
            }
        }
        _ => {
            for ((x, y), g) in x.iter().zip(y).zip(gout.iter_mut()) {
                *g *= unary_derivative(kind, *x, *y);
            }
        }
    }
}

/// Turn `gout` into the gradient of operand `a` in place (when needed) and
/// return a freshly built gradient for operand `b` (when needed).
pub(crate) fn binary_backward_inplace(
    kind: BinaryKind,
    a: &[f32],
    b: &[f32],
    y: &[f32],
    gout: &mut [f32],
    need_a: bool,
    need_b: bool,
) -> Option<Vec<f32>> {
    let n = a.len();
    let gb = if need_b {
        let mut gb = vec![0.0f32; n];
        match kind {
            BinaryKind::Add => gb.copy_from_slice(gout),
            BinaryKind::Sub => {
                for (gb, g) in gb.iter_mut().zip(gout.iter()) {
                    *gb = -g;
                }
            }
            BinaryKind::Mul => {
                for i in 0..n {
                    gb[i] = gout[i] * a[i];
                }
            }
            BinaryKind::Div => {
                for i in 0..n {
                    gb[i] = -gout[i] * y[i] / b[i];
                }
            }
            BinaryKind::Atan2 => {
                for i in 0..n {
                    let d = a[i] * a[i] + b[i] * b[i];
                    gb[i] = if d > 1e-24 { -gout[i] * a[i] / d } else { 0.0 };
                }
            }
        }
        Some(gb)
    } else {
        None
    };
    if need_a {
        match kind {
            BinaryKind::Add | BinaryKind::Sub => {}
            BinaryKind::Mul => {
                for i in 0..n {
                    gout[i] *= b[i];
                }
            }
            BinaryKind::Div => {
                for i in 0..n {
                    gout[i] /= b[i];
                }
            }
            BinaryKind::Atan2 => {
                for i in 0..n {
                    let d = a[i] * a[i] + b[i] * b[i];
                    gout[i] = if d > 1e-24 { gout[i] * b[i] / d } else { 0.0 };
                }
            }
        }
    }
    gb
}

impl Tensor {
    fn unary(&self, kind: UnaryKind) -> Tensor {
        // dispatch once per call so each kind gets its own vectorized loop
        let src = self.data.as_slice();
        let data: Vec<f32> = match kind {
            UnaryKind::Neg => src.iter().map(|&x| -x).collect(),
            UnaryKind::Abs => src.iter().map(|&x| x.abs()).collect(),
            UnaryKind::Square => src.iter().map(|&x| x * x).collect(),
            UnaryKind::Sqrt => src.iter().map(|&x| x.sqrt()).collect(),
            UnaryKind::Recip => src.iter().map(|&x| 1.0 / x).collect(),
            UnaryKind::Gelu => src.iter().map(|&x| gelu_tanh(x)).collect(),
            UnaryKind::Scale(s) => src.iter().map(|&x| x * s).collect(),
            UnaryKind::AddScalar(c) => src.iter().map(|&x| x + c).collect(),
            UnaryKind::Clamp(lo, hi) => src.iter().map(|&x| x.clamp(lo, hi)).collect(),
            UnaryKind::WrapHalfTurn => src
                .iter()
                .map(|&x| unary_forward(UnaryKind::WrapHalfTurn, x))
                .collect(),
        };
        let rg = self.requires_grad();
        self.tape
            .push(Op::Unary { x: self.node, kind }, self.shape.clone(), data, rg)
    }

    fn binary(&self, rhs: &Tensor, kind: BinaryKind, name: &'static str) -> Result<Tensor> {
        self.same_tape(rhs, name)?;
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (lhs, rhsd) = (self.data.as_slice(), rhs.data.as_slice());
        let zip = lhs.iter().zip(rhsd.iter());
        let data: Vec<f32> = match kind {
            BinaryKind::Add => zip.map(|(&a, &b)| a + b).collect(),
            BinaryKind::Sub => zip.map(|(&a, &b)| a - b).collect(),
            BinaryKind::Mul => zip.map(|(&a, &b)| a * b).collect(),
            BinaryKind::Div => zip.map(|(&a, &b)| a / b).collect(),
            BinaryKind::Atan2 => zip.map(|(&a, &b)| a.atan2(b)).collect(),
        };
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(
            Op::Binary {
                a: self.node,
                b: rhs.node,
                kind,
            },
            self.shape.clone(),
            data,
            rg,
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(UnaryKind::Neg)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(UnaryKind::Abs)
    }

    pub fn square(&self) -> Result<Tensor> {
        Ok(self.unary(UnaryKind::Square))
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn recip(&self) -> Tensor {
        self.unary(UnaryKind::Recip)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        self.unary(UnaryKind::Gelu)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.unary(UnaryKind::Scale(s))
    }

    pub fn add_scalar(&self, c: f32) -> Tensor {
        self.unary(UnaryKind::AddScalar(c))
    }

    /// Clamp with zero gradient outside (lo, hi).
    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.unary(UnaryKind::Clamp(lo, hi))
    }

    pub fn clamp_min(&self, lo: f32) -> Tensor {
        self.unary(UnaryKind::Clamp(lo, f32::INFINITY))
    }

    /// Wrap values in (-pi/2, pi/2] into [0, pi) by adding pi where negative.
    /// Identity gradient; the jump is piecewise constant.
    pub fn wrap_half_turn(&self) -> Tensor {
        self.unary(UnaryKind::WrapHalfTurn)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Add, "add")
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Mul, "mul")
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Div, "div")
    }

    /// `self.atan2(x)` elementwise, self being the y argument.
    pub fn atan2(&self, x: &Tensor) -> Result<Tensor> {
        self.binary(x, BinaryKind::Atan2, "atan2")
    }

    /// Multiply by a one-element tensor, broadcast over all elements.
    pub fn mul_broadcast(&self, s: &Tensor) -> Result<Tensor> {
        self.same_tape(s, "mul_broadcast")?;
        if s.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "mul_broadcast",
                lhs: self.shape.clone(),
                rhs: s.shape.clone(),
            });
        }
        let sv = s.data[0];
        let data: Vec<f32> = self.data.iter().map(|x| x * sv).collect();
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.tape.push(
            Op::MulBroadcast {
                x: self.node,
                s: s.node,
            },
            self.shape.clone(),
            data,
            rg,
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::Tape;

    #[test]
    fn gelu_fixed_points() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0, 3.0], &[2], false).unwrap();
        let y = x.gelu();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2.9964).abs() < 1e-3, "gelu(3) = {}", y.data()[1]);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let tape = Tape::new();
        let x = tape.leaf(vec![-0.5, 0.5, 1.5], &[3], true).unwrap();
        let y = x.clamp(0.0, 1.0);
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
        let loss = y.sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn wrap_half_turn_adds_pi_below_zero() {
        let tape = Tape::new();
        let x = tape.leaf(vec![-0.3, 0.4], &[2], false).unwrap();
        let y = x.wrap_half_turn();
        assert!((y.data()[0] - (std::f32::consts::PI - 0.3)).abs() < 1e-6);
        assert_eq!(y.data()[1], 0.4);
    }

    #[test]
    fn atan2_quadrants() {
        let tape = Tape::new();
        let y = tape.leaf(vec![1.0, 0.0, -1.0], &[3], false).unwrap();
        let x = tape.leaf(vec![0.0, 1.0, 0.0], &[3], false).unwrap();
        let a = y.atan2(&x).unwrap();
        assert!((a.data()[0] - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
        assert_eq!(a.data()[1], 0.0);
        assert!((a.data()[2] + std::f32::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn mul_broadcast_grad_sums_over_elements() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
        let s = tape.leaf(vec![2.0], &[1], true).unwrap();
        let y = x.mul_broadcast(&s).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
        let grads = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(&s).unwrap(), &[6.0]);
    }

    #[test]
    fn sqrt_guard_keeps_zero_input_finite() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0, 4.0], &[2], true).unwrap();
        let loss = x.sqrt().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(&x).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.25).abs() < 1e-6);
    }
}
