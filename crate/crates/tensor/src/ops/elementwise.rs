use crate::tape::{Backprop, Op};
use crate::{Float, Result, Tape, Tensor, TensorError, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Float> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        self.push(out, op, rg)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// `x + bias`, with `bias` broadcast along the trailing axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs.len() != 1 || xs.last() != bs.first() {
            return Err(TensorError::shape("add_bias", xs, bs));
        }
        let b = self.value(bias).data().to_vec();
        let vx = self.value(x);
        let data = vx
            .data()
            .chunks(b.len())
            .flat_map(|row| row.iter().zip(&b).map(|(&v, &c)| v + c))
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), move |v| if v > T::zero() { v } else { v * slope })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::cast(GELU_C);
        let a = T::cast(GELU_A);
        let half = T::cast(0.5);
        self.unary(x, Op::Gelu(x), move |v| {
            half * v * (T::one() + (c * (v + a * v * v * v)).tanh())
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }
}

pub(crate) fn softplus<T: Float>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(super) fn backward<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, g: &[T]) {
    match *op {
        Op::Add(a, b) => {
            bp.accumulate(a, g);
            bp.accumulate(b, g);
        }
        Op::Sub(a, b) => {
            bp.accumulate(a, g);
            if bp.wants(b) {
                bp.slot(b).iter_mut().zip(g).for_each(|(s, &d)| *s -= d);
            }
        }
        Op::Mul(a, b) => {
            let va = bp.value(a).data();
            let vb = bp.value(b).data();
            if bp.wants(a) {
                let s = bp.slot(a);
                for ((s, &d), &y) in s.iter_mut().zip(g).zip(vb) {
                    *s += d * y;
                }
            }
            if bp.wants(b) {
                let s = bp.slot(b);
                for ((s, &d), &x) in s.iter_mut().zip(g).zip(va) {
                    *s += d * x;
                }
            }
        }
        Op::Scale(x, c) => {
            if bp.wants(x) {
                bp.slot(x).iter_mut().zip(g).for_each(|(s, &d)| *s += d * c);
            }
        }
        Op::AddBias(x, bias) => {
            bp.accumulate(x, g);
            if bp.wants(bias) {
                let s = bp.slot(bias);
                let n = s.len();
                for row in g.chunks(n) {
                    s.iter_mut().zip(row).for_each(|(s, &d)| *s += d);
                }
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
}

pub(super) fn backward_unary<T: Float>(bp: &mut Backprop<'_, T>, op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    let x = match *op {
        Op::Relu(x) | Op::LeakyRelu(x, _) | Op::Gelu(x) | Op::Tanh(x) | Op::Softplus(x) => x,
        _ => unreachable!("not a unary op"),
    };
    if !bp.wants(x) {
        return;
    }
    let input = bp.value(x).data();
    let s = bp.slot(x);
    match *op {
        Op::Relu(_) => {
            for ((s, &d), &v) in s.iter_mut().zip(g).zip(input) {
                if v > T::zero() {
                    *s += d;
                }
            }
        }
        Op::LeakyRelu(_, slope) => {
            for ((s, &d), &v) in s.iter_mut().zip(g).zip(input) {
                *s += if v > T::zero() { d } else { d * slope };
            }
        }
        Op::Gelu(_) => {
            let c = T::cast(GELU_C);
            let a = T::cast(GELU_A);
            let half = T::cast(0.5);
            let three = T::cast(3.0);
            for ((s, &d), &v) in s.iter_mut().zip(g).zip(input) {
                let t = (c * (v + a * v * v * v)).tanh();
                let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                *s += d * (half * (T::one() + t) + half * v * dt);
            }
        }
        Op::Tanh(_) => {
            for ((s, &d), &y) in s.iter_mut().zip(g).zip(out.data()) {
                *s += d * (T::one() - y * y);
            }
        }
        Op::Softplus(_) => {
            for ((s, &d), &v) in s.iter_mut().zip(g).zip(input) {
                *s += d * sigmoid(v);
            }
        }
        _ => unreachable!(),
    }
}
