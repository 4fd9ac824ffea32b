use super::tensor::{self, broadcast_shape, ConvGeom, Real, Tensor};
use super::Var;

pub(crate) enum Op<T: Real> {
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Div(Var<T>, Var<T>),
    Neg(Var<T>),
    Scale(Var<T>, T),
    Shift(Var<T>),
    Powf(Var<T>, T),
    Tanh(Var<T>),
    Sigmoid(Var<T>),
    Softplus(Var<T>),
    LeakyRelu(Var<T>, T),
    SafeSqrt(Var<T>),
    SafeRecip(Var<T>),
    Sum(Var<T>),
    BroadcastTo(Var<T>),
    SumTo(Var<T>),
    Reshape(Var<T>),
    Matmul { a: Var<T>, b: Var<T>, ta: bool, tb: bool },
    Im2col(Var<T>, ConvGeom),
    Col2im(Var<T>, ConvGeom),
    Upsample2(Var<T>),
    SumPool2(Var<T>),
    Narrow { x: Var<T>, axis: usize, start: usize },
    Pad { x: Var<T>, axis: usize, start: usize },
}

impl<T: Real> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Var<T>> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![a, b],
            Matmul { a, b, .. } => vec![a, b],
            Neg(a) | Scale(a, _) | Shift(a) | Powf(a, _) | Tanh(a) | Sigmoid(a) | Softplus(a)
            | LeakyRelu(a, _) | SafeSqrt(a) | SafeRecip(a) | Sum(a) | BroadcastTo(a)
            | SumTo(a) | Reshape(a) | Im2col(a, _) | Col2im(a, _) | Upsample2(a)
            | SumPool2(a) => vec![a],
            Narrow { x, .. } | Pad { x, .. } => vec![x],
        }
    }

    /// Vector-Jacobian products for the parents selected by `needs`.
    pub(crate) fn backward(
        &self,
        out: &Var<T>,
        g: &Var<T>,
        needs: &dyn Fn(&Var<T>) -> bool,
    ) -> Vec<(Var<T>, Var<T>)> {
        use Op::*;
        let mut res = Vec::with_capacity(2);
        let mut push = |p: &Var<T>, f: &dyn Fn() -> Var<T>| {
            if needs(p) {
                res.push((p.clone(), f()));
            }
        };
        match self {
            Add(a, b) => {
                push(a, &|| g.clone());
                push(b, &|| g.clone());
            }
            Sub(a, b) => {
                push(a, &|| g.clone());
                push(b, &|| g.neg());
            }
            Mul(a, b) => {
                push(a, &|| g.mul(b));
                push(b, &|| g.mul(a));
            }
            Div(a, b) => {
                push(a, &|| g.div(b));
                push(b, &|| g.mul(out).div(b).neg());
            }
            Neg(a) => push(a, &|| g.neg()),
            Scale(a, c) => push(a, &|| g.scale(*c)),
            Shift(a) => push(a, &|| g.clone()),
            Powf(a, p) => push(a, &|| g.mul(&a.powf(*p - T::one())).scale(*p)),
            Tanh(a) => push(a, &|| g.mul(&out.mul(out).neg().shift(T::one()))),
            Sigmoid(a) => push(a, &|| g.mul(out).mul(&out.neg().shift(T::one()))),
            Softplus(a) => push(a, &|| g.mul(&a.sigmoid())),
            LeakyRelu(a, slope) => push(a, &|| {
                let mask = a.value().map(|v| if v > T::zero() { T::one() } else { *slope });
                g.mul(&Var::constant(mask))
            }),
            SafeSqrt(a) => push(a, &|| g.mul(&out.safe_recip()).scale(T::lit(0.5))),
            SafeRecip(a) => push(a, &|| g.mul(out).mul(out).neg()),
            Sum(a) => push(a, &|| g.broadcast_to(a.shape())),
            BroadcastTo(a) => push(a, &|| g.sum_to(a.shape())),
            SumTo(a) => push(a, &|| g.broadcast_to(a.shape())),
            Reshape(a) => push(a, &|| g.reshape(a.shape())),
            Matmul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                push(a, &|| {
                    let ga = if ta {
                        b.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(b, false, !tb)
                    };
                    ga.sum_to(a.shape())
                });
                push(b, &|| {
                    let gb = if tb {
                        g.matmul_t(a, true, ta)
                    } else {
                        a.matmul_t(g, !ta, false)
                    };
                    gb.sum_to(b.shape())
                });
            }
            Im2col(a, geom) => push(a, &|| g.col2im(*geom)),
            Col2im(a, geom) => push(a, &|| g.im2col(*geom)),
            Upsample2(a) => push(a, &|| g.sum_pool2()),
            SumPool2(a) => push(a, &|| g.upsample2()),
            Narrow { x, axis, start } => push(x, &|| g.pad_axis(*axis, *start, x.shape()[*axis])),
            Pad { x, axis, start } => push(x, &|| g.narrow(*axis, *start, x.shape()[*axis])),
        }
        res
    }
}

fn unary<T: Real>(a: &Var<T>, f: impl Fn(T) -> T, op: Op<T>) -> Var<T> {
    Var::from_op(a.value().map(f), op)
}

impl<T: Real> Var<T> {
    /// Broadcasts both operands to a common shape, recording the expansion.
    fn align(&self, other: &Var<T>) -> (Var<T>, Var<T>) {
        if self.shape() == other.shape() {
            return (self.clone(), other.clone());
        }
        let shape = broadcast_shape(self.shape(), other.shape()).unwrap_or_else(|| {
            panic!("shapes {:?} and {:?} do not broadcast", self.shape(), other.shape())
        });
        (self.broadcast_to(&shape), other.broadcast_to(&shape))
    }

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = self.align(other);
        let v = a.value().zip_map(b.value(), |x, y| x + y);
        Var::from_op(v, Op::Add(a, b))
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = self.align(other);
        let v = a.value().zip_map(b.value(), |x, y| x - y);
        Var::from_op(v, Op::Sub(a, b))
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = self.align(other);
        let v = a.value().zip_map(b.value(), |x, y| x * y);
        Var::from_op(v, Op::Mul(a, b))
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = self.align(other);
        let v = a.value().zip_map(b.value(), |x, y| x / y);
        Var::from_op(v, Op::Div(a, b))
    }

    pub fn neg(&self) -> Var<T> {
        unary(self, |x| -x, Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: T) -> Var<T> {
        unary(self, |x| x * c, Op::Scale(self.clone(), c))
    }

    /// Adds a constant to every element.
    pub fn shift(&self, c: T) -> Var<T> {
        unary(self, |x| x + c, Op::Shift(self.clone()))
    }

    pub fn powf(&self, p: T) -> Var<T> {
        unary(self, |x| x.powf(p), Op::Powf(self.clone(), p))
    }

    pub fn square(&self) -> Var<T> {
        self.mul(self)
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, |x| x.tanh(), Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(self, sigmoid, Op::Sigmoid(self.clone()))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Var<T> {
        unary(
            self,
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            Op::Softplus(self.clone()),
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Var<T> {
        unary(
            self,
            |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn safe_sqrt(&self) -> Var<T> {
        unary(self, |x| x.max(T::zero()).sqrt(), Op::SafeSqrt(self.clone()))
    }

    /// `1/x`, with `1/0` taken as `0`.
    pub fn safe_recip(&self) -> Var<T> {
        unary(
            self,
            |x| if x == T::zero() { T::zero() } else { x.recip() },
            Op::SafeRecip(self.clone()),
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<T> {
        Var::from_op(Tensor::scalar(self.value().sum()), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().numel();
        self.sum().scale(T::one() / T::from(n).unwrap())
    }

    /// Euclidean norm over all elements, with zero gradient at the origin.
    pub fn l2_norm(&self) -> Var<T> {
        self.square().sum().safe_sqrt()
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(
            tensor::broadcast_to(self.value(), shape),
            Op::BroadcastTo(self.clone()),
        )
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(tensor::sum_to(self.value(), shape), Op::SumTo(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(
            self.value().clone().reshaped(shape.to_vec()),
            Op::Reshape(self.clone()),
        )
    }

    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        self.matmul_t(other, false, false)
    }

    /// Batched matmul with optional transposition of either operand's last
    /// two axes. Rank-2 operands are shared across the batch.
    pub fn matmul_t(&self, other: &Var<T>, ta: bool, tb: bool) -> Var<T> {
        Var::from_op(
            tensor::matmul(self.value(), other.value(), ta, tb),
            Op::Matmul {
                a: self.clone(),
                b: other.clone(),
                ta,
                tb,
            },
        )
    }

    pub fn im2col(&self, geom: ConvGeom) -> Var<T> {
        Var::from_op(tensor::im2col(self.value(), geom), Op::Im2col(self.clone(), geom))
    }

    pub fn col2im(&self, geom: ConvGeom) -> Var<T> {
        Var::from_op(tensor::col2im(self.value(), geom), Op::Col2im(self.clone(), geom))
    }

    pub fn upsample2(&self) -> Var<T> {
        Var::from_op(tensor::upsample2(self.value()), Op::Upsample2(self.clone()))
    }

    pub fn sum_pool2(&self) -> Var<T> {
        Var::from_op(tensor::sum_pool2(self.value()), Op::SumPool2(self.clone()))
    }

    pub fn avg_pool2(&self) -> Var<T> {
        self.sum_pool2().scale(T::lit(0.25))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        if start == 0 && len == self.shape()[axis] {
            return self.clone();
        }
        Var::from_op(
            tensor::narrow(self.value(), axis, start, len),
            Op::Narrow {
                x: self.clone(),
                axis,
                start,
            },
        )
    }

    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Var<T> {
        Var::from_op(
            tensor::pad_axis(self.value(), axis, start, total),
            Op::Pad {
                x: self.clone(),
                axis,
                start,
            },
        )
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
