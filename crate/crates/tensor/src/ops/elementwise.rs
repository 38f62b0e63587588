use std::rc::Rc;

use rand::Rng;

use super::broadcast::{aligned_strides, broadcast_shape, for_each2, reduce_to};
use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary<T: Real>(a: &Var<T>, b: &Var<T>, kind: Binary, name: &'static str) -> Result<Var<T>> {
    a.check_tape(b)?;
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| shape_err(name, a.shape(), b.shape()))?;
    let av = a.value_rc();
    let bv = b.value_rc();
    let value = if a.shape() == b.shape() {
        let f = match kind {
            Binary::Add => |x: T, y: T| x + y,
            Binary::Sub => |x: T, y: T| x - y,
            Binary::Mul => |x: T, y: T| x * y,
        };
        av.zip_map(&bv, f)?
    } else {
        let sa = aligned_strides(a.shape(), &out_shape);
        let sb = aligned_strides(b.shape(), &out_shape);
        let mut out = Tensor::zeros(&out_shape);
        let (ad, bd) = (av.data(), bv.data());
        let od = out.data_mut();
        match kind {
            Binary::Add => for_each2(&out_shape, &sa, &sb, |o, i, j| od[o] = ad[i] + bd[j]),
            Binary::Sub => for_each2(&out_shape, &sa, &sb, |o, i, j| od[o] = ad[i] - bd[j]),
            Binary::Mul => for_each2(&out_shape, &sa, &sb, |o, i, j| od[o] = ad[i] * bd[j]),
        }
        out
    };
    let tape = a.tape().clone();
    Ok(tape.record(value, &[a, b], move |g, need| {
        let ga = need[0].then(|| match kind {
            Binary::Add | Binary::Sub => reduce_to(g, av.shape()),
            Binary::Mul => {
                let prod = mul_bcast(g, &bv);
                reduce_to(&prod, av.shape())
            }
        });
        let gb = need[1].then(|| match kind {
            Binary::Add => reduce_to(g, bv.shape()),
            Binary::Sub => reduce_to(&g.map(|v| -v), bv.shape()),
            Binary::Mul => {
                let prod = mul_bcast(g, &av);
                reduce_to(&prod, bv.shape())
            }
        });
        vec![ga, gb]
    }))
}

/// `g * x` where `x` broadcasts to `g`'s shape.
fn mul_bcast<T: Real>(g: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    if g.shape() == x.shape() {
        return g.zip_map(x, |a, b| a * b).expect("same shape");
    }
    let sx = aligned_strides(x.shape(), g.shape());
    let zero = vec![0; g.rank()];
    let mut out = Tensor::zeros(g.shape());
    let (gd, xd) = (g.data(), x.data());
    let od = out.data_mut();
    for_each2(g.shape(), &zero, &sx, |o, _, j| od[o] = gd[o] * xd[j]);
    out
}

fn unary<T: Real>(x: &Var<T>, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
    let value = Rc::new(x.value().map(f));
    let xv = x.value_rc();
    let yv = value.clone();
    x.tape().record((*value).clone(), &[x], move |g, _| {
        let gd = g.data();
        let (xd, yd) = (xv.data(), yv.data());
        let mut out = Tensor::zeros(g.shape());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = gd[i] * df(xd[i], yd[i]);
        }
        vec![Some(out)]
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl<T: Real> Var<T> {
    /// Broadcasting addition.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(self, other, Binary::Add, "add")
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(self, other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        binary(self, other, Binary::Mul, "mul")
    }

    pub fn scale(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::of(c);
        unary(self, move |v| v + c, |_, _| T::one())
    }

    pub fn relu(&self) -> Var<T> {
        unary(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        unary(
            self,
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(
            self,
            |v| {
                // Split by sign so exp never overflows.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn square(&self) -> Var<T> {
        unary(self, |v| v * v, |x, _| x + x)
    }

    pub fn activation(&self, kind: Activation) -> Var<T> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> Result<Var<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(crate::TensorError::Config(format!(
                "dropout probability {p}"
            )));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(self.shape(), |_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let m = self.tape().constant(mask);
        self.mul(&m)
    }
}
