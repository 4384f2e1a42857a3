//! Scalar reverse-mode differentiation on a recorded tape.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy)]
struct Node {
    deps: [(usize, f64); 2],
}

/// Records scalar operations so gradients can be pulled back in one sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Alias matching the role this type plays in the fitting pipeline.
pub type GradientTape = Tape;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([(0, 0.0), (0, 0.0)]);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, deps: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { deps });
        nodes.len() - 1
    }
}

/// A value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    val: f64,
}

/// Adjoints of every tape node with respect to one output.
#[derive(Debug, Clone)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        self.0[v.idx]
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.val
    }

    fn unary(self, val: f64, d: f64) -> Self {
        let idx = self.tape.push([(self.idx, d), (0, 0.0)]);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        let idx = self.tape.push([(self.idx, da), (other.idx, db)]);
        Var {
            tape: self.tape,
            idx,
            val,
        }
    }

    /// Subgradient 0 at the kink.
    pub fn relu(self) -> Self {
        if self.val > 0.0 {
            self.unary(self.val, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }

    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }

    pub fn abs(self) -> Self {
        self.unary(self.val.abs(), if self.val >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn atan2(self, x: Self) -> Self {
        let r2 = self.val * self.val + x.val * x.val;
        self.binary(x, self.val.atan2(x.val), x.val / r2, -self.val / r2)
    }

    pub fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }

    pub fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }

    /// Adjoints of all recorded nodes with respect to `self`.
    pub fn backward(&self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[self.idx] = 1.0;
        for i in (0..=self.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(j, d) in &nodes[i].deps {
                if d != 0.0 {
                    adj[j] += a * d;
                }
            }
        }
        Gradients(adj)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        self.binary(o, self.val / o.val, 1.0 / o.val, -self.val / (o.val * o.val))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(self - v.val, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        v.unary(self / v.val, -self / (v.val * v.val))
    }
}
