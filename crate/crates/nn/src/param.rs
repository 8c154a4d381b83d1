use rand::Rng;

use crate::Scalar;

/// A learnable tensor with its gradient accumulator and trainable flag.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let count: usize = shape.iter().product();
        assert_eq!(count, value.len(), "param value does not match shape");
        Self {
            name: name.into(),
            shape,
            value,
            grad: Vec::new(),
            trainable: true,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); count])
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let count = shape.iter().product();
        Self::new(name, shape, vec![v; count])
    }

    /// He-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn he_uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let count: usize = shape.iter().product();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let value = (0..count)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        Self::new(name, shape, value)
    }

    pub fn count(&self) -> usize {
        self.value.len()
    }

    /// Gradient buffer; empty until the first accumulation.
    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        &mut self.grad
    }

    pub fn has_grad(&self) -> bool {
        !self.grad.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Releases the gradient buffer.
    pub fn drop_grad(&mut self) {
        self.grad = Vec::new();
    }
}

/// Non-learnable state (normalization running statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

impl<T: Scalar> Buffer<T> {
    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let count = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![v; count],
        }
    }
}

/// Anything that owns parameters and buffers.
///
/// Visit order is construction order and is stable; optimizers and
/// serializers rely on it.
pub trait Module<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn visit_buffers(&self, _f: &mut dyn FnMut(&Buffer<T>)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&mut Buffer<T>)) {}

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.count());
        n
    }

    fn any_trainable(&self) -> bool {
        let mut any = false;
        self.visit_params(&mut |p| any |= p.trainable);
        any
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_params_mut(&mut |p| p.trainable = trainable);
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.iter().for_each(|m| m.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.iter_mut().for_each(|m| m.visit_params_mut(f));
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.iter().for_each(|m| m.visit_buffers(f));
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        self.iter_mut().for_each(|m| m.visit_buffers_mut(f));
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_params_mut(f);
        }
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        if let Some(m) = self {
            m.visit_buffers(f);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        if let Some(m) = self {
            m.visit_buffers_mut(f);
        }
    }
}
