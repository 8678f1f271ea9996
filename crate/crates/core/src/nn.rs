//! Parameter storage, convolution layers, initialization and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifies one parameter tensor: the owning store's tag and its slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub store: u32,
    pub index: u32,
}

#[derive(Clone, Debug)]
struct Slot<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
}

/// Named parameter tensors with gradient buffers.
#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    tag: u32,
    slots: Vec<Slot<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(tag: u32) -> Self {
        ParamStore {
            tag,
            slots: Vec::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.slots.push(Slot {
            name: name.into(),
            value,
            grad,
        });
        ParamId {
            store: self.tag,
            index: (self.slots.len() - 1) as u32,
        }
    }

    fn slot(&self, id: ParamId) -> &Slot<S> {
        debug_assert_eq!(id.store, self.tag, "parameter from another store");
        &self.slots[id.index as usize]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.slot(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.slots[id.index as usize].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.slot(id).grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.slots[id.index as usize].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slot(id).name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(move |i| ParamId {
            store: self.tag,
            index: i as u32,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.data_mut().fill(S::zero());
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots
            .iter()
            .position(|s| s.name == name)
            .map(|i| ParamId {
                store: self.tag,
                index: i as u32,
            })
    }

    /// `(name, value)` pairs in insertion order.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    /// Overwrites a parameter by name, checking its shape.
    pub fn load(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        value.expect_shape(self.value(id).shape(), name)?;
        *self.value_mut(id) = value;
        Ok(())
    }
}

/// Uniform fan-in initialization in `[-sqrt(gain / fan_in), sqrt(gain / fan_in)]`.
pub fn init_uniform<S: Scalar>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<S> {
    let bound = (gain / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| S::lit(dist.sample(rng)))
}

/// 2-D convolution with bias, square kernel and zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(&[out_c, in_c, kernel, kernel], fan_in, 3.0, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        Conv2d {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
        }
    }

    /// Same-size 3x3 convolution.
    pub fn same3<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_c: usize,
        out_c: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(store, name, in_c, out_c, 3, 1, 1, rng)
    }

    pub fn pointwise<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_c: usize,
        out_c: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(store, name, in_c, out_c, 1, 1, 0, rng)
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    /// Spatial radius (in input cells) each output depends on.
    pub fn radius(&self) -> usize {
        self.kernel / 2
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, lr: S, beta1: S, beta2: S) -> Self {
        let m: Vec<_> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: S::lit(1e-8),
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one update from the store's gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore<S>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).clone();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let value = store.value_mut(id);
            for (((p, &g), mm), vv) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mm = self.beta1 * *mm + (S::one() - self.beta1) * g;
                *vv = self.beta2 * *vv + (S::one() - self.beta2) * g * g;
                let mhat = *mm / bc1;
                let vhat = *vv / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }

    /// Moment buffers, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Format(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Deterministic RNG from a seed and a stream label.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let _: u32 = rng.random();
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::<f64>::new(7);
        let id = store.add("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&store, 0.1, 0.9, 0.999);
        for _ in 0..300 {
            let x = store.value(id).clone();
            *store.grad_mut(id) = x.map(|v| 2.0 * v);
            opt.step(&mut store);
        }
        assert!(store.value(id).max_abs() < 0.05);
    }

    #[test]
    fn load_checks_shape() {
        let mut store = ParamStore::<f32>::new(1);
        store.add("w", Tensor::zeros(&[2, 2]));
        assert!(store.load("w", Tensor::zeros(&[4])).is_err());
        assert!(store.load("missing", Tensor::zeros(&[2, 2])).is_err());
        assert!(store.load("w", Tensor::ones(&[2, 2])).is_ok());
    }
}
