//! Toy generator/discriminator, the named parameter store, and Adam.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{kernels, DiffTensor, Tape};

/// Tape handles for registered parameters, keyed by name.
pub type TensorBag<T> = BTreeMap<String, DiffTensor<T>>;

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
}

/// Ordered named parameter collection; insertion order is the checkpoint
/// block order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param {name}: shape does not match buffer"
        );
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let n = data.len();
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            shape,
            data,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
        });
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).copied().map(move |i| &mut self.entries[i])
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    /// Register every parameter on a tape; trainable leaves receive grads.
    pub fn register_all(&self, tape: &Tape<T>, trainable: bool) -> Result<TensorBag<T>> {
        let mut bag = TensorBag::new();
        for p in &self.entries {
            let t = tape.leaf(p.data.clone(), p.shape.clone(), trainable)?;
            bag.insert(p.name.clone(), t);
        }
        Ok(bag)
    }

    /// FNV-1a over names and value bits; detects any parameter change.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in &self.entries {
            for b in p.name.as_bytes() {
                eat(*b);
            }
            for v in &p.data {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

/// Adam with bias correction; the step count is shared across the store the
/// optimizer drives.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Apply one update to every parameter present in `grads`.
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<String, Vec<T>>,
    ) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let bias1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bias2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        for p in store.entries.iter_mut() {
            let Some(g) = grads.get(&p.name) else {
                continue;
            };
            debug_assert_eq!(g.len(), p.data.len());
            for i in 0..g.len() {
                p.adam_m[i] = b1 * p.adam_m[i] + (one - b1) * g[i];
                p.adam_v[i] = b2 * p.adam_v[i] + (one - b2) * g[i] * g[i];
                let m_hat = p.adam_m[i] / bias1;
                let v_hat = p.adam_v[i] / bias2;
                p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn glorot_init<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Vec<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..shape.iter().product())
        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    out_ch: usize,
    in_ch: usize,
    k: usize,
}

fn insert_conv<T: Scalar>(store: &mut ParamStore<T>, name: &str, s: ConvShape, rng: &mut Rng) {
    let fan_in = s.in_ch * s.k * s.k;
    let fan_out = s.out_ch * s.k * s.k;
    let shape = vec![s.out_ch, s.in_ch, s.k, s.k];
    let w = glorot_init(&shape, fan_in, fan_out, rng);
    store.insert(format!("{name}.w"), shape, w);
    store.insert(format!("{name}.b"), vec![s.out_ch], vec![T::zero(); s.out_ch]);
}

fn conv_from_bag<T: Scalar>(
    bag: &TensorBag<T>,
    name: &str,
    x: &DiffTensor<T>,
    stride: usize,
) -> Result<DiffTensor<T>> {
    let w = bag
        .get(&format!("{name}.w"))
        .ok_or_else(|| CoreError::Tape(format!("missing parameter {name}.w")))?;
    let b = bag
        .get(&format!("{name}.b"))
        .ok_or_else(|| CoreError::Tape(format!("missing parameter {name}.b")))?;
    x.conv2d(w, b, stride, 1)
}

/// Inference-path convolution straight from the store (no tape).
fn conv_infer<T: Scalar>(
    store: &ParamStore<T>,
    name: &str,
    x: &[T],
    dims: [usize; 3],
    stride: usize,
) -> Result<(Vec<T>, [usize; 3])> {
    let w = store
        .get(&format!("{name}.w"))
        .ok_or_else(|| CoreError::Tape(format!("missing parameter {name}.w")))?;
    let b = store
        .get(&format!("{name}.b"))
        .ok_or_else(|| CoreError::Tape(format!("missing parameter {name}.b")))?;
    let [c, h, wd] = dims;
    let (o, k) = (w.shape[0], w.shape[2]);
    let oh = kernels::conv_out_len(h, k, stride, 1);
    let ow = kernels::conv_out_len(wd, k, stride, 1);
    if oh < 1 || ow < 1 {
        return Err(CoreError::Shape {
            op: "conv_infer",
            detail: format!("{name}: output collapsed for input {h}×{wd}"),
        });
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let mut out = vec![T::zero(); o * oh * ow];
    kernels::conv2d_forward(x, c, h, wd, &w.data, o, k, stride, 1, &b.data, &mut out, oh, ow);
    Ok((out, [o, oh, ow]))
}

fn tanh_inplace<T: Scalar>(xs: &mut [T]) {
    for v in xs.iter_mut() {
        *v = v.tanh();
    }
}

/// Encoder-decoder translator: two downsampling convs, two residual blocks,
/// two upsampling convs and an RGB head. The encoder exposes five taps
/// (input, both downsampling outputs, both residual outputs) that every
/// multi-scale loss consumes.
#[derive(Debug, Clone, Copy)]
pub struct Generator {
    pub ngf: usize,
}

pub const GENERATOR_TAP_COUNT: usize = 5;

impl Generator {
    pub fn new(ngf: usize) -> Self {
        Generator { ngf }
    }

    /// Channel width of each encoder tap.
    pub fn tap_dims(&self) -> [usize; GENERATOR_TAP_COUNT] {
        [3, self.ngf, 2 * self.ngf, 2 * self.ngf, 2 * self.ngf]
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let n = self.ngf;
        let specs = [
            ("gen.down1", ConvShape { out_ch: n, in_ch: 3, k: 3 }),
            ("gen.down2", ConvShape { out_ch: 2 * n, in_ch: n, k: 3 }),
            ("gen.res1a", ConvShape { out_ch: 2 * n, in_ch: 2 * n, k: 3 }),
            ("gen.res1b", ConvShape { out_ch: 2 * n, in_ch: 2 * n, k: 3 }),
            ("gen.res2a", ConvShape { out_ch: 2 * n, in_ch: 2 * n, k: 3 }),
            ("gen.res2b", ConvShape { out_ch: 2 * n, in_ch: 2 * n, k: 3 }),
            ("gen.up1", ConvShape { out_ch: n, in_ch: 2 * n, k: 3 }),
            ("gen.up2", ConvShape { out_ch: n, in_ch: n, k: 3 }),
            ("gen.out", ConvShape { out_ch: 3, in_ch: n, k: 3 }),
        ];
        for (name, s) in specs {
            insert_conv(store, name, s, rng);
        }
    }

    fn check_spatial(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != 3 {
            return Err(CoreError::Shape {
                op: "generator_forward",
                detail: format!("expected 3×H×W input, got {shape:?}"),
            });
        }
        if !shape[1].is_multiple_of(4) || !shape[2].is_multiple_of(4) || shape[1] < 4 || shape[2] < 4 {
            return Err(CoreError::Shape {
                op: "generator_forward",
                detail: format!(
                    "spatial size {}×{} not divisible by the downsampling factor 4",
                    shape[1], shape[2]
                ),
            });
        }
        Ok(())
    }

    /// Encoder taps only.
    pub fn encode<T: Scalar>(
        &self,
        bag: &TensorBag<T>,
        x: &DiffTensor<T>,
    ) -> Result<Vec<DiffTensor<T>>> {
        self.check_spatial(x.shape())?;
        let mut taps = Vec::with_capacity(GENERATOR_TAP_COUNT);
        taps.push(x.clone());
        let t1 = conv_from_bag(bag, "gen.down1", x, 2)?.tanh()?;
        taps.push(t1.clone());
        let t2 = conv_from_bag(bag, "gen.down2", &t1, 2)?.tanh()?;
        taps.push(t2.clone());
        let mut r = t2;
        for block in ["gen.res1", "gen.res2"] {
            let mid = conv_from_bag(bag, &format!("{block}a"), &r, 1)?.tanh()?;
            let out = conv_from_bag(bag, &format!("{block}b"), &mid, 1)?;
            r = r.add(&out)?;
            taps.push(r.clone());
        }
        Ok(taps)
    }

    /// Full translation pass: output image in [-1, 1] plus encoder taps.
    pub fn forward<T: Scalar>(
        &self,
        bag: &TensorBag<T>,
        x: &DiffTensor<T>,
    ) -> Result<(DiffTensor<T>, Vec<DiffTensor<T>>)> {
        let taps = self.encode(bag, x)?;
        let bottleneck = taps.last().expect("encoder produced taps");
        let u1 = conv_from_bag(bag, "gen.up1", &bottleneck.upsample_nearest(2)?, 1)?.tanh()?;
        let u2 = conv_from_bag(bag, "gen.up2", &u1.upsample_nearest(2)?, 1)?.tanh()?;
        let y = conv_from_bag(bag, "gen.out", &u2, 1)?.tanh()?;
        Ok((y, taps))
    }

    /// Tape-free encoder for detached branches and evaluation.
    pub fn encode_infer<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        height: usize,
        width: usize,
    ) -> Result<Vec<(Vec<T>, [usize; 3])>> {
        self.check_spatial(&[3, height, width])?;
        let mut taps = Vec::with_capacity(GENERATOR_TAP_COUNT);
        taps.push((x.to_vec(), [3, height, width]));
        let (mut t1, d1) = conv_infer(store, "gen.down1", x, [3, height, width], 2)?;
        tanh_inplace(&mut t1);
        taps.push((t1.clone(), d1));
        let (mut t2, d2) = conv_infer(store, "gen.down2", &t1, d1, 2)?;
        tanh_inplace(&mut t2);
        taps.push((t2.clone(), d2));
        let mut r = t2;
        let dims = d2;
        for block in ["gen.res1", "gen.res2"] {
            let (mut mid, dm) = conv_infer(store, &format!("{block}a"), &r, dims, 1)?;
            tanh_inplace(&mut mid);
            let (out, _) = conv_infer(store, &format!("{block}b"), &mid, dm, 1)?;
            for (rv, ov) in r.iter_mut().zip(&out) {
                *rv = *rv + *ov;
            }
            taps.push((r.clone(), dims));
        }
        Ok(taps)
    }

    /// Tape-free full translation (for samples and evaluation).
    pub fn infer_translate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        height: usize,
        width: usize,
    ) -> Result<Vec<T>> {
        let taps = self.encode_infer(store, x, height, width)?;
        let (bottleneck, dims) = taps.last().expect("encoder produced taps").clone();
        let up = |v: &[T], d: [usize; 3]| {
            let mut out = vec![T::zero(); d[0] * d[1] * 2 * d[2] * 2];
            kernels::upsample_nearest_forward(v, d[0], d[1], d[2], 2, &mut out);
            (out, [d[0], d[1] * 2, d[2] * 2])
        };
        let (b_up, d_up) = up(&bottleneck, dims);
        let (mut u1, d1) = conv_infer(store, "gen.up1", &b_up, d_up, 1)?;
        tanh_inplace(&mut u1);
        let (u1_up, d1_up) = up(&u1, d1);
        let (mut u2, d2) = conv_infer(store, "gen.up2", &u1_up, d1_up, 1)?;
        tanh_inplace(&mut u2);
        let (mut y, _) = conv_infer(store, "gen.out", &u2, d2, 1)?;
        tanh_inplace(&mut y);
        Ok(y)
    }
}

/// Three-layer patch classifier producing a logit map.
#[derive(Debug, Clone, Copy)]
pub struct Discriminator {
    pub ndf: usize,
}

impl Discriminator {
    pub fn new(ndf: usize) -> Self {
        Discriminator { ndf }
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut Rng) {
        let n = self.ndf;
        let specs = [
            ("disc.c1", ConvShape { out_ch: n, in_ch: 3, k: 3 }),
            ("disc.c2", ConvShape { out_ch: 2 * n, in_ch: n, k: 3 }),
            ("disc.c3", ConvShape { out_ch: 1, in_ch: 2 * n, k: 3 }),
        ];
        for (name, s) in specs {
            insert_conv(store, name, s, rng);
        }
    }

    /// Patch logits; spatial extent stays at least 1×1 for inputs ≥ 4×4.
    pub fn forward<T: Scalar>(
        &self,
        bag: &TensorBag<T>,
        x: &DiffTensor<T>,
    ) -> Result<DiffTensor<T>> {
        if x.shape().len() != 3 || x.shape()[1] < 4 || x.shape()[2] < 4 {
            return Err(CoreError::Shape {
                op: "discriminator_forward",
                detail: format!("input {:?} below the 4×4 minimum", x.shape()),
            });
        }
        let t1 = conv_from_bag(bag, "disc.c1", x, 2)?.tanh()?;
        let t2 = conv_from_bag(bag, "disc.c2", &t1, 2)?.tanh()?;
        conv_from_bag(bag, "disc.c3", &t2, 1)
    }
}
