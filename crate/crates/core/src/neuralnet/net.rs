use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_forward, BatchNorm, Conv3x3, Dropout, Linear, MaxPool2, Param};
use super::{NetError, Task, Tensor};
use crate::scalar::Scalar;

/// Maps the raw age unit to years: `years = shift + scale * raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeTransform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for AgeTransform {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    /// Hidden width of the head; 0 gives a single linear layer.
    pub hidden: usize,
    pub dropout: f64,
    pub task: Task,
    #[serde(default)]
    pub age: AgeTransform,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { in_channels: 3, widths: vec![16, 32, 64, 128], hidden: 64, dropout: 0.25, task: Task::Sex, age: AgeTransform::default() }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidArchitecture(m));
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.widths.contains(&0) {
            return bad(format!("block widths must be positive: {:?}", self.widths));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.age.scale > 0.0) || !self.age.shift.is_finite() {
            return bad(format!("invalid age transform {:?}", self.age));
        }
        Ok(())
    }

    /// Features entering the head.
    pub fn feature_width(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }

    /// Smallest input side the blocks can pool down to 1 pixel.
    pub fn min_input_side(&self) -> usize {
        1 << self.widths.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone)]
pub(crate) struct Block<T> {
    conv: Conv3x3<T>,
    bn: BatchNorm<T>,
    mask: Vec<bool>,
    act: Vec<T>,
    pool: MaxPool2,
    dims: (usize, usize, usize, usize),
}

impl<T: Scalar> Block<T> {
    fn forward(&mut self, x: &[T], n: usize, h: usize, w: usize, batch_stats: bool) -> Vec<T> {
        let c = self.conv.out_c;
        let mut y = self.conv.forward(x, n, h, w);
        y = self.bn.forward(&y, n, h * w, batch_stats);
        relu_forward(&mut y, &mut self.mask);
        let out = self.pool.forward(&y, n, c, h, w);
        self.act = y;
        self.dims = (n, c, h, w);
        out
    }

    /// Gradient with respect to the post-ReLU, pre-pool activation.
    pub(crate) fn pool_backward(&self, dpooled: &[T]) -> Vec<T> {
        self.pool.backward(dpooled)
    }

    pub(crate) fn activation(&self) -> (&[T], (usize, usize, usize, usize)) {
        (&self.act, self.dims)
    }

    fn backward(&mut self, dpooled: &[T], need_dx: bool) -> Option<Vec<T>> {
        let mut d = self.pool.backward(dpooled);
        relu_backward(&mut d, &self.mask);
        let d = self.bn.backward(&d);
        self.conv.backward(&d, need_dx)
    }
}

#[derive(Debug, Clone)]
struct Head<T> {
    fc1: Option<Linear<T>>,
    bn: Option<BatchNorm<T>>,
    mask: Vec<bool>,
    dropout: Dropout,
    fc2: Linear<T>,
}

fn block_params<T>(blocks: &mut [Block<T>]) -> Vec<&mut Param<T>> {
    let mut v = Vec::new();
    for b in blocks {
        v.push(&mut b.conv.weight);
        v.push(&mut b.bn.gamma);
        v.push(&mut b.bn.beta);
    }
    v
}

fn head_params<T>(h: &mut Head<T>) -> Vec<&mut Param<T>> {
    let mut v = Vec::new();
    if let (Some(fc1), Some(bn)) = (&mut h.fc1, &mut h.bn) {
        v.push(&mut fc1.weight);
        v.push(&mut fc1.bias);
        v.push(&mut bn.gamma);
        v.push(&mut bn.beta);
    }
    v.push(&mut h.fc2.weight);
    v.push(&mut h.fc2.bias);
    v
}

/// Convolutional network generic over the scalar type.
#[derive(Debug, Clone)]
pub struct ConvNet<T> {
    arch: Architecture,
    pub(crate) blocks: Vec<Block<T>>,
    head: Head<T>,
    rng: ChaCha8Rng,
    gap_dims: (usize, usize, usize),
}

impl<T: Scalar> ConvNet<T> {
    /// Kaiming-normal convolutions and first head layer, seeded.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self, NetError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(arch.widths.len());
        let mut c = arch.in_channels;
        for (i, &w) in arch.widths.iter().enumerate() {
            blocks.push(Block {
                conv: Conv3x3::new(&format!("block{i}.conv"), c, w, &mut rng),
                bn: BatchNorm::new(&format!("block{i}.bn"), w),
                mask: Vec::new(),
                act: Vec::new(),
                pool: MaxPool2::default(),
                dims: (0, 0, 0, 0),
            });
            c = w;
        }
        let outputs = arch.task.outputs();
        let head = if arch.hidden > 0 {
            Head {
                fc1: Some(Linear::new("head.fc1", c, arch.hidden, (2.0 / c as f64).sqrt(), &mut rng)),
                bn: Some(BatchNorm::new("head.bn", arch.hidden)),
                mask: Vec::new(),
                dropout: Dropout::new(arch.dropout),
                fc2: Linear::new("head.fc2", arch.hidden, outputs, (1.0 / arch.hidden as f64).sqrt(), &mut rng),
            }
        } else {
            Head {
                fc1: None,
                bn: None,
                mask: Vec::new(),
                dropout: Dropout::new(0.0),
                fc2: Linear::new("head.fc", c, outputs, (1.0 / c as f64).sqrt(), &mut rng),
            }
        };
        let dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        Ok(Self { arch, blocks, head, rng: dropout_rng, gap_dims: (0, 0, 0) })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn task(&self) -> Task {
        self.arch.task
    }

    /// Set the age output bias so an untrained net predicts `years`.
    pub fn set_age_bias(&mut self, years: f64) {
        if let Some(i) = self.arch.task.age_index() {
            let raw = (years - self.arch.age.shift) / self.arch.age.scale;
            self.head.fc2.bias.value[i] = T::lit(raw);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([&b.conv.weight, &b.bn.gamma, &b.bn.beta]);
        }
        let h = &self.head;
        if let (Some(fc1), Some(bn)) = (&h.fc1, &h.bn) {
            v.extend([&fc1.weight, &fc1.bias, &bn.gamma, &bn.beta]);
        }
        v.extend([&h.fc2.weight, &h.fc2.bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = block_params(&mut self.blocks);
        v.extend(head_params(&mut self.head));
        v
    }

    pub fn backbone_params_mut(&mut self) -> Vec<&mut Param<T>> {
        block_params(&mut self.blocks)
    }

    pub fn head_params_mut(&mut self) -> Vec<&mut Param<T>> {
        head_params(&mut self.head)
    }

    /// Batch-norm running statistics, named.
    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("block{i}.bn.running_mean"), &b.bn.running_mean));
            v.push((format!("block{i}.bn.running_var"), &b.bn.running_var));
        }
        if let Some(bn) = &self.head.bn {
            v.push(("head.bn.running_mean".into(), &bn.running_mean));
            v.push(("head.bn.running_var".into(), &bn.running_var));
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.push((format!("block{i}.bn.running_mean"), &mut b.bn.running_mean));
            v.push((format!("block{i}.bn.running_var"), &mut b.bn.running_var));
        }
        if let Some(bn) = &mut self.head.bn {
            v.push(("head.bn.running_mean".into(), &mut bn.running_mean));
            v.push(("head.bn.running_var".into(), &mut bn.running_var));
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameter values and running statistics, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        let mut s: Vec<Vec<T>> = self.params().iter().map(|p| p.value.clone()).collect();
        s.extend(self.buffers().into_iter().map(|(_, b)| b.clone()));
        s
    }

    pub fn restore(&mut self, snap: &[Vec<T>]) {
        let mut it = snap.iter();
        for p in self.params_mut() {
            p.value.clone_from(it.next().expect("snapshot layout"));
        }
        for (_, b) in self.buffers_mut() {
            b.clone_from(it.next().expect("snapshot layout"));
        }
    }

    /// Drop cached activations (after training, before cloning).
    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.bn.clear_cache();
            b.act = Vec::new();
            b.mask = Vec::new();
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize), NetError> {
        let (n, c, h, w) = x.dims4()?;
        let min = self.arch.min_input_side();
        if c != self.arch.in_channels || h < min || w < min || n == 0 {
            return Err(NetError::ShapeMismatch { expected: vec![n.max(1), self.arch.in_channels, min, min], got: x.shape().to_vec() });
        }
        Ok((n, h, w))
    }

    /// Blocks followed by global average pooling: `N x C` features.
    pub fn backbone_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, mut h, mut w) = self.check_input(x)?;
        let batch_stats = mode == Mode::Train;
        let mut cur: Vec<T> = x.data().to_vec();
        let mut c = self.arch.in_channels;
        for b in &mut self.blocks {
            cur = b.forward(&cur, n, h, w, batch_stats);
            c = b.conv.out_c;
            (h, w) = MaxPool2::out_size(h, w);
        }
        let s = h * w;
        self.gap_dims = (n, c, s);
        let inv = T::one() / T::from_usize_lossy(s);
        let feats = (0..n * c).map(|p| cur[p * s..(p + 1) * s].iter().copied().sum::<T>() * inv).collect();
        Tensor::new(vec![n, c], feats)
    }

    /// Head on `N x C` features: `N x outputs`, age already in years.
    pub fn head_forward(&mut self, feats: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, c) = feats.dims2()?;
        if c != self.arch.feature_width() {
            return Err(NetError::ShapeMismatch { expected: vec![n, self.arch.feature_width()], got: vec![n, c] });
        }
        let train = mode == Mode::Train;
        let h = &mut self.head;
        let mut z = feats.data().to_vec();
        if let (Some(fc1), Some(bn)) = (&mut h.fc1, &mut h.bn) {
            z = fc1.forward(&z, n);
            z = bn.forward(&z, n, 1, train);
            relu_forward(&mut z, &mut h.mask);
            h.dropout.forward(&mut z, train, &mut self.rng);
        }
        let mut out = h.fc2.forward(&z, n);
        if let Some(ai) = self.arch.task.age_index() {
            let (shift, scale) = (T::lit(self.arch.age.shift), T::lit(self.arch.age.scale));
            let o = self.arch.task.outputs();
            for s in 0..n {
                out[s * o + ai] = shift + scale * out[s * o + ai];
            }
        }
        Tensor::new(vec![n, self.arch.task.outputs()], out)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let f = self.backbone_forward(x, mode)?;
        self.head_forward(&f, mode)
    }

    /// Backward through the head; returns the feature gradient.
    pub fn head_backward(&mut self, dout: &Tensor<T>) -> Tensor<T> {
        let (n, o) = (dout.batch(), self.arch.task.outputs());
        let mut d = dout.data().to_vec();
        if let Some(ai) = self.arch.task.age_index() {
            let scale = T::lit(self.arch.age.scale);
            for s in 0..n {
                d[s * o + ai] *= scale;
            }
        }
        let h = &mut self.head;
        let mut dz = h.fc2.backward(&d);
        if let (Some(fc1), Some(bn)) = (&mut h.fc1, &mut h.bn) {
            h.dropout.backward(&mut dz);
            relu_backward(&mut dz, &h.mask);
            dz = bn.backward(&dz);
            dz = fc1.backward(&dz);
        }
        let c = self.arch.feature_width();
        Tensor::new(vec![n, c], dz).expect("feature gradient shape")
    }

    fn gap_backward(&self, dfeat: &Tensor<T>) -> Vec<T> {
        let (n, c, s) = self.gap_dims;
        let inv = T::one() / T::from_usize_lossy(s);
        let mut d = Vec::with_capacity(n * c * s);
        for &g in dfeat.data() {
            d.extend(std::iter::repeat_n(g * inv, s));
        }
        d
    }

    pub fn backbone_backward(&mut self, dfeat: &Tensor<T>) {
        let mut d = self.gap_backward(dfeat);
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            if let Some(dx) = b.backward(&d, i > 0) {
                d = dx;
            }
        }
    }

    pub fn backward(&mut self, dout: &Tensor<T>) {
        let df = self.head_backward(dout);
        self.backbone_backward(&df);
    }

    /// Last block's post-ReLU activation `A` and `dA` for a feature gradient.
    pub(crate) fn last_block_gradient(&self, dfeat: &Tensor<T>) -> Option<(Vec<T>, Vec<T>, (usize, usize, usize, usize))> {
        let last = self.blocks.last()?;
        let d = self.gap_backward(dfeat);
        let da = last.pool_backward(&d);
        let (a, dims) = last.activation();
        Some((a.to_vec(), da, dims))
    }

    /// Discrete state of the last forward pass: ReLU masks and pool winners.
    pub fn activation_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for b in &self.blocks {
            sig.extend(b.mask.iter().map(|&m| m as u32));
            sig.extend_from_slice(b.pool.argmax());
        }
        sig.extend(self.head.mask.iter().map(|&m| m as u32));
        sig
    }

    /// Set the dropout rate (0 disables it).
    pub fn set_dropout(&mut self, rate: f64) {
        self.arch.dropout = rate;
        self.head.dropout.rate = if self.head.fc1.is_some() { rate } else { 0.0 };
    }
}
