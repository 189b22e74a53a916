//! Forward and reverse passes of a [`NetworkSpec`] against a
//! [`ParameterStore`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::batchnorm::{bn_bwd, bn_fwd, BatchStats, BnCache, Mode, RunningStats};
use crate::nn::conv::{conv_bwd, conv_fwd, Gather};
use crate::nn::spec::NetworkSpec;
use crate::nn::store::{ParamEntry, ParamRole, ParameterStore};
use crate::nn::Act;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvIx {
    w: usize,
    b: Option<usize>,
    cout: usize,
    k: usize,
}

#[derive(Clone, Copy, Debug)]
struct BnIx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
enum Stage {
    /// conv → [bn] → relu
    Plain { conv: ConvIx, bn: Option<BnIx> },
    /// relu(x + [bn](conv(relu([bn](conv(x))))))
    Residual {
        conv1: ConvIx,
        bn1: Option<BnIx>,
        conv2: ConvIx,
        bn2: Option<BnIx>,
    },
}

enum StageTape {
    Plain {
        input: Act,
        bn: Option<BnCache>,
        mask: Vec<bool>,
    },
    Residual {
        input: Act,
        bn1: Option<BnCache>,
        mask1: Vec<bool>,
        hidden: Act,
        bn2: Option<BnCache>,
        mask2: Vec<bool>,
    },
}

/// Activations recorded by a forward pass, consumed by
/// [`Network::backward`].
pub struct Tape {
    layout: u64,
    version: u64,
    extents: Vec<usize>,
    batch: usize,
    output_dims: Vec<Vec<usize>>,
    stages: Vec<StageTape>,
    trunk: Act,
    signature: u64,
}

impl Tape {
    /// Hash of every ReLU on/off pattern in the pass. Two passes with equal
    /// signatures evaluated the same piecewise-linear branch.
    pub fn relu_signature(&self) -> u64 {
        self.signature
    }

    pub fn mode_batch(&self) -> usize {
        self.batch
    }
}

/// Gradients indexed like the store entries (empty for running statistics),
/// plus the gradient with respect to the input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor,
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    template: Vec<(String, Vec<usize>, ParamRole)>,
    stages: Vec<Stage>,
    heads: Vec<ConvIx>,
    layout: u64,
}

fn relu(a: &mut Act) -> Vec<bool> {
    a.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

fn mask_grad(d: &mut Act, mask: &[bool]) {
    for (v, &m) in d.data.iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
}

struct Builder<'a> {
    dim: usize,
    template: &'a mut Vec<(String, Vec<usize>, ParamRole)>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, dims: Vec<usize>, role: ParamRole) -> usize {
        self.template.push((name, dims, role));
        self.template.len() - 1
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, bias: bool) -> ConvIx {
        let mut dims = vec![cout, cin];
        dims.extend(std::iter::repeat_n(k, self.dim));
        let w = self.push(format!("{prefix}.weight"), dims, ParamRole::Weight);
        let b = bias.then(|| self.push(format!("{prefix}.bias"), vec![cout], ParamRole::Bias));
        ConvIx { w, b, cout, k }
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnIx {
        BnIx {
            gamma: self.push(format!("{prefix}.weight"), vec![c], ParamRole::Scale),
            beta: self.push(format!("{prefix}.bias"), vec![c], ParamRole::Shift),
            mean: self.push(format!("{prefix}.running_mean"), vec![c], ParamRole::RunningMean),
            var: self.push(format!("{prefix}.running_var"), vec![c], ParamRole::RunningVar),
        }
    }
}

/// Parameters converted to `f64` for one pass.
struct Params(Vec<Vec<f64>>);

impl Params {
    fn of(store: &ParameterStore) -> Params {
        Params((0..store.entries().len()).map(|i| store.values(i)).collect())
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut template = Vec::new();
        let mut b = Builder {
            dim: spec.dim,
            template: &mut template,
        };
        let mut stages = Vec::new();
        let stem_bn = spec.stem_batch_norm;
        let conv = b.conv("stem.conv", spec.input_channels, spec.stem_channels, spec.stem_kernel, !stem_bn);
        let bn = stem_bn.then(|| b.bn("stem.bn", spec.stem_channels));
        stages.push(Stage::Plain { conv, bn });
        let mut c = spec.stem_channels;
        for (i, blk) in spec.body.iter().enumerate() {
            let p = format!("body.{i}");
            let nb = !blk.batch_norm;
            if blk.residual {
                let conv1 = b.conv(&format!("{p}.conv1"), c, blk.channels, blk.kernel, nb);
                let bn1 = blk.batch_norm.then(|| b.bn(&format!("{p}.bn1"), blk.channels));
                let conv2 = b.conv(&format!("{p}.conv2"), blk.channels, blk.channels, blk.kernel, nb);
                let bn2 = blk.batch_norm.then(|| b.bn(&format!("{p}.bn2"), blk.channels));
                stages.push(Stage::Residual { conv1, bn1, conv2, bn2 });
            } else {
                let conv = b.conv(&format!("{p}.conv"), c, blk.channels, blk.kernel, nb);
                let bn = blk.batch_norm.then(|| b.bn(&format!("{p}.bn"), blk.channels));
                stages.push(Stage::Plain { conv, bn });
            }
            c = blk.channels;
        }
        let heads = spec
            .heads
            .iter()
            .map(|h| b.conv(&format!("head.{}", h.name), c, h.channels, 1, true))
            .collect();
        let mut hasher = DefaultHasher::new();
        template.hash(&mut hasher);
        Ok(Self {
            layout: hasher.finish(),
            spec,
            template,
            stages,
            heads,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Fresh parameters: Kaiming-normal weights with fan-in scaling (gain 2
    /// in the trunk, 1 for the linear heads), zero biases, unit scales.
    pub fn init(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .template
            .iter()
            .map(|(name, dims, role)| {
                let n: usize = dims.iter().product();
                let values = match role {
                    ParamRole::Weight => {
                        let fan_in: usize = dims[1..].iter().product();
                        let gain = if name.starts_with("head.") { 1.0 } else { 2.0 };
                        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
                        (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                    }
                    ParamRole::Scale | ParamRole::RunningVar => vec![1.0; n],
                    _ => vec![0.0; n],
                };
                ParamEntry {
                    name: name.clone(),
                    dims: dims.clone(),
                    role: *role,
                    values,
                }
            })
            .collect();
        ParameterStore::new(entries).expect("template shapes are consistent")
    }

    /// Checks that `store` holds exactly this network's entries.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        let entries = store.entries();
        if entries.len() != self.template.len() {
            return Err(Error::ShapeMismatch(format!(
                "store has {} entries, network needs {}",
                entries.len(),
                self.template.len()
            )));
        }
        for (e, (name, dims, role)) in entries.iter().zip(&self.template) {
            if &e.name != name || &e.dims != dims || e.role != *role {
                return Err(Error::ShapeMismatch(format!(
                    "entry {} {:?} does not match {name} {dims:?}",
                    e.name, e.dims
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let d = input.dims();
        if d.len() != self.spec.dim + 2 {
            return Err(Error::ShapeMismatch(format!(
                "input {d:?} needs [batch, channels, {} extents]",
                self.spec.dim
            )));
        }
        if d[1] != self.spec.input_channels {
            return Err(Error::ChannelMismatch {
                expected: self.spec.input_channels,
                got: d[1],
            });
        }
        if d[0] == 0 || d[2..].contains(&0) {
            return Err(Error::ShapeMismatch(format!("empty batch or extent in {d:?}")));
        }
        input.check_finite("network input")
    }

    fn bn_forward(
        p: &Params,
        ix: BnIx,
        x: &Act,
        mode: Mode,
        stats: &mut Vec<(BnIx, BatchStats)>,
    ) -> Result<(Act, BnCache)> {
        let (y, cache, s) = bn_fwd(x, &p.0[ix.gamma], &p.0[ix.beta], &p.0[ix.mean], &p.0[ix.var], mode)?;
        if let Some(s) = s {
            stats.push((ix, s));
        }
        Ok((y, cache))
    }

    fn run(
        &self,
        store: &ParameterStore,
        input: &Tensor,
        mode: Mode,
        record: bool,
    ) -> Result<(Vec<Tensor>, Option<Tape>, Vec<(BnIx, BatchStats)>)> {
        self.check_store(store)?;
        self.check_input(input)?;
        let ext = input.dims()[2..].to_vec();
        let p = Params::of(store);
        let g_stem = Gather::new(&ext, self.spec.stem_kernel);
        let g_body = Gather::new(&ext, crate::nn::spec::BODY_KERNEL);
        let g_head = Gather::new(&ext, 1);
        let gather = |k: usize| if k == self.spec.stem_kernel { &g_stem } else { &g_body };
        let conv = |x: &Act, c: ConvIx| {
            conv_fwd(x, &p.0[c.w], c.b.map(|b| p.0[b].as_slice()), c.cout, gather(c.k))
        };

        let mut stats = Vec::new();
        let mut tapes = Vec::new();
        let mut hasher = DefaultHasher::new();
        let mut x = Act::from_tensor(input);
        for stage in &self.stages {
            match *stage {
                Stage::Plain { conv: c, bn } => {
                    let mut y = conv(&x, c);
                    let mut bc = None;
                    if let Some(ix) = bn {
                        let (out, cache) = Self::bn_forward(&p, ix, &y, mode, &mut stats)?;
                        y = out;
                        bc = Some(cache);
                    }
                    let mask = relu(&mut y);
                    mask.hash(&mut hasher);
                    let prev = std::mem::replace(&mut x, y);
                    if record {
                        tapes.push(StageTape::Plain {
                            input: prev,
                            bn: bc,
                            mask,
                        });
                    }
                }
                Stage::Residual { conv1, bn1, conv2, bn2 } => {
                    let mut h = conv(&x, conv1);
                    let mut c1 = None;
                    if let Some(ix) = bn1 {
                        let (out, cache) = Self::bn_forward(&p, ix, &h, mode, &mut stats)?;
                        h = out;
                        c1 = Some(cache);
                    }
                    let mask1 = relu(&mut h);
                    let mut z = conv(&h, conv2);
                    let mut c2 = None;
                    if let Some(ix) = bn2 {
                        let (out, cache) = Self::bn_forward(&p, ix, &z, mode, &mut stats)?;
                        z = out;
                        c2 = Some(cache);
                    }
                    for (zi, xi) in z.data.iter_mut().zip(&x.data) {
                        *zi += xi;
                    }
                    let mask2 = relu(&mut z);
                    mask1.hash(&mut hasher);
                    mask2.hash(&mut hasher);
                    let prev = std::mem::replace(&mut x, z);
                    if record {
                        tapes.push(StageTape::Residual {
                            input: prev,
                            bn1: c1,
                            mask1,
                            hidden: h,
                            bn2: c2,
                            mask2,
                        });
                    }
                }
            }
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for &hc in &self.heads {
            let y = conv_fwd(&x, &p.0[hc.w], hc.b.map(|b| p.0[b].as_slice()), hc.cout, &g_head);
            let t = y.to_tensor(&ext);
            t.check_finite("network output")?;
            outputs.push(t);
        }
        let tape = record.then(|| Tape {
            layout: self.layout,
            version: store.version(),
            extents: ext,
            batch: input.dims()[0],
            output_dims: outputs.iter().map(|t| t.dims().to_vec()).collect(),
            stages: tapes,
            trunk: x,
            signature: hasher.finish(),
        });
        Ok((outputs, tape, stats))
    }

    /// Forward pass recording a tape. In train mode batch statistics are used
    /// and folded into the running statistics of `store`.
    pub fn forward(&self, store: &mut ParameterStore, input: &Tensor, mode: Mode) -> Result<(Vec<Tensor>, Tape)> {
        let (out, tape, stats) = self.run(store, input, mode, true)?;
        for (ix, s) in stats {
            let mut rs = RunningStats {
                mean: store.values(ix.mean),
                var: store.values(ix.var),
            };
            rs.update(&s);
            store.set_running(ix.mean, &rs.mean);
            store.set_running(ix.var, &rs.var);
        }
        Ok((out, tape.expect("recorded")))
    }

    /// Replaces the running statistics by the train-mode batch statistics
    /// averaged over `batches`, weighted by element count.
    pub fn recalibrate(&self, store: &mut ParameterStore, batches: &[Tensor]) -> Result<()> {
        let mut sums: Vec<(BnIx, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut total = 0.0;
        for input in batches {
            let (_, _, stats) = self.run(store, input, Mode::Train, false)?;
            let w = input.len() as f64 / input.dims()[1] as f64;
            total += w;
            if sums.is_empty() {
                sums = stats
                    .iter()
                    .map(|(ix, s)| (*ix, vec![0.0; s.mean.len()], vec![0.0; s.var.len()]))
                    .collect();
            }
            for ((_, m, v), (_, s)) in sums.iter_mut().zip(&stats) {
                for c in 0..m.len() {
                    m[c] += w * s.mean[c];
                    v[c] += w * s.var[c];
                }
            }
        }
        if total == 0.0 {
            return Ok(());
        }
        for (ix, m, v) in sums {
            store.set_running(ix.mean, &m.iter().map(|x| x / total).collect::<Vec<_>>());
            store.set_running(ix.var, &v.iter().map(|x| x / total).collect::<Vec<_>>());
        }
        Ok(())
    }

    /// Forward pass recording a tape without touching `store`.
    pub fn forward_frozen(&self, store: &ParameterStore, input: &Tensor, mode: Mode) -> Result<(Vec<Tensor>, Tape)> {
        let (out, tape, _) = self.run(store, input, mode, true)?;
        Ok((out, tape.expect("recorded")))
    }

    /// Eval-mode outputs. Takes the store by shared reference, so any number
    /// of callers may run concurrently.
    pub fn infer(&self, store: &ParameterStore, input: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.run(store, input, Mode::Eval, false)?.0)
    }

    /// Trunk features (`[batch, channels, extents…]`) in eval mode.
    pub fn features(&self, store: &ParameterStore, input: &Tensor) -> Result<Tensor> {
        let (_, tape) = self.forward_frozen(store, input, Mode::Eval)?;
        Ok(tape.trunk.to_tensor(&tape.extents))
    }

    /// Reverse pass for the head-output gradients `grads`.
    pub fn backward(&self, store: &ParameterStore, tape: &Tape, grads: &[Tensor]) -> Result<Gradients> {
        if tape.layout != self.layout {
            return Err(Error::TapeMismatch("tape was recorded by a different network".into()));
        }
        if tape.version != store.version() {
            return Err(Error::TapeMismatch(format!(
                "parameters changed since the forward pass (version {} vs {})",
                tape.version,
                store.version()
            )));
        }
        self.check_store(store)?;
        if grads.len() != self.heads.len()
            || grads.iter().zip(&tape.output_dims).any(|(g, d)| g.dims() != d.as_slice())
        {
            return Err(Error::TapeMismatch("output gradients do not match the recorded outputs".into()));
        }
        for g in grads {
            g.check_finite("output gradient")?;
        }
        let p = Params::of(store);
        let ext = &tape.extents;
        let g_stem = Gather::new(ext, self.spec.stem_kernel);
        let g_body = Gather::new(ext, crate::nn::spec::BODY_KERNEL);
        let g_head = Gather::new(ext, 1);
        let gather = |k: usize| if k == self.spec.stem_kernel { &g_stem } else { &g_body };
        let mut dp: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| if e.role.trainable() { vec![0.0; e.values.len()] } else { Vec::new() })
            .collect();

        let mut d = Act::zeros(tape.trunk.c, tape.trunk.b, tape.trunk.s);
        for (&hc, g) in self.heads.iter().zip(grads) {
            let dy = Act::from_tensor(g);
            let mut dw = std::mem::take(&mut dp[hc.w]);
            let mut db = std::mem::take(&mut dp[hc.b.unwrap()]);
            let dx = conv_bwd(&tape.trunk, &p.0[hc.w], &dy, &g_head, &mut dw, Some(&mut db[..]));
            dp[hc.w] = dw;
            dp[hc.b.unwrap()] = db;
            for (a, b) in d.data.iter_mut().zip(&dx.data) {
                *a += b;
            }
        }

        let conv_back = |dp: &mut Vec<Vec<f64>>, x: &Act, c: ConvIx, dy: &Act| {
            let mut dw = std::mem::take(&mut dp[c.w]);
            let mut db = c.b.map(|b| std::mem::take(&mut dp[b]));
            let dx = conv_bwd(x, &p.0[c.w], dy, gather(c.k), &mut dw, db.as_deref_mut());
            dp[c.w] = dw;
            if let (Some(b), Some(v)) = (c.b, db) {
                dp[b] = v;
            }
            dx
        };
        let bn_back = |dp: &mut Vec<Vec<f64>>, ix: BnIx, cache: &BnCache, dy: &Act| {
            let mut dg = std::mem::take(&mut dp[ix.gamma]);
            let mut dbt = std::mem::take(&mut dp[ix.beta]);
            let dx = bn_bwd(dy, cache, &p.0[ix.gamma], &mut dg, &mut dbt);
            dp[ix.gamma] = dg;
            dp[ix.beta] = dbt;
            dx
        };

        for (stage, st) in self.stages.iter().zip(&tape.stages).rev() {
            match (stage, st) {
                (Stage::Plain { conv, bn }, StageTape::Plain { input, bn: cache, mask }) => {
                    mask_grad(&mut d, mask);
                    if let (Some(ix), Some(c)) = (bn, cache) {
                        d = bn_back(&mut dp, *ix, c, &d);
                    }
                    d = conv_back(&mut dp, input, *conv, &d);
                }
                (
                    Stage::Residual { conv1, bn1, conv2, bn2 },
                    StageTape::Residual {
                        input,
                        bn1: c1,
                        mask1,
                        hidden,
                        bn2: c2,
                        mask2,
                    },
                ) => {
                    mask_grad(&mut d, mask2);
                    let skip = d.clone();
                    if let (Some(ix), Some(c)) = (bn2, c2) {
                        d = bn_back(&mut dp, *ix, c, &d);
                    }
                    d = conv_back(&mut dp, hidden, *conv2, &d);
                    mask_grad(&mut d, mask1);
                    if let (Some(ix), Some(c)) = (bn1, c1) {
                        d = bn_back(&mut dp, *ix, c, &d);
                    }
                    d = conv_back(&mut dp, input, *conv1, &d);
                    for (a, b) in d.data.iter_mut().zip(&skip.data) {
                        *a += b;
                    }
                }
                _ => return Err(Error::TapeMismatch("stage structure differs".into())),
            }
        }
        let input = d.to_tensor(ext);
        input.check_finite("input gradient")?;
        Ok(Gradients { params: dp, input })
    }
}
