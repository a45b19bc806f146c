//! Independent reference implementations shared by the integration tests and
//! the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spkr_core::autograd::{Tape, Var};
use spkr_core::eval::ScoredTrial;
use spkr_core::nn::conv::conv2d_direct;
use spkr_core::blocks::{BlockSpec, Res2NetModule, ResidualBlock};
use spkr_core::nn::{BatchNorm, Conv2d, ConvBn, ConvGeometry, Ctx, Linear, Mode, ParamStore};
use spkr_core::pooling::AttentivePooling;
use spkr_core::{BlockFamily, ModelVariant, Result, SpeakerModel, Tensor};

pub const FD_STEP: f64 = 1e-4;
/// Gradient magnitudes below this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Scramble gains, shifts and running statistics so normalization layers are
/// not the identity.
pub fn randomize_norms(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for e in store.params_mut() {
        if e.name.ends_with(".gamma") {
            e.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if e.name.ends_with(".beta") {
            e.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    for e in store.buffers_mut() {
        if e.name.ends_with(".running_mean") {
            e.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        } else if e.name.ends_with(".running_var") {
            e.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree: a ReLU switches inside
    /// the stencil, so the loss is not differentiable there.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            worst: self.worst.max(other.worst),
            checked: self.checked + other.checked,
            kinks: self.kinks + other.kinks,
        }
    }
}

/// Central differences at `h` and `h / 2` agree to `O(h^2)` on a smooth
/// loss; a larger gap means a ReLU switches inside the stencil.
pub const KINK_THRESHOLD: f64 = 1e-6;

fn compare(check: &mut GradCheck, analytic: f64, mut eval: impl FnMut(f64) -> f64) -> bool {
    let central = |h: f64, eval: &mut dyn FnMut(f64) -> f64| (eval(h) - eval(-h)) / (2.0 * h);
    let numeric = central(FD_STEP, &mut eval);
    let finer = central(FD_STEP / 2.0, &mut eval);
    if relative_error(numeric, finer) > KINK_THRESHOLD {
        check.kinks += 1;
        return false;
    }
    check.worst = check.worst.max(relative_error(analytic, numeric));
    check.checked += 1;
    true
}

/// Backpropagated versus central-difference gradients of `sum(f(x) * r)` for a
/// fixed random `r`, over the input and every parameter tensor (`samples`
/// random differentiable coordinates each).
pub fn gradient_check<G>(
    store: &ParamStore<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    seed: u64,
    samples: usize,
    f: G,
) -> GradCheck
where
    G: Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
{
    let mut r = rng(seed ^ 0x5eed);
    let probe = {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, mode, false);
        let x = ctx.tape.constant(input.clone());
        let y = f(&mut ctx, x).unwrap();
        ctx.tape.value(y).shape().to_vec()
    };
    let weight = random_tensor(&probe, &mut r);
    let loss = |store: &ParamStore<f64>, input: &Tensor<f64>, grads: bool| {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, store, mode, grads);
        let x = ctx.tape.leaf(input.clone(), grads);
        let y = f(&mut ctx, x).unwrap();
        let w = ctx.tape.constant(weight.clone());
        let p = ctx.tape.mul(y, w).unwrap();
        let l = ctx.tape.sum(p, None).unwrap();
        let value = ctx.tape.value(l).data()[0];
        if !grads {
            return (value, None);
        }
        let params = ctx.param_vars().to_vec();
        let mut g = tape.backward(l).unwrap();
        let mut out = vec![g.take(x)];
        out.extend(params.into_iter().map(|v| g.take(v)));
        (value, Some(out))
    };
    let (_, grads) = loss(store, input, true);
    let grads = grads.unwrap();
    let mut check = GradCheck::default();

    let dx = grads[0].clone().unwrap_or_else(|| Tensor::zeros(input.shape()).unwrap());
    let (mut accepted, mut tries) = (0, 0);
    while accepted < samples.min(input.numel()) && tries < 4 * samples {
        tries += 1;
        let i = r.gen_range(0..input.numel());
        accepted += compare(&mut check, dx.data()[i], |h| {
            let mut moved = input.clone();
            moved.data_mut()[i] += h;
            loss(store, &moved, false).0
        }) as usize;
    }
    for (k, entry) in store.params().iter().enumerate() {
        let n = entry.value.numel();
        let g = grads[k + 1].clone().unwrap_or_else(|| Tensor::zeros(entry.value.shape()).unwrap());
        let (mut accepted, mut tries) = (0, 0);
        while accepted < samples.min(n) && tries < 4 * samples {
            tries += 1;
            let i = r.gen_range(0..n);
            accepted += compare(&mut check, g.data()[i], |h| {
                let mut moved = store.clone();
                moved.params_mut()[k].value.data_mut()[i] += h;
                loss(&moved, input, false).0
            }) as usize;
        }
    }
    check
}

/// Small model with every structural feature of the full network.
pub fn tiny_variant(family: BlockFamily, classes: usize) -> ModelVariant {
    ModelVariant {
        family,
        stage_channels: vec![4, 8, 8],
        blocks_per_stage: vec![1, 1, 1],
        embedding_dim: 6,
        num_classes: classes,
        mel_bins: 80,
        heads: 2,
        attention_dim: 3,
    }
}

pub fn tiny_families() -> Vec<BlockFamily> {
    vec![
        BlockFamily::ResNet,
        BlockFamily::ResNeXt {
            base_width: 1,
            cardinality: 2,
        },
        BlockFamily::Res2Net { base_width: 1, scale: 2 },
    ]
}

pub fn tiny_model(family: BlockFamily, classes: usize, seed: u64) -> SpeakerModel<f64> {
    SpeakerModel::build(&tiny_variant(family, classes), seed).unwrap()
}

// ---- gradient cases ---------------------------------------------------------

pub const GRAD_SEEDS: u64 = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Largest share of sampled coordinates allowed to land on a kink.
pub const MAX_KINK_SHARE: f64 = 0.25;

/// A named finite-difference check, run once per seed.
pub struct GradCase {
    pub name: String,
    pub run: Box<dyn Fn(u64) -> GradCheck>,
}

fn case(name: impl Into<String>, run: impl Fn(u64) -> GradCheck + 'static) -> GradCase {
    GradCase {
        name: name.into(),
        run: Box::new(run),
    }
}

type OpFn = fn(&mut Ctx<'_, f64>, Var) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, OpFn)> {
    vec![
        ("add", |c, x| c.tape.add(x, x)),
        ("sub", |c, x| {
            let y = c.tape.tanh(x);
            c.tape.sub(x, y)
        }),
        ("mul", |c, x| c.tape.mul(x, x)),
        ("scale", |c, x| Ok(c.tape.scale(x, -2.5))),
        ("relu", |c, x| Ok(c.tape.relu(x))),
        ("tanh", |c, x| Ok(c.tape.tanh(x))),
        ("exp", |c, x| Ok(c.tape.exp(x))),
        ("sum", |c, x| c.tape.sum(x, Some(1))),
        ("mean", |c, x| c.tape.mean(x, Some(0))),
        ("max", |c, x| c.tape.max(x, Some(1))),
        ("softmax", |c, x| c.tape.softmax(x, 1)),
        ("transpose", |c, x| {
            let t = c.tape.transpose(x)?;
            c.tape.mul(t, t)
        }),
        ("matmul", |c, x| {
            let t = c.tape.transpose(x)?;
            c.tape.matmul(x, t)
        }),
        ("reshape", |c, x| {
            let r = c.tape.reshape(x, &[5, 4])?;
            Ok(c.tape.tanh(r))
        }),
        ("narrow-concat", |c, x| {
            let a = c.tape.narrow(x, 1, 0, 2)?;
            let b = c.tape.narrow(x, 1, 3, 2)?;
            let ab = c.tape.mul(a, b)?;
            c.tape.concat(&[ab, x], 1)
        }),
        ("cross-entropy", |c, x| c.tape.softmax_cross_entropy(x, &[0, 3, 4, 1])),
    ]
}

fn block_families() -> Vec<BlockFamily> {
    vec![
        BlockFamily::ResNet,
        BlockFamily::ResNeXt {
            base_width: 1,
            cardinality: 2,
        },
        BlockFamily::ResNeXt {
            base_width: 1,
            cardinality: 4,
        },
        BlockFamily::Res2Net { base_width: 1, scale: 2 },
        BlockFamily::Res2Net { base_width: 1, scale: 4 },
    ]
}

/// Every differentiable op, layer, block type and whole tiny networks of each
/// family. Names are `group/detail`.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut cases = Vec::new();
    for (name, op) in op_cases() {
        cases.push(case(format!("op/{name}"), move |seed| {
            let x = random_tensor(&[4, 5], &mut rng(seed));
            gradient_check(&ParamStore::new(), &x, Mode::Train, seed, 20, op)
        }));
    }
    let geoms = [
        ("3x3", ConvGeometry::same3x3(3, 4, 1).unwrap()),
        ("stride-2x2", ConvGeometry::new(2, 4, (3, 3), (2, 2), (0, 1), 1).unwrap()),
        ("stride-2x1", ConvGeometry::new(4, 4, (3, 3), (2, 1), (0, 1), 1).unwrap()),
        ("grouped", ConvGeometry::same3x3(4, 8, 4).unwrap()),
        ("pointwise", ConvGeometry::pointwise(6, 3).unwrap()),
    ];
    for (name, geom) in geoms {
        cases.push(case(format!("conv/{name}"), move |seed| {
            let mut r = rng(seed);
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", geom, &mut r).unwrap();
            let x = random_tensor(&[2, geom.in_channels, 7, 6], &mut r);
            gradient_check(&store, &x, Mode::Train, seed, 8, |c, x| conv.forward(c, x))
        }));
    }
    for mode in [Mode::Train, Mode::Infer] {
        cases.push(case(format!("batchnorm/{mode:?}"), move |seed| {
            let mut r = rng(seed);
            let mut store = ParamStore::new();
            let bn = BatchNorm::new(&mut store, "bn", 3).unwrap();
            randomize_norms(&mut store, &mut r);
            let x = random_tensor(&[2, 3, 4, 5], &mut r);
            gradient_check(&store, &x, mode, seed, 10, |c, x| bn.forward(c, x))
        }));
    }
    cases.push(case("layer/conv-bn-relu", |seed| {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let layer = ConvBn::new(&mut store, "l", ConvGeometry::same3x3(2, 3, 1).unwrap(), true, &mut r).unwrap();
        randomize_norms(&mut store, &mut r);
        let x = random_tensor(&[2, 2, 5, 5], &mut r);
        gradient_check(&store, &x, Mode::Train, seed, 8, |c, x| layer.forward(c, x))
    }));
    cases.push(case("layer/linear", |seed| {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "fc", 5, 3, &mut r).unwrap();
        let x = random_tensor(&[4, 5], &mut r);
        gradient_check(&store, &x, Mode::Train, seed, 10, |c, x| layer.forward(c, x))
    }));
    cases.push(case("layer/attentive-pooling", |seed| {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let heads = r.gen_range(1..4);
        let pool = AttentivePooling::new(&mut store, "pool", heads, 4, 3, &mut r).unwrap();
        let x = random_tensor(&[r.gen_range(1..7), 4], &mut r);
        gradient_check(&store, &x, Mode::Train, seed, 10, |c, x| pool.forward(c, x))
    }));
    for scale in [2, 3, 4] {
        cases.push(case(format!("block/res2net-module-s{scale}"), move |seed| {
            let mut r = rng(seed);
            let mut store = ParamStore::new();
            let module = Res2NetModule::new(&mut store, "m", 2 * scale, scale, &mut r).unwrap();
            randomize_norms(&mut store, &mut r);
            let x = random_tensor(&[2, 2 * scale, 4, 4], &mut r);
            gradient_check(&store, &x, Mode::Train, seed, 6, |c, x| module.forward(c, x))
        }));
    }
    for family in block_families() {
        for mode in [Mode::Train, Mode::Infer] {
            cases.push(case(format!("block/{family}-{mode:?}"), move |seed| {
                let mut r = rng(seed);
                let mut store = ParamStore::new();
                let spec = BlockSpec {
                    family,
                    channels: 4,
                    stage_multiplier: 1,
                };
                let block = ResidualBlock::new(&mut store, "b", &spec, &mut r).unwrap();
                randomize_norms(&mut store, &mut r);
                let x = random_tensor(&[2, 4, 5, 4], &mut r);
                gradient_check(&store, &x, mode, seed, 4, |c, x| block.forward(c, x))
            }));
        }
    }
    for family in tiny_families() {
        for mode in [Mode::Train, Mode::Infer] {
            cases.push(case(format!("network/{family}-{mode:?}"), move |seed| {
                let mut r = rng(seed);
                let mut model = tiny_model(family, 3, seed);
                randomize_norms(model.store_mut(), &mut r);
                let x = random_tensor(&[2, 1, 80, 16], &mut r);
                gradient_check(model.store(), &x, mode, seed, 3, |c, x| {
                    let e = model.embed_vars(c, x)?;
                    model.logits_vars(c, e)
                })
            }));
        }
    }
    cases
}

/// Run a case over all seeds; `Err` describes the first violation.
pub fn run_case(case: &GradCase) -> std::result::Result<GradCheck, String> {
    let mut total = GradCheck::default();
    for seed in 0..GRAD_SEEDS {
        let c = (case.run)(seed);
        if c.worst >= GRAD_TOLERANCE {
            return Err(format!("{}: seed {seed} relative error {:e}", case.name, c.worst));
        }
        total = total.merge(c);
    }
    let share = total.kinks as f64 / (total.kinks + total.checked) as f64;
    if total.checked == 0 || share > MAX_KINK_SHARE {
        return Err(format!("{}: too few differentiable samples {total:?}", case.name));
    }
    Ok(total)
}

// ---- convolution ------------------------------------------------------------

fn slice_channels(x: &Tensor<f64>, start: usize, len: usize) -> Tensor<f64> {
    let s = x.shape();
    let plane = s[2] * s[3];
    let mut data = Vec::with_capacity(s[0] * len * plane);
    for n in 0..s[0] {
        let base = (n * s[1] + start) * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Tensor::new(&[s[0], len, s[2], s[3]], data).unwrap()
}

fn concat_channels(parts: &[Tensor<f64>]) -> Tensor<f64> {
    let s = parts[0].shape().to_vec();
    let plane = s[2] * s[3];
    let c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut data = Vec::with_capacity(s[0] * c * plane);
    for n in 0..s[0] {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[n * pc * plane..(n + 1) * pc * plane]);
        }
    }
    Tensor::new(&[s[0], c, s[2], s[3]], data).unwrap()
}

/// Grouped convolution as `groups` ungrouped convolutions over channel slices.
pub fn conv_by_slices(x: &Tensor<f64>, w: &Tensor<f64>, geom: &ConvGeometry) -> Tensor<f64> {
    let cin = geom.in_channels / geom.groups;
    let cout = geom.out_channels / geom.groups;
    let single = ConvGeometry::new(cin, cout, geom.kernel, geom.stride, geom.padding, 1).unwrap();
    let w_per = w.numel() / geom.groups;
    let parts: Vec<Tensor<f64>> = (0..geom.groups)
        .map(|g| {
            let xs = slice_channels(x, g * cin, cin);
            let ws = Tensor::new(&single.weight_shape(), w.data()[g * w_per..(g + 1) * w_per].to_vec()).unwrap();
            conv2d_direct(&xs, &ws, &single).unwrap()
        })
        .collect();
    concat_channels(&parts)
}

// ---- inference-mode layer arithmetic ------------------------------------------

fn param(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let id = store.find_param(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.param(id).data().to_vec()
}

fn buffer(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store
        .buffers()
        .iter()
        .find(|e| e.name == name)
        .unwrap_or_else(|| panic!("no buffer {name}"))
        .value
        .data()
        .to_vec()
}

/// `gamma * (x - mean) / sqrt(var + 1e-5) + beta` with running statistics,
/// for channels `[start, start + len)` of the layer `prefix`.
fn affine_norm(x: &Tensor<f64>, store: &ParamStore<f64>, prefix: &str, start: usize) -> Tensor<f64> {
    let (g, b) = (param(store, &format!("{prefix}.gamma")), param(store, &format!("{prefix}.beta")));
    let (m, v) = (
        buffer(store, &format!("{prefix}.running_mean")),
        buffer(store, &format!("{prefix}.running_var")),
    );
    let s = x.shape();
    let plane = s[2] * s[3];
    let mut out = x.clone();
    for (i, val) in out.data_mut().iter_mut().enumerate() {
        let c = start + (i / plane) % s[1];
        *val = g[c] * (*val - m[c]) / (v[c] + 1e-5).sqrt() + b[c];
    }
    out
}

fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| v.max(0.0))
}

fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data).unwrap()
}

fn conv_weight(store: &ParamStore<f64>, layer: &ConvBn) -> Tensor<f64> {
    store.param(layer.conv.weight).clone()
}

/// Unrolled hierarchical recurrence: `y1 = x1`, `y2 = K2(x2)`,
/// `yi = Ki(xi + y(i-1))`, each `K = relu(norm(conv))`, concatenated.
pub fn res2net_recurrence(x: &Tensor<f64>, store: &ParamStore<f64>, prefix: &str, scale: usize) -> Tensor<f64> {
    let w = x.shape()[1] / scale;
    let geom = ConvGeometry::same3x3(w, w, 1).unwrap();
    let mut ys = vec![slice_channels(x, 0, w)];
    for i in 2..=scale {
        let xi = slice_channels(x, (i - 1) * w, w);
        let input = if i == 2 { xi } else { add(&xi, &ys[i - 2]) };
        let kernel = Tensor::new(&geom.weight_shape(), param(store, &format!("{prefix}.k{i}.conv.weight"))).unwrap();
        let conv = conv2d_direct(&input, &kernel, &geom).unwrap();
        ys.push(relu(&affine_norm(&conv, store, &format!("{prefix}.k{i}.bn"), 0)));
    }
    concat_channels(&ys)
}

/// ResNeXt block written as `cardinality` explicit branches
/// (1x1 reduce, 3x3, 1x1 expand per branch), summed, normalized and added to
/// the input.
pub fn resnext_branches(
    x: &Tensor<f64>,
    store: &ParamStore<f64>,
    block: &spkr_core::blocks::ResNeXtBlock,
    prefix: &str,
) -> Tensor<f64> {
    let c = block.channels;
    let k = block.cardinality;
    let inner = block.reduce.conv.geom.out_channels;
    let d = inner / k;
    let reduce = conv_weight(store, &block.reduce);
    let grouped = conv_weight(store, &block.grouped);
    let expand = conv_weight(store, &block.expand);
    let mut total: Option<Tensor<f64>> = None;
    for b in 0..k {
        let rg = ConvGeometry::pointwise(c, d).unwrap();
        let rw = Tensor::new(&rg.weight_shape(), reduce.data()[b * d * c..(b + 1) * d * c].to_vec()).unwrap();
        let h = relu(&affine_norm(&conv2d_direct(x, &rw, &rg).unwrap(), store, &format!("{prefix}.reduce.bn"), b * d));
        let gg = ConvGeometry::same3x3(d, d, 1).unwrap();
        let per = d * d * 9;
        let gw = Tensor::new(&gg.weight_shape(), grouped.data()[b * per..(b + 1) * per].to_vec()).unwrap();
        let h = relu(&affine_norm(&conv2d_direct(&h, &gw, &gg).unwrap(), store, &format!("{prefix}.grouped.bn"), b * d));
        let eg = ConvGeometry::pointwise(d, c).unwrap();
        let mut ew = Vec::with_capacity(c * d);
        for o in 0..c {
            ew.extend_from_slice(&expand.data()[o * inner + b * d..o * inner + (b + 1) * d]);
        }
        let ew = Tensor::new(&eg.weight_shape(), ew).unwrap();
        let y = conv2d_direct(&h, &ew, &eg).unwrap();
        total = Some(match total {
            Some(t) => add(&t, &y),
            None => y,
        });
    }
    let merged = affine_norm(&total.unwrap(), store, &format!("{prefix}.expand.bn"), 0);
    relu(&add(x, &merged))
}

// ---- metrics ----------------------------------------------------------------

/// `(false accept, false reject)` when accepting scores strictly above `t`,
/// counted trial by trial.
pub fn rates_at(trials: &[ScoredTrial], t: f64) -> (f64, f64) {
    let tar = trials.iter().filter(|x| x.target).count() as f64;
    let non = trials.len() as f64 - tar;
    let fa = trials.iter().filter(|x| !x.target && x.score > t).count() as f64 / non;
    let fr = trials.iter().filter(|x| x.target && x.score <= t).count() as f64 / tar;
    (fa, fr)
}

/// Exhaustive sweep: every trial score (plus `-inf`) as a threshold, sorted.
pub fn exhaustive_points(trials: &[ScoredTrial]) -> Vec<(f64, f64)> {
    let mut ts: Vec<f64> = trials.iter().map(|t| t.score).collect();
    ts.push(f64::NEG_INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter().map(|t| rates_at(trials, t)).collect()
}

/// EER at the linear interpolation of the first operating point where the
/// false-reject rate reaches the false-accept rate.
pub fn exhaustive_eer(trials: &[ScoredTrial]) -> f64 {
    let pts = exhaustive_points(trials);
    let j = pts.iter().position(|&(fa, fr)| fr >= fa).unwrap();
    let (fa1, fr1) = pts[j];
    if j == 0 || fr1 == fa1 {
        return fa1;
    }
    let (fa0, fr0) = pts[j - 1];
    let t = (fa0 - fr0) / ((fr1 - fa1) - (fr0 - fa0));
    fa0 + t * (fa1 - fa0)
}

pub fn exhaustive_min_dcf(trials: &[ScoredTrial], p: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p).min(c_fa * (1.0 - p));
    exhaustive_points(trials)
        .into_iter()
        .map(|(fa, fr)| (c_miss * p * fr + c_fa * (1.0 - p) * fa) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// Random score set with both classes present; scores are quantized so ties occur.
pub fn random_trials(rng: &mut impl Rng) -> Vec<ScoredTrial> {
    let n = rng.gen_range(2..60);
    let sep = rng.gen_range(0.0..2.0);
    let quant: f64 = [0.0, 0.1, 0.5][rng.gen_range(0..3)];
    let mut trials: Vec<ScoredTrial> = (0..n)
        .map(|i| {
            let target = i % 2 == 0 || rng.gen_bool(0.3);
            let mut score = rng.gen_range(-1.0..1.0) + if target { sep } else { 0.0 };
            if quant > 0.0 {
                score = (score / quant).round() * quant;
            }
            ScoredTrial { target, score }
        })
        .collect();
    trials[1].target = false;
    trials
}
