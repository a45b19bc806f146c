//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Set `SPKR_ACCEPTANCE_QUICK=1` to skip the toy training run (criteria 5 and 6).

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use oracles::{
    conv_by_slices, exhaustive_eer, exhaustive_min_dcf, gradient_cases, random_tensor, random_trials, randomize_norms,
    res2net_recurrence, resnext_branches, rng, run_case, tiny_model,
};
use rand::Rng;
use spkr_core::autograd::{Tape, Var};
use spkr_core::blocks::{BlockSpec, Res2NetModule, ResidualBlock};
use spkr_core::eval::{compute_eer, compute_min_dcf, DcfParams};
use spkr_core::gradcam::grad_cam;
use spkr_core::nn::{ConvGeometry, Ctx, Mode, ParamStore};
use spkr_core::pooling::AttentivePooling;
use spkr_core::variant::PAPER_NUM_CLASSES;
use spkr_core::{BlockFamily, ModelVariant, SpeakerModel, Tensor};

type Outcome = Result<String, String>;

const REFERENCE: [(&str, f64); 10] = [
    ("resnet", 5.2),
    ("resnext-40w4c", 5.4),
    ("resnext-26w8c", 5.3),
    ("resnext-12w32c", 5.9),
    ("res2net-48w2s", 5.5),
    ("res2net-26w4s", 5.6),
    ("res2net-14w8s", 5.6),
    ("resnext-20w32c", 10.2),
    ("res2net-26w6s", 7.5),
    ("res2net-26w8s", 9.3),
];
const PARAM_TOLERANCE: f64 = 0.04;
const ORACLE_TOLERANCE: f64 = 1e-5;
const METRIC_TOLERANCE: f64 = 1e-12;
const TOY_MODELS: [&str; 2] = ["resnet", "res2net-14w8s"];
const TOY_EPOCHS: usize = 30;
const TOY_CROP_SECONDS: f64 = 1.0;
const MIN_TRAIN_ACCURACY: f64 = 0.9;
const MAX_TOY_EER: f64 = 0.15;
const TRUNCATION_SLACK: f64 = 0.02;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spkr(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spkr"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run spkr: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "spkr {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(stdout)
}

fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .filter(|(k, _)| !k.contains(' '))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

fn number(kv: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    kv.get(key)
        .ok_or_else(|| format!("missing `{key}`"))?
        .parse()
        .map_err(|e| format!("`{key}`: {e}"))
}

// ---- 1 ----------------------------------------------------------------------

fn parameter_counts() -> Outcome {
    let names: Vec<&str> = REFERENCE.iter().map(|r| r.0).collect();
    let expected: Vec<String> = REFERENCE.iter().map(|r| r.1.to_string()).collect();
    let out = spkr(&["audit", "--expected-params", &expected.join(","), &names.join(",")])?;
    let kv = key_values(&out);
    let mut worst: f64 = 0.0;
    for (name, millions) in REFERENCE {
        let ours = number(&kv, &format!("params_{name}"))?;
        let dev = (ours - millions * 1e6) / (millions * 1e6);
        ensure(dev.abs() <= PARAM_TOLERANCE, || format!("{name}: {ours} vs {millions}M ({:+.1}%)", dev * 100.0))?;
        worst = worst.max(dev.abs());
    }
    Ok(format!("10 variants within ±4%, worst deviation {:.1}%", worst * 100.0))
}

// ---- 2 ----------------------------------------------------------------------

fn shape_audit() -> Outcome {
    for name in ["resnet", "res2net-26w8s", "resnext-40w4c"] {
        let model = SpeakerModel::<f32>::build(&ModelVariant::parse(name, PAPER_NUM_CLASSES).unwrap(), 0).unwrap();
        let mut shapes = BTreeMap::new();
        let mut hook = |layer: &str, v: Var, tape: &mut Tape<f32>| {
            shapes.insert(layer.to_string(), tape.shape(v)[1..].to_vec());
            Ok(v)
        };
        let mut tape = Tape::new();
        let (pooled, logits) = {
            let mut ctx = Ctx::new(&mut tape, model.store(), Mode::Infer, false).with_hook(&mut hook);
            let x = ctx.tape.constant(Tensor::zeros(&[1, 1, 80, 200]).unwrap());
            let e = model.embed_vars(&mut ctx, x).map_err(|e| e.to_string())?;
            let l = model.logits_vars(&mut ctx, e).map_err(|e| e.to_string())?;
            (e, l)
        };
        // [channels, frequency, time]
        let want = [
            ("conv1", [64, 39, 100]),
            ("block1", [64, 39, 100]),
            ("conv2", [128, 19, 50]),
            ("block2", [128, 19, 50]),
            ("conv3", [256, 9, 25]),
            ("block3", [256, 9, 25]),
            ("conv4", [256, 4, 25]),
            ("conv5", [128, 1, 25]),
        ];
        for (layer, s) in want {
            ensure(shapes[layer] == s, || format!("{name} {layer}: {:?} vs {s:?}", shapes[layer]))?;
        }
        ensure(tape.shape(pooled) == [1, 128], || format!("{name} pooled {:?}", tape.shape(pooled)))?;
        ensure(tape.shape(logits) == [1, PAPER_NUM_CLASSES], || format!("{name} logits {:?}", tape.shape(logits)))?;
    }
    Ok("T=200: 39x100x64, 19x50x128, 9x25x256, 4x25x256, 1x25x128, pooled 128, logits 5994".into())
}

// ---- 3 ----------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let cases = gradient_cases();
    let (mut checked, mut kinks) = (0, 0);
    let mut worst: f64 = 0.0;
    for case in &cases {
        let r = run_case(case)?;
        checked += r.checked;
        kinks += r.kinks;
        worst = worst.max(r.worst);
    }
    Ok(format!(
        "{} cases x 20 seeds, {checked} coordinates, worst relative error {worst:.1e} ({kinks} samples on ReLU kinks resampled)",
        cases.len()
    ))
}

// ---- 4 ----------------------------------------------------------------------

fn infer(store: &ParamStore<f64>, x: &Tensor<f64>, f: impl Fn(&mut Ctx<'_, f64>, Var) -> spkr_core::Result<Var>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store, Mode::Infer, false);
    let xv = ctx.tape.constant(x.clone());
    let y = f(&mut ctx, xv).unwrap();
    ctx.tape.value(y).clone()
}

fn oracle_equivalences() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut track = |what: String, d: f64| -> Result<(), String> {
        worst = worst.max(d);
        ensure(d < ORACLE_TOLERANCE, || format!("{what}: max difference {d:e}"))
    };
    for groups in [2, 4, 8] {
        let mut r = rng(groups as u64);
        let geom = ConvGeometry::same3x3(2 * groups, 2 * groups, groups).unwrap();
        let x = random_tensor(&[2, geom.in_channels, 8, 7], &mut r);
        let w = random_tensor(&geom.weight_shape(), &mut r);
        let mut store = ParamStore::new();
        let id = store.add_param("w".into(), w.clone());
        let got = infer(&store, &x, |c, x| {
            let w = c.param(id);
            c.tape.conv2d(x, w, geom)
        });
        track(format!("grouped conv c={groups}"), got.max_abs_diff(&conv_by_slices(&x, &w, &geom)).unwrap())?;
    }
    for scale in [2, 4, 8] {
        let mut r = rng(10 + scale as u64);
        let mut store = ParamStore::new();
        let module = Res2NetModule::new(&mut store, "m", 2 * scale, scale, &mut r).unwrap();
        randomize_norms(&mut store, &mut r);
        let x = random_tensor(&[2, 2 * scale, 6, 5], &mut r);
        let got = infer(&store, &x, |c, x| module.forward(c, x));
        track(format!("res2net s={scale}"), got.max_abs_diff(&res2net_recurrence(&x, &store, "m", scale)).unwrap())?;
    }
    for cardinality in [2, 4, 8] {
        let mut r = rng(20 + cardinality as u64);
        let mut store = ParamStore::new();
        let spec = BlockSpec {
            family: BlockFamily::ResNeXt {
                base_width: 2,
                cardinality,
            },
            channels: 6,
            stage_multiplier: 1,
        };
        let Ok(ResidualBlock::ResNeXt(block)) = ResidualBlock::new(&mut store, "b", &spec, &mut r) else {
            return Err("could not build ResNeXt block".into());
        };
        randomize_norms(&mut store, &mut r);
        let x = random_tensor(&[2, 6, 5, 6], &mut r);
        let got = infer(&store, &x, |c, x| block.forward(c, x));
        track(format!("resnext c={cardinality}"), got.max_abs_diff(&resnext_branches(&x, &store, &block, "b")).unwrap())?;
    }
    let mut r = rng(2024);
    let p = DcfParams::default();
    let mut metric_worst: f64 = 0.0;
    for case in 0..500 {
        let trials = random_trials(&mut r);
        let d1 = (compute_eer(&trials).unwrap().0 - exhaustive_eer(&trials)).abs();
        let d2 = (compute_min_dcf(&trials, &p).unwrap().0 - exhaustive_min_dcf(&trials, p.p_target, p.c_miss, p.c_fa)).abs();
        metric_worst = metric_worst.max(d1).max(d2);
        ensure(d1.max(d2) < METRIC_TOLERANCE, || format!("score set {case}: eer diff {d1:e}, min dcf diff {d2:e}"))?;
    }
    Ok(format!(
        "grouped conv, res2net recurrence, resnext branches max diff {worst:.1e}; 500 score sets max metric diff {metric_worst:.1e}"
    ))
}

// ---- 5 and 6 ----------------------------------------------------------------

struct ToyResult {
    model: String,
    accuracy: f64,
    rows: BTreeMap<String, (usize, f64)>,
    random_eer: f64,
    minutes: f64,
}

fn toy_run(dir: &Path) -> Result<Vec<ToyResult>, String> {
    let d = dir.to_str().unwrap();
    let synth = key_values(&spkr(&["synth", "--out", d, "--speakers", "20", "--seed", "0"])?);
    let train = synth.get("train_manifest").ok_or("synth: no train manifest")?.clone();
    let test = synth.get("test_manifest").ok_or("synth: no test manifest")?.clone();
    let trials = synth.get("trial_list").ok_or("synth: no trial list")?.clone();
    let feats = format!("{d}/features");
    spkr(&["features", "--manifest", &train, "--out", &format!("{feats}/train")])?;
    spkr(&["features", "--manifest", &test, "--out", &format!("{feats}/test")])?;
    let train = format!("{feats}/train/manifest.tsv");
    let test = format!("{feats}/test/manifest.tsv");

    let mut results = Vec::new();
    for model in TOY_MODELS {
        let start = Instant::now();
        let ckpt = format!("{d}/{model}.ckpt");
        let epochs = TOY_EPOCHS.to_string();
        let crop = TOY_CROP_SECONDS.to_string();
        let log = spkr(&[
            "train", "--manifest", &train, "--checkpoint", &ckpt, "--variant", model, "--epochs", &epochs,
            "--crop-seconds", &crop, "--seed", "0",
        ])?;
        let last = log.lines().rfind(|l| l.starts_with("epoch=")).ok_or("no epoch lines")?;
        let accuracy = last
            .split_whitespace()
            .find_map(|f| f.strip_prefix("accuracy="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("bad epoch line `{last}`"))?;
        let report = spkr(&[
            "eval", "--checkpoint", &ckpt, "--trials", &trials, "--manifest", &test, "--truncate-seconds", "2,3,4",
        ])?;
        let kv = key_values(&report);
        let mut rows = BTreeMap::new();
        for (label, suffix) in [("2s", "_2s"), ("3s", "_3s"), ("4s", "_4s"), ("regular", "")] {
            let n = number(&kv, &format!("trials{suffix}"))? as usize;
            rows.insert(label.to_string(), (n, number(&kv, &format!("eer{suffix}"))?));
        }
        let baseline = key_values(&spkr(&["eval", "--variant", model, "--seed", "0", "--trials", &trials, "--manifest", &test])?);
        results.push(ToyResult {
            model: model.to_string(),
            accuracy,
            rows,
            random_eer: number(&baseline, "eer")?,
            minutes: start.elapsed().as_secs_f64() / 60.0,
        });
    }
    Ok(results)
}

fn toy_end_to_end(results: &[ToyResult]) -> Outcome {
    let mut parts = Vec::new();
    for r in results {
        let eer = r.rows["regular"].1;
        ensure(r.accuracy > MIN_TRAIN_ACCURACY, || format!("{} training accuracy {:.3}", r.model, r.accuracy))?;
        ensure(eer < MAX_TOY_EER, || format!("{} held-out EER {:.2}%", r.model, eer * 100.0))?;
        parts.push(format!(
            "{}: accuracy {:.1}%, EER {:.2}% (untrained {:.2}%), {:.1} min",
            r.model,
            r.accuracy * 100.0,
            eer * 100.0,
            r.random_eer * 100.0,
            r.minutes
        ));
    }
    Ok(parts.join("; "))
}

fn truncation_parity(results: &[ToyResult]) -> Outcome {
    let mut parts = Vec::new();
    for r in results {
        let regular = r.rows["regular"];
        for label in ["2s", "3s", "4s"] {
            ensure(r.rows[label].0 == regular.0, || format!("{} row {label} has {} trials, regular {}", r.model, r.rows[label].0, regular.0))?;
        }
        let short = r.rows["2s"].1;
        ensure(short >= regular.1 - TRUNCATION_SLACK, || {
            format!("{}: EER(2s) {:.2}% below EER(regular) {:.2}% by more than 2 points", r.model, short * 100.0, regular.1 * 100.0)
        })?;
        parts.push(format!(
            "{}: 2s {:.2}% 3s {:.2}% 4s {:.2}% regular {:.2}%",
            r.model,
            short * 100.0,
            r.rows["3s"].1 * 100.0,
            r.rows["4s"].1 * 100.0,
            regular.1 * 100.0
        ));
    }
    Ok(parts.join("; "))
}

// ---- 7 ----------------------------------------------------------------------

fn pooling_invariants() -> Outcome {
    let mut r = rng(7);
    for case in 0..100 {
        let (heads, dim, t) = (r.gen_range(1..17), r.gen_range(1..9), r.gen_range(1..40));
        let mut store = ParamStore::new();
        let pool = AttentivePooling::new(&mut store, "pool", heads, dim, r.gen_range(1..9), &mut r).unwrap();
        let frames = random_tensor(&[t, dim], &mut r).map(|v| v * 3.0);
        for alpha in pool.attention(&store, &frames).unwrap() {
            let s: f64 = alpha.iter().sum();
            ensure((s - 1.0).abs() < 1e-6, || format!("input {case}: weights sum to {s}"))?;
        }
        let mut order: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let shuffled: Vec<f64> = order.iter().flat_map(|&i| frames.data()[i * dim..(i + 1) * dim].to_vec()).collect();
        let a = pool.pool(&store, &frames).unwrap();
        let b = pool.pool(&store, &Tensor::new(&[t, dim], shuffled).unwrap()).unwrap();
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(d < 1e-9, || format!("input {case}: permutation changed output by {d:e}"))?;
        let frame: Vec<f64> = frames.data()[..dim].to_vec();
        let constant = Tensor::new(&[t, dim], (0..t).flat_map(|_| frame.clone()).collect()).unwrap();
        let c = pool.pool(&store, &constant).unwrap();
        let d = c.iter().zip(&frame).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(d < 1e-9, || format!("input {case}: constant input moved by {d:e}"))?;
    }
    Ok("100 random inputs: weights sum to 1, permutation invariant, constant input is a fixed point".into())
}

// ---- 8 ----------------------------------------------------------------------

fn scale_row(m: &mut SpeakerModel<f64>, class: usize, factor: f64) {
    let classes = m.variant().num_classes;
    let id = m.classifier().weight;
    for (i, v) in m.store_mut().param_mut(id).data_mut().iter_mut().enumerate() {
        if i % classes == class {
            *v *= factor;
        }
    }
}

fn gradcam_sanity() -> Outcome {
    let family = BlockFamily::Res2Net { base_width: 1, scale: 2 };
    for seed in 0..5 {
        let mut m = tiny_model(family, 4, seed);
        randomize_norms(m.store_mut(), &mut rng(seed + 50));
        let t = 40 + 13 * seed as usize;
        let x = random_tensor(&[80, t], &mut rng(seed));
        let base = grad_cam(&m, &x, "block3", Some(1)).map_err(|e| e.to_string())?;
        ensure(base.values.shape() == [9, t.div_ceil(8)], || format!("T={t}: map {:?}", base.values.shape()))?;
        let mut scaled = m.clone();
        scale_row(&mut scaled, 1, 4.0);
        let s = grad_cam(&scaled, &x, "block3", Some(1)).map_err(|e| e.to_string())?;
        let d = base.normalized().max_abs_diff(&s.normalized()).unwrap();
        ensure(d < 1e-9, || format!("row scaling changed the normalized map by {d:e}"))?;
        scale_row(&mut m, 1, 0.0);
        let z = grad_cam(&m, &x, "block3", Some(1)).map_err(|e| e.to_string())?;
        ensure(z.values.data().iter().all(|&v| v == 0.0), || "zero classifier row left a nonzero map".into())?;
    }
    let full = SpeakerModel::<f32>::build(&ModelVariant::parse("resnet", 10).unwrap(), 0).unwrap();
    let x: Tensor<f32> = random_tensor(&[80, 200], &mut rng(99)).cast();
    let map = grad_cam(&full, &x, "block3", None).map_err(|e| e.to_string())?;
    ensure(map.values.shape() == [9, 25] && map.upsampled.shape() == [80, 200], || {
        format!("full model map {:?} upsampled {:?}", map.values.shape(), map.upsampled.shape())
    })?;
    Ok("zero row gives zero map, normalized map invariant to row scaling, block3 map 9x⌈T/8⌉ (9x25 at T=200)".into())
}

fn report(id: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {id} {title}: {detail} [{secs:.1}s]");
            true
        }
        Err(why) => {
            println!("FAIL {id} {title}: {why} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let quick = std::env::var("SPKR_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let mut ok = true;
    ok &= report(1, "parameter counts", parameter_counts);
    ok &= report(2, "shape audit", shape_audit);
    ok &= report(3, "gradient correctness", gradient_correctness);
    ok &= report(4, "oracle equivalences", oracle_equivalences);
    if quick {
        println!("SKIP 5 toy end-to-end: SPKR_ACCEPTANCE_QUICK=1");
        println!("SKIP 6 truncation parity: SPKR_ACCEPTANCE_QUICK=1");
    } else {
        let dir = tempfile::tempdir().expect("temporary directory");
        let toy = catch_unwind(AssertUnwindSafe(|| toy_run(dir.path())))
            .unwrap_or_else(|_| Err("toy run panicked".into()));
        match toy {
            Ok(results) => {
                ok &= report(5, "toy end-to-end", || toy_end_to_end(&results));
                ok &= report(6, "truncation parity", || truncation_parity(&results));
            }
            Err(e) => {
                ok &= report(5, "toy end-to-end", || Err(e.clone()));
                ok &= report(6, "truncation parity", || Err(e));
            }
        }
    }
    ok &= report(7, "pooling invariants", pooling_invariants);
    ok &= report(8, "grad-cam sanity", gradcam_sanity);
    if !ok {
        std::process::exit(1);
    }
}
