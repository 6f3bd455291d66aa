//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion.
//!
//! Runs without the libtest harness so the lines come out in order and
//! unbuffered. By default a FAIL or SKIP is reported but does not fail the
//! process; set `IRCNN_ACCEPTANCE_STRICT=1` to make either fatal.
//! `IRCNN_ACCEPTANCE_ONLY=1,4,9` runs a subset. Datasets are looked up in
//! `$IRCNN_DATA_DIR`, else the workspace `data/` directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ircnn::data::{decode_cifar, decode_mnist, CifarKind, Dataset, DatasetKind, Split, DATA_DIR_ENV};
use ircnn::harness::{
    cmd_gradcheck, cmd_params, cmd_train, linear_baseline, load_train_val, read_metrics, GradcheckOptions, RunConfig,
    TrainOptions, METRICS_FILE,
};
use ircnn::layers::{Gradients, LayerGraph, LayerKind, Mode, Param, ParamRole};
use ircnn::models::{build_model, ModelConfig, Variant};
use ircnn::train::{
    init_baseline, lsuv_init, AdamConfig, EveConfig, LsuvConfig, Optimizer, OptimizerConfig, SgdConfig,
};
use ircnn::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MNIST_TRAIN_SHA256: &str = "3d8a18faa83a524c6ea8b94d61ca16349db0b0879403fcc6154149991baf33fd";
const MNIST_TEST_SHA256: &str = "a9b57b7f3e5c01948f22944f09dcfed4b7d1f937db0d3fb22e0059abecee2644";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail: detail.into() }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Outcome { status: Status::Skip, detail: detail.into() }
    }
}

fn workspace() -> PathBuf {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    p.canonicalize().unwrap_or(p)
}

fn data_root() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => workspace().join("data"),
    }
}

fn config(name: &str) -> Result<RunConfig> {
    RunConfig::load(&workspace().join("configs").join(name))
}

fn io(path: &Path, source: std::io::Error) -> ircnn::Error {
    ircnn::Error::Io { path: path.to_path_buf(), source }
}

fn tempdir() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| io(&std::env::temp_dir(), e))
}

fn final_row(out: &Path) -> Result<ircnn::harness::MetricsRow> {
    read_metrics(&out.join(METRICS_FILE))?
        .pop()
        .ok_or_else(|| ircnn::Error::Internal("metrics.csv has no rows".into()))
}

// 1
fn gradients() -> Result<Outcome> {
    let tiny = ModelConfig::tiny();
    let mut kinds = BTreeSet::new();
    let mut steps = BTreeSet::new();
    let mut lines = Vec::new();
    let mut ok = true;
    for v in Variant::ALL {
        let model = tiny.with_variant(v);
        let graph: LayerGraph<f64> = build_model(&model)?;
        for n in graph.nodes() {
            kinds.insert(n.kind.name());
            if let LayerKind::Rcl { steps: t, .. } = n.kind {
                steps.insert(t);
            }
        }
        let r = cmd_gradcheck(&model, &GradcheckOptions::default())?;
        let worst = r.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
        let failed = r.tensors.iter().filter(|t| !t.pass).count();
        ok &= r.pass;
        lines.push(format!("{v} {} tensors, {failed} failed, max rel err {worst:.2e}", r.tensors.len()));
    }
    let want = ["conv", "rcl", "lrn", "maxpool", "avgpool", "gap", "concat", "residual_add", "softmax_xent"];
    let missing: Vec<&str> = want.iter().copied().filter(|k| !kinds.contains(k)).collect();
    let steps_ok = steps == BTreeSet::from([1, 2, 3]);
    ok &= missing.is_empty() && steps_ok;
    let mut detail = lines.join("; ");
    if !missing.is_empty() {
        detail += &format!("; ops not covered: {missing:?}");
    }
    detail += &format!("; rcl steps {steps:?}");
    Ok(Outcome::check(ok, detail))
}

// 2
fn parity() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for preset in ["tiny", "paper"] {
        let r = cmd_params(&ModelConfig::preset(preset)?, true)?;
        ok &= r.parity_ok();
        let counts: Vec<String> = r.variants.iter().flatten().map(|(v, n)| format!("{v} {n}")).collect();
        parts.push(format!("{preset}: {}", counts.join(", ")));
        if preset == "paper" {
            ok &= (3_000_000..=3_250_000).contains(&r.total);
        }
    }
    Ok(Outcome::check(ok, format!("{}; paper total must lie in [3.0M, 3.25M]", parts.join("; "))))
}

// 3
fn recurrence_identity() -> Result<Outcome> {
    let cfg = ModelConfig::tiny();
    let mut flat = cfg.clone();
    for s in &mut flat.stages {
        s.block.steps = 0;
    }
    let mut g: LayerGraph<f32> = build_model(&cfg)?;
    init_baseline(&mut g, 7);
    let x = Dataset::synthetic(16, 1, 28, 10, 3)?.images;
    let recurrent = g.predict(&x, Mode::Infer)?;

    let mut zeroed = 0;
    for p in g.params_mut() {
        if p.name.ends_with(".w_r") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            zeroed += 1;
        }
    }
    let mut h: LayerGraph<f32> = build_model(&flat)?;
    h.load_params_from(&g)?;
    let a = g.predict(&x, Mode::Infer)?;
    let b = h.predict(&x, Mode::Infer)?;
    let same = a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits());
    // The comparison is only meaningful if recurrence changes something.
    let live = recurrent.data() != a.data();
    Ok(Outcome::check(
        same && live && zeroed > 0,
        format!(
            "{zeroed} recurrent kernels zeroed; {} logits bitwise equal: {same}; nonzero w_r changes logits: {live}",
            a.len()
        ),
    ))
}

// 4
fn quadratic_run(cfg: OptimizerConfig, steps: usize) -> Result<Vec<Vec<f64>>> {
    let curv = [1.0, 10.0, 0.1, 3.0, 0.5, 25.0, 2.0, 0.02];
    let start = [2.0, -1.5, 3.0, 0.25, -4.0, 1.0, -0.75, 5.0];
    let mut params = vec![Param {
        name: "theta".into(),
        node: 0,
        role: ParamRole::Kernel,
        l2: false,
        value: Tensor::new([1, 1, 1, 8], start.to_vec())?,
    }];
    let mut opt = Optimizer::new(cfg, &params)?;
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        let th = params[0].value.data().to_vec();
        let loss: f64 = th.iter().zip(&curv).map(|(t, a)| 0.5 * a * t * t).sum();
        let g: Vec<f64> = th.iter().zip(&curv).map(|(t, a)| a * t).collect();
        let grads = Gradients { names: vec!["theta".into()], tensors: vec![Tensor::new([1, 1, 1, 8], g)?] };
        opt.step(&mut params, &grads, loss)?;
        path.push(params[0].value.data().to_vec());
    }
    Ok(path)
}

fn bitwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len() && a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn d_trace(losses: &[f64]) -> Result<Vec<f64>> {
    let mut params = vec![Param {
        name: "w".into(),
        node: 0,
        role: ParamRole::Kernel,
        l2: false,
        value: Tensor::full([1, 1, 1, 1], 0.0f64),
    }];
    let mut opt = Optimizer::new(OptimizerConfig::Eve(EveConfig::default()), &params)?;
    let zero = Gradients { names: vec!["w".into()], tensors: vec![Tensor::full([1, 1, 1, 1], 0.0)] };
    losses.iter().map(|&f| Ok(opt.step(&mut params, &zero, f)?.eve_d.unwrap_or(f64::NAN))).collect()
}

fn optimizer_reductions() -> Result<Outcome> {
    let adam = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let eve = EveConfig {
        lr: adam.lr,
        decay: 0.0,
        beta1: adam.beta1,
        beta2: adam.beta2,
        beta3: 1.0,
        epsilon: adam.epsilon,
        ..EveConfig::default()
    };
    let eve_is_adam =
        bitwise(&quadratic_run(OptimizerConfig::Adam(adam), 100)?, &quadratic_run(OptimizerConfig::Eve(eve), 100)?);

    // Vanilla descent computed here, independently of the optimizer.
    let lr = 0.03;
    let curv = [1.0, 10.0, 0.1, 3.0, 0.5, 25.0, 2.0, 0.02];
    let mut th = vec![2.0, -1.5, 3.0, 0.25, -4.0, 1.0, -0.75, 5.0];
    let mut vanilla = Vec::new();
    for _ in 0..100 {
        for (t, a) in th.iter_mut().zip(&curv) {
            *t -= lr * (a * *t);
        }
        vanilla.push(th.clone());
    }
    let sgd_is_gd = [true, false].iter().all(|&nesterov| {
        let cfg = OptimizerConfig::Sgd(SgdConfig { lr0: lr, momentum: 0.0, decay: 0.0, nesterov });
        quadratic_run(cfg, 100).map(|p| bitwise(&p, &vanilla)).unwrap_or(false)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let streams: Vec<(&str, Vec<f64>)> = vec![
        ("alternating 1e-12/1e12", (0..200).map(|i| if i % 2 == 0 { 1e-12 } else { 1e12 }).collect()),
        ("all zero", vec![0.0; 50]),
        ("constant", vec![2.3; 50]),
        ("geometric growth", (0..200).map(|i| 1.5f64.powi(i)).collect()),
        ("geometric decay", (0..200).map(|i| 0.5f64.powi(i)).collect()),
        ("negative and signed", (0..100).map(|i| if i % 3 == 0 { -1.0 } else { 0.5 * (i as f64) - 20.0 }).collect()),
        ("log-uniform 1e-30..1e30", (0..1000).map(|_| 10f64.powf(rng.random_range(-30.0..30.0))).collect()),
    ];
    let mut d_ok = true;
    let mut bad = Vec::new();
    for (name, s) in &streams {
        let d = d_trace(s)?;
        if !d.iter().all(|d| (0.1..=10.0).contains(d)) {
            d_ok = false;
            bad.push(*name);
        }
    }
    let detail = format!(
        "eve(beta3=1, gamma=0) == adam over 100 steps: {eve_is_adam}; sgd(mu=0, decay=0) == gradient descent: {sgd_is_gd}; \
         d within [0.1, 10] on {} adversarial streams: {d_ok}{}",
        streams.len(),
        if bad.is_empty() { String::new() } else { format!(" (escaped on {bad:?})") }
    );
    Ok(Outcome::check(eve_is_adam && sgd_is_gd && d_ok, detail))
}

// 5
fn variance(t: &Tensor<f32>) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

fn lsuv() -> Result<Outcome> {
    let dir = data_root();
    if !DatasetKind::Mnist.available(&dir) {
        return Ok(Outcome::skip(format!("MNIST not found under {}", dir.display())));
    }
    let cfg = config("tiny-mnist.json")?;
    let (train, _, _) = load_train_val(&cfg, Some(&dir))?;
    let probe = train.subset(&(0..128).collect::<Vec<_>>()).images;
    let mut g: LayerGraph<f32> = build_model(cfg.model())?;
    let report = lsuv_init(&mut g, &probe, LsuvConfig::default(), 9)?;
    let unconverged = report.unconverged().count();
    // Recompute each visited layer's variance from the final weights rather
    // than trusting the report.
    let mut outside = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for layer in &report.layers {
        let node = g.node_index(&layer.node).expect("reported node exists");
        let v = variance(&g.preactivation(&probe, node)?);
        lo = lo.min(v);
        hi = hi.max(v);
        if !(0.99..=1.01).contains(&v) && layer.converged {
            outside.push(layer.node.clone());
        }
    }
    let ok = unconverged == 0 && outside.is_empty() && !report.layers.is_empty();
    Ok(Outcome::check(
        ok,
        format!(
            "{} layers visited, {unconverged} unconverged, recomputed variances in [{lo:.4}, {hi:.4}]{}",
            report.layers.len(),
            if outside.is_empty() { String::new() } else { format!(", out of range but not flagged: {outside:?}") }
        ),
    ))
}

// 6
fn tiny_training() -> Result<Outcome> {
    let dir = data_root();
    if !DatasetKind::Mnist.available(&dir) {
        return Ok(Outcome::skip(format!("MNIST not found under {}", dir.display())));
    }
    let tmp = tempdir()?;
    let mut cfg = config("tiny-mnist.json")?;
    cfg.out_dir = tmp.path().to_path_buf();
    let opts = TrainOptions { data_dir: Some(dir.clone()), ..Default::default() };
    let summary = cmd_train(&cfg, &opts, &mut |_| {})?;
    let last = final_row(tmp.path())?;
    let baseline = linear_baseline(&cfg, Some(&dir))?;
    let ok = last.val_acc >= 0.95 && last.val_acc > baseline;
    Ok(Outcome::check(
        ok,
        format!(
            "{} after {} epochs: val acc {:.4} (train loss {:.4}); linear baseline {baseline:.4}; need >= 0.95 and > baseline",
            summary.status, summary.epochs_completed, last.val_acc, last.train_loss
        ),
    ))
}

// 7
fn comparative() -> Result<Outcome> {
    let dir = data_root();
    if !DatasetKind::Cifar10.available(&dir) {
        return Ok(Outcome::skip(format!("CIFAR-10 binaries not found under {}", dir.display())));
    }
    let base = config("tiny-cifar10.json")?;
    let mut tries = Vec::new();
    for attempt in 0..3 {
        let mut losses = Vec::new();
        for v in [Variant::Ircnn, Variant::Ein] {
            let tmp = tempdir()?;
            let mut cfg = base.clone();
            cfg.seed = base.seed + attempt;
            cfg.out_dir = tmp.path().to_path_buf();
            cfg.set_variant(v);
            cmd_train(&cfg, &TrainOptions { data_dir: Some(dir.clone()), ..Default::default() }, &mut |_| {})?;
            losses.push(final_row(tmp.path())?.train_loss);
        }
        tries.push(format!("seed {}: ircnn {:.4} vs ein {:.4}", base.seed + attempt, losses[0], losses[1]));
        if losses[0] <= losses[1] {
            return Ok(Outcome::check(true, tries.join("; ")));
        }
    }
    Ok(Outcome::check(false, tries.join("; ")))
}

// 8
fn determinism() -> Result<Outcome> {
    let tmp = tempdir()?;
    let run = |out: &Path| -> Result<RunConfig> {
        let text = format!(
            r#"{{"model": {}, "dataset": {{"name": "synthetic", "synthetic": [256, 64], "augment": {{"horizontal_flip": true}}}},
                "optimizer": {{"name": "sgd"}}, "epochs": 3, "batch_size": 64, "seed": 21,
                "out_dir": {:?}, "record_epoch_time": false}}"#,
            ModelConfig::tiny().to_json(),
            out.to_str().unwrap()
        );
        RunConfig::from_json(&text)
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    cmd_train(&run(&a)?, &TrainOptions::default(), &mut |_| {})?;
    cmd_train(&run(&b)?, &TrainOptions::default(), &mut |_| {})?;
    let cfg = run(&c)?;
    cmd_train(&cfg, &TrainOptions { stop_after_epoch: Some(1), ..Default::default() }, &mut |_| {})?;
    cmd_train(&cfg, &TrainOptions { resume: true, ..Default::default() }, &mut |_| {})?;
    let read = |p: &Path| std::fs::read(p.join(METRICS_FILE)).map_err(|e| io(p, e));
    let (ma, mb, mc) = (read(&a)?, read(&b)?, read(&c)?);
    let identical = ma == mb;
    let resumed = ma == mc;
    let rows = ma.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    Ok(Outcome::check(
        identical && resumed && rows == 3,
        format!("{rows} rows; repeated run byte-identical: {identical}; stop after epoch 1 + resume identical: {resumed}"),
    ))
}

// 9
fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    dims.iter().for_each(|d| v.extend(d.to_be_bytes()));
    v.extend_from_slice(body);
    v
}

fn fixtures() -> Result<Vec<String>> {
    let mut bad = Vec::new();
    let px: Vec<u8> = (0..60u32).map(|k| ((k * 37 + 11) % 256) as u8).collect();
    let m = decode_mnist(&idx(0x803, &[3, 4, 5], &px), &idx(0x801, &[3], &[7, 0, 9]), "fixture")?;
    if m.labels != [7, 0, 9] || m.images.at(1, 0, 2, 3) != ((33 * 37 + 11) % 256) as f32 / 255.0 {
        bad.push("mnist pixels".to_string());
    }
    if m.checksum() != "73c44845684d97ef37b8cf9f3231d79022ef1b047db0a5fa8b73513e18a483ec" {
        bad.push("mnist checksum".to_string());
    }

    let mut c10 = Vec::new();
    for (r, label) in [3u8, 9].iter().enumerate() {
        c10.push(*label);
        c10.extend((0..3072).map(|j| ((r * 101 + j * 7) % 256) as u8));
    }
    let c = decode_cifar(&c10, CifarKind::Cifar10)?;
    let byte = |r: usize, ch: usize, h: usize, w: usize| ((r * 101 + (ch * 1024 + h * 32 + w) * 7) % 256) as f32 / 255.0;
    if c.labels != [3, 9] || c.images.at(1, 2, 17, 5) != byte(1, 2, 17, 5) || c.images.at(0, 1, 0, 31) != byte(0, 1, 0, 31)
    {
        bad.push("cifar-10 pixels".to_string());
    }
    if c.checksum() != "f254bad27885bc056ddcc973aef6929f6e88eeee8797d4bb18c48a0e5570e668" {
        bad.push("cifar-10 checksum".to_string());
    }

    let mut c100 = vec![4u8, 42];
    c100.extend((0..3072).map(|j| ((j * 13 + 5) % 256) as u8));
    let c = decode_cifar(&c100, CifarKind::Cifar100)?;
    if c.labels != [42] || c.classes != 100 || c.images.at(0, 0, 0, 1) != 18.0 / 255.0 {
        bad.push("cifar-100 pixels".to_string());
    }
    if c.checksum() != "ca1a2d00164392ea24299362032c0e820db837bf4bce3239675524712eb1cb34" {
        bad.push("cifar-100 checksum".to_string());
    }
    Ok(bad)
}

fn loaders() -> Result<Outcome> {
    let dir = data_root();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut missing = Vec::new();

    let bad = fixtures()?;
    ok &= bad.is_empty();
    parts.push(if bad.is_empty() { "fixtures exact".to_string() } else { format!("fixture mismatch: {bad:?}") });

    if DatasetKind::Mnist.available(&dir) {
        let train = DatasetKind::Mnist.load(&dir, Split::Train)?;
        let test = DatasetKind::Mnist.load(&dir, Split::Test)?;
        let counts = train.len() == 60_000 && test.len() == 10_000;
        let sums = train.checksum() == MNIST_TRAIN_SHA256 && test.checksum() == MNIST_TEST_SHA256;
        ok &= counts && sums;
        parts.push(format!("mnist {}/{} checksums match: {sums}", train.len(), test.len()));
    } else {
        missing.push("mnist");
    }
    // No pinned checksums for CIFAR: the buffers were never available to
    // compute them from. Counts are still checked and the digest printed.
    for (kind, name) in [(DatasetKind::Cifar10, "cifar-10"), (DatasetKind::Cifar100, "cifar-100")] {
        if kind.available(&dir) {
            let train = kind.load(&dir, Split::Train)?;
            let test = kind.load(&dir, Split::Test)?;
            ok &= train.len() == 50_000 && test.len() == 10_000;
            parts.push(format!("{name} {}/{} sha256 {} / {}", train.len(), test.len(), train.checksum(), test.checksum()));
        } else {
            missing.push(name);
        }
    }
    if !missing.is_empty() {
        parts.push(format!("not found under {}: {}", dir.display(), missing.join(", ")));
    }
    let status = match (ok, missing.is_empty()) {
        (false, _) => Status::Fail,
        (true, true) => Status::Pass,
        (true, false) => Status::Skip,
    };
    Ok(Outcome { status, detail: parts.join("; ") })
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let checks: [(usize, &str, Check); 9] = [
        (1, "gradient check", gradients),
        (2, "parameter parity", parity),
        (3, "recurrence ablation identity", recurrence_identity),
        (4, "optimizer reductions", optimizer_reductions),
        (5, "LSUV post-condition", lsuv),
        (6, "tiny MNIST training", tiny_training),
        (7, "IRCNN vs EIN training loss on CIFAR-10", comparative),
        (8, "determinism and resume", determinism),
        (9, "loader bit-exactness", loaders),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("IRCNN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("IRCNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    println!("\nacceptance ({} mode)", if strict { "strict" } else { "report" });
    let mut tally = [0usize; 3];
    for (id, title, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let out = check().unwrap_or_else(|e| Outcome::check(false, format!("error[{}]: {e}", e.category())));
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        tally[out.status as usize] += 1;
        println!("{tag} {id}. {title}: {} [{:.1}s]", out.detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {} failed, {} skipped", tally[0], tally[1], tally[2]);
    if strict && tally[1] + tally[2] > 0 {
        std::process::exit(1);
    }
}
