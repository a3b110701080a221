//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use curation_ood::autodiff::Tape;
use curation_ood::curation::{
    curated_log_probs, enumeration_oracle, log_consensus_prob, log_undef_of, log_undef_prob, oe_objective,
    CurationConfig,
};
use curation_ood::data::{batch_stream, derive_seed, make_moons, make_ring};
use curation_ood::eval::{auroc, decompose_members, fpr_at_tpr};
use curation_ood::experiment::{cmd_report, run_all, ExperimentConfig, Layout, HeatmapMeta};
use curation_ood::model::{Activation, MlpConfig, PredictiveDist, CURATION_BIAS};
use curation_ood::params::ParamSet;
use curation_ood::sampler::{csgld_stepsize, run_csgld, BatchSizes, CsgldConfig, CurationObjective, Objective};
use curation_ood::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Regression floor for the OE model's ring AUROC on the toy study.
const TOY_OE_RING_AUROC_FLOOR: f64 = 0.99;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).expect("shipped config loads")
}

/// Uniform point on the simplex with dyadic entries `k / 2^52`, so the
/// entries sum to exactly 1 in floating point.
fn simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    const ONE: u64 = 1 << 52;
    let e: Vec<f64> = (0..c).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut k: Vec<u64> = e.iter().map(|v| ((v / s * ONE as f64) as u64).clamp(1, ONE / 2)).collect();
    let rest: u64 = k[..c - 1].iter().sum();
    k[c - 1] = ONE - rest;
    k.into_iter().map(|v| v as f64 / ONE as f64).collect()
}

fn log_rows(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.iter().map(|p| p.ln()).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap()
}

fn likelihood_matches_enumeration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let c = 2 + i % 5;
        let s = 1 + (i / 5 % 5) as u32;
        let p = simplex(&mut rng, c);
        let mut tape = Tape::new();
        let lp = tape.leaf(log_rows(&[p.clone()])).unwrap();
        let cons = log_consensus_prob(&mut tape, lp, s).unwrap();
        let undef = log_undef_prob(&mut tape, lp, s).unwrap();
        let oracle = enumeration_oracle(&p, s).unwrap();
        for y in 0..c {
            worst = worst.max((tape.value(cons).data()[y].exp() - oracle[y]).abs());
        }
        worst = worst.max((tape.value(undef).item().exp() - oracle[c]).abs());
    }
    ensure(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("1000 points, max abs error {worst:.4e}"))
}

fn uniform_maximises_undef() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_uniform = 0.0f64;
    for c in 2..=6usize {
        for s in 1..=5u32 {
            let bound = 1.0 - (c as f64).powi(1 - s as i32);
            let rows: Vec<Vec<f64>> = (0..10_000).map(|_| simplex(&mut rng, c)).collect();
            let dist = PredictiveDist { log_p: log_rows(&rows) };
            for v in log_undef_of(&dist, s).unwrap() {
                worst_gap = worst_gap.max(v.exp() - bound);
            }
            let uniform = PredictiveDist { log_p: log_rows(&[vec![1.0 / c as f64; c]]) };
            let u = log_undef_of(&uniform, s).unwrap()[0].exp();
            worst_uniform = worst_uniform.max((u - bound).abs());
        }
    }
    ensure(worst_gap <= 1e-12, || format!("P(Undef) exceeds bound by {worst_gap:e}"))?;
    ensure(worst_uniform <= 1e-12, || format!("uniform misses bound by {worst_uniform:e}"))?;
    Ok(format!("max excess {worst_gap:.4e}, uniform gap {worst_uniform:.4e}"))
}

fn zero_bias_reduces() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let s = rng.random_range(1..=10);
        let p = simplex(&mut rng, c);
        let mut tape = Tape::new();
        let lp = tape.leaf(log_rows(&[p.clone()])).unwrap();
        let zero = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let head = curated_log_probs(&mut tape, lp, s, zero).unwrap();
        let cons: Vec<f64> = p.iter().map(|v| v.powi(s as i32)).collect();
        let undef = 1.0 - cons.iter().sum::<f64>();
        worst = worst.max((tape.value(head.log_undef).item().exp() - undef).abs());
        for (y, want) in cons.iter().enumerate() {
            worst = worst.max((tape.value(head.log_class).data()[y].exp() - want).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("1000 inputs, max abs error {worst:.4e}"))
}

fn objective_loss(model: &MlpConfig, params: &ParamSet, x_in: &Tensor, y: &[usize], x_out: &Tensor, cfg: &CurationConfig) -> (f64, ParamSet) {
    let mut tape = Tape::new();
    let bound = tape.bind(params).unwrap();
    let loss = oe_objective(&mut tape, &bound, model, x_in, y, Some(x_out), cfg).unwrap();
    let grads = tape.backward(loss).unwrap().collect(&tape, &bound).unwrap();
    (tape.value(loss).item(), grads)
}

fn gradients_match_finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for net in 0..20u64 {
        let depth = rng.random_range(1..=2);
        let model = MlpConfig {
            input_dim: 2,
            hidden_sizes: (0..depth).map(|_| rng.random_range(3..=6)).collect(),
            num_classes: rng.random_range(2..=4),
            activation: Activation::Tanh,
            init_seed: net,
        };
        let mut params = model.init().unwrap();
        params.get_mut(CURATION_BIAS).unwrap().data_mut()[0] = rng.random_range(-1.0..1.0);
        let cfg = CurationConfig { annotators: rng.random_range(2..=10), lambda: rng.random_range(0.5..2.0), c_learnable: true };
        let pts = |rng: &mut ChaCha8Rng, n: usize| {
            Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let x_in = pts(&mut rng, 5);
        let x_out = pts(&mut rng, 4);
        let y: Vec<usize> = (0..5).map(|_| rng.random_range(0..model.num_classes)).collect();
        let (_, grads) = objective_loss(&model, &params, &x_in, &y, &x_out, &cfg);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in &names {
            for i in 0..params.get(name).unwrap().len() {
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= h;
                let lp = objective_loss(&model, &plus, &x_in, &y, &x_out, &cfg).0;
                let lm = objective_loss(&model, &minus, &x_in, &y, &x_out, &cfg).0;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads.get(name).unwrap().data()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("20 networks, {checked} partials incl. c, max relative error {worst:.1e}"))
}

fn brute_auroc(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in b {
        for &i in a {
            wins += if o > i { 1.0 } else if o == i { 0.5 } else { 0.0 };
        }
    }
    wins / (a.len() * b.len()) as f64
}

fn brute_fpr(a: &[f64], b: &[f64], n: f64) -> f64 {
    let mut tau = f64::NEG_INFINITY;
    for &t in a.iter().chain(b) {
        let tpr = b.iter().filter(|&&s| s >= t).count() as f64 / b.len() as f64;
        if tpr >= n / 100.0 && t > tau {
            tau = t;
        }
    }
    a.iter().filter(|&&s| s >= tau).count() as f64 / a.len() as f64
}

fn metrics_match_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let n = rng.random_range(1..=200);
        let m = rng.random_range(1..=200);
        let levels = if trial % 2 == 0 { 20 } else { 1_000_000 };
        let shift = rng.random_range(0..levels / 4 + 1);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| (rng.random_range(0..levels) + shift) as f64 / levels as f64).collect();
        let pct = [95.0, 90.0, 50.0, 100.0][trial % 4];
        let (x, y) = (auroc(&a, &b).unwrap(), brute_auroc(&a, &b));
        ensure(x == y, || format!("trial {trial}: auroc {x} vs oracle {y}"))?;
        let (x, y) = (fpr_at_tpr(&a, &b, pct).unwrap(), brute_fpr(&a, &b, pct));
        ensure(x == y, || format!("trial {trial}: fpr {x} vs oracle {y}"))?;
    }
    Ok("200 score sets, exact equality".into())
}

fn toy_reproduction(out: &Path) -> Check {
    let baseline = load("toy_baseline.json");
    let oe = load("toy_oe.json");
    ensure(baseline.heatmap.far_radius == 1.5 && baseline.heatmap.undef_threshold == 0.5, || "heatmap constants".into())?;
    ensure(baseline.heatmap == oe.heatmap, || "heatmaps must share bounds".into())?;
    let mut lines = Vec::new();
    let mut slowest = Duration::ZERO;
    for &seed in &baseline.seeds {
        let t = Instant::now();
        let mb = run_all(&baseline, out, &[seed]).map_err(|e| e.to_string())?;
        let mo = run_all(&oe, out, &[seed]).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        let undef = |m: &curation_ood::experiment::RunMetrics| {
            m.find("ring", curation_ood::eval::ScoreKind::UndefProb).expect("ring metrics").clone()
        };
        let (rb, ro) = (undef(&mb[0]), undef(&mo[0]));
        let far = |cfg: &ExperimentConfig| -> HeatmapMeta {
            let p = Layout::new(out, cfg).run_dir(cfg.label(), seed).join("heatmaps").join("heatmap.json");
            serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
        };
        let (fb, fo) = (far(&baseline).far_fraction_above.unwrap(), far(&oe).far_fraction_above.unwrap());
        ensure(ro.out_summary.mean > rb.out_summary.mean, || {
            format!("seed {seed}: ring mean P(Undef) {} <= baseline {}", ro.out_summary.mean, rb.out_summary.mean)
        })?;
        ensure(fo > fb, || format!("seed {seed}: far-field fraction {fo} <= baseline {fb}"))?;
        ensure(ro.auroc >= TOY_OE_RING_AUROC_FLOOR, || format!("seed {seed}: OE ring AUROC {}", ro.auroc))?;
        lines.push(format!(
            "s{seed}: undef {:.3}>{:.3}, far {:.3}>{:.3}, auroc {:.4}",
            ro.out_summary.mean, rb.out_summary.mean, fo, fb, ro.auroc
        ));
    }
    ensure(slowest < Duration::from_secs(120), || format!("slowest seed took {slowest:?}"))?;
    Ok(format!("{}; slowest seed {:.1} s", lines.join("; "), slowest.as_secs_f64()))
}

fn desk_ordering(out: &Path) -> Check {
    let cfgs: Vec<ExperimentConfig> = ["desk_bnn.json", "desk_oe.json", "desk_ours.json"].iter().map(|n| load(n)).collect();
    for c in &cfgs {
        ensure(c.seeds.len() == 6, || format!("{} runs {} seeds", c.label(), c.seeds.len()))?;
        run_all(c, out, &c.seeds).map_err(|e| e.to_string())?;
    }
    let report = cmd_report(&cfgs, out).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for t in &cfgs[2].data.test_ood {
        let get = |label: &str| report.row(label, &t.name).map(|r| r.auroc_mean).ok_or(format!("no {label}/{} row", t.name));
        let (ours, bnn, oe) = (get("ours")?, get("bnn")?, get("oe")?);
        ensure(ours >= bnn && ours >= oe, || format!("{}: ours {ours:.4}, bnn {bnn:.4}, oe {oe:.4}", t.name))?;
        parts.push(format!("{} ours {ours:.4} / oe {oe:.4} / bnn {bnn:.4}", t.name));
    }
    Ok(parts.join("; "))
}

fn sampler_properties() -> Check {
    // (a) noise off and flat prior is plain SGD with learning rate ε_k N / (2T)
    let d_in = make_moons(60, 0.1, 7).unwrap();
    let d_out = make_ring(80, 1.8, [0.5, 0.25], 0.1, 8).unwrap();
    let model = MlpConfig { hidden_sizes: vec![8, 8], ..MlpConfig::default() };
    let objective = CurationObjective { model: model.clone(), curation: CurationConfig::default() };
    let batch = BatchSizes { inlier: 32, outlier: 16 };
    let cfg = CsgldConfig {
        cycles: 2,
        epochs_per_cycle: 3,
        samples_per_cycle: 1,
        prior_std: None,
        noise: false,
        temperature: 0.5,
        seed: 11,
        ..CsgldConfig::new(2e-4)
    };
    let init = model.init().unwrap();
    let (ens, _) = run_csgld(&objective, init.clone(), &d_in, Some(&d_out), batch, &cfg).unwrap();

    let mut stream = batch_stream(&d_in, Some(&d_out), batch.inlier, batch.outlier, derive_seed(cfg.seed, 0)).unwrap();
    let per_epoch = stream.batches_per_epoch();
    let big_k = cfg.epochs_per_cycle * per_epoch;
    let scale = d_in.len() as f64 / cfg.temperature;
    let steps = cfg.cycles * big_k;
    let mut theta = init;
    let mut sgd_snapshots = Vec::new();
    for k in 0..steps {
        let b = stream.next().unwrap();
        let (_, g) = objective.loss_and_grad(&theta, &b).unwrap();
        let lr = csgld_stepsize(k, big_k, cfg.initial_step) / 2.0 * scale;
        for ((_, p), (_, gp)) in theta.iter_mut().zip(g.iter()) {
            for (v, gv) in p.data_mut().iter_mut().zip(gp.data()) {
                *v -= lr * gv;
            }
        }
        if (k + 1) % big_k == 0 {
            sgd_snapshots.push(theta.clone());
        }
    }
    let identical = ens.params().zip(&sgd_snapshots).all(|(a, b)| {
        a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()))
    });
    ensure(identical && ens.len() == sgd_snapshots.len(), || "cSGLD without noise differs from SGD".into())?;

    // (b) snapshot bookkeeping for the 4 × 3 protocol
    let tiny = make_moons(20, 0.1, 9).unwrap();
    let ce = curation_ood::sampler::CrossEntropyObjective { model: MlpConfig { hidden_sizes: vec![4], ..MlpConfig::default() } };
    let proto = CsgldConfig { epochs_per_cycle: 5, ..CsgldConfig::new(1e-4) };
    let (ens, _) = run_csgld(&ce, ce.model.init().unwrap(), &tiny, None, BatchSizes { inlier: 10, outlier: 0 }, &proto).unwrap();
    let per_cycle: Vec<usize> = (0..4).map(|c| ens.samples.iter().filter(|s| s.cycle == c).count()).collect();
    ensure(ens.len() == 12 && per_cycle == vec![3; 4], || format!("{} snapshots, per cycle {per_cycle:?}", ens.len()))?;
    ensure(ens.samples.iter().all(|s| s.epoch >= 2), || "snapshot taken before the last 3 epochs".into())?;

    // (c) schedule against the cosine formula
    let (eps0, big_k) = (0.37, 1000);
    let mut worst = 0.0f64;
    for k in [0, 1, 250, 500, 999, 1000, 1999, 2500] {
        let want = eps0 / 2.0 * ((std::f64::consts::PI * (k % big_k) as f64 / big_k as f64).cos() + 1.0);
        worst = worst.max((csgld_stepsize(k, big_k, eps0) - want).abs());
    }
    ensure((csgld_stepsize(0, big_k, eps0) - eps0).abs() <= 1e-12, || "start of cycle".into())?;
    ensure(csgld_stepsize(big_k - 1, big_k, eps0) < eps0 * 1e-5, || "end of cycle".into())?;
    ensure(worst <= 1e-12, || format!("schedule error {worst:e}"))?;
    Ok(format!("SGD bit-identical over {steps} steps; 12 snapshots; schedule error {worst:.1e}"))
}

fn decomposition_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=12);
        let c = rng.random_range(2..=6);
        let n = rng.random_range(1..=8);
        let members: Vec<Tensor> = (0..k)
            .map(|_| Tensor::from_rows(&(0..n).map(|_| simplex(&mut rng, c)).collect::<Vec<_>>()).unwrap())
            .collect();
        let d = decompose_members(&members).unwrap();
        for i in 0..n {
            worst = worst.max((d.total[i] - d.aleatoric[i] - d.epistemic[i]).abs());
            ensure(d.total[i] >= -1e-12 && d.aleatoric[i] >= -1e-12 && d.epistemic[i] >= -1e-12, || "negative term".into())?;
        }
        if k == 1 {
            ensure(d.epistemic.iter().all(|&e| e == 0.0), || "single snapshot epistemic not 0".into())?;
        }
    }
    ensure(worst <= 1e-12, || format!("identity error {worst:e}"))?;
    let single = decompose_members(&[Tensor::from_rows(&[simplex(&mut rng, 4)]).unwrap()]).unwrap();
    ensure(single.epistemic == vec![0.0], || "single snapshot epistemic not 0".into())?;
    let two = decompose_members(&[Tensor::from_rows(&[[1.0, 0.0]]).unwrap(), Tensor::from_rows(&[[0.0, 1.0]]).unwrap()]).unwrap();
    let ln2 = std::f64::consts::LN_2;
    ensure((two.total[0] - ln2).abs() <= 1e-12 && two.aleatoric[0] == 0.0 && (two.epistemic[0] - ln2).abs() <= 1e-12, || {
        format!("two-snapshot case gave {two:?}")
    })?;
    Ok(format!("200 random ensembles, identity error {worst:.1e}; (ln 2, 0, ln 2) case exact"))
}

fn json_files(dir: &Path, base: &Path, acc: &mut Vec<PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            json_files(&p, base, acc);
        } else if p.extension().is_some_and(|e| e == "json") {
            acc.push(p.strip_prefix(base).unwrap().to_path_buf());
        }
    }
}

fn pipeline_determinism(a: &Path, b: &Path) -> Check {
    let cfg = load("pipeline.json");
    for out in [a, b] {
        run_all(&cfg, out, &cfg.seeds).map_err(|e| e.to_string())?;
        cmd_report(std::slice::from_ref(&cfg), out).map_err(|e| e.to_string())?;
    }
    let mut files = Vec::new();
    json_files(a, a, &mut files);
    ensure(files.iter().any(|f| f.ends_with("report.json")), || "no report.json".into())?;
    for f in &files {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} JSON files byte-identical across two runs", files.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<(u32, &str, Option<u64>, Box<dyn FnOnce() -> Check>)> = vec![
        (1, "likelihood matches annotator enumeration", Some(10), Box::new(likelihood_matches_enumeration)),
        (2, "uniform predictive maximises P(Undef)", Some(5), Box::new(uniform_maximises_undef)),
        (3, "c = 0 reduces to the consensus likelihood", None, Box::new(zero_bias_reduces)),
        (4, "objective gradients match finite differences", Some(30), Box::new(gradients_match_finite_differences)),
        (5, "AUROC and FPR match brute-force oracles", Some(5), Box::new(metrics_match_oracles)),
        (6, "toy study: OE raises P(Undef) away from data", None, Box::new(|| toy_reproduction(&t.join("toy")))),
        (7, "desk study: ours >= bnn and ours >= oe", Some(1800), Box::new(|| desk_ordering(&t.join("desk")))),
        (8, "cSGLD properties", None, Box::new(sampler_properties)),
        (9, "uncertainty decomposition", None, Box::new(decomposition_identity)),
        (10, "pipeline is byte-deterministic", None, Box::new(|| pipeline_determinism(&t.join("a"), &t.join("b")))),
    ];
    let mut failed = 0;
    for (n, title, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if secs >= l as f64 => Err(format!("took {secs:.1} s, limit {l} s")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {title} ({secs:.2} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
