//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. The training criteria share one set of paired-seed runs.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use calseg::autodiff::{grad_check, Graph};
use calseg::experiment::{self, threshold_grid, ExperimentConfig, RunResult};
use calseg::losses::{self, make_loss, LabelledBatch, LossConfig, LossKind};
use calseg::metrics::{self, bootstrap_ci, uncertain_fraction, wilcoxon_rank_sum, PredictionMap};
use calseg::segnet::{self, read_checkpoint, write_checkpoint, NetConfig};
use calseg::synthdata::{self, decode_pfm, decode_pgm, encode_pfm, encode_pgm, SynthConfig};
use calseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let started = Instant::now();
    let (pass, detail) = f();
    let o = Outcome { id, name, pass, detail, elapsed: started.elapsed() };
    println!(
        "{} {:>2} {:<28} {:>8.1}s  {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor) {
    let logits: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
    y[rng.gen_range(0..n)] = 1.0;
    let mut onehot = y.clone();
    onehot.extend(y.iter().map(|v| 1.0 - v));
    (
        Tensor::new(vec![2, n], logits).unwrap(),
        Tensor::new(vec![2, n], onehot).unwrap(),
    )
}

fn softmax(logits: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let p = g.softmax_channels(z).unwrap();
    g.value(p).clone()
}

fn gradient_correctness() -> (bool, String) {
    let mut named: Vec<(String, LossConfig)> = vec![
        ("ce".into(), LossConfig::new(LossKind::CrossEntropy)),
        ("dsc".into(), LossConfig::new(LossKind::Dice)),
    ];
    for gamma in [1.0, 2.0, 3.0] {
        named.push((format!("dscpp(g={gamma})"), LossConfig::dscpp(gamma)));
    }
    for kind in [LossKind::Combo, LossKind::Tversky, LossKind::FocalTversky, LossKind::UnifiedFocal] {
        for pp in [false, true] {
            let cfg = LossConfig::new(kind).with_plusplus(pp);
            named.push((cfg.label(), cfg));
        }
    }
    let beta = LossConfig::new(LossKind::Combo).beta;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for _ in 0..50 {
        let (logits, onehot) = random_case(&mut rng, 16);
        let mut record = |name: &str, err: f64| {
            checks += 1;
            if !(err <= worst.0) {
                worst = (err, name.to_owned());
            }
        };
        for (name, cfg) in &named {
            let loss = make_loss(cfg).unwrap();
            let y = onehot.clone();
            let err = grad_check(
                move |g, z| {
                    let p = g.softmax_channels(z)?;
                    let b = LabelledBatch::new(g, p, y.clone())?;
                    loss.build(g, &b)
                },
                &logits,
                1e-5,
            )
            .unwrap_or(f64::INFINITY);
            record(name, err);
        }
        let y = onehot.clone();
        let err = grad_check(
            move |g, z| {
                let p = g.softmax_channels(z)?;
                let b = LabelledBatch::new(g, p, y.clone())?;
                losses::mce_loss(g, &b, beta)
            },
            &logits,
            1e-5,
        )
        .unwrap_or(f64::INFINITY);
        record("mce", err);
    }
    (
        worst.0 < 1e-4,
        format!("{checks} checks, max rel err {:.2e} ({}) < 1e-4", worst.0, worst.1),
    )
}

fn oracle_suite() -> (bool, String) {
    const EPS: f64 = 1e-6;
    // Foreground probabilities [0.8, 0.3] against truth [1, 0].
    let probs = Tensor::new(vec![2, 2], vec![0.8, 0.3, 0.2, 0.7]).unwrap();
    let onehot = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let (tp, fp, fn_) = (0.8, 0.3, 0.2);
    let tversky = 1.0 - (tp + EPS) / (tp + 0.3 * fp + 0.7 * fn_ + EPS);
    let oracles = [
        ("dsc", LossConfig::new(LossKind::Dice), 1.0 - (2.0 * tp + EPS) / (2.0 * tp + fp + fn_ + EPS), 0.238095),
        ("dscpp", LossConfig::dscpp(2.0), 1.0 - (2.0 * tp + EPS) / (2.0 * tp + fp * fp + fn_ * fn_ + EPS), 0.075145),
        ("tversky", LossConfig::new(LossKind::Tversky), tversky, 0.223301),
        ("focal_tversky", LossConfig::new(LossKind::FocalTversky), tversky.powf(0.75), 0.324839),
        ("ce", LossConfig::new(LossKind::CrossEntropy), -(0.8f64.ln() + 0.7f64.ln()) / 2.0, 0.28991),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, cfg, oracle, quoted) in oracles {
        let got = make_loss(&cfg).unwrap().value(&probs, &onehot).unwrap();
        let ok = (got - oracle).abs() < 1e-6 && (got - quoted).abs() < 1e-5;
        pass &= ok;
        parts.push(format!("{name}={got:.6}"));
    }
    let map = PredictionMap::new(Tensor::from_vec(vec![0.8, 0.3]), Tensor::from_vec(vec![1.0, 0.0])).unwrap();
    let brier_oracle = (0.2f64.powi(2) + 0.3f64.powi(2) + 0.2f64.powi(2) + 0.3f64.powi(2)) / 4.0;
    let b = metrics::brier(&map);
    pass &= (b - brier_oracle).abs() < 1e-6 && (b - 0.065).abs() < 1e-6;
    parts.push(format!("brier={b:.6}"));
    (pass, parts.join(" "))
}

fn identity_reduction() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dsc = make_loss(&LossConfig::new(LossKind::Dice)).unwrap();
    let dscpp = make_loss(&LossConfig::dscpp(1.0)).unwrap();
    let tversky = make_loss(&LossConfig::new(LossKind::Tversky)).unwrap();
    let ft = make_loss(&LossConfig { gamma: 1.0, ..LossConfig::new(LossKind::FocalTversky) }).unwrap();
    let (mut dsc_gap, mut ft_gap) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (logits, onehot) = random_case(&mut rng, 16);
        let p = softmax(&logits);
        dsc_gap = dsc_gap.max((dsc.value(&p, &onehot).unwrap() - dscpp.value(&p, &onehot).unwrap()).abs());
        ft_gap = ft_gap.max((tversky.value(&p, &onehot).unwrap() - ft.value(&p, &onehot).unwrap()).abs());
    }
    (
        dsc_gap < 1e-12 && ft_gap < 1e-12,
        format!("1000 batches, max |dscpp(g=1) - dsc| {dsc_gap:.1e}, max |ft(g=1) - tversky| {ft_gap:.1e}"),
    )
}

/// Foreground probabilities of all test pixels lying in (0.05, 0.95).
fn uncertain(run: &RunResult) -> f64 {
    let total: usize = run.maps.iter().map(PredictionMap::len).sum();
    let inside: f64 = run
        .maps
        .iter()
        .map(|m| uncertain_fraction(m, 0.05, 0.95) * m.len() as f64)
        .sum();
    inside / total as f64
}

/// Mean test recall at each threshold of the sweep grid.
fn recall_curve(cfg: &ExperimentConfig, run: &RunResult) -> Vec<f64> {
    experiment::sweep_thresholds(cfg, &run.loss, &run.maps, &threshold_grid())
        .unwrap()
        .iter()
        .map(|(_, r)| r.mean("recall").unwrap())
        .collect()
}

fn population_sd(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn per_image_monotone(run: &RunResult) -> bool {
    run.maps.iter().all(|m| {
        let r: Vec<f64> = threshold_grid()
            .iter()
            .map(|&t| metrics::recall(&metrics::confusion(m, t).unwrap()))
            .collect();
        r.windows(2).all(|w| w[1] <= w[0])
    })
}

fn nll(run: &RunResult) -> f64 {
    run.report.mean("nll").unwrap()
}

fn dice(run: &RunResult) -> f64 {
    run.report.mean("dice").unwrap()
}

fn statistics() -> (bool, String) {
    let t = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    let (lo, hi) = bootstrap_ci(&[0.42; 25], 0.95, 10_000, 3).unwrap();
    (
        t.exact && (t.two_sided_p - 0.1).abs() < 1e-12 && lo == 0.42 && hi == 0.42,
        format!("exact={} p={} constant CI=({lo}, {hi})", t.exact, t.two_sided_p),
    )
}

fn format_fidelity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..64 * 48).map(|_| f64::from(rng.gen::<f32>())).collect();
    let probs = Tensor::new(vec![64, 48], values).unwrap();
    let pfm_back = decode_pfm(&encode_pfm(&probs).unwrap()).unwrap();
    let pfm_ok = pfm_back.shape() == probs.shape()
        && pfm_back.data().iter().zip(probs.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    let params = segnet::init_params(&NetConfig { seed: 5, ..NetConfig::default() }).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&params, &mut bytes).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    let ckpt_ok = back.len() == params.len()
        && params.iter().zip(back.iter()).all(|((na, a), (nb, b))| {
            na == nb
                && a.shape() == b.shape()
                && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let mask = synthdata::generate_one(&SynthConfig::default(), 3).unwrap().mask;
    let encoded = encode_pgm(&mask).unwrap();
    let header_len = encoded.len() - mask.numel();
    let bytes_ok = encoded[header_len..]
        .iter()
        .zip(mask.data())
        .all(|(b, v)| u32::from(*b) == if *v == 1.0 { 255 } else { 0 });
    let decoded = decode_pgm(&encoded).unwrap();
    let pgm_ok = bytes_ok && decoded.shape()[decoded.rank() - 2..] == mask.shape()[..] && decoded.data() == mask.data();

    (
        pfm_ok && ckpt_ok && pgm_ok,
        format!("pfm bit-exact={pfm_ok} checkpoint bit-exact={ckpt_ok} pgm mask {{0,255}}<->{{0,1}}={pgm_ok}"),
    )
}

/// Shared setup of the training criteria: the default vessels dataset and a
/// base-4 U-Net trained for 30 epochs with identical seeds for every loss.
fn paired_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.net.base_channels = 4;
    cfg.train.max_epochs = 30;
    cfg
}

fn main() -> ExitCode {
    let suite = Instant::now();
    let mut outcomes = vec![
        check(1, "gradient correctness", gradient_correctness),
        check(2, "closed-form oracles", oracle_suite),
        check(3, "identity reduction", identity_reduction),
    ];

    let cfg = paired_config();
    let split = experiment::load_split(&cfg).unwrap();
    let train = |loss: LossConfig| -> (RunResult, Duration) {
        let started = Instant::now();
        let run = experiment::train_and_evaluate(&cfg, &loss, &split).unwrap();
        (run, started.elapsed())
    };

    let started = Instant::now();
    let (dsc, _) = train(LossConfig::new(LossKind::Dice));
    let (dscpp, _) = train(LossConfig::dscpp(2.0));
    let pair_time = started.elapsed();
    outcomes.push(check(4, "calibration phenomenology", || {
        let (a, b) = (nll(&dsc), nll(&dscpp));
        let gap = (dice(&dsc) - dice(&dscpp)).abs();
        (
            b < a && gap < 0.05,
            format!(
                "nll dsc {a:.4} vs dscpp {b:.4}; dice {:.4} vs {:.4} (|diff| {gap:.4} < 0.05); pair trained in {:.0}s",
                dice(&dsc),
                dice(&dscpp),
                pair_time.as_secs_f64()
            ),
        )
    }));
    outcomes.push(check(5, "overconfidence histogram", || {
        let (a, b) = (uncertain(&dsc), uncertain(&dscpp));
        (b > a, format!("fraction in (0.05, 0.95): dsc {a:.4} vs dscpp {b:.4}"))
    }));
    outcomes.push(check(6, "threshold-sweep contrast", || {
        let (ra, rb) = (recall_curve(&cfg, &dsc), recall_curve(&cfg, &dscpp));
        let (sa, sb) = (population_sd(&ra), population_sd(&rb));
        let monotone = [&ra, &rb].iter().all(|r| r.windows(2).all(|w| w[1] <= w[0]))
            && per_image_monotone(&dsc)
            && per_image_monotone(&dscpp);
        (
            sb > sa && monotone,
            format!("recall sd dsc {sa:.4} vs dscpp {sb:.4}; non-increasing in T: {monotone}"),
        )
    }));

    let started = Instant::now();
    let mut rows = Vec::new();
    let mut all_lower = true;
    for kind in [LossKind::Tversky, LossKind::FocalTversky, LossKind::Combo, LossKind::UnifiedFocal] {
        let (plain, _) = train(LossConfig::new(kind));
        let (pp, _) = train(LossConfig::new(kind).with_plusplus(true));
        let lower = nll(&pp) < nll(&plain);
        all_lower &= lower;
        rows.push(format!("{} {:.4}->{:.4}{}", kind.name(), nll(&plain), nll(&pp), if lower { "" } else { " (not lower)" }));
    }
    let sub_time = started.elapsed();
    outcomes.push(check(7, "++ substitution", || {
        (all_lower, format!("nll X -> X++: {}; 8 runs in {:.0}s", rows.join(", "), sub_time.as_secs_f64()))
    }));

    outcomes.push(check(8, "statistics correctness", statistics));
    outcomes.push(check(9, "format fidelity", format_fidelity));

    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        suite.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
