//! The experiment driver behind the `calseg` binary: data generation,
//! training, evaluation, sweeps and loss comparisons, all writing plain CSV
//! and netpbm files into an output directory.

mod config;
mod render;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{default_loss_list, parse_loss_spec, threshold_grid, ExperimentConfig, GAMMA_GRID};
pub use render::{
    colormap, colormap_index, render_heatmap, render_overlay, FALSE_NEGATIVE, FALSE_POSITIVE,
    TRUE_NEGATIVE, TRUE_POSITIVE,
};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{
    softmax_histogram, wilcoxon_rank_sum, MetricsReport, PredictionMap, RankSumTest, CSV_HEADER,
};
use crate::segnet::{self, read_checkpoint, write_checkpoint, ParameterSet};
use crate::synthdata::{self, read_dataset, read_pfm, write_dataset, write_pfm, write_ppm, Split};
use crate::trainer::{self, normalize, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    SweepGamma,
    SweepThreshold,
    RenderHeatmap,
    CompareLosses,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::SweepGamma => "sweep-gamma",
            Command::SweepThreshold => "sweep-threshold",
            Command::RenderHeatmap => "render-heatmap",
            Command::CompareLosses => "compare-losses",
        }
    }
}

/// A trained model with its test-set predictions.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub loss: LossConfig,
    pub params: ParameterSet,
    pub log: TrainLog,
    pub maps: Vec<PredictionMap>,
    pub report: MetricsReport,
}

/// Pairwise rank-sum comparison of two runs on one per-image metric.
#[derive(Clone, Debug)]
pub struct Significance {
    pub loss_a: String,
    pub loss_b: String,
    pub metric: &'static str,
    pub test: RankSumTest,
}

/// File-system friendly form of a loss label.
pub fn slug(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => c,
            '+' => 'p',
            _ => '_',
        })
        .collect();
    while s.ends_with('_') {
        s.pop();
    }
    s
}

/// The train/val/test split: read from `data.dir` when set, otherwise
/// regenerated in memory from the `data.*` settings.
pub fn load_split(cfg: &ExperimentConfig) -> Result<Split> {
    match &cfg.data_dir {
        Some(dir) => Ok(read_dataset(dir, cfg.data.kind)?.0),
        None => {
            let samples = synthdata::generate(&cfg.data)?;
            synthdata::split(&samples, synthdata::DEFAULT_FRACTIONS, cfg.split_seed)
        }
    }
}

/// Foreground probability maps of `params` on every test sample.
pub fn predict_maps(cfg: &ExperimentConfig, params: &ParameterSet, split: &Split) -> Result<Vec<PredictionMap>> {
    split
        .test
        .iter()
        .map(|s| {
            let probs = segnet::predict(&cfg.net, params, &normalize(&s.image))?;
            PredictionMap::new(probs.channel(0)?, s.mask.clone())
        })
        .collect()
}

fn report(cfg: &ExperimentConfig, loss: &LossConfig, maps: &[PredictionMap], threshold: f64) -> Result<MetricsReport> {
    MetricsReport::from_maps(
        &cfg.data.kind.to_string(),
        &loss.label(),
        loss.gamma,
        maps,
        threshold,
        cfg.bootstrap_seed,
    )
}

/// Trains with `loss` using the shared seeds of `cfg` and evaluates on the
/// test split at `cfg.threshold`.
pub fn train_and_evaluate(cfg: &ExperimentConfig, loss: &LossConfig, split: &Split) -> Result<RunResult> {
    let (params, log) = trainer::train(&cfg.net, &cfg.train, loss, &split.train, &split.val)?;
    let maps = predict_maps(cfg, &params, split)?;
    let report = report(cfg, loss, &maps, cfg.threshold)?;
    Ok(RunResult {
        loss: loss.clone(),
        params,
        log,
        maps,
        report,
    })
}

/// Metrics of fixed predictions at each threshold.
pub fn sweep_thresholds(
    cfg: &ExperimentConfig,
    loss: &LossConfig,
    maps: &[PredictionMap],
    thresholds: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    thresholds
        .iter()
        .map(|&t| Ok((t, report(cfg, loss, maps, t)?)))
        .collect()
}

/// Rank-sum tests over per-image NLL and Dice for every pair of runs.
pub fn significance(runs: &[RunResult]) -> Result<Vec<Significance>> {
    let mut out = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            for metric in ["nll", "dice"] {
                let xs = a.report.values(metric).expect("known metric");
                let ys = b.report.values(metric).expect("known metric");
                out.push(Significance {
                    loss_a: a.report.loss.clone(),
                    loss_b: b.report.loss.clone(),
                    metric,
                    test: wilcoxon_rank_sum(xs, ys)?,
                });
            }
        }
    }
    Ok(out)
}

pub fn metrics_csv<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Sweep table: the swept variable, then the metric means and intervals.
pub fn sweep_csv(variable: &str, rows: &[(f64, MetricsReport)]) -> String {
    let metric_cols = CSV_HEADER.splitn(4, ',').nth(3).expect("header has metric columns");
    let mut s = format!("{variable},{metric_cols}\n");
    for (v, r) in rows {
        let row = r.csv_row();
        let metrics = row.splitn(4, ',').nth(3).expect("row has metric columns");
        let _ = writeln!(s, "{},{metrics}", crate::metrics::format_sig6(*v));
    }
    s
}

fn histogram_csv(variable: &str, rows: &[(f64, &[PredictionMap])], bins: usize) -> Result<String> {
    let mut s = format!("{variable},bin,lo,hi,count\n");
    for (v, maps) in rows {
        let mut counts = vec![0u64; bins];
        for m in *maps {
            for (bin, c) in softmax_histogram(m, bins)? {
                counts[bin] += c;
            }
        }
        for (bin, c) in counts.iter().enumerate() {
            let lo = bin as f64 / bins as f64;
            let hi = (bin + 1) as f64 / bins as f64;
            let _ = writeln!(s, "{v},{bin},{lo},{hi},{c}");
        }
    }
    Ok(s)
}

fn significance_csv(rows: &[Significance]) -> String {
    let mut s = String::from("loss_a,loss_b,metric,statistic,p_value,exact\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.loss_a,
            r.loss_b,
            r.metric,
            r.test.statistic,
            crate::metrics::format_sig6(r.test.two_sided_p),
            r.test.exact
        );
    }
    s
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn save_run(out: &Path, run: &RunResult) -> Result<()> {
    let name = slug(&run.report.loss);
    fs::create_dir_all(out.join("checkpoints"))?;
    let file = fs::File::create(out.join("checkpoints").join(format!("{name}.sgnt")))?;
    write_checkpoint(&run.params, std::io::BufWriter::new(file))?;
    write(out.join("logs").join(format!("{name}.csv")), run.log.to_csv())
}

fn load_params(cfg: &ExperimentConfig) -> Result<ParameterSet> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("this command needs `eval.checkpoint`"))?;
    let file = fs::File::open(path).map_err(|e| {
        Error::invalid(format!("cannot open checkpoint {}: {e}", path.display()))
    })?;
    let params = read_checkpoint(std::io::BufReader::new(file))?;
    params.check_against(&cfg.net)?;
    Ok(params)
}

fn progress(msg: &str) {
    eprintln!("calseg: {msg}");
}

/// Runs `command`, writing all outputs under `out`.
pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("resolved_config.txt"), cfg.resolved())?;
    match command {
        Command::GenData => {
            let samples = synthdata::generate(&cfg.data)?;
            let parts = synthdata::split(&samples, synthdata::DEFAULT_FRACTIONS, cfg.split_seed)?;
            let dir = cfg.data_dir.clone().unwrap_or_else(|| out.join("data"));
            write_dataset(&dir, &parts)?;
            progress(&format!("wrote {} samples to {}", samples.len(), dir.display()));
        }
        Command::Train => {
            let split = load_split(cfg)?;
            progress(&format!("training {}", cfg.loss.label()));
            let run = train_and_evaluate(cfg, &cfg.loss, &split)?;
            save_run(out, &run)?;
            write(out.join("metrics.csv"), metrics_csv([&run.report]))?;
        }
        Command::Eval => {
            let params = load_params(cfg)?;
            let split = load_split(cfg)?;
            let maps = predict_maps(cfg, &params, &split)?;
            let r = report(cfg, &cfg.loss, &maps, cfg.threshold)?;
            write(out.join("metrics.csv"), metrics_csv([&r]))?;
            write(out.join("histogram.csv"), histogram_csv("threshold", &[(cfg.threshold, &maps)], cfg.hist_bins)?)?;
            fs::create_dir_all(out.join("heatmaps"))?;
            fs::create_dir_all(out.join("predictions"))?;
            for (s, m) in split.test.iter().zip(&maps) {
                let name = format!("{:04}", s.meta.index);
                write_pfm(out.join("predictions").join(format!("{name}.pfm")), m.fg_prob())?;
                write_ppm(out.join("heatmaps").join(format!("{name}.ppm")), &render_heatmap(m.fg_prob())?)?;
            }
        }
        Command::SweepGamma => {
            let split = load_split(cfg)?;
            let mut rows = Vec::new();
            let mut runs = Vec::new();
            for &gamma in &cfg.gammas {
                let loss = LossConfig::dscpp(gamma);
                progress(&format!("training {}", loss.label()));
                let run = train_and_evaluate(cfg, &loss, &split)?;
                save_run(out, &run)?;
                rows.push((gamma, run.report.clone()));
                runs.push(run);
            }
            write(out.join("sweep.csv"), sweep_csv("gamma", &rows))?;
            write(out.join("metrics.csv"), metrics_csv(runs.iter().map(|r| &r.report)))?;
            let hist: Vec<(f64, &[PredictionMap])> =
                runs.iter().map(|r| (r.loss.gamma, r.maps.as_slice())).collect();
            write(out.join("histograms.csv"), histogram_csv("gamma", &hist, cfg.hist_bins)?)?;
        }
        Command::SweepThreshold => {
            let params = load_params(cfg)?;
            let split = load_split(cfg)?;
            let maps = predict_maps(cfg, &params, &split)?;
            let rows = sweep_thresholds(cfg, &cfg.loss, &maps, &cfg.thresholds)?;
            write(out.join("sweep.csv"), sweep_csv("threshold", &rows))?;
            fs::create_dir_all(out.join("overlays"))?;
            for &t in &cfg.thresholds {
                for (s, m) in split.test.iter().zip(&maps).take(cfg.overlay_count) {
                    let img = render_overlay(m.fg_prob(), m.truth(), t)?;
                    write_ppm(out.join("overlays").join(format!("t{t:.2}_{:04}.ppm", s.meta.index)), &img)?;
                }
            }
        }
        Command::RenderHeatmap => {
            let input = cfg
                .heatmap_input
                .as_ref()
                .ok_or_else(|| Error::config("render-heatmap needs `heatmap.input`"))?;
            let probs = read_pfm(input)?;
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "heatmap".into());
            fs::create_dir_all(out.join("heatmaps"))?;
            write_ppm(out.join("heatmaps").join(format!("{stem}.ppm")), &render_heatmap(&probs)?)?;
        }
        Command::CompareLosses => {
            let split = load_split(cfg)?;
            let mut runs = Vec::new();
            for loss in &cfg.losses {
                progress(&format!("training {}", loss.label()));
                let run = train_and_evaluate(cfg, loss, &split)?;
                save_run(out, &run)?;
                runs.push(run);
            }
            write(out.join("metrics.csv"), metrics_csv(runs.iter().map(|r| &r.report)))?;
            write(out.join("significance.csv"), significance_csv(&significance(&runs)?))?;
        }
    }
    Ok(())
}
