mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blindqe_core::checkpoint::{load_checkpoint_of, save_checkpoint, ModelKind};
use blindqe_core::codec::manifest::{Manifest, ManifestEntry};
use blindqe_core::codec::synth::{synthetic_clip, SynthOptions};
use blindqe_core::codec::yuv::{load_yuv, write_yuv};
use blindqe_core::codec::{degrade_clip, Clip};
use blindqe_core::drl::{pretrain_drl, DrlModel};
use blindqe_core::eval::{delta_metrics, profile_stages, MetricsReport};
use blindqe_core::net::{Enhancer, NetConfig, StageTrace};
use blindqe_core::train::{train_blind, write_loss_curve};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{ConfigError, RunConfig};

/// Mean ΔPSNR fell below `eval_min_delta_psnr`; maps to exit status 3.
#[derive(Debug)]
struct AssertFailed(String);

impl std::fmt::Display for AssertFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AssertFailed {}

#[derive(Parser, Debug)]
#[command(name = "blindqe", version, about = "Blind quality enhancement for compressed video")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade raw clips at each QP and write a paired manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Manifest of raw clips.
        #[arg(long, conflicts_with = "synthetic")]
        manifest: Option<PathBuf>,
        /// Generate this many synthetic clips instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        /// Comma-separated QPs; defaults to the configured levels.
        #[arg(long, value_delimiter = ',')]
        qp: Vec<i32>,
    },
    /// Pretrain the degradation encoder on compressed clips.
    PretrainDrl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the enhancement network against a frozen encoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        drl: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance every compressed clip of a manifest.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        drl: PathBuf,
        #[arg(long)]
        net: PathBuf,
        /// Run this many stages minus one regardless of the predicted level.
        #[arg(long)]
        override_level: Option<usize>,
    },
    /// Quality of enhanced clips against raw and degraded ones.
    Eval {
        #[command(flatten)]
        common: Common,
        /// enhanced.json written by `enhance`.
        #[arg(long, required_unless_present = "raw")]
        input: Option<PathBuf>,
        #[arg(long, requires_all = ["degraded", "enhanced", "width", "height", "frames"])]
        raw: Option<PathBuf>,
        #[arg(long)]
        degraded: Option<PathBuf>,
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Exit with status 3 when mean ΔPSNR is below `eval_min_delta_psnr`.
        #[arg(long)]
        assert: bool,
    },
    /// Summarize stage traces by QP.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        traces: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::PretrainDrl { common, .. }
            | Command::Train { common, .. }
            | Command::Enhance { common, .. }
            | Command::Eval { common, .. }
            | Command::Profile { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::PretrainDrl { .. } => "pretrain-drl",
            Command::Train { .. } => "train",
            Command::Enhance { .. } => "enhance",
            Command::Eval { .. } => "eval",
            Command::Profile { .. } => "profile",
        }
    }
}

/// One enhanced clip with its sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnhancedEntry {
    raw_path: PathBuf,
    compressed_path: PathBuf,
    enhanced_path: PathBuf,
    width: usize,
    height: usize,
    frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qp: Option<i32>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    clip: usize,
    frame: usize,
    #[serde(flatten)]
    trace: &'a StageTrace,
}

#[derive(Serialize)]
struct EvalSummary {
    clips: Vec<MetricsReport>,
    mean_delta_psnr: f64,
    mean_delta_ssim: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else if e.downcast_ref::<AssertFailed>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.cmd.common().clone();
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    match &cli.cmd {
        Command::PretrainDrl { epochs: Some(e), .. } => cfg.pretrain_epochs = *e,
        Command::Train { epochs: Some(e), .. } => cfg.train_epochs = *e,
        _ => {}
    }
    let out = &common.out;
    fs::create_dir_all(out).with_context(|| format!("{}: cannot create run directory", out.display()))?;
    write_echo(out, &cfg, cli.cmd.name())?;

    match cli.cmd {
        Command::Simulate {
            manifest,
            synthetic,
            width,
            height,
            frames,
            qp,
            ..
        } => {
            let qps = if qp.is_empty() { cfg.qp_levels.clone() } else { qp };
            simulate(&cfg, out, manifest.as_deref(), synthetic, (width, height, frames), &qps)
        }
        Command::PretrainDrl { manifest, .. } => pretrain(&cfg, out, &manifest),
        Command::Train { manifest, drl, .. } => train(&cfg, out, &manifest, &drl),
        Command::Enhance {
            manifest,
            drl,
            net,
            override_level,
            ..
        } => enhance(out, &manifest, &drl, &net, override_level),
        Command::Eval {
            input,
            raw,
            degraded,
            enhanced,
            width,
            height,
            frames,
            assert,
            ..
        } => {
            let triples = match (input, raw) {
                (Some(p), _) => {
                    let text = fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    let entries: Vec<EnhancedEntry> =
                        serde_json::from_str(&text).with_context(|| p.display().to_string())?;
                    let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                    entries
                        .into_iter()
                        .map(|e| {
                            (
                                base.join(&e.raw_path),
                                base.join(&e.compressed_path),
                                base.join(&e.enhanced_path),
                                (e.width, e.height, e.frames),
                                e.qp,
                            )
                        })
                        .collect()
                }
                (None, Some(r)) => vec![(
                    r,
                    degraded.expect("required by clap"),
                    enhanced.expect("required by clap"),
                    (width.unwrap(), height.unwrap(), frames.unwrap()),
                    None,
                )],
                (None, None) => bail!("eval needs --input or --raw/--degraded/--enhanced"),
            };
            eval(&cfg, out, &triples, assert)
        }
        Command::Profile { traces, .. } => profile(out, &traces),
    }
}

/// Writes the effective configuration and the invocation beside the outputs.
fn write_echo(out: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    let p = out.join("config.toml");
    fs::write(&p, cfg.to_toml()).with_context(|| p.display().to_string())?;
    let inv = serde_json::json!({
        "command": command,
        "args": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let p = out.join("invocation.json");
    fs::write(&p, serde_json::to_string_pretty(&inv)?).with_context(|| p.display().to_string())?;
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| p.display().to_string())
}

fn simulate(
    cfg: &RunConfig,
    out: &Path,
    manifest: Option<&Path>,
    synthetic: Option<usize>,
    size: (usize, usize, usize),
    qps: &[i32],
) -> Result<()> {
    let codec = cfg.codec();
    codec.validate()?;
    // (raw path as written into the new manifest, clip)
    let mut sources: Vec<(PathBuf, Clip)> = Vec::new();
    match (manifest, synthetic) {
        (Some(m), _) => {
            let m = Manifest::load(m)?;
            for e in &m.entries {
                let path = m.resolve(&e.raw_path);
                let clip = load_yuv(&path, e.width, e.height, e.frames)?;
                sources.push((absolute(&path)?, clip));
            }
        }
        (None, Some(n)) => {
            fs::create_dir_all(out.join("raw"))?;
            let (w, h, f) = size;
            for i in 0..n {
                let clip = synthetic_clip(w, h, f, cfg.seed.wrapping_add(i as u64), SynthOptions::default())?;
                let rel = PathBuf::from(format!("raw/clip{i:03}.yuv"));
                write_yuv(out.join(&rel), &clip)?;
                sources.push((rel, clip));
            }
        }
        (None, None) => bail!("simulate needs --manifest or --synthetic"),
    }
    fs::create_dir_all(out.join("compressed"))?;
    let mut entries = Vec::new();
    for (i, (raw_path, clip)) in sources.iter().enumerate() {
        for &qp in qps {
            let d = degrade_clip(clip, qp, &codec)?;
            let rel = PathBuf::from(format!("compressed/clip{i:03}_qp{qp}.yuv"));
            write_yuv(out.join(&rel), &d)?;
            entries.push(ManifestEntry {
                raw_path: raw_path.clone(),
                width: clip.width(),
                height: clip.height(),
                frames: clip.len(),
                qp: Some(qp),
                compressed_path: Some(rel),
                label: d.label,
            });
        }
    }
    let n = entries.len();
    Manifest {
        base: out.to_path_buf(),
        entries,
    }
    .save(out.join("manifest.json"))?;
    println!("wrote {n} compressed clips to {}", out.display());
    Ok(())
}

fn pretrain(cfg: &RunConfig, out: &Path, manifest: &Path) -> Result<()> {
    let pairs = Manifest::load(manifest)?.load_pairs(&cfg.codec())?;
    let clips: Vec<Clip> = pairs.into_iter().map(|p| p.compressed).collect();
    let res = pretrain_drl(&clips, &cfg.drl(), &cfg.pretrain())?;
    let meta = serde_json::json!({
        "initial_probe_loss": res.initial_probe_loss,
        "final_probe_loss": res.final_probe_loss,
    });
    save_checkpoint(&res.model.to_weights(meta)?, out.join("drl.ckpt"))?;
    write_loss_curve(out.join("loss.csv"), &res.curve)?;
    println!(
        "probe loss {:.4} -> {:.4}; wrote {}",
        res.initial_probe_loss,
        res.final_probe_loss,
        out.join("drl.ckpt").display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path, manifest: &Path, drl: &Path) -> Result<()> {
    let drl_w = load_checkpoint_of(drl, ModelKind::Drl)?;
    let dim = DrlModel::from_weights(&drl_w)?.config().vector_dim();
    let pairs = Manifest::load(manifest)?.load_pairs(&cfg.codec())?;
    let res = train_blind(&pairs, &drl_w, &cfg.net(dim), &cfg.train())?;
    save_checkpoint(&res.weights(&drl_w)?, out.join("net.ckpt"))?;
    write_loss_curve(out.join("loss.csv"), &res.curve)?;
    println!(
        "probe loss {:.5} -> {:.5}; wrote {}",
        res.initial_probe_loss,
        res.final_probe_loss,
        out.join("net.ckpt").display()
    );
    Ok(())
}

fn enhance(out: &Path, manifest: &Path, drl: &Path, net: &Path, override_level: Option<usize>) -> Result<()> {
    let drl_w = load_checkpoint_of(drl, ModelKind::Drl)?;
    let net_w = load_checkpoint_of(net, ModelKind::Net)?;
    let net_cfg: NetConfig = serde_json::from_str(&net_w.config)?;
    if let Some(l) = override_level {
        if l >= net_cfg.max_stages {
            bail!("--override-level {l} exceeds the network's {} stages", net_cfg.max_stages);
        }
    }
    let enhancer = Enhancer::new(&drl_w, &net_w, &net_cfg)?;
    let m = Manifest::load(manifest)?;
    fs::create_dir_all(out.join("enhanced"))?;
    let trace_path = out.join("traces.jsonl");
    let mut traces = fs::File::create(&trace_path).with_context(|| trace_path.display().to_string())?;
    let mut entries = Vec::new();
    for (i, e) in m.entries.iter().enumerate() {
        let Some(cp) = &e.compressed_path else {
            continue;
        };
        let comp = load_yuv(m.resolve(cp), e.width, e.height, e.frames)?.with_qp(e.qp, e.label);
        let (enhanced, tr) = enhancer.enhance_clip(&comp, override_level)?;
        let rel = PathBuf::from(format!("enhanced/clip{i:03}.yuv"));
        write_yuv(out.join(&rel), &enhanced)?;
        for (f, t) in tr.iter().enumerate() {
            let line = serde_json::to_string(&TraceLine { clip: i, frame: f, trace: t })?;
            writeln!(traces, "{line}").with_context(|| trace_path.display().to_string())?;
        }
        entries.push(EnhancedEntry {
            raw_path: absolute(&m.resolve(&e.raw_path))?,
            compressed_path: absolute(&m.resolve(cp))?,
            enhanced_path: rel,
            width: e.width,
            height: e.height,
            frames: e.frames,
            qp: e.qp,
        });
    }
    let p = out.join("enhanced.json");
    fs::write(&p, serde_json::to_string_pretty(&entries)?).with_context(|| p.display().to_string())?;
    println!("enhanced {} clips into {}", entries.len(), out.display());
    Ok(())
}

type EvalInput = (PathBuf, PathBuf, PathBuf, (usize, usize, usize), Option<i32>);

fn eval(cfg: &RunConfig, out: &Path, triples: &[EvalInput], assert: bool) -> Result<()> {
    if triples.is_empty() {
        bail!("nothing to evaluate");
    }
    let mut clips = Vec::new();
    for (i, (r, d, e, (w, h, f), qp)) in triples.iter().enumerate() {
        let raw = load_yuv(r, *w, *h, *f)?;
        let deg = load_yuv(d, *w, *h, *f)?;
        let enh = load_yuv(e, *w, *h, *f)?;
        let mut rep = delta_metrics(&raw, &deg, &enh)?;
        rep.qp = *qp;
        rep.write_csv(out.join(format!("metrics_clip{i:03}.csv")))?;
        println!(
            "clip {i} qp {}: psnr {:.3} -> {:.3} (delta {:+.4} dB)",
            qp.map_or("?".to_string(), |q| q.to_string()),
            rep.mean_psnr_degraded,
            rep.mean_psnr_enhanced,
            rep.mean_delta_psnr
        );
        clips.push(rep);
    }
    let n = clips.len() as f64;
    let summary = EvalSummary {
        mean_delta_psnr: clips.iter().map(|c| c.mean_delta_psnr).sum::<f64>() / n,
        mean_delta_ssim: clips.iter().map(|c| c.mean_delta_ssim).sum::<f64>() / n,
        clips,
    };
    let p = out.join("metrics.json");
    fs::write(&p, serde_json::to_string_pretty(&summary)?).with_context(|| p.display().to_string())?;
    println!("mean delta psnr {:+.4} dB", summary.mean_delta_psnr);
    if assert && summary.mean_delta_psnr < cfg.eval_min_delta_psnr {
        return Err(AssertFailed(format!(
            "mean delta psnr {:.4} dB is below the threshold {:.4} dB",
            summary.mean_delta_psnr, cfg.eval_min_delta_psnr
        ))
        .into());
    }
    Ok(())
}

fn profile(out: &Path, paths: &[PathBuf]) -> Result<()> {
    let mut traces = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let t: StageTrace =
                serde_json::from_str(line).with_context(|| format!("{}:{}", p.display(), n + 1))?;
            traces.push(t);
        }
    }
    let rep = profile_stages(&traces)?;
    rep.write_json(out.join("profile.json"))?;
    rep.write_csv(out.join("profile.csv"))?;
    for g in &rep.groups {
        println!(
            "qp {:>4}: {} frames, {:.2} stages, {:.3e} MACs, {:.4} s",
            g.qp.map_or("?".to_string(), |q| q.to_string()),
            g.frames,
            g.mean_executed_stages,
            g.mean_cost,
            g.mean_wall_seconds
        );
    }
    Ok(())
}
