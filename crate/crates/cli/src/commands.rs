use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use hybrid_snn::ann::InitHeadSpec;
use hybrid_snn::energy::{
    ann_power_vs_rate, count_ann_macs, count_head_macs, count_snn_macs, hybrid_power_vs_rate,
    measure_and_report, rate_curve_csv, Part, RunSummary,
};
use hybrid_snn::grad::{finite_diff_check, random_case, train_toy, CaseSize};
use hybrid_snn::hybrid::{
    curve_to_csv, error_over_time, parse_trace_csv, run_hybrid, HybridConfig, HybridModel,
    ModelSpec, StepPrediction,
};
use hybrid_snn::io::write_atomic_str;
use hybrid_snn::metrics::{mpjpe, parse_pose_csv, triangulate, CameraModel, Pose3D};
use hybrid_snn::snn::{parse_dump, SpikeActivityRecord};
use hybrid_snn::tensornet::WeightContainer;
use hybrid_snn::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{Cli, Command};

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn write(&self, name: &str, text: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        let path = self.out.join(name);
        write_atomic_str(&path, text)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn model_spec(&self) -> Result<ModelSpec> {
        let path =
            self.cfg.data.model.as_deref().ok_or_else(|| {
                Error::Config("no model description configured (data.model)".into())
            })?;
        Ok(ModelSpec::load(path)?)
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let out = cli
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.unwrap_or(cfg.seed);
    let ctx = Ctx { cfg, out, seed };
    match cli.command {
        Command::Ingest { events } => ingest(ctx, events),
        Command::Infer {
            mode,
            span,
            random_weights,
        } => infer(ctx, mode, span.as_deref(), random_weights),
        Command::Energy { rates, dump, span } => {
            energy(ctx, &rates, dump.as_deref(), span.as_deref())
        }
        Command::Gradcheck {
            size,
            seeds,
            tolerance,
        } => gradcheck(ctx, size, seeds, tolerance),
        Command::Eval {
            pred,
            gt,
            cams,
            triangulate,
        } => eval(ctx, &pred, gt.as_deref(), &cams, triangulate),
        Command::Traintoy { steps, lr, mode } => traintoy(ctx, steps, lr, mode),
    }
}

fn metric_block(rows: &[(&str, String)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

fn ingest(mut ctx: Ctx, events: Option<PathBuf>) -> Result<ExitCode> {
    if events.is_some() {
        ctx.cfg.data.events = events;
    }
    let stream = ctx.cfg.events()?;
    let (first, last) = stream
        .time_span()
        .map_or((String::new(), String::new()), |(a, b)| {
            (a.to_string(), b.to_string())
        });
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::Io {
        path: ctx.out.clone(),
        source: e,
    })?;
    hybrid_snn::io::write_atomic(&ctx.out.join("events.bin"), &stream.to_binary())?;
    ctx.write(
        "ingest.csv",
        &metric_block(&[
            ("events", stream.len().to_string()),
            ("width", stream.width().to_string()),
            ("height", stream.height().to_string()),
            ("t_first_us", first),
            ("t_last_us", last),
            ("resorted", stream.was_resorted().to_string()),
        ]),
    )?;
    println!(
        "ingested {} events ({}x{})",
        stream.len(),
        stream.width(),
        stream.height()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_span(s: &str) -> Result<(u64, u64), Error> {
    let bad = || Error::Config(format!("span {s:?} is not of the form t0..t1"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn resolve_span(
    stream: &hybrid_snn::events::EventStream,
    span: Option<&str>,
) -> Result<(u64, u64), Error> {
    match span {
        Some(s) => parse_span(s),
        None => {
            let (a, b) = stream
                .time_span()
                .ok_or_else(|| Error::Config("empty stream and no --span".into()))?;
            Ok((a, b + 1))
        }
    }
}

fn load_model(ctx: &Ctx, spec: ModelSpec, random: bool) -> Result<HybridModel> {
    match ctx.cfg.data.weights.as_deref() {
        Some(path) => Ok(HybridModel::from_container(
            spec,
            &WeightContainer::load(path)?,
            ctx.cfg.hybrid.mode,
        )?),
        None if random => Ok(HybridModel::random(
            spec,
            &mut ChaCha8Rng::seed_from_u64(ctx.seed),
            1.0,
        )?),
        None => Err(Error::Config(
            "no weights configured (data.weights); pass --random-weights to use seeded ones".into(),
        )
        .into()),
    }
}

/// Heads that run at each ANN tick under this configuration.
fn active_heads(spec: &ModelSpec, cfg: &HybridConfig) -> Vec<InitHeadSpec> {
    if !cfg.mode.injects_states() {
        return Vec::new();
    }
    let n = spec.snn.num_layers();
    spec.heads
        .iter()
        .filter(|h| cfg.init_layers.includes(h.target_layer, n))
        .cloned()
        .collect()
}

fn infer(
    mut ctx: Ctx,
    mode: Option<hybrid_snn::hybrid::HybridMode>,
    span: Option<&str>,
    random: bool,
) -> Result<ExitCode> {
    if let Some(m) = mode {
        ctx.cfg.hybrid.mode = m;
    }
    let stream = ctx.cfg.events()?;
    let (t0, t1) = resolve_span(&stream, span)?;
    let model = load_model(&ctx, ctx.model_spec()?, random)?;
    let trace = run_hybrid(&stream, t0, t1, &ctx.cfg.hybrid, &model)?;
    ctx.write("trace.csv", &trace.to_csv())?;
    ctx.write("spike_dump.csv", &trace.activity.to_dump_csv())?;
    if ctx.cfg.hybrid.keep_heatmaps {
        trace
            .heatmap_container()?
            .save(&ctx.out.join("heatmaps.bin"))?;
    }
    println!(
        "mode {}: {} trace entries, {} ANN inferences, {} SNN steps",
        ctx.cfg.hybrid.mode,
        trace.entries.len(),
        trace.ann_inferences,
        trace.activity.timesteps
    );
    Ok(ExitCode::SUCCESS)
}

fn energy(ctx: Ctx, rates: &[f64], dump: Option<&Path>, span: Option<&str>) -> Result<ExitCode> {
    let spec = ctx.model_spec()?;
    let cfg = &ctx.cfg.hybrid;
    let schedule = cfg.schedule()?;
    let heads = active_heads(&spec, cfg);
    let mut macs = String::from("layer,macs\n");
    let ann_layers = if cfg.mode.needs_ann() {
        count_ann_macs(&spec.ann)
    } else {
        Vec::new()
    };
    for l in ann_layers
        .iter()
        .chain(&count_head_macs(&heads))
        .chain(&count_snn_macs(&spec.snn))
    {
        let _ = writeln!(macs, "{},{}", l.name, l.macs);
    }
    ctx.write("macs.csv", &macs)?;
    let ann_macs_inf: u64 = ann_layers.iter().map(|l| l.macs).sum::<u64>()
        + count_head_macs(&heads).iter().map(|l| l.macs).sum::<u64>();

    let activity = match dump {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let rows = parse_dump(&text, &path.display().to_string())?;
            Some(SpikeActivityRecord::for_spec(&spec.snn).recount(&rows)?)
        }
        None if ctx.cfg.data.events.is_some() => {
            let stream = ctx.cfg.events()?;
            let (a, b) = resolve_span(&stream, span)?;
            let model = load_model(&ctx, spec.clone(), false)?;
            Some(run_hybrid(&stream, a, b, cfg, &model)?.activity)
        }
        None => None,
    };

    let snn_rates: Vec<f64> = if rates.is_empty() {
        vec![1e6 / schedule.dt_us as f64]
    } else {
        rates.to_vec()
    };
    let curve = match &activity {
        Some(act) => {
            let snn_per_period = (schedule.steps_per_period - 1) as u64;
            let periods = act.timesteps.div_ceil(snn_per_period.max(1));
            let inferences = if cfg.mode.needs_ann() { periods } else { 0 };
            let summary = RunSummary {
                ann: cfg.mode.needs_ann().then_some(&spec.ann),
                heads: &heads,
                snn: &spec.snn,
                activity: act,
                ann_inferences: inferences,
                duration_s: periods as f64 * schedule.period_us as f64 * 1e-6,
            };
            let report = measure_and_report(&summary, &ctx.cfg.energy)?;
            ctx.write("energy_report.csv", &report.to_csv())?;
            println!(
                "energy {:.3} uJ over {} s, {:.4} W, SNN share {:.3}",
                report.totals.energy_pj * 1e-6,
                report.totals.duration_s,
                report.totals.power_w,
                report.totals.snn_share
            );
            let steps = act.timesteps.max(1) as f64;
            let snn_rows = report.rows.iter().filter(|r| r.part == Part::Snn);
            let snn_macs = snn_rows.clone().map(|r| r.macs).sum::<u64>() as f64 / steps;
            let snn_acs = snn_rows.map(|r| r.acs).sum::<u64>() as f64 / steps;
            let ann_rate = if cfg.mode.needs_ann() {
                cfg.ann_rate_hz
            } else {
                0.0
            };
            hybrid_power_vs_rate(
                ann_macs_inf as f64,
                snn_macs,
                snn_acs,
                ann_rate,
                &snn_rates,
                &ctx.cfg.energy,
            )?
        }
        None => ann_power_vs_rate(ann_macs_inf as f64, &snn_rates, &ctx.cfg.energy),
    };
    ctx.write("power_vs_rate.csv", &rate_curve_csv(&curve))?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(ctx: Ctx, side: usize, seeds: u64, tolerance: f64) -> Result<ExitCode> {
    let size = CaseSize {
        side,
        ..CaseSize::default()
    };
    let mut csv = String::from("seed,max_rel_deviation,max_abs_deviation,checked,pass\n");
    let mut worst = 0.0f64;
    let mut failed = 0;
    for seed in ctx.seed..ctx.seed + seeds {
        let (net, ep) = random_case(seed, size)?;
        let r = finite_diff_check(&net, &ep, 1e-4)?;
        let pass = r.max_rel_deviation <= tolerance;
        failed += usize::from(!pass);
        worst = worst.max(r.max_rel_deviation);
        let _ = writeln!(
            csv,
            "{seed},{},{},{},{pass}",
            r.max_rel_deviation, r.max_abs_deviation, r.checked
        );
    }
    ctx.write("gradcheck.csv", &csv)?;
    let verdict = if failed == 0 { "pass" } else { "fail" };
    println!(
        "{verdict}: {seeds} nets, max relative deviation {worst:.3e} (tolerance {tolerance:.0e})"
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Largest joint id in a trace file, plus one.
fn trace_joints(text: &str) -> usize {
    text.lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2)?.trim().parse::<usize>().ok())
        .max()
        .map_or(0, |j| j + 1)
}

fn eval(
    ctx: Ctx,
    preds: &[PathBuf],
    gt: Option<&Path>,
    cams: &[PathBuf],
    tri: bool,
) -> Result<ExitCode> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    let gt = gt
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.data.labels.clone())
        .ok_or_else(|| Error::Config("no labels given (--gt or data.labels)".into()))?;
    let texts = preds
        .iter()
        .map(|p| read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let joints = match ctx.cfg.data.joints {
        Some(j) => j,
        None => texts.iter().map(|t| trace_joints(t)).max().unwrap_or(0),
    };
    if joints == 0 {
        return Err(Error::Config("cannot tell the joint count (set data.joints)".into()).into());
    }
    let traces = preds
        .iter()
        .zip(&texts)
        .map(|(p, t)| parse_trace_csv(t, joints, &p.display().to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = parse_pose_csv(&read(&gt)?, joints, &gt.display().to_string())?;
    let schedule = ctx.cfg.hybrid.schedule()?;

    let first = &traces[0];
    let t_first = first.first().map_or(0, |r| r.t_us);
    let predictions: Vec<StepPrediction> = first
        .iter()
        .map(|r| StepPrediction {
            t_us: r.t_us,
            step: (((r.t_us - t_first) % schedule.period_us) / schedule.dt_us) as usize,
            pose: r.pose.clone(),
        })
        .collect();
    let curve = error_over_time(&predictions, &labels, &schedule)?;
    ctx.write("error_over_time.csv", &curve_to_csv(&curve))?;
    let samples: usize = curve.iter().map(|p| p.samples).sum();
    let total: f64 = curve
        .iter()
        .filter_map(|p| p.mpjpe.map(|m| m * p.samples as f64))
        .sum();
    let mean2d = (samples > 0).then(|| total / samples as f64);
    let mut rows = vec![
        (
            "mpjpe_2d_px",
            mean2d.map(|v| v.to_string()).unwrap_or_default(),
        ),
        ("samples_2d", samples.to_string()),
    ];

    if tri {
        if traces.len() != 2 {
            return Err(Error::Config(
                "--triangulate needs two --pred traces, one per camera".into(),
            )
            .into());
        }
        let cams = cams
            .iter()
            .map(|p| CameraModel::load(p))
            .collect::<Result<Vec<_>, _>>()?;
        let (sum, n) = mpjpe_3d(&traces[0], &traces[1], &labels, &cams, joints)?;
        rows.push((
            "mpjpe_3d",
            if n > 0 {
                (sum / n as f64).to_string()
            } else {
                String::new()
            },
        ));
        rows.push(("samples_3d", n.to_string()));
    }
    let summary = metric_block(&rows);
    ctx.write("eval.csv", &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

/// Sum of per-pose 3D MPJPE over timestamps present in both views and the
/// 3D labels, and the number of such poses.
fn mpjpe_3d(
    a: &[hybrid_snn::hybrid::TraceRow],
    b: &[hybrid_snn::hybrid::TraceRow],
    labels: &[hybrid_snn::metrics::TimedPose],
    cams: &[CameraModel],
    joints: usize,
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0;
    for ra in a {
        let Some(rb) = b.iter().find(|r| r.t_us == ra.t_us) else {
            continue;
        };
        let Some(gt) = labels
            .iter()
            .find(|l| l.t_us == ra.t_us)
            .and_then(|l| l.pose3d.as_ref())
        else {
            continue;
        };
        let mut pose = Pose3D::invisible(joints);
        for j in 0..joints {
            if ra.pose.visible[j] && rb.pose.visible[j] {
                pose.coords[j] =
                    triangulate(&[(ra.pose.coords[j], &cams[0]), (rb.pose.coords[j], &cams[1])])
                        .with_context(|| format!("t = {} us, joint {j}", ra.t_us))?;
                pose.visible[j] = true;
            }
        }
        if let Some(e) = mpjpe(&pose, gt)? {
            sum += e;
            n += 1;
        }
    }
    Ok((sum, n))
}

fn traintoy(
    mut ctx: Ctx,
    steps: Option<usize>,
    lr: Option<f64>,
    mode: Option<hybrid_snn::hybrid::HybridMode>,
) -> Result<ExitCode> {
    let toy = &mut ctx.cfg.toy;
    toy.seed = ctx.seed;
    if let Some(s) = steps {
        toy.steps = s;
    }
    if let Some(l) = lr {
        toy.lr = l;
    }
    if let Some(m) = mode {
        toy.mode = m;
    }
    let res = train_toy(toy)?;
    ctx.write("loss_curve.csv", &res.loss_csv())?;
    let ratio = res.final_eval_loss / res.initial_eval_loss;
    let summary = metric_block(&[
        ("initial_eval_loss", res.initial_eval_loss.to_string()),
        ("final_eval_loss", res.final_eval_loss.to_string()),
        ("loss_ratio", ratio.to_string()),
        ("diverged", res.diverged.to_string()),
    ]);
    ctx.write("traintoy.csv", &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}
