use std::path::{Path, PathBuf};

use ndarray::Array2;
use optimux::decoder::DiffractiveStack;
use optimux::encoder::{EncoderConfig, EncoderParams, Video};
use optimux::harness::{
    accuracy_envelope, attack_eval, craft_perturbations, degradation_sweep, energy_report, misalignment_grid,
    misalignment_sweep, train_classifier, PerturbationKind, Summary, SweepRow,
};
use optimux::metrics::export_distributions;
use optimux::model::{HybridModel, VideoDetector};
use optimux::muxlayout::{crosstalk_matrix, MuxLayout};
use optimux::synth::generate;
use optimux::trainer::{fine_tune, train};
use serde_json::json;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{ingest, write_dataset};
use crate::error::{CliError, Result};
use crate::output::{fmt_opt, Outputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Finetune,
}

/// Videos of one split: the manifest when configured, else the generator.
pub fn videos(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Video>> {
    let (manifest, synth) = match split {
        Split::Train => (&cfg.data.train_manifest, &cfg.data.train),
        Split::Test => (&cfg.data.test_manifest, &cfg.data.test),
        Split::Finetune => (&cfg.data.finetune_manifest, &cfg.data.finetune),
    };
    match manifest {
        Some(p) => ingest(p)?.load_all(),
        None => Ok(generate(synth)?),
    }
}

fn nonempty(v: Vec<Video>, what: &str) -> Result<Vec<Video>> {
    if v.is_empty() {
        return Err(CliError::Usage(format!("the {what} set is empty")));
    }
    Ok(v)
}

/// Randomly initialized encoder and flat layers as configured.
pub fn initial_model(cfg: &ExperimentConfig) -> Result<HybridModel> {
    let layout = MuxLayout::new(cfg.layout.clone())?;
    let enc = EncoderConfig {
        channels: cfg.encoder.channels.clone(),
        ..EncoderConfig::new((cfg.encoder.frame_rows, cfg.encoder.frame_cols), layout.tile_shape())
    };
    let encoder = EncoderParams::init(enc, cfg.model_seed())?;
    let layers = vec![Array2::zeros(layout.slm_shape()); cfg.stack.layers];
    let stack = DiffractiveStack::new(layers, cfg.distances())?;
    Ok(HybridModel::new(layout, encoder, stack, cfg.stack.optics.clone())?)
}

pub fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<HybridModel> {
    let (header, model) = checkpoint::load(path)?;
    if header.config_hash != cfg.hash() {
        log::info!("{} was trained under config {}", path.display(), header.config_hash);
    }
    Ok(model)
}

fn require(checkpoint: &Option<PathBuf>, command: &str) -> Result<PathBuf> {
    checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{command} needs --checkpoint <file>")))
}

pub fn gen_data(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    for (name, split) in [("train", Split::Train), ("test", Split::Test), ("finetune", Split::Finetune)] {
        let synth = match split {
            Split::Train => &cfg.data.train,
            Split::Test => &cfg.data.test,
            Split::Finetune => &cfg.data.finetune,
        };
        let manifest = out.path(&format!("data/{name}/{}", crate::dataset::MANIFEST_FILE))?;
        let dir = manifest.parent().expect("nested path").to_path_buf();
        let m = write_dataset(&dir, &generate(synth)?, Some(&out.config_hash))?;
        log::info!("wrote {} {name} videos to {}", m.entries.len(), dir.display());
    }
    Ok(())
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = nonempty(videos(cfg, Split::Train)?, "training")?;
    let val = videos(cfg, Split::Test)?;
    let val = (!val.is_empty()).then_some(&val[..]);
    let trained = train(initial_model(cfg)?, &data, val, &cfg.train)?;
    let path = out.path("model.ckpt")?;
    checkpoint::save(&path, &trained.model, &out.config_hash)?;
    out.json("history.json", &trained.history)?;
    log::info!("saved {}", path.display());
    Ok(())
}

pub fn finetune_cmd(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let model = load_model(&require(ckpt, "finetune")?, cfg)?;
    let data = nonempty(videos(cfg, Split::Finetune)?, "fine-tuning")?;
    let before = Summary::of(&model.evaluate(&data, &cfg.eval)?)?;
    let tuned = fine_tune(model, &data, None, &cfg.train)?;
    let after = Summary::of(&tuned.model.evaluate(&data, &cfg.eval)?)?;
    let path = out.path("finetuned.ckpt")?;
    checkpoint::save(&path, &tuned.model, &out.config_hash)?;
    out.json(
        "finetune.json",
        &json!({ "history": tuned.history, "before": before, "after": after }),
    )?;
    Ok(())
}

pub fn eval_cmd(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let model = load_model(&require(ckpt, "eval")?, cfg)?;
    let test = nonempty(videos(cfg, Split::Test)?, "test")?;
    let ev = model.evaluate(&test, &cfg.eval)?;
    let summary = Summary::of(&ev)?;
    out.json("metrics.json", &json!({ "model": model.name(), "summary": summary, "report": ev.report()? }))?;
    let rows: Vec<Vec<String>> = ev
        .records
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.video.to_string(),
                r.channel.to_string(),
                r.score.to_string(),
                r.label.to_string(),
            ]
        })
        .collect();
    out.csv("scores.csv", &["sampling_seed", "video", "channel", "score", "label"], &rows)?;
    println!("accuracy {:.4} ks {}", summary.accuracy, fmt_opt(summary.ks));
    Ok(())
}

const SUMMARY_COLUMNS: [&str; 7] = [
    "accuracy",
    "channel_accuracy",
    "channel_accuracy_std",
    "sensitivity",
    "specificity",
    "ks",
    "samples",
];

fn summary_cells(s: &Summary) -> Vec<String> {
    vec![
        s.accuracy.to_string(),
        s.channel_accuracy.to_string(),
        s.channel_accuracy_std.to_string(),
        fmt_opt(s.sensitivity),
        fmt_opt(s.specificity),
        fmt_opt(s.ks),
        s.samples.to_string(),
    ]
}

pub fn sweep_degrade(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    ckpt: &Option<PathBuf>,
    kinds: &[PerturbationKind],
) -> Result<()> {
    let model = load_model(&require(ckpt, "sweep-degrade")?, cfg)?;
    let test = nonempty(videos(cfg, Split::Test)?, "test")?;
    let h = &cfg.harness;
    for &kind in kinds {
        let (name, mags) = match kind {
            PerturbationKind::GaussianNoise => ("noise", &h.noise_sigmas),
            PerturbationKind::GaussianBlur => ("blur", &h.blur_sigmas),
            PerturbationKind::Jpeg => ("jpeg", &h.jpeg_qualities),
        };
        let rows: Vec<SweepRow> = degradation_sweep(&model, &test, kind, mags, &cfg.eval, cfg.noise_seed())?;
        let mut header = vec!["magnitude"];
        header.extend(SUMMARY_COLUMNS);
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut c = vec![r.magnitude.to_string()];
                c.extend(summary_cells(&r.summary));
                c
            })
            .collect();
        out.csv(&format!("degrade_{name}.csv"), &header, &cells)?;
    }
    Ok(())
}

pub fn sweep_misalign(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let model = load_model(&require(ckpt, "sweep-misalign")?, cfg)?;
    let test = nonempty(videos(cfg, Split::Test)?, "test")?;
    let grid = misalignment_grid(&cfg.harness.lateral_offsets, &cfg.harness.axial_offsets);
    let rows = misalignment_sweep(&model, &test, &grid, &cfg.eval)?;
    let mut header = vec!["dx_um", "dy_um", "dz_um"];
    header.extend(SUMMARY_COLUMNS);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![r.dx.to_string(), r.dy.to_string(), r.dz.to_string()];
            c.extend(summary_cells(&r.summary));
            c
        })
        .collect();
    out.csv("misalign.csv", &header, &cells)?;
    let env = accuracy_envelope(&rows);
    out.json(
        "misalign_envelope.json",
        &json!({ "min_accuracy": env.map(|e| e.0), "max_accuracy": env.map(|e| e.1) }),
    )?;
    Ok(())
}

pub fn attack_cmd(cfg: &ExperimentConfig, out: &mut Outputs, ckpts: &[PathBuf]) -> Result<()> {
    if ckpts.is_empty() {
        return Err(CliError::Usage("attack needs at least one --checkpoint <file>".into()));
    }
    let models = ckpts.iter().map(|p| load_model(p, cfg)).collect::<Result<Vec<_>>>()?;
    let train_set = nonempty(videos(cfg, Split::Train)?, "training")?;
    let test = nonempty(videos(cfg, Split::Test)?, "test")?;
    let baseline = train_classifier(&train_set, &cfg.harness.baseline)?;
    let deltas = craft_perturbations(&train_set, &cfg.harness.attack)?;
    let mut victims: Vec<&dyn VideoDetector> = models.iter().map(|m| m as &dyn VideoDetector).collect();
    victims.push(&baseline);
    let mut eps = vec![0.0];
    eps.extend(cfg.harness.attack.epsilons.iter().filter(|e| **e > 0.0));
    let rows = attack_eval(&victims, &deltas, &test, &eps, &cfg.eval)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i / eps.len()).to_string(),
                r.model.clone(),
                r.epsilon.to_string(),
                (r.epsilon * 255.0).to_string(),
                r.attackers.to_string(),
                r.accuracy.to_string(),
                r.accuracy_std.to_string(),
                fmt_opt(r.sensitivity),
                fmt_opt(r.specificity),
                r.success_rate.to_string(),
            ]
        })
        .collect();
    out.csv(
        "attack.csv",
        &[
            "victim", "model", "epsilon", "epsilon_x255", "attackers", "accuracy", "accuracy_std", "sensitivity",
            "specificity", "success_rate",
        ],
        &cells,
    )?;
    let budget: Vec<_> = deltas
        .iter()
        .map(|d| {
            json!({
                "attacker": d.attacker,
                "epsilon": d.epsilon,
                "max_abs": d.delta.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                "surrogate_loss_before": d.surrogate_loss_before,
                "surrogate_loss_after": d.surrogate_loss_after,
            })
        })
        .collect();
    out.json("perturbations.json", &budget)?;
    Ok(())
}

pub fn crosstalk_cmd(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let (layout, stack, optics) = match ckpt {
        Some(p) => {
            let m = load_model(p, cfg)?;
            (m.layout, m.stack, m.optics)
        }
        None => {
            let m = initial_model(cfg)?;
            (m.layout, m.stack, m.optics)
        }
    };
    let nominal = layout.config().video_spacing;
    let mut spacings = vec![nominal];
    spacings.extend(cfg.harness.crosstalk_spacings.iter().filter(|s| **s != nominal));
    let mut summary = Vec::new();
    for s in spacings {
        let l = layout.with_video_spacing(s)?;
        let m = crosstalk_matrix(&l, &stack, &optics)?;
        let n = m.nrows();
        let mut max_off = 0.0f64;
        let mut dominant = true;
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    max_off = max_off.max(m[[u, v]]);
                    dominant &= m[[u, u]] > m[[u, v]];
                }
            }
        }
        let max_row_sum = m.rows().into_iter().map(|r| r.sum()).fold(0.0, f64::max);
        let header: Vec<String> = std::iter::once("source".to_string()).chain((0..n).map(|v| format!("ch{v}"))).collect();
        let cells: Vec<Vec<String>> = (0..n)
            .map(|u| std::iter::once(u.to_string()).chain(m.row(u).iter().map(|x| x.to_string())).collect())
            .collect();
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv(&format!("crosstalk_spacing{s}.csv"), &refs, &cells)?;
        summary.push(json!({
            "spacing": s,
            "diagonally_dominant": dominant,
            "max_off_diagonal": max_off,
            "max_row_sum": max_row_sum,
        }));
    }
    out.json("crosstalk.json", &summary)?;
    Ok(())
}

pub fn energy_cmd(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let model = match ckpt {
        Some(p) => Some(load_model(p, cfg)?),
        None => None,
    };
    let twin = model.as_ref().map(|m| (&m.layout, &m.stack, &m.optics));
    let r = energy_report(&cfg.energy, twin)?;
    let mj = |j: f64| j * 1e3;
    out.json("energy.json", &json!({ "joules": r, "inputs": cfg.energy }))?;
    println!("encoder {:.1} mJ/video", mj(r.encoder_per_video));
    println!(
        "decoder {:.1}-{:.1} mJ/batch, {:.2}-{:.2} mJ/video (L = {})",
        mj(r.decoder_per_batch.0),
        mj(r.decoder_per_batch.1),
        mj(r.decoder_per_video.0),
        mj(r.decoder_per_video.1),
        cfg.energy.videos_per_batch
    );
    if let Some(e) = r.digital_twin_decoder_per_video {
        println!("digital twin decoder {:.4} mJ/video", mj(e));
    }
    Ok(())
}

pub fn export_figures(cfg: &ExperimentConfig, out: &mut Outputs, ckpt: &Option<PathBuf>) -> Result<()> {
    let model = load_model(&require(ckpt, "export-figures")?, cfg)?;
    let test = nonempty(videos(cfg, Split::Test)?, "test")?;
    let ev = model.evaluate(&test, &cfg.eval)?;
    let (real, fake) = ev.scores_by_class();
    let t = export_distributions(&real, &fake, cfg.harness.histogram_bins)?;
    let hist: Vec<Vec<String>> = (0..t.real_counts.len())
        .map(|k| {
            vec![
                t.edges[k].to_string(),
                t.edges[k + 1].to_string(),
                t.real_counts[k].to_string(),
                t.fake_counts[k].to_string(),
            ]
        })
        .collect();
    out.csv("score_histogram.csv", &["bin_lo", "bin_hi", "real", "fake"], &hist)?;
    let cdf: Vec<Vec<String>> = (0..t.cdf_points.len())
        .map(|k| vec![t.cdf_points[k].to_string(), t.real_cdf[k].to_string(), t.fake_cdf[k].to_string()])
        .collect();
    out.csv("score_cdf.csv", &["score", "real_cdf", "fake_cdf"], &cdf)?;
    out.json("ks.json", &json!({ "max_cdf_gap": t.max_cdf_gap() }))?;
    Ok(())
}
