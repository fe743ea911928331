//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use eres2net::audio::{load_wav, read_manifest, AugmentProfile, FeatureMatrix, Waveform};
use eres2net::eval::{
    archive, format_scores, parse_trials, read_archive, score_trials, truncated_eval, write_archive,
    DcfParams, EvalReport,
};
use eres2net::model::{load_state_dict, ERes2NetV2, ModelConfig};
use eres2net::profile::{profile as profile_config, reduction_check};
use eres2net::rng::SeedStreams;
use eres2net::synth::{write_corpus, CorpusSpec};
use eres2net::tensor::checkpoint::Checkpoint;
use eres2net::train::{AamConfig, AamHead, Dataset, LargeMargin, OptimState, TrainConfig, Trainer};
use eres2net::{Error, Result};

use crate::run_manifest::RunManifest;
use crate::{
    DumpFbankArgs, EvalArgs, ExtractArgs, ProfileArgs, ReportFormat, ScoreArgs, SynthArgs, TrainArgs,
};

const CONFIG_FILE: &str = "config.conf";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_waves(path: &Path) -> Result<Vec<Waveform>> {
    read_manifest(path)?.iter().map(|e| load_wav(&e.path)).collect()
}

/// Config given explicitly, or the copy saved beside a checkpoint.
fn resolve_config(config: Option<&str>, checkpoint: &Path) -> Result<(String, ModelConfig)> {
    let source = match config {
        Some(c) => c.to_string(),
        None => checkpoint.with_file_name(CONFIG_FILE).to_string_lossy().into_owned(),
    };
    let cfg = ModelConfig::load(Path::new(&source))?;
    Ok((source, cfg))
}

fn load_model(cfg: &ModelConfig, checkpoint: &Path) -> Result<ERes2NetV2> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut model = ERes2NetV2::new(cfg, &mut SeedStreams::new(0).stream("init"))?;
    load_state_dict(&mut model, &ck, "", &["head."])?;
    Ok(model)
}

/// Reads a manifest or a list of `id path` / bare `path` lines.
pub fn read_wav_list(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (id, wav) = match fields[..] {
            [wav] => {
                let stem = Path::new(wav).file_stem().unwrap_or_default();
                (stem.to_string_lossy().into_owned(), wav)
            }
            [id, wav] | [id, wav, _] => (id.to_string(), wav),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected 1 to 3 fields, found {}", fields.len()),
                })
            }
        };
        out.push((id, base.join(wav)));
    }
    Ok(out)
}

fn load_audio(list: &Path) -> Result<Vec<(String, Waveform)>> {
    read_wav_list(list)?
        .into_iter()
        .map(|(id, p)| Ok((id, load_wav(&p)?)))
        .collect()
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = ModelConfig::load(Path::new(&a.config))?;
    let entries = read_manifest(&a.manifest)?;
    let mut data = Dataset::from_manifest(&entries)?;
    if a.speed_perturb {
        data = data.with_speed_perturbation()?;
    }
    let mut tc = TrainConfig::new(a.seed);
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    let mut aam = AamConfig::new(data.num_classes);
    if a.large_margin {
        LargeMargin::default().apply(&mut tc, &mut aam);
    }
    if let Some(m) = a.margin {
        aam.margin = m;
    }
    if let Some(c) = a.crop_secs {
        tc.crop_secs = c;
    }
    let dir = a.manifest.parent().unwrap_or(Path::new(""));
    if a.augment {
        let noise = a.noise_manifest.clone().unwrap_or_else(|| dir.join("noise.tsv"));
        let rir = a.rir_manifest.clone().unwrap_or_else(|| dir.join("rir.tsv"));
        tc.augment = Some(AugmentProfile::new(load_waves(&noise)?, load_waves(&rir)?));
    }
    let mut opt = OptimState::new(a.epochs);
    opt.lr_peak = a.lr;
    opt.warmup_epochs = a.warmup_epochs;

    let streams = SeedStreams::new(a.seed);
    let mut model = ERes2NetV2::new(&cfg, &mut streams.stream("init"))?;
    if let Some(init) = &a.init {
        load_state_dict(&mut model, &Checkpoint::load(init)?, "", &["head."])?;
    }
    let head = AamHead::new(data.num_classes, cfg.embedding_dim, &mut streams.stream("head"))?;
    let mut trainer = Trainer::new(model, head, opt, aam)?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let config_path = a.out.join(CONFIG_FILE);
    write_file(&config_path, cfg.to_string())?;
    let mut outputs = vec![config_path];
    let history = trainer.train_epochs(&data, &tc, &mut |epoch, t| {
        let path = a.out.join(format!("epoch{:03}.ckpt", epoch + 1));
        t.checkpoint().save(&path)?;
        eprintln!("epoch {} done after {} steps", epoch + 1, t.step);
        outputs.push(path);
        Ok(())
    })?;
    let loss_path = a.out.join("loss.csv");
    write_file(&loss_path, history.to_csv())?;
    outputs.push(loss_path);
    for (e, m) in history.epoch_means().iter().enumerate() {
        println!("epoch {} mean loss {m:.4}", e + 1);
    }
    let mut manifest = RunManifest::new("train").config(&a.config).seed(a.seed).input(&a.manifest);
    if let Some(init) = &a.init {
        manifest = manifest.input(init);
    }
    manifest.finish(&outputs)
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let (config, cfg) = resolve_config(a.config.as_deref(), &a.checkpoint)?;
    let model = load_model(&cfg, &a.checkpoint)?;
    let items = load_audio(&a.wav_list)?;
    let embeddings = eres2net::eval::extract_all(&model, &items)?;
    write_archive(&a.out, &embeddings)?;
    println!("{} embeddings written to {}", embeddings.len(), a.out.display());
    RunManifest::new("extract")
        .config(&config)
        .input(&a.checkpoint)
        .input(&a.wav_list)
        .finish(&[a.out.clone()])
}

fn archive_scores(embeddings: &Path, trials: &Path) -> Result<Vec<eres2net::eval::ScoreRecord>> {
    let emb = read_archive(embeddings)?;
    let trials = parse_trials(trials)?;
    score_trials(&trials, &archive::index(&emb))
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let scores = archive_scores(&a.embeddings, &a.trials)?;
    write_file(&a.out, format_scores(&scores))?;
    RunManifest::new("score")
        .input(&a.embeddings)
        .input(&a.trials)
        .finish(&[a.out.clone()])
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let dcf = DcfParams {
        p_target: a.p_target,
        ..DcfParams::default()
    };
    dcf.validate()?;
    let mut manifest = RunManifest::new("eval").seed(a.seed).input(&a.embeddings).input(&a.trials);
    let (scores, report) = match a.duration.seconds() {
        None => {
            let scores = archive_scores(&a.embeddings, &a.trials)?;
            let report = EvalReport::from_scores(&scores, &dcf)?;
            (scores, report)
        }
        Some(secs) => {
            let (Some(ck), Some(list)) = (&a.checkpoint, &a.wav_list) else {
                return Err(Error::config(
                    "truncated durations need --checkpoint and --wav-list to re-embed cropped audio",
                ));
            };
            let (config, cfg) = resolve_config(a.config.as_deref(), ck)?;
            let model = load_model(&cfg, ck)?;
            let audio: HashMap<String, Waveform> = load_audio(list)?.into_iter().collect();
            let trials = parse_trials(&a.trials)?;
            manifest = manifest.config(&config).input(ck).input(list);
            truncated_eval(&model, &audio, &trials, Some(secs), a.seed, &dcf)?
        }
    };
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| a.embeddings.parent().unwrap_or(Path::new("")).to_path_buf());
    let tag = match a.duration.seconds() {
        None => a.duration.tag().to_string(),
        Some(_) => format!("{}_seed{}", a.duration.tag(), a.seed),
    };
    let outputs = [
        (out_dir.join(format!("scores_{tag}.txt")), format_scores(&scores)),
        (out_dir.join(format!("metrics_{tag}.csv")), report.metrics_csv()),
        (out_dir.join(format!("det_{tag}.csv")), report.det_csv()),
    ];
    for (path, text) in &outputs {
        write_file(path, text)?;
    }
    println!("{}", report.summary_line());
    manifest.finish(&outputs.map(|(p, _)| p))
}

pub fn profile(a: &ProfileArgs) -> Result<()> {
    let cfg = ModelConfig::load(Path::new(&a.config))?;
    let report = profile_config(&cfg, a.frames, a.convention)?;
    let reduction = match &a.compare {
        Some(other) => {
            let base = profile_config(&ModelConfig::load(Path::new(other))?, a.frames, a.convention)?;
            Some((other.as_str(), reduction_check(&base, &report)?))
        }
        None => None,
    };
    let text = match a.format {
        ReportFormat::Csv => {
            let mut s = report.to_csv();
            if let Some((other, (p, f))) = reduction {
                s.push_str(&format!("reduction_pct_vs:{other},{p:.1},{f:.1}\n"));
            }
            s
        }
        ReportFormat::Json => {
            let mut v: serde_json::Value = serde_json::from_str(&report.to_json()).expect("report is valid JSON");
            if let Some((other, (p, f))) = reduction {
                v["reduction"] = serde_json::json!({ "against": other, "params_pct": p, "flops_pct": f });
            }
            serde_json::to_string_pretty(&v).expect("serializes") + "\n"
        }
    };
    match &a.out {
        Some(path) => {
            write_file(path, &text)?;
            let mut m = RunManifest::new("profile").config(&a.config);
            if let Some(other) = &a.compare {
                m.inputs.push(PathBuf::from(other));
            }
            m.finish(&[path.clone()])?;
        }
        None => print!("{text}"),
    }
    if let Some((other, (p, f))) = reduction {
        eprintln!("reduction vs {other}: params {p:.1}%, flops {f:.1}%");
    }
    Ok(())
}

pub fn synth_corpus(a: &SynthArgs) -> Result<()> {
    let mut spec = CorpusSpec::new(a.speakers, a.utts_per_speaker, a.seconds, a.seed);
    if let Some(h) = a.heldout {
        spec.heldout_per_speaker = h;
    }
    let layout = write_corpus(&spec, &a.out)?;
    println!(
        "{} utterances from {} speakers written to {}",
        a.speakers * a.utts_per_speaker,
        a.speakers,
        layout.root.display()
    );
    RunManifest::new("synth-corpus").seed(a.seed).finish(&[layout.root])
}

pub fn dump_fbank(a: &DumpFbankArgs) -> Result<()> {
    let feats: FeatureMatrix = eres2net::audio::fbank(&load_wav(&a.wav)?)?;
    feats.write_dump(&a.out)?;
    println!("{} frames x {} bins", feats.frames(), feats.bins());
    RunManifest::new("dump-fbank").input(&a.wav).finish(&[a.out.clone()])
}
