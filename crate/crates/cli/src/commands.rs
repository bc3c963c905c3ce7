use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use minvae_core::data::{
    evaluate, generate_toy_corpus, Bypass, Enhancer, OracleWiener, ScoreReport, VemEnhancer,
};
use minvae_core::dsp::{default_hop, window_len_for_bins};
use minvae_core::enhance::enhance_utterance;
use minvae_core::gradcheck::run_suites;
use minvae_core::io::{
    read_array, read_checkpoint, read_train_state, read_wav, write_checkpoint, write_train_state,
    write_wav,
};
use minvae_core::nn::stream_id;
use minvae_core::train::{init_from_pretrained, train, TrainError, TrainingLog};
use minvae_core::{Error, MinVae, Rng};

use crate::config::RunConfig;
use crate::corpus::{write_corpus, CorpusDir};
use crate::error::CliError;

const STREAM_INIT: u64 = 0x49;

pub const CHECKPOINT: &str = "model.ckpt";
pub const PARTIAL_CHECKPOINT: &str = "model.partial.ckpt";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const ENHANCED: &str = "enhanced.wav";
pub const DIAGNOSTICS: &str = "diagnostics.tsv";
pub const SCORES: &str = "scores.tsv";
pub const SUMMARY: &str = "summary.tsv";
pub const GRADCHECK: &str = "gradcheck.tsv";

/// Checkpoint path plus `.optim`.
pub fn optim_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".optim");
    PathBuf::from(s)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.require_path("out")?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn check_variant(cfg: &RunConfig, model: &MinVae) -> Result<(), CliError> {
    if cfg.is_explicit("variant") {
        let wanted = cfg.variant()?;
        if wanted != model.variant {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds a {} model but variant={wanted} was requested",
                model.variant
            ))
            .into());
        }
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.corpus_spec()?;
    let n_test: usize = cfg.get("n_test")?;
    let snr = cfg.snr_levels()?;
    let out = out_dir(cfg)?;
    let corpus = generate_toy_corpus(&spec)?;
    let manifest = write_corpus(&out, &corpus, n_test, &snr, spec.seed)?;
    println!(
        "wrote {} utterances ({} test) and {} files to {}",
        spec.n_utterances,
        n_test,
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

fn pretrained_init(
    cfg: &RunConfig,
    dims: minvae_core::ModelDims,
    rng: &mut Rng,
) -> Result<Option<MinVae>, CliError> {
    let paths = [
        cfg.path("init_audio"),
        cfg.path("init_visual"),
        cfg.path("init_decoder"),
    ];
    match paths {
        [None, None, None] => Ok(None),
        [Some(a), Some(v), Some(d)] => {
            let load = |p: &Path| -> Result<MinVae, CliError> {
                if !p.exists() {
                    return Err(CliError::io(
                        format!("pretrained checkpoint {}", p.display()),
                        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                    ));
                }
                Ok(read_checkpoint(p)?)
            };
            let (a, v, d) = (load(&a)?, load(&v)?, load(&d)?);
            Ok(Some(init_from_pretrained(
                cfg.variant()?,
                dims,
                &a,
                &v,
                &d,
                rng,
            )?))
        }
        _ => Err(CliError::Usage(
            "init_audio, init_visual and init_decoder must be given together".into(),
        )),
    }
}

fn finish_log(
    cfg: &RunConfig,
    mut prefix: TrainingLog,
    log: TrainingLog,
) -> Result<TrainingLog, CliError> {
    prefix.epochs.extend(log.epochs);
    if !cfg.flag("log_wall_time")? {
        for e in &mut prefix.epochs {
            e.wall_seconds = 0.0;
        }
    }
    Ok(prefix)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let variant = cfg.variant()?;
    let tc = cfg.train_config()?;
    let corpus_path = cfg.existing_path("corpus")?;
    let resume = match cfg.path("checkpoint") {
        Some(p) => {
            let ckpt = cfg.existing_path("checkpoint")?;
            let optim = optim_path(&p);
            if !optim.exists() {
                return Err(CliError::io(
                    format!("optimiser state {}", optim.display()),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                ));
            }
            Some((ckpt, optim))
        }
        None => None,
    };
    let out = out_dir(cfg)?;
    let corpus = CorpusDir::open(&corpus_path)?;
    let set = corpus.training_set()?;

    let (model, state, prefix) = match resume {
        Some((ckpt, optim)) => {
            let model = read_checkpoint(&ckpt)?;
            check_variant(cfg, &model)?;
            let state = read_train_state(&optim)?;
            let log_path = ckpt.parent().unwrap_or(Path::new(".")).join(TRAIN_LOG);
            let mut prefix = if log_path.exists() {
                let text = fs::read_to_string(&log_path)
                    .map_err(|e| CliError::io(format!("reading {}", log_path.display()), e))?;
                TrainingLog::from_tsv(&text)?
            } else {
                TrainingLog::default()
            };
            prefix.epochs.retain(|e| e.epoch < state.next_epoch);
            (model, Some(state), prefix)
        }
        None => {
            let visual = set.visual.as_ref().map_or(1, |v| v.ncols());
            let dims = cfg.model_dims(set.frames.ncols(), visual)?;
            let mut rng = Rng::stream(cfg.seed()?, stream_id(STREAM_INIT, 0));
            let model = match pretrained_init(cfg, dims, &mut rng)? {
                Some(m) => m,
                None => MinVae::new(variant, dims, &mut rng)?,
            };
            (model, None, TrainingLog::default())
        }
    };

    let ckpt = out.join(CHECKPOINT);
    match train(model, &set, &tc, state) {
        Ok(o) => {
            write_checkpoint(&ckpt, &o.model)?;
            write_train_state(&optim_path(&ckpt), &o.state)?;
            let log = finish_log(cfg, prefix, o.log)?;
            write_text(&out.join(TRAIN_LOG), &log.to_tsv())?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "trained {} for {} epochs: loss {:.4}, pi {:.4}",
                    o.model.variant,
                    log.epochs.len(),
                    last.mean_loss,
                    last.pi
                );
            }
            Ok(())
        }
        Err(TrainError::Core(e)) => Err(e.into()),
        Err(d @ TrainError::Diverged { .. }) => {
            let msg = d.to_string();
            if let TrainError::Diverged {
                last_good,
                log,
                state,
                ..
            } = d
            {
                let partial = out.join(PARTIAL_CHECKPOINT);
                write_checkpoint(&partial, &last_good)?;
                write_train_state(&optim_path(&partial), &state)?;
                let log = finish_log(cfg, prefix, log)?;
                write_text(&out.join(TRAIN_LOG), &log.to_tsv())?;
                eprintln!("partial checkpoint written to {}", partial.display());
            }
            Err(Error::Numerical(msg).into())
        }
    }
}

pub fn enhance_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.variant()?;
    let ecfg = cfg.enhance_config()?;
    let ckpt = cfg.existing_path("checkpoint")?;
    let input = cfg.existing_path("input")?;
    let model = read_checkpoint(&ckpt)?;
    check_variant(cfg, &model)?;
    let visual = if model.variant.needs_visual() {
        if cfg.path("visual_features").is_none() {
            return Err(CliError::Usage(format!(
                "a {} model needs visual_features",
                model.variant
            )));
        }
        Some(read_array(&cfg.existing_path("visual_features")?)?.into_real()?)
    } else {
        None
    };
    let out = out_dir(cfg)?;
    let noisy = read_wav(&input)?;
    let (wave, result) =
        enhance_utterance(&model, &noisy, visual.as_ref().map(|v| v.view()), &ecfg)?;
    write_wav(&out.join(ENHANCED), &wave)?;
    write_text(&out.join(DIAGNOSTICS), &result.diagnostics.to_tsv())?;
    println!(
        "enhanced {} samples over {} VEM iterations, final pi {:.4}",
        wave.len(),
        ecfg.vem_iters,
        result.pi
    );
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.variant()?;
    let ecfg = cfg.enhance_config()?;
    let ckpt = cfg.existing_path("checkpoint")?;
    let corpus_path = cfg.existing_path("corpus")?;
    let model = read_checkpoint(&ckpt)?;
    check_variant(cfg, &model)?;
    let out = out_dir(cfg)?;
    let mixtures = CorpusDir::open(&corpus_path)?.mixtures()?;

    let window_len = window_len_for_bins(model.dims.freq_bins);
    let oracle = OracleWiener {
        window_len,
        hop: default_hop(window_len),
    };
    let vem = VemEnhancer {
        model: &model,
        config: ecfg,
    };
    let enhancers: [&dyn Enhancer; 3] = [&Bypass, &oracle, &vem];
    let mut summary = format!("method\t{}\n", ScoreReport::AGGREGATE_HEADER);
    let mut vem_report = None;
    for e in enhancers {
        let report = evaluate(e, &mixtures)?;
        for a in report.aggregates() {
            let _ = writeln!(
                summary,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.name(),
                a.snr_db,
                a.count,
                a.mean_in,
                a.mean_out,
                a.mean_delta
            );
        }
        vem_report = Some(report);
    }
    let report = vem_report.expect("three enhancers ran");
    write_text(&out.join(SCORES), &report.to_tsv())?;
    write_text(&out.join(SUMMARY), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let suites = cfg.suites()?;
    let gc = cfg.gradcheck_config()?;
    let out = match cfg.path("out") {
        Some(_) => Some(out_dir(cfg)?),
        None => None,
    };
    let reports = run_suites(&suites, &gc)?;
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "{r}");
    }
    print!("{text}");
    if let Some(dir) = out {
        write_text(&dir.join(GRADCHECK), &text)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} gradient suites failed",
            reports.len()
        )));
    }
    Ok(())
}
