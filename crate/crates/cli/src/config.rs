use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use minvae_core::data::ToyCorpusSpec;
use minvae_core::enhance::{EnhanceConfig, LatentInit};
use minvae_core::gradcheck::{GradcheckConfig, Suite};
use minvae_core::train::{NoiseInjection, TrainConfig};
use minvae_core::{ModelDims, Variant};

use crate::error::CliError;

/// Every accepted key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "root seed for every random stream"),
    (
        "variant",
        "min-v2",
        "a-vae, v-vae, av-vae, min-v1, min-v2 or min-v3",
    ),
    ("checkpoint", "", "model checkpoint to read"),
    ("out", "", "output directory"),
    ("corpus", "", "corpus directory written by synth"),
    ("n_utterances", "50", "toy corpus size"),
    (
        "frames_per_utterance",
        "200",
        "STFT frames per toy utterance",
    ),
    ("freq_bins", "64", "frequency bins F"),
    ("latent", "8", "latent dimension L"),
    ("visual", "8", "visual feature dimension M"),
    (
        "visual_informativeness",
        "1",
        "0 makes visual features independent of the latents",
    ),
    ("n_test", "20", "utterances held out as the test split"),
    ("snr_levels", "0", "comma-separated mixture SNRs in dB"),
    ("hidden", "128", "hidden layer width"),
    ("nmf_rank", "10", "noise NMF rank K"),
    ("epochs", "100", "training epochs"),
    ("batch_size", "128", "minibatch size"),
    ("learning_rate", "1e-4", "Adam step size"),
    (
        "noise_injection",
        "false",
        "perturb a subset of audio-encoder inputs",
    ),
    (
        "injection_fraction",
        "0.3333333333333333",
        "fraction of frames perturbed",
    ),
    ("injection_snr_db", "0", "SNR of the injected noise"),
    (
        "log_wall_time",
        "false",
        "record wall-clock seconds in the training log",
    ),
    (
        "init_audio",
        "",
        "pretrained model providing the audio encoder",
    ),
    (
        "init_visual",
        "",
        "pretrained model providing the visual encoder",
    ),
    ("init_decoder", "", "pretrained model providing the decoder"),
    ("vem_iters", "100", "variational EM iterations"),
    (
        "mh_total",
        "40",
        "Metropolis-Hastings steps per VEM iteration",
    ),
    ("mh_burnin", "30", "discarded Metropolis-Hastings steps"),
    ("epsilon", "0.01", "random-walk proposal variance"),
    ("init_pi", "0.5", "starting test-time pi"),
    ("latent_init", "visual", "visual or noisy-audio"),
    ("input", "", "noisy WAV to enhance"),
    ("visual_features", "", "visual feature array for enhance"),
    ("suites", "all", "comma-separated gradcheck suites"),
    ("tolerance", "1e-4", "gradcheck relative-error bound"),
    (
        "sabotage",
        "false",
        "corrupt a cached weight during gradcheck",
    ),
];

/// Merged `key=value` settings: defaults, then the config file, then flags.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !is_known(key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies a config file: one `key=value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{origin}:{}: expected key=value, got {raw:?}",
                    i + 1
                ))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading config {}", path.display()), e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("key listed in KEYS")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| CliError::Usage(format!("{key}={:?}: {e}", self.raw(key))))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::Usage(format!(
                "{key}={v:?}: expected true or false"
            ))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("{key} must be set (--{key} PATH)")))
    }

    /// Like [`Self::require_path`], and the path must already exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = self.require_path(key)?;
        if !p.exists() {
            return Err(CliError::io(
                format!("{key} {}", p.display()),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.raw("variant")
            .parse()
            .map_err(|e: minvae_core::Error| CliError::Usage(e.to_string()))
    }

    pub fn snr_levels(&self) -> Result<Vec<f64>, CliError> {
        self.raw("snr_levels")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::Usage(format!("snr_levels entry {s:?}: {e}")))
            })
            .collect()
    }

    pub fn corpus_spec(&self) -> Result<ToyCorpusSpec, CliError> {
        let spec = ToyCorpusSpec {
            n_utterances: self.get("n_utterances")?,
            frames_per_utterance: self.get("frames_per_utterance")?,
            freq_bins: self.get("freq_bins")?,
            latent: self.get("latent")?,
            visual: self.get("visual")?,
            visual_informativeness: self.get("visual_informativeness")?,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_dims(&self, freq_bins: usize, visual: usize) -> Result<ModelDims, CliError> {
        let dims = ModelDims {
            freq_bins,
            latent: self.get("latent")?,
            visual,
            nmf_rank: self.get("nmf_rank")?,
            hidden: self.get("hidden")?,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            learning_rate: self.get("learning_rate")?,
            noise_injection: NoiseInjection {
                enabled: self.flag("noise_injection")?,
                fraction: self.get("injection_fraction")?,
                snr_db: self.get("injection_snr_db")?,
            },
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn enhance_config(&self) -> Result<EnhanceConfig, CliError> {
        let latent_init = match self.raw("latent_init") {
            "visual" => LatentInit::Visual,
            "noisy-audio" => LatentInit::NoisyAudio,
            v => {
                return Err(CliError::Usage(format!(
                    "latent_init={v:?}: expected visual or noisy-audio"
                )))
            }
        };
        let cfg = EnhanceConfig {
            vem_iters: self.get("vem_iters")?,
            mh_total: self.get("mh_total")?,
            mh_burnin: self.get("mh_burnin")?,
            epsilon: self.get("epsilon")?,
            seed: self.seed()?,
            init_pi: self.get("init_pi")?,
            latent_init,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn suites(&self) -> Result<Vec<Suite>, CliError> {
        let raw = self.raw("suites").trim();
        if raw == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        if raw.is_empty() {
            return Err(CliError::Usage("no gradcheck suites selected".into()));
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e: minvae_core::Error| CliError::Usage(e.to_string()))
            })
            .collect()
    }

    pub fn gradcheck_config(&self) -> Result<GradcheckConfig, CliError> {
        Ok(GradcheckConfig {
            tolerance: self.get("tolerance")?,
            seed: self.seed()?,
            sabotage: self.flag("sabotage")?,
            ..GradcheckConfig::default()
        })
    }
}
