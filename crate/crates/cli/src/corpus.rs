//! On-disk layout of a synthetic corpus: one directory holding WAV and array
//! files plus a checksummed `manifest.tsv` that indexes them.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};

use minvae_core::data::{make_mixtures, Mixture, ToyCorpus};
use minvae_core::dsp::ComplexSpectrogram;
use minvae_core::io::{read_wav, sha256_hex, write_wav, ArrayFile, Manifest, ManifestEntry};
use minvae_core::train::TrainingSet;
use minvae_core::Error;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.tsv";

pub const ROLE_TRAIN: &str = "train";
pub const ROLE_TEST: &str = "test";

struct Writer<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl Writer<'_> {
    fn put(
        &mut self,
        id: &str,
        role: &str,
        kind: &str,
        snr: &str,
        name: String,
        bytes: &[u8],
    ) -> Result<(), CliError> {
        let path = self.dir.join(&name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.manifest.entries.push(ManifestEntry {
            id: id.into(),
            role: role.into(),
            kind: kind.into(),
            snr_db: snr.into(),
            path: name,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn array(
        &mut self,
        id: &str,
        role: &str,
        kind: &str,
        snr: &str,
        name: String,
        a: &ArrayFile,
    ) -> Result<(), CliError> {
        self.put(id, role, kind, snr, name, &a.encode()?)
    }

    fn wav(
        &mut self,
        id: &str,
        role: &str,
        kind: &str,
        snr: &str,
        name: String,
        w: &minvae_core::dsp::Waveform,
    ) -> Result<(), CliError> {
        let path = self.dir.join(&name);
        write_wav(&path, w)?;
        let bytes = fs::read(&path)
            .map_err(|e| CliError::io(format!("reading back {}", path.display()), e))?;
        self.manifest.entries.push(ManifestEntry {
            id: id.into(),
            role: role.into(),
            kind: kind.into(),
            snr_db: snr.into(),
            path: name,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }
}

pub fn spectrogram_file(s: &ComplexSpectrogram) -> ArrayFile {
    let mut f = ArrayFile::complex(s.frames.clone())
        .with_meta("window_len", s.window_len)
        .with_meta("hop", s.hop)
        .with_meta("sample_rate", s.sample_rate);
    if let Some(n) = s.original_len {
        f = f.with_meta("original_len", n);
    }
    f
}

fn row(values: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    Array2::from_shape_vec((1, v.len()), v).expect("one row")
}

/// Writes every utterance, the test mixtures, and the ground truth, then the
/// manifest. The last `n_test` utterances form the test split.
pub fn write_corpus(
    dir: &Path,
    corpus: &ToyCorpus,
    n_test: usize,
    snr_levels: &[f64],
    seed: u64,
) -> Result<Manifest, CliError> {
    let n = corpus.utterances.len();
    if n_test >= n {
        return Err(CliError::Usage(format!(
            "n_test={n_test} leaves no training utterances out of {n}"
        )));
    }
    let mut w = Writer {
        dir,
        manifest: Manifest::default(),
    };
    let t = &corpus.truth;
    let priors = ArrayFile::real(
        concatenate(
            Axis(0),
            &[
                row(t.mu_a.iter().copied()).view(),
                row(t.mu_v.iter().copied()).view(),
            ],
        )
        .expect("equal widths"),
    )
    .with_meta("sigma_a", t.sigma_a)
    .with_meta("sigma_v", t.sigma_v)
    .with_meta("pi", t.pi);
    w.array(
        "-",
        "-",
        "truth_priors",
        "-",
        "truth.priors.arr".into(),
        &priors,
    )?;
    w.array(
        "-",
        "-",
        "truth_a",
        "-",
        "truth.a.arr".into(),
        &ArrayFile::real(t.a.clone()),
    )?;
    w.array(
        "-",
        "-",
        "truth_b",
        "-",
        "truth.b.arr".into(),
        &ArrayFile::real(row(t.b.iter().copied())),
    )?;
    w.array(
        "-",
        "-",
        "truth_c",
        "-",
        "truth.c.arr".into(),
        &ArrayFile::real(t.c.clone()),
    )?;

    for (i, u) in corpus.utterances.iter().enumerate() {
        let role = if i + n_test >= n {
            ROLE_TEST
        } else {
            ROLE_TRAIN
        };
        let id = u.id.as_str();
        w.wav(
            id,
            role,
            "clean_wav",
            "-",
            format!("{id}.clean.wav"),
            &u.clean,
        )?;
        w.array(
            id,
            role,
            "spectrogram",
            "-",
            format!("{id}.spec.arr"),
            &spectrogram_file(&u.spectrogram),
        )?;
        w.array(
            id,
            role,
            "visual",
            "-",
            format!("{id}.visual.arr"),
            &ArrayFile::real(u.visual.clone()),
        )?;
        w.array(
            id,
            role,
            "latent",
            "-",
            format!("{id}.z.arr"),
            &ArrayFile::real(u.z.clone()),
        )?;
        let alpha = row(u.alpha.iter().map(|&a| if a { 1.0 } else { 0.0 }));
        w.array(
            id,
            role,
            "alpha",
            "-",
            format!("{id}.alpha.arr"),
            &ArrayFile::real(alpha),
        )?;
        w.array(
            id,
            role,
            "oracle_variance",
            "-",
            format!("{id}.variance.arr"),
            &ArrayFile::real(u.oracle_variance.clone()),
        )?;
    }

    let test = &corpus.utterances[n - n_test..];
    if !test.is_empty() {
        for m in make_mixtures(test, snr_levels, seed)? {
            let snr = format!("{}", m.snr_db);
            let id = m.id.as_str();
            w.wav(
                id,
                ROLE_TEST,
                "noisy_wav",
                &snr,
                format!("{id}.snr{snr}.noisy.wav"),
                &m.noisy,
            )?;
            let nv = m
                .noise_sample_variance
                .expect("toy mixtures know their noise level");
            w.array(
                id,
                ROLE_TEST,
                "noise_variance",
                &snr,
                format!("{id}.snr{snr}.noisevar.arr"),
                &ArrayFile::real(row([nv])),
            )?;
        }
    }
    let manifest = w.manifest;
    manifest.write(&dir.join(MANIFEST))?;
    Ok(manifest)
}

fn join_rows<T: Clone>(parts: &[Array2<T>]) -> Result<Array2<T>, Error> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    concatenate(Axis(0), &views)
        .map_err(|e| Error::InvalidInput(format!("corpus arrays disagree in width: {e}")))
}

/// A corpus directory opened through its verified manifest.
pub struct CorpusDir<'a> {
    pub dir: &'a Path,
    pub manifest: Manifest,
}

impl<'a> CorpusDir<'a> {
    pub fn open(dir: &'a Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Err(CliError::io(
                format!("corpus manifest {}", path.display()),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        Ok(Self {
            dir,
            manifest: Manifest::read(&path)?,
        })
    }

    fn entry(&self, id: &str, kind: &str, snr: &str) -> Result<&ManifestEntry, CliError> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.id == id && e.kind == kind && e.snr_db == snr)
            .ok_or_else(|| {
                Error::InvalidInput(format!("manifest has no {kind} for {id} at snr {snr}")).into()
            })
    }

    fn array(&self, e: &ManifestEntry) -> Result<ArrayFile, CliError> {
        Ok(ArrayFile::decode(&self.manifest.load(self.dir, e)?)?)
    }

    fn wav(&self, e: &ManifestEntry) -> Result<minvae_core::dsp::Waveform, CliError> {
        self.manifest.load(self.dir, e)?;
        Ok(read_wav(&self.dir.join(&e.path))?)
    }

    fn ids(&self, role: &str) -> Vec<String> {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.role == role && e.kind == "spectrogram")
            .map(|e| e.id.clone())
            .collect()
    }

    /// Pooled frames and visual features of the training split.
    pub fn training_set(&self) -> Result<TrainingSet, CliError> {
        let ids = self.ids(ROLE_TRAIN);
        if ids.is_empty() {
            return Err(Error::InvalidInput("corpus has no training utterances".into()).into());
        }
        let mut frames = Vec::with_capacity(ids.len());
        let mut visual = Vec::with_capacity(ids.len());
        for id in &ids {
            frames.push(
                self.array(self.entry(id, "spectrogram", "-")?)?
                    .into_complex()?,
            );
            visual.push(self.array(self.entry(id, "visual", "-")?)?.into_real()?);
        }
        Ok(TrainingSet::new(
            join_rows(&frames)?,
            Some(join_rows(&visual)?),
        )?)
    }

    /// Every noisy test mixture with its references.
    pub fn mixtures(&self) -> Result<Vec<Mixture>, CliError> {
        let mut out = Vec::new();
        for e in self
            .manifest
            .entries
            .iter()
            .filter(|e| e.kind == "noisy_wav")
        {
            let snr_db: f64 = e.snr_db.parse().map_err(|_| {
                Error::InvalidInput(format!("bad snr tag {:?} in manifest", e.snr_db))
            })?;
            let noise = self
                .array(self.entry(&e.id, "noise_variance", &e.snr_db)?)?
                .into_real()?;
            out.push(Mixture {
                id: e.id.clone(),
                snr_db,
                clean: self.wav(self.entry(&e.id, "clean_wav", "-")?)?,
                noisy: self.wav(e)?,
                visual: Some(self.array(self.entry(&e.id, "visual", "-")?)?.into_real()?),
                speech_variance: Some(
                    self.array(self.entry(&e.id, "oracle_variance", "-")?)?
                        .into_real()?,
                ),
                noise_sample_variance: noise.iter().next().copied(),
            });
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("corpus has no test mixtures".into()).into());
        }
        Ok(out)
    }
}
