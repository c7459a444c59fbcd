use std::path::{Path, PathBuf};

use byola_core::augment::{make_view_batch, NormStats};
use byola_core::byol::{output_paths, pretrain as run_pretrain};
use byola_core::data::{compute_corpus_stats, load_corpus, synth_dataset, CorpusStats, Manifest, Reject, SplitScheme, SynthSpec};
use byola_core::encoder::TemporalPooling;
use byola_core::eval::{extract as run_extract, train_probe, EmbeddingTable, ExtractOptions};
use byola_core::tensor::tnsr;
use byola_core::{Error, Real, Result, RunConfig, Spectrogram, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_stats(path: &Path) -> Result<CorpusStats> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn warn_rejects(rejects: &[Reject]) {
    for r in rejects {
        log::warn!("rejected {}: {}", r.path, r.reason);
    }
}

fn log_determinism(cfg: &RunConfig) {
    if cfg.deterministic {
        log::info!("deterministic mode: single worker");
    }
}

pub fn synth(
    out: &Path,
    spec_path: Option<&Path>,
    clips_per_class: Option<usize>,
    duration: Option<f64>,
    folds: Option<u32>,
    seed: Option<u64>,
) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::two_tones(42),
    };
    if let Some(n) = clips_per_class {
        spec.clips_per_class = n;
    }
    if let Some(d) = duration {
        spec.duration_secs = d;
    }
    if let Some(k) = folds {
        spec.split = SplitScheme::Folds { k };
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = synth_dataset(&spec, out)?;
    eprintln!("wrote {} clips to {}", manifest.rows.len(), out.display());
    Ok(())
}

fn corpus(cfg: &RunConfig, manifest_path: &Path, min_frames: usize) -> Result<Vec<Spectrogram<f32>>> {
    let manifest = Manifest::load(manifest_path, None)?;
    let (specs, rejects) = load_corpus::<f32>(&manifest, &cfg.frontend(), min_frames);
    warn_rejects(&rejects);
    if specs.is_empty() {
        return Err(Error::Data(format!("no readable clips in {}", manifest_path.display())));
    }
    Ok(specs.into_iter().map(|(_, s)| s).collect())
}

pub fn stats(cfg: &RunConfig, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let specs = corpus(cfg, manifest, 1)?;
    let s = compute_corpus_stats(&specs)?;
    let json = serde_json::to_string_pretty(&s)? + "\n";
    match out {
        Some(p) => write_file(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn pretrain(cfg: &RunConfig, manifest: &Path, out: &Path, stats_path: Option<&Path>) -> Result<()> {
    log_determinism(cfg);
    let pcfg = cfg.pretrain()?;
    let specs = corpus(cfg, manifest, pcfg.frames)?;
    let stats = match stats_path {
        Some(p) => read_stats(p)?,
        None => compute_corpus_stats(&specs)?,
    };
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(&out.join("stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    let result = run_pretrain(&specs, stats.norm(), &pcfg, Some(out))?;
    let (ckpt, log_path) = output_paths(out);
    match result.log.last() {
        Some(last) => eprintln!("{} steps, final loss {:.6}", last.step, last.loss),
        None => eprintln!("no optimizer steps taken"),
    }
    eprintln!("checkpoint {} log {}", ckpt.display(), log_path.display());
    Ok(())
}

pub fn rejects_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".rejects.csv");
    out.with_file_name(name)
}

pub fn extract(
    checkpoint: &Path,
    manifest_path: &Path,
    out: &Path,
    pooling: Option<TemporalPooling>,
    batch_size: usize,
) -> Result<()> {
    let manifest = Manifest::load(manifest_path, None)?;
    let opts = ExtractOptions { pooling, batch_size };
    let (table, rejects) = run_extract(checkpoint, &manifest, &opts)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    table.save(out)?;
    let rp = rejects_path(out);
    if rejects.is_empty() {
        let _ = std::fs::remove_file(&rp);
    } else {
        warn_rejects(&rejects);
        let mut w = csv::Writer::from_path(&rp)?;
        w.write_record(["path", "reason"])?;
        for r in &rejects {
            w.write_record([&r.path, &r.reason])?;
        }
        w.flush().map_err(|e| Error::Io { path: rp.clone(), source: e })?;
    }
    eprintln!("{} embeddings of dimension {}, {} rejected", table.len(), table.dim, rejects.len());
    Ok(())
}

pub fn probe(cfg: &RunConfig, embeddings: &Path, out: Option<&Path>) -> Result<()> {
    log_determinism(cfg);
    let table = EmbeddingTable::load(embeddings)?;
    let result = train_probe(&table, &cfg.probe())?;
    let report = &result.report;
    for m in &report.metrics {
        eprintln!("{} {:.4} ± {:.4} over {} runs", m.name, m.mean, m.ci95, m.runs.len());
    }
    let json = serde_json::to_string_pretty(report)? + "\n";
    match out {
        Some(p) => write_file(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

/// Views for the `[F, T]` entries of a TNSR file, written as `<name>.v1`
/// and `<name>.v2` in input order.
pub fn augment_entries<T: Real>(
    cfg: &RunConfig,
    entries: &[(String, Tensor<T>)],
    norm: Option<NormStats>,
) -> Result<Vec<(String, Tensor<T>)>> {
    let specs = entries
        .iter()
        .map(|(name, t)| {
            if t.rank() != 2 {
                return Err(Error::Data(format!("entry `{name}` must be [F, T], got {:?}", t.shape())));
            }
            Spectrogram::from_tensor(t)
        })
        .collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(Error::Data("input holds no spectrograms".into()));
    }
    let norm = match norm {
        Some(n) => n,
        None => compute_corpus_stats(&specs)?.norm(),
    };
    let acfg = cfg.augment()?;
    let mut queue = acfg.new_queue::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v1, v2) = make_view_batch(&specs, &norm, &acfg, &mut queue, &mut rng)?;
    let mut out = Vec::with_capacity(2 * specs.len());
    for (((name, _), a), b) in entries.iter().zip(v1).zip(v2) {
        out.push((format!("{name}.v1"), a.to_tensor()));
        out.push((format!("{name}.v2"), b.to_tensor()));
    }
    Ok(out)
}

/// With `double`, views are computed in `f64` and narrowed on write.
pub fn augment(cfg: &RunConfig, input: &Path, out: &Path, stats_path: Option<&Path>, double: bool) -> Result<()> {
    let norm = stats_path.map(read_stats).transpose()?.map(|s| s.norm());
    if double {
        tnsr::save(out, &augment_entries(cfg, &tnsr::load::<f64>(input)?, norm)?)
    } else {
        tnsr::save(out, &augment_entries(cfg, &tnsr::load::<f32>(input)?, norm)?)
    }
}
