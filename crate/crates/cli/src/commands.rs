//! The four subcommands. Each writes only under its output directory.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tcm_core::autodiff::{load_checkpoint, save_checkpoint};
use tcm_core::encoder::{Encoder, EncoderConfig};
use tcm_core::experiments::{
    class_number_sweep, description_sweep, mode_spread, run_protocol_detailed, run_seed, Method,
    RunResult, SeedRun, TrainedModel,
};
use tcm_core::objective::{Classifier, LabelSet, MappingMode, TcmHyper, TcmModel};
use tcm_core::text::{
    generate_synthetic, save_jsonl, LabelDescription, LabelMapping, SyntheticConfig, Vocab,
};
use tcm_core::{Error, Result};

use crate::config::{Protocol, Validated};

/// Marks files written by `train` so that `predict` can reject others.
const CHECKPOINT_FORMAT: &str = "tcm-model";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Creates the output directory and echoes the validated config into it.
fn prepare_output(v: &Validated) -> Result<()> {
    create_dir(&v.output_dir)?;
    let echo = toml::to_string(&v.config).map_err(|e| Error::Input(format!("config echo: {e}")))?;
    write(&v.output_dir.join("config.toml"), echo)
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data") + "\n"
}

/// History, confusion matrix and, for matching models, the label
/// similarity matrix of one seed.
fn write_seed_files(dir: &Path, run: &SeedRun, labels: &[String]) -> Result<()> {
    create_dir(dir)?;
    run.history.save_jsonl(&dir.join("history.jsonl"))?;
    let confusion =
        tcm_core::experiments::matrix_csv(labels, &run.result.confusion, |v| v.to_string());
    write(&dir.join("confusion.csv"), confusion)?;
    if let Some(report) = run.model.similarity_report()? {
        write(&dir.join("similarity.csv"), report.to_csv())?;
    }
    Ok(())
}

fn encoder_config(model: &TrainedModel) -> &EncoderConfig {
    match model {
        TrainedModel::Tcm(m) => m.encoder().config(),
        TrainedModel::Free(m) => m.encoder().config(),
        TrainedModel::TaskHead(m) => m.encoder().config(),
        TrainedModel::TwoEncoder(m) => m.input_encoder().config(),
    }
}

/// Mapping whose texts for `labels.mode()` are exactly the ones trained on,
/// so that predictions can be checked against the checkpoint.
fn resolved_mapping(original: &LabelMapping, labels: &LabelSet) -> Result<LabelMapping> {
    let entries = labels
        .names()
        .iter()
        .zip(labels.texts())
        .map(|(name, text)| {
            let mut desc = original
                .get(name)
                .cloned()
                .unwrap_or_else(|| LabelDescription {
                    name: name.clone(),
                    definition: None,
                    sample: None,
                });
            if labels.mode() == MappingMode::Sample {
                desc.sample = Some(text.clone());
            }
            (name.clone(), desc)
        })
        .collect();
    LabelMapping::new(entries)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    method: Method,
    encoder: EncoderConfig,
    hyper: TcmHyper,
    mode: MappingMode,
    labels: Vec<String>,
    label_fingerprint: String,
    vocab: Vec<String>,
}

/// Trains one seed and writes the checkpoint, history, test scores and the
/// label mapping the checkpoint was trained against.
pub fn train(v: &Validated, seed: u64) -> Result<()> {
    prepare_output(v)?;
    let method = v.config.method;
    let run = run_seed(method, &v.dataset, &v.protocol, seed)?;
    let out = &v.output_dir;
    let clf = run.model.classifier();
    let labels = clf.labels();
    write_seed_files(out, &run, labels.names())?;
    write(&out.join("metrics.json"), json_pretty(&run.result))?;
    write(
        &out.join("labels.json"),
        resolved_mapping(&v.dataset.mapping, labels)?.to_json(),
    )?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        method,
        encoder: encoder_config(&run.model).clone(),
        hyper: if method == Method::TcmNoreg {
            TcmHyper {
                alpha: 0.0,
                ..v.protocol.hyper
            }
        } else {
            v.protocol.hyper
        },
        mode: labels.mode(),
        labels: labels.names().to_vec(),
        label_fingerprint: format!("{:016x}", labels.fingerprint()),
        vocab: clf.vocab().tokens().to_vec(),
    };
    let header = serde_json::to_value(&header)?;
    save_checkpoint(&out.join("model.ckpt"), clf.store(), &header)?;
    eprintln!(
        "seed {seed}: test macro-F1 {:.4}, outputs in {}",
        run.result.scores.macro_f1,
        out.display()
    );
    Ok(())
}

fn write_run(dir: &Path, result: &RunResult, runs: &[SeedRun]) -> Result<()> {
    for run in runs {
        write_seed_files(
            &dir.join(format!("seed_{}", run.result.seed)),
            run,
            &result.labels,
        )?;
    }
    Ok(())
}

/// Runs the configured protocol over all seeds and writes `results.json`.
pub fn experiment(v: &Validated) -> Result<()> {
    prepare_output(v)?;
    let (data, cfg, seeds, out) = (&v.dataset, &v.protocol, &v.config.seeds, &v.output_dir);
    let doc = match v.config.protocol {
        Protocol::RunProtocol => {
            let (result, runs) = run_protocol_detailed(v.config.method, data, cfg, seeds)?;
            write_run(out, &result, &runs)?;
            json!({ "protocol": "run_protocol", "result": result })
        }
        Protocol::TcmVsTaskhead | Protocol::Methods => {
            let methods = if v.config.protocol == Protocol::Methods {
                v.config.sweep.methods.clone()
            } else {
                vec![Method::Tcm, Method::TaskHead]
            };
            let mut results = Vec::new();
            for m in methods {
                let (result, runs) = run_protocol_detailed(m, data, cfg, seeds)?;
                write_run(&out.join(m.as_str()), &result, &runs)?;
                results.push(result);
            }
            if v.config.protocol == Protocol::Methods {
                json!({ "protocol": "methods", "results": results })
            } else {
                let gap = results[0].mean.macro_f1 - results[1].mean.macro_f1;
                json!({ "protocol": "tcm_vs_taskhead", "tcm": results[0], "task_head": results[1], "gap": gap })
            }
        }
        Protocol::ClassNumberSweep => {
            let points = class_number_sweep(data, &v.config.sweep.class_counts, cfg, seeds)?;
            let gaps: Vec<_> = points
                .iter()
                .map(|p| json!({ "count": p.count, "gap": p.gap() }))
                .collect();
            json!({ "protocol": "class_number_sweep", "points": points, "gaps": gaps })
        }
        Protocol::DescriptionSweep => {
            let (modes, ks) = (&v.config.sweep.modes, &v.config.sweep.ks);
            let points = description_sweep(data, modes, ks, cfg, seeds)?;
            let spread: Vec<_> = ks
                .iter()
                .map(|&k| json!({ "k": k, "spread": mode_spread(&points, k) }))
                .collect();
            json!({ "protocol": "description_sweep", "points": points, "spread": spread })
        }
    };
    write(&out.join("results.json"), json_pretty(&doc))?;
    eprintln!("results in {}", out.join("results.json").display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    text: &'a str,
    label: &'a str,
    scores: serde_json::Map<String, serde_json::Value>,
}

/// Where `predict` reads its texts from.
pub enum Input {
    Text(String),
    File(PathBuf),
}

fn load_model(checkpoint: &Path, mapping: &Path) -> Result<TcmModel> {
    let ckpt = load_checkpoint(checkpoint)?;
    let header: CheckpointHeader = serde_json::from_value(ckpt.header).map_err(|e| {
        Error::Checkpoint(format!(
            "{}: unrecognized header: {e}",
            checkpoint.display()
        ))
    })?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    if !matches!(header.method, Method::Tcm | Method::TcmNoreg) {
        return Err(Error::Checkpoint(format!(
            "predict needs a tcm or tcm_noreg checkpoint, this one is {}",
            header.method
        )));
    }
    let mapping = LabelMapping::load(mapping)?;
    let labels = LabelSet::from_mapping(&mapping, header.mode, None)?;
    let expected = u64::from_str_radix(&header.label_fingerprint, 16)
        .map_err(|_| Error::Checkpoint("bad label fingerprint".into()))?;
    if labels.fingerprint() != expected {
        return Err(Error::StaleCache {
            expected,
            actual: labels.fingerprint(),
        });
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    let (encoder, mut store) = Encoder::new(&header.encoder)?;
    store.load_values(ckpt.entries)?;
    TcmModel::from_parts(encoder, store, vocab, labels, header.hyper)
}

/// Writes one JSON line per input text. File input has one text per line.
pub fn predict(
    checkpoint: &Path,
    mapping: &Path,
    input: &Input,
    out: &mut impl Write,
) -> Result<()> {
    let model = load_model(checkpoint, mapping)?;
    let cache = model.build_label_cache()?;
    let texts: Vec<String> = match input {
        Input::Text(t) => vec![t.clone()],
        Input::File(path) => {
            let f = fs::File::open(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            std::io::BufReader::new(f)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?
        }
    };
    for chunk in texts.chunks(128) {
        for (text, p) in chunk.iter().zip(model.predict_batch(&cache, chunk)?) {
            let scores = model
                .labels()
                .names()
                .iter()
                .zip(&p.scores)
                .map(|(n, &s)| (n.clone(), json!(s)))
                .collect();
            let line = PredictionLine {
                text,
                label: &p.label,
                scores,
            };
            serde_json::to_writer(&mut *out, &line)?;
            writeln!(out).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })?;
        }
    }
    Ok(())
}

/// Writes `data.jsonl` and `labels.json` for a synthetic task.
pub fn make_synthetic(cfg: &SyntheticConfig, out: &Path) -> Result<()> {
    let task = generate_synthetic(cfg)?;
    create_dir(out)?;
    save_jsonl(&out.join("data.jsonl"), &task.examples)?;
    task.mapping.save(&out.join("labels.json"))?;
    eprintln!(
        "{} examples in {} classes written to {}",
        task.examples.len(),
        task.mapping.len(),
        out.display()
    );
    Ok(())
}
