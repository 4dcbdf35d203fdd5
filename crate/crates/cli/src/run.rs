use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use tumorlens::data::{generate_synthetic, split_by_sample, Dataset, ResponseTable, SyntheticSpec};
use tumorlens::evalkit::{evaluate_target, export_embeddings, fraction_sweep, sweep_csv, ScoreKind};
use tumorlens::numcore::sigmoid;
use tumorlens::pipeline::{train_stage1, train_stage2, Checkpoint, DrugLibrary, Model, PairIndex, Stage, TrainConfig};
use tumorlens::response::write_decomposition_csv;
use tumorlens::Error;

use crate::{Command, Common, DomainArg, Inputs, ScoreArg};

/// Keys that may differ from the stage-1 checkpoint. Everything else fixes
/// the architecture or stage-1 training.
const STAGE2_KEYS: [&str; 9] = [
    "epochs_stage2",
    "batch_size",
    "target_label_fraction",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "combine_mode",
];

pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Parameter(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn split_kv(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {raw:?}")))
}

fn text_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Config for a fresh stage-1 run: file, then `--set`, then `--seed`.
fn fresh_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for raw in &common.set {
        let (k, v) = split_kv(raw)?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies overrides to a checkpoint's config. Keys outside `STAGE2_KEYS`
/// may be restated but not changed.
fn checkpoint_config(base: &TrainConfig, common: &Common) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    let apply = |cfg: &mut TrainConfig, k: &str, v: &str| -> Result<()> {
        if !STAGE2_KEYS.contains(&k) {
            let mut probe = cfg.clone();
            probe.set(k, v)?;
            if text_map(&probe).get(k) != text_map(cfg).get(k) {
                return Err(CliError::Usage(format!(
                    "config key {k} is fixed by the stage-1 checkpoint and cannot be changed"
                )));
            }
        }
        cfg.set(k, v)?;
        Ok(())
    };
    if let Some(p) = &common.config {
        let file = TrainConfig::load(p)?;
        for (k, v) in text_map(&file) {
            apply(&mut cfg, &k, &v)?;
        }
    }
    for raw in &common.set {
        let (k, v) = split_kv(raw)?;
        apply(&mut cfg, k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(common: &Common, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| common.out.join("data"))
}

fn out_dir(common: &Common) -> Result<()> {
    fs::create_dir_all(&common.out).map_err(|e| io(&common.out, e))
}

/// Loads a checkpoint and applies the overrides. Without `--checkpoint`,
/// `prefer_final` picks OUT/stage2.ckpt when present, else OUT/stage1.ckpt.
fn load_model(common: &Common, inputs: &Inputs, prefer_final: bool) -> Result<Model> {
    let path = match &inputs.checkpoint {
        Some(p) => p.clone(),
        None => {
            let two = common.out.join("stage2.ckpt");
            if prefer_final && two.exists() {
                two
            } else {
                common.out.join("stage1.ckpt")
            }
        }
    };
    let mut model = Model::from_checkpoint(Checkpoint::load(&path)?)?;
    model.config = checkpoint_config(&model.config, common)?;
    info!("loaded {} (stage {:?})", path.display(), model.stage);
    Ok(model)
}

/// Target responses split into the stage-2 training part and the held-out rest.
fn target_split(data: &Dataset, cfg: &TrainConfig) -> Result<(ResponseTable, ResponseTable)> {
    if data.target_responses.is_empty() {
        return Err(Error::Data("dataset has no target responses".into()).into());
    }
    Ok(split_by_sample(
        &data.target_responses,
        cfg.target_label_fraction,
        cfg.seed,
    )?)
}

pub fn dispatch(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Synth {
            common,
            data,
            n_source,
            n_target,
            n_features,
            n_drugs,
        } => {
            if common.config.is_some() || !common.set.is_empty() {
                return Err(CliError::Usage(
                    "synth takes no training config; use --seed and the --n-* flags".into(),
                ));
            }
            let mut spec = SyntheticSpec::default();
            spec.n_source = n_source.unwrap_or(spec.n_source);
            spec.n_target = n_target.unwrap_or(spec.n_target);
            spec.n_features = n_features.unwrap_or(spec.n_features);
            spec.n_drugs = n_drugs.unwrap_or(spec.n_drugs);
            spec.seed = common.seed.unwrap_or(spec.seed);
            let dir = data_dir(&common, &data);
            generate_synthetic(&spec)?.write_dir(&dir)?;
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Train1 { common, data } => {
            let cfg = fresh_config(&common)?;
            let ds = Dataset::load_dir(&data_dir(&common, &data))?;
            out_dir(&common)?;
            let (model, log) = train_stage1(&ds.source, &ds.source_responses, &ds.target, &ds.drugs, &cfg)?;
            let ckpt = common.out.join("stage1.ckpt");
            model.to_checkpoint().save(&ckpt)?;
            println!("wrote {}", ckpt.display());
            let loss = common.out.join("stage1_loss.csv");
            log.write_csv(&loss)?;
            println!("wrote {}", loss.display());
            write(&common.out.join("config.txt"), &cfg.to_text())
        }
        Command::Train2 { common, inputs } => {
            let stage1 = load_model(&common, &inputs, false)?;
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let (train, held_out) = target_split(&ds, &stage1.config)?;
            info!("stage 2 on {} pairs, {} held out", train.len(), held_out.len());
            out_dir(&common)?;
            let (model, log) = train_stage2(&stage1, &ds.target, &train, &ds.drugs)?;
            let ckpt = common.out.join("stage2.ckpt");
            model.to_checkpoint().save(&ckpt)?;
            println!("wrote {}", ckpt.display());
            let loss = common.out.join("stage2_loss.csv");
            log.write_csv(&loss)?;
            println!("wrote {}", loss.display());
            Ok(())
        }
        Command::Predict { common, inputs, domain } => {
            let model = load_model(&common, &inputs, true)?;
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let lib = DrugLibrary::new(&ds.drugs)?;
            let samples = match domain {
                DomainArg::Source => &ds.source,
                DomainArg::Target => &ds.target,
            };
            let n = samples.n_samples();
            let pairs = PairIndex {
                sample: (0..n).flat_map(|s| std::iter::repeat_n(s, lib.len())).collect(),
                drug: (0..n).flat_map(|_| 0..lib.len()).collect(),
                labels: None,
            };
            let scores: Vec<f64> = match domain {
                DomainArg::Source => model.predict_source(samples, &lib, &pairs)?,
                DomainArg::Target => model
                    .decompose(samples, &lib, &pairs)?
                    .iter()
                    .map(|r| match model.stage {
                        Stage::Two => r.combined,
                        Stage::One => sigmoid(r.cancell_score),
                    })
                    .collect(),
            };
            let mut body = String::from("sample_id,drug_id,score\n");
            for (k, s) in scores.iter().enumerate() {
                body += &format!(
                    "{},{},{s}\n",
                    samples.sample_ids[pairs.sample[k]],
                    lib.id(pairs.drug[k])
                );
            }
            out_dir(&common)?;
            write(&common.out.join("predictions.csv"), &body)
        }
        Command::Decompose { common, inputs } => {
            let model = load_model(&common, &inputs, true)?;
            if model.stage == Stage::One {
                warn!("stage-1 checkpoint: the TME head is untrained");
            }
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let lib = DrugLibrary::new(&ds.drugs)?;
            let pairs = PairIndex::new(&ds.target_responses.with_labels()?, &ds.target, &lib)?;
            let rows = model.decompose(&ds.target, &lib, &pairs)?;
            out_dir(&common)?;
            let path = common.out.join("decomposition.csv");
            write_decomposition_csv(&path, &rows)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Sweep {
            common,
            inputs,
            fractions,
        } => {
            let stage1 = load_model(&common, &inputs, false)?;
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let rows = fraction_sweep(
                &stage1,
                &ds.target,
                &ds.target_responses,
                &ds.drugs,
                &fractions,
                stage1.config.seed,
            )?;
            out_dir(&common)?;
            let body = sweep_csv(&rows);
            print!("{body}");
            write(&common.out.join("sweep.csv"), &body)
        }
        Command::ExportEmbeddings { common, inputs } => {
            let model = load_model(&common, &inputs, true)?;
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let dir = common.out.join("embeddings");
            fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
            let summary = export_embeddings(&model, &ds.source, &ds.target, &dir)?;
            for (tag, n) in &summary.rows_per_tag {
                println!("{tag}: {n} rows");
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Eval {
            common,
            inputs,
            score,
            all,
        } => {
            let model = load_model(&common, &inputs, true)?;
            let ds = Dataset::load_dir(&data_dir(&common, &inputs.data))?;
            let pool = if all {
                ds.target_responses.clone()
            } else {
                target_split(&ds, &model.config)?.1
            };
            let score = score.unwrap_or(match model.stage {
                Stage::Two => ScoreArg::Combined,
                Stage::One => ScoreArg::Cancell,
            });
            let kind = match score {
                ScoreArg::Combined => ScoreKind::Combined,
                ScoreArg::Cancell => ScoreKind::CanCellOnly,
            };
            let report = evaluate_target(&model, &ds.target, &pool, &ds.drugs, kind)?;
            println!("{report}");
            out_dir(&common)?;
            write(&common.out.join("metrics.csv"), &report.to_csv())
        }
    }
}
