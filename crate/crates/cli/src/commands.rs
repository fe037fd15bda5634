use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use imf_core::checkpoint;
use imf_core::data::{
    default_feature_path, known_stats, load_features, read_feature_matrix, read_manifest, read_triples, split_70_10_20,
    write_features, Dataset, Direction, FilterIndex, MissingFill, Modality, Split, TripleStore, Vocab, VocabMode,
    ENTITY_MANIFEST, RELATION_MANIFEST, TEST_FILE, TRAIN_FILE, VALID_FILE,
};
use imf_core::eval::{evaluate, write_rank_dump};
use imf_core::model::{Ablation, Features, ImfModel, ModelMeta};
use imf_core::scorer::ScorerKind;
use imf_core::structural::pretrain as pretrain_encoder;
use imf_core::synthetic::{generate, SyntheticConfig};
use imf_core::trainer::{train as run_training, LogRecord, TrainEvent};
use imf_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{Common, FeatureArgs, FillArg, Invalid};

/// Unsplit triple files looked for by `prepare`, in order.
const UNSPLIT_FILES: [&str; 2] = ["triples.txt", "all.txt"];
const CHECKPOINT_FILE: &str = "best.imfc";

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn base_config(common: &Common, features: &FeatureArgs) -> Result<RunConfig> {
    let mut c = RunConfig::resolve(common.config.as_deref())?;
    if let Some(d) = &common.dataset {
        c.dataset = Some(d.clone());
    }
    if let Some(o) = &common.out {
        c.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        c.train.seed = s;
        c.gat.seed = s;
    }
    if let Some(p) = &features.features_struct {
        c.features_struct = Some(p.clone());
    }
    if let Some(p) = &features.features_visual {
        c.features_visual = Some(p.clone());
    }
    if let Some(p) = &features.features_text {
        c.features_text = Some(p.clone());
    }
    if let Some(f) = features.missing_fill {
        c.missing_fill = match f {
            FillArg::Zero => MissingFill::Zero,
            FillArg::Mean => MissingFill::Mean,
        };
    }
    Ok(c)
}

fn feature_path(config: &RunConfig, dataset: &Path, m: Modality) -> PathBuf {
    let explicit = match m {
        Modality::Structural => &config.features_struct,
        Modality::Visual => &config.features_visual,
        Modality::Textual => &config.features_text,
        Modality::Multimodal => &None,
    };
    explicit.clone().unwrap_or_else(|| default_feature_path(dataset, m))
}

/// Loads the feature matrices `modalities` needs, naming any that are missing.
fn load_feature_set(config: &RunConfig, dataset: &Path, n: usize, modalities: &[Modality]) -> Result<Features> {
    let mut features = Features::new();
    for &m in modalities {
        let path = feature_path(config, dataset, m);
        if !path.exists() {
            let hint = match m {
                Modality::Structural => "run `imf pretrain` or pass --features-struct".to_string(),
                _ => format!(
                    "pass --features-{}",
                    if m == Modality::Visual { "visual" } else { "text" }
                ),
            };
            bail!(invalid(format!(
                "{} features not found at {} ({hint})",
                m.name(),
                path.display()
            )));
        }
        let f = load_features(&path, m, n, config.missing_fill)?;
        features.insert(m, f.matrix)?;
    }
    Ok(features)
}

// ---------------------------------------------------------------- prepare

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: FeatureArgs,
    /// Dataset name for comparison with published statistics (default: directory name)
    #[arg(long)]
    name: Option<String>,
}

fn find_raw_feature(dir: &Path, m: Modality) -> Option<PathBuf> {
    let stems: &[&str] = match m {
        Modality::Visual => &["visual", "image", "img"],
        Modality::Textual => &["text", "textual", "description"],
        _ => &["struct", "structural"],
    };
    stems
        .iter()
        .flat_map(|s| ["mmft", "csv"].map(|ext| dir.join(format!("{s}.{ext}"))))
        .find(|p| p.exists())
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    let config = base_config(&args.common, &args.features)?;
    let raw = config.dataset()?.to_path_buf();
    let out = config.out()?.to_path_buf();
    let mut problems = Vec::new();

    let ent_manifest = raw.join(ENTITY_MANIFEST);
    let rel_manifest = raw.join(RELATION_MANIFEST);
    let has_manifest = ent_manifest.exists();
    let (mut vocab, mode) = if has_manifest {
        let relations = if rel_manifest.exists() {
            read_manifest(&rel_manifest)?
        } else {
            Vec::new()
        };
        let vocab = Vocab::from_names(read_manifest(&ent_manifest)?, relations)?;
        // entities are fixed by the manifest; relations may still be discovered
        (
            vocab,
            if rel_manifest.exists() {
                VocabMode::Reuse
            } else {
                VocabMode::Build
            },
        )
    } else {
        (Vocab::new(), VocabMode::Build)
    };
    let entity_mode = mode;

    let mut read_split = |name: &str, vocab: &mut Vocab| -> Option<Vec<imf_core::data::Triple>> {
        let path = raw.join(name);
        if !path.exists() {
            return None;
        }
        let res = if has_manifest && entity_mode == VocabMode::Build {
            read_with_fixed_entities(&path, vocab)
        } else {
            read_triples(&path, vocab, mode).map_err(Into::into)
        };
        match res {
            Ok(t) => Some(t),
            Err(e) => {
                problems.push(format!("{e:#}"));
                Some(Vec::new())
            }
        }
    };

    let store = if raw.join(TRAIN_FILE).exists() {
        let train = read_split(TRAIN_FILE, &mut vocab).unwrap_or_default();
        let valid = read_split(VALID_FILE, &mut vocab).unwrap_or_default();
        let test = read_split(TEST_FILE, &mut vocab).unwrap_or_default();
        TripleStore { train, valid, test }
    } else if let Some(name) = UNSPLIT_FILES.iter().find(|f| raw.join(f).exists()) {
        let all = read_split(name, &mut vocab).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        split_70_10_20(all, &mut rng)
    } else {
        bail!(invalid(format!(
            "{}: no {TRAIN_FILE} and no unsplit triple file ({})",
            raw.display(),
            UNSPLIT_FILES.join(", ")
        )));
    };
    if store.train.is_empty() && problems.is_empty() {
        problems.push("training split is empty".into());
    }
    if let Err(e) = store.validate(vocab.num_entities(), vocab.num_relations()) {
        problems.push(e.to_string());
    }

    let n = vocab.num_entities();
    let mut matrices = Vec::new();
    for m in Modality::ENCODED {
        let explicit = feature_path_flag(&config, m);
        let path = explicit.clone().or_else(|| find_raw_feature(&raw, m));
        let Some(path) = path else {
            if m != Modality::Structural {
                problems.push(format!(
                    "{} features missing: no {}.mmft or .csv in {}; pass --features-{}",
                    m.name(),
                    if m == Modality::Visual { "visual" } else { "text" },
                    raw.display(),
                    if m == Modality::Visual { "visual" } else { "text" },
                ));
            }
            continue;
        };
        if !has_manifest {
            problems.push(format!(
                "{}: feature rows are matched to entities through {ENTITY_MANIFEST}, which {} lacks",
                path.display(),
                raw.display()
            ));
            continue;
        }
        match read_feature_matrix(&path, config.missing_fill) {
            Ok(t) if t.rows() != n => problems.push(format!(
                "{}: {} features have {} rows, expected {n} (one per entity)",
                path.display(),
                m.name(),
                t.rows()
            )),
            Ok(t) => matrices.push((m, t)),
            Err(e) => problems.push(format!("{} features: {e}", m.name())),
        }
    }

    if !problems.is_empty() {
        for p in &problems {
            eprintln!("  - {p}");
        }
        bail!(invalid(format!("{} problem(s) in {}", problems.len(), raw.display())));
    }

    let name = args
        .name
        .clone()
        .or_else(|| raw.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let dataset = Dataset {
        name: name.clone(),
        vocab,
        triples: store,
    };
    dataset.save_dir(&out)?;
    for (m, t) in &matrices {
        write_features(&default_feature_path(&out, *m), t)?;
    }
    let stats = dataset.stats();
    fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    config.write(&out.join("prepare.json"))?;

    println!("{name}: {} entities, {} relations", stats.entities, stats.relations);
    println!("train {}  valid {}  test {}", stats.train, stats.valid, stats.test);
    for (m, t) in &matrices {
        println!("{} features {}x{}", m.name(), t.rows(), t.cols());
    }
    if let Some(known) = known_stats(&name) {
        if known == stats {
            println!("matches published statistics for {name}");
        } else {
            println!(
                "differs from published {name}: {} entities, {} relations, {}/{}/{} triples",
                known.entities, known.relations, known.train, known.valid, known.test
            );
        }
    }
    Ok(())
}

fn feature_path_flag(config: &RunConfig, m: Modality) -> Option<PathBuf> {
    match m {
        Modality::Structural => config.features_struct.clone(),
        Modality::Visual => config.features_visual.clone(),
        Modality::Textual => config.features_text.clone(),
        Modality::Multimodal => None,
    }
}

/// Triples whose entities must come from the manifest but whose relations may be new.
fn read_with_fixed_entities(path: &Path, vocab: &mut Vocab) -> Result<Vec<imf_core::data::Triple>> {
    let before = vocab.num_entities();
    let triples = read_triples(path, vocab, VocabMode::Build)?;
    if vocab.num_entities() != before {
        let extra = &vocab.entities()[before..];
        bail!(invalid(format!(
            "{}: {} entities not in {ENTITY_MANIFEST}, first {:?}",
            path.display(),
            extra.len(),
            extra[0]
        )));
    }
    Ok(triples)
}

// ---------------------------------------------------------------- pretrain

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Structural embedding width
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Hinge margin
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

pub fn pretrain(args: PretrainArgs) -> Result<()> {
    let mut config = base_config(&args.common, &FeatureArgs::default())?;
    let g = &mut config.gat;
    g.dim = args.dim.unwrap_or(g.dim);
    g.epochs = args.epochs.unwrap_or(g.epochs);
    g.lr = args.lr.unwrap_or(g.lr);
    g.batch_size = args.batch.unwrap_or(g.batch_size);
    g.margin = args.margin.unwrap_or(g.margin);
    g.layers = args.layers.unwrap_or(g.layers);
    g.heads = args.heads.unwrap_or(g.heads);
    let dir = config.dataset()?.to_path_buf();
    let data = Dataset::load_dir(&dir)?;
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| default_feature_path(&dir, Modality::Structural));
    let result = pretrain_encoder(
        data.num_entities(),
        data.num_relations(),
        &data.triples.train,
        &config.gat,
    )?;
    write_features(&out, &result.features.matrix)?;
    let last = result.epoch_losses.last().copied().unwrap_or(result.initial_loss);
    println!(
        "hinge loss {:.4} -> {:.4} over {} epochs; wrote {} ({}x{})",
        result.initial_loss,
        last,
        result.epoch_losses.len(),
        out.display(),
        result.features.num_rows(),
        result.features.width()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rel_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// S, S+V, S+T, S+V+T, no-DF or no-CL
    #[arg(long)]
    ablation: Option<Ablation>,
    /// contextual, transe or distmult
    #[arg(long)]
    scorer: Option<ScorerKind>,
    #[arg(long)]
    cosine_scale: Option<f64>,
    #[arg(long)]
    weight_barrier: Option<f64>,
    #[arg(long)]
    contrastive_weight: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

fn csv_curves(records: &[LogRecord]) -> String {
    let mut rows: std::collections::BTreeMap<usize, (Option<f64>, Option<f64>)> = Default::default();
    for r in records {
        let row = rows.entry(r.epoch).or_default();
        if r.split == "train" {
            row.0 = r.loss;
        } else if r.split == "valid" {
            row.1 = r.mrr;
        }
    }
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,valid_mrr\n");
    for (epoch, (loss, mrr)) in rows {
        out += &format!("{epoch},{},{}\n", cell(loss), cell(mrr));
    }
    out
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = base_config(&args.common, &args.features)?;
    let (m, t) = (&mut config.model, &mut config.train);
    m.dim = args.dim.unwrap_or(m.dim);
    m.rel_dim = args.rel_dim.unwrap_or(m.rel_dim);
    m.ablation = args.ablation.unwrap_or(m.ablation);
    m.scorer = args.scorer.unwrap_or(m.scorer);
    m.cosine_scale = args.cosine_scale.unwrap_or(m.cosine_scale);
    m.weight_barrier = args.weight_barrier.unwrap_or(m.weight_barrier);
    t.lr = args.lr.unwrap_or(t.lr);
    t.batch_size = args.batch.unwrap_or(t.batch_size);
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.contrastive_weight = args.contrastive_weight.unwrap_or(t.contrastive_weight);
    t.label_smoothing = args.label_smoothing.unwrap_or(t.label_smoothing);
    t.patience = args.patience.unwrap_or(t.patience);
    t.eval_every = args.eval_every.unwrap_or(t.eval_every);
    if config.model.ablation == Ablation::NoCl {
        config.train.contrastive_weight = 0.0;
    }
    config.model.validate()?;
    config.train.validate()?;

    let dir = config.dataset()?.to_path_buf();
    let out = config.out()?.to_path_buf();
    let data = Dataset::load_dir(&dir)?;
    let n = data.num_entities();
    let features = load_feature_set(&config, &dir, n, &config.model.ablation.required())?;
    let mut widths = [0; 3];
    for m in Modality::ENCODED {
        widths[m.index()] = features.width(m).unwrap_or(0);
    }
    let meta = ModelMeta {
        config: config.model.clone(),
        num_entities: n,
        num_relations: data.num_relations(),
        feature_widths: widths,
    };

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    config.write(&out.join("config.json"))?;
    let log_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let info = |epoch: usize| serde_json::json!({ "epoch": epoch, "dataset": data.name });

    let outcome = run_training(meta, &features, &data.triples, &config.train, &mut |ev| {
        match ev {
            TrainEvent::Record(r) => {
                let line = serde_json::to_string(r)?;
                writeln!(log, "{line}").map_err(|e| imf_core::Error::Io {
                    path: log_path.clone(),
                    source: e,
                })?;
                match (r.loss, r.mrr) {
                    (Some(l), _) => eprintln!("epoch {:>4}  loss {l:.5}", r.epoch),
                    (_, Some(mrr)) => eprintln!("epoch {:>4}  valid MRR {mrr:.4}", r.epoch),
                    _ => {}
                }
            }
            TrainEvent::Best { epoch, model } => checkpoint::save(&ckpt, model, info(epoch))?,
        }
        Ok(())
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e @ imf_core::Error::Diverged { .. }) => {
            return Err(anyhow::Error::new(e).context(format!("last good checkpoint kept at {}", ckpt.display())));
        }
        Err(e) => return Err(e.into()),
    };
    fs::write(out.join("curves.csv"), csv_curves(&outcome.records))?;
    let summary = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_valid_mrr": outcome.best_valid_mrr,
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.epoch_losses.last(),
        "stopped_early": outcome.stopped_early,
        "decision_weights": outcome.best.decision_weights()?.gammas(),
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    match outcome.best_valid_mrr {
        Some(mrr) => println!(
            "best valid MRR {mrr:.4} at epoch {}; checkpoint {}",
            outcome.best_epoch,
            ckpt.display()
        ),
        None => println!("trained {} epochs; checkpoint {}", outcome.best_epoch, ckpt.display()),
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, valid or test
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write one line per ranked query
    #[arg(long)]
    rank_dump: bool,
}

/// Loads a checkpoint and the features it needs, checking both against the dataset.
fn load_model(path: &Path, config: &RunConfig, dir: &Path, data: &Dataset) -> Result<(ImfModel, Features)> {
    let (model, _) = checkpoint::load(path)?;
    let meta = &model.meta;
    if meta.num_entities != data.num_entities() || meta.num_relations != data.num_relations() {
        bail!(invalid(format!(
            "checkpoint expects {} entities and {} relations, dataset {} has {} and {}",
            meta.num_entities,
            meta.num_relations,
            dir.display(),
            data.num_entities(),
            data.num_relations()
        )));
    }
    let required = meta.config.ablation.required();
    let features = load_feature_set(config, dir, data.num_entities(), &required)?;
    for m in required {
        let have = features.width(m).unwrap_or(0);
        if have != meta.feature_widths[m.index()] {
            bail!(invalid(format!(
                "{} features are {have} wide, checkpoint was trained on {}",
                m.name(),
                meta.feature_widths[m.index()]
            )));
        }
    }
    Ok((model, features))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let config = base_config(&args.common, &args.features)?;
    let dir = config.dataset()?.to_path_buf();
    let data = Dataset::load_dir(&dir)?;
    let (model, features) = load_model(&args.checkpoint, &config, &dir, &data)?;
    let triples = data.triples.split(args.split);
    if triples.is_empty() {
        bail!(invalid(format!("{} split of {} is empty", args.split, dir.display())));
    }
    let filter = FilterIndex::build(&data.triples);
    let snap = model.snapshot(&features)?;
    let result = evaluate(&snap, triples, &filter, config.train.seed)?;
    let out = match &config.out {
        Some(o) => o.clone(),
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    fs::create_dir_all(&out)?;
    let split = args.split;
    fs::write(
        out.join(format!("report-{split}.json")),
        result.report.to_json()? + "\n",
    )?;
    let table = result.report.to_table();
    fs::write(out.join(format!("report-{split}.txt")), &table)?;
    if args.rank_dump {
        write_rank_dump(&out.join(format!("ranks-{split}.tsv")), &result.ranks)?;
    }
    print!("{table}");
    Ok(())
}

// ---------------------------------------------------------------- export

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// s, v, t, m or contextual
    #[arg(long)]
    modality: String,
    /// Relation name or id, for contextual exports
    #[arg(long)]
    relation: Option<String>,
    /// Prediction direction for contextual exports
    #[arg(long, default_value = "tail")]
    direction: String,
    /// Scorer whose contextual transformation is exported (default: m, else s)
    #[arg(long)]
    of: Option<Modality>,
}

pub fn export(args: ExportArgs) -> Result<()> {
    let config = base_config(&args.common, &args.features)?;
    let dir = config.dataset()?.to_path_buf();
    let out = config.out()?.to_path_buf();
    let data = Dataset::load_dir(&dir)?;
    let (model, features) = load_model(&args.checkpoint, &config, &dir, &data)?;
    let snap = model.snapshot(&features)?;
    let matrix = if args.modality == "contextual" {
        if model.config().scorer != ScorerKind::Contextual {
            bail!(invalid(format!(
                "contextual export needs a contextual scorer, checkpoint uses {}",
                model.config().scorer
            )));
        }
        let key = args
            .relation
            .as_deref()
            .ok_or_else(|| invalid("contextual export needs --relation"))?;
        let relation = data
            .vocab
            .lookup_relation(key)
            .ok_or_else(|| invalid(format!("unknown relation {key:?}")))?;
        let direction = match args.direction.as_str() {
            "tail" => Direction::Tail,
            "head" => Direction::Head,
            other => bail!(invalid(format!("direction must be tail or head, got {other:?}"))),
        };
        let mods = snap.modalities();
        let of = args.of.unwrap_or(if mods.contains(&Modality::Multimodal) {
            Modality::Multimodal
        } else {
            mods[0]
        });
        let rows = (0..data.num_entities())
            .map(|e| snap.contextual_embedding(of, e, relation, direction))
            .collect::<imf_core::Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)?
    } else {
        let m: Modality = args.modality.parse().map_err(|_| {
            invalid(format!(
                "unknown modality {:?}; use s, v, t, m or contextual",
                args.modality
            ))
        })?;
        snap.entity_table(m).map_err(|e| invalid(e.to_string()))?.clone()
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_features(&out, &matrix)?;
    println!("wrote {} ({}x{})", out.display(), matrix.rows(), matrix.cols());
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    entities: Option<usize>,
    /// Feature noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let d = SyntheticConfig::default();
    let config = SyntheticConfig {
        seed: args.seed.unwrap_or(d.seed),
        num_entities: args.entities.unwrap_or(d.num_entities),
        noise: args.noise.unwrap_or(d.noise),
        ..d
    };
    let kg = generate(&config)?;
    kg.dataset.save_dir(&args.out)?;
    write_features(&default_feature_path(&args.out, Modality::Visual), &kg.visual)?;
    write_features(&default_feature_path(&args.out, Modality::Textual), &kg.textual)?;
    let s = kg.dataset.stats();
    println!(
        "wrote {}: {} entities, {} relations, {}/{}/{} triples",
        args.out.display(),
        s.entities,
        s.relations,
        s.train,
        s.valid,
        s.test
    );
    Ok(())
}
