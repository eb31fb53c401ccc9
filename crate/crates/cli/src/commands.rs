use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use pronsim::datagen::{
    default_inventory, default_rules, parse_rules, rules_to_text, synth_corpus, synth_lexicon, GenConfig,
    SyntheticCorpus,
};
use pronsim::experiments::{binary_t_max, gradient_audit, sweep_csv, sweep_dim, sweep_negatives, Arch, AuditSizes, TaskData};
use pronsim::models::{BinaryConfig, Checkpoint, Model, RankConfig};
use pronsim::numerics::GradCheckConfig;
use pronsim::phonology::{corpus_to_text, parse_corpus};
use pronsim::rng::{stream, Stream};
use pronsim::tasks::{
    embeddings_tsv, evaluate, evaluate_exact, lexicon_embeddings, nearest_words, project_embeddings_2d,
    word_neighborhood, BinaryScorer, FnScorer, LevenshteinScorer, NeighborhoodMode, RankScorer, Scorer,
};
use pronsim::training::fit;
use pronsim::{
    BinaryModel, CorpusExample, EncoderConfig, EncoderKind, Lexicon, NegativeMode, PhoneInventory, RankModel,
    TrainConfig,
};

use crate::args::*;
use crate::usage;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Neighbors(a) => neighbors(a),
        Command::Embed(a) => embed(a),
        Command::Project(a) => project(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::SweepNegatives(a) => sweep_negatives_cmd(a),
        Command::SweepDim(a) => sweep_dim_cmd(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print(contents: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(contents.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_or_print(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write(p, contents),
        None => print(contents),
    }
}

/// `explicit`, else `name` inside the data directory.
fn resolve(data: Option<&Path>, explicit: Option<&PathBuf>, name: &str, flag: &str) -> Result<PathBuf> {
    match (explicit, data) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(d)) => Ok(d.join(name)),
        (None, None) => Err(usage(format!("--{flag} or --data is required"))),
    }
}

fn load_inventory_lexicon(d: &DataArgs) -> Result<(PhoneInventory, Lexicon)> {
    let data = d.data.as_deref();
    let inv_path = resolve(data, d.inventory.as_ref(), "inventory.txt", "inventory")?;
    let lex_path = resolve(data, d.lexicon.as_ref(), "lexicon.tsv", "lexicon")?;
    let inv = PhoneInventory::parse(&read(&inv_path)?).with_context(|| inv_path.display().to_string())?;
    let lex = Lexicon::parse(&read(&lex_path)?, &inv).with_context(|| lex_path.display().to_string())?;
    Ok((inv, lex))
}

fn load_corpus(path: &Path, inv: &PhoneInventory, lex: &Lexicon) -> Result<Vec<CorpusExample>> {
    parse_corpus(&read(path)?, inv, lex).with_context(|| path.display().to_string())
}

/// Seed recorded by `gen`, if the data directory has a manifest.
fn manifest_seed(data: Option<&Path>) -> Option<u64> {
    let text = fs::read_to_string(data?.join("manifest.json")).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?.get("seed")?.as_u64()
}

fn load_model(path: &Path, inv: &PhoneInventory) -> Result<Model> {
    let ckpt = Checkpoint::load(path).with_context(|| path.display().to_string())?;
    if ckpt.inventory_fingerprint != inv.fingerprint() {
        bail!("{} was trained on a different phone inventory", path.display());
    }
    Ok(ckpt.model)
}

fn encoder_kind(e: EncoderArg) -> EncoderKind {
    match e {
        EncoderArg::Lstm => EncoderKind::Lstm,
        EncoderArg::TwoLstm => EncoderKind::TwoLstm,
        EncoderArg::BiTwoLstm => EncoderKind::BiTwoLstm,
    }
}

fn encoder_config(e: &EncoderArgs) -> EncoderConfig {
    encoder_kind(e.encoder).config(e.phone_dim, e.hidden)
}

fn rank_config(e: &EncoderArgs, embed_dim: usize, final_relu: bool) -> Result<RankConfig> {
    let enc = encoder_config(e);
    let cfg = RankConfig { ffn_dim: e.ffn_dim.unwrap_or(enc.hidden_dim), final_relu, ..RankConfig::new(enc, embed_dim) };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train_config(o: &OptimArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        learning_rate: o.lr,
        margin: o.margin,
        negatives_per_positive: o.negatives,
        epochs: o.epochs,
        batch_size: o.batch_size,
        seed: o.seed,
        negative_mode: match o.negative_mode {
            NegModeArg::Canonical => NegativeMode::Canonical,
            NegModeArg::Surface => NegativeMode::Surface,
        },
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn gen(a: GenArgs) -> Result<()> {
    let inv = match &a.inventory {
        Some(p) => PhoneInventory::parse(&read(p)?).with_context(|| p.display().to_string())?,
        None => default_inventory(),
    };
    let rules = match &a.rules {
        Some(p) => parse_rules(&read(p)?, &inv).with_context(|| p.display().to_string())?,
        None => default_rules(&inv).context("the inventory lacks phones used by the built-in rules; pass --rules")?,
    };
    let split: [f64; 3] = a.split.as_slice().try_into().map_err(|_| usage("--split takes three fractions"))?;
    let mut cfg = GenConfig { variants_per_word: a.variants, split, ..GenConfig::new(rules, a.seed) };
    if a.zero_noise {
        cfg = cfg.zero_noise();
    }
    cfg.validate(&inv).map_err(|e| usage(e.to_string()))?;
    let lex = match &a.lexicon {
        Some(p) => Lexicon::parse(&read(p)?, &inv).with_context(|| p.display().to_string())?,
        None => synth_lexicon(&inv, a.words, a.seed)?,
    };
    let SyntheticCorpus { train, dev, test } = synth_corpus(&lex, &inv, &cfg)?;

    create_dir(&a.out)?;
    write(&a.out.join("inventory.txt"), &inv.to_text())?;
    write(&a.out.join("lexicon.tsv"), &lex.to_text(&inv))?;
    write(&a.out.join("rules.tsv"), &rules_to_text(&cfg.rules, &inv))?;
    write(&a.out.join("train.tsv"), &corpus_to_text(&train, &inv))?;
    write(&a.out.join("dev.tsv"), &corpus_to_text(&dev, &inv))?;
    write(&a.out.join("test.tsv"), &corpus_to_text(&test, &inv))?;
    let manifest = json!({
        "seed": a.seed,
        "words": lex.len(),
        "variants_per_word": cfg.variants_per_word,
        "split": cfg.split,
        "zero_noise": a.zero_noise,
        "inventory_fingerprint": format!("{:016x}", inv.fingerprint()),
        "examples": { "train": train.len(), "dev": dev.len(), "test": test.len() },
    });
    write(&a.out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    log::info!(
        "{} words, {}/{}/{} train/dev/test examples written to {}",
        lex.len(),
        train.len(),
        dev.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (inv, lex) = load_inventory_lexicon(&a.data)?;
    let data = a.data.data.as_deref();
    let train = load_corpus(&resolve(data, a.train.as_ref(), "train.tsv", "train")?, &inv, &lex)?;
    let dev = load_corpus(&resolve(data, a.dev.as_ref(), "dev.tsv", "dev")?, &inv, &lex)?;
    let tc = train_config(&a.optim)?;
    let mut init = stream(tc.seed, Stream::Init);
    let (model, report) = match a.arch {
        ArchArg::Rank => {
            let cfg = rank_config(&a.encoder, a.embed_dim, a.final_relu)?;
            let mut m = RankModel::new(cfg, inv.len(), &mut init)?;
            let report = fit(&mut m, &train, &dev, &lex, &tc)?;
            (Model::Rank(m), report)
        }
        ArchArg::Binary => {
            let enc = encoder_config(&a.encoder);
            let cfg = BinaryConfig {
                ffn_dim: a.encoder.ffn_dim.unwrap_or(enc.hidden_dim),
                ..BinaryConfig::new(enc, binary_t_max(&train, &lex))
            };
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let mut m = BinaryModel::new(cfg, inv.len(), &mut init)?;
            let report = fit(&mut m, &train, &dev, &lex, &tc)?;
            (Model::Binary(m), report)
        }
    };
    create_dir(&a.out)?;
    Checkpoint::new(model, inv.fingerprint()).save(a.out.join("model.ckpt"))?;
    write(&a.out.join("train_report.txt"), &report.to_table())?;
    write(&a.out.join("train_report.json"), &(report.to_json()? + "\n"))?;
    let best = report.selected();
    print(&format!(
        "selected epoch {}: dev WER@1 {:.2}%  WER@2 {:.2}%; train violation rate {:.4}\n",
        best.epoch, best.dev_wer_at_1, best.dev_wer_at_2, report.train_violation_rate
    ))
}

/// Runs `f` with the requested similarity function.
fn with_scorer<T>(
    kind: ScorerArg,
    checkpoint: Option<&Path>,
    inv: &PhoneInventory,
    lex: &Lexicon,
    f: impl FnOnce(&dyn Scorer, &str) -> Result<T>,
) -> Result<T> {
    let need_model = || checkpoint.ok_or_else(|| usage("--checkpoint is required for model scorers"));
    match kind {
        ScorerArg::Levenshtein => f(&LevenshteinScorer, "levenshtein"),
        ScorerArg::Exact => f(&FnScorer(|a: &_, b: &_| if a == b { 1.0 } else { 0.0 }), "exact"),
        ScorerArg::Rank => match load_model(need_model()?, inv)? {
            Model::Rank(m) => f(&RankScorer::with_lexicon(&m, lex)?, "rank"),
            Model::Binary(_) => Err(usage("--scorer rank needs a ranking checkpoint, got a binary one")),
        },
        ScorerArg::Binary => match load_model(need_model()?, inv)? {
            Model::Binary(m) => f(&BinaryScorer::with_lexicon(&m, lex)?, "binary"),
            Model::Rank(_) => Err(usage("--scorer binary needs a binary checkpoint, got a ranking one")),
        },
    }
}

fn require_checkpoint(kind: ScorerArg, checkpoint: Option<&Path>) -> Result<()> {
    match (kind, checkpoint) {
        (ScorerArg::Rank | ScorerArg::Binary, None) => Err(usage("--checkpoint is required for model scorers")),
        _ => Ok(()),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    require_checkpoint(a.scorer, a.checkpoint.as_deref())?;
    let (inv, lex) = load_inventory_lexicon(&a.data)?;
    let split = match a.split {
        SplitArg::Train => "train.tsv",
        SplitArg::Dev => "dev.tsv",
        SplitArg::Test => "test.tsv",
    };
    let examples = load_corpus(&resolve(a.data.data.as_deref(), a.corpus.as_ref(), split, "corpus")?, &inv, &lex)?;
    let report = match a.scorer {
        ScorerArg::Exact => evaluate_exact(&examples, &lex)?,
        kind => with_scorer(kind, a.checkpoint.as_deref(), &inv, &lex, |s, name| {
            Ok(evaluate(&examples, &lex, s, name)?)
        })?,
    };
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut doc = serde_json::to_value(&report)?;
        doc["seed"] = json!(manifest_seed(a.data.data.as_deref()));
        write(&out.join("eval_report.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        write(&out.join("predictions.tsv"), &report.predictions_tsv())?;
    }
    print(&format!("{}\n", report.summary()))
}

fn neighbors(a: NeighborsArgs) -> Result<()> {
    require_checkpoint(a.scorer, a.checkpoint.as_deref())?;
    let (inv, lex) = load_inventory_lexicon(&a.data)?;
    let words = with_scorer(a.scorer, a.checkpoint.as_deref(), &inv, &lex, |s, _| {
        let words = match (a.m, a.theta) {
            (Some(m), _) => nearest_words(&a.word, &lex, s, m)?,
            (None, Some(theta)) => {
                let mode = match a.mode {
                    ModeArg::AtLeast => NeighborhoodMode::SimilarityAtLeast,
                    ModeArg::Literal => NeighborhoodMode::Literal,
                };
                word_neighborhood(&a.word, &lex, s, theta, mode)?
            }
            (None, None) => unreachable!("clap requires --m or --theta"),
        };
        Ok(words.into_iter().map(str::to_string).collect::<Vec<_>>())
    })?;
    print(&words.iter().map(|w| format!("{w}\n")).collect::<String>())
}

fn rank_model(path: &Path, inv: &PhoneInventory) -> Result<RankModel> {
    match load_model(path, inv)? {
        Model::Rank(m) => Ok(m),
        Model::Binary(_) => Err(usage("embeddings need a ranking checkpoint, got a binary one")),
    }
}

fn embed(a: EmbedArgs) -> Result<()> {
    let (inv, lex) = load_inventory_lexicon(&a.data)?;
    let model = rank_model(&a.checkpoint, &inv)?;
    write_or_print(a.out.as_deref(), &embeddings_tsv(&lexicon_embeddings(&model, &lex)?))
}

fn project(a: ProjectArgs) -> Result<()> {
    let (inv, lex) = load_inventory_lexicon(&a.data)?;
    let model = rank_model(&a.checkpoint, &inv)?;
    let proj = project_embeddings_2d(&lexicon_embeddings(&model, &lex)?)?;
    create_dir(&a.out)?;
    write(&a.out.join("projection.tsv"), &proj.to_tsv())?;
    write(&a.out.join("projection.svg"), &proj.to_svg())?;
    log::info!(
        "explained variance {:.4}, {:.4}; written to {}",
        proj.explained_variance[0],
        proj.explained_variance[1],
        a.out.display()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let archs: Vec<Arch> = match a.arch {
        AuditArch::All => Arch::ALL.to_vec(),
        AuditArch::Binary => vec![Arch::Binary],
        AuditArch::Rank => vec![Arch::Rank],
    };
    let encoders: Vec<EncoderKind> = match a.encoder {
        AuditEncoder::All => EncoderKind::ALL.to_vec(),
        AuditEncoder::Lstm => vec![EncoderKind::Lstm],
        AuditEncoder::TwoLstm => vec![EncoderKind::TwoLstm],
        AuditEncoder::BiTwoLstm => vec![EncoderKind::BiTwoLstm],
    };
    if a.min_len == 0 || a.min_len > a.max_len {
        return Err(usage("lengths must satisfy 1 <= --min-len <= --max-len"));
    }
    let sizes = AuditSizes { min_len: a.min_len, max_len: a.max_len, ..AuditSizes::default() };
    let check = GradCheckConfig {
        h: a.h,
        tol: a.tol,
        coords_per_tensor: a.coords,
        resolution_factor: if a.strict { 0.0 } else { GradCheckConfig::default().resolution_factor },
        ..GradCheckConfig::default()
    };
    let mut failures = 0;
    for &arch in &archs {
        for &kind in &encoders {
            for seed in 0..a.seeds {
                let report = gradient_audit(arch, kind, seed, &sizes, &check)?;
                let verdict = if report.passed() { "PASS" } else { "FAIL" };
                print(&format!(
                    "{verdict} {arch} {kind} seed {seed}: max rel err {:.3e} (strict {:.3e}) over {} tensors\n",
                    report.max_rel_error(),
                    report.max_strict_rel_error(),
                    report.params.len()
                ))?;
                if !report.passed() {
                    failures += 1;
                    print(&report.to_string())?;
                }
            }
        }
    }
    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    Ok(())
}

fn load_task(t: &TaskArgs, seed: u64) -> Result<TaskData> {
    let Some(dir) = &t.data else {
        return Ok(TaskData::generate(t.words, t.variants, seed)?);
    };
    let (inventory, lexicon) =
        load_inventory_lexicon(&DataArgs { data: Some(dir.clone()), inventory: None, lexicon: None })?;
    let corpus = SyntheticCorpus {
        train: load_corpus(&dir.join("train.tsv"), &inventory, &lexicon)?,
        dev: load_corpus(&dir.join("dev.tsv"), &inventory, &lexicon)?,
        test: load_corpus(&dir.join("test.tsv"), &inventory, &lexicon)?,
    };
    Ok(TaskData { inventory, lexicon, gen: None, corpus })
}

fn positive_list(values: &[usize], flag: &str) -> Result<()> {
    if values.is_empty() || values.contains(&0) {
        return Err(usage(format!("--{flag} needs positive values")));
    }
    Ok(())
}

fn sweep_negatives_cmd(a: SweepNegativesArgs) -> Result<()> {
    positive_list(&a.values, "values")?;
    let cfg = rank_config(&a.encoder, a.embed_dim, false)?;
    let tc = train_config(&a.optim)?;
    let task = load_task(&a.task, tc.seed)?;
    let rows = sweep_negatives(&task, &cfg, &tc, &a.values)?;
    write_or_print(a.out.as_deref(), &sweep_csv("negatives", tc.seed, &rows))
}

fn sweep_dim_cmd(a: SweepDimArgs) -> Result<()> {
    positive_list(&a.dims, "dims")?;
    let cfg = rank_config(&a.encoder, a.dims[0], false)?;
    let tc = train_config(&a.optim)?;
    let task = load_task(&a.task, tc.seed)?;
    let rows = sweep_dim(&task, &cfg, &tc, &a.dims)?;
    write_or_print(a.out.as_deref(), &sweep_csv("embed_dim", tc.seed, &rows))
}
