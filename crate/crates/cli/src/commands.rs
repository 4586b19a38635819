use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use triplet_tagger::checkpoint::warm_start;
use triplet_tagger::corpus::{
    content_hash, export_conll, generate_synthetic, import_conll, load_catalog, read_conll, repair_bio, save_catalog,
    split_holdout, tokenize, write_conll,
};
use triplet_tagger::metrics::{render_comparison, MetricsReport};
use triplet_tagger::trainer::{encode_examples, initialize};
use triplet_tagger::verify::{grad_check_suite, GRAD_CHECK_TOLERANCE};
use triplet_tagger::{CatalogItem, Checkpoint, OpKind, TagScheme, Trainer};

use crate::config::{env_seed, load_run_config};
use crate::CliError;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// A `.conll` file or a JSON-lines catalog.
fn load_items(path: &Path, descriptions: Option<&Path>, scheme: &TagScheme) -> Result<Vec<CatalogItem>, CliError> {
    if path.extension().is_some_and(|e| e == "conll") {
        let import = import_conll(path, descriptions, scheme)?;
        for w in &import.warnings {
            eprintln!("warning: {w}");
        }
        Ok(import.items)
    } else {
        Ok(load_catalog(path, scheme)?)
    }
}

pub fn gen_data(seed: Option<u64>, n: usize, out: &Path, conll: Option<&Path>) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let seed = match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let items = generate_synthetic(seed, n)?;
    save_catalog(&items, out)?;
    if let Some(p) = conll {
        export_conll(&items, p)?;
    }
    println!("wrote {n} items to {} (seed {seed})", out.display());
    Ok(())
}

pub fn train(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    overrides: &[String],
) -> Result<(), CliError> {
    let mut config = load_run_config(config_path, overrides, seed)?;
    if let Some(o) = out {
        config.output_dir = o;
    }
    let scheme = config.scheme()?;
    let catalog_bytes = fs::read(&config.data.catalog)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", config.data.catalog.display())))?;
    let items = load_items(&config.data.catalog, config.data.descriptions.as_deref(), &scheme)?;
    let (train_items, holdout) = split_holdout(&items, config.data.holdout, config.train.seed)?;
    let (params, vocab) = match &config.train.warm_start {
        Some(path) => warm_start(path, &config.model, &scheme)?,
        None => initialize(&config.train, &config.model, &train_items, &scheme)?,
    };
    let data = encode_examples(&train_items, &vocab, &scheme, config.model.max_len)?;

    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", config.output_dir.display())))?;
    println!(
        "training {} model on {} items ({} held out), {} parameters",
        config.train.mode,
        train_items.len(),
        holdout.len(),
        params.num_scalars()
    );
    let mut trainer = Trainer::new(params, config.train.clone())?;
    trainer.run(&data, None)?;

    let triplet_means = trainer.history.epoch_means(|r| r.loss_triplet);
    for (epoch, loss) in trainer.history.epoch_means(|r| Some(r.loss_total)) {
        match triplet_means.iter().find(|(e, _)| *e == epoch) {
            Some((_, t)) => println!("epoch {epoch:>3}  loss {loss:.6}  triplet {t:.6}"),
            None => println!("epoch {epoch:>3}  loss {loss:.6}"),
        }
    }

    let dir = &config.output_dir;
    let vocab_hash = vocab.hash();
    let checkpoint = Checkpoint::from_trainer(&trainer, vocab, scheme)?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    write_file(&dir.join("history.csv"), &trainer.history.to_csv())?;
    save_catalog(&holdout, &dir.join("holdout.jsonl"))?;
    let manifest = json!({
        "mode": config.train.mode,
        "lambda": config.train.lambda,
        "seed": config.train.seed,
        "config": {
            "data": config.data,
            "model": config.model,
            "train": config.train,
        },
        "data": {
            "catalog_sha256": content_hash(&catalog_bytes),
            "n_items": items.len(),
            "n_train": train_items.len(),
            "n_holdout": holdout.len(),
        },
        "vocab_hash": vocab_hash,
        "outputs": ["checkpoint.json", "history.csv", "holdout.jsonl"],
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifests always serialize");
    text.push('\n');
    write_file(&dir.join("manifest.json"), &text)?;
    println!("wrote {}", dir.display());
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub name: Option<String>,
    pub write_predictions: Option<PathBuf>,
    pub entity_types: Vec<String>,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (report, predicted) = match (&args.checkpoint, &args.predictions) {
        (Some(path), _) => {
            let ck = Checkpoint::load(path)?;
            let gold = load_items(&args.data, None, &ck.scheme)?;
            let titles: Vec<Vec<String>> = gold.iter().map(|i| i.title_tokens().to_vec()).collect();
            let pred = ck.tag_titles(&titles)?;
            let name = args.name.clone().unwrap_or_else(|| match &ck.training {
                Some(t) => t.config.mode.to_string(),
                None => "model".into(),
            });
            let gold_tags: Vec<Vec<String>> = gold.iter().map(|i| i.title_tags().to_vec()).collect();
            let report = MetricsReport::compute(&name, &gold_tags, &pred)?;
            (report, Some((gold, pred)))
        }
        (None, Some(path)) => {
            let scheme = TagScheme::new(args.entity_types.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
            let gold = load_items(&args.data, None, &scheme)?;
            let text =
                fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let sentences = read_conll(&text, &path.display().to_string())?;
            if sentences.len() != gold.len() {
                return Err(CliError::Data(format!(
                    "{} has {} sentences, the gold data has {}",
                    path.display(),
                    sentences.len(),
                    gold.len()
                )));
            }
            let mut pred = Vec::with_capacity(gold.len());
            for ((id, tokens, mut tags), g) in sentences.into_iter().zip(&gold) {
                if tokens.len() != g.title_tokens().len() {
                    return Err(CliError::Data(format!(
                        "sentence {id:?} has {} tokens, gold item {:?} has {}",
                        tokens.len(),
                        g.id(),
                        g.title_tokens().len()
                    )));
                }
                for t in &tags {
                    scheme
                        .id_of(t)
                        .map_err(|_| CliError::Data(format!("sentence {id:?}: unknown tag {t:?}")))?;
                }
                repair_bio(&mut tags)?;
                pred.push(tags);
            }
            let name = args.name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned())
            });
            let gold_tags: Vec<Vec<String>> = gold.iter().map(|i| i.title_tags().to_vec()).collect();
            (MetricsReport::compute(&name, &gold_tags, &pred)?, None)
        }
        (None, None) => return Err(CliError::Usage("eval needs --checkpoint or --predictions".into())),
    };
    if let Some(path) = &args.write_predictions {
        let Some((gold, pred)) = &predicted else {
            return Err(CliError::Usage("--write-predictions needs --checkpoint".into()));
        };
        let text = write_conll(
            gold.iter()
                .zip(pred)
                .map(|(g, p)| (g.id(), g.title_tokens(), p.as_slice())),
        );
        write_file(path, &text)?;
    }
    if let Some(out) = &args.out {
        let mut text = report.to_json();
        text.push('\n');
        write_file(out, &text)?;
    }
    print!("{}", render_comparison(std::slice::from_ref(&report)).table);
    Ok(())
}

pub fn compare(paths: &[PathBuf], json_out: Option<&Path>) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{} is not a metrics report: {e}", p.display())))?;
        rows.push(report);
    }
    let cmp = render_comparison(&rows);
    print!("{}", cmp.table);
    if let Some(p) = json_out {
        let mut text = cmp.json;
        text.push('\n');
        write_file(p, &text)?;
    }
    Ok(())
}

pub fn grad_check(corrupt: Option<&str>) -> Result<(), CliError> {
    let fault = match corrupt {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown op {name:?}")))?),
        None => None,
    };
    let report = grad_check_suite(fault)?;
    print!("{}", report.render());
    let failed = report.checks.iter().filter(|c| !c.passed()).count();
    println!(
        "{} checks, {failed} failed, worst relative error {:.3e} (tolerance {GRAD_CHECK_TOLERANCE:.0e})",
        report.checks.len(),
        report.worst()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{failed} gradient check(s) failed")))
    }
}

pub fn predict(checkpoint: &Path, input: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let text = match input {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?,
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Data(format!("cannot read stdin: {e}")))?;
            s
        }
    };
    let mut ids = Vec::new();
    let mut titles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line);
        if !tokens.is_empty() {
            ids.push(format!("line-{}", i + 1));
            titles.push(tokens);
        }
    }
    let tags = ck.tag_titles(&titles)?;
    let conll = write_conll(
        ids.iter()
            .zip(&titles)
            .zip(&tags)
            .map(|((id, t), g)| (id.as_str(), t.as_slice(), g.as_slice())),
    );
    match out {
        Some(p) => write_file(p, &conll),
        None => io::stdout()
            .write_all(conll.as_bytes())
            .map_err(|e| CliError::Data(format!("cannot write stdout: {e}"))),
    }
}
