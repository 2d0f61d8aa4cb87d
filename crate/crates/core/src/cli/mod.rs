//! The `secaps` command line.
//!
//! ```text
//! secaps train     --data-dir d/ [--config c.cfg] [--checkpoint m.ckpt] [--metrics m.json] [model/train keys]
//! secaps eval      --checkpoint m.ckpt --data-dir d/ [--split test] [--buckets] [--out -]
//! secaps predict   --checkpoint m.ckpt [--input -] [--output -]
//! secaps gen-synth --out d/ [--num-classes 20] [--train-size 2000] [--seed 42] ...
//! secaps gradcheck [--seeds 100] [--model-seeds 34]
//! secaps sweep     --data-dir d/ --param caps_num (--values 2,4,8 | --range 2:10:2) [--out -]
//! ```
//!
//! Every key can come from a `key = value` file passed with `--config` or
//! from a flag of the same name (dashes and underscores are
//! interchangeable). Flags win over the file, the file over defaults. The
//! resolved settings are logged to standard error.

mod settings;

pub use settings::{parse_config, Settings, Source, UsageError};

use std::fs;
use std::io::{self, BufRead, Write};

use serde_json::json;

use crate::data::{
    embedding_matrix, encode_tokens, gen_synthetic, load_embeddings, Dataset, SyntheticSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::model::{predict, ModelConfig, ModelParams, SeqCapsConfig};
use crate::train::{
    bucketize_charges, evaluate_split, train_encoded, Checkpoint, EncodedSplit, MetricsReport, TrainConfig,
    TrainOutcome,
};

pub const USAGE: &str = "usage: secaps <train|eval|predict|gen-synth|gradcheck|sweep> [--config FILE] [--key value ...]";

enum Failure {
    Usage(UsageError),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e)
    }
}

/// Runs a subcommand with the process's standard streams and returns the
/// exit code: 0 on success, 1 on a runtime failure, 2 on a usage error.
pub fn run_cli(argv: &[String]) -> i32 {
    run_cli_with(argv, &mut io::stdout().lock(), &mut io::stderr().lock())
}

pub fn run_cli_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(argv, out, err) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            let _ = writeln!(err, "error: {e}\n{USAGE}");
            2
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let Some((command, rest)) = argv.split_first() else {
        return Err(UsageError("missing subcommand".into()).into());
    };
    let (defaults, switches): (Vec<(&str, String)>, &[&str]) = match command.as_str() {
        "train" => (train_keys(true), &["eval_train"]),
        "sweep" => (sweep_keys(), &["eval_train"]),
        "eval" => (eval_keys(), &["buckets"]),
        "predict" => (predict_keys(), &[]),
        "gen-synth" => (synth_keys(), &[]),
        "gradcheck" => (vec![("seeds", "100".into()), ("model_seeds", "34".into())], &[]),
        other => return Err(UsageError(format!("unknown subcommand `{other}`")).into()),
    };
    let settings = Settings::resolve(rest, &defaults, switches)??;
    write!(err, "# resolved {command} config\n{}", settings.render()).map_err(io_err)?;
    match command.as_str() {
        "train" => cmd_train(&settings, out, err),
        "sweep" => cmd_sweep(&settings, out, err),
        "eval" => cmd_eval(&settings, out),
        "predict" => cmd_predict(&settings, out),
        "gen-synth" => cmd_gen_synth(&settings, err),
        _ => cmd_gradcheck(&settings, out),
    }
    .map_err(Failure::Run)
}

fn io_err(e: io::Error) -> Error {
    Error::io("<stream>", e)
}

fn joined<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn model_keys() -> Vec<(&'static str, String)> {
    let m = ModelConfig::new(1, 1);
    let t = TrainConfig::default();
    vec![
        ("embed_dim", m.embed_dim.to_string()),
        ("max_len", m.max_len.to_string()),
        ("caps_num", joined(m.layers.iter().map(|l| l.caps_num))),
        ("caps_dim", joined(m.layers.iter().map(|l| l.caps_dim))),
        ("routing_iters", joined(m.layers.iter().map(|l| l.routing_iters))),
        ("lstm_hidden", joined(m.layers.iter().map(|l| l.lstm_hidden))),
        ("fc1_dim", m.fc1_dim.to_string()),
        ("fc2_dim", m.fc2_dim.to_string()),
        ("residual_mode", m.residual_mode.to_string()),
        ("focal_gamma", m.focal_gamma.to_string()),
        ("focal_alpha", m.focal_alpha.to_string()),
        ("forget_bias", m.forget_bias.to_string()),
        ("attention_init", m.attention_init.to_string()),
        ("embedding_init", m.embedding_init.to_string()),
        ("learning_rate", t.learning_rate.to_string()),
        ("beta1", t.beta1.to_string()),
        ("beta2", t.beta2.to_string()),
        ("epsilon", t.epsilon.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("epochs", t.epochs.to_string()),
        ("seed", t.seed.to_string()),
        ("eval_every", t.eval_every.to_string()),
        ("eval_train", t.eval_train.to_string()),
        ("data_dir", String::new()),
        ("embeddings", String::new()),
        ("min_count", "1".into()),
    ]
}

fn train_keys(outputs: bool) -> Vec<(&'static str, String)> {
    let mut keys = model_keys();
    if outputs {
        keys.push(("checkpoint", "model.ckpt".into()));
        keys.push(("metrics", "metrics.json".into()));
    }
    keys
}

fn sweep_keys() -> Vec<(&'static str, String)> {
    let mut keys = model_keys();
    keys.extend([
        ("param", String::new()),
        ("values", String::new()),
        ("range", String::new()),
        ("out", "-".into()),
    ]);
    keys
}

fn eval_keys() -> Vec<(&'static str, String)> {
    vec![
        ("checkpoint", String::new()),
        ("data_dir", String::new()),
        ("split", "test".into()),
        ("buckets", "false".into()),
        ("out", "-".into()),
    ]
}

fn predict_keys() -> Vec<(&'static str, String)> {
    vec![
        ("checkpoint", String::new()),
        ("input", "-".into()),
        ("output", "-".into()),
    ]
}

fn synth_keys() -> Vec<(&'static str, String)> {
    let d = SyntheticSpec::default();
    vec![
        ("out", String::new()),
        ("num_classes", d.num_classes.to_string()),
        ("train_size", d.train_size.to_string()),
        ("seed", d.seed.to_string()),
        ("vocab_size", d.vocab_size.to_string()),
        ("zipf_exponent", d.zipf_exponent.to_string()),
        ("eval_per_class", d.eval_per_class.to_string()),
        ("min_len", d.length_range.0.to_string()),
        ("max_len", d.length_range.1.to_string()),
        ("signature_tokens", d.signature_tokens.to_string()),
        ("signal", d.signal.to_string()),
    ]
}

/// Model configuration from settings. A single value in a per-layer list
/// applies to every layer.
pub fn model_config(s: &Settings, vocab_size: usize, num_classes: usize) -> Result<ModelConfig> {
    let lists = [
        s.list::<usize>("caps_num")?,
        s.list::<usize>("caps_dim")?,
        s.list::<usize>("routing_iters")?,
        s.list::<usize>("lstm_hidden")?,
    ];
    let depth = lists.iter().map(Vec::len).max().unwrap_or(1);
    if lists.iter().any(|l| l.len() != 1 && l.len() != depth) {
        return Err(Error::Config(
            "caps_num, caps_dim, routing_iters and lstm_hidden must list one value or one per layer".into(),
        ));
    }
    let at = |l: &Vec<usize>, i: usize| if l.len() == 1 { l[0] } else { l[i] };
    let mut c = ModelConfig::new(vocab_size, num_classes);
    c.layers = (0..depth)
        .map(|i| SeqCapsConfig {
            caps_num: at(&lists[0], i),
            caps_dim: at(&lists[1], i),
            routing_iters: at(&lists[2], i),
            lstm_hidden: at(&lists[3], i),
        })
        .collect();
    c.embed_dim = s.get("embed_dim")?;
    c.max_len = s.get("max_len")?;
    c.fc1_dim = s.get("fc1_dim")?;
    c.fc2_dim = s.get("fc2_dim")?;
    c.residual_mode = s.get("residual_mode")?;
    c.focal_gamma = s.get("focal_gamma")?;
    c.focal_alpha = s.get("focal_alpha")?;
    c.forget_bias = s.get("forget_bias")?;
    c.attention_init = s.get("attention_init")?;
    c.embedding_init = s.get("embedding_init")?;
    c.seed = s.get("seed")?;
    c.validate()?;
    Ok(c)
}

pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    let c = TrainConfig {
        learning_rate: s.get("learning_rate")?,
        beta1: s.get("beta1")?,
        beta2: s.get("beta2")?,
        epsilon: s.get("epsilon")?,
        batch_size: s.get("batch_size")?,
        epochs: s.get("epochs")?,
        seed: s.get("seed")?,
        eval_every: s.get("eval_every")?,
        eval_train: s.get("eval_train")?,
    };
    c.validate()?;
    Ok(c)
}

struct Prepared {
    vocab: Vocabulary,
    labels: Vec<String>,
    train: EncodedSplit,
    valid: EncodedSplit,
    test: EncodedSplit,
    frequencies: Vec<usize>,
}

fn prepare(s: &Settings) -> Result<Prepared> {
    let dataset = Dataset::load_dir(s.required("data_dir")?)?;
    let vocab = Vocabulary::build(&dataset.train, s.get("min_count")?);
    let labels = dataset.labels().to_vec();
    let max_len: usize = s.get("max_len")?;
    Ok(Prepared {
        train: EncodedSplit::encode(&dataset.train, &vocab, &labels, max_len)?,
        valid: EncodedSplit::encode(&dataset.valid, &vocab, &labels, max_len)?,
        test: EncodedSplit::encode(&dataset.test, &vocab, &labels, max_len)?,
        frequencies: dataset.train_frequencies(),
        vocab,
        labels,
    })
}

fn initial_params(s: &Settings, config: &ModelConfig, vocab: &Vocabulary) -> Result<ModelParams> {
    let mut params = ModelParams::init(config)?;
    let path = s.raw("embeddings");
    if !path.is_empty() {
        let table = load_embeddings(path, config.embed_dim)?;
        let matrix = embedding_matrix(&table, vocab, config.embed_dim, config.seed)?;
        let i = params.index_of("embedding").expect("embedding parameter");
        *params.tensor_mut(i) = matrix;
    }
    Ok(params)
}

fn fit(s: &Settings, data: &Prepared, config: &ModelConfig, err: &mut dyn Write) -> Result<TrainOutcome> {
    let outcome = train_encoded(&data.train, &data.valid, initial_params(s, config, &data.vocab)?, config, &train_config(s)?)?;
    for e in &outcome.log {
        let valid = e.valid.as_ref().map_or(String::from("-"), |r| format!("{:.4}", r.macro_f1));
        writeln!(err, "epoch {:>3} loss {:.6} valid_mf {valid}", e.epoch, e.mean_loss).map_err(io_err)?;
    }
    Ok(outcome)
}

fn open_output(path: &str) -> Result<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(io::stdout()))
    } else {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Box::new(io::BufWriter::new(f)))
    }
}

fn emit(path: &str, out: &mut dyn Write, text: &str) -> Result<()> {
    if path == "-" {
        out.write_all(text.as_bytes()).map_err(io_err)
    } else {
        let mut w = open_output(path)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }
}

fn report_json(report: MetricsReport, labels: &[String], frequencies: Option<&[usize]>) -> Result<serde_json::Value> {
    let report = report.with_labels(labels);
    let buckets = frequencies.map(|f| bucketize_charges(f, &report.class_f1())).transpose()?;
    Ok(report.to_json(buckets.as_ref()))
}

fn cmd_train(s: &Settings, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let data = prepare(s)?;
    let config = model_config(s, data.vocab.len(), data.labels.len())?;
    let outcome = fit(s, &data, &config, err)?;

    // Score what the checkpoint will hold, so `eval` reproduces these numbers.
    let mut params = outcome.params.clone();
    params.round_to_f32();
    let valid = evaluate_split(&data.valid, &params, &config)?;
    let test = evaluate_split(&data.test, &params, &config)?;
    let checkpoint = Checkpoint {
        params,
        config,
        labels: data.labels.clone(),
        vocabulary: data.vocab.tokens().to_vec(),
    };
    let ckpt_path = s.required("checkpoint")?;
    checkpoint.save(&ckpt_path)?;

    let summary = format!(
        "best epoch {} test acc {:.4} mp {:.4} mr {:.4} mf {:.4}\n",
        outcome.best_epoch, test.accuracy, test.macro_precision, test.macro_recall, test.macro_f1
    );
    let doc = json!({
        "best_epoch": outcome.best_epoch,
        "checkpoint": ckpt_path,
        "valid": report_json(valid, &data.labels, None)?,
        "test": report_json(test, &data.labels, Some(&data.frequencies))?,
        "epochs": outcome.log.iter().map(|e| json!({
            "epoch": e.epoch,
            "mean_loss": e.mean_loss,
            "valid_macro_f1": e.valid.as_ref().map(|r| r.macro_f1),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    emit(&s.required("metrics")?, out, &text)?;
    out.write_all(summary.as_bytes()).map_err(io_err)?;
    Ok(0)
}

fn cmd_eval(s: &Settings, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(s.required("checkpoint")?)?;
    let dataset = Dataset::load_dir(s.required("data_dir")?)?;
    let vocab = Vocabulary::from_list(ck.vocabulary.clone())?;
    let split = EncodedSplit::encode(dataset.split(s.raw("split"))?, &vocab, &ck.labels, ck.config.max_len)?;
    let report = evaluate_split(&split, &ck.params, &ck.config)?;
    let frequencies = s.get::<bool>("buckets")?.then(|| {
        ck.labels
            .iter()
            .map(|l| dataset.train.iter().filter(|e| &e.charge == l).count())
            .collect::<Vec<_>>()
    });
    let doc = report_json(report, &ck.labels, frequencies.as_deref())?;
    emit(s.raw("out"), out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(0)
}

fn cmd_predict(s: &Settings, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(s.required("checkpoint")?)?;
    let vocab = Vocabulary::from_list(ck.vocabulary.clone())?;
    let input = s.raw("input");
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(io::BufReader::new(io::stdin()))
    } else {
        Box::new(io::BufReader::new(fs::File::open(input).map_err(|e| Error::io(input, e))?))
    };
    let mut text = String::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(input, e))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(Error::Malformed {
                line: i + 1,
                detail: "empty document".into(),
            });
        }
        let ids = encode_tokens(&tokens, &vocab, ck.config.max_len)?;
        let class = predict(&ids, &ck.params, &ck.config)?;
        let label = ck.labels.get(class).map_or_else(|| class.to_string(), Clone::clone);
        text.push_str(&label);
        text.push('\n');
    }
    emit(s.raw("output"), out, &text)?;
    Ok(0)
}

fn cmd_gen_synth(s: &Settings, err: &mut dyn Write) -> Result<i32> {
    let spec = SyntheticSpec {
        num_classes: s.get("num_classes")?,
        vocab_size: s.get("vocab_size")?,
        zipf_exponent: s.get("zipf_exponent")?,
        train_size: s.get("train_size")?,
        eval_per_class: s.get("eval_per_class")?,
        seed: s.get("seed")?,
        length_range: (s.get("min_len")?, s.get("max_len")?),
        signature_tokens: s.get("signature_tokens")?,
        signal: s.get("signal")?,
    };
    let dir = s.required("out")?;
    let dataset = gen_synthetic(&spec)?;
    dataset.write_dir(&dir)?;
    let counts = dataset.train_frequencies();
    writeln!(
        err,
        "wrote {} train, {} valid, {} test examples to {dir}; train counts {counts:?}",
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len()
    )
    .map_err(io_err)?;
    Ok(0)
}

fn cmd_gradcheck(s: &Settings, out: &mut dyn Write) -> Result<i32> {
    let outcomes = run_suite(s.get("seeds")?, s.get("model_seeds")?)?;
    for o in &outcomes {
        writeln!(
            out,
            "{} {} cases={} max_rel_error={:.3e} tolerance={:.0e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.cases,
            o.max_rel_error,
            o.tolerance
        )
        .map_err(io_err)?;
    }
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 1 })
}

/// Sweep values from `values = a,b,c` or `range = lo:hi[:step]` (inclusive).
pub fn sweep_values(s: &Settings) -> Result<Vec<usize>> {
    match (s.raw("values"), s.raw("range")) {
        ("", "") => Err(Error::Config("sweep needs values or range".into())),
        (_, "") => s.list("values"),
        ("", range) => {
            let parts: Vec<usize> = range
                .split(':')
                .map(|p| p.trim().parse().map_err(|e| Error::Config(format!("range = `{range}`: {e}"))))
                .collect::<Result<_>>()?;
            let (lo, hi, step) = match parts[..] {
                [lo, hi] => (lo, hi, 1),
                [lo, hi, step] if step > 0 => (lo, hi, step),
                _ => return Err(Error::Config(format!("range = `{range}`: expected lo:hi or lo:hi:step"))),
            };
            Ok((lo..=hi).step_by(step).collect())
        }
        _ => Err(Error::Config("give either values or range, not both".into())),
    }
}

fn cmd_sweep(s: &Settings, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let param = s.required("param")?;
    if param != "caps_num" && param != "caps_dim" {
        return Err(Error::Config(format!("param must be caps_num or caps_dim, got `{param}`")));
    }
    let values = sweep_values(s)?;
    let data = prepare(s)?;
    let base = model_config(s, data.vocab.len(), data.labels.len())?;
    let mut csv = String::from("param,value,mp,mr,mf\n");
    for value in values {
        let mut config = base.clone();
        for layer in &mut config.layers {
            match param.as_str() {
                "caps_num" => layer.caps_num = value,
                _ => layer.caps_dim = value,
            }
        }
        config.validate()?;
        writeln!(err, "# {param} = {value}").map_err(io_err)?;
        let outcome = fit(s, &data, &config, err)?;
        let r = evaluate_split(&data.test, &outcome.params, &config)?;
        csv.push_str(&format!(
            "{param},{value},{:.6},{:.6},{:.6}\n",
            r.macro_precision, r.macro_recall, r.macro_f1
        ));
    }
    emit(s.raw("out"), out, &csv)?;
    Ok(0)
}

