//! Run configuration files.
//!
//! ```yaml
//! model:      { vocab_size, embed_dim, hidden_dim, init_scale }
//! train:      { optimizer, learning_rate, beta1, beta2, eps, batch_size, seed, max_steps, eval_interval }
//! data:       { corpus, validation, loss_trace, generate: {...}, validation_spec: {...} }
//! dataflex:   { train_type, component_name, warmup_step, update_step, update_times,
//!               init_mixture_proportions, component_params: {...} }
//! ```
//! (Written here in flow style for brevity; files use block style.)

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::yaml::{self, quote_if_needed, Node, Value};
use crate::data::ValidationMode;
use crate::error::{Error, Result};
use crate::types::{
    ComponentParams, DataConfig, GenerateConfig, MixtureWeights, ModelConfig, OptimizerKind,
    ParamValue, RunConfig, Schedule, TrainType, ValidationConfig,
};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn entries<'a>(node: &'a Node, section: &str) -> Result<&'a [(String, Node)]> {
    match &node.value {
        Value::Map(m) => Ok(m),
        Value::Empty => Ok(&[]),
        _ => Err(parse_err(node.line, format!("`{section}` must be a map"))),
    }
}

fn check_keys(map: &[(String, Node)], allowed: &[&str]) -> Result<()> {
    match map.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((key, node)) => Err(Error::UnknownKey {
            key: key.clone(),
            line: node.line,
        }),
        None => Ok(()),
    }
}

fn find<'a>(map: &'a [(String, Node)], key: &str) -> Option<&'a Node> {
    map.iter().find(|(k, _)| k == key).map(|(_, n)| n)
}

fn text<'a>(node: &'a Node, key: &str) -> Result<&'a str> {
    match &node.value {
        Value::Scalar { text, .. } => Ok(text),
        _ => Err(parse_err(node.line, format!("`{key}` must be a scalar"))),
    }
}

fn num<T: std::str::FromStr>(node: &Node, key: &str, what: &str) -> Result<T> {
    let t = text(node, key)?;
    t.parse()
        .map_err(|_| parse_err(node.line, format!("`{key}` must be {what}, got `{t}`")))
}

fn real(node: &Node, key: &str) -> Result<f64> {
    let x: f64 = num(node, key, "a number")?;
    if !x.is_finite() {
        return Err(parse_err(node.line, format!("`{key}` must be finite")));
    }
    Ok(x)
}

fn list<'a>(node: &'a Node, key: &str) -> Result<&'a [Node]> {
    match &node.value {
        Value::List(v) => Ok(v),
        _ => Err(parse_err(node.line, format!("`{key}` must be a list"))),
    }
}

fn reals(node: &Node, key: &str) -> Result<Vec<f64>> {
    list(node, key)?.iter().map(|n| real(n, key)).collect()
}

fn param_value(node: &Node, key: &str) -> Result<ParamValue> {
    match &node.value {
        Value::Scalar { text, quoted: true } => Ok(ParamValue::Text(text.clone())),
        Value::Scalar {
            text,
            quoted: false,
        } => Ok(match text.as_str() {
            "true" => ParamValue::Bool(true),
            "false" => ParamValue::Bool(false),
            t => match t.parse::<f64>() {
                Ok(x) if x.is_finite() => ParamValue::Number(x),
                _ => ParamValue::Text(t.to_string()),
            },
        }),
        Value::List(_) => Ok(ParamValue::Numbers(reals(node, key)?)),
        _ => Err(parse_err(
            node.line,
            format!("`{key}` must be a scalar or a list of numbers"),
        )),
    }
}

const TOP_KEYS: [&str; 4] = ["model", "data", "train", "dataflex"];
const MODEL_KEYS: [&str; 4] = ["vocab_size", "embed_dim", "hidden_dim", "init_scale"];
const TRAIN_KEYS: [&str; 9] = [
    "optimizer",
    "learning_rate",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "seed",
    "max_steps",
    "eval_interval",
];
const DATA_KEYS: [&str; 5] = [
    "corpus",
    "validation",
    "loss_trace",
    "generate",
    "validation_spec",
];
const GENERATE_KEYS: [&str; 5] = ["domains", "proportions", "n", "seed", "noise"];
const VALIDATION_KEYS: [&str; 5] = ["mode", "domain", "weights", "m", "seed"];
const DATAFLEX_KEYS: [&str; 7] = [
    "train_type",
    "component_name",
    "warmup_step",
    "update_step",
    "update_times",
    "init_mixture_proportions",
    "component_params",
];

fn parse_model(map: &[(String, Node)]) -> Result<ModelConfig> {
    check_keys(map, &MODEL_KEYS)?;
    let mut m = ModelConfig::default();
    for (k, n) in map {
        match k.as_str() {
            "vocab_size" => m.vocab_size = num(n, k, "an integer")?,
            "embed_dim" => m.embed_dim = num(n, k, "an integer")?,
            "hidden_dim" => m.hidden_dim = num(n, k, "an integer")?,
            "init_scale" => m.init_scale = real(n, k)?,
            _ => unreachable!(),
        }
    }
    Ok(m)
}

fn parse_train(map: &[(String, Node)], cfg: &mut RunConfig) -> Result<()> {
    check_keys(map, &TRAIN_KEYS)?;
    let o = &mut cfg.optim;
    for (k, n) in map {
        match k.as_str() {
            "optimizer" => {
                o.kind = match text(n, k)? {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(parse_err(n.line, format!("unknown optimizer `{other}`"))),
                }
            }
            "learning_rate" => o.learning_rate = real(n, k)?,
            "beta1" => o.beta1 = real(n, k)?,
            "beta2" => o.beta2 = real(n, k)?,
            "eps" => o.eps = real(n, k)?,
            "batch_size" => o.batch_size = num(n, k, "an integer")?,
            "seed" => cfg.seed = num(n, k, "an unsigned integer")?,
            "max_steps" => cfg.max_steps = num(n, k, "an integer")?,
            "eval_interval" => cfg.eval_interval = num(n, k, "an integer")?,
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn parse_generate(node: &Node) -> Result<GenerateConfig> {
    let map = entries(node, "generate")?;
    check_keys(map, &GENERATE_KEYS)?;
    let need = |key: &str| {
        find(map, key).ok_or_else(|| parse_err(node.line, format!("generate needs `{key}`")))
    };
    let domains = list(need("domains")?, "domains")?
        .iter()
        .map(|n| text(n, "domains").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    let proportions = reals(need("proportions")?, "proportions")?;
    let n = num(need("n")?, "n", "an integer")?;
    let seed = match find(map, "seed") {
        Some(s) => num(s, "seed", "an unsigned integer")?,
        None => 0,
    };
    let noise = match find(map, "noise") {
        Some(l) => list(l, "noise")?
            .iter()
            .map(|x| num(x, "noise", "a domain index"))
            .collect::<Result<Vec<usize>>>()?,
        None => Vec::new(),
    };
    Ok(GenerateConfig {
        domains,
        proportions,
        n,
        seed,
        noise,
    })
}

fn parse_validation(node: &Node) -> Result<ValidationConfig> {
    let map = entries(node, "validation_spec")?;
    check_keys(map, &VALIDATION_KEYS)?;
    let mode_node =
        find(map, "mode").ok_or_else(|| parse_err(node.line, "validation_spec needs `mode`"))?;
    let mode = match text(mode_node, "mode")? {
        "in_distribution" => ValidationMode::InDistribution,
        "single_domain" => {
            let d = find(map, "domain")
                .ok_or_else(|| parse_err(mode_node.line, "single_domain needs `domain`"))?;
            ValidationMode::SingleDomain(num(d, "domain", "a domain index")?)
        }
        "skewed" => {
            let w = find(map, "weights")
                .ok_or_else(|| parse_err(mode_node.line, "skewed needs `weights`"))?;
            ValidationMode::Skewed(reals(w, "weights")?)
        }
        other => return Err(Error::BadMode(format!("unknown validation mode `{other}`"))),
    };
    let m = match find(map, "m") {
        Some(n) => num(n, "m", "an integer")?,
        None => 200,
    };
    let seed = match find(map, "seed") {
        Some(n) => num(n, "seed", "an unsigned integer")?,
        None => 1,
    };
    Ok(ValidationConfig { mode, m, seed })
}

fn parse_data(map: &[(String, Node)]) -> Result<DataConfig> {
    check_keys(map, &DATA_KEYS)?;
    let mut d = DataConfig::default();
    for (k, n) in map {
        match k.as_str() {
            "corpus" => d.corpus = Some(PathBuf::from(text(n, k)?)),
            "validation" => d.validation = Some(PathBuf::from(text(n, k)?)),
            "loss_trace" => d.loss_trace = Some(PathBuf::from(text(n, k)?)),
            "generate" => d.generate = Some(parse_generate(n)?),
            "validation_spec" => d.validation_spec = Some(parse_validation(n)?),
            _ => unreachable!(),
        }
    }
    Ok(d)
}

fn parse_dataflex(node: &Node, cfg: &mut RunConfig) -> Result<()> {
    let map = entries(node, "dataflex")?;
    check_keys(map, &DATAFLEX_KEYS)?;
    let tt = find(map, "train_type")
        .ok_or_else(|| parse_err(node.line, "dataflex needs `train_type`"))?;
    cfg.train_type = text(tt, "train_type")?.parse::<TrainType>()?;
    let mut schedule = Schedule::default();
    for (k, n) in map {
        match k.as_str() {
            "train_type" => {}
            "component_name" => cfg.component_name = text(n, k)?.to_string(),
            "warmup_step" => schedule.warmup_step = num(n, k, "an integer")?,
            "update_step" => schedule.update_step = num(n, k, "an integer")?,
            "update_times" => schedule.update_times = num(n, k, "an integer")?,
            "init_mixture_proportions" => {
                cfg.init_mixture_proportions = Some(MixtureWeights::from_config(reals(n, k)?)?)
            }
            "component_params" => {
                let mut params = ComponentParams::new();
                for (pk, pn) in entries(n, k)? {
                    params.insert(pk.clone(), param_value(pn, pk)?);
                }
                cfg.component_params = params;
            }
            _ => unreachable!(),
        }
    }
    schedule.validate()?;
    cfg.schedule = schedule;
    Ok(())
}

/// Parses config text.
pub fn parse_config_str(source: &str) -> Result<RunConfig> {
    parse_sections(source, true)
}

fn parse_sections(source: &str, require_dataflex: bool) -> Result<RunConfig> {
    let root = yaml::parse(source)?;
    let top = entries(&root, "document")?;
    check_keys(top, &TOP_KEYS)?;
    let mut cfg = RunConfig::default();
    if let Some(n) = find(top, "model") {
        cfg.model = parse_model(entries(n, "model")?)?;
    }
    if let Some(n) = find(top, "train") {
        parse_train(entries(n, "train")?, &mut cfg)?;
    }
    if let Some(n) = find(top, "data") {
        cfg.data = parse_data(entries(n, "data")?)?;
    }
    match find(top, "dataflex") {
        Some(df) => parse_dataflex(df, &mut cfg)?,
        None if require_dataflex => return Err(parse_err(1, "missing `dataflex` section")),
        None => {}
    }
    Ok(cfg)
}

/// Reads and parses a config file. Relative data paths are resolved against
/// the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    load(path, true)
}

/// Like [`parse_config`] but the `dataflex` section may be omitted, for files
/// that only describe data.
pub fn parse_data_config(path: &Path) -> Result<RunConfig> {
    load(path, false)
}

fn load(path: &Path, require_dataflex: bool) -> Result<RunConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_sections(&source, require_dataflex)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for p in [
        &mut cfg.data.corpus,
        &mut cfg.data.validation,
        &mut cfg.data.loss_trace,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn floats(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn param_text(v: &ParamValue) -> String {
    match v {
        ParamValue::Bool(b) => b.to_string(),
        ParamValue::Number(x) => x.to_string(),
        ParamValue::Numbers(xs) => floats(xs),
        ParamValue::Text(s) => {
            let ambiguous = s == "true" || s == "false" || s.parse::<f64>().is_ok();
            if ambiguous {
                format!("\"{s}\"")
            } else {
                quote_if_needed(s)
            }
        }
    }
}

fn path_text(p: &Path) -> String {
    quote_if_needed(&p.to_string_lossy())
}

/// Renders `cfg` in the format [`parse_config_str`] reads.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let m = &cfg.model;
    let o = &cfg.optim;
    // writing to a String cannot fail
    let _ = writeln!(s, "model:");
    let _ = writeln!(s, "  vocab_size: {}", m.vocab_size);
    let _ = writeln!(s, "  embed_dim: {}", m.embed_dim);
    let _ = writeln!(s, "  hidden_dim: {}", m.hidden_dim);
    let _ = writeln!(s, "  init_scale: {}", m.init_scale);
    let _ = writeln!(s, "train:");
    let _ = writeln!(s, "  optimizer: {}", o.kind.as_str());
    let _ = writeln!(s, "  learning_rate: {}", o.learning_rate);
    let _ = writeln!(s, "  beta1: {}", o.beta1);
    let _ = writeln!(s, "  beta2: {}", o.beta2);
    let _ = writeln!(s, "  eps: {}", o.eps);
    let _ = writeln!(s, "  batch_size: {}", o.batch_size);
    let _ = writeln!(s, "  seed: {}", cfg.seed);
    let _ = writeln!(s, "  max_steps: {}", cfg.max_steps);
    let _ = writeln!(s, "  eval_interval: {}", cfg.eval_interval);
    let d = &cfg.data;
    if d.corpus.is_some()
        || d.validation.is_some()
        || d.loss_trace.is_some()
        || d.generate.is_some()
        || d.validation_spec.is_some()
    {
        let _ = writeln!(s, "data:");
        if let Some(p) = &d.corpus {
            let _ = writeln!(s, "  corpus: {}", path_text(p));
        }
        if let Some(p) = &d.validation {
            let _ = writeln!(s, "  validation: {}", path_text(p));
        }
        if let Some(p) = &d.loss_trace {
            let _ = writeln!(s, "  loss_trace: {}", path_text(p));
        }
        if let Some(g) = &d.generate {
            let names: Vec<String> = g.domains.iter().map(|n| quote_if_needed(n)).collect();
            let _ = writeln!(s, "  generate:");
            let _ = writeln!(s, "    domains: [{}]", names.join(", "));
            let _ = writeln!(s, "    proportions: {}", floats(&g.proportions));
            let _ = writeln!(s, "    n: {}", g.n);
            let _ = writeln!(s, "    seed: {}", g.seed);
            let noise: Vec<String> = g.noise.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "    noise: [{}]", noise.join(", "));
        }
        if let Some(v) = &d.validation_spec {
            let _ = writeln!(s, "  validation_spec:");
            match &v.mode {
                ValidationMode::InDistribution => {
                    let _ = writeln!(s, "    mode: in_distribution");
                }
                ValidationMode::SingleDomain(dom) => {
                    let _ = writeln!(s, "    mode: single_domain");
                    let _ = writeln!(s, "    domain: {dom}");
                }
                ValidationMode::Skewed(w) => {
                    let _ = writeln!(s, "    mode: skewed");
                    let _ = writeln!(s, "    weights: {}", floats(w));
                }
            }
            let _ = writeln!(s, "    m: {}", v.m);
            let _ = writeln!(s, "    seed: {}", v.seed);
        }
    }
    let _ = writeln!(s, "dataflex:");
    let _ = writeln!(s, "  train_type: {}", cfg.train_type.as_str());
    if !cfg.component_name.is_empty() {
        let _ = writeln!(
            s,
            "  component_name: {}",
            quote_if_needed(&cfg.component_name)
        );
    }
    let _ = writeln!(s, "  warmup_step: {}", cfg.schedule.warmup_step);
    let _ = writeln!(s, "  update_step: {}", cfg.schedule.update_step);
    let _ = writeln!(s, "  update_times: {}", cfg.schedule.update_times);
    if let Some(w) = &cfg.init_mixture_proportions {
        let _ = writeln!(s, "  init_mixture_proportions: {}", floats(w.as_slice()));
    }
    if !cfg.component_params.is_empty() {
        let _ = writeln!(s, "  component_params:");
        for (k, v) in cfg.component_params.iter() {
            let _ = writeln!(s, "    {}: {}", quote_if_needed(k), param_text(v));
        }
    }
    s
}
