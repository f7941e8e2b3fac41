//! Experiment configuration.
//!
//! Config files are a small TOML subset: top-level keys plus three flat
//! sections. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! seed = 0
//! out = "runs"
//! audit_labels = false          # also dump index,clean_label,noisy_label per cell
//!
//! [dataset]
//! source = "blobs"              # or "idx"
//! num_classes = 10
//! per_class = 50
//! dim = 20
//! spread = 0.5
//! separation = 3.0
//! # images = "train-images-idx3-ubyte"   (idx only)
//! # labels = "train-labels-idx1-ubyte"   (idx only)
//! # subsample = 1000                     (idx only)
//! # stratified = true                    (idx only)
//!
//! [sweep]
//! losses = ["cce", "mse", "rll:0.01", "norm-mse"]
//! etas = [0.0, 0.2, 0.4, 0.6]
//!
//! [training]
//! optimizer = "sgd"             # or "adam"
//! step_size = 0.01              # default 0.01 for sgd, 0.001 for adam
//! decay = 0.95                  # per epoch; default 0.95 for sgd, 1.0 for adam
//! epochs = 100
//! batch_size = 32
//! hidden = [512, 512]
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::data::BlobParams;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::optim::{OptimizerKind, DEFAULT_ADAM_STEP, DEFAULT_SGD_DECAY, DEFAULT_SGD_STEP};

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 512];
pub const DEFAULT_ETAS: [f64; 4] = [0.0, 0.2, 0.4, 0.6];
pub const DEFAULT_LOSSES: [&str; 4] = ["cce", "mse", "rll:0.01", "norm-mse"];

pub const DEFAULT_BLOBS: BlobParams = BlobParams {
    num_classes: 10,
    per_class: 50,
    dim: 20,
    spread: 0.5,
    separation: 3.0,
};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs(BlobParams),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        subsample: Option<usize>,
        stratified: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub losses: Vec<LossSpec>,
    pub etas: Vec<f64>,
    pub optimizer: OptimizerKind,
    pub step_size: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub audit_labels: bool,
    /// Keys that were set from the command line, as `key=value`.
    pub overrides: Vec<String>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub losses: Option<Vec<String>>,
    pub etas: Option<Vec<f64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub optimizer: Option<String>,
    pub step_size: Option<f64>,
}

const TOP_KEYS: [&str; 6] = ["seed", "out", "audit_labels", "dataset", "sweep", "training"];
const DATASET_KEYS: [&str; 10] = [
    "source",
    "num_classes",
    "per_class",
    "dim",
    "spread",
    "separation",
    "images",
    "labels",
    "subsample",
    "stratified",
];
const SWEEP_KEYS: [&str; 2] = ["losses", "etas"];
const TRAINING_KEYS: [&str; 6] = ["optimizer", "step_size", "decay", "epochs", "batch_size", "hidden"];

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        if self.name.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.name)
        }
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(k))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(bad) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(Error::config(self.key(bad), "unknown key"));
            }
        }
        Ok(())
    }

    fn uint(&self, k: &str) -> Result<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(Error::config(
                self.key(k),
                format!("expected a nonnegative integer, got {v}"),
            )),
        }
    }

    fn usize(&self, k: &str) -> Result<Option<usize>> {
        Ok(self.uint(k)?.map(|v| v as usize))
    }

    fn real(&self, k: &str) -> Result<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(Error::config(self.key(k), format!("expected a number, got {v}"))),
        }
    }

    fn string(&self, k: &str) -> Result<Option<String>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(Error::config(self.key(k), format!("expected a string, got {v}"))),
        }
    }

    fn boolean(&self, k: &str) -> Result<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(Error::config(self.key(k), format!("expected true or false, got {v}"))),
        }
    }

    fn array<T>(&self, k: &str, item: impl Fn(&Value) -> Option<T>) -> Result<Option<Vec<T>>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| item(v).ok_or_else(|| Error::config(self.key(k), format!("bad array element {v}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
            Some(v) => Err(Error::config(self.key(k), format!("expected an array, got {v}"))),
        }
    }
}

fn section<'a>(root: &'a Table, name: &'static str) -> Result<Section<'a>> {
    match root.get(name) {
        None => Ok(Section { name, table: None }),
        Some(Value::Table(t)) => Ok(Section { name, table: Some(t) }),
        Some(_) => Err(Error::config(name, "expected a [section]")),
    }
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_width(v: &Value) -> Option<usize> {
    match v {
        Value::Integer(i) if *i > 0 => Some(*i as usize),
        _ => None,
    }
}

/// Parses config text (or defaults when `text` is `None`) and applies
/// command-line overrides.
pub fn parse_config(text: Option<&str>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let root: Table = match text {
        Some(t) => t
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?,
        None => Table::new(),
    };
    let top = Section {
        name: "",
        table: Some(&root),
    };
    top.check_keys(&TOP_KEYS)?;
    let ds = section(&root, "dataset")?;
    ds.check_keys(&DATASET_KEYS)?;
    let sw = section(&root, "sweep")?;
    sw.check_keys(&SWEEP_KEYS)?;
    let tr = section(&root, "training")?;
    tr.check_keys(&TRAINING_KEYS)?;

    let mut applied = Vec::new();

    let source = ds.string("source")?.unwrap_or_else(|| "blobs".into());
    let dataset = match source.as_str() {
        "blobs" => DatasetSpec::Blobs(BlobParams {
            num_classes: ds.usize("num_classes")?.unwrap_or(DEFAULT_BLOBS.num_classes),
            per_class: ds.usize("per_class")?.unwrap_or(DEFAULT_BLOBS.per_class),
            dim: ds.usize("dim")?.unwrap_or(DEFAULT_BLOBS.dim),
            spread: ds.real("spread")?.unwrap_or(DEFAULT_BLOBS.spread),
            separation: ds.real("separation")?.unwrap_or(DEFAULT_BLOBS.separation),
        }),
        "idx" => {
            for k in ["num_classes", "per_class", "dim", "spread", "separation"] {
                if ds.get(k).is_some() {
                    return Err(Error::config(ds.key(k), "only valid for source = \"blobs\""));
                }
            }
            DatasetSpec::Idx {
                images: ds
                    .string("images")?
                    .ok_or_else(|| Error::config("dataset.images", "required for source = \"idx\""))?
                    .into(),
                labels: ds
                    .string("labels")?
                    .ok_or_else(|| Error::config("dataset.labels", "required for source = \"idx\""))?
                    .into(),
                subsample: ds.usize("subsample")?,
                stratified: ds.boolean("stratified")?.unwrap_or(true),
            }
        }
        other => {
            return Err(Error::config(
                "dataset.source",
                format!("expected \"blobs\" or \"idx\", got \"{other}\""),
            ))
        }
    };
    if let DatasetSpec::Blobs(_) = dataset {
        for k in ["images", "labels", "subsample", "stratified"] {
            if ds.get(k).is_some() {
                return Err(Error::config(ds.key(k), "only valid for source = \"idx\""));
            }
        }
    }

    let loss_names = match &overrides.losses {
        Some(l) => {
            applied.push(format!("losses={}", l.join(",")));
            l.clone()
        }
        None => sw
            .array("losses", |v| v.as_str().map(str::to_string))?
            .unwrap_or_else(|| DEFAULT_LOSSES.iter().map(|s| s.to_string()).collect()),
    };
    let losses = loss_names
        .iter()
        .map(|name| {
            let spec: LossSpec = name
                .parse()
                .map_err(|e: Error| Error::config("sweep.losses", e.to_string()))?;
            if !spec.is_differentiable() {
                return Err(Error::config("sweep.losses", format!("`{spec}` cannot be trained")));
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    if losses.is_empty() {
        return Err(Error::config("sweep.losses", "at least one loss is required"));
    }

    let etas = match &overrides.etas {
        Some(e) => {
            applied.push(format!(
                "etas={}",
                e.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
            ));
            e.clone()
        }
        None => sw.array("etas", as_real)?.unwrap_or_else(|| DEFAULT_ETAS.to_vec()),
    };
    if etas.is_empty() {
        return Err(Error::config("sweep.etas", "at least one noise rate is required"));
    }
    let eta_bound = match &dataset {
        DatasetSpec::Blobs(b) => (b.num_classes as f64 - 1.0) / b.num_classes as f64,
        // K is only known after loading; checked again by the sweep.
        DatasetSpec::Idx { .. } => 1.0,
    };
    if let Some(bad) = etas.iter().find(|e| !(0.0..eta_bound).contains(*e)) {
        return Err(Error::config(
            "sweep.etas",
            format!("noise rate {bad} outside [0, {eta_bound})"),
        ));
    }

    let optimizer: OptimizerKind = match &overrides.optimizer {
        Some(o) => {
            applied.push(format!("optimizer={o}"));
            o.parse()
                .map_err(|e: Error| Error::config("training.optimizer", e.to_string()))?
        }
        None => match tr.string("optimizer")? {
            Some(o) => o
                .parse()
                .map_err(|e: Error| Error::config("training.optimizer", e.to_string()))?,
            None => OptimizerKind::Sgd,
        },
    };
    let step_size = match overrides.step_size {
        Some(s) => {
            applied.push(format!("step_size={s}"));
            s
        }
        None => tr.real("step_size")?.unwrap_or(match optimizer {
            OptimizerKind::Sgd => DEFAULT_SGD_STEP,
            OptimizerKind::Adam => DEFAULT_ADAM_STEP,
        }),
    };
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(Error::config(
            "training.step_size",
            format!("must be positive, got {step_size}"),
        ));
    }
    let decay = tr.real("decay")?.unwrap_or(match optimizer {
        OptimizerKind::Sgd => DEFAULT_SGD_DECAY,
        OptimizerKind::Adam => 1.0,
    });
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::config(
            "training.decay",
            format!("must lie in (0, 1], got {decay}"),
        ));
    }
    let epochs = match overrides.epochs {
        Some(e) => {
            applied.push(format!("epochs={e}"));
            e
        }
        None => tr.usize("epochs")?.unwrap_or(DEFAULT_EPOCHS),
    };
    if epochs == 0 {
        return Err(Error::config("training.epochs", "must be at least 1"));
    }
    let batch_size = match overrides.batch_size {
        Some(b) => {
            applied.push(format!("batch_size={b}"));
            b
        }
        None => tr.usize("batch_size")?.unwrap_or(DEFAULT_BATCH_SIZE),
    };
    if batch_size == 0 {
        return Err(Error::config("training.batch_size", "must be at least 1"));
    }
    let hidden = match &overrides.hidden {
        Some(h) => {
            applied.push(format!(
                "hidden={}",
                h.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            ));
            h.clone()
        }
        None => tr.array("hidden", as_width)?.unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
    };
    if hidden.contains(&0) {
        return Err(Error::config("training.hidden", "widths must be positive"));
    }

    let seed = match overrides.seed {
        Some(s) => {
            applied.push(format!("seed={s}"));
            s
        }
        None => top.uint("seed")?.unwrap_or(0),
    };
    let out = match &overrides.out {
        Some(o) => {
            applied.push(format!("out={}", o.display()));
            o.clone()
        }
        None => top
            .string("out")?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs")),
    };
    let audit_labels = top.boolean("audit_labels")?.unwrap_or(false);

    Ok(ExperimentConfig {
        dataset,
        losses,
        etas,
        optimizer,
        step_size,
        decay,
        epochs,
        batch_size,
        hidden,
        seed,
        out,
        audit_labels,
        overrides: applied,
    })
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            parse_config(Some(&text), overrides)
        }
        None => parse_config(None, overrides),
    }
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn real(v: f64) -> String {
    // Debug keeps a decimal point, so the value re-parses as a float.
    format!("{v:?}")
}

impl ExperimentConfig {
    /// The fully resolved configuration in config-file syntax. Feeding it back
    /// through [`parse_config`] reproduces `self` (apart from `overrides`).
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "out = {}", quote(&self.out.to_string_lossy())).unwrap();
        writeln!(s, "audit_labels = {}", self.audit_labels).unwrap();
        s.push_str("\n[dataset]\n");
        match &self.dataset {
            DatasetSpec::Blobs(b) => {
                s.push_str("source = \"blobs\"\n");
                writeln!(s, "num_classes = {}", b.num_classes).unwrap();
                writeln!(s, "per_class = {}", b.per_class).unwrap();
                writeln!(s, "dim = {}", b.dim).unwrap();
                writeln!(s, "spread = {}", real(b.spread)).unwrap();
                writeln!(s, "separation = {}", real(b.separation)).unwrap();
            }
            DatasetSpec::Idx {
                images,
                labels,
                subsample,
                stratified,
            } => {
                s.push_str("source = \"idx\"\n");
                writeln!(s, "images = {}", quote(&images.to_string_lossy())).unwrap();
                writeln!(s, "labels = {}", quote(&labels.to_string_lossy())).unwrap();
                if let Some(n) = subsample {
                    writeln!(s, "subsample = {n}").unwrap();
                }
                writeln!(s, "stratified = {stratified}").unwrap();
            }
        }
        s.push_str("\n[sweep]\n");
        let losses: Vec<String> = self.losses.iter().map(|l| quote(&l.to_string())).collect();
        writeln!(s, "losses = [{}]", losses.join(", ")).unwrap();
        let etas: Vec<String> = self.etas.iter().map(|e| real(*e)).collect();
        writeln!(s, "etas = [{}]", etas.join(", ")).unwrap();
        s.push_str("\n[training]\n");
        writeln!(s, "optimizer = \"{}\"", self.optimizer).unwrap();
        writeln!(s, "step_size = {}", real(self.step_size)).unwrap();
        writeln!(s, "decay = {}", real(self.decay)).unwrap();
        writeln!(s, "epochs = {}", self.epochs).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        writeln!(s, "hidden = [{}]", hidden.join(", ")).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(Some(text), &Overrides::default())
    }

    fn key_of(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, parse_config(None, &Overrides::default()).unwrap());
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.step_size, 0.01);
        assert_eq!(c.decay, 0.95);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.hidden, vec![512, 512]);
        assert_eq!(c.etas, vec![0.0, 0.2, 0.4, 0.6]);
        assert_eq!(c.losses.len(), 4);
        assert_eq!(c.dataset, DatasetSpec::Blobs(DEFAULT_BLOBS));
        assert!(c.overrides.is_empty());
    }

    #[test]
    fn adam_defaults() {
        let c = parse("[training]\noptimizer = \"adam\"\n").unwrap();
        assert_eq!(c.step_size, 0.001);
        assert_eq!(c.decay, 1.0);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            key_of(parse("[training]\nepochz = 3\n").unwrap_err()),
            "training.epochz"
        );
        assert_eq!(key_of(parse("colour = 1\n").unwrap_err()), "colour");
        assert_eq!(key_of(parse("[sweep]\netas = [0.95]\n").unwrap_err()), "sweep.etas");
        assert_eq!(
            key_of(parse("[sweep]\nlosses = [\"hinge\"]\n").unwrap_err()),
            "sweep.losses"
        );
        assert_eq!(
            key_of(parse("[sweep]\nlosses = [\"norm-cce\"]\n").unwrap_err()),
            "sweep.losses"
        );
        assert_eq!(
            key_of(parse("[sweep]\nlosses = [\"zero-one\"]\n").unwrap_err()),
            "sweep.losses"
        );
        assert_eq!(
            key_of(parse("[training]\nepochs = \"ten\"\n").unwrap_err()),
            "training.epochs"
        );
        assert_eq!(
            key_of(parse("[training]\nepochs = 0\n").unwrap_err()),
            "training.epochs"
        );
        assert_eq!(
            key_of(parse("[dataset]\nsource = \"idx\"\n").unwrap_err()),
            "dataset.images"
        );
        assert_eq!(
            key_of(parse("[dataset]\nimages = \"x\"\n").unwrap_err()),
            "dataset.images"
        );
        assert_eq!(key_of(parse("this is not toml").unwrap_err()), "config");
    }

    #[test]
    fn eta_bound_follows_num_classes() {
        assert!(parse("[dataset]\nnum_classes = 2\n[sweep]\netas = [0.49]\n").is_ok());
        assert!(parse("[dataset]\nnum_classes = 2\n[sweep]\netas = [0.5]\n").is_err());
        assert!(parse("[sweep]\netas = [0.89]\n").is_ok());
    }

    #[test]
    fn overrides_win_and_are_recorded() {
        let o = Overrides {
            epochs: Some(7),
            losses: Some(vec!["rll:0.1".into()]),
            ..Default::default()
        };
        let c = parse_config(Some("[training]\nepochs = 50\n"), &o).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.losses, vec![LossSpec::rll(0.1).unwrap()]);
        assert!(c.overrides.contains(&"epochs=7".to_string()));
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "seed = 9\n[dataset]\nper_class = 5\n[sweep]\nlosses = [\"rll:0.1\", \"norm-mae\"]\netas = [0, 0.3]\n[training]\noptimizer = \"adam\"\nhidden = [8]\n";
        let c = parse(text).unwrap();
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
        let idx = parse("[dataset]\nsource = \"idx\"\nimages = \"a\"\nlabels = \"b\"\nsubsample = 100\n").unwrap();
        assert_eq!(parse(&idx.to_toml()).unwrap(), idx);
    }
}
