use std::path::{Path, PathBuf};

use crate::bert::BertConfig;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::ModelConfig;

/// Everything a run needs, read from `key=value` text. Model keys live
/// under `model.` and classifier keys under `bert.`; vocabulary sizes come
/// from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Parallel corpus prefix (`<prefix>.src.tsv`, `<prefix>.tgt.txt`) or a
    /// labelled-classification file.
    pub corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// POS inventory file, one tag per line; the universal set otherwise.
    pub tagset: Option<PathBuf>,
    pub model: ModelConfig,
    pub bert: BertConfig,
    pub num_merges: usize,
    /// Optimizer updates.
    pub steps: usize,
    pub batch_tokens: usize,
    pub accumulation: usize,
    pub seed: u64,
    pub data_fraction: f64,
    /// Evaluate every this many updates; 0 evaluates only at the end.
    pub eval_every: usize,
    pub warmup: u64,
    pub lr_factor: f64,
    pub max_decode_len: usize,
    pub fractions: Vec<f64>,
    /// Stop early once the training-set NLL falls below this.
    pub target_loss: Option<f64>,
    pub bert_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            eval_corpus: None,
            merges: None,
            checkpoint: None,
            output: None,
            tagset: None,
            model: ModelConfig::toy(0, 0),
            bert: BertConfig::toy(0, 0, 2),
            num_merges: 200,
            steps: 2000,
            batch_tokens: 512,
            accumulation: 2,
            seed: 1,
            data_fraction: 1.0,
            eval_every: 0,
            warmup: 400,
            lr_factor: 1.0,
            max_decode_len: 64,
            fractions: vec![0.1, 0.25, 0.5, 1.0],
            target_loss: None,
            bert_lr: 1e-3,
            epochs: 3,
            batch_size: 32,
        }
    }
}

const KEYS: [&str; 21] = [
    "corpus",
    "eval_corpus",
    "merges",
    "checkpoint",
    "output",
    "num_merges",
    "steps",
    "batch_tokens",
    "accumulation",
    "seed",
    "data_fraction",
    "eval_every",
    "warmup",
    "lr_factor",
    "max_decode_len",
    "fractions",
    "target_loss",
    "bert_lr",
    "epochs",
    "batch_size",
    "tagset",
];

fn valid_fraction(f: f64) -> Result<f64> {
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(Error::Config(format!("data fraction {f} outside (0, 1]")))
    }
}

impl RunConfig {
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        if let Some(bad) = m
            .keys()
            .find(|k| !KEYS.contains(k) && !k.starts_with("model.") && !k.starts_with("bert."))
        {
            return Err(Error::Config(format!("unknown key {bad}")));
        }
        let mut c = RunConfig::default();
        let path = |k: &str| m.get_str(k).map(PathBuf::from);
        c.corpus = path("corpus");
        c.eval_corpus = path("eval_corpus");
        c.merges = path("merges");
        c.checkpoint = path("checkpoint");
        c.output = path("output");
        c.tagset = path("tagset");
        macro_rules! read {
            ($($field:ident),*) => {$(
                if let Some(v) = m.get(stringify!($field))? { c.$field = v; }
            )*};
        }
        read!(num_merges, steps, batch_tokens, accumulation, seed, data_fraction, eval_every, warmup, lr_factor,
              max_decode_len, bert_lr, epochs, batch_size);
        c.target_loss = m.get("target_loss")?;
        if let Some(list) = m.get_str("fractions") {
            c.fractions = list
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad fraction {f:?}")))
                        .and_then(valid_fraction)
                })
                .collect::<Result<_>>()?;
        }
        c.model = ModelConfig::from_manifest(&m.section("model."), &c.model)?;
        c.bert = BertConfig::from_manifest(&m.section("bert."), &c.bert)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_manifest(&Manifest::parse(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        valid_fraction(self.data_fraction)?;
        if self.fractions.is_empty() {
            return Err(Error::Config("fractions list is empty".into()));
        }
        if self.batch_tokens == 0 || self.accumulation == 0 || self.batch_size == 0 {
            return Err(Error::Config("batch_tokens, accumulation and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Every setting as `key=value` lines, recorded next to each output.
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        let paths = [
            ("corpus", &self.corpus),
            ("eval_corpus", &self.eval_corpus),
            ("merges", &self.merges),
            ("checkpoint", &self.checkpoint),
            ("output", &self.output),
            ("tagset", &self.tagset),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                m.set(k, p.display());
            }
        }
        m.set("num_merges", self.num_merges);
        m.set("steps", self.steps);
        m.set("batch_tokens", self.batch_tokens);
        m.set("accumulation", self.accumulation);
        m.set("seed", self.seed);
        m.set("data_fraction", self.data_fraction);
        m.set("eval_every", self.eval_every);
        m.set("warmup", self.warmup);
        m.set("lr_factor", self.lr_factor);
        m.set("max_decode_len", self.max_decode_len);
        let fractions: Vec<String> = self.fractions.iter().map(f64::to_string).collect();
        m.set("fractions", fractions.join(","));
        if let Some(t) = self.target_loss {
            m.set("target_loss", t);
        }
        m.set("bert_lr", self.bert_lr);
        m.set("epochs", self.epochs);
        m.set("batch_size", self.batch_size);
        let mut model = Manifest::new();
        self.model.write_manifest(&mut model);
        let mut bert = Manifest::new();
        self.bert.write_manifest(&mut bert);
        for (prefix, section) in [("model.", model), ("bert.", bert)] {
            for k in section.keys() {
                if !k.ends_with("vocab_size") {
                    m.set(&format!("{prefix}{k}"), section.get_str(k).unwrap_or_default());
                }
            }
        }
        m
    }
}
