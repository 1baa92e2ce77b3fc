use super::config::{HeadKind, TrainConfig};
use super::eval::{comparison_table, embed_all, evaluate_embeddings, mean_pixel_embedding, Embedded, EvalProtocol, EvalReport, EvalResults};
use super::model::GaitModel;
use super::trainer::{label_map, train, RunFiles};
use crate::numerics::Parameterized;
use crate::data::{synth_gait_dataset, ClipRecord, SynthConfig};
use crate::error::{Error, Result};

/// How the synthetic set is divided between training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Disjoint training and test subjects (open set).
    Subjects,
    /// Every subject is trained on its gallery sequences only; probe
    /// sequences stay unseen (closed set).
    Sequences,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subjects" => Ok(SplitMode::Subjects),
            "sequences" => Ok(SplitMode::Sequences),
            _ => Err(Error::Config(format!("unknown split mode {s:?} (subjects | sequences)"))),
        }
    }
}

/// Outcome of training every head under one recipe on one synthetic set.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    /// Nearest neighbour on temporally averaged raw frames.
    pub pixel_baseline: EvalResults,
    pub table: String,
}

impl Comparison {
    pub fn report(&self, head: HeadKind) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.head == head)
    }
}

/// Encoder and feature-norm parameters of a freshly built model.
fn shared_init(model: &GaitModel) -> Vec<(String, Vec<f64>)> {
    model
        .named_params()
        .into_iter()
        .filter(|p| !p.name.starts_with("head") && !p.name.starts_with("classifier"))
        .map(|p| (p.name, p.tensor.data().to_vec()))
        .collect()
}

/// Fails unless every head would start from identical non-head parameters.
pub fn check_init_parity(base: &TrainConfig, heads: &[HeadKind], classes: usize) -> Result<()> {
    let mut reference: Option<Vec<(String, Vec<f64>)>> = None;
    for &head in heads {
        let shared = shared_init(&GaitModel::new(&TrainConfig { head, ..base.clone() }, classes)?);
        match &reference {
            None => reference = Some(shared),
            Some(r) if *r != shared => {
                return Err(Error::contract(format!("{head} does not share the encoder initialization")));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Trains `heads` with the same config, data, order and encoder
/// initialization, then evaluates each under `protocol`.
pub fn run_comparison(
    base: &TrainConfig,
    synth: &SynthConfig,
    data_seed: u64,
    heads: &[HeadKind],
    protocol: &EvalProtocol,
    mode: SplitMode,
    out_dir: Option<&std::path::Path>,
) -> Result<Comparison> {
    let split = synth_gait_dataset(synth, data_seed)?;
    let (train_set, test_set): (Vec<ClipRecord>, Vec<ClipRecord>) = match mode {
        SplitMode::Subjects => (split.train().to_vec(), split.test().to_vec()),
        SplitMode::Sequences => {
            let (a, b) = split.into_parts();
            let all: Vec<ClipRecord> = a.into_iter().chain(b).collect();
            let train = all.iter().filter(|c| protocol.gallery.matches(c.condition, c.seq)).cloned().collect();
            (train, all)
        }
    };
    check_init_parity(base, heads, label_map(&train_set).len())?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &head in heads {
        let cfg = TrainConfig { head, ..base.clone() };
        let files = match out_dir {
            Some(d) => Some(RunFiles::new(&d.join(head.name()))?),
            None => None,
        };
        let outcome = train(&cfg, &train_set, files.as_ref())?;
        let emb = embed_all(&outcome.model, &test_set)?;
        let results = evaluate_embeddings(&emb, protocol)?;
        reports.push(EvalReport {
            head,
            seed: cfg.seed,
            epoch: outcome.best_epoch,
            results,
            curves: outcome.curves,
            config: cfg,
        });
    }
    for r in &reports {
        rows.push((r.head.method().to_string(), &r.results));
    }
    let pixel_emb: Vec<Embedded> = test_set.iter().map(|c| Embedded::of(c, mean_pixel_embedding(c))).collect();
    let pixel_baseline = evaluate_embeddings(&pixel_emb, protocol)?;
    rows.push(("mean-pixel NN".to_string(), &pixel_baseline));
    let table = comparison_table(&rows);
    Ok(Comparison { reports, pixel_baseline, table })
}
