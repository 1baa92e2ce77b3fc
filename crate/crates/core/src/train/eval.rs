use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::ops::RangeInclusive;

use super::config::{HeadKind, TrainConfig};
use super::metrics::{cmc, cosine_similarity, rank_subjects, roc_auc, AucReport};
use super::model::GaitModel;
use super::trainer::{format_curves, EpochStats};
use crate::data::{ClipData, ClipRecord, Condition};
use crate::error::{Error, Result};

/// One clip's embedding with its identity tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub subject: u32,
    pub condition: Condition,
    pub seq: u32,
    pub view: String,
    pub embedding: Vec<f64>,
}

impl Embedded {
    pub fn of(clip: &ClipRecord, embedding: Vec<f64>) -> Self {
        Embedded {
            subject: clip.subject,
            condition: clip.condition,
            seq: clip.seq,
            view: clip.view.clone(),
            embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRule {
    pub name: String,
    pub condition: Condition,
    pub seqs: RangeInclusive<u32>,
}

impl ClipRule {
    pub fn new(name: &str, condition: Condition, seqs: RangeInclusive<u32>) -> Self {
        ClipRule { name: name.to_string(), condition, seqs }
    }

    pub fn matches(&self, condition: Condition, seq: u32) -> bool {
        condition == self.condition && self.seqs.contains(&seq)
    }
}

/// Gallery NM 1–4; probes NM 5–6, BG 1–2, CL 1–2; same-view gallery clips excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalProtocol {
    pub gallery: ClipRule,
    pub probes: Vec<ClipRule>,
    pub exclude_same_view: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            gallery: ClipRule::new("gallery", Condition::Nm, 1..=4),
            probes: vec![
                ClipRule::new("NM", Condition::Nm, 5..=6),
                ClipRule::new("BG", Condition::Bg, 1..=2),
                ClipRule::new("CL", Condition::Cl, 1..=2),
            ],
            exclude_same_view: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub subject: u32,
    pub view: String,
    /// Gallery subjects by descending best similarity.
    pub ranking: Vec<(u32, f64)>,
    /// 1-based position of the true subject, `None` when it is absent.
    pub rank: Option<usize>,
}

/// Ranks gallery subjects for one probe by their best-matching clip.
pub fn rank_probe(probe: &Embedded, gallery: &[&Embedded], exclude_same_view: bool) -> ProbeOutcome {
    let mut best: BTreeMap<u32, f64> = BTreeMap::new();
    for g in gallery {
        if exclude_same_view && !probe.view.is_empty() && g.view == probe.view {
            continue;
        }
        let s = cosine_similarity(&probe.embedding, &g.embedding);
        best.entry(g.subject).and_modify(|b| *b = b.max(s)).or_insert(s);
    }
    let ranking = rank_subjects(&best.into_iter().collect::<Vec<_>>());
    let rank = ranking.iter().position(|(s, _)| *s == probe.subject).map(|p| p + 1);
    ProbeOutcome { subject: probe.subject, view: probe.view.clone(), ranking, rank }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: String,
    pub probes: usize,
    /// Probes whose subject had no usable gallery clip; excluded from rates.
    pub missing: usize,
    pub rank1: f64,
    pub rank5: f64,
    pub cmc: Vec<f64>,
    pub outcomes: Vec<ProbeOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResults {
    pub conditions: Vec<ConditionResult>,
    pub auc: Option<AucReport>,
    pub notes: Vec<String>,
}

impl EvalResults {
    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Applies the gallery/probe protocol to precomputed embeddings.
pub fn evaluate_embeddings(all: &[Embedded], protocol: &EvalProtocol) -> Result<EvalResults> {
    let gallery: Vec<&Embedded> = all.iter().filter(|e| protocol.gallery.matches(e.condition, e.seq)).collect();
    if gallery.is_empty() {
        return Err(Error::Protocol("no gallery clips match the protocol".into()));
    }
    let mut notes = Vec::new();
    let has_views = all.iter().all(|e| !e.view.is_empty());
    let exclude = protocol.exclude_same_view && has_views;
    if protocol.exclude_same_view && !has_views {
        notes.push("view tags absent; identical-view exclusion skipped".to_string());
    }
    let n_subjects = gallery.iter().map(|g| g.subject).collect::<BTreeSet<_>>().len();
    let max_k = n_subjects.max(5);
    let mut conditions = Vec::new();
    for rule in &protocol.probes {
        let outcomes: Vec<ProbeOutcome> = all
            .iter()
            .filter(|e| rule.matches(e.condition, e.seq))
            .map(|p| rank_probe(p, &gallery, exclude))
            .collect();
        let ranks: Vec<usize> = outcomes.iter().filter_map(|o| o.rank).collect();
        let missing = outcomes.len() - ranks.len();
        if missing > 0 {
            notes.push(format!("{}: {missing} probe(s) without their subject in the gallery", rule.name));
        }
        let curve = cmc(&ranks, max_k);
        conditions.push(ConditionResult {
            name: rule.name.clone(),
            probes: outcomes.len(),
            missing,
            rank1: curve[0],
            rank5: curve[4],
            cmc: curve,
            outcomes,
        });
    }
    let auc = prototype_auc(all, &gallery, protocol, &mut notes);
    Ok(EvalResults { conditions, auc, notes })
}

/// One-vs-rest AUC of probe-to-prototype similarities, where a subject's
/// prototype is the mean of its gallery embeddings.
fn prototype_auc(all: &[Embedded], gallery: &[&Embedded], protocol: &EvalProtocol, notes: &mut Vec<String>) -> Option<AucReport> {
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for g in gallery {
        let e = sums.entry(g.subject).or_insert_with(|| (vec![0.0; g.embedding.len()], 0));
        e.0.iter_mut().zip(&g.embedding).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let ids: Vec<u32> = sums.keys().copied().collect();
    let protos: Vec<Vec<f64>> = sums.values().map(|(s, n)| s.iter().map(|v| v / *n as f64).collect()).collect();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for p in all.iter().filter(|e| protocol.probes.iter().any(|r| r.matches(e.condition, e.seq))) {
        if let Ok(l) = ids.binary_search(&p.subject) {
            scores.push(protos.iter().map(|q| cosine_similarity(&p.embedding, q)).collect());
            labels.push(l);
        }
    }
    match roc_auc(&scores, &labels) {
        Ok(r) => {
            let skipped = r.skipped();
            if !skipped.is_empty() {
                let s: Vec<String> = skipped.iter().map(|&i| ids[i].to_string()).collect();
                notes.push(format!("AUC: subjects without probes skipped in macro average: {}", s.join(",")));
            }
            Some(r)
        }
        Err(e) => {
            notes.push(format!("AUC unavailable: {e}"));
            None
        }
    }
}

pub fn embed_all(model: &GaitModel, clips: &[ClipRecord]) -> Result<Vec<Embedded>> {
    clips.iter().map(|c| Ok(Embedded::of(c, model.embed(c)?))).collect()
}

/// Temporal mean of the raw frames (or features), a training-free reference.
pub fn mean_pixel_embedding(clip: &ClipRecord) -> Vec<f64> {
    match &clip.data {
        ClipData::Frames { side, data } => {
            let n = side * side;
            let t = data.len() / n;
            let mut m = vec![0.0; n];
            for f in data.chunks(n) {
                m.iter_mut().zip(f).for_each(|(a, &b)| *a += b as f64);
            }
            m.iter_mut().for_each(|v| *v /= t as f64);
            m
        }
        ClipData::Features(x) => {
            let mut m = vec![0.0; x.cols()];
            for r in 0..x.rows() {
                m.iter_mut().zip(x.row(r)).for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|v| *v /= x.rows() as f64);
            m
        }
    }
}

/// Everything `evaluate` reports for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub head: HeadKind,
    pub seed: u64,
    pub epoch: usize,
    pub results: EvalResults,
    pub curves: Vec<EpochStats>,
    pub config: TrainConfig,
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[report]\nhead: {}\nseed: {}\nepoch: {}", self.head, self.seed, self.epoch);
        if let Some(a) = &self.results.auc {
            let _ = writeln!(s, "micro_auc: {:.6}\nmacro_auc: {:.6}", a.micro, a.macro_avg);
        }
        for n in &self.results.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s.push_str("\n[rank]\ncondition\tprobes\tmissing\trank1\trank5\n");
        for c in &self.results.conditions {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", c.name, c.probes, c.missing, pct(c.rank1), pct(c.rank5));
        }
        s.push_str("\n[cmc]\ncondition\tk\trate\n");
        for c in &self.results.conditions {
            for (k, r) in c.cmc.iter().enumerate() {
                let _ = writeln!(s, "{}\t{}\t{}", c.name, k + 1, pct(*r));
            }
        }
        if let Some(a) = &self.results.auc {
            s.push_str("\n[auc]\nclass\tauc\n");
            for (i, v) in a.per_class.iter().enumerate() {
                let _ = writeln!(s, "{i}\t{}", v.map_or("skipped".to_string(), |x| format!("{x:.6}")));
            }
        }
        if !self.curves.is_empty() {
            s.push_str("\n[curves]\n");
            s.push_str(&format_curves(&self.curves));
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config.to_text());
        s
    }
}

/// Rank-1/Rank-5 rows of a report: `(head, [(condition, rank1, rank5)])`.
pub type RankRow = (String, Vec<(String, f64, f64)>);

/// Recovers the head and the `[rank]` table from [`EvalReport::to_text`] output.
pub fn parse_report_ranks(text: &str) -> Result<RankRow> {
    let mut head = None;
    let mut rows = Vec::new();
    let mut section = "";
    for line in text.lines() {
        let line = line.trim_end();
        if line.starts_with('[') {
            section = line;
            continue;
        }
        match section {
            "[report]" => {
                if let Some(h) = line.strip_prefix("head: ") {
                    head = Some(h.to_string());
                }
            }
            "[rank]" if !line.is_empty() && !line.starts_with("condition") => {
                let f: Vec<&str> = line.split('\t').collect();
                let bad = || Error::Data(format!("malformed rank row '{line}'"));
                if f.len() != 5 {
                    return Err(bad());
                }
                rows.push((f[0].to_string(), f[3].parse().map_err(|_| bad())?, f[4].parse().map_err(|_| bad())?));
            }
            _ => {}
        }
    }
    Ok((head.ok_or_else(|| Error::Data("report has no head line".into()))?, rows))
}

/// Method × condition Rank-1/Rank-5 table (tab-separated).
pub fn comparison_table(rows: &[(String, &EvalResults)]) -> String {
    let ranks: Vec<RankRow> = rows
        .iter()
        .map(|(m, r)| (m.clone(), r.conditions.iter().map(|c| (c.name.clone(), c.rank1, c.rank5)).collect()))
        .collect();
    comparison_table_from_ranks(&ranks)
}

pub fn comparison_table_from_ranks(rows: &[RankRow]) -> String {
    let conds: Vec<String> = rows.first().map(|r| r.1.iter().map(|c| c.0.clone()).collect()).unwrap_or_default();
    let mut s = String::from("method");
    for c in &conds {
        let _ = write!(s, "\t{c} Rank-1\t{c} Rank-5");
    }
    s.push('\n');
    for (m, cs) in rows {
        s.push_str(m);
        for c in &conds {
            match cs.iter().find(|x| &x.0 == c) {
                Some((_, r1, r5)) => {
                    let _ = write!(s, "\t{}\t{}", pct(*r1), pct(*r5));
                }
                None => s.push_str("\t-\t-"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(subject: u32, condition: Condition, seq: u32, view: &str, v: Vec<f64>) -> Embedded {
        Embedded { subject, condition, seq, view: view.into(), embedding: v }
    }

    #[test]
    fn one_hot_subjects_rank_first() {
        let mut all = Vec::new();
        for s in 0..3u32 {
            let mut v = vec![0.0; 3];
            v[s as usize] = 1.0;
            for seq in 1..=6 {
                all.push(e(s + 1, Condition::Nm, seq, &format!("{seq}"), v.clone()));
            }
        }
        let r = evaluate_embeddings(&all, &EvalProtocol::default()).unwrap();
        let nm = r.condition("NM").unwrap();
        assert_eq!((nm.probes, nm.rank1, nm.rank5), (6, 100.0, 100.0));
        assert_eq!(r.condition("BG").unwrap().probes, 0);
    }

    #[test]
    fn missing_subject_is_counted() {
        let all = vec![
            e(1, Condition::Nm, 1, "a", vec![1.0, 0.0]),
            e(2, Condition::Nm, 5, "b", vec![1.0, 0.0]),
            e(1, Condition::Nm, 6, "b", vec![1.0, 0.0]),
        ];
        let r = evaluate_embeddings(&all, &EvalProtocol::default()).unwrap();
        let nm = r.condition("NM").unwrap();
        assert_eq!((nm.probes, nm.missing, nm.rank1), (2, 1, 100.0));
        assert!(r.notes.iter().any(|n| n.contains("without their subject")));
    }

    #[test]
    fn report_round_trip_of_ranks() {
        let all = vec![
            e(1, Condition::Nm, 1, "a", vec![1.0, 0.0]),
            e(2, Condition::Nm, 1, "a", vec![0.0, 1.0]),
            e(1, Condition::Nm, 5, "b", vec![1.0, 0.1]),
            e(2, Condition::Cl, 1, "b", vec![1.0, 0.1]),
        ];
        let results = evaluate_embeddings(&all, &EvalProtocol::default()).unwrap();
        let rep = EvalReport {
            head: HeadKind::Lstm,
            seed: 1,
            epoch: 2,
            results: results.clone(),
            curves: vec![],
            config: TrainConfig::default(),
        };
        let (head, rows) = parse_report_ranks(&rep.to_text()).unwrap();
        assert_eq!(head, "lstm");
        assert_eq!(rows[0], ("NM".to_string(), 100.0, 100.0));
        assert_eq!(rows[2], ("CL".to_string(), 0.0, 100.0));
        let t = comparison_table(&[("CNN+LSTM".into(), &results)]);
        assert!(t.starts_with("method\tNM Rank-1\tNM Rank-5\tBG Rank-1"));
    }
}
