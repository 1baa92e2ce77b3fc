//! Brute-force reference implementations shared by test targets.

#![allow(dead_code)]

use tkan::baselines::scaled_dot_attention;
use tkan::cnn::conv2d_3x3;
use tkan::data::Condition;
use tkan::numerics::ops::matmul;
use tkan::numerics::{Rng, Tensor};
use tkan::train::metrics::roc_auc;
use tkan::train::{evaluate_embeddings, rank_probe, Embedded, EvalProtocol};

pub fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Worst gap between `matmul` and a triple loop.
pub fn matmul_gap(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (m, k, n) = (5, 4, 3);
    let a = random(&mut rng, &[m, k]);
    let b = random(&mut rng, &[k, n]);
    let c = matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[m, n]);
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at2(i, p) * b.at2(p, j);
            }
            worst = worst.max((c.at2(i, j) - s).abs());
        }
    }
    worst
}

/// Worst gap between the padded 3×3 convolution and six nested loops.
pub fn conv_gap(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (c_in, c_out, h, w) = (2, 3, 5, 6);
    let x = random(&mut rng, &[c_in, h, w]);
    let k = random(&mut rng, &[c_out, c_in, 3, 3]);
    let y = conv2d_3x3(&x, &k).unwrap();
    let mut worst = 0.0f64;
    for o in 0..c_out {
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for i in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (r as isize + ky as isize - 1, c as isize + kx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            s += k.data()[((o * c_in + i) * 3 + ky) * 3 + kx] * x.data()[(i * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                worst = worst.max((y.data()[(o * h + r) * w + c] - s).abs());
            }
        }
    }
    worst
}

/// Worst gap in weights and outputs against an explicitly built
/// attention matrix.
pub fn attention_gap(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (t, dk) = (3, 4);
    let q = random(&mut rng, &[t, dk]);
    let k = random(&mut rng, &[t, dk]);
    let v = random(&mut rng, &[t, dk]);
    let (out, weights) = scaled_dot_attention(&q, &k, &v).unwrap();
    let mut a = vec![vec![0.0; t]; t];
    let mut worst = 0.0f64;
    for i in 0..t {
        for j in 0..t {
            a[i][j] = (0..dk).map(|c| q.at2(i, c) * k.at2(j, c)).sum::<f64>() / (dk as f64).sqrt();
        }
        let total: f64 = a[i].iter().map(|s| s.exp()).sum();
        for j in 0..t {
            a[i][j] = a[i][j].exp() / total;
            worst = worst.max((weights.at2(i, j) - a[i][j]).abs());
        }
    }
    for i in 0..t {
        for c in 0..dk {
            let s: f64 = (0..t).map(|j| a[i][j] * v.at2(j, c)).sum();
            worst = worst.max((out.at2(i, c) - s).abs());
        }
    }
    worst
}

/// Trapezoidal area under the ROC curve from an explicit sweep over every
/// distinct threshold, highest first.
pub fn sweep_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev) = (0.0, (0.0, 0.0));
    for t in thresholds {
        let tpr = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
        let fpr = neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64;
        area += (fpr - prev.0) * (tpr + prev.1) / 2.0;
        prev = (fpr, tpr);
    }
    area
}

/// Worst gap over per-class, macro and micro AUC on a fixed 3-class,
/// 5-sample case.
pub fn auc_gap() -> f64 {
    let scores = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.3, 0.5, 0.2],
        vec![0.2, 0.2, 0.6],
        vec![0.4, 0.4, 0.2],
        vec![0.1, 0.3, 0.6],
    ];
    let labels = vec![0, 1, 2, 1, 0];
    let report = roc_auc(&scores, &labels).unwrap();
    let (mut all_pos, mut all_neg, mut per) = (Vec::new(), Vec::new(), Vec::new());
    let mut worst = 0.0f64;
    for c in 0..3 {
        let pos: Vec<f64> = (0..5).filter(|&s| labels[s] == c).map(|s| scores[s][c]).collect();
        let neg: Vec<f64> = (0..5).filter(|&s| labels[s] != c).map(|s| scores[s][c]).collect();
        let a = sweep_auc(&pos, &neg);
        worst = worst.max((report.per_class[c].unwrap() - a).abs());
        per.push(a);
        all_pos.extend(pos);
        all_neg.extend(neg);
    }
    worst = worst.max((report.macro_avg - per.iter().sum::<f64>() / 3.0).abs());
    worst.max((report.micro - sweep_auc(&all_pos, &all_neg)).abs())
}

/// Four subjects with three clips each: NM-01 at 036, NM-02 at 090 and a
/// probe NM-05 at 036.
pub fn four_subject_set(rng: &mut Rng) -> Vec<Embedded> {
    let mut out = Vec::new();
    for s in 1..=4u32 {
        for (seq, view) in [(1, "036"), (2, "090"), (5, "036")] {
            out.push(Embedded {
                subject: s,
                condition: Condition::Nm,
                seq,
                view: view.into(),
                embedding: (0..5).map(|_| rng.normal()).collect(),
            });
        }
    }
    out
}

fn brute_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exhaustive ranking table: for each probe the ordered subject list.
pub fn brute_rankings(all: &[Embedded], exclude_same_view: bool) -> Vec<Vec<u32>> {
    let mut tables = Vec::new();
    for p in all.iter().filter(|e| e.seq == 5) {
        let mut best: Vec<(u32, f64)> = Vec::new();
        for s in 1..=4u32 {
            let mut top: Option<f64> = None;
            for g in all.iter().filter(|g| g.subject == s && g.seq <= 4) {
                if exclude_same_view && g.view == p.view {
                    continue;
                }
                let c = brute_cos(&p.embedding, &g.embedding);
                top = Some(top.map_or(c, |t: f64| t.max(c)));
            }
            if let Some(t) = top {
                best.push((s, t));
            }
        }
        let mut order = Vec::new();
        for &(s, v) in &best {
            let pos = best.iter().filter(|&&(o, w)| w > v || (w == v && o < s)).count();
            order.push((pos, s));
        }
        order.sort();
        tables.push(order.into_iter().map(|(_, s)| s).collect());
    }
    tables
}

/// Number of disagreements with exhaustive enumeration over `trials`
/// random four-subject sets, counting each ranking table and each
/// Rank-1/Rank-5 rate, with exclusion both on and off.
pub fn ranking_mismatches(seed: u64, trials: usize) -> usize {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let all = four_subject_set(&mut rng);
        for exclude in [true, false] {
            let gallery: Vec<&Embedded> = all.iter().filter(|e| e.seq <= 4).collect();
            let expected = brute_rankings(&all, exclude);
            for (p, table) in all.iter().filter(|e| e.seq == 5).zip(&expected) {
                let got: Vec<u32> = rank_probe(p, &gallery, exclude).ranking.iter().map(|r| r.0).collect();
                bad += usize::from(&got != table);
            }
            let protocol = EvalProtocol { exclude_same_view: exclude, ..EvalProtocol::default() };
            let res = evaluate_embeddings(&all, &protocol).unwrap();
            let nm = res.condition("NM").unwrap();
            let hits = |k: usize| {
                expected.iter().zip(1..=4u32).filter(|(t, s)| t.iter().position(|x| x == s).unwrap() < k).count()
            };
            bad += usize::from(nm.probes != 4);
            bad += usize::from(nm.rank1 != 100.0 * hits(1) as f64 / 4.0);
            bad += usize::from(nm.rank5 != 100.0 * hits(5) as f64 / 4.0);
        }
    }
    bad
}
