//! Retrieval evaluation: CMC rank-k accuracy and mean average precision.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(Error::config(format!("unknown distance kind {other:?}"))),
        }
    }
}

/// Row-major `n_query x n_gallery` distances. Euclidean is the L2 distance;
/// cosine distance is `1 - cos`.
pub fn pairwise_distances<T: Scalar>(
    queries: &[T],
    gallery: &[T],
    dim: usize,
    kind: DistanceKind,
) -> Result<Vec<f64>> {
    if dim == 0 || queries.len() % dim != 0 || gallery.len() % dim != 0 {
        return Err(Error::structural(format!(
            "embedding lengths {} and {} are not multiples of {dim}",
            queries.len(),
            gallery.len()
        )));
    }
    let norms = |m: &[T]| -> Result<Vec<f64>> {
        m.chunks(dim)
            .map(|r| {
                let n = r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
                if kind == DistanceKind::Cosine && n == 0.0 {
                    Err(Error::numeric("cosine distance of a zero-norm embedding"))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let qn = norms(queries)?;
    let gn = norms(gallery)?;
    let mut out = Vec::with_capacity(qn.len() * gn.len());
    for (qi, q) in queries.chunks(dim).enumerate() {
        for (gi, g) in gallery.chunks(dim).enumerate() {
            let d = match kind {
                DistanceKind::Euclidean => q
                    .iter()
                    .zip(g)
                    .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
                DistanceKind::Cosine => {
                    let dot: f64 = q.iter().zip(g).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    1.0 - dot / (qn[qi] * gn[gi])
                }
            };
            out.push(d);
        }
    }
    Ok(out)
}

/// Identity and camera of each retrieval item.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub ids: Vec<u32>,
    pub cams: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Drop gallery entries sharing both identity and camera with the query.
    pub exclude_same_camera: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            exclude_same_camera: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    /// `(k, accuracy)` for every requested k.
    pub cmc: Vec<(usize, f64)>,
    pub n_queries: usize,
    pub skipped: usize,
    pub distance: DistanceKind,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,distance,rank1,rank5,rank10,map,n_queries,skipped";

    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            self.distance, self.rank1, self.rank5, self.rank10, self.map, self.n_queries, self.skipped
        )
    }
}

/// Rank-k accuracy and mAP from a distance matrix.
///
/// Gallery items are ordered by ascending distance, ties by gallery index.
/// AP is `(1/R) * sum_i i / p_i` over the positions `p_1 < .. < p_R` of the
/// correct matches. Queries without any valid match are counted in
/// `skipped` and excluded from the averages.
pub fn evaluate(
    dist: &[f64],
    query: &Labels,
    gallery: &Labels,
    opts: &EvalOptions,
    distance: DistanceKind,
) -> Result<EvalReport> {
    let (nq, ng) = (query.ids.len(), gallery.ids.len());
    if query.cams.len() != nq || gallery.cams.len() != ng || dist.len() != nq * ng {
        return Err(Error::structural(format!(
            "distance matrix of {} entries for {nq} queries and {ng} gallery items",
            dist.len()
        )));
    }
    if dist.iter().any(|d| d.is_nan()) {
        return Err(Error::numeric("distance matrix"));
    }
    let mut ks = opts.ks.clone();
    for k in [1, 5, 10] {
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    let mut hits = vec![0usize; ks.len()];
    let mut ap_sum = 0.0;
    let mut valid = 0;
    let mut skipped = 0;
    let mut order: Vec<usize> = Vec::with_capacity(ng);
    for q in 0..nq {
        let row = &dist[q * ng..(q + 1) * ng];
        order.clear();
        order.extend((0..ng).filter(|&g| {
            !(opts.exclude_same_camera && gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q])
        }));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut first = None;
        let mut found = 0usize;
        let mut ap = 0.0;
        for (pos, &g) in order.iter().enumerate() {
            if gallery.ids[g] == query.ids[q] {
                found += 1;
                first.get_or_insert(pos + 1);
                ap += found as f64 / (pos + 1) as f64;
            }
        }
        let Some(first) = first else {
            skipped += 1;
            continue;
        };
        valid += 1;
        ap_sum += ap / found as f64;
        for (h, k) in hits.iter_mut().zip(&ks) {
            if first <= *k {
                *h += 1;
            }
        }
    }
    let frac = |h: usize| if valid == 0 { 0.0 } else { h as f64 / valid as f64 };
    let at = |k: usize| frac(hits[ks.iter().position(|x| *x == k).expect("always present")]);
    Ok(EvalReport {
        rank1: at(1),
        rank5: at(5),
        rank10: at(10),
        map: if valid == 0 { 0.0 } else { ap_sum / valid as f64 },
        cmc: opts.ks.iter().map(|&k| (k, at(k))).collect(),
        n_queries: valid,
        skipped,
        distance,
    })
}

/// Expected AP of a uniformly random ranking of `n` items containing `r`
/// relevant ones.
///
/// The relevant item ranked `i`-th among relevants sits at position `p` with
/// probability `C(p-1, i-1) C(n-p, r-i) / C(n, r)`.
pub fn random_ranking_ap(n: usize, r: usize) -> f64 {
    if r == 0 || n == 0 || r > n {
        return 0.0;
    }
    let ln_choose = |a: usize, b: usize| -> f64 {
        if b > a {
            return f64::NEG_INFINITY;
        }
        ln_factorial(a) - ln_factorial(b) - ln_factorial(a - b)
    };
    let total = ln_choose(n, r);
    let mut ap = 0.0;
    for i in 1..=r {
        for p in i..=(n - r + i) {
            let w = (ln_choose(p - 1, i - 1) + ln_choose(n - p, r - i) - total).exp();
            ap += w * i as f64 / p as f64;
        }
    }
    ap / r as f64
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ids: &[u32], cams: &[u16]) -> Labels {
        Labels {
            ids: ids.to_vec(),
            cams: cams.to_vec(),
        }
    }

    #[test]
    fn analytic_distances() {
        let q = [1.0f64, 0.0];
        let g = [1.0, 0.0, 0.0, 1.0];
        let e = pairwise_distances(&q, &g, 2, DistanceKind::Euclidean).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 2f64.sqrt()).abs() < 1e-15);
        let c = pairwise_distances(&q, &g, 2, DistanceKind::Cosine).unwrap();
        assert_eq!(c, vec![0.0, 1.0]);
        assert!(matches!(
            pairwise_distances(&q, &[0.0, 0.0], 2, DistanceKind::Cosine),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn hits_at_one_and_three_give_five_sixths() {
        let dist = [0.1, 0.2, 0.3, 0.4, 0.5];
        let q = labels(&[7], &[0]);
        let g = labels(&[7, 1, 7, 2, 3], &[1, 1, 2, 1, 1]);
        let r = evaluate(&dist, &q, &g, &EvalOptions::default(), DistanceKind::Euclidean).unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!((r.rank1, r.rank5, r.rank10), (1.0, 1.0, 1.0));
    }

    #[test]
    fn perfect_retrieval() {
        let dist = [0.0, 1.0, 1.0, 0.0];
        let q = labels(&[1, 2], &[0, 0]);
        let g = labels(&[1, 2], &[1, 1]);
        let r = evaluate(&dist, &q, &g, &EvalOptions::default(), DistanceKind::Euclidean).unwrap();
        assert_eq!((r.rank1, r.map, r.n_queries, r.skipped), (1.0, 1.0, 2, 0));
    }

    #[test]
    fn same_camera_matches_are_junk_and_unmatched_queries_skip() {
        let dist = [0.0, 0.5, 0.9, 0.1, 0.2, 0.3];
        let q = labels(&[1, 9], &[0, 0]);
        let g = labels(&[1, 2, 1], &[0, 1, 1]);
        let r = evaluate(&dist, &q, &g, &EvalOptions::default(), DistanceKind::Euclidean).unwrap();
        assert_eq!(r.n_queries, 1);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.rank1, 0.0);
        assert_eq!(r.rank5, 1.0);
        assert!((r.map - 0.5).abs() < 1e-15);
        let keep = EvalOptions { exclude_same_camera: false, ..Default::default() };
        let r = evaluate(&dist, &q, &g, &keep, DistanceKind::Euclidean).unwrap();
        assert_eq!(r.rank1, 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let dist = [0.5, 0.5];
        let q = labels(&[1], &[0]);
        let g = labels(&[2, 1], &[1, 1]);
        let r = evaluate(&dist, &q, &g, &EvalOptions::default(), DistanceKind::Euclidean).unwrap();
        assert_eq!(r.rank1, 0.0);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn random_ap_small_cases() {
        // n = 2, r = 1: AP is 1 or 1/2 with equal odds
        assert!((random_ranking_ap(2, 1) - 0.75).abs() < 1e-12);
        assert!((random_ranking_ap(5, 5) - 1.0).abs() < 1e-12);
        // n = 3, r = 2 by enumeration of the 3 placements: {1,2}:1, {1,3}:(1+2/3)/2, {2,3}:(1/2+2/3)/2
        let want = (1.0 + (1.0 + 2.0 / 3.0) / 2.0 + (0.5 + 2.0 / 3.0) / 2.0) / 3.0;
        assert!((random_ranking_ap(3, 2) - want).abs() < 1e-12);
    }
}
