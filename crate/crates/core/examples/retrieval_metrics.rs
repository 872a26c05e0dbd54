//! CMC and mAP on a hand-made distance matrix, under both distance kinds.
//!
//! `cargo run --example retrieval_metrics`

use lfm::metrics::{evaluate, pairwise_distances, random_ranking_ap, DistanceKind, EvalOptions, EvalReport, Labels};

fn main() -> lfm::Result<()> {
    // two queries, five gallery items in 2-D
    let queries = [1.0, 0.0, 0.0, 1.0];
    let gallery = [0.9, 0.1, 0.0, 2.0, 0.7, -0.2, -1.0, 0.0, 0.1, 0.8];
    let q = Labels { ids: vec![1, 2], cams: vec![0, 0] };
    let g = Labels { ids: vec![1, 2, 1, 3, 2], cams: vec![1, 1, 0, 1, 0] };
    println!("{}", EvalReport::CSV_HEADER);
    for kind in [DistanceKind::Euclidean, DistanceKind::Cosine] {
        let dist = pairwise_distances(&queries, &gallery, 2, kind)?;
        let report = evaluate(&dist, &q, &g, &EvalOptions::default(), kind)?;
        println!("{}", report.csv_row("toy"));
    }
    println!("expected AP of a random ranking of 20 items with 3 matches: {:.4}", random_ranking_ap(20, 3));
    Ok(())
}
