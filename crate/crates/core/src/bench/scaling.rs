//! Decode cost as the catalog grows with dummy items.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::query_seed;
use crate::error::{Error, Result};
use crate::decoder::{decode, DecodeConfig};
use crate::graph::build_decoding_graph_pooled;
use crate::model::Checkpoint;
use crate::scorer::{build_logit_cache, exact_topk, LogitCache};
use crate::semantic::ItemCatalog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    /// Total catalog sizes; the gap to the base catalog is filled with dummy items.
    pub sizes: Vec<usize>,
    pub b: usize,
    pub k: usize,
    pub q: usize,
    /// Candidate pool per node for the approximate graph builder.
    pub pool: usize,
    /// Timed repetitions after one warm-up pass; the median is reported.
    pub reps: usize,
    pub queries: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: vec![20_000, 100_000, 500_000],
            b: 10,
            k: 100,
            q: 3,
            pool: 400,
            reps: 5,
            queries: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub catalog_size: usize,
    pub dummy_items: usize,
    /// Median seconds per query: cache build plus graph decoding.
    pub decode_s: f64,
    /// Median seconds per query of graph decoding alone, given the cache.
    pub walk_s: f64,
    /// Median seconds per query: cache build plus exact top-K.
    pub exact_s: f64,
    /// Median seconds per query of the exact scan alone, given the cache.
    pub scan_s: f64,
    /// Seconds per query to build the logit cache.
    pub cache_s: f64,
    /// Per-query visited count; identical for every query at a given size.
    pub visited_count: usize,
    pub mean_scored: f64,
    /// Largest candidate set built while decoding.
    pub peak_candidates: usize,
    pub graph_bytes: usize,
    pub catalog_bytes: usize,
    pub graph_build_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub base_items: usize,
    pub checkpoint_digest: String,
    pub base_catalog_digest: String,
    pub rows: Vec<ScalingRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median per-query seconds of `f` over all queries, after one warm-up pass.
fn time_per_query(reps: usize, queries: usize, mut f: impl FnMut(usize)) -> f64 {
    let mut samples = Vec::with_capacity(reps);
    for rep in 0..=reps {
        let t = Instant::now();
        for i in 0..queries {
            f(i);
        }
        if rep > 0 {
            samples.push(t.elapsed().as_secs_f64() / queries as f64);
        }
    }
    median(samples)
}

/// Uniformly random semantic IDs for `count` dummy items.
pub fn dummy_codes(catalog: &ItemCatalog, count: usize, seed: u64) -> Vec<u16> {
    let s = catalog.scheme();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count * s.m)
        .map(|_| rng.random_range(0..s.codebook_size as u16))
        .collect()
}

pub fn bench_decode_scaling(
    ck: &Checkpoint,
    catalog: &ItemCatalog,
    histories: &[Vec<u32>],
    config: &ScalingConfig,
) -> Result<ScalingReport> {
    if config.reps < 1 || config.queries < 1 || histories.is_empty() {
        return Err(Error::config("scaling bench needs reps, queries and histories"));
    }
    let n0 = catalog.len();
    if let Some(&s) = config.sizes.iter().find(|&&s| s < n0) {
        return Err(Error::config(format!(
            "catalog size {s} is below the base catalog size {n0}"
        )));
    }
    let queries: Vec<&Vec<u32>> = histories.iter().cycle().take(config.queries).collect();
    let caches = queries
        .iter()
        .map(|h| build_logit_cache(&ck.encode_history(catalog, h)?, ck))
        .collect::<Result<Vec<LogitCache>>>()?;
    let cache_s = time_per_query(config.reps, queries.len(), |i| {
        let s = ck.encode_history(catalog, queries[i]).expect("validated history");
        std::hint::black_box(build_logit_cache(&s, ck).expect("finite state"));
    });

    let mut rows = Vec::new();
    for &size in &config.sizes {
        let dummy = size - n0;
        let cat = catalog.extended(&dummy_codes(catalog, dummy, config.seed ^ size as u64))?;
        let t = Instant::now();
        let graph = build_decoding_graph_pooled(&cat, ck, config.k, config.pool, config.seed)?;
        let graph_build_s = t.elapsed().as_secs_f64();
        let dc = DecodeConfig {
            b: config.b,
            q: config.q,
            top_k: config.b,
            early_exit: false,
            ..DecodeConfig::default()
        };

        let mut visited = Vec::new();
        let mut scored = 0usize;
        let mut peak = 0usize;
        for (i, cache) in caches.iter().enumerate() {
            let cfg = DecodeConfig {
                seed: query_seed(config.seed, i),
                ..dc.clone()
            };
            let out = decode(&graph, cache, &cat, &cfg)?;
            visited.push(out.stats.visited_count);
            scored += out.stats.scored_count;
            peak = peak.max(out.stats.max_candidates);
        }
        if visited.iter().any(|&v| v != visited[0]) {
            return Err(Error::contract("visited count varied across queries"));
        }

        let walk_s = time_per_query(config.reps, caches.len(), |i| {
            let cfg = DecodeConfig {
                seed: query_seed(config.seed, i),
                ..dc.clone()
            };
            std::hint::black_box(decode(&graph, &caches[i], &cat, &cfg).expect("valid decode"));
        });
        let scan_s = time_per_query(config.reps, caches.len(), |i| {
            std::hint::black_box(exact_topk(&caches[i], &cat, config.b).expect("valid K"));
        });
        log::info!("catalog {size}: walk {walk_s:.3e}s scan {scan_s:.3e}s");
        rows.push(ScalingRow {
            catalog_size: size,
            dummy_items: dummy,
            decode_s: cache_s + walk_s,
            walk_s,
            exact_s: cache_s + scan_s,
            scan_s,
            cache_s,
            visited_count: visited[0],
            mean_scored: scored as f64 / caches.len() as f64,
            peak_candidates: peak,
            graph_bytes: size * graph.degree() * 4,
            catalog_bytes: size * cat.scheme().m * 2,
            graph_build_s,
        });
    }
    Ok(ScalingReport {
        config: config.clone(),
        base_items: n0,
        checkpoint_digest: crate::artifact::digest_hex(ck.digest()),
        base_catalog_digest: crate::artifact::digest_hex(catalog.digest()),
        rows,
    })
}

impl ScalingReport {
    /// Tab-separated table, one row per catalog size.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "catalog_size\tdummy_items\tdecode_ms\twalk_ms\texact_ms\tscan_ms\tcache_ms\tvisited_count\tmean_scored\tgraph_bytes\tcatalog_bytes\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:.1}\t{}\t{}",
                r.catalog_size,
                r.dummy_items,
                r.decode_s * 1e3,
                r.walk_s * 1e3,
                r.exact_s * 1e3,
                r.scan_s * 1e3,
                r.cache_s * 1e3,
                r.visited_count,
                r.mean_scored,
                r.graph_bytes,
                r.catalog_bytes
            );
        }
        out
    }

    /// Line chart of per-query time against catalog size (log-log).
    pub fn to_svg(&self) -> String {
        let series = [
            ("graph decoding", "#1f77b4", self.rows.iter().map(|r| r.decode_s).collect::<Vec<_>>()),
            ("exact top-K", "#d62728", self.rows.iter().map(|r| r.exact_s).collect()),
        ];
        let xs: Vec<f64> = self.rows.iter().map(|r| r.catalog_size as f64).collect();
        line_chart("Per-query inference time vs. catalog size", "items", "ms / query", &xs, &series)
    }
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], series: &[(&str, &str, Vec<f64>)]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let log = |v: f64| v.max(1e-12).log10();
    let (x0, x1) = span(xs.iter().map(|&x| log(x)));
    let (y0, y1) = span(series.iter().flat_map(|s| s.2.iter().map(|&y| log(y * 1e3))));
    let px = |x: f64| left + (log(x) - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (log(y * 1e3) - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        svg,
        r#"<polyline points="{left},{top} {left},{} {},{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom
    );
    for &x in xs {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), h - bottom + 16.0);
    }
    for e in (y0.floor() as i32)..=(y1.ceil() as i32) {
        let v = 10f64.powi(e);
        let y = py(v / 1e3);
        if y >= top - 1.0 && y <= h - bottom + 1.0 {
            let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v}</text>"#, left - 6.0, y + 4.0);
        }
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, color, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &pts {
            let (cx, cy) = p.split_once(',').unwrap();
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 8.0 + 18.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + 12.0, left + 36.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{name}</text>"#, left + 42.0, ly + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Padded `[min, max]`, never empty.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.05);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use crate::semantic::SemanticScheme;

    #[test]
    fn small_bench_keeps_visited_count_fixed() {
        let sc = SemanticScheme::new(4, 8, 8).unwrap();
        let ck = Checkpoint::init(ModelShape::new(sc), 0.1, 1).unwrap();
        let base = ItemCatalog::new(sc, dummy_codes(&ItemCatalog::new(sc, vec![0; 4]).unwrap(), 50, 3)).unwrap();
        let cfg = ScalingConfig {
            sizes: vec![100, 400],
            b: 4,
            k: 6,
            q: 2,
            pool: 30,
            reps: 1,
            queries: 5,
            seed: 2,
        };
        let hist = vec![vec![0, 1], vec![2]];
        let rep = bench_decode_scaling(&ck, &base, &hist, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].visited_count, 4 + 2 * 4 * 6);
        assert_eq!(rep.rows[0].visited_count, rep.rows[1].visited_count);
        assert_eq!(rep.to_tsv().lines().count(), 3);
        let svg = rep.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(bench_decode_scaling(&ck, &base, &hist, &ScalingConfig { sizes: vec![10], ..cfg }).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
