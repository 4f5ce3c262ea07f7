//! End-to-end acceptance checks. Everything runs inside one test so the
//! criteria execute sequentially and their runtimes are not inflated by
//! concurrent tests. Run with
//! `cargo test -p icetopo-cli --test acceptance`; the per-criterion
//! summary is written straight to stderr.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use icetopo::analysis::{compactness_report, evaluate_reconstruction, kmeans, silhouette, KMeansConfig};
use icetopo::networks::gradcheck::{check_autoencoder, check_conv, check_dense, check_lstm};
use icetopo::networks::{Arch, ArchSpec, Autoencoder};
use icetopo::supersegment::{build_supersegments, compute_stats, standardize, FeatureStats, WINDOW_VALUES};
use icetopo::synth::{generate_corpus, SynthConfig};
use icetopo::track::{split_tracks, Split, SplitRatios};
use icetopo::training::{read_model, write_model, TrainedModel};
use icetopo::{Error, FEATURE_NAMES};
use icetopo_cli::commands::{self, read_embeddings, umap_sample, Workspace};
use icetopo_cli::PipelineConfig;
use icetopo_umap::{fit_ab, knn_exact, read_layout_csv, smooth_knn, umap_fit, UmapConfig, SIGMA_BRACKET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Warn,
    Fail,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

// ---------------------------------------------------------------------------
// 1. gradients

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut n = 0;
    for seed in 0..20u64 {
        let reports = [
            ("dense", check_dense(seed)),
            ("lstm", check_lstm(seed)),
            ("conv", check_conv(seed)),
            ("ae-lstm", check_autoencoder(Arch::Lstm, seed)),
            ("ae-cnn", check_autoencoder(Arch::Cnn, seed)),
        ];
        for (name, r) in reports {
            let r = r.unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
            n += 1;
            worst = worst.max(r.max_rel_error);
            if !(r.max_rel_error < 1e-5) {
                failures.push(format!("{name}#{seed}={:.2e}", r.max_rel_error));
            }
        }
    }
    let el = t.elapsed();
    pass_if(
        failures.is_empty() && within(el, 120.0),
        format!("{n} checks (20 per layer/model), max rel err {worst:.2e}, {:.1} s {failures:?}", el.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 2. super-segment oracle

enum Window {
    Kept(Vec<f64>),
    Extrapolates,
    Gap,
}

/// Independent linear scan over every knot pair.
fn brute_force_window(dist: &[f64], feats: &[[f64; 4]], center: f64) -> Window {
    let (lo, hi) = (center - 50.0, center + 50.0);
    if lo < dist[0] - 1e-6 || hi > dist[dist.len() - 1] + 1e-6 {
        return Window::Extrapolates;
    }
    if (0..dist.len() - 1).any(|j| dist[j + 1] > lo && dist[j] < hi && dist[j + 1] - dist[j] > 50.0) {
        return Window::Gap;
    }
    let mut out = Vec::with_capacity(44);
    for k in 0..11 {
        let x = (center - 50.0 + 10.0 * k as f64).clamp(dist[0], dist[dist.len() - 1]);
        let j = (0..dist.len() - 1).find(|&j| dist[j] <= x && x <= dist[j + 1]).unwrap();
        let h = dist[j + 1] - dist[j];
        for f in 0..4 {
            out.push(((dist[j + 1] - x) * feats[j][f] + (x - dist[j]) * feats[j + 1][f]) / h);
        }
    }
    Window::Kept(out)
}

fn c2_supersegments() -> Outcome {
    let t = Instant::now();
    let cfg = SynthConfig { n_tracks: 100, track_length: 3000.0, gap_injection_rate: 0.02, ..SynthConfig::default() };
    let corpus = generate_corpus(&cfg, 2024).unwrap();
    let (mut kept, mut gaps, mut ends, mut max_err, mut mismatched) = (0, 0, 0, 0.0f64, 0);
    for track in &corpus.tracks.tracks {
        let dist: Vec<f64> = track.segments().iter().map(|s| s.distance).collect();
        let feats: Vec<[f64; 4]> = track.segments().iter().map(|s| s.features()).collect();
        let built = build_supersegments(track);
        let mut it = built.iter();
        for &c in &dist {
            match brute_force_window(&dist, &feats, c) {
                Window::Kept(v) => {
                    kept += 1;
                    match it.next() {
                        Some(s) if s.center_distance == c => {
                            for (a, b) in s.values.iter().zip(&v) {
                                max_err = max_err.max((a - b).abs());
                            }
                        }
                        _ => mismatched += 1,
                    }
                }
                Window::Gap => gaps += 1,
                Window::Extrapolates => ends += 1,
            }
        }
        mismatched += it.count();
    }
    let el = t.elapsed();
    pass_if(
        mismatched == 0 && max_err <= 1e-10 && gaps > 0 && within(el, 60.0),
        format!(
            "100 tracks: {kept} kept, {gaps} gap discards, {ends} end discards, {mismatched} decision mismatches, max |diff| {max_err:.1e}, {:.1} s",
            el.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. split

fn c3_split() -> Outcome {
    let ids: Vec<String> = (0..384).map(|i| format!("track_{i:03}")).collect();
    let counts: Vec<_> = (0..5).map(|seed| split_tracks(&ids, SplitRatios::default(), seed).unwrap().counts()).collect();
    pass_if(counts.iter().all(|&c| c == (268, 39, 77)), format!("384 ids -> {:?} over seeds 0..5", counts[0]))
}

// ---------------------------------------------------------------------------
// shared default-config pipeline run (criteria 4, 7, 8)

const RUN_SEED: u64 = 7;

struct PipelineRun {
    _dir: tempfile::TempDir,
    ws: Workspace,
    cfg: PipelineConfig,
    train_time: Duration,
    total_time: Duration,
}

fn default_run() -> &'static Result<PipelineRun, String> {
    static RUN: OnceLock<Result<PipelineRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let ws = Workspace::new(&dir.path().join("a")).map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig::default();
        cfg.override_seed(RUN_SEED);
        let t = Instant::now();
        let timings = commands::pipeline(&cfg, &ws, Some(RUN_SEED)).map_err(|e| e.to_string())?;
        let total_time = t.elapsed();
        let train_time = timings.iter().filter(|(s, _)| s.starts_with("train:")).map(|(_, d)| *d).sum();
        Ok(PipelineRun { _dir: dir, ws, cfg, train_time, total_time })
    })
}

fn run_or_panic() -> &'static PipelineRun {
    default_run().as_ref().unwrap_or_else(|e| panic!("default pipeline failed: {e}"))
}

// ---------------------------------------------------------------------------
// 4. training

fn read_losses(path: &Path) -> Vec<(f64, f64)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect()
}

fn c4_training() -> Outcome {
    let run = run_or_panic();
    let ws = &run.ws;
    let n_tracks = run.cfg.synth.config.n_tracks;
    let sets: Vec<_> = [Split::Train, Split::Val, Split::Test].iter().map(|&s| commands::load_split(ws, s).unwrap()).collect();
    let n_windows: usize = sets.iter().map(|s| s.len()).sum();
    let mut ok = n_tracks >= 20 && n_windows >= 4000 && within(run.train_time, 900.0);
    let mut parts = vec![format!("{n_tracks} tracks, {n_windows} windows")];
    for arch in [Arch::Lstm, Arch::Cnn] {
        let model = commands::load_trained(ws, arch).unwrap();
        let test = standardize(sets[2].clone(), &model.stats).unwrap();
        let m = evaluate_reconstruction(&model, &test).unwrap();
        let losses = read_losses(&ws.path(&commands::train_log_name(arch)));
        let finite = losses.iter().all(|(a, b)| a.is_finite() && b.is_finite());
        let improved = losses.last().unwrap().0 < losses[0].0;
        ok &= finite && improved && m.r2.iter().all(|&r| r >= 0.90);
        let r2: Vec<String> = FEATURE_NAMES.iter().zip(&m.r2).map(|(f, r)| format!("{f}={r:.3}")).collect();
        parts.push(format!("{} {} epochs r2 [{}]", arch.name(), losses.len(), r2.join(" ")));
    }
    parts.push(format!("training {:.0} s", run.train_time.as_secs_f64()));
    pass_if(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 5. UMAP components

fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn knn_oracle(points: &[f64], dim: usize, k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = points.len() / dim;
    let (mut idx, mut dst) = (Vec::new(), Vec::new());
    for i in 0..n {
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((0..dim).map(|d| (points[i * dim + d] - points[j * dim + d]).powi(2)).sum::<f64>().sqrt(), j))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(d, j) in &all[..k] {
            idx.push(j);
            dst.push(d);
        }
    }
    (idx, dst)
}

/// Grid search then repeated Nelder-Mead on the mean squared residual of
/// `1 / (1 + a d^(2b))` against the offset exponential target.
fn ab_oracle(min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (1..=300).map(|i| 3.0 * i as f64 / 300.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x <= min_dist { 1.0 } else { (-(x - min_dist)).exp() }).collect();
    let cost = |p: [f64; 2]| -> f64 {
        if p[0] <= 0.0 || p[1] <= 0.0 {
            return f64::INFINITY;
        }
        xs.iter().zip(&ys).map(|(&x, &y)| (1.0 / (1.0 + p[0] * x.powf(2.0 * p[1])) - y).powi(2)).sum::<f64>() / 300.0
    };
    let mut best = [1.0, 1.0];
    for ia in 0..=80 {
        for ib in 0..=80 {
            let p = [10f64.powf(-1.0 + 2.0 * ia as f64 / 80.0), 0.1 + 2.9 * ib as f64 / 80.0];
            if cost(p) < cost(best) {
                best = p;
            }
        }
    }
    for _ in 0..5 {
        let mut s = [best, [best[0] * 1.05, best[1]], [best[0], best[1] * 1.05]];
        for _ in 0..5000 {
            s.sort_by(|a, b| cost(*a).total_cmp(&cost(*b)));
            let [lo, mid, hi] = s;
            let c = [(lo[0] + mid[0]) / 2.0, (lo[1] + mid[1]) / 2.0];
            let at = |t: f64| [c[0] + t * (hi[0] - c[0]), c[1] + t * (hi[1] - c[1])];
            let r = at(-1.0);
            if cost(r) < cost(lo) {
                let e = at(-2.0);
                s[2] = if cost(e) < cost(r) { e } else { r };
            } else if cost(r) < cost(mid) {
                s[2] = r;
            } else {
                let k = at(0.5);
                if cost(k) < cost(hi) {
                    s[2] = k;
                } else {
                    s[1] = [(lo[0] + mid[0]) / 2.0, (lo[1] + mid[1]) / 2.0];
                    s[2] = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
                }
            }
        }
        s.sort_by(|a, b| cost(*a).total_cmp(&cost(*b)));
        best = s[0];
    }
    (best[0], best[1])
}

fn c5_umap_components() -> Outcome {
    let t = Instant::now();
    let pts = random_points(500, 16, 5);
    let knn = knn_exact(&pts, 16, 50).unwrap();
    let (idx, dst) = knn_oracle(&pts, 16, 50);
    let knn_ok = knn.indices == idx && knn.distances == dst;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..2000 {
        let k = rng.random_range(2..80);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let mut d: Vec<f64> = (0..k).map(|_| scale * rng.random_range(0.0..1.0f64)).collect();
        d.sort_by(f64::total_cmp);
        let (rho, sigma) = smooth_knn(&d);
        if sigma <= SIGMA_BRACKET.0 * 1.000001 || sigma >= SIGMA_BRACKET.1 * 0.999999 {
            continue;
        }
        let s: f64 = d.iter().map(|&x| (-(x - rho).max(0.0) / sigma).exp()).sum();
        worst = worst.max((s - (k as f64).log2()).abs());
        checked += 1;
    }

    let mut ab = Vec::new();
    let mut ab_ok = true;
    for min_dist in [0.0001, 0.1] {
        let fit = fit_ab(min_dist, 1.0).unwrap();
        let (a, b) = ab_oracle(min_dist);
        ab_ok &= (fit.a - a).abs() <= 1e-3 * a && (fit.b - b).abs() <= 1e-3 * b;
        ab.push(format!("min_dist {min_dist}: (a,b)=({:.4},{:.4}) oracle ({a:.4},{b:.4})", fit.a, fit.b));
    }
    let el = t.elapsed();
    pass_if(
        knn_ok && worst < 1e-5 && checked > 1000 && ab_ok && within(el, 120.0),
        format!(
            "kNN 500x16 exact={knn_ok}; smooth_knn max residual {worst:.1e} over {checked} rows; {}; {:.1} s",
            ab.join(", "),
            el.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. UMAP separation

fn purity(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let hits: usize = (0..k)
        .map(|c| {
            let mut counts = vec![0usize; k];
            pred.iter().zip(truth).filter(|(p, _)| **p == c).for_each(|(_, t)| counts[*t] += 1);
            *counts.iter().max().unwrap()
        })
        .sum();
    hits as f64 / pred.len() as f64
}

fn c6_umap_separation() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (mut pts, mut labels) = (Vec::new(), Vec::new());
    // Centers on coordinate axes, pairwise 8 sigma apart.
    let offset = 8.0 / std::f64::consts::SQRT_2;
    for c in 0..3 {
        for _ in 0..300 {
            for d in 0..16 {
                let e: f64 = rng.sample(StandardNormal);
                pts.push(e + if d == c { offset } else { 0.0 });
            }
            labels.push(c);
        }
    }
    let cfg = UmapConfig { n_neighbors: 50, min_dist: 0.0001, ..UmapConfig::default() };
    let (_, layout) = umap_fit(&pts, 16, &cfg).unwrap();
    let flat = layout.flat();
    let km = kmeans(&flat, 2, KMeansConfig::new(3), 0).unwrap();
    let s = silhouette(&flat, 2, &km.assignments).unwrap();
    let p = purity(&km.assignments, &labels, 3);
    let el = t.elapsed();
    pass_if(
        s > 0.5 && p >= 0.95 && within(el, 180.0),
        format!("silhouette {s:.3}, purity {:.1}%, {:.1} s", 100.0 * p, el.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 7. compactness direction

fn median3(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c7_compactness() -> Outcome {
    let run = run_or_panic();
    let t = Instant::now();
    let ws = &run.ws;
    let train = commands::load_split(ws, Split::Train).unwrap();
    let sample = umap_sample(&run.cfg, train.len()).unwrap();
    let stats = compute_stats(&train).unwrap();
    let raw = standardize(train.subset(&sample), &stats).unwrap().flat_values();
    let inputs: Vec<(&str, Vec<f64>, usize)> = vec![
        ("original", raw, WINDOW_VALUES),
        ("lstm", read_embeddings(&ws.path(&commands::embeddings_name(Arch::Lstm))).unwrap().1, 16),
        ("cnn", read_embeddings(&ws.path(&commands::embeddings_name(Arch::Cnn))).unwrap().1, 16),
    ];
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in [RUN_SEED, RUN_SEED + 1, RUN_SEED + 2] {
        let layouts: Vec<Vec<f64>> = inputs
            .iter()
            .map(|(name, pts, dim)| {
                if seed == RUN_SEED {
                    // The pipeline already projected with this seed.
                    let f = std::fs::File::open(ws.path(&format!("layout_{name}.csv"))).unwrap();
                    read_layout_csv(f).unwrap().layout.flat()
                } else {
                    let cfg = UmapConfig { seed, ..run.cfg.umap.config };
                    umap_fit(pts, *dim, &cfg).unwrap().1.flat()
                }
            })
            .collect();
        let schemes: Vec<(&str, &[f64])> = inputs.iter().zip(&layouts).map(|((n, _, _), l)| (*n, l.as_slice())).collect();
        let report = compactness_report(&schemes, 2, 3, seed).unwrap();
        for (i, s) in report.schemes.iter().enumerate() {
            ratios[i].push(s.compactness_ratio);
        }
    }
    let med: Vec<f64> = ratios.into_iter().map(median3).collect();
    let el = t.elapsed();
    let holds = med[1] <= med[0] && med[2] <= med[0];
    let detail = format!(
        "median compactness ratio original {:.4}, lstm {:.4}, cnn {:.4} (k=3, 3 seeds), {:.0} s",
        med[0],
        med[1],
        med[2],
        el.as_secs_f64()
    );
    let status = if !within(el, 600.0) {
        Status::Fail
    } else if holds {
        Status::Pass
    } else {
        Status::Warn
    };
    Outcome { status, detail }
}

// ---------------------------------------------------------------------------
// 8. determinism

fn c8_determinism() -> Outcome {
    let run = run_or_panic();
    let t = Instant::now();
    let other = run.ws.dir.parent().unwrap().join("b");
    let out = Command::new(env!("CARGO_BIN_EXE_icetopo"))
        .args(["--seed", &RUN_SEED.to_string(), "--out", other.to_str().unwrap(), "pipeline"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "second run failed: {}", String::from_utf8_lossy(&out.stderr));
    let second = t.elapsed();
    let names: Vec<String> = std::fs::read_dir(&run.ws.dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let required = ["model_lstm.aewt", "model_cnn.aewt", "embeddings_lstm.csv", "embeddings_cnn.csv", "layout_original.csv", "layout_lstm.csv", "layout_cnn.csv", "umap.svg", "manifest.json"];
    let missing: Vec<&str> = required.iter().copied().filter(|r| !names.iter().any(|n| n == r)).collect();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(run.ws.dir.join(n)).ok() != std::fs::read(other.join(n.as_str())).ok())
        .collect();
    let total = run.total_time + second;
    pass_if(
        missing.is_empty() && differing.is_empty() && within(total, 1800.0),
        format!(
            "{} files compared, differing {differing:?}, missing {missing:?}; runs {:.0} s + {:.0} s",
            names.len(),
            run.total_time.as_secs_f64(),
            second.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. persistence

fn c9_persistence() -> Outcome {
    let stats = FeatureStats { mean: [0.2, 8.0, 0.0, 30.0], std: [0.4, 2.0, 1.0, 9.0] };
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in [Arch::Lstm, Arch::Cnn] {
        let m = TrainedModel { net: Autoencoder::new(ArchSpec::standard(arch), 9).unwrap(), stats };
        let mut first = Vec::new();
        write_model(&mut first, &m).unwrap();
        let mut second = Vec::new();
        write_model(&mut second, &read_model(first.as_slice()).unwrap()).unwrap();
        let identical = first == second;

        let mut bad = first.clone();
        bad[..4].copy_from_slice(b"WEAT");
        let magic = matches!(read_model(bad.as_slice()), Err(Error::Format(m)) if m.contains("magic"));
        let truncated = (1..first.len())
            .step_by(97)
            .all(|cut| matches!(read_model(&first[..cut]), Err(Error::Format(m)) if m.contains("truncated") || m.contains("magic")));
        ok &= identical && magic && truncated;
        parts.push(format!("{}: {} bytes, identical={identical}, bad magic={magic}, truncation={truncated}", arch.name(), first.len()));
    }
    pass_if(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------

fn report_line(n: usize, name: &str, o: &Outcome) -> String {
    let s = match o.status {
        Status::Pass => "PASS",
        Status::Warn => "WARN",
        Status::Fail => "FAIL",
    };
    format!("[{s}] {n}. {name}: {}", o.detail)
}

#[test]
fn acceptance_suite() {
    type Check = fn() -> Outcome;
    let criteria: [(usize, &str, Check); 9] = [
        (1, "gradient correctness", c1_gradients),
        (2, "super-segment oracle", c2_supersegments),
        (3, "split reproduction", c3_split),
        (5, "UMAP component oracles", c5_umap_components),
        (6, "UMAP end-to-end separation", c6_umap_separation),
        (9, "model persistence", c9_persistence),
        (4, "training behavior", c4_training),
        (7, "compactness direction", c7_compactness),
        (8, "pipeline determinism", c8_determinism),
    ];
    let mut lines = Vec::new();
    for (n, name, check) in criteria {
        let o = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome { status: Status::Fail, detail: format!("panicked: {msg}") }
            });
        let line = report_line(n, name, &o);
        let _ = writeln!(std::io::stderr(), "{line}");
        lines.push((n, o.status, line));
    }
    lines.sort_by_key(|l| l.0);
    let mut summary = String::from("\n==== acceptance summary ====\n");
    for (_, _, l) in &lines {
        summary.push_str(l);
        summary.push('\n');
    }
    let _ = std::io::stderr().write_all(summary.as_bytes());
    let failed: Vec<usize> = lines.iter().filter(|l| l.1 == Status::Fail).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
