//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fedchip::corpus::{generate_synthetic, zscore_normalize};
use fedchip::divergence::{js_divergence, kl_divergence, Histogram};
use fedchip::evaluator::{accepts, chip_at_k_single, sigma_thresholds, Deviations, SlackMode};
use fedchip::experiment::{load_or_generate, prepare, run_protocol, SimConfig};
use fedchip::fedsim::model::{batch_loss, LoraHead};
use fedchip::fedsim::{
    fedavg, grad, run_federated, Backbone, Example, LoraAdapter, SurrogateModel,
};
use fedchip::partition::{dirichlet_reassign, kmeans, partition_corpus, DirichletSpec};
use fedchip::report::{parse_ppa, ReportDoc};
use fedchip::seeding;
use fedchip::Error;
use ndarray::array;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn chip_at_k_oracle() -> Check {
    let mut checked = 0;
    for n in 1..=12usize {
        for c in 0..=n {
            // Candidates 0..c pass; count size-k subsets containing one of them.
            let accepted_mask = (1u32 << c) - 1;
            let mut hits = vec![0usize; n + 1];
            for subset in 0u32..(1 << n) {
                if subset & accepted_mask != 0 {
                    hits[subset.count_ones() as usize] += 1;
                }
            }
            for (k, &h) in hits.iter().enumerate().skip(1) {
                let oracle = h as f64 / binomial(n, k);
                let got = chip_at_k_single(n, c, k).map_err(|e| e.to_string())?;
                ensure!(
                    (got - oracle).abs() < 1e-12,
                    "n={n} c={c} k={k}: {got} vs {oracle}"
                );
                checked += 1;
            }
            let k1 = chip_at_k_single(n, c, 1).map_err(|e| e.to_string())?;
            ensure!(
                k1 == c as f64 / n as f64,
                "k=1 identity fails at n={n} c={c}"
            );
        }
    }
    Ok(format!("{checked} (n, c, k) triples"))
}

fn three_sigma_rate() -> Check {
    const PHI_1: f64 = 0.841_344_746_068_543;
    let rounded_claim = 0.021 + 0.136 + 0.682;
    ensure!(
        (rounded_claim - PHI_1).abs() <= 0.01,
        "rounded claim {rounded_claim} outside band"
    );

    let corpus = generate_synthetic(3000, 7).map_err(|e| e.to_string())?;
    let t = sigma_thresholds(&corpus).map_err(|e| e.to_string())?;
    let draws = 100_000;
    let mut rng = seeding::stream(7, &[99]);
    let mut rates = Vec::new();
    for (which, sigma) in [t.sigma_area, t.sigma_power, t.sigma_slack]
        .into_iter()
        .enumerate()
    {
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut accepted = 0usize;
        for _ in 0..draws {
            let delta = normal.sample(&mut rng);
            let mut d = Deviations {
                area: 0.0,
                power: 0.0,
                slack: 0.0,
            };
            match which {
                0 => d.area = delta,
                1 => d.power = delta,
                _ => d.slack = delta,
            }
            accepted += accepts(&d, &t, SlackMode::Literal) as usize;
        }
        let rate = accepted as f64 / draws as f64;
        ensure!((rate - PHI_1).abs() <= 0.01, "metric {which}: rate {rate}");
        rates.push(format!("{rate:.4}"));
    }
    Ok(format!(
        "rates [{}], rounded claim {rounded_claim:.3}",
        rates.join(", ")
    ))
}

fn scalar_adapter(a: f64, b: f64) -> LoraAdapter {
    LoraAdapter {
        rank: 1,
        alpha: 1.0,
        heads: vec![LoraHead {
            a: array![[a]],
            b: array![[b]],
        }],
    }
}

fn max_entry_diff(x: &LoraAdapter, y: &LoraAdapter) -> f64 {
    let mut m = 0.0f64;
    for (p, q) in x.tensors().zip(y.tensors()) {
        for (u, v) in p.iter().zip(q.iter()) {
            m = m.max((u - v).abs());
        }
    }
    m
}

fn fedavg_algebra() -> Check {
    let backbone = Backbone::new(3);
    let mut rng = seeding::stream(3, &[1]);
    let cfg = fedchip::fedsim::TrainConfig::default();
    let adapters: Vec<LoraAdapter> = (0..4)
        .map(|_| {
            let mut a = backbone.initial_adapter(&cfg).unwrap();
            a.randomize(0.3, &mut rng);
            a
        })
        .collect();

    let single = fedavg(&adapters[..1], &[17.0]).map_err(|e| e.to_string())?;
    ensure!(single == adapters[0], "single-client aggregate differs");

    let two = fedavg(
        &[scalar_adapter(0.0, 0.0), scalar_adapter(4.0, 4.0)],
        &[1.0, 3.0],
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        two.heads[0].a[[0, 0]] == 3.0 && two.heads[0].b[[0, 0]] == 3.0,
        "1:3 mean is not 3.0"
    );

    let weights = [120.0, 7.0, 33.0, 410.0];
    let base = fedavg(&adapters, &weights).map_err(|e| e.to_string())?;
    let scaled: Vec<f64> = weights.iter().map(|w| w * 0.37).collect();
    let scale_err = max_entry_diff(&base, &fedavg(&adapters, &scaled).unwrap());
    ensure!(
        scale_err < 1e-12,
        "weight scaling moved entries by {scale_err:e}"
    );

    let order = [2usize, 0, 3, 1];
    let perm_a: Vec<LoraAdapter> = order.iter().map(|&i| adapters[i].clone()).collect();
    let perm_w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let perm_err = max_entry_diff(&base, &fedavg(&perm_a, &perm_w).unwrap());
    ensure!(
        perm_err < 1e-12,
        "client permutation moved entries by {perm_err:e}"
    );
    Ok(format!(
        "scaling {scale_err:.1e}, permutation {perm_err:.1e}"
    ))
}

fn gradient_check() -> Check {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = seeding::stream(7, &[instance]);
        let f = rng.random_range(2..8);
        let sizes: Vec<usize> = (0..rng.random_range(1..4))
            .map(|_| rng.random_range(2..6))
            .collect();
        let model = SurrogateModel::random(f, &sizes, 0.5, &mut rng);
        let rank = rng.random_range(1..4);
        let alpha = rng.random_range(0.5..4.0);
        let mut adapter =
            LoraAdapter::init(&model, rank, alpha, &mut rng).map_err(|e| e.to_string())?;
        adapter.randomize(0.5, &mut rng);
        let batch: Vec<Example> = (0..rng.random_range(1..6))
            .map(|_| Example {
                features: (0..f).map(|_| rng.random_range(-1.0..1.0)).collect(),
                targets: sizes.iter().map(|&v| rng.random_range(0..v)).collect(),
            })
            .collect();

        let (analytic, _) = grad(&model, &adapter, &batch).map_err(|e| e.to_string())?;
        let mut numeric = adapter.zeros_like();
        let n_tensors = adapter.tensors().count();
        for t in 0..n_tensors {
            let len = adapter.tensors().nth(t).unwrap().len();
            for idx in 0..len {
                let mut plus = adapter.clone();
                plus.tensors_mut().nth(t).unwrap().as_slice_mut().unwrap()[idx] += h;
                let mut minus = adapter.clone();
                minus.tensors_mut().nth(t).unwrap().as_slice_mut().unwrap()[idx] -= h;
                let lp = batch_loss(&model, &plus, &batch).unwrap().loss;
                let lm = batch_loss(&model, &minus, &batch).unwrap().loss;
                numeric
                    .tensors_mut()
                    .nth(t)
                    .unwrap()
                    .as_slice_mut()
                    .unwrap()[idx] = (lp - lm) / (2.0 * h);
            }
        }
        let mut diff = 0.0;
        let (mut na, mut nn) = (0.0, 0.0);
        for (a, n) in analytic.tensors().zip(numeric.tensors()) {
            for (x, y) in a.iter().zip(n.iter()) {
                diff += (x - y) * (x - y);
                na += x * x;
                nn += y * y;
            }
        }
        let denom = f64::max(na, nn).sqrt();
        let rel = if denom == 0.0 {
            0.0
        } else {
            diff.sqrt() / denom
        };
        ensure!(rel < 1e-4, "instance {instance}: relative error {rel:e}");
        worst = worst.max(rel);
    }
    Ok(format!(
        "worst relative error {worst:.2e} over 100 instances"
    ))
}

fn regime_ordering() -> Check {
    let cfg = SimConfig::default();
    let prepared = prepare(load_or_generate(&cfg).map_err(|e| e.to_string())?, &cfg)
        .map_err(|e| e.to_string())?;
    let o = run_protocol(&prepared, &cfg, None).map_err(|e| e.to_string())?;
    let central = o.centralized.chip_at_1();
    let fed = o.federated.chip_at_1();
    let indep: Vec<f64> = o.independent.iter().map(|s| s.chip_at_1()).collect();
    let best = indep.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "centralized {central:.4}, federated {fed:.4}, independent {:?}, federated - best independent {:+.4}",
        indep.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
        fed - best
    );
    ensure!(central >= fed, "centralized below federated: {detail}");
    ensure!(fed >= best, "federated below best independent: {detail}");
    ensure!(fed - best >= 0.02, "margin under 0.02: {detail}");
    Ok(detail)
}

fn normalized(w: Vec<f64>) -> Histogram {
    let total: f64 = w.iter().sum();
    let edges = (0..=w.len()).map(|i| i as f64).collect();
    Histogram::from_probs(edges, w.into_iter().map(|x| x / total).collect()).unwrap()
}

fn divergence_laws() -> Check {
    let mut rng = seeding::stream(7, &[6]);
    for pair in 0..1000 {
        let bins = rng.random_range(2..40);
        let mut draw = || {
            let w: Vec<f64> = (0..bins)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let vals: Vec<f64> = w
                .iter()
                .enumerate()
                .flat_map(|(i, &x)| std::iter::repeat_n(i as f64 + 0.5, (x * 20.0) as usize))
                .collect();
            if vals.is_empty() {
                Histogram::build(&[0.5], bins, (0.0, bins as f64)).unwrap()
            } else {
                Histogram::build(&vals, bins, (0.0, bins as f64)).unwrap()
            }
        };
        let (p, q) = (draw(), draw());
        let kl = kl_divergence(&p, &q).unwrap();
        ensure!(kl >= 0.0, "pair {pair}: KL {kl}");
        ensure!(
            kl_divergence(&p, &p).unwrap() == 0.0,
            "pair {pair}: KL(P,P) != 0"
        );
        let (a, b) = (
            js_divergence(&p, &q).unwrap(),
            js_divergence(&q, &p).unwrap(),
        );
        ensure!(
            (a - b).abs() < 1e-12,
            "pair {pair}: JSD asymmetric by {:e}",
            (a - b).abs()
        );
        ensure!(
            (0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a),
            "pair {pair}: JSD {a}"
        );
    }
    let p = normalized(vec![0.5, 0.5]);
    let q = normalized(vec![0.25, 0.75]);
    let kl = kl_divergence(&p, &q).unwrap();
    let expected = 0.5 * (4.0f64 / 3.0).ln();
    ensure!(
        (kl - expected).abs() < 1e-12,
        "hand pair {kl} vs {expected}"
    );
    Ok(format!("1000 random pairs, hand pair {kl:.12}"))
}

fn partition_contract() -> Check {
    let spec = DirichletSpec::new(1.0, 0.2).unwrap();
    for seed in 0..20u64 {
        let corpus = generate_synthetic(1000, seed).map_err(|e| e.to_string())?;
        let (rows, _) = zscore_normalize(&corpus).map_err(|e| e.to_string())?;
        let points: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let km = kmeans(&points, 3, seed, 300, 1e-10).map_err(|e| e.to_string())?;
        for w in km.inertia_trace.windows(2) {
            ensure!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "seed {seed}: inertia rose {} -> {}",
                w[0],
                w[1]
            );
        }
        let (labels, moved) =
            dirichlet_reassign(&km.labels, 3, &spec, seed).map_err(|e| e.to_string())?;
        ensure!(
            moved.len() == 200,
            "seed {seed}: {} reassigned",
            moved.len()
        );
        let moved: HashSet<usize> = moved.into_iter().collect();
        for i in (0..labels.len()).filter(|i| !moved.contains(i)) {
            ensure!(
                labels[i] == km.labels[i],
                "seed {seed}: unselected label {i} changed"
            );
        }

        let (_, subs) = partition_corpus(&corpus, 3, &spec, seed).map_err(|e| e.to_string())?;
        let mut ids: Vec<&str> = subs
            .iter()
            .flat_map(|s| s.iter().map(|r| r.id.as_str()))
            .collect();
        ids.sort_unstable();
        let mut all: Vec<&str> = corpus.iter().map(|r| r.id.as_str()).collect();
        all.sort_unstable();
        ensure!(
            ids == all,
            "seed {seed}: sub-corpora do not partition the ids"
        );
    }
    Ok("20 seeds x 1000 records".into())
}

// Message fields, plus the `v`/`dim`/`data` layout of serialized arrays.
const ALLOWED_KEYS: [&str; 12] = [
    "client_id",
    "round",
    "num_examples",
    "adapter",
    "rank",
    "alpha",
    "heads",
    "a",
    "b",
    "v",
    "dim",
    "data",
];

fn walk(v: &Value, strings: &mut Vec<String>, numbers: &mut Vec<f64>) {
    match v {
        Value::String(s) => strings.push(s.clone()),
        Value::Number(n) => numbers.push(n.as_f64().unwrap()),
        Value::Array(xs) => xs.iter().for_each(|x| walk(x, strings, numbers)),
        Value::Object(m) => {
            for (k, x) in m {
                strings.push(k.clone());
                walk(x, strings, numbers);
            }
        }
        _ => {}
    }
}

fn privacy_audit() -> Check {
    let cfg = SimConfig::default();
    let corpus = load_or_generate(&cfg).map_err(|e| e.to_string())?;
    let prepared = prepare(corpus, &cfg).map_err(|e| e.to_string())?;
    let backbone = Backbone::new(cfg.seed);
    let mut messages: Vec<Vec<u8>> = Vec::new();
    let mut tap = |bytes: &[u8]| messages.push(bytes.to_vec());
    run_federated(&backbone, &prepared.train, &cfg.train, None, Some(&mut tap))
        .map_err(|e| e.to_string())?;
    ensure!(
        messages.len() == cfg.train.rounds * prepared.train.len(),
        "{} messages",
        messages.len()
    );

    let all = &prepared.corpus;
    let instructions: HashSet<&str> = all.iter().map(|r| r.instruction.as_str()).collect();
    let metric_bits: HashSet<u64> = all
        .iter()
        .flat_map(|r| r.metrics.to_array())
        .map(f64::to_bits)
        .collect();
    let allowed: HashSet<&str> = ALLOWED_KEYS.into_iter().collect();
    let template_words = [
        "systolic",
        "data width",
        "approximation",
        "tiling",
        "Generate",
    ];

    let mut values = 0usize;
    for (m, bytes) in messages.iter().enumerate() {
        let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
        for w in template_words {
            ensure!(
                !text.contains(w),
                "message {m} contains instruction text {w:?}"
            );
        }
        let v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let (mut strings, mut numbers) = (Vec::new(), Vec::new());
        walk(&v, &mut strings, &mut numbers);
        for s in &strings {
            ensure!(
                !instructions.contains(s.as_str()),
                "message {m} carries an instruction"
            );
            ensure!(
                allowed.contains(s.as_str()),
                "message {m} has unexpected field {s:?}"
            );
        }
        for x in &numbers {
            ensure!(
                !metric_bits.contains(&x.to_bits()),
                "message {m} carries raw metric value {x}"
            );
        }
        values += numbers.len();
    }
    Ok(format!(
        "{} messages, {values} numeric values scanned",
        messages.len()
    ))
}

fn golden_reports() -> Check {
    let dir = manifest_dir().join("tests/golden");
    let good: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("good/expected.json")).unwrap())
            .unwrap();
    let bad: BTreeMap<String, Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bad/expected.json")).unwrap())
            .unwrap();
    ensure!(
        good.len() >= 10 && bad.len() >= 5,
        "{} good / {} bad snippets",
        good.len(),
        bad.len()
    );

    for (name, want) in &good {
        let doc =
            ReportDoc::read(dir.join("good").join(name)).map_err(|e| format!("{name}: {e}"))?;
        let m = parse_ppa(&doc).map_err(|e| format!("{name}: {e}"))?;
        ensure!(
            m.area == want["area_um2"]
                && m.total_power == want["total_power_w"]
                && m.slack == want["slack_ns"],
            "{name}: got {m:?}"
        );
    }
    for (name, want) in &bad {
        let result = ReportDoc::read(dir.join("bad").join(name)).and_then(|d| parse_ppa(&d));
        let err = match result {
            Ok(m) => return Err(format!("{name}: parsed as {m:?}")),
            Err(e) => e,
        };
        let message = want["message"].as_str().unwrap();
        ensure!(err.to_string().contains(message), "{name}: {err}");
        match (want["kind"].as_str().unwrap(), &err) {
            ("validation", Error::Validation(_)) => {}
            ("parse", Error::Parse { line, .. }) => {
                ensure!(
                    *line as u64 == want["line"].as_u64().unwrap(),
                    "{name}: line {line}"
                );
            }
            (kind, e) => return Err(format!("{name}: expected {kind} error, got {e:?}")),
        }
    }
    Ok(format!("{} good, {} malformed", good.len(), bad.len()))
}

fn simulate_twice() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = manifest_dir().join("configs/desk.toml");
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_fedchip"))
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .env_remove("FEDCHIP_SEED")
            .status()
            .map_err(|e| e.to_string())
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ensure!(run(&a)?.success(), "first simulate failed");
    ensure!(run(&b)?.success(), "second simulate failed");
    let mut compared = 0;
    for name in [
        "history_centralized.csv",
        "history_federated.csv",
        "history_independent.csv",
    ] {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure!(!x.is_empty() && x == y, "{name} differs between runs");
        compared += x.len();
    }
    Ok(format!("{compared} bytes of history identical"))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "Chip@k matches subset enumeration",
            limit: Duration::from_secs(5),
            run: chip_at_k_oracle,
        },
        Criterion {
            id: 2,
            name: "three-sigma acceptance rate",
            limit: Duration::from_secs(5),
            run: three_sigma_rate,
        },
        Criterion {
            id: 3,
            name: "FedAvg algebra",
            limit: Duration::from_secs(1),
            run: fedavg_algebra,
        },
        Criterion {
            id: 4,
            name: "adapter gradients vs finite differences",
            limit: Duration::from_secs(10),
            run: gradient_check,
        },
        Criterion {
            id: 5,
            name: "regime ordering at desk scale",
            limit: Duration::from_secs(300),
            run: regime_ordering,
        },
        Criterion {
            id: 6,
            name: "divergence laws",
            limit: Duration::from_secs(2),
            run: divergence_laws,
        },
        Criterion {
            id: 7,
            name: "partition contract",
            limit: Duration::from_secs(10),
            run: partition_contract,
        },
        Criterion {
            id: 8,
            name: "client messages carry no raw data",
            limit: Duration::from_secs(60),
            run: privacy_audit,
        },
        Criterion {
            id: 9,
            name: "report parser golden files",
            limit: Duration::from_secs(1),
            run: golden_reports,
        },
        Criterion {
            id: 10,
            name: "simulate is byte-reproducible",
            limit: Duration::from_secs(300),
            run: simulate_twice,
        },
    ];

    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| c.name.contains(f.as_str()) || f == &c.id.to_string())
        {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {:?}", c.limit))
            }
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {:>2} {tag} {} ({elapsed:.2?}): {detail}",
            c.id, c.name
        );
        failed += outcome.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
