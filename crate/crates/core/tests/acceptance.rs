//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run a subset with `cargo test -p foltr-core --test acceptance -- 4 9`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use foltr::clicks::{ClickModel, SdbnKind};
use foltr::datasets::{Dataset, FoldRole, Grade};
use foltr::eval::{mean, ndcg_at_k, online_maximum, ttest_two_sided, EvalLabels, MetricConfig};
use foltr::federation::{
    centralized_pdgd, client_round, run_federation, FederationConfig, RoundContext, Strategy,
    FEDPROX_MUS,
};
use foltr::harness::experiment::{MANIFEST_FILE, METRICS_FILE};
use foltr::harness::{
    load_fold, make_synthetic_dataset, rerun_from_manifest, run_config, ExperimentConfig,
    HarnessError, RunManifest, SynthSpec,
};
use foltr::partition::{partition_iid, partition_type2};
use foltr::ranker::{list_log_probability, list_probability, sample_ranking};
use foltr::rng::{self, client_stream, SimRng};
use foltr::{Activation, Architecture, RankerParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const ALPHA: f64 = 0.05;

type Check = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Desk-scale arms run once and shared between criteria.
struct Arms {
    root: tempfile::TempDir,
    runs: HashMap<String, (ExperimentConfig, Vec<PathBuf>)>,
}

impl Arms {
    fn new() -> Self {
        Arms {
            root: tempfile::tempdir().expect("temp dir"),
            runs: HashMap::new(),
        }
    }

    fn load(path: &Path, root: &Path) -> Result<ExperimentConfig, String> {
        let mut c = ExperimentConfig::load(path).map_err(|e| e.to_string())?;
        c.output_dir = root.to_path_buf();
        Ok(c)
    }

    fn run(&mut self, name: &str) -> Result<&(ExperimentConfig, Vec<PathBuf>), String> {
        if !self.runs.contains_key(name) {
            let path = configs_dir().join("desk").join(format!("{name}.toml"));
            let c = Self::load(&path, self.root.path())?;
            let dirs = run_config(&c, None).map_err(|e| e.to_string())?;
            self.runs.insert(name.to_string(), (c, dirs));
        }
        Ok(&self.runs[name])
    }

    fn manifests(&mut self, name: &str) -> Result<Vec<RunManifest>, String> {
        let (_, dirs) = self.run(name)?;
        dirs.iter()
            .map(|d| RunManifest::load(&d.join(MANIFEST_FILE)).map_err(|e| e.to_string()))
            .collect()
    }

    fn final_offline(&mut self, name: &str) -> Result<Vec<f64>, String> {
        self.manifests(name)?
            .iter()
            .map(|m| {
                m.final_offline_ndcg
                    .ok_or_else(|| format!("{name}: no offline metric"))
            })
            .collect()
    }
}

/// `(mean a, mean b, p)` for final offline nDCG of two arms.
fn compare(arms: &mut Arms, a: &str, b: &str) -> Result<(f64, f64, f64), String> {
    let x = arms.final_offline(a)?;
    let y = arms.final_offline(b)?;
    let p = ttest_two_sided(&x, &y).map_err(|e| e.to_string())?;
    Ok((mean(&x), mean(&y), p))
}

fn dcg_oracle(grades: &[Grade], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

fn permutations(items: &[Grade]) -> Vec<Vec<Grade>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn c1_ndcg_oracle() -> Check {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let grades: Vec<Grade> = (0..n).map(|_| rng.random_range(0..=4)).collect();
        let k = rng.random_range(1..=8);
        let mut ranked = grades.clone();
        ranked.shuffle(&mut rng);
        ranked.truncate(rng.random_range(1..=n));
        let ideal = permutations(&grades)
            .iter()
            .map(|p| dcg_oracle(p, k))
            .fold(0.0, f64::max);
        let want = if ideal == 0.0 {
            1.0
        } else {
            dcg_oracle(&ranked, k) / ideal
        };
        let got = ndcg_at_k(&ranked, &grades, k).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max |error| {worst:.1e} over 1000 instances in {secs:.2}s");
    if worst <= 1e-12 && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c2_gradients() -> Check {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut draws = 0;
    let kinds = [None, Some(Activation::Tanh), Some(Activation::Sigmoid)];
    for kind in kinds {
        for _ in 0..100 {
            let features = rng.random_range(1..=8);
            let arch = match kind {
                None => Architecture::Linear { features },
                Some(activation) => Architecture::Neural {
                    features,
                    hidden: rng.random_range(1..=6),
                    activation,
                },
            };
            let theta: Vec<f64> = (0..arch.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let x: Vec<f64> = (0..features).map(|_| rng.random_range(-2.0..2.0)).collect();
            let params = RankerParams::new(arch, theta.clone()).map_err(|e| e.to_string())?;
            let analytic = params.score_gradient(&x).map_err(|e| e.to_string())?;
            let mut diff2 = 0.0;
            let mut norm = 0.0;
            for i in 0..theta.len() {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[i] += h;
                minus[i] -= h;
                let f = |t: Vec<f64>| RankerParams::new(arch, t).unwrap().score(&x).unwrap();
                let numeric = (f(plus) - f(minus)) / (2.0 * h);
                diff2 += (numeric - analytic[i]).powi(2);
                norm += numeric.powi(2) + analytic[i].powi(2);
            }
            let rel = diff2.sqrt() / norm.sqrt().max(1e-8);
            worst = worst.max(rel);
            draws += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max relative error {worst:.1e} over {draws} draws in {secs:.2}s");
    if worst < 1e-4 && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c3_plackett_luce() -> Check {
    let mut rng = SimRng::seed_from_u64(303);
    let scores = [0.9, -0.4, 0.3];
    let orders = permutations(&[0, 1, 2]);
    let mut counts = vec![0usize; orders.len()];
    let samples = 100_000;
    for _ in 0..samples {
        let r = sample_ranking(&scores, 3, &mut rng).map_err(|e| e.to_string())?;
        let r: Vec<Grade> = r.iter().map(|&i| i as Grade).collect();
        let idx = orders
            .iter()
            .position(|o| *o == r)
            .ok_or("not a permutation")?;
        counts[idx] += 1;
    }
    let mut worst_freq = 0.0f64;
    for (o, &c) in orders.iter().zip(&counts) {
        let displayed: Vec<usize> = o.iter().map(|&i| i as usize).collect();
        let (p, _) = list_probability(&scores, &displayed).map_err(|e| e.to_string())?;
        worst_freq = worst_freq.max((c as f64 / samples as f64 - p).abs());
    }

    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=12);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shift = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let mut displayed: Vec<usize> = (0..n).collect();
        displayed.shuffle(&mut rng);
        displayed.truncate(rng.random_range(1..=n));
        let a = list_log_probability(&s, &displayed).map_err(|e| e.to_string())?;
        let b = list_log_probability(&shifted, &displayed).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max((a - b).abs());
    }
    let detail = format!(
        "max frequency error {worst_freq:.4} over {samples} samples; max log-shift error {worst_shift:.1e}"
    );
    if worst_freq <= 0.01 && worst_shift <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_graded(seed: u64) -> Dataset {
    make_synthetic_dataset(
        &SynthSpec {
            num_queries: 40,
            docs_per_query: 15,
            feature_count: 6,
            grade_scale: 5,
            noise: 0.5,
            seed,
        },
        0,
        FoldRole::Train,
    )
}

fn base_config(arch: Architecture, seed: u64, rounds: usize) -> FederationConfig {
    FederationConfig {
        arch,
        click: ClickModel::sdbn(SdbnKind::Perfect, 5).unwrap(),
        interactions_per_round: 5,
        rounds,
        strategy: Strategy::FedAvg,
        learning_rate: 0.1,
        cutoff: 10,
        seed,
        metrics: MetricConfig {
            stride: rounds,
            ..MetricConfig::default()
        },
        eval_labels: EvalLabels::Graded,
        checkpoint_stride: 0,
    }
}

fn c4_single_client() -> Check {
    let ds = small_graded(4);
    let plan = partition_iid(&ds, 1).map_err(|e| e.to_string())?;
    let archs = [
        Architecture::Linear { features: 6 },
        Architecture::Neural {
            features: 6,
            hidden: 4,
            activation: Activation::Tanh,
        },
    ];
    for arch in archs {
        let seed = 44;
        let mut config = base_config(arch, seed, 100);
        config.interactions_per_round = 1;
        config.learning_rate = if arch.default_split().is_some() {
            0.01
        } else {
            0.1
        };
        let fed = run_federation(&config, &plan, &ds, &ds).map_err(|e| e.to_string())?;
        let start = RankerParams::init(arch, &mut rng::stream(seed, rng::tag::INIT, 0, 0));
        let central = centralized_pdgd(start, &plan.clients[0].pool, &ds, &config, 100, |t| {
            client_stream(seed, 0, t)
        })
        .map_err(|e| e.to_string())?;
        let same = fed
            .final_params
            .theta
            .iter()
            .zip(&central.theta)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || fed.final_params.theta == RankerParams::zeros(arch).theta {
            return Err(format!(
                "{arch:?}: federated and centralized parameters differ"
            ));
        }
    }
    Ok("linear and neural: bit-identical after 100 rounds".into())
}

fn c5_type1(arms: &mut Arms) -> Check {
    let (iid, non, p) = compare(arms, "type1_iid", "type1_noniid")?;
    let detail = format!("IID {iid:.4} vs non-IID {non:.4}, p = {p:.2e} (10 seeds)");
    if iid > non && p < ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c6_type2_saturation(arms: &mut Arms) -> Check {
    let mut worst = 0.0f64;
    for m in arms.manifests("type2_k1")? {
        let online = m.final_online.ok_or("missing online metric")?;
        let max = online_maximum(m.impressions.unwrap_or(0), m.config.eval.gamma);
        worst = worst.max((online - max).abs());
    }
    // more k=1 partitions: other client counts and seeds
    let ds = small_graded(6);
    let mut sweeps = 0;
    for clients in [5, 6, 8, 13] {
        for seed in 0..5u64 {
            let plan = partition_type2(&ds, 1, clients, seed).map_err(|e| e.to_string())?;
            let config = base_config(Architecture::Linear { features: 6 }, seed, 40);
            let r = run_federation(&config, &plan, &ds, &ds).map_err(|e| e.to_string())?;
            let max = online_maximum(r.impressions, config.metrics.gamma);
            worst = worst.max((r.final_online() - max).abs());
            sweeps += 1;
        }
    }
    let (iid, k1, p) = compare(arms, "type2_iid", "type2_k1")?;
    let detail = format!(
        "max |online - sum gamma^t| {worst:.1e} over 10 desk runs + {sweeps} sweeps; offline IID {iid:.4} vs k=1 {k1:.4}, p = {p:.2e}"
    );
    if worst <= 1e-9 && k1 < iid && p < ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_type2_k2(arms: &mut Arms) -> Check {
    let (k2, k1, p) = compare(arms, "type2_k2_c10", "type2_k1_c10")?;
    let detail = format!("k=2 {k2:.4} vs k=1 {k1:.4} with 10 clients, p = {p:.2e}");
    if k2 > k1 && p < ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_nulls(arms: &mut Arms) -> Check {
    let pairs = [
        ("type3_sdbn_iid", "type3_sdbn_noniid"),
        ("type3_pbm_iid", "type3_pbm_noniid"),
        ("type4_uniform", "type4_skewed"),
    ];
    let mut null = 0;
    let mut parts = Vec::new();
    for (a, b) in pairs {
        let (x, y, p) = compare(arms, a, b)?;
        if p >= ALPHA {
            null += 1;
        }
        parts.push(format!("{b}: {y:.4} vs {x:.4} p = {p:.2}"));
    }
    let detail = format!("{null}/3 not significant; {}", parts.join("; "));
    if 2 * null > pairs.len() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c9_fedprox() -> Check {
    let ds = small_graded(9);
    let arch = Architecture::Linear { features: 6 };
    let plan = partition_type2(&ds, 1, 5, 9).map_err(|e| e.to_string())?;
    let avg = base_config(arch, 9, 30);
    let mut prox = avg.clone();
    prox.strategy = Strategy::FedProx { mu: 0.0 };
    let a = run_federation(&avg, &plan, &ds, &ds).map_err(|e| e.to_string())?;
    let b = run_federation(&prox, &plan, &ds, &ds).map_err(|e| e.to_string())?;
    let bitwise = a
        .final_params
        .theta
        .iter()
        .zip(&b.final_params.theta)
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.metrics_csv() == b.metrics_csv();
    if !bitwise {
        return Err("mu = 0 diverges from FedAvg".into());
    }

    let iid = partition_iid(&ds, 5).map_err(|e| e.to_string())?;
    let mut drift = vec![Vec::new(); FEDPROX_MUS.len()];
    for seed in 0..30u64 {
        let global = RankerParams::init(arch, &mut rng::stream(seed, rng::tag::INIT, 0, 0));
        for (slot, &mu) in drift.iter_mut().zip(&FEDPROX_MUS) {
            let mut config = base_config(arch, seed, 1);
            config.strategy = Strategy::FedProx { mu };
            let ctx = RoundContext {
                config: &config,
                dataset: &ds,
                round: 0,
            };
            let mut per_client = Vec::new();
            for c in &iid.clients {
                let u = client_round(&global, c, &ctx).map_err(|e| e.to_string())?;
                let d: f64 = u
                    .theta
                    .iter()
                    .zip(&global.theta)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                per_client.push(d);
            }
            slot.push(mean(&per_client));
        }
    }
    let means: Vec<f64> = drift.iter().map(|d| mean(d)).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let detail = format!(
        "mu = 0 bit-identical; mean drift {}",
        FEDPROX_MUS
            .iter()
            .zip(&means)
            .map(|(mu, d)| format!("{mu}: {d:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if monotone {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c10_datashare(arms: &mut Arms) -> Check {
    let (shared, plain, p) = compare(arms, "type2_k1_datashare", "type2_k1")?;
    let detail = format!("data-sharing {shared:.4} vs plain {plain:.4}, p = {p:.2e}");
    if shared > plain && p < ALPHA {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn example_configs() -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![configs_dir()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "toml") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism(arms: &mut Arms) -> Check {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    let mut skipped = Vec::new();
    for path in example_configs() {
        let label = path
            .strip_prefix(configs_dir())
            .unwrap_or(&path)
            .display()
            .to_string();
        let stem = path.file_stem().unwrap().to_string_lossy().to_string();
        let desk = path.parent().is_some_and(|p| p.ends_with("desk"));
        let original = if desk && arms.runs.contains_key(&stem) {
            arms.runs[&stem].1[0].clone()
        } else {
            let mut c = Arms::load(&path, &scratch.path().join("first"))?;
            match load_fold(&c, 0) {
                Err(HarnessError::Data(_)) => {
                    skipped.push(label);
                    continue;
                }
                Err(e) => return Err(format!("{label}: {e}")),
                Ok(_) => {}
            }
            c.seeds.truncate(1);
            run_config(&c, Some(4)).map_err(|e| format!("{label}: {e}"))?[0].clone()
        };
        for workers in [1, 3] {
            let out = scratch.path().join(format!("rerun_{workers}")).join(&stem);
            rerun_from_manifest(&original.join(MANIFEST_FILE), Some(&out), Some(workers))
                .map_err(|e| format!("{label}: {e}"))?;
            let a = fs::read(original.join(METRICS_FILE)).map_err(|e| e.to_string())?;
            let b = fs::read(out.join(METRICS_FILE)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{label}: metrics differ with {workers} workers"));
            }
        }
        checked.push(label);
    }
    let mut detail = format!(
        "{} configs byte-identical with 1 and 3 workers",
        checked.len()
    );
    if !skipped.is_empty() {
        detail += &format!("; not run, data absent: {}", skipped.join(", "));
    }
    if checked.is_empty() {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut arms = Arms::new();
    type Criterion<'a> = (usize, &'a str, Box<dyn Fn(&mut Arms) -> Check>);
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "nDCG matches the permutation oracle",
            Box::new(|_| c1_ndcg_oracle()),
        ),
        (
            2,
            "score gradients match finite differences",
            Box::new(|_| c2_gradients()),
        ),
        (
            3,
            "Plackett-Luce frequencies and shift invariance",
            Box::new(|_| c3_plackett_luce()),
        ),
        (
            4,
            "single client equals centralized PDGD",
            Box::new(|_| c4_single_client()),
        ),
        (5, "Type 1: IID beats intent skew", Box::new(c5_type1)),
        (
            6,
            "Type 2 k=1: online saturates, offline drops",
            Box::new(c6_type2_saturation),
        ),
        (7, "Type 2: k=2 beats k=1", Box::new(c7_type2_k2)),
        (
            8,
            "Type 3/4: differences not significant",
            Box::new(c8_nulls),
        ),
        (
            9,
            "FedProx: mu=0 is FedAvg, drift shrinks with mu",
            Box::new(|_| c9_fedprox()),
        ),
        (
            10,
            "data-sharing beats plain FPDGD under k=1",
            Box::new(c10_datashare),
        ),
        (
            11,
            "reruns from manifests are byte-identical",
            Box::new(c11_determinism),
        ),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if !filter.is_empty() && !filter.contains(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut arms);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{id:>2}] {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name}: {d} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
