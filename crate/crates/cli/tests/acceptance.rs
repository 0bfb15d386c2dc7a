//! End-to-end acceptance checks.
//!
//! Every check prints one `PASS` or `FAIL` line (run with `--nocapture` to
//! see them); a test fails if any of its checks failed. The experiment
//! checks use the bundled configs, and the image-based ones read MNIST and
//! Fashion-MNIST from the workspace `data/` directory (see
//! `scripts/fetch_data.py`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;

use dlsim::aggregation::{fedavg_weights, merge, AggregationRule};
use dlsim::models::{mean_risk, risk_gradient, Dataset, ModelKind};
use dlsim::reporting::{cluster_purity, parse_sweep_csv, ExperimentResult};
use dlsim::rng::{stream, SimRng, Stream};
use dlsim::selection::softmax_probs;
use dlsim::simulator::init_clients;
use dlsim_cli::config::Method;
use dlsim_cli::{cmd_run, cmd_sweep, resolve_config, run_resolved};

const SEED: u64 = 20_240_611;

struct Checks {
    criterion: &'static str,
    failures: Vec<String>,
}

impl Checks {
    fn new(criterion: &'static str) -> Self {
        Checks {
            criterion,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, label: &str, ok: bool, detail: impl AsRef<str>) {
        let line = format!("[{}] {label}: {}", self.criterion, detail.as_ref());
        println!("{} {line}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures.push(line);
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "{} check(s) failed:\n{}",
            self.failures.len(),
            self.failures.join("\n")
        );
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn data_override() -> String {
    format!("data_dir={}", data_dir().display())
}

fn overrides(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn lookup<'a>(results: &'a [ExperimentResult], method: &str, rule: AggregationRule) -> &'a ExperimentResult {
    results
        .iter()
        .find(|r| r.method == method && r.rule == rule)
        .unwrap_or_else(|| panic!("no result for {method}/{rule}"))
}

fn mean_of(results: &[ExperimentResult], method: &str, rule: AggregationRule) -> f64 {
    lookup(results, method, rule).overall.mean
}

/// Serializes the long experiment runs so their timings are not inflated by
/// each other when the harness runs tests in parallel on few cores.
fn exclusive() -> MutexGuard<'static, ()> {
    static HEAVY: Mutex<()> = Mutex::new(());
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn within_minutes(elapsed: Duration, minutes: u64) -> bool {
    elapsed < Duration::from_secs(60 * minutes)
}

const SIMILARITY: [&str; 4] = ["inv_loss", "cos_grad", "cos_weight", "inv_l2"];
const RULES: [AggregationRule; 2] = [AggregationRule::FedAvg, AggregationRule::FedSim];

#[test]
fn c1_synthetic_concept_shift() {
    let mut c = Checks::new("1 synthetic");
    let cfg = resolve_config(&configs_dir().join("synthetic_concept.cfg"), &[], 0).unwrap();
    let out = tempfile::tempdir().unwrap();
    let _turn = exclusive();
    let started = Instant::now();
    let (_, results) = run_resolved(&cfg, out.path()).unwrap();
    let elapsed = started.elapsed();
    use AggregationRule::{FedAvg, FedSim};

    let oracle = mean_of(&results, "oracle", FedAvg);
    c.check("oracle in [8, 11]", (8.0..=11.0).contains(&oracle), format!("oracle {oracle:.3}"));
    for metric in ["cos_weight", "cos_grad"] {
        for rule in RULES {
            let v = mean_of(&results, metric, rule);
            c.check(
                &format!("{metric}/{rule} in [9.5, 12.5] and within 15% of oracle"),
                (9.5..=12.5).contains(&v) && (v - oracle).abs() <= 0.15 * oracle,
                format!("{v:.3} vs oracle {oracle:.3}"),
            );
        }
    }
    let inv_fa = mean_of(&results, "inv_loss", FedAvg);
    let inv_fs = mean_of(&results, "inv_loss", FedSim);
    let cw_fa = mean_of(&results, "cos_weight", FedAvg);
    c.check(
        "inv_loss/fedavg >= 2x cos_weight/fedavg",
        inv_fa >= 2.0 * cw_fa,
        format!("{inv_fa:.3} vs {cw_fa:.3}"),
    );
    c.check(
        "inv_loss/fedsim <= 0.6x inv_loss/fedavg",
        inv_fs <= 0.6 * inv_fa,
        format!("{inv_fs:.3} vs {inv_fa:.3}"),
    );
    let l2_fa = mean_of(&results, "inv_l2", FedAvg);
    let l2_fs = mean_of(&results, "inv_l2", FedSim);
    c.check(
        "inv_l2/fedsim <= 0.65x inv_l2/fedavg",
        l2_fs <= 0.65 * l2_fa,
        format!("{l2_fs:.3} vs {l2_fa:.3}"),
    );
    let random = mean_of(&results, "random", FedAvg);
    c.check(
        "random >= 10x oracle",
        random >= 10.0 * oracle,
        format!("{random:.3} vs {oracle:.3}"),
    );
    let local = mean_of(&results, "local", FedAvg);
    c.check("local in [20, 40]", (20.0..=40.0).contains(&local), format!("local {local:.3}"));
    c.check(
        "runtime under 5 minutes",
        within_minutes(elapsed, 5),
        format!("{:.1}s", elapsed.as_secs_f64()),
    );
    c.finish();
}

#[test]
fn c2_train_size_sweep() {
    let mut c = Checks::new("2 train-size sweep");
    let out = tempfile::tempdir().unwrap();
    let sets = overrides(&[
        r#"methods=["oracle","inv_loss","cos_grad"]"#,
        r#"rules=["fedavg"]"#,
    ]);
    let _turn = exclusive();
    let started = Instant::now();
    let dir = cmd_sweep(
        &configs_dir().join("synthetic_concept.cfg"),
        "train_size",
        &[50.0, 200.0, 800.0],
        out.path(),
        &sets,
        0,
    )
    .unwrap();
    let elapsed = started.elapsed();
    let (_, rows) = parse_sweep_csv(&dir.join("sweep_train_size.csv")).unwrap();
    let mut by_n: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.value as u64).or_default().insert(r.method, r.mean);
    }
    let mut gaps = Vec::new();
    for (n, m) in &by_n {
        let (oracle, inv, cos) = (m["oracle"], m["inv_loss"], m["cos_grad"]);
        gaps.push(inv - cos);
        c.check(
            &format!("n={n}: cos_grad within 20% of oracle"),
            (cos - oracle).abs() <= 0.2 * oracle,
            format!("cos_grad {cos:.3}, oracle {oracle:.3}, inv_loss {inv:.3}"),
        );
    }
    c.check(
        "inv_loss - cos_grad gap strictly decreasing in n",
        gaps.windows(2).all(|w| w[1] < w[0]),
        format!("gaps {gaps:.3?}"),
    );
    c.check(
        "runtime under 15 minutes",
        within_minutes(elapsed, 15),
        format!("{:.1}s", elapsed.as_secs_f64()),
    );
    c.finish();
}

struct DomainRun {
    results: Vec<ExperimentResult>,
    elapsed: Duration,
}

fn domain_run() -> &'static DomainRun {
    static RUN: OnceLock<DomainRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = resolve_config(
            &configs_dir().join("domain_shift_mlp.cfg"),
            &[data_override()],
            0,
        )
        .unwrap();
        let out = tempfile::tempdir().unwrap();
        let _turn = exclusive();
        let started = Instant::now();
        let (_, results) = run_resolved(&cfg, out.path())
            .unwrap_or_else(|e| panic!("{e} (fetch the corpora with scripts/fetch_data.py)"));
        DomainRun {
            results,
            elapsed: started.elapsed(),
        }
    })
}

#[test]
fn c3_domain_shift_mlp() {
    let mut c = Checks::new("3 domain shift");
    let run = domain_run();
    let results = &run.results;
    use AggregationRule::FedAvg;
    let oracle = mean_of(results, "oracle", FedAvg);
    let random = mean_of(results, "random", FedAvg);
    let local = mean_of(results, "local", FedAvg);
    c.check(
        "oracle >= random + 1.0",
        oracle >= random + 1.0,
        format!("oracle {oracle:.2}, random {random:.2}"),
    );
    let cw = mean_of(results, "cos_weight", FedAvg);
    c.check(
        "cos_weight/fedavg within 1.5 of oracle",
        (cw - oracle).abs() <= 1.5,
        format!("{cw:.2} vs {oracle:.2}"),
    );
    for metric in SIMILARITY {
        for rule in RULES {
            let v = mean_of(results, metric, rule);
            c.check(
                &format!("{metric}/{rule} >= local + 5"),
                v >= local + 5.0,
                format!("{v:.2} vs local {local:.2}"),
            );
        }
    }
    c.check(
        "runtime under 60 minutes",
        within_minutes(run.elapsed, 60),
        format!("{:.1}s", run.elapsed.as_secs_f64()),
    );
    c.finish();
}

#[test]
fn c4_cost_ledger() {
    let mut c = Checks::new("4 cost ledger");
    let results = &domain_run().results;
    let inv = lookup(results, "inv_loss", AggregationRule::FedAvg).cost;
    let cw = lookup(results, "cos_weight", AggregationRule::FedAvg).cost;
    c.check(
        "inv_loss forward passes >= 100x cos_weight param ops",
        cw.param_ops > 0 && inv.forward_passes >= 100 * cw.param_ops,
        format!("{} forward passes vs {} param ops", inv.forward_passes, cw.param_ops),
    );
    c.check(
        "cos_weight performs no forward passes for similarity",
        cw.forward_passes == 0,
        format!("{} forward passes", cw.forward_passes),
    );
    c.finish();
}

#[test]
fn c5_softmax_suite() {
    let mut c = Checks::new("5 softmax");
    let mut rng = stream(SEED, Stream::Sampling, &[5]);
    let (mut norm, mut uniform, mut symmetric, mut monotone) = (0, 0, 0, 0);
    const CASES: usize = 1000;
    for _ in 0..CASES {
        let k = rng.random_range(2..40);
        // logit spread stays below 20 so no probability rounds to 0 or 1
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau = rng.random_range(0.01..5.0);
        let p = softmax_probs(&scores, tau);
        if (p.iter().sum::<f64>() - 1.0).abs() < 1e-9 && p.iter().all(|&v| v > 0.0) {
            norm += 1;
        }
        if softmax_probs(&scores, 0.0).iter().all(|&v| (v - 1.0 / k as f64).abs() < 1e-12) {
            uniform += 1;
        }
        // reversing the scores reverses the probabilities
        let reversed: Vec<f64> = scores.iter().rev().copied().collect();
        let pr = softmax_probs(&reversed, tau);
        if p.iter().zip(pr.iter().rev()).all(|(a, b)| (a - b).abs() < 1e-12) {
            symmetric += 1;
        }
        let i = rng.random_range(0..k);
        let mut raised = scores.clone();
        raised[i] += rng.random_range(0.01..1.0);
        let p2 = softmax_probs(&raised, tau);
        let best = |v: &[f64]| {
            (0..v.len())
                .max_by(|&a, &b| v[a].total_cmp(&v[b]))
                .unwrap()
        };
        if p2[i] > p[i] && best(&p) == best(&scores) && best(&p2) == best(&raised) {
            monotone += 1;
        }
    }
    c.check("normalization", norm == CASES, format!("{norm}/{CASES}"));
    c.check("tau = 0 is uniform", uniform == CASES, format!("{uniform}/{CASES}"));
    c.check("permutation symmetry", symmetric == CASES, format!("{symmetric}/{CASES}"));
    c.check("argmax monotonicity", monotone == CASES, format!("{monotone}/{CASES}"));
    c.finish();
}

/// Worst per-coordinate relative error between the analytic gradient and
/// central differences. Coordinates whose gradient is tiny are compared on
/// an absolute scale of 1.
fn worst_gradient_error(model: &ModelKind, w: &[f64], batch: &Dataset) -> f64 {
    const H: f64 = 1e-5;
    let g = risk_gradient(model, w, batch).unwrap();
    let mut probe = w.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..w.len() {
        probe[k] = w[k] + H;
        let up = mean_risk(model, &probe, batch).unwrap();
        probe[k] = w[k] - H;
        let down = mean_risk(model, &probe, batch).unwrap();
        probe[k] = w[k];
        let fd = (up - down) / (2.0 * H);
        let a = g.as_slice()[k];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1.0));
    }
    worst
}

fn random_batch(rng: &mut SimRng, n: usize, dim: usize, classes: Option<usize>) -> Dataset {
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0));
    let y = (0..n)
        .map(|_| match classes {
            Some(c) => rng.random_range(0..c) as f64,
            None => rng.random_range(-3.0..3.0),
        })
        .collect();
    Dataset::new(x, y, 0).unwrap()
}

#[test]
fn c6_gradient_checks() {
    let mut c = Checks::new("6 gradients");
    let mut rng = stream(SEED, Stream::Init, &[6]);
    const DRAWS: usize = 100;
    let mut linear_worst: f64 = 0.0;
    let mut mlp_worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let dim = rng.random_range(1..8);
        let model = ModelKind::LinearRegressor { dim };
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let n = rng.random_range(1..12);
        let batch = random_batch(&mut rng, n, dim, None);
        linear_worst = linear_worst.max(worst_gradient_error(&model, &w, &batch));

        let (input, hidden, classes) = (rng.random_range(1..6), rng.random_range(1..7), rng.random_range(2..5));
        let model = ModelKind::MlpClassifier {
            input,
            hidden,
            classes,
        };
        let w = model.init_params(&mut rng).into_inner();
        let n = rng.random_range(1..8);
        let batch = random_batch(&mut rng, n, input, Some(classes));
        mlp_worst = mlp_worst.max(worst_gradient_error(&model, &w, &batch));
    }
    c.check(
        "linear regressor, 100 draws, rel tol 1e-4",
        linear_worst <= 1e-4,
        format!("worst {linear_worst:.2e}"),
    );
    c.check(
        "mlp classifier, 100 draws, rel tol 1e-4",
        mlp_worst <= 1e-4,
        format!("worst {mlp_worst:.2e}"),
    );
    c.finish();
}

/// Mean and standard error per coordinate.
fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let se = (0..d)
        .map(|k| {
            let var = samples.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

/// Draws `n` samples with features uniform on [-1, 1] and targets
/// `x . theta + noise`, where each row's theta is picked by `pick`.
fn linear_sample(rng: &mut SimRng, n: usize, thetas: &[Vec<f64>], pick: impl Fn(&mut SimRng) -> usize) -> Dataset {
    let d = thetas[0].len();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let theta = &thetas[pick(rng)];
        let mut t = rng.random_range(-0.5..0.5);
        for k in 0..d {
            x[[r, k]] = rng.random_range(-1.0..1.0);
            t += x[[r, k]] * theta[k];
        }
        y.push(t);
    }
    Dataset::new(x, y, 0).unwrap()
}

fn categorical(rng: &mut SimRng, weights: &[f64]) -> usize {
    let mut u = rng.random_range(0.0..1.0);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Least-squares fit of a 3-feature linear model via Cramer's rule.
fn least_squares3(data: &Dataset) -> Vec<f64> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for r in 0..data.len() {
        for i in 0..3 {
            b[i] += data.features[[r, i]] * data.targets[r];
            for j in 0..3 {
                a[i][j] += data.features[[r, i]] * data.features[[r, j]];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let full = det(&a);
    (0..3)
        .map(|col| {
            let mut m = a;
            for row in 0..3 {
                m[row][col] = b[row];
            }
            det(&m) / full
        })
        .collect()
}

#[test]
fn c7_fedsim_unbiased_fedavg_biased() {
    let mut c = Checks::new("7 aggregation bias");
    const TRIALS: usize = 10_000;
    const BATCH: usize = 20;
    const ETA: f64 = 0.1;
    let model = ModelKind::LinearRegressor { dim: 3 };
    let thetas = vec![vec![1.0, -2.0, 0.5], vec![-1.5, 0.5, 2.0], vec![0.0, 3.0, -1.0]];
    let s = [0.5, 0.3, 0.2];
    let w_t = vec![0.2, 0.1, -0.3];
    let step = |data: &Dataset| -> Vec<f64> {
        let g = risk_gradient(&model, &w_t, data).unwrap();
        w_t.iter().zip(g.as_slice()).map(|(w, g)| w - ETA * g).collect()
    };

    // one SGD step per client, merged with the mixture weights, against one
    // SGD step on a batch drawn from the mixture itself
    let mut rng = stream(SEED, Stream::Training, &[7]);
    let mut merged = Vec::with_capacity(TRIALS);
    let mut target = Vec::with_capacity(TRIALS);
    for _ in 0..TRIALS {
        let updates: Vec<Vec<f64>> = (0..3)
            .map(|i| step(&linear_sample(&mut rng, BATCH, &thetas, |_| i)))
            .collect();
        let refs: Vec<&[f64]> = updates.iter().map(|u| u.as_slice()).collect();
        merged.push(merge(&refs, &s).unwrap().into_inner());
        target.push(step(&linear_sample(&mut rng, BATCH, &thetas, |r| categorical(r, &s))));
    }
    let (m_mean, m_se) = mean_and_se(&merged);
    let (t_mean, t_se) = mean_and_se(&target);
    let worst_z = (0..3)
        .map(|k| (m_mean[k] - t_mean[k]).abs() / (m_se[k].powi(2) + t_se[k].powi(2)).sqrt())
        .fold(0.0, f64::max);
    c.check(
        "similarity-weighted merge matches mixture SGD step within 3 SE",
        worst_z <= 3.0,
        format!("worst |z| {worst_z:.2}"),
    );
    // closed form: E[grad] = 2 E[x x^T] (w - theta) with E[x x^T] = I / 3
    let analytic: Vec<f64> = (0..3)
        .map(|k| {
            let mix: f64 = (0..3).map(|i| s[i] * thetas[i][k]).sum();
            w_t[k] - ETA * (2.0 / 3.0) * (w_t[k] - mix)
        })
        .collect();
    let worst_closed = (0..3)
        .map(|k| (m_mean[k] - analytic[k]).abs() / m_se[k])
        .fold(0.0, f64::max);
    c.check(
        "similarity-weighted merge matches closed-form expected step within 3 SE",
        worst_closed <= 3.0,
        format!("worst |z| {worst_closed:.2}"),
    );

    // locally fitted models merged by data size, against client 0's optimum
    let sizes = [50, 50, 50];
    let weights = fedavg_weights(sizes[0], &sizes[1..]).unwrap();
    let mut avg = Vec::with_capacity(TRIALS);
    for _ in 0..TRIALS {
        let fits: Vec<Vec<f64>> = (0..3)
            .map(|i| least_squares3(&linear_sample(&mut rng, sizes[i], &thetas, |_| i)))
            .collect();
        let refs: Vec<&[f64]> = fits.iter().map(|f| f.as_slice()).collect();
        avg.push(merge(&refs, &weights).unwrap().into_inner());
    }
    let (a_mean, a_se) = mean_and_se(&avg);
    let worst_bias = (0..3)
        .map(|k| (a_mean[k] - thetas[0][k]).abs() / a_se[k])
        .fold(0.0, f64::max);
    c.check(
        "size-weighted merge is biased away from the client's optimum by > 5 SE",
        worst_bias > 5.0,
        format!("worst |z| {worst_bias:.1}"),
    );
    c.finish();
}

#[test]
fn c8_heatmap_purity() {
    let mut c = Checks::new("8 heatmap purity");
    let cfg = resolve_config(
        &configs_dir().join("synthetic_concept.cfg"),
        &overrides(&[
            r#"methods=["random","oracle"]"#,
            r#"rules=["fedavg"]"#,
            "rounds=20",
            "num_runs=1",
            "early_stopping_rounds=0",
        ]),
        0,
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let (_, results) = run_resolved(&cfg, out.path()).unwrap();
    let rc = cfg.run_config(Method::Oracle, AggregationRule::FedAvg).unwrap();
    let ids: Vec<usize> = init_clients(&rc, 0).unwrap().iter().map(|s| s.cluster_id).collect();
    let (k, m, t) = (ids.len(), cfg.num_neighbors, cfg.rounds);

    let oracle = &lookup(&results, "oracle", AggregationRule::FedAvg).runs[0];
    let purity = cluster_purity(&oracle.comm, &ids).unwrap();
    c.check("oracle purity is 1", purity == 1.0, format!("{purity}"));

    let random = &lookup(&results, "random", AggregationRule::FedAvg).runs[0];
    let purity = cluster_purity(&random.comm, &ids).unwrap();
    // every client-round draws m of the k-1 peers without replacement, of
    // which (cluster size - 1) share its cluster: hypergeometric counts
    let peers = (k - 1) as f64;
    let p = (k / 3 - 1) as f64 / peers;
    let var_one = m as f64 * p * (1.0 - p) * (peers - m as f64) / (peers - 1.0);
    let draws = (k * m * t) as f64;
    let sigma = (var_one * (k * t) as f64).sqrt() / draws;
    c.check(
        "random purity within 3 sigma of the combinatorial expectation",
        (purity - p).abs() <= 3.0 * sigma,
        format!("{purity:.4} vs {p:.4} (sigma {sigma:.4})"),
    );

    for (name, run) in [("oracle", oracle), ("random", random)] {
        let exact = (0..k)
            .filter(|&i| run.stopped_round[i].is_none())
            .all(|i| run.comm.row_sum(i) == (m * t) as u64);
        let never_stopped = run.stopped_round.iter().filter(|s| s.is_none()).count();
        c.check(
            &format!("{name} row sums equal m x T"),
            exact && never_stopped == k,
            format!("{never_stopped}/{k} clients ran all rounds, m x T = {}", m * t),
        );
    }
    c.finish();
}

#[test]
fn c9_determinism() {
    let mut c = Checks::new("9 determinism");
    let config = configs_dir().join("synthetic_concept.cfg");
    let sets = overrides(&["rounds=10", "num_runs=2"]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let da = cmd_run(&config, a.path(), &sets, 3).unwrap();
    let db = cmd_run(&config, b.path(), &sets, 3).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&da)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(da.join(n)).unwrap() != std::fs::read(db.join(n)).ok().unwrap_or_default())
        .collect();
    c.check(
        "two runs give byte-identical CSVs",
        !names.is_empty() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", names.len()),
    );
    c.finish();
}

#[test]
fn covariate_shift_smoke() {
    let mut c = Checks::new("covariate smoke");
    let cfg = resolve_config(
        &configs_dir().join("covariate_shift_mlp.cfg"),
        &[data_override()],
        0,
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let (_, results) = {
        let _turn = exclusive();
        run_resolved(&cfg, out.path()).unwrap()
    };
    let random = mean_of(&results, "random", AggregationRule::FedAvg);
    let oracle = mean_of(&results, "oracle", AggregationRule::FedAvg);
    c.check(
        "oracle >= random",
        oracle >= random,
        format!("oracle {oracle:.2} vs random {random:.2}"),
    );
    for r in &results {
        // ten balanced classes: anything that learned beats 10%
        c.check(
            &format!("{}/{} above chance", r.method, r.rule),
            r.overall.mean > 10.0,
            format!("{:.2}", r.overall.mean),
        );
        c.check(
            &format!("oracle >= {}/{}", r.method, r.rule),
            oracle >= r.overall.mean,
            format!("oracle {oracle:.2} vs {:.2}", r.overall.mean),
        );
    }
    c.finish();
}
