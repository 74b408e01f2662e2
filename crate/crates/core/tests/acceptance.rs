//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dppfit::estimator::{cl2, normalizer_k2, score2, NormalizerForm, PairSet};
use dppfit::geometry::RectWindow;
use dppfit::harness::{self, simulate_one, ExperimentConfig, ReplicationSummary, ResolvedConfig};
use dppfit::inference::{sigma11, sigma12, sigma22, PlugInOptions};
use dppfit::kernel::{reduced_joint_intensity, KernelModel};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str, replications: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json_file(&config_path(name)).unwrap();
    cfg.replications = replications;
    cfg
}

struct Run {
    summary: ReplicationSummary,
    elapsed: Duration,
}

fn run(cfg: &ExperimentConfig) -> Run {
    let t = Instant::now();
    let summary = harness::replicate(&cfg.resolve().unwrap(), None).unwrap();
    Run {
        summary,
        elapsed: t.elapsed(),
    }
}

fn cached(cell: &'static OnceLock<Run>, cfg: impl FnOnce() -> ExperimentConfig) -> &'static Run {
    cell.get_or_init(|| run(&cfg()))
}

fn gaussian_n5() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    cached(&CELL, || load("gaussian_n5.json", 200))
}

fn laplace_n5() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    cached(&CELL, || load("laplace_n5.json", 200))
}

fn cauchy_half_n5() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    cached(&CELL, || load("cauchy_nu05_n5.json", 200))
}

fn cauchy_one_n5() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    cached(&CELL, || load("cauchy_nu1_n5.json", 200))
}

/// Gaussian on `[0, 10]^2` with sandwich standard errors.
fn gaussian_n10() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    cached(&CELL, || {
        let mut cfg = load("gaussian_n5.json", 200);
        cfg.n = 10.0;
        cfg.seed = 20240506;
        cfg.standard_errors = true;
        cfg
    })
}

fn area_variant(name: &str) -> ReplicationSummary {
    let mut cfg = load(name, 200);
    cfg.normalizer = NormalizerForm::Area;
    run(&cfg).summary
}

fn mean_alpha(s: &ReplicationSummary) -> f64 {
    s.alpha[0].unwrap().mean
}

fn sd_alpha(s: &ReplicationSummary) -> f64 {
    s.alpha[0].unwrap().sd.unwrap()
}

fn verdict(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn report_area(name: &str) {
    let s = area_variant(name);
    println!(
        "  supplementary {name} with the edge-free normalizer: mean alpha {:.5}, sd alpha {:.5}",
        mean_alpha(&s),
        sd_alpha(&s)
    );
}

#[test]
fn criterion_01_gaussian_replication() {
    let r = gaussian_n5();
    let s = &r.summary;
    let lam = s.lambda.unwrap();
    let (ml, sl) = (lam.mean, lam.sd.unwrap());
    let (ma, sa) = (mean_alpha(s), sd_alpha(s));
    let checks = [
        within(ml, 9.78, 10.08),
        within(ma, 0.085, 0.098),
        within(sl, 0.45, 0.70),
        within(sa, 0.012, 0.022),
        r.elapsed < Duration::from_secs(600),
    ];
    verdict(
        1,
        checks.iter().all(|&c| c),
        format!(
            "mean lambda {ml:.4}, mean alpha {ma:.5}, sd lambda {sl:.4}, sd alpha {sa:.5}, {}/{} fits, {:.1}s",
            s.successes,
            s.replications,
            r.elapsed.as_secs_f64()
        ),
    );
    report_area("gaussian_n5.json");
    assert!(checks.iter().all(|&c| c), "{checks:?}");
}

#[test]
fn criterion_02_laplace_replication() {
    let s = &laplace_n5().summary;
    let ma = mean_alpha(s);
    let pass = within(ma, 0.066, 0.086) && ma < 0.09;
    verdict(2, pass, format!("mean alpha {ma:.5}, sd alpha {:.5}", sd_alpha(s)));
    report_area("laplace_n5.json");
    assert!(pass);
}

#[test]
fn criterion_03_cauchy_replication() {
    let half = mean_alpha(&cauchy_half_n5().summary);
    let one = mean_alpha(&cauchy_one_n5().summary);
    let pass = within(half, 0.080, 0.096) || within(one, 0.080, 0.096);
    verdict(3, pass, format!("mean alpha {half:.5} (nu = 0.5), {one:.5} (nu = 1)"));
    report_area("cauchy_nu05_n5.json");
    report_area("cauchy_nu1_n5.json");
    assert!(pass);
}

#[test]
fn criterion_04_rate_in_window_side() {
    let ratio = sd_alpha(&gaussian_n10().summary) / sd_alpha(&gaussian_n5().summary);
    let pass = within(ratio, 0.4, 0.6);
    verdict(4, pass, format!("sd ratio n = 10 over n = 5: {ratio:.3}"));
    assert!(pass);
}

#[test]
fn criterion_05_intensity_variance() {
    let mut pass = true;
    let mut detail = Vec::new();
    for r in [gaussian_n5(), laplace_n5(), cauchy_half_n5(), cauchy_one_n5()] {
        let setup = &r.summary.setup;
        let theta = &setup.config.theta0;
        let predicted = (sigma11(&setup.config.model, theta).unwrap() * theta.lambda.powi(2) / setup.window.area()).sqrt();
        let empirical = r.summary.lambda.unwrap().sd.unwrap();
        pass &= rel_err(predicted, empirical) <= 0.15;
        detail.push(format!(
            "{} predicted {predicted:.4} empirical {empirical:.4}",
            setup.config.model.label()
        ));
    }
    verdict(5, pass, detail.join("; "));
    assert!(pass);
}

fn families() -> Vec<KernelModel> {
    vec![
        KernelModel::gaussian(),
        KernelModel::laplace(),
        KernelModel::cauchy(0.5).unwrap(),
        KernelModel::cauchy(1.0).unwrap(),
    ]
}

fn sample(model: KernelModel, n: f64, seed: u64) -> dppfit::patterns::PointPattern {
    let cfg = ExperimentConfig {
        model,
        n,
        seed,
        ..load("gaussian_n5.json", 1)
    };
    let resolved = cfg.resolve().unwrap();
    simulate_one(&resolved.approximation().unwrap(), seed, 0).unwrap()
}

#[test]
fn criterion_06_score_matches_finite_differences() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for m in families() {
        let p = sample(m, 5.0, 606);
        for _ in 0..20 {
            let a: f64 = rng.random_range(0.03..0.3);
            let h = 1e-5 * a;
            let fd = (cl2(&m, &[a + h], &p, 0.625).unwrap() - cl2(&m, &[a - h], &p, 0.625).unwrap()) / (2.0 * h);
            let s = score2(&m, &[a], &p, 0.625).unwrap()[0];
            worst = worst.max((s - fd).abs() / s.abs().max(1.0));
        }
    }
    let pass = worst <= 1e-6 && t.elapsed() < Duration::from_secs(10);
    verdict(6, pass, format!("worst relative gap {worst:.2e}, {:.2}s", t.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_07_normalizer_against_monte_carlo() {
    let window = RectWindow::square(5.0).unwrap();
    let (r, samples) = (0.625, 10_000_000u64);
    let area = window.area();
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, m) in families().into_iter().enumerate() {
        let c = m.correlation(&[0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(700 + i as u64);
        let mut acc = 0.0;
        for _ in 0..samples {
            let x: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
            let s = (x[0] - x[2]).hypot(x[1] - x[3]);
            if s <= r {
                acc += c.one_minus_sq(s);
            }
        }
        let mc = area * area * acc / samples as f64;
        let k = normalizer_k2(&m, &[0.1], &window, r).unwrap();
        let e = rel_err(k, mc);
        pass &= e <= 0.005;
        detail.push(format!("{} {k:.5} vs {mc:.5}", m.label()));
    }
    verdict(7, pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_08_plug_in_score_moments() {
    let cfg: ResolvedConfig = load("gaussian_n5.json", 500).resolve().unwrap();
    let approx = cfg.approximation().unwrap();
    let model = cfg.config.model;
    let theta = cfg.config.theta0.clone();
    let area = cfg.window.area();
    let (mut t, mut s) = (Vec::new(), Vec::new());
    for i in 0..500 {
        let p = simulate_one(&approx, 20240508, i).unwrap();
        let pairs = PairSet::new(&p, cfg.radius).unwrap();
        s.push(pairs.score(&model, &theta.alpha).unwrap()[0]);
        t.push(p.count() as f64 / theta.lambda - area);
    }
    let n = s.len() as f64;
    let ms = s.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let var_s = s.iter().map(|v| (v - ms).powi(2)).sum::<f64>() / (n - 1.0) / area;
    let cov_ts = s.iter().zip(&t).map(|(a, b)| (a - ms) * (b - mt)).sum::<f64>() / (n - 1.0) / area;
    let opts = PlugInOptions::default();
    let p22 = sigma22(&model, &theta, &cfg.window, cfg.radius, &opts).unwrap().value[(0, 0)];
    let p12 = sigma12(&model, &theta, &cfg.window, cfg.radius, &opts).unwrap().value[0];
    let (e22, e12) = (rel_err(var_s, p22), rel_err(cov_ts, p12));
    let pass = e22 <= 0.25 && e12 <= 0.25;
    verdict(
        8,
        pass,
        format!("sigma22 plug-in {p22:.3} empirical {var_s:.3}; sigma12 plug-in {p12:.5} empirical {cov_ts:.5}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_determinant_identities() {
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for m in families() {
        for a in [0.05, 0.1, 0.3] {
            let c = m.correlation(&[a]).unwrap();
            for s in [0.01, 0.05, 0.1, 0.2, 0.5] {
                let two = reduced_joint_intensity(&m, &[a], &[[0.0, 0.0], [s, 0.0]]).unwrap().value;
                let cs = c.value(s);
                exact &= two == c.one_minus_sq(s) && (two - (1.0 - cs * cs)).abs() <= 1e-15;
                let tri = [[0.0, 0.0], [s, 0.0], [0.5 * s, 0.5 * 3f64.sqrt() * s]];
                let three = reduced_joint_intensity(&m, &[a], &tri).unwrap().value;
                worst = worst.max((three - (1.0 - 3.0 * cs * cs + 2.0 * cs.powi(3))).abs());
            }
        }
    }
    let pass = exact && worst <= 1e-12;
    verdict(9, pass, format!("pairs exact: {exact}, worst triple gap {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_10_wald_coverage() {
    let s = &gaussian_n10().summary;
    let cov = s.coverage.as_ref().unwrap()[1];
    let with_se = s.records.iter().filter(|r| r.wald.is_some()).count();
    let pass = within(cov, 0.88, 0.99);
    verdict(10, pass, format!("alpha coverage {cov:.3} over {with_se} intervals"));
    assert!(pass);
}

#[test]
fn criterion_11_model_recovery() {
    let cfg = ExperimentConfig::from_json_file(&config_path("compare_gaussian.json")).unwrap();
    let s = harness::compare(&cfg.resolve().unwrap(), None).unwrap();
    let gauss = s.selections.iter().find(|x| x.model == "gaussian").unwrap();
    let pass = 2 * gauss.count > s.replications;
    let tally: Vec<String> = s.selections.iter().map(|x| format!("{} {}", x.model, x.count)).collect();
    verdict(11, pass, format!("{} of {} replicates: {}", gauss.count, s.replications, tally.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_12_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfg = load("gaussian_n5.json", 200).resolve().unwrap();
    let mut files = Vec::new();
    for d in &dirs {
        let s = harness::replicate(&cfg, None).unwrap();
        files.push(harness::write_summary(&s, d.path()).unwrap());
    }
    let identical = files[0].len() == files[1].len()
        && files[0]
            .iter()
            .zip(&files[1])
            .all(|(a, b)| std::fs::read(a).unwrap() == std::fs::read(b).unwrap());
    verdict(12, identical, format!("{} artifacts compared", files[0].len()));
    assert!(identical);
}
