//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Tolerances are fixed below.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use latfill::corpus::{generate_corpus, CorpusConfig};
use latfill::eval::{compare_runs, coverage_stats};
use latfill::latent_fill::sample_lambda;
use latfill::losses::{lfcl, reconstruction_acoustic, reconstruction_duration, scl};
use latfill::train::{train, LanguageBalancedSampler, Mode, TrainConfig};
use latfill::verify::{verify_all, COMPOSITE_TOL, PRIMITIVE_TOL};
use latfill::{latent_fill, Branch, Embedding, EmbeddingRecord, Graph, LatentFillConfig, Rng, SpeakerEncoder, Tensor};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn unit(d: usize, rng: &mut Rng) -> Embedding {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.into_iter().map(|x| x / n).collect()).unwrap()
}

fn branch_statistics() -> Verdict {
    const NOISE_ONLY: (f64, f64) = (0.495, 0.505);
    const PLUS_NOISE: (f64, f64) = (0.489, 0.511);
    const BUDGET: Duration = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = Rng::seed(1);
    let si = unit(16, &mut rng);
    let sj = unit(16, &mut rng);
    let cfg = LatentFillConfig::default();
    let mut counts = [0usize; 3];
    for _ in 0..100_000 {
        counts[latent_fill(&si, &sj, &cfg, &mut rng).unwrap().1.branch.index()] += 1;
    }
    let elapsed = start.elapsed();
    let noise_only = counts[Branch::NoiseOnly.index()] as f64 / 1e5;
    let interp = counts[0] + counts[1];
    let plus = counts[Branch::InterpolatePlusNoise.index()] as f64 / interp as f64;
    check(
        within(noise_only, NOISE_ONLY.0, NOISE_ONLY.1) && within(plus, PLUS_NOISE.0, PLUS_NOISE.1) && elapsed < BUDGET,
        format!("noise_only {noise_only:.4}, plus_noise|interp {plus:.4}, {elapsed:.2?}"),
    )
}

fn beta_sampler() -> Verdict {
    const MEAN: (f64, f64) = (0.495, 0.505);
    const VAR: (f64, f64) = (0.120, 0.130);
    const BUDGET: Duration = Duration::from_secs(5);
    let start = Instant::now();
    let mut rng = Rng::seed(2);
    let xs: Vec<f64> = (0..100_000).map(|_| sample_lambda(0.5, &mut rng).unwrap()).collect();
    let elapsed = start.elapsed();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    check(
        within(m, MEAN.0, MEAN.1) && within(v, VAR.0, VAR.1) && elapsed < BUDGET,
        format!("mean {m:.4}, variance {v:.4}, {elapsed:.2?}"),
    )
}

fn gradient_verification() -> Verdict {
    const TRIALS: usize = 100;
    const BUDGET: Duration = Duration::from_secs(30);
    assert_eq!((PRIMITIVE_TOL, COMPOSITE_TOL), (1e-5, 1e-4));
    let start = Instant::now();
    let report = verify_all(TRIALS, 3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report
        .rows
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.tol).total_cmp(&(b.max_rel_error / b.tol)))
        .unwrap();
    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    check(
        failed.is_empty() && report.rows.iter().all(|r| r.trials == TRIALS) && elapsed < BUDGET,
        format!(
            "{} checks, worst {} at {:.2e} (tol {:.0e}), failed {:?}, {elapsed:.2?}",
            report.rows.len(),
            worst.name,
            worst.max_rel_error,
            worst.tol,
            failed
        ),
    )
}

fn loss_identities() -> Verdict {
    const SCL_TOL: f64 = 1e-9;
    let phi = SpeakerEncoder::new(12, 16, 1);
    let mut rng = Rng::seed(4);
    let mut g = Graph::new();
    let nodes = phi.attach(&mut g);
    let (mut ss, mut xs) = (Vec::new(), Vec::new());
    for t in [3, 8, 5, 1] {
        let x = Tensor::matrix(t, 12, (0..t * 12).map(|_| rng.normal()).collect()).unwrap();
        ss.push(g.leaf(Tensor::vector(phi.embed(&x).unwrap().into_vec()).unwrap()));
        xs.push(g.leaf(x));
    }
    let s_loss = scl(&mut g, &ss, &xs, &nodes).unwrap();
    let l_loss = lfcl(&mut g, &ss, &xs, &nodes).unwrap();
    let scl_err = (g.value(s_loss).item() + 1.0).abs();
    let bit_equal = g.value(s_loss).item().to_bits() == g.value(l_loss).item().to_bits();
    let ra = reconstruction_acoustic(&mut g, xs[1], xs[1]).unwrap();
    let d = g.leaf(Tensor::vector(vec![1.0, 3.0, 2.0]).unwrap());
    let rd = reconstruction_duration(&mut g, d, d).unwrap();
    let zero = g.value(ra).item() == 0.0 && g.value(rd).item() == 0.0;
    check(
        scl_err < SCL_TOL && bit_equal && zero,
        format!("|scl + 1| {scl_err:.1e}, lfcl bit-equal {bit_equal}, recon zero {zero}"),
    )
}

fn training_invariants() -> Verdict {
    const ITERATIONS: usize = 10_000;
    const LF_FREQ: (f64, f64) = (0.237, 0.263);
    let corpus = generate_corpus(&CorpusConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        tau: 0.25,
        steps: ITERATIONS,
        seed: 5,
        ..Default::default()
    };
    let out = train(&cfg, &corpus).map_err(|e| e.to_string())?;
    let log = &out.log;
    let freq = log.lf_fraction();
    let lf: Vec<_> = log.records.iter().filter(|r| r.mode == Mode::Lf).collect();
    let pairs: usize = lf.iter().map(|r| r.pairs.len()).sum();
    let matched = lf
        .iter()
        .flat_map(|r| &r.pairs)
        .filter(|p| p.language_id == p.partner_language_id)
        .count();
    let no_recon = lf
        .iter()
        .all(|r| r.recon_nodes == 0 && r.losses.l_rec_acoustic.is_none() && r.losses.l_rec_duration.is_none());
    let phi_same =
        log.phi_checksum_start == log.phi_checksum_end && out.model.phi.checksum() == corpus.encoder().checksum();
    check(
        log.records.len() == ITERATIONS && within(freq, LF_FREQ.0, LF_FREQ.1) && pairs > 0 && matched == pairs && no_recon && phi_same,
        format!("lf frequency {freq:.4}, matched pairs {matched}/{pairs}, no recon in lf {no_recon}, phi unchanged {phi_same}"),
    )
}

fn language_sampling() -> Verdict {
    const TOL: f64 = 0.005;
    let mut ids = vec![0u32; 16];
    ids.push(1);
    let sampler = LanguageBalancedSampler::new(&ids, 2, 0.25).map_err(|e| e.to_string())?;
    let mut rng = Rng::seed(6);
    let n = 100_000;
    let first = (0..n).filter(|_| ids[sampler.sample(&mut rng)] == 0).count() as f64 / n as f64;
    let second = 1.0 - first;
    check(
        (first - 2.0 / 3.0).abs() <= TOL && (second - 1.0 / 3.0).abs() <= TOL,
        format!("frequencies ({first:.4}, {second:.4})"),
    )
}

fn directional_comparison() -> Verdict {
    const SEEDS: usize = 5;
    const STEPS: usize = 3000;
    const MIN_WINS: usize = 4;
    const BUDGET: Duration = Duration::from_secs(15 * 60);
    let start = Instant::now();
    let corpus = generate_corpus(&CorpusConfig::default()).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        tau: 0.0,
        steps: STEPS,
        ..Default::default()
    };
    let lf = TrainConfig {
        tau: 0.25,
        steps: STEPS,
        ..Default::default()
    };
    let report = compare_runs(&base, &lf, &corpus, SEEDS, 1000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pairs: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.4}/{:.4}", r.secs_base, r.secs_lf))
        .collect();
    check(
        report.lf_wins() >= MIN_WINS && elapsed < BUDGET,
        format!(
            "lf wins {}/{SEEDS} (base/lf: {}), means {:.4}/{:.4}, {elapsed:.1?}",
            report.lf_wins(),
            pairs.join(" "),
            report.mean_base(),
            report.mean_lf()
        ),
    )
}

fn coverage_property() -> Verdict {
    const D: usize = 192;
    const DRAWS: usize = 10_000;
    let mut rng = Rng::seed(8);
    let originals: Vec<EmbeddingRecord> = (0..64)
        .map(|i| EmbeddingRecord::new(i, i % 2, unit(D, &mut rng)))
        .collect();
    let report =
        coverage_stats(&originals, &LatentFillConfig::default(), DRAWS, &mut rng).map_err(|e| e.to_string())?;
    let interp = report.interpolation_displacement().unwrap_or(0.0);
    let noise = report.displacement(Branch::NoiseOnly).unwrap_or(f64::INFINITY);
    check(
        interp > noise,
        format!("interpolation {interp:.4e} vs noise_only {noise:.4e}"),
    )
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_latfill"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(o.stdout)
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let w = |name: &str, text: &str| fs::write(d.join(name), text).map_err(|e| e.to_string());
    w(
        "corpus.cfg",
        "speakers_per_language = 4, 3\nholdout_speakers_per_language = 2\nutterances_per_speaker = 3\n",
    )?;
    w("base.cfg", "steps = 30\nbatch_size = 4\ntau = 0\n")?;
    w("lf.cfg", "steps = 30\nbatch_size = 4\ntau = 0.5\n")?;
    w("stats.cfg", "draws = 300\nseed = 3\n")?;

    let mut checked = Vec::new();
    for run in ["a", "b"] {
        let f = |name: &str| d.join(format!("{name}_{run}"));
        run_cli(&[
            "gen-data",
            "--config",
            s(&d.join("corpus.cfg")),
            "--out",
            s(&f("corpus")),
            "--seed",
            "4",
        ])?;
        run_cli(&[
            "train",
            "--config",
            s(&d.join("lf.cfg")),
            "--corpus",
            s(&f("corpus")),
            "--out-model",
            s(&f("model")),
            "--out-log",
            s(&f("log")),
            "--seed",
            "6",
        ])?;
        let eval = run_cli(&[
            "eval",
            "--model",
            s(&f("model")),
            "--corpus",
            s(&f("corpus")),
            "--eval-seed",
            "99",
        ])?;
        fs::write(f("eval"), eval).map_err(|e| e.to_string())?;
        run_cli(&[
            "compare",
            "--config-base",
            s(&d.join("base.cfg")),
            "--config-lf",
            s(&d.join("lf.cfg")),
            "--corpus",
            s(&f("corpus")),
            "--seeds",
            "2",
            "--out-table",
            s(&f("compare")),
        ])?;
        let records: String = (0..6)
            .map(|i| format!("{i}\t{}\t{},{},{}\n", i % 2, i as f64 * 0.5, 1.0 - i as f64, 0.25))
            .collect();
        fs::write(f("records"), records).map_err(|e| e.to_string())?;
        run_cli(&[
            "augment",
            "--in",
            s(&f("records")),
            "--out",
            s(&f("augment")),
            "--n",
            "50",
            "--seed",
            "12",
        ])?;
        let stats = run_cli(&["stats", "--in", s(&f("records")), "--config", s(&d.join("stats.cfg"))])?;
        fs::write(f("stats"), stats).map_err(|e| e.to_string())?;
        let grad = run_cli(&["gradcheck", "--trials", "2", "--seed", "5"])?;
        fs::write(f("gradcheck"), grad).map_err(|e| e.to_string())?;
    }
    for name in [
        "corpus",
        "model",
        "log",
        "eval",
        "compare",
        "augment",
        "augment.audit",
        "stats",
        "gradcheck",
    ] {
        let (a, b) = if name == "augment.audit" {
            (d.join("augment_a.audit"), d.join("augment_b.audit"))
        } else {
            (d.join(format!("{name}_a")), d.join(format!("{name}_b")))
        };
        let (a, b) = (
            fs::read(&a).map_err(|e| e.to_string())?,
            fs::read(&b).map_err(|e| e.to_string())?,
        );
        if a != b {
            return Err(format!("{name} differs between identical invocations"));
        }
        checked.push(name);
    }
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("branch statistics", branch_statistics),
        ("beta sampler moments", beta_sampler),
        ("gradient verification", gradient_verification),
        ("loss identities", loss_identities),
        ("training invariants", training_invariants),
        ("language-balanced sampling", language_sampling),
        ("baseline vs latent filling", directional_comparison),
        ("coverage displacement", coverage_property),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {tag} {name}: {detail}", i + 1);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
