//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cil_core::harness::run_cil_checkpointed;
use cil_core::synth::SynthSpec;
use cil_core::train::{relative_error, JointObjective};
use cil_core::{
    build_lda, build_ncm, generate_synthetic, ppdr, preset_schedule, run_cil, AdapterKind,
    ClassStats, CovarianceEstimate, Dataset, EmbeddingRecord, HeadKind, Method, Preset, RunConfig,
    RunningMoments, Session, SessionSchedule, Shots,
};

const BATCH_TOL: f64 = 1e-9;
const BATCH_BUDGET: Duration = Duration::from_secs(30);
const PPDR_TOL: f64 = 0.05;
const FD_EPS: f64 = 1e-4;
const FD_TOL: f64 = 1e-5;
const TREND1_MARGIN: f64 = 5.0;
const TREND1_BUDGET: Duration = Duration::from_secs(120);
const TREND2_MARGIN: f64 = 10.0;
const TREND2_BUDGET: Duration = Duration::from_secs(300);
const SEEDS: u64 = 5;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Independent batch oracle: two-pass covariance, Gaussian elimination.

struct OracleHead {
    classes: Vec<u32>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (top, bottom) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (i, row) in bottom.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[col + 1 + i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

fn oracle_lda(data: &[(u32, Vec<f64>)], ridge: f64) -> OracleHead {
    let d = data[0].1.len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for (_, x) in data {
        for j in 0..d {
            mean[j] += x[j] / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (_, x) in data {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
        row[i] += ridge;
    }
    let mut classes: Vec<u32> = data.iter().map(|(c, _)| *c).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &c in &classes {
        let members: Vec<&Vec<f64>> = data
            .iter()
            .filter(|(l, _)| *l == c)
            .map(|(_, x)| x)
            .collect();
        let nk = members.len() as f64;
        let mu: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|x| x[j]).sum::<f64>() / nk)
            .collect();
        let w = gauss_solve(cov.clone(), mu.clone());
        let quad: f64 = mu.iter().zip(&w).map(|(a, b)| a * b).sum();
        biases.push((nk / n).ln() - 0.5 * quad);
        weights.push(w);
    }
    OracleHead {
        classes,
        weights,
        biases,
    }
}

fn incremental_equals_batch() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for config in 0..20 {
        let d = [4, 16, 64][config % 3];
        let sessions = [1, 3, 7][(config / 3) % 3];
        let k = rng.random_range(sessions.max(2)..=sessions.max(2) + 8);
        let n = rng.random_range(10 * k..=10_000);
        let offset = rng.random_range(-5.0..5.0);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..d)
                    .map(|_| offset + 3.0 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let data: Vec<(u32, Vec<f64>)> = (0..n)
            .map(|i| {
                let c = (i % k) as u32;
                let x = centers[c as usize]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (c, x)
            })
            .collect();

        // Classes dealt to sessions in a shuffled order.
        let mut order: Vec<u32> = (0..k as u32).collect();
        order.shuffle(&mut rng);
        let mut moments = RunningMoments::new(d);
        let mut stats = ClassStats::new(d);
        for s in 0..sessions {
            let mine: Vec<u32> = order.iter().copied().skip(s).step_by(sessions).collect();
            let batch: Vec<EmbeddingRecord> = data
                .iter()
                .filter(|(c, _)| mine.contains(c))
                .map(|(c, x)| EmbeddingRecord::new(*c, x.clone()).unwrap())
                .collect();
            moments
                .inc_update(
                    &batch
                        .iter()
                        .map(|r| r.features.as_slice())
                        .collect::<Vec<_>>(),
                )
                .map_err(|e| e.to_string())?;
            stats.update(&batch).map_err(|e| e.to_string())?;
        }
        let head = build_lda(&stats, &moments.finalize().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let oracle = oracle_lda(&data, 1.0);

        ensure(head.class_ids() == oracle.classes.as_slice(), || {
            format!("config {config}: class ids differ")
        })?;
        for (kk, w) in oracle.weights.iter().enumerate() {
            for (a, b) in head.weight(kk).iter().zip(w) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((head.biases()[kk] - oracle.biases[kk]).abs());
        }
        ensure(worst <= BATCH_TOL, || {
            format!("config {config} (d={d}, N={n}, S={sessions}): max deviation {worst:.3e}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed <= BATCH_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "20 configs, max |Δ| {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn datasets(spec: &SynthSpec) -> (Dataset, Dataset) {
    let (train, test) = generate_synthetic(spec).unwrap();
    (
        Dataset::from_records(train).unwrap(),
        Dataset::from_records(test).unwrap(),
    )
}

fn pairs_schedule(classes: u32, per_session: u32, shots: Shots) -> SessionSchedule {
    SessionSchedule::new(
        (0..classes)
            .collect::<Vec<_>>()
            .chunks(per_session as usize)
            .map(|c| Session {
                classes: c.to_vec(),
                shots,
            })
            .collect(),
    )
}

fn session_order_invariance() -> Outcome {
    let (train, test) = datasets(&SynthSpec::anisotropic(10.0, 7));
    let schedule = pairs_schedule(10, 2, Shots::Count(50));
    let cfg = RunConfig::new(Method::Na, 11);
    let test_x: Vec<Vec<f64>> = test
        .records()
        .into_iter()
        .map(|r| r.features.into_inner())
        .collect();
    let predict = |s: &SessionSchedule| -> Vec<u32> {
        run_cil(&train, &test, s, &cfg)
            .unwrap()
            .final_head
            .predict_many(&test_x)
            .unwrap()
    };
    let base = predict(&schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for p in 0..10 {
        let mut sessions = schedule.sessions.clone();
        sessions.shuffle(&mut rng);
        let got = predict(&SessionSchedule::new(sessions));
        let diff = got.iter().zip(&base).filter(|(a, b)| a != b).count();
        ensure(diff == 0, || {
            format!("permutation {p}: {diff} predictions differ")
        })?;
    }
    Ok(format!(
        "10 permutations, {} identical predictions each",
        base.len()
    ))
}

fn lda_reduces_to_ncm() -> Outcome {
    let (train, _) = generate_synthetic(&SynthSpec::default()).unwrap();
    let mut stats = ClassStats::new(16);
    stats.update(&train).unwrap();
    let lda = build_lda(&stats, &CovarianceEstimate::isotropic(16)).unwrap();
    let ncm = build_ncm(&stats).unwrap();
    let bits = |h: &cil_core::ClassifierHead| -> Vec<u64> {
        h.weights()
            .iter()
            .chain(h.biases())
            .map(|v| v.to_bits())
            .collect()
    };
    ensure(bits(&lda) == bits(&ncm), || {
        "weights or biases differ in some bit".into()
    })?;
    ensure(lda.class_ids() == ncm.class_ids(), || {
        "class ids differ".into()
    })?;
    Ok(format!("{} classes bit-identical", ncm.num_classes()))
}

fn ppdr_reproduction() -> Outcome {
    let cases = [(80.2, 57.4, 28.4), (35.5, 41.0, -15.5)];
    let mut shown = Vec::new();
    for (a1, a_s, want) in cases {
        let got = ppdr(a1, a_s).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= PPDR_TOL, || {
            format!("ppdr({a1}, {a_s}) = {got:.3}, want {want}")
        })?;
        shown.push(format!("{got:.2}"));
    }
    Ok(shown.join(", "))
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for (kind, name) in [
        (AdapterKind::Identity, "linear"),
        (AdapterKind::Film, "film"),
        (AdapterKind::Full, "full"),
    ] {
        for instance in 0..10 {
            let d = rng.random_range(2..7);
            let k = rng.random_range(2..6);
            let n = rng.random_range(4..16);
            let obj = JointObjective::new(kind, d, k);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let ys: Vec<usize> = (0..n).map(|i| i % k).collect();
            let mut params = obj.init_params();
            for p in &mut params {
                *p += 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            let x_refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let (_, grad) = obj.loss_and_grad(&params, &x_refs, &ys);
            let numeric: Vec<f64> = (0..params.len())
                .map(|i| {
                    let mut p = params.clone();
                    p[i] = params[i] + FD_EPS;
                    let up = obj.loss(&p, &x_refs, &ys);
                    p[i] = params[i] - FD_EPS;
                    let down = obj.loss(&p, &x_refs, &ys);
                    (up - down) / (2.0 * FD_EPS)
                })
                .collect();
            let err = relative_error(&grad, &numeric);
            worst = worst.max(err);
            ensure(err <= FD_TOL, || {
                format!("{name} instance {instance}: relative error {err:.2e}")
            })?;
        }
    }
    Ok(format!("30 instances, max relative error {worst:.2e}"))
}

fn trend_lda_beats_ncm() -> Outcome {
    let start = Instant::now();
    let schedule = pairs_schedule(10, 2, Shots::All);
    let (mut lda, mut ncm) = (0.0, 0.0);
    for seed in 0..SEEDS {
        let (train, test) = datasets(&SynthSpec::anisotropic(10.0, seed));
        for (head, acc) in [(HeadKind::Lda, &mut lda), (HeadKind::Ncm, &mut ncm)] {
            let cfg = RunConfig::new(Method::Na, seed).with_head(head);
            *acc += run_cil(&train, &test, &schedule, &cfg)
                .unwrap()
                .final_accuracy()
                / SEEDS as f64;
        }
    }
    let elapsed = start.elapsed();
    ensure(lda >= ncm + TREND1_MARGIN, || {
        format!("lda {lda:.1} vs ncm {ncm:.1}")
    })?;
    ensure(elapsed <= TREND1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "lda {lda:.1}% vs ncm {ncm:.1}%, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn trend_film_beats_na() -> Outcome {
    let start = Instant::now();
    let (mut na, mut film) = (0.0, 0.0);
    for seed in 0..SEEDS {
        let spec = SynthSpec::rescaled(seed);
        let schedule = preset_schedule(Preset::FewShot, spec.classes).unwrap();
        let (train, test) = datasets(&spec);
        for (method, acc) in [(Method::Na, &mut na), (Method::FsaFilm, &mut film)] {
            let cfg = RunConfig::new(method, seed);
            *acc += run_cil(&train, &test, &schedule, &cfg)
                .unwrap()
                .final_accuracy()
                / SEEDS as f64;
        }
    }
    let elapsed = start.elapsed();
    ensure(film >= na + TREND2_MARGIN, || {
        format!("fsa_film {film:.1} vs na {na:.1}")
    })?;
    ensure(elapsed <= TREND2_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "fsa_film {film:.1}% vs na {na:.1}%, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn replay_free_resume() -> Outcome {
    let mut spec = SynthSpec::rescaled(4);
    spec.classes = 20;
    spec.train_per_class = 80;
    let (train, test) = datasets(&spec);
    let schedule = preset_schedule(Preset::FewShot, spec.classes).unwrap();
    let mut checked = Vec::new();
    for method in [Method::Na, Method::FsaFilm, Method::FsaFull] {
        let cfg = RunConfig::new(method, 5);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let straight = run_cil(&train, &test, &schedule, &cfg).unwrap();
        let resumed = run_cil_checkpointed(&train, &test, &schedule, &cfg, dir.path()).unwrap();
        ensure(straight.same_outcome(&resumed), || {
            format!("{method}: resumed run differs")
        })?;
        let mut files: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        files.sort();
        ensure(
            files == ["adapter.adp", "classes.cls", "moments.mom"],
            || format!("{method}: unexpected checkpoint contents {files:?}"),
        )?;
        checked.push(method.to_string());
    }
    Ok(format!(
        "{} over {} sessions",
        checked.join(", "),
        schedule.len()
    ))
}

fn few_shot_cifar100_preset() -> Outcome {
    let s = preset_schedule(Preset::FewShot, 100).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = s.sessions.iter().map(|x| x.classes.len()).collect();
    ensure(s.len() == 9, || format!("{} sessions", s.len()))?;
    ensure(
        sizes[0] == 20 && sizes[1..].iter().all(|&n| n == 10),
        || format!("sizes {sizes:?}"),
    )?;
    ensure(
        s.sessions.iter().all(|x| x.shots == Shots::Count(50)),
        || "shots differ from 50".into(),
    )?;
    let (total, shape) = Preset::FewShot
        .dataset_shape("CIFAR100")
        .ok_or("no cifar100 shape")?;
    let named = shape
        .build(&(0..total as u32).collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    ensure(named == s, || {
        "dataset table disagrees with the ratio rule".into()
    })?;
    Ok(format!("S=9, sizes {sizes:?}, 50 shots"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("incremental-equals-batch", incremental_equals_batch),
        ("session-order-invariance", session_order_invariance),
        ("lda-reduces-to-ncm", lda_reduces_to_ncm),
        ("ppdr-reproduction", ppdr_reproduction),
        ("gradient-correctness", gradient_correctness),
        ("trend-lda-beats-ncm", trend_lda_beats_ncm),
        ("trend-film-beats-na-few-shot", trend_film_beats_na),
        ("replay-free-resume", replay_free_resume),
        ("few-shot-cifar100-preset", few_shot_cifar100_preset),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
