//! The class-incremental protocol.
//!
//! Session 1 optionally trains an adapter (FSA), which is then frozen. Every
//! session draws its shots, pushes the adapted embeddings into the running
//! moments and class sums, rebuilds the head, and scores it on the test
//! examples of every class seen so far.
//!
//! Between sessions the runner keeps only [`RunnerState`]: moments, class
//! sums and the adapter. Checkpointing that state and resuming reproduces an
//! uninterrupted run exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{first_session_adapt, AdapterKind, AdapterParams};
use crate::embeddings::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::heads::{build_lda, build_ncm, ClassStats, ClassifierHead, HeadKind};
use crate::linalg::{check_dim, Vector};
use crate::moments::{RunningMoments, DEFAULT_REGULARIZER};
use crate::schedule::SessionSchedule;
use crate::train::TrainConfig;

/// Body-adaptation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Frozen embeddings (identity adapter).
    Na,
    /// Full affine adapter trained on session 1.
    FsaFull,
    /// FiLM adapter trained on session 1.
    FsaFilm,
}

impl Method {
    pub fn adapter_kind(self) -> AdapterKind {
        match self {
            Method::Na => AdapterKind::Identity,
            Method::FsaFull => AdapterKind::Full,
            Method::FsaFilm => AdapterKind::Film,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Na => "na",
            Method::FsaFull => "fsa_full",
            Method::FsaFilm => "fsa_film",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "na" => Ok(Method::Na),
            "fsa_full" | "fsa" => Ok(Method::FsaFull),
            "fsa_film" => Ok(Method::FsaFilm),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Labeled embeddings grouped by class, in file order within each class.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    dim: usize,
    by_class: BTreeMap<u32, Vec<Vector>>,
    len: usize,
}

impl Dataset {
    pub fn from_records(records: impl IntoIterator<Item = EmbeddingRecord>) -> Result<Self> {
        let mut ds = Dataset::default();
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if self.len == 0 {
            self.dim = record.dim();
        }
        check_dim(self.dim, record.dim())?;
        self.by_class
            .entry(record.label)
            .or_default()
            .push(record.features);
        self.len += 1;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.by_class.keys().copied().collect()
    }

    pub fn examples(&self, class: u32) -> &[Vector] {
        self.by_class.get(&class).map_or(&[], Vec::as_slice)
    }

    /// All records of the given classes, class by class in ascending id order.
    pub fn records_of(&self, classes: &BTreeSet<u32>) -> Vec<EmbeddingRecord> {
        classes
            .iter()
            .flat_map(|&c| {
                self.examples(c).iter().map(move |f| EmbeddingRecord {
                    label: c,
                    features: f.clone(),
                })
            })
            .collect()
    }

    pub fn records(&self) -> Vec<EmbeddingRecord> {
        self.records_of(&self.by_class.keys().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub head: HeadKind,
    /// Optimizer settings for first-session adaptation.
    pub train: TrainConfig,
    /// Seeds shot sampling.
    pub seed: u64,
    pub allow_overlap: bool,
    /// Ridge `λ` in `S̃ = S + λI`.
    pub regularizer: f64,
}

impl RunConfig {
    /// Defaults for `method`: LDA head, the method's optimizer settings.
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            head: HeadKind::Lda,
            train: TrainConfig::for_adapter(method.adapter_kind()).with_seed(seed),
            seed,
            allow_overlap: false,
            regularizer: DEFAULT_REGULARIZER,
        }
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: usize,
    pub seen_classes: usize,
    /// Percent, full precision.
    pub top1: f64,
    pub cumulative_test_size: usize,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub sessions: Vec<SessionReport>,
    pub per_session_accuracy: Vec<f64>,
    pub ppdr: f64,
    pub wall_time: f64,
    pub final_head: ClassifierHead,
    pub adapter: AdapterParams,
    pub adapter_losses: Vec<f64>,
}

impl RunResult {
    pub fn final_accuracy(&self) -> f64 {
        *self
            .per_session_accuracy
            .last()
            .expect("at least one session")
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        self.method == other.method
            && self.seed == other.seed
            && self.sessions == other.sessions
            && self.per_session_accuracy == other.per_session_accuracy
            && self.ppdr.to_bits() == other.ppdr.to_bits()
            && self.final_head == other.final_head
            && self.adapter == other.adapter
            && self.adapter_losses == other.adapter_losses
    }
}

/// Percent performance dropping rate, `100 (A_1 - A_S) / A_1`.
pub fn ppdr(acc_first: f64, acc_last: f64) -> Result<f64> {
    if !(acc_first.is_finite() && acc_first > 0.0) {
        return Err(Error::ZeroFirstAccuracy);
    }
    Ok(100.0 * (acc_first - acc_last) / acc_first)
}

/// Everything that survives between sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct RunnerState {
    pub moments: RunningMoments,
    pub stats: ClassStats,
    pub adapter: Option<AdapterParams>,
}

const MOMENTS_FILE: &str = "moments.mom";
const STATS_FILE: &str = "classes.cls";
const ADAPTER_FILE: &str = "adapter.adp";

impl RunnerState {
    pub fn new(dim: usize) -> Self {
        Self {
            moments: RunningMoments::new(dim),
            stats: ClassStats::new(dim),
            adapter: None,
        }
    }

    /// Sessions already folded in, inferred from which classes the sums hold.
    fn sessions_done(&self, schedule: &SessionSchedule) -> usize {
        let seen: BTreeSet<u32> = self.stats.class_ids().into_iter().collect();
        schedule
            .sessions
            .iter()
            .take_while(|s| s.classes.iter().all(|c| seen.contains(c)))
            .count()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        };
        write(MOMENTS_FILE, &|w| self.moments.write_to(w))?;
        write(STATS_FILE, &|w| self.stats.write_to(w))?;
        match &self.adapter {
            Some(a) => write(ADAPTER_FILE, &|w| a.write_to(w))?,
            None => {
                let _ = std::fs::remove_file(dir.join(ADAPTER_FILE));
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| File::open(dir.join(name)).map(BufReader::new);
        let moments = RunningMoments::read_from(open(MOMENTS_FILE)?)?;
        let stats = ClassStats::read_from(open(STATS_FILE)?)?;
        let adapter = match open(ADAPTER_FILE) {
            Ok(r) => Some(AdapterParams::read_from(r)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        if moments.dim() != stats.dim() || moments.count() != stats.total() {
            return Err(Error::Corrupt(
                "moments and class sums disagree on dimension or count".into(),
            ));
        }
        Ok(Self {
            moments,
            stats,
            adapter,
        })
    }
}

/// Steps through a schedule one session at a time.
pub struct CilRunner<'a> {
    train: &'a Dataset,
    test: &'a Dataset,
    schedule: &'a SessionSchedule,
    cfg: &'a RunConfig,
    state: RunnerState,
    next: usize,
    adapter_losses: Vec<f64>,
    head: Option<ClassifierHead>,
}

impl<'a> CilRunner<'a> {
    pub fn new(
        train: &'a Dataset,
        test: &'a Dataset,
        schedule: &'a SessionSchedule,
        cfg: &'a RunConfig,
    ) -> Result<Self> {
        Self::resume(train, test, schedule, cfg, RunnerState::new(train.dim()))
    }

    /// Continues from a saved state; the next session is the first one whose
    /// classes are not all present in the state's class sums.
    pub fn resume(
        train: &'a Dataset,
        test: &'a Dataset,
        schedule: &'a SessionSchedule,
        cfg: &'a RunConfig,
        state: RunnerState,
    ) -> Result<Self> {
        schedule.validate(cfg.allow_overlap)?;
        if cfg.head == HeadKind::Linear {
            return Err(Error::InvalidConfig(
                "the incremental runner needs a closed-form head (ncm or lda)".into(),
            ));
        }
        cfg.train.validate()?;
        check_dim(train.dim(), test.dim())?;
        check_dim(train.dim(), state.moments.dim())?;
        for class in schedule.all_classes() {
            if train.examples(class).is_empty() {
                return Err(Error::ScheduleClassMissing {
                    class,
                    split: "train",
                });
            }
            if test.examples(class).is_empty() {
                return Err(Error::ScheduleClassMissing {
                    class,
                    split: "test",
                });
            }
        }
        let next = if cfg.allow_overlap {
            // Overlapping schedules cannot be located from class sums alone.
            if state.moments.count() != 0 {
                return Err(Error::InvalidConfig(
                    "resuming is only supported for disjoint schedules".into(),
                ));
            }
            0
        } else {
            state.sessions_done(schedule)
        };
        if next > 0 && state.adapter.is_none() {
            return Err(Error::Corrupt("state past session 1 has no adapter".into()));
        }
        Ok(Self {
            train,
            test,
            schedule,
            cfg,
            state,
            next,
            adapter_losses: Vec::new(),
            head: None,
        })
    }

    pub fn state(&self) -> &RunnerState {
        &self.state
    }

    pub fn into_state(self) -> RunnerState {
        self.state
    }

    pub fn next_session(&self) -> usize {
        self.next
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.schedule.len()
    }

    pub fn head(&self) -> Option<&ClassifierHead> {
        self.head.as_ref()
    }

    pub fn adapter_losses(&self) -> &[f64] {
        &self.adapter_losses
    }

    /// Draws the session's shots for each class without replacement.
    fn sample_session(&self, index: usize) -> Vec<EmbeddingRecord> {
        let session = &self.schedule.sessions[index];
        let mut out = Vec::new();
        for &class in &session.classes {
            let pool = self.train.examples(class);
            let take = session.shots.limit(pool.len());
            if let crate::schedule::Shots::Count(n) = session.shots {
                if (n as usize) > pool.len() {
                    log::warn!(
                        "class {class}: {n} shots requested, only {} available; using all",
                        pool.len()
                    );
                }
            }
            // Seeded per class (and per earlier appearance of the class), so
            // the draw does not depend on where the class sits in the schedule.
            let repeat = self.schedule.sessions[..index]
                .iter()
                .filter(|s| s.classes.contains(&class))
                .count() as u64;
            let picks: Vec<usize> = if take == pool.len() {
                (0..take).collect()
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(sampling_seed(self.cfg.seed, class, repeat));
                let mut idx = index::sample(&mut rng, pool.len(), take).into_vec();
                idx.sort_unstable();
                idx
            };
            out.extend(picks.into_iter().map(|i| EmbeddingRecord {
                label: class,
                features: pool[i].clone(),
            }));
        }
        out
    }

    /// Runs the next session and returns its evaluation.
    pub fn step(&mut self) -> Result<SessionReport> {
        let index = self.next;
        if index >= self.schedule.len() {
            return Err(Error::InvalidSchedule("all sessions already ran".into()));
        }
        let batch = self.sample_session(index);

        if index == 0 {
            let kind = self.cfg.method.adapter_kind();
            let adaptation = first_session_adapt(&batch, kind, &self.cfg.train)?;
            self.adapter_losses = adaptation.losses;
            self.state.adapter = Some(adaptation.params);
        }
        let adapter = self.state.adapter.as_ref().expect("set in session 1");

        let adapted = adapter.apply_records(&batch)?;
        let feats: Vec<&[f64]> = adapted.iter().map(|r| r.features.as_slice()).collect();
        self.state.moments.inc_update(&feats)?;
        self.state.stats.update(&adapted)?;

        let head = match self.cfg.head {
            HeadKind::Lda => {
                let cov = self.state.moments.finalize_with(self.cfg.regularizer)?;
                build_lda(&self.state.stats, &cov)?
            }
            _ => build_ncm(&self.state.stats)?,
        };

        let seen: BTreeSet<u32> = self.state.stats.class_ids().into_iter().collect();
        let test = adapter.apply_records(&self.test.records_of(&seen))?;
        let top1 = head.accuracy(&test)?;

        self.head = Some(head);
        self.next += 1;
        Ok(SessionReport {
            session: index + 1,
            seen_classes: seen.len(),
            top1,
            cumulative_test_size: test.len(),
            train_size: batch.len(),
        })
    }
}

fn sampling_seed(seed: u64, class: u32, repeat: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (u64::from(class) << 20)
        ^ repeat.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs the whole schedule.
pub fn run_cil(
    train: &Dataset,
    test: &Dataset,
    schedule: &SessionSchedule,
    cfg: &RunConfig,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut runner = CilRunner::new(train, test, schedule, cfg)?;
    let mut sessions = Vec::with_capacity(schedule.len());
    while !runner.is_done() {
        sessions.push(runner.step()?);
    }
    finish(runner, sessions, cfg, start)
}

/// Runs the schedule, saving the state after each session and resuming from
/// disk before the next, so nothing but the saved state crosses a session
/// boundary.
pub fn run_cil_checkpointed(
    train: &Dataset,
    test: &Dataset,
    schedule: &SessionSchedule,
    cfg: &RunConfig,
    dir: impl AsRef<Path>,
) -> Result<RunResult> {
    let start = Instant::now();
    let dir = dir.as_ref();
    let mut sessions = Vec::with_capacity(schedule.len());
    let mut adapter_losses = Vec::new();
    let mut state = RunnerState::new(train.dim());
    loop {
        let mut runner = CilRunner::resume(train, test, schedule, cfg, state)?;
        sessions.push(runner.step()?);
        if runner.next_session() == 1 {
            adapter_losses = runner.adapter_losses().to_vec();
        }
        if runner.is_done() {
            let mut result = finish(runner, sessions, cfg, start)?;
            result.adapter_losses = adapter_losses;
            return Ok(result);
        }
        runner.into_state().save(dir)?;
        state = RunnerState::load(dir)?;
    }
}

fn finish(
    runner: CilRunner<'_>,
    sessions: Vec<SessionReport>,
    cfg: &RunConfig,
    start: Instant,
) -> Result<RunResult> {
    let per_session_accuracy: Vec<f64> = sessions.iter().map(|s| s.top1).collect();
    let first = per_session_accuracy[0];
    let last = *per_session_accuracy.last().expect("non-empty schedule");
    let adapter_losses = runner.adapter_losses().to_vec();
    let final_head = runner.head().cloned().expect("at least one session ran");
    let adapter = runner
        .into_state()
        .adapter
        .expect("adapter set in session 1");
    Ok(RunResult {
        method: cfg.method,
        seed: cfg.seed,
        ppdr: ppdr(first, last)?,
        per_session_accuracy,
        sessions,
        wall_time: start.elapsed().as_secs_f64(),
        final_head,
        adapter,
        adapter_losses,
    })
}

/// Trains and evaluates with every class in a single session.
pub fn run_offline(
    train: &Dataset,
    test: &Dataset,
    shots: crate::schedule::Shots,
    cfg: &RunConfig,
) -> Result<RunResult> {
    let schedule = SessionSchedule::single(train.class_ids(), shots);
    run_cil(train, test, &schedule, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{permute_sessions, Session, SessionPermutation, Shots};
    use rand::Rng;

    /// Train/test pair drawn around the same class centers.
    fn blobs(seed: u64, classes: u32, per_class: (usize, usize), d: usize) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut draw = |n: usize| {
            let records: Vec<EmbeddingRecord> = (0..classes)
                .flat_map(|c| (0..n).map(move |_| c))
                .map(|c| {
                    let f = centers[c as usize]
                        .iter()
                        .map(|m| m + rng.random_range(-1.5..1.5))
                        .collect();
                    EmbeddingRecord::new(c, f).unwrap()
                })
                .collect();
            Dataset::from_records(records).unwrap()
        };
        let train = draw(per_class.0);
        (train, draw(per_class.1))
    }

    fn schedule(groups: &[&[u32]], shots: Shots) -> SessionSchedule {
        SessionSchedule::new(
            groups
                .iter()
                .map(|g| Session {
                    classes: g.to_vec(),
                    shots,
                })
                .collect(),
        )
    }

    #[test]
    fn ppdr_examples() {
        assert!((ppdr(80.2, 57.4).unwrap() - 28.4).abs() <= 0.05);
        assert!((ppdr(35.5, 41.0).unwrap() + 15.5).abs() <= 0.05);
        assert_eq!(ppdr(64.0, 64.0).unwrap(), 0.0);
        assert!(matches!(ppdr(0.0, 10.0), Err(Error::ZeroFirstAccuracy)));
    }

    #[test]
    fn method_names() {
        for m in [Method::Na, Method::FsaFull, Method::FsaFilm] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("lwf".parse::<Method>().is_err());
    }

    #[test]
    fn single_session_has_zero_ppdr() {
        let (train, test) = blobs(1, 5, (30, 20), 4);
        let s = SessionSchedule::single(train.class_ids(), Shots::All);
        let r = run_cil(&train, &test, &s, &RunConfig::new(Method::Na, 0)).unwrap();
        assert_eq!(r.per_session_accuracy.len(), 1);
        assert_eq!(r.ppdr, 0.0);
    }

    #[test]
    fn cumulative_test_set_grows_and_ppdr_recomputes() {
        let (train, test) = blobs(3, 6, (30, 10), 5);
        let s = schedule(&[&[0, 1], &[2, 3], &[4], &[5]], Shots::Count(10));
        let r = run_cil(&train, &test, &s, &RunConfig::new(Method::Na, 0)).unwrap();
        let sizes: Vec<usize> = r.sessions.iter().map(|x| x.cumulative_test_size).collect();
        assert_eq!(sizes, vec![20, 40, 50, 60]);
        assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.sessions[1].train_size, 20);
        assert_eq!(
            r.ppdr.to_bits(),
            ppdr(r.per_session_accuracy[0], r.final_accuracy())
                .unwrap()
                .to_bits()
        );
    }

    #[test]
    fn missing_class_is_reported() {
        let (train, test) = blobs(3, 4, (10, 10), 3);
        let test =
            Dataset::from_records(test.records().into_iter().filter(|r| r.label != 3)).unwrap();
        let s = schedule(&[&[0, 1], &[2, 3]], Shots::All);
        assert!(matches!(
            run_cil(&train, &test, &s, &RunConfig::new(Method::Na, 0)),
            Err(Error::ScheduleClassMissing {
                class: 3,
                split: "test"
            })
        ));
        let s = schedule(&[&[0, 1], &[7]], Shots::All);
        assert!(matches!(
            run_cil(&train, &test, &s, &RunConfig::new(Method::Na, 0)),
            Err(Error::ScheduleClassMissing {
                class: 7,
                split: "train"
            })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (train, test) = blobs(5, 6, (40, 10), 4);
        let s = schedule(&[&[0, 1, 2], &[3, 4], &[5]], Shots::Count(15));
        let mut cfg = RunConfig::new(Method::FsaFilm, 3);
        cfg.train.epochs = 20;
        let a = run_cil(&train, &test, &s, &cfg).unwrap();
        let b = run_cil(&train, &test, &s, &cfg).unwrap();
        assert!(a.same_outcome(&b));
    }

    #[test]
    fn streamed_head_equals_offline_head() {
        let (train, test) = blobs(7, 8, (25, 5), 6);
        let s = schedule(&[&[0, 1, 2], &[3, 4], &[5, 6, 7]], Shots::All);
        let cfg = RunConfig::new(Method::Na, 0);
        let streamed = run_cil(&train, &test, &s, &cfg).unwrap();
        let offline = run_offline(&train, &test, Shots::All, &cfg).unwrap();
        let (a, b) = (&streamed.final_head, &offline.final_head);
        assert_eq!(a.class_ids(), b.class_ids());
        for (x, y) in a
            .weights()
            .iter()
            .chain(a.biases())
            .zip(b.weights().iter().chain(b.biases()))
        {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn permutations_keep_final_head() {
        let (train, test) = blobs(9, 7, (30, 10), 5);
        let s = schedule(&[&[0, 1], &[2, 3], &[4], &[5, 6]], Shots::Count(12));
        let na = RunConfig::new(Method::Na, 1);
        let base = run_cil(&train, &test, &s, &na).unwrap();
        let full = permute_sessions(&s, &SessionPermutation::Full(vec![3, 1, 0, 2])).unwrap();
        let other = run_cil(&train, &test, &full, &na).unwrap();
        assert_eq!(base.final_accuracy(), other.final_accuracy());
        for (x, y) in base
            .final_head
            .weights()
            .iter()
            .zip(other.final_head.weights())
        {
            assert!((x - y).abs() <= 1e-10);
        }

        let mut film = RunConfig::new(Method::FsaFilm, 1);
        film.train.epochs = 15;
        let base = run_cil(&train, &test, &s, &film).unwrap();
        let keep = permute_sessions(&s, &SessionPermutation::KeepFirst(vec![2, 0, 1])).unwrap();
        let other = run_cil(&train, &test, &keep, &film).unwrap();
        assert_eq!(base.adapter, other.adapter);
        for (x, y) in base
            .final_head
            .weights()
            .iter()
            .zip(other.final_head.weights())
        {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn checkpointed_run_matches_uninterrupted() {
        let (train, test) = blobs(11, 6, (30, 10), 4);
        let s = schedule(&[&[0, 1], &[2, 3], &[4, 5]], Shots::Count(20));
        let mut cfg = RunConfig::new(Method::FsaFilm, 2);
        cfg.train.epochs = 10;
        let dir = tempfile::tempdir().unwrap();
        let a = run_cil(&train, &test, &s, &cfg).unwrap();
        let b = run_cil_checkpointed(&train, &test, &s, &cfg, dir.path()).unwrap();
        assert!(a.same_outcome(&b));
    }

    #[test]
    fn resume_rejects_inconsistent_state() {
        let (train, test) = blobs(11, 4, (10, 5), 3);
        let s = schedule(&[&[0, 1], &[2, 3]], Shots::All);
        let cfg = RunConfig::new(Method::Na, 0);
        let mut state = RunnerState::new(3);
        state.stats.insert(0, &[1.0, 1.0, 1.0]).unwrap();
        state.stats.insert(1, &[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            CilRunner::resume(&train, &test, &s, &cfg, state),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn overlap_requires_opt_in() {
        let (train, test) = blobs(13, 4, (20, 5), 3);
        let s = schedule(&[&[0, 1], &[1, 2, 3]], Shots::Count(5));
        let mut cfg = RunConfig::new(Method::Na, 0);
        assert!(matches!(
            run_cil(&train, &test, &s, &cfg),
            Err(Error::InvalidSchedule(_))
        ));
        cfg.allow_overlap = true;
        let r = run_cil(&train, &test, &s, &cfg).unwrap();
        // Class 1 contributes two disjoint-seeded draws of 5.
        assert_eq!(r.sessions[1].seen_classes, 4);
    }

    #[test]
    fn short_classes_take_everything() {
        let (train, test) = blobs(15, 3, (4, 4), 2);
        let s = schedule(&[&[0, 1, 2]], Shots::Count(50));
        let r = run_cil(&train, &test, &s, &RunConfig::new(Method::Na, 0)).unwrap();
        assert_eq!(r.sessions[0].train_size, 12);
    }

    #[test]
    fn ncm_head_option() {
        let (train, test) = blobs(17, 4, (20, 5), 3);
        let s = schedule(&[&[0, 1], &[2, 3]], Shots::All);
        let cfg = RunConfig::new(Method::Na, 0).with_head(HeadKind::Ncm);
        let r = run_cil(&train, &test, &s, &cfg).unwrap();
        assert_eq!(r.final_head.kind(), HeadKind::Ncm);
        let cfg = RunConfig::new(Method::Na, 0).with_head(HeadKind::Linear);
        assert!(run_cil(&train, &test, &s, &cfg).is_err());
    }
}
