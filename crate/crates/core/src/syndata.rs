//! Synthetic patient cohorts with planted class motifs and an outcome-window
//! labeler.
//!
//! Every patient receives the index diagnosis `DX000` at day `T0`. A motif
//! (a short chain of visit code sets) of the patient's planted class is
//! inserted between `T0` and `T_plan = T0 + 365 * plan_years`. Failure-motif
//! patients then develop a complication (`CX###`) inside the outcome window
//! `(T_plan, T_outcome]` with probability `motif_strength`; success-motif
//! patients do so with probability `1 - motif_strength`. Labels come from the
//! window check, applied after noise injection.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Edge, PatientGraph, Vocabulary};

pub const DAYS_PER_YEAR: u32 = 365;
pub const INDEX_CODE: &str = "DX000";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::F => "SEX:F",
            Gender::M => "SEX:M",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub day: u32,
    /// Code ids into the cohort vocabulary.
    pub codes: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub patient_id: String,
    /// Sorted by day; several visits may share a day.
    pub events: Vec<Visit>,
    pub gender: Gender,
    /// Age in years at the first event.
    pub age: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    /// 1 for success, 0 for failure.
    pub class: u8,
    pub visits: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per visit: split the codes of the visit into two same-day visits.
    pub split: f64,
    /// Per code: drop it. Index and complication codes are never dropped.
    pub drop: f64,
    /// Per visit: repeat the visit on the same day.
    pub duplicate: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        split: 0.0,
        drop: 0.0,
        duplicate: 0.0,
    };
    pub const MODERATE: NoiseConfig = NoiseConfig {
        split: 0.1,
        drop: 0.1,
        duplicate: 0.1,
    };
    pub const HIGH: NoiseConfig = NoiseConfig {
        split: 0.3,
        drop: 0.35,
        duplicate: 0.3,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub n_diagnosis: usize,
    pub n_drug: usize,
    pub n_complication: usize,
    pub plan_years: u32,
    pub outcome_years: u32,
    /// Target fraction of success labels.
    pub success_rate: f64,
    pub motif_strength: f64,
    pub motifs: Vec<Motif>,
    /// Background visits between `T0` and `T_plan`, inclusive range.
    pub visits: (usize, usize),
    /// Codes per background visit, inclusive range.
    pub codes_per_visit: (usize, usize),
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            n_diagnosis: 60,
            n_drug: 40,
            n_complication: 5,
            plan_years: 1,
            outcome_years: 1,
            success_rate: 0.75,
            motif_strength: 1.0,
            motifs: default_motifs(),
            visits: (3, 8),
            codes_per_visit: (1, 3),
            noise: NoiseConfig::MODERATE,
            seed: 0,
        }
    }
}

/// Three motifs per class over disjoint reserved codes: failure motifs use
/// `DX001..=DX009` and `RX001..=RX006`, success motifs `DX010..=DX018` and
/// `RX007..=RX012`.
pub fn default_motifs() -> Vec<Motif> {
    let mut out = Vec::new();
    for (class, dx0, rx0) in [(0u8, 1usize, 1usize), (1, 10, 7)] {
        for m in 0..3 {
            let dx = |k: usize| format!("DX{:03}", dx0 + 3 * m + k);
            let rx = |k: usize| format!("RX{:03}", rx0 + 2 * m + k);
            out.push(Motif {
                class,
                visits: vec![vec![dx(0), rx(0)], vec![dx(1)], vec![dx(2), rx(1)]],
            });
        }
    }
    out
}

impl CohortConfig {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let mut codes = vec!["SEX:F".to_string(), "SEX:M".to_string()];
        codes.extend((0..self.n_diagnosis).map(|i| format!("DX{i:03}")));
        codes.extend((0..self.n_drug).map(|i| format!("RX{i:03}")));
        codes.extend((0..self.n_complication).map(|i| format!("CX{i:03}")));
        Vocabulary::new(codes)
    }

    fn rate_ok(r: f64) -> bool {
        (0.0..=1.0).contains(&r)
    }

    /// Planted failure-motif fraction that makes the expected success rate
    /// equal `success_rate`.
    pub fn failure_motif_fraction(&self) -> Result<f64> {
        let s = self.motif_strength;
        let target_failure = 1.0 - self.success_rate;
        let p = (target_failure - (1.0 - s)) / (2.0 * s - 1.0);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "success rate {} is unreachable with motif strength {s}",
                self.success_rate
            )));
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("cohort needs at least one patient".into()));
        }
        if self.n_diagnosis == 0 || self.n_complication == 0 {
            return Err(Error::Config("need at least the index diagnosis and one complication code".into()));
        }
        if self.plan_years == 0 || self.outcome_years == 0 {
            return Err(Error::Config("plan and outcome windows must be positive".into()));
        }
        let rates = [
            self.success_rate,
            self.motif_strength,
            self.noise.split,
            self.noise.drop,
            self.noise.duplicate,
        ];
        if !rates.iter().all(|&r| Self::rate_ok(r)) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        if self.motif_strength <= 0.5 {
            return Err(Error::Config("motif strength must exceed 0.5".into()));
        }
        self.failure_motif_fraction()?;
        if self.visits.0 > self.visits.1 || self.codes_per_visit.0 == 0 || self.codes_per_visit.0 > self.codes_per_visit.1 {
            return Err(Error::Config("invalid visit or code ranges".into()));
        }
        let vocab = self.vocabulary()?;
        for class in [0u8, 1] {
            if !self.motifs.iter().any(|m| m.class == class) {
                return Err(Error::Config(format!("no motif defined for class {class}")));
            }
        }
        for m in &self.motifs {
            if m.class > 1 || m.visits.is_empty() || m.visits.iter().any(Vec::is_empty) {
                return Err(Error::Config("motifs need class 0/1 and non-empty visits".into()));
            }
            for code in m.visits.iter().flatten() {
                if vocab.id(code).is_none() {
                    return Err(Error::UnknownCode { code: code.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Generated streams along with the vocabulary their code ids refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub vocab: Vocabulary,
    pub streams: Vec<EventStream>,
    /// Class of the motif planted in each stream.
    pub planted: Vec<u8>,
}

struct Pools {
    index: usize,
    background: Vec<usize>,
    complications: Vec<usize>,
}

fn sample_codes<R: Rng>(pool: &[usize], range: (usize, usize), rng: &mut R) -> BTreeSet<usize> {
    let n = rng.gen_range(range.0..=range.1).min(pool.len());
    pool.choose_multiple(rng, n).copied().collect()
}

pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort> {
    cfg.validate()?;
    let vocab = cfg.vocabulary()?;
    let reserved: BTreeSet<usize> = cfg
        .motifs
        .iter()
        .flat_map(|m| m.visits.iter().flatten())
        .map(|c| vocab.id(c).expect("validated"))
        .collect();
    let index = vocab.id(INDEX_CODE).expect("index code");
    let pools = Pools {
        index,
        background: (0..vocab.len())
            .filter(|&i| {
                let c = vocab.code(i);
                (c.starts_with("DX") || c.starts_with("RX")) && i != index && !reserved.contains(&i)
            })
            .collect(),
        complications: (0..vocab.len()).filter(|&i| vocab.code(i).starts_with("CX")).collect(),
    };
    if pools.background.is_empty() {
        return Err(Error::Config("no background codes left after reserving motif codes".into()));
    }
    let motif_ids: Vec<(u8, Vec<BTreeSet<usize>>)> = cfg
        .motifs
        .iter()
        .map(|m| {
            let visits = m
                .visits
                .iter()
                .map(|v| v.iter().map(|c| vocab.id(c).expect("validated")).collect())
                .collect();
            (m.class, visits)
        })
        .collect();

    let p_failure = cfg.failure_motif_fraction()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut streams = Vec::with_capacity(cfg.n_patients);
    let mut planted = Vec::with_capacity(cfg.n_patients);
    for p in 0..cfg.n_patients {
        let class = u8::from(!rng.gen_bool(p_failure));
        let candidates: Vec<&Vec<BTreeSet<usize>>> =
            motif_ids.iter().filter(|m| m.0 == class).map(|m| &m.1).collect();
        let motif = candidates[rng.gen_range(0..candidates.len())];
        let stream = generate_stream(format!("P{p:05}"), class, motif, &pools, cfg, &mut rng);
        streams.push(stream);
        planted.push(class);
    }
    Ok(Cohort { vocab, streams, planted })
}

fn generate_stream<R: Rng>(
    id: String,
    class: u8,
    motif: &[BTreeSet<usize>],
    pools: &Pools,
    cfg: &CohortConfig,
    rng: &mut R,
) -> EventStream {
    let plan = cfg.plan_years * DAYS_PER_YEAR;
    let outcome = cfg.outcome_years * DAYS_PER_YEAR;
    let t0 = rng.gen_range(0..=180u32);
    let mut events = Vec::new();

    // History before the index diagnosis.
    for _ in 0..rng.gen_range(0..=2) {
        events.push(Visit {
            day: rng.gen_range(0..=t0),
            codes: sample_codes(&pools.background, cfg.codes_per_visit, rng),
        });
    }
    let mut index_visit = sample_codes(&pools.background, (0, 1), rng);
    index_visit.insert(pools.index);
    events.push(Visit {
        day: t0,
        codes: index_visit,
    });

    for _ in 0..rng.gen_range(cfg.visits.0..=cfg.visits.1) {
        events.push(Visit {
            day: t0 + rng.gen_range(0..=plan),
            codes: sample_codes(&pools.background, cfg.codes_per_visit, rng),
        });
    }
    // Motif visits in order, strictly after T0 and no later than T_plan.
    let mut days: Vec<u32> = (0..motif.len()).map(|_| t0 + rng.gen_range(1..=plan)).collect();
    days.sort_unstable();
    for (day, codes) in days.into_iter().zip(motif) {
        events.push(Visit {
            day,
            codes: codes.clone(),
        });
    }
    // Complications before T_plan are irrelevant to the label.
    if rng.gen_bool(0.1) {
        events.push(Visit {
            day: t0 + rng.gen_range(0..=plan),
            codes: [*pools.complications.choose(rng).unwrap()].into(),
        });
    }

    let complication_p = if class == 0 {
        cfg.motif_strength
    } else {
        1.0 - cfg.motif_strength
    };
    let t_plan = t0 + plan;
    if rng.gen_bool(complication_p) {
        let mut codes = sample_codes(&pools.background, (0, 1), rng);
        codes.insert(*pools.complications.choose(rng).unwrap());
        events.push(Visit {
            day: t_plan + rng.gen_range(1..=outcome),
            codes,
        });
    } else if rng.gen_bool(0.2) {
        // A late complication outside the window.
        events.push(Visit {
            day: t_plan + outcome + rng.gen_range(1..=180),
            codes: [*pools.complications.choose(rng).unwrap()].into(),
        });
    }
    for _ in 0..rng.gen_range(0..=2) {
        events.push(Visit {
            day: t_plan + rng.gen_range(1..=outcome),
            codes: sample_codes(&pools.background, cfg.codes_per_visit, rng),
        });
    }
    events.sort_by_key(|v| v.day);

    let protected: BTreeSet<usize> = pools.complications.iter().copied().chain([pools.index]).collect();
    let events = apply_noise(events, &cfg.noise, &protected, rng);
    EventStream {
        patient_id: id,
        events,
        gender: if rng.gen_bool(0.5) { Gender::F } else { Gender::M },
        age: rng.gen_range(20..=80),
    }
}

fn apply_noise<R: Rng>(events: Vec<Visit>, noise: &NoiseConfig, protected: &BTreeSet<usize>, rng: &mut R) -> Vec<Visit> {
    let mut out = Vec::with_capacity(events.len());
    for mut visit in events {
        visit
            .codes
            .retain(|c| protected.contains(c) || !rng.gen_bool(noise.drop));
        if visit.codes.is_empty() {
            continue;
        }
        let copies = if rng.gen_bool(noise.duplicate) { 2 } else { 1 };
        for _ in 0..copies {
            if visit.codes.len() >= 2 && rng.gen_bool(noise.split) {
                let mut codes: Vec<usize> = visit.codes.iter().copied().collect();
                codes.shuffle(rng);
                let cut = rng.gen_range(1..codes.len());
                out.push(Visit {
                    day: visit.day,
                    codes: codes[..cut].iter().copied().collect(),
                });
                out.push(Visit {
                    day: visit.day,
                    codes: codes[cut..].iter().copied().collect(),
                });
            } else {
                out.push(visit.clone());
            }
        }
    }
    out
}

/// Returns 1 (success) unless a complication code occurs in
/// `(T_plan, T_outcome]`, where `T0` is the day of the first index diagnosis.
pub fn label_outcome(stream: &EventStream, vocab: &Vocabulary, cfg: &CohortConfig) -> Result<u8> {
    let index = vocab
        .id(INDEX_CODE)
        .ok_or_else(|| Error::UnknownCode { code: INDEX_CODE.into() })?;
    let t0 = stream
        .events
        .iter()
        .find(|v| v.codes.contains(&index))
        .map(|v| v.day)
        .ok_or_else(|| Error::InvalidGraph {
            graph: stream.patient_id.clone(),
            msg: "missing index diagnosis".into(),
        })?;
    let t_plan = t0 + cfg.plan_years * DAYS_PER_YEAR;
    let t_outcome = t_plan + cfg.outcome_years * DAYS_PER_YEAR;
    let failed = stream.events.iter().any(|v| {
        v.day > t_plan && v.day <= t_outcome && v.codes.iter().any(|&c| vocab.code(c).starts_with("CX"))
    });
    Ok(u8::from(!failed))
}

/// Builds the patient graph from the history up to and including `T_plan`.
pub fn stream_to_graph(stream: &EventStream, label: u8, vocab: &Vocabulary, cfg: &CohortConfig) -> Result<PatientGraph> {
    let index = vocab
        .id(INDEX_CODE)
        .ok_or_else(|| Error::UnknownCode { code: INDEX_CODE.into() })?;
    let t0 = stream
        .events
        .iter()
        .find(|v| v.codes.contains(&index))
        .map(|v| v.day);
    let history: Vec<&Visit> = match t0 {
        Some(t0) => {
            let t_plan = t0 + cfg.plan_years * DAYS_PER_YEAR;
            stream.events.iter().filter(|v| v.day <= t_plan).collect()
        }
        None => stream.events.iter().collect(),
    };
    if history.iter().all(|v| v.codes.is_empty()) {
        return Err(Error::InvalidGraph {
            graph: stream.patient_id.clone(),
            msg: "empty history".into(),
        });
    }
    let gender = vocab.id(stream.gender.code()).ok_or_else(|| Error::UnknownCode {
        code: stream.gender.code().into(),
    })?;

    let mut nodes = vec![gender];
    let mut edges = Vec::new();
    let mut prev: Option<(usize, u32)> = None;
    for visit in history.iter().filter(|v| !v.codes.is_empty()) {
        let anchor = nodes.len();
        nodes.extend(visit.codes.iter().copied());
        for k in anchor + 1..nodes.len() {
            edges.push(Edge {
                src: anchor,
                dst: k,
                weight: 0.0,
            });
        }
        let (src, weight) = match prev {
            None => (0, stream.age as f64),
            Some((p, day)) => (p, (visit.day - day) as f64),
        };
        edges.push(Edge { src, dst: anchor, weight });
        prev = Some((anchor, visit.day));
    }
    Ok(PatientGraph {
        id: stream.patient_id.clone(),
        label,
        nodes,
        edges,
    })
}

/// Labels every stream and converts it to a graph.
pub fn cohort_graphs(cohort: &Cohort, cfg: &CohortConfig) -> Result<Vec<PatientGraph>> {
    cohort
        .streams
        .iter()
        .map(|s| {
            let label = label_outcome(s, &cohort.vocab, cfg)?;
            stream_to_graph(s, label, &cohort.vocab, cfg)
        })
        .collect()
}

/// Shuffles with `seed` and cuts into train/validation/test parts by the
/// given fractions (the test part takes the remainder).
pub fn split(graphs: &[PatientGraph], train: f64, val: f64, seed: u64) -> (Vec<PatientGraph>, Vec<PatientGraph>, Vec<PatientGraph>) {
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = graphs.len();
    let a = ((n as f64) * train).round() as usize;
    let b = (a + ((n as f64) * val).round() as usize).min(n);
    let pick = |r: &[usize]| r.iter().map(|&i| graphs[i].clone()).collect();
    (pick(&order[..a]), pick(&order[a..b]), pick(&order[b..]))
}

/// Plain-text summary: class counts and node/edge statistics.
pub fn cohort_stats(graphs: &[PatientGraph]) -> String {
    let n = graphs.len();
    let success = graphs.iter().filter(|g| g.label == 1).count();
    let summary = |xs: Vec<usize>| {
        let min = xs.iter().copied().min().unwrap_or(0);
        let max = xs.iter().copied().max().unwrap_or(0);
        let mean = xs.iter().sum::<usize>() as f64 / xs.len().max(1) as f64;
        (min, mean, max)
    };
    let nodes = summary(graphs.iter().map(|g| g.nodes.len()).collect());
    let edges = summary(graphs.iter().map(|g| g.edges.len()).collect());
    let mut s = String::new();
    let _ = writeln!(s, "patients\t{n}");
    let _ = writeln!(s, "success\t{success}");
    let _ = writeln!(s, "failure\t{}", n - success);
    let _ = writeln!(s, "nodes min/mean/max\t{}/{:.2}/{}", nodes.0, nodes.1, nodes.2);
    let _ = writeln!(s, "edges min/mean/max\t{}/{:.2}/{}", edges.0, edges.1, edges.2);
    s
}
