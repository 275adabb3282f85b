//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `UPDATE_GOLDEN=1` rewrites the committed end-to-end report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use emolabel_core::annotator::{Annotator, MockProvider, PromptTemplate, ProviderConfig};
use emolabel_core::clock::VirtualClock;
use emolabel_core::consensus::{self, ConsensusLevel, GoldStandard};
use emolabel_core::corpus::{self, AnnotationOutcome, AnnotationRecord, EmotionLabel};
use emolabel_core::fixture::{Fixture, FixtureShape, HUMANS};
use emolabel_core::metrics::{self, LabelDistribution, Predictions, RatingMatrix};
use emolabel_core::resample::{self, BootstrapSpec};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(
        elapsed <= Duration::from_secs(limit_secs),
        format!("took {elapsed:.2?}, limit {limit_secs}s"),
    )
}

fn humans() -> Vec<String> {
    HUMANS.map(String::from).to_vec()
}

fn golds_for(patterns: &[[EmotionLabel; 3]]) -> Vec<GoldStandard> {
    let records: Vec<AnnotationRecord> = patterns
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            HUMANS
                .iter()
                .zip(p)
                .map(move |(h, &l)| AnnotationRecord::human(format!("p{i:03}"), *h, l))
        })
        .collect();
    let set = corpus::build_annotation_set(&records, &humans(), 0, true).unwrap();
    consensus::gold_standard(&set, &[]).unwrap()
}

fn all_patterns() -> Vec<[EmotionLabel; 3]> {
    let mut v = Vec::with_capacity(64);
    for a in EmotionLabel::ALL {
        for b in EmotionLabel::ALL {
            for c in EmotionLabel::ALL {
                v.push([a, b, c]);
            }
        }
    }
    v
}

fn fixture_golds(f: &Fixture) -> (Vec<GoldStandard>, Predictions) {
    let set = corpus::build_annotation_set(&f.human_records, &humans(), 0, true).unwrap();
    let golds = consensus::gold_standard(&set, &[]).unwrap();
    let preds = f
        .tracks
        .iter()
        .zip(&f.model_outcomes)
        .map(|(t, &o)| (t.id.clone(), o))
        .collect();
    (golds, preds)
}

/// Model that follows the crowd: misses some unanimous tracks, sides with
/// the majority about as often as a single rater does.
fn consensus_tracking_shape() -> FixtureShape {
    FixtureShape {
        full: 211,
        full_matches: 165,
        partial: 175,
        partial_matches: 117,
        partial_minority: 58,
        none: 14,
        none_matches: 14,
        human_partial_majority: Some([114, 115, 121]),
        ..FixtureShape::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let patterns = all_patterns();
    let golds = golds_for(&patterns);
    let mut checked = 0;
    for (p, g) in patterns.iter().zip(&golds) {
        let mut counts = [0i64; 4];
        for l in p {
            counts[l.index()] += 1;
        }
        for pred in EmotionLabel::ALL {
            let c = counts[pred.index()];
            let max = *counts.iter().max().unwrap();
            let expected = match (max, c) {
                (3, 3) => Rational64::from_integer(1),
                (2, 2) => Rational64::from_integer(1),
                (2, 1) => Rational64::new(1, 2),
                (1, 1) => Rational64::new(1, 3),
                _ => Rational64::from_integer(0),
            };
            let got = metrics::weighted_score(g, AnnotationOutcome::Labeled(pred));
            check(
                got == expected,
                format!("{p:?} pred {pred:?}: {got} != {expected}"),
            )?;
            checked += 1;
        }
        let nei = metrics::weighted_score(g, AnnotationOutcome::NotEnoughInformation);
        check(nei == Rational64::from_integer(0), "NEI must score 0")?;
    }
    check(checked == 256, format!("{checked} combinations"))?;
    let t = start.elapsed();
    within(t, 1)?;
    Ok(format!("256/256 combinations exact in {t:.2?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let f = Fixture::generate(&FixtureShape::reference(), 7).map_err(|e| e.to_string())?;
    let (golds, preds) = fixture_golds(&f);
    let levels = consensus::level_counts(&golds);
    check(
        levels[&ConsensusLevel::Full] == 211
            && levels[&ConsensusLevel::Partial] == 175
            && levels[&ConsensusLevel::None] == 14,
        format!("split {levels:?}"),
    )?;
    let b = metrics::binary_accuracy(&golds, &preds).map_err(|e| e.to_string())?;
    check(
        (b.matches, b.total) == (274, 386) && (b.value - 0.710).abs() <= 0.0005,
        format!("binary {}/{} = {}", b.matches, b.total, b.value),
    )?;
    let s = metrics::subgroup_accuracy(&golds, &preds);
    let (full, partial) = (s.full_rate(), s.partial_majority_rate());
    check(
        (full - 0.853).abs() <= 0.0005 && (partial - 0.537).abs() <= 0.0005,
        format!("subgroup rates {full} / {partial}"),
    )?;
    check(s.partial_minority == 0, "minority matches must be 0")?;
    let t = start.elapsed();
    within(t, 5)?;
    Ok(format!(
        "binary {}/{} = {:.6}, full {:.4}, partial {:.4} in {t:.2?}",
        b.matches, b.total, b.value, full, partial
    ))
}

/// Pair-by-pair Cohen's kappa from the textbook definitions.
fn cohen_oracle(a: &[usize], b: &[usize]) -> Option<f64> {
    let n = a.len() as f64;
    let p0 = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pe: f64 = (0..4)
        .map(|c| {
            let pa = a.iter().filter(|&&x| x == c).count() as f64 / n;
            let pb = b.iter().filter(|&&x| x == c).count() as f64 / n;
            pa * pb
        })
        .sum();
    if (1.0 - pe).abs() < 1e-15 {
        return None;
    }
    Some((p0 - pe) / (1.0 - pe))
}

/// Fleiss' kappa from per-item rater lists, directly from the definitions.
fn fleiss_oracle(items: &[Vec<usize>]) -> Option<f64> {
    let n = items.len() as f64;
    let mut p_bar = 0.0;
    let mut share = [0.0f64; 4];
    let total: f64 = items.iter().map(|r| r.len() as f64).sum();
    for raters in items {
        let m = raters.len() as f64;
        let mut agree = 0.0;
        for (i, x) in raters.iter().enumerate() {
            for (j, y) in raters.iter().enumerate() {
                if i != j && x == y {
                    agree += 1.0;
                }
            }
            share[*x] += 1.0 / total;
        }
        p_bar += agree / (m * (m - 1.0)) / n;
    }
    let pe: f64 = share.iter().map(|p| p * p).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return None;
    }
    Some((p_bar - pe) / (1.0 - pe))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let k = metrics::cohen_kappa(&[1, 1, 2, 2], &[1, 2, 2, 2]).map_err(|e| e.to_string())?;
    check((k - 0.5).abs() <= 1e-12, format!("cohen example {k}"))?;
    let m = RatingMatrix::new(2, vec![vec![3, 0], vec![2, 1], vec![0, 3]]).unwrap();
    let kf = metrics::fleiss_kappa(&m).map_err(|e| e.to_string())?;
    check((kf - 0.55).abs() <= 1e-12, format!("fleiss example {kf}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = (0, 0);
    for i in 0..1000 {
        let n = rng.gen_range(1..=10);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        match (cohen_oracle(&a, &b), metrics::cohen_kappa(&a, &b)) {
            (Some(want), Ok(got)) => {
                check(
                    (got - want).abs() <= 1e-9,
                    format!("cohen #{i}: {got} vs {want}"),
                )?;
                compared.0 += 1;
            }
            (None, Ok(got)) => check(
                got == 1.0 && a == b,
                format!("cohen #{i}: degenerate {got}"),
            )?,
            (want, got) => return Err(format!("cohen #{i}: oracle {want:?}, got {got:?}")),
        }

        let raters = rng.gen_range(2..=5);
        let items: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..raters).map(|_| rng.gen_range(0..4)).collect())
            .collect();
        let rows = items
            .iter()
            .map(|r| {
                let mut c = vec![0u32; 4];
                for &x in r {
                    c[x] += 1;
                }
                c
            })
            .collect();
        let got = metrics::fleiss_kappa(&RatingMatrix::new(4, rows).unwrap());
        match (fleiss_oracle(&items), got) {
            (Some(want), Ok(got)) => {
                check(
                    (got - want).abs() <= 1e-9,
                    format!("fleiss #{i}: {got} vs {want}"),
                )?;
                compared.1 += 1;
            }
            (None, Ok(got)) => check(got == 1.0, format!("fleiss #{i}: degenerate {got}"))?,
            (want, got) => return Err(format!("fleiss #{i}: oracle {want:?}, got {got:?}")),
        }
    }
    let t = start.elapsed();
    within(t, 30)?;
    Ok(format!(
        "examples exact; {} Cohen and {} Fleiss random instances within 1e-9 in {t:.2?}",
        compared.0, compared.1
    ))
}

/// JSD((2/3, 1/3, 0, 0), (1, 0, 0, 0)) in bits, to 40 significant digits.
const JSD_TWO_THIRDS: f64 = 0.190_874_504_621_109_467_501_603_280_732_749_774_4;

fn entropy_form(p: &[f64; 4], q: &[f64; 4]) -> f64 {
    let h = |d: &[f64]| -> f64 {
        -d.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * x.log2())
            .sum::<f64>()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    h(&m) - (h(p) + h(q)) / 2.0
}

fn random_distribution(rng: &mut ChaCha8Rng) -> LabelDistribution {
    let mut w = [0.0f64; 4];
    for x in w.iter_mut() {
        // some exact zeros so the support varies
        if rng.gen_bool(0.8) {
            *x = rng.gen_range(0.0..1.0);
        }
    }
    if w.iter().sum::<f64>() == 0.0 {
        w[rng.gen_range(0..4)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    let mut p = w.map(|x| x / s);
    let drift = 1.0 - p.iter().sum::<f64>();
    let i = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    p[i] += drift;
    LabelDistribution::new(p).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let p = LabelDistribution::new([2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]).unwrap();
    let q = LabelDistribution::one_hot(EmotionLabel::Hvha);
    let d = metrics::js_divergence(&p, &q);
    check(
        (d - JSD_TWO_THIRDS).abs() <= 1e-12,
        format!("derived value {d} vs {JSD_TWO_THIRDS}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..10_000 {
        let p = random_distribution(&mut rng);
        let q = random_distribution(&mut rng);
        let pq = metrics::js_divergence(&p, &q);
        let qp = metrics::js_divergence(&q, &p);
        check(pq == qp, format!("pair {i}: asymmetric {pq} vs {qp}"))?;
        check(
            (0.0..=1.0).contains(&pq),
            format!("pair {i}: out of range {pq}"),
        )?;
        let pp = metrics::js_divergence(&p, &p);
        check(pp.abs() <= 1e-12, format!("pair {i}: JSD(p,p) = {pp}"))?;
        let want = entropy_form(p.probs(), q.probs());
        check(
            (pq - want).abs() <= 1e-12,
            format!("pair {i}: {pq} vs oracle {want}"),
        )?;
    }
    let t = start.elapsed();
    within(t, 10)?;
    Ok(format!(
        "derived value {d:.16}; 10000 pairs hold in {t:.2?}"
    ))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let spec = BootstrapSpec {
        iterations: 10_000,
        level: 0.95,
        seed: 42,
    };

    let reference = Fixture::generate(&FixtureShape::reference(), 7).map_err(|e| e.to_string())?;
    let (golds, preds) = fixture_golds(&reference);
    let high: Vec<&GoldStandard> = golds
        .iter()
        .filter(|g| g.level.is_high_confidence())
        .collect();
    let gold: Vec<EmotionLabel> = high.iter().map(|g| g.majority.unwrap()).collect();
    let model: Vec<EmotionLabel> = high
        .iter()
        .map(|g| preds[&g.track_id].label().unwrap())
        .collect();

    let a = resample::bootstrap_kappa_diff("d", &model, &gold, &gold, &spec)
        .map_err(|e| e.to_string())?;
    let b = resample::bootstrap_kappa_diff("d", &model, &gold, &gold, &spec)
        .map_err(|e| e.to_string())?;
    let bytes = |r| serde_json::to_vec(r).unwrap();
    check(bytes(&a) == bytes(&b), "same seed gave different results")?;

    let same = resample::bootstrap_kappa_diff("same", &model, &model, &gold, &spec)
        .map_err(|e| e.to_string())?;
    check(
        same.ci_low == 0.0 && same.ci_high == 0.0,
        format!("identical annotators: [{}, {}]", same.ci_low, same.ci_high),
    )?;

    let mut pairwise = Vec::new();
    for h in HUMANS {
        let human: Vec<EmotionLabel> = high.iter().map(|g| g.expert_labels[h]).collect();
        let r = resample::bootstrap_kappa_diff(h, &model, &human, &gold, &spec)
            .map_err(|e| e.to_string())?;
        check(
            r.ci_high < 0.0,
            format!(
                "model - {h}: [{:.3}, {:.3}] not below 0",
                r.ci_low, r.ci_high
            ),
        )?;
        pairwise.push(format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high));
    }

    let tracking = Fixture::generate(&consensus_tracking_shape(), 3).map_err(|e| e.to_string())?;
    let mut records = tracking.human_records.clone();
    records.extend(tracking.model_records("model", 0));
    let mut roster = humans();
    roster.push("model".into());
    let with_model = corpus::build_annotation_set(&records, &roster, 0, true).unwrap();
    let humans_only = with_model.select_raters(&HUMANS).unwrap();
    let fl = resample::bootstrap_fleiss_diff("fleiss", &humans_only, &with_model, &spec)
        .map_err(|e| e.to_string())?;
    check(
        fl.ci_low <= 0.0 && 0.0 <= fl.ci_high,
        format!("fleiss diff CI [{}, {}] excludes 0", fl.ci_low, fl.ci_high),
    )?;
    let t = start.elapsed();
    within(t, 60)?;
    Ok(format!(
        "deterministic; identical CI [0, 0]; model-human CIs {}; fleiss diff {:.3} [{:.3}, {:.3}] in {t:.2?}",
        pairwise.join(" "),
        fl.point_estimate,
        fl.ci_low,
        fl.ci_high
    ))
}

fn stability_of(shape: &FixtureShape) -> Result<(usize, usize, usize), String> {
    let f = Fixture::generate(shape, 5).map_err(|e| e.to_string())?;
    let provider = Arc::new(MockProvider::new(f.script())?);
    let mut cfg = ProviderConfig::new("", "mock-model");
    cfg.rate_limit = 1e9;
    let annotator = Annotator::new(
        provider,
        cfg,
        PromptTemplate::default_context(),
        None,
        Arc::new(VirtualClock::default()),
    )
    .map_err(|e| e.to_string())?;
    let r = annotator
        .stability_run(&f.tracks, &Default::default(), 3, 4)
        .map_err(|e| e.to_string())?;
    Ok((r.total, r.all_identical, r.majority_consistent))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let steady = FixtureShape {
        unstable: 0,
        ..FixtureShape::reference()
    };
    let (n, same, _) = stability_of(&steady)?;
    check(
        n == 400 && same == 400,
        format!("deterministic mock: {same}/{n}"),
    )?;
    let (n, same, majority) = stability_of(&FixtureShape::reference())?;
    check(
        (n, same, majority) == (400, 385, 15),
        format!("scripted variation: {same}/{n} identical, {majority} majority"),
    )?;
    let t = start.elapsed();
    within(t, 10)?;
    Ok(format!(
        "400/400 identical; scripted {same}/{n} identical, {majority} majority-consistent in {t:.2?}"
    ))
}

fn emolabel(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_emolabel"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!(
            "`emolabel {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn pipeline(dir: &Path, parallelism: &str) -> Result<Vec<u8>, String> {
    let p = ["--parallelism", parallelism];
    emolabel(
        dir,
        &["fixture", "--reference", "--seed", "7", "--output", "fx"],
    )?;
    let cfg = ["--config", "fx/config.toml"];
    for cmd in [
        &["crawl"][..],
        &["annotate"],
        &["stability", "--runs", "3"],
        &["gold"],
        &["evaluate"],
    ] {
        let args: Vec<&str> = cmd.iter().chain(&cfg).chain(&p).copied().collect();
        emolabel(dir, &args)?;
    }
    std::fs::read(dir.join("fx/report/report.json")).map_err(|e| e.to_string())
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.json")
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let serial = pipeline(a.path(), "1")?;
    let parallel = pipeline(b.path(), "8")?;
    check(
        serial == parallel,
        "report differs between --parallelism 1 and 8",
    )?;
    let golden = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).map_err(|e| e.to_string())?;
        std::fs::write(&golden, &serial).map_err(|e| e.to_string())?;
    }
    let expected = std::fs::read(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    check(
        serial == expected,
        "report.json differs from the golden file",
    )?;
    let t = start.elapsed();
    within(t, 60)?;
    Ok(format!(
        "{} bytes identical to golden across --parallelism 1 and 8 in {t:.2?}",
        serial.len()
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let patterns = all_patterns();
    let golds = golds_for(&patterns);
    let mut tally: BTreeMap<ConsensusLevel, usize> = BTreeMap::new();
    for (p, g) in patterns.iter().zip(&golds) {
        let distinct = {
            let mut v = p.to_vec();
            v.sort();
            v.dedup();
            v.len()
        };
        let want = match distinct {
            1 => ConsensusLevel::Full,
            2 => ConsensusLevel::Partial,
            _ => ConsensusLevel::None,
        };
        check(g.level == want, format!("{p:?}: {:?} != {want:?}", g.level))?;
        *tally.entry(g.level).or_default() += 1;
    }
    check(
        tally.values().copied().collect::<Vec<_>>() == [4, 36, 24],
        format!("tally {tally:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..200 {
        let full = rng.gen_range(0..60);
        let partial = rng.gen_range(0..60);
        let none = rng.gen_range(1..20);
        let shape = FixtureShape {
            full,
            full_matches: rng.gen_range(0..=full),
            partial,
            partial_matches: rng.gen_range(0..=partial),
            none,
            ..FixtureShape::default()
        };
        let f = Fixture::generate(&shape, i).map_err(|e| e.to_string())?;
        let (golds, _) = fixture_golds(&f);
        let (high, low) = consensus::partition_confidence(&golds);
        check(
            high.len() + low.len() == f.tracks.len() && high.len() == full + partial,
            format!(
                "fixture {i}: {} + {} != {}",
                high.len(),
                low.len(),
                f.tracks.len()
            ),
        )?;
    }
    Ok(format!(
        "64 patterns match the enumeration (4/36/24); 200 random fixtures partition exactly in {:.2?}",
        start.elapsed()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("scoring-rule oracle", criterion_1),
        ("reference-shaped accuracy", criterion_2),
        ("kappa oracles", criterion_3),
        ("JSD properties", criterion_4),
        ("bootstrap determinism and sanity", criterion_5),
        ("stability protocol", criterion_6),
        ("end-to-end golden run", criterion_7),
        ("consensus exhaustiveness", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
