use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use emolabel_core::annotator::{
    Annotator, ChatProvider, HttpProvider, MockProvider, PromptMode, PromptTemplate,
    StabilityReport,
};
use emolabel_core::clock::{Clock, SystemClock};
use emolabel_core::config::{ProviderKind, RunConfig};
use emolabel_core::consensus::{self, ConsensusLevel};
use emolabel_core::corpus::{self, AnnotationRecord, Track};
use emolabel_core::fixture::{Fixture, FixtureShape};
use emolabel_core::report::{self, EvaluationInput};
use emolabel_core::retrieval::{
    bundles_by_track, ContextBundle, FetchReport, Fetcher, FixtureFetcher, HttpFetcher, Retriever,
};

use crate::{Cli, CliError, Command, FixtureArgs, GlobalArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Fixture(args) = &cli.command {
        return fixture(&cli.global, args);
    }
    let cfg = load_config(&cli.global)?;
    rayon_pool(cfg.parallelism);
    match &cli.command {
        Command::Crawl => crawl(&cfg),
        Command::Annotate { dry_run } => annotate(&cfg, *dry_run, cli.global.output.as_deref()),
        Command::Stability { runs } => {
            stability(&cfg, runs.unwrap_or(cfg.evaluation.stability_runs))
        }
        Command::Gold => gold(&cfg),
        Command::Evaluate => evaluate(&cfg, cli.global.output.as_deref()),
        Command::Fixture(_) => unreachable!("handled above"),
    }
}

/// Flags win over the file; the result is validated again.
fn load_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&g.config)?;
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if g.offline {
        cfg.retrieval.offline = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn rayon_pool(threads: usize) {
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

fn clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock::new())
}

fn fetcher(cfg: &RunConfig) -> Result<Arc<dyn Fetcher>, CliError> {
    let r = &cfg.retrieval;
    Ok(match &r.fixture_dir {
        Some(dir) => {
            Arc::new(FixtureFetcher::open(dir).map_err(|e| CliError::User(e.to_string()))?)
        }
        None => Arc::new(
            HttpFetcher::new(Duration::from_secs(r.timeout_secs), &r.user_agent)
                .map_err(|e| CliError::Internal(e.to_string()))?,
        ),
    })
}

fn fetch(cfg: &RunConfig, tracks: &[Track], offline: bool) -> Result<Vec<FetchReport>, CliError> {
    let mut source = cfg.source_config(&cfg.paths.cache);
    source.offline |= offline;
    let retriever = Retriever::new(source, fetcher(cfg)?, clock())?;
    Ok(retriever.fetch_all(tracks, cfg.parallelism)?)
}

fn crawl(cfg: &RunConfig) -> Result<(), CliError> {
    let tracks = corpus::load_tracks(&cfg.paths.tracks)?;
    let reports = fetch(cfg, &tracks, false)?;
    let domains = cfg.source_config(&cfg.paths.cache).domains.len();
    let (mut docs, mut hits, mut requests, mut empty) = (0, 0, 0, 0);
    for (t, r) in tracks.iter().zip(&reports) {
        docs += r.documents.len();
        hits += r.cache_hits;
        requests += r.requests;
        if r.documents.is_empty() {
            empty += 1;
            for w in &r.warnings {
                log::warn!("{}: {} ({})", t.id, w.message, w.domain);
            }
            eprintln!("warning: {}: no documents", t.id);
        }
    }
    println!(
        "crawl: {} tracks x {} domains = {} attempts; {} documents, {} cache hits, {} requests, {} tracks without documents",
        tracks.len(),
        domains,
        tracks.len() * domains,
        docs,
        hits,
        requests,
        empty
    );
    if cfg.retrieval.offline && empty > 0 {
        return Err(CliError::User(format!(
            "offline with a cold cache: {empty} track(s) have no cached documents"
        )));
    }
    Ok(())
}

fn template(cfg: &RunConfig) -> Result<PromptTemplate, CliError> {
    let t = match &cfg.provider.template {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
            let version = cfg.provider.template_version.clone().unwrap_or_default();
            PromptTemplate::new(text, version)?
        }
        None => PromptTemplate::default_for(cfg.mode),
    };
    if t.mode() != cfg.mode {
        return Err(CliError::User(format!(
            "template is a {} template but mode is {}",
            t.mode().as_str(),
            cfg.mode.as_str()
        )));
    }
    Ok(t)
}

fn provider(cfg: &RunConfig) -> Result<Arc<dyn ChatProvider>, CliError> {
    Ok(match cfg.provider.kind {
        ProviderKind::Mock => {
            let script = cfg.provider.script.as_ref().expect("validated");
            Arc::new(MockProvider::load(script).map_err(CliError::User)?)
        }
        ProviderKind::Http => Arc::new(
            HttpProvider::new(&cfg.provider_config())
                .map_err(|e| CliError::Internal(e.to_string()))?,
        ),
    })
}

fn annotator(cfg: &RunConfig) -> Result<Annotator, CliError> {
    Ok(Annotator::new(
        provider(cfg)?,
        cfg.provider_config(),
        template(cfg)?,
        cfg.provider.annotator_id.clone(),
        clock(),
    )?)
}

/// Context bundles from the cache; never touches the network.
fn bundles(cfg: &RunConfig, tracks: &[Track]) -> Result<HashMap<String, ContextBundle>, CliError> {
    if cfg.mode == PromptMode::TitleOnly {
        return Ok(HashMap::new());
    }
    let reports = fetch(cfg, tracks, true)?;
    let empty = reports.iter().filter(|r| r.documents.is_empty()).count();
    if empty > 0 {
        eprintln!("warning: {empty} track(s) have no cached context; run `crawl` first");
    }
    Ok(bundles_by_track(
        tracks,
        reports,
        &cfg.source_config(&cfg.paths.cache),
    ))
}

fn annotate(cfg: &RunConfig, dry_run: bool, output: Option<&Path>) -> Result<(), CliError> {
    let tracks = corpus::load_tracks(&cfg.paths.tracks)?;
    let bundles = bundles(cfg, &tracks)?;
    let annotator = annotator(cfg)?;
    if dry_run {
        let dir = output
            .map(Path::to_path_buf)
            .unwrap_or_else(|| cfg.paths.output.join("prompts"));
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for t in &tracks {
            let prompt = annotator.prompt_for(t, &bundles)?;
            let path = dir.join(format!("{}.txt", t.id));
            std::fs::write(&path, prompt).map_err(|e| io_err(&path, e))?;
        }
        println!(
            "dry run: {} prompts written to {}",
            tracks.len(),
            dir.display()
        );
        return Ok(());
    }
    let outcome = annotator.batch_annotate(
        &tracks,
        &bundles,
        0,
        cfg.parallelism,
        Some(&cfg.paths.checkpoint),
    )?;
    let mut records = outcome.records.clone();
    records.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    corpus::save_annotations(&cfg.paths.annotations, &records)?;
    println!(
        "annotate: {} records ({} resumed), {} labeled, {} not enough information, {} failed",
        records.len(),
        outcome.resumed,
        outcome.labeled_count(),
        outcome.nei_count(),
        outcome.failures.len()
    );
    if !outcome.failures.is_empty() {
        for f in &outcome.failures {
            eprintln!("failed: {} (run {}): {}", f.track_id, f.run_index, f.reason);
        }
        return Err(CliError::Internal(format!(
            "{} track(s) failed; rerun to resume from {}",
            outcome.failures.len(),
            cfg.paths.checkpoint.display()
        )));
    }
    Ok(())
}

fn stability(cfg: &RunConfig, runs: u32) -> Result<(), CliError> {
    if runs < 2 {
        return Err(CliError::User(format!(
            "--runs must be at least 2, got {runs}"
        )));
    }
    let tracks = corpus::load_tracks(&cfg.paths.tracks)?;
    let bundles = bundles(cfg, &tracks)?;
    let annotator = annotator(cfg)?;
    let mut per_run = Vec::with_capacity(runs as usize);
    let mut failures = 0;
    for run in 0..runs {
        let out = annotator.batch_annotate(
            &tracks,
            &bundles,
            run,
            cfg.parallelism,
            Some(&cfg.paths.stability),
        )?;
        failures += out.failures.len();
        per_run.push(out.records);
    }
    if failures > 0 {
        return Err(CliError::Internal(format!(
            "{failures} annotation(s) failed; rerun to resume"
        )));
    }
    let s = StabilityReport::from_runs(&per_run);
    println!(
        "stability over {} runs: {}/{} identical, {} majority-consistent, {} inconsistent",
        s.runs, s.all_identical, s.total, s.majority_consistent, s.fully_inconsistent
    );
    Ok(())
}

fn human_records(cfg: &RunConfig) -> Result<Vec<AnnotationRecord>, CliError> {
    let mut all = Vec::new();
    for p in &cfg.paths.human_annotations {
        all.extend(corpus::load_annotations(p)?);
    }
    Ok(all)
}

fn gold(cfg: &RunConfig) -> Result<(), CliError> {
    let records = human_records(cfg)?;
    let set = corpus::build_annotation_set(&records, &cfg.evaluation.humans, 0, true)?;
    let golds = consensus::gold_standard(&set, &[cfg.annotator_id()])?;
    consensus::save_gold(&cfg.paths.gold, &golds)?;
    let levels = consensus::level_counts(&golds);
    println!(
        "gold: {} tracks; full {}, partial {}, none {}",
        golds.len(),
        levels[&ConsensusLevel::Full],
        levels[&ConsensusLevel::Partial],
        levels[&ConsensusLevel::None]
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig, output: Option<&Path>) -> Result<(), CliError> {
    let tracks: Vec<String> = corpus::load_tracks(&cfg.paths.tracks)?
        .into_iter()
        .map(|t| t.id)
        .collect();
    let mut records = human_records(cfg)?;
    if !cfg.paths.annotations.exists() {
        return Err(CliError::User(format!(
            "{}: no model annotations; run `annotate` first",
            cfg.paths.annotations.display()
        )));
    }
    records.extend(corpus::load_annotations(&cfg.paths.annotations)?);
    let gold = if cfg.paths.gold.exists() {
        Some(consensus::load_gold(&cfg.paths.gold)?)
    } else {
        None
    };
    let model = cfg.annotator_id();
    let stability = if cfg.paths.stability.exists() {
        let recs = corpus::load_annotations(&cfg.paths.stability)?;
        StabilityReport::from_records(&recs, &model)
    } else {
        None
    };
    let report = report::evaluate(&EvaluationInput {
        records: &records,
        humans: &cfg.evaluation.humans,
        model: &model,
        run_index: cfg.evaluation.run_index,
        expected_tracks: &tracks,
        gold: gold.as_deref(),
        bootstrap: cfg.bootstrap_spec(),
        stability: stability.as_ref(),
        config_hash: Some(cfg.content_hash()),
    })?;
    let dir: PathBuf = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.output.clone());
    report::write_report(&report, &dir)?;
    let b = &report.accuracy.model.binary;
    println!(
        "evaluate: binary accuracy {}/{} = {}; report written to {}",
        b.matches,
        b.total,
        report::fmt6(Some(b.value)),
        dir.display()
    );
    Ok(())
}

fn fixture(g: &GlobalArgs, a: &FixtureArgs) -> Result<(), CliError> {
    let mut shape = if a.reference {
        FixtureShape::reference()
    } else {
        FixtureShape::default()
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut shape.full, a.full);
    set(&mut shape.full_matches, a.full_matches);
    set(&mut shape.partial, a.partial);
    set(&mut shape.partial_matches, a.partial_matches);
    set(&mut shape.partial_minority, a.partial_minority);
    set(&mut shape.none, a.none);
    set(&mut shape.none_matches, a.none_matches);
    set(&mut shape.nei, a.nei);
    set(&mut shape.unstable, a.unstable);
    if let Some(m) = &a.human_majority {
        let [x, y, z] = m[..] else {
            return Err(CliError::User(format!(
                "--human-majority takes three comma-separated counts, got {}",
                m.len()
            )));
        };
        shape.human_partial_majority = Some([x, y, z]);
    } else if a.partial.is_some() && shape.human_partial_majority.is_some() {
        // a preset split no longer fits the new group size
        shape.human_partial_majority = None;
    }
    let dir = g
        .output
        .clone()
        .ok_or_else(|| CliError::User("fixture needs --output DIR".into()))?;
    let f = Fixture::generate(&shape, g.seed.unwrap_or(0))?;
    let config = f.write(&dir)?;
    println!(
        "fixture: {} tracks ({}/{}/{}) written to {}; config {}",
        f.tracks.len(),
        shape.full,
        shape.partial,
        shape.none,
        dir.display(),
        config.display()
    );
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}
