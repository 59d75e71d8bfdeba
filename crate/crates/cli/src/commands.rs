use std::io::Write;
use std::path::{Path, PathBuf};

use keylearn::detector::{load_keypoints, select_keypoints, write_keypoints, Keypoint, Selection};
use keylearn::evalkit::{
    evaluate_keypoints, load_sequences, model_detector, random_detections, write_reports, BudgetRule, MatchMode,
    PairPlan, Report, TransformSource,
};
use keylearn::learner::{cross_validate, log_space, train_greedy_traced, write_cv_csv, write_trace};
use keylearn::modelio::ModelDocument;
use keylearn::sepfilters::approximate_separable_sizes;
use keylearn::synth::generate_stack;
use keylearn::trainset::{
    build_training_set, parse_keypoint_file, read_archive, write_archive, Candidate, GroupSite, ImageStack,
};

use crate::config::RunConfig;
use crate::{images, ApproxArgs, BuildArgs, CvArgs, DetectArgs, EvalArgs, Failure, SynthArgs, TrainArgs};

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_fail(path, e))
}

/// `<path>.run.json` with the config and its hash.
fn write_sidecar(path: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let mut name = path.as_os_str().to_owned();
    name.push(".run.json");
    let text = serde_json::to_string_pretty(&cfg.stamp()).expect("json") + "\n";
    write_file(&PathBuf::from(name), text.as_bytes())
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<(), Failure> {
    let s = &mut cfg.synth;
    if let Some(v) = a.seed {
        s.scene.seed = v;
    }
    if let Some(v) = a.images {
        s.scene.images = v;
    }
    if let Some(v) = a.train {
        s.train = v;
    }
    if let Some(v) = a.width {
        s.scene.width = v;
    }
    if let Some(v) = a.height {
        s.scene.height = v;
    }
    let stack = generate_stack(&s.scene)?;
    let split = (s.train < s.scene.images).then_some(s.train);
    stack.write(&a.out, split)?;
    let text = serde_json::to_string_pretty(&cfg.stamp()).expect("json") + "\n";
    write_file(&a.out.join("run.json"), text.as_bytes())?;
    println!(
        "{} images ({} structures) in {}",
        stack.images.len(),
        stack.structures.len(),
        a.out.display()
    );
    Ok(())
}

fn external_candidates(dir: &Path, stack: &ImageStack) -> Result<Vec<Vec<Candidate>>, Failure> {
    stack
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let path = dir.join(format!("{id}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| io_fail(&path, e))?;
            parse_keypoint_file(&text, i).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn build_trainset(mut cfg: RunConfig, a: BuildArgs) -> Result<(), Failure> {
    let t = &mut cfg.trainset;
    if let Some(v) = a.seed {
        t.samples.seed = v;
    }
    if let Some(v) = a.patch_size {
        t.samples.patch_size = v;
    }
    if let Some(v) = a.max_anchors {
        t.consensus.max_anchors = v;
    }
    if let Some(v) = a.min_support {
        t.consensus.min_support_fraction = v;
    }
    let stack = ImageStack::load_dir_with(&a.scene, images::decode)?;
    let kp_dir = a.keypoints.clone().or_else(|| {
        let d = a.scene.join("keypoints");
        d.is_dir().then_some(d)
    });
    let external = match &kp_dir {
        Some(d) => {
            log::info!("candidates from {}", d.display());
            Some(external_candidates(d, &stack)?)
        }
        None => None,
    };
    let (ts, _) = build_training_set(&stack, &cfg.trainset, external)?;
    write_archive(&a.out, &ts, &cfg.stamp())?;
    let anchors = ts
        .groups()
        .iter()
        .filter(|g| matches!(g.site, GroupSite::Anchor { .. }))
        .count();
    println!("images {}", stack.len());
    println!("anchors {anchors}");
    println!("samples {}", ts.len());
    println!("positives {}", ts.num_positives());
    Ok(())
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), Failure> {
    let t = &mut cfg.train;
    if let Some(v) = a.n {
        t.n = v;
    }
    if let Some(v) = a.m {
        t.m = v;
    }
    if let Some(v) = a.gamma_c {
        t.gamma_c = v;
    }
    if let Some(v) = a.gamma_s {
        t.gamma_s = v;
    }
    if let Some(v) = a.gamma_t {
        t.gamma_t = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if a.beta.is_some() {
        t.beta = a.beta;
    }
    if a.pca_dim.is_some() {
        t.pca_dim = a.pca_dim;
    }
    if a.no_pca {
        t.use_pca = false;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    cfg.train.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let (ts, _) = read_archive(&a.archive)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".trace.jsonl");
        PathBuf::from(p)
    });
    let mut trace = Vec::new();
    let outcome = train_greedy_traced(&ts, &cfg.train, &mut trace);
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace)?;
    write_file(&trace_path, &buf)?;
    let outcome = outcome.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{} (trace in {})", f.message, trace_path.display());
        f
    })?;
    let mut doc = ModelDocument::from_model(&outcome.model);
    doc.config = Some(cfg.to_json());
    doc.config_hash = Some(cfg.hash());
    doc.save(&a.out)?;
    println!("filters {}", outcome.model.filter_count());
    println!("objective {}", trace.last().map_or(f64::NAN, |r| r.objective));
    Ok(())
}

pub fn cv(mut cfg: RunConfig, a: CvArgs) -> Result<(), Failure> {
    if let Some(points) = a.points {
        if points == 0 || !(a.lo > 0.0 && a.hi >= a.lo) {
            return Err(Failure::usage("--points needs 0 < lo <= hi and at least one point"));
        }
        let g = log_space(a.lo, a.hi, points);
        cfg.cv.gamma_c = g.clone();
        cfg.cv.gamma_s = g.clone();
        cfg.cv.gamma_t = g;
    }
    if let Some(v) = a.n {
        cfg.train.n = v;
    }
    if let Some(v) = a.m {
        cfg.train.m = v;
    }
    let (train, _) = read_archive(&a.train)?;
    let (val, _) = read_archive(&a.validation)?;
    let result = cross_validate(&train, &val, &cfg.cv, &cfg.train)?;
    let mut buf = Vec::new();
    write_cv_csv(&mut buf, &result.table)?;
    write_file(&a.out, &buf)?;
    write_sidecar(&a.out, &cfg)?;
    let b = result.best;
    println!(
        "best gamma_c={:e} gamma_s={:e} gamma_t={:e} score={}",
        b.gamma_c, b.gamma_s, b.gamma_t, b.score
    );
    Ok(())
}

pub fn approx(mut cfg: RunConfig, a: ApproxArgs) -> Result<(), Failure> {
    if let Some(v) = a.size {
        cfg.approx.size = v;
    }
    if let Some(v) = a.sizes {
        cfg.approx.sizes = v;
    }
    let mut doc = ModelDocument::load(&a.model)?;
    let model = doc.to_model()?;
    let mut sizes = cfg.approx.sizes.clone();
    sizes.push(cfg.approx.size);
    sizes.sort_unstable();
    sizes.dedup();
    let banks = approximate_separable_sizes(&model, &sizes)?;
    let mut csv = String::from("S,total_error\n");
    for (s, b) in sizes.iter().zip(&banks) {
        csv.push_str(&format!("{s},{}\n", b.total_error));
        println!("S={s} error={:e}", b.total_error);
    }
    if let Some(path) = &a.curve {
        write_file(path, csv.as_bytes())?;
        write_sidecar(path, &cfg)?;
    }
    let idx = sizes.iter().position(|&s| s == cfg.approx.size).expect("size in list");
    doc.separable = Some(banks[idx].clone());
    doc.save(&a.out)?;
    Ok(())
}

pub fn detect(mut cfg: RunConfig, a: DetectArgs) -> Result<(), Failure> {
    if let Some(v) = a.radius {
        cfg.detect.radius = v;
    }
    if a.budget.is_some() {
        cfg.detect.budget = a.budget;
        cfg.detect.threshold = None;
    }
    if a.threshold.is_some() {
        cfg.detect.threshold = a.threshold;
        cfg.detect.budget = None;
    }
    let selection = match (cfg.detect.budget, cfg.detect.threshold) {
        (Some(_), Some(_)) => return Err(Failure::usage("give either a budget or a threshold")),
        (Some(n), None) => Some(Selection::Budget(n)),
        (None, Some(t)) => Some(Selection::Threshold(t)),
        (None, None) => None,
    };
    let doc = ModelDocument::load(&a.model)?;
    let model = doc.to_model()?;
    let bank = if a.separable {
        Some(
            doc.separable
                .as_ref()
                .ok_or_else(|| Failure::data("model has no separable section; run `approx` first"))?,
        )
    } else {
        None
    };
    let img = images::load(&a.image)?;
    let all = model_detector(&model, bank, cfg.detect.radius)(&img)?;
    let kps = match selection {
        Some(s) => select_keypoints(&all, s)?,
        None => all,
    };
    let mut buf = Vec::new();
    writeln!(buf, "# x y score scale").expect("vec");
    writeln!(buf, "# config_hash {}", cfg.hash()).expect("vec");
    write_keypoints(&mut buf, &kps).expect("vec");
    write_file(&a.out, &buf)?;
    println!("{} keypoints", kps.len());
    Ok(())
}

fn parse_modes(s: &str) -> Result<Vec<MatchMode>, Failure> {
    match s {
        "both" => Ok(vec![MatchMode::Standard, MatchMode::OneToOne]),
        _ => s
            .parse::<MatchMode>()
            .map(|m| vec![m])
            .map_err(|_| Failure::usage(format!("unknown mode {s:?}; use standard, one_to_one or both"))),
    }
}

pub fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<(), Failure> {
    let e = &mut cfg.eval;
    if let Some(m) = &a.mode {
        e.modes = parse_modes(m)?;
    }
    if let Some(n) = a.budget {
        e.budget = BudgetRule::Fixed(n);
    }
    if let Some(r) = a.rate {
        e.budget = BudgetRule::RandomRate(r);
    }
    if let Some(v) = a.threshold_px {
        e.threshold_px = v;
    }
    if let Some(v) = a.margin {
        e.margin = v;
    }
    if let Some(r) = a.reference {
        e.pairs = PairPlan::Reference(r);
    }
    if a.homographies {
        e.transforms = TransformSource::Homographies;
    }
    if let Some(v) = a.radius {
        cfg.detect.radius = v;
    }
    let sequences = load_sequences(&a.dataset, images::decode)?;
    let doc = a.model.as_deref().map(ModelDocument::load).transpose()?;
    let model = doc.as_ref().map(|d| d.to_model()).transpose()?;
    let bank = match (&doc, a.separable) {
        (Some(d), true) => Some(
            d.separable
                .as_ref()
                .ok_or_else(|| Failure::data("model has no separable section; run `approx` first"))?,
        ),
        _ => None,
    };
    let (detector, model_hash) = match (&model, &a.keypoints, a.random) {
        (Some(m), _, _) => (if bank.is_some() { "model_separable" } else { "model" }, Some(m.content_hash())),
        (None, Some(_), _) => ("keypoint_files", None),
        (None, None, true) => ("random", None),
        _ => return Err(Failure::usage("choose a detector: --model, --keypoints or --random")),
    };
    let mut reports = Vec::new();
    for (si, seq) in sequences.iter().enumerate() {
        let detections: Vec<Vec<Keypoint>> = if let Some(m) = &model {
            let det = model_detector(m, bank, cfg.detect.radius);
            seq.images.iter().map(&det).collect::<keylearn::Result<_>>()?
        } else if let Some(dir) = &a.keypoints {
            let sub = dir.join(&seq.name);
            let base = if sub.is_dir() { sub } else { dir.clone() };
            seq.ids
                .iter()
                .map(|id| load_keypoints(&base.join(format!("{id}.txt"))))
                .collect::<keylearn::Result<_>>()?
        } else {
            let (w, h) = (seq.images[0].width(), seq.images[0].height());
            let budget = cfg.eval.resolve_budget(w, h)?;
            (0..seq.images.len())
                .map(|i| random_detections(w, h, cfg.eval.margin, budget, a.seed, ((si as u64) << 32) | i as u64))
                .collect::<keylearn::Result<_>>()?
        };
        let rep = evaluate_keypoints(seq, &detections, &cfg.eval)?;
        for s in &rep.summary {
            println!(
                "{} {} pairs={} budget={} mean={:.4} stddev={:.4}",
                rep.name,
                s.mode.name(),
                s.pairs,
                rep.budget,
                s.mean,
                s.stddev
            );
        }
        reports.push(rep);
    }
    let report = Report {
        schema_version: keylearn::REPORT_SCHEMA_VERSION,
        config: cfg.eval.clone(),
        context: serde_json::json!({
            "detector": detector,
            "model_hash": model_hash,
            "random_seed": a.random.then_some(a.seed),
            "config": cfg.to_json(),
            "config_hash": cfg.hash(),
        }),
        sequences: reports,
    };
    write_reports(&a.out, &report)?;
    Ok(())
}
