//! The `xray-bovw` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 artifact mismatch.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::detect::{
    balance, build_dataset, image_id_of, save_overlay, write_detections_jsonl, DetectionRecord,
    Detector, ProposalDataset, StageTimings,
};
use crate::encode::Chi2FeatureMap;
use crate::error::{Error, Result};
use crate::eval::{
    annotations_by_image, classification_metrics, hit_rate, learning_curve, learning_curve_csv,
    load_annotations, localization_rate, mean_best_overlap, pr_curve, pr_curve_csv, predict_at,
    score_set, select_threshold_max_f1, Annotation,
};
use crate::features::{flatten, phow_extract, write_descriptor_dump};
use crate::imagecore::{load_grayscale, metal_mask};
use crate::proposals::{selective_search, write_proposals_csv, BoundingBox};
use crate::svm::{svm_train, SvmModel};
use crate::synth;
use crate::vocab::{build_vocabulary, Vocabulary};

#[derive(Debug, Parser)]
#[command(
    name = "xray-bovw",
    version,
    about = "Handgun detection in X-ray baggage images"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Longest image side during processing, 0 for full resolution.
    #[arg(long, global = true)]
    max_side: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster masked dense descriptors into a vocabulary.
    BuildVocab {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Also write the training descriptors.
        #[arg(long)]
        dump_descriptors: Option<PathBuf>,
    },
    /// Label Selective Search proposals and store their word histograms.
    BuildDataset {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every proposal instead of balancing the classes.
        #[arg(long)]
        no_balance: bool,
    },
    /// Train the linear SVM.
    Train {
        /// Prebuilt dataset; otherwise one is built from the image flags.
        #[arg(long, conflicts_with = "images")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Pick the maximum-F1 decision threshold on a validation dataset.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Tuned model path (default: overwrite the input model).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Precision-recall curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Run the detector and write one JSON line per image.
    Detect {
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for overlay PNGs.
        #[arg(long)]
        overlay_dir: Option<PathBuf>,
        /// Ground truth drawn on overlays.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Evaluate proposals, the classifier or detections.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Images for proposal evaluation.
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Segmentation k values to sweep in proposal mode.
        #[arg(long, value_delimiter = ',')]
        k: Vec<f64>,
        /// Overlap thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-image proposal CSVs.
        #[arg(long)]
        dump_proposals: Option<PathBuf>,
    },
    /// Validation and test error over a λ grid.
    LearningCurve {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus with annotations.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        /// Cropped single-gun images written to `<out>/crops`.
        #[arg(long, default_value_t = 0)]
        crops: usize,
        #[arg(long, default_value_t = 160)]
        size: usize,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long, num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Cropped object images used as whole-image positives.
    #[arg(long, num_args = 1..)]
    crops: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalMode {
    Proposals,
    Classifier,
    Detection,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.max_side {
        cfg.max_side = s;
    }
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            return Err(Error::InvalidParameter("--jobs must be >= 1".into()));
        }
        // fails only if a pool already exists, as in repeated in-process runs
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    match cli.command {
        Command::BuildVocab {
            images,
            out,
            vocab_size,
            restarts,
            dump_descriptors,
        } => {
            if let Some(v) = vocab_size {
                cfg.vocab_size = v;
            }
            if let Some(r) = restarts {
                cfg.restarts = r;
            }
            cfg.validate()?;
            cmd_build_vocab(
                &expand_images(&images)?,
                &out,
                dump_descriptors.as_deref(),
                &cfg,
            )
        }
        Command::BuildDataset {
            data,
            vocab,
            out,
            no_balance,
        } => {
            if no_balance {
                cfg.balance = false;
            }
            cfg.validate()?;
            let (vocab, _) = Vocabulary::load(&vocab)?;
            let ds = dataset_from_images(&data, &vocab, &cfg)?;
            ds.save(&out, &cfg.to_toml())?;
            println!(
                "entries {} positives {} negatives {}",
                ds.len(),
                ds.positives(),
                ds.negatives()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            data,
            vocab,
            out,
            lambda,
        } => {
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            cfg.validate()?;
            cmd_train(dataset.as_deref(), &data, &vocab, &out, &cfg)
        }
        Command::Tune {
            dataset,
            model,
            out,
            curve,
        } => {
            cfg.validate()?;
            cmd_tune(
                &dataset,
                &model,
                out.as_deref().unwrap_or(&model),
                curve.as_deref(),
                &cfg,
            )
        }
        Command::Detect {
            images,
            model,
            vocab,
            out,
            overlay_dir,
            annotations,
        } => {
            cfg.validate()?;
            cmd_detect(
                &expand_images(&images)?,
                &model,
                &vocab,
                &out,
                overlay_dir.as_deref(),
                annotations.as_deref(),
                &cfg,
            )
        }
        Command::Eval {
            mode,
            annotations,
            images,
            k,
            thresholds,
            dataset,
            model,
            detections,
            out,
            dump_proposals,
        } => {
            cfg.validate()?;
            let need = |p: Option<PathBuf>, flag: &str| {
                p.ok_or_else(|| Error::InvalidParameter(format!("--mode needs {flag}")))
            };
            let thresholds = if thresholds.is_empty() {
                vec![cfg.pascal_threshold]
            } else {
                thresholds
            };
            match mode {
                EvalMode::Proposals => cmd_eval_proposals(
                    &expand_images(&images)?,
                    &need(annotations, "--annotations")?,
                    &k,
                    &thresholds,
                    out.as_deref(),
                    dump_proposals.as_deref(),
                    &cfg,
                ),
                EvalMode::Classifier => {
                    cmd_eval_classifier(&need(dataset, "--dataset")?, &need(model, "--model")?)
                }
                EvalMode::Detection => cmd_eval_detection(
                    &need(detections, "--detections")?,
                    &need(annotations, "--annotations")?,
                    &thresholds,
                    out.as_deref(),
                ),
            }
        }
        Command::LearningCurve {
            train,
            val,
            test,
            lambdas,
            out,
        } => {
            cfg.validate()?;
            cmd_learning_curve(&train, &val, &test, &lambdas, out.as_deref(), &cfg)
        }
        Command::Synth {
            out,
            count,
            crops,
            size,
        } => {
            let params = synth::SynthParams {
                width: size,
                height: size,
                ..Default::default()
            };
            if size < 80 {
                return Err(Error::InvalidParameter("--size must be >= 80".into()));
            }
            let corpus = synth::generate_corpus(count, &params, cfg.seed);
            synth::write_corpus(&out, &corpus)?;
            if crops > 0 {
                let dir = out.join("crops");
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for i in 0..crops {
                    let c = synth::generate_crop(
                        &format!("crop_{i:03}.png"),
                        cfg.seed.wrapping_add(i as u64),
                    );
                    crate::imagecore::save_png(&c.image, dir.join(&c.id))?;
                }
            }
            println!(
                "wrote {count} scenes and {crops} crops to {}",
                out.display()
            );
            Ok(())
        }
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "pgm" | "pnm" | "ppm" | "pbm")
    )
}

/// Files as given; directories expand to their image files in name order.
fn expand_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && is_image(f))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("image list"));
    }
    Ok(out)
}

fn report_failures(failures: &[(PathBuf, Error)]) {
    for (p, e) in failures {
        eprintln!("warning: skipped {}: {e}", p.display());
    }
}

fn cmd_build_vocab(
    images: &[PathBuf],
    out: &Path,
    dump: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let t = Instant::now();
    // no small-region rejection when collecting vocabulary descriptors
    let per_image: Vec<Result<Vec<f32>>> = images
        .par_iter()
        .map(|p| {
            let (img, _) = load_grayscale(p)?.limit_side(cfg.max_side);
            let mask = metal_mask(&img, cfg.metal_threshold, None)?;
            Ok(flatten(&phow_extract(&img, Some(&mask), &cfg.phow())?))
        })
        .collect();
    let mut data = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in images.iter().zip(per_image) {
        match r {
            Ok(d) => data.extend(d),
            Err(e) => failures.push((p.clone(), e)),
        }
    }
    report_failures(&failures);
    if failures.len() == images.len() {
        return Err(Error::InsufficientData("no readable images".into()));
    }
    let n = data.len() / crate::features::DESCRIPTOR_LEN;
    eprintln!("extraction: {:.2?} ({n} descriptors)", t.elapsed());
    if let Some(d) = dump {
        write_descriptor_dump(d, &data)?;
    }
    let t = Instant::now();
    let build = build_vocabulary(
        &data,
        crate::features::DESCRIPTOR_LEN,
        cfg.vocab_size,
        cfg.restarts,
        cfg.seed,
    )?;
    eprintln!("clustering: {:.2?}", t.elapsed());
    build.best.vocabulary.save(out, &cfg.to_toml())?;
    println!(
        "vocabulary {} words, cost {}, descriptors {n}",
        build.best.vocabulary.size(),
        build.best.cost
    );
    Ok(())
}

fn dataset_from_images(
    data: &DataArgs,
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<ProposalDataset> {
    let images = if data.images.is_empty() {
        Vec::new()
    } else {
        expand_images(&data.images)?
    };
    let crops = if data.crops.is_empty() {
        Vec::new()
    } else {
        expand_images(&data.crops)?
    };
    if images.is_empty() && crops.is_empty() {
        return Err(Error::InvalidParameter(
            "give --images and/or --crops".into(),
        ));
    }
    let anns = match &data.annotations {
        Some(p) => load_annotations(p)?,
        None if images.is_empty() => Vec::new(),
        None => {
            return Err(Error::InvalidParameter(
                "--images needs --annotations".into(),
            ))
        }
    };
    let t = Instant::now();
    let built = build_dataset(&images, &crops, &anns, vocab, cfg);
    eprintln!("dataset: {:.2?}", t.elapsed());
    report_failures(&built.failures);
    if built.failures.len() == images.len() + crops.len() {
        return Err(Error::InsufficientData("no readable images".into()));
    }
    let mut ds = built.dataset;
    if cfg.balance {
        ds.entries = balance(ds.entries, cfg.seed);
    }
    Ok(ds)
}

fn cmd_train(
    dataset: Option<&Path>,
    data: &DataArgs,
    vocab_path: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let (vocab, _) = Vocabulary::load(vocab_path)?;
    let ds = match dataset {
        Some(p) => {
            let (ds, _) = ProposalDataset::load(p)?;
            ds.check_vocab(&vocab)?;
            ds
        }
        None => dataset_from_images(data, &vocab, cfg)?,
    };
    println!(
        "training on {} positives, {} negatives",
        ds.positives(),
        ds.negatives()
    );
    let map = Chi2FeatureMap::new(cfg.kernel())?;
    let set = ds.to_labeled_set(&map)?;
    let t = Instant::now();
    let model =
        svm_train(&set, cfg.lambda, cfg.train_options())?.bind(cfg.kernel(), vocab.content_hash());
    eprintln!("training: {:.2?}", t.elapsed());
    model.save(out, &cfg.to_toml())?;
    println!("lambda {} bias {}", model.lambda, model.b);
    Ok(())
}

fn load_scored(dataset: &Path, model: &Path) -> Result<(ProposalDataset, SvmModel, Vec<f64>)> {
    let (ds, _) = ProposalDataset::load(dataset)?;
    let (model, _) = SvmModel::load(model)?;
    if ds.vocab_hash != model.vocab_hash {
        return Err(Error::ArtifactMismatch(
            "dataset and model use different vocabularies".into(),
        ));
    }
    let map = Chi2FeatureMap::new(model.kernel)?;
    let set = ds.to_labeled_set(&map)?;
    if set.dim() != model.dim() && !set.is_empty() {
        return Err(Error::ArtifactMismatch(format!(
            "dataset dimension {} does not match model dimension {}",
            set.dim(),
            model.dim()
        )));
    }
    let scores = score_set(&model, &set)?;
    Ok((ds, model, scores))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.4}"))
}

fn cmd_tune(
    dataset: &Path,
    model_path: &Path,
    out: &Path,
    curve_path: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let (ds, mut model, scores) = load_scored(dataset, model_path)?;
    let curve = pr_curve(&scores, &ds.labels())?;
    let best = select_threshold_max_f1(&curve)?;
    model.threshold = best.threshold;
    model.save(out, &cfg.to_toml())?;
    if let Some(p) = curve_path {
        std::fs::write(p, pr_curve_csv(&curve)).map_err(|e| Error::io(p, e))?;
    }
    println!(
        "threshold {} vpr {:.4} ppv {} f1 {:.4}",
        best.threshold,
        best.vpr,
        fmt_opt(best.ppv),
        best.f1
    );
    Ok(())
}

fn cmd_eval_classifier(dataset: &Path, model_path: &Path) -> Result<()> {
    let (ds, model, scores) = load_scored(dataset, model_path)?;
    let m = classification_metrics(&predict_at(&scores, model.threshold), &ds.labels())?;
    println!(
        "vpr {} ppv {} f1 {:.4} error {:.4}",
        fmt_opt(m.vpr),
        fmt_opt(m.ppv),
        m.f1,
        m.error
    );
    Ok(())
}

fn cmd_detect(
    images: &[PathBuf],
    model_path: &Path,
    vocab_path: &Path,
    out: &Path,
    overlay_dir: Option<&Path>,
    annotations: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let (vocab, _) = Vocabulary::load(vocab_path)?;
    let (model, _) = SvmModel::load(model_path)?;
    let det = Detector::new(vocab, model, cfg.clone())?;
    let anns = match annotations {
        Some(p) => load_annotations(p)?,
        None => Vec::new(),
    };
    let by_image = annotations_by_image(&anns);
    if let Some(d) = overlay_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let results: Vec<Result<crate::detect::DetectionReport>> = images
        .par_iter()
        .map(|p| {
            let id = image_id_of(p);
            let img = load_grayscale(p)?;
            let report = det.detect(&id, &img)?;
            if let Some(d) = overlay_dir {
                let gts = by_image.get(id.as_str()).map_or(&[][..], |v| &v[..]);
                let fused = report.detection.as_ref().map(|d| d.bbox);
                save_overlay(
                    &img,
                    gts,
                    fused.as_ref(),
                    d.join(format!("{id}.overlay.png")),
                )?;
            }
            Ok(report)
        })
        .collect();

    let mut records = Vec::new();
    let mut total = StageTimings::default();
    let mut failures = 0;
    for (p, r) in images.iter().zip(results) {
        match r {
            Ok(rep) => {
                total.add(&rep.timings);
                records.push(DetectionRecord::new(&rep.image_id, rep.detection.as_ref()));
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: {}: {e}", p.display());
            }
        }
    }
    if failures == images.len() {
        return Err(Error::InsufficientData(
            "detection failed on every image".into(),
        ));
    }
    write_detections_jsonl(out, &records)?;
    for (stage, d) in total.stages() {
        eprintln!("{stage}: {d:.2?}");
    }
    let found = records.iter().filter(|r| r.bbox().is_some()).count();
    println!("{found} detections in {} images", records.len());
    Ok(())
}

fn cmd_eval_proposals(
    images: &[PathBuf],
    annotations: &Path,
    ks: &[f64],
    thresholds: &[f64],
    out: Option<&Path>,
    dump: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let all = load_annotations(annotations)?;
    let ks = if ks.is_empty() {
        vec![cfg.ss_k]
    } else {
        ks.to_vec()
    };
    let loaded: Vec<(String, crate::imagecore::GrayImage, f64, usize, usize)> = images
        .par_iter()
        .map(|p| {
            let img = load_grayscale(p)?;
            let (work, scale) = img.limit_side(cfg.max_side);
            Ok((image_id_of(p), work, scale, img.width(), img.height()))
        })
        .collect::<Result<_>>()?;
    let anns = restrict(all, loaded.iter().map(|l| l.0.as_str()));
    if let Some(d) = dump {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut csv = String::from("k,threshold,hit_rate,mean_best_overlap,mean_proposals\n");
    for &k in &ks {
        let mut params = cfg.search();
        params.k = k;
        let t = Instant::now();
        let boxes: Vec<(String, Vec<BoundingBox>)> = loaded
            .par_iter()
            .map(|(id, img, scale, w, h)| {
                let bs = selective_search(img, &params)?;
                Ok((
                    id.clone(),
                    bs.iter().map(|b| b.rescale(*scale, *w, *h)).collect(),
                ))
            })
            .collect::<Result<_>>()?;
        eprintln!("proposals k={k}: {:.2?}", t.elapsed());
        if let Some(d) = dump {
            for (id, bs) in &boxes {
                write_proposals_csv(d.join(format!("{id}.k{k}.csv")), bs)?;
            }
        }
        let mean_props =
            boxes.iter().map(|b| b.1.len()).sum::<usize>() as f64 / boxes.len().max(1) as f64;
        let map: BTreeMap<String, Vec<BoundingBox>> = boxes.into_iter().collect();
        let mbo = mean_best_overlap(&map, &anns)?;
        for &th in thresholds {
            let hr = hit_rate(&map, &anns, th)?;
            csv.push_str(&format!("{k},{th},{hr},{mbo},{mean_props}\n"));
            println!("k {k} threshold {th} hit_rate {hr:.4} mean_best_overlap {mbo:.4} proposals {mean_props:.1}");
        }
    }
    if let Some(p) = out {
        std::fs::write(p, csv).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Annotations of the evaluated images only.
fn restrict<'a>(anns: Vec<Annotation>, ids: impl Iterator<Item = &'a str>) -> Vec<Annotation> {
    let ids: std::collections::BTreeSet<&str> = ids.collect();
    anns.into_iter()
        .filter(|a| ids.contains(a.image_id.as_str()))
        .collect()
}

fn cmd_eval_detection(
    detections: &Path,
    annotations: &Path,
    thresholds: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    let records = crate::detect::read_detection_records(detections)?;
    let anns = restrict(
        load_annotations(annotations)?,
        records.iter().map(|r| r.image.as_str()),
    );
    let dets: BTreeMap<String, BoundingBox> = records
        .iter()
        .filter_map(|r| r.bbox().map(|b| (r.image.clone(), b)))
        .collect();
    let mut csv = String::from("threshold,localization_rate\n");
    for &th in thresholds {
        let r = localization_rate(&dets, &anns, th)?;
        csv.push_str(&format!("{th},{r}\n"));
        println!("threshold {th} localization_rate {r:.4}");
    }
    if let Some(p) = out {
        std::fs::write(p, csv).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_learning_curve(
    train: &Path,
    val: &Path,
    test: &Path,
    lambdas: &[f64],
    out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let load = |p: &Path| -> Result<ProposalDataset> { Ok(ProposalDataset::load(p)?.0) };
    let (tr, va, te) = (load(train)?, load(val)?, load(test)?);
    if tr.vocab_hash != va.vocab_hash || tr.vocab_hash != te.vocab_hash {
        return Err(Error::ArtifactMismatch(
            "datasets use different vocabularies".into(),
        ));
    }
    let map = Chi2FeatureMap::new(cfg.kernel())?;
    let curve = learning_curve(
        &tr.to_labeled_set(&map)?,
        &va.to_labeled_set(&map)?,
        &te.to_labeled_set(&map)?,
        lambdas,
        cfg.train_options(),
    )?;
    for p in &curve.points {
        println!(
            "lambda {} val_error {:.4} test_error {:.4}",
            p.lambda, p.val_error, p.test_error
        );
    }
    if let Some(p) = out {
        std::fs::write(p, learning_curve_csv(&curve)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
