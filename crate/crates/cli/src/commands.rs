//! The subcommands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use hc2_core::backbone::{infer, ModelShape, Sample};
use hc2_core::data::csv::{TEST_FILE, TRAIN_FILE};
use hc2_core::data::{load_csv, load_dir, synth_generate, write_dir, Dataset};
use hc2_core::train::{
    evaluate, final_mean_auc, final_rows, load_model, save_model, train as run_training,
    write_metrics, Diagnostics, SavedModel, TrainOutput, SWEEP,
};
use hc2_core::{Error, Result, RngStream};
use rand::seq::index;
use sha2::{Digest, Sha256};

use crate::args::{resolve, AblateArgs, DumpArgs, EvalArgs, FilePaths, SynthArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.config()?;
    let data = synth_generate(&cfg)?;
    create_dir(&a.out)?;
    write_dir(&a.out, &data)?;
    let mut m = create(&a.out.join(MANIFEST_FILE))?;
    writeln!(m, "command = synth")?;
    writeln!(m, "k = {}", a.k)?;
    writeln!(m, "fields = {}", a.fields)?;
    writeln!(m, "vocab = {}", a.vocab)?;
    writeln!(m, "samples = {}", a.samples)?;
    writeln!(m, "sparse = {}", a.sparse)?;
    writeln!(m, "sparse-fraction = {}", a.sparse_fraction)?;
    writeln!(m, "a-shared = {}", a.a_shared)?;
    writeln!(m, "a-spec = {}", a.a_spec)?;
    writeln!(m, "noise = {}", a.noise)?;
    writeln!(m, "seed = {}", a.seed)?;
    let counts: Vec<String> = cfg.counts.iter().map(usize::to_string).collect();
    writeln!(m, "counts = {}", counts.join(","))?;
    writeln!(
        m,
        "train-sha256 = {}",
        sha256_file(&a.out.join(TRAIN_FILE))?
    )?;
    writeln!(m, "test-sha256 = {}", sha256_file(&a.out.join(TEST_FILE))?)?;
    m.flush()?;
    Ok(())
}

fn require(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(file)
        .ok_or_else(|| Error::Config(format!("--{name} is required (flag or config key)")))
}

/// Loads the dataset and its checksums, warning when they differ from the
/// ones recorded in a reloaded manifest.
fn load_data(dir: &Path, paths: &FilePaths) -> Result<(Dataset, String, String)> {
    let data = load_dir(dir)?;
    let train = sha256_file(&dir.join(TRAIN_FILE))?;
    let test = sha256_file(&dir.join(TEST_FILE))?;
    for (want, got, file) in [
        (&paths.train_sha256, &train, TRAIN_FILE),
        (&paths.test_sha256, &test, TEST_FILE),
    ] {
        if want.as_ref().is_some_and(|w| w != got) {
            log::warn!("{file} differs from the one recorded in the config file");
        }
    }
    Ok((data, train, test))
}

fn write_diagnostics(path: &Path, rows: &[Diagnostics]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "epoch,uniformity,zero_norm")?;
    for d in rows {
        let u = d
            .uniformity
            .map_or_else(|| "nan".into(), |u| format!("{u:.6}"));
        writeln!(out, "{},{u},{}", d.epoch, d.zero_norm)?;
    }
    out.flush()?;
    Ok(())
}

fn write_run(dir: &Path, output: &TrainOutput) -> Result<()> {
    create_dir(dir)?;
    let mut m = create(&dir.join(METRICS_FILE))?;
    write_metrics(&mut m, &output.metrics)?;
    m.flush()?;
    write_diagnostics(&dir.join(DIAGNOSTICS_FILE), &output.diagnostics)
}

pub fn train(a: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let (cfg, paths) = resolve(&a.flags, m)?;
    let data_dir = require(a.data.clone(), paths.data.clone(), "data")?;
    let out = require(a.out.clone(), paths.out.clone(), "out")?;
    let (data, train_sha, test_sha) = load_data(&data_dir, &paths)?;
    let output = run_training(&data, &cfg)?;
    write_run(&out, &output)?;
    save_model(
        out.join(MODEL_FILE),
        &SavedModel {
            params: output.params.clone(),
            epochs_trained: cfg.epochs,
        },
    )?;
    let mut f = create(&out.join(MANIFEST_FILE))?;
    writeln!(f, "command = train")?;
    writeln!(f, "data = {}", data_dir.display())?;
    writeln!(f, "out = {}", out.display())?;
    write!(f, "{}", cfg.to_kv())?;
    writeln!(f, "train-sha256 = {train_sha}")?;
    writeln!(f, "test-sha256 = {test_sha}")?;
    writeln!(f, "metrics = {}", out.join(METRICS_FILE).display())?;
    writeln!(f, "model = {}", out.join(MODEL_FILE).display())?;
    writeln!(f, "diagnostics = {}", out.join(DIAGNOSTICS_FILE).display())?;
    f.flush()?;
    Ok(())
}

/// Rejects samples the model cannot score.
fn check_against(shape: &ModelShape, fields: usize, samples: &[Sample]) -> Result<()> {
    if fields != shape.fields() {
        return Err(Error::Data(format!(
            "data has {fields} fields, the model expects {}",
            shape.fields()
        )));
    }
    samples.iter().try_for_each(|s| shape.check_sample(s))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let table = load_csv(a.data.join(TEST_FILE))?;
    let shape = &model.params.shape;
    check_against(shape, table.schema.fields(), &table.samples)?;
    let ev = evaluate(&model.params, &table.samples, model.epochs_trained, None, 0)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    write_metrics(&mut out, &ev.rows)?;
    out.flush()?;
    Ok(())
}

pub fn dump_reprs(a: &DumpArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let file = if a.split == "train" {
        TRAIN_FILE
    } else {
        TEST_FILE
    };
    let table = load_csv(a.data.join(file))?;
    let shape = &model.params.shape;
    check_against(shape, table.schema.fields(), &table.samples)?;
    let n = table.samples.len();
    let picked: Vec<&Sample> = if n > a.limit {
        let mut rng = RngStream::new(a.seed, "dump");
        let mut idx = index::sample(&mut rng, n, a.limit).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &table.samples[i]).collect()
    } else {
        table.samples.iter().collect()
    };
    let width = shape.repr_width();
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let header: Vec<String> = (0..width).map(|i| format!("z{i}")).collect();
    writeln!(out, "scenario,label,{}", header.join(","))?;
    if !picked.is_empty() {
        let z = infer(&model.params, &picked)?.z;
        for (i, s) in picked.iter().enumerate() {
            let vals: Vec<String> = z.row(i).iter().map(f64::to_string).collect();
            writeln!(out, "{},{},{}", s.scenario, s.label, vals.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| format!("{v:.6}"))
}

pub fn ablate(a: &AblateArgs, m: &ArgMatches) -> Result<()> {
    let (base, paths) = resolve(&a.flags, m)?;
    let data_dir = require(a.data.clone(), paths.data.clone(), "data")?;
    let out = require(a.out.clone(), paths.out.clone(), "out")?;
    if a.seeds.is_empty() {
        return Err(Error::Config("--seeds needs at least one seed".into()));
    }
    let (data, _, _) = load_data(&data_dir, &paths)?;
    let k = data.schema.scenarios;
    create_dir(&out)?;
    let mut summary = create(&out.join("summary.csv"))?;
    let per_k: Vec<String> = (0..k).map(|i| format!(",auc_{i}")).collect();
    writeln!(
        summary,
        "variant,seed,mean_auc,pooled_auc,uniformity{}",
        per_k.concat()
    )?;
    let mut table: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
    for (name, apply) in SWEEP {
        let mut means = Vec::new();
        for &seed in &a.seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            apply(&mut cfg);
            log::info!("ablate: {name} seed {seed}");
            let output = run_training(&data, &cfg)?;
            write_run(&out.join(name).join(format!("seed-{seed}")), &output)?;
            let rows = final_rows(&output.metrics);
            let mean = final_mean_auc(&output.metrics);
            let pooled = rows.last().and_then(|r| r.auc);
            let u = output.diagnostics.last().and_then(|d| d.uniformity);
            let scen: Vec<String> = rows[..k]
                .iter()
                .map(|r| format!(",{}", fmt(r.auc)))
                .collect();
            writeln!(
                summary,
                "{name},{seed},{},{},{}{}",
                fmt(mean),
                fmt(pooled),
                fmt(u),
                scen.concat()
            )?;
            means.push(mean);
        }
        table.push((name, means));
    }
    summary.flush()?;
    let full = table[0].1.clone();
    println!("variant,mean_auc,seeds_full_at_least_as_good");
    for (name, means) in &table {
        let vals: Vec<f64> = means.iter().flatten().copied().collect();
        let avg = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let wins = full
            .iter()
            .zip(means)
            .filter(|(f, v)| matches!((f, v), (Some(f), Some(v)) if f >= v))
            .count();
        println!("{name},{},{wins}/{}", fmt(avg), a.seeds.len());
    }
    Ok(())
}
