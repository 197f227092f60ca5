use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use texgen::attributes::{attribute_index, AttributeVector, ATTRIBUTE_NAMES, NUM_ATTRIBUTES};
use texgen::checkpoint::Checkpoint;
use texgen::dataset::{build_dataset, import_folder, Dataset};
use texgen::gan::{gan_curve_csv, gan_train, GanData, Generator};
use texgen::init::{init_report, InitReportRow, LayerInit};
use texgen::perceptual::{curve_csv, train_perceptual, PerceptualData, PerceptualModel};
use texgen_cli::config::RunConfig;
use texgen_cli::imaging::png_bytes;
use texgen_cli::record::RunRecord;
use texgen_cli::service::{self, Models};

#[derive(Parser)]
#[command(name = "texgen", version, about = "Perception-driven texture generation")]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the perceptual model on a saved dataset.
    TrainPerceptual {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train generator and discriminator against a frozen perceptual model.
    TrainGan {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        perceptual: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Write PNG textures for one scaled attribute vector.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON: an array of 12 scaled values or an object keyed by name.
        #[arg(long)]
        attributes: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Perceptual model loss on both splits of a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        perceptual: PathBuf,
    },
    /// Initialization table for an architecture.
    InitReport {
        #[arg(long, value_enum)]
        arch: Arch,
    },
    /// Serve the generation API.
    Serve {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        perceptual: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Synthesize textures, or import a folder with `--images` and `--csv`.
    Build {
        #[arg(long, requires = "csv")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Gan,
    Perceptual,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AttributesFile {
    List(Vec<f64>),
    Named(std::collections::BTreeMap<String, f64>),
}

fn read_attributes(path: &Path) -> Result<AttributeVector> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed: AttributesFile =
        serde_json::from_str(&text).with_context(|| format!("parsing attributes in {}", path.display()))?;
    let y = match parsed {
        AttributesFile::List(v) => AttributeVector::from_slice(&v)?,
        AttributesFile::Named(map) => {
            let mut y = AttributeVector::zeros();
            for (name, v) in map {
                let i = attribute_index(&name).with_context(|| format!("unknown attribute `{name}`"))?;
                y.0[i] = v;
            }
            y
        }
    };
    y.check_scaled()?;
    Ok(y)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_perceptual(path: &Path, record: &mut RunRecord) -> Result<PerceptualModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    record.uses(path)?;
    Ok(PerceptualModel::from_checkpoint(&ck)?)
}

fn load_generator(path: &Path, record: &mut RunRecord) -> Result<Generator> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    record.uses(path)?;
    Ok(Generator::from_checkpoint(&ck)?)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn print_init_table(rows: &[InitReportRow]) {
    println!(
        "{:<12} {:<9} {:<8} {:>10} {:>11} {:>11} {:>11}",
        "layer", "principle", "act", "n", "target_std", "sample_std", "realized"
    );
    for r in rows {
        println!(
            "{:<12} {:<9} {:<8} {:>10} {:>11.6} {:>11.6} {:>11.6}",
            r.layer,
            format!("{:?}", r.principle).to_lowercase(),
            format!("{:?}", r.activation).to_lowercase(),
            r.n,
            r.target_std,
            r.sampling_std,
            r.realized_std
        );
    }
}

#[derive(Serialize)]
struct GenerateManifest<'a> {
    checkpoint: &'a Path,
    checkpoint_hash: String,
    attributes: &'a AttributeVector,
    attribute_names: [&'static str; NUM_ATTRIBUTES],
    seed: u64,
    files: Vec<String>,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    if let Command::TrainGan { alpha, iterations, .. } = &cli.command {
        if let Some(a) = alpha {
            config.alpha = *a;
        }
        if let Some(n) = iterations {
            config.gan_iterations = *n;
        }
    }
    log::info!("resolved config:\n{}", config.to_toml()?);
    let out = config.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut record = match &cli.command {
        Command::Dataset(_) => RunRecord::new("dataset build", &config),
        Command::TrainPerceptual { .. } => RunRecord::new("train-perceptual", &config),
        Command::TrainGan { .. } => RunRecord::new("train-gan", &config),
        Command::Generate { .. } => RunRecord::new("generate", &config),
        Command::Eval { .. } => RunRecord::new("eval", &config),
        Command::InitReport { .. } => RunRecord::new("init-report", &config),
        Command::Serve { .. } => RunRecord::new("serve", &config),
    };

    match cli.command {
        Command::Dataset(DatasetCommand::Build { images, csv }) => {
            let ds_config = config.dataset();
            let mut ds = match (images, csv) {
                (Some(images), Some(csv)) => import_folder(&images, &csv, &ds_config)?,
                _ => build_dataset(&ds_config)?,
            };
            ds.materialize()?;
            ds.save(&out)?;
            println!("{} samples written to {}", ds.len(), out.display());
        }
        Command::TrainPerceptual { dataset } => {
            let ds = load_dataset(&dataset)?;
            let stats = ds.stats()?.clone();
            let data = PerceptualData::from_dataset(&ds, &stats)?;
            let outcome = train_perceptual(&data, &config.perceptual_arch(), &stats, &config.perceptual())?;
            let ck = out.join("perceptual.ckpt");
            outcome.model.to_checkpoint(Some(outcome.best_iteration as u64))?.save(&ck)?;
            write(&out.join("perceptual-curve.csv"), curve_csv(&outcome.curve))?;
            let reports = [
                outcome.model.evaluate("train", &data.train_x, &data.train_y)?,
                outcome.model.evaluate("validation", &data.val_x, &data.val_y)?,
            ];
            write(&out.join("perceptual-eval.json"), serde_json::to_vec_pretty(&reports)?)?;
            println!(
                "best validation loss {:.5} (sigma {:.4}) at iteration {}; checkpoint {}",
                outcome.best_val_loss,
                reports[1].sigma,
                outcome.best_iteration,
                ck.display()
            );
        }
        Command::TrainGan { dataset, perceptual, .. } => {
            let h = load_perceptual(&perceptual, &mut record)?;
            let data = GanData::from_dataset(&load_dataset(&dataset)?)?;
            let outcome = gan_train(&data, &h, &config.gan(), Some(&out.join("checkpoints")))?;
            if outcome.h_fingerprint.0 != outcome.h_fingerprint.1 {
                bail!("perceptual model parameters changed during adversarial training");
            }
            let stats = &outcome.generator.stats;
            let iters = Some(config.gan_iterations as u64);
            outcome.generator.to_checkpoint(iters)?.save(&out.join("generator.ckpt"))?;
            outcome
                .discriminator
                .to_checkpoint(stats, iters)?
                .save(&out.join("discriminator.ckpt"))?;
            write(&out.join("gan-curve.csv"), gan_curve_csv(&outcome.curve))?;
            if let Some(last) = outcome.curve.last() {
                println!(
                    "final D_loss {:.4}, G_loss_d {:.4}, G_loss_h {:.4}",
                    last.d_loss, last.g_loss_d, last.g_loss_h
                );
            }
        }
        Command::Generate {
            checkpoint,
            attributes,
            count,
        } => {
            if count == 0 {
                bail!("--count must be positive");
            }
            let gen = load_generator(&checkpoint, &mut record)?;
            let y = read_attributes(&attributes)?;
            let images = gen.generate(&y, &gen.noise(config.seed, count))?;
            let mut files = Vec::with_capacity(count);
            for i in 0..count {
                let name = format!("texture-{i:03}.png");
                write(&out.join(&name), png_bytes(&images.slice_batch(i, i + 1))?)?;
                files.push(name);
            }
            let manifest = GenerateManifest {
                checkpoint: &checkpoint,
                checkpoint_hash: record.checkpoints[0].hash.clone(),
                attributes: &y,
                attribute_names: ATTRIBUTE_NAMES,
                seed: config.seed,
                files,
            };
            write(&out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
            println!("{count} textures written to {}", out.display());
        }
        Command::Eval { dataset, perceptual } => {
            let h = load_perceptual(&perceptual, &mut record)?;
            let ds = load_dataset(&dataset)?;
            if ds.stats()? != &h.stats {
                bail!("dataset and perceptual model use different attribute statistics");
            }
            let data = PerceptualData::from_dataset(&ds, &h.stats)?;
            let reports = [
                h.evaluate("train", &data.train_x, &data.train_y)?,
                h.evaluate("validation", &data.val_x, &data.val_y)?,
            ];
            for r in &reports {
                println!("{:<10} loss {:.5}  sigma {:.4}  ({} samples)", r.split, r.loss, r.sigma, r.samples);
            }
            write(&out.join("eval.json"), serde_json::to_vec_pretty(&reports)?)?;
        }
        Command::InitReport { arch } => {
            let layers: Vec<LayerInit> = match arch {
                Arch::Gan => {
                    let gan = config.gan();
                    gan.validate()?;
                    let mut l = gan.generator_layers();
                    l.extend(gan.discriminator_layers());
                    l
                }
                Arch::Perceptual => config.perceptual_arch().layers()?,
            };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
            let rows = init_report(&layers, &mut rng)?;
            print_init_table(&rows);
            write(&out.join("init-report.json"), serde_json::to_vec_pretty(&rows)?)?;
        }
        Command::Serve {
            generator,
            perceptual,
            bind,
        } => {
            let mut models = Models::default();
            if let Some(path) = generator {
                models.generator = Some(load_generator(&path, &mut record)?);
                models.ids.insert("generator".into(), record.checkpoints.last().expect("just added").hash.clone());
            }
            if let Some(path) = perceptual {
                models.perceptual = Some(load_perceptual(&path, &mut record)?);
                models.ids.insert("perceptual".into(), record.checkpoints.last().expect("just added").hash.clone());
            }
            if let (Some(g), Some(h)) = (&models.generator, &models.perceptual) {
                if g.stats != h.stats {
                    bail!("generator and perceptual model use different attribute statistics");
                }
            }
            record.write(&out)?;
            let runtime = tokio::runtime::Runtime::new()?;
            return runtime.block_on(service::serve(models, &bind));
        }
    }
    record.write(&out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
