//! `segnet` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration problem, 2 data or file
//! format problem, 3 training divergence or a failed verification suite.

mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use segnet::architectures::{describe, Model};
use segnet::datakit::{netpbm, read_dataset, synth_dataset, write_dataset, SceneSpec, Split, Task};
use segnet::engine::{evaluate, load_checkpoint, predict_scene, save_checkpoint, Trainer};
use segnet::objectives::diff_map;
use segnet::tensor::tnsr;
use segnet::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "segnet", version, about = "Semantic segmentation of remote-sensing rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with an 80:20 train/validation split.
    Synth {
        /// buildings, ships_optical, ships_sar, trees or multilabel
        #[arg(long)]
        task: String,
        /// Number of scenes (at least 2).
        #[arg(long)]
        count: usize,
        /// Scene side length in pixels.
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.segc and history.csv into out_dir.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Suppress the per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Print the metrics report of a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// train or validation
        #[arg(long, default_value = "validation")]
        split: String,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        /// Print one key=value line per figure instead of a table.
        #[arg(long)]
        machine: bool,
    },
    /// Predict a class mask for an image of any size at least one tile.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// PGM or PPM image.
        #[arg(long)]
        input: PathBuf,
        /// Output mask PGM (gray value = class id).
        #[arg(long)]
        out: PathBuf,
        /// Pixels shared by neighbouring tiles.
        #[arg(long, default_value_t = 0)]
        overlap: usize,
        /// Also write the stitched [H,W,classes] probabilities as TNSR.
        #[arg(long)]
        probs: Option<PathBuf>,
    },
    /// Write the ground-truth difference map: 0 where masks agree, 255 elsewhere.
    Diff {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the layer-by-layer shape plan of the configured model.
    Describe {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a built-in verification suite.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Gradcheck,
    Oracles,
    All,
}

/// A config file plus one override flag per config key.
#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic task the data comes from [default: buildings]
    #[arg(long)]
    task: Option<String>,
    /// modified_unet or vgg_unet [default: modified_unet]
    #[arg(long)]
    model: Option<String>,
    /// Square tile side [default: 512]
    #[arg(long)]
    input_size: Option<String>,
    /// [default: 3 for multilabel, else 1]
    #[arg(long)]
    input_channels: Option<String>,
    /// [default: 5 for multilabel, else 2]
    #[arg(long)]
    num_classes: Option<String>,
    /// Scales every layer width [default: 1.0]
    #[arg(long)]
    width_multiplier: Option<String>,
    /// Bottleneck dropout rate [default: 0.5]
    #[arg(long)]
    dropout: Option<String>,
    /// binary_ce or categorical_ce [default: binary_ce for 2 classes]
    #[arg(long)]
    loss: Option<String>,
    /// [default: 120]
    #[arg(long)]
    epochs: Option<String>,
    /// [default: 4]
    #[arg(long)]
    batch_size: Option<String>,
    /// Adam step size [default: 0.001]
    #[arg(long)]
    lr: Option<String>,
    /// [default: 0.9]
    #[arg(long)]
    beta1: Option<String>,
    /// [default: 0.999]
    #[arg(long)]
    beta2: Option<String>,
    /// [default: 1e-8]
    #[arg(long)]
    epsilon: Option<String>,
    /// Seeds initialization, shuffling and dropout [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// Dataset directory written by `synth`
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Directory for model.segc and history.csv
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let strings = [
            ("task", &self.task),
            ("model", &self.model),
            ("input_size", &self.input_size),
            ("input_channels", &self.input_channels),
            ("num_classes", &self.num_classes),
            ("width_multiplier", &self.width_multiplier),
            ("dropout", &self.dropout),
            ("loss", &self.loss),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
        ];
        for (key, value) in strings {
            if let Some(v) = value {
                cfg.set(key, v.clone());
            }
        }
        for (key, value) in [("data_root", &self.data_root), ("out_dir", &self.out_dir)] {
            if let Some(v) = value {
                cfg.set(key, v.display().to_string());
            }
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Divergence { .. } => 3,
        Error::Dimension(_)
        | Error::State(_)
        | Error::Label(_)
        | Error::Format { .. }
        | Error::Coverage(_)
        | Error::Io(_) => 2,
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Synth { task, count, size, seed, out } => {
            let task: Task = task.parse()?;
            if count < 2 {
                return Err(Error::Usage(format!("--count must be at least 2 to split, got {}", count)));
            }
            let set = synth_dataset(&SceneSpec::new(task, size, seed), count)?;
            write_dataset(&out, &set)?;
            println!(
                "wrote {} scenes ({} train, {} validation) to {}",
                set.len(),
                set.train().len(),
                set.validation().len(),
                out.display()
            );
        }
        Command::Train { run, resume, quiet } => train(&run, resume.as_deref(), quiet)?,
        Command::Eval { model, data, split, batch_size, machine } => {
            let split = Split::parse(&split)
                .ok_or_else(|| Error::Usage(format!("unknown split '{}' (expected train or validation)", split)))?;
            let model = load_model(&model)?;
            let set = read_dataset(&data)?;
            let scenes = set.part(split);
            let (_, report) = evaluate(&model, &scenes, model.spec().num_classes, batch_size)?;
            if machine {
                print!("{}", report.to_machine());
            } else {
                println!("{} scenes, {} split", scenes.len(), split.name());
                println!("{}", report);
            }
        }
        Command::Predict { model, input, out, overlap, probs } => {
            let model = load_model(&model)?;
            let image = netpbm::read(&input)?;
            let p = predict_scene(&model, &image, overlap)?;
            netpbm::write_mask(&out, &p.mask)?;
            if let Some(path) = probs {
                tnsr::write(path, &p.probs)?;
            }
        }
        Command::Diff { pred, gt, out } => {
            let (p, g) = (netpbm::read_mask(&pred)?, netpbm::read_mask(&gt)?);
            let d = diff_map(&p, &g)?;
            let [_, h, w] = p.shape();
            let wrong = d.data().iter().filter(|&&v| v != 0).count();
            netpbm::write(&out, &d.reshape(&[h, w, 1])?)?;
            println!("{} of {} pixels differ", wrong, h * w);
        }
        Command::Describe { run } => {
            let r = run.load()?.resolve(&[])?;
            print!("{}", describe(&r.spec)?);
        }
        Command::Verify { suite } => {
            let mut checks = vec![];
            if suite != Suite::Oracles {
                checks.extend(verify::gradcheck_suite()?);
            }
            if suite != Suite::Gradcheck {
                checks.extend(verify::oracle_suite()?);
            }
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            println!("{} checks, {} failed", checks.len(), failed);
            return Ok(if failed == 0 { 0 } else { 3 });
        }
    }
    Ok(0)
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    let ckpt = load_checkpoint(path)?;
    let mut model = Model::build(&ckpt.spec)?;
    model.load_state(ckpt.params, ckpt.bn)?;
    Ok(model)
}

fn train(run: &RunArgs, resume: Option<&Path>, quiet: bool) -> Result<()> {
    let r = run.load()?.resolve(&["task", "model", "input_size", "data_root", "out_dir"])?;
    let (data_root, out_dir) = (r.data_root.unwrap(), r.out_dir.unwrap());
    let data = read_dataset(&data_root)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.spec != r.spec {
                return Err(Error::Config("checkpoint was trained with a different model configuration".into()));
            }
            Trainer::resume(ckpt, r.train)?
        }
        None => Trainer::new(Model::build(&r.spec)?, r.train)?,
    };
    std::fs::create_dir_all(&out_dir)?;
    let epochs = trainer.config().epochs;
    trainer.run(&data, |e| {
        if !quiet {
            println!(
                "epoch {:>3}/{}  loss {:.5}  train acc {:.4} mIoU {:.4}  val acc {:.4} mIoU {:.4}  {:.1}s",
                e.epoch, epochs, e.loss, e.train_acc, e.train_miou, e.val_acc, e.val_miou, e.seconds
            );
        }
    })?;
    save_checkpoint(out_dir.join("model.segc"), &trainer.checkpoint())?;
    std::fs::write(out_dir.join("history.csv"), trainer.history.to_csv())?;
    println!("wrote {}", out_dir.join("model.segc").display());
    Ok(())
}
