use std::fs;
use std::time::Instant;

use phunet::checkpoint::Checkpoint;
use phunet::data::dataset::{load_pairs, read_manifest};
use phunet::train::{history_jsonl, TrainConfig, TrainPair, Trainer};
use phunet::Error;

use crate::manifest::{create_dir, write_file, RunManifest};
use crate::{CliError, CliResult, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";

/// File config (or desk defaults for the dataset's size), then flags.
fn resolve_config(a: &TrainArgs, size: usize, resume: Option<&Checkpoint>) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Path {
                path: path.clone(),
                source,
            })?;
            TrainConfig::from_toml(&text)?
        }
        None => {
            let mut c = TrainConfig::desk(size);
            if let Some(ck) = resume {
                c.model = ck.params.config.clone();
            }
            c
        }
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    if cfg.image_size != size {
        return Err(CliError::Usage(format!(
            "config image_size {} does not match the {size}x{size} dataset",
            cfg.image_size
        )));
    }
    Ok(cfg)
}

pub(crate) fn run(a: &TrainArgs, argv: Vec<String>) -> CliResult<()> {
    let t0 = Instant::now();
    let size = read_manifest(&a.data)?.size;
    let resume = a.resume.as_deref().map(Checkpoint::read).transpose()?;
    let cfg = resolve_config(a, size, resume.as_ref())?;
    let mut m = RunManifest::new(
        "train",
        argv,
        Some(cfg.seed),
        serde_json::to_value(&cfg).map_err(Error::from)?,
    );
    m.inputs.push(a.data.clone());
    m.inputs.extend(a.config.clone());
    m.inputs.extend(a.resume.clone());

    let pairs = m.time("load", || -> CliResult<Vec<TrainPair>> {
        let stored = load_pairs(&a.data)?;
        Ok(stored
            .iter()
            .map(|p| TrainPair::normalized(&p.x, &p.y))
            .collect::<phunet::Result<_>>()?)
    })?;
    log::info!(
        "{} pairs, {} epochs, batch {}, lr {}, {:?}",
        pairs.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.precision
    );

    create_dir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let hist_path = a.out.join(HISTORY_FILE);
    let mut trainer = match resume {
        Some(ck) => {
            log::info!("resuming after epoch {}", ck.epoch);
            Trainer::resume(cfg.clone(), ck)?
        }
        None => Trainer::new(cfg.clone())?,
    };
    let start_epoch = trainer.epoch;
    let mut last = Instant::now();
    m.time("train", || {
        trainer.run(&pairs, Some(&ck_path), |t, r| {
            write_file(&hist_path, history_jsonl(&t.history)?)?;
            log::info!(
                "epoch {}/{} total {:.6} kl {:.6} sparsity {:.6} tv {:.6} mse {:.6} ({:.1} s)",
                r.epoch,
                t.config.epochs,
                r.total,
                r.kl,
                r.sparsity,
                r.tv,
                r.mse,
                last.elapsed().as_secs_f64()
            );
            last = Instant::now();
            Ok(())
        })
    })?;
    // A resumed run that was already complete still leaves both files behind.
    if trainer.epoch == start_epoch {
        trainer.checkpoint().write(&ck_path)?;
        write_file(&hist_path, history_jsonl(&trainer.history)?)?;
    }
    m.outputs.extend([ck_path, hist_path]);
    m.record("total", t0);
    m.write(&a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}
