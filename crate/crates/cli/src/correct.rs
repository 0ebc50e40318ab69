use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use phunet::checkpoint::Checkpoint;
use phunet::data::dataset::{item_seed, list_files};
use phunet::data::{read_volume, write_volume, Volume};
use phunet::model::{Correction, Corrector};
use phunet::{Error, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::manifest::{create_dir, RunManifest, StageTiming, VolumeTiming};
use crate::{CliError, CliResult, CorrectArgs};

pub const CORRECTED_DIR: &str = "corrected";
pub const FIELD_DIR: &str = "field";

/// Volumes named by `--in`: the file itself, the `x/` inputs of a dataset
/// directory, or every `.f32` and `.nii` file of a plain directory.
fn discover(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::Path {
            path: input.into(),
            source: std::io::ErrorKind::NotFound.into(),
        }
        .into());
    }
    let dir = if input.join("manifest.json").is_file() && input.join("x").is_dir() {
        input.join("x")
    } else {
        input.to_path_buf()
    };
    let mut files = list_files(&dir, "f32")?;
    files.extend(list_files(&dir, "nii")?);
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .f32 or .nii volumes in {}", dir.display())));
    }
    Ok(files)
}

type SliceResult = phunet::Result<(Correction, f64)>;

/// Corrects every slice on `jobs` threads; results come back in slice order.
fn correct_slices(
    corrector: &Corrector,
    slices: &[Image],
    samples: usize,
    seed: u64,
    jobs: usize,
) -> CliResult<Vec<(Correction, f64)>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SliceResult>>> = Mutex::new((0..slices.len()).map(|_| None).collect());
    let work = || loop {
        let z = next.fetch_add(1, Ordering::Relaxed);
        if z >= slices.len() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, z as u64));
        let t0 = Instant::now();
        let r = corrector
            .correct(&slices[z], &mut rng, samples)
            .map(|c| (c, t0.elapsed().as_secs_f64() * 1e3));
        results.lock().expect("no worker panicked")[z] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.min(slices.len()) {
            s.spawn(work);
        }
        work();
    });
    let out = results.into_inner().expect("no worker panicked");
    Ok(out
        .into_iter()
        .map(|r| r.expect("every slice claimed"))
        .collect::<phunet::Result<_>>()?)
}

fn volume_like(template: &Volume, slices: &[Image]) -> phunet::Result<Volume> {
    let mut v = Volume::from_slices(slices)?;
    v.pixdim = template.pixdim;
    Ok(v)
}

pub(crate) fn run(a: &CorrectArgs, argv: Vec<String>) -> CliResult<()> {
    let t0 = Instant::now();
    let files = discover(&a.input)?;
    let ck = Checkpoint::read(&a.model)?;
    let config = json!({
        "model": ck.params.config,
        "trained_epochs": ck.epoch,
        "samples": a.samples,
        "precision": a.precision,
        "jobs": a.jobs,
    });
    let mut m = RunManifest::new("correct", argv, Some(a.seed), config);
    m.inputs.push(a.model.clone());
    let corrector = m.time("prepare", || Corrector::new(&ck.params, a.precision));
    drop(ck);

    let corrected_dir = a.out.join(CORRECTED_DIR);
    let field_dir = a.out.join(FIELD_DIR);
    create_dir(&corrected_dir)?;
    create_dir(&field_dir)?;

    let (mut read_t, mut correct_t, mut write_t) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    for (fi, path) in files.iter().enumerate() {
        let t = Instant::now();
        let vol = read_volume(path)?;
        let slices = vol.slices()?;
        read_t += t.elapsed();

        let t = Instant::now();
        let base = item_seed(a.seed, fi as u64);
        let results = correct_slices(&corrector, &slices, a.samples, base, a.jobs as usize)?;
        let elapsed = t.elapsed();
        correct_t += elapsed;

        let t = Instant::now();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
        let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("f32");
        let fields: Vec<Image> = results.iter().map(|(c, _)| c.field.image().clone()).collect();
        let field_path = field_dir.join(format!("{stem}.{ext}"));
        write_volume(&field_path, &volume_like(&vol, &fields)?)?;
        m.outputs.push(field_path);
        if a.samples == 0 {
            let out: Vec<Image> = results.iter().map(|(c, _)| c.mean_latent.clone()).collect();
            let p = corrected_dir.join(format!("{stem}.{ext}"));
            write_volume(&p, &volume_like(&vol, &out)?)?;
            m.outputs.push(p);
        }
        for k in 0..a.samples {
            let out: Vec<Image> = results.iter().map(|(c, _)| c.samples[k].clone()).collect();
            let p = corrected_dir.join(format!("{stem}_{k}.{ext}"));
            write_volume(&p, &volume_like(&vol, &out)?)?;
            m.outputs.push(p);
        }
        write_t += t.elapsed();

        let slice_ms: Vec<f64> = results.iter().map(|(_, ms)| *ms).collect();
        log::info!(
            "{}: {} slices in {:.1} ms ({:.1} ms/slice)",
            path.display(),
            slices.len(),
            elapsed.as_secs_f64() * 1e3,
            elapsed.as_secs_f64() * 1e3 / slices.len() as f64
        );
        m.inputs.push(path.clone());
        m.volumes.push(VolumeTiming {
            input: path.clone(),
            slices: slices.len(),
            ms: elapsed.as_secs_f64() * 1e3,
            slice_ms,
        });
    }
    for (stage, d) in [("read", read_t), ("correct", correct_t), ("write", write_t)] {
        m.timings.push(StageTiming {
            stage: stage.into(),
            ms: d.as_secs_f64() * 1e3,
        });
    }
    m.record("total", t0);
    m.write(&a.out)?;
    Ok(())
}
