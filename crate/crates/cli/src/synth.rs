use phunet::data::dataset::{make_dataset, write_dataset, SUBDIRS};
use serde_json::json;

use crate::manifest::{create_dir, RunManifest};
use crate::{CliError, CliResult, SynthArgs};

pub(crate) fn run(a: &SynthArgs, argv: Vec<String>) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let config = json!({ "n": a.n, "size": a.size, "seed": a.seed });
    let mut m = RunManifest::new("synth", argv, Some(a.seed), config);
    create_dir(&a.out)?;
    let ds = m.time("generate", || make_dataset(a.seed, a.n, a.size))?;
    m.time("write", || write_dataset(&a.out, &ds))?;
    m.outputs.push(a.out.join("manifest.json"));
    m.outputs.extend(SUBDIRS.iter().map(|s| a.out.join(s)));
    m.write(&a.out)?;
    log::info!("wrote {} pairs of {}x{} to {}", a.n, a.size, a.size, a.out.display());
    Ok(())
}
