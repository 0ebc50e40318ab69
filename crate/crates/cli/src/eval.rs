use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use phunet::data::dataset::{list_files, load_pairs};
use phunet::data::{read_volume, Volume};
use phunet::metrics::{aggregate, otsu_masks, MetricRecord};
use phunet::{Error, Image, Mask};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{create_dir, write_file, RunManifest};
use crate::{CliError, CliResult, EvalArgs};

pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// `masks` when the dataset's tissue and background masks were used,
    /// `otsu` when they came from thresholding the reference.
    pub roi: String,
    pub rows: Vec<MetricRecord>,
    pub mean: MetricRecord,
}

/// Every slice of a volume stacked top to bottom into one image.
fn tall(v: &Volume) -> phunet::Result<Image> {
    let [nx, ny, nz] = v.dims;
    Image::new(ny * nz, nx, v.data.iter().map(|&x| x as f64).collect())
}

/// Otsu foreground/background computed slice by slice.
fn otsu_volume(v: &Volume) -> phunet::Result<(Mask, Mask)> {
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for s in v.slices()? {
        let (f, b) = otsu_masks(&s);
        fg.extend_from_slice(f.data());
        bg.extend_from_slice(b.data());
    }
    let [nx, ny, nz] = v.dims;
    Ok((Mask::new(ny * nz, nx, fg)?, Mask::new(ny * nz, nx, bg)?))
}

/// Volumes in `dir` keyed by file stem.
fn volumes_by_id(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut files = list_files(dir, "f32")?;
    files.extend(list_files(dir, "nii")?);
    let mut out = BTreeMap::new();
    for f in files {
        let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(id.clone(), f.clone()) {
            return Err(CliError::Data(format!(
                "{} and {} share the id {id}",
                prev.display(),
                f.display()
            )));
        }
    }
    Ok(out)
}

fn check_ids<'a>(
    want: impl Iterator<Item = &'a String>,
    have: &BTreeMap<String, PathBuf>,
    what: &str,
) -> CliResult<()> {
    let want: Vec<&String> = want.collect();
    let missing: Vec<&str> = want
        .iter()
        .filter(|id| !have.contains_key(**id))
        .map(|s| s.as_str())
        .collect();
    let extra: Vec<&str> = have.keys().filter(|k| !want.contains(k)).map(|s| s.as_str()).collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    Err(CliError::Data(format!(
        "ids do not match: missing from {what}: [{}]; only in {what}: [{}]",
        missing.join(", "),
        extra.join(", ")
    )))
}

fn same_dims(id: &str, a: &Volume, b: &Volume) -> CliResult<()> {
    if a.dims != b.dims {
        return Err(Error::Dimension(format!("{id}: {:?} vs {:?}", a.dims, b.dims)).into());
    }
    Ok(())
}

pub(crate) fn run(a: &EvalArgs, argv: Vec<String>) -> CliResult<()> {
    let mode = match (&a.pairs, &a.corrected, &a.reference) {
        (Some(_), None, _) => "pairs",
        (Some(_), Some(_), _) => "pairs+corrected",
        (None, Some(_), Some(_)) => "corrected+reference",
        _ => return Err(CliError::Usage("--corrected needs --pairs or --reference".into())),
    };
    let mut m = RunManifest::new("eval", argv, None, json!({ "mode": mode }));
    m.inputs
        .extend(a.pairs.iter().chain(&a.corrected).chain(&a.reference).cloned());

    let (roi, rows) = m.time("evaluate", || -> CliResult<(&str, Vec<MetricRecord>)> {
        let mut rows = Vec::new();
        if let Some(pairs_dir) = &a.pairs {
            let pairs = load_pairs(pairs_dir)?;
            let corrected = match &a.corrected {
                Some(dir) => {
                    let have = volumes_by_id(dir)?;
                    check_ids(pairs.iter().map(|p| &p.id), &have, &dir.display().to_string())?;
                    Some(have)
                }
                None => None,
            };
            let roi = if pairs.iter().all(|p| p.masks.is_some()) {
                "masks"
            } else {
                "otsu"
            };
            for p in &pairs {
                let after = match &corrected {
                    Some(have) => {
                        let v = read_volume(&have[&p.id])?;
                        if v.num_slices() != 1 {
                            return Err(Error::Dimension(format!("{}: expected one slice", p.id)).into());
                        }
                        v.slice(0)?
                    }
                    None => p.y.clone(),
                };
                let (fg, bg) = match &p.masks {
                    Some(mk) if roi == "masks" => mk.clone(),
                    _ => otsu_masks(&p.y),
                };
                rows.push(MetricRecord::evaluate(&p.id, &p.x, &after, &fg, &bg)?);
            }
            Ok((roi, rows))
        } else {
            let (cdir, rdir) = (a.corrected.as_ref().expect("mode"), a.reference.as_ref().expect("mode"));
            let refs = volumes_by_id(rdir)?;
            let corr = volumes_by_id(cdir)?;
            check_ids(refs.keys(), &corr, &cdir.display().to_string())?;
            for (id, rpath) in &refs {
                let r = read_volume(rpath)?;
                let c = read_volume(&corr[id])?;
                same_dims(id, &r, &c)?;
                let (fg, bg) = otsu_volume(&r)?;
                rows.push(MetricRecord::evaluate(id, &tall(&r)?, &tall(&c)?, &fg, &bg)?);
            }
            Ok(("otsu", rows))
        }
    })?;

    let report = Report {
        roi: roi.into(),
        mean: aggregate(&rows),
        rows,
    };
    log::info!(
        "{} volumes: CV {:.3} -> {:.3}",
        report.rows.len(),
        report.mean.cv_before,
        report.mean.cv_after
    );
    create_dir(&a.out)?;
    let path = a.out.join(REPORT_FILE);
    write_file(
        &path,
        serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
    )?;
    m.outputs.push(path);
    m.write(&a.out)?;
    Ok(())
}
