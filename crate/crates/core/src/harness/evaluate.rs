//! Submission production and batch evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::audiology::Listener;
use crate::dsp::{read_wav, write_wav, AudioBuffer, Stem, StemSet};
use crate::enhancer::System;
use crate::error::{HarnessError, SceneError};
use crate::metrics::{build_reference_at_ears, build_remix_reference_at_ears, score_remix, score_vdbo, EvaluationRecord, MetricBackend, RecordStatus};
use crate::prescription::DEFAULT_NALR_TAPS;
use crate::scene::{scene_stems_at_ears, Dataset, SceneSpec};

use super::validate::{remix_file_name, stem_file, stems_dir_name, validate_submission, SubmissionManifest, ValidationReport};

/// Sample rate of a dataset, read from its first mixture.
pub fn dataset_sample_rate(dataset: &Dataset) -> Result<u32, HarnessError> {
    let scene = dataset
        .scenes
        .first()
        .ok_or_else(|| HarnessError::Config("dataset has no scenes".into()))?;
    Ok(dataset.load_mixture(scene)?.sample_rate())
}

fn listener_for<'a>(dataset: &'a Dataset, id: &str) -> Result<&'a Listener, HarnessError> {
    dataset
        .listener(id)
        .ok_or_else(|| HarnessError::MissingReference(format!("listener {id} is not in the listener manifest")))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| (path.display().to_string(), e).into())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubmissionSummary {
    pub files: usize,
    pub clipped_samples: usize,
}

/// Run `system` on every (scene, listener) pair and write a submission
/// directory with remixes, optional stems and `submission.json`.
pub fn produce_submission(dataset: &Dataset, system: &System, system_id: &str, out_dir: &Path) -> Result<SubmissionSummary, HarnessError> {
    let mode = dataset
        .mode()
        .ok_or_else(|| HarnessError::Config("dataset has no scenes".into()))?;
    create_dir(out_dir)?;
    let format = system.output_format();
    let per_scene: Vec<SubmissionSummary> = dataset
        .scenes
        .par_iter()
        .map(|scene| -> Result<SubmissionSummary, HarnessError> {
            let mixture = dataset.load_mixture(scene)?;
            let mut summary = SubmissionSummary::default();
            for lid in &scene.listener_ids {
                let listener = listener_for(dataset, lid)?;
                let out = system.process(scene, &mixture, listener)?;
                write_wav(out_dir.join(remix_file_name(&scene.scene_id, lid)), &out.remix, format)?;
                summary.files += 1;
                summary.clipped_samples += out.clipped_samples;
                if let Some(stems) = &out.stems {
                    create_dir(&out_dir.join(stems_dir_name(&scene.scene_id, lid)))?;
                    for (stem, buf) in stems.iter() {
                        write_wav(stem_file(out_dir, &scene.scene_id, lid, stem), buf, format)?;
                        summary.files += 1;
                    }
                }
            }
            Ok(summary)
        })
        .collect::<Result<_, _>>()?;
    let manifest = SubmissionManifest::new(system_id, mode, dataset.pairs().len(), system.lookahead_ms());
    manifest.save(out_dir)?;
    let total = per_scene.iter().fold(SubmissionSummary::default(), |acc, s| SubmissionSummary {
        files: acc.files + s.files,
        clipped_samples: acc.clipped_samples + s.clipped_samples,
    });
    log::info!("{system_id}: wrote {} files to {}", total.files, out_dir.display());
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    /// Score even when validation fails; missing pairs become failed rows.
    pub force: bool,
    pub nalr_taps: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            force: false,
            nalr_taps: DEFAULT_NALR_TAPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationRun {
    pub system_id: String,
    pub validation: ValidationReport,
    /// One row per manifest pair, in manifest order.
    pub records: Vec<EvaluationRecord>,
}

impl EvaluationRun {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

fn read_stems(dir: &Path, scene_id: &str, listener_id: &str) -> Result<Option<StemSet>, HarnessError> {
    if !dir.join(stems_dir_name(scene_id, listener_id)).is_dir() {
        return Ok(None);
    }
    let load = |s: Stem| -> Result<AudioBuffer, HarnessError> { Ok(read_wav(stem_file(dir, scene_id, listener_id, s))?.buffer) };
    Ok(Some(StemSet::from_stems(
        load(Stem::Vocals)?,
        load(Stem::Drums)?,
        load(Stem::Bass)?,
        load(Stem::Other)?,
    )?))
}

fn score_pair(
    dir: &Path,
    scene: &SceneSpec,
    at_ears: &StemSet,
    listener: &Listener,
    backend: &dyn MetricBackend,
    nalr_taps: usize,
    record: &mut EvaluationRecord,
) -> Result<(), HarnessError> {
    let remix = read_wav(dir.join(remix_file_name(&scene.scene_id, &listener.id)))?.buffer;
    match read_stems(dir, &scene.scene_id, &listener.id)? {
        Some(stems) => {
            let reference = build_reference_at_ears(scene, at_ears, listener, nalr_taps)?;
            record.remix_score = Some(score_remix(&remix, &reference.remix, listener, backend)?);
            record.vdbo_score = Some(score_vdbo(&stems, &reference.stems, listener, backend)?);
        }
        None => {
            let reference = build_remix_reference_at_ears(scene, at_ears, listener, nalr_taps)?;
            record.remix_score = Some(score_remix(&remix, &reference, listener, backend)?);
        }
    }
    record.status = RecordStatus::Ok;
    Ok(())
}

/// Validate and score a submission directory against a dataset. Pair-level
/// scoring failures become failed rows; missing reference stems abort
/// before any scoring.
pub fn evaluate_run(submission_dir: &Path, dataset: &Dataset, backend: &dyn MetricBackend, opts: &EvaluateOptions) -> Result<EvaluationRun, HarnessError> {
    let started = Instant::now();
    let manifest = SubmissionManifest::load(submission_dir)?;
    let fs = dataset_sample_rate(dataset)?;
    let validation = validate_submission(submission_dir, &manifest, &dataset.scenes, fs);
    if !validation.pass {
        if !opts.force {
            return Err(HarnessError::NotValidated(submission_dir.display().to_string()));
        }
        log::warn!("{}: evaluating despite {} defects", submission_dir.display(), validation.defects().len());
    }
    let missing: Vec<PathBuf> = dataset
        .scenes
        .iter()
        .flat_map(|s| Stem::ALL.map(|stem| dataset.layout.stem(&s.scene_id, stem)))
        .filter(|p| !p.exists())
        .collect();
    if let Some(first) = missing.first() {
        return Err(HarnessError::MissingReference(format!(
            "{} reference stem file(s) absent, first: {}",
            missing.len(),
            first.display()
        )));
    }
    for (_, lid) in dataset.pairs() {
        listener_for(dataset, &lid)?;
    }

    let per_scene: Vec<Vec<EvaluationRecord>> = dataset
        .scenes
        .par_iter()
        .map(|scene| -> Result<Vec<EvaluationRecord>, HarnessError> {
            let true_stems = dataset.load_stems(scene).map_err(|e: SceneError| HarnessError::MissingReference(e.to_string()))?;
            let at_ears = scene_stems_at_ears(scene, &true_stems, &dataset.hrirs)?;
            let mut rows = Vec::with_capacity(scene.listener_ids.len());
            for lid in &scene.listener_ids {
                let listener = listener_for(dataset, lid)?;
                let mut record = EvaluationRecord::new(&manifest.system_id, scene, listener);
                if let Err(e) = score_pair(submission_dir, scene, &at_ears, listener, backend, opts.nalr_taps, &mut record) {
                    log::warn!("{} {} {}: {e}", manifest.system_id, scene.scene_id, lid);
                    record.remix_score = None;
                    record.vdbo_score = None;
                    record.status = RecordStatus::Failed;
                }
                rows.push(record);
            }
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;
    let records: Vec<EvaluationRecord> = per_scene.into_iter().flatten().collect();
    let run = EvaluationRun {
        system_id: manifest.system_id,
        validation,
        records,
    };
    log::info!(
        "{}: scored {} pairs ({} failed) in {:.2} s",
        run.system_id,
        run.records.len(),
        run.failures(),
        started.elapsed().as_secs_f64()
    );
    Ok(run)
}

fn records_err(path: &Path, reason: impl ToString) -> HarnessError {
    HarnessError::Records {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn records_to_csv(records: &[EvaluationRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| records_err(Path::new("<memory>"), e))?;
    }
    let bytes = w.into_inner().map_err(|e| records_err(Path::new("<memory>"), e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_records(path: &Path, records: &[EvaluationRecord]) -> Result<(), HarnessError> {
    let text = records_to_csv(records)?;
    fs::write(path, text).map_err(|e| (path.display().to_string(), e).into())
}

pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| records_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| records_err(path, e))).collect()
}
