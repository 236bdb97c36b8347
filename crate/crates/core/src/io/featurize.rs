//! Manifest → feature images, and caching them in a tensor container.

use rayon::prelude::*;

use super::container::TensorContainer;
use super::manifest::ManifestEntry;
use crate::audio::{load_audio, make_feature_image, Task};
use crate::error::{Error, Result};
use crate::train::{Dataset, Inputs, Subject};

fn wants(inputs: Inputs, task: Task) -> bool {
    matches!(
        (inputs, task),
        (Inputs::Both, _)
            | (Inputs::ReadOnly, Task::Reading)
            | (Inputs::InterviewOnly, Task::Interview)
    )
}

fn featurize_subject(entry: &ManifestEntry, inputs: Inputs) -> Result<Subject> {
    let image = |task: Task| -> Result<Option<crate::Tensor>> {
        if !wants(inputs, task) {
            return Ok(None);
        }
        let path = match task {
            Task::Reading => &entry.reading_path,
            Task::Interview => &entry.interview_path,
        };
        let path = path.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "subject {} has no {} recording",
                entry.subject_id,
                task.as_str()
            ))
        })?;
        let wave = load_audio(path)?;
        Ok(Some(make_feature_image(&wave, task)?.channels))
    };
    Ok(Subject {
        id: entry.subject_id.clone(),
        label: entry.label.index(),
        reading: image(Task::Reading)?,
        interview: image(Task::Interview)?,
    })
}

/// Loads and featurizes every recording the input mode needs, on up to
/// `workers` threads. Subject order follows the manifest.
pub fn featurize_manifest(
    entries: &[ManifestEntry],
    inputs: Inputs,
    workers: usize,
) -> Result<Dataset> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let subjects = pool.install(|| {
        entries
            .par_iter()
            .map(|e| featurize_subject(e, inputs))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Dataset { subjects })
}

/// Stores images as `{subject}/reading` and `{subject}/interview`.
pub fn dataset_to_container(data: &Dataset) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    for s in &data.subjects {
        if let Some(r) = &s.reading {
            c.insert(format!("{}/reading", s.id), r.clone())?;
        }
        if let Some(i) = &s.interview {
            c.insert(format!("{}/interview", s.id), i.clone())?;
        }
    }
    Ok(c)
}

/// Rebuilds a dataset from cached images; labels come from the manifest.
pub fn dataset_from_container(
    entries: &[ManifestEntry],
    features: &TensorContainer,
    inputs: Inputs,
) -> Result<Dataset> {
    let subjects = entries
        .iter()
        .map(|e| {
            let get = |task: Task| -> Result<Option<crate::Tensor>> {
                if !wants(inputs, task) {
                    return Ok(None);
                }
                Ok(Some(
                    features
                        .require(&format!("{}/{}", e.subject_id, task.as_str()))?
                        .clone(),
                ))
            };
            Ok(Subject {
                id: e.subject_id.clone(),
                label: e.label.index(),
                reading: get(Task::Reading)?,
                interview: get(Task::Interview)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { subjects })
}
