//! On-disk layout: `<root>/<env>/<split>[/<anomaly_kind>]/manifest.json` plus
//! one `traj_NNNNN.csv` per trajectory with columns `step,a,o_0..o_{d-1}`.
//! Floats are written with 17 significant digits so loads are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use crate::anomaly::AnomalyKind;
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::sim::EnvKind;

use super::{Dataset, DatasetManifest, Split, Trajectory};

pub const MANIFEST_FILE: &str = "manifest.json";

pub(crate) fn trajectory_file(id: usize) -> String {
    format!("traj_{id:05}.csv")
}

pub fn split_dir(root: &Path, env: EnvKind, split: Split, kind: Option<AnomalyKind>) -> PathBuf {
    let dir = root.join(env.name()).join(split.name());
    match kind {
        Some(k) => dir.join(k.name()),
        None => dir,
    }
}

pub fn save(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (traj, record) in dataset.trajectories.iter().zip(&dataset.manifest.trajectories) {
        write_trajectory(&dir.join(&record.file), traj)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let d = traj.obs_dim();
    let mut header = vec!["step".to_string(), "a".to_string()];
    header.extend((0..d).map(|j| format!("o_{j}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, (row, a)) in traj.observations.iter_rows().zip(&traj.actions).enumerate() {
        let mut record = vec![i.to_string(), a.to_string()];
        record.extend(row.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::CorruptRecord {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptRecord {
        path,
        reason: e.to_string(),
    })
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mismatch = |reason: String| Error::ManifestMismatch {
        path: dir.to_path_buf(),
        reason,
    };
    if manifest.count != manifest.trajectories.len() {
        return Err(mismatch(format!(
            "count {} but {} trajectory records",
            manifest.count,
            manifest.trajectories.len()
        )));
    }
    let present = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("traj_") && name.ends_with(".csv")
        })
        .count();
    if present != manifest.count {
        return Err(mismatch(format!("count {} but {present} trajectory files", manifest.count)));
    }
    let d = manifest.env.obs_dim();
    if manifest.feature_means.len() != d || manifest.feature_stds.len() != d {
        return Err(mismatch(format!("feature statistics do not have {d} entries")));
    }
    let mut trajectories = Vec::with_capacity(manifest.count);
    for record in &manifest.trajectories {
        let path = dir.join(&record.file);
        let (observations, actions) = read_trajectory(&path, d, manifest.env.action_count())?;
        if observations.rows() != record.len {
            return Err(mismatch(format!(
                "{} has {} rows, manifest says {}",
                record.file,
                observations.rows(),
                record.len
            )));
        }
        let traj = Trajectory {
            id: record.id,
            env: manifest.env,
            seed: record.seed,
            observations,
            actions,
            inject_step: record.inject_step,
            anomaly: record.anomaly.clone(),
        };
        traj.validate().map_err(|e| mismatch(e.to_string()))?;
        trajectories.push(traj);
    }
    Ok(Dataset { manifest, trajectories })
}

fn read_trajectory(path: &Path, d: usize, action_count: usize) -> Result<(Tensor2, Vec<usize>)> {
    let corrupt = |reason: String| Error::CorruptRecord {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.len() != d + 2 {
        return Err(corrupt(format!("header has {} columns, expected {}", header.len(), d + 2)));
    }
    let mut observations = Tensor2::zeros(0, d);
    let mut actions = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != d + 2 {
            return Err(corrupt(format!("row {i} has {} columns, expected {}", record.len(), d + 2)));
        }
        let step: usize = record[0].parse().map_err(|_| corrupt(format!("row {i}: bad step `{}`", &record[0])))?;
        if step != i {
            return Err(corrupt(format!("row {i}: step index {step}")));
        }
        let a: usize = record[1].parse().map_err(|_| corrupt(format!("row {i}: bad action `{}`", &record[1])))?;
        if a >= action_count {
            return Err(corrupt(format!("row {i}: action {a} out of range")));
        }
        let row = record
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| corrupt(format!("row {i}: bad value `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        observations.push_row(&row)?;
        actions.push(a);
    }
    Ok((observations, actions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_anomalous, generate_nominal, FeatureStats};

    fn sample_dataset() -> Dataset {
        let trajs = generate_anomalous(EnvKind::CartPole, AnomalyKind::IidNoise, 3, 60, 4).unwrap();
        let train = generate_nominal(EnvKind::CartPole, 3, 60, 1).unwrap();
        let stats = FeatureStats::compute(&train).unwrap();
        Dataset::new(Split::AnomalousTest, Some(AnomalyKind::IidNoise), 60, 4, &stats, trajs).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        save(&ds, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn tampered_row_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        save(&ds, dir.path()).unwrap();
        let path = dir.path().join("traj_00001.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].rsplit_once(',').unwrap().0.to_string();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(load(dir.path()), Err(Error::CorruptRecord { .. })));
    }

    #[test]
    fn missing_file_is_manifest_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset();
        save(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("traj_00002.csv")).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::ManifestMismatch { .. })));
    }

    #[test]
    fn layout_paths() {
        let root = Path::new("/data");
        assert_eq!(
            split_dir(root, EnvKind::Acrobot, Split::AnomalousTest, Some(AnomalyKind::WindL2R)),
            Path::new("/data/acrobot/anomalous_test/wind_l2r")
        );
        assert_eq!(
            split_dir(root, EnvKind::CartPole, Split::NominalTrain, None),
            Path::new("/data/cartpole/nominal_train")
        );
    }
}
