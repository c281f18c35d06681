//! Dataset directory layout:
//!
//! ```text
//! <root>/manifest.json      {"schema_version", "dt", "demos": [ids], "labeled": bool}
//! <root>/demos/<id>.json    {"id", "dt", "meta", "steps": [{obs, action, click}, ...]}
//! <root>/labeled/<id>.json  {"id", "steps": [{action, waypoint, mode, relabeled}, ...]}
//! ```
//!
//! Step arrays are written one element per line. Floats use the shortest
//! representation that round-trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    validate_demo, Action, Dataset, Demonstration, LabeledStep, Mode, ProprioState, Step,
    DEFAULT_DT, SCHEMA_VERSION,
};
use crate::{HydraError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEMOS_DIR: &str = "demos";
pub const LABELED_DIR: &str = "labeled";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    dt: f64,
    demos: Vec<String>,
    #[serde(default)]
    labeled: bool,
}

#[derive(Debug, Deserialize)]
struct DemoDoc {
    id: String,
    dt: f64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    steps: Vec<Step>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledRecord {
    action: Action,
    waypoint: ProprioState,
    mode: Mode,
    relabeled: bool,
}

#[derive(Debug, Deserialize)]
struct LabeledDoc {
    id: String,
    steps: Vec<LabeledRecord>,
}

/// Write `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| HydraError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HydraError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HydraError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| HydraError::io(path, e))
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn write_lines<T: Serialize>(out: &mut String, items: &[T]) {
    out.push_str("\"steps\":[\n");
    for (i, item) in items.iter().enumerate() {
        out.push_str(&json_line(item));
        if i + 1 < items.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]}\n");
}

pub(crate) fn encode_demo(demo: &Demonstration) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{{\"id\":{},\"dt\":{},\"meta\":{},\n",
        json_line(&demo.id),
        json_line(&demo.dt),
        json_line(&demo.meta)
    ));
    write_lines(&mut out, &demo.steps);
    out
}

pub(crate) fn encode_labeled(id: &str, steps: &[LabeledStep]) -> String {
    let records: Vec<LabeledRecord> = steps
        .iter()
        .map(|s| LabeledRecord {
            action: s.action,
            waypoint: s.waypoint,
            mode: s.mode,
            relabeled: s.relabeled,
        })
        .collect();
    let mut out = format!("{{\"id\":{},\n", json_line(&id));
    write_lines(&mut out, &records);
    out
}

pub(crate) fn demo_path(root: &Path, id: &str) -> PathBuf {
    root.join(DEMOS_DIR).join(format!("{id}.json"))
}

pub(crate) fn labeled_path(root: &Path, id: &str) -> PathBuf {
    root.join(LABELED_DIR).join(format!("{id}.json"))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(HydraError::validation(format!("invalid demo id {id:?}")))
    }
}

fn validated(demo: &Demonstration) -> Result<()> {
    check_id(&demo.id)?;
    if let Some(v) = validate_demo(demo).first() {
        return Err(HydraError::validation(format!("demo {}: {v}", demo.id)));
    }
    Ok(())
}

/// Persist `dataset` under `root`, replacing any previous manifest.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.check_alignment()?;
    for demo in &dataset.demos {
        validated(demo)?;
    }
    fs::create_dir_all(root.join(DEMOS_DIR)).map_err(|e| HydraError::io(root, e))?;
    for demo in &dataset.demos {
        write_atomic(&demo_path(root, &demo.id), encode_demo(demo).as_bytes())?;
    }
    if let Some(labeled) = &dataset.labeled {
        fs::create_dir_all(root.join(LABELED_DIR)).map_err(|e| HydraError::io(root, e))?;
        for (demo, steps) in dataset.demos.iter().zip(labeled) {
            write_atomic(
                &labeled_path(root, &demo.id),
                encode_labeled(&demo.id, steps).as_bytes(),
            )?;
        }
    }
    let manifest = Manifest {
        schema_version: dataset.schema_version,
        dt: dataset.demos.first().map_or(DEFAULT_DT, |d| d.dt),
        demos: dataset.demos.iter().map(|d| d.id.clone()).collect(),
        labeled: dataset.labeled.is_some(),
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&root.join(MANIFEST_FILE), body.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(HydraError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(HydraError::io(path, e)),
    };
    serde_json::from_slice(&bytes).map_err(|source| HydraError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Load and validate a single demo document.
pub fn load_demo(root: &Path, id: &str) -> Result<Demonstration> {
    check_id(id)?;
    let doc: DemoDoc = read_json(&demo_path(root, id))?;
    if doc.id != id {
        return Err(HydraError::validation(format!(
            "demo file {id}.json carries id {}",
            doc.id
        )));
    }
    let demo = Demonstration {
        id: doc.id,
        dt: doc.dt,
        steps: doc.steps,
        meta: doc.meta,
    };
    validated(&demo)?;
    Ok(demo)
}

/// Load the labeled block of one demo, returning `None` when no file exists.
pub fn load_labeled(root: &Path, demo: &Demonstration) -> Result<Option<Vec<LabeledStep>>> {
    let path = labeled_path(root, &demo.id);
    if !path.exists() {
        return Ok(None);
    }
    let doc: LabeledDoc = read_json(&path)?;
    if doc.id != demo.id || doc.steps.len() != demo.steps.len() {
        return Err(HydraError::validation(format!(
            "labeled file for {} is not aligned with its demo",
            demo.id
        )));
    }
    let steps = demo
        .steps
        .iter()
        .zip(doc.steps)
        .map(|(s, r)| LabeledStep {
            obs: s.obs,
            action: r.action,
            waypoint: r.waypoint,
            mode: r.mode,
            relabeled: r.relabeled,
        })
        .collect();
    Ok(Some(steps))
}

pub(crate) fn load_manifest_ids(root: &Path) -> Result<(u32, Vec<String>, bool)> {
    let m: Manifest = read_json(&root.join(MANIFEST_FILE))?;
    Ok((m.schema_version, m.demos, m.labeled))
}

/// Demo ids listed in the manifest, in manifest order.
pub fn demo_ids(root: &Path) -> Result<Vec<String>> {
    Ok(load_manifest_ids(root)?.1)
}

/// Rewrite one demo document in place. The id must already be in the manifest.
pub fn save_demo(root: &Path, demo: &Demonstration) -> Result<()> {
    validated(demo)?;
    if !demo_ids(root)?.contains(&demo.id) {
        return Err(HydraError::NotFound(format!("demo {}", demo.id)));
    }
    write_atomic(&demo_path(root, &demo.id), encode_demo(demo).as_bytes())
}

/// Rewrite the labeled block of one demo.
pub fn save_labeled(root: &Path, demo: &Demonstration, steps: &[LabeledStep]) -> Result<()> {
    if steps.len() != demo.len() {
        return Err(HydraError::validation(format!(
            "{} labeled steps for demo {} of length {}",
            steps.len(),
            demo.id,
            demo.len()
        )));
    }
    fs::create_dir_all(root.join(LABELED_DIR)).map_err(|e| HydraError::io(root, e))?;
    write_atomic(&labeled_path(root, &demo.id), encode_labeled(&demo.id, steps).as_bytes())
}

/// Load and fully validate the dataset rooted at `root`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let (schema_version, ids, has_labels) = load_manifest_ids(root)?;
    if schema_version != SCHEMA_VERSION {
        return Err(HydraError::validation(format!(
            "unsupported schema_version {schema_version}"
        )));
    }
    let demos = ids
        .iter()
        .map(|id| load_demo(root, id))
        .collect::<Result<Vec<_>>>()?;
    let labeled = if has_labels {
        let mut all = Vec::with_capacity(demos.len());
        for demo in &demos {
            match load_labeled(root, demo)? {
                Some(steps) => all.push(steps),
                None => {
                    return Err(HydraError::NotFound(
                        labeled_path(root, &demo.id).display().to_string(),
                    ))
                }
            }
        }
        Some(all)
    } else {
        None
    };
    Ok(Dataset {
        demos,
        labeled,
        schema_version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{EnvState, Observation, Pose2};

    fn sample_demo(id: &str, n: usize) -> Demonstration {
        let steps = (0..n)
            .map(|i| Step {
                obs: Observation {
                    proprio: ProprioState::new(0.1 + 0.013 * i as f64, 0.3, 0.1 / 3.0, 0.0),
                    env: EnvState {
                        object_pose: Pose2::new(0.7, 0.7, -0.25),
                        slot_pose: Pose2::new(0.2, 0.8, 1.0 / 7.0),
                        object_held: false,
                    },
                },
                action: Action::new(0.013, 0.0, 0.0, 0.0),
                click: i % 3 == 0,
            })
            .collect();
        Demonstration {
            id: id.into(),
            dt: 0.1,
            steps,
            meta: BTreeMap::from([("source".to_string(), "test".to_string())]),
        }
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::default();
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn one_demo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![sample_demo("a", 10)]);
        save_dataset(&d, dir.path()).unwrap();
        assert!(dir.path().join("demos/a.json").exists());
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
        let text = fs::read_to_string(dir.path().join("demos/a.json")).unwrap();
        // header, "steps" opener, one line per step, closer
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn missing_demo_file_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![sample_demo("gone", 4)]);
        save_dataset(&d, dir.path()).unwrap();
        fs::remove_file(dir.path().join("demos/gone.json")).unwrap();
        match load_dataset(dir.path()) {
            Err(HydraError::NotFound(msg)) => assert!(msg.contains("gone.json")),
            other => panic!("expected not-found, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(HydraError::NotFound(_))
        ));
    }

    #[test]
    fn reader_rejects_unwrapped_theta() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![sample_demo("t", 4)]);
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join("demos/t.json");
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i == 4 {
                    l.replacen("\"theta\":0.03333333333333333", "\"theta\":4.0", 1)
                } else {
                    l.to_string()
                }
            })
            .collect();
        fs::write(&path, lines.join("\n")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("theta out of range"), "{err}");
        assert!(err.contains("step 2"), "{err}");
        assert!(err.contains("demo t"), "{err}");
    }

    #[test]
    fn save_rejects_invalid_demo() {
        let dir = tempfile::tempdir().unwrap();
        let mut demo = sample_demo("bad", 4);
        demo.steps[1].action.dx = 0.3;
        let err = save_dataset(&Dataset::new(vec![demo]), dir.path()).unwrap_err();
        assert!(matches!(err, HydraError::Validation(_)));
    }

    #[test]
    fn labeled_block_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let demo = sample_demo("l", 6);
        let labeled: Vec<LabeledStep> = demo
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| LabeledStep {
                obs: s.obs,
                action: Action::new(0.05, -0.01, 0.0, 0.0),
                waypoint: ProprioState::new(0.9, 0.3, 0.0, (i % 2) as f64),
                mode: Mode::from_bit(i >= 4),
                relabeled: i < 4,
            })
            .collect();
        let d = Dataset::new(vec![demo]).with_labels(vec![labeled]);
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }
}
