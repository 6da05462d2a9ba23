//! UCI Human Activity Recognition (smartphone) archive.
//!
//! Accepts either the original archive layout (`train/X_train.txt`,
//! `train/y_train.txt`, `train/subject_train.txt` and the matching `test/`
//! files, concatenated train-then-test) or a flat directory holding
//! `X.txt`, `y.txt` and `subject.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{Dataset, Example};
use crate::rng::rng_at;
use crate::{Error, Result};

pub const HAR_FEATURES: usize = 561;
pub const HAR_LABELS: usize = 6;
pub const HAR_USERS: usize = 30;

struct Parts {
    x: PathBuf,
    y: PathBuf,
    subject: PathBuf,
}

fn layout(dir: &Path) -> Result<Vec<Parts>> {
    let split = |name: &str| Parts {
        x: dir.join(name).join(format!("X_{name}.txt")),
        y: dir.join(name).join(format!("y_{name}.txt")),
        subject: dir.join(name).join(format!("subject_{name}.txt")),
    };
    let uci = [split("train"), split("test")];
    if uci.iter().all(|p| p.x.is_file()) {
        return Ok(uci.into());
    }
    let flat = Parts {
        x: dir.join("X.txt"),
        y: dir.join("y.txt"),
        subject: dir.join("subject.txt"),
    };
    if flat.x.is_file() {
        return Ok(vec![flat]);
    }
    Err(Error::format(format!("{}: no HAR feature files found", dir.display())))
}

fn read_column(path: &Path) -> Result<Vec<i64>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<i64>()
                .map_err(|_| Error::format(format!("{}:{}: not an integer", path.display(), i + 1)))
        })
        .collect()
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let row = l
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if row.len() != HAR_FEATURES {
                return Err(Error::format(format!(
                    "{}:{}: {} columns, expected {HAR_FEATURES}",
                    path.display(),
                    i + 1,
                    row.len()
                )));
            }
            Ok(row)
        })
        .collect()
}

/// Loads the archive as one dataset per user (index `u` holds subject `u + 1`).
/// Activity labels 1..=6 are stored as 0..=5.
pub fn load_har(dir: &Path) -> Result<Vec<Dataset>> {
    let mut users: Vec<Dataset> = (0..HAR_USERS)
        .map(|_| Dataset::empty(HAR_LABELS, HAR_FEATURES))
        .collect();
    for parts in layout(dir)? {
        let x = read_matrix(&parts.x)?;
        let y = read_column(&parts.y)?;
        let subject = read_column(&parts.subject)?;
        if x.len() != y.len() || x.len() != subject.len() {
            return Err(Error::format(format!(
                "{}: {} feature rows, {} labels, {} subject ids",
                parts.x.display(),
                x.len(),
                y.len(),
                subject.len()
            )));
        }
        for ((features, label), s) in x.into_iter().zip(y).zip(subject) {
            if !(1..=HAR_LABELS as i64).contains(&label) {
                return Err(Error::format(format!("activity label {label} outside 1..=6")));
            }
            if !(1..=HAR_USERS as i64).contains(&s) {
                return Err(Error::format(format!("subject id {s} outside 1..=30")));
            }
            users[(s - 1) as usize].push(Example::new(features, (label - 1) as usize));
        }
    }
    if let Some(missing) = users.iter().position(Dataset::is_empty) {
        return Err(Error::format(format!("subject {} has no examples", missing + 1)));
    }
    Ok(users)
}

/// Per-user train/test split. Each user becomes one client.
#[derive(Debug, Clone)]
pub struct HarSplit {
    pub train: Vec<Dataset>,
    pub test: Dataset,
    /// Owning user of each test example.
    pub test_owner: Vec<usize>,
}

/// Splits every user's examples: a seeded shuffle picks `round(train_fraction * len)`
/// training examples, and both parts keep their original index order.
pub fn split_har_users(users: &[Dataset], train_fraction: f64, seed: u64) -> Result<HarSplit> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::config("train fraction must lie in [0, 1]"));
    }
    let first = users.first().ok_or_else(|| Error::config("no users to split"))?;
    let mut train = Vec::with_capacity(users.len());
    let mut test = Dataset::empty(first.num_labels(), first.feature_dim());
    let mut test_owner = Vec::new();
    for (u, user) in users.iter().enumerate() {
        let mut order: Vec<usize> = (0..user.len()).collect();
        order.shuffle(&mut rng_at(seed, &[u as u64]));
        let n_train = (user.len() as f64 * train_fraction).round() as usize;
        let mut train_idx = order[..n_train].to_vec();
        let mut test_idx = order[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        train.push(user.select(train_idx));
        for i in test_idx {
            test.push(user.examples()[i].clone());
            test_owner.push(u);
        }
    }
    Ok(HarSplit {
        train,
        test,
        test_owner,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::fmt::Write as _;

    /// Writes a flat HAR-format directory with `per_user` examples for every subject.
    pub(crate) fn write_fake_har(dir: &Path, per_user: usize) {
        let (mut x, mut y, mut s) = (String::new(), String::new(), String::new());
        for subject in 1..=HAR_USERS {
            for i in 0..per_user {
                let label = (subject + i) % HAR_LABELS + 1;
                let row: Vec<String> = (0..HAR_FEATURES)
                    .map(|j| format!("{:.6}", ((label * 7 + j) % 13) as f64 / 6.5 - 1.0))
                    .collect();
                writeln!(x, "{}", row.join(" ")).unwrap();
                writeln!(y, "{label}").unwrap();
                writeln!(s, "{subject}").unwrap();
            }
        }
        fs::write(dir.join("X.txt"), x).unwrap();
        fs::write(dir.join("y.txt"), y).unwrap();
        fs::write(dir.join("subject.txt"), s).unwrap();
    }

    #[test]
    fn loads_flat_layout_and_remaps_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_har(dir.path(), 4);
        let users = load_har(dir.path()).unwrap();
        assert_eq!(users.len(), 30);
        assert_eq!(users.iter().map(Dataset::len).sum::<usize>(), 120);
        // subject 5, example 0: raw label (5 % 6) + 1 = 6 -> stored 5
        assert_eq!(users[4].examples()[0].label, 5);
        assert!(users.iter().all(|u| u.feature_dim() == 561));
    }

    #[test]
    fn missing_subject_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_har(dir.path(), 2);
        let subjects: String = fs::read_to_string(dir.path().join("subject.txt"))
            .unwrap()
            .lines()
            .map(|l| {
                if l == "30" {
                    "29\n".to_string()
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        fs::write(dir.path().join("subject.txt"), subjects).unwrap();
        assert!(matches!(load_har(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn label_outside_range_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_har(dir.path(), 2);
        let y = fs::read_to_string(dir.path().join("y.txt")).unwrap();
        fs::write(dir.path().join("y.txt"), format!("7{}", &y[1..])).unwrap();
        assert!(matches!(load_har(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn split_keeps_three_quarters_per_user() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_har(dir.path(), 8);
        let users = load_har(dir.path()).unwrap();
        let split = split_har_users(&users, 0.75, 3).unwrap();
        assert!(split.train.iter().all(|d| d.len() == 6));
        assert_eq!(split.test.len(), 60);
        assert_eq!(split.test_owner.len(), 60);
        let again = split_har_users(&users, 0.75, 3).unwrap();
        assert_eq!(split.test, again.test);
    }
}
