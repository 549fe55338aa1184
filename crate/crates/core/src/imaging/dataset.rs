//! On-disk paired datasets.
//!
//! Layout: `<root>/<pair-id>/lr.png` and `<root>/<pair-id>/hr.png` (`.pgm`
//! also accepted), plus `<root>/manifest.txt` with one `<pair-id> = <role>`
//! line per pair. Roles: `train`, `test`, or `patch` (split with the 3×4
//! protocol). Without a manifest every subdirectory is a `patch` pair. An
//! `lr` image at half the `hr` size is bicubic-upsampled on load.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{bicubic_upsample, image_dims, load_image, save_image, split_3x4, ImagePair};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRole {
    Train,
    Test,
    /// Contributes 9 train and 3 test patches.
    Patch,
}

impl FromStr for PairRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "patch" => Ok(Self::Patch),
            other => Err(Error::config(format!("unknown pair role {other:?}"))),
        }
    }
}

impl fmt::Display for PairRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
            Self::Patch => "patch",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<(ImagePair, PairRole)>,
}

impl Dataset {
    /// Whole-pair holdout: the last quarter (at least one pair when there
    /// are two or more) is test data.
    pub fn with_holdout(pairs: Vec<ImagePair>) -> Self {
        let n = pairs.len();
        let n_test = if n >= 2 { (n / 4).max(1) } else { 0 };
        let entries = pairs
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, if i >= n - n_test { PairRole::Test } else { PairRole::Train }))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Training and test images after applying each pair's role.
    pub fn train_test(&self) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
        let (mut train, mut test) = (vec![], vec![]);
        for (pair, role) in &self.entries {
            match role {
                PairRole::Train => train.push(pair.clone()),
                PairRole::Test => test.push(pair.clone()),
                PairRole::Patch => {
                    let s = split_3x4(pair)?;
                    train.extend(s.train);
                    test.extend(s.test);
                }
            }
        }
        Ok((train, test))
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        let mut manifest = String::from("# pair-id = role (train | test | patch)\n");
        for (pair, role) in &self.entries {
            let dir = root.join(&pair.id);
            save_image(&pair.lr_up, dir.join("lr.png"))?;
            save_image(&pair.hr, dir.join("hr.png"))?;
            manifest.push_str(&format!("{} = {role}\n", pair.id));
        }
        let path = root.join(MANIFEST_FILE);
        std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = root.join(MANIFEST_FILE);
        let listing: Vec<(String, PairRole)> = if manifest.exists() {
            let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
            parse_manifest(&text)?
        } else {
            let mut ids = vec![];
            for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                if entry.path().is_dir() {
                    ids.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            ids.sort();
            ids.into_iter().map(|id| (id, PairRole::Patch)).collect()
        };
        if listing.is_empty() {
            return Err(Error::usage(format!("no image pairs under {}", root.display())));
        }
        let entries = listing
            .into_iter()
            .map(|(id, role)| Ok((load_pair(root, &id)?, role)))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

fn parse_manifest(text: &str) -> Result<Vec<(String, PairRole)>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (id, role) = l
                .split_once('=')
                .ok_or_else(|| Error::config(format!("manifest line {l:?} is not `id = role`")))?;
            Ok((id.trim().to_string(), role.trim().parse()?))
        })
        .collect()
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    ["png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::io(
                dir.join(format!("{stem}.png")),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing image"),
            )
        })
}

fn load_pair(root: &Path, id: &str) -> Result<ImagePair> {
    let dir = root.join(id);
    let hr = load_image(find(&dir, "hr")?)?;
    let mut lr = load_image(find(&dir, "lr")?)?;
    let (hh, hw) = image_dims(&hr)?;
    if image_dims(&lr)? == (hh / 2, hw / 2) && hh % 2 == 0 && hw % 2 == 0 {
        lr = bicubic_upsample(&lr, 2)?;
    }
    ImagePair::new(id, lr, hr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pair(id: &str, v: f64) -> ImagePair {
        let img = Tensor::new(&[12, 16], (0..192).map(|i| ((i % 7) as f64 * v) / 255.0).collect()).unwrap();
        ImagePair::new(id, img.clone(), img).unwrap()
    }

    #[test]
    fn holdout_takes_last_quarter() {
        let ds = Dataset::with_holdout((0..8).map(|i| pair(&format!("p{i}"), 1.0)).collect());
        let (train, test) = ds.train_test().unwrap();
        assert_eq!((train.len(), test.len()), (6, 2));
        assert_eq!(test[0].id, "p6");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::with_holdout(vec![pair("a", 3.0), pair("b", 5.0)]);
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_manifest_means_patch_split_and_half_size_lr_is_upsampled() {
        let dir = tempfile::tempdir().unwrap();
        let p = pair("x", 2.0);
        save_image(&p.hr, dir.path().join("x/hr.png")).unwrap();
        save_image(&Tensor::full(&[6, 8], 0.5), dir.path().join("x/lr.pgm")).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.entries[0].1, PairRole::Patch);
        assert_eq!(ds.entries[0].0.dims(), (12, 16));
        let (train, test) = ds.train_test().unwrap();
        assert_eq!((train.len(), test.len()), (9, 3));
    }

    #[test]
    fn bad_manifest_role_is_config_error() {
        assert!(matches!(parse_manifest("a = maybe"), Err(Error::Config(_))));
        assert_eq!(parse_manifest("# c\n\nb = test # x\n").unwrap(), vec![("b".into(), PairRole::Test)]);
    }
}
