//! Dataset manifests and lesion annotations.
//!
//! A manifest is a JSON array of cases:
//!
//! ```json
//! [{
//!   "case_id": "p001",
//!   "image": "images/p001.nii.gz",
//!   "mask": "masks/p001.nii.gz",
//!   "prostate_mask": null,
//!   "fold": 0,
//!   "split": "TRAIN",
//!   "lesions": [{"id": 1, "gleason": "3+4", "zone": "PZ"}]
//! }]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{io_err, json_err, Error, Result};
use crate::volumes::{lesion_volume_cc, load_label_volume, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Zone {
    Pz,
    Tz,
    As,
    Other,
    Unlabeled,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Pz => "PZ",
            Zone::Tz => "TZ",
            Zone::As => "AS",
            Zone::Other => "OTHER",
            Zone::Unlabeled => "UNLABELED",
        }
    }
}

/// Gleason pattern pair, e.g. 3+4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Gleason {
    pub primary: u8,
    pub secondary: u8,
}

impl Gleason {
    pub fn new(primary: u8, secondary: u8) -> Result<Self> {
        let ok = |v: u8| (3..=5).contains(&v);
        if !ok(primary) || !ok(secondary) {
            return Err(Error::Manifest(format!(
                "Gleason patterns must be in 3..=5, got {primary}+{secondary}"
            )));
        }
        Ok(Self { primary, secondary })
    }

    pub fn sum(self) -> u8 {
        self.primary + self.secondary
    }
}

impl fmt::Display for Gleason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.primary, self.secondary)
    }
}

impl FromStr for Gleason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('+')
            .ok_or_else(|| Error::Manifest(format!("Gleason score {s:?} is not of the form P+S")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u8>()
                .map_err(|_| Error::Manifest(format!("Gleason score {s:?} is not numeric")))
        };
        Gleason::new(parse(a)?, parse(b)?)
    }
}

impl Serialize for Gleason {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Gleason {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One annotated lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    #[serde(rename = "id")]
    pub lesion_id: u16,
    #[serde(default)]
    pub gleason: Option<Gleason>,
    #[serde(default, deserialize_with = "zone_or_unlabeled")]
    pub zone: Zone,
    /// Filled from the mask during validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_cc: Option<f64>,
}

impl Default for Zone {
    fn default() -> Self {
        Zone::Unlabeled
    }
}

fn zone_or_unlabeled<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Zone, D::Error> {
    Ok(Option::<Zone>::deserialize(d)?.unwrap_or(Zone::Unlabeled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(rename = "mask")]
    pub mask_path: PathBuf,
    #[serde(rename = "prostate_mask", default, skip_serializing_if = "Option::is_none")]
    pub prostate_mask_path: Option<PathBuf>,
    #[serde(default)]
    pub fold: Option<u8>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub lesions: Vec<LesionRecord>,
}

impl CaseManifest {
    /// Checks the record-level invariants that need no file access.
    pub fn validate_records(&self) -> Result<()> {
        let fail = |message: String| Error::CaseValidation {
            case_id: self.case_id.clone(),
            message,
        };
        if self.case_id.is_empty() {
            return Err(fail("empty case_id".into()));
        }
        if let Some(f) = self.fold {
            if f > 4 {
                return Err(fail(format!("fold {f} outside 0..=4")));
            }
        }
        let mut seen = BTreeSet::new();
        for lesion in &self.lesions {
            if lesion.lesion_id == 0 {
                return Err(fail("lesion id 0 is reserved for background".into()));
            }
            if !seen.insert(lesion.lesion_id) {
                return Err(fail(format!("duplicate lesion id {}", lesion.lesion_id)));
            }
        }
        Ok(())
    }

    /// Checks lesion records against the mask and fills `volume_cc`.
    /// Mask labels without a record gain an unlabeled record.
    pub fn validate_against_mask(&mut self, mask: &LabelVolume) -> Result<()> {
        self.validate_records()?;
        let ids: BTreeSet<u16> = mask.label_ids().into_iter().collect();
        for lesion in &self.lesions {
            if !ids.contains(&lesion.lesion_id) {
                return Err(Error::CaseValidation {
                    case_id: self.case_id.clone(),
                    message: format!("lesion id {} is absent from the mask", lesion.lesion_id),
                });
            }
        }
        for &id in &ids {
            if !self.lesions.iter().any(|l| l.lesion_id == id) {
                self.lesions.push(LesionRecord {
                    lesion_id: id,
                    gleason: None,
                    zone: Zone::Unlabeled,
                    volume_cc: None,
                });
            }
        }
        self.lesions.sort_by_key(|l| l.lesion_id);
        for lesion in &mut self.lesions {
            lesion.volume_cc = Some(lesion_volume_cc(mask, lesion.lesion_id)?);
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.image_path);
        join(&mut self.mask_path);
        if let Some(p) = self.prostate_mask_path.as_mut() {
            join(p);
        }
    }
}

/// Per-case outcome of manifest validation.
#[derive(Debug)]
pub struct ManifestReport {
    pub cases: Vec<CaseManifest>,
    pub errors: Vec<Error>,
}

impl ManifestReport {
    pub fn into_result(self) -> Result<Vec<CaseManifest>> {
        match self.errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.cases),
        }
    }
}

/// Parses a manifest and validates each case against its mask. Cases that
/// fail validation are reported and left out of `cases`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ManifestReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let raw: Vec<CaseManifest> =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut seen = BTreeSet::new();
    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for mut case in raw {
        if !seen.insert(case.case_id.clone()) {
            errors.push(Error::CaseValidation {
                case_id: case.case_id.clone(),
                message: "duplicate case_id".into(),
            });
            continue;
        }
        case.resolve(&base);
        let checked = load_label_volume(&case.mask_path).and_then(|mask| case.validate_against_mask(&mask));
        match checked {
            Ok(()) => cases.push(case),
            Err(e) => errors.push(e),
        }
    }
    Ok(ManifestReport { cases, errors })
}

/// Writes a manifest, with paths made relative to the manifest directory
/// where possible.
pub fn save_manifest(cases: &[CaseManifest], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let cases: Vec<CaseManifest> = cases
        .iter()
        .map(|c| CaseManifest {
            image_path: rel(&c.image_path),
            mask_path: rel(&c.mask_path),
            prostate_mask_path: c.prostate_mask_path.as_deref().map(rel),
            ..c.clone()
        })
        .collect();
    let json = serde_json::to_string_pretty(&cases).map_err(json_err(path))?;
    if !base.as_os_str().is_empty() {
        std::fs::create_dir_all(base).map_err(io_err(base))?;
    }
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

/// Builds a manifest from a ProstateX-style release laid out as
///
/// ```text
/// root/
///   <case_id>/adc.nii.gz
///   <case_id>/lesions.nii.gz
///   <case_id>/prostate.nii.gz      (optional)
///   <case_id>/lesions.json         (optional: [{"id", "gleason", "zone"}])
/// ```
///
/// Cases missing either the ADC map or the lesion mask are skipped with a
/// warning. Case order is sorted by directory name.
pub fn prostatex_manifest(root: impl AsRef<Path>) -> Result<Vec<CaseManifest>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let case_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let find = |stem: &str| {
            ["nii.gz", "nii"]
                .iter()
                .map(|ext| dir.join(format!("{stem}.{ext}")))
                .find(|p| p.exists())
        };
        let (Some(image), Some(mask)) = (find("adc"), find("lesions")) else {
            log::warn!("skipping {}: adc or lesions volume missing", dir.display());
            continue;
        };
        let meta = dir.join("lesions.json");
        let lesions = if meta.exists() {
            let text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
            serde_json::from_str(&text).map_err(json_err(&meta))?
        } else {
            Vec::new()
        };
        out.push(CaseManifest {
            case_id,
            image_path: image,
            mask_path: mask,
            prostate_mask_path: find("prostate"),
            fold: None,
            split: Split::Test,
            lesions,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{save_volume, Geometry, Volume};
    use ndarray::Array3;

    fn write_mask(dir: &Path, name: &str, ids: &[u16]) -> PathBuf {
        let mut data = Array3::<u16>::zeros((4, 8, 8));
        for (k, &id) in ids.iter().enumerate() {
            data[[1, 2 * k, 2]] = id;
            data[[1, 2 * k, 3]] = id;
        }
        let path = dir.join(name);
        save_volume(&Volume::new(data, Geometry::with_spacing([0.625, 0.625, 3.0])).unwrap(), &path).unwrap();
        path
    }

    #[test]
    fn parses_single_case() {
        let dir = tempfile::tempdir().unwrap();
        write_mask(dir.path(), "m.nii", &[1]);
        let manifest = dir.path().join("manifest.json");
        std::fs::write(
            &manifest,
            r#"[{"case_id":"c1","image":"i.nii","mask":"m.nii","fold":2,"split":"TRAIN",
                "lesions":[{"id":1,"gleason":"3+4","zone":"PZ"}]}]"#,
        )
        .unwrap();
        let cases = load_manifest(&manifest).unwrap().into_result().unwrap();
        assert_eq!(cases.len(), 1);
        let l = &cases[0].lesions[0];
        assert_eq!(l.gleason, Some(Gleason { primary: 3, secondary: 4 }));
        assert_eq!(l.zone, Zone::Pz);
        let expected = 2.0 * 0.625 * 0.625 * 3.0 / 1000.0;
        assert!((l.volume_cc.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        std::fs::write(&manifest, "[]").unwrap();
        assert!(load_manifest(&manifest).unwrap().into_result().unwrap().is_empty());
    }

    #[test]
    fn absent_lesion_is_a_case_error() {
        let dir = tempfile::tempdir().unwrap();
        write_mask(dir.path(), "m.nii", &[1]);
        let manifest = dir.path().join("manifest.json");
        std::fs::write(
            &manifest,
            r#"[{"case_id":"c1","image":"i.nii","mask":"m.nii","lesions":[{"id":3,"gleason":null,"zone":null}]},
               {"case_id":"c2","image":"i.nii","mask":"m.nii","lesions":[]}]"#,
        )
        .unwrap();
        let report = load_manifest(&manifest).unwrap();
        assert_eq!(report.cases.len(), 1);
        assert_eq!(report.cases[0].case_id, "c2");
        // unlisted mask label gains an unlabeled record
        assert_eq!(report.cases[0].lesions[0].zone, Zone::Unlabeled);
        assert_eq!(report.errors.len(), 1);
        assert!(report.errors[0].to_string().contains("c1"));
    }

    #[test]
    fn gleason_parsing() {
        assert_eq!("4+3".parse::<Gleason>().unwrap().sum(), 7);
        assert!("2+3".parse::<Gleason>().is_err());
        assert!("7".parse::<Gleason>().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = write_mask(dir.path(), "m.nii", &[1, 2]);
        let case = CaseManifest {
            case_id: "x".into(),
            image_path: dir.path().join("i.nii"),
            mask_path: mask,
            prostate_mask_path: None,
            fold: Some(1),
            split: Split::Val,
            lesions: vec![LesionRecord {
                lesion_id: 2,
                gleason: Some(Gleason::new(4, 4).unwrap()),
                zone: Zone::Tz,
                volume_cc: None,
            }],
        };
        let path = dir.path().join("out.json");
        save_manifest(&[case], &path).unwrap();
        let cases = load_manifest(&path).unwrap().into_result().unwrap();
        assert_eq!(cases[0].lesions.len(), 2);
        assert_eq!(cases[0].lesions[1].gleason.unwrap().to_string(), "4+4");
        assert_eq!(cases[0].split, Split::Val);
    }

    #[test]
    fn prostatex_layout() {
        let dir = tempfile::tempdir().unwrap();
        for case in ["ProstateX-0001", "ProstateX-0000"] {
            let d = dir.path().join(case);
            std::fs::create_dir_all(&d).unwrap();
            write_mask(&d, "lesions.nii.gz", &[1]);
            write_mask(&d, "adc.nii.gz", &[]);
        }
        std::fs::create_dir_all(dir.path().join("incomplete")).unwrap();
        let cases = prostatex_manifest(dir.path()).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[0].case_id, "ProstateX-0000");
        assert!(cases[0].prostate_mask_path.is_none());
    }
}
