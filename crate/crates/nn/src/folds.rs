//! Patient-level k-fold partitions.

use std::collections::BTreeMap;

use dilseg_core::hashing::config_hash;
use dilseg_core::manifest::CaseManifest;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fold index per patient, ordered by patient id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.folds.get(patient).copied()
    }

    /// Patients held out in `fold`.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(p, _)| p.as_str()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Digest of the assignment; equal for every architecture trained on it.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Splits cases into (training, validation) for `fold`.
    pub fn split<'a>(&self, cases: &'a [CaseManifest], fold: usize) -> Result<(Vec<&'a CaseManifest>, Vec<&'a CaseManifest>)> {
        if fold >= self.k {
            return Err(Error::InvalidConfig(format!("fold {fold} outside 0..{}", self.k)));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for c in cases {
            match self.fold_of(&c.case_id) {
                Some(f) if f == fold => val.push(c),
                Some(_) => train.push(c),
                None => return Err(Error::InvalidConfig(format!("case {} has no fold", c.case_id))),
            }
        }
        Ok((train, val))
    }
}

/// Partitions patients into `k` folds whose sizes differ by at most one.
///
/// Each entry is (patient id, stratum); duplicate ids are one patient and
/// keep their highest stratum. Without stratification patients are shuffled
/// and dealt round-robin; with it they are dealt stratum by stratum so each
/// fold receives a near-equal share of every stratum.
pub fn make_folds(patients: &[(String, u32)], k: usize, seed: u64, stratify: bool) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig("at least two folds are required".into()));
    }
    let mut unique: BTreeMap<&str, u32> = BTreeMap::new();
    for (id, stratum) in patients {
        let e = unique.entry(id.as_str()).or_insert(*stratum);
        *e = (*e).max(*stratum);
    }
    if unique.len() < k {
        return Err(Error::EmptyData(format!("{} patients cannot fill {k} folds", unique.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<&str> = if stratify {
        let mut groups: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for (id, s) in &unique {
            groups.entry(*s).or_default().push(id);
        }
        let mut all = Vec::with_capacity(unique.len());
        for mut g in groups.into_values() {
            g.shuffle(&mut rng);
            all.extend(g);
        }
        all
    } else {
        let mut all: Vec<&str> = unique.keys().copied().collect();
        all.shuffle(&mut rng);
        all
    };
    let folds = order.iter().enumerate().map(|(i, id)| (id.to_string(), i % k)).collect();
    Ok(FoldAssignment { k, folds })
}

/// Highest Gleason sum over a case's lesions, 0 when none is graded.
pub fn gleason_stratum(case: &CaseManifest) -> u32 {
    case.lesions.iter().filter_map(|l| l.gleason).map(|g| g.sum() as u32).max().unwrap_or(0)
}

/// Folds for a manifest. Cases that all carry a `fold` keep it; otherwise a
/// seeded partition is drawn with one patient per case.
pub fn folds_for_cases(cases: &[CaseManifest], k: usize, seed: u64, stratify: bool) -> Result<FoldAssignment> {
    if !cases.is_empty() && cases.iter().all(|c| c.fold.is_some_and(|f| (f as usize) < k)) {
        let folds = cases.iter().map(|c| (c.case_id.clone(), c.fold.unwrap_or(0) as usize)).collect();
        return Ok(FoldAssignment { k, folds });
    }
    let patients: Vec<(String, u32)> = cases.iter().map(|c| (c.case_id.clone(), gleason_stratum(c))).collect();
    make_folds(&patients, k, seed, stratify)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patients(n: usize) -> Vec<(String, u32)> {
        (0..n).map(|i| (format!("p{i:03}"), (i % 3) as u32 + 6)).collect()
    }

    #[test]
    fn ten_patients_five_folds_of_two() {
        let f = make_folds(&patients(10), 5, 1, false).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
    }

    #[test]
    fn cohort_of_125_gives_folds_of_25() {
        for stratify in [false, true] {
            let f = make_folds(&patients(125), 5, 7, stratify).unwrap();
            assert_eq!(f.sizes(), vec![25; 5]);
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = make_folds(&patients(30), 5, 3, false).unwrap();
        let b = make_folds(&patients(30), 5, 3, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let c = make_folds(&patients(30), 5, 4, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_patients() {
        assert!(make_folds(&patients(4), 5, 0, false).is_err());
        // duplicated ids count once
        let mut p = patients(4);
        p.push(p[0].clone());
        assert!(make_folds(&p, 5, 0, false).is_err());
    }

    #[test]
    fn stratified_folds_balance_strata() {
        let f = make_folds(&patients(30), 5, 2, true).unwrap();
        for fold in 0..5 {
            let strata: Vec<u32> = f.members(fold).iter().map(|id| {
                let i: usize = id[1..].parse().unwrap();
                (i % 3) as u32
            }).collect();
            for s in 0..3 {
                assert_eq!(strata.iter().filter(|&&v| v == s).count(), 2);
            }
        }
    }

    proptest! {
        #[test]
        fn partition_properties(n in 5usize..80, k in 2usize..6, seed: u64, stratify: bool) {
            prop_assume!(n >= k);
            let f = make_folds(&patients(n), k, seed, stratify).unwrap();
            prop_assert_eq!(f.folds.len(), n);
            let sizes = f.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let total: usize = (0..k).map(|i| f.members(i).len()).sum();
            prop_assert_eq!(total, n);
        }
    }
}
