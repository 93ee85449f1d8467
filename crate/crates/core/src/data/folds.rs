use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::Dataset;
use crate::error::{Error, Result};

/// Disjoint, covering assignment of sample indices to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted sample indices held out in each fold.
    pub folds: Vec<Vec<usize>>,
}

/// Shuffles each class with `seed` and deals its samples round-robin; the
/// dealing position carries over between classes so fold sizes stay balanced.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::Data(format!("class {c} has {} samples, fewer than {k} folds", members.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.folds.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, f)| f.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Fold index of each sample.
    pub fn assignment(&self, n: usize) -> Vec<Option<usize>> {
        let mut a = vec![None; n];
        for (f, members) in self.folds.iter().enumerate() {
            for &i in members {
                a[i] = Some(f);
            }
        }
        a
    }

    /// Tab-separated `class  source  fold` lines, one per sample.
    pub fn manifest(&self, dataset: &Dataset) -> String {
        let mut out = String::from("class\tsource\tfold\n");
        for (img, fold) in dataset.images.iter().zip(self.assignment(dataset.len())) {
            let fold = fold.map_or_else(|| "-".to_string(), |f| f.to_string());
            let _ = writeln!(out, "{}\t{}\t{fold}", dataset.class_names[img.label], img.source);
        }
        out
    }
}
