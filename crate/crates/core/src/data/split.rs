use crate::nn::Rng;

use super::{DataError, DatasetIndex, Result, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndex {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
    pub ratio: f64,
}

/// Number of training samples taken from a class of `n`: `ratio * n`
/// rounded half up.
pub(crate) fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 + 0.5).floor() as usize).min(n)
}

/// Shuffles each class with one seeded generator (classes in index order)
/// and cuts it at `ratio`.
pub fn stratified_split(index: &DatasetIndex, ratio: f64, seed: u64) -> Result<SplitIndex> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut per_class: Vec<Vec<Sample>> = vec![Vec::new(); index.classes.len()];
    for s in &index.samples {
        per_class[s.class].push(s.clone());
    }
    if let Some((c, v)) = per_class.iter().enumerate().find(|(_, v)| v.len() < 2) {
        return Err(DataError::ClassTooSmall { class: index.classes[c].clone(), count: v.len() });
    }
    let mut rng = Rng::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut samples in per_class {
        rng.shuffle(&mut samples);
        let cut = train_count(samples.len(), ratio);
        test.extend(samples.split_off(cut));
        train.extend(samples);
    }
    Ok(SplitIndex { train, test, seed, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::path::PathBuf;

    fn index(counts: &[usize]) -> DatasetIndex {
        let samples = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| Sample { path: PathBuf::from(format!("{c}/{i}.png")), class: c }))
            .collect();
        DatasetIndex {
            classes: (0..counts.len()).map(|c| c.to_string()).collect(),
            samples,
            counts: counts.to_vec(),
            skipped: 0,
        }
    }

    #[test]
    fn eighty_twenty_on_thousand() {
        let s = stratified_split(&index(&[1000; 35]), 0.8, 1).unwrap();
        for c in 0..35 {
            assert_eq!(s.train.iter().filter(|x| x.class == c).count(), 800);
            assert_eq!(s.test.iter().filter(|x| x.class == c).count(), 200);
        }
    }

    #[test]
    fn ten_samples() {
        let s = stratified_split(&index(&[10]), 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(train_count(5, 0.5), 3);
        assert_eq!(train_count(3, 0.5), 2);
        assert_eq!(train_count(7, 0.8), 6);
    }

    #[test]
    fn same_seed_same_split() {
        let idx = index(&[7, 9, 12]);
        assert_eq!(stratified_split(&idx, 0.8, 11).unwrap(), stratified_split(&idx, 0.8, 11).unwrap());
        assert_ne!(stratified_split(&idx, 0.8, 11).unwrap().train, stratified_split(&idx, 0.8, 12).unwrap().train);
    }

    #[test]
    fn tiny_class_named_in_error() {
        let mut idx = index(&[5, 1]);
        idx.classes[1] = "Q".into();
        let err = stratified_split(&idx, 0.8, 0).unwrap_err();
        assert!(matches!(err, DataError::ClassTooSmall { ref class, count: 1 } if class == "Q"));
    }

    #[test]
    fn ratio_bounds() {
        let idx = index(&[4]);
        assert!(stratified_split(&idx, 0.0, 0).is_err());
        assert!(stratified_split(&idx, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_partition(counts in proptest::collection::vec(2usize..30, 1..8), ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let idx = index(&counts);
            let s = stratified_split(&idx, ratio, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.test.len(), idx.len());
            let train: HashSet<_> = s.train.iter().collect();
            let test: HashSet<_> = s.test.iter().collect();
            prop_assert!(train.is_disjoint(&test));
            let all: HashSet<_> = idx.samples.iter().collect();
            prop_assert_eq!(train.union(&test).copied().collect::<HashSet<_>>(), all);
            for (c, &n) in counts.iter().enumerate() {
                prop_assert_eq!(s.train.iter().filter(|x| x.class == c).count(), train_count(n, ratio));
            }
        }
    }
}
