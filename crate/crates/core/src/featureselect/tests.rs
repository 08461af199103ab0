use super::*;
use crate::error::Error;
use crate::ising::{enumerate_constrained_boltzmann, SpinConfig};
use crate::qaoa::prepare_initial_state;
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

/// Neumaier-compensated sum.
fn compensated(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let u = s + t;
        c += if s.abs() >= t.abs() { (s - u) + t } else { (t - u) + s };
        s = u;
    }
    s + c
}

/// Direct summation over a joint table built by a plain scan over examples.
fn oracle_mi(a: &[usize], b: &[usize], na: usize, nb: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![vec![0usize; nb]; na];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1;
    }
    let pa: Vec<f64> = (0..na).map(|x| joint[x].iter().sum::<usize>() as f64 / n).collect();
    let pb: Vec<f64> = (0..nb).map(|y| (0..na).map(|x| joint[x][y]).sum::<usize>() as f64 / n).collect();
    let mut terms = Vec::new();
    for x in 0..na {
        for y in 0..nb {
            let p = joint[x][y] as f64 / n;
            if p > 0.0 {
                terms.push(p * (p.ln() - pa[x].ln() - pb[y].ln()));
            }
        }
    }
    compensated(terms).max(0.0)
}

fn column(ds: &LabeledDataset, i: usize) -> Vec<usize> {
    (0..ds.n_samples()).map(|n| ds.pixel(n, i) as usize).collect()
}

fn labels(ds: &LabeledDataset) -> Vec<usize> {
    (0..ds.n_samples()).map(|n| ds.label(n) as usize).collect()
}

fn entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

#[test]
fn binarize_rules() {
    let raw = RawDataset {
        rows: 2,
        cols: 2,
        pixels: vec![0, 0, 0, 0, 127, 128, 255, 3],
        labels: vec![0, 2],
    };
    let ds = binarize(&raw, DEFAULT_BINARIZE_THRESHOLD);
    assert_eq!(ds.n_classes(), 3);
    assert_eq!((0..4).map(|i| ds.pixel(0, i)).collect::<Vec<_>>(), vec![0; 4]);
    assert_eq!((0..4).map(|i| ds.pixel(1, i)).collect::<Vec<_>>(), vec![0, 1, 1, 0]);
    let none = binarize(&raw, 255);
    assert!((0..2).all(|n| (0..4).all(|i| none.pixel(n, i) == 0)));
}

#[test]
fn binarized_ones_fraction_matches_recount() {
    let mut r = rng::stream(3, 0);
    let raw = RawDataset {
        rows: 5,
        cols: 7,
        pixels: (0..200 * 35).map(|_| r.random::<u8>()).collect(),
        labels: (0..200).map(|_| r.random_range(0..10u8)).collect(),
    };
    let ds = binarize(&raw, 100);
    for i in 0..35 {
        let naive = (0..200).filter(|&n| raw.image(n)[i] > 100).count() as u64;
        assert_eq!(ds.ones_count(i), naive);
    }
}

#[test]
fn dataset_rejects_bad_input() {
    assert!(matches!(LabeledDataset::new(vec![0, 2], vec![0], 2, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(LabeledDataset::new(vec![0, 1], vec![2], 2, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(LabeledDataset::new(vec![0], vec![0], 2, 2), Err(Error::InvalidArgument(_))));
}

#[test]
fn mi_trivial_cases() {
    // pixel 0 constant, pixel 1 equals the balanced label, pixel 2 = pixel 1
    let n = 100;
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut pixels = Vec::new();
    for &y in &labels {
        pixels.extend([1, y, y]);
    }
    let ds = LabeledDataset::new(pixels, labels, 3, 2).unwrap();
    assert_eq!(mutual_info_feature_label(&ds, 0), 0.0);
    assert!((mutual_info_feature_label(&ds, 1) - 2f64.ln()).abs() < 1e-12);
    assert!((mutual_info_pairwise(&ds, 1, 1) - 2f64.ln()).abs() < 1e-12);
    assert!((mutual_info_pairwise(&ds, 1, 2) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(mutual_info_pairwise(&ds, 0, 1), 0.0);
}

#[test]
fn self_information_is_entropy() {
    let ds = synthetic_dataset(777, 9, 4, 1).unwrap();
    for i in 0..9 {
        let p = ds.ones_count(i) as f64 / 777.0;
        assert!((mutual_info_pairwise(&ds, i, i) - entropy(p)).abs() < 1e-12);
    }
}

#[test]
fn mi_matches_direct_summation() {
    let ds = synthetic_dataset(1500, 15, 7, 11).unwrap();
    let y = labels(&ds);
    for i in 0..15 {
        let zi = column(&ds, i);
        let want = oracle_mi(&zi, &y, 2, 7);
        assert!((mutual_info_feature_label(&ds, i) - want).abs() < 1e-12, "pixel {i}");
        for j in 0..15 {
            let want = oracle_mi(&zi, &column(&ds, j), 2, 2);
            let got = mutual_info_pairwise(&ds, i, j);
            assert!((got - want).abs() < 1e-12, "pair {i},{j}");
            assert_eq!(got, mutual_info_pairwise(&ds, j, i));
        }
    }
}

#[test]
fn independent_pixels_have_small_mi() {
    let mut r = rng::stream(5, 0);
    let n = 100_000;
    let pixels: Vec<u8> = (0..2 * n).map(|_| r.random_range(0..2u8)).collect();
    let ds = LabeledDataset::new(pixels, vec![0; n], 2, 1).unwrap();
    assert!(mutual_info_pairwise(&ds, 0, 1) < 5e-4);
}

#[test]
fn table_and_csv() {
    let ds = synthetic_dataset(300, 5, 3, 2).unwrap();
    let mi = MiTable::compute(&ds);
    assert_eq!(mi.pairwise.len(), 10);
    assert_eq!(mi.pair(3, 1), mi.pair(1, 3));
    assert!(mi.feature_label.iter().chain(mi.pairwise.values()).all(|&v| v >= 0.0));
    let mut out = Vec::new();
    mi.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 + 10);
    assert!(text.starts_with("i,j,value\n0,label,"));
}

#[test]
fn qubo_structure() {
    let ds = synthetic_dataset(500, 12, 4, 8).unwrap();
    let mi = MiTable::compute(&ds);
    let k = 4;
    let q = build_feature_qubo(&mi, k, 1e-3).unwrap();
    assert_eq!(q.konst(), 0.0);
    for i in 0..12 {
        assert_eq!(q.lin()[i], -mi.feature_label[i]);
    }
    for (i, j, w) in q.edges() {
        assert!(w >= 1e-3);
        assert!((w - mi.pair(i, j) / 3.0).abs() < 1e-15);
    }
    let dropped = mi.pairwise.values().filter(|&&v| v / 3.0 < 1e-3).count();
    assert_eq!(q.num_edges() + dropped, mi.pairwise.len());

    assert!(build_feature_qubo(&mi, k, f64::INFINITY).unwrap().num_edges() == 0);
    assert!(matches!(build_feature_qubo(&mi, 1, 0.0), Err(Error::InvalidArgument(_))));
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[test]
fn exhaustive_mask_oracle() {
    let ds = synthetic_dataset(2000, 12, 5, 21).unwrap();
    let mi = MiTable::compute(&ds);
    let k = 4;
    // objective straight from the MI table over all C(12, 4) masks
    let masks = combinations(12, k);
    assert_eq!(masks.len(), 495);
    let score = |m: &[usize]| {
        let mut e = -m.iter().map(|&i| mi.feature_label[i]).sum::<f64>();
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                e += mi.pair(m[a], m[b]) / (k - 1) as f64;
            }
        }
        e
    };
    let best = masks.iter().min_by(|a, b| score(a).total_cmp(&score(b))).unwrap();

    let q = build_feature_qubo(&mi, k, 0.0).unwrap();
    let dist = enumerate_constrained_boltzmann(&q, k, 1.0).unwrap();
    let (arg, e_min) = dist
        .energies
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &e)| (i, e))
        .unwrap();
    assert!((e_min - score(best)).abs() < 1e-12);
    let chosen: Vec<usize> = (0..12).filter(|&i| dist.states[arg].get(i) == 1).collect();
    assert_eq!(&chosen, best);
    for m in &masks {
        let x = SpinConfig::from_ones(12, m).unwrap();
        assert!((q.energy(&x).unwrap() - score(m)).abs() < 1e-12);
    }
}

#[test]
fn separable_objective_picks_top_linear_terms() {
    let mi = MiTable {
        feature_label: vec![0.3, 0.1, 0.5, 0.0, 0.4, 0.2],
        pairwise: BTreeMap::new(),
    };
    let q = build_feature_qubo(&mi, 3, 1e-3).unwrap();
    let dist = enumerate_constrained_boltzmann(&q, 3, 1.0).unwrap();
    let arg = (0..dist.len())
        .min_by(|&a, &b| dist.energies[a].total_cmp(&dist.energies[b]))
        .unwrap();
    let chosen: Vec<usize> = (0..6).filter(|&i| dist.states[arg].get(i) == 1).collect();
    assert_eq!(chosen, vec![0, 2, 4]);
    assert_eq!(linear_terms_mask(&mi, 3).unwrap().indices(), vec![0, 2, 4]);
}

#[test]
fn masks() {
    let m = FeatureMask::from_indices(10, &[7, 2, 5]).unwrap();
    assert_eq!((m.k(), m.len()), (3, 10));
    assert_eq!(m.indices(), vec![2, 5, 7]);
    assert!(FeatureMask::from_indices(10, &[2, 2]).is_err());
    assert!(FeatureMask::from_indices(10, &[10]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mask.txt");
    m.save(&p).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "2\n5\n7\n");
    assert_eq!(FeatureMask::load(&p, 10).unwrap(), m);

    let r = random_mask(50, 20, 4).unwrap();
    assert_eq!(r.k(), 20);
    assert_eq!(r, random_mask(50, 20, 4).unwrap());
    assert_ne!(r, random_mask(50, 20, 5).unwrap());
    assert!(random_mask(5, 6, 0).is_err());
}

#[test]
fn biased_angle() {
    assert_eq!(biased_angle_for_target_weight(8, 0.0).unwrap(), 0.0);
    let half = biased_angle_for_target_weight(8, 4.0).unwrap();
    assert!((half - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    assert!(biased_angle_for_target_weight(8, 9.0).is_err());
    assert!(biased_angle_for_target_weight(8, -0.1).is_err());

    let theta = biased_angle_for_target_weight(16, 2.0).unwrap();
    let state = prepare_initial_state(16, theta).unwrap();
    let mut r = rng::stream(9, 0);
    let shots = state.sample(10_000, &mut r);
    let mean = shots.iter().map(|s| s.count_ones() as f64).sum::<f64>() / shots.len() as f64;
    assert!((mean - 2.0).abs() < 0.1, "mean weight {mean}");
}

#[test]
fn separable_classes_are_learned() {
    let mut r = rng::stream(12, 0);
    let (n, p) = (600, 6);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let y = r.random_range(0..2u8);
        labels.push(y);
        pixels.push(y);
        pixels.extend((1..p).map(|_| r.random_range(0..2u8)));
    }
    let ds = LabeledDataset::new(pixels, labels, p, 2).unwrap();
    let (train, test) = split(&ds, 400);
    let mask = FeatureMask::from_indices(p, &[0, 3]).unwrap();
    let acc = evaluate_mask(&train, &test, &mask, &LogRegConfig::default()).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
    assert_eq!(acc, evaluate_mask(&train, &test, &mask, &LogRegConfig::default()).unwrap());
}

fn split(ds: &LabeledDataset, at: usize) -> (LabeledDataset, LabeledDataset) {
    let p = ds.n_pixels();
    let part = |range: std::ops::Range<usize>| {
        let pixels = range.clone().flat_map(|n| (0..p).map(move |i| (n, i))).map(|(n, i)| ds.pixel(n, i)).collect();
        let labels = range.map(|n| ds.label(n)).collect();
        LabeledDataset::new(pixels, labels, p, ds.n_classes()).unwrap()
    };
    (part(0..at), part(at..ds.n_samples()))
}

#[test]
fn constant_features_give_majority_rate() {
    let n = 400;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
    let ds = LabeledDataset::new(vec![1; n * 2], labels, 2, 2).unwrap();
    let (train, test) = split(&ds, 300);
    let mask = FeatureMask::from_indices(2, &[0, 1]).unwrap();
    let acc = evaluate_mask(&train, &test, &mask, &LogRegConfig::default()).unwrap();
    assert!((acc - 0.75).abs() < 1e-12);
    let empty = FeatureMask::from_indices(2, &[]).unwrap();
    assert!(matches!(
        evaluate_mask(&train, &test, &empty, &LogRegConfig::default()),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn mi_selection_beats_random_on_synthetic_data() {
    let ds = synthetic_dataset(3000, 60, 6, 31).unwrap();
    let (train, test) = split(&ds, 2000);
    let mi = MiTable::compute(&train);
    let cfg = LogRegConfig::default();
    let top = evaluate_mask(&train, &test, &linear_terms_mask(&mi, 8).unwrap(), &cfg).unwrap();
    let rand_mean = (0..5)
        .map(|s| evaluate_mask(&train, &test, &random_mask(60, 8, s).unwrap(), &cfg).unwrap())
        .sum::<f64>()
        / 5.0;
    assert!(top > rand_mean, "top {top} random {rand_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mi_nonnegative_and_symmetric(seed in 0u64..1000, n in 2usize..200, classes in 2usize..5) {
        let ds = synthetic_dataset(n, 6, classes, seed).unwrap();
        for i in 0..6 {
            prop_assert!(mutual_info_feature_label(&ds, i) >= 0.0);
            for j in 0..6 {
                let a = mutual_info_pairwise(&ds, i, j);
                prop_assert!(a >= 0.0);
                prop_assert!(a == mutual_info_pairwise(&ds, j, i));
            }
        }
    }
}
