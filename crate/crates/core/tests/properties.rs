use std::collections::{BTreeMap, HashMap};

use archspy_core::calibrate::short_attack;
use archspy_core::catalog::{
    attributes_of, build_catalog, Attribute, AttributeVector, FunctionCode,
};
use archspy_core::defense::eval_decoy;
use archspy_core::fingerprint::{
    build_dataset, fit_tree, label_entropy, mutual_information, pca, train_tree, Dataset, Task,
};
use archspy_core::probe::{classify_latency, otsu_threshold, Access};
use archspy_core::trace::{emit_trace, merge_decoy, observe, DecoySpec, Mode, NoiseModel};
use archspy_core::tracefile::{self, TraceDoc};
use proptest::prelude::*;

fn is_subsequence(short: &[FunctionCode], long: &[FunctionCode]) -> bool {
    let mut it = long.iter();
    short.iter().all(|c| it.any(|d| d == c))
}

fn arch_names() -> Vec<String> {
    build_catalog().names()
}

fn vector() -> impl Strategy<Value = AttributeVector> {
    prop::array::uniform8(0u32..200).prop_map(|a| AttributeVector(a.map(|x| f64::from(x) / 4.0)))
}

fn rates() -> impl Strategy<Value = BTreeMap<FunctionCode, f64>> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..0.5f64).prop_map(|(conv, merge, relu)| {
        BTreeMap::from([
            (FunctionCode::Conv, conv),
            (FunctionCode::Merge, merge),
            (FunctionCode::Relu, relu),
        ])
    })
}

/// Small labelled datasets with integer features.
fn dataset(max_rows: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((prop::array::uniform8(0u8..5), 0u8..4), 2..max_rows).prop_map(|rows| {
        let (features, labels): (Vec<[f64; 8]>, Vec<String>) = rows
            .into_iter()
            .map(|(r, l)| (r.map(f64::from), format!("L{l}")))
            .unzip();
        Dataset {
            task: Task::All13,
            features,
            labels,
            meta: Vec::new(),
        }
    })
}

fn entropy_of<K: Ord>(keys: impl Iterator<Item = K>) -> f64 {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut n = 0;
    for k in keys {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_error_is_a_metric(a in vector(), b in vector(), c in vector()) {
        prop_assert!(a.l1_error(&b) >= 0.0);
        prop_assert_eq!(a.l1_error(&a), 0.0);
        prop_assert_eq!(a.l1_error(&b) == 0.0, a == b);
        prop_assert_eq!(a.l1_error(&b), b.l1_error(&a));
        prop_assert!(a.l1_error(&c) <= a.l1_error(&b) + b.l1_error(&c) + 1e-9);
    }

    #[test]
    fn misses_only_thin_the_trace(
        arch in prop::sample::select(arch_names()),
        queries in 1usize..3,
        p_miss in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let cat = build_catalog();
        let trace = emit_trace(cat.get(&arch).unwrap(), queries, Mode::Inference, None).unwrap();
        let noise = NoiseModel::new(p_miss, BTreeMap::new()).unwrap();
        let obs = observe(&trace, &noise, seed);
        let t: Vec<_> = trace.codes().collect();
        let o: Vec<_> = obs.codes().collect();
        prop_assert!(is_subsequence(&o, &t));
        let q = |v: &[FunctionCode]| v.iter().filter(|&&c| c == FunctionCode::Query).count();
        prop_assert_eq!(q(&o), queries);
    }

    #[test]
    fn spurious_hits_only_add(
        arch in prop::sample::select(arch_names()),
        rates in rates(),
        seed in any::<u64>(),
    ) {
        let cat = build_catalog();
        let trace = emit_trace(cat.get(&arch).unwrap(), 2, Mode::Inference, None).unwrap();
        let obs = observe(&trace, &NoiseModel::new(0.0, rates).unwrap(), seed);
        let t: Vec<_> = trace.codes().collect();
        let o: Vec<_> = obs.codes().collect();
        prop_assert!(is_subsequence(&t, &o));
        prop_assert!(obs.events.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn decoys_keep_the_query_count(
        notation in prop::sample::select(vec!["C:1", "C:1,R:1", "M:2", "C:2,R:2,M:1"]),
        rate in 0.1..50.0f64,
        queries in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cat = build_catalog();
        let trace = emit_trace(cat.get("ResNet50").unwrap(), queries, Mode::Inference, None).unwrap();
        let decoy = DecoySpec::parse(notation, rate).unwrap();
        let merged = merge_decoy(&trace, &decoy, seed).unwrap();
        let count = |v: &mut dyn Iterator<Item = FunctionCode>| v.filter(|&c| c == FunctionCode::Query).count();
        prop_assert_eq!(count(&mut merged.codes()), queries);
        let victim: Vec<_> = trace.codes().collect();
        let all: Vec<_> = merged.codes().collect();
        prop_assert!(is_subsequence(&victim, &all));
        prop_assert_eq!(merged.codes().next(), Some(FunctionCode::Query));
    }

    #[test]
    fn observation_files_round_trip(
        arch in prop::sample::select(arch_names()),
        p_miss in 0.0..0.3f64,
        rates in rates(),
        seed in any::<u64>(),
    ) {
        let cat = build_catalog();
        let trace = emit_trace(cat.get(&arch).unwrap(), 1, Mode::Inference, None).unwrap();
        let obs = observe(&trace, &NoiseModel::new(p_miss, rates).unwrap(), seed);
        let text = tracefile::write_observation(&obs);
        prop_assert_eq!(tracefile::parse(&text).unwrap(), TraceDoc::Observation(obs));
    }

    #[test]
    fn fully_grown_tree_fits_distinct_rows(d in dataset(60)) {
        let mut seen = HashMap::new();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (r, l) in d.features.iter().zip(&d.labels) {
            let key = r.map(f64::to_bits);
            if seen.insert(key, ()).is_none() {
                features.push(*r);
                labels.push(l.clone());
            }
        }
        let distinct = Dataset { features, labels, ..d };
        let tree = fit_tree(&distinct, 0).unwrap();
        prop_assert_eq!(tree.accuracy(&distinct.features, &distinct.labels), 1.0);
    }

    #[test]
    fn mutual_information_is_bounded(d in dataset(100)) {
        prop_assume!(d.label_names().len() >= 2);
        let fi = mutual_information(&d).unwrap();
        let hy = label_entropy(&d);
        prop_assert!((hy - entropy_of(d.labels.iter())).abs() < 1e-9);
        for a in Attribute::ALL {
            let hx = entropy_of(d.features.iter().map(|r| r[a.index()] as i64));
            let mi = fi.score(a);
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= hx.min(hy) + 1e-9, "{} {mi} > min({hx}, {hy})", a.name());
        }
    }

    #[test]
    fn pca_inverts_and_preserves_variance(d in dataset(50)) {
        let p = pca(&d).unwrap();
        let n = d.len() as f64;
        let mut trace = 0.0;
        for j in 0..8 {
            trace += d.features.iter().map(|r| (r[j] - p.means[j]).powi(2)).sum::<f64>() / (n - 1.0);
        }
        prop_assert!((p.eigenvalues.iter().sum::<f64>() - trace).abs() < 1e-9);
        for (row, proj) in d.features.iter().zip(&p.projections) {
            for j in 0..8 {
                let back: f64 = (0..8).map(|k| proj[k] * p.loadings[k][j]).sum();
                prop_assert!((back - (row[j] - p.means[j])).abs() < 1e-9);
            }
        }
        prop_assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn otsu_ignores_sample_order(
        samples in prop::collection::vec(1u64..500, 2..80),
        seed in any::<u64>(),
    ) {
        let mut shuffled = samples.clone();
        archspy_core::rng::StreamRng::from_seed(seed).shuffle(&mut shuffled);
        match otsu_threshold(&samples) {
            Ok(t) => {
                prop_assert_eq!(otsu_threshold(&shuffled).unwrap(), t);
                for &s in &samples {
                    let want = if s < t { Access::Hit } else { Access::Miss };
                    prop_assert_eq!(classify_latency(s, t), want);
                }
            }
            Err(_) => prop_assert!(otsu_threshold(&shuffled).is_err()),
        }
    }
}

#[test]
fn observed_counts_match_expectation() {
    let cat = build_catalog();
    let template = cat.get("ResNet50").unwrap();
    let trace = emit_trace(template, 1, Mode::Inference, None).unwrap();
    let noise = NoiseModel::new(
        0.05,
        BTreeMap::from([(FunctionCode::Conv, 0.4), (FunctionCode::Merge, 0.3)]),
    )
    .unwrap();
    let truth = attributes_of(template);
    let n = 1000;
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|seed| {
            let obs = observe(&trace, &noise, seed);
            Attribute::ALL
                .iter()
                .map(|a| obs.codes().filter(|&c| c == a.code()).count() as f64)
                .collect()
        })
        .collect();
    for (i, a) in Attribute::ALL.iter().enumerate() {
        let expected = (1.0 - noise.p_miss) * truth.get(*a) + noise.rate(a.code());
        let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        if se == 0.0 {
            assert_eq!(mean, expected, "{}", a.name());
        } else {
            assert!(
                (mean - expected).abs() <= 3.0 * se,
                "{}: mean {mean} expected {expected} se {se}",
                a.name()
            );
        }
    }
}

#[test]
fn error_grows_with_miss_probability() {
    let cat = build_catalog();
    let template = cat.get("ResNet50").unwrap();
    let mut last = 0.0;
    for p in [0.0, 0.01, 0.02, 0.05, 0.1, 0.2] {
        let noise = NoiseModel::new(p, BTreeMap::new()).unwrap();
        let mean = (0..30)
            .map(|m| short_attack(template, &noise, m).unwrap().error.unwrap())
            .sum::<f64>()
            / 30.0;
        assert!(mean >= last, "p_miss {p}: {mean} < {last}");
        last = mean;
    }
    assert!(last > 0.0);
}

fn decoy_errors(noise: &NoiseModel, rates: &[f64]) -> Vec<(String, f64, f64)> {
    let cat = build_catalog();
    let victim = cat.get("ResNet50").unwrap();
    let mut out = Vec::new();
    for notation in ["C:1", "C:1,R:1", "M:1", "C:2,R:2,M:1"] {
        for &rate in rates {
            let spec = DecoySpec::parse(notation, rate).unwrap();
            let r = eval_decoy(victim, &spec, 30, noise, 11, &cat).unwrap();
            out.push((
                format!("{notation} x{rate}"),
                r.defended.mean_error,
                r.baseline.mean_error,
            ));
        }
    }
    out
}

#[test]
fn any_decoy_raises_the_error_on_a_clean_channel() {
    for (name, defended, baseline) in
        decoy_errors(&NoiseModel::noiseless(), &[0.01, 0.5, 3.0, 40.0])
    {
        assert_eq!(baseline, 0.0);
        assert!(defended > 0.0, "{name}");
    }
}

// A single small pass can offset the undercount that misses cause, so under
// the calibrated channel only rates that outweigh it are checked.
#[test]
fn decoys_raise_the_error_under_calibrated_noise() {
    let noise = archspy_core::config::Defaults::shipped().noise().unwrap();
    for (name, defended, baseline) in decoy_errors(&noise, &[3.0, 40.0]) {
        assert!(defended > baseline, "{name}: {defended} <= {baseline}");
    }
}

#[test]
fn merge_only_decoy_targets_merges() {
    let cat = build_catalog();
    let victim = cat.get("ResNet50").unwrap();
    let noise = archspy_core::config::Defaults::shipped().noise().unwrap();
    let spec = DecoySpec::parse("M:1", 20.0).unwrap();
    let r = eval_decoy(victim, &spec, 30, &noise, 5, &cat).unwrap();
    let lift = r.defended.mean.get(Attribute::Merges) - r.baseline.mean.get(Attribute::Merges);
    assert!(lift > 15.0, "merge lift {lift}");
    for a in [
        Attribute::Convs,
        Attribute::Fcs,
        Attribute::Mpools,
        Attribute::Biases,
    ] {
        assert!(r.within_baseline_noise(a), "{} moved", a.name());
    }
}

#[test]
fn batch_results_do_not_depend_on_thread_count() {
    let cat = build_catalog();
    let noise = archspy_core::config::Defaults::shipped().noise().unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let d = build_dataset(&cat, 12, &noise, 42).unwrap();
            let (trees, cv) = train_tree(&d, 4, 42).unwrap();
            let texts: Vec<String> = trees.iter().map(|t| t.to_text()).collect();
            (d.to_csv(), texts, cv.fold_accuracies)
        })
    };
    let one = run(1);
    assert_eq!(one, run(6));
    assert_eq!(one, run(1));
}
