use std::collections::BTreeSet;
use std::sync::OnceLock;

use ftseg::data::{
    augment_keyed, flip_horizontal, flip_vertical, resize, split, synthesize_phantoms, AugmentationConfig, Raster,
    Sample, SplitConfig,
};
use ftseg::freeze::{apply, trainable_mask, FineTuneStrategy};
use ftseg::harness::{aggregate, RunResult};
use ftseg::metrics::{binarize, confusion, dice, foreground_iou, miou, pixel_accuracy, report, Averaging};
use ftseg::net::{CountFilter, ParameterCount, SegmentationModelSpec, SegmentationNetwork};
use ftseg_nn::Tensor;
use num_rational::Ratio;
use proptest::prelude::*;

fn mask(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, len)
}

/// Per-pixel rational PA, Dice and mIoU, with empty-vs-empty scoring 1.
fn rational_oracle(pred: &[u8], gt: &[u8]) -> (Ratio<u64>, Ratio<u64>, Ratio<u64>) {
    let (mut inter, mut union, mut p_sum, mut g_sum, mut agree) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut bg_inter, mut bg_union) = (0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p as u64, g as u64);
        inter += p * g;
        union += p | g;
        bg_inter += (1 - p) * (1 - g);
        bg_union += (1 - p) | (1 - g);
        p_sum += p;
        g_sum += g;
        agree += u64::from(p == g);
    }
    let ratio = |num: u64, den: u64| if den == 0 { Ratio::from_integer(1) } else { Ratio::new(num, den) };
    let pa = Ratio::new(agree, pred.len() as u64);
    let d = ratio(2 * inter, p_sum + g_sum);
    let m = (ratio(inter, union) + ratio(bg_inter, bg_union)) / 2;
    (pa, d, m)
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

proptest! {
    #[test]
    fn metrics_match_the_rational_oracle(pred in mask(64), gt in mask(64)) {
        let c = confusion(&pred, &gt).unwrap();
        prop_assert_eq!(c.total(), 64);
        let (pa, d, m) = rational_oracle(&pred, &gt);
        prop_assert_eq!(pixel_accuracy(&c).unwrap(), to_f64(pa));
        prop_assert_eq!(dice(&c), to_f64(d));
        prop_assert_eq!(miou(&c), to_f64(m));
    }

    #[test]
    fn metrics_are_bounded_and_symmetric(pred in mask(49), gt in mask(49)) {
        let c = confusion(&pred, &gt).unwrap();
        let swapped = confusion(&gt, &pred).unwrap();
        for v in [pixel_accuracy(&c).unwrap(), dice(&c), miou(&c), foreground_iou(&c)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(dice(&c), dice(&swapped));
        prop_assert_eq!(miou(&c), miou(&swapped));
        if c.tp + c.fp + c.fn_ > 0 {
            let i = foreground_iou(&c);
            prop_assert!(dice(&c) >= i);
            prop_assert!((dice(&c) - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_foreground(
        logits in prop::collection::vec(-20.0f32..20.0, 1..200),
        t in 0.0f64..1.0,
        dt in 0.0f64..1.0,
    ) {
        let hi = (t + dt).min(0.999_999);
        let low: usize = binarize(&logits, t).iter().map(|&v| v as usize).sum();
        let high: usize = binarize(&logits, hi).iter().map(|&v| v as usize).sum();
        prop_assert!(high <= low);
    }

    #[test]
    fn micro_report_pools_counts(images in prop::collection::vec((mask(16), mask(16)), 1..6)) {
        let counts: Vec<_> = images.iter().map(|(p, g)| confusion(p, g).unwrap()).collect();
        let pred: Vec<u8> = images.iter().flat_map(|(p, _)| p.clone()).collect();
        let gt: Vec<u8> = images.iter().flat_map(|(_, g)| g.clone()).collect();
        let pooled = confusion(&pred, &gt).unwrap();
        let r = report(&counts, Averaging::Micro).unwrap();
        prop_assert_eq!(r.dice, dice(&pooled));
        prop_assert_eq!(r.pa, pixel_accuracy(&pooled).unwrap());
        prop_assert!((r.miou - (r.per_class_iou["background"] + r.per_class_iou["foreground"]) / 2.0).abs() < 1e-15);
        let m = report(&counts, Averaging::Macro).unwrap();
        let mean_dice = counts.iter().map(dice).sum::<f64>() / counts.len() as f64;
        prop_assert!((m.dice - mean_dice).abs() < 1e-12);
    }
}

fn mobilenet() -> &'static SegmentationNetwork<f32> {
    static NET: OnceLock<SegmentationNetwork<f32>> = OnceLock::new();
    NET.get_or_init(|| SegmentationNetwork::build(&SegmentationModelSpec::mobilenet_v2(false).with_seed(1), None).unwrap())
}

fn small_baseline() -> &'static SegmentationNetwork<f32> {
    static NET: OnceLock<SegmentationNetwork<f32>> = OnceLock::new();
    NET.get_or_init(|| {
        SegmentationNetwork::build(&SegmentationModelSpec::baseline_with_features(&[4, 8, 8, 8]).with_seed(1), None).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_resolution_equals_input_resolution(size in prop::sample::select(vec![32usize, 64, 96, 128]), batch in 1usize..3) {
        let x = Tensor::full([batch, 3, size, size], 0.25f32);
        for net in [mobilenet(), small_baseline()] {
            let y = net.forward(&x).unwrap();
            prop_assert_eq!(y.shape(), [batch, 1, size, size]);
        }
    }
}

fn strategy() -> impl Strategy<Value = FineTuneStrategy> {
    prop::sample::select(FineTuneStrategy::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn masks_cover_every_group_once(s in strategy()) {
        let net = mobilenet();
        let groups = net.group_ids();
        let mask = trainable_mask(s, &groups).unwrap();
        let listed: Vec<_> = mask.entries.keys().copied().collect();
        let mut sorted = groups.clone();
        sorted.sort();
        prop_assert_eq!(listed, sorted);
        prop_assert!(mask.trainable_groups().count() >= 1);
    }

    #[test]
    fn applying_twice_equals_applying_once(s in strategy(), other in strategy()) {
        let mut net = small_baseline().clone();
        if trainable_mask(s, &net.group_ids()).is_err() {
            return Ok(());
        }
        apply(&mut net, other, true).ok();
        apply(&mut net, s, true).unwrap();
        let once = net.parameter_records();
        apply(&mut net, s, true).unwrap();
        prop_assert_eq!(once, net.parameter_records());
    }

    #[test]
    fn group_counts_add_up(s in strategy()) {
        let mut net = mobilenet().clone();
        apply(&mut net, s, true).unwrap();
        let ParameterCount::ByGroup(by_group) = net.count_parameters(CountFilter::ByGroup) else {
            panic!("by-group count expected");
        };
        prop_assert_eq!(by_group.values().sum::<usize>(), net.total_params());
        let names: Vec<String> = net.enumerate_layer_groups().into_iter().flat_map(|(_, n)| n).collect();
        let unique: BTreeSet<&String> = names.iter().collect();
        prop_assert_eq!(unique.len(), names.len());
        prop_assert_eq!(names.len(), net.parameter_records().len());
        prop_assert!(net.trainable_params() <= net.total_params());
    }
}

#[test]
fn wider_decoder_strategies_train_more_parameters() {
    let trainable = |s| {
        let mut net = mobilenet().clone();
        apply(&mut net, s, true).unwrap();
        net.trainable_params()
    };
    use FineTuneStrategy::*;
    let chain: Vec<usize> = [Decoder0, Decoder01, Decoder012, DecoderAll].into_iter().map(trainable).collect();
    assert!(chain.windows(2).all(|w| w[0] <= w[1]), "{chain:?}");
}

fn phantoms() -> &'static [Sample] {
    static DATA: OnceLock<Vec<Sample>> = OnceLock::new();
    DATA.get_or_init(|| synthesize_phantoms(12, 5, 64).unwrap())
}

fn is_binary(m: &Raster<u8>) -> bool {
    m.data().iter().all(|&v| v <= 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_is_keyed_and_keeps_masks_binary(idx in 0usize..12, seed in any::<u64>(), epoch in 0usize..50, size in prop::sample::select(vec![32usize, 96, 128])) {
        let cfg = AugmentationConfig::default();
        let s = resize(&phantoms()[idx], size).unwrap();
        prop_assert!(is_binary(&s.mask));
        let (a, draw) = augment_keyed(&s, &cfg, seed, epoch);
        let (b, again) = augment_keyed(&s, &cfg, seed, epoch);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(draw, again);
        prop_assert!((-25.0..=25.0).contains(&draw.angle_deg));
        prop_assert!(is_binary(&a.mask));
        prop_assert_eq!((a.mask.width(), a.mask.height()), (size, size));
    }

    #[test]
    fn flips_preserve_foreground_and_invert(idx in 0usize..12) {
        let s = &phantoms()[idx];
        let h = flip_horizontal(s);
        let v = flip_vertical(s);
        prop_assert_eq!(h.mask.count_nonzero(), s.mask.count_nonzero());
        prop_assert_eq!(v.mask.count_nonzero(), s.mask.count_nonzero());
        prop_assert_eq!(&flip_horizontal(&h), s);
        prop_assert_eq!(&flip_vertical(&v), s);
    }

    #[test]
    fn splits_partition_the_ids(total in 2usize..120, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let test_count = ((total as f64 * frac).round() as usize).clamp(1, total - 1);
        let cfg = SplitConfig { total, train_count: total - test_count, test_count, seed };
        let samples: Vec<Sample> = (0..total)
            .map(|i| Sample { id: format!("{i:04}"), image: Raster::new(1, 1), mask: Raster::new(1, 1), split: None })
            .collect();
        let (train, test) = split(samples.clone(), &cfg).unwrap();
        prop_assert_eq!((train.len(), test.len()), (total - test_count, test_count));
        let a: BTreeSet<_> = train.iter().map(|s| s.id.clone()).collect();
        let b: BTreeSet<_> = test.iter().map(|s| s.id.clone()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), total);
        let mut reversed = samples;
        reversed.reverse();
        let (train2, _) = split(reversed, &cfg).unwrap();
        prop_assert_eq!(train, train2);
    }
}

fn run(strategy: FineTuneStrategy, repeat: usize, pa: f64, d: f64, m: f64) -> RunResult {
    let mut metrics = report(&[ftseg::metrics::ConfusionCounts::new(1, 0, 0, 1)], Averaging::Micro).unwrap();
    metrics.pa = pa;
    metrics.dice = d;
    metrics.miou = m;
    RunResult {
        strategy,
        repeat_index: repeat,
        seed: repeat as u64,
        metrics,
        trainable_params: 10,
        total_params: 20,
        reduction_pct: 50.0,
        best_epoch: 0,
        config_hash: String::new(),
        epoch_logs: Vec::new(),
    }
}

fn brute_mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

proptest! {
    #[test]
    fn aggregate_rows_match_a_recomputation(values in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 2..12)) {
        let repeats = values.len() / 2;
        let strategies = [FineTuneStrategy::DecoderAll, FineTuneStrategy::Decoder4];
        let mut results = Vec::new();
        for (i, s) in strategies.iter().enumerate() {
            for r in 0..repeats {
                let (pa, d, m) = values[i * repeats + r];
                results.push(run(*s, r, pa, d, m));
            }
        }
        let table = aggregate(&results, &strategies, repeats, Averaging::Micro).unwrap();
        for (i, row) in table.rows.iter().enumerate() {
            let chunk = &values[i * repeats..(i + 1) * repeats];
            let pick = |f: fn(&(f64, f64, f64)) -> f64| chunk.iter().map(f).collect::<Vec<_>>();
            prop_assert_eq!(row.n_runs, repeats);
            for ((mean, std), (want_mean, want_std)) in [
                ((row.pa_mean, row.pa_std), brute_mean_std(&pick(|v| v.0))),
                ((row.dice_mean, row.dice_std), brute_mean_std(&pick(|v| v.1))),
                ((row.miou_mean, row.miou_std), brute_mean_std(&pick(|v| v.2))),
            ] {
                prop_assert!((mean - want_mean).abs() < 1e-12);
                prop_assert!((std - want_std).abs() < 1e-12);
            }
        }
    }
}
