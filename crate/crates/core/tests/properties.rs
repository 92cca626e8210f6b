use ndarray::Array2;
use pmswag_core::coalesce::CoalescerConfig;
use pmswag_core::eval::{bma_predict, evaluate, expected_calibration_error};
use pmswag_core::posterior::{estimate_size, rank_after_epochs, DeviationPlacement, SwagConfig, SwagState};
use pmswag_core::store::{
    BackendConfig, ElementWidth, Layout, MappedFileConfig, PmemConfig, TieredCacheConfig,
};
use pmswag_core::trainer::{encode_idx_u8, parse_idx, softmax_rows, IdxData, MlpModel};
use proptest::prelude::*;

fn dram_placement(name: &str) -> DeviationPlacement {
    DeviationPlacement::new(BackendConfig::default().build().unwrap(), name)
}

fn trajectory(max_t: usize, max_p: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_p, 1..=max_t).prop_flat_map(|(p, t)| {
        prop::collection::vec(prop::collection::vec(-100.0f64..100.0, p), t)
    })
}

fn run(cfg: SwagConfig, traj: &[Vec<f64>], placement: &DeviationPlacement) -> SwagState {
    let mut s = SwagState::new(cfg, traj[0].len(), placement).unwrap();
    for theta in traj {
        s.update(theta).unwrap();
    }
    s
}

fn overcomplete(max_columns: usize, burn_in: u64) -> SwagConfig {
    SwagConfig {
        max_columns,
        burn_in,
        allow_overcomplete: true,
        ..SwagConfig::default()
    }
}

fn backend_configs() -> Vec<BackendConfig> {
    vec![
        BackendConfig::default(),
        BackendConfig::MappedFile(MappedFileConfig::default()),
        BackendConfig::SimulatedPMem(PmemConfig::default()),
        BackendConfig::TieredCache(TieredCacheConfig {
            cache_capacity_bytes: 3 * 64,
            block_size_bytes: 64,
            ..TieredCacheConfig::default()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_moments_match_batch(traj in trajectory(60, 12)) {
        let s = run(overcomplete(1, 0), &traj, &dram_placement("d"));
        let n = traj.len() as f64;
        for j in 0..traj[0].len() {
            let mean = traj.iter().map(|x| x[j]).sum::<f64>() / n;
            let sq = traj.iter().map(|x| x[j] * x[j]).sum::<f64>() / n;
            prop_assert!((s.moments().mean()[j] - mean).abs() <= 1e-9 * 100.0);
            prop_assert!((s.moments().sq_mean()[j] - sq).abs() <= 1e-9 * 1e4);
        }
    }

    #[test]
    fn burn_in_discards_a_prefix(traj in trajectory(40, 6), burn in 0u64..45) {
        let skipped = run(overcomplete(7, burn), &traj, &dram_placement("a"));
        prop_assert_eq!(skipped.total_seen(), traj.len() as u64);
        let rest = &traj[(burn as usize).min(traj.len())..];
        if rest.is_empty() {
            prop_assert_eq!(skipped.accepted(), 0);
            prop_assert_eq!(skipped.rank(), 0);
        } else {
            let direct = run(overcomplete(7, 0), rest, &dram_placement("b"));
            prop_assert_eq!(skipped.mean(), direct.mean());
            prop_assert_eq!(skipped.moments().sq_mean(), direct.moments().sq_mean());
            prop_assert_eq!(skipped.deviation_columns().unwrap(), direct.deviation_columns().unwrap());
        }
    }

    #[test]
    fn ring_buffer_keeps_the_latest_columns(traj in trajectory(40, 5), k in 1usize..9) {
        let s = run(overcomplete(k, 0), &traj, &dram_placement("d"));
        let mut mean = vec![0.0; traj[0].len()];
        let mut all = Vec::new();
        for (i, theta) in traj.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(theta) {
                *m += (x - *m) / (i + 1) as f64;
            }
            all.push(theta.iter().zip(&mean).map(|(x, m)| ElementWidth::Four.quantize(x - m)).collect::<Vec<_>>());
        }
        let keep = traj.len().min(k);
        prop_assert_eq!(s.rank(), keep);
        prop_assert_eq!(s.deviation_columns().unwrap(), all[traj.len() - keep..].to_vec());
    }

    #[test]
    fn backends_agree_on_random_region_traces(
        ops in prop::collection::vec((0usize..9, 0usize..9, 0usize..7, 0usize..7, any::<u8>(), 0u8..4), 1..60),
        row_major in any::<bool>(),
    ) {
        let (rows, cols) = (9, 7);
        let layout = if row_major { Layout::RowMajor } else { Layout::ColMajor };
        let mut images: Vec<Vec<u8>> = Vec::new();
        for config in backend_configs() {
            let b = config.build().unwrap();
            let h = b.create_array("x", rows, cols, ElementWidth::Eight, layout).unwrap();
            let mut reads = Vec::new();
            for &(r0, r1, c0, c1, fill, op) in &ops {
                let (r0, r1) = (r0.min(r1), r0.max(r1) + 1);
                let (c0, c1) = (c0.min(c1), c0.max(c1) + 1);
                let len = (r1 - r0) * (c1 - c0) * 8;
                match op {
                    0 | 1 => {
                        let data: Vec<u8> = (0..len).map(|i| fill.wrapping_add(i as u8)).collect();
                        b.write_region(&h, r0..r1, c0..c1, &data).unwrap();
                    }
                    2 => {
                        let mut out = vec![0u8; len];
                        b.read_region(&h, r0..r1, c0..c1, &mut out).unwrap();
                        reads.extend(out);
                    }
                    _ => b.flush(&h).unwrap(),
                }
            }
            let mut full = vec![0u8; rows * cols * 8];
            b.read_region(&h, 0..rows, 0..cols, &mut full).unwrap();
            reads.extend(full);
            images.push(reads);
        }
        for img in &images[1..] {
            prop_assert_eq!(img, &images[0]);
        }
    }

    #[test]
    fn coalescing_is_transparent(traj in trajectory(50, 6), k in 1usize..8, w in 1usize..10) {
        let cfg = overcomplete(k, 3);
        let plain = run(cfg, &traj, &dram_placement("a"));
        let mut coalesced = run(
            cfg,
            &traj,
            &dram_placement("b").with_coalescer(Some(CoalescerConfig::when_full(w))),
        );
        // Reads see buffered columns before any flush.
        prop_assert_eq!(plain.deviation_columns().unwrap(), coalesced.deviation_columns().unwrap());
        coalesced.flush().unwrap();
        prop_assert_eq!(plain.checkpoint_bytes().unwrap(), coalesced.checkpoint_bytes().unwrap());
    }

    #[test]
    fn checkpoint_round_trips(traj in trajectory(30, 6), k in 1usize..6, row_major in any::<bool>()) {
        let layout = if row_major { Layout::RowMajor } else { Layout::ColMajor };
        let mut s = run(overcomplete(k, 2), &traj, &dram_placement("a").with_layout(layout));
        s.flush().unwrap();
        let bytes = s.checkpoint_bytes().unwrap();
        let back = SwagState::restore(bytes.as_slice(), &dram_placement("b")).unwrap();
        prop_assert_eq!(back.checkpoint_bytes().unwrap(), bytes);
    }

    #[test]
    fn flatten_is_a_bijection(layers in prop::collection::vec(1usize..6, 2..5), seed in any::<u64>()) {
        let m = MlpModel::new(&layers, seed).unwrap();
        let theta = m.flatten();
        prop_assert_eq!(theta.len(), m.param_count());
        let back = MlpModel::unflatten(&layers, &theta).unwrap();
        prop_assert_eq!(back.flatten(), theta);
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in prop::collection::vec(prop::collection::vec(-700.0f64..700.0, 4), 1..8),
    ) {
        let n = rows.len();
        let logits = Array2::from_shape_vec((n, 4), rows.concat()).unwrap();
        let p = softmax_rows(&logits);
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn bma_outputs_valid_distributions(
        traj in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4 * 3 + 3), 1..6),
        inputs in prop::collection::vec(-5.0f64..5.0, 4 * 5),
        samples in 1usize..6,
        seed in any::<u64>(),
    ) {
        let model = MlpModel::zeros(&[4, 3]).unwrap();
        let s = run(overcomplete(3, 0), &traj, &dram_placement("d"));
        let x = Array2::from_shape_vec((5, 4), inputs).unwrap();
        let pred = bma_predict(&model, &s, x.view(), samples, seed).unwrap();
        prop_assert!(pred.is_valid(1e-9));
        let m = evaluate(&pred, &[0, 1, 2, 0, 1], Some(seed)).unwrap();
        prop_assert!(m.nll >= 0.0 && (0.0..=1.0).contains(&m.accuracy));
        let ece = expected_calibration_error(&pred.probs, &[0, 1, 2, 0, 1], 15).unwrap();
        prop_assert!((0.0..=1.0).contains(&ece));
    }

    #[test]
    fn simulated_time_grows_with_workload(updates in 1usize..40, extra in 1usize..20) {
        let time = |n: usize| {
            let backend = BackendConfig::SimulatedPMem(PmemConfig::default()).build().unwrap();
            let placement = DeviationPlacement::new(backend.clone(), "d");
            let mut s = SwagState::new(overcomplete(8, 0), 5, &placement).unwrap();
            for t in 0..n {
                s.update(&[t as f64, 1.0, -2.0, 0.5, t as f64 * 0.1]).unwrap();
            }
            backend.stats().simulated_picos
        };
        prop_assert!(time(updates + extra) > time(updates));
    }

    #[test]
    fn pmem_costs_lambda_times_dram(lambda in 1u32..6, updates in 1usize..30) {
        let cost = |config: BackendConfig| {
            let backend = config.build().unwrap();
            let placement = DeviationPlacement::new(backend.clone(), "d");
            let mut s = SwagState::new(overcomplete(4, 0), 7, &placement).unwrap();
            let before = backend.stats();
            for t in 0..updates {
                s.update(&[t as f64; 7]).unwrap();
            }
            s.flush().unwrap();
            backend.stats().since(&before).simulated_picos
        };
        let dram = cost(BackendConfig::default());
        let pmem = cost(BackendConfig::SimulatedPMem(PmemConfig {
            latency_multiplier: lambda as f64,
            ..PmemConfig::default()
        }));
        let ratio = pmem as f64 / dram as f64;
        prop_assert!((ratio - lambda as f64).abs() <= 1e-6 * lambda as f64, "{}", ratio);
    }

    #[test]
    fn size_and_rank_accounting(p in 1u64..10_000_000, k in 1u64..100_000, w in prop::sample::select(vec![4u64, 8])) {
        prop_assert_eq!(estimate_size(p, k, w).unwrap(), p * k * w);
        let r1 = rank_after_epochs(3, 600, 100, None);
        let r2 = rank_after_epochs(4, 600, 100, None);
        prop_assert!(r2 >= r1);
        prop_assert!(rank_after_epochs(k, 600, 0, Some(k)) <= k);
    }

    #[test]
    fn idx_round_trips(dims in prop::collection::vec(1usize..6, 1..4), fill in any::<u8>()) {
        let n: usize = dims.iter().product();
        let data: Vec<u8> = (0..n).map(|i| fill.wrapping_mul(i as u8)).collect();
        let t = parse_idx(&encode_idx_u8(&dims, &data)).unwrap();
        prop_assert_eq!(t.dims, dims);
        prop_assert_eq!(t.data, IdxData::U8(data));
    }
}

