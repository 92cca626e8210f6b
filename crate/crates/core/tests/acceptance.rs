//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use pmswag_core::coalesce::CoalescerConfig;
use pmswag_core::eval::{bma_predict, evaluate, point_predict};
use pmswag_core::experiment::{run_all, summarize, DataSource, ExperimentSpec, Phase};
use pmswag_core::posterior::{estimate_size, rank_after_epochs, DeviationPlacement, SwagConfig, SwagState};
use pmswag_core::store::{
    BackendConfig, ElementWidth, InMemoryConfig, Layout, MappedFileConfig, PmemConfig, StorageBackend,
    TieredCacheConfig,
};
use pmswag_core::trainer::{
    parse_idx, synthetic_dataset, Dataset, IdxData, MlpModel, SgdTrainer, TrainConfig, DESK_LAYERS,
};
use pmswag_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: pmswag_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn dram() -> Arc<dyn StorageBackend> {
    BackendConfig::default().build().unwrap()
}

fn pmem(lambda: f64, alloc_penalty: f64) -> BackendConfig {
    BackendConfig::SimulatedPMem(PmemConfig {
        latency_multiplier: lambda,
        alloc_penalty,
        ..PmemConfig::default()
    })
}

fn tiered(cache: u64) -> BackendConfig {
    BackendConfig::TieredCache(TieredCacheConfig {
        cache_capacity_bytes: cache,
        block_size_bytes: 4096,
        backing: Box::new(pmem(3.0, 0.0)),
        ..TieredCacheConfig::default()
    })
}

fn all_backends() -> Vec<(&'static str, BackendConfig)> {
    vec![
        ("InMemory", BackendConfig::InMemory(InMemoryConfig::default())),
        ("MappedFile", BackendConfig::MappedFile(MappedFileConfig::default())),
        ("SimulatedPMem", pmem(3.0, 0.25)),
        ("TieredCache", BackendConfig::TieredCache(TieredCacheConfig {
            cache_capacity_bytes: 8 * 256,
            block_size_bytes: 256,
            ..TieredCacheConfig::default()
        })),
    ]
}

fn random_trajectory(rng: &mut ChaCha8Rng, t: usize, p: usize) -> Vec<Vec<f64>> {
    let centre: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let spread: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..2.0)).collect();
    (0..t)
        .map(|_| {
            centre
                .iter()
                .zip(&spread)
                .map(|(c, s)| c + s * rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect()
}

// 1. Streaming moments against batch sums.
fn moment_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.random_range(1..=1000);
        let t = rng.random_range(1..=500);
        let traj = random_trajectory(&mut rng, t, p);
        let cfg = SwagConfig {
            max_columns: 1,
            ..SwagConfig::default()
        };
        let mut state = ok(SwagState::new(cfg, p, &DeviationPlacement::new(dram(), "d")))?;
        for theta in &traj {
            ok(state.update(theta))?;
        }
        for j in 0..p {
            let sum: f64 = traj.iter().map(|x| x[j]).sum();
            let sq: f64 = traj.iter().map(|x| x[j] * x[j]).sum();
            let scale = traj.iter().map(|x| x[j].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let m = state.moments();
            worst = worst
                .max((m.mean()[j] - sum / t as f64).abs() / scale)
                .max((m.sq_mean()[j] - sq / t as f64).abs() / (scale * scale));
        }
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e}"))
}

// 2. Stored deviation columns against recomputed theta_t - mean_t.
fn deviation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for trial in 0..40 {
        let p = rng.random_range(1..=20);
        let t = rng.random_range(1..=50);
        let width = if trial % 2 == 0 { ElementWidth::Eight } else { ElementWidth::Four };
        let traj = random_trajectory(&mut rng, t, p);
        let cfg = SwagConfig {
            max_columns: 50,
            element_width: width,
            allow_overcomplete: true,
            ..SwagConfig::default()
        };
        let mut state = ok(SwagState::new(cfg, p, &DeviationPlacement::new(dram(), "d")))?;
        let mut mean = vec![0.0; p];
        for (i, theta) in traj.iter().enumerate() {
            ok(state.update(theta))?;
            let n = (i + 1) as f64;
            for (m, x) in mean.iter_mut().zip(theta) {
                *m += (x - *m) / n;
            }
            let expected: Vec<f64> = theta.iter().zip(&mean).map(|(x, m)| width.quantize(x - m)).collect();
            let stored = ok(state.deviation_column(i))?;
            ensure(stored == expected, || format!("trial {trial}, column {i} differs"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} columns identical"))
}

// 3. Sample mean and covariance of a hand-built P=8, K=4 posterior.
fn sampling_correctness() -> Check {
    let (p, k, n) = (8, 4, 200_000);
    let traj: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            (0..p)
                .map(|j| ((j + 1) as f64 * 0.3 + (t * t) as f64 * 0.1 * if j % 2 == 0 { 1.0 } else { -0.5 }).sin())
                .collect()
        })
        .collect();
    let cfg = SwagConfig {
        max_columns: k,
        element_width: ElementWidth::Eight,
        ..SwagConfig::default()
    };
    let mut state = ok(SwagState::new(cfg, p, &DeviationPlacement::new(dram(), "d")))?;
    for theta in &traj {
        ok(state.update(theta))?;
    }

    // Oracle: recompute the factors from the trajectory.
    let mut mean = vec![0.0; p];
    let mut sq = vec![0.0; p];
    let mut dev = Vec::new();
    for (i, theta) in traj.iter().enumerate() {
        let c = (i + 1) as f64;
        for j in 0..p {
            mean[j] += (theta[j] - mean[j]) / c;
            sq[j] += (theta[j] * theta[j] - sq[j]) / c;
        }
        dev.push(theta.iter().zip(&mean).map(|(x, m)| x - m).collect::<Vec<f64>>());
    }
    let diag: Vec<f64> = (0..p).map(|j| (sq[j] - mean[j] * mean[j]).max(1e-12)).collect();
    let mut target = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in 0..p {
            let low: f64 = dev.iter().map(|d| d[a] * d[b]).sum::<f64>() / (k - 1) as f64;
            target[a][b] = 0.5 * (low + if a == b { diag[a] } else { 0.0 });
        }
    }

    let sampler = ok(state.sampler())?;
    let mut sum = vec![0.0; p];
    let mut outer = vec![vec![0.0; p]; p];
    for s in 0..n {
        let x = ok(sampler.draw(s as u64))?;
        for a in 0..p {
            let da = x[a] - mean[a];
            sum[a] += da;
            for b in 0..p {
                outer[a][b] += da * (x[b] - mean[b]);
            }
        }
    }
    let nf = n as f64;
    let mut worst_z: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for a in 0..p {
        let emp_mean = sum[a] / nf;
        worst_z = worst_z.max(emp_mean.abs() / (target[a][a] / nf).sqrt());
        for b in 0..p {
            let emp = outer[a][b] / nf - (sum[a] / nf) * (sum[b] / nf);
            worst_cov = worst_cov.max((emp - target[a][b]).abs());
        }
    }
    ensure(worst_z <= 3.0, || format!("mean off by {worst_z:.2} standard errors"))?;
    ensure(worst_cov <= 5e-2, || format!("covariance off by {worst_cov:.3e}"))?;
    Ok(format!("mean within {worst_z:.2} SE, covariance within {worst_cov:.2e}"))
}

// 4. Deviation-matrix sizes and ranks of the published size table.
fn size_formula() -> Check {
    let gib = (1u64 << 30) as f64;
    let mut lines = Vec::new();
    for (rank, published) in [(600, 6.28), (15_000, 156.33)] {
        let size = ok(estimate_size(2_800_000, rank, 4))? as f64 / gib;
        let rel = (size - published) / published;
        ensure(rel.abs() <= 0.02, || format!("rank {rank}: {size:.3} GiB vs {published}"))?;
        lines.push(format!("{size:.2}/{published}"));
    }
    for (epochs, rank) in [(1, 600), (25, 15_000), (50, 30_000), (75, 45_000)] {
        let got = rank_after_epochs(epochs, 600, 0, None);
        ensure(got == rank, || format!("{epochs} epochs -> rank {got}, expected {rank}"))?;
    }
    Ok(format!("sizes {} GiB; ranks 600/15000/30000/45000", lines.join(", ")))
}

// 5. Randomised operation sequences across all backends.
fn backend_equivalence() -> Check {
    let (rows, cols) = (13, 11);
    let mut images = Vec::new();
    for (name, config) in all_backends() {
        for layout in [Layout::RowMajor, Layout::ColMajor] {
            let backend = ok(config.build())?;
            let h = ok(backend.create_array("a", rows, cols, ElementWidth::Four, layout))?;
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut model = vec![0u8; rows * cols * 4];
            for _ in 0..1500 {
                let r0 = rng.random_range(0..rows);
                let r1 = rng.random_range(r0 + 1..=rows);
                let c0 = rng.random_range(0..cols);
                let c1 = rng.random_range(c0 + 1..=cols);
                let len = (r1 - r0) * (c1 - c0) * 4;
                match rng.random_range(0..10) {
                    0..=5 => {
                        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                        ok(backend.write_region(&h, r0..r1, c0..c1, &data))?;
                        let mut it = data.chunks_exact(4);
                        for c in c0..c1 {
                            for r in r0..r1 {
                                let at = (c * rows + r) * 4;
                                model[at..at + 4].copy_from_slice(it.next().unwrap());
                            }
                        }
                    }
                    6..=8 => {
                        let mut out = vec![0u8; len];
                        ok(backend.read_region(&h, r0..r1, c0..c1, &mut out))?;
                        let mut it = out.chunks_exact(4);
                        for c in c0..c1 {
                            for r in r0..r1 {
                                let at = (c * rows + r) * 4;
                                ensure(&model[at..at + 4] == it.next().unwrap(), || {
                                    format!("{name} {layout:?}: read mismatch at ({r}, {c})")
                                })?;
                            }
                        }
                    }
                    _ => ok(backend.flush(&h))?,
                }
            }
            let mut full = vec![0u8; rows * cols * 4];
            ok(backend.read_region(&h, 0..rows, 0..cols, &mut full))?;
            ensure(full == model, || format!("{name} {layout:?}: final contents differ"))?;
            images.push(full);
        }
    }
    ensure(images.windows(2).all(|w| w[0] == w[1]), || "array images differ".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let traj = random_trajectory(&mut rng, 300, 17);
    let mut checkpoints = Vec::new();
    for (name, config) in all_backends() {
        for coalescer in [None, Some(CoalescerConfig::when_full(4))] {
            for layout in [Layout::RowMajor, Layout::ColMajor] {
                let placement = DeviationPlacement::new(ok(config.build())?, "dev")
                    .with_layout(layout)
                    .with_coalescer(coalescer);
                let cfg = SwagConfig {
                    burn_in: 20,
                    max_columns: 9,
                    ..SwagConfig::default()
                };
                let mut state = ok(SwagState::new(cfg, 17, &placement))?;
                for theta in &traj {
                    ok(state.update(theta))?;
                }
                ok(state.flush())?;
                checkpoints.push((name, ok(state.checkpoint_bytes())?));
            }
        }
    }
    for (name, bytes) in &checkpoints {
        ensure(bytes == &checkpoints[0].1, || format!("{name}: checkpoint differs"))?;
    }
    Ok(format!(
        "{} backend/layout runs of 1500 ops identical; {} posterior checkpoints identical",
        images.len(),
        checkpoints.len()
    ))
}

fn storage_spec(backend: BackendConfig, compare: Vec<BackendConfig>, epochs: usize) -> ExperimentSpec {
    ExperimentSpec {
        backend,
        compare,
        repetitions: 1,
        layer_sizes: DESK_LAYERS.to_vec(),
        train: TrainConfig {
            minibatches_per_epoch: 100,
            epochs,
            ..TrainConfig::default()
        },
        swag: SwagConfig {
            max_columns: 100,
            ..SwagConfig::default()
        },
        data: DataSource::Synthetic {
            seed: 0,
            examples: 500,
        },
        ..ExperimentSpec::default()
    }
}

// 6. Simulated PMem/DRAM ratio and its trend under allocation cost.
fn simulated_ratio() -> Check {
    let spec = storage_spec(
        BackendConfig::InMemory(InMemoryConfig::default()),
        vec![pmem(3.0, 0.0), pmem(3.0, 0.25)],
        4,
    );
    let summary = ok(summarize(&ok(run_all(&spec))?))?;
    let flat = &summary.backends[1];
    let costly = &summary.backends[2];
    for t in &flat.totals {
        ensure((2.9..=3.1).contains(&t.simulated_ratio), || {
            format!("{} epochs: ratio {:.4}", t.epochs, t.simulated_ratio)
        })?;
    }
    let ratios: Vec<f64> = costly.totals.iter().map(|t| t.simulated_ratio).collect();
    ensure(ratios.windows(2).all(|w| w[1] < w[0]), || {
        format!("ratios with allocation cost not decreasing: {ratios:?}")
    })?;
    Ok(format!(
        "ratio {:.4} without allocation cost; with 0.25 s allocation {}",
        flat.totals[0].simulated_ratio,
        ratios.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>().join(" > ")
    ))
}

// 7. Cache thrashing below the working set, none above it.
fn cache_pathology() -> Check {
    // 26,506 x 100 x 4 bytes (about 10.6 MB) of deviations plus 500 x 784 x 8
    // bytes (about 3.1 MB) of staged training data.
    let small = tiered(1 << 20);
    let large = tiered(16 << 20);
    let spec = ExperimentSpec {
        stage_dataset: true,
        ..storage_spec(small, vec![pmem(3.0, 0.0), large], 3)
    };
    let results = ok(run_all(&spec))?;
    let steady = |i: usize| {
        results[i]
            .records
            .iter()
            .filter(|r| r.phase == Phase::PosteriorUpdate && r.epoch >= 2)
            .fold((0u64, 0u64), |acc, r| (acc.0 + r.stats.cache_misses, acc.1 + r.stats.cache_hits))
    };
    let (miss, hit) = steady(0);
    let rate = miss as f64 / (miss + hit) as f64;
    ensure(rate >= 0.9, || format!("steady-state miss rate {rate:.3}"))?;
    let (big_miss, _) = steady(2);
    ensure(big_miss == 0, || format!("{big_miss} steady-state misses with a large cache"))?;

    let mut with_baseline = vec![ok(run_all(&ExperimentSpec {
        stage_dataset: true,
        ..storage_spec(BackendConfig::InMemory(InMemoryConfig::default()), vec![], 3)
    }))?
    .remove(0)];
    with_baseline.extend(results);
    let summary = ok(summarize(&with_baseline))?;
    let cached = summary.backends[1].update_simulated_variance;
    let uncached = summary.backends[2].update_simulated_variance;
    ensure(cached > uncached, || {
        format!("variance proxy {cached:e} not above uncached {uncached:e}")
    })?;
    Ok(format!(
        "miss rate {rate:.3} below capacity, 0 misses above; update-time variance {cached:.2e} vs {uncached:.2e}"
    ))
}

// 8. Coalesced column writes.
fn coalescer() -> Check {
    let p = 1000;
    let run = |coalesce: Option<CoalescerConfig>| -> pmswag_core::Result<(u64, f64)> {
        let backend = pmem(3.0, 0.0).build()?;
        let placement = DeviationPlacement::new(backend.clone(), "dev").with_coalescer(coalesce);
        let cfg = SwagConfig {
            max_columns: 600,
            ..SwagConfig::default()
        };
        let mut state = SwagState::new(cfg, p, &placement)?;
        let before = backend.stats();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..600 {
            let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            state.update(&theta)?;
        }
        state.flush()?;
        let s = backend.stats().since(&before);
        Ok((s.write_ops, s.simulated_time()))
    };
    let (writes, t_coalesced) = ok(run(Some(CoalescerConfig::when_full(32))))?;
    let (direct_writes, t_direct) = ok(run(None))?;
    ensure(writes == 19, || format!("{writes} backing writes, expected 19"))?;
    ensure(direct_writes == 600, || format!("{direct_writes} unbuffered writes"))?;
    ensure(t_coalesced < t_direct, || format!("{t_coalesced} >= {t_direct}"))?;
    Ok(format!(
        "19 backing writes; simulated {:.1} us vs {:.1} us unbuffered",
        t_coalesced * 1e6,
        t_direct * 1e6
    ))
}

// 9. Backpropagation against central finite differences.
fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut models = 0;
    while models < 25 {
        let depth = rng.random_range(2..=4);
        let layers: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        let mut model = ok(MlpModel::new(&layers, 0))?;
        if model.param_count() > 200 {
            continue;
        }
        // Random biases keep pre-activations off the ReLU kink.
        let theta: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ok(model.set_params(&theta))?;
        models += 1;
        let n = rng.random_range(1..=6);
        let x = Array2::from_shape_simple_fn((n, layers[0]), || rng.random_range(0.0..1.0));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..model.classes())).collect();
        let g = ok(model.gradient(x.view(), &y))?;
        let theta = model.flatten();
        let mut probe = model.clone();
        let h = 1e-4;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            ok(probe.set_params(&t))?;
            let up = ok(probe.mean_loss(x.view(), &y))?;
            t[i] = theta[i] - h;
            ok(probe.set_params(&t))?;
            let down = ok(probe.mean_loss(x.view(), &y))?;
            let fd = (up - down) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{models} models, max relative error {worst:.2e}"))
}

fn mnist_if_present() -> Option<(Dataset, Dataset)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = Dataset::load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"));
    let test = Dataset::load_mnist(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"));
    Some((train.ok()?, test.ok()?))
}

// 10. Desk-scale training, posterior and model averaging.
fn end_to_end() -> Check {
    let (train, test, source) = match mnist_if_present() {
        Some((train, test)) => (train, test, "MNIST"),
        None => {
            let all = ok(synthetic_dataset(10, 3000, 784, 10))?;
            let (train, test) = ok(all.split_at(2000))?;
            (train, test, "synthetic")
        }
    };
    let mut model = ok(MlpModel::new(&DESK_LAYERS, 10))?;
    let cfg = SwagConfig {
        burn_in: 300,
        max_columns: 600,
        ..SwagConfig::default()
    };
    let mut state = ok(SwagState::new(cfg, model.param_count(), &DeviationPlacement::new(dram(), "dev")))?;
    let mut trainer = ok(SgdTrainer::new(TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }))?;
    for _ in 0..2 {
        ok(trainer.sgd_epoch(&mut model, &train, |theta| state.update(theta)))?;
    }
    ensure(state.rank() == 600 && state.accepted() == 900, || {
        format!("rank {} after {} accepted", state.rank(), state.accepted())
    })?;

    let point = ok(point_predict(&model, &model.flatten(), test.inputs()))?;
    let bma = ok(bma_predict(&model, &state, test.inputs(), 30, 10))?;
    ensure(point.is_valid(1e-9) && bma.is_valid(1e-9), || "invalid predictive rows".into())?;

    // A constant trajectory has zero covariance.
    let degenerate_cfg = SwagConfig {
        max_columns: 4,
        variance_floor: 0.0,
        ..SwagConfig::default()
    };
    let mut degenerate = ok(SwagState::new(
        degenerate_cfg,
        model.param_count(),
        &DeviationPlacement::new(dram(), "flat"),
    ))?;
    let theta = model.flatten();
    for _ in 0..5 {
        ok(degenerate.update(&theta))?;
    }
    let flat_bma = ok(bma_predict(&model, &degenerate, test.inputs(), 30, 3))?;
    let flat_point = ok(point_predict(&model, degenerate.mean(), test.inputs()))?;
    ensure(flat_bma.probs == flat_point.probs, || "zero-covariance BMA differs from point".into())?;

    let p = ok(evaluate(&point, test.labels(), None))?;
    let b = ok(evaluate(&bma, test.labels(), Some(10)))?;
    Ok(format!(
        "{source}: point nll {:.4} ece {:.4} acc {:.3}; SWAG S=30 nll {:.4} ece {:.4} acc {:.3}",
        p.nll, p.ece, p.accuracy, b.nll, b.ece, b.accuracy
    ))
}

// 11. Checkpoint mid-run, restore, continue.
fn checkpoint_resume() -> Check {
    let data = ok(synthetic_dataset(11, 200, 30, 4))?;
    let layers = [30, 12, 4];
    let cfg = SwagConfig {
        burn_in: 7,
        max_columns: 25,
        ..SwagConfig::default()
    };
    let train = TrainConfig {
        minibatch_size: 16,
        minibatches_per_epoch: 40,
        epochs: 3,
        learning_rate: 0.1,
        rng_seed: 11,
    };
    let p = MlpModel::new(&layers, 1).unwrap().param_count();

    let mut model = ok(MlpModel::new(&layers, 1))?;
    let mut trainer = ok(SgdTrainer::new(train))?;
    let mut state = ok(SwagState::new(cfg, p, &DeviationPlacement::new(dram(), "dev")))?;
    for _ in 0..3 {
        ok(trainer.sgd_epoch(&mut model, &data, |t| state.update(t)))?;
    }
    let uninterrupted = ok(state.checkpoint_bytes())?;

    let mut resumed_count = 0;
    for (name, backend) in all_backends() {
        let mut model = ok(MlpModel::new(&layers, 1))?;
        let mut trainer = ok(SgdTrainer::new(train))?;
        let mut state = ok(SwagState::new(cfg, p, &DeviationPlacement::new(dram(), "dev")))?;
        ok(trainer.sgd_epoch(&mut model, &data, |t| state.update(t)))?;
        ok(state.flush())?;
        let bytes = ok(state.checkpoint_bytes())?;
        drop(state);
        let placement = DeviationPlacement::new(ok(backend.build())?, "restored")
            .with_coalescer(Some(CoalescerConfig::when_full(3)));
        let mut state = ok(SwagState::restore(bytes.as_slice(), &placement))?;
        for _ in 0..2 {
            ok(trainer.sgd_epoch(&mut model, &data, |t| state.update(t)))?;
        }
        ok(state.flush())?;
        ensure(ok(state.checkpoint_bytes())? == uninterrupted, || {
            format!("{name}: resumed state differs")
        })?;
        resumed_count += 1;
    }
    Ok(format!("resumed on {resumed_count} backends, final checkpoints identical"))
}

// 12. IDX headers.
fn idx_golden() -> Check {
    let header = |t: u8, dims: &[u32]| {
        let mut b = vec![0, 0, t, dims.len() as u8];
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b
    };
    let mut images = header(0x08, &[60000, 28, 28]);
    ensure(images[..4] == [0x00, 0x00, 0x08, 0x03], || "image magic".into())?;
    images.resize(images.len() + 47_040_000, 0);
    let t = ok(parse_idx(&images))?;
    ensure(t.dims == [60000, 28, 28] && t.data.len() == 47_040_000, || "image dims".into())?;

    let mut labels = header(0x08, &[10000]);
    labels.extend((0..10000).map(|i| (i % 10) as u8));
    let t = ok(parse_idx(&labels))?;
    ensure(t.dims == [10000] && matches!(t.data, IdxData::U8(ref v) if v.len() == 10000), || {
        "label vector".into()
    })?;

    ensure(matches!(parse_idx(&header(0x07, &[1, 1, 1])), Err(Error::Format(_))), || {
        "type 0x07 accepted".into()
    })?;
    labels.pop();
    ensure(matches!(parse_idx(&labels), Err(Error::Corrupt(_))), || "truncation accepted".into())?;
    let mut bad = header(0x08, &[1]);
    bad.push(0);
    bad[0] = 0x01;
    ensure(matches!(parse_idx(&bad), Err(Error::Format(_))), || "bad magic accepted".into())?;
    Ok("magic, dimension arithmetic, truncation and type errors".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 12] = [
        ("moment oracle equivalence", moment_oracle, Duration::from_secs(10)),
        ("deviation-matrix oracle", deviation_oracle, Duration::from_secs(1)),
        ("sampling correctness", sampling_correctness, Duration::from_secs(30)),
        ("size formula vs published sizes", size_formula, Duration::from_secs(1)),
        ("backend equivalence", backend_equivalence, Duration::from_secs(60)),
        ("simulated 1:3 ratio", simulated_ratio, Duration::from_secs(60)),
        ("cache pathology", cache_pathology, Duration::from_secs(60)),
        ("write coalescer", coalescer, Duration::from_secs(10)),
        ("gradient check", gradient_check, Duration::from_secs(30)),
        ("end-to-end desk run", end_to_end, Duration::from_secs(300)),
        ("checkpoint resume", checkpoint_resume, Duration::from_secs(60)),
        ("IDX parser", idx_golden, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= *budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.2?}, budget {:?}", elapsed, budget))
            }
        });
        match outcome {
            Ok(detail) => println!("[PASS] {:>2}. {name} ({:.2?}): {detail}", i + 1, elapsed),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name} ({:.2?}): {why}", i + 1, elapsed);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
