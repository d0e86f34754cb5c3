use std::path::PathBuf;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpscale::commmodel::{comm_time, overlap_timeline, per_iteration_traffic};
use dpscale::datamodel::{data_layer_stall, epoch_traffic, initial_copy_bytes};
use dpscale::netspec::{conv_effective_size, flops_per_iteration, gemm_shapes, model_bytes, param_count, Direction};
use dpscale::perfmodel::{
    amdahl_speedup, calibrate, free_comm_speedup_curve, iteration_compute_time, layer_times, Anchor,
};
use dpscale::scalesim::simulate;
use dpscale::sgdcore::{blobs, forward_backward, sgd_step, Mlp};
use dpscale::{
    ClusterSpec, DatasetSpec, DeviceProfile, GemmCurve, LayerKind, LayerSpec, ModelState, NetworkSpec, Overlap,
    Scenario, Scheme, SmallGemm, Storage,
};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn fixture(name: &str) -> NetworkSpec {
    NetworkSpec::load(data(&format!("networks/{name}.net"))).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// A chain of fully connected layers with the given widths.
fn fc_chain(widths: &[u64]) -> NetworkSpec {
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec::fully_connected(format!("fc{i}"), w[0], w[1]))
        .collect();
    let net = NetworkSpec {
        name: "chain".into(),
        default_batch: 64,
        default_step: 0.01,
        iterations_to_convergence: 1000,
        precision_bytes: 4,
        backward_multiplier: 2.0,
        layers,
    };
    net.validate().unwrap();
    net
}

fn any_net() -> impl Strategy<Value = NetworkSpec> {
    prop_oneof![
        Just(fixture("alexnet")),
        Just(fixture("googlenet")),
        prop::collection::vec(1u64..4096, 2..6).prop_map(|w| fc_chain(&w)),
    ]
}

fn any_device() -> impl Strategy<Value = DeviceProfile> {
    (
        1e9f64..1e13,
        0.0f64..1e-3,
        1u64..256,
        0.0f64..=1.0,
        proptest::option::of(1e6f64..1e10),
        0.01f64..1.0,
    )
        .prop_map(|(flops, lat, sat, exp, small, other)| DeviceProfile {
            name: "random".into(),
            effective_flops: flops,
            fixed_layer_latency: lat,
            per_kind_efficiency: [(LayerKind::Pooling, other), (LayerKind::Relu, other), (LayerKind::Lrn, other)]
                .into_iter()
                .collect(),
            gemm_curve: GemmCurve::power_law(sat, exp),
            small_gemm: small.map(|f| SmallGemm { saturation_flops: f, exponent: 1.0 }),
        })
}

fn any_cluster() -> impl Strategy<Value = ClusterSpec> {
    (
        1e8f64..1e11,
        0.05f64..=1.0,
        0.0f64..1e-4,
        prop::sample::select(Scheme::ALL.to_vec()),
        prop::sample::select(vec![Overlap::PerLayer, Overlap::WholeModel]),
    )
        .prop_map(|(bw, eff, lat, scheme, overlap)| ClusterSpec {
            n: 1,
            link_bandwidth: bw,
            bandwidth_efficiency: eff,
            link_latency: lat,
            scheme,
            overlap,
        })
}

fn shared_fs(metadata: f64) -> DatasetSpec {
    DatasetSpec {
        total_bytes: 150e9,
        sample_count: 1_281_167,
        epochs_to_convergence: 90,
        storage: Storage::SharedFs,
        fs_metadata_latency: metadata,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flops_are_linear_in_batch(net in any_net(), b in 1u64..512, c in 2u64..16) {
        for dir in [Direction::Forward, Direction::Backward, Direction::ForwardBackward] {
            let f = flops_per_iteration(&net, b, dir);
            prop_assert_eq!(flops_per_iteration(&net, 2 * b, dir), 2.0 * f);
            prop_assert!(close(flops_per_iteration(&net, c * b, dir), c as f64 * f, 1e-12));
        }
    }

    #[test]
    fn fc_gemm_depends_on_batch_only_through_m(net in any_net(), b in 1u64..512) {
        for layer in net.layers.iter().filter(|l| l.kind == LayerKind::FullyConnected) {
            let s1 = gemm_shapes(layer, b)[0];
            let s2 = gemm_shapes(layer, 3 * b)[0];
            prop_assert_eq!((s1.m, s2.m), (b, 3 * b));
            prop_assert_eq!((s1.k_dim, s1.n_dim, s1.count), (s2.k_dim, s2.n_dim, s2.count));
        }
    }

    #[test]
    fn effective_size_shrinks_with_kernel(side in 1u64..256, k in 1u64..64) {
        let p = side * side;
        if let (Ok(z1), Ok(z2)) = (conv_effective_size(p, k), conv_effective_size(p, k + 1)) {
            prop_assert!(z2 <= z1);
        }
    }

    #[test]
    fn model_size_ignores_batch(net in any_net(), b in 1u64..4096) {
        let resized = NetworkSpec { default_batch: b, ..net.clone() };
        prop_assert_eq!(param_count(&resized), param_count(&net));
        prop_assert_eq!(model_bytes(&resized, 1.0).unwrap(), model_bytes(&net, 1.0).unwrap());
        prop_assert_eq!(resized.summary().total_weights, net.summary().total_weights);
    }

    #[test]
    fn amdahl_is_bounded_by_serial_fraction(s in 1e-4f64..1.0, n in 1u64..1_000_000) {
        let sp = amdahl_speedup(s, n);
        prop_assert!(sp <= 1.0 / s);
        prop_assert!(sp >= 1.0);
        prop_assert!(sp <= n as f64 * (1.0 + 1e-12));
        prop_assert!(close(amdahl_speedup(s, 1 << 50), 1.0 / s, 1e-9));
    }

    #[test]
    fn free_comm_speedup_is_sublinear_and_monotone(net in any_net(), dev in any_device()) {
        let ns: Vec<u64> = (0..=8).map(|k| 1 << k).collect();
        let curve = free_comm_speedup_curve(&net, 256, &dev, &ns).unwrap();
        prop_assert_eq!(curve.points[0].speedup, 1.0);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].speedup >= w[0].speedup * (1.0 - 1e-12));
        }
        for p in &curve.points {
            prop_assert!(p.speedup <= p.n as f64 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gemm_curve_is_monotone(sat in 1u64..512, exp in 0.0f64..2.0, m in 1u64..1024) {
        let c = GemmCurve::power_law(sat, exp);
        prop_assert!(c.efficiency(m) <= c.efficiency(m + 1));
        prop_assert!(c.efficiency(m) > 0.0 && c.efficiency(m) <= 1.0);
    }

    #[test]
    fn saturated_fc_nets_scale_exactly(widths in prop::collection::vec(1u64..2048, 2..5), sat in 1u64..128, b in 1u64..256) {
        let net = fc_chain(&widths);
        let dev = DeviceProfile {
            name: "saturated".into(),
            effective_flops: 1e12,
            fixed_layer_latency: 0.0,
            per_kind_efficiency: Default::default(),
            gemm_curve: GemmCurve::power_law(sat, 0.5),
            small_gemm: None,
        };
        let b = b.max(sat);
        let t = iteration_compute_time(&net, b, &dev);
        prop_assert!(close(iteration_compute_time(&net, 2 * b, &dev), 2.0 * t, 1e-12));
    }

    #[test]
    fn calibration_only_rescales_flops(net in any_net(), dev in any_device(), factor in 0.1f64..10.0) {
        let dev = DeviceProfile { fixed_layer_latency: 0.0, ..dev };
        let measured = iteration_compute_time(&net, 64, &dev) * factor;
        let fitted = calibrate(&dev, &[Anchor { net: &net, batch: 64, seconds: measured }]).unwrap();
        prop_assert_eq!(&DeviceProfile { effective_flops: dev.effective_flops, ..fitted.clone() }, &dev);
        prop_assert!(close(iteration_compute_time(&net, 64, &fitted), measured, 1e-9));
        let before = layer_times(&net, 64, &dev);
        let after = layer_times(&net, 64, &fitted);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!(close(y.total(), x.total() * factor, 1e-9));
        }
        let again = calibrate(&fitted, &[Anchor { net: &net, batch: 64, seconds: measured }]).unwrap();
        prop_assert!(close(again.effective_flops, fitted.effective_flops, 1e-12));
    }

    #[test]
    fn comm_time_grows_with_size_and_nodes(cluster in any_cluster(), m in 1.0f64..1e10, dm in 0.0f64..1e9, n in 1u64..512) {
        for scheme in Scheme::ALL {
            let t = comm_time(scheme, n, m, &cluster);
            prop_assert!(comm_time(scheme, n, m + dm, &cluster) >= t);
            prop_assert!(comm_time(scheme, n + 1, m, &cluster) >= t);
            if n >= 2 {
                prop_assert!(per_iteration_traffic(scheme, n, m) > 0.0);
            } else {
                prop_assert_eq!(t, 0.0);
                prop_assert_eq!(per_iteration_traffic(scheme, n, m), 0.0);
            }
        }
    }

    #[test]
    fn reduction_divides_bandwidth_term(cluster in any_cluster(), m in 1.0f64..1e10, n in 2u64..512, r in 1.0f64..64.0) {
        for scheme in Scheme::ALL {
            let latency = comm_time(scheme, n, 0.0, &cluster);
            let full = comm_time(scheme, n, m, &cluster) - latency;
            let reduced = comm_time(scheme, n, m / r, &cluster) - latency;
            prop_assert!(close(reduced, full / r, 1e-9));
        }
    }

    #[test]
    fn timeline_respects_lower_bounds(
        net in any_net(), dev in any_device(), cluster in any_cluster(), b in 1u64..128, n in 1u64..64, r in 1.0f64..8.0,
    ) {
        let cl = cluster.with_nodes(n);
        let tl = overlap_timeline(&net, b, &dev, &cl, r).unwrap();
        let pure_comm = comm_time(cl.scheme, n, model_bytes(&net, r).unwrap(), &cl);
        prop_assert!(tl.forward_end > 0.0 && tl.forward_end <= tl.backward_end);
        prop_assert_eq!(tl.iteration_time, tl.backward_end.max(tl.comm_end));
        prop_assert!(tl.iteration_time >= tl.backward_end);
        prop_assert!(tl.iteration_time >= (tl.forward_end + pure_comm) * (1.0 - 1e-12));
        prop_assert!(close(tl.idle_fraction * tl.iteration_time, (tl.comm_end - tl.backward_end).max(0.0), 1e-12)
            || tl.idle_fraction == 0.0 && tl.comm_end <= tl.backward_end);
        prop_assert!(close(tl.backward_end, iteration_compute_time(&net, b, &dev), 1e-12));
        if n == 1 {
            prop_assert_eq!(tl.link_busy, 0.0);
            prop_assert!(!tl.comm_bound());
        }
        // Reducing the model never touches compute.
        let plain = overlap_timeline(&net, b, &dev, &cl, 1.0).unwrap();
        prop_assert_eq!(plain.backward_end, tl.backward_end);
    }

    #[test]
    fn stall_shrinks_with_bandwidth(
        cluster in any_cluster(), bytes in 1.0f64..1e9, samples in 1u64..1024, metadata in 0.0f64..1e-2,
        r1 in 0.01f64..=1.0, r2 in 0.01f64..=1.0, scale in 1.0f64..10.0,
    ) {
        let d = shared_fs(metadata);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let slow = data_layer_stall(bytes, samples, &cluster, lo, &d).unwrap();
        let fast = data_layer_stall(bytes, samples, &cluster, hi, &d).unwrap();
        prop_assert!(fast <= slow);
        let wider = ClusterSpec { link_bandwidth: cluster.link_bandwidth * scale, ..cluster.clone() };
        prop_assert!(data_layer_stall(bytes, samples, &wider, lo, &d).unwrap() <= slow);
    }

    #[test]
    fn data_volume_by_storage(n in 1u64..1024, epochs in 1u64..200) {
        let d = DatasetSpec { epochs_to_convergence: epochs, ..shared_fs(0.0) };
        prop_assert_eq!(epoch_traffic(&d), 150e9 * epochs as f64);
        prop_assert_eq!(initial_copy_bytes(&d, n), 0.0);
        let local = DatasetSpec { storage: Storage::NodeLocal, ..d };
        prop_assert_eq!(initial_copy_bytes(&local, n), n as f64 * initial_copy_bytes(&local, 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn reports_are_deterministic_and_consistent(dev in any_device(), cluster in any_cluster(), shared in any::<bool>()) {
        let mut s = Scenario::load(data("scenarios/alexnet-k80-fdr.toml")).unwrap();
        s.device = dev;
        s.cluster = cluster;
        if shared {
            s.dataset = Some(shared_fs(1e-5));
        }
        let Ok(a) = simulate(&s) else {
            // A saturated link leaves nothing for the data layer; that is an error, not a row.
            prop_assert!(shared);
            return Ok(());
        };
        let b = simulate(&s).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        prop_assert_eq!(a.row(1).unwrap().speedup, 1.0);
        for row in &a.rows {
            prop_assert_eq!(row.comm_bound, row.timeline.comm_end > row.timeline.backward_end);
            prop_assert!(row.iteration_s >= row.compute_s);
            prop_assert!(row.iteration_s >= row.data_stall_s);
            prop_assert!(row.speedup <= row.n as f64 * (1.0 + 1e-12));
        }
        if let Some(x) = a.crossover_n {
            for row in a.rows.iter().filter(|r| r.n < x) {
                prop_assert!(!row.comm_bound, "row n={} is comm bound before the crossover {}", row.n, x);
            }
        }
    }

    #[test]
    fn shard_weighted_mean_is_full_gradient(seed in 0u64..1000, cuts in prop::collection::btree_set(1usize..96, 1..6)) {
        let d = blobs(256, 5, 3, 1.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelState::init(Mlp { input: 5, hidden: 7, output: 3 }, &mut rng);
        let idx: Vec<usize> = (0..96).map(|i| (i * 13 + seed as usize) % d.len()).collect();
        let (_, full) = forward_backward(&model, &d, &idx).unwrap();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(idx.len());
        let mut acc = vec![0.0; model.w.len()];
        for w in bounds.windows(2) {
            let (_, g) = forward_backward(&model, &d, &idx[w[0]..w[1]]).unwrap();
            let weight = (w[1] - w[0]) as f64 / idx.len() as f64;
            for (a, v) in acc.iter_mut().zip(&g.dw) {
                *a += weight * v;
            }
        }
        for (a, f) in acc.iter().zip(&full.dw) {
            prop_assert!((a - f).abs() <= 1e-12, "{} vs {}", a, f);
        }
    }

    #[test]
    fn sgd_step_is_exact(seed in 0u64..1000, step in 1e-4f64..10.0) {
        let d = blobs(64, 4, 2, 1.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelState::init(Mlp { input: 4, hidden: 5, output: 2 }, &mut rng);
        let idx: Vec<usize> = (0..16).collect();
        let (_, g) = forward_backward(&model, &d, &idx).unwrap();
        let next = sgd_step(&model, &g, step).unwrap();
        prop_assert_eq!(next.t, model.t + 1);
        for ((w1, w0), dw) in next.w.iter().zip(&model.w).zip(&g.dw) {
            prop_assert_eq!(*w1, w0 - step * dw);
        }
    }
}
