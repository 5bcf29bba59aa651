//! The twelve acceptance criteria. Runs as a plain binary so every criterion
//! prints one PASS or FAIL line; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splitedge::compression::{compress_payload, quantize_weights_step, CompressionSpec};
use splitedge::data::{dirichlet_partition, Dataset};
use splitedge::network::{LinkSpec, NodeSpec, SharedPool, Tier, Topology};
use splitedge::nn::{loss_grad, LayerKind, ModelProfile, ParamGrads, SegmentState};
use splitedge::planner::oracle::{exhaustive_route, grid_minmax};
use splitedge::planner::{allocate_minmax, route_multihop, RouteProblem, SplitProblem};
use splitedge::protocols::{
    centralized_epoch, epoch_batches, ClientTiming, Node, PayloadKind, ProtocolConfig, ProtocolKind, RoundOutput,
    Session, Shard,
};
use splitedge::rng;
use splitedge::Tensor;
use splitedge_cli::config::LoadedConfig;
use splitedge_cli::latency::latency;
use splitedge_cli::runner::Overrides;

// Tolerances and limits.
const CENTRALIZED_LIMIT: Duration = Duration::from_secs(60);
const EPSL_ACCURACY_LIMIT: Duration = Duration::from_secs(300);
const EPSL_VS_PSL_POINTS: f64 = 0.02;
const VS_CENTRALIZED_POINTS: f64 = 0.05;
const ALLOCATOR_GRID_GAP: f64 = 0.01;
const GRID_POINTS: usize = 200;
const MONOTONE_SLACK: f64 = 1e-8;
const FD_REL_ERR: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const COMPRESSED_POINTS: f64 = 0.03;
const SEEDS: [u64; 3] = [101, 202, 303];

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 12] = [
        ("centralized equivalence", c01_centralized_equivalence),
        ("EPSL phi=0 reduces to PSL", c02_epsl_reduction),
        ("EPSL O(1) server backward and downlink", c03_epsl_constant_cost),
        ("EPSL accuracy on blobs", c04_epsl_accuracy),
        ("SFL at cut L is FedAvg", c05_sfl_fedavg_bridge),
        ("hierarchical latency ordering", c06_hierarchy_ordering),
        ("allocator vs grid oracle", c07_allocator_oracle),
        ("routing vs exhaustive oracle", c08_routing_oracle),
        ("finite-difference gradients", c09_gradient_checks),
        ("U-shaped keeps labels local", c10_ushaped_privacy),
        ("async PSL sanity", c11_async_sanity),
        ("compression identity and 8-bit", c12_compression),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f));
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {:>2} {name} ({secs:.2} s): {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn mlp4() -> ModelProfile {
    ModelProfile::mlp(3, &[8, 6, 5], 3).unwrap()
}

fn iid_shards(data: &Dataset, clients: usize, min_size: usize, seed: u64) -> Vec<Shard> {
    dirichlet_partition(&data.labels, data.classes, clients, f64::INFINITY, min_size, seed)
        .unwrap()
        .iter()
        .map(|rows| data.shard(rows).unwrap())
        .collect()
}

fn blob_shards(clients: usize, per_client: usize, seed: u64) -> Vec<Shard> {
    let d = Dataset::blobs(clients * per_client, 3, 3, 1.0, seed, 0).unwrap();
    iid_shards(&d, clients, 1, seed)
}

fn cfg(kind: ProtocolKind, cut: usize, seed: u64, batch: usize) -> ProtocolConfig {
    let mut c = ProtocolConfig::new(kind, cut);
    c.seed = seed;
    c.batch_size = batch;
    c.lr = 0.1;
    c
}

fn run(p: &ModelProfile, shards: Vec<Shard>, c: ProtocolConfig, rounds: usize) -> (Session, Vec<RoundOutput>) {
    let mut s = Session::new(p, shards, c, None).unwrap();
    let outs = (0..rounds).map(|_| s.run_round().unwrap()).collect();
    (s, outs)
}

fn same_state(a: &Session, b: &Session) -> bool {
    a.server().params_bit_eq(b.server())
        && a.clients().iter().zip(b.clients()).all(|(x, y)| x.segments.iter().zip(&y.segments).all(|(s, t)| s.params_bit_eq(t)))
}

fn centralized(p: &ModelProfile, shard: &Shard, rounds: usize, batch: usize, lr: f64, seed: u64) -> SegmentState {
    let mut model = SegmentState::init(p, 0, p.len(), seed).unwrap();
    for r in 0..rounds {
        centralized_epoch(&mut model, shard, &epoch_batches(shard.len(), batch, seed, 0, r), lr).unwrap();
    }
    model
}

fn c01_centralized_equivalence() -> String {
    let t = Instant::now();
    let p = mlp4();
    let l = p.len();
    let seed = 5;
    let shard = blob_shards(1, 48, 1).remove(0);
    let reference = centralized(&p, &shard, 3, 8, 0.1, seed);
    let mut runs = 0;
    let mut check = |c: ProtocolConfig| {
        let label = format!("{:?} cut {} cut2 {:?} phi {}", c.kind, c.cut, c.cut2, c.epsl_phi);
        let (s, _) = run(&p, vec![shard.clone()], c, 3);
        assert!(s.full_model(0).unwrap().params_bit_eq(&reference), "{label}");
        runs += 1;
    };
    for cut in 0..=l {
        for kind in [ProtocolKind::VanillaSl, ProtocolKind::Psl, ProtocolKind::Sfl] {
            check(cfg(kind, cut, seed, 8));
        }
        for phi in [0.0, 0.5, 1.0] {
            let mut c = cfg(ProtocolKind::Epsl, cut, seed, 8);
            c.epsl_phi = phi;
            check(c);
        }
    }
    for cut in 1..l {
        for cut2 in cut + 1..l {
            let mut c = cfg(ProtocolKind::Ushaped, cut, seed, 8);
            c.cut2 = Some(cut2);
            check(c);
        }
    }
    assert!(t.elapsed() < CENTRALIZED_LIMIT, "took {:?}", t.elapsed());
    format!("{runs} runs bit-identical to centralized SGD")
}

fn c02_epsl_reduction() -> String {
    let p = mlp4();
    let shards = blob_shards(5, 32, 2);
    let (a, ta) = run(&p, shards.clone(), cfg(ProtocolKind::Psl, 3, 9, 8), 50);
    let (b, tb) = run(&p, shards, cfg(ProtocolKind::Epsl, 3, 9, 8), 50);
    assert!(same_state(&a, &b), "weights differ");
    let bytes = |t: &[RoundOutput]| t.iter().map(|o| o.trace.total_bytes()).sum::<u64>();
    assert_eq!(bytes(&ta), bytes(&tb));
    assert!(ta.iter().zip(&tb).all(|(x, y)| x.trace == y.trace));
    format!("50 rounds, {} bytes each", bytes(&ta))
}

fn c03_epsl_constant_cost() -> String {
    let p = mlp4();
    let per_round = |kind: ProtocolKind, m: usize| {
        let mut c = cfg(kind, 3, 4, 8);
        c.epsl_phi = 1.0;
        let (_, outs) = run(&p, blob_shards(m, 32, 3), c, 1);
        let o = &outs[0];
        let down = o.trace.bytes_where(|msg| msg.kind == PayloadKind::Grad && msg.src == Node::Server);
        (o.compute.server_backward(), down)
    };
    let (e1, p1) = (per_round(ProtocolKind::Epsl, 1), per_round(ProtocolKind::Psl, 1));
    assert_eq!(e1, p1);
    for m in [2, 4, 8, 16] {
        let e = per_round(ProtocolKind::Epsl, m);
        let ps = per_round(ProtocolKind::Psl, m);
        assert_eq!(e, e1, "EPSL at M={m}");
        assert_eq!(ps.0, p1.0 * m as f64, "PSL cycles at M={m}");
        assert_eq!(ps.1, p1.1 * m as u64, "PSL bytes at M={m}");
    }
    format!("EPSL {} cycles and {} B per round for every M; PSL x M", e1.0, e1.1)
}

fn accuracy(model: &SegmentState, test: &Dataset) -> f64 {
    let (logits, _) = model.forward(&test.inputs).unwrap();
    let pred = splitedge::nn::argmax_rows(&logits);
    pred.iter().zip(&test.labels).filter(|(a, b)| a == b).count() as f64 / test.len() as f64
}

fn c04_epsl_accuracy() -> String {
    let t = Instant::now();
    let p = ModelProfile::mlp(10, &[32, 32], 5).unwrap();
    let (rounds, batch, lr) = (10, 32, 0.05);
    let mut lines = Vec::new();
    for seed in SEEDS {
        let train = Dataset::blobs(10_000, 5, 10, 3.0, seed, 0).unwrap();
        let test = Dataset::blobs(2_000, 5, 10, 3.0, seed, 1).unwrap();
        let shards = iid_shards(&train, 5, batch, seed);
        let mut accs = Vec::new();
        for phi in [None, Some(1.0)] {
            let mut c = cfg(if phi.is_some() { ProtocolKind::Epsl } else { ProtocolKind::Psl }, 2, seed, batch);
            c.lr = lr;
            c.epsl_phi = phi.unwrap_or(0.0);
            let (s, _) = run(&p, shards.clone(), c, rounds);
            accs.push(s.evaluate(&test.inputs, &test.labels).unwrap());
        }
        let all: Vec<usize> = (0..train.len()).collect();
        let central = accuracy(&centralized(&p, &train.shard(&all).unwrap(), rounds, batch, lr, seed), &test);
        let (psl, epsl) = (accs[0], accs[1]);
        assert!((epsl - psl).abs() <= EPSL_VS_PSL_POINTS, "seed {seed}: epsl {epsl} psl {psl}");
        assert!((psl - central).abs() <= VS_CENTRALIZED_POINTS, "seed {seed}: psl {psl} central {central}");
        assert!((epsl - central).abs() <= VS_CENTRALIZED_POINTS, "seed {seed}: epsl {epsl} central {central}");
        lines.push(format!("seed {seed}: psl {psl:.4} epsl {epsl:.4} central {central:.4}"));
    }
    assert!(t.elapsed() < EPSL_ACCURACY_LIMIT, "took {:?}", t.elapsed());
    lines.join("; ")
}

fn c05_sfl_fedavg_bridge() -> String {
    let p = mlp4();
    let l = p.len();
    let shards = blob_shards(3, 24, 6);
    let mut sfl = Session::new(&p, shards.clone(), cfg(ProtocolKind::Sfl, l, 8, 8), None).unwrap();
    let mut fed = Session::new(&p, shards, cfg(ProtocolKind::Fedavg, l, 8, 8), None).unwrap();
    for r in 0..20 {
        sfl.run_round().unwrap();
        fed.run_round().unwrap();
        for c in sfl.clients() {
            assert!(c.head().params_bit_eq(fed.server()), "round {r}, client {}", c.id);
        }
    }
    "20 rounds bit-identical".into()
}

fn c06_hierarchy_ordering() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/three_tier.toml");
    let loaded = LoadedConfig::from_file(&path).unwrap();
    let t = &loaded.config.topology;
    assert_eq!(t.server_rate, 7e9);
    assert_eq!(t.cloud_rate, Some(20e9));
    assert_eq!(t.total_hz, Some(70e6));
    assert_eq!(t.client_rate_range, Some([0.1e9, 0.5e9]));
    assert_eq!(t.edge_cloud_fraction, Some(1.0 / 20.0));
    assert_eq!(loaded.config.data.clients, 5);
    let rows = latency(&loaded, Overrides::default()).unwrap();
    let sizes: Vec<usize> = loaded.config.latency.as_ref().unwrap().dataset_sizes.clone();
    let get = |size: usize, arch: &str| {
        rows.iter()
            .find(|r| r.dataset_size == size && r.architecture == arch)
            .unwrap()
            .total_latency_s
    };
    let mut gaps = Vec::new();
    for &n in &sizes {
        let h = get(n, "user_edge_cloud");
        let (e, c) = (get(n, "user_edge"), get(n, "user_cloud"));
        gaps.push(e.min(c) - h);
    }
    let largest = *sizes.last().unwrap();
    assert!(get(largest, "user_edge_cloud") <= get(largest, "user_edge"));
    assert!(get(largest, "user_edge_cloud") <= get(largest, "user_cloud"));
    assert!(gaps.windows(2).all(|w| w[1] > w[0]), "gaps {gaps:?}");
    let shown: Vec<String> = sizes.iter().zip(&gaps).map(|(n, g)| format!("{n}: {g:.1} s")).collect();
    format!("gap to best two-tier plan {}", shown.join(", "))
}

fn random_profile(rng: &mut ChaCha8Rng, max_layers: usize) -> ModelProfile {
    let layers = rng.random_range(2..=max_layers);
    let mut width = rng.random_range(2..40);
    let input = width;
    let mut kinds = Vec::new();
    while kinds.len() + 1 < layers {
        if matches!(kinds.last(), Some(LayerKind::Dense { .. })) && rng.random_bool(0.4) {
            kinds.push(LayerKind::Relu);
        } else {
            let out = rng.random_range(1..48);
            kinds.push(LayerKind::Dense { inputs: width, outputs: out });
            width = out;
        }
    }
    kinds.push(LayerKind::SoftmaxHead {
        inputs: width,
        classes: rng.random_range(2..6),
    });
    ModelProfile::from_kinds(&[input], &kinds).unwrap()
}

fn pool(hz: f64) -> Option<SharedPool> {
    Some(SharedPool {
        total_hz: hz,
        spectral_efficiency: 1.0,
    })
}

fn split_problem<'a>(p: &'a ModelProfile, topo: &'a Topology) -> SplitProblem<'a> {
    SplitProblem {
        profile: p,
        topology: topo,
        clients: 3,
        batch_size: 16,
        compression: CompressionSpec::default(),
    }
}

fn c07_allocator_oracle() -> String {
    let mut rng = rng::stream(7, &[7]);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let p = random_profile(&mut rng, 6);
        let rates: Vec<f64> = (0..3).map(|_| rng.random_range(0.1e9..0.5e9)).collect();
        let topo = Topology::star(rng.random_range(1e9..10e9), &rates, pool(rng.random_range(1e6..70e6)), 0.0).unwrap();
        let sp = split_problem(&p, &topo);
        for cut in 0..=p.len() {
            let a = allocate_minmax(&sp, cut).unwrap().step_latency();
            let grid = grid_minmax(&sp, cut, GRID_POINTS).unwrap();
            assert!(a <= grid * (1.0 + 1e-12), "instance {i} cut {cut}: allocator {a} above grid {grid}");
            let gap = (grid - a) / grid;
            assert!(gap <= ALLOCATOR_GRID_GAP + 1e-12, "instance {i} cut {cut}: gap {gap}");
            worst = worst.max(gap);
        }
    }
    let mut pairs = 0;
    for _ in 0..100 {
        let p = random_profile(&mut rng, 6);
        let rates: Vec<f64> = (0..3).map(|_| rng.random_range(0.1e9..0.5e9)).collect();
        let (server, hz, grow) = (rng.random_range(1e9..10e9), rng.random_range(1e6..70e6), rng.random_range(1.0..3.0));
        let base = Topology::star(server, &rates, pool(hz), 0.0).unwrap();
        let big = if rng.random_bool(0.5) {
            Topology::star(server, &rates, pool(hz * grow), 0.0).unwrap()
        } else {
            Topology::star(server * grow, &rates, pool(hz), 0.0).unwrap()
        };
        for cut in 0..=p.len() {
            let a = allocate_minmax(&split_problem(&p, &base), cut).unwrap().step_latency();
            let b = allocate_minmax(&split_problem(&p, &big), cut).unwrap().step_latency();
            assert!(b <= a * (1.0 + MONOTONE_SLACK), "enlarged pool slower: {b} > {a}");
        }
        pairs += 1;
    }
    format!("worst grid gap {:.4}%, {pairs} monotone pairs", worst * 100.0)
}

/// Every connected simple graph on `n` labelled nodes, as edge lists.
fn connected_graphs(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(a, b) in &edges {
                for (x, y) in [(a, b), (b, a)] {
                    if x == v && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        if seen.iter().all(|&s| s) {
            out.push(edges);
        }
    }
    out
}

fn c08_routing_oracle() -> String {
    let mut rng = rng::stream(8, &[8]);
    let graphs: Vec<Vec<Vec<(usize, usize)>>> = (0..=5).map(|n| if n < 2 { Vec::new() } else { connected_graphs(n) }).collect();
    let mut problems = 0;
    let mut feasible = 0;
    for i in 0..20 {
        let p = random_profile(&mut rng, 8);
        let nodes: Vec<(f64, u64)> = (0..5)
            .map(|_| {
                let mem = if rng.random_bool(0.3) { rng.random_range(500..20_000) } else { u64::MAX };
                (rng.random_range(0.1e9..20e9), mem)
            })
            .collect();
        let rate: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(1e5..1e9)).collect()).collect();
        for (n, list) in graphs.iter().enumerate().skip(2) {
            let specs: Vec<NodeSpec> = nodes[..n]
                .iter()
                .enumerate()
                .map(|(v, &(r, m))| NodeSpec::new(format!("n{v}"), if v == 0 { Tier::Client } else { Tier::Edge }, r).with_memory(m))
                .collect();
            for edges in list {
                let links = edges
                    .iter()
                    .flat_map(|&(a, b)| {
                        [(a, b), (b, a)].map(|(s, d)| LinkSpec {
                            src: format!("n{s}"),
                            dst: format!("n{d}"),
                            rate: rate[a][b],
                        })
                    })
                    .collect();
                let topo = Topology::new(specs.clone(), links, None).unwrap();
                let rp = RouteProblem {
                    profile: &p,
                    topology: &topo,
                    source: "n0".into(),
                    destinations: vec![format!("n{}", n - 1)],
                    batch_size: 8,
                };
                match (route_multihop(&rp), exhaustive_route(&rp).unwrap()) {
                    (Ok(r), Some((cost, hops))) => {
                        assert_eq!(r.cost, cost, "instance {i}, {n} nodes, edges {edges:?}");
                        assert_eq!(r.hops, hops, "instance {i}, {n} nodes, edges {edges:?}");
                        feasible += 1;
                    }
                    (Err(_), None) => {}
                    (a, b) => panic!("instance {i}, {n} nodes, edges {edges:?}: dp {a:?} vs oracle {b:?}"),
                }
                problems += 1;
            }
        }
    }
    format!("{problems} graph instances ({feasible} feasible) equal")
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Entries in `±[0.05, 1.5)`, away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(seg: &SegmentState, x: &Tensor, r: &Tensor) -> f64 {
    let (y, _) = seg.forward(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn fd_layer(kind: LayerKind, in_shape: &[usize], seed: u64) -> f64 {
    let mut rng = rng::stream(seed, &[9]);
    let profile = ModelProfile::from_kinds(in_shape, &[kind, LayerKind::Flatten]).unwrap();
    let mut seg = SegmentState::init(&profile, 0, 1, seed).unwrap();
    let mut xs = vec![3];
    xs.extend_from_slice(in_shape);
    let x = away_from_zero(&mut rng, xs);
    let mut ys = vec![3];
    ys.extend_from_slice(&profile.layers()[0].out_shape);
    let r = away_from_zero(&mut rng, ys);
    let (_, cache) = seg.forward(&x).unwrap();
    let (gx, grads) = seg.backward(&cache, &r).unwrap();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data_mut()[i] += FD_STEP;
            b.data_mut()[i] -= FD_STEP;
            (dot(&seg, &a, &r) - dot(&seg, &b, &r)) / (2.0 * FD_STEP)
        })
        .collect();
    let mut worst = rel_err(gx.data(), &numeric);
    for k in 0..seg.params()[0].len() {
        let mut numeric = Vec::new();
        for i in 0..seg.params()[0][k].len() {
            let orig = seg.params()[0][k].data()[i];
            seg.params_mut()[0][k].data_mut()[i] = orig + FD_STEP;
            let up = dot(&seg, &x, &r);
            seg.params_mut()[0][k].data_mut()[i] = orig - FD_STEP;
            let down = dot(&seg, &x, &r);
            seg.params_mut()[0][k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(grads.grads[0][k].data(), &numeric));
    }
    worst
}

fn c09_gradient_checks() -> String {
    let kinds: [(LayerKind, Vec<usize>); 5] = [
        (LayerKind::Dense { inputs: 4, outputs: 3 }, vec![4]),
        (LayerKind::Relu, vec![6]),
        (LayerKind::Conv2dSmall { in_channels: 2, out_channels: 3 }, vec![2, 5, 4]),
        (LayerKind::Flatten, vec![2, 3, 2]),
        (LayerKind::SoftmaxHead { inputs: 5, classes: 4 }, vec![5]),
    ];
    let mut worst: f64 = 0.0;
    for (kind, shape) in &kinds {
        for seed in 0..10 {
            let e = fd_layer(*kind, shape, seed);
            assert!(e < FD_REL_ERR, "{} seed {seed}: rel err {e}", kind.name());
            worst = worst.max(e);
        }
    }
    for seed in 0..10 {
        let mut rng = rng::stream(seed, &[10]);
        let logits = away_from_zero(&mut rng, vec![4, 5]);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let (_, g) = loss_grad(&logits, &labels).unwrap();
        let numeric: Vec<f64> = (0..logits.len())
            .map(|i| {
                let (mut a, mut b) = (logits.clone(), logits.clone());
                a.data_mut()[i] += FD_STEP;
                b.data_mut()[i] -= FD_STEP;
                // The loss gradient is averaged over the batch.
                (loss_grad(&a, &labels).unwrap().0 - loss_grad(&b, &labels).unwrap().0) / (2.0 * FD_STEP)
            })
            .collect();
        let e = rel_err(g.data(), &numeric);
        assert!(e < FD_REL_ERR, "loss seed {seed}: rel err {e}");
        worst = worst.max(e);
    }
    format!("5 layer kinds and the loss x 10 instances, worst rel err {worst:.2e}")
}

fn c10_ushaped_privacy() -> String {
    let p = mlp4();
    let mut c = cfg(ProtocolKind::Ushaped, 2, 12, 8);
    c.cut2 = Some(5);
    let (_, outs) = run(&p, blob_shards(3, 32, 7), c, 10);
    let mut messages = 0;
    for o in &outs {
        messages += o.trace.len();
        let leaked = o
            .trace
            .messages
            .iter()
            .filter(|m| m.kind == PayloadKind::Label && !matches!(m.dst, Node::Client(_)))
            .count();
        assert_eq!(leaked, 0, "round {}", o.round);
    }
    format!("0 label payloads to servers among {messages} messages")
}

fn c11_async_sanity() -> String {
    let p = mlp4();
    let shards = blob_shards(3, 32, 8);
    let (a, ta) = run(&p, shards.clone(), cfg(ProtocolKind::Psl, 3, 13, 8), 5);
    let mut c = cfg(ProtocolKind::AsyncPsl, 3, 13, 8);
    c.async_quorum = 3;
    let (b, tb) = run(&p, shards.clone(), c.clone(), 5);
    assert!(same_state(&a, &b), "K=M differs from PSL");
    assert!(ta.iter().zip(&tb).all(|(x, y)| x.trace == y.trace));

    c.async_quorum = 1;
    let timing = |x: f64| ClientTiming {
        fwd: x,
        up: x,
        server: 0.1,
        down: x,
        bwd: x,
    };
    let mut s = Session::new(&p, shards, c, Some(vec![timing(0.3), timing(1.0), timing(2.5)])).unwrap();
    let mut part = [0usize; 3];
    let mut max_stale = 0;
    for _ in 0..10 {
        let o = s.run_round().unwrap();
        for (t, n) in part.iter_mut().zip(&o.participation) {
            *t += n;
        }
        max_stale = max_stale.max(o.max_staleness());
    }
    assert!(max_stale > 0, "no staleness recorded");
    assert!(part[0] >= part[2], "participation {part:?}");
    format!("K=M bit-identical; K=1 max staleness {max_stale}, participation {part:?}")
}

/// PSL written directly against segment forward and backward, with no
/// compression path at all.
fn plain_psl(p: &ModelProfile, shards: &[Shard], c: &ProtocolConfig, rounds: usize) -> (Vec<SegmentState>, SegmentState) {
    let mut heads: Vec<SegmentState> = shards.iter().map(|_| SegmentState::init(p, 0, c.cut, c.seed).unwrap()).collect();
    let mut server = SegmentState::init(p, c.cut, p.len(), c.seed).unwrap();
    for r in 0..rounds {
        let plans: Vec<Vec<Vec<usize>>> =
            shards.iter().enumerate().map(|(i, s)| epoch_batches(s.len(), c.batch_size, c.seed, i, r)).collect();
        let steps = plans.iter().map(Vec::len).max().unwrap();
        for step in 0..steps {
            let mut fwd = Vec::new();
            for (i, plan) in plans.iter().enumerate() {
                let Some(rows) = plan.get(step) else { continue };
                let (x, y) = shards[i].batch(rows);
                let (act, head_cache) = heads[i].forward(&x).unwrap();
                let (logits, server_cache) = server.forward(&act).unwrap();
                let (_, g) = loss_grad(&logits, &y).unwrap();
                fwd.push((i, head_cache, server_cache, g, rows.len() as f64));
            }
            let back: Vec<(Tensor, ParamGrads)> = fwd.iter().map(|f| server.backward(&f.2, &f.3).unwrap()).collect();
            let total: f64 = fwd.iter().map(|f| f.4).sum();
            let grads: Vec<&ParamGrads> = back.iter().map(|b| &b.1).collect();
            let weights: Vec<f64> = fwd.iter().map(|f| f.4 / total).collect();
            server.sgd_step(&ParamGrads::weighted_sum(&grads, &weights).unwrap(), c.lr).unwrap();
            for (f, (cut_grad, _)) in fwd.iter().zip(&back) {
                let (_, pg) = heads[f.0].backward(&f.1, cut_grad).unwrap();
                heads[f.0].sgd_step(&pg, c.lr).unwrap();
            }
        }
    }
    (heads, server)
}

fn c12_compression() -> String {
    let spec = CompressionSpec::default();
    let mut rng = rng::stream(12, &[12]);
    for _ in 0..20 {
        let t = away_from_zero(&mut rng, vec![4, 7]);
        assert!(compress_payload(&t, &spec).unwrap().0.bit_eq(&t));
    }
    let p = mlp4();
    let mut seg = SegmentState::init(&p, 0, p.len(), 3).unwrap();
    let before = seg.clone();
    quantize_weights_step(&mut seg, spec.client_weight_bits).unwrap();
    quantize_weights_step(&mut seg, spec.server_weight_bits).unwrap();
    assert!(seg.params_bit_eq(&before));

    // Default-spec engines against engines without a compression path.
    let shards = blob_shards(3, 40, 9);
    let c = cfg(ProtocolKind::Psl, 3, 14, 8);
    let (s, _) = run(&p, shards.clone(), c.clone(), 5);
    let (heads, server) = plain_psl(&p, &shards, &c, 5);
    assert!(s.server().params_bit_eq(&server), "PSL server");
    for (x, y) in s.clients().iter().zip(&heads) {
        assert!(x.head().params_bit_eq(y), "PSL client {}", x.id);
    }
    let one = blob_shards(1, 40, 10);
    let reference = centralized(&p, &one[0], 4, 8, 0.1, 14);
    for kind in [ProtocolKind::VanillaSl, ProtocolKind::Sfl, ProtocolKind::Epsl, ProtocolKind::AsyncPsl] {
        let (s, _) = run(&p, one.clone(), cfg(kind, 3, 14, 8), 4);
        assert!(s.full_model(0).unwrap().params_bit_eq(&reference), "{kind:?}");
    }
    let mut u = cfg(ProtocolKind::Ushaped, 2, 14, 8);
    u.cut2 = Some(5);
    let (s, _) = run(&p, one.clone(), u, 4);
    assert!(s.full_model(0).unwrap().params_bit_eq(&reference), "Ushaped");
    let (s, _) = run(&p, one.clone(), cfg(ProtocolKind::Fedavg, p.len(), 14, 8), 4);
    assert!(s.server().params_bit_eq(&reference), "Fedavg");

    // 8-bit activations: exactly a quarter of the smashed bytes.
    let blobs = ModelProfile::mlp(10, &[32, 32], 5).unwrap();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let train = Dataset::blobs(4_000, 5, 10, 3.0, seed, 0).unwrap();
        let test = Dataset::blobs(1_000, 5, 10, 3.0, seed, 1).unwrap();
        let shards = iid_shards(&train, 4, 32, seed);
        let mut base = cfg(ProtocolKind::Psl, 2, seed, 32);
        base.lr = 0.05;
        let mut q = base.clone();
        q.compression.activation_bits = 8;
        let (a, ta) = run(&blobs, shards.clone(), base, 10);
        let (b, tb) = run(&blobs, shards, q, 10);
        let smashed = |t: &[RoundOutput]| t.iter().map(|o| o.trace.smashed_bytes()).sum::<u64>();
        assert_eq!(smashed(&ta), 4 * smashed(&tb), "seed {seed}");
        let (acc_a, acc_b) = (a.evaluate(&test.inputs, &test.labels).unwrap(), b.evaluate(&test.inputs, &test.labels).unwrap());
        assert!((acc_a - acc_b).abs() <= COMPRESSED_POINTS, "seed {seed}: {acc_a} vs {acc_b}");
        lines.push(format!("seed {seed}: 32-bit {acc_a:.4}, 8-bit {acc_b:.4}"));
    }
    format!("identity holds; smashed bytes / 4; {}", lines.join("; "))
}
