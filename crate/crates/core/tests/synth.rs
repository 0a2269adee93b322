use p2pb::assignment::{assignment_cost, CostKind};
use p2pb::cloud::{cross, dot, sub};
use p2pb::metrics::point_to_mesh;
use p2pb::synth::*;
use p2pb::TriangleMesh;

#[test]
fn cube_sides_receive_equal_shares() {
    let n = 60_000;
    let c = sample_mesh_surface(&cube(2.0).unwrap(), n, 17).unwrap();
    let mut counts = [0usize; 6];
    for p in c.coords() {
        let axis = (0..3).max_by(|&a, &b| p[a].abs().total_cmp(&p[b].abs())).unwrap();
        counts[2 * axis + usize::from(p[axis] > 0.0)] += 1;
    }
    let q = 1.0 / 6.0;
    let se = (q * (1.0 - q) / n as f64).sqrt();
    for k in counts {
        let frac = k as f64 / n as f64;
        assert!((frac - q).abs() <= 3.0 * se, "fraction {frac}");
    }
}

#[test]
fn samples_stay_inside_a_single_triangle() {
    let t = [[0.3, -1.0, 2.0], [2.0, 0.5, 1.0], [-0.5, 1.5, -1.0]];
    let mesh = TriangleMesh::new(t.to_vec(), vec![[0, 1, 2]]).unwrap();
    let c = sample_mesh_surface(&mesh, 5_000, 3).unwrap();
    let normal = cross(sub(t[1], t[0]), sub(t[2], t[0]));
    for p in c.coords() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            assert!(dot(cross(sub(b, a), sub(*p, a)), normal) >= -1e-12);
        }
        assert!(dot(sub(*p, t[0]), normal).abs() <= 1e-12 * dot(normal, normal));
    }
}

#[test]
fn samples_lie_on_the_source_mesh() {
    for (kind, res) in [
        (Primitive::Sphere { radius: 1.3 }, 12),
        (Primitive::Torus { major: 1.0, minor: 0.25 }, 10),
        (Primitive::Box { size: 0.7 }, 3),
    ] {
        let mesh = make_primitive(kind, res).unwrap();
        let c = sample_mesh_surface(&mesh, 2_000, 8).unwrap();
        let (_, p2f, _) = point_to_mesh(&c, &mesh).unwrap();
        assert!(p2f < 1e-9, "{} {p2f}", kind.name());
    }
}

#[test]
fn noise_has_the_requested_std_and_zero_mean() {
    let clean = sample_mesh_surface(&cube(1.0).unwrap(), 100_000, 1).unwrap();
    let spec = NoiseSpec { percent: 0.02, seed: 99 };
    let std = spec.std_for(&clean).unwrap();
    assert!((std - 0.02 * clean.bbox_diagonal()).abs() < 1e-15);
    let noisy = add_gaussian_noise(&clean, spec).unwrap();
    let d: Vec<f64> = noisy
        .coords()
        .iter()
        .zip(clean.coords())
        .flat_map(|(a, b)| (0..3).map(move |k| a[k] - b[k]))
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var.sqrt() / std - 1.0).abs() < 0.02);
    assert!(mean.abs() < 3.0 * std / n.sqrt());
    assert!(NoiseSpec { percent: -0.1, seed: 0 }.std_for(&clean).is_err());
}

#[test]
fn zero_noise_gives_a_zero_cost_pair() {
    let spec = PairSpec { id: "a".into(), mesh: cube(1.0).unwrap(), noise: NoiseSpec { percent: 0.0, seed: 0 } };
    let pairs = build_pairs(&[spec], 300, 5, AssignmentOptions::default()).unwrap();
    let s = &pairs[0].sample;
    assert_eq!(s.assignment.cost, 0.0);
    assert_eq!(s.clean_aligned.coords(), s.noisy.coords());
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    permutations(n - 1)
        .into_iter()
        .flat_map(|p| {
            (0..=p.len()).map(move |pos| {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                q
            })
        })
        .collect()
}

#[test]
fn small_pairs_match_brute_force() {
    for n in 2..=7 {
        let spec = PairSpec {
            id: format!("p{n}"),
            mesh: make_primitive(Primitive::Sphere { radius: 1.0 }, 4).unwrap(),
            noise: NoiseSpec { percent: 0.3, seed: n as u64 },
        };
        let built = &build_pairs(&[spec], n, 2, AssignmentOptions::default()).unwrap()[0];
        let noisy = built.sample.noisy.coords();
        let best = permutations(n)
            .iter()
            .map(|p| assignment_cost(noisy, built.clean.coords(), p, CostKind::SquaredEuclidean))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(built.sample.assignment.cost, best);
    }
}

fn dataset() -> Vec<BuiltPair> {
    let specs: Vec<PairSpec> = (0..3)
        .map(|i| PairSpec {
            id: format!("pair_{i}"),
            mesh: make_primitive(Primitive::Torus { major: 1.0, minor: 0.3 }, 8).unwrap(),
            noise: NoiseSpec { percent: 0.02, seed: 10 + i },
        })
        .collect();
    build_pairs(&specs, 400, 77, AssignmentOptions { exact_cap: 200, chunk: 128, ..Default::default() }).unwrap()
}

#[test]
fn dataset_files_are_reproducible_and_reload() {
    let pairs = dataset();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let src = serde_json::json!({"shape": "torus"});
    save_dataset(a.path(), &pairs, src.clone()).unwrap();
    save_dataset(b.path(), &dataset(), src).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 1 + 3 * 3);
    for name in names {
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
    }
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (l, p) in loaded.iter().zip(&pairs) {
        assert_eq!(l.noisy, p.sample.noisy);
        assert_eq!(l.clean_aligned, p.sample.clean_aligned);
        assert_eq!(l.assignment, p.sample.assignment);
    }
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &dataset(), serde_json::Value::Null).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut m: Manifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m.pairs[1].cost *= 1.0 + 1e-12;
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn invalid_primitives() {
    assert!(make_primitive(Primitive::Sphere { radius: 1.0 }, 2).is_err());
    assert!(cube(0.0).is_err() || cube(0.0).unwrap().faces().is_empty());
    let single = PairSpec { id: "one".into(), mesh: cube(1.0).unwrap(), noise: NoiseSpec { percent: 0.1, seed: 0 } };
    assert!(matches!(build_pairs(&[single], 1, 0, AssignmentOptions::default()), Err(p2pb::Error::ZeroScale)));
}
