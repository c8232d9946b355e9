use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::geometry::{estimate_normals, Point3, PointCloud};
use crate::numerics::{grad_check, GradCheckOptions, ParamId, Session, Tensor};
use crate::pdam::ReferenceInit;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Point3> =
        (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let normals = estimate_normals(&pts, 8).unwrap().normals;
    PointCloud::new(pts).unwrap().with_normals(normals).unwrap()
}

fn tiny(task: Task) -> NetworkConfig {
    NetworkConfig {
        input_points: 64,
        width: 8,
        strides: [1, 2, 2, 2],
        neighbor_k: 6,
        references: 4,
        head_hidden: [16, 8],
        ..NetworkConfig::variant(Variant::L, task, 3)
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn variant_structure() {
    let s = Model::build(NetworkConfig::variant(Variant::S, Task::Classification, 4), 0).unwrap();
    assert_eq!(s.stages.len(), 4);
    assert!(s.stages.iter().all(|st| st.blocks.is_empty()));
    assert_eq!(s.config.width, 32);

    let l = Model::build(NetworkConfig::variant(Variant::L, Task::Classification, 4), 0).unwrap();
    let counts: Vec<usize> = l.stages.iter().map(|st| st.blocks.len()).collect();
    assert_eq!(counts, vec![2, 4, 2, 2]);
    for (i, st) in l.stages.iter().enumerate() {
        for b in &st.blocks {
            assert!(b.plam.is_some());
            assert_eq!(b.pdam.is_some(), i >= 2);
        }
    }
    assert_eq!(l.config.stage_points(), [512, 128, 32, 8]);
    assert_eq!(l.config.stage_widths(), [32, 64, 128, 256]);

    let xxl = NetworkConfig::variant(Variant::Xxl, Task::Segmentation, 4);
    assert_eq!((xxl.width, xxl.blocks), (64, [4, 8, 4, 4]));
}

#[test]
fn reference_parameter_counts_are_stable() {
    let l = Model::build(NetworkConfig::variant(Variant::L, Task::Classification, 4), 0).unwrap();
    let again = Model::build(NetworkConfig::variant(Variant::L, Task::Classification, 4), 0).unwrap();
    assert_eq!(l.parameter_count(), again.parameter_count());
    let s = Model::build(NetworkConfig::variant(Variant::S, Task::Classification, 4), 0).unwrap();
    assert_eq!((s.parameter_count(), l.parameter_count()), (488_900, 2_092_516));
}

#[test]
fn ablations_change_structure() {
    let base = NetworkConfig::variant(Variant::L, Task::Classification, 4);
    let plam_only = Model::build(base.clone().with(Ablation::PlamOnly), 0).unwrap();
    assert!(plam_only.deformable_params().is_empty());
    let pdam_only = Model::build(base.clone().with(Ablation::PdamOnly), 0).unwrap();
    assert!(pdam_only.stages[2].blocks.iter().all(|b| b.plam.is_none() && b.pdam.is_some()));
    assert!(pdam_only.stages[0].blocks.iter().all(|b| b.plam.is_some()));
    let no_ene = Model::build(base.clone().with(Ablation::NoEne), 0).unwrap();
    assert!(no_ene.store.iter().all(|(n, _)| !n.contains(".normal.")));
    assert_eq!(base.clone().with(Ablation::RandomInit).reference_init, ReferenceInit::Random);
    assert_eq!(base.clone().with(Ablation::CenterInit).reference_init, ReferenceInit::Center);
    assert_eq!(base.clone().with(Ablation::Successive).wiring, Wiring::Successive);
    for a in Ablation::ALL {
        assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
    }
}

#[test]
fn manifest_round_trip_and_validation() {
    let cfg = tiny(Task::Segmentation).with(Ablation::RandomInit).with(Ablation::Successive);
    let text = cfg.to_manifest();
    assert!(text.lines().all(|l| l.starts_with("network.")));
    assert_eq!(NetworkConfig::from_manifest(&text).unwrap(), cfg);
    let mut bad = cfg.clone();
    bad.strides = [1, 3, 2, 2];
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut c = cfg.clone();
    assert!(c.set("network.variant", "pdnet-s").is_ok());
    assert_eq!(c.blocks, [0, 0, 0, 0]);
    assert!(c.set("bogus", "1").is_err());
    assert!(c.set("width", "x").is_err());
}

#[test]
fn parallel_combine_cases() {
    let store = crate::numerics::ParamStore::new();
    let mut s = Session::new(&store);
    let f = s.constant(Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
    let a = s.constant(Tensor::new(&[2, 2], vec![0.25, 0.5, -1.0, 2.0]).unwrap());
    let b = s.constant(Tensor::new(&[2, 2], vec![0.125, -0.75, 4.0, 1.0]).unwrap());
    let z = s.constant(Tensor::zeros(&[2, 2]));
    let out = parallel_combine(&mut s, f, a, b).unwrap();
    assert_eq!(s.value(out).data(), &[1.375, -2.25, 3.5, 6.0]);
    let local_only = s.graph.add(f, a).unwrap();
    let zb = parallel_combine(&mut s, f, a, z).unwrap();
    assert_eq!(s.value(zb), s.value(local_only));
    let zz = parallel_combine(&mut s, f, z, z).unwrap();
    assert_eq!(s.value(zz), s.value(f));
    let bad = s.constant(Tensor::zeros(&[3, 2]));
    assert!(parallel_combine(&mut s, f, a, bad).is_err());
}

#[test]
fn feature_propagation_limits() {
    let mut store = crate::numerics::ParamStore::new();
    let fp = FeaturePropagation::new(&mut store, "fp", 2, 1, 3, 3, 0).unwrap();
    let fine: Vec<Point3> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.5, 0.5, 0.5]];
    let mut s = Session::new(&store);
    let skip = s.constant(Tensor::new(&[4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
    // A single coarse point reaches every fine point unchanged.
    let single = s.constant(Tensor::new(&[1, 2], vec![0.7, -0.3]).unwrap());
    let out = fp.forward(&mut s, &[[9.0, 9.0, 9.0]], single, &fine, Some(skip)).unwrap();
    let want: Vec<f64> = (0..4)
        .flat_map(|i| {
            let x = s.constant(Tensor::new(&[1, 3], vec![0.7, -0.3, 0.1 * (i + 1) as f64]).unwrap());
            let y = fp.mlp.forward(&mut s, x).unwrap();
            s.value(y).data().to_vec()
        })
        .collect();
    for (a, b) in s.value(out).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // Identical levels interpolate to (nearly) the features themselves.
    let same = s.constant(Tensor::from_fn(&[4, 2], |i| i as f64 * 0.1));
    let out = fp.forward(&mut s, &fine, same, &fine, Some(skip)).unwrap();
    let cat = s.constant(Tensor::from_fn(&[4, 3], |i| if i % 3 == 2 { 0.1 * (i / 3 + 1) as f64 } else { (i / 3 * 2 + i % 3) as f64 * 0.1 }));
    let direct = fp.mlp.forward(&mut s, cat).unwrap();
    for (a, b) in s.value(out).data().iter().zip(s.value(direct).data()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(fp.forward(&mut s, &fine, same, &fine, None).is_err());
    assert!(fp.forward(&mut s, &fine, same, &fine[..2], Some(skip)).is_err());
}

#[test]
fn classification_shape_determinism_permutation() {
    let model = Model::build(tiny(Task::Classification), 3).unwrap();
    let c = cloud(64, 1);
    let a = model.predict(&c).unwrap();
    assert_eq!(a.shape(), &[1, 3]);
    assert_eq!(bits(&a), bits(&model.predict(&c.clone()).unwrap()));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut perm: Vec<usize> = (1..64).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm.insert(0, 0);
    let shuffled = c.select(&perm).unwrap();
    let b = model.predict(&shuffled).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn segmentation_shapes_and_stage_counts() {
    let model = Model::build(tiny(Task::Segmentation), 3).unwrap();
    let c = cloud(64, 2);
    let mut s = Session::new(&model.store);
    let out = model.forward(&mut s, &c).unwrap();
    assert_eq!(s.value(out.logits).shape(), &[64, 3]);
    let counts: Vec<usize> = out.stages.iter().map(|st| st.len()).collect();
    assert_eq!(counts, vec![64, 32, 16, 8]);
    let deformable_blocks: usize = model.stages[2..].iter().map(|st| st.blocks.len()).sum();
    assert_eq!(out.traces.len(), deformable_blocks);
    assert!(out.traces.iter().all(|t| t.interpolations == 4));

    let mut strided = tiny(Task::Segmentation);
    strided.strides = [2, 2, 2, 2];
    let m2 = Model::build(strided, 3).unwrap();
    assert_eq!(m2.predict(&c).unwrap().shape(), &[64, 3]);

    assert!(matches!(model.predict(&cloud(32, 1)), Err(Error::StagePointCount { expected: 64, actual: 32 })));
    let bare = PointCloud::new(c.positions().to_vec()).unwrap();
    assert!(matches!(model.predict(&bare), Err(Error::MissingNormals)));
}

#[test]
fn zero_deformable_branch_equals_local_only_network() {
    for task in [Task::Classification, Task::Segmentation] {
        for wiring in [Wiring::Parallel, Wiring::Successive] {
            let cfg = NetworkConfig { wiring, ..tiny(task) };
            let mut full = Model::build(cfg.clone(), 11).unwrap();
            full.zero_deformable_branches();
            let local = Model::build(cfg.with(Ablation::PlamOnly), 11).unwrap();
            let c = cloud(64, 5);
            assert_eq!(bits(&full.predict(&c).unwrap()), bits(&local.predict(&c).unwrap()));
        }
    }
}

#[test]
fn end_to_end_gradients() {
    for task in [Task::Classification, Task::Segmentation] {
        let mut model = Model::build(tiny(task), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for id in model.store.ids().collect::<Vec<_>>() {
            let mut t = model.store.get(id).clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
            model.store.set(id, t).unwrap();
        }
        let c = cloud(64, 23);
        let labels: Vec<usize> = match task {
            Task::Classification => vec![1],
            Task::Segmentation => (0..64).map(|i| i % 3).collect(),
        };
        let targets: Vec<ParamId> = model.store.ids().collect();
        let Model { store, .. } = &mut model;
        let mut store = store.clone();
        let m = Model::build(tiny(task), 21).unwrap();
        let report = grad_check(
            &mut store,
            &targets,
            |s| {
                let out = m.forward(s, &c)?;
                s.graph.cross_entropy(out.logits, &labels, 0.2)
            },
            &GradCheckOptions { max_coords: 8, seed: 24, ..Default::default() },
        )
        .unwrap();
        let smooth = report.coords() - report.kinks();
        assert!(smooth >= 256 && report.kinks() * 20 <= report.coords(), "{smooth} smooth, {} kinks", report.kinks());
        assert!(report.passed(1e-4), "{task}: worst {:?}", report.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)));
    }
}
