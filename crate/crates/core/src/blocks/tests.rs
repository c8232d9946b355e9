use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::geometry::{canonicalize_sign, knn, Point3};
use crate::numerics::{grad_check, Activation, GradCheckOptions, Mlp, ParamId, ParamStore, Session, Tensor};

fn cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

fn unit_normals(n: usize, seed: u64) -> Vec<Point3> {
    cloud(n, seed)
        .into_iter()
        .map(|v| {
            let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            canonicalize_sign([v[0] / l, v[1] / l, v[2] / l])
        })
        .collect()
}

fn features(n: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[n, c], |_| rng.random_range(-1.0..1.0))
}

/// Perturbs every parameter so biases are nonzero and ReLUs are generic.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let mut t = store.get(id).clone();
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        store.set(id, t).unwrap();
    }
}

/// Row-wise scalar evaluation of an MLP straight from the stored weights.
fn mlp_oracle(store: &ParamStore, mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (layer, act) in mlp.layers() {
        let w = store.get(layer.weight).data();
        let b = store.get(layer.bias).data();
        let mut out = vec![0.0; layer.out_dim];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = b[j];
            for (i, &hi) in h.iter().enumerate() {
                acc += hi * w[i * layer.out_dim + j];
            }
            *o = match act {
                Activation::Relu => acc.max(0.0),
                Activation::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
                Activation::None => acc,
            };
        }
        h = out;
    }
    h
}

fn rel(a: &Point3, c: &Point3) -> Vec<f64> {
    vec![a[0] - c[0], a[1] - c[1], a[2] - c[2]]
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn max_into(acc: &mut Option<Vec<f64>>, v: Vec<f64>) {
    match acc {
        None => *acc = Some(v),
        Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x = x.max(y)),
    }
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * (1.0 + w.abs()), "entry {i}: {g} vs {w}");
    }
}

fn knn_groups(centers: &[Point3], support: &[Point3], k: usize) -> LocalGroups {
    LocalGroups::new(centers, support, &knn(centers, support, k).unwrap()).unwrap()
}

/// Reverses every group's member order.
fn reversed(g: &LocalGroups) -> LocalGroups {
    let mut index = Vec::new();
    let mut r = Vec::new();
    for gi in 0..g.groups {
        for m in (0..g.members).rev() {
            index.push(g.index[gi * g.members + m]);
            r.extend_from_slice(&g.relative.data()[(gi * g.members + m) * 3..(gi * g.members + m + 1) * 3]);
        }
    }
    LocalGroups { index, groups: g.groups, members: g.members, relative: Tensor::new(&[g.groups, g.members, 3], r).unwrap() }
}

fn run<F>(store: &ParamStore, f: F) -> Tensor
where
    F: FnOnce(&mut Session) -> crate::Result<crate::numerics::Var>,
{
    let mut s = Session::new(store);
    let v = f(&mut s).unwrap();
    s.value(v).clone()
}

fn grad_ok(store: &mut ParamStore, targets: &[ParamId], f: impl FnMut(&mut Session) -> crate::Result<crate::numerics::Var>) {
    let report = grad_check(store, targets, f, &GradCheckOptions { seed: 3, ..Default::default() }).unwrap();
    assert!(report.passed(1e-4), "{report:#?}");
    assert!(report.tensors.iter().any(|t| t.max_abs_grad > 0.0));
}

/// Scalar loss with fixed random weights over every output entry.
fn probe(s: &mut Session, v: crate::numerics::Var, seed: u64) -> crate::Result<crate::numerics::Var> {
    let shape = s.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    s.graph.dot_const(v, c)
}

#[test]
fn position_encoding_matches_oracle() {
    let mut store = ParamStore::new();
    let pe = PositionEncoding::new(&mut store, "pe", 6, 1).unwrap();
    jitter(&mut store, 2);
    let x = features(10, 3, 4).reshape(&[2, 5, 3]).unwrap();
    let out = run(&store, |s| {
        let v = s.constant(x.clone());
        pe.forward(s, v)
    });
    assert_eq!(out.shape(), &[2, 5, 6]);
    for r in 0..10 {
        let want = mlp_oracle(&store, &pe.mlp, &x.data()[r * 3..r * 3 + 3]);
        assert_close(&out.data()[r * 6..r * 6 + 6], &want, 1e-10);
    }
}

#[test]
fn position_encoding_zero_rel_is_constant() {
    let mut store = ParamStore::new();
    let pe = PositionEncoding::new(&mut store, "pe", 4, 1).unwrap();
    let out = run(&store, |s| {
        let v = s.constant(Tensor::zeros(&[3, 3]));
        pe.forward(s, v)
    });
    assert_eq!(out.row(0), out.row(1));
    assert_eq!(out.row(1), out.row(2));
}

#[test]
fn normal_embedding_checks_and_matches_oracle() {
    let mut store = ParamStore::new();
    let ne = NormalEmbedding::new(&mut store, "ne", 5, 1).unwrap();
    jitter(&mut store, 9);
    let normals = unit_normals(7, 3);
    let out = run(&store, |s| ne.embed(s, &normals));
    for (i, n) in normals.iter().enumerate() {
        assert_close(out.row(i), &mlp_oracle(&store, &ne.mlp, n), 1e-10);
    }
    let mut s = Session::new(&store);
    assert!(matches!(ne.embed(&mut s, &[[0.0, 0.0, 2.0]]), Err(Error::NonUnitNormal { .. })));

    let mut zero = ParamStore::new();
    let ne = NormalEmbedding::new(&mut zero, "ne", 5, 1).unwrap();
    zero.zero_prefix("ne");
    let out = run(&zero, |s| ne.embed(s, &normals));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn set_abstraction_matches_oracle_and_is_symmetric() {
    let pts = cloud(20, 1);
    let centers: Vec<Point3> = pts[..6].to_vec();
    let groups = knn_groups(&centers, &pts, 5);
    let f = features(20, 4, 2);
    let mut store = ParamStore::new();
    let sa = SetAbstraction::new(&mut store, "sa", 4, 7, 3).unwrap();
    jitter(&mut store, 4);
    let fwd = |g: &LocalGroups| {
        run(&store, |s| {
            let v = s.constant(f.clone());
            sa.forward(s, v, g)
        })
    };
    let out = fwd(&groups);
    assert_eq!(out.shape(), &[6, 7]);
    for (gi, c) in centers.iter().enumerate() {
        let mut pooled = None;
        for &j in &groups.index[gi * 5..(gi + 1) * 5] {
            let mut x = f.row(j).to_vec();
            x.extend(rel(&pts[j], c));
            max_into(&mut pooled, mlp_oracle(&store, &sa.encode, &x));
        }
        assert_close(out.row(gi), &pooled.unwrap(), 1e-10);
    }
    assert_eq!(fwd(&reversed(&groups)), out);

    let single = knn_groups(&centers, &pts, 1);
    let out1 = fwd(&single);
    for (gi, c) in centers.iter().enumerate() {
        let j = single.index[gi];
        let mut x = f.row(j).to_vec();
        x.extend(rel(&pts[j], c));
        assert_close(out1.row(gi), &mlp_oracle(&store, &sa.encode, &x), 1e-12);
    }
}

#[test]
fn inv_res_mlp_oracle_identity_symmetry() {
    let pts = cloud(16, 5);
    let groups = knn_groups(&pts, &pts, 4);
    let f = features(16, 6, 6);
    let mut store = ParamStore::new();
    let b = InvResMlp::new(&mut store, "irm", 6, 7).unwrap();
    jitter(&mut store, 8);
    let fwd = |store: &ParamStore, g: &LocalGroups| {
        run(store, |s| {
            let v = s.constant(f.clone());
            b.forward(s, v, g)
        })
    };
    let out = fwd(&store, &groups);
    for (i, c) in pts.iter().enumerate() {
        let mut pooled = None;
        for &j in &groups.index[i * 4..(i + 1) * 4] {
            let mut x = f.row(j).to_vec();
            x.extend(rel(&pts[j], c));
            max_into(&mut pooled, mlp_oracle(&store, &b.reduce, &x));
        }
        let mut want = mlp_oracle(&store, &b.update, &pooled.unwrap());
        add(&mut want, f.row(i));
        assert_close(out.row(i), &want, 1e-10);
    }
    assert_eq!(fwd(&store, &reversed(&groups)), out);
    store.zero_prefix("irm.update.1");
    assert_eq!(fwd(&store, &groups), f);
}

#[test]
fn inv_res_mlp_width_mismatch() {
    let pts = cloud(8, 5);
    let groups = knn_groups(&pts, &pts, 4);
    let mut store = ParamStore::new();
    let b = InvResMlp::new(&mut store, "irm", 6, 7).unwrap();
    let mut s = Session::new(&store);
    let v = s.constant(features(8, 5, 1));
    assert!(b.forward(&mut s, v, &groups).is_err());
}

fn pointmeta_oracle(store: &ParamStore, b: &PointMetaBlock, pts: &[Point3], f: &Tensor, g: &LocalGroups, normal: Option<(&NormalEmbedding, &[Point3])>) -> Vec<Vec<f64>> {
    let k = g.members;
    pts.iter()
        .enumerate()
        .map(|(i, c)| {
            let mut pooled = None;
            for &j in &g.index[i * k..(i + 1) * k] {
                let mut term = mlp_oracle(store, &b.pre, f.row(j));
                add(&mut term, &mlp_oracle(store, &b.position.mlp, &rel(&pts[j], c)));
                if let Some((gamma, normals)) = normal {
                    add(&mut term, &mlp_oracle(store, &gamma.mlp, &normals[j]));
                }
                max_into(&mut pooled, term);
            }
            let mut out = mlp_oracle(store, &b.update, &pooled.unwrap());
            add(&mut out, f.row(i));
            out
        })
        .collect()
}

#[test]
fn pointmeta_oracle_and_identities() {
    let pts = cloud(18, 11);
    let groups = knn_groups(&pts, &pts, 5);
    let f = features(18, 5, 12);
    let mut store = ParamStore::new();
    let b = PointMetaBlock::new(&mut store, "pm", 5, 13).unwrap();
    jitter(&mut store, 14);
    let fwd = |store: &ParamStore, g: &LocalGroups| {
        run(store, |s| {
            let v = s.constant(f.clone());
            b.forward(s, v, g)
        })
    };
    let out = fwd(&store, &groups);
    for (i, want) in pointmeta_oracle(&store, &b, &pts, &f, &groups, None).iter().enumerate() {
        assert_close(out.row(i), want, 1e-10);
    }
    assert_eq!(fwd(&store, &reversed(&groups)), out);
    store.zero_prefix("pm.position");
    store.zero_prefix("pm.update");
    assert_eq!(fwd(&store, &groups), f);
}

#[test]
fn pointmeta_identical_neighbors_pool_to_that_feature() {
    let pts = cloud(6, 1);
    let groups = knn_groups(&pts, &pts, 6);
    let f = Tensor::from_fn(&[6, 3], |i| [0.3, -0.2, 0.9][i % 3]);
    let mut store = ParamStore::new();
    let b = PointMetaBlock::new(&mut store, "pm", 3, 2).unwrap();
    store.zero_prefix("pm.position");
    let pooled = run(&store, |s| {
        let v = s.constant(f.clone());
        let a = b.aggregand(s, v, &groups)?;
        s.graph.max_pool(a)
    });
    let want = mlp_oracle(&store, &b.pre, f.row(0));
    for i in 0..6 {
        assert_eq!(pooled.row(i), &want[..]);
    }
}

#[test]
fn plam_oracle_and_reduction_to_pointmeta() {
    let pts = cloud(18, 21);
    let normals = unit_normals(18, 22);
    let groups = knn_groups(&pts, &pts, 5);
    let f = features(18, 5, 23);
    let mut store = ParamStore::new();
    let plam = Plam::new(&mut store, "blk", 5, true, 24).unwrap();
    jitter(&mut store, 25);
    let fwd = |store: &ParamStore, g: &LocalGroups| {
        run(store, |s| {
            let v = s.constant(f.clone());
            plam.forward(s, v, g, Some(&normals))
        })
    };
    let out = fwd(&store, &groups);
    let gamma = plam.normal.as_ref().unwrap();
    let want = pointmeta_oracle(&store, &plam.meta, &pts, &f, &groups, Some((gamma, &normals)));
    for (i, w) in want.iter().enumerate() {
        assert_close(out.row(i), w, 1e-10);
    }
    assert_eq!(fwd(&store, &reversed(&groups)), out);

    store.zero_prefix("blk.normal");
    let plam_zero = fwd(&store, &groups);
    let meta = run(&store, |s| {
        let v = s.constant(f.clone());
        plam.meta.forward(s, v, &groups)
    });
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&plam_zero), bits(&meta));

    let mut s = Session::new(&store);
    let v = s.constant(f.clone());
    assert!(matches!(plam.forward(&mut s, v, &groups, None), Err(Error::MissingNormals)));
    assert_eq!(Error::MissingNormals.to_string(), "PLAM requires normals");
}

#[test]
fn relative_blocks_are_translation_invariant() {
    let pts = cloud(16, 31);
    let shifted: Vec<Point3> = pts.iter().map(|p| [p[0] + 0.25, p[1] - 0.5, p[2] + 0.125]).collect();
    let normals = unit_normals(16, 32);
    let f = features(16, 4, 33);
    let mut store = ParamStore::new();
    let irm = InvResMlp::new(&mut store, "irm", 4, 1).unwrap();
    let pm = PointMetaBlock::new(&mut store, "pm", 4, 1).unwrap();
    let plam = Plam::new(&mut store, "plam", 4, true, 1).unwrap();
    jitter(&mut store, 34);
    let eval = |p: &[Point3]| {
        let g = knn_groups(p, p, 5);
        let a = run(&store, |s| {
            let v = s.constant(f.clone());
            irm.forward(s, v, &g)
        });
        let b = run(&store, |s| {
            let v = s.constant(f.clone());
            pm.forward(s, v, &g)
        });
        let c = run(&store, |s| {
            let v = s.constant(f.clone());
            plam.forward(s, v, &g, Some(&normals))
        });
        [a, b, c]
    };
    let (x, y) = (eval(&pts), eval(&shifted));
    for (a, b) in x.iter().zip(&y) {
        assert_close(a.data(), b.data(), 1e-12);
    }
}

#[test]
fn pdsa_oracle_stride_and_sa_reduction() {
    let pts = cloud(24, 41);
    let normals = unit_normals(24, 42);
    let f = features(24, 3, 43);
    let mut store = ParamStore::new();
    let pdsa = Pdsa::new(&mut store, "down", 3, 6, 4, Grouping::Knn { k: 5 }, true, 44).unwrap();
    jitter(&mut store, 45);
    let fwd = |store: &ParamStore, p: &Pdsa| {
        let mut s = Session::new(store);
        let v = s.constant(f.clone());
        let out = p.forward(&mut s, &pts, Some(&normals), v).unwrap();
        let t = s.value(out.features).clone();
        (out, t)
    };
    let (stage, out) = fwd(&store, &pdsa);
    assert_eq!(stage.len(), 6);
    assert_eq!(stage.centers, crate::geometry::farthest_point_sample(&pts, 6, 0).unwrap());
    assert_eq!(stage.normals.as_ref().unwrap()[2], normals[stage.centers[2]]);
    let gamma = pdsa.normal.as_ref().unwrap();
    for (gi, &ci) in stage.centers.iter().enumerate() {
        let c = pts[ci];
        let nb = knn(&[c], &pts, 5).unwrap();
        let mut pooled = None;
        for &j in nb.neighbors(0) {
            let mut x = f.row(j).to_vec();
            x.extend(rel(&pts[j], &c));
            let mut term = mlp_oracle(&store, &pdsa.sa.encode, &x);
            add(&mut term, &mlp_oracle(&store, &pdsa.position.mlp, &rel(&pts[j], &c)));
            add(&mut term, &mlp_oracle(&store, &gamma.mlp, &normals[j]));
            max_into(&mut pooled, term);
        }
        assert_close(out.row(gi), &pooled.unwrap(), 1e-10);
    }

    store.zero_prefix("down.position");
    store.zero_prefix("down.normal");
    let (_, zeroed) = fwd(&store, &pdsa);
    let centers: Vec<Point3> = stage.positions.clone();
    let plain = run(&store, |s| {
        let v = s.constant(f.clone());
        pdsa.sa.forward(s, v, &knn_groups(&centers, &pts, 5))
    });
    assert_eq!(zeroed, plain);

    let keep = Pdsa::new(&mut ParamStore::new(), "d", 3, 6, 1, Grouping::Knn { k: 5 }, false, 1).unwrap();
    assert_eq!(keep.centers(&pts).unwrap(), (0..24).collect::<Vec<_>>());
    let far = Pdsa::new(&mut ParamStore::new(), "d", 3, 6, 25, Grouping::Knn { k: 5 }, false, 1).unwrap();
    assert!(far.centers(&pts).is_err());
}

#[test]
fn ball_grouping_pads_to_fixed_size() {
    let pts = cloud(30, 51);
    let g = Grouping::Ball { radius: 0.4, max_k: 6 }.group(&pts[..5], &pts).unwrap();
    assert_eq!((g.groups, g.members, g.index.len()), (5, 6, 30));
}

fn with_input(store: &mut ParamStore, f: &Tensor) -> ParamId {
    store.add("input", f.clone()).unwrap()
}

#[test]
fn gradients_of_every_local_block() {
    let pts = cloud(12, 61);
    let normals = unit_normals(12, 62);
    let groups = knn_groups(&pts, &pts, 4);
    let sub_groups = knn_groups(&pts[..4], &pts, 4);

    let mut store = ParamStore::new();
    let input = with_input(&mut store, &features(12, 4, 63));
    let sa = SetAbstraction::new(&mut store, "sa", 4, 5, 1).unwrap();
    let irm = InvResMlp::new(&mut store, "irm", 4, 1).unwrap();
    let pm = PointMetaBlock::new(&mut store, "pm", 4, 1).unwrap();
    let plam = Plam::new(&mut store, "plam", 4, true, 1).unwrap();
    let pdsa = Pdsa::new(&mut store, "pdsa", 4, 5, 3, Grouping::Knn { k: 4 }, true, 1).unwrap();
    jitter(&mut store, 64);

    let t = [vec![input], sa.param_ids()].concat();
    grad_ok(&mut store, &t, |s| {
        let x = s.param(input);
        let y = sa.forward(s, x, &sub_groups)?;
        probe(s, y, 1)
    });
    let t = [vec![input], irm.param_ids()].concat();
    grad_ok(&mut store, &t, |s| {
        let x = s.param(input);
        let y = irm.forward(s, x, &groups)?;
        probe(s, y, 2)
    });
    let t = [vec![input], pm.param_ids()].concat();
    grad_ok(&mut store, &t, |s| {
        let x = s.param(input);
        let y = pm.forward(s, x, &groups)?;
        probe(s, y, 3)
    });
    let t = [vec![input], plam.param_ids()].concat();
    grad_ok(&mut store, &t, |s| {
        let x = s.param(input);
        let y = plam.forward(s, x, &groups, Some(&normals))?;
        probe(s, y, 4)
    });
    let t = [vec![input], pdsa.param_ids()].concat();
    grad_ok(&mut store, &t, |s| {
        let x = s.param(input);
        let y = pdsa.forward(s, &pts, Some(&normals), x)?;
        probe(s, y.features, 5)
    });
}
