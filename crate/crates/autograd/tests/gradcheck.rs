use depthgaze_autograd::{Graph, NodeId, Tensor};

/// Deterministic pseudo-random fill in [-1, 1).
fn fill(shape: &[usize], salt: u64) -> Tensor<f64> {
    let mut s = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Checks d(build)/d(leaf) for every leaf against central differences.
fn check(leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId) {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<_> = vals.iter().map(|v| g.param(v.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|v| g.param(v.clone())).collect();
    let out = build(&mut g, &ids);
    let grads = g.backward(out).unwrap();
    let h = 1e-6;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(ids[li]).expect("leaf gradient");
        for j in 0..leaf.len() {
            let mut plus = leaves.clone();
            plus[li].data_mut()[j] += h;
            let mut minus = leaves.clone();
            minus[li].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-6));
            assert!(
                err < 1e-5 || (a - numeric).abs() < 1e-8,
                "leaf {li} entry {j}: analytic {a} numeric {numeric}"
            );
        }
    }
}

/// Reduces any node to a scalar with non-uniform weights so every entry matters.
fn probe(g: &mut Graph<f64>, x: NodeId, salt: u64) -> NodeId {
    let w = fill(g.shape(x), salt);
    let wi = g.input(w);
    let m = g.mul(x, wi).unwrap();
    g.sum(m)
}

#[test]
fn conv2d_gradients() {
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        check(
            vec![fill(&[2, 2, 5, 5], 1), fill(&[3, 2, 3, 3], 2), fill(&[3], 3)],
            |g, p| {
                let y = g.conv2d(p[0], p[1], Some(p[2]), stride, pad).unwrap();
                probe(g, y, 4)
            },
        );
    }
}

#[test]
fn pointwise_conv_gradients() {
    check(vec![fill(&[2, 3, 2, 2], 5), fill(&[2, 3, 1, 1], 6), fill(&[2], 7)], |g, p| {
        let y = g.conv2d(p[0], p[1], Some(p[2]), 1, 0).unwrap();
        probe(g, y, 8)
    });
}

#[test]
fn depth_aware_conv_gradients() {
    let depth = fill(&[2, 1, 6, 6], 9).map(|v| v.abs());
    check(vec![fill(&[2, 2, 6, 6], 10), fill(&[2, 2, 3, 3], 11), fill(&[2], 12)], move |g, p| {
        let y = g.conv2d_depth_aware(p[0], p[1], Some(p[2]), 2, 1, &depth).unwrap();
        probe(g, y, 13)
    });
}

#[test]
fn conv_transpose_gradients() {
    for (k, stride, pad) in [(4, 2, 1), (3, 2, 0), (4, 4, 0), (3, 1, 1)] {
        check(
            vec![fill(&[2, 3, 3, 3], 14), fill(&[3, 2, k, k], 15), fill(&[2], 16)],
            |g, p| {
                let y = g.conv_transpose2d(p[0], p[1], Some(p[2]), stride, pad).unwrap();
                probe(g, y, 17)
            },
        );
    }
}

#[test]
fn linear_softmax_sigmoid_exp_gradients() {
    check(vec![fill(&[3, 4], 18), fill(&[5, 4], 19), fill(&[5], 20)], |g, p| {
        let y = g.linear(p[0], p[1], Some(p[2])).unwrap();
        let s = g.softmax(y).unwrap();
        let sg = g.sigmoid(y);
        let e = g.exp(y);
        let a = g.add(s, sg).unwrap();
        let b = g.mul(a, e).unwrap();
        probe(g, b, 21)
    });
}

#[test]
fn spatial_concat_pool_gradients() {
    check(vec![fill(&[2, 3, 2, 2], 22), fill(&[2, 4], 23), fill(&[2, 1, 2, 2], 24)], |g, p| {
        let m = g.mul_spatial(p[0], p[1]).unwrap();
        let c = g.concat_channels(&[p[2], m, p[0]]).unwrap();
        let r = g.relu(c);
        let pooled = g.global_avg_pool(r).unwrap();
        let reshaped = g.reshape(pooled, &[2, 7, 1, 1]).unwrap();
        probe(g, reshaped, 25)
    });
}

#[test]
fn group_norm_gradients() {
    for groups in [1, 2, 4] {
        check(vec![fill(&[2, 4, 3, 3], 40), fill(&[4], 41), fill(&[4], 42)], |g, p| {
            let y = g.group_norm(p[0], p[1], p[2], groups, 1e-5).unwrap();
            probe(g, y, 43)
        });
    }
}

#[test]
fn loss_gradients() {
    let target = fill(&[3, 2, 2], 26);
    let labels = [1.0, 0.0, 1.0];
    check(vec![fill(&[3, 2, 2], 27), fill(&[3], 28), fill(&[1], 29)], move |g, p| {
        let mse = g.mse_loss(p[0], &target, &[1.0, 0.0, 2.0]).unwrap();
        let bce = g.bce_with_logits(p[1], &labels, &[1.0, 1.0, 0.5]).unwrap();
        // uncertainty weighting shape: exp(-s) * L + s
        let neg = g.scale(p[2], -1.0);
        let w = g.exp(neg);
        let weighted = g.mul(w, mse).unwrap();
        let t = g.add(weighted, p[2]).unwrap();
        let d = g.sub(t, bce).unwrap();
        g.sum(d)
    });
}

#[test]
fn grl_reverses_and_scales() {
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let mut g = Graph::<f64>::new();
        let x = g.param(fill(&[4], 30));
        let w = fill(&[4], 31);
        let r = g.grl(x, lambda);
        assert_eq!(g.value(r), g.value(x));
        let wi = g.input(w.clone());
        let m = g.mul(r, wi).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        for (gv, wv) in grads.get(x).unwrap().data().iter().zip(w.data()) {
            assert_eq!(*gv, -lambda * wv);
        }
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(fill(&[1, 1, 4, 4], 32));
    let w = g.param(fill(&[1, 1, 3, 3], 33));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert!(grads.get(w).is_some());
}
