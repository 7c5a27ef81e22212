use depthgaze_autograd::{Graph, Tensor};
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |v| Tensor::new(shape, v).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in tensor(&[3, 7])) {
        let mut g = Graph::new();
        let xi = g.input(x);
        let s = g.softmax(xi).unwrap();
        for row in g.value(s).data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn group_norm_standardizes_each_group(x in tensor(&[2, 4, 3, 3])) {
        let mut g = Graph::new();
        let xi = g.input(x);
        let gamma = g.input(Tensor::from_fn(&[4], |_| 1.0));
        let beta = g.input(Tensor::zeros(&[4]));
        let y = g.group_norm(xi, gamma, beta, 2, 1e-9).unwrap();
        for chunk in g.value(y).data().chunks(18) {
            let mean = chunk.iter().sum::<f64>() / 18.0;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var < 1.0 + 1e-6);
        }
    }

    #[test]
    fn grl_is_identity_forward(x in tensor(&[2, 5]), lambda in 0.0f64..4.0) {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let r = g.grl(xi, lambda);
        prop_assert_eq!(g.value(r).data(), x.data());
    }

    #[test]
    fn conv_is_linear_in_input(a in tensor(&[1, 2, 5, 5]), b in tensor(&[1, 2, 5, 5]), w in tensor(&[3, 2, 3, 3])) {
        let run = |x: Tensor<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x);
            let wi = g.input(w.clone());
            let y = g.conv2d(xi, wi, None, 1, 1).unwrap();
            g.value(y).clone()
        };
        let sum = Tensor::new(&[1, 2, 5, 5], a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();
        let lhs = run(sum);
        let (ya, yb) = (run(a), run(b));
        for ((l, p), q) in lhs.data().iter().zip(ya.data()).zip(yb.data()) {
            prop_assert!((l - (p + q)).abs() < 1e-10);
        }
    }
}
