use approx::assert_abs_diff_eq;
use bru_core::cells::*;
use bru_core::tensor::InitScheme;
use bru_core::{Error, Rng, Tensor};
use proptest::prelude::*;

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::rand_init(rng, shape.to_vec(), InitScheme::Uniform { lo, hi }).unwrap()
}

fn vecf(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec()).unwrap()
}

fn assert_close(a: &Tensor, b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.data().iter().zip(b) {
        assert_abs_diff_eq!(*x, *y, epsilon = tol);
    }
}

fn set(t: &mut Tensor, value: f64) {
    *t = Tensor::full(t.shape().to_vec(), value).unwrap();
}

// Reference values below were evaluated at 50 significant digits from a
// straight-line transcription of each cell's equations.

#[test]
fn bru_matches_high_precision_transcription() {
    let mut rng = Rng::new(13);
    let p = BruParams::random(&mut rng, 2, 3).unwrap();
    let x = uniform(&mut rng, &[2], -1.0, 1.0);
    let h = uniform(&mut rng, &[3], 0.05, 0.95);
    let z = uniform(&mut rng, &[3], 0.05, 0.95);
    let out = bru_step(&p, &x, &h, &z).unwrap();
    assert_close(&out.h, &[0.42756343438294997, 0.33918502688264857, 0.6187526113035532], 1e-12);
    assert_close(&out.z, &[0.35034946098628045, 0.45542383588207225, 0.6035230892676617], 1e-12);
    assert_close(&out.r, &[0.6430148962706803, 0.3208294946171898, 0.4618171233502484], 1e-12);
    assert_close(&out.n, &[0.32683195894822953, 0.3499345832163742, 0.6060839551744225], 1e-12);
}

#[test]
fn lbru_matches_high_precision_transcription() {
    let mut rng = Rng::new(29);
    let p = SmootherParams::random(&mut rng, 2, 2).unwrap();
    let hs = uniform(&mut rng, &[3, 2], 0.05, 0.95);
    let xs = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    let out = lbru_smooth(&p, &hs, &xs).unwrap();
    let want = [
        0.6282747565145218,
        -0.013212234373705792,
        0.4601906801818253,
        0.12794508309128966,
        0.47701851879808316,
        0.4218810940757128,
    ];
    assert_close(&out, &want, 1e-12);
}

#[test]
fn gru_matches_high_precision_transcription() {
    let mut rng = Rng::new(5);
    let p = GruParams::random(&mut rng, 2, 3).unwrap();
    let x = uniform(&mut rng, &[2], -1.0, 1.0);
    let h = uniform(&mut rng, &[3], -0.9, 0.9);
    let out = gru_step(&p, &x, &h).unwrap();
    assert_close(&out, &[-0.24461851952219366, -0.14527789958550055, 0.053673681498577645], 1e-12);
}

#[test]
fn lstm_matches_high_precision_transcription() {
    let mut rng = Rng::new(11);
    let p = LstmParams::random(&mut rng, 2, 3).unwrap();
    let x = uniform(&mut rng, &[2], -1.0, 1.0);
    let h = uniform(&mut rng, &[3], -0.9, 0.9);
    let c = uniform(&mut rng, &[3], -2.0, 2.0);
    let (ho, co) = lstm_step(&p, &x, &h, &c).unwrap();
    assert_close(&ho, &[0.19825237545719257, 0.4547602118409852, -0.29820769282591175], 1e-12);
    assert_close(&co, &[0.41865258042558584, 1.0599634501330497, -0.8980303440619002], 1e-12);
}

#[test]
fn bru_zero_parameters_fixed_point() {
    let p = BruParams::zeros(2, 3).unwrap();
    let half = Tensor::full([3], 0.5).unwrap();
    let out = bru_step(&p, &vecf(&[0.3, -1.2]), &half, &half).unwrap();
    for t in [&out.h, &out.z, &out.r, &out.n] {
        assert_eq!(t.data(), half.data());
    }
}

#[test]
fn bru_saturated_relevance_carries_state() {
    let mut rng = Rng::new(3);
    let mut p = BruParams::random(&mut rng, 2, 3).unwrap();
    set(&mut p.b_r, 50.0);
    let h = vecf(&[0.1, 0.5, 0.8]);
    let out = bru_step(&p, &vecf(&[0.7, -0.4]), &h, &vecf(&[0.2, 0.9, 0.4])).unwrap();
    assert_close(&out.h, h.data(), 1e-12);
}

#[test]
fn bru_open_gate_is_basic_recurrent_layer() {
    let mut rng = Rng::new(8);
    let mut p = BruParams::random(&mut rng, 2, 3).unwrap();
    set(&mut p.W_ih, 0.0);
    set(&mut p.b_ih, 0.0);
    let h = vecf(&[0.2, 0.6, 0.9]);
    let out = bru_step(&p, &vecf(&[1.5, -0.5]), &h, &Tensor::ones([3]).unwrap()).unwrap();
    let pre = p.W_hh.matmul(&h.reshape([3, 1]).unwrap()).unwrap();
    for i in 0..3 {
        let want = bru_core::activations::sigmoid(pre.data()[i] + p.b_hh.data()[i]);
        assert_abs_diff_eq!(out.n.data()[i], want, epsilon = 1e-12);
    }
}

#[test]
fn bru_rejects_bad_shapes() {
    let p = BruParams::zeros(2, 3).unwrap();
    let h = Tensor::full([3], 0.5).unwrap();
    assert!(matches!(bru_step(&p, &vecf(&[1.0]), &h, &h), Err(Error::Dimension(_))));
    assert!(matches!(bru_step(&p, &vecf(&[1.0, 2.0]), &vecf(&[0.5]), &h), Err(Error::Dimension(_))));
    let mut bad = p.clone();
    bad.W_hh = Tensor::zeros([3, 2]).unwrap();
    assert!(matches!(bru_step(&bad, &vecf(&[1.0, 2.0]), &h, &h), Err(Error::Dimension(_))));
}

fn column_seq(v: &[f64]) -> Tensor {
    Tensor::new([v.len(), 1], v.to_vec()).unwrap()
}

#[test]
fn ubru_hand_recursion() {
    // hp[2] = 0.9; hp[1] = 0.5*0.9 + 0.5*0.6; hp[0] = 0.5*0.75 + 0.5*0.2
    let out = ubru_smooth(&column_seq(&[0.2, 0.6, 0.9]), &column_seq(&[0.5, 0.5, 0.5])).unwrap();
    assert_close(&out, &[0.475, 0.75, 0.9], 1e-15);
}

#[test]
fn ubru_consumes_gate_of_later_step() {
    // hp[k] is gated by z[k+1]; z[0] never enters.
    let h = column_seq(&[0.2, 0.6, 0.9]);
    let out = ubru_smooth(&h, &column_seq(&[0.123, 1.0, 0.0])).unwrap();
    assert_close(&out, &[0.6, 0.6, 0.9], 1e-15);
    let out = ubru_smooth(&h, &column_seq(&[0.7, 0.0, 1.0])).unwrap();
    assert_close(&out, &[0.2, 0.9, 0.9], 1e-15);
}

#[test]
fn ubru_limits() {
    let h = Tensor::from_rows(&[vec![0.1, 0.4], vec![0.7, 0.2], vec![0.3, 0.9]]).unwrap();
    let zeros = Tensor::zeros([3, 2]).unwrap();
    assert_eq!(ubru_smooth(&h, &zeros).unwrap(), h);
    let ones = Tensor::ones([3, 2]).unwrap();
    let out = ubru_smooth(&h, &ones).unwrap();
    for t in 0..3 {
        assert_eq!(out.at(t, 0), 0.3);
        assert_eq!(out.at(t, 1), 0.9);
    }
    assert!(matches!(ubru_smooth(&h, &Tensor::zeros([2, 2]).unwrap()), Err(Error::Dimension(_))));
}

#[test]
fn lbru_closed_gate_returns_forward_states() {
    let mut rng = Rng::new(4);
    let mut p = SmootherParams::random(&mut rng, 2, 3).unwrap();
    set(&mut p.b_is, -50.0);
    set(&mut p.b_hs, -50.0);
    let hs = uniform(&mut rng, &[4, 3], 0.05, 0.95);
    let xs = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    let out = lbru_smooth(&p, &hs, &xs).unwrap();
    assert!(out.max_abs_diff(&hs).unwrap() < 1e-12);
}

#[test]
fn lbru_identity_transition_broadcasts_final_state() {
    let mut rng = Rng::new(6);
    let mut p = SmootherParams::random(&mut rng, 2, 2).unwrap();
    p.W_hhb = Tensor::identity(2).unwrap();
    set(&mut p.b_hhb, 0.0);
    set(&mut p.b_is, 50.0);
    set(&mut p.b_hs, 50.0);
    let hs = uniform(&mut rng, &[3, 2], 0.05, 0.95);
    let xs = uniform(&mut rng, &[3, 2], -1.0, 1.0);
    let out = lbru_smooth(&p, &hs, &xs).unwrap();
    for t in 0..3 {
        for j in 0..2 {
            assert_abs_diff_eq!(out.at(t, j), hs.at(2, j), epsilon = 1e-12);
        }
    }
    assert!(lbru_smooth(&p, &hs, &Tensor::zeros([2, 2]).unwrap()).is_err());
}

#[test]
fn smoother_parameter_count() {
    for i in 1..=8 {
        for h in 1..=8 {
            let p = SmootherParams::zeros(i, h).unwrap();
            assert_eq!(p.scalar_count(), i * h + 2 * h * h + 3 * h);
        }
    }
}

#[test]
fn gru_zero_parameters() {
    let p = GruParams::zeros(2, 3).unwrap();
    let h = vecf(&[0.4, -0.2, 0.9]);
    let out = gru_step(&p, &vecf(&[1.0, 2.0]), &h).unwrap();
    assert_close(&out, &[0.2, -0.1, 0.45], 1e-15);
}

#[test]
fn lstm_zero_parameters_and_carousel() {
    let p = LstmParams::zeros(2, 3).unwrap();
    let c = vecf(&[1.0, -2.0, 0.5]);
    let (h, cn) = lstm_step(&p, &vecf(&[1.0, 0.0]), &vecf(&[0.1, 0.2, 0.3]), &c).unwrap();
    assert_close(&cn, &[0.5, -1.0, 0.25], 1e-15);
    assert_close(&h, &[0.5 * 0.5f64.tanh(), 0.5 * (-1.0f64).tanh(), 0.5 * 0.25f64.tanh()], 1e-15);

    let mut rng = Rng::new(12);
    let mut p = LstmParams::random(&mut rng, 2, 3).unwrap();
    set(&mut p.b_f, 50.0);
    set(&mut p.b_i, -50.0);
    let (_, cn) = lstm_step(&p, &vecf(&[0.3, 0.1]), &vecf(&[0.1, -0.2, 0.3]), &c).unwrap();
    assert_close(&cn, c.data(), 1e-12);
}

fn sigmoid_col(v: Tensor) -> Tensor {
    v.map(bru_core::activations::sigmoid).unwrap()
}

/// GRU step with explicit gate vectors in place of its own z and r.
fn pinned_gru(p: &GruParams, x: &Tensor, h: &Tensor, z: &Tensor, r: &Tensor) -> Vec<f64> {
    let col = |t: &Tensor| t.reshape([t.len(), 1]).unwrap();
    let (x, h) = (col(x), col(h));
    let rec = p.W_hn.matmul(&h).unwrap().add(&col(&p.b_hn)).unwrap();
    let pre = p.W_in.matmul(&x).unwrap().add(&col(&p.b_in)).unwrap();
    (0..h.len())
        .map(|i| {
            let n = (pre.data()[i] + r.data()[i] * rec.data()[i]).tanh();
            (1.0 - z.data()[i]) * n + z.data()[i] * h.data()[i]
        })
        .collect()
}

fn gru_from(sg: &SingleGateParams, rng: &mut Rng) -> GruParams {
    let filler = GruParams::random(rng, sg.W_iz.cols(), sg.W_iz.rows()).unwrap();
    GruParams {
        W_iz: sg.W_iz.clone(),
        W_hz: sg.W_hz.clone(),
        b_z: sg.b_z.clone(),
        W_in: sg.W_in.clone(),
        b_in: sg.b_in.clone(),
        W_hn: sg.W_hn.clone(),
        b_hn: sg.b_hn.clone(),
        ..filler
    }
}

fn gate(sg: &SingleGateParams, x: &Tensor, h: &Tensor) -> Tensor {
    let col = |t: &Tensor| t.reshape([t.len(), 1]).unwrap();
    let pre = sg.W_iz.matmul(&col(x)).unwrap().add(&sg.W_hz.matmul(&col(h)).unwrap()).unwrap();
    sigmoid_col(pre.add(&col(&sg.b_z)).unwrap())
}

#[test]
fn mgu_is_gru_with_tied_gates() {
    let mut rng = Rng::new(21);
    for _ in 0..20 {
        let sg = SingleGateParams::random(&mut rng, 3, 4).unwrap();
        let gru = gru_from(&sg, &mut rng);
        let x = uniform(&mut rng, &[3], -2.0, 2.0);
        let h = uniform(&mut rng, &[4], -0.9, 0.9);
        let g = gate(&sg, &x, &h);
        let reset = g.map(|v| 1.0 - v).unwrap();
        let want = pinned_gru(&gru, &x, &h, &g, &reset);
        let got = variant_step(VariantKind::Mgu, &sg, &x, &h).unwrap();
        assert_close(&got, &want, 1e-12);
    }
}

#[test]
fn ligru_is_gru_with_open_reset() {
    let mut rng = Rng::new(22);
    for _ in 0..20 {
        let sg = SingleGateParams::random(&mut rng, 3, 4).unwrap();
        let gru = gru_from(&sg, &mut rng);
        let x = uniform(&mut rng, &[3], -2.0, 2.0);
        let h = uniform(&mut rng, &[4], -0.9, 0.9);
        let g = gate(&sg, &x, &h);
        let want = pinned_gru(&gru, &x, &h, &g, &Tensor::ones([4]).unwrap());
        let got = variant_step(VariantKind::LiGru, &sg, &x, &h).unwrap();
        assert_close(&got, &want, 1e-12);
    }
}

#[test]
fn ligru_with_closed_update_is_candidate_recurrence() {
    let mut rng = Rng::new(23);
    let mut sg = SingleGateParams::random(&mut rng, 2, 3).unwrap();
    set(&mut sg.b_z, -50.0);
    let x = vecf(&[0.4, -1.1]);
    let h = vecf(&[0.3, -0.6, 0.1]);
    let got = variant_step(VariantKind::LiGru, &sg, &x, &h).unwrap();
    let col = |t: &Tensor| t.reshape([t.len(), 1]).unwrap();
    let pre = sg.W_in.matmul(&col(&x)).unwrap().add(&col(&sg.b_in)).unwrap();
    let rec = sg.W_hn.matmul(&col(&h)).unwrap().add(&col(&sg.b_hn)).unwrap();
    let want: Vec<f64> = (0..3).map(|i| (pre.data()[i] + rec.data()[i]).tanh()).collect();
    assert_close(&got, &want, 1e-12);
}

#[test]
fn bundles_serialize_under_symbol_names() {
    let p = BruParams::zeros(1, 1).unwrap();
    let json = serde_json::to_value(&p).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    for name in ["W_iz", "W_hz", "b_z", "W_ir", "W_hr", "b_r", "W_ih", "b_ih", "W_hh", "b_hh", "p_logits"] {
        assert!(keys.contains(&name), "{name} missing");
    }
    let frozen = serde_json::to_value(p.clone().frozen()).unwrap();
    assert!(frozen.get("p_logits").is_none());
    let back: BruParams = serde_json::from_value(json).unwrap();
    assert_eq!(back, p);
    let s = serde_json::to_value(SmootherParams::zeros(1, 1).unwrap()).unwrap();
    for name in ["W_is", "W_hs", "b_is", "b_hs", "W_hhb", "b_hhb"] {
        assert!(s.get(name).is_some());
    }
}

fn bru_instance(seed: u64) -> (BruParams, Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let p = BruParams::random(&mut rng, 2, 3).unwrap();
    let x = uniform(&mut rng, &[2], -3.0, 3.0);
    let h = uniform(&mut rng, &[3], 0.01, 0.99);
    let z = uniform(&mut rng, &[3], 0.0, 1.0);
    (p, x, h, z)
}

proptest! {
    #[test]
    fn bru_output_is_convex_and_in_range(seed in 0u64..10_000) {
        let (p, x, h, z) = bru_instance(seed);
        let out = bru_step(&p, &x, &h, &z).unwrap();
        for i in 0..3 {
            let (n, hp, hn) = (out.n.data()[i], h.data()[i], out.h.data()[i]);
            prop_assert!(hn >= n.min(hp) - 1e-15 && hn <= n.max(hp) + 1e-15);
            for v in [hn, out.z.data()[i], out.r.data()[i], n] {
                prop_assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn bru_step_is_continuous_in_each_parameter(seed in 0u64..500, which in 0usize..10, entry in 0usize..3) {
        let (p, x, h, z) = bru_instance(seed);
        let base = bru_step(&p, &x, &h, &z).unwrap().h;
        let mut q = p.clone();
        let mut visited = 0;
        q.for_each_mut(|name, t| {
            if name != "p_logits" {
                if visited == which {
                    let mut d = t.data().to_vec();
                    let k = entry % d.len();
                    d[k] += 1e-6;
                    *t = Tensor::new(t.shape().to_vec(), d).unwrap();
                }
                visited += 1;
            }
        });
        let moved = bru_step(&q, &x, &h, &z).unwrap().h;
        // sigmoid slopes are at most 1/4 and inputs are bounded by 3
        prop_assert!(moved.max_abs_diff(&base).unwrap() < 1e-5);
    }

    #[test]
    fn gru_state_stays_in_open_interval(seed in 0u64..5_000) {
        let mut rng = Rng::new(seed);
        let p = GruParams::random(&mut rng, 3, 4).unwrap();
        let mut h = Tensor::zeros([4]).unwrap();
        for _ in 0..5 {
            h = gru_step(&p, &uniform(&mut rng, &[3], -5.0, 5.0), &h).unwrap();
            prop_assert!(h.data().iter().all(|v| v.abs() < 1.0));
        }
    }
}
