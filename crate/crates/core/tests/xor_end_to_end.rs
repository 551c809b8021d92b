use mtjnet_core::network::{Backend, Network, SimConfig};
use mtjnet_core::tlr::{replay_drive, TlrParams};
use mtjnet_core::trainer::{initialize_weights, train, TrainStatus};
use mtjnet_core::xor::*;
use proptest::prelude::*;

fn trained(seed: u64) -> Network {
    let sim = SimConfig::default();
    let mut net = build_xor_network(&XorArch::default());
    let cfg = xor_train_config(seed);
    initialize_weights(&mut net, &cfg).unwrap();
    let data = xor_dataset(&Encoding::default(), sim.horizon).unwrap();
    let res = train(&net, &data, &sim, &cfg).unwrap();
    assert_eq!(res.status, TrainStatus::Converged, "seed {seed}");
    res.network
}

#[test]
fn decode_examples() {
    assert_eq!(decode_output(Some(2.0)), Decoded::Bit(0));
    assert_eq!(decode_output(Some(2.52)), Decoded::Bit(1));
    assert_eq!(decode_output(Some(2.25)), Decoded::Failure);
    assert_eq!(decode_output(None), Decoded::Failure);
}

proptest! {
    #[test]
    fn decode_is_total_and_nearest(t in -10.0f64..10.0) {
        let d = decode_output(Some(t));
        let (d0, d1) = ((t - TIME_ZERO).abs(), (t - TIME_ONE).abs());
        let want = if d0 < d1 { Decoded::Bit(0) } else if d1 < d0 { Decoded::Bit(1) } else { Decoded::Failure };
        prop_assert_eq!(d, want);
        prop_assert_eq!(decode_output(Some(t)), d);
    }
}

#[test]
fn encoding_examples() {
    let enc = Encoding::default();
    let s = encode_inputs(XorRow { a: 1, b: 0 }, &enc, 5.0).unwrap();
    assert_eq!(s["A"], vec![0.0]);
    assert!(s["B"].is_empty());
    assert_eq!(s["bias"], vec![0.0]);
}

#[test]
fn initialization_lands_in_the_described_regime() {
    // i2 suprathreshold and i1 subthreshold on bias alone.
    let sim = SimConfig::default();
    let mut net = build_xor_network(&XorArch::default());
    initialize_weights(&mut net, &xor_train_config(DEFAULT_SEED)).unwrap();
    let tr = simulate_row(&net, XorRow { a: 0, b: 0 }, &Encoding::default(), &sim).unwrap();
    assert!(tr.spike_onsets["i1"].is_empty());
    assert_eq!(tr.spike_onsets["i2"].len(), 1);
}

#[test]
fn default_seed_solves_xor_with_all_mechanisms() {
    let net = trained(DEFAULT_SEED);
    let sim = SimConfig::default();
    let (report, traces) = run_xor_eval(&net, &Encoding::default(), &sim, 0.05).unwrap();
    let bits: Vec<Decoded> = report.rows.iter().map(|r| r.decoded).collect();
    assert_eq!(bits, vec![Decoded::Bit(0), Decoded::Bit(1), Decoded::Bit(1), Decoded::Bit(0)]);
    assert!(report.all_rows_pass(), "{:?}", report.rows);
    assert!((report.rows[3].onset.unwrap() - 2.0).abs() <= 0.1);
    assert!(report.checks.all(), "{:?}", report.checks);
    // Row (0,0): only i2 fires.
    assert!(report.rows[0].hidden_onsets[0].is_none() && report.rows[0].hidden_onsets[1].is_some());

    // Winner-take-all: o1's onset is what its recorded drive produces in
    // isolation, and it fires once per row.
    let Some(Backend::Tlr(p)) = net.neuron(OUTPUT).map(|n| n.backend) else { unreachable!() };
    for (row, tr) in report.rows.iter().zip(&traces) {
        assert_eq!(row.output_spikes, 1);
        let drive = tr.signal("o1.drive").unwrap();
        let replay = replay_drive(&p, &drive[..drive.len() - 1], sim.dt).unwrap();
        assert_eq!(replay.first().copied(), row.onset);
    }
}

#[test]
fn disabling_output_refraction_breaks_only_the_refraction_check() {
    let mut net = trained(DEFAULT_SEED);
    if let Some(Backend::Tlr(p)) = net.neuron_mut(OUTPUT).map(|n| &mut n.backend) {
        p.t_refractory = 0.0;
    }
    let (report, _) = run_xor_eval(&net, &Encoding::default(), &SimConfig::default(), 0.05).unwrap();
    assert!(!report.checks.refraction);
    assert!(report.rows[0].pass && report.rows[2].pass);
    assert!(report.rows[1].output_spikes > 1);
}

#[test]
fn raising_bias_weights_breaks_the_threshold_gate() {
    let mut net = trained(DEFAULT_SEED);
    for s in net.synapses.iter_mut().filter(|s| s.pre == SOURCE_BIAS && s.post != OUTPUT) {
        s.weight = s.weight.max(0.0) + 1.5;
    }
    let (report, _) = run_xor_eval(&net, &Encoding::default(), &SimConfig::default(), 0.05).unwrap();
    assert!(report.rows[0].hidden_onsets.iter().all(Option::is_some));
    assert!(!report.checks.threshold_gate);
}

#[test]
fn no_single_threshold_unit_computes_xor() {
    // Exhaustive sweep over a single linear threshold unit on (A, B, bias).
    let grid: Vec<f64> = (-12..=12).map(|k| k as f64 * 0.25).collect();
    let xor = [0u8, 1, 1, 0];
    for &wa in &grid {
        for &wb in &grid {
            for &wc in &grid {
                let out: Vec<u8> = XorRow::truth_table()
                    .iter()
                    .map(|r| u8::from(wa * f64::from(r.a) + wb * f64::from(r.b) + wc > 0.0))
                    .collect();
                assert_ne!(out, xor, "({wa}, {wb}, {wc})");
            }
        }
    }
}

#[test]
fn no_single_latency_neuron_computes_xor() {
    // One TLR neuron fed directly by A, B and bias: its first-spike time is
    // monotone in the summed drive, so XOR timing is unreachable.
    let sim = SimConfig { dt: 0.002, horizon: 5.0 };
    let enc = Encoding::default();
    let p = TlrParams::default();
    let grid: Vec<f64> = (-4..=12).map(|k| k as f64 * 0.25).collect();
    for &wa in &grid {
        for &wb in &grid {
            for &wc in &grid {
                let net = Network {
                    neurons: vec![mtjnet_core::network::Neuron { id: "o1".into(), backend: Backend::Tlr(p) }],
                    synapses: [("A", wa), ("B", wb), ("bias", wc)]
                        .iter()
                        .map(|(pre, w)| mtjnet_core::network::Synapse { pre: (*pre).into(), post: "o1".into(), weight: *w })
                        .collect(),
                    sources: ["A", "B", "bias"]
                        .iter()
                        .map(|id| mtjnet_core::network::Source { id: (*id).into(), schedule: vec![] })
                        .collect(),
                    source_spike: Default::default(),
                };
                let ok = XorRow::truth_table().iter().all(|&row| {
                    let mut n = net.clone();
                    n.set_schedules(&encode_inputs(row, &enc, sim.horizon).unwrap());
                    let t = mtjnet_core::network::neuron_first_spikes(&n, &sim, None).unwrap()["o1"];
                    decode_output(t) == Decoded::Bit(row.target_bit())
                });
                assert!(!ok, "({wa}, {wb}, {wc})");
            }
        }
    }
}

#[test]
fn zero_weights_fail_every_row() {
    let net = build_xor_network(&XorArch::default());
    let (report, _) = run_xor_eval(&net, &Encoding::default(), &SimConfig::default(), 0.05).unwrap();
    assert!(report.rows.iter().all(|r| r.decoded == Decoded::Failure && !r.pass));
    assert_eq!(report.failing_rows(), vec![1, 2, 3, 4]);
}
