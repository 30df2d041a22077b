use proptest::prelude::*;

use hybrid_snn::events::{
    build_dense_histogram, parse_binary, parse_csv, slice_spike_tensor, Event, EventStream,
    Polarity,
};
use hybrid_snn::lif::{lif_step, membrane_update, LifParams, LifState};
use hybrid_snn::metrics::{mpjpe, Pose2D, Pose3D};
use hybrid_snn::tensornet::{Shape, Tensor, WeightContainer};

fn stream_strategy(w: u16, h: u16) -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0u64..50_000, 0..w, 0..h, any::<bool>()), 0..400).prop_map(move |raw| {
        let mut ev: Vec<Event> = raw
            .into_iter()
            .map(|(t, x, y, on)| Event::new(t, x, y, if on { Polarity::On } else { Polarity::Off }))
            .collect();
        ev.sort_by_key(|e| e.t);
        EventStream::new(w, h, ev).unwrap()
    })
}

proptest! {
    #[test]
    fn histogram_keeps_the_last_events(stream in stream_strategy(7, 5), t_end in 1u64..60_000, count in 1usize..500, bins in 1usize..12) {
        let rep = build_dense_histogram(&stream, t_end, count, bins).unwrap();
        let before = stream.events().iter().filter(|e| e.t < t_end).count();
        prop_assert_eq!(rep.tensor.sum(), before.min(count) as f64);
        prop_assert_eq!(rep.tensor.shape(), Shape::new(2 * bins, 5, 7));
    }

    #[test]
    fn spike_windows_partition_the_stream(stream in stream_strategy(6, 6), cut in 0u64..50_000) {
        let a = slice_spike_tensor(&stream, 0, cut).unwrap().event_count();
        let b = slice_spike_tensor(&stream, cut, 50_000).unwrap().event_count();
        prop_assert_eq!(a + b, stream.len() as u64);
    }

    #[test]
    fn event_files_round_trip(stream in stream_strategy(9, 4)) {
        let bin = parse_binary(&stream.to_binary(), "mem").unwrap();
        prop_assert_eq!(bin.events(), stream.events());
        let csv = parse_csv(&stream.to_csv(), 9, 4, "mem").unwrap();
        prop_assert_eq!(csv.events(), stream.events());
    }

    #[test]
    fn soft_reset_subtracts_threshold(
        v in prop::collection::vec(-3.0f32..3.0, 8),
        x in prop::collection::vec(-3.0f32..6.0, 8),
        tau in 1.0f32..10.0,
        v_th in 0.1f32..2.0,
    ) {
        let params = LifParams::new(tau, v_th, 0.0).unwrap();
        let shape = Shape::new(1, 2, 4);
        let mut state = LifState::zeros(shape);
        state.v.data_mut().copy_from_slice(&v);
        let s = lif_step(&mut state, &Tensor::from_vec(shape, x.clone()).unwrap(), &params).unwrap();
        for i in 0..8 {
            let pre = membrane_update(v[i], x[i], 0.0, tau, 1.0);
            let spike = s.s.data()[i];
            prop_assert_eq!(spike, if pre >= v_th { 1.0 } else { 0.0 });
            prop_assert_eq!(state.v.data()[i], pre - v_th * spike);
        }
    }

    #[test]
    fn mpjpe_is_a_metric(
        a in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..8),
        shift in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
    ) {
        let p = Pose3D::new(a.iter().map(|&(x, y, z)| [x, y, z]).collect());
        let q = Pose3D::new(a.iter().map(|&(x, y, z)| [x + shift.0, y + shift.1, z + shift.2]).collect());
        let r = Pose3D::new(a.iter().map(|&(x, y, z)| [y, z, x]).collect());
        prop_assert_eq!(mpjpe(&p, &p).unwrap(), Some(0.0));
        prop_assert_eq!(mpjpe(&p, &q).unwrap(), mpjpe(&q, &p).unwrap());
        let d = |a: &Pose3D, b: &Pose3D| mpjpe(a, b).unwrap().unwrap();
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
        // A rigid shift moves every joint by the same distance.
        let norm = (shift.0 * shift.0 + shift.1 * shift.1 + shift.2 * shift.2).sqrt();
        prop_assert!((d(&p, &q) - norm).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_skips_invisible_joints(a in prop::collection::vec((0.0f64..64.0, 0.0f64..64.0), 2..6)) {
        let p = Pose2D::new(a.iter().map(|&(u, v)| [u, v]).collect());
        let mut q = p.clone();
        q.coords[0] = [1e6, 1e6];
        q.visible[0] = false;
        prop_assert_eq!(mpjpe(&p, &q).unwrap(), Some(0.0));
    }

    #[test]
    fn weight_container_round_trips(values in prop::collection::vec(-1e3f32..1e3, 1..64)) {
        let mut c = WeightContainer::new();
        c.insert("snn.1.conv_w", &[values.len()], values.clone()).unwrap();
        c.insert("snn.1.bn_beta", &[1], vec![values[0]]).unwrap();
        let back = WeightContainer::from_bytes(&c.to_bytes(), "mem").unwrap();
        prop_assert_eq!(back.get("snn.1.conv_w").unwrap().1, &values[..]);
        prop_assert_eq!(back.parameter_count(), values.len() + 1);
    }
}
