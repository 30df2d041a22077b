use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hybrid_snn::ann::{AnnNetSpec, AnnNetwork};
use hybrid_snn::energy::{count_ann_macs, count_snn_macs};
use hybrid_snn::hybrid::ModelSpec;
use hybrid_snn::snn::SnnNetSpec;
use hybrid_snn::tensornet::{Shape, Tensor};

#[test]
fn executed_ann_macs_match_the_energy_count() {
    for (c, h, w) in [(4, 32, 32), (20, 32, 64), (3, 64, 32)] {
        let mut spec = AnnNetSpec::reference(c, h, w);
        // Narrow channels keep the run cheap; geometry stays the reference one.
        spec.encoders.iter_mut().for_each(|e| e.channels = 4);
        spec.decoders.iter_mut().for_each(|d| d.channels = 4);
        let net = AnnNetwork::random(spec.clone(), &mut ChaCha8Rng::seed_from_u64(1), 1.0).unwrap();
        let out = net
            .forward(&Tensor::filled(Shape::new(c, h, w), 0.5))
            .unwrap();
        let counted: u64 = count_ann_macs(&spec).iter().map(|l| l.macs).sum();
        assert_eq!(out.executed_macs, counted, "{c}x{h}x{w}");
    }
}

#[test]
fn reference_ann_is_about_22_gmac() {
    let macs: u64 = count_ann_macs(&AnnNetSpec::reference(20, 256, 256))
        .iter()
        .map(|l| l.macs)
        .sum();
    // 2200 GMAC/s at 100 Hz.
    let rel = (macs as f64 - 22e9).abs() / 22e9;
    assert!(rel < 0.05, "{macs}");
}

#[test]
fn snn_dense_counts_cover_every_conv() {
    let spec = SnnNetSpec::reference(256, 256);
    let rows = count_snn_macs(&spec);
    assert_eq!(rows.len(), spec.num_layers() + 1);
    assert_eq!(
        rows.iter().map(|r| r.macs).sum::<u64>(),
        spec.total_dense_macs()
    );
}

#[test]
fn reference_model_round_trips_through_json() {
    let spec = ModelSpec::reference(20, 256, 256).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, spec.to_json()).unwrap();
    assert_eq!(ModelSpec::load(&path).unwrap(), spec);
}
