use vigc::datasets::{
    motion_oracle, Dataset, DatasetConfig, DatasetKind, DigitBank, MovingMnist, MovingMnistConfig, ShapeKind,
    Shapes2d, ShapesConfig, SplitSizes,
};
use vigc::model::ModelConfig;

const CLIPS: u64 = 1000;

#[test]
fn thousand_shape_clips_follow_their_motion_axis() {
    let src = Shapes2d::new(ShapesConfig::default(), 2024).unwrap();
    let mut seen = [0usize; 3];
    for index in 0..CLIPS {
        let spec = src.spec(index);
        let clip = src.clip(index);
        assert_eq!(clip.frames().shape(), &[5, 3, 64, 64]);
        if let Err(e) = motion_oracle(spec.kind, &clip, 0.5) {
            panic!("clip {index}: {e}");
        }
        seen[ShapeKind::ALL.iter().position(|&k| k == spec.kind).unwrap()] += 1;
    }
    assert!(seen.iter().all(|&n| n > 250), "{seen:?}");
}

#[test]
fn thousand_moving_mnist_clips_stay_in_frame_and_reproduce() {
    let bank = DigitBank::synthetic(300, 11);
    let make = || MovingMnist::new(bank.clone(), MovingMnistConfig::default(), 77).unwrap();
    let (a, b) = (make(), make());
    for index in 0..CLIPS {
        for (track, layer) in a.tracks(index).iter().zip(a.layers(index)) {
            let mass: f64 = a.bank().image(track.digit).iter().map(|&v| v as f64).sum();
            for frame in &layer {
                let m: f64 = frame.iter().map(|&v| v as f64).sum();
                assert!((m - mass).abs() <= 0.01 * mass, "clip {index}: mass {m} of {mass}");
            }
        }
        let (ca, cb) = (a.clip(index), b.clip(index));
        assert!(ca.frames().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let bits = |c: &vigc::model::VideoClip<f32>| c.frames().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ca), bits(&cb), "clip {index}");
    }
}

#[test]
fn published_scale_splits() {
    let mnist = DatasetConfig {
        kind: DatasetKind::MovingMnist,
        ..DatasetConfig::default()
    };
    let gray = ModelConfig {
        channels: 1,
        ..ModelConfig::default()
    };
    let ds = Dataset::new(&mnist, &gray, Some(DigitBank::synthetic(10, 0)), 0).unwrap();
    assert_eq!(ds.sizes(), SplitSizes { train: 64_000, test: 320 });
    let ds = Dataset::new(&DatasetConfig::default(), &ModelConfig::default(), None, 0).unwrap();
    assert_eq!(ds.sizes(), SplitSizes { train: 20_000, test: 500 });
}
