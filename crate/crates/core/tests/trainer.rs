use cdtvd_core::trainer::{desk_train_config, pretrain, Checkpoint, Stage, TrainConfig};
use cdtvd_core::volume::{make_synthetic, GridSpec, ScalarVolume, SyntheticKind, TimeSeries};

fn blobs_32(frames: usize, seed: u64) -> TimeSeries {
    let t: Vec<i64> = (0..frames as i64).collect();
    let grid = GridSpec::unit([32; 3]).unwrap();
    make_synthetic(&SyntheticKind::GaussianBlobs(Default::default()), &grid, &t, seed).unwrap()
}

fn pretrained_500() -> (Checkpoint, Vec<f64>) {
    let cfg = TrainConfig {
        pretrain_iterations: 500,
        ..desk_train_config()
    };
    let data = vec![blobs_32(8, 1), blobs_32(8, 2)];
    let (ckpt, log) = pretrain(&data, &cfg).unwrap();
    assert_eq!(log.records.len(), 500);
    let totals = log.records.iter().filter(|r| r.stage == Stage::B).map(|r| r.total).collect();
    (ckpt, totals)
}

/// Separable Gaussian blur with clamped borders.
fn blur(vol: &ScalarVolume, sigma: f64) -> ScalarVolume {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let d = vol.dims();
    let mut cur = vol.clone();
    for axis in 0..3 {
        let src = cur.clone();
        cur = ScalarVolume::from_fn(src.grid().clone(), |x, y, z| {
            let mut acc = 0.0;
            for (j, w) in k.iter().enumerate() {
                let mut p = [x as isize, y as isize, z as isize];
                p[axis] = (p[axis] + j as isize - r).clamp(0, d[axis] as isize - 1);
                acc += w * src.get(p[0] as usize, p[1] as usize, p[2] as usize) as f64;
            }
            (acc / norm) as f32
        })
        .unwrap();
    }
    cur
}

#[test]
fn pretraining_halves_the_denoiser_loss() {
    let (ckpt, totals) = pretrained_500();
    let window = 25;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let first = mean(&totals[..window]);
    let last = mean(&totals[totals.len() - window..]);
    println!("stage-B total loss: first {window} mean {first:.4}, last {window} mean {last:.4}");
    assert!(last <= 0.5 * first, "loss fell from {first} to {last}");

    // the trained encoder tells a volume from its blurred copy at the deepest level
    let vol = blobs_32(1, 9).frames()[0].scalar_view().into_owned();
    let deepest = |v: &ScalarVolume| ckpt.encoder.encode(v).unwrap().levels.last().unwrap().data.clone();
    let (a, b) = (deepest(&vol), deepest(&blur(&vol, 1.5)));
    let dist: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 0.0);
}
