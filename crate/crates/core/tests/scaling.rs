use std::time::{Duration, Instant};

use rdrp::conformal::{calibrate, BinarySearchConfig, McConfig, RdrpConfig};
use rdrp::dataset::{generate_synthetic, OutcomeModel, ShiftSpec, SyntheticConfig};
use rdrp::model::init_params;

fn best_of(runs: usize, mut f: impl FnMut()) -> Duration {
    (0..runs)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn doubling_the_calibration_set_less_than_triples_the_time() {
    let cfg = SyntheticConfig {
        n: 4000,
        d: 8,
        outcome_model: OutcomeModel::Gaussian,
        noise: 0.1,
        seed: 11,
    };
    let (full, _) = generate_synthetic(&cfg, &ShiftSpec::NONE).unwrap();
    let half = full.select(&(0..2000).collect::<Vec<_>>());
    let params = init_params(8, 32, 3).unwrap();
    let rdrp = RdrpConfig {
        mc: McConfig {
            passes: 50,
            retention: 0.9,
            seed: 5,
        },
        search: BinarySearchConfig {
            epsilon: 1e-3,
            clamp: true,
        },
        ..RdrpConfig::default()
    };
    calibrate(&params, &half, &rdrp).unwrap();
    let t_half = best_of(5, || {
        calibrate(&params, &half, &rdrp).unwrap();
    });
    let t_full = best_of(5, || {
        calibrate(&params, &full, &rdrp).unwrap();
    });
    let ratio = t_full.as_secs_f64() / t_half.as_secs_f64();
    assert!(ratio < 3.0, "time ratio {ratio:.2} ({t_half:?} -> {t_full:?})");
}
