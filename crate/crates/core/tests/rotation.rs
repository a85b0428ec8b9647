use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uniscale_core::geometry::{matrix_to_quat, matrix_to_rot6d, quat_to_matrix, rot6d_to_matrix, Mat3, Rot6d};

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    quat_to_matrix(q.map(|v| v / n)).unwrap()
}

#[test]
fn thousand_rotations_round_trip_both_codecs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let r = random_rotation(&mut rng);
        let via6d = rot6d_to_matrix(&matrix_to_rot6d(&r).unwrap()).unwrap();
        assert!((via6d - r).norm() < 1e-9);
        let viaq = quat_to_matrix(matrix_to_quat(&r).unwrap()).unwrap();
        assert!((viaq - r).norm() < 1e-9);
    }
}

#[test]
fn rot6d_ignores_positive_scaling_of_either_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let r = random_rotation(&mut rng);
        let Rot6d(v) = matrix_to_rot6d(&r).unwrap();
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
        let mut scaled = v;
        for (i, x) in scaled.iter_mut().enumerate() {
            *x *= if i < 3 { a } else { b };
        }
        let m = rot6d_to_matrix(&Rot6d(scaled)).unwrap();
        assert!((m - r).norm() < 1e-9);
    }
}
