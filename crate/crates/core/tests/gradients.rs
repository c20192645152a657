use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seedgrow::surrogate::{featurize, loss_and_gradient, FeatureSet, FeatureStack, SurrogateArch, SurrogateParams};
use seedgrow::volume::Volume;
use seedgrow::{Dims, Mask};

fn batch(n: usize) -> Vec<(FeatureStack<f64>, Mask)> {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    let d = Dims(6, 5, 7);
    (0..n)
        .map(|_| {
            let x = Volume::from_fn(d, 2, |_, _| r.random_range(0.0..1.0)).unwrap();
            let truth = Mask::from_fn(d, |_| r.random_bool(0.3));
            (featurize(&x, FeatureSet::LocalStats), truth)
        })
        .collect()
}

fn max_rel_error(arch: SurrogateArch) -> f64 {
    let data = batch(5);
    let pairs: Vec<_> = data.iter().map(|(f, m)| (f, m)).collect();
    let mut p = SurrogateParams::<f64>::init(arch, 3);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for t in &mut p.theta {
        *t += r.random_range(-0.5..0.5);
    }
    let (_, grad) = loss_and_gradient(&p, &pairs).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..p.theta.len() {
        let mut q = p.clone();
        q.theta[i] += h;
        let up = loss_and_gradient(&q, &pairs).unwrap().0;
        q.theta[i] -= 2.0 * h;
        let down = loss_and_gradient(&q, &pairs).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }
    worst
}

#[test]
fn surrogate_mlp_gradient_matches_finite_differences() {
    let worst = max_rel_error(SurrogateArch {
        feature_set: FeatureSet::LocalStats,
        channels: 2,
        hidden: 4,
    });
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn surrogate_logistic_gradient_matches_finite_differences() {
    let worst = max_rel_error(SurrogateArch {
        feature_set: FeatureSet::LocalStats,
        channels: 2,
        hidden: 0,
    });
    assert!(worst < 1e-3, "max relative error {worst}");
}
