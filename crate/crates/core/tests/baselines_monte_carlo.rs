use fedrep_core::baselines::{self, NewClientReport};
use fedrep_core::synthetic::generate_ground_truth;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn reports(m_new: usize) -> Vec<NewClientReport> {
    (0..50)
        .map(|seed| {
            let gt = generate_ground_truth(40, 20, 2, seed).unwrap();
            let b = gt.b_star.matrix().clone();
            baselines::new_client_eval(&gt, &b, m_new, 1e-2, seed, 2_000).unwrap()
        })
        .collect()
}

#[test]
fn new_client_error_falls_with_more_samples() {
    let k = 2;
    let stats: Vec<(f64, f64, f64)> = [k, 2 * k, 4 * k]
        .into_iter()
        .map(|m| {
            let r = reports(m);
            (
                median(r.iter().map(|x| x.mse_fedrep).collect()),
                median(r.iter().map(|x| x.mse_local).collect()),
                median(r.iter().map(|x| x.mse_fedavg_style).collect()),
            )
        })
        .collect();
    for w in stats.windows(2) {
        assert!(w[1].0 < w[0].0, "fedrep mse not decreasing: {stats:?}");
        assert!(w[1].1 < w[0].1, "local mse not decreasing: {stats:?}");
        // the shared model does not use the new client's samples
        assert_eq!(w[1].2, w[0].2);
    }
}

#[test]
fn shared_representation_beats_local_fit_below_ambient_dimension() {
    for m in [2, 4, 8] {
        let r = reports(m);
        let wins = r.iter().filter(|x| x.mse_fedrep < x.mse_local).count();
        assert!(wins >= 48, "m_new {m}: fedrep better on {wins}/50");
    }
}
