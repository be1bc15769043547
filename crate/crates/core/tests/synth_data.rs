use feduv::synth::{generate, DatasetSpec, UserDataset};

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, x)| *a += x);
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// Test accuracy of the classifier assigning each example to the nearest
/// training-split centroid.
fn nearest_centroid_accuracy(users: &[UserDataset]) -> f64 {
    let centroids: Vec<Vec<f64>> = users.iter().map(|u| mean(&u.train)).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let (mut right, mut total) = (0usize, 0usize);
    for (i, u) in users.iter().enumerate() {
        for x in &u.test {
            let best = (0..centroids.len())
                .min_by(|&a, &b| dist(x, &centroids[a]).total_cmp(&dist(x, &centroids[b])))
                .unwrap();
            right += (best == i) as usize;
            total += 1;
        }
    }
    right as f64 / total as f64
}

#[test]
fn wide_separation_is_easy() {
    let spec = DatasetSpec {
        intra_sigma: 1.0,
        inter_scale: 10.0,
        ..DatasetSpec::default()
    };
    let (known, _) = generate(&spec).unwrap();
    let acc = nearest_centroid_accuracy(&known);
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn accuracy_falls_as_spread_grows() {
    let accs: Vec<f64> = [1.0, 3.0, 6.0]
        .iter()
        .map(|&sigma| {
            let spec = DatasetSpec {
                intra_sigma: sigma,
                inter_scale: 2.0,
                ..DatasetSpec::default()
            };
            nearest_centroid_accuracy(&generate(&spec).unwrap().0)
        })
        .collect();
    for w in accs.windows(2) {
        assert!(w[1] <= w[0] + 0.01, "{accs:?}");
    }
    assert!(accs[2] < accs[0], "{accs:?}");
}

#[test]
fn populations_are_disjoint() {
    let (known, unknown) = generate(&DatasetSpec::default()).unwrap();
    assert!(known.iter().all(|u| u.known) && unknown.iter().all(|u| !u.known));
    let max_known = known.iter().map(|u| u.user_index).max().unwrap();
    assert!(unknown.iter().all(|u| u.user_index > max_known));
}
