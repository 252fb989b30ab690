#![allow(dead_code)]

use std::collections::VecDeque;

use divpatch::Tensor;

/// Direct pair loop over ordered pairs `i != j`, no normalization shortcut.
pub fn brute_force_cosine(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let ni = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nj = rows[j].iter().map(|a| a * a).sum::<f64>().sqrt();
            total += (dot / (ni * nj)).abs();
        }
    }
    total / (n * (n - 1)) as f64
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    let d = rows[0].len();
    Tensor::new([rows.len(), d], rows.concat()).unwrap()
}

/// True when the `false` cells of a `side × side` mask form one filled,
/// axis-aligned rectangle (or there are none).
pub fn false_region_is_rectangle(mask: &[bool], side: usize) -> bool {
    let cells: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let Some(&start) = cells.first() else {
        return true;
    };
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut reached = 0;
    while let Some(i) = queue.pop_front() {
        reached += 1;
        let (r, c) = (i / side, i % side);
        let mut push = |j: usize| {
            if !mask[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            push(i - side);
        }
        if r + 1 < side {
            push(i + side);
        }
        if c > 0 {
            push(i - 1);
        }
        if c + 1 < side {
            push(i + 1);
        }
    }
    let rows = cells.iter().map(|i| i / side);
    let cols = cells.iter().map(|i| i % side);
    let (r0, r1) = (rows.clone().min().unwrap(), rows.max().unwrap());
    let (c0, c1) = (cols.clone().min().unwrap(), cols.max().unwrap());
    reached == cells.len() && (r1 - r0 + 1) * (c1 - c0 + 1) == cells.len()
}

/// Kolmogorov–Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Mean over rows of `−log softmax(logits)[label]`, computed with an
/// explicit log-sum-exp.
pub fn mean_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / logits.len() as f64
}
