//! Brute-force metric definitions, recounted from scratch per class.

pub struct OracleScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn scores(truth: &[usize], pred: &[usize], k: usize) -> OracleScores {
    let n = truth.len();
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let mut sums = [0.0f64; 4];
    let mut present = 0usize;
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        let mut tn = 0.0;
        for i in 0..n {
            match (truth[i] == c, pred[i] == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        if tp + fneg == 0.0 {
            continue;
        }
        present += 1;
        let p = div(tp, tp + fp);
        let r = div(tp, tp + fneg);
        sums[0] += p;
        sums[1] += r;
        sums[2] += div(2.0 * p * r, p + r);
        sums[3] += div(fp, fp + tn);
    }
    let m = |s: f64| div(s, present as f64);
    OracleScores {
        accuracy: div(correct as f64, n as f64),
        precision: m(sums[0]),
        recall: m(sums[1]),
        f1: m(sums[2]),
        fpr: m(sums[3]),
    }
}
