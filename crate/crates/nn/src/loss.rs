use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch. Returns the loss and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let classes = logits.sample_len();
    let batch = logits.batch();
    assert_eq!(labels.len(), batch, "one label per row");
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &y) in logits
        .data()
        .chunks(classes)
        .zip(grad.chunks_mut(classes))
        .zip(labels)
    {
        assert!(y < classes, "label {y} out of range for {classes} classes");
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let log_z = z.ln() + mx;
        loss += log_z - row[y];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - log_z).exp() / batch as f64;
        }
        g[y] -= 1.0 / batch as f64;
    }
    let grad = Tensor::from_vec(logits.shape(), grad).expect("same shape as logits");
    (loss / batch as f64, grad)
}
