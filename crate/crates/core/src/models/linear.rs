use serde::{Deserialize, Serialize};

use super::{softmax, ModelError, Prediction};
use crate::features::{tfidf_row, SparseRow, TfidfMatrix, Vocabulary};
use crate::label::{Label, NUM_CLASSES};
use crate::textnorm::CleanDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    /// Recorded for reproducibility; zero initialisation and full-batch
    /// descent make training independent of it.
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            learning_rate: 1.0,
            l2: 1e-4,
            epochs: 300,
            seed: 0,
        }
    }
}

impl LinearConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ModelError::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Multinomial logistic regression weights. `weights` is row-major
/// `NUM_CLASSES × n_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
}

impl LinearClassifier {
    pub fn zeros(n_features: usize) -> Self {
        LinearClassifier {
            n_features,
            weights: vec![0.0; NUM_CLASSES * n_features],
            bias: [0.0; NUM_CLASSES],
        }
    }

    pub fn logits(&self, row: &SparseRow) -> [f64; NUM_CLASSES] {
        let mut z = self.bias;
        for (c, zc) in z.iter_mut().enumerate() {
            let w = &self.weights[c * self.n_features..(c + 1) * self.n_features];
            *zc += row.iter().map(|(j, v)| w[j] * v).sum::<f64>();
        }
        z
    }

    pub fn predict_row(&self, row: &SparseRow) -> Prediction {
        Prediction::from_distribution(softmax(&self.logits(row)))
    }

    fn check_row(&self, row: &SparseRow) -> Result<(), ModelError> {
        match row.indices.last() {
            Some(&j) if j >= self.n_features => Err(ModelError::Shape(format!(
                "feature index {j} outside {} columns",
                self.n_features
            ))),
            _ => Ok(()),
        }
    }
}

/// Mean cross-entropy plus `l2 / 2 · ‖W‖²` (bias unpenalised) and its
/// gradient, laid out like the classifier itself.
pub fn linear_loss_and_gradient(
    model: &LinearClassifier,
    x: &[SparseRow],
    y: &[Label],
    l2: f64,
) -> (f64, LinearClassifier) {
    let n = x.len().max(1) as f64;
    let mut grad = LinearClassifier::zeros(model.n_features);
    let mut loss = 0.0;
    for (row, label) in x.iter().zip(y) {
        let p = softmax(&model.logits(row));
        loss -= p[label.index()].max(f64::MIN_POSITIVE).ln();
        for c in 0..NUM_CLASSES {
            let delta = (p[c] - f64::from(c == label.index())) / n;
            grad.bias[c] += delta;
            let g = &mut grad.weights[c * model.n_features..(c + 1) * model.n_features];
            for (j, v) in row.iter() {
                g[j] += delta * v;
            }
        }
    }
    loss /= n;
    let mut penalty = 0.0;
    for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
        *g += l2 * w;
        penalty += w * w;
    }
    (loss + 0.5 * l2 * penalty, grad)
}

/// Full-batch gradient descent from zero weights. Returns the classifier and
/// the objective recorded before each update plus the final one.
pub fn train_linear(
    x: &TfidfMatrix,
    y: &[Label],
    config: &LinearConfig,
) -> Result<(LinearClassifier, Vec<f64>), ModelError> {
    config.validate()?;
    if x.n_rows() != y.len() {
        return Err(ModelError::Shape(format!("{} rows but {} labels", x.n_rows(), y.len())));
    }
    if x.n_rows() == 0 {
        return Err(ModelError::Config("training set is empty".into()));
    }
    let mut model = LinearClassifier::zeros(x.n_cols);
    for row in &x.rows {
        model.check_row(row)?;
    }
    let mut trace = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let (loss, grad) = linear_loss_and_gradient(&model, &x.rows, y, config.l2);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                detail: format!("objective is {loss}"),
            });
        }
        trace.push(loss);
        if epoch == config.epochs {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
            *w -= config.learning_rate * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
            *b -= config.learning_rate * g;
        }
        if let Some(bad) = model.weights.iter().chain(&model.bias).position(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite {
                epoch,
                detail: format!("parameter {bad} diverged"),
            });
        }
    }
    Ok((model, trace))
}

/// A classifier bundled with the vocabulary that defines its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    vocab: Vocabulary,
    classifier: LinearClassifier,
    config: LinearConfig,
}

/// Result of [`LinearModel::train`].
#[derive(Debug, Clone)]
pub struct LinearTrained {
    pub model: LinearModel,
    pub loss_trace: Vec<f64>,
}

impl LinearModel {
    pub fn new(vocab: Vocabulary, classifier: LinearClassifier, config: LinearConfig) -> Result<Self, ModelError> {
        if classifier.n_features != vocab.num_terms() {
            return Err(ModelError::Shape(format!(
                "classifier has {} features, vocabulary {} terms",
                classifier.n_features,
                vocab.num_terms()
            )));
        }
        if classifier.weights.len() != NUM_CLASSES * classifier.n_features {
            return Err(ModelError::Shape("weight matrix has the wrong size".into()));
        }
        if classifier
            .weights
            .iter()
            .chain(&classifier.bias)
            .any(|w| !w.is_finite())
        {
            return Err(ModelError::Format("non-finite parameter".into()));
        }
        Ok(LinearModel {
            vocab,
            classifier,
            config,
        })
    }

    pub fn train(
        vocab: Vocabulary,
        x: &TfidfMatrix,
        y: &[Label],
        config: LinearConfig,
    ) -> Result<LinearTrained, ModelError> {
        if x.n_cols != vocab.num_terms() {
            return Err(ModelError::Shape(format!(
                "matrix has {} columns, vocabulary {} terms",
                x.n_cols,
                vocab.num_terms()
            )));
        }
        let (classifier, loss_trace) = train_linear(x, y, &config)?;
        Ok(LinearTrained {
            model: LinearModel::new(vocab, classifier, config)?,
            loss_trace,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.classifier
    }

    pub fn config(&self) -> &LinearConfig {
        &self.config
    }

    pub fn predict(&self, doc: &CleanDocument) -> Prediction {
        self.classifier.predict_row(&tfidf_row(&doc.tokens, &self.vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize) -> TfidfMatrix {
        TfidfMatrix {
            n_cols: n,
            rows: (0..n)
                .map(|i| SparseRow {
                    indices: vec![i],
                    values: vec![1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearClassifier::zeros(3);
        let p = m.predict_row(&SparseRow {
            indices: vec![0, 2],
            values: vec![0.6, 0.8],
        });
        assert_eq!(p.distribution, [0.25; 4]);
        assert_eq!(p.label, Label::Racial);
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let (model, trace) = train_linear(&one_hot(4), &Label::ALL, &LinearConfig::default()).unwrap();
        for (i, label) in Label::ALL.iter().enumerate() {
            let row = &one_hot(4).rows[i];
            assert_eq!(model.predict_row(row).label, *label);
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((trace[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_features = 5;
        let mut model = LinearClassifier::zeros(n_features);
        model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        model.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let x: Vec<SparseRow> = (0..6)
            .map(|_| SparseRow {
                indices: vec![0, 2, 4],
                values: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let y: Vec<Label> = (0..6).map(|i| Label::ALL[i % 4]).collect();
        let (_, grad) = linear_loss_and_gradient(&model, &x, &y, 0.1);
        let h = 1e-6;
        for k in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[k] += h;
            let mut minus = model.clone();
            minus.weights[k] -= h;
            let fd = (linear_loss_and_gradient(&plus, &x, &y, 0.1).0 - linear_loss_and_gradient(&minus, &x, &y, 0.1).0)
                / (2.0 * h);
            assert!((fd - grad.weights[k]).abs() <= 1e-6 * fd.abs().max(1.0), "weight {k}");
        }
    }

    #[test]
    fn shape_and_divergence_errors() {
        assert!(matches!(
            train_linear(&one_hot(4), &Label::ALL[..3], &LinearConfig::default()),
            Err(ModelError::Shape(_))
        ));
        let huge = LinearConfig {
            learning_rate: 1e308,
            ..LinearConfig::default()
        };
        assert!(matches!(
            train_linear(&one_hot(4), &Label::ALL, &huge),
            Err(ModelError::NonFinite { .. })
        ));
    }
}
