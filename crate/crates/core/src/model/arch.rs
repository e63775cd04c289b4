use serde::{Deserialize, Serialize};

use super::{Activation, LayerSpec, LossKind, ModelConfig, OptimizerKind};

/// Reference architectures for the tabular benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Vbf,
    TopoDnn,
    Rain,
    Mimic,
    Mnist784,
    Har,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Vbf,
        Architecture::TopoDnn,
        Architecture::Rain,
        Architecture::Mimic,
        Architecture::Mnist784,
        Architecture::Har,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vbf => "vbf",
            Architecture::TopoDnn => "topo_dnn",
            Architecture::Rain => "rain",
            Architecture::Mimic => "mimic",
            Architecture::Mnist784 => "mnist784",
            Architecture::Har => "har",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn input_dim(self) -> usize {
        match self {
            Architecture::Vbf => 8,
            Architecture::TopoDnn => 87,
            Architecture::Rain => 21,
            Architecture::Mimic => 153,
            Architecture::Mnist784 => 784,
            Architecture::Har => 561,
        }
    }

    pub fn config(self, init_seed: u64) -> ModelConfig {
        use Activation::{Relu, Sigmoid, Softmax};
        let dense = |widths: &[usize]| widths.iter().map(|&w| LayerSpec::new(w, Relu)).collect::<Vec<_>>();
        let (mut layers, output, optimizer, learning_rate, batch_size, epochs) = match self {
            Architecture::Vbf => (
                dense(&[8, 8, 4, 4]),
                LayerSpec::new(2, Softmax),
                OptimizerKind::Nadam,
                1e-3,
                300,
                200,
            ),
            Architecture::TopoDnn => (
                [300, 102, 12, 6]
                    .iter()
                    .map(|&w| LayerSpec::new(w, Relu).normalized())
                    .collect(),
                LayerSpec::new(1, Sigmoid),
                OptimizerKind::Adam,
                5e-5,
                200,
                100,
            ),
            Architecture::Rain => (
                dense(&[21, 21, 12, 12, 4, 4]),
                LayerSpec::new(1, Sigmoid),
                OptimizerKind::Adam,
                1e-4,
                200,
                150,
            ),
            Architecture::Mimic => (
                dense(&[153, 153, 64, 64, 32, 32, 16, 16]),
                LayerSpec::new(1, Sigmoid),
                OptimizerKind::Adam,
                3e-6,
                200,
                100,
            ),
            Architecture::Mnist784 => (
                dense(&[128, 64, 32, 16]),
                LayerSpec::new(10, Softmax),
                OptimizerKind::Adam,
                3e-6,
                200,
                100,
            ),
            Architecture::Har => (
                dense(&[128, 64, 32, 16]),
                LayerSpec::new(6, Softmax),
                OptimizerKind::Adam,
                3e-5,
                200,
                100,
            ),
        };
        let loss = if output.activation == Softmax {
            LossKind::CategoricalCrossEntropy
        } else {
            LossKind::BinaryCrossEntropy
        };
        layers.push(output);
        ModelConfig {
            input_dim: self.input_dim(),
            layers,
            optimizer,
            learning_rate,
            batch_size,
            epochs,
            loss,
            init_seed,
        }
    }
}
