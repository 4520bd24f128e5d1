use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::micronet::NetError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images stacked as `N×C×H×W` with one label and one id per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    ids: Vec<u32>,
    class_names: Vec<String>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        ids: Vec<u32>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self, NetError> {
        let shape = images.shape();
        if shape.len() != 4 || shape[0] == 0 {
            return Err(NetError::EmptyDataset);
        }
        if labels.len() != shape[0] || ids.len() != shape[0] {
            return Err(NetError::DatasetLayout);
        }
        let classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NetError::ClassOutOfRange { class: label, classes });
        }
        Ok(Self {
            images,
            labels,
            ids,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `[channels, height, width]` of every image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn id(&self, index: usize) -> u32 {
        self.ids[index]
    }

    pub fn position_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn image_data(&self, index: usize) -> &[f64] {
        let [c, h, w] = self.image_shape();
        let n = c * h * w;
        &self.images.data()[index * n..(index + 1) * n]
    }

    pub fn image(&self, index: usize) -> Tensor {
        let [c, h, w] = self.image_shape();
        Tensor::new(alloc::vec![c, h, w], self.image_data(index).to_vec())
            .expect("dataset images are finite")
    }

    /// Positions of the images labelled `class`, in dataset order.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}
