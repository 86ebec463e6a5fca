use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Fusion, Matrix, ModelConfig, NetworkError, Result};

/// Every learnable tensor of the model.
///
/// Matrix shapes follow the row-vector/column-vector conventions of the
/// forward pass: `w_demo[d]` is `(categories_d + 1) × d_a` (last row UNK),
/// `w_item` is `d_I × J`, `w_int` is `(d_I + d_a) × d_int`, `w_had_item` is
/// `d_I × d_int`, `w_had_annot` is `d_a × d_int`, `w_proj` is
/// `2·d_int × d_I` (sum fusion only), `w_p` is `d_P × d_combined`, `w_e` is
/// `d_P × d_P`, the heads `w_y`, `w_yi`, `w_ya` are `K × d_P` and the direct
/// annotator path `w_yi_annot` is `K × d_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w_demo: Vec<Matrix>,
    pub alpha_raw: Vec<f64>,
    pub w_item: Matrix,
    pub w_int: Matrix,
    pub w_had_item: Matrix,
    pub w_had_annot: Matrix,
    pub w_proj: Option<Matrix>,
    pub w_p: Matrix,
    pub w_e: Matrix,
    pub w_y: Matrix,
    pub w_yi: Matrix,
    pub w_yi_annot: Matrix,
    pub w_ya: Matrix,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Read-only view of one named tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    /// Position within a family (the axis for `w_demo`, else 0).
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl TensorRef<'_> {
    pub fn label(&self) -> String {
        if self.name == "w_demo" {
            format!("w_demo[{}]", self.index)
        } else {
            self.name.to_string()
        }
    }
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: &'static str,
    pub index: usize,
    pub data: &'a mut [f64],
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::uniform(rows, cols, limit, rng)
}

impl ModelParams {
    /// Glorot-uniform matrices and zero `alpha_raw` (uniform importance).
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, |r, c| xavier(r, c, rng)))
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, Matrix::zeros)
    }

    fn build(config: &ModelConfig, mut make: impl FnMut(usize, usize) -> Matrix) -> Self {
        let c = config;
        let w_demo = c.axis_sizes.iter().map(|&n| make(n + 1, c.d_a)).collect();
        let w_item = make(c.d_i, c.feature_dim);
        let w_int = make(c.d_i + c.d_a, c.d_int);
        let w_had_item = make(c.d_i, c.d_int);
        let w_had_annot = make(c.d_a, c.d_int);
        let w_proj = (c.fusion == Fusion::Sum).then(|| make(2 * c.d_int, c.d_i));
        let w_p = make(c.d_p, c.d_combined());
        let w_e = make(c.d_p, c.d_p);
        let w_y = make(c.num_classes, c.d_p);
        let w_yi = make(c.num_classes, c.d_p);
        let w_yi_annot = make(c.num_classes, c.d_a);
        let w_ya = make(c.num_classes, c.d_p);
        Self {
            w_demo,
            alpha_raw: vec![0.0; c.num_axes()],
            w_item,
            w_int,
            w_had_item,
            w_had_annot,
            w_proj,
            w_p,
            w_e,
            w_y,
            w_yi,
            w_yi_annot,
            w_ya,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data.fill(0.0);
        }
        out
    }

    /// All tensors in a fixed order (the checkpoint and optimizer order).
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (d, w) in self.w_demo.iter().enumerate() {
            out.push(mat("w_demo", d, w));
        }
        out.push(TensorRef {
            name: "alpha_raw",
            index: 0,
            rows: 1,
            cols: self.alpha_raw.len(),
            data: &self.alpha_raw,
        });
        out.push(mat("w_item", 0, &self.w_item));
        out.push(mat("w_int", 0, &self.w_int));
        out.push(mat("w_had_item", 0, &self.w_had_item));
        out.push(mat("w_had_annot", 0, &self.w_had_annot));
        if let Some(w) = &self.w_proj {
            out.push(mat("w_proj", 0, w));
        }
        out.push(mat("w_p", 0, &self.w_p));
        out.push(mat("w_e", 0, &self.w_e));
        out.push(mat("w_y", 0, &self.w_y));
        out.push(mat("w_yi", 0, &self.w_yi));
        out.push(mat("w_yi_annot", 0, &self.w_yi_annot));
        out.push(mat("w_ya", 0, &self.w_ya));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Self {
            w_demo,
            alpha_raw,
            w_item,
            w_int,
            w_had_item,
            w_had_annot,
            w_proj,
            w_p,
            w_e,
            w_y,
            w_yi,
            w_yi_annot,
            w_ya,
        } = self;
        let mut out: Vec<TensorMut<'_>> = w_demo
            .iter_mut()
            .enumerate()
            .map(|(d, w)| TensorMut {
                name: "w_demo",
                index: d,
                data: w.as_mut_slice(),
            })
            .collect();
        out.push(TensorMut {
            name: "alpha_raw",
            index: 0,
            data: alpha_raw,
        });
        fn single<'a>(name: &'static str, w: &'a mut Matrix) -> TensorMut<'a> {
            TensorMut {
                name,
                index: 0,
                data: w.as_mut_slice(),
            }
        }
        out.push(single("w_item", w_item));
        out.push(single("w_int", w_int));
        out.push(single("w_had_item", w_had_item));
        out.push(single("w_had_annot", w_had_annot));
        if let Some(w) = w_proj {
            out.push(single("w_proj", w));
        }
        out.push(single("w_p", w_p));
        out.push(single("w_e", w_e));
        out.push(single("w_y", w_y));
        out.push(single("w_yi", w_yi));
        out.push(single("w_yi_annot", w_yi_annot));
        out.push(single("w_ya", w_ya));
        out
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(config);
        let a = self.tensors();
        let b = expected.tensors();
        if a.len() != b.len() {
            return Err(NetworkError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                b.len(),
                a.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.rows != y.rows || x.cols != y.cols {
                return Err(NetworkError::InvalidConfig(format!(
                    "tensor {} has shape {}x{}, expected {} {}x{}",
                    x.label(),
                    x.rows,
                    x.cols,
                    y.label(),
                    y.rows,
                    y.cols
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

fn mat<'a>(name: &'static str, index: usize, w: &'a Matrix) -> TensorRef<'a> {
    TensorRef {
        name,
        index,
        rows: w.rows(),
        cols: w.cols(),
        data: w.as_slice(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(fusion: Fusion) -> ModelConfig {
        ModelConfig {
            d_a: 4,
            d_i: 4,
            d_int: 3,
            d_p: 5,
            num_classes: 3,
            feature_dim: 6,
            axis_sizes: vec![2, 3],
            activation: Activation::Relu,
            fusion,
            dropout_rate: 0.0,
            n_annotators: 7,
        }
    }

    #[test]
    fn shapes_follow_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(&config(Fusion::Concat), &mut rng).unwrap();
        assert_eq!(p.w_demo[0].shape(), (3, 4));
        assert_eq!(p.w_demo[1].shape(), (4, 4));
        assert_eq!(p.w_p.shape(), (5, 4 + 4 + 6));
        assert!(p.w_proj.is_none());
        assert_eq!(p.alpha_raw, vec![0.0, 0.0]);
        p.check_shapes(&config(Fusion::Concat)).unwrap();
        assert!(p.check_shapes(&config(Fusion::Sum)).is_err());

        let s = ModelParams::init(&config(Fusion::Sum), &mut rng).unwrap();
        assert_eq!(s.w_proj.as_ref().unwrap().shape(), (6, 4));
        assert_eq!(s.w_p.shape(), (5, 4));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&config(Fusion::Concat), &mut rng).unwrap();
        for t in p.tensors() {
            if t.name == "alpha_raw" {
                continue;
            }
            let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
            assert!(t.data.iter().all(|v| v.abs() <= limit), "{}", t.label());
        }
    }

    #[test]
    fn tensor_views_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(&config(Fusion::Sum), &mut rng).unwrap();
        let names: Vec<_> = p
            .tensors()
            .iter()
            .map(|t| (t.name, t.index, t.data.len()))
            .collect();
        let names_mut: Vec<_> = p
            .tensors_mut()
            .iter()
            .map(|t| (t.name, t.index, t.data.len()))
            .collect();
        assert_eq!(names, names_mut);
        let z = p.zeros_like();
        assert!(z.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sum_fusion_requires_equal_widths() {
        let mut c = config(Fusion::Sum);
        c.d_a = 3;
        assert_eq!(
            c.validate(),
            Err(NetworkError::FusionShapeError { d_a: 3, d_i: 4 })
        );
    }
}
