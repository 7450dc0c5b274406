//! Dense row-major linear algebra in `f64`.
//!
//! Every routine walks its operands in a fixed order so results are
//! bit-reproducible from run to run on one platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyVector);
        }
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_len("dot", self.len(), other.len())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * c).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_len("add", self.len(), other.len())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_len("sub", self.len(), other.len())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `[self ; other]`
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.0);
        data.extend_from_slice(&other.0);
        Vector(data)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("matrix", format!("{rows}x{cols}"), "nonzero dims"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("len {a}"), format!("len {b}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn matvec(a: &Matrix, x: &Vector) -> Result<Vector> {
    if a.cols != x.len() {
        return Err(Error::shape(
            "matvec",
            a.shape_str(),
            format!("vector of len {}", x.len()),
        ));
    }
    Ok(Vector((0..a.rows).map(|i| dot(a.row(i), x.as_slice())).collect()))
}

/// `Aᵀ·y`, accumulated row by row of `A`.
pub fn matvec_t(a: &Matrix, y: &Vector) -> Result<Vector> {
    if a.rows != y.len() {
        return Err(Error::shape(
            "matvec_t",
            a.shape_str(),
            format!("vector of len {}", y.len()),
        ));
    }
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        let yi = y[i];
        for (o, w) in out.iter_mut().zip(a.row(i)) {
            *o += w * yi;
        }
    }
    Ok(Vector(out))
}

/// `A += c·u·vᵀ`
pub fn add_outer(a: &mut Matrix, c: f64, u: &Vector, v: &Vector) -> Result<()> {
    if a.rows != u.len() || a.cols != v.len() {
        return Err(Error::shape(
            "add_outer",
            a.shape_str(),
            format!("{}x{}", u.len(), v.len()),
        ));
    }
    let cols = a.cols;
    for i in 0..a.rows {
        let s = c * u[i];
        let row = &mut a.data[i * cols..(i + 1) * cols];
        for (r, vj) in row.iter_mut().zip(v.iter()) {
            *r += s * vj;
        }
    }
    Ok(())
}

pub fn affine(w: &Matrix, b: &Vector, x: &Vector) -> Result<Vector> {
    if w.rows != b.len() {
        return Err(Error::shape(
            "affine",
            w.shape_str(),
            format!("bias of len {}", b.len()),
        ));
    }
    let mut out = matvec(w, x)?;
    for (o, bi) in out.0.iter_mut().zip(b.iter()) {
        *o += bi;
    }
    Ok(out)
}

pub fn relu(x: &Vector) -> Vector {
    Vector(x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-class softmax, max-subtracted.
pub fn softmax2(logits: &Vector) -> Result<[f64; 2]> {
    if logits.len() != 2 {
        return Err(Error::shape("softmax2", format!("len {}", logits.len()), "len 2"));
    }
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    Ok([e0 / s, e1 / s])
}

/// `−log softmax(logits)[y]` via log-sum-exp.
pub fn cross_entropy(logits: &Vector, y: u8) -> Result<f64> {
    if y > 1 {
        return Err(Error::InvalidLabel(y));
    }
    if logits.len() != 2 {
        return Err(Error::shape("cross_entropy", format!("len {}", logits.len()), "len 2"));
    }
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    Ok(lse - logits[y as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn matvec_examples() {
        let x = v(&[1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &x).unwrap(), x);
        assert_eq!(matvec(&Matrix::zeros(2, 3), &x).unwrap(), Vector::zeros(2));
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&a, &v(&[5.0, 6.0])).unwrap(), v(&[17.0, 39.0]));
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let err = matvec(&Matrix::zeros(2, 3), &v(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("len 2"), "{msg}");
    }

    #[test]
    fn affine_examples() {
        let x = v(&[4.0, -2.0]);
        assert_eq!(affine(&Matrix::identity(2), &Vector::zeros(2), &x).unwrap(), x);
        assert_eq!(
            affine(&Matrix::zeros(2, 2), &v(&[7.0, -1.0]), &x).unwrap(),
            v(&[7.0, -1.0])
        );
        let w = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]).unwrap();
        assert_eq!(affine(&w, &v(&[-1.0, 1.0]), &v(&[1.0, 1.0])).unwrap(), v(&[1.0, 4.0]));
        assert!(affine(&w, &v(&[1.0]), &x).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&v(&[-1.0, 0.0, 2.0])), v(&[0.0, 0.0, 2.0]));
        assert_eq!(relu(&v(&[0.5, 3.0])), v(&[0.5, 3.0]));
        assert_eq!(relu(&v(&[-1e9, 1e9])), v(&[0.0, 1e9]));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1000.0) - 1.0).abs() <= 1e-15);
        assert!(sigmoid(-1000.0).abs() <= 1e-15);
        assert!(sigmoid(-1000.0).is_finite());
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = 2f64.ln();
        assert!((cross_entropy(&v(&[0.0, 0.0]), 0).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&v(&[0.0, 0.0]), 1).unwrap() - ln2).abs() < 1e-15);
        let sat = cross_entropy(&v(&[1000.0, 0.0]), 0).unwrap();
        assert!(sat <= 1e-12 && !sat.is_nan());
        let expected = 2.0 + (1.0 + (-2.0f64).exp()).ln();
        let got = cross_entropy(&v(&[1.0, -1.0]), 1).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 2.126928).abs() < 1e-6);
        assert!(matches!(cross_entropy(&v(&[0.0, 0.0]), 2), Err(Error::InvalidLabel(2))));
    }

    fn vec_in(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n)
    }

    proptest! {
        #[test]
        fn matvec_distributes(
            (m, n) in (1usize..=64, 1usize..=64),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let a = Matrix::new(m, n, draw(m * n)).unwrap();
            let x = Vector::new(draw(n)).unwrap();
            let y = Vector::new(draw(n)).unwrap();
            let lhs = matvec(&a, &x.add(&y).unwrap()).unwrap();
            let rhs = matvec(&a, &x).unwrap().add(&matvec(&a, &y).unwrap()).unwrap();
            for i in 0..m {
                let scale = lhs[i].abs().max(rhs[i].abs()).max(1e-300);
                prop_assert!((lhs[i] - rhs[i]).abs() <= 1e-10 * scale.max(1.0));
            }
        }

        #[test]
        fn sigmoid_symmetric(z in -700.0f64..700.0) {
            prop_assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn cross_entropy_nonnegative_and_shift_invariant(
            l in vec_in(2), c in -50.0f64..50.0, y in 0u8..2,
        ) {
            let logits = Vector::new(l.iter().map(|x| x * 20.0).collect()).unwrap();
            let ce = cross_entropy(&logits, y).unwrap();
            prop_assert!(ce >= 0.0);
            let shifted = Vector::new(logits.iter().map(|x| x + c).collect()).unwrap();
            prop_assert!((cross_entropy(&shifted, y).unwrap() - ce).abs() <= 1e-12);
        }

        #[test]
        fn cross_entropy_ln2_iff_equal(a in -30.0f64..30.0, d in prop_oneof![Just(0.0), -5.0f64..5.0]) {
            let ce = cross_entropy(&Vector::new(vec![a, a + d]).unwrap(), 0).unwrap();
            if d == 0.0 {
                prop_assert!((ce - 2f64.ln()).abs() < 1e-12);
            } else if d.abs() > 1e-6 {
                prop_assert!((ce - 2f64.ln()).abs() > 0.0);
            }
        }
    }
}
