//! MLP and LSTM building blocks on top of the tape.
//!
//! Parameter structs hold detached tensors. `bind` registers them as gradient
//! leaves on a tape and returns the same struct with attached tensors, so a
//! weight reused across timesteps maps to exactly one leaf node.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn xavier<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<S> = (0..rows * cols)
        .map(|_| S::of_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

#[derive(Clone, Debug)]
pub struct Linear<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        // Small random biases keep narrow ReLU stacks off the dead-unit
        // cascade that zero biases produce.
        let b: Vec<S> = (0..output).map(|_| S::of_f64(rng.gen_range(-0.05..0.05))).collect();
        Self { w: xavier(rng, input, output), b: Tensor::vector(b).expect("bias shape") }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Tensor::zeros(vec![input, output]), b: Tensor::zeros(vec![output]) }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self { w: tape.leaf(&self.w, true), b: tape.leaf(&self.b, true) }
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let xw = tape.matmul(x, &self.w)?;
        tape.add(&xw, &self.b)
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

/// Fully-connected stack with ReLU between layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp<S> {
    pub layers: Vec<Linear<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// `dims` lists every layer width including input and output,
    /// e.g. `[in, hidden, hidden, out]` for a three-layer MLP.
    pub fn init(rng: &mut ChaCha8Rng, dims: &[usize]) -> Self {
        let layers = dims.windows(2).map(|w| Linear::init(rng, w[0], w[1])).collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self { layers: self.layers.iter().map(|l| l.bind(tape)).collect() }
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h)?;
            if i < last {
                h = tape.relu(&h)?;
            }
        }
        Ok(h)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        for l in &mut self.layers {
            l.visit_mut(out);
        }
    }
}

/// Single-layer LSTM. The combined weight maps `[x, h]` to the four gates in
/// `[input, forget, cell, output]` order.
#[derive(Clone, Debug)]
pub struct Lstm<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub input: usize,
    pub hidden: usize,
}

impl<S: Scalar> Lstm<S> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let w = xavier(rng, input + hidden, 4 * hidden);
        // Forget-gate bias starts at 1 so early training keeps cell state.
        let mut b = Tensor::zeros(vec![4 * hidden]);
        for v in b.data_mut()[hidden..2 * hidden].iter_mut() {
            *v = S::one();
        }
        Self { w, b, input, hidden }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(vec![input + hidden, 4 * hidden]),
            b: Tensor::zeros(vec![4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self { w: tape.leaf(&self.w, true), b: tape.leaf(&self.b, true), input: self.input, hidden: self.hidden }
    }

    /// One cell update over a batch of rows.
    pub fn step(
        &self,
        tape: &mut Tape<S>,
        x: &Tensor<S>,
        h: &Tensor<S>,
        c: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let hd = self.hidden;
        let xh = tape.concat(&[x, h])?;
        let pre = tape.matmul(&xh, &self.w)?;
        let pre = tape.add(&pre, &self.b)?;
        let i_raw = tape.slice_cols(&pre, 0, hd)?;
        let f_raw = tape.slice_cols(&pre, hd, hd)?;
        let g_raw = tape.slice_cols(&pre, 2 * hd, hd)?;
        let o_raw = tape.slice_cols(&pre, 3 * hd, hd)?;
        let i = tape.sigmoid(&i_raw)?;
        let f = tape.sigmoid(&f_raw)?;
        let g = tape.tanh(&g_raw)?;
        let o = tape.sigmoid(&o_raw)?;
        let fc = tape.mul(&f, c)?;
        let ig = tape.mul(&i, &g)?;
        let c_next = tape.add(&fc, &ig)?;
        let c_tanh = tape.tanh(&c_next)?;
        let h_next = tape.mul(&o, &c_tanh)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over a sequence of per-frame batches (oldest frame
    /// first) and returns the final hidden state.
    pub fn run(&self, tape: &mut Tape<S>, frames: &[Tensor<S>]) -> Result<Tensor<S>> {
        let rows = frames[0].rows();
        let mut h = tape.constant(&Tensor::zeros(vec![rows, self.hidden]));
        let mut c = tape.constant(&Tensor::zeros(vec![rows, self.hidden]));
        for x in frames {
            let (hn, cn) = self.step(tape, x, &h, &c)?;
            h = hn;
            c = cn;
        }
        Ok(h)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

/// LSTM followed by a three-layer MLP head; the shared layout of all sequence
/// encoders.
#[derive(Clone, Debug)]
pub struct SeqEncoder<S> {
    pub lstm: Lstm<S>,
    pub head: Mlp<S>,
}

impl<S: Scalar> SeqEncoder<S> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, mlp_hidden: usize, output: usize) -> Self {
        Self {
            lstm: Lstm::init(rng, input, hidden),
            head: Mlp::init(rng, &[hidden, mlp_hidden, mlp_hidden, output]),
        }
    }

    pub fn zeros(input: usize, hidden: usize, mlp_hidden: usize, output: usize) -> Self {
        Self {
            lstm: Lstm::zeros(input, hidden),
            head: Mlp::zeros(&[hidden, mlp_hidden, mlp_hidden, output]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self { lstm: self.lstm.bind(tape), head: self.head.bind(tape) }
    }

    pub fn forward(&self, tape: &mut Tape<S>, frames: &[Tensor<S>]) -> Result<Tensor<S>> {
        let h = self.lstm.run(tape, frames)?;
        self.head.forward(tape, &h)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.lstm.visit(&format!("{prefix}.lstm"), out);
        self.head.visit(&format!("{prefix}.head"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        self.lstm.visit_mut(out);
        self.head.visit_mut(out);
    }
}
