use rand::Rng;

use crate::autodiff::{
    concat, stack, BoundParams, GruCell, Linear, ParamId, ParamStore, Tensor, Var,
};
use crate::error::{Error, Result};

/// Character embedding, bidirectional GRU and key/value projections.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub key_proj: Linear,
    pub value_proj: Linear,
    pub d: usize,
    pub vocab_size: usize,
}

/// Keys and values for a batch, each `[B × N_max × d]`.
#[derive(Clone, Debug)]
pub struct EncoderOutput<'t> {
    pub keys: Var<'t>,
    pub values: Var<'t>,
    pub lengths: Vec<usize>,
}

impl<'t> EncoderOutput<'t> {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.keys.shape()[1]
    }

    /// `[B × N_max]` flattened, true on real characters.
    pub fn key_mask(&self) -> Vec<bool> {
        let n = self.max_len();
        self.lengths
            .iter()
            .flat_map(|&len| (0..n).map(move |j| j < len))
            .collect()
    }

    fn columns(t: &Tensor, b: usize, len: usize) -> Tensor {
        let (n, d) = (t.shape()[1], t.shape()[2]);
        let mut out = Tensor::zeros(&[d, len]);
        for j in 0..len {
            for k in 0..d {
                out.set2(k, j, t.data()[(b * n + j) * d + k]);
            }
        }
        out
    }

    /// `K` of item `b` as a `[d × N]` matrix.
    pub fn key_matrix(&self, b: usize) -> Tensor {
        Self::columns(&self.keys.value(), b, self.lengths[b])
    }

    /// `V` of item `b` as a `[d × N]` matrix.
    pub fn value_matrix(&self, b: usize) -> Tensor {
        Self::columns(&self.values.value(), b, self.lengths[b])
    }
}

impl Encoder {
    pub fn new(store: &mut ParamStore, vocab_size: usize, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            embedding: store.add_uniform("encoder.embedding", &[vocab_size, d], 1, rng),
            forward_cell: GruCell::new(store, "encoder.gru_fwd", d, d, rng),
            backward_cell: GruCell::new(store, "encoder.gru_bwd", d, d, rng),
            key_proj: Linear::new(store, "encoder.key", 2 * d, d, rng),
            value_proj: Linear::new(store, "encoder.value", 2 * d, d, rng),
            d,
            vocab_size,
        }
    }

    /// Encodes one unpadded id sequence.
    pub fn encode<'t>(&self, p: &BoundParams<'t>, ids: &[usize]) -> Result<EncoderOutput<'t>> {
        self.encode_batch(p, &[ids.to_vec()], &[ids.len()])
    }

    /// Encodes a padded batch. Row `b` of `ids` holds at least `lengths[b]`
    /// ids; entries past the length are ignored.
    pub fn encode_batch<'t>(
        &self,
        p: &BoundParams<'t>,
        ids: &[Vec<usize>],
        lengths: &[usize],
    ) -> Result<EncoderOutput<'t>> {
        if ids.is_empty() {
            return Err(Error::Input("cannot encode an empty batch".into()));
        }
        if ids.len() != lengths.len() {
            return Err(Error::shape("encode_batch", &[ids.len()], &[lengths.len()]));
        }
        let n_max = *lengths.iter().max().unwrap();
        for (row, &len) in ids.iter().zip(lengths) {
            if len == 0 {
                return Err(Error::Input("cannot encode an empty sequence".into()));
            }
            if row.len() < len {
                return Err(Error::shape("encode_batch", &[row.len()], &[len]));
            }
            if let Some(&bad) = row[..len].iter().find(|&&i| i >= self.vocab_size) {
                return Err(Error::VocabId {
                    id: bad,
                    size: self.vocab_size,
                });
            }
        }
        let bsz = ids.len();
        let d = self.d;
        let table = p.var(self.embedding);
        let tape = table.tape();
        let inputs = (0..n_max)
            .map(|n| {
                // Padding slots read the pad row; their states are masked below.
                let col: Vec<usize> = ids
                    .iter()
                    .zip(lengths)
                    .map(|(r, &len)| if n < len { r[n] } else { 0 })
                    .collect();
                table.embed(&col)
            })
            .collect::<Result<Vec<_>>>()?;

        let zeros = tape.constant(Tensor::zeros(&[bsz, d]));
        let mut fwd = Vec::with_capacity(n_max);
        let mut h = zeros;
        for x in &inputs {
            h = self.forward_cell.forward(p, *x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![zeros; n_max];
        let mut h = zeros;
        for n in (0..n_max).rev() {
            let next = self.backward_cell.forward(p, inputs[n], h)?;
            let real: Vec<bool> = lengths.iter().map(|&len| n < len).collect();
            h = if real.iter().all(|&r| r) {
                next
            } else {
                next.select_rows(&real, h)?
            };
            bwd[n] = h;
        }
        let hidden = concat(&[stack(&fwd)?, stack(&bwd)?], 2)?.reshape(&[bsz * n_max, 2 * d])?;
        let keys = self
            .key_proj
            .forward(p, hidden)?
            .reshape(&[bsz, n_max, d])?;
        let values = self
            .value_proj
            .forward(p, hidden)?
            .reshape(&[bsz, n_max, d])?;
        Ok(EncoderOutput {
            keys,
            values,
            lengths: lengths.to_vec(),
        })
    }
}
