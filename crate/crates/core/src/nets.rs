//! Dense encoders and decoder over expression profiles, and the losses that
//! tie them together: reconstruction of each domain and orthogonality of the
//! two target factors.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore, Tape, Var};

/// Whether a forward pass corrupts its inputs.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Layer widths and input corruption for a fully connected network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    /// Probability of zeroing each input entry during training.
    pub dropout_noise: f64,
}

/// A ReLU network with a linear output layer. Parameters live in a
/// [`ParamStore`] under `<prefix>.w<i>` / `<prefix>.b<i>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    spec: MlpSpec,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Result<Self> {
        let prefix = prefix.into();
        if spec.layer_dims.len() < 2 || spec.layer_dims.contains(&0) {
            return Err(Error::Parameter(format!(
                "{prefix}: layer dims {:?} need at least two positive entries",
                spec.layer_dims
            )));
        }
        if !(0.0..1.0).contains(&spec.dropout_noise) {
            return Err(Error::Parameter(format!(
                "{prefix}: dropout noise {} outside [0, 1)",
                spec.dropout_noise
            )));
        }
        Ok(Mlp { prefix, spec })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_dims.last().expect("validated")
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn n_layers(&self) -> usize {
        self.spec.layer_dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    /// Registers Glorot-initialized weights and zero biases.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (l, w) in self.spec.layer_dims.windows(2).enumerate() {
            store.init_glorot(&self.weight_name(l), w[0], w[1], rng)?;
            store.init_zeros(&self.bias_name(l), vec![1, w[1]])?;
        }
        Ok(())
    }

    /// Zeroes the output layer so the network emits its (zero) bias.
    pub fn zero_output_layer(&self, store: &mut ParamStore) -> Result<()> {
        let last = self.n_layers() - 1;
        for name in [self.weight_name(last), self.bias_name(last)] {
            let p = store
                .get_mut(&name)
                .ok_or_else(|| Error::Parameter(format!("unknown parameter {name}")))?;
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    }

    /// Forward pass over a batch of row vectors.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.input_dim() {
            return Err(Error::dim(format!(
                "{}: input width {width}, expected {}",
                self.prefix,
                self.input_dim()
            )));
        }
        let mut h = x;
        if let Mode::Train(rng) = mode {
            if self.spec.dropout_noise > 0.0 {
                let (r, c) = tape.value(x).shape();
                let p = self.spec.dropout_noise;
                let mask = (0..r * c)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
                    .collect();
                let mask = tape.constant(Matrix::new(r, c, mask)?);
                h = tape.mul(h, mask)?;
            }
        }
        for l in 0..self.n_layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            let lin = tape.matmul(h, w)?;
            h = tape.add(lin, b)?;
            if l + 1 < self.n_layers() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Deterministic evaluation outside of any training tape.
    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, store, xv, &mut Mode::Eval)?;
        Ok(tape.value(out).clone())
    }
}

/// How the orthogonality penalty between the two target factors is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMode {
    /// `‖Z_tcᵀ Z_ts‖_F² / N` over the batch.
    Batch,
    /// `Σᵢ (z_tcᵢ · z_tsᵢ)² / N`.
    PerSample,
}

/// The common encoder, private encoder and shared decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionNets {
    pub common: Mlp,
    pub private: Mlp,
    pub decoder: Mlp,
}

impl ExpressionNets {
    /// `hidden` lists encoder hidden widths; the decoder mirrors them.
    pub fn new(input_dim: usize, hidden: &[usize], latent_dim: usize, dropout_noise: f64) -> Result<Self> {
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(latent_dim);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let enc = MlpSpec {
            layer_dims: enc_dims,
            dropout_noise,
        };
        Ok(ExpressionNets {
            common: Mlp::new("enc_c", enc.clone())?,
            private: Mlp::new("enc_t", enc)?,
            decoder: Mlp::new(
                "dec",
                MlpSpec {
                    layer_dims: dec_dims,
                    dropout_noise: 0.0,
                },
            )?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.common.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.common.input_dim()
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R, with_private: bool) -> Result<()> {
        self.common.init(store, rng)?;
        if with_private {
            self.private.init(store, rng)?;
        }
        self.decoder.init(store, rng)
    }

    /// `z = E_c(x)`; serves both cell lines and the tumor CanCell factor.
    pub fn encode_common(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        self.common.forward(tape, store, x, mode)
    }

    /// `z_ts = E_t(x)` for tumor profiles.
    pub fn encode_private(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        self.private.forward(tape, store, x, mode)
    }

    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let width = tape.value(z).cols();
        if width != self.latent_dim() {
            return Err(Error::dim(format!(
                "decoder input width {width}, expected latent dim {}",
                self.latent_dim()
            )));
        }
        self.decoder.forward(tape, store, z, &mut Mode::Eval)
    }

    /// Source reconstruction loss. Returns `(loss, z_c)`.
    pub fn loss_reco_source(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        ensure_nonempty(tape, x, "source reconstruction")?;
        let z = self.encode_common(tape, store, x, mode)?;
        let x_hat = self.decode(tape, store, z)?;
        Ok((reconstruction_loss(tape, x, x_hat)?, z))
    }

    /// Target reconstruction from the mean of both factors.
    /// Returns `(loss, z_tc, z_ts)`.
    pub fn loss_reco_target(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var, Var)> {
        ensure_nonempty(tape, x, "target reconstruction")?;
        let z_tc = self.encode_common(tape, store, x, mode)?;
        let z_ts = self.encode_private(tape, store, x, mode)?;
        let z = combine_mean(tape, z_tc, z_ts)?;
        let x_hat = self.decode(tape, store, z)?;
        Ok((reconstruction_loss(tape, x, x_hat)?, z_tc, z_ts))
    }
}

fn ensure_nonempty(tape: &Tape, x: Var, what: &str) -> Result<()> {
    if tape.value(x).rows() == 0 {
        return Err(Error::Contract(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `(1/N) Σᵢ ‖xᵢ − x̂ᵢ‖²`.
pub fn reconstruction_loss(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::Contract("reconstruction loss of an empty batch".into()));
    }
    if tape.value(x).shape() != tape.value(x_hat).shape() {
        let (a, b) = (tape.value(x).shape(), tape.value(x_hat).shape());
        return Err(Error::dim(format!(
            "reconstruction of {}x{} from {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.sum_sq(diff);
    Ok(tape.scale(sq, 1.0 / n as f64))
}

/// Elementwise mean of the two target factors.
pub fn combine_mean(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.value(a).shape() != tape.value(b).shape() {
        let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
        return Err(Error::dim(format!(
            "cannot average factors of shape {}x{} and {}x{}",
            sa.0, sa.1, sb.0, sb.1
        )));
    }
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 0.5))
}

/// Orthogonality penalty between CanCell and TME factors, normalized by
/// batch size.
pub fn difference_loss(tape: &mut Tape, z_tc: Var, z_ts: Var, mode: DiffMode) -> Result<Var> {
    let (sa, sb) = (tape.value(z_tc).shape(), tape.value(z_ts).shape());
    if sa != sb {
        return Err(Error::dim(format!(
            "difference loss of {}x{} and {}x{}",
            sa.0, sa.1, sb.0, sb.1
        )));
    }
    if sa.0 == 0 {
        return Err(Error::Contract("difference loss of an empty batch".into()));
    }
    let n = sa.0 as f64;
    let raw = match mode {
        DiffMode::Batch => {
            let t = tape.transpose(z_tc);
            let gram = tape.matmul(t, z_ts)?;
            tape.sum_sq(gram)
        }
        DiffMode::PerSample => {
            let prod = tape.mul(z_tc, z_ts)?;
            let d = sa.1;
            let ones = tape.constant(Matrix::filled(d, 1, 1.0));
            let dots = tape.matmul(prod, ones)?;
            tape.sum_sq(dots)
        }
    };
    Ok(tape.scale(raw, 1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nets(seed: u64) -> (ExpressionNets, ParamStore) {
        let nets = ExpressionNets::new(5, &[8], 3, 0.1).unwrap();
        let mut store = ParamStore::new();
        nets.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), true)
            .unwrap();
        (nets, store)
    }

    fn scalar_of(f: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t);
        t.scalar(v)
    }

    #[test]
    fn mlp_spec_validation() {
        let bad = MlpSpec {
            layer_dims: vec![4],
            dropout_noise: 0.0,
        };
        assert!(Mlp::new("m", bad).is_err());
        let bad = MlpSpec {
            layer_dims: vec![4, 0, 2],
            dropout_noise: 0.0,
        };
        assert!(Mlp::new("m", bad).is_err());
        let bad = MlpSpec {
            layer_dims: vec![4, 2],
            dropout_noise: 1.0,
        };
        assert!(Mlp::new("m", bad).is_err());
    }

    #[test]
    fn eval_is_deterministic() {
        let (nets, store) = nets(1);
        let x = Matrix::row(&[0.3, -1.0, 2.0, 0.0, 0.5]);
        let a = nets.common.eval(&store, &x).unwrap();
        let b = nets.common.eval(&store, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cols(), 3);
        assert_eq!(nets.private.eval(&store, &x).unwrap().cols(), 3);
    }

    #[test]
    fn training_mode_corrupts_inputs() {
        let (nets, store) = nets(1);
        let x = Matrix::filled(64, 5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let z = nets
            .encode_common(&mut t, &store, xv, &mut Mode::Train(&mut rng))
            .unwrap();
        assert_ne!(t.value(z), &nets.common.eval(&store, &x).unwrap());
    }

    #[test]
    fn zero_output_layer_gives_zero_embedding() {
        let (nets, mut store) = nets(2);
        nets.common.zero_output_layer(&mut store).unwrap();
        let z = nets
            .common
            .eval(&store, &Matrix::row(&[9.0, -4.0, 1.0, 2.0, 3.0]))
            .unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weight_decoder_outputs_bias() {
        let (nets, mut store) = nets(2);
        let last = nets.decoder.spec().layer_dims.len() - 2;
        store.get_mut(&nets.decoder.weight_name(last)).unwrap().values.fill(0.0);
        let bias = vec![0.5, -1.0, 2.0, 0.0, 3.5];
        store.get_mut(&nets.decoder.bias_name(last)).unwrap().values = bias.clone();
        let out = nets.decoder.eval(&store, &Matrix::row(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(out.as_slice(), bias.as_slice());
    }

    #[test]
    fn small_perturbation_small_change() {
        let (nets, store) = nets(4);
        let x = Matrix::row(&[0.1, 0.2, -0.3, 0.4, 0.5]);
        let mut y = x.clone();
        y.as_mut_slice()[2] += 1e-9;
        let a = nets.common.eval(&store, &x).unwrap();
        let b = nets.common.eval(&store, &y).unwrap();
        let delta = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(delta < 1e-6, "{delta}");
    }

    #[test]
    fn encoders_have_independent_parameters() {
        let (nets, store) = nets(5);
        let x = Matrix::row(&[1.0, 0.5, -0.5, 2.0, 0.0]);
        assert_ne!(
            nets.common.eval(&store, &x).unwrap(),
            nets.private.eval(&store, &x).unwrap()
        );
        assert_eq!(store.names_under("dec").count(), 4);
        assert_eq!(store.names_under("enc_c").count(), 4);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let (nets, store) = nets(1);
        let err = nets.common.eval(&store, &Matrix::row(&[1.0, 2.0]));
        assert!(matches!(err, Err(Error::Dimension(_))));
        let mut t = Tape::new();
        let z = t.constant(Matrix::row(&[1.0, 2.0]));
        assert!(matches!(nets.decode(&mut t, &store, z), Err(Error::Dimension(_))));
    }

    #[test]
    fn reconstruction_loss_hand_cases() {
        let perfect = scalar_of(|t| {
            let x = t.constant(Matrix::row(&[1.0, 2.0]));
            reconstruction_loss(t, x, x).unwrap()
        });
        assert_eq!(perfect, 0.0);
        let one = scalar_of(|t| {
            let x = t.constant(Matrix::row(&[1.0, 0.0]));
            let xh = t.constant(Matrix::row(&[0.0, 0.0]));
            reconstruction_loss(t, x, xh).unwrap()
        });
        assert_eq!(one, 1.0);
        let mut t = Tape::new();
        let e = t.constant(Matrix::zeros(0, 2));
        assert!(matches!(reconstruction_loss(&mut t, e, e), Err(Error::Contract(_))));
    }

    #[test]
    fn combine_mean_cases() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::row(&[2.0, 4.0]));
        let b = t.constant(Matrix::row(&[0.0, 0.0]));
        let m = combine_mean(&mut t, a, b).unwrap();
        assert_eq!(t.value(m).as_slice(), &[1.0, 2.0]);
        let m2 = combine_mean(&mut t, b, a).unwrap();
        assert_eq!(t.value(m), t.value(m2));
        let same = combine_mean(&mut t, a, a).unwrap();
        assert_eq!(t.value(same), t.value(a));
        let c = t.constant(Matrix::row(&[1.0]));
        assert!(matches!(combine_mean(&mut t, a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn difference_loss_cases() {
        // Per-sample orthogonality is row-wise; batch orthogonality is between
        // the column spaces of the two factors.
        let cases = [
            (DiffMode::PerSample, Matrix::row(&[1.0, 0.0]), Matrix::row(&[0.0, 1.0])),
            (
                DiffMode::Batch,
                Matrix::column(&[1.0, 1.0]),
                Matrix::column(&[1.0, -1.0]),
            ),
        ];
        for (mode, za, zb) in cases {
            let orth = scalar_of(|t| {
                let a = t.constant(za.clone());
                let b = t.constant(zb.clone());
                difference_loss(t, a, b, mode).unwrap()
            });
            assert_eq!(orth, 0.0);
        }
        for mode in [DiffMode::Batch, DiffMode::PerSample] {
            let same = scalar_of(|t| {
                let a = t.constant(Matrix::row(&[1.0, 0.0]));
                difference_loss(t, a, a, mode).unwrap()
            });
            assert_eq!(same, 1.0);
        }
        let za = Matrix::from_rows(&[[0.3, -1.2, 0.5], [1.0, 0.25, -0.75]]).unwrap();
        let zb = Matrix::from_rows(&[[0.9, 0.1, 0.4], [-0.2, 0.6, 1.1]]).unwrap();
        let base = scalar_of(|t| {
            let a = t.constant(za.clone());
            let b = t.constant(zb.clone());
            difference_loss(t, a, b, DiffMode::Batch).unwrap()
        });
        let scaled = scalar_of(|t| {
            let a = t.constant(za.clone());
            let b = t.constant(zb.map(|v| 3.0 * v));
            difference_loss(t, a, b, DiffMode::Batch).unwrap()
        });
        assert!((scaled - 9.0 * base).abs() < 1e-12 * scaled.abs());
    }
}
