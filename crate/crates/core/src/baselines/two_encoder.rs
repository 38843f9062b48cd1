use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::objective::{
    matching_objective, score_matrix, Classifier, LabelSet, TcmHyper, TcmModel,
};
use crate::rng::Rng;
use crate::text::{TokenBatch, Vocab};

/// Matching model with separate encoders for inputs and label texts.
#[derive(Clone, Debug)]
pub struct TwoEncoderModel {
    input: Encoder,
    label: Encoder,
    store: ParamStore,
    vocab: Vocab,
    labels: LabelSet,
    label_tokens: TokenBatch,
    hyper: TcmHyper,
    mirror: bool,
}

impl TwoEncoderModel {
    /// Both encoders share `cfg` but are initialized from different streams.
    pub fn new(
        cfg: &EncoderConfig,
        vocab: Vocab,
        labels: LabelSet,
        hyper: TcmHyper,
    ) -> Result<Self> {
        crate::objective::check_vocab(cfg, &vocab)?;
        hyper.validate()?;
        let mut store = ParamStore::new();
        let input = Encoder::init(cfg, &mut store, "input.")?;
        let label = Encoder::init(cfg, &mut store, "label.")?;
        let label_tokens = TokenBatch::encode(&vocab, labels.texts(), cfg.max_len)?;
        Ok(TwoEncoderModel {
            input,
            label,
            store,
            vocab,
            labels,
            label_tokens,
            hyper,
            mirror: false,
        })
    }

    /// Starts both towers from the parameters of a siamese model and, with
    /// `mirror`, keeps them tied by giving both the summed gradient. That
    /// reproduces the siamese trajectory.
    pub fn from_siamese(model: &TcmModel, mirror: bool) -> Result<Self> {
        let mut m = Self::new(
            model.encoder().config(),
            model.vocab().clone(),
            model.labels().clone(),
            *model.hyper(),
        )?;
        for dst in [&m.input, &m.label] {
            model
                .encoder()
                .copy_values_into(model.store(), dst, &mut m.store)?;
        }
        m.mirror = mirror;
        Ok(m)
    }

    pub fn input_encoder(&self) -> &Encoder {
        &self.input
    }

    pub fn label_encoder(&self) -> &Encoder {
        &self.label
    }

    pub fn encode_labels(&self) -> Result<Tensor> {
        self.label.encode(&self.store, &self.label_tokens)
    }

    fn pairs(&self) -> impl Iterator<Item = (ParamId, ParamId)> {
        self.input
            .param_ids()
            .into_iter()
            .zip(self.label.param_ids())
    }
}

impl Classifier for TwoEncoderModel {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.input.config().max_len
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(
        &self,
        tape: &mut Tape,
        batch: &TokenBatch,
        targets: &[usize],
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let x = self
            .input
            .forward(tape, &self.store, batch, dropout.as_deref_mut())?;
        let l = self
            .label
            .forward(tape, &self.store, &self.label_tokens, dropout)?;
        matching_objective(tape, x, l, targets, &self.hyper)
    }

    fn scores(&self, batch: &TokenBatch) -> Result<Tensor> {
        let x = self.input.encode(&self.store, batch)?;
        score_matrix(&x, &self.encode_labels()?)
    }

    fn before_step(&mut self) -> Result<()> {
        if !self.mirror {
            return Ok(());
        }
        for (a, b) in self.pairs().collect::<Vec<_>>() {
            let (ga, gb) = match (self.store.grad(a), self.store.grad(b)) {
                (Some(ga), Some(gb)) => (ga.clone(), gb.clone()),
                _ => continue,
            };
            let sum: Vec<_> = ga
                .data()
                .iter()
                .zip(gb.data())
                .map(|(x, y)| x + y)
                .collect();
            for id in [a, b] {
                self.store
                    .grad_mut(id)
                    .expect("trainable")
                    .data_mut()
                    .copy_from_slice(&sum);
            }
        }
        Ok(())
    }
}
