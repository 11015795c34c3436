"""Label-conditioned recurrent sequencer.

One sigmoid hidden layer turns the image feature vector into a fixed-length
sequence of class distributions. At step t the cell input is the feature
vector plus the embedding of the previous label (ground truth while training
with teacher forcing, own argmax at inference); the class-0 embedding (the
'0' padding character) acts as the start token at t=1.

    x(t) = feat + embed(prev_label)
    r(t) = sigmoid(W_rh r(t-1) + W_rx x(t) + b_r)
    o(t) = W_out r(t) + b_out

Backpropagation-through-time accumulates gradients over all steps into the
cell parameters and the embedding table and also returns the gradient with
respect to the feature vector for the upstream network.
"""

import numpy as np

from .layers import LayerParams, he_init, logit_init, sigmoid, softmax

START_TOKEN = 0


class RnnSequencer:
    """Recurrent cell + output layer + label embedding table.

    Defaults follow the recognizer (36 hidden units, 360-dim features and
    embeddings, 36 classes, 10 steps); the dimensions stay free so gradient
    checks can run on a small clone.
    """

    def __init__(self, hidden=36, input_dim=360, n_classes=36, seq_len=10,
                 seed=0):
        self.hidden = hidden
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.seq_len = seq_len
        rng = np.random.default_rng(seed)
        zeros = lambda n: np.zeros(n, dtype=he_init((1,), 1, rng).dtype)
        # W_rx applies as x @ W, hence the (input, hidden) storage order
        self.rec = LayerParams(weights=he_init((hidden, hidden), hidden, rng),
                               bias=zeros(hidden))
        self.inp = LayerParams(weights=he_init((input_dim, hidden), input_dim, rng),
                               bias=zeros(0))
        self.out = LayerParams(weights=logit_init((hidden, n_classes), hidden, rng),
                               bias=zeros(n_classes))
        self.embedding = LayerParams(
            weights=he_init((n_classes, input_dim), input_dim, rng),
            bias=zeros(0))

    def all_params(self):
        return [self.rec, self.inp, self.out, self.embedding]

    def zero_grads(self):
        for p in self.all_params():
            p.zero_grads()

    def named_tensors(self):
        return [("rnn.w_rh", self.rec.weights), ("rnn.b_r", self.rec.bias),
                ("rnn.w_rx", self.inp.weights),
                ("rnn.w_out", self.out.weights), ("rnn.b_out", self.out.bias),
                ("rnn.embedding", self.embedding.weights)]

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def embed(self, indices):
        """Embedding rows for one index or an index array."""
        indices = np.asarray(indices)
        if indices.min(initial=0) < 0 or indices.max(initial=0) >= self.n_classes:
            raise ValueError(f"label index out of range [0, {self.n_classes})")
        return self.embedding.weights[indices]

    def step(self, r_prev, feat, w_prev):
        """One recurrence step; accepts (h,)/(d,) vectors or (N, .) batches."""
        x = feat + w_prev
        a = r_prev @ self.rec.weights + x @ self.inp.weights + self.rec.bias
        r = sigmoid(a)
        logits = r @ self.out.weights + self.out.bias
        return r, logits

    def unroll(self, feat, mode, targets=None, r0=None):
        """Run all steps over a (N, input_dim) feature batch.

        mode "teacher" feeds the ground-truth previous label and requires a
        (N, seq_len) target array; mode "greedy" feeds the argmax of the
        previous step (ties to the lowest class index). Returns (probs,
        preds, cache) where probs is (N, seq_len, n_classes) with each row
        softmax-normalized and preds is the (N, seq_len) argmax path.
        """
        squeeze = feat.ndim == 1
        if squeeze:
            feat = feat[None]
        n = feat.shape[0]
        if mode == "teacher":
            if targets is None:
                raise ValueError("teacher mode needs a target index array")
            targets = np.asarray(targets)
            if targets.shape != (n, self.seq_len):
                raise ValueError(f"targets must be shaped ({n}, {self.seq_len}), "
                                 f"got {targets.shape}")
        elif mode != "greedy":
            raise ValueError(f"unknown unroll mode {mode!r}")

        r = np.zeros((n, self.hidden), dtype=feat.dtype) if r0 is None else r0
        probs = np.empty((n, self.seq_len, self.n_classes), dtype=feat.dtype)
        preds = np.empty((n, self.seq_len), dtype=np.int64)
        steps = []
        tokens = np.full(n, START_TOKEN, dtype=np.int64)
        for t in range(self.seq_len):
            if t > 0:
                tokens = targets[:, t - 1] if mode == "teacher" else preds[:, t - 1]
            w_prev = self.embed(tokens)
            r_prev = r
            r, logits = self.step(r_prev, feat, w_prev)
            probs[:, t] = softmax(logits)
            preds[:, t] = logits.argmax(axis=1)
            steps.append((tokens, feat + w_prev, r_prev, r))
        cache = _UnrollCache(steps=steps, n=n)
        if squeeze:
            probs, preds = probs[0], preds[0]
        return probs, preds, cache

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------

    def bptt(self, cache, grad_logits):
        """Backpropagate (N, seq_len, n_classes) logit gradients through the
        cached unroll. Accumulates into every parameter gradient (embedding
        rows included) and returns d(loss)/d(feat), summed over steps."""
        if cache is None or len(cache.steps) != self.seq_len:
            raise ValueError("unroll cache is missing or incomplete")
        if grad_logits.ndim == 2:
            grad_logits = grad_logits[None]
        n = cache.n
        dfeat = np.zeros((n, self.input_dim), dtype=grad_logits.dtype)
        dr_next = np.zeros((n, self.hidden), dtype=grad_logits.dtype)
        for t in reversed(range(self.seq_len)):
            tokens, x, r_prev, r = cache.steps[t]
            dlogits = grad_logits[:, t]
            self.out.grad_weights += r.T @ dlogits
            self.out.grad_bias += dlogits.sum(axis=0)
            dr = dlogits @ self.out.weights.T + dr_next
            da = dr * r * (1.0 - r)
            self.rec.grad_weights += r_prev.T @ da
            self.rec.grad_bias += da.sum(axis=0)
            self.inp.grad_weights += x.T @ da
            dx = da @ self.inp.weights.T
            dfeat += dx
            np.add.at(self.embedding.grad_weights, tokens, dx)
            dr_next = da @ self.rec.weights.T
        return dfeat


class _UnrollCache:
    __slots__ = ("steps", "n")

    def __init__(self, steps, n):
        self.steps = steps
        self.n = n
