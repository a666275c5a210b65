"""Single-hidden-layer ANN surrogate of one stationary column section.

Inputs (x_upper, y_lower, r): liquid entering the section from above,
vapor entering from below, and the section flow ratio.  Output: liquid
composition leaving the section bottom.  Compositions are trained and
evaluated in logit space (the column ends operate at high purity, where
plain mole fractions lose resolution); the flow ratio uses an affine map
onto [-1, 1].  Hidden activation tanh, linear output.

Models are immutable: training and growth return new instances.
"""

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["ScalingSpec", "SurrogateModel", "transform", "untransform",
           "SerializationError", "serialize", "deserialize",
           "DEFAULT_EPS", "MAX_HIDDEN"]

DEFAULT_EPS = 1e-9
MAX_HIDDEN = 30  # structural cap; keeps the kernel's fixed buffers safe


def transform(x, eps=DEFAULT_EPS):
    """Logit with clamping: ln(c / (1-c)), c = clip(x, eps, 1-eps)."""
    c = np.clip(x, eps, 1.0 - eps)
    out = np.log(c / (1.0 - c))
    return float(out) if np.ndim(x) == 0 else out

def untransform(z):
    """Inverse of transform on the clamped range (logistic sigmoid)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScalingSpec:
    eps: float = DEFAULT_EPS
    r_lo: float = 0.5
    r_hi: float = 4.0

    def scale_ratio(self, r):
        return 2.0 * (np.asarray(r, dtype=float) - self.r_lo) / (self.r_hi - self.r_lo) - 1.0

    def ratio_gradient(self):
        return 2.0 / (self.r_hi - self.r_lo)


class SerializationError(ValueError):
    pass


@dataclass(frozen=True)
class SurrogateModel:
    section_id: int
    input_weights: np.ndarray   # (hidden, 3)
    input_biases: np.ndarray    # (hidden,)
    output_weights: np.ndarray  # (hidden,)
    output_bias: float
    scaling: ScalingSpec

    def __post_init__(self):
        iw = np.array(self.input_weights, dtype=float)
        ib = np.array(self.input_biases, dtype=float)
        ow = np.array(self.output_weights, dtype=float)
        if iw.ndim != 2 or iw.shape[1] != 3:
            raise ValueError("input_weights must have shape (hidden, 3)")
        h = iw.shape[0]
        if h < 1:
            raise ValueError("need at least one hidden node")
        if ib.shape != (h,) or ow.shape != (h,):
            raise ValueError("inconsistent weight shapes")
        for a in (iw, ib, ow):
            a.flags.writeable = False
        object.__setattr__(self, "input_weights", iw)
        object.__setattr__(self, "input_biases", ib)
        object.__setattr__(self, "output_weights", ow)
        object.__setattr__(self, "output_bias", float(self.output_bias))

    # -- construction -----------------------------------------------------

    @classmethod
    def new_random(cls, section_id, rng, hidden=3, scaling=None):
        """Small random initial model (weights ~ N(0, 0.3))."""
        scaling = scaling or ScalingSpec()
        return cls(
            section_id=section_id,
            input_weights=0.3 * rng.standard_normal((hidden, 3)),
            input_biases=0.3 * rng.standard_normal(hidden),
            output_weights=0.3 * rng.standard_normal(hidden),
            output_bias=0.0,
            scaling=scaling,
        )

    @classmethod
    def constant(cls, section_id, value, scaling=None):
        """Model that outputs `value` for every input (zero weights)."""
        scaling = scaling or ScalingSpec()
        return cls(section_id, np.zeros((1, 3)), np.zeros(1), np.zeros(1),
                   transform(value, scaling.eps), scaling)

    @property
    def hidden_count(self):
        return self.input_weights.shape[0]

    # -- scaling ----------------------------------------------------------

    def scale_inputs(self, X):
        """Raw (n, 3) inputs -> scaled (n, 3)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.empty_like(X)
        Z[:, 0] = transform(X[:, 0], self.scaling.eps)
        Z[:, 1] = transform(X[:, 1], self.scaling.eps)
        Z[:, 2] = self.scaling.scale_ratio(X[:, 2])
        return Z

    # -- evaluation -------------------------------------------------------

    def _activations(self, Z):
        """Hidden tanh activations (n, hidden).

        Pre-activations use a fixed elementwise expression instead of a
        BLAS matmul: gemm paths change with the hidden count, which would
        break add_node's bitwise output-preservation guarantee.
        """
        W = self.input_weights
        return np.tanh(Z[:, [0]] * W[:, 0] + Z[:, [1]] * W[:, 1]
                       + Z[:, [2]] * W[:, 2] + self.input_biases)

    def eval_scaled(self, Z):
        """Scaled (n, 3) inputs -> scaled outputs (n,).

        The output sum is accumulated node by node (not via BLAS dot) so
        that appending a zero-weight node leaves outputs bitwise
        unchanged, which add_node guarantees.
        """
        A = self._activations(Z)
        out = np.full(A.shape[0], self.output_bias)
        for i in range(self.hidden_count):
            out = out + self.output_weights[i] * A[:, i]
        return out

    def eval_batch(self, X):
        """Raw inputs (n, 3) -> raw outputs (n,), clamped to (eps, 1-eps)."""
        out = untransform(self.eval_scaled(self.scale_inputs(X)))
        return np.clip(out, self.scaling.eps, 1.0 - self.scaling.eps)

    def eval(self, x_upper, y_lower, r):
        """Predicted liquid composition leaving the section bottom."""
        return float(self.eval_batch(np.array([[x_upper, y_lower, r]]))[0])

    def predict(self, x_upper, y_lower, r):
        """(value, clamped) pair used by the hybrid model assembly."""
        raw = untransform(self.eval_scaled(
            self.scale_inputs(np.array([[x_upper, y_lower, r]])))[0])
        eps = self.scaling.eps
        clamped = raw < eps or raw > 1.0 - eps
        return float(np.clip(raw, eps, 1.0 - eps)), clamped

    # -- derivatives ------------------------------------------------------

    def input_jacobian(self, x_upper, y_lower, r):
        """d output / d (x_upper, y_lower, r), all in raw (unscaled) space."""
        return self.input_gradient(x_upper, y_lower, r)

    def input_gradient(self, x_upper, y_lower, r):
        eps = self.scaling.eps
        Z = self.scale_inputs(np.array([[x_upper, y_lower, r]]))
        a = self._activations(Z)[0]
        g_scaled = (self.output_weights * (1.0 - a * a)) @ self.input_weights
        out = untransform(float(self.eval_scaled(Z)[0]))
        if out < eps or out > 1.0 - eps:    # clamp active: flat
            return np.zeros(3)
        dsig = out * (1.0 - out)
        din = np.array([
            0.0 if not eps < x_upper < 1.0 - eps else 1.0 / (x_upper * (1.0 - x_upper)),
            0.0 if not eps < y_lower < 1.0 - eps else 1.0 / (y_lower * (1.0 - y_lower)),
            self.scaling.ratio_gradient(),
        ])
        return dsig * g_scaled * din

    def weight_jacobian(self, x_upper, y_lower, r):
        """d scaled-output / d weight vector at one raw input point."""
        Z = self.scale_inputs(np.array([[x_upper, y_lower, r]]))
        return self.weight_jacobian_scaled(Z)[0]

    def weight_jacobian_scaled(self, Z):
        """Batch weight Jacobian on scaled inputs: (n, 5*hidden + 1).

        Column order matches as_weight_vector: per node (3 input weights,
        bias, output weight), then the output bias.
        """
        Z = np.atleast_2d(Z)
        n = Z.shape[0]
        h = self.hidden_count
        A = self._activations(Z)                                   # (n, h)
        D = self.output_weights * (1.0 - A * A)                    # (n, h)
        J = np.empty((n, 5 * h + 1))
        for i in range(h):
            J[:, 5 * i:5 * i + 3] = D[:, [i]] * Z
            J[:, 5 * i + 3] = D[:, i]
            J[:, 5 * i + 4] = A[:, i]
        J[:, 5 * h] = 1.0
        return J

    # -- weight vector round trip ------------------------------------------

    def as_weight_vector(self):
        h = self.hidden_count
        w = np.empty(5 * h + 1)
        for i in range(h):
            w[5 * i:5 * i + 3] = self.input_weights[i]
            w[5 * i + 3] = self.input_biases[i]
            w[5 * i + 4] = self.output_weights[i]
        w[5 * h] = self.output_bias
        return w

    def with_weight_vector(self, w):
        w = np.asarray(w, dtype=float)
        h = self.hidden_count
        if w.shape != (5 * h + 1,):
            raise ValueError("weight vector length mismatch")
        iw = np.empty((h, 3))
        ib = np.empty(h)
        ow = np.empty(h)
        for i in range(h):
            iw[i] = w[5 * i:5 * i + 3]
            ib[i] = w[5 * i + 3]
            ow[i] = w[5 * i + 4]
        return replace(self, input_weights=iw, input_biases=ib,
                       output_weights=ow, output_bias=float(w[5 * h]))

    # -- growth -----------------------------------------------------------

    def add_node(self):
        """Append one zero-initialized hidden node; outputs are unchanged
        because the new output weight is zero."""
        if self.hidden_count >= MAX_HIDDEN:
            raise ValueError(f"hidden layer already at the cap of {MAX_HIDDEN}")
        return replace(
            self,
            input_weights=np.vstack([self.input_weights, np.zeros(3)]),
            input_biases=np.append(self.input_biases, 0.0),
            output_weights=np.append(self.output_weights, 0.0),
        )

    # -- kernel packing -----------------------------------------------------

    def packed(self):
        """Flat weights in the compiled-kernel layout:
        [input weights row-major | input biases | output weights | bias]."""
        flat = np.concatenate([self.input_weights.ravel(), self.input_biases,
                               self.output_weights, [self.output_bias]])
        return flat, (self.scaling.r_lo, self.scaling.r_hi), self.scaling.eps


# ---------------------------------------------------------------------------
# Persistence: versioned UTF-8 text, one record per model
# ---------------------------------------------------------------------------

def _fmt(values):
    return " ".join(repr(float(v)) for v in np.atleast_1d(values))


def serialize(model: SurrogateModel) -> str:
    lines = [
        f"surrogate-v1 {model.section_id} {model.hidden_count}",
        f"scaling {_fmt(model.scaling.eps)} {_fmt(model.scaling.r_lo)} "
        f"{_fmt(model.scaling.r_hi)}",
        "iw " + _fmt(model.input_weights.ravel()),
        "ib " + _fmt(model.input_biases),
        "ow " + _fmt(model.output_weights),
        "ob " + _fmt(model.output_bias),
    ]
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> SurrogateModel:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise SerializationError("empty surrogate record")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "surrogate-v1":
        raise SerializationError(f"unsupported header: {lines[0]!r}")
    try:
        section_id, hidden = int(head[1]), int(head[2])
    except ValueError as exc:
        raise SerializationError(f"bad header fields: {lines[0]!r}") from exc
    if len(lines) != 6:
        raise SerializationError(
            f"expected 6 record lines, found {len(lines)}")

    def grab(idx, tag, count):
        parts = lines[idx].split()
        if parts[0] != tag:
            raise SerializationError(f"expected {tag!r} line, got {lines[idx]!r}")
        vals = [float(v) for v in parts[1:]]
        if len(vals) != count:
            raise SerializationError(
                f"{tag}: expected {count} values, found {len(vals)}")
        return np.array(vals)

    eps, r_lo, r_hi = grab(1, "scaling", 3)
    iw = grab(2, "iw", 3 * hidden).reshape(hidden, 3)
    ib = grab(3, "ib", hidden)
    ow = grab(4, "ow", hidden)
    ob = grab(5, "ob", 1)[0]
    return SurrogateModel(section_id, iw, ib, ow, ob,
                          ScalingSpec(eps=eps, r_lo=r_lo, r_hi=r_hi))
