# Prosperity Public License 3.0
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator

from coreason_rlv.errors import ArtifactError, NumericError
from coreason_rlv.schemas import Episode, TaskInstance
from coreason_rlv.utils.logger import logger
from coreason_rlv.vocab import EOS, PAD, VOCAB_SIZE

PARAMS_FORMAT = "coreason-rlv-params"
PARAMS_VERSION = 1
DEFAULT_WINDOW = 3


class PolicyParams:
    """
    Weights of the linear-softmax policy over trailing-window token indicators.

    Attributes:
        W: Logit weights of shape (feature_dim, |V|).
        v: Value head (PPO), or None.
        u_bce: Binary cross-entropy verification head, or None.
        u_reg: Regression verification head, or None.
        window: Number of trailing tokens the features look at.

    Instances are treated as immutable: training produces new instances, so samplers
    holding a reference never observe a half-applied update.
    """

    __slots__ = ("W", "v", "u_bce", "u_reg", "window")

    def __init__(
        self,
        W: np.ndarray,
        v: Optional[np.ndarray] = None,
        u_bce: Optional[np.ndarray] = None,
        u_reg: Optional[np.ndarray] = None,
        window: int = DEFAULT_WINDOW,
    ) -> None:
        if window < 1:
            raise ValueError("window must be at least 1")
        feature_dim = window * VOCAB_SIZE
        if W.shape != (feature_dim, VOCAB_SIZE):
            raise ValueError(f"W must have shape ({feature_dim}, {VOCAB_SIZE}), got {W.shape}")
        for name, head in (("v", v), ("u_bce", u_bce), ("u_reg", u_reg)):
            if head is not None and head.shape != (feature_dim,):
                raise ValueError(f"{name} must have shape ({feature_dim},), got {head.shape}")
        self.W = W
        self.v = v
        self.u_bce = u_bce
        self.u_reg = u_reg
        self.window = window

    @classmethod
    def zeros(
        cls,
        window: int = DEFAULT_WINDOW,
        value_head: bool = False,
        bce_head: bool = False,
        reg_head: bool = False,
    ) -> "PolicyParams":
        """The uniform policy, with the requested heads initialised to zero."""
        dim = window * VOCAB_SIZE
        return cls(
            W=np.zeros((dim, VOCAB_SIZE)),
            v=np.zeros(dim) if value_head else None,
            u_bce=np.zeros(dim) if bce_head else None,
            u_reg=np.zeros(dim) if reg_head else None,
            window=window,
        )

    @property
    def feature_dim(self) -> int:
        return self.window * VOCAB_SIZE

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            W=self.W.copy(),
            v=None if self.v is None else self.v.copy(),
            u_bce=None if self.u_bce is None else self.u_bce.copy(),
            u_reg=None if self.u_reg is None else self.u_reg.copy(),
            window=self.window,
        )

    def is_finite(self) -> bool:
        arrays = [a for a in (self.W, self.v, self.u_bce, self.u_reg) if a is not None]
        return all(bool(np.all(np.isfinite(a))) for a in arrays)


class ReferenceParams:
    """Frozen snapshot of W taken when a run starts (the KL anchor)."""

    __slots__ = ("W", "window")

    def __init__(self, W: np.ndarray, window: int = DEFAULT_WINDOW) -> None:
        frozen = np.array(W, dtype=float, copy=True)
        frozen.setflags(write=False)
        self.W = frozen
        self.window = window

    @classmethod
    def snapshot(cls, params: PolicyParams) -> "ReferenceParams":
        return cls(params.W, params.window)


WeightSource = Union[PolicyParams, ReferenceParams]


def features(context: Sequence[int], window: int = DEFAULT_WINDOW) -> np.ndarray:
    """
    Active feature indices of a context.

    The last `window` tokens (left-padded with PAD) map to indicators indexed by
    `position * |V| + token`, position 0 being the oldest token of the window. The
    index is collision-free, so the result has exactly `window` distinct entries.
    """
    tail = list(context[-window:]) if window else []
    if len(tail) < window:
        tail = [PAD] * (window - len(tail)) + tail
    return np.arange(window) * VOCAB_SIZE + np.asarray(tail, dtype=np.int64)


def _logits(source: WeightSource, active: np.ndarray) -> np.ndarray:
    z = source.W[active].sum(axis=0)
    if not np.all(np.isfinite(z)):
        raise NumericError("policy produced non-finite logits")
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def log_dist(source: WeightSource, context: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (active feature indices, log-probabilities over the vocabulary)."""
    active = features(context, source.window)
    return active, _log_softmax(_logits(source, active))


def next_token_dist(params: WeightSource, context: Sequence[int]) -> np.ndarray:
    """
    softmax(Wᵀ·features(context)).

    Raises:
        NumericError: If the logits are not finite.
    """
    _, logp = log_dist(params, context)
    p = np.exp(logp)
    return p / p.sum()


def generate_tokens(
    params: PolicyParams,
    context: Sequence[int],
    max_new: int,
    temperature: float = 1.0,
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
) -> Tuple[List[int], List[float]]:
    """
    Continues `context` autoregressively for at most `max_new` tokens, stopping after EOS.

    Tokens are drawn from the tempered distribution (or argmax when `greedy`); the returned
    log-probabilities are always those of the un-tempered policy.
    """
    if not greedy and temperature <= 0:
        raise ValueError("temperature must be positive")
    if not greedy and rng is None:
        raise ValueError("sampling requires an rng")
    ctx = list(context)
    tokens: List[int] = []
    logprobs: List[float] = []
    for _ in range(max(0, max_new)):
        active = features(ctx, params.window)
        z = _logits(params, active)
        logp = _log_softmax(z)
        if greedy:
            token = int(np.argmax(z))
        else:
            assert rng is not None
            q = np.exp(_log_softmax(z / temperature))
            cdf = np.cumsum(q)
            token = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            token = min(token, VOCAB_SIZE - 1)
        tokens.append(token)
        logprobs.append(float(logp[token]))
        ctx.append(token)
        if token == EOS:
            break
    return tokens, logprobs


def sample_solution(
    params: PolicyParams,
    task: TaskInstance,
    max_len: int,
    temperature: float,
    rng: Optional[np.random.Generator],
    greedy: bool = False,
    group_id: int = 0,
) -> Episode:
    """
    Samples one solution for `task` (reward left unset).

    Args:
        params: Behaviour policy.
        task: Problem whose prompt conditions the solution.
        max_len: Maximum number of solution tokens (>= 1).
        temperature: Sampling temperature (ignored when greedy).
        rng: Random stream of this episode.
        greedy: Argmax decoding.
        group_id: Group the episode belongs to.

    Raises:
        ValueError: If max_len < 1.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    tokens, logprobs = generate_tokens(params, task.prompt, max_len, temperature, rng, greedy)
    return Episode(task=task, solution=tokens, old_logprobs=logprobs, group_id=group_id)


def token_logprob_grad(
    params: WeightSource, context: Sequence[int], token: int
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Sparse form of the log-probability gradient.

    Returns:
        (log π(token|context), active feature indices, row) where the gradient w.r.t. W is
        `row` (= onehot(token) − p) on every active feature row and zero elsewhere.
    """
    if not (0 <= token < VOCAB_SIZE):
        raise ValueError(f"token id {token} is outside the vocabulary")
    active, logp = log_dist(params, context)
    row = -np.exp(logp)
    row[token] += 1.0
    return float(logp[token]), active, row


def logprob_and_grad(params: PolicyParams, context: Sequence[int], token: int) -> Tuple[float, np.ndarray]:
    """Returns log π(token|context) and its exact gradient with respect to W (dense)."""
    lp, active, row = token_logprob_grad(params, context, token)
    grad = np.zeros_like(params.W)
    grad[active] = row
    return lp, grad


def kl_terms(
    params: PolicyParams, ref: ReferenceParams, context: Sequence[int]
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Sparse form of the exact KL(π_θ ‖ π_ref) at one context.

    Returns:
        (KL, active feature indices, row) with ∂KL/∂W equal to `row` on every active row,
        where `row_c = p_c (log p_c − log q_c − KL)`.
    """
    active, logp = log_dist(params, context)
    logq = _log_softmax(_logits(ref, active))
    p = np.exp(logp)
    diff = logp - logq
    kl = float(np.dot(p, diff))
    return max(kl, 0.0), active, p * (diff - kl)


def kl_to_ref(params: PolicyParams, ref: ReferenceParams, context: Sequence[int]) -> float:
    """Exact KL(π_θ(·|context) ‖ π_ref(·|context)) over the full vocabulary."""
    kl, _, _ = kl_terms(params, ref, context)
    return kl


def kl_to_ref_and_grad(params: PolicyParams, ref: ReferenceParams, context: Sequence[int]) -> Tuple[float, np.ndarray]:
    """KL to the reference and its exact gradient with respect to W (dense)."""
    kl, active, row = kl_terms(params, ref, context)
    grad = np.zeros_like(params.W)
    grad[active] = row
    return kl, grad


def value(params: PolicyParams, context: Sequence[int]) -> float:
    """Linear value head v·features(context)."""
    if params.v is None:
        raise ValueError("policy has no value head")
    return float(params.v[features(context, params.window)].sum())


class HeadFlags(BaseModel):
    value: bool = False
    bce: bool = False
    reg: bool = False


class ParamsDocument(BaseModel):
    """
    Versioned on-disk representation of a parameter set (JSON, exact float round-trip).
    """

    format: Literal["coreason-rlv-params"] = PARAMS_FORMAT
    version: Literal[1] = PARAMS_VERSION
    feature_dim: int
    vocab_size: int
    window: int
    heads: HeadFlags
    W: List[List[float]]
    v: Optional[List[float]] = None
    u_bce: Optional[List[float]] = None
    u_reg: Optional[List[float]] = None
    reference: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def shapes_must_match_header(self) -> "ParamsDocument":
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size {self.vocab_size} does not match the vocabulary ({VOCAB_SIZE})")
        if self.feature_dim != self.window * self.vocab_size:
            raise ValueError("feature_dim must equal window * vocab_size")
        for name, matrix in (("W", self.W), ("reference", self.reference)):
            if matrix is None:
                continue
            if len(matrix) != self.feature_dim or any(len(r) != self.vocab_size for r in matrix):
                raise ValueError(f"{name} does not have shape (feature_dim, vocab_size)")
        for flag, name, head in (
            (self.heads.value, "v", self.v),
            (self.heads.bce, "u_bce", self.u_bce),
            (self.heads.reg, "u_reg", self.u_reg),
        ):
            if flag != (head is not None):
                raise ValueError(f"head flag for {name} does not match its presence")
            if head is not None and len(head) != self.feature_dim:
                raise ValueError(f"{name} must have length feature_dim")
        return self


def to_document(params: PolicyParams, ref: Optional[ReferenceParams] = None) -> ParamsDocument:
    if not params.is_finite():
        raise NumericError("refusing to serialize non-finite parameters")
    return ParamsDocument(
        feature_dim=params.feature_dim,
        vocab_size=VOCAB_SIZE,
        window=params.window,
        heads=HeadFlags(value=params.v is not None, bce=params.u_bce is not None, reg=params.u_reg is not None),
        W=params.W.tolist(),
        v=None if params.v is None else params.v.tolist(),
        u_bce=None if params.u_bce is None else params.u_bce.tolist(),
        u_reg=None if params.u_reg is None else params.u_reg.tolist(),
        reference=None if ref is None else ref.W.tolist(),
    )


def save_params(path: Union[str, Path], params: PolicyParams, ref: Optional[ReferenceParams] = None) -> None:
    """Writes the parameter document; identical parameters always produce identical bytes."""
    Path(path).write_text(to_document(params, ref).model_dump_json() + "\n", encoding="utf-8")


def load_params(path: Union[str, Path]) -> Tuple[PolicyParams, Optional[ReferenceParams]]:
    """
    Reads a parameter document.

    Raises:
        ArtifactError: If the file is missing, not a parameter document, or inconsistent.
    """
    try:
        raw = Path(path).read_text(encoding="utf-8")
        doc = ParamsDocument.model_validate_json(raw)
    except (OSError, ValidationError, UnicodeDecodeError) as e:
        logger.error(f"Failed to load parameters from {path}: {e}")
        raise ArtifactError(f"corrupt or unreadable parameters file '{path}': {e}") from e

    def _vec(x: Optional[List[float]]) -> Optional[np.ndarray]:
        return None if x is None else np.asarray(x, dtype=float)

    params = PolicyParams(
        W=np.asarray(doc.W, dtype=float),
        v=_vec(doc.v),
        u_bce=_vec(doc.u_bce),
        u_reg=_vec(doc.u_reg),
        window=doc.window,
    )
    if not params.is_finite():
        raise ArtifactError(f"parameters file '{path}' contains non-finite weights")
    ref = None if doc.reference is None else ReferenceParams(np.asarray(doc.reference, dtype=float), doc.window)
    return params, ref
