# Prosperity Public License 3.0
from enum import Enum
from math import isfinite
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from coreason_rlv.vocab import ANSWER, NO, SEP, VOCAB_SIZE, YES


class DomainTag(str, Enum):
    """
    Operation set of a synthetic task.

    Attributes:
        ADD_ONLY: Only modular addition (the in-domain training distribution).
        MIXED: Addition, subtraction and multiplication (the out-of-domain analog).
    """

    ADD_ONLY = "ADD_ONLY"
    MIXED = "MIXED"


class Method(str, Enum):
    """Policy-gradient method used for the reasoning objective."""

    GRPO = "GRPO"
    RLOO = "RLOO"
    VINEPPO = "VINEPPO"
    PPO = "PPO"


class VerifierMode(str, Enum):
    """
    How verification is trained alongside reasoning.

    Attributes:
        GENERATIVE: YES/NO next-token SFT loss on the shared policy weights.
        BCE_HEAD: Separate linear head trained with binary cross-entropy.
        REG_HEAD: Separate linear head regressed onto the binary reward.
        NONE: No verification training.
    """

    GENERATIVE = "GENERATIVE"
    BCE_HEAD = "BCE_HEAD"
    REG_HEAD = "REG_HEAD"
    NONE = "NONE"


class ScorerVariant(str, Enum):
    """Ways of turning a parameter set into a solution score."""

    GENERATIVE = "GENERATIVE"
    JUDGE = "JUDGE"
    BCE_HEAD = "BCE_HEAD"
    REG_HEAD = "REG_HEAD"
    PPO_VALUE_MEAN = "PPO_VALUE_MEAN"
    PPO_VALUE_LAST = "PPO_VALUE_LAST"


class VoteStrategy(str, Enum):
    """Answer selection strategies over a pool of sampled solutions."""

    MAJORITY = "MAJORITY"
    BEST_OF_N = "BEST_OF_N"
    WEIGHTED = "WEIGHTED"
    COVERAGE = "COVERAGE"
    OPTIMAL = "OPTIMAL"


class TaskInstance(BaseModel):
    """
    A synthetic modular-arithmetic problem.

    Attributes:
        prompt: Token ids `d0 op1 d1 ... op_k d_k SEP`.
        ground_truth: Left-to-right evaluation of the chain modulo `modulus`.
        difficulty: Number of chained operators.
        domain_tag: Operation set the task was drawn from.
        modulus: The modulus M the operators are interpreted under.
    """

    model_config = ConfigDict(frozen=True)

    prompt: List[int]
    ground_truth: int
    difficulty: int
    domain_tag: DomainTag
    modulus: int = 10

    @field_validator("prompt")
    @classmethod
    def prompt_must_end_with_sep(cls, v: List[int]) -> List[int]:
        if not v or v[-1] != SEP:
            raise ValueError("prompt must end with SEP")
        return v

    @field_validator("difficulty")
    @classmethod
    def difficulty_must_be_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("difficulty must be at least 1")
        return v

    @model_validator(mode="after")
    def ground_truth_must_be_residue(self) -> "TaskInstance":
        if not (0 <= self.ground_truth < self.modulus):
            raise ValueError("ground_truth must lie in [0, modulus)")
        return self


class Episode(BaseModel):
    """
    One sampled solution together with the behaviour-policy log-probabilities.

    Attributes:
        task: The problem the solution answers.
        solution: Sampled token ids (ends with EOS unless truncated at max length).
        old_logprobs: Per-token log-probability under the (un-tempered) behaviour policy.
        reward: Binary correctness reward; None until scored.
        group_id: Links the G (or K) solutions sampled for the same prompt.
    """

    model_config = ConfigDict(frozen=True)

    task: TaskInstance
    solution: List[int]
    old_logprobs: List[float]
    reward: Optional[int] = None
    group_id: int = 0

    @field_validator("reward")
    @classmethod
    def reward_must_be_binary(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v not in (0, 1):
            raise ValueError("reward must be 0 or 1")
        return v

    @model_validator(mode="after")
    def logprobs_must_align(self) -> "Episode":
        if len(self.old_logprobs) != len(self.solution):
            raise ValueError("old_logprobs must have the same length as solution")
        return self


class VerificationExample(BaseModel):
    """
    A supervised verification pair: `x ⊕ y ⊕ [VERIFY]` and the YES/NO target token.
    """

    model_config = ConfigDict(frozen=True)

    input: List[int]
    label: int

    @field_validator("label")
    @classmethod
    def label_must_be_yes_or_no(cls, v: int) -> int:
        if v not in (YES, NO):
            raise ValueError("label must be the YES or NO token")
        return v


class ScoredSolution(BaseModel):
    """
    A solution with its extracted answer and verifier score.

    Attributes:
        solution: Token ids of the solution.
        answer: Extracted final answer, None if the solution is malformed.
        score: Verifier score (finite; in [0, 1] for bounded scorers).
        reward: Correctness, when known (evaluation bookkeeping only).
    """

    model_config = ConfigDict(frozen=True)

    solution: List[int]
    answer: Optional[int]
    score: float
    reward: Optional[int] = None

    @field_validator("score")
    @classmethod
    def score_must_be_finite(cls, v: float) -> float:
        if not isfinite(v):
            raise ValueError("score must be finite")
        return v


class VoteOutcome(BaseModel):
    """
    Result of a voting strategy.

    Attributes:
        chosen_answer: The selected answer; None is the NO_ANSWER sentinel.
        per_answer_mass: Count (majority) or cumulative score (weighted) per answer.
        strategy: The strategy that produced the outcome.
    """

    model_config = ConfigDict(frozen=True)

    chosen_answer: Optional[int]
    per_answer_mass: Dict[int, float]
    strategy: VoteStrategy

    @property
    def no_answer(self) -> bool:
        return self.chosen_answer is None


class BudgetSpec(BaseModel):
    """
    Budget forcing parameters.

    Attributes:
        l_budget: Total token budget k of the final response.
        b_buffer: Buffer b withheld from the first generation phase.
        conclusion_tokens: Tokens C spliced after the truncated first phase.
    """

    model_config = ConfigDict(frozen=True)

    l_budget: int
    b_buffer: int
    conclusion_tokens: List[int] = Field(default_factory=lambda: [SEP, ANSWER])

    @model_validator(mode="after")
    def buffer_must_fit_budget(self) -> "BudgetSpec":
        if not (0 < self.b_buffer < self.l_budget):
            raise ValueError("b_buffer must satisfy 0 < b_buffer < l_budget")
        for t in self.conclusion_tokens:
            if not (0 <= t < VOCAB_SIZE):
                raise ValueError("conclusion_tokens must be vocabulary ids")
        return self


class BudgetForceResult(BaseModel):
    """
    Output of budget forcing.

    Attributes:
        tokens: The final response R.
        truncated_length: |T(G0)|, i.e. where the conclusion tokens were spliced.
        exhausted: True when |T(G0)| + |C| >= budget and no continuation was generated.
    """

    model_config = ConfigDict(frozen=True)

    tokens: List[int]
    truncated_length: int
    exhausted: bool = False


class AdaptiveStatus(str, Enum):
    MET = "MET"
    THRESHOLD_UNMET = "THRESHOLD_UNMET"


class AdaptiveResult(BaseModel):
    """Outcome of confidence-thresholded length selection."""

    model_config = ConfigDict(frozen=True)

    answer: Optional[int]
    length_used: int
    confidence: float
    status: AdaptiveStatus
    rungs_tried: int


class BackendKind(str, Enum):
    BUILTIN = "BUILTIN"
    REMOTE = "REMOTE"


class BackendSpec(BaseModel):
    """
    Generation backend selection.

    Attributes:
        kind: BUILTIN (local policy) or REMOTE (completion endpoint).
        endpoint: Completion URL, required for REMOTE.
        timeout: Per-request timeout in seconds.
        max_retries: Retries after the first attempt on transient failures.
        backoff_seconds: Base delay of the exponential backoff.
        model: Model name sent with every request.
    """

    model_config = ConfigDict(frozen=True)

    kind: BackendKind = BackendKind.BUILTIN
    endpoint: Optional[str] = None
    timeout: float = 10.0
    max_retries: int = 3
    backoff_seconds: float = 0.5
    model: str = "coreason-rlv"

    @model_validator(mode="after")
    def remote_needs_endpoint(self) -> "BackendSpec":
        if self.kind == BackendKind.REMOTE and not self.endpoint:
            raise ValueError("REMOTE backend requires an endpoint")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        return self


class CompletionRequest(BaseModel):
    """Remote completion request body."""

    model: str
    prompt: str
    max_tokens: int = Field(ge=0)
    temperature: float = Field(gt=0.0)


class CompletionResponse(BaseModel):
    """Remote completion response body."""

    text: str


class CompletionResult(BaseModel):
    """A completion together with the number of retries it took."""

    model_config = ConfigDict(frozen=True)

    text: str
    retries: int = 0


class RunConfig(BaseModel):
    """
    Complete description of one training run.

    Attributes:
        method: Policy-gradient method (GRPO, RLOO, VINEPPO, PPO).
        seed: Root seed of every random stream of the run.
        total_iterations: Number of unified training steps.
        batch: Prompts per iteration.
        difficulty: Chain length of training tasks.
        domain: Operation set of training tasks.
        modulus: Modulus M of the arithmetic.
        window: Trailing token window of the policy features.
        max_len: Maximum solution length.
        temperature: Sampling temperature of training rollouts.
        workers: Rollout worker threads (results do not depend on it).
        group_size: Solutions per prompt (G for GRPO, K for leave-one-out).
        mc_samples: Monte-Carlo completions per state for VinePPO.
        ppo_epochs: Inner optimisation passes per batch.
        beta: KL coefficient.
        eps_clip: Clip width of the surrogate objective.
        gamma: Discount of GAE.
        lambda_gae: GAE lambda.
        lambda_max: Ceiling of the verification coefficient.
        verifier_mode: How verification is trained.
        lr_max: Ceiling of the SGD learning rate of the policy weights.
        head_lr: Ceiling of the SGD learning rate of the value, BCE and regression heads.
        ramp_fraction: Fraction of the run at which both ramps reach their ceiling.
        probe_tasks: Held-out tasks tracked every iteration (0 disables the probe).
        probe_samples: Samples per held-out task.
    """

    model_config = ConfigDict(frozen=True)

    method: Method
    seed: int = 0
    total_iterations: int = Field(default=200, ge=0)
    batch: int = Field(default=8, ge=1)
    difficulty: int = Field(default=2, ge=1)
    domain: DomainTag = DomainTag.ADD_ONLY
    modulus: int = Field(default=10, ge=2, le=10)
    window: int = Field(default=3, ge=1)
    max_len: int = Field(default=6, ge=1)
    temperature: float = Field(default=1.0, gt=0.0)
    workers: int = Field(default=1, ge=1)
    group_size: int = Field(default=8, ge=2)
    mc_samples: int = Field(default=4, ge=1)
    ppo_epochs: int = Field(default=2, ge=1)
    beta: float = Field(default=0.01, ge=0.0)
    eps_clip: float = 0.2
    gamma: float = Field(default=1.0, ge=0.0, le=1.0)
    lambda_gae: float = Field(default=0.95, ge=0.0, le=1.0)
    lambda_max: float = Field(default=1.0, ge=0.0)
    verifier_mode: VerifierMode = VerifierMode.GENERATIVE
    lr_max: float = Field(default=20.0, ge=0.0)
    head_lr: float = Field(default=0.5, ge=0.0)
    ramp_fraction: float = 0.75
    probe_tasks: int = Field(default=16, ge=0)
    probe_samples: int = Field(default=4, ge=1)

    @field_validator("eps_clip")
    @classmethod
    def eps_clip_must_be_open_unit(cls, v: float) -> float:
        if not (0.0 < v < 1.0):
            raise ValueError("eps_clip must be between 0.0 and 1.0 (exclusive)")
        return v

    @field_validator("ramp_fraction")
    @classmethod
    def ramp_fraction_must_be_valid(cls, v: float) -> float:
        if not (0.0 < v <= 1.0):
            raise ValueError("ramp_fraction must be in (0.0, 1.0]")
        return v


class StepMetrics(BaseModel):
    """
    Metrics of one training iteration (one row of `metrics.csv`).

    NaN marks values that are undefined for the iteration (e.g. a skipped
    verification batch or a probe with an empty class).
    """

    model_config = ConfigDict(frozen=True)

    iteration: int
    lr: float
    lam: float
    train_pass_at_1: float
    heldout_pass_at_1: float
    verifier_accuracy: float
    mean_kl: float
    rl_objective: float
    verify_loss: float
    head_loss: float
    value_loss: float
    verify_skipped: bool
    skip_count: int
    zero_variance_groups: int


class EpisodeRecord(BaseModel):
    """One line of `episodes.jsonl`."""

    model_config = ConfigDict(frozen=True)

    run_id: str
    iteration: int
    group_id: int
    prompt: str
    solution: str
    reward: int
    old_logprobs: List[float]
    verifier_score: float
    modulus: int = 10
    domain: DomainTag = DomainTag.ADD_ONLY


class EvalReport(BaseModel):
    """One row of the `eval` table."""

    model_config = ConfigDict(frozen=True)

    label: str
    difficulty: int
    domain: DomainTag
    tasks: int
    samples: int
    pass_at_1: float
    verifier_accuracy: float
    majority: float
    weighted: float
    best_of_n: float
    coverage: float


class SweepRow(BaseModel):
    """Accuracy of one strategy at one number of samples."""

    model_config = ConfigDict(frozen=True)

    strategy: VoteStrategy
    n: int
    accuracy: float
    stderr: float


class BudgetRow(BaseModel):
    """One row of the budget demo: a fixed budget or the adaptive ladder."""

    model_config = ConfigDict(frozen=True)

    mode: str
    budget: int
    pass_at_1: float
    accuracy: float
    mean_length: float


class ProbeRow(BaseModel):
    """(reasoner accuracy, verifier accuracy) pair of one scoring variant."""

    model_config = ConfigDict(frozen=True)

    source: str
    variant: ScorerVariant
    reasoner_accuracy: float
    verifier_accuracy: float
