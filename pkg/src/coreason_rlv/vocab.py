# Prosperity Public License 3.0
from typing import Dict, List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

DIGIT_NAMES: Tuple[str, ...] = tuple(str(d) for d in range(10))
OPERATOR_NAMES: Tuple[str, ...] = ("+", "-", "*")
STRUCTURAL_NAMES: Tuple[str, ...] = ("SEP", "STEP", "ANSWER", "EOS")
VERIFICATION_NAMES: Tuple[str, ...] = ("VERIFY", "YES", "NO")
TOKEN_NAMES: Tuple[str, ...] = DIGIT_NAMES + OPERATOR_NAMES + STRUCTURAL_NAMES + VERIFICATION_NAMES + ("PAD",)

_INDEX: Dict[str, int] = {name: i for i, name in enumerate(TOKEN_NAMES)}

VOCAB_SIZE = len(TOKEN_NAMES)
PLUS = _INDEX["+"]
MINUS = _INDEX["-"]
TIMES = _INDEX["*"]
SEP = _INDEX["SEP"]
STEP = _INDEX["STEP"]
ANSWER = _INDEX["ANSWER"]
EOS = _INDEX["EOS"]
VERIFY = _INDEX["VERIFY"]
YES = _INDEX["YES"]
NO = _INDEX["NO"]
PAD = _INDEX["PAD"]
OPERATORS: Tuple[int, ...] = (PLUS, MINUS, TIMES)


def is_digit(token: int) -> bool:
    return 0 <= token <= 9


class Vocab(BaseModel):
    """
    The token vocabulary shared by reasoning and verification.

    Token ids are dense integers `0..|V|-1`: digits first (id == digit value), then the
    modular operators, the structural tokens, the verification tokens and PAD.

    Attributes:
        modulus: The modulus M under which operators are interpreted (2..10, so every
            residue is a single digit token).
    """

    model_config = ConfigDict(frozen=True)

    modulus: int = 10

    @field_validator("modulus")
    @classmethod
    def modulus_must_fit_digits(cls, v: int) -> int:
        if not (2 <= v <= 10):
            raise ValueError("modulus must be between 2 and 10")
        return v

    @property
    def tokens(self) -> List[int]:
        return list(range(VOCAB_SIZE))

    @property
    def size(self) -> int:
        return VOCAB_SIZE

    def name(self, token: int) -> str:
        if not (0 <= token < VOCAB_SIZE):
            raise ValueError(f"token id {token} is outside the vocabulary")
        return TOKEN_NAMES[token]

    def token(self, name: str) -> int:
        try:
            return _INDEX[name]
        except KeyError:
            raise ValueError(f"unknown token name '{name}'") from None

    def render(self, tokens: Sequence[int]) -> str:
        """Serializes tokens as space-separated names (the log and wire format)."""
        return " ".join(self.name(t) for t in tokens)

    def parse(self, text: str) -> List[int]:
        """Inverse of `render`. Raises ValueError on unknown names."""
        return [self.token(name) for name in text.split()]


DEFAULT_VOCAB = Vocab()
