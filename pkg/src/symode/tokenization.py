"""Token vocabulary and bidirectional encoding of floats, systems and trajectories.

Floats become three tokens (sign, mantissa, exponent): the value is rounded
to ``mantissa_digits`` significant digits, trailing zeros are stripped from
the significand and the exponent adjusted so that
``value = mantissa * 10^exponent``; the mantissa token is left-padded with
zeros (``3.14 -> [+, N0314, E-2]``, ``0.1 -> [+, N0001, E-1]``).  Zero is
canonically ``[+, N0000, E+0]``.  The decoder is permissive: any
(mantissa, exponent) pair decodes, canonical or not.

ODE systems serialize as prefix token streams with equations separated by
``|``.  The ``-`` token is both the negative float sign and unary negation;
a sign token followed by a mantissa token is a number, anything else after
``-`` is negation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .expressions import (
    BINARY_OPS,
    Expression,
    OdeSystem,
    const,
    neg,
    to_prefix,
    var,
)

__all__ = [
    "ROLE_ODE",
    "ROLE_DERIVATIVE",
    "ROLE_ENCODER",
    "EncodingError",
    "DecodingError",
    "TokenSequence",
    "TrajectoryEncoding",
    "Vocabulary",
]

ROLE_ODE = "ode-target"
ROLE_DERIVATIVE = "derivative-target"
ROLE_ENCODER = "encoder-input"

# Per-role sequence caps. The spec-level default of 512 applies to the ODE
# decoder; derivative targets are ~3*d*N tokens and need more room.
DEFAULT_MAX_LENGTHS = {ROLE_ODE: 512, ROLE_DERIVATIVE: 2048, ROLE_ENCODER: 512}

# unary operators that have their own token; "neg" is spelled "-"
_UNARY_TOKENS = ("sin", "cos", "exp", "log", "sqrt", "inv", "pow2", "pow3")


class EncodingError(ValueError):
    pass


class DecodingError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class TokenSequence:
    """Ordered token ids plus the role they were encoded for.

    Decodable sequences (ode/derivative targets) start with BOS and end
    with EOS.
    """

    ids: tuple[int, ...]
    role: str

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TrajectoryEncoding:
    """Encoder input: one float triplet per scalar, ``(steps, 1+d, 3)`` ids."""

    ids: np.ndarray
    mask: np.ndarray  # (steps,) bool, True where the step is valid
    dimension: int

    @property
    def n_steps(self) -> int:
        return int(self.ids.shape[0])


class Vocabulary:
    """Fixed token inventory with stable ids.

    Construction order (and therefore ids) is deterministic: control tokens,
    separator, signs, operators, variables, mantissas, exponents.
    """

    def __init__(self, d_max: int = 4, mantissa_digits: int = 4, exponent_range: int = 100):
        if d_max < 1:
            raise ValueError("d_max must be >= 1")
        if mantissa_digits < 1:
            raise ValueError("mantissa_digits must be >= 1")
        if exponent_range < 1:
            raise ValueError("exponent_range must be >= 1")
        self.d_max = int(d_max)
        self.mantissa_digits = int(mantissa_digits)
        self.exponent_range = int(exponent_range)

        tokens = ["PAD", "BOS", "EOS", "|", "+", "-"]
        tokens += list(BINARY_OPS) + list(_UNARY_TOKENS)
        tokens += [f"x_{k}" for k in range(self.d_max)]
        tokens += [
            f"N{m:0{self.mantissa_digits}d}" for m in range(10**self.mantissa_digits)
        ]
        tokens += [f"E{e:+d}" for e in range(-self.exponent_range, self.exponent_range + 1)]
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._id = {tok: i for i, tok in enumerate(tokens)}
        if len(self._id) != len(tokens):
            raise AssertionError("duplicate token in vocabulary construction")

        self.pad_id = self._id["PAD"]
        self.bos_id = self._id["BOS"]
        self.eos_id = self._id["EOS"]
        self.sep_id = self._id["|"]
        self._mantissa_base = self._id[f"N{0:0{self.mantissa_digits}d}"]
        self._exponent_base = self._id[f"E{-self.exponent_range:+d}"]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        try:
            return self._id[token]
        except KeyError:
            raise DecodingError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise DecodingError(f"token id {token_id} out of range")
        return self.tokens[token_id]

    # -- persistence --------------------------------------------------------

    def to_text(self) -> str:
        """One token per line; the line number is the token id."""
        return "\n".join(self.tokens) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        tokens = text.splitlines()
        d_max = sum(1 for t in tokens if t.startswith("x_"))
        mantissas = [t for t in tokens if t.startswith("N") and t[1:].isdigit()]
        exponents = [t for t in tokens if t.startswith("E") and t[1] in "+-"]
        if not (d_max and mantissas and exponents):
            raise DecodingError("text does not look like a vocabulary dump")
        vocab = cls(
            d_max=d_max,
            mantissa_digits=len(mantissas[0]) - 1,
            exponent_range=(len(exponents) - 1) // 2,
        )
        if list(vocab.tokens) != tokens:
            raise DecodingError("vocabulary text does not match canonical construction")
        return vocab

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as fh:
            return cls.from_text(fh.read())

    # -- floats -------------------------------------------------------------

    def encode_float(self, x: float) -> tuple[str, str, str]:
        """Encode a finite real as (sign, mantissa, exponent) tokens."""
        x = float(x)
        if not np.isfinite(x):
            raise EncodingError(f"cannot encode non-finite value {x}")
        digits = self.mantissa_digits
        if x == 0.0:
            return ("+", f"N{0:0{digits}d}", "E+0")
        sign = "+" if x > 0 else "-"
        # correctly-rounded decimal formatting avoids log10 edge cases
        mant_text, exp_text = f"{abs(x):.{digits - 1}e}".split("e")
        m = int(mant_text.replace(".", ""))
        e = int(exp_text) - (digits - 1)
        while m % 10 == 0:
            m //= 10
            e += 1
        if not -self.exponent_range <= e <= self.exponent_range:
            raise EncodingError(f"magnitude {abs(x)} outside representable exponent range")
        return (sign, f"N{m:0{digits}d}", f"E{e:+d}")

    def decode_float(self, tokens) -> float:
        """Decode a (sign, mantissa, exponent) token triple, canonical or not."""
        if len(tokens) != 3:
            raise DecodingError(f"expected 3 float tokens, got {len(tokens)}")
        sign, mant, expo = tokens
        if sign not in ("+", "-"):
            raise DecodingError(f"expected sign token, got {sign!r}")
        if not (mant.startswith("N") and mant[1:].isdigit()):
            raise DecodingError(f"expected mantissa token, got {mant!r}")
        if not (expo.startswith("E") and len(expo) > 2 and expo[1] in "+-" and expo[2:].isdigit()):
            raise DecodingError(f"expected exponent token, got {expo!r}")
        return float(f"{sign}{int(mant[1:])}e{int(expo[1:])}")

    def quantize(self, x: float) -> float:
        """Round ``x`` to the vocabulary's float precision (encode + decode)."""
        return self.decode_float(self.encode_float(x))

    def _is_mantissa_id(self, token_id: int) -> bool:
        return 0 <= token_id - self._mantissa_base < 10**self.mantissa_digits

    # -- systems ------------------------------------------------------------

    def system_tokens(self, system: OdeSystem) -> list[str]:
        """Payload token list for a system (no BOS/EOS), Eq-style prefix."""
        if system.dimension > self.d_max:
            raise EncodingError(
                f"system dimension {system.dimension} exceeds vocabulary d_max {self.d_max}"
            )
        out: list[str] = []
        for i, eq in enumerate(system.equations):
            if i:
                out.append("|")
            for sym in to_prefix(eq):
                if isinstance(sym, float):
                    out.extend(self.encode_float(sym))
                elif sym == "neg":
                    out.append("-")
                else:
                    out.append(sym)
        return out

    def encode_system(self, system: OdeSystem, max_length: int | None = None) -> TokenSequence:
        tokens = self.system_tokens(system)
        max_length = DEFAULT_MAX_LENGTHS[ROLE_ODE] if max_length is None else max_length
        ids = (self.bos_id, *(self.id_of(t) for t in tokens), self.eos_id)
        if len(ids) > max_length:
            raise EncodingError(f"ode-target length {len(ids)} exceeds max {max_length}")
        return TokenSequence(ids, ROLE_ODE)

    def tokens_of(self, seq, strip_control: bool = True) -> list[str]:
        """Map a TokenSequence (or raw ids) back to token strings."""
        ids = seq.ids if isinstance(seq, TokenSequence) else tuple(seq)
        tokens = [self.token_of(i) for i in ids]
        if strip_control:
            tokens = [t for t in tokens if t not in ("PAD", "BOS", "EOS")]
        return tokens

    def decode_system(self, tokens) -> OdeSystem:
        """Parse a token stream back to a system.

        Accepts a TokenSequence, raw ids or token strings; control tokens are
        stripped.  Raises :class:`DecodingError` with a position on malformed
        input.
        """
        if isinstance(tokens, TokenSequence):
            tokens = self.tokens_of(tokens)
        elif len(tokens) and isinstance(tokens[0], (int, np.integer)):
            tokens = self.tokens_of(tokens)
        else:
            tokens = [t for t in tokens if t not in ("PAD", "BOS", "EOS")]

        equations: list[Expression] = []
        pos = 0
        start = 0
        while True:
            if pos >= len(tokens) or tokens[pos] == "|":
                raise DecodingError(
                    "empty equation after separator" if equations else "empty equation",
                    pos,
                )
            expr, pos = self._parse_expr(tokens, pos)
            equations.append(expr)
            if pos == len(tokens):
                break
            if tokens[pos] != "|":
                raise DecodingError(
                    f"unconsumed input at position {pos} (equation starting at {start})", pos
                )
            pos += 1
            start = pos
        if len(equations) > self.d_max:
            raise DecodingError(f"system dimension {len(equations)} exceeds d_max {self.d_max}")
        try:
            return OdeSystem(tuple(equations))
        except ValueError as err:
            raise DecodingError(str(err)) from None

    def _parse_expr(self, tokens, pos):
        if pos >= len(tokens):
            raise DecodingError(f"incomplete expression at position {pos}", pos)
        tok = tokens[pos]
        if tok in ("+", "-"):
            nxt = tokens[pos + 1] if pos + 1 < len(tokens) else None
            if nxt is not None and nxt.startswith("N") and nxt[1:].isdigit():
                if pos + 2 >= len(tokens):
                    raise DecodingError(f"incomplete float at position {pos}", pos)
                value = self.decode_float(tokens[pos : pos + 3])
                return const(value), pos + 3
            if tok == "-":
                child, pos = self._parse_expr(tokens, pos + 1)
                return neg(child), pos
            raise DecodingError(f"'+' not followed by a mantissa at position {pos}", pos)
        if tok in BINARY_OPS:
            a, pos = self._parse_expr(tokens, pos + 1)
            b, pos = self._parse_expr(tokens, pos)
            return Expression(tok, (a, b)), pos
        if tok in _UNARY_TOKENS:
            a, pos = self._parse_expr(tokens, pos + 1)
            return Expression(tok, (a,)), pos
        if tok.startswith("x_") and tok[2:].isdigit():
            return var(int(tok[2:])), pos + 1
        raise DecodingError(f"unexpected token {tok!r} at position {pos}", pos)

    # -- derivative sequences ------------------------------------------------

    def encode_derivative_sequence(self, derivatives, max_length: int | None = None) -> TokenSequence:
        """Encode ``[f(x(t_i))]`` as float triplets, steps separated by ``|``."""
        derivatives = np.asarray(derivatives, dtype=np.float64)
        if derivatives.size and not np.all(np.isfinite(derivatives)):
            raise EncodingError("derivative sequence contains non-finite values")
        if derivatives.size and derivatives.ndim != 2:
            raise EncodingError(f"expected (steps, d) derivatives, got shape {derivatives.shape}")
        ids: list[int] = [self.bos_id]
        for i, row in enumerate(derivatives if derivatives.size else []):
            if i:
                ids.append(self.sep_id)
            for value in row:
                ids.extend(self.id_of(t) for t in self.encode_float(value))
        ids.append(self.eos_id)
        max_length = DEFAULT_MAX_LENGTHS[ROLE_DERIVATIVE] if max_length is None else max_length
        if len(ids) > max_length:
            raise EncodingError(f"derivative-target length {len(ids)} exceeds max {max_length}")
        return TokenSequence(tuple(ids), ROLE_DERIVATIVE)

    def decode_derivative_sequence(self, tokens, dimension: int) -> np.ndarray:
        """Inverse of :meth:`encode_derivative_sequence` for a known dimension."""
        if isinstance(tokens, TokenSequence):
            tokens = self.tokens_of(tokens)
        steps: list[list[float]] = []
        pos = 0
        while pos < len(tokens):
            row = []
            for _ in range(dimension):
                if pos + 3 > len(tokens):
                    raise DecodingError(f"incomplete float at position {pos}", pos)
                row.append(self.decode_float(tokens[pos : pos + 3]))
                pos += 3
            steps.append(row)
            if pos < len(tokens):
                if tokens[pos] != "|":
                    raise DecodingError(f"expected '|' at position {pos}", pos)
                pos += 1
        return np.array(steps, dtype=np.float64).reshape(len(steps), dimension)

    # -- trajectories ---------------------------------------------------------

    def encode_trajectory(self, times, states, max_steps: int | None = None) -> TrajectoryEncoding:
        """Encode a trajectory as a ``(steps, 1+d, 3)`` token-id grid.

        Each step contributes ``1+d`` scalars (the time stamp then the state
        components), each mapped to its float triplet.
        """
        times = np.asarray(times, dtype=np.float64)
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        n, d = states.shape
        if times.shape != (n,):
            raise EncodingError(f"times shape {times.shape} does not match {n} states")
        if not 1 <= d <= self.d_max:
            raise EncodingError(f"dimension {d} outside 1..{self.d_max}")
        max_steps = DEFAULT_MAX_LENGTHS[ROLE_ENCODER] if max_steps is None else max_steps
        if n > max_steps:
            raise EncodingError(f"trajectory has {n} steps, max {max_steps}")
        scalars = np.concatenate([times[:, None], states], axis=1)
        bad = ~np.isfinite(scalars).all(axis=1)
        if bad.any():
            raise EncodingError(f"non-finite state at step {int(np.argmax(bad))}")
        ids = np.empty((n, 1 + d, 3), dtype=np.int64)
        for i in range(n):
            for j in range(1 + d):
                s, m, e = self.encode_float(scalars[i, j])
                ids[i, j] = (self._id[s], self._id[m], self._id[e])
        return TrajectoryEncoding(ids=ids, mask=np.ones(n, dtype=bool), dimension=d)
