"""
Exact discrete information-theory oracle.

Every measure is computed in bits by enumerating a dense joint probability
table, each from its own defining sum (conditional entropy from p(x|y),
mutual information from p(x,y)/(p(x)p(y)), ...), so that the identity checks
compare independently computed quantities.
"""
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, rel_entr

from src.core.bitplane import natural_mask
from src.core.errors import DomainError, ShapeError

MAX_VARIABLES = 4
MAX_ALPHABET = 256
MAX_CELLS = 1 << 22
MASS_TOLERANCE = 1e-12
LN2 = math.log(2.0)

Group = Union[str, Sequence[str]]


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution over named finite variables (one axis per variable)."""

    names: Tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        names = tuple(self.names)
        probs = np.array(self.probs, dtype=np.float64)
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate variable names {names}")
        if not 1 <= len(names) <= MAX_VARIABLES:
            raise DomainError(f"a table holds 1..{MAX_VARIABLES} variables, got {len(names)}")
        if probs.ndim != len(names):
            raise ShapeError(f"table of rank {probs.ndim} for {len(names)} variables")
        if any(size < 1 or size > MAX_ALPHABET for size in probs.shape):
            raise DomainError(f"alphabet sizes must be in [1, {MAX_ALPHABET}], got {probs.shape}")
        if probs.size > MAX_CELLS:
            raise DomainError(f"table has {probs.size} cells, limit is {MAX_CELLS}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("probabilities must be finite and non-negative")
        mass = float(np.sum(probs))
        if abs(mass - 1.0) > MASS_TOLERANCE:
            raise DomainError(f"total mass {mass!r} is not within {MASS_TOLERANCE} of 1")
        probs.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "probs", probs)

    @property
    def sizes(self) -> Dict[str, int]:
        return dict(zip(self.names, self.probs.shape))

    def _axes(self, group: Group) -> Tuple[int, ...]:
        members = (group,) if isinstance(group, str) else tuple(group)
        if not members:
            raise DomainError("empty variable group")
        axes = []
        for name in members:
            if name not in self.names:
                raise DomainError(f"unknown variable '{name}' (table has {', '.join(self.names)})")
            axes.append(self.names.index(name))
        return tuple(axes)

    def grouped(self, *groups: Group) -> np.ndarray:
        """
        Marginal over the given variable groups, one flattened axis per group.

        Args:
            *groups: Variable names or tuples of names

        Returns:
            np.ndarray: Array of rank ``len(groups)``
        """
        axes_per_group = [self._axes(group) for group in groups]
        order = [axis for axes in axes_per_group for axis in axes]
        if len(set(order)) != len(order):
            raise DomainError("a variable appears in more than one group")
        dropped = tuple(axis for axis in range(self.probs.ndim) if axis not in order)
        marginal = self.probs.sum(axis=dropped) if dropped else self.probs
        kept = sorted(order)
        marginal = np.transpose(marginal, [kept.index(axis) for axis in order])
        shape = [int(np.prod([self.probs.shape[a] for a in axes])) for axes in axes_per_group]
        return marginal.reshape(shape)

    # Measures (bits)

    def entropy(self, *groups: Group) -> float:
        """Joint entropy H(A, B, ...) of the listed groups."""
        p = self.grouped(*groups).ravel()
        return float(np.sum(entr(p))) / LN2

    def conditional_entropy(self, target: Group, given: Group) -> float:
        """H(A | B) = -sum p(a, b) log p(a | b)."""
        pab = self.grouped(target, given)
        pb = np.broadcast_to(pab.sum(axis=0, keepdims=True), pab.shape)
        return float(-np.sum(rel_entr(pab, pb))) / LN2

    def mutual_information(self, a: Group, b: Group, given: Optional[Group] = None) -> float:
        """I(A; B), or I(A; B | C) when ``given`` is set."""
        if given is None:
            pab = self.grouped(a, b)
            product = np.outer(pab.sum(axis=1), pab.sum(axis=0))
            return float(np.sum(rel_entr(pab, product))) / LN2
        pabc = self.grouped(a, b, given)
        pc = pabc.sum(axis=(0, 1), keepdims=True)
        pac = pabc.sum(axis=1, keepdims=True)
        pbc = pabc.sum(axis=0, keepdims=True)
        reference = np.divide(pac * pbc, pc, out=np.zeros_like(pabc), where=pc > 0)
        return float(np.sum(rel_entr(pabc, reference))) / LN2

    def triple_mutual_information(self, a: Group, b: Group, c: Group) -> float:
        """I(A; B; C) = I(A; B) - I(A; B | C); may be negative."""
        return self.mutual_information(a, b) - self.mutual_information(a, b, given=c)


MEASURES: Dict[str, Tuple[int, Callable]] = {
    "H": (1, lambda t, a: t.entropy(a)),
    "H_joint": (2, lambda t, a, b: t.entropy(a, b)),
    "H_cond": (2, lambda t, a, b: t.conditional_entropy(a, b)),
    "I": (2, lambda t, a, b: t.mutual_information(a, b)),
    "I_cond": (3, lambda t, a, b, c: t.mutual_information(a, b, given=c)),
    "I_triple": (3, lambda t, a, b, c: t.triple_mutual_information(a, b, c)),
}

_EXPRESSION = re.compile(r"^\s*([HI])\s*\(\s*(.+?)\s*\)\s*$")


def measure(table: JointTable, query: str, *args: Group) -> float:
    """
    Evaluate a named measure on ``table``.

    Args:
        table (JointTable): Distribution
        query (str): One of H, H_joint, H_cond, I, I_cond, I_triple
        *args: Variable names (or tuples of names for joint groups)

    Returns:
        float: Value in bits
    """
    if query not in MEASURES:
        raise DomainError(f"unknown measure id '{query}' (expected one of {', '.join(MEASURES)})")
    arity, function = MEASURES[query]
    if len(args) != arity:
        raise DomainError(f"measure {query} takes {arity} arguments, got {len(args)}")
    return function(table, *args)


def evaluate(table: JointTable, expression: str) -> float:
    """
    Evaluate a textual measure such as ``H(X,Y)``, ``H(F|X,Y)``, ``I(X;Y|Z)`` or ``I(X;Y;Z)``.

    Commas join variables into one group.
    """
    match = _EXPRESSION.match(expression)
    if not match:
        raise DomainError(f"cannot parse measure expression '{expression}'")
    letter, body = match.groups()

    def group(text: str) -> Tuple[str, ...]:
        return tuple(part.strip() for part in text.split(",") if part.strip())

    condition = None
    if "|" in body:
        body, condition = body.split("|", 1)
    parts = [group(part) for part in body.split(";")]
    if letter == "H":
        if len(parts) != 1:
            raise DomainError(f"entropy takes one group: '{expression}'")
        if condition is None:
            return table.entropy(*parts[0])
        return table.conditional_entropy(parts[0], group(condition))
    if len(parts) == 2:
        return table.mutual_information(parts[0], parts[1], given=group(condition) if condition else None)
    if len(parts) == 3 and condition is None:
        return table.triple_mutual_information(*parts)
    raise DomainError(f"unsupported measure expression '{expression}'")


@dataclass
class IdentityResidual:
    """Absolute residual of one information identity."""

    name: str
    residual: float

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "residual": self.residual}


@dataclass
class IdentityReport:
    """Every identity checked on one table."""

    residuals: List[IdentityResidual] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.residuals), default=0.0)

    def add(self, name: str, residual: float) -> None:
        self.residuals.append(IdentityResidual(name, abs(float(residual))))


def verify_identities(table: JointTable) -> IdentityReport:
    """
    Check the MI/entropy identities for every variable pair and triple of ``table``.

    Pairs (X, Y): I = H(X) - H(X|Y) = H(Y) - H(Y|X) = H(X) + H(Y) - H(X,Y) and the
    chain rule H(X,Y) = H(X) + H(Y|X). Ordered triples (X, Y, F):
    H(Y|X) = H(Y|X,F) + I(F;Y|X) and I(X;F) = I(X;F|Y) + I(X;Y;F).

    Args:
        table (JointTable): Distribution with at least two variables

    Returns:
        IdentityReport: One residual per identity instance
    """
    if len(table.names) < 2:
        raise DomainError("verify_identities needs at least two variables")
    report = IdentityReport()
    for x, y in itertools.combinations(table.names, 2):
        mi = table.mutual_information(x, y)
        hx, hy, hxy = table.entropy(x), table.entropy(y), table.entropy(x, y)
        report.add(f"mi.conditional_x[{x};{y}]", mi - (hx - table.conditional_entropy(x, y)))
        report.add(f"mi.conditional_y[{x};{y}]", mi - (hy - table.conditional_entropy(y, x)))
        report.add(f"mi.joint[{x};{y}]", mi - (hx + hy - hxy))
        report.add(f"chain_rule[{x};{y}]", hxy - (hx + table.conditional_entropy(y, x)))
    for x, y, f in itertools.permutations(table.names, 3):
        report.add(
            f"conditional.entropy[{x};{y};{f}]",
            table.conditional_entropy(y, x) - (table.conditional_entropy(y, (x, f)) + table.mutual_information(f, y, given=x)),
        )
        report.add(
            f"conditional.mutual[{x};{y};{f}]",
            table.mutual_information(x, f) - (table.mutual_information(x, f, given=y) + table.triple_mutual_information(x, y, f)),
        )
    return report


def random_table(rng: np.random.Generator, sizes: Sequence[int], names: Optional[Sequence[str]] = None) -> JointTable:
    """Draw a table uniformly from the probability simplex (Dirichlet(1))."""
    sizes = tuple(int(s) for s in sizes)
    names = tuple(names) if names is not None else tuple(f"V{i}" for i in range(len(sizes)))
    weights = rng.dirichlet(np.ones(int(np.prod(sizes)))).reshape(sizes)
    return JointTable(names, weights / weights.sum())


# ---------------------------------------------------------------------------
# Pattern systems
# ---------------------------------------------------------------------------

NAT, PERT, XPRIME, FEAT = "X_nat", "X_pert", "X'", "F'"


@dataclass(frozen=True)
class RandomSystem:
    """
    Natural/perturbed patterns, their combination X' and a stochastic feature F'.

    ``nat_values``/``pert_values`` give the integer code of each symbol of the
    base table's two axes; ``combine`` maps a (nat, pert) code pair to the X'
    code and ``channel[x_code]`` is the distribution of F' given X'.
    """

    base: JointTable
    nat_values: Tuple[int, ...]
    pert_values: Tuple[int, ...]
    channel: np.ndarray
    combine: Callable[[int, int], int] = lambda nat, pert: nat + pert

    def __post_init__(self):
        if self.base.probs.shape != (len(self.nat_values), len(self.pert_values)):
            raise ShapeError(
                f"base table shape {self.base.probs.shape} does not match "
                f"{len(self.nat_values)} x {len(self.pert_values)} pattern symbols"
            )
        channel = np.array(self.channel, dtype=np.float64)
        if channel.ndim != 2 or np.any(channel < 0):
            raise DomainError("feature channel must be a non-negative matrix")
        if np.any(np.abs(channel.sum(axis=1) - 1.0) > MASS_TOLERANCE):
            raise DomainError("every feature channel row must sum to 1")
        channel.setflags(write=False)
        object.__setattr__(self, "channel", channel)

    def combined_codes(self) -> np.ndarray:
        """X' code for every (nat, pert) symbol pair."""
        return np.array([[self.combine(n, p) for p in self.pert_values] for n in self.nat_values], dtype=np.int64)

    def joint(self) -> JointTable:
        """
        Joint table over (X_nat, X_pert, X', F').

        X' ranges over the codes reached on the support of the base table.
        """
        codes = self.combined_codes()
        support = self.base.probs > 0
        reached = codes[support]
        if len(np.unique(reached)) != reached.size:
            raise DomainError("combine is not injective on the support of the base table")
        if reached.size and (reached.min() < 0 or reached.max() >= self.channel.shape[0]):
            raise DomainError(f"combined code outside the channel's {self.channel.shape[0]} rows")
        alphabet = np.unique(reached)
        n_nat, n_pert = self.base.probs.shape
        probs = np.zeros((n_nat, n_pert, len(alphabet), self.channel.shape[1]))
        for i, j in zip(*np.nonzero(support)):
            slot = int(np.searchsorted(alphabet, codes[i, j]))
            probs[i, j, slot, :] = self.base.probs[i, j] * self.channel[codes[i, j]]
        return JointTable((NAT, PERT, XPRIME, FEAT), probs / probs.sum())


@dataclass
class TheoremReport:
    """Residuals and terms of the four-variable decomposition of I(X'; F')."""

    decomposition_residual: float
    h_equality_residual: float
    triple_mi_value: float
    approximation_error: float
    mi_combined: float
    mi_natural: float
    mi_perturbed: float
    h_given_combined: float
    h_given_patterns: float

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def verify_theorems(system: RandomSystem) -> TheoremReport:
    """
    Check the five-term decomposition of I(X'; F') and the entropy equality.

    Args:
        system (RandomSystem): System with an injective combine map

    Returns:
        TheoremReport: Residuals plus the triple MI, reported unclamped
    """
    table = system.joint()
    mi_combined = table.mutual_information(XPRIME, FEAT)
    mi_natural = table.mutual_information(NAT, FEAT)
    mi_perturbed = table.mutual_information(PERT, FEAT)
    h_given_combined = table.conditional_entropy(FEAT, XPRIME)
    h_given_patterns = table.conditional_entropy(FEAT, (NAT, PERT))
    triple = table.triple_mutual_information(NAT, PERT, FEAT)
    decomposition = mi_natural + mi_perturbed - h_given_combined + h_given_patterns - triple
    return TheoremReport(
        decomposition_residual=abs(mi_combined - decomposition),
        h_equality_residual=abs(h_given_combined - h_given_patterns),
        triple_mi_value=triple,
        approximation_error=abs(mi_combined - mi_natural - mi_perturbed),
        mi_combined=mi_combined,
        mi_natural=mi_natural,
        mi_perturbed=mi_perturbed,
        h_given_combined=h_given_combined,
        h_given_patterns=h_given_patterns,
    )


def _pattern_codes(depth: int, mask: int, pixels: int) -> Tuple[int, ...]:
    per_pixel = sorted({value & mask for value in range(1 << depth)})
    codes = []
    for combo in itertools.product(per_pixel, repeat=pixels):
        codes.append(sum(value << (depth * i) for i, value in enumerate(combo)))
    return tuple(sorted(codes))


def bitplane_system(
    rng: np.random.Generator,
    depth: int = 4,
    k: int = 2,
    pixels: int = 2,
    independent: bool = True,
    noise: float = 0.2,
    feature_symbols: int = 4,
    feature_source: str = "combined",
) -> RandomSystem:
    """
    Build a RandomSystem whose patterns come from bit-plane slicing of tiny images.

    An image of ``pixels`` pixels at ``depth`` bits is coded as
    ``sum(value_i << depth*i)``, so adding a natural and a perturbed code is
    pixelwise addition with disjoint masks.

    Args:
        rng (np.random.Generator): Randomness source
        depth (int): Bits per pixel R
        k (int): Split level K
        pixels (int): Pixels per image
        independent (bool): Draw X_nat and X_pert independently
        noise (float): Mass spread uniformly over F' symbols in each channel row
        feature_symbols (int): Alphabet size of F'
        feature_source (str): 'combined' (F' from X') or 'natural' (F' from X_nat only)

    Returns:
        RandomSystem: The system
    """
    if not 0 <= k <= depth:
        raise DomainError(f"K must be in [0, {depth}], got {k}")
    if feature_source not in ("combined", "natural"):
        raise DomainError(f"unknown feature source '{feature_source}'")
    high = natural_mask(depth, k)
    low = (1 << (depth - k)) - 1
    nat_values = _pattern_codes(depth, high, pixels)
    pert_values = _pattern_codes(depth, low, pixels)

    if independent:
        base = np.outer(rng.dirichlet(np.ones(len(nat_values))), rng.dirichlet(np.ones(len(pert_values))))
    else:
        base = rng.dirichlet(np.ones(len(nat_values) * len(pert_values))).reshape(len(nat_values), len(pert_values))
    base = JointTable((NAT, PERT), base / base.sum())

    n_codes = 1 << (depth * pixels)
    replicated_high = sum(high << (depth * i) for i in range(pixels))
    assignment = rng.integers(0, feature_symbols, size=n_codes)
    channel = np.full((n_codes, feature_symbols), noise / feature_symbols)
    for code in range(n_codes):
        source = code & replicated_high if feature_source == "natural" else code
        channel[code, assignment[source]] += 1.0 - noise
    return RandomSystem(base, nat_values, pert_values, channel)
