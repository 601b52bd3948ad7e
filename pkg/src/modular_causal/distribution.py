"""Dense probability tables over named discrete variables."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NumericError, ValidationError

NORMALIZATION_TOL = 1e-9


def align(table: np.ndarray, axes: Sequence[str], new_axes: Sequence[str]) -> np.ndarray:
    """Permute ``table`` from ``axes`` into ``new_axes``, inserting size-1 axes.

    Every name in ``axes`` must appear in ``new_axes``.
    """
    axes = list(axes)
    missing = [a for a in axes if a not in new_axes]
    if missing:
        raise ValidationError(f"cannot align: axes {missing} would be dropped")
    present = [a for a in new_axes if a in axes]
    out = np.transpose(table, [axes.index(a) for a in present])
    shape = []
    it = iter(out.shape)
    for a in new_axes:
        shape.append(next(it) if a in axes else 1)
    return out.reshape(shape)


class Distribution:
    """P(variables | given) as a dense array with axes ``given + variables``.

    Every slice over the ``given`` axes sums to one. ``given`` is empty for
    joint tables.
    """

    __slots__ = ("variables", "given", "cards", "table")

    def __init__(
        self,
        variables: Iterable[str],
        cards: Mapping[str, int],
        table: np.ndarray,
        given: Iterable[str] = (),
        check: bool = True,
    ):
        self.variables = tuple(variables)
        self.given = tuple(given)
        axes = self.given + self.variables
        if len(set(axes)) != len(axes):
            raise ValidationError(f"repeated axis names in {axes}")
        self.cards = {v: int(cards[v]) for v in axes}
        table = np.asarray(table, dtype=float)
        shape = tuple(self.cards[v] for v in axes)
        if table.shape != shape:
            raise ValidationError(f"table shape {table.shape} does not match cards {shape}")
        self.table = table
        if check:
            if np.any(table < -1e-12):
                raise ValidationError("negative probability")
            sums = table.reshape(int(np.prod([self.cards[v] for v in self.given], dtype=int)), -1)
            sums = sums.sum(axis=1)
            bad = np.abs(sums - 1.0) > NORMALIZATION_TOL
            if np.any(bad):
                raise ValidationError(
                    f"slices do not sum to 1 (worst {sums[bad][0]:.3g}) for {self.variables}"
                )

    @property
    def axes(self) -> tuple[str, ...]:
        return self.given + self.variables

    def __repr__(self) -> str:
        cond = f" | {','.join(self.given)}" if self.given else ""
        return f"Distribution(P({','.join(self.variables)}{cond}), shape={self.table.shape})"

    def reorder(
        self, variables: Sequence[str] | None = None, given: Sequence[str] | None = None
    ) -> "Distribution":
        variables = self.variables if variables is None else tuple(variables)
        given = self.given if given is None else tuple(given)
        if set(variables) != set(self.variables) or set(given) != set(self.given):
            raise ValidationError("reorder must keep the same variable sets")
        table = align(self.table, self.axes, given + variables)
        return Distribution(variables, self.cards, table, given, check=False)

    def marginal(self, keep: Iterable[str]) -> "Distribution":
        """Sum out outcome variables not in ``keep`` (given axes are retained)."""
        keep = [v for v in self.variables if v in set(keep)]
        drop = tuple(
            len(self.given) + i for i, v in enumerate(self.variables) if v not in keep
        )
        table = self.table.sum(axis=drop) if drop else self.table
        return Distribution(keep, self.cards, table, self.given, check=False)

    def conditional(
        self, target: Iterable[str], given: Iterable[str], on_zero: str = "raise"
    ) -> "Distribution":
        """P(target | given) from a joint table.

        ``on_zero`` decides what happens for given-settings of probability zero:
        ``raise`` (NumericError), ``uniform`` or ``nan``.
        """
        if self.given:
            raise ValidationError("conditional() needs a joint table")
        target, given = tuple(target), tuple(given)
        if set(target) & set(given):
            raise ValidationError("target and given overlap")
        joint = self.marginal(set(target) | set(given)).reorder(
            [v for v in given + target if v in self.variables]
        )
        table = joint.table
        norm = table.sum(axis=tuple(range(len(given), len(given) + len(target))), keepdims=True)
        zero = norm <= 0
        if np.any(zero):
            if on_zero == "raise":
                raise NumericError(
                    f"conditioning event of probability zero in P({','.join(target)} | "
                    f"{','.join(given)})"
                )
            with np.errstate(invalid="ignore", divide="ignore"):
                table = table / norm
            if on_zero == "nan":
                fill = np.nan
            else:
                fill = 1.0 / int(np.prod([self.cards[v] for v in target], dtype=int))
            table = np.where(np.broadcast_to(zero, table.shape), fill, table)
        else:
            table = table / norm
        return Distribution(target, self.cards, table, given, check=False)

    def slice(self, assignment: Mapping[str, int]) -> "Distribution":
        """Fix some given variables to values, dropping their axes."""
        idx = []
        for v in self.given:
            idx.append(int(assignment[v]) if v in assignment else slice(None))
        extra = set(assignment) - set(self.given)
        if extra:
            raise ValidationError(f"{sorted(extra)} are not conditioning variables")
        rest = tuple(v for v in self.given if v not in assignment)
        return Distribution(self.variables, self.cards, self.table[tuple(idx)], rest, check=False)

    def prob(self, assignment: Mapping[str, int]) -> float:
        return float(self.table[tuple(int(assignment[v]) for v in self.axes)])

    def given_size(self) -> int:
        return int(np.prod([self.cards[v] for v in self.given], dtype=int))

    def slices(self) -> np.ndarray:
        """Table reshaped to (number of given settings, number of outcomes)."""
        return self.table.reshape(self.given_size(), -1)


def point_mass(cards: Mapping[str, int], assignment: Mapping[str, int]) -> Distribution:
    names = tuple(assignment)
    table = np.zeros(tuple(cards[v] for v in names))
    table[tuple(int(assignment[v]) for v in names)] = 1.0
    return Distribution(names, cards, table)
