"""Discrete symmetric pencils shared by the 1D and 3D assemblers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class OperatorPencil:
    """A stiffness matrix paired with a positive definite mass matrix.

    ``shape`` records the structured layout of the unknowns (slowest index
    first) when the pencil comes from a tensor grid, and ``meta`` carries
    assembler-specific bookkeeping such as the grid nodes.
    """

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    grid_id: str
    boundary_tags: tuple[str, ...]
    shape: tuple[int, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.stiffness.shape != self.mass.shape:
            raise ValueError(
                f"stiffness {self.stiffness.shape} and mass {self.mass.shape} differ in shape"
            )
        if self.stiffness.shape[0] != self.stiffness.shape[1]:
            raise ValueError("pencil matrices must be square")
        if self.shape is not None and int(np.prod(self.shape)) != self.dim:
            raise ValueError(f"layout {self.shape} does not match dimension {self.dim}")

    @property
    def dim(self) -> int:
        return self.stiffness.shape[0]

    def form(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """Stiffness form value ``v^T K u`` (``v`` defaults to ``u``)."""
        v = u if v is None else v
        return float(v @ (self.stiffness @ u))

    def mass_form(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        v = u if v is None else v
        return float(v @ (self.mass @ u))

    def asymmetry(self) -> float:
        """Largest entry of ``|K - K^T|`` relative to the largest of ``|K|``."""
        d = abs(self.stiffness - self.stiffness.T)
        top = abs(self.stiffness).max()
        return float(d.max() / top) if top > 0 else 0.0

    def restrict(self, keep: np.ndarray, grid_id: str | None = None) -> OperatorPencil:
        """Pencil on the unknowns selected by ``keep`` (Dirichlet elimination)."""
        idx = np.flatnonzero(keep) if keep.dtype == bool else np.asarray(keep)
        K = self.stiffness[idx][:, idx].tocsr()
        M = self.mass[idx][:, idx].tocsr()
        return OperatorPencil(K, M, grid_id or self.grid_id + "/restricted", self.boundary_tags)
