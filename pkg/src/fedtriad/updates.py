"""Round contributions in their four privacy states.

A client's contribution travels to the server as an :class:`Update`: a Plain
real vector, a Noised vector (after a DP stage), a list of CKKS ciphertexts,
or a list of Shamir share bundles. The scalar aggregation weight ``h`` always
rides alongside in plaintext.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import PipelineOrderError


class UpdateState(Enum):
    PLAIN = "plain"
    NOISED = "noised"
    ENCRYPTED = "encrypted"
    SHARED = "shared"


@dataclass
class Update:
    state: UpdateState
    h: float
    client_id: int
    vector: np.ndarray | None = None          # PLAIN / NOISED payload
    ciphertexts: list[Any] | None = None      # ENCRYPTED payload
    bundles: list[Any] | None = None          # SHARED payload
    meta: dict = field(default_factory=dict)  # e.g. pending server-side noise

    @classmethod
    def plain(cls, vector: np.ndarray, h: float, client_id: int) -> "Update":
        return cls(UpdateState.PLAIN, h, client_id,
                   vector=np.asarray(vector, dtype=np.float64))

    def require_state(self, *allowed: UpdateState, stage: str) -> None:
        if self.state not in allowed:
            names = "/".join(s.value for s in allowed)
            raise PipelineOrderError(
                f"{stage} stage needs {names} updates, got {self.state.value} "
                f"(client {self.client_id})"
            )
