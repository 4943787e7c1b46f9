"""Key blocks and their lifecycle accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Tuple

import numpy as np

from ..errors import InvariantViolation


class BlockStage(IntEnum):
    """Lifecycle stages; transitions may only move forward."""

    RAW = 0
    SIFTED = 1
    RECONCILED = 2
    SECRET = 3


@dataclass
class KeyBlock:
    """One party's view of a block of key bits moving through the pipeline.

    Tracks the public-channel leakage charged against the block so the
    final secret length can never exceed what entropy accounting allows.
    """

    block_id: str
    peer_pair: Tuple[str, str]
    stage: BlockStage
    bits: np.ndarray
    qber_estimate: Optional[float] = None
    bits_leaked: int = 0
    reconciled_length: Optional[int] = field(default=None, repr=False)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.stage is BlockStage.RECONCILED and self.reconciled_length is None:
            self.reconciled_length = int(self.bits.size)

    def advance(self, stage: BlockStage, bits: np.ndarray,
                qber: Optional[float] = None, leaked_delta: int = 0) -> "KeyBlock":
        """Move the block forward one or more stages, updating accounting."""
        if stage <= self.stage:
            raise InvariantViolation(
                f"block {self.block_id}: stage may only move forward "
                f"({self.stage.name} -> {stage.name})")
        bits = np.asarray(bits, dtype=np.uint8)
        if leaked_delta < 0:
            raise InvariantViolation("leakage never decreases")
        self.bits_leaked += leaked_delta
        if qber is not None:
            self.qber_estimate = qber
        if stage is BlockStage.RECONCILED:
            self.reconciled_length = int(bits.size)
        if stage is BlockStage.SECRET:
            if self.reconciled_length is None:
                raise InvariantViolation(
                    f"block {self.block_id}: cannot reach SECRET without RECONCILED length")
            budget = max(0, self.reconciled_length - self.bits_leaked)
            if bits.size > budget:
                raise InvariantViolation(
                    f"block {self.block_id}: secret length {bits.size} exceeds "
                    f"reconciled - leaked = {budget}")
        self.stage = stage
        self.bits = bits
        return self
