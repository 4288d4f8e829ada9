"""
Type definitions for symflow
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class FlowKind(str, Enum):
    """How a model evaluates its flow"""
    MAPPING_TORUS = "mapping_torus"
    NUMERIC = "numeric"


class SectionRole(str, Enum):
    """Reference section Λ or its security enlargement Λ̂"""
    REFERENCE = "reference"
    SECURITY = "security"


class Direction(str, Enum):
    """Time direction for returns and holonomies"""
    FORWARD = "forward"
    BACKWARD = "backward"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.FORWARD else -1


class ManifoldKind(str, Enum):
    """Stable (graph over the s-axis) or unstable (graph over the u-axis)"""
    STABLE = "s"
    UNSTABLE = "u"


class FibreClass(str, Enum):
    """Intersection pattern of the two fibres of a point with a rectangle"""
    SU = "su"
    S_ONLY = "s0"
    U_ONLY = "0u"
    NONE = "00"


class Stage(str, Enum):
    """Pipeline stages in execution order"""
    ORBIT = "orbit"
    FRAMES = "frames"
    ALPHABET = "alphabet"
    GRAPH = "graph"
    SHADOW = "shadow"
    COVER = "cover"
    REFINE = "refine"
    ENTROPY = "entropy"
    CHECK = "check"

    @classmethod
    def ordered(cls) -> List["Stage"]:
        return list(cls)


@dataclass
class CheckResult:
    """One row of an invariant table"""
    name: str
    passed: bool
    samples: int = 0
    violations: int = 0
    worst: Optional[float] = None
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "samples": self.samples,
            "violations": self.violations,
            "worst": self.worst,
            "detail": self.detail,
        }


@dataclass
class EntropyRow:
    """Entropy report for one irreducible component"""
    component: int
    size: int
    parry_entropy: float
    suspension_entropy: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "component": self.component,
            "size": self.size,
            "parry_entropy": self.parry_entropy,
            "suspension_entropy": self.suspension_entropy,
        }
