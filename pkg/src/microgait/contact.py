"""Anchor-based compliant contact with a tensile detachment limit.

The gripper tip is a single point; the grasp location at attachment time
becomes the spring-damper neutral position (anchor) on all three axes.
Detachment happens when the pull transmitted to the anchor along the
surface normal exceeds the gripper's holding force; compression never
detaches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HOLDS = "holds"
DETACHES = "detaches"


@dataclass
class ContactPoint:
    limb: int
    anchor: np.ndarray
    stiffness: float            # N/m
    damping: float              # N s/m
    holding_force: float        # N
    surface_normal: np.ndarray
    attached: bool = True

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(3)
        self.surface_normal = np.asarray(self.surface_normal, dtype=float).reshape(3)
        nrm = np.linalg.norm(self.surface_normal)
        if nrm < 1e-12:
            raise ValueError("surface normal must be nonzero")
        self.surface_normal = self.surface_normal / nrm
        if self.holding_force <= 0:
            raise ValueError("holding force must be > 0")

    def detach(self):
        self.attached = False
        self.anchor = np.full(3, np.nan)


def contact_force(contact: ContactPoint, ee_position, ee_velocity) -> np.ndarray:
    """Spring-damper force on the robot tip, anchored at the grasp point."""
    if not contact.attached:
        raise ValueError("contact_force requires an attached contact")
    p = np.asarray(ee_position, dtype=float)
    v = np.asarray(ee_velocity, dtype=float)
    return -contact.stiffness * (p - contact.anchor) - contact.damping * v


def tensile_component(contact: ContactPoint, force) -> float:
    """Pull transmitted to the anchor along the surface normal.

    `force` is the contact force on the robot; the anchor feels its
    reaction, so positive values mean the gripper is being pulled off the
    surface."""
    return float(np.dot(contact.surface_normal, -np.asarray(force, dtype=float)))


def detachment_check(contact: ContactPoint, force) -> str:
    if not contact.attached:
        raise ValueError("detachment_check requires an attached contact")
    return DETACHES if tensile_component(contact, force) > contact.holding_force else HOLDS
