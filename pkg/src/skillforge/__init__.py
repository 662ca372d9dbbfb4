"""skillforge: build agent skills from support tickets and refine them from failures.

The package is organised by phase:

* ``corpus`` loads tickets, derives tasks and makes chronological splits.
* ``creator`` mines workflows, tools and knowledge into a v0 skill.
* ``agent`` executes tasks with a skill loaded; ``judge`` scores replies.
* ``analyzer`` and ``aggregator`` turn bad cases into per-category evidence.
* ``diagnostician`` maps that evidence to skill defects and an edit plan.
* ``optimizer`` applies the plan under additive-edit rules and commits a version.
* ``orchestrator`` runs the loop; ``reporting`` and ``cli`` sit on top.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .judge import CrReport, compute_cr
from .llm import Gateway, RecordingProvider, ScriptedProvider
from .orchestrator import RunConfig, evolve
from .skill import SkillPackage, parse_skill_md
from .vfs import Vfs

__all__ = [
    "CrReport",
    "Gateway",
    "RecordingProvider",
    "RunConfig",
    "ScriptedProvider",
    "SkillPackage",
    "Vfs",
    "__version__",
    "compute_cr",
    "evolve",
    "parse_skill_md",
]
