"""Policy name routing.

Maps the names used on the command line and in configs (with aliases) onto
one of the six evaluated policies.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from src.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyRoute:
    name: str
    aliases: Tuple[str, ...]
    kind: str  # "baseline" or "learned"
    model_stage: Optional[str] = None  # "initial" or "final" for learned policies
    recovery: bool = False


DL_ROUTE = PolicyRoute("DL", ("dl", "direct-lift", "direct_lift"), "baseline")
RAND_ROUTE = PolicyRoute("RAND", ("rand", "random"), "baseline")
TFS_ROUTE = PolicyRoute("TFS", ("tfs", "two-full-spin"), "baseline")
OURS_IM_ROUTE = PolicyRoute("Ours-IM", ("ours-im", "im", "ours_im"), "learned", "initial")
OURS_FM_ROUTE = PolicyRoute("Ours-FM", ("ours-fm", "fm", "ours_fm"), "learned", "final")
OURS_FM_R_ROUTE = PolicyRoute(
    "Ours-FM-R", ("ours-fm-r", "fm-r", "ours_fm_r"), "learned", "final", recovery=True
)

# Report and table order
POLICY_ORDER: List[str] = ["DL", "RAND", "TFS", "Ours-IM", "Ours-FM", "Ours-FM-R"]


class PolicyRouter:
    """Resolves policy names case-insensitively, aliases included."""

    def __init__(self, routes: Optional[List[PolicyRoute]] = None):
        self.routes = routes or [DL_ROUTE, RAND_ROUTE, TFS_ROUTE, OURS_IM_ROUTE, OURS_FM_ROUTE, OURS_FM_R_ROUTE]
        self._index: Dict[str, PolicyRoute] = {}
        for route in self.routes:
            for key in (route.name, *route.aliases):
                self._index[key.lower()] = route

    def resolve(self, name: str) -> PolicyRoute:
        route = self._index.get(name.strip().lower())
        if route is None:
            raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_ORDER)}")
        return route

    def names(self) -> List[str]:
        return [r.name for r in self.routes]


_router_instance: Optional[PolicyRouter] = None


def get_policy_router() -> PolicyRouter:
    """Get or create the shared router."""
    global _router_instance
    if _router_instance is None:
        _router_instance = PolicyRouter()
    return _router_instance
