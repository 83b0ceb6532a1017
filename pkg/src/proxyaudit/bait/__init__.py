from .harness import Harness, fleet_address
from .mock import MockBehavior, MockProxy, spawn_mock_proxy
from .origin import Origin, serve_bait
from .site import BaitSite, bait_site, expected_content

__all__ = [
    "BaitSite",
    "Harness",
    "MockBehavior",
    "MockProxy",
    "Origin",
    "bait_site",
    "expected_content",
    "fleet_address",
    "serve_bait",
    "spawn_mock_proxy",
]
