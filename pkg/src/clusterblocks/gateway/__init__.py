"""Gateway: the single public entrance, layered presentation / logic / data."""

from .config import GatewayConfig, load_config, parse_config
from .service import GatewayService

__all__ = ["GatewayConfig", "GatewayService", "load_config", "parse_config"]
