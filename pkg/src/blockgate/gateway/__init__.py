from blockgate.gateway.config import GatewayConfig, load_config, parse_config
from blockgate.gateway.service import Gateway, STATUS_BY_CODE

__all__ = ["Gateway", "GatewayConfig", "STATUS_BY_CODE", "load_config", "parse_config"]
