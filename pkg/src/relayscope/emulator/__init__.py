from .deployment import (
    AnswerPolicy, DeploymentSpec, EgressSubnet, Operator, Persona, RotationPolicy, Zone,
    generate_deployment,
)
from .dns_server import AuthServer, serve_auth_dns
from .probe import ProbeConfig, run_probe, run_probe_async
from .relays import ADVERTISED_VERSIONS, EchoServer, EgressPool, EgressRelay, IngressRelay, VnResponder
from .runner import Emulator, EmulatorThread, Endpoints, parse_endpoint
from .tunnel import FrameError, FrameKind, TunnelFrame, decode_frame

__all__ = [
    "ADVERTISED_VERSIONS", "AnswerPolicy", "AuthServer", "DeploymentSpec", "EchoServer",
    "EgressPool", "EgressRelay", "EgressSubnet", "Emulator", "EmulatorThread", "Endpoints",
    "FrameError", "FrameKind", "IngressRelay", "Operator", "Persona", "ProbeConfig",
    "RotationPolicy", "TunnelFrame", "VnResponder", "Zone", "decode_frame", "generate_deployment",
    "parse_endpoint", "run_probe", "run_probe_async", "serve_auth_dns",
]
