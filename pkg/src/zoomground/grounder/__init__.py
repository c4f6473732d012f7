from .base import (
    AuthError,
    Grounder,
    GroundingOutcome,
    GroundingQuery,
    NoTarget,
    ParseFailure,
    Point,
    TransportError,
    outcome_from_dict,
    outcome_to_dict,
)
from .http import EndpointConfig, HttpGrounder, template_hashes
from .mock import CallableGrounder, ConstantGrounder
from .oracle import OracleGrounder, OracleNoiseModel, oracle_ground
from .parsing import parse_bbox_response, parse_toolcall_response

__all__ = [
    "AuthError",
    "CallableGrounder",
    "ConstantGrounder",
    "EndpointConfig",
    "Grounder",
    "GroundingOutcome",
    "GroundingQuery",
    "HttpGrounder",
    "NoTarget",
    "OracleGrounder",
    "OracleNoiseModel",
    "ParseFailure",
    "Point",
    "TransportError",
    "oracle_ground",
    "outcome_from_dict",
    "outcome_to_dict",
    "parse_bbox_response",
    "parse_toolcall_response",
    "template_hashes",
]
