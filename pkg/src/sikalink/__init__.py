"""Multi-party set-intersection key agreement with composable outputs.

A collector with no input of its own links records held by n data providers:
it learns, for each identifier present at every provider, one pseudonymous
joined row, and nothing about any other record. See the sika module for the
core key-agreement protocol and outputs for the payload modes layered on it.
"""

from .okvs import EncodeFailure, OkvsParams, OkvsTable, decode, encode
from .outputs import JoinedOutput, PayloadMessage, Record, cardinality, collector_join, encrypt_payload
from .primitives import AuthFailure, SecurityParams, SeededRng, SystemRng
from .session import SessionAbort, SessionTimeout, run_inproc, run_session
from .shamir import InsufficientShares, Share, ThresholdPolicy
from .sika import (BMessage, CollectorState, InputError, IntersectionResult,
                   ProtocolError, ProviderOutput, ProviderState, SessionConfig,
                   collector_absorb, collector_intersect, collector_unblind,
                   provider_finalize, provider_init)

__version__ = "0.1.0"
