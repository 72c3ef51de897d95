"""Two-party secure inference for time-series vertical federated learning.

Thin wrapper over the compiled extension: fixed-point encode/decode,
secret sharing, secure primitives evaluated by an in-process two-party
session, and the pipeline benchmark entry point.
"""

from _pphh import (  # noqa: F401
    FRAC_BITS,
    __version__,
    decode,
    encode,
    lan_profile,
    run_pipeline,
    secure_eval,
    secure_matmul,
    share,
    synth_classification,
    wan_profile,
)

__all__ = [
    "FRAC_BITS",
    "decode",
    "encode",
    "lan_profile",
    "run_pipeline",
    "secure_eval",
    "secure_matmul",
    "share",
    "synth_classification",
    "wan_profile",
]
