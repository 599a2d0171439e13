"""Stack-frame analysis, canary hardening and differential testing for C-compiled wasm."""

__version__ = "0.1.0"
