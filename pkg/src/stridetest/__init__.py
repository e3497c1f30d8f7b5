"""Threat-model-driven security test generation and replay for MQTT brokers.

The pipeline has three stages, each usable on its own:

1. model a system as a data flow diagram and derive STRIDE threats from it,
   scored through a likelihood x impact risk matrix (``dfd``, ``threats``,
   ``risk``);
2. generate positive, negative, and attack-bearing MQTT test sequences
   online against a live broker, gated by the scored threats (``catalog``,
   ``attacks``, ``generator``);
3. replay persisted suites as regression tests and diff the reports
   (``executor``, ``reporting``).

An embedded mock broker (``mock_broker``, ``harness``) provides a
deterministic desk-scale target; the same code path drives real brokers
over TCP.
"""

__version__ = "0.1.0"

PROTOCOL_VERSION = "mqtt-3.1.1"
