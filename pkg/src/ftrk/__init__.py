"""Testbed for a fast secure input path to TEE-protected accelerators.

Modules: ``gcm`` (AES-256-GCM with split-phase decryption), ``chain``
(multi-chain authentication), ``frame`` (wire codec), ``handshake`` (key
agreement), ``channel`` (three-role flows and adversary), ``pipeline``
(scheduler model), ``workloads`` (presets) and ``bench`` (measurements and
reports).
"""

__version__ = "0.1.0"
