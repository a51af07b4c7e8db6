"""Energy-efficient radio resource allocation for an O-RAN small-cell
downlink with eMBB/URLLC puncturing, learned by multi-agent PPO with
policy transfer and checked against a brute-force oracle."""

__version__ = "0.1.0"
