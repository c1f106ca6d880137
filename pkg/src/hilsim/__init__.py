"""Simulation-controlled emulation of IEEE 802.15.4 sensor networks.

A discrete-event simulator drives a virtual node farm over the EmuCI
control protocol; frames cross the boundary as PCAP records.
"""

__version__ = "0.1.0"
