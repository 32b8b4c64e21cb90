"""
Launch vehicle GNSS navigation simulator.
"""
